// SPDX-License-Identifier: Apache-2.0
//! Bit-exact model of the near-memory post-processing unit.
//!
//! Each of the two branches multiplies its 10-bit ADC count by a `Qu(1,7)`
//! scale, shifts right by `0..=3`, drops three integer MSBs, drops the LSBs
//! below `2^-5` and then runs the first cut/round stage down to `2^-2`. The
//! branches are subtracted, the `Qs(7,1)` offset is added, the second
//! cut/round stage removes the fraction and the result is optionally passed
//! through ReLU before saturating to 8-bit signed.
//!
//! Rounding on negative values uses "add half an LSB, then floor", i.e.
//! round-half-up toward positive infinity; cutting is floor. The convention is
//! written into every config dump under `negative_rounding`.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixedpoint::{FixedFormat, FixedValue, MsbPolicy, RoundMode};

/// Largest right shift the datapath supports (2-bit field).
pub const MAX_SHIFT: u32 = 3;
/// Integer MSBs removed after the shift.
pub const MSB_CUT: u32 = 3;
/// Fractional bits kept going into the first cut/round stage.
pub const PRE_ROUND_FRAC_BITS: u32 = 5;
/// Fractional bits left after the first cut/round stage.
pub const POST_ROUND_FRAC_BITS: u32 = 2;
/// Largest ADC count.
pub const INPUT_MAX: u16 = 1023;

pub const NEGATIVE_ROUNDING: &str = "half_up";

/// First cut/round stage: how bits `2^-3..2^-5` are removed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FirstStageMethod {
    /// `x.xx|Rxx`: round on the `2^-3` bit.
    M1,
    /// `x.xG|RRx`: cut if `2^-2` is set, else round on `2^-3 | 2^-4`.
    M2,
    /// `x.xG|Rxx`: cut if `2^-2` is set, else round on `2^-3`.
    M3,
    /// `x.xG|RRR`: cut if `2^-2` is set, else round on `2^-3 | 2^-4 | 2^-5`.
    M4,
    /// `x.xx|xxx`: plain cut.
    M5,
}

impl FirstStageMethod {
    pub const ALL: [FirstStageMethod; 5] = [Self::M1, Self::M2, Self::M3, Self::M4, Self::M5];

    pub fn name(&self) -> &'static str {
        match self {
            Self::M1 => "M1",
            Self::M2 => "M2",
            Self::M3 => "M3",
            Self::M4 => "M4",
            Self::M5 => "M5",
        }
    }

    /// Whether the dropped bits round the kept value up. `low5` holds the
    /// five fractional bits, `2^-1` in bit 4 down to `2^-5` in bit 0.
    fn rounds_up(&self, low5: u8) -> bool {
        let bit = |n: u8| (low5 >> n) & 1 == 1;
        let guard = bit(3);
        match self {
            Self::M1 => bit(2),
            Self::M2 => !guard && (bit(2) || bit(1)),
            Self::M3 => !guard && bit(2),
            Self::M4 => !guard && (bit(2) || bit(1) || bit(0)),
            Self::M5 => false,
        }
    }
}

impl fmt::Display for FirstStageMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FirstStageMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Parse(format!("unknown first-stage method {s:?}")))
    }
}

/// Second cut/round stage: how the fraction of the branch sum is removed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SecondStageMethod {
    /// Cut for both signs.
    S1,
    /// Round non-negative values, cut negative ones.
    S2,
    /// Round both signs.
    S3,
}

impl SecondStageMethod {
    pub const ALL: [SecondStageMethod; 3] = [Self::S1, Self::S2, Self::S3];

    pub fn name(&self) -> &'static str {
        match self {
            Self::S1 => "S1",
            Self::S2 => "S2",
            Self::S3 => "S3",
        }
    }
}

impl fmt::Display for SecondStageMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SecondStageMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Parse(format!("unknown second-stage method {s:?}")))
    }
}

/// Removes bits `2^-3..2^-5` from a value with exactly five fractional bits.
///
/// The result has two fractional bits and one extra integer bit to hold the
/// carry of a round-up.
pub fn first_stage_round(v: &FixedValue, method: FirstStageMethod) -> Result<FixedValue> {
    let fmt = v.format();
    if fmt.frac_bits() != PRE_ROUND_FRAC_BITS {
        return Err(Error::Format(format!(
            "first cut/round stage expects {PRE_ROUND_FRAC_BITS} fractional bits, got {fmt}"
        )));
    }
    let low5 = (v.raw() & 0b1_1111) as u8;
    let out_fmt = FixedFormat::new(fmt.int_bits() + 1, POST_ROUND_FRAC_BITS, fmt.is_signed())?;
    let raw = (v.raw() >> 3) + i128::from(method.rounds_up(low5));
    Ok(FixedValue::from_raw(raw, out_fmt)?.with_overflow(v.overflow()))
}

/// Removes the fraction of the branch sum, returning an unbounded integer.
pub fn second_stage_round(v: &FixedValue, method: SecondStageMethod) -> i128 {
    let frac = v.format().frac_bits();
    if frac == 0 {
        return v.raw();
    }
    let cut = v.raw() >> frac;
    let round = (v.raw() + (1i128 << (frac - 1))) >> frac;
    match method {
        SecondStageMethod::S1 => cut,
        SecondStageMethod::S2 if v.is_negative() => cut,
        SecondStageMethod::S2 | SecondStageMethod::S3 => round,
    }
}

/// 8-bit signed output of the unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NmpuOutput {
    pub value: i8,
    /// An MSB cut or the final saturation clamped the value.
    pub overflow: bool,
}

/// Register contents of one unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NmpuConfig {
    scale_p: FixedValue,
    scale_n: FixedValue,
    shift: u32,
    offset: FixedValue,
    pub first_stage: FirstStageMethod,
    pub second_stage: SecondStageMethod,
    pub relu: bool,
    pub msb_policy: MsbPolicy,
}

impl NmpuConfig {
    /// Builds a config from raw register values. ReLU is on and the MSB cut
    /// saturates.
    pub fn from_raw(
        scale_p_raw: u8,
        scale_n_raw: u8,
        shift: u32,
        offset_raw: i8,
        first_stage: FirstStageMethod,
        second_stage: SecondStageMethod,
    ) -> Result<Self> {
        if shift > MAX_SHIFT {
            return Err(Error::Parameter(format!(
                "shift {shift} exceeds {MAX_SHIFT}"
            )));
        }
        Ok(NmpuConfig {
            scale_p: FixedValue::from_raw(scale_p_raw.into(), FixedFormat::SCALE)?,
            scale_n: FixedValue::from_raw(scale_n_raw.into(), FixedFormat::SCALE)?,
            shift,
            offset: FixedValue::from_raw(offset_raw.into(), FixedFormat::OFFSET)?,
            first_stage,
            second_stage,
            relu: true,
            msb_policy: MsbPolicy::Saturate,
        })
    }

    /// Quantizes real-valued effective scales and offset into registers.
    pub fn from_real(
        params: &RealParams,
        first_stage: FirstStageMethod,
        second_stage: SecondStageMethod,
    ) -> Result<Self> {
        let q = quantize_branch_params(params.scale_p, params.scale_n, params.offset)?;
        Ok(NmpuConfig {
            scale_p: q.scale_p,
            scale_n: q.scale_n,
            shift: q.shift,
            offset: q.offset,
            first_stage,
            second_stage,
            relu: params.relu,
            msb_policy: MsbPolicy::Saturate,
        })
    }

    pub fn with_relu(mut self, relu: bool) -> Self {
        self.relu = relu;
        self
    }

    pub fn with_msb_policy(mut self, policy: MsbPolicy) -> Self {
        self.msb_policy = policy;
        self
    }

    pub fn with_methods(mut self, first: FirstStageMethod, second: SecondStageMethod) -> Self {
        self.first_stage = first;
        self.second_stage = second;
        self
    }

    pub fn scale_p(&self) -> FixedValue {
        self.scale_p
    }

    pub fn scale_n(&self) -> FixedValue {
        self.scale_n
    }

    pub fn shift(&self) -> u32 {
        self.shift
    }

    pub fn offset(&self) -> FixedValue {
        self.offset
    }

    /// Effective real parameters the registers encode.
    pub fn effective_params(&self) -> RealParams {
        let div = (1u32 << self.shift) as f64;
        RealParams {
            scale_p: self.scale_p.real_value() / div,
            scale_n: self.scale_n.real_value() / div,
            offset: self.offset.real_value(),
            relu: self.relu,
        }
    }

    fn branch(&self, input: u16, scale: &FixedValue) -> Result<FixedValue> {
        let d = FixedValue::from_raw(input.into(), FixedFormat::ADC_INPUT)?;
        let t = d
            .mul(scale)?
            .shift_right(self.shift)?
            .cut_msb(MSB_CUT, self.msb_policy)?
            .trunc_lsb(PRE_ROUND_FRAC_BITS)?;
        first_stage_round(&t, self.first_stage)
    }

    /// Value entering the second cut/round stage: `r_p - r_n + offset`.
    pub fn pre_second_stage(&self, in_p: u16, in_n: u16) -> Result<FixedValue> {
        let rp = self.branch(in_p, &self.scale_p)?;
        let rn = self.branch(in_n, &self.scale_n)?;
        rp.sub(&rn)?.add(&self.offset)
    }

    /// Runs one pair of ADC counts through the unit.
    pub fn process(&self, in_p: u16, in_n: u16) -> Result<NmpuOutput> {
        for v in [in_p, in_n] {
            if v > INPUT_MAX {
                return Err(Error::Range {
                    value: v.into(),
                    format: FixedFormat::ADC_INPUT,
                });
            }
        }
        let s = self.pre_second_stage(in_p, in_n)?;
        let mut y = second_stage_round(&s, self.second_stage);
        if self.relu {
            y = y.max(0);
        }
        let clamped = y.clamp(i8::MIN.into(), i8::MAX.into());
        Ok(NmpuOutput {
            value: clamped as i8,
            overflow: s.overflow() || clamped != y,
        })
    }

    /// Key/value dump, one `key = value` per line.
    pub fn to_kv(&self) -> String {
        format!(
            "scale_p_raw = {}\nscale_n_raw = {}\nshift = {}\noffset_raw = {}\n\
             first_stage = {}\nsecond_stage = {}\nrelu = {}\nmsb_policy = {}\n\
             negative_rounding = {}\n",
            self.scale_p.raw(),
            self.scale_n.raw(),
            self.shift,
            self.offset.raw(),
            self.first_stage,
            self.second_stage,
            self.relu,
            self.msb_policy,
            NEGATIVE_ROUNDING,
        )
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut scale_p = None;
        let mut scale_n = None;
        let mut shift = None;
        let mut offset = None;
        let mut first = None;
        let mut second = None;
        let mut relu = true;
        let mut policy = MsbPolicy::Saturate;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", lineno + 1)))?;
            let value = value.trim();
            let bad = || Error::Parse(format!("line {}: bad value {value:?}", lineno + 1));
            match key.trim() {
                "scale_p_raw" => scale_p = Some(value.parse::<u8>().map_err(|_| bad())?),
                "scale_n_raw" => scale_n = Some(value.parse::<u8>().map_err(|_| bad())?),
                "shift" => shift = Some(value.parse::<u32>().map_err(|_| bad())?),
                "offset_raw" => offset = Some(value.parse::<i8>().map_err(|_| bad())?),
                "first_stage" => first = Some(value.parse()?),
                "second_stage" => second = Some(value.parse()?),
                "relu" => relu = value.parse().map_err(|_| bad())?,
                "msb_policy" => policy = value.parse()?,
                "negative_rounding" if value == NEGATIVE_ROUNDING => {}
                "negative_rounding" => {
                    return Err(Error::Parse(format!(
                        "unsupported negative rounding {value:?}"
                    )))
                }
                other => return Err(Error::Parse(format!("unknown key {other:?}"))),
            }
        }
        let missing = |k: &str| Error::Parse(format!("missing key {k}"));
        Ok(NmpuConfig::from_raw(
            scale_p.ok_or_else(|| missing("scale_p_raw"))?,
            scale_n.ok_or_else(|| missing("scale_n_raw"))?,
            shift.ok_or_else(|| missing("shift"))?,
            offset.ok_or_else(|| missing("offset_raw"))?,
            first.ok_or_else(|| missing("first_stage"))?,
            second.ok_or_else(|| missing("second_stage"))?,
        )?
        .with_relu(relu)
        .with_msb_policy(policy))
    }
}

/// Real-valued parameters with the shift folded into the scales.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealParams {
    pub scale_p: f64,
    pub scale_n: f64,
    pub offset: f64,
    pub relu: bool,
}

impl RealParams {
    pub fn new(scale_p: f64, scale_n: f64, offset: f64, relu: bool) -> Self {
        RealParams {
            scale_p,
            scale_n,
            offset,
            relu,
        }
    }
}

/// Wide floating-point model of the unit, before any output rounding.
pub fn nmpu_reference(in_p: u16, in_n: u16, params: &RealParams) -> f64 {
    let y = f64::from(in_p) * params.scale_p - f64::from(in_n) * params.scale_n + params.offset;
    if params.relu {
        y.max(0.0)
    } else {
        y
    }
}

/// A real affine map `x * scale + offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub scale: f64,
    pub offset: f64,
}

impl Affine {
    pub fn apply(&self, x: f64) -> f64 {
        x * self.scale + self.offset
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: f64,
    pub beta: f64,
    pub mean: f64,
    pub var: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub const IDENTITY: BatchNorm = BatchNorm {
        gamma: 1.0,
        beta: 0.0,
        mean: 0.0,
        var: 1.0,
        eps: 0.0,
    };

    pub fn apply(&self, x: f64) -> f64 {
        self.gamma * (x - self.mean) / (self.var + self.eps).sqrt() + self.beta
    }
}

/// Folds batch normalization into an affine correction so that
/// `fold_bn(a, bn).apply(x) == bn.apply(a.apply(x))`.
pub fn fold_bn(affine: &Affine, bn: &BatchNorm) -> Result<Affine> {
    let denom = bn.var + bn.eps;
    if denom.is_nan() || denom <= 0.0 {
        return Err(Error::Domain(format!(
            "batch-norm variance + eps must be positive, got {denom}"
        )));
    }
    let k = bn.gamma / denom.sqrt();
    Ok(Affine {
        scale: affine.scale * k,
        offset: k * (affine.offset - bn.mean) + bn.beta,
    })
}

/// One scale/offset pair loaded into registers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuantizedParams {
    pub scale: FixedValue,
    pub shift: u32,
    pub offset: FixedValue,
}

impl QuantizedParams {
    pub fn effective_scale(&self) -> f64 {
        self.scale.real_value() / (1u32 << self.shift) as f64
    }
}

/// Both branch scales share one shift.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BranchParams {
    pub scale_p: FixedValue,
    pub scale_n: FixedValue,
    pub shift: u32,
    pub offset: FixedValue,
}

fn quantize_offset(offset: f64) -> Result<FixedValue> {
    FixedValue::quantize(offset, FixedFormat::OFFSET, RoundMode::HalfUp)
}

/// Picks the largest shift whose scaled-up scale still fits `Qu(1,7)` after
/// rounding.
fn pick_shift(scale: f64) -> Result<u32> {
    if !(scale >= 0.0) || !scale.is_finite() {
        return Err(Error::Range {
            value: scale,
            format: FixedFormat::SCALE,
        });
    }
    (0..=MAX_SHIFT)
        .rev()
        .find(|&k| {
            let s = scale * (1u32 << k) as f64;
            s < 2.0 && FixedValue::quantize(s, FixedFormat::SCALE, RoundMode::HalfUp).is_ok()
        })
        .ok_or(Error::Range {
            value: scale,
            format: FixedFormat::SCALE,
        })
}

/// Loads a real scale and offset into `Qu(1,7)` / shift / `Qs(7,1)`,
/// rounding half up and maximizing the retained scale precision.
pub fn quantize_params(scale: f64, offset: f64) -> Result<QuantizedParams> {
    let shift = pick_shift(scale)?;
    let scale_fx = FixedValue::quantize(
        scale * (1u32 << shift) as f64,
        FixedFormat::SCALE,
        RoundMode::HalfUp,
    )?;
    Ok(QuantizedParams {
        scale: scale_fx,
        shift,
        offset: quantize_offset(offset)?,
    })
}

/// Like [`quantize_params`] for both branches, choosing the shift from the
/// larger of the two scales.
pub fn quantize_branch_params(scale_p: f64, scale_n: f64, offset: f64) -> Result<BranchParams> {
    let shift = pick_shift(scale_p)?.min(pick_shift(scale_n)?);
    let mult = (1u32 << shift) as f64;
    let q = |s: f64| FixedValue::quantize(s * mult, FixedFormat::SCALE, RoundMode::HalfUp);
    Ok(BranchParams {
        scale_p: q(scale_p)?,
        scale_n: q(scale_n)?,
        shift,
        offset: quantize_offset(offset)?,
    })
}

/// One line of a test-vector file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TestVector {
    pub in_p: u16,
    pub in_n: u16,
    pub expected: i8,
    pub overflow: bool,
}

impl fmt::Display for TestVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {}",
            self.in_p,
            self.in_n,
            self.expected,
            u8::from(self.overflow)
        )
    }
}

impl FromStr for TestVector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("bad test vector line {s:?}"));
        let mut it = s.split_whitespace();
        let mut next = || it.next().ok_or_else(bad);
        let in_p = next()?.parse().map_err(|_| bad())?;
        let in_n = next()?.parse().map_err(|_| bad())?;
        let expected = next()?.parse().map_err(|_| bad())?;
        let overflow = match next()? {
            "0" => false,
            "1" => true,
            _ => return Err(bad()),
        };
        if it.next().is_some() {
            return Err(bad());
        }
        Ok(TestVector {
            in_p,
            in_n,
            expected,
            overflow,
        })
    }
}

/// Writes one test vector per input pair.
pub fn write_vectors<W: Write>(
    cfg: &NmpuConfig,
    inputs: impl IntoIterator<Item = (u16, u16)>,
    mut out: W,
) -> Result<u64> {
    let mut count = 0;
    for (in_p, in_n) in inputs {
        let o = cfg.process(in_p, in_n)?;
        let tv = TestVector {
            in_p,
            in_n,
            expected: o.value,
            overflow: o.overflow,
        };
        writeln!(out, "{tv}").map_err(|e| Error::io("<vectors>", e))?;
        count += 1;
    }
    Ok(count)
}

/// Replays a test-vector file against `cfg`, returning the mismatching lines.
pub fn check_vectors<R: BufRead>(cfg: &NmpuConfig, input: R) -> Result<Vec<(usize, TestVector)>> {
    let mut bad = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<vectors>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let tv: TestVector = line.parse()?;
        let o = cfg.process(tv.in_p, tv.in_n)?;
        if o.value != tv.expected || o.overflow != tv.overflow {
            bad.push((i + 1, tv));
        }
    }
    Ok(bad)
}
