// SPDX-License-Identifier: Apache-2.0
//! Exact fixed-point algebra over arbitrary `Q(int, frac)` formats.
//!
//! A [`FixedValue`] is a raw integer together with the [`FixedFormat`] that
//! gives it meaning: `value = raw * 2^-frac_bits`. Signed formats store raw in
//! two's complement and count the sign bit among the integer bits, so `Qs(7,1)`
//! spans `[-64, 63.5]` in steps of `0.5`.
//!
//! Multiplication, addition and right shifts widen the result format so that
//! no information is lost. Precision only drops through the explicit
//! [`FixedValue::cut_msb`] and [`FixedValue::trunc_lsb`] reductions, mirroring
//! how a synthesized datapath narrows its buses.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Widest raw value supported, in bits.
pub const MAX_WIDTH: u32 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FixedFormat {
    int_bits: u32,
    frac_bits: u32,
    signed: bool,
}

impl FixedFormat {
    /// `Qu(10,0)`: one ADC count.
    pub const ADC_INPUT: FixedFormat = FixedFormat::new_unchecked(10, 0, false);
    /// `Qu(1,7)`: branch scale parameter.
    pub const SCALE: FixedFormat = FixedFormat::new_unchecked(1, 7, false);
    /// `Qs(7,1)`: offset parameter.
    pub const OFFSET: FixedFormat = FixedFormat::new_unchecked(7, 1, true);

    const fn new_unchecked(int_bits: u32, frac_bits: u32, signed: bool) -> Self {
        FixedFormat {
            int_bits,
            frac_bits,
            signed,
        }
    }

    pub fn new(int_bits: u32, frac_bits: u32, signed: bool) -> Result<Self> {
        let width = int_bits
            .checked_add(frac_bits)
            .ok_or(Error::Width { bits: u32::MAX })?;
        if width == 0 {
            return Err(Error::Format("format needs at least one bit".into()));
        }
        if width > MAX_WIDTH {
            return Err(Error::Width { bits: width });
        }
        Ok(Self::new_unchecked(int_bits, frac_bits, signed))
    }

    pub fn unsigned(int_bits: u32, frac_bits: u32) -> Result<Self> {
        Self::new(int_bits, frac_bits, false)
    }

    pub fn signed(int_bits: u32, frac_bits: u32) -> Result<Self> {
        Self::new(int_bits, frac_bits, true)
    }

    pub fn int_bits(&self) -> u32 {
        self.int_bits
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn is_signed(&self) -> bool {
        self.signed
    }

    pub fn width(&self) -> u32 {
        self.int_bits + self.frac_bits
    }

    pub fn raw_min(&self) -> i128 {
        if self.signed {
            -(1i128 << (self.width() - 1))
        } else {
            0
        }
    }

    pub fn raw_max(&self) -> i128 {
        if self.signed {
            (1i128 << (self.width() - 1)) - 1
        } else {
            (1i128 << self.width()) - 1
        }
    }

    pub fn contains_raw(&self, raw: i128) -> bool {
        raw >= self.raw_min() && raw <= self.raw_max()
    }

    /// Weight of the least significant bit.
    pub fn lsb(&self) -> f64 {
        pow2(-(self.frac_bits as i32))
    }

    pub fn min_value(&self) -> f64 {
        self.raw_min() as f64 * self.lsb()
    }

    pub fn max_value(&self) -> f64 {
        self.raw_max() as f64 * self.lsb()
    }

    /// Integer bits this format needs once reinterpreted as signed.
    fn signed_int_bits(&self) -> u32 {
        if self.signed {
            self.int_bits
        } else {
            self.int_bits + 1
        }
    }
}

impl fmt::Display for FixedFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = if self.signed { 's' } else { 'u' };
        write!(f, "Q{s}({},{})", self.int_bits, self.frac_bits)
    }
}

impl FromStr for FixedFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("expected Qs(i,f) or Qu(i,f), got {s:?}"));
        let s = s.trim();
        let rest = s.strip_prefix('Q').ok_or_else(bad)?;
        let mut chars = rest.chars();
        let signed = match chars.next() {
            Some('s') => true,
            Some('u') => false,
            _ => return Err(bad()),
        };
        let body = chars
            .as_str()
            .strip_prefix('(')
            .and_then(|b| b.strip_suffix(')'))
            .ok_or_else(bad)?;
        let (i, f) = body.split_once(',').ok_or_else(bad)?;
        let int_bits = i.trim().parse().map_err(|_| bad())?;
        let frac_bits = f.trim().parse().map_err(|_| bad())?;
        FixedFormat::new(int_bits, frac_bits, signed)
    }
}

/// Rounding applied when loading a real number into a format.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoundMode {
    NearestEven,
    HalfUp,
    /// Floor, i.e. two's-complement truncation.
    Truncate,
}

/// What [`FixedValue::cut_msb`] does with a value that no longer fits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum MsbPolicy {
    /// Clamp to the narrowed range and raise the overflow flag.
    #[default]
    Saturate,
    /// Fail with [`Error::Overflow`].
    Assert,
}

impl fmt::Display for MsbPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MsbPolicy::Saturate => "saturate",
            MsbPolicy::Assert => "assert",
        })
    }
}

impl FromStr for MsbPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "saturate" => Ok(MsbPolicy::Saturate),
            "assert" => Ok(MsbPolicy::Assert),
            other => Err(Error::Parse(format!("unknown MSB policy {other:?}"))),
        }
    }
}

/// A fixed-point number. The overflow flag is sticky: it is set by a
/// saturating MSB cut and carried through every later operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FixedValue {
    raw: i128,
    format: FixedFormat,
    overflow: bool,
}

impl FixedValue {
    pub fn from_raw(raw: i128, format: FixedFormat) -> Result<Self> {
        if !format.contains_raw(raw) {
            return Err(Error::Range {
                value: raw as f64 * format.lsb(),
                format,
            });
        }
        Ok(FixedValue {
            raw,
            format,
            overflow: false,
        })
    }

    pub fn from_int(value: i64, format: FixedFormat) -> Result<Self> {
        let raw = (value as i128)
            .checked_shl(format.frac_bits)
            .filter(|r| r >> format.frac_bits == value as i128)
            .ok_or(Error::Range {
                value: value as f64,
                format,
            })?;
        Self::from_raw(raw, format)
    }

    pub fn zero(format: FixedFormat) -> Self {
        FixedValue {
            raw: 0,
            format,
            overflow: false,
        }
    }

    /// Loads a real number, rounding to the format's LSB.
    pub fn quantize(x: f64, format: FixedFormat, mode: RoundMode) -> Result<Self> {
        let range_err = Error::Range { value: x, format };
        if !x.is_finite() {
            return Err(range_err);
        }
        // Scaling by a power of two is exact in binary floating point.
        let scaled = x * pow2(format.frac_bits as i32);
        if scaled.abs() > 2f64.powi(100) {
            return Err(range_err);
        }
        let floor = scaled.floor();
        let rem = scaled - floor;
        let up = match mode {
            RoundMode::Truncate => false,
            RoundMode::HalfUp => rem >= 0.5,
            RoundMode::NearestEven => rem > 0.5 || (rem == 0.5 && floor.rem_euclid(2.0) == 1.0),
        };
        let raw = floor as i128 + i128::from(up);
        Self::from_raw(raw, format).map_err(|_| range_err)
    }

    pub fn raw(&self) -> i128 {
        self.raw
    }

    pub fn format(&self) -> FixedFormat {
        self.format
    }

    pub fn overflow(&self) -> bool {
        self.overflow
    }

    pub fn is_negative(&self) -> bool {
        self.raw < 0
    }

    /// Real value as a double. Exact whenever `|raw| < 2^53`.
    pub fn real_value(&self) -> f64 {
        self.raw as f64 * self.format.lsb()
    }

    /// Largest integer not above the value.
    pub fn floor_int(&self) -> i128 {
        self.raw >> self.format.frac_bits
    }

    /// ORs `overflow` into the sticky flag.
    pub(crate) fn with_overflow(mut self, overflow: bool) -> Self {
        self.overflow |= overflow;
        self
    }

    fn raw_at(&self, frac_bits: u32) -> i128 {
        debug_assert!(frac_bits >= self.format.frac_bits);
        self.raw << (frac_bits - self.format.frac_bits)
    }

    /// Exact product. The result has `ia + ib` integer and `fa + fb`
    /// fractional bits and is signed if either operand is.
    pub fn mul(&self, other: &FixedValue) -> Result<FixedValue> {
        let format = FixedFormat::new(
            self.format.int_bits + other.format.int_bits,
            self.format.frac_bits + other.format.frac_bits,
            self.format.signed || other.format.signed,
        )?;
        let raw = self.raw * other.raw;
        debug_assert!(format.contains_raw(raw));
        Ok(FixedValue {
            raw,
            format,
            overflow: self.overflow || other.overflow,
        })
    }

    /// Exact sum. Fractional widths are aligned to the wider one and one
    /// carry bit is added. Mixing signedness yields a signed result, in
    /// which case an unsigned operand first gains a sign bit.
    pub fn add(&self, other: &FixedValue) -> Result<FixedValue> {
        let signed = self.format.signed || other.format.signed;
        let (ia, ib) = if signed {
            (
                self.format.signed_int_bits(),
                other.format.signed_int_bits(),
            )
        } else {
            (self.format.int_bits, other.format.int_bits)
        };
        let frac = self.format.frac_bits.max(other.format.frac_bits);
        let format = FixedFormat::new(ia.max(ib) + 1, frac, signed)?;
        let raw = self.raw_at(frac) + other.raw_at(frac);
        debug_assert!(format.contains_raw(raw));
        Ok(FixedValue {
            raw,
            format,
            overflow: self.overflow || other.overflow,
        })
    }

    /// Exact difference, always signed.
    pub fn sub(&self, other: &FixedValue) -> Result<FixedValue> {
        let ia = self.format.signed_int_bits();
        let ib = other.format.signed_int_bits();
        let frac = self.format.frac_bits.max(other.format.frac_bits);
        let format = FixedFormat::new(ia.max(ib) + 1, frac, true)?;
        let raw = self.raw_at(frac) - other.raw_at(frac);
        debug_assert!(format.contains_raw(raw));
        Ok(FixedValue {
            raw,
            format,
            overflow: self.overflow || other.overflow,
        })
    }

    /// Division by `2^k` as a pure format change: the raw bits stay put and
    /// the binary point moves `k` places left.
    pub fn shift_right(&self, k: u32) -> Result<FixedValue> {
        let format = FixedFormat::new(
            self.format.int_bits,
            self.format.frac_bits + k,
            self.format.signed,
        )?;
        Ok(FixedValue {
            raw: self.raw,
            format,
            overflow: self.overflow,
        })
    }

    /// Drops `n` integer MSBs.
    pub fn cut_msb(&self, n: u32, policy: MsbPolicy) -> Result<FixedValue> {
        if n > self.format.int_bits {
            return Err(Error::Format(format!(
                "cannot cut {n} MSBs from {}",
                self.format
            )));
        }
        let format = FixedFormat::new(
            self.format.int_bits - n,
            self.format.frac_bits,
            self.format.signed,
        )?;
        if format.contains_raw(self.raw) {
            return Ok(FixedValue {
                raw: self.raw,
                format,
                overflow: self.overflow,
            });
        }
        match policy {
            MsbPolicy::Assert => Err(Error::Overflow {
                value: self.real_value(),
                format,
                cut: n,
            }),
            MsbPolicy::Saturate => {
                let raw = self.raw.clamp(format.raw_min(), format.raw_max());
                Ok(FixedValue {
                    raw,
                    format,
                    overflow: true,
                })
            }
        }
    }

    /// Keeps bit weights down to `2^-keep_frac_bits`, discarding the rest
    /// toward negative infinity.
    pub fn trunc_lsb(&self, keep_frac_bits: u32) -> Result<FixedValue> {
        if keep_frac_bits > self.format.frac_bits {
            return Err(Error::Format(format!(
                "cannot keep {keep_frac_bits} fractional bits of {}",
                self.format
            )));
        }
        let dropped = self.format.frac_bits - keep_frac_bits;
        let format = FixedFormat::new(self.format.int_bits, keep_frac_bits, self.format.signed)?;
        Ok(FixedValue {
            raw: self.raw >> dropped,
            format,
            overflow: self.overflow,
        })
    }

    /// Reinterprets the value in a format with at least as many integer and
    /// fractional bits.
    pub fn widen(&self, format: FixedFormat) -> Result<FixedValue> {
        if format.frac_bits < self.format.frac_bits {
            return Err(Error::Format(format!(
                "{} has fewer fractional bits than {}",
                format, self.format
            )));
        }
        let raw = self.raw_at(format.frac_bits);
        Ok(Self::from_raw(raw, format)?.with_overflow(self.overflow))
    }
}

impl fmt::Display for FixedValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.format, self.raw)
    }
}

impl FromStr for FixedValue {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (fmt, raw) = s
            .trim()
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("expected Qs(i,f):raw, got {s:?}")))?;
        let format: FixedFormat = fmt.parse()?;
        let raw: i128 = raw
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad raw value in {s:?}")))?;
        FixedValue::from_raw(raw, format)
    }
}

pub(crate) fn pow2(e: i32) -> f64 {
    2f64.powi(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qu(i: u32, f: u32) -> FixedFormat {
        FixedFormat::unsigned(i, f).unwrap()
    }

    fn qs(i: u32, f: u32) -> FixedFormat {
        FixedFormat::signed(i, f).unwrap()
    }

    fn val(x: f64, fmt: FixedFormat) -> FixedValue {
        FixedValue::quantize(x, fmt, RoundMode::Truncate).unwrap()
    }

    #[test]
    fn format_limits() {
        assert!(FixedFormat::new(0, 0, false).is_err());
        assert!(matches!(
            FixedFormat::new(40, 25, true),
            Err(Error::Width { bits: 65 })
        ));
        assert_eq!(FixedFormat::SCALE.max_value(), 1.9921875);
        assert_eq!(FixedFormat::OFFSET.min_value(), -64.0);
        assert_eq!(FixedFormat::OFFSET.max_value(), 63.5);
        assert_eq!(qu(64, 0).raw_max(), u64::MAX as i128);
    }

    #[test]
    fn quantize_scale_bounds() {
        let hi = FixedValue::quantize(1.17, FixedFormat::SCALE, RoundMode::HalfUp).unwrap();
        assert_eq!(hi.raw(), 150);
        assert_eq!(hi.real_value(), 1.171875);
        let lo = FixedValue::quantize(0.88, FixedFormat::SCALE, RoundMode::HalfUp).unwrap();
        assert_eq!(lo.raw(), 113);
        assert_eq!(lo.real_value(), 0.8828125);
        for mode in [RoundMode::NearestEven, RoundMode::HalfUp, RoundMode::Truncate] {
            assert_eq!(FixedValue::quantize(0.0, qs(3, 4), mode).unwrap().raw(), 0);
        }
    }

    #[test]
    fn quantize_modes_at_ties() {
        let f = qs(4, 1);
        let q = |x, m| FixedValue::quantize(x, f, m).unwrap().real_value();
        assert_eq!(q(0.25, RoundMode::NearestEven), 0.0);
        assert_eq!(q(0.75, RoundMode::NearestEven), 1.0);
        assert_eq!(q(0.25, RoundMode::HalfUp), 0.5);
        assert_eq!(q(-0.25, RoundMode::HalfUp), 0.0);
        assert_eq!(q(-0.25, RoundMode::Truncate), -0.5);
    }

    #[test]
    fn quantize_out_of_range() {
        assert!(matches!(
            FixedValue::quantize(2.0, FixedFormat::SCALE, RoundMode::HalfUp),
            Err(Error::Range { .. })
        ));
        assert!(FixedValue::quantize(-0.01, FixedFormat::SCALE, RoundMode::Truncate).is_err());
        // rounds up past the top code
        assert!(FixedValue::quantize(1.997, FixedFormat::SCALE, RoundMode::HalfUp).is_err());
        assert!(FixedValue::quantize(f64::NAN, FixedFormat::SCALE, RoundMode::HalfUp).is_err());
    }

    #[test]
    fn mul_widens() {
        let d = FixedValue::from_int(1023, FixedFormat::ADC_INPUT).unwrap();
        let s = FixedValue::from_raw(150, FixedFormat::SCALE).unwrap();
        let p = d.mul(&s).unwrap();
        assert_eq!(p.format(), qu(11, 7));
        assert_eq!(p.real_value(), 1198.828125);

        let one = FixedValue::from_raw(128, FixedFormat::SCALE).unwrap();
        assert_eq!(d.mul(&one).unwrap().real_value(), 1023.0);
        let zero = FixedValue::zero(FixedFormat::ADC_INPUT);
        assert_eq!(zero.mul(&s).unwrap().real_value(), 0.0);

        let wide = FixedValue::zero(qu(40, 0));
        assert!(matches!(wide.mul(&wide), Err(Error::Width { bits: 80 })));
    }

    #[test]
    fn add_and_sub() {
        let a = val(117.25, qu(8, 2));
        let b = val(-0.5, FixedFormat::OFFSET);
        let s = a.add(&b).unwrap();
        assert_eq!(s.real_value(), 116.75);
        assert!(s.format().is_signed());
        assert_eq!(s.format(), qs(10, 2));

        assert_eq!(a.add(&FixedValue::zero(qu(3, 0))).unwrap().real_value(), 117.25);
        let h = FixedValue::from_int(100, qs(9, 0)).unwrap();
        let m = FixedValue::from_int(-100, qs(9, 0)).unwrap();
        assert_eq!(h.add(&m).unwrap().real_value(), 0.0);
        assert_eq!(h.sub(&h).unwrap().real_value(), 0.0);

        let top = FixedValue::from_raw(qu(8, 2).raw_max(), qu(8, 2)).unwrap();
        let d = FixedValue::zero(qu(8, 2)).sub(&top).unwrap();
        assert_eq!(d.real_value(), -255.75);
    }

    #[test]
    fn shift_right_is_exact() {
        let v = val(234.375, qu(11, 7));
        assert_eq!(v.shift_right(1).unwrap().real_value(), 117.1875);
        assert_eq!(v.shift_right(0).unwrap(), v);
        let one = FixedValue::from_int(1, qu(2, 0)).unwrap();
        let e = one.shift_right(3).unwrap();
        assert_eq!(e.real_value(), 0.125);
        assert_eq!(e.format(), qu(2, 3));
    }

    #[test]
    fn cut_msb_saturates_with_flag() {
        let f = qs(11, 10);
        let fits = val(117.1875, f).cut_msb(3, MsbPolicy::Saturate).unwrap();
        assert_eq!(fits.real_value(), 117.1875);
        assert_eq!(fits.format(), qs(8, 10));
        assert!(!fits.overflow());

        let clamped = val(200.0, f).cut_msb(4, MsbPolicy::Saturate).unwrap();
        assert_eq!(clamped.real_value(), 63.9990234375);
        assert!(clamped.overflow());

        let neg = val(-200.0, f).cut_msb(4, MsbPolicy::Saturate).unwrap();
        assert_eq!(neg.real_value(), -64.0);
        assert!(neg.overflow());

        assert!(matches!(
            val(200.0, f).cut_msb(4, MsbPolicy::Assert),
            Err(Error::Overflow { cut: 4, .. })
        ));
        for p in [MsbPolicy::Saturate, MsbPolicy::Assert] {
            assert_eq!(FixedValue::zero(f).cut_msb(5, p).unwrap().raw(), 0);
        }
        assert!(val(1.0, qu(2, 0)).cut_msb(3, MsbPolicy::Saturate).is_err());
    }

    #[test]
    fn overflow_flag_is_sticky() {
        let f = qu(11, 0);
        let sat = FixedValue::from_int(1000, f)
            .unwrap()
            .cut_msb(3, MsbPolicy::Saturate)
            .unwrap();
        assert!(sat.overflow());
        let sum = sat.add(&FixedValue::zero(f)).unwrap();
        assert!(sum.overflow());
        assert!(sum.trunc_lsb(0).unwrap().overflow());
    }

    #[test]
    fn trunc_lsb_floors() {
        let f = qu(8, 10);
        assert_eq!(val(117.1875, f).trunc_lsb(5).unwrap().real_value(), 117.1875);
        assert_eq!(val(0.015625, f).trunc_lsb(5).unwrap().real_value(), 0.0);
        assert_eq!(val(42.0, f).trunc_lsb(5).unwrap().real_value(), 42.0);
        let n = val(-0.015625, qs(8, 10)).trunc_lsb(5).unwrap();
        assert_eq!(n.real_value(), -0.03125);
        assert!(val(1.0, f).trunc_lsb(11).is_err());
    }

    #[test]
    fn text_form() {
        let v = FixedValue::from_raw(150, FixedFormat::SCALE).unwrap();
        assert_eq!(v.to_string(), "Qu(1,7):150");
        assert_eq!("Qu(1,7):150".parse::<FixedValue>().unwrap(), v);
        let o: FixedValue = "Qs(7,1):-7".parse().unwrap();
        assert_eq!(o.real_value(), -3.5);
        assert!("Qu(1,7):256".parse::<FixedValue>().is_err());
        assert!("Qx(1,7):1".parse::<FixedValue>().is_err());
        assert!("Qs(1,7)".parse::<FixedValue>().is_err());
    }
}
