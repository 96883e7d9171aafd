// SPDX-License-Identifier: Apache-2.0
//! Design-space exploration over the 15 cut/round architectures.
//!
//! A seeded Gaussian stimulus is pushed through every architecture and
//! compared against the wide floating-point reference. Per architecture the
//! report records the fraction of samples with `|hw - baseline| >= 0.5`, the
//! mean and RMS error, and a histogram. Architectures are ranked by that
//! fraction; the two best are labelled A and B and the worst architecture of
//! each second-stage method C, D and E.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fp16::fp16_baseline;
use crate::nmpu::{
    nmpu_reference, FirstStageMethod, NmpuConfig, RealParams, SecondStageMethod, INPUT_MAX,
};

pub const DEFAULT_SAMPLES: usize = 10_000;
pub const DEFAULT_GAIN: f64 = 256.0;
/// Scale draws span the extremes measured on the ADC population.
pub const SCALE_MIN: f64 = 0.88;
pub const SCALE_MAX: f64 = 1.17;
/// Q_err threshold: an integer output is wrong once it is half an LSB away.
pub const ERR_THRESHOLD: f64 = 0.5;
pub const HIST_BIN_WIDTH: f64 = 0.25;
pub const HIST_BINS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Architecture {
    pub first_stage: FirstStageMethod,
    pub second_stage: SecondStageMethod,
}

impl Architecture {
    pub fn new(first_stage: FirstStageMethod, second_stage: SecondStageMethod) -> Self {
        Architecture {
            first_stage,
            second_stage,
        }
    }

    /// All 5 x 3 combinations, first-stage major.
    pub fn all() -> Vec<Architecture> {
        FirstStageMethod::ALL
            .into_iter()
            .flat_map(|f| SecondStageMethod::ALL.into_iter().map(move |s| Self::new(f, s)))
            .collect()
    }

    pub fn id(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.first_stage, self.second_stage)
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .trim()
            .split_once('-')
            .ok_or_else(|| Error::Parse(format!("expected e.g. M1-S1, got {s:?}")))?;
        Ok(Architecture::new(a.parse()?, b.parse()?))
    }
}

/// Per-sample parameter draw. `scale_p`/`scale_n` are register-level scales
/// in `[0.88, 1.17]`; the effective scale is `scale / 2^shift`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CfgDraw {
    pub scale_p: f64,
    pub scale_n: f64,
    pub shift: u32,
    pub offset: f64,
}

impl CfgDraw {
    pub fn real_params(&self, relu: bool) -> RealParams {
        let div = (1u32 << self.shift) as f64;
        RealParams::new(self.scale_p / div, self.scale_n / div, self.offset, relu)
    }
}

/// How the floating-point reference is turned into `out_baseline`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// The reference converted to the 8-bit signed output format the way a
    /// software model casts it: truncate, then saturate.
    #[default]
    Int8,
    /// The unconverted real-valued reference.
    Real,
}

impl BaselineMode {
    pub fn out_baseline(&self, reference: f64) -> f64 {
        match self {
            BaselineMode::Int8 => reference.trunc().clamp(i8::MIN.into(), i8::MAX.into()),
            BaselineMode::Real => reference,
        }
    }
}

impl fmt::Display for BaselineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineMode::Int8 => "int8",
            BaselineMode::Real => "real",
        })
    }
}

impl FromStr for BaselineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "int8" => Ok(BaselineMode::Int8),
            "real" => Ok(BaselineMode::Real),
            other => Err(Error::Parse(format!("unknown baseline mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StimulusSpec {
    pub n: usize,
    pub seed: u64,
    pub gain: f64,
    /// Right shift used for every draw.
    pub shift: u32,
    /// Offsets are drawn uniformly from `[-offset_max, offset_max]`.
    pub offset_max: f64,
    pub relu: bool,
}

impl Default for StimulusSpec {
    fn default() -> Self {
        StimulusSpec {
            n: DEFAULT_SAMPLES,
            seed: 42,
            gain: DEFAULT_GAIN,
            shift: 3,
            offset_max: 8.0,
            relu: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    pub samples: Vec<(u16, u16)>,
    pub cfg_draws: Vec<CfgDraw>,
    pub seed: u64,
    pub relu: bool,
}

impl Stimulus {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// A stimulus with one fixed parameter draw for every sample.
    pub fn fixed(samples: Vec<(u16, u16)>, draw: CfgDraw, relu: bool) -> Self {
        let cfg_draws = vec![draw; samples.len()];
        Stimulus {
            samples,
            cfg_draws,
            seed: 0,
            relu,
        }
    }
}

/// Maps a standard-normal draw onto a differential pair of 10-bit inputs.
pub fn split_gaussian(z: f64, gain: f64) -> (u16, u16) {
    let mag = (gain * z.abs()).round().min(f64::from(INPUT_MAX)) as u16;
    if z >= 0.0 {
        (mag, 0)
    } else {
        (0, mag)
    }
}

impl StimulusSpec {
    pub fn generate(&self) -> Result<Stimulus> {
        if self.n == 0 {
            return Err(Error::Parameter("stimulus needs at least one sample".into()));
        }
        if !(self.gain > 0.0) || !self.gain.is_finite() {
            return Err(Error::Parameter(format!("gain must be positive, got {}", self.gain)));
        }
        if self.shift > crate::nmpu::MAX_SHIFT {
            return Err(Error::Parameter(format!("shift {} out of range", self.shift)));
        }
        if !(self.offset_max >= 0.0) {
            return Err(Error::Parameter("offset_max must be non-negative".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut samples = Vec::with_capacity(self.n);
        let mut cfg_draws = Vec::with_capacity(self.n);
        for _ in 0..self.n {
            let z: f64 = rng.sample(StandardNormal);
            samples.push(split_gaussian(z, self.gain));
            let scale_p = rng.random_range(SCALE_MIN..=SCALE_MAX);
            let scale_n = rng.random_range(SCALE_MIN..=SCALE_MAX);
            let u: f64 = rng.random_range(-1.0..=1.0);
            cfg_draws.push(CfgDraw {
                scale_p,
                scale_n,
                shift: self.shift,
                offset: u * self.offset_max,
            });
        }
        Ok(Stimulus {
            samples,
            cfg_draws,
            seed: self.seed,
            relu: self.relu,
        })
    }
}

/// Default stimulus with `n` samples.
pub fn gen_stimulus(n: usize, seed: u64, gain: f64) -> Result<Stimulus> {
    StimulusSpec {
        n,
        seed,
        gain,
        ..StimulusSpec::default()
    }
    .generate()
}

pub fn q_err(hw: f64, baseline: f64) -> f64 {
    (hw - baseline).abs()
}

/// Relative excess of an implementation's RMS error over the RMS error of
/// the hardware operation itself.
pub fn q_err_rel(impl_err: f64, hw_op_err: f64) -> Result<f64> {
    if !(hw_op_err > 0.0) {
        return Err(Error::Domain(format!(
            "hardware operation error must be positive, got {hw_op_err}"
        )));
    }
    Ok((impl_err - hw_op_err) / hw_op_err)
}

/// Root mean square of a set of errors.
pub fn rms(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub frac_ge_half: f64,
    pub mean_q_err: f64,
    pub l2_err: f64,
    /// Counts per bin of width [`HIST_BIN_WIDTH`]; the last bin is open.
    pub histogram: Vec<u64>,
}

impl ErrorStats {
    /// Aggregates errors in slice order; the sums are order-sensitive only
    /// in the last ulp, so callers keep a fixed order for byte-identical
    /// reports.
    pub fn from_errors(errors: &[f64]) -> Self {
        let n = errors.len().max(1) as f64;
        let mut histogram = vec![0u64; HIST_BINS];
        let mut ge = 0usize;
        let mut sum = 0.0;
        for &e in errors {
            if e >= ERR_THRESHOLD {
                ge += 1;
            }
            sum += e;
            let bin = ((e / HIST_BIN_WIDTH) as usize).min(HIST_BINS - 1);
            histogram[bin] += 1;
        }
        ErrorStats {
            frac_ge_half: ge as f64 / n,
            mean_q_err: sum / n,
            l2_err: rms(errors),
            histogram,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchReport {
    pub id: String,
    pub architecture: Architecture,
    #[serde(flatten)]
    pub stats: ErrorStats,
    /// Relative L2 excess over the FP16 baseline.
    pub rel_to_fp16: Option<f64>,
    /// 1-based position by `frac_ge_half`.
    pub rank: usize,
    pub label: Option<char>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub baseline: BaselineMode,
    pub samples: usize,
    pub seed: u64,
    /// In input order.
    pub architectures: Vec<ArchReport>,
    pub fp16: ErrorStats,
}

impl ErrorReport {
    pub fn get(&self, arch: &Architecture) -> Option<&ArchReport> {
        self.architectures.iter().find(|a| a.architecture == *arch)
    }

    pub fn labelled(&self, label: char) -> Option<&ArchReport> {
        self.architectures.iter().find(|a| a.label == Some(label))
    }

    /// Best-ranked architecture.
    pub fn best(&self) -> Option<&ArchReport> {
        self.architectures.iter().find(|a| a.rank == 1)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "id,first_stage,second_stage,frac_ge_half,mean_q_err,l2_err,rel_to_fp16,rank,label\n",
        );
        for a in &self.architectures {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                a.id,
                a.architecture.first_stage,
                a.architecture.second_stage,
                a.stats.frac_ge_half,
                a.stats.mean_q_err,
                a.stats.l2_err,
                a.rel_to_fp16.map(|v| v.to_string()).unwrap_or_default(),
                a.rank,
                a.label.map(String::from).unwrap_or_default(),
            ));
        }
        out
    }
}

/// Histogram as plot-ready CSV.
pub fn histogram_csv(stats: &ErrorStats) -> String {
    let mut out = String::from("bin_start,bin_end,count\n");
    for (i, c) in stats.histogram.iter().enumerate() {
        let lo = i as f64 * HIST_BIN_WIDTH;
        let hi = if i + 1 == HIST_BINS {
            "inf".to_string()
        } else {
            ((i + 1) as f64 * HIST_BIN_WIDTH).to_string()
        };
        out.push_str(&format!("{lo},{hi},{c}\n"));
    }
    out
}

/// Runs every architecture over the stimulus.
///
/// The hardware path uses parameters quantized into the registers; the
/// baseline keeps the real-valued draws.
pub fn explore(
    stimulus: &Stimulus,
    architectures: &[Architecture],
    baseline: BaselineMode,
) -> Result<ErrorReport> {
    if stimulus.is_empty() {
        return Err(Error::Parameter("empty stimulus".into()));
    }
    if architectures.is_empty() {
        return Err(Error::Parameter("no architectures to explore".into()));
    }
    let reals: Vec<RealParams> = stimulus
        .cfg_draws
        .iter()
        .map(|d| d.real_params(stimulus.relu))
        .collect();
    let base_cfgs: Vec<NmpuConfig> = reals
        .par_iter()
        .map(|p| NmpuConfig::from_real(p, FirstStageMethod::M5, SecondStageMethod::S1))
        .collect::<Result<_>>()?;
    let baselines: Vec<f64> = stimulus
        .samples
        .iter()
        .zip(&reals)
        .map(|(&(p, n), r)| baseline.out_baseline(nmpu_reference(p, n, r)))
        .collect();

    let fp16_errors: Vec<f64> = stimulus
        .samples
        .iter()
        .zip(&reals)
        .zip(&baselines)
        .map(|((&(p, n), r), &b)| q_err(fp16_baseline(p, n, r), b))
        .collect();
    let fp16 = ErrorStats::from_errors(&fp16_errors);

    let stats: Vec<ErrorStats> = architectures
        .par_iter()
        .map(|arch| {
            let errors = stimulus
                .samples
                .iter()
                .zip(&base_cfgs)
                .zip(&baselines)
                .map(|((&(p, n), cfg), &b)| {
                    let cfg = cfg.with_methods(arch.first_stage, arch.second_stage);
                    Ok(q_err(cfg.process(p, n)?.value.into(), b))
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(ErrorStats::from_errors(&errors))
        })
        .collect::<Result<_>>()?;

    let mut reports: Vec<ArchReport> = architectures
        .iter()
        .zip(stats)
        .map(|(arch, stats)| ArchReport {
            id: arch.id(),
            architecture: *arch,
            rel_to_fp16: q_err_rel(stats.l2_err, fp16.l2_err).ok(),
            stats,
            rank: 0,
            label: None,
        })
        .collect();
    assign_ranks(&mut reports);
    Ok(ErrorReport {
        baseline,
        samples: stimulus.len(),
        seed: stimulus.seed,
        architectures: reports,
        fp16,
    })
}

fn assign_ranks(reports: &mut [ArchReport]) {
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&reports[a], &reports[b]);
        ra.stats
            .frac_ge_half
            .total_cmp(&rb.stats.frac_ge_half)
            .then(ra.stats.mean_q_err.total_cmp(&rb.stats.mean_q_err))
            .then(ra.architecture.cmp(&rb.architecture))
    });
    for (rank, &i) in order.iter().enumerate() {
        reports[i].rank = rank + 1;
    }
    for (label, &i) in ['A', 'B'].iter().zip(&order) {
        reports[i].label = Some(*label);
    }
    for (label, second) in ['C', 'D', 'E'].into_iter().zip(SecondStageMethod::ALL) {
        if let Some(&worst) = order
            .iter()
            .rev()
            .find(|&&i| reports[i].architecture.second_stage == second)
        {
            if reports[worst].label.is_none() {
                reports[worst].label = Some(label);
            }
        }
    }
}

/// Architecture labelled `A` by the default exploration (seed 42, 10,000
/// samples, gain 256, 8-bit baseline).
pub fn default_best() -> Result<Architecture> {
    let report = explore(
        &StimulusSpec::default().generate()?,
        &Architecture::all(),
        BaselineMode::default(),
    )?;
    report
        .labelled('A')
        .map(|a| a.architecture)
        .ok_or_else(|| Error::Domain("exploration produced no best architecture".into()))
}

/// Error counts over the full `1024 x 1024` input grid for one config.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridCounts {
    pub total: u64,
    pub ge_half: u64,
}

impl GridCounts {
    pub fn fraction(&self) -> f64 {
        self.ge_half as f64 / self.total as f64
    }
}

pub fn exhaustive_counts(
    cfg: &NmpuConfig,
    reference: &RealParams,
    baseline: BaselineMode,
) -> Result<GridCounts> {
    let per_row: Vec<u64> = (0..=INPUT_MAX)
        .into_par_iter()
        .map(|p| {
            let mut ge = 0;
            for n in 0..=INPUT_MAX {
                let hw = f64::from(cfg.process(p, n)?.value);
                let b = baseline.out_baseline(nmpu_reference(p, n, reference));
                if q_err(hw, b) >= ERR_THRESHOLD {
                    ge += 1;
                }
            }
            Ok(ge)
        })
        .collect::<Result<_>>()?;
    let side = u64::from(INPUT_MAX) + 1;
    Ok(GridCounts {
        total: side * side,
        ge_half: per_row.iter().sum(),
    })
}

/// Uniform random pairs from the input grid.
pub fn uniform_grid_samples(n: usize, seed: u64) -> Vec<(u16, u16)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            (
                rng.random_range(0..=INPUT_MAX),
                rng.random_range(0..=INPUT_MAX),
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub gain: f64,
    pub id: String,
    pub frac_ge_half: f64,
}

/// Re-runs the exploration at several input gains.
pub fn gain_sweep(
    spec: &StimulusSpec,
    gains: &[f64],
    architectures: &[Architecture],
    baseline: BaselineMode,
) -> Result<Vec<SensitivityRow>> {
    let mut rows = Vec::new();
    for &gain in gains {
        let stim = StimulusSpec {
            gain,
            ..spec.clone()
        }
        .generate()?;
        let report = explore(&stim, architectures, baseline)?;
        rows.extend(report.architectures.into_iter().map(|a| SensitivityRow {
            gain,
            id: a.id,
            frac_ge_half: a.stats.frac_ge_half,
        }));
    }
    Ok(rows)
}
