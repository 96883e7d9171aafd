// SPDX-License-Identifier: Apache-2.0
//! Synthetic ADC transfer curves and per-ADC affine correction.
//!
//! Curves are sampled on a uniform grid of normalized bit-line currents in
//! `[0, 1]`. Every curve is the shared nonlinear base curve
//! `1023 * (x + k * x * (1 - x) * (x - 0.5))` with a per-ADC gain error and
//! count offset, clamped to the 10-bit range. The population statistics are
//! computed on integer counts, which is what a converter actually reports.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixedpoint::{FixedFormat, FixedValue};
use crate::nmpu::{quantize_params, QuantizedParams, INPUT_MAX};

pub const DEFAULT_LEVELS: usize = 256;
/// Standard deviation of the per-ADC count offset.
pub const OFFSET_JITTER_STD: f64 = 4.0;
/// Levels whose mean count is below this are left out of the aggregate CV.
pub const CV_MIN_MEAN: f64 = 32.0;
pub const MAX_CV_TARGET: f64 = 0.2;

const FULL_SCALE: f64 = INPUT_MAX as f64;

/// Shared base transfer curve.
pub fn base_curve(x: f64, nonlinearity: f64) -> f64 {
    FULL_SCALE * (x + nonlinearity * x * (1.0 - x) * (x - 0.5))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdcCurve {
    samples: Vec<f64>,
    pub gain_jitter: f64,
    pub offset_jitter: f64,
    pub nonlinearity: f64,
    /// Ideal converters compute `round(1023 * current)` directly.
    #[serde(default)]
    ideal: bool,
}

impl AdcCurve {
    /// Builds a curve from expected counts at `samples.len()` evenly spaced
    /// levels. Samples must be non-decreasing and inside `[0, 1023]`.
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Parameter("a curve needs at least two samples".into()));
        }
        if samples
            .iter()
            .any(|s| !s.is_finite() || *s < 0.0 || *s > FULL_SCALE)
        {
            return Err(Error::Parameter("curve samples must lie in [0, 1023]".into()));
        }
        if samples.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Parameter("curve must be non-decreasing".into()));
        }
        Ok(AdcCurve {
            samples,
            gain_jitter: 0.0,
            offset_jitter: 0.0,
            nonlinearity: 0.0,
            ideal: false,
        })
    }

    /// Ideal converter: count `1023 * current`.
    pub fn linear(levels: usize) -> Self {
        let samples = (0..levels)
            .map(|i| FULL_SCALE * i as f64 / (levels - 1) as f64)
            .collect();
        AdcCurve {
            samples,
            gain_jitter: 0.0,
            offset_jitter: 0.0,
            nonlinearity: 0.0,
            ideal: true,
        }
    }

    pub fn is_ideal(&self) -> bool {
        self.ideal
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn levels(&self) -> usize {
        self.samples.len()
    }

    /// Normalized current of grid point `i`.
    pub fn level(&self, i: usize) -> f64 {
        i as f64 / (self.samples.len() - 1) as f64
    }

    /// Integer count reported at grid point `i`.
    pub fn count_at(&self, i: usize) -> u16 {
        self.samples[i].round() as u16
    }

    /// Converts a normalized current by linear interpolation between grid
    /// points, rounding to the nearest count.
    pub fn convert(&self, current: f64) -> u16 {
        let x = if current.is_nan() {
            0.0
        } else {
            current.clamp(0.0, 1.0)
        };
        if self.ideal {
            return (x * FULL_SCALE).round() as u16;
        }
        let pos = x * (self.samples.len() - 1) as f64;
        let i = (pos.floor() as usize).min(self.samples.len() - 2);
        let t = pos - i as f64;
        let (a, b) = (self.samples[i], self.samples[i + 1]);
        let c = a + (b - a) * t;
        c.round().clamp(0.0, FULL_SCALE) as u16
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdcPopulation {
    curves: Vec<AdcCurve>,
}

impl AdcPopulation {
    pub fn new(curves: Vec<AdcCurve>) -> Result<Self> {
        let levels = curves.first().map(AdcCurve::levels).unwrap_or(0);
        if curves.iter().any(|c| c.levels() != levels) {
            return Err(Error::Shape("all curves must share one level grid".into()));
        }
        Ok(AdcPopulation { curves })
    }

    /// `n` identical ideal converters.
    pub fn linear(n: usize, levels: usize) -> Self {
        AdcPopulation {
            curves: vec![AdcCurve::linear(levels); n],
        }
    }

    pub fn curves(&self) -> &[AdcCurve] {
        &self.curves
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    pub fn levels(&self) -> usize {
        self.curves.first().map(AdcCurve::levels).unwrap_or(0)
    }

    /// Mean integer count across ADCs at every grid point.
    pub fn mean_curve(&self) -> Vec<f64> {
        let n = self.curves.len() as f64;
        (0..self.levels())
            .map(|i| {
                self.curves
                    .iter()
                    .map(|c| f64::from(c.count_at(i)))
                    .sum::<f64>()
                    / n
            })
            .collect()
    }

    /// CSV with one row per level and one count column per ADC.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level");
        for i in 0..self.curves.len() {
            out.push_str(&format!(",adc{i}"));
        }
        out.push('\n');
        for l in 0..self.levels() {
            out.push_str(&self.curves[0].level(l).to_string());
            for c in &self.curves {
                out.push_str(&format!(",{}", c.count_at(l)));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub n: usize,
    pub cv_target: f64,
    pub nonlinearity: f64,
    pub seed: u64,
    pub levels: usize,
    pub offset_std: f64,
}

impl PopulationSpec {
    pub fn new(n: usize, cv_target: f64, nonlinearity: f64, seed: u64) -> Self {
        PopulationSpec {
            n,
            cv_target,
            nonlinearity,
            seed,
            levels: DEFAULT_LEVELS,
            offset_std: OFFSET_JITTER_STD,
        }
    }

    pub fn generate(&self) -> Result<AdcPopulation> {
        if self.n < 2 {
            return Err(Error::Parameter(format!(
                "population needs at least 2 ADCs, got {}",
                self.n
            )));
        }
        if !(0.0..=MAX_CV_TARGET).contains(&self.cv_target) {
            return Err(Error::Parameter(format!(
                "cv_target {} outside [0, {MAX_CV_TARGET}]",
                self.cv_target
            )));
        }
        if !(-1.0..=1.0).contains(&self.nonlinearity) {
            return Err(Error::Parameter(format!(
                "nonlinearity {} outside [-1, 1]",
                self.nonlinearity
            )));
        }
        if self.levels < 2 {
            return Err(Error::Parameter("need at least 2 levels".into()));
        }
        if !(self.offset_std >= 0.0) {
            return Err(Error::Parameter("offset_std must be non-negative".into()));
        }
        let base: Vec<f64> = (0..self.levels)
            .map(|i| base_curve(i as f64 / (self.levels - 1) as f64, self.nonlinearity))
            .collect();
        let gain = Normal::new(0.0, self.cv_target).expect("validated");
        let offset = Normal::new(0.0, self.offset_std).expect("validated");
        let curves = (0..self.n)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(i as u64);
                let dg = gain.sample(&mut rng);
                let d_o = offset.sample(&mut rng);
                let mut prev = 0.0f64;
                let samples = base
                    .iter()
                    .map(|&g| {
                        let c = (g * (1.0 + dg) + d_o).clamp(0.0, FULL_SCALE).max(prev);
                        prev = c;
                        c
                    })
                    .collect();
                AdcCurve {
                    samples,
                    gain_jitter: dg,
                    offset_jitter: d_o,
                    nonlinearity: self.nonlinearity,
                    ideal: false,
                }
            })
            .collect();
        Ok(AdcPopulation { curves })
    }
}

pub fn gen_adc_population(
    n: usize,
    cv_target: f64,
    nonlinearity: f64,
    seed: u64,
) -> Result<AdcPopulation> {
    PopulationSpec::new(n, cv_target, nonlinearity, seed).generate()
}

/// Affine correction of one ADC onto the population mean curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams {
    pub scale_aff: f64,
    pub offset_aff: f64,
    pub quantized: QuantizedParams,
}

impl AffineParams {
    pub fn apply_real(&self, count: u16) -> f64 {
        f64::from(count) * self.scale_aff + self.offset_aff
    }

    /// Correction evaluated exactly in register arithmetic.
    pub fn apply_quantized(&self, count: u16) -> f64 {
        let d = FixedValue::from_raw(count.into(), FixedFormat::ADC_INPUT).expect("10-bit count");
        let q = &self.quantized;
        d.mul(&q.scale)
            .and_then(|p| p.shift_right(q.shift))
            .and_then(|p| p.add(&q.offset))
            .expect("register formats are narrow")
            .real_value()
    }

    fn record(&self) -> AffineRecord {
        AffineRecord {
            scale_aff: self.scale_aff,
            offset_aff: self.offset_aff,
            scale_fx: self.quantized.scale.to_string(),
            shift: self.quantized.shift,
            offset_fx: self.quantized.offset.to_string(),
            scale_effective: self.quantized.effective_scale(),
            offset_effective: self.quantized.offset.real_value(),
        }
    }
}

#[derive(Serialize)]
struct AffineRecord {
    scale_aff: f64,
    offset_aff: f64,
    scale_fx: String,
    shift: u32,
    offset_fx: String,
    scale_effective: f64,
    offset_effective: f64,
}

/// Calibration results as a JSON array.
pub fn calibration_json(params: &[AffineParams]) -> String {
    let records: Vec<AffineRecord> = params.iter().map(AffineParams::record).collect();
    serde_json::to_string_pretty(&records).expect("plain records serialize")
}

fn is_clamped(count: u16) -> bool {
    count == 0 || count == INPUT_MAX
}

/// Grid points where no converter is clamped. Falls back to every point when
/// fewer than two remain.
fn shared_levels(population: &AdcPopulation) -> Vec<bool> {
    let mask: Vec<bool> = (0..population.levels())
        .map(|i| {
            population
                .curves()
                .iter()
                .all(|c| !is_clamped(c.count_at(i)))
        })
        .collect();
    if mask.iter().filter(|&&u| u).count() < 2 {
        vec![true; population.levels()]
    } else {
        mask
    }
}

/// Least-squares fit of each ADC's counts onto the population mean curve.
/// Grid points where any converter is clamped at 0 or 1023 are left out of
/// the fit, as are the ADC's own clamped points.
pub fn calibrate_affine(population: &AdcPopulation) -> Result<Vec<AffineParams>> {
    if population.len() < 2 {
        return Err(Error::Parameter("calibration needs at least 2 ADCs".into()));
    }
    let mean = population.mean_curve();
    let usable = shared_levels(population);
    population
        .curves()
        .iter()
        .enumerate()
        .map(|(idx, curve)| {
            let points: Vec<(f64, f64)> = (0..curve.levels())
                .filter(|&i| usable[i] && !is_clamped(curve.count_at(i)))
                .map(|i| (f64::from(curve.count_at(i)), mean[i]))
                .collect();
            if points.len() < 2 {
                return Err(Error::SingularFit { index: idx });
            }
            let np = points.len() as f64;
            let c_bar = points.iter().map(|p| p.0).sum::<f64>() / np;
            let m_bar = points.iter().map(|p| p.1).sum::<f64>() / np;
            let mut sxx = 0.0;
            let mut sxy = 0.0;
            for (c, m) in &points {
                sxx += (c - c_bar) * (c - c_bar);
                sxy += (c - c_bar) * (m - m_bar);
            }
            if sxx == 0.0 {
                return Err(Error::SingularFit { index: idx });
            }
            let scale_aff = sxy / sxx;
            let offset_aff = m_bar - scale_aff * c_bar;
            Ok(AffineParams {
                scale_aff,
                offset_aff,
                quantized: quantize_params(scale_aff, offset_aff)?,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: f64,
    pub mean: f64,
    pub std: f64,
    pub cv: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvProfile {
    pub levels: Vec<LevelStats>,
    /// Mean per-level CV over levels with mean count at least [`CV_MIN_MEAN`].
    pub aggregate: f64,
}

/// Per-level coefficient of variation across ADCs, optionally after
/// correction in real or register arithmetic.
pub fn compute_cv(
    population: &AdcPopulation,
    correction: Option<&[AffineParams]>,
    quantized: bool,
) -> Result<CvProfile> {
    if let Some(c) = correction {
        if c.len() != population.len() {
            return Err(Error::Shape(format!(
                "{} corrections for {} ADCs",
                c.len(),
                population.len()
            )));
        }
    }
    let n = population.len() as f64;
    let mut levels = Vec::with_capacity(population.levels());
    for i in 0..population.levels() {
        let values: Vec<f64> = population
            .curves()
            .iter()
            .enumerate()
            .map(|(k, curve)| {
                let count = curve.count_at(i);
                match correction {
                    None => f64::from(count),
                    Some(c) if quantized => c[k].apply_quantized(count),
                    Some(c) => c[k].apply_real(count),
                }
            })
            .collect();
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        let cv = if mean > 0.0 { std / mean } else { 0.0 };
        levels.push(LevelStats {
            level: population.curves()[0].level(i),
            mean,
            std,
            cv,
        });
    }
    let used: Vec<f64> = levels
        .iter()
        .filter(|l| l.mean >= CV_MIN_MEAN)
        .map(|l| l.cv)
        .collect();
    let aggregate = if used.is_empty() {
        0.0
    } else {
        used.iter().sum::<f64>() / used.len() as f64
    };
    Ok(CvProfile { levels, aggregate })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_curve_endpoints() {
        for k in [-1.0, 0.0, 0.3, 1.0] {
            assert_eq!(base_curve(0.0, k), 0.0);
            assert_eq!(base_curve(1.0, k), 1023.0);
        }
        assert_eq!(base_curve(0.5, 0.3), 511.5);
    }

    #[test]
    fn convert_linear_curve() {
        let c = AdcCurve::linear(256);
        assert_eq!(c.convert(0.0), 0);
        assert_eq!(c.convert(0.5), 512);
        assert_eq!(c.convert(1.0), 1023);
        assert_eq!(c.convert(2.0), 1023);
        assert_eq!(c.convert(-1.0), 0);
    }

    #[test]
    fn convert_zero_current_gives_offset() {
        let pop = gen_adc_population(8, 0.07, 0.3, 1).unwrap();
        for c in pop.curves() {
            assert_eq!(c.convert(0.0), c.count_at(0));
        }
    }

    #[test]
    fn convert_is_monotone() {
        let pop = gen_adc_population(16, 0.1, 0.5, 9).unwrap();
        for c in pop.curves() {
            let mut prev = 0;
            for i in 0..=2000 {
                let v = c.convert(i as f64 / 2000.0);
                assert!(v >= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn generator_validates() {
        assert!(gen_adc_population(1, 0.07, 0.3, 0).is_err());
        assert!(gen_adc_population(4, 0.3, 0.3, 0).is_err());
        assert!(gen_adc_population(4, -0.1, 0.3, 0).is_err());
        assert!(gen_adc_population(4, 0.07, 3.0, 0).is_err());
    }

    #[test]
    fn zero_cv_differs_only_by_offset() {
        let pop = gen_adc_population(5, 0.0, 0.3, 4).unwrap();
        let base = &pop.curves()[0];
        for c in pop.curves() {
            assert_eq!(c.gain_jitter, 0.0);
            let d = c.offset_jitter - base.offset_jitter;
            // compare mid-range where neither clamps
            for i in 20..230 {
                assert!((c.samples()[i] - base.samples()[i] - d).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identical_curves_calibrate_to_identity() {
        let pop = AdcPopulation::linear(4, 64);
        for p in calibrate_affine(&pop).unwrap() {
            assert!((p.scale_aff - 1.0).abs() < 1e-12);
            assert!(p.offset_aff.abs() < 1e-9);
        }
    }

    #[test]
    fn proportional_curve_fit() {
        let base: Vec<f64> = (0..91).map(|i| 10.0 * i as f64).collect();
        let curves = [0.9, 1.0, 1.1]
            .iter()
            .map(|k| AdcCurve::from_samples(base.iter().map(|b| b * k).collect()).unwrap())
            .collect();
        let pop = AdcPopulation::new(curves).unwrap();
        let p = calibrate_affine(&pop).unwrap();
        assert!((p[2].scale_aff - 1.0 / 1.1).abs() < 1e-9);
        assert!((p[0].scale_aff - 1.0 / 0.9).abs() < 1e-9);
        assert!(p[2].offset_aff.abs() < 1e-9);
    }

    #[test]
    fn constant_curve_is_singular() {
        let curves = vec![
            AdcCurve::linear(16),
            AdcCurve::from_samples(vec![5.0; 16]).unwrap(),
        ];
        let pop = AdcPopulation::new(curves).unwrap();
        assert!(matches!(
            calibrate_affine(&pop),
            Err(Error::SingularFit { index: 1 })
        ));
    }

    #[test]
    fn linear_population_residual_vanishes() {
        let pop = gen_adc_population(32, 0.07, 0.0, 5).unwrap();
        let params = calibrate_affine(&pop).unwrap();
        let after = compute_cv(&pop, Some(&params), false).unwrap();
        let before = compute_cv(&pop, None, false).unwrap();
        assert!(after.aggregate < 0.01, "{}", after.aggregate);
        assert!(after.aggregate < before.aggregate);
    }

    #[test]
    fn curve_validation() {
        assert!(AdcCurve::from_samples(vec![1.0]).is_err());
        assert!(AdcCurve::from_samples(vec![3.0, 2.0]).is_err());
        assert!(AdcCurve::from_samples(vec![0.0, 1024.0]).is_err());
        assert!(AdcPopulation::new(vec![AdcCurve::linear(4), AdcCurve::linear(5)]).is_err());
    }

    #[test]
    fn csv_shape() {
        let pop = AdcPopulation::linear(3, 4);
        let csv = pop.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "level,adc0,adc1,adc2");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[4], "1,1023,1023,1023");
    }
}
