// SPDX-License-Identifier: Apache-2.0
//! Toy-scale analog in-memory-computing tile and inference harness.
//!
//! A tile stores a weight matrix as two conductance arrays in `[0, 1]`, one
//! for positive and one for negative weights. Inputs are unsigned activation
//! codes, rows are inputs and columns are outputs. Each column's positive and
//! negative currents are converted by the same ADC, so the per-ADC count
//! offset cancels in the differential periphery.
//!
//! The conductance noise model (one multiplicative Gaussian per device plus a
//! global drift scalar) is a synthetic stand-in, not a measured chip model.

mod network;
pub mod tensor;
pub mod toy;

pub use network::{
    argmax as network_argmax, encode_input, map_network, reference_forward, run_network, Hardware, LayerSpec, MappedLayer,
    MappedNetwork, ProgrammedNetwork, ACTIVATION_MAX,
};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::adc::AdcPopulation;
use crate::dse::Architecture;
use crate::error::{Error, Result};
use crate::fp16::fp16_baseline;
use crate::fixedpoint::FixedFormat;
use crate::nmpu::{nmpu_reference, Affine, NmpuConfig, RealParams, INPUT_MAX};

pub const MAX_TILE_DIM: usize = 256;
/// Offset register range in Q(7,1).
pub const OFFSET_MIN: f64 = -64.0;
pub const OFFSET_MAX: f64 = 63.5;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `x^T * self` for a row vector `x` of length `rows`.
    pub fn vec_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                *o += xr * w;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    weights_pos: Matrix,
    weights_neg: Matrix,
    noise_sigma: f64,
    drift_factor: f64,
    /// Weight magnitude that maps to conductance 1.
    weight_scale: f64,
    /// Accumulated conductance-code product that maps to current 1.
    full_scale: f64,
}

impl Tile {
    pub fn weights_pos(&self) -> &Matrix {
        &self.weights_pos
    }

    pub fn weights_neg(&self) -> &Matrix {
        &self.weights_neg
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn drift_factor(&self) -> f64 {
        self.drift_factor
    }

    pub fn weight_scale(&self) -> f64 {
        self.weight_scale
    }

    pub fn full_scale(&self) -> f64 {
        self.full_scale
    }

    pub fn rows(&self) -> usize {
        self.weights_pos.rows
    }

    pub fn cols(&self) -> usize {
        self.weights_pos.cols
    }

    pub fn with_drift(mut self, drift_factor: f64) -> Result<Self> {
        if !(drift_factor > 0.0 && drift_factor <= 1.0) {
            return Err(Error::Parameter(format!(
                "drift factor {drift_factor} outside (0, 1]"
            )));
        }
        self.drift_factor = drift_factor;
        Ok(self)
    }

    pub fn with_full_scale(mut self, full_scale: f64) -> Result<Self> {
        if !(full_scale > 0.0 && full_scale.is_finite()) {
            return Err(Error::Parameter(format!("full scale {full_scale} must be positive")));
        }
        self.full_scale = full_scale;
        Ok(self)
    }

    /// Weights as stored, `weight_scale * (g_pos - g_neg)`.
    pub fn dequantize(&self) -> Matrix {
        let data = self
            .weights_pos
            .data
            .iter()
            .zip(&self.weights_neg.data)
            .map(|(p, n)| self.weight_scale * (p - n))
            .collect();
        Matrix {
            rows: self.rows(),
            cols: self.cols(),
            data,
        }
    }
}

/// Maps `w` onto conductances with the largest magnitude at 1 and applies
/// multiplicative Gaussian noise to every programmed device.
pub fn program_weights(w: &Matrix, noise_sigma: f64, seed: u64) -> Result<Tile> {
    program_weights_with(w, noise_sigma, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn program_weights_with<R: Rng>(w: &Matrix, noise_sigma: f64, rng: &mut R) -> Result<Tile> {
    if w.rows == 0 || w.cols == 0 || w.rows > MAX_TILE_DIM || w.cols > MAX_TILE_DIM {
        return Err(Error::Shape(format!(
            "{}x{} does not fit a {MAX_TILE_DIM}x{MAX_TILE_DIM} tile",
            w.rows, w.cols
        )));
    }
    if w.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("weights must be finite".into()));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::Parameter(format!("noise sigma {noise_sigma} must be non-negative")));
    }
    let scale = w.max_abs();
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let noise = Normal::new(0.0, noise_sigma).expect("validated");
    let mut program = |g: f64| {
        if g == 0.0 || noise_sigma == 0.0 {
            g
        } else {
            (g * (1.0 + noise.sample(rng))).clamp(0.0, 1.0)
        }
    };
    let mut pos = Vec::with_capacity(w.data.len());
    let mut neg = Vec::with_capacity(w.data.len());
    for &v in &w.data {
        let g = v.abs() / scale;
        if v >= 0.0 {
            pos.push(program(g));
            neg.push(0.0);
        } else {
            pos.push(0.0);
            neg.push(program(g));
        }
    }
    Ok(Tile {
        weights_pos: Matrix::new(w.rows, w.cols, pos)?,
        weights_neg: Matrix::new(w.rows, w.cols, neg)?,
        noise_sigma,
        drift_factor: 1.0,
        weight_scale: scale,
        full_scale: w.rows as f64 * f64::from(INPUT_MAX),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnCounts {
    pub count_p: u16,
    pub count_n: u16,
}

/// Normalized positive and negative column currents.
pub fn column_currents(tile: &Tile, x: &[u16]) -> Result<Vec<(f64, f64)>> {
    if x.len() != tile.rows() {
        return Err(Error::Shape(format!(
            "input length {} for a tile with {} rows",
            x.len(),
            tile.rows()
        )));
    }
    let mut acc = vec![(0.0f64, 0.0f64); tile.cols()];
    for (r, &xr) in x.iter().enumerate() {
        if xr == 0 {
            continue;
        }
        let xr = f64::from(xr);
        for ((a, gp), gn) in acc
            .iter_mut()
            .zip(tile.weights_pos.row(r))
            .zip(tile.weights_neg.row(r))
        {
            a.0 += xr * gp;
            a.1 += xr * gn;
        }
    }
    Ok(acc
        .into_iter()
        .map(|(p, n)| {
            (
                p * tile.drift_factor / tile.full_scale,
                n * tile.drift_factor / tile.full_scale,
            )
        })
        .collect())
}

/// Analog accumulation followed by conversion. Column `c` is read by ADC
/// `c % adcs.len()`.
pub fn mvm(tile: &Tile, x: &[u16], adcs: &AdcPopulation) -> Result<Vec<ColumnCounts>> {
    if let Some(&bad) = x.iter().find(|&&v| v > INPUT_MAX) {
        return Err(Error::Range {
            value: bad.into(),
            format: FixedFormat::ADC_INPUT,
        });
    }
    if adcs.is_empty() {
        return Err(Error::Shape("empty ADC population".into()));
    }
    let curves = adcs.curves();
    Ok(column_currents(tile, x)?
        .into_iter()
        .enumerate()
        .map(|(c, (ip, i_n))| {
            let adc = &curves[c % curves.len()];
            ColumnCounts {
                count_p: adc.convert(ip),
                count_n: adc.convert(i_n),
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PeripheryKind {
    Fp32Reference,
    Fp16Behavioral,
    FixedPointNmpu(Architecture),
}

impl fmt::Display for PeripheryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PeripheryKind::Fp32Reference => f.write_str("fp32"),
            PeripheryKind::Fp16Behavioral => f.write_str("fp16"),
            PeripheryKind::FixedPointNmpu(a) => write!(f, "nmpu:{a}"),
        }
    }
}

impl FromStr for PeripheryKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fp32" => Ok(PeripheryKind::Fp32Reference),
            "fp16" => Ok(PeripheryKind::Fp16Behavioral),
            _ => match s.strip_prefix("nmpu:") {
                Some(arch) => Ok(PeripheryKind::FixedPointNmpu(arch.parse()?)),
                None => Err(Error::Parse(format!("unknown periphery {s:?}"))),
            },
        }
    }
}

impl Serialize for PeripheryKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PeripheryKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Per-column periphery of one tile, calibrated from real affine maps of the
/// count difference.
#[derive(Clone, Debug, PartialEq)]
pub struct Periphery {
    kind: PeripheryKind,
    params: Vec<RealParams>,
    nmpu: Vec<NmpuConfig>,
}

impl Periphery {
    pub fn new(kind: PeripheryKind, columns: &[Affine], relu: bool) -> Result<Self> {
        let params: Vec<RealParams> = columns
            .iter()
            .map(|a| RealParams::new(a.scale, a.scale, a.offset, relu))
            .collect();
        let nmpu = match kind {
            PeripheryKind::FixedPointNmpu(arch) => columns
                .iter()
                .map(|a| {
                    let p = RealParams::new(
                        a.scale,
                        a.scale,
                        a.offset.clamp(OFFSET_MIN, OFFSET_MAX),
                        relu,
                    );
                    NmpuConfig::from_real(&p, arch.first_stage, arch.second_stage)
                })
                .collect::<Result<_>>()?,
            _ => Vec::new(),
        };
        Ok(Periphery { kind, params, nmpu })
    }

    pub fn kind(&self) -> PeripheryKind {
        self.kind
    }

    pub fn columns(&self) -> usize {
        self.params.len()
    }

    pub fn column_params(&self) -> &[RealParams] {
        &self.params
    }

    pub fn nmpu_configs(&self) -> &[NmpuConfig] {
        &self.nmpu
    }

    /// Post-processes one column's counts into an 8-bit output.
    pub fn apply(&self, column: usize, counts: ColumnCounts) -> Result<i8> {
        let ColumnCounts { count_p, count_n } = counts;
        match self.kind {
            PeripheryKind::FixedPointNmpu(_) => {
                Ok(self.nmpu[column].process(count_p, count_n)?.value)
            }
            PeripheryKind::Fp32Reference => {
                let y = nmpu_reference(count_p, count_n, &self.params[column]);
                Ok(saturate_i8(y.round_ties_even()))
            }
            PeripheryKind::Fp16Behavioral => {
                Ok(saturate_i8(fp16_baseline(count_p, count_n, &self.params[column])))
            }
        }
    }
}

pub fn saturate_i8(v: f64) -> i8 {
    v.clamp(i8::MIN.into(), i8::MAX.into()) as i8
}

/// Runs one tile and its periphery on an input vector.
pub fn tile_forward(
    tile: &Tile,
    x: &[u16],
    adcs: &AdcPopulation,
    periphery: &Periphery,
) -> Result<Vec<i8>> {
    if periphery.columns() != tile.cols() {
        return Err(Error::Shape(format!(
            "periphery has {} columns, tile {}",
            periphery.columns(),
            tile.cols()
        )));
    }
    mvm(tile, x, adcs)?
        .into_iter()
        .enumerate()
        .map(|(c, counts)| periphery.apply(c, counts))
        .collect()
}
