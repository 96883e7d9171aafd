// SPDX-License-Identifier: Apache-2.0
//! Multi-layer mapping and inference.
//!
//! Activations travel between tiles as 8-bit periphery outputs zero-extended
//! into 10-bit input codes. Network inputs in `[0, 1]` are encoded as codes
//! `0..=127`. Every layer has a real value per activation code (`in_scale`,
//! `out_scale`) and a full-scale current chosen from a calibration set, so
//! the periphery only has to map the count difference onto output codes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::toy::Dataset;
use super::{
    column_currents, program_weights, program_weights_with, tile_forward, Matrix, Periphery,
    PeripheryKind, Tile,
};
use crate::adc::{calibrate_affine, AdcPopulation};
use crate::error::{Error, Result};
use crate::nmpu::{fold_bn, Affine, BatchNorm, INPUT_MAX};

/// Largest activation code.
pub const ACTIVATION_MAX: u16 = 127;
/// Upper bound on the count-to-code gain so that ADC correction scales up
/// to 1.3 still fit the scale register.
const MAX_CODE_GAIN: f64 = 1.5;
const FULL_SCALE_COUNTS: f64 = INPUT_MAX as f64;

/// Encodes features in `[0, 1]` as activation codes.
pub fn encode_input(x: &[f64]) -> Vec<u16> {
    x.iter()
        .map(|v| {
            let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
            (v * f64::from(ACTIVATION_MAX)).round() as u16
        })
        .collect()
}

fn to_codes(y: &[i8]) -> Vec<u16> {
    y.iter().map(|&v| v.max(0) as u16).collect()
}

/// Index of the first largest output.
pub fn argmax(y: &[i8]) -> usize {
    let mut best = 0;
    for (i, v) in y.iter().enumerate() {
        if *v > y[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    /// `inputs x outputs`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub bn: Option<Vec<BatchNorm>>,
    pub relu: bool,
}

impl LayerSpec {
    pub fn new(weights: Matrix, bias: Vec<f64>, relu: bool) -> Result<Self> {
        let l = LayerSpec {
            weights,
            bias,
            bn: None,
            relu,
        };
        l.validate()?;
        Ok(l)
    }

    pub fn with_bn(mut self, bn: Vec<BatchNorm>) -> Result<Self> {
        self.bn = Some(bn);
        self.validate()?;
        Ok(self)
    }

    pub fn inputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.bias.len() != self.outputs() {
            return Err(Error::Shape(format!(
                "{} biases for {} outputs",
                self.bias.len(),
                self.outputs()
            )));
        }
        if let Some(bn) = &self.bn {
            if bn.len() != self.outputs() {
                return Err(Error::Shape(format!(
                    "{} batch-norm entries for {} outputs",
                    bn.len(),
                    self.outputs()
                )));
            }
        }
        Ok(())
    }

    /// Pre-activation followed by batch norm, in real units.
    fn pre_activation(&self, z: Vec<f64>) -> Vec<f64> {
        let z = z.into_iter().zip(&self.bias).map(|(v, b)| v + b);
        match &self.bn {
            Some(bn) => z.zip(bn).map(|(v, n)| n.apply(v)).collect(),
            None => z.collect(),
        }
    }

    /// Floating-point forward pass of this layer.
    pub fn forward_f64(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.pre_activation(self.weights.vec_mul(x));
        if self.relu {
            z.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        z
    }
}

/// A layer placed on a tile with its activation scales.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappedLayer {
    pub spec: LayerSpec,
    /// Real value of one input code.
    pub in_scale: f64,
    /// Real value of one output code.
    pub out_scale: f64,
    /// Accumulated code-conductance product mapped to current 1.
    pub full_scale: f64,
    /// Weight magnitude mapped to conductance 1.
    pub weight_scale: f64,
}

impl MappedLayer {
    /// Real value of one count of difference between the branches for an
    /// ideal converter.
    pub fn count_value(&self) -> f64 {
        self.in_scale * self.weight_scale * self.full_scale / FULL_SCALE_COUNTS
    }

    /// Output codes per count of difference.
    pub fn code_gain(&self) -> f64 {
        self.count_value() / self.out_scale
    }

    /// Per-column affine maps from the count difference to output codes,
    /// including ADC gain correction, drift compensation and batch norm.
    pub fn column_affines(&self, adc_scales: &[f64], drift_compensation: f64) -> Result<Vec<Affine>> {
        (0..self.spec.outputs())
            .map(|c| {
                let a = adc_scales[c % adc_scales.len()];
                let mut affine = Affine {
                    scale: self.count_value() * a * drift_compensation,
                    offset: self.spec.bias[c],
                };
                if let Some(bn) = &self.spec.bn {
                    affine = fold_bn(&affine, &bn[c])?;
                }
                Ok(Affine {
                    scale: affine.scale / self.out_scale,
                    offset: affine.offset / self.out_scale,
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappedNetwork {
    layers: Vec<MappedLayer>,
}

impl MappedNetwork {
    pub fn layers(&self) -> &[MappedLayer] {
        &self.layers
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].spec.inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().expect("non-empty").spec.outputs()
    }
}

fn check_chain(layers: &[LayerSpec]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::Shape("network has no layers".into()));
    }
    for l in layers {
        l.validate()?;
    }
    for (i, w) in layers.windows(2).enumerate() {
        if w[0].outputs() != w[1].inputs() {
            return Err(Error::Shape(format!(
                "layer {i} has {} outputs but layer {} takes {}",
                w[0].outputs(),
                i + 1,
                w[1].inputs()
            )));
        }
    }
    Ok(())
}

/// Places each layer on a tile. The full-scale current is the largest column
/// current and the output scale maps the largest activation to code 127,
/// both over the calibration inputs.
pub fn map_network(layers: Vec<LayerSpec>, calibration: &[Vec<f64>]) -> Result<MappedNetwork> {
    check_chain(&layers)?;
    if calibration.is_empty() {
        return Err(Error::Shape("empty calibration set".into()));
    }
    if calibration.iter().any(|x| x.len() != layers[0].inputs()) {
        return Err(Error::Shape("calibration vector length mismatch".into()));
    }
    let mut codes: Vec<Vec<u16>> = calibration.iter().map(|x| encode_input(x)).collect();
    let mut in_scale = 1.0 / f64::from(ACTIVATION_MAX);
    let mut mapped = Vec::with_capacity(layers.len());
    for spec in layers {
        let tile = program_weights(&spec.weights, 0.0, 0)?.with_full_scale(1.0)?;
        let currents: Vec<Vec<(f64, f64)>> = codes
            .iter()
            .map(|a| column_currents(&tile, a))
            .collect::<Result<_>>()?;
        let full_scale = currents
            .iter()
            .flatten()
            .fold(0.0f64, |m, (p, n)| m.max(*p).max(*n));
        let full_scale = if full_scale > 0.0 { full_scale } else { 1.0 };
        let weight_scale = tile.weight_scale();
        let peak = currents
            .iter()
            .flat_map(|col| {
                let z: Vec<f64> = col
                    .iter()
                    .map(|(p, n)| in_scale * weight_scale * (p - n))
                    .collect();
                spec.pre_activation(z)
            })
            .fold(0.0f64, |m, v| m.max(if spec.relu { v } else { v.abs() }));
        let peak = if peak > 0.0 { peak } else { 1.0 };
        let mut layer = MappedLayer {
            spec,
            in_scale,
            out_scale: peak / f64::from(ACTIVATION_MAX),
            full_scale,
            weight_scale,
        };
        if layer.code_gain() > MAX_CODE_GAIN {
            layer.out_scale = layer.count_value() / MAX_CODE_GAIN;
        }
        codes = codes
            .iter()
            .map(|a| reference_layer(&layer, a).map(|y| to_codes(&y)))
            .collect::<Result<_>>()?;
        in_scale = layer.out_scale;
        mapped.push(layer);
    }
    Ok(MappedNetwork { layers: mapped })
}

fn reference_layer(layer: &MappedLayer, a: &[u16]) -> Result<Vec<i8>> {
    let w = &layer.spec.weights;
    let mut acc = vec![(0.0f64, 0.0f64); w.cols()];
    for (r, &ar) in a.iter().enumerate() {
        if ar == 0 {
            continue;
        }
        let ar = f64::from(ar);
        for (c, acc) in acc.iter_mut().enumerate() {
            let g = w.get(r, c) / layer.weight_scale;
            if g >= 0.0 {
                acc.0 += ar * g;
                acc.1 += ar * 0.0;
            } else {
                acc.0 += ar * 0.0;
                acc.1 += ar * -g;
            }
        }
    }
    let count = |i: f64| ((i * 1.0 / layer.full_scale).clamp(0.0, 1.0) * FULL_SCALE_COUNTS).round();
    let affines = layer.column_affines(&[1.0], 1.0)?;
    Ok(acc
        .iter()
        .zip(&affines)
        .map(|((p, n), f)| {
            let mut y = count(*p) * f.scale - count(*n) * f.scale + f.offset;
            if layer.spec.relu {
                y = y.max(0.0);
            }
            super::saturate_i8(y.round_ties_even())
        })
        .collect())
}

/// Integer forward pass with noiseless weights, ideal converters and the
/// real-valued periphery.
pub fn reference_forward(net: &MappedNetwork, x: &[f64]) -> Result<Vec<i8>> {
    let mut a = encode_input(x);
    let mut y = Vec::new();
    for layer in &net.layers {
        y = reference_layer(layer, &a)?;
        a = to_codes(&y);
    }
    Ok(y)
}

/// Analog nonidealities of one simulated chip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hardware {
    pub adcs: AdcPopulation,
    pub noise_sigma: f64,
    pub drift_factor: f64,
    pub compensate_drift: bool,
}

impl Hardware {
    /// Noiseless tiles with identical ideal converters.
    pub fn ideal() -> Self {
        Hardware {
            adcs: AdcPopulation::linear(2, 256),
            noise_sigma: 0.0,
            drift_factor: 1.0,
            compensate_drift: true,
        }
    }

    pub fn with_noise(mut self, noise_sigma: f64) -> Self {
        self.noise_sigma = noise_sigma;
        self
    }

    /// Gain correction of every ADC onto the population mean curve.
    pub fn adc_scales(&self) -> Result<Vec<f64>> {
        if self.adcs.len() < 2 {
            return Ok(vec![1.0; self.adcs.len().max(1)]);
        }
        Ok(calibrate_affine(&self.adcs)?
            .iter()
            .map(|p| p.scale_aff)
            .collect())
    }
}

/// Tiles programmed for one repetition plus their peripheries.
#[derive(Clone, Debug)]
pub struct ProgrammedNetwork {
    tiles: Vec<Tile>,
    peripheries: Vec<Periphery>,
    adcs: AdcPopulation,
}

impl ProgrammedNetwork {
    /// Programs every layer with noise drawn from stream `(rep, layer)` of
    /// `seed`.
    pub fn new(
        net: &MappedNetwork,
        hw: &Hardware,
        kind: PeripheryKind,
        seed: u64,
        rep: u32,
    ) -> Result<Self> {
        let adc_scales = hw.adc_scales()?;
        let compensation = if hw.compensate_drift {
            1.0 / hw.drift_factor
        } else {
            1.0
        };
        let mut tiles = Vec::with_capacity(net.layers.len());
        let mut peripheries = Vec::with_capacity(net.layers.len());
        for (i, layer) in net.layers.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((u64::from(rep) << 32) | i as u64);
            let tile = program_weights_with(&layer.spec.weights, hw.noise_sigma, &mut rng)?
                .with_full_scale(layer.full_scale)?
                .with_drift(hw.drift_factor)?;
            let affines = layer.column_affines(&adc_scales, compensation)?;
            peripheries.push(Periphery::new(kind, &affines, layer.spec.relu)?);
            tiles.push(tile);
        }
        Ok(ProgrammedNetwork {
            tiles,
            peripheries,
            adcs: hw.adcs.clone(),
        })
    }

    pub fn tiles(&self) -> &[Tile] {
        &self.tiles
    }

    pub fn peripheries(&self) -> &[Periphery] {
        &self.peripheries
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<i8>> {
        let mut a = encode_input(x);
        let mut y = Vec::new();
        for (tile, periphery) in self.tiles.iter().zip(&self.peripheries) {
            y = tile_forward(tile, &a, &self.adcs, periphery)?;
            a = to_codes(&y);
        }
        Ok(y)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    /// Fraction of correctly classified samples.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Shape("empty dataset".into()));
        }
        if data.dim() != self.tiles[0].rows() {
            return Err(Error::Shape(format!(
                "dataset has {} features, network takes {}",
                data.dim(),
                self.tiles[0].rows()
            )));
        }
        let hits: Vec<bool> = data
            .features
            .par_iter()
            .zip(&data.labels)
            .map(|(x, &label)| self.predict(x).map(|p| p == label))
            .collect::<Result<_>>()?;
        Ok(hits.iter().filter(|&&h| h).count() as f64 / data.len() as f64)
    }
}

/// Accuracy of one seeded repetition.
pub fn run_network(
    net: &MappedNetwork,
    data: &Dataset,
    hw: &Hardware,
    kind: PeripheryKind,
    seed: u64,
    rep: u32,
) -> Result<f64> {
    ProgrammedNetwork::new(net, hw, kind, seed, rep)?.accuracy(data)
}
