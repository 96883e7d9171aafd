// SPDX-License-Identifier: Apache-2.0
//! Bundled synthetic classification task and a minimal MLP trainer.
//!
//! Samples are noisy copies of per-class prototype vectors in `[0, 1]`. The
//! trainer is plain minibatch SGD on softmax cross-entropy in `f64` with a
//! seeded shuffle, so the trained weights are reproducible bit for bit.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::network::LayerSpec;
use super::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows for {} labels",
                features.len(),
                labels.len()
            )));
        }
        if let Some(first) = features.first() {
            if features.iter().any(|f| f.len() != first.len()) {
                return Err(Error::Shape("ragged feature rows".into()));
            }
        }
        Ok(Dataset { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map(Vec::len).unwrap_or(0)
    }

    pub fn classes(&self) -> usize {
        self.labels.iter().max().map(|m| m + 1).unwrap_or(0)
    }

    /// CSV with columns `f0..f{dim-1},label`.
    pub fn to_csv(&self) -> String {
        let mut out: Vec<String> = (0..self.dim()).map(|i| format!("f{i}")).collect();
        out.push("label".into());
        let mut text = out.join(",");
        text.push('\n');
        for (f, l) in self.features.iter().zip(&self.labels) {
            for v in f {
                text.push_str(&format!("{v},"));
            }
            text.push_str(&format!("{l}\n"));
        }
        text
    }

    /// Parses CSV written by [`Dataset::to_csv`]. A header row is optional.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (n == 0 && line.starts_with(|c: char| c.is_ascii_alphabetic())) {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let (label, feats) = fields.split_last().expect("split yields one field");
            let parse_err = |what: &str| Error::Parse(format!("line {}: bad {what}", n + 1));
            labels.push(label.parse().map_err(|_| parse_err("label"))?);
            features.push(
                feats
                    .iter()
                    .map(|v| v.parse::<f64>().map_err(|_| parse_err("feature")))
                    .collect::<Result<_>>()?,
            );
        }
        Dataset::new(features, labels)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    pub classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Per-feature standard deviation of samples around their prototype.
    pub sample_noise: f64,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            classes: 10,
            dim: 64,
            train_per_class: 200,
            test_per_class: 100,
            sample_noise: 0.32,
            seed: 2024,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyTask {
    pub train: Dataset,
    pub test: Dataset,
}

/// Prototypes are uniform in `[0.2, 0.8]`; samples add Gaussian noise and
/// clamp to `[0, 1]`. Train and test sets are interleaved by class.
pub fn toy_task(spec: &ToySpec) -> Result<ToyTask> {
    if spec.classes < 2 || spec.dim == 0 || spec.train_per_class == 0 || spec.test_per_class == 0 {
        return Err(Error::Parameter("toy task needs 2+ classes and non-empty splits".into()));
    }
    let noise = Normal::new(0.0, spec.sample_noise)
        .map_err(|e| Error::Parameter(format!("sample noise: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let prototypes: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| (0..spec.dim).map(|_| rng.random_range(0.2..0.8)).collect())
        .collect();
    let mut draw = |per_class: usize| {
        let mut features = Vec::with_capacity(per_class * spec.classes);
        let mut labels = Vec::with_capacity(per_class * spec.classes);
        for _ in 0..per_class {
            for (k, p) in prototypes.iter().enumerate() {
                features.push(
                    p.iter()
                        .map(|v| (v + noise.sample(&mut rng)).clamp(0.0, 1.0))
                        .collect(),
                );
                labels.push(k);
            }
        }
        Dataset { features, labels }
    };
    let train = draw(spec.train_per_class);
    let test = draw(spec.test_per_class);
    Ok(ToyTask { train, test })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![32, 32],
            epochs: 30,
            batch: 16,
            learning_rate: 0.05,
            seed: 7,
        }
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Trains a ReLU MLP with a linear output layer.
pub fn train_mlp(data: &Dataset, cfg: &TrainConfig) -> Result<Vec<LayerSpec>> {
    if data.is_empty() {
        return Err(Error::Shape("empty training set".into()));
    }
    if cfg.batch == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::Parameter("batch and learning rate must be positive".into()));
    }
    let mut dims = vec![data.dim()];
    dims.extend(&cfg.hidden);
    dims.push(data.classes());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // weights[l] is dims[l] x dims[l+1], row-major
    let mut weights: Vec<Vec<f64>> = dims
        .windows(2)
        .map(|d| {
            let init = Normal::new(0.0, (2.0 / d[0] as f64).sqrt()).expect("positive");
            (0..d[0] * d[1]).map(|_| init.sample(&mut rng)).collect()
        })
        .collect();
    let mut biases: Vec<Vec<f64>> = dims[1..].iter().map(|&n| vec![0.0; n]).collect();
    let layers = weights.len();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            let mut gw: Vec<Vec<f64>> = weights.iter().map(|w| vec![0.0; w.len()]).collect();
            let mut gb: Vec<Vec<f64>> = biases.iter().map(|b| vec![0.0; b.len()]).collect();
            for &idx in chunk {
                let mut acts = vec![data.features[idx].clone()];
                for l in 0..layers {
                    let (nin, nout) = (dims[l], dims[l + 1]);
                    let x = &acts[l];
                    let mut z = biases[l].clone();
                    for r in 0..nin {
                        if x[r] == 0.0 {
                            continue;
                        }
                        for c in 0..nout {
                            z[c] += x[r] * weights[l][r * nout + c];
                        }
                    }
                    if l + 1 < layers {
                        z.iter_mut().for_each(|v| *v = v.max(0.0));
                    }
                    acts.push(z);
                }
                let mut delta = softmax(&acts[layers]);
                delta[data.labels[idx]] -= 1.0;
                for l in (0..layers).rev() {
                    let (nin, nout) = (dims[l], dims[l + 1]);
                    let x = &acts[l];
                    for c in 0..nout {
                        gb[l][c] += delta[c];
                    }
                    for r in 0..nin {
                        if x[r] == 0.0 {
                            continue;
                        }
                        for c in 0..nout {
                            gw[l][r * nout + c] += x[r] * delta[c];
                        }
                    }
                    if l > 0 {
                        let mut prev = vec![0.0; nin];
                        for (r, p) in prev.iter_mut().enumerate() {
                            if x[r] > 0.0 {
                                *p = (0..nout).map(|c| weights[l][r * nout + c] * delta[c]).sum();
                            }
                        }
                        delta = prev;
                    }
                }
            }
            let step = cfg.learning_rate / chunk.len() as f64;
            for l in 0..layers {
                weights[l].iter_mut().zip(&gw[l]).for_each(|(w, g)| *w -= step * g);
                biases[l].iter_mut().zip(&gb[l]).for_each(|(b, g)| *b -= step * g);
            }
        }
    }
    weights
        .into_iter()
        .zip(biases)
        .enumerate()
        .map(|(l, (w, b))| {
            LayerSpec::new(Matrix::new(dims[l], dims[l + 1], w)?, b, l + 1 < layers)
        })
        .collect()
}

/// Floating-point forward pass of a layer stack.
pub fn forward_f64(layers: &[LayerSpec], x: &[f64]) -> Vec<f64> {
    layers
        .iter()
        .fold(x.to_vec(), |a, layer| layer.forward_f64(&a))
}

/// Accuracy of the floating-point network.
pub fn software_accuracy(layers: &[LayerSpec], data: &Dataset) -> f64 {
    let hits = data
        .features
        .iter()
        .zip(&data.labels)
        .filter(|(x, &label)| {
            let y = forward_f64(layers, x);
            let best = (0..y.len()).fold(0, |b, i| if y[i] > y[b] { i } else { b });
            best == label
        })
        .count();
    hits as f64 / data.len().max(1) as f64
}

/// The bundled task together with its trained network.
pub fn toy_network(spec: &ToySpec, cfg: &TrainConfig) -> Result<(ToyTask, Vec<LayerSpec>)> {
    let task = toy_task(spec)?;
    let layers = train_mlp(&task.train, cfg)?;
    Ok((task, layers))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ToySpec {
        ToySpec {
            classes: 4,
            dim: 8,
            train_per_class: 30,
            test_per_class: 10,
            sample_noise: 0.1,
            seed: 1,
        }
    }

    #[test]
    fn task_shape_and_determinism() {
        let a = toy_task(&small()).unwrap();
        assert_eq!(a.train.len(), 120);
        assert_eq!(a.test.len(), 40);
        assert_eq!(a.train.dim(), 8);
        assert_eq!(a.train.classes(), 4);
        assert_eq!(a, toy_task(&small()).unwrap());
        assert!(a.train.features.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn csv_round_trip() {
        let t = toy_task(&small()).unwrap();
        let back = Dataset::from_csv(&t.test.to_csv()).unwrap();
        assert_eq!(back, t.test);
        assert!(Dataset::from_csv("f0,label\n0.5,x\n").is_err());
    }

    #[test]
    fn trainer_learns_easy_task() {
        let t = toy_task(&small()).unwrap();
        let cfg = TrainConfig {
            hidden: vec![8],
            epochs: 20,
            ..TrainConfig::default()
        };
        let layers = train_mlp(&t.train, &cfg).unwrap();
        assert_eq!(layers.len(), 2);
        assert!(layers[0].relu && !layers[1].relu);
        let acc = software_accuracy(&layers, &t.test);
        assert!(acc > 0.9, "{acc}");
        assert_eq!(layers, train_mlp(&t.train, &cfg).unwrap());
    }
}
