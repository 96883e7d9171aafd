// SPDX-License-Identifier: Apache-2.0
//! Portable tensor container: named `f64` arrays with shapes.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   b"NMPT"
//! version u32 = 1
//! count   u32
//! count x { name_len u32, name utf-8, ndim u32, dims u64 x ndim, data f64 x prod(dims) }
//! ```
//!
//! Networks use the names `layer{i}.weight` (inputs x outputs),
//! `layer{i}.bias`, `layer{i}.relu` (scalar 0 or 1) and optionally
//! `layer{i}.bn` (4 x outputs: gamma, beta, mean, var) with `layer{i}.bn_eps`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::network::LayerSpec;
use super::Matrix;
use crate::error::{Error, Result};
use crate::nmpu::BatchNorm;

pub const MAGIC: &[u8; 4] = b"NMPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!("{} values for shape {shape:?}", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }
}

/// Tensors keyed by name, written in name order.
pub type TensorMap = BTreeMap<String, Tensor>;

pub fn write_tensors<W: Write>(tensors: &TensorMap, mut out: W) -> Result<()> {
    let io = |e| Error::io("<tensor stream>", e);
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf).map_err(io)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Parse("truncated tensor file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_tensors<R: Read>(mut input: R) -> Result<TensorMap> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<tensor stream>", e))?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Parse("not a tensor file".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported tensor file version {version}")));
    }
    let count = c.u32()?;
    let mut map = TensorMap::new();
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::Parse("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = c.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| c.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Parse(format!("tensor {name} is too large")))?;
        let raw = c.take(n.checked_mul(8).ok_or_else(|| Error::Parse("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        map.insert(name, Tensor { shape, data });
    }
    if c.pos != bytes.len() {
        return Err(Error::Parse("trailing bytes after tensors".into()));
    }
    Ok(map)
}

pub fn network_to_tensors(layers: &[LayerSpec]) -> TensorMap {
    let mut map = TensorMap::new();
    for (i, l) in layers.iter().enumerate() {
        let w = &l.weights;
        map.insert(
            format!("layer{i}.weight"),
            Tensor {
                shape: vec![w.rows(), w.cols()],
                data: w.data().to_vec(),
            },
        );
        map.insert(
            format!("layer{i}.bias"),
            Tensor {
                shape: vec![l.bias.len()],
                data: l.bias.clone(),
            },
        );
        map.insert(format!("layer{i}.relu"), Tensor::scalar(f64::from(u8::from(l.relu))));
        if let Some(bn) = &l.bn {
            let mut data = Vec::with_capacity(4 * bn.len());
            data.extend(bn.iter().map(|b| b.gamma));
            data.extend(bn.iter().map(|b| b.beta));
            data.extend(bn.iter().map(|b| b.mean));
            data.extend(bn.iter().map(|b| b.var));
            map.insert(
                format!("layer{i}.bn"),
                Tensor {
                    shape: vec![4, bn.len()],
                    data,
                },
            );
            let eps = bn.first().map(|b| b.eps).unwrap_or(0.0);
            map.insert(format!("layer{i}.bn_eps"), Tensor::scalar(eps));
        }
    }
    map
}

pub fn network_from_tensors(map: &TensorMap) -> Result<Vec<LayerSpec>> {
    let get = |name: &str| {
        map.get(name)
            .ok_or_else(|| Error::Parse(format!("missing tensor {name}")))
    };
    let mut layers = Vec::new();
    let mut i = 0;
    while map.contains_key(&format!("layer{i}.weight")) {
        let w = get(&format!("layer{i}.weight"))?;
        if w.shape.len() != 2 {
            return Err(Error::Shape(format!("layer{i}.weight must be 2-D")));
        }
        let weights = Matrix::new(w.shape[0], w.shape[1], w.data.clone())?;
        let bias = get(&format!("layer{i}.bias"))?.data.clone();
        let relu = get(&format!("layer{i}.relu"))?.data.first().copied().unwrap_or(0.0) != 0.0;
        let mut layer = LayerSpec::new(weights, bias, relu)?;
        if let Some(bn) = map.get(&format!("layer{i}.bn")) {
            let n = layer.outputs();
            if bn.shape != [4, n] {
                return Err(Error::Shape(format!("layer{i}.bn must be 4x{n}")));
            }
            let eps = get(&format!("layer{i}.bn_eps"))?.data[0];
            let d = &bn.data;
            let params = (0..n)
                .map(|c| BatchNorm {
                    gamma: d[c],
                    beta: d[n + c],
                    mean: d[2 * n + c],
                    var: d[3 * n + c],
                    eps,
                })
                .collect();
            layer = layer.with_bn(params)?;
        }
        layers.push(layer);
        i += 1;
    }
    if layers.is_empty() {
        return Err(Error::Parse("no layer0.weight tensor".into()));
    }
    Ok(layers)
}
