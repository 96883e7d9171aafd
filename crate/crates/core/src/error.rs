// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use crate::fixedpoint::FixedFormat;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("value {value} is not representable in {format}")]
    Range { value: f64, format: FixedFormat },

    #[error("result width {bits} bits exceeds the 64-bit limit")]
    Width { bits: u32 },

    #[error("value {value} overflows {format} after cutting {cut} MSBs")]
    Overflow {
        value: f64,
        format: FixedFormat,
        cut: u32,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("ADC {index} has a constant transfer curve; affine fit is singular")]
    SingularFit { index: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
