// SPDX-License-Identifier: Apache-2.0
//! Bit-accurate simulator and design-space explorer for a fixed-point
//! near-memory processing unit that post-processes the ADC outputs of analog
//! in-memory-computing tiles.

pub mod adc;
pub mod aimc;
pub mod cli;
pub mod dse;
pub mod error;
pub mod fp16;
pub mod fixedpoint;
pub mod nmpu;
pub mod perf;

pub use error::{Error, Result};
