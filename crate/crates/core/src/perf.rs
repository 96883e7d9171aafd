// SPDX-License-Identifier: Apache-2.0
//! Analytical latency and area model for post-processing one tile readout.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Columns of one crossbar tile.
pub const TILE_COLUMNS: u64 = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    /// `units` copies each handle `columns_per_unit` outputs one after another.
    ParallelMultiplexed,
    /// One pipeline accepts a new output every issue interval.
    SerialPipelined,
}

impl fmt::Display for ExecMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExecMode::ParallelMultiplexed => "parallel",
            ExecMode::SerialPipelined => "serial",
        })
    }
}

impl FromStr for ExecMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parallel" | "parallel_multiplexed" => Ok(ExecMode::ParallelMultiplexed),
            "serial" | "serial_pipelined" => Ok(ExecMode::SerialPipelined),
            _ => Err(Error::Parse(format!("unknown execution mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerfSpec {
    pub name: String,
    pub area_kge: f64,
    pub unit_latency_ns: f64,
    pub init_latency_ns: f64,
    pub issue_interval_ns: f64,
    pub units: u64,
    pub columns_per_unit: u64,
    pub mode: ExecMode,
    pub power_mw_ss: Option<f64>,
    pub power_mw_ff: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_note: Option<String>,
}

impl PerfSpec {
    pub fn validate(&self) -> Result<()> {
        let reals = [
            self.area_kge,
            self.unit_latency_ns,
            self.init_latency_ns,
            self.issue_interval_ns,
        ];
        if reals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Parameter(format!(
                "{}: areas and latencies must be finite and non-negative",
                self.name
            )));
        }
        if self.units == 0 {
            return Err(Error::Parameter(format!("{}: units must be at least 1", self.name)));
        }
        for p in [self.power_mw_ss, self.power_mw_ff].into_iter().flatten() {
            if !(p >= 0.0) {
                return Err(Error::Parameter(format!("{}: negative power", self.name)));
            }
        }
        Ok(())
    }

    /// Whether the units together serve every column of a tile.
    pub fn covers_tile(&self) -> bool {
        self.units * self.columns_per_unit >= TILE_COLUMNS
    }

    /// Built-in specs: `archA`, `archA_x64` and `fp16_ref`.
    pub fn builtin(name: &str) -> Result<PerfSpec> {
        let nmpu = |name: &str, units: u64, ss: f64, ff: f64| PerfSpec {
            name: name.into(),
            area_kge: 3.3,
            unit_latency_ns: 1.0,
            init_latency_ns: 0.0,
            issue_interval_ns: 0.0,
            units,
            columns_per_unit: TILE_COLUMNS / units,
            mode: ExecMode::ParallelMultiplexed,
            power_mw_ss: Some(ss),
            power_mw_ff: Some(ff),
            power_note: None,
        };
        match name {
            "archA" => Ok(nmpu("archA", 1, 0.383, 0.524)),
            "archA_x64" => Ok(nmpu("archA_x64", 64, 24.5, 33.5)),
            "fp16_ref" => Ok(PerfSpec {
                name: "fp16_ref".into(),
                area_kge: 1666.0,
                unit_latency_ns: 46.0,
                init_latency_ns: 46.0,
                issue_interval_ns: 2.0,
                units: 1,
                columns_per_unit: TILE_COLUMNS,
                mode: ExecMode::SerialPipelined,
                power_mw_ss: Some(27.0),
                power_mw_ff: Some(27.0),
                power_note: Some("post-layout=32".into()),
            }),
            _ => Err(Error::Parameter(format!("unknown perf spec {name:?}"))),
        }
    }

    pub const BUILTIN_NAMES: [&'static str; 3] = ["archA", "archA_x64", "fp16_ref"];
}

/// Latency in ns to produce `n_outputs` results.
pub fn total_latency(spec: &PerfSpec, n_outputs: u64, mode: ExecMode) -> Result<f64> {
    spec.validate()?;
    if n_outputs == 0 {
        return Err(Error::Parameter("n_outputs must be at least 1".into()));
    }
    Ok(match mode {
        ExecMode::ParallelMultiplexed => n_outputs.div_ceil(spec.units) as f64 * spec.unit_latency_ns,
        ExecMode::SerialPipelined => spec.init_latency_ns + n_outputs as f64 * spec.issue_interval_ns,
    })
}

/// Total area of all replicated units in kGE.
pub fn area_total(spec: &PerfSpec) -> f64 {
    spec.area_kge * spec.units as f64
}

/// Area as it would be printed in a table: integers from 100 kGE up, one
/// decimal below.
pub fn area_reported(area: f64) -> f64 {
    if area >= 100.0 {
        area.round()
    } else {
        (area * 10.0).round() / 10.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerfRow {
    pub name: String,
    pub area_kge: f64,
    pub area_reported: f64,
    pub latency_ns: f64,
    pub total_latency_ns: f64,
    pub power_mw_ss: Option<f64>,
    pub power_mw_ff: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power_note: Option<String>,
}

impl PerfRow {
    pub fn new(spec: &PerfSpec, n_outputs: u64) -> Result<Self> {
        let area = area_total(spec);
        Ok(PerfRow {
            name: spec.name.clone(),
            area_kge: area,
            area_reported: area_reported(area),
            latency_ns: spec.unit_latency_ns,
            total_latency_ns: total_latency(spec, n_outputs, spec.mode)?,
            power_mw_ss: spec.power_mw_ss,
            power_mw_ff: spec.power_mw_ff,
            power_note: spec.power_note.clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub n_outputs: u64,
    /// Latency of `b` over latency of `a`.
    pub speedup: f64,
    /// Area of `b` over area of `a`.
    pub area_ratio: f64,
}

/// Compares `a` against `b`, each in its own execution mode.
pub fn compare(a: &PerfSpec, b: &PerfSpec, n_outputs: u64) -> Result<Comparison> {
    let la = total_latency(a, n_outputs, a.mode)?;
    let lb = total_latency(b, n_outputs, b.mode)?;
    let aa = area_total(a);
    if la == 0.0 || aa == 0.0 {
        return Err(Error::Domain(format!("{} has zero latency or area", a.name)));
    }
    Ok(Comparison {
        a: a.name.clone(),
        b: b.name.clone(),
        n_outputs,
        speedup: lb / la,
        area_ratio: area_total(b) / aa,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub rows: Vec<PerfRow>,
    pub comparisons: Vec<Comparison>,
}

/// Table rows for every built-in spec and the comparisons against the FP16
/// reference.
pub fn builtin_report(n_outputs: u64) -> Result<PerfReport> {
    let specs: Vec<PerfSpec> = PerfSpec::BUILTIN_NAMES
        .iter()
        .map(|n| PerfSpec::builtin(n))
        .collect::<Result<_>>()?;
    let rows = specs
        .iter()
        .map(|s| PerfRow::new(s, n_outputs))
        .collect::<Result<_>>()?;
    let fp16 = &specs[2];
    let comparisons = specs[..2]
        .iter()
        .map(|s| compare(s, fp16, n_outputs))
        .collect::<Result<_>>()?;
    Ok(PerfReport { rows, comparisons })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(name: &str) -> PerfSpec {
        PerfSpec::builtin(name).unwrap()
    }

    #[test]
    fn table_cells() {
        let r = builtin_report(256).unwrap();
        let cells: Vec<(f64, f64, f64)> = r
            .rows
            .iter()
            .map(|r| (r.area_reported, r.latency_ns, r.total_latency_ns))
            .collect();
        assert_eq!(
            cells,
            vec![(3.3, 1.0, 256.0), (211.0, 1.0, 4.0), (1666.0, 46.0, 558.0)]
        );
        assert!((r.rows[1].area_kge - 211.2).abs() < 1e-9);
    }

    #[test]
    fn headline_ratios() {
        let c = compare(&spec("archA_x64"), &spec("fp16_ref"), 256).unwrap();
        assert_eq!(c.speedup, 139.5);
        assert!((c.area_ratio - 1666.0 / 211.2).abs() < 1e-12);
        let single = area_total(&spec("fp16_ref")) / area_total(&spec("archA"));
        assert!((single - 504.85).abs() < 0.01);
    }

    #[test]
    fn self_compare_is_unity() {
        for n in PerfSpec::BUILTIN_NAMES {
            let c = compare(&spec(n), &spec(n), 100).unwrap();
            assert_eq!((c.speedup, c.area_ratio), (1.0, 1.0));
        }
    }

    #[test]
    fn doubling_units_halves_latency() {
        let a = spec("archA_x64");
        let mut b = a.clone();
        b.units = 128;
        let la = total_latency(&a, 256, ExecMode::ParallelMultiplexed).unwrap();
        let lb = total_latency(&b, 256, ExecMode::ParallelMultiplexed).unwrap();
        assert_eq!(la / lb, 2.0);
    }

    #[test]
    fn single_output_is_unit_latency() {
        let s = spec("archA");
        assert_eq!(total_latency(&s, 1, ExecMode::ParallelMultiplexed).unwrap(), 1.0);
        assert!(total_latency(&s, 0, ExecMode::ParallelMultiplexed).is_err());
    }

    #[test]
    fn validation_and_coverage() {
        let mut s = spec("archA");
        assert!(s.covers_tile());
        s.units = 0;
        assert!(s.validate().is_err());
        let mut s = spec("archA");
        s.area_kge = -1.0;
        assert!(s.validate().is_err());
        assert!(PerfSpec::builtin("nope").is_err());
    }

    #[test]
    fn reported_rounding() {
        assert_eq!(area_reported(211.2), 211.0);
        assert_eq!(area_reported(3.3), 3.3);
        assert_eq!(area_reported(3.34), 3.3);
    }
}
