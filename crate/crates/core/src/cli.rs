// SPDX-License-Identifier: Apache-2.0
//! Command-line front end.
//!
//! Every run writes `manifest.json` into the output directory with the fully
//! resolved configuration. Passing that file back through `--config`
//! reproduces the run. Exit codes: 0 success, 1 runtime failure, 2 invalid
//! configuration or usage.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::adc::{calibrate_affine, calibration_json, compute_cv, AdcPopulation, PopulationSpec};
use crate::aimc::tensor::{network_from_tensors, network_to_tensors, read_tensors, write_tensors};
use crate::aimc::toy::{software_accuracy, toy_network, Dataset, ToySpec, TrainConfig};
use crate::aimc::{
    map_network, network_argmax, reference_forward, run_network, Hardware, PeripheryKind,
};
use crate::dse::{
    default_best, exhaustive_counts, explore, gain_sweep, histogram_csv, uniform_grid_samples,
    Architecture, BaselineMode, CfgDraw, Stimulus, StimulusSpec,
};
use crate::error::Error;
use crate::fixedpoint::FixedFormat;
use crate::nmpu::{write_vectors, NmpuConfig, INPUT_MAX};
use crate::perf::{builtin_report, compare, PerfRow, PerfSpec};

pub const THREADS_ENV: &str = "NMPU_SIM_THREADS";
pub const MANIFEST: &str = "manifest.json";

#[derive(Parser, Debug)]
#[command(name = "nmpu-sim", version, about = "Fixed-point NMPU simulator and design-space explorer")]
struct Cli {
    /// JSON or key=value file whose entries override the flags, except an
    /// explicit --out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory [default: out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress the stdout summary.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub out: PathBuf,
    #[serde(flatten)]
    pub command: Command,
}

#[derive(Subcommand, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// Error statistics of the 15 rounding architectures.
    Explore(ExploreArgs),
    /// Synthetic ADC population, affine calibration and CV study.
    Adc(AdcArgs),
    /// Toy network inference with different peripheries.
    Simulate(SimulateArgs),
    /// Latency and area model.
    Perf(PerfArgs),
    /// Test-vector files for one datapath configuration.
    Vectors(VectorsArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Explore(_) => "explore",
            Command::Adc(_) => "adc",
            Command::Simulate(_) => "simulate",
            Command::Perf(_) => "perf",
            Command::Vectors(_) => "vectors",
        }
    }
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploreArgs {
    /// Number of stimulus samples.
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Input gain applied to the Gaussian draws.
    #[arg(long, default_value_t = 256.0)]
    pub gain: f64,
    #[arg(long, default_value_t = 3)]
    pub shift: u32,
    #[arg(long, default_value_t = 8.0)]
    pub offset_max: f64,
    /// Architectures to evaluate, e.g. M5-S1 (default all 15).
    #[arg(long, value_delimiter = ',')]
    pub arch: Vec<String>,
    /// int8 or real.
    #[arg(long, default_value = "int8")]
    pub baseline: String,
    /// Gains for the sensitivity sweep; empty disables it.
    #[arg(long, value_delimiter = ',', default_value = "128,256,512")]
    pub sweep_gains: Vec<f64>,
    /// Also count errors over the full 1024x1024 grid for one fixed config.
    #[arg(long)]
    pub exhaustive: bool,
    /// Register-level scales and offset of the exhaustive config.
    #[arg(long, default_value_t = 1.0)]
    pub scale_p: f64,
    #[arg(long, default_value_t = 1.0)]
    pub scale_n: f64,
    #[arg(long, default_value_t = 0.0)]
    pub offset: f64,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub relu: bool,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdcArgs {
    /// Number of ADCs.
    #[arg(long, default_value_t = 256)]
    pub n: usize,
    /// Target coefficient of variation of the per-ADC gain.
    #[arg(long, default_value_t = 0.07)]
    pub cv: f64,
    #[arg(long, default_value_t = 0.3)]
    pub nonlinearity: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = crate::adc::DEFAULT_LEVELS)]
    pub levels: usize,
    #[arg(long, default_value_t = crate::adc::OFFSET_JITTER_STD)]
    pub offset_std: f64,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// Comma-separated list of fp32, fp16, nmpu:<arch> or nmpu:best.
    #[arg(long, value_delimiter = ',', default_value = "fp32,fp16,nmpu:best")]
    pub peripheries: Vec<String>,
    #[arg(long, default_value_t = 10)]
    pub reps: u32,
    /// Multiplicative conductance noise.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 1.0)]
    pub drift: f64,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub compensate_drift: bool,
    /// synthetic or linear.
    #[arg(long, default_value = "synthetic")]
    pub adc: String,
    #[arg(long, default_value_t = 0.07)]
    pub adc_cv: f64,
    #[arg(long, default_value_t = 0.3)]
    pub adc_nonlinearity: f64,
    #[arg(long, default_value_t = 7)]
    pub adc_seed: u64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Tensor container with layer weights (default: train the toy network).
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Evaluation CSV (features..., label); also used for calibration.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 2024)]
    pub toy_seed: u64,
    #[arg(long, default_value_t = 0.32)]
    pub sample_noise: f64,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerfArgs {
    /// Built-in specs to tabulate (default all).
    #[arg(long, value_delimiter = ',')]
    pub spec: Vec<String>,
    /// Two spec names: the faster design, then the reference.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    pub compare: Vec<String>,
    #[arg(long, default_value_t = 256)]
    pub n_outputs: u64,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorsArgs {
    #[arg(long, default_value = "M5-S1")]
    pub arch: String,
    #[arg(long, default_value_t = 128)]
    pub scale_p_raw: u8,
    #[arg(long, default_value_t = 128)]
    pub scale_n_raw: u8,
    #[arg(long, default_value_t = 3)]
    pub shift: u32,
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    pub offset_raw: i8,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub relu: bool,
    /// Every input pair instead of random samples.
    #[arg(long)]
    pub exhaustive: bool,
    #[arg(long, default_value_t = 4096)]
    pub samples: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum Failure {
    Config(Error),
    Runtime(Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn config_err(msg: impl Into<String>) -> Failure {
    Failure::Config(Error::Config(msg.into()))
}

trait ConfigContext<T> {
    fn config(self) -> Result<T, Failure>;
}

impl<T> ConfigContext<T> for crate::Result<T> {
    fn config(self) -> Result<T, Failure> {
        self.map_err(Failure::Config)
    }
}

/// Writes `bytes` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> crate::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> crate::Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Parses a `key=value` file. Values are read as JSON where possible and as
/// strings otherwise; `#` starts a comment line.
fn parse_kv(text: &str) -> Result<Map<String, Value>, Failure> {
    let mut map = Map::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| config_err(format!("config line {}: expected key=value", i + 1)))?;
        let v = v.trim();
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        map.insert(k.trim().replace('-', "_"), value);
    }
    Ok(map)
}

fn load_config_file(path: &Path) -> Result<Map<String, Value>, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Config(Error::io(path, e)))?;
    let map = if text.trim_start().starts_with('{') {
        match serde_json::from_str::<Value>(&text) {
            Ok(Value::Object(m)) => m,
            Ok(_) => return Err(config_err("JSON config must be an object")),
            Err(e) => return Err(config_err(format!("{}: {e}", path.display()))),
        }
    } else {
        parse_kv(&text)?
    };
    // a manifest nests the run config
    match map.get("config") {
        Some(Value::Object(inner)) => Ok(inner.clone()),
        _ => Ok(map),
    }
}

/// Coerces an override to the shape of the value it replaces: scalars given
/// for list fields are split on commas.
fn coerce(base: &Value, v: Value) -> Value {
    match (base, v) {
        (Value::Array(_), Value::String(s)) => Value::Array(
            s.split(',')
                .map(str::trim)
                .filter(|p| !p.is_empty())
                .map(|p| serde_json::from_str(p).unwrap_or_else(|_| Value::String(p.to_string())))
                .collect(),
        ),
        (Value::Array(_), v @ Value::Number(_)) => Value::Array(vec![v]),
        (Value::String(_), Value::Number(n)) => Value::String(n.to_string()),
        (Value::String(_), Value::Bool(b)) => Value::String(b.to_string()),
        (_, v) => v,
    }
}

fn default_command(name: &str) -> Result<Command, Failure> {
    let cli = Cli::try_parse_from(["nmpu-sim", name])
        .map_err(|_| config_err(format!("unknown command {name:?}")))?;
    Ok(cli.command.expect("subcommand given"))
}

fn resolve(cli: Cli) -> Result<RunConfig, Failure> {
    let overrides = match &cli.config {
        Some(p) => load_config_file(p)?,
        None => Map::new(),
    };
    let file_command = overrides.get("command").and_then(Value::as_str).map(str::to_string);
    let command = match (cli.command, file_command) {
        (Some(c), Some(f)) if c.name() != f => {
            return Err(config_err(format!(
                "config file is for {f:?}, command line asks for {:?}",
                c.name()
            )))
        }
        (Some(c), _) => c,
        (None, Some(f)) => default_command(&f)?,
        (None, None) => return Err(config_err("no command given (try --help)")),
    };
    let explicit_out = cli.out;
    let base = RunConfig {
        out: explicit_out.clone().unwrap_or_else(|| PathBuf::from("out")),
        command,
    };
    if overrides.is_empty() {
        return Ok(base);
    }
    let Value::Object(mut merged) = serde_json::to_value(&base).expect("serializable") else {
        unreachable!("RunConfig serializes to an object")
    };
    for (k, v) in overrides {
        let Some(current) = merged.get(&k) else {
            return Err(config_err(format!(
                "unknown key {k:?} for command {}",
                base.command.name()
            )));
        };
        let v = coerce(current, v);
        merged.insert(k, v);
    }
    let mut cfg: RunConfig =
        serde_json::from_value(Value::Object(merged)).map_err(|e| config_err(format!("config: {e}")))?;
    if let Some(out) = explicit_out {
        cfg.out = out;
    }
    Ok(cfg)
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| config_err(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    // a pool may already exist when running inside tests
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let quiet = cli.quiet;
    let result = configure_threads()
        .and_then(|_| resolve(cli))
        .and_then(|cfg| execute(&cfg, quiet));
    match result {
        Ok(()) => 0,
        Err(f) => {
            let (Failure::Config(e) | Failure::Runtime(e)) = &f;
            eprintln!("error: {e}");
            f.exit_code()
        }
    }
}

/// Runs a resolved configuration and writes its manifest.
pub fn execute(cfg: &RunConfig, quiet: bool) -> Result<(), Failure> {
    let out = &cfg.out;
    let summary = match &cfg.command {
        Command::Explore(a) => cmd_explore(a, out)?,
        Command::Adc(a) => cmd_adc(a, out)?,
        Command::Simulate(a) => cmd_simulate(a, out)?,
        Command::Perf(a) => cmd_perf(a, out)?,
        Command::Vectors(a) => cmd_vectors(a, out)?,
    };
    let manifest = json!({
        "tool": "nmpu-sim",
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
    });
    write_json(&out.join(MANIFEST), &manifest)?;
    if !quiet {
        print!("{summary}");
    }
    Ok(())
}

fn parse_archs(list: &[String]) -> Result<Vec<Architecture>, Failure> {
    if list.is_empty() {
        return Ok(Architecture::all());
    }
    let mut archs: Vec<Architecture> = list
        .iter()
        .map(|s| s.parse())
        .collect::<crate::Result<_>>()
        .config()?;
    archs.sort();
    archs.dedup();
    Ok(archs)
}

pub fn cmd_explore(a: &ExploreArgs, out: &Path) -> Result<String, Failure> {
    if a.n == 0 {
        return Err(config_err("--n must be at least 1"));
    }
    if !(a.gain > 0.0) || a.sweep_gains.iter().any(|g| !(*g > 0.0)) {
        return Err(config_err("gains must be positive"));
    }
    if !(a.offset_max >= 0.0) {
        return Err(config_err("--offset-max must be non-negative"));
    }
    if a.shift > crate::nmpu::MAX_SHIFT {
        return Err(config_err(format!("--shift {} exceeds 3", a.shift)));
    }
    let archs = parse_archs(&a.arch)?;
    let baseline: BaselineMode = a.baseline.parse().config()?;
    let spec = StimulusSpec {
        n: a.n,
        seed: a.seed,
        gain: a.gain,
        shift: a.shift,
        offset_max: a.offset_max,
        relu: true,
    };
    let stim = spec.generate().config()?;
    let report = explore(&stim, &archs, baseline)?;
    write_atomic(&out.join("report.csv"), report.to_csv().as_bytes())?;
    write_json(&out.join("report.json"), &report)?;
    for r in &report.architectures {
        write_atomic(
            &out.join("hist").join(format!("{}.csv", r.id)),
            histogram_csv(&r.stats).as_bytes(),
        )?;
    }
    write_atomic(&out.join("hist").join("fp16.csv"), histogram_csv(&report.fp16).as_bytes())?;

    let mut summary = String::from("id,frac_ge_half,mean_q_err,rank,label\n");
    for r in &report.architectures {
        summary.push_str(&format!(
            "{},{:.4},{:.4},{},{}\n",
            r.id,
            r.stats.frac_ge_half,
            r.stats.mean_q_err,
            r.rank,
            r.label.map(String::from).unwrap_or_default()
        ));
    }

    if !a.sweep_gains.is_empty() {
        let mut csv = String::from("baseline,gain,id,frac_ge_half\n");
        for mode in [BaselineMode::Int8, BaselineMode::Real] {
            for row in gain_sweep(&spec, &a.sweep_gains, &archs, mode)? {
                csv.push_str(&format!("{mode},{},{},{}\n", row.gain, row.id, row.frac_ge_half));
            }
        }
        write_atomic(&out.join("sensitivity.csv"), csv.as_bytes())?;
    }

    if a.exhaustive {
        let draw = CfgDraw {
            scale_p: a.scale_p,
            scale_n: a.scale_n,
            shift: a.shift,
            offset: a.offset,
        };
        let reference = draw.real_params(a.relu);
        let sampled = explore(
            &Stimulus::fixed(uniform_grid_samples(a.n, a.seed), draw, a.relu),
            &archs,
            baseline,
        )?;
        let mut csv = String::from(
            "id,total,ge_half,fraction,sampled_n,sampled_fraction,ci_half_width,within_ci\n",
        );
        summary.push_str("exhaustive id,fraction,sampled_fraction,within_ci\n");
        for arch in &archs {
            let cfg = NmpuConfig::from_real(&reference, arch.first_stage, arch.second_stage)
                .config()?;
            let counts = exhaustive_counts(&cfg, &reference, baseline)?;
            let p = counts.fraction();
            let est = sampled.get(arch).expect("explored").stats.frac_ge_half;
            let half = 3.0 * (p * (1.0 - p) / a.n as f64).sqrt() + 0.5 / a.n as f64;
            let within = (est - p).abs() <= half;
            csv.push_str(&format!(
                "{arch},{},{},{p},{},{est},{half},{within}\n",
                counts.total, counts.ge_half, a.n
            ));
            summary.push_str(&format!("{arch},{p:.5},{est:.5},{within}\n"));
        }
        write_atomic(&out.join("exhaustive.csv"), csv.as_bytes())?;
    }
    Ok(summary)
}

pub fn cmd_adc(a: &AdcArgs, out: &Path) -> Result<String, Failure> {
    let spec = PopulationSpec {
        n: a.n,
        cv_target: a.cv,
        nonlinearity: a.nonlinearity,
        seed: a.seed,
        levels: a.levels,
        offset_std: a.offset_std,
    };
    let pop = spec.generate().config()?;
    let params = calibrate_affine(&pop)?;
    let before = compute_cv(&pop, None, false)?;
    let real = compute_cv(&pop, Some(&params), false)?;
    let quant = compute_cv(&pop, Some(&params), true)?;
    write_atomic(&out.join("population.csv"), pop.to_csv().as_bytes())?;
    let mut cal = calibration_json(&params);
    cal.push('\n');
    write_atomic(&out.join("calibration.json"), cal.as_bytes())?;
    let mut csv = String::from(
        "level,mean_before,std_before,cv_before,mean_real,std_real,cv_real,mean_quantized,std_quantized,cv_quantized\n",
    );
    for ((b, r), q) in before.levels.iter().zip(&real.levels).zip(&quant.levels) {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            b.level, b.mean, b.std, b.cv, r.mean, r.std, r.cv, q.mean, q.std, q.cv
        ));
    }
    write_atomic(&out.join("cv.csv"), csv.as_bytes())?;
    let scales: Vec<f64> = params.iter().map(|p| p.scale_aff).collect();
    let scale_min = scales.iter().copied().fold(f64::INFINITY, f64::min);
    let scale_max = scales.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let representable = params.iter().all(|p| {
        FixedFormat::SCALE.contains_raw(p.quantized.scale.raw())
            && p.quantized.shift <= crate::nmpu::MAX_SHIFT
    });
    let summary = json!({
        "n": a.n,
        "cv_target": a.cv,
        "nonlinearity": a.nonlinearity,
        "seed": a.seed,
        "cv_before": before.aggregate,
        "cv_after_real": real.aggregate,
        "cv_after_quantized": quant.aggregate,
        "scale_min": scale_min,
        "scale_max": scale_max,
        "scales_representable": representable,
    });
    write_json(&out.join("summary.json"), &summary)?;
    Ok(format!(
        "cv_before {:.4}\ncv_after_real {:.4}\ncv_after_quantized {:.4}\nscale_range [{scale_min:.3}, {scale_max:.3}]\n",
        before.aggregate, real.aggregate, quant.aggregate
    ))
}

fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[derive(Serialize)]
struct RunRecord {
    periphery: String,
    seed: u64,
    rep: u32,
    noise_sigma: f64,
    accuracy: f64,
}

pub fn cmd_simulate(a: &SimulateArgs, out: &Path) -> Result<String, Failure> {
    if a.reps == 0 {
        return Err(config_err("--reps must be at least 1"));
    }
    if a.peripheries.is_empty() {
        return Err(config_err("no peripheries requested"));
    }
    if !(a.noise >= 0.0 && a.noise.is_finite()) {
        return Err(config_err("--noise must be non-negative"));
    }
    let needs_best = a.peripheries.iter().any(|p| p == "nmpu:best");
    let best = if needs_best { Some(default_best()?) } else { None };
    let kinds: Vec<(String, PeripheryKind)> = a
        .peripheries
        .iter()
        .map(|p| {
            let kind = match (p.as_str(), best) {
                ("nmpu:best", Some(b)) => Ok(PeripheryKind::FixedPointNmpu(b)),
                _ => p.parse(),
            };
            kind.map(|k| (p.clone(), k))
        })
        .collect::<crate::Result<_>>()
        .config()?;
    let adcs = match a.adc.as_str() {
        "linear" => AdcPopulation::linear(2, crate::adc::DEFAULT_LEVELS),
        "synthetic" => PopulationSpec::new(256, a.adc_cv, a.adc_nonlinearity, a.adc_seed)
            .generate()
            .config()?,
        other => return Err(config_err(format!("--adc must be linear or synthetic, got {other:?}"))),
    };
    let hw = Hardware {
        adcs,
        noise_sigma: a.noise,
        drift_factor: a.drift,
        compensate_drift: a.compensate_drift,
    };
    if !(a.drift > 0.0 && a.drift <= 1.0) {
        return Err(config_err("--drift must be in (0, 1]"));
    }

    let (layers, calibration, test) = match &a.weights {
        Some(path) => {
            let file = fs::File::open(path).map_err(|e| Failure::Config(Error::io(path, e)))?;
            let layers = network_from_tensors(&read_tensors(std::io::BufReader::new(file)).config()?)
                .config()?;
            let Some(dpath) = &a.dataset else {
                return Err(config_err("--weights requires --dataset"));
            };
            let text = fs::read_to_string(dpath).map_err(|e| Failure::Config(Error::io(dpath, e)))?;
            let data = Dataset::from_csv(&text).config()?;
            (layers, data.features.clone(), data)
        }
        None => {
            let spec = ToySpec {
                sample_noise: a.sample_noise,
                seed: a.toy_seed,
                ..ToySpec::default()
            };
            let (task, layers) = toy_network(&spec, &TrainConfig::default()).config()?;
            let test = match &a.dataset {
                Some(dpath) => {
                    let text = fs::read_to_string(dpath)
                        .map_err(|e| Failure::Config(Error::io(dpath, e)))?;
                    Dataset::from_csv(&text).config()?
                }
                None => task.test.clone(),
            };
            let mut bytes = Vec::new();
            write_tensors(&network_to_tensors(&layers), &mut bytes)?;
            write_atomic(&out.join("toy_weights.nmpt"), &bytes)?;
            write_atomic(&out.join("toy_test.csv"), task.test.to_csv().as_bytes())?;
            (layers, task.train.features, test)
        }
    };
    if test.is_empty() {
        return Err(config_err("evaluation dataset is empty"));
    }
    let sw_acc = software_accuracy(&layers, &test);
    let net = map_network(layers, &calibration).config()?;
    if test.dim() != net.inputs() {
        return Err(config_err(format!(
            "dataset has {} features, network takes {}",
            test.dim(),
            net.inputs()
        )));
    }
    let ref_hits = test
        .features
        .iter()
        .zip(&test.labels)
        .map(|(x, &l)| reference_forward(&net, x).map(|y| network_argmax(&y) == l))
        .collect::<crate::Result<Vec<bool>>>()?;
    let ref_acc = ref_hits.iter().filter(|&&h| h).count() as f64 / test.len() as f64;

    let mut records = Vec::new();
    let mut rows = Vec::new();
    for (name, kind) in &kinds {
        let accs = (0..a.reps)
            .map(|rep| run_network(&net, &test, &hw, *kind, a.seed, rep))
            .collect::<crate::Result<Vec<f64>>>()?;
        for (rep, acc) in accs.iter().enumerate() {
            records.push(RunRecord {
                periphery: kind.to_string(),
                seed: a.seed,
                rep: rep as u32,
                noise_sigma: a.noise,
                accuracy: *acc,
            });
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        rows.push((name.clone(), *kind, mean, sample_std(&accs)));
    }
    let fp32_mean = rows
        .iter()
        .find(|r| r.1 == PeripheryKind::Fp32Reference)
        .map(|r| r.2);
    let mut csv = String::from("periphery,resolved,noise_sigma,reps,mean_accuracy,std_accuracy,drop_vs_fp32\n");
    let mut summary = format!(
        "software_accuracy {sw_acc:.4}\nreference_accuracy {ref_acc:.4}\n"
    );
    for (name, kind, mean, std) in &rows {
        let drop = fp32_mean.map(|f| (f - mean).to_string()).unwrap_or_default();
        csv.push_str(&format!("{name},{kind},{},{},{mean},{std},{drop}\n", a.noise, a.reps));
        summary.push_str(&format!("{kind}: {mean:.4} +- {std:.4}\n"));
    }
    write_atomic(&out.join("accuracy.csv"), csv.as_bytes())?;
    write_json(&out.join("runs.json"), &records)?;
    write_json(
        &out.join("summary.json"),
        &json!({
            "software_accuracy": sw_acc,
            "reference_accuracy": ref_acc,
            "noise_model": "synthetic multiplicative Gaussian conductance noise (stand-in)",
            "best_architecture": best.map(|b| b.to_string()),
        }),
    )?;
    Ok(summary)
}

pub fn cmd_perf(a: &PerfArgs, out: &Path) -> Result<String, Failure> {
    if a.n_outputs == 0 {
        return Err(config_err("--n-outputs must be at least 1"));
    }
    let names: Vec<String> = if a.spec.is_empty() {
        PerfSpec::BUILTIN_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        a.spec.clone()
    };
    let specs: Vec<PerfSpec> = names
        .iter()
        .map(|n| PerfSpec::builtin(n))
        .collect::<crate::Result<_>>()
        .config()?;
    if !a.compare.is_empty() && a.compare.len() != 2 {
        return Err(config_err("--compare takes exactly two spec names"));
    }
    let pair = a
        .compare
        .iter()
        .map(|n| PerfSpec::builtin(n))
        .collect::<crate::Result<Vec<_>>>()
        .config()?;
    let rows = specs
        .iter()
        .map(|s| PerfRow::new(s, a.n_outputs))
        .collect::<crate::Result<Vec<_>>>()?;
    let comparisons = if pair.len() == 2 {
        vec![compare(&pair[0], &pair[1], a.n_outputs)?]
    } else if a.spec.is_empty() {
        builtin_report(a.n_outputs)?.comparisons
    } else {
        Vec::new()
    };
    let mut csv = String::from("name,area_kge,area_reported,latency_ns,total_latency_ns,power_mw_ss,power_mw_ff\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut summary = String::new();
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.name,
            r.area_kge,
            r.area_reported,
            r.latency_ns,
            r.total_latency_ns,
            opt(r.power_mw_ss),
            opt(r.power_mw_ff)
        ));
        summary.push_str(&format!(
            "{}: area {} kGE, latency {} ns, total {} ns\n",
            r.name, r.area_reported, r.latency_ns, r.total_latency_ns
        ));
    }
    for c in &comparisons {
        summary.push_str(&format!(
            "{} vs {}: speedup {:.1}, area_ratio {:.2}\n",
            c.a, c.b, c.speedup, c.area_ratio
        ));
    }
    write_atomic(&out.join("perf.csv"), csv.as_bytes())?;
    write_json(&out.join("perf.json"), &json!({ "rows": rows, "comparisons": comparisons }))?;
    Ok(summary)
}

pub fn cmd_vectors(a: &VectorsArgs, out: &Path) -> Result<String, Failure> {
    let arch: Architecture = a.arch.parse().config()?;
    let cfg = NmpuConfig::from_raw(
        a.scale_p_raw,
        a.scale_n_raw,
        a.shift,
        a.offset_raw,
        arch.first_stage,
        arch.second_stage,
    )
    .config()?
    .with_relu(a.relu);
    if !a.exhaustive && a.samples == 0 {
        return Err(config_err("--samples must be at least 1"));
    }
    let mut buf = Vec::new();
    let count = if a.exhaustive {
        let grid = (0..=INPUT_MAX).flat_map(|p| (0..=INPUT_MAX).map(move |n| (p, n)));
        write_vectors(&cfg, grid, &mut buf)?
    } else {
        write_vectors(&cfg, uniform_grid_samples(a.samples, a.seed), &mut buf)?
    };
    write_atomic(&out.join("vectors.txt"), &buf)?;
    write_atomic(&out.join("config.kv"), cfg.to_kv().as_bytes())?;
    Ok(format!("{count} vectors for {arch}\n"))
}
