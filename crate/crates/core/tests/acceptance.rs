// SPDX-License-Identifier: Apache-2.0
//! Acceptance suite. Every criterion prints one `PASS` or `FAIL` line; the
//! test fails at the end if any criterion failed.
//!
//! Run with `cargo test -p nmpu-sim --test acceptance -- --nocapture`.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use nmpu_sim::adc::{calibrate_affine, compute_cv, gen_adc_population};
use nmpu_sim::aimc::toy::{toy_network, TrainConfig, ToySpec};
use nmpu_sim::aimc::{map_network, run_network, Hardware, MappedNetwork, PeripheryKind};
use nmpu_sim::adc::PopulationSpec;
use nmpu_sim::dse::{default_best, explore, gain_sweep, Architecture, BaselineMode, StimulusSpec};
use nmpu_sim::fixedpoint::{FixedFormat, FixedValue};
use nmpu_sim::nmpu::{
    first_stage_round, fold_bn, quantize_params, second_stage_round, Affine, BatchNorm, FirstStageMethod,
    NmpuConfig, SecondStageMethod, INPUT_MAX,
};
use nmpu_sim::perf::{compare, PerfRow, PerfSpec};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rat(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// One branch in quarter units: `floor(min(d * s / 2^(7+k), 256 - 2^-(7+k)) * 4)`,
/// and whether the clamp was hit.
fn oracle_branch(d: u16, scale_raw: u8, shift: u32) -> (i64, bool) {
    let den = 1i64 << (7 + shift);
    let x = rat(i64::from(d) * i64::from(scale_raw), den);
    let cap = rat(256, 1) - rat(1, den);
    let (x, clamped) = if x > cap { (cap, true) } else { (x, false) };
    let q = (x * rat(4, 1)).floor().to_integer();
    (q.to_i64().unwrap(), clamped)
}

struct OracleCfg {
    scale_p: u8,
    scale_n: u8,
    shift: u32,
    offset_raw: i8,
    relu: bool,
}

fn criterion_1() -> Outcome {
    // scale raws: 0.88 -> 113, 1.0 -> 128, 1.17 -> 150; offsets in half units
    let cfgs = [
        (128, 128, 0, 0, false),
        (113, 150, 1, -7, true),
        (150, 113, 2, 15, false),
        (128, 113, 3, 0, true),
        (113, 113, 3, 15, false),
        (150, 150, 0, -7, true),
        (150, 128, 3, -7, false),
        (113, 128, 2, 0, true),
    ]
    .map(|(scale_p, scale_n, shift, offset_raw, relu)| OracleCfg {
        scale_p,
        scale_n,
        shift,
        offset_raw,
        relu,
    });
    for (s, v) in [(0.88, 113u8), (1.0, 128), (1.17, 150)] {
        let q = quantize_params(s / 8.0, 0.0).unwrap();
        assert_eq!(q.scale.raw(), i128::from(v), "register encoding of {s}");
    }
    let start = Instant::now();
    let mut mismatches = 0u64;
    let mut checked = 0u64;
    for c in &cfgs {
        let hw = NmpuConfig::from_raw(
            c.scale_p,
            c.scale_n,
            c.shift,
            c.offset_raw,
            FirstStageMethod::M5,
            SecondStageMethod::S1,
        )
        .unwrap()
        .with_relu(c.relu);
        let bp: Vec<(i64, bool)> = (0..=INPUT_MAX).map(|d| oracle_branch(d, c.scale_p, c.shift)).collect();
        let bn: Vec<(i64, bool)> = (0..=INPUT_MAX).map(|d| oracle_branch(d, c.scale_n, c.shift)).collect();
        let offset_q = 2 * i64::from(c.offset_raw);
        for p in 0..=INPUT_MAX {
            for n in 0..=INPUT_MAX {
                let (qp, cp) = bp[usize::from(p)];
                let (qn, cn) = bn[usize::from(n)];
                let mut y = (qp - qn + offset_q).div_euclid(4);
                if c.relu {
                    y = y.max(0);
                }
                let value = y.clamp(-128, 127);
                let overflow = cp || cn || value != y;
                let got = hw.process(p, n).unwrap();
                checked += 1;
                if i64::from(got.value) != value || got.overflow != overflow {
                    mismatches += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    outcome(
        mismatches == 0 && elapsed < 60.0,
        format!("M5-S1 vs rational oracle: {mismatches} mismatches over {checked} inputs (8 configs), {elapsed:.1}s"),
    )
}

fn criterion_2() -> Outcome {
    let spec = StimulusSpec::default();
    let report = explore(&spec.generate().unwrap(), &Architecture::all(), BaselineMode::Int8).unwrap();
    let frac = |f: FirstStageMethod, s: SecondStageMethod| {
        report
            .get(&Architecture::new(f, s))
            .unwrap()
            .stats
            .frac_ge_half
    };
    let mut ok = true;
    let mut worst = 0.0f64;
    for f in FirstStageMethod::ALL {
        let s1 = frac(f, SecondStageMethod::S1);
        let s3 = frac(f, SecondStageMethod::S3);
        worst = worst.max(s1);
        ok &= s1 < 0.11 && s1 < s3;
    }
    let sweep = gain_sweep(&spec, &[128.0, 256.0, 512.0], &Architecture::all(), BaselineMode::Int8).unwrap();
    let mut by_gain: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for row in &sweep {
        let e = by_gain
            .entry(format!("{}", row.gain))
            .or_insert((f64::INFINITY, 0.0));
        if row.id.ends_with("S1") {
            e.1 = e.1.max(row.frac_ge_half);
        } else {
            e.0 = e.0.min(row.frac_ge_half);
        }
    }
    let sweep_text: Vec<String> = by_gain
        .iter()
        .map(|(g, (other_min, s1_max))| format!("gain {g}: max S1 {s1_max:.4}, min S2/S3 {other_min:.4}"))
        .collect();
    outcome(
        ok,
        format!(
            "max S1 frac(Q_err>=0.5) {worst:.4} (< 0.11), S1 < S3 for all first stages; sweep [{}]",
            sweep_text.join("; ")
        ),
    )
}

const FIRST_TABLES: [(FirstStageMethod, [i128; 32]); 5] = [
    (
        FirstStageMethod::M1,
        [0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2, 2, 2, 3, 3, 3, 3, 3, 3, 3, 3, 4, 4, 4, 4],
    ),
    (
        FirstStageMethod::M2,
        [0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 2, 2, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3],
    ),
    (
        FirstStageMethod::M3,
        [0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3],
    ),
    (
        FirstStageMethod::M4,
        [0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 2, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3],
    ),
    (
        FirstStageMethod::M5,
        [0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2, 2, 2, 3, 3, 3, 3, 3, 3, 3, 3],
    ),
];

/// Second-stage results for raw values -16..=15 of `Qs(3,2)`.
const SECOND_TABLES: [(SecondStageMethod, [i128; 32]); 3] = [
    (
        SecondStageMethod::S1,
        [
            -4, -4, -4, -4, -3, -3, -3, -3, -2, -2, -2, -2, -1, -1, -1, -1, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3,
            3,
        ],
    ),
    (
        SecondStageMethod::S2,
        [
            -4, -4, -4, -4, -3, -3, -3, -3, -2, -2, -2, -2, -1, -1, -1, -1, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3, 4,
            4,
        ],
    ),
    (
        SecondStageMethod::S3,
        [
            -4, -4, -3, -3, -3, -3, -2, -2, -2, -2, -1, -1, -1, -1, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3, 4,
            4,
        ],
    ),
];

fn criterion_3() -> Outcome {
    let q15 = FixedFormat::unsigned(1, 5).unwrap();
    let mut bad = Vec::new();
    for (m, table) in FIRST_TABLES {
        for (p, &want) in table.iter().enumerate() {
            let v = FixedValue::from_raw(p as i128, q15).unwrap();
            let got = first_stage_round(&v, m).unwrap();
            assert_eq!(got.format().frac_bits(), 2);
            if got.raw() != want {
                bad.push(format!("{m} p={p}"));
            }
        }
    }
    let qs32 = FixedFormat::signed(3, 2).unwrap();
    for (m, table) in SECOND_TABLES {
        for (i, &want) in table.iter().enumerate() {
            let v = FixedValue::from_raw(i as i128 - 16, qs32).unwrap();
            if second_stage_round(&v, m) != want {
                bad.push(format!("{m} raw={}", i as i128 - 16));
            }
        }
    }
    outcome(
        bad.is_empty(),
        format!("160 first-stage and 96 second-stage cases, mismatches: {bad:?}"),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let pop = gen_adc_population(256, 0.07, 0.3, 7).unwrap();
    let cal = calibrate_affine(&pop).unwrap();
    let before = compute_cv(&pop, None, false).unwrap().aggregate;
    let real = compute_cv(&pop, Some(&cal), false).unwrap().aggregate;
    let quant = compute_cv(&pop, Some(&cal), true).unwrap().aggregate;
    let elapsed = start.elapsed().as_secs_f64();
    // Representable: the register scale reproduces the fitted scale within
    // one register LSB after the shift is folded in.
    let representable = cal.iter().all(|c| {
        let lsb = 2f64.powi(-7) / f64::from(1u32 << c.quantized.shift);
        (c.quantized.effective_scale() - c.scale_aff).abs() <= lsb / 2.0 + 1e-12
            && (c.quantized.offset.real_value() - c.offset_aff).abs() <= 0.25 + 1e-12
    });
    let (lo, hi) = cal
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), c| (lo.min(c.scale_aff), hi.max(c.scale_aff)));
    outcome(
        real <= 0.01 && quant <= 0.015 && representable && elapsed < 10.0,
        format!(
            "CV before {before:.4}, corrected real {real:.4} (<= 0.01), quantized {quant:.4} (<= 0.015), \
             scales [{lo:.3}, {hi:.3}] representable {representable}, {elapsed:.2}s"
        ),
    )
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let want = [("archA", 3.3, 256.0), ("archA_x64", 211.0, 4.0), ("fp16_ref", 1666.0, 558.0)];
    let mut ok = true;
    let mut cells = Vec::new();
    for (name, area, latency) in want {
        let row = PerfRow::new(&PerfSpec::builtin(name).unwrap(), 256).unwrap();
        ok &= row.area_reported == area && row.total_latency_ns == latency;
        cells.push(format!("{name} {}kGE {}ns", row.area_reported, row.total_latency_ns));
    }
    let c = compare(
        &PerfSpec::builtin("archA_x64").unwrap(),
        &PerfSpec::builtin("fp16_ref").unwrap(),
        256,
    )
    .unwrap();
    ok &= (138.0..=141.0).contains(&c.speedup) && (7.8..=8.0).contains(&c.area_ratio);
    let elapsed = start.elapsed().as_secs_f64();
    outcome(
        ok && elapsed < 1.0,
        format!(
            "{}; speedup {:.2} area ratio {:.3}; {elapsed:.3}s",
            cells.join(", "),
            c.speedup,
            c.area_ratio
        ),
    )
}

fn mean_accuracy(net: &MappedNetwork, test: &nmpu_sim::aimc::toy::Dataset, hw: &Hardware, kind: PeripheryKind, reps: u32) -> f64 {
    let accs: Vec<f64> = (0..reps)
        .map(|rep| run_network(net, test, hw, kind, 42, rep).unwrap())
        .collect();
    accs.iter().sum::<f64>() / accs.len() as f64
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let (task, layers) = toy_network(&ToySpec::default(), &TrainConfig::default()).unwrap();
    let net = map_network(layers, &task.train.features).unwrap();
    let adcs = PopulationSpec::new(256, 0.07, 0.3, 7).generate().unwrap();
    let best = default_best().unwrap();
    let kinds = [
        PeripheryKind::Fp32Reference,
        PeripheryKind::Fp16Behavioral,
        PeripheryKind::FixedPointNmpu(best),
    ];
    let reps = 10;
    let mut table = Vec::new();
    for sigma in [0.0, 0.05, 0.1] {
        let hw = Hardware {
            adcs: adcs.clone(),
            noise_sigma: sigma,
            drift_factor: 1.0,
            compensate_drift: true,
        };
        let accs: Vec<f64> = kinds
            .iter()
            .map(|&k| mean_accuracy(&net, &task.test, &hw, k, reps))
            .collect();
        table.push((sigma, accs));
    }
    let at = |sigma: f64| &table.iter().find(|r| r.0 == sigma).unwrap().1;
    let nominal = at(0.05);
    let drop_nmpu = nominal[0] - nominal[2];
    let drop_fp16 = nominal[0] - nominal[1];
    let noise_effect = (0..kinds.len())
        .map(|k| (at(0.0)[k] - at(0.1)[k]).abs())
        .fold(f64::INFINITY, f64::min);
    let swap_effect = table
        .iter()
        .flat_map(|(_, a)| {
            let a = a.clone();
            (0..3).flat_map(move |i| (0..3).map({
                let a = a.clone();
                move |j| (a[i] - a[j]).abs()
            }))
        })
        .fold(0.0f64, f64::max);
    let elapsed = start.elapsed().as_secs_f64();
    let rows: Vec<String> = table
        .iter()
        .map(|(s, a)| format!("sigma {s}: fp32 {:.4} fp16 {:.4} {best} {:.4}", a[0], a[1], a[2]))
        .collect();
    outcome(
        drop_nmpu <= 0.01 && drop_nmpu <= drop_fp16 + 0.01 && noise_effect > swap_effect && elapsed < 300.0,
        format!(
            "{reps} reps; nmpu drop {drop_nmpu:.4} (<= 0.01, fp16 drop {drop_fp16:.4}); \
             min noise effect {noise_effect:.4} > max periphery swap {swap_effect:.4}; [{}]; {elapsed:.1}s",
            rows.join("; ")
        ),
    )
}

fn hash_dir(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                let digest = Sha256::digest(std::fs::read(&path).unwrap());
                let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
                out.insert(rel, hex);
            }
        }
    }
    out
}

fn criterion_7() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_nmpu-sim");
    let runs: [&[&str]; 5] = [
        &["explore", "--n", "3000", "--exhaustive"],
        &["adc"],
        &["simulate", "--reps", "2"],
        &["perf"],
        &["vectors", "--samples", "5000"],
    ];
    let mut failures = Vec::new();
    let mut files = 0;
    for args in runs {
        // Same flags, including --out, so the manifest is identical too.
        let root = tempfile::tempdir().unwrap();
        let out = root.path().join("out");
        let hashes: Vec<BTreeMap<String, String>> = (0..2)
            .map(|_| {
                if out.exists() {
                    std::fs::remove_dir_all(&out).unwrap();
                }
                let status = Command::new(bin)
                    .arg("--quiet")
                    .arg("--out")
                    .arg(&out)
                    .args(args)
                    .status()
                    .unwrap();
                assert!(status.success(), "{args:?} failed");
                hash_dir(&out)
            })
            .collect();
        files += hashes[0].len();
        if hashes[0] != hashes[1] || hashes[0].is_empty() {
            failures.push(args[0]);
        }
    }
    outcome(
        failures.is_empty(),
        format!("5 commands run twice, {files} artifacts hashed; differing: {failures:?}"),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let a = Affine {
            scale: rng.random_range(0.05..4.0),
            offset: rng.random_range(-50.0..50.0),
        };
        let bn = BatchNorm {
            gamma: rng.random_range(-3.0..3.0),
            beta: rng.random_range(-5.0..5.0),
            mean: rng.random_range(-20.0..20.0),
            var: rng.random_range(0.01..10.0),
            eps: 1e-5,
        };
        let folded = fold_bn(&a, &bn).unwrap();
        let x: f64 = rng.random_range(0.0..1023.0);
        // Exact value of bn(a(x)) for the rational parts, sqrt taken in f64.
        let k = bn.gamma / (bn.var + bn.eps).sqrt();
        let kr = BigRational::from_float(k).unwrap();
        let ax = BigRational::from_float(x).unwrap() * BigRational::from_float(a.scale).unwrap()
            + BigRational::from_float(a.offset).unwrap();
        let want = kr * (ax - BigRational::from_float(bn.mean).unwrap()) + BigRational::from_float(bn.beta).unwrap();
        let got = BigRational::from_float(folded.apply(x)).unwrap();
        let denom = if want.is_zero() { BigRational::one() } else { want.abs() };
        let rel = ((got - &want).abs() / denom).to_f64().unwrap();
        worst = worst.max(rel);
        let direct = bn.apply(a.apply(x));
        worst = worst.max((direct - folded.apply(x)).abs() / direct.abs().max(1.0));
    }
    outcome(worst <= 1e-9, format!("100 tuples, worst relative error {worst:.3e} (<= 1e-9)"))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 datapath oracle equivalence", criterion_1),
        ("2 second-stage error property", criterion_2),
        ("3 rounding truth tables", criterion_3),
        ("4 ADC calibration", criterion_4),
        ("5 area and latency table", criterion_5),
        ("6 toy network property", criterion_6),
        ("7 CLI determinism", criterion_7),
        ("8 BN folding", criterion_8),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let start = Instant::now();
        let o = check();
        println!(
            "{} criterion {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
