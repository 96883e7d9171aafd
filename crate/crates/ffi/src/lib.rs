// SPDX-License-Identifier: Apache-2.0
//! C ABI over the `nmpu-sim` core.
//!
//! Conventions:
//! - Fallible functions return an [`NmpuStatus`]; results go through out
//!   pointers that are written only on success.
//! - Handles are opaque, created by `*_new*` and released by `*_free`.
//!   Freeing a null handle is a no-op.
//! - After a failure, [`nmpu_last_error`] returns a NUL-terminated message
//!   owned by the library and valid until the next call on the same thread.
//! - Panics never cross the boundary; they are reported as
//!   [`NmpuStatus::Panic`].
//! - First-stage methods are numbered 1..=5 (M1..M5), second-stage methods
//!   1..=3 (S1..S3).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use nmpu_sim::adc::{calibrate_affine, compute_cv, AdcPopulation, PopulationSpec};
use nmpu_sim::dse::{explore, Architecture, BaselineMode, StimulusSpec};
use nmpu_sim::fp16::fp16_baseline;
use nmpu_sim::nmpu::{
    fold_bn, nmpu_reference, Affine, BatchNorm, FirstStageMethod, NmpuConfig, RealParams,
    SecondStageMethod,
};
use nmpu_sim::perf::{compare, PerfSpec};
use nmpu_sim::Error;

/// Bumped on any incompatible change to this interface.
pub const NMPU_ABI_VERSION: u32 = 1;
/// Number of architectures reported by [`nmpu_explore`].
pub const NMPU_ARCHITECTURES: usize = 15;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NmpuStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Range = 3,
    Overflow = 4,
    Domain = 5,
    Parse = 6,
    Shape = 7,
    SingularFit = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Opaque datapath configuration.
pub struct NmpuConfigHandle(NmpuConfig);

/// Opaque ADC population with its affine calibration.
pub struct NmpuAdcHandle {
    population: AdcPopulation,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> NmpuStatus {
    match e {
        Error::Range { .. } | Error::Width { .. } => NmpuStatus::Range,
        Error::Overflow { .. } => NmpuStatus::Overflow,
        Error::Domain(_) => NmpuStatus::Domain,
        Error::Parse(_) | Error::Format(_) => NmpuStatus::Parse,
        Error::Shape(_) => NmpuStatus::Shape,
        Error::SingularFit { .. } => NmpuStatus::SingularFit,
        _ => NmpuStatus::InvalidArgument,
    }
}

struct Fail(NmpuStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn fail(status: NmpuStatus, msg: impl Into<String>) -> Fail {
    Fail(status, msg.into())
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NmpuStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            NmpuStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            NmpuStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(fail(NmpuStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

fn first_stage(m: u8) -> Result<FirstStageMethod, Fail> {
    FirstStageMethod::ALL
        .get(usize::from(m).wrapping_sub(1))
        .copied()
        .ok_or_else(|| fail(NmpuStatus::InvalidArgument, format!("first-stage method {m} not in 1..=5")))
}

fn second_stage(m: u8) -> Result<SecondStageMethod, Fail> {
    SecondStageMethod::ALL
        .get(usize::from(m).wrapping_sub(1))
        .copied()
        .ok_or_else(|| fail(NmpuStatus::InvalidArgument, format!("second-stage method {m} not in 1..=3")))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(NmpuStatus::Parse, format!("{name} is not UTF-8")))
}

/// Message of the last failure on this thread; empty after a success.
#[no_mangle]
pub extern "C" fn nmpu_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn nmpu_abi_version() -> u32 {
    NMPU_ABI_VERSION
}

/// Creates a configuration from raw register values.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn nmpu_config_new_raw(
    scale_p_raw: u8,
    scale_n_raw: u8,
    shift: u32,
    offset_raw: i8,
    first: u8,
    second: u8,
    relu: bool,
    out: *mut *mut NmpuConfigHandle,
) -> NmpuStatus {
    guard(|| {
        non_null(out, "out")?;
        let cfg = NmpuConfig::from_raw(
            scale_p_raw,
            scale_n_raw,
            shift,
            offset_raw,
            first_stage(first)?,
            second_stage(second)?,
        )?
        .with_relu(relu);
        *out = Box::into_raw(Box::new(NmpuConfigHandle(cfg)));
        Ok(())
    })
}

/// Creates a configuration by quantizing real effective scales and offset.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn nmpu_config_new_real(
    scale_p: f64,
    scale_n: f64,
    offset: f64,
    first: u8,
    second: u8,
    relu: bool,
    out: *mut *mut NmpuConfigHandle,
) -> NmpuStatus {
    guard(|| {
        non_null(out, "out")?;
        let params = RealParams::new(scale_p, scale_n, offset, relu);
        let cfg = NmpuConfig::from_real(&params, first_stage(first)?, second_stage(second)?)?;
        *out = Box::into_raw(Box::new(NmpuConfigHandle(cfg)));
        Ok(())
    })
}

/// Parses a `key = value` configuration as written by [`nmpu_config_to_kv`].
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nmpu_config_from_kv(
    text: *const c_char,
    out: *mut *mut NmpuConfigHandle,
) -> NmpuStatus {
    guard(|| {
        non_null(out, "out")?;
        let cfg = NmpuConfig::from_kv(str_arg(text, "text")?)?;
        *out = Box::into_raw(Box::new(NmpuConfigHandle(cfg)));
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or a pointer returned by a `nmpu_config_new*`
/// function that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn nmpu_config_free(handle: *mut NmpuConfigHandle) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Runs the datapath on one input pair.
///
/// # Safety
/// `handle` must be a live handle; `value` and `overflow` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn nmpu_config_process(
    handle: *const NmpuConfigHandle,
    in_p: u16,
    in_n: u16,
    value: *mut i8,
    overflow: *mut bool,
) -> NmpuStatus {
    guard(|| {
        non_null(handle, "handle")?;
        non_null(value, "value")?;
        non_null(overflow, "overflow")?;
        let o = (*handle).0.process(in_p, in_n)?;
        *value = o.value;
        *overflow = o.overflow;
        Ok(())
    })
}

/// Runs the datapath on `len` input pairs. `overflow` may be null.
///
/// # Safety
/// `in_p`, `in_n` and `values` must point to `len` elements, `overflow` to
/// `len` elements or be null.
#[no_mangle]
pub unsafe extern "C" fn nmpu_config_process_batch(
    handle: *const NmpuConfigHandle,
    in_p: *const u16,
    in_n: *const u16,
    len: usize,
    values: *mut i8,
    overflow: *mut u8,
) -> NmpuStatus {
    guard(|| {
        non_null(handle, "handle")?;
        if len == 0 {
            return Ok(());
        }
        non_null(in_p, "in_p")?;
        non_null(in_n, "in_n")?;
        non_null(values, "values")?;
        let p = std::slice::from_raw_parts(in_p, len);
        let n = std::slice::from_raw_parts(in_n, len);
        let mut results = Vec::with_capacity(len);
        for (a, b) in p.iter().zip(n) {
            results.push((*handle).0.process(*a, *b)?);
        }
        let vals = std::slice::from_raw_parts_mut(values, len);
        for (v, r) in vals.iter_mut().zip(&results) {
            *v = r.value;
        }
        if !overflow.is_null() {
            let ov = std::slice::from_raw_parts_mut(overflow, len);
            for (o, r) in ov.iter_mut().zip(&results) {
                *o = u8::from(r.overflow);
            }
        }
        Ok(())
    })
}

/// Writes the `key = value` form into `buf` including the terminating NUL.
/// `needed` receives the required size in bytes; pass a null `buf` with
/// `cap` 0 to query it.
///
/// # Safety
/// `buf` must point to `cap` writable bytes or be null with `cap` 0.
#[no_mangle]
pub unsafe extern "C" fn nmpu_config_to_kv(
    handle: *const NmpuConfigHandle,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> NmpuStatus {
    guard(|| {
        non_null(handle, "handle")?;
        let text = (*handle).0.to_kv();
        let size = text.len() + 1;
        if !needed.is_null() {
            *needed = size;
        }
        if buf.is_null() && cap == 0 {
            return Ok(());
        }
        non_null(buf, "buf")?;
        if cap < size {
            return Err(fail(
                NmpuStatus::BufferTooSmall,
                format!("buffer of {cap} bytes, need {size}"),
            ));
        }
        std::ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), text.len());
        *buf.add(text.len()) = 0;
        Ok(())
    })
}

/// Real-valued reference of the post-processing.
#[no_mangle]
pub extern "C" fn nmpu_reference_value(
    in_p: u16,
    in_n: u16,
    scale_p: f64,
    scale_n: f64,
    offset: f64,
    relu: bool,
) -> f64 {
    nmpu_reference(in_p, in_n, &RealParams::new(scale_p, scale_n, offset, relu))
}

/// Half-precision behavioral post-processing, rounded and saturated to 8 bits.
#[no_mangle]
pub extern "C" fn nmpu_fp16_baseline(
    in_p: u16,
    in_n: u16,
    scale_p: f64,
    scale_n: f64,
    offset: f64,
    relu: bool,
) -> f64 {
    fp16_baseline(in_p, in_n, &RealParams::new(scale_p, scale_n, offset, relu))
}

/// Folds batch norm into an affine scale and offset.
///
/// # Safety
/// `out_scale` and `out_offset` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn nmpu_fold_bn(
    scale: f64,
    offset: f64,
    gamma: f64,
    beta: f64,
    mean: f64,
    var: f64,
    eps: f64,
    out_scale: *mut f64,
    out_offset: *mut f64,
) -> NmpuStatus {
    guard(|| {
        non_null(out_scale, "out_scale")?;
        non_null(out_offset, "out_offset")?;
        let f = fold_bn(
            &Affine { scale, offset },
            &BatchNorm {
                gamma,
                beta,
                mean,
                var,
                eps,
            },
        )?;
        *out_scale = f.scale;
        *out_offset = f.offset;
        Ok(())
    })
}

/// Compares two built-in perf specs over `n_outputs` outputs.
///
/// # Safety
/// `a` and `b` must be NUL-terminated strings; outputs valid pointers.
#[no_mangle]
pub unsafe extern "C" fn nmpu_perf_compare(
    a: *const c_char,
    b: *const c_char,
    n_outputs: u64,
    speedup: *mut f64,
    area_ratio: *mut f64,
) -> NmpuStatus {
    guard(|| {
        non_null(speedup, "speedup")?;
        non_null(area_ratio, "area_ratio")?;
        let sa = PerfSpec::builtin(str_arg(a, "a")?)?;
        let sb = PerfSpec::builtin(str_arg(b, "b")?)?;
        let c = compare(&sa, &sb, n_outputs)?;
        *speedup = c.speedup;
        *area_ratio = c.area_ratio;
        Ok(())
    })
}

/// Fraction of samples with error at least 0.5 for all 15 architectures in
/// M1-S1, M1-S2, ..., M5-S3 order. `baseline` 0 compares against the 8-bit
/// software output, 1 against the real-valued reference.
///
/// # Safety
/// `fractions` must point to `cap` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn nmpu_explore(
    n: usize,
    seed: u64,
    gain: f64,
    baseline: u8,
    fractions: *mut f64,
    cap: usize,
) -> NmpuStatus {
    guard(|| {
        non_null(fractions, "fractions")?;
        if cap < NMPU_ARCHITECTURES {
            return Err(fail(
                NmpuStatus::BufferTooSmall,
                format!("need {NMPU_ARCHITECTURES} entries, got {cap}"),
            ));
        }
        let mode = match baseline {
            0 => BaselineMode::Int8,
            1 => BaselineMode::Real,
            _ => return Err(fail(NmpuStatus::InvalidArgument, "baseline must be 0 or 1")),
        };
        if n == 0 {
            return Err(fail(NmpuStatus::InvalidArgument, "n must be at least 1"));
        }
        let stim = StimulusSpec {
            n,
            seed,
            gain,
            ..StimulusSpec::default()
        }
        .generate()?;
        let archs = Architecture::all();
        let report = explore(&stim, &archs, mode)?;
        let out = std::slice::from_raw_parts_mut(fractions, NMPU_ARCHITECTURES);
        for (slot, arch) in out.iter_mut().zip(&archs) {
            *slot = report.get(arch).expect("explored").stats.frac_ge_half;
        }
        Ok(())
    })
}

/// Generates a synthetic ADC population.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nmpu_adc_new(
    n: usize,
    cv_target: f64,
    nonlinearity: f64,
    seed: u64,
    out: *mut *mut NmpuAdcHandle,
) -> NmpuStatus {
    guard(|| {
        non_null(out, "out")?;
        let population = PopulationSpec::new(n, cv_target, nonlinearity, seed).generate()?;
        *out = Box::into_raw(Box::new(NmpuAdcHandle { population }));
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or a live pointer from [`nmpu_adc_new`].
#[no_mangle]
pub unsafe extern "C" fn nmpu_adc_free(handle: *mut NmpuAdcHandle) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Number of converters in the population, 0 for a null handle.
///
/// # Safety
/// `handle` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn nmpu_adc_len(handle: *const NmpuAdcHandle) -> usize {
    if handle.is_null() {
        0
    } else {
        (*handle).population.len()
    }
}

/// Converts a normalized current through converter `index`.
///
/// # Safety
/// `handle` must be live and `count` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nmpu_adc_convert(
    handle: *const NmpuAdcHandle,
    index: usize,
    current: f64,
    count: *mut u16,
) -> NmpuStatus {
    guard(|| {
        non_null(handle, "handle")?;
        non_null(count, "count")?;
        let curves = (*handle).population.curves();
        let curve = curves.get(index).ok_or_else(|| {
            fail(NmpuStatus::InvalidArgument, format!("ADC index {index} out of {}", curves.len()))
        })?;
        *count = curve.convert(current);
        Ok(())
    })
}

/// Aggregate CV before correction, after real-valued correction and after
/// register-quantized correction.
///
/// # Safety
/// `handle` must be live; the three outputs valid pointers.
#[no_mangle]
pub unsafe extern "C" fn nmpu_adc_cv(
    handle: *const NmpuAdcHandle,
    cv_before: *mut f64,
    cv_real: *mut f64,
    cv_quantized: *mut f64,
) -> NmpuStatus {
    guard(|| {
        non_null(handle, "handle")?;
        non_null(cv_before, "cv_before")?;
        non_null(cv_real, "cv_real")?;
        non_null(cv_quantized, "cv_quantized")?;
        let pop = &(*handle).population;
        let params = calibrate_affine(pop)?;
        *cv_before = compute_cv(pop, None, false)?.aggregate;
        *cv_real = compute_cv(pop, Some(&params), false)?.aggregate;
        *cv_quantized = compute_cv(pop, Some(&params), true)?.aggregate;
        Ok(())
    })
}
