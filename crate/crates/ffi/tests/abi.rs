// SPDX-License-Identifier: Apache-2.0

use std::ffi::{CStr, CString};
use std::ptr;

use nmpu_sim::nmpu::{FirstStageMethod, NmpuConfig, SecondStageMethod};
use nmpu_sim_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(nmpu_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn new_raw(sp: u8, sn: u8, shift: u32, off: i8, first: u8, second: u8) -> *mut NmpuConfigHandle {
    let mut h = ptr::null_mut();
    let s = unsafe { nmpu_config_new_raw(sp, sn, shift, off, first, second, true, &mut h) };
    assert_eq!(s, NmpuStatus::Ok, "{}", last_error());
    h
}

#[test]
fn process_matches_core() {
    let h = new_raw(150, 120, 2, -7, 5, 1);
    let core = NmpuConfig::from_raw(150, 120, 2, -7, FirstStageMethod::M5, SecondStageMethod::S1).unwrap();
    for (p, n) in [(0, 0), (1023, 0), (0, 1023), (517, 311), (1023, 1023)] {
        let (mut v, mut o) = (0i8, false);
        let s = unsafe { nmpu_config_process(h, p, n, &mut v, &mut o) };
        assert_eq!(s, NmpuStatus::Ok);
        let want = core.process(p, n).unwrap();
        assert_eq!((v, o), (want.value, want.overflow));
    }
    unsafe { nmpu_config_free(h) };
}

#[test]
fn batch_matches_single() {
    let h = new_raw(200, 90, 1, 30, 1, 3);
    let p: Vec<u16> = (0..64).map(|i| i * 16).collect();
    let n: Vec<u16> = (0..64).map(|i| 1023 - i * 9).collect();
    let mut vals = vec![0i8; 64];
    let mut ovf = vec![0u8; 64];
    let s = unsafe {
        nmpu_config_process_batch(h, p.as_ptr(), n.as_ptr(), 64, vals.as_mut_ptr(), ovf.as_mut_ptr())
    };
    assert_eq!(s, NmpuStatus::Ok);
    for i in 0..64 {
        let (mut v, mut o) = (0i8, false);
        unsafe { nmpu_config_process(h, p[i], n[i], &mut v, &mut o) };
        assert_eq!((vals[i], ovf[i] != 0), (v, o));
    }
    let s = unsafe {
        nmpu_config_process_batch(h, p.as_ptr(), n.as_ptr(), 64, vals.as_mut_ptr(), ptr::null_mut())
    };
    assert_eq!(s, NmpuStatus::Ok);
    unsafe { nmpu_config_free(h) };
}

#[test]
fn error_codes_and_messages() {
    let mut h = ptr::null_mut();
    let s = unsafe { nmpu_config_new_raw(128, 128, 4, 0, 1, 1, true, &mut h) };
    assert_eq!(s, NmpuStatus::InvalidArgument);
    assert!(last_error().contains("shift"));
    assert!(h.is_null());
    let s = unsafe { nmpu_config_new_raw(128, 128, 0, 0, 6, 1, true, &mut h) };
    assert_eq!(s, NmpuStatus::InvalidArgument);
    let s = unsafe { nmpu_config_new_raw(128, 128, 0, 0, 1, 1, true, ptr::null_mut()) };
    assert_eq!(s, NmpuStatus::NullPointer);

    let h = new_raw(128, 128, 0, 0, 1, 1);
    assert_eq!(last_error(), "");
    let (mut v, mut o) = (0i8, false);
    let s = unsafe { nmpu_config_process(h, 1024, 0, &mut v, &mut o) };
    assert_eq!(s, NmpuStatus::Range);
    let s = unsafe { nmpu_config_process(ptr::null(), 1, 0, &mut v, &mut o) };
    assert_eq!(s, NmpuStatus::NullPointer);
    unsafe { nmpu_config_free(h) };
    unsafe { nmpu_config_free(ptr::null_mut()) };

    let (mut a, mut b) = (0.0, 0.0);
    let s = unsafe { nmpu_fold_bn(1.0, 0.0, 1.0, 0.0, 0.0, -1.0, 0.0, &mut a, &mut b) };
    assert_eq!(s, NmpuStatus::Domain);
}

#[test]
fn kv_round_trip() {
    let h = new_raw(99, 140, 3, -100, 2, 2);
    let mut needed = 0usize;
    let s = unsafe { nmpu_config_to_kv(h, ptr::null_mut(), 0, &mut needed) };
    assert_eq!(s, NmpuStatus::Ok);
    let mut small = vec![0 as std::ffi::c_char; 4];
    let s = unsafe { nmpu_config_to_kv(h, small.as_mut_ptr(), small.len(), &mut needed) };
    assert_eq!(s, NmpuStatus::BufferTooSmall);
    let mut buf = vec![0 as std::ffi::c_char; needed];
    let s = unsafe { nmpu_config_to_kv(h, buf.as_mut_ptr(), buf.len(), ptr::null_mut()) };
    assert_eq!(s, NmpuStatus::Ok);
    let text = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_owned();
    let mut h2 = ptr::null_mut();
    let s = unsafe { nmpu_config_from_kv(text.as_ptr(), &mut h2) };
    assert_eq!(s, NmpuStatus::Ok);
    for (p, n) in [(10, 500), (1000, 3), (640, 640)] {
        let (mut v1, mut o1, mut v2, mut o2) = (0, false, 0, false);
        unsafe {
            nmpu_config_process(h, p, n, &mut v1, &mut o1);
            nmpu_config_process(h2, p, n, &mut v2, &mut o2);
        }
        assert_eq!((v1, o1), (v2, o2));
    }
    let bad = CString::new("shift = banana").unwrap();
    let mut h3 = ptr::null_mut();
    assert_ne!(unsafe { nmpu_config_from_kv(bad.as_ptr(), &mut h3) }, NmpuStatus::Ok);
    unsafe {
        nmpu_config_free(h);
        nmpu_config_free(h2);
    }
}

#[test]
fn real_config_and_models() {
    let mut h = ptr::null_mut();
    let s = unsafe { nmpu_config_new_real(0.125, 0.125, 0.0, 5, 1, true, &mut h) };
    assert_eq!(s, NmpuStatus::Ok);
    let (mut v, mut o) = (0i8, false);
    unsafe { nmpu_config_process(h, 800, 0, &mut v, &mut o) };
    assert_eq!(v, 100);
    unsafe { nmpu_config_free(h) };

    assert_eq!(nmpu_reference_value(800, 0, 0.125, 0.125, 0.5, true), 100.5);
    assert_eq!(nmpu_reference_value(0, 800, 0.125, 0.125, 0.5, true), 0.0);
    assert_eq!(nmpu_fp16_baseline(1023, 0, 1.0, 1.0, 0.0, true), 127.0);

    let (mut a, mut b) = (0.0, 0.0);
    let s = unsafe { nmpu_fold_bn(2.0, 1.0, 3.0, 0.5, 1.0, 4.0, 0.0, &mut a, &mut b) };
    assert_eq!(s, NmpuStatus::Ok);
    assert_eq!((a, b), (3.0, 0.5));

    let (x, y) = (CString::new("archA_x64").unwrap(), CString::new("fp16_ref").unwrap());
    let (mut sp, mut ar) = (0.0, 0.0);
    let s = unsafe { nmpu_perf_compare(x.as_ptr(), y.as_ptr(), 256, &mut sp, &mut ar) };
    assert_eq!(s, NmpuStatus::Ok);
    assert_eq!(sp, 139.5);
    assert!((ar - 1666.0 / 211.2).abs() < 1e-12);
    let z = CString::new("nope").unwrap();
    let s = unsafe { nmpu_perf_compare(z.as_ptr(), y.as_ptr(), 256, &mut sp, &mut ar) };
    assert_eq!(s, NmpuStatus::InvalidArgument);
}

#[test]
fn explore_and_adc() {
    let mut fr = [0.0f64; NMPU_ARCHITECTURES];
    let s = unsafe { nmpu_explore(2000, 42, 256.0, 0, fr.as_mut_ptr(), fr.len()) };
    assert_eq!(s, NmpuStatus::Ok);
    assert!(fr.iter().all(|f| (0.0..=1.0).contains(f)));
    let s = unsafe { nmpu_explore(2000, 42, 256.0, 0, fr.as_mut_ptr(), 3) };
    assert_eq!(s, NmpuStatus::BufferTooSmall);

    let mut h = ptr::null_mut();
    assert_eq!(unsafe { nmpu_adc_new(64, 0.07, 0.3, 7, &mut h) }, NmpuStatus::Ok);
    assert_eq!(unsafe { nmpu_adc_len(h) }, 64);
    let mut c = 0u16;
    assert_eq!(unsafe { nmpu_adc_convert(h, 3, 1.0, &mut c) }, NmpuStatus::Ok);
    assert!(c > 900);
    assert_eq!(unsafe { nmpu_adc_convert(h, 64, 1.0, &mut c) }, NmpuStatus::InvalidArgument);
    let (mut b, mut r, mut q) = (0.0, 0.0, 0.0);
    assert_eq!(unsafe { nmpu_adc_cv(h, &mut b, &mut r, &mut q) }, NmpuStatus::Ok);
    assert!(r < b && q < b);
    unsafe { nmpu_adc_free(h) };
    assert_eq!(unsafe { nmpu_adc_new(1, 0.07, 0.3, 7, &mut h) }, NmpuStatus::InvalidArgument);
}
