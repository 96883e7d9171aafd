// SPDX-License-Identifier: Apache-2.0
//! Behavioral IEEE binary16 rounding for the FP16 post-processing baseline.

use crate::nmpu::RealParams;

const MAX_FINITE: f64 = 65504.0;
/// Halfway between the largest finite half and the next power of two.
const OVERFLOW_THRESHOLD: f64 = 65520.0;
const MIN_NORMAL_EXP: i32 = -14;
const MANTISSA_BITS: i32 = 10;

/// Rounds `x` to the nearest binary16 value (ties to even) and returns it as
/// a double. Values beyond the half range become infinite.
pub fn round_to_f16(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    let mag = x.abs();
    if mag >= OVERFLOW_THRESHOLD {
        return f64::INFINITY.copysign(x);
    }
    let exp = (mag.log2().floor() as i32).max(MIN_NORMAL_EXP);
    // log2 can be off by one near powers of two
    let exp = if 2f64.powi(exp) > mag && exp > MIN_NORMAL_EXP {
        exp - 1
    } else if 2f64.powi(exp + 1) <= mag {
        exp + 1
    } else {
        exp
    };
    let ulp = 2f64.powi(exp - MANTISSA_BITS);
    let r = (mag / ulp).round_ties_even() * ulp;
    debug_assert!(r <= MAX_FINITE);
    r.copysign(x)
}

/// Post-processing evaluated in half precision: every operand and
/// intermediate is rounded to binary16, the result is rounded to the
/// nearest integer (ties to even) and saturated to 8-bit signed.
pub fn fp16_baseline(in_p: u16, in_n: u16, params: &RealParams) -> f64 {
    let h = round_to_f16;
    let a = h(h(in_p.into()) * h(params.scale_p));
    let b = h(h(in_n.into()) * h(params.scale_n));
    let mut s = h(h(a - b) + h(params.offset));
    if params.relu {
        s = s.max(0.0);
    }
    s.round_ties_even().clamp(i8::MIN.into(), i8::MAX.into())
}
