//! Reference implementations written independently of the library: exhaustive
//! table lookups for the float formats and arbitrary-precision integers for
//! matmul.

#![allow(dead_code)]

use num_bigint::BigInt;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Every non-negative finite binary16 value with its bit pattern, ascending,
/// followed by 2^16 standing in for the infinity (0x7C00).
pub fn fp16_table() -> Vec<(u16, f64)> {
    let mut t: Vec<(u16, f64)> = (0u16..0x7C00)
        .map(|bits| {
            let e = i32::from(bits >> 10);
            let m = f64::from(bits & 0x3FF);
            let v = if e == 0 {
                m * 2f64.powi(-24)
            } else {
                (1.0 + m / 1024.0) * 2f64.powi(e - 15)
            };
            (bits, v)
        })
        .collect();
    t.push((0x7C00, 65536.0));
    t
}

/// Nearest entry of an ascending `(code, value)` table; ties pick the even
/// code. Values at or past the last entry clamp to it.
pub fn nearest_code(table: &[(u16, f64)], a: f64) -> u16 {
    let i = table.partition_point(|&(_, v)| v <= a);
    if i == 0 {
        return table[0].0;
    }
    if i == table.len() {
        return table[i - 1].0;
    }
    let (lo, hi) = (table[i - 1], table[i]);
    let (dl, dh) = (a - lo.1, hi.1 - a);
    if dl < dh || (dl == dh && lo.0 % 2 == 0) {
        lo.0
    } else {
        hi.0
    }
}

/// Random binary64 inputs concentrated where binary16 rounding is delicate:
/// exact midpoints, their neighbours, the subnormal range and the overflow
/// boundary.
pub fn tricky_f64(rng: &mut ChaCha8Rng, table: &[(u16, f64)]) -> f64 {
    let sign = if rng.random::<bool>() { -1.0 } else { 1.0 };
    let mag = match rng.random_range(0..6) {
        0 => {
            let i = rng.random_range(0..table.len() - 1);
            0.5 * (table[i].1 + table[i + 1].1)
        }
        1 => {
            let i = rng.random_range(0..table.len() - 1);
            let mid = 0.5 * (table[i].1 + table[i + 1].1);
            if rng.random::<bool>() { mid.next_up() } else { mid.next_down() }
        }
        2 => rng.random_range(0.0..6.103515625e-5 * 2.0),
        3 => rng.random_range(65000.0..66000.0),
        4 => 2f64.powf(rng.random_range(-30.0..17.0)),
        _ => f64::from_bits(rng.random_range(0x3E00_0000_0000_0000u64..0x40F8_0000_0000_0000)),
    };
    sign * mag
}

/// binary16 bits of `x` rounded to nearest even.
pub fn fp16_oracle(table: &[(u16, f64)], x: f64) -> u16 {
    if x.is_nan() {
        return 0x7E00;
    }
    let sign = if x.is_sign_negative() { 0x8000 } else { 0 };
    sign | nearest_code(table, x.abs())
}

pub fn fp16_decode(table: &[(u16, f64)], bits: u16) -> f64 {
    let v = if bits & 0x7FFF >= 0x7C00 {
        f64::INFINITY
    } else {
        table[usize::from(bits & 0x7FFF)].1
    };
    if bits & 0x8000 != 0 {
        -v
    } else {
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fp8Kind {
    E4M3,
    E5M2,
}

/// Decodes an 8-bit code from the format definition. `None` for NaN,
/// infinities are returned as such.
pub fn fp8_decode(kind: Fp8Kind, code: u8) -> Option<f64> {
    let (ebits, mbits, bias) = match kind {
        Fp8Kind::E4M3 => (4, 3, 7),
        Fp8Kind::E5M2 => (5, 2, 15),
    };
    let sign = if code & 0x80 != 0 { -1.0 } else { 1.0 };
    let e = i32::from((code >> mbits) & ((1 << ebits) - 1));
    let m = f64::from(code & ((1 << mbits) - 1));
    let top = (1 << ebits) - 1;
    let scale = f64::from(1u32 << mbits);
    match kind {
        Fp8Kind::E4M3 if e == top && m == 7.0 => return None,
        Fp8Kind::E5M2 if e == top => return if m == 0.0 { Some(sign * f64::INFINITY) } else { None },
        _ => {}
    }
    let mag = if e == 0 {
        m / scale * 2f64.powi(1 - bias)
    } else {
        (1.0 + m / scale) * 2f64.powi(e - bias)
    };
    Some(sign * mag)
}

/// Non-negative finite codes and values of a format, ascending.
pub fn fp8_table(kind: Fp8Kind) -> Vec<(u16, f64)> {
    (0u8..0x80)
        .filter_map(|c| fp8_decode(kind, c).filter(|v| v.is_finite()).map(|v| (u16::from(c), v)))
        .collect()
}

/// Saturating round-to-nearest-even encoding.
pub fn fp8_oracle(table: &[(u16, f64)], x: f64) -> u8 {
    let sign = if x.is_sign_negative() { 0x80 } else { 0 };
    sign | nearest_code(table, x.abs()) as u8
}

/// `A (m×k) · B (k×n)` in arbitrary precision.
pub fn bigint_matmul(a: &[i8], b: &[i8], m: usize, k: usize, n: usize) -> Vec<BigInt> {
    let mut out = vec![BigInt::from(0); m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = BigInt::from(0);
            for t in 0..k {
                acc += BigInt::from(a[i * k + t]) * BigInt::from(b[t * n + j]);
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// `A · B` with every partial sum rounded through the binary16 table.
pub fn fp16_matmul_oracle(table: &[(u16, f64)], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f64;
            for t in 0..k {
                let exact = acc + a[i * k + t] * b[t * n + j];
                acc = fp16_decode(table, fp16_oracle(table, exact));
            }
            out[i * n + j] = acc;
        }
    }
    out
}
