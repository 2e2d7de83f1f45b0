//! IEEE binary16 emulation.
//!
//! Rounding goes straight from binary64 to binary16 with a single
//! round-to-nearest-even step, so no sticky information is lost on the way.

use std::fmt;

/// Largest finite binary16 value.
pub const FP16_MAX: f64 = 65504.0;
/// Smallest positive normal binary16 value, 2^-14.
pub const FP16_MIN_NORMAL: f64 = 6.103515625e-5;

/// Magnitudes at or above this round to infinity: the midpoint between
/// 65504 and 2^16, and the tie goes to the even neighbour (the infinity).
const OVERFLOW_THRESHOLD: f64 = 65520.0;

#[inline(always)]
fn pow2(k: i32) -> f64 {
    f64::from_bits(((1023 + k) as u64) << 52)
}

const EXP_MASK: u64 = 0x7FF0_0000_0000_0000;
const TWO_POW_42: f64 = 4_398_046_511_104.0;

/// Rounds `x` to the nearest binary16 value (ties to even) and returns that
/// value widened back to binary64. Overflow yields a signed infinity, NaN
/// stays NaN.
///
/// Adding `c = 2^(e+42)`, where `2^e` is the binade of `|x|`, puts the
/// binary16 quantum `2^(e-10)` on the last binary64 mantissa bit, so the
/// hardware add rounds to nearest even and subtracting `c` is exact. Below
/// the normal range the quantum stays at 2^-24, hence the floor on `c`.
/// Everything is straight-line float arithmetic, which keeps loops over
/// this function vectorizable.
#[inline(always)]
pub fn round_to_fp16_value(x: f64) -> f64 {
    let a = x.abs();
    let binade = f64::from_bits(a.to_bits() & EXP_MASK);
    let c = if binade > FP16_MIN_NORMAL { binade } else { FP16_MIN_NORMAL } * TWO_POW_42;
    let r = (a + c) - c;
    let r = if a >= OVERFLOW_THRESHOLD { f64::INFINITY } else { r };
    r.copysign(x)
}

/// A binary16 bit pattern.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Fp16(u16);

impl Fp16 {
    pub const ZERO: Fp16 = Fp16(0);
    pub const ONE: Fp16 = Fp16(0x3C00);
    pub const MAX: Fp16 = Fp16(0x7BFF);
    pub const INFINITY: Fp16 = Fp16(0x7C00);
    pub const NEG_INFINITY: Fp16 = Fp16(0xFC00);
    pub const NAN: Fp16 = Fp16(0x7E00);

    pub const fn from_bits(bits: u16) -> Self {
        Fp16(bits)
    }

    pub const fn to_bits(self) -> u16 {
        self.0
    }

    pub fn from_f64(x: f64) -> Self {
        round_to_fp16(x)
    }

    pub fn from_f32(x: f32) -> Self {
        round_to_fp16(f64::from(x))
    }

    pub fn to_f64(self) -> f64 {
        let sign = if self.0 & 0x8000 != 0 { -1.0 } else { 1.0 };
        let exp = i32::from((self.0 >> 10) & 0x1F);
        let man = f64::from(self.0 & 0x3FF);
        let mag = match exp {
            0 => man * pow2(-24),
            0x1F if man == 0.0 => f64::INFINITY,
            0x1F => f64::NAN,
            _ => (1024.0 + man) * pow2(exp - 25),
        };
        sign * mag
    }

    /// Exact: every binary16 value is representable in binary32.
    pub fn to_f32(self) -> f32 {
        self.to_f64() as f32
    }

    pub fn is_finite(self) -> bool {
        self.0 & 0x7C00 != 0x7C00
    }

    pub fn is_nan(self) -> bool {
        self.0 & 0x7C00 == 0x7C00 && self.0 & 0x3FF != 0
    }
}

impl fmt::Debug for Fp16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fp16({:#06x} = {})", self.0, self.to_f64())
    }
}

impl fmt::Display for Fp16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_f64(), f)
    }
}

impl From<Fp16> for f64 {
    fn from(h: Fp16) -> f64 {
        h.to_f64()
    }
}

impl From<Fp16> for f32 {
    fn from(h: Fp16) -> f32 {
        h.to_f32()
    }
}

/// Nearest binary16 to `x`, ties to even. Values past the finite range
/// overflow to a signed infinity as IEEE prescribes.
pub fn round_to_fp16(x: f64) -> Fp16 {
    let r = round_to_fp16_value(x);
    let sign = if r.is_sign_negative() { 0x8000u16 } else { 0 };
    let a = r.abs();
    let bits = if a.is_nan() {
        return Fp16::NAN;
    } else if a.is_infinite() {
        0x7C00
    } else if a < FP16_MIN_NORMAL {
        // 0..=1023 quanta; an exact 1024 is the smallest normal and encodes
        // to 0x0400, which is what falls out here anyway.
        (a * pow2(24)) as u16
    } else {
        let e = ((a.to_bits() >> 52) as i32) - 1023;
        let man = (a * pow2(10 - e)) as u16 - 1024;
        (((e + 15) as u16) << 10) | man
    };
    Fp16(sign | bits)
}
