//! OCP 8-bit floating point formats (E4M3 and E5M2).
//!
//! Encoding rounds to nearest, ties to even, and saturates finite values at
//! the largest finite magnitude, so quantized data never becomes
//! non-finite. Non-finite inputs carry over the way IEEE conversions do:
//! NaN keeps its sign and the top payload bits, and infinity maps to the
//! E5M2 infinity (E4M3 has none and saturates). Together with the payload
//! carried by [`Fp8::to_f64`] this makes decode-then-encode the identity on
//! all 256 codes.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Fp8Format {
    /// 4 exponent bits, 3 mantissa bits, bias 7, no infinities. Max 448.
    E4M3,
    /// 5 exponent bits, 2 mantissa bits, bias 15, IEEE-style specials. Max 57344.
    E5M2,
}

impl Fp8Format {
    pub const fn mantissa_bits(self) -> u32 {
        match self {
            Fp8Format::E4M3 => 3,
            Fp8Format::E5M2 => 2,
        }
    }

    pub const fn exponent_bias(self) -> i32 {
        match self {
            Fp8Format::E4M3 => 7,
            Fp8Format::E5M2 => 15,
        }
    }

    pub const fn max_finite(self) -> f64 {
        match self {
            Fp8Format::E4M3 => 448.0,
            Fp8Format::E5M2 => 57344.0,
        }
    }

    /// Unbiased exponent of the smallest normal value.
    const fn min_normal_exp(self) -> i32 {
        1 - self.exponent_bias()
    }

    pub const fn name(self) -> &'static str {
        match self {
            Fp8Format::E4M3 => "e4m3",
            Fp8Format::E5M2 => "e5m2",
        }
    }
}

impl fmt::Display for Fp8Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[inline(always)]
fn pow2(k: i32) -> f64 {
    f64::from_bits(((1023 + k) as u64) << 52)
}

/// Nearest value representable in `format`, saturating finite values at its
/// max finite. Returned widened to binary64.
#[inline]
pub fn round_to_fp8_value(x: f64, format: Fp8Format) -> f64 {
    let a = x.abs();
    let max = format.max_finite();
    if a.is_nan() || (a.is_infinite() && format == Fp8Format::E5M2) {
        return x;
    }
    if a >= max {
        return max.copysign(x);
    }
    let m = format.mantissa_bits() as i32;
    let min_exp = format.min_normal_exp();
    let e = (((a.to_bits() >> 52) as i32) - 1023).max(min_exp);
    // Quantum of the binade (or of the subnormal range once clamped).
    let q = e - m;
    ((a * pow2(-q)).round_ties_even() * pow2(q)).copysign(x)
}

/// An 8-bit float code together with its format.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fp8 {
    format: Fp8Format,
    bits: u8,
}

impl Fp8 {
    pub const fn from_bits(bits: u8, format: Fp8Format) -> Self {
        Fp8 { format, bits }
    }

    pub const fn to_bits(self) -> u8 {
        self.bits
    }

    pub const fn format(self) -> Fp8Format {
        self.format
    }

    pub fn to_f64(self) -> f64 {
        let m = self.format.mantissa_bits();
        let e_bits = 7 - m;
        let sign = if self.bits & 0x80 != 0 { -1.0 } else { 1.0 };
        let exp = i32::from((self.bits >> m) & ((1 << e_bits) - 1));
        let man = self.bits & ((1 << m) - 1);
        let exp_all_ones = exp == (1 << e_bits) - 1;
        let is_nan = match self.format {
            Fp8Format::E4M3 => exp_all_ones && man == 0x7,
            Fp8Format::E5M2 => exp_all_ones && man != 0,
        };
        if is_nan {
            // Sign and payload left-aligned in the binary64 mantissa.
            let sign = u64::from(self.bits >> 7) << 63;
            return f64::from_bits(sign | 0x7FF << 52 | u64::from(man) << (52 - m));
        }
        let mag = match self.format {
            Fp8Format::E5M2 if exp_all_ones => f64::INFINITY,
            _ if exp == 0 => f64::from(man) * pow2(self.format.min_normal_exp() - m as i32),
            _ => {
                f64::from((1u32 << m) | u32::from(man))
                    * pow2(exp - self.format.exponent_bias() - m as i32)
            }
        };
        sign * mag
    }

    pub fn to_f32(self) -> f32 {
        self.to_f64() as f32
    }

    pub fn is_finite(self) -> bool {
        self.to_f64().is_finite()
    }
}

impl fmt::Debug for Fp8 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fp8::{}({:#04x} = {})", self.format, self.bits, self.to_f64())
    }
}

/// Encodes `x` into `format`; see the module docs for non-finite inputs.
pub fn encode_fp8(x: f64, format: Fp8Format) -> Fp8 {
    let m = format.mantissa_bits();
    let sign = if x.is_sign_negative() { 0x80u8 } else { 0 };
    if x.is_nan() {
        let bits = match format {
            // The only NaN pattern, S.1111.111.
            Fp8Format::E4M3 => 0x7F,
            Fp8Format::E5M2 => {
                let payload = ((x.to_bits() >> (52 - m)) & 0x3) as u8;
                // A payload that does not reach the top bits becomes quiet.
                0x7C | if payload == 0 { 0x2 } else { payload }
            }
        };
        return Fp8 { format, bits: sign | bits };
    }
    let r = round_to_fp8_value(x, format);
    if r.is_infinite() {
        return Fp8 { format, bits: sign | 0x7C };
    }
    let a = r.abs();
    let min_exp = format.min_normal_exp();
    let bits = if a < pow2(min_exp) {
        (a * pow2(-(min_exp - m as i32))) as u8
    } else {
        let e = ((a.to_bits() >> 52) as i32) - 1023;
        let man = (a * pow2(m as i32 - e)) as u32 - (1 << m);
        (((e + format.exponent_bias()) as u32) << m | man) as u8
    };
    Fp8 {
        format,
        bits: sign | bits,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturates_at_max_finite() {
        assert_eq!(encode_fp8(448.0, Fp8Format::E4M3).to_f64(), 448.0);
        assert_eq!(encode_fp8(500.0, Fp8Format::E4M3).to_f64(), 448.0);
        assert_eq!(encode_fp8(-1e9, Fp8Format::E4M3).to_f64(), -448.0);
        assert_eq!(encode_fp8(57344.0, Fp8Format::E5M2).to_f64(), 57344.0);
        assert_eq!(encode_fp8(1e9, Fp8Format::E5M2).to_f64(), 57344.0);
        assert_eq!(encode_fp8(f64::INFINITY, Fp8Format::E4M3).to_f64(), 448.0);
    }

    #[test]
    fn zero_and_specials() {
        assert_eq!(encode_fp8(0.0, Fp8Format::E5M2).to_f64(), 0.0);
        assert_eq!(encode_fp8(-0.0, Fp8Format::E4M3).to_bits(), 0x80);
        assert!(Fp8::from_bits(0x7F, Fp8Format::E4M3).to_f64().is_nan());
        assert_eq!(Fp8::from_bits(0x7E, Fp8Format::E4M3).to_f64(), 448.0);
        assert_eq!(Fp8::from_bits(0x7C, Fp8Format::E5M2).to_f64(), f64::INFINITY);
        assert_eq!(Fp8::from_bits(0x7B, Fp8Format::E5M2).to_f64(), 57344.0);
        assert!(encode_fp8(f64::NAN, Fp8Format::E5M2).to_f64().is_nan());
        assert_eq!(encode_fp8(f64::NEG_INFINITY, Fp8Format::E5M2).to_bits(), 0xFC);
    }

    #[test]
    fn every_code_round_trips() {
        for format in [Fp8Format::E4M3, Fp8Format::E5M2] {
            for bits in 0..=u8::MAX {
                let x = Fp8::from_bits(bits, format);
                assert_eq!(encode_fp8(x.to_f64(), format).to_bits(), bits, "{format} {bits:#04x}");
            }
        }
    }

    #[test]
    fn subnormals() {
        // E4M3 smallest subnormal 2^-9, E5M2 2^-16.
        assert_eq!(Fp8::from_bits(0x01, Fp8Format::E4M3).to_f64(), 2f64.powi(-9));
        assert_eq!(Fp8::from_bits(0x01, Fp8Format::E5M2).to_f64(), 2f64.powi(-16));
        assert_eq!(encode_fp8(2f64.powi(-10), Fp8Format::E4M3).to_bits(), 0);
        assert_eq!(encode_fp8(1.5 * 2f64.powi(-9), Fp8Format::E4M3).to_bits(), 0x02);
    }

    #[test]
    fn ties_to_even() {
        // E4M3 values around 1: 1, 1.125, 1.25 ...
        assert_eq!(encode_fp8(1.0625, Fp8Format::E4M3).to_f64(), 1.0);
        assert_eq!(encode_fp8(1.1875, Fp8Format::E4M3).to_f64(), 1.25);
        // E5M2: 1, 1.25, 1.5
        assert_eq!(encode_fp8(1.125, Fp8Format::E5M2).to_f64(), 1.0);
        assert_eq!(encode_fp8(1.375, Fp8Format::E5M2).to_f64(), 1.5);
    }
}
