mod common;

use common::*;
use num_bigint::BigInt;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sageattn_core::numerics::*;
use sageattn_core::Matrix;

#[test]
fn fp16_matches_table_oracle() {
    let table = fp16_table();
    let mut rng = ChaCha8Rng::seed_from_u64(0xF16);
    for _ in 0..200_000 {
        let x = tricky_f64(&mut rng, &table);
        assert_eq!(round_to_fp16(x).to_bits(), fp16_oracle(&table, x), "x = {x:e}");
    }
}

#[test]
fn fp16_decode_matches_definition() {
    let table = fp16_table();
    for bits in 0..=u16::MAX {
        let h = Fp16::from_bits(bits);
        if h.is_nan() {
            continue;
        }
        assert_eq!(h.to_f64(), fp16_decode(&table, bits), "{bits:#06x}");
    }
}

#[test]
fn fp8_codes_round_trip_and_decode() {
    for (fmt, kind) in [(Fp8Format::E4M3, Fp8Kind::E4M3), (Fp8Format::E5M2, Fp8Kind::E5M2)] {
        let mut finite = 0;
        for code in 0..=u8::MAX {
            let x = Fp8::from_bits(code, fmt);
            match fp8_decode(kind, code) {
                Some(v) if v.is_finite() => {
                    finite += 1;
                    assert_eq!(x.to_f64(), v);
                    assert_eq!(encode_fp8(v, fmt).to_bits(), code, "{fmt} {code:#04x}");
                }
                Some(v) => assert_eq!(x.to_f64(), v),
                None => assert!(x.to_f64().is_nan()),
            }
            // Every pattern, NaN and infinity included, survives a round trip.
            assert_eq!(encode_fp8(x.to_f64(), fmt).to_bits(), code, "{fmt} {code:#04x}");
        }
        let expected = match fmt {
            Fp8Format::E4M3 => 254,
            Fp8Format::E5M2 => 248,
        };
        assert_eq!(finite, expected);
    }
}

#[test]
fn fp8_rounding_matches_table_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (fmt, kind) in [(Fp8Format::E4M3, Fp8Kind::E4M3), (Fp8Format::E5M2, Fp8Kind::E5M2)] {
        let table = fp8_table(kind);
        for _ in 0..50_000 {
            let x = match rng.random_range(0..3) {
                0 => {
                    let i = rng.random_range(0..table.len() - 1);
                    0.5 * (table[i].1 + table[i + 1].1)
                }
                1 => 2f64.powf(rng.random_range(-22.0..17.0)),
                _ => rng.random_range(-600.0..600.0),
            };
            let x = if rng.random::<bool>() { -x } else { x };
            assert_eq!(encode_fp8(x, fmt).to_bits(), fp8_oracle(&table, x), "{fmt} x = {x:e}");
            assert_eq!(round_to_fp8_value(x, fmt), fp8_decode(kind, fp8_oracle(&table, x)).unwrap());
        }
    }
}

#[test]
fn int8_matmul_matches_bigint() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x18);
    for _ in 0..100 {
        let (m, k, n) = (rng.random_range(1..12), rng.random_range(1..300), rng.random_range(1..12));
        let a: Vec<i8> = (0..m * k).map(|_| rng.random_range(-127..=127)).collect();
        let b: Vec<i8> = (0..k * n).map(|_| rng.random_range(-127..=127)).collect();
        let got = int8_matmul_i32acc(
            &Matrix::from_vec(m, k, a.clone()).unwrap(),
            &Matrix::from_vec(k, n, b.clone()).unwrap(),
        )
        .unwrap();
        let want = bigint_matmul(&a, &b, m, k, n);
        let got: Vec<BigInt> = got.as_slice().iter().map(|&x| BigInt::from(x)).collect();
        assert_eq!(got, want);
    }
}

#[test]
fn int8_extreme_inner_dimension() {
    // 2^16 terms of 127·127 stay inside i32.
    let k = MAX_INT8_INNER_DIM;
    let a = Matrix::from_vec(1, k, vec![127i8; k]).unwrap();
    let b = Matrix::from_vec(k, 1, vec![-127i8; k]).unwrap();
    assert_eq!(int8_matmul_i32acc(&a, &b).unwrap().as_slice(), &[-16129 * k as i32]);
    let a = Matrix::from_vec(1, k + 1, vec![1i8; k + 1]).unwrap();
    let b = Matrix::from_vec(k + 1, 1, vec![1i8; k + 1]).unwrap();
    assert!(matches!(int8_matmul_i32acc(&a, &b), Err(NumericError::InnerDimTooLarge { .. })));
}

#[test]
fn fp16_accumulator_matches_oracle() {
    let table = fp16_table();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC);
    for _ in 0..40 {
        let (m, k, n) = (rng.random_range(1..5), rng.random_range(1..200), rng.random_range(1..5));
        let mut h = |lo: f64, hi: f64| Fp16::from_f64(rng.random_range(lo..hi));
        let a: Vec<Fp16> = (0..m * k).map(|_| h(0.0, 1.0)).collect();
        let b: Vec<Fp16> = (0..k * n).map(|_| h(-4.0, 4.0)).collect();
        let got = fp16_matmul_fp16acc(
            &Matrix::from_vec(m, k, a.clone()).unwrap(),
            &Matrix::from_vec(k, n, b.clone()).unwrap(),
        )
        .unwrap();
        let af: Vec<f64> = a.iter().map(|x| x.to_f64()).collect();
        let bf: Vec<f64> = b.iter().map(|x| x.to_f64()).collect();
        let want = fp16_matmul_oracle(&table, &af, &bf, m, k, n);
        let got: Vec<f64> = got.as_slice().iter().map(|x| x.to_f64()).collect();
        assert_eq!(got, want);
    }
}

#[test]
fn fp16_accumulator_stagnates() {
    for len in [2048usize, 2049, 5000] {
        let ones = Matrix::from_vec(1, len, vec![Fp16::ONE; len]).unwrap();
        let col = Matrix::from_vec(len, 1, vec![Fp16::ONE; len]).unwrap();
        assert_eq!(fp16_matmul_fp16acc(&ones, &col).unwrap().as_slice()[0].to_f64(), 2048.0);
    }
}

proptest! {
    #[test]
    fn fp16_rounding_is_monotone(a in -70000.0f64..70000.0, b in -70000.0f64..70000.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(round_to_fp16_value(lo) <= round_to_fp16_value(hi));
    }

    #[test]
    fn fp16_rounding_is_idempotent_and_close(x in -65504.0f64..65504.0) {
        let r = round_to_fp16_value(x);
        prop_assert_eq!(round_to_fp16_value(r), r);
        // Half an ulp, where the ulp is at least the subnormal quantum.
        let ulp = (x.abs().log2().floor() - 10.0).exp2().max(2f64.powi(-24));
        prop_assert!((r - x).abs() <= 0.5 * ulp);
    }

    #[test]
    fn fp8_saturates_and_is_symmetric(x in -1e6f64..1e6) {
        for fmt in [Fp8Format::E4M3, Fp8Format::E5M2] {
            let r = round_to_fp8_value(x, fmt);
            prop_assert!(r.abs() <= fmt.max_finite());
            prop_assert_eq!(round_to_fp8_value(-x, fmt), -r);
        }
    }

    #[test]
    fn int8_matmul_is_exact(
        (m, k, n, a, b) in (1usize..6, 1usize..40, 1usize..6).prop_flat_map(|(m, k, n)| (
            Just(m), Just(k), Just(n),
            prop::collection::vec(-127i8..=127, m * k),
            prop::collection::vec(-127i8..=127, k * n),
        ))
    ) {
        let got = int8_matmul_i32acc(
            &Matrix::from_vec(m, k, a.clone()).unwrap(),
            &Matrix::from_vec(k, n, b.clone()).unwrap(),
        ).unwrap();
        for (g, w) in got.as_slice().iter().zip(bigint_matmul(&a, &b, m, k, n)) {
            prop_assert_eq!(BigInt::from(*g), w);
        }
    }
}
