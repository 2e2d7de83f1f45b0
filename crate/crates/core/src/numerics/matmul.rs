//! Reference matrix multiplies with emulated accumulator types.
//!
//! Every dot product accumulates in ascending inner index, so results are
//! reproducible bit for bit.

use super::fp16::{round_to_fp16_value, Fp16};
use super::NumericError;
use crate::tensor::Matrix;

/// Largest inner dimension accepted by [`int8_matmul_i32acc`].
/// 127 * 127 * 2^16 < 2^31, so no partial sum can overflow `i32`.
pub const MAX_INT8_INNER_DIM: usize = 1 << 16;

fn check_dims(a: (usize, usize), b: (usize, usize)) -> Result<(), NumericError> {
    if a.1 != b.0 {
        return Err(NumericError::DimensionMismatch { lhs: a, rhs: b });
    }
    Ok(())
}

/// Exact integer dot product of two INT8 vectors.
#[inline]
pub(crate) fn dot_i8(a: &[i8], b: &[i8]) -> i32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| i32::from(x) * i32::from(y))
        .sum()
}

/// `A · B` for INT8 operands with a 32-bit integer accumulator.
pub fn int8_matmul_i32acc(a: &Matrix<i8>, b: &Matrix<i8>) -> Result<Matrix<i32>, NumericError> {
    check_dims((a.rows(), a.cols()), (b.rows(), b.cols()))?;
    let k = a.cols();
    if k > MAX_INT8_INNER_DIM {
        return Err(NumericError::InnerDimTooLarge {
            k,
            max: MAX_INT8_INNER_DIM,
        });
    }
    if a.as_slice().iter().chain(b.as_slice()).any(|&v| v == i8::MIN) {
        return Err(NumericError::Int8OutOfRange);
    }
    // Transpose B once so both operands are walked contiguously.
    let n = b.cols();
    let mut bt = vec![0i8; k * n];
    for r in 0..k {
        for c in 0..n {
            bt[c * k + r] = b.get(r, c);
        }
    }
    let mut out = Vec::with_capacity(a.rows() * n);
    for i in 0..a.rows() {
        let row = a.row(i);
        out.extend((0..n).map(|j| dot_i8(row, &bt[j * k..(j + 1) * k])));
    }
    Ok(Matrix::from_vec(a.rows(), n, out).expect("shape computed above"))
}

/// Accumulates `A · B` into `acc` with binary16 rounding after every add.
///
/// All three buffers hold binary16 values widened to `f64`: `a` is `m × k`,
/// `b` is `k × n`, `acc` is `m × n`. The product of two binary16 values is
/// exact in binary64, and so is its sum with a binary16 accumulator while
/// the result stays inside the binary16 range, so one rounding per add is
/// exactly the hardware's round-to-nearest-even.
///
/// Returns the `(row, col)` of the first accumulator that overflowed.
pub(crate) fn fp16_gemm_accumulate(
    acc: &mut [f64],
    a: &[f64],
    b: &[f64],
    m: usize,
    k: usize,
    n: usize,
) -> Result<(), (usize, usize)> {
    debug_assert_eq!(acc.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    for i in 0..m {
        let out = &mut acc[i * n..(i + 1) * n];
        for (t, &p) in a[i * k..(i + 1) * k].iter().enumerate() {
            if p == 0.0 {
                // x + 0·v == x exactly; skipping keeps the rounding sequence identical.
                continue;
            }
            let brow = &b[t * n..(t + 1) * n];
            for (o, &v) in out.iter_mut().zip(brow) {
                *o = round_to_fp16_value(*o + p * v);
            }
        }
        if let Some(c) = out.iter().position(|x| !x.is_finite()) {
            return Err((i, c));
        }
    }
    Ok(())
}

/// `A · B` with binary16 operands and a binary16 accumulator that is
/// rounded to nearest-even after every addition, in ascending inner index.
pub fn fp16_matmul_fp16acc(
    a: &Matrix<Fp16>,
    b: &Matrix<Fp16>,
) -> Result<Matrix<Fp16>, NumericError> {
    check_dims((a.rows(), a.cols()), (b.rows(), b.cols()))?;
    if a.as_slice().iter().chain(b.as_slice()).any(|h| !h.is_finite()) {
        return Err(NumericError::NonFinite);
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let av: Vec<f64> = a.as_slice().iter().map(|h| h.to_f64()).collect();
    let bv: Vec<f64> = b.as_slice().iter().map(|h| h.to_f64()).collect();
    let mut acc = vec![0.0f64; m * n];
    fp16_gemm_accumulate(&mut acc, &av, &bv, m, k, n)
        .map_err(|(row, col)| NumericError::Fp16Overflow { row, col })?;
    let out = acc.into_iter().map(Fp16::from_f64).collect();
    Ok(Matrix::from_vec(m, n, out).expect("shape computed above"))
}

/// `A · B` accumulated in binary32, the full-precision comparison arm.
pub fn matmul_fp32acc(a: &Matrix<f32>, b: &Matrix<f32>) -> Result<Matrix<f32>, NumericError> {
    check_dims((a.rows(), a.cols()), (b.rows(), b.cols()))?;
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for t in 0..k {
            let p = a.get(i, t);
            for (o, &v) in orow.iter_mut().zip(b.row(t)) {
                *o += p * v;
            }
        }
    }
    Ok(Matrix::from_vec(m, n, out).expect("shape computed above"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn i8m(rows: &[&[i8]]) -> Matrix<i8> {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn int8_small_cases() {
        let c = int8_matmul_i32acc(&i8m(&[&[1, 2]]), &i8m(&[&[3], &[4]])).unwrap();
        assert_eq!(c.as_slice(), &[11]);
        let c = int8_matmul_i32acc(&i8m(&[&[127]]), &i8m(&[&[127]])).unwrap();
        assert_eq!(c.as_slice(), &[16129]);
        let c = int8_matmul_i32acc(&i8m(&[&[-127, 127]]), &i8m(&[&[127], &[127]])).unwrap();
        assert_eq!(c.as_slice(), &[0]);
    }

    #[test]
    fn int8_errors() {
        let err = int8_matmul_i32acc(&i8m(&[&[1, 2]]), &i8m(&[&[3]])).unwrap_err();
        assert!(matches!(err, NumericError::DimensionMismatch { .. }));
        let err = int8_matmul_i32acc(&i8m(&[&[-128]]), &i8m(&[&[1]])).unwrap_err();
        assert_eq!(err, NumericError::Int8OutOfRange);
        let k = MAX_INT8_INNER_DIM + 1;
        let a = Matrix::from_vec(1, k, vec![1i8; k]).unwrap();
        let b = Matrix::from_vec(k, 1, vec![1i8; k]).unwrap();
        assert!(matches!(
            int8_matmul_i32acc(&a, &b),
            Err(NumericError::InnerDimTooLarge { .. })
        ));
    }

    #[test]
    fn int8_inner_dim_at_guard_does_not_overflow() {
        let k = MAX_INT8_INNER_DIM;
        let a = Matrix::from_vec(1, k, vec![127i8; k]).unwrap();
        let b = Matrix::from_vec(k, 1, vec![127i8; k]).unwrap();
        let c = int8_matmul_i32acc(&a, &b).unwrap();
        assert_eq!(i64::from(c.get(0, 0)), 16129 * k as i64);
    }

    fn ones(rows: usize, cols: usize) -> Matrix<Fp16> {
        Matrix::from_vec(rows, cols, vec![Fp16::ONE; rows * cols]).unwrap()
    }

    #[test]
    fn fp16_accumulator_saturates_counting_at_2048() {
        let c = fp16_matmul_fp16acc(&ones(1, 2048), &ones(2048, 1)).unwrap();
        assert_eq!(c.get(0, 0).to_f64(), 2048.0);
        let c = fp16_matmul_fp16acc(&ones(1, 2049), &ones(2049, 1)).unwrap();
        assert_eq!(c.get(0, 0).to_f64(), 2048.0);
        // Once stuck, adding ones never moves it.
        let c = fp16_matmul_fp16acc(&ones(1, 5000), &ones(5000, 1)).unwrap();
        assert_eq!(c.get(0, 0).to_f64(), 2048.0);
    }

    #[test]
    fn fp16_exact_product() {
        let a = Matrix::from_vec(1, 1, vec![Fp16::from_f64(1.5)]).unwrap();
        let b = Matrix::from_vec(1, 1, vec![Fp16::from_f64(2.0)]).unwrap();
        assert_eq!(fp16_matmul_fp16acc(&a, &b).unwrap().get(0, 0).to_f64(), 3.0);
    }

    #[test]
    fn fp16_overflow_is_an_error() {
        let big = Fp16::from_f64(60000.0);
        let a = Matrix::from_vec(1, 2, vec![big, big]).unwrap();
        let b = Matrix::from_vec(2, 1, vec![Fp16::ONE, Fp16::ONE]).unwrap();
        assert_eq!(
            fp16_matmul_fp16acc(&a, &b).unwrap_err(),
            NumericError::Fp16Overflow { row: 0, col: 0 }
        );
    }

    #[test]
    fn fp32_identity_and_small() {
        let id = Matrix::from_rows(&[[1.0f32, 0.0], [0.0, 1.0]]).unwrap();
        let a = Matrix::from_rows(&[[1.5f32, -2.0], [3.25, 4.0]]).unwrap();
        assert_eq!(matmul_fp32acc(&id, &a).unwrap(), a);
        let a = Matrix::from_rows(&[[1.0f32, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[[3.0f32], [4.0]]).unwrap();
        assert_eq!(matmul_fp32acc(&a, &b).unwrap().as_slice(), &[11.0]);
    }
}
