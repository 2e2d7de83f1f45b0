//! Accuracy of an approximate attention output against a reference.
//!
//! All sums run in binary64 regardless of the element type.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    ShapeMismatch(usize, usize),
    #[error("reference is all zeros, relative L1 is undefined")]
    ZeroReference,
}

fn check(a: usize, b: usize) -> Result<(), MetricError> {
    if a != b {
        return Err(MetricError::ShapeMismatch(a, b));
    }
    Ok(())
}

/// `Σ o·o′ / (‖o‖ ‖o′‖)` over the flattened tensors. Returns 0 (and logs a
/// warning) when either side has zero norm.
pub fn cosine_sim<A, B>(reference: &[A], other: &[B]) -> Result<f64, MetricError>
where
    A: Copy + Into<f64>,
    B: Copy + Into<f64>,
{
    check(reference.len(), other.len())?;
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in reference.iter().zip(other) {
        let (a, b): (f64, f64) = (a.into(), b.into());
        dot += a * b;
        na += a * a;
        nb += b * b;
    }
    if na == 0.0 || nb == 0.0 {
        log::warn!("cosine similarity of a zero-norm tensor; returning 0");
        return Ok(0.0);
    }
    Ok(dot / (na * nb).sqrt())
}

/// `Σ|o - o′| / Σ|o|`.
pub fn relative_l1<A, B>(reference: &[A], other: &[B]) -> Result<f64, MetricError>
where
    A: Copy + Into<f64>,
    B: Copy + Into<f64>,
{
    check(reference.len(), other.len())?;
    let (mut diff, mut norm) = (0.0f64, 0.0f64);
    for (&a, &b) in reference.iter().zip(other) {
        let (a, b): (f64, f64) = (a.into(), b.into());
        diff += (a - b).abs();
        norm += a.abs();
    }
    if norm == 0.0 {
        return Err(MetricError::ZeroReference);
    }
    Ok(diff / norm)
}

/// Root mean square of the element differences.
pub fn rmse<A, B>(reference: &[A], other: &[B]) -> Result<f64, MetricError>
where
    A: Copy + Into<f64>,
    B: Copy + Into<f64>,
{
    check(reference.len(), other.len())?;
    if reference.is_empty() {
        return Ok(0.0);
    }
    let sq: f64 = reference
        .iter()
        .zip(other)
        .map(|(&a, &b)| {
            let e = a.into() - b.into();
            e * e
        })
        .sum();
    Ok((sq / reference.len() as f64).sqrt())
}

/// Largest absolute element difference.
pub fn max_abs_diff<A, B>(reference: &[A], other: &[B]) -> Result<f64, MetricError>
where
    A: Copy + Into<f64>,
    B: Copy + Into<f64>,
{
    check(reference.len(), other.len())?;
    Ok(reference
        .iter()
        .zip(other)
        .map(|(&a, &b)| (a.into() - b.into()).abs())
        .fold(0.0, f64::max))
}

/// The three accuracy numbers reported for every kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub cos_sim: f64,
    pub relative_l1: f64,
    pub rmse: f64,
}

impl AccuracyReport {
    pub fn compare<A, B>(reference: &[A], other: &[B]) -> Result<Self, MetricError>
    where
        A: Copy + Into<f64>,
        B: Copy + Into<f64>,
    {
        Ok(Self {
            cos_sim: cosine_sim(reference, other)?,
            relative_l1: relative_l1(reference, other)?,
            rmse: rmse(reference, other)?,
        })
    }

    /// Element-wise mean of several reports.
    pub fn mean(reports: &[AccuracyReport]) -> Option<AccuracyReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        Some(AccuracyReport {
            cos_sim: reports.iter().map(|r| r.cos_sim).sum::<f64>() / n,
            relative_l1: reports.iter().map(|r| r.relative_l1).sum::<f64>() / n,
            rmse: reports.iter().map(|r| r.rmse).sum::<f64>() / n,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine_sim(&[1.0f64, 2.0], &[1.0f64, 2.0]).unwrap(), 1.0);
        assert_eq!(cosine_sim(&[1.0f64, 0.0], &[0.0f64, 1.0]).unwrap(), 0.0);
        let c = cosine_sim(&[1.0f64, 1.0], &[1.0f32, 0.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(cosine_sim(&[0.0f64, 0.0], &[1.0f64, 0.0]).unwrap(), 0.0);
        assert_eq!(
            cosine_sim(&[1.0f64], &[1.0f64, 2.0]).unwrap_err(),
            MetricError::ShapeMismatch(1, 2)
        );
    }

    #[test]
    fn relative_l1_cases() {
        assert_eq!(relative_l1(&[1.0f64, -3.0], &[1.0f64, -3.0]).unwrap(), 0.0);
        assert_eq!(relative_l1(&[2.0f64], &[1.0f64]).unwrap(), 0.5);
        assert_eq!(relative_l1(&[1.0f64, -1.0], &[0.0f64, 0.0]).unwrap(), 1.0);
        assert_eq!(
            relative_l1(&[0.0f64, 0.0], &[1.0f64, 0.0]).unwrap_err(),
            MetricError::ZeroReference
        );
    }

    #[test]
    fn rmse_cases() {
        assert_eq!(rmse(&[1.0f64, 2.0], &[1.0f64, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.0f64, 0.0], &[3.0f64, 4.0]).unwrap(), (25.0f64 / 2.0).sqrt());
        assert_eq!(rmse(&[1.0f64], &[0.0f64]).unwrap(), 1.0);
    }

    #[test]
    fn identical_tensors_give_perfect_report() {
        let x = [0.5f32, -1.25, 3.0];
        let r = AccuracyReport::compare(&x, &x).unwrap();
        assert_eq!(r, AccuracyReport { cos_sim: 1.0, relative_l1: 0.0, rmse: 0.0 });
    }
}
