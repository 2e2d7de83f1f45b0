//! Symmetric dynamic quantizers, the K-smoothing transform and the static
//! scale used for the softmax numerator.

mod smooth;

pub use smooth::{fold_scale_into_q, smooth_k, SmoothState};

pub(crate) use smooth::{channel_mean, softmax_scale};

use std::fmt;

use crate::numerics::{encode_fp8, Fp8, Fp8Format};
use crate::tensor::Matrix;

/// Largest INT8 magnitude used. The range is symmetric, -128 is never produced.
pub const INT8_MAX: f32 = 127.0;

/// Slack allowed above 1.0 for the softmax numerator.
pub const P_STATIC_TOLERANCE: f32 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QuantError {
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("per-block granularity needs a block size of at least 1")]
    ZeroBlockSize,
    #[error("softmax numerator entry {value} at index {index} is outside [0, 1]")]
    NumeratorOutOfRange { index: usize, value: f32 },
}

/// How many elements share one scale factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Granularity {
    PerTensor,
    /// One scale per row.
    PerToken,
    /// One scale per column.
    PerChannel,
    /// One scale per run of `n` consecutive rows; the last run may be short.
    PerBlock(usize),
}

impl Granularity {
    /// Number of scales a `rows × cols` matrix gets.
    pub fn num_groups(self, rows: usize, cols: usize) -> usize {
        match self {
            Granularity::PerTensor => 1,
            Granularity::PerToken => rows,
            Granularity::PerChannel => cols,
            Granularity::PerBlock(b) => rows.div_ceil(b.max(1)),
        }
    }

    /// Scale index owning element `(row, col)`.
    #[inline]
    pub fn group_of(self, row: usize, col: usize) -> usize {
        match self {
            Granularity::PerTensor => 0,
            Granularity::PerToken => row,
            Granularity::PerChannel => col,
            Granularity::PerBlock(b) => row / b,
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Granularity::PerTensor => f.write_str("per-tensor"),
            Granularity::PerToken => f.write_str("per-token"),
            Granularity::PerChannel => f.write_str("per-channel"),
            Granularity::PerBlock(b) => write!(f, "per-block({b})"),
        }
    }
}

/// Storage type of quantized values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantDtype {
    Int8,
    E4M3,
    E5M2,
}

impl QuantDtype {
    pub const ALL: [QuantDtype; 3] = [QuantDtype::Int8, QuantDtype::E4M3, QuantDtype::E5M2];

    pub fn fp8_format(self) -> Option<Fp8Format> {
        match self {
            QuantDtype::Int8 => None,
            QuantDtype::E4M3 => Some(Fp8Format::E4M3),
            QuantDtype::E5M2 => Some(Fp8Format::E5M2),
        }
    }

    /// Largest representable magnitude; group maxima map onto it.
    pub fn max_value(self) -> f32 {
        match self.fp8_format() {
            None => INT8_MAX,
            Some(f) => f.max_finite() as f32,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            QuantDtype::Int8 => "int8",
            QuantDtype::E4M3 => "e4m3",
            QuantDtype::E5M2 => "e5m2",
        }
    }
}

impl fmt::Display for QuantDtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QuantValues {
    Int8(Vec<i8>),
    /// Raw FP8 codes; the format is given by the matrix dtype.
    Fp8(Vec<u8>),
}

/// A quantized `rows × cols` matrix with its per-group scales.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMatrix {
    rows: usize,
    cols: usize,
    values: QuantValues,
    scales: Vec<f32>,
    granularity: Granularity,
    dtype: QuantDtype,
}

impl QuantizedMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn dtype(&self) -> QuantDtype {
        self.dtype
    }

    pub fn values(&self) -> &QuantValues {
        &self.values
    }

    pub fn int8_values(&self) -> Option<&[i8]> {
        match &self.values {
            QuantValues::Int8(v) => Some(v),
            QuantValues::Fp8(_) => None,
        }
    }

    pub(crate) fn into_int8_values(self) -> Option<Vec<i8>> {
        match self.values {
            QuantValues::Int8(v) => Some(v),
            QuantValues::Fp8(_) => None,
        }
    }

    /// Quantized values as real numbers, before applying scales.
    pub fn decoded_values(&self) -> Vec<f32> {
        match &self.values {
            QuantValues::Int8(v) => v.iter().map(|&x| f32::from(x)).collect(),
            QuantValues::Fp8(v) => {
                let fmt = self.dtype.fp8_format().expect("fp8 values carry an fp8 dtype");
                v.iter().map(|&b| Fp8::from_bits(b, fmt).to_f32()).collect()
            }
        }
    }

    /// Scale applying to element `(row, col)`.
    pub fn scale_of(&self, row: usize, col: usize) -> f32 {
        self.scales[self.granularity.group_of(row, col)]
    }
}

/// Group maxima of `|x|` for every scale group.
fn group_absmax(data: &[f32], rows: usize, cols: usize, g: Granularity) -> Vec<f32> {
    let mut maxes = vec![0.0f32; g.num_groups(rows, cols)];
    for r in 0..rows {
        let row = &data[r * cols..(r + 1) * cols];
        match g {
            Granularity::PerChannel => {
                for (m, &x) in maxes.iter_mut().zip(row) {
                    *m = m.max(x.abs());
                }
            }
            _ => {
                let gi = g.group_of(r, 0);
                let rm = row.iter().fold(0.0f32, |m, &x| m.max(x.abs()));
                maxes[gi] = maxes[gi].max(rm);
            }
        }
    }
    maxes
}

/// Slice-level quantizer shared by [`quantize`] and the kernels.
///
/// Each group gets `scale = max|group| / qmax` and values are
/// `x · (qmax / max|group|)` rounded to the target type. Multiplying by the
/// reciprocal lands the largest element of every group on `±qmax`, and exact
/// ties such as `2 · 127/4 = 63.5` stay exact.
pub(crate) fn quantize_slice(
    data: &[f32],
    rows: usize,
    cols: usize,
    granularity: Granularity,
    dtype: QuantDtype,
) -> Result<QuantizedMatrix, QuantError> {
    debug_assert_eq!(data.len(), rows * cols);
    if granularity == Granularity::PerBlock(0) {
        return Err(QuantError::ZeroBlockSize);
    }
    if let Some(index) = data.iter().position(|x| !x.is_finite()) {
        return Err(QuantError::NonFinite { index });
    }
    let qmax = dtype.max_value();
    let maxes = group_absmax(data, rows, cols, granularity);
    // Zero groups: scale 1, every value 0.
    let scales: Vec<f32> = maxes
        .iter()
        .map(|&m| if m > 0.0 { m / qmax } else { 1.0 })
        .collect();
    let inv: Vec<f32> = maxes
        .iter()
        .map(|&m| if m > 0.0 { qmax / m } else { 0.0 })
        .collect();

    let scaled = |i: usize| -> f32 {
        let (r, c) = (i / cols, i % cols);
        data[i] * inv[granularity.group_of(r, c)]
    };
    let values = match dtype.fp8_format() {
        None => QuantValues::Int8(
            (0..data.len())
                .map(|i| scaled(i).round_ties_even().clamp(-INT8_MAX, INT8_MAX) as i8)
                .collect(),
        ),
        Some(fmt) => QuantValues::Fp8(
            (0..data.len())
                .map(|i| encode_fp8(f64::from(scaled(i)), fmt).to_bits())
                .collect(),
        ),
    };
    Ok(QuantizedMatrix {
        rows,
        cols,
        values,
        scales,
        granularity,
        dtype,
    })
}

/// Dynamically quantizes `a` at the given granularity.
pub fn quantize(
    a: &Matrix<f32>,
    granularity: Granularity,
    dtype: QuantDtype,
) -> Result<QuantizedMatrix, QuantError> {
    quantize_slice(a.as_slice(), a.rows(), a.cols(), granularity, dtype)
}

/// Multiplies every value by the scale of its group.
pub fn dequantize(q: &QuantizedMatrix) -> Matrix<f32> {
    let decoded = q.decoded_values();
    let data = decoded
        .iter()
        .enumerate()
        .map(|(i, &v)| v * q.scale_of(i / q.cols, i % q.cols))
        .collect();
    Matrix::from_vec(q.rows, q.cols, data).expect("shape preserved")
}

/// Builds a quantized matrix from parts; used by tests and file loaders.
pub fn quantized_from_parts(
    rows: usize,
    cols: usize,
    values: QuantValues,
    scales: Vec<f32>,
    granularity: Granularity,
    dtype: QuantDtype,
) -> Option<QuantizedMatrix> {
    let len = match &values {
        QuantValues::Int8(v) => v.len(),
        QuantValues::Fp8(v) => v.len(),
    };
    let ok = len == rows * cols
        && scales.len() == granularity.num_groups(rows, cols)
        && scales.iter().all(|&s| s > 0.0)
        && matches!(values, QuantValues::Int8(_)) == (dtype == QuantDtype::Int8);
    ok.then_some(QuantizedMatrix {
        rows,
        cols,
        values,
        scales,
        granularity,
        dtype,
    })
}

fn check_numerator(p: &[f32]) -> Result<(), QuantError> {
    match p
        .iter()
        .position(|&x| !(0.0..=1.0 + P_STATIC_TOLERANCE).contains(&x))
    {
        Some(index) => Err(QuantError::NumeratorOutOfRange {
            index,
            value: p[index],
        }),
        None => Ok(()),
    }
}

/// Static-scale quantization of a softmax numerator block: entries lie in
/// `[0, 1]`, so the fixed scale `1/qmax` covers them without a max search.
pub(crate) fn quantize_p_static_slice(
    p: &[f32],
    rows: usize,
    cols: usize,
    dtype: QuantDtype,
) -> Result<QuantizedMatrix, QuantError> {
    check_numerator(p)?;
    let qmax = dtype.max_value();
    let values = match dtype.fp8_format() {
        None => QuantValues::Int8(
            p.iter()
                .map(|&x| (x * qmax).round_ties_even().min(INT8_MAX) as i8)
                .collect(),
        ),
        Some(fmt) => QuantValues::Fp8(
            p.iter()
                .map(|&x| encode_fp8(f64::from(x * qmax), fmt).to_bits())
                .collect(),
        ),
    };
    Ok(QuantizedMatrix {
        rows,
        cols,
        values,
        scales: vec![1.0 / qmax],
        granularity: Granularity::PerBlock(rows.max(1)),
        dtype,
    })
}

/// INT8 quantization of a softmax numerator block with the static scale 1/127.
pub fn quantize_p_static(p: &Matrix<f32>) -> Result<QuantizedMatrix, QuantError> {
    quantize_p_static_slice(p.as_slice(), p.rows(), p.cols(), QuantDtype::Int8)
}
