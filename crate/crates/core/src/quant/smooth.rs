use crate::tensor::Tensor4;

/// Channel means subtracted from K, one `dim`-vector per `(batch, head)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothState {
    dim: usize,
    mean: Vec<f32>,
}

impl SmoothState {
    /// Mean vector of slice `index = b * heads + h`.
    pub fn mean(&self, index: usize) -> &[f32] {
        &self.mean[index * self.dim..(index + 1) * self.dim]
    }

    pub fn num_slices(&self) -> usize {
        self.mean.len() / self.dim.max(1)
    }
}

/// Pairwise (cascade) summation in binary32.
pub(crate) fn pairwise_sum(xs: &[f32]) -> f32 {
    const LEAF: usize = 8;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let (lo, hi) = xs.split_at(xs.len() / 2);
    pairwise_sum(lo) + pairwise_sum(hi)
}

/// Per-channel token mean of one `tokens × dim` slice.
pub(crate) fn channel_mean(k: &[f32], tokens: usize, dim: usize) -> Vec<f32> {
    let mut column = vec![0.0f32; tokens];
    (0..dim)
        .map(|c| {
            for (t, slot) in column.iter_mut().enumerate() {
                *slot = k[t * dim + c];
            }
            pairwise_sum(&column) / tokens as f32
        })
        .collect()
}

/// Subtracts the per-`(batch, head)` channel mean over tokens from K.
///
/// Every score row `q·kᵀ` shifts by the constant `q·mean`, which row-wise
/// softmax ignores, while the bias shared by all tokens no longer inflates
/// the quantization range.
pub fn smooth_k(k: &Tensor4) -> (Tensor4, SmoothState) {
    let shape = k.shape();
    let (n, d) = (shape.tokens, shape.dim);
    let mut out = k.clone();
    let mut mean = Vec::with_capacity(shape.slices() * d);
    for s in 0..shape.slices() {
        let mu = channel_mean(k.head(s), n, d);
        for row in out.head_mut(s).chunks_exact_mut(d) {
            for (x, m) in row.iter_mut().zip(&mu) {
                *x -= m;
            }
        }
        mean.extend(mu);
    }
    (out, SmoothState { dim: d, mean })
}

/// Scales Q by `1/√d` so the kernels can quantize the folded tensor and skip
/// rescaling the scores.
///
/// # Panics
/// If `dim` is zero.
pub fn fold_scale_into_q(q: &Tensor4, dim: usize) -> Tensor4 {
    assert!(dim >= 1, "head dimension must be at least 1");
    let scale = softmax_scale(dim);
    q.map(|&x| x * scale)
}

/// `1/√d` in binary32.
pub(crate) fn softmax_scale(dim: usize) -> f32 {
    (dim as f32).sqrt().recip()
}
