//! Seeded synthetic Q, K, V.
//!
//! Every tensor draws from its own ChaCha8 stream of the same seed, so the
//! output depends only on the spec and is identical across platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::attention::{AttentionInput, AttentionError};
use crate::tensor::{Shape4, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthDistribution {
    /// Q, K, V i.i.d. standard normal.
    StandardNormal,
    /// Q and K are a per-channel bias shared by all tokens plus token noise;
    /// V is standard normal.
    ///
    /// Each `(head, channel)` gets a bias of magnitude
    /// `bias_scale * (1 + 2|z|)` with a random sign, so every channel is at
    /// least `bias_scale` away from zero and a few channels stand far out.
    /// The bias is shared across the batch. The noise of every
    /// `(batch, head, channel)` column is standardized to mean 0 and
    /// standard deviation exactly `noise_scale`.
    ChannelOutlier { bias_scale: f32, noise_scale: f32 },
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthSpec {
    pub distribution: SynthDistribution,
    pub shape: Shape4,
    pub seed: u64,
    #[serde(default)]
    pub causal: bool,
}

impl SynthSpec {
    pub fn new(distribution: SynthDistribution, shape: Shape4, seed: u64) -> Self {
        Self {
            distribution,
            shape,
            seed,
            causal: false,
        }
    }

    pub fn with_causal(mut self, causal: bool) -> Self {
        self.causal = causal;
        self
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid shape {0}: every dimension must be at least 1")]
    InvalidShape(Shape4),
    #[error("scales must be finite and non-negative")]
    InvalidScale,
    #[error(transparent)]
    Attention(#[from] AttentionError),
}

const STREAM_Q: u64 = 0;
const STREAM_K: u64 = 1;
const STREAM_V: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f32 {
    StandardNormal.sample(rng)
}

fn standard_normal(shape: Shape4, rng: &mut ChaCha8Rng) -> Tensor4 {
    let data = (0..shape.numel()).map(|_| normal(rng)).collect();
    Tensor4::from_vec(shape, data).expect("length matches shape")
}

fn channel_outlier(shape: Shape4, bias_scale: f32, noise_scale: f32, rng: &mut ChaCha8Rng) -> Tensor4 {
    let (n, d) = (shape.tokens, shape.dim);
    let bias: Vec<f32> = (0..shape.heads * d)
        .map(|_| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * bias_scale * (1.0 + 2.0 * normal(rng).abs())
        })
        .collect();
    let mut t = standard_normal(shape, rng);
    for s in 0..shape.slices() {
        let h = s % shape.heads;
        let head = t.head_mut(s);
        for c in 0..d {
            // Exact standardization in f64 so the column statistics do not
            // depend on the sample size.
            let col = || (0..n).map(|i| f64::from(head[i * d + c]));
            let mean = col().sum::<f64>() / n as f64;
            let var = col().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            let gain = if var > 0.0 {
                f64::from(noise_scale) / var.sqrt()
            } else {
                0.0
            };
            let b = bias[h * d + c];
            for i in 0..n {
                let z = f64::from(head[i * d + c]);
                head[i * d + c] = b + ((z - mean) * gain) as f32;
            }
        }
    }
    t
}

fn check_shape(shape: Shape4) -> Result<(), SynthError> {
    if shape.is_empty() {
        Err(SynthError::InvalidShape(shape))
    } else {
        Ok(())
    }
}

fn check_scales(scales: &[f32]) -> Result<(), SynthError> {
    if scales.iter().all(|s| s.is_finite() && *s >= 0.0) {
        Ok(())
    } else {
        Err(SynthError::InvalidScale)
    }
}

pub fn generate(spec: &SynthSpec) -> Result<AttentionInput, SynthError> {
    let shape = spec.shape;
    check_shape(shape)?;
    let mut rq = stream(spec.seed, STREAM_Q);
    let mut rk = stream(spec.seed, STREAM_K);
    let mut rv = stream(spec.seed, STREAM_V);
    let (q, k) = match spec.distribution {
        SynthDistribution::StandardNormal => (
            standard_normal(shape, &mut rq),
            standard_normal(shape, &mut rk),
        ),
        SynthDistribution::ChannelOutlier {
            bias_scale,
            noise_scale,
        } => {
            check_scales(&[bias_scale, noise_scale])?;
            (
                channel_outlier(shape, bias_scale, noise_scale, &mut rq),
                channel_outlier(shape, bias_scale, noise_scale, &mut rk),
            )
        }
    };
    let v = standard_normal(shape, &mut rv);
    Ok(AttentionInput::new(q, k, v, spec.causal)?)
}

/// A layer whose attention rows are dominated by one "sink" key per key
/// block, with every other key `gap` logits below it.
///
/// With `gap` around 4 to 5 the non-sink probabilities land on the first
/// few INT8 codes of a static `1/127` scale, and since sink and non-sink
/// values point in opposite directions the coarse codes move the output
/// visibly. FP16 probabilities are unaffected.
pub fn sink_layer(shape: Shape4, gap: f32, block_kv: usize, seed: u64) -> Result<AttentionInput, SynthError> {
    check_shape(shape)?;
    check_scales(&[gap])?;
    if block_kv == 0 {
        return Err(SynthError::InvalidShape(shape));
    }
    let d = shape.dim;
    let lift = gap / (d as f32).sqrt();
    let is_sink = |i: usize| (i / d % shape.tokens).is_multiple_of(block_kv);
    let mut rq = stream(seed, STREAM_Q);
    let mut rk = stream(seed, STREAM_K);
    let mut rv = stream(seed, STREAM_V);
    let q = (0..shape.numel()).map(|_| 1.0 + 0.1 * normal(&mut rq)).collect();
    let k = (0..shape.numel())
        .map(|i| 0.1 * normal(&mut rk) + if is_sink(i) { lift } else { 0.0 })
        .collect();
    let v = (0..shape.numel())
        .map(|i| normal(&mut rv) + if is_sink(i) { -3.0 } else { 3.0 })
        .collect();
    let t = |data| Tensor4::from_vec(shape, data).expect("length matches shape");
    Ok(AttentionInput::new(t(q), t(k), t(v), false)?)
}
