//! Full-precision reference attention, the tiled FlashAttention baseline and
//! the quantized kernels, all driven by the same tiling loop.

mod config;
mod flash;
mod naive;
mod online;
mod sage;
mod tiling;

pub use config::{KernelConfig, KernelVariant, PvPath, QkGranularity, DEFAULT_BLOCK_KV, DEFAULT_BLOCK_Q};
pub use flash::flash_attention_fp;
pub use naive::naive_attention;
pub use online::OnlineSoftmaxState;
pub use sage::{sage_attention, sage_attention_with_stats, KernelStats};
pub use tiling::{apply_causal_tiling, TileKind};

use crate::quant::QuantError;
use crate::tensor::{Shape4, Tensor4};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AttentionError {
    #[error("Q, K and V shapes differ: {q}, {k}, {v}")]
    ShapeMismatch { q: Shape4, k: Shape4, v: Shape4 },
    #[error("empty shape {0}")]
    EmptyShape(Shape4),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("block sizes must be at least 1 (got block_q={block_q}, block_kv={block_kv})")]
    InvalidBlockSize { block_q: usize, block_kv: usize },
    #[error("quantization failed: {0}")]
    Quant(#[from] QuantError),
    #[error("binary16 accumulator overflow in slice {slice}, query row {row}, channel {col}")]
    Fp16Overflow { slice: usize, row: usize, col: usize },
}

/// Q, K and V of one attention call, all `(batch, heads, tokens, dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionInput {
    pub q: Tensor4,
    pub k: Tensor4,
    pub v: Tensor4,
    pub causal: bool,
}

impl AttentionInput {
    /// Validates shapes and finiteness.
    pub fn new(q: Tensor4, k: Tensor4, v: Tensor4, causal: bool) -> Result<Self, AttentionError> {
        let input = Self { q, k, v, causal };
        input.validate()?;
        Ok(input)
    }

    pub fn shape(&self) -> Shape4 {
        self.q.shape()
    }

    pub fn validate(&self) -> Result<(), AttentionError> {
        let (q, k, v) = (self.q.shape(), self.k.shape(), self.v.shape());
        if q != k || q != v {
            return Err(AttentionError::ShapeMismatch { q, k, v });
        }
        if q.is_empty() {
            return Err(AttentionError::EmptyShape(q));
        }
        for (name, t) in [("Q", &self.q), ("K", &self.k), ("V", &self.v)] {
            if !t.is_finite() {
                return Err(AttentionError::NonFinite(name));
            }
        }
        Ok(())
    }

    /// Splits along the batch axis into batch-size-1 inputs.
    pub fn split_batch(&self) -> Vec<AttentionInput> {
        (0..self.shape().batch)
            .map(|b| AttentionInput {
                q: self.q.batch_item(b),
                k: self.k.batch_item(b),
                v: self.v.batch_item(b),
                causal: self.causal,
            })
            .collect()
    }
}

/// One unit of parallel work: a query block of one `(batch, head)` slice.
#[derive(Debug, Clone)]
pub(crate) struct QueryTile {
    pub slice: usize,
    pub rows: std::ops::Range<usize>,
}

pub(crate) fn query_tiles(shape: Shape4, block_q: usize) -> Vec<QueryTile> {
    let n = shape.tokens;
    let blocks = n.div_ceil(block_q);
    (0..shape.slices())
        .flat_map(|slice| {
            (0..blocks).map(move |block| QueryTile {
                slice,
                rows: block * block_q..((block + 1) * block_q).min(n),
            })
        })
        .collect()
}

/// Writes per-tile output rows back into a tensor, in tile order.
pub(crate) fn assemble(shape: Shape4, tiles: &[QueryTile], blocks: Vec<Vec<f32>>) -> Tensor4 {
    let d = shape.dim;
    let mut out = Tensor4::zeros(shape);
    for (tile, rows) in tiles.iter().zip(blocks) {
        let head = out.head_mut(tile.slice);
        head[tile.rows.start * d..tile.rows.end * d].copy_from_slice(&rows);
    }
    out
}
