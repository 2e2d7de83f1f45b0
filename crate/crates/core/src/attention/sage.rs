//! The quantized attention kernels.
//!
//! Per `(batch, head)` slice, K is smoothed, Q is pre-scaled by `1/√d`, and
//! both are quantized at the configured granularity. Each query block then
//! walks the key blocks in order: dequantized scores from an integer (or
//! FP8) matmul feed the binary32 online softmax, and `P̃ V` goes through the
//! configured path into the running output block.

use serde::{Deserialize, Serialize};

use super::tiling::{classify, TileKind};
use super::{
    assemble, query_tiles, AttentionError, AttentionInput, KernelConfig, OnlineSoftmaxState,
    PvPath, QueryTile,
};
use crate::numerics::{dot_i8, fp16_gemm_accumulate, round_to_fp16_value};
use crate::parallel;
use crate::quant::{
    channel_mean, quantize_p_static_slice, quantize_slice, softmax_scale, Granularity,
    QuantDtype, QuantizedMatrix,
};
use crate::tensor::Tensor4;

/// Counters collected while running a kernel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelStats {
    /// Multiply-accumulates in the `Q Kᵀ` stage.
    pub s_stage_macs: u64,
    /// Multiply-accumulates in the `P̃ V` stage.
    pub pv_stage_macs: u64,
    /// Numerator elements quantized with the static scale.
    pub p_static_elements: u64,
    /// Of those, how many differ from per-token dynamic quantization.
    pub p_static_mismatches: u64,
    /// Numerator elements in the first key block of each query row.
    pub p_first_block_elements: u64,
    /// Of those, how many differ from per-token dynamic quantization.
    pub p_first_block_mismatches: u64,
    /// Largest static-scale INT8 code emitted.
    pub p_max_code: i32,
}

impl KernelStats {
    fn merge(&mut self, other: &KernelStats) {
        self.s_stage_macs += other.s_stage_macs;
        self.pv_stage_macs += other.pv_stage_macs;
        self.p_static_elements += other.p_static_elements;
        self.p_static_mismatches += other.p_static_mismatches;
        self.p_first_block_elements += other.p_first_block_elements;
        self.p_first_block_mismatches += other.p_first_block_mismatches;
        self.p_max_code = self.p_max_code.max(other.p_max_code);
    }
}

/// Quantized Q or K of one slice, with scales expanded to one per token.
enum QkOperand {
    Int8(Vec<i8>),
    /// FP8 values decoded to binary32 (exact).
    Real(Vec<f32>),
}

enum VOperand {
    /// Binary16 values widened to binary64.
    Fp16(Vec<f64>),
    /// Transposed (`dim × tokens`) INT8 values with per-channel scales.
    Int8T { values: Vec<i8>, scales: Vec<f32> },
    /// Transposed decoded FP8 values with per-channel scales.
    RealT { values: Vec<f32>, scales: Vec<f32> },
}

struct PreparedSlice {
    q: QkOperand,
    q_scale: Vec<f32>,
    k: QkOperand,
    k_scale: Vec<f32>,
    v: VOperand,
}

/// Expands group scales to one scale per row (Q/K granularities never
/// depend on the column).
fn row_scales(qm: &QuantizedMatrix) -> Vec<f32> {
    let g = qm.granularity();
    (0..qm.rows()).map(|r| qm.scales()[g.group_of(r, 0)]).collect()
}

fn qk_operand(qm: QuantizedMatrix) -> QkOperand {
    if qm.dtype() == QuantDtype::Int8 {
        QkOperand::Int8(qm.into_int8_values().expect("int8 dtype"))
    } else {
        QkOperand::Real(qm.decoded_values())
    }
}

fn transpose<T: Copy + Default>(data: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::default(); data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

fn prepare_slice(
    input: &AttentionInput,
    config: &KernelConfig,
    slice: usize,
) -> Result<PreparedSlice, AttentionError> {
    let shape = input.shape();
    let (n, d) = (shape.tokens, shape.dim);

    let scale = softmax_scale(d);
    let q: Vec<f32> = input.q.head(slice).iter().map(|&x| x * scale).collect();
    let mut k = input.k.head(slice).to_vec();
    if config.smooth_k {
        let mean = channel_mean(&k, n, d);
        for row in k.chunks_exact_mut(d) {
            row.iter_mut().zip(&mean).for_each(|(x, m)| *x -= m);
        }
    }

    let qq = quantize_slice(&q, n, d, config.qk_granularity.for_block(config.block_q), config.qk_dtype)?;
    let kq = quantize_slice(&k, n, d, config.qk_granularity.for_block(config.block_kv), config.qk_dtype)?;
    let (q_scale, k_scale) = (row_scales(&qq), row_scales(&kq));

    let v = input.v.head(slice);
    let v = match config.pv_path {
        PvPath::Fp16Acc | PvPath::Fp16Fp32Acc => {
            VOperand::Fp16(v.iter().map(|&x| round_to_fp16_value(f64::from(x))).collect())
        }
        PvPath::Quantized(dtype) => {
            let vq = quantize_slice(v, n, d, Granularity::PerChannel, dtype)?;
            let scales = vq.scales().to_vec();
            if dtype == QuantDtype::Int8 {
                let values = transpose(vq.int8_values().expect("int8 dtype"), n, d);
                VOperand::Int8T { values, scales }
            } else {
                let values = transpose(&vq.decoded_values(), n, d);
                VOperand::RealT { values, scales }
            }
        }
    };
    Ok(PreparedSlice {
        q: qk_operand(qq),
        q_scale,
        k: qk_operand(kq),
        k_scale,
        v,
    })
}

/// Output accumulator of one query block.
enum Accumulator {
    /// Binary16 values widened to binary64.
    Fp16(Vec<f64>),
    Fp32(Vec<f32>),
}

struct TileResult {
    rows: Vec<f32>,
    stats: KernelStats,
}

fn run_tile(
    input: &AttentionInput,
    config: &KernelConfig,
    prep: &PreparedSlice,
    tile: &QueryTile,
) -> Result<TileResult, AttentionError> {
    let shape = input.shape();
    let (n, d) = (shape.tokens, shape.dim);
    let rows = tile.rows.clone();
    let bq = rows.len();
    let mut stats = KernelStats::default();

    let mut state = OnlineSoftmaxState::new(bq);
    let mut acc = match config.pv_path {
        PvPath::Fp16Acc => Accumulator::Fp16(vec![0.0; bq * d]),
        _ => Accumulator::Fp32(vec![0.0; bq * d]),
    };
    let mut s: Vec<f32> = Vec::with_capacity(bq * config.block_kv);
    let mut p16: Vec<f64> = Vec::new();
    let mut first_block = true;

    for k0 in (0..n).step_by(config.block_kv) {
        let cols = k0..(k0 + config.block_kv).min(n);
        let kind = if input.causal {
            classify(&rows, &cols)
        } else {
            TileKind::Full
        };
        if kind == TileKind::Skip {
            continue;
        }
        let bkv = cols.len();

        // S = dequant(Q̂ K̂ᵀ), binary32.
        s.clear();
        for r in rows.clone() {
            let sq = prep.q_scale[r];
            for c in cols.clone() {
                if kind == TileKind::Diagonal && c > r {
                    s.push(f32::NEG_INFINITY);
                    continue;
                }
                let raw = match (&prep.q, &prep.k) {
                    (QkOperand::Int8(q), QkOperand::Int8(k)) => {
                        dot_i8(&q[r * d..(r + 1) * d], &k[c * d..(c + 1) * d]) as f32
                    }
                    (QkOperand::Real(q), QkOperand::Real(k)) => q[r * d..(r + 1) * d]
                        .iter()
                        .zip(&k[c * d..(c + 1) * d])
                        .map(|(a, b)| a * b)
                        .sum(),
                    _ => unreachable!("Q and K share a dtype"),
                };
                s.push(raw * sq * prep.k_scale[c]);
            }
        }
        stats.s_stage_macs += (bq * bkv * d) as u64;

        let alpha = state.update(&mut s, bkv);
        stats.pv_stage_macs += (bq * bkv * d) as u64;

        match (&mut acc, &prep.v) {
            (Accumulator::Fp16(o), VOperand::Fp16(v)) => {
                for (orow, &a) in o.chunks_exact_mut(d).zip(&alpha) {
                    if a != 1.0 {
                        let a = f64::from(a);
                        orow.iter_mut().for_each(|x| *x = round_to_fp16_value(*x * a));
                    }
                }
                p16.clear();
                p16.extend(s.iter().map(|&p| round_to_fp16_value(f64::from(p))));
                fp16_gemm_accumulate(o, &p16, &v[k0 * d..cols.end * d], bq, bkv, d).map_err(
                    |(row, col)| AttentionError::Fp16Overflow {
                        slice: tile.slice,
                        row: rows.start + row,
                        col,
                    },
                )?;
            }
            (Accumulator::Fp32(o), VOperand::Fp16(v)) => {
                for (r, orow) in o.chunks_exact_mut(d).enumerate() {
                    let a = alpha[r];
                    orow.iter_mut().for_each(|x| *x *= a);
                    for (t, &p) in s[r * bkv..(r + 1) * bkv].iter().enumerate() {
                        let p = round_to_fp16_value(f64::from(p)) as f32;
                        let vrow = &v[(k0 + t) * d..(k0 + t + 1) * d];
                        for (x, &vv) in orow.iter_mut().zip(vrow) {
                            *x += p * vv as f32;
                        }
                    }
                }
            }
            (Accumulator::Fp32(o), VOperand::Int8T { values, scales }) => {
                let pq = quantize_p_static_slice(&s, bq, bkv, QuantDtype::Int8)?;
                let dp = pq.scales()[0];
                let pv = pq.int8_values().expect("int8 dtype");
                record_static_scale(&mut stats, &s, pv, bq, bkv, first_block)?;
                for (r, orow) in o.chunks_exact_mut(d).enumerate() {
                    let a = alpha[r];
                    let prow = &pv[r * bkv..(r + 1) * bkv];
                    for (c, x) in orow.iter_mut().enumerate() {
                        let vcol = &values[c * n + k0..c * n + cols.end];
                        let dot = dot_i8(prow, vcol) as f32;
                        *x = *x * a + dot * (dp * scales[c]);
                    }
                }
            }
            (Accumulator::Fp32(o), VOperand::RealT { values, scales }) => {
                let dtype = match config.pv_path {
                    PvPath::Quantized(dt) => dt,
                    _ => unreachable!("real-valued V only on the quantized path"),
                };
                let pq = quantize_p_static_slice(&s, bq, bkv, dtype)?;
                let dp = pq.scales()[0];
                let pv = pq.decoded_values();
                for (r, orow) in o.chunks_exact_mut(d).enumerate() {
                    let a = alpha[r];
                    let prow = &pv[r * bkv..(r + 1) * bkv];
                    for (c, x) in orow.iter_mut().enumerate() {
                        let vcol = &values[c * n + k0..c * n + cols.end];
                        let dot: f32 = prow.iter().zip(vcol).map(|(p, v)| p * v).sum();
                        *x = *x * a + dot * (dp * scales[c]);
                    }
                }
            }
            _ => unreachable!("accumulator matches the PV path"),
        }
        first_block = false;
    }

    let out = match acc {
        Accumulator::Fp16(o) => o
            .chunks_exact(d)
            .zip(state.row_sum())
            .flat_map(|(row, &l)| row.iter().map(move |&x| x as f32 / l))
            .collect(),
        Accumulator::Fp32(mut o) => {
            for (row, &l) in o.chunks_exact_mut(d).zip(state.row_sum()) {
                row.iter_mut().for_each(|x| *x /= l);
            }
            o
        }
    };
    Ok(TileResult { rows: out, stats })
}

/// Compares static-scale codes against per-token dynamic quantization of
/// the same numerator block.
fn record_static_scale(
    stats: &mut KernelStats,
    p: &[f32],
    codes: &[i8],
    rows: usize,
    cols: usize,
    first_block: bool,
) -> Result<(), AttentionError> {
    let per_token = quantize_slice(p, rows, cols, Granularity::PerToken, QuantDtype::Int8)?;
    let reference = per_token.int8_values().expect("int8 dtype");
    let mismatches = codes.iter().zip(reference).filter(|(a, b)| a != b).count() as u64;
    let max_code = codes.iter().copied().max().map_or(0, i32::from);
    stats.p_static_elements += codes.len() as u64;
    stats.p_static_mismatches += mismatches;
    stats.p_max_code = stats.p_max_code.max(max_code);
    if first_block {
        stats.p_first_block_elements += codes.len() as u64;
        stats.p_first_block_mismatches += mismatches;
    }
    Ok(())
}

/// Runs the quantized kernel described by `config`.
pub fn sage_attention(input: &AttentionInput, config: &KernelConfig) -> Result<Tensor4, AttentionError> {
    sage_attention_with_stats(input, config).map(|(o, _)| o)
}

/// Like [`sage_attention`], also returning the kernel counters.
pub fn sage_attention_with_stats(
    input: &AttentionInput,
    config: &KernelConfig,
) -> Result<(Tensor4, KernelStats), AttentionError> {
    config.validate()?;
    input.validate()?;
    let shape = input.shape();

    let slices: Vec<usize> = (0..shape.slices()).collect();
    let prepared: Vec<PreparedSlice> = parallel::map(&slices, |&s| prepare_slice(input, config, s))
        .into_iter()
        .collect::<Result<_, _>>()?;

    let tiles = query_tiles(shape, config.block_q);
    let results: Vec<TileResult> = parallel::map(&tiles, |tile| {
        run_tile(input, config, &prepared[tile.slice], tile)
    })
    .into_iter()
    .collect::<Result<_, _>>()?;

    let mut stats = KernelStats::default();
    let mut blocks = Vec::with_capacity(results.len());
    for r in results {
        stats.merge(&r.stats);
        blocks.push(r.rows);
    }
    Ok((assemble(shape, &tiles, blocks), stats))
}
