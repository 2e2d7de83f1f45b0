//! Backends of the `sageattn` subcommands. Each returns its result as a
//! value; writing files is left to the caller except for `gen`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::adaptive::{calibrate, Aggregation, CalibrationError, LayerPlan, DEFAULT_CALIBRATION_BATCHES};
use crate::attention::{
    flash_attention_fp, naive_attention, sage_attention_with_stats, AttentionError, AttentionInput,
    KernelConfig, KernelStats, KernelVariant, PvPath, DEFAULT_BLOCK_KV, DEFAULT_BLOCK_Q,
};
use crate::io::{generate, load_tensor, save_tensor, sink_layer, NpyError, SynthDistribution, SynthError, SynthSpec};
use crate::metrics::{max_abs_diff, AccuracyReport, MetricError};
use crate::parallel;
use crate::quant::QuantDtype;
use crate::report::{ConfigEcho, InputEcho, ReportRow, RowGroup, RunReport, SanityRow, Timing, TIMING_NOTE};
use crate::tensor::{Shape4, Tensor4};

/// Default `(B, H, N, d)` of accuracy and bench runs.
pub const DEFAULT_SHAPE: Shape4 = Shape4::new(2, 8, 1024, 64);
/// Default shape of each synthetic calibration layer; the batch axis holds
/// the calibration batches.
pub const CALIBRATION_SHAPE: Shape4 = Shape4::new(DEFAULT_CALIBRATION_BATCHES, 2, 256, 64);
/// Layers in the synthetic calibration suite.
pub const DEFAULT_CALIBRATION_LAYERS: usize = 10;
/// Logit gap between the sink key and the others in the synthetic layers
/// where the all-INT8 kernel falls short.
pub const SINK_GAP: f32 = 4.5;
/// Allowed max-abs difference between the binary32 tiled baseline and the
/// oracle before the sanity row is flagged.
pub const SANITY_TOLERANCE: f64 = 2e-6;
pub const MIN_REPEATS: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{path}: {source}")]
    Npy { path: PathBuf, source: NpyError },
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("repeats must be at least {MIN_REPEATS}, got {0}")]
    TooFewRepeats(usize),
    #[error("no inputs given")]
    NoInputs,
    #[error("no variants given")]
    NoVariants,
}

/// Where Q, K and V come from.
#[derive(Debug, Clone, PartialEq)]
pub enum InputSource {
    Synthetic(SynthSpec),
    /// A directory holding `q.npy`, `k.npy` and `v.npy`.
    Dir(PathBuf),
}

impl InputSource {
    fn load(&self, causal: bool) -> Result<(AttentionInput, InputEcho), CommandError> {
        match self {
            InputSource::Synthetic(spec) => {
                let input = generate(&spec.with_causal(causal))?;
                let echo = InputEcho::Synthetic {
                    distribution: spec.distribution,
                    seed: spec.seed,
                };
                Ok((input, echo))
            }
            InputSource::Dir(dir) => {
                let input = load_dir(dir, causal)?;
                let echo = InputEcho::Files {
                    dir: dir.display().to_string(),
                };
                Ok((input, echo))
            }
        }
    }
}

fn load_npy(path: PathBuf) -> Result<Tensor4, CommandError> {
    load_tensor(&path).map_err(|source| CommandError::Npy { path, source })
}

/// Reads `q.npy`, `k.npy` and `v.npy` from `dir`.
pub fn load_dir(dir: &Path, causal: bool) -> Result<AttentionInput, CommandError> {
    let q = load_npy(dir.join("q.npy"))?;
    let k = load_npy(dir.join("k.npy"))?;
    let v = load_npy(dir.join("v.npy"))?;
    Ok(AttentionInput::new(q, k, v, causal)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyOptions {
    pub source: InputSource,
    pub variants: Vec<KernelVariant>,
    pub causal: bool,
    pub block_q: usize,
    pub block_kv: usize,
    /// Add each variant again with K smoothing turned off.
    pub no_smooth_ablation: bool,
    /// Add INT8 / E4M3 / E5M2 rows for the Q,K and the P̃,V arms.
    pub dtype_sweep: bool,
}

impl AccuracyOptions {
    pub fn new(source: InputSource) -> Self {
        Self {
            source,
            variants: KernelVariant::ALL.to_vec(),
            causal: false,
            block_q: DEFAULT_BLOCK_Q,
            block_kv: DEFAULT_BLOCK_KV,
            no_smooth_ablation: false,
            dtype_sweep: false,
        }
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Runs `config` `repeats` times; the outputs of all runs are identical, so
/// only the first is kept.
fn timed_kernel(
    input: &AttentionInput,
    config: &KernelConfig,
    repeats: usize,
) -> Result<(Tensor4, KernelStats, Timing), CommandError> {
    let mut samples = Vec::with_capacity(repeats);
    let mut first = None;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let result = sage_attention_with_stats(input, config)?;
        samples.push(elapsed_ms(start));
        first.get_or_insert(result);
    }
    let (out, stats) = first.expect("at least one run");
    Ok((out, stats, Timing::from_samples(samples)))
}

fn kernel_row(
    group: RowGroup,
    input: &AttentionInput,
    oracle: &Tensor4<f64>,
    config: KernelConfig,
    repeats: usize,
) -> Result<ReportRow, CommandError> {
    let (out, stats, timing) = timed_kernel(input, &config, repeats)?;
    Ok(ReportRow {
        group,
        kernel: config.label(),
        shape: input.shape(),
        config: Some(config),
        accuracy: AccuracyReport::compare(oracle.as_slice(), out.as_slice())?,
        stats: Some(stats),
        timing,
    })
}

/// The binary32 tiled baseline row and the oracle self-check.
fn baseline(
    input: &AttentionInput,
    oracle: &Tensor4<f64>,
    block_q: usize,
    block_kv: usize,
    repeats: usize,
) -> Result<(ReportRow, SanityRow), CommandError> {
    let mut samples = Vec::with_capacity(repeats);
    let mut first = None;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let out = flash_attention_fp(input, block_q, block_kv)?;
        samples.push(elapsed_ms(start));
        first.get_or_insert(out);
    }
    let out = first.expect("at least one run");
    let diff = max_abs_diff(oracle.as_slice(), out.as_slice())?;
    let row = ReportRow {
        group: RowGroup::Baseline,
        kernel: "flash-fp32".to_string(),
        shape: input.shape(),
        config: None,
        accuracy: AccuracyReport::compare(oracle.as_slice(), out.as_slice())?,
        stats: None,
        timing: Timing::from_samples(samples),
    };
    let sanity = SanityRow {
        shape: input.shape(),
        max_abs_diff: diff,
        tolerance: SANITY_TOLERANCE,
        passed: diff <= SANITY_TOLERANCE,
    };
    Ok((row, sanity))
}

/// Every quantized configuration an accuracy run evaluates, in report order.
fn accuracy_configs(opts: &AccuracyOptions) -> Vec<(RowGroup, KernelConfig)> {
    let blocks = |c: KernelConfig| c.with_blocks(opts.block_q, opts.block_kv);
    let mut configs: Vec<(RowGroup, KernelConfig)> = opts
        .variants
        .iter()
        .map(|v| (RowGroup::Variant, blocks(v.config())))
        .collect();
    if opts.no_smooth_ablation {
        configs.extend(
            opts.variants
                .iter()
                .map(|v| (RowGroup::NoSmoothing, blocks(v.config()).with_smoothing(false))),
        );
    }
    if opts.dtype_sweep {
        let base = blocks(KernelVariant::T.config());
        let smoothing: &[bool] = if opts.no_smooth_ablation { &[true, false] } else { &[true] };
        for &smooth in smoothing {
            for dtype in QuantDtype::ALL {
                configs.push((RowGroup::QkDtype, base.with_smoothing(smooth).with_qk_dtype(dtype)));
            }
        }
        configs.push((RowGroup::PvDtype, base.with_pv_path(PvPath::Fp16Fp32Acc)));
        for dtype in QuantDtype::ALL {
            configs.push((RowGroup::PvDtype, base.with_pv_path(PvPath::Quantized(dtype))));
        }
    }
    configs
}

/// Runs every requested kernel against the oracle.
pub fn cmd_accuracy(opts: &AccuracyOptions) -> Result<RunReport, CommandError> {
    if opts.variants.is_empty() && !opts.dtype_sweep {
        return Err(CommandError::NoVariants);
    }
    let (input, echo) = opts.source.load(opts.causal)?;
    let oracle = naive_attention(&input)?;
    let (base_row, sanity) = baseline(&input, &oracle, opts.block_q, opts.block_kv, 1)?;
    let mut rows = vec![base_row];
    for (group, config) in accuracy_configs(opts) {
        rows.push(kernel_row(group, &input, &oracle, config, 1)?);
    }
    Ok(RunReport {
        command: "accuracy".to_string(),
        config: ConfigEcho {
            input: echo,
            shapes: vec![input.shape()],
            causal: opts.causal,
            block_q: opts.block_q,
            block_kv: opts.block_kv,
            no_smooth_ablation: opts.no_smooth_ablation,
            dtype_sweep: opts.dtype_sweep,
            repeats: 1,
            parallel: parallel::is_parallel(),
        },
        sanity: vec![sanity],
        rows,
        timing_note: TIMING_NOTE.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub distribution: SynthDistribution,
    pub seed: u64,
    pub shapes: Vec<Shape4>,
    pub variants: Vec<KernelVariant>,
    pub repeats: usize,
    pub causal: bool,
    pub block_q: usize,
    pub block_kv: usize,
}

/// Median wall-clock time of every variant on every shape, with the kernel
/// counters and accuracy of each.
pub fn cmd_bench(opts: &BenchOptions) -> Result<RunReport, CommandError> {
    if opts.repeats < MIN_REPEATS {
        return Err(CommandError::TooFewRepeats(opts.repeats));
    }
    if opts.shapes.is_empty() {
        return Err(CommandError::NoInputs);
    }
    if opts.variants.is_empty() {
        return Err(CommandError::NoVariants);
    }
    let mut rows = Vec::new();
    let mut sanity = Vec::new();
    for &shape in &opts.shapes {
        let spec = SynthSpec::new(opts.distribution, shape, opts.seed).with_causal(opts.causal);
        let input = generate(&spec)?;
        let oracle = naive_attention(&input)?;
        let (row, check) = baseline(&input, &oracle, opts.block_q, opts.block_kv, opts.repeats)?;
        rows.push(row);
        sanity.push(check);
        for v in &opts.variants {
            let config = v.config().with_blocks(opts.block_q, opts.block_kv);
            rows.push(kernel_row(RowGroup::Variant, &input, &oracle, config, opts.repeats)?);
        }
    }
    Ok(RunReport {
        command: "bench".to_string(),
        config: ConfigEcho {
            input: InputEcho::Synthetic {
                distribution: opts.distribution,
                seed: opts.seed,
            },
            shapes: opts.shapes.clone(),
            causal: opts.causal,
            block_q: opts.block_q,
            block_kv: opts.block_kv,
            no_smooth_ablation: false,
            dtype_sweep: false,
            repeats: opts.repeats,
            parallel: parallel::is_parallel(),
        },
        sanity,
        rows,
        timing_note: TIMING_NOTE.to_string(),
    })
}

/// Calibration layers: synthetic, or one directory of NPY files per layer
/// whose batch axis holds the calibration batches.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSource {
    Synthetic { layers: usize, shape: Shape4, seed: u64 },
    Dirs(Vec<PathBuf>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrateOptions {
    pub layers: LayerSource,
    pub threshold: f64,
    pub aggregation: Aggregation,
    pub causal: bool,
    pub block_q: usize,
    pub block_kv: usize,
}

/// Even layers are standard normal; odd layers are attention-sink layers
/// (see [`sink_layer`]) on which the all-INT8 kernel loses accuracy.
/// Each entry holds the layer split into batch-size-1 calibration batches.
pub fn synthetic_calibration_suite(
    layers: usize,
    shape: Shape4,
    seed: u64,
    block_kv: usize,
) -> Result<Vec<Vec<AttentionInput>>, CommandError> {
    (0..layers)
        .map(|l| {
            let layer_seed = seed.wrapping_add(l as u64);
            let input = if l % 2 == 0 {
                generate(&SynthSpec::new(SynthDistribution::StandardNormal, shape, layer_seed))?
            } else {
                sink_layer(shape, SINK_GAP, block_kv, layer_seed)?
            };
            Ok(input.split_batch())
        })
        .collect()
}

/// Chooses SAGEAttn-vB or SAGEAttn-B for every layer.
pub fn cmd_calibrate(opts: &CalibrateOptions) -> Result<LayerPlan, CommandError> {
    let layers = match &opts.layers {
        LayerSource::Synthetic { layers, shape, seed } => {
            let mut suite = synthetic_calibration_suite(*layers, *shape, *seed, opts.block_kv)?;
            for batch in suite.iter_mut().flatten() {
                batch.causal = opts.causal;
            }
            suite
        }
        LayerSource::Dirs(dirs) => dirs
            .iter()
            .map(|d| load_dir(d, opts.causal).map(|i| i.split_batch()))
            .collect::<Result<_, _>>()?,
    };
    if layers.is_empty() {
        return Err(CommandError::NoInputs);
    }
    let candidate = KernelVariant::VB.config().with_blocks(opts.block_q, opts.block_kv);
    let fallback = KernelVariant::B.config().with_blocks(opts.block_q, opts.block_kv);
    Ok(calibrate(&layers, &candidate, &fallback, opts.threshold, opts.aggregation)?)
}

/// Writes `q.npy`, `k.npy` and `v.npy` into `dir`, creating it if needed.
pub fn cmd_gen(spec: &SynthSpec, dir: &Path) -> Result<[PathBuf; 3], CommandError> {
    let input = generate(spec)?;
    fs::create_dir_all(dir)?;
    let paths = ["q.npy", "k.npy", "v.npy"].map(|f| dir.join(f));
    for (t, p) in [&input.q, &input.k, &input.v].into_iter().zip(&paths) {
        save_tensor(t, p)?;
    }
    Ok(paths)
}

/// Pretty-printed JSON to `path`.
pub fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<(), CommandError> {
    let text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> InputSource {
        InputSource::Synthetic(SynthSpec::new(
            SynthDistribution::StandardNormal,
            Shape4::new(1, 2, 96, 16),
            seed,
        ))
    }

    #[test]
    fn accuracy_rows() {
        let mut opts = AccuracyOptions::new(small(1));
        opts.no_smooth_ablation = true;
        opts.dtype_sweep = true;
        let report = cmd_accuracy(&opts).unwrap();
        // baseline + 4 variants + 4 ablations + 6 Q,K dtypes + 4 P̃,V paths
        assert_eq!(report.rows.len(), 1 + 4 + 4 + 6 + 4);
        assert!(report.sanity[0].passed);
        let t = report.row(RowGroup::Variant, "SAGEAttn-T").unwrap();
        assert!(t.accuracy.cos_sim > 0.999);
    }

    #[test]
    fn bench_counts_macs() {
        let shape = Shape4::new(1, 2, 40, 8);
        let opts = BenchOptions {
            distribution: SynthDistribution::StandardNormal,
            seed: 0,
            shapes: vec![shape],
            variants: vec![KernelVariant::VB],
            repeats: 3,
            causal: false,
            block_q: 16,
            block_kv: 16,
        };
        let report = cmd_bench(&opts).unwrap();
        let row = report.row(RowGroup::Variant, "SAGEAttn-vB").unwrap();
        assert_eq!(row.stats.unwrap().s_stage_macs, 2 * 40 * 40 * 8);
        assert_eq!(row.timing.samples_ms.len(), 3);
        let few = BenchOptions { repeats: 2, ..opts };
        assert!(matches!(cmd_bench(&few), Err(CommandError::TooFewRepeats(2))));
    }
}
