use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sageattn_core::adaptive::{Aggregation, Assignment, LayerPlan, DEFAULT_THRESHOLD};
use sageattn_core::attention::{DEFAULT_BLOCK_KV, DEFAULT_BLOCK_Q};
use sageattn_core::commands::{
    self, AccuracyOptions, BenchOptions, CalibrateOptions, InputSource, LayerSource,
    CALIBRATION_SHAPE, DEFAULT_CALIBRATION_LAYERS, DEFAULT_SHAPE, MIN_REPEATS,
};
use sageattn_core::io::{SynthDistribution, SynthSpec};
use sageattn_core::report::RunReport;
use sageattn_core::{KernelVariant, Shape4};

/// Accuracy, calibration and timing driver for the emulated SageAttention
/// kernels.
#[derive(Parser)]
#[command(name = "sageattn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare kernels against the full-precision oracle.
    Accuracy(AccuracyArgs),
    /// Pick SAGEAttn-vB or SAGEAttn-B per layer and write the plan.
    Calibrate(CalibrateArgs),
    /// Time kernels on synthetic inputs (emulation timings).
    Bench(BenchArgs),
    /// Write synthetic q.npy, k.npy and v.npy.
    Gen(GenArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Dist {
    Normal,
    Outlier,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    T,
    B,
    Vt,
    Vb,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregationArg {
    Mean,
    Min,
}

#[derive(Args)]
struct SynthArgs {
    /// Input distribution.
    #[arg(long, value_enum, default_value = "normal")]
    dist: Dist,
    /// Channel bias magnitude of the outlier distribution.
    #[arg(long, default_value_t = 10.0)]
    bias_scale: f32,
    /// Token noise standard deviation of the outlier distribution.
    #[arg(long, default_value_t = 1.0)]
    noise_scale: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SynthArgs {
    fn distribution(&self) -> SynthDistribution {
        match self.dist {
            Dist::Normal => SynthDistribution::StandardNormal,
            Dist::Outlier => SynthDistribution::ChannelOutlier {
                bias_scale: self.bias_scale,
                noise_scale: self.noise_scale,
            },
        }
    }
}

#[derive(Args)]
struct KernelArgs {
    /// Kernel variant; repeat or comma-separate for several.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "all")]
    variant: Vec<VariantArg>,
    #[arg(long)]
    causal: bool,
    #[arg(long, default_value_t = DEFAULT_BLOCK_Q)]
    block_q: usize,
    #[arg(long, default_value_t = DEFAULT_BLOCK_KV)]
    block_kv: usize,
}

impl KernelArgs {
    fn variants(&self) -> Vec<KernelVariant> {
        let mut out = Vec::new();
        for v in &self.variant {
            let add: &[KernelVariant] = match v {
                VariantArg::T => &[KernelVariant::T],
                VariantArg::B => &[KernelVariant::B],
                VariantArg::Vt => &[KernelVariant::VT],
                VariantArg::Vb => &[KernelVariant::VB],
                VariantArg::All => &KernelVariant::ALL,
            };
            for &k in add {
                if !out.contains(&k) {
                    out.push(k);
                }
            }
        }
        out
    }
}

#[derive(Args)]
struct AccuracyArgs {
    /// Tensor shape B,H,N,d of synthetic inputs.
    #[arg(long, default_value_t = DEFAULT_SHAPE)]
    shape: Shape4,
    #[command(flatten)]
    synth: SynthArgs,
    /// Directory with q.npy, k.npy and v.npy instead of synthetic data.
    #[arg(long, conflicts_with_all = ["shape", "dist"])]
    input: Option<PathBuf>,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Also run every variant with K smoothing disabled.
    #[arg(long)]
    no_smooth: bool,
    /// Also sweep INT8/E4M3/E5M2 for the Q,K and P̃,V arms.
    #[arg(long)]
    dtype_sweep: bool,
    /// Report path (JSON); printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Layer directories (q.npy, k.npy, v.npy; the batch axis holds the
    /// calibration batches). Without any, a synthetic suite is used.
    #[arg(long = "input")]
    inputs: Vec<PathBuf>,
    /// Shape of each synthetic layer.
    #[arg(long, default_value_t = CALIBRATION_SHAPE)]
    shape: Shape4,
    /// Number of synthetic layers.
    #[arg(long, default_value_t = DEFAULT_CALIBRATION_LAYERS)]
    layers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// SAGEAttn-vB is chosen where its cosine similarity exceeds this.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, value_enum, default_value = "mean")]
    aggregation: AggregationArg,
    #[arg(long)]
    causal: bool,
    #[arg(long, default_value_t = DEFAULT_BLOCK_Q)]
    block_q: usize,
    #[arg(long, default_value_t = DEFAULT_BLOCK_KV)]
    block_kv: usize,
    /// Plan path (JSON); printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Shapes B,H,N,d to time; repeat for several.
    #[arg(long = "shape", default_values_t = [DEFAULT_SHAPE])]
    shapes: Vec<Shape4>,
    #[command(flatten)]
    synth: SynthArgs,
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long, default_value_t = MIN_REPEATS)]
    repeats: usize,
    /// Report path (JSON); printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = DEFAULT_SHAPE)]
    shape: Shape4,
    #[command(flatten)]
    synth: SynthArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn print_report(report: &RunReport) {
    println!(
        "{:<13} {:<48} {:>10} {:>10} {:>10} {:>11}",
        "group", "kernel", "cos_sim", "rel_l1", "rmse", "median_ms"
    );
    for r in &report.rows {
        let group = serde_json::to_value(r.group).expect("serializes");
        println!(
            "{:<13} {:<48} {:>10.6} {:>10.3e} {:>10.3e} {:>11.1}",
            group.as_str().unwrap_or_default(),
            r.kernel,
            r.accuracy.cos_sim,
            r.accuracy.relative_l1,
            r.accuracy.rmse,
            r.timing.median_ms
        );
    }
    for s in &report.sanity {
        println!(
            "sanity {}: flash vs oracle max|diff| = {:.3e} ({})",
            s.shape,
            s.max_abs_diff,
            if s.passed { "ok" } else { "above tolerance" }
        );
    }
    println!("note: {}", report.timing_note);
}

fn print_plan(plan: &LayerPlan) {
    for l in &plan.layers {
        let mark = match l.assignment {
            Assignment::Candidate => "candidate",
            Assignment::Fallback => "fallback",
        };
        println!("layer {:>3}  cos_sim {:.6}  {:<9}  {}", l.layer, l.cos_sim, mark, l.kernel);
    }
}

fn emit_report(report: &RunReport, out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(path) => {
            commands::write_json(report, path).with_context(|| format!("writing {}", path.display()))?;
            print_report(report);
        }
        None => println!("{}", report.to_json()),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Accuracy(a) => {
            let source = match &a.input {
                Some(dir) => InputSource::Dir(dir.clone()),
                None => InputSource::Synthetic(SynthSpec::new(a.synth.distribution(), a.shape, a.synth.seed)),
            };
            let opts = AccuracyOptions {
                source,
                variants: a.kernel.variants(),
                causal: a.kernel.causal,
                block_q: a.kernel.block_q,
                block_kv: a.kernel.block_kv,
                no_smooth_ablation: a.no_smooth,
                dtype_sweep: a.dtype_sweep,
            };
            let report = commands::cmd_accuracy(&opts)?;
            emit_report(&report, a.out.as_ref())
        }
        Command::Calibrate(c) => {
            let layers = if c.inputs.is_empty() {
                LayerSource::Synthetic {
                    layers: c.layers,
                    shape: c.shape,
                    seed: c.seed,
                }
            } else {
                LayerSource::Dirs(c.inputs.clone())
            };
            let opts = CalibrateOptions {
                layers,
                threshold: c.threshold,
                aggregation: match c.aggregation {
                    AggregationArg::Mean => Aggregation::Mean,
                    AggregationArg::Min => Aggregation::Min,
                },
                causal: c.causal,
                block_q: c.block_q,
                block_kv: c.block_kv,
            };
            let plan = commands::cmd_calibrate(&opts)?;
            match &c.out {
                Some(path) => {
                    commands::write_json(&plan, path).with_context(|| format!("writing {}", path.display()))?;
                    print_plan(&plan);
                }
                None => println!("{}", serde_json::to_string_pretty(&plan)?),
            }
            Ok(())
        }
        Command::Bench(b) => {
            if b.repeats < MIN_REPEATS {
                bail!("--repeats must be at least {MIN_REPEATS}");
            }
            let opts = BenchOptions {
                distribution: b.synth.distribution(),
                seed: b.synth.seed,
                shapes: b.shapes.clone(),
                variants: b.kernel.variants(),
                repeats: b.repeats,
                causal: b.kernel.causal,
                block_q: b.kernel.block_q,
                block_kv: b.kernel.block_kv,
            };
            let report = commands::cmd_bench(&opts)?;
            emit_report(&report, b.out.as_ref())
        }
        Command::Gen(g) => {
            let spec = SynthSpec::new(g.synth.distribution(), g.shape, g.synth.seed);
            for p in commands::cmd_gen(&spec, &g.out)? {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
