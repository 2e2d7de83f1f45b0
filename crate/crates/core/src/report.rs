//! The JSON document written by `accuracy` and `bench`.

use serde::{Deserialize, Serialize};

use crate::attention::{KernelConfig, KernelStats};
use crate::io::SynthDistribution;
use crate::metrics::AccuracyReport;
use crate::tensor::Shape4;

/// Attached to every report that carries timings.
pub const TIMING_NOTE: &str = "wall-clock time of a software emulation on this CPU; \
     not a measure of hardware kernel speed or speedup";

/// Where the tensors of a run came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputEcho {
    Synthetic {
        distribution: SynthDistribution,
        seed: u64,
    },
    Files {
        dir: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub input: InputEcho,
    pub shapes: Vec<Shape4>,
    pub causal: bool,
    pub block_q: usize,
    pub block_kv: usize,
    pub no_smooth_ablation: bool,
    pub dtype_sweep: bool,
    pub repeats: usize,
    pub parallel: bool,
}

/// `flash_attention_fp` against the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SanityRow {
    pub shape: Shape4,
    pub max_abs_diff: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Which experiment a row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowGroup {
    Variant,
    NoSmoothing,
    QkDtype,
    PvDtype,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub median_ms: f64,
    pub samples_ms: Vec<f64>,
}

impl Timing {
    pub fn from_samples(mut samples_ms: Vec<f64>) -> Self {
        let mut sorted = samples_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median_ms = match n {
            0 => f64::NAN,
            _ if n % 2 == 1 => sorted[n / 2],
            _ => 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]),
        };
        samples_ms.shrink_to_fit();
        Self {
            median_ms,
            samples_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub group: RowGroup,
    pub kernel: String,
    pub shape: Shape4,
    /// `None` for the binary32 baseline.
    pub config: Option<KernelConfig>,
    pub accuracy: AccuracyReport,
    pub stats: Option<KernelStats>,
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub config: ConfigEcho,
    pub sanity: Vec<SanityRow>,
    pub rows: Vec<ReportRow>,
    pub timing_note: String,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// The report with every timing cleared, so that two runs of the same
    /// config compare equal.
    pub fn without_timings(&self) -> RunReport {
        let mut r = self.clone();
        for row in &mut r.rows {
            row.timing = Timing::from_samples(Vec::new());
            row.timing.median_ms = 0.0;
        }
        r
    }

    pub fn row(&self, group: RowGroup, kernel: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.group == group && r.kernel == kernel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median() {
        assert_eq!(Timing::from_samples(vec![3.0, 1.0, 2.0]).median_ms, 2.0);
        assert_eq!(Timing::from_samples(vec![4.0, 1.0, 2.0, 3.0]).median_ms, 2.5);
        assert_eq!(Timing::from_samples(vec![4.0, 1.0]).samples_ms, vec![4.0, 1.0]);
    }
}
