//! Per-layer choice between an accurate kernel and a faster one, decided
//! by calibration cosine similarity against the full-precision oracle.

use serde::{Deserialize, Serialize};

use crate::attention::{naive_attention, sage_attention, AttentionError, AttentionInput, KernelConfig};
use crate::metrics::{cosine_sim, MetricError};
use crate::parallel;

/// Calibration threshold: the worst layer similarity of the accurate kernel.
pub const DEFAULT_THRESHOLD: f64 = 0.998;
/// Calibration batches generated per layer when none are supplied.
pub const DEFAULT_CALIBRATION_BATCHES: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum CalibrationError {
    #[error("no calibration layers given")]
    NoLayers,
    #[error("layer {0} has no calibration batches")]
    EmptyLayer(usize),
    #[error("threshold {0} is outside [0, 1]")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// How per-batch similarities of one layer are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    /// Worst batch decides.
    Min,
}

impl Aggregation {
    fn apply(self, xs: &[f64]) -> f64 {
        match self {
            Aggregation::Mean => xs.iter().sum::<f64>() / xs.len() as f64,
            Aggregation::Min => xs.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Assignment {
    Candidate,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerChoice {
    pub layer: usize,
    /// Label of the chosen kernel.
    pub kernel: String,
    pub assignment: Assignment,
    /// Aggregated candidate similarity.
    pub cos_sim: f64,
    /// Per-batch candidate similarities.
    pub batch_cos_sim: Vec<f64>,
}

/// Kernel assignment for every layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub threshold: f64,
    pub aggregation: Aggregation,
    pub candidate: KernelConfig,
    pub fallback: KernelConfig,
    pub layers: Vec<LayerChoice>,
}

impl LayerPlan {
    pub fn candidate_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter(|l| l.assignment == Assignment::Candidate)
            .map(|l| l.layer)
            .collect()
    }

    /// Re-derives assignments from the recorded similarities under a new
    /// threshold, without re-running any kernel.
    pub fn with_threshold(&self, threshold: f64) -> LayerPlan {
        let mut plan = self.clone();
        plan.threshold = threshold;
        for l in &mut plan.layers {
            l.assignment = assign(l.cos_sim, threshold);
            l.kernel = match l.assignment {
                Assignment::Candidate => self.candidate.label(),
                Assignment::Fallback => self.fallback.label(),
            };
        }
        plan
    }
}

fn assign(cos_sim: f64, threshold: f64) -> Assignment {
    if cos_sim > threshold {
        Assignment::Candidate
    } else {
        Assignment::Fallback
    }
}

/// Candidate similarity of one calibration batch.
fn batch_similarity(input: &AttentionInput, candidate: &KernelConfig) -> Result<f64, CalibrationError> {
    let reference = naive_attention(input)?;
    let out = sage_attention(input, candidate)?;
    Ok(cosine_sim(reference.as_slice(), out.as_slice())?)
}

/// Assigns `candidate` to every layer whose aggregated calibration cosine
/// similarity exceeds `threshold`, and `fallback` to the rest.
pub fn calibrate(
    layers: &[Vec<AttentionInput>],
    candidate: &KernelConfig,
    fallback: &KernelConfig,
    threshold: f64,
    aggregation: Aggregation,
) -> Result<LayerPlan, CalibrationError> {
    if layers.is_empty() {
        return Err(CalibrationError::NoLayers);
    }
    if let Some(i) = layers.iter().position(Vec::is_empty) {
        return Err(CalibrationError::EmptyLayer(i));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CalibrationError::InvalidThreshold(threshold));
    }
    candidate.validate()?;
    fallback.validate()?;

    let work: Vec<(usize, usize)> = layers
        .iter()
        .enumerate()
        .flat_map(|(l, batches)| (0..batches.len()).map(move |b| (l, b)))
        .collect();
    let sims = parallel::map(&work, |&(l, b)| batch_similarity(&layers[l][b], candidate))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let mut next = sims.into_iter();
    let choices = layers
        .iter()
        .enumerate()
        .map(|(layer, batches)| {
            let batch_cos_sim: Vec<f64> = next.by_ref().take(batches.len()).collect();
            let cos_sim = aggregation.apply(&batch_cos_sim);
            let assignment = assign(cos_sim, threshold);
            let kernel = match assignment {
                Assignment::Candidate => candidate.label(),
                Assignment::Fallback => fallback.label(),
            };
            LayerChoice {
                layer,
                kernel,
                assignment,
                cos_sim,
                batch_cos_sim,
            }
        })
        .collect();
    Ok(LayerPlan {
        threshold,
        aggregation,
        candidate: *candidate,
        fallback: *fallback,
        layers: choices,
    })
}
