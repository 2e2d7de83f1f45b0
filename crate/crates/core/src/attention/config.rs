use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::AttentionError;
use crate::quant::{Granularity, QuantDtype};

/// Query block size used by the kernels unless overridden.
pub const DEFAULT_BLOCK_Q: usize = 128;
/// Key/value block size used by the kernels unless overridden.
pub const DEFAULT_BLOCK_KV: usize = 64;

/// Scale granularity for the quantized Q and K operands. Per-channel is not
/// offered: scales along the contracted axis cannot be factored out of QKᵀ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QkGranularity {
    PerToken,
    /// One scale per kernel tile: `block_q` rows of Q, `block_kv` rows of K.
    PerBlock,
    PerTensor,
}

impl QkGranularity {
    pub(crate) fn for_block(self, block: usize) -> Granularity {
        match self {
            QkGranularity::PerToken => Granularity::PerToken,
            QkGranularity::PerBlock => Granularity::PerBlock(block),
            QkGranularity::PerTensor => Granularity::PerTensor,
        }
    }
}

impl fmt::Display for QkGranularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QkGranularity::PerToken => "per-token",
            QkGranularity::PerBlock => "per-block",
            QkGranularity::PerTensor => "per-tensor",
        })
    }
}

/// How the `P̃ V` product is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PvPath {
    /// P̃ and V rounded to binary16, binary16 accumulator.
    Fp16Acc,
    /// P̃ and V rounded to binary16, binary32 accumulator.
    Fp16Fp32Acc,
    /// P̃ with the static scale, V per-channel, both in the given type.
    Quantized(QuantDtype),
}

impl fmt::Display for PvPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PvPath::Fp16Acc => f.write_str("fp16/fp16-acc"),
            PvPath::Fp16Fp32Acc => f.write_str("fp16/fp32-acc"),
            PvPath::Quantized(d) => write!(f, "{d}"),
        }
    }
}

/// The four named kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelVariant {
    /// Per-token INT8 Q,K; FP16 P̃,V with FP16 accumulator.
    #[serde(rename = "SAGEAttn-T")]
    T,
    /// Per-block INT8 Q,K; FP16 P̃,V with FP16 accumulator.
    #[serde(rename = "SAGEAttn-B")]
    B,
    /// Per-token INT8 Q,K; INT8 P̃ (per-block) and V (per-channel).
    #[serde(rename = "SAGEAttn-vT")]
    VT,
    /// Per-block INT8 Q,K; INT8 P̃ (per-block) and V (per-channel).
    #[serde(rename = "SAGEAttn-vB")]
    VB,
}

impl KernelVariant {
    pub const ALL: [KernelVariant; 4] = [
        KernelVariant::T,
        KernelVariant::B,
        KernelVariant::VT,
        KernelVariant::VB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelVariant::T => "SAGEAttn-T",
            KernelVariant::B => "SAGEAttn-B",
            KernelVariant::VT => "SAGEAttn-vT",
            KernelVariant::VB => "SAGEAttn-vB",
        }
    }

    pub fn config(self) -> KernelConfig {
        KernelConfig::from(self)
    }
}

impl fmt::Display for KernelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().trim_start_matches("sageattn-") {
            "t" => Ok(KernelVariant::T),
            "b" => Ok(KernelVariant::B),
            "vt" => Ok(KernelVariant::VT),
            "vb" => Ok(KernelVariant::VB),
            other => Err(format!("unknown kernel variant `{other}` (expected t, b, vt or vb)")),
        }
    }
}

/// Full description of one quantized attention kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KernelConfig {
    pub qk_granularity: QkGranularity,
    pub qk_dtype: QuantDtype,
    pub pv_path: PvPath,
    pub block_q: usize,
    pub block_kv: usize,
    /// Subtract the token mean from K before quantizing. Only turned off
    /// for ablations.
    pub smooth_k: bool,
}

impl From<KernelVariant> for KernelConfig {
    fn from(v: KernelVariant) -> Self {
        let (qk_granularity, pv_path) = match v {
            KernelVariant::T => (QkGranularity::PerToken, PvPath::Fp16Acc),
            KernelVariant::B => (QkGranularity::PerBlock, PvPath::Fp16Acc),
            KernelVariant::VT => (QkGranularity::PerToken, PvPath::Quantized(QuantDtype::Int8)),
            KernelVariant::VB => (QkGranularity::PerBlock, PvPath::Quantized(QuantDtype::Int8)),
        };
        KernelConfig {
            qk_granularity,
            qk_dtype: QuantDtype::Int8,
            pv_path,
            block_q: DEFAULT_BLOCK_Q,
            block_kv: DEFAULT_BLOCK_KV,
            smooth_k: true,
        }
    }
}

impl KernelConfig {
    pub fn with_blocks(mut self, block_q: usize, block_kv: usize) -> Self {
        self.block_q = block_q;
        self.block_kv = block_kv;
        self
    }

    pub fn with_smoothing(mut self, smooth_k: bool) -> Self {
        self.smooth_k = smooth_k;
        self
    }

    pub fn with_qk_dtype(mut self, dtype: QuantDtype) -> Self {
        self.qk_dtype = dtype;
        self
    }

    pub fn with_qk_granularity(mut self, g: QkGranularity) -> Self {
        self.qk_granularity = g;
        self
    }

    pub fn with_pv_path(mut self, pv: PvPath) -> Self {
        self.pv_path = pv;
        self
    }

    /// The named variant this config is, if it is one (ignoring block sizes).
    pub fn variant(&self) -> Option<KernelVariant> {
        KernelVariant::ALL.into_iter().find(|v| {
            let c = v.config().with_blocks(self.block_q, self.block_kv);
            c == *self
        })
    }

    pub fn validate(&self) -> Result<(), AttentionError> {
        if self.block_q == 0 || self.block_kv == 0 {
            return Err(AttentionError::InvalidBlockSize {
                block_q: self.block_q,
                block_kv: self.block_kv,
            });
        }
        Ok(())
    }

    /// Short human-readable description, e.g. `per-block int8 / int8`.
    pub fn label(&self) -> String {
        let smooth = if self.smooth_k { "" } else { " (no smoothing)" };
        match self.variant() {
            Some(v) => format!("{v}{smooth}"),
            None => format!(
                "{} {} / {}{smooth}",
                self.qk_granularity, self.qk_dtype, self.pv_path
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_round_trip() {
        for v in KernelVariant::ALL {
            assert_eq!(v.config().variant(), Some(v));
            assert_eq!(v.name().parse::<KernelVariant>().unwrap(), v);
        }
        assert_eq!("vb".parse::<KernelVariant>().unwrap(), KernelVariant::VB);
        assert!("x".parse::<KernelVariant>().is_err());
    }

    #[test]
    fn kernel_table() {
        let b = KernelVariant::B.config();
        assert_eq!(b.qk_granularity, QkGranularity::PerBlock);
        assert_eq!(b.pv_path, PvPath::Fp16Acc);
        assert_eq!((b.block_q, b.block_kv), (128, 64));
        assert!(b.smooth_k);
        let vt = KernelVariant::VT.config();
        assert_eq!(vt.qk_granularity, QkGranularity::PerToken);
        assert_eq!(vt.pv_path, PvPath::Quantized(QuantDtype::Int8));
        assert_eq!(b.with_smoothing(false).variant(), None);
    }
}
