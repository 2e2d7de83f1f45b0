//! Tensor files and synthetic inputs.

pub mod npy;
pub mod synth;

pub use npy::{load_tensor, read_npy, save_tensor, write_npy, NpyDtype, NpyError};
pub use synth::{generate, sink_layer, SynthDistribution, SynthError, SynthSpec};
