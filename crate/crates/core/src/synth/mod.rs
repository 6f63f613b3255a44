//! Synthetic data with known ground truth.

pub mod scene;
pub mod signal;

pub use scene::{default_view, generate_dataset, ChronoDataset, ChronoImage, ChronoScene, ChronoSceneSpec, Lighting, Texture, Wall};
pub use signal::{generate_1d_signal, PiecewiseConstant, ToySignal, ToySignalSpec};
