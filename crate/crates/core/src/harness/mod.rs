//! Configuration, MNIST ingestion, metrics files and the command line.

pub mod cli;
mod config;
mod metrics;
mod mnist;

pub use config::{AlgorithmConfig, ExperimentConfig, MetricsFormat, PowerConfig, QuadraticConfig, TaskKind};
pub use metrics::{emit_diagnostics, emit_metrics, read_metrics, write_metrics};
pub use mnist::{default_dir, load_idx_images, load_idx_labels, load_mnist, MnistData, FILES};
