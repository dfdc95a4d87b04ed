mod data;
mod nn;
mod optim;
mod quadratic;

pub use data::{Dataset, WorkerSet};
pub use nn::{nn_forward_backward, OneLayerNN, CLASSES, INPUTS};
pub use optim::{optimizer_step, OptimizerConfig, OptimizerState, Schedule};
pub use quadratic::{quadratic_gradient, QuadraticTask};
