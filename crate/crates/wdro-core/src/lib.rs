//! Wasserstein distributionally robust learning with norm-constrained
//! RePU networks: adversarial Frank–Wolfe training, an exact worst-case
//! risk oracle over discrete distributions, and the data pipelines used
//! by the benchmark suite.

pub mod data;
pub mod error;
pub mod loss;
pub mod nn;
pub mod oracle;
mod simplex;
pub mod train;

pub use error::{Error, Result};
pub use loss::LossKind;
pub use nn::Mlp;
