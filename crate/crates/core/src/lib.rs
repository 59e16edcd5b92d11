//! Probabilistic design of drone-delivered AED networks.
//!
//! Numerical building blocks are generic over [`scalar::Real`]; the
//! orchestration layers run in `f64` and use the aliases below.

pub mod bundle;
pub mod cli;
pub mod config;
pub mod demand;
pub mod designer;
pub mod environment;
pub mod flight;
pub mod linalg;
pub mod pipeline;
pub mod plot;
pub mod posthoc;
pub mod rng;
pub mod scalar;
pub mod simulate;
pub mod surrogate;

pub type Mat = linalg::Matrix<f64>;
pub type LogNormal = surrogate::LogNormalDist<f64>;
pub type Ols = surrogate::LinearModel<f64>;
pub type Gp = surrogate::GpModel<f64>;
pub type Kernel = surrogate::KernelSpec<f64>;
