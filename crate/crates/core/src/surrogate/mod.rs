//! Statistical engine: log-linear models, Gaussian-process regression,
//! lognormal predictive distributions and cross-validation.

mod cv;
mod data;
mod gp;
mod kernel;
mod lognormal;
mod ols;
mod optimize;

pub use cv::{fold_assignment, kfold_cv, Baseline, CvReport, CvRow, FoldMetrics, Fitter, GpFitter, OlsFitter, Predictor};
pub use data::{
    load_gp, load_linear, load_surrogate, read_dataset, save_gp, save_linear, Dataset,
    DesignMatrix, SurrogateFile,
};
pub use gp::{fit_gp, GpFitOptions, GpModel, GpModelFile, Trend};
pub use kernel::KernelSpec;
pub use lognormal::{lognormal_sum, LogNormalDist};
pub use ols::{fit_ols, LinearModel, RCOND_TOL};
pub use optimize::{nelder_mead, Minimum, NelderMeadOptions};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SurrogateError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("design matrix is rank deficient (rcond {rcond:.3e})")]
    RankDeficient { rcond: f64 },
    #[error("too few observations: n = {n}, need more than {d}")]
    TooFewObservations { n: usize, d: usize },
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("kernel matrix is not positive definite even after maximum jitter")]
    FactorizationFailed,
    #[error("every optimizer restart produced a non-finite objective")]
    OptimizerFailed,
    #[error("lognormal sum needs at least one component")]
    EmptyComponentList,
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("predictive variance {0:.3e} is negative beyond rounding tolerance")]
    NegativeVariance(f64),
    #[error("fold too small: {0}")]
    FoldTooSmall(String),
    #[error("variance must be finite and non-negative, got {0}")]
    InvalidVariance(f64),
    #[error("data error: {0}")]
    Data(String),
}
