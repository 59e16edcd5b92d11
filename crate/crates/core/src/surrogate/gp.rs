use rand::Rng;
use serde::{Deserialize, Serialize};

use super::optimize::{nelder_mead, NelderMeadOptions};
use super::{KernelSpec, LogNormalDist, SurrogateError};
use crate::linalg::{dot, jittered_cholesky, Cholesky, Matrix};
use crate::rng;
use crate::scalar::Real;

const REFINE_STEPS: usize = 50;

/// Mean trend `f(x)ᵀ b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Constant,
    Linear,
}

impl Trend {
    pub fn basis<T: Real>(&self, x: &[T]) -> Vec<T> {
        match self {
            Trend::Constant => vec![T::one()],
            Trend::Linear => std::iter::once(T::one()).chain(x.iter().copied()).collect(),
        }
    }

    pub fn len(&self, input_dim: usize) -> usize {
        match self {
            Trend::Constant => 1,
            Trend::Linear => 1 + input_dim,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GpFitOptions {
    pub restarts: usize,
    pub seed: u64,
    /// Multi-start draws are log-uniform over `[lo, hi] × data scale`.
    pub start_range: (f64, f64),
    /// Search box, as multiples of the data scale.
    pub bound_range: (f64, f64),
    pub nelder_mead: NelderMeadOptions,
}

impl Default for GpFitOptions {
    fn default() -> Self {
        Self {
            restarts: 8,
            seed: 0,
            start_range: (1e-2, 1e2),
            bound_range: (1e-3, 1e3),
            nelder_mead: NelderMeadOptions::default(),
        }
    }
}

/// Conditioned Gaussian-process regression model.
///
/// Covariance is `σ̂²·K_θ` with `K_θ` given by `kernel`; `b̂` and `σ̂²` are
/// the generalised least squares / profile estimates at the stored `θ`.
#[derive(Debug, Clone)]
pub struct GpModel<T: Real> {
    kernel: KernelSpec<T>,
    trend: Trend,
    train_x: Matrix<T>,
    train_y: Vec<T>,
    b_hat: Vec<T>,
    sigma2_hat: T,
    jitter: T,
    chol: Cholesky<T>,
    alpha: Vec<T>,
    kinv_f: Matrix<T>,
    ftkf: Cholesky<T>,
    profile_nll: T,
}

/// Serialisable form: kernel, trend, and training data. Estimates are
/// recomputed on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct GpModelFile<T> {
    pub kernel: KernelSpec<T>,
    pub trend: Trend,
    pub train_x: Vec<Vec<T>>,
    pub train_y: Vec<T>,
    pub b_hat: Vec<T>,
    pub sigma2_hat: T,
}

impl<T: Real> GpModel<T> {
    /// Condition on training data at fixed kernel hyperparameters.
    pub fn condition(
        kernel: KernelSpec<T>,
        trend: Trend,
        x: Matrix<T>,
        y: Vec<T>,
    ) -> Result<Self, SurrogateError> {
        Self::build(kernel, trend, x, y, true)
    }

    fn build(
        kernel: KernelSpec<T>,
        trend: Trend,
        x: Matrix<T>,
        y: Vec<T>,
        refine: bool,
    ) -> Result<Self, SurrogateError> {
        let n = x.rows();
        let q = trend.len(x.cols());
        if y.len() != n {
            return Err(SurrogateError::DimensionMismatch(format!(
                "{} responses for {} rows",
                y.len(),
                n
            )));
        }
        if n <= q {
            return Err(SurrogateError::TooFewObservations { n, d: q });
        }
        kernel.validate(x.cols())?;
        if !x.all_finite() || y.iter().any(|v| !v.is_finite()) {
            return Err(SurrogateError::NonFinite("GP training data".into()));
        }
        let k = kernel.gram(&x);
        let (chol, jitter) = jittered_cholesky(&k).ok_or(SurrogateError::FactorizationFailed)?;
        let f_rows: Vec<Vec<T>> = (0..n).map(|i| trend.basis(x.row(i))).collect();
        let f = Matrix::from_rows(&f_rows).expect("uniform basis length");
        let kinv_f = chol.solve_mat(&f);
        let ftkf_m = f.transpose().matmul(&kinv_f);
        let ftkf = Cholesky::factor(&ftkf_m).ok_or(SurrogateError::RankDeficient { rcond: 0.0 })?;
        let kinv_y = chol.solve(&y);
        let b_hat = ftkf.solve(&f.tr_vec(&kinv_y));
        let resid: Vec<T> = (0..n).map(|i| y[i] - dot(f.row(i), &b_hat)).collect();
        let mut alpha = chol.solve(&resid);
        let quad = dot(&resid, &alpha).max(T::zero());
        // Iterative refinement against the unjittered Gram matrix, so the
        // mean still interpolates the data when jitter was needed.
        if refine && jitter > T::zero() {
            let misfit = |a: &[T]| -> Vec<T> { resid.iter().zip(k.mat_vec(a)).map(|(r, ka)| *r - ka).collect() };
            let sup = |v: &[T]| v.iter().fold(T::zero(), |m, x| m.max(x.abs()));
            let mut r = misfit(&alpha);
            for _ in 0..REFINE_STEPS {
                let step = chol.solve(&r);
                let cand: Vec<T> = alpha.iter().zip(&step).map(|(a, s)| *a + *s).collect();
                let r_new = misfit(&cand);
                if !(sup(&r_new) < sup(&r)) {
                    break;
                }
                alpha = cand;
                r = r_new;
            }
        }
        let sigma2_hat = quad / T::lit((n - q) as f64);
        let floor = T::min_positive_value();
        let nf = T::lit(n as f64);
        let profile_nll = nf * T::lit(0.5) * (T::lit(2.0) * T::PI() * sigma2_hat.max(floor)).ln()
            + T::lit(0.5) * chol.log_det();
        Ok(Self {
            kernel,
            trend,
            train_x: x,
            train_y: y,
            b_hat,
            sigma2_hat,
            jitter,
            chol,
            alpha,
            kinv_f,
            ftkf,
            profile_nll,
        })
    }

    pub fn kernel(&self) -> &KernelSpec<T> {
        &self.kernel
    }

    pub fn trend(&self) -> Trend {
        self.trend
    }

    pub fn b_hat(&self) -> &[T] {
        &self.b_hat
    }

    pub fn sigma2_hat(&self) -> T {
        self.sigma2_hat
    }

    pub fn jitter(&self) -> T {
        self.jitter
    }

    pub fn input_dim(&self) -> usize {
        self.train_x.cols()
    }

    pub fn n_train(&self) -> usize {
        self.train_x.rows()
    }

    /// Profile negative log-likelihood at the stored hyperparameters.
    pub fn profile_nll(&self) -> T {
        self.profile_nll
    }

    /// Predictive mean and variance at `x_star`.
    pub fn predict(&self, x_star: &[T]) -> Result<(T, T), SurrogateError> {
        if x_star.len() != self.input_dim() {
            return Err(SurrogateError::DimensionMismatch(format!(
                "input has {} coordinates, model expects {}",
                x_star.len(),
                self.input_dim()
            )));
        }
        let k_star = self.kernel.cross(&self.train_x, x_star);
        let f_star = self.trend.basis(x_star);
        let mean = dot(&f_star, &self.b_hat) + dot(&k_star, &self.alpha);

        let z = self.chol.forward(&k_star);
        let explained = dot(&z, &z);
        let u: Vec<T> = f_star
            .iter()
            .zip(self.kinv_f.tr_vec(&k_star))
            .map(|(&a, b)| a - b)
            .collect();
        let trend_term = dot(&u, &self.ftkf.solve(&u));
        let var = self.sigma2_hat * (self.kernel.eval(x_star, x_star) - explained + trend_term);
        let tol = T::lit(1e-10) * self.sigma2_hat.max(T::one());
        let var = if var >= T::zero() {
            var
        } else if -var <= tol {
            T::zero()
        } else {
            return Err(SurrogateError::NegativeVariance(var.as_f64()));
        };
        Ok((mean, var))
    }

    /// Predictive distribution of the exponentiated response.
    pub fn predict_lognormal(&self, x_star: &[T]) -> Result<LogNormalDist<T>, SurrogateError> {
        let (mu, sigma2) = self.predict(x_star)?;
        Ok(LogNormalDist { mu, sigma2 })
    }

    pub fn to_file(&self) -> GpModelFile<T> {
        GpModelFile {
            kernel: self.kernel.clone(),
            trend: self.trend,
            train_x: (0..self.train_x.rows())
                .map(|i| self.train_x.row(i).to_vec())
                .collect(),
            train_y: self.train_y.clone(),
            b_hat: self.b_hat.clone(),
            sigma2_hat: self.sigma2_hat,
        }
    }

    pub fn from_file(file: GpModelFile<T>) -> Result<Self, SurrogateError> {
        let cols = file.train_x.first().map_or(0, Vec::len);
        let x = if file.train_x.is_empty() {
            Matrix::zeros(0, cols)
        } else {
            Matrix::from_rows(&file.train_x).ok_or_else(|| {
                SurrogateError::DimensionMismatch("ragged training inputs".into())
            })?
        };
        Self::condition(file.kernel, file.trend, x, file.train_y)
    }
}

/// Maximum-likelihood GP fit.
///
/// Kernel amplitude and trend coefficients are profiled out; the remaining
/// hyperparameters minimise the profile negative log-likelihood with a
/// multi-start simplex search in log space.
pub fn fit_gp<T: Real>(
    x: &Matrix<T>,
    y: &[T],
    template: &KernelSpec<T>,
    trend: Trend,
    opts: &GpFitOptions,
) -> Result<GpModel<T>, SurrogateError> {
    let n = x.rows();
    if n < 3 {
        return Err(SurrogateError::TooFewObservations {
            n,
            d: trend.len(x.cols()),
        });
    }
    template.validate(x.cols())?;
    let base = template.normalized();
    let magnitudes = base.param_magnitudes(x);
    let lower: Vec<T> = magnitudes
        .iter()
        .map(|m| (*m * T::lit(opts.bound_range.0)).ln())
        .collect();
    let upper: Vec<T> = magnitudes
        .iter()
        .map(|m| (*m * T::lit(opts.bound_range.1)).ln())
        .collect();
    let step = vec![T::lit(1.0); magnitudes.len()];
    let objective = |p: &[T]| -> T {
        GpModel::build(base.with_log_params(p), trend, x.clone(), y.to_vec(), false)
            .map(|m| m.profile_nll)
            .unwrap_or(T::infinity())
    };

    let mut rng = rng::stream(opts.seed, &[rng::tag::GP_RESTARTS]);
    let (lo, hi) = (opts.start_range.0.ln(), opts.start_range.1.ln());
    let mut best: Option<(Vec<T>, T)> = None;
    for _ in 0..opts.restarts.max(1) {
        let start: Vec<T> = magnitudes
            .iter()
            .map(|m| m.ln() + T::lit(rng.random_range(lo..hi)))
            .collect();
        let found = nelder_mead(&objective, &start, &step, &lower, &upper, &opts.nelder_mead);
        if found.value.is_finite() && best.as_ref().is_none_or(|(_, v)| found.value < *v) {
            best = Some((found.x, found.value));
        }
    }
    let (params, _) = best.ok_or(SurrogateError::OptimizerFailed)?;
    GpModel::condition(base.with_log_params(&params), trend, x.clone(), y.to_vec())
}
