use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SurrogateError;
use crate::scalar::{normal_cdf, Real};

/// Lognormal distribution parameterised on the log scale.
///
/// Every surrogate in the pipeline reports its prediction in this form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct LogNormalDist<T> {
    pub mu: T,
    pub sigma2: T,
}

impl<T: Real> LogNormalDist<T> {
    pub fn new(mu: T, sigma2: T) -> Result<Self, SurrogateError> {
        if !mu.is_finite() || !sigma2.is_finite() || sigma2 < T::zero() {
            return Err(SurrogateError::InvalidVariance(sigma2.as_f64()));
        }
        Ok(Self { mu, sigma2 })
    }

    /// Point mass at `exp(mu)`.
    pub fn degenerate(mu: T) -> Self {
        Self {
            mu,
            sigma2: T::zero(),
        }
    }

    pub fn median(&self) -> T {
        self.mu.exp()
    }

    pub fn mean(&self) -> T {
        (self.mu + self.sigma2 * T::lit(0.5)).exp()
    }

    pub fn variance(&self) -> T {
        self.sigma2.exp_m1() * (T::lit(2.0) * self.mu + self.sigma2).exp()
    }

    /// `P(X <= x)`.
    pub fn cdf(&self, x: T) -> T {
        if !(x > T::zero()) {
            return T::zero();
        }
        let z = x.ln() - self.mu;
        if self.sigma2 == T::zero() {
            return if z >= T::zero() { T::one() } else { T::zero() };
        }
        normal_cdf(z / self.sigma2.sqrt())
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        let z = T::std_normal(rng);
        (self.mu + self.sigma2.sqrt() * z).exp()
    }

    /// `count` independent draws of `exp(N(mu, sigma2))`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<T> {
        (0..count).map(|_| self.sample_one(rng)).collect()
    }
}

/// Two-moment lognormal approximation of a sum of independent lognormals.
///
/// The returned distribution reproduces the exact mean and variance of the
/// sum. A single component is returned unchanged.
pub fn lognormal_sum<T: Real>(
    components: &[LogNormalDist<T>],
) -> Result<LogNormalDist<T>, SurrogateError> {
    match components {
        [] => return Err(SurrogateError::EmptyComponentList),
        [only] => return Ok(*only),
        _ => {}
    }
    if let Some(bad) = components.iter().find(|c| !(c.sigma2 >= T::zero())) {
        return Err(SurrogateError::InvalidVariance(bad.sigma2.as_f64()));
    }
    let half = T::lit(0.5);
    // log of each component mean, shifted by the largest for stability
    let log_means: Vec<T> = components.iter().map(|c| c.mu + half * c.sigma2).collect();
    let shift = log_means
        .iter()
        .copied()
        .fold(T::neg_infinity(), T::max);
    let mean_scaled: T = log_means.iter().map(|&m| (m - shift).exp()).sum();
    // Var_j / exp(2 shift) = exp(2 m_j - 2 shift) * expm1(sigma2_j)
    let var_scaled: T = components
        .iter()
        .zip(&log_means)
        .map(|(c, &m)| (T::lit(2.0) * (m - shift)).exp() * c.sigma2.exp_m1())
        .sum();
    let sigma2 = (var_scaled / (mean_scaled * mean_scaled)).ln_1p();
    let mu = shift + mean_scaled.ln() - half * sigma2;
    Ok(LogNormalDist { mu, sigma2 })
}
