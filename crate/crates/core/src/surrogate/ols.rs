use serde::{Deserialize, Serialize};

use super::{DesignMatrix, LogNormalDist, SurrogateError};
use crate::linalg::{dot, Cholesky, Matrix};
use crate::scalar::Real;

/// Reciprocal condition number below which `XᵀX` is treated as singular.
pub const RCOND_TOL: f64 = 1e-12;

/// Fitted log-linear model.
///
/// `coefficients` include the intercept when the design matrix carries a
/// column of ones; prediction vectors must use the same layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct LinearModel<T> {
    pub feature_names: Vec<String>,
    pub coefficients: Vec<T>,
    /// Row-major `d × d` covariance of the coefficient estimates.
    pub coef_covariance: Matrix<T>,
    pub residual_variance: T,
    pub dof: usize,
}

impl<T: Real> LinearModel<T> {
    /// Assemble a model from published estimates.
    ///
    /// Only standard errors are available for published tables, so the
    /// coefficient covariance is diagonal.
    pub fn from_estimates(
        feature_names: &[&str],
        coefficients: &[T],
        std_errors: &[T],
        residual_sd: T,
        dof: usize,
    ) -> Self {
        assert_eq!(feature_names.len(), coefficients.len());
        assert_eq!(coefficients.len(), std_errors.len());
        let diag: Vec<T> = std_errors.iter().map(|s| *s * *s).collect();
        Self {
            feature_names: feature_names.iter().map(|s| s.to_string()).collect(),
            coefficients: coefficients.to_vec(),
            coef_covariance: Matrix::from_diag(&diag),
            residual_variance: residual_sd * residual_sd,
            dof,
        }
    }

    pub fn n_features(&self) -> usize {
        self.coefficients.len()
    }

    /// Log-scale mean `xᵀβ̂`.
    pub fn mean(&self, x: &[T]) -> Result<T, SurrogateError> {
        self.check_len(x)?;
        Ok(dot(x, &self.coefficients))
    }

    /// Lognormal predictive distribution combining the standard error of the
    /// fitted mean with the residual variance.
    pub fn predict(&self, x: &[T]) -> Result<LogNormalDist<T>, SurrogateError> {
        self.check_len(x)?;
        let mu = dot(x, &self.coefficients);
        let se2 = self.coef_covariance.quad_form(x).max(T::zero());
        Ok(LogNormalDist {
            mu,
            sigma2: se2 + self.residual_variance,
        })
    }

    fn check_len(&self, x: &[T]) -> Result<(), SurrogateError> {
        if x.len() != self.coefficients.len() {
            return Err(SurrogateError::DimensionMismatch(format!(
                "feature vector has {} entries, model expects {}",
                x.len(),
                self.coefficients.len()
            )));
        }
        Ok(())
    }
}

/// Ordinary least squares on a log-scale response.
pub fn fit_ols<T: Real>(x: &DesignMatrix<T>, y: &[T]) -> Result<LinearModel<T>, SurrogateError> {
    let n = x.n_rows();
    let d = x.n_cols();
    if y.len() != n {
        return Err(SurrogateError::DimensionMismatch(format!(
            "{} responses for {} rows",
            y.len(),
            n
        )));
    }
    if n <= d {
        return Err(SurrogateError::TooFewObservations { n, d });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(SurrogateError::NonFinite("response".into()));
    }
    let xm = x.matrix();
    let gram = xm.gram();

    // Equilibrate before the conditioning check so that feature units do not
    // masquerade as collinearity.
    let scale: Vec<T> = (0..d)
        .map(|j| {
            let g = gram[(j, j)];
            if g > T::zero() {
                T::one() / g.sqrt()
            } else {
                T::zero()
            }
        })
        .collect();
    if scale.iter().any(|s| *s == T::zero()) {
        return Err(SurrogateError::RankDeficient { rcond: 0.0 });
    }
    let mut eq = gram.clone();
    for i in 0..d {
        for j in 0..d {
            eq[(i, j)] = eq[(i, j)] * scale[i] * scale[j];
        }
    }
    let ch = Cholesky::factor(&eq).ok_or(SurrogateError::RankDeficient { rcond: 0.0 })?;
    let eq_inv = ch.inverse();
    let rcond = T::one() / (eq.norm1() * eq_inv.norm1());
    if !(rcond.as_f64() >= RCOND_TOL) {
        return Err(SurrogateError::RankDeficient {
            rcond: rcond.as_f64(),
        });
    }
    // (XᵀX)⁻¹ = S (S XᵀX S)⁻¹ S
    let mut inv = eq_inv;
    for i in 0..d {
        for j in 0..d {
            inv[(i, j)] = inv[(i, j)] * scale[i] * scale[j];
        }
    }
    let xty = xm.tr_vec(y);
    let coefficients = inv.mat_vec(&xty);

    let rss: T = (0..n)
        .map(|i| {
            let r = y[i] - dot(xm.row(i), &coefficients);
            r * r
        })
        .sum();
    let dof = n - d;
    let residual_variance = rss / T::lit(dof as f64);
    let mut coef_covariance = inv;
    coef_covariance.scale(residual_variance);

    Ok(LinearModel {
        feature_names: x.feature_names().to_vec(),
        coefficients,
        coef_covariance,
        residual_variance,
        dof,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn design(rows: &[Vec<f64>]) -> DesignMatrix<f64> {
        let names = (0..rows[0].len()).map(|i| format!("x{i}")).collect();
        DesignMatrix::new(Matrix::from_rows(rows).unwrap(), names).unwrap()
    }

    #[test]
    fn exact_linear_data() {
        let x = design(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]]);
        let m = fit_ols(&x, &[0.0, 2.0, 4.0]).unwrap();
        assert!(m.coefficients[0].abs() < 1e-12);
        assert!((m.coefficients[1] - 2.0).abs() < 1e-12);
        assert!(m.residual_variance.abs() < 1e-24);
        assert_eq!(m.dof, 1);
    }

    #[test]
    fn constant_response() {
        let x = design(&[
            vec![1.0, 0.3, 5.0],
            vec![1.0, 1.1, 2.0],
            vec![1.0, 2.0, 7.0],
            vec![1.0, -0.4, 1.0],
        ]);
        let m = fit_ols(&x, &[1.5; 4]).unwrap();
        assert!((m.coefficients[0] - 1.5).abs() < 1e-10);
        assert!(m.coefficients[1].abs() < 1e-10 && m.coefficients[2].abs() < 1e-10);
        assert!(m.residual_variance < 1e-20);
    }

    #[test]
    fn collinear_columns_are_rank_deficient() {
        let x = design(&[
            vec![1.0, 1.0, 2.0],
            vec![1.0, 2.0, 4.0],
            vec![1.0, 3.0, 6.0],
            vec![1.0, 4.0, 8.0],
        ]);
        assert!(matches!(
            fit_ols(&x, &[1.0, 2.0, 3.0, 4.0]),
            Err(SurrogateError::RankDeficient { .. })
        ));
    }

    #[test]
    fn dimension_errors() {
        let x = design(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]]);
        assert!(matches!(
            fit_ols(&x, &[0.0, 1.0]),
            Err(SurrogateError::DimensionMismatch(_))
        ));
        let m = fit_ols(&x, &[0.0, 1.0, 2.5]).unwrap();
        assert!(matches!(
            m.predict(&[1.0]),
            Err(SurrogateError::DimensionMismatch(_))
        ));
        let square = design(&[vec![1.0, 0.0], vec![1.0, 1.0]]);
        assert!(matches!(
            fit_ols(&square, &[0.0, 1.0]),
            Err(SurrogateError::TooFewObservations { .. })
        ));
    }

    #[test]
    fn zero_covariance_predicts_residual_variance() {
        let m = LinearModel::from_estimates(&["a", "b"], &[0.5, 1.0], &[0.0, 0.0], 0.3_f64, 10);
        let p = m.predict(&[1.0, 2.0]).unwrap();
        assert!((p.mu - 2.5).abs() < 1e-15);
        assert!((p.sigma2 - 0.09).abs() < 1e-15);
    }

    #[test]
    fn covariance_is_symmetric() {
        let x = design(&[
            vec![1.0, 0.3, 5.0],
            vec![1.0, 1.1, 2.0],
            vec![1.0, 2.0, 7.0],
            vec![1.0, -0.4, 1.0],
            vec![1.0, 0.9, -3.0],
        ]);
        let m = fit_ols(&x, &[0.2, 1.0, 0.4, -0.3, 2.2]).unwrap();
        assert!(m.coef_covariance.max_asymmetry() < 1e-10);
        assert!(m.residual_variance > 0.0);
    }

    proptest! {
        #[test]
        fn predictive_variance_dominates_residual(
            x1 in -10.0f64..10.0, x2 in -10.0f64..10.0,
        ) {
            let x = design(&[
                vec![1.0, 0.3, 5.0],
                vec![1.0, 1.1, 2.0],
                vec![1.0, 2.0, 7.0],
                vec![1.0, -0.4, 1.0],
                vec![1.0, 0.9, -3.0],
            ]);
            let m = fit_ols(&x, &[0.2, 1.0, 0.4, -0.3, 2.2]).unwrap();
            let p = m.predict(&[1.0, x1, x2]).unwrap();
            prop_assert!(p.sigma2 >= m.residual_variance);
        }
    }
}
