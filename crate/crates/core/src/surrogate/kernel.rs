use serde::{Deserialize, Serialize};

use super::SurrogateError;
use crate::linalg::Matrix;
use crate::scalar::Real;

/// Covariance kernel tree.
///
/// Leaves act on the input coordinates listed in `dims`; `Sum` and `Product`
/// combine children, which may share or partition the input dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Real")]
pub enum KernelSpec<T> {
    Gaussian {
        variance: T,
        scales: Vec<T>,
        dims: Vec<usize>,
    },
    Matern52 {
        variance: T,
        scales: Vec<T>,
        dims: Vec<usize>,
    },
    Periodic {
        variance: T,
        scales: Vec<T>,
        periods: Vec<T>,
        dims: Vec<usize>,
        /// Keep the periods at their template values during fitting.
        #[serde(default)]
        fix_period: bool,
    },
    Sum {
        children: Vec<KernelSpec<T>>,
    },
    Product {
        children: Vec<KernelSpec<T>>,
    },
}

impl<T: Real> KernelSpec<T> {
    pub fn gaussian(dims: Vec<usize>, scales: Vec<T>, variance: T) -> Self {
        Self::Gaussian {
            variance,
            scales,
            dims,
        }
    }

    pub fn matern52(dims: Vec<usize>, scales: Vec<T>, variance: T) -> Self {
        Self::Matern52 {
            variance,
            scales,
            dims,
        }
    }

    pub fn periodic(dims: Vec<usize>, scales: Vec<T>, periods: Vec<T>, variance: T) -> Self {
        Self::Periodic {
            variance,
            scales,
            periods,
            dims,
            fix_period: false,
        }
    }

    pub fn sum(children: Vec<Self>) -> Self {
        Self::Sum { children }
    }

    pub fn product(children: Vec<Self>) -> Self {
        Self::Product { children }
    }

    /// Check parameter positivity and that every referenced dimension exists.
    pub fn validate(&self, input_dim: usize) -> Result<(), SurrogateError> {
        let bad = |msg: String| Err(SurrogateError::InvalidKernel(msg));
        let check_leaf = |variance: T, scales: &[T], dims: &[usize]| {
            if !(variance > T::zero()) || !variance.is_finite() {
                return bad(format!("variance must be positive, got {variance}"));
            }
            if dims.is_empty() || scales.len() != dims.len() {
                return bad(format!(
                    "{} scales for {} dims",
                    scales.len(),
                    dims.len()
                ));
            }
            if let Some(d) = dims.iter().find(|&&d| d >= input_dim) {
                return bad(format!("dim {d} out of range for {input_dim} inputs"));
            }
            if scales.iter().any(|s| !(*s > T::zero()) || !s.is_finite()) {
                return bad("scales must be positive".into());
            }
            Ok(())
        };
        match self {
            Self::Gaussian {
                variance,
                scales,
                dims,
            }
            | Self::Matern52 {
                variance,
                scales,
                dims,
            } => check_leaf(*variance, scales, dims),
            Self::Periodic {
                variance,
                scales,
                periods,
                dims,
                ..
            } => {
                check_leaf(*variance, scales, dims)?;
                if periods.len() != dims.len()
                    || periods.iter().any(|p| !(*p > T::zero()) || !p.is_finite())
                {
                    return bad("periods must be positive, one per dim".into());
                }
                Ok(())
            }
            Self::Sum { children } | Self::Product { children } => {
                if children.is_empty() {
                    return bad("composite kernel without children".into());
                }
                children.iter().try_for_each(|c| c.validate(input_dim))
            }
        }
    }

    /// Covariance between two input vectors.
    pub fn eval(&self, x: &[T], y: &[T]) -> T {
        match self {
            Self::Gaussian {
                variance,
                scales,
                dims,
            } => {
                let q = scaled_sq_dist(x, y, dims, scales);
                *variance * (-q * T::lit(0.5)).exp()
            }
            Self::Matern52 {
                variance,
                scales,
                dims,
            } => {
                let t = scaled_sq_dist(x, y, dims, scales).sqrt();
                let r5 = T::lit(5.0).sqrt() * t;
                *variance * (T::one() + r5 + T::lit(5.0) * t * t / T::lit(3.0)) * (-r5).exp()
            }
            Self::Periodic {
                variance,
                scales,
                periods,
                dims,
                ..
            } => {
                let mut acc = T::zero();
                for ((&d, &s), &p) in dims.iter().zip(scales).zip(periods) {
                    let sn = (T::PI() * (x[d] - y[d]) / p).sin();
                    acc = acc + T::lit(2.0) * sn * sn / (s * s);
                }
                *variance * (-acc).exp()
            }
            Self::Sum { children } => children.iter().map(|c| c.eval(x, y)).sum(),
            Self::Product { children } => children
                .iter()
                .fold(T::one(), |acc, c| acc * c.eval(x, y)),
        }
    }

    /// `k(x, x)`, identical for every input.
    pub fn diag_value(&self) -> T {
        match self {
            Self::Gaussian { variance, .. }
            | Self::Matern52 { variance, .. }
            | Self::Periodic { variance, .. } => *variance,
            Self::Sum { children } => children.iter().map(Self::diag_value).sum(),
            Self::Product { children } => children
                .iter()
                .fold(T::one(), |acc, c| acc * c.diag_value()),
        }
    }

    /// Multiply the whole kernel by `factor`.
    pub fn scale_variance(&mut self, factor: T) {
        match self {
            Self::Gaussian { variance, .. }
            | Self::Matern52 { variance, .. }
            | Self::Periodic { variance, .. } => *variance = *variance * factor,
            Self::Sum { children } => children.iter_mut().for_each(|c| c.scale_variance(factor)),
            Self::Product { children } => {
                if let Some(first) = children.first_mut() {
                    first.scale_variance(factor);
                }
            }
        }
    }

    /// Copy rescaled so that `k(x, x) = 1`.
    pub fn normalized(&self) -> Self {
        let mut k = self.clone();
        let d = k.diag_value();
        if d > T::zero() {
            k.scale_variance(T::one() / d);
        }
        k
    }

    pub fn gram(&self, x: &Matrix<T>) -> Matrix<T> {
        let n = x.rows();
        let mut k = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.eval(x.row(i), x.row(j));
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    /// Cross covariances between `x_star` and every training row.
    pub fn cross(&self, x: &Matrix<T>, x_star: &[T]) -> Vec<T> {
        (0..x.rows()).map(|i| self.eval(x.row(i), x_star)).collect()
    }

    /// Free hyperparameters on the log scale.
    ///
    /// Length scales and (unless fixed) periods are always free. The overall
    /// amplitude is profiled out by the GP fit, so only the relative variances
    /// of the second and later children of a `Sum` are free.
    pub fn log_params(&self) -> Vec<T> {
        let mut out = Vec::new();
        self.collect_params(&mut out);
        out
    }

    fn collect_params(&self, out: &mut Vec<T>) {
        match self {
            Self::Gaussian { scales, .. } | Self::Matern52 { scales, .. } => {
                out.extend(scales.iter().map(|s| s.ln()));
            }
            Self::Periodic {
                scales,
                periods,
                fix_period,
                ..
            } => {
                out.extend(scales.iter().map(|s| s.ln()));
                if !fix_period {
                    out.extend(periods.iter().map(|p| p.ln()));
                }
            }
            Self::Sum { children } => {
                for (i, c) in children.iter().enumerate() {
                    if i > 0 {
                        out.push(c.diag_value().ln());
                    }
                    c.collect_params(out);
                }
            }
            Self::Product { children } => children.iter().for_each(|c| c.collect_params(out)),
        }
    }

    /// Copy with free hyperparameters replaced from a log-scale vector laid
    /// out as in [`KernelSpec::log_params`].
    pub fn with_log_params(&self, params: &[T]) -> Self {
        let mut k = self.clone();
        let mut it = params.iter().copied();
        k.assign_params(&mut it);
        k
    }

    fn assign_params(&mut self, it: &mut impl Iterator<Item = T>) {
        match self {
            Self::Gaussian { scales, .. } | Self::Matern52 { scales, .. } => {
                for s in scales.iter_mut() {
                    *s = it.next().expect("parameter vector too short").exp();
                }
            }
            Self::Periodic {
                scales,
                periods,
                fix_period,
                ..
            } => {
                for s in scales.iter_mut() {
                    *s = it.next().expect("parameter vector too short").exp();
                }
                if !*fix_period {
                    for p in periods.iter_mut() {
                        *p = it.next().expect("parameter vector too short").exp();
                    }
                }
            }
            Self::Sum { children } => {
                for (i, c) in children.iter_mut().enumerate() {
                    if i > 0 {
                        let target = it.next().expect("parameter vector too short").exp();
                        let current = c.diag_value();
                        c.scale_variance(target / current);
                    }
                    c.assign_params(it);
                }
            }
            Self::Product { children } => children.iter_mut().for_each(|c| c.assign_params(it)),
        }
    }

    /// Characteristic magnitude of each free parameter given training inputs,
    /// used to centre multi-start draws.
    pub fn param_magnitudes(&self, x: &Matrix<T>) -> Vec<T> {
        let mut out = Vec::new();
        self.collect_magnitudes(x, &mut out);
        out
    }

    fn collect_magnitudes(&self, x: &Matrix<T>, out: &mut Vec<T>) {
        let range = |d: usize| {
            let col = x.column(d);
            let lo = col.iter().copied().fold(T::infinity(), T::min);
            let hi = col.iter().copied().fold(T::neg_infinity(), T::max);
            let r = hi - lo;
            if r > T::zero() && r.is_finite() {
                r
            } else {
                T::one()
            }
        };
        match self {
            Self::Gaussian { dims, .. } | Self::Matern52 { dims, .. } => {
                out.extend(dims.iter().map(|&d| range(d)));
            }
            Self::Periodic {
                dims, fix_period, ..
            } => {
                // periodic scales are dimensionless
                out.extend(dims.iter().map(|_| T::one()));
                if !fix_period {
                    out.extend(dims.iter().map(|&d| range(d)));
                }
            }
            Self::Sum { children } => {
                for (i, c) in children.iter().enumerate() {
                    if i > 0 {
                        out.push(T::one());
                    }
                    c.collect_magnitudes(x, out);
                }
            }
            Self::Product { children } => {
                children.iter().for_each(|c| c.collect_magnitudes(x, out))
            }
        }
    }
}

#[inline]
fn scaled_sq_dist<T: Real>(x: &[T], y: &[T], dims: &[usize], scales: &[T]) -> T {
    dims.iter().zip(scales).fold(T::zero(), |acc, (&d, &s)| {
        let r = (x[d] - y[d]) / s;
        acc + r * r
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::jittered_cholesky;
    use proptest::prelude::*;

    fn all_variants() -> Vec<KernelSpec<f64>> {
        let g = KernelSpec::gaussian(vec![0, 1], vec![0.7, 1.3], 1.5);
        let m = KernelSpec::matern52(vec![0, 1], vec![0.9, 0.4], 0.8);
        let p = KernelSpec::periodic(vec![2], vec![0.6], vec![4.0], 1.2);
        vec![
            g,
            m.clone(),
            p.clone(),
            KernelSpec::sum(vec![m.clone(), p.clone()]),
            KernelSpec::product(vec![m, p]),
        ]
    }

    #[test]
    fn matern_closed_form_at_unit_distance() {
        let k = KernelSpec::matern52(vec![0], vec![1.0_f64], 1.0);
        let r5 = 5f64.sqrt();
        let expected = (1.0 + r5 + 5.0 / 3.0) * (-r5).exp();
        assert!((k.eval(&[0.0], &[1.0]) - expected).abs() < 1e-15);
        assert!((expected - 0.5240).abs() < 5e-5);
    }

    #[test]
    fn periodic_repeats_after_one_period() {
        let k = KernelSpec::periodic(vec![0], vec![0.5_f64], vec![3.0], 2.0);
        assert!((k.eval(&[1.0], &[4.0]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn composite_diagonals() {
        let v = all_variants();
        let x = [0.3, -1.0, 2.0];
        assert!((v[3].eval(&x, &x) - (0.8 + 1.2)).abs() < 1e-15);
        assert!((v[4].eval(&x, &x) - 0.8 * 1.2).abs() < 1e-15);
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let k = KernelSpec::matern52(vec![3], vec![1.0_f64], 1.0);
        assert!(k.validate(3).is_err());
        let k = KernelSpec::gaussian(vec![0], vec![-1.0_f64], 1.0);
        assert!(k.validate(1).is_err());
        assert!(KernelSpec::<f64>::sum(vec![]).validate(1).is_err());
        for k in all_variants() {
            k.validate(3).unwrap();
        }
    }

    #[test]
    fn log_params_round_trip() {
        for k in all_variants() {
            let p = k.log_params();
            let back = k.with_log_params(&p);
            for (a, b) in back.log_params().iter().zip(&p) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sum_child_variance_is_free() {
        let k = all_variants()[3].normalized();
        assert!((k.diag_value() - 1.0).abs() < 1e-14);
        let mut p = k.log_params();
        // layout: matern scales (2), then periodic relative variance, scale, period
        p[2] = (0.25f64).ln();
        let k2 = k.with_log_params(&p);
        if let KernelSpec::Sum { children } = &k2 {
            assert!((children[1].diag_value() - 0.25).abs() < 1e-14);
        } else {
            unreachable!()
        }
    }

    proptest! {
        #[test]
        fn symmetric_with_constant_diagonal(
            a in proptest::collection::vec(-5.0f64..5.0, 3),
            b in proptest::collection::vec(-5.0f64..5.0, 3),
        ) {
            for k in all_variants() {
                prop_assert!((k.eval(&a, &b) - k.eval(&b, &a)).abs() < 1e-12);
                prop_assert!((k.eval(&a, &a) - k.diag_value()).abs() < 1e-12);
            }
        }

        #[test]
        fn gram_is_pd_after_jitter(
            pts in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 3), 2..50)
        ) {
            let x = Matrix::from_rows(&pts).unwrap();
            for k in all_variants() {
                prop_assert!(jittered_cholesky(&k.gram(&x)).is_some());
            }
        }
    }
}
