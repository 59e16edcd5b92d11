use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_gp, fit_ols, DesignMatrix, GpFitOptions, KernelSpec, SurrogateError, Trend};
use crate::rng;
use crate::scalar::Real;

/// Point predictor produced by a [`Fitter`].
pub trait Predictor<T>: Send {
    fn predict_mean(&self, x: &[T]) -> Result<T, SurrogateError>;
}

/// A model family that can be trained on one fold.
pub trait Fitter<T>: Sync {
    fn name(&self) -> String;
    fn fit(
        &self,
        x: &DesignMatrix<T>,
        y: &[T],
        seed: u64,
    ) -> Result<Box<dyn Predictor<T>>, SurrogateError>;
}

/// Predicts the training mean everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct Baseline;

struct Constant<T>(T);

impl<T: Real> Predictor<T> for Constant<T> {
    fn predict_mean(&self, _x: &[T]) -> Result<T, SurrogateError> {
        Ok(self.0)
    }
}

impl<T: Real> Fitter<T> for Baseline {
    fn name(&self) -> String {
        "Baseline".into()
    }

    fn fit(
        &self,
        _x: &DesignMatrix<T>,
        y: &[T],
        _seed: u64,
    ) -> Result<Box<dyn Predictor<T>>, SurrogateError> {
        if y.is_empty() {
            return Err(SurrogateError::FoldTooSmall("empty training set".into()));
        }
        let mean = y.iter().copied().sum::<T>() / T::lit(y.len() as f64);
        Ok(Box::new(Constant(mean)))
    }
}

/// OLS with an intercept column prepended.
#[derive(Debug, Clone, Copy, Default)]
pub struct OlsFitter;

struct OlsPredictor<T: Real>(super::LinearModel<T>);

impl<T: Real> Predictor<T> for OlsPredictor<T> {
    fn predict_mean(&self, x: &[T]) -> Result<T, SurrogateError> {
        let mut row = Vec::with_capacity(x.len() + 1);
        row.push(T::one());
        row.extend_from_slice(x);
        self.0.mean(&row)
    }
}

impl<T: Real> Fitter<T> for OlsFitter {
    fn name(&self) -> String {
        "OLS".into()
    }

    fn fit(
        &self,
        x: &DesignMatrix<T>,
        y: &[T],
        _seed: u64,
    ) -> Result<Box<dyn Predictor<T>>, SurrogateError> {
        Ok(Box::new(OlsPredictor(fit_ols(&x.with_intercept(), y)?)))
    }
}

#[derive(Debug, Clone)]
pub struct GpFitter<T: Real> {
    pub label: String,
    pub template: KernelSpec<T>,
    pub trend: Trend,
    pub options: GpFitOptions,
}

struct GpPredictor<T: Real>(super::GpModel<T>);

impl<T: Real> Predictor<T> for GpPredictor<T> {
    fn predict_mean(&self, x: &[T]) -> Result<T, SurrogateError> {
        self.0.predict(x).map(|(m, _)| m)
    }
}

impl<T: Real> Fitter<T> for GpFitter<T> {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn fit(
        &self,
        x: &DesignMatrix<T>,
        y: &[T],
        seed: u64,
    ) -> Result<Box<dyn Predictor<T>>, SurrogateError> {
        let opts = GpFitOptions {
            seed,
            ..self.options.clone()
        };
        let m = fit_gp(x.matrix(), y, &self.template, self.trend, &opts)?;
        Ok(Box::new(GpPredictor(m)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    /// `None` when the held-out fold has zero spread (e.g. a single point).
    pub r2: Option<f64>,
    pub rmse: f64,
    pub mae: f64,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub model: String,
    pub r2_mean: Option<f64>,
    pub r2_sd: Option<f64>,
    pub rmse_mean: f64,
    pub rmse_sd: f64,
    pub mae_mean: f64,
    pub mae_sd: f64,
    /// R² of the pooled out-of-sample predictions against the overall mean.
    pub pooled_r2: f64,
    pub folds: Vec<FoldMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub fold_seed: u64,
    pub rows: Vec<CvRow>,
}

/// Shuffled assignment of `n` indices to `k` test folds.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, &[rng::tag::CV_FOLDS]));
    let mut folds = vec![Vec::new(); k];
    for (pos, i) in idx.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    folds
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = v.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// K-fold cross-validation of each fitter on a log-scale response.
///
/// A mean-only [`Baseline`] row is always reported first.
pub fn kfold_cv<T: Real>(
    x: &DesignMatrix<T>,
    y: &[T],
    fitters: &[&dyn Fitter<T>],
    k: usize,
    seed: u64,
) -> Result<CvReport, SurrogateError> {
    let n = x.n_rows();
    if y.len() != n {
        return Err(SurrogateError::DimensionMismatch(format!(
            "{} responses for {} rows",
            y.len(),
            n
        )));
    }
    if k < 2 || n < k {
        return Err(SurrogateError::FoldTooSmall(format!(
            "need 2 <= K <= n, got K = {k}, n = {n}"
        )));
    }
    let folds = fold_assignment(n, k, seed);
    let baseline = Baseline;
    let mut all: Vec<&dyn Fitter<T>> = vec![&baseline];
    all.extend(fitters.iter().copied().filter(|f| f.name() != "Baseline"));

    let y64: Vec<f64> = y.iter().map(|v| v.as_f64()).collect();
    let overall_mean = y64.iter().sum::<f64>() / n as f64;
    let sst_all: f64 = y64.iter().map(|v| (v - overall_mean).powi(2)).sum();

    let mut rows = Vec::with_capacity(all.len());
    for fitter in all {
        let per_fold: Vec<(FoldMetrics, Vec<(usize, f64)>)> = folds
            .par_iter()
            .enumerate()
            .map(|(f, test)| {
                let train: Vec<usize> = (0..n).filter(|i| test.binary_search(i).is_err()).collect();
                let ytr: Vec<T> = train.iter().map(|&i| y[i]).collect();
                let model = fitter.fit(
                    &x.select_rows(&train),
                    &ytr,
                    rng::stream_id(seed, &[rng::tag::CV_FOLDS, f as u64]),
                )?;
                let mut preds = Vec::with_capacity(test.len());
                for &i in test {
                    preds.push((i, model.predict_mean(x.matrix().row(i))?.as_f64()));
                }
                let yt: Vec<f64> = test.iter().map(|&i| y64[i]).collect();
                let ybar = yt.iter().sum::<f64>() / yt.len() as f64;
                let sse: f64 = preds.iter().map(|(i, p)| (y64[*i] - p).powi(2)).sum();
                let sae: f64 = preds.iter().map(|(i, p)| (y64[*i] - p).abs()).sum();
                let sst: f64 = yt.iter().map(|v| (v - ybar).powi(2)).sum();
                let m = test.len() as f64;
                Ok((
                    FoldMetrics {
                        r2: (sst > 0.0).then(|| 1.0 - sse / sst),
                        rmse: (sse / m).sqrt(),
                        mae: sae / m,
                        n_test: test.len(),
                    },
                    preds,
                ))
            })
            .collect::<Result<_, SurrogateError>>()?;

        let r2s: Vec<f64> = per_fold.iter().filter_map(|(m, _)| m.r2).collect();
        let rmse: Vec<f64> = per_fold.iter().map(|(m, _)| m.rmse).collect();
        let mae: Vec<f64> = per_fold.iter().map(|(m, _)| m.mae).collect();
        let sse_pooled: f64 = per_fold
            .iter()
            .flat_map(|(_, p)| p.iter())
            .map(|(i, p)| (y64[*i] - p).powi(2))
            .sum();
        let (r2_mean, r2_sd) = if r2s.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_sd(&r2s);
            (Some(m), Some(s))
        };
        let (rmse_mean, rmse_sd) = mean_sd(&rmse);
        let (mae_mean, mae_sd) = mean_sd(&mae);
        rows.push(CvRow {
            model: fitter.name(),
            r2_mean,
            r2_sd,
            rmse_mean,
            rmse_sd,
            mae_mean,
            mae_sd,
            pooled_r2: if sst_all > 0.0 {
                1.0 - sse_pooled / sst_all
            } else if sse_pooled == 0.0 {
                1.0
            } else {
                f64::NEG_INFINITY
            },
            folds: per_fold.into_iter().map(|(m, _)| m).collect(),
        });
    }
    Ok(CvReport {
        k,
        fold_seed: seed,
        rows,
    })
}
