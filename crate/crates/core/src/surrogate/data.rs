use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GpModel, GpModelFile, LinearModel, SurrogateError};
use crate::linalg::Matrix;
use crate::scalar::Real;

/// Feature matrix with column labels. All entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix<T> {
    values: Matrix<T>,
    feature_names: Vec<String>,
}

impl<T: Real> DesignMatrix<T> {
    pub fn new(values: Matrix<T>, feature_names: Vec<String>) -> Result<Self, SurrogateError> {
        if feature_names.len() != values.cols() {
            return Err(SurrogateError::DimensionMismatch(format!(
                "{} names for {} columns",
                feature_names.len(),
                values.cols()
            )));
        }
        if !values.all_finite() {
            return Err(SurrogateError::NonFinite("design matrix".into()));
        }
        Ok(Self {
            values,
            feature_names,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.values.rows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.cols()
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.values
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Copy with a leading column of ones named `(Intercept)`.
    pub fn with_intercept(&self) -> Self {
        let rows: Vec<Vec<T>> = (0..self.n_rows())
            .map(|i| {
                std::iter::once(T::one())
                    .chain(self.values.row(i).iter().copied())
                    .collect()
            })
            .collect();
        let mut names = vec!["(Intercept)".to_string()];
        names.extend(self.feature_names.iter().cloned());
        Self {
            values: Matrix::from_rows(&rows).expect("rows have equal length"),
            feature_names: names,
        }
    }

    /// Subset of rows in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let rows: Vec<Vec<T>> = idx.iter().map(|&i| self.values.row(i).to_vec()).collect();
        let values = if rows.is_empty() {
            Matrix::zeros(0, self.n_cols())
        } else {
            Matrix::from_rows(&rows).expect("rows have equal length")
        };
        Self {
            values,
            feature_names: self.feature_names.clone(),
        }
    }
}

/// Regression dataset read from CSV: the first column is the raw positive
/// response, the remaining columns are features in declared order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub response_name: String,
    pub x: DesignMatrix<f64>,
    /// Log of the raw response.
    pub log_y: Vec<f64>,
}

pub fn read_dataset(path: &Path) -> Result<Dataset, SurrogateError> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| SurrogateError::Data(format!("{}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| SurrogateError::Data(e.to_string()))?
        .clone();
    if headers.len() < 2 {
        return Err(SurrogateError::Data(
            "dataset needs a response and at least one feature column".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut log_y = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| SurrogateError::Data(e.to_string()))?;
        let parse = |col: usize| -> Result<f64, SurrogateError> {
            rec.get(col)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    SurrogateError::Data(format!(
                        "row {}, column '{}': not a finite number",
                        line + 2,
                        &headers[col]
                    ))
                })
        };
        let y = parse(0)?;
        if !(y > 0.0) {
            return Err(SurrogateError::Data(format!(
                "row {}: response must be positive for the log transform",
                line + 2
            )));
        }
        log_y.push(y.ln());
        rows.push((1..headers.len()).map(parse).collect::<Result<Vec<_>, _>>()?);
    }
    if rows.is_empty() {
        return Err(SurrogateError::Data("dataset has no rows".into()));
    }
    let names = headers.iter().skip(1).map(str::to_string).collect();
    Ok(Dataset {
        response_name: headers[0].to_string(),
        x: DesignMatrix::new(Matrix::from_rows(&rows).expect("uniform rows"), names)?,
        log_y,
    })
}

/// On-disk surrogate: either a linear model or a GP with its training data.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum SurrogateFile {
    Linear(LinearModel<f64>),
    Gp(GpModelFile<f64>),
}

pub fn save_linear(model: &LinearModel<f64>, path: &Path) -> Result<(), SurrogateError> {
    write_json(&SurrogateFile::Linear(model.clone()), path)
}

pub fn save_gp(model: &GpModel<f64>, path: &Path) -> Result<(), SurrogateError> {
    write_json(&SurrogateFile::Gp(model.to_file()), path)
}

pub fn load_surrogate(path: &Path) -> Result<SurrogateFile, SurrogateError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SurrogateError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| SurrogateError::Data(format!("{}: {e}", path.display())))
}

pub fn load_linear(path: &Path) -> Result<LinearModel<f64>, SurrogateError> {
    match load_surrogate(path)? {
        SurrogateFile::Linear(m) => Ok(m),
        SurrogateFile::Gp(_) => Err(SurrogateError::Data(format!(
            "{}: expected a linear model",
            path.display()
        ))),
    }
}

pub fn load_gp(path: &Path) -> Result<GpModel<f64>, SurrogateError> {
    match load_surrogate(path)? {
        SurrogateFile::Gp(f) => GpModel::from_file(f),
        SurrogateFile::Linear(_) => Err(SurrogateError::Data(format!(
            "{}: expected a GP model",
            path.display()
        ))),
    }
}

fn write_json<S: Serialize>(value: &S, path: &Path) -> Result<(), SurrogateError> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| SurrogateError::Data(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| SurrogateError::Data(format!("{}: {e}", path.display())))
}
