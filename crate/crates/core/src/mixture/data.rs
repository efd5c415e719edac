use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// One view of the data: `n` observations (rows) by `p` features (columns).
///
/// Construction validates that there are at least two observations, at least
/// one feature and no missing or non-finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DataView {
    data: DMatrix<f64>,
    feature_names: Option<Vec<String>>,
    view_id: String,
}

impl DataView {
    pub fn new(data: DMatrix<f64>, view_id: impl Into<String>) -> Result<Self> {
        if data.nrows() < 2 {
            return Err(Error::InvalidView(format!(
                "need at least 2 observations, got {}",
                data.nrows()
            )));
        }
        if data.ncols() < 1 {
            return Err(Error::InvalidView("need at least 1 feature".into()));
        }
        for j in 0..data.ncols() {
            for i in 0..data.nrows() {
                if !data[(i, j)].is_finite() {
                    return Err(Error::NonFiniteInput { row: i, col: j });
                }
            }
        }
        Ok(Self {
            data,
            feature_names: None,
            view_id: view_id.into(),
        })
    }

    /// Builds a view from row vectors, which must all have the same length.
    pub fn from_rows(rows: &[Vec<f64>], view_id: impl Into<String>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: bad.len(),
            });
        }
        let data = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        Self::new(data, view_id)
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                found: names.len(),
            });
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn p(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn view_id(&self) -> &str {
        &self.view_id
    }

    /// New view whose row `i` is row `perm[i]` of this one.
    pub fn permute_rows(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                found: perm.len(),
            });
        }
        let data = DMatrix::from_fn(self.n(), self.p(), |i, j| self.data[(perm[i], j)]);
        Ok(Self {
            data,
            feature_names: self.feature_names.clone(),
            view_id: self.view_id.clone(),
        })
    }

    /// Multiplies every entry by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let mut out = Self::new(&self.data * c, self.view_id.clone())?;
        out.feature_names = self.feature_names.clone();
        Ok(out)
    }

    /// Per-column sample variances (divisor `n`).
    pub fn column_variances(&self) -> Vec<f64> {
        let n = self.n() as f64;
        self.data
            .column_iter()
            .map(|col| {
                let mean = col.sum() / n;
                col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
            })
            .collect()
    }

    /// Rescales every column to unit standard deviation (divisor `n - 1`).
    /// Constant columns are left untouched.
    pub fn standardized(&self) -> Self {
        let n = self.n() as f64;
        let mut data = self.data.clone();
        for mut col in data.column_iter_mut() {
            let mean = col.sum() / n;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            if var > 0.0 {
                col /= var.sqrt();
            }
        }
        Self {
            data,
            feature_names: self.feature_names.clone(),
            view_id: self.view_id.clone(),
        }
    }
}
