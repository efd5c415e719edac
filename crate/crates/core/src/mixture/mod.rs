//! Single-view Gaussian mixture models.
//!
//! Each view is clustered on its own by maximizing its marginal likelihood.
//! Everything downstream (coupling estimation, the test statistic, the
//! permutation null) only needs the fitted mixing proportions and the matrix
//! of per-component log densities, so [`MixtureFit`] carries both alongside
//! the usual parameter estimates.

mod data;
mod em;
mod kmeans;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use data::DataView;
pub use em::{fit_mixture, select_k, Criterion, EmOptions, KSelection};
pub use kmeans::{kmeans, KMeansOptions, KMeansResult};

/// Covariance structure shared by all components (mclust naming).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CovarianceStructure {
    /// `σ² I`, one variance for every component ("EII").
    #[serde(rename = "EII")]
    SphericalShared,
    /// Shared diagonal covariance ("EEI").
    #[serde(rename = "EEI")]
    DiagonalShared,
    /// Shared full covariance ("EEE").
    #[serde(rename = "EEE")]
    DenseShared,
}

impl CovarianceStructure {
    pub fn mclust_name(self) -> &'static str {
        match self {
            Self::SphericalShared => "EII",
            Self::DiagonalShared => "EEI",
            Self::DenseShared => "EEE",
        }
    }

    /// Number of free covariance parameters in dimension `p`.
    pub fn n_params(self, p: usize) -> usize {
        match self {
            Self::SphericalShared => 1,
            Self::DiagonalShared => p,
            Self::DenseShared => p * (p + 1) / 2,
        }
    }
}

impl fmt::Display for CovarianceStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mclust_name())
    }
}

impl FromStr for CovarianceStructure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "EII" | "SPHERICAL" => Ok(Self::SphericalShared),
            "EEI" | "DIAGONAL" => Ok(Self::DiagonalShared),
            "EEE" | "DENSE" => Ok(Self::DenseShared),
            other => Err(format!("unknown covariance structure `{other}` (expected EII, EEI or EEE)")),
        }
    }
}

/// Fitted covariance parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceParams {
    Spherical { variance: f64 },
    Diagonal { variances: DVector<f64> },
    Dense { matrix: DMatrix<f64> },
}

impl CovarianceParams {
    /// The full `p x p` covariance matrix.
    pub fn to_matrix(&self, p: usize) -> DMatrix<f64> {
        match self {
            Self::Spherical { variance } => DMatrix::identity(p, p) * *variance,
            Self::Diagonal { variances } => DMatrix::from_diagonal(variances),
            Self::Dense { matrix } => matrix.clone(),
        }
    }
}

/// A fitted finite Gaussian mixture for one view.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureFit {
    pub k: usize,
    pub structure: CovarianceStructure,
    /// `K x p`; row `k` is the mean of component `k`.
    pub means: DMatrix<f64>,
    pub covariance: CovarianceParams,
    /// Mixing proportions, strictly positive and summing to one.
    pub pi: DVector<f64>,
    /// `n x K` componentwise log densities at the fitted parameters.
    pub log_phi: DMatrix<f64>,
    /// `n x K` posterior membership probabilities.
    pub responsibilities: DMatrix<f64>,
    pub loglik: f64,
    pub n_params: usize,
    pub bic: f64,
    pub aic: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood at every EM iteration of the selected restart (since its
    /// last reseed).
    pub trace: Vec<f64>,
}

impl MixtureFit {
    pub fn n(&self) -> usize {
        self.log_phi.nrows()
    }

    pub fn p(&self) -> usize {
        self.means.ncols()
    }

    pub fn hard_labels(&self) -> HardLabels {
        hard_labels(self)
    }
}

/// Cluster assignments, 0-based (`labels[i] < k`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HardLabels {
    labels: Vec<usize>,
    k: usize,
}

impl HardLabels {
    /// # Panics
    /// If any label is `>= k`.
    pub fn new(labels: Vec<usize>, k: usize) -> Self {
        assert!(labels.iter().all(|&l| l < k), "label out of range for k = {k}");
        Self { labels, k }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Relabels `labels[i] = self[perm[i]]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            labels: perm.iter().map(|&i| self.labels[i]).collect(),
            k: self.k,
        }
    }

    /// Drops unused clusters, renumbering the remaining ones in order.
    pub fn compacted(&self) -> Self {
        let mut map = vec![usize::MAX; self.k];
        let mut used = 0;
        for &l in &self.labels {
            if map[l] == usize::MAX {
                map[l] = 0;
            }
        }
        for m in map.iter_mut() {
            if *m == 0 {
                *m = used;
                used += 1;
            }
        }
        Self {
            labels: self.labels.iter().map(|&l| map[l]).collect(),
            k: used.max(1),
        }
    }
}

/// Row-wise argmax of the responsibilities; ties go to the lowest index.
pub fn hard_labels(fit: &MixtureFit) -> HardLabels {
    argmax_rows(&fit.responsibilities)
}

pub(crate) fn argmax_rows(m: &DMatrix<f64>) -> HardLabels {
    let labels = (0..m.nrows())
        .map(|i| {
            let mut best = 0;
            for k in 1..m.ncols() {
                if m[(i, k)] > m[(i, best)] {
                    best = k;
                }
            }
            best
        })
        .collect();
    HardLabels::new(labels, m.ncols())
}

/// `log(sum(exp(xs)))` without overflow.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Row-major copy of a data matrix for cache-friendly per-observation loops.
#[derive(Debug, Clone)]
pub(crate) struct RowMajor {
    buf: Vec<f64>,
    n: usize,
    p: usize,
}

impl RowMajor {
    pub(crate) fn from_matrix(m: &DMatrix<f64>) -> Self {
        let (n, p) = m.shape();
        let mut buf = Vec::with_capacity(n * p);
        for i in 0..n {
            buf.extend(m.row(i).iter());
        }
        Self { buf, n, p }
    }

    pub(crate) fn from_rows_in_order(m: &DMatrix<f64>, order: &[usize]) -> Self {
        let p = m.ncols();
        let mut buf = Vec::with_capacity(order.len() * p);
        for &i in order {
            buf.extend(m.row(i).iter());
        }
        Self { buf, n: order.len(), p }
    }

    pub(crate) fn n(&self) -> usize {
        self.n
    }

    pub(crate) fn p(&self) -> usize {
        self.p
    }

    pub(crate) fn row(&self, i: usize) -> &[f64] {
        &self.buf[i * self.p..(i + 1) * self.p]
    }
}
