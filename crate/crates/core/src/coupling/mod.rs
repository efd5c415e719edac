//! Cross-view dependence between two fitted mixtures.
//!
//! The joint membership matrix `Π` is stored alongside its marginals and the
//! ratio matrix `C = Π ./ (π¹ π²ᵀ)`; independence is `C = 11ᵀ`.
//!
//! Everything here works on posterior membership probabilities rather than raw
//! densities. For observation `i`,
//! `φ¹ᵢᵀ diag(π¹) C diag(π²) φ²ᵢ = f¹ᵢ f²ᵢ · γ¹ᵢᵀ C γ²ᵢ`, where `fˡᵢ` is the
//! marginal mixture density and `γˡᵢ` the posterior. The marginal factors do
//! not depend on `C`, so they drop out of the optimization and of the test
//! statistic, and nothing underflows even for very high-dimensional views.

mod eg;
mod sinkhorn;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mixture::log_sum_exp;

pub use eg::{estimate_c, estimate_c_posteriors, CouplingEstimate, EgOptions};
pub use sinkhorn::{sinkhorn_balance, Balancing};

/// Constraint tolerance for feasible couplings.
pub const FEASIBILITY_TOL: f64 = 1e-8;

/// A feasible coupling between two mixtures.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    c: DMatrix<f64>,
    pi1: DVector<f64>,
    pi2: DVector<f64>,
    joint: DMatrix<f64>,
}

impl Coupling {
    /// The independence coupling `C = 11ᵀ`.
    pub fn independent(pi1: &DVector<f64>, pi2: &DVector<f64>) -> Result<Self> {
        Self::from_c(DMatrix::from_element(pi1.len(), pi2.len(), 1.0), pi1, pi2)
    }

    /// Checks `C ≥ 0`, `C π² = 1` and `Cᵀ π¹ = 1`.
    pub fn from_c(c: DMatrix<f64>, pi1: &DVector<f64>, pi2: &DVector<f64>) -> Result<Self> {
        check_simplex(pi1, "pi1")?;
        check_simplex(pi2, "pi2")?;
        if c.shape() != (pi1.len(), pi2.len()) {
            return Err(Error::DimensionMismatch {
                expected: pi1.len() * pi2.len(),
                found: c.len(),
            });
        }
        if c.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "C",
                message: "entries must be finite and nonnegative".into(),
            });
        }
        let rows = (&c * pi2).map(|x| (x - 1.0).abs()).max();
        let cols = (c.transpose() * pi1).map(|x| (x - 1.0).abs()).max();
        let deviation = rows.max(cols);
        if deviation > FEASIBILITY_TOL {
            return Err(Error::MarginMismatch { deviation });
        }
        let joint = build_joint(&c, pi1, pi2);
        Ok(Self {
            c,
            pi1: pi1.clone(),
            pi2: pi2.clone(),
            joint,
        })
    }

    /// From a joint matrix whose margins are `pi1` and `pi2`.
    pub fn from_joint(joint: &DMatrix<f64>, pi1: &DVector<f64>, pi2: &DVector<f64>) -> Result<Self> {
        let c = pi_to_c(joint, pi1, pi2)?;
        Self::from_c(c, pi1, pi2)
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn pi1(&self) -> &DVector<f64> {
        &self.pi1
    }

    pub fn pi2(&self) -> &DVector<f64> {
        &self.pi2
    }

    /// `Π = diag(π¹) C diag(π²)`.
    pub fn joint(&self) -> &DMatrix<f64> {
        &self.joint
    }

    pub fn k1(&self) -> usize {
        self.pi1.len()
    }

    pub fn k2(&self) -> usize {
        self.pi2.len()
    }
}

fn build_joint(c: &DMatrix<f64>, pi1: &DVector<f64>, pi2: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(c.nrows(), c.ncols(), |k, l| pi1[k] * c[(k, l)] * pi2[l])
}

fn check_simplex(pi: &DVector<f64>, name: &'static str) -> Result<()> {
    if pi.is_empty() || pi.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::InvalidParameter {
            name,
            message: "must be nonempty with strictly positive finite entries".into(),
        });
    }
    let deviation = (pi.sum() - 1.0).abs();
    if deviation > FEASIBILITY_TOL {
        return Err(Error::MarginMismatch { deviation });
    }
    Ok(())
}

/// `C_kk' = Π_kk' / (π¹_k π²_k')`, after checking that `Π` has the given
/// margins.
pub fn pi_to_c(joint: &DMatrix<f64>, pi1: &DVector<f64>, pi2: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_simplex(pi1, "pi1")?;
    check_simplex(pi2, "pi2")?;
    if joint.shape() != (pi1.len(), pi2.len()) {
        return Err(Error::DimensionMismatch {
            expected: pi1.len() * pi2.len(),
            found: joint.len(),
        });
    }
    let row_dev = (0..joint.nrows())
        .map(|k| (joint.row(k).sum() - pi1[k]).abs())
        .fold(0.0, f64::max);
    let col_dev = (0..joint.ncols())
        .map(|l| (joint.column(l).sum() - pi2[l]).abs())
        .fold(0.0, f64::max);
    let deviation = row_dev.max(col_dev);
    if deviation > FEASIBILITY_TOL {
        return Err(Error::MarginMismatch { deviation });
    }
    Ok(DMatrix::from_fn(joint.nrows(), joint.ncols(), |k, l| {
        joint[(k, l)] / (pi1[k] * pi2[l])
    }))
}

/// Posterior memberships `γᵢ = softmax(log φᵢ + log π)` and the per-row log
/// marginal densities `log Σ_k π_k φ_ik`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors {
    gamma: Vec<f64>,
    log_marginal: Vec<f64>,
    n: usize,
    k: usize,
}

impl Posteriors {
    pub fn from_log_phi(log_phi: &DMatrix<f64>, pi: &DVector<f64>) -> Result<Self> {
        let (n, k) = log_phi.shape();
        if pi.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: pi.len(),
            });
        }
        let log_pi: Vec<f64> = pi.iter().map(|p| p.ln()).collect();
        let mut gamma = vec![0.0; n * k];
        let mut log_marginal = vec![0.0; n];
        let mut w = vec![0.0; k];
        for i in 0..n {
            for c in 0..k {
                w[c] = log_phi[(i, c)] + log_pi[c];
            }
            let l = log_sum_exp(&w);
            if !l.is_finite() {
                return Err(Error::NonFinite { observation: i });
            }
            for c in 0..k {
                gamma[i * k + c] = (w[c] - l).exp();
            }
            log_marginal[i] = l;
        }
        Ok(Self {
            gamma,
            log_marginal,
            n,
            k,
        })
    }

    /// Uses the given row-stochastic matrix directly; log marginals are set
    /// to zero.
    pub fn from_probabilities(probs: &DMatrix<f64>) -> Result<Self> {
        let (n, k) = probs.shape();
        let mut gamma = Vec::with_capacity(n * k);
        for i in 0..n {
            let row = probs.row(i);
            if row.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) || (row.sum() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter {
                    name: "probabilities",
                    message: format!("row {i} is not a probability vector"),
                });
            }
            gamma.extend(row.iter());
        }
        Ok(Self {
            gamma,
            log_marginal: vec![0.0; n],
            n,
            k,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.gamma[i * self.k..(i + 1) * self.k]
    }

    pub fn log_marginal(&self) -> &[f64] {
        &self.log_marginal
    }

    /// Row `i` of the result is row `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut gamma = Vec::with_capacity(self.gamma.len());
        for &i in perm {
            gamma.extend_from_slice(self.row(i));
        }
        Self {
            gamma,
            log_marginal: perm.iter().map(|&i| self.log_marginal[i]).collect(),
            n: self.n,
            k: self.k,
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.k, &self.gamma)
    }
}

/// `Σᵢ log(γ¹ᵢᵀ C γ²ᵢ)`: the pseudo log-likelihood at `C` minus its value at
/// independence.
pub(crate) fn log_ratio(p1: &Posteriors, p2: &Posteriors, c: &DMatrix<f64>) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..p1.n() {
        let d = bilinear(p1.row(i), c, p2.row(i));
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NonFinite { observation: i });
        }
        total += d.ln();
    }
    Ok(total)
}

fn bilinear(a: &[f64], c: &DMatrix<f64>, b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (k, &ak) in a.iter().enumerate() {
        if ak == 0.0 {
            continue;
        }
        let mut t = 0.0;
        for (l, &bl) in b.iter().enumerate() {
            t += c[(k, l)] * bl;
        }
        s += ak * t;
    }
    s
}

/// Pseudo log-likelihood `Σᵢ log(φ¹ᵢᵀ diag(π¹) C diag(π²) φ²ᵢ)` of the joint
/// model, with the densities and proportions fixed at the marginal fits.
pub fn pseudo_loglik(log_phi1: &DMatrix<f64>, log_phi2: &DMatrix<f64>, coupling: &Coupling) -> Result<f64> {
    if log_phi1.nrows() != log_phi2.nrows() {
        return Err(Error::DimensionMismatch {
            expected: log_phi1.nrows(),
            found: log_phi2.nrows(),
        });
    }
    let p1 = Posteriors::from_log_phi(log_phi1, coupling.pi1())?;
    let p2 = Posteriors::from_log_phi(log_phi2, coupling.pi2())?;
    let marginal: f64 = p1.log_marginal().iter().chain(p2.log_marginal()).sum();
    Ok(marginal + log_ratio(&p1, &p2, coupling.c())?)
}
