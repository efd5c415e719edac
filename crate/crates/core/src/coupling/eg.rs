//! Maximizing the pseudo log-likelihood over feasible couplings by
//! exponentiated gradient steps, each projected back onto the margins with
//! Sinkhorn-Knopp.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::sinkhorn::balance;
use super::{Coupling, Posteriors};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EgOptions {
    /// Step size; `None` uses `1 / n`.
    pub step_size: Option<f64>,
    pub max_outer_iter: usize,
    /// Stop once no entry of `C` moves by more than this and none grows by a
    /// relative factor above its square root.
    pub outer_tol: f64,
    pub sinkhorn_max_iter: usize,
    pub sinkhorn_tol: f64,
    /// Step halvings allowed when an update fails to increase the objective.
    pub max_halvings: usize,
}

impl Default for EgOptions {
    fn default() -> Self {
        Self {
            step_size: None,
            max_outer_iter: 5000,
            outer_tol: 1e-7,
            sinkhorn_max_iter: 10_000,
            sinkhorn_tol: 1e-10,
            max_halvings: 8,
        }
    }
}

impl EgOptions {
    fn validate(&self) -> Result<()> {
        let bad = |name, message: &str| {
            Err(Error::InvalidParameter {
                name,
                message: message.into(),
            })
        };
        if let Some(s) = self.step_size {
            if !(s > 0.0 && s.is_finite()) {
                return bad("step_size", "must be positive");
            }
        }
        if self.max_outer_iter == 0 || self.sinkhorn_max_iter == 0 {
            return bad("max_iter", "iteration limits must be positive");
        }
        if !(self.outer_tol > 0.0) || !(self.sinkhorn_tol > 0.0) {
            return bad("tol", "tolerances must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingEstimate {
    pub coupling: Coupling,
    /// `Σᵢ log(γ¹ᵢᵀ Ĉ γ²ᵢ)`, the gain in pseudo log-likelihood over
    /// independence.
    pub log_ratio: f64,
    pub iterations: usize,
    pub sinkhorn_iterations: usize,
    pub halvings: usize,
    /// Step size in force when the iteration stopped.
    pub step_size: f64,
    /// Observations left out of the gradient because their denominator
    /// vanished.
    pub excluded: usize,
    pub converged: bool,
}

/// Estimates `C` from the two views' log densities and mixing proportions.
pub fn estimate_c(
    log_phi1: &DMatrix<f64>,
    log_phi2: &DMatrix<f64>,
    pi1: &DVector<f64>,
    pi2: &DVector<f64>,
    opts: &EgOptions,
) -> Result<CouplingEstimate> {
    if log_phi1.nrows() != log_phi2.nrows() {
        return Err(Error::DimensionMismatch {
            expected: log_phi1.nrows(),
            found: log_phi2.nrows(),
        });
    }
    let p1 = Posteriors::from_log_phi(log_phi1, pi1)?;
    let p2 = Posteriors::from_log_phi(log_phi2, pi2)?;
    estimate_c_posteriors(&p1, &p2, pi1, pi2, opts)
}

/// Same as [`estimate_c`], starting from posterior memberships.
///
/// Starts at `C = 11ᵀ` and returns the best iterate seen, so the result never
/// scores below independence.
pub fn estimate_c_posteriors(
    p1: &Posteriors,
    p2: &Posteriors,
    pi1: &DVector<f64>,
    pi2: &DVector<f64>,
    opts: &EgOptions,
) -> Result<CouplingEstimate> {
    opts.validate()?;
    let n = p1.n();
    if p2.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: p2.n(),
        });
    }
    if p1.k() != pi1.len() || p2.k() != pi2.len() {
        return Err(Error::DimensionMismatch {
            expected: p1.k() * p2.k(),
            found: pi1.len() * pi2.len(),
        });
    }
    let start = Coupling::independent(pi1, pi2)?;
    let (k1, k2) = (pi1.len(), pi2.len());
    let mut ws = Workspace::new(p1, p2, pi1.as_slice(), pi2.as_slice());
    let ones = vec![1.0; k1 * k2];
    let (start_obj, start_excluded) = ws.objective(&ones);

    let mut step = opts.step_size.unwrap_or(1.0 / n as f64);
    let mut est = CouplingEstimate {
        coupling: start,
        log_ratio: start_obj,
        iterations: 0,
        sinkhorn_iterations: 0,
        halvings: 0,
        step_size: step,
        excluded: start_excluded,
        converged: true,
    };
    // With a single cluster in either view the feasible set is the point 11ᵀ.
    if k1 == 1 || k2 == 1 {
        return Ok(est);
    }
    est.converged = false;

    // `cur` and `best` hold C row-major.
    let mut cur = ones.clone();
    let mut cur_obj = start_obj;
    let mut best = ones;
    let mut best_obj = start_obj;
    let mut best_excluded = start_excluded;
    let mut m = vec![0.0; k1 * k2];
    let mut next = vec![0.0; k1 * k2];
    // Row scalings carry over between iterations as a warm start.
    let (mut a, mut b) = (vec![1.0; k1], vec![0.0; k2]);
    let mut next_obj = f64::NEG_INFINITY;
    let noise = 10.0 * n as f64 * opts.sinkhorn_tol;

    while est.iterations < opts.max_outer_iter {
        est.iterations += 1;
        ws.gradient(&cur);
        // M = Π ∘ exp(sG - max sG); the shift is absorbed by the balancing.
        let shift = ws.grad.iter().fold(f64::NEG_INFINITY, |acc, &g| acc.max(step * g));
        for k in 0..k1 {
            for l in 0..k2 {
                let idx = k * k2 + l;
                m[idx] = pi1[k] * cur[idx] * pi2[l] * (step * ws.grad[idx] - shift).exp();
            }
        }
        let balanced = balance(
            &m,
            k1,
            k2,
            pi1.as_slice(),
            pi2.as_slice(),
            opts.sinkhorn_tol,
            opts.sinkhorn_max_iter,
            &mut a,
            &mut b,
        );
        let ascended = match balanced {
            Ok((iters, _)) => {
                est.sinkhorn_iterations += iters;
                for k in 0..k1 {
                    for l in 0..k2 {
                        let idx = k * k2 + l;
                        next[idx] = a[k] * m[idx] * b[l] / (pi1[k] * pi2[l]);
                    }
                }
                let (obj, excluded) = ws.objective(&next);
                next_obj = obj;
                let change = next.iter().zip(&cur).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                // An entry pushed to almost zero by a long step moves very
                // little in absolute terms while it recovers; keep going while
                // any entry is still growing by a noticeable factor.
                let growth = next.iter().zip(&cur).map(|(x, y)| (x / y).ln()).fold(0.0, f64::max);
                if obj > best_obj {
                    best.copy_from_slice(&next);
                    best_obj = obj;
                    best_excluded = excluded;
                }
                if change < opts.outer_tol && growth < opts.outer_tol.sqrt() {
                    est.converged = true;
                    break;
                }
                // Balancing error and rounding move the objective a little;
                // that is not a failed step.
                obj >= cur_obj - noise - 1e-12 * cur_obj.abs()
            }
            // Underflow in the multiplicative update, or a balancing problem
            // too ill-conditioned to finish, means the step was too long.
            Err(Error::InfeasibleSupport) => {
                a.iter_mut().for_each(|x| *x = 1.0);
                false
            }
            Err(Error::NotConverged { max_iter, .. }) => {
                est.sinkhorn_iterations += max_iter;
                a.iter_mut().for_each(|x| *x = 1.0);
                false
            }
            Err(e) => return Err(e),
        };
        if ascended {
            std::mem::swap(&mut cur, &mut next);
            cur_obj = next_obj;
        } else {
            if est.halvings == opts.max_halvings {
                if best_obj <= start_obj {
                    return Err(Error::StepTooLarge {
                        halvings: est.halvings,
                    });
                }
                break;
            }
            est.halvings += 1;
            step *= 0.5;
            cur.copy_from_slice(&best);
            cur_obj = best_obj;
        }
    }

    est.step_size = step;
    est.log_ratio = best_obj;
    est.excluded = best_excluded;
    est.coupling = Coupling::from_c(DMatrix::from_row_slice(k1, k2, &best), pi1, pi2)?;
    Ok(est)
}

/// Scratch space for objective and gradient evaluations.
struct Workspace<'a> {
    p1: &'a Posteriors,
    p2: &'a Posteriors,
    pi1: &'a [f64],
    pi2: &'a [f64],
    cg: Vec<f64>,
    grad: Vec<f64>,
}

impl<'a> Workspace<'a> {
    fn new(p1: &'a Posteriors, p2: &'a Posteriors, pi1: &'a [f64], pi2: &'a [f64]) -> Self {
        Self {
            p1,
            p2,
            pi1,
            pi2,
            cg: vec![0.0; p1.k()],
            grad: vec![0.0; p1.k() * p2.k()],
        }
    }

    /// `dᵢ = γ¹ᵢᵀ C γ²ᵢ`.
    fn denominator(&mut self, c: &[f64], i: usize) -> f64 {
        let (k1, k2) = (self.p1.k(), self.p2.k());
        let (g1, g2) = (self.p1.row(i), self.p2.row(i));
        for k in 0..k1 {
            self.cg[k] = (0..k2).map(|l| c[k * k2 + l] * g2[l]).sum();
        }
        g1.iter().zip(&self.cg).map(|(x, y)| x * y).sum()
    }

    /// `Σᵢ log dᵢ` over observations with `dᵢ > 0`, and the number skipped.
    fn objective(&mut self, c: &[f64]) -> (f64, usize) {
        let mut total = 0.0;
        let mut skipped = 0;
        for i in 0..self.p1.n() {
            let d = self.denominator(c, i);
            if d > 0.0 && d.is_finite() {
                total += d.ln();
            } else {
                skipped += 1;
            }
        }
        (total, skipped)
    }

    /// Gradient with respect to `Π`:
    /// `G_kk' = Σᵢ γ¹_ik γ²_ik' / (π¹_k π²_k' dᵢ)`.
    fn gradient(&mut self, c: &[f64]) {
        let (k1, k2) = (self.p1.k(), self.p2.k());
        self.grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..self.p1.n() {
            let d = self.denominator(c, i);
            if !(d > 0.0 && d.is_finite()) {
                continue;
            }
            let (g1, g2) = (self.p1.row(i), self.p2.row(i));
            for k in 0..k1 {
                let w = g1[k] / d;
                if w == 0.0 {
                    continue;
                }
                for l in 0..k2 {
                    self.grad[k * k2 + l] += w * g2[l];
                }
            }
        }
        for k in 0..k1 {
            for l in 0..k2 {
                self.grad[k * k2 + l] /= self.pi1[k] * self.pi2[l];
            }
        }
    }
}
