//! EM for Gaussian mixtures with a shared covariance matrix.
//!
//! All density work happens in log scale. Rows are put into a canonical
//! (lexicographic) order before fitting, so a fit is an exact function of the
//! set of observations: permuting the input rows permutes the per-row outputs
//! and changes nothing else.

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::ops::RangeInclusive;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kmeans::{lloyd, sq_dist};
use super::{CovarianceParams, CovarianceStructure, DataView, MixtureFit, RowMajor};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmOptions {
    pub max_iter: usize,
    /// Stop once the per-observation log-likelihood change drops below this.
    pub tol: f64,
    pub n_restarts: usize,
    pub seed: u64,
    /// Variance floor, relative to the mean per-feature sample variance.
    pub variance_floor: f64,
    /// Fix the spherical variance instead of estimating it. Only meaningful
    /// with [`CovarianceStructure::SphericalShared`].
    pub pinned_variance: Option<f64>,
    /// Lloyd iterations used to build each starting partition.
    pub init_kmeans_iter: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-8,
            n_restarts: 10,
            seed: 0,
            variance_floor: 1e-8,
            pinned_variance: None,
            init_kmeans_iter: 50,
        }
    }
}

enum CovState {
    Spherical(f64),
    Diagonal(Vec<f64>),
    Dense {
        matrix: DMatrix<f64>,
        chol_l: DMatrix<f64>,
        log_det: f64,
    },
}

struct Params {
    /// `K * p`, row-major.
    means: Vec<f64>,
    cov: CovState,
    log_pi: Vec<f64>,
}

struct Problem<'a> {
    rows: &'a RowMajor,
    k: usize,
    structure: CovarianceStructure,
    floor: f64,
    pinned: Option<f64>,
}

struct Run {
    params: Params,
    log_phi: Vec<f64>,
    resp: Vec<f64>,
    loglik: f64,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
}

impl Problem<'_> {
    fn n(&self) -> usize {
        self.rows.n()
    }

    fn p(&self) -> usize {
        self.rows.p()
    }

    fn mean<'p>(&self, params: &'p Params, c: usize) -> &'p [f64] {
        let p = self.p();
        &params.means[c * p..(c + 1) * p]
    }

    /// `n * K` row-major componentwise log densities.
    fn log_densities(&self, params: &Params) -> Vec<f64> {
        let (n, p, k) = (self.n(), self.p(), self.k);
        let mut out = vec![0.0; n * k];
        match &params.cov {
            CovState::Spherical(var) => {
                let c0 = -0.5 * p as f64 * (2.0 * PI * var).ln();
                for i in 0..n {
                    let x = self.rows.row(i);
                    for c in 0..k {
                        out[i * k + c] = c0 - 0.5 * sq_dist(x, self.mean(params, c)) / var;
                    }
                }
            }
            CovState::Diagonal(vars) => {
                let c0 = -0.5 * vars.iter().map(|v| (2.0 * PI * v).ln()).sum::<f64>();
                let inv: Vec<f64> = vars.iter().map(|v| 1.0 / v).collect();
                for i in 0..n {
                    let x = self.rows.row(i);
                    for c in 0..k {
                        let m = self.mean(params, c);
                        let q: f64 = (0..p).map(|j| (x[j] - m[j]).powi(2) * inv[j]).sum();
                        out[i * k + c] = c0 - 0.5 * q;
                    }
                }
            }
            CovState::Dense { chol_l, log_det, .. } => {
                let c0 = -0.5 * (p as f64 * (2.0 * PI).ln() + log_det);
                // Row-major n x p storage is column-major p x n.
                let xt = DMatrix::from_column_slice(p, n, &self.rows_buf());
                let mt = DMatrix::from_column_slice(p, k, &params.means);
                let y = chol_l.solve_lower_triangular(&xt).expect("factor is nonsingular");
                let w = chol_l.solve_lower_triangular(&mt).expect("factor is nonsingular");
                for i in 0..n {
                    let yi = y.column(i);
                    for c in 0..k {
                        let q = (yi - w.column(c)).norm_squared();
                        out[i * k + c] = c0 - 0.5 * q;
                    }
                }
            }
        }
        out
    }

    fn rows_buf(&self) -> Vec<f64> {
        (0..self.n()).flat_map(|i| self.rows.row(i).iter().copied()).collect()
    }

    /// Returns responsibilities, per-row log mixture densities and the total.
    fn e_step(&self, log_phi: &[f64], log_pi: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
        let (n, k) = (self.n(), self.k);
        let mut resp = vec![0.0; n * k];
        let mut lse = vec![0.0; n];
        let mut w = vec![0.0; k];
        for i in 0..n {
            for c in 0..k {
                w[c] = log_phi[i * k + c] + log_pi[c];
            }
            let m = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for c in 0..k {
                let e = (w[c] - m).exp();
                resp[i * k + c] = e;
                s += e;
            }
            for c in 0..k {
                resp[i * k + c] /= s;
            }
            lse[i] = m + s.ln();
        }
        let total = lse.iter().sum();
        (resp, lse, total)
    }

    /// M-step; `Err(c)` names a component whose proportion fell below the
    /// `1 / (10 n)` floor.
    fn m_step(&self, resp: &[f64]) -> std::result::Result<Params, (usize, f64)> {
        let (n, p, k) = (self.n(), self.p(), self.k);
        let mut nk = vec![0.0; k];
        for i in 0..n {
            for c in 0..k {
                nk[c] += resp[i * k + c];
            }
        }
        let min_pi = 1.0 / (10.0 * n as f64);
        for c in 0..k {
            let pi = nk[c] / n as f64;
            if pi < min_pi {
                return Err((c, pi));
            }
        }
        let mut means = vec![0.0; k * p];
        for i in 0..n {
            let x = self.rows.row(i);
            for c in 0..k {
                let r = resp[i * k + c];
                if r != 0.0 {
                    for j in 0..p {
                        means[c * p + j] += r * x[j];
                    }
                }
            }
        }
        for c in 0..k {
            for j in 0..p {
                means[c * p + j] /= nk[c];
            }
        }
        let log_pi = nk.iter().map(|v| (v / n as f64).ln()).collect();
        let mut params = Params {
            means,
            cov: CovState::Spherical(1.0),
            log_pi,
        };
        params.cov = self.covariance_update(&params, resp);
        Ok(params)
    }

    fn covariance_update(&self, params: &Params, resp: &[f64]) -> CovState {
        let (n, p, k) = (self.n(), self.p(), self.k);
        if let Some(v) = self.pinned {
            return CovState::Spherical(v);
        }
        match self.structure {
            CovarianceStructure::SphericalShared => {
                let mut ss = 0.0;
                for i in 0..n {
                    let x = self.rows.row(i);
                    for c in 0..k {
                        let r = resp[i * k + c];
                        if r != 0.0 {
                            ss += r * sq_dist(x, self.mean(params, c));
                        }
                    }
                }
                CovState::Spherical((ss / (n * p) as f64).max(self.floor))
            }
            CovarianceStructure::DiagonalShared => {
                let mut ss = vec![0.0; p];
                for i in 0..n {
                    let x = self.rows.row(i);
                    for c in 0..k {
                        let r = resp[i * k + c];
                        if r != 0.0 {
                            let m = self.mean(params, c);
                            for j in 0..p {
                                ss[j] += r * (x[j] - m[j]).powi(2);
                            }
                        }
                    }
                }
                CovState::Diagonal(ss.iter().map(|s| (s / n as f64).max(self.floor)).collect())
            }
            CovarianceStructure::DenseShared => {
                // Columns are sqrt(r_ic) (x_i - mu_c); S = R R^T / n.
                let mut r = DMatrix::zeros(p, n * k);
                for i in 0..n {
                    let x = self.rows.row(i);
                    for c in 0..k {
                        let w = resp[i * k + c].sqrt();
                        if w != 0.0 {
                            let m = self.mean(params, c);
                            for j in 0..p {
                                r[(j, i * k + c)] = w * (x[j] - m[j]);
                            }
                        }
                    }
                }
                let s = (&r * r.transpose()) / n as f64;
                self.dense_state(s)
            }
        }
    }

    fn dense_state(&self, s: DMatrix<f64>) -> CovState {
        let s = (&s + s.transpose()) * 0.5;
        let eig = SymmetricEigen::new(s.clone());
        let matrix = if eig.eigenvalues.iter().any(|&l| l < self.floor) {
            let lam = eig.eigenvalues.map(|l| l.max(self.floor));
            let m = &eig.eigenvectors * DMatrix::from_diagonal(&lam) * eig.eigenvectors.transpose();
            (&m + m.transpose()) * 0.5
        } else {
            s
        };
        let chol = match matrix.clone().cholesky() {
            Some(c) => c,
            None => {
                let p = matrix.nrows();
                (&matrix + DMatrix::identity(p, p) * self.floor)
                    .cholesky()
                    .expect("floored covariance is positive definite")
            }
        };
        let chol_l = chol.l();
        let log_det = 2.0 * chol_l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        CovState::Dense {
            matrix,
            chol_l,
            log_det,
        }
    }

    fn run<R: Rng>(&self, max_iter: usize, tol: f64, init_iter: usize, rng: &mut R) -> Result<Run> {
        let (n, k) = (self.n(), self.k);
        let labels = if k == 1 {
            vec![0; n]
        } else {
            lloyd(self.rows, k, rng, init_iter).labels.labels().to_vec()
        };
        let mut resp = vec![0.0; n * k];
        for (i, &l) in labels.iter().enumerate() {
            resp[i * k + l] = 1.0;
        }
        let mut params = self
            .m_step(&resp)
            .map_err(|(component, proportion)| Error::DegenerateCluster { component, proportion })?;

        let mut reseeded = false;
        let mut trace: Vec<f64> = Vec::new();
        let mut iterations = 0;
        loop {
            let log_phi = self.log_densities(&params);
            let (resp, lse, loglik) = self.e_step(&log_phi, &params.log_pi);
            let converged = trace
                .last()
                .is_some_and(|prev| (loglik - prev).abs() <= tol * n as f64);
            trace.push(loglik);
            if converged || iterations >= max_iter {
                return Ok(Run {
                    params,
                    log_phi,
                    resp,
                    loglik,
                    trace,
                    iterations,
                    converged,
                });
            }
            iterations += 1;
            match self.m_step(&resp) {
                Ok(next) => params = next,
                Err((component, proportion)) => {
                    if reseeded {
                        return Err(Error::DegenerateCluster { component, proportion });
                    }
                    reseeded = true;
                    // Move the collapsed component onto the worst-explained point.
                    let worst = (0..n)
                        .min_by(|&a, &b| lse[a].total_cmp(&lse[b]))
                        .expect("n >= 2");
                    let p = self.p();
                    params.means[component * p..(component + 1) * p]
                        .copy_from_slice(self.rows.row(worst));
                    params.log_pi = vec![-(k as f64).ln(); k];
                    trace.clear();
                }
            }
        }
    }
}

fn canonical_order(data: &DMatrix<f64>) -> Vec<usize> {
    let (n, p) = data.shape();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        for j in 0..p {
            match data[(a, j)].total_cmp(&data[(b, j)]) {
                Ordering::Equal => continue,
                other => return other,
            }
        }
        Ordering::Equal
    });
    order
}

/// Fits a `k`-component Gaussian mixture with the given shared covariance
/// structure, keeping the best of `opts.n_restarts` EM runs.
///
/// Each restart starts from one M-step on a k-means++/Lloyd partition.
pub fn fit_mixture(
    view: &DataView,
    k: usize,
    structure: CovarianceStructure,
    opts: &EmOptions,
) -> Result<MixtureFit> {
    let (n, p) = (view.n(), view.p());
    if k == 0 || k > n {
        return Err(Error::InvalidParameter {
            name: "k",
            message: format!("must be in 1..={n}, got {k}"),
        });
    }
    if let Some(v) = opts.pinned_variance {
        if !(v > 0.0 && v.is_finite()) || structure != CovarianceStructure::SphericalShared {
            return Err(Error::InvalidParameter {
                name: "pinned_variance",
                message: "must be positive and used with the EII structure".into(),
            });
        }
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter {
            name: "tol",
            message: "must be positive".into(),
        });
    }

    let order = canonical_order(view.data());
    let rows = RowMajor::from_rows_in_order(view.data(), &order);
    let vars = view.column_variances();
    let mean_var = vars.iter().sum::<f64>() / p as f64;
    let floor = opts.variance_floor * if mean_var > 0.0 { mean_var } else { 1.0 };
    let problem = Problem {
        rows: &rows,
        k,
        structure,
        floor,
        pinned: opts.pinned_variance,
    };

    let runs: Vec<Result<Run>> = (0..opts.n_restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(opts.seed, r as u64);
            problem.run(opts.max_iter, opts.tol, opts.init_kmeans_iter, &mut rng)
        })
        .collect();

    let mut best: Option<Run> = None;
    let mut first_err = None;
    for run in runs {
        match run {
            Ok(r) => {
                if best.as_ref().is_none_or(|b| r.loglik > b.loglik) {
                    best = Some(r);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let Some(run) = best else {
        return Err(first_err.unwrap_or(Error::AllFitsFailed));
    };

    // Components are reported in lexicographic order of their means, so
    // restarts that find the same optimum under relabelled components agree.
    let comp = {
        let m = &run.params.means;
        let mut comp: Vec<usize> = (0..k).collect();
        comp.sort_by(|&a, &b| {
            (0..p)
                .map(|j| m[a * p + j].total_cmp(&m[b * p + j]))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        });
        comp
    };
    let mut log_phi = DMatrix::zeros(n, k);
    let mut responsibilities = DMatrix::zeros(n, k);
    for (j, &i) in order.iter().enumerate() {
        for (c, &src) in comp.iter().enumerate() {
            log_phi[(i, c)] = run.log_phi[j * k + src];
            responsibilities[(i, c)] = run.resp[j * k + src];
        }
    }
    let means = DMatrix::from_fn(k, p, |c, j| run.params.means[comp[c] * p + j]);
    let covariance = match run.params.cov {
        CovState::Spherical(variance) => CovarianceParams::Spherical { variance },
        CovState::Diagonal(v) => CovarianceParams::Diagonal {
            variances: DVector::from_vec(v),
        },
        CovState::Dense { matrix, .. } => CovarianceParams::Dense { matrix },
    };
    let pi = DVector::from_iterator(k, comp.iter().map(|&c| run.params.log_pi[c].exp()));
    let cov_params = if opts.pinned_variance.is_some() {
        0
    } else {
        structure.n_params(p)
    };
    let n_params = k * p + (k - 1) + cov_params;
    let loglik = run.loglik;
    Ok(MixtureFit {
        k,
        structure,
        means,
        covariance,
        pi,
        log_phi,
        responsibilities,
        loglik,
        n_params,
        bic: -2.0 * loglik + n_params as f64 * (n as f64).ln(),
        aic: -2.0 * loglik + 2.0 * n_params as f64,
        iterations: run.iterations,
        converged: run.converged,
        trace: run.trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Bic,
    Aic,
}

impl Criterion {
    pub fn score(self, fit: &MixtureFit) -> f64 {
        match self {
            Self::Bic => fit.bic,
            Self::Aic => fit.aic,
        }
    }
}

/// Outcome of choosing the number of components.
#[derive(Debug, Clone)]
pub struct KSelection {
    pub k: usize,
    pub fit: MixtureFit,
    /// Criterion value for every candidate; `None` where the fit failed.
    pub scores: Vec<(usize, Option<f64>)>,
}

/// Fits every `K` in `k_range` (restricted to `K >= 2` when `min_k_two`) and
/// returns the one minimizing the criterion; ties go to the smaller `K`.
pub fn select_k(
    view: &DataView,
    k_range: RangeInclusive<usize>,
    structure: CovarianceStructure,
    criterion: Criterion,
    min_k_two: bool,
    opts: &EmOptions,
) -> Result<KSelection> {
    let lo = (*k_range.start()).max(if min_k_two { 2 } else { 1 });
    let hi = *k_range.end();
    if lo > hi {
        return Err(Error::InvalidParameter {
            name: "k_range",
            message: format!("empty range {lo}..={hi}"),
        });
    }
    let fits: Vec<(usize, Result<MixtureFit>)> = (lo..=hi)
        .map(|k| (k, fit_mixture(view, k, structure, opts)))
        .collect();
    let scores = fits
        .iter()
        .map(|(k, f)| (*k, f.as_ref().ok().map(|f| criterion.score(f))))
        .collect();
    let mut best: Option<(usize, MixtureFit)> = None;
    for (k, fit) in fits {
        if let Ok(fit) = fit {
            if best
                .as_ref()
                .is_none_or(|(_, b)| criterion.score(&fit) < criterion.score(b))
            {
                best = Some((k, fit));
            }
        }
    }
    let (k, fit) = best.ok_or(Error::AllFitsFailed)?;
    Ok(KSelection { k, fit, scores })
}
