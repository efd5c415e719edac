//! Sinkhorn-Knopp balancing of a nonnegative matrix to prescribed margins.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Row and column multipliers that balance a matrix.
///
/// The pair is only determined up to `(c · row_scale, col_scale / c)`;
/// compare balanced matrices, not scalings.
#[derive(Debug, Clone, PartialEq)]
pub struct Balancing {
    pub row_scale: DVector<f64>,
    pub col_scale: DVector<f64>,
    pub iterations: usize,
    /// Largest relative margin error at exit.
    pub residual: f64,
}

impl Balancing {
    /// `diag(row_scale) · m · diag(col_scale)`.
    pub fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(m.nrows(), m.ncols(), |k, l| {
            self.row_scale[k] * m[(k, l)] * self.col_scale[l]
        })
    }
}

/// Finds `a`, `b` such that `diag(a) M diag(b)` has row sums `pi1` and column
/// sums `pi2`, each to relative accuracy `tol`.
///
/// Columns are rescaled first, then rows, as in the classical iteration.
pub fn sinkhorn_balance(
    m: &DMatrix<f64>,
    pi1: &DVector<f64>,
    pi2: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<Balancing> {
    let (k1, k2) = m.shape();
    if pi1.len() != k1 || pi2.len() != k2 {
        return Err(Error::DimensionMismatch {
            expected: k1 * k2,
            found: pi1.len() * pi2.len(),
        });
    }
    let buf: Vec<f64> = (0..k1).flat_map(|k| m.row(k).iter().copied().collect::<Vec<_>>()).collect();
    let mut a = vec![1.0; k1];
    let mut b = vec![1.0; k2];
    let (iterations, residual) = balance(&buf, k1, k2, pi1.as_slice(), pi2.as_slice(), tol, max_iter, &mut a, &mut b)?;
    Ok(Balancing {
        row_scale: DVector::from_vec(a),
        col_scale: DVector::from_vec(b),
        iterations,
        residual,
    })
}

/// Row-major core of [`sinkhorn_balance`]. `a` holds the starting row
/// scaling and both scalings are overwritten.
#[allow(clippy::too_many_arguments)]
pub(crate) fn balance(
    m: &[f64],
    k1: usize,
    k2: usize,
    pi1: &[f64],
    pi2: &[f64],
    tol: f64,
    max_iter: usize,
    a: &mut [f64],
    b: &mut [f64],
) -> Result<(usize, f64)> {
    validate(m, k1, k2, pi1, pi2, tol, max_iter)?;
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        for l in 0..k2 {
            let s: f64 = (0..k1).map(|k| a[k] * m[k * k2 + l]).sum();
            b[l] = pi2[l] / s;
        }
        for k in 0..k1 {
            let s: f64 = (0..k2).map(|l| m[k * k2 + l] * b[l]).sum();
            a[k] = pi1[k] / s;
        }
        residual = margin_residual(m, k1, k2, pi1, pi2, a, b);
        if residual < tol {
            return Ok((it, residual));
        }
        if !residual.is_finite() {
            break;
        }
    }
    Err(Error::NotConverged { max_iter, residual })
}

fn margin_residual(m: &[f64], k1: usize, k2: usize, pi1: &[f64], pi2: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    let mut col = vec![0.0; k2];
    for k in 0..k1 {
        let mut row = 0.0;
        for l in 0..k2 {
            let x = a[k] * m[k * k2 + l] * b[l];
            row += x;
            col[l] += x;
        }
        worst = worst.max((row - pi1[k]).abs() / pi1[k]);
    }
    for l in 0..k2 {
        worst = worst.max((col[l] - pi2[l]).abs() / pi2[l]);
    }
    worst
}

fn validate(m: &[f64], k1: usize, k2: usize, pi1: &[f64], pi2: &[f64], tol: f64, max_iter: usize) -> Result<()> {
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::InvalidParameter {
            name: "sinkhorn",
            message: "tol and max_iter must be positive".into(),
        });
    }
    for (name, pi) in [("pi1", pi1), ("pi2", pi2)] {
        if pi.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::InvalidParameter {
                name,
                message: "margins must be strictly positive and finite".into(),
            });
        }
    }
    let (s1, s2): (f64, f64) = (pi1.iter().sum(), pi2.iter().sum());
    let deviation = (s1 - s2).abs();
    if deviation > 1e-12 * s1.max(s2) * (k1 + k2) as f64 {
        return Err(Error::MarginMismatch { deviation });
    }
    if m.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "M",
            message: "entries must be finite and nonnegative".into(),
        });
    }
    if m.iter().any(|&x| x == 0.0) && !support_admits(m, k1, k2, pi1, pi2) {
        return Err(Error::InfeasibleSupport);
    }
    Ok(())
}

/// Whether some matrix supported on the nonzeros of `m` has the given
/// margins: a max-flow from rows to columns through the support must carry
/// the full mass.
fn support_admits(m: &[f64], k1: usize, k2: usize, pi1: &[f64], pi2: &[f64]) -> bool {
    let nodes = k1 + k2 + 2;
    let (src, sink) = (k1 + k2, k1 + k2 + 1);
    let mut cap = vec![vec![0.0f64; nodes]; nodes];
    let total: f64 = pi1.iter().sum();
    for k in 0..k1 {
        cap[src][k] = pi1[k];
        for l in 0..k2 {
            if m[k * k2 + l] > 0.0 {
                cap[k][k1 + l] = f64::INFINITY;
            }
        }
    }
    for l in 0..k2 {
        cap[k1 + l][sink] = pi2[l];
    }
    let eps = 1e-15 * total;
    let mut flow = 0.0;
    loop {
        let mut prev = vec![usize::MAX; nodes];
        prev[src] = src;
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            for v in 0..nodes {
                if prev[v] == usize::MAX && cap[u][v] > eps {
                    prev[v] = u;
                    queue.push_back(v);
                }
            }
        }
        if prev[sink] == usize::MAX {
            break;
        }
        let mut push = f64::INFINITY;
        let mut v = sink;
        while v != src {
            push = push.min(cap[prev[v]][v]);
            v = prev[v];
        }
        let mut v = sink;
        while v != src {
            let u = prev[v];
            cap[u][v] -= push;
            cap[v][u] += push;
            v = u;
        }
        flow += push;
    }
    flow >= total * (1.0 - 1e-9)
}
