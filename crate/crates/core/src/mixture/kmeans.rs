//! Lloyd's k-means with k-means++ seeding.
//!
//! Used both as a baseline clustering (the small-variance limit of the
//! spherical mixture) and to initialize EM.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use super::{DataView, HardLabels, RowMajor};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansOptions {
    pub n_restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            n_restarts: 10,
            max_iter: 300,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: HardLabels,
    /// `K x p` centroid matrix.
    pub centroids: DMatrix<f64>,
    pub inertia: f64,
    /// Inertia after every Lloyd iteration of the winning restart.
    pub trace: Vec<f64>,
}

/// Best-inertia k-means partition over `opts.n_restarts` seeded restarts.
pub fn kmeans(view: &DataView, k: usize, opts: &KMeansOptions) -> Result<KMeansResult> {
    if k == 0 || k > view.n() {
        return Err(Error::InvalidParameter {
            name: "k",
            message: format!("must be in 1..={}, got {k}", view.n()),
        });
    }
    let rows = RowMajor::from_matrix(view.data());
    let restarts = opts.n_restarts.max(1);
    let runs: Vec<KMeansResult> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(opts.seed, r as u64);
            lloyd(&rows, k, &mut rng, opts.max_iter)
        })
        .collect();
    Ok(runs
        .into_iter()
        .reduce(|best, run| if run.inertia < best.inertia { run } else { best })
        .expect("at least one restart"))
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: first centre uniform, then proportional to squared
/// distance from the nearest chosen centre.
pub(crate) fn seed_plus_plus<R: Rng>(rows: &RowMajor, k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = rows.n();
    let mut centres = Vec::with_capacity(k);
    let first = rng.random_range(0..n);
    centres.push(rows.row(first).to_vec());
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(rows.row(i), &centres[0])).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = rows.row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(rows.row(i), &c));
        }
        centres.push(c);
    }
    centres
}

pub(crate) fn lloyd<R: Rng>(rows: &RowMajor, k: usize, rng: &mut R, max_iter: usize) -> KMeansResult {
    let (n, p) = (rows.n(), rows.p());
    let mut centres = seed_plus_plus(rows, k, rng);
    let mut labels = vec![usize::MAX; n];
    let mut dist = vec![0.0; n];
    let mut trace = Vec::new();

    for it in 0..max_iter.max(1) {
        let mut changed = false;
        for i in 0..n {
            let x = rows.row(i);
            let (best, d) = centres
                .iter()
                .enumerate()
                .map(|(c, m)| (c, sq_dist(x, m)))
                .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
            if labels[i] != best {
                changed = true;
                labels[i] = best;
            }
            dist[i] = d;
        }

        // Empty clusters take over the worst-served point of a cluster that
        // can spare one.
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[labels[i]] > 1)
                .fold(None, |acc: Option<usize>, i| match acc {
                    Some(j) if dist[j] >= dist[i] => Some(j),
                    _ => Some(i),
                });
            if let Some(i) = far {
                counts[labels[i]] -= 1;
                counts[c] += 1;
                labels[i] = c;
                dist[i] = 0.0;
                centres[c] = rows.row(i).to_vec();
                changed = true;
            }
        }

        let mut sums = vec![vec![0.0; p]; k];
        for i in 0..n {
            for (s, x) in sums[labels[i]].iter_mut().zip(rows.row(i)) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centres[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let inertia: f64 = (0..n).map(|i| sq_dist(rows.row(i), &centres[labels[i]])).sum();
        trace.push(inertia);
        if !changed && it > 0 {
            break;
        }
    }

    let centroids = DMatrix::from_fn(k, p, |c, j| centres[c][j]);
    KMeansResult {
        labels: HardLabels::new(labels, k),
        centroids,
        inertia: *trace.last().expect("at least one iteration"),
        trace,
    }
}
