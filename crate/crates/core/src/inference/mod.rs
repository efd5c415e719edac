//! The pseudo likelihood ratio test of independence between two views'
//! clusterings, its permutation null, and contingency-table baselines.

mod contingency;
mod special;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::{estimate_c_posteriors, Coupling, CouplingEstimate, EgOptions, Posteriors};
use crate::error::{Error, Result};
use crate::mixture::{argmax_rows, fit_mixture, CovarianceStructure, DataView, EmOptions, MixtureFit};
use crate::rng;

pub use contingency::{
    adjusted_rand, ari_permutation, g_statistic, g_test, g_test_permutation, mutual_information, ContingencyTable,
    GTest,
};
pub use special::{chi_square_sf, gamma_q, ln_gamma};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PValueKind {
    Permutation { b: usize },
    ChiSquare { df: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub p_value_kind: PValueKind,
    pub effective_rank: Option<f64>,
    pub diagnostics: BTreeMap<String, f64>,
}

/// `(1/B) Σ_b 1{observed ≤ null_b}`, or `(1 + Σ) / (1 + B)` with `add_one`.
pub fn permutation_p_value(observed: f64, null: &[f64], add_one: bool) -> f64 {
    let hits = null.iter().filter(|&&x| observed <= x).count();
    if add_one {
        (1 + hits) as f64 / (1 + null.len()) as f64
    } else {
        hits as f64 / null.len() as f64
    }
}

/// `(Σ σᵢ) / σ_max` over the singular values of `m`.
pub fn effective_rank(m: &DMatrix<f64>) -> Result<f64> {
    if m.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroMatrix);
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    Ok(sv.sum() / max)
}

/// The statistic `log Λ̃` and the coupling estimate behind it.
///
/// `log Λ̃` is the pseudo log-likelihood at `Ĉ` minus the two marginal
/// log-likelihoods, which reduces to `Σᵢ log(γ¹ᵢᵀ Ĉ γ²ᵢ)`.
pub fn plrt_statistic(fit1: &MixtureFit, fit2: &MixtureFit, opts: &EgOptions) -> Result<(f64, CouplingEstimate)> {
    let (p1, p2) = posteriors(fit1, fit2)?;
    let est = estimate_c_posteriors(&p1, &p2, &fit1.pi, &fit2.pi, opts)?;
    Ok((est.log_ratio, est))
}

fn posteriors(fit1: &MixtureFit, fit2: &MixtureFit) -> Result<(Posteriors, Posteriors)> {
    if fit1.n() != fit2.n() {
        return Err(Error::DimensionMismatch {
            expected: fit1.n(),
            found: fit2.n(),
        });
    }
    Ok((
        Posteriors::from_log_phi(&fit1.log_phi, &fit1.pi)?,
        Posteriors::from_log_phi(&fit2.log_phi, &fit2.pi)?,
    ))
}

/// Settings for the permutation null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PermutationOptions {
    pub b: usize,
    pub seed: u64,
    /// Use `(1 + Σ) / (1 + B)` instead of `Σ / B`.
    pub add_one: bool,
    pub eg: EgOptions,
}

impl Default for PermutationOptions {
    fn default() -> Self {
        Self {
            b: 200,
            seed: 0,
            add_one: false,
            eg: EgOptions::default(),
        }
    }
}

/// Observed statistic, its null sample and the fitted coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct PlrtOutcome {
    pub result: TestResult,
    pub estimate: CouplingEstimate,
    pub null_statistics: Vec<f64>,
}

/// Permutation test on already fitted mixtures.
///
/// The fits are computed once; each replicate only shuffles the rows of the
/// second view's posteriors and re-estimates `C`. Replicate `b` draws its
/// permutation from its own stream of `opts.seed`, so the result does not
/// depend on scheduling.
pub fn plrt_permutation(fit1: &MixtureFit, fit2: &MixtureFit, opts: &PermutationOptions) -> Result<PlrtOutcome> {
    if opts.b == 0 {
        return Err(Error::InvalidParameter {
            name: "B",
            message: "need at least one permutation".into(),
        });
    }
    let (p1, p2) = posteriors(fit1, fit2)?;
    let observed = estimate_c_posteriors(&p1, &p2, &fit1.pi, &fit2.pi, &opts.eg)?;
    let n = fit1.n();
    let null: Vec<Result<CouplingEstimate>> = (0..opts.b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = rng::stream(opts.seed, rep as u64);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            estimate_c_posteriors(&p1, &p2.permuted(&perm), &fit1.pi, &fit2.pi, &opts.eg)
        })
        .collect();
    let null: Vec<CouplingEstimate> = null.into_iter().collect::<Result<_>>()?;
    let null_statistics: Vec<f64> = null.iter().map(|e| e.log_ratio).collect();

    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("eg_iterations".into(), observed.iterations as f64);
    diagnostics.insert("eg_converged".into(), f64::from(u8::from(observed.converged)));
    diagnostics.insert("eg_halvings".into(), observed.halvings as f64);
    diagnostics.insert("sinkhorn_iterations".into(), observed.sinkhorn_iterations as f64);
    diagnostics.insert("excluded_observations".into(), observed.excluded as f64);
    diagnostics.insert(
        "null_not_converged".into(),
        null.iter().filter(|e| !e.converged).count() as f64,
    );
    diagnostics.insert(
        "null_mean_eg_iterations".into(),
        null.iter().map(|e| e.iterations as f64).sum::<f64>() / null.len() as f64,
    );

    let result = TestResult {
        statistic: observed.log_ratio,
        p_value: permutation_p_value(observed.log_ratio, &null_statistics, opts.add_one),
        p_value_kind: PValueKind::Permutation { b: opts.b },
        effective_rank: Some(effective_rank(observed.coupling.joint())?),
        diagnostics,
    };
    Ok(PlrtOutcome {
        result,
        estimate: observed,
        null_statistics,
    })
}

/// Fits each view once and runs the permutation test.
#[allow(clippy::too_many_arguments)]
pub fn permutation_test(
    view1: &DataView,
    view2: &DataView,
    k1: usize,
    k2: usize,
    structure: CovarianceStructure,
    em: &EmOptions,
    opts: &PermutationOptions,
) -> Result<TestResult> {
    if view1.n() != view2.n() {
        return Err(Error::DimensionMismatch {
            expected: view1.n(),
            found: view2.n(),
        });
    }
    let fit1 = fit_mixture(view1, k1, structure, em)?;
    let fit2 = fit_mixture(view2, k2, structure, em)?;
    Ok(plrt_permutation(&fit1, &fit2, opts)?.result)
}

/// Responsibility form of the statistic at a joint matrix `Π`:
/// `Σᵢ log[ r¹ᵢᵀ Π r²ᵢ / ((r¹ᵢᵀ Π 1)(1ᵀ Π r²ᵢ)) ]`.
///
/// The rows of `r1` and `r2` only need to be nonnegative; any per-row scaling
/// cancels.
pub fn soft_statistic(joint: &DMatrix<f64>, r1: &DMatrix<f64>, r2: &DMatrix<f64>) -> Result<f64> {
    if r1.nrows() != r2.nrows() {
        return Err(Error::DimensionMismatch {
            expected: r1.nrows(),
            found: r2.nrows(),
        });
    }
    if joint.shape() != (r1.ncols(), r2.ncols()) {
        return Err(Error::DimensionMismatch {
            expected: r1.ncols() * r2.ncols(),
            found: joint.len(),
        });
    }
    let rows: DVector<f64> = joint.column_sum();
    let cols: DVector<f64> = joint.row_sum().transpose();
    let mut total = 0.0;
    for i in 0..r1.nrows() {
        let a = r1.row(i).transpose();
        let b = r2.row(i).transpose();
        let num = a.dot(&(joint * &b));
        let den = a.dot(&rows) * cols.dot(&b);
        let term = (num / den).ln();
        if !term.is_finite() {
            return Err(Error::NonFinite { observation: i });
        }
        total += term;
    }
    Ok(total)
}

/// Outcome of comparing the hard-assignment statistic with the G-test.
#[derive(Debug, Clone, PartialEq)]
pub struct Prop3Report {
    pub statistic: f64,
    pub g2: f64,
    pub mutual_information: f64,
    pub n: usize,
    /// `|statistic - g2 / 2|`.
    pub discrepancy: f64,
}

impl Prop3Report {
    pub fn holds(&self, tol: f64) -> bool {
        self.discrepancy < tol
    }
}

/// Hardens both responsibility matrices to one-hot rows, sets `Π = N / n`
/// from the resulting table and evaluates [`soft_statistic`], which must
/// equal `G² / 2` (and `n` times the mutual information).
pub fn check_prop3(r1: &DMatrix<f64>, r2: &DMatrix<f64>) -> Result<Prop3Report> {
    let l1 = argmax_rows(r1);
    let l2 = argmax_rows(r2);
    let table = ContingencyTable::from_labels(&l1, &l2)?;
    let n = table.n() as usize;
    let joint = DMatrix::from_fn(table.k1(), table.k2(), |k, l| table.count(k, l) as f64 / n as f64);
    let one_hot = |l: &crate::mixture::HardLabels| {
        DMatrix::from_fn(l.len(), l.k(), |i, k| if l.labels()[i] == k { 1.0 } else { 0.0 })
    };
    let statistic = soft_statistic(&joint, &one_hot(&l1), &one_hot(&l2))?;
    let g2 = g_statistic(&table);
    Ok(Prop3Report {
        statistic,
        g2,
        mutual_information: mutual_information(&table),
        n,
        discrepancy: (statistic - g2 / 2.0).abs(),
    })
}

/// Builds the coupling implied by two hard labelings: `Π = N / n` with the
/// empirical label frequencies as margins. Unused clusters are dropped.
pub fn hard_coupling(table: &ContingencyTable) -> Result<Coupling> {
    let rows: Vec<usize> = (0..table.k1()).filter(|&k| table.row_sums()[k] > 0).collect();
    let cols: Vec<usize> = (0..table.k2()).filter(|&l| table.col_sums()[l] > 0).collect();
    let n = table.n() as f64;
    let joint = DMatrix::from_fn(rows.len(), cols.len(), |a, b| table.count(rows[a], cols[b]) as f64 / n);
    let pi1 = DVector::from_iterator(rows.len(), rows.iter().map(|&k| table.row_sums()[k] as f64 / n));
    let pi2 = DVector::from_iterator(cols.len(), cols.iter().map(|&l| table.col_sums()[l] as f64 / n));
    Coupling::from_joint(&joint, &pi1, &pi2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::pseudo_loglik;
    use crate::mixture::HardLabels;
    use proptest::prelude::*;

    #[test]
    fn effective_rank_examples() {
        let pi1 = DVector::from_row_slice(&[0.2, 0.3, 0.5]);
        let pi2 = DVector::from_row_slice(&[0.6, 0.4]);
        assert!((effective_rank(&(&pi1 * pi2.transpose())).unwrap() - 1.0).abs() < 1e-12);
        assert!((effective_rank(&(DMatrix::identity(2, 2) / 2.0)).unwrap() - 2.0).abs() < 1e-12);
        let half = DMatrix::from_row_slice(2, 2, &[0.375, 0.125, 0.125, 0.375]);
        assert!((effective_rank(&half).unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(effective_rank(&DMatrix::zeros(2, 2)), Err(Error::ZeroMatrix));
    }

    #[test]
    fn p_value_conventions() {
        assert_eq!(permutation_p_value(1.0, &[1.0], false), 1.0);
        assert_eq!(permutation_p_value(2.0, &[0.5, 1.0, 2.5, 3.0], false), 0.5);
        assert_eq!(permutation_p_value(9.0, &[0.5, 1.0], false), 0.0);
        assert_eq!(permutation_p_value(9.0, &[0.5, 1.0], true), 1.0 / 3.0);
    }

    fn toy_fit(resp_rows: &[&[f64]], pi: &[f64]) -> MixtureFit {
        // log φ chosen so that the posteriors come out as `resp_rows`.
        let n = resp_rows.len();
        let k = pi.len();
        let log_phi = DMatrix::from_fn(n, k, |i, c| resp_rows[i][c].ln() - pi[c].ln() - 2.0 - i as f64 * 0.1);
        MixtureFit {
            k,
            structure: CovarianceStructure::SphericalShared,
            means: DMatrix::zeros(k, 1),
            covariance: crate::mixture::CovarianceParams::Spherical { variance: 1.0 },
            pi: DVector::from_row_slice(pi),
            loglik: (0..n)
                .map(|i| crate::mixture::log_sum_exp(&(0..k).map(|c| log_phi[(i, c)] + pi[c].ln()).collect::<Vec<_>>()))
                .sum(),
            responsibilities: DMatrix::from_fn(n, k, |i, c| resp_rows[i][c]),
            log_phi,
            n_params: 0,
            bic: 0.0,
            aic: 0.0,
            iterations: 0,
            converged: true,
            trace: vec![],
        }
    }

    #[test]
    fn statistic_is_pseudo_loglik_minus_marginals() {
        let f1 = toy_fit(
            &[&[0.9, 0.1], &[0.8, 0.2], &[0.3, 0.7], &[0.1, 0.9], &[0.6, 0.4], &[0.25, 0.75], &[0.5, 0.5], &[0.7, 0.3]],
            &[0.5, 0.5],
        );
        let f2 = toy_fit(
            &[&[0.7, 0.3], &[0.9, 0.1], &[0.2, 0.8], &[0.4, 0.6], &[0.5, 0.5], &[0.1, 0.9], &[0.35, 0.65], &[0.6, 0.4]],
            &[0.45, 0.55],
        );
        let (stat, est) = plrt_statistic(&f1, &f2, &EgOptions::default()).unwrap();
        let full = pseudo_loglik(&f1.log_phi, &f2.log_phi, &est.coupling).unwrap();
        assert!((stat - (full - f1.loglik - f2.loglik)).abs() < 1e-9);
        // The same value through the ratio form with unweighted responsibilities.
        let r = |f: &MixtureFit| {
            let m = f.log_phi.map(f64::exp);
            DMatrix::from_fn(m.nrows(), m.ncols(), |i, k| m[(i, k)] / m.row(i).sum())
        };
        let soft = soft_statistic(est.coupling.joint(), &r(&f1), &r(&f2)).unwrap();
        assert!((stat - soft).abs() < 1e-10);
        assert!(stat >= -1e-10);
    }

    #[test]
    fn uninformative_view_gives_zero() {
        let f1 = toy_fit(&[&[0.9, 0.1], &[0.2, 0.8], &[0.6, 0.4], &[0.3, 0.7]], &[0.5, 0.5]);
        let f2 = toy_fit(&[&[0.4, 0.6]; 4].map(|r| &r[..]), &[0.4, 0.6]);
        let (stat, _) = plrt_statistic(&f1, &f2, &EgOptions::default()).unwrap();
        assert!(stat.abs() < 1e-8);
    }

    #[test]
    fn identity_permutation_gives_p_one() {
        // With n = 2 a permutation is the identity with probability 1/2;
        // find a seed whose single draw is the identity.
        let f1 = toy_fit(&[&[0.9, 0.1], &[0.2, 0.8]], &[0.55, 0.45]);
        let f2 = toy_fit(&[&[0.7, 0.3], &[0.1, 0.9]], &[0.4, 0.6]);
        let seed = (0..64)
            .find(|&s| {
                let mut perm = vec![0usize, 1];
                perm.shuffle(&mut rng::stream(s, 0));
                perm == [0, 1]
            })
            .unwrap();
        let opts = PermutationOptions { b: 1, seed, ..Default::default() };
        let out = plrt_permutation(&f1, &f2, &opts).unwrap();
        assert_eq!(out.null_statistics[0], out.result.statistic);
        assert_eq!(out.result.p_value, 1.0);
    }

    #[test]
    fn same_permutation_of_both_views_changes_nothing() {
        let rows1: Vec<[f64; 2]> = (0..12).map(|i| { let a = 0.05 + 0.9 * ((i * 7 % 12) as f64 / 11.0); [a, 1.0 - a] }).collect();
        let rows2: Vec<[f64; 3]> = (0..12)
            .map(|i| {
                let a = 0.1 + 0.5 * ((i * 5 % 12) as f64 / 11.0);
                let b = 0.2 * ((i % 4) as f64 / 3.0) + 0.05;
                [a, b, 1.0 - a - b]
            })
            .collect();
        let r1: Vec<&[f64]> = rows1.iter().map(|r| &r[..]).collect();
        let r2: Vec<&[f64]> = rows2.iter().map(|r| &r[..]).collect();
        let f1 = toy_fit(&r1, &[0.45, 0.55]);
        let f2 = toy_fit(&r2, &[0.35, 0.15, 0.5]);
        let (p1, p2) = posteriors(&f1, &f2).unwrap();
        let eg = EgOptions::default();
        let base = estimate_c_posteriors(&p1, &p2, &f1.pi, &f2.pi, &eg).unwrap().log_ratio;
        let perm = [3, 0, 11, 5, 2, 9, 1, 4, 10, 6, 8, 7];
        let both = estimate_c_posteriors(&p1.permuted(&perm), &p2.permuted(&perm), &f1.pi, &f2.pi, &eg)
            .unwrap()
            .log_ratio;
        assert!((base - both).abs() < 1e-10, "{base} vs {both}");
    }

    #[test]
    fn hard_coupling_drops_unused_clusters() {
        let l1 = HardLabels::new(vec![0, 0, 2, 2], 3);
        let l2 = HardLabels::new(vec![1, 0, 1, 1], 2);
        let c = hard_coupling(&ContingencyTable::from_labels(&l1, &l2).unwrap()).unwrap();
        assert_eq!(c.k1(), 2);
        assert_eq!(c.joint(), &DMatrix::from_row_slice(2, 2, &[0.25, 0.25, 0.0, 0.5]));
    }

    fn random_labels() -> impl Strategy<Value = (Vec<usize>, usize, Vec<usize>, usize)> {
        (6usize..=60, 2usize..=4, 2usize..=4).prop_flat_map(|(n, k1, k2)| {
            (
                prop::collection::vec(0..k1, n),
                Just(k1),
                prop::collection::vec(0..k2, n),
                Just(k2),
            )
        })
    }

    proptest! {
        #[test]
        fn hard_assignments_reproduce_the_g_statistic((a, k1, b, k2) in random_labels()) {
            let one_hot = |l: &[usize], k: usize| DMatrix::from_fn(l.len(), k, |i, c| if l[i] == c { 1.0 } else { 0.0 });
            let report = check_prop3(&one_hot(&a, k1), &one_hot(&b, k2)).unwrap();
            prop_assert!(report.holds(1e-10), "{report:?}");
            prop_assert!((report.g2 / (2.0 * report.n as f64) - report.mutual_information).abs() < 1e-12);
        }

        #[test]
        fn effective_rank_is_bounded(v in prop::collection::vec(0.001f64..1.0, 12), shape in 0usize..3) {
            let (r, c) = [(3, 4), (4, 3), (2, 6)][shape];
            let m = DMatrix::from_row_slice(r, c, &v);
            let e = effective_rank(&m).unwrap();
            prop_assert!(e >= 1.0 - 1e-12 && e <= r.min(c) as f64 + 1e-12);
        }
    }
}
