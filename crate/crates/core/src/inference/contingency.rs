//! Baselines computed from hard cluster assignments: the G-test, mutual
//! information and the adjusted Rand index, with permutation versions.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{permutation_p_value, PValueKind, TestResult};
use crate::error::{Error, Result};
use crate::mixture::HardLabels;
use crate::rng;

/// Cross-tabulation of two labelings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    counts: Vec<u64>,
    k1: usize,
    k2: usize,
    n: u64,
}

impl ContingencyTable {
    pub fn from_counts(rows: &[Vec<u64>]) -> Result<Self> {
        let k1 = rows.len();
        let k2 = rows.first().map_or(0, Vec::len);
        if k1 == 0 || k2 == 0 {
            return Err(Error::InvalidParameter {
                name: "table",
                message: "needs at least one row and column".into(),
            });
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != k2) {
            return Err(Error::DimensionMismatch {
                expected: k2,
                found: bad.len(),
            });
        }
        let counts: Vec<u64> = rows.iter().flatten().copied().collect();
        let n = counts.iter().sum();
        Ok(Self { counts, k1, k2, n })
    }

    pub fn from_labels(labels1: &HardLabels, labels2: &HardLabels) -> Result<Self> {
        Self::tabulate(labels1.labels(), labels1.k(), labels2.labels(), labels2.k())
    }

    fn tabulate(l1: &[usize], k1: usize, l2: &[usize], k2: usize) -> Result<Self> {
        if l1.len() != l2.len() {
            return Err(Error::DimensionMismatch {
                expected: l1.len(),
                found: l2.len(),
            });
        }
        let mut counts = vec![0u64; k1 * k2];
        for (&a, &b) in l1.iter().zip(l2) {
            counts[a * k2 + b] += 1;
        }
        Ok(Self {
            counts,
            k1,
            k2,
            n: l1.len() as u64,
        })
    }

    pub fn k1(&self) -> usize {
        self.k1
    }

    pub fn k2(&self) -> usize {
        self.k2
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn count(&self, k: usize, l: usize) -> u64 {
        self.counts[k * self.k2 + l]
    }

    pub fn row_sums(&self) -> Vec<u64> {
        (0..self.k1).map(|k| (0..self.k2).map(|l| self.count(k, l)).sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.k2).map(|l| (0..self.k1).map(|k| self.count(k, l)).sum()).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<u64>> {
        (0..self.k1).map(|k| (0..self.k2).map(|l| self.count(k, l)).collect()).collect()
    }
}

/// `G² = 2 Σ N_kk' log(n N_kk' / (N_k· N_·k'))` with `0 log 0 = 0`.
/// Empty rows and columns contribute nothing.
pub fn g_statistic(table: &ContingencyTable) -> f64 {
    let (rows, cols) = (table.row_sums(), table.col_sums());
    let n = table.n as f64;
    let mut g = 0.0;
    for k in 0..table.k1 {
        for l in 0..table.k2 {
            let c = table.count(k, l);
            if c > 0 {
                let c = c as f64;
                g += c * (n * c / (rows[k] as f64 * cols[l] as f64)).ln();
            }
        }
    }
    2.0 * g
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GTest {
    pub g2: f64,
    pub df: usize,
    /// Upper chi-square tail at `g2`.
    pub p_value: f64,
}

/// G-test of independence with the asymptotic chi-square reference.
pub fn g_test(table: &ContingencyTable) -> Result<GTest> {
    if table.n == 0 {
        return Err(Error::InvalidParameter {
            name: "table",
            message: "no observations".into(),
        });
    }
    if let Some(index) = table.row_sums().iter().position(|&s| s == 0) {
        return Err(Error::EmptyMarginal { axis: "row", index });
    }
    if let Some(index) = table.col_sums().iter().position(|&s| s == 0) {
        return Err(Error::EmptyMarginal { axis: "column", index });
    }
    let g2 = g_statistic(table);
    let df = (table.k1 - 1) * (table.k2 - 1);
    Ok(GTest {
        g2,
        df,
        p_value: super::special::chi_square_sf(g2, df),
    })
}

/// Empirical mutual information of the two labelings, `G² / (2n)`.
pub fn mutual_information(table: &ContingencyTable) -> f64 {
    g_statistic(table) / (2.0 * table.n as f64)
}

fn choose2(x: u64) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index.
///
/// When the expected and maximal index coincide (both labelings constant, or
/// otherwise degenerate) the agreement is perfect by convention and 1 is
/// returned.
pub fn adjusted_rand(labels1: &HardLabels, labels2: &HardLabels) -> Result<f64> {
    let table = ContingencyTable::from_labels(labels1, labels2)?;
    Ok(ari_from_table(&table))
}

fn ari_from_table(table: &ContingencyTable) -> f64 {
    let index: f64 = table.counts.iter().map(|&c| choose2(c)).sum();
    let a: f64 = table.row_sums().into_iter().map(choose2).sum();
    let b: f64 = table.col_sums().into_iter().map(choose2).sum();
    let total = choose2(table.n);
    let expected = if total > 0.0 { a * b / total } else { 0.0 };
    let max = 0.5 * (a + b);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

fn permutation_test_on_labels(
    labels1: &HardLabels,
    labels2: &HardLabels,
    b: usize,
    seed: u64,
    add_one: bool,
    stat: impl Fn(&ContingencyTable) -> f64 + Sync,
) -> Result<TestResult> {
    if b == 0 {
        return Err(Error::InvalidParameter {
            name: "B",
            message: "need at least one permutation".into(),
        });
    }
    let observed_table = ContingencyTable::from_labels(labels1, labels2)?;
    let observed = stat(&observed_table);
    let (l1, l2) = (labels1.labels(), labels2.labels());
    let null: Vec<f64> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = rng::stream(seed, rep as u64);
            let mut perm: Vec<usize> = l2.to_vec();
            perm.shuffle(&mut rng);
            let table = ContingencyTable::tabulate(l1, labels1.k(), &perm, labels2.k()).expect("same length");
            stat(&table)
        })
        .collect();
    Ok(TestResult {
        statistic: observed,
        p_value: permutation_p_value(observed, &null, add_one),
        p_value_kind: PValueKind::Permutation { b },
        effective_rank: None,
        diagnostics: Default::default(),
    })
}

/// G-test calibrated by permuting the second labeling.
pub fn g_test_permutation(
    labels1: &HardLabels,
    labels2: &HardLabels,
    b: usize,
    seed: u64,
    add_one: bool,
) -> Result<TestResult> {
    permutation_test_on_labels(labels1, labels2, b, seed, add_one, g_statistic)
}

/// Adjusted Rand index calibrated by permuting the second labeling.
pub fn ari_permutation(
    labels1: &HardLabels,
    labels2: &HardLabels,
    b: usize,
    seed: u64,
    add_one: bool,
) -> Result<TestResult> {
    permutation_test_on_labels(labels1, labels2, b, seed, add_one, ari_from_table)
}
