use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::design::{sample_views, ComponentFamily, CouplingDesign, MeanCatalog, SimDesign};
use crate::coupling::EgOptions;
use crate::error::{Error, Result};
use crate::inference::{
    ari_permutation, g_test, g_test_permutation, plrt_permutation, ContingencyTable, PermutationOptions,
};
use crate::mixture::{fit_mixture, select_k, CovarianceStructure, Criterion, DataView, EmOptions, MixtureFit};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Plrt,
    GTestChisq,
    GTestPerm,
    AriPerm,
}

impl Method {
    pub const ALL: [Method; 4] = [Self::Plrt, Self::GTestChisq, Self::GTestPerm, Self::AriPerm];

    pub fn name(self) -> &'static str {
        match self {
            Self::Plrt => "plrt",
            Self::GTestChisq => "g_test_chisq",
            Self::GTestPerm => "g_test_perm",
            Self::AriPerm => "ari_perm",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

/// Number of components used when fitting: fixed, or chosen per view by BIC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KFit {
    Fixed(usize),
    Bic,
}

impl fmt::Display for KFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Fixed(k) => write!(f, "{k}"),
            Self::Bic => f.write_str("bic"),
        }
    }
}

impl FromStr for KFit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("bic") {
            return Ok(Self::Bic);
        }
        match s.parse::<usize>() {
            Ok(k) if k > 0 => Ok(Self::Fixed(k)),
            _ => Err(format!("k_fit must be a positive integer or `bic`, got `{s}`")),
        }
    }
}

impl Serialize for KFit {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Fixed(k) => s.serialize_u64(*k as u64),
            Self::Bic => s.serialize_str("bic"),
        }
    }
}

impl<'de> Deserialize<'de> for KFit {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(u64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Int(k) => Self::from_str(&k.to_string()),
            Repr::Str(s) => Self::from_str(&s),
        }
        .map_err(serde::de::Error::custom)
    }
}

/// How component noise is generated; `sigma` from the grid only applies to
/// the spherical family.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseFamily {
    #[default]
    Spherical,
    /// Both views share the correlated 2-D covariance.
    Correlated,
    /// View 1 correlated, view 2 diagonal.
    MixedCovariance,
    /// Multivariate t with the correlated 2-D scale.
    StudentT { nu: f64 },
}

impl NoiseFamily {
    /// Component families for view 1 and view 2.
    pub fn families(self, sigma: f64) -> (ComponentFamily, ComponentFamily) {
        match self {
            Self::Spherical => {
                let f = ComponentFamily::GaussianSpherical { sigma };
                (f.clone(), f)
            }
            Self::Correlated => (ComponentFamily::correlated_2d(), ComponentFamily::correlated_2d()),
            Self::MixedCovariance => (ComponentFamily::correlated_2d(), ComponentFamily::diagonal_2d()),
            Self::StudentT { nu } => (ComponentFamily::student_t_2d(nu), ComponentFamily::student_t_2d(nu)),
        }
    }
}

/// Cartesian grid of simulation cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerGrid {
    pub designs: Vec<MeanCatalog>,
    pub n: Vec<usize>,
    pub sigma: Vec<f64>,
    pub delta: Vec<f64>,
    pub k_fit: Vec<KFit>,
}

/// One point of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerCell {
    pub design: MeanCatalog,
    pub n: usize,
    pub sigma: f64,
    pub delta: f64,
    pub k_fit: KFit,
}

impl PowerGrid {
    /// Cells in design, n, sigma, delta, k_fit order (last varies fastest).
    pub fn cells(&self) -> Vec<PowerCell> {
        let mut out = Vec::new();
        for &design in &self.designs {
            for &n in &self.n {
                for &sigma in &self.sigma {
                    for &delta in &self.delta {
                        for &k_fit in &self.k_fit {
                            out.push(PowerCell {
                                design,
                                n,
                                sigma,
                                delta,
                                k_fit,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerSettings {
    pub reps: usize,
    /// Permutations per replicate for the permutation-calibrated methods.
    pub b: usize,
    pub alpha: f64,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub structure: CovarianceStructure,
    pub family: NoiseFamily,
    pub add_one: bool,
    /// Largest `K` tried when `k_fit` is `bic`.
    pub bic_k_max: usize,
    /// Cells where more than this fraction of replicates fail are flagged.
    pub failure_threshold: f64,
    pub em: EmOptions,
    pub eg: EgOptions,
}

impl Default for PowerSettings {
    fn default() -> Self {
        Self {
            reps: 500,
            b: 100,
            alpha: 0.05,
            methods: Method::ALL.to_vec(),
            seed: 0,
            structure: CovarianceStructure::SphericalShared,
            family: NoiseFamily::Spherical,
            add_one: false,
            bic_k_max: 8,
            failure_threshold: 0.01,
            em: EmOptions::default(),
            eg: EgOptions::default(),
        }
    }
}

/// Per-replicate outcome; `error` is set when the replicate failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub cell: usize,
    pub rep: usize,
    pub seed: u64,
    pub k1: Option<usize>,
    pub k2: Option<usize>,
    pub p_values: BTreeMap<Method, f64>,
    pub plrt_statistic: Option<f64>,
    pub effective_rank: Option<f64>,
    pub eg_converged: Option<bool>,
    pub error: Option<String>,
}

/// One line of the power table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub design_id: String,
    pub n: usize,
    pub sigma: f64,
    pub delta: f64,
    pub k_fit: String,
    pub method: String,
    /// Successful replicates.
    pub reps: usize,
    pub rejections: usize,
    pub power: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: usize,
    #[serde(flatten)]
    pub spec: PowerCell,
    pub attempted: usize,
    pub failed: usize,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTable {
    pub rows: Vec<PowerRow>,
    pub cells: Vec<CellSummary>,
    pub replicates: Vec<ReplicateRecord>,
}

impl PowerTable {
    pub fn row(&self, cell: &PowerCell, method: Method) -> Option<&PowerRow> {
        self.rows.iter().find(|r| {
            r.design_id == cell.design.id()
                && r.n == cell.n
                && r.sigma == cell.sigma
                && r.delta == cell.delta
                && r.k_fit == cell.k_fit.to_string()
                && r.method == method.name()
        })
    }
}

fn validate(grid: &PowerGrid, settings: &PowerSettings) -> Result<()> {
    let bad = |name: &'static str, message: &str| {
        Err(Error::InvalidParameter {
            name,
            message: message.into(),
        })
    };
    if settings.reps == 0 {
        return bad("reps", "must be positive");
    }
    if settings.b == 0 {
        return bad("B", "must be positive");
    }
    if !(settings.alpha > 0.0 && settings.alpha < 1.0) {
        return bad("alpha", "must lie in (0, 1)");
    }
    if settings.methods.is_empty() {
        return bad("methods", "at least one method is required");
    }
    if grid.k_fit.contains(&KFit::Bic) && settings.bic_k_max == 0 {
        return bad("bic_k_max", "must be positive");
    }
    for cell in grid.cells() {
        CouplingDesign::new(cell.design.k(), cell.delta)?;
        if cell.n < 2 {
            return bad("n", "need at least two observations");
        }
        if let KFit::Fixed(k) = cell.k_fit {
            if k > cell.n {
                return bad("k_fit", "exceeds n");
            }
        }
        if !matches!(settings.family, NoiseFamily::Spherical) && cell.design.p() != 2 {
            return bad("family", "the non-spherical families are two-dimensional");
        }
    }
    Ok(())
}

fn fit_view(view: &DataView, k_fit: KFit, settings: &PowerSettings, em: &EmOptions) -> Result<MixtureFit> {
    match k_fit {
        KFit::Fixed(k) => fit_mixture(view, k, settings.structure, em),
        KFit::Bic => {
            let hi = settings.bic_k_max.min(view.n());
            Ok(select_k(view, 1..=hi, settings.structure, Criterion::Bic, false, em)?.fit)
        }
    }
}

struct RepOutput {
    k1: usize,
    k2: usize,
    p_values: BTreeMap<Method, f64>,
    plrt: Option<(f64, f64, bool)>,
}

fn run_replicate(cell: &PowerCell, settings: &PowerSettings, seed: u64) -> Result<RepOutput> {
    let (family1, family2) = settings.family.families(cell.sigma);
    let design = SimDesign {
        coupling: CouplingDesign::new(cell.design.k(), cell.delta)?,
        means: cell.design,
        family1,
        family2,
        n: cell.n,
        seed,
    };
    let data = sample_views(&design)?;
    let em = EmOptions {
        seed: derive_seed(seed, &[1]),
        ..settings.em.clone()
    };
    let fit1 = fit_view(&data.view1, cell.k_fit, settings, &em)?;
    let fit2 = fit_view(&data.view2, cell.k_fit, settings, &em)?;
    let perm_seed = derive_seed(seed, &[2]);

    let mut p_values = BTreeMap::new();
    let mut plrt = None;
    let labels = || (fit1.hard_labels().compacted(), fit2.hard_labels().compacted());
    for &method in &settings.methods {
        let p = match method {
            Method::Plrt => {
                let opts = PermutationOptions {
                    b: settings.b,
                    seed: perm_seed,
                    add_one: settings.add_one,
                    eg: settings.eg.clone(),
                };
                let out = plrt_permutation(&fit1, &fit2, &opts)?;
                plrt = Some((
                    out.result.statistic,
                    out.result.effective_rank.unwrap_or(f64::NAN),
                    out.estimate.converged,
                ));
                out.result.p_value
            }
            Method::GTestChisq => {
                let (l1, l2) = labels();
                g_test(&ContingencyTable::from_labels(&l1, &l2)?)?.p_value
            }
            Method::GTestPerm => {
                let (l1, l2) = labels();
                g_test_permutation(&l1, &l2, settings.b, perm_seed, settings.add_one)?.p_value
            }
            Method::AriPerm => {
                let (l1, l2) = labels();
                ari_permutation(&l1, &l2, settings.b, perm_seed, settings.add_one)?.p_value
            }
        };
        p_values.insert(method, p);
    }
    Ok(RepOutput {
        k1: fit1.k,
        k2: fit2.k,
        p_values,
        plrt,
    })
}

/// Runs every replicate of every cell and tabulates rejection rates.
///
/// Replicate `r` of cell `c` uses the seed `derive_seed(settings.seed, [c, r])`
/// for data, fits and permutations alike, so the table does not depend on
/// the number of threads.
pub fn run_power_study(grid: &PowerGrid, settings: &PowerSettings) -> Result<PowerTable> {
    validate(grid, settings)?;
    let cells = grid.cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..settings.reps).map(move |r| (c, r)))
        .collect();
    let replicates: Vec<ReplicateRecord> = jobs
        .into_par_iter()
        .map(|(c, r)| {
            let seed = derive_seed(settings.seed, &[c as u64, r as u64]);
            let mut rec = ReplicateRecord {
                cell: c,
                rep: r,
                seed,
                k1: None,
                k2: None,
                p_values: BTreeMap::new(),
                plrt_statistic: None,
                effective_rank: None,
                eg_converged: None,
                error: None,
            };
            match run_replicate(&cells[c], settings, seed) {
                Ok(out) => {
                    rec.k1 = Some(out.k1);
                    rec.k2 = Some(out.k2);
                    rec.p_values = out.p_values;
                    if let Some((stat, rank, conv)) = out.plrt {
                        rec.plrt_statistic = Some(stat);
                        rec.effective_rank = Some(rank);
                        rec.eg_converged = Some(conv);
                    }
                }
                Err(e) => {
                    log::warn!("cell {c} replicate {r} failed: {e}");
                    rec.error = Some(e.to_string());
                }
            }
            rec
        })
        .collect();

    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (c, cell) in cells.iter().enumerate() {
        let recs: Vec<&ReplicateRecord> = replicates.iter().filter(|r| r.cell == c).collect();
        let failed = recs.iter().filter(|r| r.error.is_some()).count();
        let flagged = failed as f64 > settings.failure_threshold * recs.len() as f64;
        if flagged {
            log::warn!("cell {c} ({}): {failed} of {} replicates failed", cell.design, recs.len());
        }
        summaries.push(CellSummary {
            cell: c,
            spec: *cell,
            attempted: recs.len(),
            failed,
            flagged,
        });
        for &method in &settings.methods {
            let ps: Vec<f64> = recs.iter().filter_map(|r| r.p_values.get(&method).copied()).collect();
            let reps = ps.len();
            let rejections = ps.iter().filter(|&&p| p <= settings.alpha).count();
            let (power, se) = if reps == 0 {
                (f64::NAN, f64::NAN)
            } else {
                let pw = rejections as f64 / reps as f64;
                (pw, (pw * (1.0 - pw) / reps as f64).sqrt())
            };
            rows.push(PowerRow {
                design_id: cell.design.id().to_string(),
                n: cell.n,
                sigma: cell.sigma,
                delta: cell.delta,
                k_fit: cell.k_fit.to_string(),
                method: method.name().to_string(),
                reps,
                rejections,
                power,
                se,
            });
        }
    }
    Ok(PowerTable {
        rows,
        cells: summaries,
        replicates,
    })
}
