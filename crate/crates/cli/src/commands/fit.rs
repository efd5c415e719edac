use std::path::PathBuf;

use clap::Args;
use mvi_core::mixture::{CovarianceStructure, EmOptions};
use mvi_core::rng::derive_seed;
use serde::Serialize;

use crate::config::{FitConfig, Selection};
use crate::error::Result;
use crate::io::{self, Preprocess};
use crate::json::{self, matrix, SCHEMA_VERSION};

#[derive(Debug, Args)]
pub struct FitArgs {
    pub view: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum)]
    pub select: Option<Selection>,
    #[arg(long)]
    pub k_min: Option<usize>,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long)]
    pub min_k_two: bool,
    #[arg(long)]
    pub structure: Option<CovarianceStructure>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub id_col: bool,
    #[arg(long)]
    pub standardize: bool,
    #[arg(long)]
    pub impute_mean: bool,
    #[arg(long, default_value = "fit.json")]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct FitDoc {
    schema_version: u32,
    command: &'static str,
    input: String,
    n: usize,
    p: usize,
    k: usize,
    structure: CovarianceStructure,
    seed: u64,
    pi: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariance: Vec<Vec<f64>>,
    loglik: f64,
    bic: f64,
    aic: f64,
    n_params: usize,
    iterations: usize,
    converged: bool,
    /// Criterion value per candidate `K` (empty for a fixed `K`).
    selection: Option<Selection>,
    scores: Vec<(usize, Option<f64>)>,
    /// Hard labels, 1-based.
    labels: Vec<usize>,
}

pub fn run(args: &FitArgs, mut cfg: FitConfig) -> Result<()> {
    cfg.k = args.k.or(cfg.k);
    cfg.select = args.select.unwrap_or(cfg.select);
    cfg.k_min = args.k_min.unwrap_or(cfg.k_min);
    cfg.k_max = args.k_max.unwrap_or(cfg.k_max);
    cfg.min_k_two |= args.min_k_two;
    cfg.structure = args.structure.unwrap_or(cfg.structure);
    cfg.em.seed = args.seed.unwrap_or(cfg.em.seed);
    cfg.id_col |= args.id_col;
    cfg.standardize |= args.standardize;
    cfg.impute_mean |= args.impute_mean;

    let pre = Preprocess {
        impute_mean: cfg.impute_mean,
        standardize: cfg.standardize,
    };
    let (view, _) = io::load_view(&args.view, cfg.id_col, pre, "view")?;
    let seed = cfg.em.seed;
    let em = EmOptions {
        seed: derive_seed(seed, &[1]),
        ..cfg.em.clone()
    };
    let out = cfg.policy().fit(&view, cfg.structure, &em)?;
    let fit = &out.fit;
    let doc = FitDoc {
        schema_version: SCHEMA_VERSION,
        command: "fit",
        input: args.view.display().to_string(),
        n: fit.n(),
        p: fit.p(),
        k: fit.k,
        structure: fit.structure,
        seed,
        pi: fit.pi.iter().copied().collect(),
        means: matrix(&fit.means),
        covariance: matrix(&fit.covariance.to_matrix(fit.p())),
        loglik: fit.loglik,
        bic: fit.bic,
        aic: fit.aic,
        n_params: fit.n_params,
        iterations: fit.iterations,
        converged: fit.converged,
        selection: (cfg.select != Selection::Fixed).then_some(cfg.select),
        scores: out.scores,
        labels: fit.hard_labels().labels().iter().map(|l| l + 1).collect(),
    };
    json::write_validated(&args.out, &doc, json::validate_fit_result)?;
    println!("K = {}  loglik {:.6}  BIC {:.6}", fit.k, fit.loglik, fit.bic);
    Ok(())
}
