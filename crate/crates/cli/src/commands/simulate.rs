use std::path::PathBuf;

use clap::{Args, ValueEnum};
use mvi_core::simulate::{sample_views, CouplingDesign, MeanCatalog, NoiseFamily, SimDesign};

use crate::config::SimulateConfig;
use crate::error::{CliError, Result};
use crate::io::{write_csv, write_matrix};

/// Degrees of freedom used for the Student-t family when none is given.
pub const DEFAULT_NU: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Spherical,
    Correlated,
    MixedCovariance,
    StudentT,
}

/// Resolves the noise family from a flag, an explicit `nu` and the config.
pub fn resolve_family(arg: Option<FamilyArg>, nu: Option<f64>, from_config: NoiseFamily) -> NoiseFamily {
    let family = match arg {
        None => from_config,
        Some(FamilyArg::Spherical) => NoiseFamily::Spherical,
        Some(FamilyArg::Correlated) => NoiseFamily::Correlated,
        Some(FamilyArg::MixedCovariance) => NoiseFamily::MixedCovariance,
        Some(FamilyArg::StudentT) => {
            let nu = nu.or(match from_config {
                NoiseFamily::StudentT { nu } => Some(nu),
                _ => None,
            });
            NoiseFamily::StudentT {
                nu: nu.unwrap_or_else(|| {
                    log::warn!("Student-t degrees of freedom not given (--nu); the design leaves it open, using {DEFAULT_NU}");
                    DEFAULT_NU
                }),
            }
        }
    };
    match (family, nu) {
        (NoiseFamily::StudentT { .. }, Some(nu)) => NoiseFamily::StudentT { nu },
        _ => family,
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Catalog design, e.g. K3_P10 or EQUIDISTANT_K3_P2.
    #[arg(long)]
    pub design: Option<MeanCatalog>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Noise standard deviation for the spherical family.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Dependence between the latent clusterings, 0 (independent) to 1 (identical).
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub family: Option<FamilyArg>,
    /// Student-t degrees of freedom.
    #[arg(long)]
    pub nu: Option<f64>,
    /// Only write the design's mean matrices.
    #[arg(long)]
    pub dump_means: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

pub fn run(args: &SimulateArgs, mut cfg: SimulateConfig) -> Result<()> {
    cfg.design = args.design.or(cfg.design);
    cfg.n = args.n.unwrap_or(cfg.n);
    cfg.sigma = args.sigma.unwrap_or(cfg.sigma);
    cfg.delta = args.delta.unwrap_or(cfg.delta);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.family = resolve_family(args.family, args.nu, cfg.family);
    let design = cfg
        .design
        .ok_or_else(|| CliError::Invalid("--design is required".into()))?;
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;

    if args.dump_means {
        write_matrix(&args.out.join("means_view1.csv"), &design.mu1())?;
        write_matrix(&args.out.join("means_view2.csv"), &design.mu2())?;
        return Ok(());
    }
    if !matches!(cfg.family, NoiseFamily::Spherical) && design.p() != 2 {
        return Err(CliError::Invalid(format!(
            "the {:?} family is two-dimensional but {design} has p = {}",
            cfg.family,
            design.p()
        )));
    }
    let (family1, family2) = cfg.family.families(cfg.sigma);
    let sim = SimDesign {
        coupling: CouplingDesign::new(design.k(), cfg.delta)?,
        means: design,
        family1,
        family2,
        n: cfg.n,
        seed: cfg.seed,
    };
    let data = sample_views(&sim)?;
    write_matrix(&args.out.join("view1.csv"), data.view1.data())?;
    write_matrix(&args.out.join("view2.csv"), data.view2.data())?;
    let labels = data
        .labels1
        .labels()
        .iter()
        .zip(data.labels2.labels())
        .map(|(a, b)| vec![(a + 1).to_string(), (b + 1).to_string()]);
    write_csv(&args.out.join("labels.csv"), &["z1", "z2"], labels)?;
    println!("wrote {} observations of {design} to {}", cfg.n, args.out.display());
    Ok(())
}
