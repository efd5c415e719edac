use std::path::{Path, PathBuf};

use clap::Args;
use mvi_core::mixture::CovarianceStructure;
use mvi_core::simulate::{run_power_study, KFit, MeanCatalog, Method, PowerGrid, PowerRow, PowerTable};

use super::simulate::{resolve_family, FamilyArg};
use crate::config::PowerConfig;
use crate::error::{CliError, Result};
use crate::json;

#[derive(Debug, Args)]
pub struct PowerArgs {
    /// Comma-separated catalog designs.
    #[arg(long, value_delimiter = ',')]
    pub designs: Vec<MeanCatalog>,
    #[arg(long, value_delimiter = ',')]
    pub n: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub sigma: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub delta: Vec<f64>,
    /// Components to fit: integers and/or `bic`.
    #[arg(long, value_delimiter = ',')]
    pub k_fit: Vec<KFit>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(short = 'B', long = "permutations")]
    pub b: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<Method>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub structure: Option<CovarianceStructure>,
    #[arg(long, value_enum)]
    pub family: Option<FamilyArg>,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub add_one: bool,
    /// EM restarts per fit.
    #[arg(long)]
    pub em_restarts: Option<usize>,
    /// Use 2000 replicates and 200 permutations unless set explicitly.
    #[arg(long)]
    pub full_scale: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

fn or_config<T: Clone>(flag: &[T], config: Option<&Vec<T>>, name: &str) -> Result<Vec<T>> {
    if !flag.is_empty() {
        return Ok(flag.to_vec());
    }
    config
        .cloned()
        .ok_or_else(|| CliError::Invalid(format!("--{name} is required (or set [power.grid] in the config)")))
}

pub fn run(args: &PowerArgs, cfg: PowerConfig) -> Result<()> {
    let g = cfg.grid.as_ref();
    let grid = PowerGrid {
        designs: or_config(&args.designs, g.map(|g| &g.designs), "designs")?,
        n: or_config(&args.n, g.map(|g| &g.n), "n")?,
        sigma: or_config(&args.sigma, g.map(|g| &g.sigma), "sigma")?,
        delta: or_config(&args.delta, g.map(|g| &g.delta), "delta")?,
        k_fit: or_config(&args.k_fit, g.map(|g| &g.k_fit), "k-fit")?,
    };
    let mut s = cfg.settings;
    if args.full_scale {
        s.reps = 2000;
        s.b = 200;
    }
    s.reps = args.reps.unwrap_or(s.reps);
    s.b = args.b.unwrap_or(s.b);
    s.alpha = args.alpha.unwrap_or(s.alpha);
    if !args.methods.is_empty() {
        s.methods = args.methods.clone();
    }
    s.seed = args.seed.unwrap_or(s.seed);
    s.structure = args.structure.unwrap_or(s.structure);
    s.family = resolve_family(args.family, args.nu, s.family);
    s.add_one |= args.add_one;
    s.em.n_restarts = args.em_restarts.unwrap_or(s.em.n_restarts);

    let table = run_power_study(&grid, &s)?;
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    write_power_csv(&args.out.join("power.csv"), &table.rows)?;
    let path = args.out.join("power.json");
    std::fs::write(&path, json::to_string(&PowerDoc { schema_version: json::SCHEMA_VERSION, command: "power", grid: &grid, settings: &s, table: &table })? + "\n")
        .map_err(|e| CliError::io(&path, e))?;
    for cell in table.cells.iter().filter(|c| c.flagged) {
        eprintln!("warning: cell {} had {} failed replicates of {}", cell.cell, cell.failed, cell.attempted);
    }
    println!("{} rows written to {}", table.rows.len(), args.out.display());
    Ok(())
}

#[derive(serde::Serialize)]
struct PowerDoc<'a> {
    schema_version: u32,
    command: &'static str,
    grid: &'a PowerGrid,
    settings: &'a mvi_core::simulate::PowerSettings,
    table: &'a PowerTable,
}

pub fn write_power_csv(path: &Path, rows: &[PowerRow]) -> Result<()> {
    let csv_err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_power_csv(path: &Path) -> Result<Vec<PowerRow>> {
    let csv_err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err)
}
