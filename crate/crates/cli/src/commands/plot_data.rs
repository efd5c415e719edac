use std::path::{Path, PathBuf};

use clap::Args;
use mvi_core::simulate::PowerRow;

use super::power::read_power_csv;
use crate::error::{CliError, Result};
use crate::io::write_csv;

#[derive(Debug, Args)]
pub struct PlotDataArgs {
    /// A power.csv written by `mvi power`.
    pub power_csv: PathBuf,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

const PANEL_HEADER: [&str; 8] = ["design_id", "k_fit", "method", "delta", "reps", "rejections", "power", "se"];

/// One `(sigma, n)` panel: its series, each a run of rows sorted by delta.
pub struct Panel {
    pub sigma: f64,
    pub n: usize,
    pub rows: Vec<PowerRow>,
}

impl Panel {
    pub fn file_name(&self) -> String {
        format!("panel_sigma{}_n{}.csv", self.sigma, self.n)
    }
}

/// Groups rows into panels (in order of first appearance) with each panel's
/// rows ordered by series, then delta.
pub fn pivot(rows: &[PowerRow]) -> Vec<Panel> {
    let mut panels: Vec<Panel> = Vec::new();
    for row in rows {
        match panels.iter_mut().find(|p| p.sigma == row.sigma && p.n == row.n) {
            Some(p) => p.rows.push(row.clone()),
            None => panels.push(Panel {
                sigma: row.sigma,
                n: row.n,
                rows: vec![row.clone()],
            }),
        }
    }
    for p in &mut panels {
        p.rows.sort_by(|a, b| {
            (&a.design_id, &a.k_fit, &a.method)
                .cmp(&(&b.design_id, &b.k_fit, &b.method))
                .then(a.delta.total_cmp(&b.delta))
        });
    }
    panels
}

pub fn write_panels(dir: &Path, panels: &[Panel]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    for p in panels {
        let rows = p.rows.iter().map(|r| {
            vec![
                r.design_id.clone(),
                r.k_fit.clone(),
                r.method.clone(),
                r.delta.to_string(),
                r.reps.to_string(),
                r.rejections.to_string(),
                r.power.to_string(),
                r.se.to_string(),
            ]
        });
        write_csv(&dir.join(p.file_name()), &PANEL_HEADER, rows)?;
    }
    let index = panels
        .iter()
        .map(|p| vec![p.file_name(), p.sigma.to_string(), p.n.to_string()]);
    write_csv(&dir.join("panels.csv"), &["file", "sigma", "n"], index)
}

/// Reads the panels back into power-table rows.
pub fn unpivot(dir: &Path) -> Result<Vec<PowerRow>> {
    let index_path = dir.join("panels.csv");
    let csv_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CliError::Csv { path, source }
    };
    let mut index = csv::Reader::from_path(&index_path).map_err(csv_err(&index_path))?;
    let mut out = Vec::new();
    for rec in index.deserialize::<(String, f64, usize)>() {
        let (file, sigma, n) = rec.map_err(csv_err(&index_path))?;
        let path = dir.join(&file);
        let mut r = csv::Reader::from_path(&path).map_err(csv_err(&path))?;
        for rec in r.deserialize::<(String, String, String, f64, usize, usize, f64, f64)>() {
            let (design_id, k_fit, method, delta, reps, rejections, power, se) = rec.map_err(csv_err(&path))?;
            out.push(PowerRow {
                design_id,
                n,
                sigma,
                delta,
                k_fit,
                method,
                reps,
                rejections,
                power,
                se,
            });
        }
    }
    Ok(out)
}

pub fn run(args: &PlotDataArgs) -> Result<()> {
    let rows = read_power_csv(&args.power_csv)?;
    if rows.is_empty() {
        return Err(CliError::Invalid(format!("{} has no rows", args.power_csv.display())));
    }
    let panels = pivot(&rows);
    write_panels(&args.out, &panels)?;
    if unpivot(&args.out)?.len() != rows.len() {
        return Err(CliError::Invalid("panel files do not reproduce the input table".into()));
    }
    println!("{} panels written to {}", panels.len(), args.out.display());
    Ok(())
}
