//! CSV ingestion: parsing, optional ID join, imputation and scaling.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use mvi_core::mixture::DataView;
use serde::Serialize;

use crate::error::{CliError, Result};

/// A parsed numeric CSV; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub path: PathBuf,
    pub ids: Option<Vec<String>>,
    pub names: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

fn is_missing(s: &str) -> bool {
    matches!(s, "" | "NA" | "na" | "NaN" | "nan" | ".")
}

/// Reads a headed CSV. With `id_col` the first column is kept as string IDs.
pub fn read_table(path: &Path, id_col: bool) -> Result<Table> {
    let csv_err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let skip = usize::from(id_col);
    if header.len() <= skip {
        return Err(CliError::Invalid(format!("{}: no feature columns", path.display())));
    }
    let names = header[skip..].to_vec();
    let mut ids = id_col.then(Vec::new);
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        if let Some(ids) = ids.as_mut() {
            ids.push(record[0].to_string());
        }
        let row = record
            .iter()
            .skip(skip)
            .enumerate()
            .map(|(c, cell)| {
                if is_missing(cell) {
                    return Ok(None);
                }
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(Some(v)),
                    _ => Err(CliError::NonNumericCell {
                        path: path.to_path_buf(),
                        row: r + 1,
                        column: c + 1 + skip,
                        name: names[c].clone(),
                        value: cell.to_string(),
                    }),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(Table {
        path: path.to_path_buf(),
        ids,
        names,
        rows,
    })
}

/// How the two views were aligned.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JoinReport {
    pub id_join: bool,
    pub rows_view1: usize,
    pub rows_view2: usize,
    pub rows_used: usize,
}

/// Aligns two tables by position, or by inner join on IDs (in the first
/// table's order) when both carry ID columns.
pub fn align(a: Table, b: Table) -> Result<(Table, Table, JoinReport)> {
    let (rows_view1, rows_view2) = (a.rows.len(), b.rows.len());
    match (&a.ids, &b.ids) {
        (Some(ia), Some(ib)) => {
            let index = unique_index(ib, &b.path)?;
            unique_index(ia, &a.path)?;
            let pairs: Vec<(usize, usize)> = ia
                .iter()
                .enumerate()
                .filter_map(|(i, id)| index.get(id.as_str()).map(|&j| (i, j)))
                .collect();
            if pairs.is_empty() {
                return Err(CliError::EmptyAfterJoin);
            }
            let pick = |t: &Table, idx: Vec<usize>| Table {
                path: t.path.clone(),
                ids: t.ids.as_ref().map(|ids| idx.iter().map(|&i| ids[i].clone()).collect()),
                names: t.names.clone(),
                rows: idx.iter().map(|&i| t.rows[i].clone()).collect(),
            };
            let ja = pick(&a, pairs.iter().map(|p| p.0).collect());
            let jb = pick(&b, pairs.iter().map(|p| p.1).collect());
            let report = JoinReport {
                id_join: true,
                rows_view1,
                rows_view2,
                rows_used: pairs.len(),
            };
            Ok((ja, jb, report))
        }
        _ => {
            if rows_view1 != rows_view2 {
                return Err(CliError::RowMismatch {
                    left: rows_view1,
                    right: rows_view2,
                });
            }
            let report = JoinReport {
                id_join: false,
                rows_view1,
                rows_view2,
                rows_used: rows_view1,
            };
            Ok((a, b, report))
        }
    }
}

fn unique_index<'a>(ids: &'a [String], path: &Path) -> Result<HashMap<&'a str, usize>> {
    let mut index = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if index.insert(id.as_str(), i).is_some() {
            return Err(CliError::Invalid(format!("{}: duplicate ID `{id}`", path.display())));
        }
    }
    Ok(index)
}

/// Optional preprocessing, applied in this order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Preprocess {
    pub impute_mean: bool,
    pub standardize: bool,
}

/// Converts a table to a data view; returns the number of imputed cells.
pub fn to_view(table: &Table, pre: Preprocess, view_id: &str) -> Result<(DataView, usize)> {
    let n = table.rows.len();
    let p = table.names.len();
    let mut data = DMatrix::zeros(n, p);
    let mut imputed = 0;
    for c in 0..p {
        let observed: Vec<f64> = table.rows.iter().filter_map(|r| r[c]).collect();
        let mean = if observed.is_empty() {
            None
        } else {
            Some(observed.iter().sum::<f64>() / observed.len() as f64)
        };
        for (r, row) in table.rows.iter().enumerate() {
            data[(r, c)] = match (row[c], pre.impute_mean, mean) {
                (Some(v), _, _) => v,
                (None, true, Some(m)) => {
                    imputed += 1;
                    m
                }
                (None, true, None) => {
                    return Err(CliError::Invalid(format!(
                        "{}: column `{}` has no observed values to impute from",
                        table.path.display(),
                        table.names[c]
                    )))
                }
                (None, false, _) => {
                    return Err(CliError::MissingCell {
                        path: table.path.clone(),
                        row: r + 1,
                        column: c + 1 + usize::from(table.ids.is_some()),
                        name: table.names[c].clone(),
                    })
                }
            };
        }
    }
    let mut view = DataView::new(data, view_id)?.with_feature_names(table.names.clone())?;
    if pre.standardize {
        view = view.standardized();
    }
    Ok((view, imputed))
}

/// Reads a single view.
pub fn load_view(path: &Path, id_col: bool, pre: Preprocess, view_id: &str) -> Result<(DataView, usize)> {
    to_view(&read_table(path, id_col)?, pre, view_id)
}

/// Writes `rows` under `header` as CSV.
pub fn write_csv<S: AsRef<str>>(path: &Path, header: &[S], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let csv_err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header.iter().map(AsRef::as_ref)).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Writes a matrix with generated `x1..xp` headers.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let header: Vec<String> = (1..=m.ncols()).map(|j| format!("x{j}")).collect();
    let rows = m.row_iter().map(|r| r.iter().map(|v| v.to_string()).collect());
    write_csv(path, &header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let path = dir.path().join(name);
        std::fs::File::create(&path).unwrap().write_all(body.as_bytes()).unwrap();
        path
    }

    #[test]
    fn parses_numbers_and_missing_cells() {
        let dir = tempfile::tempdir().unwrap();
        let t = read_table(&file(&dir, "a.csv", "a,b\n1,2.5\nNA, -3\n"), false).unwrap();
        assert_eq!(t.names, ["a", "b"]);
        assert_eq!(t.rows, vec![vec![Some(1.0), Some(2.5)], vec![None, Some(-3.0)]]);
    }

    #[test]
    fn non_numeric_cell_is_located() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_table(&file(&dir, "a.csv", "id,a,b\nx,1,2\ny,3,oops\n"), true).unwrap_err();
        match err {
            CliError::NonNumericCell { row, column, name, value, .. } => {
                assert_eq!((row, column, name.as_str(), value.as_str()), (2, 3, "b", "oops"));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn join_keeps_first_view_order() {
        let dir = tempfile::tempdir().unwrap();
        let a = read_table(&file(&dir, "a.csv", "id,a\np,1\nq,2\nr,3\n"), true).unwrap();
        let b = read_table(&file(&dir, "b.csv", "id,b\nr,30\ns,40\np,10\n"), true).unwrap();
        let (ja, jb, report) = align(a, b).unwrap();
        assert_eq!(report.rows_used, 2);
        assert_eq!(ja.ids.unwrap(), ["p", "r"]);
        assert_eq!(jb.rows, vec![vec![Some(10.0)], vec![Some(30.0)]]);
    }

    #[test]
    fn join_errors() {
        let dir = tempfile::tempdir().unwrap();
        let a = read_table(&file(&dir, "a.csv", "id,a\np,1\nq,2\n"), true).unwrap();
        let b = read_table(&file(&dir, "b.csv", "id,b\nr,30\n"), true).unwrap();
        assert!(matches!(align(a.clone(), b), Err(CliError::EmptyAfterJoin)));
        let c = read_table(&file(&dir, "c.csv", "b\n1\n2\n3\n"), false).unwrap();
        assert!(matches!(align(a, c), Err(CliError::RowMismatch { left: 2, right: 3 })));
    }

    #[test]
    fn imputation_and_standardization() {
        let dir = tempfile::tempdir().unwrap();
        let t = read_table(&file(&dir, "a.csv", "a,b\n1,2\n,4\n3,6\n"), false).unwrap();
        assert!(matches!(to_view(&t, Preprocess::default(), "v"), Err(CliError::MissingCell { row: 2, column: 1, .. })));
        let (v, imputed) = to_view(
            &t,
            Preprocess {
                impute_mean: true,
                standardize: false,
            },
            "v",
        )
        .unwrap();
        assert_eq!(imputed, 1);
        assert_eq!(v.data()[(1, 0)], 2.0);
        let (s, _) = to_view(
            &t,
            Preprocess {
                impute_mean: true,
                standardize: true,
            },
            "v",
        )
        .unwrap();
        // Column b = [2, 4, 6] has sd 2.
        assert_eq!(s.data().column(1).iter().copied().collect::<Vec<_>>(), [1.0, 2.0, 3.0]);
    }
}
