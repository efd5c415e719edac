//! JSON output helpers: fixed 17-significant-digit floats and a small
//! structural validator for the emitted documents.

use std::io::{self, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::Value;

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Pretty printer that writes every float as `d.ddddddddddddddddde±x`.
/// Non-finite floats are turned into `null` by serde_json before they get
/// here.
struct Fixed17(PrettyFormatter<'static>);

impl Formatter for Fixed17 {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        write!(w, "{v:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(v))
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Pretty JSON with 17 significant digits for every float.
pub fn to_string<T: Serialize>(doc: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Fixed17(PrettyFormatter::new()));
    doc.serialize(&mut ser).map_err(|e| CliError::Invalid(e.to_string()))?;
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

pub fn matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Number,
    /// Number or `null` (non-finite).
    MaybeNumber,
    Integer,
    Str,
    Bool,
    Object,
    /// Array of arrays of numbers, all rows the same length.
    Matrix,
    NumberArray,
}

fn check(v: &Value, path: &str, kind: Kind) -> std::result::Result<(), String> {
    let node = v.pointer(path).ok_or_else(|| format!("missing `{path}`"))?;
    let ok = match kind {
        Kind::Number => node.is_number(),
        Kind::MaybeNumber => node.is_number() || node.is_null(),
        Kind::Integer => node.is_u64() || node.is_i64(),
        Kind::Str => node.is_string(),
        Kind::Bool => node.is_boolean(),
        Kind::Object => node.is_object(),
        Kind::NumberArray => node
            .as_array()
            .is_some_and(|a| a.iter().all(|x| x.is_number() || x.is_null())),
        Kind::Matrix => node.as_array().is_some_and(|rows| {
            let width = rows.first().and_then(Value::as_array).map_or(0, Vec::len);
            !rows.is_empty()
                && rows.iter().all(|r| {
                    r.as_array()
                        .is_some_and(|r| r.len() == width && r.iter().all(|x| x.is_number() || x.is_null()))
                })
        }),
    };
    if ok {
        Ok(())
    } else {
        Err(format!("`{path}` is not a {kind:?}"))
    }
}

fn dims(v: &Value, path: &str) -> (usize, usize) {
    let rows = v.pointer(path).and_then(Value::as_array);
    let n = rows.map_or(0, Vec::len);
    let m = rows.and_then(|r| r.first()).and_then(Value::as_array).map_or(0, Vec::len);
    (n, m)
}

const COMMON: &[(&str, Kind)] = &[("/schema_version", Kind::Integer), ("/command", Kind::Str)];

const TEST_FIELDS: &[(&str, Kind)] = &[
    ("/input", Kind::Object),
    ("/input/n", Kind::Integer),
    ("/input/standardize", Kind::Bool),
    ("/input/impute_mean", Kind::Bool),
    ("/settings/B", Kind::Integer),
    ("/settings/seed", Kind::Integer),
    ("/settings/alpha", Kind::Number),
    ("/fits/view1/k", Kind::Integer),
    ("/fits/view2/k", Kind::Integer),
    ("/fits/view1/loglik", Kind::MaybeNumber),
    ("/fits/view1/pi", Kind::NumberArray),
    ("/fits/view2/pi", Kind::NumberArray),
    ("/plrt/statistic", Kind::MaybeNumber),
    ("/plrt/p_value", Kind::Number),
    ("/plrt/B", Kind::Integer),
    ("/plrt/effective_rank", Kind::MaybeNumber),
    ("/plrt/pi_hat", Kind::Matrix),
    ("/plrt/c_hat", Kind::Matrix),
    ("/plrt/reject", Kind::Bool),
    ("/plrt/diagnostics", Kind::Object),
    ("/contingency_table", Kind::Matrix),
    ("/baselines/g_test/g2", Kind::MaybeNumber),
    ("/baselines/g_test/df", Kind::Integer),
    ("/baselines/g_test/p_value_chisq", Kind::MaybeNumber),
    ("/baselines/g_test/p_value_permutation", Kind::MaybeNumber),
    ("/baselines/mutual_information", Kind::MaybeNumber),
    ("/baselines/ari/value", Kind::MaybeNumber),
    ("/baselines/ari/p_value_permutation", Kind::MaybeNumber),
];

const FIT_FIELDS: &[(&str, Kind)] = &[
    ("/k", Kind::Integer),
    ("/structure", Kind::Str),
    ("/pi", Kind::NumberArray),
    ("/means", Kind::Matrix),
    ("/covariance", Kind::Matrix),
    ("/loglik", Kind::MaybeNumber),
    ("/bic", Kind::MaybeNumber),
    ("/aic", Kind::MaybeNumber),
    ("/n_params", Kind::Integer),
    ("/iterations", Kind::Integer),
    ("/converged", Kind::Bool),
];

/// Checks a `result.json` document from `mvi test`.
pub fn validate_test_result(v: &Value) -> std::result::Result<(), String> {
    for &(p, k) in COMMON.iter().chain(TEST_FIELDS) {
        check(v, p, k)?;
    }
    if v["schema_version"] != SCHEMA_VERSION {
        return Err("unsupported schema_version".into());
    }
    let k1 = v["fits"]["view1"]["k"].as_u64().unwrap_or(0) as usize;
    let k2 = v["fits"]["view2"]["k"].as_u64().unwrap_or(0) as usize;
    for path in ["/plrt/pi_hat", "/plrt/c_hat", "/contingency_table"] {
        if dims(v, path) != (k1, k2) {
            return Err(format!("`{path}` is not {k1} x {k2}"));
        }
    }
    Ok(())
}

/// Checks a `fit.json` document from `mvi fit`.
pub fn validate_fit_result(v: &Value) -> std::result::Result<(), String> {
    for &(p, k) in COMMON.iter().chain(FIT_FIELDS) {
        check(v, p, k)?;
    }
    let k = v["k"].as_u64().unwrap_or(0) as usize;
    if v["pi"].as_array().map_or(0, Vec::len) != k || dims(v, "/means").0 != k {
        return Err("proportions or means do not match k".into());
    }
    let (a, b) = dims(v, "/covariance");
    if a != b || a != dims(v, "/means").1 {
        return Err("covariance is not p x p".into());
    }
    Ok(())
}

/// Serializes, re-parses and validates, then writes `doc` to `path`.
pub fn write_validated<T: Serialize>(
    path: &Path,
    doc: &T,
    validate: fn(&Value) -> std::result::Result<(), String>,
) -> Result<()> {
    let text = to_string(doc)?;
    let parsed: Value = serde_json::from_str(&text).map_err(|e| CliError::Invalid(e.to_string()))?;
    validate(&parsed).map_err(|e| CliError::Invalid(format!("output failed validation: {e}")))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}
