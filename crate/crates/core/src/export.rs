//! CSV and JSON writers with round-trip float formatting.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{AugmentationWorld, WorldFile};

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

pub fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn vector_csv(v: &DVector<f64>) -> String {
    v.iter().map(|&x| fmt_f64(x) + "\n").collect()
}

/// CSV with a header row; cells are preformatted strings.
pub fn table_csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.join(","));
    }
    out
}

/// Pretty JSON. serde_json prints floats in shortest round-trip form.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let s = read_file(path)?;
    serde_json::from_str(&s).map_err(|source| Error::Json { path: path.to_path_buf(), source })
}

pub fn read_world(path: &Path) -> Result<AugmentationWorld> {
    AugmentationWorld::from_file_repr(read_json::<WorldFile>(path)?)
}

pub fn write_world(path: &Path, world: &AugmentationWorld) -> Result<()> {
    write_file(path, &to_json(&world.to_file_repr()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_digits() {
        for x in [0.1_f64, 1.0 / 3.0, 2.0_f64.sqrt(), 1e-300, -7.25e12] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(0.038), "3.7999999999999999e-2");
    }
}
