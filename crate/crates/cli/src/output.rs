//! Artifact writing: JSON with 17 significant digits, CSV tables, and the
//! run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const REPORT_SCHEMA: &str = "gradlab.report/1";
pub const MANIFEST_SCHEMA: &str = "gradlab.manifest/1";

/// `x` in scientific notation with 17 significant digits, enough to
/// round-trip every `f64`.
pub fn fmt_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

/// Pretty printer that routes every float through [`fmt_float`].
struct SigDigits<'a>(PrettyFormatter<'a>);

macro_rules! forward {
    ($($name:ident($($arg:ident: $ty:ty),*)),* $(,)?) => {
        $(fn $name<W: ?Sized + io::Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> io::Result<()> {
            self.0.$name(w $(, $arg)*)
        })*
    };
}

impl Formatter for SigDigits<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(fmt_float(value).as_bytes())
    }
    forward!(
        begin_array(),
        end_array(),
        begin_array_value(first: bool),
        end_array_value(),
        begin_object(),
        end_object(),
        begin_object_key(first: bool),
        end_object_key(),
        begin_object_value(),
        end_object_value(),
    );
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SigDigits(PrettyFormatter::with_indent(b"  ")));
    value.serialize(&mut ser).expect("in-memory JSON serialisation");
    out.push(b'\n');
    out
}

/// Compact form used for hashing.
pub fn to_compact_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, CompactFormatter);
    value.serialize(&mut ser).expect("in-memory JSON serialisation");
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let line = |cells: &[String]| cells.iter().map(|c| csv_cell(c)).collect::<Vec<_>>().join(",");
        let mut s = line(&self.header);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&line(r));
            s.push('\n');
        }
        s
    }
}

fn csv_cell(c: &str) -> String {
    if c.contains([',', '"', '\n']) {
        format!("\"{}\"", c.replace('"', "\"\""))
    } else {
        c.to_string()
    }
}

/// Task output before it is written to disk.
#[derive(Debug, Clone)]
pub struct TaskOutput {
    pub report: Report,
    pub tables: BTreeMap<String, Table>,
    /// Per-chain checkpoints, written under `checkpoints/`.
    pub checkpoints: Vec<(String, gradlab_core::sampler::Checkpoint)>,
}

/// Estimates with standard errors, keyed by name. `mean` and `se` share a
/// shape: scalar, vector or matrix. `compare` works on this section.
pub type Estimates = BTreeMap<String, EstimateValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateValue {
    pub mean: Value,
    pub se: Value,
}

impl EstimateValue {
    pub fn scalar(mean: f64, se: f64) -> Self {
        Self { mean: num(mean), se: num(se) }
    }
    pub fn vector(mean: &[f64], se: &[f64]) -> Self {
        Self { mean: mean.iter().map(|&x| num(x)).collect(), se: se.iter().map(|&x| num(x)).collect() }
    }
    pub fn matrix(mean: &[Vec<f64>], se: &[Vec<f64>]) -> Self {
        let m = |a: &[Vec<f64>]| Value::Array(a.iter().map(|r| r.iter().map(|&x| num(x)).collect()).collect());
        Self { mean: m(mean), se: m(se) }
    }
    /// An exact value, with zero error.
    pub fn exact_matrix(mean: &[Vec<f64>]) -> Self {
        let zeros: Vec<Vec<f64>> = mean.iter().map(|r| vec![0.0; r.len()]).collect();
        Self::matrix(mean, &zeros)
    }
}

fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub task: String,
    pub config_hash: String,
    pub estimates: Estimates,
    pub details: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timestamps {
    /// Unix seconds.
    pub started: u64,
    pub finished: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub task: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub chains: usize,
    pub deterministic: bool,
    pub timestamps: Timestamps,
    /// SHA-256 of every artifact, keyed by path relative to the run directory.
    pub digests: BTreeMap<String, String>,
}

/// Write report, tables and checkpoints under `dir` and return the digests.
pub fn write_artifacts(dir: &Path, out: &TaskOutput) -> io::Result<BTreeMap<String, String>> {
    let mut files: Vec<(PathBuf, Vec<u8>)> = vec![("report.json".into(), to_json(&out.report))];
    for (name, t) in &out.tables {
        files.push((Path::new("tables").join(format!("{name}.csv")), t.to_csv().into_bytes()));
    }
    let mut digests = BTreeMap::new();
    for (rel, bytes) in &files {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        digests.insert(rel.to_string_lossy().replace('\\', "/"), sha256_hex(bytes));
    }
    let ck_dir = dir.join("checkpoints");
    for (name, ck) in &out.checkpoints {
        ck.save(&ck_dir, name).map_err(|e| io::Error::other(e.to_string()))?;
        for ext in ["bin", "json"] {
            let rel = format!("checkpoints/{name}.{ext}");
            digests.insert(rel.clone(), sha256_hex(&fs::read(dir.join(&rel))?));
        }
    }
    Ok(digests)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_keep_seventeen_digits() {
        assert_eq!(fmt_float(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_float(-3.0), "-3.0000000000000000e0");
        for x in [0.1, 1.0 / 3.0, 6.02214076e23, -2.5e-300, f64::MIN_POSITIVE] {
            assert_eq!(fmt_float(x).parse::<f64>().unwrap(), x);
        }
        let json = String::from_utf8(to_json(&serde_json::json!({ "a": [0.1, 2], "b": "x" }))).unwrap();
        assert!(json.contains("1.0000000000000001e-1"));
        let back: Value = serde_json::from_str(&json).unwrap();
        assert_eq!(back["a"][0].as_f64(), Some(0.1));
        assert_eq!(back["a"][1].as_u64(), Some(2));
    }

    #[test]
    fn csv_quotes_separators() {
        let mut t = Table::new(&["name", "value"]);
        t.push(vec!["a,b".into(), "1".into()]);
        assert_eq!(t.to_csv(), "name,value\n\"a,b\",1\n");
    }
}
