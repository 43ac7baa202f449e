//! On-disk formats.
//!
//! Per-path CSV (`paths.csv`), one row per recorded quantity:
//!
//! | column       | meaning                                              |
//! |--------------|------------------------------------------------------|
//! | `experiment` | experiment name                                      |
//! | `n`          | scaling index                                        |
//! | `h`          | Euler step                                           |
//! | `method`     | exit detection method                                |
//! | `seed`       | master seed of the path's random streams             |
//! | `path_index` | path index within the stream family                  |
//! | `quantity`   | what `value` is (`exit_time`, `exit_value`, `y`, ...) |
//! | `param`      | time, horizon or step the quantity refers to, if any |
//! | `component`  | vector component, if any                             |
//! | `value`      | the number                                           |
//!
//! Floats are written in Rust's shortest round-trip notation, so files are
//! byte-identical whenever the numbers are bit-identical.
//!
//! Reference CSV: `draw,tau,v0,v1,...` with an empty `tau` when absent.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use exitlab_core::reference::{ReferenceDraw, ReferenceKind, ReferenceSample};
use exitlab_core::{Method, TestReport};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::LabError;

pub const PATHS_FILE: &str = "paths.csv";
pub const REPORT_FILE: &str = "report.json";
pub const MANIFEST_FILE: &str = "manifest.json";

pub const PATH_HEADER: [&str; 10] = [
    "experiment",
    "n",
    "h",
    "method",
    "seed",
    "path_index",
    "quantity",
    "param",
    "component",
    "value",
];

/// One per-path CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRow {
    pub n: u64,
    pub h: f64,
    pub method: Method,
    pub seed: u64,
    pub path_index: u64,
    pub quantity: &'static str,
    pub param: Option<f64>,
    pub component: Option<usize>,
    pub value: f64,
}

fn create(path: &Path) -> Result<BufWriter<File>, LabError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| LabError::io(parent, e))?;
        }
    }
    Ok(BufWriter::new(
        File::create(path).map_err(|e| LabError::io(path, e))?,
    ))
}

fn csv_error(path: &Path, e: csv::Error) -> LabError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => LabError::io(path, io),
        other => LabError::format(path, format!("{other:?}")),
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_paths(path: &Path, experiment: &str, rows: &[PathRow]) -> Result<(), LabError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(PATH_HEADER)
        .map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record([
            experiment.to_string(),
            r.n.to_string(),
            r.h.to_string(),
            r.method.to_string(),
            r.seed.to_string(),
            r.path_index.to_string(),
            r.quantity.to_string(),
            opt(r.param),
            opt(r.component),
            r.value.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), LabError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| LabError::format(path, e.to_string()))?;
    w.write_all(b"\n").map_err(|e| LabError::io(path, e))?;
    w.flush().map_err(|e| LabError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, LabError> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| LabError::format(path, e.to_string()))
}

/// Writes the report array. Non-finite numbers have no JSON form and are
/// rejected.
pub fn write_reports(path: &Path, reports: &[TestReport]) -> Result<(), LabError> {
    for r in reports {
        let finite = r.statistic.is_finite()
            && r.threshold.is_finite()
            && r.p_value.map_or(true, f64::is_finite)
            && r.provenance.h.is_finite();
        if !finite {
            return Err(LabError::format(
                path,
                format!("report {} has a non-finite field", r.test_name),
            ));
        }
    }
    write_json(path, reports)
}

pub fn read_reports(path: &Path) -> Result<Vec<TestReport>, LabError> {
    read_json(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub kind: String,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub code_version: String,
    pub master_seed: u64,
    pub workers: usize,
    pub wall_clock_seconds: f64,
    pub all_gating_passed: bool,
    pub outputs: Vec<OutputFile>,
}

impl RunManifest {
    pub fn output(&self, kind: &str) -> Option<&OutputFile> {
        self.outputs.iter().find(|o| o.kind == kind)
    }
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<(), LabError> {
    write_json(path, manifest)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, LabError> {
    read_json(path)
}

pub fn write_reference(path: &Path, sample: &ReferenceSample) -> Result<(), LabError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["draw".to_string(), "tau".to_string()];
    header.extend((0..sample.dim).map(|k| format!("v{k}")));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (i, d) in sample.draws.iter().enumerate() {
        let mut rec = vec![i.to_string(), opt(d.tau)];
        rec.extend(d.value.iter().map(f64::to_string));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

pub fn read_reference(path: &Path, kind: ReferenceKind) -> Result<ReferenceSample, LabError> {
    let file = File::open(path).map_err(|e| LabError::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.len() < 3 || &header[0] != "draw" || &header[1] != "tau" {
        return Err(LabError::format(path, "expected columns draw,tau,v0,..."));
    }
    let dim = header.len() - 2;
    let parse = |s: &str| -> Result<f64, LabError> {
        s.parse::<f64>()
            .map_err(|_| LabError::format(path, format!("not a number: {s:?}")))
    };
    let mut draws = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec[0] != *i.to_string() {
            return Err(LabError::format(path, format!("draw {i} out of order")));
        }
        let tau = if rec[1].is_empty() {
            None
        } else {
            Some(parse(&rec[1])?)
        };
        let value = (0..dim)
            .map(|k| parse(&rec[k + 2]))
            .collect::<Result<Vec<_>, _>>()?;
        draws.push(ReferenceDraw { tau, value });
    }
    ReferenceSample::new(kind, dim, draws).map_err(LabError::from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use exitlab_core::reference::sample_stopped_sigma_bm;

    #[test]
    fn reference_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ref.csv");
        let sample = sample_stopped_sigma_bm(vec![0.8, -0.6, 0.6, 0.8], 20, 1e-3, 3).unwrap();
        write_reference(&path, &sample).unwrap();
        assert_eq!(
            read_reference(&path, ReferenceKind::StoppedSigmaBm).unwrap(),
            sample
        );
    }

    #[test]
    fn path_rows_have_fixed_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let row = PathRow {
            n: 100,
            h: 1e-4,
            method: Method::Naive,
            seed: 7,
            path_index: 0,
            quantity: "exit_time",
            param: None,
            component: None,
            value: 0.0125,
        };
        write_paths(&path, "example1", &[row]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "experiment,n,h,method,seed,path_index,quantity,param,component,value\n\
             example1,100,0.0001,naive,7,0,exit_time,,,0.0125\n"
        );
    }

    #[test]
    fn malformed_reference_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "draw,tau,v0\n0,,abc\n").unwrap();
        assert!(matches!(
            read_reference(&path, ReferenceKind::TwoPoint),
            Err(LabError::Format { .. })
        ));
    }
}
