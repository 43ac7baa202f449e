//! Tidy long-format CSVs for external plotting, read back from a finished
//! run. Every file has the columns `series,n,h,param,statistic,value`, one row
//! per `(series, n, param, statistic)`.

use std::path::{Path, PathBuf};

use exitlab_core::stats::MetaValue;
use exitlab_core::TestReport;

use crate::error::LabError;
use crate::output::{read_manifest, read_reports};
use crate::runner::resolve;

pub const KS_FILE: &str = "ks_vs_n.csv";
pub const EXCEEDANCE_FILE: &str = "exceedance_vs_n.csv";
pub const BIAS_FILE: &str = "bias_vs_h.csv";

pub const PLOT_HEADER: [&str; 6] = ["series", "n", "h", "param", "statistic", "value"];

const KS_TESTS: [&str; 5] = [
    "exit_value_ks",
    "fdd_ks",
    "exit_time_ks",
    "ks_norm_vs_one",
    "martingale_limit_ks",
];
const EXCEEDANCE_TESTS: [&str; 3] = [
    "tightness_diagnostic",
    "control_exceedance",
    "remainder_exceedance",
];

struct PlotRow {
    series: String,
    n: u64,
    h: f64,
    param: Option<f64>,
    statistic: &'static str,
    value: f64,
}

fn number(r: &TestReport, key: &str) -> Option<f64> {
    match r.metadata.get(key) {
        Some(MetaValue::Number(v)) => Some(*v),
        _ => None,
    }
}

fn series(r: &TestReport) -> String {
    match r.metadata.get("projection") {
        Some(MetaValue::Text(p)) => format!("{}[{p}]", r.test_name),
        _ => r.test_name.clone(),
    }
}

fn ks_rows(reports: &[TestReport]) -> Vec<PlotRow> {
    let mut rows = Vec::new();
    for r in reports
        .iter()
        .filter(|r| KS_TESTS.contains(&r.test_name.as_str()))
    {
        let base = |statistic, value| PlotRow {
            series: series(r),
            n: r.provenance.n,
            h: r.provenance.h,
            param: number(r, "t"),
            statistic,
            value,
        };
        rows.push(base("ks_distance", r.statistic));
        if let Some(p) = r.p_value {
            rows.push(base("p_value", p));
        }
        if let Some(l) = number(r, "levy_distance") {
            rows.push(base("levy_distance", l));
        }
    }
    rows
}

fn exceedance_rows(reports: &[TestReport]) -> Vec<PlotRow> {
    reports
        .iter()
        .filter(|r| EXCEEDANCE_TESTS.contains(&r.test_name.as_str()))
        .map(|r| PlotRow {
            series: r.test_name.clone(),
            n: r.provenance.n,
            h: r.provenance.h,
            param: number(r, "delta").or_else(|| number(r, "horizon")),
            statistic: "exceedance_fraction",
            value: r.statistic,
        })
        .collect()
}

fn bias_rows(reports: &[TestReport]) -> Vec<PlotRow> {
    let mut rows = Vec::new();
    for r in reports.iter().filter(|r| r.test_name == "exit_time_bias") {
        let step = number(r, "step");
        let row = |statistic, value| PlotRow {
            series: "exit_time_bias".to_string(),
            n: r.provenance.n,
            h: r.provenance.h,
            param: step,
            statistic,
            value,
        };
        rows.push(row("naive_bias", r.statistic));
        if let Some(c) = number(r, "corrected_bias") {
            rows.push(row("corrected_bias", c));
        }
    }
    rows
}

fn write(path: &Path, rows: &[PlotRow]) -> Result<(), LabError> {
    let err = |e: csv::Error| LabError::format(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(PLOT_HEADER).map_err(err)?;
    for r in rows {
        w.write_record([
            r.series.clone(),
            r.n.to_string(),
            r.h.to_string(),
            r.param.map(|p| p.to_string()).unwrap_or_default(),
            r.statistic.to_string(),
            r.value.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

/// Writes the three curve files into `out_dir` and returns their paths. A
/// run without matching reports yields header-only files.
pub fn emit_plot_data(manifest_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, LabError> {
    let manifest = read_manifest(manifest_path)?;
    let reports = match manifest.output("report") {
        Some(f) => read_reports(&resolve(manifest_path, f))?,
        None => Vec::new(),
    };
    std::fs::create_dir_all(out_dir).map_err(|e| LabError::io(out_dir, e))?;
    let mut written = Vec::new();
    for (name, rows) in [
        (KS_FILE, ks_rows(&reports)),
        (EXCEEDANCE_FILE, exceedance_rows(&reports)),
        (BIAS_FILE, bias_rows(&reports)),
    ] {
        let path = out_dir.join(name);
        write(&path, &rows)?;
        written.push(path);
    }
    Ok(written)
}
