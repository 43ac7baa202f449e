//! Flat TOML experiment configuration.
//!
//! ```toml
//! experiment = "example1"
//! model = "bm1"
//! observable = "exp_minus_one"
//! n_grid = [100, 10000]
//! paths = 100000
//! method = "bridge_corrected"
//! master_seed = 20261016
//! ```
//!
//! Every other key has a default; unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use exitlab_core::sde::catalog;
use exitlab_core::Method;
use serde::{Deserialize, Serialize};

use crate::error::LabError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Example1,
    FddGrid,
    ExitTimeLaw,
    SphereUniformity,
    NonTightness,
    RemainderUcp,
    BiasStudy,
    MartingaleHorizon,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::Example1,
        ExperimentKind::FddGrid,
        ExperimentKind::ExitTimeLaw,
        ExperimentKind::SphereUniformity,
        ExperimentKind::NonTightness,
        ExperimentKind::RemainderUcp,
        ExperimentKind::BiasStudy,
        ExperimentKind::MartingaleHorizon,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Example1 => "example1",
            ExperimentKind::FddGrid => "fdd_grid",
            ExperimentKind::ExitTimeLaw => "exit_time_law",
            ExperimentKind::SphereUniformity => "sphere_uniformity",
            ExperimentKind::NonTightness => "non_tightness",
            ExperimentKind::RemainderUcp => "remainder_ucp",
            ExperimentKind::BiasStudy => "bias_study",
            ExperimentKind::MartingaleHorizon => "martingale_horizon",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub model: String,
    pub observable: String,
    /// Rotation angle for `rotated_bm2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    pub n_grid: Vec<u64>,
    pub paths: usize,
    /// Step policy `h = h0 · n⁻¹`.
    #[serde(default = "defaults::h0")]
    pub h0: f64,
    pub method: Method,
    #[serde(default = "defaults::times")]
    pub times: Vec<f64>,
    #[serde(default)]
    pub allow_zero: bool,
    #[serde(default = "defaults::delta")]
    pub delta: f64,
    #[serde(default = "defaults::epsilon")]
    pub epsilon: f64,
    #[serde(default = "defaults::horizons")]
    pub horizons: Vec<f64>,
    pub master_seed: u64,
    #[serde(default = "defaults::out_dir")]
    pub out_dir: PathBuf,
    /// Directory searched for previously written reference samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_dir: Option<PathBuf>,
    #[serde(default = "defaults::reference_h")]
    pub reference_h: f64,
    #[serde(default = "defaults::reference_draws")]
    pub reference_draws: usize,
    /// Exit time budget in units of `n⁻¹`.
    #[serde(default = "defaults::max_time_factor")]
    pub max_time_factor: f64,
    #[serde(default = "defaults::bins")]
    pub bins: usize,
    #[serde(default = "defaults::bias_steps")]
    pub bias_steps: Vec<f64>,
    #[serde(default = "defaults::control_delta")]
    pub control_delta: f64,
    #[serde(default = "defaults::p_threshold")]
    pub p_threshold: f64,
    #[serde(default = "defaults::exceedance_threshold")]
    pub exceedance_threshold: f64,
    #[serde(default = "defaults::control_threshold")]
    pub control_threshold: f64,
    #[serde(default = "defaults::remainder_level")]
    pub remainder_level: f64,
    #[serde(default = "defaults::remainder_threshold")]
    pub remainder_threshold: f64,
    #[serde(default = "defaults::sign_tolerance")]
    pub sign_tolerance: f64,
    #[serde(default = "defaults::magnitude_tolerance")]
    pub magnitude_tolerance: f64,
    #[serde(default = "defaults::fdd_ks_max")]
    pub fdd_ks_max: f64,
    #[serde(default = "defaults::norm_tolerance")]
    pub norm_tolerance: f64,
    /// Relative tolerance on the mean exit time.
    #[serde(default = "defaults::mean_tolerance")]
    pub mean_tolerance: f64,
    #[serde(default = "defaults::slope_target")]
    pub slope_target: f64,
    #[serde(default = "defaults::slope_tolerance")]
    pub slope_tolerance: f64,
}

mod defaults {
    use std::path::PathBuf;

    pub fn h0() -> f64 {
        1e-2
    }
    pub fn times() -> Vec<f64> {
        vec![0.25, 0.5, 1.0]
    }
    pub fn delta() -> f64 {
        1e-2
    }
    pub fn epsilon() -> f64 {
        0.5
    }
    pub fn horizons() -> Vec<f64> {
        vec![0.5, 1.0, 2.0, 4.0]
    }
    pub fn out_dir() -> PathBuf {
        PathBuf::from("out")
    }
    pub fn reference_h() -> f64 {
        1e-5
    }
    pub fn reference_draws() -> usize {
        10_000
    }
    pub fn max_time_factor() -> f64 {
        exitlab_core::sde::MAX_TIME_FACTOR
    }
    pub fn bins() -> usize {
        8
    }
    pub fn bias_steps() -> Vec<f64> {
        vec![4e-3, 1e-3, 2.5e-4]
    }
    pub fn control_delta() -> f64 {
        1e-4
    }
    pub fn p_threshold() -> f64 {
        0.01
    }
    pub fn exceedance_threshold() -> f64 {
        0.95
    }
    pub fn control_threshold() -> f64 {
        0.01
    }
    pub fn remainder_level() -> f64 {
        0.1
    }
    pub fn remainder_threshold() -> f64 {
        0.05
    }
    pub fn sign_tolerance() -> f64 {
        0.015
    }
    pub fn magnitude_tolerance() -> f64 {
        0.02
    }
    pub fn fdd_ks_max() -> f64 {
        0.02
    }
    pub fn norm_tolerance() -> f64 {
        0.02
    }
    pub fn mean_tolerance() -> f64 {
        0.02
    }
    pub fn slope_target() -> f64 {
        0.5
    }
    pub fn slope_tolerance() -> f64 {
        0.15
    }
}

fn invalid(field: &str, message: impl Into<String>) -> LabError {
    LabError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

fn positive_finite(field: &str, v: f64) -> Result<(), LabError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(
            field,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

fn probability(field: &str, v: f64) -> Result<(), LabError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(field, format!("must lie in [0, 1], got {v}")))
    }
}

fn ascending(field: &str, v: &[f64]) -> Result<(), LabError> {
    if v.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid(field, "must be strictly increasing"));
    }
    Ok(())
}

impl ExperimentConfig {
    /// A configuration with every optional key at its default.
    pub fn new(
        experiment: ExperimentKind,
        model: &str,
        observable: &str,
        n_grid: Vec<u64>,
        paths: usize,
        method: Method,
        master_seed: u64,
    ) -> Self {
        Self {
            experiment,
            model: model.to_string(),
            observable: observable.to_string(),
            theta: None,
            n_grid,
            paths,
            h0: defaults::h0(),
            method,
            times: defaults::times(),
            allow_zero: false,
            delta: defaults::delta(),
            epsilon: defaults::epsilon(),
            horizons: defaults::horizons(),
            master_seed,
            out_dir: defaults::out_dir(),
            reference_dir: None,
            reference_h: defaults::reference_h(),
            reference_draws: defaults::reference_draws(),
            max_time_factor: defaults::max_time_factor(),
            bins: defaults::bins(),
            bias_steps: defaults::bias_steps(),
            control_delta: defaults::control_delta(),
            p_threshold: defaults::p_threshold(),
            exceedance_threshold: defaults::exceedance_threshold(),
            control_threshold: defaults::control_threshold(),
            remainder_level: defaults::remainder_level(),
            remainder_threshold: defaults::remainder_threshold(),
            sign_tolerance: defaults::sign_tolerance(),
            magnitude_tolerance: defaults::magnitude_tolerance(),
            fdd_ks_max: defaults::fdd_ks_max(),
            norm_tolerance: defaults::norm_tolerance(),
            mean_tolerance: defaults::mean_tolerance(),
            slope_target: defaults::slope_target(),
            slope_tolerance: defaults::slope_tolerance(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, LabError> {
        let config: Self = toml::from_str(text).map_err(|e| LabError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), LabError> {
        let model =
            catalog::model(&self.model, self.theta).map_err(|e| invalid("model", e.to_string()))?;
        let d = model.dim();
        catalog::observable(&self.observable, d)
            .map_err(|e| invalid("observable", e.to_string()))?;
        if let Some(theta) = self.theta {
            if !theta.is_finite() {
                return Err(invalid("theta", "must be finite"));
            }
        }
        if self.n_grid.is_empty() {
            return Err(invalid("n_grid", "must not be empty"));
        }
        if self.n_grid.contains(&0) {
            return Err(invalid("n_grid", "entries must be positive"));
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid(
                "n_grid",
                "must be sorted ascending without repeats",
            ));
        }
        if self.paths == 0 {
            return Err(invalid("paths", "must be positive"));
        }
        positive_finite("h0", self.h0)?;
        self.method
            .check_dimension(d)
            .map_err(|e| invalid("method", e.to_string()))?;
        if self.allow_zero && self.experiment != ExperimentKind::NonTightness {
            return Err(invalid(
                "allow_zero",
                "only the non_tightness experiment may sample t = 0",
            ));
        }
        if self.times.is_empty() {
            return Err(invalid("times", "must not be empty"));
        }
        for &t in &self.times {
            let ok = t.is_finite() && (t > 0.0 || (self.allow_zero && t == 0.0));
            if !ok {
                return Err(invalid(
                    "times",
                    format!("{t} is not allowed (t = 0 needs allow_zero)"),
                ));
            }
        }
        ascending("times", &self.times)?;
        positive_finite("delta", self.delta)?;
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(invalid("epsilon", "must lie in (0, 1)"));
        }
        if self.horizons.is_empty() {
            return Err(invalid("horizons", "must not be empty"));
        }
        for &a in &self.horizons {
            positive_finite("horizons", a)?;
        }
        ascending("horizons", &self.horizons)?;
        positive_finite("reference_h", self.reference_h)?;
        if self.reference_draws == 0 {
            return Err(invalid("reference_draws", "must be positive"));
        }
        positive_finite("max_time_factor", self.max_time_factor)?;
        if self.bins < 2 {
            return Err(invalid("bins", "need at least two bins"));
        }
        positive_finite("control_delta", self.control_delta)?;
        for (field, v) in [
            ("p_threshold", self.p_threshold),
            ("exceedance_threshold", self.exceedance_threshold),
            ("control_threshold", self.control_threshold),
            ("remainder_threshold", self.remainder_threshold),
        ] {
            probability(field, v)?;
        }
        for (field, v) in [
            ("remainder_level", self.remainder_level),
            ("sign_tolerance", self.sign_tolerance),
            ("magnitude_tolerance", self.magnitude_tolerance),
            ("fdd_ks_max", self.fdd_ks_max),
            ("norm_tolerance", self.norm_tolerance),
            ("mean_tolerance", self.mean_tolerance),
            ("slope_tolerance", self.slope_tolerance),
        ] {
            positive_finite(field, v)?;
        }
        if !self.slope_target.is_finite() {
            return Err(invalid("slope_target", "must be finite"));
        }
        match self.experiment {
            ExperimentKind::SphereUniformity => {
                if d != 2 {
                    return Err(invalid("model", "sphere_uniformity needs a planar model"));
                }
                if self.paths < 5 * self.bins {
                    return Err(invalid("paths", "need at least five paths per angular bin"));
                }
            }
            ExperimentKind::BiasStudy => self.validate_bias_steps()?,
            _ => {}
        }
        Ok(())
    }

    fn validate_bias_steps(&self) -> Result<(), LabError> {
        if self.method == Method::Naive {
            return Err(invalid(
                "method",
                "bias_study compares naive detection with a corrected method",
            ));
        }
        if self.bias_steps.len() < 2 {
            return Err(invalid("bias_steps", "need at least two steps"));
        }
        for &h in &self.bias_steps {
            positive_finite("bias_steps", h)?;
        }
        if self.bias_steps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(invalid("bias_steps", "must be strictly decreasing"));
        }
        let finest = *self.bias_steps.last().expect("non-empty");
        for &h in &self.bias_steps {
            let ratio = h / finest;
            if (ratio - ratio.round()).abs() > 1e-9 * ratio {
                return Err(invalid(
                    "bias_steps",
                    format!("{h} is not a multiple of the finest step {finest}"),
                ));
            }
        }
        Ok(())
    }

    /// Step used at scaling index `n`.
    pub fn step(&self, n: u64) -> f64 {
        self.h0 / n as f64
    }
}
