//! Orchestration: the worker pool, per-path fan-out, reference samples and
//! the files of a run.
//!
//! Path `i` at scaling index `n` draws from `StreamKey::new(derive_seed(master, n), i)`.
//! Workers may finish in any order; results are collected by path index, so
//! outputs do not depend on the number of workers.

use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use exitlab_core::reference::{
    exact_two_point, stopped_sigma_bm_draw, stopped_sigma_bm_model, ReferenceKind, ReferenceSample,
};
use exitlab_core::rng::derive_seed;
use exitlab_core::sde::{catalog, simulate_until_exit};
use exitlab_core::{Ball, ExitRecord, Observable, Provenance, SdeModel, StreamKey, TestReport};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::LabError;
use crate::experiments;
use crate::output::{
    self, OutputFile, PathRow, RunManifest, MANIFEST_FILE, PATHS_FILE, REPORT_FILE,
};

/// Stream labels for samples that do not belong to a scaling index.
const LIMIT_LABEL: u64 = u64::MAX;
const EXIT_REFERENCE_LABEL: u64 = u64::MAX - 1;
pub(crate) const CONTROL_LABEL: u64 = u64::MAX - 2;

pub struct Context<'a> {
    pub config: &'a ExperimentConfig,
    pub model: SdeModel,
    pub observable: Observable,
    pool: rayon::ThreadPool,
    stopped: OnceLock<ReferenceSample>,
    signs: OnceLock<ReferenceSample>,
    persisted: Mutex<Vec<(String, ReferenceSample)>>,
}

/// What an experiment hands back for writing.
#[derive(Debug, Default)]
pub struct ExperimentOutput {
    pub rows: Vec<PathRow>,
    pub reports: Vec<TestReport>,
}

impl<'a> Context<'a> {
    pub fn new(config: &'a ExperimentConfig, workers: usize) -> Result<Self, LabError> {
        let model = catalog::model(&config.model, config.theta)?;
        let observable = catalog::observable(&config.observable, model.dim())?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| LabError::Pool(e.to_string()))?;
        Ok(Self {
            config,
            model,
            observable,
            pool,
            stopped: OnceLock::new(),
            signs: OnceLock::new(),
            persisted: Mutex::new(Vec::new()),
        })
    }

    pub fn seed(&self, n: u64) -> u64 {
        derive_seed(self.config.master_seed, n)
    }

    pub fn step(&self, n: u64) -> f64 {
        self.config.step(n)
    }

    pub fn provenance(&self, n: u64) -> Provenance {
        Provenance {
            n,
            h: self.step(n),
            method: self.config.method,
            seed: self.seed(n),
        }
    }

    pub fn row(
        &self,
        n: u64,
        path_index: u64,
        quantity: &'static str,
        param: Option<f64>,
        component: Option<usize>,
        value: f64,
    ) -> PathRow {
        PathRow {
            n,
            h: self.step(n),
            method: self.config.method,
            seed: self.seed(n),
            path_index,
            quantity,
            param,
            component,
            value,
        }
    }

    /// Runs `f` for `count` indices on the pool and returns the results in
    /// index order. The reported error is the one with the smallest index.
    pub fn par_map<T, F>(&self, n: u64, count: usize, f: F) -> Result<Vec<T>, LabError>
    where
        T: Send,
        F: Fn(u64) -> exitlab_core::Result<T> + Sync + Send,
    {
        let results: Vec<exitlab_core::Result<T>> = self
            .pool
            .install(|| (0..count as u64).into_par_iter().map(&f).collect());
        results
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                r.map_err(|source| LabError::Path {
                    n,
                    path_index: i as u64,
                    source,
                })
            })
            .collect()
    }

    /// Simulates every path at scaling index `n` until it leaves the shrinking
    /// ball, then applies `f` to the path index, its key and its exit record.
    pub fn par_exits<T, F>(&self, n: u64, f: F) -> Result<Vec<T>, LabError>
    where
        T: Send,
        F: Fn(u64, StreamKey, &ExitRecord) -> exitlab_core::Result<T> + Sync + Send,
    {
        let ball = Ball::shrinking(&self.model, n)?;
        let h = self.step(n);
        let max_time = self.config.max_time_factor * ball.radius * ball.radius;
        let seed = self.seed(n);
        let method = self.config.method;
        self.par_map(n, self.config.paths, |i| {
            let key = StreamKey::new(seed, i);
            let rec = simulate_until_exit(&self.model, &ball, h, key, max_time, method)?;
            f(i, key, &rec)
        })
    }

    /// `(τ, ΣW_τ)` draws for `Σ = σ(x)` on the unit ball.
    pub fn stopped_reference(&self) -> Result<&ReferenceSample, LabError> {
        if let Some(s) = self.stopped.get() {
            return Ok(s);
        }
        let sigma = self.model.diffusion(self.model.initial())?;
        let seed = derive_seed(self.config.master_seed, EXIT_REFERENCE_LABEL);
        let h = self.config.reference_h;
        let count = self.config.reference_draws;
        let name = format!(
            "reference_stopped_sigma_bm_s{:016x}_h{h}_draws{count}_seed{seed}.csv",
            fingerprint(&sigma)
        );
        let sample = match self.cached(&name, ReferenceKind::StoppedSigmaBm)? {
            Some(s) => s,
            None => {
                let model = stopped_sigma_bm_model(sigma)?;
                let draws = self.par_map(1, count, |i| {
                    stopped_sigma_bm_draw(&model, h, StreamKey::new(seed, i))
                })?;
                ReferenceSample::new(ReferenceKind::StoppedSigmaBm, model.dim(), draws)?
            }
        };
        self.persist(name, &sample);
        Ok(self.stopped.get_or_init(|| sample))
    }

    /// Fair signs, the exit position law of any one-dimensional `σ(x)W`.
    pub fn sign_reference(&self) -> Result<&ReferenceSample, LabError> {
        if let Some(s) = self.signs.get() {
            return Ok(s);
        }
        let seed = derive_seed(self.config.master_seed, LIMIT_LABEL);
        let count = self.config.reference_draws;
        let name = format!("reference_two_point_draws{count}_seed{seed}.csv");
        let sample = match self.cached(&name, ReferenceKind::TwoPoint)? {
            Some(s) => s,
            None => exact_two_point(count, StreamKey::new(seed, 0)),
        };
        self.persist(name, &sample);
        Ok(self.signs.get_or_init(|| sample))
    }

    /// Draws of the limit value `J_f(x) σ(x) W` at the exit of `σ(x)W` from
    /// the unit ball.
    pub fn limit_values(&self) -> Result<Vec<Vec<f64>>, LabError> {
        let positions = if self.model.dim() == 1 {
            self.sign_reference()?
        } else {
            self.stopped_reference()?
        };
        let jac = self.observable.jacobian(self.model.initial())?;
        let d = self.model.dim();
        let l = self.observable.output_dim();
        Ok(positions
            .draws
            .iter()
            .map(|draw| {
                (0..l)
                    .map(|k| (0..d).map(|j| jac[k * d + j] * draw.value[j]).sum())
                    .collect()
            })
            .collect())
    }

    fn cached(&self, name: &str, kind: ReferenceKind) -> Result<Option<ReferenceSample>, LabError> {
        match &self.config.reference_dir {
            Some(dir) if dir.join(name).is_file() => {
                Ok(Some(output::read_reference(&dir.join(name), kind)?))
            }
            _ => Ok(None),
        }
    }

    fn persist(&self, name: String, sample: &ReferenceSample) {
        let mut list = self.persisted.lock().expect("reference list lock");
        if !list.iter().any(|(n, _)| *n == name) {
            list.push((name, sample.clone()));
        }
    }
}

/// FNV-1a over the bit patterns, naming reference files by their matrix.
fn fingerprint(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub manifest_path: PathBuf,
    pub reports: Vec<TestReport>,
}

impl RunOutcome {
    /// Whether every gating report passed.
    pub fn passed(&self) -> bool {
        self.manifest.all_gating_passed
    }
}

/// Runs the configured experiment and writes `paths.csv`, `report.json`, the
/// reference samples and `manifest.json` into the output directory.
pub fn run(config: &ExperimentConfig, workers: Option<usize>) -> Result<RunOutcome, LabError> {
    config.validate()?;
    let started = Instant::now();
    let workers = workers.unwrap_or_else(default_workers).max(1);
    let ctx = Context::new(config, workers)?;
    let out = experiments::run_experiment(&ctx)?;

    let dir = config.out_dir.as_path();
    std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let mut outputs = Vec::new();
    output::write_paths(&dir.join(PATHS_FILE), config.experiment.as_str(), &out.rows)?;
    outputs.push(OutputFile {
        kind: "paths".into(),
        path: PATHS_FILE.into(),
    });
    output::write_reports(&dir.join(REPORT_FILE), &out.reports)?;
    outputs.push(OutputFile {
        kind: "report".into(),
        path: REPORT_FILE.into(),
    });
    let references = ctx.persisted.into_inner().expect("reference list lock");
    for (name, sample) in &references {
        output::write_reference(&dir.join(name), sample)?;
        outputs.push(OutputFile {
            kind: format!("reference_{}", sample.kind.as_str()),
            path: name.into(),
        });
    }
    let manifest = RunManifest {
        config: config.clone(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        master_seed: config.master_seed,
        workers,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        all_gating_passed: out.reports.iter().filter(|r| r.gating).all(|r| r.pass),
        outputs,
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    output::write_manifest(&manifest_path, &manifest)?;
    Ok(RunOutcome {
        manifest,
        manifest_path,
        reports: out.reports,
    })
}

/// Resolves an output entry of a manifest stored at `manifest_path`.
pub fn resolve(manifest_path: &Path, file: &OutputFile) -> PathBuf {
    manifest_path
        .parent()
        .unwrap_or(Path::new("."))
        .join(&file.path)
}
