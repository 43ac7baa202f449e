//! Itô SDEs, observables and explicit Euler–Maruyama stepping.

mod model;
mod observable;

pub mod catalog;

use alloc::vec;
use alloc::vec::Vec;

pub use model::{probe_points, Field, SdeModel, PROBE_POINTS};
pub use observable::{Observable, FD_STEP};

use crate::error::{domain, Error, Result};
use crate::exit::{Ball, Detector, ExitRecord, Method};
use crate::math;
use crate::rng::StreamKey;

/// Default exit-time budget in units of `r²`.
pub const MAX_TIME_FACTOR: f64 = 1e4;

/// A sampled path `t ↦ X_t` on a grid, with the Brownian increments that
/// drove it when they are known.
#[derive(Debug, Clone, PartialEq)]
pub struct PathGrid {
    dim: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    increments: Vec<f64>,
}

impl PathGrid {
    /// `states` holds `times.len()` points of dimension `dim` back to back;
    /// `increments` is either empty or holds one `dim`-vector per interval.
    pub fn new(
        dim: usize,
        times: Vec<f64>,
        states: Vec<f64>,
        increments: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 || times.is_empty() {
            return Err(domain(
                "path needs a positive dimension and at least one point",
            ));
        }
        if times[0] != 0.0 {
            return Err(domain("path times must start at 0"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(domain("path times must be strictly increasing"));
        }
        if states.len() != times.len() * dim {
            return Err(domain("state count does not match time count"));
        }
        if !increments.is_empty() && increments.len() != (times.len() - 1) * dim {
            return Err(domain("increment count does not match interval count"));
        }
        Ok(Self {
            dim,
            times,
            states,
            increments,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.dim)
    }

    pub fn has_increments(&self) -> bool {
        !self.increments.is_empty() || self.len() == 1
    }

    /// Driving increment of interval `[t_i, t_{i+1}]`.
    pub fn increment(&self, i: usize) -> Option<&[f64]> {
        if self.increments.is_empty() {
            None
        } else {
            Some(&self.increments[i * self.dim..(i + 1) * self.dim])
        }
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// The state at the last grid time `≤ t` (càdlàg lookup).
    pub fn lookup(&self, t: f64) -> &[f64] {
        let idx = self.times.partition_point(|&s| s <= t);
        self.state(idx.saturating_sub(1))
    }

    /// The first `len` points (and their increments).
    pub fn truncated(&self, len: usize) -> Self {
        let len = len.min(self.len()).max(1);
        Self {
            dim: self.dim,
            times: self.times[..len].to_vec(),
            states: self.states[..len * self.dim].to_vec(),
            increments: if self.increments.is_empty() {
                Vec::new()
            } else {
                self.increments[..(len - 1) * self.dim].to_vec()
            },
        }
    }

    pub(crate) fn into_parts(self) -> (usize, Vec<f64>, Vec<f64>, Vec<f64>) {
        (self.dim, self.times, self.states, self.increments)
    }
}

/// Reusable buffers for evaluating one model's coefficients.
pub(crate) struct Stepper<'a> {
    model: &'a SdeModel,
    mu: Vec<f64>,
    sig: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(model: &'a SdeModel) -> Self {
        let d = model.dim();
        Self {
            model,
            mu: vec![0.0; d],
            sig: vec![0.0; d * d],
        }
    }

    pub fn sigma(&mut self, y: &[f64]) -> &[f64] {
        self.model.diffusion_into(y, &mut self.sig);
        &self.sig
    }

    #[inline]
    pub fn step(&mut self, y: &[f64], dt: f64, dw: &[f64], out: &mut [f64]) -> Result<()> {
        let d = y.len();
        self.model.drift_into(y, &mut self.mu);
        self.model.diffusion_into(y, &mut self.sig);
        let mut finite = true;
        for k in 0..d {
            let noise = math::dot(&self.sig[k * d..(k + 1) * d], dw);
            out[k] = y[k] + self.mu[k] * dt + noise;
            finite &= out[k].is_finite();
        }
        if finite {
            Ok(())
        } else {
            Err(Error::NonFinite { state: y.to_vec() })
        }
    }
}

/// One explicit Euler–Maruyama step: `state + μ(state) dt + σ(state) dW`.
pub fn euler_step(model: &SdeModel, state: &[f64], dt: f64, dw: &[f64]) -> Result<Vec<f64>> {
    model.check_dim(state)?;
    model.check_dim(dw)?;
    if !(dt >= 0.0) {
        return Err(domain("dt must be non-negative"));
    }
    let mut out = vec![0.0; state.len()];
    Stepper::new(model).step(state, dt, dw, &mut out)?;
    Ok(out)
}

/// Euler–Maruyama on the uniform grid `0, h, 2h, …` covering `[0, horizon]`,
/// driven by `N(0, h)` increments from `key`.
pub fn simulate_on_grid(
    model: &SdeModel,
    horizon: f64,
    h: f64,
    key: StreamKey,
) -> Result<PathGrid> {
    if !(h > 0.0) || !(horizon > 0.0) || !horizon.is_finite() {
        return Err(domain("horizon and step must be positive"));
    }
    if h > horizon {
        return Err(domain("step must not exceed the horizon"));
    }
    let ratio = horizon / h;
    let steps = if (ratio - math::round(ratio)).abs() <= 1e-9 * ratio {
        math::round(ratio)
    } else {
        math::ceil(ratio)
    } as usize;
    let mut increments = vec![0.0; steps * model.dim()];
    key.gaussians().fill(&mut increments, math::sqrt(h));
    integrate_increments(model, h, increments)
}

/// Euler–Maruyama path on the grid `i·h` driven by the given Brownian
/// increments (`d` per step, flat).
pub fn integrate_increments(model: &SdeModel, h: f64, increments: Vec<f64>) -> Result<PathGrid> {
    let d = model.dim();
    if !(h > 0.0) {
        return Err(domain("step must be positive"));
    }
    if increments.len() % d != 0 {
        return Err(domain(
            "increment count must be a multiple of the dimension",
        ));
    }
    let steps = increments.len() / d;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity((steps + 1) * d);
    times.push(0.0);
    states.extend_from_slice(model.initial());
    let mut stepper = Stepper::new(model);
    let mut next = vec![0.0; d];
    for i in 0..steps {
        stepper.step(
            &states[i * d..(i + 1) * d],
            h,
            &increments[i * d..(i + 1) * d],
            &mut next,
        )?;
        states.extend_from_slice(&next);
        times.push((i + 1) as f64 * h);
    }
    PathGrid::new(d, times, states, increments)
}

/// Steps the model from its initial point until `method` detects an exit
/// from `ball`, retaining the path and its increments.
///
/// The model is assumed to have passed [`SdeModel::probe_diffusivity`]; a
/// model that never moves simply runs into `max_time`.
pub fn simulate_until_exit(
    model: &SdeModel,
    ball: &Ball,
    h: f64,
    key: StreamKey,
    max_time: f64,
    method: Method,
) -> Result<ExitRecord> {
    if !(h > 0.0) || !(max_time > 0.0) {
        return Err(domain("step and time budget must be positive"));
    }
    let d = model.dim();
    let mut detector = Detector::new(model, ball, method, key)?;
    if !detector.strictly_inside(model.initial()) {
        return Err(domain("initial point must lie inside the open ball"));
    }
    let mut gauss = key.gaussians();
    let mut stepper = Stepper::new(model);
    let sqrt_h = math::sqrt(h);

    let mut times = vec![0.0];
    let mut states = model.initial().to_vec();
    let mut increments = Vec::new();
    let mut dw = vec![0.0; d];
    let mut next = vec![0.0; d];
    let mut i = 0usize;
    loop {
        let t_a = i as f64 * h;
        let t_b = (i + 1) as f64 * h;
        if t_b > max_time {
            return Err(Error::Timeout {
                radius: ball.radius,
                max_time,
            });
        }
        gauss.fill(&mut dw, sqrt_h);
        let y_a = &states[i * d..(i + 1) * d];
        stepper.step(y_a, h, &dw, &mut next)?;
        let crossing = detector.check(i, t_a, y_a, t_b, &next, Some(&dw))?;
        times.push(t_b);
        states.extend_from_slice(&next);
        increments.extend_from_slice(&dw);
        if let Some(c) = crossing {
            return Ok(ExitRecord {
                exit_time: c.time,
                exit_state: c.state,
                pre_exit_grid: PathGrid::new(d, times, states, increments)?,
                center: ball.center.clone(),
                radius: ball.radius,
                method,
                crossing_interval: i,
            });
        }
        i += 1;
    }
}

/// Exit time budget `MAX_TIME_FACTOR · r²`.
pub fn default_max_time(radius: f64) -> f64 {
    MAX_TIME_FACTOR * radius * radius
}
