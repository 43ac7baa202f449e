//! First exit of a discretized path from a ball.
//!
//! Grid-only ("naive") detection misses excursions that leave the ball and
//! come back between two grid points, which biases exit times upwards by
//! `O(√h)`. Two corrections are offered:
//!
//! - [`Method::BridgeCorrected`] (one dimension only): on each interval whose
//!   endpoints are both inside, a coin with the Brownian-bridge crossing
//!   probability decides whether a latent crossing happened. Latent and grid
//!   crossings are placed at the interval midpoint.
//! - [`Method::Substepped`] (any dimension): intervals that start within
//!   `3 σ_max √h` of the sphere, or end outside it, are re-integrated with
//!   [`SUBSTEPS`] Euler steps whose Brownian increments are drawn from the
//!   bridge conditioned on the coarse increment; the exit point is the linear
//!   interpolation to the sphere on the fine grid.
//!
//! All methods report an exit state projected onto the sphere.
//!
//! Coordinates are normalized as `u = (y − c) / r` before any comparison, so a
//! path and its rescaling `√n (y − c)` are classified identically.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};
use crate::math;
use crate::rng::{GaussianStream, StreamKey, UniformStream};
use crate::sde::{PathGrid, SdeModel, Stepper};

/// Number of fine steps per coarse interval in substepped refinement.
pub const SUBSTEPS: usize = 100;
/// Refinement is triggered within this many coarse-step standard deviations
/// of the sphere.
pub const REFINE_BAND: f64 = 3.0;

/// Substream of a path key reserved for bridge-crossing coins.
pub const COIN_SUBSTREAM: u64 = 1;
/// Interval `i` of a path is refined with substream `REFINE_SUBSTREAM_BASE + i`.
pub const REFINE_SUBSTREAM_BASE: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Naive,
    BridgeCorrected,
    Substepped,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::BridgeCorrected => "bridge_corrected",
            Method::Substepped => "substepped",
        }
    }

    /// Rejects combinations the method cannot handle exactly.
    pub fn check_dimension(&self, d: usize) -> Result<()> {
        if *self == Method::BridgeCorrected && d != 1 {
            return Err(config(alloc::format!(
                "bridge_corrected detection is only exact in one dimension (got d = {d}); use substepped"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Method::Naive),
            "bridge_corrected" => Ok(Method::BridgeCorrected),
            "substepped" => Ok(Method::Substepped),
            other => Err(config(alloc::format!("unknown detection method {other:?}"))),
        }
    }
}

/// Closed ball `{y : ‖y − center‖ ≤ radius}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(domain("radius must be positive and finite"));
        }
        if center.is_empty() {
            return Err(domain("ball center must have positive dimension"));
        }
        Ok(Self { center, radius })
    }

    /// The ball of radius `n^{-1/2}` around the model's initial point.
    pub fn shrinking(model: &SdeModel, n: u64) -> Result<Self> {
        if n == 0 {
            return Err(domain("scaling index must be positive"));
        }
        Self::new(model.initial().to_vec(), radius_for(n))
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Squared normalized distance `‖(y − c)/r‖²`, with `u` receiving the
    /// normalized vector.
    #[inline]
    fn normalize(&self, inv_r: f64, y: &[f64], u: &mut [f64]) -> f64 {
        let mut s = 0.0;
        for ((u, y), c) in u.iter_mut().zip(y).zip(&self.center) {
            *u = (y - c) * inv_r;
            s += *u * *u;
        }
        s
    }

    fn project(&self, u: &[f64]) -> Vec<f64> {
        let norm = math::norm(u);
        self.center
            .iter()
            .zip(u)
            .map(|(c, u)| c + self.radius * (u / norm))
            .collect()
    }
}

/// The shrinking radius `n^{-1/2}`.
pub fn radius_for(n: u64) -> f64 {
    1.0 / math::sqrt(n as f64)
}

/// One path's first exit.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitRecord {
    pub exit_time: f64,
    pub exit_state: Vec<f64>,
    /// The path up to and including the right end of the crossing interval.
    pub pre_exit_grid: PathGrid,
    pub center: Vec<f64>,
    pub radius: f64,
    pub method: Method,
    /// Index `i` of the grid interval `[t_i, t_{i+1}]` containing the exit.
    pub crossing_interval: usize,
}

/// Probability that a Brownian bridge with volatility `diffusion_scale` from
/// `a` to `b` over time `dt` touches `level` (both endpoints at or below it):
/// `exp(−2 (level − a)(level − b) / (diffusion_scale² dt))`.
pub fn bridge_crossing_probability(
    a: f64,
    b: f64,
    level: f64,
    dt: f64,
    diffusion_scale: f64,
) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(domain("dt must be positive"));
    }
    if !(diffusion_scale > 0.0) {
        return Err(domain("diffusion scale must be positive"));
    }
    if a > level || b > level {
        return Err(domain("bridge endpoints must lie at or below the level"));
    }
    Ok(bridge_probability(
        a,
        b,
        level,
        dt * diffusion_scale * diffusion_scale,
    ))
}

#[inline]
fn bridge_probability(a: f64, b: f64, level: f64, variance: f64) -> f64 {
    math::exp(-2.0 * (level - a) * (level - b) / variance).min(1.0)
}

pub(crate) struct Crossing {
    pub time: f64,
    pub state: Vec<f64>,
}

/// Interval-by-interval exit detector shared by [`detect_exit`] and the
/// on-the-fly simulation in [`crate::sde::simulate_until_exit`].
pub(crate) struct Detector<'a> {
    ball: &'a Ball,
    inv_r: f64,
    method: Method,
    key: StreamKey,
    stepper: Stepper<'a>,
    coins: Option<UniformStream>,
    u_a: Vec<f64>,
    u_b: Vec<f64>,
    fine: Vec<f64>,
    z: Vec<f64>,
    z_next: Vec<f64>,
}

impl<'a> Detector<'a> {
    pub fn new(
        model: &'a SdeModel,
        ball: &'a Ball,
        method: Method,
        key: StreamKey,
    ) -> Result<Self> {
        let d = model.dim();
        if ball.dim() != d {
            return Err(domain("ball and model dimensions differ"));
        }
        method.check_dimension(d)?;
        let coins = (method == Method::BridgeCorrected)
            .then(|| key.with_substream(COIN_SUBSTREAM).uniforms());
        Ok(Self {
            ball,
            inv_r: 1.0 / ball.radius,
            method,
            key,
            stepper: Stepper::new(model),
            coins,
            u_a: vec![0.0; d],
            u_b: vec![0.0; d],
            fine: vec![0.0; SUBSTEPS * d],
            z: vec![0.0; d],
            z_next: vec![0.0; d],
        })
    }

    pub fn strictly_inside(&mut self, y: &[f64]) -> bool {
        self.ball.normalize(self.inv_r, y, &mut self.u_a) < 1.0
    }

    /// Examines interval `index` from `(t_a, y_a)` to `(t_b, y_b)`, driven by
    /// the coarse increment `dw` when known. `y_a` must be strictly inside.
    pub fn check(
        &mut self,
        index: usize,
        t_a: f64,
        y_a: &[f64],
        t_b: f64,
        y_b: &[f64],
        dw: Option<&[f64]>,
    ) -> Result<Option<Crossing>> {
        let rho_a2 = self.ball.normalize(self.inv_r, y_a, &mut self.u_a);
        let rho_b2 = self.ball.normalize(self.inv_r, y_b, &mut self.u_b);
        let outside = rho_b2 >= 1.0;
        match self.method {
            Method::Naive => Ok(outside.then(|| Crossing {
                time: t_b,
                state: self.ball.project(&self.u_b),
            })),
            Method::BridgeCorrected => {
                let coin = self
                    .coins
                    .as_mut()
                    .expect("coin stream exists for bridge detection")
                    .next_open01();
                let midpoint = 0.5 * (t_a + t_b);
                if outside {
                    return Ok(Some(Crossing {
                        time: midpoint,
                        state: self.ball.project(&self.u_b),
                    }));
                }
                let scale = self.stepper.sigma(y_a)[0].abs() * self.inv_r;
                if scale == 0.0 {
                    return Ok(None);
                }
                let var = scale * scale * (t_b - t_a);
                let (a, b) = (self.u_a[0], self.u_b[0]);
                let p_up = bridge_probability(a, b, 1.0, var);
                let p_down = bridge_probability(-a, -b, 1.0, var);
                let sign = if coin < p_up {
                    1.0
                } else if coin < p_up + p_down {
                    -1.0
                } else {
                    return Ok(None);
                };
                Ok(Some(Crossing {
                    time: midpoint,
                    state: vec![self.ball.center[0] + sign * self.ball.radius],
                }))
            }
            Method::Substepped => {
                let dt = t_b - t_a;
                let sigma_max = SdeModel::max_row_norm(self.stepper.sigma(y_a), y_a.len());
                let band = REFINE_BAND * sigma_max * math::sqrt(dt) * self.inv_r;
                let near = math::sqrt(rho_a2) > 1.0 - band;
                if !outside && !near {
                    return Ok(None);
                }
                let dw = dw.ok_or_else(|| {
                    config("substepped detection needs the path's driving increments")
                })?;
                if let Some(c) = self.refine(index, t_a, y_a, dt, dw)? {
                    return Ok(Some(c));
                }
                Ok(outside.then(|| Crossing {
                    time: t_b,
                    state: self.ball.project(&self.u_b),
                }))
            }
        }
    }

    /// Re-integrates one coarse interval on a fine grid whose Brownian
    /// increments sum to `dw`, returning the first fine crossing.
    fn refine(
        &mut self,
        index: usize,
        t_a: f64,
        y_a: &[f64],
        dt: f64,
        dw: &[f64],
    ) -> Result<Option<Crossing>> {
        let d = y_a.len();
        let fine_dt = dt / SUBSTEPS as f64;
        let mut gauss = GaussianStream::new(
            self.key
                .with_substream(REFINE_SUBSTREAM_BASE + index as u64),
        );
        gauss.fill(&mut self.fine, math::sqrt(fine_dt));
        for (k, w) in dw.iter().enumerate() {
            let total: f64 = (0..SUBSTEPS).map(|j| self.fine[j * d + k]).sum();
            let shift = (w - total) / SUBSTEPS as f64;
            for j in 0..SUBSTEPS {
                self.fine[j * d + k] += shift;
            }
        }
        self.z.copy_from_slice(y_a);
        let mut p = vec![0.0; d];
        let mut q = vec![0.0; d];
        for j in 0..SUBSTEPS {
            self.stepper.step(
                &self.z,
                fine_dt,
                &self.fine[j * d..(j + 1) * d],
                &mut self.z_next,
            )?;
            let rho2 = self.ball.normalize(self.inv_r, &self.z_next, &mut q);
            if rho2 >= 1.0 {
                self.ball.normalize(self.inv_r, &self.z, &mut p);
                for k in 0..d {
                    q[k] -= p[k];
                }
                // ‖p + λq‖ = 1 with ‖p‖ < 1 ≤ ‖p + q‖ has one root in (0, 1].
                let qq = math::norm_sq(&q);
                let pq = math::dot(&p, &q);
                let pp = math::norm_sq(&p);
                let lambda = if qq > 0.0 {
                    ((-pq + math::sqrt((pq * pq + qq * (1.0 - pp)).max(0.0))) / qq).clamp(0.0, 1.0)
                } else {
                    1.0
                };
                for k in 0..d {
                    p[k] += lambda * q[k];
                }
                return Ok(Some(Crossing {
                    time: t_a + (j as f64 + lambda) * fine_dt,
                    state: self.ball.project(&p),
                }));
            }
            core::mem::swap(&mut self.z, &mut self.z_next);
        }
        Ok(None)
    }
}

/// Finds the first exit of `path` from `ball`.
///
/// Returns `Ok(None)` when no crossing is detected on the grid. The key
/// supplies the bridge coins and refinement draws; the model supplies the
/// volatility used by both corrections.
pub fn detect_exit(
    path: &PathGrid,
    ball: &Ball,
    method: Method,
    key: StreamKey,
    model: &SdeModel,
) -> Result<Option<ExitRecord>> {
    if path.dim() != model.dim() {
        return Err(domain("path and model dimensions differ"));
    }
    if method == Method::Substepped && !path.has_increments() {
        return Err(config(
            "substepped detection needs the path's driving increments",
        ));
    }
    let mut detector = Detector::new(model, ball, method, key)?;
    if !detector.strictly_inside(path.state(0)) {
        return Err(domain("path must start inside the open ball"));
    }
    for i in 0..path.len() - 1 {
        let crossing = detector.check(
            i,
            path.time(i),
            path.state(i),
            path.time(i + 1),
            path.state(i + 1),
            path.increment(i),
        )?;
        if let Some(c) = crossing {
            return Ok(Some(ExitRecord {
                exit_time: c.time,
                exit_state: c.state,
                pre_exit_grid: path.truncated(i + 2),
                center: ball.center.clone(),
                radius: ball.radius,
                method,
                crossing_interval: i,
            }));
        }
    }
    Ok(None)
}
