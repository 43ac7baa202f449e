use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{config, domain, Result};
use crate::math;
use crate::rng::StreamKey;

/// A vector field `y ↦ out`, writing into a caller-provided buffer.
///
/// Drifts write `d` entries; diffusions write the `d × d` matrix row-major.
pub type Field = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Number of points the diffusivity probe evaluates.
pub const PROBE_POINTS: usize = 1024;

const PROBE_SEED: u64 = 0x0005_1a9e_70be_u64;

/// A time-homogeneous Itô SDE `dX = μ(X) dt + σ(X) dW`, `X₀ = x`.
#[derive(Clone)]
pub struct SdeModel {
    name: String,
    dim: usize,
    initial: Vec<f64>,
    drift: Field,
    diffusion: Field,
}

impl fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("initial", &self.initial)
            .finish_non_exhaustive()
    }
}

impl SdeModel {
    pub fn new(
        name: impl Into<String>,
        initial: Vec<f64>,
        drift: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        diffusion: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        if initial.is_empty() {
            return Err(domain("model dimension must be positive"));
        }
        if initial.iter().any(|v| !v.is_finite()) {
            return Err(domain("initial point must be finite"));
        }
        Ok(Self {
            name: name.into(),
            dim: initial.len(),
            initial,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
        })
    }

    /// Driftless model with constant volatility matrix `sigma` (row-major,
    /// `d × d`) started at the origin.
    pub fn constant_volatility(name: impl Into<String>, sigma: Vec<f64>) -> Result<Self> {
        let d = isqrt_exact(sigma.len())
            .ok_or_else(|| domain("volatility matrix must be square and non-empty"))?;
        Self::new(
            name,
            vec![0.0; d],
            |_, out| out.fill(0.0),
            move |_, out| out.copy_from_slice(&sigma),
        )
    }

    /// Standard `d`-dimensional Brownian motion from the origin.
    pub fn brownian(d: usize) -> Result<Self> {
        let mut sigma = vec![0.0; d * d];
        for k in 0..d {
            sigma[k * d + k] = 1.0;
        }
        Self::constant_volatility(alloc::format!("bm{d}"), sigma)
    }

    /// `μ = 0`, `σ = 0`: the path never moves.
    pub fn frozen(d: usize) -> Result<Self> {
        Self::constant_volatility("frozen", vec![0.0; d * d])
    }

    /// Langevin / Ornstein–Uhlenbeck: `dX = −X dt + dW`, `X₀ = 0`.
    pub fn ornstein_uhlenbeck() -> Result<Self> {
        Self::new(
            "ou1",
            vec![0.0],
            |y, out| out[0] = -y[0],
            |_, out| out[0] = 1.0,
        )
    }

    /// Planar Brownian motion driven through the constant rotation by `theta`.
    pub fn rotated_brownian(theta: f64) -> Result<Self> {
        if !theta.is_finite() {
            return Err(domain("rotation angle must be finite"));
        }
        let (s, c) = math::sin_cos(theta);
        Self::constant_volatility("rotated_bm2", vec![c, -s, s, c])
    }

    /// `μ(y) = −y`, `σ(y) = diag(1 + y₁²/(1 + y₁²), 1)` in the plane.
    pub fn state_dependent() -> Result<Self> {
        Self::new(
            "state_dependent2",
            vec![0.0, 0.0],
            |y, out| {
                out[0] = -y[0];
                out[1] = -y[1];
            },
            |y, out| {
                let s = y[0] * y[0];
                out[0] = 1.0 + s / (1.0 + s);
                out[1] = 0.0;
                out[2] = 0.0;
                out[3] = 1.0;
            },
        )
    }

    pub fn with_initial(mut self, initial: Vec<f64>) -> Result<Self> {
        if initial.len() != self.dim {
            return Err(domain("initial point has the wrong dimension"));
        }
        self.initial = initial;
        Ok(self)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    #[inline]
    pub fn drift_into(&self, y: &[f64], out: &mut [f64]) {
        (self.drift)(y, out)
    }

    #[inline]
    pub fn diffusion_into(&self, y: &[f64], out: &mut [f64]) {
        (self.diffusion)(y, out)
    }

    pub fn drift(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(y)?;
        let mut out = vec![0.0; self.dim];
        self.drift_into(y, &mut out);
        Ok(out)
    }

    pub fn diffusion(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(y)?;
        let mut out = vec![0.0; self.dim * self.dim];
        self.diffusion_into(y, &mut out);
        Ok(out)
    }

    pub(crate) fn check_dim(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.dim {
            return Err(domain(alloc::format!(
                "state has dimension {}, model {} expects {}",
                y.len(),
                self.name,
                self.dim
            )));
        }
        Ok(())
    }

    /// Numeric surrogate for the diffusivity assumption: returns
    /// `max_k min_y (σσ′)_{kk}(y)` over [`PROBE_POINTS`] deterministic points
    /// of the closed unit ball around the initial point, and fails unless it
    /// is strictly positive. Also rejects non-finite coefficient values.
    pub fn probe_diffusivity(&self) -> Result<f64> {
        let d = self.dim;
        let mut min_diag = vec![f64::INFINITY; d];
        let mut mu = vec![0.0; d];
        let mut sig = vec![0.0; d * d];
        for y in probe_points(&self.initial, PROBE_POINTS) {
            self.drift_into(&y, &mut mu);
            self.diffusion_into(&y, &mut sig);
            if mu.iter().chain(sig.iter()).any(|v| !v.is_finite()) {
                return Err(config(alloc::format!(
                    "model {} has non-finite coefficients at {:?}",
                    self.name,
                    y
                )));
            }
            for (k, m) in min_diag.iter_mut().enumerate() {
                let row = &sig[k * d..(k + 1) * d];
                *m = m.min(math::norm_sq(row));
            }
        }
        let best = min_diag.iter().cloned().fold(0.0, f64::max);
        if best > 0.0 {
            Ok(best)
        } else {
            Err(config(alloc::format!(
                "model {} fails the diffusivity probe",
                self.name
            )))
        }
    }

    /// Largest coordinate volatility `max_k ‖σ_k(y)‖` at `y`, given `σ(y)`.
    pub(crate) fn max_row_norm(sig: &[f64], d: usize) -> f64 {
        (0..d)
            .map(|k| math::norm(&sig[k * d..(k + 1) * d]))
            .fold(0.0, f64::max)
    }

    /// The model of `Zⁿ_t = √n (X_{t/n} − x)`:
    /// `μ_Z(z) = μ(x + z/√n)/√n`, `σ_Z(z) = σ(x + z/√n)`, `Z₀ = 0`.
    pub fn zoomed(&self, n: u64) -> Result<Self> {
        if n == 0 {
            return Err(domain("scaling index must be positive"));
        }
        let root = math::sqrt(n as f64);
        let x = self.initial.clone();
        let x2 = x.clone();
        let base = self.clone();
        let base2 = self.clone();
        let name = alloc::format!("{}@zoom{}", self.name, n);
        Self::new(
            name,
            vec![0.0; self.dim],
            move |z, out| {
                let y: Vec<f64> = z.iter().zip(&x).map(|(z, x)| x + z / root).collect();
                base.drift_into(&y, out);
                for v in out.iter_mut() {
                    *v /= root;
                }
            },
            move |z, out| {
                let y: Vec<f64> = z.iter().zip(&x2).map(|(z, x)| x + z / root).collect();
                base2.diffusion_into(&y, out);
            },
        )
    }
}

fn isqrt_exact(len: usize) -> Option<usize> {
    (1..=len).find(|d| d * d == len)
}

/// Deterministic probe set in the closed unit ball around `center`: the center
/// itself, then alternately points on the unit sphere and points spread
/// uniformly in the ball.
pub fn probe_points(center: &[f64], count: usize) -> Vec<Vec<f64>> {
    let d = center.len();
    let mut gauss = StreamKey::new(PROBE_SEED, d as u64).gaussians();
    let mut unif = StreamKey::new(PROBE_SEED, d as u64)
        .with_substream(1)
        .uniforms();
    let mut pts = Vec::with_capacity(count);
    pts.push(center.to_vec());
    let mut dir = vec![0.0; d];
    while pts.len() < count {
        loop {
            gauss.fill(&mut dir, 1.0);
            if math::norm_sq(&dir) > 0.0 {
                break;
            }
        }
        let norm = math::norm(&dir);
        let radius = if pts.len() % 2 == 1 {
            1.0
        } else {
            libm::pow(unif.next_open01(), 1.0 / d as f64)
        };
        pts.push(
            center
                .iter()
                .zip(&dir)
                .map(|(c, u)| c + radius * u / norm)
                .collect(),
        );
    }
    pts
}
