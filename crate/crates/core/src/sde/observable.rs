use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{domain, Result};
use crate::math;
use crate::sde::model::{probe_points, Field};

/// Central finite-difference step used for Jacobian fallbacks and checks.
pub const FD_STEP: f64 = 1e-6;

/// A `C²` map `f: ℝᵈ → ℝˡ` with its Jacobian and, optionally, the Hessians of
/// its components.
#[derive(Clone)]
pub struct Observable {
    name: String,
    input_dim: usize,
    output_dim: usize,
    f: Field,
    jacobian: Option<Field>,
    hessians: Option<Vec<Field>>,
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Observable")
            .field("name", &self.name)
            .field("input_dim", &self.input_dim)
            .field("output_dim", &self.output_dim)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .finish_non_exhaustive()
    }
}

impl Observable {
    pub fn new(
        name: impl Into<String>,
        input_dim: usize,
        output_dim: usize,
        f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(domain("observable dimensions must be positive"));
        }
        Ok(Self {
            name: name.into(),
            input_dim,
            output_dim,
            f: Arc::new(f),
            jacobian: None,
            hessians: None,
        })
    }

    /// Attaches an analytic Jacobian writing the `ℓ × d` matrix row-major.
    pub fn with_jacobian(
        mut self,
        jacobian: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Arc::new(jacobian));
        self
    }

    /// Attaches the Hessians `H_{f_k}`, one `d × d` map per component.
    pub fn with_hessians(mut self, hessians: Vec<Field>) -> Result<Self> {
        if hessians.len() != self.output_dim {
            return Err(domain("need one Hessian per observable component"));
        }
        self.hessians = Some(hessians);
        Ok(self)
    }

    /// `f(y) = y` on `ℝᵈ`.
    pub fn identity(d: usize) -> Result<Self> {
        Self::new("identity", d, d, |y, out| out.copy_from_slice(y))?
            .with_jacobian(move |_, out| {
                out.fill(0.0);
                for k in 0..d {
                    out[k * d + k] = 1.0;
                }
            })
            .with_hessians((0..d).map(|_| zero_field()).collect())
    }

    /// `f(y) = A y` with `A` an `ℓ × d` matrix (row-major).
    pub fn linear(a: Vec<f64>, output_dim: usize, input_dim: usize) -> Result<Self> {
        if a.len() != output_dim * input_dim {
            return Err(domain("matrix shape does not match dimensions"));
        }
        let a2 = a.clone();
        Self::new("linear", input_dim, output_dim, move |y, out| {
            for (k, o) in out.iter_mut().enumerate() {
                *o = math::dot(&a[k * input_dim..(k + 1) * input_dim], y);
            }
        })?
        .with_jacobian(move |_, out| out.copy_from_slice(&a2))
        .with_hessians((0..output_dim).map(|_| zero_field()).collect())
    }

    /// `f(y) = eʸ − 1` on the line.
    pub fn exp_minus_one() -> Result<Self> {
        Self::new("exp_minus_one", 1, 1, |y, out| out[0] = libm::expm1(y[0]))?
            .with_jacobian(|y, out| out[0] = math::exp(y[0]))
            .with_hessians(vec![Arc::new(|y: &[f64], out: &mut [f64]| {
                out[0] = math::exp(y[0])
            })])
    }

    /// A nonlinear planar map with a non-diagonal Jacobian:
    /// `f(y) = (sin y₁ + y₂²/2 + y₂, e^{y₁y₂} − 1 + y₁)`.
    pub fn smooth_mix() -> Result<Self> {
        let h1: Field = Arc::new(|y: &[f64], out: &mut [f64]| {
            out.copy_from_slice(&[-math::sin(y[0]), 0.0, 0.0, 1.0]);
        });
        let h2: Field = Arc::new(|y: &[f64], out: &mut [f64]| {
            let e = math::exp(y[0] * y[1]);
            let off = (1.0 + y[0] * y[1]) * e;
            out.copy_from_slice(&[y[1] * y[1] * e, off, off, y[0] * y[0] * e]);
        });
        Self::new("smooth_mix", 2, 2, |y, out| {
            out[0] = math::sin(y[0]) + 0.5 * y[1] * y[1] + y[1];
            out[1] = libm::expm1(y[0] * y[1]) + y[0];
        })?
        .with_jacobian(|y, out| {
            let e = math::exp(y[0] * y[1]);
            out.copy_from_slice(&[math::cos(y[0]), y[1] + 1.0, y[1] * e + 1.0, y[0] * e]);
        })
        .with_hessians(vec![h1, h2])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn has_hessians(&self) -> bool {
        self.hessians.is_some()
    }

    #[inline]
    pub fn eval_into(&self, y: &[f64], out: &mut [f64]) {
        (self.f)(y, out)
    }

    pub fn eval(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_input(y)?;
        let mut out = vec![0.0; self.output_dim];
        self.eval_into(y, &mut out);
        Ok(out)
    }

    /// `J_f(y)` as an `ℓ × d` row-major matrix: analytic when available,
    /// central finite differences otherwise.
    pub fn jacobian(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_input(y)?;
        match &self.jacobian {
            Some(j) => {
                let mut out = vec![0.0; self.output_dim * self.input_dim];
                j(y, &mut out);
                Ok(out)
            }
            None => self.finite_difference_jacobian(y, FD_STEP),
        }
    }

    pub fn finite_difference_jacobian(&self, y: &[f64], step: f64) -> Result<Vec<f64>> {
        self.check_input(y)?;
        let (d, l) = (self.input_dim, self.output_dim);
        let mut out = vec![0.0; l * d];
        let mut yp = y.to_vec();
        let mut fp = vec![0.0; l];
        let mut fm = vec![0.0; l];
        for j in 0..d {
            yp[j] = y[j] + step;
            self.eval_into(&yp, &mut fp);
            yp[j] = y[j] - step;
            self.eval_into(&yp, &mut fm);
            yp[j] = y[j];
            for k in 0..l {
                out[k * d + j] = (fp[k] - fm[k]) / (2.0 * step);
            }
        }
        Ok(out)
    }

    /// Hessian of component `k` at `y`, if Hessians were supplied.
    pub fn hessian(&self, k: usize, y: &[f64]) -> Result<Option<Vec<f64>>> {
        self.check_input(y)?;
        if k >= self.output_dim {
            return Err(domain("component index out of range"));
        }
        Ok(self.hessians.as_ref().map(|hs| {
            let mut out = vec![0.0; self.input_dim * self.input_dim];
            hs[k](y, &mut out);
            out
        }))
    }

    /// Largest relative Frobenius gap `‖J − J_fd‖ / max(‖J‖, 1)` between the
    /// Jacobian and central finite differences (step [`FD_STEP`]) over
    /// `count` deterministic points of the closed unit ball around `center`.
    pub fn jacobian_check(&self, center: &[f64], count: usize) -> Result<f64> {
        self.check_input(center)?;
        let mut worst = 0.0f64;
        for y in probe_points(center, count) {
            let j = self.jacobian(&y)?;
            let fd = self.finite_difference_jacobian(&y, FD_STEP)?;
            let gap: Vec<f64> = j.iter().zip(&fd).map(|(a, b)| a - b).collect();
            worst = worst.max(math::norm(&gap) / math::norm(&j).max(1.0));
        }
        Ok(worst)
    }

    fn check_input(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.input_dim {
            return Err(domain(alloc::format!(
                "observable {} expects dimension {}, got {}",
                self.name,
                self.input_dim,
                y.len()
            )));
        }
        Ok(())
    }
}

fn zero_field() -> Field {
    Arc::new(|_: &[f64], out: &mut [f64]| out.fill(0.0))
}
