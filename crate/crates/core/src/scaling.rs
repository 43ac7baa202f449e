//! Scaled process families built from simulated exits.
//!
//! With `τⁿ` the exit time from the ball of radius `n^{-1/2}` around `x`:
//!
//! - `Yⁿ_t = √n (f(X_{τⁿ∧t}) − f(x))`, the scaled stopped observable;
//! - `Zⁿ_t = √n (X_{t/n} − x)`, the time-scaled process, whose unit-ball exit
//!   time equals `n τⁿ` path by path;
//! - `X̃ⁿ_t = √n [(f(X_{τⁿ∧t}) − f(x)) − J_f(x)(X_{τⁿ∧t} − x)]`, the
//!   second-order remainder;
//! - `Fⁿ_a = √n Σ_{t_i < τⁿ∧a} ∇f(X_{t_i}) · σ(X_{t_i}) ΔW_i`, the discrete
//!   stochastic integral truncated at `a`.
//!
//! Between grid points the path takes its value at the previous grid point;
//! from the exit time on it is frozen at the exit state.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config, domain, Result};
use crate::exit::{detect_exit, radius_for, Ball, ExitRecord, Method};
use crate::math;
use crate::rng::StreamKey;
use crate::sde::{Observable, PathGrid, SdeModel};

/// `Yⁿ` on a time grid, at the exit time, and the scaled exit time `n τⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledFddSample {
    pub n: u64,
    pub times: Vec<f64>,
    /// One row of `ℓ` values per requested time.
    pub values: Vec<Vec<f64>>,
    pub exit_value: Vec<f64>,
    pub exit_time_scaled: f64,
}

/// Supremum of `‖X̃ⁿ‖` over a stopped path up to `horizon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemainderSample {
    pub n: u64,
    pub sup_norm: f64,
    pub horizon: f64,
}

fn check_exit(n: u64, exit: &ExitRecord, model: &SdeModel) -> Result<()> {
    if n == 0 {
        return Err(domain("scaling index must be positive"));
    }
    let expected = radius_for(n);
    if (exit.radius - expected).abs() > 1e-12 * expected {
        return Err(config(alloc::format!(
            "exit radius {} does not match n = {n} (expected {expected})",
            exit.radius
        )));
    }
    if exit.center.as_slice() != model.initial() {
        return Err(config(
            "exit ball is not centered at the model's initial point",
        ));
    }
    Ok(())
}

fn check_observable(obs: &Observable, model: &SdeModel) -> Result<()> {
    if obs.input_dim() != model.dim() {
        return Err(config("observable and model dimensions differ"));
    }
    Ok(())
}

/// `X_{τ∧t}` read from the record.
pub fn stopped_state(exit: &ExitRecord, t: f64) -> &[f64] {
    if t >= exit.exit_time {
        &exit.exit_state
    } else {
        exit.pre_exit_grid.lookup(t)
    }
}

/// Evaluates `Yⁿ` at `times`, at the exit, and records `n τⁿ`.
pub fn scaled_stopped_values(
    n: u64,
    observable: &Observable,
    exit: &ExitRecord,
    model: &SdeModel,
    times: &[f64],
) -> Result<ScaledFddSample> {
    check_exit(n, exit, model)?;
    check_observable(observable, model)?;
    if times.iter().any(|t| !(*t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(domain("times must be non-negative and sorted"));
    }
    let root = math::sqrt(n as f64);
    let fx = observable.eval(model.initial())?;
    let l = observable.output_dim();
    let mut buf = vec![0.0; l];
    let mut scaled = |y: &[f64]| -> Vec<f64> {
        observable.eval_into(y, &mut buf);
        buf.iter().zip(&fx).map(|(f, f0)| root * (f - f0)).collect()
    };
    let values = times
        .iter()
        .map(|&t| scaled(stopped_state(exit, t)))
        .collect();
    let exit_value = scaled(&exit.exit_state);
    Ok(ScaledFddSample {
        n,
        times: times.to_vec(),
        values,
        exit_value,
        exit_time_scaled: n as f64 * exit.exit_time,
    })
}

/// `sup_{t ≤ δ} ‖Yⁿ_t − Yⁿ_0‖` over the grid points before the exit and the
/// exit point itself when `τⁿ ≤ δ`.
pub fn scaled_sup(
    n: u64,
    observable: &Observable,
    exit: &ExitRecord,
    model: &SdeModel,
    delta: f64,
) -> Result<f64> {
    check_exit(n, exit, model)?;
    check_observable(observable, model)?;
    if !(delta >= 0.0) {
        return Err(domain("delta must be non-negative"));
    }
    let root = math::sqrt(n as f64);
    let fx = observable.eval(model.initial())?;
    let mut buf = vec![0.0; observable.output_dim()];
    let mut norm = |y: &[f64]| {
        observable.eval_into(y, &mut buf);
        root * math::sqrt(buf.iter().zip(&fx).map(|(f, f0)| (f - f0) * (f - f0)).sum())
    };
    let mut sup = 0.0f64;
    let grid = &exit.pre_exit_grid;
    for i in 0..grid.len() {
        let t = grid.time(i);
        if t > delta || t >= exit.exit_time {
            break;
        }
        sup = sup.max(norm(grid.state(i)));
    }
    if exit.exit_time <= delta {
        sup = sup.max(norm(&exit.exit_state));
    }
    Ok(sup)
}

/// `Zⁿ = √n (X_{·/n} − x)`: times multiplied by `n`, states mapped to
/// `√n (y − x)`, increments scaled by `√n`.
pub fn time_scaled_path(n: u64, path: &PathGrid, x: &[f64]) -> Result<PathGrid> {
    if n == 0 {
        return Err(domain("scaling index must be positive"));
    }
    if x.len() != path.dim() {
        return Err(domain("center and path dimensions differ"));
    }
    let nf = n as f64;
    let root = math::sqrt(nf);
    let d = path.dim();
    let (_, times, mut states, mut increments) = path.clone().into_parts();
    let times = times.into_iter().map(|t| nf * t).collect();
    for (i, v) in states.iter_mut().enumerate() {
        *v = (*v - x[i % d]) * root;
    }
    for v in increments.iter_mut() {
        *v *= root;
    }
    PathGrid::new(d, times, states, increments)
}

/// Exit of `Zⁿ` from the unit ball, detected with the same method and key on
/// the zoomed model of `Zⁿ`.
pub fn time_scaled_exit(
    n: u64,
    path: &PathGrid,
    model: &SdeModel,
    method: Method,
    key: StreamKey,
) -> Result<Option<ExitRecord>> {
    let zoomed = model.zoomed(n)?;
    let scaled = time_scaled_path(n, path, model.initial())?;
    let ball = Ball::new(vec![0.0; model.dim()], 1.0)?;
    detect_exit(&scaled, &ball, method, key, &zoomed)
}

/// `X̃ⁿ_t` at every grid time before the exit (and at the exit), via the
/// difference construction.
pub fn remainder_path(
    n: u64,
    observable: &Observable,
    exit: &ExitRecord,
    model: &SdeModel,
    horizon: f64,
) -> Result<Vec<(f64, Vec<f64>)>> {
    check_exit(n, exit, model)?;
    check_observable(observable, model)?;
    if !(horizon >= 0.0) {
        return Err(domain("horizon must be non-negative"));
    }
    let x = model.initial();
    let d = model.dim();
    let l = observable.output_dim();
    let root = math::sqrt(n as f64);
    let fx = observable.eval(x)?;
    let jac = observable.jacobian(x)?;
    let mut buf = vec![0.0; l];
    let mut remainder = |y: &[f64]| -> Vec<f64> {
        observable.eval_into(y, &mut buf);
        (0..l)
            .map(|k| {
                let lin: f64 = (0..d).map(|j| jac[k * d + j] * (y[j] - x[j])).sum();
                root * ((buf[k] - fx[k]) - lin)
            })
            .collect()
    };
    let mut out = Vec::new();
    let grid = &exit.pre_exit_grid;
    for i in 0..grid.len() {
        let t = grid.time(i);
        if t > horizon || t >= exit.exit_time {
            break;
        }
        out.push((t, remainder(grid.state(i))));
    }
    if exit.exit_time <= horizon {
        out.push((exit.exit_time, remainder(&exit.exit_state)));
    }
    Ok(out)
}

/// `sup_{t ≤ horizon} ‖X̃ⁿ_t‖`.
pub fn remainder_sup(
    n: u64,
    observable: &Observable,
    exit: &ExitRecord,
    model: &SdeModel,
    horizon: f64,
) -> Result<RemainderSample> {
    let sup_norm = remainder_path(n, observable, exit, model, horizon)?
        .iter()
        .map(|(_, r)| math::norm(r))
        .fold(0.0, f64::max);
    Ok(RemainderSample {
        n,
        sup_norm,
        horizon,
    })
}

/// Per-interval terms `√n ∇f_k(X_{t_i}) · σ(X_{t_i}) ΔW_i`, `k = 1..ℓ`.
fn martingale_terms(
    n: u64,
    observable: &Observable,
    exit: &ExitRecord,
    model: &SdeModel,
) -> Result<Vec<(f64, Vec<f64>)>> {
    check_exit(n, exit, model)?;
    check_observable(observable, model)?;
    let grid = &exit.pre_exit_grid;
    if grid.len() > 1 && grid.increment(0).is_none() {
        return Err(config("the path's driving increments were not retained"));
    }
    let d = model.dim();
    let l = observable.output_dim();
    let root = math::sqrt(n as f64);
    let mut sig = vec![0.0; d * d];
    let mut terms = Vec::with_capacity(grid.len());
    for i in 0..grid.len() - 1 {
        let t = grid.time(i);
        if t >= exit.exit_time {
            break;
        }
        let y = grid.state(i);
        let jac = observable.jacobian(y)?;
        model.diffusion_into(y, &mut sig);
        let dw = grid.increment(i).expect("checked above");
        let noise: Vec<f64> = (0..d)
            .map(|r| math::dot(&sig[r * d..(r + 1) * d], dw))
            .collect();
        let term = (0..l)
            .map(|k| root * math::dot(&jac[k * d..(k + 1) * d], &noise))
            .collect();
        terms.push((t, term));
    }
    Ok(terms)
}

/// Component `k` of `Fⁿ_a`. Constant in `a` once `a ≥ τⁿ`; that constant
/// is the `Vⁿ` sample.
pub fn truncated_martingale(
    n: u64,
    component: usize,
    observable: &Observable,
    exit: &ExitRecord,
    model: &SdeModel,
    horizon: f64,
) -> Result<f64> {
    if component >= observable.output_dim() {
        return Err(domain("component index out of range"));
    }
    Ok(truncated_martingales(n, observable, exit, model, &[horizon])?[0][component])
}

/// `Fⁿ_a` (all components) for each horizon `a`.
pub fn truncated_martingales(
    n: u64,
    observable: &Observable,
    exit: &ExitRecord,
    model: &SdeModel,
    horizons: &[f64],
) -> Result<Vec<Vec<f64>>> {
    if horizons.iter().any(|a| !(*a >= 0.0)) {
        return Err(domain("horizons must be non-negative"));
    }
    let terms = martingale_terms(n, observable, exit, model)?;
    let l = observable.output_dim();
    Ok(horizons
        .iter()
        .map(|&a| {
            let mut acc = vec![0.0; l];
            for (t, term) in &terms {
                if *t >= a {
                    break;
                }
                for k in 0..l {
                    acc[k] += term[k];
                }
            }
            acc
        })
        .collect())
}

/// `Vⁿ = lim_{a→∞} Fⁿ_a`.
pub fn martingale_limit(
    n: u64,
    observable: &Observable,
    exit: &ExitRecord,
    model: &SdeModel,
) -> Result<Vec<f64>> {
    Ok(truncated_martingales(n, observable, exit, model, &[f64::INFINITY])?.remove(0))
}
