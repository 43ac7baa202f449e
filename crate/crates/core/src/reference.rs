//! Samplers for the limit laws.
//!
//! - [`ReferenceKind::StoppedSigmaBm`]: `(τ, ΣW_τ)` with `τ` the exit time of
//!   `ΣW` from the unit ball, simulated with substepped detection.
//! - [`ReferenceKind::UniformSphere`]: normalized Gaussian vectors.
//! - [`ReferenceKind::TwoPoint`]: fair `±1` signs.
//!
//! Draw `i` of a sample with seed `s` only depends on `StreamKey::new(s, i)`,
//! so samples can be generated in parallel by calling the per-draw functions.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Result};
use crate::exit::{Ball, Method};
use crate::math;
use crate::rng::StreamKey;
use crate::sde::{default_max_time, simulate_until_exit, SdeModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    StoppedSigmaBm,
    UniformSphere,
    TwoPoint,
}

impl ReferenceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReferenceKind::StoppedSigmaBm => "stopped_sigma_bm",
            ReferenceKind::UniformSphere => "uniform_sphere",
            ReferenceKind::TwoPoint => "two_point",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "stopped_sigma_bm" => Ok(ReferenceKind::StoppedSigmaBm),
            "uniform_sphere" => Ok(ReferenceKind::UniformSphere),
            "two_point" => Ok(ReferenceKind::TwoPoint),
            other => Err(config(alloc::format!("unknown reference kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceDraw {
    pub tau: Option<f64>,
    pub value: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSample {
    pub kind: ReferenceKind,
    pub dim: usize,
    pub draws: Vec<ReferenceDraw>,
}

impl ReferenceSample {
    pub fn new(kind: ReferenceKind, dim: usize, draws: Vec<ReferenceDraw>) -> Result<Self> {
        if dim == 0 {
            return Err(domain("reference dimension must be positive"));
        }
        if draws.iter().any(|d| d.value.len() != dim) {
            return Err(domain("draw dimension does not match the sample"));
        }
        Ok(Self { kind, dim, draws })
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// The exit times that were recorded.
    pub fn taus(&self) -> Vec<f64> {
        self.draws.iter().filter_map(|d| d.tau).collect()
    }

    pub fn coordinate(&self, k: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d.value[k]).collect()
    }

    pub fn norms(&self) -> Vec<f64> {
        self.draws.iter().map(|d| math::norm(&d.value)).collect()
    }

    pub fn values(&self) -> Vec<Vec<f64>> {
        self.draws.iter().map(|d| d.value.clone()).collect()
    }
}

/// The driftless model `dX = Σ dW` from the origin, checked for diffusivity.
pub fn stopped_sigma_bm_model(sigma: Vec<f64>) -> Result<SdeModel> {
    let model = SdeModel::constant_volatility(String::from("sigma_bm"), sigma)?;
    model
        .probe_diffusivity()
        .map_err(|e| config(alloc::format!("reference volatility rejected: {e}")))?;
    Ok(model)
}

/// One `(τ, ΣW_τ)` draw from the unit-ball exit of `model`.
pub fn stopped_sigma_bm_draw(model: &SdeModel, h: f64, key: StreamKey) -> Result<ReferenceDraw> {
    let ball = Ball::new(vec![0.0; model.dim()], 1.0)?;
    let exit = simulate_until_exit(
        model,
        &ball,
        h,
        key,
        default_max_time(1.0),
        Method::Substepped,
    )?;
    Ok(ReferenceDraw {
        tau: Some(exit.exit_time),
        value: exit.exit_state,
    })
}

/// `count` draws of the stopped `ΣW` law; `sigma` is `d × d` row-major.
pub fn sample_stopped_sigma_bm(
    sigma: Vec<f64>,
    count: usize,
    h: f64,
    seed: u64,
) -> Result<ReferenceSample> {
    let model = stopped_sigma_bm_model(sigma)?;
    let draws = (0..count as u64)
        .map(|i| stopped_sigma_bm_draw(&model, h, StreamKey::new(seed, i)))
        .collect::<Result<Vec<_>>>()?;
    ReferenceSample::new(ReferenceKind::StoppedSigmaBm, model.dim(), draws)
}

/// One uniform point on the unit sphere of `ℝᵈ`.
pub fn uniform_sphere_draw(d: usize, key: StreamKey) -> Result<ReferenceDraw> {
    if d == 0 {
        return Err(domain("sphere dimension must be positive"));
    }
    let mut g = key.gaussians();
    let mut v = vec![0.0; d];
    loop {
        g.fill(&mut v, 1.0);
        let norm = math::norm(&v);
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
            return Ok(ReferenceDraw {
                tau: None,
                value: v,
            });
        }
    }
}

pub fn sample_uniform_sphere(d: usize, count: usize, seed: u64) -> Result<ReferenceSample> {
    let draws = (0..count as u64)
        .map(|i| uniform_sphere_draw(d, StreamKey::new(seed, i)))
        .collect::<Result<Vec<_>>>()?;
    ReferenceSample::new(ReferenceKind::UniformSphere, d, draws)
}

/// Fair `±1` signs from a single stream.
pub fn exact_two_point(count: usize, key: StreamKey) -> ReferenceSample {
    let mut u = key.uniforms();
    let draws = (0..count)
        .map(|_| ReferenceDraw {
            tau: None,
            value: vec![if u.next_u64() >> 63 == 1 { 1.0 } else { -1.0 }],
        })
        .collect();
    ReferenceSample {
        kind: ReferenceKind::TwoPoint,
        dim: 1,
        draws,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    fn positive_fraction(s: &ReferenceSample) -> f64 {
        s.coordinate(0).iter().filter(|v| **v > 0.0).count() as f64 / s.len() as f64
    }

    #[test]
    fn two_point_examples() {
        assert!(exact_two_point(0, StreamKey::new(1, 0)).is_empty());
        let a = exact_two_point(100_000, StreamKey::new(3, 0));
        assert_eq!(a, exact_two_point(100_000, StreamKey::new(3, 0)));
        assert!(a.coordinate(0).iter().all(|v| *v == 1.0 || *v == -1.0));
        let p = positive_fraction(&a);
        assert!((0.485..=0.515).contains(&p), "{p}");
    }

    #[test]
    fn sphere_draws_are_unit_and_balanced() {
        let s = sample_uniform_sphere(1, 100_000, 4).unwrap();
        assert!(s.coordinate(0).iter().all(|v| *v == 1.0 || *v == -1.0));
        let p = positive_fraction(&s);
        assert!((0.485..=0.515).contains(&p), "{p}");

        let s = sample_uniform_sphere(3, 1000, 4).unwrap();
        assert!(s.norms().iter().all(|n| (n - 1.0).abs() < 1e-15));
    }

    #[test]
    fn planar_sphere_passes_chi2() {
        let s = sample_uniform_sphere(2, 100_000, 11).unwrap();
        let values = s.values();
        let prov = stats::Provenance {
            n: 1,
            h: 0.0,
            method: Method::Substepped,
            seed: 11,
        };
        let r = stats::chi2_sphere_uniformity(&values, 8, 0.01, prov).unwrap();
        assert!(r.statistic < 24.321886347856854, "{}", r.statistic);
        assert!(sample_uniform_sphere(0, 1, 0).is_err());
    }

    #[test]
    fn stopped_bm_values_are_on_the_sphere() {
        let s = sample_stopped_sigma_bm(vec![1.0], 200, 1e-3, 5).unwrap();
        assert!(s.coordinate(0).iter().all(|v| *v == 1.0 || *v == -1.0));
        assert_eq!(s.taus().len(), 200);
        let theta: f64 = 0.4;
        let (sn, cs) = (theta.sin(), theta.cos());
        let s = sample_stopped_sigma_bm(vec![cs, -sn, sn, cs], 100, 1e-3, 5).unwrap();
        assert!(s.norms().iter().all(|n| (n - 1.0).abs() < 1e-9));
    }

    #[test]
    fn degenerate_volatility_is_config_error() {
        assert!(matches!(
            sample_stopped_sigma_bm(vec![0.0; 4], 1, 1e-3, 0),
            Err(crate::Error::Config(_))
        ));
    }

    #[test]
    fn kind_names_round_trip() {
        for k in [
            ReferenceKind::StoppedSigmaBm,
            ReferenceKind::UniformSphere,
            ReferenceKind::TwoPoint,
        ] {
            assert_eq!(ReferenceKind::parse(k.as_str()).unwrap(), k);
        }
        assert!(ReferenceKind::parse("gaussian").is_err());
    }
}
