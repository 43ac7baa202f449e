//! Built-in models and observables, addressed by string identifiers.

use alloc::vec::Vec;

use crate::error::{config, Result};
use crate::sde::{Observable, SdeModel};

/// Rotation angle of `rotated_bm2` when none is given.
pub const DEFAULT_THETA: f64 = core::f64::consts::FRAC_PI_6;

pub struct Entry {
    pub id: &'static str,
    pub summary: &'static str,
}

pub const MODELS: &[Entry] = &[
    Entry {
        id: "bm1",
        summary: "standard Brownian motion, d = 1, x = 0",
    },
    Entry {
        id: "bm2",
        summary: "standard Brownian motion, d = 2, x = 0",
    },
    Entry {
        id: "ou1",
        summary: "Langevin / Ornstein-Uhlenbeck dX = -X dt + dW, d = 1, x = 0",
    },
    Entry {
        id: "rotated_bm2",
        summary: "dX = R(theta) dW with R a constant rotation, d = 2, x = 0",
    },
    Entry {
        id: "state_dependent2",
        summary: "mu(y) = -y, sigma(y) = diag(1 + y1^2/(1 + y1^2), 1), d = 2, x = 0",
    },
];

pub const OBSERVABLES: &[Entry] = &[
    Entry {
        id: "identity",
        summary: "f(y) = y, any d",
    },
    Entry {
        id: "exp_minus_one",
        summary: "f(y) = e^y - 1, d = 1",
    },
    Entry {
        id: "smooth_mix",
        summary: "f(y) = (sin y1 + y2^2/2 + y2, e^(y1 y2) - 1 + y1), d = 2",
    },
];

/// Looks up a catalog model. `theta` only affects `rotated_bm2`.
pub fn model(id: &str, theta: Option<f64>) -> Result<SdeModel> {
    match id {
        "bm1" => SdeModel::brownian(1),
        "bm2" => SdeModel::brownian(2),
        "ou1" => SdeModel::ornstein_uhlenbeck(),
        "rotated_bm2" => SdeModel::rotated_brownian(theta.unwrap_or(DEFAULT_THETA)),
        "state_dependent2" => SdeModel::state_dependent(),
        other => Err(config(alloc::format!("unknown model {other:?}"))),
    }
}

/// Looks up a catalog observable on `ℝᵈ`.
pub fn observable(id: &str, d: usize) -> Result<Observable> {
    let obs = match id {
        "identity" => Observable::identity(d)?,
        "exp_minus_one" => Observable::exp_minus_one()?,
        "smooth_mix" => Observable::smooth_mix()?,
        other => return Err(config(alloc::format!("unknown observable {other:?}"))),
    };
    if obs.input_dim() != d {
        return Err(config(alloc::format!(
            "observable {id} is defined on dimension {}, model has {d}",
            obs.input_dim()
        )));
    }
    Ok(obs)
}

pub fn model_ids() -> Vec<&'static str> {
    MODELS.iter().map(|e| e.id).collect()
}

pub fn observable_ids() -> Vec<&'static str> {
    OBSERVABLES.iter().map(|e| e.id).collect()
}
