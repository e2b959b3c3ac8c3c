//! Adadelta and the per-round cosine schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{GroupSet, ParamSet};
use crate::tensor::Scalar;

/// Adadelta hyper-parameters. `lr` is the base learning rate; the round
/// schedule multiplies it via `lr_scale` in [`adadelta_step`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdadeltaConfig {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        Self {
            lr: 1.0,
            rho: 0.9,
            eps: 1e-6,
        }
    }
}

impl AdadeltaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("adadelta rho must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.eps > 0.0) || !(self.lr >= 0.0) {
            return Err(Error::Config("adadelta eps must be > 0 and lr >= 0".into()));
        }
        Ok(())
    }
}

/// One Adadelta update over every parameter whose group is not frozen:
///
/// ```text
/// v <- rho v + (1 - rho) g^2
/// d <- sqrt(u + eps) / sqrt(v + eps) * g
/// u <- rho u + (1 - rho) d^2
/// w <- w - lr * lr_scale * d
/// ```
///
/// Frozen parameters (value, gradient and accumulators) are not touched.
pub fn adadelta_step<T: Scalar>(params: &mut ParamSet<T>, cfg: &AdadeltaConfig, lr_scale: f64, frozen: GroupSet) {
    let rho = T::of(cfg.rho);
    let one_minus_rho = T::of(1.0 - cfg.rho);
    let eps = T::of(cfg.eps);
    let step = T::of(cfg.lr * lr_scale);
    for p in params.iter_mut().filter(|p| !frozen.contains(p.group())) {
        let p = &mut *p;
        let value = p.value.data_mut();
        let grad = p.grad.data();
        let v = p.square_avg.data_mut();
        let u = p.acc_delta.data_mut();
        for i in 0..value.len() {
            let g = grad[i];
            v[i] = rho * v[i] + one_minus_rho * g * g;
            let d = (u[i] + eps).sqrt() / (v[i] + eps).sqrt() * g;
            u[i] = rho * u[i] + one_minus_rho * d * d;
            value[i] -= step * d;
        }
    }
}

/// Round multiplier `0.5 (1 + cos(pi t / (T - 1)))`; 1 when `T == 1`.
pub fn cosine_round_scale(round: usize, total: usize) -> Result<f64> {
    if round >= total {
        return Err(Error::Range(format!("round {round} outside 0..{total}")));
    }
    if total == 1 {
        return Ok(1.0);
    }
    let x = std::f64::consts::PI * round as f64 / (total - 1) as f64;
    Ok(0.5 * (1.0 + x.cos()))
}
