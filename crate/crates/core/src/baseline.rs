//! Overdamped Langevin (ULA) baseline.

use crate::error::{check_dim, check_finite, usage, Error, Result};
use crate::model::{GradientOracle, TargetModel};
use crate::rng::{fill_normals, ChainRng};
use crate::sampler::{drive, ChainUpdate, RunConfig, Trace};

/// Reference point for the step-size constant: `d = 2`, `ε = 0.2`.
pub const CALIBRATION_DIM: usize = 2;
pub const CALIBRATION_EPS: f64 = 0.2;

/// Share of the accuracy budget spent on stationary bias at the calibration point.
pub const CALIBRATION_BIAS_SHARE: f64 = 0.5;

#[derive(Clone, Copy, Debug)]
struct UlaUpdate {
    step: f64,
    scale: f64,
}

impl UlaUpdate {
    fn new(step: f64) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return usage(format!("ULA step must be positive, got {step}"));
        }
        Ok(Self { step, scale: (2.0 * step).sqrt() })
    }
}

impl ChainUpdate for UlaUpdate {
    fn noise_len(&self, dim: usize) -> usize {
        dim
    }

    fn apply(&self, x: &mut [f64], _v: &mut [f64], grad: &[f64], z: &[f64]) {
        for ((xi, g), zi) in x.iter_mut().zip(grad).zip(z) {
            *xi += -self.step * g + self.scale * zi;
        }
    }
}

/// `x - δ∇f(x) + √(2δ)ζ`.
pub fn ula_step(target: &TargetModel, x: &[f64], step: f64, rng: &mut ChainRng) -> Result<Vec<f64>> {
    let u = UlaUpdate::new(step)?;
    check_dim("x", x.len(), target.dim())?;
    check_finite("x", x)?;
    let mut g = vec![0.0; x.len()];
    target.grad_into(x, &mut g);
    let mut z = vec![0.0; x.len()];
    fill_normals(rng, &mut z);
    let mut out = x.to_vec();
    u.apply(&mut out, &mut [], &g, &z);
    if out.iter().any(|a| !a.is_finite()) {
        return Err(Error::Divergence { chain: 0, iteration: 1 });
    }
    Ok(out)
}

/// Ensemble ULA run with the sampler's seeding, snapshot and trace machinery.
///
/// Velocities stay at zero throughout.
pub fn ula_run<O: GradientOracle + ?Sized>(oracle: &O, config: &RunConfig) -> Result<Trace> {
    drive(oracle, config, UlaUpdate::new)
}

/// Stationary variance `2δ/(1-(1-δλ)²)` of ULA on `f = λx²/2`.
pub fn ar1_stationary_variance(step: f64, lambda: f64) -> f64 {
    let a = 1.0 - step * lambda;
    2.0 * step / (1.0 - a * a)
}

/// W₂ between ULA's stationary law and `p*` on an isotropic quadratic of curvature `m`.
pub fn stationary_bias(dim: usize, m: f64, step: f64) -> f64 {
    (dim as f64).sqrt() * (ar1_stationary_variance(step, m).sqrt() - m.recip().sqrt())
}

/// Constant `c` in `δ = c·ε²m/(dL²)` such that, at the calibration point, the
/// stationary bias equals half the accuracy target.
pub fn calibrate_step_constant() -> f64 {
    let (d, eps) = (CALIBRATION_DIM as f64, CALIBRATION_EPS);
    // Unit curvature: √(2/(2-δ)) = 1 + share·ε/√d.
    let r = 1.0 + CALIBRATION_BIAS_SHARE * eps / d.sqrt();
    let step = 2.0 - 2.0 / (r * r);
    step * d / (eps * eps)
}

/// ULA step size for accuracy `eps`.
pub fn ula_step_size(constant: f64, eps: f64, dim: usize, m: f64, l: f64) -> f64 {
    constant * eps * eps * m / (dim as f64 * l * l)
}
