//! Exact propagation of the chain's law on quadratic targets.
//!
//! With a diagonal Hessian every update is linear-Gaussian and acts on each
//! coordinate separately, so a Dirac start stays Gaussian and its mean and
//! 2×2 covariance per coordinate evolve in closed form.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, usage, Result};
use crate::kernel::KernelCoefficients;
use crate::metrics::GaussianSummary;
use crate::model::TargetModel;
use crate::planner::EpochSchedule;

/// Mean and covariance of one `(x_i, v_i)` pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordinateLaw {
    pub mean_x: f64,
    pub mean_v: f64,
    pub var_x: f64,
    pub cov_xv: f64,
    pub var_v: f64,
}

/// Product-form Gaussian law of the chain on a quadratic target.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianLaw {
    center: Vec<f64>,
    lambda: Vec<f64>,
    smoothness: f64,
    coords: Vec<CoordinateLaw>,
}

impl GaussianLaw {
    /// Point mass at `(x0, 0)`.
    pub fn dirac(target: &TargetModel, x0: &[f64]) -> Result<Self> {
        let Some(lambda) = target.quadratic_hessian() else {
            return usage("exact law propagation needs a quadratic target");
        };
        check_dim("initial point", x0.len(), target.dim())?;
        check_finite("initial point", x0)?;
        let coords =
            x0.iter().map(|&x| CoordinateLaw { mean_x: x, mean_v: 0.0, var_x: 0.0, cov_xv: 0.0, var_v: 0.0 }).collect();
        Ok(Self { center: target.minimizer().to_vec(), lambda: lambda.to_vec(), smoothness: target.l(), coords })
    }

    /// The stationary law `N(c, H⁻¹) ⊗ N(0, I/L)`.
    pub fn stationary(target: &TargetModel) -> Result<Self> {
        let mut law = Self::dirac(target, target.minimizer())?;
        for (c, &l) in law.coords.iter_mut().zip(&law.lambda) {
            c.var_x = 1.0 / l;
            c.var_v = 1.0 / law.smoothness;
        }
        Ok(law)
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coordinates(&self) -> &[CoordinateLaw] {
        &self.coords
    }

    /// One kernel step with gradient noise of per-coordinate variance `sigma2`.
    pub fn kernel_step(&mut self, k: &KernelCoefficients, sigma2: f64) {
        let (axv, avv, bx, bv) =
            (k.position_velocity(), k.velocity_decay(), k.position_gradient(), k.velocity_gradient());
        let qxx = k.var_x() + sigma2 * bx * bx;
        let qxv = k.cov_xv() + sigma2 * bx * bv;
        let qvv = k.var_v() + sigma2 * bv * bv;
        for ((c, &l), &ctr) in self.coords.iter_mut().zip(&self.lambda).zip(&self.center) {
            // Centered transition matrix [[a11, a12], [a21, a22]].
            let (a11, a12, a21, a22) = (1.0 - bx * l, axv, -bv * l, avv);
            let y = c.mean_x - ctr;
            let (my, mv) = (a11 * y + a12 * c.mean_v, a21 * y + a22 * c.mean_v);
            let (sxx, sxv, svv) = (c.var_x, c.cov_xv, c.var_v);
            c.var_x = a11 * a11 * sxx + 2.0 * a11 * a12 * sxv + a12 * a12 * svv + qxx;
            c.cov_xv = a11 * a21 * sxx + (a11 * a22 + a12 * a21) * sxv + a12 * a22 * svv + qxv;
            c.var_v = a21 * a21 * sxx + 2.0 * a21 * a22 * sxv + a22 * a22 * svv + qvv;
            c.mean_x = ctr + my;
            c.mean_v = mv;
        }
    }

    /// `n` kernel steps at a fixed step size.
    pub fn kernel_steps(&mut self, step: f64, n: usize, sigma2: f64) -> Result<()> {
        let k = KernelCoefficients::new(step, self.smoothness)?;
        for _ in 0..n {
            self.kernel_step(&k, sigma2);
        }
        Ok(())
    }

    /// Runs every epoch of the schedule in order.
    pub fn run_schedule(&mut self, schedule: &EpochSchedule, sigma2: f64) -> Result<()> {
        for e in &schedule.epochs {
            self.kernel_steps(e.step, e.iterations, sigma2)?;
        }
        Ok(())
    }

    /// One overdamped Euler step `x' = x - δ∇f(x) + √(2δ)ζ`; velocities are untouched.
    pub fn ula_step(&mut self, step: f64) {
        for ((c, &l), &ctr) in self.coords.iter_mut().zip(&self.lambda).zip(&self.center) {
            let a = 1.0 - step * l;
            c.mean_x = ctr + a * (c.mean_x - ctr);
            c.var_x = a * a * c.var_x + 2.0 * step;
        }
    }

    /// x-marginal as a summary.
    pub fn x_summary(&self) -> GaussianSummary {
        let d = self.dim();
        GaussianSummary::new_unchecked(
            DVector::from_iterator(d, self.coords.iter().map(|c| c.mean_x)),
            DMatrix::from_diagonal(&DVector::from_iterator(d, self.coords.iter().map(|c| c.var_x))),
        )
    }

    /// Joint law of `(x, v)` as a 2d-dimensional summary.
    pub fn joint_summary(&self) -> GaussianSummary {
        let d = self.dim();
        let mut mean = DVector::zeros(2 * d);
        let mut cov = DMatrix::zeros(2 * d, 2 * d);
        for (i, c) in self.coords.iter().enumerate() {
            mean[i] = c.mean_x;
            mean[d + i] = c.mean_v;
            cov[(i, i)] = c.var_x;
            cov[(d + i, d + i)] = c.var_v;
            cov[(i, d + i)] = c.cov_xv;
            cov[(d + i, i)] = c.cov_xv;
        }
        GaussianSummary::new_unchecked(mean, cov)
    }

    /// W₂ between the x-marginal and `N(c, H⁻¹)`.
    pub fn x_w2_to_stationary(&self) -> f64 {
        self.coords
            .iter()
            .zip(&self.lambda)
            .zip(&self.center)
            .map(|((c, &l), &ctr)| {
                let dm = c.mean_x - ctr;
                let ds = c.var_x.max(0.0).sqrt() - l.recip().sqrt();
                dm * dm + ds * ds
            })
            .sum::<f64>()
            .sqrt()
    }

    /// W₂ between the joint law and the stationary law.
    pub fn joint_w2_to_stationary(&self) -> f64 {
        let b_v = 1.0 / self.smoothness;
        self.coords
            .iter()
            .zip(&self.lambda)
            .zip(&self.center)
            .map(|((c, &l), &ctr)| {
                let b_x = 1.0 / l;
                let dm = (c.mean_x - ctr).powi(2) + c.mean_v.powi(2);
                // tr √M for a 2×2 PSD M is √(tr M + 2√det M).
                let det_a = (c.var_x * c.var_v - c.cov_xv * c.cov_xv).max(0.0);
                let tr_m = c.var_x * b_x + c.var_v * b_v;
                let root = (tr_m + 2.0 * (det_a * b_x * b_v).sqrt()).max(0.0).sqrt();
                let bures = c.var_x + c.var_v + b_x + b_v - 2.0 * root;
                dm + bures.max(0.0)
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// First iteration at which a law reaches x-marginal W₂ ≤ `eps`, stepping with `step`.
///
/// Returns `None` if it does not happen within `max_iterations`.
pub fn iterations_to_accuracy(
    mut law: GaussianLaw,
    eps: f64,
    max_iterations: usize,
    mut step: impl FnMut(&mut GaussianLaw),
) -> Option<usize> {
    for n in 0..=max_iterations {
        if law.x_w2_to_stationary() <= eps {
            return Some(n);
        }
        step(&mut law);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::ChainState;
    use crate::metrics::w2_gaussian;
    use crate::model::TargetModel;
    use crate::rng::{fill_normals, ChainRng};
    use rand::SeedableRng;

    fn diag() -> TargetModel {
        TargetModel::diag_quadratic(vec![1.0, 4.0], vec![0.5, -1.0]).unwrap()
    }

    #[test]
    fn rejects_non_quadratic() {
        let t = TargetModel::log_cosh(2, 1.0, 2.0).unwrap();
        assert!(GaussianLaw::dirac(&t, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn stationary_law_has_zero_distance() {
        let t = diag();
        let law = GaussianLaw::stationary(&t).unwrap();
        assert!(law.x_w2_to_stationary() < 1e-15);
        assert!(law.joint_w2_to_stationary() < 1e-7);
        let mut moved = law.clone();
        moved.kernel_steps(0.1, 1, 0.0).unwrap();
        assert!(moved.joint_w2_to_stationary() > 0.0);
    }

    #[test]
    fn closed_form_w2_matches_bures() {
        let t = diag();
        let mut law = GaussianLaw::dirac(&t, &[2.0, 1.0]).unwrap();
        law.kernel_steps(0.2, 7, 0.3).unwrap();
        let joint_ref = crate::metrics::stationary_joint_summary(&t).unwrap();
        let j = w2_gaussian(&law.joint_summary(), &joint_ref).unwrap();
        assert!((j - law.joint_w2_to_stationary()).abs() < 1e-9, "{j}");
        let x = w2_gaussian(&law.x_summary(), &t.stationary_x_summary().unwrap()).unwrap();
        assert!((x - law.x_w2_to_stationary()).abs() < 1e-9);
        assert!(law.joint_w2_to_stationary() >= law.x_w2_to_stationary());
    }

    #[test]
    fn one_step_drift_from_stationarity_is_second_order() {
        let t = TargetModel::iso_quadratic(2, 1.0, vec![0.0, 0.0]).unwrap();
        let steps = [0.4, 0.2, 0.1, 0.05];
        let drift: Vec<f64> = steps
            .iter()
            .map(|&h| {
                let mut law = GaussianLaw::stationary(&t).unwrap();
                law.kernel_steps(h, 1, 0.0).unwrap();
                law.joint_w2_to_stationary()
            })
            .collect();
        let xs: Vec<f64> = steps.iter().map(|h| h.ln()).collect();
        let ys: Vec<f64> = drift.iter().map(|w| w.ln()).collect();
        let slope = crate::report::fit_slope(&xs, &ys).unwrap();
        assert!((1.5..=2.5).contains(&slope), "{slope}");
    }

    #[test]
    fn ula_law_matches_ar1_stationary_variance() {
        let t = TargetModel::iso_quadratic(1, 1.0, vec![0.0]).unwrap();
        let mut law = GaussianLaw::dirac(&t, &[3.0]).unwrap();
        for _ in 0..2000 {
            law.ula_step(0.1);
        }
        let c = law.coordinates()[0];
        assert!((c.var_x - 2.0 * 0.1 / (1.0 - 0.9f64.powi(2))).abs() < 1e-12);
        assert!(c.mean_x.abs() < 1e-12);
    }

    #[test]
    fn matches_monte_carlo_ensemble() {
        let t = diag();
        let step = 0.3;
        let n = 20;
        let sigma2 = 0.5;
        let k = KernelCoefficients::new(step, t.l()).unwrap();
        let mut law = GaussianLaw::dirac(&t, &[2.0, 1.0]).unwrap();
        law.kernel_steps(step, n, sigma2).unwrap();

        let m = 200_000;
        let mut rng = ChainRng::seed_from_u64(3);
        let mut sums = [0.0f64; 5];
        let mut z = [0.0; 4];
        let mut xi = [0.0; 2];
        let mut g = [0.0; 2];
        for _ in 0..m {
            let mut s = ChainState::at_rest(vec![2.0, 1.0]);
            for _ in 0..n {
                t.grad_into(&s.x, &mut g);
                fill_normals(&mut rng, &mut xi);
                for (gi, e) in g.iter_mut().zip(&xi) {
                    *gi += sigma2.sqrt() * e;
                }
                fill_normals(&mut rng, &mut z);
                k.advance(&mut s.x, &mut s.v, &g, &z);
            }
            sums[0] += s.x[1];
            sums[1] += s.v[1];
            sums[2] += s.x[1] * s.x[1];
            sums[3] += s.x[1] * s.v[1];
            sums[4] += s.v[1] * s.v[1];
        }
        let mf = m as f64;
        let (mx, mv) = (sums[0] / mf, sums[1] / mf);
        let c = law.coordinates()[1];
        assert!((mx - c.mean_x).abs() < 4.0 * (c.var_x / mf).sqrt());
        assert!((mv - c.mean_v).abs() < 4.0 * (c.var_v / mf).sqrt());
        assert!(((sums[2] / mf - mx * mx) / c.var_x - 1.0).abs() < 0.02);
        assert!(((sums[4] / mf - mv * mv) / c.var_v - 1.0).abs() < 0.02);
        let cov = sums[3] / mf - mx * mv;
        assert!((cov - c.cov_xv).abs() < 0.02 * (c.var_x * c.var_v).sqrt());
    }

    #[test]
    fn hitting_time_examples() {
        let t = TargetModel::iso_quadratic(2, 1.0, vec![0.0, 0.0]).unwrap();
        let start = GaussianLaw::stationary(&t).unwrap();
        assert_eq!(iterations_to_accuracy(start, 0.1, 10, |_| {}), Some(0));
        let far = GaussianLaw::dirac(&t, &[10.0, 10.0]).unwrap();
        assert_eq!(iterations_to_accuracy(far, 0.1, 10, |_| {}), None);
    }
}
