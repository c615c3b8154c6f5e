//! Exact one-step Gaussian transition of the frozen-gradient underdamped diffusion
//! with friction `γ = 2` and inverse mass `u = 1/L`.
//!
//! Conditioned on `(x, v)` and `g = ∇f(x)`, every coordinate `i` moves independently:
//!
//! ```text
//! E[v'] = e^{-2δ} v - (1/2L)(1 - e^{-2δ}) g
//! E[x'] = x + ½(1 - e^{-2δ}) v - (1/2L)(δ - ½(1 - e^{-2δ})) g
//! Var x' = (1/L)(δ - ¼e^{-4δ} - ¾ + e^{-2δ})
//! Var v' = (1/L)(1 - e^{-4δ})
//! Cov    = (1/2L)(1 + e^{-4δ} - 2e^{-2δ})
//! ```
//!
//! `Var x'` and the gradient weight on `x` cancel catastrophically for small `δ`;
//! below [`SERIES_THRESHOLD`] they are summed from their Taylor series.

use rand::Rng;
use serde::Serialize;

use crate::error::{check_dim, usage, Error, Result};
use crate::rng::fill_normals;

/// Largest step size accepted by the kernel.
pub const MAX_STEP: f64 = 1.0 - 1e-9;

/// Below this step size the cancelling coefficients use their power series.
pub const SERIES_THRESHOLD: f64 = 0.05;

const SERIES_TERMS: usize = 30;

/// Position/velocity pair of one chain.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct ChainState {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl ChainState {
    pub fn new(x: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        check_dim("velocity", v.len(), x.len())?;
        let s = Self { x, v };
        if !s.is_finite() {
            return usage("chain state has non-finite entries");
        }
        Ok(s)
    }

    /// Position `x` with zero velocity.
    pub fn at_rest(x: Vec<f64>) -> Self {
        let v = vec![0.0; x.len()];
        Self { x, v }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.v).all(|a| a.is_finite())
    }

    /// `|v|²`.
    pub fn kinetic(&self) -> f64 {
        self.v.iter().map(|a| a * a).sum()
    }
}

/// Scalar coefficients of the one-step transition at step size `δ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KernelCoefficients {
    step: f64,
    smoothness: f64,
    velocity_decay: f64,
    velocity_gradient: f64,
    position_velocity: f64,
    position_gradient: f64,
    var_x: f64,
    var_v: f64,
    cov_xv: f64,
    #[serde(skip)]
    chol: [f64; 3],
}

/// Σ_{k≥start} (-a)^k / k!
fn exp_tail(a: f64, start: usize) -> f64 {
    let mut term = 1.0;
    for k in 1..start {
        term *= -a / k as f64;
    }
    let mut sum = 0.0;
    for k in start..start + SERIES_TERMS {
        term *= -a / k as f64;
        sum += term;
    }
    sum
}

/// `δ - ½(1 - e^{-2δ})`, which is `δ² - ⅔δ³ + …`.
fn position_gradient_core(delta: f64) -> f64 {
    if delta < SERIES_THRESHOLD {
        // ½ Σ_{k≥2} (-2δ)^k / k!
        0.5 * exp_tail(2.0 * delta, 2)
    } else {
        delta + 0.5 * (-2.0 * delta).exp_m1()
    }
}

/// `δ - ¼e^{-4δ} - ¾ + e^{-2δ} = ∫₀^δ (1 - e^{-2s})² ds`, which is `(4/3)δ³ - 2δ⁴ + …`.
fn position_variance_core(delta: f64) -> f64 {
    if delta < SERIES_THRESHOLD {
        // Σ_{k≥3} [(-2δ)^k - (-4δ)^k / 4] / k!
        exp_tail(2.0 * delta, 3) - 0.25 * exp_tail(4.0 * delta, 3)
    } else {
        delta + (-2.0 * delta).exp_m1() - 0.25 * (-4.0 * delta).exp_m1()
    }
}

impl KernelCoefficients {
    /// Coefficients for step size `0 < δ < 1` and smoothness `L > 0`.
    pub fn new(step: f64, smoothness: f64) -> Result<Self> {
        if !(step.is_finite() && step > 0.0 && step <= MAX_STEP) {
            return usage(format!("step size must lie in (0, 1), got {step}"));
        }
        if !(smoothness.is_finite() && smoothness > 0.0) {
            return usage(format!("smoothness L must be positive, got {smoothness}"));
        }
        let l = smoothness;
        // 1 - e^{-2δ} and 1 - e^{-4δ} without cancellation.
        let p = -(-2.0 * step).exp_m1();
        let q = -(-4.0 * step).exp_m1();
        let mut c = Self {
            step,
            smoothness: l,
            velocity_decay: (-2.0 * step).exp(),
            velocity_gradient: p / (2.0 * l),
            position_velocity: 0.5 * p,
            position_gradient: position_gradient_core(step) / (2.0 * l),
            var_x: position_variance_core(step) / l,
            var_v: q / l,
            // 1 + e^{-4δ} - 2e^{-2δ} = (1 - e^{-2δ})²
            cov_xv: p * p / (2.0 * l),
            chol: [0.0; 3],
        };
        c.factorize()?;
        Ok(c)
    }

    fn factorize(&mut self) -> Result<()> {
        let det = self.var_x * self.var_v - self.cov_xv * self.cov_xv;
        if det < 0.0 {
            // The matrix is PSD analytically; only roundoff can get here.
            if det >= -1e-12 * self.var_x * self.var_v {
                self.cov_xv = self.cov_xv.signum() * (self.var_x * self.var_v).sqrt();
            } else {
                return Err(Error::Internal(format!(
                    "kernel covariance is indefinite at step {} (det {det:e})",
                    self.step
                )));
            }
        }
        let c11 = self.var_x.sqrt();
        let c21 = if c11 > 0.0 { self.cov_xv / c11 } else { 0.0 };
        let c22 = (self.var_v - c21 * c21).max(0.0).sqrt();
        self.chol = [c11, c21, c22];
        Ok(())
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    /// `e^{-2δ}`, weight of `v` in the velocity mean.
    pub fn velocity_decay(&self) -> f64 {
        self.velocity_decay
    }

    /// `(1/2L)(1 - e^{-2δ})`, weight of `-∇f` in the velocity mean.
    pub fn velocity_gradient(&self) -> f64 {
        self.velocity_gradient
    }

    /// `½(1 - e^{-2δ})`, weight of `v` in the position mean.
    pub fn position_velocity(&self) -> f64 {
        self.position_velocity
    }

    /// `(1/2L)(δ - ½(1 - e^{-2δ}))`, weight of `-∇f` in the position mean.
    pub fn position_gradient(&self) -> f64 {
        self.position_gradient
    }

    pub fn var_x(&self) -> f64 {
        self.var_x
    }

    pub fn var_v(&self) -> f64 {
        self.var_v
    }

    pub fn cov_xv(&self) -> f64 {
        self.cov_xv
    }

    /// Lower-triangular factor `[c11, c21, c22]` of the per-coordinate covariance.
    pub fn cholesky(&self) -> [f64; 3] {
        self.chol
    }

    /// Conditional mean `(E[x'], E[v'])` given the state and `∇f(x)`.
    pub fn conditional_moments(&self, state: &ChainState, grad: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim("velocity", state.v.len(), state.x.len())?;
        check_dim("gradient", grad.len(), state.x.len())?;
        let mut x = state.x.clone();
        let mut v = state.v.clone();
        for i in 0..x.len() {
            let (mx, mv) = self.mean_coordinate(x[i], v[i], grad[i]);
            x[i] = mx;
            v[i] = mv;
        }
        Ok((x, v))
    }

    #[inline]
    fn mean_coordinate(&self, x: f64, v: f64, g: f64) -> (f64, f64) {
        (
            x + self.position_velocity * v - self.position_gradient * g,
            self.velocity_decay * v - self.velocity_gradient * g,
        )
    }

    /// Draw the next state.
    pub fn step_state<R: Rng + ?Sized>(&self, state: &ChainState, grad: &[f64], rng: &mut R) -> Result<ChainState> {
        let mut z = vec![0.0; 2 * state.dim()];
        fill_normals(rng, &mut z);
        self.step_with_noise(state, grad, &z)
    }

    /// Same map as [`step_state`](Self::step_state) driven by caller-supplied standard
    /// normals: `z[..d]` feeds the position, `z[d..]` the velocity.
    pub fn step_with_noise(&self, state: &ChainState, grad: &[f64], z: &[f64]) -> Result<ChainState> {
        let d = state.dim();
        check_dim("velocity", state.v.len(), d)?;
        check_dim("gradient", grad.len(), d)?;
        check_dim("noise", z.len(), 2 * d)?;
        let mut next = state.clone();
        self.advance(&mut next.x, &mut next.v, grad, z);
        Ok(next)
    }

    /// In-place transition used by the samplers; lengths must already agree.
    #[inline]
    pub fn advance(&self, x: &mut [f64], v: &mut [f64], grad: &[f64], z: &[f64]) {
        let d = x.len();
        let [c11, c21, c22] = self.chol;
        for i in 0..d {
            let (mx, mv) = self.mean_coordinate(x[i], v[i], grad[i]);
            let (zx, zv) = (z[i], z[d + i]);
            x[i] = mx + c11 * zx;
            v[i] = mv + c21 * zx + c22 * zv;
        }
    }
}

/// Convenience wrapper matching the coefficient table.
pub fn coefficients(step: f64, smoothness: f64) -> Result<KernelCoefficients> {
    KernelCoefficients::new(step, smoothness)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{chain_stream, ChainRng, StreamPurpose};
    use rand::SeedableRng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    // (δ, L·b_x, L·σ_xx, L·σ_xv) at unit L, 50-digit reference arithmetic.
    #[allow(clippy::excessive_precision)]
    const REFERENCE: &[(f64, f64, f64, f64)] = &[
        (1e-8, 4.9999999666666668333e-17, 1.33333331333333352e-24, 1.9999999600000004667e-16),
        (1e-7, 4.9999996666666833333e-15, 1.333333133333352e-21, 1.9999996000000466667e-14),
        (1e-6, 4.9999966666683333327e-13, 1.3333313333351999987e-18, 1.9999960000046666627e-12),
        (1e-5, 4.9999666668333326667e-11, 1.3333133335199986667e-15, 1.9999600004666626667e-10),
        (1e-4, 4.9996666833326666889e-9, 1.3331333519986667454e-12, 1.9996000466626669422e-8),
        (5e-4, 1.2495834374791701384e-7, 1.665417249791728159e-10, 4.9950029154170970973e-7),
        (1e-3, 4.9966683326668888254e-7, 1.3313351986674535684e-9, 1.996004662669420623e-6),
        (2e-2, 0.0001973597880808023598, 0.000010352555664263711521, 0.00076873404099468201617),
        (0.05, 0.0012093545089898932911, 0.00015472976646410849677, 0.0045279585030313561707),
    ];

    #[test]
    fn small_step_path_matches_reference() {
        for &(d, bx, sxx, sxv) in REFERENCE {
            let c = KernelCoefficients::new(d, 1.0).unwrap();
            assert!(rel(c.position_gradient(), bx) <= 1e-10, "b_x at {d}");
            assert!(rel(c.var_x(), sxx) <= 1e-10, "σ_xx at {d}");
            assert!(rel(c.cov_xv(), sxv) <= 1e-10, "σ_xv at {d}");
        }
    }

    #[test]
    fn branches_agree_at_threshold() {
        let t = SERIES_THRESHOLD;
        for d in [t * (1.0 - 1e-9), t, t * 0.5, t * 0.9] {
            let series = (0.5 * exp_tail(2.0 * d, 2), exp_tail(2.0 * d, 3) - 0.25 * exp_tail(4.0 * d, 3));
            let closed = (d + 0.5 * (-2.0 * d).exp_m1(), d + (-2.0 * d).exp_m1() - 0.25 * (-4.0 * d).exp_m1());
            assert!(rel(series.0, closed.0) < 1e-12);
            assert!(rel(series.1, closed.1) < 1e-10);
        }
    }

    #[test]
    fn coefficient_example_half_step() {
        let c = KernelCoefficients::new(0.5, 2.0).unwrap();
        assert!(rel(c.var_v(), 0.432_332_358_381_693_65) < 1e-14);
        assert!(rel(c.cov_xv(), 0.099_894_100_223_432_01) < 1e-14);
        assert!(rel(c.var_x(), 0.042_022_810_181_144_57) < 1e-13);
    }

    #[test]
    fn zero_step_limit() {
        let c = KernelCoefficients::new(1e-14, 1.0).unwrap();
        assert!((c.velocity_decay() - 1.0).abs() < 1e-13);
        for v in [c.velocity_gradient(), c.position_velocity(), c.position_gradient(), c.var_x(), c.var_v(), c.cov_xv()]
        {
            assert!(v.abs() < 1e-13);
        }
    }

    #[test]
    fn covariance_is_psd_on_grid() {
        for l in [0.1, 1.0, 7.5] {
            for k in 1..1000 {
                let d = k as f64 / 1000.0;
                let c = KernelCoefficients::new(d, l).unwrap();
                assert!(c.var_x() > 0.0 && c.var_v() > 0.0);
                assert!(c.var_x() * c.var_v() >= c.cov_xv() * c.cov_xv());
            }
        }
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(KernelCoefficients::new(0.0, 1.0).is_err());
        assert!(KernelCoefficients::new(-0.1, 1.0).is_err());
        assert!(KernelCoefficients::new(1.0, 1.0).is_err());
        assert!(KernelCoefficients::new(0.5, 0.0).is_err());
        assert!(KernelCoefficients::new(f64::NAN, 1.0).is_err());
        assert!(KernelCoefficients::new(MAX_STEP, 1.0).is_ok());
    }

    #[test]
    fn conditional_mean_examples() {
        let c = KernelCoefficients::new(0.5, 2.0).unwrap();
        let s = ChainState::new(vec![0.0], vec![1.0]).unwrap();
        let (mx, mv) = c.conditional_moments(&s, &[0.0]).unwrap();
        assert!((mx[0] - 0.316_060_279_414_278_84).abs() < 1e-15);
        assert!((mv[0] - 0.367_879_441_171_442_32).abs() < 1e-15);

        let s = ChainState::at_rest(vec![0.0]);
        let (mx, mv) = c.conditional_moments(&s, &[2.0]).unwrap();
        assert!((mv[0] + 0.316_060_279_414_278_84).abs() < 1e-15);
        assert!((mx[0] + 0.091_969_860_292_860_58).abs() < 1e-15);

        // Drift-free fixed point.
        let s = ChainState::at_rest(vec![1.5, -2.0]);
        let (mx, mv) = c.conditional_moments(&s, &[0.0, 0.0]).unwrap();
        assert_eq!(mx, s.x);
        assert_eq!(mv, vec![0.0, 0.0]);

        assert!(c.conditional_moments(&s, &[0.0]).is_err());
    }

    #[test]
    fn zero_noise_gives_conditional_mean() {
        let c = KernelCoefficients::new(0.3, 1.5).unwrap();
        let s = ChainState::new(vec![0.4, -1.0], vec![0.2, 0.7]).unwrap();
        let g = [0.1, -0.3];
        let (mx, mv) = c.conditional_moments(&s, &g).unwrap();
        let next = c.step_with_noise(&s, &g, &[0.0; 4]).unwrap();
        assert_eq!(next.x, mx);
        assert_eq!(next.v, mv);
        assert!(c.step_with_noise(&s, &g, &[0.0; 3]).is_err());
    }

    #[test]
    fn degenerate_covariance_gives_conditional_mean() {
        let mut c = KernelCoefficients::new(0.3, 1.0).unwrap();
        c.var_x = 0.0;
        c.var_v = 0.0;
        c.cov_xv = 0.0;
        c.factorize().unwrap();
        let s = ChainState::new(vec![0.4], vec![0.2]).unwrap();
        let mut rng = ChainRng::seed_from_u64(3);
        let next = c.step_state(&s, &[0.5], &mut rng).unwrap();
        let (mx, mv) = c.conditional_moments(&s, &[0.5]).unwrap();
        assert_eq!((next.x, next.v), (mx, mv));
    }

    #[test]
    fn indefinite_covariance_is_internal_error() {
        let mut c = KernelCoefficients::new(0.3, 1.0).unwrap();
        c.cov_xv = 10.0;
        assert!(matches!(c.factorize(), Err(Error::Internal(_))));
        // Roundoff-sized violations are clamped to a singular matrix.
        let mut c = KernelCoefficients::new(0.3, 1.0).unwrap();
        c.cov_xv = (c.var_x * c.var_v).sqrt() * (1.0 + 1e-15);
        c.factorize().unwrap();
        assert!(c.var_x * c.var_v - c.cov_xv * c.cov_xv >= -1e-30);
    }

    #[test]
    fn noise_replay_is_deterministic() {
        let c = KernelCoefficients::new(0.2, 3.0).unwrap();
        let s = ChainState::new(vec![1.0, 2.0, 3.0], vec![0.0, -1.0, 0.5]).unwrap();
        let g = [0.5, 0.1, -0.2];
        let mut rng = chain_stream(9, 0, 0, StreamPurpose::Diffusion);
        let mut recorded = vec![0.0; 6];
        fill_normals(&mut rng.clone(), &mut recorded);
        let drawn = c.step_state(&s, &g, &mut rng).unwrap();
        let replay_a = c.step_with_noise(&s, &g, &recorded).unwrap();
        let replay_b = c.step_with_noise(&s, &g, &recorded).unwrap();
        assert_eq!(drawn, replay_a);
        assert_eq!(replay_a, replay_b);
    }

    #[test]
    fn one_step_moments_monte_carlo() {
        let c = KernelCoefficients::new(0.5, 2.0).unwrap();
        let s = ChainState::new(vec![0.3], vec![-0.7]).unwrap();
        let g = [1.2];
        let (mx, mv) = c.conditional_moments(&s, &g).unwrap();
        let n = 1_000_000;
        let mut rng = ChainRng::seed_from_u64(2024);
        let mut z = [0.0; 2];
        let (mut sx, mut sv, mut sxx, mut svv, mut sxv) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let (mut x, mut v) = ([0.0], [0.0]);
        for _ in 0..n {
            x[0] = s.x[0];
            v[0] = s.v[0];
            fill_normals(&mut rng, &mut z);
            c.advance(&mut x, &mut v, &g, &z);
            let (dx, dv) = (x[0] - mx[0], v[0] - mv[0]);
            sx += dx;
            sv += dv;
            sxx += dx * dx;
            svv += dv * dv;
            sxv += dx * dv;
        }
        let nf = n as f64;
        assert!((sx / nf).abs() <= 4.0 * (c.var_x() / nf).sqrt());
        assert!((sv / nf).abs() <= 4.0 * (c.var_v() / nf).sqrt());
        assert!(rel(sxx / nf, c.var_x()) < 0.01);
        assert!(rel(svv / nf, c.var_v()) < 0.01);
        assert!(rel(sxv / nf, c.cov_xv()) < 0.01);
    }
}
