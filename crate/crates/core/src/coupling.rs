//! Synchronous couplings of the continuous and frozen-gradient diffusions.
//!
//! Both integrators are Euler–Maruyama with a fine step `h`, reading their
//! Gaussian increments from a caller-owned buffer so that coupled paths see
//! exactly the same noise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, usage, Result};
use crate::kernel::ChainState;
use crate::model::TargetModel;
use crate::rng::{chain_stream, fill_normals, ChainRng, StreamPurpose};
use crate::sampler::{run, RunConfig};

/// Default ratio between the chain step `δ` and the fine integrator step.
pub const FINE_STEPS_PER_DELTA: usize = 1024;

/// Two chain states driven by the same increments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledPair {
    pub first: ChainState,
    pub second: ChainState,
}

impl CoupledPair {
    pub fn new(first: ChainState, second: ChainState) -> Result<Self> {
        check_dim("coupled state", second.dim(), first.dim())?;
        Ok(Self { first, second })
    }

    /// `|z|² + |z + ψ|²` with `z = x - y`, `ψ = v - w`.
    pub fn lyapunov(&self) -> f64 {
        let (a, b) = (&self.first, &self.second);
        (0..a.dim())
            .map(|i| {
                let z = a.x[i] - b.x[i];
                let psi = a.v[i] - b.v[i];
                z * z + (z + psi) * (z + psi)
            })
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSample {
    pub t: f64,
    pub value: f64,
}

/// Standard normal increments for `steps` fine steps in dimension `dim`.
pub fn draw_increments(rng: &mut ChainRng, steps: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; steps * dim];
    fill_normals(rng, &mut out);
    out
}

/// Merge consecutive pairs of fine increments into increments for twice the step.
pub fn coarsen_increments(fine: &[f64], dim: usize) -> Vec<f64> {
    let steps = fine.len() / dim / 2;
    let mut out = vec![0.0; steps * dim];
    for k in 0..steps {
        for i in 0..dim {
            out[k * dim + i] = (fine[2 * k * dim + i] + fine[(2 * k + 1) * dim + i]) / std::f64::consts::SQRT_2;
        }
    }
    out
}

fn fine_steps(t_end: f64, h: f64) -> Result<usize> {
    if !(t_end.is_finite() && t_end > 0.0 && h.is_finite() && h > 0.0) {
        return usage(format!("need t_end > 0 and h > 0, got t_end={t_end}, h={h}"));
    }
    if h > t_end / 64.0 * (1.0 + 1e-12) {
        return usage(format!("fine step {h} exceeds t_end/64 = {}", t_end / 64.0));
    }
    Ok((t_end / h).round() as usize)
}

#[derive(Clone, Copy)]
enum Drift {
    Exact,
    Frozen,
}

fn integrate(
    target: &TargetModel,
    state: &ChainState,
    t_end: f64,
    h: f64,
    increments: &[f64],
    drift: Drift,
) -> Result<ChainState> {
    let d = target.dim();
    check_dim("state", state.dim(), d)?;
    check_finite("state", &state.x)?;
    check_finite("state", &state.v)?;
    let n = fine_steps(t_end, h)?;
    if increments.len() < n * d {
        return usage(format!("increment buffer holds {} values, {} needed", increments.len(), n * d));
    }
    let mut s = state.clone();
    let mut g = vec![0.0; d];
    target.grad_into(&s.x, &mut g);
    path(target, &mut s, &mut g, h, &increments[..n * d], drift);
    Ok(s)
}

// Euler–Maruyama steps, one per `dim`-sized chunk of increments.
fn path(target: &TargetModel, s: &mut ChainState, g: &mut [f64], h: f64, increments: &[f64], drift: Drift) {
    let d = s.dim();
    let u = 1.0 / target.l();
    let scale = (4.0 * h * u).sqrt();
    for zeta in increments.chunks_exact(d) {
        if let Drift::Exact = drift {
            target.grad_into(&s.x, g);
        }
        for i in 0..d {
            s.v[i] += h * (-2.0 * s.v[i] - u * g[i]) + scale * zeta[i];
            s.x[i] += h * s.v[i];
        }
    }
}

/// Euler–Maruyama path of the continuous diffusion up to `t_end`.
pub fn integrate_exact_sde(
    target: &TargetModel,
    state: &ChainState,
    t_end: f64,
    h: f64,
    increments: &[f64],
) -> Result<ChainState> {
    integrate(target, state, t_end, h, increments, Drift::Exact)
}

/// Same as [`integrate_exact_sde`] with the gradient frozen at the initial position.
pub fn integrate_frozen_sde(
    target: &TargetModel,
    state: &ChainState,
    t_end: f64,
    h: f64,
    increments: &[f64],
) -> Result<ChainState> {
    integrate(target, state, t_end, h, increments, Drift::Frozen)
}

/// `ℓ(t)` along a synchronously coupled pair of continuous paths.
///
/// Samples are taken every `record_every` fine steps, starting at `t = 0`.
pub fn contraction_experiment(
    target: &TargetModel,
    pair: &CoupledPair,
    t_end: f64,
    h: f64,
    increments: &[f64],
    record_every: usize,
) -> Result<Vec<LyapunovSample>> {
    let d = target.dim();
    check_dim("coupled state", pair.first.dim(), d)?;
    let n = fine_steps(t_end, h)?;
    if increments.len() < n * d {
        return usage(format!("increment buffer holds {} values, {} needed", increments.len(), n * d));
    }
    let every = record_every.max(1);
    let mut a = pair.first.clone();
    let mut b = pair.second.clone();
    let mut ga = vec![0.0; d];
    let mut gb = vec![0.0; d];
    let mut out = vec![LyapunovSample { t: 0.0, value: pair.lyapunov() }];
    for (k, zeta) in increments[..n * d].chunks_exact(d).enumerate() {
        path(target, &mut a, &mut ga, h, zeta, Drift::Exact);
        path(target, &mut b, &mut gb, h, zeta, Drift::Exact);
        if (k + 1) % every == 0 || k + 1 == n {
            let cur = CoupledPair { first: a.clone(), second: b.clone() };
            out.push(LyapunovSample { t: (k + 1) as f64 * h, value: cur.lyapunov() });
        }
    }
    Ok(out)
}

/// Mean `ℓ(t)` over `paths` independent noise paths.
pub fn contraction_average(
    target: &TargetModel,
    pair: &CoupledPair,
    t_end: f64,
    h: f64,
    record_every: usize,
    paths: usize,
    seed: u64,
) -> Result<Vec<LyapunovSample>> {
    let n = fine_steps(t_end, h)?;
    let d = target.dim();
    let runs: Vec<Vec<LyapunovSample>> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = chain_stream(seed, p as u64, 0, StreamPurpose::Diffusion);
            let inc = draw_increments(&mut rng, n, d);
            contraction_experiment(target, pair, t_end, h, &inc, record_every)
        })
        .collect::<Result<_>>()?;
    let Some(first) = runs.first() else {
        return usage("need at least one noise path");
    };
    Ok(first
        .iter()
        .enumerate()
        .map(|(j, s)| LyapunovSample { t: s.t, value: runs.iter().map(|r| r[j].value).sum::<f64>() / paths as f64 })
        .collect())
}

/// Largest `ℓ(t)e^{t/κ}/ℓ(0)` over the samples; at most 1 when the contraction holds.
pub fn envelope_ratio(samples: &[LyapunovSample], kappa: f64) -> f64 {
    let l0 = samples.first().map_or(0.0, |s| s.value);
    if l0 == 0.0 {
        return if samples.iter().all(|s| s.value == 0.0) { 0.0 } else { f64::INFINITY };
    }
    samples.iter().map(|s| s.value * (s.t / kappa).exp() / l0).fold(0.0, f64::max)
}

/// Coupled deviation between the continuous and frozen-gradient processes after one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationResult {
    pub step: f64,
    /// `√(mean |x_δ - x̃_δ|² + |v_δ - ṽ_δ|²)` at fine step `h`.
    pub measured: f64,
    /// Same quantity at `h/2`.
    pub measured_half: f64,
    /// `δ²√(2E_K/5)`.
    pub bound: f64,
}

impl DiscretizationResult {
    pub fn ratio(&self) -> f64 {
        self.measured / self.bound
    }

    /// Relative change of the measurement when the fine step is halved.
    pub fn richardson_change(&self) -> f64 {
        (self.measured - self.measured_half).abs() / self.measured_half.max(f64::MIN_POSITIVE)
    }
}

/// One-step discretization error over an initial ensemble, with fine step `δ/fine_steps`.
pub fn discretization_experiment(
    target: &TargetModel,
    initial: &[ChainState],
    step: f64,
    fine_steps: usize,
    kinetic_bound: f64,
    seed: u64,
) -> Result<DiscretizationResult> {
    if initial.is_empty() {
        return usage("initial ensemble is empty");
    }
    if fine_steps < 64 {
        return usage("need at least 64 fine steps per chain step");
    }
    let d = target.dim();
    let h = step / fine_steps as f64;
    let sq: Vec<(f64, f64)> = initial
        .par_iter()
        .enumerate()
        .map(|(c, s0)| {
            let mut rng = chain_stream(seed, c as u64, 0, StreamPurpose::Diffusion);
            let fine = draw_increments(&mut rng, 2 * fine_steps, d);
            let coarse = coarsen_increments(&fine, d);
            let dev = |inc: &[f64], h: f64| -> Result<f64> {
                let a = integrate_exact_sde(target, s0, step, h, inc)?;
                let b = integrate_frozen_sde(target, s0, step, h, inc)?;
                Ok(sq_dev(&a, &b))
            };
            Ok((dev(&coarse, h)?, dev(&fine, h / 2.0)?))
        })
        .collect::<Result<_>>()?;
    let m = sq.len() as f64;
    Ok(DiscretizationResult {
        step,
        measured: (sq.iter().map(|p| p.0).sum::<f64>() / m).sqrt(),
        measured_half: (sq.iter().map(|p| p.1).sum::<f64>() / m).sqrt(),
        bound: step * step * (2.0 * kinetic_bound / 5.0).sqrt(),
    })
}

fn sq_dev(a: &ChainState, b: &ChainState) -> f64 {
    let dx: f64 = a.x.iter().zip(&b.x).map(|(p, q)| (p - q) * (p - q)).sum();
    let dv: f64 = a.v.iter().zip(&b.v).map(|(p, q)| (p - q) * (p - q)).sum();
    dx + dv
}

/// Initial ensemble near `p*`: exact draws on quadratics, otherwise the end of a long chain run.
pub fn near_stationary_ensemble(target: &TargetModel, chains: usize, seed: u64) -> Result<Vec<ChainState>> {
    if target.is_quadratic() {
        return Ok((0..chains)
            .map(|c| {
                let mut rng = chain_stream(seed, c as u64, 0, StreamPurpose::Setup);
                target.sample_stationary(&mut rng).expect("quadratic target")
            })
            .collect());
    }
    // 40 units of time at δ = 0.05 mixes any κ ≤ 8 target.
    let horizon = 40.0 * target.kappa().max(1.0);
    let step = 0.05;
    let plan = crate::planner::SamplerPlan {
        step,
        iterations: (horizon / step).ceil() as usize,
        mode: crate::planner::PlanMode::Exact,
    };
    let cfg = RunConfig::new(chains, seed, plan).with_stride(usize::MAX);
    let trace = run(target, &cfg)?;
    let last = trace.final_snapshot();
    Ok((0..chains).map(|c| last.state(c)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelCoefficients;
    use crate::metrics::w2_empirical;
    use crate::report::fit_slope;
    use proptest::prelude::*;
    use rand::SeedableRng;

    // Frozen at the minimizer, the drift has no gradient term.
    fn flat(dim: usize) -> TargetModel {
        TargetModel::iso_quadratic(dim, 1.0, vec![0.0; dim]).unwrap()
    }

    #[test]
    fn noise_free_velocity_decay() {
        let t = flat(1);
        let h: f64 = 1e-5;
        let n = (1.0 / h).round() as usize;
        let s0 = ChainState::new(vec![0.0], vec![1.0]).unwrap();
        let s = integrate_frozen_sde(&t, &s0, 1.0, h, &vec![0.0; n]).unwrap();
        let e2 = (-2.0f64).exp();
        assert!((s.v[0] - e2).abs() < 1e-3);
        assert!((s.x[0] - 0.5 * (1.0 - e2)).abs() < 1e-3);
    }

    #[test]
    fn equilibrium_is_fixed() {
        let t = TargetModel::diag_quadratic(vec![1.0, 3.0], vec![0.5, -0.5]).unwrap();
        let s0 = ChainState::at_rest(vec![0.5, -0.5]);
        let s = integrate_exact_sde(&t, &s0, 1.0, 1.0 / 128.0, &[0.0; 256]).unwrap();
        assert_eq!(s, s0);
    }

    #[test]
    fn rejects_short_buffers_and_coarse_steps() {
        let t = flat(2);
        let s0 = ChainState::at_rest(vec![0.0, 0.0]);
        assert!(integrate_exact_sde(&t, &s0, 1.0, 1.0 / 64.0, &[0.0; 127]).is_err());
        assert!(integrate_exact_sde(&t, &s0, 1.0, 1.0 / 32.0, &[0.0; 64]).is_err());
        assert!(integrate_exact_sde(&t, &s0, 1.0, 1.0 / 64.0, &[0.0; 128]).is_ok());
    }

    #[test]
    fn frozen_path_tracks_kernel_mean() {
        let t = TargetModel::diag_quadratic(vec![1.0, 2.0], vec![0.0, 0.0]).unwrap();
        let s0 = ChainState::new(vec![1.0, -0.5], vec![0.3, 0.7]).unwrap();
        let delta = 0.5;
        let k = KernelCoefficients::new(delta, t.l()).unwrap();
        let g = t.grad(&s0.x).unwrap();
        let (mx, mv) = k.conditional_moments(&s0, &g).unwrap();
        for j in [8, 10, 12] {
            let h = delta / (1 << j) as f64;
            let n = 1 << j;
            let s = integrate_frozen_sde(&t, &s0, delta, h, &vec![0.0; 2 * n]).unwrap();
            let norm = (s0.x.iter().chain(&s0.v).map(|a| a * a).sum::<f64>()).sqrt();
            let err = s.x.iter().zip(&mx).chain(s.v.iter().zip(&mv)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 5.0 * h * (1.0 + norm), "j={j} err={err}");
        }
    }

    #[test]
    fn strong_error_shrinks_with_the_fine_step() {
        let t = TargetModel::log_cosh(2, 1.0, 3.0).unwrap();
        let s0 = ChainState::new(vec![0.8, -1.2], vec![0.1, 0.4]).unwrap();
        let delta = 0.25;
        let paths = 64;
        let mut errs = [0.0; 6];
        for p in 0..paths {
            let mut rng = ChainRng::seed_from_u64(5 + p);
            let mut inc = draw_increments(&mut rng, 1 << 12, 2);
            let reference = integrate_exact_sde(&t, &s0, delta, delta / 4096.0, &inc).unwrap();
            for (k, j) in (6..12).rev().enumerate() {
                inc = coarsen_increments(&inc, 2);
                let s = integrate_exact_sde(&t, &s0, delta, delta / (1 << j) as f64, &inc).unwrap();
                errs[k] += sq_dev(&s, &reference) / paths as f64;
            }
        }
        let hs: Vec<f64> = (6..12).rev().map(|j| delta / (1 << j) as f64).collect();
        let rms: Vec<f64> = errs.iter().map(|e| e.sqrt()).collect();
        assert!(rms.windows(2).all(|w| w[1] > w[0]), "{rms:?}");
        let order = crate::report::fit_log_log(&hs, &rms).unwrap();
        assert!((0.8..=1.3).contains(&order), "{order}");
    }

    #[test]
    fn frozen_sde_reproduces_kernel_law() {
        let t = TargetModel::iso_quadratic(1, 2.0, vec![0.0]).unwrap();
        let s0 = ChainState::new(vec![1.0], vec![0.5]).unwrap();
        let delta = 0.5;
        let fine = 256;
        let h = delta / fine as f64;
        let k = KernelCoefficients::new(delta, t.l()).unwrap();
        let (mx, mv) = k.conditional_moments(&s0, &t.grad(&s0.x).unwrap()).unwrap();
        let m = 100_000;
        let ends: Vec<(f64, f64)> = (0..m)
            .into_par_iter()
            .map(|c| {
                let mut rng = chain_stream(77, c as u64, 0, StreamPurpose::Diffusion);
                let inc = draw_increments(&mut rng, fine, 1);
                let s = integrate_frozen_sde(&t, &s0, delta, h, &inc).unwrap();
                (s.x[0], s.v[0])
            })
            .collect();
        let mf = m as f64;
        let ex = ends.iter().map(|e| e.0).sum::<f64>() / mf;
        let ev = ends.iter().map(|e| e.1).sum::<f64>() / mf;
        let vxx = ends.iter().map(|e| (e.0 - ex).powi(2)).sum::<f64>() / mf;
        let vvv = ends.iter().map(|e| (e.1 - ev).powi(2)).sum::<f64>() / mf;
        let cxv = ends.iter().map(|e| (e.0 - ex) * (e.1 - ev)).sum::<f64>() / mf;
        // Monte Carlo tolerance plus the O(h) Euler bias.
        assert!((ex - mx[0]).abs() < 4.0 * (k.var_x() / mf).sqrt() + 5.0 * h);
        assert!((ev - mv[0]).abs() < 4.0 * (k.var_v() / mf).sqrt() + 5.0 * h);
        assert!((vxx / k.var_x() - 1.0).abs() < 0.03, "{vxx} {}", k.var_x());
        assert!((vvv / k.var_v() - 1.0).abs() < 0.03, "{vvv} {}", k.var_v());
        assert!((cxv - k.cov_xv()).abs() < 0.03 * (k.var_x() * k.var_v()).sqrt());
    }

    #[test]
    fn identical_starts_cancel_noise_exactly() {
        let t = TargetModel::log_cosh(3, 1.0, 2.0).unwrap();
        let s = ChainState::new(vec![0.3, -1.0, 2.0], vec![0.0, 0.5, -0.2]).unwrap();
        let pair = CoupledPair::new(s.clone(), s).unwrap();
        let mut rng = ChainRng::seed_from_u64(1);
        let inc = draw_increments(&mut rng, 640, 3);
        let ls = contraction_experiment(&t, &pair, 1.0, 1.0 / 640.0, &inc, 10).unwrap();
        assert!(ls.iter().all(|l| l.value == 0.0));
        assert_eq!(ls.len(), 65);
    }

    fn pair(x: Vec<f64>, v: Vec<f64>) -> CoupledPair {
        let d = x.len();
        CoupledPair::new(ChainState::new(x, v).unwrap(), ChainState::at_rest(vec![0.0; d])).unwrap()
    }

    #[test]
    fn isotropic_contraction_rate() {
        let t = TargetModel::iso_quadratic(2, 1.0, vec![0.0, 0.0]).unwrap();
        let p = pair(vec![1.0, -0.5], vec![0.0, 0.0]);
        let ls = contraction_average(&t, &p, 5.0, 1e-3, 50, 100, 3).unwrap();
        let xs: Vec<f64> = ls.iter().map(|s| s.t).collect();
        let ys: Vec<f64> = ls.iter().map(|s| s.value.ln()).collect();
        let rate = fit_slope(&xs, &ys).unwrap();
        assert!(rate <= -0.9, "{rate}");
        assert!(envelope_ratio(&ls, 1.0) <= 1.05);
    }

    #[test]
    fn anisotropic_envelope() {
        let t = TargetModel::diag_quadratic(vec![1.0, 4.0], vec![0.0, 0.0]).unwrap();
        for (x, v) in [(vec![1.0, 1.0], vec![0.0, 0.0]), (vec![0.0, 1.0], vec![1.0, -1.0])] {
            let ls = contraction_average(&t, &pair(x, v), 20.0, 2e-3, 100, 100, 4).unwrap();
            assert!(envelope_ratio(&ls, 4.0) <= 1.05);
        }
    }

    #[test]
    fn envelope_ratio_edge_cases() {
        let zero = [LyapunovSample { t: 0.0, value: 0.0 }, LyapunovSample { t: 1.0, value: 0.0 }];
        assert_eq!(envelope_ratio(&zero, 1.0), 0.0);
        let grow = [LyapunovSample { t: 0.0, value: 1.0 }, LyapunovSample { t: 1.0, value: 1.0 }];
        assert!((envelope_ratio(&grow, 1.0) - 1f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn discretization_error_is_second_order_in_the_step() {
        let t = TargetModel::iso_quadratic(2, 1.0, vec![0.0, 0.0]).unwrap();
        let p0 = near_stationary_ensemble(&t, 1000, 9).unwrap();
        let ek = 26.0 * 2.0;
        let steps = [0.025, 0.05, 0.1, 0.2];
        let res: Vec<DiscretizationResult> =
            steps.iter().map(|&s| discretization_experiment(&t, &p0, s, 256, ek, 10).unwrap()).collect();
        for r in &res {
            assert!(r.measured <= r.bound);
            assert!(r.richardson_change() < 0.05, "{r:?}");
        }
        let xs: Vec<f64> = steps.iter().map(|s| s.ln()).collect();
        let ys: Vec<f64> = res.iter().map(|r| (r.measured * r.measured).ln()).collect();
        let slope = fit_slope(&xs, &ys).unwrap();
        assert!((3.5..=4.5).contains(&slope), "{slope}");
    }

    #[test]
    fn warm_ensemble_for_non_quadratic_target() {
        let t = TargetModel::log_cosh(2, 1.0, 2.0).unwrap();
        let p0 = near_stationary_ensemble(&t, 200, 1).unwrap();
        assert_eq!(p0.len(), 200);
        let ke = p0.iter().map(ChainState::kinetic).sum::<f64>() / 200.0;
        assert!(ke > 0.5 && ke < 2.0, "{ke}");
    }

    fn g_map(s: &ChainState) -> Vec<f64> {
        s.x.iter().cloned().chain(s.x.iter().zip(&s.v).map(|(x, v)| x + v)).collect()
    }

    fn stack(s: &ChainState) -> Vec<f64> {
        s.x.iter().chain(&s.v).cloned().collect()
    }

    proptest! {
        #[test]
        fn sandwich_inequality(seed in any::<u64>(), n in 1usize..7, d in 1usize..4) {
            let mut rng = ChainRng::seed_from_u64(seed);
            let mut draw = |scale: f64| -> Vec<ChainState> {
                (0..n).map(|_| {
                    let mut x = vec![0.0; d];
                    let mut v = vec![0.0; d];
                    fill_normals(&mut rng, &mut x);
                    fill_normals(&mut rng, &mut v);
                    v.iter_mut().for_each(|a| *a *= scale);
                    ChainState::new(x, v).unwrap()
                }).collect()
            };
            let a = draw(1.0);
            let b = draw(3.0);
            let plain = w2_empirical(
                &a.iter().map(stack).collect::<Vec<_>>(),
                &b.iter().map(stack).collect::<Vec<_>>(),
            ).unwrap();
            let mapped = w2_empirical(
                &a.iter().map(g_map).collect::<Vec<_>>(),
                &b.iter().map(g_map).collect::<Vec<_>>(),
            ).unwrap();
            prop_assert!(0.5 * plain <= mapped + 1e-12);
            prop_assert!(mapped <= 2.0 * plain + 1e-12);
        }
    }
}
