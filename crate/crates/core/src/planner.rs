//! Step sizes, iteration counts and bound constants from the convergence guarantees.
//!
//! With `S = d/m + D²` and `κ = L/m`:
//!
//! - exact gradients: `δ = ε/(104κ)·√(1/S)`, `n = ⌈(52κ²/ε)·√S·log(24S/ε)⌉`;
//! - stochastic gradients: `δ = min{(ε/κ)√(5/(479232·S)), ε²L²/(1440σ²dκ)}`,
//!   `n = ⌈(κ/δ)·log(36S/ε)⌉`;
//! - epochs: start from `ε₀ = 3S`, halve the step and double the steps each epoch.

use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::kernel::MAX_STEP;

/// Problem constants an accuracy plan is derived from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub dim: usize,
    pub m: f64,
    pub l: f64,
    /// Bound on `|x⁽⁰⁾ - x*|²`.
    pub d2: f64,
    /// Target W₂ accuracy.
    pub eps: f64,
    /// Per-coordinate gradient-noise variance; 0 for exact gradients.
    #[serde(default)]
    pub sigma2: f64,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.dim == 0 {
            bad.push("dim must be >= 1".to_string());
        }
        if !(self.m.is_finite() && self.m > 0.0) {
            bad.push(format!("m must be > 0 (got {})", self.m));
        }
        if !(self.l.is_finite() && self.l >= self.m) {
            bad.push(format!("l must be >= m (got {})", self.l));
        }
        if !(self.d2.is_finite() && self.d2 >= 0.0) {
            bad.push(format!("d2 must be >= 0 (got {})", self.d2));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            bad.push(format!("eps must be > 0 (got {})", self.eps));
        }
        if !(self.sigma2.is_finite() && self.sigma2 >= 0.0) {
            bad.push(format!("sigma2 must be >= 0 (got {})", self.sigma2));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            usage(format!("invalid problem: {}", bad.join("; ")))
        }
    }

    pub fn kappa(&self) -> f64 {
        self.l / self.m
    }

    /// `d/m + D²`.
    pub fn scale(&self) -> f64 {
        self.dim as f64 / self.m + self.d2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    Exact,
    Stochastic,
}

/// Fixed step size and iteration count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerPlan {
    pub step: f64,
    pub iterations: usize,
    pub mode: PlanMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Epoch {
    pub step: f64,
    pub iterations: usize,
}

/// Halving step sizes with doubling iteration counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSchedule {
    pub epochs: Vec<Epoch>,
    /// Initial-error proxy `ε₀`.
    pub eps0: f64,
}

impl EpochSchedule {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn total_iterations(&self) -> usize {
        self.epochs.iter().map(|e| e.iterations).sum()
    }

    /// Check `δᵢ₊₁ = δᵢ/2` and `nᵢ₊₁ = 2nᵢ` exactly.
    pub fn is_geometric(&self) -> bool {
        self.epochs.windows(2).all(|w| w[1].step == w[0].step / 2.0 && w[1].iterations == 2 * w[0].iterations)
    }
}

fn checked_step(step: f64, what: &str) -> Result<f64> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::Planning(format!("{what}: step size {step} is not positive")));
    }
    if step > MAX_STEP {
        return Err(Error::Planning(format!(
            "{what}: step size {step} is not below 1; the accuracy target is too loose for this problem"
        )));
    }
    Ok(step)
}

fn checked_count(n: f64, what: &str) -> Result<usize> {
    if !(n.is_finite() && n < 1e15) {
        return Err(Error::Planning(format!("{what}: iteration count {n} is not representable")));
    }
    Ok((n.ceil() as usize).max(1))
}

/// Plan for exact gradients.
pub fn plan_fixed(spec: &ProblemSpec) -> Result<SamplerPlan> {
    spec.validate()?;
    if spec.sigma2 != 0.0 {
        return usage("plan_fixed requires sigma2 = 0; use plan_stochastic");
    }
    let (k, s, eps) = (spec.kappa(), spec.scale(), spec.eps);
    let step = checked_step(eps / (104.0 * k) * (1.0 / s).sqrt(), "fixed plan")?;
    let n = (52.0 * k * k / eps) * s.sqrt() * (24.0 * s / eps).ln();
    Ok(SamplerPlan { step, iterations: checked_count(n, "fixed plan")?, mode: PlanMode::Exact })
}

/// Plan for gradients with additive noise of variance `σ²` per coordinate.
pub fn plan_stochastic(spec: &ProblemSpec) -> Result<SamplerPlan> {
    spec.validate()?;
    if spec.sigma2 <= 0.0 {
        return usage("plan_stochastic requires sigma2 > 0");
    }
    let (k, s, eps) = (spec.kappa(), spec.scale(), spec.eps);
    let discretization = (eps / k) * (5.0 / (479_232.0 * s)).sqrt();
    let noise = eps * eps * spec.l * spec.l / (1440.0 * spec.sigma2 * spec.dim as f64 * k);
    let step = checked_step(discretization.min(noise), "stochastic plan")?;
    let n = (k / step) * (36.0 * s / eps).ln();
    Ok(SamplerPlan { step, iterations: checked_count(n, "stochastic plan")?, mode: PlanMode::Stochastic })
}

/// Routes to [`plan_fixed`] or [`plan_stochastic`] on `σ²`.
pub fn plan(spec: &ProblemSpec) -> Result<SamplerPlan> {
    if spec.sigma2 > 0.0 {
        plan_stochastic(spec)
    } else {
        plan_fixed(spec)
    }
}

/// Epoch schedule that removes the log factor of the fixed plan.
pub fn plan_epochs(spec: &ProblemSpec) -> Result<EpochSchedule> {
    spec.validate()?;
    if spec.sigma2 != 0.0 {
        return usage("plan_epochs requires sigma2 = 0");
    }
    let (k, s) = (spec.kappa(), spec.scale());
    // Smallest admissible ε₀, nudged one ulp up to keep W₂(p⁰, p*) ≤ 3S < ε₀ strict.
    let eps0 = next_up(3.0 * s);
    let step1 = checked_step(eps0 / (208.0 * k) * (1.0 / s).sqrt(), "epoch plan")?;
    let n1 = checked_count((208.0 * k * k / eps0) * s.sqrt() * 16f64.ln(), "epoch plan")?;
    let ell = if spec.eps >= eps0 {
        1
    } else {
        // The tolerance absorbs the ulp nudge on ε₀, so ε = 3S/4 gives exactly 2 epochs.
        ((eps0 / spec.eps).log2() - 1e-9).ceil().max(1.0) as usize
    };
    if ell > 60 {
        return Err(Error::Planning(format!("epoch plan: {ell} epochs requested")));
    }
    let epochs = (0..ell).map(|i| Epoch { step: step1 / (1u64 << i) as f64, iterations: n1 << i }).collect();
    Ok(EpochSchedule { epochs, eps0 })
}

fn next_up(x: f64) -> f64 {
    debug_assert!(x.is_finite() && x > 0.0);
    f64::from_bits(x.to_bits() + 1)
}

/// Upper bound on total epoch-schedule work, `(416·log 16·κ²/ε)·√S`.
pub fn epoch_work_bound(spec: &ProblemSpec) -> f64 {
    416.0 * 16f64.ln() * spec.kappa().powi(2) / spec.eps * spec.scale().sqrt()
}

/// Kinetic-energy bound `E_K = 26(d/m + D²)`.
pub fn kinetic_energy_bound(spec: &ProblemSpec) -> f64 {
    26.0 * spec.scale()
}

/// Bound on `W₂²(p⁰, p*)`, `3(d/m + D²)`.
pub fn initial_distance_bound(spec: &ProblemSpec) -> f64 {
    3.0 * spec.scale()
}

/// Closed-form bound for sequences with `x²ₖ₊₁ ≤ (A xₖ + C)² + B²`:
/// `Aᵏx₀ + C/(1-A) + B²/(C + √(1-A²) B)`.
pub fn recursion_bound(a: f64, b: f64, c: f64, x0: f64, k: u32) -> Result<f64> {
    if !(0.0..1.0).contains(&a) {
        return usage(format!("recursion contraction A must lie in [0, 1), got {a}"));
    }
    if !(b >= 0.0 && c >= 0.0 && x0 >= 0.0) {
        return usage("recursion constants B, C and x0 must be non-negative");
    }
    let denom = c + (1.0 - a * a).sqrt() * b;
    let noise = if b == 0.0 { 0.0 } else { b * b / denom };
    Ok(a.powi(k as i32) * x0 + c / (1.0 - a) + noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn spec(dim: usize, m: f64, l: f64, d2: f64, eps: f64) -> ProblemSpec {
        ProblemSpec { dim, m, l, d2, eps, sigma2: 0.0 }
    }

    #[test]
    fn fixed_plan_example() {
        let p = plan_fixed(&spec(10, 1.0, 2.0, 1.0, 0.1)).unwrap();
        assert!((p.step - 1.449_573_772_008_479e-4).abs() < 1e-15);
        assert_eq!(p.iterations, 54_351);
        assert_eq!(p.mode, PlanMode::Exact);
    }

    #[test]
    fn fixed_plan_eps_scaling() {
        let n1 = plan_fixed(&spec(10, 1.0, 2.0, 1.0, 0.1)).unwrap().iterations as f64;
        let n2 = plan_fixed(&spec(10, 1.0, 2.0, 1.0, 0.2)).unwrap().iterations as f64;
        let r = n1 / n2;
        assert!(r > 1.6 && r < 2.4, "ratio {r}");
    }

    #[test]
    fn fixed_plan_dimension_scaling() {
        let n = |d| plan_fixed(&spec(d, 1.0, 1.0, 0.0, 0.1)).unwrap().iterations as f64;
        let r = n(10_000) / n(2_500);
        assert!((1.8..=2.4).contains(&r), "ratio {r}");
    }

    #[test]
    fn loose_accuracy_is_a_planning_error() {
        // δ = ε/(104√(d/m)) reaches 1 at ε = 104.
        let err = plan_fixed(&spec(1, 1.0, 1.0, 0.0, 200.0)).unwrap_err();
        assert!(matches!(err, Error::Planning(_)));
        assert!(matches!(plan_fixed(&spec(0, 1.0, 1.0, 0.0, 0.1)), Err(Error::Usage(_))));
    }

    #[test]
    fn stochastic_plan_example() {
        let s = ProblemSpec { sigma2: 1.0, ..spec(10, 1.0, 2.0, 1.0, 0.1) };
        let p = plan_stochastic(&s).unwrap();
        // min{4.8695e-5, 0.01·4/(1440·1·10·2)}: the noise branch is active.
        assert!((p.step - 0.04 / 28_800.0).abs() < 1e-20);
        assert_eq!(p.iterations, ((2.0 / p.step) * 3960f64.ln()).ceil() as usize);
        assert_eq!(p.iterations, 11_928_959);
        assert_eq!(p.mode, PlanMode::Stochastic);
    }

    #[test]
    fn stochastic_plan_small_noise_uses_discretization_branch() {
        let s = ProblemSpec { sigma2: 1e-12, ..spec(10, 1.0, 2.0, 1.0, 0.1) };
        let p = plan_stochastic(&s).unwrap();
        let expect = 0.05 * (5.0f64 / 5_271_552.0).sqrt();
        assert!((p.step - expect).abs() < 1e-18);
        assert!((p.step - 4.869_515_572_960_714e-5).abs() < 1e-16);
        assert!(plan_stochastic(&spec(10, 1.0, 2.0, 1.0, 0.1)).is_err());
        assert_eq!(plan(&s).unwrap().mode, PlanMode::Stochastic);
    }

    #[test]
    fn epoch_plan_example() {
        let sched = plan_epochs(&spec(10, 1.0, 2.0, 1.0, 0.1)).unwrap();
        assert!((sched.eps0 - 33.0).abs() < 1e-12);
        assert_eq!(sched.len(), 9);
        assert!((sched.epochs[0].step - 0.023_917_967_238_139_9).abs() < 1e-12);
        assert!(sched.is_geometric());
        let n1 = sched.epochs[0].iterations;
        assert_eq!(sched.total_iterations(), n1 * ((1 << 9) - 1));
        assert!(sched.total_iterations() as f64 <= epoch_work_bound(&spec(10, 1.0, 2.0, 1.0, 0.1)));
    }

    #[test]
    fn epoch_count_for_quarter_accuracy() {
        let base = spec(4, 2.0, 2.0, 1.0, 1.0);
        let sched = plan_epochs(&ProblemSpec { eps: 3.0 * base.scale() / 4.0, ..base }).unwrap();
        assert_eq!(sched.len(), 2);
    }

    #[test]
    fn bound_constants() {
        let s = spec(10, 1.0, 2.0, 1.0, 0.1);
        assert_eq!(kinetic_energy_bound(&s), 286.0);
        assert_eq!(initial_distance_bound(&s), 33.0);
        assert_eq!(kinetic_energy_bound(&spec(3, 3.0, 3.0, 0.0, 0.1)), 26.0);
        assert_eq!(initial_distance_bound(&spec(2, 2.0, 2.0, 0.0, 0.1)), 3.0);
        assert!(kinetic_energy_bound(&spec(20, 1.0, 2.0, 1.0, 0.1)) > kinetic_energy_bound(&s));
        assert!(initial_distance_bound(&s) >= s.dim as f64 / s.m);
    }

    #[test]
    fn recursion_bound_limits() {
        assert_eq!(recursion_bound(0.5, 0.0, 0.0, 8.0, 3).unwrap(), 1.0);
        assert!((recursion_bound(0.5, 0.0, 1.0, 8.0, 200).unwrap() - 2.0).abs() < 1e-12);
        assert!(recursion_bound(1.0, 0.0, 0.0, 1.0, 1).is_err());
        assert!(recursion_bound(0.5, -1.0, 0.0, 1.0, 1).is_err());
    }

    #[test]
    fn recursion_bound_dominates_simulation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for _ in 0..1000 {
            let a: f64 = rng.random_range(0.0..0.999);
            let b: f64 = rng.random_range(0.0..2.0);
            let c: f64 = rng.random_range(0.0..2.0);
            let x0: f64 = rng.random_range(0.0..10.0);
            let mut x = x0;
            for k in 0..200u32 {
                let bound = recursion_bound(a, b, c, x0, k).unwrap();
                assert!(x <= bound * (1.0 + 1e-12) + 1e-12, "k={k} x={x} bound={bound}");
                x = ((a * x + c).powi(2) + b * b).sqrt();
            }
        }
    }

    proptest! {
        #[test]
        fn plans_are_pure_and_in_range(dim in 1usize..500, m in 0.1f64..5.0, kappa in 1.0f64..20.0,
                                       d2 in 0.0f64..10.0, eps in 0.01f64..1.0) {
            let s = spec(dim, m, m * kappa, d2, eps);
            let a = plan_fixed(&s).unwrap();
            prop_assert_eq!(a, plan_fixed(&s).unwrap());
            prop_assert!(a.step > 0.0 && a.step < 1.0 && a.iterations >= 1);
            let e = plan_epochs(&s).unwrap();
            prop_assert!(e.is_geometric());
            // Ceiling of n₁ can add at most 2^ℓ - 1 steps in total.
            prop_assert!(e.total_iterations() as f64 <= epoch_work_bound(&s) + (1u64 << e.len()) as f64);
        }
    }
}
