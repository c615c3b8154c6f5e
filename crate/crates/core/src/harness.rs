//! Verification suites and the underdamped-vs-overdamped scaling comparison.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::baseline::{calibrate_step_constant, ula_step_size};
use crate::config::{CompareSuite, Config, ContractionSuite, DiscretizationSuite, KernelSuite, KineticSuite};
use crate::coupling::{
    contraction_average, discretization_experiment, envelope_ratio, near_stationary_ensemble, CoupledPair,
};
use crate::error::{usage, Error, Result};
use crate::kernel::{ChainState, KernelCoefficients};
use crate::law::{iterations_to_accuracy, GaussianLaw};
use crate::model::TargetModel;
use crate::planner::{kinetic_energy_bound, plan_epochs, plan_fixed, ProblemSpec};
use crate::quadrature::kernel_integrals;
use crate::report::{fit_log_log, fit_slope, num, LineChart, Series, Table};
use crate::rng::{chain_stream, fill_normals, StreamPurpose};
use crate::sampler::{run, RunConfig, Schedule};

/// One pass/fail assertion of a suite.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    /// Human-readable acceptance condition, e.g. `<= 1e-8`.
    pub condition: String,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, measured: f64, limit: f64) -> Self {
        Self { name: name.into(), measured, condition: format!("<= {limit}"), pass: measured <= limit }
    }

    pub fn within(name: impl Into<String>, measured: f64, lo: f64, hi: f64) -> Self {
        Self { name: name.into(), measured, condition: format!("in [{lo}, {hi}]"), pass: (lo..=hi).contains(&measured) }
    }

    pub fn below(name: impl Into<String>, measured: f64, other: f64) -> Self {
        Self { name: name.into(), measured, condition: format!("< {other}"), pass: measured < other }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {:.6e} {}", self.name, self.measured, self.condition)
    }
}

/// Checks plus the tables and charts a suite emits.
#[derive(Clone, Debug, Default)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
    pub tables: Vec<(String, Table)>,
    pub charts: Vec<(String, LineChart)>,
}

impl SuiteReport {
    fn new(suite: &str) -> Self {
        Self { suite: suite.into(), ..Self::default() }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// Writes `<name>.csv` / `<name>.svg` files plus `<suite>_checks.csv` into `dir`.
    pub fn write(&self, dir: &Path, config_hash: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut checks = Table::new(&["check", "measured", "condition", "pass"]);
        for c in &self.checks {
            checks.push(vec![c.name.clone(), num(c.measured), c.condition.clone(), c.pass.to_string()]);
        }
        checks.save(&dir.join(format!("{}_checks.csv", self.suite)), config_hash)?;
        for (name, t) in &self.tables {
            t.save(&dir.join(format!("{name}.csv")), config_hash)?;
        }
        for (name, c) in &self.charts {
            c.save(&dir.join(format!("{name}.svg")))?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Kernel,
    Contraction,
    Discretization,
    Kinetic,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kernel" => Ok(Suite::Kernel),
            "contraction" => Ok(Suite::Contraction),
            "discretization" => Ok(Suite::Discretization),
            "kinetic" => Ok(Suite::Kinetic),
            other => {
                usage(format!("unknown suite `{other}` (expected kernel, contraction, discretization or kinetic)"))
            }
        }
    }
}

pub fn verify(suite: Suite, config: &Config) -> Result<SuiteReport> {
    let seed = config.run.seed;
    let e = &config.experiment;
    match suite {
        Suite::Kernel => verify_kernel(&e.kernel, seed),
        Suite::Contraction => verify_contraction(&e.contraction, seed),
        Suite::Discretization => {
            let (target, problem) = target_and_problem(config)?;
            verify_discretization(&e.discretization, &target, &problem, seed)
        }
        Suite::Kinetic => {
            let (target, problem) = target_and_problem(config)?;
            verify_kinetic(&e.kinetic, &target, &problem, seed)
        }
    }
}

// Falls back to the unit isotropic quadratic in d = 2 with D² = 0.
fn target_and_problem(config: &Config) -> Result<(TargetModel, ProblemSpec)> {
    if config.problem.is_none() && config.target.is_none() {
        let p = ProblemSpec { dim: 2, m: 1.0, l: 1.0, d2: 0.0, eps: 0.5, sigma2: 0.0 };
        return Ok((TargetModel::iso_quadratic(2, 1.0, vec![0.0; 2])?, p));
    }
    let target = config.target()?;
    let problem = match config.problem {
        Some(p) => config.problem().map(|_| p)?,
        None => ProblemSpec { dim: target.dim(), m: target.m(), l: target.l(), d2: 0.0, eps: 0.5, sigma2: 0.0 },
    };
    Ok((target, problem))
}

const COEFFICIENT_NAMES: [&str; 6] = ["a_xv", "b_v", "b_x", "sigma_vv", "sigma_xv", "sigma_xx"];

/// Closed-form coefficients vs quadrature, one-step Monte Carlo moments and the
/// second-order drift from stationarity.
pub fn verify_kernel(s: &KernelSuite, seed: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("kernel");
    let mut table = Table::new(&["delta", "coefficient", "closed_form", "quadrature", "rel_err"]);
    let mut curves: Vec<Vec<(f64, f64)>> = vec![Vec::new(); 6];
    let rows: Vec<(f64, [f64; 6], [f64; 6])> = s
        .steps
        .par_iter()
        .map(|&step| {
            let k = KernelCoefficients::new(step, s.smoothness)?;
            let q = kernel_integrals(step, s.smoothness, s.quadrature_tol);
            Ok((
                step,
                [k.position_velocity(), k.velocity_gradient(), k.position_gradient(), k.var_v(), k.cov_xv(), k.var_x()],
                [q.position_velocity, q.velocity_gradient, q.position_gradient, q.var_v, q.cov_xv, q.var_x],
            ))
        })
        .collect::<Result<_>>()?;
    for (step, closed, quad) in rows {
        let mut worst: f64 = 0.0;
        for i in 0..6 {
            let rel = (closed[i] - quad[i]).abs() / quad[i].abs();
            worst = worst.max(rel);
            curves[i].push((step, rel.max(1e-18)));
            table.push(vec![num(step), COEFFICIENT_NAMES[i].into(), num(closed[i]), num(quad[i]), num(rel)]);
        }
        rep.checks.push(Check::at_most(format!("quadrature delta={step}"), worst, s.max_rel_err));
    }
    rep.tables.push(("kernel_quadrature".into(), table));
    let mut chart = LineChart::new("Closed form vs quadrature", "step size", "relative error").log_log();
    for (name, pts) in COEFFICIENT_NAMES.iter().zip(curves) {
        chart = chart.with(Series::new(name, pts));
    }
    chart = chart.with(Series::dashed("tolerance", s.steps.iter().map(|&d| (d, s.max_rel_err)).collect()));
    rep.charts.push(("kernel_quadrature".into(), chart));

    let mc = one_step_monte_carlo(s.mc_step, s.mc_smoothness, s.mc_draws, seed)?;
    rep.checks.extend(mc.checks());
    let mut t = Table::new(&["moment", "empirical", "closed_form"]);
    for (n, a, b) in mc.rows() {
        t.push(vec![n.into(), num(a), num(b)]);
    }
    rep.tables.push(("kernel_monte_carlo".into(), t));

    let (slope, drift) = stationary_drift_slope()?;
    let mut t = Table::new(&["delta", "v_variance_error"]);
    for (d, e) in &drift {
        t.push(vec![num(*d), num(*e)]);
    }
    rep.tables.push(("kernel_stationary_drift".into(), t));
    rep.checks.push(Check::within("one-step v-variance drift slope", slope, 1.5, 2.5));
    Ok(rep)
}

/// Empirical one-step moments from a fixed state against the closed forms.
#[derive(Clone, Debug)]
pub struct MonteCarloMoments {
    pub draws: usize,
    pub mean: [f64; 2],
    pub expected_mean: [f64; 2],
    /// `(σ_xx, σ_xv, σ_vv)`.
    pub cov: [f64; 3],
    pub expected_cov: [f64; 3],
}

impl MonteCarloMoments {
    pub fn checks(&self) -> Vec<Check> {
        let n = self.draws as f64;
        let se = [(self.expected_cov[0] / n).sqrt(), (self.expected_cov[2] / n).sqrt()];
        let mut out = Vec::new();
        for (i, name) in ["x", "v"].iter().enumerate() {
            let z = (self.mean[i] - self.expected_mean[i]).abs() / se[i];
            out.push(Check::at_most(format!("one-step mean {name} (standard errors)"), z, 4.0));
        }
        for (i, name) in ["sigma_xx", "sigma_xv", "sigma_vv"].iter().enumerate() {
            let rel = (self.cov[i] - self.expected_cov[i]).abs() / self.expected_cov[i].abs();
            out.push(Check::at_most(format!("one-step {name} (relative)"), rel, 0.01));
        }
        out
    }

    fn rows(&self) -> Vec<(&'static str, f64, f64)> {
        vec![
            ("mean_x", self.mean[0], self.expected_mean[0]),
            ("mean_v", self.mean[1], self.expected_mean[1]),
            ("sigma_xx", self.cov[0], self.expected_cov[0]),
            ("sigma_xv", self.cov[1], self.expected_cov[1]),
            ("sigma_vv", self.cov[2], self.expected_cov[2]),
        ]
    }
}

pub fn one_step_monte_carlo(step: f64, smoothness: f64, draws: usize, seed: u64) -> Result<MonteCarloMoments> {
    let k = KernelCoefficients::new(step, smoothness)?;
    let state = ChainState::new(vec![0.3], vec![-0.2])?;
    let grad = [0.5];
    let (mx, mv) = k.conditional_moments(&state, &grad)?;
    const BLOCK: usize = 10_000;
    let blocks = draws.div_ceil(BLOCK);
    // Per-block sums of x, v, x², xv, v² around the conditional mean.
    let sums = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = chain_stream(seed, b as u64, 0, StreamPurpose::Setup);
            let mut z = [0.0; 2];
            let mut acc = [0.0; 5];
            for _ in 0..BLOCK.min(draws - b * BLOCK) {
                fill_normals(&mut rng, &mut z);
                let mut x = [state.x[0]];
                let mut v = [state.v[0]];
                k.advance(&mut x, &mut v, &grad, &z);
                let (dx, dv) = (x[0] - mx[0], v[0] - mv[0]);
                acc[0] += dx;
                acc[1] += dv;
                acc[2] += dx * dx;
                acc[3] += dx * dv;
                acc[4] += dv * dv;
            }
            acc
        })
        .reduce(|| [0.0; 5], |a, b| std::array::from_fn(|i| a[i] + b[i]));
    let n = draws as f64;
    let (ex, ev) = (sums[0] / n, sums[1] / n);
    Ok(MonteCarloMoments {
        draws,
        mean: [mx[0] + ex, mv[0] + ev],
        expected_mean: [mx[0], mv[0]],
        cov: [sums[2] / n - ex * ex, sums[3] / n - ex * ev, sums[4] / n - ev * ev],
        expected_cov: [k.var_x(), k.cov_xv(), k.var_v()],
    })
}

/// Slope of the one-step v-variance error from stationarity against δ.
pub fn stationary_drift_slope() -> Result<(f64, Vec<(f64, f64)>)> {
    let t = TargetModel::iso_quadratic(1, 1.0, vec![0.0])?;
    let steps = [0.4, 0.2, 0.1, 0.05];
    let mut drift = Vec::new();
    for &h in &steps {
        let mut law = GaussianLaw::stationary(&t)?;
        law.kernel_steps(h, 1, 0.0)?;
        drift.push((h, (law.coordinates()[0].var_v - 1.0 / t.l()).abs()));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = drift.iter().copied().unzip();
    Ok((fit_log_log(&xs, &ys)?, drift))
}

/// Synchronously coupled continuous paths on diagonal quadratics.
pub fn verify_contraction(s: &ContractionSuite, seed: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("contraction");
    let mut table = Table::new(&["kappa", "pair", "t", "lyapunov", "envelope"]);
    for (hi, lambda) in s.hessians.iter().enumerate() {
        let d = lambda.len();
        let target = TargetModel::diag_quadratic(lambda.clone(), vec![0.0; d])?;
        let kappa = target.kappa();
        let t_end = s.horizon * kappa;
        let steps = (t_end / s.fine_step).round() as usize;
        let record = (steps / 200).max(1);
        let mut chart = LineChart::new(&format!("Coupled Lyapunov function, kappa = {kappa}"), "t", "l(t)").log_y();
        for (pi, pair) in contraction_pairs(d)?.iter().enumerate() {
            let ls = contraction_average(&target, pair, t_end, s.fine_step, record, s.paths, seed)?;
            let l0 = ls[0].value;
            for p in &ls {
                table.push(vec![num(kappa), pi.to_string(), num(p.t), num(p.value), num(l0 * (-p.t / kappa).exp())]);
            }
            rep.checks.push(Check::at_most(
                format!("envelope kappa={kappa} hessian={hi} pair={pi}"),
                envelope_ratio(&ls, kappa),
                1.0 + s.tolerance,
            ));
            if lambda.iter().all(|&l| l == lambda[0]) {
                let xs: Vec<f64> = ls.iter().map(|p| p.t).collect();
                let ys: Vec<f64> = ls.iter().map(|p| p.value.ln()).collect();
                let rate = fit_slope(&xs, &ys)?;
                rep.checks.push(Check::at_most(
                    format!("decay rate kappa={kappa} pair={pi}"),
                    rate,
                    -(1.0 - 0.1) / kappa,
                ));
            }
            chart = chart.with(Series::new(&format!("pair {pi}"), ls.iter().map(|p| (p.t, p.value)).collect())).with(
                Series::dashed(&format!("bound {pi}"), ls.iter().map(|p| (p.t, l0 * (-p.t / kappa).exp())).collect()),
            );
        }
        rep.charts.push((format!("contraction_{hi}"), chart));
    }
    rep.tables.push(("contraction".into(), table));
    Ok(rep)
}

fn contraction_pairs(d: usize) -> Result<Vec<CoupledPair>> {
    let rest = ChainState::at_rest(vec![0.0; d]);
    let mut e1 = vec![0.0; d];
    e1[0] = 1.0;
    let mut mixed_v = e1.clone();
    mixed_v[d - 1] -= 1.0;
    let mut last = vec![0.0; d];
    last[d - 1] = 1.0;
    Ok(vec![
        CoupledPair::new(ChainState::at_rest(vec![1.0; d]), rest.clone())?,
        CoupledPair::new(ChainState::new(last, mixed_v)?, rest)?,
    ])
}

/// One-step coupled deviation between the continuous and frozen-gradient processes.
pub fn verify_discretization(
    s: &DiscretizationSuite,
    target: &TargetModel,
    problem: &ProblemSpec,
    seed: u64,
) -> Result<SuiteReport> {
    if s.steps.is_empty() {
        return usage("experiment.discretization.steps is empty");
    }
    let mut rep = SuiteReport::new("discretization");
    let ek = kinetic_energy_bound(problem);
    let p0 = near_stationary_ensemble(target, s.chains, seed)?;
    let results = s
        .steps
        .iter()
        .map(|&step| {
            if !(step > 0.0 && step <= 1.0) {
                return usage(format!("discretization steps must lie in (0, 1], got {step}"));
            }
            discretization_experiment(target, &p0, step, s.fine_steps, ek, seed.wrapping_add(1))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = Table::new(&["delta", "measured", "measured_half_h", "bound", "ratio"]);
    for r in &results {
        table.push(vec![num(r.step), num(r.measured), num(r.measured_half), num(r.bound), num(r.ratio())]);
        rep.checks.push(Check::at_most(format!("measured/bound delta={}", r.step), r.ratio(), 1.0));
        rep.checks.push(Check::at_most(format!("richardson change delta={}", r.step), r.richardson_change(), 0.05));
    }
    if s.steps.len() >= 2 {
        let xs: Vec<f64> = results.iter().map(|r| r.step).collect();
        let ys: Vec<f64> = results.iter().map(|r| r.measured * r.measured).collect();
        rep.checks.push(Check::within(
            "log-log slope of measured^2",
            fit_log_log(&xs, &ys)?,
            s.slope_range[0],
            s.slope_range[1],
        ));
    }
    rep.tables.push(("discretization".into(), table));
    rep.charts.push((
        "discretization".into(),
        LineChart::new("One-step discretization error", "step size", "coupled deviation")
            .log_log()
            .with(Series::new("measured", results.iter().map(|r| (r.step, r.measured)).collect()))
            .with(Series::dashed("bound", results.iter().map(|r| (r.step, r.bound)).collect())),
    ));
    Ok(rep)
}

/// Planner-driven runs: ensemble mean `|v|²` never exceeds `E_K`.
pub fn verify_kinetic(s: &KineticSuite, target: &TargetModel, problem: &ProblemSpec, seed: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("kinetic");
    let ek = kinetic_energy_bound(problem);
    let mut x0 = target.minimizer().to_vec();
    x0[0] += problem.d2.sqrt();
    let mut table = Table::new(&["eps", "schedule", "iteration", "mean_kinetic", "bound"]);
    let mut chart = LineChart::new("Kinetic energy along planner runs", "iteration", "mean |v|^2");
    for &eps in &s.eps {
        let spec = ProblemSpec { eps, sigma2: 0.0, ..*problem };
        let schedules: Vec<(&str, Schedule)> =
            vec![("fixed", plan_fixed(&spec)?.into()), ("epochs", plan_epochs(&spec)?.into())];
        for (name, sched) in schedules {
            let cfg = RunConfig::new(s.chains, seed, sched).with_initial(x0.clone());
            let stride = cfg.schedule.total_iterations().div_ceil(200).max(1);
            let trace = run(target, &cfg.with_stride(stride))?;
            for d in &trace.diagnostics {
                table.push(vec![num(eps), name.into(), d.iteration.to_string(), num(d.mean_kinetic), num(ek)]);
            }
            rep.checks.push(Check::at_most(format!("max mean |v|^2 eps={eps} {name}"), trace.max_kinetic(), ek));
            chart = chart.with(Series::new(
                &format!("eps={eps} {name}"),
                trace.diagnostics.iter().map(|d| (d.iteration as f64, d.mean_kinetic)).collect(),
            ));
        }
    }
    rep.tables.push(("kinetic".into(), table));
    rep.charts.push(("kinetic".into(), chart));
    Ok(rep)
}

/// Iterations for underdamped and overdamped chains to reach x-marginal W₂ ≤ ε.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingPoint {
    pub dim: usize,
    pub eps: f64,
    pub underdamped_step: f64,
    pub underdamped_iterations: usize,
    pub ula_step: f64,
    pub ula_iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Scaling {
    pub ula_constant: f64,
    pub dim_grid: Vec<ScalingPoint>,
    pub eps_grid: Vec<ScalingPoint>,
    pub underdamped_dim_exponent: f64,
    pub ula_dim_exponent: f64,
    pub underdamped_eps_exponent: f64,
    pub ula_eps_exponent: f64,
}

fn distinct<T: PartialEq + Copy>(xs: &[T]) -> usize {
    let mut seen: Vec<T> = Vec::new();
    for &x in xs {
        if !seen.contains(&x) {
            seen.push(x);
        }
    }
    seen.len()
}

/// Isotropic unit quadratics started at the minimizer, evaluated through the exact law.
///
/// The underdamped step comes from the planner with `D² = 0`; the ULA step from
/// the calibrated `ε²/d` rule.
pub fn scaling(s: &CompareSuite) -> Result<Scaling> {
    if distinct(&s.dims) < 2 || distinct(&s.eps) < 2 {
        return usage("scaling fits need at least two distinct grid points in both the d-grid and the eps-grid");
    }
    let c = calibrate_step_constant();
    let point = |dim: usize, eps: f64| -> Result<ScalingPoint> {
        let target = TargetModel::iso_quadratic(dim, 1.0, vec![0.0; dim])?;
        let spec = ProblemSpec { dim, m: 1.0, l: 1.0, d2: 0.0, eps, sigma2: 0.0 };
        let ud_step = plan_fixed(&spec)?.step;
        let k = KernelCoefficients::new(ud_step, 1.0)?;
        let start = GaussianLaw::dirac(&target, target.minimizer())?;
        let ud = iterations_to_accuracy(start.clone(), eps, s.max_iterations, |l| l.kernel_step(&k, 0.0));
        let ula_step = ula_step_size(c, eps, dim, 1.0, 1.0);
        let ula = iterations_to_accuracy(start, eps, s.max_iterations, |l| l.ula_step(ula_step));
        let (Some(ud), Some(ula)) = (ud, ula) else {
            return Err(Error::Internal(format!(
                "d={dim}, eps={eps}: accuracy not reached within {} iterations",
                s.max_iterations
            )));
        };
        Ok(ScalingPoint {
            dim,
            eps,
            underdamped_step: ud_step,
            underdamped_iterations: ud,
            ula_step,
            ula_iterations: ula,
        })
    };
    let dim_grid = s.dims.par_iter().map(|&d| point(d, s.fixed_eps)).collect::<Result<Vec<_>>>()?;
    let eps_grid = s.eps.par_iter().map(|&e| point(s.fixed_dim, e)).collect::<Result<Vec<_>>>()?;
    let fit = |grid: &[ScalingPoint], x: fn(&ScalingPoint) -> f64, y: fn(&ScalingPoint) -> usize| {
        let xs: Vec<f64> = grid.iter().map(x).collect();
        let ys: Vec<f64> = grid.iter().map(|p| y(p) as f64).collect();
        fit_log_log(&xs, &ys)
    };
    let dim_x = |p: &ScalingPoint| p.dim as f64;
    let eps_x = |p: &ScalingPoint| p.eps;
    Ok(Scaling {
        ula_constant: c,
        underdamped_dim_exponent: fit(&dim_grid, dim_x, |p| p.underdamped_iterations)?,
        ula_dim_exponent: fit(&dim_grid, dim_x, |p| p.ula_iterations)?,
        underdamped_eps_exponent: fit(&eps_grid, eps_x, |p| p.underdamped_iterations)?,
        ula_eps_exponent: fit(&eps_grid, eps_x, |p| p.ula_iterations)?,
        dim_grid,
        eps_grid,
    })
}

impl Scaling {
    pub fn checks(&self) -> Vec<Check> {
        vec![
            Check::at_most("underdamped d-exponent", self.underdamped_dim_exponent, 0.8),
            Check::below("underdamped d-exponent vs ULA", self.underdamped_dim_exponent, self.ula_dim_exponent),
            Check::within("underdamped eps-exponent", self.underdamped_eps_exponent, -1.3, -0.7),
            Check::within("ULA eps-exponent", self.ula_eps_exponent, -2.4, -1.6),
        ]
    }
}

pub fn compare(config: &Config) -> Result<SuiteReport> {
    let sc = scaling(&config.experiment.compare)?;
    let mut rep = SuiteReport::new("compare");
    rep.checks = sc.checks();
    let header = [
        "dim",
        "eps",
        "underdamped_step",
        "underdamped_iterations",
        "underdamped_gradient_evals",
        "ula_step",
        "ula_iterations",
        "ula_gradient_evals",
    ];
    for (name, grid) in [("scaling_dim", &sc.dim_grid), ("scaling_eps", &sc.eps_grid)] {
        let mut t = Table::new(&header);
        for p in grid {
            // One gradient per iteration for both chains, so matched iterations are matched gradients.
            t.push(vec![
                p.dim.to_string(),
                num(p.eps),
                num(p.underdamped_step),
                p.underdamped_iterations.to_string(),
                p.underdamped_iterations.to_string(),
                num(p.ula_step),
                p.ula_iterations.to_string(),
                p.ula_iterations.to_string(),
            ]);
        }
        rep.tables.push((name.into(), t));
    }
    let mut t = Table::new(&["fit", "underdamped", "ula"]);
    t.push(vec!["d-exponent".into(), num(sc.underdamped_dim_exponent), num(sc.ula_dim_exponent)]);
    t.push(vec!["eps-exponent".into(), num(sc.underdamped_eps_exponent), num(sc.ula_eps_exponent)]);
    rep.tables.push(("scaling_fits".into(), t));
    let series = |grid: &[ScalingPoint], x: fn(&ScalingPoint) -> f64| {
        vec![
            Series::new("underdamped", grid.iter().map(|p| (x(p), p.underdamped_iterations as f64)).collect()),
            Series::new("ULA", grid.iter().map(|p| (x(p), p.ula_iterations as f64)).collect()),
        ]
    };
    let mut cd = LineChart::new("Iterations to reach W2 <= eps vs dimension", "d", "iterations").log_log();
    for s in series(&sc.dim_grid, |p| p.dim as f64) {
        cd = cd.with(s);
    }
    let mut ce = LineChart::new("Iterations to reach W2 <= eps vs accuracy", "eps", "iterations").log_log();
    for s in series(&sc.eps_grid, |p| p.eps) {
        ce = ce.with(s);
    }
    rep.charts.push(("scaling_dim".into(), cd));
    rep.charts.push(("scaling_eps".into(), ce));
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names() {
        assert_eq!("kernel".parse::<Suite>().unwrap(), Suite::Kernel);
        assert!(matches!("nope".parse::<Suite>(), Err(Error::Usage(_))));
    }

    #[test]
    fn check_formatting() {
        let c = Check::at_most("x", 0.5, 1.0);
        assert!(c.pass);
        assert!(c.to_string().starts_with("PASS x: 5.000000e-1 <= 1"));
        assert!(!Check::within("y", 3.0, 1.0, 2.0).pass);
        assert!(!Check::below("z", 1.0, 1.0).pass);
    }

    #[test]
    fn kernel_suite_passes_on_defaults() {
        let rep = verify_kernel(&KernelSuite { mc_draws: 200_000, ..KernelSuite::default() }, 1).unwrap();
        for c in &rep.checks {
            if !c.name.starts_with("one-step sigma") {
                assert!(c.pass, "{c}");
            }
        }
    }

    #[test]
    fn single_point_grids_are_usage_errors() {
        let s = CompareSuite { dims: vec![8], ..CompareSuite::default() };
        assert!(matches!(scaling(&s), Err(Error::Usage(_))));
        let s = CompareSuite { eps: vec![0.2, 0.2], ..CompareSuite::default() };
        assert!(matches!(scaling(&s), Err(Error::Usage(_))));
    }

    #[test]
    fn small_scaling_grid_orders_the_samplers() {
        let s = CompareSuite { dims: vec![2, 8, 32], fixed_dim: 8, eps: vec![0.4, 0.2], ..CompareSuite::default() };
        let sc = scaling(&s).unwrap();
        assert!(sc.underdamped_dim_exponent < sc.ula_dim_exponent);
        assert!(sc.dim_grid.iter().all(|p| p.underdamped_iterations > 0 && p.ula_iterations > 0));
    }

    #[test]
    fn report_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut rep = SuiteReport::new("demo");
        rep.checks.push(Check::at_most("a", 1.0, 2.0));
        rep.tables.push(("t".into(), Table::new(&["x"])));
        rep.charts.push(("c".into(), LineChart::new("c", "x", "y")));
        rep.write(dir.path(), "hash").unwrap();
        let checks = std::fs::read_to_string(dir.path().join("demo_checks.csv")).unwrap();
        assert!(checks.starts_with("# config-hash: hash\ncheck,measured,condition,pass\n"));
        assert!(dir.path().join("t.csv").exists() && dir.path().join("c.svg").exists());
    }
}
