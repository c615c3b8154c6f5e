//! The JSON config document: `{problem, target, run, experiment}`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};
use crate::model::{TargetModel, TargetSpec};
use crate::planner::{plan, plan_epochs, PlanMode, ProblemSpec, SamplerPlan};
use crate::sampler::{RunConfig, Schedule};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub problem: Option<ProblemSpec>,
    /// Defaults to the isotropic quadratic with the problem's `(d, m, L)`.
    #[serde(default)]
    pub target: Option<TargetSpec>,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `plan_fixed`, or `plan_stochastic` when `σ² > 0`.
    #[default]
    Plan,
    Epochs,
    /// Explicit `step` and `iterations`.
    Manual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub chains: usize,
    pub seed: u64,
    pub stride: Option<usize>,
    pub schedule: ScheduleKind,
    pub step: Option<f64>,
    pub iterations: Option<usize>,
    /// Initial position; the minimizer when absent.
    pub initial: Option<Vec<f64>>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            chains: 1000,
            seed: 0,
            stride: None,
            schedule: ScheduleKind::Plan,
            step: None,
            iterations: None,
            initial: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub kernel: KernelSuite,
    pub contraction: ContractionSuite,
    pub discretization: DiscretizationSuite,
    pub kinetic: KineticSuite,
    pub compare: CompareSuite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSuite {
    pub steps: Vec<f64>,
    pub smoothness: f64,
    pub quadrature_tol: f64,
    pub max_rel_err: f64,
    pub mc_draws: usize,
    pub mc_step: f64,
    pub mc_smoothness: f64,
}

impl Default for KernelSuite {
    fn default() -> Self {
        Self {
            steps: vec![1e-6, 1e-4, 1e-2, 0.1, 0.5, 0.99],
            smoothness: 2.0,
            quadrature_tol: 1e-12,
            max_rel_err: 1e-8,
            mc_draws: 1_000_000,
            mc_step: 0.5,
            mc_smoothness: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContractionSuite {
    /// Diagonal Hessians to test; κ is max/min of each.
    pub hessians: Vec<Vec<f64>>,
    /// Horizon in units of κ.
    pub horizon: f64,
    pub fine_step: f64,
    pub paths: usize,
    pub tolerance: f64,
}

impl Default for ContractionSuite {
    fn default() -> Self {
        Self {
            hessians: vec![vec![1.0, 1.0], vec![1.0, 4.0]],
            horizon: 5.0,
            fine_step: 1e-3,
            paths: 100,
            tolerance: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscretizationSuite {
    pub steps: Vec<f64>,
    pub chains: usize,
    pub fine_steps: usize,
    pub slope_range: [f64; 2],
}

impl Default for DiscretizationSuite {
    fn default() -> Self {
        Self {
            steps: vec![0.05, 0.1, 0.2],
            chains: 2000,
            fine_steps: crate::coupling::FINE_STEPS_PER_DELTA,
            slope_range: [3.5, 4.5],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KineticSuite {
    pub chains: usize,
    /// Accuracy targets whose plans are run.
    pub eps: Vec<f64>,
}

impl Default for KineticSuite {
    fn default() -> Self {
        Self { chains: 1000, eps: vec![0.5, 0.25] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSuite {
    pub dims: Vec<usize>,
    pub fixed_eps: f64,
    pub eps: Vec<f64>,
    pub fixed_dim: usize,
    pub max_iterations: usize,
}

impl Default for CompareSuite {
    fn default() -> Self {
        Self {
            dims: vec![2, 8, 32, 128],
            fixed_eps: 0.2,
            eps: vec![0.4, 0.2, 0.1, 0.05],
            fixed_dim: 128,
            max_iterations: 10_000_000,
        }
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| crate::Error::Usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| crate::Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// The validated problem section.
    pub fn problem(&self) -> Result<ProblemSpec> {
        let Some(p) = self.problem else {
            return usage("config has no `problem` section");
        };
        p.validate()?;
        Ok(p)
    }

    /// The target, checked against the problem constants when both are given.
    pub fn target(&self) -> Result<TargetModel> {
        match (&self.target, self.problem) {
            (Some(t), p) => {
                let model = t.build()?;
                if let Some(p) = p {
                    p.validate()?;
                    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
                    if p.dim != model.dim() || !close(p.m, model.m()) || !close(p.l, model.l()) {
                        return usage(format!(
                            "problem (d={}, m={}, L={}) does not match target (d={}, m={}, L={})",
                            p.dim,
                            p.m,
                            p.l,
                            model.dim(),
                            model.m(),
                            model.l()
                        ));
                    }
                }
                Ok(model)
            }
            (None, Some(p)) => {
                p.validate()?;
                TargetModel::iso_quadratic_with_smoothness(p.dim, p.m, p.l, vec![0.0; p.dim])
            }
            (None, None) => usage("config needs a `problem` or a `target` section"),
        }
    }

    /// Schedule from the `run` section and the planner.
    pub fn schedule(&self) -> Result<Schedule> {
        let r = &self.run;
        match r.schedule {
            ScheduleKind::Plan => Ok(plan(&self.problem()?)?.into()),
            ScheduleKind::Epochs => {
                let p = self.problem()?;
                if p.sigma2 > 0.0 {
                    return usage("the epoch schedule is only defined for exact gradients (problem.sigma2 = 0)");
                }
                Ok(plan_epochs(&p)?.into())
            }
            ScheduleKind::Manual => {
                let (Some(step), Some(iterations)) = (r.step, r.iterations) else {
                    return usage("run.schedule = \"manual\" needs run.step and run.iterations");
                };
                let sigma2 = self.problem.map_or(0.0, |p| p.sigma2);
                let mode = if sigma2 > 0.0 { PlanMode::Stochastic } else { PlanMode::Exact };
                Ok(SamplerPlan { step, iterations, mode }.into())
            }
        }
    }

    /// Run config for the sampler; checks the initial point against `D²`.
    pub fn run_config(&self, target: &TargetModel) -> Result<RunConfig> {
        let r = &self.run;
        if let (Some(x0), Some(p)) = (&r.initial, self.problem) {
            crate::error::check_dim("run.initial", x0.len(), target.dim())?;
            let dist2: f64 = x0.iter().zip(target.minimizer()).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist2 > p.d2 * (1.0 + 1e-12) {
                return usage(format!(
                    "run.initial is at squared distance {dist2} from the minimizer, above problem.d2 = {}",
                    p.d2
                ));
            }
        }
        Ok(RunConfig {
            chains: r.chains,
            initial: r.initial.clone(),
            seed: r.seed,
            stride: r.stride,
            schedule: self.schedule()?,
        })
    }

    /// Gradient-noise variance from the problem section (0 when absent).
    pub fn sigma2(&self) -> f64 {
        self.problem.map_or(0.0, |p| p.sigma2)
    }
}
