//! Ensemble runs of the kinetic Langevin chain with exact or noisy gradients.

use std::io::{Read, Write};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, usage, Error, Result};
use crate::kernel::{ChainState, KernelCoefficients};
use crate::model::GradientOracle;
use crate::planner::{Epoch, EpochSchedule, PlanMode, SamplerPlan};
use crate::rng::{chain_stream, fill_normals, ChainRng, StreamPurpose};

/// Memory budget for stored snapshots when no stride is given.
pub const SNAPSHOT_BUDGET_BYTES: usize = 100_000_000;

/// Step schedule of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Fixed(SamplerPlan),
    Epochs(EpochSchedule),
}

impl Schedule {
    pub fn epochs(&self) -> Vec<Epoch> {
        match self {
            Schedule::Fixed(p) => vec![Epoch { step: p.step, iterations: p.iterations }],
            Schedule::Epochs(s) => s.epochs.clone(),
        }
    }

    pub fn total_iterations(&self) -> usize {
        self.epochs().iter().map(|e| e.iterations).sum()
    }
}

impl From<SamplerPlan> for Schedule {
    fn from(p: SamplerPlan) -> Self {
        Schedule::Fixed(p)
    }
}

impl From<EpochSchedule> for Schedule {
    fn from(s: EpochSchedule) -> Self {
        Schedule::Epochs(s)
    }
}

/// Everything needed to reproduce a run apart from the target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Ensemble size `M`.
    pub chains: usize,
    /// Initial position; the target's minimizer when absent. Velocity always starts at 0.
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
    pub seed: u64,
    /// Record every `stride`-th iterate; chosen from [`SNAPSHOT_BUDGET_BYTES`] when absent.
    #[serde(default)]
    pub stride: Option<usize>,
    pub schedule: Schedule,
}

impl RunConfig {
    pub fn new(chains: usize, seed: u64, schedule: impl Into<Schedule>) -> Self {
        Self { chains, initial: None, seed, stride: None, schedule: schedule.into() }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = Some(stride);
        self
    }

    pub fn with_initial(mut self, x0: Vec<f64>) -> Self {
        self.initial = Some(x0);
        self
    }

    /// Stride actually used for a `dim`-dimensional target.
    pub fn effective_stride(&self, dim: usize) -> usize {
        if let Some(s) = self.stride {
            return s;
        }
        let per_snapshot = 16 * self.chains.max(1) * dim.max(1);
        let allowed = (SNAPSHOT_BUDGET_BYTES / per_snapshot).max(2);
        let total = self.schedule.total_iterations();
        total.div_ceil(allowed - 1).max(1)
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.chains == 0 {
            return usage("run.chains must be at least 1");
        }
        if self.stride == Some(0) {
            return usage("run.stride must be at least 1");
        }
        if let Some(x0) = &self.initial {
            check_dim("run.initial", x0.len(), dim)?;
            check_finite("run.initial", x0)?;
        }
        for e in self.schedule.epochs() {
            if !(e.step.is_finite() && e.step > 0.0) {
                return usage(format!("step size must be positive, got {}", e.step));
            }
        }
        Ok(())
    }
}

/// The ensemble at one iterate, stored chain-major.
#[derive(Clone, Debug)]
pub struct EnsembleSnapshot {
    pub iteration: usize,
    /// Epoch the iterate belongs to (0 for fixed-step runs).
    pub epoch: usize,
    dim: usize,
    positions: Vec<f64>,
    velocities: Vec<f64>,
    /// Seconds since the run started; not part of any serialized output.
    pub elapsed_secs: f64,
}

impl PartialEq for EnsembleSnapshot {
    fn eq(&self, other: &Self) -> bool {
        self.iteration == other.iteration
            && self.epoch == other.epoch
            && self.dim == other.dim
            && self.positions == other.positions
            && self.velocities == other.velocities
    }
}

impl EnsembleSnapshot {
    pub fn from_states(iteration: usize, states: &[ChainState]) -> Result<Self> {
        let Some(first) = states.first() else {
            return usage("a snapshot needs at least one chain");
        };
        let dim = first.dim();
        let mut positions = Vec::with_capacity(states.len() * dim);
        let mut velocities = Vec::with_capacity(states.len() * dim);
        for s in states {
            check_dim("chain state", s.dim(), dim)?;
            positions.extend_from_slice(&s.x);
            velocities.extend_from_slice(&s.v);
        }
        Ok(Self { iteration, epoch: 0, dim, positions, velocities, elapsed_secs: 0.0 })
    }

    pub fn chains(&self) -> usize {
        self.positions.len() / self.dim.max(1)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn position(&self, chain: usize) -> &[f64] {
        &self.positions[chain * self.dim..(chain + 1) * self.dim]
    }

    pub fn velocity(&self, chain: usize) -> &[f64] {
        &self.velocities[chain * self.dim..(chain + 1) * self.dim]
    }

    pub fn state(&self, chain: usize) -> ChainState {
        ChainState { x: self.position(chain).to_vec(), v: self.velocity(chain).to_vec() }
    }

    pub fn positions(&self) -> impl Iterator<Item = &[f64]> + Clone {
        self.positions.chunks(self.dim)
    }

    pub fn velocities(&self) -> impl Iterator<Item = &[f64]> + Clone {
        self.velocities.chunks(self.dim)
    }

    /// Positions as owned points, for [`crate::metrics::w2_empirical`].
    pub fn position_cloud(&self) -> Vec<Vec<f64>> {
        self.positions().map(<[f64]>::to_vec).collect()
    }
}

/// Per-snapshot summary; recomputable from the stored states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotDiagnostics {
    pub iteration: usize,
    pub epoch: usize,
    /// Ensemble mean of `|v|²`.
    pub mean_kinetic: f64,
    pub x_mean: Vec<f64>,
    pub v_mean: Vec<f64>,
    /// Unbiased per-coordinate variances; empty for a single chain.
    pub x_var: Vec<f64>,
    pub v_var: Vec<f64>,
}

impl SnapshotDiagnostics {
    pub fn compute(s: &EnsembleSnapshot) -> Self {
        let (x_mean, x_var) = coordinate_moments(s.positions(), s.dim, s.chains());
        let (v_mean, v_var) = coordinate_moments(s.velocities(), s.dim, s.chains());
        Self {
            iteration: s.iteration,
            epoch: s.epoch,
            mean_kinetic: crate::metrics::kinetic_energy(s),
            x_mean,
            v_mean,
            x_var,
            v_var,
        }
    }
}

fn coordinate_moments<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, d: usize, m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; d];
    for r in rows.clone() {
        for (a, b) in mean.iter_mut().zip(r) {
            *a += b;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m as f64);
    if m < 2 {
        return (mean, Vec::new());
    }
    let mut var = vec![0.0; d];
    for r in rows {
        for ((a, b), mu) in var.iter_mut().zip(r).zip(&mean) {
            *a += (b - mu) * (b - mu);
        }
    }
    var.iter_mut().for_each(|a| *a /= (m - 1) as f64);
    (mean, var)
}

/// Output of a run: config echo, snapshots and their diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub config: RunConfig,
    pub dim: usize,
    /// Stride used for this run.
    pub stride: usize,
    pub diagnostics: Vec<SnapshotDiagnostics>,
    #[serde(skip)]
    pub snapshots: Vec<EnsembleSnapshot>,
}

impl Trace {
    pub fn final_snapshot(&self) -> &EnsembleSnapshot {
        self.snapshots.last().expect("a trace always holds the initial snapshot")
    }

    /// Largest ensemble mean of `|v|²` over all snapshots.
    pub fn max_kinetic(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.mean_kinetic).fold(0.0, f64::max)
    }

    /// Config and diagnostics as pretty JSON.
    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    /// State dump with a `# config-hash:` comment line and an
    /// `iteration,chain,coordinate,x,v` header.
    pub fn write_csv<W: Write>(&self, mut w: W, config_hash: &str) -> Result<()> {
        writeln!(w, "# config-hash: {config_hash}")?;
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["iteration", "chain", "coordinate", "x", "v"])?;
        for s in &self.snapshots {
            for c in 0..s.chains() {
                for (i, (x, v)) in s.position(c).iter().zip(s.velocity(c)).enumerate() {
                    out.serialize((s.iteration, c, i, x, v))?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Parse a trace JSON and attach the snapshots from its CSV state dump.
    pub fn read<J: Read, C: Read>(json: J, csv_dump: C) -> Result<Self> {
        let mut trace: Trace = serde_json::from_reader(json)?;
        let mut snaps = read_snapshots(csv_dump, trace.dim)?;
        if snaps.len() != trace.diagnostics.len() {
            return usage(format!(
                "state dump has {} snapshots but the trace lists {}",
                snaps.len(),
                trace.diagnostics.len()
            ));
        }
        for (s, d) in snaps.iter_mut().zip(&trace.diagnostics) {
            s.epoch = d.epoch;
        }
        trace.snapshots = snaps;
        Ok(trace)
    }
}

/// Parse a CSV state dump written by [`Trace::write_csv`].
pub fn read_snapshots<R: Read>(r: R, dim: usize) -> Result<Vec<EnsembleSnapshot>> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let mut snaps: Vec<EnsembleSnapshot> = Vec::new();
    for rec in rd.deserialize() {
        let (iteration, chain, coord, x, v): (usize, usize, usize, f64, f64) = rec?;
        let fresh = snaps.last().is_none_or(|s| s.iteration != iteration);
        if fresh {
            snaps.push(EnsembleSnapshot {
                iteration,
                epoch: 0,
                dim,
                positions: Vec::new(),
                velocities: Vec::new(),
                elapsed_secs: 0.0,
            });
        }
        let s = snaps.last_mut().expect("pushed above");
        if chain * dim + coord != s.positions.len() {
            return usage(format!("state dump rows out of order at iteration {iteration}"));
        }
        s.positions.push(x);
        s.velocities.push(v);
    }
    Ok(snaps)
}

struct Ensemble {
    dim: usize,
    xs: Vec<f64>,
    vs: Vec<f64>,
}

impl Ensemble {
    fn snapshot(&self, iteration: usize, epoch: usize, clock: &Instant) -> EnsembleSnapshot {
        EnsembleSnapshot {
            iteration,
            epoch,
            dim: self.dim,
            positions: self.xs.clone(),
            velocities: self.vs.clone(),
            elapsed_secs: clock.elapsed().as_secs_f64(),
        }
    }
}

/// One chain update `x ← T(x, gradient)` given fresh streams; shared by the
/// underdamped and overdamped samplers.
pub(crate) trait ChainUpdate: Sync {
    /// Number of standard normals consumed from the diffusion stream per step.
    fn noise_len(&self, dim: usize) -> usize;
    fn apply(&self, x: &mut [f64], v: &mut [f64], grad: &[f64], z: &[f64]);
}

impl ChainUpdate for KernelCoefficients {
    fn noise_len(&self, dim: usize) -> usize {
        2 * dim
    }

    fn apply(&self, x: &mut [f64], v: &mut [f64], grad: &[f64], z: &[f64]) {
        self.advance(x, v, grad, z);
    }
}

/// Run the configured schedule; fixed plans and epoch schedules are both accepted.
pub fn run<O: GradientOracle + ?Sized>(oracle: &O, config: &RunConfig) -> Result<Trace> {
    if let Schedule::Fixed(p) = &config.schedule {
        if p.mode == PlanMode::Exact && oracle.is_stochastic() {
            return usage("an exact-gradient plan was given a stochastic gradient oracle");
        }
    }
    let l = oracle.target().l();
    drive(oracle, config, |step| KernelCoefficients::new(step, l))
}

/// Run an epoch schedule; the final state of each epoch seeds the next.
pub fn run_epochs<O: GradientOracle + ?Sized>(oracle: &O, config: &RunConfig) -> Result<Trace> {
    if !matches!(config.schedule, Schedule::Epochs(_)) {
        return usage("run_epochs needs an epoch schedule");
    }
    run(oracle, config)
}

pub(crate) fn drive<O, U, F>(oracle: &O, config: &RunConfig, make_update: F) -> Result<Trace>
where
    O: GradientOracle + ?Sized,
    U: ChainUpdate,
    F: Fn(f64) -> Result<U>,
{
    let target = oracle.target();
    let d = target.dim();
    config.validate(d)?;
    let m = config.chains;
    let stride = config.effective_stride(d);
    let x0 = config.initial.clone().unwrap_or_else(|| target.minimizer().to_vec());
    let clock = Instant::now();

    let mut ens = Ensemble { dim: d, xs: x0.repeat(m), vs: vec![0.0; m * d] };
    let mut snapshots = vec![ens.snapshot(0, 0, &clock)];
    let mut iteration = 0;
    for (epoch, e) in config.schedule.epochs().iter().enumerate() {
        let update = make_update(e.step)?;
        let tag = epoch as u64;
        let mut rngs: Vec<ChainRng> =
            (0..m).map(|c| chain_stream(config.seed, c as u64, tag, StreamPurpose::Diffusion)).collect();
        let mut noise: Vec<ChainRng> =
            (0..m).map(|c| chain_stream(config.seed, c as u64, tag, StreamPurpose::GradientNoise)).collect();
        let mut done = 0;
        while done < e.iterations {
            let steps = stride.min(e.iterations - done);
            advance_ensemble(oracle, &update, &mut ens, &mut rngs, &mut noise, steps, iteration)?;
            done += steps;
            iteration += steps;
            snapshots.push(ens.snapshot(iteration, epoch, &clock));
        }
    }
    let diagnostics = snapshots.par_iter().map(SnapshotDiagnostics::compute).collect();
    Ok(Trace { config: config.clone(), dim: d, stride, diagnostics, snapshots })
}

fn advance_ensemble<O, U>(
    oracle: &O,
    update: &U,
    ens: &mut Ensemble,
    rngs: &mut [ChainRng],
    noise: &mut [ChainRng],
    steps: usize,
    first_iteration: usize,
) -> Result<()>
where
    O: GradientOracle + ?Sized,
    U: ChainUpdate,
{
    let d = ens.dim;
    let nz = update.noise_len(d);
    let diverged = ens
        .xs
        .par_chunks_mut(d)
        .zip(ens.vs.par_chunks_mut(d))
        .zip(rngs.par_iter_mut())
        .zip(noise.par_iter_mut())
        .enumerate()
        .map_init(
            || (vec![0.0; d], vec![0.0; nz]),
            |(g, z), (chain, (((x, v), rng), nrng))| {
                for k in 0..steps {
                    oracle.gradient_into(x, g, nrng);
                    fill_normals(rng, z);
                    update.apply(x, v, g, z);
                    if !(x.iter().all(|a| a.is_finite()) && v.iter().all(|a| a.is_finite())) {
                        return Some((first_iteration + k + 1, chain));
                    }
                }
                None
            },
        )
        .flatten()
        .min();
    match diverged {
        Some((iteration, chain)) => Err(Error::Divergence { chain, iteration }),
        None => Ok(()),
    }
}
