//! Target distributions `p*(x) ∝ exp(-f(x))` with `f` m-strongly convex and L-smooth.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, usage, Result};
use crate::kernel::ChainState;
use crate::metrics::GaussianSummary;
use crate::rng::ChainRng;

/// Run-config description of a built-in target.
///
/// ```json
/// {"target":"diag_quadratic","lambda":[1,4],"center":[0,0]}
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    /// `f(x) = (m/2)|x - c|²`. `l` is a declared smoothness bound (defaults to `m`).
    IsoQuadratic {
        dim: usize,
        m: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        l: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Vec<f64>>,
    },
    /// `f(x) = ½ Σ λᵢ (xᵢ - cᵢ)²`.
    DiagQuadratic {
        lambda: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Vec<f64>>,
    },
    /// `f(x) = (m/2)|x|² + (L - m) Σ log cosh(xᵢ)`.
    LogCosh { dim: usize, m: f64, l: f64 },
}

impl TargetSpec {
    pub fn build(&self) -> Result<TargetModel> {
        match self {
            TargetSpec::IsoQuadratic { dim, m, l, center } => {
                let center = center.clone().unwrap_or_else(|| vec![0.0; *dim]);
                TargetModel::iso_quadratic_with_smoothness(*dim, *m, l.unwrap_or(*m), center)
            }
            TargetSpec::DiagQuadratic { lambda, center } => {
                let center = center.clone().unwrap_or_else(|| vec![0.0; lambda.len()]);
                TargetModel::diag_quadratic(lambda.clone(), center)
            }
            TargetSpec::LogCosh { dim, m, l } => TargetModel::log_cosh(*dim, *m, *l),
        }
    }
}

#[derive(Clone, Debug)]
enum Potential {
    Quadratic { hessian: Vec<f64>, center: Vec<f64> },
    LogCosh { m: f64, excess: f64 },
}

/// A strongly log-concave target with exact gradient oracle.
///
/// Immutable after construction.
#[derive(Clone, Debug)]
pub struct TargetModel {
    dim: usize,
    m: f64,
    l: f64,
    potential: Potential,
    minimizer: Vec<f64>,
}

fn check_constants(m: f64, l: f64) -> Result<()> {
    if !(m.is_finite() && l.is_finite() && m > 0.0 && l >= m) {
        return usage(format!("need 0 < m <= L, got m = {m}, L = {l}"));
    }
    Ok(())
}

impl TargetModel {
    /// Isotropic quadratic with `L = m`.
    pub fn iso_quadratic(dim: usize, m: f64, center: Vec<f64>) -> Result<Self> {
        Self::iso_quadratic_with_smoothness(dim, m, m, center)
    }

    /// Isotropic quadratic whose smoothness is declared as `l >= m`.
    ///
    /// The potential is unchanged; `l` only enters the sampler through `u = 1/L`.
    pub fn iso_quadratic_with_smoothness(dim: usize, m: f64, l: f64, center: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return usage("dimension must be positive");
        }
        check_constants(m, l)?;
        check_dim("center", center.len(), dim)?;
        check_finite("center", &center)?;
        Ok(Self {
            dim,
            m,
            l,
            minimizer: center.clone(),
            potential: Potential::Quadratic { hessian: vec![m; dim], center },
        })
    }

    pub fn diag_quadratic(lambda: Vec<f64>, center: Vec<f64>) -> Result<Self> {
        let dim = lambda.len();
        if dim == 0 {
            return usage("lambda must be non-empty");
        }
        check_finite("lambda", &lambda)?;
        if lambda.iter().any(|&l| l <= 0.0) {
            return usage("lambda entries must be positive");
        }
        check_dim("center", center.len(), dim)?;
        check_finite("center", &center)?;
        let m = lambda.iter().copied().fold(f64::INFINITY, f64::min);
        let l = lambda.iter().copied().fold(0.0, f64::max);
        Ok(Self { dim, m, l, minimizer: center.clone(), potential: Potential::Quadratic { hessian: lambda, center } })
    }

    /// `f(x) = (m/2)|x|² + (L-m) Σ log cosh(xᵢ)`.
    ///
    /// The Hessian is diagonal with entries `m + (L-m) sech²(xᵢ) ∈ (m, L]`, so the
    /// constants hold exactly; the minimizer is the origin.
    pub fn log_cosh(dim: usize, m: f64, l: f64) -> Result<Self> {
        if dim == 0 {
            return usage("dimension must be positive");
        }
        check_constants(m, l)?;
        Ok(Self { dim, m, l, minimizer: vec![0.0; dim], potential: Potential::LogCosh { m, excess: l - m } })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Strong-convexity constant.
    pub fn m(&self) -> f64 {
        self.m
    }

    /// Smoothness constant.
    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn kappa(&self) -> f64 {
        self.l / self.m
    }

    pub fn minimizer(&self) -> &[f64] {
        &self.minimizer
    }

    /// Diagonal of the (constant) Hessian for quadratic targets.
    pub fn quadratic_hessian(&self) -> Option<&[f64]> {
        match &self.potential {
            Potential::Quadratic { hessian, .. } => Some(hessian),
            Potential::LogCosh { .. } => None,
        }
    }

    pub fn is_quadratic(&self) -> bool {
        self.quadratic_hessian().is_some()
    }

    /// Covariance of the x-marginal of `p*`, the inverse Hessian; quadratic targets only.
    pub fn stationary_covariance(&self) -> Option<DMatrix<f64>> {
        self.quadratic_hessian()
            .map(|h| DMatrix::from_diagonal(&DVector::from_iterator(h.len(), h.iter().map(|l| 1.0 / l))))
    }

    /// Gaussian summary of the x-marginal of `p*`; quadratic targets only.
    pub fn stationary_x_summary(&self) -> Option<GaussianSummary> {
        let cov = self.stationary_covariance()?;
        Some(GaussianSummary::new_unchecked(DVector::from_column_slice(&self.minimizer), cov))
    }

    /// Exact draw from the joint stationary law `x ~ N(c, H⁻¹)`, `v ~ N(0, I/L)`.
    pub fn sample_stationary(&self, rng: &mut ChainRng) -> Option<ChainState> {
        let h = self.quadratic_hessian()?;
        let sv = (1.0 / self.l).sqrt();
        let x =
            h.iter().zip(&self.minimizer).map(|(l, c)| c + rng.sample::<f64, _>(StandardNormal) / l.sqrt()).collect();
        let v = (0..self.dim).map(|_| sv * rng.sample::<f64, _>(StandardNormal)).collect();
        Some(ChainState { x, v })
    }

    /// Evaluate `f(x)`.
    pub fn potential(&self, x: &[f64]) -> Result<f64> {
        check_dim("x", x.len(), self.dim)?;
        check_finite("x", x)?;
        Ok(match &self.potential {
            Potential::Quadratic { hessian, center } => {
                0.5 * hessian.iter().zip(center).zip(x).map(|((l, c), xi)| l * (xi - c) * (xi - c)).sum::<f64>()
            }
            Potential::LogCosh { m, excess } => x.iter().map(|&xi| 0.5 * m * xi * xi + excess * log_cosh(xi)).sum(),
        })
    }

    /// Checked gradient `∇f(x)`.
    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("x", x.len(), self.dim)?;
        check_finite("x", x)?;
        let mut out = vec![0.0; self.dim];
        self.grad_into(x, &mut out);
        Ok(out)
    }

    /// Unchecked gradient into a caller buffer; dimensions must already match.
    pub fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        match &self.potential {
            Potential::Quadratic { hessian, center } => {
                for (((o, l), c), xi) in out.iter_mut().zip(hessian).zip(center).zip(x) {
                    *o = l * (xi - c);
                }
            }
            Potential::LogCosh { m, excess } => {
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = m * xi + excess * xi.tanh();
                }
            }
        }
    }
}

// log cosh(x) = |x| + log1p(e^{-2|x|}) - ln 2, stable for large |x|.
fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Source of (possibly noisy) gradients consumed by the samplers.
pub trait GradientOracle: Sync {
    fn target(&self) -> &TargetModel;

    /// Write a gradient estimate at `x` into `out`. `noise` is only drawn from
    /// by stochastic oracles.
    fn gradient_into(&self, x: &[f64], out: &mut [f64], noise: &mut ChainRng);

    /// Whether the oracle consumes random draws.
    fn is_stochastic(&self) -> bool {
        false
    }
}

impl GradientOracle for TargetModel {
    fn target(&self) -> &TargetModel {
        self
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64], _noise: &mut ChainRng) {
        self.grad_into(x, out);
    }
}

/// Distribution of the additive gradient noise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// `ξ ~ N(0, σ² I)`, which meets `E|ξ|² ≤ dσ²` with equality.
    #[default]
    Gaussian,
}

/// Gradient oracle returning `∇f(x) + ξ` with fresh zero-mean noise per call.
#[derive(Clone, Debug)]
pub struct NoisyGradientOracle {
    base: TargetModel,
    sigma2: f64,
    kind: NoiseKind,
}

impl NoisyGradientOracle {
    pub fn new(base: TargetModel, sigma2: f64) -> Result<Self> {
        Self::with_kind(base, sigma2, NoiseKind::Gaussian)
    }

    pub fn with_kind(base: TargetModel, sigma2: f64, kind: NoiseKind) -> Result<Self> {
        if !(sigma2.is_finite() && sigma2 >= 0.0) {
            return usage(format!("noise variance must be finite and >= 0, got {sigma2}"));
        }
        Ok(Self { base, sigma2, kind })
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    /// Checked noisy gradient.
    pub fn grad_noisy(&self, x: &[f64], rng: &mut ChainRng) -> Result<Vec<f64>> {
        check_dim("x", x.len(), self.base.dim)?;
        check_finite("x", x)?;
        let mut out = vec![0.0; self.base.dim];
        self.gradient_into(x, &mut out, rng);
        Ok(out)
    }
}

impl GradientOracle for NoisyGradientOracle {
    fn target(&self) -> &TargetModel {
        &self.base
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64], noise: &mut ChainRng) {
        self.base.grad_into(x, out);
        // σ² = 0 draws nothing, so the run matches the exact-gradient path bit for bit.
        if self.sigma2 == 0.0 {
            return;
        }
        match self.kind {
            NoiseKind::Gaussian => {
                let s = self.sigma2.sqrt();
                for o in out.iter_mut() {
                    *o += s * noise.sample::<f64, _>(StandardNormal);
                }
            }
        }
    }

    fn is_stochastic(&self) -> bool {
        self.sigma2 > 0.0
    }
}
