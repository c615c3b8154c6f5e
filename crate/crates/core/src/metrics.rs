//! Wasserstein-2 distances, ensemble moments and kinetic-energy diagnostics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, usage, Result};
use crate::model::TargetModel;
use crate::sampler::EnsembleSnapshot;

/// Largest ensemble accepted by [`w2_empirical`].
pub const MAX_ASSIGNMENT_SIZE: usize = 4096;

/// Symmetry tolerance for covariance inputs, relative to the largest entry.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Eigenvalues above `-EIGEN_CLAMP · max(1, |λ|max)` are clamped to zero.
pub const EIGEN_CLAMP: f64 = 1e-10;

/// Mean and covariance of a (moment-matched) Gaussian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianSummary {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianSummary {
    /// Validates symmetry and positive semi-definiteness.
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return usage(format!(
                "covariance is {}x{} but mean has dimension {d}",
                covariance.nrows(),
                covariance.ncols()
            ));
        }
        let s = Self { mean, covariance };
        s.check()?;
        Ok(s)
    }

    pub(crate) fn new_unchecked(mean: DVector<f64>, covariance: DMatrix<f64>) -> Self {
        Self { mean, covariance }
    }

    /// Gaussian with a diagonal covariance.
    pub fn diagonal(mean: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        check_dim("variances", variances.len(), mean.len())?;
        Self::new(DVector::from_vec(mean), DMatrix::from_diagonal(&DVector::from_vec(variances)))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self) -> Result<()> {
        let c = &self.covariance;
        if c.iter().any(|a| !a.is_finite()) || self.mean.iter().any(|a| !a.is_finite()) {
            return usage("Gaussian summary has non-finite entries");
        }
        let scale = c.abs().max().max(1.0);
        if (c - c.transpose()).abs().max() > SYMMETRY_TOL * scale {
            return usage("covariance is not symmetric");
        }
        psd_eigenvalues(c)?;
        Ok(())
    }
}

fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

// Eigen-decomposition with roundoff-negative eigenvalues clamped to zero.
fn psd_eigen(a: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let mut eig = SymmetricEigen::new(symmetrize(a));
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, l| m.max(l.abs())).max(1.0);
    for l in eig.eigenvalues.iter_mut() {
        if *l < 0.0 {
            if *l < -EIGEN_CLAMP * top {
                return usage(format!("matrix is indefinite (eigenvalue {l:e})"));
            }
            *l = 0.0;
        }
    }
    Ok(eig)
}

fn psd_eigenvalues(a: &DMatrix<f64>) -> Result<DVector<f64>> {
    Ok(psd_eigen(a)?.eigenvalues)
}

fn psd_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = psd_eigen(a)?;
    let root = eig.eigenvalues.map(f64::sqrt);
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose())
}

/// Closed-form W₂ between Gaussians:
/// `√(|μa-μb|² + tr(Σa + Σb - 2(Σb^½ Σa Σb^½)^½))`.
pub fn w2_gaussian(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    check_dim("Gaussian summary", a.dim(), b.dim())?;
    a.check()?;
    b.check()?;
    let mean2 = (&a.mean - &b.mean).norm_squared();
    let rb = psd_sqrt(&b.covariance)?;
    let cross = &rb * &a.covariance * &rb;
    let cross_root: f64 = psd_eigenvalues(&cross)?.iter().map(|l| l.sqrt()).sum();
    let bures = a.covariance.trace() + b.covariance.trace() - 2.0 * cross_root;
    Ok((mean2 + bures.max(0.0)).sqrt())
}

/// Empirical W₂ between equal-size point clouds via an exact assignment.
///
/// `√((1/n) min_π Σ |aᵢ - b_π(i)|²)`.
pub fn w2_empirical(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let n = a.len();
    check_dim("point cloud size", b.len(), n)?;
    if n == 0 {
        return usage("point clouds must be non-empty");
    }
    if n > MAX_ASSIGNMENT_SIZE {
        return usage(format!(
            "{n} points exceeds the exact-assignment cap of {MAX_ASSIGNMENT_SIZE}; use w2_gaussian on moment summaries"
        ));
    }
    let k = a[0].len();
    for p in a.iter().chain(b) {
        check_dim("point", p.len(), k)?;
    }
    let cost: Vec<f64> = a.iter().flat_map(|p| b.iter().map(move |q| sq_dist(p, q))).collect();
    let assignment = min_cost_assignment(n, &cost);
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok((total / n as f64).max(0.0).sqrt())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact linear assignment by shortest augmenting paths (Jonker–Volgenant).
///
/// Column reduction with reduction transfer gives an initial partial
/// assignment and duals; the remaining free rows are augmented with Dijkstra
/// searches. `cost` is row-major `n × n`; returns the column assigned to every row.
pub fn min_cost_assignment(n: usize, cost: &[f64]) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    const NONE: usize = usize::MAX;
    if n <= 1 {
        return (0..n).collect();
    }
    let c = |i: usize, j: usize| cost[i * n + j];
    let mut row_sol = vec![NONE; n];
    let mut col_sol = vec![NONE; n];
    let mut v = vec![0.0; n];

    // Column reduction.
    let mut matches = vec![0u32; n];
    for j in (0..n).rev() {
        let (mut imin, mut min) = (0, c(0, j));
        for i in 1..n {
            if c(i, j) < min {
                min = c(i, j);
                imin = i;
            }
        }
        v[j] = min;
        matches[imin] += 1;
        if matches[imin] == 1 {
            row_sol[imin] = j;
            col_sol[j] = imin;
        } else if v[j] < v[row_sol[imin]] {
            let j1 = row_sol[imin];
            row_sol[imin] = j;
            col_sol[j] = imin;
            col_sol[j1] = NONE;
        }
    }

    // Reduction transfer.
    let mut free = Vec::with_capacity(n);
    #[allow(clippy::needless_range_loop)]
    for i in 0..n {
        match matches[i] {
            0 => free.push(i),
            1 => {
                let j1 = row_sol[i];
                let min = (0..n).filter(|&j| j != j1).map(|j| c(i, j) - v[j]).fold(f64::INFINITY, f64::min);
                v[j1] -= min;
            }
            _ => {}
        }
    }

    // Augmentation.
    let mut d = vec![0.0; n];
    let mut pred = vec![0usize; n];
    let mut cols: Vec<usize> = (0..n).collect();
    for &free_row in &free {
        for j in 0..n {
            d[j] = c(free_row, j) - v[j];
            pred[j] = free_row;
            cols[j] = j;
        }
        // cols[..low] scanned, cols[low..up] at the current minimum, cols[up..] unscanned.
        let (mut low, mut up) = (0, 0);
        let mut ready = 0;
        let mut min = 0.0;
        let end = 'search: loop {
            if up == low {
                ready = low;
                min = d[cols[up]];
                up += 1;
                let first_unscanned = up;
                for k in first_unscanned..n {
                    let j = cols[k];
                    let h = d[j];
                    if h <= min {
                        if h < min {
                            up = low;
                            min = h;
                        }
                        cols[k] = cols[up];
                        cols[up] = j;
                        up += 1;
                    }
                }
                for &j in &cols[low..up] {
                    if col_sol[j] == NONE {
                        break 'search j;
                    }
                }
            }
            let j1 = cols[low];
            low += 1;
            let i = col_sol[j1];
            let h = c(i, j1) - v[j1] - min;
            let mut k = up;
            while k < n {
                let j = cols[k];
                let v2 = c(i, j) - v[j] - h;
                if v2 < d[j] {
                    pred[j] = i;
                    d[j] = v2;
                    if v2 == min {
                        if col_sol[j] == NONE {
                            break 'search j;
                        }
                        cols[k] = cols[up];
                        cols[up] = j;
                        up += 1;
                    }
                }
                k += 1;
            }
        };
        for &j in &cols[..ready] {
            v[j] += d[j] - min;
        }
        let mut j = end;
        loop {
            let i = pred[j];
            col_sol[j] = i;
            let prev = row_sol[i];
            row_sol[i] = j;
            if i == free_row {
                break;
            }
            j = prev;
        }
    }
    row_sol
}

/// Which coordinates of a chain state a moment summary covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coordinates {
    X,
    V,
    /// `(x, v)` stacked into a 2d-vector.
    Xv,
}

/// Sample mean and unbiased sample covariance of the selected coordinates.
pub fn empirical_moments(snapshot: &EnsembleSnapshot, which: Coordinates) -> Result<GaussianSummary> {
    let m = snapshot.chains();
    if m < 2 {
        return usage(format!("moment estimation needs at least 2 chains, got {m}"));
    }
    let d = snapshot.dim();
    let k = if which == Coordinates::Xv { 2 * d } else { d };
    let row = |c: usize, out: &mut [f64]| match which {
        Coordinates::X => out.copy_from_slice(snapshot.position(c)),
        Coordinates::V => out.copy_from_slice(snapshot.velocity(c)),
        Coordinates::Xv => {
            out[..d].copy_from_slice(snapshot.position(c));
            out[d..].copy_from_slice(snapshot.velocity(c));
        }
    };
    let mut buf = vec![0.0; k];
    let mut mean = DVector::zeros(k);
    for c in 0..m {
        row(c, &mut buf);
        for (acc, b) in mean.iter_mut().zip(&buf) {
            *acc += b;
        }
    }
    mean /= m as f64;
    let mut cov = DMatrix::zeros(k, k);
    for c in 0..m {
        row(c, &mut buf);
        for (b, mu) in buf.iter_mut().zip(mean.iter()) {
            *b -= mu;
        }
        for i in 0..k {
            for j in 0..=i {
                cov[(i, j)] += buf[i] * buf[j];
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            cov[(j, i)] = cov[(i, j)];
        }
    }
    cov /= (m - 1) as f64;
    Ok(GaussianSummary::new_unchecked(mean, cov))
}

/// Ensemble mean of `|v|²`.
pub fn kinetic_energy(snapshot: &EnsembleSnapshot) -> f64 {
    let m = snapshot.chains();
    if m == 0 {
        return 0.0;
    }
    (0..m).map(|c| snapshot.velocity(c).iter().map(|a| a * a).sum::<f64>()).sum::<f64>() / m as f64
}

/// Joint stationary law `N((c, 0), diag(H⁻¹, I/L))`; quadratic targets only.
pub fn stationary_joint_summary(target: &TargetModel) -> Option<GaussianSummary> {
    let x = target.stationary_x_summary()?;
    let d = target.dim();
    let mut mean = DVector::zeros(2 * d);
    mean.rows_mut(0, d).copy_from(&x.mean);
    let mut cov = DMatrix::zeros(2 * d, 2 * d);
    cov.view_mut((0, 0), (d, d)).copy_from(&x.covariance);
    for i in 0..d {
        cov[(d + i, d + i)] = 1.0 / target.l();
    }
    Some(GaussianSummary::new_unchecked(mean, cov))
}

/// W₂ of the moment-matched x-marginal to `p*`; quadratic targets only.
pub fn x_marginal_w2(snapshot: &EnsembleSnapshot, target: &TargetModel) -> Result<Option<f64>> {
    let Some(reference) = target.stationary_x_summary() else {
        return Ok(None);
    };
    let est = empirical_moments(snapshot, Coordinates::X)?;
    w2_gaussian(&est, &reference).map(Some)
}

/// W₂ of the moment-matched joint `(x, v)` law to `p*`; quadratic targets only.
pub fn joint_w2(snapshot: &EnsembleSnapshot, target: &TargetModel) -> Result<Option<f64>> {
    let Some(reference) = stationary_joint_summary(target) else {
        return Ok(None);
    };
    let est = empirical_moments(snapshot, Coordinates::Xv)?;
    w2_gaussian(&est, &reference).map(Some)
}
