//! Adaptive quadrature and the integral forms of the kernel coefficients.

/// Adaptive Simpson integration of `f` over `[a, b]` to relative tolerance `rel_tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    // Scale the absolute tolerance by a coarse magnitude estimate of the integral.
    let scale = ((b - a) / 6.0 * (fa.abs() + 4.0 * fm.abs() + fb.abs())).max(f64::MIN_POSITIVE);
    simpson_rec(f, a, b, fa, fm, fb, whole, rel_tol * scale, 60)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Kernel coefficients recomputed from their stochastic-integral definitions.
///
/// With `u = 1/L`, `γ = 2` and `φ(r) = e^{-2r}`:
/// `a_xv = ∫₀^δ φ`, `b_v = u∫₀^δ φ`, `b_x = u∫₀^δ∫₀^r φ(r-s) ds dr`,
/// `σ_vv = 4u∫₀^δ φ(δ-s)² ds`, `σ_xv = 4u∫₀^δ φ(δ-s)∫_s^δ φ(r-s) dr ds`,
/// `σ_xx = 4u∫₀^δ (∫_s^δ φ(r-s) dr)² ds`. Inner integrals are also done by quadrature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegralCoefficients {
    pub position_velocity: f64,
    pub velocity_gradient: f64,
    pub position_gradient: f64,
    pub var_v: f64,
    pub cov_xv: f64,
    pub var_x: f64,
}

pub fn kernel_integrals(step: f64, smoothness: f64, rel_tol: f64) -> IntegralCoefficients {
    let u = 1.0 / smoothness;
    let phi = |r: f64| (-2.0 * r).exp();
    let inner_tol = rel_tol * 1e-2;
    // ∫_s^δ φ(r-s) dr
    let tail = |s: f64| {
        if s >= step {
            0.0
        } else {
            adaptive_simpson(&|r| phi(r - s), s, step, inner_tol)
        }
    };
    let head = |r: f64| if r <= 0.0 { 0.0 } else { adaptive_simpson(&|s| phi(r - s), 0.0, r, inner_tol) };
    let phi_int = adaptive_simpson(&phi, 0.0, step, rel_tol);
    IntegralCoefficients {
        position_velocity: phi_int,
        velocity_gradient: u * adaptive_simpson(&|s| phi(step - s), 0.0, step, rel_tol),
        position_gradient: u * adaptive_simpson(&head, 0.0, step, rel_tol),
        var_v: 4.0 * u * adaptive_simpson(&|s| phi(step - s).powi(2), 0.0, step, rel_tol),
        cov_xv: 4.0 * u * adaptive_simpson(&|s| phi(step - s) * tail(s), 0.0, step, rel_tol),
        var_x: 4.0 * u * adaptive_simpson(&|s| tail(s).powi(2), 0.0, step, rel_tol),
    }
}
