//! Learnable pointwise activations parametrized by knot weights on a fixed
//! uniform grid: either piecewise-linear interpolation between the knots or a
//! Gaussian radial basis expansion with bandwidth equal to the knot spacing.
//!
//! Knots sit at `mu_j = (j - (n-1)/2) * omega`, so the grid is centered on 0
//! and covers roughly ±(n-1)/2 * omega. Piecewise-linear evaluation clamps
//! outside the grid (zero slope, gradient routed to the boundary knot).
//! Activations are applied to the real and imaginary parts independently,
//! with shared knots.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActKind {
    Linear,
    Rbf,
}

/// Evaluate the activation and its derivative with respect to the input.
#[inline]
pub fn eval(kind: ActKind, phi: &[f64], omega: f64, h: f64) -> (f64, f64) {
    match kind {
        ActKind::Linear => pl_eval(phi, omega, h),
        ActKind::Rbf => rbf_eval(phi, omega, h),
    }
}

/// Accumulate d(loss)/d(phi_j) given the cotangent `ubar` at input `h`.
#[inline]
pub fn knot_grad(kind: ActKind, phi: &[f64], omega: f64, h: f64, ubar: f64, grad: &mut [f64]) {
    match kind {
        ActKind::Linear => pl_knot_grad(phi.len(), omega, h, ubar, grad),
        ActKind::Rbf => rbf_knot_grad(phi.len(), omega, h, ubar, grad),
    }
}

/// Fused reverse-mode step: one walk yields the value phi(h), the pulled-back
/// input cotangent `ubar * phi'(h)`, and the knot gradient scatter. Reverse
/// mode needs all three per lane, and for the RBF variant fusing them saves
/// two of the three window walks.
#[inline]
pub fn backprop(
    kind: ActKind,
    phi: &[f64],
    omega: f64,
    h: f64,
    ubar: f64,
    grad: &mut [f64],
) -> (f64, f64) {
    match kind {
        ActKind::Linear => {
            let n = phi.len();
            let u = pl_locate(n, omega, h);
            if u <= 0.0 {
                grad[0] += ubar;
                return (phi[0], 0.0);
            }
            if u >= (n - 1) as f64 {
                grad[n - 1] += ubar;
                return (phi[n - 1], 0.0);
            }
            let j = u as usize;
            let f = u - j as f64;
            grad[j] += ubar * (1.0 - f);
            grad[j + 1] += ubar * f;
            let value = phi[j] * (1.0 - f) + phi[j + 1] * f;
            (value, ubar * (phi[j + 1] - phi[j]) / omega)
        }
        ActKind::Rbf => {
            let n = phi.len();
            let u = pl_locate(n, omega, h);
            let Some((lo, hi)) = rbf_window(n, u) else {
                return (0.0, 0.0);
            };
            let mut value = 0.0;
            let mut slope = 0.0;
            rbf_walk(u, lo, hi, |i, g| {
                let w = phi[i] * g;
                value += w;
                slope += w * (i as f64 - u);
                grad[i] += ubar * g;
            });
            (value, ubar * slope / omega)
        }
    }
}

/// Knot abscissas for identity initialization.
pub fn knot_positions(n: usize, omega: f64) -> Vec<f64> {
    let c = (n as f64 - 1.0) / 2.0;
    (0..n).map(|j| (j as f64 - c) * omega).collect()
}

// ---------------------------------------------------------------------------
// piecewise linear
// ---------------------------------------------------------------------------

#[inline]
fn pl_locate(n: usize, omega: f64, h: f64) -> f64 {
    h / omega + (n as f64 - 1.0) / 2.0
}

#[inline]
pub fn pl_eval(phi: &[f64], omega: f64, h: f64) -> (f64, f64) {
    let n = phi.len();
    let u = pl_locate(n, omega, h);
    if u <= 0.0 {
        return (phi[0], 0.0);
    }
    if u >= (n - 1) as f64 {
        return (phi[n - 1], 0.0);
    }
    let j = u as usize; // floor for u > 0
    let f = u - j as f64;
    let value = phi[j] * (1.0 - f) + phi[j + 1] * f;
    let slope = (phi[j + 1] - phi[j]) / omega;
    (value, slope)
}

#[inline]
fn pl_knot_grad(n: usize, omega: f64, h: f64, ubar: f64, grad: &mut [f64]) {
    let u = pl_locate(n, omega, h);
    if u <= 0.0 {
        grad[0] += ubar;
    } else if u >= (n - 1) as f64 {
        grad[n - 1] += ubar;
    } else {
        let j = u as usize;
        let f = u - j as f64;
        grad[j] += ubar * (1.0 - f);
        grad[j + 1] += ubar * f;
    }
}

// ---------------------------------------------------------------------------
// Gaussian RBF (bandwidth = knot spacing)
// ---------------------------------------------------------------------------

/// Gaussians further than 8 bandwidths contribute < 1e-14 and are skipped.
const RBF_WINDOW: f64 = 8.0;
const E_INV: f64 = 0.36787944117144233; // exp(-1)

#[inline]
fn rbf_window(n: usize, u: f64) -> Option<(usize, usize)> {
    let lo = (u - RBF_WINDOW).ceil().max(0.0);
    let hi = (u + RBF_WINDOW).floor().min((n - 1) as f64);
    if lo > hi {
        None
    } else {
        Some((lo as usize, hi as usize))
    }
}

/// Walk the window with two exponentials total: consecutive Gaussian values
/// satisfy g(i+1) = g(i) * exp(d - 0.5) where d = u - i, and that ratio
/// itself shrinks by exp(-1) per step.
#[inline]
fn rbf_walk(u: f64, lo: usize, hi: usize, mut f: impl FnMut(usize, f64)) {
    let d0 = u - lo as f64;
    let mut g = (-0.5 * d0 * d0).exp();
    let mut ratio = (d0 - 0.5).exp();
    for i in lo..=hi {
        f(i, g);
        g *= ratio;
        ratio *= E_INV;
    }
}

#[inline]
pub fn rbf_eval(phi: &[f64], omega: f64, h: f64) -> (f64, f64) {
    let n = phi.len();
    let u = pl_locate(n, omega, h);
    let Some((lo, hi)) = rbf_window(n, u) else {
        return (0.0, 0.0);
    };
    let mut value = 0.0;
    let mut slope = 0.0;
    rbf_walk(u, lo, hi, |i, g| {
        let w = phi[i] * g;
        value += w;
        slope += w * (i as f64 - u);
    });
    (value, slope / omega)
}

#[inline]
fn rbf_knot_grad(n: usize, omega: f64, h: f64, ubar: f64, grad: &mut [f64]) {
    let u = pl_locate(n, omega, h);
    let Some((lo, hi)) = rbf_window(n, u) else {
        return;
    };
    rbf_walk(u, lo, hi, |i, g| {
        grad[i] += ubar * g;
    });
}

// ---------------------------------------------------------------------------
// scalar piecewise-linear modulation over [0, 1/2]
// ---------------------------------------------------------------------------

/// Modulation weight phi(m) with knots uniform on [0, 1/2]; m is the mean
/// sampling rate. Clamps at the ends like the signal activations.
#[inline]
pub fn modulation_eval(knots: &[f64], m: f64) -> f64 {
    let n = knots.len();
    let spacing = 0.5 / (n as f64 - 1.0);
    let u = m / spacing;
    if u <= 0.0 {
        return knots[0];
    }
    if u >= (n - 1) as f64 {
        return knots[n - 1];
    }
    let j = u as usize;
    let f = u - j as f64;
    knots[j] * (1.0 - f) + knots[j + 1] * f
}

#[inline]
pub fn modulation_knot_grad(n: usize, m: f64, cbar: f64, grad: &mut [f64]) {
    let spacing = 0.5 / (n as f64 - 1.0);
    let u = m / spacing;
    if u <= 0.0 {
        grad[0] += cbar;
    } else if u >= (n - 1) as f64 {
        grad[n - 1] += cbar;
    } else {
        let j = u as usize;
        let f = u - j as f64;
        grad[j] += cbar * (1.0 - f);
        grad[j + 1] += cbar * f;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_knots_reproduce_input_in_range() {
        let n = 91;
        let omega = 0.17;
        let phi = knot_positions(n, omega);
        let limit = (n as f64 - 1.0) / 2.0 * omega;
        for h in [-7.6, -3.2, -0.01, 0.0, 0.4, 2.11, 7.6] {
            let (v, s) = pl_eval(&phi, omega, h);
            assert!((v - h).abs() < 1e-12, "h={h} v={v}");
            assert!((s - 1.0).abs() < 1e-12);
            assert!(h.abs() < limit);
        }
        // clamped outside with zero slope
        let (v, s) = pl_eval(&phi, omega, 9.0);
        assert!((v - limit).abs() < 1e-12 && s == 0.0);
        let (v, s) = pl_eval(&phi, omega, -9.0);
        assert!((v + limit).abs() < 1e-12 && s == 0.0);
    }

    #[test]
    fn pl_slope_matches_finite_differences() {
        let phi: Vec<f64> = (0..31).map(|j| ((j * 7 + 3) % 13) as f64 * 0.1 - 0.5).collect();
        let omega = 0.2;
        // segment interiors only: the slope is discontinuous at the knots
        for h in [-2.9, -1.05, 0.33, 1.73, 2.75] {
            let (_, s) = pl_eval(&phi, omega, h);
            let eps = 1e-7;
            let (vp, _) = pl_eval(&phi, omega, h + eps);
            let (vm, _) = pl_eval(&phi, omega, h - eps);
            let fd = (vp - vm) / (2.0 * eps);
            assert!((s - fd).abs() < 1e-5, "h={h} slope {s} fd {fd}");
        }
    }

    #[test]
    fn pl_knot_grad_is_interpolation_weight() {
        let n = 11;
        let omega = 0.5;
        let mut grad = vec![0.0; n];
        // h = 0.3 -> u = 5.6: weights 0.4 on knot 5, 0.6 on knot 6
        pl_knot_grad(n, omega, 0.3, 2.0, &mut grad);
        assert!((grad[5] - 0.8).abs() < 1e-12);
        assert!((grad[6] - 1.2).abs() < 1e-12);
        let mut g2 = vec![0.0; n];
        pl_knot_grad(n, omega, 100.0, 1.5, &mut g2);
        assert_eq!(g2[n - 1], 1.5);
    }

    #[test]
    fn rbf_matches_direct_sum() {
        let n = 91;
        let omega = 0.17;
        let phi: Vec<f64> = (0..n).map(|j| ((j * 11 + 5) % 17) as f64 * 0.07 - 0.5).collect();
        let c = (n as f64 - 1.0) / 2.0;
        for h in [-8.0, -3.3, -0.2, 0.0, 0.17, 1.9, 7.4, 9.5] {
            let (v, s) = rbf_eval(&phi, omega, h);
            // direct evaluation over all knots
            let mut dv = 0.0;
            let mut ds = 0.0;
            for j in 0..n {
                let mu = (j as f64 - c) * omega;
                let g = (-(h - mu).powi(2) / (2.0 * omega * omega)).exp();
                dv += phi[j] * g;
                ds += phi[j] * g * (mu - h) / (omega * omega);
            }
            assert!((v - dv).abs() < 1e-12 * dv.abs().max(1.0), "h={h}: {v} vs {dv}");
            assert!((s - ds).abs() < 1e-10 * ds.abs().max(1.0), "h={h}: {s} vs {ds}");
        }
    }

    #[test]
    fn rbf_knot_grad_matches_gaussian_weights() {
        let n = 15;
        let omega = 0.3;
        let phi = vec![0.0; n];
        let h = 0.4;
        let mut grad = vec![0.0; n];
        rbf_knot_grad(n, omega, h, 1.0, &mut grad);
        let c = (n as f64 - 1.0) / 2.0;
        for j in 0..n {
            let mu = (j as f64 - c) * omega;
            let g = (-(h - mu).powi(2) / (2.0 * omega * omega)).exp();
            let expect = if ((h / omega + c) - j as f64).abs() <= RBF_WINDOW { g } else { 0.0 };
            assert!((grad[j] - expect).abs() < 1e-13, "knot {j}");
        }
        let _ = phi;
    }

    #[test]
    fn modulation_interpolates_and_clamps() {
        let knots = vec![1.0, 2.0, 4.0];
        // spacing 0.25 over [0, 0.5]
        assert_eq!(modulation_eval(&knots, 0.0), 1.0);
        assert!((modulation_eval(&knots, 0.125) - 1.5).abs() < 1e-14);
        assert!((modulation_eval(&knots, 0.25) - 2.0).abs() < 1e-14);
        assert_eq!(modulation_eval(&knots, 0.5), 4.0);
        assert_eq!(modulation_eval(&knots, 0.9), 4.0); // full sampling clamps to the end
        let mut grad = vec![0.0; 3];
        modulation_knot_grad(3, 0.125, 2.0, &mut grad);
        assert!((grad[0] - 1.0).abs() < 1e-14 && (grad[1] - 1.0).abs() < 1e-14);
    }
}
