//! Compressed-sensing reconstruction with locally-low-rank regularization.
//!
//! Solves `min_P 1/2 ||M(EP) - B||^2 + lambda * sum_i ||T_i P||_*` with FISTA,
//! where each `T_i` stacks a p^3 spatial patch across cardiac phases into a
//! matrix. The proximal step is singular-value thresholding per patch.
//!
//! SVT goes through the Gram matrix on the short side (a patch matrix is
//! p^3 x nt with nt small), so a Hermitian eigendecomposition of an nt x nt
//! matrix replaces a full SVD of the tall matrix — the shrinkage
//! `U max(S - tau, 0) V^H` is recovered as `A * V diag(d) V^H` with
//! `d_i = max(s_i - tau, 0) / s_i`.

use crate::encoding::{
    adjoint_encode_masked, apply_mask, forward_encode, normal_op, CoilSet, ImageSeries, KSpace,
    Mask,
};
use crate::{C64, Error, Result};
use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LlrConfig {
    /// Regularization weight on the nuclear norms.
    pub lambda: f64,
    pub iters: usize,
    /// Patch edge length p; patches are non-overlapping p^3 blocks.
    pub patch_size: usize,
    /// Re-randomize the patch grid offset every iteration (cycle spinning).
    pub random_shifts: bool,
    pub seed: u64,
}

impl Default for LlrConfig {
    fn default() -> Self {
        LlrConfig {
            lambda: 2.06,
            iters: 80,
            patch_size: 8,
            random_shifts: true,
            seed: 0,
        }
    }
}

// ---------------------------------------------------------------------------
// Hermitian Jacobi eigendecomposition (small matrices)
// ---------------------------------------------------------------------------

/// Cyclic two-sided Jacobi for Hermitian matrices, n <= a few dozen.
/// Returns eigenvalues and the unitary V with `A = V diag(l) V^H`.
pub(crate) fn hermitian_eig(a: &Array2<C64>) -> (Vec<f64>, Array2<C64>) {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let mut m = a.clone();
    let mut v = Array2::eye(n);
    let norm: f64 = m.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 || n < 2 {
        let evals = (0..n).map(|i| m[[i, i]].re).collect();
        return (evals, v);
    }
    let tol = 1e-15 * norm;
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let beta = m[[p, q]];
                let b = beta.norm();
                off += b;
                if b <= tol {
                    continue;
                }
                // Phase that makes the pivot real, then a real Jacobi rotation.
                let phase = beta / b; // e^{i psi}
                let app = m[[p, p]].re;
                let aqq = m[[q, q]].re;
                let theta = (aqq - app) / (2.0 * b);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // G = [[c, s], [-s conj(phase), c conj(phase)]]; A <- G^H A G, V <- V G.
                let gp = (C64::new(c, 0.0), -phase.conj() * s);
                let gq = (C64::new(s, 0.0), phase.conj() * c);
                for r in 0..n {
                    let arp = m[[r, p]];
                    let arq = m[[r, q]];
                    m[[r, p]] = arp * gp.0 + arq * gp.1;
                    m[[r, q]] = arq * gq.1 + arp * gq.0;
                }
                for col in 0..n {
                    let apc = m[[p, col]];
                    let aqc = m[[q, col]];
                    m[[p, col]] = apc * gp.0.conj() + aqc * gp.1.conj();
                    m[[q, col]] = aqc * gq.1.conj() + apc * gq.0.conj();
                }
                m[[p, q]] = C64::new(0.0, 0.0);
                m[[q, p]] = C64::new(0.0, 0.0);
                m[[p, p]] = C64::new(m[[p, p]].re, 0.0);
                m[[q, q]] = C64::new(m[[q, q]].re, 0.0);
                for r in 0..n {
                    let vrp = v[[r, p]];
                    let vrq = v[[r, q]];
                    v[[r, p]] = vrp * gp.0 + vrq * gp.1;
                    v[[r, q]] = vrq * gq.1 + vrp * gq.0;
                }
            }
        }
        if off <= tol * n as f64 {
            break;
        }
    }
    let evals = (0..n).map(|i| m[[i, i]].re).collect();
    (evals, v)
}

// ---------------------------------------------------------------------------
// Singular-value thresholding
// ---------------------------------------------------------------------------

/// Singular values of `a` via the Gram matrix on its short side.
pub fn singular_values(a: &Array2<C64>) -> Vec<f64> {
    let (m, n) = a.dim();
    if m == 0 || n == 0 {
        return vec![];
    }
    let gram = if m >= n {
        a.t().mapv(|x| x.conj()).dot(a)
    } else {
        a.dot(&a.t().mapv(|x| x.conj()))
    };
    let (mut evals, _) = hermitian_eig(&gram);
    evals.sort_by(|x, y| y.partial_cmp(x).unwrap());
    evals.into_iter().map(|l| l.max(0.0).sqrt()).collect()
}

/// `U max(S - tau, 0) V^H` for `a = U S V^H`; exact identity at tau = 0.
pub fn svt(a: &Array2<C64>, tau: f64) -> Array2<C64> {
    let (m, n) = a.dim();
    if m == 0 || n == 0 {
        return a.clone();
    }
    let ah = a.t().mapv(|x| x.conj());
    if m >= n {
        let gram = ah.dot(a);
        let (evals, v) = hermitian_eig(&gram);
        // W = V diag(d) V^H with d = shrink ratio per singular value.
        let w = ratio_sandwich(&evals, &v, tau);
        a.dot(&w)
    } else {
        let gram = a.dot(&ah);
        let (evals, u) = hermitian_eig(&gram);
        let w = ratio_sandwich(&evals, &u, tau);
        w.dot(a)
    }
}

fn ratio_sandwich(evals: &[f64], v: &Array2<C64>, tau: f64) -> Array2<C64> {
    let n = evals.len();
    let mut scaled = v.clone();
    for (j, &l) in evals.iter().enumerate() {
        let sigma = l.max(0.0).sqrt();
        let d = if sigma > tau { (sigma - tau) / sigma } else { 0.0 };
        for i in 0..n {
            scaled[[i, j]] *= d;
        }
    }
    scaled.dot(&v.t().mapv(|x| x.conj()))
}

// ---------------------------------------------------------------------------
// Patch partition
// ---------------------------------------------------------------------------

/// Segment [0, n) into runs of length p starting at `shift` (the run before
/// the shift and the tail may be shorter); disjoint and covering.
fn axis_cuts(n: usize, p: usize, shift: usize) -> Vec<(usize, usize)> {
    let mut cuts = Vec::new();
    let mut start = 0usize;
    let first = shift % p;
    if first > 0 && first < n {
        cuts.push((0, first));
        start = first;
    }
    while start < n {
        let len = p.min(n - start);
        cuts.push((start, len));
        start += len;
    }
    cuts
}

struct PatchIter {
    z: Vec<(usize, usize)>,
    y: Vec<(usize, usize)>,
    x: Vec<(usize, usize)>,
}

impl PatchIter {
    fn new(nz: usize, ny: usize, nx: usize, p: usize, shifts: (usize, usize, usize)) -> Self {
        PatchIter {
            z: axis_cuts(nz, p, shifts.0),
            y: axis_cuts(ny, p, shifts.1),
            x: axis_cuts(nx, p, shifts.2),
        }
    }

    fn patches(&self) -> impl Iterator<Item = [(usize, usize); 3]> + '_ {
        self.z.iter().flat_map(move |&z| {
            self.y
                .iter()
                .flat_map(move |&y| self.x.iter().map(move |&x| [z, y, x]))
        })
    }
}

fn gather_patch(x: &ImageSeries, p: &[(usize, usize); 3]) -> Array2<C64> {
    let nt = x.dim().0;
    let rows = p[0].1 * p[1].1 * p[2].1;
    let mut mat = Array2::zeros((rows, nt));
    for t in 0..nt {
        let mut r = 0;
        for z in p[0].0..p[0].0 + p[0].1 {
            for y in p[1].0..p[1].0 + p[1].1 {
                for xx in p[2].0..p[2].0 + p[2].1 {
                    mat[[r, t]] = x[[t, z, y, xx]];
                    r += 1;
                }
            }
        }
    }
    mat
}

fn scatter_patch(x: &mut ImageSeries, p: &[(usize, usize); 3], mat: &Array2<C64>) {
    let nt = x.dim().0;
    for t in 0..nt {
        let mut r = 0;
        for z in p[0].0..p[0].0 + p[0].1 {
            for y in p[1].0..p[1].0 + p[1].1 {
                for xx in p[2].0..p[2].0 + p[2].1 {
                    x[[t, z, y, xx]] = mat[[r, t]];
                    r += 1;
                }
            }
        }
    }
}

/// Proximal map of `tau * sum_i ||T_i x||_*`: SVT every patch in place.
pub fn prox_llr(x: &mut ImageSeries, tau: f64, patch: usize, shifts: (usize, usize, usize)) {
    let (_, nz, ny, nx) = x.dim();
    let grid = PatchIter::new(nz, ny, nx, patch, shifts);
    for p in grid.patches() {
        let mat = gather_patch(x, &p);
        let thr = svt(&mat, tau);
        scatter_patch(x, &p, &thr);
    }
}

/// Sum of per-patch nuclear norms at a given grid offset.
pub fn nuclear_norm_sum(x: &ImageSeries, patch: usize, shifts: (usize, usize, usize)) -> f64 {
    let (_, nz, ny, nx) = x.dim();
    let grid = PatchIter::new(nz, ny, nx, patch, shifts);
    grid.patches()
        .map(|p| singular_values(&gather_patch(x, &p)).iter().sum::<f64>())
        .sum()
}

// ---------------------------------------------------------------------------
// FISTA
// ---------------------------------------------------------------------------

/// Largest eigenvalue of `E^H M E` by power iteration (10 steps), with a 1%
/// safety margin on top so 1/L is a valid step size.
pub fn lipschitz_estimate(coils: &CoilSet, mask: &Mask, seed: u64) -> Result<f64> {
    let (_, nz, ny, nx) = coils.dim();
    let nt = mask.dim().0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Array4::from_shape_simple_fn((nt, nz, ny, nx), || {
        C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
    });
    let mut lambda = 1.0;
    for _ in 0..10 {
        let nv = normal_op(&v, coils, mask)?;
        let num: f64 = nv
            .iter()
            .zip(v.iter())
            .map(|(a, b)| (a * b.conj()).re)
            .sum();
        let den: f64 = v.iter().map(|x| x.norm_sqr()).sum();
        lambda = num / den;
        let norm: f64 = nv.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        v = nv / C64::new(norm, 0.0);
    }
    Ok(lambda.max(1e-12) * 1.01)
}

/// Data-consistency term `1/2 ||M(EP) - B||^2` (B is already masked).
fn data_objective(x: &ImageSeries, b: &KSpace, coils: &CoilSet, mask: &Mask) -> Result<f64> {
    let mut ex = forward_encode(x, coils)?;
    apply_mask(&mut ex, mask)?;
    let r: f64 = ex
        .iter()
        .zip(b.iter())
        .map(|(a, bb)| (a - bb).norm_sqr())
        .sum();
    Ok(0.5 * r)
}

/// Full objective with the patch grid anchored at zero offset, so traces are
/// comparable across iterations regardless of prox-time cycle spinning.
pub fn llr_objective(
    x: &ImageSeries,
    b: &KSpace,
    coils: &CoilSet,
    mask: &Mask,
    lambda: f64,
    patch: usize,
) -> Result<f64> {
    Ok(data_objective(x, b, coils, mask)? + lambda * nuclear_norm_sum(x, patch, (0, 0, 0)))
}

/// FISTA with the LLR proximal step. `b` must be masked and normalized.
/// Returns the reconstruction and the objective trace (one entry per
/// iteration, evaluated at the proximal iterate).
pub fn fista(
    b: &KSpace,
    coils: &CoilSet,
    mask: &Mask,
    cfg: &LlrConfig,
) -> Result<(ImageSeries, Vec<f64>)> {
    if cfg.patch_size == 0 {
        return Err(Error::InvalidConfig("patch size 0".into()));
    }
    let l = lipschitz_estimate(coils, mask, cfg.seed ^ 0x9E3779B97F4A7C15)?;
    let step = 1.0 / l;
    let atb = adjoint_encode_masked(b, coils, mask)?;
    let mut x = atb.clone();
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.iters);
    let mut obj0 = None;
    for _it in 0..cfg.iters {
        // gradient step on the smooth part: y - step * (E^H M E y - atb)
        let ny_ = normal_op(&y, coils, mask)?;
        let mut x_new = y.clone();
        ndarray::Zip::from(&mut x_new)
            .and(&ny_)
            .and(&atb)
            .for_each(|xn, &n, &a| *xn -= (n - a) * step);
        let shifts = if cfg.random_shifts {
            (
                rng.gen_range(0..cfg.patch_size),
                rng.gen_range(0..cfg.patch_size),
                rng.gen_range(0..cfg.patch_size),
            )
        } else {
            (0, 0, 0)
        };
        prox_llr(&mut x_new, cfg.lambda * step, cfg.patch_size, shifts);
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_new;
        ndarray::Zip::from(&mut y)
            .and(&x_new)
            .and(&x)
            .for_each(|yy, &xn, &xo| *yy = xn + (xn - xo) * beta);
        x = x_new;
        t = t_new;
        let obj = llr_objective(&x, b, coils, mask, cfg.lambda, cfg.patch_size)?;
        if !obj.is_finite() {
            return Err(Error::NonFinite("LLR objective".into()));
        }
        let first = *obj0.get_or_insert(obj);
        if obj > 10.0 * first {
            return Err(Error::Diverged(format!(
                "objective grew from {first:.3e} to {obj:.3e}"
            )));
        }
        trace.push(obj);
    }
    Ok((x, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_coils, random_image, random_matrix};
    use crate::sampling::golden_angle_mask;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(n: usize, seed: u64) -> Array2<C64> {
        let a = random_matrix(n, n, seed);
        let ah = a.t().mapv(|x| x.conj());
        (&a + &ah) / C64::new(2.0, 0.0)
    }

    // One-sided Jacobi SVD, the independent oracle for svt: orthogonalize the
    // columns of A by plane rotations, never forming a Gram matrix.
    pub(crate) fn jacobi_svd(a: &Array2<C64>) -> (Array2<C64>, Vec<f64>, Array2<C64>) {
        let (m, n) = a.dim();
        assert!(m >= n, "oracle expects tall matrices");
        let mut u = a.clone();
        let mut v: Array2<C64> = Array2::eye(n);
        for _sweep in 0..60 {
            let mut rotated = false;
            for i in 0..n - 1 {
                for j in i + 1..n {
                    let mut g = C64::new(0.0, 0.0);
                    let mut aii = 0.0;
                    let mut ajj = 0.0;
                    for r in 0..m {
                        g += u[[r, i]].conj() * u[[r, j]];
                        aii += u[[r, i]].norm_sqr();
                        ajj += u[[r, j]].norm_sqr();
                    }
                    let gb = g.norm();
                    if gb <= 1e-15 * (aii * ajj).sqrt() || gb == 0.0 {
                        continue;
                    }
                    rotated = true;
                    let phase = g / gb;
                    let theta = (ajj - aii) / (2.0 * gb);
                    let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    for r in 0..m {
                        let ui = u[[r, i]];
                        let uj = u[[r, j]];
                        u[[r, i]] = ui * c - uj * phase.conj() * s;
                        u[[r, j]] = ui * phase * s + uj * c;
                    }
                    for r in 0..n {
                        let vi = v[[r, i]];
                        let vj = v[[r, j]];
                        v[[r, i]] = vi * c - vj * phase.conj() * s;
                        v[[r, j]] = vi * phase * s + vj * c;
                    }
                }
            }
            if !rotated {
                break;
            }
        }
        let mut sig = vec![0.0; n];
        for j in 0..n {
            let norm: f64 = (0..m).map(|r| u[[r, j]].norm_sqr()).sum::<f64>().sqrt();
            sig[j] = norm;
            if norm > 0.0 {
                for r in 0..m {
                    u[[r, j]] /= norm;
                }
            }
        }
        (u, sig, v)
    }

    fn svt_oracle(a: &Array2<C64>, tau: f64) -> Array2<C64> {
        let (m, n) = a.dim();
        if m >= n {
            let (u, sig, v) = jacobi_svd(a);
            let mut us = u;
            for j in 0..n {
                let d = (sig[j] - tau).max(0.0);
                for r in 0..m {
                    us[[r, j]] *= d;
                }
            }
            us.dot(&v.t().mapv(|x| x.conj()))
        } else {
            let at = a.t().mapv(|x| x.conj());
            svt_oracle(&at, tau).t().mapv(|x| x.conj())
        }
    }

    #[test]
    fn hermitian_eig_reconstructs() {
        for n in [1, 2, 5, 12] {
            let a = random_hermitian(n, 100 + n as u64);
            let (evals, v) = hermitian_eig(&a);
            // V unitary
            let vh = v.t().mapv(|x| x.conj());
            let id = vh.dot(&v);
            for i in 0..n {
                for j in 0..n {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((id[[i, j]] - C64::new(want, 0.0)).norm() < 1e-12);
                }
            }
            // V diag(l) V^H = A
            let mut vd = v.clone();
            for (j, &l) in evals.iter().enumerate() {
                for i in 0..n {
                    vd[[i, j]] *= l;
                }
            }
            let rec = vd.dot(&vh);
            for (x, y) in rec.iter().zip(a.iter()) {
                assert!((x - y).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn svt_zero_tau_is_identity() {
        for (m, n) in [(8, 4), (4, 8), (6, 6)] {
            let a = random_matrix(m, n, 7);
            let out = svt(&a, 0.0);
            for (x, y) in out.iter().zip(a.iter()) {
                assert!((x - y).norm() < 1e-10);
            }
        }
        // rank-deficient input as well
        let a = random_matrix(8, 3, 9);
        let mut low = Array2::zeros((8, 5));
        for j in 0..5 {
            for i in 0..8 {
                low[[i, j]] = a[[i, j % 3]];
            }
        }
        let out = svt(&low, 0.0);
        for (x, y) in out.iter().zip(low.iter()) {
            assert!((x - y).norm() < 1e-10);
        }
    }

    #[test]
    fn svt_rank_one_closed_form() {
        let m = 8;
        let n = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let u: Vec<C64> = (0..m)
            .map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        let v: Vec<C64> = (0..n)
            .map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        let un: f64 = u.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        let vn: f64 = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        let sigma = 3.0;
        let mut a = Array2::zeros((m, n));
        for i in 0..m {
            for j in 0..n {
                a[[i, j]] = u[i] / un * (v[j] / vn).conj() * sigma;
            }
        }
        for tau in [0.5, 2.9, 3.5] {
            let out = svt(&a, tau);
            let scale = (sigma - tau).max(0.0) / sigma;
            for (x, y) in out.iter().zip(a.iter()) {
                assert!((x - y * scale).norm() < 1e-10, "tau {tau}");
            }
        }
    }

    #[test]
    fn svt_matches_jacobi_oracle() {
        for (seed, (m, n)) in [(1, (16, 8)), (2, (8, 8)), (3, (5, 9)), (4, (12, 3))]
            .into_iter()
        {
            let a = random_matrix(m, n, seed);
            for tau in [0.0, 0.3, 1.0, 2.5] {
                let ours = svt(&a, tau);
                let oracle = svt_oracle(&a, tau);
                let scale: f64 = a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
                for (x, y) in ours.iter().zip(oracle.iter()) {
                    assert!((x - y).norm() < 1e-8 * scale.max(1.0), "tau {tau} m {m} n {n}");
                }
            }
        }
    }

    #[test]
    fn svt_is_prox_of_nuclear_norm() {
        // F(z) = 1/2 ||z - a||_F^2 + tau ||z||_* is minimized by svt(a, tau):
        // random perturbations around the output must not decrease F.
        let a = random_matrix(3, 2, 33);
        let tau = 0.4;
        let z = svt(&a, tau);
        let f = |m: &Array2<C64>| -> f64 {
            let fit: f64 = m
                .iter()
                .zip(a.iter())
                .map(|(x, y)| (x - y).norm_sqr())
                .sum();
            0.5 * fit + tau * singular_values(m).iter().sum::<f64>()
        };
        let fz = f(&z);
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        for _ in 0..200 {
            let mut pert = z.clone();
            for p in pert.iter_mut() {
                *p += C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5) * 0.05;
            }
            assert!(f(&pert) >= fz - 1e-12);
        }
    }

    #[test]
    fn axis_cuts_cover_disjointly() {
        for (n, p, s) in [(16, 8, 0), (16, 8, 3), (13, 8, 5), (7, 8, 2), (8, 8, 7)] {
            let cuts = axis_cuts(n, p, s);
            let mut seen = vec![0u8; n];
            for (start, len) in cuts {
                assert!(len >= 1 && len <= p);
                for i in start..start + len {
                    seen[i] += 1;
                }
            }
            assert!(seen.iter().all(|&c| c == 1), "n={n} p={p} s={s}");
        }
    }

    #[test]
    fn prox_is_energy_nonexpansive() {
        let mut x = random_image((3, 10, 9, 8), 55);
        let e0: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        prox_llr(&mut x, 0.5, 4, (1, 2, 3));
        let e1: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        assert!(e1 <= e0 * (1.0 + 1e-12));
    }

    #[test]
    fn nuclear_sum_rank_one_volume() {
        // x[t] = w(t) * spatial pattern -> every patch matrix is rank 1 with
        // nuclear norm ||patch||_F.
        let (nt, nz, ny, nx) = (4, 6, 6, 6);
        let pattern = random_image((1, nz, ny, nx), 66);
        let w = [1.0, 2.0, -0.5, 0.3];
        let mut x = ImageSeries::zeros((nt, nz, ny, nx));
        for t in 0..nt {
            for z in 0..nz {
                for y in 0..ny {
                    for xx in 0..nx {
                        x[[t, z, y, xx]] = pattern[[0, z, y, xx]] * w[t];
                    }
                }
            }
        }
        let total = nuclear_norm_sum(&x, 3, (0, 0, 0));
        // sum over patches of ||patch||_F
        let wnorm: f64 = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        let grid = PatchIter::new(nz, ny, nx, 3, (0, 0, 0));
        let expect: f64 = grid
            .patches()
            .map(|p| {
                let mut e = 0.0f64;
                for z in p[0].0..p[0].0 + p[0].1 {
                    for y in p[1].0..p[1].0 + p[1].1 {
                        for xx in p[2].0..p[2].0 + p[2].1 {
                            e += pattern[[0, z, y, xx]].norm_sqr();
                        }
                    }
                }
                e.sqrt() * wnorm
            })
            .sum();
        assert!((total - expect).abs() < 1e-8 * expect);
    }

    #[test]
    fn lipschitz_at_most_one_for_unit_sos() {
        let coils = random_coils(3, (8, 8, 8), 77);
        let mask = golden_angle_mask(8, 8, 4, 10, 1);
        let l = lipschitz_estimate(&coils, &mask, 5).unwrap();
        assert!(l <= 1.011 && l > 0.1, "L = {l}");
    }

    #[test]
    fn fista_reduces_objective_on_small_problem() {
        let coils = random_coils(2, (8, 8, 8), 88);
        let img = random_image((4, 8, 8, 8), 89);
        let mask = golden_angle_mask(8, 8, 4, 16, 2);
        let mut b = forward_encode(&img, &coils).unwrap();
        apply_mask(&mut b, &mask).unwrap();
        let cfg = LlrConfig {
            lambda: 0.05,
            iters: 12,
            patch_size: 4,
            random_shifts: false,
            seed: 3,
        };
        let (x, trace) = fista(&b, &coils, &mask, &cfg).unwrap();
        assert_eq!(trace.len(), 12);
        assert!(trace.last().unwrap() < &trace[0]);
        assert!(x.iter().all(|v| v.is_finite()));
    }
}
