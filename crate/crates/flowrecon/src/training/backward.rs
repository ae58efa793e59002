//! Hand-written reverse mode through the unrolled network.
//!
//! Forward recurrence, per layer k = 1..K (weights indexed k-1):
//!
//! ```text
//!   G_k     = c_ud 路 E^H(M phi_d(M E P_{k-1} - b)) + c_ur 路 sum_f D_f^T phi_r(D_f P_{k-1})
//!   S_k     = alpha_k S_{k-1} + G_k
//!   P_k     = P_{k-1} - S_k
//! ```
//!
//! with P_0 = alpha0 路 E^H b and the loss sum_k w_k ||P_k - P*||_1. Running
//! the chain rule backwards gives, with lbar_k = w_k sign(P_k - P*):
//!
//! ```text
//!   pbar_K  = lbar_K
//!   sbar_k  = -pbar_k + alpha_{k+1} sbar_{k+1}        (alpha_{K+1} = 0)
//!   Gbar_k  = sbar_k
//!   pbar_{k-1} = pbar_k + lbar_{k-1} + (dG_k/dP_{k-1})^T Gbar_k
//! ```
//!
//! The filter gradient picks up two terms because a filter appears on both
//! sides of the regularizer: once in the analysis convolution D_f and once in
//! the synthesis D_f^T. Dropping the synthesis term is the classic mistake -
//! the finite-difference tests catch it immediately.

use ndarray::Zip;

use super::loss::{add_weighted_sign, layer_weights};
use crate::encoding::{
    adjoint_encode_masked, apply_mask, forward_encode, ImageSeries, KSpace,
};
use crate::flowvn::activation::{self, ActKind};
use crate::flowvn::conv::{conv_padded, kernel_grad2_padded, real_dot, Padded, HALO, N_BANKS};
use crate::flowvn::infer::{forward_trace, modulation_scalars, VnInput};
use crate::flowvn::model::VnWeights;
use crate::{Error, Result, C64};

/// Loss and d(loss)/d(theta) for one training example. Gradients come back in
/// a weight-shaped container; flag-disabled classes stay exactly zero.
pub fn backward(
    input: &VnInput,
    w: &VnWeights,
    target: &ImageSeries,
    tau: f64,
) -> Result<(f64, VnWeights)> {
    if tau < 0.0 {
        return Err(Error::InvalidConfig(format!("negative loss decay tau = {tau}")));
    }
    let trace = forward_trace(input, w)?;
    if target.dim() != trace.zero_filled.dim() {
        return Err(Error::ShapeMismatch(format!(
            "target {:?} vs image {:?}",
            target.dim(),
            trace.zero_filled.dim()
        )));
    }

    let params = &w.params;
    let kk = params.k_layers;
    let mut grads = VnWeights::zeros_like(w);
    if kk == 0 {
        return Ok((0.0, grads));
    }
    let wk = layer_weights(kk, tau);

    let mut loss = 0.0;
    let mut pbar = ImageSeries::zeros(target.dim());
    loss += add_weighted_sign(&mut pbar, &trace.p[kk], target, wk[kk - 1]);
    let mut sbar = ImageSeries::zeros(target.dim());

    for k in (1..=kk).rev() {
        let lw = &w.layers[k - 1];
        let saved = &trace.layers[k - 1];
        let alpha_next = if k < kk && params.momentum_on { w.layers[k].alpha } else { 0.0 };

        // sbar_k = -pbar_k + alpha_{k+1} sbar_{k+1}; this is also Gbar_k
        let sb = Zip::from(&pbar)
            .and(&sbar)
            .map_collect(|&p, &s| C64::new(alpha_next * s.re - p.re, alpha_next * s.im - p.im));

        let gl = &mut grads.layers[k - 1];
        if params.momentum_on {
            gl.alpha = real_dot(&sb, &trace.s[k - 1]);
        }

        let (c_ud, c_ur) = modulation_scalars(lw, params, trace.mbar);
        if params.modulation_on {
            let cbar_ud = real_dot(&sb, &saved.out_d);
            let cbar_ur = real_dot(&sb, &saved.out_r);
            activation::modulation_knot_grad(params.n_mod_knts, trace.mbar, cbar_ud, &mut gl.phi_ud);
            activation::modulation_knot_grad(params.n_mod_knts, trace.mbar, cbar_ur, &mut gl.phi_ur);
        }

        // identity path P_k = P_{k-1} - ..., plus the loss term at k-1
        let mut pbar_prev = pbar;
        if k >= 2 {
            loss += add_weighted_sign(&mut pbar_prev, &trace.p[k - 1], target, wk[k - 2]);
        }

        // --- data term: out_d = E^H(M phi_d(M E P - b)) ---
        let gd = sb.mapv(|v| v * c_ud);
        let mut rbar = forward_encode(&gd, input.coils)?;
        apply_mask(&mut rbar, input.mask)?;
        if params.data_activation_on {
            kspace_lane_backprop(
                params.act_kind,
                &lw.phi_d,
                params.omega,
                &saved.resid,
                &mut rbar,
                &mut gl.phi_d,
            );
        }
        pbar_prev += &adjoint_encode_masked(&rbar, input.coils, input.mask)?;

        // --- regularizer: out_r = sum_f D_f^T phi_r(D_f P) ---
        let gr = sb.mapv(|v| v * c_ur);
        let grpad = Padded::from_image(&gr);
        let ppad = Padded::from_image(&trace.p[k - 1]);
        let mut pbar_pad = Padded::zeros_like_image(&gr);
        let mut ubar_pad = Padded::zeros_like_image(&gr);
        let mut v_pad = Padded::zeros_like_image(&gr);
        let mut idx = 0;
        for bank in 0..N_BANKS {
            for f in 0..params.n_f {
                let kernel = lw.filters[bank].row(f);
                let kernel = kernel.as_slice().expect("kernel rows are contiguous");
                // Vbar = D(Gbar'), then in one lane pass over the stored
                // pre-activations U: Ubar = Vbar phi'(U), V = phi(U), knot grads.
                ubar_pad.clear();
                conv_padded(&grpad, kernel, bank, params.n_c, false, &mut ubar_pad);
                reg_lane_backprop(
                    params.act_kind,
                    &lw.phi_r[idx],
                    params.omega,
                    &saved.responses[idx],
                    &mut ubar_pad,
                    &mut v_pad,
                    &mut gl.phi_r[idx],
                );
                conv_padded(&ubar_pad, kernel, bank, params.n_c, true, &mut pbar_pad);
                let mut grow = gl.filters[bank].row_mut(f);
                let grow = grow.as_slice_mut().expect("kernel rows are contiguous");
                // analysis side <Ubar, d(D P)/dw> plus synthesis side
                // <Gbar', d(D^T V)/dw>, one fused sweep
                kernel_grad2_padded(&ppad, &ubar_pad, &grpad, &v_pad, bank, params.n_c, grow);
                idx += 1;
            }
        }
        pbar_pad.add_into(&mut pbar_prev);

        pbar = pbar_prev;
        sbar = sb;
    }

    // P_0 = alpha0 * E^H b
    grads.alpha0 = real_dot(&pbar, &trace.zero_filled);

    check_finite_grads(&grads)?;
    Ok((loss, grads))
}

/// rbar <- rbar * phi'(resid) lane-wise, scattering knot gradients.
fn kspace_lane_backprop(
    kind: ActKind,
    knots: &[f64],
    omega: f64,
    resid: &KSpace,
    rbar: &mut KSpace,
    grad: &mut [f64],
) {
    Zip::from(rbar).and(resid).for_each(|rb, &rv| {
        let (_, ure) = activation::backprop(kind, knots, omega, rv.re, rb.re, grad);
        let (_, uim) = activation::backprop(kind, knots, omega, rv.im, rb.im, grad);
        *rb = C64::new(ure, uim);
    });
}

/// One pass over a filter's lanes: reads the stored pre-activation U and the
/// cotangent Vbar (in `ubar_pad`), rewrites `ubar_pad` to Ubar = Vbar phi'(U),
/// writes V = phi(U) into `v_pad`, and scatters the knot gradients. Both
/// padded outputs get their halos zeroed in the same sweep, because they feed
/// straight back into convolutions that assume zero halos.
fn reg_lane_backprop(
    kind: ActKind,
    knots: &[f64],
    omega: f64,
    u: &ImageSeries,
    ubar_pad: &mut Padded,
    v_pad: &mut Padded,
    grad: &mut [f64],
) {
    let nx = u.dim().3;
    let u_flat = u.as_slice().expect("image must be contiguous");
    for (urow, (ub_row, v_row)) in u_flat
        .chunks_exact(nx)
        .zip(ubar_pad.rows_mut().zip(v_pad.rows_mut()))
    {
        let srow = ub_row.len();
        for lane in 0..2 * HALO {
            ub_row[lane] = 0.0;
            ub_row[srow - 1 - lane] = 0.0;
            v_row[lane] = 0.0;
            v_row[srow - 1 - lane] = 0.0;
        }
        for (j, uv) in urow.iter().enumerate() {
            let re = 2 * HALO + 2 * j;
            let (vre, ure) = activation::backprop(kind, knots, omega, uv.re, ub_row[re], grad);
            ub_row[re] = ure;
            v_row[re] = vre;
            let (vim, uim) =
                activation::backprop(kind, knots, omega, uv.im, ub_row[re + 1], grad);
            ub_row[re + 1] = uim;
            v_row[re + 1] = vim;
        }
    }
}

/// Reject non-finite gradients, naming the offending parameter class.
fn check_finite_grads(g: &VnWeights) -> Result<()> {
    let bad = |xs: &[f64]| xs.iter().any(|v| !v.is_finite());
    if !g.alpha0.is_finite() {
        return Err(Error::NonFinite("gradient of alpha0".into()));
    }
    for (k, l) in g.layers.iter().enumerate() {
        for (bank, fs) in l.filters.iter().enumerate() {
            if fs.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of layer {k} bank {bank} filters"
                )));
            }
        }
        for (i, line) in l.phi_r.iter().enumerate() {
            if bad(line) {
                return Err(Error::NonFinite(format!("gradient of layer {k} phi_r[{i}]")));
            }
        }
        if bad(&l.phi_d) {
            return Err(Error::NonFinite(format!("gradient of layer {k} phi_d")));
        }
        if bad(&l.phi_ud) || bad(&l.phi_ur) {
            return Err(Error::NonFinite(format!("gradient of layer {k} modulation")));
        }
        if !l.alpha.is_finite() {
            return Err(Error::NonFinite(format!("gradient of layer {k} alpha")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::forward_encode;
    use crate::flowvn::model::{init_weights, NetworkParams};
    use crate::flowvn::{infer, VnInput};
    use crate::sampling::{full_mask, golden_angle_mask};
    use crate::testutil::{random_coils, random_image};
    use crate::training::loss::exp_weighted_loss;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // the gradient-check problem: 8 x 8 x 4 x 3 voxels, 2 coils
    const SHAPE: (usize, usize, usize, usize) = (3, 4, 8, 8);

    struct Problem {
        b: crate::encoding::KSpace,
        mask: Array3<u8>,
        coils: crate::encoding::CoilSet,
        target: ImageSeries,
    }

    fn problem(seed: u64, full: bool) -> Problem {
        let (nt, nz, ny, nx) = SHAPE;
        let coils = random_coils(2, (nz, ny, nx), seed);
        let truth = random_image(SHAPE, seed + 1).mapv(|c| c * 0.8);
        let mask = if full {
            full_mask(ny, nz, nt)
        } else {
            golden_angle_mask(ny, nz, nt, 24, seed + 2)
        };
        let mut b = forward_encode(&truth, &coils).unwrap();
        apply_mask(&mut b, &mask).unwrap();
        Problem { b, mask, coils, target: truth }
    }

    /// Weights pushed off every symmetric point so no gradient is
    /// accidentally zero: random filters, jittered knots, nonzero alphas.
    /// The signal activations are rebuilt as identity + jitter rather than
    /// the silent functions `init_weights` now produces, so the regularizer
    /// path carries full-strength signal through every parameter class.
    fn jittered_weights(params: NetworkParams, seed: u64) -> VnWeights {
        let mut w = init_weights(params, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 77);
        let identity = crate::flowvn::activation::knot_positions(params.n_knts, params.omega);
        w.alpha0 = 0.9;
        for l in &mut w.layers {
            l.alpha = 0.2 + 0.1 * rng.gen::<f64>();
            for line in &mut l.phi_r {
                for (v, &x) in line.iter_mut().zip(&identity) {
                    *v = 0.1 * x + 0.03 * (rng.gen::<f64>() - 0.5);
                }
            }
            for v in &mut l.phi_d {
                *v += 0.03 * (rng.gen::<f64>() - 0.5);
            }
            for v in l.phi_ud.iter_mut().chain(l.phi_ur.iter_mut()) {
                *v += 0.1 * (rng.gen::<f64>() - 0.5);
            }
        }
        w
    }

    fn small_params(kind: crate::flowvn::ActKind) -> NetworkParams {
        NetworkParams {
            k_layers: 3,
            n_f: 2,
            n_knts: 31,
            n_mod_knts: 7,
            act_kind: kind,
            ..NetworkParams::default()
        }
    }

    /// Loss recomputed through the forward pass only.
    fn loss_of(w: &VnWeights, p: &Problem, tau: f64) -> f64 {
        let input = VnInput { b: &p.b, mask: &p.mask, coils: &p.coils };
        let (_, kept) = infer(&input, w, true).unwrap();
        exp_weighted_loss(&kept.unwrap()[1..], &p.target, tau).unwrap()
    }

    /// One parameter class of `g`, everything else zeroed.
    fn only_class(g: &VnWeights, class: &str) -> VnWeights {
        let mut out = VnWeights::zeros_like(g);
        match class {
            "alpha0" => out.alpha0 = g.alpha0,
            "filters" => {
                for (o, s) in out.layers.iter_mut().zip(&g.layers) {
                    o.filters = s.filters.clone();
                }
            }
            "phi_r" => {
                for (o, s) in out.layers.iter_mut().zip(&g.layers) {
                    o.phi_r = s.phi_r.clone();
                }
            }
            "phi_d" => {
                for (o, s) in out.layers.iter_mut().zip(&g.layers) {
                    o.phi_d = s.phi_d.clone();
                }
            }
            "phi_ud" => {
                for (o, s) in out.layers.iter_mut().zip(&g.layers) {
                    o.phi_ud = s.phi_ud.clone();
                }
            }
            "phi_ur" => {
                for (o, s) in out.layers.iter_mut().zip(&g.layers) {
                    o.phi_ur = s.phi_ur.clone();
                }
            }
            "alpha" => {
                for (o, s) in out.layers.iter_mut().zip(&g.layers) {
                    o.alpha = s.alpha;
                }
            }
            _ => panic!("unknown class {class}"),
        }
        out
    }

    fn axpy(w: &VnWeights, dir: &[f64], eps: f64) -> VnWeights {
        let mut flat = w.to_flat();
        for (t, d) in flat.iter_mut().zip(dir) {
            *t += eps * d;
        }
        VnWeights::from_flat(w.params.clone(), &flat).unwrap()
    }

    /// Central finite differences along the normalized analytic gradient of
    /// each parameter class separately.
    fn check_all_classes(params: NetworkParams, classes: &[&str], seed: u64) {
        let p = problem(seed, false);
        let w = jittered_weights(params, seed);
        let tau = 0.4;
        let input = VnInput { b: &p.b, mask: &p.mask, coils: &p.coils };
        let (loss, g) = backward(&input, &w, &p.target, tau).unwrap();
        let direct = loss_of(&w, &p, tau);
        assert!(
            (loss - direct).abs() <= 1e-9 * direct.max(1.0),
            "loss mismatch: backward {loss} vs forward {direct}"
        );

        // The loss is piecewise linear in each residual lane, so a central
        // difference is exact only while no lane crosses its kink inside
        // +-eps. Errors here shrink linearly with eps (kink crossings), not
        // quadratically (smooth truncation); the seeds are picked so that no
        // class sits inside the crossing band at this step size.
        let eps = 1e-4;
        for class in classes {
            let gc = only_class(&g, class).to_flat();
            let norm = gc.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm > 0.0, "class {class} has zero gradient, test is vacuous");
            let dir: Vec<f64> = gc.iter().map(|v| v / norm).collect();
            let lp = loss_of(&axpy(&w, &dir, eps), &p, tau);
            let lm = loss_of(&axpy(&w, &dir, -eps), &p, tau);
            let fd = (lp - lm) / (2.0 * eps);
            // <g, dir> = ||g_class||
            let rel = (fd - norm).abs() / norm.abs().max(1e-12);
            assert!(
                rel < 1e-4,
                "class {class}: finite differences {fd} vs analytic {norm} (rel {rel:.2e})"
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences_all_classes() {
        check_all_classes(
            small_params(crate::flowvn::ActKind::Linear),
            &["alpha0", "filters", "phi_r", "phi_d", "phi_ud", "phi_ur", "alpha"],
            31,
        );
    }

    #[test]
    fn gradients_match_finite_differences_rbf() {
        check_all_classes(
            small_params(crate::flowvn::ActKind::Rbf),
            &["alpha0", "filters", "phi_r", "phi_d"],
            13,
        );
    }

    #[test]
    fn gradients_match_finite_differences_variant_flags_off() {
        let params = NetworkParams {
            momentum_on: false,
            modulation_on: false,
            data_activation_on: false,
            ..small_params(crate::flowvn::ActKind::Linear)
        };
        check_all_classes(params, &["alpha0", "filters", "phi_r"], 20);
    }

    #[test]
    fn zero_residual_fixed_point_has_zero_gradients() {
        // Identity network (alpha0 = 1, zero filters, identity knots) holds
        // fully sampled data fixed only up to FFT roundoff, and sign() turns
        // ulp-sized residuals into full +-1 cotangents. The fixed point that
        // is exact in floating point too is the all-zero volume, where every
        // intermediate is bitwise 0, every sign lane is sign(0) = 0, and all
        // gradients must come out exactly zero.
        let (nt, nz, ny, nx) = SHAPE;
        let coils = random_coils(2, (nz, ny, nx), 21);
        let truth = ImageSeries::zeros(SHAPE);
        let mask = full_mask(ny, nz, nt);
        let mut b = forward_encode(&truth, &coils).unwrap();
        apply_mask(&mut b, &mask).unwrap();
        let params = small_params(crate::flowvn::ActKind::Linear);
        let mut w = init_weights(params, 3).unwrap();
        for l in &mut w.layers {
            for f in &mut l.filters {
                f.fill(0.0);
            }
        }
        let input = VnInput { b: &b, mask: &mask, coils: &coils };
        let (loss, g) = backward(&input, &w, &truth, 0.3).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frozen_classes_get_exactly_zero_gradients() {
        let params = NetworkParams {
            momentum_on: false,
            modulation_on: false,
            data_activation_on: false,
            ..small_params(crate::flowvn::ActKind::Linear)
        };
        let p = problem(9, false);
        let w = jittered_weights(params, 9);
        let input = VnInput { b: &p.b, mask: &p.mask, coils: &p.coils };
        let (_, g) = backward(&input, &w, &p.target, 0.0).unwrap();
        for l in &g.layers {
            assert!(l.phi_d.iter().all(|&v| v == 0.0));
            assert!(l.phi_ud.iter().all(|&v| v == 0.0));
            assert!(l.phi_ur.iter().all(|&v| v == 0.0));
            assert_eq!(l.alpha, 0.0);
        }
        // live classes must not be zero, or the test proves nothing
        assert!(g.layers[0].filters[0].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn non_finite_data_is_reported() {
        let mut p = problem(4, false);
        p.b[[0, 0, 0, 0, 0]] = C64::new(f64::NAN, 0.0);
        let w = jittered_weights(small_params(crate::flowvn::ActKind::Linear), 4);
        let input = VnInput { b: &p.b, mask: &p.mask, coils: &p.coils };
        let err = backward(&input, &w, &p.target, 0.0).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn non_finite_gradient_scan_names_the_class() {
        let w = jittered_weights(small_params(crate::flowvn::ActKind::Linear), 12);
        let mut g = VnWeights::zeros_like(&w);
        g.layers[1].phi_d[3] = f64::NAN;
        let err = check_finite_grads(&g).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("layer 1") && msg.contains("phi_d"), "{msg}");
    }
}
