//! Forward pass of the unrolled network.
//!
//! Layer k maps (P, S) to (P', S') via
//!
//! ```text
//! G  = phi_ud(mbar) * E^H( M . phi_d{ M.(E P) - B } )
//!    + phi_ur(mbar) * sum_{bank,filter} D^T phi_r{ D P }
//! S' = alpha * S + G
//! P' = P - S'
//! ```
//!
//! with P0 = alpha0 * E^H B and S0 = 0. Activations act on real and
//! imaginary channels independently. The modulation weights phi_ud/phi_ur
//! are scalars per reconstruction, looked up at the mask's mean sampling
//! rate, so the network can rebalance the two terms across accelerations.

use ndarray::Zip;

use super::activation::{self, ActKind};
use super::conv::{conv_padded, Padded, HALO};
use super::model::{LayerWeights, NetworkParams, VnWeights};
use crate::encoding::{
    adjoint_encode, adjoint_encode_masked, apply_mask, forward_encode, mean_sampling_rate,
    CoilSet, ImageSeries, KSpace, Mask,
};
use crate::{Error, Result, C64};

/// One reconstruction problem: masked, normalized k-space plus its mask and
/// coil sensitivities.
#[derive(Clone, Copy)]
pub struct VnInput<'a> {
    pub b: &'a KSpace,
    pub mask: &'a Mask,
    pub coils: &'a CoilSet,
}

impl<'a> VnInput<'a> {
    pub fn validate(&self) -> Result<()> {
        let (nc, nt, nz, ny, nx) = self.b.dim();
        let (mc, mz, my, _mx) = self.coils.dim();
        let (tt, tz, ty) = self.mask.dim();
        if nc != mc || nz != mz || ny != my || self.coils.dim().3 != nx {
            return Err(Error::ShapeMismatch(format!(
                "k-space {:?} vs coils {:?}",
                self.b.dim(),
                self.coils.dim()
            )));
        }
        if tt != nt || tz != nz || ty != ny {
            return Err(Error::ShapeMismatch(format!(
                "k-space {:?} vs mask {:?}",
                self.b.dim(),
                self.mask.dim()
            )));
        }
        Ok(())
    }
}

/// Elementwise activation over both channels.
fn act_map_kspace(kind: ActKind, phi: &[f64], omega: f64, src: &KSpace) -> KSpace {
    src.mapv(|c| {
        C64::new(
            activation::eval(kind, phi, omega, c.re).0,
            activation::eval(kind, phi, omega, c.im).0,
        )
    })
}

/// Modulation scalars (c_ud, c_ur) for a layer; both 1 when disabled.
pub(crate) fn modulation_scalars(lw: &LayerWeights, params: &NetworkParams, mbar: f64) -> (f64, f64) {
    if params.modulation_on {
        (
            activation::modulation_eval(&lw.phi_ud, mbar),
            activation::modulation_eval(&lw.phi_ur, mbar),
        )
    } else {
        (1.0, 1.0)
    }
}

/// Masked k-space residual M.(E P) - B and the data-term image
/// E^H(M . phi_d{residual}).
pub(crate) fn data_term(
    p: &ImageSeries,
    input: &VnInput,
    lw: &LayerWeights,
    params: &NetworkParams,
) -> Result<(ImageSeries, KSpace)> {
    let mut resid = forward_encode(p, input.coils)?;
    apply_mask(&mut resid, input.mask)?;
    // b is stored masked, so the unsampled lines stay exactly zero
    resid -= input.b;
    let out_d = if params.data_activation_on {
        let a = act_map_kspace(params.act_kind, &lw.phi_d, params.omega, &resid);
        adjoint_encode_masked(&a, input.coils, input.mask)?
    } else {
        adjoint_encode_masked(&resid, input.coils, input.mask)?
    };
    Ok((out_d, resid))
}

/// Regularization image sum_{bank,filter} D^T phi_r{D P}; optionally keeps
/// every pre-activation filter response for reverse mode.
///
/// The whole chain runs in padded layout: P is padded once, each filter
/// response is activated in place (re-zeroing the halo lanes the forward
/// conv spilled into), and the adjoint accumulates into a single padded sum.
pub(crate) fn reg_term(
    p: &ImageSeries,
    lw: &LayerWeights,
    params: &NetworkParams,
    keep_responses: bool,
) -> (ImageSeries, Vec<ImageSeries>) {
    let nc = params.n_c;
    let ppad = Padded::from_image(p);
    let mut upad = Padded::zeros_like_image(p);
    let mut rpad = Padded::zeros_like_image(p);
    let mut responses = Vec::new();
    for bank in 0..lw.filters.len() {
        for f in 0..params.n_f {
            let kernel = lw.filters[bank].row(f);
            let kernel = kernel.as_slice().expect("kernel rows are contiguous");
            upad.clear();
            conv_padded(&ppad, kernel, bank, nc, false, &mut upad);
            if keep_responses {
                responses.push(upad.to_image());
            }
            let knots = &lw.phi_r[bank * params.n_f + f];
            // The forward conv spills stencil values into the halo lanes it
            // fuses across; they must go back to zero before upad is read as
            // a source again.
            for row in upad.rows_mut() {
                let srow = row.len();
                for lane in 0..2 * HALO {
                    row[lane] = 0.0;
                    row[srow - 1 - lane] = 0.0;
                }
                for v in &mut row[2 * HALO..srow - 2 * HALO] {
                    *v = activation::eval(params.act_kind, knots, params.omega, *v).0;
                }
            }
            conv_padded(&upad, kernel, bank, nc, true, &mut rpad);
        }
    }
    (rpad.to_image(), responses)
}

/// Everything reverse mode needs from one layer's forward evaluation.
pub(crate) struct SavedLayer {
    /// masked k-space residual, pre-activation
    pub resid: KSpace,
    /// pre-activation filter responses, bank-major
    pub responses: Vec<ImageSeries>,
    pub out_d: ImageSeries,
    pub out_r: ImageSeries,
}

fn assemble_step(
    p: &ImageSeries,
    s: &ImageSeries,
    out_d: &ImageSeries,
    out_r: &ImageSeries,
    c_ud: f64,
    c_ur: f64,
    alpha_eff: f64,
) -> (ImageSeries, ImageSeries) {
    let mut s_next = ImageSeries::zeros(p.dim());
    Zip::from(&mut s_next).and(s).and(out_d).and(out_r).for_each(|sn, &sv, &d, &r| {
        *sn = sv * alpha_eff + d * c_ud + r * c_ur;
    });
    let p_next = p - &s_next;
    (p_next, s_next)
}

/// One unrolled layer. `layer_index` only labels errors.
pub fn layer_step(
    p: &ImageSeries,
    s: &ImageSeries,
    input: &VnInput,
    lw: &LayerWeights,
    params: &NetworkParams,
    mbar: f64,
    layer_index: usize,
) -> Result<(ImageSeries, ImageSeries)> {
    let (out_d, _) = data_term(p, input, lw, params)?;
    let (out_r, _) = reg_term(p, lw, params, false);
    let (c_ud, c_ur) = modulation_scalars(lw, params, mbar);
    let alpha_eff = if params.momentum_on { lw.alpha } else { 0.0 };
    let (p_next, s_next) = assemble_step(p, s, &out_d, &out_r, c_ud, c_ur, alpha_eff);
    if !p_next.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
        return Err(Error::NonFinite(format!("layer {layer_index} produced non-finite image")));
    }
    Ok((p_next, s_next))
}

/// Run the network. Returns the final image and, when `keep_intermediates`,
/// every iterate P0..PK.
pub fn infer(
    input: &VnInput,
    w: &VnWeights,
    keep_intermediates: bool,
) -> Result<(ImageSeries, Option<Vec<ImageSeries>>)> {
    input.validate()?;
    let mbar = mean_sampling_rate(input.mask);
    let mut p = adjoint_encode(input.b, input.coils)?;
    p.mapv_inplace(|c| c * w.alpha0);
    let mut s = ImageSeries::zeros(p.dim());
    let mut kept = keep_intermediates.then(|| vec![p.clone()]);
    for (k, lw) in w.layers.iter().enumerate() {
        let (pn, sn) = layer_step(&p, &s, input, lw, &w.params, mbar, k)?;
        p = pn;
        s = sn;
        if let Some(v) = kept.as_mut() {
            v.push(p.clone());
        }
    }
    Ok((p, kept))
}

/// Trace of the full forward pass for reverse mode: iterates p[0..=K],
/// momentum states s[0..=K] and the per-layer saved tensors.
pub(crate) struct ForwardTrace {
    pub p: Vec<ImageSeries>,
    pub s: Vec<ImageSeries>,
    pub layers: Vec<SavedLayer>,
    pub mbar: f64,
    /// the zero-filled adjoint E^H b (P0 before alpha0 scaling)
    pub zero_filled: ImageSeries,
}

pub(crate) fn forward_trace(input: &VnInput, w: &VnWeights) -> Result<ForwardTrace> {
    input.validate()?;
    let mbar = mean_sampling_rate(input.mask);
    let zero_filled = adjoint_encode(input.b, input.coils)?;
    let p0 = zero_filled.mapv(|c| c * w.alpha0);
    let mut p = vec![p0];
    let mut s = vec![ImageSeries::zeros(zero_filled.dim())];
    let mut layers = Vec::with_capacity(w.layers.len());
    for (k, lw) in w.layers.iter().enumerate() {
        let pk = &p[k];
        let (out_d, resid) = data_term(pk, input, lw, &w.params)?;
        let (out_r, responses) = reg_term(pk, lw, &w.params, true);
        let (c_ud, c_ur) = modulation_scalars(lw, &w.params, mbar);
        let alpha_eff = if w.params.momentum_on { lw.alpha } else { 0.0 };
        let (p_next, s_next) = assemble_step(pk, &s[k], &out_d, &out_r, c_ud, c_ur, alpha_eff);
        if !p_next.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
            return Err(Error::NonFinite(format!("layer {k} produced non-finite image")));
        }
        layers.push(SavedLayer { resid, responses, out_d, out_r });
        p.push(p_next);
        s.push(s_next);
    }
    Ok(ForwardTrace { p, s, layers, mbar, zero_filled })
}
