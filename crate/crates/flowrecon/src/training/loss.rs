//! Layer-wise exponentially weighted l1 training loss.
//!
//! loss = sum_{k=1..K} exp(-tau (K - k)) * || P_k - P* ||_1
//!
//! with the l1 norm taken over real and imaginary lanes. tau = 0 penalizes
//! every layer equally; large tau leaves only the final layer. Weights are
//! evaluated as exp of the (finite) log weight, so a huge tau merely
//! underflows the early-layer factors to an exact 0 instead of overflowing
//! anything.

use crate::encoding::ImageSeries;
use crate::{Error, Result};

/// sign with the l1 subgradient convention sign(0) = 0.
/// (`f64::signum` maps +0 to +1, which is not what a subgradient wants.)
#[inline]
pub(crate) fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-layer weights exp(-tau (K-k)) for k = 1..=K, index k-1.
pub(crate) fn layer_weights(k_layers: usize, tau: f64) -> Vec<f64> {
    (1..=k_layers).map(|k| (-tau * (k_layers - k) as f64).exp()).collect()
}

/// acc += w * sign(P - P*) lane-wise; returns this layer's weighted l1 term.
/// Shared by the loss and the reverse pass so both always agree.
pub(crate) fn add_weighted_sign(
    acc: &mut ImageSeries,
    p: &ImageSeries,
    target: &ImageSeries,
    w: f64,
) -> f64 {
    let mut l1 = 0.0;
    ndarray::Zip::from(acc).and(p).and(target).for_each(|a, &pv, &tv| {
        let dre = pv.re - tv.re;
        let dim = pv.im - tv.im;
        l1 += dre.abs() + dim.abs();
        a.re += w * sgn(dre);
        a.im += w * sgn(dim);
    });
    w * l1
}

/// Weighted loss over the layer iterates P_1..P_K (P_0 is not penalized).
pub fn exp_weighted_loss(
    intermediates: &[ImageSeries],
    target: &ImageSeries,
    tau: f64,
) -> Result<f64> {
    if tau < 0.0 {
        return Err(Error::InvalidConfig(format!("negative loss decay tau = {tau}")));
    }
    if intermediates.is_empty() {
        return Err(Error::InvalidConfig("loss over zero layers".into()));
    }
    for (k, p) in intermediates.iter().enumerate() {
        if p.dim() != target.dim() {
            return Err(Error::ShapeMismatch(format!(
                "layer {} iterate {:?} vs target {:?}",
                k + 1,
                p.dim(),
                target.dim()
            )));
        }
    }
    let weights = layer_weights(intermediates.len(), tau);
    let mut loss = 0.0;
    for (p, w) in intermediates.iter().zip(&weights) {
        if *w == 0.0 {
            continue;
        }
        let l1: f64 = ndarray::Zip::from(p)
            .and(target)
            .fold(0.0, |s, &pv, &tv| s + (pv.re - tv.re).abs() + (pv.im - tv.im).abs());
        loss += w * l1;
    }
    Ok(loss)
}
