//! Random training examples from fully sampled volumes.
//!
//! Each draw takes a contiguous crop of width w_x along the readout (legal
//! because k_x is fully sampled, so cropping commutes with the encoding) and
//! a circular crop of width w_t over the cardiac cycle, picks an acceleration
//! uniformly from the configured range, rasterizes a fresh golden-angle mask
//! for it, Fourier-encodes the crop, masks, and normalizes. The matching
//! target is the crop scaled by the same normalization factor.

use ndarray::{Array4, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::encoding::{
    apply_mask, forward_encode, normalize_kspace, CoilSet, ImageSeries, KSpace, Mask,
};
use crate::sampling::closest_mask_for_acceleration;
use crate::training::TrainConfig;
use crate::{Error, Result};

/// One simulated acquisition: normalized undersampled k-space, its mask, and
/// the ground-truth image the network should recover (already on the same
/// normalization scale as `b`).
pub struct TrainingExample {
    pub target: ImageSeries,
    pub b: KSpace,
    pub mask: Mask,
    /// Sensitivities restricted to the same x crop as `b`, so the example is
    /// a self-contained reconstruction problem.
    pub coils: CoilSet,
    /// Acceleration drawn from the config range. The realized mask is the
    /// closest rasterizable match; small crops quantize R coarsely.
    pub r_drawn: f64,
}

/// Contiguous x crop, circular t crop.
fn crop_volume(vol: &ImageSeries, t0: usize, w_t: usize, x0: usize, w_x: usize) -> ImageSeries {
    let (nt, nz, ny, _nx) = vol.dim();
    let mut out = Array4::zeros((w_t, nz, ny, w_x));
    for (i, mut plane) in out.axis_iter_mut(Axis(0)).enumerate() {
        let t = (t0 + i) % nt;
        plane.assign(&vol.index_axis(Axis(0), t).slice(ndarray::s![.., .., x0..x0 + w_x]));
    }
    out
}

pub fn sample_training_example(
    volume: &ImageSeries,
    coils: &CoilSet,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingExample> {
    cfg.validate()?;
    let (nt, nz, ny, nx) = volume.dim();
    if coils.dim().1 != nz || coils.dim().2 != ny || coils.dim().3 != nx {
        return Err(Error::ShapeMismatch(format!(
            "volume {:?} vs coils {:?}",
            volume.dim(),
            coils.dim()
        )));
    }
    if cfg.w_x > nx || cfg.w_t > nt {
        return Err(Error::InvalidConfig(format!(
            "crop {}x{} exceeds volume extent {}x{} (x, t)",
            cfg.w_x, cfg.w_t, nx, nt
        )));
    }

    // Draw order is part of the reproducibility contract: x origin, t origin,
    // acceleration, mask seed.
    let x0 = rng.gen_range(0..=nx - cfg.w_x);
    let t0 = rng.gen_range(0..nt);
    let (r_lo, r_hi) = cfg.r_range;
    let r_drawn = if r_hi > r_lo { rng.gen_range(r_lo..=r_hi) } else { r_lo };
    let mask_seed = rng.gen::<u64>();

    let target = crop_volume(volume, t0, cfg.w_t, x0, cfg.w_x);
    let coils_crop = coils.slice(ndarray::s![.., .., .., x0..x0 + cfg.w_x]).to_owned();
    let (mask, _r_real) = closest_mask_for_acceleration(ny, nz, cfg.w_t, r_drawn, mask_seed)?;

    let mut b = forward_encode(&target, &coils_crop)?;
    apply_mask(&mut b, &mask)?;
    let scale = normalize_kspace(&mut b, &mask)?;
    let target = target.mapv(|v| v * scale);

    Ok(TrainingExample { target, b, mask, coils: coils_crop, r_drawn })
}
