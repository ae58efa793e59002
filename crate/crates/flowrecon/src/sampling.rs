//! Golden-angle Cartesian pseudo-radial sampling masks.
//!
//! Spokes through the k-space center are rotated by the golden angle
//! (111.246°) and rasterized onto the (ky, kz) grid with nearest-integer
//! snapping. Spoke n is assigned to cardiac phase n mod nt, so growing the
//! per-phase spoke budget only ever adds lines to a mask.

use crate::encoding::{measured_acceleration, Mask};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Golden-angle increment in degrees.
pub const GOLDEN_ANGLE_DEG: f64 = 111.246;

/// Fully sampled mask.
pub fn full_mask(ny: usize, nz: usize, nt: usize) -> Mask {
    Mask::from_elem((nt, nz, ny), 1)
}

/// Pseudo-radial mask with `total_spokes` golden-angle spokes distributed
/// round-robin over the cardiac phases (spoke n lands in phase n mod nt), so
/// the spoke budget need not divide evenly and masks grow pointwise with it.
/// The seed only rotates the starting angle; the center line is always
/// sampled in every phase.
pub fn golden_angle_mask(ny: usize, nz: usize, nt: usize, total_spokes: usize, seed: u64) -> Mask {
    spoke_mask(ny, nz, nt, total_spokes, seed, GOLDEN_ANGLE_DEG)
}

/// [`golden_angle_mask`] with a caller-chosen angular increment in degrees.
pub fn spoke_mask(
    ny: usize,
    nz: usize,
    nt: usize,
    total_spokes: usize,
    seed: u64,
    angle_deg: f64,
) -> Mask {
    let mut mask = Mask::zeros((nt, nz, ny));
    let theta0 = ChaCha8Rng::seed_from_u64(seed).gen::<f64>() * std::f64::consts::TAU;
    let dtheta = angle_deg.to_radians();
    let cy = (ny / 2) as f64;
    let cz = (nz / 2) as f64;
    // Radius reaching every corner of the grid; half-steps avoid holes along
    // diagonal spokes after snapping.
    let rmax = (cy.max(ny as f64 - 1.0 - cy).powi(2) + cz.max(nz as f64 - 1.0 - cz).powi(2)).sqrt();
    let steps = (2.0 * rmax).ceil() as i64;
    for n in 0..total_spokes {
        let t = n % nt;
        let theta = theta0 + n as f64 * dtheta;
        let (s, c) = theta.sin_cos();
        for k in -steps..=steps {
            let r = 0.5 * k as f64;
            let y = (cy + r * c).round() as i64;
            let z = (cz + r * s).round() as i64;
            if y >= 0 && (y as usize) < ny && z >= 0 && (z as usize) < nz {
                mask[[t, z as usize, y as usize]] = 1;
            }
        }
    }
    // Center of k-space is sampled in every phase regardless of spoke count.
    for t in 0..nt {
        mask[[t, nz / 2, ny / 2]] = 1;
    }
    mask
}

/// Binary-search the total spoke count for the mask whose measured
/// acceleration comes closest to `target_r`, with no tolerance gate. Small
/// grids quantize R coarsely, so the best match can sit well off target; the
/// caller decides whether that is acceptable.
pub fn closest_mask_for_acceleration(
    ny: usize,
    nz: usize,
    nt: usize,
    target_r: f64,
    seed: u64,
) -> Result<(Mask, f64)> {
    closest_mask_with_angle(ny, nz, nt, target_r, seed, GOLDEN_ANGLE_DEG)
}

/// [`closest_mask_for_acceleration`] with a caller-chosen angular increment.
pub fn closest_mask_with_angle(
    ny: usize,
    nz: usize,
    nt: usize,
    target_r: f64,
    seed: u64,
    angle_deg: f64,
) -> Result<(Mask, f64)> {
    if target_r < 1.0 {
        return Err(Error::InvalidConfig(format!("acceleration {target_r} < 1")));
    }
    if target_r == 1.0 {
        return Ok((full_mask(ny, nz, nt), 1.0));
    }
    // Measured R decreases monotonically in the spoke count (masks grow
    // pointwise), so bisection applies.
    let mut lo = 1usize; // R(lo) is the sparsest realizable mask
    let mut hi = nt * ny.max(nz); // enough spokes to approach full sampling
    while measured_acceleration(&spoke_mask(ny, nz, nt, hi, seed, angle_deg)) > target_r {
        hi *= 2;
        if hi > 64 * nt * ny.max(nz) {
            break;
        }
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        let r = measured_acceleration(&spoke_mask(ny, nz, nt, mid, seed, angle_deg));
        if r > target_r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Pick the closer of the two bracketing counts.
    Ok([lo, hi]
        .into_iter()
        .map(|s| {
            let m = spoke_mask(ny, nz, nt, s, seed, angle_deg);
            let r = measured_acceleration(&m);
            (m, r)
        })
        .min_by(|a, b| {
            let da = (a.1 - target_r).abs();
            let db = (b.1 - target_r).abs();
            da.partial_cmp(&db).unwrap()
        })
        .unwrap())
}

/// Like [`closest_mask_for_acceleration`], but errors unless the measured
/// acceleration lands within 5% of `target_r`.
pub fn mask_for_acceleration(
    ny: usize,
    nz: usize,
    nt: usize,
    target_r: f64,
    seed: u64,
) -> Result<(Mask, f64)> {
    mask_with_angle(ny, nz, nt, target_r, seed, GOLDEN_ANGLE_DEG)
}

/// [`mask_for_acceleration`] with a caller-chosen angular increment.
pub fn mask_with_angle(
    ny: usize,
    nz: usize,
    nt: usize,
    target_r: f64,
    seed: u64,
    angle_deg: f64,
) -> Result<(Mask, f64)> {
    let best = closest_mask_with_angle(ny, nz, nt, target_r, seed, angle_deg)?;
    if (best.1 - target_r).abs() / target_r > 0.05 {
        return Err(Error::InvalidConfig(format!(
            "cannot realize R={target_r:.2} within 5% on a {ny}x{nz}x{nt} grid (closest {:.2})",
            best.1
        )));
    }
    Ok(best)
}
