//! Multi-coil spatial encoding and velocity encoding.
//!
//! The forward operator stacks per-coil centered FFTs of the coil-weighted
//! image: `E p = [F W_1 p; ...; F W_nc p]`. With unit sum-of-squares coil
//! maps and a full mask, `E` is an isometry, so `Eᴴ E = I`.

use crate::fft::fft3;
use crate::{C64, Error, Result};
use ndarray::{Array3, Array4, Array5, Axis, Zip};

/// Image series over cardiac phases, `[t][z][y][x]`.
pub type ImageSeries = Array4<C64>;
/// Multi-coil k-space, `[coil][t][z][y][x]`.
pub type KSpace = Array5<C64>;
/// Coil sensitivity maps, `[coil][z][y][x]`.
pub type CoilSet = Array4<C64>;
/// Binary sampling mask over phase-encode lines, `[t][kz][ky]`.
pub type Mask = Array3<u8>;

/// Number of sampled lines, the L1 norm of the mask.
pub fn mask_l1(mask: &Mask) -> u64 {
    mask.iter().map(|&m| m as u64).sum()
}

/// Acceleration factor measured from a mask: full grid size over sampled lines.
pub fn measured_acceleration(mask: &Mask) -> f64 {
    let total = mask.len() as f64;
    total / mask_l1(mask) as f64
}

/// Mean sampling rate of the mask (1/R), the modulation input.
pub fn mean_sampling_rate(mask: &Mask) -> f64 {
    mask_l1(mask) as f64 / mask.len() as f64
}

fn check_shapes(img: &ImageSeries, coils: &CoilSet) -> Result<()> {
    let (_, z, y, x) = img.dim();
    let (_, cz, cy, cx) = coils.dim();
    if (z, y, x) != (cz, cy, cx) {
        return Err(Error::ShapeMismatch(format!(
            "image {:?} vs coils {:?}",
            img.dim(),
            coils.dim()
        )));
    }
    Ok(())
}

/// `E p`: coil-weight, then centered FFT per coil and phase.
pub fn forward_encode(img: &ImageSeries, coils: &CoilSet) -> Result<KSpace> {
    check_shapes(img, coils)?;
    let (nt, nz, ny, nx) = img.dim();
    let nc = coils.dim().0;
    let mut out = KSpace::zeros((nc, nt, nz, ny, nx));
    for c in 0..nc {
        let map = coils.index_axis(Axis(0), c);
        let mut k = out.index_axis_mut(Axis(0), c);
        for t in 0..nt {
            let mut slice = k.index_axis_mut(Axis(0), t);
            Zip::from(&mut slice)
                .and(&img.index_axis(Axis(0), t))
                .and(&map)
                .for_each(|o, &p, &w| *o = p * w);
        }
        fft3(&mut k, true);
    }
    Ok(out)
}

/// `Eᴴ b`: inverse FFT per coil, conjugate coil weight, sum over coils.
pub fn adjoint_encode(ksp: &KSpace, coils: &CoilSet) -> Result<ImageSeries> {
    let (nc, nt, nz, ny, nx) = ksp.dim();
    if coils.dim() != (nc, nz, ny, nx) {
        return Err(Error::ShapeMismatch(format!(
            "kspace {:?} vs coils {:?}",
            ksp.dim(),
            coils.dim()
        )));
    }
    let mut out = ImageSeries::zeros((nt, nz, ny, nx));
    let mut buf = Array4::zeros((nt, nz, ny, nx));
    for c in 0..nc {
        buf.assign(&ksp.index_axis(Axis(0), c));
        fft3(&mut buf.view_mut(), false);
        let map = coils.index_axis(Axis(0), c);
        for t in 0..nt {
            Zip::from(&mut out.index_axis_mut(Axis(0), t))
                .and(&buf.index_axis(Axis(0), t))
                .and(&map)
                .for_each(|o, &b, &w| *o += b * w.conj());
        }
    }
    Ok(out)
}

/// Zero out unsampled lines (the mask broadcasts over coils and readout x).
pub fn apply_mask(ksp: &mut KSpace, mask: &Mask) -> Result<()> {
    let (_, nt, nz, ny, _) = ksp.dim();
    if mask.dim() != (nt, nz, ny) {
        return Err(Error::ShapeMismatch(format!(
            "kspace {:?} vs mask {:?}",
            ksp.dim(),
            mask.dim()
        )));
    }
    for mut coil in ksp.axis_iter_mut(Axis(0)) {
        for ((t, z, y), &m) in mask.indexed_iter() {
            if m == 0 {
                coil.index_axis_mut(Axis(0), t)
                    .index_axis_mut(Axis(0), z)
                    .index_axis_mut(Axis(0), y)
                    .fill(C64::new(0.0, 0.0));
            }
        }
    }
    Ok(())
}

/// `Eᴴ M E p` in one pass, the normal operator of the masked system.
pub fn normal_op(img: &ImageSeries, coils: &CoilSet, mask: &Mask) -> Result<ImageSeries> {
    let mut k = forward_encode(img, coils)?;
    apply_mask(&mut k, mask)?;
    adjoint_encode(&k, coils)
}

/// `Eᴴ (M ⊙ b)` without mutating `b`.
pub fn adjoint_encode_masked(ksp: &KSpace, coils: &CoilSet, mask: &Mask) -> Result<ImageSeries> {
    let (nc, nt, nz, ny, nx) = ksp.dim();
    if coils.dim() != (nc, nz, ny, nx) {
        return Err(Error::ShapeMismatch(format!(
            "kspace {:?} vs coils {:?}",
            ksp.dim(),
            coils.dim()
        )));
    }
    if mask.dim() != (nt, nz, ny) {
        return Err(Error::ShapeMismatch(format!(
            "kspace {:?} vs mask {:?}",
            ksp.dim(),
            mask.dim()
        )));
    }
    let mut out = ImageSeries::zeros((nt, nz, ny, nx));
    let mut buf = Array4::zeros((nt, nz, ny, nx));
    for c in 0..nc {
        buf.assign(&ksp.index_axis(Axis(0), c));
        for ((t, z, y), &m) in mask.indexed_iter() {
            if m == 0 {
                buf.index_axis_mut(Axis(0), t)
                    .index_axis_mut(Axis(0), z)
                    .index_axis_mut(Axis(0), y)
                    .fill(C64::new(0.0, 0.0));
            }
        }
        fft3(&mut buf.view_mut(), false);
        let map = coils.index_axis(Axis(0), c);
        for t in 0..nt {
            Zip::from(&mut out.index_axis_mut(Axis(0), t))
                .and(&buf.index_axis(Axis(0), t))
                .and(&map)
                .for_each(|o, &b, &w| *o += b * w.conj());
        }
    }
    Ok(out)
}

/// Scale k-space so its Frobenius norm equals the sampled line count ‖M‖₁.
/// Returns the applied factor; reconstructions are divided by it afterwards.
pub fn normalize_kspace(ksp: &mut KSpace, mask: &Mask) -> Result<f64> {
    let l1 = mask_l1(mask);
    if l1 == 0 {
        return Err(Error::EmptyMask);
    }
    let norm: f64 = ksp.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroKspace);
    }
    let scale = l1 as f64 / norm;
    ksp.mapv_inplace(|v| v * scale);
    Ok(scale)
}

/// Zero-filled reconstruction: plain adjoint of the masked data.
pub fn zero_filled(ksp: &KSpace, coils: &CoilSet) -> Result<ImageSeries> {
    adjoint_encode(ksp, coils)
}

/// Four-point velocity-encoding matrix: reference plus one axis per segment.
pub const VELOCITY_ENCODING: [[f64; 3]; 4] = [
    [0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
];

/// Encode magnitude and velocity into the complex image for one segment:
/// `p_i = mag · exp(jπ (Φv)_i / venc)`.
pub fn velocity_encode_one(
    mag: &Array4<f64>,
    vel: &Array5<f64>,
    venc: f64,
    enc: usize,
) -> Result<ImageSeries> {
    let (nt, nz, ny, nx) = mag.dim();
    if vel.dim() != (3, nt, nz, ny, nx) {
        return Err(Error::ShapeMismatch(format!(
            "magnitude {:?} vs velocity {:?}",
            mag.dim(),
            vel.dim()
        )));
    }
    if enc >= 4 {
        return Err(Error::InvalidConfig(format!("encoding index {enc} out of range")));
    }
    let phi = VELOCITY_ENCODING[enc];
    let mut out = ImageSeries::zeros((nt, nz, ny, nx));
    Zip::indexed(&mut out).for_each(|(t, z, y, x), o| {
        let m = mag[[t, z, y, x]];
        let vdot = phi[0] * vel[[0, t, z, y, x]]
            + phi[1] * vel[[1, t, z, y, x]]
            + phi[2] * vel[[2, t, z, y, x]];
        let phase = std::f64::consts::PI * vdot / venc;
        *o = C64::from_polar(m, phase);
    });
    Ok(out)
}

/// All four velocity-encoded segments.
pub fn velocity_encode(mag: &Array4<f64>, vel: &Array5<f64>, venc: f64) -> Result<Vec<ImageSeries>> {
    (0..4).map(|e| velocity_encode_one(mag, vel, venc, e)).collect()
}

/// Decode velocities from four reconstructed segments:
/// `v_i = (venc/π) · arg(p_i · conj(p_0))`. Exact while |v| < venc.
pub fn velocity_decode(recons: &[ImageSeries], venc: f64) -> Result<Array5<f64>> {
    if recons.len() != 4 {
        return Err(Error::InvalidConfig(format!(
            "expected 4 velocity-encoded reconstructions, got {}",
            recons.len()
        )));
    }
    let dim = recons[0].dim();
    for r in recons.iter().skip(1) {
        if r.dim() != dim {
            return Err(Error::ShapeMismatch("velocity segments differ in shape".into()));
        }
    }
    let (nt, nz, ny, nx) = dim;
    let mut vel = Array5::zeros((3, nt, nz, ny, nx));
    for i in 0..3 {
        let seg = &recons[i + 1];
        Zip::indexed(vel.index_axis_mut(Axis(0), i)).for_each(|(t, z, y, x), v| {
            let ratio = seg[[t, z, y, x]] * recons[0][[t, z, y, x]].conj();
            *v = venc / std::f64::consts::PI * ratio.arg();
        });
    }
    Ok(vel)
}
