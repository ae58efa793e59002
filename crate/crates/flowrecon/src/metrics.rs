//! Reconstruction quality and flow metrics.
//!
//! Image metrics compare magnitude arrays; velocity metrics are restricted to
//! the lumen. Flow curves integrate through-plane velocity over a vessel
//! cross-section.

use crate::{Error, Result};
use ndarray::{Array3, Array4, Array5, ArrayViewD, Axis};

fn same_shape(a: &ArrayViewD<'_, f64>, b: &ArrayViewD<'_, f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Normalized RMSE: `sqrt( sum (a - ref)^2 / (N * max_j ref_j^2) )`.
pub fn nrmse(a: &ArrayViewD<'_, f64>, reference: &ArrayViewD<'_, f64>) -> Result<f64> {
    same_shape(a, reference)?;
    let n = a.len() as f64;
    let peak = reference.iter().fold(0.0f64, |m, &v| m.max(v * v));
    if peak == 0.0 {
        return Err(Error::InvalidConfig("all-zero reference".into()));
    }
    let sse: f64 = a
        .iter()
        .zip(reference.iter())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    Ok((sse / (n * peak)).sqrt())
}

/// Relative L2 error of in-lumen velocity magnitude: `||v - v*|| / ||v*||`.
pub fn velocity_rel_err(
    vel: &Array5<f64>,
    vel_ref: &Array5<f64>,
    lumen: &Array3<u8>,
) -> Result<f64> {
    if vel.dim() != vel_ref.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            vel.dim(),
            vel_ref.dim()
        )));
    }
    let (_, nt, nz, ny, nx) = vel.dim();
    if lumen.dim() != (nz, ny, nx) {
        return Err(Error::ShapeMismatch("lumen vs velocity".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for t in 0..nt {
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if lumen[[z, y, x]] == 0 {
                        continue;
                    }
                    let m = |v: &Array5<f64>| -> f64 {
                        (0..3).map(|i| v[[i, t, z, y, x]].powi(2)).sum::<f64>().sqrt()
                    };
                    let d = m(vel) - m(vel_ref);
                    num += d * d;
                    den += m(vel_ref).powi(2);
                }
            }
        }
    }
    if den == 0.0 {
        return Err(Error::InvalidConfig("zero reference velocity in lumen".into()));
    }
    Ok((num / den).sqrt())
}

/// Mean angular deviation in degrees between velocity vectors, over lumen
/// voxels where both speeds exceed `min_speed` (cm/s).
pub fn velocity_angular_err_deg(
    vel: &Array5<f64>,
    vel_ref: &Array5<f64>,
    lumen: &Array3<u8>,
    min_speed: f64,
) -> Result<f64> {
    if vel.dim() != vel_ref.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            vel.dim(),
            vel_ref.dim()
        )));
    }
    let (_, nt, nz, ny, nx) = vel.dim();
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 0..nt {
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if lumen[[z, y, x]] == 0 {
                        continue;
                    }
                    let u: Vec<f64> = (0..3).map(|i| vel[[i, t, z, y, x]]).collect();
                    let v: Vec<f64> = (0..3).map(|i| vel_ref[[i, t, z, y, x]]).collect();
                    let nu = (u.iter().map(|a| a * a).sum::<f64>()).sqrt();
                    let nv = (v.iter().map(|a| a * a).sum::<f64>()).sqrt();
                    if nu <= min_speed || nv <= min_speed {
                        continue;
                    }
                    let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                    let c = (dot / (nu * nv)).clamp(-1.0, 1.0);
                    sum += c.acos().to_degrees();
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::InvalidConfig(
            "no lumen voxels above the speed threshold".into(),
        ));
    }
    Ok(sum / count as f64)
}

// ---------------------------------------------------------------------------
// SSIM
// ---------------------------------------------------------------------------

fn gaussian_window(sigma: f64) -> Vec<f64> {
    // 11-tap window, the usual choice for sigma = 1.5
    let half = 5i64;
    let mut w: Vec<f64> = (-half..=half)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

fn filter_axis3(vol: &Array3<f64>, w: &[f64], axis: usize) -> Array3<f64> {
    // "valid" separable filtering: output shrinks by (taps-1) along axis
    let taps = w.len();
    let mut dims = [vol.dim().0, vol.dim().1, vol.dim().2];
    dims[axis] -= taps - 1;
    let mut out = Array3::zeros((dims[0], dims[1], dims[2]));
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let mut acc = 0.0;
                for (d, &ww) in w.iter().enumerate() {
                    let idx = match axis {
                        0 => [i + d, j, k],
                        1 => [i, j + d, k],
                        _ => [i, j, k + d],
                    };
                    acc += ww * vol[idx];
                }
                out[[i, j, k]] = acc;
            }
        }
    }
    out
}

fn gauss_filter3(vol: &Array3<f64>, w: &[f64]) -> Array3<f64> {
    let mut out = filter_axis3(vol, w, 0);
    out = filter_axis3(&out, w, 1);
    filter_axis3(&out, w, 2)
}

/// Mean SSIM over valid Gaussian windows (sigma 1.5, 11 taps) of two volumes.
/// The dynamic range comes from the reference. Axes shorter than the window
/// are not filtered along.
pub fn ssim3(a: &Array3<f64>, reference: &Array3<f64>) -> Result<f64> {
    if a.dim() != reference.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.dim(),
            reference.dim()
        )));
    }
    let mut w = gaussian_window(1.5);
    let (d0, d1, d2) = a.dim();
    if d0.min(d1).min(d2) < w.len() {
        // fall back to the largest odd window that fits every axis
        let m = d0.min(d1).min(d2);
        let taps = if m % 2 == 0 { m - 1 } else { m };
        if taps < 3 {
            return Err(Error::InvalidConfig("volume too small for SSIM".into()));
        }
        let half = (taps / 2) as i64;
        let mut ww: Vec<f64> = (-half..=half)
            .map(|i| (-0.5 * (i as f64 / 1.5).powi(2)).exp())
            .collect();
        let s: f64 = ww.iter().sum();
        ww.iter_mut().for_each(|v| *v /= s);
        w = ww;
    }
    let lo = reference.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = reference.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let l = hi - lo;
    if l <= 0.0 {
        return Err(Error::InvalidConfig("flat reference image".into()));
    }
    let c1 = (0.01 * l).powi(2);
    let c2 = (0.03 * l).powi(2);

    let mu_a = gauss_filter3(a, &w);
    let mu_b = gauss_filter3(reference, &w);
    let aa = gauss_filter3(&(a * a), &w);
    let bb = gauss_filter3(&(reference * reference), &w);
    let ab = gauss_filter3(&(a * reference), &w);

    let mut sum = 0.0;
    let n = mu_a.len();
    for idx in 0..n {
        let ma = mu_a.as_slice().unwrap()[idx];
        let mb = mu_b.as_slice().unwrap()[idx];
        let va = aa.as_slice().unwrap()[idx] - ma * ma;
        let vb = bb.as_slice().unwrap()[idx] - mb * mb;
        let cov = ab.as_slice().unwrap()[idx] - ma * mb;
        let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        sum += s;
    }
    Ok(sum / n as f64)
}

/// SSIM of a cardiac series: mean over phases of the per-volume SSIM.
pub fn ssim_series(a: &Array4<f64>, reference: &Array4<f64>) -> Result<f64> {
    if a.dim() != reference.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.dim(),
            reference.dim()
        )));
    }
    let nt = a.dim().0;
    let mut acc = 0.0;
    for t in 0..nt {
        acc += ssim3(
            &a.index_axis(Axis(0), t).to_owned(),
            &reference.index_axis(Axis(0), t).to_owned(),
        )?;
    }
    Ok(acc / nt as f64)
}

// ---------------------------------------------------------------------------
// Flow
// ---------------------------------------------------------------------------

/// Through-plane flow across the plane x = `x_index`, per cardiac phase, in
/// ml/s: sum of v_x (cm/s) over lumen voxels times voxel area (cm^2).
pub fn flow_curve(
    vel: &Array5<f64>,
    lumen: &Array3<u8>,
    x_index: usize,
    voxel_size_cm: f64,
) -> Result<Vec<f64>> {
    let (_, nt, nz, ny, nx) = vel.dim();
    if lumen.dim() != (nz, ny, nx) {
        return Err(Error::ShapeMismatch("lumen vs velocity".into()));
    }
    if x_index >= nx {
        return Err(Error::InvalidConfig(format!("plane x={x_index} out of range")));
    }
    let area = voxel_size_cm * voxel_size_cm;
    Ok((0..nt)
        .map(|t| {
            let mut q = 0.0;
            for z in 0..nz {
                for y in 0..ny {
                    if lumen[[z, y, x_index]] == 1 {
                        q += vel[[0, t, z, y, x_index]] * area;
                    }
                }
            }
            q
        })
        .collect())
}

/// Largest |flow| over the cycle.
pub fn peak_flow(curve: &[f64]) -> f64 {
    curve.iter().fold(0.0f64, |m, &q| m.max(q.abs()))
}

/// Largest in-lumen speed over the cycle, cm/s.
pub fn peak_velocity(vel: &Array5<f64>, lumen: &Array3<u8>) -> f64 {
    let (_, nt, nz, ny, nx) = vel.dim();
    let mut peak = 0.0f64;
    for t in 0..nt {
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if lumen[[z, y, x]] == 1 {
                        let s: f64 =
                            (0..3).map(|i| vel[[i, t, z, y, x]].powi(2)).sum::<f64>().sqrt();
                        peak = peak.max(s);
                    }
                }
            }
        }
    }
    peak
}

// ---------------------------------------------------------------------------
// Agreement statistics
// ---------------------------------------------------------------------------

/// Bland-Altman agreement: mean difference, SD of differences, and the
/// ±1.96 SD limits of agreement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlandAltman {
    pub mean_diff: f64,
    pub sd_diff: f64,
    pub loa_low: f64,
    pub loa_high: f64,
}

pub fn bland_altman(a: &[f64], b: &[f64]) -> Result<BlandAltman> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidConfig("paired samples required".into()));
    }
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    Ok(BlandAltman {
        mean_diff: mean,
        sd_diff: sd,
        loa_low: mean - 1.96 * sd,
        loa_high: mean + 1.96 * sd,
    })
}

/// Least-squares line y = slope x + intercept with the Pearson correlation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
    pub pearson_r: f64,
}

pub fn linear_regression(x: &[f64], y: &[f64]) -> Result<Regression> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidConfig("need at least two paired samples".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let sxy: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidConfig("degenerate x values".into()));
    }
    let slope = sxy / sxx;
    let r = if syy == 0.0 { 1.0 } else { sxy / (sxx * syy).sqrt() };
    Ok(Regression {
        slope,
        intercept: my - slope * mx,
        pearson_r: r,
    })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidConfig("need at least two paired samples".into()));
    }
    let rx = ranks(x);
    let ry = ranks(y);
    Ok(linear_regression(&rx, &ry)?.pearson_r)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = rank;
        }
        i = j + 1;
    }
    out
}

/// Magnitude of a complex series, as an owned real array.
pub fn magnitude(img: &crate::encoding::ImageSeries) -> Array4<f64> {
    img.mapv(|v| v.norm())
}
