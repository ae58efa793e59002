//! Synthetic flow phantom: a straight tube along x with pulsatile parabolic
//! (Poiseuille) flow, embedded in static tissue, plus simulated ring coils.

use crate::encoding::{velocity_encode_one, CoilSet, ImageSeries, KSpace};
use crate::{C64, Error, Result};
use ndarray::{Array3, Array4, Array5, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub nt: usize,
    pub n_coils: usize,
    /// Tube radius as a fraction of min(ny, nz)/2.
    pub tube_radius_frac: f64,
    /// Peak centerline velocity in cm/s.
    pub v_peak: f64,
    /// Velocity-encoding limit in cm/s.
    pub venc: f64,
    /// Isotropic voxel edge in cm.
    pub voxel_size_cm: f64,
    /// k-space SNR in dB; None means noise-free.
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl PhantomConfig {
    /// Small grid for fast iteration and tests.
    pub fn desk() -> Self {
        PhantomConfig {
            nx: 32,
            ny: 32,
            nz: 16,
            nt: 8,
            n_coils: 3,
            tube_radius_frac: 0.6,
            v_peak: 100.0,
            venc: 150.0,
            voxel_size_cm: 0.25,
            snr_db: None,
            seed: 0,
        }
    }

    /// Acquisition-sized grid used for runtime benchmarks.
    pub fn paper_geometry() -> Self {
        PhantomConfig {
            nx: 113,
            ny: 113,
            nz: 25,
            nt: 25,
            n_coils: 5,
            ..Self::desk()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub config: PhantomConfig,
    /// Proton density, static over the cycle, `[t][z][y][x]`.
    pub magnitude: Array4<f64>,
    /// Velocity in cm/s, `[axis][t][z][y][x]`.
    pub velocity: Array5<f64>,
    /// Lumen segmentation, `[z][y][x]`.
    pub segmentation: Array3<u8>,
    pub coils: CoilSet,
}

/// Raised-cosine systolic pulse, renormalized so the sampled maximum is 1.
fn waveform(nt: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..nt)
        .map(|t| {
            let phase = std::f64::consts::TAU * t as f64 / nt as f64;
            (0.5 * (1.0 - phase.cos())).powi(2)
        })
        .collect();
    let max = raw.iter().cloned().fold(f64::MIN, f64::max);
    raw.into_iter().map(|w| w / max).collect()
}

/// Gaussian-lobe coils on a ring in the (y, z) plane, jittered by the seed,
/// then jointly normalized to unit sum-of-squares at every voxel. A single
/// coil degenerates to the uniform map.
fn make_coils(cfg: &PhantomConfig) -> CoilSet {
    let (nc, nz, ny, nx) = (cfg.n_coils, cfg.nz, cfg.ny, cfg.nx);
    let mut coils = CoilSet::zeros((nc, nz, ny, nx));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xC011));
    let ring = 0.55 * ny.max(nz) as f64;
    let sigma = 0.7 * ny.max(nz) as f64;
    for c in 0..nc {
        let ang = std::f64::consts::TAU * c as f64 / nc as f64 + 0.2 * (rng.gen::<f64>() - 0.5);
        let cy = ny as f64 / 2.0 + ring * ang.cos();
        let cz = nz as f64 / 2.0 + ring * ang.sin();
        // linear phase ramp per coil; coil 0 keeps zero phase
        let (gy, gz) = if c == 0 {
            (0.0, 0.0)
        } else {
            (0.3 * (rng.gen::<f64>() - 0.5), 0.3 * (rng.gen::<f64>() - 0.5))
        };
        for z in 0..nz {
            for y in 0..ny {
                let d2 = ((y as f64 - cy) / sigma).powi(2) + ((z as f64 - cz) / sigma).powi(2);
                let amp = (-0.5 * d2).exp();
                let phase = gy * y as f64 + gz * z as f64;
                let v = C64::from_polar(amp, phase);
                for x in 0..nx {
                    coils[[c, z, y, x]] = v;
                }
            }
        }
    }
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let sos: f64 = (0..nc).map(|c| coils[[c, z, y, x]].norm_sqr()).sum();
                let s = sos.sqrt();
                for c in 0..nc {
                    coils[[c, z, y, x]] /= s;
                }
            }
        }
    }
    coils
}

/// Build the phantom: tube along x centered in (y, z), parabolic profile
/// scaled by the cycle waveform, lumen magnitude 1.0 over background 0.3.
pub fn make_phantom(cfg: &PhantomConfig) -> Result<Phantom> {
    if cfg.nx == 0 || cfg.ny == 0 || cfg.nz == 0 || cfg.nt == 0 || cfg.n_coils == 0 {
        return Err(Error::InvalidConfig("zero-sized phantom".into()));
    }
    if cfg.v_peak.abs() >= cfg.venc {
        return Err(Error::InvalidConfig(format!(
            "v_peak {} must stay below venc {} to avoid aliasing",
            cfg.v_peak, cfg.venc
        )));
    }
    let (nt, nz, ny, nx) = (cfg.nt, cfg.nz, cfg.ny, cfg.nx);
    let radius = cfg.tube_radius_frac * (ny.min(nz) as f64) / 2.0;
    let cy = (ny as f64 - 1.0) / 2.0;
    let cz = (nz as f64 - 1.0) / 2.0;
    let w = waveform(nt);

    let mut seg = Array3::zeros((nz, ny, nx));
    let mut mag = Array4::from_elem((nt, nz, ny, nx), 0.3);
    let mut vel = Array5::zeros((3, nt, nz, ny, nx));
    for z in 0..nz {
        for y in 0..ny {
            let r2 = ((y as f64 - cy).powi(2) + (z as f64 - cz).powi(2)) / radius.powi(2);
            if r2 < 1.0 {
                let profile = 1.0 - r2;
                for x in 0..nx {
                    seg[[z, y, x]] = 1;
                    for t in 0..nt {
                        mag[[t, z, y, x]] = 1.0;
                        vel[[0, t, z, y, x]] = cfg.v_peak * w[t] * profile;
                    }
                }
            }
        }
    }
    Ok(Phantom {
        config: cfg.clone(),
        magnitude: mag,
        velocity: vel,
        segmentation: seg,
        coils: make_coils(cfg),
    })
}

/// Velocity-encoded complex image for one of the four segments.
pub fn phantom_image(ph: &Phantom, enc: usize) -> Result<ImageSeries> {
    velocity_encode_one(&ph.magnitude, &ph.velocity, ph.config.venc, enc)
}

/// Fully sampled k-space of one velocity segment, with optional complex
/// Gaussian noise at the configured SNR. Noise power is set relative to the
/// mean signal magnitude over all k-space samples.
pub fn simulate_kspace(ph: &Phantom, enc: usize) -> Result<KSpace> {
    let img = phantom_image(ph, enc)?;
    let mut ksp = crate::encoding::forward_encode(&img, &ph.coils)?;
    if let Some(snr) = ph.config.snr_db {
        let mean_mag = ksp.iter().map(|v| v.norm()).sum::<f64>() / ksp.len() as f64;
        let noise_power = mean_mag.powi(2) * 10f64.powf(-snr / 10.0);
        let sigma = (noise_power / 2.0).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(ph.config.seed ^ (enc as u64) << 32 | 0x5EED);
        Zip::from(&mut ksp).for_each(|v| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *v += C64::new(re * sigma, im * sigma);
        });
    }
    Ok(ksp)
}

/// Ground-truth lumen flow through a plane x = const, in ml/s:
/// sum of through-plane velocity times voxel area over the lumen cross-section.
pub fn lumen_area_cm2(seg: &Array3<u8>, x: usize, voxel_size_cm: f64) -> f64 {
    let count = seg
        .index_axis(Axis(2), x)
        .iter()
        .filter(|&&s| s == 1)
        .count();
    count as f64 * voxel_size_cm * voxel_size_cm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::adjoint_encode;

    #[test]
    fn waveform_peaks_at_one() {
        let w = waveform(8);
        let max = w.iter().cloned().fold(f64::MIN, f64::max);
        assert!((max - 1.0).abs() < 1e-15);
        assert!(w[0] < 1e-12); // diastole at phase 0
    }

    #[test]
    fn coils_are_unit_sos() {
        let cfg = PhantomConfig {
            nx: 8,
            ny: 8,
            nz: 4,
            nt: 2,
            ..PhantomConfig::desk()
        };
        let coils = make_coils(&cfg);
        for z in 0..4 {
            for y in 0..8 {
                for x in 0..8 {
                    let sos: f64 = (0..cfg.n_coils).map(|c| coils[[c, z, y, x]].norm_sqr()).sum();
                    assert!((sos - 1.0).abs() < 1e-12);
                }
            }
        }
        let one = make_coils(&PhantomConfig {
            n_coils: 1,
            nx: 4,
            ny: 4,
            nz: 2,
            ..PhantomConfig::desk()
        });
        for v in one.iter() {
            assert!((v - C64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn velocity_zero_outside_lumen_and_peak_inside() {
        let ph = make_phantom(&PhantomConfig::desk()).unwrap();
        let cfg = &ph.config;
        let mut vmax: f64 = 0.0;
        for t in 0..cfg.nt {
            for z in 0..cfg.nz {
                for y in 0..cfg.ny {
                    for x in 0..cfg.nx {
                        let v = ph.velocity[[0, t, z, y, x]];
                        if ph.segmentation[[z, y, x]] == 0 {
                            assert_eq!(v, 0.0);
                        }
                        vmax = vmax.max(v);
                    }
                }
            }
        }
        // centerline voxel at systole carries (nearly) the full peak velocity
        assert!(vmax > 0.9 * cfg.v_peak && vmax < cfg.v_peak + 1e-9);
    }

    #[test]
    fn noise_free_acquisition_is_exact() {
        let mut cfg = PhantomConfig::desk();
        cfg.nx = 8;
        cfg.ny = 8;
        cfg.nz = 4;
        cfg.nt = 2;
        let ph = make_phantom(&cfg).unwrap();
        let ksp = simulate_kspace(&ph, 1).unwrap();
        let back = adjoint_encode(&ksp, &ph.coils).unwrap();
        let img = phantom_image(&ph, 1).unwrap();
        for (a, b) in back.iter().zip(img.iter()) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn noise_matches_requested_snr() {
        let mut cfg = PhantomConfig::desk();
        cfg.snr_db = Some(30.0);
        let ph = make_phantom(&cfg).unwrap();
        let clean = {
            let mut c2 = cfg.clone();
            c2.snr_db = None;
            simulate_kspace(&make_phantom(&c2).unwrap(), 0).unwrap()
        };
        let noisy = simulate_kspace(&ph, 0).unwrap();
        let mean_mag = clean.iter().map(|v| v.norm()).sum::<f64>() / clean.len() as f64;
        let noise_power: f64 = noisy
            .iter()
            .zip(clean.iter())
            .map(|(n, c)| (n - c).norm_sqr())
            .sum::<f64>()
            / clean.len() as f64;
        let snr_est = 10.0 * (mean_mag.powi(2) / noise_power).log10();
        assert!((snr_est - 30.0).abs() < 0.5, "estimated SNR {snr_est}");
    }

    #[test]
    fn aliased_vpeak_rejected() {
        let cfg = PhantomConfig {
            v_peak: 200.0,
            venc: 150.0,
            ..PhantomConfig::desk()
        };
        assert!(make_phantom(&cfg).is_err());
    }
}
