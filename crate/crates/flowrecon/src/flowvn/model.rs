//! Network hyperparameters, weight storage, initialization and the on-disk
//! weight format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read as IoRead, Write as IoWrite};
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::activation::{knot_positions, ActKind};
use super::conv::N_BANKS;
use crate::{Error, Result};

/// Architecture hyperparameters and variant flags.
///
/// The defaults give the full network; [`NetworkParams::hamvn`] disables
/// momentum, modulation and the data-term activation and switches the
/// remaining activations to radial basis functions, reproducing the older
/// architecture the ablation ladder bottoms out at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub k_layers: usize,
    /// filters per bank
    pub n_f: usize,
    /// kernel edge length
    pub n_c: usize,
    /// knots per signal activation
    pub n_knts: usize,
    /// knots per modulation function (abscissas span mean sampling rates 0..1/2)
    pub n_mod_knts: usize,
    /// knot spacing (and rbf bandwidth)
    pub omega: f64,
    pub momentum_on: bool,
    pub modulation_on: bool,
    pub data_activation_on: bool,
    pub act_kind: ActKind,
}

impl Default for NetworkParams {
    fn default() -> Self {
        NetworkParams {
            k_layers: 10,
            n_f: 8,
            n_c: 5,
            n_knts: 91,
            n_mod_knts: 15,
            omega: 0.17,
            momentum_on: true,
            modulation_on: true,
            data_activation_on: true,
            act_kind: ActKind::Linear,
        }
    }
}

impl NetworkParams {
    pub fn hamvn() -> Self {
        NetworkParams {
            momentum_on: false,
            modulation_on: false,
            data_activation_on: false,
            act_kind: ActKind::Rbf,
            ..Default::default()
        }
    }

    pub fn kernel_len(&self) -> usize {
        self.n_c * self.n_c * self.n_c
    }

    /// Number of trainable scalars, counting only parameter classes enabled
    /// by the variant flags.
    pub fn param_count(&self) -> usize {
        let mut per_layer = N_BANKS * self.n_f * self.kernel_len() // filters
            + N_BANKS * self.n_f * self.n_knts; // phi_r
        if self.data_activation_on {
            per_layer += self.n_knts;
        }
        if self.modulation_on {
            per_layer += 2 * self.n_mod_knts;
        }
        if self.momentum_on {
            per_layer += 1;
        }
        1 + self.k_layers * per_layer // + alpha0
    }

    /// Length of the flat parameter vector (all classes, flags ignored —
    /// storage stays layout-compatible across variants).
    pub fn flat_len(&self) -> usize {
        1 + self.k_layers
            * (N_BANKS * self.n_f * self.kernel_len()
                + N_BANKS * self.n_f * self.n_knts
                + self.n_knts
                + 2 * self.n_mod_knts
                + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_layers == 0 {
            return Err(Error::InvalidConfig("k_layers must be >= 1".into()));
        }
        if self.n_knts < 2 || self.n_mod_knts < 2 {
            return Err(Error::InvalidConfig("activations need at least 2 knots".into()));
        }
        if self.omega <= 0.0 {
            return Err(Error::InvalidConfig("omega must be positive".into()));
        }
        if self.n_c % 2 == 0 || self.n_c == 0 {
            return Err(Error::InvalidConfig("kernel edge must be odd".into()));
        }
        Ok(())
    }
}

/// Weights of one unrolled layer. All arrays are kept allocated regardless of
/// the variant flags (flags gate use, not storage), so flag flips and
/// serialized files stay layout-compatible.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    /// per bank: (n_f, n_c^3) rows of flat kernels
    pub filters: [Array2<f64>; N_BANKS],
    /// bank-major, filter-minor: 4*n_f knot vectors
    pub phi_r: Vec<Vec<f64>>,
    pub phi_d: Vec<f64>,
    /// modulation of the data term by mean sampling rate
    pub phi_ud: Vec<f64>,
    /// modulation of the regularization term
    pub phi_ur: Vec<f64>,
    /// momentum coefficient
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VnWeights {
    pub params: NetworkParams,
    /// scale of the zero-filled initialization P0 = alpha0 * E^H b
    pub alpha0: f64,
    pub layers: Vec<LayerWeights>,
}

impl LayerWeights {
    fn zeros(p: &NetworkParams) -> Self {
        LayerWeights {
            filters: std::array::from_fn(|_| Array2::zeros((p.n_f, p.kernel_len()))),
            phi_r: vec![vec![0.0; p.n_knts]; N_BANKS * p.n_f],
            phi_d: vec![0.0; p.n_knts],
            phi_ud: vec![0.0; p.n_mod_knts],
            phi_ur: vec![0.0; p.n_mod_knts],
            alpha: 0.0,
        }
    }
}

impl VnWeights {
    /// All-zero weights with the same shapes (gradient accumulator).
    pub fn zeros_like(other: &VnWeights) -> Self {
        let p = other.params;
        VnWeights {
            params: p,
            alpha0: 0.0,
            layers: (0..p.k_layers).map(|_| LayerWeights::zeros(&p)).collect(),
        }
    }

    /// Flatten every stored scalar in the serialization order:
    /// alpha0, then per layer filters (bank-major, row-major), phi_r
    /// (bank-major), phi_d, phi_ud, phi_ur, alpha.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.flat_len());
        v.push(self.alpha0);
        for lw in &self.layers {
            for bank in &lw.filters {
                v.extend(bank.iter());
            }
            for knots in &lw.phi_r {
                v.extend_from_slice(knots);
            }
            v.extend_from_slice(&lw.phi_d);
            v.extend_from_slice(&lw.phi_ud);
            v.extend_from_slice(&lw.phi_ur);
            v.push(lw.alpha);
        }
        v
    }

    pub fn flat_len(&self) -> usize {
        self.params.flat_len()
    }

    /// Inverse of [`VnWeights::to_flat`].
    pub fn from_flat(params: NetworkParams, flat: &[f64]) -> Result<Self> {
        let mut w = VnWeights {
            params,
            alpha0: 0.0,
            layers: (0..params.k_layers).map(|_| LayerWeights::zeros(&params)).collect(),
        };
        if flat.len() != w.flat_len() {
            return Err(Error::ShapeMismatch(format!(
                "flat parameter vector has {} entries, layout needs {}",
                flat.len(),
                w.flat_len()
            )));
        }
        w.alpha0 = flat[0];
        let mut pos = 1;
        let mut take = |n: usize| -> Vec<f64> {
            let v = flat[pos..pos + n].to_vec();
            pos += n;
            v
        };
        let klen = params.kernel_len();
        for lw in &mut w.layers {
            for bank in &mut lw.filters {
                *bank = Array2::from_shape_vec((params.n_f, klen), take(params.n_f * klen)).unwrap();
            }
            for knots in &mut lw.phi_r {
                *knots = take(params.n_knts);
            }
            lw.phi_d = take(params.n_knts);
            lw.phi_ud = take(params.n_mod_knts);
            lw.phi_ur = take(params.n_mod_knts);
            lw.alpha = take(1)[0];
        }
        Ok(w)
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

/// Identity-like initialization: zero-mean normal filters scaled to unit
/// kernel norm, identity-line signal activations, constant-one modulation,
/// zero momentum and unit initial scale. With zero filters this would be
/// plain unrolled gradient descent; the random filters perturb that anchor
/// only through the (initially linear) regularizer.
pub fn init_weights(params: NetworkParams, seed: u64) -> Result<VnWeights> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let identity = knot_positions(params.n_knts, params.omega);
    let klen = params.kernel_len();
    // The signal activations start at the zero function, so an untrained
    // network is exactly unrolled gradient descent on the data term: with
    // unit-norm coil maps that step is non-expansive at any depth, whereas
    // identity activations would add sum_f D^T D p per layer and amplify a
    // K=10 network by roughly three orders of magnitude. Filter kernels keep
    // a random unit-norm draw for symmetry breaking; their gradients switch
    // on as soon as the first update bends the activations away from zero.
    let silent = vec![0.0; params.n_knts];
    let layers = (0..params.k_layers)
        .map(|_| {
            let filters = std::array::from_fn(|_| {
                let mut bank = Array2::zeros((params.n_f, klen));
                for mut row in bank.rows_mut() {
                    let mut norm2 = 0.0;
                    for w in row.iter_mut() {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        *w = g;
                        norm2 += g * g;
                    }
                    let scale = 1.0 / norm2.sqrt().max(f64::MIN_POSITIVE);
                    row.mapv_inplace(|w| w * scale);
                }
                bank
            });
            LayerWeights {
                filters,
                phi_r: vec![silent.clone(); N_BANKS * params.n_f],
                phi_d: identity.clone(),
                phi_ud: vec![1.0; params.n_mod_knts],
                phi_ur: vec![1.0; params.n_mod_knts],
                alpha: 0.0,
            }
        })
        .collect();
    Ok(VnWeights { params, alpha0: 1.0, layers })
}

// ---------------------------------------------------------------------------
// on-disk format: magic, version, hyperparameters, flags, then the flat
// parameter vector, all little-endian
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 4] = b"FVNW";
const VERSION: u32 = 1;

fn flags_byte(p: &NetworkParams) -> u8 {
    (p.momentum_on as u8)
        | (p.modulation_on as u8) << 1
        | (p.data_activation_on as u8) << 2
        | ((p.act_kind == ActKind::Rbf) as u8) << 3
}

pub fn save_weights(w: &VnWeights, path: &Path) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    let p = &w.params;
    f.write_all(MAGIC)?;
    f.write_all(&VERSION.to_le_bytes())?;
    for v in [p.k_layers, p.n_f, p.n_c, p.n_knts, p.n_mod_knts] {
        f.write_all(&(v as u32).to_le_bytes())?;
    }
    f.write_all(&p.omega.to_le_bytes())?;
    f.write_all(&[flags_byte(p)])?;
    for v in w.to_flat() {
        f.write_all(&v.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<VnWeights> {
    let mut f = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("{}: not a weight file", path.display())));
    }
    let mut u32buf = [0u8; 4];
    f.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported weight file version {version}")));
    }
    let read_u32 = |f: &mut BufReader<File>| -> Result<u32> {
        let mut b = [0u8; 4];
        f.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    };
    let k_layers = read_u32(&mut f)? as usize;
    let n_f = read_u32(&mut f)? as usize;
    let n_c = read_u32(&mut f)? as usize;
    let n_knts = read_u32(&mut f)? as usize;
    let n_mod_knts = read_u32(&mut f)? as usize;
    let mut f64buf = [0u8; 8];
    f.read_exact(&mut f64buf)?;
    let omega = f64::from_le_bytes(f64buf);
    let mut flag = [0u8; 1];
    f.read_exact(&mut flag)?;
    let params = NetworkParams {
        k_layers,
        n_f,
        n_c,
        n_knts,
        n_mod_knts,
        omega,
        momentum_on: flag[0] & 1 != 0,
        modulation_on: flag[0] & 2 != 0,
        data_activation_on: flag[0] & 4 != 0,
        act_kind: if flag[0] & 8 != 0 { ActKind::Rbf } else { ActKind::Linear },
    };
    params.validate()?;
    let mut flat = vec![0.0f64; params.flat_len()];
    for v in &mut flat {
        f.read_exact(&mut f64buf)?;
        *v = f64::from_le_bytes(f64buf);
    }
    // reject trailing garbage
    if f.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Format("weight file has trailing bytes".into()));
    }
    VnWeights::from_flat(params, &flat)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_and_variant_gap() {
        let full = NetworkParams::default();
        let ham = NetworkParams::hamvn();
        assert_eq!(full.param_count(), 70_341);
        assert_eq!(ham.param_count(), 69_121);
        let ratio = full.param_count() as f64 / ham.param_count() as f64;
        assert!(ratio > 1.0 && ratio < 1.02, "count ratio {ratio}");
    }

    #[test]
    fn flat_roundtrip_is_exact() {
        let params = NetworkParams { k_layers: 3, n_f: 2, n_knts: 7, n_mod_knts: 4, ..Default::default() };
        let w = init_weights(params, 9).unwrap();
        let flat = w.to_flat();
        assert_eq!(flat.len(), w.flat_len());
        let back = VnWeights::from_flat(params, &flat).unwrap();
        assert_eq!(w, back);
    }

    #[test]
    fn file_roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("theta.fvnw");
        let params = NetworkParams { k_layers: 2, n_f: 3, n_knts: 11, ..NetworkParams::hamvn() };
        let w = init_weights(params, 4).unwrap();
        save_weights(&w, &path).unwrap();
        let back = load_weights(&path).unwrap();
        assert_eq!(back.params, params);
        let a = w.to_flat();
        let b = back.to_flat();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn load_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"NOPE0000000000000000").unwrap();
        assert!(load_weights(&path).is_err());
    }

    #[test]
    fn init_kernels_have_unit_norm() {
        let w = init_weights(NetworkParams::default(), 0).unwrap();
        for lw in &w.layers {
            for bank in &lw.filters {
                for row in bank.rows() {
                    let n: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    assert!((n - 1.0).abs() < 1e-12);
                }
            }
        }
        assert_eq!(w.alpha0, 1.0);
        // identity activations reproduce their abscissas
        let lw = &w.layers[0];
        let c = (w.params.n_knts - 1) / 2;
        assert_eq!(lw.phi_d[c], 0.0);
        assert!((lw.phi_d[c + 1] - w.params.omega).abs() < 1e-15);
    }

    #[test]
    fn seeds_change_filters_but_not_structure() {
        let a = init_weights(NetworkParams::default(), 1).unwrap();
        let b = init_weights(NetworkParams::default(), 2).unwrap();
        assert_ne!(a.layers[0].filters[0], b.layers[0].filters[0]);
        assert_eq!(a.layers[0].phi_d, b.layers[0].phi_d);
        let a2 = init_weights(NetworkParams::default(), 1).unwrap();
        assert_eq!(a, a2);
    }
}
