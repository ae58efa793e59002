//! On-disk dataset container: a directory with a JSON manifest plus one raw
//! little-endian binary file per array.
//!
//! Complex arrays are stored as float32 (re, im) pairs in C order, matching
//! raw-scanner precision; compute stays in f64 and converts at this boundary.
//! Canonical axis order is [enc][coil][t][z][y][x] with absent axes omitted;
//! the velocity field carries its component axis as "comp". Saving writes a
//! temporary sibling directory and renames it into place, so readers never
//! observe a partially written container.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4, Array5};
use serde::{Deserialize, Serialize};

use crate::encoding::{CoilSet, ImageSeries, KSpace, Mask};
use crate::{Error, Result, C64};

pub const FORMAT: &str = "flowrecon-container/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Kspace,
    Mask,
    Coils,
    TruthMagnitude,
    TruthVelocity,
    Segmentation,
    Recon,
}

/// Array payload in container precision (f32 / u8, complex interleaved).
#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    /// Interleaved (re, im) float32 pairs; `data.len() == 2 * product(dims)`.
    C64F32(Vec<f32>),
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl ArrayData {
    fn dtype(&self) -> &'static str {
        match self {
            ArrayData::C64F32(_) => "c64f32",
            ArrayData::F32(_) => "f32",
            ArrayData::U8(_) => "u8",
        }
    }

    fn scalar_len(&self) -> usize {
        match self {
            ArrayData::C64F32(v) => v.len() / 2,
            ArrayData::F32(v) => v.len(),
            ArrayData::U8(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NamedArray {
    pub name: String,
    pub role: Role,
    pub axes: Vec<String>,
    pub dims: Vec<usize>,
    pub data: ArrayData,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    role: Role,
    dtype: String,
    axes: Vec<String>,
    dims: Vec<usize>,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    #[serde(default)]
    meta: serde_json::Value,
    arrays: Vec<ManifestEntry>,
}

/// In-memory image of one container directory.
#[derive(Debug, Default)]
pub struct Container {
    pub meta: serde_json::Value,
    arrays: Vec<NamedArray>,
}

impl Container {
    pub fn new(meta: serde_json::Value) -> Self {
        Container { meta, arrays: Vec::new() }
    }

    /// Add an array; name collisions and dim/payload mismatches are errors.
    pub fn push(
        &mut self,
        name: &str,
        role: Role,
        axes: &[&str],
        dims: &[usize],
        data: ArrayData,
    ) -> Result<()> {
        if self.arrays.iter().any(|a| a.name == name) {
            return Err(Error::InvalidConfig(format!("duplicate array name {name}")));
        }
        if axes.len() != dims.len() {
            return Err(Error::ShapeMismatch(format!(
                "{name}: {} axes vs {} dims",
                axes.len(),
                dims.len()
            )));
        }
        let numel: usize = dims.iter().product();
        if numel != data.scalar_len() {
            return Err(Error::ShapeMismatch(format!(
                "{name}: dims {:?} hold {numel} scalars, payload has {}",
                dims,
                data.scalar_len()
            )));
        }
        self.arrays.push(NamedArray {
            name: name.into(),
            role,
            axes: axes.iter().map(|s| s.to_string()).collect(),
            dims: dims.to_vec(),
            data,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    /// The unique array with this role; errors when absent or ambiguous.
    pub fn by_role(&self, role: Role) -> Result<&NamedArray> {
        let mut hits = self.arrays.iter().filter(|a| a.role == role);
        match (hits.next(), hits.next()) {
            (Some(a), None) => Ok(a),
            (None, _) => Err(Error::Format(format!("container has no {role:?} array"))),
            _ => Err(Error::Format(format!("container has several {role:?} arrays"))),
        }
    }

    pub fn arrays(&self) -> &[NamedArray] {
        &self.arrays
    }

    /// Remove an array by name if present (replacing a recon, for example).
    pub fn remove(&mut self, name: &str) {
        self.arrays.retain(|a| a.name != name);
    }

    /// Write the container. The directory appears atomically: everything goes
    /// to a temporary sibling first, which is renamed into place (displacing
    /// any previous version only after the new one is complete).
    pub fn save(&self, dir: &Path) -> Result<()> {
        let parent = dir.parent().unwrap_or_else(|| Path::new("."));
        fs::create_dir_all(parent)?;
        let tmp: PathBuf = parent.join(format!(
            ".{}.tmp-{}",
            dir.file_name().and_then(|n| n.to_str()).unwrap_or("container"),
            std::process::id()
        ));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;

        let mut entries = Vec::with_capacity(self.arrays.len());
        for a in &self.arrays {
            let file = format!("{}.bin", a.name);
            let mut bytes: Vec<u8> = Vec::new();
            match &a.data {
                ArrayData::C64F32(v) | ArrayData::F32(v) => {
                    bytes.reserve(4 * v.len());
                    for x in v {
                        bytes.extend_from_slice(&x.to_le_bytes());
                    }
                }
                ArrayData::U8(v) => bytes.extend_from_slice(v),
            }
            fs::File::create(tmp.join(&file))?.write_all(&bytes)?;
            entries.push(ManifestEntry {
                name: a.name.clone(),
                role: a.role,
                dtype: a.data.dtype().into(),
                axes: a.axes.clone(),
                dims: a.dims.clone(),
                file,
            });
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            meta: self.meta.clone(),
            arrays: entries,
        };
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Format(e.to_string()))?;
        fs::write(tmp.join("manifest.json"), json)?;

        // Displace any existing container only once the new one is complete.
        let backup = parent.join(format!(
            ".{}.old-{}",
            dir.file_name().and_then(|n| n.to_str()).unwrap_or("container"),
            std::process::id()
        ));
        if dir.exists() {
            fs::rename(dir, &backup)?;
        }
        match fs::rename(&tmp, dir) {
            Ok(()) => {
                if backup.exists() {
                    fs::remove_dir_all(&backup)?;
                }
                Ok(())
            }
            Err(e) => {
                // put the old version back so the path never dangles
                if backup.exists() {
                    let _ = fs::rename(&backup, dir);
                }
                Err(e.into())
            }
        }
    }

    pub fn load(dir: &Path) -> Result<Container> {
        let manifest_path = dir.join("manifest.json");
        let json = fs::read_to_string(&manifest_path)
            .map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?;
        let manifest: Manifest =
            serde_json::from_str(&json).map_err(|e| Error::Format(e.to_string()))?;
        if manifest.format != FORMAT {
            return Err(Error::Format(format!(
                "unsupported container format {:?} (expected {FORMAT})",
                manifest.format
            )));
        }
        let mut arrays = Vec::with_capacity(manifest.arrays.len());
        for e in manifest.arrays {
            let mut bytes = Vec::new();
            fs::File::open(dir.join(&e.file))
                .map_err(|err| Error::Format(format!("{}: {err}", e.file)))?
                .read_to_end(&mut bytes)?;
            let numel: usize = e.dims.iter().product();
            let data = match e.dtype.as_str() {
                "c64f32" | "f32" => {
                    let scalars = if e.dtype == "c64f32" { 2 * numel } else { numel };
                    if bytes.len() != 4 * scalars {
                        return Err(Error::Format(format!(
                            "{}: {} bytes, expected {}",
                            e.file,
                            bytes.len(),
                            4 * scalars
                        )));
                    }
                    let v: Vec<f32> = bytes
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect();
                    if e.dtype == "c64f32" {
                        ArrayData::C64F32(v)
                    } else {
                        ArrayData::F32(v)
                    }
                }
                "u8" => {
                    if bytes.len() != numel {
                        return Err(Error::Format(format!(
                            "{}: {} bytes, expected {numel}",
                            e.file,
                            bytes.len()
                        )));
                    }
                    ArrayData::U8(bytes)
                }
                other => return Err(Error::Format(format!("unknown dtype {other}"))),
            };
            if e.axes.len() != e.dims.len() {
                return Err(Error::Format(format!(
                    "{}: {} axes vs {} dims",
                    e.name,
                    e.axes.len(),
                    e.dims.len()
                )));
            }
            arrays.push(NamedArray {
                name: e.name,
                role: e.role,
                axes: e.axes,
                dims: e.dims,
                data,
            });
        }
        Ok(Container { meta: manifest.meta, arrays })
    }
}

// ---- conversions between compute types and container payloads ----

fn complex_to_f32(it: impl Iterator<Item = C64>) -> Vec<f32> {
    let mut v = Vec::new();
    for c in it {
        v.push(c.re as f32);
        v.push(c.im as f32);
    }
    v
}

fn f32_to_complex(v: &[f32]) -> Vec<C64> {
    v.chunks_exact(2).map(|p| C64::new(p[0] as f64, p[1] as f64)).collect()
}

/// [t][z][y][x] complex series → container payload.
pub fn image_series_data(img: &ImageSeries) -> (Vec<usize>, ArrayData) {
    let d = img.dim();
    (vec![d.0, d.1, d.2, d.3], ArrayData::C64F32(complex_to_f32(img.iter().cloned())))
}

pub fn image_series_from(a: &NamedArray) -> Result<ImageSeries> {
    let (ArrayData::C64F32(v), [t, z, y, x]) = (&a.data, a.dims.as_slice()) else {
        return Err(Error::Format(format!("{}: expected a 4-axis complex array", a.name)));
    };
    Array4::from_shape_vec((*t, *z, *y, *x), f32_to_complex(v))
        .map_err(|e| Error::Format(e.to_string()))
}

/// Velocity-encoding segments stacked on a leading `enc` axis:
/// [enc][coil][t][z][y][x].
pub fn kspace_segments_data(segs: &[KSpace]) -> Result<(Vec<usize>, ArrayData)> {
    let first = segs.first().ok_or_else(|| Error::InvalidConfig("no k-space segments".into()))?;
    let d = first.dim();
    if segs.iter().any(|s| s.dim() != d) {
        return Err(Error::ShapeMismatch("k-space segments differ in shape".into()));
    }
    let mut v = Vec::new();
    for s in segs {
        v.extend(complex_to_f32(s.iter().cloned()));
    }
    Ok((vec![segs.len(), d.0, d.1, d.2, d.3, d.4], ArrayData::C64F32(v)))
}

pub fn kspace_segments_from(a: &NamedArray) -> Result<Vec<KSpace>> {
    let (ArrayData::C64F32(v), [e, c, t, z, y, x]) = (&a.data, a.dims.as_slice()) else {
        return Err(Error::Format(format!("{}: expected a 6-axis complex array", a.name)));
    };
    let per = c * t * z * y * x;
    let all = f32_to_complex(v);
    (0..*e)
        .map(|i| {
            Array5::from_shape_vec((*c, *t, *z, *y, *x), all[i * per..(i + 1) * per].to_vec())
                .map_err(|err| Error::Format(err.to_string()))
        })
        .collect()
}

/// Reconstructed segments stacked on a leading `enc` axis: [enc][t][z][y][x].
pub fn recon_segments_data(segs: &[ImageSeries]) -> Result<(Vec<usize>, ArrayData)> {
    let first = segs.first().ok_or_else(|| Error::InvalidConfig("no recon segments".into()))?;
    let d = first.dim();
    if segs.iter().any(|s| s.dim() != d) {
        return Err(Error::ShapeMismatch("recon segments differ in shape".into()));
    }
    let mut v = Vec::new();
    for s in segs {
        v.extend(complex_to_f32(s.iter().cloned()));
    }
    Ok((vec![segs.len(), d.0, d.1, d.2, d.3], ArrayData::C64F32(v)))
}

pub fn recon_segments_from(a: &NamedArray) -> Result<Vec<ImageSeries>> {
    let (ArrayData::C64F32(v), [e, t, z, y, x]) = (&a.data, a.dims.as_slice()) else {
        return Err(Error::Format(format!("{}: expected a 5-axis complex array", a.name)));
    };
    let per = t * z * y * x;
    let all = f32_to_complex(v);
    (0..*e)
        .map(|i| {
            Array4::from_shape_vec((*t, *z, *y, *x), all[i * per..(i + 1) * per].to_vec())
                .map_err(|err| Error::Format(err.to_string()))
        })
        .collect()
}

pub fn coils_data(coils: &CoilSet) -> (Vec<usize>, ArrayData) {
    let d = coils.dim();
    (vec![d.0, d.1, d.2, d.3], ArrayData::C64F32(complex_to_f32(coils.iter().cloned())))
}

pub fn coils_from(a: &NamedArray) -> Result<CoilSet> {
    let (ArrayData::C64F32(v), [c, z, y, x]) = (&a.data, a.dims.as_slice()) else {
        return Err(Error::Format(format!("{}: expected a 4-axis complex array", a.name)));
    };
    Array4::from_shape_vec((*c, *z, *y, *x), f32_to_complex(v))
        .map_err(|e| Error::Format(e.to_string()))
}

pub fn mask_data(mask: &Mask) -> (Vec<usize>, ArrayData) {
    let d = mask.dim();
    (vec![d.0, d.1, d.2], ArrayData::U8(mask.iter().cloned().collect()))
}

pub fn mask_from(a: &NamedArray) -> Result<Mask> {
    let (ArrayData::U8(v), [t, z, y]) = (&a.data, a.dims.as_slice()) else {
        return Err(Error::Format(format!("{}: expected a 3-axis u8 array", a.name)));
    };
    Array3::from_shape_vec((*t, *z, *y), v.clone()).map_err(|e| Error::Format(e.to_string()))
}

pub fn magnitude_data(mag: &Array4<f64>) -> (Vec<usize>, ArrayData) {
    let d = mag.dim();
    (vec![d.0, d.1, d.2, d.3], ArrayData::F32(mag.iter().map(|&x| x as f32).collect()))
}

pub fn magnitude_from(a: &NamedArray) -> Result<Array4<f64>> {
    let (ArrayData::F32(v), [t, z, y, x]) = (&a.data, a.dims.as_slice()) else {
        return Err(Error::Format(format!("{}: expected a 4-axis f32 array", a.name)));
    };
    Array4::from_shape_vec((*t, *z, *y, *x), v.iter().map(|&x| x as f64).collect())
        .map_err(|e| Error::Format(e.to_string()))
}

/// [comp][t][z][y][x] velocity field.
pub fn velocity_data(vel: &Array5<f64>) -> (Vec<usize>, ArrayData) {
    let d = vel.dim();
    (vec![d.0, d.1, d.2, d.3, d.4], ArrayData::F32(vel.iter().map(|&x| x as f32).collect()))
}

pub fn velocity_from(a: &NamedArray) -> Result<Array5<f64>> {
    let (ArrayData::F32(v), [c, t, z, y, x]) = (&a.data, a.dims.as_slice()) else {
        return Err(Error::Format(format!("{}: expected a 5-axis f32 array", a.name)));
    };
    Array5::from_shape_vec((*c, *t, *z, *y, *x), v.iter().map(|&x| x as f64).collect())
        .map_err(|e| Error::Format(e.to_string()))
}

pub fn segmentation_data(seg: &Array3<u8>) -> (Vec<usize>, ArrayData) {
    let d = seg.dim();
    (vec![d.0, d.1, d.2], ArrayData::U8(seg.iter().cloned().collect()))
}

pub fn segmentation_from(a: &NamedArray) -> Result<Array3<u8>> {
    let (ArrayData::U8(v), [z, y, x]) = (&a.data, a.dims.as_slice()) else {
        return Err(Error::Format(format!("{}: expected a 3-axis u8 array", a.name)));
    };
    Array3::from_shape_vec((*z, *y, *x), v.clone()).map_err(|e| Error::Format(e.to_string()))
}
