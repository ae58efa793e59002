//! Shared helpers for unit tests: seeded random volumes, coils, matrices.

use crate::encoding::{CoilSet, ImageSeries, KSpace};
use crate::C64;
use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_image(shape: (usize, usize, usize, usize), seed: u64) -> ImageSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array4::from_shape_simple_fn(shape, || C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
}

pub fn random_kspace(shape: (usize, usize, usize, usize, usize), seed: u64) -> KSpace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    KSpace::from_shape_simple_fn(shape, || C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
}

/// Unit-SOS coil maps with deterministic pseudo-random structure.
pub fn random_coils(nc: usize, shape: (usize, usize, usize), seed: u64) -> CoilSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coils = Array4::from_shape_simple_fn((nc, shape.0, shape.1, shape.2), || {
        C64::new(rng.gen::<f64>() + 0.2, rng.gen::<f64>() - 0.5)
    });
    let (nz, ny, nx) = shape;
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

pub fn random_matrix(m: usize, n: usize, seed: u64) -> Array2<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((m, n), || {
        C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
    })
}
