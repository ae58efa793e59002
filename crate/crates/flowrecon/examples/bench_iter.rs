//! Times one full training iteration (forward trace + reverse pass) for a
//! few candidate crop sizes. Temporary scratch.

use flowrecon::encoding::{apply_mask, forward_encode, normalize_kspace, CoilSet, ImageSeries};
use flowrecon::flowvn::{NetworkParams, VnInput};
use flowrecon::sampling::mask_for_acceleration;
use flowrecon::training::backward;
use ndarray::Array4;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn random_image(shape: (usize, usize, usize, usize), seed: u64) -> ImageSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array4::from_shape_simple_fn(shape, || C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
}

fn random_coils(nc: usize, vol: (usize, usize, usize), seed: u64) -> CoilSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coils = Array4::from_shape_simple_fn((nc, vol.0, vol.1, vol.2), || {
        C64::new(rng.gen::<f64>() + 0.2, rng.gen::<f64>() - 0.5)
    });
    // normalize to unit sum-of-squares per voxel
    for z in 0..vol.0 {
        for y in 0..vol.1 {
            for x in 0..vol.2 {
                let s: f64 = (0..nc).map(|c| coils[[c, z, y, x]].norm_sqr()).sum::<f64>().sqrt();
                for c in 0..nc {
                    coils[[c, z, y, x]] /= s;
                }
            }
        }
    }
    coils
}

fn main() {
    // (label, nt, nz, ny, nx)
    let cases = [
        ("crop x=8 t=3", 3usize, 16usize, 32usize, 8usize),
        ("crop x=6 t=3", 3, 16, 32, 6),
    ];
    let params = NetworkParams::default();
    let w = flowrecon::flowvn::init_weights(params, 1).unwrap();

    for (label, nt, nz, ny, nx) in cases {
        let truth = random_image((nt, nz, ny, nx), 2).mapv(|c| c * 0.8);
        let coils = random_coils(3, (nz, ny, nx), 3);
        let (mask, _) = [10.0, 10.7, 8.7, 9.5, 11.5]
            .iter()
            .find_map(|&r| mask_for_acceleration(ny, nz, nt, r, 4).ok())
            .unwrap();
        let mut b = forward_encode(&truth, &coils).unwrap();
        apply_mask(&mut b, &mask).unwrap();
        let s = normalize_kspace(&mut b, &mask).unwrap();
        let target = truth.mapv(|c| c * s);
        let input = VnInput { b: &b, mask: &mask, coils: &coils };

        // warm up once, then time
        let _ = backward(&input, &w, &target, 1.0).unwrap();
        let reps = 5;
        let t0 = Instant::now();
        for _ in 0..reps {
            let _ = backward(&input, &w, &target, 1.0).unwrap();
        }
        let per = t0.elapsed().as_secs_f64() / reps as f64;

        // forward-only share (infer without keeping intermediates)
        let t1 = Instant::now();
        for _ in 0..reps {
            let _ = flowrecon::flowvn::infer(&input, &w, false).unwrap();
        }
        let fwd = t1.elapsed().as_secs_f64() / reps as f64;

        // bare encode round trip, per layer there are ~4 of these
        let t2 = Instant::now();
        for _ in 0..40 {
            let ksp = forward_encode(&target, &coils).unwrap();
            let _ = flowrecon::encoding::adjoint_encode(&ksp, &coils).unwrap();
        }
        let enc = t2.elapsed().as_secs_f64() / 40.0;

        println!(
            "{label}: {:7.1} ms/iter (fwd {:6.1} ms, encode pair {:5.2} ms x ~20/iter = {:5.1} ms) -> 2000 iters = {:4.1} min",
            per * 1e3,
            fwd * 1e3,
            enc * 1e3,
            enc * 20.0 * 1e3,
            per * 2000.0 / 60.0
        );
    }
}
