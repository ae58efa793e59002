//! Temporary probe: held-out nRMSE vs training length for the toy setup.

use flowrecon::encoding::{apply_mask, forward_encode, normalize_kspace, zero_filled};
use flowrecon::flowvn::{infer, NetworkParams, VnInput};
use flowrecon::metrics::{magnitude, nrmse};
use flowrecon::phantom::{make_phantom, phantom_image, PhantomConfig};
use flowrecon::sampling::closest_mask_for_acceleration;
use flowrecon::training::{phantom_training_volumes, train, TrainConfig};

fn main() {
    let toy = |seed| {
        let cfg = PhantomConfig {
            nx: 16,
            ny: 16,
            nz: 8,
            nt: 4,
            n_coils: 2,
            seed,
            ..PhantomConfig::desk()
        };
        make_phantom(&cfg).unwrap()
    };
    let mut volumes = Vec::new();
    for seed in [1, 2] {
        volumes.extend(phantom_training_volumes(&toy(seed)).unwrap());
    }
    let params = NetworkParams { k_layers: 3, n_f: 2, n_c: 3, ..NetworkParams::default() };

    let held = toy(3);
    let img = phantom_image(&held, 0).unwrap();
    let (mask, r) = closest_mask_for_acceleration(16, 8, 4, 10.0, 99).unwrap();
    let mut b = forward_encode(&img, &held.coils).unwrap();
    apply_mask(&mut b, &mask).unwrap();
    let scale = normalize_kspace(&mut b, &mask).unwrap();
    let truth = img.mapv(|v| v * scale);
    let t_mag = magnitude(&truth);
    let zf = zero_filled(&b, &held.coils).unwrap();
    let e_zf = nrmse(&magnitude(&zf).view().into_dyn(), &t_mag.view().into_dyn()).unwrap();
    println!("eval R = {r:.2}, zero-filled nRMSE = {e_zf:.4}");

    for iters in [1000usize, 1500, 2000] {
        let cfg = TrainConfig { iters, batch: 1, w_x: 6, w_t: 2, seed: 7, lr: 3e-3, ..TrainConfig::default() };
        let t0 = std::time::Instant::now();
        let out = train(&volumes, None, params, &cfg, None).unwrap();
        let input = VnInput { b: &b, mask: &mask, coils: &held.coils };
        let (vn, _) = infer(&input, &out.weights, false).unwrap();
        let e = nrmse(&magnitude(&vn).view().into_dyn(), &t_mag.view().into_dyn()).unwrap();
        println!(
            "iters {iters:5}: nRMSE {e:.4} ({}) probe loss {:.4} -> {:.4}  [{:.1} s]",
            if e < e_zf { "beats ZF" } else { "WORSE" },
            out.history.first().unwrap().loss,
            out.history.last().unwrap().loss,
            t0.elapsed().as_secs_f64()
        );
    }
}
