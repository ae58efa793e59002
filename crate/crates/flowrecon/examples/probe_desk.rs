//! Temporary probe: full desk-profile training run with held-out evaluation,
//! timing the whole thing against the half-hour budget.

use flowrecon::encoding::{apply_mask, forward_encode, normalize_kspace, zero_filled};
use flowrecon::flowvn::{infer, NetworkParams, VnInput};
use flowrecon::metrics::{magnitude, nrmse};
use flowrecon::phantom::{make_phantom, PhantomConfig};
use flowrecon::phantom::phantom_image;
use flowrecon::sampling::closest_mask_for_acceleration;
use flowrecon::training::{phantom_training_volumes, train, TrainConfig, ValidationCase};

fn main() {
    let t0 = std::time::Instant::now();
    let ph = |seed| {
        make_phantom(&PhantomConfig { seed, ..PhantomConfig::desk() }).unwrap()
    };
    let mut volumes = Vec::new();
    for seed in [1, 2] {
        volumes.extend(phantom_training_volumes(&ph(seed)).unwrap());
    }
    let held = ph(3);
    let val = ValidationCase::from_phantom(&held, 10.0, 11).unwrap();
    let cfg = TrainConfig::desk();
    println!("desk config: {cfg:?}");

    let out = train(&volumes, Some(&val), NetworkParams::default(), &cfg, None).unwrap();
    let t_train = t0.elapsed().as_secs_f64();
    println!("training done in {:.1} min", t_train / 60.0);
    for rec in &out.history {
        println!(
            "  iter {:5}  loss {:10.2}  image_l1 {:.5}  vel_rel_err {:.4}",
            rec.iter,
            rec.loss,
            rec.image_l1.unwrap(),
            rec.vel_rel_err.unwrap()
        );
    }

    for r_target in [6.0, 10.0, 16.0] {
        let (mask, r) = closest_mask_for_acceleration(32, 16, 8, r_target, 77).unwrap();
        let img = phantom_image(&held, 0).unwrap();
        let mut b = forward_encode(&img, &held.coils).unwrap();
        apply_mask(&mut b, &mask).unwrap();
        let scale = normalize_kspace(&mut b, &mask).unwrap();
        let truth = img.mapv(|v| v * scale);
        let t_mag = magnitude(&truth);
        let zf = zero_filled(&b, &held.coils).unwrap();
        let e_zf = nrmse(&magnitude(&zf).view().into_dyn(), &t_mag.view().into_dyn()).unwrap();
        let input = VnInput { b: &b, mask: &mask, coils: &held.coils };
        let (vn, _) = infer(&input, &out.weights, false).unwrap();
        let e_vn = nrmse(&magnitude(&vn).view().into_dyn(), &t_mag.view().into_dyn()).unwrap();
        println!(
            "R {r:5.2}: trained {e_vn:.4} vs zero-filled {e_zf:.4}  ({})",
            if e_vn < e_zf { "beats ZF" } else { "WORSE" }
        );
    }
    println!("total {:.1} min", t0.elapsed().as_secs_f64() / 60.0);
}
