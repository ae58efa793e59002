// dev probe: single-core conv + layer throughput, used to size the training
// profile; not shipped
use flowrecon::encoding::{apply_mask, forward_encode, mean_sampling_rate};
use flowrecon::flowvn::conv::{conv_accum, conv_apply, conv_kernel_grad_accum};
use flowrecon::flowvn::{infer, init_weights, layer_step, NetworkParams, VnInput};
use flowrecon::phantom::{make_phantom, PhantomConfig};
use flowrecon::sampling::golden_angle_mask;
use ndarray::Array4;
use num_complex::Complex64;
use std::time::Instant;

fn main() {
    // crop-sized volume for training cost: (w_t, nz, ny, w_x)
    for (nt, nz, ny, nx, label) in [
        (4usize, 16usize, 32usize, 8usize, "crop 8x4"),
        (7, 16, 32, 16, "crop 16x7"),
        (25, 25, 113, 113, "paper"),
    ] {
        let vol: Array4<Complex64> =
            Array4::from_shape_fn((nt, nz, ny, nx), |(t, z, y, x)| {
                Complex64::new((t + z) as f64 * 0.01, (y * x) as f64 * 0.001)
            });
        let kernel: Vec<f64> = (0..125).map(|i| (i as f64 * 0.37).sin()).collect();
        let reps = if nx > 100 { 2 } else { 200 };
        let t0 = Instant::now();
        let mut sink = 0.0;
        for bank in 0..4 {
            for _ in 0..reps {
                let out = conv_apply(&vol, &kernel, bank, 5, false);
                sink += out[[0, 0, 0, 0]].re;
            }
        }
        let dt = t0.elapsed().as_secs_f64();
        let nconv = 4.0 * reps as f64;
        let tap_maddss = nconv * 125.0 * (nt * nz * ny * nx) as f64;
        println!(
            "{label}: conv fwd {:.3} ms/conv  ({:.2} G tap-madds/s)  [{sink:.3}]",
            dt / nconv * 1e3,
            tap_maddss / dt / 1e9
        );
        // adjoint accumulate + kernel grad
        let t0 = Instant::now();
        let mut acc = Array4::zeros(vol.dim());
        for _ in 0..reps.min(100) {
            conv_accum(&vol, &kernel, 1, 5, true, &mut acc);
        }
        let dt_adj = t0.elapsed().as_secs_f64() / reps.min(100) as f64;
        let t0 = Instant::now();
        let mut g = vec![0.0; 125];
        for _ in 0..reps.min(100) {
            conv_kernel_grad_accum(&vol, &acc, 1, 5, &mut g);
        }
        let dt_kg = t0.elapsed().as_secs_f64() / reps.min(100) as f64;
        println!("  adjoint {:.3} ms, kernel-grad {:.3} ms", dt_adj * 1e3, dt_kg * 1e3);
    }

    // full layer + infer cost at desk-crop training scale
    let cfg = PhantomConfig { nx: 8, ny: 32, nz: 16, nt: 4, ..PhantomConfig::desk() };
    let ph = make_phantom(&cfg).unwrap();
    let img = flowrecon::phantom::phantom_image(&ph, 1).unwrap();
    let mask = golden_angle_mask(32, 16, 4, 60, 7);
    let mut b = forward_encode(&img, &ph.coils).unwrap();
    apply_mask(&mut b, &mask).unwrap();
    let w = init_weights(NetworkParams::default(), 1).unwrap();
    let input = VnInput { b: &b, mask: &mask, coils: &ph.coils };
    let mbar = mean_sampling_rate(&mask);
    let p = flowrecon::encoding::adjoint_encode(&b, &ph.coils).unwrap();
    let s = Array4::zeros(p.dim());
    let t0 = Instant::now();
    let n = 50;
    for _ in 0..n {
        let _ = layer_step(&p, &s, &input, &w.layers[0], &w.params, mbar, 0).unwrap();
    }
    let per_layer = t0.elapsed().as_secs_f64() / n as f64;
    println!("desk-crop layer_step: {:.2} ms -> K=10 forward {:.1} ms", per_layer * 1e3, per_layer * 1e4);
    let t0 = Instant::now();
    for _ in 0..5 {
        let _ = infer(&input, &w, false).unwrap();
    }
    println!("desk-crop infer(K=10): {:.1} ms", t0.elapsed().as_secs_f64() / 5.0 * 1e3);

    // rbf comparison
    let wr = init_weights(NetworkParams { act_kind: flowrecon::flowvn::ActKind::Rbf, ..Default::default() }, 1).unwrap();
    let t0 = Instant::now();
    for _ in 0..5 {
        let _ = infer(&input, &wr, false).unwrap();
    }
    println!("desk-crop infer rbf:  {:.1} ms", t0.elapsed().as_secs_f64() / 5.0 * 1e3);
}
