// throwaway: reg_term chained-padded pipeline vs fresh-buffer oracle
use flowrecon::encoding::ImageSeries;
use flowrecon::flowvn::conv::{conv_apply, real_dot};
use flowrecon::flowvn::{init_weights, layer_step, ActKind, NetworkParams, VnInput};
use flowrecon::C64;
use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() {
    let (nt, nz, ny, nx) = (3usize, 4usize, 8usize, 8usize);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p: ImageSeries = Array4::from_shape_simple_fn((nt, nz, ny, nx), || {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let params = NetworkParams {
        k_layers: 1,
        n_f: 2,
        n_knts: 31,
        n_mod_knts: 7,
        act_kind: ActKind::Linear,
        ..NetworkParams::default()
    };
    let w = init_weights(params, 5).unwrap();
    let lw = &w.layers[0];

    // oracle: image-level wrappers, fresh zero-halo buffers at every step
    let mut oracle = ImageSeries::zeros(p.dim());
    for bank in 0..4 {
        for f in 0..params.n_f {
            let kernel = lw.filters[bank].row(f);
            let kernel = kernel.as_slice().unwrap();
            let u = conv_apply(&p, kernel, bank, params.n_c, false);
            let knots = &lw.phi_r[bank * params.n_f + f];
            let v = u.mapv(|c| {
                C64::new(
                    flowrecon::flowvn::activation::eval(params.act_kind, knots, params.omega, c.re).0,
                    flowrecon::flowvn::activation::eval(params.act_kind, knots, params.omega, c.im).0,
                )
            });
            oracle += &conv_apply(&v, kernel, bank, params.n_c, true);
        }
    }

    // chained pipeline, via layer_step with the data term suppressed:
    // b = 0 and a mask of zeros make out_d = E^H(M phi_d(0)) = 0 for identity knots.
    let coils = Array4::from_elem((1, nz, ny, nx), C64::new(1.0, 0.0));
    let b = ndarray::Array5::zeros((1, nt, nz, ny, nx));
    let mask = ndarray::Array3::zeros((nt, nz, ny));
    let input = VnInput { b: &b, mask: &mask, coils: &coils };
    let s = ImageSeries::zeros(p.dim());
    let (p1, _) = layer_step(&p, &s, &input, lw, &params, 0.3, 0).unwrap();
    // P1 = P - c_ud*0 - c_ur*out_r  =>  out_r = (P - P1)/c_ur
    let cud_cur = {
        let m = 0.3;
        (
            flowrecon::flowvn::activation::modulation_eval(&lw.phi_ud, m),
            flowrecon::flowvn::activation::modulation_eval(&lw.phi_ur, m),
        )
    };
    let got = (&p - &p1).mapv(|c| c / cud_cur.1);

    let diff = (&got - &oracle).mapv(|c| c.norm());
    let rel = diff.iter().sum::<f64>() / oracle.iter().map(|c| c.norm()).sum::<f64>();
    println!("rel l1 diff = {rel:.3e}");
    // where does it differ? collapse over (t,z,y), keep x
    let (tt, zz, yy, xx) = diff.dim();
    for x in 0..xx {
        let mut s = 0.0;
        for t in 0..tt {
            for z in 0..zz {
                for y in 0..yy {
                    s += diff[[t, z, y, x]];
                }
            }
        }
        println!("x={x}: {s:.3e}");
    }
    let _ = real_dot(&got, &oracle);
}
