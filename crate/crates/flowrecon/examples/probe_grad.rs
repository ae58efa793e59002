// throwaway diagnostic: scalar finite differences per parameter, per path
use flowrecon::encoding::{apply_mask, forward_encode, CoilSet, ImageSeries};
use flowrecon::C64;
use ndarray::Array4;
use rand_distr::StandardNormal;
use flowrecon::flowvn::{infer, init_weights, ActKind, NetworkParams, VnInput, VnWeights};
use flowrecon::sampling::golden_angle_mask;
use flowrecon::training::{backward, exp_weighted_loss};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(shape: (usize, usize, usize, usize), seed: u64) -> ImageSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array4::from_shape_simple_fn(shape, || {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}

fn random_coils(nc: usize, shape: (usize, usize, usize), seed: u64) -> CoilSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nz, ny, nx) = shape;
    let mut c = Array4::from_shape_simple_fn((nc, nz, ny, nx), || {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let sos: f64 = (0..nc).map(|k| c[[k, z, y, x]].norm_sqr()).sum::<f64>().sqrt();
                for k in 0..nc {
                    c[[k, z, y, x]] /= sos;
                }
            }
        }
    }
    c
}

fn main() {
    let (nt, nz, ny, nx) = (3usize, 4usize, 8usize, 8usize);
    let coils = random_coils(2, (nz, ny, nx), 5);
    let truth = random_image((nt, nz, ny, nx), 6).mapv(|c| c * 0.8);
    let mask = golden_angle_mask(ny, nz, nt, 24, 7);
    let mut b = forward_encode(&truth, &coils).unwrap();
    apply_mask(&mut b, &mask).unwrap();

    let params = NetworkParams {
        k_layers: 1,
        n_f: 2,
        n_knts: 31,
        n_mod_knts: 7,
        act_kind: ActKind::Linear,
        ..NetworkParams::default()
    };
    let mut w = init_weights(params, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(82);
    w.alpha0 = 0.9;
    for l in &mut w.layers {
        l.alpha = 0.25 + 0.1 * rng.gen::<f64>();
        for line in &mut l.phi_r {
            for v in line {
                *v += 0.03 * (rng.gen::<f64>() - 0.5);
            }
        }
        for v in &mut l.phi_d {
            *v += 0.03 * (rng.gen::<f64>() - 0.5);
        }
        for v in l.phi_ud.iter_mut().chain(l.phi_ur.iter_mut()) {
            *v += 0.1 * (rng.gen::<f64>() - 0.5);
        }
    }

    if std::env::args().any(|a| a == "--zero-filters") {
        for l in &mut w.layers {
            for f in &mut l.filters {
                f.fill(0.0);
            }
        }
    }
    let tau = 0.4;
    let loss_of = |w: &VnWeights| -> f64 {
        let input = VnInput { b: &b, mask: &mask, coils: &coils };
        let (_, kept) = infer(&input, w, true).unwrap();
        exp_weighted_loss(&kept.unwrap()[1..], &truth, tau).unwrap()
    };

    let input = VnInput { b: &b, mask: &mask, coils: &coils };
    let (_, g) = backward(&input, &w, &truth, tau).unwrap();

    let fd = |wp: &VnWeights, wm: &VnWeights, eps: f64| (loss_of(wp) - loss_of(wm)) / (2.0 * eps);
    let eps = 1e-5;

    // alpha0
    {
        let mut wp = w.clone();
        wp.alpha0 += eps;
        let mut wm = w.clone();
        wm.alpha0 -= eps;
        println!("alpha0      fd {:14.6}  an {:14.6}", fd(&wp, &wm, eps), g.alpha0);
    }
    // alpha layer 0 and 1
    for k in 0..1 {
        let mut wp = w.clone();
        wp.layers[k].alpha += eps;
        let mut wm = w.clone();
        wm.layers[k].alpha -= eps;
        println!("alpha[{k}]    fd {:14.6}  an {:14.6}", fd(&wp, &wm, eps), g.layers[k].alpha);
    }
    // one filter coefficient, each bank, layer 0
    for bank in 0..4 {
        let mut wp = w.clone();
        wp.layers[0].filters[bank][[0, 62]] += eps;
        let mut wm = w.clone();
        wm.layers[0].filters[bank][[0, 62]] -= eps;
        println!(
            "filt b{bank} c62 fd {:14.6}  an {:14.6}",
            fd(&wp, &wm, eps),
            g.layers[0].filters[bank][[0, 62]]
        );
    }
    // off-center filter tap
    {
        let mut wp = w.clone();
        wp.layers[0].filters[0][[1, 17]] += eps;
        let mut wm = w.clone();
        wm.layers[0].filters[0][[1, 17]] -= eps;
        println!(
            "filt b0 c17 fd {:14.6}  an {:14.6}",
            fd(&wp, &wm, eps),
            g.layers[0].filters[0][[1, 17]]
        );
    }
    // phi_d knot 15 (center) and 18, layer 0
    for knot in [15usize, 18] {
        let mut wp = w.clone();
        wp.layers[0].phi_d[knot] += eps;
        let mut wm = w.clone();
        wm.layers[0].phi_d[knot] -= eps;
        println!(
            "phi_d[{knot}]   fd {:14.6}  an {:14.6}",
            fd(&wp, &wm, eps),
            g.layers[0].phi_d[knot]
        );
    }
    // phi_r line 0 knot 16, layer 0
    {
        let mut wp = w.clone();
        wp.layers[0].phi_r[0][16] += eps;
        let mut wm = w.clone();
        wm.layers[0].phi_r[0][16] -= eps;
        println!(
            "phi_r0[16]  fd {:14.6}  an {:14.6}",
            fd(&wp, &wm, eps),
            g.layers[0].phi_r[0][16]
        );
    }
    // modulation knots
    for knot in 0..3 {
        let mut wp = w.clone();
        wp.layers[0].phi_ud[knot] += eps;
        let mut wm = w.clone();
        wm.layers[0].phi_ud[knot] -= eps;
        println!(
            "phi_ud[{knot}]   fd {:14.6}  an {:14.6}",
            fd(&wp, &wm, eps),
            g.layers[0].phi_ud[knot]
        );
        let mut wp = w.clone();
        wp.layers[0].phi_ur[knot] += eps;
        let mut wm = w.clone();
        wm.layers[0].phi_ur[knot] -= eps;
        println!(
            "phi_ur[{knot}]   fd {:14.6}  an {:14.6}",
            fd(&wp, &wm, eps),
            g.layers[0].phi_ur[knot]
        );
    }
}
