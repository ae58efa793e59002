//! Centered orthonormal FFTs.
//!
//! Both directions are `fftshift ∘ transform ∘ ifftshift` with 1/sqrt(n)
//! scaling per axis, so the DC sample sits at index `n/2` and forward
//! followed by inverse is the identity.

use crate::C64;
use ndarray::{ArrayViewMut4, Axis};
use once_cell::sync::Lazy;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

static PLANS: Lazy<Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

fn plan(n: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    let mut cache = PLANS.lock().unwrap();
    cache
        .entry((n, forward))
        .or_insert_with(|| {
            let dir = if forward {
                FftDirection::Forward
            } else {
                FftDirection::Inverse
            };
            FftPlanner::new().plan_fft(n, dir)
        })
        .clone()
}

/// Transform every line along `axis`, centered and orthonormal.
pub fn transform_axis(vol: &mut ArrayViewMut4<'_, C64>, axis: usize, forward: bool) {
    let n = vol.shape()[axis];
    let fft = plan(n, forward);
    let half = n / 2;
    let scale = 1.0 / (n as f64).sqrt();
    let mut buf = vec![C64::new(0.0, 0.0); n];
    let mut scratch = vec![C64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for mut lane in vol.lanes_mut(Axis(axis)) {
        // ifftshift on gather: the center voxel n/2 moves to index 0.
        for (i, b) in buf.iter_mut().enumerate() {
            *b = lane[(i + half) % n];
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        // fftshift on scatter: DC returns to index n/2.
        for (j, l) in lane.iter_mut().enumerate() {
            *l = buf[(j + n - half) % n] * scale;
        }
    }
}

/// Centered orthonormal 3D FFT over the spatial axes (z, y, x) of a
/// [t][z][y][x] series, every cardiac phase independently.
pub fn fft3(vol: &mut ArrayViewMut4<'_, C64>, forward: bool) {
    for axis in 1..4 {
        transform_axis(vol, axis, forward);
    }
}
