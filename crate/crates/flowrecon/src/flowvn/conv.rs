//! 3D filter banks over 4D image series.
//!
//! Each bank correlates a cubic stencil (edge `nc`, typically 5) over three of
//! the four array axes and sweeps the remaining one, so the four banks cover
//! the x-y-z, x-y-t, x-z-t and y-z-t subspaces. Boundaries are zero-padded.
//! Kernels are real and stored flat, slowest-to-fastest in the bank's axis
//! order; the same coefficients act on the real and imaginary channels.
//!
//! `adjoint = true` applies the transpose operator (correlation with the
//! reversed kernel), so `<D x, y> = <x, D^T y>` holds exactly.
//!
//! # Layout
//!
//! The hot paths run on [`Padded`]: the complex volume flattened to f64 lanes
//! (re, im interleaved) with a zeroed halo of `HALO` complex elements on both
//! x-ends of every row. The halo is as wide as the largest supported stencil
//! reach, so x-shifted reads from one row can never touch another row's real
//! data — shifted inner loops then run branch-free over whole rows, and rows
//! that differ only in y fuse into single contiguous runs. Halo lanes of the
//! output accumulate garbage and are dropped when copying back.

use crate::encoding::ImageSeries;

pub const N_BANKS: usize = 4;

/// Correlated axes per bank, in array-axis order for `[t][z][y][x]` data.
/// Bank 0 is the spatial stencil (z, y, x) swept over frames; banks 1-3
/// trade one spatial axis for time.
const BANK_AXES: [[usize; 3]; N_BANKS] = [
    [1, 2, 3], // z y x
    [0, 2, 3], // t y x
    [0, 1, 3], // t z x
    [0, 1, 2], // t z y
];

/// Complex elements of zero padding on each x-end of a row; supports
/// stencil reach up to 2 (nc <= 5).
pub(crate) const HALO: usize = 2;

/// Output range on one axis for a tap shifted by `off`: indices j where
/// j + off stays in bounds.
#[inline]
fn overlap(n: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = ((n as isize - off.max(0)).max(0)) as usize;
    (lo, hi.max(lo))
}

/// f64-lane volume with per-row x halos. Rows are ordered (t, z, y) exactly
/// like the source array, so y-adjacent rows are contiguous.
pub(crate) struct Padded {
    pub nt: usize,
    pub nz: usize,
    pub ny: usize,
    pub nx: usize,
    pub buf: Vec<f64>,
}

impl Padded {
    /// f64 lanes per padded row.
    #[inline]
    pub fn srow(&self) -> usize {
        2 * (self.nx + 2 * HALO)
    }

    pub fn zeros_like_image(img: &ImageSeries) -> Self {
        let (nt, nz, ny, nx) = img.dim();
        Padded { nt, nz, ny, nx, buf: vec![0.0; nt * nz * ny * 2 * (nx + 2 * HALO)] }
    }

    pub fn from_image(img: &ImageSeries) -> Self {
        let mut p = Self::zeros_like_image(img);
        p.set_from(img);
        p
    }

    pub fn set_from(&mut self, img: &ImageSeries) {
        let (nt, nz, ny, nx) = img.dim();
        debug_assert_eq!((nt, nz, ny, nx), (self.nt, self.nz, self.ny, self.nx));
        let srow = self.srow();
        let src = img.as_slice().expect("image must be contiguous");
        for (r, chunk) in src.chunks_exact(nx).enumerate() {
            let row = &mut self.buf[r * srow + 2 * HALO..r * srow + 2 * HALO + 2 * nx];
            for (i, c) in chunk.iter().enumerate() {
                row[2 * i] = c.re;
                row[2 * i + 1] = c.im;
            }
        }
    }

    pub fn clear(&mut self) {
        self.buf.fill(0.0);
    }

    /// out += interior (halo lanes dropped).
    pub fn add_into(&self, out: &mut ImageSeries) {
        let nx = self.nx;
        let srow = self.srow();
        let dst = out.as_slice_mut().expect("image must be contiguous");
        for (r, chunk) in dst.chunks_exact_mut(nx).enumerate() {
            let row = &self.buf[r * srow + 2 * HALO..r * srow + 2 * HALO + 2 * nx];
            for (i, c) in chunk.iter_mut().enumerate() {
                c.re += row[2 * i];
                c.im += row[2 * i + 1];
            }
        }
    }

    pub fn to_image(&self) -> ImageSeries {
        let mut out = ImageSeries::zeros((self.nt, self.nz, self.ny, self.nx));
        self.add_into(&mut out);
        out
    }

    /// Whole padded rows, halos included. Callers that rewrite rows in place
    /// must keep the halo lanes zero: both the source side of `conv_padded`
    /// and `kernel_grad_padded` rely on it.
    pub fn rows_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        let srow = self.srow();
        self.buf.chunks_exact_mut(srow)
    }
}

/// Shifted 5/3/1-tap stencil over one fused run:
/// out[j] += sum_k ws[k] * src[j + stride*k] (src pre-shifted by the caller).
/// `stride` is 2 lanes for x taps and a whole padded row for y taps. Each tap
/// reads through its own length-n slice so the compiler can prove all bounds
/// up front and vectorize the j loop.
#[inline]
fn stencil_run<const NC: usize>(out: &mut [f64], src: &[f64], stride: usize, ws: &[f64; NC]) {
    let n = out.len();
    let taps: [&[f64]; NC] = std::array::from_fn(|k| &src[stride * k..stride * k + n]);
    let mut j = 0;
    while j + 4 <= n {
        let o: &mut [f64; 4] = (&mut out[j..j + 4]).try_into().unwrap();
        for k in 0..NC {
            let t: &[f64; 4] = taps[k][j..j + 4].try_into().unwrap();
            for l in 0..4 {
                o[l] = ws[k].mul_add(t[l], o[l]);
            }
        }
        j += 4;
    }
    while j < n {
        for k in 0..NC {
            out[j] = ws[k].mul_add(taps[k][j], out[j]);
        }
        j += 1;
    }
}

/// Dot of one fused run against its shifted sources, one accumulator per tap:
/// accs[k] += sum_j cot[j] * src[j + stride*k].
#[inline]
fn stencil_dot_run<const NC: usize>(cot: &[f64], src: &[f64], stride: usize, accs: &mut [f64; NC]) {
    let n = cot.len();
    let taps: [&[f64]; NC] = std::array::from_fn(|k| &src[stride * k..stride * k + n]);
    // Four independent partial sums per tap, merged in a fixed order at the
    // end: a strict running sum would pin the loop to scalar code, while a
    // fixed reduction tree vectorizes and stays bitwise reproducible.
    let mut part = [[0.0f64; 4]; NC];
    let mut j = 0;
    while j + 4 <= n {
        let c: &[f64; 4] = cot[j..j + 4].try_into().unwrap();
        for k in 0..NC {
            let t: &[f64; 4] = taps[k][j..j + 4].try_into().unwrap();
            for l in 0..4 {
                part[k][l] = c[l].mul_add(t[l], part[k][l]);
            }
        }
        j += 4;
    }
    while j < n {
        for k in 0..NC {
            part[k][0] = cot[j].mul_add(taps[k][j], part[k][0]);
        }
        j += 1;
    }
    for k in 0..NC {
        accs[k] += (part[k][0] + part[k][1]) + (part[k][2] + part[k][3]);
    }
}

/// Two stencil dots with identical geometry in one sweep; the reverse pass
/// always needs the pair (analysis and synthesis gradients of the same
/// filter), and sharing the loop halves the pass count.
#[inline]
#[allow(clippy::too_many_arguments)]
fn stencil_dot_run2<const NC: usize>(
    cot1: &[f64],
    src1: &[f64],
    cot2: &[f64],
    src2: &[f64],
    stride: usize,
    accs1: &mut [f64; NC],
    accs2: &mut [f64; NC],
) {
    let n = cot1.len();
    debug_assert_eq!(n, cot2.len());
    let taps1: [&[f64]; NC] = std::array::from_fn(|k| &src1[stride * k..stride * k + n]);
    let taps2: [&[f64]; NC] = std::array::from_fn(|k| &src2[stride * k..stride * k + n]);
    // Same fixed-tree partial sums as stencil_dot_run, for the same reason.
    let mut p1 = [[0.0f64; 4]; NC];
    let mut p2 = [[0.0f64; 4]; NC];
    let mut j = 0;
    while j + 4 <= n {
        let c1: &[f64; 4] = cot1[j..j + 4].try_into().unwrap();
        let c2: &[f64; 4] = cot2[j..j + 4].try_into().unwrap();
        for k in 0..NC {
            let t1: &[f64; 4] = taps1[k][j..j + 4].try_into().unwrap();
            let t2: &[f64; 4] = taps2[k][j..j + 4].try_into().unwrap();
            for l in 0..4 {
                p1[k][l] = c1[l].mul_add(t1[l], p1[k][l]);
                p2[k][l] = c2[l].mul_add(t2[l], p2[k][l]);
            }
        }
        j += 4;
    }
    while j < n {
        for k in 0..NC {
            p1[k][0] = cot1[j].mul_add(taps1[k][j], p1[k][0]);
            p2[k][0] = cot2[j].mul_add(taps2[k][j], p2[k][0]);
        }
        j += 1;
    }
    for k in 0..NC {
        accs1[k] += (p1[k][0] + p1[k][1]) + (p1[k][2] + p1[k][3]);
        accs2[k] += (p2[k][0] + p2[k][1]) + (p2[k][2] + p2[k][3]);
    }
}

/// Flat kernel index, optionally reversed (the adjoint correlates with the
/// flipped kernel; flipping a full cube reverses the flat order).
#[inline]
fn widx(d: usize, n3: usize, adjoint: bool) -> usize {
    if adjoint {
        n3 - 1 - d
    } else {
        d
    }
}

/// Source row index for output plane (t, z) at y0 under row offset `off`,
/// or None when the source plane falls outside the volume.
#[inline]
fn source_row(p: &Padded, t: usize, z: usize, y0: usize, off: [isize; 3]) -> Option<usize> {
    let st = t as isize + off[0];
    let sz = z as isize + off[1];
    if st < 0 || st >= p.nt as isize || sz < 0 || sz >= p.nz as isize {
        return None;
    }
    let sy = y0 as isize + off[2];
    Some(((st as usize * p.nz + sz as usize) * p.ny as usize) + sy as usize)
}

/// out += D(src) or D^T(src) for one bank; everything stays in padded layout.
pub(crate) fn conv_padded(
    src: &Padded,
    kernel: &[f64],
    bank: usize,
    nc: usize,
    adjoint: bool,
    out: &mut Padded,
) {
    debug_assert_eq!(kernel.len(), nc * nc * nc);
    debug_assert!(nc / 2 <= HALO && nc % 2 == 1);
    match (bank, nc) {
        (3, 5) => bank3_stencil::<5>(src, kernel, adjoint, out),
        (3, 3) => bank3_stencil::<3>(src, kernel, adjoint, out),
        (3, 1) => bank3_stencil::<1>(src, kernel, adjoint, out),
        (_, 5) => xstencil::<5>(src, kernel, bank, adjoint, out),
        (_, 3) => xstencil::<3>(src, kernel, bank, adjoint, out),
        (_, 1) => xstencil::<1>(src, kernel, bank, adjoint, out),
        _ => unreachable!("unsupported kernel edge {nc}"),
    }
}

/// The NC tap groups of one bank: row offsets on (t, z, y) plus the NC
/// kernel weights ordered by the fastest conv axis.
struct TapGroup<const NC: usize> {
    off: [isize; 3],
    ws: [f64; NC],
}

fn tap_groups<const NC: usize>(kernel: &[f64], bank: usize, adjoint: bool) -> Vec<TapGroup<NC>> {
    let nc = NC;
    let n3 = nc * nc * nc;
    let c = (nc / 2) as isize;
    let axes = BANK_AXES[bank];
    let mut groups = Vec::with_capacity(nc * nc);
    for d0 in 0..nc {
        for d1 in 0..nc {
            let mut off = [0isize; 3];
            off[axes[0]] = d0 as isize - c;
            off[axes[1]] = d1 as isize - c;
            let mut ws = [0.0f64; NC];
            for d2 in 0..nc {
                // the flat reversal used for the adjoint flips all three
                // coordinates at once, the x order included
                ws[d2] = kernel[widx((d0 * nc + d1) * nc + d2, n3, adjoint)];
            }
            groups.push(TapGroup { off, ws });
        }
    }
    groups
}

/// Banks 0-2: x is the fastest correlated axis. Taps come in groups of NC
/// sharing the same row offset; each group is one x-stencil pass over a fused
/// y-run. Planes are the outer loop so a plane's source neighborhood stays
/// cached while all groups consume it.
fn xstencil<const NC: usize>(src: &Padded, kernel: &[f64], bank: usize, adjoint: bool, out: &mut Padded) {
    let srow = src.srow();
    let groups = tap_groups::<NC>(kernel, bank, adjoint);
    for t in 0..src.nt {
        for z in 0..src.nz {
            for g in &groups {
                if g.ws.iter().all(|&w| w == 0.0) {
                    continue;
                }
                let (y0, y1) = overlap(src.ny, g.off[2]);
                if y0 >= y1 {
                    continue;
                }
                let Some(srow_idx) = source_row(src, t, z, y0, g.off) else {
                    continue;
                };
                let orow_idx = (t * src.nz + z) * src.ny + y0;
                let run_rows = y1 - y0;
                let ob = orow_idx * srow;
                let sb = srow_idx * srow;
                // shifted reads start NC/2 complex lanes left of the
                // interior; the halo absorbs them
                let olanes = &mut out.buf[ob + 2 * HALO..ob + run_rows * srow - 2 * HALO];
                let slanes = &src.buf[sb + 2 * HALO - 2 * (NC / 2)..];
                stencil_run::<NC>(olanes, slanes, 2, &g.ws);
            }
        }
    }
}

/// Bank 3: no x shifts, taps shift whole rows along y. Per (t, z) tap pair
/// the y-taps fuse into one row-strided stencil over the rows where every
/// tap is in bounds, plus per-tap edge rows. Sources keep zero halos, so the
/// output's halo lanes only ever accumulate zeros here.
fn bank3_stencil<const NC: usize>(src: &Padded, kernel: &[f64], adjoint: bool, out: &mut Padded) {
    let nc = NC;
    let n3 = nc * nc * nc;
    let c = nc / 2;
    let srow = src.srow();
    let ny = src.ny;
    let ylo = c.min(ny);
    let yhi = ny.saturating_sub(c).max(ylo);
    for t in 0..src.nt {
        for z in 0..src.nz {
            for d0 in 0..nc {
                for d1 in 0..nc {
                    let st = t as isize + d0 as isize - c as isize;
                    let sz = z as isize + d1 as isize - c as isize;
                    if st < 0 || st >= src.nt as isize || sz < 0 || sz >= src.nz as isize {
                        continue;
                    }
                    let ws: [f64; NC] = std::array::from_fn(|d2| {
                        kernel[widx((d0 * nc + d1) * nc + d2, n3, adjoint)]
                    });
                    if ws.iter().all(|&w| w == 0.0) {
                        continue;
                    }
                    let oplane = (t * src.nz + z) * ny;
                    let splane = (st as usize * src.nz + sz as usize) * ny;
                    if yhi > ylo {
                        let ob = (oplane + ylo) * srow;
                        let sb = (splane + ylo - c) * srow;
                        let n = (yhi - ylo) * srow;
                        stencil_run::<NC>(&mut out.buf[ob..ob + n], &src.buf[sb..], srow, &ws);
                    }
                    for y in (0..ylo).chain(yhi..ny) {
                        let ob = (oplane + y) * srow;
                        for (k, &w) in ws.iter().enumerate() {
                            if w == 0.0 {
                                continue;
                            }
                            let sy = y as isize + k as isize - c as isize;
                            if sy < 0 || sy >= ny as isize {
                                continue;
                            }
                            let sb = (splane + sy as usize) * srow;
                            let orow = &mut out.buf[ob..ob + srow];
                            let srcrow = &src.buf[sb..sb + srow];
                            for (o, &s) in orow.iter_mut().zip(srcrow) {
                                *o += s * w;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// grad[d] += sum_j Re<cot[j], base[j + off(d)]> in padded layout. Both
/// volumes must come from images (zero halos), so halo products vanish.
pub(crate) fn kernel_grad_padded(
    base: &Padded,
    cot: &Padded,
    bank: usize,
    nc: usize,
    grad: &mut [f64],
) {
    debug_assert_eq!(grad.len(), nc * nc * nc);
    debug_assert!(nc / 2 <= HALO && nc % 2 == 1);
    match (bank, nc) {
        (3, 5) => kernel_grad_bank3::<5>(base, cot, grad),
        (3, 3) => kernel_grad_bank3::<3>(base, cot, grad),
        (3, 1) => kernel_grad_bank3::<1>(base, cot, grad),
        (_, 5) => kernel_grad_xstencil::<5>(base, cot, bank, grad),
        (_, 3) => kernel_grad_xstencil::<3>(base, cot, bank, grad),
        (_, 1) => kernel_grad_xstencil::<1>(base, cot, bank, grad),
        _ => unreachable!("unsupported kernel edge {nc}"),
    }
}

/// Both kernel-gradient terms of one filter in a single sweep:
/// grad[d] += sum_j cot1[j]*base1[j+off(d)] + cot2[j]*base2[j+off(d)].
/// All four volumes share dims and the zero-halo invariant.
pub(crate) fn kernel_grad2_padded(
    base1: &Padded,
    cot1: &Padded,
    base2: &Padded,
    cot2: &Padded,
    bank: usize,
    nc: usize,
    grad: &mut [f64],
) {
    debug_assert_eq!(grad.len(), nc * nc * nc);
    debug_assert!(nc / 2 <= HALO && nc % 2 == 1);
    match (bank, nc) {
        (3, 5) => kernel_grad_bank3_2::<5>(base1, cot1, base2, cot2, grad),
        (3, 3) => kernel_grad_bank3_2::<3>(base1, cot1, base2, cot2, grad),
        (3, 1) => kernel_grad_bank3_2::<1>(base1, cot1, base2, cot2, grad),
        (_, 5) => kernel_grad_xstencil2::<5>(base1, cot1, base2, cot2, bank, grad),
        (_, 3) => kernel_grad_xstencil2::<3>(base1, cot1, base2, cot2, bank, grad),
        (_, 1) => kernel_grad_xstencil2::<1>(base1, cot1, base2, cot2, bank, grad),
        _ => unreachable!("unsupported kernel edge {nc}"),
    }
}

fn kernel_grad_xstencil<const NC: usize>(base: &Padded, cot: &Padded, bank: usize, grad: &mut [f64]) {
    let nc = NC;
    let srow = base.srow();
    let groups = tap_groups::<NC>(&vec![0.0; nc * nc * nc], bank, false);
    let mut accs = vec![[0.0f64; NC]; groups.len()];
    for t in 0..base.nt {
        for z in 0..base.nz {
            for (g, acc) in groups.iter().zip(accs.iter_mut()) {
                let (y0, y1) = overlap(base.ny, g.off[2]);
                if y0 >= y1 {
                    continue;
                }
                let Some(srow_idx) = source_row(base, t, z, y0, g.off) else {
                    continue;
                };
                let run_rows = y1 - y0;
                let cb = ((t * base.nz + z) * base.ny + y0) * srow;
                let sb = srow_idx * srow;
                let clanes = &cot.buf[cb + 2 * HALO..cb + run_rows * srow - 2 * HALO];
                let slanes = &base.buf[sb + 2 * HALO - 2 * (NC / 2)..];
                stencil_dot_run::<NC>(clanes, slanes, 2, acc);
            }
        }
    }
    for (gi, acc) in accs.iter().enumerate() {
        let (d0, d1) = (gi / nc, gi % nc);
        for d2 in 0..nc {
            grad[(d0 * nc + d1) * nc + d2] += acc[d2];
        }
    }
}

fn kernel_grad_xstencil2<const NC: usize>(
    base1: &Padded,
    cot1: &Padded,
    base2: &Padded,
    cot2: &Padded,
    bank: usize,
    grad: &mut [f64],
) {
    let nc = NC;
    let srow = base1.srow();
    let groups = tap_groups::<NC>(&vec![0.0; nc * nc * nc], bank, false);
    let mut accs = vec![([0.0f64; NC], [0.0f64; NC]); groups.len()];
    for t in 0..base1.nt {
        for z in 0..base1.nz {
            for (g, acc) in groups.iter().zip(accs.iter_mut()) {
                let (y0, y1) = overlap(base1.ny, g.off[2]);
                if y0 >= y1 {
                    continue;
                }
                let Some(srow_idx) = source_row(base1, t, z, y0, g.off) else {
                    continue;
                };
                let run_rows = y1 - y0;
                let cb = ((t * base1.nz + z) * base1.ny + y0) * srow;
                let sb = srow_idx * srow;
                let c1 = &cot1.buf[cb + 2 * HALO..cb + run_rows * srow - 2 * HALO];
                let s1 = &base1.buf[sb + 2 * HALO - 2 * (NC / 2)..];
                let c2 = &cot2.buf[cb + 2 * HALO..cb + run_rows * srow - 2 * HALO];
                let s2 = &base2.buf[sb + 2 * HALO - 2 * (NC / 2)..];
                stencil_dot_run2::<NC>(c1, s1, c2, s2, 2, &mut acc.0, &mut acc.1);
            }
        }
    }
    for (gi, acc) in accs.iter().enumerate() {
        let (d0, d1) = (gi / nc, gi % nc);
        for d2 in 0..nc {
            grad[(d0 * nc + d1) * nc + d2] += acc.0[d2] + acc.1[d2];
        }
    }
}

fn kernel_grad_bank3<const NC: usize>(base: &Padded, cot: &Padded, grad: &mut [f64]) {
    let nc = NC;
    let c = nc / 2;
    let srow = base.srow();
    let ny = base.ny;
    let ylo = c.min(ny);
    let yhi = ny.saturating_sub(c).max(ylo);
    for t in 0..base.nt {
        for z in 0..base.nz {
            for d0 in 0..nc {
                for d1 in 0..nc {
                    let st = t as isize + d0 as isize - c as isize;
                    let sz = z as isize + d1 as isize - c as isize;
                    if st < 0 || st >= base.nt as isize || sz < 0 || sz >= base.nz as isize {
                        continue;
                    }
                    let cplane = (t * base.nz + z) * ny;
                    let splane = (st as usize * base.nz + sz as usize) * ny;
                    let mut acc = [0.0f64; NC];
                    if yhi > ylo {
                        let cb = (cplane + ylo) * srow;
                        let sb = (splane + ylo - c) * srow;
                        let n = (yhi - ylo) * srow;
                        stencil_dot_run::<NC>(&cot.buf[cb..cb + n], &base.buf[sb..], srow, &mut acc);
                    }
                    for y in (0..ylo).chain(yhi..ny) {
                        let cb = (cplane + y) * srow;
                        let crow = &cot.buf[cb..cb + srow];
                        for (k, a) in acc.iter_mut().enumerate() {
                            let sy = y as isize + k as isize - c as isize;
                            if sy < 0 || sy >= ny as isize {
                                continue;
                            }
                            let sb = (splane + sy as usize) * srow;
                            let srcrow = &base.buf[sb..sb + srow];
                            let mut dot = 0.0;
                            for (cj, &sj) in crow.iter().zip(srcrow) {
                                dot += cj * sj;
                            }
                            *a += dot;
                        }
                    }
                    for d2 in 0..nc {
                        grad[(d0 * nc + d1) * nc + d2] += acc[d2];
                    }
                }
            }
        }
    }
}

fn kernel_grad_bank3_2<const NC: usize>(
    base1: &Padded,
    cot1: &Padded,
    base2: &Padded,
    cot2: &Padded,
    grad: &mut [f64],
) {
    let nc = NC;
    let c = nc / 2;
    let srow = base1.srow();
    let ny = base1.ny;
    let ylo = c.min(ny);
    let yhi = ny.saturating_sub(c).max(ylo);
    for t in 0..base1.nt {
        for z in 0..base1.nz {
            for d0 in 0..nc {
                for d1 in 0..nc {
                    let st = t as isize + d0 as isize - c as isize;
                    let sz = z as isize + d1 as isize - c as isize;
                    if st < 0 || st >= base1.nt as isize || sz < 0 || sz >= base1.nz as isize {
                        continue;
                    }
                    let cplane = (t * base1.nz + z) * ny;
                    let splane = (st as usize * base1.nz + sz as usize) * ny;
                    let mut a1 = [0.0f64; NC];
                    let mut a2 = [0.0f64; NC];
                    if yhi > ylo {
                        let cb = (cplane + ylo) * srow;
                        let sb = (splane + ylo - c) * srow;
                        let n = (yhi - ylo) * srow;
                        stencil_dot_run2::<NC>(
                            &cot1.buf[cb..cb + n],
                            &base1.buf[sb..],
                            &cot2.buf[cb..cb + n],
                            &base2.buf[sb..],
                            srow,
                            &mut a1,
                            &mut a2,
                        );
                    }
                    for y in (0..ylo).chain(yhi..ny) {
                        let cb = (cplane + y) * srow;
                        let c1 = &cot1.buf[cb..cb + srow];
                        let c2 = &cot2.buf[cb..cb + srow];
                        for k in 0..NC {
                            let sy = y as isize + k as isize - c as isize;
                            if sy < 0 || sy >= ny as isize {
                                continue;
                            }
                            let sb = (splane + sy as usize) * srow;
                            let s1 = &base1.buf[sb..sb + srow];
                            let s2 = &base2.buf[sb..sb + srow];
                            let mut d1dot = 0.0;
                            let mut d2dot = 0.0;
                            for j in 0..srow {
                                d1dot += c1[j] * s1[j];
                                d2dot += c2[j] * s2[j];
                            }
                            a1[k] += d1dot;
                            a2[k] += d2dot;
                        }
                    }
                    for d2 in 0..nc {
                        grad[(d0 * nc + d1) * nc + d2] += a1[d2] + a2[d2];
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// image-level entry points
// ---------------------------------------------------------------------------

/// out += D(inp) (or D^T(inp) when `adjoint`). `out` must match `inp`'s shape.
pub fn conv_accum(
    inp: &ImageSeries,
    kernel: &[f64],
    bank: usize,
    nc: usize,
    adjoint: bool,
    out: &mut ImageSeries,
) {
    debug_assert_eq!(inp.dim(), out.dim());
    let src = Padded::from_image(inp);
    let mut dst = Padded::zeros_like_image(inp);
    conv_padded(&src, kernel, bank, nc, adjoint, &mut dst);
    dst.add_into(out);
}

/// D(inp) or D^T(inp) into a fresh array.
pub fn conv_apply(inp: &ImageSeries, kernel: &[f64], bank: usize, nc: usize, adjoint: bool) -> ImageSeries {
    let mut out = ImageSeries::zeros(inp.dim());
    conv_accum(inp, kernel, bank, nc, adjoint, &mut out);
    out
}

/// Gradient of a correlation with respect to its kernel: with `cot` the
/// cotangent of D(base), accumulates grad[d] += sum_j Re<cot[j], base[j+d]>
/// (real inner product over both channels).
pub fn conv_kernel_grad_accum(
    base: &ImageSeries,
    cot: &ImageSeries,
    bank: usize,
    nc: usize,
    grad: &mut [f64],
) {
    debug_assert_eq!(base.dim(), cot.dim());
    let b = Padded::from_image(base);
    let c = Padded::from_image(cot);
    kernel_grad_padded(&b, &c, bank, nc, grad);
}

pub fn real_dot(a: &ImageSeries, b: &ImageSeries) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        acc += x.re * y.re + x.im * y.im;
    }
    acc
}
