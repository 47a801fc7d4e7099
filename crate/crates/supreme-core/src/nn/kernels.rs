//! Matrix kernels behind the ops layer.
//!
//! Every kernel has one sequential reference implementation; with the
//! `parallel` feature the large cases fan out over output rows via rayon.
//! Parallelism is only ever across independent output elements and each
//! element is produced by the identical sequential inner loop, so parallel
//! and sequential builds give bitwise-identical results at any thread count.

use super::tensor::Element;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many multiply-adds the rayon fan-out costs more than it saves.
const PAR_MIN_FLOPS: usize = 1 << 15;

/// out[r, c] = sum_k x[r, k] * w[k, c]
pub fn matmul_seq<E: Element>(x: &[E], w: &[E], rows: usize, inner: usize, cols: usize, out: &mut [E]) {
    debug_assert_eq!(x.len(), rows * inner);
    debug_assert_eq!(w.len(), inner * cols);
    debug_assert_eq!(out.len(), rows * cols);
    for r in 0..rows {
        let xr = &x[r * inner..(r + 1) * inner];
        let or = &mut out[r * cols..(r + 1) * cols];
        or.iter_mut().for_each(|v| *v = E::zero());
        for (k, &a) in xr.iter().enumerate() {
            let wk = &w[k * cols..(k + 1) * cols];
            for (o, &b) in or.iter_mut().zip(wk) {
                *o += a * b;
            }
        }
    }
}

#[cfg(feature = "parallel")]
pub fn matmul_par<E: Element>(x: &[E], w: &[E], rows: usize, inner: usize, cols: usize, out: &mut [E]) {
    debug_assert_eq!(x.len(), rows * inner);
    debug_assert_eq!(w.len(), inner * cols);
    debug_assert_eq!(out.len(), rows * cols);
    out.par_chunks_mut(cols).enumerate().for_each(|(r, or)| {
        let xr = &x[r * inner..(r + 1) * inner];
        or.iter_mut().for_each(|v| *v = E::zero());
        for (k, &a) in xr.iter().enumerate() {
            let wk = &w[k * cols..(k + 1) * cols];
            for (o, &b) in or.iter_mut().zip(wk) {
                *o += a * b;
            }
        }
    });
}

pub fn matmul<E: Element>(x: &[E], w: &[E], rows: usize, inner: usize, cols: usize, out: &mut [E]) {
    #[cfg(feature = "parallel")]
    if rows * inner * cols >= PAR_MIN_FLOPS && rows > 1 {
        return matmul_par(x, w, rows, inner, cols, out);
    }
    matmul_seq(x, w, rows, inner, cols, out)
}

/// out[k, c] = sum_r x[r, k] * y[r, c]   (x transposed; gradient of a weight)
pub fn matmul_tn_seq<E: Element>(x: &[E], y: &[E], rows: usize, k_dim: usize, cols: usize, out: &mut [E]) {
    debug_assert_eq!(x.len(), rows * k_dim);
    debug_assert_eq!(y.len(), rows * cols);
    debug_assert_eq!(out.len(), k_dim * cols);
    out.iter_mut().for_each(|v| *v = E::zero());
    for r in 0..rows {
        let xr = &x[r * k_dim..(r + 1) * k_dim];
        let yr = &y[r * cols..(r + 1) * cols];
        for (k, &a) in xr.iter().enumerate() {
            let ok = &mut out[k * cols..(k + 1) * cols];
            for (o, &b) in ok.iter_mut().zip(yr) {
                *o += a * b;
            }
        }
    }
}

#[cfg(feature = "parallel")]
pub fn matmul_tn_par<E: Element>(x: &[E], y: &[E], rows: usize, k_dim: usize, cols: usize, out: &mut [E]) {
    debug_assert_eq!(x.len(), rows * k_dim);
    debug_assert_eq!(y.len(), rows * cols);
    debug_assert_eq!(out.len(), k_dim * cols);
    out.par_chunks_mut(cols).enumerate().for_each(|(k, ok)| {
        ok.iter_mut().for_each(|v| *v = E::zero());
        for r in 0..rows {
            let a = x[r * k_dim + k];
            let yr = &y[r * cols..(r + 1) * cols];
            for (o, &b) in ok.iter_mut().zip(yr) {
                *o += a * b;
            }
        }
    });
}

pub fn matmul_tn<E: Element>(x: &[E], y: &[E], rows: usize, k_dim: usize, cols: usize, out: &mut [E]) {
    #[cfg(feature = "parallel")]
    if rows * k_dim * cols >= PAR_MIN_FLOPS && k_dim > 1 {
        return matmul_tn_par(x, y, rows, k_dim, cols, out);
    }
    matmul_tn_seq(x, y, rows, k_dim, cols, out)
}

/// out[r, k] = sum_c y[r, c] * w[k, c]   (w transposed; gradient of an input)
pub fn matmul_nt_seq<E: Element>(y: &[E], w: &[E], rows: usize, cols: usize, k_dim: usize, out: &mut [E]) {
    debug_assert_eq!(y.len(), rows * cols);
    debug_assert_eq!(w.len(), k_dim * cols);
    debug_assert_eq!(out.len(), rows * k_dim);
    for r in 0..rows {
        let yr = &y[r * cols..(r + 1) * cols];
        let or = &mut out[r * k_dim..(r + 1) * k_dim];
        for (k, o) in or.iter_mut().enumerate() {
            let wk = &w[k * cols..(k + 1) * cols];
            let mut acc = E::zero();
            for (&a, &b) in yr.iter().zip(wk) {
                acc += a * b;
            }
            *o = acc;
        }
    }
}

#[cfg(feature = "parallel")]
pub fn matmul_nt_par<E: Element>(y: &[E], w: &[E], rows: usize, cols: usize, k_dim: usize, out: &mut [E]) {
    debug_assert_eq!(y.len(), rows * cols);
    debug_assert_eq!(w.len(), k_dim * cols);
    debug_assert_eq!(out.len(), rows * k_dim);
    out.par_chunks_mut(k_dim).enumerate().for_each(|(r, or)| {
        let yr = &y[r * cols..(r + 1) * cols];
        for (k, o) in or.iter_mut().enumerate() {
            let wk = &w[k * cols..(k + 1) * cols];
            let mut acc = E::zero();
            for (&a, &b) in yr.iter().zip(wk) {
                acc += a * b;
            }
            *o = acc;
        }
    });
}

pub fn matmul_nt<E: Element>(y: &[E], w: &[E], rows: usize, cols: usize, k_dim: usize, out: &mut [E]) {
    #[cfg(feature = "parallel")]
    if rows * cols * k_dim >= PAR_MIN_FLOPS && rows > 1 {
        return matmul_nt_par(y, w, rows, cols, k_dim, out);
    }
    matmul_nt_seq(y, w, rows, cols, k_dim, out)
}

/// How a contraction accumulates its addends.
///
/// `Canonical` sorts the addends before summing, making the result a pure
/// function of the addend multiset (IEEE addition commutes, so any two
/// sequences that are permutations of each other sum identically once
/// sorted). The fusion decoder uses it over the query-token axis so that
/// permuting the query set permutes outputs bitwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SumOrder {
    Natural,
    Canonical,
}

/// Sum with a canonical (sorted) accumulation order.
pub fn canonical_sum<E: Element>(buf: &mut [E]) -> E {
    buf.sort_by(|a, b| a.partial_cmp(b).expect("non-finite addend in canonical sum"));
    let mut acc = E::zero();
    for &v in buf.iter() {
        acc += v;
    }
    acc
}

/// Batched out[b][i, m] = sum_k a[b][i, k] * bm[b][k, m]
pub fn bmm_seq<E: Element>(
    a: &[E],
    bm: &[E],
    batch: usize,
    n: usize,
    k_dim: usize,
    m: usize,
    order: SumOrder,
    out: &mut [E],
) {
    debug_assert_eq!(a.len(), batch * n * k_dim);
    debug_assert_eq!(bm.len(), batch * k_dim * m);
    debug_assert_eq!(out.len(), batch * n * m);
    let mut scratch = vec![E::zero(); k_dim];
    for b in 0..batch {
        let ab = &a[b * n * k_dim..(b + 1) * n * k_dim];
        let bb = &bm[b * k_dim * m..(b + 1) * k_dim * m];
        let ob = &mut out[b * n * m..(b + 1) * n * m];
        for i in 0..n {
            let ai = &ab[i * k_dim..(i + 1) * k_dim];
            let oi = &mut ob[i * m..(i + 1) * m];
            match order {
                SumOrder::Natural => {
                    oi.iter_mut().for_each(|v| *v = E::zero());
                    for (k, &av) in ai.iter().enumerate() {
                        let bk = &bb[k * m..(k + 1) * m];
                        for (o, &bv) in oi.iter_mut().zip(bk) {
                            *o += av * bv;
                        }
                    }
                }
                SumOrder::Canonical => {
                    for (c, o) in oi.iter_mut().enumerate() {
                        for (k, s) in scratch.iter_mut().enumerate() {
                            *s = ai[k] * bb[k * m + c];
                        }
                        *o = canonical_sum(&mut scratch);
                    }
                }
            }
        }
    }
}

#[cfg(feature = "parallel")]
pub fn bmm_par<E: Element>(
    a: &[E],
    bm: &[E],
    batch: usize,
    n: usize,
    k_dim: usize,
    m: usize,
    order: SumOrder,
    out: &mut [E],
) {
    debug_assert_eq!(out.len(), batch * n * m);
    out.par_chunks_mut(m).enumerate().for_each(|(row, oi)| {
        let b = row / n;
        let i = row % n;
        let ai = &a[(b * n + i) * k_dim..(b * n + i + 1) * k_dim];
        let bb = &bm[b * k_dim * m..(b + 1) * k_dim * m];
        match order {
            SumOrder::Natural => {
                oi.iter_mut().for_each(|v| *v = E::zero());
                for (k, &av) in ai.iter().enumerate() {
                    let bk = &bb[k * m..(k + 1) * m];
                    for (o, &bv) in oi.iter_mut().zip(bk) {
                        *o += av * bv;
                    }
                }
            }
            SumOrder::Canonical => {
                let mut scratch = vec![E::zero(); k_dim];
                for (c, o) in oi.iter_mut().enumerate() {
                    for (k, s) in scratch.iter_mut().enumerate() {
                        *s = ai[k] * bb[k * m + c];
                    }
                    *o = canonical_sum(&mut scratch);
                }
            }
        }
    });
}

pub fn bmm<E: Element>(
    a: &[E],
    bm: &[E],
    batch: usize,
    n: usize,
    k_dim: usize,
    m: usize,
    order: SumOrder,
    out: &mut [E],
) {
    #[cfg(feature = "parallel")]
    if batch * n * k_dim * m >= PAR_MIN_FLOPS && batch * n > 1 {
        return bmm_par(a, bm, batch, n, k_dim, m, order, out);
    }
    bmm_seq(a, bm, batch, n, k_dim, m, order, out)
}

/// Batched out[b][i, j] = sum_k a[b][i, k] * bt[b][j, k]   (second arg transposed)
pub fn bmm_nt_seq<E: Element>(
    a: &[E],
    bt: &[E],
    batch: usize,
    n: usize,
    k_dim: usize,
    j_dim: usize,
    out: &mut [E],
) {
    debug_assert_eq!(a.len(), batch * n * k_dim);
    debug_assert_eq!(bt.len(), batch * j_dim * k_dim);
    debug_assert_eq!(out.len(), batch * n * j_dim);
    for b in 0..batch {
        let ab = &a[b * n * k_dim..(b + 1) * n * k_dim];
        let bb = &bt[b * j_dim * k_dim..(b + 1) * j_dim * k_dim];
        let ob = &mut out[b * n * j_dim..(b + 1) * n * j_dim];
        for i in 0..n {
            let ai = &ab[i * k_dim..(i + 1) * k_dim];
            let oi = &mut ob[i * j_dim..(i + 1) * j_dim];
            for (j, o) in oi.iter_mut().enumerate() {
                let bj = &bb[j * k_dim..(j + 1) * k_dim];
                let mut acc = E::zero();
                for (&x, &y) in ai.iter().zip(bj) {
                    acc += x * y;
                }
                *o = acc;
            }
        }
    }
}

#[cfg(feature = "parallel")]
pub fn bmm_nt_par<E: Element>(
    a: &[E],
    bt: &[E],
    batch: usize,
    n: usize,
    k_dim: usize,
    j_dim: usize,
    out: &mut [E],
) {
    debug_assert_eq!(out.len(), batch * n * j_dim);
    out.par_chunks_mut(j_dim).enumerate().for_each(|(row, oi)| {
        let b = row / n;
        let i = row % n;
        let ai = &a[(b * n + i) * k_dim..(b * n + i + 1) * k_dim];
        let bb = &bt[b * j_dim * k_dim..(b + 1) * j_dim * k_dim];
        for (j, o) in oi.iter_mut().enumerate() {
            let bj = &bb[j * k_dim..(j + 1) * k_dim];
            let mut acc = E::zero();
            for (&x, &y) in ai.iter().zip(bj) {
                acc += x * y;
            }
            *o = acc;
        }
    });
}

pub fn bmm_nt<E: Element>(
    a: &[E],
    bt: &[E],
    batch: usize,
    n: usize,
    k_dim: usize,
    j_dim: usize,
    out: &mut [E],
) {
    #[cfg(feature = "parallel")]
    if batch * n * k_dim * j_dim >= PAR_MIN_FLOPS && batch * n > 1 {
        return bmm_nt_par(a, bt, batch, n, k_dim, j_dim, out);
    }
    bmm_nt_seq(a, bt, batch, n, k_dim, j_dim, out)
}

/// Batched out[b][k, m] = sum_i a[b][i, k] * c[b][i, m]   (first arg transposed)
pub fn bmm_tn_seq<E: Element>(
    a: &[E],
    c: &[E],
    batch: usize,
    n: usize,
    k_dim: usize,
    m: usize,
    out: &mut [E],
) {
    debug_assert_eq!(a.len(), batch * n * k_dim);
    debug_assert_eq!(c.len(), batch * n * m);
    debug_assert_eq!(out.len(), batch * k_dim * m);
    out.iter_mut().for_each(|v| *v = E::zero());
    for b in 0..batch {
        let ab = &a[b * n * k_dim..(b + 1) * n * k_dim];
        let cb = &c[b * n * m..(b + 1) * n * m];
        let ob = &mut out[b * k_dim * m..(b + 1) * k_dim * m];
        for i in 0..n {
            let ai = &ab[i * k_dim..(i + 1) * k_dim];
            let ci = &cb[i * m..(i + 1) * m];
            for (k, &av) in ai.iter().enumerate() {
                let ok = &mut ob[k * m..(k + 1) * m];
                for (o, &cv) in ok.iter_mut().zip(ci) {
                    *o += av * cv;
                }
            }
        }
    }
}
