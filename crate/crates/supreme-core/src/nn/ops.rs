//! Differentiable op constructors.
//!
//! Each op validates shapes, computes its value through the kernels layer,
//! and records a backward closure on the tape. Stochastic ops (dropout,
//! stochastic depth) draw their masks from a caller-supplied named stream
//! and capture the mask, so replaying a tape is deterministic.

use thiserror::Error;

use super::kernels::{self, SumOrder};
use super::tape::{Tape, Var};
use super::tensor::{el, Element, Tensor};
use crate::rng::StreamRng;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("value error: {0}")]
    Value(String),
}

pub type Result<T> = std::result::Result<T, NnError>;

fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(NnError::Shape(msg.into()))
}

/// Rows of a tensor seen as a matrix over its last axis.
fn row_count(shape: &[usize]) -> usize {
    shape[..shape.len() - 1].iter().product()
}

/// y = a + b (identical shapes).
pub fn add<E: Element>(tape: &mut Tape<E>, a: Var, b: Var) -> Result<Var> {
    let (va, vb) = (tape.value(a).clone(), tape.value(b).clone());
    if va.shape() != vb.shape() {
        return shape_err(format!("add: {:?} vs {:?}", va.shape(), vb.shape()));
    }
    let out = va.zip(&vb, |x, y| x + y);
    Ok(tape.push(
        out,
        Some(Box::new(move |g, sink| {
            sink(a, g.clone());
            sink(b, g.clone());
        })),
    ))
}

/// y = x + bias broadcast over the last axis.
pub fn add_bias<E: Element>(tape: &mut Tape<E>, x: Var, bias: Var) -> Result<Var> {
    let (vx, vb) = (tape.value(x).clone(), tape.value(bias).clone());
    let c = *vx.shape().last().ok_or_else(|| NnError::Shape("add_bias: scalar input".into()))?;
    if vb.shape() != [c] {
        return shape_err(format!("add_bias: bias {:?} vs last axis {c}", vb.shape()));
    }
    let mut out = vx.clone();
    for row in out.data_mut().chunks_mut(c) {
        for (o, &b) in row.iter_mut().zip(vb.data()) {
            *o += b;
        }
    }
    Ok(tape.push(
        out,
        Some(Box::new(move |g, sink| {
            sink(x, g.clone());
            let mut db = Tensor::zeros(&[c]);
            {
                let db = db.data_mut();
                for row in g.data().chunks(c) {
                    for (o, &v) in db.iter_mut().zip(row) {
                        *o += v;
                    }
                }
            }
            sink(bias, db);
        })),
    ))
}

/// y[..., c] = sum_k x[..., k] w[k, c]
pub fn matmul<E: Element>(tape: &mut Tape<E>, x: Var, w: Var) -> Result<Var> {
    let (vx, vw) = (tape.value(x).clone(), tape.value(w).clone());
    if vx.shape().is_empty() || vw.shape().len() != 2 {
        return shape_err(format!("matmul: {:?} x {:?}", vx.shape(), vw.shape()));
    }
    let k = *vx.shape().last().unwrap();
    let (wk, wc) = (vw.shape()[0], vw.shape()[1]);
    if k != wk {
        return shape_err(format!("matmul: inner {k} vs weight rows {wk}"));
    }
    let rows = row_count(vx.shape());
    let mut out_shape = vx.shape().to_vec();
    *out_shape.last_mut().unwrap() = wc;
    let mut out = Tensor::zeros(&out_shape);
    kernels::matmul(vx.data(), vw.data(), rows, k, wc, out.data_mut());
    Ok(tape.push(
        out,
        Some(Box::new(move |g, sink| {
            let mut dx = Tensor::zeros(vx.shape());
            kernels::matmul_nt(g.data(), vw.data(), rows, wc, k, dx.data_mut());
            sink(x, dx);
            let mut dw = Tensor::zeros(&[k, wc]);
            kernels::matmul_tn(vx.data(), g.data(), rows, k, wc, dw.data_mut());
            sink(w, dw);
        })),
    ))
}

/// Affine map over the last axis: linear(x, W, b) = x W + b.
pub fn linear<E: Element>(tape: &mut Tape<E>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = matmul(tape, x, w)?;
    add_bias(tape, y, b)
}

/// Batched y[b] = a[b] @ m[b], contracting over the middle axis in the given
/// accumulation order.
pub fn bmm<E: Element>(tape: &mut Tape<E>, a: Var, m: Var, order: SumOrder) -> Result<Var> {
    let (va, vm) = (tape.value(a).clone(), tape.value(m).clone());
    let &[ba, n, k] = va.shape() else {
        return shape_err(format!("bmm: {:?} x {:?}", va.shape(), vm.shape()));
    };
    let &[bm, k2, c] = vm.shape() else {
        return shape_err(format!("bmm: {:?} x {:?}", va.shape(), vm.shape()));
    };
    if ba != bm || k != k2 {
        return shape_err(format!("bmm: {:?} x {:?}", va.shape(), vm.shape()));
    }
    let mut out = Tensor::zeros(&[ba, n, c]);
    kernels::bmm(va.data(), vm.data(), ba, n, k, c, order, out.data_mut());
    Ok(tape.push(
        out,
        Some(Box::new(move |g, sink| {
            let mut da = Tensor::zeros(&[ba, n, k]);
            kernels::bmm_nt(g.data(), vm.data(), ba, n, c, k, da.data_mut());
            sink(a, da);
            let mut dm = Tensor::zeros(&[ba, k, c]);
            kernels::bmm_tn_seq(va.data(), g.data(), ba, n, k, c, dm.data_mut());
            sink(m, dm);
        })),
    ))
}

/// Batched y[b] = a[b] @ t[b]^T (attention scores).
pub fn bmm_nt<E: Element>(tape: &mut Tape<E>, a: Var, t: Var) -> Result<Var> {
    let (va, vt) = (tape.value(a).clone(), tape.value(t).clone());
    let &[ba, n, k] = va.shape() else {
        return shape_err(format!("bmm_nt: {:?} x {:?}", va.shape(), vt.shape()));
    };
    let &[bt, j, k2] = vt.shape() else {
        return shape_err(format!("bmm_nt: {:?} x {:?}", va.shape(), vt.shape()));
    };
    if ba != bt || k != k2 {
        return shape_err(format!("bmm_nt: {:?} x {:?}", va.shape(), vt.shape()));
    }
    let mut out = Tensor::zeros(&[ba, n, j]);
    kernels::bmm_nt(va.data(), vt.data(), ba, n, k, j, out.data_mut());
    Ok(tape.push(
        out,
        Some(Box::new(move |g, sink| {
            let mut da = Tensor::zeros(&[ba, n, k]);
            kernels::bmm(g.data(), vt.data(), ba, n, j, k, SumOrder::Natural, da.data_mut());
            sink(a, da);
            let mut dt = Tensor::zeros(&[ba, j, k]);
            kernels::bmm_tn_seq(g.data(), va.data(), ba, n, j, k, dt.data_mut());
            sink(t, dt);
        })),
    ))
}

/// y = c * x for a compile-time-constant scalar.
pub fn scale<E: Element>(tape: &mut Tape<E>, x: Var, c: f64) -> Result<Var> {
    let vx = tape.value(x).clone();
    let ce = el::<E>(c);
    let out = vx.map(|v| v * ce);
    Ok(tape.push(
        out,
        Some(Box::new(move |g, sink| sink(x, g.map(|v| v * ce)))),
    ))
}

/// Same data, new shape.
pub fn reshape<E: Element>(tape: &mut Tape<E>, x: Var, shape: &[usize]) -> Result<Var> {
    let vx = tape.value(x).clone();
    if shape.iter().product::<usize>() != vx.len() {
        return shape_err(format!("reshape: {:?} to {:?}", vx.shape(), shape));
    }
    let in_shape = vx.shape().to_vec();
    let out = vx.reshape(shape);
    Ok(tape.push(
        out,
        Some(Box::new(move |g, sink| sink(x, g.reshape(&in_shape)))),
    ))
}

/// [B, S, H*dh] -> [B*H, S, dh]: lay tokens out per head for batched attention.
pub fn split_heads<E: Element>(tape: &mut Tape<E>, x: Var, heads: usize) -> Result<Var> {
    let vx = tape.value(x).clone();
    let &[b, s, d] = vx.shape() else {
        return shape_err(format!("split_heads: {:?}", vx.shape()));
    };
    if d % heads != 0 {
        return Err(NnError::Config(format!("split_heads: width {d} not divisible by {heads} heads")));
    }
    let dh = d / heads;
    let mut out = Tensor::zeros(&[b * heads, s, dh]);
    {
        let o = out.data_mut();
        let xd = vx.data();
        for bi in 0..b {
            for h in 0..heads {
                for si in 0..s {
                    let src = (bi * s + si) * d + h * dh;
                    let dst = ((bi * heads + h) * s + si) * dh;
                    o[dst..dst + dh].copy_from_slice(&xd[src..src + dh]);
                }
            }
        }
    }
    Ok(tape.push(
        out,
        Some(Box::new(move |g, sink| {
            let mut dx = Tensor::zeros(&[b, s, d]);
            {
                let o = dx.data_mut();
                let gd = g.data();
                for bi in 0..b {
                    for h in 0..heads {
                        for si in 0..s {
                            let dst = (bi * s + si) * d + h * dh;
                            let src = ((bi * heads + h) * s + si) * dh;
                            o[dst..dst + dh].copy_from_slice(&gd[src..src + dh]);
                        }
                    }
                }
            }
            sink(x, dx);
        })),
    ))
}

/// [B*H, S, dh] -> [B, S, H*dh], inverse of split_heads.
pub fn merge_heads<E: Element>(tape: &mut Tape<E>, x: Var, heads: usize) -> Result<Var> {
    let vx = tape.value(x).clone();
    let &[bh, s, dh] = vx.shape() else {
        return shape_err(format!("merge_heads: {:?}", vx.shape()));
    };
    if bh % heads != 0 {
        return shape_err(format!("merge_heads: batch*heads {bh} not divisible by {heads}"));
    }
    let b = bh / heads;
    let d = dh * heads;
    let mut out = Tensor::zeros(&[b, s, d]);
    {
        let o = out.data_mut();
        let xd = vx.data();
        for bi in 0..b {
            for h in 0..heads {
                for si in 0..s {
                    let dst = (bi * s + si) * d + h * dh;
                    let src = ((bi * heads + h) * s + si) * dh;
                    o[dst..dst + dh].copy_from_slice(&xd[src..src + dh]);
                }
            }
        }
    }
    Ok(tape.push(
        out,
        Some(Box::new(move |g, sink| {
            let mut dx = Tensor::zeros(&[bh, s, dh]);
            {
                let o = dx.data_mut();
                let gd = g.data();
                for bi in 0..b {
                    for h in 0..heads {
                        for si in 0..s {
                            let src = (bi * s + si) * d + h * dh;
                            let dst = ((bi * heads + h) * s + si) * dh;
                            o[dst..dst + dh].copy_from_slice(&gd[src..src + dh]);
                        }
                    }
                }
            }
            sink(x, dx);
        })),
    ))
}

/// Row-wise softmax over the last axis. Max-shifted for stability; rows of
/// equal logits map to the exact uniform distribution.
pub fn softmax<E: Element>(tape: &mut Tape<E>, x: Var, order: SumOrder) -> Result<Var> {
    let vx = tape.value(x).clone();
    let c = *vx.shape().last().ok_or_else(|| NnError::Shape("softmax: scalar input".into()))?;
    if c == 0 {
        return shape_err("softmax: empty last axis");
    }
    let mut out = vx.clone();
    {
        let data = out.data_mut();
        let mut scratch = vec![E::zero(); c];
        for row in data.chunks_mut(c) {
            let m = row.iter().fold(E::neg_infinity(), |a, &b| if b > a { b } else { a });
            for v in row.iter_mut() {
                *v = (*v - m).exp();
            }
            let denom = match order {
                SumOrder::Natural => {
                    let mut acc = E::zero();
                    for &v in row.iter() {
                        acc += v;
                    }
                    acc
                }
                SumOrder::Canonical => {
                    scratch.copy_from_slice(row);
                    kernels::canonical_sum(&mut scratch)
                }
            };
            for v in row.iter_mut() {
                *v = *v / denom;
            }
        }
    }
    let y = out.clone();
    Ok(tape.push(
        out,
        Some(Box::new(move |g, sink| {
            let mut dx = g.clone();
            {
                let dxd = dx.data_mut();
                let yd = y.data();
                for (drow, yrow) in dxd.chunks_mut(c).zip(yd.chunks(c)) {
                    let mut dot = E::zero();
                    for (&gv, &yv) in drow.iter().zip(yrow) {
                        dot += gv * yv;
                    }
                    for (dv, &yv) in drow.iter_mut().zip(yrow) {
                        *dv = yv * (*dv - dot);
                    }
                }
            }
            sink(x, dx);
        })),
    ))
}

/// Layer normalization over the last axis with learnable gain and shift.
pub fn layer_norm<E: Element>(tape: &mut Tape<E>, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
    let vx = tape.value(x).clone();
    let (vg, vb) = (tape.value(gamma).clone(), tape.value(beta).clone());
    let c = *vx.shape().last().ok_or_else(|| NnError::Shape("layer_norm: scalar input".into()))?;
    if vg.shape() != [c] || vb.shape() != [c] {
        return shape_err(format!(
            "layer_norm: gain {:?} shift {:?} vs axis {c}",
            vg.shape(),
            vb.shape()
        ));
    }
    let rows = row_count(vx.shape());
    let epe = el::<E>(eps);
    let ce = el::<E>(c as f64);
    // Cache normalized activations and reciprocal stddev for the backward pass.
    let mut xhat = Tensor::zeros(vx.shape());
    let mut rstd = vec![E::zero(); rows];
    let mut out = Tensor::zeros(vx.shape());
    {
        let xd = vx.data();
        let xh = xhat.data_mut();
        let od = out.data_mut();
        for r in 0..rows {
            let row = &xd[r * c..(r + 1) * c];
            let mut mean = E::zero();
            for &v in row {
                mean += v;
            }
            mean = mean / ce;
            let mut var = E::zero();
            for &v in row {
                let d = v - mean;
                var += d * d;
            }
            var = var / ce;
            let rs = E::one() / (var + epe).sqrt();
            rstd[r] = rs;
            for i in 0..c {
                let h = (row[i] - mean) * rs;
                xh[r * c + i] = h;
                od[r * c + i] = h * vg.data()[i] + vb.data()[i];
            }
        }
    }
    let xhat_b = xhat.clone();
    Ok(tape.push(
        out,
        Some(Box::new(move |g, sink| {
            let gd = g.data();
            let xh = xhat_b.data();
            let mut dgamma = Tensor::zeros(&[c]);
            let mut dbeta = Tensor::zeros(&[c]);
            let mut dx = Tensor::zeros(&[rows * c]);
            {
                let dgd = dgamma.data_mut();
                let dbd = dbeta.data_mut();
                let dxd = dx.data_mut();
                for r in 0..rows {
                    let grow = &gd[r * c..(r + 1) * c];
                    let hrow = &xh[r * c..(r + 1) * c];
                    let mut sum_dh = E::zero();
                    let mut sum_dh_h = E::zero();
                    for i in 0..c {
                        let dh = grow[i] * vg.data()[i];
                        sum_dh += dh;
                        sum_dh_h += dh * hrow[i];
                        dgd[i] += grow[i] * hrow[i];
                        dbd[i] += grow[i];
                    }
                    let m1 = sum_dh / ce;
                    let m2 = sum_dh_h / ce;
                    for i in 0..c {
                        let dh = grow[i] * vg.data()[i];
                        dxd[r * c + i] = (dh - m1 - hrow[i] * m2) * rstd[r];
                    }
                }
            }
            sink(x, dx.reshape(vx.shape()));
            sink(gamma, dgamma);
            sink(beta, dbeta);
        })),
    ))
}

/// Rectified linear unit.
pub fn relu<E: Element>(tape: &mut Tape<E>, x: Var) -> Result<Var> {
    let vx = tape.value(x).clone();
    let out = vx.map(|v| if v > E::zero() { v } else { E::zero() });
    Ok(tape.push(
        out,
        Some(Box::new(move |g, sink| {
            sink(x, g.zip(&vx, |gv, xv| if xv > E::zero() { gv } else { E::zero() }))
        })),
    ))
}

/// Gaussian cdf, the exact form used by gelu.
fn gauss_cdf<E: Element>(x: E) -> E {
    let half = el::<E>(0.5);
    half * (E::one() + (x / el::<E>(std::f64::consts::SQRT_2)).erf())
}

/// gelu(x) = x * Phi(x) with the exact Gaussian cdf (no tanh shortcut).
pub fn gelu<E: Element>(tape: &mut Tape<E>, x: Var) -> Result<Var> {
    let vx = tape.value(x).clone();
    let out = vx.map(|v| v * gauss_cdf(v));
    let inv_sqrt_2pi = el::<E>(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    let half = el::<E>(0.5);
    Ok(tape.push(
        out,
        Some(Box::new(move |g, sink| {
            sink(
                x,
                g.zip(&vx, |gv, xv| {
                    let pdf = inv_sqrt_2pi * (-half * xv * xv).exp();
                    gv * (gauss_cdf(xv) + xv * pdf)
                }),
            )
        })),
    ))
}

/// Numerically stable logistic function.
pub fn sigmoid_scalar<E: Element>(z: E) -> E {
    if z >= E::zero() {
        E::one() / (E::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (E::one() + e)
    }
}

/// Numerically stable softplus: log(1 + e^z) without overflow on large z.
pub fn softplus_scalar<E: Element>(z: E) -> E {
    if z > E::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Elementwise logistic function.
pub fn sigmoid<E: Element>(tape: &mut Tape<E>, x: Var) -> Result<Var> {
    let vx = tape.value(x).clone();
    let out = vx.map(sigmoid_scalar);
    let y = out.clone();
    Ok(tape.push(
        out,
        Some(Box::new(move |g, sink| {
            sink(x, g.zip(&y, |gv, yv| gv * yv * (E::one() - yv)))
        })),
    ))
}

/// Inverted dropout: keep with probability 1-p and rescale by 1/(1-p), so the
/// expectation is the identity. Identity in eval mode or at p = 0.
pub fn dropout<E: Element>(
    tape: &mut Tape<E>,
    x: Var,
    p: f64,
    training: bool,
    rng: &mut StreamRng,
) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(NnError::Config(format!("dropout: rate {p} outside [0, 1)")));
    }
    if !training || p == 0.0 {
        return Ok(x);
    }
    let vx = tape.value(x).clone();
    let keep_scale = el::<E>(1.0 / (1.0 - p));
    let mask: Vec<E> = (0..vx.len())
        .map(|_| if rng.uniform01_f64() < p { E::zero() } else { keep_scale })
        .collect();
    let mask = Tensor::from_vec(vx.shape(), mask);
    let out = vx.zip(&mask, |v, m| v * m);
    Ok(tape.push(
        out,
        Some(Box::new(move |g, sink| sink(x, g.zip(&mask, |gv, m| gv * m)))),
    ))
}

/// Stochastic depth on a residual branch: drop the whole branch per sample
/// (axis 0) with probability p, rescaling survivors by 1/(1-p).
pub fn drop_path<E: Element>(
    tape: &mut Tape<E>,
    x: Var,
    p: f64,
    training: bool,
    rng: &mut StreamRng,
) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(NnError::Config(format!("drop_path: rate {p} outside [0, 1)")));
    }
    if !training || p == 0.0 {
        return Ok(x);
    }
    let vx = tape.value(x).clone();
    let b = *vx.shape().first().ok_or_else(|| NnError::Shape("drop_path: scalar input".into()))?;
    let row = vx.len() / b;
    let keep_scale = el::<E>(1.0 / (1.0 - p));
    let mask: Vec<E> = (0..b)
        .map(|_| if rng.uniform01_f64() < p { E::zero() } else { keep_scale })
        .collect();
    let mut out = vx.clone();
    for (bi, chunk) in out.data_mut().chunks_mut(row).enumerate() {
        for v in chunk.iter_mut() {
            *v = *v * mask[bi];
        }
    }
    Ok(tape.push(
        out,
        Some(Box::new(move |g, sink| {
            let mut dx = g.clone();
            for (bi, chunk) in dx.data_mut().chunks_mut(row).enumerate() {
                for v in chunk.iter_mut() {
                    *v = *v * mask[bi];
                }
            }
            sink(x, dx);
        })),
    ))
}

/// Token enrichment for the patch grid: y[b, i*n + j, :] = x + lead[i] + pos[j].
pub fn add_lead_pos<E: Element>(
    tape: &mut Tape<E>,
    x: Var,
    lead: Var,
    pos: Var,
) -> Result<Var> {
    let vx = tape.value(x).clone();
    let (vl, vp) = (tape.value(lead).clone(), tape.value(pos).clone());
    let &[b, s, d] = vx.shape() else {
        return shape_err(format!("add_lead_pos: tokens {:?}", vx.shape()));
    };
    let &[l, dl] = vl.shape() else {
        return shape_err(format!("add_lead_pos: lead table {:?}", vl.shape()));
    };
    let &[n, dp] = vp.shape() else {
        return shape_err(format!("add_lead_pos: pos table {:?}", vp.shape()));
    };
    if dl != d || dp != d || l * n != s {
        return shape_err(format!(
            "add_lead_pos: tokens {:?}, lead {:?}, pos {:?} inconsistent",
            vx.shape(),
            vl.shape(),
            vp.shape()
        ));
    }
    let mut out = vx.clone();
    {
        let od = out.data_mut();
        for bi in 0..b {
            for i in 0..l {
                for j in 0..n {
                    let base = ((bi * l + i) * n + j) * d;
                    for k in 0..d {
                        od[base + k] += vl.data()[i * d + k] + vp.data()[j * d + k];
                    }
                }
            }
        }
    }
    Ok(tape.push(
        out,
        Some(Box::new(move |g, sink| {
            sink(x, g.clone());
            let gd = g.data();
            let mut dl_t = Tensor::zeros(&[l, d]);
            let mut dp_t = Tensor::zeros(&[n, d]);
            {
                let dld = dl_t.data_mut();
                let dpd = dp_t.data_mut();
                for bi in 0..b {
                    for i in 0..l {
                        for j in 0..n {
                            let base = ((bi * l + i) * n + j) * d;
                            for k in 0..d {
                                dld[i * d + k] += gd[base + k];
                                dpd[j * d + k] += gd[base + k];
                            }
                        }
                    }
                }
            }
            sink(lead, dl_t);
            sink(pos, dp_t);
        })),
    ))
}

/// Repeat a [M, C] matrix along a new leading batch axis.
pub fn broadcast_rows<E: Element>(tape: &mut Tape<E>, q: Var, batch: usize) -> Result<Var> {
    let vq = tape.value(q).clone();
    let &[m, c] = vq.shape() else {
        return shape_err(format!("broadcast_rows: {:?}", vq.shape()));
    };
    let mut data = Vec::with_capacity(batch * m * c);
    for _ in 0..batch {
        data.extend_from_slice(vq.data());
    }
    let out = Tensor::from_vec(&[batch, m, c], data);
    Ok(tape.push(
        out,
        Some(Box::new(move |g, sink| {
            let mut dq = Tensor::zeros(&[m, c]);
            {
                let dqd = dq.data_mut();
                for chunk in g.data().chunks(m * c) {
                    for (o, &v) in dqd.iter_mut().zip(chunk) {
                        *o += v;
                    }
                }
            }
            sink(q, dq);
        })),
    ))
}

/// Scalar sum of all elements.
pub fn sum_all<E: Element>(tape: &mut Tape<E>, x: Var) -> Var {
    let vx = tape.value(x).clone();
    let mut acc = E::zero();
    for &v in vx.data() {
        acc += v;
    }
    let shape = vx.shape().to_vec();
    tape.push(
        Tensor::scalar(acc),
        Some(Box::new(move |g, sink| {
            let gv = g.scalar_value();
            sink(x, Tensor::full(&shape, gv));
        })),
    )
}

/// Scalar dot product with a constant weight tensor (test utility for
/// breaking gradient symmetry).
pub fn weighted_sum<E: Element>(tape: &mut Tape<E>, x: Var, weights: &Tensor<E>) -> Result<Var> {
    let vx = tape.value(x).clone();
    if vx.shape() != weights.shape() {
        return shape_err(format!("weighted_sum: {:?} vs {:?}", vx.shape(), weights.shape()));
    }
    let mut acc = E::zero();
    for (&a, &w) in vx.data().iter().zip(weights.data()) {
        acc += a * w;
    }
    let w = weights.clone();
    Ok(tape.push(
        Tensor::scalar(acc),
        Some(Box::new(move |g, sink| {
            let gv = g.scalar_value();
            sink(x, w.map(|v| v * gv));
        })),
    ))
}

/// Mean binary cross-entropy between logits and hard {0,1} targets, in the
/// log-sum-exp-stable form softplus(z) - y*z averaged over all elements.
pub fn bce_with_logits<E: Element>(tape: &mut Tape<E>, logits: Var, targets: &Tensor<E>) -> Result<Var> {
    let vz = tape.value(logits).clone();
    if vz.shape() != targets.shape() {
        return shape_err(format!("bce: logits {:?} vs targets {:?}", vz.shape(), targets.shape()));
    }
    if vz.is_empty() {
        return Err(NnError::Value("bce: empty logits".into()));
    }
    for (i, &y) in targets.data().iter().enumerate() {
        if y != E::zero() && y != E::one() {
            return Err(NnError::Value(format!("bce: target at {i} is {y}, not 0 or 1")));
        }
    }
    let n = el::<E>(vz.len() as f64);
    let mut acc = E::zero();
    for (&z, &y) in vz.data().iter().zip(targets.data()) {
        acc += softplus_scalar(z) - y * z;
    }
    let y = targets.clone();
    Ok(tape.push(
        Tensor::scalar(acc / n),
        Some(Box::new(move |g, sink| {
            let gv = g.scalar_value() / n;
            sink(logits, vz.zip(&y, |z, t| (sigmoid_scalar(z) - t) * gv));
        })),
    ))
}

/// Learned projections of one attention module.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Multi-head scaled dot-product attention with learned Q/K/V/output
/// projections. `order` controls how the softmax denominator and the
/// weights-times-values contraction accumulate over the key axis; pass
/// `Canonical` where bitwise set-permutation symmetry over keys is required.
pub fn multi_head_attention<E: Element>(
    tape: &mut Tape<E>,
    q_in: Var,
    k_in: Var,
    v_in: Var,
    heads: usize,
    vars: &AttentionVars,
    order: SumOrder,
) -> Result<Var> {
    let d = *tape
        .value(q_in)
        .shape()
        .last()
        .ok_or_else(|| NnError::Shape("attention: scalar query".into()))?;
    if heads == 0 || d % heads != 0 {
        return Err(NnError::Config(format!("attention: width {d} not divisible by {heads} heads")));
    }
    let dh = d / heads;
    let q = linear(tape, q_in, vars.wq, vars.bq)?;
    let k = linear(tape, k_in, vars.wk, vars.bk)?;
    let v = linear(tape, v_in, vars.wv, vars.bv)?;
    let qh = split_heads(tape, q, heads)?;
    let kh = split_heads(tape, k, heads)?;
    let vh = split_heads(tape, v, heads)?;
    let scores = bmm_nt(tape, qh, kh)?;
    let scaled = scale(tape, scores, 1.0 / (dh as f64).sqrt())?;
    let weights = softmax(tape, scaled, order)?;
    let ctx = bmm(tape, weights, vh, order)?;
    let merged = merge_heads(tape, ctx, heads)?;
    linear(tape, merged, vars.wo, vars.bo)
}
