//! Temporal layers over `[channels, time]` inputs: dilated convolution
//! banks, pooling and group normalization.

use super::layers::PoolKind;
use super::params::{ParamId, ParamSet};
use crate::tensor::Tensor;

const GROUP_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct ConvCache {
    pub(crate) input: Tensor,
}

/// Offsets and the valid output range for tap `k` of a dilated kernel with
/// zero "same" padding: `y[t] += w * x[t + off]` for `t in lo..hi`.
fn tap_range(k: usize, dilation: usize, kernel: usize, len: usize) -> (isize, usize, usize) {
    let pad = (dilation * (kernel - 1) / 2) as isize;
    let off = (k * dilation) as isize - pad;
    let lo = (-off).max(0) as usize;
    let hi = (len as isize - off).clamp(0, len as isize) as usize;
    (off, lo.min(hi), hi)
}

pub(crate) fn conv_bank_forward(
    p: &ParamSet,
    ids: &[ParamId],
    kernel: usize,
    dilations: &[usize],
    x: &Tensor,
    out_shape: &[usize],
) -> Tensor {
    let (cin, len) = (x.rows(), x.cols());
    let mut y = Tensor::zeros(out_shape);
    for (b, &d) in dilations.iter().enumerate() {
        let w = p.value(ids[2 * b]);
        let cout = w.shape()[0];
        let wd = w.data();
        let bias = p.value(ids[2 * b + 1]).data();
        for o in 0..cout {
            let yrow = y.row_mut(b * cout + o);
            yrow.fill(bias[o]);
            for c in 0..cin {
                let xrow = x.row(c);
                for k in 0..kernel {
                    let wv = wd[(o * cin + c) * kernel + k];
                    let (off, lo, hi) = tap_range(k, d, kernel, len);
                    if lo == hi {
                        continue;
                    }
                    let src = &xrow[(lo as isize + off) as usize..(hi as isize + off) as usize];
                    for (yv, xv) in yrow[lo..hi].iter_mut().zip(src) {
                        *yv += wv * xv;
                    }
                }
            }
        }
    }
    y
}

pub(crate) fn conv_bank_backward(
    p: &ParamSet,
    ids: &[ParamId],
    kernel: usize,
    dilations: &[usize],
    x: &Tensor,
    gy: &Tensor,
    grads: &mut [Tensor],
) -> Tensor {
    let (cin, len) = (x.rows(), x.cols());
    let mut gx = Tensor::zeros(x.shape());
    for (b, &d) in dilations.iter().enumerate() {
        let w = p.value(ids[2 * b]);
        let cout = w.shape()[0];
        let wd = w.data();
        for o in 0..cout {
            let grow = gy.row(b * cout + o);
            let gb: f64 = grow.iter().sum();
            grads[ids[2 * b + 1].0].data_mut()[o] += gb;
            for c in 0..cin {
                let xrow = x.row(c);
                for k in 0..kernel {
                    let (off, lo, hi) = tap_range(k, d, kernel, len);
                    if lo == hi {
                        continue;
                    }
                    let (s0, s1) = ((lo as isize + off) as usize, (hi as isize + off) as usize);
                    let dot: f64 = grow[lo..hi]
                        .iter()
                        .zip(&xrow[s0..s1])
                        .map(|(g, xv)| g * xv)
                        .sum();
                    let widx = (o * cin + c) * kernel + k;
                    grads[ids[2 * b].0].data_mut()[widx] += dot;
                    let wv = wd[widx];
                    for (gxv, g) in gx.row_mut(c)[s0..s1].iter_mut().zip(&grow[lo..hi]) {
                        *gxv += wv * g;
                    }
                }
            }
        }
    }
    gx
}

#[derive(Debug, Clone)]
pub struct PoolCache {
    in_shape: Vec<usize>,
    window: usize,
    /// Winning input index per output element (max pooling only).
    pub(crate) argmax: Vec<usize>,
}

pub(crate) fn pool_forward(
    kind: PoolKind,
    size: Option<usize>,
    x: &Tensor,
    out_shape: &[usize],
) -> (Tensor, PoolCache) {
    let (c, len) = (x.rows(), x.cols());
    let window = size.unwrap_or(len);
    let tout = len / window;
    let mut y = Tensor::zeros(out_shape);
    let mut argmax = Vec::new();
    for ch in 0..c {
        let row = x.row(ch);
        for j in 0..tout {
            let seg = &row[j * window..(j + 1) * window];
            let v = match kind {
                PoolKind::Average => seg.iter().sum::<f64>() / window as f64,
                PoolKind::Max => {
                    let mut best = 0;
                    for (i, &s) in seg.iter().enumerate() {
                        if s > seg[best] {
                            best = i;
                        }
                    }
                    argmax.push(j * window + best);
                    seg[best]
                }
            };
            y.data_mut()[ch * tout + j] = v;
        }
    }
    (
        y,
        PoolCache {
            in_shape: x.shape().to_vec(),
            window,
            argmax,
        },
    )
}

pub(crate) fn pool_backward(kind: PoolKind, cache: &PoolCache, gy: &Tensor) -> Tensor {
    let mut gx = Tensor::zeros(&cache.in_shape);
    let c = cache.in_shape[0];
    let window = cache.window;
    let tout = gy.len() / c;
    for ch in 0..c {
        for j in 0..tout {
            let g = gy.data()[ch * tout + j];
            let row = gx.row_mut(ch);
            match kind {
                PoolKind::Average => {
                    for v in &mut row[j * window..(j + 1) * window] {
                        *v += g / window as f64;
                    }
                }
                PoolKind::Max => row[cache.argmax[ch * tout + j]] += g,
            }
        }
    }
    gx
}

#[derive(Debug, Clone)]
pub struct GroupNormCache {
    normalized: Tensor,
    inv_std: Vec<f64>,
    groups: usize,
}

pub(crate) fn group_norm_forward(
    p: &ParamSet,
    ids: &[ParamId],
    groups: usize,
    x: &Tensor,
) -> (Tensor, GroupNormCache) {
    let (c, len) = (x.rows(), x.cols());
    let per = c / groups;
    let gamma = p.value(ids[0]).data();
    let beta = p.value(ids[1]).data();
    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    let mut inv_std = Vec::with_capacity(groups);
    let n = (per * len) as f64;
    for g in 0..groups {
        let rows = g * per..(g + 1) * per;
        let mean = rows
            .clone()
            .map(|r| x.row(r).iter().sum::<f64>())
            .sum::<f64>()
            / n;
        let var = rows
            .clone()
            .map(|r| {
                x.row(r)
                    .iter()
                    .map(|v| (v - mean) * (v - mean))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n;
        let is = 1.0 / (var + GROUP_NORM_EPS).sqrt();
        inv_std.push(is);
        for r in rows {
            for t in 0..len {
                let h = (x.row(r)[t] - mean) * is;
                xhat.row_mut(r)[t] = h;
                y.row_mut(r)[t] = gamma[r] * h + beta[r];
            }
        }
    }
    (
        y,
        GroupNormCache {
            normalized: xhat,
            inv_std,
            groups,
        },
    )
}

pub(crate) fn group_norm_backward(
    p: &ParamSet,
    ids: &[ParamId],
    cache: &GroupNormCache,
    gy: &Tensor,
    grads: &mut [Tensor],
) -> Tensor {
    let xhat = &cache.normalized;
    let (c, len) = (xhat.rows(), xhat.cols());
    let per = c / cache.groups;
    let gamma = p.value(ids[0]).data();
    for r in 0..c {
        let (gg, gb) = gy
            .row(r)
            .iter()
            .zip(xhat.row(r))
            .fold((0.0, 0.0), |(a, b), (g, h)| (a + g * h, b + g));
        grads[ids[0].0].data_mut()[r] += gg;
        grads[ids[1].0].data_mut()[r] += gb;
    }
    let mut gx = Tensor::zeros(xhat.shape());
    let n = (per * len) as f64;
    for g in 0..cache.groups {
        let rows = g * per..(g + 1) * per;
        let mut sum_gh = 0.0;
        let mut sum_gh_h = 0.0;
        for r in rows.clone() {
            for (gyv, h) in gy.row(r).iter().zip(xhat.row(r)) {
                let gh = gyv * gamma[r];
                sum_gh += gh;
                sum_gh_h += gh * h;
            }
        }
        let is = cache.inv_std[g];
        for r in rows {
            for t in 0..len {
                let gh = gy.row(r)[t] * gamma[r];
                let h = xhat.row(r)[t];
                gx.row_mut(r)[t] = is / n * (n * gh - sum_gh - h * sum_gh_h);
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tap_ranges_stay_in_bounds() {
        for kernel in 1..6 {
            for d in 1..5 {
                for len in 1..12 {
                    for k in 0..kernel {
                        let (off, lo, hi) = tap_range(k, d, kernel, len);
                        for t in lo..hi {
                            let s = t as isize + off;
                            assert!(s >= 0 && (s as usize) < len);
                        }
                        // Every in-range source is covered.
                        let covered = (0..len)
                            .filter(|&t| {
                                let s = t as isize + off;
                                s >= 0 && (s as usize) < len
                            })
                            .count();
                        assert_eq!(covered, hi - lo);
                    }
                }
            }
        }
    }
}
