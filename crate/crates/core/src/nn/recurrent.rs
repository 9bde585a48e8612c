//! GRU and LSTM layers with backpropagation through time.
//!
//! GRU convention (gate rows stacked as `[z; r; candidate]`):
//!
//! ```text
//! z  = σ(W_z x + U_z h + b_z)
//! r  = σ(W_r x + U_r h + b_r)
//! h~ = tanh(W_h x + U_h (r ⊙ h) + b_h)
//! h' = (1 - z) ⊙ h + z ⊙ h~
//! ```
//!
//! LSTM rows are stacked as `[i; f; g; o]` with `c' = f ⊙ c + i ⊙ g` and
//! `h' = o ⊙ tanh(c')`. Initial states are zero.

use super::functional::sigmoid;
use super::params::{ParamId, ParamSet};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// Time-major copy of a `[features, time]` tensor.
fn time_major(x: &Tensor) -> Vec<f64> {
    let (f, t) = (x.rows(), x.cols());
    let mut out = vec![0.0; f * t];
    for i in 0..f {
        for (s, v) in x.row(i).iter().enumerate() {
            out[s * f + i] = *v;
        }
    }
    out
}

/// `W x_t + b` for every step, `[T, gates]` time-major.
fn input_projection(w: &Tensor, b: &Tensor, xs: &[f64], steps: usize) -> Vec<f64> {
    let (rows, inp) = (w.shape()[0], w.shape()[1]);
    let mut out = vec![0.0; steps * rows];
    for t in 0..steps {
        let xt = &xs[t * inp..(t + 1) * inp];
        let ot = &mut out[t * rows..(t + 1) * rows];
        for (g, o) in ot.iter_mut().enumerate() {
            *o = b.data()[g] + dot(&w.data()[g * inp..(g + 1) * inp], xt);
        }
    }
    out
}

/// Adds `Σ_t ga_t x_tᵀ` to the input weights, `Σ_t ga_t` to the bias and
/// returns `Wᵀ ga_t` as a `[features, time]` tensor.
fn input_backward(
    w: &Tensor,
    ga: &[f64],
    xs: &[f64],
    steps: usize,
    gw: &mut Tensor,
    gb: &mut Tensor,
) -> Tensor {
    let (rows, inp) = (w.shape()[0], w.shape()[1]);
    let mut gx = Tensor::zeros(&[inp, steps]);
    let mut gxt = vec![0.0; inp];
    for t in 0..steps {
        let gat = &ga[t * rows..(t + 1) * rows];
        let xt = &xs[t * inp..(t + 1) * inp];
        gxt.fill(0.0);
        for (g, &a) in gat.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            gb.data_mut()[g] += a;
            axpy(a, xt, &mut gw.data_mut()[g * inp..(g + 1) * inp]);
            axpy(a, &w.data()[g * inp..(g + 1) * inp], &mut gxt);
        }
        for (i, v) in gxt.iter().enumerate() {
            gx.data_mut()[i * steps + t] = *v;
        }
    }
    gx
}

/// Mutable access to two distinct gradient buffers, `a < b`.
fn pair_mut(grads: &mut [Tensor], a: usize, b: usize) -> (&mut Tensor, &mut Tensor) {
    let (lo, hi) = grads.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

fn check_input(x: &Tensor, w: &Tensor) -> Result<(usize, usize)> {
    let inp = w.shape()[1];
    if x.rank() != 2 || x.rows() != inp || x.cols() == 0 {
        return Err(shape_err(format!(
            "recurrent layer expects [{inp}, T>0] input, got {:?}",
            x.shape()
        )));
    }
    Ok((inp, x.cols()))
}

/// Output of a recurrent layer from its hidden-state history.
fn emit(hs: &[f64], hidden: usize, steps: usize, return_sequences: bool) -> Tensor {
    if return_sequences {
        let mut y = Tensor::zeros(&[hidden, steps]);
        for t in 0..steps {
            for g in 0..hidden {
                y.data_mut()[g * steps + t] = hs[(t + 1) * hidden + g];
            }
        }
        y
    } else {
        Tensor::vector(hs[steps * hidden..(steps + 1) * hidden].to_vec())
    }
}

/// Upstream gradient for the hidden output at step `t`.
fn upstream_at(gy: &Tensor, hidden: usize, steps: usize, t: usize, out: &mut [f64]) {
    if gy.rank() == 2 {
        for g in 0..hidden {
            out[g] = gy.data()[g * steps + t];
        }
    } else if t + 1 == steps {
        out.copy_from_slice(gy.data());
    } else {
        out.fill(0.0);
    }
}

fn check_upstream(gy: &Tensor, hidden: usize, steps: usize, seq: bool) -> Result<()> {
    let ok = if seq {
        gy.shape() == [hidden, steps]
    } else {
        gy.shape() == [hidden]
    };
    if ok {
        Ok(())
    } else {
        Err(shape_err(format!(
            "upstream gradient {:?} does not match recurrent output",
            gy.shape()
        )))
    }
}

#[derive(Debug, Clone)]
pub struct GruCache {
    xs: Vec<f64>,
    hs: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    cand: Vec<f64>,
    rh: Vec<f64>,
    steps: usize,
    hidden: usize,
    return_sequences: bool,
}

/// One GRU step on explicit weights. Returns `h_t`.
pub fn gru_cell(
    x: &[f64],
    h_prev: &[f64],
    w_ih: &Tensor,
    w_hh: &Tensor,
    bias: &Tensor,
) -> Result<Vec<f64>> {
    let hidden = h_prev.len();
    if w_ih.shape() != [3 * hidden, x.len()]
        || w_hh.shape() != [3 * hidden, hidden]
        || bias.shape() != [3 * hidden]
    {
        return Err(shape_err("gru_cell weight shapes do not match x/h"));
    }
    let mut p = ParamSet::new();
    let ids = [
        p.add("w_ih", w_ih.clone())?,
        p.add("w_hh", w_hh.clone())?,
        p.add("bias", bias.clone())?,
    ];
    let xt = Tensor::from_vec(&[x.len(), 1], x.to_vec())?;
    let (_, c) = gru_forward_from(&p, &ids, hidden, false, &xt, h_prev)?;
    Ok(c.hs[hidden..].to_vec())
}

pub(crate) fn gru_forward(
    p: &ParamSet,
    ids: &[ParamId],
    hidden: usize,
    return_sequences: bool,
    x: &Tensor,
) -> Result<(Tensor, GruCache)> {
    gru_forward_from(p, ids, hidden, return_sequences, x, &vec![0.0; hidden])
}

fn gru_forward_from(
    p: &ParamSet,
    ids: &[ParamId],
    hidden: usize,
    return_sequences: bool,
    x: &Tensor,
    h0: &[f64],
) -> Result<(Tensor, GruCache)> {
    let (w, u, b) = (p.value(ids[0]), p.value(ids[1]), p.value(ids[2]));
    let (_, steps) = check_input(x, w)?;
    let hsz = hidden;
    let xs = time_major(x);
    let wx = input_projection(w, b, &xs, steps);
    let ud = u.data();

    let mut hs = vec![0.0; (steps + 1) * hsz];
    hs[..hsz].copy_from_slice(h0);
    let mut z = vec![0.0; steps * hsz];
    let mut r = vec![0.0; steps * hsz];
    let mut cand = vec![0.0; steps * hsz];
    let mut rh = vec![0.0; steps * hsz];

    for t in 0..steps {
        let (past, future) = hs.split_at_mut((t + 1) * hsz);
        let h = &past[t * hsz..];
        let hn = &mut future[..hsz];
        let wxt = &wx[t * 3 * hsz..(t + 1) * 3 * hsz];
        let zt = &mut z[t * hsz..(t + 1) * hsz];
        let rt = &mut r[t * hsz..(t + 1) * hsz];
        for g in 0..hsz {
            zt[g] = sigmoid(wxt[g] + dot(&ud[g * hsz..(g + 1) * hsz], h));
            let rr = hsz + g;
            rt[g] = sigmoid(wxt[rr] + dot(&ud[rr * hsz..(rr + 1) * hsz], h));
        }
        let rht = &mut rh[t * hsz..(t + 1) * hsz];
        for g in 0..hsz {
            rht[g] = rt[g] * h[g];
        }
        let ct = &mut cand[t * hsz..(t + 1) * hsz];
        for g in 0..hsz {
            let row = 2 * hsz + g;
            ct[g] = (wxt[row] + dot(&ud[row * hsz..(row + 1) * hsz], rht)).tanh();
            hn[g] = (1.0 - zt[g]) * h[g] + zt[g] * ct[g];
        }
    }

    let y = emit(&hs, hsz, steps, return_sequences);
    Ok((
        y,
        GruCache {
            xs,
            hs,
            z,
            r,
            cand,
            rh,
            steps,
            hidden: hsz,
            return_sequences,
        },
    ))
}

pub(crate) fn gru_backward(
    p: &ParamSet,
    ids: &[ParamId],
    c: &GruCache,
    gy: &Tensor,
    grads: &mut [Tensor],
) -> Result<Tensor> {
    let (hsz, steps) = (c.hidden, c.steps);
    check_upstream(gy, hsz, steps, c.return_sequences)?;
    let ud = p.value(ids[1]).data();
    let mut ga = vec![0.0; steps * 3 * hsz];
    let mut gh_next = vec![0.0; hsz];
    let mut gh = vec![0.0; hsz];
    let mut g_rh = vec![0.0; hsz];
    let mut gh_prev = vec![0.0; hsz];

    {
        let gu = grads[ids[1].0].data_mut();
        for t in (0..steps).rev() {
            upstream_at(gy, hsz, steps, t, &mut gh);
            for (a, b) in gh.iter_mut().zip(&gh_next) {
                *a += b;
            }
            let h = &c.hs[t * hsz..(t + 1) * hsz];
            let zt = &c.z[t * hsz..(t + 1) * hsz];
            let rt = &c.r[t * hsz..(t + 1) * hsz];
            let ct = &c.cand[t * hsz..(t + 1) * hsz];
            let rht = &c.rh[t * hsz..(t + 1) * hsz];
            let gat = &mut ga[t * 3 * hsz..(t + 1) * 3 * hsz];

            for g in 0..hsz {
                let gz = gh[g] * (ct[g] - h[g]);
                let gc = gh[g] * zt[g];
                gat[g] = gz * zt[g] * (1.0 - zt[g]);
                gat[2 * hsz + g] = gc * (1.0 - ct[g] * ct[g]);
                gh_prev[g] = gh[g] * (1.0 - zt[g]);
            }
            g_rh.fill(0.0);
            for g in 0..hsz {
                let a = gat[2 * hsz + g];
                let row = 2 * hsz + g;
                axpy(a, &ud[row * hsz..(row + 1) * hsz], &mut g_rh);
                axpy(a, rht, &mut gu[row * hsz..(row + 1) * hsz]);
            }
            for j in 0..hsz {
                gat[hsz + j] = g_rh[j] * h[j] * rt[j] * (1.0 - rt[j]);
                gh_prev[j] += g_rh[j] * rt[j];
            }
            for row in 0..2 * hsz {
                let a = gat[row];
                axpy(a, &ud[row * hsz..(row + 1) * hsz], &mut gh_prev);
                axpy(a, h, &mut gu[row * hsz..(row + 1) * hsz]);
            }
            std::mem::swap(&mut gh_next, &mut gh_prev);
        }
    }

    let (gw, gb) = pair_mut(grads, ids[0].0, ids[2].0);
    Ok(input_backward(p.value(ids[0]), &ga, &c.xs, steps, gw, gb))
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    xs: Vec<f64>,
    hs: Vec<f64>,
    cs: Vec<f64>,
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
    steps: usize,
    hidden: usize,
    return_sequences: bool,
}

/// One LSTM step on explicit weights. Returns `(h_t, c_t)`.
pub fn lstm_cell(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    w_ih: &Tensor,
    w_hh: &Tensor,
    bias: &Tensor,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let hidden = h_prev.len();
    if c_prev.len() != hidden
        || w_ih.shape() != [4 * hidden, x.len()]
        || w_hh.shape() != [4 * hidden, hidden]
        || bias.shape() != [4 * hidden]
    {
        return Err(shape_err("lstm_cell weight shapes do not match x/h/c"));
    }
    let mut p = ParamSet::new();
    let ids = [
        p.add("w_ih", w_ih.clone())?,
        p.add("w_hh", w_hh.clone())?,
        p.add("bias", bias.clone())?,
    ];
    let xt = Tensor::from_vec(&[x.len(), 1], x.to_vec())?;
    let (_, c) = lstm_forward_from(&p, &ids, hidden, false, &xt, h_prev, c_prev)?;
    Ok((c.hs[hidden..].to_vec(), c.cs[hidden..].to_vec()))
}

pub(crate) fn lstm_forward(
    p: &ParamSet,
    ids: &[ParamId],
    hidden: usize,
    return_sequences: bool,
    x: &Tensor,
) -> Result<(Tensor, LstmCache)> {
    let zeros = vec![0.0; hidden];
    lstm_forward_from(p, ids, hidden, return_sequences, x, &zeros, &zeros)
}

fn lstm_forward_from(
    p: &ParamSet,
    ids: &[ParamId],
    hidden: usize,
    return_sequences: bool,
    x: &Tensor,
    h0: &[f64],
    c0: &[f64],
) -> Result<(Tensor, LstmCache)> {
    let (w, u, b) = (p.value(ids[0]), p.value(ids[1]), p.value(ids[2]));
    let (_, steps) = check_input(x, w)?;
    let hsz = hidden;
    let xs = time_major(x);
    let mut gates = input_projection(w, b, &xs, steps);
    let ud = u.data();

    let mut hs = vec![0.0; (steps + 1) * hsz];
    let mut cs = vec![0.0; (steps + 1) * hsz];
    hs[..hsz].copy_from_slice(h0);
    cs[..hsz].copy_from_slice(c0);
    let mut tanh_c = vec![0.0; steps * hsz];

    for t in 0..steps {
        let gt = &mut gates[t * 4 * hsz..(t + 1) * 4 * hsz];
        {
            let h = &hs[t * hsz..(t + 1) * hsz];
            for (row, a) in gt.iter_mut().enumerate() {
                let pre = *a + dot(&ud[row * hsz..(row + 1) * hsz], h);
                *a = if (2 * hsz..3 * hsz).contains(&row) {
                    pre.tanh()
                } else {
                    sigmoid(pre)
                };
            }
        }
        for g in 0..hsz {
            let (i, f, cg, o) = (gt[g], gt[hsz + g], gt[2 * hsz + g], gt[3 * hsz + g]);
            let cn = f * cs[t * hsz + g] + i * cg;
            let tc = cn.tanh();
            cs[(t + 1) * hsz + g] = cn;
            tanh_c[t * hsz + g] = tc;
            hs[(t + 1) * hsz + g] = o * tc;
        }
    }

    let y = emit(&hs, hsz, steps, return_sequences);
    Ok((
        y,
        LstmCache {
            xs,
            hs,
            cs,
            gates,
            tanh_c,
            steps,
            hidden: hsz,
            return_sequences,
        },
    ))
}

pub(crate) fn lstm_backward(
    p: &ParamSet,
    ids: &[ParamId],
    c: &LstmCache,
    gy: &Tensor,
    grads: &mut [Tensor],
) -> Result<Tensor> {
    let (hsz, steps) = (c.hidden, c.steps);
    check_upstream(gy, hsz, steps, c.return_sequences)?;
    let ud = p.value(ids[1]).data();
    let mut ga = vec![0.0; steps * 4 * hsz];
    let mut gh = vec![0.0; hsz];
    let mut gh_next = vec![0.0; hsz];
    let mut gc_next = vec![0.0; hsz];

    {
        let gu = grads[ids[1].0].data_mut();
        for t in (0..steps).rev() {
            upstream_at(gy, hsz, steps, t, &mut gh);
            for (a, b) in gh.iter_mut().zip(&gh_next) {
                *a += b;
            }
            let gt = &c.gates[t * 4 * hsz..(t + 1) * 4 * hsz];
            let c_prev = &c.cs[t * hsz..(t + 1) * hsz];
            let h_prev = &c.hs[t * hsz..(t + 1) * hsz];
            let tc = &c.tanh_c[t * hsz..(t + 1) * hsz];
            let gat = &mut ga[t * 4 * hsz..(t + 1) * 4 * hsz];
            for g in 0..hsz {
                let (i, f, cg, o) = (gt[g], gt[hsz + g], gt[2 * hsz + g], gt[3 * hsz + g]);
                let gc = gc_next[g] + gh[g] * o * (1.0 - tc[g] * tc[g]);
                gat[g] = gc * cg * i * (1.0 - i);
                gat[hsz + g] = gc * c_prev[g] * f * (1.0 - f);
                gat[2 * hsz + g] = gc * i * (1.0 - cg * cg);
                gat[3 * hsz + g] = gh[g] * tc[g] * o * (1.0 - o);
                gc_next[g] = gc * f;
            }
            gh_next.fill(0.0);
            for row in 0..4 * hsz {
                let a = gat[row];
                if a == 0.0 {
                    continue;
                }
                axpy(a, &ud[row * hsz..(row + 1) * hsz], &mut gh_next);
                axpy(a, h_prev, &mut gu[row * hsz..(row + 1) * hsz]);
            }
        }
    }

    let (gw, gb) = pair_mut(grads, ids[0].0, ids[2].0);
    Ok(input_backward(p.value(ids[0]), &ga, &c.xs, steps, gw, gb))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeros(r: usize, c: usize) -> Tensor {
        Tensor::zeros(&[r, c])
    }

    #[test]
    fn gru_zero_weights_zero_state() {
        let h = gru_cell(
            &[1.0, -2.0],
            &[0.0; 3],
            &zeros(9, 2),
            &zeros(9, 3),
            &Tensor::zeros(&[9]),
        )
        .unwrap();
        assert_eq!(h, vec![0.0; 3]);
    }

    #[test]
    fn gru_zero_weights_halves_state() {
        let v = [0.4, -0.8, 0.2];
        let h = gru_cell(
            &[1.0, 5.0],
            &v,
            &zeros(9, 2),
            &zeros(9, 3),
            &Tensor::zeros(&[9]),
        )
        .unwrap();
        for (a, b) in h.iter().zip(&v) {
            assert!((a - 0.5 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn gru_saturated_update_gate_takes_candidate() {
        // b_z = 100 → z ≈ 1, so h_t ≈ h~ = tanh(b_h) with zero weights.
        let mut b = Tensor::zeros(&[6]);
        b.data_mut()[..2].fill(100.0);
        b.data_mut()[4] = 0.3;
        b.data_mut()[5] = -0.7;
        let h = gru_cell(&[0.5], &[0.9, -0.9], &zeros(6, 1), &zeros(6, 2), &b).unwrap();
        assert!((h[0] - 0.3f64.tanh()).abs() < 1e-12);
        assert!((h[1] - (-0.7f64).tanh()).abs() < 1e-12);
    }

    #[test]
    fn lstm_zero_weights() {
        let (h, c) = lstm_cell(
            &[1.0],
            &[0.0; 2],
            &[0.0; 2],
            &zeros(8, 1),
            &zeros(8, 2),
            &Tensor::zeros(&[8]),
        )
        .unwrap();
        assert_eq!(h, vec![0.0; 2]);
        assert_eq!(c, vec![0.0; 2]);

        let v = [1.5, -0.6];
        let (h, c) = lstm_cell(
            &[1.0],
            &[0.3, 0.1],
            &v,
            &zeros(8, 1),
            &zeros(8, 2),
            &Tensor::zeros(&[8]),
        )
        .unwrap();
        for g in 0..2 {
            assert!((c[g] - 0.5 * v[g]).abs() < 1e-15);
            assert!((h[g] - 0.5 * (0.5 * v[g]).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn lstm_saturated_gates_keep_cell() {
        let mut b = Tensor::zeros(&[8]);
        b.data_mut()[..2].fill(-100.0); // input gate closed
        b.data_mut()[2..4].fill(100.0); // forget gate open
        let mut w = zeros(8, 1);
        w.data_mut().fill(0.7);
        let c_prev = [0.8, -1.2];
        let (_, c) = lstm_cell(&[2.0], &[0.1, 0.2], &c_prev, &w, &zeros(8, 2), &b).unwrap();
        for g in 0..2 {
            assert!((c[g] - c_prev[g]).abs() < 1e-12);
        }
    }

    #[test]
    fn cell_shape_errors() {
        assert!(gru_cell(
            &[1.0],
            &[0.0; 2],
            &zeros(6, 2),
            &zeros(6, 2),
            &Tensor::zeros(&[6])
        )
        .is_err());
        assert!(lstm_cell(
            &[1.0],
            &[0.0; 2],
            &[0.0; 3],
            &zeros(8, 1),
            &zeros(8, 2),
            &Tensor::zeros(&[8])
        )
        .is_err());
    }
}
