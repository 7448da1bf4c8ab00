//! Forward and backward kernels for the primitives recorded on the tape.
//!
//! Layouts: sequences are `[time, channels]`, conv kernels are
//! `[out_ch, width, in_ch]`, dense weights are `[d_out, d_in]`, LSTM weights
//! stack the gates in `i, f, g, o` order along the first axis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub fn conv1d_len(time: usize, width: usize) -> Result<usize> {
    if width == 0 || time < width {
        return Err(Error::Shape(format!(
            "conv1d: input length {time} shorter than kernel width {width}"
        )));
    }
    Ok(time - width + 1)
}

pub fn maxpool1d_len(time: usize, pool: usize) -> Result<usize> {
    if pool == 0 || time < pool {
        return Err(Error::Shape(format!(
            "maxpool1d: input length {time} shorter than pool {pool}"
        )));
    }
    Ok(time / pool)
}

fn check_conv(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
    let (time, in_ch) = input.dims2()?;
    let (out_ch, width, k_in) = match kernels.shape()[..] {
        [o, w, c] => (o, w, c),
        _ => return Err(Error::Shape(format!("conv1d kernels must be rank 3, got {:?}", kernels.shape()))),
    };
    if k_in != in_ch {
        return Err(Error::Shape(format!(
            "conv1d: kernel expects {k_in} input channels, input has {in_ch}"
        )));
    }
    if bias.shape() != [out_ch] {
        return Err(Error::Shape(format!("conv1d bias must be [{out_ch}], got {:?}", bias.shape())));
    }
    let out_len = conv1d_len(time, width)?;
    Ok((time, in_ch, out_ch, width, out_len))
}

/// Valid (unpadded), stride-1 temporal convolution.
pub fn conv1d(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (_, in_ch, out_ch, width, out_len) = check_conv(input, kernels, bias)?;
    let x = input.data();
    let k = kernels.data();
    let mut out = Vec::with_capacity(out_len * out_ch);
    for _ in 0..out_len {
        out.extend_from_slice(bias.data());
    }
    for t in 0..out_len {
        let o_row = &mut out[t * out_ch..(t + 1) * out_ch];
        for w in 0..width {
            let x_row = &x[(t + w) * in_ch..(t + w + 1) * in_ch];
            for (c, &xv) in x_row.iter().enumerate() {
                // one-hot and zero-padded inputs are mostly zeros
                if xv == 0.0 {
                    continue;
                }
                for (o, acc) in o_row.iter_mut().enumerate() {
                    *acc += xv * k[(o * width + w) * in_ch + c];
                }
            }
        }
    }
    Tensor::new(vec![out_len, out_ch], out)
}

pub struct Conv1dGrads {
    pub input: Option<Tensor>,
    pub kernels: Tensor,
    pub bias: Tensor,
}

pub fn conv1d_backward(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    grad_out: &Tensor,
    want_input: bool,
) -> Result<Conv1dGrads> {
    let (time, in_ch, out_ch, width, out_len) = check_conv(input, kernels, bias)?;
    let x = input.data();
    let k = kernels.data();
    let g = grad_out.data();
    let mut dk = vec![0.0; k.len()];
    let mut db = vec![0.0; out_ch];
    let mut dx = want_input.then(|| vec![0.0; time * in_ch]);
    for t in 0..out_len {
        let g_row = &g[t * out_ch..(t + 1) * out_ch];
        for (o, &gv) in g_row.iter().enumerate() {
            db[o] += gv;
        }
        for w in 0..width {
            let base = (t + w) * in_ch;
            for c in 0..in_ch {
                let xv = x[base + c];
                if xv != 0.0 {
                    for (o, &gv) in g_row.iter().enumerate() {
                        dk[(o * width + w) * in_ch + c] += gv * xv;
                    }
                }
                if let Some(dx) = dx.as_mut() {
                    let mut acc = 0.0;
                    for (o, &gv) in g_row.iter().enumerate() {
                        acc += gv * k[(o * width + w) * in_ch + c];
                    }
                    dx[base + c] += acc;
                }
            }
        }
    }
    Ok(Conv1dGrads {
        input: dx.map(|d| Tensor::new(vec![time, in_ch], d)).transpose()?,
        kernels: Tensor::new(kernels.shape().to_vec(), dk)?,
        bias: Tensor::vector(db),
    })
}

/// Non-overlapping max over windows of `pool` steps; a trailing partial
/// window is dropped. Returns the output and the flat input index chosen for
/// each output cell (first maximum on ties).
pub fn maxpool1d(input: &Tensor, pool: usize) -> Result<(Tensor, Vec<usize>)> {
    let (time, ch) = input.dims2()?;
    let out_len = maxpool1d_len(time, pool)?;
    let x = input.data();
    let mut out = Vec::with_capacity(out_len * ch);
    let mut argmax = Vec::with_capacity(out_len * ch);
    for t in 0..out_len {
        for c in 0..ch {
            let mut best = (t * pool) * ch + c;
            for p in 1..pool {
                let idx = (t * pool + p) * ch + c;
                if x[idx] > x[best] {
                    best = idx;
                }
            }
            out.push(x[best]);
            argmax.push(best);
        }
    }
    Ok((Tensor::new(vec![out_len, ch], out)?, argmax))
}

pub fn maxpool1d_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        d[i] += g;
    }
    dx
}

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

fn check_dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    let d_in = input.dims1()?;
    let (d_out, w_in) = weights.dims2()?;
    if w_in != d_in || bias.shape() != [d_out] {
        return Err(Error::Shape(format!(
            "dense: input [{d_in}], weights {:?}, bias {:?}",
            weights.shape(),
            bias.shape()
        )));
    }
    Ok((d_in, d_out))
}

pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (d_in, _) = check_dense(input, weights, bias)?;
    let x = input.data();
    let out = bias
        .data()
        .iter()
        .zip(weights.data().chunks_exact(d_in))
        .map(|(&b, w)| b + dot(w, x))
        .collect();
    Ok(Tensor::vector(out))
}

pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn dense_backward(input: &Tensor, weights: &Tensor, bias: &Tensor, grad_out: &Tensor) -> Result<DenseGrads> {
    let (d_in, _) = check_dense(input, weights, bias)?;
    let x = input.data();
    let g = grad_out.data();
    let mut dw = Vec::with_capacity(weights.len());
    let mut dx = vec![0.0; d_in];
    for (&gv, w) in g.iter().zip(weights.data().chunks_exact(d_in)) {
        dw.extend(x.iter().map(|&xv| gv * xv));
        for (d, &wv) in dx.iter_mut().zip(w) {
            *d += gv * wv;
        }
    }
    Ok(DenseGrads {
        input: Tensor::vector(dx),
        weights: Tensor::new(weights.shape().to_vec(), dw)?,
        bias: Tensor::vector(g.to_vec()),
    })
}

/// Inverted-dropout multipliers: 0 for dropped units, `1 / (1 - rate)` for
/// kept ones. Drawn from a ChaCha stream seeded by `seed`.
pub fn dropout_mask(len: usize, rate: f64, seed: u64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    if rate == 0.0 {
        return Ok(vec![1.0; len]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (1.0 - rate);
    Ok((0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { scale })
        .collect())
}

/// Identity in eval mode; inverted dropout in train mode.
pub fn dropout(x: &Tensor, rate: f64, seed: u64, train: bool) -> Result<Tensor> {
    if !train {
        dropout_mask(0, rate, seed)?;
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.len(), rate, seed)?;
    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Numerically stable softmax and `-ln p[target]`.
pub fn softmax_cross_entropy(logits: &Tensor, target: usize) -> Result<(f64, Tensor)> {
    let k = logits.dims1()?;
    if target >= k {
        return Err(Error::Index { index: target, len: k });
    }
    let z = logits.data();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|&v| (v - max).exp()).sum();
    let log_sum = max + sum.ln();
    let probs: Vec<f64> = z.iter().map(|&v| (v - log_sum).exp()).collect();
    let loss = (log_sum - z[target]).max(0.0);
    Ok((loss, Tensor::vector(probs)))
}

pub fn softmax_cross_entropy_backward(probs: &Tensor, target: usize, grad_loss: f64) -> Tensor {
    let mut d: Vec<f64> = probs.data().iter().map(|&p| p * grad_loss).collect();
    d[target] -= grad_loss;
    Tensor::vector(d)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Saved activations of one LSTM pass, indexed by processing step.
#[derive(Debug, Clone)]
pub struct LstmCache {
    /// Activated gates `[i, f, g, o]` per step, `4 * hidden` each.
    gates: Vec<Vec<f64>>,
    cells: Vec<Vec<f64>>,
    hidden: usize,
}

fn check_lstm(input: &Tensor, w_ih: &Tensor, w_hh: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize)> {
    let (time, in_dim) = input.dims2()?;
    let (rows, cols) = w_ih.dims2()?;
    if rows % 4 != 0 || cols != in_dim {
        return Err(Error::Shape(format!(
            "lstm: w_ih {:?} does not fit input dim {in_dim}",
            w_ih.shape()
        )));
    }
    let hidden = rows / 4;
    if w_hh.shape() != [4 * hidden, hidden] || bias.shape() != [4 * hidden] {
        return Err(Error::Shape(format!(
            "lstm: w_hh {:?} / bias {:?} do not match hidden size {hidden}",
            w_hh.shape(),
            bias.shape()
        )));
    }
    Ok((time, in_dim, hidden))
}

fn step_order(time: usize, reverse: bool) -> impl Iterator<Item = usize> {
    let mut order: Vec<usize> = (0..time).collect();
    if reverse {
        order.reverse();
    }
    order.into_iter()
}

/// Runs an LSTM over the sequence from a zero state. With `reverse`, steps
/// run back to front; the output stays aligned with input positions either
/// way, so a forward pass ends at row `time - 1` and a reverse pass at row 0.
pub fn lstm_forward(
    input: &Tensor,
    w_ih: &Tensor,
    w_hh: &Tensor,
    bias: &Tensor,
    reverse: bool,
) -> Result<(Tensor, LstmCache)> {
    let (time, in_dim, hidden) = check_lstm(input, w_ih, w_hh, bias)?;
    let (wi, wh, b) = (w_ih.data(), w_hh.data(), bias.data());
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    let mut out = vec![0.0; time * hidden];
    let mut cache = LstmCache {
        gates: Vec::with_capacity(time),
        cells: Vec::with_capacity(time),
        hidden,
    };
    for t in step_order(time, reverse) {
        let x = input.row(t);
        let mut z: Vec<f64> = (0..4 * hidden)
            .map(|r| b[r] + dot(&wi[r * in_dim..(r + 1) * in_dim], x) + dot(&wh[r * hidden..(r + 1) * hidden], &h))
            .collect();
        for j in 0..hidden {
            z[j] = sigmoid(z[j]);
            z[hidden + j] = sigmoid(z[hidden + j]);
            z[2 * hidden + j] = z[2 * hidden + j].tanh();
            z[3 * hidden + j] = sigmoid(z[3 * hidden + j]);
            c[j] = z[hidden + j] * c[j] + z[j] * z[2 * hidden + j];
            h[j] = z[3 * hidden + j] * c[j].tanh();
        }
        out[t * hidden..(t + 1) * hidden].copy_from_slice(&h);
        cache.gates.push(z);
        cache.cells.push(c.clone());
    }
    Ok((Tensor::new(vec![time, hidden], out)?, cache))
}

pub struct LstmGrads {
    pub input: Option<Tensor>,
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
}

/// Backpropagation through time for [`lstm_forward`].
#[allow(clippy::too_many_arguments)]
pub fn lstm_backward(
    input: &Tensor,
    w_ih: &Tensor,
    w_hh: &Tensor,
    bias: &Tensor,
    reverse: bool,
    output: &Tensor,
    cache: &LstmCache,
    grad_out: &Tensor,
    want_input: bool,
) -> Result<LstmGrads> {
    let (time, in_dim, hidden) = check_lstm(input, w_ih, w_hh, bias)?;
    debug_assert_eq!(cache.hidden, hidden);
    let (wi, wh) = (w_ih.data(), w_hh.data());
    let mut dwi = vec![0.0; wi.len()];
    let mut dwh = vec![0.0; wh.len()];
    let mut db = vec![0.0; 4 * hidden];
    let mut dx = want_input.then(|| vec![0.0; time * in_dim]);
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    let zeros = vec![0.0; hidden];

    let order: Vec<usize> = step_order(time, reverse).collect();
    let mut dz = vec![0.0; 4 * hidden];
    for s in (0..time).rev() {
        let t = order[s];
        let gates = &cache.gates[s];
        let c = &cache.cells[s];
        let c_prev = if s == 0 { &zeros } else { &cache.cells[s - 1] };
        let h_prev = if s == 0 { &zeros[..] } else { output.row(order[s - 1]) };
        let g_row = grad_out.row(t);
        for j in 0..hidden {
            let (i, f, g, o) = (gates[j], gates[hidden + j], gates[2 * hidden + j], gates[3 * hidden + j]);
            let tc = c[j].tanh();
            let dh = g_row[j] + dh_next[j];
            let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
            dz[j] = dc * g * i * (1.0 - i);
            dz[hidden + j] = dc * c_prev[j] * f * (1.0 - f);
            dz[2 * hidden + j] = dc * i * (1.0 - g * g);
            dz[3 * hidden + j] = dh * tc * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        let x = input.row(t);
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        for (r, &dzr) in dz.iter().enumerate() {
            db[r] += dzr;
            if dzr == 0.0 {
                continue;
            }
            let wi_row = &wi[r * in_dim..(r + 1) * in_dim];
            for (d, &xv) in dwi[r * in_dim..(r + 1) * in_dim].iter_mut().zip(x) {
                *d += dzr * xv;
            }
            let wh_row = &wh[r * hidden..(r + 1) * hidden];
            for (d, &hv) in dwh[r * hidden..(r + 1) * hidden].iter_mut().zip(h_prev) {
                *d += dzr * hv;
            }
            for (d, &w) in dh_next.iter_mut().zip(wh_row) {
                *d += dzr * w;
            }
            if let Some(dx) = dx.as_mut() {
                for (d, &w) in dx[t * in_dim..(t + 1) * in_dim].iter_mut().zip(wi_row) {
                    *d += dzr * w;
                }
            }
        }
    }
    Ok(LstmGrads {
        input: dx.map(|d| Tensor::new(vec![time, in_dim], d)).transpose()?,
        w_ih: Tensor::new(w_ih.shape().to_vec(), dwi)?,
        w_hh: Tensor::new(w_hh.shape().to_vec(), dwh)?,
        bias: Tensor::vector(db),
    })
}
