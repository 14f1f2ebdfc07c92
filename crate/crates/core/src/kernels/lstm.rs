//! Single-layer unidirectional LSTM over a whole sequence, with backpropagation through time.
//!
//! Gate rows of the stacked weight matrices are ordered input, forget, cell, output.

use super::activation::sigmoid_scalar;
use crate::error::{shape_err, Result};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    /// `[4H, I]`
    pub w_ih: Tensor,
    /// `[4H, H]`
    pub w_hh: Tensor,
    /// `[4H]`
    pub bias: Tensor,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmParams {
            w_ih: Tensor::zeros(&[4 * hidden, input]),
            w_hh: Tensor::zeros(&[4 * hidden, hidden]),
            bias: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.shape()[1]
    }

    pub fn input(&self) -> usize {
        self.w_ih.shape()[1]
    }
}

/// Activations retained for the backward pass.
#[derive(Clone, Debug)]
pub struct LstmCache {
    /// Activated gates per step, `[F, 4H]`.
    gates: Vec<f64>,
    /// Cell state per step, `[F, H]`.
    cells: Vec<f64>,
    /// `tanh(c_t)`, `[F, H]`.
    tanh_cells: Vec<f64>,
    h0: Vec<f64>,
    c0: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LstmGrads {
    pub d_inputs: Tensor,
    pub d_w_ih: Tensor,
    pub d_w_hh: Tensor,
    pub d_bias: Tensor,
    pub d_h0: Tensor,
    pub d_c0: Tensor,
}

fn check(
    inputs: &Tensor,
    p: &LstmParams,
    h0: &Tensor,
    c0: &Tensor,
) -> Result<(usize, usize, usize)> {
    let hidden = p.hidden();
    let [steps, input] = *inputs.shape() else {
        return shape_err(format!(
            "lstm inputs must be [F, I], got {:?}",
            inputs.shape()
        ));
    };
    if input != p.input() {
        return shape_err(format!(
            "lstm input width {input}, weights expect {}",
            p.input()
        ));
    }
    p.w_ih.expect_shape(&[4 * hidden, input], "lstm w_ih")?;
    p.w_hh.expect_shape(&[4 * hidden, hidden], "lstm w_hh")?;
    p.bias.expect_shape(&[4 * hidden], "lstm bias")?;
    h0.expect_shape(&[hidden], "lstm h0")?;
    c0.expect_shape(&[hidden], "lstm c0")?;
    Ok((steps, input, hidden))
}

/// Runs the recurrence and returns the hidden state at every step, `[F, H]`.
pub fn lstm_sequence(
    inputs: &Tensor,
    p: &LstmParams,
    h0: &Tensor,
    c0: &Tensor,
) -> Result<(Tensor, LstmCache)> {
    let (steps, input, hidden) = check(inputs, p, h0, c0)?;
    let g4 = 4 * hidden;
    let mut z = vec![0.0; steps * g4];
    gemm_nt(steps, input, g4, inputs.data(), p.w_ih.data(), 0.0, &mut z);
    let mut gates = vec![0.0; steps * g4];
    let mut cells = vec![0.0; steps * hidden];
    let mut tanh_cells = vec![0.0; steps * hidden];
    let mut hs = vec![0.0; steps * hidden];
    let mut h_prev = h0.data().to_vec();
    let mut c_prev = c0.data().to_vec();
    for t in 0..steps {
        let zt = &mut z[t * g4..(t + 1) * g4];
        for (a, b) in zt.iter_mut().zip(p.bias.data()) {
            *a += b;
        }
        gemm_nt(1, hidden, g4, &h_prev, p.w_hh.data(), 1.0, zt);
        let gt = &mut gates[t * g4..(t + 1) * g4];
        for j in 0..hidden {
            let i = sigmoid_scalar(zt[j]);
            let f = sigmoid_scalar(zt[hidden + j]);
            let g = zt[2 * hidden + j].tanh();
            let o = sigmoid_scalar(zt[3 * hidden + j]);
            gt[j] = i;
            gt[hidden + j] = f;
            gt[2 * hidden + j] = g;
            gt[3 * hidden + j] = o;
            let c = f * c_prev[j] + i * g;
            let tc = c.tanh();
            cells[t * hidden + j] = c;
            tanh_cells[t * hidden + j] = tc;
            hs[t * hidden + j] = o * tc;
        }
        h_prev.copy_from_slice(&hs[t * hidden..(t + 1) * hidden]);
        c_prev.copy_from_slice(&cells[t * hidden..(t + 1) * hidden]);
    }
    let cache = LstmCache {
        gates,
        cells,
        tanh_cells,
        h0: h0.data().to_vec(),
        c0: c0.data().to_vec(),
    };
    Ok((Tensor::new(vec![steps, hidden], hs)?, cache))
}

/// Backpropagation through time for upstream gradient `d_hidden` (`[F, H]`).
pub fn lstm_sequence_backward(
    inputs: &Tensor,
    p: &LstmParams,
    hidden_states: &Tensor,
    cache: &LstmCache,
    d_hidden: &Tensor,
) -> Result<LstmGrads> {
    let hidden = p.hidden();
    let [steps, input] = *inputs.shape() else {
        return shape_err("lstm inputs must be rank 2");
    };
    d_hidden.expect_shape(&[steps, hidden], "lstm upstream gradient")?;
    hidden_states.expect_shape(&[steps, hidden], "lstm hidden states")?;
    let g4 = 4 * hidden;
    let mut dz = vec![0.0; steps * g4];
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    let mut dh_rec = vec![0.0; hidden];
    for t in (0..steps).rev() {
        let gt = &cache.gates[t * g4..(t + 1) * g4];
        let c_prev = if t == 0 {
            &cache.c0[..]
        } else {
            &cache.cells[(t - 1) * hidden..t * hidden]
        };
        let dzt = &mut dz[t * g4..(t + 1) * g4];
        for j in 0..hidden {
            let (i, f, g, o) = (
                gt[j],
                gt[hidden + j],
                gt[2 * hidden + j],
                gt[3 * hidden + j],
            );
            let tc = cache.tanh_cells[t * hidden + j];
            let dh = d_hidden.data()[t * hidden + j] + dh_next[j];
            let d_o = dh * tc;
            let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
            dzt[j] = dc * g * i * (1.0 - i);
            dzt[hidden + j] = dc * c_prev[j] * f * (1.0 - f);
            dzt[2 * hidden + j] = dc * i * (1.0 - g * g);
            dzt[3 * hidden + j] = d_o * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        gemm_nn(1, g4, hidden, dzt, p.w_hh.data(), 0.0, &mut dh_rec);
        dh_next.copy_from_slice(&dh_rec);
    }
    // previous hidden state for each step: h0 then h_0..h_{F-2}
    let mut h_prev = Vec::with_capacity(steps * hidden);
    h_prev.extend_from_slice(&cache.h0);
    h_prev.extend_from_slice(&hidden_states.data()[..(steps - 1) * hidden]);
    let mut d_w_ih = vec![0.0; g4 * input];
    gemm_tn(g4, steps, input, &dz, inputs.data(), 0.0, &mut d_w_ih);
    let mut d_w_hh = vec![0.0; g4 * hidden];
    gemm_tn(g4, steps, hidden, &dz, &h_prev, 0.0, &mut d_w_hh);
    let mut d_bias = vec![0.0; g4];
    for row in dz.chunks(g4) {
        for (a, b) in d_bias.iter_mut().zip(row) {
            *a += b;
        }
    }
    let mut d_inputs = vec![0.0; steps * input];
    gemm_nn(steps, g4, input, &dz, p.w_ih.data(), 0.0, &mut d_inputs);
    Ok(LstmGrads {
        d_inputs: Tensor::new(vec![steps, input], d_inputs)?,
        d_w_ih: Tensor::new(vec![g4, input], d_w_ih)?,
        d_w_hh: Tensor::new(vec![g4, hidden], d_w_hh)?,
        d_bias: Tensor::vector(d_bias),
        d_h0: Tensor::vector(dh_next),
        d_c0: Tensor::vector(dc_next),
    })
}
