//! LSTM cells and bidirectional layers expressed on the autodiff graph.
//!
//! Gate layout in the fused weight matrices is [input, forget, cell, output],
//! each block `hidden` wide. Weights live in a [`ParamStore`](crate::params::ParamStore)
//! and are bound into a graph per forward pass.

use crate::graph::{Graph, Var};
use crate::params::{ParamStore, StoreBinding};
use crate::rng::DetRng;
use crate::tensor::Tensor;

/// Graph handles for one LSTM cell: wx is in x 4H, wh is H x 4H, b is 1 x 4H.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    pub wx: Var,
    pub wh: Var,
    pub b: Var,
    pub hidden: usize,
}

/// Register the three tensors of an LSTM cell under `prefix` in a store.
/// The forget-gate bias block starts at one, which speeds up early training.
pub fn init_lstm_params(
    store: &mut ParamStore,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut DetRng,
) {
    let bound = 1.0 / (hidden as f64).sqrt();
    store.insert(
        &format!("{prefix}.wx"),
        Tensor::uniform(input, 4 * hidden, bound, rng),
    );
    store.insert(
        &format!("{prefix}.wh"),
        Tensor::uniform(hidden, 4 * hidden, bound, rng),
    );
    let mut b = Tensor::zeros(1, 4 * hidden);
    for i in hidden..2 * hidden {
        b.set(0, i, 1.0);
    }
    store.insert(&format!("{prefix}.b"), b);
}

/// Look up a cell registered by [`init_lstm_params`] inside a graph binding.
pub fn bind_lstm(binding: &StoreBinding, prefix: &str, hidden: usize) -> LstmWeights {
    LstmWeights {
        wx: binding.var(&format!("{prefix}.wx")),
        wh: binding.var(&format!("{prefix}.wh")),
        b: binding.var(&format!("{prefix}.b")),
        hidden,
    }
}

/// One LSTM step. `x` is B x in, `h_prev`/`c_prev` are B x H.
pub fn lstm_cell(g: &mut Graph, x: Var, h_prev: Var, c_prev: Var, w: &LstmWeights) -> (Var, Var) {
    let xg = g.matmul(x, w.wx);
    let hg = g.matmul(h_prev, w.wh);
    let gates = g.add(xg, hg);
    let gates = g.add_bias(gates, w.b);
    let h = w.hidden;
    let i_g = g.slice_cols(gates, 0, h);
    let f_g = g.slice_cols(gates, h, h);
    let c_g = g.slice_cols(gates, 2 * h, h);
    let o_g = g.slice_cols(gates, 3 * h, h);
    let i_s = g.sigmoid(i_g);
    let f_s = g.sigmoid(f_g);
    let c_t = g.tanh(c_g);
    let o_s = g.sigmoid(o_g);
    let keep = g.mul(f_s, c_prev);
    let write = g.mul(i_s, c_t);
    let c = g.add(keep, write);
    let c_out = g.tanh(c);
    let h_out = g.mul(o_s, c_out);
    (h_out, c)
}

/// Unidirectional scan over a sequence of B x in steps; returns B x H per step.
pub fn lstm_layer(g: &mut Graph, xs: &[Var], w: &LstmWeights) -> Vec<Var> {
    let batch = if xs.is_empty() {
        1
    } else {
        g.value(xs[0]).rows()
    };
    let mut h = g.constant(Tensor::zeros(batch, w.hidden));
    let mut c = g.constant(Tensor::zeros(batch, w.hidden));
    let mut out = Vec::with_capacity(xs.len());
    for &x in xs {
        let (nh, nc) = lstm_cell(g, x, h, c, w);
        h = nh;
        c = nc;
        out.push(h);
    }
    out
}

/// Bidirectional layer: per step, concat of forward and backward hidden
/// states, so the output width is 2H.
pub fn bilstm_layer(g: &mut Graph, xs: &[Var], fwd: &LstmWeights, bwd: &LstmWeights) -> Vec<Var> {
    let f = lstm_layer(g, xs, fwd);
    let rev: Vec<Var> = xs.iter().rev().cloned().collect();
    let mut b = lstm_layer(g, &rev, bwd);
    b.reverse();
    f.iter()
        .zip(&b)
        .map(|(&hf, &hb)| g.concat_cols(&[hf, hb]))
        .collect()
}
