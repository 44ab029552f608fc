//! One bidirectional LSTM layer, forward and backward.

use super::LstmParams;
use crate::linalg::{gemm, matvec, vecmat_acc, Mat};

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-direction activations, indexed by time position (not processing order).
#[derive(Debug, Clone)]
pub(super) struct DirCache {
    /// Activated gates `[i | f | g | o]`, `len × 4·hidden`.
    gates: Vec<f32>,
    cells: Vec<f32>,
    tanh_cells: Vec<f32>,
    hidden: Vec<f32>,
}

#[derive(Debug, Clone)]
pub(super) struct LayerCache {
    pub input: Vec<f32>,
    pub in_dim: usize,
    dirs: [DirCache; 2],
    /// `[forward | backward]` hidden states, `len × 2·hidden`.
    pub output: Vec<f32>,
    pub mask: Option<Vec<f32>>,
    /// `output` after dropout.
    pub dropped: Vec<f32>,
}

fn order(t_len: usize, reverse: bool) -> impl DoubleEndedIterator<Item = usize> + Clone {
    (0..t_len).map(move |s| if reverse { t_len - 1 - s } else { s })
}

fn direction_forward(p: &LstmParams, input: &[f32], t_len: usize, in_dim: usize, h: usize, reverse: bool) -> DirCache {
    let g4 = 4 * h;
    let mut gates = vec![0.0; t_len * g4];
    for row in gates.chunks_exact_mut(g4) {
        row.copy_from_slice(&p.bias.data);
    }
    gemm(Mat::new(input, t_len, in_dim), Mat::new(&p.w_ih.data, in_dim, g4), &mut gates, 1.0);

    let mut cells = vec![0.0; t_len * h];
    let mut tanh_cells = vec![0.0; t_len * h];
    let mut hidden = vec![0.0; t_len * h];
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    for t in order(t_len, reverse) {
        let g = &mut gates[t * g4..(t + 1) * g4];
        vecmat_acc(&h_prev, &p.w_hh.data, g);
        for j in 0..h {
            let i = sigmoid(g[j]);
            let f = sigmoid(g[h + j]);
            let cand = g[2 * h + j].tanh();
            let o = sigmoid(g[3 * h + j]);
            g[j] = i;
            g[h + j] = f;
            g[2 * h + j] = cand;
            g[3 * h + j] = o;
            let c = f * c_prev[j] + i * cand;
            let tc = c.tanh();
            cells[t * h + j] = c;
            tanh_cells[t * h + j] = tc;
            hidden[t * h + j] = o * tc;
        }
        h_prev.copy_from_slice(&hidden[t * h..(t + 1) * h]);
        c_prev.copy_from_slice(&cells[t * h..(t + 1) * h]);
    }
    DirCache {
        gates,
        cells,
        tanh_cells,
        hidden,
    }
}

pub(super) fn layer_forward(
    fwd: &LstmParams,
    bwd: &LstmParams,
    input: Vec<f32>,
    in_dim: usize,
    h: usize,
    mask: Option<Vec<f32>>,
) -> LayerCache {
    let t_len = input.len() / in_dim;
    let dirs = [
        direction_forward(fwd, &input, t_len, in_dim, h, false),
        direction_forward(bwd, &input, t_len, in_dim, h, true),
    ];
    let mut output = vec![0.0; t_len * 2 * h];
    for t in 0..t_len {
        output[t * 2 * h..t * 2 * h + h].copy_from_slice(&dirs[0].hidden[t * h..(t + 1) * h]);
        output[t * 2 * h + h..(t + 1) * 2 * h].copy_from_slice(&dirs[1].hidden[t * h..(t + 1) * h]);
    }
    let dropped = match &mask {
        Some(m) => output.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => output.clone(),
    };
    LayerCache {
        input,
        in_dim,
        dirs,
        output,
        mask,
        dropped,
    }
}

/// Accumulates this direction's parameter gradients and adds its contribution
/// to `d_input`. `d_hidden` is `len × hidden`.
#[allow(clippy::too_many_arguments)]
fn direction_backward(
    p: &LstmParams,
    grad: &mut LstmParams,
    cache: &DirCache,
    input: &[f32],
    in_dim: usize,
    h: usize,
    reverse: bool,
    d_hidden: &[f32],
    d_input: &mut [f32],
) {
    let t_len = d_hidden.len() / h;
    let g4 = 4 * h;
    let mut dg = vec![0.0; t_len * g4];
    let mut dh_rec = vec![0.0; h];
    let mut dc_rec = vec![0.0; h];
    let steps: Vec<usize> = order(t_len, reverse).collect();
    let zeros = vec![0.0; h];
    for s in (0..t_len).rev() {
        let t = steps[s];
        let c_prev = if s > 0 {
            &cache.cells[steps[s - 1] * h..(steps[s - 1] + 1) * h]
        } else {
            &zeros[..]
        };
        let gates = &cache.gates[t * g4..(t + 1) * g4];
        let row = &mut dg[t * g4..(t + 1) * g4];
        for j in 0..h {
            let (i, f, cand, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            let tc = cache.tanh_cells[t * h + j];
            let dh = d_hidden[t * h + j] + dh_rec[j];
            let d_o = dh * tc;
            let dc = dh * o * (1.0 - tc * tc) + dc_rec[j];
            dc_rec[j] = dc * f;
            row[j] = dc * cand * i * (1.0 - i);
            row[h + j] = dc * c_prev[j] * f * (1.0 - f);
            row[2 * h + j] = dc * i * (1.0 - cand * cand);
            row[3 * h + j] = d_o * o * (1.0 - o);
        }
        matvec(&p.w_hh.data, row, &mut dh_rec);
    }

    // Hidden state that fed each time step's recurrence.
    let mut h_prev = vec![0.0; t_len * h];
    for s in 1..t_len {
        let (t, prev) = (steps[s], steps[s - 1]);
        h_prev[t * h..(t + 1) * h].copy_from_slice(&cache.hidden[prev * h..(prev + 1) * h]);
    }
    gemm(Mat::new(&h_prev, t_len, h).t(), Mat::new(&dg, t_len, g4), &mut grad.w_hh.data, 1.0);
    gemm(Mat::new(input, t_len, in_dim).t(), Mat::new(&dg, t_len, g4), &mut grad.w_ih.data, 1.0);
    for r in dg.chunks_exact(g4) {
        for (b, v) in grad.bias.data.iter_mut().zip(r) {
            *b += v;
        }
    }
    gemm(Mat::new(&dg, t_len, g4), Mat::new(&p.w_ih.data, in_dim, g4).t(), d_input, 1.0);
}

/// Backpropagates the gradient of the layer's post-dropout output and returns
/// the gradient with respect to its input.
pub(super) fn layer_backward(
    fwd: &LstmParams,
    bwd: &LstmParams,
    grad_fwd: &mut LstmParams,
    grad_bwd: &mut LstmParams,
    cache: &LayerCache,
    d_dropped: &[f32],
    h: usize,
) -> Vec<f32> {
    let t_len = cache.output.len() / (2 * h);
    let d_out: Vec<f32> = match &cache.mask {
        Some(m) => d_dropped.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => d_dropped.to_vec(),
    };
    let mut d_fwd = vec![0.0; t_len * h];
    let mut d_bwd = vec![0.0; t_len * h];
    for t in 0..t_len {
        d_fwd[t * h..(t + 1) * h].copy_from_slice(&d_out[t * 2 * h..t * 2 * h + h]);
        d_bwd[t * h..(t + 1) * h].copy_from_slice(&d_out[t * 2 * h + h..(t + 1) * 2 * h]);
    }
    let mut d_input = vec![0.0; t_len * cache.in_dim];
    direction_backward(fwd, grad_fwd, &cache.dirs[0], &cache.input, cache.in_dim, h, false, &d_fwd, &mut d_input);
    direction_backward(bwd, grad_bwd, &cache.dirs[1], &cache.input, cache.in_dim, h, true, &d_bwd, &mut d_input);
    d_input
}
