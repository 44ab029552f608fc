//! Finite-difference gradient check.
//!
//! The reference loss below is a direct `f64` transcription of the model
//! written with plain loops. It shares no code with [`crate::network`]
//! beyond reading parameter values and the dropout masks recorded in a
//! training forward pass.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Batch;
use crate::exec::Exec;
use crate::network::{self, ForwardCache, Mode, ModelConfig, NetworkError, Parameters};

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Denominator floor of [`relative_error`], so coordinates whose true
/// gradient is below f32 accumulation noise (about 1e-9 absolute here) are
/// compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-4;
pub const DEFAULT_SAMPLES: usize = 500;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Parameter values by tensor name.
type Values = HashMap<String, Vec<f64>>;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x (rows × inp) · w (inp × out) + b`
fn dense(x: &[f64], w: &[f64], b: &[f64], inp: usize, out: usize) -> Vec<f64> {
    let rows = x.len() / inp;
    let mut y = vec![0.0; rows * out];
    for r in 0..rows {
        for j in 0..out {
            let mut acc = b[j];
            for i in 0..inp {
                acc += x[r * inp + i] * w[i * out + j];
            }
            y[r * out + j] = acc;
        }
    }
    y
}

fn lstm_direction(v: &Values, prefix: &str, x: &[f64], inp: usize, h: usize, reverse: bool) -> Vec<f64> {
    let w_ih = &v[&format!("{prefix}.w_ih")];
    let w_hh = &v[&format!("{prefix}.w_hh")];
    let b = &v[&format!("{prefix}.bias")];
    let t_len = x.len() / inp;
    let mut out = vec![0.0; t_len * h];
    let mut hs = vec![0.0; h];
    let mut cs = vec![0.0; h];
    for step in 0..t_len {
        let t = if reverse { t_len - 1 - step } else { step };
        let mut z = b.clone();
        for (k, zk) in z.iter_mut().enumerate() {
            for i in 0..inp {
                *zk += x[t * inp + i] * w_ih[i * 4 * h + k];
            }
            for i in 0..h {
                *zk += hs[i] * w_hh[i * 4 * h + k];
            }
        }
        for j in 0..h {
            let c = sigmoid(z[h + j]) * cs[j] + sigmoid(z[j]) * z[2 * h + j].tanh();
            cs[j] = c;
            hs[j] = sigmoid(z[3 * h + j]) * c.tanh();
        }
        out[t * h..(t + 1) * h].copy_from_slice(&hs);
    }
    out
}

fn cross_entropy(z: &[f64], gold: usize) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - z[gold]
}

/// Reference loss of `batch` with dropout masks taken from `cache`.
fn reference_loss(config: &ModelConfig, v: &Values, batch: &Batch, cache: &ForwardCache) -> f64 {
    let d = config.embed_dim;
    let h = config.hidden_dim;
    let p = config.proj_dim();
    let emb = &v["embedding"];
    let mut total = 0.0;
    let mut decisions = 0usize;
    for row in 0..batch.size {
        let ids = batch.ids(row);
        let t_len = ids.len();
        let mut x: Vec<f64> = ids.iter().flat_map(|&id| emb[id as usize * d..(id as usize + 1) * d].to_vec()).collect();
        let mut inp = d;
        let mut layer_outputs = Vec::new();
        for layer in 0..network::NUM_LAYERS {
            let f = lstm_direction(v, &format!("lstm.{layer}.fwd"), &x, inp, h, false);
            let b = lstm_direction(v, &format!("lstm.{layer}.bwd"), &x, inp, h, true);
            let mut y = Vec::with_capacity(t_len * 2 * h);
            for t in 0..t_len {
                y.extend_from_slice(&f[t * h..(t + 1) * h]);
                y.extend_from_slice(&b[t * h..(t + 1) * h]);
            }
            if let Some(m) = cache.sequences[row].dropout_mask(layer) {
                for (a, &k) in y.iter_mut().zip(m) {
                    *a *= k as f64;
                }
            }
            layer_outputs.push(y.clone());
            x = y;
            inp = 2 * h;
        }
        if config.residual {
            for (a, b) in x.iter_mut().zip(&layer_outputs[0]) {
                *a += b;
            }
        }
        let z = dense(&x, &v["proj.weight"], &v["proj.bias"], 2 * h, p);
        let heads = ["niqqud", "dagesh", "sin"].map(|name| {
            let bias = &v[&format!("head.{name}.bias")];
            (dense(&z, &v[&format!("head.{name}.weight")], bias, p, bias.len()), bias.len())
        });
        for t in 0..t_len {
            let i = row * batch.max_len + t;
            let picks = [
                batch.niqqud_mask[i].then_some(batch.niqqud_gold[i] as usize),
                batch.dagesh_mask[i].then_some(batch.dagesh_gold[i] as usize),
                (batch.sin_mask[i] && batch.sin_gold[i] > 0).then(|| batch.sin_gold[i] as usize - 1),
            ];
            for ((logits, classes), gold) in heads.iter().zip(picks) {
                if let Some(g) = gold {
                    total += cross_entropy(&logits[t * classes..(t + 1) * classes], g);
                    decisions += 1;
                }
            }
        }
    }
    if decisions == 0 {
        0.0
    } else {
        total / decisions as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayCheck {
    pub name: String,
    pub checked: usize,
    pub failures: usize,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub arrays: Vec<ArrayCheck>,
    pub tolerance: f64,
    /// Loss of the network under test and of the reference, same batch.
    pub loss: f64,
    pub reference_loss: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.arrays.iter().all(|a| a.failures == 0)
    }

    pub fn checked(&self) -> usize {
        self.arrays.iter().map(|a| a.checked).sum()
    }
}

/// Compares analytic gradients with central differences of the reference
/// loss for up to `samples` coordinates per array (all of them when the
/// array is smaller).
pub fn check_gradients(
    config: &ModelConfig,
    params: &Parameters,
    batch: &Batch,
    seed: u64,
    samples: usize,
    step: f64,
    tolerance: f64,
) -> Result<GradcheckReport, NetworkError> {
    let (_, cache) = network::forward(config, params, batch, Mode::Train { seed }, Exec::Sequential)?;
    let cache = cache.expect("training forward returns a cache");
    let (loss, grads) = network::loss_and_backward(config, params, &cache, batch, Exec::Sequential)?;

    let mut values: Values = params
        .tensors()
        .iter()
        .map(|t| (t.name.clone(), t.data.iter().map(|&x| x as f64).collect()))
        .collect();
    let reference = reference_loss(config, &values, batch, &cache);

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut arrays = Vec::new();
    for g in grads.tensors() {
        let n = g.len();
        let coords: Vec<usize> = if n <= samples {
            (0..n).collect()
        } else {
            rand::seq::index::sample(&mut rng, n, samples).into_vec()
        };
        let mut check = ArrayCheck {
            name: g.name.clone(),
            checked: 0,
            failures: 0,
            max_relative_error: 0.0,
        };
        for k in coords {
            let base = values[&g.name][k];
            let mut at = |offset: f64| {
                values.get_mut(&g.name).unwrap()[k] = base + offset;
                reference_loss(config, &values, batch, &cache)
            };
            // Five-point central stencil: truncation error O(step^4), so the
            // comparison is limited by f32 round-off rather than by the oracle.
            let numeric = (at(-2.0 * step) - 8.0 * at(-step) + 8.0 * at(step) - at(2.0 * step)) / (12.0 * step);
            values.get_mut(&g.name).unwrap()[k] = base;
            let err = relative_error(g.data[k] as f64, numeric);
            check.checked += 1;
            check.max_relative_error = check.max_relative_error.max(err);
            if err > tolerance {
                check.failures += 1;
            }
        }
        arrays.push(check);
    }
    Ok(GradcheckReport {
        arrays,
        tolerance,
        loss,
        reference_loss: reference,
    })
}

/// A random batch over `vocab_size` letters with random labels and masks.
pub fn random_batch(vocab_size: usize, rows: usize, max_len: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = rows * max_len;
    let mut b = Batch {
        size: rows,
        max_len,
        lengths: (0..rows).map(|r| if r == 0 { max_len } else { rng.random_range(1..=max_len) }).collect(),
        letter_ids: vec![0; cells],
        niqqud_gold: vec![0; cells],
        dagesh_gold: vec![0; cells],
        sin_gold: vec![0; cells],
        niqqud_mask: vec![false; cells],
        dagesh_mask: vec![false; cells],
        sin_mask: vec![false; cells],
    };
    for row in 0..rows {
        for t in 0..b.lengths[row] {
            let i = row * max_len + t;
            b.letter_ids[i] = rng.random_range(1..vocab_size as u32);
            if rng.random_bool(0.8) {
                b.niqqud_mask[i] = true;
                b.niqqud_gold[i] = rng.random_range(0..network::NIQQUD_CLASSES as u8);
            }
            if rng.random_bool(0.6) {
                b.dagesh_mask[i] = true;
                b.dagesh_gold[i] = rng.random_range(0..network::DAGESH_CLASSES as u8);
            }
            if rng.random_bool(0.3) {
                b.sin_mask[i] = true;
                b.sin_gold[i] = rng.random_range(0..3);
            }
        }
    }
    b
}

/// Gradient check on a freshly initialized model with `dims`-wide layers,
/// vocabulary 10 and a 2×12 batch.
pub fn run_default(dims: usize, dropout: f32, residual: bool, seed: u64) -> Result<GradcheckReport, NetworkError> {
    let mut config = ModelConfig::new(10).with_dims(dims, dims);
    config.dropout = dropout;
    config.residual = residual;
    let mut params = network::init_params(&config, seed);
    // Non-zero biases so their gradients are exercised away from the init point.
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    for t in params.tensors_mut() {
        if t.dims.len() == 1 {
            t.data.iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
        }
    }
    let batch = random_batch(config.vocab_size, 2, 12, seed + 2);
    check_gradients(&config, &params, &batch, seed + 3, DEFAULT_SAMPLES, DEFAULT_STEP, DEFAULT_TOLERANCE)
}
