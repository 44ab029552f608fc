//! Character embedding → two-layer BiLSTM → shared projection → three heads.
//!
//! Everything is computed in `f32` with exact hand-written gradients. Batches
//! are processed one sequence at a time; sequences run in parallel under
//! [`Exec::Parallel`] and gradients are reduced over a fixed number of shards
//! so the result does not depend on the thread count.

mod checkpoint;
mod lstm;

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::codec::{LetterSets, NiqqudLabel};
use crate::corpus::Batch;
use crate::exec::Exec;
use crate::linalg::{gemm, Mat};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

pub const NUM_LAYERS: usize = 2;
pub const NIQQUD_CLASSES: usize = NiqqudLabel::COUNT;
pub const DAGESH_CLASSES: usize = 2;
/// Shin dot and sin dot; an undotted ש is not a class.
pub const SIN_CLASSES: usize = 2;

/// Gradients are accumulated in this many independent buffers and summed in
/// order, regardless of how many threads ran them.
const GRAD_SHARDS: usize = 8;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite activation in forward pass")]
    NonFiniteActivation,
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Per direction.
    pub hidden_dim: usize,
    pub dropout: f32,
    /// Adds the first layer's output to the second layer's output.
    pub residual: bool,
    pub letter_sets: LetterSets,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim: 400,
            hidden_dim: 400,
            dropout: 0.1,
            residual: false,
            letter_sets: LetterSets::default(),
        }
    }

    pub fn with_dims(mut self, embed_dim: usize, hidden_dim: usize) -> Self {
        self.embed_dim = embed_dim;
        self.hidden_dim = hidden_dim;
        self
    }

    /// Width of the shared projection, equal to the concatenated BiLSTM output.
    pub fn proj_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.vocab_size == 0 || self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(NetworkError::InvalidConfig("dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NetworkError::InvalidConfig(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "vocab_size = {}", self.vocab_size);
        let _ = writeln!(s, "embed_dim = {}", self.embed_dim);
        let _ = writeln!(s, "hidden_dim = {}", self.hidden_dim);
        let _ = writeln!(s, "num_layers = {NUM_LAYERS}");
        let _ = writeln!(s, "dropout = {}", self.dropout);
        let _ = writeln!(s, "residual = {}", self.residual);
        let _ = writeln!(s, "dagesh_letters = {}", self.letter_sets.dagesh_letters());
        let _ = writeln!(s, "niqqud_letters = {}", self.letter_sets.niqqud_letters());
        s
    }

    pub fn from_text(text: &str) -> Result<Self, NetworkError> {
        let bad = |m: String| NetworkError::InvalidConfig(m);
        let mut cfg = ModelConfig::new(0);
        let mut dagesh = cfg.letter_sets.dagesh_letters();
        let mut niqqud = cfg.letter_sets.niqqud_letters();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| bad(format!("malformed line {line:?}")))?;
            let int = || value.parse::<usize>().map_err(|e| bad(format!("{key}: {e}")));
            match key {
                "vocab_size" => cfg.vocab_size = int()?,
                "embed_dim" => cfg.embed_dim = int()?,
                "hidden_dim" => cfg.hidden_dim = int()?,
                "num_layers" => {
                    if int()? != NUM_LAYERS {
                        return Err(bad(format!("only {NUM_LAYERS} layers are supported")));
                    }
                }
                "dropout" => cfg.dropout = value.parse().map_err(|e| bad(format!("dropout: {e}")))?,
                "residual" => cfg.residual = value.parse().map_err(|e| bad(format!("residual: {e}")))?,
                "dagesh_letters" => dagesh = value.to_string(),
                "niqqud_letters" => niqqud = value.to_string(),
                _ => return Err(bad(format!("unknown key {key}"))),
            }
        }
        cfg.letter_sets = LetterSets::from_letters(&dagesh, &niqqud)
            .map_err(|c| bad(format!("non-Hebrew letter {c:?} in letter set")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A named row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, dims: &[usize]) -> Self {
        Tensor {
            name: name.into(),
            dims: dims.to_vec(),
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Weights of one LSTM direction, gate order input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `input_dim × 4·hidden`
    pub w_ih: Tensor,
    /// `hidden × 4·hidden`
    pub w_hh: Tensor,
    /// `4·hidden`
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    /// `proj_dim × classes`
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    /// `vocab × embed_dim`
    pub embedding: Tensor,
    /// Indexed by `2·layer + direction`, direction 0 running left to right.
    pub lstm: Vec<LstmParams>,
    /// `2·hidden × proj_dim`
    pub proj_w: Tensor,
    pub proj_b: Tensor,
    pub niqqud: Head,
    pub dagesh: Head,
    pub sin: Head,
}

const DIRS: [&str; 2] = ["fwd", "bwd"];

impl Parameters {
    pub fn zeros(config: &ModelConfig) -> Self {
        let h = config.hidden_dim;
        let p = config.proj_dim();
        let mut lstm = Vec::with_capacity(2 * NUM_LAYERS);
        for layer in 0..NUM_LAYERS {
            let input = if layer == 0 { config.embed_dim } else { 2 * h };
            for dir in DIRS {
                let prefix = format!("lstm.{layer}.{dir}");
                lstm.push(LstmParams {
                    w_ih: Tensor::zeros(format!("{prefix}.w_ih"), &[input, 4 * h]),
                    w_hh: Tensor::zeros(format!("{prefix}.w_hh"), &[h, 4 * h]),
                    bias: Tensor::zeros(format!("{prefix}.bias"), &[4 * h]),
                });
            }
        }
        let head = |name: &str, classes: usize| Head {
            weight: Tensor::zeros(format!("head.{name}.weight"), &[p, classes]),
            bias: Tensor::zeros(format!("head.{name}.bias"), &[classes]),
        };
        Parameters {
            embedding: Tensor::zeros("embedding", &[config.vocab_size, config.embed_dim]),
            lstm,
            proj_w: Tensor::zeros("proj.weight", &[2 * h, p]),
            proj_b: Tensor::zeros("proj.bias", &[p]),
            niqqud: head("niqqud", NIQQUD_CLASSES),
            dagesh: head("dagesh", DAGESH_CLASSES),
            sin: head("sin", SIN_CLASSES),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embedding];
        for l in &self.lstm {
            out.extend([&l.w_ih, &l.w_hh, &l.bias]);
        }
        out.extend([&self.proj_w, &self.proj_b]);
        for h in [&self.niqqud, &self.dagesh, &self.sin] {
            out.extend([&h.weight, &h.bias]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embedding];
        for l in &mut self.lstm {
            out.extend([&mut l.w_ih, &mut l.w_hh, &mut l.bias]);
        }
        out.extend([&mut self.proj_w, &mut self.proj_b]);
        for h in [&mut self.niqqud, &mut self.dagesh, &mut self.sin] {
            out.extend([&mut h.weight, &mut h.bias]);
        }
        out
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn add_assign(&mut self, other: &Parameters) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    /// Euclidean norm over every value, accumulated in `f64`.
    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f32) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    fn check_shapes(&self, config: &ModelConfig) -> Result<(), NetworkError> {
        let want = Parameters::zeros(config);
        for (a, b) in self.tensors().into_iter().zip(want.tensors()) {
            if a.name != b.name || a.dims != b.dims || a.data.len() != b.data.len() {
                return Err(NetworkError::ShapeMismatch(format!(
                    "{} {:?} does not match configuration ({} {:?})",
                    a.name, a.dims, b.name, b.dims
                )));
            }
        }
        Ok(())
    }
}

/// Glorot-uniform matrices, zero biases and a forget-gate bias of one.
pub fn init_params(config: &ModelConfig, seed: u64) -> Parameters {
    let mut params = Parameters::zeros(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = config.hidden_dim;
    for t in params.tensors_mut() {
        if t.dims.len() == 2 {
            let bound = (6.0 / (t.dims[0] + t.dims[1]) as f64).sqrt() as f32;
            t.data.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
        }
    }
    for l in &mut params.lstm {
        l.bias.data[h..2 * h].fill(1.0);
    }
    params
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, masks drawn from `seed`.
    Train { seed: u64 },
    Infer,
}

/// Head outputs laid out `batch × max_len × classes`; padding rows are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub batch: usize,
    pub max_len: usize,
    pub niqqud: Vec<f32>,
    pub dagesh: Vec<f32>,
    pub sin: Vec<f32>,
}

impl Logits {
    pub fn zeros(batch: usize, max_len: usize) -> Self {
        let cells = batch * max_len;
        Logits {
            batch,
            max_len,
            niqqud: vec![0.0; cells * NIQQUD_CLASSES],
            dagesh: vec![0.0; cells * DAGESH_CLASSES],
            sin: vec![0.0; cells * SIN_CLASSES],
        }
    }

    pub fn niqqud_at(&self, row: usize, t: usize) -> &[f32] {
        let i = (row * self.max_len + t) * NIQQUD_CLASSES;
        &self.niqqud[i..i + NIQQUD_CLASSES]
    }

    pub fn dagesh_at(&self, row: usize, t: usize) -> &[f32] {
        let i = (row * self.max_len + t) * DAGESH_CLASSES;
        &self.dagesh[i..i + DAGESH_CLASSES]
    }

    pub fn sin_at(&self, row: usize, t: usize) -> &[f32] {
        let i = (row * self.max_len + t) * SIN_CLASSES;
        &self.sin[i..i + SIN_CLASSES]
    }

    fn all_finite(&self) -> bool {
        self.niqqud.iter().chain(&self.dagesh).chain(&self.sin).all(|v| v.is_finite())
    }
}

/// Activations of one sequence kept for backpropagation.
#[derive(Debug, Clone)]
pub struct SequenceCache {
    ids: Vec<u32>,
    layers: Vec<lstm::LayerCache>,
    /// Input to the projection, `len × 2·hidden`.
    top: Vec<f32>,
    /// Projection output, `len × proj_dim`.
    proj: Vec<f32>,
}

impl SequenceCache {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Concatenated `[forward | backward]` hidden states of `layer`, before dropout.
    pub fn layer_output(&self, layer: usize) -> &[f32] {
        &self.layers[layer].output
    }

    /// Inverted-dropout multipliers applied to the output of `layer`.
    pub fn dropout_mask(&self, layer: usize) -> Option<&[f32]> {
        self.layers[layer].mask.as_deref()
    }
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub sequences: Vec<SequenceCache>,
    pub logits: Logits,
}

fn dropout_mask(len: usize, rate: f32, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    (0..len)
        .map(|_| if rng.random::<f32>() < keep { scale } else { 0.0 })
        .collect()
}

fn affine(input: &[f32], rows: usize, w: &Tensor, b: &Tensor, out: &mut [f32]) {
    let (inp, outp) = (w.dims[0], w.dims[1]);
    for row in out.chunks_exact_mut(outp) {
        row.copy_from_slice(&b.data);
    }
    gemm(Mat::new(input, rows, inp), Mat::new(&w.data, inp, outp), out, 1.0);
}

fn forward_sequence(
    config: &ModelConfig,
    params: &Parameters,
    ids: &[u32],
    mode: Mode,
    stream: u64,
) -> (SequenceCache, [Vec<f32>; 3]) {
    let t_len = ids.len();
    let d = config.embed_dim;
    let h = config.hidden_dim;
    let mut rng = match mode {
        Mode::Train { seed } => {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(stream);
            Some(r)
        }
        Mode::Infer => None,
    };

    let mut input = Vec::with_capacity(t_len * d);
    for &id in ids {
        let at = id as usize * d;
        input.extend_from_slice(&params.embedding.data[at..at + d]);
    }

    let mut layers = Vec::with_capacity(NUM_LAYERS);
    for layer in 0..NUM_LAYERS {
        let in_dim = if layer == 0 { d } else { 2 * h };
        let mask = match rng.as_mut() {
            Some(r) if config.dropout > 0.0 => Some(dropout_mask(t_len * 2 * h, config.dropout, r)),
            _ => None,
        };
        let cache = lstm::layer_forward(
            &params.lstm[2 * layer],
            &params.lstm[2 * layer + 1],
            input,
            in_dim,
            h,
            mask,
        );
        input = cache.dropped.clone();
        layers.push(cache);
    }
    let mut top = input;
    if config.residual {
        for (a, b) in top.iter_mut().zip(&layers[0].dropped) {
            *a += b;
        }
    }

    let p = config.proj_dim();
    let mut proj = vec![0.0; t_len * p];
    affine(&top, t_len, &params.proj_w, &params.proj_b, &mut proj);
    let mut heads = [
        vec![0.0; t_len * NIQQUD_CLASSES],
        vec![0.0; t_len * DAGESH_CLASSES],
        vec![0.0; t_len * SIN_CLASSES],
    ];
    for (out, head) in heads.iter_mut().zip([&params.niqqud, &params.dagesh, &params.sin]) {
        affine(&proj, t_len, &head.weight, &head.bias, out);
    }
    (
        SequenceCache {
            ids: ids.to_vec(),
            layers,
            top,
            proj,
        },
        heads,
    )
}

fn check_batch(config: &ModelConfig, params: &Parameters, batch: &Batch) -> Result<(), NetworkError> {
    params.check_shapes(config)?;
    let cells = batch.size * batch.max_len;
    if batch.lengths.len() != batch.size
        || batch.letter_ids.len() != cells
        || batch.lengths.iter().any(|&l| l > batch.max_len)
    {
        return Err(NetworkError::ShapeMismatch("batch buffers do not match its shape".into()));
    }
    if let Some(&bad) = batch.letter_ids.iter().find(|&&id| id as usize >= config.vocab_size) {
        return Err(NetworkError::ShapeMismatch(format!(
            "letter id {bad} outside vocabulary of {}",
            config.vocab_size
        )));
    }
    Ok(())
}

/// Runs the network over a batch. The cache is returned in training mode.
pub fn forward(
    config: &ModelConfig,
    params: &Parameters,
    batch: &Batch,
    mode: Mode,
    exec: Exec,
) -> Result<(Logits, Option<ForwardCache>), NetworkError> {
    check_batch(config, params, batch)?;
    let results = exec.map_range(batch.size, |row| forward_sequence(config, params, batch.ids(row), mode, row as u64));
    let mut logits = Logits::zeros(batch.size, batch.max_len);
    let mut sequences = Vec::with_capacity(batch.size);
    for (row, (cache, heads)) in results.into_iter().enumerate() {
        let at = row * batch.max_len;
        let n = cache.len();
        logits.niqqud[at * NIQQUD_CLASSES..(at + n) * NIQQUD_CLASSES].copy_from_slice(&heads[0]);
        logits.dagesh[at * DAGESH_CLASSES..(at + n) * DAGESH_CLASSES].copy_from_slice(&heads[1]);
        logits.sin[at * SIN_CLASSES..(at + n) * SIN_CLASSES].copy_from_slice(&heads[2]);
        sequences.push(cache);
    }
    if !logits.all_finite() {
        return Err(NetworkError::NonFiniteActivation);
    }
    match mode {
        Mode::Infer => Ok((logits, None)),
        Mode::Train { .. } => {
            let cache = ForwardCache {
                sequences,
                logits: logits.clone(),
            };
            Ok((logits, Some(cache)))
        }
    }
}

/// Loss value and its gradient with respect to every logit.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub decisions: usize,
    pub d_logits: Logits,
}

/// Whether position `i` of the batch contributes a sin decision to the loss.
pub fn sin_loss_mask(batch: &Batch, i: usize) -> bool {
    batch.sin_mask[i] && batch.sin_gold[i] != 0
}

/// Summed softmax cross-entropy of the three heads over unmasked decisions,
/// divided by the number of those decisions.
pub fn masked_loss(logits: &Logits, batch: &Batch) -> Result<LossOutput, NetworkError> {
    let cells = batch.size * batch.max_len;
    if logits.batch != batch.size || logits.max_len != batch.max_len {
        return Err(NetworkError::ShapeMismatch("logits do not match batch".into()));
    }
    let mut decisions = 0usize;
    for i in 0..cells {
        decisions += batch.niqqud_mask[i] as usize + batch.dagesh_mask[i] as usize + sin_loss_mask(batch, i) as usize;
    }
    let mut d_logits = Logits::zeros(batch.size, batch.max_len);
    if decisions == 0 {
        return Ok(LossOutput {
            loss: 0.0,
            decisions,
            d_logits,
        });
    }
    let norm = 1.0 / decisions as f64;
    let mut total = 0.0f64;
    let mut head = |scores: &[f32], grads: &mut [f32], classes: usize, active: &dyn Fn(usize) -> Option<usize>| {
        for i in 0..cells {
            let Some(gold) = active(i) else { continue };
            let z = &scores[i * classes..(i + 1) * classes];
            let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
            let sum: f64 = z.iter().map(|&v| (v as f64 - max).exp()).sum();
            let log_sum = max + sum.ln();
            total += log_sum - z[gold] as f64;
            let g = &mut grads[i * classes..(i + 1) * classes];
            for (k, gv) in g.iter_mut().enumerate() {
                let p = (z[k] as f64 - log_sum).exp();
                let indicator = if k == gold { 1.0 } else { 0.0 };
                *gv = ((p - indicator) * norm) as f32;
            }
        }
    };
    head(&logits.niqqud, &mut d_logits.niqqud, NIQQUD_CLASSES, &|i| {
        batch.niqqud_mask[i].then_some(batch.niqqud_gold[i] as usize)
    });
    head(&logits.dagesh, &mut d_logits.dagesh, DAGESH_CLASSES, &|i| {
        batch.dagesh_mask[i].then_some(batch.dagesh_gold[i] as usize)
    });
    head(&logits.sin, &mut d_logits.sin, SIN_CLASSES, &|i| {
        sin_loss_mask(batch, i).then(|| batch.sin_gold[i] as usize - 1)
    });
    let loss = total * norm;
    if !loss.is_finite() {
        return Err(NetworkError::NonFiniteLoss);
    }
    Ok(LossOutput {
        loss,
        decisions,
        d_logits,
    })
}

fn head_backward(proj: &[f32], t_len: usize, p: usize, head: &Head, grad: &mut Head, d: &[f32], d_proj: &mut [f32]) {
    let classes = head.bias.len();
    gemm(Mat::new(proj, t_len, p).t(), Mat::new(d, t_len, classes), &mut grad.weight.data, 1.0);
    for row in d.chunks_exact(classes) {
        for (b, v) in grad.bias.data.iter_mut().zip(row) {
            *b += v;
        }
    }
    gemm(Mat::new(d, t_len, classes), Mat::new(&head.weight.data, p, classes).t(), d_proj, 1.0);
}

fn backward_sequence(
    config: &ModelConfig,
    params: &Parameters,
    cache: &SequenceCache,
    d_logits: &Logits,
    row: usize,
    grads: &mut Parameters,
) {
    let t_len = cache.len();
    if t_len == 0 {
        return;
    }
    let h = config.hidden_dim;
    let p = config.proj_dim();
    let at = row * d_logits.max_len;
    let slices = [
        &d_logits.niqqud[at * NIQQUD_CLASSES..(at + t_len) * NIQQUD_CLASSES],
        &d_logits.dagesh[at * DAGESH_CLASSES..(at + t_len) * DAGESH_CLASSES],
        &d_logits.sin[at * SIN_CLASSES..(at + t_len) * SIN_CLASSES],
    ];

    let mut d_proj = vec![0.0; t_len * p];
    head_backward(&cache.proj, t_len, p, &params.niqqud, &mut grads.niqqud, slices[0], &mut d_proj);
    head_backward(&cache.proj, t_len, p, &params.dagesh, &mut grads.dagesh, slices[1], &mut d_proj);
    head_backward(&cache.proj, t_len, p, &params.sin, &mut grads.sin, slices[2], &mut d_proj);

    gemm(Mat::new(&cache.top, t_len, 2 * h).t(), Mat::new(&d_proj, t_len, p), &mut grads.proj_w.data, 1.0);
    for r in d_proj.chunks_exact(p) {
        for (b, v) in grads.proj_b.data.iter_mut().zip(r) {
            *b += v;
        }
    }
    let mut d_top = vec![0.0; t_len * 2 * h];
    gemm(Mat::new(&d_proj, t_len, p), Mat::new(&params.proj_w.data, 2 * h, p).t(), &mut d_top, 0.0);

    // Gradient flowing into the (post-dropout) output of each layer.
    let mut d_dropped = d_top;
    let residual_grad = config.residual.then(|| d_dropped.clone());
    for layer in (0..NUM_LAYERS).rev() {
        let (fwd, bwd) = grads.lstm.split_at_mut(2 * layer + 1);
        let d_input = lstm::layer_backward(
            &params.lstm[2 * layer],
            &params.lstm[2 * layer + 1],
            &mut fwd[2 * layer],
            &mut bwd[0],
            &cache.layers[layer],
            &d_dropped,
            h,
        );
        d_dropped = d_input;
        if layer == 1 {
            if let Some(r) = &residual_grad {
                for (a, b) in d_dropped.iter_mut().zip(r) {
                    *a += b;
                }
            }
        }
    }

    let d = config.embed_dim;
    for (t, &id) in cache.ids.iter().enumerate() {
        let dst = &mut grads.embedding.data[id as usize * d..(id as usize + 1) * d];
        for (g, v) in dst.iter_mut().zip(&d_dropped[t * d..(t + 1) * d]) {
            *g += v;
        }
    }
}

/// Backpropagates logit gradients through a cached training forward pass.
pub fn backward(
    config: &ModelConfig,
    params: &Parameters,
    cache: &ForwardCache,
    d_logits: &Logits,
    exec: Exec,
) -> Parameters {
    let n = cache.sequences.len();
    let shards = GRAD_SHARDS.min(n).max(1);
    let per = n.div_ceil(shards);
    let mut partials = exec.map_range(shards, |s| {
        let mut g = Parameters::zeros(config);
        for row in s * per..((s + 1) * per).min(n) {
            backward_sequence(config, params, &cache.sequences[row], d_logits, row, &mut g);
        }
        g
    });
    let mut total = partials.remove(0);
    for g in &partials {
        total.add_assign(g);
    }
    total
}

/// Loss of a cached training forward pass and its exact parameter gradients.
pub fn loss_and_backward(
    config: &ModelConfig,
    params: &Parameters,
    cache: &ForwardCache,
    batch: &Batch,
    exec: Exec,
) -> Result<(f64, Parameters), NetworkError> {
    let out = masked_loss(&cache.logits, batch)?;
    let grads = if out.decisions == 0 {
        Parameters::zeros(config)
    } else {
        backward(config, params, cache, &out.d_logits, exec)
    };
    Ok((out.loss, grads))
}
