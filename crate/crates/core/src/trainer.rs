//! Adam with a cyclical learning rate, run over the pre-modern split and then
//! the modern split.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::codec::MarkedChar;
use crate::corpus::{chunk_document, hebrew_token_spans, make_batches, Chunk, Document, Split, Vocabulary, MAX_CHUNK_LEN};
use crate::dotter::predict;
use crate::exec::Exec;
use crate::metrics::{self, Counts, MetricsError, MetricsReport};
use crate::network::{self, Mode, ModelConfig, NetworkError, Parameters};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite parameter update at step {step}")]
    NonFiniteUpdate { step: u64 },
    #[error("training aborted at step {step}: {source}")]
    Aborted { step: u64, source: Box<TrainError> },
    #[error("invalid training plan: {0}")]
    InvalidPlan(String),
    #[error("no training data in the {0} split")]
    NoData(Split),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrPolicy {
    Triangular,
    /// Triangular with the amplitude halved every cycle.
    Triangular2,
    /// Triangular with the amplitude scaled by `gamma^step`.
    ExpRange { gamma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LRSchedule {
    pub policy: LrPolicy,
    pub base_lr: f64,
    pub max_lr: f64,
    /// Steps per half cycle.
    pub step_size_up: u64,
}

impl LRSchedule {
    pub fn triangular(base_lr: f64, max_lr: f64, step_size_up: u64) -> Self {
        LRSchedule {
            policy: LrPolicy::Triangular,
            base_lr,
            max_lr,
            step_size_up,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.base_lr > 0.0 && self.base_lr < self.max_lr && self.max_lr.is_finite()) {
            return Err(TrainError::InvalidPlan(format!(
                "need 0 < base_lr < max_lr, got {} and {}",
                self.base_lr, self.max_lr
            )));
        }
        if self.step_size_up == 0 {
            return Err(TrainError::InvalidPlan("step_size_up must be at least 1".into()));
        }
        Ok(())
    }
}

/// Learning rate at `step` (counted from 0).
pub fn lr_at(s: &LRSchedule, step: u64) -> f64 {
    let half = s.step_size_up;
    let r = step % (2 * half);
    // Triangle height in [0, 1], exact at integer multiples of `half`.
    let w = (half - r.abs_diff(half)) as f64 / half as f64;
    let scale = match s.policy {
        LrPolicy::Triangular => 1.0,
        LrPolicy::Triangular2 => 0.5f64.powi((step / (2 * half)).min(1023) as i32),
        LrPolicy::ExpRange { gamma } => gamma.powf(step as f64),
    };
    let w = w * scale;
    (1.0 - w) * s.base_lr + w * s.max_lr
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Parameters,
    pub v: Parameters,
}

impl AdamState {
    pub fn new(config: &ModelConfig) -> Self {
        AdamState {
            step: 0,
            m: Parameters::zeros(config),
            v: Parameters::zeros(config),
        }
    }
}

/// One bias-corrected Adam update. Parameters and state are left untouched
/// when the gradients or the updated values are not finite.
pub fn adam_step(
    params: &mut Parameters,
    grads: &Parameters,
    state: &mut AdamState,
    adam: &AdamConfig,
    lr: f64,
) -> Result<(), TrainError> {
    let step = state.step + 1;
    if !grads.all_finite() || !lr.is_finite() {
        return Err(TrainError::NonFiniteUpdate { step });
    }
    let c1 = 1.0 - adam.beta1.powi(step as i32);
    let c2 = 1.0 - adam.beta2.powi(step as i32);
    let mut next = params.clone();
    let mut m_next = state.m.clone();
    let mut v_next = state.v.clone();
    let targets = next
        .tensors_mut()
        .into_iter()
        .zip(m_next.tensors_mut())
        .zip(v_next.tensors_mut())
        .zip(grads.tensors());
    for (((p, m), v), g) in targets {
        for (((p, m), v), &g) in p.data.iter_mut().zip(&mut m.data).zip(&mut v.data).zip(&g.data) {
            let g = g as f64;
            let m_new = adam.beta1 * *m as f64 + (1.0 - adam.beta1) * g;
            let v_new = adam.beta2 * *v as f64 + (1.0 - adam.beta2) * g * g;
            let update = lr * (m_new / c1) / ((v_new / c2).sqrt() + adam.epsilon);
            *p = (*p as f64 - update) as f32;
            *m = m_new as f32;
            *v = v_new as f32;
        }
    }
    if !next.all_finite() || !v_next.all_finite() {
        return Err(TrainError::NonFiniteUpdate { step });
    }
    *params = next;
    state.m = m_next;
    state.v = v_next;
    state.step = step;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainPlan {
    pub premodern_epochs: usize,
    pub modern_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub lr_policy: LrPolicy,
    pub base_lr: f64,
    pub max_lr: f64,
    /// Half-cycle length; steps per epoch of the current split when unset.
    pub step_size_up: Option<u64>,
    /// Save the running checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub max_grad_norm: Option<f64>,
    pub exec: Exec,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            premodern_epochs: 1,
            modern_epochs: 5,
            batch_size: crate::corpus::DEFAULT_BATCH_SIZE,
            seed: 0,
            adam: AdamConfig::default(),
            lr_policy: LrPolicy::Triangular,
            base_lr: 3e-4,
            max_lr: 3e-3,
            step_size_up: None,
            checkpoint_every: 0,
            log_every: 10,
            max_grad_norm: None,
            exec: Exec::default(),
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, TrainError> {
    value
        .parse()
        .map_err(|_| TrainError::InvalidPlan(format!("bad value {value:?} for {key}")))
}

/// `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>, TrainError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| TrainError::InvalidPlan(format!("line {}: expected key = value", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl TrainPlan {
    /// Sets one field by its configuration key. Returns `Ok(false)` for keys
    /// that are not plan fields.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, TrainError> {
        match key {
            "premodern_epochs" => self.premodern_epochs = parse_value(key, value)?,
            "modern_epochs" => self.modern_epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "beta1" => self.adam.beta1 = parse_value(key, value)?,
            "beta2" => self.adam.beta2 = parse_value(key, value)?,
            "epsilon" => self.adam.epsilon = parse_value(key, value)?,
            "base_lr" => self.base_lr = parse_value(key, value)?,
            "max_lr" => self.max_lr = parse_value(key, value)?,
            "step_size_up" => self.step_size_up = Some(parse_value(key, value)?),
            "checkpoint_every" => self.checkpoint_every = parse_value(key, value)?,
            "log_every" => self.log_every = parse_value(key, value)?,
            "max_grad_norm" => {
                self.max_grad_norm = match value {
                    "none" | "" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "lr_policy" => {
                self.lr_policy = match value {
                    "triangular" => LrPolicy::Triangular,
                    "triangular2" => LrPolicy::Triangular2,
                    "exp_range" => LrPolicy::ExpRange { gamma: 0.99994 },
                    _ => return Err(TrainError::InvalidPlan(format!("unknown lr_policy {value:?}"))),
                }
            }
            "gamma" => match &mut self.lr_policy {
                LrPolicy::ExpRange { gamma } => *gamma = parse_value(key, value)?,
                _ => return Err(TrainError::InvalidPlan("gamma needs lr_policy = exp_range first".into())),
            },
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_text(&self) -> String {
        let policy = match self.lr_policy {
            LrPolicy::Triangular => "triangular".to_string(),
            LrPolicy::Triangular2 => "triangular2".to_string(),
            LrPolicy::ExpRange { gamma } => format!("exp_range\ngamma = {gamma}"),
        };
        let mut s = format!(
            "premodern_epochs = {}\nmodern_epochs = {}\nbatch_size = {}\nseed = {}\nbeta1 = {}\nbeta2 = {}\n\
             epsilon = {}\nlr_policy = {policy}\nbase_lr = {}\nmax_lr = {}\ncheckpoint_every = {}\nlog_every = {}\n",
            self.premodern_epochs,
            self.modern_epochs,
            self.batch_size,
            self.seed,
            self.adam.beta1,
            self.adam.beta2,
            self.adam.epsilon,
            self.base_lr,
            self.max_lr,
            self.checkpoint_every,
            self.log_every,
        );
        if let Some(s_up) = self.step_size_up {
            s.push_str(&format!("step_size_up = {s_up}\n"));
        }
        if let Some(n) = self.max_grad_norm {
            s.push_str(&format!("max_grad_norm = {n}\n"));
        }
        s
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.premodern_epochs == 0 && self.modern_epochs == 0 {
            return Err(TrainError::InvalidPlan("no epochs to run".into()));
        }
        if self.batch_size == 0 || self.log_every == 0 {
            return Err(TrainError::InvalidPlan("batch_size and log_every must be positive".into()));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.epsilon <= 0.0 {
            return Err(TrainError::InvalidPlan("Adam betas must be in [0, 1) and epsilon positive".into()));
        }
        if self.max_grad_norm.is_some_and(|n| n.is_nan() || n <= 0.0) {
            return Err(TrainError::InvalidPlan("max_grad_norm must be positive".into()));
        }
        self.schedule_for(1).validate()
    }

    pub fn schedule_for(&self, steps_per_epoch: u64) -> LRSchedule {
        LRSchedule {
            policy: self.lr_policy,
            base_lr: self.base_lr,
            max_lr: self.max_lr,
            step_size_up: self.step_size_up.unwrap_or(steps_per_epoch.max(1)),
        }
    }
}

/// Document splits used by [`train`]. Empty splits are skipped.
#[derive(Debug, Clone, Default)]
pub struct Corpora {
    pub premodern: Vec<Document>,
    pub modern: Vec<Document>,
    pub validation: Vec<Document>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub step: u64,
    pub lr: f64,
    /// Mean loss over the steps since the previous entry.
    pub loss: f64,
    pub split: Split,
}

impl LogEntry {
    pub fn line(&self) -> String {
        format!("{}\t{:.6e}\t{:.6}\t{}", self.step, self.lr, self.loss, self.split)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Parameters,
    pub steps: u64,
    /// Loss of every step, in order.
    pub losses: Vec<f64>,
    pub log: Vec<LogEntry>,
    pub best_wor: Option<f64>,
    pub validation: Option<MetricsReport>,
}

/// Where [`train`] writes the best-validation checkpoint for `out`.
pub fn best_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".best");
    PathBuf::from(p)
}

pub fn log_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".log");
    PathBuf::from(p)
}

/// splitmix64 over a pair, for deriving per-epoch and per-step seeds.
fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Predicts every document of `docs` from its stripped letters.
pub fn predict_documents(
    config: &ModelConfig,
    params: &Parameters,
    vocab: &Vocabulary,
    docs: &[Document],
    exec: Exec,
) -> Result<Vec<Document>, NetworkError> {
    docs.iter()
        .map(|d| {
            Ok(Document {
                id: d.id.clone(),
                source: d.source.clone(),
                chars: predict(config, params, vocab, &d.chars, crate::corpus::DEFAULT_BATCH_SIZE, exec)?,
                original: String::new(),
            })
        })
        .collect()
}

pub fn validate_model(
    config: &ModelConfig,
    params: &Parameters,
    vocab: &Vocabulary,
    docs: &[Document],
    exec: Exec,
) -> Result<MetricsReport, TrainError> {
    let pred = predict_documents(config, params, vocab, docs, exec)?;
    Ok(metrics::evaluate(docs, &pred, &config.letter_sets, exec)?)
}

struct Run<'a> {
    plan: &'a TrainPlan,
    config: &'a ModelConfig,
    vocab: Vocabulary,
    params: Parameters,
    state: AdamState,
    losses: Vec<f64>,
    log: Vec<LogEntry>,
    log_file: BufWriter<File>,
    out: &'a Path,
}

impl Run<'_> {
    fn save(&self, path: &Path) -> Result<(), TrainError> {
        network::save_checkpoint(path, &self.params, self.config, &self.vocab)?;
        Ok(())
    }

    fn step(&mut self, batch: &crate::corpus::Batch, lr: f64) -> Result<f64, TrainError> {
        let seed = mix(self.plan.seed, self.state.step);
        let exec = self.plan.exec;
        let (_, cache) = network::forward(self.config, &self.params, batch, Mode::Train { seed }, exec)?;
        let cache = cache.expect("training forward returns a cache");
        let (loss, mut grads) = network::loss_and_backward(self.config, &self.params, &cache, batch, exec)?;
        if let Some(max) = self.plan.max_grad_norm {
            let norm = grads.global_norm();
            if norm > max {
                grads.scale((max / norm) as f32);
            }
        }
        adam_step(&mut self.params, &grads, &mut self.state, &self.plan.adam, lr)?;
        Ok(loss)
    }

    fn epoch(&mut self, split: Split, chunks: &[Chunk], epoch_seed: u64, schedule: &LRSchedule, phase_step: &mut u64) -> Result<(), TrainError> {
        let batches = make_batches(chunks, self.plan.batch_size, epoch_seed);
        let mut window = Vec::new();
        for batch in &batches {
            let lr = lr_at(schedule, *phase_step);
            let before = self.state.step;
            let loss = match self.step(batch, lr) {
                Ok(l) => l,
                Err(e) => {
                    // Parameters still hold the last good values.
                    self.save(self.out)?;
                    return Err(TrainError::Aborted {
                        step: before + 1,
                        source: Box::new(e),
                    });
                }
            };
            *phase_step += 1;
            self.losses.push(loss);
            window.push(loss);
            let step = self.state.step;
            if step % self.plan.log_every == 0 {
                let entry = LogEntry {
                    step,
                    lr,
                    loss: window.iter().sum::<f64>() / window.len() as f64,
                    split,
                };
                window.clear();
                writeln!(self.log_file, "{}", entry.line())?;
                log::info!("{}", entry.line());
                self.log.push(entry);
            }
            if self.plan.checkpoint_every > 0 && step % self.plan.checkpoint_every == 0 {
                self.save(self.out)?;
            }
        }
        self.log_file.flush()?;
        Ok(())
    }
}

/// Runs `premodern_epochs` over the pre-modern split, then `modern_epochs`
/// over the modern split, and saves the final checkpoint to `out`. When a
/// validation split is given, WOR is measured after every epoch and the best
/// model is saved to [`best_path`]. The log goes to [`log_path`].
pub fn train(plan: &TrainPlan, corpora: &Corpora, config: &ModelConfig, out: &Path) -> Result<TrainOutcome, TrainError> {
    plan.validate()?;
    config.validate()?;
    let vocab = Vocabulary::default();
    if vocab.len() != config.vocab_size {
        return Err(TrainError::Network(NetworkError::InvalidConfig(format!(
            "vocab_size {} does not match the {}-letter vocabulary",
            config.vocab_size,
            vocab.len()
        ))));
    }
    let sets = &config.letter_sets;
    let chunk = |docs: &[Document]| -> Vec<Chunk> {
        docs.iter()
            .flat_map(|d| chunk_document(d, MAX_CHUNK_LEN, &vocab, sets))
            .filter(|c| !c.is_empty())
            .collect()
    };
    let phases = [
        (Split::PreModern, chunk(&corpora.premodern), plan.premodern_epochs),
        (Split::Modern, chunk(&corpora.modern), plan.modern_epochs),
    ];
    for (split, chunks, epochs) in &phases {
        if *epochs > 0 && chunks.is_empty() {
            return Err(TrainError::NoData(*split));
        }
    }
    log::info!("training plan:\n{}", plan.to_text());

    let mut run = Run {
        plan,
        config,
        params: network::init_params(config, plan.seed),
        state: AdamState::new(config),
        vocab: vocab.clone(),
        losses: Vec::new(),
        log: Vec::new(),
        log_file: BufWriter::new(File::create(log_path(out))?),
        out,
    };
    let mut best_wor = None;
    let mut validation = None;
    for (phase, (split, chunks, epochs)) in phases.iter().enumerate() {
        if *epochs == 0 {
            continue;
        }
        let steps_per_epoch = chunks.len().div_ceil(plan.batch_size) as u64;
        let schedule = plan.schedule_for(steps_per_epoch);
        log::info!(
            "{split}: {epochs} epoch(s), {} chunks, step_size_up {}",
            chunks.len(),
            schedule.step_size_up
        );
        let mut phase_step = 0;
        for epoch in 0..*epochs {
            let epoch_seed = mix(plan.seed, ((phase as u64) << 32) | epoch as u64);
            run.epoch(*split, chunks, epoch_seed, &schedule, &mut phase_step)?;
            if !corpora.validation.is_empty() {
                let report = validate_model(config, &run.params, &vocab, &corpora.validation, plan.exec)?;
                let wor = report.wor();
                log::info!("{split} epoch {}: validation WOR {:.2}", epoch + 1, wor * 100.0);
                if best_wor.is_none_or(|b| wor > b) {
                    best_wor = Some(wor);
                    run.save(&best_path(out))?;
                }
                validation = Some(report);
            }
        }
    }
    run.save(out)?;
    Ok(TrainOutcome {
        steps: run.state.step,
        params: run.params,
        losses: run.losses,
        log: run.log,
        best_wor,
        validation,
    })
}

/// Documents cut down to the first `max_tokens` Hebrew tokens overall.
pub fn sample_tokens(docs: &[Document], max_tokens: usize) -> Vec<Document> {
    let mut left = max_tokens;
    let mut out = Vec::new();
    for d in docs {
        if left == 0 {
            break;
        }
        let spans = hebrew_token_spans(&d.chars);
        let mut doc = d.clone();
        if spans.len() > left {
            doc.chars.truncate(spans[left - 1].end);
            left = 0;
        } else {
            left -= spans.len();
        }
        out.push(doc);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOutcome {
    /// Micro-averaged DEC on the sample after the last epoch run.
    pub dec: f64,
    pub epochs: usize,
}

pub const PROBE_MAX_TOKENS: usize = 1000;

/// Trains on `sample` alone and scores DEC on it after every epoch, stopping
/// once `target` is reached or after `max_epochs`.
pub fn overfit_probe(
    config: &ModelConfig,
    sample: &[Document],
    max_epochs: usize,
    target: f64,
    plan: &TrainPlan,
) -> Result<ProbeOutcome, TrainError> {
    let tokens: usize = sample.iter().map(Document::token_count).sum();
    if tokens > PROBE_MAX_TOKENS {
        return Err(TrainError::InvalidPlan(format!("probe sample has {tokens} tokens, limit {PROBE_MAX_TOKENS}")));
    }
    let vocab = Vocabulary::default();
    let sets = &config.letter_sets;
    let chunks: Vec<Chunk> = sample.iter().flat_map(|d| chunk_document(d, MAX_CHUNK_LEN, &vocab, sets)).collect();
    if chunks.is_empty() {
        return Err(TrainError::NoData(Split::Modern));
    }
    let steps_per_epoch = chunks.len().div_ceil(plan.batch_size) as u64;
    let schedule = plan.schedule_for(steps_per_epoch);
    schedule.validate()?;
    let mut params = network::init_params(config, plan.seed);
    let mut state = AdamState::new(config);
    let mut dec = 0.0;
    for epoch in 0..max_epochs {
        for batch in make_batches(&chunks, plan.batch_size, mix(plan.seed, epoch as u64)) {
            let seed = mix(plan.seed, state.step);
            let (_, cache) = network::forward(config, &params, &batch, Mode::Train { seed }, plan.exec)?;
            let cache = cache.expect("training forward returns a cache");
            let (_, grads) = network::loss_and_backward(config, &params, &cache, &batch, plan.exec)?;
            let lr = lr_at(&schedule, state.step);
            adam_step(&mut params, &grads, &mut state, &plan.adam, lr)?;
        }
        let pred = predict_documents(config, &params, &vocab, sample, plan.exec)?;
        let mut counts = Counts::default();
        for (g, p) in sample.iter().zip(&pred) {
            let pairs: Vec<(MarkedChar, MarkedChar)> = metrics::align(&g.chars, &p.chars)?;
            let c = metrics::dec_accuracy(&pairs, sets);
            counts.correct += c.correct;
            counts.total += c.total;
        }
        dec = counts.ratio().unwrap_or(1.0);
        log::debug!("probe epoch {}: DEC {:.4}", epoch + 1, dec);
        if dec >= target {
            return Ok(ProbeOutcome { dec, epochs: epoch + 1 });
        }
    }
    Ok(ProbeOutcome { dec, epochs: max_epochs })
}
