//! Raw text in, dotted text out.
//!
//! Existing marks are stripped, the text is normalized and tagged chunk by
//! chunk, and the predicted marks are inserted after the corresponding
//! letters of the stripped input. Everything else in the input, including
//! characters normalization drops, is copied through unchanged.

use std::io::{BufRead, Write};
use std::ops::Range;
use std::path::Path;

use crate::codec::{self, DageshLabel, Letter, MarkedChar, NiqqudLabel, SinLabel};
use crate::corpus::{chunk_chars, Batch, Chunk, Vocabulary, DEFAULT_BATCH_SIZE, MAX_CHUNK_LEN};
use crate::exec::Exec;
use crate::network::{self, Logits, Mode, ModelConfig, NetworkError, Parameters};

/// Where each normalized character came from in the raw text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentMap {
    /// Byte span in the raw text of each normalized character.
    pub spans: Vec<Range<usize>>,
    /// Raw byte spans that produced no normalized character.
    pub removed: Vec<Range<usize>>,
}

impl AlignmentMap {
    /// Normalizes `raw` and records the alignment.
    pub fn build(raw: &str) -> (String, AlignmentMap) {
        let (normalized, spans) = codec::normalize_with_spans(raw);
        let mut removed = Vec::new();
        let mut at = 0;
        // Collapsed whitespace runs are claimed by their first character, so
        // spans are sorted and never overlap.
        for s in &spans {
            if s.start > at {
                removed.push(at..s.start);
            }
            at = s.end;
        }
        if at < raw.len() {
            removed.push(at..raw.len());
        }
        (normalized, AlignmentMap { spans, removed })
    }
}

type Labels = (NiqqudLabel, DageshLabel, SinLabel);

fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Independent per-head argmax at every real position of `batch`; masked
/// categories are NONE and ties go to the lower label index.
pub fn decode_labels(logits: &Logits, batch: &Batch) -> Vec<Vec<Labels>> {
    (0..batch.size)
        .map(|row| {
            (0..batch.lengths[row])
                .map(|t| {
                    let i = row * batch.max_len + t;
                    let niqqud = if batch.niqqud_mask[i] {
                        NiqqudLabel::from_index(argmax(logits.niqqud_at(row, t))).expect("head width matches labels")
                    } else {
                        NiqqudLabel::None
                    };
                    let dagesh = if batch.dagesh_mask[i] {
                        DageshLabel::from_index(argmax(logits.dagesh_at(row, t))).expect("head width matches labels")
                    } else {
                        DageshLabel::None
                    };
                    // The sin head has no NONE class.
                    let sin = if batch.sin_mask[i] {
                        SinLabel::from_index(argmax(logits.sin_at(row, t)) + 1).expect("head width matches labels")
                    } else {
                        SinLabel::None
                    };
                    (niqqud, dagesh, sin)
                })
                .collect()
        })
        .collect()
}

/// Chunks `chars`, runs inference in batches of `batch_size` and returns
/// the stripped characters with predicted marks.
pub fn predict(
    config: &ModelConfig,
    params: &Parameters,
    vocab: &Vocabulary,
    chars: &[MarkedChar],
    batch_size: usize,
    exec: Exec,
) -> Result<Vec<MarkedChar>, NetworkError> {
    let sets = &config.letter_sets;
    let mut out: Vec<MarkedChar> = chars.iter().map(MarkedChar::stripped).collect();
    if !out.iter().any(|c| sets.has_decision(c.letter)) {
        return Ok(out);
    }
    let chunks = chunk_chars("", &out, MAX_CHUNK_LEN, vocab, sets);
    for group in chunks.chunks(batch_size.max(1)) {
        let refs: Vec<&Chunk> = group.iter().collect();
        let batch = Batch::from_chunks(&refs);
        let (logits, _) = network::forward(config, params, &batch, Mode::Infer, exec)?;
        for (chunk, labels) in group.iter().zip(decode_labels(&logits, &batch)) {
            for (t, (niqqud, dagesh, sin)) in labels.into_iter().enumerate() {
                let c = &mut out[chunk.offset + t];
                c.niqqud = niqqud;
                c.dagesh = dagesh;
                c.sin = sin;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Dotter {
    pub params: Parameters,
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub exec: Exec,
    pub batch_size: usize,
}

impl Dotter {
    pub fn new(params: Parameters, config: ModelConfig, vocab: Vocabulary) -> Self {
        Dotter {
            params,
            config,
            vocab,
            exec: Exec::default(),
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }

    pub fn from_checkpoint(path: &Path) -> Result<Self, NetworkError> {
        let (params, config, vocab) = network::load_checkpoint(path)?;
        config.validate()?;
        Ok(Dotter::new(params, config, vocab))
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    /// Predicts marks for a normalized character stream. Marks already
    /// present on `chars` are ignored.
    pub fn predict_chars(&self, chars: &[MarkedChar]) -> Result<Vec<MarkedChar>, NetworkError> {
        predict(&self.config, &self.params, &self.vocab, chars, self.batch_size, self.exec)
    }

    /// Dots `raw`. The output is the input with its Hebrew marks replaced
    /// by predicted ones; no other character is added, removed or moved.
    pub fn dot(&self, raw: &str) -> Result<String, NetworkError> {
        let stripped = codec::strip_diacritics(raw);
        let (normalized, map) = AlignmentMap::build(&stripped);
        let chars: Vec<MarkedChar> = normalized.chars().map(|c| MarkedChar::bare(Letter::from_char(c))).collect();
        debug_assert_eq!(chars.len(), map.spans.len());
        let predicted = self.predict_chars(&chars)?;
        let mut out = String::with_capacity(stripped.len() * 2);
        let mut at = 0;
        for (c, span) in predicted.iter().zip(&map.spans) {
            if c.has_marks() {
                out.push_str(&stripped[at..span.end]);
                codec::push_marks(&mut out, c);
                at = span.end;
            }
        }
        out.push_str(&stripped[at..]);
        Ok(out)
    }

    /// Dots `reader` line by line, keeping line terminators as they are.
    pub fn dot_stream(&self, mut reader: impl BufRead, mut writer: impl Write) -> Result<(), NetworkError> {
        let mut line = String::new();
        loop {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                break;
            }
            let body = line.trim_end_matches(['\n', '\r']);
            let ending = &line[body.len()..];
            writer.write_all(self.dot(body)?.as_bytes())?;
            writer.write_all(ending.as_bytes())?;
            writer.flush()?;
        }
        Ok(())
    }
}
