//! Corpus loading, Hebrew tokenization, chunking and batch encoding.

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::codec::{
    self, is_shin, Letter, LetterSets, MarkedChar, GERESH, GERSHAYIM, MAQAF,
};
use crate::exec::Exec;

/// Longest chunk fed to the tagger.
pub const MAX_CHUNK_LEN: usize = 80;
pub const DEFAULT_BATCH_SIZE: usize = 64;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no documents found under {0}")]
    EmptyCorpus(PathBuf),
    #[error("duplicate document id {0}")]
    DuplicateId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    PreModern,
    Modern,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::PreModern, Split::Modern, Split::Validation, Split::Test];

    pub fn dir_name(self) -> &'static str {
        match self {
            Split::PreModern => "premodern",
            Split::Modern => "modern",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub source: String,
    pub chars: Vec<MarkedChar>,
    pub original: String,
}

impl Document {
    /// Normalizes and decomposes `original`, repairing any invariant
    /// violations by dropping the offending marks.
    pub fn parse(id: impl Into<String>, source: impl Into<String>, original: String, sets: &LetterSets) -> Self {
        let id = id.into();
        let normalized = codec::normalize(&original);
        let body = normalized.trim_start_matches(|c| codec::classify_char(c).is_mark());
        if body.len() != normalized.len() {
            log::warn!("{id}: dropped combining marks before the first base character");
        }
        let mut chars = codec::decompose(body).expect("leading marks were trimmed");
        let violations = codec::validate_with(&chars, sets);
        if !violations.is_empty() {
            log::warn!(
                "{id}: {} invalid mark combination(s), first at character {} ({})",
                violations.len(),
                violations[0].position,
                violations[0].kind
            );
            for v in &violations {
                chars[v.position] = codec::repair(chars[v.position], sets);
            }
        }
        Document {
            id,
            source: source.into(),
            chars,
            original,
        }
    }

    pub fn token_count(&self) -> usize {
        hebrew_token_count(&self.chars)
    }

    /// The undotted letter stream of this document.
    pub fn stripped(&self) -> Vec<MarkedChar> {
        self.chars.iter().map(MarkedChar::stripped).collect()
    }
}

fn collect_txt_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CorpusError> {
    let io = |source| CorpusError::Io {
        path: dir.to_path_buf(),
        source,
    };
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.is_dir() {
            collect_txt_files(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "txt") {
            out.push(path);
        }
    }
    Ok(())
}

/// Loads every `.txt` file below `dir`, one document per file. Document ids
/// are paths relative to `dir`; the source is the first directory component.
pub fn load_documents(dir: &Path, sets: &LetterSets, exec: Exec) -> Result<Vec<Document>, CorpusError> {
    let mut files = Vec::new();
    collect_txt_files(dir, &mut files)?;
    if files.is_empty() {
        return Err(CorpusError::EmptyCorpus(dir.to_path_buf()));
    }
    files.sort();
    let docs = exec.map(&files, |path| -> Result<Document, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.clone(),
            source,
        })?;
        let rel = path.strip_prefix(dir).unwrap_or(path);
        let id = rel.to_string_lossy().replace('\\', "/");
        let source = match rel.components().count() {
            0 | 1 => String::new(),
            _ => rel.components().next().map(|c| c.as_os_str().to_string_lossy().into_owned()).unwrap_or_default(),
        };
        Ok(Document::parse(id, source, text, sets))
    });
    docs.into_iter().collect()
}

pub fn load_corpus(root: &Path, split: Split, sets: &LetterSets) -> Result<Vec<Document>, CorpusError> {
    load_documents(&root.join(split.dir_name()), sets, Exec::default())
}

fn is_geresh_like(letter: Letter) -> bool {
    matches!(letter, Letter::Punct(c) if c == GERESH || c == GERSHAYIM || c == '\'' || c == '"')
}

/// Maximal spans of Hebrew letters, with geresh/gershayim included only when
/// they sit between two Hebrew letters.
pub fn hebrew_token_spans(chars: &[MarkedChar]) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].letter.is_hebrew() {
            i += 1;
            continue;
        }
        let start = i;
        i += 1;
        loop {
            if i < chars.len() && chars[i].letter.is_hebrew() {
                i += 1;
            } else if i + 1 < chars.len() && is_geresh_like(chars[i].letter) && chars[i + 1].letter.is_hebrew() {
                i += 2;
            } else {
                break;
            }
        }
        spans.push(start..i);
    }
    spans
}

pub fn hebrew_token_count(chars: &[MarkedChar]) -> usize {
    hebrew_token_spans(chars).len()
}

/// Greedy whitespace-bounded packing. Each span ends just after the last
/// space within `max_len` characters of its start, or is hard-split at
/// `max_len` when no space is available. Spans cover `0..len` exactly.
pub fn chunk_spans(chars: &[MarkedChar], max_len: usize) -> Vec<Range<usize>> {
    assert!(max_len > 0, "max_len must be positive");
    let n = chars.len();
    let mut spans = Vec::with_capacity(n / max_len + 1);
    let mut start = 0;
    while start < n {
        if n - start <= max_len {
            spans.push(start..n);
            break;
        }
        let window = &chars[start..start + max_len];
        let end = match window.iter().rposition(|c| c.letter.is_space()) {
            Some(p) => start + p + 1,
            None => start + max_len,
        };
        spans.push(start..end);
        start = end;
    }
    spans
}

/// Letters known to the tagger. Index 0 is padding and index 1 unknown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    letters: Vec<Letter>,
    index: HashMap<Letter, u32>,
}

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;

impl Default for Vocabulary {
    fn default() -> Self {
        let mut letters = vec![
            Letter::Pad,
            Letter::Unk,
            Letter::Space,
            Letter::DigitSymbol,
            Letter::LatinSymbol,
        ];
        letters.extend(('\u{05D0}'..='\u{05EA}').map(Letter::Hebrew));
        letters.extend((0u8..128).map(char::from).filter(char::is_ascii_punctuation).map(Letter::Punct));
        letters.extend([GERESH, GERSHAYIM, MAQAF].map(Letter::Punct));
        Vocabulary::from_letters(letters).expect("default vocabulary is well formed")
    }
}

impl Vocabulary {
    pub fn from_letters(letters: Vec<Letter>) -> Result<Self, String> {
        if letters.first() != Some(&Letter::Pad) || letters.get(1) != Some(&Letter::Unk) {
            return Err("vocabulary must start with <pad>, <unk>".into());
        }
        let mut index = HashMap::with_capacity(letters.len());
        for (i, l) in letters.iter().enumerate() {
            if index.insert(*l, i as u32).is_some() {
                return Err(format!("duplicate vocabulary entry {l}"));
            }
        }
        Ok(Vocabulary { letters, index })
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn id(&self, letter: Letter) -> u32 {
        self.index.get(&letter).copied().unwrap_or(UNK_ID)
    }

    pub fn letter(&self, id: u32) -> Letter {
        self.letters.get(id as usize).copied().unwrap_or(Letter::Unk)
    }

    /// One entry per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for l in &self.letters {
            match l {
                Letter::Pad => out.push_str("<pad>"),
                Letter::Unk => out.push_str("<unk>"),
                Letter::Space => out.push_str("<space>"),
                Letter::DigitSymbol => out.push_str("<digit>"),
                Letter::LatinSymbol => out.push_str("<latin>"),
                Letter::Hebrew(c) | Letter::Punct(c) => out.push(*c),
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, String> {
        let letters = text
            .lines()
            .map(|line| match line {
                "<pad>" => Ok(Letter::Pad),
                "<unk>" => Ok(Letter::Unk),
                "<space>" => Ok(Letter::Space),
                "<digit>" => Ok(Letter::DigitSymbol),
                "<latin>" => Ok(Letter::LatinSymbol),
                _ => {
                    let mut it = line.chars();
                    match (it.next(), it.next()) {
                        (Some(c), None) if codec::is_hebrew_letter(c) => Ok(Letter::Hebrew(c)),
                        (Some(c), None) => Ok(Letter::Punct(c)),
                        _ => Err(format!("bad vocabulary entry {line:?}")),
                    }
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Vocabulary::from_letters(letters)
    }
}

/// An encoded window of at most [`MAX_CHUNK_LEN`] characters.
///
/// `offset..offset + span_len` is the range of document characters the chunk
/// owns. Trailing whitespace inside that range carries no decision and is not
/// encoded, so `letter_ids.len() <= span_len`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Chunk {
    pub doc_id: String,
    pub offset: usize,
    pub span_len: usize,
    pub letter_ids: Vec<u32>,
    pub niqqud_gold: Vec<u8>,
    pub dagesh_gold: Vec<u8>,
    pub sin_gold: Vec<u8>,
    pub niqqud_mask: Vec<bool>,
    pub dagesh_mask: Vec<bool>,
    pub sin_mask: Vec<bool>,
}

impl Chunk {
    pub fn len(&self) -> usize {
        self.letter_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letter_ids.is_empty()
    }
}

/// Encodes characters into ids, gold label indices and decision masks. Gold
/// labels are forced to NONE wherever the mask is false.
pub fn encode(chars: &[MarkedChar], vocab: &Vocabulary, sets: &LetterSets) -> Chunk {
    let mut chunk = Chunk {
        span_len: chars.len(),
        ..Chunk::default()
    };
    for c in chars {
        let id = vocab.id(c.letter);
        if id == UNK_ID && c.letter != Letter::Unk {
            log::debug!("letter {} is not in the vocabulary", c.letter);
        }
        chunk.letter_ids.push(id);
        let n = sets.can_niqqud(c.letter);
        let d = sets.can_dagesh(c.letter);
        let s = is_shin(c.letter);
        chunk.niqqud_mask.push(n);
        chunk.dagesh_mask.push(d);
        chunk.sin_mask.push(s);
        chunk.niqqud_gold.push(if n { c.niqqud.index() as u8 } else { 0 });
        chunk.dagesh_gold.push(if d { c.dagesh.index() as u8 } else { 0 });
        chunk.sin_gold.push(if s { c.sin.index() as u8 } else { 0 });
    }
    chunk
}

/// Splits a character stream into encoded chunks.
pub fn chunk_chars(
    doc_id: &str,
    chars: &[MarkedChar],
    max_len: usize,
    vocab: &Vocabulary,
    sets: &LetterSets,
) -> Vec<Chunk> {
    chunk_spans(chars, max_len)
        .into_iter()
        .map(|span| {
            let body = &chars[span.clone()];
            let keep = body.len() - body.iter().rev().take_while(|c| c.letter.is_space()).count();
            let mut chunk = encode(&body[..keep], vocab, sets);
            chunk.doc_id = doc_id.to_string();
            chunk.offset = span.start;
            chunk.span_len = span.len();
            chunk
        })
        .collect()
}

pub fn chunk_document(doc: &Document, max_len: usize, vocab: &Vocabulary, sets: &LetterSets) -> Vec<Chunk> {
    chunk_chars(&doc.id, &doc.chars, max_len, vocab, sets)
}

/// A right-padded batch laid out row-major as `size × max_len`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Batch {
    pub size: usize,
    pub max_len: usize,
    pub lengths: Vec<usize>,
    pub letter_ids: Vec<u32>,
    pub niqqud_gold: Vec<u8>,
    pub dagesh_gold: Vec<u8>,
    pub sin_gold: Vec<u8>,
    pub niqqud_mask: Vec<bool>,
    pub dagesh_mask: Vec<bool>,
    pub sin_mask: Vec<bool>,
}

impl Batch {
    pub fn from_chunks(chunks: &[&Chunk]) -> Batch {
        let size = chunks.len();
        let max_len = chunks.iter().map(|c| c.len()).max().unwrap_or(0);
        let cells = size * max_len;
        let mut b = Batch {
            size,
            max_len,
            lengths: chunks.iter().map(|c| c.len()).collect(),
            letter_ids: vec![PAD_ID; cells],
            niqqud_gold: vec![0; cells],
            dagesh_gold: vec![0; cells],
            sin_gold: vec![0; cells],
            niqqud_mask: vec![false; cells],
            dagesh_mask: vec![false; cells],
            sin_mask: vec![false; cells],
        };
        for (row, c) in chunks.iter().enumerate() {
            let at = row * max_len;
            let n = c.len();
            b.letter_ids[at..at + n].copy_from_slice(&c.letter_ids);
            b.niqqud_gold[at..at + n].copy_from_slice(&c.niqqud_gold);
            b.dagesh_gold[at..at + n].copy_from_slice(&c.dagesh_gold);
            b.sin_gold[at..at + n].copy_from_slice(&c.sin_gold);
            b.niqqud_mask[at..at + n].copy_from_slice(&c.niqqud_mask);
            b.dagesh_mask[at..at + n].copy_from_slice(&c.dagesh_mask);
            b.sin_mask[at..at + n].copy_from_slice(&c.sin_mask);
        }
        b
    }

    pub fn ids(&self, row: usize) -> &[u32] {
        let at = row * self.max_len;
        &self.letter_ids[at..at + self.lengths[row]]
    }
}

/// Shuffles chunks deterministically under `seed` and groups them into padded
/// batches of at most `batch_size`.
pub fn make_batches(chunks: &[Chunk], batch_size: usize, seed: u64) -> Vec<Batch> {
    assert!(batch_size > 0, "batch_size must be positive");
    let mut order: Vec<usize> = (0..chunks.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
        .chunks(batch_size)
        .map(|idx| Batch::from_chunks(&idx.iter().map(|&i| &chunks[i]).collect::<Vec<_>>()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DecisionCounts {
    pub niqqud: usize,
    pub dagesh: usize,
    pub sin: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitStats {
    pub split: Split,
    pub documents: usize,
    pub tokens: usize,
    pub chars: usize,
    pub decisions: DecisionCounts,
}

impl SplitStats {
    pub fn of(split: Split, docs: &[Document], sets: &LetterSets) -> Self {
        let mut decisions = DecisionCounts::default();
        for c in docs.iter().flat_map(|d| &d.chars) {
            decisions.niqqud += sets.can_niqqud(c.letter) as usize;
            decisions.dagesh += sets.can_dagesh(c.letter) as usize;
            decisions.sin += is_shin(c.letter) as usize;
        }
        SplitStats {
            split,
            documents: docs.len(),
            tokens: docs.iter().map(Document::token_count).sum(),
            chars: docs.iter().map(|d| d.chars.len()).sum(),
            decisions,
        }
    }

    /// `split<TAB>docs<TAB>tokens<TAB>chars`
    pub fn tsv_line(&self) -> String {
        format!("{}\t{}\t{}\t{}", self.split, self.documents, self.tokens, self.chars)
    }
}

/// Statistics for every split directory present under `root`.
pub fn corpus_stats(root: &Path, sets: &LetterSets) -> Result<Vec<SplitStats>, CorpusError> {
    let mut out = Vec::new();
    for split in Split::ALL {
        if !root.join(split.dir_name()).is_dir() {
            continue;
        }
        let docs = load_corpus(root, split, sets)?;
        out.push(SplitStats::of(split, &docs, sets));
    }
    if out.is_empty() {
        return Err(CorpusError::EmptyCorpus(root.to_path_buf()));
    }
    Ok(out)
}
