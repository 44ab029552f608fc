//! DEC, CHA, WOR and VOC accuracy with document-level macro averaging.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::Range;

use thiserror::Error;

use crate::codec::{vocalization_signature, LetterSets, MarkedChar};
use crate::corpus::{hebrew_token_spans, Document};
use crate::exec::Exec;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{doc_id}: letter streams diverge at character {position}")]
    LetterStreamMismatch { doc_id: String, position: usize },
    #[error("no prediction for document {0}")]
    MissingPrediction(String),
    #[error("{doc_id}: VOC {voc} is below WOR {wor}")]
    VocBelowWor { doc_id: String, voc: f64, wor: f64 },
}

/// Pairs gold and predicted characters position by position. The letter
/// streams must be identical.
pub fn align(gold: &[MarkedChar], pred: &[MarkedChar]) -> Result<Vec<(MarkedChar, MarkedChar)>, MetricsError> {
    if let Some(position) = gold.iter().zip(pred).position(|(g, p)| g.letter != p.letter) {
        return Err(MetricsError::LetterStreamMismatch {
            doc_id: String::new(),
            position,
        });
    }
    if gold.len() != pred.len() {
        return Err(MetricsError::LetterStreamMismatch {
            doc_id: String::new(),
            position: gold.len().min(pred.len()),
        });
    }
    Ok(gold.iter().copied().zip(pred.iter().copied()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub correct: usize,
    pub total: usize,
}

impl Counts {
    /// `None` for an empty denominator.
    pub fn ratio(self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }

    fn add(&mut self, ok: bool) {
        self.total += 1;
        self.correct += ok as usize;
    }
}

/// Number of decisions at one position and how many of them match.
fn decisions(g: &MarkedChar, p: &MarkedChar, sets: &LetterSets) -> (usize, usize) {
    let mut total = 0;
    let mut correct = 0;
    for (applies, same) in [
        (sets.can_dagesh(g.letter), g.dagesh == p.dagesh),
        (sets.is_shin(g.letter), g.sin == p.sin),
        (sets.can_niqqud(g.letter), g.niqqud == p.niqqud),
    ] {
        if applies {
            total += 1;
            correct += same as usize;
        }
    }
    (correct, total)
}

fn char_correct(g: &MarkedChar, p: &MarkedChar, sets: &LetterSets) -> bool {
    let (c, t) = decisions(g, p, sets);
    c == t
}

pub fn dec_accuracy(pairs: &[(MarkedChar, MarkedChar)], sets: &LetterSets) -> Counts {
    pairs.iter().fold(Counts::default(), |acc, (g, p)| {
        let (c, t) = decisions(g, p, sets);
        Counts {
            correct: acc.correct + c,
            total: acc.total + t,
        }
    })
}

pub fn cha_accuracy(pairs: &[(MarkedChar, MarkedChar)], sets: &LetterSets) -> Counts {
    let mut counts = Counts::default();
    for (g, p) in pairs {
        if sets.has_decision(g.letter) {
            counts.add(char_correct(g, p, sets));
        }
    }
    counts
}

pub fn wor_accuracy(pairs: &[(MarkedChar, MarkedChar)], tokens: &[Range<usize>], sets: &LetterSets) -> Counts {
    let mut counts = Counts::default();
    for span in tokens {
        counts.add(pairs[span.clone()].iter().all(|(g, p)| char_correct(g, p, sets)));
    }
    counts
}

pub fn voc_accuracy(pairs: &[(MarkedChar, MarkedChar)], tokens: &[Range<usize>]) -> Counts {
    let mut counts = Counts::default();
    for span in tokens {
        counts.add(
            pairs[span.clone()]
                .iter()
                .all(|(g, p)| vocalization_signature(g) == vocalization_signature(p)),
        );
    }
    counts
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocMetrics {
    pub doc_id: String,
    pub dec: Counts,
    pub cha: Counts,
    pub wor: Counts,
    pub voc: Counts,
}

impl DocMetrics {
    pub fn compute(doc_id: &str, gold: &[MarkedChar], pred: &[MarkedChar], sets: &LetterSets) -> Result<Self, MetricsError> {
        let pairs = align(gold, pred).map_err(|e| match e {
            MetricsError::LetterStreamMismatch { position, .. } => MetricsError::LetterStreamMismatch {
                doc_id: doc_id.to_string(),
                position,
            },
            other => other,
        })?;
        let tokens = hebrew_token_spans(gold);
        let m = DocMetrics {
            doc_id: doc_id.to_string(),
            dec: dec_accuracy(&pairs, sets),
            cha: cha_accuracy(&pairs, sets),
            wor: wor_accuracy(&pairs, &tokens, sets),
            voc: voc_accuracy(&pairs, &tokens),
        };
        m.check_voc()?;
        Ok(m)
    }

    /// `[dec, cha, wor, voc]`, or `None` when the document has no decisions.
    pub fn values(&self) -> Option<[f64; 4]> {
        let dec = self.dec.ratio()?;
        Some([
            dec,
            self.cha.ratio().unwrap_or(1.0),
            self.wor.ratio().unwrap_or(1.0),
            self.voc.ratio().unwrap_or(1.0),
        ])
    }

    fn check_voc(&self) -> Result<(), MetricsError> {
        if self.voc.correct < self.wor.correct {
            return Err(MetricsError::VocBelowWor {
                doc_id: self.doc_id.clone(),
                voc: self.voc.ratio().unwrap_or(0.0),
                wor: self.wor.ratio().unwrap_or(0.0),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Documents with at least one decision, in gold order.
    pub docs: Vec<DocMetrics>,
    /// Ids of documents left out of the macro average.
    pub excluded: Vec<String>,
}

impl MetricsReport {
    /// Unweighted mean over documents of `[dec, cha, wor, voc]`.
    pub fn macro_avg(&self) -> [f64; 4] {
        let mut sum = [0.0; 4];
        for d in &self.docs {
            let v = d.values().expect("included documents have decisions");
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
        }
        let n = self.docs.len().max(1) as f64;
        sum.map(|s| s / n)
    }

    pub fn wor(&self) -> f64 {
        self.macro_avg()[2]
    }

    pub fn to_tsv(&self, with_counts: bool) -> String {
        let mut out = String::new();
        let fmt_counts = |c: Counts| format!("\t{}/{}", c.correct, c.total);
        for d in &self.docs {
            let v = d.values().expect("included documents have decisions");
            write_row(&mut out, &d.doc_id, v);
            if with_counts {
                out.pop();
                for c in [d.dec, d.cha, d.wor, d.voc] {
                    out.push_str(&fmt_counts(c));
                }
                out.push('\n');
            }
        }
        write_row(&mut out, "MACRO", self.macro_avg());
        out
    }
}

fn write_row(out: &mut String, label: &str, v: [f64; 4]) {
    let _ = writeln!(
        out,
        "{label}\t{:.2}\t{:.2}\t{:.2}\t{:.2}",
        v[0] * 100.0,
        v[1] * 100.0,
        v[2] * 100.0,
        v[3] * 100.0
    );
}

/// Scores `pred` against `gold`, pairing documents by id. Predictions for
/// ids absent from `gold` are ignored.
pub fn evaluate(gold: &[Document], pred: &[Document], sets: &LetterSets, exec: Exec) -> Result<MetricsReport, MetricsError> {
    let by_id: HashMap<&str, &Document> = pred.iter().map(|d| (d.id.as_str(), d)).collect();
    let pairs = gold
        .iter()
        .map(|g| {
            by_id
                .get(g.id.as_str())
                .map(|p| (g, *p))
                .ok_or_else(|| MetricsError::MissingPrediction(g.id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let results = exec.map(&pairs, |(g, p)| DocMetrics::compute(&g.id, &g.chars, &p.chars, sets));
    let mut report = MetricsReport {
        docs: Vec::new(),
        excluded: Vec::new(),
    };
    for r in results {
        let m = r?;
        if m.dec.total == 0 {
            log::warn!("{}: no decisions, excluded from the macro average", m.doc_id);
            report.excluded.push(m.doc_id);
        } else {
            report.docs.push(m);
        }
    }
    Ok(report)
}

/// Macro scores of several systems against one gold corpus, one row each.
pub fn compare(
    gold: &[Document],
    systems: &[(String, Vec<Document>)],
    sets: &LetterSets,
    exec: Exec,
) -> Result<String, MetricsError> {
    let mut out = String::from("system\tdec\tcha\twor\tvoc\n");
    for (name, pred) in systems {
        let report = evaluate(gold, pred, sets, exec)?;
        write_row(&mut out, name, report.macro_avg());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::decompose;

    fn chars(s: &str) -> Vec<MarkedChar> {
        decompose(s).unwrap()
    }

    fn doc(s: &str) -> Vec<(MarkedChar, MarkedChar)> {
        align(&chars(s), &chars(s)).unwrap()
    }

    #[test]
    fn shalom_decision_count() {
        let sets = LetterSets::default();
        assert_eq!(dec_accuracy(&doc("שָׁלוֹם"), &sets), Counts { correct: 8, total: 8 });
        let pairs = align(&chars("שָׁלוֹם"), &chars("שַׁלוֹם")).unwrap();
        assert_eq!(dec_accuracy(&pairs, &sets), Counts { correct: 7, total: 8 });
        assert_eq!(cha_accuracy(&pairs, &sets), Counts { correct: 3, total: 4 });
    }

    #[test]
    fn empty_and_letterless_documents() {
        let sets = LetterSets::default();
        assert_eq!(dec_accuracy(&[], &sets), Counts::default());
        assert_eq!(cha_accuracy(&doc("12 ,"), &sets), Counts::default());
        let m = DocMetrics::compute("d", &chars("12"), &chars("12"), &sets).unwrap();
        assert_eq!(m.values(), None);
    }

    #[test]
    fn word_level_counts() {
        let sets = LetterSets::default();
        let gold = chars("בֵּן גָּדוֹל");
        let pred = chars("בֶּן גָּדוֹל");
        let pairs = align(&gold, &pred).unwrap();
        let tokens = hebrew_token_spans(&gold);
        assert_eq!(wor_accuracy(&pairs, &tokens, &sets), Counts { correct: 1, total: 2 });
        // Tsere and segol share a vowel class.
        assert_eq!(voc_accuracy(&pairs, &tokens), Counts { correct: 2, total: 2 });
    }

    #[test]
    fn voc_footnote_cases() {
        let sets = LetterSets::default();
        let cases = [("דָּג", "דַּג", true), ("דְּבַשׁ", "דּבַשׁ", true), ("בָּא", "בָא", false), ("תָּם", "תָם", true)];
        for (g, p, voc_ok) in cases {
            let (g, p) = (chars(g), chars(p));
            let pairs = align(&g, &p).unwrap();
            let tokens = hebrew_token_spans(&g);
            assert_eq!(wor_accuracy(&pairs, &tokens, &sets).correct, 0);
            assert_eq!(voc_accuracy(&pairs, &tokens).correct, voc_ok as usize);
        }
    }

    #[test]
    fn align_reports_first_divergence() {
        assert_eq!(
            align(&chars("אבג"), &chars("אדג")),
            Err(MetricsError::LetterStreamMismatch { doc_id: String::new(), position: 1 })
        );
        assert_eq!(
            align(&chars("אב"), &chars("אבג")),
            Err(MetricsError::LetterStreamMismatch { doc_id: String::new(), position: 2 })
        );
    }

    #[test]
    fn report_format_and_exclusion() {
        let sets = LetterSets::default();
        let parse = |id: &str, s: &str| Document::parse(id, "x", s.to_string(), &sets);
        let gold = vec![parse("a", "שָׁלוֹם"), parse("b", "123"), parse("c", "בֵּן גָּדוֹל")];
        let pred = vec![parse("c", "בֶּן גָּדוֹל"), parse("a", "שָׁלוֹם"), parse("b", "123")];
        let r = evaluate(&gold, &pred, &sets, Exec::Sequential).unwrap();
        assert_eq!(r.excluded, vec!["b".to_string()]);
        assert_eq!(r.docs.len(), 2);
        let tsv = r.to_tsv(false);
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines[0], "a\t100.00\t100.00\t100.00\t100.00");
        assert!(lines[1].starts_with("c\t"));
        assert!(lines[2].starts_with("MACRO\t"));
        assert!(r.to_tsv(true).lines().next().unwrap().ends_with("\t8/8\t4/4\t1/1\t1/1"));
        assert_eq!(r.macro_avg()[2], 0.75);
    }

    #[test]
    fn missing_prediction_is_an_error() {
        let sets = LetterSets::default();
        let gold = vec![Document::parse("a", "x", "אב".into(), &sets)];
        assert_eq!(
            evaluate(&gold, &[], &sets, Exec::Sequential),
            Err(MetricsError::MissingPrediction("a".into()))
        );
    }
}
