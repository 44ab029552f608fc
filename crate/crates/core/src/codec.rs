//! Conversion between raw Hebrew text and sequences of [`MarkedChar`], plus the
//! character-class predicates the rest of the crate relies on.
//!
//! Every base character carries at most one label from each of three
//! independent categories: the vowel-like niqqud marks, the central dot
//! (dagesh or mappiq, which share a codepoint) and the shin/sin dot.

use std::fmt;
use std::ops::Range;

use thiserror::Error;

/// Placeholder emitted by [`normalize`] for every digit.
pub const DIGIT_SYMBOL: char = '0';
/// Placeholder emitted by [`normalize`] for every Latin letter.
pub const LATIN_SYMBOL: char = 'x';

const ALEF: u32 = 0x05D0;
const TAV: u32 = 0x05EA;
/// Number of Hebrew letter forms, finals included.
pub const HEBREW_LETTER_COUNT: usize = 27;

pub const SHIN: char = '\u{05E9}';
pub const DAGESH: char = '\u{05BC}';
pub const SHIN_DOT: char = '\u{05C1}';
pub const SIN_DOT: char = '\u{05C2}';
pub const GERESH: char = '\u{05F3}';
pub const GERSHAYIM: char = '\u{05F4}';
pub const MAQAF: char = '\u{05BE}';

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("combining mark U+{codepoint:04X} at character {position} precedes any base character")]
    LeadingMark { position: usize, codepoint: u32 },
    #[error("character {position} violates an invariant: {kind}")]
    InvariantViolation { position: usize, kind: ViolationKind },
}

/// Unicode partition used by normalization and decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CharClass {
    HebrewLetter,
    NiqqudMark,
    DageshMark,
    SinShinMark,
    DroppedMark,
    Space,
    Punct,
    Digit,
    Latin,
    Other,
}

impl CharClass {
    pub fn is_mark(self) -> bool {
        matches!(
            self,
            CharClass::NiqqudMark
                | CharClass::DageshMark
                | CharClass::SinShinMark
                | CharClass::DroppedMark
        )
    }
}

pub fn is_hebrew_letter(c: char) -> bool {
    (ALEF..=TAV).contains(&(c as u32))
}

fn is_space(c: char) -> bool {
    matches!(c, ' ' | '\t' | '\n' | '\r' | '\x0B' | '\x0C')
}

fn is_latin(c: char) -> bool {
    c.is_ascii_alphabetic()
        || (('\u{00C0}'..='\u{024F}').contains(&c) && c != '\u{00D7}' && c != '\u{00F7}')
}

/// Maps typographic punctuation onto its ASCII equivalent. Returns `None` for
/// anything outside the punctuation whitelist.
fn punct_equivalent(c: char) -> Option<char> {
    match c {
        _ if c.is_ascii_punctuation() => Some(c),
        GERESH | GERSHAYIM | MAQAF => Some(c),
        '\u{2018}' | '\u{2019}' | '\u{201A}' | '\u{201B}' => Some('\''),
        '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{201F}' => Some('"'),
        '\u{2010}'..='\u{2015}' => Some('-'),
        _ => None,
    }
}

/// Total classification of Unicode scalar values.
pub fn classify_char(c: char) -> CharClass {
    match c as u32 {
        0x05D0..=0x05EA => CharClass::HebrewLetter,
        0x05B0..=0x05BB | 0x05C7 => CharClass::NiqqudMark,
        0x05BC => CharClass::DageshMark,
        0x05C1 | 0x05C2 => CharClass::SinShinMark,
        0x0591..=0x05AF | 0x05BD | 0x05BF | 0x05C4 | 0x05C5 => CharClass::DroppedMark,
        _ if is_space(c) => CharClass::Space,
        _ if c.is_ascii_digit() => CharClass::Digit,
        _ if is_latin(c) => CharClass::Latin,
        _ if punct_equivalent(c).is_some() => CharClass::Punct,
        _ => CharClass::Other,
    }
}

/// The base-character identity of one position in a normalized stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Letter {
    Hebrew(char),
    Space,
    Punct(char),
    DigitSymbol,
    LatinSymbol,
    Pad,
    Unk,
}

impl Letter {
    /// Base letter for a non-mark character as it appears in normalized text.
    pub fn from_char(c: char) -> Letter {
        match classify_char(c) {
            CharClass::HebrewLetter => Letter::Hebrew(c),
            CharClass::Space => Letter::Space,
            CharClass::Punct => Letter::Punct(punct_equivalent(c).unwrap_or(c)),
            CharClass::Digit => Letter::DigitSymbol,
            CharClass::Latin => Letter::LatinSymbol,
            _ => Letter::Unk,
        }
    }

    /// The character written for this letter in composed output.
    pub fn to_char(self) -> Option<char> {
        match self {
            Letter::Hebrew(c) | Letter::Punct(c) => Some(c),
            Letter::Space => Some(' '),
            Letter::DigitSymbol => Some(DIGIT_SYMBOL),
            Letter::LatinSymbol => Some(LATIN_SYMBOL),
            Letter::Pad => None,
            Letter::Unk => Some('\u{FFFD}'),
        }
    }

    pub fn is_hebrew(self) -> bool {
        matches!(self, Letter::Hebrew(c) if is_hebrew_letter(c))
    }

    pub fn is_space(self) -> bool {
        self == Letter::Space
    }

    fn hebrew_index(self) -> Option<usize> {
        match self {
            Letter::Hebrew(c) if is_hebrew_letter(c) => Some((c as u32 - ALEF) as usize),
            _ => None,
        }
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Letter::Pad => f.write_str("<pad>"),
            Letter::Unk => f.write_str("<unk>"),
            other => write!(f, "{}", other.to_char().unwrap_or('?')),
        }
    }
}

macro_rules! label_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident = $mark:expr),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
        pub enum $name {
            #[default]
            None,
            $($variant,)*
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$name::None, $($name::$variant,)*];
            pub const COUNT: usize = Self::ALL.len();

            pub fn index(self) -> usize {
                self as usize
            }

            pub fn from_index(index: usize) -> Option<Self> {
                Self::ALL.get(index).copied()
            }

            /// Combining mark for this label, `None` for the empty label.
            pub fn mark(self) -> Option<char> {
                match self {
                    $name::None => None,
                    $($name::$variant => Some($mark),)*
                }
            }

            pub fn is_none(self) -> bool {
                self == $name::None
            }
        }
    };
}

label_enum! {
    /// Vowel-category label. Qamats qatan and holam haser for vav are folded
    /// into qamats and holam on input and never produced.
    NiqqudLabel {
        Sheva = '\u{05B0}',
        HatafSegol = '\u{05B1}',
        HatafPatah = '\u{05B2}',
        HatafQamats = '\u{05B3}',
        Hiriq = '\u{05B4}',
        Tsere = '\u{05B5}',
        Segol = '\u{05B6}',
        Patah = '\u{05B7}',
        Qamats = '\u{05B8}',
        Holam = '\u{05B9}',
        Qubuts = '\u{05BB}',
    }
}

label_enum! {
    /// Dagesh or mappiq (same codepoint).
    DageshLabel { Dagesh = DAGESH }
}

label_enum! {
    SinLabel { ShinDot = SHIN_DOT, SinDot = SIN_DOT }
}

impl NiqqudLabel {
    fn from_mark(c: char) -> Option<Self> {
        Some(match c as u32 {
            0x05B0 => NiqqudLabel::Sheva,
            0x05B1 => NiqqudLabel::HatafSegol,
            0x05B2 => NiqqudLabel::HatafPatah,
            0x05B3 => NiqqudLabel::HatafQamats,
            0x05B4 => NiqqudLabel::Hiriq,
            0x05B5 => NiqqudLabel::Tsere,
            0x05B6 => NiqqudLabel::Segol,
            0x05B7 => NiqqudLabel::Patah,
            0x05B8 | 0x05C7 => NiqqudLabel::Qamats,
            0x05B9 | 0x05BA => NiqqudLabel::Holam,
            0x05BB => NiqqudLabel::Qubuts,
            _ => return None,
        })
    }
}

/// One base character with its three category labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MarkedChar {
    pub letter: Letter,
    pub niqqud: NiqqudLabel,
    pub dagesh: DageshLabel,
    pub sin: SinLabel,
}

impl MarkedChar {
    pub fn bare(letter: Letter) -> Self {
        MarkedChar {
            letter,
            niqqud: NiqqudLabel::None,
            dagesh: DageshLabel::None,
            sin: SinLabel::None,
        }
    }

    pub fn new(letter: Letter, niqqud: NiqqudLabel, dagesh: DageshLabel, sin: SinLabel) -> Self {
        MarkedChar {
            letter,
            niqqud,
            dagesh,
            sin,
        }
    }

    pub fn has_marks(&self) -> bool {
        !(self.niqqud.is_none() && self.dagesh.is_none() && self.sin.is_none())
    }

    pub fn stripped(&self) -> Self {
        MarkedChar::bare(self.letter)
    }
}

/// Letters on which dagesh and niqqud decisions are made. The shin/sin decision
/// is always tied to ש alone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LetterSets {
    dagesh: [bool; HEBREW_LETTER_COUNT],
    niqqud: [bool; HEBREW_LETTER_COUNT],
}

const NO_DAGESH: &str = "אחערםןףץ";

impl Default for LetterSets {
    fn default() -> Self {
        let mut dagesh = [true; HEBREW_LETTER_COUNT];
        for c in NO_DAGESH.chars() {
            dagesh[(c as u32 - ALEF) as usize] = false;
        }
        LetterSets {
            dagesh,
            niqqud: [true; HEBREW_LETTER_COUNT],
        }
    }
}

fn letter_mask(letters: &str) -> Result<[bool; HEBREW_LETTER_COUNT], char> {
    let mut mask = [false; HEBREW_LETTER_COUNT];
    for c in letters.chars().filter(|c| !c.is_whitespace()) {
        if !is_hebrew_letter(c) {
            return Err(c);
        }
        mask[(c as u32 - ALEF) as usize] = true;
    }
    Ok(mask)
}

fn mask_letters(mask: &[bool; HEBREW_LETTER_COUNT]) -> String {
    (0..HEBREW_LETTER_COUNT)
        .filter(|&i| mask[i])
        .filter_map(|i| char::from_u32(ALEF + i as u32))
        .collect()
}

impl LetterSets {
    /// Builds sets from strings listing the capable letters. Returns the first
    /// offending character if either string holds a non-Hebrew letter.
    pub fn from_letters(dagesh: &str, niqqud: &str) -> Result<Self, char> {
        Ok(LetterSets {
            dagesh: letter_mask(dagesh)?,
            niqqud: letter_mask(niqqud)?,
        })
    }

    pub fn dagesh_letters(&self) -> String {
        mask_letters(&self.dagesh)
    }

    pub fn niqqud_letters(&self) -> String {
        mask_letters(&self.niqqud)
    }

    pub fn can_dagesh(&self, letter: Letter) -> bool {
        letter.hebrew_index().is_some_and(|i| self.dagesh[i])
    }

    pub fn can_niqqud(&self, letter: Letter) -> bool {
        letter.hebrew_index().is_some_and(|i| self.niqqud[i])
    }

    pub fn is_shin(&self, letter: Letter) -> bool {
        is_shin(letter)
    }

    /// Whether the letter carries at least one decision.
    pub fn has_decision(&self, letter: Letter) -> bool {
        self.can_dagesh(letter) || self.can_niqqud(letter) || is_shin(letter)
    }
}

pub fn can_dagesh(letter: Letter) -> bool {
    LetterSets::default().can_dagesh(letter)
}

pub fn can_niqqud(letter: Letter) -> bool {
    LetterSets::default().can_niqqud(letter)
}

pub fn is_shin(letter: Letter) -> bool {
    letter == Letter::Hebrew(SHIN)
}

/// Normalizes raw text, returning for each output character the byte span of
/// the raw input it came from.
///
/// Hebrew letters, Hebrew marks and whitelisted punctuation are kept, digits
/// and Latin letters become placeholders, every run of whitespace becomes a
/// single space and leading/trailing whitespace is dropped. Removed characters
/// inside a whitespace run do not split it.
pub fn normalize_with_spans(raw: &str) -> (String, Vec<Range<usize>>) {
    let mut out = String::with_capacity(raw.len());
    let mut spans = Vec::new();
    let mut pending_space: Option<Range<usize>> = None;
    for (start, c) in raw.char_indices() {
        let span = start..start + c.len_utf8();
        let mapped = match classify_char(c) {
            CharClass::Space => {
                if !spans.is_empty() && pending_space.is_none() {
                    pending_space = Some(span);
                }
                continue;
            }
            CharClass::Other => continue,
            CharClass::Digit => DIGIT_SYMBOL,
            CharClass::Latin => LATIN_SYMBOL,
            CharClass::Punct => punct_equivalent(c).unwrap_or(c),
            _ => c,
        };
        if let Some(space) = pending_space.take() {
            out.push(' ');
            spans.push(space);
        }
        out.push(mapped);
        spans.push(span);
    }
    (out, spans)
}

pub fn normalize(raw: &str) -> String {
    normalize_with_spans(raw).0
}

/// Splits dotted text into one [`MarkedChar`] per base character.
///
/// Marks attach to the nearest preceding base character, the last mark of a
/// category wins and dropped marks (meteg, rafe, cantillation) are ignored.
/// Illegal combinations are kept as-is; see [`validate`].
pub fn decompose(dotted: &str) -> Result<Vec<MarkedChar>, CodecError> {
    let mut chars: Vec<MarkedChar> = Vec::with_capacity(dotted.len() / 2);
    for (position, c) in dotted.chars().enumerate() {
        let class = classify_char(c);
        if !class.is_mark() {
            chars.push(MarkedChar::bare(Letter::from_char(c)));
            continue;
        }
        let Some(base) = chars.last_mut() else {
            return Err(CodecError::LeadingMark {
                position,
                codepoint: c as u32,
            });
        };
        match class {
            CharClass::NiqqudMark => {
                if let Some(n) = NiqqudLabel::from_mark(c) {
                    base.niqqud = n;
                }
            }
            CharClass::DageshMark => base.dagesh = DageshLabel::Dagesh,
            CharClass::SinShinMark => {
                base.sin = if c == SHIN_DOT {
                    SinLabel::ShinDot
                } else {
                    SinLabel::SinDot
                };
            }
            _ => {}
        }
    }
    Ok(chars)
}

/// Writes marks in the fixed order dagesh, shin/sin dot, niqqud.
pub fn push_marks(out: &mut String, c: &MarkedChar) {
    out.extend(c.dagesh.mark());
    out.extend(c.sin.mark());
    out.extend(c.niqqud.mark());
}

/// Inverse of [`decompose`] under the default letter sets.
pub fn compose(chars: &[MarkedChar]) -> Result<String, CodecError> {
    compose_with(chars, &LetterSets::default())
}

pub fn compose_with(chars: &[MarkedChar], sets: &LetterSets) -> Result<String, CodecError> {
    if let Some(v) = validate_with(chars, sets).into_iter().next() {
        return Err(CodecError::InvariantViolation {
            position: v.position,
            kind: v.kind,
        });
    }
    let mut out = String::with_capacity(chars.len() * 4);
    for c in chars {
        if let Some(base) = c.letter.to_char() {
            out.push(base);
            push_marks(&mut out, c);
        }
    }
    Ok(out)
}

/// Removes every Hebrew combining mark and leaves everything else untouched.
pub fn strip_diacritics(text: &str) -> String {
    text.chars().filter(|&c| !classify_char(c).is_mark()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationKind {
    MarksOnNonLetter,
    SinOnNonShin,
    DageshNotAllowed,
    NiqqudNotAllowed,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationKind::MarksOnNonLetter => "marks on a non-Hebrew character",
            ViolationKind::SinOnNonShin => "shin/sin dot on a letter other than shin",
            ViolationKind::DageshNotAllowed => "dagesh on a letter that does not take one",
            ViolationKind::NiqqudNotAllowed => "niqqud on a letter that does not take one",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub position: usize,
    pub kind: ViolationKind,
}

pub fn validate(doc: &[MarkedChar]) -> Vec<Violation> {
    validate_with(doc, &LetterSets::default())
}

pub fn validate_with(doc: &[MarkedChar], sets: &LetterSets) -> Vec<Violation> {
    let mut out = Vec::new();
    for (position, c) in doc.iter().enumerate() {
        let mut report = |kind| out.push(Violation { position, kind });
        if !c.letter.is_hebrew() {
            if c.has_marks() {
                report(ViolationKind::MarksOnNonLetter);
            }
            continue;
        }
        if !c.sin.is_none() && !is_shin(c.letter) {
            report(ViolationKind::SinOnNonShin);
        }
        if !c.dagesh.is_none() && !sets.can_dagesh(c.letter) {
            report(ViolationKind::DageshNotAllowed);
        }
        if !c.niqqud.is_none() && !sets.can_niqqud(c.letter) {
            report(ViolationKind::NiqqudNotAllowed);
        }
    }
    out
}

/// Drops every mark that breaks an invariant of `c`.
pub fn repair(c: MarkedChar, sets: &LetterSets) -> MarkedChar {
    if !c.letter.is_hebrew() {
        return c.stripped();
    }
    MarkedChar {
        letter: c.letter,
        niqqud: if sets.can_niqqud(c.letter) {
            c.niqqud
        } else {
            NiqqudLabel::None
        },
        dagesh: if sets.can_dagesh(c.letter) {
            c.dagesh
        } else {
            DageshLabel::None
        },
        sin: if is_shin(c.letter) {
            c.sin
        } else {
            SinLabel::None
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VowelClass {
    A,
    E,
    I,
    O,
    U,
    Null,
}

impl From<NiqqudLabel> for VowelClass {
    fn from(n: NiqqudLabel) -> Self {
        use NiqqudLabel::*;
        match n {
            Patah | Qamats | HatafPatah => VowelClass::A,
            Tsere | Segol | HatafSegol => VowelClass::E,
            Hiriq => VowelClass::I,
            Holam | HatafQamats => VowelClass::O,
            Qubuts => VowelClass::U,
            None | Sheva => VowelClass::Null,
        }
    }
}

/// The pronunciation-relevant part of a character's dotting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VocalizationSignature {
    pub vowel: VowelClass,
    /// Only set for ש.
    pub sin: Option<SinLabel>,
    /// Only set for ב, כ and פ.
    pub bkp_dagesh: Option<bool>,
}

pub fn vocalization_signature(c: &MarkedChar) -> VocalizationSignature {
    let bkp = matches!(c.letter, Letter::Hebrew('ב' | 'כ' | 'פ'));
    VocalizationSignature {
        vowel: c.niqqud.into(),
        sin: is_shin(c.letter).then_some(c.sin),
        bkp_dagesh: bkp.then_some(!c.dagesh.is_none()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heb(c: char) -> Letter {
        Letter::Hebrew(c)
    }

    #[test]
    fn classifies_marks_and_letters() {
        assert_eq!(classify_char('ש'), CharClass::HebrewLetter);
        assert_eq!(classify_char('\u{05BC}'), CharClass::DageshMark);
        assert_eq!(classify_char('\u{05BD}'), CharClass::DroppedMark);
        assert_eq!(classify_char('\u{05BF}'), CharClass::DroppedMark);
        assert_eq!(classify_char('\u{0591}'), CharClass::DroppedMark);
        assert_eq!(classify_char('\u{05C7}'), CharClass::NiqqudMark);
        assert_eq!(classify_char('\u{05C2}'), CharClass::SinShinMark);
        assert_eq!(classify_char('\u{00A0}'), CharClass::Other);
        assert_eq!(classify_char('\u{05BE}'), CharClass::Punct);
        assert_eq!(classify_char('\u{201C}'), CharClass::Punct);
        assert_eq!(classify_char('é'), CharClass::Latin);
        assert_eq!(classify_char('×'), CharClass::Other);
        assert_eq!(classify_char('7'), CharClass::Digit);
        assert_eq!(classify_char('😀'), CharClass::Other);
    }

    #[test]
    fn hebrew_block_has_27_letters() {
        let n = (0u32..0x11_0000)
            .filter_map(char::from_u32)
            .filter(|&c| classify_char(c) == CharClass::HebrewLetter)
            .count();
        assert_eq!(n, HEBREW_LETTER_COUNT);
    }

    #[test]
    fn normalize_replaces_digits_one_for_one() {
        assert_eq!(normalize("ב2021"), "ב0000");
        assert_eq!(normalize("שלום!!"), "שלום!!");
        assert_eq!(normalize("שלום\u{00A0} עולם"), "שלום עולם");
        assert_eq!(normalize("  a\u{00A0}\t\n b  "), "x x");
        assert_eq!(normalize("“ציטוט”—סוף"), "\"ציטוט\"-סוף");
        assert_eq!(normalize("😀"), "");
    }

    #[test]
    fn normalize_spans_point_into_raw() {
        let raw = " אב\u{00A0} 5";
        let (norm, spans) = normalize_with_spans(raw);
        assert_eq!(norm, "אב 0");
        assert_eq!(spans.len(), 4);
        assert_eq!(&raw[spans[0].clone()], "א");
        assert_eq!(&raw[spans[2].clone()], " ");
        assert_eq!(&raw[spans[3].clone()], "5");
    }

    #[test]
    fn decompose_shalom() {
        let got = decompose("שָׁלוֹם").unwrap();
        assert_eq!(
            got,
            vec![
                MarkedChar::new(heb('ש'), NiqqudLabel::Qamats, DageshLabel::None, SinLabel::ShinDot),
                MarkedChar::bare(heb('ל')),
                MarkedChar::new(heb('ו'), NiqqudLabel::Holam, DageshLabel::None, SinLabel::None),
                MarkedChar::bare(heb('ם')),
            ]
        );
    }

    #[test]
    fn decompose_is_order_insensitive() {
        let expected = vec![MarkedChar::new(
            heb('ב'),
            NiqqudLabel::Sheva,
            DageshLabel::Dagesh,
            SinLabel::None,
        )];
        assert_eq!(decompose("ב\u{05BC}\u{05B0}").unwrap(), expected);
        assert_eq!(decompose("ב\u{05B0}\u{05BC}").unwrap(), expected);
    }

    #[test]
    fn decompose_folds_and_drops() {
        assert_eq!(
            decompose("אָֽ").unwrap(),
            vec![MarkedChar::new(heb('א'), NiqqudLabel::Qamats, DageshLabel::None, SinLabel::None)]
        );
        assert_eq!(decompose("כ\u{05C7}").unwrap()[0].niqqud, NiqqudLabel::Qamats);
        assert_eq!(decompose("ו\u{05BA}").unwrap()[0].niqqud, NiqqudLabel::Holam);
        assert_eq!(decompose("ב\u{0591}\u{05BF}").unwrap()[0], MarkedChar::bare(heb('ב')));
    }

    #[test]
    fn duplicate_marks_keep_last() {
        let got = decompose("ב\u{05B8}\u{05B7}").unwrap();
        assert_eq!(got[0].niqqud, NiqqudLabel::Patah);
        let got = decompose("ש\u{05C1}\u{05C2}").unwrap();
        assert_eq!(got[0].sin, SinLabel::SinDot);
    }

    #[test]
    fn leading_mark_is_an_error() {
        assert_eq!(
            decompose("\u{05B8}ב"),
            Err(CodecError::LeadingMark {
                position: 0,
                codepoint: 0x05B8
            })
        );
    }

    #[test]
    fn illegal_marks_are_recorded_then_reported() {
        let doc = decompose("ב\u{05C2}א\u{05BC} \u{05B8}").unwrap();
        assert_eq!(doc[0].sin, SinLabel::SinDot);
        let kinds: Vec<_> = validate(&doc).into_iter().map(|v| (v.position, v.kind)).collect();
        assert_eq!(
            kinds,
            vec![
                (0, ViolationKind::SinOnNonShin),
                (1, ViolationKind::DageshNotAllowed),
                (2, ViolationKind::MarksOnNonLetter),
            ]
        );
        let repaired: Vec<_> = doc.iter().map(|&c| repair(c, &LetterSets::default())).collect();
        assert!(validate(&repaired).is_empty());
    }

    #[test]
    fn compose_uses_canonical_order() {
        let shin = MarkedChar::new(heb('ש'), NiqqudLabel::Qamats, DageshLabel::None, SinLabel::ShinDot);
        assert_eq!(compose(&[shin]).unwrap(), "ש\u{05C1}\u{05B8}");
        let bet = MarkedChar::new(heb('ב'), NiqqudLabel::Sheva, DageshLabel::Dagesh, SinLabel::None);
        assert_eq!(compose(&[bet]).unwrap(), "ב\u{05BC}\u{05B0}");
        let shin_dagesh = MarkedChar::new(heb('ש'), NiqqudLabel::Patah, DageshLabel::Dagesh, SinLabel::SinDot);
        assert_eq!(compose(&[shin_dagesh]).unwrap(), "ש\u{05BC}\u{05C2}\u{05B7}");
    }

    #[test]
    fn compose_rejects_invalid_chars() {
        let bad = MarkedChar::new(heb('א'), NiqqudLabel::None, DageshLabel::Dagesh, SinLabel::None);
        assert!(matches!(
            compose(&[MarkedChar::bare(heb('ב')), bad]),
            Err(CodecError::InvariantViolation {
                position: 1,
                kind: ViolationKind::DageshNotAllowed
            })
        ));
    }

    #[test]
    fn strip_removes_only_marks() {
        assert_eq!(strip_diacritics("שָׁלוֹם"), "שלום");
        assert_eq!(strip_diacritics("abc"), "abc");
        assert_eq!(strip_diacritics("אָֽ\u{0591}!"), "א!");
    }

    #[test]
    fn capability_defaults() {
        assert!(!can_dagesh(heb('א')));
        assert!(can_dagesh(heb('ה')));
        assert!(can_dagesh(heb('ך')));
        assert!(!can_dagesh(heb('ף')));
        assert!(is_shin(heb('ש')));
        assert!(!is_shin(heb('ס')));
        assert!(!can_niqqud(Letter::Space));
        assert!(can_niqqud(heb('ם')));
        let sets = LetterSets::default();
        assert_eq!(sets.dagesh_letters().chars().count(), 19);
        assert_eq!(LetterSets::from_letters(&sets.dagesh_letters(), &sets.niqqud_letters()), Ok(sets));
        assert_eq!(LetterSets::from_letters("בx", ""), Err('x'));
    }

    #[test]
    fn vocalization_signatures() {
        let s = vocalization_signature(&MarkedChar::new(
            heb('ב'),
            NiqqudLabel::Qamats,
            DageshLabel::Dagesh,
            SinLabel::None,
        ));
        assert_eq!(s, VocalizationSignature { vowel: VowelClass::A, sin: None, bkp_dagesh: Some(true) });
        let s = vocalization_signature(&MarkedChar::new(heb('ד'), NiqqudLabel::Sheva, DageshLabel::None, SinLabel::None));
        assert_eq!(s, VocalizationSignature { vowel: VowelClass::Null, sin: None, bkp_dagesh: None });
        let s = vocalization_signature(&MarkedChar::new(heb('ש'), NiqqudLabel::Hiriq, DageshLabel::None, SinLabel::SinDot));
        assert_eq!(
            s,
            VocalizationSignature { vowel: VowelClass::I, sin: Some(SinLabel::SinDot), bkp_dagesh: None }
        );
    }

    #[test]
    fn label_enumerations() {
        assert_eq!(NiqqudLabel::COUNT, 12);
        assert_eq!(DageshLabel::COUNT, 2);
        assert_eq!(SinLabel::COUNT, 3);
        for (i, n) in NiqqudLabel::ALL.iter().enumerate() {
            assert_eq!(n.index(), i);
            assert_eq!(NiqqudLabel::from_index(i), Some(*n));
        }
        assert!(NiqqudLabel::ALL.iter().all(|n| n.mark() != Some('\u{05C7}') && n.mark() != Some('\u{05BA}')));
    }
}
