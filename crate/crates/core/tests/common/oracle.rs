//! Brute-force DEC/CHA/WOR/VOC written directly against Unicode strings.
//! Shares nothing with the library beyond the capability tables, which are
//! restated here as literals.

const NO_DAGESH: &str = "אחערםןףץ";
const DAGESH: char = '\u{05BC}';
const SHIN_DOT: char = '\u{05C1}';
const SIN_DOT: char = '\u{05C2}';

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Cell {
    base: char,
    dagesh: bool,
    dot: Option<char>,
    vowel: Option<char>,
}

fn is_letter(c: char) -> bool {
    ('\u{05D0}'..='\u{05EA}').contains(&c)
}

fn cells(s: &str) -> Vec<Cell> {
    let mut out: Vec<Cell> = Vec::new();
    for c in s.chars() {
        match c {
            DAGESH => out.last_mut().unwrap().dagesh = true,
            SHIN_DOT | SIN_DOT => out.last_mut().unwrap().dot = Some(c),
            '\u{05B0}'..='\u{05BB}' => out.last_mut().unwrap().vowel = Some(c),
            _ => out.push(Cell {
                base: c,
                ..Cell::default()
            }),
        }
    }
    out
}

/// (correct, total) per decision at one position.
fn decisions(g: &Cell, p: &Cell) -> Vec<bool> {
    let mut d = Vec::new();
    if !is_letter(g.base) {
        return d;
    }
    if !NO_DAGESH.contains(g.base) {
        d.push(g.dagesh == p.dagesh);
    }
    if g.base == 'ש' {
        d.push(g.dot == p.dot);
    }
    d.push(g.vowel == p.vowel);
    d
}

fn vowel_class(v: Option<char>) -> u8 {
    match v {
        Some('\u{05B7}' | '\u{05B8}' | '\u{05B2}') => 1,
        Some('\u{05B5}' | '\u{05B6}' | '\u{05B1}') => 2,
        Some('\u{05B4}') => 3,
        Some('\u{05B9}' | '\u{05B3}') => 4,
        Some('\u{05BB}') => 5,
        _ => 0,
    }
}

fn same_sound(g: &Cell, p: &Cell) -> bool {
    if vowel_class(g.vowel) != vowel_class(p.vowel) {
        return false;
    }
    if g.base == 'ש' && g.dot != p.dot {
        return false;
    }
    if "בכפ".contains(g.base) && g.dagesh != p.dagesh {
        return false;
    }
    true
}

/// Word spans: runs of letters, with `'`, `"`, geresh or gershayim allowed
/// between two letters.
fn words(c: &[Cell]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < c.len() {
        if !is_letter(c[i].base) {
            i += 1;
            continue;
        }
        let s = i;
        while i < c.len() {
            if is_letter(c[i].base) {
                i += 1;
            } else if i + 1 < c.len() && "'\"\u{05F3}\u{05F4}".contains(c[i].base) && is_letter(c[i + 1].base) {
                i += 2;
            } else {
                break;
            }
        }
        out.push((s, i));
    }
    out
}

/// `[(correct, total); 4]` in DEC, CHA, WOR, VOC order.
pub fn score(gold: &str, pred: &str) -> [(usize, usize); 4] {
    let g = cells(gold);
    let p = cells(pred);
    assert_eq!(g.len(), p.len(), "oracle inputs must share letters");
    let mut dec = (0, 0);
    let mut cha = (0, 0);
    let mut char_ok = vec![true; g.len()];
    for i in 0..g.len() {
        let d = decisions(&g[i], &p[i]);
        dec.0 += d.iter().filter(|&&x| x).count();
        dec.1 += d.len();
        if !d.is_empty() {
            char_ok[i] = d.iter().all(|&x| x);
            cha.1 += 1;
            cha.0 += char_ok[i] as usize;
        }
    }
    let mut wor = (0, 0);
    let mut voc = (0, 0);
    for (s, e) in words(&g) {
        wor.1 += 1;
        voc.1 += 1;
        wor.0 += (s..e).all(|i| char_ok[i]) as usize;
        voc.0 += (s..e).all(|i| same_sound(&g[i], &p[i])) as usize;
    }
    [dec, cha, wor, voc]
}

/// 25 gold/prediction pairs of at most 12 characters.
pub const MICRO_DOCS: [(&str, &str); 25] = [
    ("שָׁלוֹם", "שָׁלוֹם"),
    ("שָׁלוֹם", "שַׁלוֹם"),
    ("שָׁלוֹם", "שָׂלוֹם"),
    ("בֵּן גָּדוֹל", "בֶּן גָּדוֹל"),
    // qamats and patah are both a-vowels
    ("דָּג", "דַּג"),
    // sheva counts as no vowel
    ("דְּבַשׁ", "דּבַשׁ"),
    // dagesh in ב changes the sound
    ("בָּא", "בָא"),
    ("תָּם", "תָם"),
    ("כֹּל", "כֹל"),
    ("פֶּה", "פֵה"),
    ("מַה", "מָה"),
    ("אִישׁ", "אִישׂ"),
    ("יֶלֶד טוֹב", "יֶלֶד טוּב"),
    ("123", "123"),
    ("", ""),
    ("הִיא, הוּא", "הִיא, הוֹא"),
    ("צִ'יפְּס", "צִ'יפְס"),
    ("עִיר", "עִיר"),
    ("שַׁבָּת", "שַׁבַּת"),
    ("שמש", "שֶׁמֶשׁ"),
    ("חָכְמָה", "חָכְמָה"),
    ("ab שִׁיר", "ab שִׁיר"),
    ("מֶלֶךְ", "מֶלֶךּ"),
    ("קֻמָּה", "קֻמָה"),
    ("גְּדוֹלָה", "גְדוֹלָה"),
];
