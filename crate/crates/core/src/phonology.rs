//! Grapheme-to-phoneme transliteration and per-phoneme feature vectors.
//!
//! Words are normalized (lowercased, elongations collapsed), rewritten into
//! IPA segments by an ordered rule set, and each segment is encoded as a
//! one-hot inventory vector followed by 21 ternary articulatory features.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::Tensor;

pub const ARTICULATORY_DIM: usize = 21;
pub const UNK_PHONE: &str = "<unk-phone>";

/// Runs of identical letters longer than this are shortened to it.
pub const DEFAULT_REPEAT_LIMIT: usize = 2;

pub const DEFAULT_RULES: &str = include_str!("../data/g2p_en.rules");
pub const DEFAULT_FEATURES: &str = include_str!("../data/articulatory.csv");

#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeInventory {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl PhonemeInventory {
    fn new(mut symbols: Vec<String>) -> Self {
        symbols.retain(|s| s != UNK_PHONE);
        symbols.push(UNK_PHONE.to_string());
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        PhonemeInventory { symbols, index }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn unk(&self) -> usize {
        self.symbols.len() - 1
    }

    pub fn symbol(&self, i: usize) -> &str {
        &self.symbols[i]
    }
}

/// Ternary articulatory features keyed by IPA symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct ArticulatoryTable {
    names: Vec<String>,
    order: Vec<String>,
    rows: HashMap<String, [i8; ARTICULATORY_DIM]>,
}

impl ArticulatoryTable {
    /// Parses `symbol,f1,…,f21` lines. Values are `+`/`-`/`0` or `1`/`-1`/`0`;
    /// `#` lines are comments and a leading `symbol,…` header is optional.
    pub fn parse(text: &str) -> Result<Self> {
        let mut names = Vec::new();
        let mut order = Vec::new();
        let mut rows = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != ARTICULATORY_DIM + 1 {
                return Err(Error::parse(
                    lineno,
                    format!(
                        "expected {} columns, found {}",
                        ARTICULATORY_DIM + 1,
                        fields.len()
                    ),
                ));
            }
            if fields[0] == "symbol" {
                names = fields[1..].iter().map(|s| s.to_string()).collect();
                continue;
            }
            let mut row = [0i8; ARTICULATORY_DIM];
            for (slot, v) in row.iter_mut().zip(&fields[1..]) {
                *slot = match *v {
                    "+" | "1" | "+1" => 1,
                    "-" | "-1" => -1,
                    "0" => 0,
                    other => {
                        return Err(Error::parse(lineno, format!("bad feature value `{other}`")))
                    }
                };
            }
            let symbol = fields[0].to_string();
            if symbol == UNK_PHONE {
                if row != [0; ARTICULATORY_DIM] {
                    return Err(Error::parse(
                        lineno,
                        format!("{UNK_PHONE} must be all zero"),
                    ));
                }
                continue;
            }
            if rows.insert(symbol.clone(), row).is_some() {
                return Err(Error::parse(lineno, format!("duplicate symbol `{symbol}`")));
            }
            order.push(symbol);
        }
        if names.is_empty() {
            names = (1..=ARTICULATORY_DIM).map(|i| format!("f{i}")).collect();
        }
        Ok(ArticulatoryTable { names, order, rows })
    }

    pub fn feature_names(&self) -> &[String] {
        &self.names
    }

    /// Symbols in file order.
    pub fn symbols(&self) -> &[String] {
        &self.order
    }

    /// Feature row for `symbol`; unknown symbols (and `<unk-phone>`) map to zeros.
    pub fn features(&self, symbol: &str) -> [i8; ARTICULATORY_DIM] {
        self.rows
            .get(symbol)
            .copied()
            .unwrap_or([0; ARTICULATORY_DIM])
    }

    pub fn contains(&self, symbol: &str) -> bool {
        self.rows.contains_key(symbol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ContextItem {
    Boundary,
    Consonant,
    Vowel,
    Literal(char),
}

impl ContextItem {
    fn matches(self, c: char) -> bool {
        match self {
            ContextItem::Boundary => false,
            ContextItem::Consonant => c.is_alphabetic() && !is_vowel(c),
            ContextItem::Vowel => is_vowel(c),
            ContextItem::Literal(l) => l == c,
        }
    }
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u')
}

#[derive(Debug, Clone, PartialEq)]
struct Rule {
    pattern: Vec<char>,
    left: Vec<ContextItem>,
    right: Vec<ContextItem>,
    output: Vec<usize>,
}

impl Rule {
    fn applies(&self, word: &[char], at: usize) -> bool {
        let end = at + self.pattern.len();
        if end > word.len() || word[at..end] != self.pattern[..] {
            return false;
        }
        let mut j = at;
        for item in self.left.iter().rev() {
            match item {
                ContextItem::Boundary => {
                    if j != 0 {
                        return false;
                    }
                }
                _ => {
                    if j == 0 || !item.matches(word[j - 1]) {
                        return false;
                    }
                    j -= 1;
                }
            }
        }
        let mut j = end;
        for item in &self.right {
            match item {
                ContextItem::Boundary => {
                    if j != word.len() {
                        return false;
                    }
                }
                _ => {
                    if j >= word.len() || !item.matches(word[j]) {
                        return false;
                    }
                    j += 1;
                }
            }
        }
        true
    }
}

/// Ordered rewrite rules. At each position the longest applicable pattern
/// wins; ties go to the earlier rule.
#[derive(Debug, Clone, PartialEq)]
pub struct G2PRuleSet {
    rules: Vec<Rule>,
    pub repeat_limit: usize,
}

impl G2PRuleSet {
    pub fn parse(text: &str, inventory: &PhonemeInventory) -> Result<Self> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (lhs, rhs) = line
                .split_once("->")
                .ok_or_else(|| Error::parse(lineno, "missing `->`"))?;
            let mut lhs_parts = lhs.split_whitespace();
            let pattern: Vec<char> = lhs_parts
                .next()
                .ok_or_else(|| Error::parse(lineno, "empty pattern"))?
                .chars()
                .collect();
            let (left, right) = match lhs_parts.next() {
                None => (Vec::new(), Vec::new()),
                Some(ctx) => {
                    let inner = ctx
                        .strip_prefix('/')
                        .and_then(|c| c.strip_suffix('/'))
                        .ok_or_else(|| Error::parse(lineno, format!("bad context `{ctx}`")))?;
                    let (l, r) = inner.split_once('_').ok_or_else(|| {
                        Error::parse(lineno, format!("context `{ctx}` lacks `_`"))
                    })?;
                    (parse_context(l), parse_context(r))
                }
            };
            if lhs_parts.next().is_some() {
                return Err(Error::parse(lineno, "unexpected tokens before `->`"));
            }
            let mut output = Vec::new();
            for sym in rhs.split_whitespace() {
                if sym == "∅" {
                    continue;
                }
                let ix = inventory
                    .index_of(sym)
                    .filter(|&ix| ix != inventory.unk())
                    .ok_or_else(|| {
                        Error::parse(
                            lineno,
                            format!("output symbol `{sym}` not in the inventory"),
                        )
                    })?;
                output.push(ix);
            }
            if rhs.split_whitespace().next().is_none() {
                return Err(Error::parse(lineno, "empty output (use ∅ for deletion)"));
            }
            rules.push(Rule {
                pattern,
                left,
                right,
                output,
            });
        }
        Ok(G2PRuleSet {
            rules,
            repeat_limit: DEFAULT_REPEAT_LIMIT,
        })
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    fn apply(&self, word: &[char], unk: usize) -> (Vec<usize>, usize) {
        let mut out = Vec::new();
        let mut unknown = 0;
        let mut at = 0;
        while at < word.len() {
            let mut best: Option<&Rule> = None;
            for rule in &self.rules {
                if rule.applies(word, at)
                    && best.is_none_or(|b| rule.pattern.len() > b.pattern.len())
                {
                    best = Some(rule);
                }
            }
            match best {
                Some(rule) => {
                    out.extend_from_slice(&rule.output);
                    at += rule.pattern.len();
                }
                None => {
                    out.push(unk);
                    unknown += 1;
                    at += 1;
                }
            }
        }
        (out, unknown)
    }
}

fn parse_context(s: &str) -> Vec<ContextItem> {
    s.chars()
        .map(|c| match c {
            '#' => ContextItem::Boundary,
            'C' => ContextItem::Consonant,
            'V' => ContextItem::Vowel,
            other => ContextItem::Literal(other),
        })
        .collect()
}

/// Lowercases, drops everything but letters and apostrophes, and collapses
/// runs of more than `limit` identical letters down to `limit`.
pub fn normalize_with_limit(word: &str, limit: usize) -> String {
    let mut out = String::with_capacity(word.len());
    let mut prev: Option<char> = None;
    let mut run = 0;
    for c in word.chars().flat_map(char::to_lowercase) {
        if !(c.is_alphabetic() || c == '\'') {
            continue;
        }
        if Some(c) == prev {
            run += 1;
        } else {
            prev = Some(c);
            run = 1;
        }
        if c.is_alphabetic() && run > limit {
            continue;
        }
        out.push(c);
    }
    out
}

pub fn normalize(word: &str) -> String {
    normalize_with_limit(word, DEFAULT_REPEAT_LIMIT)
}

/// Per-word sequence of `one-hot(symbol) ⊕ articulatory(symbol)` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CharFeatureMatrix {
    pub matrix: Tensor,
    pub inventory_size: usize,
}

impl CharFeatureMatrix {
    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn width(&self) -> usize {
        self.matrix.cols()
    }

    pub fn one_hot(&self, r: usize) -> &[f64] {
        &self.matrix.row(r)[..self.inventory_size]
    }

    pub fn articulatory(&self, r: usize) -> &[f64] {
        &self.matrix.row(r)[self.inventory_size..]
    }
}

/// Inventory, feature table and rule set bundled together.
#[derive(Debug, Clone, PartialEq)]
pub struct Phonology {
    pub inventory: PhonemeInventory,
    pub table: ArticulatoryTable,
    pub rules: G2PRuleSet,
}

impl Phonology {
    /// The bundled English rule set and feature table.
    pub fn english() -> Self {
        Self::parse(DEFAULT_RULES, DEFAULT_FEATURES).expect("bundled phonology data is valid")
    }

    pub fn parse(rules: &str, features: &str) -> Result<Self> {
        let table = ArticulatoryTable::parse(features)?;
        let inventory = PhonemeInventory::new(table.symbols().to_vec());
        let rules = G2PRuleSet::parse(rules, &inventory)?;
        Ok(Phonology {
            inventory,
            table,
            rules,
        })
    }

    pub fn from_files(rules: impl AsRef<Path>, features: impl AsRef<Path>) -> Result<Self> {
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
        Self::parse(&read(rules.as_ref())?, &read(features.as_ref())?)
    }

    /// Width of one encoded phoneme row: `|V_q| + 21`.
    pub fn feature_width(&self) -> usize {
        self.inventory.len() + ARTICULATORY_DIM
    }

    pub fn normalize(&self, word: &str) -> String {
        normalize_with_limit(word, self.rules.repeat_limit)
    }

    /// Inventory indices for `word` and how many graphemes had no rule.
    pub fn transliterate_indices(&self, word: &str) -> (Vec<usize>, usize) {
        let chars: Vec<char> = self.normalize(word).chars().collect();
        self.rules.apply(&chars, self.inventory.unk())
    }

    pub fn transliterate(&self, word: &str) -> Vec<String> {
        self.transliterate_indices(word)
            .0
            .into_iter()
            .map(|i| self.inventory.symbol(i).to_string())
            .collect()
    }

    pub fn articulatory_features(&self, symbol: &str) -> [i8; ARTICULATORY_DIM] {
        self.table.features(symbol)
    }

    pub fn encode_chars(&self, word: &str) -> CharFeatureMatrix {
        let (indices, _) = self.transliterate_indices(word);
        let width = self.feature_width();
        let n = self.inventory.len();
        let mut matrix = Tensor::zeros(indices.len(), width);
        for (r, &ix) in indices.iter().enumerate() {
            let row = matrix.row_mut(r);
            row[ix] = 1.0;
            let feats = self.table.features(self.inventory.symbol(ix));
            for (slot, f) in row[n..].iter_mut().zip(feats) {
                *slot = f64::from(f);
            }
        }
        CharFeatureMatrix {
            matrix,
            inventory_size: n,
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn ipa(p: &Phonology, w: &str) -> String {
        p.transliterate(w).concat()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize("KIDDDDING"), "kidding");
        assert_eq!(normalize("me"), "me");
        assert_eq!(normalize("soooo"), "soo");
        assert_eq!(normalize("don't!!"), "don't");
        assert_eq!(normalize("#yay123"), "yay");
    }

    #[test]
    fn noisy_phrase_matches_normalized_phrase() {
        let p = Phonology::english();
        let noisy = "u hav to b KIDDDDING me";
        let clean = "you have to be kidding me";
        let expected = ["ju", "hæv", "tə", "bi", "kɪdɪŋ", "mi"];
        let a: Vec<String> = noisy.split(' ').map(|w| ipa(&p, w)).collect();
        let b: Vec<String> = clean.split(' ').map(|w| ipa(&p, w)).collect();
        assert_eq!(a, expected);
        assert_eq!(b, expected);
    }

    #[test]
    fn defence_and_defense_agree() {
        let p = Phonology::english();
        assert_eq!(ipa(&p, "defence"), "dɪfɛns");
        assert_eq!(ipa(&p, "defense"), "dɪfɛns");
        assert_eq!(p.encode_chars("defence"), p.encode_chars("Defense"));
    }

    #[test]
    fn empty_and_unknown() {
        let p = Phonology::english();
        assert!(p.transliterate("").is_empty());
        assert!(p.transliterate("!!!").is_empty());
        let (ix, unk) = p.transliterate_indices("caf\u{e9}");
        assert_eq!(unk, 1);
        assert_eq!(*ix.last().unwrap(), p.inventory.unk());
    }

    #[test]
    fn feature_table_rows() {
        let p = Phonology::english();
        assert_eq!(p.articulatory_features(UNK_PHONE), [0; 21]);
        assert_eq!(p.articulatory_features("not-a-symbol"), [0; 21]);
        let nas = p
            .table
            .feature_names()
            .iter()
            .position(|n| n == "nas")
            .unwrap();
        assert_eq!(p.articulatory_features("m")[nas], 1);
        assert_ne!(p.articulatory_features("i"), p.articulatory_features("ɪ"));
        // Every inventory symbol except the reserved one has a real row.
        for s in p.inventory.symbols() {
            assert_eq!(p.table.contains(s), s != UNK_PHONE);
        }
    }

    #[test]
    fn encode_shape() {
        let p = Phonology::english();
        let m = p.encode_chars("me");
        assert_eq!(m.rows(), 2);
        assert_eq!(m.width(), p.inventory.len() + 21);
        for r in 0..m.rows() {
            assert_eq!(m.one_hot(r).iter().sum::<f64>(), 1.0);
        }
        assert_eq!(p.encode_chars("ME"), m);
        assert_eq!(p.encode_chars("kiddddding"), p.encode_chars("kidding"));
    }

    #[test]
    fn rule_parse_errors_carry_line_numbers() {
        let p = Phonology::english();
        let err = G2PRuleSet::parse("a -> æ\nb -> qq\n", &p.inventory).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = G2PRuleSet::parse("# c\nab /x/ -> æ\n", &p.inventory).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(ArticulatoryTable::parse("p,+,-\n").is_err());
    }

    #[test]
    fn longest_match_then_file_order() {
        let p = Phonology::english();
        let rules = G2PRuleSet::parse("a -> æ\na -> ɑ\nab -> e ɪ\nb -> b\n", &p.inventory).unwrap();
        let word: Vec<char> = "aab".chars().collect();
        let (out, _) = rules.apply(&word, p.inventory.unk());
        let syms: Vec<&str> = out.iter().map(|&i| p.inventory.symbol(i)).collect();
        assert_eq!(syms, ["æ", "e", "ɪ"]);
    }

    proptest! {
        #[test]
        fn encoding_is_case_invariant_and_well_formed(w in "[a-zA-Z']{0,12}") {
            let p = Phonology::english();
            let lower = p.encode_chars(&w.to_lowercase());
            let upper = p.encode_chars(&w.to_uppercase());
            prop_assert_eq!(&lower, &upper);
            for r in 0..lower.rows() {
                prop_assert_eq!(lower.one_hot(r).iter().sum::<f64>(), 1.0);
                prop_assert!(lower.articulatory(r).iter().all(|&v| v == -1.0 || v == 0.0 || v == 1.0));
            }
        }
    }
}
