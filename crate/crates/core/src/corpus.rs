//! Column-formatted corpora, token preprocessing, label catalogs, class
//! weights and dataset statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::extract_entities;

pub const URL_TOKEN: &str = "<url>";
pub const EMOJI_TOKEN: &str = "<emoji>";
pub const TAG_TOKEN: &str = "<tag>";
pub const NUM_TOKEN: &str = "<num>";
pub const UNK_POS: &str = "<unk-pos>";
pub const OUTSIDE: &str = "O";

pub const SEGMENTATION_LABELS: [&str; 3] = ["B", "I", "O"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub pos: String,
    pub gold: Option<String>,
}

impl Token {
    pub fn new(surface: impl Into<String>, pos: impl Into<String>, gold: Option<&str>) -> Self {
        Token {
            surface: surface.into(),
            pos: pos.into(),
            gold: gold.map(str::to_string),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    pub source_id: String,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.tokens.iter().all(|t| t.gold.is_some())
    }

    /// Gold labels, or `None` if any token is unlabeled.
    pub fn gold_labels(&self) -> Option<Vec<String>> {
        self.tokens.iter().map(|t| t.gold.clone()).collect()
    }

    pub fn surfaces(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.surface.as_str()).collect()
    }
}

/// Which whitespace-separated columns hold the surface, POS tag and label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnSpec {
    pub columns: usize,
    pub surface: usize,
    pub pos: Option<usize>,
    pub label: Option<usize>,
}

impl ColumnSpec {
    /// `surface pos label`.
    pub const fn standard() -> Self {
        ColumnSpec {
            columns: 3,
            surface: 0,
            pos: Some(1),
            label: Some(2),
        }
    }

    /// `surface pos`, for prediction input.
    pub const fn unlabeled() -> Self {
        ColumnSpec {
            columns: 2,
            surface: 0,
            pos: Some(1),
            label: None,
        }
    }

    /// `surface label`, CoNLL-2003 style without a POS column.
    pub const fn surface_label() -> Self {
        ColumnSpec {
            columns: 2,
            surface: 0,
            pos: None,
            label: Some(1),
        }
    }

    /// `surface pos gold predicted`, as written by prediction over a
    /// labeled corpus. `label` selects the gold column.
    pub const fn predicted() -> Self {
        ColumnSpec {
            columns: 4,
            surface: 0,
            pos: Some(1),
            label: Some(2),
        }
    }

    /// Infers the layout from the column count of the token rows. Two-column
    /// files are `surface label` when every second field is a label and at
    /// least one is an entity label, `surface pos` otherwise.
    pub fn detect(text: &str) -> Result<Self> {
        let mut rows = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| l.split_whitespace().collect::<Vec<_>>())
            .peekable();
        match rows.peek().map(Vec::len) {
            None | Some(3) => Ok(Self::standard()),
            Some(4) => Ok(Self::predicted()),
            Some(2) => {
                let mut entity = false;
                for r in rows {
                    match r.get(1).map(|l| split_label(l)) {
                        Some(Ok((_, c))) => entity |= c.is_some(),
                        _ => return Ok(Self::unlabeled()),
                    }
                }
                Ok(if entity {
                    Self::surface_label()
                } else {
                    Self::unlabeled()
                })
            }
            Some(n) => Err(Error::parse(
                1,
                format!("cannot infer columns from a {n}-column row"),
            )),
        }
    }
}

impl Default for ColumnSpec {
    fn default() -> Self {
        Self::standard()
    }
}

/// Splits a BIO label into its prefix and class; `O` has no class.
pub fn split_label(label: &str) -> Result<(char, Option<&str>)> {
    if label == OUTSIDE {
        return Ok(('O', None));
    }
    match label.split_once('-') {
        Some((p @ ("B" | "I"), class)) if !class.is_empty() => {
            Ok((p.chars().next().unwrap_or('O'), Some(class)))
        }
        _ => Err(Error::Catalog(format!("`{label}` is not a BIO label"))),
    }
}

/// `#`-leading lines are comments unless they look like a well-formed token
/// row, so hashtag tokens survive.
fn is_token_row(fields: &[&str], spec: ColumnSpec) -> bool {
    fields.len() == spec.columns && spec.label.is_none_or(|c| split_label(fields[c]).is_ok())
}

pub fn parse_conll(text: &str, spec: ColumnSpec) -> Result<Vec<Sentence>> {
    let mut sentences = Vec::new();
    let mut current = Vec::new();
    let flush = |current: &mut Vec<Token>, sentences: &mut Vec<Sentence>| {
        if !current.is_empty() {
            let id = sentences.len() + 1;
            sentences.push(Sentence {
                tokens: std::mem::take(current),
                source_id: id.to_string(),
            });
        }
    };
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            flush(&mut current, &mut sentences);
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if trimmed.starts_with('#') && !is_token_row(&fields, spec) {
            continue;
        }
        if fields.len() != spec.columns {
            return Err(Error::parse(
                lineno,
                format!("expected {} columns, found {}", spec.columns, fields.len()),
            ));
        }
        let gold = match spec.label {
            Some(c) => {
                split_label(fields[c])
                    .map_err(|e| Error::Catalog(format!("line {lineno}: {e}")))?;
                Some(fields[c].to_string())
            }
            None => None,
        };
        current.push(Token {
            surface: fields[spec.surface].to_string(),
            pos: spec.pos.map_or(UNK_POS, |c| fields[c]).to_string(),
            gold,
        });
    }
    flush(&mut current, &mut sentences);
    Ok(sentences)
}

pub fn read_conll(path: impl AsRef<Path>, spec: ColumnSpec) -> Result<Vec<Sentence>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_conll(&text, spec)
}

/// Tab-separated `surface pos [gold] [extra…]` rows, one blank line after
/// each sentence.
pub fn write_conll(sentences: &[Sentence], extra: Option<&[Vec<String>]>) -> String {
    let mut out = String::new();
    for (s, sentence) in sentences.iter().enumerate() {
        for (t, token) in sentence.tokens.iter().enumerate() {
            out.push_str(&token.surface);
            out.push('\t');
            out.push_str(&token.pos);
            if let Some(g) = &token.gold {
                out.push('\t');
                out.push_str(g);
            }
            if let Some(col) = extra.and_then(|e| e.get(s)).and_then(|e| e.get(t)) {
                out.push('\t');
                out.push_str(col);
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PreprocessOptions {
    /// Also replace `#hashtag` tokens with `<tag>`.
    pub hashtags: bool,
}

fn url_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?i)(?:[a-z][a-z0-9+.-]*://|www\.)\S+$").unwrap())
}

fn mention_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^@\w+$").unwrap())
}

fn hashtag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^#\w+$").unwrap())
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[+\-]?[0-9][0-9.,:/\-]*%?$").unwrap())
}

fn is_emoji_char(c: char) -> bool {
    matches!(c as u32,
        0x1F000..=0x1FAFF | 0x2600..=0x27BF | 0x2300..=0x23FF | 0x2B00..=0x2BFF
        | 0x3030 | 0x303D | 0x3297 | 0x3299)
}

fn is_emoji_modifier(c: char) -> bool {
    matches!(
        c as u32,
        0x200D | 0xFE0E | 0xFE0F | 0x20E3 | 0xE0020..=0xE007F
    )
}

pub fn is_emoji(token: &str) -> bool {
    token.chars().any(is_emoji_char)
        && token
            .chars()
            .all(|c| is_emoji_char(c) || is_emoji_modifier(c))
}

/// The reserved token `surface` maps to, if any.
pub fn reserved_for(surface: &str, options: PreprocessOptions) -> Option<&'static str> {
    if url_re().is_match(surface) {
        Some(URL_TOKEN)
    } else if is_emoji(surface) {
        Some(EMOJI_TOKEN)
    } else if mention_re().is_match(surface) || (options.hashtags && hashtag_re().is_match(surface))
    {
        Some(TAG_TOKEN)
    } else if number_re().is_match(surface) {
        Some(NUM_TOKEN)
    } else {
        None
    }
}

pub fn is_reserved(surface: &str) -> bool {
    matches!(surface, URL_TOKEN | EMOJI_TOKEN | TAG_TOKEN | NUM_TOKEN)
}

pub fn preprocess(sentence: &Sentence, options: PreprocessOptions) -> Sentence {
    let tokens = sentence
        .tokens
        .iter()
        .map(|t| match reserved_for(&t.surface, options) {
            Some(r) => Token {
                surface: r.to_string(),
                ..t.clone()
            },
            None => t.clone(),
        })
        .collect();
    Sentence {
        tokens,
        source_id: sentence.source_id.clone(),
    }
}

/// Entity classes plus the derived category and segmentation label sets,
/// both in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelCatalog {
    classes: Vec<String>,
    labels: Vec<String>,
}

impl LabelCatalog {
    pub fn new<S: AsRef<str>>(classes: impl IntoIterator<Item = S>) -> Result<Self> {
        let set: BTreeSet<String> = classes
            .into_iter()
            .map(|c| c.as_ref().to_string())
            .collect();
        for c in &set {
            if c.is_empty() || c.chars().any(char::is_whitespace) {
                return Err(Error::Catalog(format!("invalid class name `{c}`")));
            }
        }
        let classes: Vec<String> = set.into_iter().collect();
        let mut labels: Vec<String> = classes
            .iter()
            .flat_map(|c| [format!("B-{c}"), format!("I-{c}")])
            .chain(std::iter::once(OUTSIDE.to_string()))
            .collect();
        labels.sort();
        Ok(LabelCatalog { classes, labels })
    }

    /// Classes seen in the gold labels of `sentences`.
    pub fn from_corpus(sentences: &[Sentence]) -> Result<Self> {
        let mut classes = BTreeSet::new();
        for t in sentences.iter().flat_map(|s| &s.tokens) {
            if let Some(g) = &t.gold {
                if let (_, Some(c)) = split_label(g)? {
                    classes.insert(c.to_string());
                }
            }
        }
        Self::new(classes)
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index(&self, label: &str) -> Result<usize> {
        self.labels
            .binary_search_by(|l| l.as_str().cmp(label))
            .map_err(|_| Error::Catalog(format!("unknown label `{label}`")))
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn outside(&self) -> usize {
        self.labels.len() - 1
    }

    pub fn is_entity(&self, index: usize) -> bool {
        index != self.outside()
    }

    /// Segmentation index (B=0, I=1, O=2) of a category index.
    pub fn segmentation_of(&self, index: usize) -> usize {
        match self.labels[index].as_bytes()[0] {
            b'B' => 0,
            b'I' => 1,
            _ => 2,
        }
    }

    pub fn indices(&self, labels: &[String]) -> Result<Vec<usize>> {
        labels.iter().map(|l| self.index(l)).collect()
    }

    pub fn check(&self, sentences: &[Sentence]) -> Result<()> {
        for (i, s) in sentences.iter().enumerate() {
            for t in &s.tokens {
                if let Some(g) = &t.gold {
                    self.index(g)
                        .map_err(|e| Error::Catalog(format!("sentence {}: {e}", i + 1)))?;
                }
            }
        }
        Ok(())
    }
}

pub fn derive_segmentation_labels<S: AsRef<str>>(labels: &[S]) -> Result<Vec<String>> {
    labels
        .iter()
        .map(|l| split_label(l.as_ref()).map(|(p, _)| p.to_string()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BioMode {
    Strict,
    #[default]
    Repair,
}

/// Checks that every `I-c` continues a `B-c`/`I-c`. Repair mode rewrites
/// offending tags to `B-c` and reports how many it changed.
pub fn validate_bio<S: AsRef<str>>(labels: &[S], mode: BioMode) -> Result<(Vec<String>, usize)> {
    let mut out: Vec<String> = Vec::with_capacity(labels.len());
    let mut repairs = 0;
    for (i, l) in labels.iter().enumerate() {
        let l = l.as_ref();
        let (prefix, class) = split_label(l)?;
        let continues = prefix != 'I'
            || out
                .last()
                .map(|prev| split_label(prev).map(|(_, c)| c == class))
                .transpose()?
                .unwrap_or(false);
        if continues {
            out.push(l.to_string());
            continue;
        }
        match mode {
            BioMode::Strict => {
                return Err(Error::Validation {
                    index: i,
                    message: format!("`{l}` does not continue an entity of the same class"),
                })
            }
            BioMode::Repair => {
                repairs += 1;
                out.push(format!("B-{}", class.unwrap_or_default()));
            }
        }
    }
    Ok((out, repairs))
}

/// Applies [`validate_bio`] to every labeled sentence, returning the total
/// number of repaired tags.
pub fn validate_corpus(sentences: &mut [Sentence], mode: BioMode) -> Result<usize> {
    let mut total = 0;
    for (s, sentence) in sentences.iter_mut().enumerate() {
        let Some(gold) = sentence.gold_labels() else {
            continue;
        };
        let (fixed, n) = validate_bio(&gold, mode).map_err(|e| match e {
            Error::Validation { index, message } => Error::Validation {
                index,
                message: format!("sentence {}: {message}", s + 1),
            },
            other => other,
        })?;
        total += n;
        for (t, g) in sentence.tokens.iter_mut().zip(fixed) {
            t.gold = Some(g);
        }
    }
    Ok(total)
}

/// Per-label loss weights indexed like the catalog's category labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub labels: Vec<String>,
    pub weights: Vec<f64>,
}

impl ClassWeights {
    pub fn uniform(catalog: &LabelCatalog) -> Self {
        ClassWeights {
            labels: catalog.labels().to_vec(),
            weights: vec![1.0; catalog.len()],
        }
    }

    pub fn weight(&self, index: usize) -> f64 {
        self.weights[index]
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.weights[i])
    }
}

pub fn compute_class_weights(
    sentences: &[Sentence],
    catalog: &LabelCatalog,
    exponent: f64,
    o_floor: f64,
) -> Result<ClassWeights> {
    if !(exponent >= 0.0 && exponent.is_finite()) {
        return Err(Error::Config(format!(
            "class-weight exponent must be ≥ 0, got {exponent}"
        )));
    }
    if !(o_floor > 0.0 && o_floor <= 1.0) {
        return Err(Error::Config(format!(
            "o-floor must lie in (0, 1], got {o_floor}"
        )));
    }
    let mut counts = vec![0usize; catalog.len()];
    for t in sentences.iter().flat_map(|s| &s.tokens) {
        if let Some(g) = &t.gold {
            counts[catalog.index(g)?] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::Config(
            "class weights need a non-empty labeled corpus".into(),
        ));
    }
    let k = catalog.len() as f64;
    let mut weights: Vec<Option<f64>> = counts
        .iter()
        .map(|&c| (c > 0).then(|| (total as f64 / (k * c as f64)).powf(exponent)))
        .collect();
    let max = weights.iter().flatten().fold(f64::MIN, |a, &b| a.max(b));
    for w in weights.iter_mut().filter(|w| w.is_none()) {
        *w = Some(max);
    }
    let mut weights: Vec<f64> = weights.into_iter().flatten().collect();
    let o = catalog.outside();
    weights[o] *= o_floor;
    let entity = |w: &[f64]| -> Vec<f64> {
        w.iter()
            .enumerate()
            .filter(|&(i, _)| i != o)
            .map(|(_, &v)| v)
            .collect()
    };
    let ent = entity(&weights);
    if ent.is_empty() {
        weights[o] = 1.0;
    } else {
        let max_ent = ent.iter().fold(f64::MIN, |a, &b| a.max(b));
        let min_ent = ent.iter().fold(f64::MAX, |a, &b| a.min(b));
        weights[o] = weights[o].min(min_ent);
        for w in &mut weights {
            *w /= max_ent;
        }
    }
    Ok(ClassWeights {
        labels: catalog.labels().to_vec(),
        weights,
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct DatasetStats {
    pub posts: usize,
    pub tokens: usize,
    pub ne_tokens: usize,
    pub ne_token_pct: f64,
    pub unique_entity_pct: f64,
    pub per_class_counts: BTreeMap<String, usize>,
}

impl DatasetStats {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }
}

pub fn corpus_stats(sentences: &[Sentence], gold_required: bool) -> Result<DatasetStats> {
    let mut stats = DatasetStats {
        posts: sentences.len(),
        ..Default::default()
    };
    let mut mentions = 0usize;
    let mut surfaces = BTreeSet::new();
    for (i, s) in sentences.iter().enumerate() {
        stats.tokens += s.len();
        let Some(gold) = s.gold_labels() else {
            if gold_required {
                return Err(Error::Validation {
                    index: i,
                    message: format!("sentence {} is unlabeled", i + 1),
                });
            }
            continue;
        };
        stats.ne_tokens += gold.iter().filter(|g| *g != OUTSIDE).count();
        let (repaired, _) = validate_bio(&gold, BioMode::Repair)?;
        for m in extract_entities(&repaired, &s.surfaces()) {
            mentions += 1;
            *stats.per_class_counts.entry(m.class.clone()).or_default() += 1;
            surfaces.insert(m.surface);
        }
    }
    if stats.tokens > 0 {
        stats.ne_token_pct = 100.0 * stats.ne_tokens as f64 / stats.tokens as f64;
    }
    if mentions > 0 {
        stats.unique_entity_pct = 100.0 * surfaces.len() as f64 / mentions as f64;
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn sent(rows: &[(&str, &str)]) -> Sentence {
        Sentence {
            tokens: rows
                .iter()
                .map(|(w, l)| Token::new(*w, "N", Some(l)))
                .collect(),
            source_id: "t".into(),
        }
    }

    #[test]
    fn parse_examples() {
        assert!(parse_conll("", ColumnSpec::standard()).unwrap().is_empty());
        let text = "# comment\nbeen V O\nlistenin V O\n\ntrey ^ B-person\n#tbt # O\n";
        let s = parse_conll(text, ColumnSpec::standard()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].len(), s[1].len()), (2, 2));
        assert_eq!(s[1].tokens[1].surface, "#tbt");
        assert_eq!(s[1].tokens[0].gold.as_deref(), Some("B-person"));
    }

    #[test]
    fn parse_errors() {
        let err = parse_conll("a N O\nb N\n", ColumnSpec::standard()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_conll("a N X-person\n", ColumnSpec::standard()).unwrap_err();
        assert!(matches!(err, Error::Catalog(_)));
    }

    #[test]
    fn other_column_layouts() {
        let s = parse_conll("EU B-ORG\nrejects O\n", ColumnSpec::surface_label()).unwrap();
        assert_eq!(s[0].tokens[0].pos, UNK_POS);
        let s = parse_conll("EU N\n", ColumnSpec::unlabeled()).unwrap();
        assert!(s[0].tokens[0].gold.is_none());
        assert_eq!(
            ColumnSpec::detect("# x\na N\n").unwrap(),
            ColumnSpec::unlabeled()
        );
        assert_eq!(
            ColumnSpec::detect("a O\nb B-person\n").unwrap(),
            ColumnSpec::surface_label()
        );
        assert_eq!(
            ColumnSpec::detect("a O\nb O\n").unwrap(),
            ColumnSpec::unlabeled()
        );
        assert_eq!(
            ColumnSpec::detect("a N O B-x\n").unwrap(),
            ColumnSpec::predicted()
        );
    }

    #[test]
    fn preprocess_examples() {
        let o = PreprocessOptions::default();
        for (input, out) in [
            ("http://t.co/x", "<url>"),
            ("www.example.com", "<url>"),
            ("@user", "<tag>"),
            ("#tbt", "#tbt"),
            ("trey", "trey"),
            ("2017", "<num>"),
            ("3:30", "<num>"),
            ("-1,000.5", "<num>"),
            ("\u{1F602}\u{1F602}", "<emoji>"),
            ("\u{1F44D}\u{1F3FD}", "<emoji>"),
            ("\u{2764}\u{FE0F}", "<emoji>"),
            ("a\u{1F602}", "a\u{1F602}"),
            ("4ever", "4ever"),
        ] {
            assert_eq!(reserved_for(input, o).unwrap_or(input), out, "{input}");
        }
        let tags = PreprocessOptions { hashtags: true };
        assert_eq!(reserved_for("#tbt", tags), Some(TAG_TOKEN));
    }

    #[test]
    fn preprocess_keeps_labels() {
        let s = sent(&[("@trey", "B-person"), ("hi", "O")]);
        let p = preprocess(&s, PreprocessOptions::default());
        assert_eq!(p.tokens[0].surface, "<tag>");
        assert_eq!(p.tokens[0].gold.as_deref(), Some("B-person"));
        assert_eq!(p.tokens[1], s.tokens[1]);
    }

    #[test]
    fn catalog_order() {
        let c = LabelCatalog::new(["person", "location", "group"]).unwrap();
        assert_eq!(c.len(), 7);
        assert_eq!(
            c.labels(),
            [
                "B-group",
                "B-location",
                "B-person",
                "I-group",
                "I-location",
                "I-person",
                "O"
            ]
        );
        assert_eq!(c.outside(), 6);
        assert_eq!(c.segmentation_of(c.index("I-person").unwrap()), 1);
        assert!(c.index("B-thing").is_err());
    }

    #[test]
    fn segmentation_labels() {
        assert_eq!(
            derive_segmentation_labels(&["B-person", "I-person", "O"]).unwrap(),
            ["B", "I", "O"]
        );
        assert_eq!(derive_segmentation_labels(&["O", "O"]).unwrap(), ["O", "O"]);
        assert_eq!(
            derive_segmentation_labels(&["B-location", "B-group"]).unwrap(),
            ["B", "B"]
        );
        assert!(derive_segmentation_labels(&["Q"]).is_err());
    }

    #[test]
    fn bio_validation() {
        assert!(validate_bio(&["B-person", "I-person"], BioMode::Strict).is_ok());
        let err = validate_bio(&["O", "I-person"], BioMode::Strict).unwrap_err();
        assert!(matches!(err, Error::Validation { index: 1, .. }));
        let (fixed, n) = validate_bio(&["O", "I-person"], BioMode::Repair).unwrap();
        assert_eq!(
            (fixed, n),
            (vec!["O".to_string(), "B-person".to_string()], 1)
        );
        let (fixed, _) = validate_bio(&["B-person", "I-group"], BioMode::Repair).unwrap();
        assert_eq!(fixed[1], "B-group");
    }

    #[test]
    fn class_weight_examples() {
        let c = LabelCatalog::new(["person"]).unwrap();
        let mut rows = vec![("w", "O"); 90];
        rows.extend(vec![("t", "B-person"); 10]);
        let s = vec![sent(&rows)];
        let w = compute_class_weights(&s, &c, 0.0, 0.5).unwrap();
        assert_eq!(w.get("O"), Some(0.5));
        assert_eq!(w.get("B-person"), Some(1.0));
        assert_eq!(w.get("I-person"), Some(1.0));

        // Zero-count I-person takes the maximum raw weight, so B-person is
        // not the rescaling reference here.
        let w = compute_class_weights(&s, &c, 1.0, 1.0).unwrap();
        let (o, b) = (w.get("O").unwrap(), w.get("B-person").unwrap());
        assert!((b / o - 9.0).abs() < 1e-12);
        assert_eq!(w.get("I-person"), Some(1.0));
        assert!(b <= 1.0 && o < b);
    }

    #[test]
    fn class_weights_invariant_under_duplication() {
        let c = LabelCatalog::new(["a", "b"]).unwrap();
        let s = vec![
            sent(&[("x", "B-a"), ("y", "I-a"), ("z", "O"), ("q", "O")]),
            sent(&[("x", "B-b"), ("z", "O")]),
        ];
        let doubled: Vec<Sentence> = s.iter().chain(s.iter()).cloned().collect();
        let a = compute_class_weights(&s, &c, 0.5, 0.5).unwrap();
        let b = compute_class_weights(&doubled, &c, 0.5, 0.5).unwrap();
        for (x, y) in a.weights.iter().zip(&b.weights) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(compute_class_weights(&[], &c, 0.5, 0.5).is_err());
        assert!(compute_class_weights(&s, &c, 0.5, 0.0).is_err());
    }

    #[test]
    fn o_never_exceeds_entities() {
        let c = LabelCatalog::new(["a"]).unwrap();
        let s = vec![sent(&[
            ("x", "B-a"),
            ("y", "I-a"),
            ("y", "I-a"),
            ("y", "I-a"),
            ("z", "O"),
        ])];
        let w = compute_class_weights(&s, &c, 1.0, 1.0).unwrap();
        let o = w.get("O").unwrap();
        assert!(w
            .labels
            .iter()
            .zip(&w.weights)
            .all(|(l, &v)| l == "O" || o <= v));
    }

    #[test]
    fn stats_examples() {
        assert_eq!(corpus_stats(&[], true).unwrap(), DatasetStats::default());
        let s = [
            sent(&[("trey", "B-person"), ("is", "O")]),
            sent(&[("trey", "B-person"), ("songz", "I-person"), ("ok", "O")]),
            sent(&[("trey", "B-person")]),
        ];
        let st = corpus_stats(&s[..2], true).unwrap();
        assert_eq!((st.posts, st.tokens, st.ne_tokens), (2, 5, 3));
        assert!((st.unique_entity_pct - 100.0).abs() < 1e-12);
        let st = corpus_stats(&[s[0].clone(), s[2].clone()], true).unwrap();
        assert!((st.unique_entity_pct - 50.0).abs() < 1e-12);
        assert_eq!(st.per_class_counts["person"], 2);
        let json = st.to_json();
        assert!(json.contains("\"ne-token-pct\"") && json.contains("\"per-class-counts\""));

        let unlabeled = parse_conll("a N\n", ColumnSpec::unlabeled()).unwrap();
        assert!(corpus_stats(&unlabeled, true).is_err());
        assert_eq!(corpus_stats(&unlabeled, false).unwrap().tokens, 1);
    }

    fn label_strategy() -> impl Strategy<Value = String> {
        prop_oneof![
            Just("O".to_string()),
            Just("B-a".to_string()),
            Just("I-a".to_string()),
            Just("B-b".to_string()),
            Just("I-b".to_string()),
        ]
    }

    proptest! {
        #[test]
        fn repair_output_passes_strict(labels in prop::collection::vec(label_strategy(), 0..12)) {
            let (fixed, _) = validate_bio(&labels, BioMode::Repair).unwrap();
            prop_assert!(validate_bio(&fixed, BioMode::Strict).is_ok());
            let seg = derive_segmentation_labels(&labels).unwrap();
            prop_assert_eq!(seg.len(), labels.len());
            prop_assert!(seg.iter().all(|l| SEGMENTATION_LABELS.contains(&l.as_str())));
        }

        #[test]
        fn conll_round_trip(
            rows in prop::collection::vec(
                prop::collection::vec(("[a-zA-Z@#0-9]{1,8}", "[A-Z^,]{1,2}", label_strategy()), 1..6),
                0..5,
            )
        ) {
            let mut text = String::new();
            for sentence in &rows {
                for (w, p, l) in sentence {
                    text.push_str(&format!("{w}\t{p}\t{l}\n"));
                }
                text.push('\n');
            }
            let parsed = parse_conll(&text, ColumnSpec::standard()).unwrap();
            prop_assert_eq!(parsed.len(), rows.len());
            prop_assert_eq!(write_conll(&parsed, None), text);
        }

        #[test]
        fn preprocess_is_idempotent(w in "\\PC{1,10}") {
            let o = PreprocessOptions { hashtags: true };
            let s = Sentence { tokens: vec![Token::new(w, "N", None)], source_id: String::new() };
            let once = preprocess(&s, o);
            prop_assert_eq!(preprocess(&once, o), once);
        }
    }
}
