//! Deterministic synthetic corpora for smoke tests and demos.
//!
//! The vocabulary has 200 pseudo-words: 60 entity words across three
//! classes and 140 non-entity words. Word vectors are 20-dimensional and
//! clustered by role so that the task is learnable from embeddings alone.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::corpus::{parse_conll, ColumnSpec, Sentence, Token};
use crate::embeddings::{load_embeddings, EmbeddingTable};

pub const VOCAB_SIZE: usize = 200;
pub const EMBEDDING_DIM: usize = 20;
pub const TRAIN_SENTENCES: usize = 50;
pub const DEV_SENTENCES: usize = 25;
pub const SEED: u64 = 2017;

pub const BUNDLED_TRAIN: &str = include_str!("../data/toy/train.conll");
pub const BUNDLED_DEV: &str = include_str!("../data/toy/dev.conll");
pub const BUNDLED_EMBEDDINGS: &str = include_str!("../data/toy/embeddings.txt");

const O_TAGS: [&str; 7] = ["N", "V", "D", "P", "A", "R", "O"];

/// Role of a vocabulary word inside entity mentions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    PersonFirst,
    PersonLast,
    Location,
    GroupName,
    GroupSuffix,
    Outside,
}

#[derive(Debug, Clone)]
pub struct ToyVocab {
    words: Vec<(String, Role, &'static str)>,
    vectors: Vec<Vec<f64>>,
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    const ONSETS: [&str; 14] = [
        "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
    ];
    const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
    let syllables = rng.gen_range(2..=3);
    (0..syllables)
        .map(|_| {
            format!(
                "{}{}",
                ONSETS.choose(rng).unwrap(),
                VOWELS.choose(rng).unwrap()
            )
        })
        .collect()
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

impl ToyVocab {
    pub fn new(seed: u64) -> Self {
        Self::build(seed, 0.35, true)
    }

    /// `entity_spread` is the noise scale around each entity-role centroid;
    /// with `proper_tag` false, entity words get ordinary POS tags.
    pub fn build(seed: u64, entity_spread: f64, proper_tag: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = std::collections::HashSet::new();
        let mut fresh = |rng: &mut ChaCha8Rng| loop {
            let w = pseudo_word(rng);
            if seen.insert(w.clone()) {
                return w;
            }
        };
        let plan = [
            (Role::PersonFirst, 12),
            (Role::PersonLast, 8),
            (Role::Location, 20),
            (Role::GroupName, 15),
            (Role::GroupSuffix, 5),
            (Role::Outside, 140),
        ];
        let centroids: Vec<Vec<f64>> = (0..plan.len())
            .map(|_| (0..EMBEDDING_DIM).map(|_| normal(&mut rng)).collect())
            .collect();
        let mut words = Vec::with_capacity(VOCAB_SIZE);
        let mut vectors = Vec::with_capacity(VOCAB_SIZE);
        for (k, &(role, count)) in plan.iter().enumerate() {
            for i in 0..count {
                let w = fresh(&mut rng);
                let (surface, tag) = match role {
                    Role::Outside => (w, O_TAGS[i % O_TAGS.len()]),
                    _ if proper_tag => (capitalize(&w), "^"),
                    _ => (capitalize(&w), O_TAGS[i % O_TAGS.len()]),
                };
                let spread = if role == Role::Outside {
                    1.0
                } else {
                    entity_spread
                };
                let scale = if role == Role::Outside { 0.0 } else { 1.0 };
                let v = centroids[k]
                    .iter()
                    .map(|c| {
                        let x = scale * c + spread * normal(&mut rng);
                        (x * 1e4).round() / 1e4
                    })
                    .collect();
                words.push((surface, role, tag));
                vectors.push(v);
            }
        }
        ToyVocab { words, vectors }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    fn of_role(&self, role: Role) -> Vec<usize> {
        (0..self.words.len())
            .filter(|&i| self.words[i].1 == role)
            .collect()
    }

    /// Text embedding file with a `count dim` header.
    pub fn embeddings_text(&self) -> String {
        let mut s = format!("{} {}\n", self.words.len(), EMBEDDING_DIM);
        for ((w, _, _), v) in self.words.iter().zip(&self.vectors) {
            s.push_str(w);
            for x in v {
                s.push(' ');
                s.push_str(&x.to_string());
            }
            s.push('\n');
        }
        s
    }

    fn token(&self, i: usize, label: &str) -> Token {
        let (w, _, tag) = &self.words[i];
        Token::new(w.as_str(), *tag, Some(label))
    }

    /// One random mention as tokens. `split` restricts entity words to even
    /// (`Some(0)`) or odd (`Some(1)`) positions within each role.
    fn mention(&self, split: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<Token> {
        let pick = |role, rng: &mut ChaCha8Rng| {
            let pool: Vec<usize> = self
                .of_role(role)
                .into_iter()
                .enumerate()
                .filter(|(k, _)| split.is_none_or(|s| k % 2 == s))
                .map(|(_, i)| i)
                .collect();
            *pool.choose(rng).unwrap()
        };
        match rng.gen_range(0..3) {
            0 => {
                let mut t = vec![self.token(pick(Role::PersonFirst, rng), "B-person")];
                if rng.gen_bool(0.5) {
                    t.push(self.token(pick(Role::PersonLast, rng), "I-person"));
                }
                t
            }
            1 => vec![self.token(pick(Role::Location, rng), "B-location")],
            _ => {
                let mut t = vec![self.token(pick(Role::GroupName, rng), "B-group")];
                if rng.gen_bool(0.4) {
                    t.push(self.token(pick(Role::GroupSuffix, rng), "I-group"));
                }
                t
            }
        }
    }

    fn outside(&self, rng: &mut ChaCha8Rng) -> Token {
        let i = *self.of_role(Role::Outside).choose(rng).unwrap();
        self.token(i, "O")
    }

    /// Sentences of 5–10 non-entity words with one or two mentions spliced in.
    pub fn sentences(&self, count: usize, rng: &mut ChaCha8Rng) -> Vec<Sentence> {
        (0..count)
            .map(|k| {
                let mut tokens: Vec<Token> = (0..rng.gen_range(5..=10))
                    .map(|_| self.outside(rng))
                    .collect();
                for _ in 0..rng.gen_range(1..=2) {
                    let at = rng.gen_range(0..=tokens.len());
                    let m = self.mention(None, rng);
                    let prev_entity = at > 0 && tokens[at - 1].gold.as_deref() != Some("O");
                    let next_entity = at < tokens.len() && tokens[at].gold.as_deref() != Some("O");
                    let mut insert = m;
                    if prev_entity {
                        insert.insert(0, self.outside(rng));
                    }
                    if next_entity {
                        insert.push(self.outside(rng));
                    }
                    tokens.splice(at..at, insert);
                }
                Sentence {
                    tokens,
                    source_id: (k + 1).to_string(),
                }
            })
            .collect()
    }

    /// Long sentences holding one mention each, so that about 95% of tokens
    /// are non-entities.
    pub fn skewed_sentences(
        &self,
        count: usize,
        split: Option<usize>,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Sentence> {
        (0..count)
            .map(|k| {
                let mut tokens: Vec<Token> = (0..rng.gen_range(22..=30))
                    .map(|_| self.outside(rng))
                    .collect();
                let at = rng.gen_range(1..tokens.len());
                tokens.splice(at..at, self.mention(split, rng));
                Sentence {
                    tokens,
                    source_id: (k + 1).to_string(),
                }
            })
            .collect()
    }
}

/// Generated train/dev corpora and vocabulary.
#[derive(Debug, Clone)]
pub struct ToyData {
    pub vocab: ToyVocab,
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
}

pub fn generate(seed: u64) -> ToyData {
    let vocab = ToyVocab::new(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let train = vocab.sentences(TRAIN_SENTENCES, &mut rng);
    let dev = vocab.sentences(DEV_SENTENCES, &mut rng);
    ToyData { vocab, train, dev }
}

/// Train/dev corpora skewed to roughly 95% non-entity tokens. Entity
/// vectors are noisy, entity words carry no proper-noun tag, and dev
/// mentions use only entity words unseen in training.
pub fn skewed(seed: u64, train: usize, dev: usize) -> ToyData {
    skewed_with(seed, train, dev, 0.5)
}

pub fn skewed_with(seed: u64, train: usize, dev: usize, spread: f64) -> ToyData {
    let vocab = ToyVocab::build(SEED, spread, false);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = vocab.skewed_sentences(train, Some(0), &mut rng);
    let dev = vocab.skewed_sentences(dev, Some(1), &mut rng);
    ToyData { vocab, train, dev }
}

/// The corpus and embeddings shipped under `data/toy`.
pub fn bundled() -> (Vec<Sentence>, Vec<Sentence>, EmbeddingTable) {
    let parse = |t| parse_conll(t, ColumnSpec::standard()).expect("bundled toy corpus parses");
    (
        parse(BUNDLED_TRAIN),
        parse(BUNDLED_DEV),
        load_embeddings(BUNDLED_EMBEDDINGS).expect("bundled toy embeddings parse"),
    )
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::corpus::{corpus_stats, write_conll};

    #[test]
    fn bundled_files_match_the_generator() {
        let d = generate(SEED);
        assert_eq!(write_conll(&d.train, None), BUNDLED_TRAIN);
        assert_eq!(write_conll(&d.dev, None), BUNDLED_DEV);
        assert_eq!(d.vocab.embeddings_text(), BUNDLED_EMBEDDINGS);
    }

    #[test]
    fn bundled_shape() {
        let (train, dev, emb) = bundled();
        assert_eq!(train.len(), TRAIN_SENTENCES);
        assert_eq!(dev.len(), DEV_SENTENCES);
        assert_eq!(emb.dim(), EMBEDDING_DIM);
        let st = corpus_stats(&train, true).unwrap();
        assert_eq!(st.per_class_counts.len(), 3);
        let used: BTreeSet<&str> = train
            .iter()
            .chain(&dev)
            .flat_map(|s| s.surfaces())
            .collect();
        assert!(used.iter().all(|w| emb.get(w).is_some()));
        assert_eq!(ToyVocab::new(SEED).len(), VOCAB_SIZE);
    }

    #[test]
    fn skewed_is_mostly_outside() {
        let d = skewed(1, 60, 10);
        let st = corpus_stats(&d.train, true).unwrap();
        let seen: BTreeSet<&str> = d.train.iter().flat_map(|s| s.surfaces()).collect();
        for s in &d.dev {
            for t in &s.tokens {
                if t.gold.as_deref() != Some("O") {
                    assert!(!seen.contains(t.surface.as_str()), "{}", t.surface);
                }
            }
        }
        assert!(
            (100.0 - st.ne_token_pct - 95.0).abs() < 1.5,
            "{}",
            st.ne_token_pct
        );
    }
}
