//! Frozen word vectors with a hashed character n-gram fallback for
//! out-of-vocabulary words.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{EMOJI_TOKEN, NUM_TOKEN, TAG_TOKEN, URL_TOKEN};
use crate::error::{Error, Result};

pub const UNK_WORD: &str = "<unk>";
pub const RESERVED_WORDS: [&str; 5] = [URL_TOKEN, EMOJI_TOKEN, TAG_TOKEN, NUM_TOKEN, UNK_WORD];

pub const DEFAULT_BUCKETS: u32 = 2_000_000;
pub const MIN_N: usize = 3;
pub const MAX_N: usize = 6;

pub fn fnv1a_32(bytes: &[u8]) -> u32 {
    let mut h: u32 = 0x811c_9dc5;
    for &b in bytes {
        h ^= u32::from(b);
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

fn seeded_vector(seed: u64, dim: usize, scale: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| rng.gen_range(-scale..scale)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    /// Duplicate words skipped while loading.
    pub duplicates: usize,
}

impl EmbeddingTable {
    /// Builds a table from `(word, vector)` pairs; the first occurrence of a
    /// word wins. Reserved words missing from `entries` get fixed vectors.
    pub fn from_entries<S: Into<String>>(
        dim: usize,
        entries: impl IntoIterator<Item = (S, Vec<f64>)>,
    ) -> Result<Self> {
        let mut table = EmbeddingTable {
            dim,
            vectors: HashMap::new(),
            duplicates: 0,
        };
        for (i, (w, v)) in entries.into_iter().enumerate() {
            if v.len() != dim {
                return Err(Error::parse(
                    i + 1,
                    format!("vector width {} != {dim}", v.len()),
                ));
            }
            table.insert(w.into(), v);
        }
        table.add_reserved();
        Ok(table)
    }

    fn insert(&mut self, word: String, v: Vec<f64>) {
        if let std::collections::hash_map::Entry::Vacant(e) = self.vectors.entry(word) {
            e.insert(v);
        } else {
            self.duplicates += 1;
        }
    }

    fn add_reserved(&mut self) {
        let scale = 1.0 / (self.dim.max(1) as f64).sqrt();
        for (i, w) in RESERVED_WORDS.iter().enumerate() {
            if !self.vectors.contains_key(*w) {
                let v = if *w == UNK_WORD {
                    vec![0.0; self.dim]
                } else {
                    seeded_vector(0x5eed_0000 + i as u64, self.dim, scale)
                };
                self.vectors.insert((*w).to_string(), v);
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of entries, reserved words included.
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    /// Exact match first, then the lowercased word.
    pub fn find(&self, word: &str) -> Option<&[f64]> {
        self.get(word).or_else(|| self.get(&word.to_lowercase()))
    }

    pub fn unk(&self) -> &[f64] {
        self.get(UNK_WORD).expect("reserved <unk> present")
    }
}

/// Parses `word v1 … vd` lines with an optional `count dim` header.
pub fn load_embeddings(text: &str) -> Result<EmbeddingTable> {
    let mut dim: Option<usize> = None;
    let mut table = EmbeddingTable {
        dim: 0,
        vectors: HashMap::new(),
        duplicates: 0,
    };
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else {
            continue;
        };
        let rest: Vec<&str> = fields.collect();
        if table.vectors.is_empty() && dim.is_none() && rest.len() == 1 {
            if let (Ok(_), Ok(d)) = (word.parse::<usize>(), rest[0].parse::<usize>()) {
                dim = Some(d);
                continue;
            }
        }
        let expected = *dim.get_or_insert(rest.len());
        if rest.len() != expected {
            return Err(Error::parse(
                lineno,
                format!("expected {expected} values, found {}", rest.len()),
            ));
        }
        let v = rest
            .iter()
            .map(|x| x.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::parse(lineno, e.to_string()))?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::parse(lineno, "non-finite vector entry"));
        }
        table.insert(word.to_string(), v);
    }
    table.dim = dim.unwrap_or(0);
    if table.duplicates > 0 {
        log::warn!("{} duplicate embedding rows ignored", table.duplicates);
    }
    table.add_reserved();
    Ok(table)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    load_embeddings(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[derive(Debug, Clone, PartialEq)]
enum BucketSource {
    Seeded(u64),
    Table(HashMap<u32, Vec<f64>>),
}

/// Mean of hashed n-gram bucket vectors over the `<word>`-wrapped string.
#[derive(Debug, Clone, PartialEq)]
pub struct SubwordModel {
    pub dim: usize,
    pub buckets: u32,
    pub min_n: usize,
    pub max_n: usize,
    source: BucketSource,
}

impl SubwordModel {
    /// Bucket vectors drawn uniformly from ±1/√dim by a generator keyed on
    /// `seed` and the bucket index.
    pub fn seeded(dim: usize, buckets: u32, seed: u64) -> Self {
        assert!(buckets > 0, "bucket count must be positive");
        SubwordModel {
            dim,
            buckets,
            min_n: MIN_N,
            max_n: MAX_N,
            source: BucketSource::Seeded(seed),
        }
    }

    /// Parses `bucket-index v1 … vd` lines. Buckets absent from the file are
    /// zero vectors.
    pub fn from_bucket_file(text: &str, dim: usize, buckets: u32) -> Result<Self> {
        let mut table = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let mut fields = line.split_whitespace();
            let Some(ix) = fields.next() else {
                continue;
            };
            let ix: u32 = ix
                .parse()
                .map_err(|_| Error::parse(lineno, format!("bad bucket index `{ix}`")))?;
            if ix >= buckets {
                return Err(Error::parse(
                    lineno,
                    format!("bucket {ix} ≥ bucket count {buckets}"),
                ));
            }
            let v = fields
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::parse(lineno, e.to_string()))?;
            if v.len() != dim {
                return Err(Error::parse(
                    lineno,
                    format!("expected {dim} values, found {}", v.len()),
                ));
            }
            table.insert(ix, v);
        }
        Ok(SubwordModel {
            dim,
            buckets,
            min_n: MIN_N,
            max_n: MAX_N,
            source: BucketSource::Table(table),
        })
    }

    pub fn read_bucket_file(path: impl AsRef<Path>, dim: usize, buckets: u32) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bucket_file(
            &std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?,
            dim,
            buckets,
        )
    }

    pub fn bucket(&self, ngram: &str) -> u32 {
        fnv1a_32(ngram.as_bytes()) % self.buckets
    }

    pub fn bucket_vector(&self, bucket: u32) -> Vec<f64> {
        match &self.source {
            BucketSource::Seeded(seed) => {
                let key = seed ^ u64::from(bucket).wrapping_mul(0x9e37_79b9_7f4a_7c15);
                seeded_vector(key, self.dim, 1.0 / (self.dim.max(1) as f64).sqrt())
            }
            BucketSource::Table(t) => t
                .get(&bucket)
                .cloned()
                .unwrap_or_else(|| vec![0.0; self.dim]),
        }
    }

    pub fn ngrams(&self, word: &str) -> Vec<String> {
        let wrapped: Vec<char> = format!("<{word}>").chars().collect();
        if wrapped.len() < self.min_n {
            return vec![wrapped.into_iter().collect()];
        }
        let mut out = Vec::new();
        for n in self.min_n..=self.max_n.min(wrapped.len()) {
            for w in wrapped.windows(n) {
                out.push(w.iter().collect());
            }
        }
        out
    }

    pub fn vector(&self, word: &str) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        if word.is_empty() {
            return out;
        }
        let grams = self.ngrams(word);
        for g in &grams {
            for (o, v) in out.iter_mut().zip(self.bucket_vector(self.bucket(g))) {
                *o += v;
            }
        }
        let n = grams.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }
}

pub fn subword_vector(word: &str, model: &SubwordModel) -> Vec<f64> {
    model.vector(word)
}

/// Stored vector when present (exact, then lowercased); otherwise the
/// subword vector of the lowercased word, or `<unk>` without a model.
pub fn lookup(word: &str, table: &EmbeddingTable, subword: Option<&SubwordModel>) -> Vec<f64> {
    if let Some(v) = table.find(word) {
        return v.to_vec();
    }
    match subword {
        Some(m) => m.vector(&word.to_lowercase()),
        None => table.unk().to_vec(),
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a_32(b""), 0x811c9dc5);
        assert_eq!(fnv1a_32(b"a"), 0xe40c292c);
        assert_eq!(fnv1a_32(b"foobar"), 0xbf9cf968);
    }

    #[test]
    fn load_shapes() {
        let t = load_embeddings("a 1 2 3 4\nb 1 2 3 4\nc 0 0 0 0\n").unwrap();
        assert_eq!(t.dim(), 4);
        assert_eq!(t.len(), 3 + RESERVED_WORDS.len());
        let t = load_embeddings("2 5\nx 1 2 3 4 5\ny 1 2 3 4 5\n").unwrap();
        assert_eq!(t.dim(), 5);
        let t = load_embeddings("x 1 2\nx 3 4\n").unwrap();
        assert_eq!((t.duplicates, t.get("x").unwrap()), (1, &[1.0, 2.0][..]));
        let err = load_embeddings("x 1 2\ny 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn reserved_vectors_are_present_and_distinct() {
        let t = load_embeddings("x 1 2 3\n").unwrap();
        assert_eq!(t.unk(), &[0.0; 3]);
        assert_ne!(t.get(URL_TOKEN), t.get(NUM_TOKEN));
        let t = load_embeddings("<url> 9 9 9\n").unwrap();
        assert_eq!(t.get(URL_TOKEN).unwrap(), &[9.0; 3]);
    }

    #[test]
    fn lookup_dispatch() {
        let t = load_embeddings("defence 0.5 0.25\n").unwrap();
        let m = SubwordModel::seeded(2, 1000, 7);
        assert_eq!(lookup("defence", &t, Some(&m)), vec![0.5, 0.25]);
        assert_eq!(lookup("Defence", &t, Some(&m)), vec![0.5, 0.25]);
        assert_eq!(lookup("zurich", &t, Some(&m)), subword_vector("zurich", &m));
        assert_eq!(lookup("zurich", &t, None), vec![0.0, 0.0]);
    }

    #[test]
    fn ngram_enumeration() {
        let m = SubwordModel::seeded(3, 100, 1);
        assert_eq!(m.ngrams("ab"), ["<ab", "ab>", "<ab>"]);
        assert_eq!(m.ngrams("x"), ["<x>"]);
        let expected: Vec<f64> = (0..3)
            .map(|d| {
                ["<ab", "ab>", "<ab>"]
                    .iter()
                    .map(|g| m.bucket_vector(m.bucket(g))[d])
                    .sum::<f64>()
                    / 3.0
            })
            .collect();
        assert_eq!(m.vector("ab"), expected);
    }

    #[test]
    fn single_bucket_gives_the_bucket_vector() {
        let m = SubwordModel::seeded(4, 1, 3);
        let v = m.bucket_vector(0);
        for w in ["a", "kidding", "zurich"] {
            for (x, y) in m.vector(w).iter().zip(&v) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn misspelling_stays_close() {
        let m = SubwordModel::seeded(50, DEFAULT_BUCKETS, 42);
        let near = cosine(&m.vector("kiddding"), &m.vector("kidding"));
        let far = cosine(&m.vector("zurich"), &m.vector("kidding"));
        assert!(near > far, "{near} vs {far}");
    }

    #[test]
    fn bucket_file() {
        let m = SubwordModel::from_bucket_file("0 1 1\n", 2, 1).unwrap();
        assert_eq!(m.vector("anything"), vec![1.0, 1.0]);
        assert!(SubwordModel::from_bucket_file("5 1 1\n", 2, 3).is_err());
        assert!(SubwordModel::from_bucket_file("0 1\n", 2, 3).is_err());
    }

    proptest! {
        #[test]
        fn oov_lookup_ignores_file_order(mut rows in prop::collection::vec(("[a-z]{1,6}", -1.0f64..1.0), 1..8), seed in 0u64..100) {
            let m = SubwordModel::seeded(2, 5000, seed);
            let text = |rows: &[(String, f64)]| rows.iter().map(|(w, x)| format!("{w} {x} {x}\n")).collect::<String>();
            let a = load_embeddings(&text(&rows)).unwrap();
            rows.reverse();
            let b = load_embeddings(&text(&rows)).unwrap();
            prop_assert_eq!(lookup("qqqqqqq", &a, Some(&m)), lookup("qqqqqqq", &b, Some(&m)));
        }

        #[test]
        fn every_nonempty_word_has_a_vector(w in "\\PC{1,12}") {
            let m = SubwordModel::seeded(3, 97, 0);
            let v = m.vector(&w);
            prop_assert_eq!(v.len(), 3);
            prop_assert!(v.iter().all(|x| x.is_finite()));
        }
    }
}
