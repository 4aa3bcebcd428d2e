//! Browser bindings. Each export takes plain strings and returns JSON.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use phononer::crf::{bio_transition_mask, log_partition, marginals, viterbi};
use phononer::embeddings::{cosine, SubwordModel, DEFAULT_BUCKETS};
use phononer::numeric::Tensor;
use phononer::phonology::Phonology;

const SUBWORD_DIM: usize = 50;
const SUBWORD_SEED: u64 = 1;

#[derive(Debug, Serialize)]
pub struct Phone {
    pub symbol: String,
    pub features: Vec<(String, i8)>,
}

#[derive(Debug, Serialize)]
pub struct Transliteration {
    pub word: String,
    pub normalized: String,
    pub ipa: String,
    pub phones: Vec<Phone>,
}

#[derive(Debug, Serialize)]
pub struct Similarity {
    pub cosine: f64,
    pub shared_ngrams: Vec<String>,
    pub ngrams_a: usize,
    pub ngrams_b: usize,
    pub same_phonetics: bool,
}

#[derive(Debug, Serialize)]
pub struct Decoding {
    pub labels: Vec<String>,
    pub path: Vec<String>,
    pub path_score: f64,
    pub log_partition: f64,
    pub probability: f64,
    pub marginals: Vec<Vec<f64>>,
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

/// IPA phones of every whitespace-separated word, with their nonzero
/// articulatory features.
pub fn transliterate_text(text: &str) -> Vec<Transliteration> {
    let p = Phonology::english();
    let names = p.table.feature_names();
    text.split_whitespace()
        .map(|word| {
            let symbols = p.transliterate(word);
            let phones = symbols
                .iter()
                .map(|s| Phone {
                    symbol: s.clone(),
                    features: names
                        .iter()
                        .zip(p.articulatory_features(s))
                        .filter(|(_, v)| *v != 0)
                        .map(|(n, v)| (n.clone(), v))
                        .collect(),
                })
                .collect();
            Transliteration {
                word: word.to_string(),
                normalized: p.normalize(word),
                ipa: symbols.concat(),
                phones,
            }
        })
        .collect()
}

/// Cosine similarity of the hashed subword vectors of two words.
pub fn similarity(a: &str, b: &str) -> Similarity {
    let m = SubwordModel::seeded(SUBWORD_DIM, DEFAULT_BUCKETS, SUBWORD_SEED);
    let (a, b) = (a.trim().to_lowercase(), b.trim().to_lowercase());
    let (ga, gb) = (m.ngrams(&a), m.ngrams(&b));
    let mut shared: Vec<String> = ga.iter().filter(|g| gb.contains(g)).cloned().collect();
    shared.sort();
    shared.dedup();
    let p = Phonology::english();
    Similarity {
        cosine: cosine(&m.vector(&a), &m.vector(&b)),
        shared_ngrams: shared,
        ngrams_a: ga.len(),
        ngrams_b: gb.len(),
        same_phonetics: p.encode_chars(&a) == p.encode_chars(&b),
    }
}

/// Viterbi path and marginals for emission rows `[[f64; |labels|]; n]` with
/// zero transitions, optionally constrained to valid BIO sequences.
pub fn decode(labels: &[String], emissions: &[Vec<f64>], bio: bool) -> Result<Decoding, String> {
    let k = labels.len();
    if k == 0 || emissions.is_empty() {
        return Err("need at least one label and one token".into());
    }
    if let Some(row) = emissions.iter().find(|r| r.len() != k) {
        return Err(format!(
            "emission row has {} values, expected {k}",
            row.len()
        ));
    }
    let em = Tensor::from_vec(emissions.len(), k, emissions.concat()).map_err(|e| e.to_string())?;
    let tr = if bio {
        bio_transition_mask(labels)
    } else {
        Tensor::zeros(k + 2, k + 2)
    };
    let (path, score) = viterbi(&em, &tr).map_err(|e| e.to_string())?;
    let log_z = log_partition(&em, &tr).map_err(|e| e.to_string())?;
    let m = marginals(&em, &tr).map_err(|e| e.to_string())?;
    Ok(Decoding {
        labels: labels.to_vec(),
        path: path.iter().map(|&y| labels[y].clone()).collect(),
        path_score: score,
        log_partition: log_z,
        probability: (score - log_z).exp(),
        marginals: (0..m.rows()).map(|r| m.row(r).to_vec()).collect(),
    })
}

#[wasm_bindgen]
pub fn transliterate(text: &str) -> String {
    json(&transliterate_text(text))
}

#[wasm_bindgen]
pub fn subword_similarity(a: &str, b: &str) -> String {
    json(&similarity(a, b))
}

/// `labels` is comma-separated; `emissions` is a JSON array of rows.
#[wasm_bindgen]
pub fn crf_decode(labels: &str, emissions: &str, bio: bool) -> Result<String, JsError> {
    let labels: Vec<String> = labels
        .split(',')
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect();
    let rows: Vec<Vec<f64>> =
        serde_json::from_str(emissions).map_err(|e| JsError::new(&e.to_string()))?;
    decode(&labels, &rows, bio)
        .map(|d| json(&d))
        .map_err(|e| JsError::new(&e))
}
