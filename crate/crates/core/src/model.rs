//! The shared word encoder and the two architectures built on it: an
//! end-to-end network with a CRF per task, and a stacked extractor with
//! softmax heads whose dense activations feed a standalone CRF.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    is_reserved, validate_bio, BioMode, ClassWeights, LabelCatalog, Sentence, OUTSIDE, UNK_POS,
};
use crate::crf::{bio_transition_mask, CrfParams};
use crate::embeddings::{lookup, EmbeddingTable, SubwordModel};
use crate::error::{Error, Result};
use crate::layers::{lookup_id, BiLstm, Dense, CHAR_HIDDEN, DENSE_DIM, WORD_HIDDEN};
use crate::numeric::{
    finite_difference_check, param_rng, Checkpoint, GradCheckReport, Graph, NodeId, ParamId,
    ParamStore, Tensor,
};
use crate::phonology::Phonology;

pub const POS_DIM: usize = 50;

/// POS tags seen in training, with `<unk-pos>` last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tagset {
    tags: Vec<String>,
    index: HashMap<String, usize>,
}

impl Tagset {
    pub fn new<S: AsRef<str>>(tags: impl IntoIterator<Item = S>) -> Self {
        let mut set: BTreeSet<String> = tags.into_iter().map(|t| t.as_ref().to_string()).collect();
        set.remove(UNK_POS);
        let mut tags: Vec<String> = set.into_iter().collect();
        tags.push(UNK_POS.to_string());
        let index = tags
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Tagset { tags, index }
    }

    pub fn from_corpus(sentences: &[Sentence]) -> Self {
        Self::new(
            sentences
                .iter()
                .flat_map(|s| s.tokens.iter().map(|t| t.pos.as_str())),
        )
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Index of `tag`, or of `<unk-pos>` for unseen tags.
    pub fn index(&self, tag: &str) -> usize {
        self.index.get(tag).copied().unwrap_or(self.tags.len() - 1)
    }
}

/// Layer widths. Defaults follow the published configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub char_hidden: usize,
    pub word_hidden: usize,
    pub dense: usize,
    pub pos: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            char_hidden: CHAR_HIDDEN,
            word_hidden: WORD_HIDDEN,
            dense: DENSE_DIM,
            pos: POS_DIM,
        }
    }
}

/// Architecture switches shared by both models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dims: ModelDims,
    pub dropout: f64,
    pub alpha: f64,
    /// Keep the segmentation task (otherwise a categorization-only model).
    pub multitask: bool,
    pub phonetics: bool,
    pub pos: bool,
    /// Add hard BIO transition constraints to every CRF.
    pub bio_constraints: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dims: ModelDims::default(),
            dropout: 0.5,
            alpha: 1.0,
            multitask: true,
            phonetics: true,
            pos: true,
            bio_constraints: false,
        }
    }
}

/// Frozen inputs of one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceFeatures {
    /// n × dim_x word vectors.
    pub words: Tensor,
    pub pos: Vec<usize>,
    /// Distinct phoneme matrices in the sentence.
    pub chars: Vec<Tensor>,
    /// Per token, an index into `chars` (empty when phonetics are off).
    pub char_of: Vec<usize>,
}

impl SentenceFeatures {
    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }
}

/// Turns tokens into word vectors, POS indices and phoneme matrices.
#[derive(Debug, Clone)]
pub struct Featurizer {
    pub phonology: Phonology,
    pub embeddings: EmbeddingTable,
    pub subword: Option<SubwordModel>,
    /// When false every word maps to `<unk>` (ablation of pretrained vectors).
    pub pretrained: bool,
}

impl Featurizer {
    pub fn new(
        phonology: Phonology,
        embeddings: EmbeddingTable,
        subword: Option<SubwordModel>,
    ) -> Self {
        Featurizer {
            phonology,
            embeddings,
            subword,
            pretrained: true,
        }
    }

    pub fn word_dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn char_dim(&self) -> usize {
        self.phonology.feature_width()
    }

    pub fn word_vector(&self, surface: &str) -> Vec<f64> {
        if self.pretrained {
            lookup(surface, &self.embeddings, self.subword.as_ref())
        } else {
            self.embeddings.unk().to_vec()
        }
    }

    /// Phoneme matrix of a token; reserved tokens have no phonemes.
    pub fn char_matrix(&self, surface: &str) -> Tensor {
        if is_reserved(surface) {
            Tensor::zeros(0, self.char_dim())
        } else {
            self.phonology.encode_chars(surface).matrix
        }
    }

    pub fn featurize(
        &self,
        sentence: &Sentence,
        tagset: &Tagset,
        phonetics: bool,
    ) -> Result<SentenceFeatures> {
        let rows: Vec<Vec<f64>> = sentence
            .tokens
            .iter()
            .map(|t| self.word_vector(&t.surface))
            .collect();
        let words = if rows.is_empty() {
            Tensor::zeros(0, self.word_dim())
        } else {
            Tensor::from_rows(&rows)?
        };
        let pos = sentence
            .tokens
            .iter()
            .map(|t| tagset.index(&t.pos))
            .collect();
        let mut chars = Vec::new();
        let mut char_of = Vec::new();
        if phonetics {
            let mut seen: HashMap<&str, usize> = HashMap::new();
            for t in &sentence.tokens {
                let next = seen.len();
                let ix = *seen.entry(t.surface.as_str()).or_insert(next);
                if ix == chars.len() {
                    chars.push(self.char_matrix(&t.surface));
                }
                char_of.push(ix);
            }
        }
        Ok(SentenceFeatures {
            words,
            pos,
            chars,
            char_of,
        })
    }
}

/// Char BLSTM → `[x; p; h]` → word BLSTM → dense ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub char: Option<BiLstm>,
    pub pos: Option<ParamId>,
    pub word: BiLstm,
    pub dense: Dense,
    pub dropout: f64,
}

impl Encoder {
    pub fn register(
        store: &mut ParamStore,
        config: &ModelConfig,
        word_dim: usize,
        char_dim: usize,
        tags: usize,
        seed: u64,
    ) -> Result<Self> {
        let d = config.dims;
        let char = config
            .phonetics
            .then(|| BiLstm::register(store, "enc.char", char_dim, d.char_hidden, seed))
            .transpose()?;
        let pos = if config.pos {
            let name = "enc.pos";
            let mut rng = param_rng(seed, name);
            let limit = (3.0 / d.pos as f64).sqrt();
            let data = (0..tags * d.pos)
                .map(|_| rand::Rng::gen_range(&mut rng, -limit..limit))
                .collect();
            Some(store.add(name, Tensor::from_vec(tags, d.pos, data)?)?)
        } else {
            None
        };
        let input = word_dim
            + if config.pos { d.pos } else { 0 }
            + char.as_ref().map_or(0, BiLstm::output_dim);
        let word = BiLstm::register(store, "enc.word", input, d.word_hidden, seed)?;
        let dense = Dense::register(store, "enc.dense", word.output_dim(), d.dense, seed)?;
        Ok(Encoder {
            char,
            pos,
            word,
            dense,
            dropout: config.dropout,
        })
    }

    pub fn lookup(store: &ParamStore, dropout: f64) -> Result<Self> {
        let char = store
            .id("enc.char.fwd.w")
            .map(|_| BiLstm::lookup(store, "enc.char"))
            .transpose()?;
        Ok(Encoder {
            char,
            pos: store.id("enc.pos"),
            word: BiLstm::lookup(store, "enc.word")?,
            dense: Dense::lookup(store, "enc.dense")?,
            dropout,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.dense.output_dim
    }

    /// n × dense matrix of `z` vectors. Dropout applies to the char-pool
    /// output and to the word-BLSTM input and output when `train` is set.
    pub fn encode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        f: &SentenceFeatures,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        if f.is_empty() {
            return Err(Error::Usage("cannot encode an empty sentence".into()));
        }
        let mut parts = vec![g.input(f.words.clone())];
        if let Some(pos) = self.pos {
            let table = g.param(store, pos);
            parts.push(g.gather_rows(table, &f.pos)?);
        }
        if let Some(ch) = &self.char {
            if f.char_of.len() != f.len() {
                return Err(Error::Usage("features were built without phonetics".into()));
            }
            let pooled = f
                .chars
                .iter()
                .map(|m| {
                    let x = g.input(m.clone());
                    ch.pool(g, store, x)
                })
                .collect::<Result<Vec<_>>>()?;
            let rows: Vec<NodeId> = f.char_of.iter().map(|&i| pooled[i]).collect();
            let h = g.stack_rows(&rows)?;
            parts.push(g.dropout(h, self.dropout, train, rng)?);
        }
        let a = g.concat_cols(&parts)?;
        let a = g.dropout(a, self.dropout, train, rng)?;
        let r = self.word.seq(g, store, a)?;
        let r = g.dropout(r, self.dropout, train, rng)?;
        self.dense.relu(g, store, r)
    }

    /// Dropout-free `z` as a plain tensor.
    pub fn features(&self, store: &ParamStore, f: &SentenceFeatures) -> Result<Tensor> {
        let mut g = Graph::new();
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let z = self.encode(&mut g, store, f, false, &mut rng)?;
        Ok(g.value(z).clone())
    }
}

/// One training sentence with gold indices and loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: SentenceFeatures,
    pub cat: Vec<usize>,
    pub seg: Vec<usize>,
    /// Class weight of each token's gold category label.
    pub weights: Vec<f64>,
}

impl Example {
    pub fn new(
        features: SentenceFeatures,
        sentence: &Sentence,
        catalog: &LabelCatalog,
        weights: Option<&ClassWeights>,
    ) -> Result<Self> {
        let gold = sentence
            .gold_labels()
            .ok_or_else(|| Error::Usage(format!("sentence {} is unlabeled", sentence.source_id)))?;
        let cat = catalog.indices(&gold)?;
        let seg = cat.iter().map(|&c| catalog.segmentation_of(c)).collect();
        let weights = cat
            .iter()
            .map(|&c| weights.map_or(1.0, |w| w.weight(c)))
            .collect();
        Ok(Example {
            features,
            cat,
            seg,
            weights,
        })
    }

    /// Mean gold-label weight, used to scale sentence-level CRF losses.
    pub fn sentence_weight(&self) -> f64 {
        if self.weights.is_empty() {
            1.0
        } else {
            self.weights.iter().sum::<f64>() / self.weights.len() as f64
        }
    }
}

/// Anything trainable by the shared loop.
pub trait Network {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    fn loss(
        &self,
        g: &mut Graph,
        ex: &Example,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId>;
    /// Category label indices before BIO repair.
    fn decode(&self, f: &SentenceFeatures) -> Result<Vec<usize>>;
    fn catalog(&self) -> &LabelCatalog;
}

/// Maps category indices to labels and repairs stray `I-` tags.
pub fn labels_from_indices(catalog: &LabelCatalog, indices: &[usize]) -> Result<Vec<String>> {
    let raw: Vec<&str> = indices.iter().map(|&i| catalog.label(i)).collect();
    Ok(validate_bio(&raw, BioMode::Repair)?.0)
}

fn constraint_mask(catalog: &LabelCatalog, labels: usize, on: bool) -> Option<Tensor> {
    if !on {
        return None;
    }
    let names: Vec<String> = if labels == catalog.len() {
        catalog.labels().to_vec()
    } else {
        ["B-x", "I-x", OUTSIDE]
            .iter()
            .map(|s| s.to_string())
            .collect()
    };
    Some(bio_transition_mask(&names))
}

fn check_lengths(ex: &Example) -> Result<()> {
    let n = ex.features.len();
    if ex.cat.len() != n || ex.seg.len() != n || ex.weights.len() != n {
        return Err(Error::Dimension {
            op: "labels vs tokens",
            left: (n, 1),
            right: (ex.cat.len(), ex.seg.len()),
        });
    }
    Ok(())
}

/// End-to-end model: the encoder feeds a segmentation CRF and a
/// categorization CRF, trained on `α·nll_seg + nll_cat`.
#[derive(Debug, Clone, PartialEq)]
pub struct E2EModel {
    pub store: ParamStore,
    pub encoder: Encoder,
    pub seg: Option<CrfParams>,
    pub cat: CrfParams,
    pub alpha: f64,
    /// Scale each sentence's loss by its mean gold-label weight.
    pub weighted: bool,
    pub catalog: LabelCatalog,
    pub tagset: Tagset,
    pub config: ModelConfig,
}

impl E2EModel {
    pub fn new(
        config: ModelConfig,
        catalog: LabelCatalog,
        tagset: Tagset,
        word_dim: usize,
        char_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let encoder =
            Encoder::register(&mut store, &config, word_dim, char_dim, tagset.len(), seed)?;
        let z = encoder.output_dim();
        let seg = config
            .multitask
            .then(|| CrfParams::register(&mut store, "seg", z, 3, seed))
            .transpose()?
            .map(|c| c.with_mask(constraint_mask(&catalog, 3, config.bio_constraints)));
        let cat = CrfParams::register(&mut store, "cat", z, catalog.len(), seed)?.with_mask(
            constraint_mask(&catalog, catalog.len(), config.bio_constraints),
        );
        Ok(E2EModel {
            store,
            encoder,
            seg,
            cat,
            alpha: config.alpha,
            weighted: true,
            catalog,
            tagset,
            config,
        })
    }

    pub fn predict(&self, f: &SentenceFeatures) -> Result<Vec<String>> {
        labels_from_indices(&self.catalog, &self.decode(f)?)
    }
}

impl Network for E2EModel {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn loss(
        &self,
        g: &mut Graph,
        ex: &Example,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        check_lengths(ex)?;
        let z = self
            .encoder
            .encode(g, &self.store, &ex.features, train, rng)?;
        let mut loss = self.cat.nll_node(g, &self.store, z, &ex.cat)?;
        if let Some(seg) = &self.seg {
            let s = seg.nll_node(g, &self.store, z, &ex.seg)?;
            let s = g.scale(s, self.alpha);
            loss = g.add(s, loss)?;
        }
        if self.weighted {
            loss = g.scale(loss, ex.sentence_weight());
        }
        Ok(loss)
    }

    fn decode(&self, f: &SentenceFeatures) -> Result<Vec<usize>> {
        let z = self.encoder.features(&self.store, f)?;
        Ok(self.cat.viterbi(&self.store, &z)?.0)
    }

    fn catalog(&self) -> &LabelCatalog {
        &self.catalog
    }
}

/// Stacked extractor: softmax heads over `z`, trained on weighted
/// `α·H_seg + H_cat`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedExtractor {
    pub store: ParamStore,
    pub encoder: Encoder,
    pub seg_head: Option<Dense>,
    pub cat_head: Dense,
    pub alpha: f64,
    pub catalog: LabelCatalog,
    pub tagset: Tagset,
    pub config: ModelConfig,
}

impl StackedExtractor {
    pub fn new(
        config: ModelConfig,
        catalog: LabelCatalog,
        tagset: Tagset,
        word_dim: usize,
        char_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let encoder =
            Encoder::register(&mut store, &config, word_dim, char_dim, tagset.len(), seed)?;
        let z = encoder.output_dim();
        let seg_head = config
            .multitask
            .then(|| Dense::register(&mut store, "seg", z, 3, seed))
            .transpose()?;
        let cat_head = Dense::register(&mut store, "cat", z, catalog.len(), seed)?;
        Ok(StackedExtractor {
            store,
            encoder,
            seg_head,
            cat_head,
            alpha: config.alpha,
            catalog,
            tagset,
            config,
        })
    }

    /// Per-token argmax of the categorization head (ties to the lower index).
    pub fn softmax_decode(&self, f: &SentenceFeatures) -> Result<Vec<usize>> {
        let mut g = Graph::new();
        let z = g.input(self.encoder.features(&self.store, f)?);
        let logits = self.cat_head.affine(&mut g, &self.store, z)?;
        let v = g.value(logits);
        Ok((0..v.rows())
            .map(|r| {
                v.row(r)
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &x)| {
                        if x > best.1 {
                            (i, x)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect())
    }

    /// Head probabilities (rows sum to one) for both tasks.
    pub fn head_probabilities(&self, f: &SentenceFeatures) -> Result<(Option<Tensor>, Tensor)> {
        let mut g = Graph::new();
        let z = g.input(self.encoder.features(&self.store, f)?);
        let seg = match &self.seg_head {
            Some(h) => {
                let l = h.affine(&mut g, &self.store, z)?;
                let p = g.row_softmax(l);
                Some(g.value(p).clone())
            }
            None => None,
        };
        let l = self.cat_head.affine(&mut g, &self.store, z)?;
        let p = g.row_softmax(l);
        Ok((seg, g.value(p).clone()))
    }

    pub fn extract_features(&self, f: &SentenceFeatures) -> Result<Tensor> {
        self.encoder.features(&self.store, f)
    }
}

impl Network for StackedExtractor {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn loss(
        &self,
        g: &mut Graph,
        ex: &Example,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        check_lengths(ex)?;
        let z = self
            .encoder
            .encode(g, &self.store, &ex.features, train, rng)?;
        let logits = self.cat_head.affine(g, &self.store, z)?;
        let mut loss = g.softmax_cross_entropy(logits, &ex.cat, &ex.weights)?;
        if let Some(head) = &self.seg_head {
            let logits = head.affine(g, &self.store, z)?;
            let h = g.softmax_cross_entropy(logits, &ex.seg, &ex.weights)?;
            let h = g.scale(h, self.alpha);
            loss = g.add(h, loss)?;
        }
        Ok(loss)
    }

    fn decode(&self, f: &SentenceFeatures) -> Result<Vec<usize>> {
        self.softmax_decode(f)
    }

    fn catalog(&self) -> &LabelCatalog {
        &self.catalog
    }
}

/// CRF over exported `z` features, trained separately from the extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct StandaloneCrf {
    pub store: ParamStore,
    pub crf: CrfParams,
    pub catalog: LabelCatalog,
}

impl StandaloneCrf {
    pub fn new(
        catalog: LabelCatalog,
        feature_dim: usize,
        seed: u64,
        bio_constraints: bool,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let crf = CrfParams::register(&mut store, "crf", feature_dim, catalog.len(), seed)?
            .with_mask(constraint_mask(&catalog, catalog.len(), bio_constraints));
        Ok(StandaloneCrf {
            store,
            crf,
            catalog,
        })
    }

    pub fn decode(&self, z: &Tensor) -> Result<Vec<usize>> {
        Ok(self.crf.viterbi(&self.store, z)?.0)
    }

    pub fn predict(&self, z: &Tensor) -> Result<Vec<String>> {
        labels_from_indices(&self.catalog, &self.decode(z)?)
    }
}

/// Stacked pipeline: extractor features decoded by the standalone CRF.
pub fn predict_stacked(
    extractor: &StackedExtractor,
    crf: &StandaloneCrf,
    f: &SentenceFeatures,
) -> Result<Vec<String>> {
    crf.predict(&extractor.extract_features(f)?)
}

pub fn predict_e2e(model: &E2EModel, f: &SentenceFeatures) -> Result<Vec<String>> {
    model.predict(f)
}

/// Finite-difference check of a network's full loss on one example. The
/// dropout generator is reseeded with `seed` for every evaluation, so
/// `train = true` checks a fixed dropout mask.
pub fn gradient_check(
    net: &mut dyn Network,
    ex: &Example,
    epsilon: f64,
    per_param: Option<usize>,
    train: bool,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut store = net.store().clone();
    finite_difference_check(&mut store, epsilon, per_param, |s| {
        std::mem::swap(net.store_mut(), s);
        let mut g = Graph::new();
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let out = net.loss(&mut g, ex, train, &mut rng).and_then(|l| {
            let v = g.scalar(l);
            g.backward(l, net.store_mut()).map(|_| v)
        });
        std::mem::swap(net.store_mut(), s);
        out
    })
}

/// Per-token `z` vectors of one sentence and their gold labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub labels: Vec<Option<String>>,
    pub z: Tensor,
}

impl FeatureRecord {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn extract_features(
    extractor: &StackedExtractor,
    sentences: &[Sentence],
    featurizer: &Featurizer,
) -> Result<Vec<FeatureRecord>> {
    sentences
        .iter()
        .map(|s| {
            let f = featurizer.featurize(s, &extractor.tagset, extractor.config.phonetics)?;
            Ok(FeatureRecord {
                labels: s.tokens.iter().map(|t| t.gold.clone()).collect(),
                z: extractor.extract_features(&f)?,
            })
        })
        .collect()
}

/// `gold v1 … vd` per token, a blank line after each sentence. Unlabeled
/// tokens are written as `_`. Values use the shortest exact decimal form.
pub fn write_feature_records(records: &[FeatureRecord]) -> String {
    let mut out = String::new();
    for r in records {
        for (t, label) in r.labels.iter().enumerate() {
            out.push_str(label.as_deref().unwrap_or("_"));
            for v in r.z.row(t) {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

pub fn parse_feature_records(text: &str) -> Result<Vec<FeatureRecord>> {
    let mut records = Vec::new();
    let mut labels: Vec<Option<String>> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    let mut flush = |labels: &mut Vec<Option<String>>, rows: &mut Vec<Vec<f64>>| -> Result<()> {
        if !labels.is_empty() {
            records.push(FeatureRecord {
                labels: std::mem::take(labels),
                z: Tensor::from_rows(&std::mem::take(rows))?,
            });
        }
        Ok(())
    };
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let Some(label) = fields.next() else {
            flush(&mut labels, &mut rows)?;
            continue;
        };
        let v = fields
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
        let w = *width.get_or_insert(v.len());
        if v.len() != w || w == 0 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {w} feature values, found {}", v.len()),
            });
        }
        labels.push((label != "_").then(|| label.to_string()));
        rows.push(v);
    }
    flush(&mut labels, &mut rows)?;
    Ok(records)
}

pub fn read_feature_records(path: impl AsRef<Path>) -> Result<Vec<FeatureRecord>> {
    let path = path.as_ref();
    parse_feature_records(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// Which network a checkpoint holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    E2e,
    Stacked,
    Crf,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::E2e => "e2e",
            ModelKind::Stacked => "stacked",
            ModelKind::Crf => "crf",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "e2e" => Ok(ModelKind::E2e),
            "stacked" => Ok(ModelKind::Stacked),
            "crf" => Ok(ModelKind::Crf),
            other => Err(Error::Config(format!("unknown model kind `{other}`"))),
        }
    }
}

fn base_metadata(kind: ModelKind, catalog: &LabelCatalog) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("kind".into(), kind.as_str().into());
    m.insert(
        "classes".into(),
        serde_json::to_string(catalog.classes()).expect("json"),
    );
    m
}

fn network_metadata(
    kind: ModelKind,
    catalog: &LabelCatalog,
    tagset: &Tagset,
    config: &ModelConfig,
) -> BTreeMap<String, String> {
    let mut m = base_metadata(kind, catalog);
    m.insert(
        "tagset".into(),
        serde_json::to_string(tagset.tags()).expect("json"),
    );
    m.insert(
        "model-config".into(),
        serde_json::to_string(config).expect("json"),
    );
    m
}

fn read_json<T: for<'de> Deserialize<'de>>(ck: &Checkpoint, key: &str) -> Result<T> {
    serde_json::from_str(ck.meta(key)?)
        .map_err(|e| Error::Checkpoint(format!("metadata `{key}`: {e}")))
}

fn expect_kind(ck: &Checkpoint, kind: ModelKind) -> Result<()> {
    let found = ck.meta("kind")?;
    if found != kind.as_str() {
        return Err(Error::Checkpoint(format!(
            "expected a {} checkpoint, found `{found}`",
            kind.as_str()
        )));
    }
    Ok(())
}

fn restore_catalog(ck: &Checkpoint) -> Result<LabelCatalog> {
    LabelCatalog::new(read_json::<Vec<String>>(ck, "classes")?)
}

fn restore_network(ck: &Checkpoint) -> Result<(LabelCatalog, Tagset, ModelConfig, Encoder)> {
    let catalog = restore_catalog(ck)?;
    let tagset = Tagset::new(read_json::<Vec<String>>(ck, "tagset")?);
    let config: ModelConfig = read_json(ck, "model-config")?;
    let encoder = Encoder::lookup(&ck.params, config.dropout)?;
    Ok((catalog, tagset, config, encoder))
}

impl E2EModel {
    pub fn to_checkpoint(&self, extra: &BTreeMap<String, String>) -> Checkpoint {
        let mut m = network_metadata(ModelKind::E2e, &self.catalog, &self.tagset, &self.config);
        m.insert("weighted".into(), self.weighted.to_string());
        m.extend(extra.clone());
        Checkpoint::new(m, self.store.clone())
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        expect_kind(&ck, ModelKind::E2e)?;
        let (catalog, tagset, config, encoder) = restore_network(&ck)?;
        let mask = |k| constraint_mask(&catalog, k, config.bio_constraints);
        let seg = ck
            .params
            .id("seg.w")
            .map(|_| CrfParams::lookup(&ck.params, "seg"))
            .transpose()?
            .map(|c| c.with_mask(mask(3)));
        let cat = CrfParams::lookup(&ck.params, "cat")?.with_mask(mask(catalog.len()));
        Ok(E2EModel {
            weighted: ck.meta("weighted").map_or(true, |w| w == "true"),
            alpha: config.alpha,
            store: ck.params,
            encoder,
            seg,
            cat,
            catalog,
            tagset,
            config,
        })
    }
}

impl StackedExtractor {
    /// Saves the extractor, and the standalone CRF under `crf.*` if given.
    pub fn to_checkpoint(
        &self,
        crf: Option<&StandaloneCrf>,
        extra: &BTreeMap<String, String>,
    ) -> Result<Checkpoint> {
        let mut m = network_metadata(
            ModelKind::Stacked,
            &self.catalog,
            &self.tagset,
            &self.config,
        );
        m.extend(extra.clone());
        let mut store = self.store.clone();
        if let Some(c) = crf {
            for p in c.store.iter() {
                store.add(p.name.clone(), p.value.clone())?;
            }
        }
        Ok(Checkpoint::new(m, store))
    }

    /// The extractor and, when present, the bundled standalone CRF.
    pub fn from_checkpoint(ck: Checkpoint) -> Result<(Self, Option<StandaloneCrf>)> {
        expect_kind(&ck, ModelKind::Stacked)?;
        let (catalog, tagset, config, encoder) = restore_network(&ck)?;
        let crf = match ck.params.id("crf.w") {
            Some(_) => {
                let mut store = ParamStore::new();
                for name in ["crf.transitions", "crf.w", "crf.b"] {
                    store.add(name, ck.params.value(lookup_id(&ck.params, name)?).clone())?;
                }
                let crf = CrfParams::lookup(&store, "crf")?.with_mask(constraint_mask(
                    &catalog,
                    catalog.len(),
                    config.bio_constraints,
                ));
                Some(StandaloneCrf {
                    store,
                    crf,
                    catalog: catalog.clone(),
                })
            }
            None => None,
        };
        let seg_head = ck
            .params
            .id("seg.w")
            .map(|_| Dense::lookup(&ck.params, "seg"))
            .transpose()?;
        let cat_head = Dense::lookup(&ck.params, "cat")?;
        Ok((
            StackedExtractor {
                alpha: config.alpha,
                store: ck.params,
                encoder,
                seg_head,
                cat_head,
                catalog,
                tagset,
                config,
            },
            crf,
        ))
    }
}

impl StandaloneCrf {
    pub fn to_checkpoint(&self, extra: &BTreeMap<String, String>) -> Checkpoint {
        let mut m = base_metadata(ModelKind::Crf, &self.catalog);
        m.insert(
            "bio-constraints".into(),
            self.crf.mask.is_some().to_string(),
        );
        m.extend(extra.clone());
        Checkpoint::new(m, self.store.clone())
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        expect_kind(&ck, ModelKind::Crf)?;
        let catalog = restore_catalog(&ck)?;
        let on = ck.meta("bio-constraints").is_ok_and(|v| v == "true");
        let crf = CrfParams::lookup(&ck.params, "crf")?.with_mask(constraint_mask(
            &catalog,
            catalog.len(),
            on,
        ));
        Ok(StandaloneCrf {
            store: ck.params,
            crf,
            catalog,
        })
    }
}
