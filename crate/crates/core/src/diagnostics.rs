//! Finite-difference gradient suites over every differentiable component.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{ClassWeights, LabelCatalog, Sentence, Token};
use crate::crf::CrfParams;
use crate::embeddings::{EmbeddingTable, SubwordModel};
use crate::error::Result;
use crate::layers::{lstm_step, BiLstm, Dense, LstmParams};
use crate::model::{
    gradient_check, E2EModel, Example, Featurizer, ModelConfig, ModelDims, StackedExtractor, Tagset,
};
use crate::numeric::{finite_difference_check, GradCheckReport, Graph, NodeId, ParamStore, Tensor};
use crate::phonology::Phonology;

pub const EPSILON: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SuiteResult {
    pub name: String,
    pub max_rel_error: f64,
    pub coordinates: usize,
    pub worst: Option<String>,
}

impl SuiteResult {
    fn new(name: &str, r: GradCheckReport) -> Self {
        SuiteResult {
            name: name.to_string(),
            max_rel_error: r.max_rel_error,
            coordinates: r.coordinates,
            worst: r.worst.map(|(p, i)| format!("{p}[{i}]")),
        }
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .expect("sized")
}

/// Loss `Σ out ⊙ target`, so every output coordinate gets a distinct gradient.
fn project(g: &mut Graph, out: NodeId, target: &Tensor) -> Result<NodeId> {
    let t = g.input(target.clone());
    let prod = g.mul(out, t)?;
    Ok(g.sum(prod))
}

fn check<F>(name: &str, store: &mut ParamStore, epsilon: f64, mut f: F) -> Result<SuiteResult>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<NodeId>,
{
    let r = finite_difference_check(store, epsilon, None, |s| {
        let mut g = Graph::new();
        let loss = f(&mut g, s)?;
        g.backward(loss, s)?;
        Ok(g.scalar(loss))
    })?;
    Ok(SuiteResult::new(name, r))
}

fn lstm_suite(epsilon: f64, rng: &mut ChaCha8Rng) -> Result<SuiteResult> {
    let mut store = ParamStore::new();
    let p = LstmParams::register(&mut store, "lstm", 3, 4, 1)?;
    let xs: Vec<Tensor> = (0..3).map(|_| random_matrix(1, 3, rng)).collect();
    let target = random_matrix(1, 4, rng);
    check("lstm-step", &mut store, epsilon, |g, s| {
        let mut h = g.input(Tensor::zeros(1, 4));
        let mut c = g.input(Tensor::zeros(1, 4));
        for x in &xs {
            let xn = g.input(x.clone());
            (h, c) = lstm_step(g, s, &p, xn, h, c)?;
        }
        project(g, h, &target)
    })
}

fn bilstm_suite(epsilon: f64, rng: &mut ChaCha8Rng) -> Result<SuiteResult> {
    let mut store = ParamStore::new();
    let bi = BiLstm::register(&mut store, "bilstm", 3, 4, 2)?;
    let rows = random_matrix(4, 3, rng);
    let seq_target = random_matrix(4, 8, rng);
    let pool_target = random_matrix(1, 8, rng);
    check("bilstm", &mut store, epsilon, |g, s| {
        let x = g.input(rows.clone());
        let seq = bi.seq(g, s, x)?;
        let pooled = bi.pool(g, s, x)?;
        let a = project(g, seq, &seq_target)?;
        let b = project(g, pooled, &pool_target)?;
        g.add(a, b)
    })
}

fn dense_suite(epsilon: f64, rng: &mut ChaCha8Rng) -> Result<SuiteResult> {
    let mut store = ParamStore::new();
    let dense = Dense::register(&mut store, "dense", 6, 5, 3)?;
    store.get_mut(dense.b).value = Tensor::filled(1, 5, 0.05);
    let rows = random_matrix(3, 6, rng);
    let target = random_matrix(3, 5, rng);
    check("dense-relu", &mut store, epsilon, |g, s| {
        let x = g.input(rows.clone());
        let z = dense.relu(g, s, x)?;
        project(g, z, &target)
    })
}

fn crf_suites(epsilon: f64, rng: &mut ChaCha8Rng) -> Result<[SuiteResult; 2]> {
    let labels = 4;
    let mut store = ParamStore::new();
    let crf = CrfParams::register(&mut store, "crf", 5, labels, 4)?;
    let t = crf.transitions;
    let noise = random_matrix(labels + 2, labels + 2, rng);
    store.get_mut(t).value = noise;
    let z = random_matrix(4, 5, rng);
    let gold = [0, 1, 3, 2];
    let params = check("crf-nll-params", &mut store, epsilon, |g, s| {
        let zn = g.input(z.clone());
        crf.nll_node(g, s, zn, &gold)
    })?;
    let zid = store.add("z", z)?;
    let wrt_z = check("crf-nll-z", &mut store, epsilon, |g, s| {
        let zn = g.param(s, zid);
        crf.nll_node(g, s, zn, &gold)
    })?;
    Ok([params, wrt_z])
}

/// The 3-token sentence, small featurizer and example used by the model suites.
pub fn tiny_fixture() -> Result<(Featurizer, LabelCatalog, Tagset, Example)> {
    let emb = EmbeddingTable::from_entries(
        4,
        [
            ("trey", vec![0.5, -0.2, 0.1, 0.3]),
            ("rocks", vec![-0.1, 0.4, 0.2, -0.3]),
        ],
    )?;
    let fz = Featurizer::new(
        Phonology::english(),
        emb,
        Some(SubwordModel::seeded(4, 1000, 3)),
    );
    let s = Sentence {
        tokens: vec![
            Token::new("trey", "^", Some("B-person")),
            Token::new("songz", "^", Some("I-person")),
            Token::new("rocks", "V", Some("O")),
        ],
        source_id: "1".into(),
    };
    let catalog = LabelCatalog::new(["person", "location"])?;
    let tagset = Tagset::from_corpus(std::slice::from_ref(&s));
    let f = fz.featurize(&s, &tagset, true)?;
    let weights = ClassWeights {
        labels: catalog.labels().to_vec(),
        weights: vec![1.0, 0.8, 0.9, 0.7, 1.0, 0.6, 0.3],
    };
    let ex = Example::new(f, &s, &catalog, Some(&weights))?;
    Ok((fz, catalog, tagset, ex))
}

/// Hidden sizes 4 (char) and 6 (word).
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        dims: ModelDims {
            char_hidden: 4,
            word_hidden: 6,
            dense: 5,
            pos: 3,
        },
        ..ModelConfig::default()
    }
}

/// Runs every suite. `per_param` caps the probed coordinates of each
/// parameter in the two full-model suites; `None` probes all of them.
pub fn run_all(epsilon: f64, per_param: Option<usize>) -> Result<Vec<SuiteResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut out = vec![
        lstm_suite(epsilon, &mut rng)?,
        bilstm_suite(epsilon, &mut rng)?,
        dense_suite(epsilon, &mut rng)?,
    ];
    out.extend(crf_suites(epsilon, &mut rng)?);

    let (fz, catalog, tagset, ex) = tiny_fixture()?;
    let cfg = tiny_config();
    let mut e2e = E2EModel::new(
        cfg,
        catalog.clone(),
        tagset.clone(),
        fz.word_dim(),
        fz.char_dim(),
        5,
    )?;
    e2e.weighted = true;
    let mut stacked = StackedExtractor::new(cfg, catalog, tagset, fz.word_dim(), fz.char_dim(), 5)?;
    for (name, train) in [("e2e-loss", false), ("e2e-loss-dropout", true)] {
        out.push(SuiteResult::new(
            name,
            gradient_check(&mut e2e, &ex, epsilon, per_param, train, 11)?,
        ));
    }
    for (name, train) in [("stacked-loss", false), ("stacked-loss-dropout", true)] {
        out.push(SuiteResult::new(
            name,
            gradient_check(&mut stacked, &ex, epsilon, per_param, train, 11)?,
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn component_suites_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut all = vec![
            lstm_suite(EPSILON, &mut rng).unwrap(),
            dense_suite(EPSILON, &mut rng).unwrap(),
        ];
        all.extend(crf_suites(EPSILON, &mut rng).unwrap());
        for r in all {
            assert!(r.passed(), "{r:?}");
            assert!(r.coordinates > 0);
        }
    }
}
