use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use phononer::crf::{log_partition, marginals, random_instance, viterbi};
use phononer::embeddings::{SubwordModel, DEFAULT_BUCKETS};
use phononer::model::{
    parse_feature_records, predict_e2e, predict_stacked, write_feature_records, E2EModel,
    Featurizer, StackedExtractor,
};
use phononer::numeric::Checkpoint;
use phononer::phonology::Phonology;
use phononer::toy;
use phononer::train::{train_e2e, train_stacked, TrainConfig};

fn short_config() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        patience: 3,
        ..TrainConfig::default()
    }
}

fn toy_featurizer() -> (
    Vec<phononer::corpus::Sentence>,
    Vec<phononer::corpus::Sentence>,
    Featurizer,
) {
    let (train, dev, emb) = toy::bundled();
    let dim = emb.dim();
    let fz = Featurizer::new(
        Phonology::english(),
        emb,
        Some(SubwordModel::seeded(dim, DEFAULT_BUCKETS, 1)),
    );
    (train, dev, fz)
}

#[test]
fn stacked_checkpoint_reproduces_predictions() {
    let (train, dev, fz) = toy_featurizer();
    let run = train_stacked(&train, &dev, &fz, &short_config()).unwrap();
    let bytes = run
        .extractor
        .to_checkpoint(Some(&run.crf), &BTreeMap::new())
        .unwrap()
        .to_bytes()
        .unwrap();
    let (extractor, crf) =
        StackedExtractor::from_checkpoint(Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    let crf = crf.expect("bundled CRF");
    for s in &dev {
        let f = fz
            .featurize(s, &extractor.tagset, extractor.config.phonetics)
            .unwrap();
        assert_eq!(
            predict_stacked(&extractor, &crf, &f).unwrap(),
            predict_stacked(&run.extractor, &run.crf, &f).unwrap()
        );
    }
}

#[test]
fn e2e_checkpoint_reproduces_predictions() {
    let (train, dev, fz) = toy_featurizer();
    let (model, _) = train_e2e(&train, &dev, &fz, &short_config()).unwrap();
    let bytes = model.to_checkpoint(&BTreeMap::new()).to_bytes().unwrap();
    let restored = E2EModel::from_checkpoint(Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(
        restored.to_checkpoint(&BTreeMap::new()).to_bytes().unwrap(),
        bytes
    );
    for s in &dev {
        let f = fz
            .featurize(s, &model.tagset, model.config.phonetics)
            .unwrap();
        assert_eq!(
            predict_e2e(&restored, &f).unwrap(),
            predict_e2e(&model, &f).unwrap()
        );
    }
}

#[test]
fn feature_records_round_trip_exactly() {
    let (train, dev, fz) = toy_featurizer();
    let run = train_stacked(&train, &dev, &fz, &short_config()).unwrap();
    let text = write_feature_records(&run.train_records);
    assert_eq!(parse_feature_records(&text).unwrap(), run.train_records);
}

proptest! {
    #[test]
    fn crf_marginals_are_distributions(n in 1usize..12, k in 2usize..6, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (em, tr) = random_instance(n, k, &mut rng, 3.0);
        let m = marginals(&em, &tr).unwrap();
        for t in 0..n {
            let row: f64 = (0..k).map(|y| m.get(t, y)).sum();
            prop_assert!((row - 1.0).abs() < 1e-9);
        }
        let (path, best) = viterbi(&em, &tr).unwrap();
        prop_assert_eq!(path.len(), n);
        prop_assert!(best <= log_partition(&em, &tr).unwrap() + 1e-12);
    }
}
