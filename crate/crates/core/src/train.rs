//! Adam updates, the early-stopping training loop, and the two-phase
//! stacked pipeline.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{compute_class_weights, ClassWeights, LabelCatalog, Sentence};
use crate::error::{Error, Result};
use crate::eval::{entity_f1, relabel, EvalReport};
use crate::model::{
    labels_from_indices, E2EModel, Example, FeatureRecord, Featurizer, ModelConfig, Network,
    SentenceFeatures, StackedExtractor, StandaloneCrf, Tagset,
};
use crate::numeric::{Graph, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub patience: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    pub weighted_classes: bool,
    pub class_weight_exponent: f64,
    pub o_floor: f64,
    pub crf_learning_rate: f64,
    pub crf_iterations: usize,
    pub crf_l2: f64,
    pub crf_tolerance: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 50,
            patience: 8,
            grad_clip: 5.0,
            seed: 1,
            weighted_classes: true,
            class_weight_exponent: 0.5,
            o_floor: 0.5,
            crf_learning_rate: 0.05,
            crf_iterations: 500,
            crf_l2: 1e-4,
            crf_tolerance: 1e-5,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning-rate", self.learning_rate),
            ("epsilon", self.epsilon),
            ("crf-learning-rate", self.crf_learning_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.patience > self.epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds epochs {}",
                self.patience, self.epochs
            )));
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.model.dropout
            )));
        }
        if !(self.model.alpha >= 0.0 && self.model.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be ≥ 0, got {}",
                self.model.alpha
            )));
        }
        if self.grad_clip < 0.0 || self.crf_l2 < 0.0 {
            return Err(Error::Config("grad-clip and crf-l2 must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// Bias-corrected Adam with global-norm gradient clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(
        store: &ParamStore,
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        clip: f64,
    ) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
                .collect()
        };
        Adam {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            clip,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn from_config(store: &ParamStore, c: &TrainConfig) -> Self {
        Self::new(
            store,
            c.learning_rate,
            c.beta1,
            c.beta2,
            c.epsilon,
            c.grad_clip,
        )
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients in `store`. Gradients are left
    /// untouched; callers zero them before the next backward pass.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if let Some(p) = store.iter().find(|p| !p.grad.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of `{}`", p.name)));
        }
        let norm = store.grad_norm();
        let scale = if self.clip > 0.0 && norm > self.clip {
            self.clip / norm
        } else {
            1.0
        };
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let value = p.value.data_mut();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (i, &g) in p.grad.data().iter().enumerate() {
                let g = g * scale;
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * g;
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * g * g;
                value[i] -=
                    self.learning_rate * (md[i] / c1) / ((vd[i] / c2).sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "kebab-case")]
pub enum LogRecord {
    #[serde(rename_all = "kebab-case")]
    Epoch {
        phase: String,
        epoch: usize,
        train_loss: f64,
        dev_f1: f64,
        wall_ms: u64,
        best: bool,
    },
    #[serde(rename_all = "kebab-case")]
    Crf {
        iterations: usize,
        objective: f64,
        grad_norm: f64,
        wall_ms: u64,
    },
    #[serde(rename_all = "kebab-case")]
    Summary {
        model: String,
        best_epoch: usize,
        dev_f1: f64,
        extractor_dev_f1: Option<f64>,
        crf_dev_f1: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
    /// Loss of every update in order.
    pub step_losses: Vec<f64>,
}

impl TrainLog {
    pub fn to_json_lines(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("log serialize") + "\n")
            .collect()
    }

    pub fn epochs(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Epoch {
                epoch,
                train_loss,
                dev_f1,
                ..
            } => Some((*epoch, *train_loss, *dev_f1)),
            _ => None,
        })
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.records.iter().rev().find_map(|r| match r {
            LogRecord::Summary { best_epoch, .. } => Some(*best_epoch),
            _ => None,
        })
    }

    /// The same records with wall-clock fields zeroed.
    pub fn without_timing(&self) -> Vec<LogRecord> {
        self.records
            .iter()
            .cloned()
            .map(|mut r| {
                match &mut r {
                    LogRecord::Epoch { wall_ms, .. } | LogRecord::Crf { wall_ms, .. } => {
                        *wall_ms = 0
                    }
                    LogRecord::Summary { .. } => {}
                }
                r
            })
            .collect()
    }
}

/// Evaluation data: features plus the gold sentences they came from.
#[derive(Debug, Clone)]
pub struct DevSet {
    pub features: Vec<SentenceFeatures>,
    pub gold: Vec<Sentence>,
}

impl DevSet {
    pub fn new(
        sentences: &[Sentence],
        featurizer: &Featurizer,
        tagset: &Tagset,
        phonetics: bool,
    ) -> Result<Self> {
        Ok(DevSet {
            features: sentences
                .iter()
                .map(|s| featurizer.featurize(s, tagset, phonetics))
                .collect::<Result<_>>()?,
            gold: sentences.to_vec(),
        })
    }

    pub fn is_empty(&self) -> bool {
        self.gold.is_empty()
    }
}

/// Applies `f` to every item on a few scoped threads, preserving order.
pub fn parallel_map<T: Sync, U: Send>(
    items: &[T],
    f: impl Fn(&T) -> Result<U> + Sync,
) -> Result<Vec<U>> {
    let threads = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(8);
    if threads <= 1 || items.len() < 2 * threads {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(f).collect::<Result<Vec<U>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("worker panicked")?);
        }
        Ok(out)
    })
}

/// Decodes every sentence and scores the result against the gold labels.
pub fn evaluate_with<F>(dev: &DevSet, catalog: &LabelCatalog, decode: F) -> Result<EvalReport>
where
    F: Fn(&SentenceFeatures) -> Result<Vec<usize>> + Sync,
{
    let labels = parallel_map(&dev.features, |f| labels_from_indices(catalog, &decode(f)?))?;
    entity_f1(&dev.gold, &relabel(&dev.gold, &labels)?)
}

pub fn evaluate_network<N: Network + Sync>(net: &N, dev: &DevSet) -> Result<EvalReport> {
    evaluate_with(dev, net.catalog(), |f| net.decode(f))
}

/// Epoch loop shared by both networks: seeded shuffle, one sentence per
/// update, early stopping on dev entity F1. The best epoch's parameters are
/// restored before returning.
pub fn fit<N: Network + Sync>(
    net: &mut N,
    train: &[Example],
    dev: &DevSet,
    config: &TrainConfig,
    phase: &str,
    log: &mut TrainLog,
) -> Result<(usize, f64)> {
    if train.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    config.validate()?;
    let mut adam = Adam::from_config(net.store(), config);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut stale = 0;
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for &i in &order {
            net.store_mut().zero_grads();
            let mut g = Graph::new();
            let loss = net.loss(&mut g, &train[i], true, &mut dropout_rng)?;
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss at epoch {epoch}, sentence {}",
                    i + 1
                )));
            }
            g.backward(loss, net.store_mut())?;
            adam.step(net.store_mut())?;
            log.step_losses.push(value);
            total += value;
        }
        let dev_f1 = if dev.is_empty() {
            0.0
        } else {
            evaluate_network(net, dev)?.overall.f1
        };
        let improved = best.as_ref().is_none_or(|b| dev_f1 > b.1);
        if improved {
            best = Some((epoch, dev_f1, net.store().clone()));
            stale = 0;
        } else {
            stale += 1;
        }
        let train_loss = total / train.len() as f64;
        log::info!("{phase} epoch {epoch}: loss {train_loss:.4}, dev F1 {dev_f1:.2}");
        log.records.push(LogRecord::Epoch {
            phase: phase.to_string(),
            epoch,
            train_loss,
            dev_f1,
            wall_ms: started.elapsed().as_millis() as u64,
            best: improved,
        });
        if stale >= config.patience {
            break;
        }
    }
    let (epoch, f1, store) = best.expect("at least one epoch ran");
    *net.store_mut() = store;
    Ok((epoch, f1))
}

/// Everything derived from the training corpus before optimization.
pub struct Prepared {
    pub catalog: LabelCatalog,
    pub tagset: Tagset,
    pub weights: Option<ClassWeights>,
    pub examples: Vec<Example>,
    pub dev: DevSet,
}

pub fn prepare(
    train: &[Sentence],
    dev: &[Sentence],
    featurizer: &Featurizer,
    config: &TrainConfig,
) -> Result<Prepared> {
    if train.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    let catalog = LabelCatalog::from_corpus(train)?;
    let tagset = Tagset::from_corpus(train);
    let weights = config
        .weighted_classes
        .then(|| {
            compute_class_weights(
                train,
                &catalog,
                config.class_weight_exponent,
                config.o_floor,
            )
        })
        .transpose()?;
    let phonetics = config.model.phonetics;
    let examples = train
        .iter()
        .map(|s| {
            Example::new(
                featurizer.featurize(s, &tagset, phonetics)?,
                s,
                &catalog,
                weights.as_ref(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let dev = DevSet::new(dev, featurizer, &tagset, phonetics)?;
    Ok(Prepared {
        catalog,
        tagset,
        weights,
        examples,
        dev,
    })
}

pub fn train_e2e(
    train: &[Sentence],
    dev: &[Sentence],
    featurizer: &Featurizer,
    config: &TrainConfig,
) -> Result<(E2EModel, TrainLog)> {
    config.validate()?;
    let p = prepare(train, dev, featurizer, config)?;
    let mut model = E2EModel::new(
        config.model,
        p.catalog,
        p.tagset,
        featurizer.word_dim(),
        featurizer.char_dim(),
        config.seed,
    )?;
    model.weighted = config.weighted_classes;
    let mut log = TrainLog::default();
    let (best_epoch, dev_f1) = fit(&mut model, &p.examples, &p.dev, config, "e2e", &mut log)?;
    log.records.push(LogRecord::Summary {
        model: "e2e".into(),
        best_epoch,
        dev_f1,
        extractor_dev_f1: None,
        crf_dev_f1: None,
    });
    Ok((model, log))
}

/// Result of the two-phase stacked pipeline.
#[derive(Debug, Clone)]
pub struct StackedRun {
    pub extractor: StackedExtractor,
    pub crf: StandaloneCrf,
    pub log: TrainLog,
    /// Softmax-decode report of the extractor on dev.
    pub extractor_report: EvalReport,
    /// Report of the standalone CRF on dev.
    pub crf_report: EvalReport,
    pub train_records: Vec<FeatureRecord>,
}

pub fn train_stacked(
    train: &[Sentence],
    dev: &[Sentence],
    featurizer: &Featurizer,
    config: &TrainConfig,
) -> Result<StackedRun> {
    config.validate()?;
    let p = prepare(train, dev, featurizer, config)?;
    let mut extractor = StackedExtractor::new(
        config.model,
        p.catalog.clone(),
        p.tagset,
        featurizer.word_dim(),
        featurizer.char_dim(),
        config.seed,
    )?;
    let mut log = TrainLog::default();
    let (best_epoch, _) = fit(
        &mut extractor,
        &p.examples,
        &p.dev,
        config,
        "extractor",
        &mut log,
    )?;

    let train_records = parallel_map(&p.examples, |ex| {
        Ok(FeatureRecord {
            labels: ex
                .cat
                .iter()
                .map(|&c| Some(p.catalog.label(c).to_string()))
                .collect(),
            z: extractor.extract_features(&ex.features)?,
        })
    })?;
    let crf = train_crf(&train_records, &p.catalog, config, &mut log)?;

    let extractor_report = evaluate_network(&extractor, &p.dev)?;
    let crf_report = evaluate_with(&p.dev, &p.catalog, |f| {
        crf.decode(&extractor.extract_features(f)?)
    })?;
    log::info!(
        "stacked: extractor dev F1 {:.2}, CRF dev F1 {:.2}",
        extractor_report.overall.f1,
        crf_report.overall.f1
    );
    log.records.push(LogRecord::Summary {
        model: "stacked".into(),
        best_epoch,
        dev_f1: crf_report.overall.f1,
        extractor_dev_f1: Some(extractor_report.overall.f1),
        crf_dev_f1: Some(crf_report.overall.f1),
    });
    Ok(StackedRun {
        extractor,
        crf,
        log,
        extractor_report,
        crf_report,
        train_records,
    })
}

/// Fits a standalone CRF to feature records by full-batch Adam on mean nll
/// plus `(λ/2)‖θ‖²`, stopping after the configured iterations or once the
/// gradient norm drops below the tolerance.
pub fn train_crf(
    records: &[FeatureRecord],
    catalog: &LabelCatalog,
    config: &TrainConfig,
    log: &mut TrainLog,
) -> Result<StandaloneCrf> {
    config.validate()?;
    let data = records
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.is_empty())
        .map(|(i, r)| {
            let labels: Vec<String> = r
                .labels
                .iter()
                .map(|l| {
                    l.clone().ok_or_else(|| {
                        Error::Usage(format!("feature record {} is unlabeled", i + 1))
                    })
                })
                .collect::<Result<_>>()?;
            Ok((&r.z, catalog.indices(&labels)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let feature_dim = data
        .first()
        .map(|(z, _)| z.cols())
        .ok_or_else(|| Error::Config("no feature records to train on".into()))?;
    let mut crf = StandaloneCrf::new(
        catalog.clone(),
        feature_dim,
        config.seed,
        config.model.bio_constraints,
    )?;
    let mut adam = Adam::new(
        &crf.store,
        config.crf_learning_rate,
        config.beta1,
        config.beta2,
        config.epsilon,
        0.0,
    );
    let started = Instant::now();
    let n = data.len() as f64;
    let (mut objective, mut grad_norm, mut iterations) = (f64::NAN, f64::INFINITY, 0);
    for it in 0..=config.crf_iterations {
        crf.store.zero_grads();
        let nlls = parallel_map(&data, |(z, gold)| {
            let mut store = crf.store.clone();
            let mut g = Graph::new();
            let zn = g.input((*z).clone());
            let l = crf.crf.nll_node(&mut g, &store, zn, gold)?;
            g.backward(l, &mut store)?;
            Ok((g.scalar(l), store))
        })?;
        let mut total = 0.0;
        for (nll, store) in nlls {
            total += nll;
            for (p, q) in crf.store.iter_mut().zip(store.iter()) {
                p.grad.add_assign(&q.grad)?;
            }
        }
        let mut penalty = 0.0;
        for p in crf.store.iter_mut() {
            p.grad.scale_in_place(1.0 / n);
            penalty += p.value.squared_norm();
            for (g, v) in p.grad.data_mut().iter_mut().zip(p.value.data()) {
                *g += config.crf_l2 * v;
            }
        }
        objective = total / n + 0.5 * config.crf_l2 * penalty;
        grad_norm = crf.store.grad_norm();
        if !objective.is_finite() {
            return Err(Error::NonFinite(format!("CRF objective at iteration {it}")));
        }
        if it == config.crf_iterations || grad_norm < config.crf_tolerance {
            break;
        }
        adam.step(&mut crf.store)?;
        iterations = it + 1;
    }
    crf.store.zero_grads();
    log.records.push(LogRecord::Crf {
        iterations,
        objective,
        grad_norm,
        wall_ms: started.elapsed().as_millis() as u64,
    });
    Ok(crf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::row_vector(vec![0.3, -1.0])).unwrap();
        let mut adam = Adam::new(&store, 0.001, 0.9, 0.999, 1e-8, 5.0);
        adam.step(&mut store).unwrap();
        assert_eq!(store.iter().next().unwrap().value.data(), &[0.3, -1.0]);
    }

    #[test]
    fn adam_matches_reference_sequence() {
        // Constant gradient g on a scalar: m_t = g(1-β1^t), v_t = g²(1-β2^t), so
        // every bias-corrected update is lr·g/(|g| + ε).
        let (lr, g, eps) = (0.01, 0.5, 1e-8);
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::row_vector(vec![1.0])).unwrap();
        let mut adam = Adam::new(&store, lr, 0.9, 0.999, eps, 0.0);
        let mut expected = 1.0;
        for _ in 0..10 {
            store.get_mut(id).grad.data_mut()[0] = g;
            adam.step(&mut store).unwrap();
            expected -= lr * g / (g.abs() + eps);
            assert!((store.value(id).data()[0] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn adam_clips_global_norm() {
        let mut clipped = ParamStore::new();
        let a = clipped
            .add("a", Tensor::row_vector(vec![0.0, 0.0]))
            .unwrap();
        clipped.get_mut(a).grad = Tensor::row_vector(vec![6.0, 8.0]);
        let mut halved = clipped.clone();
        halved.get_mut(a).grad = Tensor::row_vector(vec![3.0, 4.0]);
        let mut x = Adam::new(&clipped, 0.1, 0.9, 0.999, 1e-8, 5.0);
        let mut y = Adam::new(&halved, 0.1, 0.9, 0.999, 1e-8, 0.0);
        x.step(&mut clipped).unwrap();
        y.step(&mut halved).unwrap();
        assert_eq!(clipped.value(a), halved.value(a));
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut store = ParamStore::new();
        let a = store.add("enc.w", Tensor::row_vector(vec![0.0])).unwrap();
        store.get_mut(a).grad = Tensor::row_vector(vec![f64::NAN]);
        let err = Adam::new(&store, 0.1, 0.9, 0.999, 1e-8, 5.0)
            .step(&mut store)
            .unwrap_err();
        assert!(err.to_string().contains("enc.w"));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            patience: 60,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn log_lines_are_json() {
        let log = TrainLog {
            records: vec![LogRecord::Epoch {
                phase: "e2e".into(),
                epoch: 1,
                train_loss: 2.5,
                dev_f1: 10.0,
                wall_ms: 3,
                best: true,
            }],
            step_losses: vec![],
        };
        let line = log.to_json_lines();
        assert!(line.starts_with("{\"record\":\"epoch\""));
        assert!(line.contains("\"train-loss\":2.5"));
        assert_eq!(log.without_timing()[0], {
            let LogRecord::Epoch {
                phase,
                epoch,
                train_loss,
                dev_f1,
                best,
                ..
            } = log.records[0].clone()
            else {
                unreachable!()
            };
            LogRecord::Epoch {
                phase,
                epoch,
                train_loss,
                dev_f1,
                wall_ms: 0,
                best,
            }
        });
    }
}
