use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::Path;

use phononer::corpus::{
    corpus_stats, parse_conll, preprocess, split_label, validate_corpus, write_conll, ColumnSpec,
    LabelCatalog, PreprocessOptions, Sentence, Token,
};
use phononer::diagnostics;
use phononer::embeddings::{read_embeddings, SubwordModel};
use phononer::eval::{ablation_run, entity_f1, relabel, EvalReport};
use phononer::model::{
    extract_features, parse_feature_records, predict_e2e, predict_stacked, write_feature_records,
    E2EModel, FeatureRecord, Featurizer, ModelKind, StackedExtractor, StandaloneCrf,
};
use phononer::numeric::Checkpoint;
use phononer::phonology::{Phonology, DEFAULT_FEATURES, DEFAULT_RULES};
use phononer::train::{parallel_map, train_crf, train_e2e, train_stacked, TrainLog};

use crate::config::{Columns, ReportFormat, RunConfig, FEATURIZER_KEYS};
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Core(phononer::Error::io(path, e)))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::Core(phononer::Error::io(path, e)))
}

/// Writes to the configured `output` path, or standard output.
fn emit(cfg: &RunConfig, text: &str) -> Result<()> {
    match cfg.path("output") {
        Some(p) => write_text(p, text),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Core(phononer::Error::io("<stdout>", e)))
        }
    }
}

fn corpus_spec(cfg: &RunConfig, text: &str) -> Result<ColumnSpec> {
    Ok(match cfg.columns {
        Columns::Auto => ColumnSpec::detect(text)?,
        Columns::Fixed(s) => s,
    })
}

fn read_corpus(cfg: &RunConfig, key: &str) -> Result<Vec<Sentence>> {
    let path = cfg.input_path(key)?;
    let text = read_text(path)?;
    let mut corpus = parse_conll(&text, corpus_spec(cfg, &text)?)?;
    let repairs = validate_corpus(&mut corpus, cfg.bio_mode)?;
    if repairs > 0 {
        log::warn!("{}: repaired {repairs} ill-formed BIO tags", path.display());
    }
    Ok(corpus)
}

fn featurizer(cfg: &RunConfig) -> Result<Featurizer> {
    let embeddings = read_embeddings(cfg.input_path("embeddings")?)?;
    let rules = cfg
        .optional_input("g2p-rules")?
        .map(read_text)
        .transpose()?;
    let table = cfg
        .optional_input("feature-table")?
        .map(read_text)
        .transpose()?;
    let phonology = Phonology::parse(
        rules.as_deref().unwrap_or(DEFAULT_RULES),
        table.as_deref().unwrap_or(DEFAULT_FEATURES),
    )?;
    let dim = embeddings.dim();
    let subword = if !cfg.subword_oov {
        None
    } else if let Some(p) = cfg.optional_input("buckets")? {
        Some(SubwordModel::read_bucket_file(p, dim, cfg.subword_buckets)?)
    } else {
        Some(SubwordModel::seeded(
            dim,
            cfg.subword_buckets,
            cfg.subword_seed,
        ))
    };
    let mut f = Featurizer::new(phonology, embeddings, subword);
    f.pretrained = cfg.pretrained_embeddings;
    Ok(f)
}

fn run_config_metadata(cfg: &RunConfig) -> BTreeMap<String, String> {
    BTreeMap::from([("run-config".to_string(), cfg.echo_json().to_string())])
}

/// Featurizer settings recorded at training time win over defaults, but not
/// over values the user set explicitly.
fn adopt_featurizer_settings(cfg: &mut RunConfig, ck: &Checkpoint) -> Result<()> {
    let Ok(raw) = ck.meta("run-config") else {
        return Ok(());
    };
    let saved: BTreeMap<String, String> = serde_json::from_str(raw).map_err(|e| {
        CliError::Core(phononer::Error::Checkpoint(format!(
            "metadata `run-config`: {e}"
        )))
    })?;
    let explicit = cfg.explicit.clone();
    for key in FEATURIZER_KEYS {
        if let (false, Some(v)) = (explicit.contains(key), saved.get(key)) {
            cfg.set(key, v)?;
        }
    }
    cfg.explicit = explicit;
    Ok(())
}

fn load_checkpoint(cfg: &RunConfig, key: &str) -> Result<Checkpoint> {
    Ok(Checkpoint::load(cfg.input_path(key)?)?)
}

pub fn preprocess_cmd(cfg: &RunConfig) -> Result<()> {
    let corpus = read_corpus(cfg, "input")?;
    let options = PreprocessOptions {
        hashtags: cfg.hashtags,
    };
    let out: Vec<Sentence> = corpus.iter().map(|s| preprocess(s, options)).collect();
    emit(cfg, &(cfg.header("preprocess") + &write_conll(&out, None)))
}

pub fn stats_cmd(cfg: &RunConfig) -> Result<()> {
    let corpus = read_corpus(cfg, "input")?;
    let stats = corpus_stats(&corpus, cfg.gold_required)?;
    let doc = serde_json::json!({ "config": cfg.echo_json(), "stats": stats });
    emit(
        cfg,
        &(serde_json::to_string_pretty(&doc).expect("json") + "\n"),
    )
}

fn write_log(cfg: &RunConfig, log: &TrainLog) -> Result<()> {
    if let Some(p) = cfg.path("log") {
        let header = serde_json::json!({ "record": "config", "config": cfg.echo_json() });
        write_text(p, &format!("{header}\n{}", log.to_json_lines()))?;
    }
    Ok(())
}

pub fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let train = read_corpus(cfg, "train")?;
    let dev = read_corpus(cfg, "dev")?;
    let out = cfg.required_output("checkpoint")?;
    let fz = featurizer(cfg)?;
    let meta = run_config_metadata(cfg);
    match cfg.model {
        ModelKind::E2e => {
            let (model, log) = train_e2e(&train, &dev, &fz, &cfg.train)?;
            model.to_checkpoint(&meta).save(out)?;
            write_log(cfg, &log)?;
            if let Some(epoch) = log.best_epoch() {
                log::info!("e2e: best epoch {epoch}");
            }
        }
        ModelKind::Stacked => {
            let run = train_stacked(&train, &dev, &fz, &cfg.train)?;
            run.extractor
                .to_checkpoint(Some(&run.crf), &meta)?
                .save(out)?;
            write_log(cfg, &run.log)?;
            if let Some(p) = cfg.path("features") {
                write_text(
                    p,
                    &(cfg.header("train") + &write_feature_records(&run.train_records)),
                )?;
            }
            log::info!(
                "stacked: extractor dev F1 {:.2}, CRF dev F1 {:.2}",
                run.extractor_report.overall.f1,
                run.crf_report.overall.f1
            );
        }
        ModelKind::Crf => return Err(CliError::Config("model must be e2e or stacked".into())),
    }
    Ok(())
}

pub fn extract_features_cmd(cfg: &RunConfig) -> Result<()> {
    let mut cfg = cfg.clone();
    let ck = load_checkpoint(&cfg, "checkpoint")?;
    adopt_featurizer_settings(&mut cfg, &ck)?;
    let (extractor, _) = StackedExtractor::from_checkpoint(ck)?;
    let corpus = read_corpus(&cfg, "input")?;
    let records = extract_features(&extractor, &corpus, &featurizer(&cfg)?)?;
    emit(
        &cfg,
        &(cfg.header("extract-features") + &write_feature_records(&records)),
    )
}

fn records_catalog(records: &[FeatureRecord]) -> Result<LabelCatalog> {
    let mut classes = BTreeSet::new();
    for l in records.iter().flat_map(|r| r.labels.iter().flatten()) {
        if let (_, Some(c)) = split_label(l)? {
            classes.insert(c.to_string());
        }
    }
    Ok(LabelCatalog::new(classes)?)
}

/// Records as sentences with placeholder surfaces, for scoring.
fn records_as_corpus(records: &[FeatureRecord]) -> Result<Vec<Sentence>> {
    records
        .iter()
        .map(|r| {
            let tokens = r
                .labels
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    let l = l.as_deref().ok_or_else(|| {
                        CliError::Config("dev feature records must be labeled".into())
                    })?;
                    Ok(Token::new(format!("t{i}"), "_", Some(l)))
                })
                .collect::<Result<_>>()?;
            Ok(Sentence {
                tokens,
                source_id: String::new(),
            })
        })
        .collect()
}

pub fn train_crf_cmd(cfg: &RunConfig) -> Result<()> {
    let records = parse_feature_records(&read_text(cfg.input_path("features")?)?)?;
    let out = cfg.required_output("crf-checkpoint")?;
    let catalog = records_catalog(&records)?;
    let mut log = TrainLog::default();
    let crf = train_crf(&records, &catalog, &cfg.train, &mut log)?;
    if let Some(p) = cfg.optional_input("dev")? {
        let dev = parse_feature_records(&read_text(p)?)?;
        let gold = records_as_corpus(&dev)?;
        let pred = parallel_map(&dev, |r| crf.predict(&r.z))?;
        let report = entity_f1(&gold, &relabel(&gold, &pred)?)?;
        log::info!("standalone CRF dev F1 {:.2}", report.overall.f1);
    }
    crf.to_checkpoint(&run_config_metadata(cfg)).save(out)?;
    write_log(cfg, &log)
}

enum Predictor {
    E2e(E2EModel),
    Stacked(StackedExtractor, StandaloneCrf),
}

pub fn predict_cmd(cfg: &RunConfig) -> Result<()> {
    let mut cfg = cfg.clone();
    let ck = load_checkpoint(&cfg, "checkpoint")?;
    adopt_featurizer_settings(&mut cfg, &ck)?;
    let kind = ModelKind::parse(ck.meta("kind")?)?;
    let predictor = match kind {
        ModelKind::E2e => Predictor::E2e(E2EModel::from_checkpoint(ck)?),
        ModelKind::Stacked => {
            let (extractor, bundled) = StackedExtractor::from_checkpoint(ck)?;
            let crf = match cfg.path("crf-checkpoint") {
                Some(_) => StandaloneCrf::from_checkpoint(load_checkpoint(&cfg, "crf-checkpoint")?)?,
                None => bundled.ok_or_else(|| {
                    CliError::Config("the checkpoint has no CRF; train one with train-crf and pass crf-checkpoint".into())
                })?,
            };
            Predictor::Stacked(extractor, crf)
        }
        ModelKind::Crf => return Err(CliError::Config(
            "predict needs an e2e or stacked checkpoint; pass a CRF checkpoint as crf-checkpoint"
                .into(),
        )),
    };
    let corpus = read_corpus(&cfg, "input")?;
    let fz = featurizer(&cfg)?;
    let (tagset, phonetics) = match &predictor {
        Predictor::E2e(m) => (&m.tagset, m.config.phonetics),
        Predictor::Stacked(e, _) => (&e.tagset, e.config.phonetics),
    };
    let labels = parallel_map(&corpus, |s| {
        let f = fz.featurize(s, tagset, phonetics)?;
        match &predictor {
            Predictor::E2e(m) => predict_e2e(m, &f),
            Predictor::Stacked(e, c) => predict_stacked(e, c, &f),
        }
    })?;
    emit(
        &cfg,
        &(cfg.header("predict") + &write_conll(&corpus, Some(&labels))),
    )
}

/// Gold and predicted corpora from a prediction file (last column) and
/// either a separate gold file or the file's own gold column.
fn evaluation_pair(cfg: &RunConfig) -> Result<(Vec<Sentence>, Vec<Sentence>)> {
    let text = read_text(cfg.input_path("input")?)?;
    let spec = corpus_spec(cfg, &text)?;
    let last = ColumnSpec {
        label: Some(spec.columns - 1),
        ..spec
    };
    let pred = parse_conll(&text, last)?;
    let gold = match cfg.path("gold") {
        Some(_) => read_corpus(cfg, "gold")?,
        None if spec.columns == 4 => {
            let mut g = parse_conll(&text, ColumnSpec::predicted())?;
            validate_corpus(&mut g, cfg.bio_mode)?;
            g
        }
        None => {
            return Err(CliError::Config(
                "evaluate needs `gold`, or an input with both gold and predicted columns".into(),
            ))
        }
    };
    Ok((gold, pred))
}

fn render_report(cfg: &RunConfig, command: &str, report: &EvalReport) -> String {
    match cfg.report_format {
        ReportFormat::Table => cfg.header(command) + &report.to_table(),
        ReportFormat::Json => {
            let doc = serde_json::json!({ "config": cfg.echo_json(), "report": report });
            serde_json::to_string_pretty(&doc).expect("json") + "\n"
        }
    }
}

pub fn evaluate_cmd(cfg: &RunConfig) -> Result<()> {
    let (gold, pred) = evaluation_pair(cfg)?;
    let report = entity_f1(&gold, &pred)?;
    emit(cfg, &render_report(cfg, "evaluate", &report))
}

pub fn ablate_cmd(cfg: &RunConfig) -> Result<()> {
    let train = read_corpus(cfg, "train")?;
    let dev = read_corpus(cfg, "dev")?;
    let fz = featurizer(cfg)?;
    let table = ablation_run(&cfg.train, &cfg.toggles, &train, &dev, &fz, cfg.repetitions)?;
    let text = match cfg.report_format {
        ReportFormat::Table => cfg.header("ablate") + &table.to_table(),
        ReportFormat::Json => {
            let doc = serde_json::json!({ "config": cfg.echo_json(), "ablation": table });
            serde_json::to_string_pretty(&doc).expect("json") + "\n"
        }
    };
    emit(cfg, &text)
}

pub fn gradcheck_cmd(cfg: &RunConfig) -> Result<()> {
    let results = diagnostics::run_all(cfg.gradcheck_epsilon, None)?;
    let mut text = cfg.header("gradcheck");
    let mut failed = Vec::new();
    for r in &results {
        text.push_str(&format!(
            "{:<22} max-rel-error {:.3e}  coordinates {:>5}  {}\n",
            r.name,
            r.max_rel_error,
            r.coordinates,
            if r.passed() { "ok" } else { "FAILED" }
        ));
        if !r.passed() {
            failed.push(format!(
                "{} (worst {})",
                r.name,
                r.worst.as_deref().unwrap_or("?")
            ));
        }
    }
    emit(cfg, &text)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::GradCheck(failed.join(", ")))
    }
}
