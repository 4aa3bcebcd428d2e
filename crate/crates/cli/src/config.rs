//! Flat `key=value` run configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use phononer::corpus::{BioMode, ColumnSpec};
use phononer::embeddings::DEFAULT_BUCKETS;
use phononer::eval::Toggle;
use phononer::model::ModelKind;
use phononer::train::TrainConfig;

use crate::error::CliError;

pub const PATH_KEYS: [&str; 14] = [
    "train",
    "dev",
    "test",
    "input",
    "output",
    "gold",
    "embeddings",
    "buckets",
    "g2p-rules",
    "feature-table",
    "checkpoint",
    "crf-checkpoint",
    "features",
    "log",
];

/// Keys that change how tokens are featurized; a checkpoint records them so
/// prediction rebuilds the same inputs.
pub const FEATURIZER_KEYS: [&str; 4] = [
    "subword-oov",
    "subword-buckets",
    "subword-seed",
    "pretrained-embeddings",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Columns {
    Auto,
    Fixed(ColumnSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub paths: BTreeMap<&'static str, PathBuf>,
    pub model: ModelKind,
    pub train: TrainConfig,
    pub subword_oov: bool,
    pub subword_buckets: u32,
    pub subword_seed: u64,
    pub pretrained_embeddings: bool,
    pub columns: Columns,
    pub bio_mode: BioMode,
    pub hashtags: bool,
    pub gold_required: bool,
    pub report_format: ReportFormat,
    pub toggles: Vec<Toggle>,
    pub repetitions: usize,
    pub gradcheck_epsilon: f64,
    /// Keys given in the config file or on the command line.
    pub explicit: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: BTreeMap::new(),
            model: ModelKind::Stacked,
            train: TrainConfig::default(),
            subword_oov: true,
            subword_buckets: DEFAULT_BUCKETS,
            subword_seed: 1,
            pretrained_embeddings: true,
            columns: Columns::Auto,
            bio_mode: BioMode::Repair,
            hashtags: false,
            gold_required: true,
            report_format: ReportFormat::Table,
            toggles: Vec::new(),
            repetitions: 3,
            gradcheck_epsilon: 1e-5,
            explicit: BTreeSet::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(CliError::Config(format!(
            "invalid boolean `{value}` for `{key}`"
        ))),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let value = value.trim();
        if let Some(k) = PATH_KEYS.iter().find(|k| **k == key) {
            self.paths.insert(k, PathBuf::from(value));
            self.explicit.insert(key.to_string());
            return Ok(());
        }
        let t = &mut self.train;
        match key {
            "model" => {
                self.model = match value {
                    "e2e" => ModelKind::E2e,
                    "stacked" => ModelKind::Stacked,
                    _ => {
                        return Err(CliError::Config(format!(
                            "model must be e2e or stacked, got `{value}`"
                        )))
                    }
                }
            }
            "learning-rate" => t.learning_rate = parse(key, value)?,
            "beta1" => t.beta1 = parse(key, value)?,
            "beta2" => t.beta2 = parse(key, value)?,
            "epsilon" => t.epsilon = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "patience" => t.patience = parse(key, value)?,
            "grad-clip" => t.grad_clip = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "weighted-classes" => t.weighted_classes = parse_bool(key, value)?,
            "class-weight-exponent" => t.class_weight_exponent = parse(key, value)?,
            "o-floor" => t.o_floor = parse(key, value)?,
            "crf-learning-rate" => t.crf_learning_rate = parse(key, value)?,
            "crf-iterations" => t.crf_iterations = parse(key, value)?,
            "crf-l2" => t.crf_l2 = parse(key, value)?,
            "crf-tolerance" => t.crf_tolerance = parse(key, value)?,
            "dropout" => t.model.dropout = parse(key, value)?,
            "alpha" => t.model.alpha = parse(key, value)?,
            "multitask" => t.model.multitask = parse_bool(key, value)?,
            "phonetics" => t.model.phonetics = parse_bool(key, value)?,
            "pos" => t.model.pos = parse_bool(key, value)?,
            "bio-constraints" => t.model.bio_constraints = parse_bool(key, value)?,
            "char-hidden" => t.model.dims.char_hidden = parse(key, value)?,
            "word-hidden" => t.model.dims.word_hidden = parse(key, value)?,
            "dense" => t.model.dims.dense = parse(key, value)?,
            "pos-dim" => t.model.dims.pos = parse(key, value)?,
            "subword-oov" => self.subword_oov = parse_bool(key, value)?,
            "subword-buckets" => self.subword_buckets = parse(key, value)?,
            "subword-seed" => self.subword_seed = parse(key, value)?,
            "pretrained-embeddings" => self.pretrained_embeddings = parse_bool(key, value)?,
            "columns" => {
                self.columns = match value {
                    "auto" => Columns::Auto,
                    "standard" => Columns::Fixed(ColumnSpec::standard()),
                    "unlabeled" => Columns::Fixed(ColumnSpec::unlabeled()),
                    "surface-label" => Columns::Fixed(ColumnSpec::surface_label()),
                    "predicted" => Columns::Fixed(ColumnSpec::predicted()),
                    _ => return Err(CliError::Config(format!("unknown column layout `{value}`"))),
                }
            }
            "bio-mode" => {
                self.bio_mode = match value {
                    "repair" => BioMode::Repair,
                    "strict" => BioMode::Strict,
                    _ => {
                        return Err(CliError::Config(format!(
                            "bio-mode must be repair or strict, got `{value}`"
                        )))
                    }
                }
            }
            "hashtags" => self.hashtags = parse_bool(key, value)?,
            "gold-required" => self.gold_required = parse_bool(key, value)?,
            "report-format" => {
                self.report_format = match value {
                    "table" => ReportFormat::Table,
                    "json" => ReportFormat::Json,
                    _ => {
                        return Err(CliError::Config(format!(
                            "report-format must be table or json, got `{value}`"
                        )))
                    }
                }
            }
            "toggles" => {
                self.toggles = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<Toggle>().map_err(CliError::from))
                    .collect::<Result<_, _>>()?
            }
            "repetitions" => self.repetitions = parse(key, value)?,
            "gradcheck-epsilon" => self.gradcheck_epsilon = parse(key, value)?,
            _ => {
                return Err(CliError::Config(format!(
                    "unknown configuration key `{key}`"
                )))
            }
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<(), CliError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!(
                    "{}:{}: expected key=value, found `{line}`",
                    origin.display(),
                    i + 1
                ))
            })?;
            self.set(k.trim(), v).map_err(|e| match e {
                CliError::Config(m) => {
                    CliError::Config(format!("{}:{}: {m}", origin.display(), i + 1))
                }
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn apply_override(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, found `{pair}`")))?;
        self.set(k.trim(), v)
    }

    pub fn path(&self, key: &str) -> Option<&Path> {
        self.paths.get(key).map(PathBuf::as_path)
    }

    /// A configured path that must already exist.
    pub fn input_path(&self, key: &str) -> Result<&Path, CliError> {
        let p = self.path(key).ok_or_else(|| {
            CliError::Config(format!(
                "this command needs `{key}` (--{key} or {key}=… in the config)"
            ))
        })?;
        if !p.exists() {
            return Err(CliError::Missing(p.to_path_buf()));
        }
        Ok(p)
    }

    pub fn optional_input(&self, key: &str) -> Result<Option<&Path>, CliError> {
        match self.path(key) {
            Some(_) => self.input_path(key).map(Some),
            None => Ok(None),
        }
    }

    pub fn required_output(&self, key: &str) -> Result<&Path, CliError> {
        self.path(key).ok_or_else(|| {
            CliError::Config(format!(
                "this command needs `{key}` (--{key} or {key}=… in the config)"
            ))
        })
    }

    /// Every effective setting as `(key, value)`, in a fixed order.
    pub fn echo(&self) -> Vec<(String, String)> {
        let t = &self.train;
        let m = &t.model;
        let mut out: Vec<(String, String)> = self
            .paths
            .iter()
            .map(|(k, v)| (k.to_string(), v.display().to_string()))
            .collect();
        let columns = match self.columns {
            Columns::Auto => "auto",
            Columns::Fixed(c) if c == ColumnSpec::standard() => "standard",
            Columns::Fixed(c) if c == ColumnSpec::unlabeled() => "unlabeled",
            Columns::Fixed(c) if c == ColumnSpec::surface_label() => "surface-label",
            Columns::Fixed(_) => "predicted",
        };
        let toggles: Vec<&str> = self.toggles.iter().map(|t| t.name()).collect();
        let rest: [(&str, String); 38] = [
            ("model", self.model.as_str().into()),
            ("learning-rate", t.learning_rate.to_string()),
            ("beta1", t.beta1.to_string()),
            ("beta2", t.beta2.to_string()),
            ("epsilon", t.epsilon.to_string()),
            ("epochs", t.epochs.to_string()),
            ("patience", t.patience.to_string()),
            ("grad-clip", t.grad_clip.to_string()),
            ("seed", t.seed.to_string()),
            ("weighted-classes", t.weighted_classes.to_string()),
            ("class-weight-exponent", t.class_weight_exponent.to_string()),
            ("o-floor", t.o_floor.to_string()),
            ("crf-learning-rate", t.crf_learning_rate.to_string()),
            ("crf-iterations", t.crf_iterations.to_string()),
            ("crf-l2", t.crf_l2.to_string()),
            ("crf-tolerance", t.crf_tolerance.to_string()),
            ("dropout", m.dropout.to_string()),
            ("alpha", m.alpha.to_string()),
            ("multitask", m.multitask.to_string()),
            ("phonetics", m.phonetics.to_string()),
            ("pos", m.pos.to_string()),
            ("bio-constraints", m.bio_constraints.to_string()),
            ("char-hidden", m.dims.char_hidden.to_string()),
            ("word-hidden", m.dims.word_hidden.to_string()),
            ("dense", m.dims.dense.to_string()),
            ("pos-dim", m.dims.pos.to_string()),
            ("subword-oov", self.subword_oov.to_string()),
            ("subword-buckets", self.subword_buckets.to_string()),
            ("subword-seed", self.subword_seed.to_string()),
            (
                "pretrained-embeddings",
                self.pretrained_embeddings.to_string(),
            ),
            ("columns", columns.into()),
            (
                "bio-mode",
                match self.bio_mode {
                    BioMode::Repair => "repair".into(),
                    BioMode::Strict => "strict".into(),
                },
            ),
            ("hashtags", self.hashtags.to_string()),
            ("gold-required", self.gold_required.to_string()),
            (
                "report-format",
                match self.report_format {
                    ReportFormat::Table => "table".into(),
                    ReportFormat::Json => "json".into(),
                },
            ),
            ("toggles", toggles.join(",")),
            ("repetitions", self.repetitions.to_string()),
            ("gradcheck-epsilon", self.gradcheck_epsilon.to_string()),
        ];
        out.extend(rest.into_iter().map(|(k, v)| (k.to_string(), v)));
        out
    }

    /// `# config key=value` lines for text artifacts.
    pub fn header(&self, command: &str) -> String {
        let mut s = format!("# phononer {command}\n");
        for (k, v) in self.echo() {
            s.push_str(&format!("# config {k}={v}\n"));
        }
        s
    }

    pub fn echo_json(&self) -> serde_json::Value {
        serde_json::Value::Object(
            self.echo()
                .into_iter()
                .map(|(k, v)| (k, serde_json::Value::String(v)))
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let mut c = RunConfig::default();
        c.apply_text(
            "# comment\nepochs = 7\nmodel=e2e\n\ntrain=data/t.conll\n",
            Path::new("run.cfg"),
        )
        .unwrap();
        c.apply_override("epochs=9").unwrap();
        assert_eq!(c.train.epochs, 9);
        assert_eq!(c.model, ModelKind::E2e);
        assert_eq!(c.path("train"), Some(Path::new("data/t.conll")));
        assert!(c.explicit.contains("epochs"));
    }

    #[test]
    fn errors_name_the_location() {
        let mut c = RunConfig::default();
        let e = c
            .apply_text("epochs=7\nbogus=1\n", Path::new("run.cfg"))
            .unwrap_err();
        assert!(e.to_string().contains("run.cfg:2"), "{e}");
        assert!(c.apply_text("epochs\n", Path::new("x")).is_err());
        assert!(c.apply_override("weighted-classes=maybe").is_err());
        assert!(c.apply_override("toggles=multitask,nope").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::default();
        c.apply_override("seed=5").unwrap();
        c.apply_override("toggles=multitask,pos-vectors").unwrap();
        c.apply_override("dev=d.conll").unwrap();
        let text: String = c.echo().iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        let mut back = RunConfig::default();
        back.apply_text(&text, Path::new("echo")).unwrap();
        back.explicit = c.explicit.clone();
        assert_eq!(back.echo(), c.echo());
        assert_eq!(back.train, c.train);
    }
}
