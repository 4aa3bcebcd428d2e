//! Entity-level precision/recall/F1, surface-form F1, report rendering and
//! the ablation harness.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{split_label, Sentence};
use crate::error::{Error, Result};
use crate::model::Featurizer;
use crate::train::{train_stacked, TrainConfig};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityMention {
    pub class: String,
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

/// Maximal `B-c I-c*` runs. A bare `I-c` opens a mention, and `O` or a class
/// change closes one. Malformed labels are treated as `O`.
pub fn extract_entities<L: AsRef<str>, T: AsRef<str>>(
    labels: &[L],
    tokens: &[T],
) -> Vec<EntityMention> {
    let mut out = Vec::new();
    let mut open: Option<(String, usize)> = None;
    let close = |open: &mut Option<(String, usize)>, end: usize, out: &mut Vec<EntityMention>| {
        if let Some((class, start)) = open.take() {
            let surface = tokens[start..end]
                .iter()
                .map(AsRef::as_ref)
                .collect::<Vec<_>>()
                .join(" ");
            out.push(EntityMention {
                class,
                start,
                end,
                surface,
            });
        }
    };
    for (i, l) in labels.iter().enumerate() {
        match split_label(l.as_ref()) {
            Ok(('I', Some(c))) if open.as_ref().is_some_and(|(oc, _)| oc == c) => {}
            Ok((_, Some(c))) => {
                close(&mut open, i, &mut out);
                open = Some((c.to_string(), i));
            }
            _ => close(&mut open, i, &mut out),
        }
    }
    close(&mut open, labels.len(), &mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub support: usize,
}

impl Scores {
    pub fn from_counts(true_positives: usize, predicted: usize, support: usize) -> Self {
        let pct = |a: usize, b: usize| {
            if b == 0 {
                0.0
            } else {
                100.0 * a as f64 / b as f64
            }
        };
        let precision = pct(true_positives, predicted);
        let recall = pct(true_positives, support);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Scores {
            precision,
            recall,
            f1,
            true_positives,
            predicted,
            support,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalReport {
    pub per_class: BTreeMap<String, Scores>,
    pub overall: Scores,
    pub surface_form_f1: f64,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialize")
    }

    /// Per-class rows with P/R/F1 columns, then the micro-averaged overall
    /// row and surface-form F1.
    pub fn to_table(&self) -> String {
        let width = self
            .per_class
            .keys()
            .map(|k| k.chars().count())
            .chain([7])
            .max()
            .unwrap_or(7);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}",
            "class", "precision", "recall", "F1", "support"
        );
        let row = |s: &mut String, name: &str, sc: &Scores| {
            let _ = writeln!(
                s,
                "{:<width$}  {:>9.2}  {:>9.2}  {:>9.2}  {:>7}",
                name, sc.precision, sc.recall, sc.f1, sc.support
            );
        };
        for (class, sc) in &self.per_class {
            row(&mut s, class, sc);
        }
        row(&mut s, "overall", &self.overall);
        let _ = writeln!(
            s,
            "{:<width$}  {:>9}  {:>9}  {:>9.2}",
            "surface", "", "", self.surface_form_f1
        );
        s
    }
}

fn mentions(corpus: &[Sentence], which: &str) -> Result<Vec<Vec<EntityMention>>> {
    corpus
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let labels = s.gold_labels().ok_or_else(|| Error::Alignment {
                index: i,
                message: format!("{which} sentence is unlabeled"),
            })?;
            Ok(extract_entities(&labels, &s.surfaces()))
        })
        .collect()
}

fn check_aligned(gold: &[Sentence], pred: &[Sentence]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Alignment {
            index: gold.len().min(pred.len()),
            message: format!(
                "gold has {} sentences, prediction {}",
                gold.len(),
                pred.len()
            ),
        });
    }
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::Alignment {
                index: i,
                message: format!("gold has {} tokens, prediction {}", g.len(), p.len()),
            });
        }
    }
    Ok(())
}

/// Exact-span entity scores per class and micro-averaged overall, plus
/// surface-form F1.
pub fn entity_f1(gold: &[Sentence], pred: &[Sentence]) -> Result<EvalReport> {
    check_aligned(gold, pred)?;
    let gm = mentions(gold, "gold")?;
    let pm = mentions(pred, "predicted")?;
    let mut counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    for (g, p) in gm.iter().zip(&pm) {
        let spans: HashSet<(&str, usize, usize)> = g
            .iter()
            .map(|m| (m.class.as_str(), m.start, m.end))
            .collect();
        for m in g {
            counts.entry(m.class.clone()).or_default().2 += 1;
        }
        for m in p {
            let e = counts.entry(m.class.clone()).or_default();
            e.1 += 1;
            if spans.contains(&(m.class.as_str(), m.start, m.end)) {
                e.0 += 1;
            }
        }
    }
    let per_class: BTreeMap<String, Scores> = counts
        .iter()
        .map(|(c, &(tp, np, ng))| (c.clone(), Scores::from_counts(tp, np, ng)))
        .collect();
    let (tp, np, ng) = counts
        .values()
        .fold((0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    Ok(EvalReport {
        per_class,
        overall: Scores::from_counts(tp, np, ng),
        surface_form_f1: surface_scores(&gm, &pm).f1,
    })
}

fn surface_scores(gold: &[Vec<EntityMention>], pred: &[Vec<EntityMention>]) -> Scores {
    let set = |ms: &[Vec<EntityMention>]| -> BTreeSet<(String, String)> {
        ms.iter()
            .flatten()
            .map(|m| (m.class.clone(), m.surface.clone()))
            .collect()
    };
    let (g, p) = (set(gold), set(pred));
    Scores::from_counts(g.intersection(&p).count(), p.len(), g.len())
}

/// F1 over mentions deduplicated corpus-wide by `(class, surface)`.
pub fn surface_form_f1(gold: &[Sentence], pred: &[Sentence]) -> Result<f64> {
    check_aligned(gold, pred)?;
    Ok(surface_scores(&mentions(gold, "gold")?, &mentions(pred, "predicted")?).f1)
}

/// Copies `gold` with each sentence's labels replaced by `labels`.
pub fn relabel(gold: &[Sentence], labels: &[Vec<String>]) -> Result<Vec<Sentence>> {
    if gold.len() != labels.len() {
        return Err(Error::Alignment {
            index: gold.len().min(labels.len()),
            message: format!("{} sentences but {} label rows", gold.len(), labels.len()),
        });
    }
    gold.iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (s, l))| {
            if s.len() != l.len() {
                return Err(Error::Alignment {
                    index: i,
                    message: format!("{} tokens but {} labels", s.len(), l.len()),
                });
            }
            let mut s = s.clone();
            for (t, l) in s.tokens.iter_mut().zip(l) {
                t.gold = Some(l.clone());
            }
            Ok(s)
        })
        .collect()
}

/// A component that an ablation run switches off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Toggle {
    Multitask,
    CharPhonetics,
    WeightedClasses,
    PosVectors,
    SubwordOov,
    PretrainedEmbeddings,
}

impl Toggle {
    pub const ALL: [Toggle; 6] = [
        Toggle::Multitask,
        Toggle::CharPhonetics,
        Toggle::WeightedClasses,
        Toggle::PosVectors,
        Toggle::SubwordOov,
        Toggle::PretrainedEmbeddings,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Toggle::Multitask => "multitask",
            Toggle::CharPhonetics => "char-phonetics",
            Toggle::WeightedClasses => "weighted-classes",
            Toggle::PosVectors => "pos-vectors",
            Toggle::SubwordOov => "subword-oov",
            Toggle::PretrainedEmbeddings => "pretrained-embeddings",
        }
    }

    /// Disables the component in a config/featurizer pair.
    pub fn apply(self, config: &mut TrainConfig, featurizer: &mut Featurizer) {
        match self {
            Toggle::Multitask => config.model.multitask = false,
            Toggle::CharPhonetics => config.model.phonetics = false,
            Toggle::WeightedClasses => config.weighted_classes = false,
            Toggle::PosVectors => config.model.pos = false,
            Toggle::SubwordOov => featurizer.subword = None,
            Toggle::PretrainedEmbeddings => featurizer.pretrained = false,
        }
    }
}

impl FromStr for Toggle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Toggle::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = Toggle::ALL.iter().map(|t| t.name()).collect();
                Error::Config(format!(
                    "unknown ablation toggle `{s}` (expected one of {})",
                    known.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct AblationRow {
    /// `base`, or the name of the disabled component.
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub delta_f1: f64,
    /// Overall F1 of each repetition.
    pub runs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct AblationTable {
    pub repetitions: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ablation serialize")
    }

    pub fn to_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .chain([9])
            .max()
            .unwrap_or(9);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}",
            "component", "precision", "recall", "F1", "delta"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<width$}  {:>9.2}  {:>9.2}  {:>9.2}  {:>+7.2}",
                r.name, r.precision, r.recall, r.f1, r.delta_f1
            );
        }
        s
    }
}

/// Retrains the stacked model with each toggle disabled in turn (not
/// cumulatively), averaging dev scores over repetitions seeded
/// `base.seed + rep`.
pub fn ablation_run(
    base: &TrainConfig,
    toggles: &[Toggle],
    train: &[Sentence],
    dev: &[Sentence],
    featurizer: &Featurizer,
    repetitions: usize,
) -> Result<AblationTable> {
    if repetitions == 0 {
        return Err(Error::Config(
            "ablation needs at least one repetition".into(),
        ));
    }
    if dev.is_empty() {
        return Err(Error::Config("ablation needs a dev corpus".into()));
    }
    let variants = std::iter::once(None).chain(toggles.iter().copied().map(Some));
    let mut rows: Vec<AblationRow> = Vec::new();
    for toggle in variants {
        let (mut p, mut r, mut runs) = (0.0, 0.0, Vec::with_capacity(repetitions));
        for rep in 0..repetitions {
            let mut config = *base;
            config.seed = base.seed.wrapping_add(rep as u64);
            let mut feat = featurizer.clone();
            if let Some(t) = toggle {
                t.apply(&mut config, &mut feat);
            }
            let overall = train_stacked(train, dev, &feat, &config)?
                .crf_report
                .overall;
            log::info!(
                "ablation {} rep {}: P {:.2} R {:.2} F1 {:.2}",
                toggle.map_or("base", Toggle::name),
                rep + 1,
                overall.precision,
                overall.recall,
                overall.f1
            );
            p += overall.precision;
            r += overall.recall;
            runs.push(overall.f1);
        }
        let n = repetitions as f64;
        let f1 = runs.iter().sum::<f64>() / n;
        let delta_f1 = rows.first().map_or(0.0, |b| f1 - b.f1);
        rows.push(AblationRow {
            name: toggle.map_or("base", Toggle::name).to_string(),
            precision: p / n,
            recall: r / n,
            f1,
            delta_f1,
            runs,
        });
    }
    Ok(AblationTable { repetitions, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Token;

    fn sent(words: &str, labels: &str) -> Sentence {
        Sentence {
            tokens: words
                .split(' ')
                .zip(labels.split(' '))
                .map(|(w, l)| Token::new(w, "N", Some(l)))
                .collect(),
            source_id: String::new(),
        }
    }

    #[test]
    fn extraction() {
        let toks = ["a", "b", "c"];
        let m = extract_entities(&["B-person", "I-person", "O"], &toks);
        assert_eq!(m.len(), 1);
        assert_eq!((m[0].start, m[0].end, m[0].surface.as_str()), (0, 2, "a b"));
        assert_eq!(
            extract_entities(&["B-person", "B-person"], &toks[..2]).len(),
            2
        );
        let m = extract_entities(&["O", "I-person", "I-person"], &toks);
        assert_eq!((m[0].start, m[0].end), (1, 3));
        let m = extract_entities(&["B-person", "I-group"], &toks[..2]);
        assert_eq!(m.len(), 2);
        assert_eq!(m[1].class, "group");
    }

    #[test]
    fn spurious_prediction() {
        let gold = vec![sent("trey is here", "B-person O O")];
        let pred = vec![sent("trey is here", "B-person O B-location")];
        let r = entity_f1(&gold, &pred).unwrap();
        assert_eq!(r.overall.precision, 50.0);
        assert_eq!(r.overall.recall, 100.0);
        assert!((r.overall.f1 - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.per_class["location"].f1, 0.0);
    }

    #[test]
    fn identity_and_empty_prediction() {
        let gold = vec![
            sent("trey songz rocks", "B-person I-person O"),
            sent("in paris", "O B-location"),
        ];
        let r = entity_f1(&gold, &gold).unwrap();
        assert_eq!(r.overall.f1, 100.0);
        assert_eq!(r.surface_form_f1, 100.0);
        assert!(r.per_class.values().all(|s| s.f1 == 100.0));
        let none = vec![sent("trey songz rocks", "O O O"), sent("in paris", "O O")];
        let r = entity_f1(&gold, &none).unwrap();
        assert_eq!(
            (r.overall.precision, r.overall.recall, r.overall.f1),
            (0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn surface_dedup() {
        let gold: Vec<Sentence> = (0..5).map(|_| sent("trey", "B-person")).collect();
        let mut once = vec![sent("trey", "O"); 5];
        once[0] = sent("trey", "B-person");
        assert_eq!(surface_form_f1(&gold, &once).unwrap(), 100.0);
        assert_eq!(surface_form_f1(&gold, &gold).unwrap(), 100.0);
    }

    #[test]
    fn swap_gold_and_pred() {
        let a = vec![sent("x y z w", "B-a I-a O B-b")];
        let b = vec![sent("x y z w", "B-a O O B-b")];
        let ab = entity_f1(&a, &b).unwrap();
        let ba = entity_f1(&b, &a).unwrap();
        assert_eq!(ab.overall.precision, ba.overall.recall);
        assert_eq!(ab.overall.recall, ba.overall.precision);
    }

    #[test]
    fn misalignment() {
        let a = vec![sent("x y", "O O")];
        let b = vec![sent("x", "O")];
        assert!(matches!(
            entity_f1(&a, &b),
            Err(Error::Alignment { index: 0, .. })
        ));
        assert!(matches!(entity_f1(&a, &[]), Err(Error::Alignment { .. })));
    }

    #[test]
    fn toggles_parse() {
        for t in Toggle::ALL {
            assert_eq!(t.name().parse::<Toggle>().unwrap(), t);
        }
        assert!(matches!("dropout".parse::<Toggle>(), Err(Error::Config(_))));
    }

    #[test]
    fn ablation_table_layout() {
        let row = |name: &str, f1: f64, delta_f1: f64| AblationRow {
            name: name.into(),
            precision: f1,
            recall: f1,
            f1,
            delta_f1,
            runs: vec![f1],
        };
        let t = AblationTable {
            repetitions: 1,
            rows: vec![row("base", 50.0, 0.0), row("multitask", 49.21, -0.79)],
        };
        let text = t.to_table();
        assert!(text.lines().nth(2).unwrap().ends_with("-0.79"));
        assert!(text.lines().nth(1).unwrap().ends_with("+0.00"));
    }

    #[test]
    fn table_layout() {
        let gold = vec![sent("trey in paris", "B-person O B-location")];
        let t = entity_f1(&gold, &gold).unwrap().to_table();
        let lines: Vec<&str> = t.lines().collect();
        assert!(lines[0].starts_with("class"));
        assert!(lines[1].starts_with("location"));
        assert!(lines[2].starts_with("person"));
        assert!(lines[3].starts_with("overall") && lines[3].contains("100.00"));
        assert!(lines[4].starts_with("surface"));
    }
}
