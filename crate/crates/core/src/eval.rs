//! Entity-level scoring with seqeval semantics and seed aggregation.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{decode_spans, Corpus, EntityType, Span, Tag};
use crate::error::EvalError;
use crate::exec::Exec;
use crate::perturb::PerturbationScope;
use crate::prune::PruneStrategy;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }

    fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Micro-averaged precision, recall and F1 over entity mentions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_type: BTreeMap<EntityType, Counts>,
}

impl ScoreReport {
    pub fn from_per_type(per_type: BTreeMap<EntityType, Counts>) -> Self {
        let mut total = Counts::default();
        for c in per_type.values() {
            total.add(*c);
        }
        Self {
            tp: total.tp,
            fp: total.fp,
            fn_: total.fn_,
            precision: total.precision(),
            recall: total.recall(),
            f1: total.f1(),
            per_type,
        }
    }

    pub fn counts(&self) -> Counts {
        Counts {
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
        }
    }
}

/// Scores aligned tag sequences. A true positive is an exact
/// `(start, end, type)` match within the same sentence.
pub fn score_tags(gold: &[Vec<Tag>], predicted: &[Vec<Tag>]) -> Result<ScoreReport, EvalError> {
    if gold.len() != predicted.len() {
        return Err(EvalError::SentenceCount {
            gold: gold.len(),
            predicted: predicted.len(),
        });
    }
    let mut per_type: BTreeMap<EntityType, Counts> = EntityType::ALL
        .into_iter()
        .map(|t| (t, Counts::default()))
        .collect();
    for (index, (g, p)) in gold.iter().zip(predicted).enumerate() {
        if g.len() != p.len() {
            return Err(EvalError::TokenCount {
                index,
                gold: g.len(),
                predicted: p.len(),
            });
        }
        let gold_spans: HashSet<Span> = decode_spans(g).into_iter().collect();
        let pred_spans: HashSet<Span> = decode_spans(p).into_iter().collect();
        for s in &pred_spans {
            let c = per_type.get_mut(&s.etype).expect("all types present");
            if gold_spans.contains(s) {
                c.tp += 1;
            } else {
                c.fp += 1;
            }
        }
        for s in gold_spans.difference(&pred_spans) {
            per_type.get_mut(&s.etype).expect("all types present").fn_ += 1;
        }
    }
    Ok(ScoreReport::from_per_type(per_type))
}

pub fn score_corpus(gold: &Corpus, predicted: &[Vec<Tag>]) -> Result<ScoreReport, EvalError> {
    score_tags(&gold.tag_sequences(), predicted)
}

/// Scores several independent (gold, prediction) pairs.
pub fn score_many(
    pairs: &[(&Corpus, &[Vec<Tag>])],
    exec: Exec,
) -> Vec<Result<ScoreReport, EvalError>> {
    exec.map(pairs, |(gold, pred)| score_corpus(gold, pred))
}

/// Allowed sparsity levels, in percent.
pub const SPARSITY_LEVELS: [u32; 7] = [0, 50, 70, 80, 90, 95, 98];

pub fn check_sparsity(percent: u32) -> Result<u32, EvalError> {
    if SPARSITY_LEVELS.contains(&percent) {
        Ok(percent)
    } else {
        Err(EvalError::Sparsity(percent))
    }
}

/// Which test set a score was computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalSplit {
    Regular,
    PerturbedInLanguage,
    PerturbedInScript,
    PerturbedInFamily,
}

impl EvalSplit {
    pub const ALL: [EvalSplit; 4] = [
        EvalSplit::Regular,
        EvalSplit::PerturbedInLanguage,
        EvalSplit::PerturbedInScript,
        EvalSplit::PerturbedInFamily,
    ];

    pub fn perturbed(scope: PerturbationScope) -> Self {
        match scope {
            PerturbationScope::InLanguage => EvalSplit::PerturbedInLanguage,
            PerturbationScope::InScript => EvalSplit::PerturbedInScript,
            PerturbationScope::InFamily => EvalSplit::PerturbedInFamily,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EvalSplit::Regular => "regular",
            EvalSplit::PerturbedInLanguage => "perturbed-in-language",
            EvalSplit::PerturbedInScript => "perturbed-in-script",
            EvalSplit::PerturbedInFamily => "perturbed-in-family",
        }
    }
}

impl fmt::Display for EvalSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalSplit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EvalSplit::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| format!("unknown evaluation split `{s}`"))
    }
}

/// One evaluation outcome, serialized as a flat JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub language: String,
    pub sparsity: u32,
    pub strategy: PruneStrategy,
    pub seed: u64,
    pub split: EvalSplit,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RunRecord {
    pub fn new(
        language: impl Into<String>,
        sparsity: u32,
        strategy: PruneStrategy,
        seed: u64,
        split: EvalSplit,
        report: &ScoreReport,
    ) -> Result<Self, EvalError> {
        Ok(Self {
            language: language.into(),
            sparsity: check_sparsity(sparsity)?,
            strategy,
            seed,
            split,
            tp: report.tp,
            fp: report.fp,
            fn_: report.fn_,
            precision: report.precision,
            recall: report.recall,
            f1: report.f1,
        })
    }

    /// A record that carries only an F1 value, e.g. a published table cell.
    /// Precision and recall are set equal to F1 and the counts to zero.
    pub fn from_f1(
        language: impl Into<String>,
        sparsity: u32,
        strategy: PruneStrategy,
        seed: u64,
        split: EvalSplit,
        f1: f64,
    ) -> Self {
        Self {
            language: language.into(),
            sparsity,
            strategy,
            seed,
            split,
            tp: 0,
            fp: 0,
            fn_: 0,
            precision: f1,
            recall: f1,
            f1,
        }
    }

    pub fn key(&self) -> GroupKey {
        GroupKey {
            language: self.language.clone(),
            sparsity: self.sparsity,
            strategy: self.strategy,
            split: self.split,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub language: String,
    pub sparsity: u32,
    pub strategy: PruneStrategy,
    pub split: EvalSplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    #[serde(flatten)]
    pub key: GroupKey,
    pub n: usize,
    pub mean_f1: f64,
    /// Population standard deviation.
    pub std_f1: f64,
}

/// Mean and population standard deviation of F1 per
/// `(language, sparsity, strategy, split)`, sorted by key.
pub fn aggregate_seeds(records: &[RunRecord]) -> Vec<SeedAggregate> {
    let mut groups: BTreeMap<GroupKey, Vec<f64>> = BTreeMap::new();
    for r in records {
        groups.entry(r.key()).or_default().push(r.f1);
    }
    groups
        .into_iter()
        .map(|(key, values)| {
            let (mean, std) = mean_std(&values);
            SeedAggregate {
                key,
                n: values.len(),
                mean_f1: mean,
                std_f1: std,
            }
        })
        .collect()
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn records_to_jsonl(records: &[RunRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Reads RunRecords from JSON lines. Lines may carry extra fields (such as
/// experiment provenance), which are ignored.
pub fn records_from_jsonl(text: &str) -> Result<Vec<RunRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
