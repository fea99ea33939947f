//! Aggregations over evaluation records: grouped statistics, deltas
//! against the dense model, robustness ratios, multilingual gain and
//! Kendall's tau, plus CSV/JSON report emission.
//!
//! Every statistic works on seed-mean F1 per
//! `(language, sparsity, strategy, split)`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{size_bucket, MetaTable};
use crate::error::AnalysisError;
use crate::eval::{aggregate_seeds, mean_std, EvalSplit, GroupKey, RunRecord};
use crate::prune::PruneStrategy;

/// `(sparse - dense) / dense`; `None` unless `dense > 0`.
pub fn relative_delta(sparse_f1: f64, dense_f1: f64) -> Option<f64> {
    (dense_f1 > 0.0 && sparse_f1.is_finite()).then(|| (sparse_f1 - dense_f1) / dense_f1)
}

/// `perturbed / regular`; `None` unless `regular > 0`.
pub fn robustness_ratio(perturbed_f1: f64, regular_f1: f64) -> Option<f64> {
    (regular_f1 > 0.0 && perturbed_f1.is_finite()).then(|| perturbed_f1 / regular_f1)
}

fn tie_pairs(sorted: &[f64]) -> i64 {
    let mut total = 0i64;
    let mut run = 1i64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Sorts `v` ascending and returns the number of inversions removed.
fn merge_count(v: &mut [f64]) -> i64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid]) + merge_count(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            merged.push(v[j]);
            swaps += (mid - i) as i64;
            j += 1;
        } else {
            merged.push(v[i]);
            i += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..]);
    v.copy_from_slice(&merged);
    swaps
}

/// Kendall's tau-b, `(C - D) / sqrt((n0 - n1)(n0 - n2))`, computed with
/// Knight's O(n log n) algorithm.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(AnalysisError::TooShort(n));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(AnalysisError::Undefined);
    }
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n0 = (n * (n - 1) / 2) as i64;

    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let n1 = tie_pairs(&xs);
    let mut joint = 0i64;
    let mut run = 1i64;
    for w in pairs.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            joint += run * (run - 1) / 2;
            run = 1;
        }
    }
    joint += run * (run - 1) / 2;

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let swaps = merge_count(&mut ys);
    let n2 = tie_pairs(&ys);

    if n0 == n1 || n0 == n2 {
        return Err(AnalysisError::Undefined);
    }
    let diff = n0 - n1 - n2 + joint - 2 * swaps;
    Ok(diff as f64 / (((n0 - n1) as f64) * ((n0 - n2) as f64)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupDimension {
    SizeBucket,
    Family,
    Script,
}

impl GroupDimension {
    pub const ALL: [GroupDimension; 3] = [
        GroupDimension::SizeBucket,
        GroupDimension::Family,
        GroupDimension::Script,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GroupDimension::SizeBucket => "size-bucket",
            GroupDimension::Family => "family",
            GroupDimension::Script => "script",
        }
    }

    fn key(self, language: &str, meta: &MetaTable) -> Option<GroupName> {
        let m = meta.get(language)?;
        Some(match self {
            GroupDimension::SizeBucket => GroupName::Size(size_bucket(m.train_size)),
            GroupDimension::Family => GroupName::Name(m.family.clone()),
            GroupDimension::Script => GroupName::Name(m.script.clone()),
        })
    }
}

impl fmt::Display for GroupDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GroupDimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GroupDimension::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown group dimension `{s}`"))
    }
}

/// Group label; size buckets sort numerically.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum GroupName {
    Size(u32),
    Name(String),
}

impl fmt::Display for GroupName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupName::Size(n) => write!(f, "{n}"),
            GroupName::Name(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stat {
    Mean,
    Median,
    /// Population standard deviation.
    Std,
}

impl Stat {
    pub fn apply(self, values: &[f64]) -> f64 {
        match self {
            Stat::Mean => mean_std(values).0,
            Stat::Std => mean_std(values).1,
            Stat::Median => median(values),
        }
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// A statistic over languages sharing a group and a
/// `(sparsity, strategy, split)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub group: String,
    pub sparsity: u32,
    pub strategy: PruneStrategy,
    pub split: EvalSplit,
    pub n_languages: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Cell {
    sparsity: u32,
    strategy: PruneStrategy,
    split: EvalSplit,
}

impl From<&GroupKey> for Cell {
    fn from(k: &GroupKey) -> Self {
        Cell {
            sparsity: k.sparsity,
            strategy: k.strategy,
            split: k.split,
        }
    }
}

/// Seed-mean F1 keyed by `(language, sparsity, strategy, split)`.
pub fn seed_means(records: &[RunRecord]) -> BTreeMap<GroupKey, f64> {
    aggregate_seeds(records)
        .into_iter()
        .map(|a| (a.key, a.mean_f1))
        .collect()
}

fn check_meta(records: &[RunRecord], meta: &MetaTable) -> Result<(), AnalysisError> {
    let missing: BTreeSet<&str> = records
        .iter()
        .filter(|r| !meta.contains_key(&r.language))
        .map(|r| r.language.as_str())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(AnalysisError::MissingMetadata(missing.into_iter().map(String::from).collect()))
    }
}

fn grouped(
    records: &[RunRecord],
    key: impl Fn(&str) -> GroupName,
) -> BTreeMap<(GroupName, Cell), Vec<f64>> {
    let mut groups: BTreeMap<(GroupName, Cell), Vec<f64>> = BTreeMap::new();
    for (k, v) in seed_means(records) {
        groups.entry((key(&k.language), Cell::from(&k))).or_default().push(v);
    }
    groups
}

fn to_stats(groups: BTreeMap<(GroupName, Cell), Vec<f64>>, stat: Stat) -> Vec<GroupStat> {
    groups
        .into_iter()
        .map(|((g, c), v)| GroupStat {
            group: g.to_string(),
            sparsity: c.sparsity,
            strategy: c.strategy,
            split: c.split,
            n_languages: v.len(),
            value: stat.apply(&v),
        })
        .collect()
}

/// `stat` over per-language seed-mean F1 within each group of `dim`.
/// Output is ordered by group (size buckets numerically), then cell.
pub fn group_stats(
    records: &[RunRecord],
    meta: &MetaTable,
    dim: GroupDimension,
    stat: Stat,
) -> Result<Vec<GroupStat>, AnalysisError> {
    check_meta(records, meta)?;
    let groups = grouped(records, |l| dim.key(l, meta).expect("checked above"));
    Ok(to_stats(groups, stat))
}

/// `stat` over all languages per cell; the group label is `all`.
pub fn overall_stats(records: &[RunRecord], stat: Stat) -> Vec<GroupStat> {
    to_stats(grouped(records, |_| GroupName::Name("all".into())), stat)
}

/// `multi - mono` for every language present in both maps.
pub fn multilingual_gain(
    multi: &BTreeMap<String, f64>,
    mono: &BTreeMap<String, f64>,
) -> BTreeMap<String, f64> {
    multi
        .iter()
        .filter_map(|(l, m)| mono.get(l).map(|o| (l.clone(), m - o)))
        .collect()
}

/// Seed-mean F1 per language for one cell.
pub fn f1_by_language(
    records: &[RunRecord],
    sparsity: u32,
    strategy: PruneStrategy,
    split: EvalSplit,
) -> BTreeMap<String, f64> {
    seed_means(records)
        .into_iter()
        .filter(|(k, _)| k.sparsity == sparsity && k.strategy == strategy && k.split == split)
        .map(|(k, v)| (k.language, v))
        .collect()
}

/// Kendall's tau-b between per-language values and metadata train sizes.
pub fn tau_against_train_size(
    values: &BTreeMap<String, f64>,
    meta: &MetaTable,
) -> Result<f64, AnalysisError> {
    let missing: Vec<String> = values.keys().filter(|l| !meta.contains_key(*l)).cloned().collect();
    if !missing.is_empty() {
        return Err(AnalysisError::MissingMetadata(missing));
    }
    let sizes: Vec<f64> = values.keys().map(|l| f64::from(meta[l].train_size)).collect();
    let vals: Vec<f64> = values.values().copied().collect();
    kendall_tau(&vals, &sizes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRecord {
    /// `language` or a [`GroupDimension`] name.
    pub level: String,
    pub key: String,
    pub sparsity: u32,
    pub strategy: PruneStrategy,
    pub split: EvalSplit,
    pub dense_f1: f64,
    pub sparse_f1: f64,
    pub absolute_delta: f64,
    pub relative_delta: Option<f64>,
}

fn dense_lookup<K: Ord + Clone>(
    table: &BTreeMap<(K, Cell), f64>,
    key: &K,
    cell: Cell,
) -> Option<f64> {
    // Prefer the same strategy's dense runs, else any strategy's.
    let same = Cell {
        sparsity: 0,
        ..cell
    };
    table.get(&(key.clone(), same)).copied().or_else(|| {
        table
            .iter()
            .find(|((k, c), _)| k == key && c.sparsity == 0 && c.split == cell.split)
            .map(|(_, v)| *v)
    })
}

fn deltas_from(level: &str, table: BTreeMap<(String, Cell), f64>) -> Vec<DeltaRecord> {
    table
        .iter()
        .filter(|((_, c), _)| c.sparsity > 0)
        .filter_map(|((k, c), &sparse)| {
            let dense = dense_lookup(&table, k, *c)?;
            Some(DeltaRecord {
                level: level.to_string(),
                key: k.clone(),
                sparsity: c.sparsity,
                strategy: c.strategy,
                split: c.split,
                dense_f1: dense,
                sparse_f1: sparse,
                absolute_delta: sparse - dense,
                relative_delta: relative_delta(sparse, dense),
            })
        })
        .collect()
}

/// Per-language deltas of every sparse cell against the dense cell of the
/// same language, strategy and split. Dense runs of another strategy stand
/// in when the same strategy has none.
pub fn language_deltas(records: &[RunRecord]) -> Vec<DeltaRecord> {
    let table = seed_means(records)
        .into_iter()
        .map(|(k, v)| ((k.language.clone(), Cell::from(&k)), v))
        .collect();
    deltas_from("language", table)
}

/// Deltas of group-mean F1 against the group's dense mean.
pub fn group_deltas(
    records: &[RunRecord],
    meta: &MetaTable,
    dim: GroupDimension,
) -> Result<Vec<DeltaRecord>, AnalysisError> {
    check_meta(records, meta)?;
    let groups = grouped(records, |l| dim.key(l, meta).expect("checked above"));
    let mut ordered: Vec<(GroupName, String)> = groups.keys().map(|(g, _)| (g.clone(), g.to_string())).collect();
    ordered.dedup();
    let table: BTreeMap<(String, Cell), f64> = groups
        .into_iter()
        .map(|((g, c), v)| ((g.to_string(), c), Stat::Mean.apply(&v)))
        .collect();
    let mut out = deltas_from(dim.as_str(), table);
    let rank: BTreeMap<String, usize> = ordered.into_iter().enumerate().map(|(i, (_, s))| (s, i)).collect();
    out.sort_by_key(|d| rank[&d.key]);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRecord {
    pub language: String,
    pub sparsity: u32,
    pub strategy: PruneStrategy,
    pub split: EvalSplit,
    pub regular_f1: f64,
    pub perturbed_f1: f64,
    pub ratio: Option<f64>,
}

/// Perturbed over regular seed-mean F1 for every perturbed cell.
pub fn robustness_ratios(records: &[RunRecord]) -> Vec<RatioRecord> {
    let means = seed_means(records);
    means
        .iter()
        .filter(|(k, _)| k.split != EvalSplit::Regular)
        .filter_map(|(k, &perturbed)| {
            let regular_key = GroupKey {
                split: EvalSplit::Regular,
                ..k.clone()
            };
            let regular = *means.get(&regular_key)?;
            Some(RatioRecord {
                language: k.language.clone(),
                sparsity: k.sparsity,
                strategy: k.strategy,
                split: k.split,
                regular_f1: regular,
                perturbed_f1: perturbed,
                ratio: robustness_ratio(perturbed, regular),
            })
        })
        .collect()
}

fn f4(v: f64) -> String {
    format!("{v:.4}")
}

fn opt4(v: Option<f64>) -> String {
    v.map(f4).unwrap_or_default()
}

fn csv_text(header: &[&str], rows: Vec<Vec<String>>) -> Result<String, AnalysisError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| AnalysisError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// `languages × sparsity` seed-mean F1 for one strategy and split, with
/// `means` and `medians` rows appended.
pub fn pivot_table(
    records: &[RunRecord],
    strategy: PruneStrategy,
    split: EvalSplit,
) -> Result<String, AnalysisError> {
    let means = seed_means(records);
    let levels: BTreeSet<u32> = means
        .keys()
        .filter(|k| k.strategy == strategy && k.split == split)
        .map(|k| k.sparsity)
        .collect();
    let languages: BTreeSet<&str> = means
        .keys()
        .filter(|k| k.strategy == strategy && k.split == split)
        .map(|k| k.language.as_str())
        .collect();
    let level_names: Vec<String> = levels.iter().map(|l| l.to_string()).collect();
    let mut header = vec!["language"];
    header.extend(level_names.iter().map(String::as_str));
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); levels.len()];
    let mut rows = Vec::new();
    for lang in &languages {
        let mut row = vec![lang.to_string()];
        for (i, &s) in levels.iter().enumerate() {
            let key = GroupKey {
                language: lang.to_string(),
                sparsity: s,
                strategy,
                split,
            };
            match means.get(&key) {
                Some(&v) => {
                    columns[i].push(v);
                    row.push(f4(v));
                }
                None => row.push(String::new()),
            }
        }
        rows.push(row);
    }
    if !languages.is_empty() {
        for (name, stat) in [("means", Stat::Mean), ("medians", Stat::Median)] {
            let mut row = vec![name.to_string()];
            row.extend(columns.iter().map(|c| f4(stat.apply(c))));
            rows.push(row);
        }
    }
    csv_text(&header, rows)
}

/// Per-language train/test entity overlap, `None` when the test set has no
/// mentions.
pub type OverlapTable = BTreeMap<String, Option<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub records: usize,
    pub languages: Vec<String>,
    pub sparsity_levels: Vec<u32>,
    pub strategies: Vec<PruneStrategy>,
    pub splits: Vec<EvalSplit>,
    pub overall_mean: Vec<GroupStat>,
    pub overall_median: Vec<GroupStat>,
    pub files: Vec<String>,
}

pub const PER_LANGUAGE_HEADER: [&str; 7] =
    ["language", "sparsity", "strategy", "split", "n_seeds", "mean_f1", "std_f1"];
pub const PER_GROUP_HEADER: [&str; 9] = [
    "dimension", "group", "sparsity", "strategy", "split", "n_languages", "mean_f1", "median_f1", "std_f1",
];
pub const DELTAS_HEADER: [&str; 9] = [
    "level", "key", "sparsity", "strategy", "split", "dense_f1", "sparse_f1", "absolute_delta", "relative_delta",
];
pub const RATIOS_HEADER: [&str; 7] =
    ["language", "sparsity", "strategy", "split", "regular_f1", "perturbed_f1", "ratio"];
pub const OVERLAP_HEADER: [&str; 6] = ["language", "overlap", "sparsity", "strategy", "split", "f1"];

/// Writes the report into `out_dir`:
///
/// * `per_language.csv`: seed mean and population std of F1 per cell
/// * `per_group.csv`: mean, median and std of seed-mean F1 per group, for
///   every [`GroupDimension`] plus the `overall` dimension
/// * `deltas.csv`: absolute and relative deltas against dense, per language
///   and per group
/// * `ratios.csv`: perturbed / regular F1
/// * `overlap_f1.csv`: entity overlap against regular F1 per language
/// * `table_<strategy>_<split>.csv`: languages × sparsity pivots
/// * `summary.json`
///
/// Numbers are written with 4 decimals; undefined values are empty.
pub fn emit_report(
    records: &[RunRecord],
    meta: &MetaTable,
    overlaps: &OverlapTable,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, AnalysisError> {
    check_meta(records, meta)?;
    fs::create_dir_all(out_dir)?;
    let mut files: Vec<(String, String)> = Vec::new();

    let aggregates = aggregate_seeds(records);
    let rows = aggregates
        .iter()
        .map(|a| {
            vec![
                a.key.language.clone(),
                a.key.sparsity.to_string(),
                a.key.strategy.to_string(),
                a.key.split.to_string(),
                a.n.to_string(),
                f4(a.mean_f1),
                f4(a.std_f1),
            ]
        })
        .collect();
    files.push(("per_language.csv".into(), csv_text(&PER_LANGUAGE_HEADER, rows)?));

    let mut rows = Vec::new();
    let mut push_group = |dim: &str, mean: Vec<GroupStat>, med: Vec<GroupStat>, std: Vec<GroupStat>| {
        for ((m, d), s) in mean.iter().zip(&med).zip(&std) {
            rows.push(vec![
                dim.to_string(),
                m.group.clone(),
                m.sparsity.to_string(),
                m.strategy.to_string(),
                m.split.to_string(),
                m.n_languages.to_string(),
                f4(m.value),
                f4(d.value),
                f4(s.value),
            ]);
        }
    };
    push_group(
        "overall",
        overall_stats(records, Stat::Mean),
        overall_stats(records, Stat::Median),
        overall_stats(records, Stat::Std),
    );
    for dim in GroupDimension::ALL {
        push_group(
            dim.as_str(),
            group_stats(records, meta, dim, Stat::Mean)?,
            group_stats(records, meta, dim, Stat::Median)?,
            group_stats(records, meta, dim, Stat::Std)?,
        );
    }
    files.push(("per_group.csv".into(), csv_text(&PER_GROUP_HEADER, rows)?));

    let mut deltas = language_deltas(records);
    for dim in GroupDimension::ALL {
        deltas.extend(group_deltas(records, meta, dim)?);
    }
    let rows = deltas
        .iter()
        .map(|d| {
            vec![
                d.level.clone(),
                d.key.clone(),
                d.sparsity.to_string(),
                d.strategy.to_string(),
                d.split.to_string(),
                f4(d.dense_f1),
                f4(d.sparse_f1),
                f4(d.absolute_delta),
                opt4(d.relative_delta),
            ]
        })
        .collect();
    files.push(("deltas.csv".into(), csv_text(&DELTAS_HEADER, rows)?));

    let rows = robustness_ratios(records)
        .iter()
        .map(|r| {
            vec![
                r.language.clone(),
                r.sparsity.to_string(),
                r.strategy.to_string(),
                r.split.to_string(),
                f4(r.regular_f1),
                f4(r.perturbed_f1),
                opt4(r.ratio),
            ]
        })
        .collect();
    files.push(("ratios.csv".into(), csv_text(&RATIOS_HEADER, rows)?));

    let rows = aggregates
        .iter()
        .filter(|a| a.key.split == EvalSplit::Regular)
        .filter_map(|a| {
            let overlap = overlaps.get(&a.key.language)?;
            Some(vec![
                a.key.language.clone(),
                opt4(*overlap),
                a.key.sparsity.to_string(),
                a.key.strategy.to_string(),
                a.key.split.to_string(),
                f4(a.mean_f1),
            ])
        })
        .collect();
    files.push(("overlap_f1.csv".into(), csv_text(&OVERLAP_HEADER, rows)?));

    let cells: BTreeSet<(PruneStrategy, EvalSplit)> =
        records.iter().map(|r| (r.strategy, r.split)).collect();
    for &(strategy, split) in &cells {
        files.push((
            format!("table_{strategy}_{split}.csv"),
            pivot_table(records, strategy, split)?,
        ));
    }

    let summary = ReportSummary {
        records: records.len(),
        languages: records.iter().map(|r| r.language.clone()).collect::<BTreeSet<_>>().into_iter().collect(),
        sparsity_levels: records.iter().map(|r| r.sparsity).collect::<BTreeSet<_>>().into_iter().collect(),
        strategies: cells.iter().map(|c| c.0).collect::<BTreeSet<_>>().into_iter().collect(),
        splits: cells.iter().map(|c| c.1).collect::<BTreeSet<_>>().into_iter().collect(),
        overall_mean: overall_stats(records, Stat::Mean),
        overall_median: overall_stats(records, Stat::Median),
        files: files.iter().map(|f| f.0.clone()).collect(),
    };
    files.push(("summary.json".into(), serde_json::to_string_pretty(&summary)? + "\n"));

    let mut written = Vec::with_capacity(files.len());
    for (name, text) in files {
        let path = out_dir.join(name);
        fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}
