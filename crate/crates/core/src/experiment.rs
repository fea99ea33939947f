//! Grid orchestration: languages × sparsity levels × strategies × seeds,
//! each run evaluated on the regular test set and on every configured
//! perturbed test set.
//!
//! Corpora are read from `<corpus_root>/<lang>/train.iob2` and
//! `<corpus_root>/<lang>/test.iob2`. Output goes to
//! `<output>/<config-hash>/`:
//!
//! * `results.jsonl`: one [`RunResult`] per (run, language, split)
//! * `failures.jsonl`: runs that errored, with the message
//! * `timings.jsonl`: training wall time per run
//! * `config.json`: the resolved config
//! * `perturbed/<lang>.<scope>.iob2` and `.log.jsonl`
//! * `checkpoints/<run-id>/` when `save_checkpoints` is set

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{load_language_metadata, parse_iob2, serialize_iob2, wikiann_metadata, Corpus, MetaTable, ParseOptions, Split};
use crate::error::ExperimentError;
use crate::eval::{check_sparsity, score_corpus, EvalSplit, RunRecord};
use crate::exec::Exec;
use crate::perturb::{build_pool, perturb_corpus, PerturbationScope};
use crate::prune::{measure_sparsity, PruneSchedule, PruneStrategy};
use crate::tagger::{build_vocab, init_model, predict_with, train, TaggerConfig, TaggerModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Monolingual,
    Multilingual,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Monolingual => "monolingual",
            Mode::Multilingual => "multilingual",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "monolingual" => Ok(Mode::Monolingual),
            "multilingual" => Ok(Mode::Multilingual),
            _ => Err(format!("unknown mode `{s}`")),
        }
    }
}

/// One row of the pruning schedule table, keyed by training-set size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub train_size: u32,
    pub start: u64,
    pub end: u64,
    pub frequency: u64,
}

/// Pruning start, end and frequency (in steps) per fine-tuning size.
pub fn default_schedule_table() -> Vec<ScheduleEntry> {
    [
        (100, 10, 60, 10),
        (1000, 100, 300, 50),
        (5000, 500, 1200, 100),
        (10000, 500, 1200, 100),
        (15000, 700, 1800, 150),
        (20000, 1000, 2400, 200),
    ]
    .into_iter()
    .map(|(train_size, start, end, frequency)| ScheduleEntry {
        train_size,
        start,
        end,
        frequency,
    })
    .collect()
}

/// The entry for `train_size`: an exact match, else the largest size below
/// it, else the smallest entry.
pub fn schedule_for(table: &[ScheduleEntry], train_size: u32) -> Option<ScheduleEntry> {
    table
        .iter()
        .filter(|e| e.train_size <= train_size)
        .max_by_key(|e| e.train_size)
        .or_else(|| table.iter().min_by_key(|e| e.train_size))
        .copied()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus_root: PathBuf,
    /// Language metadata CSV; the bundled WikiAnn table when absent.
    #[serde(default)]
    pub metadata: Option<PathBuf>,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub languages: Vec<String>,
    #[serde(default = "default_levels")]
    pub sparsity_levels: Vec<u32>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<PruneStrategy>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub scopes: Vec<PerturbationScope>,
    #[serde(default)]
    pub perturbation_seed: u64,
    #[serde(default)]
    pub tagger: TaggerConfig,
    #[serde(default = "default_schedule_table", rename = "schedule")]
    pub schedule_table: Vec<ScheduleEntry>,
    pub paths: Paths,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub save_checkpoints: bool,
}

fn default_levels() -> Vec<u32> {
    crate::eval::SPARSITY_LEVELS.to_vec()
}

fn default_strategies() -> Vec<PruneStrategy> {
    vec![PruneStrategy::Partial, PruneStrategy::InclEmbeddings]
}

fn default_workers() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn from_file(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.paths.corpus_root);
        resolve(&mut config.paths.output);
        if let Some(m) = config.paths.metadata.as_mut() {
            resolve(m);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |m: &str| Err(ExperimentError::Config(m.to_string()));
        if self.languages.is_empty() {
            return fail("languages must not be empty");
        }
        if self.languages.iter().collect::<BTreeSet<_>>().len() != self.languages.len() {
            return fail("languages contain duplicates");
        }
        if self.seeds.is_empty() {
            return fail("seeds must not be empty");
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return fail("seeds contain duplicates");
        }
        if self.strategies.is_empty() {
            return fail("strategies must not be empty");
        }
        if self.sparsity_levels.is_empty() {
            return fail("sparsity_levels must not be empty");
        }
        for &level in &self.sparsity_levels {
            check_sparsity(level)?;
        }
        if self.sparsity_levels.windows(2).any(|w| w[0] >= w[1]) {
            return fail("sparsity_levels must be strictly ascending");
        }
        if self.schedule_table.is_empty() && self.sparsity_levels.iter().any(|&l| l > 0) {
            return fail("schedule table is empty");
        }
        for e in &self.schedule_table {
            PruneSchedule::new(e.start, e.end, e.frequency, 0.5)
                .map_err(|err| ExperimentError::Config(format!("schedule for {}: {err}", e.train_size)))?;
        }
        self.tagger.validate()?;
        Ok(())
    }

    pub fn metadata(&self) -> Result<MetaTable, ExperimentError> {
        match &self.paths.metadata {
            None => Ok(wikiann_metadata()),
            Some(path) => {
                let text = read(path)?;
                load_language_metadata(&text).map_err(|source| ExperimentError::Corpus {
                    path: path.clone(),
                    source,
                })
            }
        }
    }

    pub fn corpus_path(&self, language: &str, split: Split) -> PathBuf {
        let file = match split {
            Split::Train => "train.iob2",
            Split::Dev => "dev.iob2",
            Split::Test => "test.iob2",
        };
        self.paths.corpus_root.join(language).join(file)
    }

    /// Everything that determines the results, hashed: the config minus
    /// paths and execution settings, plus the bytes of the metadata and
    /// every corpus file.
    pub fn hash(&self) -> Result<String, ExperimentError> {
        let mut identity = self.clone();
        identity.paths = Paths {
            corpus_root: PathBuf::new(),
            metadata: None,
            output: PathBuf::new(),
        };
        identity.workers = 0;
        identity.save_checkpoints = false;
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&identity)?);
        h.update(write_meta_bytes(&self.metadata()?));
        for lang in &self.languages {
            for split in [Split::Train, Split::Test] {
                let path = self.corpus_path(lang, split);
                h.update(path_tag(lang, split));
                h.update(read(&path)?.as_bytes());
            }
        }
        let digest = h.finalize();
        Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
    }
}

fn path_tag(lang: &str, split: Split) -> Vec<u8> {
    format!("\0{lang}/{split:?}\0").into_bytes()
}

fn write_meta_bytes(meta: &MetaTable) -> Vec<u8> {
    crate::corpus::write_language_metadata(meta).into_bytes()
}

fn read(path: &Path) -> Result<String, ExperimentError> {
    fs::read_to_string(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// One training run. In multilingual mode `train_languages` lists every
/// language and the run is evaluated on each of them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunDescriptor {
    pub run_id: String,
    pub mode: Mode,
    pub train_languages: Vec<String>,
    pub sparsity: u32,
    pub strategy: PruneStrategy,
    pub seed: u64,
    /// `None` for dense runs.
    pub schedule: Option<ScheduleEntry>,
}

impl RunDescriptor {
    pub fn prune_schedule(&self) -> Option<PruneSchedule> {
        self.schedule.map(|e| {
            PruneSchedule::new(e.start, e.end, e.frequency, f64::from(self.sparsity) / 100.0)
                .expect("validated with the config")
        })
    }
}

/// Runs in grid order: language (monolingual only), sparsity, strategy,
/// seed. Fails on languages missing from metadata and on missing corpus
/// files.
pub fn plan(config: &ExperimentConfig) -> Result<Vec<RunDescriptor>, ExperimentError> {
    config.validate()?;
    let meta = config.metadata()?;
    for lang in &config.languages {
        if !meta.contains_key(lang) {
            return Err(ExperimentError::UnknownLanguage(lang.clone()));
        }
        for split in [Split::Train, Split::Test] {
            let path = config.corpus_path(lang, split);
            if !path.is_file() {
                return Err(ExperimentError::MissingCorpus(path));
            }
        }
    }
    let groups: Vec<(String, Vec<String>, u32)> = match config.mode {
        Mode::Monolingual => config
            .languages
            .iter()
            .map(|l| (l.clone(), vec![l.clone()], meta[l].train_size))
            .collect(),
        Mode::Multilingual => {
            let total = config.languages.iter().map(|l| meta[l].train_size).sum();
            vec![("multi".to_string(), config.languages.clone(), total)]
        }
    };
    let mut out = Vec::new();
    for (label, langs, size) in &groups {
        for &sparsity in &config.sparsity_levels {
            for &strategy in &config.strategies {
                for &seed in &config.seeds {
                    out.push(RunDescriptor {
                        run_id: format!("{label}-s{sparsity}-{strategy}-seed{seed}"),
                        mode: config.mode,
                        train_languages: langs.clone(),
                        sparsity,
                        strategy,
                        seed,
                        schedule: if sparsity == 0 {
                            None
                        } else {
                            schedule_for(&config.schedule_table, *size)
                        },
                    });
                }
            }
        }
    }
    Ok(out)
}

/// A [`RunRecord`] with provenance; serialized flat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub config_hash: String,
    pub mode: Mode,
    #[serde(flatten)]
    pub record: RunRecord,
    pub schedule: Option<ScheduleEntry>,
    pub achieved_sparsity: f64,
    /// Weights eligible for pruning under the run's strategy.
    pub prunable_weights: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunTiming {
    run_id: String,
    train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub results_path: PathBuf,
    pub planned: usize,
    pub skipped: usize,
    pub completed: usize,
    pub failed: usize,
}

struct Prepared {
    hash: String,
    train: BTreeMap<String, Corpus>,
    test: BTreeMap<String, Corpus>,
    perturbed: BTreeMap<(String, PerturbationScope), Corpus>,
}

fn load_corpus(config: &ExperimentConfig, lang: &str, split: Split) -> Result<Corpus, ExperimentError> {
    let path = config.corpus_path(lang, split);
    let text = read(&path)?;
    parse_iob2(&text, lang, split, ParseOptions::default())
        .map_err(|source| ExperimentError::Corpus { path, source })
}

/// Loads corpora and builds every perturbed test set once. Pools come from
/// the test splits of the configured languages.
fn prepare(config: &ExperimentConfig, dir: &Path) -> Result<Prepared, ExperimentError> {
    let meta = config.metadata()?;
    let mut train = BTreeMap::new();
    let mut test = BTreeMap::new();
    for lang in &config.languages {
        train.insert(lang.clone(), load_corpus(config, lang, Split::Train)?);
        test.insert(lang.clone(), load_corpus(config, lang, Split::Test)?);
    }
    let test_list: Vec<Corpus> = config.languages.iter().map(|l| test[l].clone()).collect();
    let pdir = dir.join("perturbed");
    if !config.scopes.is_empty() {
        create_dir(&pdir)?;
    }
    let mut perturbed = BTreeMap::new();
    for &scope in &config.scopes {
        for lang in &config.languages {
            let key = scope
                .group_key(lang, &meta)
                .ok_or_else(|| ExperimentError::UnknownLanguage(lang.clone()))?;
            let pool = build_pool(&test_list, &meta, scope, &key)?;
            let (corpus, log) = perturb_corpus(&test[lang], &pool, config.perturbation_seed);
            write_file(&pdir.join(format!("{lang}.{scope}.iob2")), &serialize_iob2(&corpus))?;
            write_file(&pdir.join(format!("{lang}.{scope}.log.jsonl")), &log.to_jsonl())?;
            perturbed.insert((lang.clone(), scope), corpus);
        }
    }
    Ok(Prepared {
        hash: String::new(),
        train,
        test,
        perturbed,
    })
}

fn create_dir(path: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), ExperimentError> {
    fs::write(path, text).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn append_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<(), ExperimentError> {
    if items.is_empty() {
        return Ok(());
    }
    let mut buf = String::new();
    for item in items {
        buf.push_str(&serde_json::to_string(item)?);
        buf.push('\n');
    }
    let io = |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    f.write_all(buf.as_bytes()).map_err(io)
}

fn read_ids(path: &Path) -> Result<HashSet<String>, ExperimentError> {
    #[derive(Deserialize)]
    struct Id {
        run_id: String,
    }
    if !path.exists() {
        return Ok(HashSet::new());
    }
    read(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str::<Id>(l)?.run_id))
        .collect()
}

/// Trains one run and scores it on every evaluation split.
pub fn execute_run(
    desc: &RunDescriptor,
    tagger: &TaggerConfig,
    train_sets: &[Corpus],
    eval_sets: &[(String, EvalSplit, &Corpus)],
    config_hash: &str,
) -> Result<(TaggerModel, Vec<RunResult>, f64), ExperimentError> {
    let config = TaggerConfig {
        seed: desc.seed,
        ..tagger.clone()
    };
    let vocab = build_vocab(train_sets, config.vocab_min_count);
    let mut model = init_model(&config, vocab)?;
    let schedule = desc.prune_schedule();
    let started = Instant::now();
    train(&mut model, train_sets, schedule.as_ref(), desc.strategy)?;
    let seconds = started.elapsed().as_secs_f64();
    let achieved = measure_sparsity(&model.params, desc.strategy).map_err(crate::error::TaggerError::from)?;
    let prunable = model
        .params
        .iter()
        .filter(|p| desc.strategy.prunes(p.role()))
        .map(|p| p.len())
        .sum();
    let mut results = Vec::with_capacity(eval_sets.len());
    for (lang, split, corpus) in eval_sets {
        let predicted = predict_with(&model, corpus, Exec::Sequential);
        let report = score_corpus(corpus, &predicted)?;
        results.push(RunResult {
            run_id: desc.run_id.clone(),
            config_hash: config_hash.to_string(),
            mode: desc.mode,
            record: RunRecord::new(lang.clone(), desc.sparsity, desc.strategy, desc.seed, *split, &report)?,
            schedule: desc.schedule,
            achieved_sparsity: achieved,
            prunable_weights: prunable,
        });
    }
    Ok((model, results, seconds))
}

/// Runs the whole grid, appending to `<output>/<hash>/results.jsonl`.
/// Runs already present in the results (or recorded as failures) are
/// skipped. Runs execute `workers` at a time; their records are appended in
/// plan order.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentOutcome, ExperimentError> {
    run_with(config, Exec::default())
}

pub fn run_with(config: &ExperimentConfig, exec: Exec) -> Result<ExperimentOutcome, ExperimentError> {
    let descriptors = plan(config)?;
    let hash = config.hash()?;
    let dir = config.paths.output.join(&hash);
    create_dir(&dir)?;
    write_file(&dir.join("config.json"), &serde_json::to_string_pretty(config)?)?;
    let results_path = dir.join("results.jsonl");
    let failures_path = dir.join("failures.jsonl");
    let timings_path = dir.join("timings.jsonl");

    let mut done = read_ids(&results_path)?;
    done.extend(read_ids(&failures_path)?);
    let pending: Vec<&RunDescriptor> = descriptors.iter().filter(|d| !done.contains(&d.run_id)).collect();
    let mut outcome = ExperimentOutcome {
        results_path: results_path.clone(),
        planned: descriptors.len(),
        skipped: descriptors.len() - pending.len(),
        completed: 0,
        failed: 0,
    };
    if pending.is_empty() {
        return Ok(outcome);
    }

    let mut prepared = prepare(config, &dir)?;
    prepared.hash = hash;
    let prepared = &prepared;
    let workers = config.workers.max(1);
    for chunk in pending.chunks(workers) {
        let outputs = exec.with_workers(workers, || {
            exec.map(chunk, |desc| run_one(config, prepared, &dir, desc))
        });
        let mut results = Vec::new();
        let mut failures = Vec::new();
        let mut timings = Vec::new();
        for (desc, output) in chunk.iter().zip(outputs) {
            match output {
                Ok((r, seconds)) => {
                    results.extend(r);
                    timings.push(RunTiming {
                        run_id: desc.run_id.clone(),
                        train_seconds: seconds,
                    });
                    outcome.completed += 1;
                }
                Err(e) => {
                    failures.push(RunFailure {
                        run_id: desc.run_id.clone(),
                        error: e.to_string(),
                    });
                    outcome.failed += 1;
                }
            }
        }
        append_lines(&results_path, &results)?;
        append_lines(&failures_path, &failures)?;
        append_lines(&timings_path, &timings)?;
    }
    Ok(outcome)
}

fn run_one(
    config: &ExperimentConfig,
    prepared: &Prepared,
    dir: &Path,
    desc: &RunDescriptor,
) -> Result<(Vec<RunResult>, f64), ExperimentError> {
    let train_sets: Vec<Corpus> = desc
        .train_languages
        .iter()
        .map(|l| prepared.train[l].clone())
        .collect();
    let mut eval_sets = Vec::new();
    for lang in &desc.train_languages {
        eval_sets.push((lang.clone(), EvalSplit::Regular, &prepared.test[lang]));
        for &scope in &config.scopes {
            eval_sets.push((
                lang.clone(),
                EvalSplit::perturbed(scope),
                &prepared.perturbed[&(lang.clone(), scope)],
            ));
        }
    }
    let (model, results, seconds) = execute_run(desc, &config.tagger, &train_sets, &eval_sets, &prepared.hash)?;
    if config.save_checkpoints {
        model.save(&dir.join("checkpoints").join(&desc.run_id), desc.strategy)?;
    }
    Ok((results, seconds))
}

/// Reads `results.jsonl` as written by [`run`].
pub fn load_results(path: &Path) -> Result<Vec<RunResult>, ExperimentError> {
    read(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
