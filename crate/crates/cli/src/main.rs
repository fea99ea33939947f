use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sparse_ner::analysis::{
    emit_report, f1_by_language, multilingual_gain, pivot_table, tau_against_train_size,
    OverlapTable,
};
use sparse_ner::corpus::{
    entity_overlap, extract_entities, load_language_metadata, parse_iob2, serialize_iob2,
    wikiann_metadata, Corpus, MetaTable, ParseOptions, Split,
};
use sparse_ner::eval::{check_sparsity, records_from_jsonl, score_corpus, EvalSplit, RunRecord};
use sparse_ner::experiment::{default_schedule_table, run_with, schedule_for, ExperimentConfig};
use sparse_ner::perturb::{build_pool, perturb_corpus, PerturbationScope};
use sparse_ner::prune::{PruneSchedule, PruneStrategy};
use sparse_ner::tagger::{build_vocab, init_model, predict, train, TaggerConfig, TaggerModel};
use sparse_ner::{EntityType, Exec};

/// Pruned multilingual NER experiments: corpora, perturbation, training,
/// evaluation and analysis.
#[derive(Debug, Parser)]
#[command(name = "sparse-ner", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check IOB2 files and print sentence, token and mention counts.
    Validate(ValidateArgs),
    /// Write entity-replaced copies of test corpora.
    Perturb(PerturbArgs),
    /// Train one tagger, optionally pruning it during training.
    Train(TrainArgs),
    /// Score a trained tagger on test corpora and print JSON-lines records.
    Evaluate(EvaluateArgs),
    /// Run a full experiment grid from a TOML config.
    Experiment(ExperimentArgs),
    /// Write CSV/JSON report tables from results JSON-lines.
    Analyze(AnalyzeArgs),
    /// Print a languages × sparsity F1 table, and multilingual gains when
    /// monolingual results are given.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// IOB2 files to check.
    #[arg(required = true)]
    corpora: Vec<PathBuf>,
    /// Remove a leading `<lang>:` from every token.
    #[arg(long)]
    strip_lang_prefix: bool,
    /// Language code used for prefix stripping (default: file stem).
    #[arg(long)]
    lang: Option<String>,
}

#[derive(Debug, Args)]
struct PerturbArgs {
    /// Replacement pool scope: in-language, in-script or in-family.
    #[arg(long)]
    scope: PerturbationScope,
    /// Random seed for the replacement draws.
    #[arg(long)]
    seed: u64,
    /// Language metadata CSV (default: bundled WikiAnn table).
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Test corpora as `lang=path`, or `path` with the language taken from
    /// the file stem.
    #[arg(required = true)]
    corpora: Vec<String>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Embedding width.
    #[arg(long, default_value_t = 32)]
    embed_dim: usize,
    /// Context tokens on each side.
    #[arg(long, default_value_t = 2)]
    window: usize,
    /// Hidden layer width.
    #[arg(long, default_value_t = 64)]
    hidden_dim: usize,
    /// SGD step size.
    #[arg(long, default_value_t = 7e-5)]
    learning_rate: f64,
    /// Passes over the training data.
    #[arg(long, default_value_t = 60)]
    epochs: usize,
    /// Sentences per minibatch.
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    /// Tokens seen fewer times map to <unk>.
    #[arg(long, default_value_t = 1)]
    vocab_min_count: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training corpora as `lang=path` or `path`; several make a joint model.
    #[arg(long = "train", required = true)]
    train: Vec<String>,
    /// Seed for initialisation and shuffling.
    #[arg(long)]
    seed: u64,
    /// Target sparsity in percent: 0, 50, 70, 80, 90, 95 or 98.
    #[arg(long, default_value_t = 0)]
    sparsity: u32,
    /// partial or incl-embeddings.
    #[arg(long, default_value = "partial")]
    strategy: PruneStrategy,
    /// Pruning schedule as `start,end,frequency` (default: looked up by
    /// training size).
    #[arg(long)]
    schedule: Option<String>,
    /// Language metadata CSV used for the schedule lookup.
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Checkpoint directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Test corpora as `lang=path` or `path`.
    #[arg(long = "test", required = true)]
    test: Vec<String>,
    /// Split label recorded with the scores.
    #[arg(long, default_value = "regular")]
    split: EvalSplit,
    /// Append records to this file instead of printing them.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Runs trained concurrently (overrides the config).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Results JSON-lines files.
    #[arg(long = "results", required = true)]
    results: Vec<PathBuf>,
    /// Language metadata CSV (default: bundled WikiAnn table).
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Corpus root with `<lang>/train.iob2` and `<lang>/test.iob2`, for
    /// entity-overlap columns.
    #[arg(long)]
    corpus_root: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Results JSON-lines (multilingual results when --mono is given).
    #[arg(long)]
    results: PathBuf,
    /// Monolingual results to compute multilingual gains against.
    #[arg(long)]
    mono: Option<PathBuf>,
    /// Strategy whose rows are shown.
    #[arg(long, default_value = "partial")]
    strategy: PruneStrategy,
    /// Evaluation split whose rows are shown.
    #[arg(long, default_value = "regular")]
    split: EvalSplit,
    /// Language metadata CSV for the gain/train-size correlation.
    #[arg(long)]
    meta: Option<PathBuf>,
}

/// Problems with the invocation itself (exit 1) as opposed to data errors
/// (exit 2).
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Validate(a) => validate(a),
        Command::Perturb(a) => perturb(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Experiment(a) => experiment(a),
        Command::Analyze(a) => analyze(a),
        Command::Report(a) => report(a),
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_meta(path: Option<&Path>) -> anyhow::Result<MetaTable> {
    match path {
        None => Ok(wikiann_metadata()),
        Some(p) => load_language_metadata(&read(p)?).with_context(|| p.display().to_string()),
    }
}

fn stem(path: &Path) -> anyhow::Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(|s| s.split('.').next().unwrap_or(s).to_string())
        .filter(|s| !s.is_empty())
        .ok_or_else(|| usage(format!("cannot infer a language from {}", path.display())))
}

/// Parses `lang=path` or `path`.
fn corpus_arg(arg: &str) -> anyhow::Result<(String, PathBuf)> {
    match arg.split_once('=') {
        Some((lang, path)) if !lang.is_empty() && !path.is_empty() => {
            Ok((lang.to_string(), PathBuf::from(path)))
        }
        Some(_) => Err(usage(format!("expected lang=path, got `{arg}`"))),
        None => {
            let path = PathBuf::from(arg);
            Ok((stem(&path)?, path))
        }
    }
}

fn load_corpus(lang: &str, path: &Path, split: Split) -> anyhow::Result<Corpus> {
    parse_iob2(&read(path)?, lang, split, ParseOptions::default())
        .with_context(|| path.display().to_string())
}

fn validate(a: ValidateArgs) -> anyhow::Result<()> {
    let mut failed = 0;
    for path in &a.corpora {
        let lang = match &a.lang {
            Some(l) => l.clone(),
            None => stem(path)?,
        };
        let options = ParseOptions {
            strip_lang_prefix: a.strip_lang_prefix,
        };
        let parsed = read(path).and_then(|text| Ok(parse_iob2(&text, &lang, Split::Test, options)?));
        match parsed {
            Ok(c) => {
                let mut by_type: BTreeMap<EntityType, usize> = EntityType::ALL.iter().map(|t| (*t, 0)).collect();
                let mut mentions = 0;
                for s in &c.sentences {
                    for m in extract_entities(s) {
                        *by_type.entry(m.etype).or_default() += 1;
                        mentions += 1;
                    }
                }
                let types: Vec<String> = by_type.iter().map(|(t, n)| format!("{t} {n}")).collect();
                println!(
                    "{}: ok, {} sentences, {} tokens, {} mentions ({})",
                    path.display(),
                    c.len(),
                    c.token_count(),
                    mentions,
                    types.join(", ")
                );
            }
            Err(e) => {
                failed += 1;
                println!("{}: {e:#}", path.display());
            }
        }
    }
    if failed > 0 {
        bail!("{failed} of {} files failed validation", a.corpora.len());
    }
    Ok(())
}

fn perturb(a: PerturbArgs) -> anyhow::Result<()> {
    let meta = load_meta(a.meta.as_deref())?;
    let mut corpora = Vec::new();
    for arg in &a.corpora {
        let (lang, path) = corpus_arg(arg)?;
        if corpora.iter().any(|c: &Corpus| c.language == lang) {
            return Err(usage(format!("language `{lang}` given twice")));
        }
        corpora.push(load_corpus(&lang, &path, Split::Test)?);
    }
    fs::create_dir_all(&a.out).with_context(|| a.out.display().to_string())?;
    for corpus in &corpora {
        let key = a
            .scope
            .group_key(&corpus.language, &meta)
            .ok_or_else(|| anyhow!("language `{}` is missing from metadata", corpus.language))?;
        let pool = build_pool(&corpora, &meta, a.scope, &key)?;
        let (out, log) = perturb_corpus(corpus, &pool, a.seed);
        let base = format!("{}.{}", corpus.language, a.scope);
        fs::write(a.out.join(format!("{base}.iob2")), serialize_iob2(&out))?;
        fs::write(a.out.join(format!("{base}.log.jsonl")), log.to_jsonl())?;
        println!(
            "{}: {} of {} mentions replaced",
            corpus.language,
            log.replaced(),
            log.records.len()
        );
    }
    Ok(())
}

fn parse_schedule(text: &str, target: f64) -> anyhow::Result<PruneSchedule> {
    let parts: Vec<u64> = text
        .split(',')
        .map(|p| p.trim().parse::<u64>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("schedule must be start,end,frequency, got `{text}`")))?;
    let [start, end, frequency] = parts[..] else {
        return Err(usage(format!("schedule must be start,end,frequency, got `{text}`")));
    };
    PruneSchedule::new(start, end, frequency, target).map_err(|e| usage(e.to_string()))
}

const RUN_FILE: &str = "run.json";

fn train_cmd(a: TrainArgs) -> anyhow::Result<()> {
    check_sparsity(a.sparsity).map_err(|e| usage(e.to_string()))?;
    let m = &a.model;
    let config = TaggerConfig {
        embed_dim: m.embed_dim,
        window: m.window,
        hidden_dim: m.hidden_dim,
        learning_rate: m.learning_rate,
        epochs: m.epochs,
        batch_size: m.batch_size,
        seed: a.seed,
        vocab_min_count: m.vocab_min_count,
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let mut corpora = Vec::new();
    for arg in &a.train {
        let (lang, path) = corpus_arg(arg)?;
        corpora.push(load_corpus(&lang, &path, Split::Train)?);
    }
    let target = f64::from(a.sparsity) / 100.0;
    let schedule = match (a.sparsity, &a.schedule) {
        (0, _) => None,
        (_, Some(text)) => Some(parse_schedule(text, target)?),
        (_, None) => {
            let meta = load_meta(a.meta.as_deref())?;
            let size: u32 = corpora
                .iter()
                .map(|c| meta.get(&c.language).map_or(c.len() as u32, |m| m.train_size))
                .sum();
            let e = schedule_for(&default_schedule_table(), size).expect("table is non-empty");
            Some(PruneSchedule::new(e.start, e.end, e.frequency, target)?)
        }
    };
    let vocab = build_vocab(&corpora, config.vocab_min_count);
    let mut model = init_model(&config, vocab)?;
    let history = train(&mut model, &corpora, schedule.as_ref(), a.strategy)?;
    model.save(&a.out, a.strategy)?;
    let languages: Vec<&str> = corpora.iter().map(|c| c.language.as_str()).collect();
    let run = json!({
        "languages": languages,
        "sparsity": a.sparsity,
        "strategy": a.strategy,
        "seed": a.seed,
        "schedule": schedule,
        "achieved_sparsity": history.final_sparsity(),
    });
    fs::write(a.out.join(RUN_FILE), serde_json::to_string_pretty(&run)? + "\n")?;
    fs::write(a.out.join("history.json"), serde_json::to_string(&history)? + "\n")?;
    println!(
        "trained {} steps, final loss {:.4}, sparsity {:.4}; saved to {}",
        history.total_steps,
        history.epoch_losses.last().copied().unwrap_or(0.0),
        history.final_sparsity(),
        a.out.display()
    );
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    let model = TaggerModel::load(&a.model).with_context(|| a.model.display().to_string())?;
    let run: serde_json::Value = serde_json::from_str(&read(&a.model.join(RUN_FILE))?)?;
    let sparsity = run["sparsity"].as_u64().ok_or_else(|| anyhow!("run.json lacks sparsity"))? as u32;
    let strategy: PruneStrategy = serde_json::from_value(run["strategy"].clone())?;
    let mut records = Vec::new();
    for arg in &a.test {
        let (lang, path) = corpus_arg(arg)?;
        let corpus = load_corpus(&lang, &path, Split::Test)?;
        let report = score_corpus(&corpus, &predict(&model, &corpus))?;
        records.push(RunRecord::new(lang, sparsity, strategy, model.config.seed, a.split, &report)?);
    }
    let text = sparse_ner::eval::records_to_jsonl(&records);
    match &a.out {
        None => print!("{text}"),
        Some(path) => {
            use std::io::Write;
            fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .and_then(|mut f| f.write_all(text.as_bytes()))
                .with_context(|| path.display().to_string())?;
        }
    }
    Ok(())
}

fn experiment(a: ExperimentArgs) -> anyhow::Result<()> {
    let mut config = ExperimentConfig::from_file(&a.config)?;
    if let Some(w) = a.workers {
        if w == 0 {
            return Err(usage("--workers must be at least 1"));
        }
        config.workers = w;
    }
    let out = run_with(&config, Exec::default())?;
    println!(
        "{} runs planned, {} already done, {} completed, {} failed; results in {}",
        out.planned,
        out.skipped,
        out.completed,
        out.failed,
        out.results_path.display()
    );
    Ok(())
}

fn load_records(paths: &[PathBuf]) -> anyhow::Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(records_from_jsonl(&read(p)?).with_context(|| p.display().to_string())?);
    }
    Ok(out)
}

fn analyze(a: AnalyzeArgs) -> anyhow::Result<()> {
    let records = load_records(&a.results)?;
    let meta = load_meta(a.meta.as_deref())?;
    let mut overlaps = OverlapTable::new();
    if let Some(root) = &a.corpus_root {
        let languages: std::collections::BTreeSet<&str> = records.iter().map(|r| r.language.as_str()).collect();
        for lang in languages {
            let train = load_corpus(lang, &root.join(lang).join("train.iob2"), Split::Train)?;
            let test = load_corpus(lang, &root.join(lang).join("test.iob2"), Split::Test)?;
            overlaps.insert(lang.to_string(), entity_overlap(&train, &test));
        }
    }
    let files = emit_report(&records, &meta, &overlaps, &a.out)?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn report(a: ReportArgs) -> anyhow::Result<()> {
    let multi = load_records(std::slice::from_ref(&a.results))?;
    print!("{}", pivot_table(&multi, a.strategy, a.split)?);
    let Some(mono_path) = &a.mono else {
        return Ok(());
    };
    let mono = load_records(std::slice::from_ref(mono_path))?;
    let meta = load_meta(a.meta.as_deref())?;
    let levels: std::collections::BTreeSet<u32> = mono.iter().map(|r| r.sparsity).collect();
    println!();
    println!("sparsity,language,gain");
    let mut taus = Vec::new();
    for s in levels {
        let gain = multilingual_gain(
            &f1_by_language(&multi, s, a.strategy, a.split),
            &f1_by_language(&mono, s, a.strategy, a.split),
        );
        for (lang, g) in &gain {
            println!("{s},{lang},{g:.4}");
        }
        let tau = match tau_against_train_size(&gain, &meta) {
            Ok(t) => format!("{t:.4}"),
            Err(_) => String::new(),
        };
        taus.push((s, tau));
    }
    println!();
    println!("sparsity,kendall_tau_gain_vs_train_size");
    for (s, t) in taus {
        println!("{s},{t}");
    }
    Ok(())
}
