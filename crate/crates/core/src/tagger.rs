//! A window-based feed-forward tagger trained with minibatch SGD.
//!
//! Each token is represented by the concatenated embeddings of itself and
//! `window` neighbours on either side (padded at sentence edges), passed
//! through one ReLU hidden layer and a linear output layer over the seven
//! IOB2 tags. All weights live in [`ParamTensor`]s so they can be pruned
//! during training.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Sentence, Tag};
use crate::error::TaggerError;
use crate::exec::Exec;
use crate::prune::{
    apply_masks, compute_masks, load_checkpoint, measure_sparsity, save_checkpoint,
    ParamTensor, PruneSchedule, PruneStrategy, TensorRole, ThresholdScope,
};

pub const NUM_TAGS: usize = Tag::ALL.len();
pub const UNK: usize = 0;
pub const PAD: usize = 1;
const UNK_TOKEN: &str = "<unk>";
const PAD_TOKEN: &str = "<pad>";

const EMB: usize = 0;
const W1: usize = 1;
const B1: usize = 2;
const W2: usize = 3;
const B2: usize = 4;

pub const PARAM_NAMES: [&str; 5] = [
    "emb.weight",
    "hidden.weight",
    "hidden.bias",
    "output.weight",
    "output.bias",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaggerConfig {
    pub embed_dim: usize,
    /// Context tokens on each side.
    pub window: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub vocab_min_count: usize,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            window: 2,
            hidden_dim: 64,
            learning_rate: 7e-5,
            epochs: 60,
            batch_size: 8,
            seed: 0,
            vocab_min_count: 1,
        }
    }
}

impl TaggerConfig {
    pub fn validate(&self) -> Result<(), TaggerError> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("vocab_min_count", self.vocab_min_count),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(TaggerError::Config(format!("{name} must be at least 1")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TaggerError::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }

    fn input_dim(&self) -> usize {
        (2 * self.window + 1) * self.embed_dim
    }
}

/// Fine-tuning batch size by training-set size: 8 up to 1000 sentences,
/// 16 above.
pub fn batch_size_for(train_size: usize) -> usize {
    if train_size <= 1000 {
        8
    } else {
        16
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, TaggerError> {
        if tokens.first().map(String::as_str) != Some(UNK_TOKEN)
            || tokens.get(1).map(String::as_str) != Some(PAD_TOKEN)
        {
            return Err(TaggerError::Config("vocab must start with <unk>, <pad>".into()));
        }
        let index: HashMap<String, usize> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        if index.len() != tokens.len() {
            return Err(TaggerError::Config("vocab has duplicate tokens".into()));
        }
        Ok(Self { tokens, index })
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }
}

/// Tokens seen at least `min_count` times, most frequent first (ties in
/// lexicographic order), after the reserved `<unk>` and `<pad>`.
pub fn build_vocab(corpora: &[Corpus], min_count: usize) -> Vocab {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for c in corpora {
        for s in &c.sentences {
            for t in &s.tokens {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(t, n)| *n >= min_count && *t != UNK_TOKEN && *t != PAD_TOKEN)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let tokens = [UNK_TOKEN, PAD_TOKEN]
        .into_iter()
        .chain(kept.into_iter().map(|(t, _)| t))
        .map(String::from)
        .collect();
    Vocab::from_tokens(tokens).expect("reserved entries are present")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggerModel {
    pub config: TaggerConfig,
    pub vocab: Vocab,
    pub params: Vec<ParamTensor>,
}

/// Weights uniform in [-0.1, 0.1] from the config seed, zero biases, full
/// masks.
pub fn init_model(config: &TaggerConfig, vocab: Vocab) -> Result<TaggerModel, TaggerError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut uniform = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-0.1..=0.1)).collect() };
    let (v, d, h, i) = (vocab.len(), config.embed_dim, config.hidden_dim, config.input_dim());
    let params = vec![
        ParamTensor::new(PARAM_NAMES[EMB], vec![v, d], TensorRole::Embedding, uniform(v * d))?,
        ParamTensor::new(PARAM_NAMES[W1], vec![i, h], TensorRole::Dense, uniform(i * h))?,
        ParamTensor::zeros(PARAM_NAMES[B1], vec![h], TensorRole::Excluded),
        ParamTensor::new(PARAM_NAMES[W2], vec![h, NUM_TAGS], TensorRole::Dense, uniform(h * NUM_TAGS))?,
        ParamTensor::zeros(PARAM_NAMES[B2], vec![NUM_TAGS], TensorRole::Excluded),
    ];
    Ok(TaggerModel {
        config: config.clone(),
        vocab,
        params,
    })
}

/// Per-token activations kept for the backward pass.
struct TokenCache {
    context: Vec<usize>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    logits: [f64; NUM_TAGS],
}

impl TaggerModel {
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.vocab.id(t)).collect()
    }

    fn context(&self, ids: &[usize], pos: usize) -> Vec<usize> {
        let w = self.config.window as isize;
        (-w..=w)
            .map(|off| {
                let j = pos as isize + off;
                if j < 0 || j >= ids.len() as isize {
                    PAD
                } else {
                    ids[j as usize]
                }
            })
            .collect()
    }

    fn forward_token(&self, context: Vec<usize>) -> TokenCache {
        let d = self.config.embed_dim;
        let h = self.config.hidden_dim;
        let emb = &self.params[EMB].values;
        let w1 = &self.params[W1].values;
        let w2 = &self.params[W2].values;

        let mut hidden_pre = self.params[B1].values.clone();
        for (k, &id) in context.iter().enumerate() {
            let row = &emb[id * d..(id + 1) * d];
            for (c, &x) in row.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let wrow = &w1[(k * d + c) * h..(k * d + c + 1) * h];
                for (z, &w) in hidden_pre.iter_mut().zip(wrow) {
                    *z += x * w;
                }
            }
        }
        let hidden: Vec<f64> = hidden_pre.iter().map(|z| z.max(0.0)).collect();
        let mut logits = [0.0; NUM_TAGS];
        logits.copy_from_slice(&self.params[B2].values);
        for (j, &a) in hidden.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (l, &w) in logits.iter_mut().zip(&w2[j * NUM_TAGS..(j + 1) * NUM_TAGS]) {
                *l += a * w;
            }
        }
        TokenCache {
            context,
            hidden_pre,
            hidden,
            logits,
        }
    }

    fn forward_ids(&self, ids: &[usize]) -> Vec<TokenCache> {
        (0..ids.len())
            .map(|pos| self.forward_token(self.context(ids, pos)))
            .collect()
    }

    /// Pre-softmax scores over [`Tag::ALL`] for each token.
    pub fn forward(&self, tokens: &[String]) -> Vec<[f64; NUM_TAGS]> {
        self.forward_ids(&self.encode(tokens))
            .into_iter()
            .map(|c| c.logits)
            .collect()
    }

    pub fn predict_sentence(&self, tokens: &[String]) -> Vec<Tag> {
        self.forward(tokens).iter().map(|l| Tag::ALL[argmax(l)]).collect()
    }

    fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| vec![0.0; p.len()]).collect()
    }

    /// Summed token cross-entropy over `batch`; gradients of
    /// `scale * loss` are accumulated into `grads` when given.
    fn loss_and_grad(
        &self,
        batch: &[(Vec<usize>, Vec<usize>)],
        scale: f64,
        mut grads: Option<&mut [Vec<f64>]>,
    ) -> f64 {
        let d = self.config.embed_dim;
        let h = self.config.hidden_dim;
        let w1 = &self.params[W1].values;
        let w2 = &self.params[W2].values;
        let emb = &self.params[EMB].values;
        let mut total = 0.0;
        let mut dlogits = [0.0; NUM_TAGS];
        let mut dhidden = vec![0.0; h];

        for (ids, gold) in batch {
            for (cache, &g) in self.forward_ids(ids).into_iter().zip(gold) {
                let probs = softmax(&cache.logits);
                total -= probs[g].max(f64::MIN_POSITIVE).ln();
                let Some(grads) = grads.as_deref_mut() else {
                    continue;
                };
                for (t, dl) in dlogits.iter_mut().enumerate() {
                    *dl = scale * (probs[t] - if t == g { 1.0 } else { 0.0 });
                }
                for (db, dl) in grads[B2].iter_mut().zip(&dlogits) {
                    *db += dl;
                }
                for j in 0..h {
                    let wrow = &w2[j * NUM_TAGS..(j + 1) * NUM_TAGS];
                    let a = cache.hidden[j];
                    let grow = &mut grads[W2][j * NUM_TAGS..(j + 1) * NUM_TAGS];
                    let mut acc = 0.0;
                    for t in 0..NUM_TAGS {
                        grow[t] += a * dlogits[t];
                        acc += wrow[t] * dlogits[t];
                    }
                    dhidden[j] = if cache.hidden_pre[j] > 0.0 { acc } else { 0.0 };
                }
                for (db, dz) in grads[B1].iter_mut().zip(&dhidden) {
                    *db += dz;
                }
                for (k, &id) in cache.context.iter().enumerate() {
                    for c in 0..d {
                        let row = k * d + c;
                        let x = emb[id * d + c];
                        let wrow = &w1[row * h..(row + 1) * h];
                        let grow = &mut grads[W1][row * h..(row + 1) * h];
                        let mut dx = 0.0;
                        for j in 0..h {
                            grow[j] += x * dhidden[j];
                            dx += wrow[j] * dhidden[j];
                        }
                        grads[EMB][id * d + c] += dx;
                    }
                }
            }
        }
        total
    }

    fn examples(&self, sentences: &[&Sentence]) -> Vec<(Vec<usize>, Vec<usize>)> {
        sentences
            .iter()
            .map(|s| (self.encode(&s.tokens), s.tags.iter().map(|t| t.index()).collect()))
            .collect()
    }

    /// Mean token cross-entropy over a set of sentences.
    pub fn mean_loss(&self, sentences: &[&Sentence]) -> f64 {
        let batch = self.examples(sentences);
        let n: usize = batch.iter().map(|(ids, _)| ids.len()).sum();
        if n == 0 {
            return 0.0;
        }
        self.loss_and_grad(&batch, 1.0, None) / n as f64
    }

    pub fn save(&self, dir: &Path, strategy: PruneStrategy) -> Result<(), TaggerError> {
        save_checkpoint(dir, &self.params, strategy)?;
        let sidecar = TaggerSidecar {
            config: self.config.clone(),
            tagset: Tag::ALL.iter().map(|t| t.to_string()).collect(),
            vocab: self.vocab.tokens.clone(),
        };
        fs::write(dir.join(SIDECAR_FILE), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, TaggerError> {
        let (_, params) = load_checkpoint(dir)?;
        let sidecar: TaggerSidecar = serde_json::from_str(&fs::read_to_string(dir.join(SIDECAR_FILE))?)?;
        let expected: Vec<String> = Tag::ALL.iter().map(|t| t.to_string()).collect();
        if sidecar.tagset != expected {
            return Err(TaggerError::Config(format!("unexpected tagset {:?}", sidecar.tagset)));
        }
        let vocab = Vocab::from_tokens(sidecar.vocab)?;
        let model = Self {
            config: sidecar.config,
            vocab,
            params,
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<(), TaggerError> {
        let (v, d, h, i) = (
            self.vocab.len(),
            self.config.embed_dim,
            self.config.hidden_dim,
            self.config.input_dim(),
        );
        let expected: [Vec<usize>; 5] = [vec![v, d], vec![i, h], vec![h], vec![h, NUM_TAGS], vec![NUM_TAGS]];
        let ok = self.params.len() == 5
            && self
                .params
                .iter()
                .zip(PARAM_NAMES.iter().zip(&expected))
                .all(|(p, (name, shape))| p.name() == *name && p.shape() == shape.as_slice());
        if ok {
            Ok(())
        } else {
            Err(TaggerError::Config("checkpoint tensors do not match the config".into()))
        }
    }
}

pub const SIDECAR_FILE: &str = "tagger.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TaggerSidecar {
    config: TaggerConfig,
    tagset: Vec<String>,
    vocab: Vec<String>,
}

fn softmax(logits: &[f64; NUM_TAGS]) -> [f64; NUM_TAGS] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; NUM_TAGS];
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in &mut out {
        *o /= sum;
    }
    out
}

/// Index of the largest score; the lowest index wins ties.
fn argmax(scores: &[f64; NUM_TAGS]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainStep {
    pub step: u64,
    pub epoch: usize,
    /// Mean token cross-entropy of the minibatch.
    pub loss: f64,
    pub sparsity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub steps: Vec<TrainStep>,
    /// Token-weighted mean minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub total_steps: u64,
}

impl TrainHistory {
    pub fn final_sparsity(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.sparsity)
    }
}

pub fn steps_per_epoch(sentences: usize, batch_size: usize) -> u64 {
    sentences.div_ceil(batch_size) as u64
}

pub fn train(
    model: &mut TaggerModel,
    corpora: &[Corpus],
    schedule: Option<&PruneSchedule>,
    strategy: PruneStrategy,
) -> Result<TrainHistory, TaggerError> {
    train_with_observer(model, corpora, schedule, strategy, |_, _| {})
}

/// Trains on the concatenation of `corpora`. Steps are numbered from 1; at a
/// schedule event the masks are recomputed before that step's update, and
/// masks are re-applied after every update. `observer` sees the model after
/// each step.
pub fn train_with_observer(
    model: &mut TaggerModel,
    corpora: &[Corpus],
    schedule: Option<&PruneSchedule>,
    strategy: PruneStrategy,
    mut observer: impl FnMut(&TrainStep, &TaggerModel),
) -> Result<TrainHistory, TaggerError> {
    let config = model.config.clone();
    config.validate()?;
    let sentences: Vec<&Sentence> = corpora.iter().flat_map(|c| c.sentences.iter()).collect();
    let examples = model.examples(&sentences);
    let per_epoch = steps_per_epoch(examples.len(), config.batch_size);
    let total_steps = per_epoch * config.epochs as u64;
    if let Some(s) = schedule {
        s.validate()?;
        if s.end_step > total_steps {
            return Err(TaggerError::ScheduleTooLong {
                end_step: s.end_step,
                total_steps,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = TrainHistory {
        total_steps,
        ..Default::default()
    };
    let mut grads = model.zero_grads();
    let mut step = 0u64;
    apply_masks(&mut model.params);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0usize;
        for chunk in order.chunks(config.batch_size) {
            step += 1;
            if let Some(s) = schedule.filter(|s| s.is_event(step)) {
                compute_masks(&mut model.params, s.sparsity_at(step), strategy, ThresholdScope::Global)?;
            }
            let batch: Vec<(Vec<usize>, Vec<usize>)> =
                chunk.iter().map(|&i| examples[i].clone()).collect();
            let tokens: usize = batch.iter().map(|(ids, _)| ids.len()).sum();
            let mut loss = 0.0;
            if tokens > 0 {
                grads.iter_mut().for_each(|g| g.iter_mut().for_each(|x| *x = 0.0));
                let scale = 1.0 / tokens as f64;
                loss = model.loss_and_grad(&batch, scale, Some(&mut grads)) * scale;
                for (p, g) in model.params.iter_mut().zip(&grads) {
                    for (v, dv) in p.values.iter_mut().zip(g) {
                        *v -= config.learning_rate * dv;
                    }
                }
                apply_masks(&mut model.params);
            }
            epoch_loss += loss * tokens as f64;
            epoch_tokens += tokens;
            let record = TrainStep {
                step,
                epoch,
                loss,
                sparsity: measure_sparsity(&model.params, strategy)?,
            };
            observer(&record, model);
            history.steps.push(record);
        }
        history
            .epoch_losses
            .push(if epoch_tokens > 0 { epoch_loss / epoch_tokens as f64 } else { 0.0 });
    }
    Ok(history)
}

/// Per-token argmax tags for every sentence of `corpus`.
pub fn predict(model: &TaggerModel, corpus: &Corpus) -> Vec<Vec<Tag>> {
    predict_with(model, corpus, Exec::Sequential)
}

pub fn predict_with(model: &TaggerModel, corpus: &Corpus, exec: Exec) -> Vec<Vec<Tag>> {
    exec.map(&corpus.sentences, |s| model.predict_sentence(&s.tokens))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradCheck {
    /// The loss is zero (or the sentence empty); there is nothing to check.
    Skipped,
    Checked { max_rel_error: f64, coordinates: usize },
}

impl GradCheck {
    pub fn max_rel_error(&self) -> Option<f64> {
        match self {
            GradCheck::Skipped => None,
            GradCheck::Checked { max_rel_error, .. } => Some(*max_rel_error),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub samples_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            samples_per_tensor: 100,
            seed: 0,
        }
    }
}

/// Compares analytic gradients of the mean sentence loss against central
/// differences. Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check(model: &TaggerModel, sentence: &Sentence, epsilon: f64) -> GradCheck {
    grad_check_with(
        model,
        sentence,
        GradCheckOptions {
            epsilon,
            ..Default::default()
        },
        |_| {},
    )
}

/// [`grad_check`] with explicit options; `tamper` may modify the analytic
/// gradients before comparison, which is how the check's own sensitivity is
/// tested.
pub fn grad_check_with(
    model: &TaggerModel,
    sentence: &Sentence,
    options: GradCheckOptions,
    tamper: impl FnOnce(&mut [Vec<f64>]),
) -> GradCheck {
    let batch = model.examples(&[sentence]);
    let n = sentence.len();
    if n == 0 {
        return GradCheck::Skipped;
    }
    let scale = 1.0 / n as f64;
    let mut grads = model.zero_grads();
    let loss = model.loss_and_grad(&batch, scale, Some(&mut grads)) * scale;
    if loss == 0.0 {
        return GradCheck::Skipped;
    }
    tamper(&mut grads);

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    // Only embedding rows that appear in some context window get gradient.
    let ids = &batch[0].0;
    let mut rows: Vec<usize> = (0..n).flat_map(|p| model.context(ids, p)).collect();
    rows.sort_unstable();
    rows.dedup();
    let d = model.config.embed_dim;

    let mut probe = model.clone();
    let mut max_rel: f64 = 0.0;
    let mut coordinates = 0;
    for t in 0..model.params.len() {
        let pool: Vec<usize> = if t == EMB {
            rows.iter().flat_map(|r| r * d..(r + 1) * d).collect()
        } else {
            (0..model.params[t].len()).collect()
        };
        let picks: Vec<usize> = if pool.len() <= options.samples_per_tensor {
            pool
        } else {
            pool.choose_multiple(&mut rng, options.samples_per_tensor)
                .copied()
                .collect()
        };
        for i in picks {
            let orig = probe.params[t].values[i];
            probe.params[t].values[i] = orig + options.epsilon;
            let plus = probe.loss_and_grad(&batch, 1.0, None) * scale;
            probe.params[t].values[i] = orig - options.epsilon;
            let minus = probe.loss_and_grad(&batch, 1.0, None) * scale;
            probe.params[t].values[i] = orig;
            let numeric = (plus - minus) / (2.0 * options.epsilon);
            let analytic = grads[t][i];
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            max_rel = max_rel.max((analytic - numeric).abs() / denom);
            coordinates += 1;
        }
    }
    GradCheck::Checked {
        max_rel_error: max_rel,
        coordinates,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_iob2, ParseOptions, Split};
    use crate::eval::score_corpus;

    fn corpus(text: &str) -> Corpus {
        parse_iob2(text, "xx", Split::Train, ParseOptions::default()).unwrap()
    }

    fn small_config() -> TaggerConfig {
        TaggerConfig {
            embed_dim: 4,
            window: 1,
            hidden_dim: 6,
            learning_rate: 0.5,
            epochs: 5,
            batch_size: 2,
            seed: 3,
            vocab_min_count: 1,
        }
    }

    #[test]
    fn vocab_frequency_order() {
        let c = corpus("a\tO\na\tO\nb\tO\n");
        let v = build_vocab(&[c.clone()], 2);
        assert_eq!(v.tokens(), &["<unk>", "<pad>", "a"]);
        assert_eq!(v.id("b"), UNK);
        assert_eq!(build_vocab(&[c.clone()], 1), build_vocab(&[c], 1));
        let empty = build_vocab(&[], 1);
        assert_eq!(empty.tokens(), &["<unk>", "<pad>"]);
    }

    #[test]
    fn vocab_ties_are_lexicographic() {
        let v = build_vocab(&[corpus("b\tO\na\tO\nc\tO\nc\tO\n")], 1);
        assert_eq!(v.tokens(), &["<unk>", "<pad>", "c", "a", "b"]);
    }

    #[test]
    fn init_is_seeded() {
        let c = corpus("a\tO\nb\tB-PER\n");
        let v = build_vocab(&[c], 1);
        let a = init_model(&small_config(), v.clone()).unwrap();
        let b = init_model(&small_config(), v.clone()).unwrap();
        assert_eq!(a, b);
        let mut cfg = small_config();
        cfg.seed = 4;
        let other = init_model(&cfg, v).unwrap();
        assert_ne!(a.params[EMB].values, other.params[EMB].values);
        assert!(a.params.iter().all(|p| p.masked_count() == 0));
        assert!(a.params[B1].values.iter().all(|x| *x == 0.0));
        assert!(a.params[EMB].values.iter().all(|x| x.abs() <= 0.1));
        assert_eq!(measure_sparsity(&a.params, PruneStrategy::InclEmbeddings).unwrap(), 0.0);
    }

    #[test]
    fn bad_config_rejected() {
        let v = build_vocab(&[], 1);
        let mut cfg = small_config();
        cfg.hidden_dim = 0;
        assert!(init_model(&cfg, v.clone()).is_err());
        cfg = small_config();
        cfg.learning_rate = 0.0;
        assert!(init_model(&cfg, v).is_err());
    }

    #[test]
    fn forward_edge_cases() {
        let v = build_vocab(&[corpus("a\tO\n")], 1);
        let mut m = init_model(&small_config(), v).unwrap();
        assert!(m.forward(&[]).is_empty());
        m.params[W2].values.iter_mut().for_each(|x| *x = 0.0);
        let out = m.forward(&["a".into(), "zzz".into()]);
        assert!(out.iter().all(|l| l.iter().all(|x| *x == 0.0)));
        // All-equal logits: the tie goes to O.
        assert_eq!(m.predict_sentence(&["a".into()]), vec![Tag::O]);
    }

    #[test]
    fn forward_matches_hand_arithmetic() {
        // One token, window 0, embed 2, hidden 2.
        let cfg = TaggerConfig {
            embed_dim: 2,
            window: 0,
            hidden_dim: 2,
            ..small_config()
        };
        let v = build_vocab(&[corpus("a\tO\n")], 1);
        let mut m = init_model(&cfg, v).unwrap();
        // Embedding of "a" (row 2) = [1, 2].
        m.params[EMB].values[4] = 1.0;
        m.params[EMB].values[5] = 2.0;
        // W1 = [[1, -1], [0.5, 1]] (input x hidden), b1 = [0, 0.5].
        m.params[W1].values = vec![1.0, -1.0, 0.5, 1.0];
        m.params[B1].values = vec![0.0, 0.5];
        // z = [1 + 1, -1 + 2 + 0.5] = [2, 1.5]; relu keeps both.
        let mut w2 = vec![0.0; 2 * NUM_TAGS];
        w2[0] = 1.0; // h0 -> O
        w2[NUM_TAGS + 3] = 2.0; // h1 -> B-LOC
        m.params[W2].values = w2;
        m.params[B2].values = vec![0.0, 0.0, 0.0, 0.1, 0.0, 0.0, 0.0];
        let logits = m.forward(&["a".into()]);
        assert_eq!(logits[0], [2.0, 0.0, 0.0, 3.1, 0.0, 0.0, 0.0]);
        assert_eq!(m.predict_sentence(&["a".into()]), vec![Tag::B(crate::corpus::EntityType::Loc)]);
    }

    #[test]
    fn grad_check_passes_and_detects_tampering() {
        let c = corpus("Ada\tB-PER\nLovelace\tI-PER\nin\tO\nLondon\tB-LOC\n");
        let v = build_vocab(&[c.clone()], 1);
        let m = init_model(&small_config(), v).unwrap();
        let s = &c.sentences[0];
        let ok = grad_check(&m, s, 1e-5).max_rel_error().unwrap();
        assert!(ok < 1e-4, "{ok}");
        let bad = grad_check_with(&m, s, GradCheckOptions::default(), |g| {
            g[W1].iter_mut().for_each(|x| *x *= 1.1)
        })
        .max_rel_error()
        .unwrap();
        assert!(bad > 1e-2, "{bad}");
        let empty = Sentence::new(vec![], vec![], "xx").unwrap();
        assert_eq!(grad_check(&m, &empty, 1e-5), GradCheck::Skipped);
    }

    #[test]
    fn dense_training_memorizes() {
        let text = "Ada\tB-PER\nsaw\tO\nParis\tB-LOC\n\nIBM\tB-ORG\nhired\tO\nBob\tB-PER\nSmith\tI-PER\n\n";
        let c = corpus(&text.repeat(3));
        let v = build_vocab(&[c.clone()], 1);
        let cfg = TaggerConfig {
            epochs: 40,
            ..small_config()
        };
        let mut m = init_model(&cfg, v).unwrap();
        let h = train(&mut m, &[c.clone()], None, PruneStrategy::Partial).unwrap();
        assert_eq!(h.final_sparsity(), 0.0);
        assert_eq!(h.total_steps, 3 * 40);
        assert!(h.epoch_losses.last().unwrap() < &h.epoch_losses[0]);
        let r = score_corpus(&c, &predict(&m, &c)).unwrap();
        assert_eq!(r.f1, 1.0);
    }

    #[test]
    fn schedule_past_end_is_rejected() {
        let c = corpus("a\tO\n");
        let mut m = init_model(&small_config(), build_vocab(&[c.clone()], 1)).unwrap();
        let s = PruneSchedule::new(1, 100, 1, 0.5).unwrap();
        let err = train(&mut m, &[c], Some(&s), PruneStrategy::Partial).unwrap_err();
        assert!(matches!(err, TaggerError::ScheduleTooLong { total_steps: 5, .. }));
    }

    #[test]
    fn pruned_training_hits_target() {
        let c = corpus(&"a\tB-PER\nb\tO\nc\tB-LOC\n\n".repeat(4));
        let mut m = init_model(&small_config(), build_vocab(&[c.clone()], 1)).unwrap();
        let s = PruneSchedule::new(2, 8, 2, 0.5).unwrap();
        let h = train(&mut m, &[c], Some(&s), PruneStrategy::Partial).unwrap();
        let n = (m.params[W1].len() + m.params[W2].len()) as f64;
        let got = measure_sparsity(&m.params, PruneStrategy::Partial).unwrap();
        assert!((got - 0.5).abs() <= 1.0 / n);
        assert_eq!(h.final_sparsity(), got);
        assert_eq!(m.params[EMB].masked_count(), 0);
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let c = corpus("a\tB-PER\nb\tO\n");
        let m = init_model(&small_config(), build_vocab(&[c], 1)).unwrap();
        m.save(dir.path(), PruneStrategy::Partial).unwrap();
        let back = TaggerModel::load(dir.path()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn batch_sizes() {
        assert_eq!(batch_size_for(100), 8);
        assert_eq!(batch_size_for(1000), 8);
        assert_eq!(batch_size_for(5000), 16);
    }
}
