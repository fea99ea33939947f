//! Entity mention replacement.
//!
//! Every mention in a test sentence is swapped for another surface of the
//! same entity type, drawn from a pool collected over the test splits of a
//! language, script group or family group.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{extract_entities, Corpus, EntityType, MetaTable, Sentence, Tag};
use crate::error::PerturbError;
use crate::exec::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationScope {
    InLanguage,
    InScript,
    InFamily,
}

impl PerturbationScope {
    pub const ALL: [PerturbationScope; 3] = [
        PerturbationScope::InLanguage,
        PerturbationScope::InScript,
        PerturbationScope::InFamily,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PerturbationScope::InLanguage => "in-language",
            PerturbationScope::InScript => "in-script",
            PerturbationScope::InFamily => "in-family",
        }
    }

    /// The group a language falls into under this scope.
    pub fn group_key(self, language: &str, meta: &MetaTable) -> Option<String> {
        match self {
            PerturbationScope::InLanguage => Some(language.to_string()),
            PerturbationScope::InScript => meta.get(language).map(|m| m.script.clone()),
            PerturbationScope::InFamily => meta.get(language).map(|m| m.family.clone()),
        }
    }
}

impl fmt::Display for PerturbationScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PerturbationScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PerturbationScope::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown perturbation scope `{s}`"))
    }
}

/// Replacement candidates per entity type, deduplicated and kept in
/// first-seen order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityPool {
    pub scope: PerturbationScope,
    pub group_key: String,
    pub by_type: BTreeMap<EntityType, Vec<Vec<String>>>,
}

impl EntityPool {
    pub fn empty(scope: PerturbationScope, group_key: impl Into<String>) -> Self {
        Self {
            scope,
            group_key: group_key.into(),
            by_type: BTreeMap::new(),
        }
    }

    /// Adds a surface unless it is empty or already present.
    pub fn insert(&mut self, etype: EntityType, surface: Vec<String>) -> bool {
        if surface.is_empty() {
            return false;
        }
        let list = self.by_type.entry(etype).or_default();
        if list.contains(&surface) {
            return false;
        }
        list.push(surface);
        true
    }

    pub fn candidates(&self, etype: EntityType) -> &[Vec<String>] {
        self.by_type.get(&etype).map(Vec::as_slice).unwrap_or(&[])
    }
}

pub fn build_pool(
    corpora: &[Corpus],
    meta: &MetaTable,
    scope: PerturbationScope,
    group_key: &str,
) -> Result<EntityPool, PerturbError> {
    if scope != PerturbationScope::InLanguage {
        let missing: Vec<String> = corpora
            .iter()
            .filter(|c| !meta.contains_key(&c.language))
            .map(|c| c.language.clone())
            .collect();
        if !missing.is_empty() {
            return Err(PerturbError::MissingMetadata(missing));
        }
    }
    let members: Vec<&Corpus> = corpora
        .iter()
        .filter(|c| scope.group_key(&c.language, meta).as_deref() == Some(group_key))
        .collect();
    if members.is_empty() {
        return Err(PerturbError::EmptyGroup {
            scope: scope.to_string(),
            group: group_key.to_string(),
        });
    }
    let mut pool = EntityPool::empty(scope, group_key);
    let mut seen: HashSet<(EntityType, Vec<String>)> = HashSet::new();
    for corpus in members {
        for m in corpus.mentions() {
            if seen.insert((m.etype, m.surface.clone())) {
                pool.insert(m.etype, m.surface);
            }
        }
    }
    Ok(pool)
}

/// A seeded random stream that counts its draws, so log records can point
/// back at the exact draw that produced a replacement.
#[derive(Debug, Clone)]
pub struct DrawStream {
    rng: ChaCha8Rng,
    draws: u64,
}

impl DrawStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            draws: 0,
        }
    }

    /// Uniform index in `0..n`, with the index of the draw.
    fn draw(&mut self, n: usize) -> (usize, u64) {
        let idx = self.draws;
        self.draws += 1;
        (self.rng.gen_range(0..n), idx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplacementStatus {
    Replaced,
    /// The pool held no surface other than the original; the mention was
    /// left as it was.
    NoCandidate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplacementRecord {
    pub sentence_index: usize,
    pub start: usize,
    pub end: usize,
    pub original: Vec<String>,
    pub replacement: Vec<String>,
    pub etype: EntityType,
    pub draw_index: Option<u64>,
    pub status: ReplacementStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplacementLog {
    pub records: Vec<ReplacementRecord>,
}

impl ReplacementLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Self { records })
    }

    pub fn replaced(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.status == ReplacementStatus::Replaced)
            .count()
    }
}

/// Replaces every mention of `sentence`, left to right. Spans in the log
/// refer to the original sentence.
pub fn perturb_sentence(
    sentence: &Sentence,
    sentence_index: usize,
    pool: &EntityPool,
    stream: &mut DrawStream,
) -> (Sentence, Vec<ReplacementRecord>) {
    let mentions = extract_entities(sentence);
    let mut tokens = Vec::with_capacity(sentence.len());
    let mut tags = Vec::with_capacity(sentence.len());
    let mut log = Vec::with_capacity(mentions.len());
    let mut cursor = 0;

    for m in mentions {
        tokens.extend_from_slice(&sentence.tokens[cursor..m.start]);
        tags.extend_from_slice(&sentence.tags[cursor..m.start]);
        cursor = m.end;

        let candidates: Vec<&Vec<String>> = pool
            .candidates(m.etype)
            .iter()
            .filter(|c| **c != m.surface)
            .collect();
        if candidates.is_empty() {
            tokens.extend_from_slice(&sentence.tokens[m.start..m.end]);
            tags.extend_from_slice(&sentence.tags[m.start..m.end]);
            log.push(ReplacementRecord {
                sentence_index,
                start: m.start,
                end: m.end,
                replacement: m.surface.clone(),
                original: m.surface,
                etype: m.etype,
                draw_index: None,
                status: ReplacementStatus::NoCandidate,
            });
            continue;
        }
        let (pick, draw_index) = stream.draw(candidates.len());
        let replacement = candidates[pick].clone();
        tags.push(Tag::B(m.etype));
        tags.extend(std::iter::repeat(Tag::I(m.etype)).take(replacement.len() - 1));
        tokens.extend(replacement.iter().cloned());
        log.push(ReplacementRecord {
            sentence_index,
            start: m.start,
            end: m.end,
            original: m.surface,
            replacement,
            etype: m.etype,
            draw_index: Some(draw_index),
            status: ReplacementStatus::Replaced,
        });
    }
    tokens.extend_from_slice(&sentence.tokens[cursor..]);
    tags.extend_from_slice(&sentence.tags[cursor..]);

    (
        Sentence {
            tokens,
            tags,
            language: sentence.language.clone(),
        },
        log,
    )
}

/// Perturbs a corpus with one seeded stream consumed in sentence order, then
/// mention order.
pub fn perturb_corpus(corpus: &Corpus, pool: &EntityPool, seed: u64) -> (Corpus, ReplacementLog) {
    let mut stream = DrawStream::new(seed);
    let mut out = Corpus::new(corpus.language.clone(), corpus.split);
    let mut log = ReplacementLog::default();
    for (i, sentence) in corpus.sentences.iter().enumerate() {
        let (s, records) = perturb_sentence(sentence, i, pool, &mut stream);
        out.sentences.push(s);
        log.records.extend(records);
    }
    (out, log)
}

/// Perturbs several independent corpora. Each job carries its own pool and
/// seed, so the result does not depend on the execution mode.
pub fn perturb_many(
    jobs: &[(&Corpus, &EntityPool, u64)],
    exec: Exec,
) -> Vec<(Corpus, ReplacementLog)> {
    exec.map(jobs, |(corpus, pool, seed)| perturb_corpus(corpus, pool, *seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_language_metadata, parse_iob2, ParseOptions, Split};

    fn corpus(lang: &str, text: &str) -> Corpus {
        parse_iob2(text, lang, Split::Test, ParseOptions::default()).unwrap()
    }

    fn words(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    fn meta() -> MetaTable {
        load_language_metadata(
            "en,Latin,Indo-European,20000,2.93\nyo,Latin,Niger-Congo,100,0.05\nhi,Devanagari,Indo-European,5000,0.21\n",
        )
        .unwrap()
    }

    #[test]
    fn in_language_pool_dedups() {
        let en = corpus("en", "Peru\tB-LOC\n\nin\tO\nPeru\tB-LOC\n");
        let pool = build_pool(&[en], &meta(), PerturbationScope::InLanguage, "en").unwrap();
        assert_eq!(pool.candidates(EntityType::Loc), &[words("Peru")]);
        assert!(pool.candidates(EntityType::Per).is_empty());
    }

    #[test]
    fn in_script_pool_unions_languages() {
        let en = corpus("en", "Peru\tB-LOC\n\nAda\tB-PER\nLovelace\tI-PER\n");
        let yo = corpus("yo", "Ekiti\tB-LOC\n\nPeru\tB-LOC\n");
        let hi = corpus("hi", "दिल्ली\tB-LOC\n");
        let pool = build_pool(
            &[en, yo, hi],
            &meta(),
            PerturbationScope::InScript,
            "Latin",
        )
        .unwrap();
        assert_eq!(
            pool.candidates(EntityType::Loc),
            &[words("Peru"), words("Ekiti")]
        );
        assert_eq!(pool.candidates(EntityType::Per), &[words("Ada Lovelace")]);
    }

    #[test]
    fn empty_family_group_is_error() {
        let en = corpus("en", "Peru\tB-LOC\n");
        let err = build_pool(&[en], &meta(), PerturbationScope::InFamily, "Uralic").unwrap_err();
        assert!(matches!(err, PerturbError::EmptyGroup { .. }));
    }

    #[test]
    fn missing_metadata_is_reported() {
        let xx = corpus("xx", "Peru\tB-LOC\n");
        let err = build_pool(&[xx], &meta(), PerturbationScope::InScript, "Latin").unwrap_err();
        assert!(matches!(err, PerturbError::MissingMetadata(v) if v == vec!["xx"]));
    }

    #[test]
    fn peru_becomes_carbon_cliff() {
        let c = corpus("en", "It\tO\nis\tO\nfound\tO\nin\tO\nPeru\tB-LOC\n.\tO\n");
        let mut pool = EntityPool::empty(PerturbationScope::InLanguage, "en");
        pool.insert(EntityType::Loc, words("Peru"));
        pool.insert(EntityType::Loc, words("Carbon Cliff , Illinois"));
        let (out, log) = perturb_corpus(&c, &pool, 7);
        let s = &out.sentences[0];
        assert_eq!(s.tokens.join(" "), "It is found in Carbon Cliff , Illinois .");
        let tags: Vec<String> = s.tags.iter().map(|t| t.to_string()).collect();
        assert_eq!(tags, ["O", "O", "O", "O", "B-LOC", "I-LOC", "I-LOC", "I-LOC", "O"]);
        assert_eq!(log.records.len(), 1);
        assert_eq!(log.records[0].draw_index, Some(0));
    }

    #[test]
    fn all_o_sentence_untouched() {
        let c = corpus("en", "a\tO\nb\tO\n");
        let pool = EntityPool::empty(PerturbationScope::InLanguage, "en");
        let (out, log) = perturb_corpus(&c, &pool, 1);
        assert_eq!(out, c);
        assert!(log.records.is_empty());
    }

    #[test]
    fn lone_surface_is_flagged_not_replaced() {
        let c = corpus("en", "Peru\tB-LOC\nAda\tI-PER\n");
        let mut pool = EntityPool::empty(PerturbationScope::InLanguage, "en");
        pool.insert(EntityType::Loc, words("Peru"));
        let (out, log) = perturb_corpus(&c, &pool, 1);
        assert_eq!(out, c);
        assert_eq!(log.records.len(), 2);
        assert!(log
            .records
            .iter()
            .all(|r| r.status == ReplacementStatus::NoCandidate && r.draw_index.is_none()));
    }

    #[test]
    fn two_element_pool_is_forced() {
        let c = corpus("en", "A\tB-LOC\n");
        let mut pool = EntityPool::empty(PerturbationScope::InLanguage, "en");
        pool.insert(EntityType::Loc, words("A"));
        pool.insert(EntityType::Loc, words("B"));
        for seed in 0..20 {
            let (out, _) = perturb_corpus(&c, &pool, seed);
            assert_eq!(out.sentences[0].tokens, words("B"));
        }
    }

    #[test]
    fn seeds_matter_and_replay() {
        let c = corpus(
            "en",
            &"X\tB-LOC\nand\tO\nY\tB-PER\n\n".repeat(20),
        );
        let mut pool = EntityPool::empty(PerturbationScope::InLanguage, "en");
        for s in ["L1", "L2", "L3", "L4"] {
            pool.insert(EntityType::Loc, words(s));
        }
        for s in ["P1", "P2", "P3"] {
            pool.insert(EntityType::Per, words(s));
        }
        let a = perturb_corpus(&c, &pool, 1);
        let b = perturb_corpus(&c, &pool, 1);
        let d = perturb_corpus(&c, &pool, 2);
        assert_eq!(a, b);
        assert_ne!(a.0, d.0);
        assert_eq!(a.1.to_jsonl(), b.1.to_jsonl());
        assert_eq!(ReplacementLog::from_jsonl(&a.1.to_jsonl()).unwrap(), a.1);
    }

    #[test]
    fn parallel_batch_matches_single_runs() {
        let c1 = corpus("en", "X\tB-LOC\n\nY\tB-LOC\n");
        let mut pool = EntityPool::empty(PerturbationScope::InLanguage, "en");
        for s in ["X", "Y", "Z"] {
            pool.insert(EntityType::Loc, words(s));
        }
        let jobs = [(&c1, &pool, 3u64), (&c1, &pool, 4u64)];
        let seq = perturb_many(&jobs, Exec::Sequential);
        let par = perturb_many(&jobs, Exec::Parallel);
        assert_eq!(seq, par);
        assert_eq!(seq[0], perturb_corpus(&c1, &pool, 3));
    }

    #[test]
    fn scope_names() {
        for s in PerturbationScope::ALL {
            assert_eq!(s.as_str().parse::<PerturbationScope>().unwrap(), s);
        }
        assert!("in-planet".parse::<PerturbationScope>().is_err());
    }
}
