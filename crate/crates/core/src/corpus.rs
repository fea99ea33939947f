//! IOB2 corpora, entity span decoding and per-language metadata.
//!
//! Files hold one `token<sep>tag` pair per line, where `<sep>` is a tab or a
//! single space, and sentences are separated by blank lines. Output always
//! uses a tab.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::CorpusError;

/// Named entity classes annotated in WikiAnn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityType {
    #[serde(rename = "PER")]
    Per,
    #[serde(rename = "LOC")]
    Loc,
    #[serde(rename = "ORG")]
    Org,
}

impl EntityType {
    pub const ALL: [EntityType; 3] = [EntityType::Per, EntityType::Loc, EntityType::Org];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityType::Per => "PER",
            EntityType::Loc => "LOC",
            EntityType::Org => "ORG",
        }
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "PER" => Ok(EntityType::Per),
            "LOC" => Ok(EntityType::Loc),
            "ORG" => Ok(EntityType::Org),
            other => Err(format!("unknown entity type `{other}`")),
        }
    }
}

/// A single IOB2 tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    O,
    B(EntityType),
    I(EntityType),
}

impl Tag {
    /// The fixed tag inventory, in model output order.
    pub const ALL: [Tag; 7] = [
        Tag::O,
        Tag::B(EntityType::Per),
        Tag::I(EntityType::Per),
        Tag::B(EntityType::Loc),
        Tag::I(EntityType::Loc),
        Tag::B(EntityType::Org),
        Tag::I(EntityType::Org),
    ];

    pub fn index(self) -> usize {
        match self {
            Tag::O => 0,
            Tag::B(EntityType::Per) => 1,
            Tag::I(EntityType::Per) => 2,
            Tag::B(EntityType::Loc) => 3,
            Tag::I(EntityType::Loc) => 4,
            Tag::B(EntityType::Org) => 5,
            Tag::I(EntityType::Org) => 6,
        }
    }

    pub fn from_index(index: usize) -> Option<Tag> {
        Tag::ALL.get(index).copied()
    }

    pub fn entity_type(self) -> Option<EntityType> {
        match self {
            Tag::O => None,
            Tag::B(t) | Tag::I(t) => Some(t),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::O => f.write_str("O"),
            Tag::B(t) => write!(f, "B-{t}"),
            Tag::I(t) => write!(f, "I-{t}"),
        }
    }
}

impl FromStr for Tag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(Tag::O);
        }
        let bad = || format!("unknown tag `{s}`");
        let (prefix, etype) = s.split_once('-').ok_or_else(bad)?;
        let etype: EntityType = etype.parse().map_err(|_| bad())?;
        match prefix {
            "B" => Ok(Tag::B(etype)),
            "I" => Ok(Tag::I(etype)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for Tag {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Tag {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// Parallel token and tag sequences for one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub tags: Vec<Tag>,
    pub language: String,
}

impl Sentence {
    /// Builds a sentence, checking that tokens and tags line up and that
    /// every token is a non-empty single-line string.
    pub fn new(
        tokens: Vec<String>,
        tags: Vec<Tag>,
        language: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        if tokens.len() != tags.len() {
            return Err(CorpusError::Invalid(format!(
                "{} tokens but {} tags",
                tokens.len(),
                tags.len()
            )));
        }
        if let Some(bad) = tokens.iter().find(|t| !valid_token(t)) {
            return Err(CorpusError::Invalid(format!("invalid token {bad:?}")));
        }
        Ok(Self {
            tokens,
            tags,
            language: language.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn valid_token(token: &str) -> bool {
    !token.is_empty() && !token.contains(['\n', '\r']) && !token.contains('\t')
}

/// A typed, contiguous token span `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub etype: EntityType,
}

/// An entity span together with its surface tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntityMention {
    pub start: usize,
    pub end: usize,
    pub etype: EntityType,
    pub surface: Vec<String>,
}

impl EntityMention {
    pub fn span(&self) -> Span {
        Span {
            start: self.start,
            end: self.end,
            etype: self.etype,
        }
    }
}

/// Decodes IOB2 tags into spans with lenient (seqeval default) rules.
///
/// `B-X` always opens an entity. `I-X` continues an open entity of type X and
/// otherwise opens a new one. `O` closes whatever is open.
pub fn decode_spans(tags: &[Tag]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, EntityType)> = None;
    for (i, &tag) in tags.iter().enumerate() {
        match tag {
            Tag::O => {
                if let Some((start, etype)) = open.take() {
                    spans.push(Span { start, end: i, etype });
                }
            }
            Tag::B(t) => {
                if let Some((start, etype)) = open.replace((i, t)) {
                    spans.push(Span { start, end: i, etype });
                }
            }
            Tag::I(t) => match open {
                Some((_, etype)) if etype == t => {}
                _ => {
                    if let Some((start, etype)) = open.replace((i, t)) {
                        spans.push(Span { start, end: i, etype });
                    }
                }
            },
        }
    }
    if let Some((start, etype)) = open {
        spans.push(Span {
            start,
            end: tags.len(),
            etype,
        });
    }
    spans
}

/// Re-encodes spans as strict IOB2 tags over a sequence of length `len`.
pub fn encode_spans(spans: &[Span], len: usize) -> Vec<Tag> {
    let mut tags = vec![Tag::O; len];
    for span in spans {
        tags[span.start] = Tag::B(span.etype);
        for tag in &mut tags[span.start + 1..span.end] {
            *tag = Tag::I(span.etype);
        }
    }
    tags
}

pub fn extract_entities(sentence: &Sentence) -> Vec<EntityMention> {
    decode_spans(&sentence.tags)
        .into_iter()
        .map(|s| EntityMention {
            start: s.start,
            end: s.end,
            etype: s.etype,
            surface: sentence.tokens[s.start..s.end].to_vec(),
        })
        .collect()
}

/// A single-language collection of sentences for one split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub language: String,
    pub split: Split,
    pub sentences: Vec<Sentence>,
}

impl Corpus {
    pub fn new(language: impl Into<String>, split: Split) -> Self {
        Self {
            language: language.into(),
            split,
            sentences: Vec::new(),
        }
    }

    /// Adds a sentence, rejecting one tagged with another language.
    pub fn push(&mut self, sentence: Sentence) -> Result<(), CorpusError> {
        if sentence.language != self.language {
            return Err(CorpusError::Invalid(format!(
                "sentence language `{}` in `{}` corpus",
                sentence.language, self.language
            )));
        }
        self.sentences.push(sentence);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    pub fn mentions(&self) -> impl Iterator<Item = EntityMention> + '_ {
        self.sentences.iter().flat_map(extract_entities)
    }

    pub fn tag_sequences(&self) -> Vec<Vec<Tag>> {
        self.sentences.iter().map(|s| s.tags.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Remove a leading `<language>:` prefix from every token, as found in
    /// some WikiAnn redistributions (`en:Peru`).
    pub strip_lang_prefix: bool,
}

pub fn parse_iob2(
    text: &str,
    language: &str,
    split: Split,
    options: ParseOptions,
) -> Result<Corpus, CorpusError> {
    let prefix = format!("{language}:");
    let mut corpus = Corpus::new(language, split);
    let mut tokens = Vec::new();
    let mut tags = Vec::new();

    let mut flush = |tokens: &mut Vec<String>, tags: &mut Vec<Tag>| {
        if !tokens.is_empty() {
            corpus.sentences.push(Sentence {
                tokens: std::mem::take(tokens),
                tags: std::mem::take(tags),
                language: language.to_string(),
            });
        }
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            flush(&mut tokens, &mut tags);
            continue;
        }
        let fields: Vec<&str> = if line.contains('\t') {
            line.split('\t').collect()
        } else {
            line.split(' ').collect()
        };
        if fields.len() != 2 || fields.iter().any(|f| f.is_empty()) {
            return Err(CorpusError::Parse {
                line: line_no,
                message: format!("expected `token<TAB>tag`, found {} field(s)", fields.len()),
            });
        }
        let mut token = fields[0];
        if options.strip_lang_prefix {
            token = token.strip_prefix(prefix.as_str()).unwrap_or(token);
            if token.is_empty() {
                return Err(CorpusError::Parse {
                    line: line_no,
                    message: "token is empty after prefix stripping".into(),
                });
            }
        }
        let tag: Tag = fields[1].parse().map_err(|_| CorpusError::Tag {
            line: line_no,
            tag: fields[1].to_string(),
        })?;
        tokens.push(token.to_string());
        tags.push(tag);
    }
    flush(&mut tokens, &mut tags);
    Ok(corpus)
}

/// Writes a corpus back out as tab-separated IOB2.
pub fn serialize_iob2(corpus: &Corpus) -> String {
    let mut out = String::new();
    for sentence in &corpus.sentences {
        for (token, tag) in sentence.tokens.iter().zip(&sentence.tags) {
            out.push_str(token);
            out.push('\t');
            out.push_str(&tag.to_string());
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Share of test mentions whose `(type, surface)` pair also occurs in the
/// training corpus, counted with multiplicity. `None` when the test corpus
/// has no mentions.
pub fn entity_overlap(train: &Corpus, test: &Corpus) -> Option<f64> {
    let seen: HashSet<(EntityType, Vec<String>)> =
        train.mentions().map(|m| (m.etype, m.surface)).collect();
    let mut total = 0usize;
    let mut hits = 0usize;
    for m in test.mentions() {
        total += 1;
        if seen.contains(&(m.etype, m.surface)) {
            hits += 1;
        }
    }
    (total > 0).then(|| hits as f64 / total as f64)
}

/// The six WikiAnn training-set sizes.
pub const SIZE_BUCKETS: [u32; 6] = [100, 1000, 5000, 10000, 15000, 20000];

/// Largest size bucket not exceeding `train_size` (the smallest bucket for
/// anything below 100).
pub fn size_bucket(train_size: u32) -> u32 {
    SIZE_BUCKETS
        .iter()
        .rev()
        .copied()
        .find(|&b| b <= train_size)
        .unwrap_or(SIZE_BUCKETS[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageMeta {
    pub code: String,
    pub script: String,
    pub family: String,
    pub train_size: u32,
    pub pretrain_pct: f64,
}

pub type MetaTable = BTreeMap<String, LanguageMeta>;

pub const METADATA_HEADER: &str = "code,script,family,train_size,pretrain_pct";

/// Parses `code,script,family,train_size,pretrain_pct` rows. The header row
/// is optional.
pub fn load_language_metadata(text: &str) -> Result<MetaTable, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut table = MetaTable::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| CorpusError::Metadata {
            line,
            message: e.to_string(),
        })?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        if idx == 0 && record.get(0) == Some("code") {
            continue;
        }
        if record.len() != 5 {
            return Err(CorpusError::Metadata {
                line,
                message: format!("expected 5 fields, found {}", record.len()),
            });
        }
        let train_size: u32 = record[3].parse().map_err(|_| CorpusError::Metadata {
            line,
            message: format!("train_size `{}` is not a non-negative integer", &record[3]),
        })?;
        let pretrain_pct: f64 = record[4]
            .parse()
            .ok()
            .filter(|p: &f64| p.is_finite() && *p >= 0.0)
            .ok_or_else(|| CorpusError::Metadata {
                line,
                message: format!("pretrain_pct `{}` is not a non-negative number", &record[4]),
            })?;
        let meta = LanguageMeta {
            code: record[0].to_string(),
            script: record[1].to_string(),
            family: record[2].to_string(),
            train_size,
            pretrain_pct,
        };
        if table.contains_key(&meta.code) {
            return Err(CorpusError::DuplicateLanguage(meta.code));
        }
        table.insert(meta.code.clone(), meta);
    }
    Ok(table)
}

pub fn write_language_metadata(table: &MetaTable) -> String {
    let mut out = String::from(METADATA_HEADER);
    out.push('\n');
    for m in table.values() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            m.code, m.script, m.family, m.train_size, m.pretrain_pct
        ));
    }
    out
}

/// Metadata for the 40 WikiAnn languages of the XTREME benchmark. Training
/// sizes and pre-training shares are per size bucket.
pub fn wikiann_metadata() -> MetaTable {
    load_language_metadata(include_str!("../data/wikiann_languages.csv"))
        .expect("bundled metadata is valid")
}
