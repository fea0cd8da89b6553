//! Data model for actor-attributed claims: documents, claims, splits, and the
//! JSONL corpus format.
//!
//! All offsets are character (code point) indices into `Document::text`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open `[start, end)` character span, serialized as `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn contains(&self, pos: usize) -> bool {
        self.start <= pos && pos < self.end
    }

    /// True if `pos` falls strictly inside the span, i.e. inserting a marker
    /// at `pos` would split it.
    pub fn straddles(&self, pos: usize) -> bool {
        self.start < pos && pos < self.end
    }
}

impl From<[usize; 2]> for Span {
    fn from([start, end]: [usize; 2]) -> Self {
        Span { start, end }
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimInstance {
    pub id: String,
    #[serde(rename = "span")]
    pub claim_span: Span,
    /// Canonical actor names.
    #[serde(rename = "actors")]
    pub gold_actors: Vec<String>,
    #[serde(rename = "mentions", default)]
    pub gold_mentions: Vec<Span>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub sentences: Vec<Span>,
    pub claims: Vec<ClaimInstance>,
}

impl Document {
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    /// Substring for a character span. Out-of-range ends are clipped.
    pub fn slice(&self, span: Span) -> String {
        self.text
            .chars()
            .skip(span.start)
            .take(span.len())
            .collect()
    }

    /// Sentence spans, or a single sentence covering the whole text when the
    /// document carries no segmentation.
    pub fn sentence_spans(&self) -> Vec<Span> {
        if self.sentences.is_empty() {
            vec![Span::new(0, self.char_len())]
        } else {
            self.sentences.clone()
        }
    }

    /// Inclusive range of sentence indices overlapping the claim span.
    pub fn claim_sentence_range(&self, claim: &ClaimInstance) -> (usize, usize) {
        sentence_range(&self.sentence_spans(), claim.claim_span)
    }

    pub fn claim(&self, claim_id: &str) -> Option<&ClaimInstance> {
        self.claims.iter().find(|c| c.id == claim_id)
    }

    pub fn validate(&self) -> Result<()> {
        let len = self.char_len();
        let mut prev_end = 0usize;
        for (i, s) in self.sentences.iter().enumerate() {
            if s.start > s.end || s.end > len {
                return Err(Error::validation(
                    &self.id,
                    format!("sentences[{i}]"),
                    format!("span [{}, {}) outside text of length {len}", s.start, s.end),
                ));
            }
            if s.start < prev_end {
                return Err(Error::validation(
                    &self.id,
                    format!("sentences[{i}]"),
                    "sentence spans must be sorted and non-overlapping",
                ));
            }
            prev_end = s.end;
        }
        for claim in &self.claims {
            let c = claim.claim_span;
            if c.start > c.end || c.end > len {
                return Err(Error::validation(
                    &self.id,
                    format!("claim {} span", claim.id),
                    format!("span [{}, {}) outside text of length {len}", c.start, c.end),
                ));
            }
            if claim.gold_actors.is_empty() {
                return Err(Error::validation(
                    &self.id,
                    format!("claim {} actors", claim.id),
                    "at least one gold actor is required",
                ));
            }
            for (j, m) in claim.gold_mentions.iter().enumerate() {
                if m.start >= m.end || m.end > len {
                    return Err(Error::validation(
                        &self.id,
                        format!("claim {} mentions[{j}]", claim.id),
                        format!("span [{}, {}) is empty or outside the text", m.start, m.end),
                    ));
                }
                if m.straddles(c.start) || m.straddles(c.end) {
                    return Err(Error::validation(
                        &self.id,
                        format!("claim {} mentions[{j}]", claim.id),
                        "mention crosses a claim boundary",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Inclusive range of sentences overlapping `span`. An empty span, or one
/// lying between sentences, maps to the last sentence starting at or before it.
pub fn sentence_range(sentences: &[Span], span: Span) -> (usize, usize) {
    let overlapping: Vec<usize> = sentences
        .iter()
        .enumerate()
        .filter(|(_, s)| s.overlaps(&span))
        .map(|(i, _)| i)
        .collect();
    match (overlapping.first(), overlapping.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => {
            let i = sentence_at(sentences, span.start);
            (i, i)
        }
    }
}

/// Index of the sentence containing `pos`, or the closest one starting before it.
pub fn sentence_at(sentences: &[Span], pos: usize) -> usize {
    sentences
        .iter()
        .rposition(|s| s.start <= pos)
        .unwrap_or(0)
}

/// Borrowed (document, claim) pair; the unit every predictor works on.
#[derive(Debug, Clone, Copy)]
pub struct ClaimRef<'a> {
    pub doc: &'a Document,
    pub claim: &'a ClaimInstance,
}

impl<'a> ClaimRef<'a> {
    pub fn id(&self) -> &'a str {
        &self.claim.id
    }
}

pub fn parse_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_corpus(reader: impl BufRead) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<corpus>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document =
            serde_json::from_str(&line).map_err(|source| Error::Parse { line: i + 1, source })?;
        doc.validate()?;
        docs.push(doc);
    }
    check_unique_ids(&docs)?;
    Ok(docs)
}

fn check_unique_ids(docs: &[Document]) -> Result<()> {
    let mut doc_ids = HashSet::new();
    let mut claim_ids = HashSet::new();
    for doc in docs {
        if !doc_ids.insert(doc.id.as_str()) {
            return Err(Error::validation(&doc.id, "id", "duplicate document id"));
        }
        for claim in &doc.claims {
            if !claim_ids.insert(claim.id.as_str()) {
                return Err(Error::validation(
                    &doc.id,
                    format!("claim {}", claim.id),
                    "duplicate claim id",
                ));
            }
        }
    }
    Ok(())
}

pub fn write_corpus(docs: &[Document], mut writer: impl Write) -> Result<()> {
    for doc in docs {
        let line = serde_json::to_string(doc).map_err(|e| Error::json("corpus", e))?;
        writeln!(writer, "{line}").map_err(|e| Error::io("<corpus>", e))?;
    }
    Ok(())
}

pub fn save_corpus(docs: &[Document], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_corpus(docs, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Train,
    Dev,
    Test,
}

impl std::str::FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "dev" => Ok(Partition::Dev),
            "test" => Ok(Partition::Test),
            other => Err(Error::Config(format!("unknown partition {other:?}"))),
        }
    }
}

impl SplitSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn ids(&self, partition: Partition) -> &[String] {
        match partition {
            Partition::Train => &self.train,
            Partition::Dev => &self.dev,
            Partition::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Split<'a> {
    pub train: Vec<ClaimRef<'a>>,
    pub dev: Vec<ClaimRef<'a>>,
    pub test: Vec<ClaimRef<'a>>,
}

impl<'a> Split<'a> {
    pub fn get(&self, partition: Partition) -> &[ClaimRef<'a>] {
        match partition {
            Partition::Train => &self.train,
            Partition::Dev => &self.dev,
            Partition::Test => &self.test,
        }
    }
}

/// Partition the corpus claims according to `spec`. Each partition keeps the
/// order of ids as listed in the spec.
pub fn split_dataset<'a>(docs: &'a [Document], spec: &SplitSpec) -> Result<Split<'a>> {
    let index: HashMap<&str, ClaimRef<'a>> = docs
        .iter()
        .flat_map(|doc| doc.claims.iter().map(move |claim| (claim.id.as_str(), ClaimRef { doc, claim })))
        .collect();

    let mut seen: BTreeMap<&str, &'static str> = BTreeMap::new();
    let mut resolve = |ids: &'_ [String], name: &'static str| -> Result<Vec<ClaimRef<'a>>> {
        ids.iter()
            .map(|id| {
                let r = *index
                    .get(id.as_str())
                    .ok_or_else(|| Error::Split(format!("unknown claim id {id:?} in {name}")))?;
                if let Some(other) = seen.insert(r.id(), name) {
                    return Err(Error::Split(format!(
                        "claim id {id:?} appears in both {other} and {name}"
                    )));
                }
                Ok(r)
            })
            .collect()
    };
    let train = resolve(&spec.train, "train")?;
    let dev = resolve(&spec.dev, "dev")?;
    let test = resolve(&spec.test, "test")?;

    if let Some(missing) = index.keys().find(|id| !seen.contains_key(*id)) {
        return Err(Error::Split(format!(
            "claim id {missing:?} is not assigned to any partition"
        )));
    }
    Ok(Split { train, dev, test })
}

/// All claims of the corpus in file order.
pub fn all_claims(docs: &[Document]) -> Vec<ClaimRef<'_>> {
    docs.iter()
        .flat_map(|doc| doc.claims.iter().map(move |claim| ClaimRef { doc, claim }))
        .collect()
}
