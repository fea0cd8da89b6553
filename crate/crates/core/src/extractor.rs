//! Linear-chain BIO tagger for actor mentions.
//!
//! Decoding runs a backward max-sum pass followed by a forward greedy
//! selection, which yields the lexicographically smallest optimal path
//! (order `O < B-ACT < I-ACT`). The constrained decoder augments each state
//! with a seen-mention bit and only accepts final states that have seen a
//! `B-ACT`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ClaimRef, Document, ClaimInstance, Span};
use crate::error::{Error, Result};
use crate::featurize::{tokenize, FeatureVector, Featurizer, Token};

pub const NUM_TAGS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tag {
    O = 0,
    B = 1,
    I = 2,
}

impl Tag {
    pub const ALL: [Tag; NUM_TAGS] = [Tag::O, Tag::B, Tag::I];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Tag {
        Tag::ALL[i]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Tag::O => "O",
            Tag::B => "B-ACT",
            Tag::I => "I-ACT",
        }
    }

    /// BIO validity of `prev → next`; `None` is the sequence start.
    pub fn can_follow(prev: Option<Tag>, next: Tag) -> bool {
        !(next == Tag::I && matches!(prev, None | Some(Tag::O)))
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "O" => Ok(Tag::O),
            "B-ACT" => Ok(Tag::B),
            "I-ACT" => Ok(Tag::I),
            other => Err(Error::Config(format!("unknown tag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct TagSequence(pub Vec<Tag>);

impl TagSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_valid(&self) -> bool {
        let mut prev = None;
        for &t in &self.0 {
            if !Tag::can_follow(prev, t) {
                return false;
            }
            prev = Some(t);
        }
        true
    }

    pub fn has_mention(&self) -> bool {
        self.0.contains(&Tag::B)
    }

    /// Token index ranges `[start, end)` of maximal `B-ACT I-ACT*` runs.
    pub fn mention_runs(&self) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut open: Option<usize> = None;
        for (i, &t) in self.0.iter().enumerate() {
            match t {
                Tag::B => {
                    if let Some(s) = open.take() {
                        runs.push((s, i));
                    }
                    open = Some(i);
                }
                Tag::I => {}
                Tag::O => {
                    if let Some(s) = open.take() {
                        runs.push((s, i));
                    }
                }
            }
        }
        if let Some(s) = open {
            runs.push((s, self.0.len()));
        }
        runs
    }
}

impl From<Vec<Tag>> for TagSequence {
    fn from(v: Vec<Tag>) -> Self {
        TagSequence(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrfModel {
    pub hash_space: u32,
    pub emissions: HashMap<u32, [f64; NUM_TAGS]>,
    /// `transitions[prev][next]`.
    pub transitions: [[f64; NUM_TAGS]; NUM_TAGS],
    pub start: [f64; NUM_TAGS],
    pub end: [f64; NUM_TAGS],
}

impl CrfModel {
    pub fn zeros(hash_space: u32) -> Self {
        CrfModel {
            hash_space,
            emissions: HashMap::new(),
            transitions: [[0.0; NUM_TAGS]; NUM_TAGS],
            start: [0.0; NUM_TAGS],
            end: [0.0; NUM_TAGS],
        }
    }

    pub fn emission_scores(&self, features: &[FeatureVector]) -> Vec<[f64; NUM_TAGS]> {
        features
            .iter()
            .map(|fv| {
                let mut s = [0.0; NUM_TAGS];
                for (id, v) in fv.iter() {
                    if let Some(w) = self.emissions.get(&id) {
                        for k in 0..NUM_TAGS {
                            s[k] += v * w[k];
                        }
                    }
                }
                s
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(&CrfModelFile::from(self))
            .map_err(|e| Error::json("extractor model", e))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: CrfModelFile = serde_json::from_str(&text)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        CrfModel::try_from(file)
    }
}

/// On-disk form of [`CrfModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfModelFile {
    pub hash_space: u32,
    pub emissions: BTreeMap<String, f64>,
    pub transitions: BTreeMap<String, f64>,
}

const START: &str = "<s>";
const END: &str = "</s>";

impl From<&CrfModel> for CrfModelFile {
    fn from(m: &CrfModel) -> Self {
        let mut emissions = BTreeMap::new();
        for (id, w) in &m.emissions {
            for tag in Tag::ALL {
                if w[tag.index()] != 0.0 {
                    emissions.insert(format!("{id}:{tag}"), w[tag.index()]);
                }
            }
        }
        let mut transitions = BTreeMap::new();
        for next in Tag::ALL {
            if Tag::can_follow(None, next) {
                transitions.insert(format!("{START}:{next}"), m.start[next.index()]);
            }
            transitions.insert(format!("{next}:{END}"), m.end[next.index()]);
            for prev in Tag::ALL {
                if Tag::can_follow(Some(prev), next) {
                    transitions.insert(
                        format!("{prev}:{next}"),
                        m.transitions[prev.index()][next.index()],
                    );
                }
            }
        }
        CrfModelFile {
            hash_space: m.hash_space,
            emissions,
            transitions,
        }
    }
}

impl TryFrom<CrfModelFile> for CrfModel {
    type Error = Error;

    fn try_from(file: CrfModelFile) -> Result<Self> {
        let bad = |what: &str, key: &str| Error::Config(format!("extractor model: {what} {key:?}"));
        let mut m = CrfModel::zeros(file.hash_space);
        for (key, &w) in &file.emissions {
            let (id, tag) = key.rsplit_once(':').ok_or_else(|| bad("bad emission key", key))?;
            let id: u32 = id.parse().map_err(|_| bad("bad feature id in", key))?;
            if id >= file.hash_space {
                return Err(bad("feature id outside hash space in", key));
            }
            if !w.is_finite() {
                return Err(bad("non-finite weight for", key));
            }
            let tag: Tag = tag.parse()?;
            m.emissions.entry(id).or_insert([0.0; NUM_TAGS])[tag.index()] = w;
        }
        for (key, &w) in &file.transitions {
            let (a, b) = key.split_once(':').ok_or_else(|| bad("bad transition key", key))?;
            if !w.is_finite() {
                return Err(bad("non-finite weight for", key));
            }
            match (a, b) {
                (START, next) => {
                    let next: Tag = next.parse()?;
                    if !Tag::can_follow(None, next) {
                        return Err(bad("invalid transition", key));
                    }
                    m.start[next.index()] = w;
                }
                (prev, END) => m.end[prev.parse::<Tag>()?.index()] = w,
                (prev, next) => {
                    let (prev, next): (Tag, Tag) = (prev.parse()?, next.parse()?);
                    if !Tag::can_follow(Some(prev), next) {
                        return Err(bad("invalid transition", key));
                    }
                    m.transitions[prev.index()][next.index()] = w;
                }
            }
        }
        Ok(m)
    }
}

/// Total path score: emissions plus transitions, including start and end.
pub fn score_path(model: &CrfModel, features: &[FeatureVector], tags: &TagSequence) -> Result<f64> {
    if features.len() != tags.len() {
        return Err(Error::LengthMismatch {
            features: features.len(),
            tags: tags.len(),
        });
    }
    if tags.is_empty() {
        return Err(Error::EmptySequence);
    }
    let emit = model.emission_scores(features);
    let t = &tags.0;
    let mut score = model.start[t[0].index()] + model.end[t[t.len() - 1].index()];
    for (i, &tag) in t.iter().enumerate() {
        score += emit[i][tag.index()];
        if i > 0 {
            score += model.transitions[t[i - 1].index()][tag.index()];
        }
    }
    Ok(score)
}

/// Highest-scoring BIO-valid tag sequence.
pub fn viterbi(model: &CrfModel, features: &[FeatureVector]) -> Result<TagSequence> {
    decode(model, features, false)
}

/// Highest-scoring BIO-valid tag sequence containing at least one `B-ACT`.
pub fn constrained_viterbi(model: &CrfModel, features: &[FeatureVector]) -> Result<TagSequence> {
    decode(model, features, true)
}

fn decode(model: &CrfModel, features: &[FeatureVector], require_mention: bool) -> Result<TagSequence> {
    if features.is_empty() {
        return Err(Error::EmptySequence);
    }
    let emit = model.emission_scores(features);
    Ok(decode_scores(model, &emit, require_mention))
}

fn decode_scores(model: &CrfModel, emit: &[[f64; NUM_TAGS]], require_mention: bool) -> TagSequence {
    let n = emit.len();
    let seen_after = |s: usize, tag: Tag| usize::from(s == 1 || tag == Tag::B);

    // suffix[t][tag][seen]: best score of positions t+1.. plus the end
    // transition, given `tag` at t and the seen-mention bit through t.
    let mut suffix = vec![[[f64::NEG_INFINITY; 2]; NUM_TAGS]; n];
    for tag in Tag::ALL {
        for (s, cell) in suffix[n - 1][tag.index()].iter_mut().enumerate() {
            if s == 1 || !require_mention {
                *cell = model.end[tag.index()];
            }
        }
    }
    for t in (0..n - 1).rev() {
        for tag in Tag::ALL {
            for s in 0..2 {
                let mut best = f64::NEG_INFINITY;
                for next in Tag::ALL {
                    if !Tag::can_follow(Some(tag), next) {
                        continue;
                    }
                    let v = model.transitions[tag.index()][next.index()]
                        + emit[t + 1][next.index()]
                        + suffix[t + 1][next.index()][seen_after(s, next)];
                    if v > best {
                        best = v;
                    }
                }
                suffix[t][tag.index()][s] = best;
            }
        }
    }

    let mut path = Vec::with_capacity(n);
    let mut prev: Option<Tag> = None;
    let mut seen = 0usize;
    for t in 0..n {
        let mut best: Option<(Tag, f64)> = None;
        for tag in Tag::ALL {
            if !Tag::can_follow(prev, tag) {
                continue;
            }
            let link = match prev {
                None => model.start[tag.index()],
                Some(p) => model.transitions[p.index()][tag.index()],
            };
            let v = link + emit[t][tag.index()] + suffix[t][tag.index()][seen_after(seen, tag)];
            // Strict comparison keeps the earliest tag on ties.
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((tag, v));
            }
        }
        let (tag, _) = best.expect("a valid tag exists at every position");
        seen = seen_after(seen, tag);
        path.push(tag);
        prev = Some(tag);
    }
    TagSequence(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractorConfig {
    pub epochs: usize,
    /// Sequences longer than this many tokens are cut down to the sentence
    /// window around the claim.
    pub token_budget: usize,
    pub window_sentences: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            epochs: 10,
            token_budget: 512,
            window_sentences: 5,
        }
    }
}

/// Tokens the extractor sees for a claim.
pub fn claim_tokens(doc: &Document, claim: &ClaimInstance, config: &ExtractorConfig) -> Vec<Token> {
    let tokens = tokenize(doc, claim);
    if tokens.len() <= config.token_budget {
        return tokens;
    }
    let k = config.window_sentences as i64;
    tokens
        .into_iter()
        .filter(|t| i64::from(t.distance_to_claim).abs() <= k)
        .collect()
}

/// BIO tags from gold mention spans: the first token overlapping a mention is
/// `B-ACT`, the remaining overlapping tokens `I-ACT`.
pub fn gold_tags(tokens: &[Token], mentions: &[Span]) -> TagSequence {
    let mut tags = vec![Tag::O; tokens.len()];
    for m in mentions {
        let mut first = true;
        for (i, tok) in tokens.iter().enumerate() {
            if tok.span.overlaps(m) && tags[i] == Tag::O {
                tags[i] = if first { Tag::B } else { Tag::I };
                first = false;
            }
        }
    }
    TagSequence(tags)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSequence {
    pub claim_id: String,
    pub tokens: Vec<Token>,
    pub features: Vec<FeatureVector>,
    pub gold: TagSequence,
}

/// Training sequences for claims with at least one gold mention inside the
/// extractor's view; other claims are skipped.
pub fn build_training_sequences(
    claims: &[ClaimRef<'_>],
    featurizer: &dyn Featurizer,
    config: &ExtractorConfig,
) -> Result<Vec<TrainingSequence>> {
    let mut out = Vec::new();
    for c in claims {
        let tokens = claim_tokens(c.doc, c.claim, config);
        let gold = gold_tags(&tokens, &c.claim.gold_mentions);
        if !gold.has_mention() {
            continue;
        }
        let features = featurizer.featurize_sequence(&tokens)?;
        out.push(TrainingSequence {
            claim_id: c.claim.id.clone(),
            tokens,
            features,
            gold,
        });
    }
    Ok(out)
}

#[derive(Default)]
struct Averaged {
    weights: CrfModel,
    /// Sum of `step * update`, for the lazy averaging trick.
    acc: CrfModel,
    step: f64,
}

impl Default for CrfModel {
    fn default() -> Self {
        CrfModel::zeros(0)
    }
}

impl Averaged {
    fn add_emission(&mut self, fv: &FeatureVector, tag: Tag, sign: f64) {
        for (id, v) in fv.iter() {
            self.weights.emissions.entry(id).or_insert([0.0; NUM_TAGS])[tag.index()] += sign * v;
            self.acc.emissions.entry(id).or_insert([0.0; NUM_TAGS])[tag.index()] +=
                sign * v * self.step;
        }
    }

    fn add_path(&mut self, tags: &[Tag], sign: f64) {
        let c = self.step;
        let first = tags[0].index();
        let last = tags[tags.len() - 1].index();
        self.weights.start[first] += sign;
        self.acc.start[first] += sign * c;
        self.weights.end[last] += sign;
        self.acc.end[last] += sign * c;
        for w in tags.windows(2) {
            let (a, b) = (w[0].index(), w[1].index());
            self.weights.transitions[a][b] += sign;
            self.acc.transitions[a][b] += sign * c;
        }
    }

    fn finish(self, hash_space: u32) -> CrfModel {
        let c = self.step;
        let avg = |w: f64, a: f64| w - a / c;
        let mut m = CrfModel::zeros(hash_space);
        for (id, w) in &self.weights.emissions {
            let a = self.acc.emissions.get(id).copied().unwrap_or([0.0; NUM_TAGS]);
            let v = [avg(w[0], a[0]), avg(w[1], a[1]), avg(w[2], a[2])];
            if v.iter().any(|x| *x != 0.0) {
                m.emissions.insert(*id, v);
            }
        }
        for i in 0..NUM_TAGS {
            m.start[i] = avg(self.weights.start[i], self.acc.start[i]);
            m.end[i] = avg(self.weights.end[i], self.acc.end[i]);
            for j in 0..NUM_TAGS {
                m.transitions[i][j] = avg(self.weights.transitions[i][j], self.acc.transitions[i][j]);
            }
        }
        m
    }
}

/// Averaged structured perceptron. Each epoch visits the sequences in an
/// order shuffled by a ChaCha8 stream seeded with `seed`; mismatching
/// predictions from the constrained decoder trigger `gold − predicted`
/// updates.
pub fn train_extractor(
    sequences: &[TrainingSequence],
    hash_space: u32,
    epochs: usize,
    seed: u64,
) -> Result<CrfModel> {
    if epochs == 0 {
        return Err(Error::Training("epochs must be at least 1".into()));
    }
    for s in sequences {
        if !s.gold.is_valid() {
            return Err(Error::InvalidTags {
                claim_id: s.claim_id.clone(),
            });
        }
        if s.features.len() != s.gold.len() {
            return Err(Error::LengthMismatch {
                features: s.features.len(),
                tags: s.gold.len(),
            });
        }
    }
    let mut state = Averaged {
        step: 1.0,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &k in &order {
            let seq = &sequences[k];
            if seq.gold.is_empty() {
                continue;
            }
            let emit = state.weights.emission_scores(&seq.features);
            let pred = decode_scores(&state.weights, &emit, true);
            if pred != seq.gold {
                for (t, fv) in seq.features.iter().enumerate() {
                    let (g, p) = (seq.gold.0[t], pred.0[t]);
                    if g != p {
                        state.add_emission(fv, g, 1.0);
                        state.add_emission(fv, p, -1.0);
                    }
                }
                state.add_path(&seq.gold.0, 1.0);
                state.add_path(&pred.0, -1.0);
            }
            state.step += 1.0;
        }
    }
    Ok(state.finish(hash_space))
}

const TRIM_CHARS: &[char] = &[
    ',', ';', ':', '!', '?', '"', '\'', '(', ')', '[', ']', '{', '}', '„', '“', '”', '‚', '‘', '’',
    '«', '»',
];

fn trim_span(chars: &[char], span: Span) -> Span {
    let (mut s, mut e) = (span.start, span.end);
    while s < e && TRIM_CHARS.contains(&chars[s]) {
        s += 1;
    }
    while e > s && TRIM_CHARS.contains(&chars[e - 1]) {
        e -= 1;
    }
    if s == e {
        span
    } else {
        Span::new(s, e)
    }
}

/// Character spans for the mention runs of `tags`, with quote and clause
/// punctuation trimmed from the edges.
pub fn tags_to_spans(doc: &Document, tokens: &[Token], tags: &TagSequence) -> Vec<Span> {
    let chars: Vec<char> = doc.text.chars().collect();
    tags.mention_runs()
        .into_iter()
        .map(|(a, b)| trim_span(&chars, Span::new(tokens[a].span.start, tokens[b - 1].span.end)))
        .collect()
}

pub fn check_hash_space(what: &str, model_space: u32, configured: u32) -> Result<()> {
    if model_space != configured {
        return Err(Error::Config(format!(
            "{what} was trained with hash_space {model_space}, but hash_space {configured} is configured"
        )));
    }
    Ok(())
}

/// Actor mention spans for a claim; never empty for a non-empty document.
pub fn extract_mentions(
    model: &CrfModel,
    featurizer: &dyn Featurizer,
    config: &ExtractorConfig,
    doc: &Document,
    claim: &ClaimInstance,
) -> Result<Vec<Span>> {
    check_hash_space("extractor model", model.hash_space, featurizer.hash_space())?;
    let tokens = claim_tokens(doc, claim, config);
    let features = featurizer.featurize_sequence(&tokens)?;
    let tags = constrained_viterbi(model, &features)?;
    Ok(tags_to_spans(doc, &tokens, &tags))
}
