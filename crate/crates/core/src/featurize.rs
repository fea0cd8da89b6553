//! Tokenization and hashed sparse features.
//!
//! Claim marking is carried by per-token fields (`in_claim`,
//! `distance_to_claim`) so character offsets stay untouched. Feature names are
//! hashed with 64-bit FNV-1a and reduced modulo the hash space.

use std::hash::Hasher;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::corpus::{sentence_at, ClaimInstance, Document, Span};
use crate::error::{Error, Result};

pub const DEFAULT_HASH_SPACE: u32 = 1 << 20;

/// `distance_to_claim` is clipped to this magnitude when featurized.
pub const MAX_DISTANCE_FEATURE: i32 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub span: Span,
    pub sentence_index: usize,
    pub in_claim: bool,
    /// Signed sentence distance to the claim; 0 iff the token's sentence
    /// overlaps the claim span.
    pub distance_to_claim: i32,
}

/// Split the document into maximal non-whitespace runs and attach
/// claim-relative position information.
pub fn tokenize(doc: &Document, claim: &ClaimInstance) -> Vec<Token> {
    let sentences = doc.sentence_spans();
    let (first, last) = doc.claim_sentence_range(claim);
    let mut tokens = Vec::new();
    let mut current: Option<(usize, String)> = None;

    let flush = |start: usize, end: usize, text: String, tokens: &mut Vec<Token>| {
        let span = Span::new(start, end);
        let sentence_index = sentence_at(&sentences, start);
        let distance_to_claim = if sentence_index < first {
            sentence_index as i32 - first as i32
        } else if sentence_index > last {
            sentence_index as i32 - last as i32
        } else {
            0
        };
        tokens.push(Token {
            text,
            span,
            sentence_index,
            in_claim: span.overlaps(&claim.claim_span),
            distance_to_claim,
        });
    };

    let mut n = 0;
    for (i, ch) in doc.text.chars().enumerate() {
        n = i + 1;
        if ch.is_whitespace() {
            if let Some((start, text)) = current.take() {
                flush(start, i, text, &mut tokens);
            }
        } else {
            current.get_or_insert_with(|| (i, String::new())).1.push(ch);
        }
    }
    if let Some((start, text)) = current.take() {
        flush(start, n, text, &mut tokens);
    }
    tokens
}

/// Sparse feature vector: `(feature id, value)` pairs sorted by id, with
/// colliding ids summed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(mut entries: Vec<(u32, f64)>) -> Self {
        entries.sort_by_key(|&(id, _)| id);
        let mut merged: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
        for (id, v) in entries {
            match merged.last_mut() {
                Some((last, acc)) if *last == id => *acc += v,
                _ => merged.push((id, v)),
            }
        }
        FeatureVector { entries: merged }
    }

    /// Indicator vector for a list of feature names.
    pub fn from_names<S: AsRef<str>>(names: impl IntoIterator<Item = S>, hash_space: u32) -> Self {
        Self::from_entries(
            names
                .into_iter()
                .map(|n| (feature_id(n.as_ref(), hash_space), 1.0))
                .collect(),
        )
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<f64> {
        self.entries
            .binary_search_by_key(&id, |&(i, _)| i)
            .ok()
            .map(|k| self.entries[k].1)
    }

    /// Direct sum: values of ids present in both are added.
    pub fn concat(&self, other: &FeatureVector) -> FeatureVector {
        let mut all = self.entries.clone();
        all.extend_from_slice(&other.entries);
        Self::from_entries(all)
    }

    pub fn max_id(&self) -> Option<u32> {
        self.entries.last().map(|&(id, _)| id)
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

pub fn feature_id(name: &str, hash_space: u32) -> u32 {
    (fnv1a64(name.as_bytes()) % u64::from(hash_space.max(1))) as u32
}

/// Capitalization/digit pattern with repeated classes collapsed:
/// `Merkel` → `Xx`, `EU-Kommission` → `X-Xx`, `2015` → `d`.
pub fn word_shape(word: &str) -> String {
    let mut shape = String::new();
    for ch in word.chars() {
        let class = if ch.is_uppercase() {
            'X'
        } else if ch.is_lowercase() {
            'x'
        } else if ch.is_numeric() {
            'd'
        } else {
            ch
        };
        if !shape.ends_with(class) {
            shape.push(class);
        }
    }
    shape
}

/// Character trigrams of `^word$`.
pub fn char_trigrams(word: &str) -> Vec<String> {
    let padded: Vec<char> = std::iter::once('^')
        .chain(word.chars())
        .chain(std::iter::once('$'))
        .collect();
    padded.windows(3).map(|w| w.iter().collect()).collect()
}

fn word_at(tokens: &[Token], index: isize) -> String {
    if index < 0 {
        "<s>".to_string()
    } else if index as usize >= tokens.len() {
        "</s>".to_string()
    } else {
        tokens[index as usize].text.to_lowercase()
    }
}

/// Hashed features for one token: word, shape, trigrams, neighbouring words,
/// and claim-relative position, plus a few conjunctions of these.
pub fn featurize_token(tokens: &[Token], index: usize, hash_space: u32) -> Result<FeatureVector> {
    let token = tokens.get(index).ok_or(Error::IndexOutOfRange {
        index,
        len: tokens.len(),
    })?;
    let i = index as isize;
    let word = token.text.to_lowercase();
    let shape = word_shape(&token.text);
    let prev = word_at(tokens, i - 1);
    let next = word_at(tokens, i + 1);
    let prev2 = word_at(tokens, i - 2);
    let next2 = word_at(tokens, i + 2);
    let in_claim = u8::from(token.in_claim);
    let dist = token
        .distance_to_claim
        .clamp(-MAX_DISTANCE_FEATURE, MAX_DISTANCE_FEATURE);
    let next_in_claim = tokens.get(index + 1).map_or(0, |t| u8::from(t.in_claim));
    let prev_in_claim = index
        .checked_sub(1)
        .map_or(0, |p| u8::from(tokens[p].in_claim));

    let mut names = vec![
        "bias".to_string(),
        format!("w={word}"),
        format!("shape={shape}"),
        format!("prev={prev}"),
        format!("next={next}"),
        format!("prev2={prev2}"),
        format!("next2={next2}"),
        format!("in_claim={in_claim}"),
        format!("dist={dist}"),
        format!("dist={dist}|in_claim={in_claim}"),
        format!("shape={shape}|dist={dist}|in_claim={in_claim}"),
        format!("next={next}|dist={dist}"),
        format!("prev={prev}|dist={dist}"),
        format!("w={word}|dist={dist}|in_claim={in_claim}"),
        format!("claim_edge={prev_in_claim}{in_claim}{next_in_claim}"),
    ];
    names.extend(char_trigrams(&word).into_iter().map(|g| format!("c3={g}")));
    Ok(FeatureVector::from_names(names, hash_space))
}

/// Source of per-token feature vectors for a claim's token sequence.
pub trait Featurizer: Send + Sync {
    fn hash_space(&self) -> u32;

    fn featurize_sequence(&self, tokens: &[Token]) -> Result<Vec<FeatureVector>>;
}

/// Deterministic built-in featurizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedFeaturizer {
    pub hash_space: u32,
}

impl Default for HashedFeaturizer {
    fn default() -> Self {
        HashedFeaturizer {
            hash_space: DEFAULT_HASH_SPACE,
        }
    }
}

impl Featurizer for HashedFeaturizer {
    fn hash_space(&self) -> u32 {
        self.hash_space
    }

    fn featurize_sequence(&self, tokens: &[Token]) -> Result<Vec<FeatureVector>> {
        (0..tokens.len())
            .map(|i| featurize_token(tokens, i, self.hash_space))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub endpoint: String,
    pub dimension: usize,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
    /// Tokens per request.
    pub batch_size: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            endpoint: "http://127.0.0.1:8088".to_string(),
            dimension: 768,
            timeout_ms: 30_000,
            max_in_flight: 4,
            batch_size: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f64>>,
}

fn embed_url(endpoint: &str) -> String {
    format!("{}/embed", endpoint.trim_end_matches('/'))
}

fn post_embed(agent: &ureq::Agent, url: &str, request: &EmbedRequest) -> Result<EmbedResponse> {
    let response = agent.post(url).send_json(request).map_err(|e| match e {
        ureq::Error::Status(code, _) if code >= 500 || code == 429 => {
            Error::Transient(format!("embedding service returned {code}"))
        }
        ureq::Error::Status(code, _) => Error::Service(format!("embedding service returned {code}")),
        ureq::Error::Transport(t) => Error::Transient(format!("embedding service: {t}")),
    })?;
    response
        .into_json::<EmbedResponse>()
        .map_err(|e| Error::Service(format!("malformed embedding response: {e}")))
}

/// Fetch one vector per token from the embedding service. Requests are
/// batched and at most `max_in_flight` batches are outstanding at once;
/// results come back in token order.
pub fn fetch_embeddings(config: &EmbeddingConfig, tokens: &[Token]) -> Result<Vec<Vec<f64>>> {
    if config.max_in_flight == 0 || config.batch_size == 0 {
        return Err(Error::Config(
            "embedding max_in_flight and batch_size must be positive".into(),
        ));
    }
    if tokens.is_empty() {
        return Ok(Vec::new());
    }
    let agent = ureq::AgentBuilder::new()
        .timeout(Duration::from_millis(config.timeout_ms))
        .build();
    let url = embed_url(&config.endpoint);
    let batches: Vec<EmbedRequest> = tokens
        .chunks(config.batch_size)
        .map(|chunk| EmbedRequest {
            tokens: chunk.iter().map(|t| t.text.clone()).collect(),
        })
        .collect();

    let results: Vec<Mutex<Option<Result<EmbedResponse>>>> =
        batches.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = config.max_in_flight.min(batches.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= batches.len() {
                    break;
                }
                let r = post_embed(&agent, &url, &batches[k]);
                *results[k].lock().unwrap() = Some(r);
            });
        }
    });

    let mut vectors = Vec::with_capacity(tokens.len());
    for (batch, slot) in batches.iter().zip(results) {
        let response = slot.into_inner().unwrap().expect("every batch is processed")?;
        if response.vectors.len() != batch.tokens.len() {
            return Err(Error::Service(format!(
                "embedding service returned {} vectors for {} tokens",
                response.vectors.len(),
                batch.tokens.len()
            )));
        }
        for v in response.vectors {
            if v.len() != config.dimension {
                return Err(Error::Config(format!(
                    "embedding dimension mismatch: configured {}, service returned {}",
                    config.dimension,
                    v.len()
                )));
            }
            vectors.push(v);
        }
    }
    Ok(vectors)
}

/// Bucket each dimension into one of 17 levels and hash `(dimension, level)`
/// into a sparse indicator.
pub fn quantize_embedding(vector: &[f64], hash_space: u32) -> FeatureVector {
    FeatureVector::from_names(
        vector.iter().enumerate().map(|(d, v)| {
            let level = if v.is_finite() {
                (v * 4.0).round().clamp(-8.0, 8.0) as i32
            } else {
                0
            };
            format!("emb{d}={level}")
        }),
        hash_space,
    )
}

/// Hashed features extended with quantized embeddings from the external
/// service.
#[derive(Debug, Clone)]
pub struct EmbeddingFeaturizer {
    pub base: HashedFeaturizer,
    pub config: EmbeddingConfig,
}

impl Featurizer for EmbeddingFeaturizer {
    fn hash_space(&self) -> u32 {
        self.base.hash_space
    }

    fn featurize_sequence(&self, tokens: &[Token]) -> Result<Vec<FeatureVector>> {
        let base = self.base.featurize_sequence(tokens)?;
        let vectors = fetch_embeddings(&self.config, tokens)?;
        Ok(base
            .iter()
            .zip(&vectors)
            .map(|(fv, v)| fv.concat(&quantize_embedding(v, self.base.hash_space)))
            .collect())
    }
}
