//! End-to-end actor prediction with a chat LLM.
//!
//! The claim is wrapped in literal `<claim>` / `<\claim>` tags inside a
//! sentence window, substituted into one of four instruction templates, and
//! sent as a single user message with temperature 0.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{ClaimInstance, ClaimRef, Document, Span};
use crate::error::{Error, Result};
use crate::featurize::{feature_id, FeatureVector};

pub const ARTICLE_PLACEHOLDER: &str = "[ARTICLE]";
pub const CLAIM_OPEN: &str = "<claim>";
pub const CLAIM_CLOSE: &str = "<\\claim>";
pub const API_KEY_ENV: &str = "ACTORID_LLM_API_KEY";

const TEMPLATES: [&str; 4] = [
    "Extract only the entity that made the claim in the article. The claim is surrounded with <claim> and <\\claim> tags. Output only the entity without any additional explanation. Article: [ARTICLE]",
    "Extract and standardize only the entity that made the marked claim in the article. The claim is surrounded with <claim> and <\\claim> tags. Output only the standardized entity without any additional explanation. Article: [ARTICLE]",
    "Retrieve the party or parties responsible for the statement in the given article, contained within <claim> and <\\claim> tags. Output only the entity without further elaboration. Article:[ARTICLE]",
    "Identify and output the entity or entities that made the claim within the specified article, enclosed by <claim> and <\\claim> tags. Do not include any supplementary information. Article: [ARTICLE]",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: u8,
    pub instruction: &'static str,
}

impl PromptTemplate {
    pub fn get(id: u8) -> Result<Self> {
        match id {
            1..=4 => Ok(PromptTemplate {
                id,
                instruction: TEMPLATES[usize::from(id - 1)],
            }),
            other => Err(Error::Config(format!("unknown prompt template {other} (expected 1-4)"))),
        }
    }

    pub fn render(&self, article: &str) -> String {
        self.instruction.replacen(ARTICLE_PLACEHOLDER, article, 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExemplarOrder {
    SimilarFirst,
    SimilarLast,
    AsGiven,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub template_id: u8,
    pub n_exemplars: usize,
    pub exemplar_order: ExemplarOrder,
    pub window_sentences: usize,
    pub max_prompt_chars: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            template_id: 1,
            n_exemplars: 0,
            exemplar_order: ExemplarOrder::SimilarFirst,
            window_sentences: 2,
            max_prompt_chars: 12_000,
        }
    }
}

/// Claim sentences plus up to `window_sentences` neighbours on each side,
/// with the claim wrapped in tags. While the result exceeds `max_chars`, the
/// farthest neighbour is dropped (following before preceding on ties); the
/// claim sentences themselves are always kept.
pub fn window_context(
    doc: &Document,
    claim: &ClaimInstance,
    window_sentences: usize,
    max_chars: Option<usize>,
) -> String {
    let sentences = doc.sentence_spans();
    let (first, last) = doc.claim_sentence_range(claim);
    let mut lo = first.saturating_sub(window_sentences);
    let mut hi = (last + window_sentences).min(sentences.len() - 1);
    let chars: Vec<char> = doc.text.chars().collect();
    loop {
        let text = render_window(&chars, &sentences, lo, hi, claim.claim_span);
        let too_long = max_chars.is_some_and(|m| text.chars().count() > m);
        if !too_long || (lo == first && hi == last) {
            return text;
        }
        if hi - last >= first - lo && hi > last {
            hi -= 1;
        } else {
            lo += 1;
        }
    }
}

fn render_window(chars: &[char], sentences: &[Span], lo: usize, hi: usize, claim: Span) -> String {
    let start = sentences[lo].start.min(claim.start);
    let end = sentences[hi].end.max(claim.end).min(chars.len());
    let mut out = String::new();
    for (i, &ch) in chars.iter().enumerate().take(end).skip(start) {
        if i == claim.start {
            out.push_str(CLAIM_OPEN);
        }
        if i == claim.end {
            out.push_str(CLAIM_CLOSE);
        }
        out.push(ch);
    }
    if claim.start >= end {
        out.push_str(CLAIM_OPEN);
    }
    if claim.end >= end {
        out.push_str(CLAIM_CLOSE);
    }
    out
}

/// Remove the claim tags from a windowed context.
pub fn strip_claim_tags(s: &str) -> String {
    s.replacen(CLAIM_OPEN, "", 1).replacen(CLAIM_CLOSE, "", 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    /// Windowed, tagged context.
    pub context: String,
    pub answer: String,
}

impl Exemplar {
    pub fn from_claim(c: ClaimRef<'_>, window_sentences: usize) -> Self {
        Exemplar {
            context: window_context(c.doc, c.claim, window_sentences, None),
            answer: c.claim.gold_actors.join("; "),
        }
    }
}

const BOW_SPACE: u32 = 1 << 18;

/// Hashed bag-of-words vector over lowercased whitespace tokens, claim tags
/// excluded.
pub fn bag_of_words(text: &str) -> FeatureVector {
    let plain = strip_claim_tags(text).to_lowercase();
    FeatureVector::from_entries(
        plain
            .split_whitespace()
            .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
            .filter(|w| !w.is_empty())
            .map(|w| (feature_id(w, BOW_SPACE), 1.0))
            .collect(),
    )
}

pub fn cosine(a: &FeatureVector, b: &FeatureVector) -> f64 {
    let norm = |v: &FeatureVector| v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().filter_map(|(id, x)| b.get(id).map(|y| x * y)).sum();
    dot / (na * nb)
}

/// Indices of the `k` pool items most similar to `query`, best first; ties
/// keep pool order.
pub fn select_exemplars_by(
    pool: &[Exemplar],
    k: usize,
    similarity: impl Fn(&Exemplar) -> f64,
) -> Result<Vec<usize>> {
    if k > pool.len() {
        return Err(Error::Config(format!(
            "requested {k} exemplars from a pool of {}",
            pool.len()
        )));
    }
    let mut scored: Vec<(usize, f64)> = pool.iter().map(&similarity).enumerate().collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored.into_iter().take(k).map(|(i, _)| i).collect())
}

/// Top-`k` exemplars by hashed bag-of-words cosine similarity.
pub fn select_exemplars(pool: &[Exemplar], query_context: &str, k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let q = bag_of_words(query_context);
    select_exemplars_by(pool, k, |e| cosine(&q, &bag_of_words(&e.context)))
}

/// Arrange selected exemplars (given best first) according to `order`.
pub fn order_exemplars<'a>(pool: &'a [Exemplar], selected: &[usize], order: ExemplarOrder) -> Vec<&'a Exemplar> {
    let mut idx = selected.to_vec();
    match order {
        ExemplarOrder::SimilarFirst => {}
        ExemplarOrder::SimilarLast => idx.reverse(),
        ExemplarOrder::AsGiven => idx.sort_unstable(),
    }
    idx.into_iter().map(|i| &pool[i]).collect()
}

/// Render the prompt. Exemplars, already in presentation order, precede the
/// query as `article / Answer:` pairs inside the template's article slot.
pub fn build_prompt(
    config: &PromptConfig,
    doc: &Document,
    claim: &ClaimInstance,
    exemplars: &[&Exemplar],
) -> Result<String> {
    let template = PromptTemplate::get(config.template_id)?;
    let article_label = if template.instruction.contains("Article: [ARTICLE]") {
        "Article: "
    } else {
        "Article:"
    };
    let mut prefix = String::new();
    for (i, e) in exemplars.iter().enumerate() {
        if i > 0 {
            prefix.push_str(article_label);
        }
        prefix.push_str(&e.context);
        prefix.push_str("\nAnswer: ");
        prefix.push_str(&e.answer);
        prefix.push_str("\n\n");
    }
    if !exemplars.is_empty() {
        prefix.push_str(article_label);
    }
    let fixed = template.render("").chars().count() + prefix.chars().count();
    let budget = config.max_prompt_chars.saturating_sub(fixed);
    let context = window_context(doc, claim, config.window_sentences, Some(budget));
    let prompt = template.render(&format!("{prefix}{context}"));
    let n = prompt.chars().count();
    if n > config.max_prompt_chars {
        return Err(Error::PromptTooLong {
            limit: config.max_prompt_chars,
            actual: n,
        });
    }
    Ok(prompt)
}

fn boilerplate_suffix() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\s+(the\s+(claim|entity|actor|answer|statement)\b.*)$").unwrap()
    })
}

fn boilerplate_prefix() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^the\s+(entity|actor|answer)(\s+that\s+made\s+the\s+(marked\s+)?claim)?\s+(is|was)\s*:?\s+",
        )
        .unwrap()
    })
}

fn leading_label() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^(answer|entity|actor|output|antwort)\s*:\s*").unwrap())
}

const QUOTES: &[char] = &['"', '\'', '„', '“', '”', '‚', '‘', '’', '«', '»', '`', '*'];

fn clean_pass(s: &str) -> String {
    let s = s.trim_start();
    let s = s.split(['\n', '\r']).next().unwrap_or("");
    let s = leading_label().replace(s, "");
    let s = boilerplate_prefix().replace(&s, "");
    let s = boilerplate_suffix().replace(&s, "");
    s.trim().trim_matches(QUOTES).trim().to_string()
}

/// Clean a raw completion: first line only, leading labels and echoed
/// boilerplate removed, quotes and whitespace stripped. `None` marks a failed
/// prediction.
pub fn postprocess(raw: &str) -> Option<String> {
    let mut current = raw.to_string();
    loop {
        let next = clean_pass(&current);
        if next == current {
            break;
        }
        current = next;
    }
    (!current.is_empty()).then_some(current)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl ChatRequest {
    /// Single user turn with greedy decoding.
    pub fn greedy(model: &str, prompt: &str) -> Self {
        ChatRequest {
            model: model.to_string(),
            messages: vec![ChatMessage {
                role: "user".to_string(),
                content: prompt.to_string(),
            }],
            temperature: 0.0,
        }
    }

    pub fn prompt(&self) -> &str {
        self.messages.last().map_or("", |m| m.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub model: String,
    pub latency_ms: u64,
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<Completion>;
}

/// OpenAI-compatible `POST {endpoint}/chat/completions`.
#[derive(Debug, Clone)]
pub struct HttpChatClient {
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpChatClient {
    pub fn new(endpoint: &str, timeout: Duration) -> Self {
        HttpChatClient {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    #[serde(default)]
    model: Option<String>,
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

impl LlmClient for HttpChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<Completion> {
        let url = format!("{}/chat/completions", self.endpoint);
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let started = Instant::now();
        let response = req.send_json(request).map_err(|e| match e {
            ureq::Error::Status(code, _) if code >= 500 || code == 429 => {
                Error::Transient(format!("LLM endpoint returned {code}"))
            }
            ureq::Error::Status(code, _) => Error::Service(format!("LLM endpoint returned {code}")),
            ureq::Error::Transport(t) => Error::Transient(format!("LLM endpoint: {t}")),
        })?;
        let body: ChatResponse = response
            .into_json()
            .map_err(|e| Error::Service(format!("malformed chat completion: {e}")))?;
        let text = body
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| Error::Service("chat completion without choices".into()))?;
        Ok(Completion {
            text,
            model: body.model.unwrap_or_else(|| request.model.clone()),
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

/// Deterministic in-process client answering from a function of the prompt.
pub struct StubClient<F> {
    respond: F,
}

impl<F: Fn(&str) -> String + Send + Sync> StubClient<F> {
    pub fn new(respond: F) -> Self {
        StubClient { respond }
    }
}

impl<F: Fn(&str) -> String + Send + Sync> LlmClient for StubClient<F> {
    fn complete(&self, request: &ChatRequest) -> Result<Completion> {
        Ok(Completion {
            text: (self.respond)(request.prompt()),
            model: "stub".to_string(),
            latency_ms: 0,
        })
    }
}

pub fn prompt_sha256(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub prompt_sha256: String,
    pub response: String,
}

/// Replays recorded responses keyed by the SHA-256 of the prompt.
#[derive(Debug, Clone, Default)]
pub struct FixtureClient {
    responses: HashMap<String, String>,
}

impl FixtureClient {
    pub fn from_entries(entries: impl IntoIterator<Item = FixtureEntry>) -> Self {
        FixtureClient {
            responses: entries
                .into_iter()
                .map(|e| (e.prompt_sha256, e.response))
                .collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: FixtureEntry =
                serde_json::from_str(line).map_err(|source| Error::Parse { line: i + 1, source })?;
            entries.push(e);
        }
        Ok(Self::from_entries(entries))
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

pub fn write_fixture(entries: &[FixtureEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e).map_err(|err| Error::json("fixture", err))?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

impl LlmClient for FixtureClient {
    fn complete(&self, request: &ChatRequest) -> Result<Completion> {
        let key = prompt_sha256(request.prompt());
        let text = self
            .responses
            .get(&key)
            .cloned()
            .ok_or_else(|| Error::Service(format!("no fixture response for prompt {key}")))?;
        Ok(Completion {
            text,
            model: "fixture".to_string(),
            latency_ms: 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout_ms: u64,
    pub max_retries: usize,
    pub backoff_ms: u64,
    pub parallelism: usize,
    pub prompt: PromptConfig,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint: "http://127.0.0.1:8000/v1".to_string(),
            model: "llama-2-70b-chat".to_string(),
            timeout_ms: 120_000,
            max_retries: 3,
            backoff_ms: 500,
            parallelism: 4,
            prompt: PromptConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmOutcome {
    pub claim_id: String,
    pub template_id: u8,
    pub prompt_sha256: String,
    pub model: Option<String>,
    pub raw: Option<String>,
    pub cleaned: Option<String>,
    pub predictions: Vec<String>,
    pub latency_ms: Option<u64>,
    pub error: Option<String>,
}

/// Call the client with exponential backoff on retryable errors.
pub fn complete_with_retries(
    client: &dyn LlmClient,
    request: &ChatRequest,
    max_retries: usize,
    backoff: Duration,
) -> Result<Completion> {
    let mut attempt = 0;
    loop {
        match client.complete(request) {
            Err(e) if e.is_retryable() && attempt < max_retries => {
                std::thread::sleep(backoff * 2u32.saturating_pow(attempt as u32));
                attempt += 1;
            }
            other => return other,
        }
    }
}

/// Prompt the LLM once for a claim. Transport failures are recorded in the
/// outcome rather than returned.
pub fn llm_predict(
    client: &dyn LlmClient,
    config: &LlmConfig,
    doc: &Document,
    claim: &ClaimInstance,
    exemplars: &[&Exemplar],
) -> Result<LlmOutcome> {
    let prompt = build_prompt(&config.prompt, doc, claim, exemplars)?;
    let request = ChatRequest::greedy(&config.model, &prompt);
    let mut outcome = LlmOutcome {
        claim_id: claim.id.clone(),
        template_id: config.prompt.template_id,
        prompt_sha256: prompt_sha256(&prompt),
        model: None,
        raw: None,
        cleaned: None,
        predictions: Vec::new(),
        latency_ms: None,
        error: None,
    };
    match complete_with_retries(
        client,
        &request,
        config.max_retries,
        Duration::from_millis(config.backoff_ms),
    ) {
        Ok(c) => {
            outcome.cleaned = postprocess(&c.text);
            outcome.predictions = outcome.cleaned.iter().cloned().collect();
            outcome.raw = Some(c.text);
            outcome.model = Some(c.model);
            outcome.latency_ms = Some(c.latency_ms);
        }
        Err(e) => outcome.error = Some(e.to_string()),
    }
    Ok(outcome)
}

/// Exemplars for one query claim, drawn from `pool` and never including the
/// query itself.
pub fn exemplars_for<'a>(
    config: &PromptConfig,
    pool: &'a [Exemplar],
    pool_ids: &[String],
    query: ClaimRef<'_>,
) -> Result<Vec<&'a Exemplar>> {
    if config.n_exemplars == 0 {
        return Ok(Vec::new());
    }
    let query_ctx = window_context(query.doc, query.claim, config.window_sentences, None);
    let mut selected = select_exemplars(pool, &query_ctx, config.n_exemplars.min(pool.len()))?;
    if selected.iter().any(|&i| pool_ids[i] == query.claim.id) {
        selected = select_exemplars(pool, &query_ctx, (config.n_exemplars + 1).min(pool.len()))?;
        selected.retain(|&i| pool_ids[i] != query.claim.id);
        selected.truncate(config.n_exemplars);
    }
    Ok(order_exemplars(pool, &selected, config.exemplar_order))
}

/// Run `llm_predict` for many claims with at most `config.parallelism`
/// requests in flight. Outcomes are returned in input order.
pub fn llm_predict_batch(
    client: &dyn LlmClient,
    config: &LlmConfig,
    claims: &[ClaimRef<'_>],
    pool: &[Exemplar],
    pool_ids: &[String],
) -> Result<Vec<LlmOutcome>> {
    let prepared: Vec<Vec<&Exemplar>> = claims
        .iter()
        .map(|c| exemplars_for(&config.prompt, pool, pool_ids, *c))
        .collect::<Result<_>>()?;
    let slots: Vec<Mutex<Option<Result<LlmOutcome>>>> = claims.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = config.parallelism.max(1).min(claims.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= claims.len() {
                    break;
                }
                let c = claims[k];
                let r = llm_predict(client, config, c.doc, c.claim, &prepared[k]);
                *slots[k].lock().unwrap() = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("every claim is processed"))
        .collect()
}
