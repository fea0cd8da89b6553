//! Command-line interface and persisted run records.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::canonicalizer::{
    build_class_inventory, canonicalizer_examples, pipeline_predict, train_canonicalizer, CanonModel,
    CanonicalizerConfig,
};
use crate::corpus::{all_claims, parse_corpus, save_corpus, split_dataset, ClaimRef, Document, Partition, SplitSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate_run, AliasTable, EvalReport, Scores, Setting};
use crate::extractor::{build_training_sequences, train_extractor, CrfModel, ExtractorConfig};
use crate::featurize::{EmbeddingConfig, EmbeddingFeaturizer, Featurizer, HashedFeaturizer, DEFAULT_HASH_SPACE};
use crate::hybrid::{hybrid_predict, train_hybrid, HybridConfig, HybridModel};
use crate::llm::{
    llm_predict_batch, write_fixture, Exemplar, ExemplarOrder, FixtureClient, HttpChatClient, LlmClient,
    LlmConfig,
};
use crate::synth::{fixture_entries, generate, SynthConfig};

pub const DEFAULT_SEED: u64 = 13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeaturizeConfig {
    pub hash_space: u32,
    pub embedding: Option<EmbeddingConfig>,
}

impl Default for FeaturizeConfig {
    fn default() -> Self {
        FeaturizeConfig {
            hash_space: DEFAULT_HASH_SPACE,
            embedding: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub alias_table: Option<PathBuf>,
    pub settings: Vec<Setting>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            alias_table: None,
            settings: Setting::ALL.to_vec(),
        }
    }
}

/// Configuration file layout; every section is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub featurize: FeaturizeConfig,
    pub extractor: ExtractorConfig,
    pub canonicalizer: CanonicalizerConfig,
    pub hybrid: HybridConfig,
    pub llm: LlmConfig,
    pub eval: EvalConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: DEFAULT_SEED,
            output_dir: PathBuf::from("runs"),
            featurize: FeaturizeConfig::default(),
            extractor: ExtractorConfig::default(),
            canonicalizer: CanonicalizerConfig::default(),
            hybrid: HybridConfig::default(),
            llm: LlmConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn featurizer(&self) -> Box<dyn Featurizer> {
        let base = HashedFeaturizer {
            hash_space: self.featurize.hash_space,
        };
        match &self.featurize.embedding {
            Some(config) => Box::new(EmbeddingFeaturizer {
                base,
                config: config.clone(),
            }),
            None => Box::new(base),
        }
    }

    pub fn aliases(&self) -> Result<AliasTable> {
        match &self.eval.alias_table {
            Some(p) => AliasTable::load(p),
            None => Ok(AliasTable::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub claim_id: String,
    pub predictions: Vec<String>,
    pub gold: Vec<String>,
    pub llm_raw: Option<String>,
    pub llm_cleaned: Option<String>,
    pub latency_ms: Option<u64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub kind: String,
    pub partition: Option<String>,
    pub entries: Vec<RunEntry>,
    pub eval_mode: String,
    pub metrics: Vec<Scores>,
}

pub fn config_hash(config: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(config.to_string().as_bytes()))
}

impl RunRecord {
    /// Build a record and score its entries.
    pub fn new(
        kind: &str,
        partition: Option<Partition>,
        config: serde_json::Value,
        entries: Vec<RunEntry>,
        settings: &[Setting],
        aliases: &AliasTable,
    ) -> Result<Self> {
        let created_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        let hash = config_hash(&config);
        let report = score_entries(&entries, settings, aliases)?;
        Ok(RunRecord {
            run_id: format!("{created_at}-{}", &hash[..12]),
            created_at,
            config_hash: hash,
            config,
            kind: kind.to_string(),
            partition: partition.map(|p| partition_name(p).to_string()),
            entries,
            eval_mode: report.mode,
            metrics: report.settings,
        })
    }

    pub fn verify(&self) -> Result<()> {
        if config_hash(&self.config) != self.config_hash {
            return Err(Error::Config(format!(
                "run {}: config hash does not match the embedded config",
                self.run_id
            )));
        }
        Ok(())
    }

    pub fn predictions(&self) -> BTreeMap<String, Vec<String>> {
        self.entries
            .iter()
            .map(|e| (e.claim_id.clone(), e.predictions.clone()))
            .collect()
    }

    pub fn gold(&self) -> BTreeMap<String, Vec<String>> {
        self.entries
            .iter()
            .map(|e| (e.claim_id.clone(), e.gold.clone()))
            .collect()
    }

    pub fn scores(&self, setting: Setting) -> Option<&Scores> {
        self.metrics.iter().find(|s| s.setting == setting)
    }
}

fn score_entries(entries: &[RunEntry], settings: &[Setting], aliases: &AliasTable) -> Result<EvalReport> {
    let preds = entries
        .iter()
        .map(|e| (e.claim_id.clone(), e.predictions.clone()))
        .collect();
    let gold = entries
        .iter()
        .map(|e| (e.claim_id.clone(), e.gold.clone()))
        .collect();
    evaluate_run(&preds, &gold, settings, aliases)
}

fn partition_name(p: Partition) -> &'static str {
    match p {
        Partition::Train => "train",
        Partition::Dev => "dev",
        Partition::Test => "test",
    }
}

fn refuse_overwrite(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Exists(path.to_path_buf()));
    }
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        _ => Ok(()),
    }
}

/// Write a run record as JSON. An existing file is only replaced with
/// `force`.
pub fn persist_run(record: &RunRecord, path: impl AsRef<Path>, force: bool) -> Result<()> {
    let path = path.as_ref();
    refuse_overwrite(path, force)?;
    ensure_parent(path)?;
    let json = serde_json::to_string_pretty(record).map_err(|e| Error::json("run record", e))?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_run(path: impl AsRef<Path>) -> Result<RunRecord> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let record: RunRecord =
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
    record.verify()?;
    Ok(record)
}

#[derive(Debug, Parser)]
#[command(name = "actorid", version, about = "Canonical actor identification for marked claims")]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    hash_space: Option<u32>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Overwrite existing output files.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Corpus JSONL file.
    #[arg(long)]
    corpus: PathBuf,
    /// Split file; without it every claim is used.
    #[arg(long)]
    split: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus, split, alias table and LLM replay fixture.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_claims: Option<usize>,
    },
    TrainExtractor {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    TrainCanonicalizer {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        min_frequency: Option<usize>,
    },
    TrainHybrid {
        #[command(flatten)]
        data: DataArgs,
        /// Run record holding LLM predictions for the training claims.
        #[arg(long)]
        llm_run: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        no_adopt_llm: bool,
        #[arg(long)]
        top_n: Option<usize>,
    },
    /// Pipeline (or hybrid) predictions for one partition.
    Predict {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "test")]
        partition: String,
        #[arg(long)]
        extractor: PathBuf,
        #[arg(long, required_unless_present = "hybrid")]
        canonicalizer: Option<PathBuf>,
        #[arg(long, requires = "llm_run")]
        hybrid: Option<PathBuf>,
        /// Run record with LLM predictions for the partition (hybrid only).
        #[arg(long)]
        llm_run: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prompt the LLM for every claim of one partition.
    LlmPredict {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "test")]
        partition: String,
        /// Replay responses from a fixture file instead of calling the endpoint.
        #[arg(long)]
        llm_fixture: Option<PathBuf>,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        template: Option<u8>,
        #[arg(long)]
        n_exemplars: Option<usize>,
        #[arg(long, value_parser = parse_order)]
        exemplar_order: Option<ExemplarOrder>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        parallelism: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a run record.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        /// Corpus to take gold actors from; defaults to the gold stored in the record.
        #[arg(long)]
        gold: Option<PathBuf>,
        /// exact, formatting, canonicalization or all; repeatable.
        #[arg(long, default_value = "all")]
        setting: Vec<String>,
        #[arg(long)]
        aliases: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also print a plain-text table.
        #[arg(long)]
        table: bool,
    },
    /// Print stored metrics of one or more run records as a table.
    Report {
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
    },
}

fn parse_order(s: &str) -> std::result::Result<ExemplarOrder, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("expected similar-first, similar-last or as-given, got {s:?}"))
}

/// Digest of a run record without its run id and creation time, so that
/// re-running an upstream step does not change downstream records.
fn run_digest(path: &Path) -> Result<String> {
    let mut record = read_run(path)?;
    record.run_id.clear();
    record.created_at = 0;
    let json = serde_json::to_vec(&record).map_err(|e| Error::json("run record", e))?;
    Ok(hex::encode(Sha256::digest(json)))
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Effective configuration plus digests of the input files, as stored in a
/// run record.
fn snapshot(config: &Config, command: &str, inputs: &[(&str, &Path)]) -> Result<serde_json::Value> {
    let mut digests = serde_json::Map::new();
    for (name, path) in inputs {
        let digest = if *name == "llm_run" { run_digest(path)? } else { file_digest(path)? };
        digests.insert(name.to_string(), serde_json::Value::String(digest));
    }
    let mut value = serde_json::to_value(config).map_err(|e| Error::json("config", e))?;
    let obj = value.as_object_mut().expect("config serializes to an object");
    obj.insert("command".into(), command.into());
    obj.insert("inputs".into(), serde_json::Value::Object(digests));
    Ok(value)
}

struct Data {
    docs: Vec<Document>,
    split: Option<SplitSpec>,
}

impl Data {
    fn load(args: &DataArgs) -> Result<Self> {
        let docs = parse_corpus(&args.corpus)?;
        let split = args.split.as_ref().map(SplitSpec::load).transpose()?;
        Ok(Data { docs, split })
    }

    fn claims(&self, partition: Option<Partition>) -> Result<Vec<ClaimRef<'_>>> {
        match (&self.split, partition) {
            (Some(spec), Some(p)) => Ok(split_dataset(&self.docs, spec)?.get(p).to_vec()),
            (None, _) | (_, None) => Ok(all_claims(&self.docs)),
        }
    }

    fn inputs<'a>(&self, args: &'a DataArgs) -> Vec<(&'static str, &'a Path)> {
        let mut v = vec![("corpus", args.corpus.as_path())];
        if let Some(s) = &args.split {
            v.push(("split", s.as_path()));
        }
        v
    }
}

fn settings_from(values: &[String]) -> Result<Vec<Setting>> {
    let mut out = Vec::new();
    for v in values {
        if v == "all" {
            out.extend(Setting::ALL);
        } else {
            out.push(v.parse()?);
        }
    }
    out.dedup();
    Ok(out)
}

fn default_run_path(config: &Config, record: &RunRecord) -> PathBuf {
    config
        .output_dir
        .join(format!("{}-{}.json", record.kind, record.run_id))
}

fn save_model(path: &Path, force: bool, save: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    refuse_overwrite(path, force)?;
    ensure_parent(path)?;
    save(path)
}

fn llm_answers(record: &RunRecord) -> BTreeMap<String, &RunEntry> {
    record.entries.iter().map(|e| (e.claim_id.clone(), e)).collect()
}

struct Context {
    config: Config,
    force: bool,
}

impl Context {
    fn run(&self, command: Command) -> Result<()> {
        let cfg = &self.config;
        match command {
            Command::Synth { out, n_claims } => {
                let synth = SynthConfig {
                    n_claims: n_claims.unwrap_or(SynthConfig::default().n_claims),
                    seed: cfg.seed,
                    ..Default::default()
                };
                let corpus = generate(&synth);
                std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
                let files = ["corpus.jsonl", "split.json", "aliases.json", "llm_fixture.jsonl"].map(|f| out.join(f));
                for f in &files {
                    refuse_overwrite(f, self.force)?;
                }
                save_corpus(&corpus.docs, &files[0])?;
                crate::canonicalizer::write_json(&files[1], &corpus.split)?;
                crate::canonicalizer::write_json(&files[2], &corpus.aliases)?;
                write_fixture(&fixture_entries(&corpus, &cfg.llm.prompt)?, &files[3])?;
                println!("wrote {} claims to {}", synth.n_claims, out.display());
            }
            Command::TrainExtractor { data, out, epochs } => {
                let d = Data::load(&data)?;
                let claims = d.claims(Some(Partition::Train))?;
                let featurizer = cfg.featurizer();
                let mut xcfg = cfg.extractor.clone();
                xcfg.epochs = epochs.unwrap_or(xcfg.epochs);
                let seqs = build_training_sequences(&claims, featurizer.as_ref(), &xcfg)?;
                let model = train_extractor(&seqs, cfg.featurize.hash_space, xcfg.epochs, cfg.seed)?;
                save_model(&out, self.force, |p| model.save(p))?;
                println!("trained extractor on {} sequences -> {}", seqs.len(), out.display());
            }
            Command::TrainCanonicalizer { data, out, epochs, min_frequency } => {
                let d = Data::load(&data)?;
                let claims = d.claims(Some(Partition::Train))?;
                let hs = cfg.featurize.hash_space;
                let min_freq = min_frequency.unwrap_or(cfg.canonicalizer.min_frequency);
                let inv = build_class_inventory(claims.iter().map(|c| c.claim), min_freq)?;
                let n_classes = inv.len();
                let examples = canonicalizer_examples(&claims, &inv, hs)?;
                let epochs = epochs.unwrap_or(cfg.canonicalizer.epochs);
                let model = train_canonicalizer(&examples, inv, hs, epochs, cfg.seed)?;
                save_model(&out, self.force, |p| model.save(p))?;
                println!("trained canonicalizer with {n_classes} classes -> {}", out.display());
            }
            Command::TrainHybrid { data, llm_run, out, epochs, no_adopt_llm, top_n } => {
                let d = Data::load(&data)?;
                let claims = d.claims(Some(Partition::Train))?;
                let record = read_run(&llm_run)?;
                let answers: BTreeMap<String, String> = record
                    .entries
                    .iter()
                    .map(|e| (e.claim_id.clone(), e.llm_cleaned.clone().unwrap_or_default()))
                    .collect();
                let mut hcfg = cfg.hybrid.clone();
                hcfg.epochs = epochs.unwrap_or(hcfg.epochs);
                hcfg.adopt_llm = hcfg.adopt_llm && !no_adopt_llm;
                hcfg.top_n = top_n.unwrap_or(hcfg.top_n);
                let model = train_hybrid(&claims, &answers, &hcfg, cfg.featurize.hash_space, cfg.seed)?;
                save_model(&out, self.force, |p| model.save(p))?;
                println!("trained hybrid canonicalizer -> {}", out.display());
            }
            Command::Predict { data, partition, extractor, canonicalizer, hybrid, llm_run, out } => {
                let d = Data::load(&data)?;
                let partition: Partition = partition.parse()?;
                let claims = d.claims(Some(partition))?;
                let featurizer = cfg.featurizer();
                let crf = CrfModel::load(&extractor)?;
                let mut inputs = d.inputs(&data);
                inputs.push(("extractor", extractor.as_path()));
                let mut entries = Vec::with_capacity(claims.len());
                let kind;
                if let Some(hpath) = &hybrid {
                    kind = "hybrid";
                    let model = HybridModel::load(hpath)?;
                    let lpath = llm_run.as_ref().expect("clap enforces --llm-run with --hybrid");
                    let record = read_run(lpath)?;
                    let answers = llm_answers(&record);
                    inputs.push(("hybrid", hpath.as_path()));
                    inputs.push(("llm_run", lpath.as_path()));
                    for c in &claims {
                        let e = answers.get(c.id()).ok_or_else(|| {
                            Error::ClaimMismatch(format!("{:?} missing from LLM run {}", c.id(), record.run_id))
                        })?;
                        let predictions = hybrid_predict(
                            &crf,
                            &model,
                            featurizer.as_ref(),
                            &cfg.extractor,
                            c.doc,
                            c.claim,
                            e.llm_cleaned.as_deref(),
                        )?;
                        entries.push(RunEntry {
                            claim_id: c.id().to_string(),
                            predictions,
                            gold: c.claim.gold_actors.clone(),
                            llm_raw: e.llm_raw.clone(),
                            llm_cleaned: e.llm_cleaned.clone(),
                            latency_ms: None,
                            error: None,
                        });
                    }
                } else {
                    kind = "pipeline";
                    let cpath = canonicalizer.as_ref().expect("clap enforces --canonicalizer");
                    let canon = CanonModel::load(cpath)?;
                    inputs.push(("canonicalizer", cpath.as_path()));
                    for c in &claims {
                        let predictions =
                            pipeline_predict(&crf, &canon, featurizer.as_ref(), &cfg.extractor, c.doc, c.claim)?;
                        entries.push(RunEntry {
                            claim_id: c.id().to_string(),
                            predictions,
                            gold: c.claim.gold_actors.clone(),
                            llm_raw: None,
                            llm_cleaned: None,
                            latency_ms: None,
                            error: None,
                        });
                    }
                }
                let snap = snapshot(cfg, kind, &inputs)?;
                let record = RunRecord::new(kind, Some(partition), snap, entries, &cfg.eval.settings, &cfg.aliases()?)?;
                self.finish_run(record, out)?;
            }
            Command::LlmPredict {
                data,
                partition,
                llm_fixture,
                endpoint,
                model,
                template,
                n_exemplars,
                exemplar_order,
                window,
                parallelism,
                out,
            } => {
                let mut lcfg = cfg.llm.clone();
                lcfg.endpoint = endpoint.unwrap_or(lcfg.endpoint);
                lcfg.model = model.unwrap_or(lcfg.model);
                lcfg.prompt.template_id = template.unwrap_or(lcfg.prompt.template_id);
                lcfg.prompt.n_exemplars = n_exemplars.unwrap_or(lcfg.prompt.n_exemplars);
                lcfg.prompt.exemplar_order = exemplar_order.unwrap_or(lcfg.prompt.exemplar_order);
                lcfg.prompt.window_sentences = window.unwrap_or(lcfg.prompt.window_sentences);
                lcfg.parallelism = parallelism.unwrap_or(lcfg.parallelism);
                let mut effective = cfg.clone();
                effective.llm = lcfg.clone();

                let d = Data::load(&data)?;
                let partition: Partition = partition.parse()?;
                let claims = d.claims(Some(partition))?;
                let (pool, pool_ids) = if lcfg.prompt.n_exemplars > 0 {
                    let train = d.claims(Some(Partition::Train))?;
                    let pool: Vec<Exemplar> = train
                        .iter()
                        .map(|c| Exemplar::from_claim(*c, lcfg.prompt.window_sentences))
                        .collect();
                    (pool, train.iter().map(|c| c.id().to_string()).collect())
                } else {
                    (Vec::new(), Vec::new())
                };
                let mut inputs = d.inputs(&data);
                let client: Box<dyn LlmClient> = match &llm_fixture {
                    Some(path) => {
                        inputs.push(("llm_fixture", path.as_path()));
                        Box::new(FixtureClient::load(path)?)
                    }
                    None => Box::new(HttpChatClient::new(&lcfg.endpoint, Duration::from_millis(lcfg.timeout_ms))),
                };
                let outcomes = llm_predict_batch(client.as_ref(), &lcfg, &claims, &pool, &pool_ids)?;
                let entries = claims
                    .iter()
                    .zip(outcomes)
                    .map(|(c, o)| RunEntry {
                        claim_id: o.claim_id,
                        predictions: o.predictions,
                        gold: c.claim.gold_actors.clone(),
                        llm_raw: o.raw,
                        llm_cleaned: o.cleaned,
                        latency_ms: o.latency_ms,
                        error: o.error,
                    })
                    .collect();
                let snap = snapshot(&effective, "llm", &inputs)?;
                let record = RunRecord::new("llm", Some(partition), snap, entries, &cfg.eval.settings, &cfg.aliases()?)?;
                self.finish_run(record, out)?;
            }
            Command::Evaluate { pred, gold, setting, aliases, out, table } => {
                let record = read_run(&pred)?;
                let settings = settings_from(&setting)?;
                let aliases = match aliases {
                    Some(p) => AliasTable::load(p)?,
                    None => cfg.aliases()?,
                };
                let gold_map = match gold {
                    Some(path) => {
                        let docs = parse_corpus(&path)?;
                        let all: BTreeMap<&str, &Vec<String>> = all_claims(&docs)
                            .into_iter()
                            .map(|c| (c.id(), &c.claim.gold_actors))
                            .collect();
                        record
                            .entries
                            .iter()
                            .map(|e| {
                                all.get(e.claim_id.as_str())
                                    .map(|g| (e.claim_id.clone(), (*g).clone()))
                                    .ok_or_else(|| {
                                        Error::ClaimMismatch(format!("{:?} not in {}", e.claim_id, path.display()))
                                    })
                            })
                            .collect::<Result<BTreeMap<_, _>>>()?
                    }
                    None => record.gold(),
                };
                let report = evaluate_run(&record.predictions(), &gold_map, &settings, &aliases)?;
                let out = out.unwrap_or_else(|| pred.with_extension("report.json"));
                refuse_overwrite(&out, self.force)?;
                ensure_parent(&out)?;
                let output = ReportFile {
                    run_id: record.run_id.clone(),
                    kind: record.kind.clone(),
                    config: record.config.clone(),
                    report,
                };
                crate::canonicalizer::write_json(&out, &output)?;
                if table {
                    print!("{}", output.report.table(&format!("{} ({})", record.kind, record.run_id)));
                }
                println!("wrote report to {}", out.display());
            }
            Command::Report { runs } => {
                for path in runs {
                    let record = read_run(&path)?;
                    let report = EvalReport {
                        mode: record.eval_mode.clone(),
                        settings: record.metrics.clone(),
                        matches: Vec::new(),
                    };
                    print!("{}", report.table(&format!("{} ({})", record.kind, record.run_id)));
                }
            }
        }
        Ok(())
    }

    fn finish_run(&self, record: RunRecord, out: Option<PathBuf>) -> Result<()> {
        let path = out.unwrap_or_else(|| default_run_path(&self.config, &record));
        persist_run(&record, &path, self.force)?;
        if let Some(s) = record.scores(Setting::Exact) {
            println!("{} run {}: exact F1 {:.2}", record.kind, record.run_id, 100.0 * s.f1);
        }
        println!("wrote run record to {}", path.display());
        Ok(())
    }
}

/// Evaluation output: the report plus the configuration of the scored run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub run_id: String,
    pub kind: String,
    pub config: serde_json::Value,
    #[serde(flatten)]
    pub report: EvalReport,
}

/// Parse `argv` (program name first), run the command and return the exit
/// code: 0 on success, 1 on failure, 2 on usage errors.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let mut config = match &cli.config {
        Some(p) => match Config::load(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return 1;
            }
        },
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(h) = cli.hash_space {
        config.featurize.hash_space = h;
    }
    if let Some(d) = cli.output_dir {
        config.output_dir = d;
    }
    let ctx = Context {
        config,
        force: cli.force,
    };
    match ctx.run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, pred: &[&str], gold: &[&str]) -> RunEntry {
        RunEntry {
            claim_id: id.into(),
            predictions: pred.iter().map(|s| s.to_string()).collect(),
            gold: gold.iter().map(|s| s.to_string()).collect(),
            llm_raw: None,
            llm_cleaned: None,
            latency_ms: None,
            error: None,
        }
    }

    #[test]
    fn config_sections_default() {
        let c: Config = serde_json::from_str(r#"{"featurize": {"hash_space": 4096}}"#).unwrap();
        assert_eq!(c.featurize.hash_space, 4096);
        assert_eq!(c.seed, DEFAULT_SEED);
        assert_eq!(c.extractor, ExtractorConfig::default());
    }

    #[test]
    fn record_hash_and_metrics() {
        let r = RunRecord::new(
            "pipeline",
            Some(Partition::Test),
            serde_json::json!({"seed": 13}),
            vec![entry("a", &["Merkel"], &["Angela Merkel"])],
            &Setting::ALL,
            &AliasTable::default(),
        )
        .unwrap();
        r.verify().unwrap();
        assert_eq!(r.scores(Setting::Exact).unwrap().f1, 0.0);
        assert_eq!(r.scores(Setting::Canonicalization).unwrap().f1, 1.0);
        let mut bad = r.clone();
        bad.config = serde_json::json!({"seed": 14});
        assert!(bad.verify().is_err());
    }

    #[test]
    fn persist_refuses_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        let r = RunRecord::new(
            "llm",
            None,
            serde_json::json!({}),
            vec![entry("a", &[], &["X"])],
            &[Setting::Exact],
            &AliasTable::default(),
        )
        .unwrap();
        persist_run(&r, &path, false).unwrap();
        assert_eq!(read_run(&path).unwrap(), r);
        assert!(matches!(persist_run(&r, &path, false), Err(Error::Exists(_))));
        persist_run(&r, &path, true).unwrap();
    }

    #[test]
    fn usage_errors_exit_nonzero() {
        assert_eq!(run_command(["actorid", "frobnicate"]), 2);
        assert_eq!(run_command(["actorid", "evaluate", "--bogus"]), 2);
        assert_eq!(run_command(["actorid", "evaluate", "--pred", "/nonexistent/run.json"]), 1);
    }
}
