#![allow(dead_code)]

use std::collections::BTreeMap;

use actorid::canonicalizer::{
    build_class_inventory, canonicalizer_examples, pipeline_predict, train_canonicalizer, CanonModel,
};
use actorid::corpus::{split_dataset, ClaimRef, Span};
use actorid::eval::{evaluate_run, span_scores, EvalReport, Setting, SpanScores};
use actorid::extractor::{build_training_sequences, extract_mentions, train_extractor, CrfModel, ExtractorConfig};
use actorid::featurize::{HashedFeaturizer, DEFAULT_HASH_SPACE};
use actorid::hybrid::{hybrid_predict, train_hybrid, HybridConfig, HybridModel};
use actorid::llm::{llm_predict_batch, FixtureClient, LlmConfig};
use actorid::synth::{fixture_entries, generate, SynthConfig, SyntheticCorpus};

pub const SEED: u64 = 13;

pub struct Experiment {
    pub crf: CrfModel,
    pub canon: CanonModel,
    pub hybrid: HybridModel,
    pub gold: BTreeMap<String, Vec<String>>,
    pub pipeline: BTreeMap<String, Vec<String>>,
    pub llm: BTreeMap<String, Vec<String>>,
    pub hybrid_preds: BTreeMap<String, Vec<String>>,
    pub spans: SpanScores,
    pub canon_accuracy: f64,
}

impl Experiment {
    pub fn report(&self, preds: &BTreeMap<String, Vec<String>>, corpus: &SyntheticCorpus) -> EvalReport {
        evaluate_run(preds, &self.gold, &Setting::ALL, &corpus.aliases).unwrap()
    }
}

pub fn corpus() -> SyntheticCorpus {
    generate(&SynthConfig::default())
}

fn cleaned_llm(claims: &[ClaimRef<'_>], corpus: &SyntheticCorpus, cfg: &LlmConfig) -> BTreeMap<String, Vec<String>> {
    let client = FixtureClient::from_entries(fixture_entries(corpus, &cfg.prompt).unwrap());
    llm_predict_batch(&client, cfg, claims, &[], &[])
        .unwrap()
        .into_iter()
        .map(|o| (o.claim_id, o.predictions))
        .collect()
}

pub fn run(corpus: &SyntheticCorpus, hash_space: u32) -> Experiment {
    let split = split_dataset(&corpus.docs, &corpus.split).unwrap();
    let featurizer = HashedFeaturizer { hash_space };
    let xcfg = ExtractorConfig::default();
    let seqs = build_training_sequences(&split.train, &featurizer, &xcfg).unwrap();
    let crf = train_extractor(&seqs, hash_space, xcfg.epochs, SEED).unwrap();
    let inv = build_class_inventory(split.train.iter().map(|c| c.claim), 2).unwrap();
    let ex = canonicalizer_examples(&split.train, &inv, hash_space).unwrap();
    let canon = train_canonicalizer(&ex, inv, hash_space, 10, SEED).unwrap();

    let llm_cfg = LlmConfig { parallelism: 4, ..Default::default() };
    let llm_train: BTreeMap<String, String> = cleaned_llm(&split.train, corpus, &llm_cfg)
        .into_iter()
        .map(|(k, v)| (k, v.into_iter().next().unwrap_or_default()))
        .collect();
    let hybrid = train_hybrid(&split.train, &llm_train, &HybridConfig::default(), hash_space, SEED).unwrap();
    let llm = cleaned_llm(&split.test, corpus, &llm_cfg);

    let mut gold = BTreeMap::new();
    let mut pipeline = BTreeMap::new();
    let mut hybrid_preds = BTreeMap::new();
    let mut span_pairs: Vec<(Vec<Span>, Vec<Span>)> = Vec::new();
    let mut correct = 0;
    let mut total = 0;
    for c in &split.test {
        let id = c.id().to_string();
        gold.insert(id.clone(), c.claim.gold_actors.clone());
        pipeline.insert(id.clone(), pipeline_predict(&crf, &canon, &featurizer, &xcfg, c.doc, c.claim).unwrap());
        let answer = llm[&id].first().map(String::as_str);
        hybrid_preds.insert(
            id.clone(),
            hybrid_predict(&crf, &hybrid, &featurizer, &xcfg, c.doc, c.claim, answer).unwrap(),
        );
        let predicted = extract_mentions(&crf, &featurizer, &xcfg, c.doc, c.claim).unwrap();
        span_pairs.push((predicted, c.claim.gold_mentions.clone()));
        for (span, actor) in actorid::canonicalizer::mention_actor_pairs(c.claim) {
            total += 1;
            if actorid::canonicalizer::canonicalize(&canon, c.doc, c.claim, span).unwrap() == actor {
                correct += 1;
            }
        }
    }
    let spans = span_scores(span_pairs.iter().map(|(p, g)| (p.as_slice(), g.as_slice())));
    Experiment {
        crf,
        canon,
        hybrid,
        gold,
        pipeline,
        llm,
        hybrid_preds,
        spans,
        canon_accuracy: correct as f64 / total as f64,
    }
}

pub fn default_run(corpus: &SyntheticCorpus) -> Experiment {
    run(corpus, DEFAULT_HASH_SPACE)
}

pub mod oracle {
    use actorid::eval::{equivalent, AliasTable, Setting};
    use actorid::extractor::{score_path, CrfModel, Tag, TagSequence, NUM_TAGS};
    use actorid::featurize::FeatureVector;
    use rand::Rng;

    pub const HASH_SPACE: u32 = 64;

    /// Random model and feature sequence. With `integral` every weight is a
    /// small integer, which makes exact score ties common.
    pub fn random_instance(rng: &mut impl Rng, len: usize, integral: bool) -> (CrfModel, Vec<FeatureVector>) {
        let draw = |rng: &mut dyn rand::RngCore| -> f64 {
            if integral {
                rng.gen_range(-2i32..=2) as f64
            } else {
                rng.gen_range(-3.0..3.0)
            }
        };
        let mut m = CrfModel::zeros(HASH_SPACE);
        for id in 0..8u32 {
            let w = [draw(rng), draw(rng), draw(rng)];
            m.emissions.insert(id, w);
        }
        for i in 0..NUM_TAGS {
            m.start[i] = draw(rng);
            m.end[i] = draw(rng);
            for j in 0..NUM_TAGS {
                m.transitions[i][j] = draw(rng);
            }
        }
        let feats = (0..len)
            .map(|_| {
                let k = rng.gen_range(1..=3);
                FeatureVector::from_entries((0..k).map(|_| (rng.gen_range(0..10u32), 1.0)).collect())
            })
            .collect();
        (m, feats)
    }

    /// Every BIO-valid tag sequence of length `n`, in lexicographic order
    /// under O < B-ACT < I-ACT.
    pub fn bio_paths(n: usize) -> Vec<TagSequence> {
        fn rec(prefix: &mut Vec<Tag>, n: usize, out: &mut Vec<TagSequence>) {
            if prefix.len() == n {
                out.push(TagSequence(prefix.clone()));
                return;
            }
            for t in Tag::ALL {
                if Tag::can_follow(prefix.last().copied(), t) {
                    prefix.push(t);
                    rec(prefix, n, out);
                    prefix.pop();
                }
            }
        }
        let mut out = Vec::new();
        rec(&mut Vec::new(), n, &mut out);
        out
    }

    /// First path (in lexicographic order) with the maximal score.
    pub fn brute_force(model: &CrfModel, feats: &[FeatureVector], require_mention: bool) -> (TagSequence, f64) {
        let mut best: Option<(TagSequence, f64)> = None;
        for p in bio_paths(feats.len()) {
            if require_mention && !p.has_mention() {
                continue;
            }
            let s = score_path(model, feats, &p).unwrap();
            if best.as_ref().is_none_or(|(_, b)| s > *b) {
                best = Some((p, s));
            }
        }
        best.expect("at least one admissible path")
    }

    /// Largest injective pred→gold assignment by exhaustive search.
    pub fn brute_matching(preds: &[String], golds: &[String], setting: Setting, aliases: &AliasTable) -> usize {
        fn rec(i: usize, used: &mut Vec<bool>, preds: &[String], golds: &[String], s: Setting, a: &AliasTable) -> usize {
            if i == preds.len() {
                return 0;
            }
            let mut best = rec(i + 1, used, preds, golds, s, a);
            for g in 0..golds.len() {
                if !used[g] && equivalent(&preds[i], &golds[g], s, a) {
                    used[g] = true;
                    best = best.max(1 + rec(i + 1, used, preds, golds, s, a));
                    used[g] = false;
                }
            }
            best
        }
        rec(0, &mut vec![false; golds.len()], preds, golds, setting, aliases)
    }

    pub const SURFACES: &[&str] = &[
        "Angela Merkel", "Merkel", "merkel", "Merkel.", "Kanzlerin Merkel", "Horst Seehofer", "Seehofer",
        "CSU", "die CSU", "Die CSU", "EU-Kommission", "die EU-Kommission", "Jean-Claude Juncker", "Juncker",
        "Olaf Scholz", " olaf  scholz", "Sprecher der Caritas", "ein Sprecher der Caritas", "U.S. official",
    ];

    pub fn random_set(rng: &mut impl Rng, max: usize) -> Vec<String> {
        let n = rng.gen_range(0..=max);
        (0..n).map(|_| SURFACES[rng.gen_range(0..SURFACES.len())].to_string()).collect()
    }
}
