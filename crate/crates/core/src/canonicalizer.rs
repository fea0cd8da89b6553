//! Mention → canonical actor name classification.
//!
//! Classes are the canonical names seen at least `min_frequency` times in
//! training, plus `VERBATIM` (index 0), which copies the mention text. The
//! hybrid model adds `ADOPT_LLM` as the last class.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ClaimInstance, ClaimRef, Document, Span};
use crate::error::{Error, Result};
use crate::extractor::{check_hash_space, extract_mentions, CrfModel, ExtractorConfig};
use crate::featurize::{char_trigrams, tokenize, FeatureVector, Featurizer, MAX_DISTANCE_FEATURE};

pub const VERBATIM_LABEL: &str = "<VERBATIM>";
pub const ADOPT_LLM_LABEL: &str = "<ADOPT_LLM>";
pub const CONTEXT_WINDOW: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CanonClass<'a> {
    Verbatim,
    Named(&'a str),
    AdoptLlm,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassInventory {
    /// Named classes, most frequent first; class index = position + 1.
    pub names: Vec<String>,
    pub min_frequency: usize,
    pub adopt_llm: bool,
}

impl ClassInventory {
    pub fn len(&self) -> usize {
        1 + self.names.len() + usize::from(self.adopt_llm)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn class(&self, index: usize) -> Option<CanonClass<'_>> {
        match index {
            0 => Some(CanonClass::Verbatim),
            i if i <= self.names.len() => Some(CanonClass::Named(&self.names[i - 1])),
            i if self.adopt_llm && i == self.names.len() + 1 => Some(CanonClass::AdoptLlm),
            _ => None,
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name).map(|i| i + 1)
    }

    pub fn adopt_index(&self) -> Option<usize> {
        self.adopt_llm.then(|| self.names.len() + 1)
    }

    /// Training label for a gold actor: its named class, else `VERBATIM`.
    pub fn label_for(&self, actor: &str) -> usize {
        self.index_of(actor).unwrap_or(0)
    }

    pub fn with_adopt_llm(mut self, enabled: bool) -> Self {
        self.adopt_llm = enabled;
        self
    }

    pub fn labels(&self) -> Vec<String> {
        let mut out = vec![VERBATIM_LABEL.to_string()];
        out.extend(self.names.iter().cloned());
        if self.adopt_llm {
            out.push(ADOPT_LLM_LABEL.to_string());
        }
        out
    }

    pub fn from_labels(labels: &[String], min_frequency: usize) -> Result<Self> {
        if labels.first().map(String::as_str) != Some(VERBATIM_LABEL) {
            return Err(Error::Config(format!(
                "class inventory must start with {VERBATIM_LABEL}"
            )));
        }
        let adopt_llm = labels.len() > 1 && labels.last().map(String::as_str) == Some(ADOPT_LLM_LABEL);
        let end = labels.len() - usize::from(adopt_llm);
        let names = labels[1..end].to_vec();
        if names.iter().any(|n| n == VERBATIM_LABEL || n == ADOPT_LLM_LABEL) {
            return Err(Error::Config("reserved class label in inventory".into()));
        }
        Ok(ClassInventory {
            names,
            min_frequency,
            adopt_llm,
        })
    }
}

/// Named classes: canonical actors occurring at least `min_frequency` times
/// among the training claims' gold actors, ordered by descending frequency
/// and then lexicographically.
pub fn build_class_inventory<'a>(
    train_claims: impl IntoIterator<Item = &'a ClaimInstance>,
    min_frequency: usize,
) -> Result<ClassInventory> {
    if min_frequency == 0 {
        return Err(Error::Training("min_frequency must be at least 1".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut n_claims = 0;
    for claim in train_claims {
        n_claims += 1;
        for actor in &claim.gold_actors {
            *counts.entry(actor.as_str()).or_default() += 1;
        }
    }
    if n_claims == 0 {
        return Err(Error::Training("empty training set".into()));
    }
    let mut frequent: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_frequency)
        .collect();
    frequent.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(ClassInventory {
        names: frequent.into_iter().map(|(n, _)| n.to_string()).collect(),
        min_frequency,
        adopt_llm: false,
    })
}

/// Pair gold mentions with gold actors: a single actor labels every mention;
/// otherwise mentions and actors are zipped, with surplus mentions taking the
/// last actor.
pub fn mention_actor_pairs(claim: &ClaimInstance) -> Vec<(Span, &str)> {
    let actors = &claim.gold_actors;
    claim
        .gold_mentions
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| {
            let actor = actors.get(i).or_else(|| actors.last())?;
            Some((m, actor.as_str()))
        })
        .collect()
}

fn clip_distance(d: i32) -> i32 {
    d.clamp(-MAX_DISTANCE_FEATURE, MAX_DISTANCE_FEATURE)
}

/// Surface, trigram, context and position features for a mention.
pub fn mention_features(
    doc: &Document,
    claim: &ClaimInstance,
    mention: Span,
    hash_space: u32,
) -> Result<FeatureVector> {
    let len = doc.char_len();
    if mention.start >= mention.end || mention.end > len {
        return Err(Error::InvalidSpan {
            start: mention.start,
            end: mention.end,
            len,
        });
    }
    let surface = doc.slice(mention);
    let lower = surface.to_lowercase();
    let words: Vec<&str> = lower.split_whitespace().collect();
    let tokens = tokenize(doc, claim);
    let inside: Vec<usize> = tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.span.overlaps(&mention))
        .map(|(i, _)| i)
        .collect();

    let mut names = vec![
        format!("m={surface}"),
        format!("ml={lower}"),
        format!("mlen={}", words.len().min(5)),
    ];
    if let (Some(first), Some(last)) = (words.first(), words.last()) {
        names.push(format!("mfirst={first}"));
        names.push(format!("mlast={last}"));
    }
    names.extend(words.iter().map(|w| format!("mw={w}")));
    names.extend(char_trigrams(&lower).into_iter().map(|g| format!("m3={g}")));

    if let (Some(&a), Some(&b)) = (inside.first(), inside.last()) {
        names.push(format!("sd={}", clip_distance(tokens[a].distance_to_claim)));
        for k in 1..=CONTEXT_WINDOW {
            let before = a
                .checked_sub(k)
                .map_or("<s>".to_string(), |i| tokens[i].text.to_lowercase());
            let after = tokens
                .get(b + k)
                .map_or("</s>".to_string(), |t| t.text.to_lowercase());
            names.push(format!("ctx-{k}={before}"));
            names.push(format!("ctx+{k}={after}"));
        }
    } else {
        names.push("sd=none".to_string());
    }
    Ok(FeatureVector::from_names(names, hash_space))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CanonicalizerConfig {
    pub epochs: usize,
    pub min_frequency: usize,
}

impl Default for CanonicalizerConfig {
    fn default() -> Self {
        CanonicalizerConfig {
            epochs: 10,
            min_frequency: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CanonModel {
    pub inventory: ClassInventory,
    pub hash_space: u32,
    /// One sparse weight map per class index.
    pub weights: Vec<HashMap<u32, f64>>,
}

impl CanonModel {
    pub fn zeros(inventory: ClassInventory, hash_space: u32) -> Self {
        let weights = vec![HashMap::new(); inventory.len()];
        CanonModel {
            inventory,
            hash_space,
            weights,
        }
    }

    pub fn scores(&self, fv: &FeatureVector) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| fv.iter().map(|(id, v)| v * w.get(&id).copied().unwrap_or(0.0)).sum())
            .collect()
    }

    /// Argmax class; ties go to the lower inventory index.
    pub fn predict_class(&self, fv: &FeatureVector) -> usize {
        self.predict_class_with(fv, true)
    }

    /// Argmax class, leaving out `ADOPT_LLM` unless `adopt_feasible`.
    pub fn predict_class_with(&self, fv: &FeatureVector, adopt_feasible: bool) -> usize {
        let mut scores = self.scores(fv);
        if let (false, Some(a)) = (adopt_feasible, self.inventory.adopt_index()) {
            scores[a] = f64::NEG_INFINITY;
        }
        argmax(&scores)
    }

    /// Output string for a predicted class.
    pub fn resolve(&self, class: usize, mention_text: &str, llm_prediction: Option<&str>) -> String {
        match self.inventory.class(class) {
            Some(CanonClass::Named(name)) => name.to_string(),
            Some(CanonClass::AdoptLlm) => match llm_prediction {
                Some(p) if !p.trim().is_empty() => p.to_string(),
                _ => mention_text.to_string(),
            },
            Some(CanonClass::Verbatim) | None => mention_text.to_string(),
        }
    }

    pub fn to_file(&self) -> CanonModelFile {
        let weights = self
            .weights
            .iter()
            .enumerate()
            .map(|(k, w)| {
                let inner: BTreeMap<String, f64> = w
                    .iter()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(id, v)| (id.to_string(), *v))
                    .collect();
                (k.to_string(), inner)
            })
            .collect();
        CanonModelFile {
            inventory: self.inventory.labels(),
            min_frequency: self.inventory.min_frequency,
            hash_space: self.hash_space,
            weights,
        }
    }

    pub fn from_file(file: CanonModelFile) -> Result<Self> {
        let inventory = ClassInventory::from_labels(&file.inventory, file.min_frequency)?;
        let mut model = CanonModel::zeros(inventory, file.hash_space);
        for (k, inner) in file.weights {
            let k: usize = k
                .parse()
                .map_err(|_| Error::Config(format!("bad class index {k:?}")))?;
            let slot = model
                .weights
                .get_mut(k)
                .ok_or_else(|| Error::Config(format!("class index {k} outside inventory")))?;
            for (id, v) in inner {
                let id: u32 = id
                    .parse()
                    .map_err(|_| Error::Config(format!("bad feature id {id:?}")))?;
                if id >= file.hash_space || !v.is_finite() {
                    return Err(Error::Config(format!("invalid weight for feature {id}")));
                }
                slot.insert(id, v);
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), &self.to_file())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        CanonModel::from_file(read_json(path.as_ref())?)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonModelFile {
    pub inventory: Vec<String>,
    pub min_frequency: usize,
    pub hash_space: u32,
    pub weights: BTreeMap<String, BTreeMap<String, f64>>,
}

pub(crate) fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = k;
        }
    }
    best
}

/// Averaged multiclass perceptron over `(features, class index)` pairs.
pub fn train_canonicalizer(
    examples: &[(FeatureVector, usize)],
    inventory: ClassInventory,
    hash_space: u32,
    epochs: usize,
    seed: u64,
) -> Result<CanonModel> {
    train_canonicalizer_with(examples, inventory, hash_space, epochs, seed, |_| true)
}

/// As [`train_canonicalizer`], where `adopt_feasible(k)` says whether
/// `ADOPT_LLM` may be predicted for example `k`.
pub fn train_canonicalizer_with(
    examples: &[(FeatureVector, usize)],
    inventory: ClassInventory,
    hash_space: u32,
    epochs: usize,
    seed: u64,
    adopt_feasible: impl Fn(usize) -> bool,
) -> Result<CanonModel> {
    if epochs == 0 {
        return Err(Error::Training("epochs must be at least 1".into()));
    }
    let n_classes = inventory.len();
    if let Some((_, bad)) = examples.iter().find(|(_, c)| *c >= n_classes) {
        return Err(Error::Training(format!(
            "gold class {bad} is not in the inventory of {n_classes} classes"
        )));
    }
    let mut model = CanonModel::zeros(inventory, hash_space);
    let mut acc: Vec<HashMap<u32, f64>> = vec![HashMap::new(); n_classes];
    let mut step = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &k in &order {
            let (fv, gold) = &examples[k];
            let pred = model.predict_class_with(fv, adopt_feasible(k));
            if pred != *gold {
                for (id, v) in fv.iter() {
                    *model.weights[*gold].entry(id).or_default() += v;
                    *acc[*gold].entry(id).or_default() += v * step;
                    *model.weights[pred].entry(id).or_default() -= v;
                    *acc[pred].entry(id).or_default() -= v * step;
                }
            }
            step += 1.0;
        }
    }
    for (w, a) in model.weights.iter_mut().zip(&acc) {
        for (id, v) in w.iter_mut() {
            *v -= a.get(id).copied().unwrap_or(0.0) / step;
        }
        w.retain(|_, v| *v != 0.0);
    }
    Ok(model)
}

/// Labelled examples from the training claims' gold mentions.
pub fn canonicalizer_examples(
    claims: &[ClaimRef<'_>],
    inventory: &ClassInventory,
    hash_space: u32,
) -> Result<Vec<(FeatureVector, usize)>> {
    let mut out = Vec::new();
    for c in claims {
        for (span, actor) in mention_actor_pairs(c.claim) {
            let fv = mention_features(c.doc, c.claim, span, hash_space)?;
            out.push((fv, inventory.label_for(actor)));
        }
    }
    Ok(out)
}

pub fn canonicalize(
    model: &CanonModel,
    doc: &Document,
    claim: &ClaimInstance,
    mention: Span,
) -> Result<String> {
    let fv = mention_features(doc, claim, mention, model.hash_space)?;
    let class = model.predict_class(&fv);
    Ok(model.resolve(class, &doc.slice(mention), None))
}

/// Keep the first occurrence of each string.
pub fn dedup_preserving_order(items: Vec<String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(items.len());
    for s in items {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// Extract mentions, canonicalize each, and drop exact duplicates.
pub fn pipeline_predict(
    crf: &CrfModel,
    canon: &CanonModel,
    featurizer: &dyn Featurizer,
    config: &ExtractorConfig,
    doc: &Document,
    claim: &ClaimInstance,
) -> Result<Vec<String>> {
    check_hash_space("canonicalizer model", canon.hash_space, featurizer.hash_space())?;
    let mentions = extract_mentions(crf, featurizer, config, doc, claim)?;
    let out = mentions
        .into_iter()
        .map(|m| canonicalize(canon, doc, claim, m))
        .collect::<Result<Vec<_>>>()?;
    Ok(dedup_preserving_order(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn claim(id: &str, actors: &[&str]) -> ClaimInstance {
        ClaimInstance {
            id: id.into(),
            claim_span: Span::new(0, 0),
            gold_actors: actors.iter().map(|s| s.to_string()).collect(),
            gold_mentions: vec![],
        }
    }

    fn sample_doc() -> (Document, ClaimInstance) {
        let text = "Gestern sagte Senate Republicans etwas. Merkel sagte, X.";
        let c = ClaimInstance {
            id: "c".into(),
            claim_span: Span::new(54, 55),
            gold_actors: vec!["Angela Merkel".into()],
            gold_mentions: vec![Span::new(40, 46)],
        };
        let doc = Document {
            id: "d".into(),
            text: text.into(),
            sentences: vec![Span::new(0, 39), Span::new(40, 56)],
            claims: vec![c.clone()],
        };
        (doc, c)
    }

    #[test]
    fn inventory_threshold_and_order() {
        let claims = vec![
            claim("1", &["A"]),
            claim("2", &["B"]),
            claim("3", &["A"]),
            claim("4", &["C"]),
            claim("5", &["B"]),
            claim("6", &["A"]),
        ];
        let inv = build_class_inventory(&claims, 2).unwrap();
        assert_eq!(inv.labels(), vec!["<VERBATIM>", "A", "B"]);
        let inv1 = build_class_inventory(&claims, 1).unwrap();
        assert_eq!(inv1.labels(), vec!["<VERBATIM>", "A", "B", "C"]);
        assert_eq!(inv.label_for("C"), 0);
        assert_eq!(inv.label_for("B"), 2);
    }

    #[test]
    fn inventory_ties_are_lexicographic() {
        let claims = vec![claim("1", &["Zeta"]), claim("2", &["Alpha"])];
        let inv = build_class_inventory(&claims, 1).unwrap();
        assert_eq!(inv.names, vec!["Alpha", "Zeta"]);
    }

    #[test]
    fn inventory_errors() {
        assert!(build_class_inventory(&Vec::<ClaimInstance>::new(), 2).is_err());
        assert!(build_class_inventory(&[claim("1", &["A"])], 0).is_err());
    }

    #[test]
    fn labels_round_trip_with_adopt() {
        let inv = ClassInventory {
            names: vec!["A".into()],
            min_frequency: 2,
            adopt_llm: true,
        };
        let labels = inv.labels();
        assert_eq!(labels, vec!["<VERBATIM>", "A", "<ADOPT_LLM>"]);
        assert_eq!(ClassInventory::from_labels(&labels, 2).unwrap(), inv);
        assert_eq!(inv.class(2), Some(CanonClass::AdoptLlm));
        assert_eq!(inv.class(3), None);
    }

    #[test]
    fn zero_model_copies_mention() {
        let (doc, c) = sample_doc();
        let inv = ClassInventory {
            names: vec!["Angela Merkel".into()],
            min_frequency: 2,
            adopt_llm: false,
        };
        let m = CanonModel::zeros(inv, 1 << 12);
        assert_eq!(canonicalize(&m, &doc, &c, Span::new(40, 46)).unwrap(), "Merkel");
    }

    fn forced(inv: ClassInventory, class: usize) -> CanonModel {
        let mut m = CanonModel::zeros(inv, 1 << 12);
        // Every mention vector has an `mlen=` feature; put weight on all ids.
        for id in 0..(1u32 << 12) {
            m.weights[class].insert(id, 1.0);
        }
        m
    }

    #[test]
    fn forced_verbatim_copies_senate_republicans() {
        let (doc, c) = sample_doc();
        let inv = ClassInventory {
            names: vec!["Angela Merkel".into()],
            min_frequency: 2,
            adopt_llm: false,
        };
        let m = forced(inv, 0);
        assert_eq!(
            canonicalize(&m, &doc, &c, Span::new(14, 32)).unwrap(),
            "Senate Republicans"
        );
    }

    #[test]
    fn forced_named_class_outputs_canonical() {
        let (doc, c) = sample_doc();
        let inv = ClassInventory {
            names: vec!["Angela Merkel".into()],
            min_frequency: 2,
            adopt_llm: false,
        };
        let m = forced(inv, 1);
        assert_eq!(canonicalize(&m, &doc, &c, Span::new(40, 46)).unwrap(), "Angela Merkel");
    }

    #[test]
    fn mention_features_validate_span() {
        let (doc, c) = sample_doc();
        assert!(matches!(
            mention_features(&doc, &c, Span::new(50, 99), 1 << 10),
            Err(Error::InvalidSpan { .. })
        ));
        assert!(mention_features(&doc, &c, Span::new(5, 5), 1 << 10).is_err());
        let a = mention_features(&doc, &c, Span::new(40, 46), 1 << 10).unwrap();
        let b = mention_features(&doc, &c, Span::new(40, 46), 1 << 10).unwrap();
        assert_eq!(a, b);
        assert!(a.max_id().unwrap() < 1 << 10);
    }

    #[test]
    fn single_example_is_learned() {
        let (doc, c) = sample_doc();
        let fv = mention_features(&doc, &c, Span::new(40, 46), 1 << 12).unwrap();
        let inv = ClassInventory {
            names: vec!["X".into(), "Angela Merkel".into()],
            min_frequency: 2,
            adopt_llm: false,
        };
        let m = train_canonicalizer(&[(fv.clone(), 2)], inv, 1 << 12, 5, 13).unwrap();
        assert_eq!(m.predict_class(&fv), 2);
    }

    #[test]
    fn unknown_gold_class_rejected() {
        let inv = ClassInventory {
            names: vec!["A".into()],
            min_frequency: 2,
            adopt_llm: false,
        };
        assert!(train_canonicalizer(&[(FeatureVector::new(), 5)], inv, 16, 1, 13).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let inv = ClassInventory {
            names: vec!["A".into(), "B".into()],
            min_frequency: 2,
            adopt_llm: false,
        };
        let mut m = CanonModel::zeros(inv, 64);
        m.weights[1].insert(3, 0.5);
        m.weights[2].insert(63, -1.25);
        let file = m.to_file();
        assert_eq!(file.weights["1"]["3"], 0.5);
        let json = serde_json::to_string(&file).unwrap();
        let back = CanonModel::from_file(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn dedup_keeps_first() {
        let v = vec!["b".to_string(), "a".into(), "b".into()];
        assert_eq!(dedup_preserving_order(v), vec!["b", "a"]);
    }

    #[test]
    fn pairs_single_actor_and_zip() {
        let mut c = claim("1", &["A"]);
        c.gold_mentions = vec![Span::new(0, 1), Span::new(2, 3)];
        let p = mention_actor_pairs(&c);
        assert_eq!(p.iter().map(|x| x.1).collect::<Vec<_>>(), vec!["A", "A"]);
        c.gold_actors = vec!["A".into(), "B".into()];
        c.gold_mentions.push(Span::new(4, 5));
        let p = mention_actor_pairs(&c);
        assert_eq!(p.iter().map(|x| x.1).collect::<Vec<_>>(), vec!["A", "B", "B"]);
    }
}
