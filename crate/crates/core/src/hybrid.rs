//! Pipeline canonicalizer that also sees the LLM's answer for the claim.
//!
//! The LLM answer contributes extra features, and an `ADOPT_LLM` class lets
//! the model output that answer verbatim. `ADOPT_LLM` is only feasible when
//! the LLM produced a non-empty answer; without one the only extra feature
//! is the `llm_missing` indicator.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::canonicalizer::{
    build_class_inventory, dedup_preserving_order, mention_actor_pairs, mention_features,
    read_json, train_canonicalizer_with, write_json, CanonModel, CanonModelFile, ClassInventory,
};
use crate::corpus::{ClaimInstance, ClaimRef, Document, Span};
use crate::error::{Error, Result};
use crate::eval::normalize;
use crate::extractor::{check_hash_space, extract_mentions, CrfModel, ExtractorConfig};
use crate::featurize::{char_trigrams, feature_id, FeatureVector, Featurizer};

pub const DEFAULT_TOP_N: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridConfig {
    pub epochs: usize,
    pub min_frequency: usize,
    pub adopt_llm: bool,
    /// Named classes, most frequent first, that get LLM-overlap features.
    pub top_n: usize,
}

impl Default for HybridConfig {
    fn default() -> Self {
        HybridConfig {
            epochs: 10,
            min_frequency: 2,
            adopt_llm: true,
            top_n: DEFAULT_TOP_N,
        }
    }
}

fn tokens(s: &str) -> Vec<String> {
    normalize(s).split_whitespace().map(str::to_string).collect()
}

pub const LLM_MISSING: &str = "llm_missing";

/// Features describing the LLM answer relative to the mention and the class
/// inventory. Just `llm_missing` when there is no answer.
pub fn llm_features(
    llm_prediction: Option<&str>,
    mention_text: &str,
    inventory: &ClassInventory,
    top_n: usize,
    hash_space: u32,
) -> FeatureVector {
    let Some(pred) = llm_prediction.filter(|p| !p.trim().is_empty()) else {
        return FeatureVector::from_names([LLM_MISSING], hash_space);
    };
    let norm = normalize(pred);
    let pred_tokens = tokens(pred);
    let mut names: Vec<(String, f64)> = vec![("llm_present".to_string(), 1.0)];
    names.extend(pred_tokens.iter().map(|t| (format!("llm_tok={t}"), 1.0)));
    names.extend(char_trigrams(&norm).into_iter().map(|g| (format!("llm3={g}"), 1.0)));
    if norm == normalize(mention_text) {
        names.push(("llm_eq_mention".to_string(), 1.0));
    }
    let pred_set: HashSet<&str> = pred_tokens.iter().map(String::as_str).collect();
    let mut exact = false;
    for (i, name) in inventory.names.iter().enumerate() {
        let class = i + 1;
        if normalize(name) == norm {
            names.push((format!("llm_exact={class}"), 1.0));
            exact = true;
        }
        if i < top_n {
            let overlap = tokens(name)
                .iter()
                .filter(|t| pred_set.contains(t.as_str()))
                .count();
            if overlap > 0 {
                names.push((format!("llm_ov={class}"), overlap as f64));
            }
        }
    }
    names.push((if exact { "llm_known" } else { "llm_novel" }.to_string(), 1.0));
    FeatureVector::from_entries(
        names
            .into_iter()
            .map(|(n, v)| (feature_id(&n, hash_space), v))
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridModel {
    pub canon: CanonModel,
    pub top_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridModelFile {
    #[serde(flatten)]
    pub canon: CanonModelFile,
    pub adopt_llm: bool,
    pub top_n: usize,
}

impl HybridModel {
    pub fn features(
        &self,
        doc: &Document,
        claim: &ClaimInstance,
        mention: Span,
        llm_prediction: Option<&str>,
    ) -> Result<FeatureVector> {
        let base = mention_features(doc, claim, mention, self.canon.hash_space)?;
        let extra = llm_features(
            llm_prediction,
            &doc.slice(mention),
            &self.canon.inventory,
            self.top_n,
            self.canon.hash_space,
        );
        Ok(base.concat(&extra))
    }

    pub fn canonicalize(
        &self,
        doc: &Document,
        claim: &ClaimInstance,
        mention: Span,
        llm_prediction: Option<&str>,
    ) -> Result<String> {
        let fv = self.features(doc, claim, mention, llm_prediction)?;
        let class = self.canon.predict_class_with(&fv, has_answer(llm_prediction));
        Ok(self.canon.resolve(class, &doc.slice(mention), llm_prediction))
    }

    pub fn to_file(&self) -> HybridModelFile {
        HybridModelFile {
            canon: self.canon.to_file(),
            adopt_llm: self.canon.inventory.adopt_llm,
            top_n: self.top_n,
        }
    }

    pub fn from_file(file: HybridModelFile) -> Result<Self> {
        let canon = CanonModel::from_file(file.canon)?;
        if canon.inventory.adopt_llm != file.adopt_llm {
            return Err(Error::Config(
                "adopt_llm flag disagrees with the class inventory".into(),
            ));
        }
        Ok(HybridModel {
            canon,
            top_n: file.top_n,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), &self.to_file())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        HybridModel::from_file(read_json(path.as_ref())?)
    }
}

fn has_answer(p: Option<&str>) -> bool {
    p.is_some_and(|s| !s.trim().is_empty())
}

/// Training label: the named class of the gold actor if it has one; else
/// `VERBATIM` when the mention is the gold string; else `ADOPT_LLM` when the
/// LLM answer matches the gold up to formatting; else `VERBATIM`.
pub fn hybrid_label(
    inventory: &ClassInventory,
    gold: &str,
    mention_text: &str,
    llm_prediction: Option<&str>,
) -> usize {
    if let Some(k) = inventory.index_of(gold) {
        return k;
    }
    if mention_text == gold {
        return 0;
    }
    match (inventory.adopt_index(), llm_prediction) {
        (Some(a), Some(p)) if has_answer(Some(p)) && normalize(p) == normalize(gold) => a,
        _ => 0,
    }
}

/// Train on the gold mentions of `claims`, with `llm` mapping every claim id
/// to its cleaned LLM answer (empty for a failed prediction).
pub fn train_hybrid(
    claims: &[ClaimRef<'_>],
    llm: &BTreeMap<String, String>,
    config: &HybridConfig,
    hash_space: u32,
    seed: u64,
) -> Result<HybridModel> {
    let inventory = build_class_inventory(claims.iter().map(|c| c.claim), config.min_frequency)?
        .with_adopt_llm(config.adopt_llm);
    let model = HybridModel {
        canon: CanonModel::zeros(inventory, hash_space),
        top_n: config.top_n,
    };
    let mut examples = Vec::new();
    let mut feasible = Vec::new();
    for c in claims {
        let answer = llm.get(&c.claim.id).map(String::as_str).ok_or_else(|| {
            Error::Training(format!("no LLM prediction recorded for claim {}", c.claim.id))
        })?;
        let answer = Some(answer);
        for (span, actor) in mention_actor_pairs(c.claim) {
            let text = c.doc.slice(span);
            let fv = model.features(c.doc, c.claim, span, answer)?;
            examples.push((fv, hybrid_label(&model.canon.inventory, actor, &text, answer)));
            feasible.push(has_answer(answer));
        }
    }
    let canon = train_canonicalizer_with(
        &examples,
        model.canon.inventory,
        hash_space,
        config.epochs,
        seed,
        |k| feasible[k],
    )?;
    Ok(HybridModel {
        canon,
        top_n: config.top_n,
    })
}

/// Extract mentions, canonicalize each with the LLM answer in view, and drop
/// exact duplicates.
pub fn hybrid_predict(
    crf: &CrfModel,
    model: &HybridModel,
    featurizer: &dyn Featurizer,
    config: &ExtractorConfig,
    doc: &Document,
    claim: &ClaimInstance,
    llm_prediction: Option<&str>,
) -> Result<Vec<String>> {
    check_hash_space("hybrid model", model.canon.hash_space, featurizer.hash_space())?;
    let mentions = extract_mentions(crf, featurizer, config, doc, claim)?;
    let out = mentions
        .into_iter()
        .map(|m| model.canonicalize(doc, claim, m, llm_prediction))
        .collect::<Result<Vec<_>>>()?;
    Ok(dedup_preserving_order(out))
}
