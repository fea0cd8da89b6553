//! Scoring under three equivalence settings: exact string match, match up to
//! formatting, and match up to canonicalization.
//!
//! The two lenient settings are automated approximations of manual
//! judgments: formatting uses [`normalize`]; canonicalization adds an alias
//! table and a token-containment heuristic.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::corpus::Span;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Exact,
    Formatting,
    Canonicalization,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Setting::Exact, Setting::Formatting, Setting::Canonicalization];

    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Exact => "exact",
            Setting::Formatting => "formatting",
            Setting::Canonicalization => "canonicalization",
        }
    }

    fn table_label(self) -> &'static str {
        match self {
            Setting::Exact => "exact match",
            Setting::Formatting => "up to formatting",
            Setting::Canonicalization => "up to canonic.",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Setting::Exact),
            "formatting" => Ok(Setting::Formatting),
            "canonicalization" | "canonical" => Ok(Setting::Canonicalization),
            other => Err(Error::Config(format!("unknown evaluation setting {other:?}"))),
        }
    }
}

fn normalize_once(s: &str) -> String {
    let folded = caseless::default_case_fold_str(&s.nfkc().collect::<String>());
    let folded: String = folded.nfkc().collect();
    folded
        .split_whitespace()
        .map(|tok| tok.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|tok| !tok.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// NFKC, case folding, boundary punctuation stripping, whitespace collapsing.
/// Punctuation inside a token (`EU-Kommission`, `U.S`) is kept.
pub fn normalize(s: &str) -> String {
    let mut current = normalize_once(s);
    // Folding can in rare cases produce text that normalizes further.
    for _ in 0..4 {
        let next = normalize_once(&current);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasTable {
    /// Entity id → display name.
    pub entities: BTreeMap<String, String>,
    /// Surface string → entity id. Keys are normalized on load.
    pub aliases: BTreeMap<String, String>,
}

impl AliasTable {
    pub fn new(
        entities: BTreeMap<String, String>,
        aliases: BTreeMap<String, String>,
    ) -> Result<Self> {
        let mut table = AliasTable {
            entities,
            aliases: BTreeMap::new(),
        };
        for (surface, id) in aliases {
            if !table.entities.contains_key(&id) {
                return Err(Error::Config(format!(
                    "alias {surface:?} references unknown entity {id:?}"
                )));
            }
            table.aliases.insert(normalize(&surface), id);
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: AliasTable = serde_json::from_str(&text)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        AliasTable::new(raw.entities, raw.aliases)
    }

    /// Entity id for a surface string, via an alias or a display name.
    pub fn resolve(&self, surface: &str) -> Option<&str> {
        let n = normalize(surface);
        if let Some(id) = self.aliases.get(&n) {
            return Some(id);
        }
        self.entities
            .iter()
            .find(|(_, name)| normalize(name) == n)
            .map(|(id, _)| id.as_str())
    }
}

/// One token multiset contains the other, and both end in the same token.
fn containment_heuristic(a: &str, b: &str) -> bool {
    let ta: Vec<&str> = a.split(' ').filter(|t| !t.is_empty()).collect();
    let tb: Vec<&str> = b.split(' ').filter(|t| !t.is_empty()).collect();
    let (short, long) = if ta.len() <= tb.len() { (ta, tb) } else { (tb, ta) };
    if short.is_empty() || short.last() != long.last() {
        return false;
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for t in &long {
        *counts.entry(t).or_default() += 1;
    }
    short.iter().all(|t| {
        let c = counts.entry(t).or_default();
        *c -= 1;
        *c >= 0
    })
}

pub fn equivalent(a: &str, b: &str, setting: Setting, aliases: &AliasTable) -> bool {
    if a == b {
        return true;
    }
    if setting == Setting::Exact {
        return false;
    }
    let (na, nb) = (normalize(a), normalize(b));
    if na == nb {
        return true;
    }
    if setting == Setting::Formatting {
        return false;
    }
    if let (Some(x), Some(y)) = (aliases.resolve(a), aliases.resolve(b)) {
        if x == y {
            return true;
        }
    }
    containment_heuristic(&na, &nb)
}

/// Pairs `(pred index, gold index)` of a maximum bipartite matching under
/// `equivalent`, found with augmenting paths.
pub fn max_matching(
    preds: &[String],
    golds: &[String],
    setting: Setting,
    aliases: &AliasTable,
) -> Vec<(usize, usize)> {
    let adj: Vec<Vec<usize>> = preds
        .iter()
        .map(|p| {
            (0..golds.len())
                .filter(|&g| equivalent(p, &golds[g], setting, aliases))
                .collect()
        })
        .collect();
    let mut gold_owner: Vec<Option<usize>> = vec![None; golds.len()];

    fn augment(
        p: usize,
        adj: &[Vec<usize>],
        visited: &mut [bool],
        gold_owner: &mut [Option<usize>],
    ) -> bool {
        for &g in &adj[p] {
            if visited[g] {
                continue;
            }
            visited[g] = true;
            let free = match gold_owner[g] {
                None => true,
                Some(q) => augment(q, adj, visited, gold_owner),
            };
            if free {
                gold_owner[g] = Some(p);
                return true;
            }
        }
        false
    }

    for p in 0..preds.len() {
        let mut visited = vec![false; golds.len()];
        augment(p, &adj, &mut visited, &mut gold_owner);
    }
    let mut pairs: Vec<(usize, usize)> = gold_owner
        .iter()
        .enumerate()
        .filter_map(|(g, owner)| owner.map(|p| (p, g)))
        .collect();
    pairs.sort_unstable();
    pairs
}

pub fn match_claim(preds: &[String], golds: &[String], setting: Setting, aliases: &AliasTable) -> usize {
    max_matching(preds, golds, setting, aliases).len()
}

/// Harmonic mean; 0 when both inputs are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub setting: Setting,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Scores {
    pub fn from_counts(setting: Setting, tp: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, gold);
        Scores {
            setting,
            precision,
            recall,
            f1: f1_score(precision, recall),
            true_positives: tp,
            predicted,
            gold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimMatch {
    pub claim_id: String,
    pub setting: Setting,
    pub matched: Vec<(String, String)>,
    pub unmatched_predictions: Vec<String>,
    pub unmatched_gold: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// How lenient settings were judged.
    pub mode: String,
    pub settings: Vec<Scores>,
    pub matches: Vec<ClaimMatch>,
}

impl EvalReport {
    pub fn scores(&self, setting: Setting) -> Option<&Scores> {
        self.settings.iter().find(|s| s.setting == setting)
    }

    /// Plain-text table with percentages to two decimals.
    pub fn table(&self, title: &str) -> String {
        let mut out = format!("{title}\n{:<20} {:>7} {:>7} {:>7}\n", "Evaluation", "Pr", "Re", "F1");
        for s in &self.settings {
            out.push_str(&format!(
                "{:<20} {:>7.2} {:>7.2} {:>7.2}\n",
                s.setting.table_label(),
                100.0 * s.precision,
                100.0 * s.recall,
                100.0 * s.f1
            ));
        }
        out
    }
}

pub const AUTOMATIC_MODE: &str = "automatic (normalization + alias table + containment heuristic)";

/// Micro-averaged scores over (claim, actor) pairs. Both maps must cover the
/// same claim ids.
pub fn evaluate_run(
    predictions: &BTreeMap<String, Vec<String>>,
    gold: &BTreeMap<String, Vec<String>>,
    settings: &[Setting],
    aliases: &AliasTable,
) -> Result<EvalReport> {
    if let Some(id) = predictions.keys().find(|k| !gold.contains_key(*k)) {
        return Err(Error::ClaimMismatch(format!("{id:?} has no gold entry")));
    }
    if let Some(id) = gold.keys().find(|k| !predictions.contains_key(*k)) {
        return Err(Error::ClaimMismatch(format!("{id:?} has no prediction entry")));
    }
    let mut out = Vec::new();
    let mut matches = Vec::new();
    for &setting in settings {
        let (mut tp, mut n_pred, mut n_gold) = (0, 0, 0);
        for (id, golds) in gold {
            let preds = &predictions[id];
            let pairs = max_matching(preds, golds, setting, aliases);
            tp += pairs.len();
            n_pred += preds.len();
            n_gold += golds.len();
            let used_p: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let used_g: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            matches.push(ClaimMatch {
                claim_id: id.clone(),
                setting,
                matched: pairs
                    .iter()
                    .map(|&(p, g)| (preds[p].clone(), golds[g].clone()))
                    .collect(),
                unmatched_predictions: (0..preds.len())
                    .filter(|i| !used_p.contains(i))
                    .map(|i| preds[i].clone())
                    .collect(),
                unmatched_gold: (0..golds.len())
                    .filter(|i| !used_g.contains(i))
                    .map(|i| golds[i].clone())
                    .collect(),
            });
        }
        out.push(Scores::from_counts(setting, tp, n_pred, n_gold));
    }
    Ok(EvalReport {
        mode: AUTOMATIC_MODE.to_string(),
        settings: out,
        matches,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
}

/// Exact-boundary span scores, micro-averaged over claims.
pub fn span_scores<'a>(pairs: impl IntoIterator<Item = (&'a [Span], &'a [Span])>) -> SpanScores {
    let (mut tp, mut np, mut ng) = (0, 0, 0);
    for (pred, gold) in pairs {
        let mut pred: Vec<Span> = pred.to_vec();
        pred.sort();
        pred.dedup();
        let mut gold: Vec<Span> = gold.to_vec();
        gold.sort();
        gold.dedup();
        tp += pred.iter().filter(|s| gold.binary_search(s).is_ok()).count();
        np += pred.len();
        ng += gold.len();
    }
    let s = Scores::from_counts(Setting::Exact, tp, np, ng);
    SpanScores {
        precision: s.precision,
        recall: s.recall,
        f1: s.f1,
        true_positives: tp,
        predicted: np,
        gold: ng,
    }
}
