//! Synthetic German-style news corpus with known gold actors and mentions.
//!
//! Recurring actors appear under several surface forms; singleton actors are
//! unique role descriptions whose gold is the mention text itself. A small
//! share of claims is attributed through a pronoun whose antecedent sits in
//! the preceding sentence. Alongside the corpus the generator emits the
//! answers of a simulated LLM that names the right actor in a
//! non-canonical form most of the time.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{all_claims, ClaimInstance, Document, Span, SplitSpec};
use crate::error::Result;
use crate::eval::AliasTable;
use crate::llm::{build_prompt, prompt_sha256, FixtureEntry, PromptConfig};

struct Actor {
    canonical: &'static str,
    mentions: &'static [&'static str],
    /// What the simulated LLM says instead of the canonical name.
    llm_forms: &'static [&'static str],
    pronoun: Option<&'static str>,
    weight: u32,
}

const ACTORS: &[Actor] = &[
    Actor { canonical: "Angela Merkel", mentions: &["Merkel", "Angela Merkel", "Kanzlerin Merkel", "Bundeskanzlerin Angela Merkel"], llm_forms: &["Merkel", "Bundeskanzlerin Merkel", "Kanzlerin Angela Merkel"], pronoun: Some("Sie"), weight: 9 },
    Actor { canonical: "Horst Seehofer", mentions: &["Seehofer", "Horst Seehofer", "CSU-Chef Seehofer", "Ministerpräsident Horst Seehofer"], llm_forms: &["Seehofer", "CSU-Chef Horst Seehofer"], pronoun: Some("Er"), weight: 7 },
    Actor { canonical: "Thomas de Maizière", mentions: &["de Maizière", "Thomas de Maizière", "Innenminister de Maizière", "Bundesinnenminister Thomas de Maizière"], llm_forms: &["de Maizière", "Bundesinnenminister Thomas de Maizière"], pronoun: Some("Er"), weight: 6 },
    Actor { canonical: "Sigmar Gabriel", mentions: &["Gabriel", "Sigmar Gabriel", "Vizekanzler Gabriel", "SPD-Chef Sigmar Gabriel"], llm_forms: &["Gabriel", "Vizekanzler Sigmar Gabriel"], pronoun: Some("Er"), weight: 5 },
    Actor { canonical: "Jean-Claude Juncker", mentions: &["Juncker", "Jean-Claude Juncker", "Kommissionspräsident Juncker"], llm_forms: &["Juncker", "Kommissionspräsident Jean-Claude Juncker"], pronoun: Some("Er"), weight: 4 },
    Actor { canonical: "Olaf Scholz", mentions: &["Scholz", "Olaf Scholz", "Bürgermeister Scholz"], llm_forms: &["Scholz", "Hamburgs Bürgermeister Olaf Scholz"], pronoun: Some("Er"), weight: 4 },
    Actor { canonical: "Andrea Nahles", mentions: &["Nahles", "Andrea Nahles", "Arbeitsministerin Nahles"], llm_forms: &["Nahles", "Arbeitsministerin Andrea Nahles"], pronoun: Some("Sie"), weight: 4 },
    Actor { canonical: "Katrin Göring-Eckardt", mentions: &["Göring-Eckardt", "Katrin Göring-Eckardt", "Grünen-Fraktionschefin Göring-Eckardt"], llm_forms: &["Göring-Eckardt", "Fraktionschefin Katrin Göring-Eckardt"], pronoun: Some("Sie"), weight: 3 },
    Actor { canonical: "Christian Lindner", mentions: &["Lindner", "Christian Lindner", "FDP-Chef Lindner"], llm_forms: &["Lindner", "FDP-Chef Christian Lindner"], pronoun: Some("Er"), weight: 3 },
    Actor { canonical: "Frauke Petry", mentions: &["Petry", "Frauke Petry", "AfD-Chefin Petry"], llm_forms: &["Petry", "AfD-Chefin Frauke Petry"], pronoun: Some("Sie"), weight: 3 },
    Actor { canonical: "Viktor Orbán", mentions: &["Orbán", "Viktor Orbán", "Ungarns Regierungschef Orbán"], llm_forms: &["Orbán", "Ministerpräsident Viktor Orbán"], pronoun: Some("Er"), weight: 3 },
    Actor { canonical: "Peter Altmaier", mentions: &["Altmaier", "Peter Altmaier", "Kanzleramtschef Altmaier"], llm_forms: &["Altmaier", "Kanzleramtsminister Peter Altmaier"], pronoun: Some("Er"), weight: 3 },
    Actor { canonical: "EU-Kommission", mentions: &["die EU-Kommission", "die Kommission", "die Brüsseler Behörde"], llm_forms: &["Die EU-Kommission", "Europäische Kommission"], pronoun: None, weight: 4 },
    Actor { canonical: "Bundesregierung", mentions: &["die Bundesregierung", "die Regierung in Berlin"], llm_forms: &["Die Bundesregierung", "Regierung"], pronoun: None, weight: 4 },
    Actor { canonical: "CSU", mentions: &["die CSU", "die Christsozialen"], llm_forms: &["Die CSU", "Christlich-Soziale Union"], pronoun: None, weight: 3 },
    Actor { canonical: "SPD", mentions: &["die SPD", "die Sozialdemokraten"], llm_forms: &["Die SPD", "Sozialdemokraten"], pronoun: None, weight: 3 },
    Actor { canonical: "Bündnis 90/Die Grünen", mentions: &["die Grünen", "die Grünen im Bundestag"], llm_forms: &["Grüne", "Die Grünen"], pronoun: None, weight: 3 },
    Actor { canonical: "AfD", mentions: &["die AfD", "die Alternative für Deutschland"], llm_forms: &["Die AfD", "Alternative für Deutschland (AfD)"], pronoun: None, weight: 2 },
    Actor { canonical: "Pro Asyl", mentions: &["Pro Asyl", "die Organisation Pro Asyl"], llm_forms: &["Pro Asyl e.V.", "Organisation Pro Asyl"], pronoun: None, weight: 2 },
    Actor { canonical: "UNHCR", mentions: &["das UNHCR", "das UN-Flüchtlingshilfswerk"], llm_forms: &["Das UNHCR", "UN-Flüchtlingshilfswerk"], pronoun: None, weight: 2 },
];

const ROLES: &[&str] = &["ein Sprecher", "eine Sprecherin", "der Vorsitzende", "die Leiterin", "ein Vertreter", "die Geschäftsführerin"];
const ORGS: &[&str] = &["des Flüchtlingsrats", "der Caritas", "des Städtetags", "der Diakonie", "des Landkreistags", "der Gewerkschaft der Polizei", "des Bauernverbands", "der Handwerkskammer"];
const PLACES: &[&str] = &["Bayern", "Sachsen", "Hamburg", "Hessen", "Thüringen", "Bremen", "Berlin", "Niedersachsen", "Brandenburg", "im Saarland"];

const CLAIMS: &[&str] = &[
    "die Obergrenze für Flüchtlinge müsse kommen",
    "Deutschland brauche ein modernes Einwanderungsgesetz",
    "die Grenzen dürften nicht geschlossen werden",
    "der Familiennachzug solle ausgesetzt werden",
    "die Kommunen bräuchten mehr Geld für die Unterbringung",
    "Asylverfahren müssten deutlich schneller werden",
    "die Westbalkanstaaten seien sichere Herkunftsländer",
    "Europa müsse die Lasten gerecht verteilen",
    "die Türkei sei ein wichtiger Partner",
    "Abschiebungen nach Afghanistan seien nicht vertretbar",
    "Integrationskurse müssten ausgebaut werden",
    "die Residenzpflicht solle wieder eingeführt werden",
    "Transitzonen an der Grenze seien notwendig",
    "die Dublin-Regeln seien gescheitert",
    "Flüchtlinge sollten schneller arbeiten dürfen",
    "der Schutz der Außengrenzen habe Vorrang",
    "Sachleistungen sollten Vorrang vor Bargeld haben",
    "die Bundespolizei brauche mehr Personal",
    "ein Einwanderungsgesetz sei überfällig",
    "die Genfer Konvention gelte uneingeschränkt",
];

const CITIES: &[&str] = &["Hamburg", "Passau", "Dresden", "Heidenau", "Köln", "München", "Erfurt", "Potsdam"];

const FILLERS: &[&str] = &[
    "Die Debatte über die Flüchtlingspolitik dauert seit Wochen an.",
    "Am Wochenende beraten die Innenminister der Länder.",
    "In den Erstaufnahmeeinrichtungen ist die Lage weiter angespannt.",
    "Die Zahl der Asylanträge ist im vergangenen Monat erneut gestiegen.",
];

#[derive(Debug, Clone, Copy, PartialEq)]
enum Part {
    Text(&'static str),
    Mention,
    Claim,
}

use Part::{Claim as C, Mention as M, Text as T};

const ATTRIBUTIONS: &[&[Part]] = &[
    &[M, T(" sagte, "), C, T(".")],
    &[M, T(" forderte, "), C, T(".")],
    &[T("„"), C, T("“, sagte "), M, T(" am Montag.")],
    &[M, T(" erklärte am Dienstag in Berlin, "), C, T(".")],
    &[T("„"), C, T("“, betonte "), M, T(" in einem Interview.")],
    &[T("Wie "), M, T(" mitteilte, "), C, T(".")],
];

const DISTRACTORS: &[&[Part]] = &[
    &[M, T(" war für eine Stellungnahme nicht zu erreichen.")],
    &[T("Zuvor hatte sich auch "), M, T(" zu Wort gemeldet.")],
    &[M, T(" reist am Donnerstag nach Brüssel.")],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_claims: usize,
    pub seed: u64,
    pub singleton_fraction: f64,
    pub pronoun_fraction: f64,
    pub distractor_fraction: f64,
    /// Share of claims for which the simulated LLM names the correct actor.
    pub llm_accuracy: f64,
    /// Train / dev share of claims; test is the rest.
    pub train_fraction: f64,
    pub dev_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_claims: 1000,
            seed: 13,
            singleton_fraction: 0.2,
            pronoun_fraction: 0.07,
            distractor_fraction: 0.3,
            llm_accuracy: 0.9,
            train_fraction: 0.6,
            dev_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub docs: Vec<Document>,
    pub split: SplitSpec,
    pub aliases: AliasTable,
    /// Simulated LLM answer per claim id; empty for a failed answer.
    pub llm_answers: BTreeMap<String, String>,
}

struct DocBuilder {
    text: String,
    len: usize,
    sentences: Vec<Span>,
}

impl DocBuilder {
    fn new() -> Self {
        DocBuilder {
            text: String::new(),
            len: 0,
            sentences: Vec::new(),
        }
    }

    fn push(&mut self, s: &str) {
        self.text.push_str(s);
        self.len += s.chars().count();
    }

    /// Append one sentence; returns the spans of the mention and claim slots.
    fn sentence(&mut self, parts: &[Part], mention: &str, claim: &str) -> (Option<Span>, Option<Span>) {
        if self.len > 0 {
            self.push(" ");
        }
        let start = self.len;
        let (mut m, mut c) = (None, None);
        for (k, part) in parts.iter().enumerate() {
            let at_start = k == 0;
            match part {
                Part::Text(t) => self.push(t),
                Part::Mention => {
                    let s = self.len;
                    self.push(&if at_start { capitalize(mention) } else { mention.to_string() });
                    m = Some(Span::new(s, self.len));
                }
                Part::Claim => {
                    let s = self.len;
                    let quoted = k > 0 && parts[k - 1] == Part::Text("„");
                    self.push(&if quoted { capitalize(claim) } else { claim.to_string() });
                    c = Some(Span::new(s, self.len));
                }
            }
        }
        self.sentences.push(Span::new(start, self.len));
        (m, c)
    }

    fn plain(&mut self, s: &str) {
        if self.len > 0 {
            self.push(" ");
        }
        let start = self.len;
        self.push(s);
        self.sentences.push(Span::new(start, self.len));
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(f) => f.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn drop_article(s: &str) -> String {
    for art in ["ein ", "eine ", "der ", "die ", "das "] {
        if let Some(rest) = s.strip_prefix(art) {
            return rest.to_string();
        }
    }
    s.to_string()
}

fn pick_actor(rng: &mut ChaCha8Rng) -> usize {
    let total: u32 = ACTORS.iter().map(|a| a.weight).sum();
    let mut r = rng.gen_range(0..total);
    for (i, a) in ACTORS.iter().enumerate() {
        if r < a.weight {
            return i;
        }
        r -= a.weight;
    }
    ACTORS.len() - 1
}

fn singleton_names(rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut all = Vec::new();
    for r in ROLES {
        for o in ORGS {
            for p in PLACES {
                let place = if p.starts_with("im ") { p.to_string() } else { format!("in {p}") };
                all.push(format!("{r} {o} {place}"));
            }
        }
    }
    all.shuffle(rng);
    all
}

fn slice(text: &str, span: Span) -> String {
    text.chars().skip(span.start).take(span.len()).collect()
}

/// Generate the corpus, a claim-level split and the simulated LLM answers.
pub fn generate(config: &SynthConfig) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut singletons = singleton_names(&mut rng).into_iter();
    let mut docs = Vec::new();
    let mut llm_answers = BTreeMap::new();
    let mut n = 0;
    while n < config.n_claims {
        let mut b = DocBuilder::new();
        let mut claims = Vec::new();
        b.plain(FILLERS.choose(&mut rng).unwrap());
        let per_doc = rng.gen_range(1..=3).min(config.n_claims - n);
        for _ in 0..per_doc {
            n += 1;
            let id = format!("c{n:04}");
            let claim_text = *CLAIMS.choose(&mut rng).unwrap();
            let template = *ATTRIBUTIONS.choose(&mut rng).unwrap();
            let (gold, mention, claim_span, correct) = if rng.gen_bool(config.singleton_fraction) {
                let name = singletons.next().expect("enough singleton descriptions");
                let (m, c) = b.sentence(template, &name, claim_text);
                let (m, c) = (m.unwrap(), c.unwrap());
                let surface = slice(&b.text, m);
                let answer = drop_article(&name);
                (surface, m, c, answer)
            } else {
                let actor = &ACTORS[pick_actor(&mut rng)];
                let pronoun = actor.pronoun.filter(|_| rng.gen_bool(config.pronoun_fraction));
                let (template, surface) = match pronoun {
                    Some(p) => {
                        let city = CITIES.choose(&mut rng).unwrap();
                        let antecedent = format!("{} besuchte am Montag eine Unterkunft in {city}.", actor.mentions[1]);
                        b.plain(&antecedent);
                        (ATTRIBUTIONS[0], p.to_string())
                    }
                    None => (template, actor.mentions.choose(&mut rng).unwrap().to_string()),
                };
                let (m, c) = b.sentence(template, &surface, claim_text);
                let answer = actor.llm_forms.choose(&mut rng).unwrap().to_string();
                (actor.canonical.to_string(), m.unwrap(), c.unwrap(), answer)
            };
            let answer = if rng.gen_bool(config.llm_accuracy) {
                correct
            } else if rng.gen_bool(0.5) {
                String::new()
            } else {
                let other = &ACTORS[pick_actor(&mut rng)];
                other.llm_forms[0].to_string()
            };
            llm_answers.insert(id.clone(), answer);
            claims.push(ClaimInstance {
                id,
                claim_span,
                gold_actors: vec![gold],
                gold_mentions: vec![mention],
            });
            if rng.gen_bool(config.distractor_fraction) {
                let other = &ACTORS[pick_actor(&mut rng)];
                let surface = *other.mentions.choose(&mut rng).unwrap();
                b.sentence(DISTRACTORS.choose(&mut rng).unwrap(), surface, "");
            }
        }
        docs.push(Document {
            id: format!("d{:04}", docs.len() + 1),
            text: b.text,
            sentences: b.sentences,
            claims,
        });
    }
    let split = make_split(&docs, config, &mut rng);
    SyntheticCorpus {
        docs,
        split,
        aliases: alias_table(),
        llm_answers,
    }
}

fn make_split(docs: &[Document], config: &SynthConfig, rng: &mut ChaCha8Rng) -> SplitSpec {
    let mut ids: Vec<String> = all_claims(docs).iter().map(|c| c.id().to_string()).collect();
    ids.shuffle(rng);
    let n = ids.len();
    let n_train = (n as f64 * config.train_fraction).round() as usize;
    let n_dev = ((n as f64 * config.dev_fraction).round() as usize).min(n - n_train);
    let test = ids.split_off(n_train + n_dev);
    let dev = ids.split_off(n_train);
    SplitSpec { train: ids, dev, test }
}

/// Alias table covering every surface form of the recurring actors.
pub fn alias_table() -> AliasTable {
    let mut entities = BTreeMap::new();
    let mut aliases = BTreeMap::new();
    for (i, a) in ACTORS.iter().enumerate() {
        let id = format!("e{:02}", i + 1);
        entities.insert(id.clone(), a.canonical.to_string());
        for m in a.mentions.iter().chain(a.llm_forms) {
            aliases.insert(m.to_string(), id.clone());
        }
    }
    AliasTable::new(entities, aliases).expect("alias ids are generated from the entity list")
}

/// Names of the recurring actors.
pub fn recurring_actors() -> Vec<&'static str> {
    ACTORS.iter().map(|a| a.canonical).collect()
}

/// Replay entries answering each claim's prompt under `prompt` with the
/// simulated LLM answer.
pub fn fixture_entries(corpus: &SyntheticCorpus, prompt: &PromptConfig) -> Result<Vec<FixtureEntry>> {
    let mut out = Vec::new();
    for c in all_claims(&corpus.docs) {
        let text = build_prompt(prompt, c.doc, c.claim, &[])?;
        out.push(FixtureEntry {
            prompt_sha256: prompt_sha256(&text),
            response: corpus.llm_answers.get(c.id()).cloned().unwrap_or_default(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::split_dataset;

    #[test]
    fn corpus_is_valid_and_deterministic() {
        let cfg = SynthConfig { n_claims: 120, ..Default::default() };
        let a = generate(&cfg);
        let b = generate(&cfg);
        assert_eq!(a, b);
        assert_eq!(all_claims(&a.docs).len(), 120);
        for d in &a.docs {
            d.validate().unwrap();
        }
        let split = split_dataset(&a.docs, &a.split).unwrap();
        assert_eq!(split.train.len() + split.dev.len() + split.test.len(), 120);
        assert_eq!(a.llm_answers.len(), 120);
    }

    #[test]
    fn mentions_are_not_followed_by_punctuation() {
        let c = generate(&SynthConfig { n_claims: 300, ..Default::default() });
        for d in &c.docs {
            let chars: Vec<char> = d.text.chars().collect();
            for claim in &d.claims {
                let m = claim.gold_mentions[0];
                assert!(m.end == chars.len() || chars[m.end] == ' ', "{}", d.slice(m));
            }
        }
    }

    #[test]
    fn singletons_keep_mention_text_as_gold() {
        let c = generate(&SynthConfig { n_claims: 300, ..Default::default() });
        let actors = recurring_actors();
        let mut singletons = 0;
        for d in &c.docs {
            for claim in &d.claims {
                let gold = &claim.gold_actors[0];
                if !actors.contains(&gold.as_str()) {
                    singletons += 1;
                    assert_eq!(&d.slice(claim.gold_mentions[0]), gold);
                }
            }
        }
        let share = singletons as f64 / 300.0;
        assert!((0.12..0.28).contains(&share), "{share}");
    }

    #[test]
    fn aliases_resolve_surface_forms() {
        let t = alias_table();
        assert_eq!(t.resolve("Kanzlerin Merkel"), t.resolve("Angela Merkel"));
        assert!(t.resolve("Kanzlerin Merkel").is_some());
    }
}
