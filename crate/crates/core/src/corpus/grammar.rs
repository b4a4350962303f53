//! Probabilistic template grammars for artificial languages.
//!
//! Each language is a small lexicon plus one or more alternations. An
//! alternation holds two templates (construction A and B) that bind the same
//! slots, so the same propositional content can surface in either word order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Deserialize;

use super::CorpusError;
use crate::rng::{derive_seed, seeded_rng};

/// One token of a template: either a slot reference like `AGENT.0` or a
/// literal function word that appears verbatim.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TemplateToken {
    Slot { category: String, index: usize },
    Literal(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub tokens: Vec<TemplateToken>,
}

impl Template {
    /// Parses whitespace-separated template text. A token of the form
    /// `CATEGORY.N` (uppercase letters and underscores, then a dot, then
    /// digits) is a slot; anything else is a literal.
    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let mut tokens = Vec::new();
        for word in text.split_whitespace() {
            if let Some((cat, idx)) = word.rsplit_once('.') {
                let cat_ok = !cat.is_empty()
                    && cat.chars().all(|c| c.is_ascii_uppercase() || c == '_');
                if cat_ok {
                    let index = idx.parse::<usize>().map_err(|_| CorpusError::InvalidSpec {
                        field: "alternations".into(),
                        reason: format!("bad slot index in template token '{word}'"),
                    })?;
                    tokens.push(TemplateToken::Slot { category: cat.to_string(), index });
                    continue;
                }
            }
            tokens.push(TemplateToken::Literal(word.to_string()));
        }
        if tokens.is_empty() {
            return Err(CorpusError::InvalidSpec {
                field: "alternations".into(),
                reason: "empty template".into(),
            });
        }
        Ok(Template { tokens })
    }

    /// The set of (category, index) slots this template binds.
    pub fn slot_set(&self) -> BTreeSet<(String, usize)> {
        self.tokens
            .iter()
            .filter_map(|t| match t {
                TemplateToken::Slot { category, index } => Some((category.clone(), *index)),
                TemplateToken::Literal(_) => None,
            })
            .collect()
    }

    /// Renders the template with the given slot fills.
    pub fn render(&self, fills: &SlotFill) -> String {
        let words: Vec<&str> = self
            .tokens
            .iter()
            .map(|t| match t {
                TemplateToken::Slot { category, index } => fills
                    .get(&(category.clone(), *index))
                    .map(String::as_str)
                    .expect("slot fill missing for validated template"),
                TemplateToken::Literal(w) => w.as_str(),
            })
            .collect();
        words.join(" ")
    }

    /// Token-by-token match against a tokenized sentence. Slots must hold a
    /// word from their category, and a repeated slot must bind the same word
    /// everywhere it appears.
    fn matches(&self, words: &[&str], lexicon: &BTreeMap<String, Vec<String>>) -> bool {
        if words.len() != self.tokens.len() {
            return false;
        }
        let mut bound: BTreeMap<(&str, usize), &str> = BTreeMap::new();
        for (tok, word) in self.tokens.iter().zip(words) {
            match tok {
                TemplateToken::Literal(lit) => {
                    if lit != word {
                        return false;
                    }
                }
                TemplateToken::Slot { category, index } => {
                    let Some(list) = lexicon.get(category) else { return false };
                    if !list.iter().any(|w| w == word) {
                        return false;
                    }
                    match bound.get(&(category.as_str(), *index)) {
                        Some(prev) if prev != word => return false,
                        _ => {
                            bound.insert((category.as_str(), *index), word);
                        }
                    }
                }
            }
        }
        true
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for t in &self.tokens {
            if !first {
                write!(f, " ")?;
            }
            first = false;
            match t {
                TemplateToken::Slot { category, index } => write!(f, "{category}.{index}")?,
                TemplateToken::Literal(w) => write!(f, "{w}")?,
            }
        }
        Ok(())
    }
}

/// Mapping from (category, index) slots to the chosen word.
pub type SlotFill = BTreeMap<(String, usize), String>;

#[derive(Debug, Clone)]
pub struct Alternation {
    pub name: String,
    pub construction_a: Template,
    pub construction_b: Template,
}

impl Alternation {
    pub fn template(&self, use_a: bool) -> &Template {
        if use_a {
            &self.construction_a
        } else {
            &self.construction_b
        }
    }
}

/// A full language specification: lexicon, alternations, the probability of
/// construction A, and which corruption rules apply when building minimal
/// pairs for this language.
#[derive(Debug, Clone)]
pub struct GrammarSpec {
    pub language_id: String,
    pub lexicon: BTreeMap<String, Vec<String>>,
    pub alternations: Vec<Alternation>,
    pub alternation_prob: f64,
    pub corruption_rules: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct GrammarDoc {
    language_id: String,
    alternation_prob: f64,
    #[serde(default)]
    corruption_rules: Vec<String>,
    lexicon: BTreeMap<String, Vec<String>>,
    alternations: Vec<AlternationDoc>,
}

#[derive(Debug, Deserialize)]
struct AlternationDoc {
    name: String,
    construction_a: String,
    construction_b: String,
}

impl GrammarSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, CorpusError> {
        let doc: GrammarDoc = toml::from_str(text).map_err(|e| CorpusError::InvalidSpec {
            field: "file".into(),
            reason: e.to_string(),
        })?;
        let mut alternations = Vec::new();
        for alt in &doc.alternations {
            alternations.push(Alternation {
                name: alt.name.clone(),
                construction_a: Template::parse(&alt.construction_a)?,
                construction_b: Template::parse(&alt.construction_b)?,
            });
        }
        let spec = GrammarSpec {
            language_id: doc.language_id,
            lexicon: doc.lexicon,
            alternations,
            alternation_prob: doc.alternation_prob,
            corruption_rules: doc.corruption_rules,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |field: &str, reason: String| CorpusError::InvalidSpec {
            field: field.into(),
            reason,
        };
        if self.language_id.trim().is_empty() {
            return Err(invalid("language_id", "must be non-empty".into()));
        }
        if !(0.0..=1.0).contains(&self.alternation_prob) {
            return Err(invalid(
                "alternation_prob",
                format!("must lie in [0, 1], got {}", self.alternation_prob),
            ));
        }
        if self.lexicon.is_empty() {
            return Err(invalid("lexicon", "must declare at least one category".into()));
        }
        for (cat, words) in &self.lexicon {
            if words.is_empty() {
                return Err(invalid("lexicon", format!("category {cat} has no words")));
            }
            for w in words {
                if w.is_empty() || w.chars().any(char::is_whitespace) {
                    return Err(invalid(
                        "lexicon",
                        format!("word '{w}' in {cat} is empty or contains whitespace"),
                    ));
                }
            }
        }
        if self.alternations.is_empty() {
            return Err(invalid("alternations", "must declare at least one".into()));
        }
        let function_words = self.lexicon.get("FUNCTION_WORDS");
        for alt in &self.alternations {
            for tpl in [&alt.construction_a, &alt.construction_b] {
                for tok in &tpl.tokens {
                    match tok {
                        TemplateToken::Slot { category, .. } => {
                            if !self.lexicon.contains_key(category) {
                                return Err(invalid(
                                    "alternations",
                                    format!(
                                        "alternation {}: slot category {category} not in lexicon",
                                        alt.name
                                    ),
                                ));
                            }
                        }
                        TemplateToken::Literal(w) => {
                            let ok = function_words.map_or(false, |fw| fw.iter().any(|x| x == w));
                            if !ok {
                                return Err(invalid(
                                    "alternations",
                                    format!(
                                        "alternation {}: literal '{w}' not listed under FUNCTION_WORDS",
                                        alt.name
                                    ),
                                ));
                            }
                        }
                    }
                }
            }
            if alt.construction_a.slot_set() != alt.construction_b.slot_set() {
                return Err(invalid(
                    "alternations",
                    format!("alternation {}: constructions bind different slot sets", alt.name),
                ));
            }
        }
        Ok(())
    }

    /// Draws one slot fill for the given alternation, uniform over each
    /// category's word list. Slots are filled in sorted order so the RNG
    /// consumption is stable.
    pub fn draw_fills<R: Rng>(&self, alt: &Alternation, rng: &mut R) -> SlotFill {
        let mut fills = SlotFill::new();
        for (cat, idx) in alt.construction_a.slot_set() {
            let words = &self.lexicon[&cat];
            let w = words.choose(rng).expect("validated non-empty category").clone();
            fills.insert((cat, idx), w);
        }
        fills
    }

    /// True iff the tokenized sentence is generable by some construction of
    /// some alternation.
    pub fn membership(&self, sentence: &str) -> bool {
        let words: Vec<&str> = sentence.split_whitespace().collect();
        self.alternations.iter().any(|alt| {
            alt.construction_a.matches(&words, &self.lexicon)
                || alt.construction_b.matches(&words, &self.lexicon)
        })
    }
}

/// Generates `n_sentences` sentences. Every sentence instantiates exactly one
/// alternation (chosen uniformly when there are several); construction A is
/// used with probability `alternation_prob`. Deterministic in `seed`.
pub fn generate_corpus(spec: &GrammarSpec, n_sentences: usize, seed: u64) -> Vec<String> {
    let mut rng = seeded_rng(derive_seed(seed, &format!("corpus.{}", spec.language_id)));
    let mut out = Vec::with_capacity(n_sentences);
    for _ in 0..n_sentences {
        let alt = &spec.alternations[rng.gen_range(0..spec.alternations.len())];
        let use_a = rng.gen_bool(spec.alternation_prob);
        let fills = spec.draw_fills(alt, &mut rng);
        out.push(alt.template(use_a).render(&fills));
    }
    out
}

/// Writes one sentence per line.
pub fn save_corpus(sentences: &[String], path: &Path) -> Result<(), CorpusError> {
    let mut text = sentences.join("\n");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads a one-sentence-per-line corpus file, skipping blank lines.
pub fn load_corpus(path: &Path) -> Result<Vec<String>, CorpusError> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_spec() -> GrammarSpec {
        GrammarSpec::from_toml_str(
            r#"
language_id = "toylang"
alternation_prob = 0.5

[lexicon]
AGENT = ["bimo", "karu", "selto"]
VERB = ["danu", "pelki"]
THEME = ["wobu", "tilva", "renzo"]
GOAL = ["mupa", "lorfi"]
FUNCTION_WORDS = ["fa", "ko"]

[[alternations]]
name = "dative"
construction_a = "AGENT.0 VERB.0 THEME.0 fa GOAL.0"
construction_b = "AGENT.0 VERB.0 GOAL.0 ko THEME.0"
"#,
        )
        .unwrap()
    }

    #[test]
    fn parses_and_validates_toy_spec() {
        let spec = toy_spec();
        assert_eq!(spec.language_id, "toylang");
        assert_eq!(spec.alternations.len(), 1);
        let alt = &spec.alternations[0];
        assert_eq!(alt.construction_a.tokens.len(), 5);
        assert_eq!(
            alt.construction_a.slot_set(),
            alt.construction_b.slot_set()
        );
    }

    #[test]
    fn rejects_empty_category() {
        let err = GrammarSpec::from_toml_str(
            r#"
language_id = "x"
alternation_prob = 0.5
[lexicon]
AGENT = []
[[alternations]]
name = "a"
construction_a = "AGENT.0"
construction_b = "AGENT.0"
"#,
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::InvalidSpec { ref field, .. } if field == "lexicon"));
    }

    #[test]
    fn rejects_unbound_slot_category() {
        let err = GrammarSpec::from_toml_str(
            r#"
language_id = "x"
alternation_prob = 0.5
[lexicon]
AGENT = ["bo"]
[[alternations]]
name = "a"
construction_a = "AGENT.0 VERB.0"
construction_b = "VERB.0 AGENT.0"
"#,
        )
        .unwrap_err();
        assert!(
            matches!(err, CorpusError::InvalidSpec { ref field, .. } if field == "alternations")
        );
    }

    #[test]
    fn rejects_mismatched_slot_sets() {
        let err = GrammarSpec::from_toml_str(
            r#"
language_id = "x"
alternation_prob = 0.5
[lexicon]
AGENT = ["bo"]
THEME = ["wu"]
[[alternations]]
name = "a"
construction_a = "AGENT.0 THEME.0"
construction_b = "AGENT.0 THEME.0 THEME.1"
"#,
        )
        .unwrap_err();
        assert!(
            matches!(err, CorpusError::InvalidSpec { ref field, .. } if field == "alternations")
        );
    }

    #[test]
    fn rejects_out_of_range_alternation_prob() {
        let mut spec = toy_spec();
        spec.alternation_prob = 1.5;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn rejects_undeclared_literal() {
        let err = GrammarSpec::from_toml_str(
            r#"
language_id = "x"
alternation_prob = 0.5
[lexicon]
AGENT = ["bo"]
[[alternations]]
name = "a"
construction_a = "AGENT.0 zz AGENT.1"
construction_b = "AGENT.1 AGENT.0"
"#,
        )
        .unwrap_err();
        assert!(
            matches!(err, CorpusError::InvalidSpec { ref field, .. } if field == "alternations")
        );
    }

    #[test]
    fn generation_is_deterministic_in_seed() {
        let spec = toy_spec();
        let a = generate_corpus(&spec, 50, 11);
        let b = generate_corpus(&spec, 50, 11);
        let c = generate_corpus(&spec, 50, 12);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn every_generated_sentence_is_a_member() {
        let spec = toy_spec();
        for s in generate_corpus(&spec, 200, 3) {
            assert!(spec.membership(&s), "generated non-member: {s}");
        }
    }

    #[test]
    fn membership_rejects_scrambled_and_foreign_sentences() {
        let spec = toy_spec();
        assert!(spec.membership("bimo danu wobu fa mupa"));
        assert!(spec.membership("bimo danu mupa ko wobu"));
        // construction A's marker with construction B's order
        assert!(!spec.membership("bimo danu mupa fa wobu"));
        assert!(!spec.membership("danu bimo wobu fa mupa"));
        assert!(!spec.membership("bimo danu wobu fa"));
        assert!(!spec.membership("the cat sat on the mat"));
        assert!(!spec.membership(""));
    }

    #[test]
    fn construction_choice_concentrates_at_alternation_prob() {
        let mut spec = toy_spec();
        spec.alternation_prob = 0.5;
        let sentences = generate_corpus(&spec, 10_000, 99);
        let alt = &spec.alternations[0];
        let n_a = sentences
            .iter()
            .filter(|s| {
                let words: Vec<&str> = s.split_whitespace().collect();
                alt.construction_a.matches(&words, &spec.lexicon)
            })
            .count();
        let frac = n_a as f64 / sentences.len() as f64;
        assert!((frac - 0.5).abs() < 0.02, "A fraction {frac}");
    }

    #[test]
    fn corpus_file_round_trip() {
        let spec = toy_spec();
        let sents = generate_corpus(&spec, 20, 5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        save_corpus(&sents, &path).unwrap();
        assert_eq!(load_corpus(&path).unwrap(), sents);
    }

    #[test]
    fn render_display_round_trip() {
        let spec = toy_spec();
        let alt = &spec.alternations[0];
        let shown = alt.construction_a.to_string();
        assert_eq!(Template::parse(&shown).unwrap(), alt.construction_a);
    }
}
