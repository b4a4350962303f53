//! Minimal-pair grammaticality evaluation per checkpoint.
//!
//! Pairs are generated by corrupting grammar-drawn sentences with a seeded
//! rule (word-order swap, marker substitution, marker deletion); every bad
//! sentence is verified to fall outside the grammar. A model is correct on a
//! pair when it assigns the good sentence a higher total unconditioned log
//! probability; ties count half.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{CorpusError, GrammarSpec, TokenizerModel};
use crate::model::{
    load_checkpoint, sequence_logprob, ModelConfig, ModelError, TransformerParams,
};
use crate::report;
use crate::rng::{derive_seed, seeded_rng};
use crate::Scalar;

pub const RULE_ADJACENT_SWAP: &str = "adjacent_swap";
pub const RULE_MARKER_SUBSTITUTION: &str = "marker_substitution";
pub const RULE_MARKER_DELETION: &str = "marker_deletion";

const KNOWN_RULES: [&str; 3] =
    [RULE_ADJACENT_SWAP, RULE_MARKER_SUBSTITUTION, RULE_MARKER_DELETION];

#[derive(Debug, Error)]
pub enum GrammarEvalError {
    #[error("grammar '{language_id}' declares no corruption rules")]
    NoCorruptionRules { language_id: String },

    #[error("unknown corruption rule '{rule}'")]
    UnknownRule { rule: String },

    #[error("no corruption rule applies to '{sentence}'")]
    NoApplicableCorruption { sentence: String },

    #[error("invalid minimal pair '{pair_id}': {reason}")]
    InvalidPair { pair_id: String, reason: String },

    #[error("malformed minimal-pair TSV at line {line}: {reason}")]
    BadTsv { line: usize, reason: String },

    #[error("no minimal pairs to score")]
    EmptyPairs,

    #[error("every pair overflowed the model's maximum sequence length")]
    AllPairsSkipped,

    #[error("scoring pair '{pair_id}': {source}")]
    Score { pair_id: String, source: ModelError },

    #[error(transparent)]
    Corpus(#[from] CorpusError),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One grammatical sentence and a minimally corrupted counterpart.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinimalPair {
    pub pair_id: String,
    pub good_sentence: String,
    pub bad_sentence: String,
    pub phenomenon_tag: String,
}

impl MinimalPair {
    pub fn validate(&self) -> Result<(), GrammarEvalError> {
        let invalid = |reason: String| GrammarEvalError::InvalidPair {
            pair_id: self.pair_id.clone(),
            reason,
        };
        if self.pair_id.trim().is_empty() {
            return Err(invalid("empty pair_id".into()));
        }
        for (name, text) in [("good", &self.good_sentence), ("bad", &self.bad_sentence)] {
            if text.trim().is_empty() {
                return Err(invalid(format!("empty {name} sentence")));
            }
            if text.contains('\t') || text.contains('\n') {
                return Err(invalid(format!("{name} sentence contains a tab or newline")));
            }
        }
        if self.good_sentence == self.bad_sentence {
            return Err(invalid("good and bad sentences are identical".into()));
        }
        Ok(())
    }
}

/// All distinct corruptions one rule can produce from a tokenized sentence.
fn rule_applications(rule: &str, words: &[&str], function_words: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    match rule {
        RULE_ADJACENT_SWAP => {
            for i in 0..words.len().saturating_sub(1) {
                if words[i] != words[i + 1] {
                    let mut w = words.to_vec();
                    w.swap(i, i + 1);
                    out.push(w.join(" "));
                }
            }
        }
        RULE_MARKER_SUBSTITUTION => {
            for (i, word) in words.iter().enumerate() {
                if function_words.iter().any(|fw| fw == word) {
                    for fw in function_words {
                        if fw != word {
                            let mut w = words.to_vec();
                            w[i] = fw;
                            out.push(w.join(" "));
                        }
                    }
                }
            }
        }
        RULE_MARKER_DELETION => {
            for (i, word) in words.iter().enumerate() {
                if function_words.iter().any(|fw| fw == word) && words.len() > 1 {
                    let mut w = words.to_vec();
                    w.remove(i);
                    out.push(w.join(" "));
                }
            }
        }
        _ => {}
    }
    out
}

/// Draws `n` grammatical sentences and corrupts each with one seeded rule
/// application. Candidate corruptions that still parse are discarded, so
/// every bad sentence is grammar-checked out-of-language by construction.
pub fn generate_minimal_pairs(
    spec: &GrammarSpec,
    n: usize,
    seed: u64,
) -> Result<Vec<MinimalPair>, GrammarEvalError> {
    spec.validate()?;
    if spec.corruption_rules.is_empty() {
        return Err(GrammarEvalError::NoCorruptionRules {
            language_id: spec.language_id.clone(),
        });
    }
    for rule in &spec.corruption_rules {
        if !KNOWN_RULES.contains(&rule.as_str()) {
            return Err(GrammarEvalError::UnknownRule { rule: rule.clone() });
        }
    }
    let function_words = spec.lexicon.get("FUNCTION_WORDS").cloned().unwrap_or_default();
    let mut rng =
        seeded_rng(derive_seed(seed, &format!("minimal_pairs.{}", spec.language_id)));
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let alt = &spec.alternations[rng.gen_range(0..spec.alternations.len())];
        let use_a = rng.gen_bool(spec.alternation_prob);
        let fills = spec.draw_fills(alt, &mut rng);
        let good = alt.template(use_a).render(&fills);
        let words: Vec<&str> = good.split_whitespace().collect();
        let mut seen = BTreeSet::new();
        let mut candidates: Vec<(&str, String)> = Vec::new();
        for rule in &spec.corruption_rules {
            for bad in rule_applications(rule, &words, &function_words) {
                if bad != good && !spec.membership(&bad) && seen.insert(bad.clone()) {
                    candidates.push((rule, bad));
                }
            }
        }
        if candidates.is_empty() {
            return Err(GrammarEvalError::NoApplicableCorruption { sentence: good });
        }
        let (rule, bad) = candidates[rng.gen_range(0..candidates.len())].clone();
        pairs.push(MinimalPair {
            pair_id: format!("{}.mp{i:04}", spec.language_id),
            good_sentence: good,
            bad_sentence: bad,
            phenomenon_tag: rule.to_string(),
        });
    }
    Ok(pairs)
}

/// Fraction of (good, bad) logprob pairs with good scored higher; ties count
/// half.
pub fn accuracy_from_scores(scored: &[(f64, f64)]) -> f64 {
    let total: f64 = scored
        .iter()
        .map(|&(good, bad)| {
            if good > bad {
                1.0
            } else if good < bad {
                0.0
            } else {
                0.5
            }
        })
        .sum();
    total / scored.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracySummary {
    pub accuracy: f64,
    /// Pairs actually scored.
    pub n_pairs: usize,
    /// Pairs dropped because either sentence overflowed max_seq_len.
    pub n_skipped: usize,
}

/// Scores every pair on total unconditioned log probability (empty context,
/// no per-token normalization; rule choice keeps pairs length-matched).
/// Pairs that overflow the model's maximum sequence length are skipped and
/// counted.
pub fn minimal_pair_accuracy<S: Scalar>(
    params: &TransformerParams<S>,
    config: &ModelConfig,
    tok: &TokenizerModel,
    pairs: &[MinimalPair],
) -> Result<AccuracySummary, GrammarEvalError> {
    if pairs.is_empty() {
        return Err(GrammarEvalError::EmptyPairs);
    }
    let outcomes: Vec<Option<(f64, f64)>> = pairs
        .par_iter()
        .map(|pair| {
            let good = tok.encode(&pair.good_sentence);
            let bad = tok.encode(&pair.bad_sentence);
            match (
                sequence_logprob(params, config, &[], &good),
                sequence_logprob(params, config, &[], &bad),
            ) {
                (Ok(g), Ok(b)) => Ok(Some((g, b))),
                (Err(ModelError::SequenceTooLong { .. }), _)
                | (_, Err(ModelError::SequenceTooLong { .. })) => Ok(None),
                (Err(e), _) | (_, Err(e)) => {
                    Err(GrammarEvalError::Score { pair_id: pair.pair_id.clone(), source: e })
                }
            }
        })
        .collect::<Result<_, _>>()?;
    let n_skipped = outcomes.iter().filter(|o| o.is_none()).count();
    let scored: Vec<(f64, f64)> = outcomes.into_iter().flatten().collect();
    if scored.is_empty() {
        return Err(GrammarEvalError::AllPairsSkipped);
    }
    Ok(AccuracySummary {
        accuracy: accuracy_from_scores(&scored),
        n_pairs: scored.len(),
        n_skipped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProficiencyRow {
    pub step: u64,
    pub language: String,
    pub accuracy: f64,
    pub n_pairs: usize,
    pub n_skipped: usize,
}

/// Evaluates every pair set at every checkpoint. Rows come out sorted by
/// step, with the pair sets in their given order within a step.
pub fn proficiency_trajectory<S: Scalar>(
    checkpoints: &[(u64, PathBuf)],
    tok: &TokenizerModel,
    pair_sets: &[(String, Vec<MinimalPair>)],
) -> Result<Vec<ProficiencyRow>, GrammarEvalError> {
    let mut order: Vec<&(u64, PathBuf)> = checkpoints.iter().collect();
    order.sort_by_key(|(step, _)| *step);
    let mut rows = Vec::with_capacity(order.len() * pair_sets.len());
    for (step, path) in order {
        let (config, params) = load_checkpoint::<S>(path)?;
        for (language, pairs) in pair_sets {
            let summary = minimal_pair_accuracy(&params, &config, tok, pairs)?;
            rows.push(ProficiencyRow {
                step: *step,
                language: language.clone(),
                accuracy: summary.accuracy,
                n_pairs: summary.n_pairs,
                n_skipped: summary.n_skipped,
            });
        }
    }
    Ok(rows)
}

pub fn trajectory_to_csv(rows: &[ProficiencyRow], config_sha256: &str) -> String {
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.step.to_string(),
                r.language.clone(),
                report::fmt_float(r.accuracy),
                r.n_pairs.to_string(),
                r.n_skipped.to_string(),
            ]
        })
        .collect();
    report::csv_to_string(
        config_sha256,
        &["step", "language", "accuracy", "n_pairs", "n_skipped"],
        &table,
    )
}

const TSV_HEADER: &str = "pair_id\tphenomenon_tag\tgood\tbad";
const TSV_HEADER_BARE: &str = "good\tbad";

pub fn pairs_to_tsv_string(pairs: &[MinimalPair]) -> Result<String, GrammarEvalError> {
    let mut text = String::from(TSV_HEADER);
    text.push('\n');
    for pair in pairs {
        pair.validate()?;
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            pair.pair_id, pair.phenomenon_tag, pair.good_sentence, pair.bad_sentence
        ));
    }
    Ok(text)
}

/// Parses the four-column form written by [`pairs_to_tsv_string`], or a bare
/// two-column (good, bad) file so published minimal-pair sets can be plugged
/// in directly.
pub fn pairs_from_tsv_str(text: &str) -> Result<Vec<MinimalPair>, GrammarEvalError> {
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(GrammarEvalError::BadTsv { line: 1, reason: "empty file".into() });
    };
    let bare = match header.trim_end() {
        TSV_HEADER => false,
        TSV_HEADER_BARE => true,
        other => {
            return Err(GrammarEvalError::BadTsv {
                line: 1,
                reason: format!("unrecognized header '{other}'"),
            })
        }
    };
    let mut pairs = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let want = if bare { 2 } else { 4 };
        if fields.len() != want {
            return Err(GrammarEvalError::BadTsv {
                line: idx + 1,
                reason: format!("expected {want} fields, got {}", fields.len()),
            });
        }
        let pair = if bare {
            MinimalPair {
                pair_id: format!("mp{:04}", pairs.len()),
                good_sentence: fields[0].into(),
                bad_sentence: fields[1].into(),
                phenomenon_tag: "imported".into(),
            }
        } else {
            MinimalPair {
                pair_id: fields[0].into(),
                good_sentence: fields[2].into(),
                bad_sentence: fields[3].into(),
                phenomenon_tag: fields[1].into(),
            }
        };
        pair.validate()?;
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn save_pairs(pairs: &[MinimalPair], path: &Path) -> Result<(), GrammarEvalError> {
    std::fs::write(path, pairs_to_tsv_string(pairs)?)?;
    Ok(())
}

pub fn load_pairs(path: &Path) -> Result<Vec<MinimalPair>, GrammarEvalError> {
    pairs_from_tsv_str(&std::fs::read_to_string(path)?)
}
