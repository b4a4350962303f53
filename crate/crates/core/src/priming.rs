//! Structural priming evaluation: prime/target stimulus sets, prime-target
//! pair expansion, and the normalized-probability metric per checkpoint.
//!
//! For a prime sentence P and the two construction variants T_A/T_B of a
//! target, the score of T_A is P_N(T_A|P) = P(T_A|P) / (P(T_A|P) + P(T_B|P)),
//! evaluated in log space. A model is primed when congruent prime/target
//! construction pairs score above incongruent ones.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{GrammarSpec, SpecialIds, TokenizerModel};
use crate::model::{
    load_checkpoint, sequence_logprob, ModelConfig, ModelError, TransformerParams,
};
use crate::report;
use crate::rng::{derive_seed, seeded_rng};
use crate::Scalar;

/// The sampling default when a stimulus set is expanded into pairs.
pub const DEFAULT_N_PAIRS: usize = 144;

#[derive(Debug, Error)]
pub enum PrimingError {
    #[error("malformed stimulus data: {0}")]
    StimulusFormat(String),

    #[error("duplicate item_id '{item_id}' in stimulus set")]
    DuplicateItem { item_id: String },

    #[error("grammar '{language_id}' has no alternation named '{name}'")]
    MissingAlternation { language_id: String, name: String },

    #[error("requested {requested} pairs but the cross product has only {maximum}")]
    PairSampleTooLarge { requested: usize, maximum: usize },

    #[error("pair sample size must be at least 1")]
    EmptyPairSample,

    #[error("scoring item '{item_id}': {source}")]
    Score { item_id: String, source: ModelError },

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Construction {
    A,
    B,
}

impl fmt::Display for Construction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Construction::A => "A",
            Construction::B => "B",
        })
    }
}

/// One stimulus item: both construction variants of a prime sentence and of
/// a target sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StimulusItem {
    pub item_id: String,
    pub prime_a: String,
    pub prime_b: String,
    pub target_a: String,
    pub target_b: String,
}

impl StimulusItem {
    fn texts(&self) -> [(&'static str, &str); 4] {
        [
            ("prime_A", &self.prime_a),
            ("prime_B", &self.prime_b),
            ("target_A", &self.target_a),
            ("target_B", &self.target_b),
        ]
    }
}

/// A stimulus collection for one alternation and one language direction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrimingStimulusSet {
    pub items: Vec<StimulusItem>,
    pub alternation_name: String,
    pub prime_language: String,
    pub target_language: String,
    pub source_label: String,
}

const TSV_HEADER: &str = "item_id\tprime_A\tprime_B\ttarget_A\ttarget_B";

impl PrimingStimulusSet {
    pub fn validate(&self) -> Result<(), PrimingError> {
        let mut seen = std::collections::BTreeSet::new();
        for item in &self.items {
            if !seen.insert(item.item_id.as_str()) {
                return Err(PrimingError::DuplicateItem { item_id: item.item_id.clone() });
            }
            for (column, text) in item.texts() {
                if text.trim().is_empty() {
                    return Err(PrimingError::StimulusFormat(format!(
                        "item '{}' has an empty {column}",
                        item.item_id
                    )));
                }
                if text.contains('\t') || text.contains('\n') {
                    return Err(PrimingError::StimulusFormat(format!(
                        "item '{}' {column} contains a tab or newline",
                        item.item_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Parses the tab-separated stimulus format: a fixed header row, then
    /// one item per line. Set-level metadata comes from the caller since the
    /// file carries only the item table.
    pub fn from_tsv_str(
        text: &str,
        alternation_name: &str,
        prime_language: &str,
        target_language: &str,
        source_label: &str,
    ) -> Result<Self, PrimingError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| PrimingError::StimulusFormat("empty stimulus file".into()))?;
        if header.trim_end() != TSV_HEADER {
            return Err(PrimingError::StimulusFormat(format!(
                "bad header '{header}' (expected '{TSV_HEADER}')"
            )));
        }
        let mut items = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(PrimingError::StimulusFormat(format!(
                    "line {}: expected 5 tab-separated columns, got {}",
                    i + 2,
                    cols.len()
                )));
            }
            items.push(StimulusItem {
                item_id: cols[0].to_string(),
                prime_a: cols[1].to_string(),
                prime_b: cols[2].to_string(),
                target_a: cols[3].to_string(),
                target_b: cols[4].to_string(),
            });
        }
        let set = PrimingStimulusSet {
            items,
            alternation_name: alternation_name.to_string(),
            prime_language: prime_language.to_string(),
            target_language: target_language.to_string(),
            source_label: source_label.to_string(),
        };
        set.validate()?;
        Ok(set)
    }

    pub fn to_tsv_string(&self) -> Result<String, PrimingError> {
        self.validate()?;
        let mut out = String::from(TSV_HEADER);
        out.push('\n');
        for item in &self.items {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                item.item_id, item.prime_a, item.prime_b, item.target_a, item.target_b
            ));
        }
        Ok(out)
    }

    pub fn load(
        path: &Path,
        alternation_name: &str,
        prime_language: &str,
        target_language: &str,
    ) -> Result<Self, PrimingError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_tsv_str(
            &text,
            alternation_name,
            prime_language,
            target_language,
            &path.display().to_string(),
        )
    }

    pub fn save(&self, path: &Path) -> Result<(), PrimingError> {
        std::fs::write(path, self.to_tsv_string()?)?;
        Ok(())
    }
}

/// Builds a stimulus set from two grammars sharing an alternation name:
/// primes rendered in the prime grammar, targets in the target grammar, with
/// fresh slot fills per item. Crosslingual sets use different grammars;
/// within-language sets pass the same grammar twice.
pub fn synthesize_stimulus_set(
    prime_spec: &GrammarSpec,
    target_spec: &GrammarSpec,
    alternation_name: &str,
    n_items: usize,
    seed: u64,
) -> Result<PrimingStimulusSet, PrimingError> {
    let find = |spec: &GrammarSpec| {
        spec.alternations
            .iter()
            .position(|a| a.name == alternation_name)
            .ok_or_else(|| PrimingError::MissingAlternation {
                language_id: spec.language_id.clone(),
                name: alternation_name.to_string(),
            })
    };
    let alt_p = &prime_spec.alternations[find(prime_spec)?];
    let alt_t = &target_spec.alternations[find(target_spec)?];

    let mut rng = seeded_rng(derive_seed(
        seed,
        &format!(
            "stimuli.{alternation_name}.{}.{}",
            prime_spec.language_id, target_spec.language_id
        ),
    ));
    let mut items = Vec::with_capacity(n_items);
    for k in 0..n_items {
        let pf = prime_spec.draw_fills(alt_p, &mut rng);
        let tf = target_spec.draw_fills(alt_t, &mut rng);
        items.push(StimulusItem {
            item_id: format!("item{k:03}"),
            prime_a: alt_p.construction_a.render(&pf),
            prime_b: alt_p.construction_b.render(&pf),
            target_a: alt_t.construction_a.render(&tf),
            target_b: alt_t.construction_b.render(&tf),
        });
    }
    let set = PrimingStimulusSet {
        items,
        alternation_name: alternation_name.to_string(),
        prime_language: prime_spec.language_id.clone(),
        target_language: target_spec.language_id.clone(),
        source_label: format!("synthetic.seed{seed}"),
    };
    set.validate()?;
    Ok(set)
}

/// Uniform sample of (prime item, target item) index pairs from the full
/// cross product, without replacement, deterministic per seed; exhaustive
/// when `n_sample` equals the cross-product size. Pairs come back sorted.
pub fn expand_pairs(
    set: &PrimingStimulusSet,
    n_sample: usize,
    seed: u64,
) -> Result<Vec<(usize, usize)>, PrimingError> {
    let k = set.items.len();
    let maximum = k * k;
    if n_sample == 0 {
        return Err(PrimingError::EmptyPairSample);
    }
    if n_sample > maximum {
        return Err(PrimingError::PairSampleTooLarge { requested: n_sample, maximum });
    }
    let mut flat: Vec<usize> = if n_sample == maximum {
        (0..maximum).collect()
    } else {
        let mut rng = seeded_rng(derive_seed(
            seed,
            &format!(
                "pairs.{}.{}.{}",
                set.alternation_name, set.prime_language, set.target_language
            ),
        ));
        rand::seq::index::sample(&mut rng, maximum, n_sample).into_vec()
    };
    flat.sort_unstable();
    Ok(flat.into_iter().map(|i| (i / k, i % k)).collect())
}

/// How a prime context and a target continuation are joined for scoring. The
/// target is always tokenized on its own, so every prime conditions the same
/// continuation token ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JoinerPolicy {
    /// prime + " " + target (default).
    Space,
    /// prime + "\n" + target.
    Newline,
    /// prime, the end-of-text token, then the target.
    EndOfText,
}

impl Default for JoinerPolicy {
    fn default() -> Self {
        JoinerPolicy::Space
    }
}

impl fmt::Display for JoinerPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JoinerPolicy::Space => "space",
            JoinerPolicy::Newline => "newline",
            JoinerPolicy::EndOfText => "eot",
        })
    }
}

fn context_ids(tok: &TokenizerModel, prime_text: &str, joiner: JoinerPolicy) -> Vec<u32> {
    match joiner {
        JoinerPolicy::Space => tok.encode(&format!("{prime_text} ")),
        JoinerPolicy::Newline => tok.encode(&format!("{prime_text}\n")),
        JoinerPolicy::EndOfText => {
            let mut ids = tok.encode(prime_text);
            ids.push(SpecialIds::standard().eot);
            ids
        }
    }
}

/// P_N of the target against its alternative from their conditional log
/// probabilities: the logistic of (lp_target - lp_alt), branch-arranged so
/// complementary calls sum to exactly 1.
pub fn normalized_from_logprobs(lp_target: f64, lp_alt: f64) -> f64 {
    let d = lp_target - lp_alt;
    let p = if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        1.0 - 1.0 / (1.0 + d.exp())
    };
    // extreme scores saturate the logistic; keep P_N inside the open
    // interval (complementary calls saturate together, so the pair still
    // sums to exactly 1)
    p.clamp(f64::EPSILON / 2.0, 1.0 - f64::EPSILON / 2.0)
}

/// P_N(target | prime) against the alternative target, under the joiner
/// policy. Overlong inputs are an error, never truncated.
pub fn normalized_prob<S: Scalar>(
    params: &TransformerParams<S>,
    config: &ModelConfig,
    tok: &TokenizerModel,
    prime_text: &str,
    target_text: &str,
    alt_target_text: &str,
    joiner: JoinerPolicy,
) -> Result<f64, PrimingError> {
    let ctx = context_ids(tok, prime_text, joiner);
    let lp_t = sequence_logprob(params, config, &ctx, &tok.encode(target_text))?;
    let lp_alt = sequence_logprob(params, config, &ctx, &tok.encode(alt_target_text))?;
    Ok(normalized_from_logprobs(lp_t, lp_alt))
}

/// One scored prime/target combination. `item_id` names the target item;
/// `normalized_prob` is P_N of the target construction named in the row.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimingScore {
    pub item_id: String,
    pub prime_item_id: String,
    pub prime_construction: Construction,
    pub target_construction: Construction,
    pub logprob_target_a: f64,
    pub logprob_target_b: f64,
    pub normalized_prob: f64,
    pub congruent: bool,
}

/// Scores every pair under all four prime/target construction combinations.
/// Pairs are scored in parallel; the result is sorted by target item, prime
/// item, then constructions, so it is independent of evaluation order.
pub fn score_set<S: Scalar>(
    params: &TransformerParams<S>,
    config: &ModelConfig,
    tok: &TokenizerModel,
    joiner: JoinerPolicy,
    set: &PrimingStimulusSet,
    pairs: &[(usize, usize)],
) -> Result<Vec<PrimingScore>, PrimingError> {
    set.validate()?;
    let per_pair: Vec<Vec<PrimingScore>> = pairs
        .par_iter()
        .map(|&(pi, ti)| {
            let prime = &set.items[pi];
            let target = &set.items[ti];
            let with_ctx = |e: ModelError| PrimingError::Score {
                item_id: target.item_id.clone(),
                source: e,
            };
            let cont_a = tok.encode(&target.target_a);
            let cont_b = tok.encode(&target.target_b);
            let mut rows = Vec::with_capacity(4);
            for prime_cons in [Construction::A, Construction::B] {
                let prime_text = match prime_cons {
                    Construction::A => &prime.prime_a,
                    Construction::B => &prime.prime_b,
                };
                let ctx = context_ids(tok, prime_text, joiner);
                let lp_a =
                    sequence_logprob(params, config, &ctx, &cont_a).map_err(with_ctx)?;
                let lp_b =
                    sequence_logprob(params, config, &ctx, &cont_b).map_err(with_ctx)?;
                for target_cons in [Construction::A, Construction::B] {
                    let normalized = match target_cons {
                        Construction::A => normalized_from_logprobs(lp_a, lp_b),
                        Construction::B => normalized_from_logprobs(lp_b, lp_a),
                    };
                    rows.push(PrimingScore {
                        item_id: target.item_id.clone(),
                        prime_item_id: prime.item_id.clone(),
                        prime_construction: prime_cons,
                        target_construction: target_cons,
                        logprob_target_a: lp_a,
                        logprob_target_b: lp_b,
                        normalized_prob: normalized,
                        congruent: prime_cons == target_cons,
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<_, PrimingError>>()?;
    let mut scores: Vec<PrimingScore> = per_pair.into_iter().flatten().collect();
    scores.sort_by(|x, y| {
        (&x.item_id, &x.prime_item_id, x.prime_construction, x.target_construction).cmp(&(
            &y.item_id,
            &y.prime_item_id,
            y.prime_construction,
            y.target_construction,
        ))
    });
    Ok(scores)
}

/// Congruent/incongruent P_N means for one target item.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemEffect {
    pub item_id: String,
    pub mean_congruent: f64,
    pub mean_incongruent: f64,
    pub effect: f64,
    pub n_scores: usize,
}

/// Groups scores by target item: effect = mean P_N over congruent rows minus
/// mean over incongruent rows. Output sorted by item_id.
pub fn item_effects(scores: &[PrimingScore]) -> Vec<ItemEffect> {
    let mut groups: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for s in scores {
        let entry = groups.entry(&s.item_id).or_default();
        if s.congruent {
            entry.0.push(s.normalized_prob);
        } else {
            entry.1.push(s.normalized_prob);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    groups
        .into_iter()
        .filter(|(_, (c, i))| !c.is_empty() && !i.is_empty())
        .map(|(id, (c, i))| {
            let mc = mean(&c);
            let mi = mean(&i);
            ItemEffect {
                item_id: id.to_string(),
                mean_congruent: mc,
                mean_incongruent: mi,
                effect: mc - mi,
                n_scores: c.len() + i.len(),
            }
        })
        .collect()
}

/// Average of per-item effects: the headline priming effect for one model.
pub fn mean_effect(effects: &[ItemEffect]) -> f64 {
    effects.iter().map(|e| e.effect).sum::<f64>() / effects.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub step: u64,
    pub mean_congruent_pn: f64,
    pub mean_incongruent_pn: f64,
    pub effect: f64,
    pub n_items: usize,
}

/// Collapses item effects into one trajectory row. Item means are computed
/// before averaging, so targets that were sampled more often do not
/// dominate.
pub fn trajectory_row(step: u64, effects: &[ItemEffect]) -> TrajectoryRow {
    let n = effects.len();
    let mean =
        |f: &dyn Fn(&ItemEffect) -> f64| effects.iter().map(|e| f(e)).sum::<f64>() / n as f64;
    TrajectoryRow {
        step,
        mean_congruent_pn: mean(&|e| e.mean_congruent),
        mean_incongruent_pn: mean(&|e| e.mean_incongruent),
        effect: mean(&|e| e.effect),
        n_items: n,
    }
}

/// Scores the same stimulus pairs at every checkpoint; one row per step,
/// sorted by step.
pub fn priming_trajectory<S: Scalar>(
    checkpoints: &[(u64, PathBuf)],
    tok: &TokenizerModel,
    joiner: JoinerPolicy,
    set: &PrimingStimulusSet,
    pairs: &[(usize, usize)],
) -> Result<Vec<TrajectoryRow>, PrimingError> {
    let mut rows = Vec::with_capacity(checkpoints.len());
    for (step, path) in checkpoints {
        let (config, params) = load_checkpoint::<S>(path)?;
        let scores = score_set(&params, &config, tok, joiner, set, pairs)?;
        rows.push(trajectory_row(*step, &item_effects(&scores)));
    }
    rows.sort_by_key(|r| r.step);
    Ok(rows)
}

pub const SCORES_CSV_HEADER: [&str; 8] = [
    "step",
    "item_id",
    "prime_cons",
    "target_cons",
    "congruent",
    "logprob_A",
    "logprob_B",
    "normalized_prob",
];

/// CSV cell rows for one checkpoint step, matching [`SCORES_CSV_HEADER`].
pub fn scores_rows(step: u64, scores: &[PrimingScore]) -> Vec<Vec<String>> {
    scores
        .iter()
        .map(|s| {
            vec![
                step.to_string(),
                s.item_id.clone(),
                s.prime_construction.to_string(),
                s.target_construction.to_string(),
                s.congruent.to_string(),
                report::fmt_float(s.logprob_target_a),
                report::fmt_float(s.logprob_target_b),
                report::fmt_float(s.normalized_prob),
            ]
        })
        .collect()
}

/// Per-score CSV table for one checkpoint step.
pub fn scores_to_csv(step: u64, scores: &[PrimingScore], config_sha256: &str) -> String {
    report::csv_to_string(config_sha256, &SCORES_CSV_HEADER, &scores_rows(step, scores))
}

pub fn trajectory_to_csv(rows: &[TrajectoryRow], config_sha256: &str) -> String {
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.step.to_string(),
                report::fmt_float(r.mean_congruent_pn),
                report::fmt_float(r.mean_incongruent_pn),
                report::fmt_float(r.effect),
                r.n_items.to_string(),
            ]
        })
        .collect();
    report::csv_to_string(
        config_sha256,
        &["step", "mean_congruent_PN", "mean_incongruent_PN", "effect", "n_items"],
        &table,
    )
}
