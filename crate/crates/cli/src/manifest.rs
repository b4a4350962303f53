//! Experiment manifests: schema, validation, grid expansion, and resolution
//! into fully explicit per-experiment configurations.
//!
//! A manifest describes either one experiment or a grid (language pairs x
//! exposure orders x conditions). Validation checks every referenced file
//! before any compute. Resolution derives all stage seeds from the master
//! seed by name and computes the content hash stamped on every emitted CSV,
//! which covers input file contents rather than paths so reruns into fresh
//! directories stay byte-identical.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use primelab::model::ModelConfig;
use primelab::report;
use primelab::rng::derive_seed;
use primelab::trainer::{checkpoint_steps, Condition, TrainConfig, TrainSeeds};

use crate::pipeline::CliError;

fn validation(msg: String) -> CliError {
    CliError::Validation(format!("manifest: {msg}"))
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSettings {
    pub n_train_sentences: usize,
    pub n_eval_sentences: usize,
    pub vocab_size: usize,
    pub contamination_ngram: usize,
}

impl Default for CorpusSettings {
    fn default() -> Self {
        CorpusSettings {
            n_train_sentences: 30_000,
            n_eval_sentences: 400,
            vocab_size: 512,
            contamination_ngram: 5,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PrimingSettings {
    pub n_pairs: usize,
}

impl Default for PrimingSettings {
    fn default() -> Self {
        PrimingSettings { n_pairs: primelab::priming::DEFAULT_N_PAIRS }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct MinimalPairSettings {
    pub n_pairs: usize,
}

impl Default for MinimalPairSettings {
    fn default() -> Self {
        MinimalPairSettings { n_pairs: 200 }
    }
}

/// On-disk training configuration. Seeds always come from the manifest's
/// master seed; the checkpoint list may be given literally or generated by
/// scaling the reference schedule (default scale: total_steps / 128000).
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfigDoc {
    pub total_steps: u64,
    pub switch_step: u64,
    pub batch_size: usize,
    pub lr_peak: f64,
    pub warmup_steps: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub checkpoint_scale: Option<f64>,
    pub checkpoint_steps: Option<Vec<u64>>,
}

impl Default for TrainConfigDoc {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainConfigDoc {
            total_steps: d.total_steps,
            switch_step: d.switch_step,
            batch_size: d.batch_size,
            lr_peak: d.lr_peak,
            warmup_steps: d.warmup_steps,
            adam_beta1: d.adam_beta1,
            adam_beta2: d.adam_beta2,
            adam_eps: d.adam_eps,
            checkpoint_scale: None,
            checkpoint_steps: None,
        }
    }
}

impl TrainConfigDoc {
    pub fn to_train_config(&self, condition: Condition, seeds: TrainSeeds) -> TrainConfig {
        let steps = self.checkpoint_steps.clone().unwrap_or_else(|| {
            let scale =
                self.checkpoint_scale.unwrap_or(self.total_steps as f64 / 128_000.0);
            checkpoint_steps(self.total_steps, self.switch_step, scale)
        });
        TrainConfig {
            total_steps: self.total_steps,
            switch_step: self.switch_step,
            condition,
            batch_size: self.batch_size,
            lr_peak: self.lr_peak,
            warmup_steps: self.warmup_steps,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            checkpoint_steps: steps,
            seeds,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentDoc {
    id: String,
    condition: String,
    l1_grammar: String,
    l2_grammar: String,
    stimuli: String,
    alternation: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridPairDoc {
    name: String,
    first_grammar: String,
    second_grammar: String,
    stimuli_forward: String,
    stimuli_reversed: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridDoc {
    conditions: Vec<String>,
    #[serde(default = "both_orders_default")]
    both_orders: bool,
    alternation: String,
    pairs: Vec<GridPairDoc>,
}

fn both_orders_default() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDoc {
    output_dir: String,
    #[serde(default = "alpha_default")]
    alpha: f64,
    #[serde(default)]
    master_seed: u64,
    model_config: Option<String>,
    train_config: Option<String>,
    #[serde(default)]
    corpus: CorpusSettings,
    #[serde(default)]
    priming: PrimingSettings,
    #[serde(default)]
    minimal_pairs: MinimalPairSettings,
    experiment: Option<ExperimentDoc>,
    grid: Option<GridDoc>,
}

fn alpha_default() -> f64 {
    0.05
}

/// Every stage seed, derived from the master by (experiment id, stage name).
#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct StageSeeds {
    pub master: u64,
    pub corpus_train: u64,
    pub corpus_eval: u64,
    pub tokenizer: u64,
    pub pack_train: u64,
    pub pack_eval: u64,
    pub train_data: u64,
    pub train_dropout: u64,
    pub train_init: u64,
    pub priming_pairs: u64,
    pub minimal_pairs: u64,
}

impl StageSeeds {
    pub fn derive(master: u64, experiment_id: &str) -> Self {
        let stage = |name: &str| derive_seed(master, &format!("{experiment_id}.{name}"));
        StageSeeds {
            master,
            corpus_train: stage("corpus.train"),
            corpus_eval: stage("corpus.eval"),
            tokenizer: stage("tokenizer"),
            pack_train: stage("pack.train"),
            pack_eval: stage("pack.eval"),
            train_data: stage("train.data"),
            train_dropout: stage("train.dropout"),
            train_init: stage("train.init"),
            priming_pairs: stage("priming.pairs"),
            minimal_pairs: stage("minimal_pairs"),
        }
    }

    pub fn train_seeds(&self) -> TrainSeeds {
        TrainSeeds {
            data: self.train_data,
            dropout: self.train_dropout,
            init: self.train_init,
        }
    }
}

/// One experiment with every knob explicit and every path absolute.
#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    pub experiment_id: String,
    pub condition: Condition,
    pub alternation: String,
    pub alpha: f64,
    pub l1_grammar_path: PathBuf,
    pub l2_grammar_path: PathBuf,
    pub stimuli_path: PathBuf,
    pub out_dir: PathBuf,
    pub corpus: CorpusSettings,
    pub priming: PrimingSettings,
    pub minimal_pairs: MinimalPairSettings,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seeds: StageSeeds,
    /// Content hash stamped on every CSV this experiment writes.
    pub stamp: String,
}

pub fn parse_condition(text: &str) -> Result<Condition, CliError> {
    match text {
        "simultaneous" => Ok(Condition::Simultaneous),
        "sequential" => Ok(Condition::Sequential),
        other => Err(validation(format!(
            "unknown condition '{other}' (expected simultaneous or sequential)"
        ))),
    }
}

fn condition_tag(condition: Condition) -> &'static str {
    match condition {
        Condition::Simultaneous => "sim",
        Condition::Sequential => "seq",
    }
}

fn check_id(id: &str) -> Result<(), CliError> {
    let ok = !id.is_empty()
        && id.chars().next().is_some_and(|c| c.is_ascii_alphanumeric())
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(validation(format!(
            "experiment id '{id}' is not filesystem-safe (want [A-Za-z0-9][A-Za-z0-9._-]*)"
        )))
    }
}

fn existing(base: &Path, rel: &str, what: &str) -> Result<PathBuf, CliError> {
    let path = base.join(rel);
    if path.is_file() {
        Ok(path)
    } else {
        Err(validation(format!("{what} '{}' does not exist", path.display())))
    }
}

fn file_sha256(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| validation(format!("reading '{}': {e}", path.display())))?;
    Ok(report::sha256_hex(&bytes))
}

#[derive(Serialize)]
struct StampDoc<'a> {
    artifact_version: &'a str,
    experiment_id: &'a str,
    condition: Condition,
    alternation: &'a str,
    alpha: f64,
    l1_grammar_sha256: &'a str,
    l2_grammar_sha256: &'a str,
    stimuli_sha256: &'a str,
    corpus: &'a CorpusSettings,
    priming: &'a PrimingSettings,
    minimal_pairs: &'a MinimalPairSettings,
    model: &'a ModelConfig,
    train: &'a TrainConfig,
}

struct ExperimentSpec {
    id: String,
    condition: Condition,
    l1_grammar: PathBuf,
    l2_grammar: PathBuf,
    stimuli: PathBuf,
    alternation: String,
}

/// Loads, validates, and expands a manifest into resolved experiments.
/// `output_root_override` replaces the manifest's output_dir when set (the
/// CLI feeds it from the environment).
pub fn load_manifest(
    path: &Path,
    output_root_override: Option<&Path>,
) -> Result<Vec<ResolvedExperiment>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| validation(format!("reading '{}': {e}", path.display())))?;
    let doc: ManifestDoc = toml::from_str(&text).map_err(|e| validation(e.to_string()))?;
    let base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();

    if !(doc.alpha > 0.0 && doc.alpha < 1.0) {
        return Err(validation(format!("alpha must lie in (0, 1), got {}", doc.alpha)));
    }
    let output_root = match output_root_override {
        Some(root) => root.to_path_buf(),
        None => base.join(&doc.output_dir),
    };

    let model = match &doc.model_config {
        Some(rel) => {
            let p = existing(&base, rel, "model config")?;
            let text = std::fs::read_to_string(&p)
                .map_err(|e| validation(format!("reading '{}': {e}", p.display())))?;
            let config: ModelConfig =
                toml::from_str(&text).map_err(|e| validation(format!("{}: {e}", p.display())))?;
            config
        }
        None => ModelConfig::default(),
    };
    model.validate().map_err(|e| validation(e.to_string()))?;

    let train_doc = match &doc.train_config {
        Some(rel) => {
            let p = existing(&base, rel, "train config")?;
            let text = std::fs::read_to_string(&p)
                .map_err(|e| validation(format!("reading '{}': {e}", p.display())))?;
            toml::from_str::<TrainConfigDoc>(&text)
                .map_err(|e| validation(format!("{}: {e}", p.display())))?
        }
        None => TrainConfigDoc::default(),
    };

    let specs = expand(&doc, &base)?;
    let mut seen = BTreeSet::new();
    for spec in &specs {
        check_id(&spec.id)?;
        if !seen.insert(spec.id.clone()) {
            return Err(validation(format!("duplicate experiment id '{}'", spec.id)));
        }
    }

    let mut resolved = Vec::with_capacity(specs.len());
    for spec in specs {
        let seeds = StageSeeds::derive(doc.master_seed, &spec.id);
        let train = train_doc.to_train_config(spec.condition, seeds.train_seeds());
        train.validate().map_err(|e| validation(e.to_string()))?;
        if model.max_seq_len == 0 {
            return Err(validation("model max_seq_len must be positive".into()));
        }
        let stamp_doc = StampDoc {
            artifact_version: report::artifact_version(),
            experiment_id: &spec.id,
            condition: spec.condition,
            alternation: &spec.alternation,
            alpha: doc.alpha,
            l1_grammar_sha256: &file_sha256(&spec.l1_grammar)?,
            l2_grammar_sha256: &file_sha256(&spec.l2_grammar)?,
            stimuli_sha256: &file_sha256(&spec.stimuli)?,
            corpus: &doc.corpus,
            priming: &doc.priming,
            minimal_pairs: &doc.minimal_pairs,
            model: &model,
            train: &train,
        };
        let stamp_text =
            toml::to_string(&stamp_doc).map_err(|e| validation(e.to_string()))?;
        resolved.push(ResolvedExperiment {
            out_dir: output_root.join(&spec.id),
            experiment_id: spec.id,
            condition: spec.condition,
            alternation: spec.alternation,
            alpha: doc.alpha,
            l1_grammar_path: spec.l1_grammar,
            l2_grammar_path: spec.l2_grammar,
            stimuli_path: spec.stimuli,
            corpus: doc.corpus.clone(),
            priming: doc.priming.clone(),
            minimal_pairs: doc.minimal_pairs.clone(),
            model: model.clone(),
            train,
            seeds,
            stamp: report::sha256_hex(stamp_text.as_bytes()),
        });
    }
    Ok(resolved)
}

fn expand(doc: &ManifestDoc, base: &Path) -> Result<Vec<ExperimentSpec>, CliError> {
    match (&doc.experiment, &doc.grid) {
        (Some(_), Some(_)) => {
            Err(validation("declare either [experiment] or [grid], not both".into()))
        }
        (None, None) => Err(validation("declare an [experiment] or a [grid]".into())),
        (Some(exp), None) => Ok(vec![ExperimentSpec {
            id: exp.id.clone(),
            condition: parse_condition(&exp.condition)?,
            l1_grammar: existing(base, &exp.l1_grammar, "L1 grammar")?,
            l2_grammar: existing(base, &exp.l2_grammar, "L2 grammar")?,
            stimuli: existing(base, &exp.stimuli, "stimulus file")?,
            alternation: exp.alternation.clone(),
        }]),
        (None, Some(grid)) => {
            if grid.conditions.is_empty() {
                return Err(validation("grid.conditions must be non-empty".into()));
            }
            if grid.pairs.is_empty() {
                return Err(validation("grid.pairs must be non-empty".into()));
            }
            let mut conditions = Vec::new();
            for c in &grid.conditions {
                let cond = parse_condition(c)?;
                if conditions.contains(&cond) {
                    return Err(validation(format!("duplicate grid condition '{c}'")));
                }
                conditions.push(cond);
            }
            let mut specs = Vec::new();
            for pair in &grid.pairs {
                let first = existing(base, &pair.first_grammar, "grammar")?;
                let second = existing(base, &pair.second_grammar, "grammar")?;
                let forward = existing(base, &pair.stimuli_forward, "stimulus file")?;
                let mut orders = vec![("fwd", first.clone(), second.clone(), forward)];
                if grid.both_orders {
                    let rel = pair.stimuli_reversed.as_ref().ok_or_else(|| {
                        validation(format!(
                            "grid pair '{}' needs stimuli_reversed when both_orders is set",
                            pair.name
                        ))
                    })?;
                    let reversed = existing(base, rel, "stimulus file")?;
                    orders.push(("rev", second, first, reversed));
                }
                for (order_tag, l1, l2, stimuli) in orders {
                    for &condition in &conditions {
                        specs.push(ExperimentSpec {
                            id: format!(
                                "{}_{order_tag}_{}",
                                pair.name,
                                condition_tag(condition)
                            ),
                            condition,
                            l1_grammar: l1.clone(),
                            l2_grammar: l2.clone(),
                            stimuli: stimuli.clone(),
                            alternation: grid.alternation.clone(),
                        });
                    }
                }
            }
            Ok(specs)
        }
    }
}

#[derive(Serialize)]
struct ResolvedDoc<'a> {
    artifact_version: &'a str,
    stamp_sha256: &'a str,
    experiment_id: &'a str,
    condition: Condition,
    alternation: &'a str,
    alpha: f64,
    l1_grammar: String,
    l2_grammar: String,
    stimuli: String,
    out_dir: String,
    corpus: &'a CorpusSettings,
    priming: &'a PrimingSettings,
    minimal_pairs: &'a MinimalPairSettings,
    seeds: &'a StageSeeds,
    model: &'a ModelConfig,
    train: &'a TrainConfig,
}

/// The MANIFEST.resolved text: every resolved value and seed, including the
/// machine-specific paths deliberately left out of the stamp hash.
pub fn resolved_text(exp: &ResolvedExperiment) -> String {
    let doc = ResolvedDoc {
        artifact_version: report::artifact_version(),
        stamp_sha256: &exp.stamp,
        experiment_id: &exp.experiment_id,
        condition: exp.condition,
        alternation: &exp.alternation,
        alpha: exp.alpha,
        l1_grammar: exp.l1_grammar_path.display().to_string(),
        l2_grammar: exp.l2_grammar_path.display().to_string(),
        stimuli: exp.stimuli_path.display().to_string(),
        out_dir: exp.out_dir.display().to_string(),
        corpus: &exp.corpus,
        priming: &exp.priming,
        minimal_pairs: &exp.minimal_pairs,
        seeds: &exp.seeds,
        model: &exp.model,
        train: &exp.train,
    };
    toml::to_string(&doc).expect("resolved manifest serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    const GRAMMAR_A: &str = r#"
language_id = "lang1"
alternation_prob = 0.5
corruption_rules = ["adjacent_swap", "marker_substitution"]

[lexicon]
AGENT = ["bimo", "karu"]
VERB = ["danu", "pelki"]
THEME = ["wobu", "tilva"]
GOAL = ["mupa", "lorfi"]
FUNCTION_WORDS = ["fa", "ko"]

[[alternations]]
name = "dative"
construction_a = "AGENT.0 VERB.0 THEME.0 fa GOAL.0"
construction_b = "AGENT.0 VERB.0 GOAL.0 ko THEME.0"
"#;

    const GRAMMAR_B: &str = r#"
language_id = "lang2"
alternation_prob = 0.5
corruption_rules = ["adjacent_swap", "marker_substitution"]

[lexicon]
AGENT = ["zuna", "miko"]
VERB = ["ruta", "velo"]
THEME = ["sipa", "goru"]
GOAL = ["nelu", "hasi"]
FUNCTION_WORDS = ["pe", "du"]

[[alternations]]
name = "dative"
construction_a = "AGENT.0 VERB.0 THEME.0 pe GOAL.0"
construction_b = "AGENT.0 VERB.0 GOAL.0 du THEME.0"
"#;

    const STIMULI: &str = "item_id\tprime_A\tprime_B\ttarget_A\ttarget_B\n\
        it0\tbimo danu wobu fa mupa\tbimo danu mupa ko wobu\tzuna ruta sipa pe nelu\tzuna ruta nelu du sipa\n\
        it1\tkaru danu tilva fa lorfi\tkaru danu lorfi ko tilva\tmiko velo goru pe hasi\tmiko velo hasi du goru\n";

    fn write_inputs(dir: &Path) {
        fs::write(dir.join("a.toml"), GRAMMAR_A).unwrap();
        fs::write(dir.join("b.toml"), GRAMMAR_B).unwrap();
        fs::write(dir.join("fwd.tsv"), STIMULI).unwrap();
        fs::write(dir.join("rev.tsv"), STIMULI).unwrap();
    }

    fn single_manifest(dir: &Path) -> PathBuf {
        write_inputs(dir);
        let path = dir.join("m.toml");
        fs::write(
            &path,
            r#"
output_dir = "runs"
master_seed = 7

[experiment]
id = "demo"
condition = "simultaneous"
l1_grammar = "a.toml"
l2_grammar = "b.toml"
stimuli = "fwd.tsv"
alternation = "dative"
"#,
        )
        .unwrap();
        path
    }

    #[test]
    fn single_experiment_resolves_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = single_manifest(dir.path());
        let exps = load_manifest(&path, None).unwrap();
        assert_eq!(exps.len(), 1);
        let e = &exps[0];
        assert_eq!(e.experiment_id, "demo");
        assert_eq!(e.condition, Condition::Simultaneous);
        assert_eq!(e.alpha, 0.05);
        assert_eq!(e.model, ModelConfig::default());
        assert_eq!(e.train.total_steps, 1280);
        assert_eq!(e.train.checkpoint_steps, checkpoint_steps(1280, 640, 0.01));
        assert_eq!(e.train.seeds, e.seeds.train_seeds());
        assert_eq!(e.out_dir, dir.path().join("runs").join("demo"));
        assert_eq!(e.stamp.len(), 64);
    }

    #[test]
    fn grid_expands_to_sixteen_experiments() {
        let dir = tempfile::tempdir().unwrap();
        write_inputs(dir.path());
        let mut text = String::from(
            "output_dir = \"runs\"\n\n[grid]\nconditions = [\"simultaneous\", \"sequential\"]\nboth_orders = true\nalternation = \"dative\"\n",
        );
        for name in ["p1", "p2", "p3", "p4"] {
            text.push_str(&format!(
                "\n[[grid.pairs]]\nname = \"{name}\"\nfirst_grammar = \"a.toml\"\nsecond_grammar = \"b.toml\"\nstimuli_forward = \"fwd.tsv\"\nstimuli_reversed = \"rev.tsv\"\n"
            ));
        }
        let path = dir.path().join("grid.toml");
        fs::write(&path, text).unwrap();
        let exps = load_manifest(&path, None).unwrap();
        assert_eq!(exps.len(), 16);
        let ids: BTreeSet<&str> = exps.iter().map(|e| e.experiment_id.as_str()).collect();
        assert_eq!(ids.len(), 16);
        assert!(ids.contains("p1_fwd_sim"));
        assert!(ids.contains("p4_rev_seq"));
        // reversed order swaps the grammar roles
        let fwd = exps.iter().find(|e| e.experiment_id == "p1_fwd_sim").unwrap();
        let rev = exps.iter().find(|e| e.experiment_id == "p1_rev_sim").unwrap();
        assert_eq!(fwd.l1_grammar_path, rev.l2_grammar_path);
        assert_eq!(fwd.l2_grammar_path, rev.l1_grammar_path);
        // conditions and ids feed the stamp, so all sixteen differ
        let stamps: BTreeSet<&str> = exps.iter().map(|e| e.stamp.as_str()).collect();
        assert_eq!(stamps.len(), 16);
    }

    #[test]
    fn missing_stimulus_file_fails_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = single_manifest(dir.path());
        fs::remove_file(dir.path().join("fwd.tsv")).unwrap();
        match load_manifest(&path, None) {
            Err(CliError::Validation(msg)) => assert!(msg.contains("fwd.tsv"), "{msg}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_manifests() {
        let dir = tempfile::tempdir().unwrap();
        write_inputs(dir.path());
        let cases = [
            ("empty", "output_dir = \"runs\"\n".to_string()),
            (
                "bad id",
                "output_dir = \"r\"\n[experiment]\nid = \"../evil\"\ncondition = \"simultaneous\"\nl1_grammar = \"a.toml\"\nl2_grammar = \"b.toml\"\nstimuli = \"fwd.tsv\"\nalternation = \"dative\"\n".to_string(),
            ),
            (
                "bad condition",
                "output_dir = \"r\"\n[experiment]\nid = \"x\"\ncondition = \"both\"\nl1_grammar = \"a.toml\"\nl2_grammar = \"b.toml\"\nstimuli = \"fwd.tsv\"\nalternation = \"dative\"\n".to_string(),
            ),
            (
                "unknown key",
                "output_dir = \"r\"\ntypo_field = 1\n[experiment]\nid = \"x\"\ncondition = \"simultaneous\"\nl1_grammar = \"a.toml\"\nl2_grammar = \"b.toml\"\nstimuli = \"fwd.tsv\"\nalternation = \"dative\"\n".to_string(),
            ),
            (
                "bad alpha",
                "output_dir = \"r\"\nalpha = 1.5\n[experiment]\nid = \"x\"\ncondition = \"simultaneous\"\nl1_grammar = \"a.toml\"\nl2_grammar = \"b.toml\"\nstimuli = \"fwd.tsv\"\nalternation = \"dative\"\n".to_string(),
            ),
        ];
        for (label, text) in cases {
            let path = dir.path().join("bad.toml");
            fs::write(&path, text).unwrap();
            assert!(
                matches!(load_manifest(&path, None), Err(CliError::Validation(_))),
                "case '{label}' should fail validation"
            );
        }
    }

    #[test]
    fn stamp_ignores_output_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = single_manifest(dir.path());
        let a = load_manifest(&path, None).unwrap();
        let b = load_manifest(&path, Some(Path::new("/elsewhere/out"))).unwrap();
        assert_eq!(a[0].stamp, b[0].stamp);
        assert_ne!(a[0].out_dir, b[0].out_dir);
        assert_eq!(b[0].out_dir, Path::new("/elsewhere/out").join("demo"));
    }

    #[test]
    fn stamp_tracks_input_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = single_manifest(dir.path());
        let a = load_manifest(&path, None).unwrap();
        let mut stim = String::from(STIMULI);
        stim.push_str("it2\tbimo pelki wobu fa mupa\tbimo pelki mupa ko wobu\tzuna velo sipa pe nelu\tzuna velo nelu du sipa\n");
        fs::write(dir.path().join("fwd.tsv"), stim).unwrap();
        let b = load_manifest(&path, None).unwrap();
        assert_ne!(a[0].stamp, b[0].stamp);
    }

    #[test]
    fn seed_derivation_separates_experiments_and_stages() {
        let a = StageSeeds::derive(7, "exp_a");
        let b = StageSeeds::derive(7, "exp_b");
        assert_ne!(a.corpus_train, b.corpus_train);
        assert_ne!(a.corpus_train, a.corpus_eval);
        assert_ne!(a.train_data, a.train_dropout);
        assert_eq!(a, StageSeeds::derive(7, "exp_a"));
    }

    #[test]
    fn resolved_text_round_trips_core_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = single_manifest(dir.path());
        let exp = &load_manifest(&path, None).unwrap()[0];
        let text = resolved_text(exp);
        let value: toml::Value = toml::from_str(&text).unwrap();
        assert_eq!(value["experiment_id"].as_str(), Some("demo"));
        assert_eq!(value["stamp_sha256"].as_str(), Some(exp.stamp.as_str()));
        assert_eq!(value["condition"].as_str(), Some("simultaneous"));
        assert_eq!(value["seeds"]["master"].as_integer(), Some(7));
        assert_eq!(value["train"]["total_steps"].as_integer(), Some(1280));
        assert_eq!(value["model"]["d_model"].as_integer(), Some(64));
    }

    #[test]
    fn train_config_doc_generates_or_accepts_checkpoint_lists() {
        let doc = TrainConfigDoc::default();
        let cfg = doc.to_train_config(Condition::Sequential, TrainSeeds::default());
        assert_eq!(cfg.checkpoint_steps, checkpoint_steps(1280, 640, 0.01));
        assert_eq!(cfg.condition, Condition::Sequential);

        let doc = TrainConfigDoc {
            checkpoint_steps: Some(vec![0, 640, 1280]),
            ..TrainConfigDoc::default()
        };
        let cfg = doc.to_train_config(Condition::Simultaneous, TrainSeeds::default());
        assert_eq!(cfg.checkpoint_steps, vec![0, 640, 1280]);

        let doc = TrainConfigDoc {
            total_steps: 12_800,
            switch_step: 6_400,
            ..TrainConfigDoc::default()
        };
        let cfg = doc.to_train_config(Condition::Simultaneous, TrainSeeds::default());
        assert_eq!(cfg.checkpoint_steps, checkpoint_steps(12_800, 6_400, 0.1));
    }
}
