//! Pipeline stages shared by the subcommands and the end-to-end runner.
//!
//! Every stage maps its library errors into [`CliError`] with the stage
//! named, so a failing run reports where it stopped while keeping whatever
//! partial outputs were already written.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use primelab::corpus::{
    check_contamination, encode_corpus_stream, generate_corpus, pack_sequences, save_corpus,
    GrammarSpec, PackedSequence, TokenizerModel,
};
use primelab::grammar_eval::{self, MinimalPair};
use primelab::model::load_checkpoint;
use primelab::priming::{
    self, expand_pairs, item_effects, score_set, trajectory_row, Construction, JoinerPolicy,
    PrimingScore, PrimingStimulusSet,
};
use primelab::report;
use primelab::stats::{analyze_experiments, reports_to_csv, ExperimentSamples, PairedSample};
use primelab::trainer::{self, eval_mean_surprisal, Condition};

use crate::manifest::{resolved_text, ResolvedExperiment};

/// Name of the environment variable that redirects all `run` output.
pub const OUTPUT_ROOT_ENV: &str = "PRIMELAB_OUTPUT_ROOT";

#[derive(Debug)]
pub enum CliError {
    /// Bad inputs, caught before or while reading them (exit 1).
    Validation(String),
    /// A pipeline stage failed mid-compute (exit 2).
    Runtime(String),
    /// The statistics stage had nothing testable (exit 3).
    Degenerate(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Degenerate(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) | CliError::Degenerate(m) => {
                f.write_str(m)
            }
        }
    }
}

impl std::error::Error for CliError {}

fn stage<E: fmt::Display>(name: &'static str) -> impl Fn(E) -> CliError {
    move |e| CliError::Runtime(format!("stage {name}: {e}"))
}

fn invalid<E: fmt::Display>(name: &'static str) -> impl Fn(E) -> CliError {
    move |e| CliError::Validation(format!("stage {name}: {e}"))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(stage("setup"))?;
        }
    }
    Ok(())
}

fn write_text(path: &Path, text: &str, stage_name: &'static str) -> Result<(), CliError> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(stage(stage_name))
}

/// Hash of an invocation's input files, stamped on standalone-subcommand
/// CSVs in place of a manifest hash. Content-addressed so byte-identical
/// inputs give byte-identical outputs wherever the files live.
pub fn input_stamp(paths: &[&Path]) -> Result<String, CliError> {
    let mut combined = String::new();
    for path in paths {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Validation(format!("reading '{}': {e}", path.display())))?;
        combined.push_str(&report::sha256_hex(&bytes));
        combined.push('\n');
    }
    Ok(report::sha256_hex(combined.as_bytes()))
}

/// Finds `step_*.ckpt` files under `run_dir/checkpoints`, sorted by step.
pub fn discover_checkpoints(run_dir: &Path) -> Result<Vec<(u64, PathBuf)>, CliError> {
    let dir = run_dir.join("checkpoints");
    let entries = std::fs::read_dir(&dir)
        .map_err(|e| CliError::Validation(format!("reading '{}': {e}", dir.display())))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(stage("checkpoints"))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(step) = name
            .strip_prefix("step_")
            .and_then(|s| s.strip_suffix(".ckpt"))
            .and_then(|s| s.parse::<u64>().ok())
        {
            out.push((step, entry.path()));
        }
    }
    if out.is_empty() {
        return Err(CliError::Validation(format!(
            "no step_*.ckpt checkpoints under '{}'",
            dir.display()
        )));
    }
    out.sort_by_key(|&(step, _)| step);
    Ok(out)
}

/// Mean surprisal per checkpoint per language as a CSV table.
pub fn surprisal_csv(
    checkpoints: &[(u64, PathBuf)],
    eval_sets: &[(String, Vec<PackedSequence>)],
    stamp: &str,
) -> Result<String, CliError> {
    let mut rows = Vec::with_capacity(checkpoints.len() * eval_sets.len());
    for (step, path) in checkpoints {
        let (config, params) =
            load_checkpoint::<f32>(path).map_err(stage("eval-surprisal"))?;
        for (language, eval_set) in eval_sets {
            let nats = eval_mean_surprisal(&params, &config, eval_set)
                .map_err(stage("eval-surprisal"))?;
            rows.push(vec![step.to_string(), language.clone(), report::fmt_float(nats)]);
        }
    }
    Ok(report::csv_to_string(stamp, &["step", "language", "mean_surprisal"], &rows))
}

/// Per-checkpoint priming products from one pass over the checkpoints: the
/// long scores table, the per-step trajectory, and the per-step item samples
/// the statistics stage consumes.
pub fn priming_products(
    checkpoints: &[(u64, PathBuf)],
    tok: &TokenizerModel,
    joiner: JoinerPolicy,
    set: &PrimingStimulusSet,
    pairs: &[(usize, usize)],
    stamp: &str,
) -> Result<(String, String, Vec<ExperimentSamples>), CliError> {
    let mut order: Vec<&(u64, PathBuf)> = checkpoints.iter().collect();
    order.sort_by_key(|(step, _)| *step);
    let mut score_rows = Vec::new();
    let mut trajectory = Vec::with_capacity(order.len());
    let mut experiments = Vec::with_capacity(order.len());
    for (step, path) in order {
        let (config, params) = load_checkpoint::<f32>(path).map_err(stage("eval-priming"))?;
        let scores =
            score_set(&params, &config, tok, joiner, set, pairs).map_err(stage("eval-priming"))?;
        score_rows.extend(priming::scores_rows(*step, &scores));
        let effects = item_effects(&scores);
        trajectory.push(trajectory_row(*step, &effects));
        experiments.push(ExperimentSamples {
            experiment_id: format!("step_{step:07}"),
            samples: effects.iter().map(PairedSample::from).collect(),
        });
    }
    let scores_csv = report::csv_to_string(stamp, &priming::SCORES_CSV_HEADER, &score_rows);
    let trajectory_csv = priming::trajectory_to_csv(&trajectory, stamp);
    Ok((scores_csv, trajectory_csv, experiments))
}

/// Minimal-pair accuracy per checkpoint per language as a CSV table.
pub fn grammar_csv(
    checkpoints: &[(u64, PathBuf)],
    tok: &TokenizerModel,
    pair_sets: &[(String, Vec<MinimalPair>)],
    stamp: &str,
) -> Result<String, CliError> {
    let rows = grammar_eval::proficiency_trajectory::<f32>(checkpoints, tok, pair_sets)
        .map_err(stage("eval-grammar"))?;
    Ok(grammar_eval::trajectory_to_csv(&rows, stamp))
}

/// Runs the per-step paired tests with a BH family spanning all steps and
/// writes the stats table. Exit-degenerate when no step yields a valid test.
pub fn stats_csv(
    experiments: &[ExperimentSamples],
    alpha: f64,
    stamp: &str,
    out: &Path,
) -> Result<(), CliError> {
    let reports = analyze_experiments(experiments, alpha).map_err(invalid("analyze"))?;
    write_text(out, &reports_to_csv(&reports, stamp), "analyze")?;
    let n_valid = reports.iter().filter(|r| r.failure.is_none()).count();
    if n_valid == 0 {
        return Err(CliError::Degenerate(format!(
            "stage analyze: no valid test among {} table(s); see '{}'",
            reports.len(),
            out.display()
        )));
    }
    Ok(())
}

/// Rebuilds per-step item samples from a long scores CSV (as written by
/// eval-priming or the runner).
pub fn samples_from_scores_csv(bytes: &[u8]) -> Result<Vec<ExperimentSamples>, CliError> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(bytes);
    let headers = reader.headers().map_err(invalid("analyze"))?.clone();
    let expect: Vec<&str> = priming::SCORES_CSV_HEADER.to_vec();
    if headers.iter().collect::<Vec<_>>() != expect {
        return Err(CliError::Validation(format!(
            "stage analyze: unexpected scores header '{}'",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let parse_cons = |text: &str| match text {
        "A" => Ok(Construction::A),
        "B" => Ok(Construction::B),
        other => Err(CliError::Validation(format!(
            "stage analyze: bad construction '{other}'"
        ))),
    };
    let mut by_step: BTreeMap<u64, Vec<PrimingScore>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(invalid("analyze"))?;
        let field = |k: usize| record.get(k).unwrap_or("");
        let bad = |what: &str| {
            CliError::Validation(format!("stage analyze: row {}: bad {what}", i + 1))
        };
        let step: u64 = field(0).parse().map_err(|_| bad("step"))?;
        by_step.entry(step).or_default().push(PrimingScore {
            item_id: field(1).to_string(),
            prime_item_id: String::new(),
            prime_construction: parse_cons(field(2))?,
            target_construction: parse_cons(field(3))?,
            congruent: field(4).parse().map_err(|_| bad("congruent"))?,
            logprob_target_a: field(5).parse().map_err(|_| bad("logprob_A"))?,
            logprob_target_b: field(6).parse().map_err(|_| bad("logprob_B"))?,
            normalized_prob: field(7).parse().map_err(|_| bad("normalized_prob"))?,
        });
    }
    Ok(by_step
        .into_iter()
        .map(|(step, scores)| ExperimentSamples {
            experiment_id: format!("step_{step:07}"),
            samples: item_effects(&scores).iter().map(PairedSample::from).collect(),
        })
        .collect())
}

fn pack_corpus(
    tok: &TokenizerModel,
    sentences: &[String],
    seq_len: usize,
    language_id: &str,
    seed: u64,
    stage_name: &'static str,
) -> Result<Vec<PackedSequence>, CliError> {
    let stream = encode_corpus_stream(tok, sentences);
    let packed =
        pack_sequences(&stream, seq_len, language_id, seed).map_err(stage(stage_name))?;
    if packed.is_empty() {
        return Err(CliError::Validation(format!(
            "stage {stage_name}: corpus for '{language_id}' yields no length-{seq_len} windows"
        )));
    }
    Ok(packed)
}

/// Contamination table plus a one-line aggregate summary.
pub fn contamination_csv(
    stimuli: &PrimingStimulusSet,
    corpus: &[String],
    n: usize,
    stamp: &str,
) -> Result<(String, String), CliError> {
    let mut rows_in = Vec::with_capacity(stimuli.items.len() * 4);
    for item in &stimuli.items {
        for (column, text) in [
            ("prime_A", &item.prime_a),
            ("prime_B", &item.prime_b),
            ("target_A", &item.target_a),
            ("target_B", &item.target_b),
        ] {
            rows_in.push((format!("{}.{column}", item.item_id), text.clone()));
        }
    }
    let rep = check_contamination(&rows_in, corpus, n).map_err(stage("contamination"))?;
    let rows: Vec<Vec<String>> = rep
        .rows
        .iter()
        .map(|r| {
            vec![
                r.stimulus_id.clone(),
                r.flagged.to_string(),
                r.matched_ngram.clone().unwrap_or_default(),
            ]
        })
        .collect();
    let csv = report::csv_to_string(stamp, &["stimulus_id", "flagged", "matched_ngram"], &rows);
    let mut summary = format!(
        "contamination: {}/{} stimulus sentences flagged (proportion {})",
        rep.n_flagged,
        rep.rows.len(),
        report::fmt_float(rep.proportion)
    );
    if let Some(note) = &rep.note {
        summary.push_str(&format!(" [{note}]"));
    }
    Ok((csv, summary))
}

/// The full staged pipeline for one resolved experiment. Writes into
/// `exp.out_dir`: MANIFEST.resolved, corpora/, tokenizer.txt,
/// contamination.csv, checkpoints/, train_metrics.csv, eval_surprisal.csv,
/// priming_scores.csv, priming_trajectory.csv, minimal_pairs TSVs,
/// grammar_accuracy.csv, stats.csv.
pub fn run_experiment(exp: &ResolvedExperiment) -> Result<(), CliError> {
    let out = &exp.out_dir;
    let log = |msg: &str| eprintln!("[{}] {msg}", exp.experiment_id);

    std::fs::create_dir_all(out).map_err(stage("setup"))?;
    let l1 = GrammarSpec::from_file(&exp.l1_grammar_path).map_err(invalid("setup"))?;
    let l2 = GrammarSpec::from_file(&exp.l2_grammar_path).map_err(invalid("setup"))?;
    if l1.language_id == l2.language_id {
        return Err(CliError::Validation(format!(
            "stage setup: both grammars declare language_id '{}'",
            l1.language_id
        )));
    }
    for spec in [&l1, &l2] {
        if spec.corruption_rules.is_empty() {
            return Err(CliError::Validation(format!(
                "stage setup: grammar '{}' declares no corruption rules (needed for minimal pairs)",
                spec.language_id
            )));
        }
    }
    let stimuli = PrimingStimulusSet::load(
        &exp.stimuli_path,
        &exp.alternation,
        &l1.language_id,
        &l2.language_id,
    )
    .map_err(invalid("setup"))?;
    let max_pairs = stimuli.items.len() * stimuli.items.len();
    if exp.priming.n_pairs > max_pairs {
        return Err(CliError::Validation(format!(
            "stage setup: priming.n_pairs = {} exceeds the {}-item cross product {max_pairs}",
            exp.priming.n_pairs,
            stimuli.items.len()
        )));
    }
    write_text(&out.join("MANIFEST.resolved"), &resolved_text(exp), "setup")?;

    let corpora_dir = out.join("corpora");
    std::fs::create_dir_all(&corpora_dir).map_err(stage("corpora"))?;
    let mut train_sentences = Vec::with_capacity(2);
    let mut eval_sentences = Vec::with_capacity(2);
    for spec in [&l1, &l2] {
        let train = generate_corpus(spec, exp.corpus.n_train_sentences, exp.seeds.corpus_train);
        let eval = generate_corpus(spec, exp.corpus.n_eval_sentences, exp.seeds.corpus_eval);
        save_corpus(&train, &corpora_dir.join(format!("{}.train.txt", spec.language_id)))
            .map_err(stage("corpora"))?;
        save_corpus(&eval, &corpora_dir.join(format!("{}.eval.txt", spec.language_id)))
            .map_err(stage("corpora"))?;
        train_sentences.push(train);
        eval_sentences.push(eval);
    }
    log("corpora written");

    let both: Vec<String> =
        train_sentences[0].iter().chain(&train_sentences[1]).cloned().collect();
    let (cont_csv, cont_summary) =
        contamination_csv(&stimuli, &both, exp.corpus.contamination_ngram, &exp.stamp)?;
    write_text(&out.join("contamination.csv"), &cont_csv, "contamination")?;
    log(&cont_summary);

    let (w1, w2) = match exp.condition {
        Condition::Simultaneous => (0.75, 0.25),
        Condition::Sequential => (0.5, 0.5),
    };
    let tok = primelab::corpus::train_tokenizer(
        &[(train_sentences[0].as_slice(), w1), (train_sentences[1].as_slice(), w2)],
        exp.corpus.vocab_size,
        exp.seeds.tokenizer,
    )
    .map_err(stage("tokenizer"))?;
    if tok.vocab_size() > exp.model.vocab_size {
        return Err(CliError::Validation(format!(
            "stage tokenizer: tokenizer vocab {} exceeds model vocab {}",
            tok.vocab_size(),
            exp.model.vocab_size
        )));
    }
    tok.save(&out.join("tokenizer.txt")).map_err(stage("tokenizer"))?;
    log("tokenizer trained");

    let seq_len = exp.model.max_seq_len;
    let l1_train = pack_corpus(
        &tok, &train_sentences[0], seq_len, &l1.language_id, exp.seeds.pack_train, "pack",
    )?;
    let l2_train = pack_corpus(
        &tok, &train_sentences[1], seq_len, &l2.language_id, exp.seeds.pack_train, "pack",
    )?;
    let l1_eval = pack_corpus(
        &tok, &eval_sentences[0], seq_len, &l1.language_id, exp.seeds.pack_eval, "pack",
    )?;
    let l2_eval = pack_corpus(
        &tok, &eval_sentences[1], seq_len, &l2.language_id, exp.seeds.pack_eval, "pack",
    )?;

    let outcome = trainer::train::<f32>(&exp.model, &exp.train, &l1_train, &l2_train, out)
        .map_err(stage("train"))?;
    log(&format!(
        "trained {} steps, {} checkpoints",
        exp.train.total_steps,
        outcome.checkpoint_paths.len()
    ));

    let eval_sets = vec![(l1.language_id.clone(), l1_eval), (l2.language_id.clone(), l2_eval)];
    let csv = surprisal_csv(&outcome.checkpoint_paths, &eval_sets, &exp.stamp)?;
    write_text(&out.join("eval_surprisal.csv"), &csv, "eval-surprisal")?;
    log("surprisal trajectory written");

    let mut pair_sets = Vec::with_capacity(2);
    for spec in [&l1, &l2] {
        let pairs =
            grammar_eval::generate_minimal_pairs(spec, exp.minimal_pairs.n_pairs, exp.seeds.minimal_pairs)
                .map_err(stage("eval-grammar"))?;
        grammar_eval::save_pairs(
            &pairs,
            &out.join(format!("minimal_pairs.{}.tsv", spec.language_id)),
        )
        .map_err(stage("eval-grammar"))?;
        pair_sets.push((spec.language_id.clone(), pairs));
    }
    let csv = grammar_csv(&outcome.checkpoint_paths, &tok, &pair_sets, &exp.stamp)?;
    write_text(&out.join("grammar_accuracy.csv"), &csv, "eval-grammar")?;
    log("grammar accuracy trajectory written");

    let pairs = expand_pairs(&stimuli, exp.priming.n_pairs, exp.seeds.priming_pairs)
        .map_err(invalid("eval-priming"))?;
    let (scores, trajectory, experiments) = priming_products(
        &outcome.checkpoint_paths,
        &tok,
        JoinerPolicy::default(),
        &stimuli,
        &pairs,
        &exp.stamp,
    )?;
    write_text(&out.join("priming_scores.csv"), &scores, "eval-priming")?;
    write_text(&out.join("priming_trajectory.csv"), &trajectory, "eval-priming")?;
    log("priming trajectory written");

    stats_csv(&experiments, exp.alpha, &exp.stamp, &out.join("stats.csv"))?;
    log("stats written");
    Ok(())
}

/// Loads, validates, and runs every experiment in a manifest, sequentially
/// and fail-fast.
pub fn run_manifest(path: &Path, output_root_override: Option<&Path>) -> Result<(), CliError> {
    let experiments = crate::manifest::load_manifest(path, output_root_override)?;
    eprintln!("manifest: {} experiment(s)", experiments.len());
    for exp in &experiments {
        run_experiment(exp)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_contract() {
        assert_eq!(CliError::Validation("v".into()).exit_code(), 1);
        assert_eq!(CliError::Runtime("r".into()).exit_code(), 2);
        assert_eq!(CliError::Degenerate("d".into()).exit_code(), 3);
    }

    #[test]
    fn checkpoint_discovery_sorts_and_filters() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("checkpoints");
        std::fs::create_dir_all(&ckpt).unwrap();
        for name in ["step_0000040.ckpt", "step_0000000.ckpt", "readme.txt", "step_12.ckpt"] {
            std::fs::write(ckpt.join(name), b"x").unwrap();
        }
        let found = discover_checkpoints(dir.path()).unwrap();
        let steps: Vec<u64> = found.iter().map(|&(s, _)| s).collect();
        assert_eq!(steps, vec![0, 12, 40]);

        let empty = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(empty.path().join("checkpoints")).unwrap();
        assert!(matches!(
            discover_checkpoints(empty.path()),
            Err(CliError::Validation(_))
        ));
    }

    #[test]
    fn scores_csv_round_trips_into_samples() {
        let scores = vec![
            PrimingScore {
                item_id: "it0".into(),
                prime_item_id: "it1".into(),
                prime_construction: Construction::A,
                target_construction: Construction::A,
                logprob_target_a: -1.0,
                logprob_target_b: -2.0,
                normalized_prob: 0.7,
                congruent: true,
            },
            PrimingScore {
                item_id: "it0".into(),
                prime_item_id: "it1".into(),
                prime_construction: Construction::B,
                target_construction: Construction::A,
                logprob_target_a: -1.5,
                logprob_target_b: -1.2,
                normalized_prob: 0.4,
                congruent: false,
            },
        ];
        let csv = priming::scores_to_csv(64, &scores, "feed");
        let experiments = samples_from_scores_csv(csv.as_bytes()).unwrap();
        assert_eq!(experiments.len(), 1);
        assert_eq!(experiments[0].experiment_id, "step_0000064");
        assert_eq!(experiments[0].samples.len(), 1);
        let s = &experiments[0].samples[0];
        assert_eq!(s.item_id, "it0");
        assert!((s.value_congruent - 0.7).abs() < 1e-12);
        assert!((s.value_incongruent - 0.4).abs() < 1e-12);

        assert!(matches!(
            samples_from_scores_csv(b"step,bogus\n1,2\n".as_slice()),
            Err(CliError::Validation(_))
        ));
    }

    #[test]
    fn input_stamp_depends_on_content_not_path() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.bin");
        let b = dir.path().join("elsewhere.bin");
        std::fs::write(&a, b"same bytes").unwrap();
        std::fs::write(&b, b"same bytes").unwrap();
        assert_eq!(input_stamp(&[&a]).unwrap(), input_stamp(&[&b]).unwrap());
        std::fs::write(&b, b"other bytes").unwrap();
        assert_ne!(input_stamp(&[&a]).unwrap(), input_stamp(&[&b]).unwrap());
    }

    #[test]
    fn degenerate_batch_exits_with_stats_written() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("stats.csv");
        // single item per step: the paired test cannot run
        let experiments = vec![ExperimentSamples {
            experiment_id: "step_0000000".into(),
            samples: vec![PairedSample {
                item_id: "it0".into(),
                value_congruent: 0.6,
                value_incongruent: 0.4,
            }],
        }];
        match stats_csv(&experiments, 0.05, "deed", &out) {
            Err(CliError::Degenerate(_)) => {}
            other => panic!("expected degenerate exit, got {other:?}"),
        }
        let text = std::fs::read_to_string(&out).unwrap();
        assert!(text.lines().count() >= 3);
    }
}
