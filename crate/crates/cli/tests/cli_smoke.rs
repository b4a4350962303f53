//! End-to-end exercises of the compiled binary: exit codes, the staged
//! subcommands, and a full manifest run replayed for byte-level determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_primelab");

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

const MODEL: &str = r#"
n_layers = 1
d_model = 16
d_ff = 32
n_heads = 2
head_dim = 8
vocab_size = 300
max_seq_len = 64
dropout = 0.0
attention_dropout = 0.0
layer_norm_eps = 1e-5
"#;

const TRAIN: &str = r#"
total_steps = 24
switch_step = 12
batch_size = 2
lr_peak = 1e-3
warmup_steps = 4
checkpoint_steps = [0, 12, 24]
"#;

const MANIFEST: &str = r#"
output_dir = "runs"
master_seed = 11
model_config = "model.toml"
train_config = "train.toml"

[corpus]
n_train_sentences = 400
n_eval_sentences = 60
vocab_size = 280
contamination_ngram = 5

[priming]
n_pairs = 4

[minimal_pairs]
n_pairs = 24

[experiment]
id = "demo"
condition = "simultaneous"
l1_grammar = "a.toml"
l2_grammar = "b.toml"
stimuli = "stim.tsv"
alternation = "dative"
"#;

fn write_fixture(dir: &Path) {
    std::fs::write(dir.join("a.toml"), GRAMMAR_A).unwrap();
    std::fs::write(dir.join("b.toml"), GRAMMAR_B).unwrap();
    std::fs::write(dir.join("stim.tsv"), STIMULI).unwrap();
    std::fs::write(dir.join("model.toml"), MODEL).unwrap();
    std::fs::write(dir.join("train.toml"), TRAIN).unwrap();
    std::fs::write(dir.join("manifest.toml"), MANIFEST).unwrap();
}

fn primelab(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("PRIMELAB_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn assert_code(out: &Output, code: i32, context: &str) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "{context}: expected exit {code}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("reading '{}': {e}", path.display()))
}

/// Data lines of a CSV, with the provenance comment stripped.
fn data_lines(text: &str) -> Vec<String> {
    text.lines().filter(|l| !l.starts_with('#')).map(str::to_string).collect()
}

#[test]
fn help_exits_zero_and_bad_usage_exits_one() {
    let help = primelab(&["--help"]);
    assert_code(&help, 0, "--help");
    assert!(String::from_utf8_lossy(&help.stdout).contains("primelab"));

    assert_code(&primelab(&["--version"]), 0, "--version");
    assert_code(&primelab(&["no-such-command"]), 1, "unknown subcommand");
    assert_code(&primelab(&["gen-corpus"]), 1, "missing required flags");
}

#[test]
fn missing_input_fails_validation_without_output() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    std::fs::remove_file(dir.path().join("a.toml")).unwrap();
    let manifest = dir.path().join("manifest.toml");
    let out = primelab(&["run", "--manifest", manifest.to_str().unwrap()]);
    assert_code(&out, 1, "manifest with missing grammar");
    assert!(String::from_utf8_lossy(&out.stderr).contains("L1 grammar"));
    assert!(!dir.path().join("runs").exists(), "no output tree on validation failure");
}

#[test]
fn analyze_exits_three_when_no_step_is_testable() {
    let dir = tempfile::tempdir().unwrap();
    // one item per step: the paired test needs two
    let scores = "\
# provenance\n\
step,item_id,prime_cons,target_cons,congruent,logprob_A,logprob_B,normalized_prob\n\
8,it0,A,A,true,-1.0,-2.0,0.7\n\
8,it0,B,A,false,-1.5,-1.2,0.4\n";
    let scores_path = dir.path().join("scores.csv");
    std::fs::write(&scores_path, scores).unwrap();
    let stats_path = dir.path().join("stats.csv");
    let out = primelab(&[
        "analyze",
        "--scores",
        scores_path.to_str().unwrap(),
        "--out",
        stats_path.to_str().unwrap(),
    ]);
    assert_code(&out, 3, "degenerate analyze");
    let text = read(&stats_path);
    assert!(text.contains("step_0000008"), "failed step still reported:\n{text}");
}

#[test]
fn manifest_run_writes_the_full_tree_and_replays_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let manifest = dir.path().join("manifest.toml");

    let out = primelab(&["run", "--manifest", manifest.to_str().unwrap()]);
    assert_code(&out, 0, "first run");
    let exp = dir.path().join("runs").join("demo");

    let expected = [
        "MANIFEST.resolved",
        "corpora/lang1.train.txt",
        "corpora/lang1.eval.txt",
        "corpora/lang2.train.txt",
        "corpora/lang2.eval.txt",
        "contamination.csv",
        "tokenizer.txt",
        "train_metrics.csv",
        "checkpoints/step_0000000.ckpt",
        "checkpoints/step_0000012.ckpt",
        "checkpoints/step_0000024.ckpt",
        "eval_surprisal.csv",
        "minimal_pairs.lang1.tsv",
        "minimal_pairs.lang2.tsv",
        "grammar_accuracy.csv",
        "priming_scores.csv",
        "priming_trajectory.csv",
        "stats.csv",
    ];
    for rel in expected {
        assert!(exp.join(rel).is_file(), "missing output '{rel}'");
    }

    for rel in ["stats.csv", "priming_scores.csv", "eval_surprisal.csv", "grammar_accuracy.csv"] {
        let text = read(&exp.join(rel));
        assert!(text.starts_with('#'), "'{rel}' lacks the provenance comment:\n{text}");
    }

    // replay into a fresh root through the environment override
    let root2 = dir.path().join("elsewhere");
    let rerun = Command::new(BIN)
        .args(["run", "--manifest", manifest.to_str().unwrap()])
        .env("PRIMELAB_OUTPUT_ROOT", &root2)
        .output()
        .expect("binary runs");
    assert_code(&rerun, 0, "replay run");
    let exp2 = root2.join("demo");
    let byte_stable = [
        "corpora/lang1.train.txt",
        "corpora/lang2.train.txt",
        "tokenizer.txt",
        "contamination.csv",
        "train_metrics.csv",
        "eval_surprisal.csv",
        "minimal_pairs.lang1.tsv",
        "minimal_pairs.lang2.tsv",
        "grammar_accuracy.csv",
        "priming_scores.csv",
        "priming_trajectory.csv",
        "stats.csv",
    ];
    for rel in byte_stable {
        assert_eq!(
            std::fs::read(exp.join(rel)).unwrap(),
            std::fs::read(exp2.join(rel)).unwrap(),
            "'{rel}' differs between replays"
        );
    }

    // analyze recovers the run's statistics from the long scores table
    let stats2 = dir.path().join("stats_from_analyze.csv");
    let analyze = primelab(&[
        "analyze",
        "--scores",
        exp.join("priming_scores.csv").to_str().unwrap(),
        "--out",
        stats2.to_str().unwrap(),
    ]);
    assert_code(&analyze, 0, "analyze on run scores");
    assert_eq!(
        data_lines(&read(&stats2)),
        data_lines(&read(&exp.join("stats.csv"))),
        "analyze and run disagree on the stats table"
    );
}

#[test]
fn staged_subcommands_compose_into_the_same_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let p = |name: &str| dir.path().join(name);
    let s = |path: &PathBuf| path.to_str().unwrap().to_string();

    for (grammar, out) in [("a.toml", "l1.txt"), ("b.toml", "l2.txt")] {
        let gen = primelab(&[
            "gen-corpus",
            "--grammar",
            &s(&p(grammar)),
            "--n",
            "400",
            "--seed",
            "5",
            "--out",
            &s(&p(out)),
        ]);
        assert_code(&gen, 0, "gen-corpus");
    }
    let n_lines = read(&p("l1.txt")).lines().count();
    assert_eq!(n_lines, 400);

    let tok = primelab(&[
        "train-tokenizer",
        "--corpus",
        &format!("{}:0.75", s(&p("l1.txt"))),
        "--corpus",
        &format!("{}:0.25", s(&p("l2.txt"))),
        "--vocab-size",
        "280",
        "--seed",
        "5",
        "--out",
        &s(&p("tok.txt")),
    ]);
    assert_code(&tok, 0, "train-tokenizer");

    let train = primelab(&[
        "train",
        "--model-config",
        &s(&p("model.toml")),
        "--train-config",
        &s(&p("train.toml")),
        "--tokenizer",
        &s(&p("tok.txt")),
        "--l1",
        &s(&p("l1.txt")),
        "--l2",
        &s(&p("l2.txt")),
        "--condition",
        "simultaneous",
        "--seed",
        "5",
        "--id",
        "staged",
        "--out",
        &s(&p("run")),
    ]);
    assert_code(&train, 0, "train");
    assert!(p("run").join("checkpoints/step_0000024.ckpt").is_file());

    let surprisal = primelab(&[
        "eval-surprisal",
        "--run-dir",
        &s(&p("run")),
        "--tokenizer",
        &s(&p("tok.txt")),
        "--eval",
        &format!("lang1={}", s(&p("l1.txt"))),
        "--eval",
        &format!("lang2={}", s(&p("l2.txt"))),
        "--out",
        &s(&p("surprisal.csv")),
    ]);
    assert_code(&surprisal, 0, "eval-surprisal");
    let text = read(&p("surprisal.csv"));
    assert_eq!(data_lines(&text).len(), 1 + 3 * 2, "header plus 3 steps x 2 languages");

    let priming = primelab(&[
        "eval-priming",
        "--run-dir",
        &s(&p("run")),
        "--tokenizer",
        &s(&p("tok.txt")),
        "--stimuli",
        &s(&p("stim.tsv")),
        "--alternation",
        "dative",
        "--prime-language",
        "lang1",
        "--target-language",
        "lang2",
        "--n-pairs",
        "4",
        "--scores-out",
        &s(&p("scores.csv")),
        "--trajectory-out",
        &s(&p("trajectory.csv")),
    ]);
    assert_code(&priming, 0, "eval-priming");
    // 3 steps x 4 pairs x 2 prime constructions x 2 target constructions
    assert_eq!(data_lines(&read(&p("scores.csv"))).len(), 1 + 3 * 4 * 4);
    assert_eq!(data_lines(&read(&p("trajectory.csv"))).len(), 1 + 3);

    let pairs_tsv = "good\tbad\n\
        bimo danu wobu fa mupa\tdanu bimo wobu fa mupa\n\
        karu pelki tilva fa lorfi\tpelki karu tilva fa lorfi\n";
    std::fs::write(p("pairs1.tsv"), pairs_tsv).unwrap();
    let grammar = primelab(&[
        "eval-grammar",
        "--run-dir",
        &s(&p("run")),
        "--tokenizer",
        &s(&p("tok.txt")),
        "--pairs",
        &format!("lang1={}", s(&p("pairs1.tsv"))),
        "--out",
        &s(&p("grammar.csv")),
    ]);
    assert_code(&grammar, 0, "eval-grammar");
    assert_eq!(data_lines(&read(&p("grammar.csv"))).len(), 1 + 3);

    let contamination = primelab(&[
        "check-contamination",
        "--stimuli",
        &s(&p("stim.tsv")),
        "--corpus",
        &s(&p("l1.txt")),
        "--corpus",
        &s(&p("l2.txt")),
        "--ngram",
        "5",
        "--out",
        &s(&p("contamination.csv")),
    ]);
    assert_code(&contamination, 0, "check-contamination");
    let summary = String::from_utf8_lossy(&contamination.stdout);
    assert!(summary.contains("/8"), "4 stimuli x 2 items: {summary}");

    let analyze = primelab(&[
        "analyze",
        "--scores",
        &s(&p("scores.csv")),
        "--out",
        &s(&p("stats.csv")),
    ]);
    assert_code(&analyze, 0, "analyze");
    assert_eq!(data_lines(&read(&p("stats.csv"))).len(), 1 + 3);
}
