//! Command line front end. Each subcommand runs one pipeline stage on files
//! named by flags; `run` chains them all from a manifest.

mod manifest;
mod pipeline;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use primelab::corpus::{self, GrammarSpec, TokenizerModel};
use primelab::grammar_eval;
use primelab::priming::{expand_pairs, JoinerPolicy, PrimingStimulusSet};
use primelab::trainer;

use crate::manifest::{parse_condition, StageSeeds, TrainConfigDoc};
use crate::pipeline::{CliError, OUTPUT_ROOT_ENV};

#[derive(Parser)]
#[command(
    name = "primelab",
    version,
    about = "Crosslingual structural priming experiments in tiny bilingual LMs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample sentences from a grammar into a text file, one per line.
    GenCorpus {
        /// Grammar spec (TOML)
        #[arg(long)]
        grammar: PathBuf,
        /// Number of sentences
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output text file
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn a byte-pair vocabulary from one or more corpora.
    TrainTokenizer {
        /// Corpus file, optionally weighted as `path:weight` (default weight 1)
        #[arg(long = "corpus", required = true)]
        corpora: Vec<String>,
        #[arg(long)]
        vocab_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output tokenizer file
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a bilingual model and write metrics plus checkpoints.
    Train {
        /// Model config (TOML)
        #[arg(long)]
        model_config: PathBuf,
        /// Train config (TOML)
        #[arg(long)]
        train_config: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        /// L1 corpus text file
        #[arg(long)]
        l1: PathBuf,
        /// L2 corpus text file
        #[arg(long)]
        l2: PathBuf,
        /// Exposure condition: simultaneous or sequential
        #[arg(long)]
        condition: String,
        /// Master seed; stage seeds are derived from it and --id
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run label used in seed derivation
        #[arg(long, default_value = "run")]
        id: String,
        /// Output directory (checkpoints/, train_metrics.csv)
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean surprisal per checkpoint per language.
    EvalSurprisal {
        /// Training output directory containing checkpoints/
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        /// Evaluation corpus as `language=path`, repeatable
        #[arg(long = "eval", required = true)]
        evals: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV
        #[arg(long)]
        out: PathBuf,
    },
    /// Priming scores and trajectory per checkpoint.
    EvalPriming {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        /// Stimulus TSV (item_id, prime_A, prime_B, target_A, target_B)
        #[arg(long)]
        stimuli: PathBuf,
        #[arg(long, default_value = "unspecified")]
        alternation: String,
        #[arg(long, default_value = "unspecified")]
        prime_language: String,
        #[arg(long, default_value = "unspecified")]
        target_language: String,
        /// Prime/target pairs to score (k*k enumerates all)
        #[arg(long)]
        n_pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Long per-pair scores CSV
        #[arg(long)]
        scores_out: PathBuf,
        /// Per-step trajectory CSV
        #[arg(long)]
        trajectory_out: PathBuf,
    },
    /// Minimal-pair accuracy per checkpoint per language.
    EvalGrammar {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        /// Minimal-pair TSV as `language=path`, repeatable
        #[arg(long = "pairs", required = true)]
        pair_files: Vec<String>,
        /// Output CSV
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired tests with FDR correction over a priming scores CSV.
    Analyze {
        /// Scores CSV from eval-priming or run
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Output stats CSV
        #[arg(long)]
        out: PathBuf,
    },
    /// Flag stimulus sentences sharing n-grams with a training corpus.
    CheckContamination {
        /// Stimulus TSV
        #[arg(long)]
        stimuli: PathBuf,
        /// Corpus text file, repeatable
        #[arg(long = "corpus", required = true)]
        corpora: Vec<PathBuf>,
        /// N-gram order
        #[arg(long, default_value_t = 5)]
        ngram: usize,
        /// Output CSV
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every experiment in a manifest end to end.
    Run {
        /// Experiment manifest (TOML)
        #[arg(long)]
        manifest: PathBuf,
        /// Overrides the manifest output_dir (PRIMELAB_OUTPUT_ROOT also works)
        #[arg(long)]
        output_root: Option<PathBuf>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = dispatch(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn validation(msg: String) -> CliError {
    CliError::Validation(msg)
}

fn runtime(msg: String) -> CliError {
    CliError::Runtime(msg)
}

/// Splits `path:weight`, treating the suffix as a weight only when it parses
/// as a number, so plain paths containing colons still work.
fn parse_weighted(spec: &str) -> (PathBuf, f64) {
    if let Some((path, suffix)) = spec.rsplit_once(':') {
        if let Ok(w) = suffix.parse::<f64>() {
            return (PathBuf::from(path), w);
        }
    }
    (PathBuf::from(spec), 1.0)
}

fn parse_keyed(spec: &str, flag: &str) -> Result<(String, PathBuf), CliError> {
    match spec.split_once('=') {
        Some((key, path)) if !key.is_empty() && !path.is_empty() => {
            Ok((key.to_string(), PathBuf::from(path)))
        }
        _ => Err(validation(format!(
            "--{flag} expects `label=path`, got '{spec}'"
        ))),
    }
}

fn write_out(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| runtime(format!("creating '{}': {e}", parent.display())))?;
        }
    }
    std::fs::write(path, text).map_err(|e| runtime(format!("writing '{}': {e}", path.display())))
}

fn read_to_string(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| validation(format!("reading '{}': {e}", path.display())))
}

/// Packs eval corpora named as `language=path` at the checkpoint sequence
/// length, reusing the first checkpoint's model config.
fn packed_eval_sets(
    checkpoints: &[(u64, PathBuf)],
    tok: &TokenizerModel,
    evals: &[String],
    seed: u64,
) -> Result<Vec<(String, Vec<corpus::PackedSequence>)>, CliError> {
    let (config, _) = primelab::model::load_checkpoint::<f32>(&checkpoints[0].1)
        .map_err(|e| runtime(format!("stage eval-surprisal: {e}")))?;
    let mut sets = Vec::with_capacity(evals.len());
    for spec in evals {
        let (language, path) = parse_keyed(spec, "eval")?;
        let sentences = corpus::load_corpus(&path)
            .map_err(|e| validation(format!("stage eval-surprisal: {e}")))?;
        let stream = corpus::encode_corpus_stream(tok, &sentences);
        let packed = corpus::pack_sequences(&stream, config.max_seq_len, &language, seed)
            .map_err(|e| runtime(format!("stage eval-surprisal: {e}")))?;
        if packed.is_empty() {
            return Err(validation(format!(
                "stage eval-surprisal: '{}' yields no length-{} windows",
                path.display(),
                config.max_seq_len
            )));
        }
        sets.push((language, packed));
    }
    Ok(sets)
}

fn checkpoint_paths(checkpoints: &[(u64, PathBuf)]) -> Vec<&Path> {
    checkpoints.iter().map(|(_, p)| p.as_path()).collect()
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenCorpus { grammar, n, seed, out } => {
            let spec = GrammarSpec::from_file(&grammar)
                .map_err(|e| validation(format!("stage gen-corpus: {e}")))?;
            let sentences = corpus::generate_corpus(&spec, n, seed);
            corpus::save_corpus(&sentences, &out)
                .map_err(|e| runtime(format!("stage gen-corpus: {e}")))?;
            eprintln!("wrote {} sentences to '{}'", sentences.len(), out.display());
            Ok(())
        }

        Command::TrainTokenizer { corpora, vocab_size, seed, out } => {
            let mut loaded = Vec::with_capacity(corpora.len());
            for spec in &corpora {
                let (path, weight) = parse_weighted(spec);
                let sentences = corpus::load_corpus(&path)
                    .map_err(|e| validation(format!("stage train-tokenizer: {e}")))?;
                loaded.push((sentences, weight));
            }
            let weighted: Vec<(&[String], f64)> =
                loaded.iter().map(|(s, w)| (s.as_slice(), *w)).collect();
            let tok = corpus::train_tokenizer(&weighted, vocab_size, seed)
                .map_err(|e| validation(format!("stage train-tokenizer: {e}")))?;
            tok.save(&out).map_err(|e| runtime(format!("stage train-tokenizer: {e}")))?;
            eprintln!("trained vocab of {} to '{}'", tok.vocab_size(), out.display());
            Ok(())
        }

        Command::Train {
            model_config,
            train_config,
            tokenizer,
            l1,
            l2,
            condition,
            seed,
            id,
            out,
        } => {
            let condition = parse_condition(&condition)?;
            let model: primelab::model::ModelConfig = toml::from_str(&read_to_string(&model_config)?)
                .map_err(|e| validation(format!("{}: {e}", model_config.display())))?;
            let doc: TrainConfigDoc = toml::from_str(&read_to_string(&train_config)?)
                .map_err(|e| validation(format!("{}: {e}", train_config.display())))?;
            let seeds = StageSeeds::derive(seed, &id);
            let train = doc.to_train_config(condition, seeds.train_seeds());
            let tok = TokenizerModel::load(&tokenizer)
                .map_err(|e| validation(format!("stage train: {e}")))?;
            if tok.vocab_size() > model.vocab_size {
                return Err(validation(format!(
                    "stage train: tokenizer vocab {} exceeds model vocab {}",
                    tok.vocab_size(),
                    model.vocab_size
                )));
            }
            let mut packed = Vec::with_capacity(2);
            for (label, path) in [("l1", &l1), ("l2", &l2)] {
                let sentences = corpus::load_corpus(path)
                    .map_err(|e| validation(format!("stage train: {e}")))?;
                let stream = corpus::encode_corpus_stream(&tok, &sentences);
                let seqs =
                    corpus::pack_sequences(&stream, model.max_seq_len, label, seeds.pack_train)
                        .map_err(|e| runtime(format!("stage train: {e}")))?;
                if seqs.is_empty() {
                    return Err(validation(format!(
                        "stage train: '{}' yields no length-{} windows",
                        path.display(),
                        model.max_seq_len
                    )));
                }
                packed.push(seqs);
            }
            let outcome = trainer::train::<f32>(&model, &train, &packed[0], &packed[1], &out)
                .map_err(|e| runtime(format!("stage train: {e}")))?;
            eprintln!(
                "trained {} steps, {} checkpoints under '{}'",
                train.total_steps,
                outcome.checkpoint_paths.len(),
                out.display()
            );
            Ok(())
        }

        Command::EvalSurprisal { run_dir, tokenizer, evals, seed, out } => {
            let checkpoints = pipeline::discover_checkpoints(&run_dir)?;
            let tok = TokenizerModel::load(&tokenizer)
                .map_err(|e| validation(format!("stage eval-surprisal: {e}")))?;
            let sets = packed_eval_sets(&checkpoints, &tok, &evals, seed)?;
            let mut inputs = vec![tokenizer.as_path()];
            let eval_paths: Vec<PathBuf> = evals
                .iter()
                .map(|s| parse_keyed(s, "eval").map(|(_, p)| p))
                .collect::<Result<_, _>>()?;
            inputs.extend(eval_paths.iter().map(|p| p.as_path()));
            inputs.extend(checkpoint_paths(&checkpoints));
            let stamp = pipeline::input_stamp(&inputs)?;
            let csv = pipeline::surprisal_csv(&checkpoints, &sets, &stamp)?;
            write_out(&out, &csv)?;
            eprintln!("wrote '{}'", out.display());
            Ok(())
        }

        Command::EvalPriming {
            run_dir,
            tokenizer,
            stimuli,
            alternation,
            prime_language,
            target_language,
            n_pairs,
            seed,
            scores_out,
            trajectory_out,
        } => {
            let checkpoints = pipeline::discover_checkpoints(&run_dir)?;
            let tok = TokenizerModel::load(&tokenizer)
                .map_err(|e| validation(format!("stage eval-priming: {e}")))?;
            let set =
                PrimingStimulusSet::load(&stimuli, &alternation, &prime_language, &target_language)
                    .map_err(|e| validation(format!("stage eval-priming: {e}")))?;
            let pairs = expand_pairs(&set, n_pairs, seed)
                .map_err(|e| validation(format!("stage eval-priming: {e}")))?;
            let mut inputs = vec![tokenizer.as_path(), stimuli.as_path()];
            inputs.extend(checkpoint_paths(&checkpoints));
            let stamp = pipeline::input_stamp(&inputs)?;
            let (scores, trajectory, _) = pipeline::priming_products(
                &checkpoints,
                &tok,
                JoinerPolicy::default(),
                &set,
                &pairs,
                &stamp,
            )?;
            write_out(&scores_out, &scores)?;
            write_out(&trajectory_out, &trajectory)?;
            eprintln!("wrote '{}' and '{}'", scores_out.display(), trajectory_out.display());
            Ok(())
        }

        Command::EvalGrammar { run_dir, tokenizer, pair_files, out } => {
            let checkpoints = pipeline::discover_checkpoints(&run_dir)?;
            let tok = TokenizerModel::load(&tokenizer)
                .map_err(|e| validation(format!("stage eval-grammar: {e}")))?;
            let mut sets = Vec::with_capacity(pair_files.len());
            let mut inputs = vec![tokenizer.as_path()];
            let mut paths = Vec::with_capacity(pair_files.len());
            for spec in &pair_files {
                let (language, path) = parse_keyed(spec, "pairs")?;
                let pairs = grammar_eval::load_pairs(&path)
                    .map_err(|e| validation(format!("stage eval-grammar: {e}")))?;
                sets.push((language, pairs));
                paths.push(path);
            }
            inputs.extend(paths.iter().map(|p| p.as_path()));
            inputs.extend(checkpoint_paths(&checkpoints));
            let stamp = pipeline::input_stamp(&inputs)?;
            let csv = pipeline::grammar_csv(&checkpoints, &tok, &sets, &stamp)?;
            write_out(&out, &csv)?;
            eprintln!("wrote '{}'", out.display());
            Ok(())
        }

        Command::Analyze { scores, alpha, out } => {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(validation(format!("alpha must lie in (0, 1), got {alpha}")));
            }
            let bytes = std::fs::read(&scores)
                .map_err(|e| validation(format!("reading '{}': {e}", scores.display())))?;
            let experiments = pipeline::samples_from_scores_csv(&bytes)?;
            let stamp = pipeline::input_stamp(&[scores.as_path()])?;
            pipeline::stats_csv(&experiments, alpha, &stamp, &out)?;
            eprintln!("wrote '{}'", out.display());
            Ok(())
        }

        Command::CheckContamination { stimuli, corpora, ngram, out } => {
            let text = read_to_string(&stimuli)?;
            let set = PrimingStimulusSet::from_tsv_str(
                &text,
                "unspecified",
                "unspecified",
                "unspecified",
                &stimuli.display().to_string(),
            )
            .map_err(|e| validation(format!("stage contamination: {e}")))?;
            let mut sentences = Vec::new();
            for path in &corpora {
                sentences.extend(
                    corpus::load_corpus(path)
                        .map_err(|e| validation(format!("stage contamination: {e}")))?,
                );
            }
            let mut inputs = vec![stimuli.as_path()];
            inputs.extend(corpora.iter().map(|p| p.as_path()));
            let stamp = pipeline::input_stamp(&inputs)?;
            let (csv, summary) = pipeline::contamination_csv(&set, &sentences, ngram, &stamp)?;
            write_out(&out, &csv)?;
            println!("{summary}");
            Ok(())
        }

        Command::Run { manifest, output_root } => {
            let env_root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from);
            let root = output_root.or(env_root);
            pipeline::run_manifest(&manifest, root.as_deref())
        }
    }
}
