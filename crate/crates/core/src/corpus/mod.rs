//! Synthetic bilingual corpora: grammar-driven sentence generation, subword
//! tokenization, sequence packing, and stimulus contamination checks.

mod contamination;
mod grammar;
mod packing;
mod tokenizer;

pub use contamination::{check_contamination, ContaminationReport, StimulusContamination};
pub use grammar::{
    generate_corpus, load_corpus, save_corpus, Alternation, GrammarSpec, SlotFill, Template,
    TemplateToken,
};
pub use packing::{encode_corpus_stream, pack_sequences, PackedSequence};
pub use tokenizer::{
    train_tokenizer, train_tokenizer_with_budget, SpecialIds, TokenizerModel,
    TokenizerTrainStats, DEFAULT_SAMPLE_CHARS,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid grammar spec ({field}): {reason}")]
    InvalidSpec { field: String, reason: String },

    #[error("vocab size {requested} too small: need at least {minimum} (3 specials + 256 byte symbols + 1 merge)")]
    VocabTooSmall { requested: usize, minimum: usize },

    #[error("tokenizer training requires at least one corpus")]
    EmptyCorpora,

    #[error("corpus weights must be positive and finite (got {got})")]
    BadWeight { got: f64 },

    #[error("corpus {index} has no sentences to sample from")]
    EmptyCorpus { index: usize },

    #[error("token id {id} out of range for vocab size {vocab_size}")]
    IdOutOfRange { id: u32, vocab_size: usize },

    #[error("sequence length must be positive (got {got})")]
    SeqLenTooSmall { got: usize },

    #[error("n-gram order must be at least 1")]
    ZeroNgram,

    #[error("malformed tokenizer file: {0}")]
    TokenizerFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
