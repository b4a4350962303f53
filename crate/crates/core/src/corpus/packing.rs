//! Token stream packing for training.

use rand::seq::SliceRandom;

use super::tokenizer::TokenizerModel;
use super::CorpusError;
use crate::rng::{derive_seed, seeded_rng};

/// A training window of exactly `seq_len` token ids, tagged with the language
/// it was packed from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedSequence {
    pub token_ids: Vec<u32>,
    pub language_id: String,
}

/// Encodes a corpus into one contiguous id stream, sentences joined by a
/// single space so the text seen by the tokenizer matches the training
/// distribution it was fit on.
pub fn encode_corpus_stream(tok: &TokenizerModel, sentences: &[String]) -> Vec<u32> {
    let mut ids = Vec::new();
    for (i, s) in sentences.iter().enumerate() {
        if i == 0 {
            ids.extend(tok.encode(s));
        } else {
            ids.extend(tok.encode(&format!(" {s}")));
        }
    }
    ids
}

/// Chunks a token stream into non-overlapping windows of exactly `seq_len`
/// tokens, drops the final partial window, and shuffles the windows
/// deterministically in `shuffle_seed`. A stream shorter than `seq_len`
/// yields an empty list.
pub fn pack_sequences(
    ids: &[u32],
    seq_len: usize,
    language_id: &str,
    shuffle_seed: u64,
) -> Result<Vec<PackedSequence>, CorpusError> {
    if seq_len == 0 {
        return Err(CorpusError::SeqLenTooSmall { got: seq_len });
    }
    let mut windows: Vec<PackedSequence> = ids
        .chunks_exact(seq_len)
        .map(|w| PackedSequence { token_ids: w.to_vec(), language_id: language_id.to_string() })
        .collect();
    let mut rng = seeded_rng(derive_seed(shuffle_seed, &format!("pack.{language_id}")));
    windows.shuffle(&mut rng);
    Ok(windows)
}
