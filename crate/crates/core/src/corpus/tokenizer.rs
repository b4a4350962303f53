//! Byte-level BPE tokenizer.
//!
//! The base vocabulary is the 256 byte values plus three special ids; merges
//! are learned greedily by pair frequency on a weighted sample of the training
//! corpora. Merges are not constrained to word boundaries, so a merged token
//! may span spaces.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::Rng;

use super::CorpusError;
use crate::rng::{derive_seed, seeded_rng};

/// Default character budget for the tokenizer training sample.
pub const DEFAULT_SAMPLE_CHARS: usize = 200_000;

const N_SPECIALS: usize = 3;
const N_BASE: usize = N_SPECIALS + 256;

const SPECIAL_DISPLAY: [&str; N_SPECIALS] = ["<|bos|>", "<|eot|>", "<|unk|>"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialIds {
    pub bos: u32,
    pub eot: u32,
    pub unk: u32,
}

impl SpecialIds {
    pub const fn standard() -> Self {
        SpecialIds { bos: 0, eot: 1, unk: 2 }
    }
}

/// Character counts drawn from each corpus while sampling tokenizer
/// training data.
#[derive(Debug, Clone)]
pub struct TokenizerTrainStats {
    pub sampled_chars: Vec<usize>,
    pub target_chars: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TokenizerModel {
    /// Token id -> byte string. Ids 0..3 are specials (display forms only),
    /// 3..259 are the raw bytes, 259.. are merged tokens.
    tokens: Vec<Vec<u8>>,
    /// Learned merges in order; each entry is a pair of existing ids and the
    /// k-th entry defines token id `259 + k`.
    merges: Vec<(u32, u32)>,
    /// Pair -> (merge rank, merged id), for encoding.
    rank: HashMap<(u32, u32), (u32, u32)>,
}

fn byte_id(b: u8) -> u32 {
    N_SPECIALS as u32 + b as u32
}

impl TokenizerModel {
    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn special_ids(&self) -> SpecialIds {
        SpecialIds::standard()
    }

    pub fn n_merges(&self) -> usize {
        self.merges.len()
    }

    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    /// The merge-free tokenizer: specials plus one token per byte.
    pub fn byte_level() -> Self {
        Self::from_merges(Vec::new())
    }

    fn from_merges(merges: Vec<(u32, u32)>) -> Self {
        let mut tokens: Vec<Vec<u8>> = Vec::with_capacity(N_BASE + merges.len());
        for s in SPECIAL_DISPLAY {
            tokens.push(s.as_bytes().to_vec());
        }
        for b in 0u16..256 {
            tokens.push(vec![b as u8]);
        }
        let mut rank = HashMap::new();
        for (k, &(l, r)) in merges.iter().enumerate() {
            let mut bytes = tokens[l as usize].clone();
            bytes.extend_from_slice(&tokens[r as usize]);
            tokens.push(bytes);
            rank.insert((l, r), (k as u32, (N_BASE + k) as u32));
        }
        TokenizerModel { tokens, merges, rank }
    }

    /// Encodes text to token ids. Never emits special ids; the empty string
    /// encodes to an empty sequence.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut ids: Vec<u32> = text.bytes().map(byte_id).collect();
        loop {
            let mut best: Option<(u32, u32)> = None;
            for w in ids.windows(2) {
                if let Some(&(rank, new_id)) = self.rank.get(&(w[0], w[1])) {
                    if best.map_or(true, |(r, _)| rank < r) {
                        best = Some((rank, new_id));
                    }
                }
            }
            let Some((rank, new_id)) = best else { break };
            let (l, r) = self.merges[rank as usize];
            ids = replace_pair(&ids, l, r, new_id);
        }
        ids
    }

    /// Decodes ids back to text. Special ids render as their display forms;
    /// invalid UTF-8 surfaces as replacement characters.
    pub fn decode(&self, ids: &[u32]) -> Result<String, CorpusError> {
        let mut bytes = Vec::new();
        for &id in ids {
            match self.tokens.get(id as usize) {
                Some(tok) => bytes.extend_from_slice(tok),
                None => {
                    return Err(CorpusError::IdOutOfRange { id, vocab_size: self.vocab_size() })
                }
            }
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    /// Serializes the model to its text format: a `BPE v1 <vocab_size>`
    /// header, one `id<TAB>token` line per vocabulary entry, then one
    /// `left<TAB>right` line per merge.
    pub fn to_file_string(&self) -> String {
        let mut out = format!("BPE v1 {}\n", self.vocab_size());
        for (id, tok) in self.tokens.iter().enumerate() {
            if id < N_SPECIALS {
                out.push_str(&format!("{id}\t{}\n", SPECIAL_DISPLAY[id]));
            } else {
                out.push_str(&format!("{id}\t{}\n", escape_bytes(tok)));
            }
        }
        for &(l, r) in &self.merges {
            out.push_str(&format!(
                "{}\t{}\n",
                escape_bytes(&self.tokens[l as usize]),
                escape_bytes(&self.tokens[r as usize])
            ));
        }
        out
    }

    pub fn from_file_string(text: &str) -> Result<Self, CorpusError> {
        let bad = |msg: String| CorpusError::TokenizerFormat(msg);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("BPE") || parts.next() != Some("v1") {
            return Err(bad(format!("unrecognized header '{header}'")));
        }
        let vocab_size: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(format!("bad vocab size in header '{header}'")))?;
        if vocab_size < N_BASE {
            return Err(bad(format!("vocab size {vocab_size} below base {N_BASE}")));
        }

        let mut tokens: Vec<Vec<u8>> = Vec::with_capacity(vocab_size);
        let mut bytes_to_id: HashMap<Vec<u8>, u32> = HashMap::new();
        for expect in 0..vocab_size {
            let line = lines.next().ok_or_else(|| bad("truncated vocab section".into()))?;
            let (id_str, tok_str) = line
                .split_once('\t')
                .ok_or_else(|| bad(format!("vocab line without tab: '{line}'")))?;
            let id: usize =
                id_str.parse().map_err(|_| bad(format!("bad id '{id_str}'")))?;
            if id != expect {
                return Err(bad(format!("ids not contiguous: expected {expect}, got {id}")));
            }
            let tok = if id < N_SPECIALS {
                SPECIAL_DISPLAY[id].as_bytes().to_vec()
            } else {
                unescape_bytes(tok_str).map_err(bad)?
            };
            if id >= N_SPECIALS && bytes_to_id.insert(tok.clone(), id as u32).is_some() {
                return Err(bad(format!("duplicate token at id {id}")));
            }
            tokens.push(tok);
        }
        for (b, tok) in tokens[N_SPECIALS..N_BASE].iter().enumerate() {
            if tok.len() != 1 || tok[0] as usize != b {
                return Err(bad(format!("id {} is not byte 0x{b:02x}", N_SPECIALS + b)));
            }
        }

        let mut merges = Vec::with_capacity(vocab_size - N_BASE);
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let (l_str, r_str) = line
                .split_once('\t')
                .ok_or_else(|| bad(format!("merge line without tab: '{line}'")))?;
            let l_bytes = unescape_bytes(l_str).map_err(bad)?;
            let r_bytes = unescape_bytes(r_str).map_err(bad)?;
            let l = *bytes_to_id
                .get(&l_bytes)
                .ok_or_else(|| bad(format!("merge refers to unknown token '{l_str}'")))?;
            let r = *bytes_to_id
                .get(&r_bytes)
                .ok_or_else(|| bad(format!("merge refers to unknown token '{r_str}'")))?;
            let merged_id = N_BASE + merges.len();
            let mut cat = l_bytes;
            cat.extend_from_slice(&r_bytes);
            if tokens.get(merged_id).map(Vec::as_slice) != Some(cat.as_slice()) {
                return Err(bad(format!("merge {} does not produce token id {merged_id}", merges.len())));
            }
            merges.push((l, r));
        }
        if N_BASE + merges.len() != vocab_size {
            return Err(bad(format!(
                "vocab size {vocab_size} does not match {} merges",
                merges.len()
            )));
        }
        Ok(Self::from_merges(merges))
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_file_string(&text)
    }
}

fn escape_bytes(bytes: &[u8]) -> String {
    let mut out = String::new();
    for &b in bytes {
        match b {
            b'\\' => out.push_str("\\\\"),
            b'\t' => out.push_str("\\t"),
            b'\n' => out.push_str("\\n"),
            b'\r' => out.push_str("\\r"),
            0x20..=0x7e => out.push(b as char),
            _ => out.push_str(&format!("\\x{b:02x}")),
        }
    }
    out
}

fn unescape_bytes(s: &str) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            if c.is_ascii() {
                out.push(c as u8);
            } else {
                return Err(format!("non-ascii character '{c}' outside escape"));
            }
            continue;
        }
        match chars.next() {
            Some('\\') => out.push(b'\\'),
            Some('t') => out.push(b'\t'),
            Some('n') => out.push(b'\n'),
            Some('r') => out.push(b'\r'),
            Some('x') => {
                let hi = chars.next().ok_or("truncated \\x escape")?;
                let lo = chars.next().ok_or("truncated \\x escape")?;
                let byte = u8::from_str_radix(&format!("{hi}{lo}"), 16)
                    .map_err(|_| format!("bad \\x escape \\x{hi}{lo}"))?;
                out.push(byte);
            }
            other => return Err(format!("bad escape {other:?}")),
        }
    }
    Ok(out)
}

/// Trains a tokenizer on a weighted mix of corpora with the default sample
/// budget. Deterministic in `seed`.
pub fn train_tokenizer(
    corpora: &[(&[String], f64)],
    vocab_size: usize,
    seed: u64,
) -> Result<TokenizerModel, CorpusError> {
    train_tokenizer_with_budget(corpora, vocab_size, seed, DEFAULT_SAMPLE_CHARS)
        .map(|(model, _)| model)
}

/// As [`train_tokenizer`], but with an explicit sample budget in characters;
/// also returns per-corpus sampling statistics. Each corpus contributes a
/// round(weight / total_weight * budget) character share, drawn uniformly
/// with replacement from its sentences.
pub fn train_tokenizer_with_budget(
    corpora: &[(&[String], f64)],
    vocab_size: usize,
    seed: u64,
    sample_chars: usize,
) -> Result<(TokenizerModel, TokenizerTrainStats), CorpusError> {
    if corpora.is_empty() {
        return Err(CorpusError::EmptyCorpora);
    }
    if vocab_size < N_BASE + 1 {
        return Err(CorpusError::VocabTooSmall { requested: vocab_size, minimum: N_BASE + 1 });
    }
    for &(_, w) in corpora {
        if !w.is_finite() || w <= 0.0 {
            return Err(CorpusError::BadWeight { got: w });
        }
    }
    let total_w: f64 = corpora.iter().map(|&(_, w)| w).sum();

    let mut sampled: Vec<&String> = Vec::new();
    let mut stats = TokenizerTrainStats { sampled_chars: Vec::new(), target_chars: Vec::new() };
    for (i, (sentences, w)) in corpora.iter().enumerate() {
        let target = (w / total_w * sample_chars as f64).round() as usize;
        stats.target_chars.push(target);
        if target > 0 && sentences.is_empty() {
            return Err(CorpusError::EmptyCorpus { index: i });
        }
        let mut rng = seeded_rng(derive_seed(seed, &format!("tokenizer.sample.{i}")));
        let mut got = 0usize;
        while got < target {
            let s = &sentences[rng.gen_range(0..sentences.len())];
            got += s.chars().count();
            sampled.push(s);
        }
        stats.sampled_chars.push(got);
    }

    // Aggregate identical sentences so merge passes scale with distinct
    // sentences, not sample size.
    let mut seqs: HashMap<Vec<u32>, u64> = HashMap::new();
    for s in sampled {
        let ids: Vec<u32> = s.bytes().map(byte_id).collect();
        *seqs.entry(ids).or_insert(0) += 1;
    }

    let mut tokens: Vec<Vec<u8>> = Vec::with_capacity(vocab_size);
    for s in SPECIAL_DISPLAY {
        tokens.push(s.as_bytes().to_vec());
    }
    for b in 0u16..256 {
        tokens.push(vec![b as u8]);
    }
    let mut bytes_to_id: HashMap<Vec<u8>, u32> = tokens[N_SPECIALS..]
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), (N_SPECIALS + i) as u32))
        .collect();

    let mut merges: Vec<(u32, u32)> = Vec::new();
    let mut banned: HashSet<(u32, u32)> = HashSet::new();
    while tokens.len() < vocab_size {
        let mut counts: HashMap<(u32, u32), u64> = HashMap::new();
        for (seq, c) in &seqs {
            for w in seq.windows(2) {
                *counts.entry((w[0], w[1])).or_insert(0) += c;
            }
        }
        let mut best: Option<((u32, u32), u64)> = None;
        for (&pair, &count) in &counts {
            if banned.contains(&pair) {
                continue;
            }
            let better = match best {
                None => true,
                Some((bp, bc)) => {
                    count > bc
                        || (count == bc
                            && pair_key(pair, &tokens) < pair_key(bp, &tokens))
                }
            };
            if better {
                best = Some((pair, count));
            }
        }
        let Some(((l, r), _)) = best else {
            break; // sample exhausted before reaching vocab_size
        };
        let mut cat = tokens[l as usize].clone();
        cat.extend_from_slice(&tokens[r as usize]);
        if bytes_to_id.contains_key(&cat) {
            banned.insert((l, r));
            continue;
        }
        let new_id = tokens.len() as u32;
        bytes_to_id.insert(cat.clone(), new_id);
        tokens.push(cat);
        merges.push((l, r));

        let mut next: HashMap<Vec<u32>, u64> = HashMap::with_capacity(seqs.len());
        for (seq, c) in seqs {
            let rebuilt = replace_pair(&seq, l, r, new_id);
            *next.entry(rebuilt).or_insert(0) += c;
        }
        seqs = next;
    }

    Ok((TokenizerModel::from_merges(merges), stats))
}

fn pair_key<'a>(pair: (u32, u32), tokens: &'a [Vec<u8>]) -> (&'a [u8], &'a [u8]) {
    (&tokens[pair.0 as usize], &tokens[pair.1 as usize])
}

fn replace_pair(seq: &[u32], l: u32, r: u32, new_id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(seq.len());
    let mut i = 0;
    while i < seq.len() {
        if i + 1 < seq.len() && seq[i] == l && seq[i + 1] == r {
            out.push(new_id);
            i += 2;
        } else {
            out.push(seq[i]);
            i += 1;
        }
    }
    out
}
