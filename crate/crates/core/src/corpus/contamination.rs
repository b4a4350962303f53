//! Word n-gram overlap between evaluation stimuli and a training corpus.

use std::collections::HashSet;

use super::CorpusError;

#[derive(Debug, Clone)]
pub struct StimulusContamination {
    pub stimulus_id: String,
    pub flagged: bool,
    /// First overlapping n-gram, if any, as space-joined normalized words.
    pub matched_ngram: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ContaminationReport {
    pub rows: Vec<StimulusContamination>,
    pub n_flagged: usize,
    pub proportion: f64,
    pub note: Option<String>,
}

fn normalize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Flags every stimulus that shares at least one word n-gram with the corpus,
/// after case and whitespace normalization. Membership is exact: a stimulus
/// differing from corpus text in any single word of every n-gram window is
/// not flagged.
pub fn check_contamination(
    stimuli: &[(String, String)],
    corpus: &[String],
    n: usize,
) -> Result<ContaminationReport, CorpusError> {
    if n == 0 {
        return Err(CorpusError::ZeroNgram);
    }

    let mut corpus_ngrams: HashSet<Vec<String>> = HashSet::new();
    for sentence in corpus {
        let words = normalize(sentence);
        for w in words.windows(n) {
            corpus_ngrams.insert(w.to_vec());
        }
    }

    let mut rows = Vec::with_capacity(stimuli.len());
    let mut n_flagged = 0;
    let mut any_long_enough = false;
    for (id, text) in stimuli {
        let words = normalize(text);
        if words.len() >= n {
            any_long_enough = true;
        }
        let matched = words
            .windows(n)
            .find(|w| corpus_ngrams.contains(*w))
            .map(|w| w.join(" "));
        let flagged = matched.is_some();
        if flagged {
            n_flagged += 1;
        }
        rows.push(StimulusContamination { stimulus_id: id.clone(), flagged, matched_ngram: matched });
    }

    let proportion = if rows.is_empty() { 0.0 } else { n_flagged as f64 / rows.len() as f64 };
    let note = if !stimuli.is_empty() && !any_long_enough {
        Some(format!("n-gram order {n} exceeds every stimulus length; nothing can be flagged"))
    } else {
        None
    };
    Ok(ContaminationReport { rows, n_flagged, proportion, note })
}
