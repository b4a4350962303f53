//! Significance testing of priming effects.
//!
//! The balanced two-condition within-item design admits a paired t-test on
//! item means in place of a mixed model with a random item intercept (the
//! fixed-effect tests coincide for balanced data). Batches of experiments
//! are corrected with the Benjamini-Hochberg step-up procedure.

use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::priming::ItemEffect;
use crate::report;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("need at least 2 paired samples, got {n}")]
    InsufficientData { n: usize },

    #[error("degenerate sample: every difference equals {difference}")]
    DegenerateSample { difference: f64 },

    #[error("p value {value} at index {index} outside [0, 1]")]
    OutOfRangeP { index: usize, value: f64 },

    #[error("alpha must lie in (0, 1), got {alpha}")]
    BadAlpha { alpha: f64 },
}

/// Item-level condition means: one row per item, both values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub item_id: String,
    pub value_congruent: f64,
    pub value_incongruent: f64,
}

impl From<&ItemEffect> for PairedSample {
    fn from(e: &ItemEffect) -> Self {
        PairedSample {
            item_id: e.item_id.clone(),
            value_congruent: e.mean_congruent,
            value_incongruent: e.mean_incongruent,
        }
    }
}

/// Two-sided p for |T| > t under a t distribution with `df` degrees of
/// freedom, via the regularized incomplete beta function.
fn t_two_sided_p(t: f64, df: usize) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    let nu = df as f64;
    beta_reg(nu / 2.0, 0.5, nu / (nu + t * t)).clamp(0.0, 1.0)
}

/// Classical paired t-test on d_i = congruent - incongruent. Returns
/// (t, degrees of freedom, two-sided p).
pub fn paired_t_test(samples: &[PairedSample]) -> Result<(f64, usize, f64), StatsError> {
    let n = samples.len();
    if n < 2 {
        return Err(StatsError::InsufficientData { n });
    }
    let d: Vec<f64> = samples.iter().map(|s| s.value_congruent - s.value_incongruent).collect();
    if d.windows(2).all(|w| w[0] == w[1]) {
        return Err(StatsError::DegenerateSample { difference: d[0] });
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = mean / (var / n as f64).sqrt();
    let df = n - 1;
    Ok((t, df, t_two_sided_p(t, df)))
}

/// Benjamini-Hochberg step-up correction. Adjusted p_(k) = min over j >= k
/// of (m/j) * p_(j), clamped to 1; flags mark adjusted <= alpha. Outputs are
/// in the input order.
pub fn bh_fdr(p_values: &[f64], alpha: f64) -> Result<(Vec<f64>, Vec<bool>), StatsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::BadAlpha { alpha });
    }
    for (index, &value) in p_values.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(StatsError::OutOfRangeP { index, value });
        }
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (0..m).rev() {
        let candidate = p_values[order[rank]] * m as f64 / (rank + 1) as f64;
        running = running.min(candidate);
        adjusted[order[rank]] = running;
    }
    let reject = adjusted.iter().map(|&a| a <= alpha).collect();
    Ok((adjusted, reject))
}

/// Item-level samples for one experiment in a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSamples {
    pub experiment_id: String,
    pub samples: Vec<PairedSample>,
}

/// Test results for one experiment. Failed tests carry the failure text and
/// NaN statistics (rendered NA in CSV), and are excluded from the
/// correction.
#[derive(Debug, Clone, PartialEq)]
pub struct StatReport {
    pub experiment_id: String,
    pub n_items: usize,
    pub mean_effect: f64,
    pub t_statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub significant: bool,
    pub failure: Option<String>,
}

/// Runs the paired test per experiment and corrects across the whole batch,
/// mirroring a correction over a model-by-language grid.
pub fn analyze_experiments(
    experiments: &[ExperimentSamples],
    alpha: f64,
) -> Result<Vec<StatReport>, StatsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::BadAlpha { alpha });
    }
    let mut reports: Vec<StatReport> = Vec::with_capacity(experiments.len());
    let mut tested: Vec<usize> = Vec::new();
    let mut p_raw: Vec<f64> = Vec::new();
    for (i, exp) in experiments.iter().enumerate() {
        let n = exp.samples.len();
        let mean_effect = if n == 0 {
            f64::NAN
        } else {
            exp.samples
                .iter()
                .map(|s| s.value_congruent - s.value_incongruent)
                .sum::<f64>()
                / n as f64
        };
        match paired_t_test(&exp.samples) {
            Ok((t, df, p)) => {
                tested.push(i);
                p_raw.push(p);
                reports.push(StatReport {
                    experiment_id: exp.experiment_id.clone(),
                    n_items: n,
                    mean_effect,
                    t_statistic: t,
                    degrees_of_freedom: df,
                    p_raw: p,
                    p_adjusted: f64::NAN,
                    significant: false,
                    failure: None,
                });
            }
            Err(e) => reports.push(StatReport {
                experiment_id: exp.experiment_id.clone(),
                n_items: n,
                mean_effect,
                t_statistic: f64::NAN,
                degrees_of_freedom: n.saturating_sub(1),
                p_raw: f64::NAN,
                p_adjusted: f64::NAN,
                significant: false,
                failure: Some(e.to_string()),
            }),
        }
    }
    let (adjusted, reject) = bh_fdr(&p_raw, alpha)?;
    for (k, &i) in tested.iter().enumerate() {
        reports[i].p_adjusted = adjusted[k];
        reports[i].significant = reject[k];
    }
    Ok(reports)
}

pub fn reports_to_csv(reports: &[StatReport], config_sha256: &str) -> String {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.experiment_id.clone(),
                r.n_items.to_string(),
                report::fmt_float(r.mean_effect),
                report::fmt_float(r.t_statistic),
                r.degrees_of_freedom.to_string(),
                report::fmt_float(r.p_raw),
                report::fmt_float(r.p_adjusted),
                r.significant.to_string(),
                r.failure.clone().unwrap_or_default(),
            ]
        })
        .collect();
    report::csv_to_string(
        config_sha256,
        &[
            "experiment_id",
            "n_items",
            "mean_effect",
            "t_statistic",
            "degrees_of_freedom",
            "p_raw",
            "p_adjusted",
            "significant",
            "failure",
        ],
        &rows,
    )
}
