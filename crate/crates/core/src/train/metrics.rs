//! Multi-label evaluation metrics over `f64` scores.
//!
//! Rows are samples, columns are targets. Every function expects a
//! rectangular table with matching label and score shapes.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability floor used by the cross-entropy metrics.
pub const NLL_FLOOR: f64 = 1e-12;

/// Predicted positive at or above this probability.
pub const PRECISION_THRESHOLD: f64 = 0.5;

/// Default recall cut-offs.
pub const DEFAULT_RECALL_KS: [usize; 2] = [2, 4];

pub const DEFAULT_BOOTSTRAP_ROUNDS: usize = 100;

fn check_table(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<usize> {
    if scores.len() != labels.len() {
        return Err(Error::Shape { op: "metrics", detail: format!("{} score rows, {} label rows", scores.len(), labels.len()) });
    }
    let width = scores.first().map_or(0, Vec::len);
    for (s, y) in scores.iter().zip(labels) {
        if s.len() != width || y.len() != width {
            return Err(Error::Shape { op: "metrics", detail: format!("row widths {} and {} where {width} expected", s.len(), y.len()) });
        }
    }
    Ok(width)
}

/// Unweighted mean binary cross-entropy over every (sample, target) cell.
pub fn neg_log_likelihood(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<f64> {
    let width = check_table(scores, labels)?;
    let cells = scores.len() * width;
    if cells == 0 {
        return Err(Error::InvalidArgument("empty score table".into()));
    }
    let mut total = 0.0;
    for (s, y) in scores.iter().zip(labels) {
        for (&p, &y) in s.iter().zip(y) {
            let p = p.clamp(NLL_FLOOR, 1.0 - NLL_FLOOR);
            total -= if y { p.ln() } else { (1.0 - p).ln() };
        }
    }
    Ok(total / cells as f64)
}

/// Mann-Whitney AUC from average ranks. `None` when either class is empty.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let positives = labels.iter().filter(|&&y| y).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mean_rank = (i + j + 2) as f64 / 2.0;
        rank_sum += mean_rank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (positives as f64, negatives as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Per-target AUC plus the macro average over the targets where it is
/// defined. Undefined targets are logged and skipped.
pub fn macro_auc(scores: &[Vec<f64>], labels: &[Vec<bool>], names: &[String]) -> Result<(Option<f64>, Vec<Option<f64>>)> {
    macro_auc_inner(scores, labels, names, true)
}

fn macro_auc_inner(scores: &[Vec<f64>], labels: &[Vec<bool>], names: &[String], warn: bool) -> Result<(Option<f64>, Vec<Option<f64>>)> {
    let width = check_table(scores, labels)?;
    let per_target: Vec<Option<f64>> = (0..width)
        .map(|l| {
            let s: Vec<f64> = scores.iter().map(|r| r[l]).collect();
            let y: Vec<bool> = labels.iter().map(|r| r[l]).collect();
            let value = auc(&s, &y);
            if value.is_none() && warn {
                let name = names.get(l).map_or("?", String::as_str);
                log::warn!("AUC undefined for target {name}: test labels are all one class");
            }
            value
        })
        .collect();
    let defined: Vec<f64> = per_target.iter().flatten().copied().collect();
    let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok((mean, per_target))
}

/// Micro-averaged precision at [`PRECISION_THRESHOLD`]; zero when nothing
/// is predicted positive.
pub fn precision(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<f64> {
    check_table(scores, labels)?;
    let (mut tp, mut predicted) = (0usize, 0usize);
    for (s, y) in scores.iter().zip(labels) {
        for (&p, &y) in s.iter().zip(y) {
            if p >= PRECISION_THRESHOLD {
                predicted += 1;
                tp += y as usize;
            }
        }
    }
    Ok(if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 })
}

/// Indices of the `k` highest scores, ties going to the lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Mean over samples with at least one true label of
/// `|true ∩ top-k| / min(|true|, k)`. `None` when no sample has a label.
pub fn recall_at_k(scores: &[Vec<f64>], labels: &[Vec<bool>], k: usize) -> Result<Option<f64>> {
    check_table(scores, labels)?;
    if k == 0 {
        return Err(Error::InvalidArgument("recall cut-off k must be at least 1".into()));
    }
    let (mut total, mut counted) = (0.0, 0usize);
    for (s, y) in scores.iter().zip(labels) {
        let positives = y.iter().filter(|&&v| v).count();
        if positives == 0 {
            continue;
        }
        let hits = top_k(s, k).into_iter().filter(|&i| y[i]).count();
        total += hits as f64 / positives.min(k) as f64;
        counted += 1;
    }
    Ok((counted > 0).then(|| total / counted as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetMetrics {
    pub code: String,
    pub auc: Option<f64>,
    pub positives: usize,
    pub mean_probability: f64,
}

/// Bootstrap standard deviations of the headline metrics.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricStd {
    pub neg_log_likelihood: f64,
    pub auc: Option<f64>,
    pub precision: f64,
    pub recall_at: BTreeMap<usize, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub neg_log_likelihood: f64,
    /// Macro average over targets whose AUC is defined.
    pub auc: Option<f64>,
    pub precision: f64,
    pub recall_at: BTreeMap<usize, Option<f64>>,
    pub per_target: Vec<TargetMetrics>,
    pub bootstrap_std: MetricStd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub recall_ks: Vec<usize>,
    pub bootstrap_rounds: usize,
    pub bootstrap_seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { recall_ks: DEFAULT_RECALL_KS.to_vec(), bootstrap_rounds: DEFAULT_BOOTSTRAP_ROUNDS, bootstrap_seed: 0 }
    }
}

struct Headline {
    nll: f64,
    auc: Option<f64>,
    precision: f64,
    recall: Vec<Option<f64>>,
}

fn headline(
    scores: &[Vec<f64>],
    labels: &[Vec<bool>],
    names: &[String],
    ks: &[usize],
    warn: bool,
) -> Result<(Headline, Vec<Option<f64>>)> {
    let (auc, per_target) = macro_auc_inner(scores, labels, names, warn)?;
    let recall = ks.iter().map(|&k| recall_at_k(scores, labels, k)).collect::<Result<_>>()?;
    Ok((Headline { nll: neg_log_likelihood(scores, labels)?, auc, precision: precision(scores, labels)?, recall }, per_target))
}

fn sample_std(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Some((values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// Builds the full report. `names` labels the columns.
pub fn report(scores: &[Vec<f64>], labels: &[Vec<bool>], names: &[String], options: &EvalOptions) -> Result<EvalReport> {
    let width = check_table(scores, labels)?;
    if scores.is_empty() {
        return Err(Error::InvalidArgument("evaluation needs at least one sample".into()));
    }
    if names.len() != width {
        return Err(Error::Shape { op: "report", detail: format!("{} names for {width} targets", names.len()) });
    }
    let (main, per_target_auc) = headline(scores, labels, names, &options.recall_ks, true)?;

    // Resample rows with replacement; undefined draws are left out of the
    // corresponding spread without repeating the warning.
    let mut rng = ChaCha8Rng::seed_from_u64(options.bootstrap_seed);
    let n = scores.len();
    let (mut nll, mut auc, mut prec) = (Vec::new(), Vec::new(), Vec::new());
    let mut recall = vec![Vec::new(); options.recall_ks.len()];
    for _ in 0..options.bootstrap_rounds {
        let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        let s: Vec<Vec<f64>> = rows.iter().map(|&i| scores[i].clone()).collect();
        let y: Vec<Vec<bool>> = rows.iter().map(|&i| labels[i].clone()).collect();
        let (h, _) = headline(&s, &y, names, &options.recall_ks, false)?;
        nll.push(h.nll);
        auc.extend(h.auc);
        prec.push(h.precision);
        for (acc, r) in recall.iter_mut().zip(h.recall) {
            acc.extend(r);
        }
    }

    let per_target = (0..width)
        .map(|l| TargetMetrics {
            code: names[l].clone(),
            auc: per_target_auc[l],
            positives: labels.iter().filter(|r| r[l]).count(),
            mean_probability: scores.iter().map(|r| r[l]).sum::<f64>() / n as f64,
        })
        .collect();
    Ok(EvalReport {
        n_samples: n,
        neg_log_likelihood: main.nll,
        auc: main.auc,
        precision: main.precision,
        recall_at: options.recall_ks.iter().copied().zip(main.recall).collect(),
        per_target,
        bootstrap_std: MetricStd {
            neg_log_likelihood: sample_std(&nll).unwrap_or(0.0),
            auc: sample_std(&auc),
            precision: sample_std(&prec).unwrap_or(0.0),
            recall_at: options.recall_ks.iter().copied().zip(recall.iter().map(|r| sample_std(r))).collect(),
        },
    })
}

/// Row labels of the comparison table, in order.
pub fn metric_rows(ks: &[usize]) -> Vec<String> {
    let mut rows = vec!["Neg Log Likelihood".to_string(), "AUC".to_string(), "Precision".to_string()];
    rows.extend(ks.iter().map(|k| format!("Recall@{k}")));
    rows
}

fn cell(value: Option<f64>, std: Option<f64>) -> String {
    match (value, std) {
        (Some(v), Some(s)) => format!("{v:.4} ± {s:.4}"),
        (Some(v), None) => format!("{v:.4}"),
        (None, _) => "n/a".to_string(),
    }
}

impl EvalReport {
    /// `(row label, formatted value ± std)` for each table row.
    pub fn rows(&self) -> Vec<(String, String)> {
        let std = &self.bootstrap_std;
        let ks: Vec<usize> = self.recall_at.keys().copied().collect();
        let mut cells = vec![
            cell(Some(self.neg_log_likelihood), Some(std.neg_log_likelihood)),
            cell(self.auc, std.auc),
            cell(Some(self.precision), Some(std.precision)),
        ];
        cells.extend(ks.iter().map(|k| cell(self.recall_at[k], std.recall_at.get(k).copied().flatten())));
        metric_rows(&ks).into_iter().zip(cells).collect()
    }
}

/// Delimited table with one row per metric and one column per report.
/// Every report must use the same recall cut-offs.
pub fn comparison_table(columns: &[(&str, &EvalReport)], delimiter: u8) -> Result<String> {
    let Some((_, first)) = columns.first() else {
        return Err(Error::InvalidArgument("comparison table needs at least one column".into()));
    };
    let ks: Vec<&usize> = first.recall_at.keys().collect();
    if columns.iter().any(|(_, r)| r.recall_at.keys().collect::<Vec<_>>() != ks) {
        return Err(Error::InvalidArgument("reports use different recall cut-offs".into()));
    }
    let mut out = csv::WriterBuilder::new().delimiter(delimiter).from_writer(Vec::new());
    let header: Vec<&str> = std::iter::once("metric").chain(columns.iter().map(|(name, _)| *name)).collect();
    let csv_err = |e: csv::Error| Error::Parse(e.to_string());
    out.write_record(&header).map_err(csv_err)?;
    let rows: Vec<Vec<(String, String)>> = columns.iter().map(|(_, r)| r.rows()).collect();
    for i in 0..rows[0].len() {
        let mut record = vec![rows[0][i].0.clone()];
        record.extend(rows.iter().map(|r| r[i].1.clone()));
        out.write_record(&record).map_err(csv_err)?;
    }
    let bytes = out.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}
