//! ROUGE-L scoring, report aggregation, and Pearson correlation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::outparse::{ParseStatus, ParsedOutput};
use crate::templater::Verdict;

/// Token sequences longer than this are cut before the LCS.
pub const MAX_LCS_TOKENS: usize = 512;

pub const TOKENIZER_DESCRIPTION: &str = "lowercase; split on non-alphanumeric runs; no stemming";

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

impl RougeScore {
    fn from_counts(lcs: usize, hyp_len: usize, ref_len: usize) -> Self {
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let precision = ratio(lcs, hyp_len);
        let recall = ratio(lcs, ref_len);
        let f_measure = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        RougeScore {
            precision,
            recall,
            f_measure,
        }
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Length of a longest common subsequence, O(|a|·|b|) time, O(|b|) space.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L over pre-tokenized sequences. The flag reports truncation.
pub fn rouge_l_tokens<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> (RougeScore, bool) {
    let truncated = reference.len() > MAX_LCS_TOKENS || hypothesis.len() > MAX_LCS_TOKENS;
    let r = &reference[..reference.len().min(MAX_LCS_TOKENS)];
    let h = &hypothesis[..hypothesis.len().min(MAX_LCS_TOKENS)];
    (RougeScore::from_counts(lcs_len(r, h), h.len(), r.len()), truncated)
}

pub fn rouge_l(reference: &str, hypothesis: &str) -> RougeScore {
    rouge_l_tokens(&tokenize(reference), &tokenize(hypothesis)).0
}

/// Best reference by F-measure (first wins ties), with its full triple.
pub fn score_instance<S: AsRef<str>>(references: &[S], hypothesis: &str) -> Result<(RougeScore, bool)> {
    if references.is_empty() {
        return Err(Error::Metric("instance has no reference outputs".into()));
    }
    let hyp = tokenize(hypothesis);
    let mut best: Option<(RougeScore, bool)> = None;
    for r in references {
        let scored = rouge_l_tokens(&tokenize(r.as_ref()), &hyp);
        if best.is_none_or(|(b, _)| scored.0.f_measure > b.f_measure) {
            best = Some(scored);
        }
    }
    Ok(best.expect("non-empty references"))
}

/// One evaluated prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub task_id: String,
    /// `None` for samples that carry no answer (classification-only).
    pub rouge: Option<RougeScore>,
    pub truncated: bool,
    pub parsed: ParsedOutput,
    /// Gold verdicts; empty when the sample has no quiz.
    pub gold: Vec<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Mean ROUGE-L F per task, ×100.
    pub per_task: BTreeMap<String, f64>,
    /// Mean over all instances (micro), ×100.
    pub overall: f64,
    /// Mean of per-task means (macro), ×100.
    pub overall_macro: f64,
    pub classification_accuracy: Option<f64>,
    pub n_instances: usize,
    pub n_classification_samples: usize,
    pub parse_status_counts: BTreeMap<String, usize>,
    pub answer_only_rate: f64,
    pub strict_format_rate: f64,
    pub truncated_instances: usize,
    pub tokenizer: String,
}

pub fn aggregate(records: &[EvalRecord]) -> Result<MetricReport> {
    if records.is_empty() {
        return Err(Error::Metric("nothing to aggregate".into()));
    }
    let mut by_task: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut sum = 0.0;
    let mut n_scored = 0usize;
    for r in records {
        if let Some(s) = r.rouge {
            let e = by_task.entry(r.task_id.clone()).or_default();
            e.0 += s.f_measure;
            e.1 += 1;
            sum += s.f_measure;
            n_scored += 1;
        }
    }
    let per_task: BTreeMap<String, f64> = by_task
        .iter()
        .map(|(k, &(s, n))| (k.clone(), 100.0 * s / n as f64))
        .collect();
    let overall = if n_scored == 0 { 0.0 } else { 100.0 * sum / n_scored as f64 };
    let overall_macro = if per_task.is_empty() {
        0.0
    } else {
        per_task.values().sum::<f64>() / per_task.len() as f64
    };

    let quiz: Vec<&EvalRecord> = records.iter().filter(|r| !r.gold.is_empty()).collect();
    let classification_accuracy = if quiz.is_empty() {
        None
    } else {
        let parsed: Vec<ParsedOutput> = quiz.iter().map(|r| r.parsed.clone()).collect();
        let gold: Vec<Vec<Verdict>> = quiz.iter().map(|r| r.gold.clone()).collect();
        Some(crate::outparse::classification_accuracy(&parsed, &gold)?)
    };

    let mut parse_status_counts = BTreeMap::new();
    for r in records {
        let key = match r.parsed.parse_status {
            ParseStatus::Full => "full",
            ParseStatus::Partial => "partial",
            ParseStatus::AnswerOnly => "answer_only",
        };
        *parse_status_counts.entry(key.to_string()).or_insert(0) += 1;
    }
    let n = records.len() as f64;
    let answer_only = parse_status_counts.get("answer_only").copied().unwrap_or(0);
    Ok(MetricReport {
        per_task,
        overall,
        overall_macro,
        classification_accuracy,
        n_instances: n_scored,
        n_classification_samples: quiz.len(),
        parse_status_counts,
        answer_only_rate: answer_only as f64 / n,
        strict_format_rate: records.iter().filter(|r| r.parsed.strict_format).count() as f64 / n,
        truncated_instances: records.iter().filter(|r| r.truncated).count(),
        tokenizer: TOKENIZER_DESCRIPTION.to_string(),
    })
}

/// Mean of setting-level scores, e.g. zero-shot and few-shot overall ROUGE-L.
pub fn average_over_settings(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Metric("no settings to average".into()));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Rounds to two decimals, halves away from zero. Binary noise below 1e-6
/// of a hundredth is snapped first so that 40.125 rounds up.
pub fn round2(x: f64) -> f64 {
    let scaled = x * 100.0;
    let snapped = (scaled * 1e6).round() / 1e6;
    snapped.round() / 100.0
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Metric(format!("series lengths differ: {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::Metric("correlation needs at least 2 points".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Metric("series contain non-finite values".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Metric("correlation undefined for a constant series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Aligned plain-text rendering of a report.
pub fn render_table(report: &MetricReport) -> String {
    let width = report.per_task.keys().map(String::len).max().unwrap_or(0).max("overall (macro)".len());
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>8}", "task", "ROUGE-L");
    let _ = writeln!(out, "{}", "-".repeat(width + 10));
    for (task, score) in &report.per_task {
        let _ = writeln!(out, "{task:<width$}  {score:>8.2}");
    }
    let _ = writeln!(out, "{}", "-".repeat(width + 10));
    let _ = writeln!(out, "{:<width$}  {:>8.2}", "overall (micro)", report.overall);
    let _ = writeln!(out, "{:<width$}  {:>8.2}", "overall (macro)", report.overall_macro);
    match report.classification_accuracy {
        Some(a) => {
            let _ = writeln!(out, "{:<width$}  {:>8.4}", "classification acc", a);
        }
        None => {
            let _ = writeln!(out, "{:<width$}  {:>8}", "classification acc", "n/a");
        }
    }
    let _ = writeln!(out, "{:<width$}  {:>8}", "instances", report.n_instances);
    let _ = writeln!(out, "{:<width$}  {:>8.4}", "answer_only rate", report.answer_only_rate);
    let _ = writeln!(out, "{:<width$}  {:>8.4}", "strict format rate", report.strict_format_rate);
    out
}
