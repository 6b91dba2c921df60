//! Two-stage loss spans and the masked negative log-likelihood objective.
//!
//! The classification span covers the verdict sentence and the action,
//! the answer span covers the final output. Spans are stored as character
//! ranges over the target; tokenizers map them onto token indices with
//! [`map_spans_to_tokens`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::templater::{PartName, RenderedSample};

/// Half-open character range `[start, end)`.
pub type CharRange = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossSpans {
    pub classification: Option<CharRange>,
    /// Zero-length (at the end of the target) for classification-only samples.
    pub answer: CharRange,
}

impl LossSpans {
    pub fn validate(&self, target_chars: usize) -> Result<()> {
        let (as_, ae) = self.answer;
        if as_ > ae || ae > target_chars {
            return Err(Error::Loss(format!(
                "answer span {:?} outside target of {target_chars} chars",
                self.answer
            )));
        }
        if let Some((cs, ce)) = self.classification {
            if cs >= ce || ce > target_chars {
                return Err(Error::Loss(format!(
                    "classification span {:?} invalid for target of {target_chars} chars",
                    (cs, ce)
                )));
            }
            if ce > as_ {
                return Err(Error::Loss("classification span must precede the answer span".into()));
            }
        }
        Ok(())
    }
}

/// Derives loss spans from rendered part boundaries.
pub fn annotate_spans(rendered: &RenderedSample) -> Result<LossSpans> {
    let len = rendered.target.chars().count();
    let mut prev_end = 0;
    for b in &rendered.part_boundaries {
        if b.start < prev_end || b.start > b.end || b.end > len {
            return Err(Error::Loss(format!(
                "part boundaries overlap or leave the target: {:?}",
                rendered.part_boundaries
            )));
        }
        prev_end = b.end;
    }
    let cls_parts = rendered
        .part_boundaries
        .iter()
        .filter(|b| matches!(b.part, PartName::ClassificationResult | PartName::Action));
    let classification = cls_parts.fold(None, |acc: Option<CharRange>, b| match acc {
        None => Some((b.start, b.end)),
        Some((s, e)) => Some((s.min(b.start), e.max(b.end))),
    });
    let answer = rendered
        .part_boundaries
        .iter()
        .find(|b| b.part == PartName::Answer)
        .map_or((len, len), |b| (b.start, b.end));
    let spans = LossSpans { classification, answer };
    spans.validate(len)?;
    Ok(spans)
}

/// Character offsets of each target token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenAlignment {
    pub target_text: String,
    pub token_offsets: Vec<CharRange>,
    /// The last offset is an end-of-text sentinel (conventionally `(len, len)`).
    #[serde(default)]
    pub has_eos: bool,
}

impl TokenAlignment {
    fn validate(&self) -> Result<()> {
        let len = self.target_text.chars().count();
        let mut prev = (0, 0);
        for (i, &(s, e)) in self.token_offsets.iter().enumerate() {
            if s > e || e > len {
                return Err(Error::Loss(format!(
                    "token {i} offsets {:?} outside target of {len} chars",
                    (s, e)
                )));
            }
            if s < prev.0 || e < prev.1 {
                return Err(Error::Loss(format!("token {i} offsets decrease")));
            }
            prev = (s, e);
        }
        if self.has_eos && self.token_offsets.is_empty() {
            return Err(Error::Loss("alignment flags an EOS sentinel but has no tokens".into()));
        }
        Ok(())
    }
}

/// Half-open token index ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpans {
    pub classification: Option<(usize, usize)>,
    pub answer: (usize, usize),
}

/// A token belongs to a span when their character ranges share at least one
/// character. A token touching both spans is assigned to the answer. The EOS
/// sentinel, when present, extends the answer span (or the classification
/// span when the answer is empty).
pub fn map_spans_to_tokens(spans: &LossSpans, align: &TokenAlignment) -> Result<TokenSpans> {
    align.validate()?;
    spans.validate(align.target_text.chars().count())?;
    let n_real = align.token_offsets.len() - usize::from(align.has_eos);
    let real = &align.token_offsets[..n_real];

    let covering = |(ss, se): CharRange| -> Option<(usize, usize)> {
        let hits = |&(ts, te): &CharRange| ts < se && te > ss;
        let first = real.iter().position(hits)?;
        let last = real.iter().rposition(hits)?;
        Some((first, last + 1))
    };

    let mut answer = covering(spans.answer);
    let mut classification = spans.classification.and_then(covering);
    if let (Some((cs, ce)), Some((as_, _))) = (classification, answer) {
        if ce > as_ {
            classification = (as_ > cs).then_some((cs, as_));
        }
    }
    if align.has_eos {
        let eos = n_real;
        match (answer, classification) {
            (Some((s, _)), _) => answer = Some((s, eos + 1)),
            (None, Some((s, _))) if spans.answer.0 == spans.answer.1 => {
                classification = Some((s, eos + 1))
            }
            (None, _) => answer = Some((eos, eos + 1)),
        }
    }
    let end = classification.map_or(0, |(_, e)| e);
    Ok(TokenSpans {
        classification,
        answer: answer.unwrap_or((end, end)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Plain sums over span tokens.
    Sum,
    /// Each stage's sum divided by its token count.
    #[default]
    PerTokenMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_c: f64,
    pub l_a: f64,
    pub total: f64,
    pub lambda: f64,
    pub classification_tokens: usize,
    pub answer_tokens: usize,
}

impl LossBreakdown {
    fn new(l_c: f64, l_a: f64, lambda: f64, classification_tokens: usize, answer_tokens: usize) -> Self {
        LossBreakdown {
            l_c,
            l_a,
            total: l_c + lambda * l_a,
            lambda,
            classification_tokens,
            answer_tokens,
        }
    }

    /// Per-stage means; a stage with no tokens contributes 0.
    pub fn per_token_mean(&self) -> LossBreakdown {
        let mean = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };
        LossBreakdown::new(
            mean(self.l_c, self.classification_tokens),
            mean(self.l_a, self.answer_tokens),
            self.lambda,
            self.classification_tokens,
            self.answer_tokens,
        )
    }

    pub fn normalized(&self, mode: Normalization) -> LossBreakdown {
        match mode {
            Normalization::Sum => *self,
            Normalization::PerTokenMean => self.per_token_mean(),
        }
    }

    /// Corpus-level sum of unnormalized sample losses. All items must share λ.
    pub fn sum<'a>(items: impl IntoIterator<Item = &'a LossBreakdown>) -> Result<LossBreakdown> {
        let mut iter = items.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::Loss("cannot sum an empty batch".into()))?;
        let mut acc = *first;
        for b in iter {
            if b.lambda != acc.lambda {
                return Err(Error::Loss("mixed lambda values in one batch".into()));
            }
            acc = LossBreakdown::new(
                acc.l_c + b.l_c,
                acc.l_a + b.l_a,
                acc.lambda,
                acc.classification_tokens + b.classification_tokens,
                acc.answer_tokens + b.answer_tokens,
            );
        }
        Ok(acc)
    }
}

/// `l_c = -Σ log p` over classification tokens, `l_a` likewise over answer
/// tokens, `total = l_c + λ·l_a`. Tokens outside both spans are ignored.
pub fn masked_nll(token_logprobs: &[f64], spans: &TokenSpans, lambda: f64) -> Result<LossBreakdown> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::Loss(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    for (i, &lp) in token_logprobs.iter().enumerate() {
        if lp.is_nan() {
            return Err(Error::Loss(format!("logprob of token {i} is NaN")));
        }
        if lp > 0.0 {
            return Err(Error::Loss(format!("logprob of token {i} is positive ({lp})")));
        }
    }
    let n = token_logprobs.len();
    let check = |(s, e): (usize, usize), name: &str| -> Result<()> {
        if s > e || e > n {
            return Err(Error::Loss(format!("{name} token range {:?} outside {n} tokens", (s, e))));
        }
        Ok(())
    };
    check(spans.answer, "answer")?;
    if let Some(c) = spans.classification {
        check(c, "classification")?;
        let a = spans.answer;
        if c.0 < a.1 && a.0 < c.1 {
            return Err(Error::Loss("classification and answer token ranges overlap".into()));
        }
    }
    let neg_sum = |(s, e): (usize, usize)| -> f64 { -token_logprobs[s..e].iter().sum::<f64>() };
    let (l_c, n_c) = spans
        .classification
        .map_or((0.0, 0), |c| (neg_sum(c), c.1 - c.0));
    let l_a = neg_sum(spans.answer);
    Ok(LossBreakdown::new(l_c, l_a, lambda, n_c, spans.answer.1 - spans.answer.0))
}
