//! Parsing model generations back into verdicts, action, and answer.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::templater::{ActionText, Renderer, Verdict};

/// Ordinals above this are treated as noise.
const MAX_ORDINAL: usize = 64;

static CLAUSE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\bexample\s+(\d+)\s+is\s+(correct|wrong|right|incorrect)\b").unwrap()
});
static JOINER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^\s*,?\s*(and\s+)?$").unwrap());
static ANSWER_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^[ \t]*(?:-[ \t]*)?Output:[ \t]?").unwrap());
static ACTION_PREFIX: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s*(?:-\s*)?generated action:\s*").unwrap());
static ANSWERING_HEADER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\n?\s*answering\s*$").unwrap());
static LEADING_SCAFFOLD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(?:Answering[ \t]*\n)?[ \t]*(?:-[ \t]*)?Output:[ \t]?").unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParsedLabel {
    Correct,
    Wrong,
    Unparsed,
}

impl From<Verdict> for ParsedLabel {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::Correct => ParsedLabel::Correct,
            Verdict::Wrong => ParsedLabel::Wrong,
        }
    }
}

impl ParsedLabel {
    fn as_verdict(self) -> Option<Verdict> {
        match self {
            ParsedLabel::Correct => Some(Verdict::Correct),
            ParsedLabel::Wrong => Some(Verdict::Wrong),
            ParsedLabel::Unparsed => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Full,
    Partial,
    AnswerOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedOutput {
    pub labels: Vec<ParsedLabel>,
    pub action: Option<String>,
    pub answer: String,
    pub parse_status: ParseStatus,
    /// True when the generation is byte-identical to the canonical rendering
    /// of what was parsed (canonical verdict words, canonical layout).
    pub strict_format: bool,
}

/// Parses generations against the layout of a given renderer.
#[derive(Debug, Clone, Default)]
pub struct OutputParser {
    renderer: Renderer,
}

struct Sentence {
    end: usize,
    labels: Vec<(usize, ParsedLabel)>,
    canonical_words: bool,
}

fn find_sentence(text: &str) -> Option<Sentence> {
    let mut iter = CLAUSE.captures_iter(text);
    let first = iter.next()?;
    let whole = first.get(0).unwrap();
    let mut s = Sentence {
        end: whole.end(),
        labels: Vec::new(),
        canonical_words: true,
    };
    let push = |s: &mut Sentence, caps: &regex::Captures| {
        let word = caps[2].to_ascii_lowercase();
        let label = match word.as_str() {
            "correct" | "right" => ParsedLabel::Correct,
            _ => ParsedLabel::Wrong,
        };
        s.canonical_words &= &caps[2] == "correct" || &caps[2] == "wrong";
        if let Ok(n) = caps[1].parse::<usize>() {
            s.labels.push((n, label));
        }
    };
    push(&mut s, &first);
    for caps in iter {
        let m = caps.get(0).unwrap();
        if !JOINER.is_match(&text[s.end..m.start()]) {
            break;
        }
        s.end = m.end();
        push(&mut s, &caps);
    }
    let rest = &text[s.end..];
    let trimmed = rest.trim_start_matches([' ', '\t']);
    if trimmed.starts_with('.') {
        s.end += rest.len() - trimmed.len() + 1;
    }
    Some(s)
}

fn strip_leading_scaffold(text: &str) -> &str {
    match LEADING_SCAFFOLD.find(text) {
        Some(m) => &text[m.end()..],
        None => text,
    }
}

impl OutputParser {
    pub fn new(renderer: Renderer) -> Self {
        OutputParser { renderer }
    }

    /// Never fails; problems are reported through `parse_status`.
    pub fn parse(&self, generation: &str, expected_examples: usize) -> ParsedOutput {
        let Some(sentence) = find_sentence(generation) else {
            let answer = strip_leading_scaffold(generation).trim().to_string();
            let status = if expected_examples > 0 {
                ParseStatus::AnswerOnly
            } else {
                ParseStatus::Full
            };
            let strict = status == ParseStatus::Full && generation.trim_end() == answer && !answer.is_empty();
            return ParsedOutput {
                labels: vec![ParsedLabel::Unparsed; expected_examples],
                action: None,
                answer,
                parse_status: status,
                strict_format: strict,
            };
        };

        let max_found = sentence
            .labels
            .iter()
            .map(|&(n, _)| n)
            .filter(|&n| (1..=MAX_ORDINAL).contains(&n))
            .max()
            .unwrap_or(0);
        let mut labels = vec![ParsedLabel::Unparsed; expected_examples.max(max_found)];
        for &(n, label) in &sentence.labels {
            if (1..=MAX_ORDINAL).contains(&n) && labels[n - 1] == ParsedLabel::Unparsed {
                labels[n - 1] = label;
            }
        }

        let after = &generation[sentence.end..];
        let (between, answer) = match ANSWER_MARKER.find(after) {
            Some(m) => (&after[..m.start()], Some(after[m.end()..].trim().to_string())),
            None => (after, None),
        };
        let mut action_text = ACTION_PREFIX.replace(between, "").into_owned();
        if let Some(m) = ANSWERING_HEADER.find(&action_text) {
            action_text.truncate(m.start());
        }
        let action_text = action_text.trim();
        let action = (!action_text.is_empty()).then(|| action_text.to_string());

        let complete = labels.len() == expected_examples && labels.iter().all(|l| *l != ParsedLabel::Unparsed);
        let has_answer = answer.as_deref().is_some_and(|a| !a.is_empty());
        let parse_status = if complete && has_answer {
            ParseStatus::Full
        } else {
            ParseStatus::Partial
        };
        let answer = answer.unwrap_or_default();

        let strict_format = parse_status == ParseStatus::Full
            && sentence.canonical_words
            && self.is_canonical(generation, &labels, action.as_deref(), &answer);

        ParsedOutput {
            labels,
            action,
            answer,
            parse_status,
            strict_format,
        }
    }

    fn is_canonical(&self, generation: &str, labels: &[ParsedLabel], action: Option<&str>, answer: &str) -> bool {
        let Some(verdicts) = labels.iter().map(|l| l.as_verdict()).collect::<Option<Vec<_>>>() else {
            return false;
        };
        let action = match action.map(ActionText::new) {
            Some(Ok(a)) => Some(a),
            Some(Err(_)) => return false,
            None => None,
        };
        let (canonical, _) = self.renderer.pacit_target(&verdicts, action.as_ref(), answer);
        canonical == generation.trim_end()
    }
}

/// Parses with the builtin layout.
pub fn parse_output(generation: &str, expected_examples: usize) -> ParsedOutput {
    OutputParser::default().parse(generation, expected_examples)
}

/// Fraction of example slots whose parsed label matches gold. Unparsed
/// and missing labels count as wrong.
pub fn classification_accuracy(parsed: &[ParsedOutput], gold: &[Vec<Verdict>]) -> Result<f64> {
    if parsed.len() != gold.len() {
        return Err(Error::Metric(format!(
            "{} parsed outputs vs {} gold label lists",
            parsed.len(),
            gold.len()
        )));
    }
    let total: usize = gold.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::Metric("no gold example labels to score".into()));
    }
    let hits: usize = parsed
        .iter()
        .zip(gold)
        .map(|(p, g)| {
            g.iter()
                .enumerate()
                .filter(|&(i, v)| p.labels.get(i).copied() == Some(ParsedLabel::from(*v)))
                .count()
        })
        .sum();
    Ok(hits as f64 / total as f64)
}
