//! Prompt and target rendering for every sample format the toolkit emits.
//!
//! Scaffold strings live in a versioned TOML catalog (`templates/scaffold_v1.toml`
//! is compiled in). Part boundaries are reported as character offsets, counted
//! in Unicode scalar values, into the rendered target.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledExample, Tag};
use crate::error::{Error, Result};

const BUILTIN_SCAFFOLD: &str = include_str!("../templates/scaffold_v1.toml");

/// Demonstration pairs the self-instruct prompt carries.
pub const SELF_INSTRUCT_DEMOS: usize = 4;

pub const DEFAULT_ACTION: &str =
    "I should learn from correct examples and avoid the mistakes in these wrong examples.";

pub const DEFAULT_MAX_EXAMPLES: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PacitScaffold {
    pub definition: String,
    pub example: String,
    pub instance: String,
    pub classification_header: String,
    pub result_prefix: String,
    pub action_prefix: String,
    pub answering_header: String,
    pub stage_separator: String,
    pub answer_prefix: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SuperNiScaffold {
    pub definition: String,
    pub positive_example: String,
    pub negative_example: String,
    pub instance: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SeparatedScaffold {
    pub definition: String,
    pub example: String,
    pub instruction: String,
    pub prediction_prefix: String,
    pub action_separator: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SelfInstructScaffold {
    pub header: String,
    pub demo_definition: String,
    pub positive_example: String,
    pub negative_example: String,
    pub explanation: String,
    pub generated_header: String,
    pub target_definition: String,
}

/// The full scaffold catalog.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Templates {
    pub version: u32,
    pub pacit: PacitScaffold,
    pub superni: SuperNiScaffold,
    pub separated: SeparatedScaffold,
    pub selfinstruct: SelfInstructScaffold,
}

impl Templates {
    pub fn builtin() -> Self {
        Self::from_toml_str(BUILTIN_SCAFFOLD).expect("builtin scaffold catalog parses")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse("template catalog", "<document>", e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

impl Default for Templates {
    fn default() -> Self {
        Self::builtin()
    }
}

/// The fixed self-reminder emitted after the classification result.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionText(String);

impl ActionText {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() || text.contains('\n') {
            return Err(Error::Template(
                "action text must be a non-empty single line".into(),
            ));
        }
        Ok(ActionText(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Default for ActionText {
    fn default() -> Self {
        ActionText(DEFAULT_ACTION.to_string())
    }
}

/// A verdict in the classification sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Wrong,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Correct => "correct",
            Verdict::Wrong => "wrong",
        }
    }
}

impl From<Tag> for Verdict {
    fn from(tag: Tag) -> Self {
        match tag {
            Tag::Positive => Verdict::Correct,
            Tag::Negative => Verdict::Wrong,
        }
    }
}

/// "Example 1 is correct and example 2 is wrong."
pub fn classification_sentence(verdicts: &[Verdict]) -> String {
    let mut s = String::new();
    for (i, v) in verdicts.iter().enumerate() {
        if i > 0 {
            s.push_str(" and ");
        }
        let _ = write!(s, "{} {} is {}", if i == 0 { "Example" } else { "example" }, i + 1, v.as_str());
    }
    s.push('.');
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartName {
    ClassificationResult,
    Action,
    Answer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartBoundary {
    pub part: PartName,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedSample {
    pub prompt: String,
    pub target: String,
    pub part_boundaries: Vec<PartBoundary>,
}

impl RenderedSample {
    /// Text of one part, if present.
    pub fn part_text(&self, part: PartName) -> Option<&str> {
        self.part_boundaries
            .iter()
            .find(|b| b.part == part)
            .map(|b| char_slice(&self.target, b.start, b.end))
    }

    /// The scaffold strings around and between parts: `parts.len() + 1` entries.
    pub fn scaffold_segments(&self) -> Vec<&str> {
        let mut out = Vec::with_capacity(self.part_boundaries.len() + 1);
        let mut cursor = 0;
        for b in &self.part_boundaries {
            out.push(char_slice(&self.target, cursor, b.start));
            cursor = b.end;
        }
        out.push(char_slice(&self.target, cursor, self.target.chars().count()));
        out
    }
}

/// Slice by character offsets. Out-of-range offsets clamp to the end.
pub fn char_slice(text: &str, start: usize, end: usize) -> &str {
    let byte_at = |n: usize| text.char_indices().nth(n).map_or(text.len(), |(b, _)| b);
    let (s, e) = (byte_at(start), byte_at(end));
    &text[s..e.max(s)]
}

/// Appends scaffold and parts while tracking character offsets.
#[derive(Default)]
struct TargetBuilder {
    text: String,
    chars: usize,
    parts: Vec<PartBoundary>,
}

impl TargetBuilder {
    fn scaffold(&mut self, s: &str) {
        self.text.push_str(s);
        self.chars += s.chars().count();
    }

    fn part(&mut self, part: PartName, s: &str) {
        let start = self.chars;
        self.scaffold(s);
        self.parts.push(PartBoundary {
            part,
            start,
            end: self.chars,
        });
    }

    fn finish(self) -> (String, Vec<PartBoundary>) {
        (self.text, self.parts)
    }
}

/// Single-pass `{key}` substitution over the template only.
fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let key = &after[..close];
                match vars.iter().find(|(k, _)| *k == key) {
                    Some((_, v)) => out.push_str(v),
                    None => {
                        out.push('{');
                        out.push_str(key);
                        out.push('}');
                    }
                }
                rest = &after[close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

/// Renders all prompt/target formats from one scaffold catalog.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Renderer {
    pub templates: Templates,
    /// Emit the "Classification" / "Answering" header lines in PACIT targets.
    pub stage_headers: bool,
    pub max_examples: usize,
}

impl Default for Renderer {
    fn default() -> Self {
        Renderer {
            templates: Templates::builtin(),
            stage_headers: true,
            max_examples: DEFAULT_MAX_EXAMPLES,
        }
    }
}

impl Renderer {
    pub fn new(templates: Templates, stage_headers: bool, max_examples: usize) -> Self {
        Renderer {
            templates,
            stage_headers,
            max_examples,
        }
    }

    fn check_answer(answer: &str) -> Result<()> {
        if answer.trim().is_empty() {
            return Err(Error::Template("answer is empty; the target must supervise at least one token".into()));
        }
        Ok(())
    }

    fn check_k(&self, examples: &[LabeledExample]) -> Result<()> {
        if examples.len() > self.max_examples {
            return Err(Error::Template(format!(
                "{} examples exceed the limit of {}",
                examples.len(),
                self.max_examples
            )));
        }
        Ok(())
    }

    pub fn pacit_prompt(&self, task_def: &str, examples: &[LabeledExample], instance_input: &str) -> String {
        let t = &self.templates.pacit;
        let mut p = fill(&t.definition, &[("definition", task_def)]);
        for (i, ex) in examples.iter().enumerate() {
            let idx = (i + 1).to_string();
            p.push_str(&fill(
                &t.example,
                &[("index", &idx), ("input", &ex.input), ("output", &ex.output)],
            ));
        }
        p.push_str(&fill(&t.instance, &[("input", instance_input)]));
        p
    }

    /// Target for a PACIT sample. No verdicts means no classification stage.
    /// `action = None` renders the classification result without the action.
    pub fn pacit_target(
        &self,
        verdicts: &[Verdict],
        action: Option<&ActionText>,
        answer: &str,
    ) -> (String, Vec<PartBoundary>) {
        let t = &self.templates.pacit;
        let mut b = TargetBuilder::default();
        if verdicts.is_empty() {
            b.part(PartName::Answer, answer);
            return b.finish();
        }
        if self.stage_headers {
            b.scaffold(&t.classification_header);
        }
        b.scaffold(&t.result_prefix);
        b.part(PartName::ClassificationResult, &classification_sentence(verdicts));
        if let Some(a) = action {
            b.scaffold(&t.action_prefix);
            b.part(PartName::Action, a.as_str());
        }
        b.scaffold(&t.stage_separator);
        if self.stage_headers {
            b.scaffold(&t.answering_header);
        }
        b.scaffold(&t.answer_prefix);
        b.part(PartName::Answer, answer);
        b.finish()
    }

    /// PACIT sample: tags are concealed behind ordinals in the prompt and
    /// appear only as verdicts in the target.
    pub fn render_pacit(
        &self,
        task_def: &str,
        examples: &[LabeledExample],
        instance_input: &str,
        answer: &str,
        action: Option<&ActionText>,
    ) -> Result<RenderedSample> {
        Self::check_answer(answer)?;
        self.check_k(examples)?;
        let verdicts: Vec<Verdict> = examples.iter().map(|e| e.tag.into()).collect();
        let (target, part_boundaries) = self.pacit_target(&verdicts, action, answer);
        Ok(RenderedSample {
            prompt: self.pacit_prompt(task_def, examples, instance_input),
            target,
            part_boundaries,
        })
    }

    pub fn superni_prompt(&self, task_def: &str, examples: &[LabeledExample], instance_input: &str) -> String {
        let t = &self.templates.superni;
        let mut p = fill(&t.definition, &[("definition", task_def)]);
        let (mut n_pos, mut n_neg) = (0usize, 0usize);
        for ex in examples {
            let (tpl, n) = match ex.tag {
                Tag::Positive => (&t.positive_example, &mut n_pos),
                Tag::Negative => (&t.negative_example, &mut n_neg),
            };
            *n += 1;
            let idx = n.to_string();
            p.push_str(&fill(tpl, &[("index", &idx), ("input", &ex.input), ("output", &ex.output)]));
        }
        p.push_str(&fill(&t.instance, &[("input", instance_input)]));
        p
    }

    fn answer_only(answer: &str) -> (String, Vec<PartBoundary>) {
        let mut b = TargetBuilder::default();
        b.part(PartName::Answer, answer);
        b.finish()
    }

    /// Conventional in-context format: examples shown with their tags, answer-only target.
    pub fn render_superni_fewshot(
        &self,
        task_def: &str,
        examples: &[LabeledExample],
        instance_input: &str,
        answer: &str,
    ) -> Result<RenderedSample> {
        Self::check_answer(answer)?;
        self.check_k(examples)?;
        let (target, part_boundaries) = Self::answer_only(answer);
        Ok(RenderedSample {
            prompt: self.superni_prompt(task_def, examples, instance_input),
            target,
            part_boundaries,
        })
    }

    pub fn render_zero_shot(&self, task_def: &str, instance_input: &str, answer: &str) -> Result<RenderedSample> {
        self.render_superni_fewshot(task_def, &[], instance_input, answer)
    }

    pub fn separated_prompt(&self, task_def: &str, examples: &[LabeledExample]) -> String {
        let t = &self.templates.separated;
        let mut p = fill(&t.definition, &[("definition", task_def)]);
        for (i, ex) in examples.iter().enumerate() {
            let idx = (i + 1).to_string();
            p.push_str(&fill(&t.example, &[("index", &idx), ("input", &ex.input), ("output", &ex.output)]));
        }
        p.push_str(&t.instruction);
        p
    }

    pub fn separated_target(&self, verdicts: &[Verdict], action: Option<&ActionText>) -> (String, Vec<PartBoundary>) {
        let t = &self.templates.separated;
        let mut b = TargetBuilder::default();
        b.scaffold(&t.prediction_prefix);
        b.part(PartName::ClassificationResult, &classification_sentence(verdicts));
        if let Some(a) = action {
            b.scaffold(&t.action_separator);
            b.part(PartName::Action, a.as_str());
        }
        b.finish()
    }

    /// Classification-only sub-sample used when the two stages are trained separately.
    pub fn render_separated_classification(
        &self,
        task_def: &str,
        examples: &[LabeledExample],
        action: Option<&ActionText>,
    ) -> Result<RenderedSample> {
        if examples.is_empty() {
            return Err(Error::Template(
                "a classification sub-sample needs at least one example".into(),
            ));
        }
        self.check_k(examples)?;
        let verdicts: Vec<Verdict> = examples.iter().map(|e| e.tag.into()).collect();
        let (target, part_boundaries) = self.separated_target(&verdicts, action);
        Ok(RenderedSample {
            prompt: self.separated_prompt(task_def, examples),
            target,
            part_boundaries,
        })
    }

    /// Prompt asking a chat model for one new positive/negative pair for `target_task_def`.
    pub fn render_selfinstruct_prompt(&self, seed_demos: &[SeedPair], target_task_def: &str) -> Result<String> {
        if seed_demos.len() != SELF_INSTRUCT_DEMOS {
            return Err(Error::Template(format!(
                "self-instruct prompt takes exactly {SELF_INSTRUCT_DEMOS} demonstrations, got {}",
                seed_demos.len()
            )));
        }
        let t = &self.templates.selfinstruct;
        let mut p = t.header.clone();
        for demo in seed_demos {
            p.push_str(&fill(&t.demo_definition, &[("definition", &demo.task_def)]));
            for (tpl, ex) in [(&t.positive_example, &demo.positive), (&t.negative_example, &demo.negative)] {
                p.push_str(&fill(tpl, &[("input", &ex.input), ("output", &ex.output)]));
                if let Some(expl) = &ex.explanation {
                    p.push_str(&fill(&t.explanation, &[("explanation", expl)]));
                }
            }
        }
        p.push_str(&t.generated_header);
        p.push_str(&fill(&t.target_definition, &[("definition", target_task_def)]));
        Ok(p)
    }
}

/// One demonstration for the self-instruct prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPair {
    pub task_id: String,
    pub task_def: String,
    pub positive: LabeledExample,
    pub negative: LabeledExample,
}
