//! Sample assembly under an input-length budget.
//!
//! A sample starts from definition + instance. Drawn examples are shuffled
//! and appended one at a time; the first example that would overflow the
//! budget ends the process, so survivors are always a prefix of the draw.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledExample, Tag, Task, TaskInstance};
use crate::error::{Error, Result};
use crate::loss::{annotate_spans, LossSpans};
use crate::seed::{derive_seed, stream_rng, STREAM_LABELS, STREAM_SHUFFLE};
use crate::templater::{char_slice, ActionText, PartBoundary, Renderer, Verdict};

/// Measures text length in the units of the budget.
pub trait LengthMeasure: Send + Sync {
    fn id(&self) -> String;
    fn measure(&self, text: &str) -> Result<usize>;
}

/// Counts whitespace-separated words.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceCounter;

impl LengthMeasure for WhitespaceCounter {
    fn id(&self) -> String {
        "whitespace".into()
    }

    fn measure(&self, text: &str) -> Result<usize> {
        Ok(text.split_whitespace().count())
    }
}

/// Delegates to a long-running external tokenizer process.
///
/// Protocol: one JSON-encoded string per line on the child's stdin, one
/// decimal count per line on its stdout.
pub struct CommandMeasure {
    command: String,
    proc: Mutex<MeasureProc>,
}

struct MeasureProc {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl CommandMeasure {
    pub fn spawn(command: &str) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::io(command, e))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(CommandMeasure {
            command: command.to_string(),
            proc: Mutex::new(MeasureProc { child, stdin, stdout }),
        })
    }
}

impl LengthMeasure for CommandMeasure {
    fn id(&self) -> String {
        format!("command:{}", self.command)
    }

    fn measure(&self, text: &str) -> Result<usize> {
        let mut p = self.proc.lock().unwrap_or_else(|e| e.into_inner());
        let line = serde_json::to_string(text).expect("strings serialize");
        let io = |e| Error::io(&self.command, e);
        writeln!(p.stdin, "{line}").map_err(io)?;
        p.stdin.flush().map_err(io)?;
        let mut reply = String::new();
        p.stdout.read_line(&mut reply).map_err(io)?;
        reply.trim().parse().map_err(|_| {
            Error::Validation(format!("length command `{}` replied {:?}", self.command, reply.trim()))
        })
    }
}

impl Drop for CommandMeasure {
    fn drop(&mut self) {
        if let Ok(p) = self.proc.get_mut() {
            let _ = p.child.kill();
            let _ = p.child.wait();
        }
    }
}

/// Parses `whitespace` or `command:<shell command>`.
pub fn measure_from_spec(spec: &str) -> Result<Arc<dyn LengthMeasure>> {
    match spec {
        "whitespace" => Ok(Arc::new(WhitespaceCounter)),
        s => match s.strip_prefix("command:") {
            Some(cmd) if !cmd.trim().is_empty() => Ok(Arc::new(CommandMeasure::spawn(cmd)?)),
            _ => Err(Error::Validation(format!(
                "unknown length_fn {s:?}; expected \"whitespace\" or \"command:<cmd>\""
            ))),
        },
    }
}

#[derive(Clone)]
pub struct LengthBudget {
    pub max_input_units: usize,
    pub max_output_units: usize,
    pub length_fn: Arc<dyn LengthMeasure>,
}

impl LengthBudget {
    pub fn new(max_input_units: usize, max_output_units: usize, length_fn: Arc<dyn LengthMeasure>) -> Result<Self> {
        if max_input_units == 0 || max_output_units == 0 {
            return Err(Error::Validation("length budgets must be >= 1".into()));
        }
        Ok(LengthBudget {
            max_input_units,
            max_output_units,
            length_fn,
        })
    }

    pub fn whitespace(max_input_units: usize) -> Self {
        LengthBudget::new(max_input_units, 128, Arc::new(WhitespaceCounter)).expect("positive budget")
    }

    fn fits(&self, prompt: &str) -> Result<bool> {
        Ok(self.length_fn.measure(prompt)? <= self.max_input_units)
    }
}

impl Default for LengthBudget {
    fn default() -> Self {
        LengthBudget::whitespace(1024)
    }
}

impl fmt::Debug for LengthBudget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LengthBudget")
            .field("max_input_units", &self.max_input_units)
            .field("max_output_units", &self.max_output_units)
            .field("length_fn", &self.length_fn.id())
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Pacit,
    /// Classification result without the action sentence.
    PacitNoAction,
    SuperniFewshot,
    ZeroShot,
    SeparatedClassification,
    SeparatedAnswering,
}

impl Variant {
    pub fn has_quiz(self) -> bool {
        matches!(self, Variant::Pacit | Variant::PacitNoAction | Variant::SeparatedClassification)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleType {
    WithoutExamples,
    OnlyPositive,
    OnlyNegative,
    Mixing,
}

impl SampleType {
    pub const ALL: [SampleType; 4] = [
        SampleType::WithoutExamples,
        SampleType::OnlyPositive,
        SampleType::OnlyNegative,
        SampleType::Mixing,
    ];

    pub fn of(tags: &[Tag]) -> SampleType {
        let pos = tags.contains(&Tag::Positive);
        let neg = tags.contains(&Tag::Negative);
        match (pos, neg) {
            (false, false) => SampleType::WithoutExamples,
            (true, false) => SampleType::OnlyPositive,
            (false, true) => SampleType::OnlyNegative,
            (true, true) => SampleType::Mixing,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SampleType::WithoutExamples => "without_examples",
            SampleType::OnlyPositive => "only_positive",
            SampleType::OnlyNegative => "only_negative",
            SampleType::Mixing => "mixing",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedSample {
    pub sample_id: String,
    pub task_id: String,
    pub instance_id: String,
    pub variant: Variant,
    pub sample_type: SampleType,
    pub prompt: String,
    pub target: String,
    /// True tags of the examples, in prompt order.
    pub example_tags: Vec<Tag>,
    /// Verdicts written into the target; differ from `example_tags` after relabeling.
    pub target_labels: Vec<Verdict>,
    pub spans: LossSpans,
    pub seed: u64,
    /// All reference outputs of the instance (the target answers with the first).
    pub references: Vec<String>,
    /// The instance input (or definition) was cut to fit the budget.
    pub truncated: bool,
}

/// Assembles samples from tasks with one renderer, action, and budget.
#[derive(Debug, Clone)]
pub struct Packer {
    pub renderer: Renderer,
    pub action: ActionText,
    pub budget: LengthBudget,
}

struct Base {
    definition: String,
    input: String,
    truncated: bool,
}

fn char_prefix(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((b, _)) => &s[..b],
        None => s,
    }
}

impl Packer {
    pub fn new(renderer: Renderer, action: ActionText, budget: LengthBudget) -> Self {
        Packer { renderer, action, budget }
    }

    fn prompt_for(&self, variant: Variant, def: &str, examples: &[LabeledExample], input: &str) -> String {
        match variant {
            Variant::Pacit | Variant::PacitNoAction => self.renderer.pacit_prompt(def, examples, input),
            Variant::SuperniFewshot | Variant::ZeroShot | Variant::SeparatedAnswering => {
                self.renderer.superni_prompt(def, examples, input)
            }
            Variant::SeparatedClassification => self.renderer.separated_prompt(def, examples),
        }
    }

    /// Largest prefix length `m ≤ len` with `ok(m)`, assuming `ok` is monotone.
    fn longest_fitting(len: usize, ok: impl Fn(usize) -> Result<bool>) -> Result<Option<usize>> {
        if !ok(0)? {
            return Ok(None);
        }
        let (mut lo, mut hi) = (0usize, len);
        while lo < hi {
            let mid = lo + (hi - lo).div_ceil(2);
            if ok(mid)? {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        Ok(Some(lo))
    }

    /// Definition + instance, cut from the right until the bare prompt fits.
    fn fit_base(&self, variant: Variant, task: &Task, instance: &TaskInstance) -> Result<Base> {
        let def = task.definition.as_str();
        let input = instance.input.as_str();
        let fits = |d: &str, i: &str| self.budget.fits(&self.prompt_for(variant, d, &[], i));
        if fits(def, input)? {
            return Ok(Base {
                definition: def.to_string(),
                input: input.to_string(),
                truncated: false,
            });
        }
        let n_input = input.chars().count();
        if let Some(m) = Self::longest_fitting(n_input, |m| fits(def, char_prefix(input, m)))? {
            return Ok(Base {
                definition: def.to_string(),
                input: char_prefix(input, m).to_string(),
                truncated: true,
            });
        }
        let n_def = def.chars().count();
        match Self::longest_fitting(n_def, |m| fits(char_prefix(def, m), ""))? {
            Some(m) => Ok(Base {
                definition: char_prefix(def, m).to_string(),
                input: String::new(),
                truncated: true,
            }),
            None => Err(Error::Validation(format!(
                "max_input_units = {} cannot hold the prompt scaffold",
                self.budget.max_input_units
            ))),
        }
    }

    /// k_pos positives and k_neg negatives without replacement, then shuffled.
    fn draw(task: &Task, k_pos: usize, k_neg: usize, rng: &mut ChaCha8Rng) -> Vec<LabeledExample> {
        let mut pick = |pool: &[LabeledExample], k: usize| -> Vec<LabeledExample> {
            rand::seq::index::sample(rng, pool.len(), k.min(pool.len()))
                .into_iter()
                .map(|i| pool[i].clone())
                .collect()
        };
        let mut drawn = pick(&task.positive_pool, k_pos);
        drawn.extend(pick(&task.negative_pool, k_neg));
        drawn.shuffle(rng);
        drawn
    }

    fn survivors(
        &self,
        drawn: &[LabeledExample],
        fits: impl Fn(&[LabeledExample]) -> Result<bool>,
    ) -> Result<usize> {
        for n in 1..=drawn.len() {
            if !fits(&drawn[..n])? {
                return Ok(n - 1);
            }
        }
        Ok(drawn.len())
    }

    fn answer(instance: &TaskInstance) -> Result<&str> {
        instance
            .outputs
            .first()
            .map(String::as_str)
            .ok_or_else(|| Error::Validation(format!("instance {} has no reference output", instance.id)))
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        sample_id: String,
        task: &Task,
        instance: &TaskInstance,
        variant: Variant,
        examples: &[LabeledExample],
        rendered: crate::templater::RenderedSample,
        seed: u64,
        truncated: bool,
    ) -> Result<PackedSample> {
        let example_tags: Vec<Tag> = examples.iter().map(|e| e.tag).collect();
        let target_labels = if variant.has_quiz() {
            example_tags.iter().map(|&t| Verdict::from(t)).collect()
        } else {
            Vec::new()
        };
        Ok(PackedSample {
            sample_id,
            task_id: task.task_id.clone(),
            instance_id: instance.id.clone(),
            variant,
            sample_type: SampleType::of(&example_tags),
            spans: annotate_spans(&rendered)?,
            prompt: rendered.prompt,
            target: rendered.target,
            example_tags,
            target_labels,
            seed,
            references: instance.outputs.clone(),
            truncated,
        })
    }

    /// One sample of a single-sample variant (not `separated_*`).
    pub fn assemble(
        &self,
        task: &Task,
        instance: &TaskInstance,
        variant: Variant,
        k_pos: usize,
        k_neg: usize,
        seed: u64,
    ) -> Result<PackedSample> {
        if matches!(variant, Variant::SeparatedClassification | Variant::SeparatedAnswering) {
            return Err(Error::Validation("use assemble_separated for separated variants".into()));
        }
        let answer = Self::answer(instance)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = self.fit_base(variant, task, instance)?;
        let drawn = if variant == Variant::ZeroShot {
            Vec::new()
        } else {
            Self::draw(task, k_pos, k_neg, &mut rng)
        };
        let kept = self.survivors(&drawn, |exs| {
            self.budget.fits(&self.prompt_for(variant, &base.definition, exs, &base.input))
        })?;
        let examples = &drawn[..kept];
        let r = &self.renderer;
        let rendered = match variant {
            Variant::Pacit => r.render_pacit(&base.definition, examples, &base.input, answer, Some(&self.action))?,
            Variant::PacitNoAction => r.render_pacit(&base.definition, examples, &base.input, answer, None)?,
            _ => r.render_superni_fewshot(&base.definition, examples, &base.input, answer)?,
        };
        let id = format!("{}/{}", task.task_id, instance.id);
        self.finish(id, task, instance, variant, examples, rendered, seed, base.truncated)
    }

    /// The two-sub-sample form: a classification sample over the surviving
    /// examples (omitted when none survive) and a few-shot answering sample
    /// over the same examples. An example survives only if both prompts fit.
    pub fn assemble_separated(
        &self,
        task: &Task,
        instance: &TaskInstance,
        k_pos: usize,
        k_neg: usize,
        seed: u64,
    ) -> Result<Vec<PackedSample>> {
        let answer = Self::answer(instance)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = self.fit_base(Variant::SeparatedAnswering, task, instance)?;
        let drawn = Self::draw(task, k_pos, k_neg, &mut rng);
        let kept = self.survivors(&drawn, |exs| {
            Ok(self.budget.fits(&self.renderer.superni_prompt(&base.definition, exs, &base.input))?
                && self.budget.fits(&self.renderer.separated_prompt(&base.definition, exs))?)
        })?;
        let examples = &drawn[..kept];
        let base_id = format!("{}/{}", task.task_id, instance.id);
        let mut out = Vec::with_capacity(2);
        if !examples.is_empty() {
            let rendered =
                self.renderer
                    .render_separated_classification(&base.definition, examples, Some(&self.action))?;
            out.push(self.finish(
                format!("{base_id}#cls"),
                task,
                instance,
                Variant::SeparatedClassification,
                examples,
                rendered,
                seed,
                base.truncated,
            )?);
        }
        let rendered = self
            .renderer
            .render_superni_fewshot(&base.definition, examples, &base.input, answer)?;
        out.push(self.finish(
            format!("{base_id}#ans"),
            task,
            instance,
            Variant::SeparatedAnswering,
            examples,
            rendered,
            seed,
            base.truncated,
        )?);
        Ok(out)
    }

    fn rerender_target(&self, sample: &PackedSample, verdicts: &[Verdict]) -> Result<(String, Vec<PartBoundary>)> {
        let answer = char_slice(&sample.target, sample.spans.answer.0, sample.spans.answer.1);
        Ok(match sample.variant {
            Variant::Pacit => self.renderer.pacit_target(verdicts, Some(&self.action), answer),
            Variant::PacitNoAction => self.renderer.pacit_target(verdicts, None, answer),
            Variant::SeparatedClassification => self.renderer.separated_target(verdicts, Some(&self.action)),
            v => return Err(Error::Validation(format!("variant {v:?} has no classification target"))),
        })
    }

    /// Replaces each verdict in quiz targets with an independent fair coin.
    /// Prompts and `example_tags` are untouched; spans are recomputed.
    pub fn randomize_labels(&self, samples: Vec<PackedSample>, seed: u64) -> Result<Vec<PackedSample>> {
        samples
            .into_iter()
            .map(|mut s| {
                if !s.variant.has_quiz() || s.example_tags.is_empty() {
                    return Ok(s);
                }
                let mut rng = stream_rng(seed, STREAM_LABELS, &[&s.sample_id]);
                let verdicts: Vec<Verdict> = (0..s.example_tags.len())
                    .map(|_| if rng.random_bool(0.5) { Verdict::Correct } else { Verdict::Wrong })
                    .collect();
                let (target, part_boundaries) = self.rerender_target(&s, &verdicts)?;
                let rendered = crate::templater::RenderedSample {
                    prompt: String::new(),
                    target,
                    part_boundaries,
                };
                s.spans = annotate_spans(&rendered)?;
                s.target = rendered.target;
                s.target_labels = verdicts;
                Ok(s)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    #[default]
    GroundTruth,
    Random,
}

/// Corpus-level choice of sample format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusVariant {
    #[default]
    Pacit,
    PacitNoAction,
    SuperniFewshot,
    ZeroShot,
    /// Emits classification and answering sub-samples per instance.
    Separated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub variant: CorpusVariant,
    pub k_pos: usize,
    pub k_neg: usize,
    pub label_mode: LabelMode,
    pub seed: u64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            variant: CorpusVariant::Pacit,
            k_pos: 1,
            k_neg: 1,
            label_mode: LabelMode::GroundTruth,
            seed: 0,
        }
    }
}

/// Per-sample seed: independent of build order and thread count.
pub fn sample_seed(run_seed: u64, task_id: &str, instance_id: &str) -> u64 {
    derive_seed(run_seed, STREAM_SHUFFLE, &[task_id, instance_id])
}

/// Packs every selected instance. Tasks are processed in parallel; output
/// order is task id then instance order, whatever the thread count.
pub fn build_corpus(
    packer: &Packer,
    tasks: &BTreeMap<String, &Task>,
    instances: &BTreeMap<String, Vec<TaskInstance>>,
    opts: &BuildOptions,
) -> Result<Vec<PackedSample>> {
    let jobs: Vec<(&String, &Vec<TaskInstance>)> = instances.iter().collect();
    let per_task: Vec<Vec<PackedSample>> = jobs
        .par_iter()
        .map(|(task_id, insts)| {
            let task = tasks
                .get(*task_id)
                .ok_or_else(|| Error::Validation(format!("no task loaded for {task_id}")))?;
            let mut out = Vec::with_capacity(insts.len());
            for inst in insts.iter() {
                let seed = sample_seed(opts.seed, task_id, &inst.id);
                match opts.variant {
                    CorpusVariant::Separated => {
                        out.extend(packer.assemble_separated(task, inst, opts.k_pos, opts.k_neg, seed)?)
                    }
                    v => {
                        let variant = match v {
                            CorpusVariant::Pacit => Variant::Pacit,
                            CorpusVariant::PacitNoAction => Variant::PacitNoAction,
                            CorpusVariant::SuperniFewshot => Variant::SuperniFewshot,
                            CorpusVariant::ZeroShot => Variant::ZeroShot,
                            CorpusVariant::Separated => unreachable!(),
                        };
                        out.push(packer.assemble(task, inst, variant, opts.k_pos, opts.k_neg, seed)?)
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let samples: Vec<PackedSample> = per_task.into_iter().flatten().collect();
    match opts.label_mode {
        LabelMode::GroundTruth => Ok(samples),
        LabelMode::Random => packer.randomize_labels(samples, opts.seed),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_samples: usize,
    /// Samples counted for type proportions (classification sub-samples excluded).
    pub n_counted: usize,
    pub type_counts: BTreeMap<SampleType, usize>,
    pub type_proportions: BTreeMap<SampleType, f64>,
    pub avg_examples_per_sample: f64,
    pub per_task_samples: BTreeMap<String, usize>,
    pub truncated_samples: usize,
}

/// Type proportions and example averages. Separated classification samples
/// duplicate their answering partner's examples and are left out of both.
pub fn corpus_stats(samples: &[PackedSample]) -> Result<CorpusStats> {
    if samples.is_empty() {
        return Err(Error::Validation("corpus is empty".into()));
    }
    let counted: Vec<&PackedSample> = samples
        .iter()
        .filter(|s| s.variant != Variant::SeparatedClassification)
        .collect();
    let n = counted.len();
    let mut type_counts: BTreeMap<SampleType, usize> = SampleType::ALL.iter().map(|&t| (t, 0)).collect();
    for s in &counted {
        *type_counts.entry(s.sample_type).or_default() += 1;
    }
    let denom = n.max(1) as f64;
    let type_proportions = type_counts.iter().map(|(&t, &c)| (t, c as f64 / denom)).collect();
    let mut per_task_samples = BTreeMap::new();
    for s in samples {
        *per_task_samples.entry(s.task_id.clone()).or_insert(0) += 1;
    }
    Ok(CorpusStats {
        n_samples: samples.len(),
        n_counted: n,
        type_counts,
        type_proportions,
        avg_examples_per_sample: counted.iter().map(|s| s.example_tags.len()).sum::<usize>() as f64 / denom,
        per_task_samples,
        truncated_samples: samples.iter().filter(|s| s.truncated).count(),
    })
}

pub fn render_stats_table(stats: &CorpusStats) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<18} {:>9} {:>9}\n", "sample type", "count", "percent"));
    for t in SampleType::ALL {
        out.push_str(&format!(
            "{:<18} {:>9} {:>8.1}%\n",
            t.as_str(),
            stats.type_counts.get(&t).copied().unwrap_or(0),
            100.0 * stats.type_proportions.get(&t).copied().unwrap_or(0.0)
        ));
    }
    out.push_str(&format!("{:<18} {:>9}\n", "samples", stats.n_samples));
    out.push_str(&format!("{:<18} {:>9.3}\n", "avg examples", stats.avg_examples_per_sample));
    out.push_str(&format!("{:<18} {:>9}\n", "tasks", stats.per_task_samples.len()));
    out.push_str(&format!("{:<18} {:>9}\n", "truncated", stats.truncated_samples));
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            Error::parse(path.display().to_string(), format!("line {}", i + 1), e.to_string())
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(tag: Tag, words: usize) -> LabeledExample {
        LabeledExample::new(vec!["w"; words].join(" "), "o", tag, None).unwrap()
    }

    fn task(pos: Vec<LabeledExample>, neg: Vec<LabeledExample>) -> Task {
        Task {
            task_id: "t".into(),
            definition: "Do it.".into(),
            positive_pool: pos,
            negative_pool: neg,
            instances: vec![TaskInstance {
                id: "i0".into(),
                input: "q".into(),
                outputs: vec!["a".into(), "b".into()],
            }],
        }
    }

    #[test]
    fn empty_pools_give_without_examples() {
        let p = Packer::new(Renderer::default(), ActionText::default(), LengthBudget::whitespace(1024));
        let t = task(vec![], vec![]);
        let s = p.assemble(&t, &t.instances[0], Variant::Pacit, 1, 1, 3).unwrap();
        assert_eq!(s.sample_type, SampleType::WithoutExamples);
        assert_eq!(s.target, "a");
        assert_eq!(s.references, vec!["a", "b"]);
    }

    #[test]
    fn budget_admits_first_example_only() {
        // PACIT base prompt "Task Definition: Do it.\nEvaluation Instance\n- Input: q\n"
        //   = 4 + 2 + 3 words = 9.
        // Example block "Example n\n- Input: <5×w>\n- Output: o\n" = 2 + 7 + 3 = 12.
        // Budget 21 fits base + exactly one example.
        let p = Packer::new(Renderer::default(), ActionText::default(), LengthBudget::whitespace(21));
        let t = task(vec![ex(Tag::Positive, 5)], vec![ex(Tag::Negative, 5)]);
        for seed in 0..20 {
            let s = p.assemble(&t, &t.instances[0], Variant::Pacit, 1, 1, seed).unwrap();
            assert_eq!(s.example_tags.len(), 1);
            let expected = match s.example_tags[0] {
                Tag::Positive => SampleType::OnlyPositive,
                Tag::Negative => SampleType::OnlyNegative,
            };
            assert_eq!(s.sample_type, expected);
            assert_eq!(WhitespaceCounter.measure(&s.prompt).unwrap(), 21);
        }
    }

    #[test]
    fn oversized_base_truncates_input() {
        let p = Packer::new(Renderer::default(), ActionText::default(), LengthBudget::whitespace(12));
        let mut t = task(vec![], vec![]);
        t.instances[0].input = vec!["long"; 50].join(" ");
        let s = p.assemble(&t, &t.instances[0], Variant::ZeroShot, 0, 0, 0).unwrap();
        assert!(s.truncated);
        assert!(WhitespaceCounter.measure(&s.prompt).unwrap() <= 12);
        // scaffold is 8 words, so 4 input words survive
        assert_eq!(s.prompt.matches("long").count(), 4);
    }

    #[test]
    fn scaffold_larger_than_budget_errors() {
        let p = Packer::new(Renderer::default(), ActionText::default(), LengthBudget::whitespace(3));
        let t = task(vec![], vec![]);
        assert!(p.assemble(&t, &t.instances[0], Variant::Pacit, 1, 1, 0).is_err());
    }

    #[test]
    fn separated_pair_shares_draw() {
        let p = Packer::new(Renderer::default(), ActionText::default(), LengthBudget::whitespace(1024));
        let t = task(vec![ex(Tag::Positive, 2)], vec![ex(Tag::Negative, 3)]);
        let pair = p.assemble_separated(&t, &t.instances[0], 1, 1, 11).unwrap();
        assert_eq!(pair.len(), 2);
        assert_eq!(pair[0].variant, Variant::SeparatedClassification);
        assert_eq!(pair[1].variant, Variant::SeparatedAnswering);
        assert_eq!(pair[0].example_tags, pair[1].example_tags);
        assert_eq!(pair[0].example_tags.len(), 2);
        assert_eq!(pair[0].seed, pair[1].seed);
        assert!(pair[0].target.contains("example 2 is"));
        assert_eq!(pair[1].target, "a");
    }

    #[test]
    fn separated_without_survivors_emits_answering_only() {
        let p = Packer::new(Renderer::default(), ActionText::default(), LengthBudget::whitespace(12));
        let t = task(vec![ex(Tag::Positive, 30)], vec![]);
        let out = p.assemble_separated(&t, &t.instances[0], 1, 1, 0).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].variant, Variant::SeparatedAnswering);
    }

    #[test]
    fn relabeling_leaves_prompts_and_empty_samples() {
        let p = Packer::new(Renderer::default(), ActionText::default(), LengthBudget::whitespace(1024));
        let t = task(vec![ex(Tag::Positive, 2)], vec![ex(Tag::Negative, 2)]);
        let empty = task(vec![], vec![]);
        let a = p.assemble(&t, &t.instances[0], Variant::Pacit, 1, 1, 1).unwrap();
        let b = p.assemble(&empty, &empty.instances[0], Variant::Pacit, 1, 1, 1).unwrap();
        let out = p.randomize_labels(vec![a.clone(), b.clone()], 5).unwrap();
        assert_eq!(out[0].prompt, a.prompt);
        assert_eq!(out[0].example_tags, a.example_tags);
        assert_eq!(out[1], b);
        assert_eq!(out, p.randomize_labels(vec![a, b], 5).unwrap());
        let parsed = crate::outparse::parse_output(&out[0].target, 2);
        let expect: Vec<crate::outparse::ParsedLabel> = out[0].target_labels.iter().map(|&v| v.into()).collect();
        assert_eq!(parsed.labels, expect);
        assert_eq!(parsed.answer, "a");
    }

    #[test]
    fn stats_counting() {
        let p = Packer::new(Renderer::default(), ActionText::default(), LengthBudget::whitespace(1024));
        let full = task(vec![ex(Tag::Positive, 1)], vec![ex(Tag::Negative, 1)]);
        let empty = task(vec![], vec![]);
        let mut samples: Vec<PackedSample> = (0..9)
            .map(|i| p.assemble(&full, &full.instances[0], Variant::Pacit, 1, 1, i).unwrap())
            .collect();
        samples.push(p.assemble(&empty, &empty.instances[0], Variant::Pacit, 1, 1, 0).unwrap());
        let st = corpus_stats(&samples).unwrap();
        assert_eq!(st.type_proportions[&SampleType::Mixing], 0.9);
        assert_eq!(st.type_proportions[&SampleType::WithoutExamples], 0.1);
        assert_eq!(st.avg_examples_per_sample, 1.8);
        assert!(corpus_stats(&[]).is_err());
        assert!(render_stats_table(&st).contains("mixing"));
    }

    #[test]
    fn command_measure_round_trip() {
        let m = CommandMeasure::spawn(r#"while IFS= read -r l; do set -- $l; echo $#; done"#).unwrap();
        assert_eq!(m.measure("a b c").unwrap(), 3);
        assert_eq!(m.measure("one").unwrap(), 1);
        assert!(measure_from_spec("bogus").is_err());
    }
}
