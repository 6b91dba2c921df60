//! SuperNI-format task ingestion and per-task instance sampling.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::seed::{stream_rng, STREAM_SPLIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub input: String,
    pub output: String,
    pub tag: Tag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
}

impl LabeledExample {
    /// Fails when input or output is blank.
    pub fn new(
        input: impl Into<String>,
        output: impl Into<String>,
        tag: Tag,
        explanation: Option<String>,
    ) -> Result<Self> {
        let input = input.into();
        let output = output.into();
        if input.trim().is_empty() {
            return Err(Error::Validation("example input is empty".into()));
        }
        if output.trim().is_empty() {
            return Err(Error::Validation("example output is empty".into()));
        }
        let explanation = explanation.filter(|e| !e.trim().is_empty());
        Ok(LabeledExample {
            input,
            output,
            tag,
            explanation,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub input: String,
    /// Reference outputs, never empty.
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub definition: String,
    pub positive_pool: Vec<LabeledExample>,
    pub negative_pool: Vec<LabeledExample>,
    pub instances: Vec<TaskInstance>,
}

impl Task {
    /// Checks the task-level invariants: non-empty definition, pool tags
    /// matching their pool, unique instance ids with at least one reference.
    pub fn validate(&self) -> Result<()> {
        if self.definition.trim().is_empty() {
            return Err(Error::Validation(format!(
                "task {}: empty Definition",
                self.task_id
            )));
        }
        if let Some(e) = self.positive_pool.iter().find(|e| e.tag != Tag::Positive) {
            return Err(Error::Validation(format!(
                "task {}: negative example {:?} in positive pool",
                self.task_id, e.input
            )));
        }
        if let Some(e) = self.negative_pool.iter().find(|e| e.tag != Tag::Negative) {
            return Err(Error::Validation(format!(
                "task {}: positive example {:?} in negative pool",
                self.task_id, e.input
            )));
        }
        let mut seen = HashSet::new();
        for inst in &self.instances {
            if !seen.insert(inst.id.as_str()) {
                return Err(Error::Validation(format!(
                    "task {}: duplicate instance id {}",
                    self.task_id, inst.id
                )));
            }
            if inst.outputs.is_empty() {
                return Err(Error::Validation(format!(
                    "task {}: instance {} has no reference output",
                    self.task_id, inst.id
                )));
            }
        }
        Ok(())
    }
}

/// Parses a SuperNI task document. Unknown top-level keys are ignored.
pub fn parse_task(task_id: &str, text: &str) -> Result<Task> {
    let ctx = format!("task {task_id}");
    let doc: Value =
        serde_json::from_str(text).map_err(|e| Error::parse(&ctx, "<document>", e.to_string()))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::parse(&ctx, "<document>", "expected a JSON object"))?;

    let definition = match obj.get("Definition") {
        None => {
            return Err(Error::Validation(format!(
                "task {task_id}: missing Definition"
            )))
        }
        Some(Value::String(s)) => s.clone(),
        Some(Value::Array(parts)) => {
            let mut out = Vec::with_capacity(parts.len());
            for (i, p) in parts.iter().enumerate() {
                out.push(
                    p.as_str()
                        .ok_or_else(|| {
                            Error::parse(&ctx, format!("Definition[{i}]"), "expected a string")
                        })?
                        .to_string(),
                );
            }
            out.join(" ")
        }
        Some(_) => {
            return Err(Error::parse(
                &ctx,
                "Definition",
                "expected a string or an array of strings",
            ))
        }
    };

    let positive_pool = parse_examples(&ctx, obj.get("Positive Examples"), "Positive Examples", Tag::Positive)?;
    let negative_pool = parse_examples(&ctx, obj.get("Negative Examples"), "Negative Examples", Tag::Negative)?;

    let raw_instances = obj
        .get("Instances")
        .ok_or_else(|| Error::parse(&ctx, "Instances", "missing required field"))?
        .as_array()
        .ok_or_else(|| Error::parse(&ctx, "Instances", "expected an array"))?;
    let mut instances = Vec::with_capacity(raw_instances.len());
    for (i, raw) in raw_instances.iter().enumerate() {
        let field = |name: &str| format!("Instances[{i}].{name}");
        let id = raw
            .get("id")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::parse(&ctx, field("id"), "expected a string"))?;
        let input = raw
            .get("input")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::parse(&ctx, field("input"), "expected a string"))?;
        let outputs = match raw.get("output") {
            Some(Value::Array(xs)) => xs
                .iter()
                .enumerate()
                .map(|(j, x)| {
                    x.as_str().map(str::to_string).ok_or_else(|| {
                        Error::parse(&ctx, format!("Instances[{i}].output[{j}]"), "expected a string")
                    })
                })
                .collect::<Result<Vec<_>>>()?,
            Some(Value::String(s)) => vec![s.clone()],
            _ => {
                return Err(Error::parse(
                    &ctx,
                    field("output"),
                    "expected an array of strings",
                ))
            }
        };
        instances.push(TaskInstance {
            id: id.to_string(),
            input: input.to_string(),
            outputs,
        });
    }

    let task = Task {
        task_id: task_id.to_string(),
        definition,
        positive_pool,
        negative_pool,
        instances,
    };
    task.validate()?;
    Ok(task)
}

fn parse_examples(ctx: &str, raw: Option<&Value>, name: &str, tag: Tag) -> Result<Vec<LabeledExample>> {
    let arr = raw
        .ok_or_else(|| Error::parse(ctx, name, "missing required field"))?
        .as_array()
        .ok_or_else(|| Error::parse(ctx, name, "expected an array"))?;
    let mut out = Vec::with_capacity(arr.len());
    for (i, item) in arr.iter().enumerate() {
        // A bare "-" marks an intentionally empty pool in some SuperNI files.
        if item.as_str().is_some_and(|s| s.trim() == "-") {
            continue;
        }
        let field = |f: &str| format!("{name}[{i}].{f}");
        let get = |f: &str| -> Result<String> {
            item.get(f)
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| Error::parse(ctx, field(f), "expected a string"))
        };
        let input = get("input")?;
        let output = get("output")?;
        let explanation = item
            .get("explanation")
            .and_then(Value::as_str)
            .map(str::to_string);
        let ex = LabeledExample::new(input, output, tag, explanation)
            .map_err(|e| Error::parse(ctx, format!("{name}[{i}]"), e.to_string()))?;
        out.push(ex);
    }
    Ok(out)
}

/// Serializes a task back into the SuperNI document layout.
pub fn to_superni_json(task: &Task) -> Value {
    let examples = |pool: &[LabeledExample]| -> Vec<Value> {
        pool.iter()
            .map(|e| {
                serde_json::json!({
                    "input": e.input,
                    "output": e.output,
                    "explanation": e.explanation.clone().unwrap_or_default(),
                })
            })
            .collect()
    };
    serde_json::json!({
        "Definition": [task.definition],
        "Positive Examples": examples(&task.positive_pool),
        "Negative Examples": examples(&task.negative_pool),
        "Instances": task.instances.iter().map(|i| serde_json::json!({
            "id": i.id,
            "input": i.input,
            "output": i.outputs,
        })).collect::<Vec<_>>(),
    })
}

/// Loads one task file; the task id is the file stem.
pub fn load_task(path: &Path) -> Result<Task> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let task_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Validation(format!("{}: bad file name", path.display())))?;
    parse_task(task_id, &text)
}

/// Reads a newline-delimited list of task names. Blank lines and `#` comments
/// are skipped; a trailing `.json` is stripped.
pub fn read_split_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.strip_suffix(".json").unwrap_or(l).to_string())
        .collect())
}

/// Loads the named tasks from `task_dir` in parallel. Output order follows `names`.
pub fn load_tasks(task_dir: &Path, names: &[String]) -> Result<Vec<Task>> {
    names
        .par_iter()
        .map(|name| load_task(&task_path(task_dir, name)))
        .collect()
}

fn task_path(task_dir: &Path, name: &str) -> PathBuf {
    task_dir.join(format!("{name}.json"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_instances_per_task: usize,
    pub held_in_instances_per_task: usize,
    pub held_out_instances_per_task: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_instances_per_task: 60,
            held_in_instances_per_task: 15,
            held_out_instances_per_task: 100,
            seed: 0,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("train_instances_per_task", self.train_instances_per_task),
            ("held_in_instances_per_task", self.held_in_instances_per_task),
            ("held_out_instances_per_task", self.held_out_instances_per_task),
        ] {
            if v == 0 {
                return Err(Error::Validation(format!("split.{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    HeldIn,
    HeldOut,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::HeldIn, Split::HeldOut];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::HeldIn => "held_in",
            Split::HeldOut => "held_out",
        }
    }
}

/// Instances drawn per split, keyed by task id (sorted for deterministic iteration).
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SplitSample {
    pub train: BTreeMap<String, Vec<TaskInstance>>,
    pub held_in: BTreeMap<String, Vec<TaskInstance>>,
    pub held_out: BTreeMap<String, Vec<TaskInstance>>,
    pub warnings: Vec<String>,
}

impl SplitSample {
    pub fn get(&self, split: Split) -> &BTreeMap<String, Vec<TaskInstance>> {
        match split {
            Split::Train => &self.train,
            Split::HeldIn => &self.held_in,
            Split::HeldOut => &self.held_out,
        }
    }

    pub fn instance_count(&self, split: Split) -> usize {
        self.get(split).values().map(Vec::len).sum()
    }
}

/// Draws train and held-in instances from `train_tasks` (disjoint per task) and
/// held-out instances from `held_out_tasks`. Counts are capped at what each task
/// has; held-in yields to train when both cannot be satisfied.
pub fn sample_split(train_tasks: &[Task], held_out_tasks: &[Task], cfg: &SplitConfig) -> Result<SplitSample> {
    cfg.validate()?;
    let mut out = SplitSample::default();

    for task in train_tasks {
        let order = shuffled_indices(task, cfg.seed);
        let available = order.len();
        let n_train = cfg.train_instances_per_task.min(available);
        if n_train < cfg.train_instances_per_task {
            out.warnings.push(format!(
                "task {}: requested {} train instances, only {} available",
                task.task_id, cfg.train_instances_per_task, available
            ));
        }
        let n_held_in = cfg.held_in_instances_per_task.min(available - n_train);
        if n_held_in < cfg.held_in_instances_per_task {
            out.warnings.push(format!(
                "task {}: held-in shrunk from {} to {} instances to stay disjoint from train",
                task.task_id, cfg.held_in_instances_per_task, n_held_in
            ));
        }
        let pick = |ix: &[usize]| ix.iter().map(|&i| task.instances[i].clone()).collect::<Vec<_>>();
        out.train.insert(task.task_id.clone(), pick(&order[..n_train]));
        out.held_in
            .insert(task.task_id.clone(), pick(&order[n_train..n_train + n_held_in]));
    }

    for task in held_out_tasks {
        let order = shuffled_indices(task, cfg.seed);
        let n = cfg.held_out_instances_per_task.min(order.len());
        if n < cfg.held_out_instances_per_task {
            out.warnings.push(format!(
                "task {}: requested {} held-out instances, only {} available",
                task.task_id,
                cfg.held_out_instances_per_task,
                order.len()
            ));
        }
        out.held_out.insert(
            task.task_id.clone(),
            order[..n].iter().map(|&i| task.instances[i].clone()).collect(),
        );
    }
    Ok(out)
}

fn shuffled_indices(task: &Task, seed: u64) -> Vec<usize> {
    let mut rng = stream_rng(seed, STREAM_SPLIT, &[&task.task_id]);
    let mut order: Vec<usize> = (0..task.instances.len()).collect();
    order.shuffle(&mut rng);
    order
}

/// Pool-level statistics, averaged per task (not per packed sample).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskPoolStats {
    pub n_tasks: usize,
    pub n_instances: usize,
    pub avg_positive_per_task: f64,
    pub avg_negative_per_task: f64,
}

pub fn pool_stats(tasks: &[Task]) -> TaskPoolStats {
    let n = tasks.len().max(1) as f64;
    TaskPoolStats {
        n_tasks: tasks.len(),
        n_instances: tasks.iter().map(|t| t.instances.len()).sum(),
        avg_positive_per_task: tasks.iter().map(|t| t.positive_pool.len()).sum::<usize>() as f64 / n,
        avg_negative_per_task: tasks.iter().map(|t| t.negative_pool.len()).sum::<usize>() as f64 / n,
    }
}
