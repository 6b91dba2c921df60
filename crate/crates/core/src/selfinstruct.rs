//! Synthetic positive/negative example generation through a chat-completion
//! service.
//!
//! Each (task, pair index) job renders a prompt from four seed demonstrations,
//! sends it, and parses the completion into one tagged pair. Every request
//! leaves exactly one audit record. Backends are pluggable; the playback
//! backend replays recorded completions keyed by prompt hash so whole runs
//! are reproducible offline.

use std::collections::{HashMap, HashSet, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{LazyLock, Mutex};
use std::time::Duration;

use rand::seq::{IndexedRandom, SliceRandom};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledExample, Tag, Task};
use crate::error::{Error, Result};
use crate::seed::{sha256_hex, stream_rng, STREAM_DEMOS};
use crate::templater::{Renderer, SeedPair, SELF_INSTRUCT_DEMOS};

pub const DEFAULT_POOL_SIZE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub model_name: String,
    pub temperature: f64,
    /// Extra attempts after the first.
    pub max_retries: u32,
    pub request_timeout_secs: u64,
    pub concurrency_limit: usize,
    pub seed: u64,
    /// Hard cap on requests per run, retries included.
    pub max_requests: usize,
    pub api_key_env: String,
    pub backoff_base_ms: u64,
    pub pairs_per_task: usize,
    pub seed_pool_size: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model_name: "gpt-3.5-turbo-0613".into(),
            temperature: 0.7,
            max_retries: 3,
            request_timeout_secs: 60,
            concurrency_limit: 4,
            seed: 0,
            max_requests: 1000,
            api_key_env: "OPENAI_API_KEY".into(),
            backoff_base_ms: 500,
            pairs_per_task: 1,
            seed_pool_size: DEFAULT_POOL_SIZE,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::Validation("generation.temperature must be >= 0".into()));
        }
        if self.concurrency_limit == 0 {
            return Err(Error::Validation("generation.concurrency_limit must be >= 1".into()));
        }
        if self.pairs_per_task == 0 {
            return Err(Error::Validation("generation.pairs_per_task must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedPool {
    pub pairs: Vec<SeedPair>,
    pub warnings: Vec<String>,
}

/// One positive/negative pair from each of `size` distinct tasks that have
/// both kinds of example.
pub fn build_seed_pool(tasks: &[Task], seed: u64, size: usize) -> SeedPool {
    let mut eligible: Vec<&Task> = tasks
        .iter()
        .filter(|t| !t.positive_pool.is_empty() && !t.negative_pool.is_empty())
        .collect();
    eligible.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    let mut rng = stream_rng(seed, STREAM_DEMOS, &["pool"]);
    eligible.shuffle(&mut rng);
    let mut warnings = Vec::new();
    if eligible.len() < size {
        warnings.push(format!(
            "only {} tasks have both positive and negative examples; seed pool has {} of {size} pairs",
            eligible.len(),
            eligible.len()
        ));
    }
    let pairs = eligible
        .into_iter()
        .take(size)
        .map(|t| SeedPair {
            task_id: t.task_id.clone(),
            task_def: t.definition.clone(),
            positive: t.positive_pool.choose(&mut rng).expect("non-empty").clone(),
            negative: t.negative_pool.choose(&mut rng).expect("non-empty").clone(),
        })
        .collect();
    SeedPool { pairs, warnings }
}

static HEADING: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?im)^[ \t*#-]*(positive|negative)\s+example\b[^\n]*$").unwrap()
});
static FIELD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?im)^[ \t*-]*(input|output|explanation)[ \t*]*:[ \t]?").unwrap());

fn parse_block(block: &str, tag: Tag) -> Result<LabeledExample> {
    let section = match tag {
        Tag::Positive => "Positive Example",
        Tag::Negative => "Negative Example",
    };
    let marks: Vec<(String, usize, usize)> = FIELD
        .captures_iter(block)
        .map(|c| {
            let m = c.get(0).unwrap();
            (c[1].to_ascii_lowercase(), m.start(), m.end())
        })
        .collect();
    let field = |name: &str| -> Option<String> {
        let i = marks.iter().position(|(n, _, _)| n == name)?;
        let end = marks.get(i + 1).map_or(block.len(), |m| m.1);
        Some(block[marks[i].2..end].trim().to_string())
    };
    let input = field("input").filter(|s| !s.is_empty());
    let output = field("output").filter(|s| !s.is_empty());
    match (input, output) {
        (Some(i), Some(o)) => LabeledExample::new(i, o, tag, field("explanation")),
        (None, _) => Err(Error::parse("generated pair", section, "missing or empty Input")),
        (_, None) => Err(Error::parse("generated pair", section, "missing or empty Output")),
    }
}

/// Extracts the first positive and the first negative example block.
/// Tags come from the headings, not from block order.
pub fn parse_generated_pair(completion: &str) -> Result<(LabeledExample, LabeledExample)> {
    let heads: Vec<(Tag, usize, usize)> = HEADING
        .captures_iter(completion)
        .map(|c| {
            let m = c.get(0).unwrap();
            let tag = if c[1].eq_ignore_ascii_case("positive") {
                Tag::Positive
            } else {
                Tag::Negative
            };
            (tag, m.start(), m.end())
        })
        .collect();
    let block = |tag: Tag| -> Result<&str> {
        let i = heads.iter().position(|h| h.0 == tag).ok_or_else(|| {
            let name = if tag == Tag::Positive { "Positive Example" } else { "Negative Example" };
            Error::parse("generated pair", name, "heading not found")
        })?;
        let end = heads.get(i + 1).map_or(completion.len(), |h| h.1);
        Ok(&completion[heads[i].2..end])
    };
    let pos = parse_block(block(Tag::Positive)?, Tag::Positive)?;
    let neg = parse_block(block(Tag::Negative)?, Tag::Negative)?;
    Ok((pos, neg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn single_user(model: &str, prompt: &str, temperature: f64) -> Self {
        ChatRequest {
            model: model.to_string(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: prompt.to_string(),
            }],
            temperature,
        }
    }

    pub fn prompt(&self) -> &str {
        self.messages.first().map_or("", |m| m.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendError {
    /// Worth retrying: timeouts, connection failures, 429, 5xx.
    Transient(String),
    /// Auth failures, bad requests, missing recordings.
    Fatal(String),
}

impl std::fmt::Display for BackendError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendError::Transient(m) => write!(f, "transient: {m}"),
            BackendError::Fatal(m) => write!(f, "fatal: {m}"),
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<String, BackendError>;
}

/// OpenAI-compatible chat-completions endpoint.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

impl HttpBackend {
    /// Reads the API key from `cfg.api_key_env`; an unset variable sends no auth header.
    pub fn from_config(cfg: &GenerationConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.request_timeout_secs))
            .build()
            .map_err(|e| Error::Generation(format!("building HTTP client: {e}")))?;
        Ok(HttpBackend {
            client,
            endpoint: cfg.endpoint.clone(),
            api_key: std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty()),
        })
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<String, BackendError> {
        let mut req = self.client.post(&self.endpoint).json(request);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| BackendError::Transient(format!("{}: {e}", self.endpoint)))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            let msg = format!("{}: HTTP {} {}", self.endpoint, status.as_u16(), body.trim());
            return Err(if status.as_u16() == 429 || status.is_server_error() {
                BackendError::Transient(msg)
            } else {
                BackendError::Fatal(msg)
            });
        }
        let parsed: WireResponse = resp
            .json()
            .map_err(|e| BackendError::Transient(format!("{}: bad response body: {e}", self.endpoint)))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Transient(format!("{}: response has no choices", self.endpoint)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaybackRecord {
    pub prompt_hash: String,
    pub completion: String,
}

/// Replays recorded completions. Repeated requests for the same prompt
/// consume the recordings in file order; the last one is then repeated.
pub struct PlaybackBackend {
    queues: Mutex<HashMap<String, VecDeque<String>>>,
}

impl PlaybackBackend {
    pub fn new(records: impl IntoIterator<Item = PlaybackRecord>) -> Self {
        let mut queues: HashMap<String, VecDeque<String>> = HashMap::new();
        for r in records {
            queues.entry(r.prompt_hash).or_default().push_back(r.completion);
        }
        PlaybackBackend {
            queues: Mutex::new(queues),
        }
    }

    pub fn from_jsonl(path: &Path) -> Result<Self> {
        Ok(Self::new(crate::packer::read_jsonl::<PlaybackRecord>(path)?))
    }
}

impl ChatBackend for PlaybackBackend {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<String, BackendError> {
        let hash = prompt_hash(request.prompt());
        let mut q = self.queues.lock().unwrap_or_else(|e| e.into_inner());
        q.get_mut(&hash)
            .and_then(|v| if v.len() > 1 { v.pop_front() } else { v.front().cloned() })
            .ok_or_else(|| BackendError::Fatal(format!("playback: no recorded completion for prompt {hash}")))
    }
}

pub fn prompt_hash(prompt: &str) -> String {
    sha256_hex(prompt.as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditStatus {
    Success,
    Reject,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub task_id: String,
    pub pair_index: usize,
    pub attempt: u32,
    pub prompt_hash: String,
    pub status: AuditStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub completion: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectRecord {
    pub task_id: String,
    pub pair_index: usize,
    pub attempts: u32,
    pub reason: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub last_completion: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedPair {
    pub task_id: String,
    pub pair_index: usize,
    pub positive: LabeledExample,
    pub negative: LabeledExample,
    /// Inputs that exactly match an existing example of the task or the seed pool.
    pub collisions: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GenerationRun {
    pub pairs: Vec<GeneratedPair>,
    pub audit: Vec<AuditRecord>,
    pub rejects: Vec<RejectRecord>,
    pub requests_made: usize,
    /// Jobs never attempted because the request cap was reached.
    pub skipped_for_budget: usize,
    pub fatal: Option<String>,
}

impl GenerationRun {
    pub fn reject_rate(&self) -> f64 {
        let done = self.pairs.len() + self.rejects.len();
        if done == 0 {
            0.0
        } else {
            self.rejects.len() as f64 / done as f64
        }
    }
}

/// Picks the four demonstrations for one job, preferring other tasks.
pub fn select_demos(pool: &SeedPool, task_id: &str, pair_index: usize, seed: u64) -> Result<Vec<SeedPair>> {
    let mut rng = stream_rng(seed, STREAM_DEMOS, &[task_id, &pair_index.to_string()]);
    let others: Vec<&SeedPair> = pool.pairs.iter().filter(|p| p.task_id != task_id).collect();
    let candidates: Vec<&SeedPair> = if others.len() >= SELF_INSTRUCT_DEMOS {
        others
    } else {
        pool.pairs.iter().collect()
    };
    if candidates.len() < SELF_INSTRUCT_DEMOS {
        return Err(Error::Generation(format!(
            "seed pool has {} pairs; {SELF_INSTRUCT_DEMOS} demonstrations are needed",
            candidates.len()
        )));
    }
    Ok(candidates
        .choose_multiple(&mut rng, SELF_INSTRUCT_DEMOS)
        .map(|p| (*p).clone())
        .collect())
}

struct Shared<'a> {
    cfg: &'a GenerationConfig,
    backend: &'a dyn ChatBackend,
    requests: AtomicUsize,
    stop: AtomicBool,
}

enum JobOutcome {
    Pair(GeneratedPair),
    Reject(RejectRecord),
    Budget,
    Fatal(String),
}

fn run_job(
    shared: &Shared<'_>,
    task: &Task,
    pair_index: usize,
    prompt: &str,
    known_inputs: &HashSet<&str>,
    audit: &mut Vec<AuditRecord>,
) -> JobOutcome {
    let cfg = shared.cfg;
    let request = ChatRequest::single_user(&cfg.model_name, prompt, cfg.temperature);
    let hash = prompt_hash(prompt);
    let mut last_completion = None;
    let mut last_reason = String::new();
    let mut attempts = 0u32;
    for attempt in 0..=cfg.max_retries {
        if shared.stop.load(Ordering::SeqCst) {
            break;
        }
        if shared.requests.fetch_add(1, Ordering::SeqCst) >= cfg.max_requests {
            shared.requests.fetch_sub(1, Ordering::SeqCst);
            if attempts == 0 {
                return JobOutcome::Budget;
            }
            last_reason = format!("request cap reached after {attempts} attempts; last: {last_reason}");
            break;
        }
        attempts += 1;
        let mut record = AuditRecord {
            task_id: task.task_id.clone(),
            pair_index,
            attempt,
            prompt_hash: hash.clone(),
            status: AuditStatus::Error,
            completion: None,
            error: None,
        };
        match shared.backend.complete(&request) {
            Ok(text) => match parse_generated_pair(&text) {
                Ok((positive, negative)) => {
                    record.status = AuditStatus::Success;
                    record.completion = Some(text);
                    audit.push(record);
                    let collisions = [&positive.input, &negative.input]
                        .iter()
                        .filter(|i| known_inputs.contains(i.as_str()))
                        .count();
                    return JobOutcome::Pair(GeneratedPair {
                        task_id: task.task_id.clone(),
                        pair_index,
                        positive,
                        negative,
                        collisions,
                    });
                }
                Err(e) => {
                    record.status = AuditStatus::Reject;
                    record.error = Some(e.to_string());
                    record.completion = Some(text.clone());
                    last_completion = Some(text);
                    last_reason = e.to_string();
                    audit.push(record);
                }
            },
            Err(BackendError::Fatal(msg)) => {
                record.error = Some(msg.clone());
                audit.push(record);
                return JobOutcome::Fatal(msg);
            }
            Err(BackendError::Transient(msg)) => {
                record.error = Some(msg.clone());
                audit.push(record);
                last_reason = msg;
                if attempt < cfg.max_retries && cfg.backoff_base_ms > 0 {
                    let delay = cfg.backoff_base_ms.saturating_mul(1u64 << attempt.min(16));
                    std::thread::sleep(Duration::from_millis(delay));
                }
            }
        }
    }
    JobOutcome::Reject(RejectRecord {
        task_id: task.task_id.clone(),
        pair_index,
        attempts,
        reason: last_reason,
        last_completion,
    })
}

/// Generates `cfg.pairs_per_task` pairs for every task with up to
/// `cfg.concurrency_limit` requests in flight. Output vectors are sorted by
/// (task id, pair index, attempt) regardless of completion order.
pub fn run_generation(
    tasks: &[Task],
    pool: &SeedPool,
    cfg: &GenerationConfig,
    backend: &dyn ChatBackend,
    renderer: &Renderer,
) -> Result<GenerationRun> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    for task in tasks {
        for j in 0..cfg.pairs_per_task {
            let demos = select_demos(pool, &task.task_id, j, cfg.seed)?;
            let prompt = renderer.render_selfinstruct_prompt(&demos, &task.definition)?;
            jobs.push((task, j, prompt));
        }
    }
    let pool_inputs: Vec<&str> = pool
        .pairs
        .iter()
        .flat_map(|p| [p.positive.input.as_str(), p.negative.input.as_str()])
        .collect();

    let shared = Shared {
        cfg,
        backend,
        requests: AtomicUsize::new(0),
        stop: AtomicBool::new(false),
    };
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(JobOutcome, Vec<AuditRecord>)>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..cfg.concurrency_limit.min(jobs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((task, j, prompt)) = jobs.get(i) else { break };
                let mut known: HashSet<&str> = pool_inputs.iter().copied().collect();
                known.extend(task.positive_pool.iter().chain(&task.negative_pool).map(|e| e.input.as_str()));
                let mut audit = Vec::new();
                let outcome = if shared.stop.load(Ordering::SeqCst) {
                    JobOutcome::Budget
                } else {
                    run_job(&shared, task, *j, prompt, &known, &mut audit)
                };
                if matches!(outcome, JobOutcome::Fatal(_)) {
                    shared.stop.store(true, Ordering::SeqCst);
                }
                results.lock().unwrap_or_else(|e| e.into_inner()).push((outcome, audit));
            });
        }
    });

    let mut run = GenerationRun {
        requests_made: shared.requests.load(Ordering::SeqCst),
        ..Default::default()
    };
    for (outcome, audit) in results.into_inner().unwrap_or_else(|e| e.into_inner()) {
        run.audit.extend(audit);
        match outcome {
            JobOutcome::Pair(p) => run.pairs.push(p),
            JobOutcome::Reject(r) => run.rejects.push(r),
            JobOutcome::Budget => run.skipped_for_budget += 1,
            JobOutcome::Fatal(msg) => {
                if run.fatal.is_none() {
                    run.fatal = Some(msg);
                }
            }
        }
    }
    run.pairs.sort_by(|a, b| (&a.task_id, a.pair_index).cmp(&(&b.task_id, b.pair_index)));
    run.rejects.sort_by(|a, b| (&a.task_id, a.pair_index).cmp(&(&b.task_id, b.pair_index)));
    run.audit
        .sort_by(|a, b| (&a.task_id, a.pair_index, a.attempt).cmp(&(&b.task_id, b.pair_index, b.attempt)));
    Ok(run)
}

/// Convenience wrapper for a single pair.
pub fn generate_pair(
    task: &Task,
    pool: &SeedPool,
    cfg: &GenerationConfig,
    backend: &dyn ChatBackend,
    renderer: &Renderer,
) -> Result<(LabeledExample, LabeledExample)> {
    let cfg = GenerationConfig {
        pairs_per_task: 1,
        concurrency_limit: 1,
        ..cfg.clone()
    };
    let run = run_generation(std::slice::from_ref(task), pool, &cfg, backend, renderer)?;
    if let Some(msg) = run.fatal {
        return Err(Error::Generation(msg));
    }
    match (run.pairs.into_iter().next(), run.rejects.into_iter().next()) {
        (Some(p), _) => Ok((p.positive, p.negative)),
        (None, Some(r)) => Err(Error::Generation(format!("rejected after {} attempts: {}", r.attempts, r.reason))),
        (None, None) => Err(Error::Generation("request cap reached before any attempt".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    /// Generated examples replace the task's own pools.
    #[default]
    Replace,
    Append,
}

/// Applies generated pairs to their tasks. Tasks without a generated pair
/// are dropped in replace mode.
pub fn augment_tasks(tasks: &[Task], pairs: &[GeneratedPair], mode: AugmentMode) -> Vec<Task> {
    tasks
        .iter()
        .filter_map(|t| {
            let mine: Vec<&GeneratedPair> = pairs.iter().filter(|p| p.task_id == t.task_id).collect();
            let mut out = t.clone();
            match mode {
                AugmentMode::Replace => {
                    if mine.is_empty() {
                        return None;
                    }
                    out.positive_pool = mine.iter().map(|p| p.positive.clone()).collect();
                    out.negative_pool = mine.iter().map(|p| p.negative.clone()).collect();
                }
                AugmentMode::Append => {
                    out.positive_pool.extend(mine.iter().map(|p| p.positive.clone()));
                    out.negative_pool.extend(mine.iter().map(|p| p.negative.clone()));
                }
            }
            Some(out)
        })
        .collect()
}
