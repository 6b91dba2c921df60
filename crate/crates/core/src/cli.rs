//! Command-line front end. Each subcommand is a thin layer over the library.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::corpus::{load_tasks, pool_stats, read_split_list, sample_split, to_superni_json, Split, Task};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, pearson, render_table, score_instance, EvalRecord, MetricReport, TOKENIZER_DESCRIPTION};
use crate::outparse::{OutputParser, ParsedOutput};
use crate::packer::{
    build_corpus, corpus_stats, read_jsonl, render_stats_table, write_jsonl, BuildOptions, CorpusVariant, LabelMode,
    PackedSample, Variant,
};
use crate::selfinstruct::{augment_tasks, build_seed_pool, run_generation, ChatBackend, HttpBackend, PlaybackBackend};
use crate::templater::Verdict;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const PARSED_FILE: &str = "parsed.jsonl";
pub const AUDIT_FILE: &str = "audit.jsonl";
pub const REJECTS_FILE: &str = "rejects.jsonl";
pub const GENERATION_SUMMARY: &str = "generation.json";

/// Exit code when warnings were escalated by `--strict`.
pub const EXIT_STRICT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "pacit", version, about = "Build, inspect, and evaluate classification-quiz instruction corpora")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Treat warnings as errors (exit code 2).
    #[arg(long, global = true)]
    pub strict: bool,
    /// Output directory; overrides the config file.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample splits and write packed corpora plus a manifest.
    Build(BuildArgs),
    /// Sample-type proportions and example counts of a corpus.
    Stats(StatsArgs),
    /// Score model generations against a corpus.
    Eval(EvalArgs),
    /// Generate positive/negative example pairs with a chat model.
    Generate(GenerateArgs),
    /// Pearson correlation between classification accuracy and ROUGE-L.
    Correlate(CorrelateArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub task_dir: Option<PathBuf>,
    #[arg(long)]
    pub train_split: Option<PathBuf>,
    #[arg(long)]
    pub held_out_split: Option<PathBuf>,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<CorpusVariant>,
    #[arg(long, value_parser = parse_label_mode)]
    pub label_mode: Option<LabelMode>,
    #[arg(long)]
    pub k_pos: Option<usize>,
    #[arg(long)]
    pub k_neg: Option<usize>,
    /// Comma-separated subset of train,held_in,held_out.
    #[arg(long, value_delimiter = ',', value_parser = parse_split)]
    pub splits: Option<Vec<Split>>,
    /// Drop the classification/answering stage headers from targets.
    #[arg(long)]
    pub no_stage_headers: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    pub corpus: PathBuf,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSONL of {"sample_id", "generation"}.
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub task_dir: Option<PathBuf>,
    /// Tasks to augment.
    #[arg(long)]
    pub task_split: Option<PathBuf>,
    /// Replay recorded completions instead of calling the endpoint.
    #[arg(long)]
    pub playback: Option<PathBuf>,
    #[arg(long)]
    pub max_requests: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// JSON array or JSONL of {"classification_accuracy", "rouge_l"} points.
    pub series: PathBuf,
}

fn parse_enum<T: for<'de> Deserialize<'de>>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_variant(s: &str) -> std::result::Result<CorpusVariant, String> {
    parse_enum(s)
}

fn parse_label_mode(s: &str) -> std::result::Result<LabelMode, String> {
    parse_enum(s)
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    parse_enum(s)
}

/// What a command produced besides its files.
#[derive(Debug, Default)]
pub struct Outcome {
    pub stdout: String,
    pub warnings: Vec<String>,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    }
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = d.clone();
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let mut cfg = load_config(cli)?;
    match &cli.command {
        Command::Build(a) => {
            if let Some(v) = &a.task_dir {
                cfg.task_dir = Some(v.clone());
            }
            if let Some(v) = &a.train_split {
                cfg.train_split = Some(v.clone());
            }
            if let Some(v) = &a.held_out_split {
                cfg.held_out_split = Some(v.clone());
            }
            if let Some(v) = a.variant {
                cfg.variant = v;
            }
            if let Some(v) = a.label_mode {
                cfg.label_mode = v;
            }
            if let Some(v) = a.k_pos {
                cfg.k_pos = v;
            }
            if let Some(v) = a.k_neg {
                cfg.k_neg = v;
            }
            if let Some(v) = &a.splits {
                cfg.splits = v.clone();
            }
            if a.no_stage_headers {
                cfg.template.stage_headers = false;
            }
            cmd_build(&cfg)
        }
        Command::Stats(a) => cmd_stats(&a.corpus, a.json),
        Command::Eval(a) => cmd_eval(&cfg, &a.predictions, &a.corpus),
        Command::Generate(a) => {
            if let Some(v) = &a.task_dir {
                cfg.task_dir = Some(v.clone());
            }
            if let Some(v) = &a.task_split {
                cfg.generate.task_split = Some(v.clone());
            }
            if let Some(v) = &a.playback {
                cfg.generate.playback = Some(v.clone());
            }
            if let Some(v) = a.max_requests {
                cfg.generation.max_requests = v;
            }
            cmd_generate(&cfg)
        }
        Command::Correlate(a) => cmd_correlate(&a.series),
    }
}

/// Parses `args`, runs, reports, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(out) => {
            print!("{}", out.stdout);
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            if cli.strict && !out.warnings.is_empty() {
                eprintln!("error: {} warning(s) escalated by --strict", out.warnings.len());
                EXIT_STRICT
            } else {
                0
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_text(path, &text)
}

fn load_split_tasks(task_dir: &Path, list: &Path) -> Result<Vec<Task>> {
    load_tasks(task_dir, &read_split_list(list)?)
}

pub fn cmd_build(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate_build()?;
    let seed = cfg.require_seed()?;
    let task_dir = cfg.task_dir()?;
    let wants = |s: Split| cfg.splits.contains(&s);

    let train_tasks = if wants(Split::Train) || wants(Split::HeldIn) {
        load_split_tasks(&task_dir, &cfg.train_split()?)?
    } else {
        Vec::new()
    };
    let held_out_tasks = if wants(Split::HeldOut) {
        load_split_tasks(&task_dir, &cfg.held_out_split()?)?
    } else {
        Vec::new()
    };
    let overlap: Vec<&str> = {
        let train_ids: BTreeSet<&str> = train_tasks.iter().map(|t| t.task_id.as_str()).collect();
        held_out_tasks
            .iter()
            .map(|t| t.task_id.as_str())
            .filter(|id| train_ids.contains(id))
            .collect()
    };
    if !overlap.is_empty() {
        return Err(Error::Validation(format!(
            "config.held_out_split: tasks also listed for training: {}",
            overlap.join(", ")
        )));
    }

    let mut split_cfg = cfg.split;
    split_cfg.seed = seed;
    let sample = sample_split(&train_tasks, &held_out_tasks, &split_cfg)?;
    let mut warnings = sample.warnings.clone();

    let packer = cfg.packer()?;
    let tasks: BTreeMap<String, &Task> = train_tasks
        .iter()
        .chain(&held_out_tasks)
        .map(|t| (t.task_id.clone(), t))
        .collect();
    let opts = BuildOptions {
        variant: cfg.variant,
        k_pos: cfg.k_pos,
        k_neg: cfg.k_neg,
        label_mode: cfg.label_mode,
        seed,
    };

    create_dir(&cfg.out_dir)?;
    let mut splits_json = serde_json::Map::new();
    let mut summary = String::new();
    for split in Split::ALL.into_iter().filter(|s| wants(*s)) {
        let samples = build_corpus(&packer, &tasks, sample.get(split), &opts)?;
        let dir = cfg.out_dir.join(split.as_str());
        create_dir(&dir)?;
        write_jsonl(&dir.join(CORPUS_FILE), &samples)?;

        let mut over_output = 0usize;
        for s in &samples {
            if packer.budget.length_fn.measure(&s.target)? > packer.budget.max_output_units {
                over_output += 1;
            }
        }
        if over_output > 0 {
            warnings.push(format!(
                "{}: {over_output} target(s) exceed max_output_units = {}",
                split.as_str(),
                packer.budget.max_output_units
            ));
        }
        let stats = if samples.is_empty() {
            warnings.push(format!("{}: corpus is empty", split.as_str()));
            None
        } else {
            let st = corpus_stats(&samples)?;
            if st.truncated_samples > 0 {
                warnings.push(format!(
                    "{}: {} sample(s) had the definition or input truncated to fit the budget",
                    split.as_str(),
                    st.truncated_samples
                ));
            }
            summary.push_str(&format!("[{}] {} samples\n", split.as_str(), samples.len()));
            summary.push_str(&render_stats_table(&st));
            Some(st)
        };
        splits_json.insert(
            split.as_str().into(),
            json!({
                "corpus": format!("{}/{}", split.as_str(), CORPUS_FILE),
                "n_samples": samples.len(),
                "n_instances": sample.instance_count(split),
                "targets_over_max_output_units": over_output,
                "stats": stats,
            }),
        );
    }

    let manifest = json!({
        "toolkit": "pacit",
        "toolkit_version": crate::VERSION,
        "config": cfg,
        "config_hash": cfg.hash(),
        "seed": seed,
        "template_version": packer.renderer.templates.version,
        "length_fn": packer.budget.length_fn.id(),
        "loss_normalization": cfg.normalization,
        "lambda": cfg.lambda,
        "rouge_tokenizer": TOKENIZER_DESCRIPTION,
        "task_pools": {
            "train": pool_stats(&train_tasks),
            "held_out": pool_stats(&held_out_tasks),
        },
        "splits": Value::Object(splits_json),
        "warnings": warnings,
    });
    write_json(&cfg.out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(Outcome { stdout: summary, warnings })
}

pub fn cmd_stats(corpus: &Path, as_json: bool) -> Result<Outcome> {
    let samples: Vec<PackedSample> = read_jsonl(corpus)?;
    if samples.is_empty() {
        return Err(Error::Validation(format!("{}: corpus is empty", corpus.display())));
    }
    let stats = corpus_stats(&samples)?;
    let stdout = if as_json {
        serde_json::to_string_pretty(&stats).expect("serializable") + "\n"
    } else {
        render_stats_table(&stats)
    };
    Ok(Outcome { stdout, warnings: Vec::new() })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub generation: String,
}

#[derive(Debug, Clone, Serialize)]
struct ParsedRecord<'a> {
    sample_id: &'a str,
    #[serde(flatten)]
    parsed: &'a ParsedOutput,
}

/// Parses and scores predictions against their corpus samples.
pub fn evaluate(parser: &OutputParser, corpus: &[PackedSample], predictions: &[Prediction]) -> Result<(MetricReport, Vec<EvalRecord>, Vec<String>)> {
    if predictions.is_empty() {
        return Err(Error::Validation("predictions file is empty".into()));
    }
    let by_id: BTreeMap<&str, &PackedSample> = corpus.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    let unmatched: Vec<&str> = predictions
        .iter()
        .map(|p| p.sample_id.as_str())
        .filter(|id| !by_id.contains_key(id))
        .collect();
    if !unmatched.is_empty() {
        return Err(Error::Validation(format!(
            "{} prediction(s) have no corpus sample: {}",
            unmatched.len(),
            unmatched.join(", ")
        )));
    }
    let mut seen = BTreeSet::new();
    for p in predictions {
        if !seen.insert(p.sample_id.as_str()) {
            return Err(Error::Validation(format!("duplicate prediction for {}", p.sample_id)));
        }
    }
    let mut warnings = Vec::new();
    let missing = corpus.iter().filter(|s| !seen.contains(s.sample_id.as_str())).count();
    if missing > 0 {
        warnings.push(format!("{missing} corpus sample(s) have no prediction"));
    }

    let mut records = Vec::with_capacity(predictions.len());
    for p in predictions {
        let sample = by_id[p.sample_id.as_str()];
        let quiz = sample.variant.has_quiz();
        let expected = if quiz { sample.example_tags.len() } else { 0 };
        let parsed = parser.parse(&p.generation, expected);
        let (rouge, truncated) = if sample.variant == Variant::SeparatedClassification {
            (None, false)
        } else {
            let (score, truncated) = score_instance(&sample.references, &parsed.answer)?;
            (Some(score), truncated)
        };
        let gold = if quiz {
            sample.example_tags.iter().map(|t| Verdict::from(*t)).collect()
        } else {
            Vec::new()
        };
        records.push(EvalRecord {
            task_id: sample.task_id.clone(),
            rouge,
            truncated,
            parsed,
            gold,
        });
    }
    let report = aggregate(&records)?;
    Ok((report, records, warnings))
}

pub fn cmd_eval(cfg: &RunConfig, predictions: &Path, corpus: &Path) -> Result<Outcome> {
    let preds: Vec<Prediction> = read_jsonl(predictions)?;
    let samples: Vec<PackedSample> = read_jsonl(corpus)?;
    let parser = OutputParser::new(cfg.renderer()?);
    let (report, records, warnings) = evaluate(&parser, &samples, &preds)?;

    create_dir(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join(REPORT_JSON), &report)?;
    let table = render_table(&report);
    write_text(&cfg.out_dir.join(REPORT_TXT), &table)?;
    let parsed: Vec<ParsedRecord> = preds
        .iter()
        .zip(&records)
        .map(|(p, r)| ParsedRecord { sample_id: &p.sample_id, parsed: &r.parsed })
        .collect();
    write_jsonl(&cfg.out_dir.join(PARSED_FILE), &parsed)?;
    Ok(Outcome { stdout: table, warnings })
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<Outcome> {
    let task_dir = cfg.task_dir()?;
    let list = match &cfg.generate.task_split {
        Some(p) if p.exists() => p.clone(),
        Some(p) => {
            return Err(Error::Validation(format!(
                "config.generate.task_split: {} does not exist",
                p.display()
            )))
        }
        None => cfg.train_split()?,
    };
    let mut gen_cfg = cfg.generation.clone();
    if let Some(s) = cfg.seed {
        gen_cfg.seed = s;
    }
    gen_cfg.validate()?;
    let renderer = cfg.renderer()?;
    let tasks = load_split_tasks(&task_dir, &list)?;
    let pool = build_seed_pool(&tasks, gen_cfg.seed, gen_cfg.seed_pool_size);
    let mut warnings = pool.warnings.clone();

    let backend: Box<dyn ChatBackend> = match &cfg.generate.playback {
        Some(p) => Box::new(PlaybackBackend::from_jsonl(p)?),
        None => Box::new(HttpBackend::from_config(&gen_cfg)?),
    };
    let run = run_generation(&tasks, &pool, &gen_cfg, backend.as_ref(), &renderer)?;

    create_dir(&cfg.out_dir)?;
    write_jsonl(&cfg.out_dir.join(AUDIT_FILE), &run.audit)?;
    write_jsonl(&cfg.out_dir.join(REJECTS_FILE), &run.rejects)?;
    let augmented = augment_tasks(&tasks, &run.pairs, cfg.generate.augment_mode);
    let tasks_dir = cfg.out_dir.join("tasks");
    create_dir(&tasks_dir)?;
    let mut names = String::new();
    for t in &augmented {
        write_json(&tasks_dir.join(format!("{}.json", t.task_id)), &to_superni_json(t))?;
        names.push_str(&t.task_id);
        names.push('\n');
    }
    write_text(&cfg.out_dir.join("tasks.txt"), &names)?;

    let collisions: usize = run.pairs.iter().map(|p| p.collisions).sum();
    let summary = json!({
        "config_hash": cfg.hash(),
        "seed": gen_cfg.seed,
        "model_name": gen_cfg.model_name,
        "requests_made": run.requests_made,
        "accepted_pairs": run.pairs.len(),
        "rejected_pairs": run.rejects.len(),
        "reject_rate": run.reject_rate(),
        "skipped_for_budget": run.skipped_for_budget,
        "seed_collisions": collisions,
        "augmented_tasks": augmented.len(),
        "fatal": run.fatal,
    });
    write_json(&cfg.out_dir.join(GENERATION_SUMMARY), &summary)?;

    if let Some(msg) = &run.fatal {
        return Err(Error::Generation(format!("aborted: {msg}")));
    }
    if run.skipped_for_budget > 0 {
        warnings.push(format!(
            "request budget of {} reached; {} pair(s) not attempted",
            gen_cfg.max_requests, run.skipped_for_budget
        ));
    }
    if collisions > 0 {
        warnings.push(format!("{collisions} generated input(s) duplicate a seed or pool example"));
    }
    let stdout = format!(
        "requests: {}\naccepted: {}\nrejected: {}\nreject rate: {:.4}\n",
        run.requests_made,
        run.pairs.len(),
        run.rejects.len(),
        run.reject_rate()
    );
    Ok(Outcome { stdout, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct SeriesPoint {
    pub classification_accuracy: f64,
    #[serde(alias = "overall")]
    pub rouge_l: f64,
}

/// Reads a JSON array or JSONL of points.
pub fn read_series(path: &Path) -> Result<Vec<SeriesPoint>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        return serde_json::from_str(trimmed)
            .map_err(|e| Error::parse(path.display().to_string(), "<array>", e.to_string()));
    }
    read_jsonl(path)
}

pub fn cmd_correlate(series: &Path) -> Result<Outcome> {
    let points = read_series(series)?;
    let xs: Vec<f64> = points.iter().map(|p| p.classification_accuracy).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.rouge_l).collect();
    let r = pearson(&xs, &ys)?;
    Ok(Outcome {
        stdout: format!("{}\n", json!({ "n": points.len(), "pearson_r": r })),
        warnings: Vec::new(),
    })
}
