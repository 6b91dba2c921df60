//! Run configuration: one TOML document, overridable from the command line.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{Split, SplitConfig};
use crate::error::{Error, Result};
use crate::loss::Normalization;
use crate::packer::{measure_from_spec, CorpusVariant, LabelMode, LengthBudget, Packer};
use crate::selfinstruct::{AugmentMode, GenerationConfig};
use crate::templater::{ActionText, Renderer, Templates, DEFAULT_ACTION, DEFAULT_MAX_EXAMPLES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    pub max_input_units: usize,
    pub max_output_units: usize,
    /// `whitespace` or `command:<shell command>`.
    pub length_fn: String,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        BudgetConfig {
            max_input_units: 1024,
            max_output_units: 128,
            length_fn: "whitespace".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateConfig {
    /// Alternative scaffold catalog; the builtin one when unset.
    pub catalog: Option<PathBuf>,
    pub stage_headers: bool,
    pub action: String,
    pub max_examples: usize,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        TemplateConfig {
            catalog: None,
            stage_headers: true,
            action: DEFAULT_ACTION.into(),
            max_examples: DEFAULT_MAX_EXAMPLES,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateOptions {
    /// Recorded completions to replay instead of calling the endpoint.
    pub playback: Option<PathBuf>,
    pub augment_mode: AugmentMode,
    /// Tasks to augment; defaults to `train_split`.
    pub task_split: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task_dir: Option<PathBuf>,
    pub train_split: Option<PathBuf>,
    pub held_out_split: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub variant: CorpusVariant,
    pub splits: Vec<Split>,
    pub k_pos: usize,
    pub k_neg: usize,
    pub lambda: f64,
    pub label_mode: LabelMode,
    pub normalization: Normalization,
    pub split: SplitConfig,
    pub budget: BudgetConfig,
    pub template: TemplateConfig,
    pub generation: GenerationConfig,
    pub generate: GenerateOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task_dir: None,
            train_split: None,
            held_out_split: None,
            out_dir: PathBuf::from("out"),
            seed: None,
            variant: CorpusVariant::Pacit,
            splits: Split::ALL.to_vec(),
            k_pos: 1,
            k_neg: 1,
            lambda: 1.0,
            label_mode: LabelMode::GroundTruth,
            normalization: Normalization::PerTokenMean,
            split: SplitConfig::default(),
            budget: BudgetConfig::default(),
            template: TemplateConfig::default(),
            generation: GenerationConfig::default(),
            generate: GenerateOptions::default(),
        }
    }
}

fn field_err(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Validation(format!("config.{field}: {msg}"))
}

fn existing(field: &str, p: &Option<PathBuf>) -> Result<PathBuf> {
    let p = p.as_ref().ok_or_else(|| field_err(field, "required"))?;
    if !p.exists() {
        return Err(field_err(field, format!("{} does not exist", p.display())));
    }
    Ok(p.clone())
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse("config", "<document>", e.to_string()))
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| field_err("seed", "required for this command (set it in the file or pass --seed)"))
    }

    pub fn task_dir(&self) -> Result<PathBuf> {
        existing("task_dir", &self.task_dir)
    }

    pub fn train_split(&self) -> Result<PathBuf> {
        existing("train_split", &self.train_split)
    }

    pub fn held_out_split(&self) -> Result<PathBuf> {
        existing("held_out_split", &self.held_out_split)
    }

    /// Field-level checks for `build`.
    pub fn validate_build(&self) -> Result<()> {
        self.require_seed()?;
        self.task_dir()?;
        if self.splits.is_empty() {
            return Err(field_err("splits", "at least one split is required"));
        }
        if self.splits.iter().any(|s| matches!(s, Split::Train | Split::HeldIn)) {
            self.train_split()?;
        }
        if self.splits.contains(&Split::HeldOut) {
            self.held_out_split()?;
        }
        self.split.validate()?;
        self.validate_common()
    }

    pub fn validate_common(&self) -> Result<()> {
        if self.budget.max_input_units == 0 {
            return Err(field_err("budget.max_input_units", "must be >= 1"));
        }
        if self.budget.max_output_units == 0 {
            return Err(field_err("budget.max_output_units", "must be >= 1"));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(field_err("lambda", "must be finite and >= 0"));
        }
        if self.k_pos + self.k_neg > self.template.max_examples {
            return Err(field_err(
                "k_pos",
                format!("k_pos + k_neg exceeds template.max_examples = {}", self.template.max_examples),
            ));
        }
        if let Some(c) = &self.template.catalog {
            if !c.exists() {
                return Err(field_err("template.catalog", format!("{} does not exist", c.display())));
            }
        }
        ActionText::new(self.template.action.clone()).map_err(|e| field_err("template.action", e))?;
        Ok(())
    }

    pub fn renderer(&self) -> Result<Renderer> {
        let templates = match &self.template.catalog {
            Some(p) => Templates::from_file(p)?,
            None => Templates::builtin(),
        };
        Ok(Renderer::new(templates, self.template.stage_headers, self.template.max_examples))
    }

    pub fn packer(&self) -> Result<Packer> {
        let measure = measure_from_spec(&self.budget.length_fn)?;
        Ok(Packer::new(
            self.renderer()?,
            ActionText::new(self.template.action.clone())?,
            LengthBudget::new(self.budget.max_input_units, self.budget.max_output_units, Arc::clone(&measure))?,
        ))
    }

    /// Hash of the canonical JSON form of the effective configuration.
    pub fn hash(&self) -> String {
        crate::seed::sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}
