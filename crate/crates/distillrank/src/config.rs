//! Pipeline configuration: a flat key-value file with sectioned keys,
//! overridable by command-line flags (flags > file > defaults).
//!
//! ```text
//! # lines starting with '#' are comments
//! seed = 7
//! dataset.dir = data/scifact
//! output.dir = runs/scifact
//! encoder.dim = 64
//! encoder.vocab_buckets = 32768
//! encoder.tau = 0.05
//! endpoint.base_url = https://api.openai.com/v1
//! endpoint.model = gpt-4o-mini
//! endpoint.api_key_env = OPENAI_API_KEY
//! endpoint.timeout_secs = 60
//! endpoint.max_retries = 3
//! endpoint.temperature = 0.7
//! mock.enabled = false
//! mock.hallucination_rate = 0.15
//! mock.verify_overlap_threshold = 0.3
//! synthesis.parallelism = 4
//! synthesis.max_failure_ratio = 0.1
//! stage1.batch_size = 60
//! stage1.learning_rate = 0.05
//! stage1.epochs = 3
//! stage1.warmup_steps = 1000
//! stage1.weight_decay = 0.01
//! stage2.k = 5
//! stage2.n_pairs = 10
//! stage2.batch_size = 100
//! stage2.learning_rate = 0.05
//! stage2.epochs = 1
//! stage2.warmup_steps = 1000
//! stage2.weight_decay = 0.01
//! stage2.loss = partial-pl
//! stage2.max_skip_ratio = 0.1
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::align::{AlignConfig, AlignLoss};
use crate::distill::TrainConfig;
use crate::error::{Error, Result};
use crate::llm::{LlmEndpoint, MockOracleConfig};

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub seed: u64,
    pub dataset_dir: Option<PathBuf>,
    pub prompts_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub encoder_dim: usize,
    pub vocab_buckets: u32,
    pub tau: f64,
    pub endpoint: LlmEndpoint,
    pub mock_enabled: bool,
    pub mock: MockOracleConfig,
    pub synthesis_parallelism: usize,
    pub synthesis_max_failure_ratio: f64,
    pub stage1: TrainConfig,
    pub stage2: AlignConfig,
    pub stage2_max_skip_ratio: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            dataset_dir: None,
            prompts_dir: None,
            output_dir: None,
            encoder_dim: 64,
            vocab_buckets: 1 << 15,
            tau: 0.05,
            endpoint: LlmEndpoint::default(),
            mock_enabled: false,
            mock: MockOracleConfig::default(),
            synthesis_parallelism: 4,
            synthesis_max_failure_ratio: 0.10,
            stage1: TrainConfig {
                epochs: 3,
                ..TrainConfig::default()
            },
            stage2: AlignConfig::default(),
            stage2_max_skip_ratio: 0.10,
        }
    }
}

impl PipelineConfig {
    /// Parse a config file and fold it over the defaults. Unknown keys and
    /// unparseable values are collected, not short-circuited.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = PipelineConfig::default();
        let mut problems = Vec::new();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                problems.push(format!("line {}: expected 'key = value'", line_no + 1));
                continue;
            };
            if let Err(message) = config.set(key.trim(), value.trim()) {
                problems.push(format!("line {}: {message}", line_no + 1));
            }
        }
        if problems.is_empty() {
            Ok(config)
        } else {
            Err(Error::validation(problems.join("; ")))
        }
    }

    /// Apply one `section.key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("bad value '{value}' for {key}"))
        }
        match key {
            "seed" => self.seed = parse(key, value)?,
            "dataset.dir" => self.dataset_dir = Some(PathBuf::from(value)),
            "prompts.dir" => self.prompts_dir = Some(PathBuf::from(value)),
            "output.dir" => self.output_dir = Some(PathBuf::from(value)),
            "encoder.dim" => self.encoder_dim = parse(key, value)?,
            "encoder.vocab_buckets" => self.vocab_buckets = parse(key, value)?,
            "encoder.tau" => self.tau = parse(key, value)?,
            "endpoint.base_url" => self.endpoint.base_url = value.to_string(),
            "endpoint.model" => self.endpoint.model_name = value.to_string(),
            "endpoint.api_key_env" => self.endpoint.api_key_env = value.to_string(),
            "endpoint.timeout_secs" => {
                self.endpoint.request_timeout = Duration::from_secs_f64(parse(key, value)?)
            }
            "endpoint.max_retries" => self.endpoint.max_retries = parse(key, value)?,
            "endpoint.temperature" => self.endpoint.sampling_temperature = parse(key, value)?,
            "mock.enabled" => self.mock_enabled = parse(key, value)?,
            "mock.hallucination_rate" => self.mock.hallucination_rate = parse(key, value)?,
            "mock.verify_overlap_threshold" => {
                self.mock.verify_overlap_threshold = parse(key, value)?
            }
            "synthesis.parallelism" => self.synthesis_parallelism = parse(key, value)?,
            "synthesis.max_failure_ratio" => {
                self.synthesis_max_failure_ratio = parse(key, value)?
            }
            "stage1.batch_size" => self.stage1.batch_size = parse(key, value)?,
            "stage1.learning_rate" => self.stage1.learning_rate = parse(key, value)?,
            "stage1.epochs" => self.stage1.epochs = parse(key, value)?,
            "stage1.warmup_steps" => self.stage1.warmup_steps = parse(key, value)?,
            "stage1.weight_decay" => self.stage1.weight_decay = parse(key, value)?,
            "stage2.k" => self.stage2.k = parse(key, value)?,
            "stage2.n_pairs" => self.stage2.n_pairs = parse(key, value)?,
            "stage2.batch_size" => self.stage2.batch_size = parse(key, value)?,
            "stage2.learning_rate" => self.stage2.learning_rate = parse(key, value)?,
            "stage2.epochs" => self.stage2.epochs = parse(key, value)?,
            "stage2.warmup_steps" => self.stage2.warmup_steps = parse(key, value)?,
            "stage2.weight_decay" => self.stage2.weight_decay = parse(key, value)?,
            "stage2.loss" => self.stage2.loss = AlignLoss::parse(value).map_err(|e| e.to_string())?,
            "stage2.max_skip_ratio" => self.stage2_max_skip_ratio = parse(key, value)?,
            other => return Err(format!("unknown config key '{other}'")),
        }
        Ok(())
    }

    /// Every violation, not just the first. Side-effect free.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.encoder_dim < 2 {
            out.push(format!("encoder.dim must be >= 2, got {}", self.encoder_dim));
        }
        if self.vocab_buckets == 0 {
            out.push("encoder.vocab_buckets must be positive".to_string());
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            out.push(format!("encoder.tau must be a positive real, got {}", self.tau));
        }
        if let Some(dir) = &self.dataset_dir {
            if !dir.is_dir() {
                out.push(format!("dataset.dir '{}' does not exist", dir.display()));
            }
        }
        if let Some(dir) = &self.prompts_dir {
            if !dir.is_dir() {
                out.push(format!("prompts.dir '{}' does not exist", dir.display()));
            }
        }
        if self.synthesis_parallelism == 0 {
            out.push("synthesis.parallelism must be >= 1".to_string());
        }
        for (name, v) in [
            ("synthesis.max_failure_ratio", self.synthesis_max_failure_ratio),
            ("stage2.max_skip_ratio", self.stage2_max_skip_ratio),
            ("mock.hallucination_rate", self.mock.hallucination_rate),
            ("mock.verify_overlap_threshold", self.mock.verify_overlap_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                out.push(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        if let Err(e) = self.stage1.validate() {
            out.push(format!("stage1: {e}"));
        }
        if let Err(e) = self.stage2.validate() {
            out.push(format!("stage2: {e}"));
        }
        if self.endpoint.max_retries > 32 {
            out.push(format!(
                "endpoint.max_retries {} is unreasonably large",
                self.endpoint.max_retries
            ));
        }
        out
    }

    /// Flags take precedence over file values: apply from a parsed flag map.
    pub fn apply_overrides(&mut self, overrides: &BTreeMap<String, String>) -> Result<()> {
        let mut problems = Vec::new();
        for (key, value) in overrides {
            if let Err(message) = self.set(key, value) {
                problems.push(message);
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::validation(problems.join("; ")))
        }
    }
}
