//! Model and run configuration, plus the flat `key=value` text format used
//! by config files and embedded in checkpoints.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

// Needed by the no_std build; std test builds resolve these inherently.
#[allow(unused_imports)]
use num_traits::Float;

use crate::graph::{LanguageTag, PredicateNodes};
use crate::rng::fnv1a;
use crate::scalar::Dtype;

/// Which encoder feeds the decoder's cross-attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EncoderKind {
    /// Graph attention over the reified graph.
    #[default]
    Gat,
    /// Self-attention Transformer over the linearized triple sequence
    /// (the controlled-comparison baseline).
    LinearizedTransformer,
}

impl EncoderKind {
    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Gat => "gat",
            EncoderKind::LinearizedTransformer => "linearized-transformer",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gat" => Some(EncoderKind::Gat),
            "linearized-transformer" => Some(EncoderKind::LinearizedTransformer),
            _ => None,
        }
    }
}

/// Learned attention coefficients, or the constant-normalization degenerate
/// case they replace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttentionMode {
    #[default]
    Gat,
    Gcn,
}

impl AttentionMode {
    pub fn name(self) -> &'static str {
        match self {
            AttentionMode::Gat => "gat",
            AttentionMode::Gcn => "gcn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gat" => Some(AttentionMode::Gat),
            "gcn" => Some(AttentionMode::Gcn),
            _ => None,
        }
    }
}

/// How per-edge vectors are pooled onto their destination nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EdgeAggregation {
    #[default]
    Mean,
    Sum,
}

impl EdgeAggregation {
    pub fn name(self) -> &'static str {
        match self {
            EdgeAggregation::Mean => "mean",
            EdgeAggregation::Sum => "sum",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mean" => Some(EdgeAggregation::Mean),
            "sum" => Some(EdgeAggregation::Sum),
            _ => None,
        }
    }
}

/// Architecture hyperparameters. Defaults are the desk-scale settings; the
/// full-scale values (vocab 32000 etc.) are plain config changes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Word embedding size `m`.
    pub embed_dim: usize,
    /// Hidden size `n`; tied to `embed_dim`.
    pub hidden_dim: usize,
    /// Vocabulary size `K`.
    pub vocab_size: usize,
    /// Attention heads `η`.
    pub heads: usize,
    /// Encoder and decoder depth.
    pub layers: usize,
    pub dropout: f64,
    pub max_decode_len: usize,
    /// Decoder feed-forward inner size.
    pub ffn_dim: usize,
    pub beam_size: usize,
    /// Beam score normalization exponent.
    pub length_norm: f64,
    pub copy_mechanism: bool,
    pub attention_mode: AttentionMode,
    pub predicate_nodes: PredicateNodes,
    pub edge_aggregation: EdgeAggregation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 256,
            hidden_dim: 256,
            vocab_size: 4000,
            heads: 8,
            layers: 6,
            dropout: 0.3,
            max_decode_len: 128,
            ffn_dim: 1024,
            beam_size: 5,
            length_norm: 0.6,
            copy_mechanism: true,
            attention_mode: AttentionMode::Gat,
            predicate_nodes: PredicateNodes::OccurrenceIndexed,
            edge_aggregation: EdgeAggregation::Mean,
        }
    }
}

impl ModelConfig {
    /// Per-head width.
    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.heads
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.hidden_dim % self.heads != 0 {
            return Err(ConfigError::Invalid(
                "hidden_dim must be divisible by heads",
            ));
        }
        if self.embed_dim != self.hidden_dim {
            return Err(ConfigError::Invalid("embed_dim and hidden_dim are tied"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ConfigError::Invalid("dropout must be in [0, 1)"));
        }
        if self.layers == 0 || self.max_decode_len == 0 || self.beam_size == 0 {
            return Err(ConfigError::Invalid(
                "layers, max_decode_len and beam_size must be at least 1",
            ));
        }
        Ok(())
    }
}

/// Everything that must match between a checkpoint and the process loading
/// it: architecture, encoder kind, language set, and float width.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub model: ModelConfig,
    pub encoder: EncoderKind,
    pub languages: Vec<LanguageTag>,
    pub precision: Dtype,
}

impl SessionConfig {
    pub fn new(model: ModelConfig, encoder: EncoderKind, languages: Vec<LanguageTag>) -> Self {
        SessionConfig {
            model,
            encoder,
            languages,
            precision: Dtype::F32,
        }
    }

    pub fn languages_key(&self) -> String {
        let codes: Vec<&str> = self.languages.iter().map(|l| l.code()).collect();
        codes.join(",")
    }

    /// Canonical text form; its FNV-1a hash is the checkpoint fingerprint.
    pub fn canonical_text(&self) -> String {
        let m = &self.model;
        format!(
            "attention={}\nbeam_size={}\ncopy={}\ndropout={}\nedge_aggregation={}\nembed_dim={}\nencoder={}\nffn_dim={}\nheads={}\nhidden_dim={}\nlanguages={}\nlayers={}\nlength_norm={}\nmax_decode_len={}\nprecision={}\npredicate_nodes={}\nvocab_size={}\n",
            m.attention_mode.name(),
            m.beam_size,
            m.copy_mechanism,
            m.dropout,
            m.edge_aggregation.name(),
            m.embed_dim,
            self.encoder.name(),
            m.ffn_dim,
            m.heads,
            m.hidden_dim,
            self.languages_key(),
            m.layers,
            m.length_norm,
            m.max_decode_len,
            self.precision.name(),
            m.predicate_nodes.name(),
            m.vocab_size,
        )
    }

    pub fn fingerprint(&self) -> u64 {
        fnv1a(self.canonical_text().as_bytes())
    }

    /// Parses the canonical text embedded in checkpoints. Only session keys
    /// are validated; the task/language pairing belongs to training runs.
    pub fn from_canonical_text(text: &str) -> Result<SessionConfig, ConfigError> {
        let cfg = RunConfig::parse_unvalidated(text)?;
        cfg.session.model.validate()?;
        Ok(cfg.session)
    }
}

/// The three task regimes and their language-count contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Task {
    #[default]
    Mono,
    Bi,
    Multi,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Mono => "mono",
            Task::Bi => "bi",
            Task::Multi => "multi",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mono" => Some(Task::Mono),
            "bi" => Some(Task::Bi),
            "multi" => Some(Task::Multi),
            _ => None,
        }
    }

    pub fn language_count(self) -> usize {
        match self {
            Task::Mono => 1,
            Task::Bi => 2,
            Task::Multi => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// Linear warmup to the peak rate over `warmup_steps`, then inverse
    /// square-root decay.
    InvSqrt { warmup_steps: u64 },
}

impl LrSchedule {
    pub fn rate(self, base_lr: f64, step: u64) -> f64 {
        match self {
            LrSchedule::Constant => base_lr,
            LrSchedule::InvSqrt { warmup_steps } => {
                let w = warmup_steps.max(1) as f64;
                let t = step.max(1) as f64;
                base_lr * (t / w).min((w / t).sqrt())
            }
        }
    }
}

/// Optimization-loop settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub task: Task,
    pub grad_clip: f64,
    pub lr_schedule: LrSchedule,
    /// Stop once the epoch's mean loss drops below this, if set.
    pub early_stop_loss: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            lr: 0.001,
            epochs: 30,
            seed: 1,
            task: Task::Mono,
            grad_clip: 1.0,
            lr_schedule: LrSchedule::Constant,
            early_stop_loss: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, languages: &[LanguageTag]) -> Result<(), ConfigError> {
        if self.batch_size == 0 {
            return Err(ConfigError::Invalid("batch_size must be at least 1"));
        }
        if languages.len() != self.task.language_count() {
            return Err(ConfigError::Invalid(
                "language set size must match the task (mono=1, bi=2, multi=3)",
            ));
        }
        let mut sorted: Vec<_> = languages.to_vec();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != languages.len() {
            return Err(ConfigError::Invalid("duplicate language in set"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    UnknownKey(String),
    BadValue(String),
    MissingKey(&'static str),
    Invalid(&'static str),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::UnknownKey(k) => write!(f, "unknown config key `{k}`"),
            ConfigError::BadValue(k) => write!(f, "bad value for config key `{k}`"),
            ConfigError::MissingKey(k) => write!(f, "missing config key `{k}`"),
            ConfigError::Invalid(msg) => write!(f, "invalid config: {msg}"),
        }
    }
}

impl core::error::Error for ConfigError {}

/// A parsed run configuration: session (architecture) + training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub session: SessionConfig,
    pub train: TrainConfig,
    pub k_fold: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            session: SessionConfig::new(
                ModelConfig::default(),
                EncoderKind::Gat,
                alloc::vec![LanguageTag::Eng],
            ),
            train: TrainConfig::default(),
            k_fold: 10,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.session.model.validate()?;
        self.train.validate(&self.session.languages)
    }

    /// Full `key=value` text, one key per line, keys sorted.
    pub fn to_text(&self) -> String {
        let mut text = self.session.canonical_text();
        let t = &self.train;
        text.push_str(&format!(
            "batch_size={}\nearly_stop_loss={}\nepochs={}\ngrad_clip={}\nk_fold={}\nlr={}\nlr_schedule={}\nseed={}\ntask={}\nwarmup_steps={}\n",
            t.batch_size,
            t.early_stop_loss.map_or("none".to_string(), |v| v.to_string()),
            t.epochs,
            t.grad_clip,
            self.k_fold,
            t.lr,
            match t.lr_schedule {
                LrSchedule::Constant => "constant",
                LrSchedule::InvSqrt { .. } => "inv-sqrt",
            },
            t.seed,
            t.task.name(),
            match t.lr_schedule {
                LrSchedule::Constant => 0,
                LrSchedule::InvSqrt { warmup_steps } => warmup_steps,
            },
        ));
        let mut lines: Vec<&str> = text.lines().collect();
        lines.sort_unstable();
        let mut out = String::new();
        for line in lines {
            out.push_str(line);
            out.push('\n');
        }
        out
    }

    /// Parses `key=value` lines over the defaults. Blank lines and lines
    /// starting with `#` are skipped; unknown keys are errors.
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let cfg = Self::parse_unvalidated(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn parse_unvalidated(text: &str) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut warmup_steps: u64 = 0;
        let mut inv_sqrt = false;
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::BadValue(line.to_string()))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = || ConfigError::BadValue(key.to_string());
            let model = &mut cfg.session.model;
            match key {
                "embed_dim" => model.embed_dim = value.parse().map_err(|_| bad())?,
                "hidden_dim" => model.hidden_dim = value.parse().map_err(|_| bad())?,
                "vocab_size" => model.vocab_size = value.parse().map_err(|_| bad())?,
                "heads" => model.heads = value.parse().map_err(|_| bad())?,
                "layers" => model.layers = value.parse().map_err(|_| bad())?,
                "dropout" => model.dropout = value.parse().map_err(|_| bad())?,
                "max_decode_len" => model.max_decode_len = value.parse().map_err(|_| bad())?,
                "ffn_dim" => model.ffn_dim = value.parse().map_err(|_| bad())?,
                "beam_size" => model.beam_size = value.parse().map_err(|_| bad())?,
                "length_norm" => model.length_norm = value.parse().map_err(|_| bad())?,
                "copy" => model.copy_mechanism = value.parse().map_err(|_| bad())?,
                "attention" => {
                    model.attention_mode = AttentionMode::parse(value).ok_or_else(bad)?
                }
                "predicate_nodes" => {
                    model.predicate_nodes = PredicateNodes::parse(value).ok_or_else(bad)?
                }
                "edge_aggregation" => {
                    model.edge_aggregation = EdgeAggregation::parse(value).ok_or_else(bad)?
                }
                "encoder" => cfg.session.encoder = EncoderKind::parse(value).ok_or_else(bad)?,
                "precision" => cfg.session.precision = Dtype::parse(value).ok_or_else(bad)?,
                "languages" => {
                    let mut langs = Vec::new();
                    for code in value.split(',') {
                        langs.push(LanguageTag::parse(code.trim()).ok_or_else(bad)?);
                    }
                    cfg.session.languages = langs;
                }
                "batch_size" => cfg.train.batch_size = value.parse().map_err(|_| bad())?,
                "lr" => cfg.train.lr = value.parse().map_err(|_| bad())?,
                "epochs" => cfg.train.epochs = value.parse().map_err(|_| bad())?,
                "seed" => cfg.train.seed = value.parse().map_err(|_| bad())?,
                "task" => cfg.train.task = Task::parse(value).ok_or_else(bad)?,
                "grad_clip" => cfg.train.grad_clip = value.parse().map_err(|_| bad())?,
                "early_stop_loss" => {
                    cfg.train.early_stop_loss = if value == "none" {
                        None
                    } else {
                        Some(value.parse().map_err(|_| bad())?)
                    }
                }
                "lr_schedule" => match value {
                    "constant" => inv_sqrt = false,
                    "inv-sqrt" => inv_sqrt = true,
                    _ => return Err(bad()),
                },
                "warmup_steps" => warmup_steps = value.parse().map_err(|_| bad())?,
                "k_fold" => cfg.k_fold = value.parse().map_err(|_| bad())?,
                _ => return Err(ConfigError::UnknownKey(key.to_string())),
            }
        }
        cfg.train.lr_schedule = if inv_sqrt {
            LrSchedule::InvSqrt {
                warmup_steps: warmup_steps.max(1),
            }
        } else {
            LrSchedule::Constant
        };
        Ok(cfg)
    }
}
