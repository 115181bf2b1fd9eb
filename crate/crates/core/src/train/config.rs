use std::fmt::Write as _;
use std::path::Path;

use crate::attention::ScoreKind;
use crate::error::{Error, Result};
use crate::model::Architecture;
use crate::optim::AdamConfig;
use crate::rnn::CellKind;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout_rate: f64,
    pub cell_kind: CellKind,
    /// `None` trains the attention-free ablation.
    pub attention_kind: Option<ScoreKind>,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub att_dim: usize,
    /// Encoded length cap, `<sos>` and `<eos>` included.
    pub max_len: usize,
    pub seed: u64,
    /// Validation BLEU every this many epochs; 0 disables it.
    pub eval_every: usize,
    pub min_count: usize,
    pub grad_clip: Option<f64>,
    pub project_context: bool,
    pub forget_bias: f64,
    /// Fixed batch order, no bucketing, single-threaded evaluation.
    pub strict: bool,
    pub bucketing: bool,
    pub test_size: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainingConfig {
            epochs: 80,
            batch_size: 32,
            learning_rate: adam.learning_rate,
            dropout_rate: 0.5,
            cell_kind: CellKind::Lstm,
            attention_kind: Some(ScoreKind::Dot),
            embed_dim: 256,
            hidden_dim: 1024,
            att_dim: 1024,
            max_len: 40,
            seed: 42,
            eval_every: 1,
            min_count: 1,
            grad_clip: None,
            project_context: true,
            forget_bias: 1.0,
            strict: false,
            bucketing: true,
            test_size: None,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "learning_rate",
    "dropout_rate",
    "cell_kind",
    "attention_kind",
    "embed_dim",
    "hidden_dim",
    "att_dim",
    "max_len",
    "seed",
    "eval_every",
    "min_count",
    "grad_clip",
    "project_context",
    "forget_bias",
    "strict",
    "bucketing",
    "test_size",
    "beta1",
    "beta2",
    "epsilon",
];

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_optional<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    match value.to_ascii_lowercase().as_str() {
        "none" | "" => Ok(None),
        _ => parse_value(key, value).map(Some),
    }
}

impl TrainingConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "dropout_rate" => self.dropout_rate = parse_value(key, value)?,
            "cell_kind" => self.cell_kind = value.parse()?,
            "attention_kind" => {
                self.attention_kind = match value.to_ascii_lowercase().as_str() {
                    "none" => None,
                    other => Some(other.parse()?),
                }
            }
            "embed_dim" => self.embed_dim = parse_value(key, value)?,
            "hidden_dim" => self.hidden_dim = parse_value(key, value)?,
            "att_dim" => self.att_dim = parse_value(key, value)?,
            "max_len" => self.max_len = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "eval_every" => self.eval_every = parse_value(key, value)?,
            "min_count" => self.min_count = parse_value(key, value)?,
            "grad_clip" => self.grad_clip = parse_optional(key, value)?,
            "project_context" => self.project_context = parse_value(key, value)?,
            "forget_bias" => self.forget_bias = parse_value(key, value)?,
            "strict" => self.strict = parse_value(key, value)?,
            "bucketing" => self.bucketing = parse_value(key, value)?,
            "test_size" => self.test_size = parse_optional(key, value)?,
            "beta1" => self.beta1 = parse_value(key, value)?,
            "beta2" => self.beta2 = parse_value(key, value)?,
            "epsilon" => self.epsilon = parse_value(key, value)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown config key `{other}` (known keys: {})",
                    CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Parses flat `key = value` lines on top of the defaults. Blank lines
    /// and lines starting with `#` are ignored. All unknown keys are
    /// reported together.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = TrainingConfig::default();
        config.apply_lines(text)?;
        config.validate()?;
        Ok(config)
    }

    pub(crate) fn apply_lines(&mut self, text: &str) -> Result<()> {
        let mut unknown = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let key = key.trim();
            if !CONFIG_KEYS.contains(&key) {
                unknown.push(key.to_string());
                continue;
            }
            self.set(key, value)?;
        }
        if !unknown.is_empty() {
            return Err(Error::Config(format!(
                "unknown config key(s): {}",
                unknown.join(", ")
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.max_len < 3 {
            return Err(Error::Config("max_len must leave room for <sos>, a token and <eos>".into()));
        }
        if self.min_count < 1 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        super::dropout::check_rate(self.dropout_rate)?;
        self.adam().validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn architecture(&self, source_vocab: usize, target_vocab: usize) -> Architecture {
        Architecture {
            cell: self.cell_kind,
            attention: self.attention_kind,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            att_dim: self.att_dim,
            source_vocab,
            target_vocab,
            project_context: self.project_context,
            forget_bias: self.forget_bias,
        }
    }

    /// Writes every key, so `parse(to_text())` gives back `self`.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        let mut out = String::new();
        let mut put = |k: &str, v: String| writeln!(out, "{k} = {v}").expect("writing to a String");
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("learning_rate", self.learning_rate.to_string());
        put("dropout_rate", self.dropout_rate.to_string());
        put("cell_kind", self.cell_kind.to_string());
        put("attention_kind", opt(self.attention_kind.map(|k| k.to_string())));
        put("embed_dim", self.embed_dim.to_string());
        put("hidden_dim", self.hidden_dim.to_string());
        put("att_dim", self.att_dim.to_string());
        put("max_len", self.max_len.to_string());
        put("seed", self.seed.to_string());
        put("eval_every", self.eval_every.to_string());
        put("min_count", self.min_count.to_string());
        put("grad_clip", opt(self.grad_clip.map(|c| c.to_string())));
        put("project_context", self.project_context.to_string());
        put("forget_bias", self.forget_bias.to_string());
        put("strict", self.strict.to_string());
        put("bucketing", self.bucketing.to_string());
        put("test_size", opt(self.test_size.map(|c| c.to_string())));
        put("beta1", self.beta1.to_string());
        put("beta2", self.beta2.to_string());
        put("epsilon", self.epsilon.to_string());
        out
    }
}
