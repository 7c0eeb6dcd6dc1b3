//! Encoder configuration and its key/value text form.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value `{value}` for `{key}`")]
    BadValue { line: usize, key: String, value: String },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AggKind {
    Max,
    CrossAttention,
}

impl FromStr for AggKind {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "max" => Ok(AggKind::Max),
            "cross_attention" => Ok(AggKind::CrossAttention),
            _ => Err(()),
        }
    }
}

impl fmt::Display for AggKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggKind::Max => "max",
            AggKind::CrossAttention => "cross_attention",
        })
    }
}

/// Hyperparameters and variant switches of the encoder. Qualifiers combine
/// with node states by element-wise addition.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub agg: AggKind,
    pub deepset_messages: bool,
    pub no_qualifiers: bool,
    pub no_ffn: bool,
    pub static_edge_state: bool,
    /// Leaves the edge-state slot out of the message sequence. Only used to
    /// show the correspondence with a plain transformer encoder; implies
    /// static edge states.
    pub drop_edge_token: bool,
}

impl Default for HeatConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// The five ablations and variations, plus the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Full,
    DeepSetMessages,
    NoQualifiers,
    CrossAttentionAgg,
    NoFfn,
    StaticEdgeState,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::DeepSetMessages,
        Variant::NoQualifiers,
        Variant::CrossAttentionAgg,
        Variant::NoFfn,
        Variant::StaticEdgeState,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::DeepSetMessages => "deepset_messages",
            Variant::NoQualifiers => "no_qualifiers",
            Variant::CrossAttentionAgg => "cross_attention",
            Variant::NoFfn => "no_ffn",
            Variant::StaticEdgeState => "static_edge_state",
        }
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant `{s}`"))
    }
}

impl HeatConfig {
    /// Small model for CPU experiments.
    pub fn desk() -> Self {
        HeatConfig {
            layers: 2,
            dim: 64,
            heads: 4,
            ffn_dim: 256,
            dropout: 0.1,
            agg: AggKind::Max,
            deepset_messages: false,
            no_qualifiers: false,
            no_ffn: false,
            static_edge_state: false,
            drop_edge_token: false,
        }
    }

    /// The published model size.
    pub fn large() -> Self {
        HeatConfig {
            layers: 6,
            dim: 256,
            heads: 8,
            ffn_dim: 2048,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk()),
            "large" => Some(Self::large()),
            _ => None,
        }
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        match v {
            Variant::Full => {}
            Variant::DeepSetMessages => self.deepset_messages = true,
            Variant::NoQualifiers => self.no_qualifiers = true,
            Variant::CrossAttentionAgg => self.agg = AggKind::CrossAttention,
            Variant::NoFfn => self.no_ffn = true,
            Variant::StaticEdgeState => self.static_edge_state = true,
        }
        self
    }

    /// Whether edge states are updated between layers.
    pub fn evolving_edges(&self) -> bool {
        !self.static_edge_state && !self.drop_edge_token
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad("dim must be a positive multiple of heads");
        }
        if !self.dim.is_multiple_of(2) {
            return bad("dim must be even for sinusoidal positions");
        }
        if !self.no_ffn && self.ffn_dim == 0 {
            return bad("ffn_dim must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        self.set_at(0, key, value)
    }

    fn set_at(&mut self, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::BadValue {
            line,
            key: key.to_string(),
            value: value.to_string(),
        };
        fn num<T: FromStr>(v: &str, bad: impl Fn() -> ConfigError) -> Result<T, ConfigError> {
            v.parse().map_err(|_| bad())
        }
        match key {
            "layers" => self.layers = num(value, bad)?,
            "dim" => self.dim = num(value, bad)?,
            "heads" => self.heads = num(value, bad)?,
            "ffn_dim" => self.ffn_dim = num(value, bad)?,
            "dropout" => self.dropout = num(value, bad)?,
            "agg" => self.agg = value.parse().map_err(|_| bad())?,
            "deepset_messages" => self.deepset_messages = num(value, bad)?,
            "no_qualifiers" => self.no_qualifiers = num(value, bad)?,
            "no_ffn" => self.no_ffn = num(value, bad)?,
            "static_edge_state" => self.static_edge_state = num(value, bad)?,
            "drop_edge_token" => self.drop_edge_token = num(value, bad)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines over this config; `#` starts a comment.
    /// Unknown keys are errors.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set_at(i + 1, k.trim(), v.trim())?;
        }
        self.validate()
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::desk();
        c.apply_text(text)?;
        Ok(c)
    }
}

impl fmt::Display for HeatConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "layers = {}", self.layers)?;
        writeln!(f, "dim = {}", self.dim)?;
        writeln!(f, "heads = {}", self.heads)?;
        writeln!(f, "ffn_dim = {}", self.ffn_dim)?;
        writeln!(f, "dropout = {}", self.dropout)?;
        writeln!(f, "agg = {}", self.agg)?;
        writeln!(f, "deepset_messages = {}", self.deepset_messages)?;
        writeln!(f, "no_qualifiers = {}", self.no_qualifiers)?;
        writeln!(f, "no_ffn = {}", self.no_ffn)?;
        writeln!(f, "static_edge_state = {}", self.static_edge_state)?;
        writeln!(f, "drop_edge_token = {}", self.drop_edge_token)
    }
}
