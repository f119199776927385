//! JSON experiment schema. Every block rejects unknown keys and every
//! validation error names the offending dotted key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregation::AsyncConfig;
use crate::data::{PartitionConfig, Scheme};
use crate::error::{Error, Result};
use crate::learner::{Activation, OptimizerConfig, OptimizerKind, Task};
use crate::netsim::{AvailabilityModel, LinkModel};
use crate::privacy::DpConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Blobs {
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default = "default_d")]
        d: usize,
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_separation")]
        separation: f64,
    },
    Linear {
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default = "default_d")]
        d: usize,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    Csv {
        path: PathBuf,
        label_column: String,
        task: Task,
    },
}

fn default_n() -> usize {
    1000
}
fn default_d() -> usize {
    2
}
fn default_classes() -> usize {
    2
}
fn default_separation() -> f64 {
    4.0
}
fn default_noise() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Sync,
    Async,
    Centralized,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Sync => "sync",
            Mode::Async => "async",
            Mode::Centralized => "centralized",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Trailing layers kept on-device when personalization is on.
    pub personal_head_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![32, 16],
            activation: Activation::Relu,
            personal_head_layers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompressionConfig {
    pub topk: Option<f64>,
    pub quantize_bits: Option<u8>,
    pub error_feedback: bool,
    pub dropout_keep: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrivacyConfig {
    pub dp: DpConfig,
    pub paillier: bool,
    pub key_bits: u64,
    pub fixed_point_scale: u64,
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        PrivacyConfig {
            dp: DpConfig::default(),
            paillier: false,
            key_bits: 2048,
            fixed_point_scale: 1 << 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub uplink_bps: f64,
    pub downlink_bps: f64,
    pub base_latency_s: f64,
    pub p_available: f64,
    pub train_seconds_per_sample_epoch: f64,
    /// Client `c` trains `1 + heterogeneity · c / (clients − 1)` times slower
    /// than client 0.
    pub heterogeneity: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let link = LinkModel::default();
        NetworkConfig {
            uplink_bps: link.uplink_bps,
            downlink_bps: link.downlink_bps,
            base_latency_s: link.base_latency_s,
            p_available: AvailabilityModel::default().p_available,
            train_seconds_per_sample_epoch: 1e-4,
            heterogeneity: 0.0,
        }
    }
}

impl NetworkConfig {
    pub fn link(&self) -> LinkModel {
        LinkModel {
            uplink_bps: self.uplink_bps,
            downlink_bps: self.downlink_bps,
            base_latency_s: self.base_latency_s,
        }
    }

    pub fn availability(&self) -> AvailabilityModel {
        AvailabilityModel {
            p_available: self.p_available,
        }
    }

    pub fn slowdown(&self, client: usize, clients: usize) -> f64 {
        if clients <= 1 {
            1.0
        } else {
            1.0 + self.heterogeneity * client as f64 / (clients - 1) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationConfig {
    pub dataset: DatasetConfig,
    pub mode: Mode,
    #[serde(default = "d_clients")]
    pub clients: usize,
    #[serde(default = "d_rounds")]
    pub rounds: usize,
    #[serde(default = "d_epochs")]
    pub local_epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_eval")]
    pub eval_fraction: f64,
    /// Share of each client's shard held out for per-client evaluation.
    #[serde(default)]
    pub client_eval_fraction: f64,
    #[serde(default = "d_true")]
    pub normalize: bool,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub compression: CompressionConfig,
    #[serde(default)]
    pub privacy: PrivacyConfig,
    #[serde(default)]
    pub personalization: bool,
    #[serde(default, rename = "async")]
    pub async_: AsyncConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    /// Centralized runs restart the optimizer each round with the same seeds
    /// a lone federated client would use.
    #[serde(default)]
    pub pinned_schedule: bool,
}

fn d_clients() -> usize {
    10
}
fn d_rounds() -> usize {
    20
}
fn d_epochs() -> usize {
    3
}
fn d_batch() -> usize {
    32
}
fn d_eval() -> f64 {
    0.2
}
fn d_true() -> bool {
    true
}

fn unit_open(v: f64) -> bool {
    v > 0.0 && v < 1.0
}

impl FederationConfig {
    /// Defaults everywhere except the two required fields.
    pub fn new(dataset: DatasetConfig, mode: Mode) -> Self {
        serde_json::from_value(serde_json::json!({
            "dataset": dataset,
            "mode": mode,
        }))
        .expect("defaults deserialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: FederationConfig = serde_json::from_str(text).map_err(json_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Fully-resolved config with every default spelled out.
    pub fn resolved(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn task(&self) -> Task {
        match &self.dataset {
            DatasetConfig::Blobs { .. } => Task::Classification,
            DatasetConfig::Linear { .. } => Task::Regression,
            DatasetConfig::Csv { task, .. } => *task,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |k: &str, r: &str| Err(Error::config(k, r));
        match &self.dataset {
            DatasetConfig::Blobs {
                n,
                d,
                classes,
                separation,
            } => {
                if *n == 0 {
                    return cfg("dataset.n", "must be positive");
                }
                if *d == 0 {
                    return cfg("dataset.d", "must be positive");
                }
                if *classes < 2 {
                    return cfg("dataset.classes", "need at least 2 classes");
                }
                if !(separation.is_finite() && *separation >= 0.0) {
                    return cfg("dataset.separation", "must be non-negative");
                }
            }
            DatasetConfig::Linear { n, d, noise } => {
                if *n == 0 {
                    return cfg("dataset.n", "must be positive");
                }
                if *d == 0 {
                    return cfg("dataset.d", "must be positive");
                }
                if !(noise.is_finite() && *noise >= 0.0) {
                    return cfg("dataset.noise", "must be non-negative");
                }
            }
            DatasetConfig::Csv { label_column, .. } => {
                if label_column.is_empty() {
                    return cfg("dataset.label_column", "must not be empty");
                }
            }
        }
        if self.clients == 0 {
            return cfg("clients", "must be at least 1");
        }
        if self.rounds == 0 {
            return cfg("rounds", "must be at least 1");
        }
        if self.local_epochs == 0 {
            return cfg("local_epochs", "must be at least 1");
        }
        if self.batch_size == 0 {
            return cfg("batch_size", "must be at least 1");
        }
        if !unit_open(self.eval_fraction) {
            return cfg("eval_fraction", "must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.client_eval_fraction) {
            return cfg("client_eval_fraction", "must lie in [0, 1)");
        }
        match self.partition.scheme {
            Scheme::Dirichlet if !(self.partition.alpha > 0.0 && self.partition.alpha.is_finite()) => {
                return cfg("partition.alpha", "must be positive");
            }
            Scheme::LabelSkew if self.partition.classes_per_client == 0 => {
                return cfg("partition.classes_per_client", "must be at least 1");
            }
            Scheme::Dirichlet | Scheme::LabelSkew if self.task() == Task::Regression => {
                return cfg("partition.scheme", "label-based schemes need a classification dataset");
            }
            _ => {}
        }
        if self.model.hidden.contains(&0) {
            return cfg("model.hidden", "layer widths must be positive");
        }
        if self.personalization {
            let layers = self.model.hidden.len() + 1;
            if self.model.personal_head_layers == 0 || self.model.personal_head_layers > layers {
                return cfg(
                    "model.personal_head_layers",
                    "must be between 1 and the number of layers when personalization is on",
                );
            }
        }
        self.optimizer.validate().map_err(|e| match e {
            Error::InvalidArgument { name, reason } => Error::config(format!("optimizer.{name}"), reason),
            other => Error::config("optimizer", other.to_string()),
        })?;
        if self.optimizer.kind == OptimizerKind::Sgd && self.optimizer.learning_rate <= 0.0 {
            return cfg("optimizer.learning_rate", "must be positive");
        }
        let c = &self.compression;
        if let Some(k) = c.topk {
            if !(k > 0.0 && k <= 1.0) {
                return cfg("compression.topk", "must lie in (0, 1]");
            }
        }
        if let Some(b) = c.quantize_bits {
            if !(1..=16).contains(&b) {
                return cfg("compression.quantize_bits", "must lie in [1, 16]");
            }
        }
        if let Some(k) = c.dropout_keep {
            if !(k > 0.0 && k <= 1.0) {
                return cfg("compression.dropout_keep", "must lie in (0, 1]");
            }
        }
        if c.error_feedback && c.topk.is_none() {
            return cfg("compression.error_feedback", "only meaningful with compression.topk");
        }
        let p = &self.privacy;
        p.dp.validate()?;
        if p.paillier {
            if p.key_bits < 64 || !p.key_bits.is_multiple_of(2) {
                return cfg("privacy.key_bits", "must be even and at least 64");
            }
            if p.fixed_point_scale == 0 {
                return cfg("privacy.fixed_point_scale", "must be positive");
            }
            if self.mode == Mode::Async {
                return cfg(
                    "privacy.paillier",
                    "secure aggregation needs a synchronous round to sum over",
                );
            }
            if c.quantize_bits.is_some() {
                return cfg(
                    "compression.quantize_bits",
                    "cannot be combined with privacy.paillier",
                );
            }
        }
        self.async_.validate()?;
        self.network.link().validate()?;
        if !(0.0..=1.0).contains(&self.network.p_available) {
            return cfg("network.p_available", "must lie in [0, 1]");
        }
        if !(self.network.train_seconds_per_sample_epoch >= 0.0
            && self.network.train_seconds_per_sample_epoch.is_finite())
        {
            return cfg("network.train_seconds_per_sample_epoch", "must be non-negative");
        }
        if !(self.network.heterogeneity >= 0.0 && self.network.heterogeneity.is_finite()) {
            return cfg("network.heterogeneity", "must be non-negative");
        }
        Ok(())
    }
}

/// Maps serde's messages onto the key they concern where it can tell.
pub(crate) fn json_error(e: serde_json::Error) -> Error {
    let msg = e.to_string();
    let key = ["unknown field `", "missing field `", "unknown variant `"]
        .iter()
        .find_map(|marker| {
            let start = msg.find(marker)? + marker.len();
            let end = msg[start..].find('`')? + start;
            Some(msg[start..end].to_string())
        })
        .unwrap_or_else(|| "<json>".to_string());
    Error::config(key, msg)
}
