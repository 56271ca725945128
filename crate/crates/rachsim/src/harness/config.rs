//! Experiment configuration: canonical TOML syntax, strict parsing with
//! exhaustive validation, defaults, and round-trippable serialization.
//!
//! Unknown keys are rejected; range and consistency violations are collected
//! and reported all at once with their key paths.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelConfig;
use crate::policy::AogConfig;
use crate::task::TaskKind;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("invalid config:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
}

/// How received payloads are combined into the model step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregateMode {
    /// `w - eta * sum(payloads)` (the default).
    Sum,
    /// `w - eta * mean(payloads)` over the received users.
    Mean,
}

/// Which users take the compression-error branch of the memory update: the
/// successfully received ones (default) or every active transmitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnSemantics {
    Received,
    Active,
}

/// Contention model: real slotted ALOHA, or a diagnostic mode in which every
/// active user is received (requires `K >= |active|`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelModel {
    Aloha,
    ForceSuccess,
}

/// User-selection policy.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyConfig {
    FixedRandom { count: usize },
    Aog(AogConfig),
    Genie { probes: usize },
}

impl PolicyConfig {
    /// Canonical label used in metrics output and grid specs.
    pub fn label(&self) -> String {
        match self {
            PolicyConfig::FixedRandom { count } => format!("fixed_random:{count}"),
            PolicyConfig::Aog(_) => "aog".to_string(),
            PolicyConfig::Genie { probes } => format!("genie:{probes}"),
        }
    }

    /// Parse a grid-spec label: `fixed_random:<m>`, `aog`, or `genie:<M>`.
    /// `aog` keeps default threshold parameters (calibrated slope, floor 1).
    pub fn parse(text: &str) -> Result<Self, String> {
        let (kind, arg) = match text.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (text, None),
        };
        match (kind, arg) {
            ("aog", None) => Ok(PolicyConfig::Aog(AogConfig {
                slope: 0.0,
                floor: 1,
                calibrate: true,
            })),
            ("fixed_random", Some(a)) => a
                .parse()
                .map(|count| PolicyConfig::FixedRandom { count })
                .map_err(|e| format!("fixed_random count: {e}")),
            ("genie", Some(a)) => a
                .parse()
                .map(|probes| PolicyConfig::Genie { probes })
                .map_err(|e| format!("genie probes: {e}")),
            _ => Err(format!(
                "unknown policy '{text}' (expected fixed_random:<m>, aog, genie:<M>)"
            )),
        }
    }
}

/// Gradient compression operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompressionConfig {
    TopK,
    RandK { rescale: bool },
}

impl CompressionConfig {
    pub fn label(&self) -> String {
        match self {
            CompressionConfig::TopK => "top_k".to_string(),
            CompressionConfig::RandK { rescale: false } => "rand_k".to_string(),
            CompressionConfig::RandK { rescale: true } => "rand_k_rescaled".to_string(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        match text {
            "top_k" => Ok(CompressionConfig::TopK),
            "rand_k" => Ok(CompressionConfig::RandK { rescale: false }),
            "rand_k_rescaled" => Ok(CompressionConfig::RandK { rescale: true }),
            _ => Err(format!("unknown compression '{text}'")),
        }
    }
}

/// Learning-task configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub features: usize,
    pub classes: usize,
    pub points: usize,
    pub noise: f64,
    pub separation: f64,
    /// Minibatch size; `None` means the full shard.
    pub batch: Option<usize>,
    pub test_points: usize,
    /// Dirichlet label-skew concentration; `None` means iid sharding.
    pub label_skew: Option<f64>,
}

impl TaskConfig {
    pub fn model_dim(&self) -> usize {
        match self.kind {
            TaskKind::Regression => self.features,
            TaskKind::Classification => self.features * self.classes,
        }
    }
}

/// A fully validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub users: usize,
    pub frames: usize,
    pub channel: ChannelConfig,
    pub channel_model: ChannelModel,
    /// Diagnostic override of the policy's transmission probability.
    pub tx_prob_override: Option<f64>,
    pub gamma: f64,
    pub eta: f64,
    /// Inverse-time decay: `eta_n = eta / (1 + eta_decay * n)`. `None` keeps
    /// the rate constant.
    pub eta_decay: Option<f64>,
    pub aggregate: AggregateMode,
    pub kn_semantics: KnSemantics,
    pub policy: PolicyConfig,
    pub compression: CompressionConfig,
    pub task: TaskConfig,
    pub seeds: Vec<u64>,
    pub out: Option<String>,
}

impl ExperimentConfig {
    /// Replace the channel, revalidating the slot-capacity constraint.
    pub fn set_channel(&mut self, slots: usize, budget: f64) -> Result<(), String> {
        self.channel = ChannelConfig::new(slots, budget, 1.0).map_err(|e| e.to_string())?;
        Ok(())
    }

    /// Effective minibatch size: configured batch or the full shard.
    pub fn batch_size(&self) -> usize {
        self.task.batch.unwrap_or(self.task.points / self.users)
    }

    /// Learning rate for frame `n` under the configured schedule.
    pub fn learning_rate(&self, frame: usize) -> f64 {
        match self.eta_decay {
            Some(decay) => self.eta / (1.0 + decay * frame as f64),
            None => self.eta,
        }
    }

    /// Serialize to the canonical TOML syntax with every field explicit.
    pub fn to_toml(&self) -> String {
        let raw = RawConfig::from(self);
        toml::to_string(&raw).expect("config serialization")
    }
}

// ---------------------------------------------------------------------------
// raw (serde) layer
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    users: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    frames: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    slots: Option<usize>,
    /// Floats deliverable per frame (`R*T`); defaults to the model dimension.
    #[serde(skip_serializing_if = "Option::is_none")]
    budget: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eta_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    aggregate: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kn_semantics: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    channel_model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tx_prob_override: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seeds: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    policy: Option<RawPolicy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    compression: Option<RawCompression>,
    #[serde(skip_serializing_if = "Option::is_none")]
    task: Option<RawTask>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    slope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    floor: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    calibrate: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    probes: Option<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCompression {
    kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rescale: Option<bool>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTask {
    kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    features: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    classes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    noise: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    separation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    batch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    test_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    label_skew: Option<f64>,
}

impl From<&ExperimentConfig> for RawConfig {
    fn from(cfg: &ExperimentConfig) -> Self {
        let policy = RawPolicy::from(&cfg.policy);
        let compression = RawCompression::from(&cfg.compression);
        RawConfig {
            users: Some(cfg.users),
            frames: Some(cfg.frames),
            slots: Some(cfg.channel.num_slots()),
            budget: Some(cfg.channel.frame_budget()),
            gamma: Some(cfg.gamma),
            eta: Some(cfg.eta),
            eta_decay: cfg.eta_decay,
            aggregate: Some(
                match cfg.aggregate {
                    AggregateMode::Sum => "sum",
                    AggregateMode::Mean => "mean",
                }
                .into(),
            ),
            kn_semantics: Some(
                match cfg.kn_semantics {
                    KnSemantics::Received => "received",
                    KnSemantics::Active => "active",
                }
                .into(),
            ),
            channel_model: Some(
                match cfg.channel_model {
                    ChannelModel::Aloha => "aloha",
                    ChannelModel::ForceSuccess => "force_success",
                }
                .into(),
            ),
            tx_prob_override: cfg.tx_prob_override,
            seeds: Some(cfg.seeds.clone()),
            out: cfg.out.clone(),
            policy: Some(policy),
            compression: Some(compression),
            task: Some(RawTask {
                kind: Some(
                    match cfg.task.kind {
                        TaskKind::Regression => "regression",
                        TaskKind::Classification => "classification",
                    }
                    .into(),
                ),
                features: Some(cfg.task.features),
                classes: Some(cfg.task.classes),
                points: Some(cfg.task.points),
                noise: Some(cfg.task.noise),
                separation: Some(cfg.task.separation),
                batch: cfg.task.batch,
                test_points: Some(cfg.task.test_points),
                label_skew: cfg.task.label_skew,
            }),
        }
    }
}

/// Parse and validate the canonical TOML config syntax. Defaults are applied
/// for absent keys; every range or consistency violation is reported, with
/// its key path, in one error.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    validate(raw)
}

/// Grid keys accepted by [`with_override`].
pub const OVERRIDE_KEYS: &[&str] = &[
    "users",
    "frames",
    "k",
    "slots",
    "budget",
    "gamma",
    "eta",
    "eta_decay",
    "aggregate",
    "kn_semantics",
    "channel_model",
    "tx_prob_override",
    "policy",
    "compression",
    "batch",
    "noise",
    "separation",
    "points",
    "features",
    "classes",
    "test_points",
    "label_skew",
];

/// Return a copy of `base` with one key overridden and the whole config
/// revalidated. Keys use the flat grid-spec names ("k" or "slots" for the
/// slot count, task fields by bare name, "policy" in label form).
pub fn with_override(
    base: &ExperimentConfig,
    key: &str,
    value: &str,
) -> Result<ExperimentConfig, String> {
    let mut raw = RawConfig::from(base);
    fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String>
    where
        T::Err: std::fmt::Display,
    {
        value.parse().map_err(|e| format!("{key}: {e}"))
    }
    let task = raw.task.as_mut().expect("raw from validated config");
    match key {
        "users" => raw.users = Some(num(key, value)?),
        "frames" => raw.frames = Some(num(key, value)?),
        "k" | "slots" => raw.slots = Some(num(key, value)?),
        "budget" => raw.budget = Some(num(key, value)?),
        "gamma" => raw.gamma = Some(num(key, value)?),
        "eta" => raw.eta = Some(num(key, value)?),
        "eta_decay" => raw.eta_decay = Some(num(key, value)?),
        "aggregate" => raw.aggregate = Some(value.to_string()),
        "kn_semantics" => raw.kn_semantics = Some(value.to_string()),
        "channel_model" => raw.channel_model = Some(value.to_string()),
        "tx_prob_override" => raw.tx_prob_override = Some(num(key, value)?),
        "policy" => {
            let policy = PolicyConfig::parse(value)?;
            raw.policy = Some(RawPolicy::from(&policy));
        }
        "compression" => {
            let compression = CompressionConfig::parse(value)?;
            raw.compression = Some(RawCompression::from(&compression));
        }
        "batch" => task.batch = Some(num(key, value)?),
        "noise" => task.noise = Some(num(key, value)?),
        "separation" => task.separation = Some(num(key, value)?),
        "points" => task.points = Some(num(key, value)?),
        "features" => task.features = Some(num(key, value)?),
        "classes" => task.classes = Some(num(key, value)?),
        "test_points" => task.test_points = Some(num(key, value)?),
        "label_skew" => task.label_skew = Some(num(key, value)?),
        other => {
            return Err(format!(
                "unknown grid key '{other}' (valid: {})",
                OVERRIDE_KEYS.join(", ")
            ))
        }
    }
    validate(raw).map_err(|e| e.to_string())
}

impl From<&PolicyConfig> for RawPolicy {
    fn from(policy: &PolicyConfig) -> Self {
        match policy {
            PolicyConfig::FixedRandom { count } => RawPolicy {
                kind: Some("fixed_random".into()),
                count: Some(*count),
                ..Default::default()
            },
            PolicyConfig::Aog(aog) => RawPolicy {
                kind: Some("aog".into()),
                slope: Some(aog.slope),
                floor: Some(aog.floor),
                calibrate: Some(aog.calibrate),
                ..Default::default()
            },
            PolicyConfig::Genie { probes } => RawPolicy {
                kind: Some("genie".into()),
                probes: Some(*probes),
                ..Default::default()
            },
        }
    }
}

impl From<&CompressionConfig> for RawCompression {
    fn from(c: &CompressionConfig) -> Self {
        match c {
            CompressionConfig::TopK => RawCompression {
                kind: Some("top_k".into()),
                rescale: None,
            },
            CompressionConfig::RandK { rescale } => RawCompression {
                kind: Some("rand_k".into()),
                rescale: Some(*rescale),
            },
        }
    }
}

fn validate(raw: RawConfig) -> Result<ExperimentConfig, ConfigError> {
    let mut errors: Vec<String> = Vec::new();

    let users = raw.users.unwrap_or(10);
    if users < 1 {
        errors.push("users: must be >= 1".into());
    }
    let frames = raw.frames.unwrap_or(15);

    let gamma = raw.gamma.unwrap_or(1.0);
    if !(0.0..=1.0).contains(&gamma) {
        errors.push(format!("gamma: must be in [0,1], got {gamma}"));
    }
    let eta = raw.eta.unwrap_or(0.01);
    if !(eta > 0.0) {
        errors.push(format!("eta: must be > 0, got {eta}"));
    }
    if let Some(decay) = raw.eta_decay {
        if decay < 0.0 {
            errors.push(format!("eta_decay: must be >= 0, got {decay}"));
        }
    }

    let aggregate = match raw.aggregate.as_deref() {
        None | Some("sum") => AggregateMode::Sum,
        Some("mean") => AggregateMode::Mean,
        Some(other) => {
            errors.push(format!("aggregate: unknown mode '{other}' (sum|mean)"));
            AggregateMode::Sum
        }
    };
    let kn_semantics = match raw.kn_semantics.as_deref() {
        None | Some("received") => KnSemantics::Received,
        Some("active") => KnSemantics::Active,
        Some(other) => {
            errors.push(format!(
                "kn_semantics: unknown value '{other}' (received|active)"
            ));
            KnSemantics::Received
        }
    };
    let channel_model = match raw.channel_model.as_deref() {
        None | Some("aloha") => ChannelModel::Aloha,
        Some("force_success") => ChannelModel::ForceSuccess,
        Some(other) => {
            errors.push(format!(
                "channel_model: unknown value '{other}' (aloha|force_success)"
            ));
            ChannelModel::Aloha
        }
    };
    if let Some(p) = raw.tx_prob_override {
        if !(0.0..=1.0).contains(&p) {
            errors.push(format!("tx_prob_override: must be in [0,1], got {p}"));
        }
    }

    let seeds = raw.seeds.unwrap_or_else(|| vec![0]);
    if seeds.is_empty() {
        errors.push("seeds: must be nonempty".into());
    }

    // task
    let rt = raw.task.unwrap_or_default();
    let kind = match rt.kind.as_deref() {
        None | Some("regression") => TaskKind::Regression,
        Some("classification") => TaskKind::Classification,
        Some(other) => {
            errors.push(format!(
                "task.kind: unknown kind '{other}' (regression|classification)"
            ));
            TaskKind::Regression
        }
    };
    let features = rt.features.unwrap_or(20);
    if features < 1 {
        errors.push("task.features: must be >= 1".into());
    }
    let classes = rt.classes.unwrap_or(3);
    if kind == TaskKind::Classification && classes < 2 {
        errors.push(format!("task.classes: must be >= 2, got {classes}"));
    }
    let points = rt.points.unwrap_or(2000);
    let noise = rt.noise.unwrap_or(0.01);
    if noise < 0.0 {
        errors.push(format!("task.noise: must be >= 0, got {noise}"));
    }
    let separation = rt.separation.unwrap_or(3.0);
    if kind == TaskKind::Classification && !(separation > 0.0) {
        errors.push(format!("task.separation: must be > 0, got {separation}"));
    }
    if kind == TaskKind::Regression && points < features {
        errors.push(format!(
            "task.points: {points} < task.features {features} (underdetermined regression)"
        ));
    }
    if users >= 1 && points % users.max(1) != 0 {
        errors.push(format!(
            "task.points: {points} not divisible into {users} equal shards"
        ));
    }
    let shard_size = if users >= 1 { points / users.max(1) } else { 0 };
    if let Some(batch) = rt.batch {
        if batch < 1 || batch > shard_size {
            errors.push(format!(
                "task.batch: {batch} out of range 1..={shard_size} (shard size)"
            ));
        }
    }
    let test_points = rt.test_points.unwrap_or(500);
    if test_points < 1 {
        errors.push("task.test_points: must be >= 1".into());
    }
    if let Some(alpha) = rt.label_skew {
        if kind != TaskKind::Classification {
            errors.push("task.label_skew: only meaningful for classification".into());
        } else if !(alpha > 0.0) {
            errors.push(format!("task.label_skew: must be > 0, got {alpha}"));
        }
    }
    let task = TaskConfig {
        kind,
        features,
        classes,
        points,
        noise,
        separation,
        batch: rt.batch,
        test_points,
        label_skew: rt.label_skew,
    };

    // channel: budget defaults to the model dimension
    let slots = raw.slots.unwrap_or(10);
    let budget = raw.budget.unwrap_or(task.model_dim() as f64);
    let channel = match ChannelConfig::new(slots, budget, 1.0) {
        Ok(c) => Some(c),
        Err(e) => {
            errors.push(format!("slots/budget: {e}"));
            None
        }
    };

    // policy
    let rp = raw.policy.unwrap_or_default();
    let policy = match rp.kind.as_deref() {
        None | Some("aog") => {
            let floor = rp.floor.unwrap_or(1);
            if floor < 1 || floor > users {
                errors.push(format!("policy.floor: {floor} out of range 1..={users}"));
            }
            let slope = rp.slope.unwrap_or(0.0);
            if slope < 0.0 {
                errors.push(format!("policy.slope: must be >= 0, got {slope}"));
            }
            if rp.count.is_some() || rp.probes.is_some() {
                errors.push("policy: count/probes are not aog parameters".into());
            }
            PolicyConfig::Aog(AogConfig {
                slope,
                floor: floor.clamp(1, users.max(1)),
                calibrate: rp.calibrate.unwrap_or(true),
            })
        }
        Some("fixed_random") => {
            let count = rp.count.unwrap_or(users);
            if count < 1 || count > users {
                errors.push(format!("policy.count: {count} out of range 1..={users}"));
            }
            if rp.slope.is_some()
                || rp.floor.is_some()
                || rp.calibrate.is_some()
                || rp.probes.is_some()
            {
                errors.push("policy: only count is a fixed_random parameter".into());
            }
            PolicyConfig::FixedRandom {
                count: count.clamp(1, users.max(1)),
            }
        }
        Some("genie") => {
            let probes = rp.probes.unwrap_or(10);
            if probes < 1 {
                errors.push("policy.probes: must be >= 1".into());
            }
            if rp.count.is_some()
                || rp.slope.is_some()
                || rp.floor.is_some()
                || rp.calibrate.is_some()
            {
                errors.push("policy: only probes is a genie parameter".into());
            }
            PolicyConfig::Genie {
                probes: probes.max(1),
            }
        }
        Some(other) => {
            errors.push(format!(
                "policy.kind: unknown kind '{other}' (fixed_random|aog|genie)"
            ));
            PolicyConfig::Aog(AogConfig {
                slope: 0.0,
                floor: 1,
                calibrate: true,
            })
        }
    };

    // compression
    let rc = raw.compression.unwrap_or_default();
    let compression = match rc.kind.as_deref() {
        None | Some("top_k") => {
            if rc.rescale == Some(true) {
                errors.push("compression.rescale: only meaningful for rand_k".into());
            }
            CompressionConfig::TopK
        }
        Some("rand_k") => CompressionConfig::RandK {
            rescale: rc.rescale.unwrap_or(false),
        },
        Some(other) => {
            errors.push(format!(
                "compression.kind: unknown kind '{other}' (top_k|rand_k)"
            ));
            CompressionConfig::TopK
        }
    };

    if !errors.is_empty() {
        return Err(ConfigError::Invalid(errors));
    }
    Ok(ExperimentConfig {
        users,
        frames,
        channel: channel.expect("validated"),
        channel_model,
        tx_prob_override: raw.tx_prob_override,
        gamma,
        eta,
        eta_decay: raw.eta_decay,
        aggregate,
        kn_semantics,
        policy,
        compression,
        task,
        seeds,
        out: raw.out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_documented_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg.users, 10);
        assert_eq!(cfg.channel.num_slots(), 10);
        assert_eq!(cfg.gamma, 1.0);
        assert!(matches!(cfg.policy, PolicyConfig::Aog(_)));
        assert_eq!(cfg.task.kind, TaskKind::Regression);
        // budget defaults to the model dimension
        assert_eq!(cfg.channel.frame_budget(), 20.0);
        assert_eq!(cfg.channel.slot_capacity(), 2);
        assert_eq!(cfg.seeds, vec![0]);
        assert_eq!(cfg.batch_size(), 200);
    }

    #[test]
    fn zero_slot_capacity_is_named() {
        let err = parse_config("slots = 30\nbudget = 20.0").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("slot capacity"), "{msg}");
    }

    #[test]
    fn fixed_random_count_over_users_rejected() {
        let err =
            parse_config("users = 4\n[policy]\nkind = \"fixed_random\"\ncount = 5").unwrap_err();
        assert!(err.to_string().contains("policy.count"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            parse_config("bogus = 1"),
            Err(ConfigError::Syntax(_))
        ));
        assert!(matches!(
            parse_config("[task]\nkind = \"regression\"\nwhatever = 2"),
            Err(ConfigError::Syntax(_))
        ));
    }

    #[test]
    fn all_violations_reported_together() {
        let err = parse_config("gamma = 1.5\neta = -2.0\nseeds = []").unwrap_err();
        match err {
            ConfigError::Invalid(list) => {
                assert!(list.iter().any(|e| e.starts_with("gamma")));
                assert!(list.iter().any(|e| e.starts_with("eta")));
                assert!(list.iter().any(|e| e.starts_with("seeds")));
            }
            other => panic!("expected Invalid, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let text = r#"
users = 6
frames = 9
slots = 5
budget = 30.0
gamma = 0.7
eta = 0.05
aggregate = "mean"
kn_semantics = "active"
seeds = [3, 4, 5]
out = "somewhere.csv"

[policy]
kind = "genie"
probes = 7

[compression]
kind = "rand_k"
rescale = true

[task]
kind = "classification"
features = 4
classes = 3
points = 600
noise = 0.0
separation = 5.0
batch = 50
test_points = 200
label_skew = 0.4
"#;
        let cfg = parse_config(text).unwrap();
        let round = parse_config(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, round);
    }

    #[test]
    fn eta_schedule_is_inverse_time() {
        let constant = parse_config("").unwrap();
        assert_eq!(constant.learning_rate(0), 0.01);
        assert_eq!(constant.learning_rate(99), 0.01);

        let decayed = parse_config("eta = 0.1\neta_decay = 0.5").unwrap();
        assert_eq!(decayed.learning_rate(0), 0.1);
        assert_eq!(decayed.learning_rate(2), 0.05);
        assert!(parse_config("eta_decay = -1.0").is_err());
        let round = parse_config(&decayed.to_toml()).unwrap();
        assert_eq!(decayed, round);
    }

    #[test]
    fn policy_labels_parse_back() {
        for label in ["aog", "fixed_random:5", "genie:12"] {
            let p = PolicyConfig::parse(label).unwrap();
            assert_eq!(p.label(), label);
        }
        assert!(PolicyConfig::parse("nope").is_err());
    }
}
