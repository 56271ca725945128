//! Per-frame protocol orchestration: local gradient computation, compression
//! to the slot budget, threshold activation, channel contention, server-side
//! accumulation, error-feedback memory updates, and the fallback when a whole
//! frame is lost to collisions.
//!
//! The per-user memory update is `m' = gamma * m + e`, where `e` is the
//! compression error `g - densify(payload)` for users whose payload was
//! delivered and the whole gradient `g` for everyone else, so no gradient
//! mass is silently dropped.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use thiserror::Error;

use crate::channel::{self, ChannelError, FrameOutcome};
use crate::harness::config::{
    AggregateMode, ChannelModel, CompressionConfig, ExperimentConfig, KnSemantics, PolicyConfig,
};
use crate::harness::metrics::FrameMetrics;
use crate::harness::rng::rng_stream;
use crate::policy::{self, AogConfig, BroadcastParams, MetricSense, PolicyError};
use crate::sparsify::{self, SparseUpdate, SparsifyError};
use crate::task::{self, Dataset, ModelParams, TaskError, TaskKind};
use crate::UserId;

#[derive(Debug, Error)]
pub enum StepError {
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Sparsify(#[from] SparsifyError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("protocol: {0}")]
    Protocol(String),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("setup: {0}")]
    Setup(StepError),
    #[error("frame {frame}: {source}")]
    Frame { frame: usize, source: StepError },
}

/// One user's side of the simulation: its data shard, error-feedback memory,
/// and the freshness value `||g + m||_2` of the current frame.
#[derive(Debug, Clone)]
pub struct UserState {
    pub user_id: UserId,
    pub shard: Dataset,
    pub memory: Vec<f64>,
    pub last_local_norm: f64,
}

impl UserState {
    pub fn new(user_id: UserId, shard: Dataset) -> Self {
        let dim = shard.model_dim();
        Self {
            user_id,
            shard,
            memory: vec![0.0; dim],
            last_local_norm: 0.0,
        }
    }
}

/// Cheap fingerprint of a model for fallback-identity checks: norm plus an
/// FNV-1a hash over the exact bit patterns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSummary {
    pub norm: f64,
    pub hash: u64,
}

pub fn model_hash(w: &ModelParams) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for x in w.values() {
        for b in x.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

fn summarize(w: &ModelParams) -> ModelSummary {
    ModelSummary {
        norm: w.norm(),
        hash: model_hash(w),
    }
}

/// Everything recorded about one time-frame.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub frame: usize,
    pub broadcast: BroadcastParams,
    pub active: BTreeSet<UserId>,
    pub outcome: FrameOutcome,
    pub received: BTreeSet<UserId>,
    pub model_before: ModelSummary,
    pub model_after: ModelSummary,
    pub metrics: FrameMetrics,
    /// Per-candidate mean probe metrics, genie frames only.
    pub genie_candidate_means: Option<Vec<f64>>,
}

/// A complete run: per-frame records plus the endpoints of the trajectory.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub records: Vec<FrameRecord>,
    pub initial_model: ModelParams,
    pub final_model: ModelParams,
    /// Generating truth for regression tasks.
    pub w_true: Option<ModelParams>,
}

/// Result of one user's local frame work.
#[derive(Debug, Clone)]
pub struct UserStep {
    pub active: bool,
    pub payload: Option<SparseUpdate>,
    pub gradient: Vec<f64>,
}

struct LocalStep {
    gradient: Vec<f64>,
    buffer: Vec<f64>,
}

fn compute_local<R: Rng + ?Sized>(
    user: &mut UserState,
    model: &ModelParams,
    batch: usize,
    rng: &mut R,
) -> Result<LocalStep, StepError> {
    let gradient = task::stochastic_gradient(model, &user.shard, batch, rng)?;
    let buffer: Vec<f64> = gradient
        .iter()
        .zip(&user.memory)
        .map(|(g, m)| g + m)
        .collect();
    user.last_local_norm = sparsify::l2_norm(&buffer);
    Ok(LocalStep { gradient, buffer })
}

fn compress<R: Rng + ?Sized>(
    buffer: &[f64],
    slot_capacity: usize,
    compression: CompressionConfig,
    rng: &mut R,
) -> SparseUpdate {
    match compression {
        CompressionConfig::TopK => sparsify::top_k(buffer, slot_capacity),
        CompressionConfig::RandK { rescale } => {
            let mut s = sparsify::rand_k(buffer, slot_capacity, rng);
            if rescale && !s.is_empty() {
                s.scale_values(buffer.len() as f64 / s.len() as f64);
            }
            s
        }
    }
}

/// One user's frame: compute the stochastic gradient, measure the freshness
/// `||g + m||_2` against the broadcast threshold, and if active, compress
/// `g + m` to the slot budget. The raw gradient is returned for the
/// subsequent memory update.
pub fn user_frame_step<R: Rng + ?Sized>(
    user: &mut UserState,
    model: &ModelParams,
    bp: &BroadcastParams,
    batch: usize,
    slot_capacity: usize,
    compression: CompressionConfig,
    rng: &mut R,
) -> Result<UserStep, StepError> {
    let local = compute_local(user, model, batch, rng)?;
    let active = policy::apply_threshold(user.last_local_norm, bp.threshold);
    let payload = if active {
        Some(compress(&local.buffer, slot_capacity, compression, rng))
    } else {
        None
    };
    Ok(UserStep {
        active,
        payload,
        gradient: local.gradient,
    })
}

/// Apply the error-feedback update `m' = gamma * m + e`, with `e` the
/// compression error `g - densify(payload)` when the payload was delivered
/// and the full gradient otherwise.
pub fn memory_update(
    user: &mut UserState,
    delivered: bool,
    gradient: &[f64],
    payload: Option<&SparseUpdate>,
    gamma: f64,
) -> Result<(), StepError> {
    if user.memory.len() != gradient.len() {
        return Err(SparsifyError::DimMismatch {
            update: gradient.len(),
            vector: user.memory.len(),
        }
        .into());
    }
    if delivered {
        let payload = payload.ok_or_else(|| {
            StepError::Protocol(format!("user {} delivered without a payload", user.user_id))
        })?;
        if payload.dim() != user.memory.len() {
            return Err(SparsifyError::DimMismatch {
                update: payload.dim(),
                vector: user.memory.len(),
            }
            .into());
        }
        let dense = payload.densify();
        for i in 0..user.memory.len() {
            user.memory[i] = gamma * user.memory[i] + gradient[i] - dense[i];
        }
    } else {
        for i in 0..user.memory.len() {
            user.memory[i] = gamma * user.memory[i] + gradient[i];
        }
    }
    Ok(())
}

/// Sum the received payloads into one dense update vector.
pub fn aggregate_payloads(
    dim: usize,
    payloads: &BTreeMap<UserId, SparseUpdate>,
) -> Result<Vec<f64>, SparsifyError> {
    let mut acc = vec![0.0; dim];
    for s in payloads.values() {
        sparsify::scatter_add(&mut acc, s, 1.0)?;
    }
    Ok(acc)
}

fn apply_step(
    w: &ModelParams,
    aggregate: &[f64],
    received: usize,
    eta: f64,
    mode: AggregateMode,
) -> Result<ModelParams, StepError> {
    if received == 0 {
        return Ok(w.clone());
    }
    let scale = match mode {
        AggregateMode::Sum => eta,
        AggregateMode::Mean => eta / received as f64,
    };
    let next: Vec<f64> = w
        .values()
        .iter()
        .zip(aggregate)
        .map(|(wi, ai)| wi - scale * ai)
        .collect();
    Ok(ModelParams::new(next)?)
}

/// Server update `w' = w - eta * sum(payloads)` (or the mean variant). An
/// empty payload map is the fallback frame: the model is returned unchanged.
pub fn ps_aggregate(
    w: &ModelParams,
    payloads: &BTreeMap<UserId, SparseUpdate>,
    eta: f64,
    mode: AggregateMode,
) -> Result<ModelParams, StepError> {
    let aggregate = aggregate_payloads(w.dim(), payloads)?;
    apply_step(w, &aggregate, payloads.len(), eta, mode)
}

/// The concrete problem instance a run works on.
#[derive(Debug, Clone)]
pub struct Instance {
    pub train: Dataset,
    pub test: Dataset,
    /// Generating truth for regression tasks.
    pub w_true: Option<ModelParams>,
    pub shards: Vec<Dataset>,
}

/// Generate the datasets and shards exactly as [`run_experiment`] does for
/// the given seed, so external oracles can solve the same instance.
pub fn build_instance(cfg: &ExperimentConfig, seed: u64) -> Result<Instance, TaskError> {
    let mut data_rng = rng_stream(seed, &[("data", 0)]);
    let data_seed: u64 = data_rng.random();
    let total = cfg.task.points + cfg.task.test_points;
    let (train, test, w_true) = match cfg.task.kind {
        TaskKind::Regression => {
            let (all, w_true) =
                task::make_regression(cfg.task.features, total, cfg.task.noise, data_seed)?;
            let (train, test) = task::split_at(&all, cfg.task.points);
            (train, test, Some(w_true))
        }
        TaskKind::Classification => {
            let all = task::make_classification(
                cfg.task.features,
                cfg.task.classes,
                total,
                cfg.task.separation,
                data_seed,
            )?;
            let (train, test) = task::split_at(&all, cfg.task.points);
            (train, test, None)
        }
    };
    let mut shard_rng = rng_stream(seed, &[("shard", 0)]);
    let shard_seed: u64 = shard_rng.random();
    let shards = match cfg.task.label_skew {
        Some(alpha) => task::shard_with_skew(&train, cfg.users, alpha, shard_seed),
        None => task::shard(&train, cfg.users, shard_seed),
    }?;
    Ok(Instance {
        train,
        test,
        w_true,
        shards,
    })
}

enum SlopeState {
    /// Calibration pending: every user is activated until the first
    /// successful aggregate fixes the slope.
    Pending,
    Fixed(f64),
}

/// Run the full protocol for `cfg.frames` time-frames under one master seed.
/// Every random draw comes from a stream derived from `(seed, purpose,
/// frame, user)`, so the result is independent of scheduling order.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<RunResult, RunError> {
    let Instance {
        train,
        test,
        w_true,
        shards,
    } = build_instance(cfg, seed).map_err(|e| RunError::Setup(e.into()))?;

    let dim = train.model_dim();
    let mut users: Vec<UserState> = shards
        .into_iter()
        .enumerate()
        .map(|(u, shard)| UserState::new(u, shard))
        .collect();

    let initial_model = ModelParams::zeros(dim);
    let mut model = initial_model.clone();
    let batch = cfg.batch_size();
    let slot_capacity = cfg.channel.slot_capacity();
    let metric_sense = match cfg.task.kind {
        TaskKind::Regression => MetricSense::LowerIsBetter,
        TaskKind::Classification => MetricSense::HigherIsBetter,
    };

    let mut slope_state = match &cfg.policy {
        PolicyConfig::Aog(aog) if aog.calibrate => SlopeState::Pending,
        PolicyConfig::Aog(aog) => SlopeState::Fixed(aog.slope),
        _ => SlopeState::Fixed(0.0),
    };
    let mut last_agg_norm = 0.0;

    let mut records = Vec::with_capacity(cfg.frames);
    for frame in 0..cfg.frames {
        let at = |source: StepError| RunError::Frame { frame, source };
        let eta_n = cfg.learning_rate(frame);

        // local gradients and freshness norms for every user
        let mut locals = Vec::with_capacity(cfg.users);
        for user in users.iter_mut() {
            let mut rng = rng_stream(
                seed,
                &[("grad", frame as u64), ("user", user.user_id as u64)],
            );
            locals.push(compute_local(user, &model, batch, &mut rng).map_err(at)?);
        }
        let norms: Vec<f64> = users.iter().map(|u| u.last_local_norm).collect();

        // policy decision
        let mut payloads: BTreeMap<UserId, SparseUpdate> = BTreeMap::new();
        let compress_user = |u: UserId, locals: &[LocalStep]| -> SparseUpdate {
            let mut rng = rng_stream(seed, &[("comp", frame as u64), ("user", u as u64)]);
            compress(&locals[u].buffer, slot_capacity, cfg.compression, &mut rng)
        };
        let (broadcast, active, genie_means) = match &cfg.policy {
            PolicyConfig::FixedRandom { count } => {
                let mut rng = rng_stream(seed, &[("select", frame as u64)]);
                let (set, tx_prob) = policy::select_fixed_random(cfg.users, *count, &mut rng)
                    .map_err(|e| at(e.into()))?;
                (
                    BroadcastParams {
                        threshold: 0.0,
                        tx_prob,
                    },
                    set,
                    None,
                )
            }
            PolicyConfig::Aog(aog) => {
                let effective = match slope_state {
                    SlopeState::Pending => AogConfig {
                        slope: 0.0,
                        floor: cfg.users,
                        calibrate: false,
                    },
                    SlopeState::Fixed(slope) => AogConfig {
                        slope,
                        floor: aog.floor,
                        calibrate: false,
                    },
                };
                let bp = policy::aog_broadcast(last_agg_norm, &norms, &effective)
                    .map_err(|e| at(e.into()))?;
                let set: BTreeSet<UserId> = norms
                    .iter()
                    .enumerate()
                    .filter(|(_, &n)| policy::apply_threshold(n, bp.threshold))
                    .map(|(u, _)| u)
                    .collect();
                (bp, set, None)
            }
            PolicyConfig::Genie { probes } => {
                // payloads for every user: any of them may end up selected
                for u in 0..cfg.users {
                    let p = compress_user(u, &locals);
                    payloads.insert(u, p);
                }
                let eval = |_active: &BTreeSet<UserId>,
                            outcome: &FrameOutcome|
                 -> Result<f64, PolicyError> {
                    let delivered: BTreeMap<UserId, SparseUpdate> = outcome
                        .received
                        .iter()
                        .filter_map(|u| payloads.get(u).map(|p| (*u, p.clone())))
                        .collect();
                    let probe_model = ps_aggregate(&model, &delivered, eta_n, cfg.aggregate)
                        .map_err(|e| PolicyError::EvalFailed(e.to_string()))?;
                    let (loss, accuracy) = task::evaluate(&probe_model, &test)
                        .map_err(|e| PolicyError::EvalFailed(e.to_string()))?;
                    Ok(match metric_sense {
                        MetricSense::LowerIsBetter => loss,
                        MetricSense::HigherIsBetter => accuracy.expect("classification accuracy"),
                    })
                };
                let mut rng = rng_stream(seed, &[("genie", frame as u64)]);
                let selection = policy::genie_select(
                    &norms,
                    *probes,
                    &cfg.channel,
                    metric_sense,
                    eval,
                    &mut rng,
                )
                .map_err(|e| at(e.into()))?;
                // probe-dominance is structural; make its violation loud
                let chosen = selection.candidate_means[selection.active.len() - 1];
                let extremal = selection
                    .candidate_means
                    .iter()
                    .all(|&m| match metric_sense {
                        MetricSense::LowerIsBetter => chosen <= m,
                        MetricSense::HigherIsBetter => chosen >= m,
                    });
                assert!(extremal, "genie selection is not extremal among candidates");
                (
                    BroadcastParams {
                        threshold: 0.0,
                        tx_prob: selection.tx_prob,
                    },
                    selection.active,
                    Some(selection.candidate_means),
                )
            }
        };

        // payloads for the active users (genie already has them all)
        if !matches!(cfg.policy, PolicyConfig::Genie { .. }) {
            for &u in &active {
                let p = compress_user(u, &locals);
                payloads.insert(u, p);
            }
        }

        let tx_prob = cfg.tx_prob_override.unwrap_or(broadcast.tx_prob);
        let broadcast = BroadcastParams {
            threshold: broadcast.threshold,
            tx_prob,
        };

        // channel contention with a fresh realization
        let outcome = match cfg.channel_model {
            ChannelModel::Aloha => {
                let mut rng = rng_stream(seed, &[("chan", frame as u64)]);
                channel::simulate_frame(&active, tx_prob, &cfg.channel, &mut rng)
            }
            ChannelModel::ForceSuccess => {
                channel::force_success_frame(&active, &cfg.channel).map_err(|e| at(e.into()))?
            }
        };
        debug_assert!(outcome.received.is_subset(&active));

        // server aggregation; an empty received set is the fallback frame
        let delivered_payloads: BTreeMap<UserId, SparseUpdate> = outcome
            .received
            .iter()
            .map(|u| {
                (
                    *u,
                    payloads
                        .get(u)
                        .expect("received user has a payload")
                        .clone(),
                )
            })
            .collect();
        let aggregate = aggregate_payloads(dim, &delivered_payloads).map_err(|e| at(e.into()))?;
        let agg_norm = sparsify::l2_norm(&aggregate);
        let next_model = apply_step(
            &model,
            &aggregate,
            delivered_payloads.len(),
            eta_n,
            cfg.aggregate,
        )
        .map_err(at)?;

        if !outcome.received.is_empty() {
            last_agg_norm = agg_norm;
            if let (PolicyConfig::Aog(aog), SlopeState::Pending) = (&cfg.policy, &slope_state) {
                let slope = (cfg.users.saturating_sub(aog.floor)) as f64 / agg_norm.max(1e-12);
                slope_state = SlopeState::Fixed(slope);
            }
        }

        // error-feedback memories for every user
        for (u, local) in locals.iter().enumerate() {
            let delivered = match cfg.kn_semantics {
                KnSemantics::Received => outcome.received.contains(&u),
                KnSemantics::Active => active.contains(&u),
            };
            memory_update(
                &mut users[u],
                delivered,
                &local.gradient,
                payloads.get(&u),
                cfg.gamma,
            )
            .map_err(at)?;
        }

        let (loss, accuracy) = task::evaluate(&next_model, &test).map_err(|e| at(e.into()))?;
        let metrics = FrameMetrics {
            frame,
            loss,
            accuracy,
            active_users: active.len(),
            received_users: outcome.received.len(),
            success_slots: outcome.success_slots(),
            collision_slots: outcome.collision_slots(),
            idle_slots: outcome.idle_slots(),
            mean_local_norm: norms.iter().sum::<f64>() / cfg.users as f64,
            global_grad_norm: agg_norm,
        };
        records.push(FrameRecord {
            frame,
            broadcast,
            received: outcome.received.clone(),
            active,
            outcome,
            model_before: summarize(&model),
            model_after: summarize(&next_model),
            metrics,
            genie_candidate_means: genie_means,
        });
        model = next_model;
    }

    Ok(RunResult {
        records,
        initial_model,
        final_model: model,
        w_true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::parse_config;
    use crate::task::TaskKind;

    /// Build a 4-point shard whose full gradient at w = 0 is exactly `g`:
    /// identity features, labels -4 * g.
    fn shard_with_gradient(g: [f64; 4]) -> Dataset {
        let mut csv = String::new();
        for i in 0..4 {
            let mut row = ["0"; 4].map(String::from);
            row[i] = "1".to_string();
            csv.push_str(&format!("{},{}\n", row.join(","), -4.0 * g[i]));
        }
        Dataset::from_csv(&csv, TaskKind::Regression).unwrap()
    }

    fn test_rng() -> rand_chacha::ChaCha12Rng {
        rng_stream(0, &[("test", 0)])
    }

    #[test]
    fn user_frame_step_compresses_memory_augmented_gradient() {
        let g = [1.0, -3.0, 0.0, 2.0];
        let mut user = UserState::new(0, shard_with_gradient(g));
        user.memory = vec![0.5, 0.0, 0.0, -2.5];
        let w = ModelParams::zeros(4);
        let bp = BroadcastParams {
            threshold: 0.0,
            tx_prob: 1.0,
        };
        let step = user_frame_step(
            &mut user,
            &w,
            &bp,
            4,
            2,
            CompressionConfig::TopK,
            &mut test_rng(),
        )
        .unwrap();
        assert!(step.active);
        assert_eq!(step.gradient, g.to_vec());
        // g + m = [1.5, -3, 0, -0.5]; two largest magnitudes at indices 1, 0
        assert_eq!(step.payload.unwrap().entries(), &[(0, 1.5), (1, -3.0)]);
        assert_eq!(
            user.last_local_norm,
            sparsify::l2_norm(&[1.5, -3.0, 0.0, -0.5])
        );
    }

    #[test]
    fn user_frame_step_inactive_above_any_norm() {
        let mut user = UserState::new(0, shard_with_gradient([1.0, -3.0, 0.0, 2.0]));
        let w = ModelParams::zeros(4);
        let bp = BroadcastParams {
            threshold: f64::INFINITY,
            tx_prob: 1.0,
        };
        let step = user_frame_step(
            &mut user,
            &w,
            &bp,
            4,
            2,
            CompressionConfig::TopK,
            &mut test_rng(),
        )
        .unwrap();
        assert!(!step.active);
        assert!(step.payload.is_none());
    }

    #[test]
    fn user_frame_step_full_budget_empty_memory_is_lossless() {
        let g = [1.0, -3.0, 0.0, 2.0];
        let mut user = UserState::new(0, shard_with_gradient(g));
        let w = ModelParams::zeros(4);
        let bp = BroadcastParams {
            threshold: 0.0,
            tx_prob: 1.0,
        };
        let step = user_frame_step(
            &mut user,
            &w,
            &bp,
            4,
            8,
            CompressionConfig::TopK,
            &mut test_rng(),
        )
        .unwrap();
        assert_eq!(step.payload.unwrap().densify(), g.to_vec());
    }

    #[test]
    fn rand_k_rescale_scales_by_dim_over_kept() {
        let buffer = [1.0, 2.0, 3.0, 4.0];
        let raw = compress(
            &buffer,
            2,
            CompressionConfig::RandK { rescale: false },
            &mut test_rng(),
        );
        let scaled = compress(
            &buffer,
            2,
            CompressionConfig::RandK { rescale: true },
            &mut test_rng(),
        );
        assert_eq!(raw.len(), 2);
        for (r, s) in raw.entries().iter().zip(scaled.entries()) {
            assert_eq!(r.0, s.0);
            assert_eq!(s.1, r.1 * 2.0); // d/k = 4/2
        }
    }

    #[test]
    fn memory_accumulates_when_never_received() {
        let mut user = UserState::new(0, shard_with_gradient([0.0; 4]));
        let g1 = vec![1.0, 2.0, -1.0, 0.5];
        let g2 = vec![-0.5, 1.0, 3.0, 0.25];
        memory_update(&mut user, false, &g1, None, 1.0).unwrap();
        memory_update(&mut user, false, &g2, None, 1.0).unwrap();
        let expect: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| a + b).collect();
        assert_eq!(user.memory, expect);
    }

    #[test]
    fn lossless_delivery_leaves_memory_zero() {
        let mut user = UserState::new(0, shard_with_gradient([0.0; 4]));
        let g = vec![1.0, -3.0, 0.0, 2.0];
        let payload = sparsify::top_k(&g, 4);
        memory_update(&mut user, true, &g, Some(&payload), 1.0).unwrap();
        assert_eq!(user.memory, vec![0.0; 4]);
    }

    #[test]
    fn forget_all_keeps_last_gradient() {
        let mut user = UserState::new(0, shard_with_gradient([0.0; 4]));
        user.memory = vec![5.0, 5.0, 5.0, 5.0];
        let g = vec![1.0, 2.0, 3.0, 4.0];
        memory_update(&mut user, false, &g, None, 0.0).unwrap();
        assert_eq!(user.memory, g);
    }

    #[test]
    fn delivered_memory_keeps_untransmitted_mass() {
        let mut user = UserState::new(0, shard_with_gradient([0.0; 4]));
        let g = vec![1.0, -3.0, 0.0, 2.0];
        let payload = sparsify::top_k(&g, 2); // keeps indices 1 and 3
        memory_update(&mut user, true, &g, Some(&payload), 1.0).unwrap();
        assert_eq!(user.memory, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn delivered_without_payload_is_a_protocol_error() {
        let mut user = UserState::new(0, shard_with_gradient([0.0; 4]));
        let err = memory_update(&mut user, true, &[0.0; 4], None, 1.0).unwrap_err();
        assert!(matches!(err, StepError::Protocol(_)));
    }

    #[test]
    fn ps_aggregate_examples() {
        let w = ModelParams::zeros(4);
        // empty received set: fallback leaves the model unchanged
        let unchanged = ps_aggregate(&w, &BTreeMap::new(), 0.5, AggregateMode::Sum).unwrap();
        assert_eq!(unchanged, w);

        let mut payloads = BTreeMap::new();
        payloads.insert(0usize, SparseUpdate::new(4, vec![(0, 1.0)]).unwrap());
        payloads.insert(
            1usize,
            SparseUpdate::new(4, vec![(0, 1.0), (2, -2.0)]).unwrap(),
        );
        let next = ps_aggregate(&w, &payloads, 0.5, AggregateMode::Sum).unwrap();
        assert_eq!(next.values(), &[-1.0, 0.0, 1.0, 0.0]);

        let mean = ps_aggregate(&w, &payloads, 0.5, AggregateMode::Mean).unwrap();
        assert_eq!(mean.values(), &[-0.5, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn single_received_full_budget_is_a_plain_sgd_step() {
        let w = ModelParams::new(vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let g = [0.5, -0.25, 0.0, 2.0];
        let mut payloads = BTreeMap::new();
        payloads.insert(3usize, sparsify::top_k(&g, 4));
        let next = ps_aggregate(&w, &payloads, 0.1, AggregateMode::Sum).unwrap();
        for i in 0..4 {
            assert_eq!(next.values()[i], 1.0 - 0.1 * g[i]);
        }
    }

    fn base_config(extra: &str) -> ExperimentConfig {
        parse_config(extra).unwrap()
    }

    #[test]
    fn zero_frames_returns_initial_model() {
        let cfg =
            base_config("frames = 0\nusers = 2\nslots = 5\n[task]\npoints = 100\nfeatures = 5");
        let run = run_experiment(&cfg, 1).unwrap();
        assert!(run.records.is_empty());
        assert_eq!(run.final_model, run.initial_model);
    }

    #[test]
    fn identical_seeds_give_identical_trajectories() {
        let cfg = base_config(
            "frames = 5\nusers = 4\nslots = 4\n[task]\npoints = 80\nfeatures = 6\nbatch = 10",
        );
        let a = run_experiment(&cfg, 3).unwrap();
        let b = run_experiment(&cfg, 3).unwrap();
        assert_eq!(a.final_model, b.final_model);
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.model_after, rb.model_after);
            assert_eq!(ra.metrics, rb.metrics);
            assert_eq!(ra.outcome, rb.outcome);
        }
        let c = run_experiment(&cfg, 4).unwrap();
        assert_ne!(
            a.final_model, c.final_model,
            "different seeds should explore different trajectories"
        );
    }

    #[test]
    fn lossless_single_user_equals_centralized_sgd() {
        // U=1, rho=1, K>=1, kappa >= d, gamma=1: bit-equal to plain SGD
        let cfg = base_config(
            "frames = 8\nusers = 1\nslots = 1\nbudget = 6.0\neta = 0.05\n\
             [policy]\nkind = \"fixed_random\"\ncount = 1\n\
             [task]\npoints = 60\nfeatures = 6\nnoise = 0.05",
        );
        let run = run_experiment(&cfg, 9).unwrap();
        let shard = build_instance(&cfg, 9).unwrap().shards.remove(0);

        let mut w = ModelParams::zeros(6);
        for frame in 0..8 {
            let mut rng = rng_stream(9, &[("grad", frame), ("user", 0)]);
            let g = task::stochastic_gradient(&w, &shard, 60, &mut rng).unwrap();
            let next: Vec<f64> = w
                .values()
                .iter()
                .zip(&g)
                .map(|(wi, gi)| wi - 0.05 * gi)
                .collect();
            w = ModelParams::new(next).unwrap();
            assert_eq!(
                run.records[frame as usize].model_after.hash,
                model_hash(&w),
                "frame {frame} diverged from centralized SGD"
            );
        }
        assert_eq!(run.final_model, w);
    }

    #[test]
    fn guaranteed_collisions_trigger_fallback_every_frame() {
        // two certain transmitters in a single slot collide forever
        let cfg = base_config(
            "frames = 10\nusers = 2\nslots = 1\nbudget = 4.0\ntx_prob_override = 1.0\n\
             [policy]\nkind = \"fixed_random\"\ncount = 2\n\
             [task]\npoints = 40\nfeatures = 4",
        );
        let run = run_experiment(&cfg, 0).unwrap();
        let w0_hash = model_hash(&run.initial_model);
        for rec in &run.records {
            assert!(rec.received.is_empty());
            assert_eq!(rec.metrics.collision_slots, 1);
            assert_eq!(rec.model_before.hash, w0_hash);
            assert_eq!(rec.model_after.hash, w0_hash);
        }
        assert_eq!(run.final_model, run.initial_model);
    }

    #[test]
    fn slot_statistics_match_channel_analytics() {
        // fix/random with all 10 users active at rho = 0.1 over 200 frames of
        // 10 slots: mean success slots per frame within 3 SE of K * 0.3874
        let cfg = base_config(
            "frames = 200\nusers = 10\nslots = 10\nbudget = 20.0\n\
             [policy]\nkind = \"fixed_random\"\ncount = 10\n\
             [task]\npoints = 200\nfeatures = 4\nbatch = 2",
        );
        let run = run_experiment(&cfg, 5).unwrap();
        let total: usize = run.records.iter().map(|r| r.metrics.success_slots).sum();
        let p = crate::channel::expected_throughput(10, 0.1);
        let slots = 200.0 * 10.0;
        let se = (slots * p * (1.0 - p)).sqrt();
        assert!(
            (total as f64 - slots * p).abs() <= 3.0 * se,
            "success slots {total} vs expected {}",
            slots * p
        );
    }

    #[test]
    fn frame_records_are_internally_consistent() {
        let cfg = base_config(
            "frames = 12\nusers = 5\nslots = 5\nbudget = 10.0\n\
             [policy]\nkind = \"aog\"\nfloor = 1\n\
             [task]\npoints = 100\nfeatures = 8\nnoise = 0.1",
        );
        let run = run_experiment(&cfg, 2).unwrap();
        assert_eq!(run.records.len(), 12);
        for rec in &run.records {
            assert!(rec.received.is_subset(&rec.active));
            let m = &rec.metrics;
            assert_eq!(m.success_slots + m.collision_slots + m.idle_slots, 5);
            assert!(m.received_users <= m.active_users);
            assert!(m.active_users <= 5);
            if rec.received.is_empty() {
                assert_eq!(rec.model_before, rec.model_after);
                assert_eq!(m.global_grad_norm, 0.0);
            }
        }
    }

    #[test]
    fn genie_frames_record_extremal_candidates() {
        let cfg = base_config(
            "frames = 4\nusers = 3\nslots = 3\nbudget = 6.0\n\
             [policy]\nkind = \"genie\"\nprobes = 3\n\
             [task]\npoints = 30\nfeatures = 2\nnoise = 0.05",
        );
        let run = run_experiment(&cfg, 7).unwrap();
        for rec in &run.records {
            let means = rec.genie_candidate_means.as_ref().unwrap();
            assert_eq!(means.len(), 3);
            let chosen = means[rec.active.len() - 1];
            assert!(means.iter().all(|&m| chosen <= m));
        }
    }
}
