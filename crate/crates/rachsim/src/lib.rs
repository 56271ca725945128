//! Deterministic simulator of federated SGD training over a framed
//! slotted-ALOHA random access channel.
//!
//! A parameter server broadcasts a model once per time-frame; remote users
//! compute local stochastic gradients, compress them to fit one ALOHA slot,
//! and contend for the channel. Collisions lose payloads; error-feedback
//! memory re-injects whatever was not delivered into future frames. Client
//! selection is pluggable: a fixed/random baseline, a gradient-freshness
//! threshold policy, and a genie-aided oracle that probes candidate active
//! counts against simulated channel realizations.
//!
//! The crate is organized as:
//! - [`channel`]: framed slotted-ALOHA contention and throughput analytics
//! - [`sparsify`]: top-k / rand-k compression and sparse-vector arithmetic
//! - [`task`]: synthetic regression/classification tasks, shards, gradients
//! - [`policy`]: user-selection strategies and threshold broadcast
//! - [`fedloop`]: the per-frame protocol orchestration
//! - [`harness`]: config parsing, RNG stream derivation, metrics, sweeps

pub mod channel;
pub mod fedloop;
pub mod harness;
pub mod policy;
pub mod sparsify;
pub mod task;

/// User identifier; users are numbered `0..U`.
pub type UserId = usize;
