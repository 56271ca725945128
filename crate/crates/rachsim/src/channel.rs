//! Framed slotted-ALOHA contention under the strict collision channel model,
//! plus the analytic throughput formula.
//!
//! A frame is `K` slots. Every active user transmits in each slot
//! independently with the frame's transmission probability. A slot delivers a
//! payload iff exactly one user transmitted in it; two or more transmitters
//! destroy all of them. There is no capture effect, no noise, and no
//! mid-frame feedback, so users keep contending after a success.

use std::collections::BTreeSet;

use rand::Rng;
use thiserror::Error;

use crate::UserId;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("invalid channel config: {0}")]
    InvalidConfig(String),
    #[error("slot capacity floor(R*T/K) = 0 (budget {budget} over {slots} slots)")]
    ZeroSlotCapacity { budget: f64, slots: usize },
}

/// Channel parameters: `K` slots per time-frame, rate `R` floats/sec and
/// frame duration `T` sec. One successful slot carries `floor(R*T/K)` floats.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    num_slots: usize,
    rate: f64,
    frame_duration: f64,
}

impl ChannelConfig {
    pub fn new(num_slots: usize, rate: f64, frame_duration: f64) -> Result<Self, ChannelError> {
        if num_slots < 1 {
            return Err(ChannelError::InvalidConfig("num_slots must be >= 1".into()));
        }
        if !(rate > 0.0) {
            return Err(ChannelError::InvalidConfig(format!(
                "rate must be > 0, got {rate}"
            )));
        }
        if !(frame_duration > 0.0) {
            return Err(ChannelError::InvalidConfig(format!(
                "frame_duration must be > 0, got {frame_duration}"
            )));
        }
        let cfg = Self {
            num_slots,
            rate,
            frame_duration,
        };
        if cfg.slot_capacity() == 0 {
            return Err(ChannelError::ZeroSlotCapacity {
                budget: rate * frame_duration,
                slots: num_slots,
            });
        }
        Ok(cfg)
    }

    pub fn num_slots(&self) -> usize {
        self.num_slots
    }

    /// Total floats deliverable per frame, `R*T`.
    pub fn frame_budget(&self) -> f64 {
        self.rate * self.frame_duration
    }

    /// Floats deliverable in one successful slot: `floor(R*T/K)`. This is the
    /// sparsification budget; index overhead is not charged.
    pub fn slot_capacity(&self) -> usize {
        (self.rate * self.frame_duration / self.num_slots as f64).floor() as usize
    }
}

/// What happened in one slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SlotEvent {
    Idle,
    Success(UserId),
    Collision(BTreeSet<UserId>),
}

/// Per-slot events of one frame plus the deduplicated set of users whose
/// payload reached the server. A user succeeding in several slots of one
/// frame delivers the same payload each time, so `received` is a set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameOutcome {
    pub slot_events: Vec<SlotEvent>,
    pub received: BTreeSet<UserId>,
}

impl FrameOutcome {
    pub fn success_slots(&self) -> usize {
        self.slot_events
            .iter()
            .filter(|e| matches!(e, SlotEvent::Success(_)))
            .count()
    }

    pub fn collision_slots(&self) -> usize {
        self.slot_events
            .iter()
            .filter(|e| matches!(e, SlotEvent::Collision(_)))
            .count()
    }

    pub fn idle_slots(&self) -> usize {
        self.slot_events
            .iter()
            .filter(|e| matches!(e, SlotEvent::Idle))
            .count()
    }
}

/// Contend one frame: each active user transmits in each of the `K` slots
/// independently with probability `tx_prob`. Draws are consumed in slot-major,
/// ascending-user order, so identical inputs give bit-identical outcomes.
pub fn simulate_frame<R: Rng + ?Sized>(
    active: &BTreeSet<UserId>,
    tx_prob: f64,
    cfg: &ChannelConfig,
    rng: &mut R,
) -> FrameOutcome {
    assert!(
        (0.0..=1.0).contains(&tx_prob),
        "tx_prob must be in [0,1], got {tx_prob}"
    );
    let mut slot_events = Vec::with_capacity(cfg.num_slots);
    let mut received = BTreeSet::new();
    for _ in 0..cfg.num_slots {
        let mut transmitters = BTreeSet::new();
        for &u in active {
            if rng.random_bool(tx_prob) {
                transmitters.insert(u);
            }
        }
        let event = match transmitters.len() {
            0 => SlotEvent::Idle,
            1 => {
                let u = *transmitters.iter().next().unwrap();
                received.insert(u);
                SlotEvent::Success(u)
            }
            _ => SlotEvent::Collision(transmitters),
        };
        slot_events.push(event);
    }
    FrameOutcome {
        slot_events,
        received,
    }
}

/// Synthesize a frame in which every active user is received: user `i` of the
/// active set (ascending order) succeeds in slot `i`. Requires `K >= |active|`.
/// Diagnostic channel model used to isolate learning dynamics from contention.
pub fn force_success_frame(
    active: &BTreeSet<UserId>,
    cfg: &ChannelConfig,
) -> Result<FrameOutcome, ChannelError> {
    if active.len() > cfg.num_slots {
        return Err(ChannelError::InvalidConfig(format!(
            "force_success needs K >= |active| ({} > {})",
            active.len(),
            cfg.num_slots
        )));
    }
    let mut slot_events: Vec<SlotEvent> = active.iter().map(|&u| SlotEvent::Success(u)).collect();
    slot_events.resize(cfg.num_slots, SlotEvent::Idle);
    Ok(FrameOutcome {
        slot_events,
        received: active.clone(),
    })
}

/// Probability that a slot carries exactly one transmission when `num_active`
/// users each transmit with probability `tx_prob`:
/// `U_A * p * (1-p)^(U_A-1)`. Maximized at `p = 1/U_A`, approaching `1/e`.
pub fn expected_throughput(num_active: usize, tx_prob: f64) -> f64 {
    assert!(
        num_active >= 1,
        "expected_throughput requires num_active >= 1"
    );
    assert!(
        (0.0..=1.0).contains(&tx_prob),
        "tx_prob must be in [0,1], got {tx_prob}"
    );
    num_active as f64 * tx_prob * (1.0 - tx_prob).powi(num_active as i32 - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn cfg(slots: usize, budget: f64) -> ChannelConfig {
        ChannelConfig::new(slots, budget, 1.0).unwrap()
    }

    fn users(ids: &[usize]) -> BTreeSet<UserId> {
        ids.iter().copied().collect()
    }

    #[test]
    fn slot_capacity_examples() {
        // whole-model-per-frame normalization: R = 1.38e8 / T
        let t = 2.0;
        let c = ChannelConfig::new(10, 1.38e8 / t, t).unwrap();
        assert_eq!(c.slot_capacity(), 13_800_000);

        assert_eq!(cfg(1, 100.0).slot_capacity(), 100);
        assert_eq!(cfg(3, 100.0).slot_capacity(), 33);
    }

    #[test]
    fn zero_capacity_rejected() {
        assert!(matches!(
            ChannelConfig::new(101, 100.0, 1.0),
            Err(ChannelError::ZeroSlotCapacity { .. })
        ));
        assert!(ChannelConfig::new(0, 100.0, 1.0).is_err());
        assert!(ChannelConfig::new(10, -1.0, 1.0).is_err());
        assert!(ChannelConfig::new(10, 100.0, 0.0).is_err());
    }

    #[test]
    fn empty_active_set_is_all_idle() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let out = simulate_frame(&BTreeSet::new(), 0.7, &cfg(5, 10.0), &mut rng);
        assert_eq!(out.idle_slots(), 5);
        assert!(out.received.is_empty());
    }

    #[test]
    fn sole_transmitter_always_succeeds() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let out = simulate_frame(&users(&[4]), 1.0, &cfg(3, 10.0), &mut rng);
        assert_eq!(out.success_slots(), 3);
        assert!(out.slot_events.iter().all(|e| *e == SlotEvent::Success(4)));
        assert_eq!(out.received, users(&[4]));
    }

    #[test]
    fn two_certain_transmitters_always_collide() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let out = simulate_frame(&users(&[1, 2]), 1.0, &cfg(7, 10.0), &mut rng);
        assert_eq!(out.collision_slots(), 7);
        assert!(out.received.is_empty());
    }

    #[test]
    fn monte_carlo_matches_analytic_throughput() {
        // 10 users at rho = 0.1 over >= 1e5 slots: empirical success fraction
        // within 0.01 of 10 * 0.1 * 0.9^9 = 0.387420489.
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let active = users(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
        let slots = 100_000;
        let out = simulate_frame(&active, 0.1, &cfg(slots, slots as f64), &mut rng);
        let frac = out.success_slots() as f64 / slots as f64;
        assert!(
            (frac - 0.387420489).abs() <= 0.01,
            "empirical success fraction {frac}"
        );
    }

    #[test]
    fn expected_throughput_examples() {
        assert_eq!(expected_throughput(1, 1.0), 1.0);
        assert!((expected_throughput(10, 0.1) - 0.387420489).abs() < 1e-12);
        // large-U trend toward 1/e
        let t50 = expected_throughput(50, 1.0 / 50.0);
        assert!((t50 - 0.3716).abs() < 5e-4);
        assert!(t50 > 1.0 / std::f64::consts::E);
    }

    #[test]
    fn throughput_maximized_at_grid_point_nearest_inverse() {
        for num_active in 1..=50usize {
            let mut best = (0, f64::MIN);
            for i in 1..=100usize {
                let rho = i as f64 / 100.0;
                let t = expected_throughput(num_active, rho);
                if t > best.1 {
                    best = (i, t);
                }
            }
            let nearest = (100.0 / num_active as f64).round() as usize;
            assert_eq!(
                best.0, nearest,
                "U_A={num_active}: argmax grid index {} != nearest {}",
                best.0, nearest
            );
        }
    }

    #[test]
    fn monte_carlo_within_three_standard_errors() {
        let cases = [(5usize, 0.2), (10, 0.05), (3, 0.9), (20, 1.0 / 20.0)];
        for (seed, &(ua, rho)) in cases.iter().enumerate() {
            let mut rng = ChaCha12Rng::seed_from_u64(seed as u64);
            let active: BTreeSet<UserId> = (0..ua).collect();
            let slots = 100_000usize;
            let out = simulate_frame(&active, rho, &cfg(slots, slots as f64), &mut rng);
            let p = expected_throughput(ua, rho);
            let se = (p * (1.0 - p) / slots as f64).sqrt();
            let frac = out.success_slots() as f64 / slots as f64;
            assert!(
                (frac - p).abs() <= 3.0 * se,
                "U_A={ua} rho={rho}: {frac} vs {p} (3se={})",
                3.0 * se
            );
        }
    }

    #[test]
    fn force_success_covers_active_set() {
        let active = users(&[2, 5, 7]);
        let out = force_success_frame(&active, &cfg(4, 8.0)).unwrap();
        assert_eq!(out.received, active);
        assert_eq!(out.success_slots(), 3);
        assert_eq!(out.idle_slots(), 1);
        assert!(force_success_frame(&active, &cfg(2, 8.0)).is_err());
    }

    proptest! {
        #[test]
        fn partition_and_containment(
            ua in 0usize..12,
            rho in 0.0f64..=1.0,
            slots in 1usize..20,
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let active: BTreeSet<UserId> = (0..ua).collect();
            let c = ChannelConfig::new(slots, slots as f64, 1.0).unwrap();
            let out = simulate_frame(&active, rho, &c, &mut rng);
            prop_assert_eq!(out.slot_events.len(), slots);
            prop_assert_eq!(
                out.idle_slots() + out.success_slots() + out.collision_slots(),
                slots
            );
            prop_assert!(out.received.is_subset(&active));
            // received iff at least one Success slot names the user
            let from_slots: BTreeSet<UserId> = out
                .slot_events
                .iter()
                .filter_map(|e| match e {
                    SlotEvent::Success(u) => Some(*u),
                    _ => None,
                })
                .collect();
            prop_assert_eq!(&out.received, &from_slots);
        }

        #[test]
        fn identical_streams_give_identical_outcomes(
            ua in 0usize..10,
            rho in 0.0f64..=1.0,
            seed in 0u64..1000,
        ) {
            let active: BTreeSet<UserId> = (0..ua).collect();
            let c = ChannelConfig::new(6, 12.0, 1.0).unwrap();
            let a = simulate_frame(&active, rho, &c, &mut ChaCha12Rng::seed_from_u64(seed));
            let b = simulate_frame(&active, rho, &c, &mut ChaCha12Rng::seed_from_u64(seed));
            prop_assert_eq!(a, b);
        }
    }
}
