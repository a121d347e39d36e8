use std::sync::Arc;

use deepcat_core::seeded_rng;
use deepcat_rl::{reward, ReplayBuffer, StateSnapshot, TrainConfig, Transition};
use ndarray::Array2;
use proptest::prelude::*;

fn transition(action: usize) -> Transition {
    let s = Arc::new(StateSnapshot {
        tuples: Array2::zeros((0, 3)),
        psi: Array2::zeros((2, 11)),
        available: vec![true; 2],
    });
    Transition {
        state: s.clone(),
        action,
        reward: -1.0,
        next_state: s,
        done: false,
    }
}

proptest! {
    #[test]
    fn epsilon_is_non_increasing_and_bounded(
        start in 0.0f64..1.0,
        frac in 0.0f64..1.0,
        decay in 1u64..10_000,
        a in 0u64..20_000,
        b in 0u64..20_000,
    ) {
        let cfg = TrainConfig { eps_start: start, eps_end: start * frac, eps_decay_steps: decay, ..Default::default() };
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(cfg.epsilon(hi) <= cfg.epsilon(lo));
        prop_assert!(cfg.epsilon(lo) <= cfg.eps_start && cfg.epsilon(hi) >= cfg.eps_end);
        prop_assert_eq!(cfg.epsilon(decay), cfg.eps_end);
    }

    #[test]
    fn replay_keeps_the_newest_transitions(capacity in 1usize..20, pushes in 0usize..60, seed: u64) {
        let mut buf = ReplayBuffer::new(capacity);
        for i in 0..pushes {
            buf.push(transition(i));
        }
        prop_assert_eq!(buf.len(), pushes.min(capacity));
        let first = pushes.saturating_sub(capacity);
        for i in 0..buf.len() {
            prop_assert_eq!(buf.get(i).unwrap().action, first + i);
        }
        let drawn = buf.sample(7, &mut seeded_rng(seed));
        prop_assert_eq!(drawn.len(), if pushes == 0 { 0 } else { 7 });
        prop_assert!(drawn.iter().all(|t| t.action >= first && t.action < pushes));
    }

    #[test]
    fn reward_is_zero_exactly_when_priorities_are_resolved(
        vars in prop::collection::vec(0.0f64..2.0, 1..5),
        tau2 in 0.01f64..1.5,
    ) {
        let priority: Vec<usize> = (0..vars.len()).step_by(2).collect();
        let resolved = priority.iter().all(|&k| vars[k] <= tau2);
        prop_assert_eq!(reward(&vars, &priority, tau2), if resolved { 0.0 } else { -1.0 });
    }
}
