//! Shared fixtures for the criterion benchmarks.

use brl_core::mdp::{BatchDistribution, TabularMdp};
use brl_core::rng::seeded_rng;
use rand::Rng;

/// Dense random instance used by the throughput benchmarks.
pub fn bench_instance(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
) -> (TabularMdp, BatchDistribution) {
    let mut rng = seeded_rng(12345);
    let mut transitions = vec![vec![vec![vec![0.0; num_states]; num_actions]; num_states]; horizon];
    let mut rewards = vec![vec![vec![0.0; num_actions]; num_states]; horizon];
    for h in 0..horizon {
        for s in 0..num_states {
            for a in 0..num_actions {
                let mut row: Vec<f64> = (0..num_states).map(|_| rng.gen::<f64>() + 0.05).collect();
                let total: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= total);
                transitions[h][s][a] = row;
                rewards[h][s][a] = rng.gen();
            }
        }
    }
    (
        TabularMdp::new(horizon, num_states, num_actions, 0, transitions, rewards).unwrap(),
        BatchDistribution::uniform(horizon, num_states, num_actions),
    )
}
