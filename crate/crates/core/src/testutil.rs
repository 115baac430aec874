//! Shared helpers for unit tests.

use rand::Rng;

use crate::func_approx::QFunction;
use crate::mdp::{BatchDistribution, QTable, TabularMdp};

/// Random dense MDP with full-support transitions and batch distribution.
pub(crate) fn random_mdp(
    seed: u64,
    s: usize,
    a: usize,
    h: usize,
) -> (TabularMdp, BatchDistribution) {
    let mut rng = crate::rng::seeded_rng(seed);
    let mut transitions = vec![vec![vec![vec![0.0; s]; a]; s]; h];
    let mut rewards = vec![vec![vec![0.0; a]; s]; h];
    let mut mu = vec![vec![vec![0.0; a]; s]; h];
    for hh in 0..h {
        let mut mass = 0.0;
        for ss in 0..s {
            for aa in 0..a {
                let mut row: Vec<f64> = (0..s).map(|_| rng.gen::<f64>() + 0.05).collect();
                let sum: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= sum);
                transitions[hh][ss][aa] = row;
                rewards[hh][ss][aa] = rng.gen();
                let m = rng.gen::<f64>() + 0.02;
                mu[hh][ss][aa] = m;
                mass += m;
            }
        }
        for ss in 0..s {
            for aa in 0..a {
                mu[hh][ss][aa] /= mass;
            }
        }
    }
    (
        TabularMdp::new(h, s, a, 0, transitions, rewards).unwrap(),
        BatchDistribution::new(mu).unwrap(),
    )
}

/// Random tabular Q-function with values in `(-range, range)`.
pub(crate) fn random_q(seed: u64, s: usize, a: usize, h: usize, range: f64) -> QFunction {
    let mut rng = crate::rng::seeded_rng(seed);
    let tables: Vec<QTable> = (0..h)
        .map(|_| {
            (0..s)
                .map(|_| (0..a).map(|_| rng.gen_range(-range..range)).collect())
                .collect()
        })
        .collect();
    QFunction::from_tables(tables, range).unwrap()
}
