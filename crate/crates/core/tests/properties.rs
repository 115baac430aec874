#![allow(clippy::needless_range_loop)]

//! Property tests for the structural invariants: permutation and affine
//! invariances, loss bounds, and the Bellman fixed point on arbitrary small
//! instances.

use brl_core::func_approx::QFunction;
use brl_core::mdp::{BatchDistribution, QTable, TabularMdp};
use brl_core::risk::{
    bellman_error, double_sampling_loss, empirical_bellman_loss, expected_loss_decomposition,
    fqi_step_loss, Dataset, DoubleDataset, DoubleTransition, Transition,
};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct SmallInstance {
    mdp: TabularMdp,
    mu: BatchDistribution,
    q: QFunction,
}

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    v.into_iter().map(|p| p / total).collect()
}

fn small_instance() -> impl Strategy<Value = SmallInstance> {
    (1usize..4, 1usize..3, 1usize..3)
        .prop_flat_map(|(s, a, h)| {
            let trans = proptest::collection::vec(0.01f64..1.0, s * a * s * h);
            let rewards = proptest::collection::vec(0.0f64..1.0, s * a * h);
            let mu = proptest::collection::vec(0.01f64..1.0, s * a * h);
            // respect the normalization |f| <= H the loss bands presume
            let qvals = proptest::collection::vec(-1.0f64..1.0, s * a * h);
            (Just((s, a, h)), trans, rewards, mu, qvals)
        })
        .prop_map(|((s, a, h), trans, rewards, mu, qvals)| {
            let mut t = vec![vec![vec![vec![0.0; s]; a]; s]; h];
            let mut r = vec![vec![vec![0.0; a]; s]; h];
            let mut m = vec![vec![vec![0.0; a]; s]; h];
            let mut q: Vec<QTable> = vec![vec![vec![0.0; a]; s]; h];
            let mut ti = 0;
            let mut ri = 0;
            for hh in 0..h {
                let mut mass = 0.0;
                for ss in 0..s {
                    for aa in 0..a {
                        t[hh][ss][aa] = normalize(trans[ti..ti + s].to_vec());
                        ti += s;
                        r[hh][ss][aa] = rewards[ri];
                        q[hh][ss][aa] = qvals[ri] * h as f64;
                        m[hh][ss][aa] = mu[ri];
                        mass += mu[ri];
                        ri += 1;
                    }
                }
                for ss in 0..s {
                    for aa in 0..a {
                        m[hh][ss][aa] /= mass;
                    }
                }
            }
            SmallInstance {
                mdp: TabularMdp::new(h, s, a, 0, t, r).unwrap(),
                mu: BatchDistribution::new(m).unwrap(),
                q: QFunction::from_tables(q, h as f64).unwrap(),
            }
        })
}

fn dataset_for(inst: &SmallInstance, picks: &[usize]) -> Dataset {
    let s = inst.mdp.num_states();
    let a = inst.mdp.num_actions();
    let steps = (0..inst.mdp.horizon())
        .map(|h| {
            picks
                .iter()
                .map(|&code| {
                    let ss = (code / 7) % s;
                    let aa = (code / 3) % a;
                    Transition {
                        s: ss,
                        a: aa,
                        r: inst.mdp.reward(h, ss, aa),
                        s_next: code % s,
                    }
                })
                .collect()
        })
        .collect();
    Dataset::new(steps).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn optimal_q_is_a_bellman_fixed_point(inst in small_instance()) {
        let q = inst.mdp.optimal_q();
        let horizon = inst.mdp.horizon();
        for h in 0..horizon {
            let next = if h + 1 < horizon {
                q[h + 1].clone()
            } else {
                vec![vec![0.0; inst.mdp.num_actions()]; inst.mdp.num_states()]
            };
            let image = inst.mdp.bellman_apply(h, &next).unwrap();
            for s in 0..inst.mdp.num_states() {
                for a in 0..inst.mdp.num_actions() {
                    prop_assert!((image[s][a] - q[h][s][a]).abs() <= 1e-12);
                    prop_assert!(q[h][s][a] >= -1e-12);
                    prop_assert!(q[h][s][a] <= horizon as f64 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn bellman_error_is_nonnegative_and_decomposes(inst in small_instance()) {
        let e = bellman_error(&inst.mdp, &inst.mu, &inst.q).unwrap();
        prop_assert!(e >= 0.0);
        let (loss, var) = expected_loss_decomposition(&inst.mdp, &inst.mu, &inst.q).unwrap();
        prop_assert!(var >= -1e-15);
        prop_assert!((loss - var - e).abs() <= 1e-10);
    }

    #[test]
    fn losses_are_permutation_invariant_and_step_additive(
        inst in small_instance(),
        picks in proptest::collection::vec(0usize..1000, 1..20),
        rotation in 0usize..19,
    ) {
        let data = dataset_for(&inst, &picks);
        let base = empirical_bellman_loss(&data, &inst.q).unwrap();
        // rotate tuples within each step
        let rotated = Dataset::new(
            data.steps()
                .iter()
                .map(|step| {
                    let k = rotation % step.len();
                    step[k..].iter().chain(step[..k].iter()).cloned().collect()
                })
                .collect(),
        )
        .unwrap();
        let rot = empirical_bellman_loss(&rotated, &inst.q).unwrap();
        prop_assert!((base - rot).abs() <= 1e-12);
        // the loss is the mean over steps of the per-step losses
        let horizon = inst.mdp.horizon();
        let mut acc = 0.0;
        for h in 0..horizon {
            acc += fqi_step_loss(data.step(h), &inst.q, h).unwrap();
        }
        prop_assert!((acc / horizon as f64 - base).abs() <= 1e-12);
    }

    #[test]
    fn double_sampling_loss_stays_in_its_band(
        inst in small_instance(),
        picks in proptest::collection::vec(0usize..1000, 1..20),
    ) {
        let s = inst.mdp.num_states();
        let a = inst.mdp.num_actions();
        let steps = (0..inst.mdp.horizon())
            .map(|h| {
                picks
                    .iter()
                    .map(|&code| {
                        let ss = (code / 7) % s;
                        let aa = (code / 3) % a;
                        DoubleTransition {
                            s: ss,
                            a: aa,
                            r: inst.mdp.reward(h, ss, aa),
                            s_next: code % s,
                            s_next2: (code / 2) % s,
                        }
                    })
                    .collect()
            })
            .collect();
        let data = DoubleDataset::new(steps).unwrap();
        let h = inst.mdp.horizon() as f64;
        let l = double_sampling_loss(&data, &inst.q).unwrap();
        prop_assert!(l >= -2.0 * h * h - 1e-12);
        prop_assert!(l <= 4.0 * h * h + 1e-12);
        prop_assert!(empirical_bellman_loss(&data.to_single(), &inst.q).unwrap() >= 0.0);
    }

    #[test]
    fn greedy_policy_ignores_positive_affine_transforms(
        inst in small_instance(),
        scale in 0.1f64..5.0,
        shift in -1.0f64..1.0,
    ) {
        let pi = inst.q.greedy_policy();
        let transformed: Vec<QTable> = (0..inst.mdp.horizon())
            .map(|h| {
                (0..inst.mdp.num_states())
                    .map(|s| {
                        (0..inst.mdp.num_actions())
                            .map(|a| scale * inst.q.eval(h, s, a) + shift)
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let f2 = QFunction::from_tables(transformed, 12.0).unwrap();
        prop_assert_eq!(f2.greedy_policy(), pi);
    }

    #[test]
    fn value_reduce_dominates_every_action(inst in small_instance()) {
        for h in 0..inst.mdp.horizon() {
            for s in 0..inst.mdp.num_states() {
                let v = inst.q.value_reduce(h, s);
                for a in 0..inst.mdp.num_actions() {
                    prop_assert!(v >= inst.q.eval(h, s, a));
                }
            }
        }
    }
}
