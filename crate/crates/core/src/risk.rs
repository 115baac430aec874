//! Bellman-error functionals, exact and empirical.
//!
//! The exact Bellman error of `f = (f_1, …, f_H)` under the batch
//! distribution is
//!
//! ```text
//! E(f) = (1/H) Σ_h ‖f_h − T*_h f_{h+1}‖²_{μ_h},        f_{H+1} ≡ 0.
//! ```
//!
//! Its empirical proxies over a dataset of `(s, a, r, s')` tuples:
//!
//! * `empirical_bellman_loss` — the naive squared residual
//!   `(1/(nH)) Σ (f_h(s,a) − r − V_{f_{h+1}}(s'))²`, biased upward by the
//!   transition variance of `V_{f_{h+1}}(s')`;
//! * `double_sampling_loss` — the debiased variant that subtracts
//!   `½ (V_{f_{h+1}}(s') − V_{f_{h+1}}(s̃'))²` using an independent second
//!   next state, an unbiased estimator of `E(f)`;
//! * `fqi_step_loss` — the per-step regression loss of fitted Q-iteration;
//! * `minimax_loss` — the naive loss of `f` minus the same loss with a
//!   helper `g_h` substituted as the predictor.
//!
//! Exact expectations of these losses are computed here by full enumeration
//! over `(h, s, a, s'[, s̃'])` weighted by `μ_h` and the transition kernel;
//! they are the module's correctness oracles and are exposed as public
//! operations. Sums are accumulated with compensated (Kahan) summation so
//! datasets of up to 10^6 tuples stay exact to ~1e-12.

use serde::{Deserialize, Serialize};

use crate::error::{BrlError, Result};
use crate::func_approx::QFunction;
use crate::mdp::{BatchDistribution, TabularMdp};

/// One batch transition at a known step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
}

/// As [`Transition`] with an independent second next state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoubleTransition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
    pub s_next2: usize,
}

/// Per-step collections of transitions with equal counts across steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    steps: Vec<Vec<Transition>>,
}

/// Per-step collections of double-sampled transitions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DoubleDataset {
    steps: Vec<Vec<DoubleTransition>>,
}

fn check_counts<T>(steps: &[Vec<T>]) -> Result<usize> {
    if steps.is_empty() {
        return Err(BrlError::invalid("dataset", "no steps"));
    }
    let n = steps[0].len();
    if steps.iter().any(|s| s.len() != n) {
        return Err(BrlError::invalid(
            "dataset",
            "tuple counts must be equal across steps",
        ));
    }
    Ok(n)
}

impl Dataset {
    pub fn new(steps: Vec<Vec<Transition>>) -> Result<Self> {
        check_counts(&steps)?;
        for (h, step) in steps.iter().enumerate() {
            for t in step {
                if !(0.0..=1.0).contains(&t.r) {
                    return Err(BrlError::invalid(
                        "dataset",
                        format!("reward {} at step {h} outside [0, 1]", t.r),
                    ));
                }
            }
        }
        Ok(Dataset { steps })
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// Tuples per step.
    pub fn tuples_per_step(&self) -> usize {
        self.steps[0].len()
    }

    pub fn step(&self, h: usize) -> &[Transition] {
        &self.steps[h]
    }

    pub fn steps(&self) -> &[Vec<Transition>] {
        &self.steps
    }
}

impl DoubleDataset {
    pub fn new(steps: Vec<Vec<DoubleTransition>>) -> Result<Self> {
        check_counts(&steps)?;
        for (h, step) in steps.iter().enumerate() {
            for t in step {
                if !(0.0..=1.0).contains(&t.r) {
                    return Err(BrlError::invalid(
                        "dataset",
                        format!("reward {} at step {h} outside [0, 1]", t.r),
                    ));
                }
            }
        }
        Ok(DoubleDataset { steps })
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn tuples_per_step(&self) -> usize {
        self.steps[0].len()
    }

    pub fn step(&self, h: usize) -> &[DoubleTransition] {
        &self.steps[h]
    }

    pub fn steps(&self) -> &[Vec<DoubleTransition>] {
        &self.steps
    }

    /// Drops the second next state.
    pub fn to_single(&self) -> Dataset {
        Dataset {
            steps: self
                .steps
                .iter()
                .map(|step| {
                    step.iter()
                        .map(|t| Transition {
                            s: t.s,
                            a: t.a,
                            r: t.r,
                            s_next: t.s_next,
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

/// Compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    pub(crate) fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    pub(crate) fn total(&self) -> f64 {
        self.sum
    }
}

/// Exact Bellman error `E(f)` by enumeration over the `(s, a)` grid.
pub fn bellman_error(mdp: &TabularMdp, mu: &BatchDistribution, f: &QFunction) -> Result<f64> {
    check_dims(mdp, f)?;
    let horizon = mdp.horizon();
    let mut acc = Kahan::default();
    let mut next_table = vec![vec![0.0; mdp.num_actions()]; mdp.num_states()];
    for h in (0..horizon).rev() {
        if h + 1 < horizon {
            next_table = f.step_table(h + 1);
        }
        let target = mdp.bellman_apply(h, &next_table)?;
        for s in 0..mdp.num_states() {
            for a in 0..mdp.num_actions() {
                let w = mu.prob(h, s, a);
                if w > 0.0 {
                    let d = f.eval(h, s, a) - target[s][a];
                    acc.add(w * d * d);
                }
            }
        }
    }
    Ok(acc.total() / horizon as f64)
}

/// Naive empirical squared Bellman residual `L̂_B(f)`.
pub fn empirical_bellman_loss(data: &Dataset, f: &QFunction) -> Result<f64> {
    check_data_dims(data.horizon(), f)?;
    let n = data.tuples_per_step();
    if n == 0 {
        return Err(BrlError::EmptyInput("dataset has no tuples".into()));
    }
    let mut acc = Kahan::default();
    for h in 0..data.horizon() {
        for t in data.step(h) {
            let resid = f.eval(h, t.s, t.a) - t.r - f.next_value(h, t.s_next);
            acc.add(resid * resid);
        }
    }
    Ok(acc.total() / (n * data.horizon()) as f64)
}

/// Exact expectation of the naive loss and the transition-variance term it
/// overshoots by: `E_μ L̂_B(f)` and `(1/H) Σ_h E_{μ_h} Var_{s'}(V_{f_{h+1}}(s'))`.
///
/// The difference of the two returned values equals `E(f)` exactly.
pub fn expected_loss_decomposition(
    mdp: &TabularMdp,
    mu: &BatchDistribution,
    f: &QFunction,
) -> Result<(f64, f64)> {
    check_dims(mdp, f)?;
    let horizon = mdp.horizon();
    let mut loss = Kahan::default();
    let mut var = Kahan::default();
    for h in 0..horizon {
        for s in 0..mdp.num_states() {
            for a in 0..mdp.num_actions() {
                let w = mu.prob(h, s, a);
                if w <= 0.0 {
                    continue;
                }
                let pred = f.eval(h, s, a) - mdp.reward(h, s, a);
                let row = mdp.transition_row(h, s, a);
                let mut mean_v = 0.0;
                let mut mean_v2 = 0.0;
                let mut mean_sq = 0.0;
                for (s_next, &p) in row.iter().enumerate() {
                    if p > 0.0 {
                        let v = f.next_value(h, s_next);
                        mean_v += p * v;
                        mean_v2 += p * v * v;
                        let d = pred - v;
                        mean_sq += p * d * d;
                    }
                }
                loss.add(w * mean_sq);
                var.add(w * (mean_v2 - mean_v * mean_v));
            }
        }
    }
    Ok((loss.total() / horizon as f64, var.total() / horizon as f64))
}

/// Debiased empirical loss `L̂_DS(f)` over double-sampled tuples. May be
/// negative on small samples; always at least `-2H²`.
pub fn double_sampling_loss(data: &DoubleDataset, f: &QFunction) -> Result<f64> {
    check_data_dims(data.horizon(), f)?;
    let n = data.tuples_per_step();
    if n == 0 {
        return Err(BrlError::EmptyInput("dataset has no tuples".into()));
    }
    let mut acc = Kahan::default();
    for h in 0..data.horizon() {
        for t in data.step(h) {
            let v1 = f.next_value(h, t.s_next);
            let v2 = f.next_value(h, t.s_next2);
            let resid = f.eval(h, t.s, t.a) - t.r - v1;
            acc.add(resid * resid - 0.5 * (v1 - v2) * (v1 - v2));
        }
    }
    Ok(acc.total() / (n * data.horizon()) as f64)
}

/// Exact expectation of [`double_sampling_loss`] under the tuple-generating
/// distribution, by enumeration over `(h, s, a, s', s̃')`.
///
/// This is an independent oracle: it does not evaluate the optimal Bellman
/// operator, yet equals [`bellman_error`] identically.
pub fn expected_double_sampling_loss(
    mdp: &TabularMdp,
    mu: &BatchDistribution,
    f: &QFunction,
) -> Result<f64> {
    check_dims(mdp, f)?;
    let horizon = mdp.horizon();
    let mut acc = Kahan::default();
    for h in 0..horizon {
        for s in 0..mdp.num_states() {
            for a in 0..mdp.num_actions() {
                let w = mu.prob(h, s, a);
                if w <= 0.0 {
                    continue;
                }
                let pred = f.eval(h, s, a) - mdp.reward(h, s, a);
                let row = mdp.transition_row(h, s, a);
                let mut term = Kahan::default();
                for (s1, &p1) in row.iter().enumerate() {
                    if p1 <= 0.0 {
                        continue;
                    }
                    let v1 = f.next_value(h, s1);
                    let resid = pred - v1;
                    for (s2, &p2) in row.iter().enumerate() {
                        if p2 <= 0.0 {
                            continue;
                        }
                        let v2 = f.next_value(h, s2);
                        term.add(p1 * p2 * (resid * resid - 0.5 * (v1 - v2) * (v1 - v2)));
                    }
                }
                acc.add(w * term.total());
            }
        }
    }
    Ok(acc.total() / horizon as f64)
}

/// Per-step fitted Q-iteration loss
/// `ℓ̂_h(f_h, f_{h+1}) = (1/n) Σ (f_h(s,a) − r − V_{f_{h+1}}(s'))²`, the
/// step-`h` summand of `H · L̂_B(f)` over the step slice.
pub fn fqi_step_loss(data_h: &[Transition], f: &QFunction, h: usize) -> Result<f64> {
    if data_h.is_empty() {
        return Err(BrlError::EmptyInput("step slice has no tuples".into()));
    }
    let mut acc = Kahan::default();
    for t in data_h {
        let resid = f.eval(h, t.s, t.a) - t.r - f.next_value(h, t.s_next);
        acc.add(resid * resid);
    }
    Ok(acc.total() / data_h.len() as f64)
}

/// Minimax loss `L̂_MM(f, g)`: the naive loss of `f` minus the loss with
/// `g_h` replacing `f_h` as the predictor (targets still built from `f`).
pub fn minimax_loss(data: &Dataset, f: &QFunction, g: &QFunction) -> Result<f64> {
    check_data_dims(data.horizon(), f)?;
    check_data_dims(data.horizon(), g)?;
    let n = data.tuples_per_step();
    if n == 0 {
        return Err(BrlError::EmptyInput("dataset has no tuples".into()));
    }
    let mut acc = Kahan::default();
    for h in 0..data.horizon() {
        for t in data.step(h) {
            let target = t.r + f.next_value(h, t.s_next);
            let rf = f.eval(h, t.s, t.a) - target;
            let rg = g.eval(h, t.s, t.a) - target;
            acc.add(rf * rf - rg * rg);
        }
    }
    Ok(acc.total() / (n * data.horizon()) as f64)
}

/// Exact expectation of [`minimax_loss`]: equals
/// `E(f) − (1/H) Σ_h ‖g_h − T*_h f_{h+1}‖²_{μ_h}` by enumeration.
pub fn expected_minimax_loss(
    mdp: &TabularMdp,
    mu: &BatchDistribution,
    f: &QFunction,
    g: &QFunction,
) -> Result<f64> {
    check_dims(mdp, f)?;
    check_dims(mdp, g)?;
    let horizon = mdp.horizon();
    let mut acc = Kahan::default();
    for h in 0..horizon {
        for s in 0..mdp.num_states() {
            for a in 0..mdp.num_actions() {
                let w = mu.prob(h, s, a);
                if w <= 0.0 {
                    continue;
                }
                let base = mdp.reward(h, s, a);
                let row = mdp.transition_row(h, s, a);
                let mut term = Kahan::default();
                for (s1, &p1) in row.iter().enumerate() {
                    if p1 <= 0.0 {
                        continue;
                    }
                    let target = base + f.next_value(h, s1);
                    let rf = f.eval(h, s, a) - target;
                    let rg = g.eval(h, s, a) - target;
                    term.add(p1 * (rf * rf - rg * rg));
                }
                acc.add(w * term.total());
            }
        }
    }
    Ok(acc.total() / horizon as f64)
}

fn check_dims(mdp: &TabularMdp, f: &QFunction) -> Result<()> {
    if f.horizon() != mdp.horizon()
        || f.num_states() != mdp.num_states()
        || f.num_actions() != mdp.num_actions()
    {
        return Err(BrlError::ShapeMismatch(
            "Q-function shape does not match the MDP".into(),
        ));
    }
    Ok(())
}

fn check_data_dims(data_horizon: usize, f: &QFunction) -> Result<()> {
    if f.horizon() != data_horizon {
        return Err(BrlError::ShapeMismatch(
            "Q-function horizon does not match the dataset".into(),
        ));
    }
    Ok(())
}
