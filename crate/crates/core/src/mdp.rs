//! Exact tabular episodic-MDP engine.
//!
//! A [`TabularMdp`] is a finite-horizon MDP with `H` steps, `S` states, `A`
//! actions, per-step transition kernels `P_h(s' | s, a)`, deterministic
//! rewards `r_h(s, a) ∈ [0, 1]` and a fixed initial state. Episodes always
//! end after step `H`; no explicit absorbing state is stored.
//!
//! The optimal action-value functions satisfy the backward recursion
//!
//! ```text
//! Q*_h(s,a) = r_h(s,a) + Σ_{s'} P_h(s'|s,a) · max_{a'} Q*_{h+1}(s',a'),   Q*_{H+1} ≡ 0,
//! ```
//!
//! and everything in this module (optimal values, policy values, reach
//! probabilities, concentrability coefficients) is computed by exact dynamic
//! programming in `f64`. Equality checks elsewhere in the crate rely on these
//! being bit-stable, pure functions of their inputs.

use serde::{Deserialize, Serialize};

use crate::error::{BrlError, Result};

/// Tolerance for "sums to one" checks on probability vectors.
pub const PROB_TOL: f64 = 1e-12;

/// A per-step action-value table, indexed `[s][a]`.
pub type QTable = Vec<Vec<f64>>;

/// Finite episodic MDP with deterministic rewards in `[0, 1]`.
///
/// Serialized form (JSON): fields `horizon`, `num_states`, `num_actions`,
/// `initial_state`, `transitions` as a nested `[H][S][A][S]` array and
/// `rewards` as `[H][S][A]`. All indices 0-based.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabularMdp {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    initial_state: usize,
    /// `transitions[h][s][a]` is a probability vector over next states.
    transitions: Vec<Vec<Vec<Vec<f64>>>>,
    /// `rewards[h][s][a]` in `[0, 1]`.
    rewards: Vec<Vec<Vec<f64>>>,
}

impl TabularMdp {
    /// Validates and constructs an MDP.
    pub fn new(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        initial_state: usize,
        transitions: Vec<Vec<Vec<Vec<f64>>>>,
        rewards: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        if horizon == 0 || num_states == 0 || num_actions == 0 {
            return Err(BrlError::invalid("mdp", "H, S, A must all be >= 1"));
        }
        if initial_state >= num_states {
            return Err(BrlError::invalid(
                "mdp",
                format!("initial_state {initial_state} out of range (S = {num_states})"),
            ));
        }
        let check_shape = |ok: bool, what: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(BrlError::ShapeMismatch(format!(
                    "{what} must have shape [H={horizon}][S={num_states}][A={num_actions}]"
                )))
            }
        };
        check_shape(transitions.len() == horizon, "transitions")?;
        check_shape(rewards.len() == horizon, "rewards")?;
        for h in 0..horizon {
            check_shape(transitions[h].len() == num_states, "transitions")?;
            check_shape(rewards[h].len() == num_states, "rewards")?;
            for s in 0..num_states {
                check_shape(transitions[h][s].len() == num_actions, "transitions")?;
                check_shape(rewards[h][s].len() == num_actions, "rewards")?;
                for a in 0..num_actions {
                    let row = &transitions[h][s][a];
                    check_shape(row.len() == num_states, "transition rows")?;
                    let mut sum = 0.0;
                    for &p in row {
                        if p.is_nan() || p < 0.0 {
                            return Err(BrlError::invalid(
                                "mdp",
                                format!("negative transition probability at (h={h}, s={s}, a={a})"),
                            ));
                        }
                        sum += p;
                    }
                    if (sum - 1.0).abs() > PROB_TOL {
                        return Err(BrlError::invalid(
                            "mdp",
                            format!("transition row (h={h}, s={s}, a={a}) sums to {sum}"),
                        ));
                    }
                    let r = rewards[h][s][a];
                    if !(0.0..=1.0).contains(&r) {
                        return Err(BrlError::invalid(
                            "mdp",
                            format!("reward {r} at (h={h}, s={s}, a={a}) outside [0, 1]"),
                        ));
                    }
                }
            }
        }
        Ok(TabularMdp {
            horizon,
            num_states,
            num_actions,
            initial_state,
            transitions,
            rewards,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    /// Transition probability `P_h(s_next | s, a)`.
    pub fn transition(&self, h: usize, s: usize, a: usize, s_next: usize) -> f64 {
        self.transitions[h][s][a][s_next]
    }

    /// The transition row `P_h(· | s, a)`.
    pub fn transition_row(&self, h: usize, s: usize, a: usize) -> &[f64] {
        &self.transitions[h][s][a]
    }

    /// Deterministic reward `r_h(s, a)`.
    pub fn reward(&self, h: usize, s: usize, a: usize) -> f64 {
        self.rewards[h][s][a]
    }

    /// Applies the optimal Bellman operator at step `h` to a next-step table:
    /// `(T*_h f_{h+1})(s,a) = r_h(s,a) + Σ_{s'} P_h(s'|s,a) max_{a'} f_{h+1}(s',a')`.
    ///
    /// For `h = H-1` pass the zero table.
    pub fn bellman_apply(&self, h: usize, f_next: &QTable) -> Result<QTable> {
        if h >= self.horizon {
            return Err(BrlError::ShapeMismatch(format!(
                "step {h} out of range (H = {})",
                self.horizon
            )));
        }
        if f_next.len() != self.num_states || f_next.iter().any(|row| row.len() != self.num_actions)
        {
            return Err(BrlError::ShapeMismatch(
                "next-step table must have shape [S][A]".into(),
            ));
        }
        let max_next: Vec<f64> = f_next
            .iter()
            .map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let mut out = vec![vec![0.0; self.num_actions]; self.num_states];
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let mut exp_next = 0.0;
                for (s_next, &p) in self.transitions[h][s][a].iter().enumerate() {
                    if p > 0.0 {
                        exp_next += p * max_next[s_next];
                    }
                }
                out[s][a] = self.rewards[h][s][a] + exp_next;
            }
        }
        Ok(out)
    }

    /// Optimal action-value tables `Q*_h` for all steps, by backward induction.
    ///
    /// All values lie in `[0, H]` since rewards lie in `[0, 1]`.
    pub fn optimal_q(&self) -> Vec<QTable> {
        let mut tables = vec![Vec::new(); self.horizon];
        let mut next = vec![vec![0.0; self.num_actions]; self.num_states];
        for h in (0..self.horizon).rev() {
            let cur = self
                .bellman_apply(h, &next)
                .expect("internally consistent shapes");
            next = cur.clone();
            tables[h] = cur;
        }
        tables
    }

    /// Exact value `V_1^π(s_1)` of a deterministic policy.
    pub fn policy_value(&self, pi: &Policy) -> Result<f64> {
        pi.validate(self)?;
        let mut v_next = vec![0.0; self.num_states];
        for h in (0..self.horizon).rev() {
            let mut v = vec![0.0; self.num_states];
            for s in 0..self.num_states {
                let a = pi.action(h, s);
                let mut exp_next = 0.0;
                for (s_next, &p) in self.transitions[h][s][a].iter().enumerate() {
                    if p > 0.0 {
                        exp_next += p * v_next[s_next];
                    }
                }
                v[s] = self.rewards[h][s][a] + exp_next;
            }
            v_next = v;
        }
        Ok(v_next[self.initial_state])
    }

    /// State marginal of `s'` when `(s, a) ~ μ_h` and `s' ~ P_h(·|s,a)`:
    /// `ν_h(s') = Σ_{s,a} μ_h(s,a) P_h(s'|s,a)`.
    pub fn next_state_marginal(&self, mu: &BatchDistribution, h: usize) -> Result<Vec<f64>> {
        mu.check_compatible(self)?;
        if h >= self.horizon {
            return Err(BrlError::ShapeMismatch(format!(
                "step {h} out of range (H = {})",
                self.horizon
            )));
        }
        let mut nu = vec![0.0; self.num_states];
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let w = mu.prob(h, s, a);
                if w > 0.0 {
                    for (s_next, &p) in self.transitions[h][s][a].iter().enumerate() {
                        nu[s_next] += w * p;
                    }
                }
            }
        }
        Ok(nu)
    }

    /// Maximum over deterministic Markov policies of the probability of being
    /// at state `s` at step `h` (0-based), starting from the initial state.
    ///
    /// Backward induction on `m_τ(x) = max_a Σ_{x'} P_τ(x'|x,a) m_{τ+1}(x')`
    /// with terminal indicator `m_h(x) = 1{x = s}`. Deterministic Markov
    /// policies attain the supremum over all policies in tabular MDPs.
    pub fn max_reach_probability(&self, h: usize, s: usize) -> f64 {
        let m = self.max_reach_from(h, s);
        m[self.initial_state]
    }

    /// As [`Self::max_reach_probability`] but returns the whole step-0 vector
    /// of reach probabilities indexed by starting state. Used for the
    /// restart-based concentrability variant.
    fn max_reach_from(&self, h: usize, s: usize) -> Vec<f64> {
        self.max_reach_between(0, h, s)
    }

    /// The backward induction runs from step `t` down to step `start`
    /// (exclusive terminal at `t`), returning the value vector at step
    /// `start`, i.e. the max over policies of reaching state `s` at step `t`
    /// conditioned on being at each state at step `start`.
    fn max_reach_between(&self, start: usize, t: usize, s: usize) -> Vec<f64> {
        let mut m: Vec<f64> = (0..self.num_states).map(|x| f64::from(x == s)).collect();
        for tau in (start..t).rev() {
            let mut prev = vec![0.0; self.num_states];
            for x in 0..self.num_states {
                let mut best: f64 = 0.0;
                for a in 0..self.num_actions {
                    let mut acc = 0.0;
                    for (x_next, &p) in self.transitions[tau][x][a].iter().enumerate() {
                        if p > 0.0 {
                            acc += p * m[x_next];
                        }
                    }
                    best = best.max(acc);
                }
                prev[x] = best;
            }
            m = prev;
        }
        m
    }

    /// Worst-case density ratio between any policy's state-action marginal
    /// and the batch distribution:
    /// `C = sup_{h,s,a} [max_π P_h^π(s,a)] / μ_h(s,a)`.
    ///
    /// Since the action at the target step is taken with probability one by
    /// the maximizing policy, the numerator equals the max reach probability
    /// of `s` at `h`. Pairs with zero reach probability impose no constraint;
    /// a reachable pair with `μ_h(s,a) = 0` yields an infinite coefficient.
    pub fn concentrability(&self, mu: &BatchDistribution) -> Result<ConcentrabilityReport> {
        mu.check_compatible(self)?;
        let mut report = ConcentrabilityReport {
            coefficient: 0.0,
            witness: (0, self.initial_state, 0),
        };
        for h in 0..self.horizon {
            for s in 0..self.num_states {
                let reach = self.max_reach_probability(h, s);
                if reach <= 0.0 {
                    continue;
                }
                for a in 0..self.num_actions {
                    let m = mu.prob(h, s, a);
                    let ratio = if m > 0.0 { reach / m } else { f64::INFINITY };
                    if ratio > report.coefficient {
                        report.coefficient = ratio;
                        report.witness = (h, s, a);
                    }
                }
            }
        }
        Ok(report)
    }

    /// Restart-based concentrability variant: the worst density ratio at any
    /// later step `t` when restarting either from `μ_h` at step `h` or from
    /// `ν_h × Unif(A)` at step `h+1`, maximized over policies.
    ///
    /// For `H = 1` the supremum is empty and the neutral value 1 is returned.
    pub fn concentrability_tilde(&self, mu: &BatchDistribution) -> Result<ConcentrabilityReport> {
        mu.check_compatible(self)?;
        let mut report = ConcentrabilityReport {
            coefficient: if self.horizon == 1 { 1.0 } else { 0.0 },
            witness: (0, self.initial_state, 0),
        };
        for h in 0..self.horizon {
            // State distribution at step h+1 shared by both restart modes:
            // drawing (s_h, a_h) ~ mu_h and one forced transition lands on
            // nu_h; the nu-restart starts there directly.
            let nu_h = self.next_state_marginal(mu, h)?;
            // Under the nu-restart the action at step h+1 is uniform, so the
            // state distribution one step later is nu_h pushed through the
            // action-averaged kernel.
            let pushed: Option<Vec<f64>> = if h + 1 < self.horizon {
                let mut rho = vec![0.0; self.num_states];
                let inv_a = 1.0 / self.num_actions as f64;
                for x in 0..self.num_states {
                    if nu_h[x] <= 0.0 {
                        continue;
                    }
                    for a in 0..self.num_actions {
                        for (x2, &p) in self.transitions[h + 1][x][a].iter().enumerate() {
                            rho[x2] += nu_h[x] * inv_a * p;
                        }
                    }
                }
                Some(rho)
            } else {
                None
            };
            for t in (h + 1)..self.horizon {
                for s in 0..self.num_states {
                    // mu-restart: policy free from step h+1 on; the action at
                    // step t is then taken with probability one.
                    let m1 = self.max_reach_between(h + 1, t, s);
                    let reach_mu: f64 = (0..self.num_states).map(|x| nu_h[x] * m1[x]).sum();
                    // nu-restart: uniform action at h+1, policy free afterwards.
                    let reach_tilde = if t == h + 1 {
                        // handled per-action below
                        f64::NAN
                    } else {
                        let rho = pushed.as_ref().expect("t > h+1 implies h+1 < H");
                        let m2 = self.max_reach_between(h + 2, t, s);
                        (0..self.num_states).map(|x| rho[x] * m2[x]).sum()
                    };
                    for a in 0..self.num_actions {
                        let mass = mu.prob(t, s, a);
                        let tilde_num = if t == h + 1 {
                            nu_h[s] / self.num_actions as f64
                        } else {
                            reach_tilde
                        };
                        let mu_num = if t == h + 1 { nu_h[s] } else { reach_mu };
                        let num = mu_num.max(tilde_num);
                        if num <= 0.0 {
                            continue;
                        }
                        let ratio = if mass > 0.0 {
                            num / mass
                        } else {
                            f64::INFINITY
                        };
                        if ratio > report.coefficient {
                            report.coefficient = ratio;
                            report.witness = (t, s, a);
                        }
                    }
                }
            }
        }
        Ok(report)
    }
}

/// Per-step sampling distributions `μ_h` over state-action pairs.
///
/// Serialized form (JSON): field `mu` as a `[H][S][A]` array.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchDistribution {
    mu: Vec<Vec<Vec<f64>>>,
}

impl BatchDistribution {
    /// Validates per-step distributions: nonnegative, each summing to one.
    pub fn new(mu: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if mu.is_empty() {
            return Err(BrlError::invalid("distribution", "no steps"));
        }
        for (h, step) in mu.iter().enumerate() {
            let mut sum = 0.0;
            for row in step {
                for &p in row {
                    if p.is_nan() || p < 0.0 {
                        return Err(BrlError::invalid(
                            "distribution",
                            format!("negative mass at step {h}"),
                        ));
                    }
                    sum += p;
                }
            }
            if (sum - 1.0).abs() > PROB_TOL {
                return Err(BrlError::invalid(
                    "distribution",
                    format!("step {h} sums to {sum}"),
                ));
            }
        }
        Ok(BatchDistribution { mu })
    }

    /// Uniform distribution over all `(s, a)` pairs at every step.
    pub fn uniform(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        let w = 1.0 / (num_states * num_actions) as f64;
        BatchDistribution {
            mu: vec![vec![vec![w; num_actions]; num_states]; horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.mu.len()
    }

    /// Mass `μ_h(s, a)`.
    pub fn prob(&self, h: usize, s: usize, a: usize) -> f64 {
        self.mu[h][s][a]
    }

    pub(crate) fn check_compatible(&self, mdp: &TabularMdp) -> Result<()> {
        let ok = self.mu.len() == mdp.horizon()
            && self.mu.iter().all(|step| {
                step.len() == mdp.num_states()
                    && step.iter().all(|row| row.len() == mdp.num_actions())
            });
        if ok {
            Ok(())
        } else {
            Err(BrlError::ShapeMismatch(
                "distribution shape does not match the MDP".into(),
            ))
        }
    }

    /// The step-`h` slice as a flat vector over the `(s, a)` grid, row-major.
    pub fn flat_step(&self, h: usize) -> Vec<f64> {
        self.mu[h]
            .iter()
            .flat_map(|row| row.iter().cloned())
            .collect()
    }
}

/// Deterministic non-stationary policy: one `state -> action` map per step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    actions: Vec<Vec<usize>>,
}

impl Policy {
    pub fn new(actions: Vec<Vec<usize>>) -> Self {
        Policy { actions }
    }

    pub fn action(&self, h: usize, s: usize) -> usize {
        self.actions[h][s]
    }

    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        let ok = self.actions.len() == mdp.horizon()
            && self.actions.iter().all(|step| {
                step.len() == mdp.num_states() && step.iter().all(|&a| a < mdp.num_actions())
            });
        if ok {
            Ok(())
        } else {
            Err(BrlError::invalid(
                "policy",
                "policy shape or action indices do not match the MDP",
            ))
        }
    }
}

/// Result of a concentrability computation.
///
/// `coefficient` may be `f64::INFINITY` when some reachable pair has zero
/// batch mass; downstream bound evaluators treat that as an assumption
/// violation rather than a large float.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConcentrabilityReport {
    /// The supremal density ratio.
    pub coefficient: f64,
    /// `(h, s, a)` attaining the supremum.
    pub witness: (usize, usize, usize),
}

impl ConcentrabilityReport {
    pub fn is_finite(&self) -> bool {
        self.coefficient.is_finite()
    }
}

/// Both sides of the surrogate inequality: the value suboptimality
/// `gap = V*_1(s_1) − V^{π_f}_1(s_1)` of the greedy policy of `f`, and the
/// bound `2H sqrt(C · E(f))`. The gap never exceeds the bound.
///
/// Errors if the concentrability coefficient is infinite.
pub fn suboptimality_check(
    mdp: &TabularMdp,
    mu: &BatchDistribution,
    f: &crate::func_approx::QFunction,
) -> Result<(f64, f64)> {
    let report = mdp.concentrability(mu)?;
    if !report.is_finite() {
        return Err(BrlError::AssumptionViolated(format!(
            "infinite concentrability at (h={}, s={}, a={})",
            report.witness.0, report.witness.1, report.witness.2
        )));
    }
    let q_star = mdp.optimal_q();
    let v_star = q_star[0][mdp.initial_state()]
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let pi = f.greedy_policy();
    let gap = v_star - mdp.policy_value(&pi)?;
    let bellman = crate::risk::bellman_error(mdp, mu, f)?;
    let bound = 2.0 * mdp.horizon() as f64 * (report.coefficient * bellman).sqrt();
    Ok((gap, bound))
}
