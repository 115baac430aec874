//! Batch learners: double-sampling ERM, fitted Q-iteration, and the minimax
//! estimator.
//!
//! All learners are deterministic functions of `(family, data)`. Finite
//! product families with at most [`ENUM_CAP`] member combinations are
//! minimized exactly by enumeration with ties broken toward the
//! lexicographically smallest index vector; larger or continuous families
//! fall back to blockwise sweeps where every block is an exact per-step
//! least-squares fit (enumeration for finite steps). The blockwise scheme is
//! a heuristic for the coupled objectives; it is exact for FQI's per-step
//! problems and for finite families under the enumeration cap.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{BrlError, Result};
use crate::func_approx::{
    least_squares_fit, step_values_table, FamilyStep, FunctionFamily, QFunction, StepValues,
    N_PROBE,
};
use crate::mdp::{BatchDistribution, TabularMdp};
use crate::risk::{
    bellman_error, double_sampling_loss, empirical_bellman_loss, minimax_loss, Dataset,
    DoubleDataset,
};

/// Largest finite member-combination count minimized by full enumeration.
pub const ENUM_CAP: u128 = 100_000;

/// Maximum blockwise sweeps for finite families past the enumeration cap.
pub const FINITE_SWEEPS: usize = 50;

/// Maximum blockwise sweeps for continuous families.
pub const CONTINUOUS_SWEEPS: usize = 100;

/// Loss-change tolerance that terminates blockwise sweeps.
pub const SWEEP_TOL: f64 = 1e-9;

/// Diagnostics accumulated by a learner run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Number of member combinations enumerated (exact finite argmin).
    pub enumerated: Option<u64>,
    /// Blockwise sweeps executed, when the fallback engaged.
    pub sweeps: Option<u64>,
    /// Whether the reported minimizer is exact rather than blockwise.
    pub exact_argmin: bool,
    /// Chosen member indices per step for finite families.
    pub member_indices: Option<Vec<usize>>,
    /// Whether the family minimum used by the excess risk was exact.
    pub min_risk_exact: Option<bool>,
}

/// Output of a learner: the fitted function, its empirical objective, and
/// the excess risk once [`report_excess_risk`] has filled it in.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearnerResult {
    pub f_hat: QFunction,
    #[serde(rename = "empirical_loss")]
    pub achieved_empirical_loss: f64,
    pub excess_risk: Option<f64>,
    /// Inner helper function of the minimax estimator, absent otherwise.
    pub g_hat: Option<QFunction>,
    pub diagnostics: Diagnostics,
}

/// Odometer over per-step member indices in lexicographic order.
struct IndexProduct {
    sizes: Vec<usize>,
    current: Vec<usize>,
    done: bool,
}

impl IndexProduct {
    fn new(sizes: Vec<usize>) -> Self {
        let current = vec![0; sizes.len()];
        IndexProduct {
            done: sizes.contains(&0),
            sizes,
            current,
        }
    }
}

impl Iterator for IndexProduct {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.current.clone();
        // rightmost digit fastest keeps lexicographic order
        let mut i = self.sizes.len();
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            self.current[i] += 1;
            if self.current[i] < self.sizes[i] {
                break;
            }
            self.current[i] = 0;
        }
        Some(out)
    }
}

fn product_size(sizes: &[usize]) -> u128 {
    sizes.iter().fold(1u128, |acc, &s| {
        acc.saturating_mul(s as u128).min(u128::MAX / 2)
    })
}

/// Member whose table is closest to zero in the unweighted grid norm.
fn zero_nearest_index(members: &[Vec<Vec<f64>>]) -> usize {
    let mut best = 0;
    let mut best_norm = f64::INFINITY;
    for (i, m) in members.iter().enumerate() {
        let norm: f64 = m.iter().flatten().map(|v| v * v).sum();
        if norm < best_norm {
            best_norm = norm;
            best = i;
        }
    }
    best
}

/// Initial member for blockwise descent: nearest-to-zero member for finite
/// steps, zero coefficients otherwise.
fn initial_step_values(step: &FamilyStep) -> StepValues {
    match step {
        FamilyStep::Finite { members } => {
            StepValues::Table(members[zero_nearest_index(members)].clone())
        }
        FamilyStep::Linear { .. } | FamilyStep::SparseLinear { .. } => {
            StepValues::Weights(vec![0.0; step.size_parameter()])
        }
        FamilyStep::Kernel { gram, .. } => StepValues::Coeffs(vec![0.0; gram.len()]),
    }
}

/// State values `V(s) = max_a f_h(s, a)` of one step representation.
fn state_values(family: &FunctionFamily, h: usize, sv: &StepValues) -> Vec<f64> {
    step_values_table(family, h, sv)
        .into_iter()
        .map(|row| row.into_iter().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Empirical risk minimizer of the double-sampling loss.
pub fn erm_double_sampling(
    family: &Arc<FunctionFamily>,
    data: &DoubleDataset,
) -> Result<LearnerResult> {
    if family.horizon() != data.horizon() {
        return Err(BrlError::ShapeMismatch(
            "family horizon does not match the dataset".into(),
        ));
    }
    if let Some(sizes) = family.finite_step_sizes() {
        if product_size(&sizes) <= ENUM_CAP {
            // exact argmin by lexicographic enumeration
            let mut best: Option<(f64, Vec<usize>)> = None;
            let mut count = 0u64;
            for indices in IndexProduct::new(sizes) {
                let candidate = family.finite_member(&indices)?;
                let loss = double_sampling_loss(data, &candidate)?;
                count += 1;
                if best.as_ref().is_none_or(|(b, _)| loss < *b) {
                    best = Some((loss, indices));
                }
            }
            let (loss, indices) = best.expect("nonempty family");
            let f_hat = family.finite_member(&indices)?;
            return Ok(LearnerResult {
                f_hat,
                achieved_empirical_loss: loss,
                excess_risk: None,
                g_hat: None,
                diagnostics: Diagnostics {
                    enumerated: Some(count),
                    sweeps: None,
                    exact_argmin: true,
                    member_indices: Some(indices),
                    min_risk_exact: None,
                },
            });
        }
    }
    // Blockwise sweeps. Each step update fixes all other steps; the
    // double-sampling correction is constant in f_h, so continuous blocks
    // reduce to least-squares fits on targets r + V_{f_{h+1}}(s').
    let horizon = family.horizon();
    let mut steps: Vec<StepValues> = (0..horizon)
        .map(|h| initial_step_values(family.step(h)))
        .collect();
    let finite = family.finite_step_sizes().is_some();
    let max_sweeps = if finite {
        FINITE_SWEEPS
    } else {
        CONTINUOUS_SWEEPS
    };
    let mut best_steps = steps.clone();
    let mut best_loss = double_sampling_loss(
        data,
        &QFunction::from_family(Arc::clone(family), steps.clone())?,
    )?;
    let mut prev_loss = best_loss;
    let mut sweeps = 0u64;
    for _ in 0..max_sweeps {
        sweeps += 1;
        let mut changed = false;
        for h in (0..horizon).rev() {
            match family.step(h) {
                FamilyStep::Finite { members } => {
                    let mut best_i = usize::MAX;
                    let mut best_block = f64::INFINITY;
                    for (i, m) in members.iter().enumerate() {
                        let mut trial = steps.clone();
                        trial[h] = StepValues::Table(m.clone());
                        let loss = double_sampling_loss(
                            data,
                            &QFunction::from_family(Arc::clone(family), trial)?,
                        )?;
                        if loss < best_block {
                            best_block = loss;
                            best_i = i;
                        }
                    }
                    let new_sv = StepValues::Table(members[best_i].clone());
                    if new_sv != steps[h] {
                        changed = true;
                    }
                    steps[h] = new_sv;
                }
                step => {
                    let values_next: Option<Vec<f64>> = if h + 1 < horizon {
                        Some(state_values(family, h + 1, &steps[h + 1]))
                    } else {
                        None
                    };
                    let pairs: Vec<((usize, usize), f64)> = data
                        .step(h)
                        .iter()
                        .map(|t| {
                            let v = values_next.as_ref().map_or(0.0, |vs| vs[t.s_next]);
                            ((t.s, t.a), t.r + v)
                        })
                        .collect();
                    let fit =
                        least_squares_fit(step, family.num_actions(), &pairs, family.range())?;
                    if fit.values != steps[h] {
                        changed = true;
                    }
                    steps[h] = fit.values;
                }
            }
        }
        let loss = double_sampling_loss(
            data,
            &QFunction::from_family(Arc::clone(family), steps.clone())?,
        )?;
        if loss < best_loss {
            best_loss = loss;
            best_steps = steps.clone();
        }
        if !changed || (prev_loss - loss).abs() <= SWEEP_TOL {
            break;
        }
        prev_loss = loss;
    }
    let f_hat = QFunction::from_family(Arc::clone(family), best_steps)?;
    Ok(LearnerResult {
        f_hat,
        achieved_empirical_loss: best_loss,
        excess_risk: None,
        g_hat: None,
        diagnostics: Diagnostics {
            enumerated: None,
            sweeps: Some(sweeps),
            exact_argmin: false,
            member_indices: None,
            min_risk_exact: None,
        },
    })
}

/// Fitted Q-iteration: the backward loop of per-step least-squares fits onto
/// bootstrapped targets `r + V_{f̂_{h+1}}(s')`.
pub fn fqi(family: &Arc<FunctionFamily>, data: &Dataset) -> Result<LearnerResult> {
    let horizon = family.horizon();
    if horizon != data.horizon() {
        return Err(BrlError::ShapeMismatch(
            "family horizon does not match the dataset".into(),
        ));
    }
    let mut steps: Vec<Option<StepValues>> = vec![None; horizon];
    let mut member_indices = vec![None; horizon];
    let mut values_next: Option<Vec<f64>> = None;
    for h in (0..horizon).rev() {
        if data.step(h).is_empty() {
            return Err(BrlError::EmptyInput(format!("no tuples at step {h}")));
        }
        let pairs: Vec<((usize, usize), f64)> = data
            .step(h)
            .iter()
            .map(|t| {
                let v = values_next.as_ref().map_or(0.0, |vs| vs[t.s_next]);
                ((t.s, t.a), t.r + v)
            })
            .collect();
        let fit = least_squares_fit(family.step(h), family.num_actions(), &pairs, family.range())?;
        values_next = Some(state_values(family, h, &fit.values));
        member_indices[h] = fit.member_index;
        steps[h] = Some(fit.values);
    }
    let steps: Vec<StepValues> = steps.into_iter().map(|s| s.expect("all fitted")).collect();
    let f_hat = QFunction::from_family(Arc::clone(family), steps)?;
    let loss = empirical_bellman_loss(data, &f_hat)?;
    let indices: Option<Vec<usize>> = member_indices.into_iter().collect();
    Ok(LearnerResult {
        f_hat,
        achieved_empirical_loss: loss,
        excess_risk: None,
        g_hat: None,
        diagnostics: Diagnostics {
            enumerated: None,
            sweeps: None,
            // each per-step problem is solved exactly
            exact_argmin: true,
            member_indices: indices,
            min_risk_exact: None,
        },
    })
}

/// The empirical regression of `r + V_{f_{h+1}}(s')` onto each helper step:
/// the inner maximizer of the minimax loss.
fn inner_fit(
    family_f: &FunctionFamily,
    family_g: &Arc<FunctionFamily>,
    data: &Dataset,
    steps_f: &[StepValues],
) -> Result<Vec<StepValues>> {
    let horizon = family_g.horizon();
    let mut out = Vec::with_capacity(horizon);
    for h in 0..horizon {
        let values_next: Option<Vec<f64>> = if h + 1 < horizon {
            Some(state_values(family_f, h + 1, &steps_f[h + 1]))
        } else {
            None
        };
        let pairs: Vec<((usize, usize), f64)> = data
            .step(h)
            .iter()
            .map(|t| {
                let v = values_next.as_ref().map_or(0.0, |vs| vs[t.s_next]);
                ((t.s, t.a), t.r + v)
            })
            .collect();
        if pairs.is_empty() {
            return Err(BrlError::EmptyInput(format!("no tuples at step {h}")));
        }
        let fit = least_squares_fit(
            family_g.step(h),
            family_g.num_actions(),
            &pairs,
            family_g.range(),
        )?;
        out.push(fit.values);
    }
    Ok(out)
}

/// Minimax estimator: `argmin_f max_g L̂_MM(f, g)`, with the inner maximum
/// solved exactly as a per-step least-squares regression onto the helper
/// family.
pub fn minimax(
    family_f: &Arc<FunctionFamily>,
    family_g: &Arc<FunctionFamily>,
    data: &Dataset,
) -> Result<LearnerResult> {
    let horizon = family_f.horizon();
    if horizon != data.horizon() || family_g.horizon() != horizon {
        return Err(BrlError::ShapeMismatch(
            "family horizons must match the dataset".into(),
        ));
    }
    let objective = |steps_f: &[StepValues]| -> Result<(f64, QFunction, QFunction)> {
        let f = QFunction::from_family(Arc::clone(family_f), steps_f.to_vec())?;
        let g_steps = inner_fit(family_f, family_g, data, steps_f)?;
        let g = QFunction::from_family(Arc::clone(family_g), g_steps)?;
        let loss = minimax_loss(data, &f, &g)?;
        Ok((loss, f, g))
    };

    if let Some(sizes) = family_f.finite_step_sizes() {
        if product_size(&sizes) <= ENUM_CAP {
            let mut best: Option<(f64, Vec<usize>, QFunction, QFunction)> = None;
            let mut count = 0u64;
            for indices in IndexProduct::new(sizes) {
                let steps_f: Vec<StepValues> = indices
                    .iter()
                    .enumerate()
                    .map(|(h, &i)| match family_f.step(h) {
                        FamilyStep::Finite { members } => StepValues::Table(members[i].clone()),
                        _ => unreachable!("finite product checked above"),
                    })
                    .collect();
                let (loss, f, g) = objective(&steps_f)?;
                count += 1;
                if best.as_ref().is_none_or(|(b, _, _, _)| loss < *b) {
                    best = Some((loss, indices, f, g));
                }
            }
            let (loss, indices, f_hat, g_hat) = best.expect("nonempty family");
            return Ok(LearnerResult {
                f_hat,
                achieved_empirical_loss: loss,
                excess_risk: None,
                g_hat: Some(g_hat),
                diagnostics: Diagnostics {
                    enumerated: Some(count),
                    sweeps: None,
                    exact_argmin: true,
                    member_indices: Some(indices),
                    min_risk_exact: None,
                },
            });
        }
    }
    // Blockwise alternation with the inner fit refreshed every sweep.
    let mut steps_f: Vec<StepValues> = (0..horizon)
        .map(|h| initial_step_values(family_f.step(h)))
        .collect();
    let (mut best_loss, mut best_f, mut best_g) = objective(&steps_f)?;
    let mut prev_loss = best_loss;
    let mut sweeps = 0u64;
    for _ in 0..CONTINUOUS_SWEEPS {
        sweeps += 1;
        let mut changed = false;
        for h in (0..horizon).rev() {
            match family_f.step(h) {
                FamilyStep::Finite { members } => {
                    let mut best_i = usize::MAX;
                    let mut best_block = f64::INFINITY;
                    for (i, m) in members.iter().enumerate() {
                        let mut trial = steps_f.clone();
                        trial[h] = StepValues::Table(m.clone());
                        let (loss, _, _) = objective(&trial)?;
                        if loss < best_block {
                            best_block = loss;
                            best_i = i;
                        }
                    }
                    let new_sv = StepValues::Table(members[best_i].clone());
                    if new_sv != steps_f[h] {
                        changed = true;
                    }
                    steps_f[h] = new_sv;
                }
                step => {
                    let values_next: Option<Vec<f64>> = if h + 1 < horizon {
                        Some(state_values(family_f, h + 1, &steps_f[h + 1]))
                    } else {
                        None
                    };
                    let pairs: Vec<((usize, usize), f64)> = data
                        .step(h)
                        .iter()
                        .map(|t| {
                            let v = values_next.as_ref().map_or(0.0, |vs| vs[t.s_next]);
                            ((t.s, t.a), t.r + v)
                        })
                        .collect();
                    let fit =
                        least_squares_fit(step, family_f.num_actions(), &pairs, family_f.range())?;
                    if fit.values != steps_f[h] {
                        changed = true;
                    }
                    steps_f[h] = fit.values;
                }
            }
        }
        let (loss, f, g) = objective(&steps_f)?;
        if loss < best_loss {
            best_loss = loss;
            best_f = f;
            best_g = g;
        }
        if !changed || (prev_loss - loss).abs() <= SWEEP_TOL {
            break;
        }
        prev_loss = loss;
    }
    Ok(LearnerResult {
        f_hat: best_f,
        achieved_empirical_loss: best_loss,
        excess_risk: None,
        g_hat: Some(best_g),
        diagnostics: Diagnostics {
            enumerated: None,
            sweeps: Some(sweeps),
            exact_argmin: false,
            member_indices: None,
            min_risk_exact: None,
        },
    })
}

/// Excess Bellman risk of a learner output:
/// `E(f̂) − min_{f ∈ F} E(f)`, stored back into the result.
///
/// The family minimum is exact for finite product families under the
/// enumeration cap; otherwise it is the minimum over [`N_PROBE`] sampled
/// members plus `f̂` itself, drawn from a fixed internal stream so repeated
/// calls stay bit-identical, and the result is flagged as inexact.
pub fn report_excess_risk(
    mdp: &TabularMdp,
    mu: &BatchDistribution,
    family: &Arc<FunctionFamily>,
    result: &mut LearnerResult,
) -> Result<f64> {
    let e_hat = bellman_error(mdp, mu, &result.f_hat)?;
    let mut exact = false;
    let mut min_e = f64::INFINITY;
    if let Some(sizes) = family.finite_step_sizes() {
        if product_size(&sizes) <= ENUM_CAP {
            for indices in IndexProduct::new(sizes) {
                let f = family.finite_member(&indices)?;
                min_e = min_e.min(bellman_error(mdp, mu, &f)?);
            }
            exact = true;
        }
    }
    if !exact {
        let mut rng = crate::rng::stream_rng(0xC0FFEE, 0, 0);
        min_e = e_hat;
        for _ in 0..N_PROBE {
            let f = family.sample_member(&mut rng);
            min_e = min_e.min(bellman_error(mdp, mu, &f)?);
        }
    }
    let excess = e_hat - min_e;
    result.excess_risk = Some(excess);
    result.diagnostics.min_risk_exact = Some(exact);
    Ok(excess)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::func_approx::FamilyStep;
    use crate::risk::{DoubleTransition, Transition};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn finite_family(
        num_states: usize,
        num_actions: usize,
        range: f64,
        members_per_step: Vec<Vec<Vec<Vec<f64>>>>,
    ) -> Arc<FunctionFamily> {
        let steps = members_per_step
            .into_iter()
            .map(|members| FamilyStep::Finite { members })
            .collect();
        Arc::new(FunctionFamily::new(num_states, num_actions, range, steps).unwrap())
    }

    #[test]
    fn singleton_family_is_returned_unchanged() {
        let member = vec![vec![0.4, 0.6]];
        let fam = finite_family(1, 2, 1.0, vec![vec![member.clone()]]);
        let data = DoubleDataset::new(vec![vec![DoubleTransition {
            s: 0,
            a: 0,
            r: 0.5,
            s_next: 0,
            s_next2: 0,
        }]])
        .unwrap();
        let out = erm_double_sampling(&fam, &data).unwrap();
        assert_eq!(out.diagnostics.member_indices, Some(vec![0]));
        assert_eq!(out.f_hat.step_table(0), member);
    }

    #[test]
    fn erm_picks_member_with_smaller_loss_by_hand() {
        // H = 1, members A = 0.3 and B = 0.8 on a single state-action pair;
        // three tuples with rewards 0.2, 0.4, 0.3: A's residuals are
        // 0.1/0.1/0.0 squared, strictly better than B's.
        let fam = finite_family(1, 1, 1.0, vec![vec![vec![vec![0.3]], vec![vec![0.8]]]]);
        let data = DoubleDataset::new(vec![vec![
            DoubleTransition {
                s: 0,
                a: 0,
                r: 0.2,
                s_next: 0,
                s_next2: 0,
            },
            DoubleTransition {
                s: 0,
                a: 0,
                r: 0.4,
                s_next: 0,
                s_next2: 0,
            },
            DoubleTransition {
                s: 0,
                a: 0,
                r: 0.3,
                s_next: 0,
                s_next2: 0,
            },
        ]])
        .unwrap();
        let out = erm_double_sampling(&fam, &data).unwrap();
        assert_eq!(out.diagnostics.member_indices, Some(vec![0]));
        assert_abs_diff_eq!(
            out.achieved_empirical_loss,
            (0.01 + 0.01) / 3.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn erm_enumeration_is_global_minimum() {
        let mut rng = crate::rng::seeded_rng(5);
        let members: Vec<Vec<Vec<f64>>> = (0..3)
            .map(|_| {
                vec![
                    (0..2)
                        .map(|_| rng.gen_range(-1.0..1.0))
                        .collect::<Vec<f64>>();
                    2
                ]
            })
            .collect();
        let members2 = members.clone();
        let fam = finite_family(2, 2, 1.0, vec![members, members2]);
        let steps: Vec<Vec<DoubleTransition>> = (0..2)
            .map(|_| {
                (0..10)
                    .map(|_| DoubleTransition {
                        s: rng.gen_range(0..2),
                        a: rng.gen_range(0..2),
                        r: rng.gen(),
                        s_next: rng.gen_range(0..2),
                        s_next2: rng.gen_range(0..2),
                    })
                    .collect()
            })
            .collect();
        let data = DoubleDataset::new(steps).unwrap();
        let out = erm_double_sampling(&fam, &data).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let f = fam.finite_member(&[i, j]).unwrap();
                let loss = double_sampling_loss(&data, &f).unwrap();
                assert!(out.achieved_empirical_loss <= loss + 1e-15);
            }
        }
    }

    #[test]
    fn fqi_single_step_reduces_to_reward_regression() {
        let fam = finite_family(1, 1, 1.0, vec![vec![vec![vec![0.25]], vec![vec![0.5]]]]);
        let data = Dataset::new(vec![vec![
            Transition {
                s: 0,
                a: 0,
                r: 0.45,
                s_next: 0,
            },
            Transition {
                s: 0,
                a: 0,
                r: 0.55,
                s_next: 0,
            },
        ]])
        .unwrap();
        let out = fqi(&fam, &data).unwrap();
        assert_eq!(out.diagnostics.member_indices, Some(vec![1]));
    }

    #[test]
    fn fqi_per_step_choices_match_enumeration() {
        let mut rng = crate::rng::seeded_rng(17);
        for trial in 0..20 {
            let members: Vec<Vec<Vec<f64>>> = (0..2)
                .map(|_| {
                    vec![
                        (0..2)
                            .map(|_| rng.gen_range(-1.0..1.0))
                            .collect::<Vec<f64>>();
                        2
                    ]
                })
                .collect();
            let fam = finite_family(2, 2, 1.5, vec![members.clone(), members.clone()]);
            let steps: Vec<Vec<Transition>> = (0..2)
                .map(|_| {
                    (0..5)
                        .map(|_| Transition {
                            s: rng.gen_range(0..2),
                            a: rng.gen_range(0..2),
                            r: rng.gen(),
                            s_next: rng.gen_range(0..2),
                        })
                        .collect()
                })
                .collect();
            let data = Dataset::new(steps).unwrap();
            let out = fqi(&fam, &data).unwrap();
            // each step's choice minimizes the per-step loss against the
            // already fitted next step
            for h in (0..2).rev() {
                let chosen = crate::risk::fqi_step_loss(data.step(h), &out.f_hat, h).unwrap();
                for i in 0..2 {
                    let mut tables = vec![out.f_hat.step_table(0), out.f_hat.step_table(1)];
                    tables[h] = members[i].clone();
                    let alt = QFunction::from_tables(tables, 1.5).unwrap();
                    let alt_loss = crate::risk::fqi_step_loss(data.step(h), &alt, h).unwrap();
                    assert!(
                        chosen <= alt_loss + 1e-12,
                        "trial {trial}: step {h} choice not minimal"
                    );
                }
            }
        }
    }

    #[test]
    fn minimax_matches_exhaustive_min_max() {
        let mut rng = crate::rng::seeded_rng(23);
        for _ in 0..10 {
            let f_members: Vec<Vec<Vec<f64>>> = (0..2)
                .map(|_| {
                    vec![
                        (0..2)
                            .map(|_| rng.gen_range(-1.0..1.0))
                            .collect::<Vec<f64>>();
                        2
                    ]
                })
                .collect();
            let g_members: Vec<Vec<Vec<f64>>> = (0..2)
                .map(|_| {
                    vec![
                        (0..2)
                            .map(|_| rng.gen_range(-1.0..1.0))
                            .collect::<Vec<f64>>();
                        2
                    ]
                })
                .collect();
            let fam_f = finite_family(2, 2, 1.5, vec![f_members.clone()]);
            let fam_g = finite_family(2, 2, 1.5, vec![g_members.clone()]);
            let data = Dataset::new(vec![(0..4)
                .map(|_| Transition {
                    s: rng.gen_range(0..2),
                    a: rng.gen_range(0..2),
                    r: rng.gen(),
                    s_next: rng.gen_range(0..2),
                })
                .collect()])
            .unwrap();
            let out = minimax(&fam_f, &fam_g, &data).unwrap();
            // brute force: min over f of max over g
            let mut best = f64::INFINITY;
            for i in 0..2 {
                let f = fam_f.finite_member(&[i]).unwrap();
                let mut worst = f64::NEG_INFINITY;
                for j in 0..2 {
                    let g = fam_g.finite_member(&[j]).unwrap();
                    worst = worst.max(minimax_loss(&data, &f, &g).unwrap());
                }
                best = best.min(worst);
            }
            assert_abs_diff_eq!(out.achieved_empirical_loss, best, epsilon = 1e-12);
        }
    }

    #[test]
    fn minimax_on_singleton_optimum_with_exact_helpers_has_zero_objective() {
        // deterministic chain: the empirical targets are exact functions of
        // (s, a), the helper family contains them, and F = {Q*} leaves
        // nothing to debias: the objective vanishes
        let t = vec![
            vec![
                vec![vec![0.0, 1.0], vec![1.0, 0.0]],
                vec![vec![0.0, 1.0], vec![0.0, 1.0],]
            ];
            2
        ];
        let r = vec![vec![vec![0.3, 0.7], vec![0.2, 0.9]]; 2];
        let mdp = crate::mdp::TabularMdp::new(2, 2, 2, 0, t, r).unwrap();
        let q = mdp.optimal_q();
        let fam_f = finite_family(2, 2, 2.0, vec![vec![q[0].clone()], vec![q[1].clone()]]);
        // helpers: the exact operator images of each next-step member
        let g0 = mdp.bellman_apply(0, &q[1]).unwrap();
        let g1 = mdp.bellman_apply(1, &vec![vec![0.0; 2]; 2]).unwrap();
        let fam_g = finite_family(2, 2, 2.0, vec![vec![g0], vec![g1]]);
        let mut rng = crate::rng::seeded_rng(37);
        let steps: Vec<Vec<Transition>> = (0..2)
            .map(|h| {
                (0..12)
                    .map(|_| {
                        let s = rng.gen_range(0..2);
                        let a = rng.gen_range(0..2);
                        let s_next = mdp
                            .transition_row(h, s, a)
                            .iter()
                            .position(|&p| p == 1.0)
                            .unwrap();
                        Transition {
                            s,
                            a,
                            r: mdp.reward(h, s, a),
                            s_next,
                        }
                    })
                    .collect()
            })
            .collect();
        let data = Dataset::new(steps).unwrap();
        let out = minimax(&fam_f, &fam_g, &data).unwrap();
        assert_abs_diff_eq!(out.achieved_empirical_loss, 0.0, epsilon = 1e-12);
        assert_eq!(out.diagnostics.member_indices, Some(vec![0, 0]));
    }

    #[test]
    fn minimax_inner_fit_is_optimal_over_helpers() {
        let mut rng = crate::rng::seeded_rng(29);
        let f_members: Vec<Vec<Vec<f64>>> = (0..2)
            .map(|_| {
                vec![
                    (0..2)
                        .map(|_| rng.gen_range(-1.0..1.0))
                        .collect::<Vec<f64>>();
                    2
                ]
            })
            .collect();
        let g_members: Vec<Vec<Vec<f64>>> = (0..3)
            .map(|_| {
                vec![
                    (0..2)
                        .map(|_| rng.gen_range(-1.0..1.0))
                        .collect::<Vec<f64>>();
                    2
                ]
            })
            .collect();
        let fam_f = finite_family(2, 2, 1.5, vec![f_members]);
        let fam_g = finite_family(2, 2, 1.5, vec![g_members]);
        let data = Dataset::new(vec![(0..6)
            .map(|_| Transition {
                s: rng.gen_range(0..2),
                a: rng.gen_range(0..2),
                r: rng.gen(),
                s_next: rng.gen_range(0..2),
            })
            .collect()])
        .unwrap();
        let out = minimax(&fam_f, &fam_g, &data).unwrap();
        let g_hat = out.g_hat.unwrap();
        let f_hat = &out.f_hat;
        let achieved = minimax_loss(&data, f_hat, &g_hat).unwrap();
        for j in 0..3 {
            let g = fam_g.finite_member(&[j]).unwrap();
            assert!(achieved >= minimax_loss(&data, f_hat, &g).unwrap() - 1e-9);
        }
    }

    #[test]
    fn learners_are_deterministic_and_duplication_invariant() {
        let mut rng = crate::rng::seeded_rng(31);
        let members: Vec<Vec<Vec<f64>>> = (0..2)
            .map(|_| {
                vec![
                    (0..2)
                        .map(|_| rng.gen_range(-1.0..1.0))
                        .collect::<Vec<f64>>();
                    2
                ]
            })
            .collect();
        let fam = finite_family(2, 2, 1.0, vec![members.clone(), members]);
        let steps: Vec<Vec<Transition>> = (0..2)
            .map(|_| {
                (0..8)
                    .map(|_| Transition {
                        s: rng.gen_range(0..2),
                        a: rng.gen_range(0..2),
                        r: rng.gen(),
                        s_next: rng.gen_range(0..2),
                    })
                    .collect()
            })
            .collect();
        let data = Dataset::new(steps.clone()).unwrap();
        let out1 = fqi(&fam, &data).unwrap();
        let out2 = fqi(&fam, &data).unwrap();
        assert_eq!(
            out1.diagnostics.member_indices,
            out2.diagnostics.member_indices
        );
        assert_eq!(
            out1.achieved_empirical_loss.to_bits(),
            out2.achieved_empirical_loss.to_bits()
        );
        // doubling the dataset by duplication leaves the output unchanged
        let doubled: Vec<Vec<Transition>> = steps
            .iter()
            .map(|s| s.iter().chain(s.iter()).cloned().collect())
            .collect();
        let out3 = fqi(&fam, &Dataset::new(doubled.clone()).unwrap()).unwrap();
        assert_eq!(
            out1.diagnostics.member_indices,
            out3.diagnostics.member_indices
        );
        assert_abs_diff_eq!(
            out1.achieved_empirical_loss,
            out3.achieved_empirical_loss,
            epsilon = 1e-15
        );
        // the other learners behave the same way: losses are means
        let mm1 = minimax(&fam, &fam, &data).unwrap();
        let mm2 = minimax(&fam, &fam, &Dataset::new(doubled).unwrap()).unwrap();
        assert_eq!(
            mm1.diagnostics.member_indices,
            mm2.diagnostics.member_indices
        );
        let dsteps: Vec<Vec<DoubleTransition>> = data
            .steps()
            .iter()
            .map(|s| {
                s.iter()
                    .map(|t| DoubleTransition {
                        s: t.s,
                        a: t.a,
                        r: t.r,
                        s_next: t.s_next,
                        s_next2: t.s,
                    })
                    .collect()
            })
            .collect();
        let ddoubled: Vec<Vec<DoubleTransition>> = dsteps
            .iter()
            .map(|s| s.iter().chain(s.iter()).cloned().collect())
            .collect();
        let e1 = erm_double_sampling(&fam, &DoubleDataset::new(dsteps).unwrap()).unwrap();
        let e2 = erm_double_sampling(&fam, &DoubleDataset::new(ddoubled).unwrap()).unwrap();
        assert_eq!(e1.diagnostics.member_indices, e2.diagnostics.member_indices);
    }

    #[test]
    fn erm_blockwise_descends_on_linear_families() {
        // continuous family: blockwise alternation of per-step fits
        let (mdp, mu) = crate::testutil::random_mdp(451, 4, 2, 2);
        let mut features = vec![vec![vec![0.0; 4]; 2]; 4];
        for s in 0..4 {
            for a in 0..2 {
                features[s][a][(s + a) % 4] = 1.0;
            }
        }
        let fam = Arc::new(
            FunctionFamily::new(
                4,
                2,
                2.0,
                vec![
                    FamilyStep::Linear {
                        features: features.clone(),
                        ball_radius: 2.0,
                    },
                    FamilyStep::Linear {
                        features,
                        ball_radius: 2.0,
                    },
                ],
            )
            .unwrap(),
        );
        let data = crate::harness::generate_double_dataset(&mdp, &mu, 400, 9).unwrap();
        let out = erm_double_sampling(&fam, &data).unwrap();
        assert!(!out.diagnostics.exact_argmin);
        assert!(out.diagnostics.sweeps.is_some());
        // descent: beats the all-zero starting point
        let zero = QFunction::from_family(
            Arc::clone(&fam),
            vec![
                StepValues::Weights(vec![0.0; 4]),
                StepValues::Weights(vec![0.0; 4]),
            ],
        )
        .unwrap();
        let zero_loss = double_sampling_loss(&data, &zero).unwrap();
        assert!(out.achieved_empirical_loss <= zero_loss + 1e-12);
        // and no single per-step least-squares refit improves the objective
        // (stationarity of the blockwise scheme)
        let refit = erm_double_sampling(&fam, &data).unwrap();
        assert_abs_diff_eq!(
            refit.achieved_empirical_loss,
            out.achieved_empirical_loss,
            epsilon = 1e-15
        );
    }

    #[test]
    fn minimax_blockwise_runs_on_linear_families() {
        let (mdp, mu) = crate::testutil::random_mdp(461, 4, 2, 2);
        let mut features = vec![vec![vec![0.0; 3]; 2]; 4];
        for s in 0..4 {
            for a in 0..2 {
                features[s][a][(s * 2 + a) % 3] = 0.9;
            }
        }
        let fam = Arc::new(
            FunctionFamily::new(
                4,
                2,
                2.0,
                vec![
                    FamilyStep::Linear {
                        features: features.clone(),
                        ball_radius: 2.0,
                    },
                    FamilyStep::Linear {
                        features,
                        ball_radius: 2.0,
                    },
                ],
            )
            .unwrap(),
        );
        let data = crate::harness::generate_dataset(&mdp, &mu, 300, 10).unwrap();
        let out = minimax(&fam, &fam, &data).unwrap();
        assert!(!out.diagnostics.exact_argmin);
        let g_hat = out.g_hat.as_ref().unwrap();
        // the inner fit reproduces the least-squares regression of the
        // f_hat-induced targets on each helper step
        let achieved = minimax_loss(&data, &out.f_hat, g_hat).unwrap();
        let refit = inner_fit(
            &fam,
            &fam,
            &data,
            &(0..2)
                .map(|h| out.f_hat.step_values(h).clone())
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let g_refit = QFunction::from_family(Arc::clone(&fam), refit).unwrap();
        let refit_loss = minimax_loss(&data, &out.f_hat, &g_refit).unwrap();
        assert_abs_diff_eq!(achieved, refit_loss, epsilon = 1e-9);
    }

    #[test]
    fn erm_finite_fallback_engages_past_the_enumeration_cap() {
        let mut rng = crate::rng::seeded_rng(471);
        // 50^3 = 125000 member combinations exceeds the cap
        let members: Vec<Vec<Vec<f64>>> = (0..50)
            .map(|_| {
                (0..2)
                    .map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect()
            })
            .collect();
        let fam = finite_family(
            2,
            2,
            1.0,
            vec![members.clone(), members.clone(), members.clone()],
        );
        let steps: Vec<Vec<DoubleTransition>> = (0..3)
            .map(|_| {
                (0..20)
                    .map(|_| DoubleTransition {
                        s: rng.gen_range(0..2),
                        a: rng.gen_range(0..2),
                        r: rng.gen(),
                        s_next: rng.gen_range(0..2),
                        s_next2: rng.gen_range(0..2),
                    })
                    .collect()
            })
            .collect();
        let data = DoubleDataset::new(steps).unwrap();
        let out = erm_double_sampling(&fam, &data).unwrap();
        assert!(!out.diagnostics.exact_argmin);
        assert!(out.diagnostics.sweeps.is_some());
        // blockwise coordinate optimum: no single-step member swap improves
        let chosen_loss = out.achieved_empirical_loss;
        for h in 0..3 {
            for m in members.iter() {
                let mut steps: Vec<StepValues> = (0..3)
                    .map(|hh| StepValues::Table(out.f_hat.step_table(hh)))
                    .collect();
                steps[h] = StepValues::Table(m.clone());
                let alt = QFunction::from_family(Arc::clone(&fam), steps).unwrap();
                assert!(
                    chosen_loss <= double_sampling_loss(&data, &alt).unwrap() + 1e-12,
                    "step {h} swap improved the objective"
                );
            }
        }
    }

    #[test]
    fn excess_risk_is_zero_for_singletons_and_minimizers() {
        let (mdp, mu) = crate::testutil::random_mdp(301, 3, 2, 2);
        let q = mdp.optimal_q();
        let fam = finite_family(3, 2, 2.0, vec![vec![q[0].clone()], vec![q[1].clone()]]);
        let data = Dataset::new(vec![
            vec![Transition {
                s: 0,
                a: 0,
                r: mdp.reward(0, 0, 0),
                s_next: 1,
            }],
            vec![Transition {
                s: 1,
                a: 1,
                r: mdp.reward(1, 1, 1),
                s_next: 2,
            }],
        ])
        .unwrap();
        let mut out = fqi(&fam, &data).unwrap();
        let excess = report_excess_risk(&mdp, &mu, &fam, &mut out).unwrap();
        assert_abs_diff_eq!(excess, 0.0, epsilon = 1e-12);
        assert_eq!(out.diagnostics.min_risk_exact, Some(true));
        assert_eq!(out.excess_risk, Some(excess));
    }
}
