//! Dataset generation, experiment orchestration and reporting.
//!
//! Experiments are described by a single JSON config ([`ExperimentConfig`])
//! naming an instance (a file pair or a built-in generator), a learner, an
//! `n`-grid and seeds. [`run_experiment`] executes the full grid — each grid
//! point owns an RNG stream derived from the master seed, so results are
//! byte-identical across runs and thread counts — and produces an
//! [`ExperimentRecord`] with one row per `(n, seed)` pair that [`report`]
//! serializes as CSV or text. Floats are printed at 12 significant digits.
//!
//! The master seed precedence is: CLI flag, then the `BRL_SEED` environment
//! variable, then the config file (handled by the CLI layer).

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complexity::{
    finite_class_bounds, kernel_class_bounds, linear_class_bounds, risk_bound_rhs,
    sparse_class_bounds, BoundQuery, ComplexityInputs, RiskBound,
};
use crate::error::{BrlError, Result};
use crate::func_approx::{FamilyStep, FunctionFamily};
use crate::hardness::{lower_bound_experiment, ClassifierKind, LowerBoundParams};
use crate::learners::{erm_double_sampling, fqi, minimax, report_excess_risk};
use crate::mdp::{BatchDistribution, TabularMdp};
use crate::risk::{Dataset, DoubleDataset, DoubleTransition, Transition};
use crate::rng::{stream_id, stream_rng};

/// Draws one categorical index from cumulative weights: the smallest index
/// whose cumulative mass exceeds the uniform draw, which never lands on a
/// zero-mass cell.
fn draw_index<R: Rng>(cdf: &[f64], rng: &mut R) -> usize {
    let total = *cdf.last().expect("nonempty cdf");
    let u: f64 = rng.gen::<f64>() * total;
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

fn cumsum(v: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    v.iter()
        .map(|&p| {
            acc += p;
            acc
        })
        .collect()
}

/// Samples `n` i.i.d. tuples per step: `(s, a) ~ μ_h`, `r = r_h(s, a)`,
/// `s' ~ P_h(·|s, a)`. Deterministic per seed.
pub fn generate_dataset(
    mdp: &TabularMdp,
    mu: &BatchDistribution,
    n: usize,
    rng_seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(BrlError::InvalidParameter("n must be >= 1".into()));
    }
    let na = mdp.num_actions();
    let mut steps = Vec::with_capacity(mdp.horizon());
    for h in 0..mdp.horizon() {
        let mut rng = stream_rng(rng_seed, h as u64, 20);
        let mu_cdf = cumsum(&mu.flat_step(h));
        let tuples = (0..n)
            .map(|_| {
                let idx = draw_index(&mu_cdf, &mut rng);
                let (s, a) = (idx / na, idx % na);
                let row_cdf = cumsum(mdp.transition_row(h, s, a));
                let s_next = draw_index(&row_cdf, &mut rng);
                Transition {
                    s,
                    a,
                    r: mdp.reward(h, s, a),
                    s_next,
                }
            })
            .collect();
        steps.push(tuples);
    }
    Dataset::new(steps)
}

/// As [`generate_dataset`] with two independent next states per tuple.
pub fn generate_double_dataset(
    mdp: &TabularMdp,
    mu: &BatchDistribution,
    n: usize,
    rng_seed: u64,
) -> Result<DoubleDataset> {
    if n == 0 {
        return Err(BrlError::InvalidParameter("n must be >= 1".into()));
    }
    let na = mdp.num_actions();
    let mut steps = Vec::with_capacity(mdp.horizon());
    for h in 0..mdp.horizon() {
        let mut rng = stream_rng(rng_seed, h as u64, 21);
        let mu_cdf = cumsum(&mu.flat_step(h));
        let tuples = (0..n)
            .map(|_| {
                let idx = draw_index(&mu_cdf, &mut rng);
                let (s, a) = (idx / na, idx % na);
                let row_cdf = cumsum(mdp.transition_row(h, s, a));
                let s_next = draw_index(&row_cdf, &mut rng);
                let s_next2 = draw_index(&row_cdf, &mut rng);
                DoubleTransition {
                    s,
                    a,
                    r: mdp.reward(h, s, a),
                    s_next,
                    s_next2,
                }
            })
            .collect();
        steps.push(tuples);
    }
    DoubleDataset::new(steps)
}

/// Learner selector shared by the config and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    ErmDs,
    Fqi,
    Minimax,
}

impl std::str::FromStr for LearnerKind {
    type Err = BrlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "erm_ds" => Ok(LearnerKind::ErmDs),
            "fqi" => Ok(LearnerKind::Fqi),
            "minimax" => Ok(LearnerKind::Minimax),
            other => Err(BrlError::InvalidParameter(format!(
                "unknown learner {other:?} (expected erm_ds|fqi|minimax)"
            ))),
        }
    }
}

impl std::fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LearnerKind::ErmDs => write!(f, "erm_ds"),
            LearnerKind::Fqi => write!(f, "fqi"),
            LearnerKind::Minimax => write!(f, "minimax"),
        }
    }
}

/// Where the experiment's instance comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceSource {
    /// Paths to an MDP JSON, a batch-distribution JSON, and a family JSON.
    Files {
        mdp: String,
        mu: String,
        family: String,
        /// Helper family for the minimax learner; the main family otherwise.
        #[serde(default)]
        helper_family: Option<String>,
    },
    /// Dense random tabular MDP with a finite family of random members
    /// around the optimal Q-function.
    RandomTabular {
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        members: usize,
        instance_seed: u64,
    },
    /// A Bellman-closed linear instance: grouped step-2 rewards and group
    /// indicator features, so fitted Q-iteration is exactly realizable.
    LinearComplete {
        num_states: usize,
        num_actions: usize,
        dim: usize,
        instance_seed: u64,
    },
    /// The lower-bound construction with a fixed hidden bit and sign vector.
    HardInstance {
        epsilon: f64,
        num_middle: usize,
        c: i8,
        sigma_seed: u64,
    },
}

/// One experiment: a sweep of a learner over an `n`-grid and seed list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(flatten)]
    pub kind: ExperimentKind,
    /// Output directory for the CSV and record files.
    #[serde(default)]
    pub out_dir: Option<String>,
}

/// The two experiment shapes: learner sweeps and the hardness suite.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentKind {
    Learner {
        instance: InstanceSource,
        learner: LearnerKind,
        n_grid: Vec<usize>,
        seeds: SeedSpec,
        delta: f64,
    },
    Hardness {
        epsilon: f64,
        num_middle: usize,
        n: usize,
        trials: usize,
        balanced: bool,
        classifier: ClassifierKind,
        seed: u64,
    },
}

/// Either an explicit seed list or a master seed with a count.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    List(Vec<u64>),
    Master { master_seed: u64, count: usize },
}

impl SeedSpec {
    pub fn seeds(&self) -> Result<Vec<u64>> {
        let seeds = match self {
            SeedSpec::List(v) => v.clone(),
            SeedSpec::Master { master_seed, count } => (0..*count as u64)
                .map(|i| stream_id(*master_seed, i, 30))
                .collect(),
        };
        if seeds.is_empty() {
            return Err(BrlError::InvalidParameter("no seeds".into()));
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return Err(BrlError::InvalidParameter("seeds must be distinct".into()));
        }
        Ok(seeds)
    }
}

/// A fully resolved experiment instance.
pub struct ResolvedInstance {
    pub mdp: TabularMdp,
    pub mu: BatchDistribution,
    pub family: Arc<FunctionFamily>,
    pub helper_family: Arc<FunctionFamily>,
}

/// One `(n, seed)` grid-point outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub n: usize,
    pub seed: u64,
    pub empirical_loss: f64,
    pub bellman_error: f64,
    pub excess_risk: f64,
    /// The matching risk-bound right-hand side with closed-form complexity
    /// terms and all absolute constants set to one.
    pub bound_rhs: f64,
    pub wall_ms: f64,
}

/// Config echo plus all grid rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub config: ExperimentConfig,
    pub rows: Vec<ExperimentRow>,
    /// Hardness-suite summary when the config asked for one.
    pub hardness: Option<crate::hardness::LowerBoundSummary>,
}

/// Builds the random-tabular instance: a dense MDP and a finite family
/// containing the optimal Q-function plus random perturbations of it.
fn random_tabular_instance(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    members: usize,
    seed: u64,
) -> Result<ResolvedInstance> {
    let mut rng = stream_rng(seed, 0, 40);
    let mut transitions = vec![vec![vec![vec![0.0; num_states]; num_actions]; num_states]; horizon];
    let mut rewards = vec![vec![vec![0.0; num_actions]; num_states]; horizon];
    let mut mu = vec![vec![vec![0.0; num_actions]; num_states]; horizon];
    for h in 0..horizon {
        let mut mass = 0.0;
        for s in 0..num_states {
            for a in 0..num_actions {
                let mut row: Vec<f64> = (0..num_states).map(|_| rng.gen::<f64>() + 0.05).collect();
                let total: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= total);
                transitions[h][s][a] = row;
                rewards[h][s][a] = rng.gen();
                let m = rng.gen::<f64>() + 0.05;
                mu[h][s][a] = m;
                mass += m;
            }
        }
        for s in 0..num_states {
            for a in 0..num_actions {
                mu[h][s][a] /= mass;
            }
        }
    }
    let mdp = TabularMdp::new(horizon, num_states, num_actions, 0, transitions, rewards)?;
    let mu = BatchDistribution::new(mu)?;
    let q_star = mdp.optimal_q();
    let range = horizon as f64;
    let steps: Vec<FamilyStep> = (0..horizon)
        .map(|h| {
            let mut list = vec![q_star[h].clone()];
            for _ in 1..members.max(1) {
                let perturbed = q_star[h]
                    .iter()
                    .map(|row| {
                        row.iter()
                            .map(|v| (v + rng.gen_range(-0.3..0.3)).clamp(-range, range))
                            .collect()
                    })
                    .collect();
                list.push(perturbed);
            }
            FamilyStep::Finite { members: list }
        })
        .collect();
    let family = Arc::new(FunctionFamily::new(num_states, num_actions, range, steps)?);
    Ok(ResolvedInstance {
        mdp,
        mu,
        helper_family: Arc::clone(&family),
        family,
    })
}

/// Builds the Bellman-closed linear instance.
///
/// States are partitioned into `dim` groups; step-2 rewards depend only on
/// the group, step-2 features are group indicators (action-independent), and
/// step-1 features are the group-occupancy probabilities of the next state.
/// The optimal Q-functions of both steps then lie in the span and the
/// optimal Bellman operator maps the step-2 slice into the step-1 span, so
/// FQI's regressions are exactly realizable. Horizon is fixed at 2.
fn linear_complete_instance(
    num_states: usize,
    num_actions: usize,
    dim: usize,
    seed: u64,
) -> Result<ResolvedInstance> {
    if dim == 0 || num_states < dim {
        return Err(BrlError::InvalidParameter(
            "need dim >= 1 and at least dim states".into(),
        ));
    }
    let horizon = 2;
    let mut rng = stream_rng(seed, 0, 41);
    let group = |s: usize| s % dim;
    // step-2 rewards by group, small so weights sit well inside the ball
    let group_reward: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.05..0.3)).collect();
    let mut transitions = vec![vec![vec![vec![0.0; num_states]; num_actions]; num_states]; horizon];
    let mut rewards = vec![vec![vec![0.0; num_actions]; num_states]; horizon];
    for s in 0..num_states {
        for a in 0..num_actions {
            // step 1: dense random rows so group occupancies vary by (s, a)
            let mut row: Vec<f64> = (0..num_states).map(|_| rng.gen::<f64>() + 0.02).collect();
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= total);
            transitions[0][s][a] = row;
            // step 2: anywhere (unused by the learner's targets)
            let mut row: Vec<f64> = (0..num_states).map(|_| rng.gen::<f64>() + 0.02).collect();
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= total);
            transitions[1][s][a] = row;
            rewards[1][s][a] = group_reward[group(s)];
        }
    }
    // step-1 rewards: expected group payout of the next state, scaled down,
    // so they lie in the span of the step-1 features
    let beta: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.05..0.25)).collect();
    let mut phi1 = vec![vec![vec![0.0; dim]; num_actions]; num_states];
    for s in 0..num_states {
        for a in 0..num_actions {
            let mut occupancy = vec![0.0; dim];
            for (s_next, &p) in transitions[0][s][a].iter().enumerate() {
                occupancy[group(s_next)] += p;
            }
            let r1: f64 = occupancy.iter().zip(beta.iter()).map(|(o, b)| o * b).sum();
            rewards[0][s][a] = r1;
            phi1[s][a] = occupancy;
        }
    }
    let mdp = TabularMdp::new(horizon, num_states, num_actions, 0, transitions, rewards)?;
    let mu = BatchDistribution::uniform(horizon, num_states, num_actions);
    let mut phi2 = vec![vec![vec![0.0; dim]; num_actions]; num_states];
    for (s, rows) in phi2.iter_mut().enumerate() {
        for row in rows.iter_mut() {
            row[group(s)] = 1.0;
        }
    }
    let range = horizon as f64;
    let family = Arc::new(FunctionFamily::new(
        num_states,
        num_actions,
        range,
        vec![
            FamilyStep::Linear {
                features: phi1,
                ball_radius: range,
            },
            FamilyStep::Linear {
                features: phi2,
                ball_radius: range,
            },
        ],
    )?);
    Ok(ResolvedInstance {
        mdp,
        mu,
        helper_family: Arc::clone(&family),
        family,
    })
}

/// Resolves an instance source into concrete objects.
pub fn resolve_instance(source: &InstanceSource) -> Result<ResolvedInstance> {
    match source {
        InstanceSource::Files {
            mdp,
            mu,
            family,
            helper_family,
        } => {
            let mdp: TabularMdp = read_json(mdp)?;
            let mu: BatchDistribution = read_json(mu)?;
            let family: Arc<FunctionFamily> = Arc::new(read_json(family)?);
            let helper = match helper_family {
                Some(path) => Arc::new(read_json(path)?),
                None => Arc::clone(&family),
            };
            Ok(ResolvedInstance {
                mdp,
                mu,
                family,
                helper_family: helper,
            })
        }
        InstanceSource::RandomTabular {
            num_states,
            num_actions,
            horizon,
            members,
            instance_seed,
        } => random_tabular_instance(
            *num_states,
            *num_actions,
            *horizon,
            *members,
            *instance_seed,
        ),
        InstanceSource::LinearComplete {
            num_states,
            num_actions,
            dim,
            instance_seed,
        } => linear_complete_instance(*num_states, *num_actions, *dim, *instance_seed),
        InstanceSource::HardInstance {
            epsilon,
            num_middle,
            c,
            sigma_seed,
        } => {
            let mut rng = stream_rng(*sigma_seed, 0, 42);
            let sigma = crate::hardness::sample_sigma(*num_middle, false, &mut rng)?;
            let inst = crate::hardness::build_hard_instance(*epsilon, *num_middle, *c, &sigma)?;
            Ok(ResolvedInstance {
                mdp: inst.mdp,
                mu: inst.mu,
                helper_family: Arc::clone(&inst.family),
                family: inst.family,
            })
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &str) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Closed-form complexity terms (constants at one) for the bound column.
fn bound_inputs(
    family: &FunctionFamily,
    helper: &FunctionFamily,
    n: usize,
    min_bellman_error: f64,
) -> ComplexityInputs {
    let class_bound = |step: &FamilyStep, range: f64| -> f64 {
        match step {
            FamilyStep::Finite { members } => {
                finite_class_bounds(range, members.len(), n).rademacher
            }
            FamilyStep::Linear { ball_radius, .. } => {
                linear_class_bounds(*ball_radius, step.size_parameter(), n).rademacher
            }
            FamilyStep::Kernel {
                eigenvalues,
                rkhs_bound,
                ..
            } => kernel_class_bounds(*rkhs_bound, eigenvalues, n)
                .map(|b| b.rademacher)
                .unwrap_or(f64::NAN),
            FamilyStep::SparseLinear {
                sparsity,
                ball_radius,
                kappa,
                ..
            } => {
                sparse_class_bounds(
                    *ball_radius,
                    *sparsity,
                    step.size_parameter(),
                    n,
                    *kappa,
                    1.0,
                )
                .rademacher
            }
        }
    };
    let horizon = family.horizon();
    let a = family.num_actions() as f64;
    let rad_f: Vec<f64> = (0..horizon)
        .map(|h| class_bound(family.step(h), family.range()))
        .collect();
    let rad_g: Vec<f64> = (0..horizon)
        .map(|h| class_bound(helper.step(h), helper.range()))
        .collect();
    // the value-reduced class is controlled by sqrt(2) A times the family
    // complexity at the next step (zero past the horizon)
    let rad_vf: Vec<f64> = (0..horizon)
        .map(|h| {
            if h + 1 < horizon {
                2f64.sqrt() * a * class_bound(family.step(h + 1), family.range())
            } else {
                0.0
            }
        })
        .collect();
    ComplexityInputs {
        min_bellman_error: Some(min_bellman_error),
        rad_f,
        rad_g,
        rad_vf,
        crit_f: vec![0.0; horizon],
        crit_g: vec![0.0; horizon],
        crit_vf: vec![0.0; horizon],
    }
}

/// Runs the full grid of a config. Grid points execute in parallel; each
/// owns its RNG stream and the rows come back in grid order, so reruns are
/// byte-identical at any thread count.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentRecord> {
    match &config.kind {
        ExperimentKind::Hardness {
            epsilon,
            num_middle,
            n,
            trials,
            balanced,
            classifier,
            seed,
        } => {
            let summary = lower_bound_experiment(&LowerBoundParams {
                epsilon: *epsilon,
                num_middle: *num_middle,
                n: *n,
                trials: *trials,
                balanced: *balanced,
                classifier: *classifier,
                rng_seed: *seed,
            })?;
            Ok(ExperimentRecord {
                config: config.clone(),
                rows: Vec::new(),
                hardness: Some(summary),
            })
        }
        ExperimentKind::Learner {
            instance,
            learner,
            n_grid,
            seeds,
            delta,
        } => {
            if n_grid.is_empty() {
                return Err(BrlError::InvalidParameter("empty n-grid".into()));
            }
            if delta.is_nan() || *delta <= 0.0 || *delta >= 1.0 {
                return Err(BrlError::InvalidParameter("delta must be in (0,1)".into()));
            }
            let resolved = resolve_instance(instance)?;
            // sweeps report surrogate-vs-bound comparisons, which presume
            // data coverage; fail fast when it is absent
            let coverage = resolved.mdp.concentrability(&resolved.mu)?;
            if !coverage.is_finite() {
                return Err(BrlError::AssumptionViolated(format!(
                    "batch distribution misses reachable pair (h={}, s={}, a={})",
                    coverage.witness.0, coverage.witness.1, coverage.witness.2
                )));
            }
            // the completeness gap enters the FQI and minimax bound
            // columns; it is a property of the instance, computed once
            let epsilon = match learner {
                LearnerKind::ErmDs => 0.0,
                LearnerKind::Fqi => {
                    crate::func_approx::completeness_gap(
                        &resolved.mdp,
                        &resolved.mu,
                        &resolved.family,
                        &resolved.family,
                        0,
                    )?
                    .gap
                }
                LearnerKind::Minimax => {
                    crate::func_approx::completeness_gap(
                        &resolved.mdp,
                        &resolved.mu,
                        &resolved.family,
                        &resolved.helper_family,
                        0,
                    )?
                    .gap
                }
            };
            let seeds = seeds.seeds()?;
            let grid: Vec<(usize, u64)> = n_grid
                .iter()
                .flat_map(|&n| seeds.iter().map(move |&s| (n, s)))
                .collect();
            let rows: Result<Vec<ExperimentRow>> = grid
                .par_iter()
                .map(|&(n, seed)| run_grid_point(&resolved, *learner, n, seed, *delta, epsilon))
                .collect();
            Ok(ExperimentRecord {
                config: config.clone(),
                rows: rows?,
                hardness: None,
            })
        }
    }
}

fn run_grid_point(
    resolved: &ResolvedInstance,
    learner: LearnerKind,
    n: usize,
    seed: u64,
    delta: f64,
    epsilon: f64,
) -> Result<ExperimentRow> {
    let start = Instant::now();
    let mut result = match learner {
        LearnerKind::ErmDs => {
            let data = generate_double_dataset(&resolved.mdp, &resolved.mu, n, seed)?;
            erm_double_sampling(&resolved.family, &data)?
        }
        LearnerKind::Fqi => {
            let data = generate_dataset(&resolved.mdp, &resolved.mu, n, seed)?;
            fqi(&resolved.family, &data)?
        }
        LearnerKind::Minimax => {
            let data = generate_dataset(&resolved.mdp, &resolved.mu, n, seed)?;
            minimax(&resolved.family, &resolved.helper_family, &data)?
        }
    };
    let excess = report_excess_risk(&resolved.mdp, &resolved.mu, &resolved.family, &mut result)?;
    let e_hat = crate::risk::bellman_error(&resolved.mdp, &resolved.mu, &result.f_hat)?;
    let min_e = e_hat - excess;
    let query = BoundQuery {
        n,
        delta,
        horizon: resolved.mdp.horizon(),
        epsilon,
        c_tilde: 1.0,
        constant: 1.0,
    };
    let inputs = bound_inputs(&resolved.family, &resolved.helper_family, n, min_e);
    let which = match learner {
        LearnerKind::ErmDs => RiskBound::ErmDoubleSampling,
        LearnerKind::Fqi => RiskBound::FqiGlobal,
        LearnerKind::Minimax => RiskBound::MinimaxGlobal,
    };
    let bound = risk_bound_rhs(which, &query, &inputs)?;
    Ok(ExperimentRow {
        n,
        seed,
        empirical_loss: result.achieved_empirical_loss,
        bellman_error: e_hat,
        excess_risk: excess,
        bound_rhs: bound,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Formats a float with 12 significant digits, stable across runs.
pub fn fmt_g12(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let s = format!("{v:.11e}");
    // trim the exponent form for readability when it round-trips exactly
    let plain = format!("{v}");
    if plain.parse::<f64>() == Ok(v) && plain.len() <= s.len() {
        plain
    } else {
        s
    }
}

/// Output format of [`report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Text,
}

/// Hardness-suite CSV header.
pub const HARDNESS_CSV_HEADER: &str =
    "epsilon,S,n,balanced,classifier,trials,avg_error,avg_excess,regime_flag,seed";

/// Learner-sweep CSV header. Wall-clock stays in the record JSON only, so
/// identical configs reproduce byte-identical CSVs.
pub const SWEEP_CSV_HEADER: &str = "n,seed,empirical_loss,bellman_error,excess_risk,bound_rhs";

/// Renders a record as CSV (stable column order) or as text with the config
/// echoed verbatim.
pub fn report(record: &ExperimentRecord, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Csv => {
            let mut out = String::new();
            if let Some(h) = &record.hardness {
                out.push_str(HARDNESS_CSV_HEADER);
                out.push('\n');
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{}\n",
                    fmt_g12(h.epsilon),
                    h.num_middle,
                    h.n,
                    h.balanced,
                    h.classifier,
                    h.trials,
                    fmt_g12(h.avg_error),
                    fmt_g12(h.avg_excess),
                    h.in_regime,
                    h.rng_seed,
                ));
            } else {
                out.push_str(SWEEP_CSV_HEADER);
                out.push('\n');
                for row in &record.rows {
                    out.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        row.n,
                        row.seed,
                        fmt_g12(row.empirical_loss),
                        fmt_g12(row.bellman_error),
                        fmt_g12(row.excess_risk),
                        fmt_g12(row.bound_rhs),
                    ));
                }
            }
            Ok(out)
        }
        ReportFormat::Text => {
            let mut out = String::new();
            out.push_str(&format!("experiment: {}\n", record.config.name));
            out.push_str("config:\n");
            out.push_str(&serde_json::to_string_pretty(&record.config)?);
            out.push('\n');
            if let Some(h) = &record.hardness {
                out.push_str(&format!(
                    "classifier {} on epsilon={} S={} n={} trials={}: error {} excess {} (per-step {}), hard regime: {}, exact prior: {}\n",
                    h.classifier,
                    fmt_g12(h.epsilon),
                    h.num_middle,
                    h.n,
                    h.trials,
                    fmt_g12(h.avg_error),
                    fmt_g12(h.avg_excess),
                    fmt_g12(h.avg_excess_per_step),
                    h.in_regime,
                    h.classifier_prior_exact,
                ));
            }
            for row in &record.rows {
                out.push_str(&format!(
                    "n={} seed={} loss={} bellman={} excess={} bound={} wall_ms={}\n",
                    row.n,
                    row.seed,
                    fmt_g12(row.empirical_loss),
                    fmt_g12(row.bellman_error),
                    fmt_g12(row.excess_risk),
                    fmt_g12(row.bound_rhs),
                    fmt_g12(row.wall_ms),
                ));
            }
            Ok(out)
        }
    }
}

/// Dataset CSV header (single next state).
pub const DATASET_CSV_HEADER: &str = "h,s,a,r,s_next";

/// Dataset CSV header (double next states).
pub const DOUBLE_DATASET_CSV_HEADER: &str = "h,s,a,r,s_next,s_next2";

/// Writes a dataset as CSV, rows grouped by step ascending. Rewards use the
/// shortest representation that parses back to the same value, so the format
/// is bit-exact.
pub fn dataset_to_csv(data: &Dataset) -> String {
    let mut out = String::from(DATASET_CSV_HEADER);
    out.push('\n');
    for (h, step) in data.steps().iter().enumerate() {
        for t in step {
            out.push_str(&format!("{h},{},{},{},{}\n", t.s, t.a, t.r, t.s_next));
        }
    }
    out
}

/// Writes a double-sampled dataset as CSV.
pub fn double_dataset_to_csv(data: &DoubleDataset) -> String {
    let mut out = String::from(DOUBLE_DATASET_CSV_HEADER);
    out.push('\n');
    for (h, step) in data.steps().iter().enumerate() {
        for t in step {
            out.push_str(&format!(
                "{h},{},{},{},{},{}\n",
                t.s, t.a, t.r, t.s_next, t.s_next2
            ));
        }
    }
    out
}

/// Parses a dataset CSV (either header variant). Returns a double dataset
/// when the second-next-state column is present.
pub fn dataset_from_csv(text: &str) -> Result<(Option<Dataset>, Option<DoubleDataset>)> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| BrlError::Parse("empty csv".into()))?
        .trim();
    let double = match header {
        h if h == DATASET_CSV_HEADER => false,
        h if h == DOUBLE_DATASET_CSV_HEADER => true,
        other => {
            return Err(BrlError::Parse(format!("unrecognized header {other:?}")));
        }
    };
    let mut singles: Vec<Vec<Transition>> = Vec::new();
    let mut doubles: Vec<Vec<DoubleTransition>> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let want = if double { 6 } else { 5 };
        if fields.len() != want {
            return Err(BrlError::Parse(format!(
                "line {}: expected {want} fields",
                lineno + 2
            )));
        }
        let parse_idx = |f: &str| -> Result<usize> {
            f.parse()
                .map_err(|_| BrlError::Parse(format!("line {}: bad index {f:?}", lineno + 2)))
        };
        let h: usize = parse_idx(fields[0])?;
        let s = parse_idx(fields[1])?;
        let a = parse_idx(fields[2])?;
        let r: f64 = fields[3]
            .parse()
            .map_err(|_| BrlError::Parse(format!("line {}: bad reward", lineno + 2)))?;
        if double {
            while doubles.len() <= h {
                doubles.push(Vec::new());
            }
            doubles[h].push(DoubleTransition {
                s,
                a,
                r,
                s_next: parse_idx(fields[4])?,
                s_next2: parse_idx(fields[5])?,
            });
        } else {
            while singles.len() <= h {
                singles.push(Vec::new());
            }
            singles[h].push(Transition {
                s,
                a,
                r,
                s_next: parse_idx(fields[4])?,
            });
        }
    }
    if double {
        Ok((None, Some(DoubleDataset::new(doubles)?)))
    } else {
        Ok((Some(Dataset::new(singles)?), None))
    }
}
