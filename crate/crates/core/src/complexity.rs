//! (Local) Rademacher complexity estimation, critical radii, and risk-bound
//! evaluation.
//!
//! The empirical Rademacher complexity of a step family over fixed points
//! `x_1 … x_n` is `R̂_X(F) = E_σ sup_{f∈F} (1/n) Σ σ_i f(x_i)` with uniform
//! random signs `σ_i`. The inner supremum is computed exactly per variant:
//!
//! * finite — enumeration of members;
//! * linear ball of radius `B` — `B · ‖(1/n) Σ σ_i φ(x_i)‖₂`;
//! * kernel ball of radius `D` — `(D/n) · sqrt(σᵀ K σ)` with `K` the Gram
//!   matrix over the sample;
//! * sparse linear — `B` times the Euclidean norm of the top-`s` entries of
//!   `(1/n) Σ σ_i φ(x_i)`, the exact maximum over supports.
//!
//! The outer expectation is Monte-Carlo over sign draws, switching to exact
//! enumeration of all `2^n` sign patterns when `n ≤ 12`. Population
//! complexities add an outer loop of data redraws. Local complexities
//! restrict the family to a `ρ`-ball around an anchor: finite steps filter
//! members by their exact `ρ`-distance, linear steps use the closed form
//! `sqrt(r) · ‖(1/n) Σ σ_i φ(x_i)‖_{Σ†}` with `Σ` the exact `ρ`-weighted
//! feature second-moment matrix.
//!
//! Critical radii of sub-root functions (nondecreasing `ψ` with `ψ(r)/√r`
//! nonincreasing) are found by the fixed-point iteration `r ← ψ(r)`, which
//! converges monotonically. Closed-form complexity bounds and the risk-bound
//! right-hand sides take every unspecified absolute constant as an explicit
//! argument (default 1) — shape checks, not constant-sensitive comparisons,
//! are the intended use.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BrlError, Result};
use crate::func_approx::FamilyStep;
use crate::rng::stream_rng;

/// Sample sizes up to which sign patterns are enumerated exactly.
pub const SIGN_ENUM_LIMIT: usize = 12;

/// Default number of Monte-Carlo sign draws.
pub const DEFAULT_SIGN_DRAWS: usize = 2000;

/// Probes used to sanity-check sub-root inputs to the fixed-point solver.
const SUBROOT_PROBES: usize = 16;

/// A Monte-Carlo (or exactly enumerated) Rademacher complexity estimate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RademacherEstimate {
    pub mean: f64,
    /// Zero when the sign expectation was enumerated exactly.
    pub std_error: f64,
    pub num_sign_draws: usize,
    /// Zero for empirical (conditional-on-data) estimates.
    pub num_data_redraws: usize,
    /// Set when a constraint the closed form ignores (the outer weight-ball
    /// of a local linear supremum) was active in some draw.
    pub ball_clipped: bool,
}

/// Result of a critical-radius solve.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SubRootSolveResult {
    pub fixed_point: f64,
    pub iterations: usize,
    /// `|ψ(r*) − r*|`, at most `1e-8 · max(1, r*)`.
    pub residual: f64,
}

/// Scalar inputs shared by the risk-bound formulas.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoundQuery {
    pub n: usize,
    pub delta: f64,
    pub horizon: usize,
    /// Completeness gap of the relevant assumption.
    pub epsilon: f64,
    /// Restart concentrability coefficient (only the minimax local bound
    /// reads it).
    pub c_tilde: f64,
    /// The unspecified absolute constant; 1 unless the caller overrides it.
    pub constant: f64,
}

impl BoundQuery {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(BrlError::InvalidParameter("n must be >= 1".into()));
        }
        if self.delta.is_nan() || self.delta <= 0.0 || self.delta >= 1.0 {
            return Err(BrlError::InvalidParameter("delta must be in (0,1)".into()));
        }
        Ok(())
    }
}

/// Per-step complexity terms feeding a risk-bound formula. Fill only the
/// vectors the chosen formula reads; each must have one entry per step.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ComplexityInputs {
    /// Exact minimum Bellman error over the family, where the formula uses it.
    pub min_bellman_error: Option<f64>,
    /// `R^{μ_h}(F_h)` per step.
    pub rad_f: Vec<f64>,
    /// `R^{μ_h}(G_h)` per step.
    pub rad_g: Vec<f64>,
    /// `R^{ν_h}(V_{F_{h+1}})` per step.
    pub rad_vf: Vec<f64>,
    /// Critical radii of the local complexities of `F_h` around its anchor.
    pub crit_f: Vec<f64>,
    /// Critical radii for the helper family.
    pub crit_g: Vec<f64>,
    /// Critical radii of the value-reduced family under the next-state
    /// marginal.
    pub crit_vf: Vec<f64>,
}

/// Which excess-risk bound to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskBound {
    /// Double-sampling ERM, global Rademacher form.
    ErmDoubleSampling,
    /// FQI, global Rademacher form.
    FqiGlobal,
    /// FQI, local (critical-radius) form.
    FqiLocal,
    /// Minimax estimator, global Rademacher form.
    MinimaxGlobal,
    /// Minimax estimator, local form with restart concentrability.
    MinimaxLocal,
}

/// Precomputed member data on a fixed sample.
enum MemberValues {
    /// Per member: values at the sample points.
    Finite(Vec<Vec<f64>>),
    /// Per sample point: the feature vector.
    Features(Vec<Vec<f64>>),
    /// Gram matrix over the sample points.
    Gram(Vec<Vec<f64>>),
}

fn member_values(step: &FamilyStep, num_actions: usize, points: &[(usize, usize)]) -> MemberValues {
    match step {
        FamilyStep::Finite { members } => MemberValues::Finite(
            members
                .iter()
                .map(|m| points.iter().map(|&(s, a)| m[s][a]).collect())
                .collect(),
        ),
        FamilyStep::Linear { features, .. } | FamilyStep::SparseLinear { features, .. } => {
            MemberValues::Features(
                points
                    .iter()
                    .map(|&(s, a)| features[s][a].clone())
                    .collect(),
            )
        }
        FamilyStep::Kernel { gram, .. } => {
            let idx: Vec<usize> = points.iter().map(|&(s, a)| s * num_actions + a).collect();
            MemberValues::Gram(
                idx.iter()
                    .map(|&i| idx.iter().map(|&j| gram[i][j]).collect())
                    .collect(),
            )
        }
    }
}

/// Exact inner supremum `sup_f (1/n) Σ σ_i f(x_i)` for one sign vector.
fn inner_sup(step: &FamilyStep, values: &MemberValues, signs: &[f64]) -> f64 {
    let n = signs.len() as f64;
    match values {
        MemberValues::Finite(tables) => tables
            .iter()
            .map(|vals| vals.iter().zip(signs).map(|(v, s)| v * s).sum::<f64>() / n)
            .fold(f64::NEG_INFINITY, f64::max),
        MemberValues::Features(rows) => {
            let d = rows[0].len();
            let mut u = vec![0.0; d];
            for (row, s) in rows.iter().zip(signs) {
                for (j, v) in row.iter().enumerate() {
                    u[j] += s * v;
                }
            }
            match step {
                FamilyStep::Linear { ball_radius, .. } => {
                    ball_radius * u.iter().map(|v| v * v).sum::<f64>().sqrt() / n
                }
                FamilyStep::SparseLinear {
                    ball_radius,
                    sparsity,
                    ..
                } => {
                    // the best support keeps the largest |u| entries, which
                    // is the exact maximum over all supports of that size
                    let mut sq: Vec<f64> = u.iter().map(|v| v * v).collect();
                    sq.sort_by(|a, b| b.partial_cmp(a).unwrap());
                    let top: f64 = sq.iter().take(*sparsity).sum();
                    ball_radius * top.sqrt() / n
                }
                _ => unreachable!("feature values come from linear variants"),
            }
        }
        MemberValues::Gram(k) => {
            let m = signs.len();
            let mut quad = 0.0;
            for i in 0..m {
                for j in 0..m {
                    quad += signs[i] * k[i][j] * signs[j];
                }
            }
            let radius = match step {
                FamilyStep::Kernel { rkhs_bound, .. } => *rkhs_bound,
                _ => unreachable!("gram values come from kernel variants"),
            };
            radius * quad.max(0.0).sqrt() / n
        }
    }
}

/// Runs the sign expectation: exact enumeration for `n ≤ 12`, Monte-Carlo
/// with per-draw streams otherwise. Returns `(mean, std_error, draws)`.
fn sign_expectation<F: FnMut(&[f64]) -> f64>(
    n: usize,
    num_draws: usize,
    seed: u64,
    substream: u64,
    mut sup: F,
) -> (f64, f64, usize) {
    if n <= SIGN_ENUM_LIMIT {
        let total = 1usize << n;
        let mut acc = 0.0;
        let mut signs = vec![0.0; n];
        for code in 0..total {
            for (i, s) in signs.iter_mut().enumerate() {
                *s = if (code >> i) & 1 == 1 { 1.0 } else { -1.0 };
            }
            acc += sup(&signs);
        }
        (acc / total as f64, 0.0, total)
    } else {
        let mut acc = 0.0;
        let mut acc_sq = 0.0;
        let mut signs = vec![0.0; n];
        for draw in 0..num_draws {
            let mut rng = stream_rng(seed, draw as u64, substream);
            for s in signs.iter_mut() {
                *s = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            }
            let v = sup(&signs);
            acc += v;
            acc_sq += v * v;
        }
        let mean = acc / num_draws as f64;
        let var = (acc_sq / num_draws as f64 - mean * mean).max(0.0);
        (mean, (var / num_draws as f64).sqrt(), num_draws)
    }
}

/// Empirical Rademacher complexity of one family step on fixed points.
pub fn empirical_rademacher(
    step: &FamilyStep,
    num_actions: usize,
    points: &[(usize, usize)],
    num_draws: usize,
    rng_seed: u64,
) -> Result<RademacherEstimate> {
    if points.is_empty() {
        return Err(BrlError::EmptyInput("no sample points".into()));
    }
    if num_draws == 0 {
        return Err(BrlError::InvalidParameter("num_draws must be >= 1".into()));
    }
    let values = member_values(step, num_actions, points);
    let (mean, std_error, draws) =
        sign_expectation(points.len(), num_draws, rng_seed, 0, |signs| {
            inner_sup(step, &values, signs)
        });
    Ok(RademacherEstimate {
        mean,
        std_error,
        num_sign_draws: draws,
        num_data_redraws: 0,
        ball_clipped: false,
    })
}

/// Draws `n` points i.i.d. from a distribution over the `(s, a)` grid given
/// as a flat row-major vector.
pub fn sample_points<R: Rng>(
    rho: &[f64],
    num_actions: usize,
    n: usize,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let mut cdf = Vec::with_capacity(rho.len());
    let mut acc = 0.0;
    for &p in rho {
        acc += p;
        cdf.push(acc);
    }
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen::<f64>() * acc;
            let idx = cdf.partition_point(|&c| c <= u).min(rho.len() - 1);
            (idx / num_actions, idx % num_actions)
        })
        .collect()
}

fn combine_redraws(means: &[f64], inner_se: f64) -> (f64, f64) {
    let r = means.len() as f64;
    let mean = means.iter().sum::<f64>() / r;
    if means.len() >= 2 {
        let var = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (r - 1.0);
        (mean, (var / r).sqrt())
    } else {
        (mean, inner_se)
    }
}

/// Population Rademacher complexity: expectation of the empirical complexity
/// over fresh samples of size `n` from `rho` (flat over the grid).
pub fn population_rademacher(
    step: &FamilyStep,
    num_actions: usize,
    rho: &[f64],
    n: usize,
    num_data_redraws: usize,
    num_sign_draws: usize,
    rng_seed: u64,
) -> Result<RademacherEstimate> {
    if num_data_redraws == 0 {
        return Err(BrlError::InvalidParameter(
            "num_data_redraws must be >= 1".into(),
        ));
    }
    let mut means = Vec::with_capacity(num_data_redraws);
    let mut inner_se = 0.0;
    let mut total_draws = 0;
    for redraw in 0..num_data_redraws {
        let mut rng = stream_rng(rng_seed, redraw as u64, 1);
        let points = sample_points(rho, num_actions, n, &mut rng);
        let values = member_values(step, num_actions, &points);
        let (mean, se, draws) =
            sign_expectation(n, num_sign_draws, rng_seed, 1000 + redraw as u64, |signs| {
                inner_sup(step, &values, signs)
            });
        means.push(mean);
        inner_se = se;
        total_draws = draws;
    }
    let (mean, std_error) = combine_redraws(&means, inner_se);
    Ok(RademacherEstimate {
        mean,
        std_error,
        num_sign_draws: total_draws,
        num_data_redraws,
        ball_clipped: false,
    })
}

/// Local Rademacher complexity `R({f ∈ F : ‖f − f°‖²_ρ ≤ r})` of one step.
///
/// Finite steps filter members by their exact `ρ`-distance to the anchor and
/// then behave like [`population_rademacher`] on the recentered survivors.
/// Linear steps use the closed form `sqrt(r) ‖(1/n) Σ σ φ‖_{Σ†}`; the outer
/// weight ball is ignored but draws where it was active are flagged. Kernel
/// and sparse steps have no estimator here (their bound forms cover them).
#[allow(clippy::too_many_arguments)]
pub fn local_rademacher(
    step: &FamilyStep,
    num_actions: usize,
    anchor: &crate::func_approx::StepValues,
    radius: f64,
    rho: &[f64],
    n: usize,
    num_data_redraws: usize,
    num_sign_draws: usize,
    rng_seed: u64,
) -> Result<RademacherEstimate> {
    if radius < 0.0 {
        return Err(BrlError::InvalidParameter("radius must be >= 0".into()));
    }
    match step {
        FamilyStep::Finite { members } => {
            let anchor_table = match anchor {
                crate::func_approx::StepValues::Table(t) => t,
                _ => {
                    return Err(BrlError::UnsupportedFamily(
                        "anchor must be a table for finite steps".into(),
                    ))
                }
            };
            // exact rho-distances decide membership in the local set
            let survivors: Vec<Vec<Vec<f64>>> = members
                .iter()
                .filter(|m| {
                    let mut dist = 0.0;
                    for (s, row) in m.iter().enumerate() {
                        for (a, v) in row.iter().enumerate() {
                            let w = rho[s * num_actions + a];
                            let d = v - anchor_table[s][a];
                            dist += w * d * d;
                        }
                    }
                    dist <= radius + 1e-15
                })
                .map(|m| {
                    // recentering by the anchor leaves the complexity
                    // unchanged and zeroes the r = 0 case
                    m.iter()
                        .enumerate()
                        .map(|(s, row)| {
                            row.iter()
                                .enumerate()
                                .map(|(a, v)| v - anchor_table[s][a])
                                .collect()
                        })
                        .collect()
                })
                .collect();
            if survivors.is_empty() {
                return Ok(RademacherEstimate {
                    mean: 0.0,
                    std_error: 0.0,
                    num_sign_draws: 0,
                    num_data_redraws,
                    ball_clipped: false,
                });
            }
            let centered = FamilyStep::Finite { members: survivors };
            population_rademacher(
                &centered,
                num_actions,
                rho,
                n,
                num_data_redraws,
                num_sign_draws,
                rng_seed,
            )
        }
        FamilyStep::Linear {
            features,
            ball_radius,
        } => {
            let anchor_w = match anchor {
                crate::func_approx::StepValues::Weights(w) => w.clone(),
                _ => {
                    return Err(BrlError::UnsupportedFamily(
                        "anchor must be weights for linear steps".into(),
                    ))
                }
            };
            let d = features[0][0].len();
            // exact rho-weighted second-moment matrix and its pseudo-inverse
            let mut sigma = DMatrix::zeros(d, d);
            for (idx, &w) in rho.iter().enumerate() {
                if w > 0.0 {
                    let (s, a) = (idx / num_actions, idx % num_actions);
                    let phi = DVector::from_column_slice(&features[s][a]);
                    sigma += w * &phi * phi.transpose();
                }
            }
            let eig = sigma.symmetric_eigen();
            let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
            let cut = 1e-12 * lmax.max(1e-300);
            let mut pinv = DMatrix::zeros(d, d);
            for (i, &l) in eig.eigenvalues.iter().enumerate() {
                if l > cut {
                    let v = eig.eigenvectors.column(i);
                    pinv += (1.0 / l) * v * v.transpose();
                }
            }
            let mut means = Vec::with_capacity(num_data_redraws);
            let mut inner_se = 0.0;
            let mut draws_out = 0;
            let mut clipped = false;
            for redraw in 0..num_data_redraws {
                let mut rng = stream_rng(rng_seed, redraw as u64, 2);
                let points = sample_points(rho, num_actions, n, &mut rng);
                let rows: Vec<&[f64]> = points
                    .iter()
                    .map(|&(s, a)| features[s][a].as_slice())
                    .collect();
                let (mean, se, draws) =
                    sign_expectation(n, num_sign_draws, rng_seed, 2000 + redraw as u64, |signs| {
                        let mut u = DVector::zeros(d);
                        for (row, s) in rows.iter().zip(signs) {
                            for (j, v) in row.iter().enumerate() {
                                u[j] += s * v;
                            }
                        }
                        u /= n as f64;
                        let quad = (&pinv * &u).dot(&u).max(0.0);
                        let sup = radius.sqrt() * quad.sqrt();
                        if quad > 0.0 {
                            // the maximizer v = sqrt(r) Σ† u / ‖u‖_{Σ†};
                            // flag when the ignored outer ball is active
                            let v = &pinv * &u * (radius.sqrt() / quad.sqrt());
                            let wn = anchor_w
                                .iter()
                                .zip(v.iter())
                                .map(|(a, b)| (a + b) * (a + b))
                                .sum::<f64>()
                                .sqrt();
                            if wn > *ball_radius + 1e-12 {
                                clipped = true;
                            }
                        }
                        sup
                    });
                means.push(mean);
                inner_se = se;
                draws_out = draws;
            }
            let (mean, std_error) = combine_redraws(&means, inner_se);
            Ok(RademacherEstimate {
                mean,
                std_error,
                num_sign_draws: draws_out,
                num_data_redraws,
                ball_clipped: clipped,
            })
        }
        FamilyStep::Kernel { .. } => Err(BrlError::UnsupportedFamily(
            "local complexity of kernel steps is bound-form only".into(),
        )),
        FamilyStep::SparseLinear { .. } => Err(BrlError::UnsupportedFamily(
            "local complexity of sparse steps is bound-form only".into(),
        )),
    }
}

/// Unique positive fixed point of a sub-root function by the iteration
/// `r ← ψ(r)`.
///
/// Sub-rootness is spot-checked on a log-spaced probe grid (nondecreasing
/// `ψ`, nonincreasing `ψ(r)/√r`); violations error out. By sub-rootness the
/// iterates approach the fixed point monotonically, which is also asserted.
pub fn critical_radius<F: Fn(f64) -> f64>(psi: F, r_init: f64) -> Result<SubRootSolveResult> {
    if r_init.is_nan() || r_init <= 0.0 {
        return Err(BrlError::InvalidParameter("r_init must be positive".into()));
    }
    let mut prev_val = -f64::INFINITY;
    let mut prev_ratio = f64::INFINITY;
    for k in 0..SUBROOT_PROBES {
        // probe grid spanning six decades around r_init
        let t = k as f64 / (SUBROOT_PROBES - 1) as f64;
        let r = r_init * 10f64.powf(-3.0 + 6.0 * t);
        let v = psi(r);
        if !v.is_finite() || v < 0.0 {
            return Err(BrlError::SolverFailure(format!(
                "psi({r}) = {v} is not a nonnegative finite value"
            )));
        }
        if v < prev_val - 1e-9 * prev_val.abs().max(1.0) {
            return Err(BrlError::SolverFailure(
                "psi is decreasing on the probe grid; not sub-root".into(),
            ));
        }
        let ratio = v / r.sqrt();
        if ratio > prev_ratio + 1e-9 * prev_ratio.abs().max(1.0) {
            return Err(BrlError::SolverFailure(
                "psi(r)/sqrt(r) is increasing on the probe grid; not sub-root".into(),
            ));
        }
        prev_val = v;
        prev_ratio = ratio;
    }
    let mut r = r_init;
    let mut direction: Option<bool> = None;
    for it in 1..=10_000 {
        let next = psi(r);
        let residual = (next - r).abs();
        // relative stop; since psi contracts toward the fixed point, the
        // returned psi(r) is within the same relative tolerance of r*
        if residual <= 1e-8 * r.abs().max(1e-300) {
            return Ok(SubRootSolveResult {
                fixed_point: next,
                iterations: it,
                residual: (psi(next) - next).abs(),
            });
        }
        let rising = next > r;
        if let Some(was_rising) = direction {
            if was_rising != rising && residual > 1e-10 * r.max(1.0) {
                return Err(BrlError::SolverFailure(
                    "fixed-point iterates are not monotone; psi is not sub-root".into(),
                ));
            }
        }
        direction = Some(rising);
        r = next;
    }
    Err(BrlError::SolverFailure(format!(
        "fixed-point iteration did not converge from r_init = {r_init}"
    )))
}

/// Closed-form complexity bounds for one family variant: the global
/// Rademacher bound and the critical radius of the local complexity.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ClassBounds {
    pub rademacher: f64,
    pub critical_radius: f64,
    /// Set when a side condition of the formula is violated (only the sparse
    /// form has one: its sample-size regime).
    pub regime_violated: bool,
}

/// Finite class with values in `[0, D]` and `|F|` members:
/// `R ≤ 2D max(sqrt(log|F|/n), log|F|/n)`, `r* ≤ 2(D ∨ 2) log|F|/n`.
pub fn finite_class_bounds(value_bound: f64, family_size: usize, n: usize) -> ClassBounds {
    let log_f = (family_size as f64).ln();
    let ratio = log_f / n as f64;
    ClassBounds {
        rademacher: 2.0 * value_bound * ratio.sqrt().max(ratio),
        critical_radius: 2.0 * value_bound.max(2.0) * ratio,
        regime_violated: false,
    }
}

/// Linear class with weight ball `H` and unit feature norms:
/// `R ≤ H sqrt(2d/n)`, `r* ≤ 2d/n`.
pub fn linear_class_bounds(ball_radius: f64, dim: usize, n: usize) -> ClassBounds {
    ClassBounds {
        rademacher: ball_radius * (2.0 * dim as f64 / n as f64).sqrt(),
        critical_radius: 2.0 * dim as f64 / n as f64,
        regime_violated: false,
    }
}

/// Kernel class with RKHS ball `H` and operator spectrum `λ_1 ≥ λ_2 ≥ …`:
/// `R ≤ H sqrt((2/n) Σ min(1, 4λ_i))` and
/// `r* ≤ 2 min_j { j/n + H sqrt((2/n) Σ_{i>j} λ_i) }` with `j` scanned over
/// `0 ..= len`.
pub fn kernel_class_bounds(ball_radius: f64, eigenvalues: &[f64], n: usize) -> Result<ClassBounds> {
    let mut prev = f64::INFINITY;
    for &l in eigenvalues {
        if l < 0.0 || l > prev + 1e-12 {
            return Err(BrlError::InvalidParameter(
                "eigenvalues must be nonnegative and nonincreasing".into(),
            ));
        }
        prev = l;
    }
    let nf = n as f64;
    let rad_sum: f64 = eigenvalues.iter().map(|&l| (4.0 * l).min(1.0)).sum();
    let rademacher = ball_radius * (2.0 * rad_sum / nf).sqrt();
    let mut tail: f64 = eigenvalues.iter().sum();
    let mut best = f64::INFINITY;
    for j in 0..=eigenvalues.len() {
        let cand = j as f64 / nf + ball_radius * (2.0 * tail.max(0.0) / nf).sqrt();
        best = best.min(cand);
        if j < eigenvalues.len() {
            tail -= eigenvalues[j];
        }
    }
    Ok(ClassBounds {
        rademacher,
        critical_radius: 2.0 * best,
        regime_violated: false,
    })
}

/// Sparse linear class: `R ≤ cH sqrt(κ_s) sqrt(s log d / n)` and
/// `r* ≤ c² κ_s s log d / n`, with the absolute constant supplied by the
/// caller. Flags `regime_violated` when `n < c · s log d`.
pub fn sparse_class_bounds(
    ball_radius: f64,
    sparsity: usize,
    dim: usize,
    n: usize,
    kappa: f64,
    constant: f64,
) -> ClassBounds {
    let s_log_d = sparsity as f64 * (dim as f64).ln();
    let ratio = s_log_d / n as f64;
    ClassBounds {
        rademacher: constant * ball_radius * kappa.sqrt() * ratio.sqrt(),
        critical_radius: constant * constant * kappa * ratio,
        regime_violated: (n as f64) < constant * s_log_d,
    }
}

/// Checks the value-reduction inequality
/// `R^ρ(V_F) ≤ sqrt(2) · A · R^{ρ×Unif(A)}(F)` by Monte-Carlo on both sides.
///
/// `rho_states` is a distribution over states; the left side estimates the
/// complexity of `{s ↦ max_a f(s,a)}` (finite families only, the supremum
/// enumerated exactly inside each sign draw), the right side the complexity
/// of the family itself under `ρ × Unif(A)`. Returns
/// `(lhs estimate, rhs value, rhs estimate)`.
#[allow(clippy::too_many_arguments)]
pub fn value_reduction_check(
    step: &FamilyStep,
    num_actions: usize,
    rho_states: &[f64],
    n: usize,
    num_data_redraws: usize,
    num_sign_draws: usize,
    rng_seed: u64,
) -> Result<(RademacherEstimate, f64, RademacherEstimate)> {
    let members = match step {
        FamilyStep::Finite { members } => members,
        _ => {
            return Err(BrlError::UnsupportedFamily(
                "the value-reduction supremum is enumerated for finite families only".into(),
            ))
        }
    };
    // Left side: complexity of the value-reduced family over states,
    // expressed as a finite single-action family.
    let reduced_step = FamilyStep::Finite {
        members: members
            .iter()
            .map(|m| {
                m.iter()
                    .map(|row| vec![row.iter().cloned().fold(f64::NEG_INFINITY, f64::max)])
                    .collect()
            })
            .collect(),
    };
    let lhs = population_rademacher(
        &reduced_step,
        1,
        rho_states,
        n,
        num_data_redraws,
        num_sign_draws,
        rng_seed,
    )?;
    // Right side: complexity of the family under rho x Unif(A).
    let mut rho_joint = vec![0.0; rho_states.len() * num_actions];
    for (s, &p) in rho_states.iter().enumerate() {
        for a in 0..num_actions {
            rho_joint[s * num_actions + a] = p / num_actions as f64;
        }
    }
    let rhs_est = population_rademacher(
        step,
        num_actions,
        &rho_joint,
        n,
        num_data_redraws,
        num_sign_draws,
        rng_seed.wrapping_add(1),
    )?;
    let rhs = 2f64.sqrt() * num_actions as f64 * rhs_est.mean;
    Ok((lhs, rhs, rhs_est))
}

/// Evaluates the chosen excess-risk bound's right-hand side.
pub fn risk_bound_rhs(
    which: RiskBound,
    query: &BoundQuery,
    inputs: &ComplexityInputs,
) -> Result<f64> {
    query.validate()?;
    let n = query.n as f64;
    let h = query.horizon as f64;
    let c = query.constant;
    let need = |v: &[f64], name: &str| -> Result<f64> {
        if v.len() != query.horizon {
            return Err(BrlError::InvalidParameter(format!(
                "{name} must have one entry per step"
            )));
        }
        Ok(v.iter().sum())
    };
    let min_e = || -> Result<f64> {
        inputs.min_bellman_error.ok_or_else(|| {
            BrlError::InvalidParameter("min_bellman_error is required by this bound".into())
        })
    };
    match which {
        RiskBound::ErmDoubleSampling => {
            let sum = need(&inputs.rad_f, "rad_f")? + need(&inputs.rad_vf, "rad_vf")?;
            Ok(min_e()? + c * h * h * ((1.0 / query.delta).ln() / n).sqrt() + c * sum)
        }
        RiskBound::FqiGlobal => {
            let sum = need(&inputs.rad_f, "rad_f")?;
            Ok(query.epsilon + c * sum + c * h * h * ((h / query.delta).ln() / n).sqrt())
        }
        RiskBound::FqiLocal => {
            let crit = need(&inputs.crit_f, "crit_f")?;
            let delta_term = h * crit + h * h * (h / query.delta).ln() / n;
            Ok(query.epsilon + c * (query.epsilon * delta_term).sqrt() + c * delta_term)
        }
        RiskBound::MinimaxGlobal => {
            let sum = need(&inputs.rad_f, "rad_f")?
                + need(&inputs.rad_g, "rad_g")?
                + need(&inputs.rad_vf, "rad_vf")?;
            Ok(min_e()?
                + query.epsilon
                + c * h * h * ((1.0 / query.delta).ln() / n).sqrt()
                + c * sum)
        }
        RiskBound::MinimaxLocal => {
            if inputs.crit_f.len() != query.horizon
                || inputs.crit_g.len() != query.horizon
                || inputs.crit_vf.len() != query.horizon
            {
                return Err(BrlError::InvalidParameter(
                    "crit_f, crit_g, crit_vf must have one entry per step".into(),
                ));
            }
            let ct = query.c_tilde;
            let mut acc = 0.0;
            for i in 0..query.horizon {
                acc += ct * (inputs.crit_f[i] + inputs.crit_g[i] + inputs.crit_vf[i])
                    + (ct * inputs.crit_g[i] * query.epsilon).sqrt();
            }
            let delta_term = h * h * h * acc + h * h * (h / query.delta).ln() / n;
            let base = min_e()? + query.epsilon;
            Ok(base + c * (base * delta_term).sqrt() + c * delta_term)
        }
    }
}
