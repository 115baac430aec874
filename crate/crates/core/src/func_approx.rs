//! Function families over the finite state-action grid.
//!
//! Four family variants are supported per step:
//!
//! * **Finite** — an explicit list of `S×A` member tables.
//! * **Linear** — `f = wᵀφ` with a dense feature map `φ : (s,a) → R^d`,
//!   feature norms at most one and weights constrained to a Euclidean ball.
//! * **Kernel** — functions in an RKHS represented by coefficients over the
//!   `(s,a)` grid anchors, with an RKHS-norm bound and the spectrum of the
//!   associated integral operator carried alongside.
//! * **SparseLinear** — linear with an additional support-size constraint.
//!
//! A [`QFunction`] is one member per step; evaluated values are clipped to
//! the family's declared range `[-R, R]`. Members are immutable after
//! construction and fitting is a pure function, so everything here is safe to
//! share across threads.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BrlError, Result};
use crate::mdp::{BatchDistribution, Policy, QTable, TabularMdp};

/// Singular values below `RANK_TOL · σ_max` are treated as zero in
/// pseudo-inverse solves, making rank-deficient fits deterministic and
/// basis-independent.
pub const RANK_TOL: f64 = 1e-10;

/// Ridge added per unit sample to kernel Gram diagonals for numerical
/// stability; tests comparing against unregularized algebra use tolerances
/// of at least 1e-6.
pub const KERNEL_RIDGE: f64 = 1e-8;

/// Number of randomly probed members when a supremum over a continuous
/// family has to be estimated.
pub const N_PROBE: usize = 256;

/// One step of a function family.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum FamilyStep {
    /// Explicit list of member tables, each `S×A`.
    Finite { members: Vec<QTable> },
    /// `f = wᵀφ` with `‖w‖₂ ≤ ball_radius`; `features[s][a]` is `φ(s,a)`.
    Linear {
        features: Vec<Vec<Vec<f64>>>,
        ball_radius: f64,
    },
    /// RKHS ball of radius `rkhs_bound`; `gram[i][j] = k(x_i, x_j)` over the
    /// row-major `(s,a)` grid, `eigenvalues` the nonincreasing spectrum of
    /// the integral operator under the designated sampling distribution.
    Kernel {
        gram: Vec<Vec<f64>>,
        eigenvalues: Vec<f64>,
        rkhs_bound: f64,
    },
    /// Linear with `‖w‖₀ ≤ sparsity`; `kappa` is the restricted condition
    /// number bound of the feature second-moment matrix.
    SparseLinear {
        features: Vec<Vec<Vec<f64>>>,
        sparsity: usize,
        ball_radius: f64,
        kappa: f64,
    },
}

impl FamilyStep {
    /// Feature dimension for linear variants, member count for finite ones.
    pub fn size_parameter(&self) -> usize {
        match self {
            FamilyStep::Finite { members } => members.len(),
            FamilyStep::Linear { features, .. } | FamilyStep::SparseLinear { features, .. } => {
                features
                    .first()
                    .and_then(|r| r.first())
                    .map_or(0, |f| f.len())
            }
            FamilyStep::Kernel { gram, .. } => gram.len(),
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            FamilyStep::Finite { .. } => "finite",
            FamilyStep::Linear { .. } => "linear",
            FamilyStep::Kernel { .. } => "kernel",
            FamilyStep::SparseLinear { .. } => "sparse_linear",
        }
    }
}

/// A per-step product family with a declared value range.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunctionFamily {
    num_states: usize,
    num_actions: usize,
    /// Evaluations are clipped to `[-range, range]`.
    range: f64,
    steps: Vec<FamilyStep>,
}

impl FunctionFamily {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        range: f64,
        steps: Vec<FamilyStep>,
    ) -> Result<Self> {
        if steps.is_empty() {
            return Err(BrlError::invalid("family", "no steps"));
        }
        if range.is_nan() || range <= 0.0 {
            return Err(BrlError::invalid("family", "range must be positive"));
        }
        for (h, step) in steps.iter().enumerate() {
            match step {
                FamilyStep::Finite { members } => {
                    if members.is_empty() {
                        return Err(BrlError::invalid(
                            "family",
                            format!("finite step {h} has no members"),
                        ));
                    }
                    for (i, m) in members.iter().enumerate() {
                        if m.len() != num_states || m.iter().any(|r| r.len() != num_actions) {
                            return Err(BrlError::ShapeMismatch(format!(
                                "member {i} at step {h} is not S×A"
                            )));
                        }
                        if m.iter().flatten().any(|v| v.abs() > range + 1e-9) {
                            return Err(BrlError::invalid(
                                "family",
                                format!("member {i} at step {h} violates the range bound"),
                            ));
                        }
                    }
                }
                FamilyStep::Linear { features, .. } | FamilyStep::SparseLinear { features, .. } => {
                    if features.len() != num_states
                        || features.iter().any(|r| r.len() != num_actions)
                    {
                        return Err(BrlError::ShapeMismatch(format!(
                            "features at step {h} are not S×A"
                        )));
                    }
                    let d = step.size_parameter();
                    for row in features.iter().flatten() {
                        if row.len() != d {
                            return Err(BrlError::ShapeMismatch(format!(
                                "inconsistent feature dimension at step {h}"
                            )));
                        }
                        let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                        if norm > 1.0 + 1e-9 {
                            return Err(BrlError::invalid(
                                "family",
                                format!("feature norm {norm} > 1 at step {h}"),
                            ));
                        }
                    }
                    if let FamilyStep::SparseLinear { sparsity, .. } = step {
                        if *sparsity == 0 || *sparsity > d {
                            return Err(BrlError::invalid(
                                "family",
                                format!("sparsity must be in 1..=d at step {h}"),
                            ));
                        }
                    }
                }
                FamilyStep::Kernel {
                    gram, eigenvalues, ..
                } => {
                    let m = gram.len();
                    if m != num_states * num_actions || gram.iter().any(|r| r.len() != m) {
                        return Err(BrlError::ShapeMismatch(format!(
                            "gram at step {h} must be square over the (s,a) grid"
                        )));
                    }
                    let mut prev = f64::INFINITY;
                    for &l in eigenvalues {
                        if l < -1e-12 || l > prev + 1e-12 {
                            return Err(BrlError::invalid(
                                "family",
                                format!(
                                    "eigenvalues at step {h} must be nonincreasing and nonnegative"
                                ),
                            ));
                        }
                        prev = l;
                    }
                }
            }
        }
        Ok(FunctionFamily {
            num_states,
            num_actions,
            range,
            steps,
        })
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn step(&self, h: usize) -> &FamilyStep {
        &self.steps[h]
    }

    pub fn steps(&self) -> &[FamilyStep] {
        &self.steps
    }

    /// Count of members per step for finite product families, `None` if any
    /// step is continuous.
    pub fn finite_step_sizes(&self) -> Option<Vec<usize>> {
        self.steps
            .iter()
            .map(|s| match s {
                FamilyStep::Finite { members } => Some(members.len()),
                _ => None,
            })
            .collect()
    }

    /// Builds the member selected by per-step indices of a finite family.
    pub fn finite_member(self: &Arc<Self>, indices: &[usize]) -> Result<QFunction> {
        let mut steps = Vec::with_capacity(self.steps.len());
        for (h, &i) in indices.iter().enumerate() {
            match &self.steps[h] {
                FamilyStep::Finite { members } => steps.push(StepValues::Table(members[i].clone())),
                _ => {
                    return Err(BrlError::UnsupportedFamily(
                        "finite_member on a continuous step".into(),
                    ))
                }
            }
        }
        QFunction::from_family(Arc::clone(self), steps)
    }

    /// Draws a random member (uniform index for finite steps, ball-sampled
    /// coefficients for continuous ones). Used for probe-based suprema.
    pub fn sample_member<R: Rng>(self: &Arc<Self>, rng: &mut R) -> QFunction {
        let steps = self
            .steps
            .iter()
            .map(|step| sample_step_member(step, rng))
            .collect();
        QFunction::from_family(Arc::clone(self), steps).expect("sampled member is well-formed")
    }
}

/// Draws one member of a single family step.
pub fn sample_step_member<R: Rng>(step: &FamilyStep, rng: &mut R) -> StepValues {
    match step {
        FamilyStep::Finite { members } => {
            let i = rng.gen_range(0..members.len());
            StepValues::Table(members[i].clone())
        }
        FamilyStep::Linear {
            features: _,
            ball_radius,
        } => {
            let d = step.size_parameter();
            StepValues::Weights(sample_ball(d, *ball_radius, rng))
        }
        FamilyStep::SparseLinear {
            sparsity,
            ball_radius,
            ..
        } => {
            let d = step.size_parameter();
            let mut w = sample_ball(d, *ball_radius, rng);
            // Keep only a random support of the admissible size.
            let mut idx: Vec<usize> = (0..d).collect();
            for i in (1..d).rev() {
                let j = rng.gen_range(0..=i);
                idx.swap(i, j);
            }
            for &i in idx.iter().skip(*sparsity) {
                w[i] = 0.0;
            }
            StepValues::Weights(w)
        }
        FamilyStep::Kernel {
            gram, rkhs_bound, ..
        } => {
            let m = gram.len();
            let dir: Vec<f64> = (0..m).map(|_| gauss(rng)).collect();
            // RKHS norm of Σ β_i k(·, x_i) is sqrt(βᵀ G β).
            let mut q = 0.0;
            for i in 0..m {
                for j in 0..m {
                    q += dir[i] * gram[i][j] * dir[j];
                }
            }
            let norm = q.max(0.0).sqrt();
            let radius = *rkhs_bound * rng.gen::<f64>().sqrt();
            let scale = if norm > 0.0 { radius / norm } else { 0.0 };
            StepValues::Coeffs(dir.into_iter().map(|v| v * scale).collect())
        }
    }
}

/// Standard normal draw via Box-Muller.
fn gauss<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Uniform draw from the Euclidean ball of the given radius.
fn sample_ball<R: Rng>(d: usize, radius: f64, rng: &mut R) -> Vec<f64> {
    // Gaussian direction, radius scaled by U^{1/d}.
    let mut v: Vec<f64> = (0..d).map(|_| gauss(rng)).collect();
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v;
    }
    let r = radius * rng.gen::<f64>().powf(1.0 / d as f64);
    for x in v.iter_mut() {
        *x *= r / norm;
    }
    v
}

/// Per-step representation of a Q-function member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "repr", content = "data", rename_all = "snake_case")]
pub enum StepValues {
    /// Dense `S×A` table (finite-family members and oracle functions).
    Table(QTable),
    /// Weight vector of a linear or sparse-linear member.
    Weights(Vec<f64>),
    /// Coefficients over the kernel grid anchors.
    Coeffs(Vec<f64>),
}

/// A per-step action-value function, one member per step, with the convention
/// that the function after the last step is identically zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QFunction {
    #[serde(skip)]
    family: Option<Arc<FunctionFamily>>,
    num_states: usize,
    num_actions: usize,
    range: f64,
    steps: Vec<StepValues>,
}

impl QFunction {
    /// A member of `family` given per-step representations.
    pub fn from_family(family: Arc<FunctionFamily>, steps: Vec<StepValues>) -> Result<Self> {
        if steps.len() != family.horizon() {
            return Err(BrlError::ShapeMismatch(
                "member must have one step per family step".into(),
            ));
        }
        for (h, (sv, fs)) in steps.iter().zip(family.steps()).enumerate() {
            let ok = matches!(
                (sv, fs),
                (StepValues::Table(_), FamilyStep::Finite { .. })
                    | (StepValues::Weights(_), FamilyStep::Linear { .. })
                    | (StepValues::Weights(_), FamilyStep::SparseLinear { .. })
                    | (StepValues::Coeffs(_), FamilyStep::Kernel { .. })
            );
            if !ok {
                return Err(BrlError::UnsupportedFamily(format!(
                    "representation at step {h} does not match the family variant"
                )));
            }
        }
        Ok(QFunction {
            num_states: family.num_states(),
            num_actions: family.num_actions(),
            range: family.range(),
            family: Some(family),
            steps,
        })
    }

    /// A free-standing tabular Q-function (no family attached); used by
    /// oracles and tests.
    pub fn from_tables(tables: Vec<QTable>, range: f64) -> Result<Self> {
        if tables.is_empty() {
            return Err(BrlError::EmptyInput("no step tables".into()));
        }
        let num_states = tables[0].len();
        let num_actions = tables[0].first().map_or(0, |r| r.len());
        if num_states == 0 || num_actions == 0 {
            return Err(BrlError::ShapeMismatch("empty step table".into()));
        }
        for t in &tables {
            if t.len() != num_states || t.iter().any(|r| r.len() != num_actions) {
                return Err(BrlError::ShapeMismatch(
                    "inconsistent table shapes across steps".into(),
                ));
            }
        }
        Ok(QFunction {
            family: None,
            num_states,
            num_actions,
            range,
            steps: tables.into_iter().map(StepValues::Table).collect(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn step_values(&self, h: usize) -> &StepValues {
        &self.steps[h]
    }

    pub fn family(&self) -> Option<&Arc<FunctionFamily>> {
        self.family.as_ref()
    }

    /// Re-binds a family to a deserialized Q-function. The serialized form
    /// carries only per-step representations; weight and kernel-coefficient
    /// steps cannot be evaluated until their family is attached again.
    pub fn attach_family(&mut self, family: Arc<FunctionFamily>) -> Result<()> {
        let rebound = QFunction::from_family(family, self.steps.clone())?;
        *self = rebound;
        Ok(())
    }

    /// Evaluates `f_h(s, a)`, clipped to the declared range.
    pub fn eval(&self, h: usize, s: usize, a: usize) -> f64 {
        debug_assert!(h < self.steps.len() && s < self.num_states && a < self.num_actions);
        let raw = match &self.steps[h] {
            StepValues::Table(t) => t[s][a],
            StepValues::Weights(w) => {
                let feats = self.features_at(h, s, a);
                w.iter().zip(feats).map(|(wi, fi)| wi * fi).sum()
            }
            StepValues::Coeffs(c) => {
                let family = self.family.as_ref().expect("coeff repr requires a family");
                match family.step(h) {
                    FamilyStep::Kernel { gram, .. } => {
                        let idx = s * self.num_actions + a;
                        c.iter().zip(gram[idx].iter()).map(|(ci, gi)| ci * gi).sum()
                    }
                    _ => unreachable!("validated at construction"),
                }
            }
        };
        raw.clamp(-self.range, self.range)
    }

    fn features_at(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let family = self.family.as_ref().expect("weight repr requires a family");
        match family.step(h) {
            FamilyStep::Linear { features, .. } | FamilyStep::SparseLinear { features, .. } => {
                &features[s][a]
            }
            _ => unreachable!("validated at construction"),
        }
    }

    /// `V_f(s) = max_a f_h(s, a)` at step `h`.
    pub fn value_reduce(&self, h: usize, s: usize) -> f64 {
        (0..self.num_actions)
            .map(|a| self.eval(h, s, a))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Value of the next-step function at `s`, zero past the last step.
    pub fn next_value(&self, h: usize, s: usize) -> f64 {
        if h + 1 < self.steps.len() {
            self.value_reduce(h + 1, s)
        } else {
            0.0
        }
    }

    /// The step-`h` function as a dense table.
    pub fn step_table(&self, h: usize) -> QTable {
        (0..self.num_states)
            .map(|s| (0..self.num_actions).map(|a| self.eval(h, s, a)).collect())
            .collect()
    }

    /// Greedy policy; ties broken toward the lowest action index.
    pub fn greedy_policy(&self) -> Policy {
        let actions = (0..self.steps.len())
            .map(|h| {
                (0..self.num_states)
                    .map(|s| {
                        let mut best_a = 0;
                        let mut best = f64::NEG_INFINITY;
                        for a in 0..self.num_actions {
                            let v = self.eval(h, s, a);
                            if v > best {
                                best = v;
                                best_a = a;
                            }
                        }
                        best_a
                    })
                    .collect()
            })
            .collect();
        Policy::new(actions)
    }
}

/// Outcome of a least-squares fit of one family step.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// The fitted member.
    pub values: StepValues,
    /// Index of the chosen member for finite families.
    pub member_index: Option<usize>,
    /// Achieved mean squared error over the input pairs.
    pub residual: f64,
}

/// Fits one family step to `((s, a), target)` pairs by least squares.
///
/// Finite families are minimized exactly by enumeration (ties to the lowest
/// member index). Linear and sparse-linear fits use the minimum-norm solution
/// of the empirical design with the weight vector projected back onto its
/// ball by radial scaling; sparse fits search supports exhaustively while
/// `C(d, s) ≤ 10^4` and fall back to iterative hard thresholding beyond
/// that. Kernel fits solve the representer system with a small ridge and
/// project the coefficient vector onto the RKHS ball.
pub fn least_squares_fit(
    step: &FamilyStep,
    num_actions: usize,
    pairs: &[((usize, usize), f64)],
    range: f64,
) -> Result<FitResult> {
    if pairs.is_empty() {
        return Err(BrlError::EmptyInput("least-squares fit needs pairs".into()));
    }
    if pairs.iter().any(|&(_, y)| !y.is_finite()) {
        return Err(BrlError::InvalidParameter(
            "non-finite regression target".into(),
        ));
    }
    let n = pairs.len();
    match step {
        FamilyStep::Finite { members } => {
            let mut best = f64::INFINITY;
            let mut best_i = 0;
            for (i, m) in members.iter().enumerate() {
                let mut acc = 0.0;
                for &((s, a), y) in pairs {
                    let d = m[s][a] - y;
                    acc += d * d;
                }
                if acc < best {
                    best = acc;
                    best_i = i;
                }
            }
            Ok(FitResult {
                values: StepValues::Table(members[best_i].clone()),
                member_index: Some(best_i),
                residual: best / n as f64,
            })
        }
        FamilyStep::Linear {
            features,
            ball_radius,
        } => {
            let d = step.size_parameter();
            let x = DMatrix::from_fn(n, d, |i, j| {
                let ((s, a), _) = pairs[i];
                features[s][a][j]
            });
            let y = DVector::from_fn(n, |i, _| pairs[i].1);
            let mut w = min_norm_solve(&x, &y);
            project_ball(&mut w, *ball_radius);
            let residual = clipped_residual(&x, &w, &y, range);
            Ok(FitResult {
                values: StepValues::Weights(w.iter().cloned().collect()),
                member_index: None,
                residual,
            })
        }
        FamilyStep::SparseLinear {
            features,
            sparsity,
            ball_radius,
            ..
        } => {
            let d = step.size_parameter();
            let x = DMatrix::from_fn(n, d, |i, j| {
                let ((s, a), _) = pairs[i];
                features[s][a][j]
            });
            let y = DVector::from_fn(n, |i, _| pairs[i].1);
            let mut w = if binomial(d, *sparsity) <= 10_000 {
                best_support_exhaustive(&x, &y, d, *sparsity)
            } else {
                iterative_hard_threshold(&x, &y, d, *sparsity)
            };
            project_ball(&mut w, *ball_radius);
            let residual = clipped_residual(&x, &w, &y, range);
            Ok(FitResult {
                values: StepValues::Weights(w.iter().cloned().collect()),
                member_index: None,
                residual,
            })
        }
        FamilyStep::Kernel {
            gram, rkhs_bound, ..
        } => {
            // Representer solve over the sample points: alpha = (K + ridge)^{-1} y,
            // then scatter onto the grid anchors.
            let idx: Vec<usize> = pairs
                .iter()
                .map(|&((s, a), _)| s * num_actions + a)
                .collect();
            let k = DMatrix::from_fn(n, n, |i, j| gram[idx[i]][idx[j]])
                + DMatrix::identity(n, n) * (KERNEL_RIDGE * n as f64);
            let y = DVector::from_fn(n, |i, _| pairs[i].1);
            let alpha = k
                .lu()
                .solve(&y)
                .ok_or_else(|| BrlError::SolverFailure("singular kernel system".into()))?;
            let m = gram.len();
            let mut coeffs = vec![0.0; m];
            for (i, &gi) in idx.iter().enumerate() {
                coeffs[gi] += alpha[i];
            }
            // RKHS norm and ball projection.
            let mut q = 0.0;
            for i in 0..m {
                if coeffs[i] == 0.0 {
                    continue;
                }
                for j in 0..m {
                    q += coeffs[i] * gram[i][j] * coeffs[j];
                }
            }
            let norm = q.max(0.0).sqrt();
            if norm > *rkhs_bound {
                let scale = *rkhs_bound / norm;
                for c in coeffs.iter_mut() {
                    *c *= scale;
                }
            }
            let mut acc = 0.0;
            for (i, &((_, _), yv)) in pairs.iter().enumerate() {
                let pred: f64 = coeffs
                    .iter()
                    .zip(gram[idx[i]].iter())
                    .map(|(c, g)| c * g)
                    .sum();
                let diff = pred.clamp(-range, range) - yv;
                acc += diff * diff;
            }
            Ok(FitResult {
                values: StepValues::Coeffs(coeffs),
                member_index: None,
                residual: acc / n as f64,
            })
        }
    }
}

/// Minimum-norm least-squares solution via SVD with relative cutoff.
fn min_norm_solve(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = if smax > 0.0 {
        RANK_TOL * smax
    } else {
        RANK_TOL
    };
    svd.solve(y, eps).expect("svd solve")
}

fn project_ball(w: &mut DVector<f64>, radius: f64) {
    let norm = w.norm();
    if norm > radius && norm > 0.0 {
        *w *= radius / norm;
    }
}

fn clipped_residual(x: &DMatrix<f64>, w: &DVector<f64>, y: &DVector<f64>, range: f64) -> f64 {
    let pred = x * w;
    let mut acc = 0.0;
    for i in 0..y.len() {
        let diff = pred[i].clamp(-range, range) - y[i];
        acc += diff * diff;
    }
    acc / y.len() as f64
}

pub(crate) fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k.min(n));
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
        if acc > 1_000_000_000 {
            return acc;
        }
    }
    acc
}

/// Enumerates all supports of the given size in lexicographic order and
/// returns the restricted least-squares solution with the smallest residual.
fn best_support_exhaustive(x: &DMatrix<f64>, y: &DVector<f64>, d: usize, s: usize) -> DVector<f64> {
    let mut support: Vec<usize> = (0..s).collect();
    let mut best_res = f64::INFINITY;
    let mut best_w = DVector::zeros(d);
    loop {
        let xs = x.select_columns(support.iter());
        let ws = min_norm_solve(&xs, y);
        let res = (&xs * &ws - y).norm_squared();
        if res < best_res - 1e-15 {
            best_res = res;
            let mut w = DVector::zeros(d);
            for (i, &j) in support.iter().enumerate() {
                w[j] = ws[i];
            }
            best_w = w;
        }
        // next lexicographic combination
        let mut i = s;
        loop {
            if i == 0 {
                return best_w;
            }
            i -= 1;
            if support[i] != i + d - s {
                break;
            }
        }
        support[i] += 1;
        for j in i + 1..s {
            support[j] = support[j - 1] + 1;
        }
    }
}

/// Projected-gradient fallback for large support spaces; refits on the final
/// support so the output is a true least-squares solution there.
fn iterative_hard_threshold(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    d: usize,
    s: usize,
) -> DVector<f64> {
    let n = y.len() as f64;
    let gram = x.transpose() * x / n;
    let l = gram
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0, f64::max)
        .max(1e-12);
    let step = 1.0 / l;
    let mut w = DVector::zeros(d);
    for _ in 0..300 {
        let grad = x.transpose() * (x * &w - y) / n;
        w -= step * grad;
        hard_threshold(&mut w, s);
    }
    let support: Vec<usize> = (0..d).filter(|&j| w[j] != 0.0).collect();
    if support.is_empty() {
        return w;
    }
    let xs = x.select_columns(support.iter());
    let ws = min_norm_solve(&xs, y);
    let mut out = DVector::zeros(d);
    for (i, &j) in support.iter().enumerate() {
        out[j] = ws[i];
    }
    out
}

fn hard_threshold(w: &mut DVector<f64>, s: usize) {
    let mut idx: Vec<usize> = (0..w.len()).collect();
    idx.sort_by(|&i, &j| w[j].abs().partial_cmp(&w[i].abs()).unwrap());
    for &j in idx.iter().skip(s) {
        w[j] = 0.0;
    }
}

/// Result of a completeness-gap computation.
#[derive(Debug, Clone)]
pub struct CompletenessReport {
    /// `max_h sup_{f ∈ F_{h+1}} inf_{g ∈ G_h} ‖g − T*_h f‖²_{μ_h}`.
    pub gap: f64,
    /// Step attaining the maximum.
    pub witness_step: usize,
    /// The next-step function attaining the supremum, as a dense table.
    pub witness: QTable,
    /// True when the outer supremum was enumerated exactly; false when it
    /// was estimated from random probes (a lower estimate of the true sup).
    pub is_exact: bool,
}

/// Worst-case squared projection residual of optimal-Bellman-operator images
/// of `family_f` onto `family_g` under the batch distribution.
pub fn completeness_gap(
    mdp: &TabularMdp,
    mu: &BatchDistribution,
    family_f: &Arc<FunctionFamily>,
    family_g: &Arc<FunctionFamily>,
    rng_seed: u64,
) -> Result<CompletenessReport> {
    let horizon = mdp.horizon();
    if family_f.horizon() != horizon || family_g.horizon() != horizon {
        return Err(BrlError::ShapeMismatch(
            "family horizons must match the MDP".into(),
        ));
    }
    let zero_table = vec![vec![0.0; mdp.num_actions()]; mdp.num_states()];
    let mut report = CompletenessReport {
        gap: -1.0,
        witness_step: 0,
        witness: zero_table.clone(),
        is_exact: true,
    };
    let mut rng = crate::rng::seeded_rng(rng_seed);
    for h in 0..horizon {
        // Candidate next-step functions: the zero function past the horizon,
        // every member for finite steps, random probes otherwise.
        let candidates: Vec<(QTable, bool)> = if h + 1 == horizon {
            vec![(zero_table.clone(), true)]
        } else {
            match family_f.step(h + 1) {
                FamilyStep::Finite { members } => {
                    members.iter().map(|m| (m.clone(), true)).collect()
                }
                _ => (0..N_PROBE)
                    .map(|_| {
                        let sv = sample_step_member(family_f.step(h + 1), &mut rng);
                        (step_values_table(family_f, h + 1, &sv), false)
                    })
                    .collect(),
            }
        };
        for (table, exact) in candidates {
            let target = mdp.bellman_apply(h, &table)?;
            let residual = projection_residual(family_g.step(h), mdp, mu, h, &target)?;
            if residual > report.gap {
                report.gap = residual;
                report.witness_step = h;
                report.witness = table.clone();
            }
            if !exact {
                report.is_exact = false;
            }
        }
    }
    report.gap = report.gap.max(0.0);
    Ok(report)
}

/// Evaluates a single step representation as a dense table, with the
/// family's range clipping applied.
pub fn step_values_table(family: &FunctionFamily, h: usize, sv: &StepValues) -> QTable {
    let ns = family.num_states();
    let na = family.num_actions();
    let range = family.range();
    let raw_at = |s: usize, a: usize| -> f64 {
        match sv {
            StepValues::Table(t) => t[s][a],
            StepValues::Weights(w) => match family.step(h) {
                FamilyStep::Linear { features, .. } | FamilyStep::SparseLinear { features, .. } => {
                    w.iter()
                        .zip(features[s][a].iter())
                        .map(|(wi, fi)| wi * fi)
                        .sum()
                }
                _ => unreachable!("weights require a linear step"),
            },
            StepValues::Coeffs(c) => match family.step(h) {
                FamilyStep::Kernel { gram, .. } => c
                    .iter()
                    .zip(gram[s * na + a].iter())
                    .map(|(ci, gi)| ci * gi)
                    .sum(),
                _ => unreachable!("coeffs require a kernel step"),
            },
        }
    };
    (0..ns)
        .map(|s| (0..na).map(|a| raw_at(s, a).clamp(-range, range)).collect())
        .collect()
}

/// `inf_{g ∈ G_h} ‖g − target‖²_{μ_h}`, exact for finite steps and in closed
/// form (weighted projection) for linear and kernel steps.
fn projection_residual(
    step: &FamilyStep,
    mdp: &TabularMdp,
    mu: &BatchDistribution,
    h: usize,
    target: &QTable,
) -> Result<f64> {
    let ns = mdp.num_states();
    let na = mdp.num_actions();
    match step {
        FamilyStep::Finite { members } => {
            let mut best = f64::INFINITY;
            for m in members {
                let mut acc = 0.0;
                for s in 0..ns {
                    for a in 0..na {
                        let w = mu.prob(h, s, a);
                        if w > 0.0 {
                            let d = m[s][a] - target[s][a];
                            acc += w * d * d;
                        }
                    }
                }
                best = best.min(acc);
            }
            Ok(best)
        }
        FamilyStep::Linear {
            features,
            ball_radius,
        }
        | FamilyStep::SparseLinear {
            features,
            ball_radius,
            ..
        } => {
            // mu-weighted projection onto the span; if the solution leaves
            // the ball it is radially rescaled, giving an upper bound on the
            // constrained infimum.
            let d = features[0][0].len();
            let mut rows = Vec::new();
            let mut ys = Vec::new();
            for s in 0..ns {
                for a in 0..na {
                    let w = mu.prob(h, s, a);
                    if w > 0.0 {
                        let sw = w.sqrt();
                        rows.push(features[s][a].iter().map(|v| v * sw).collect::<Vec<_>>());
                        ys.push(target[s][a] * sw);
                    }
                }
            }
            let x = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
            let y = DVector::from_fn(ys.len(), |i, _| ys[i]);
            let mut w = min_norm_solve(&x, &y);
            project_ball(&mut w, *ball_radius);
            Ok((x * w - y).norm_squared())
        }
        FamilyStep::Kernel {
            gram, rkhs_bound, ..
        } => {
            // Weighted projection over the grid anchors with the usual ridge.
            let m = gram.len();
            let mut weights = vec![0.0; m];
            let mut targets = vec![0.0; m];
            for s in 0..ns {
                for a in 0..na {
                    weights[s * na + a] = mu.prob(h, s, a);
                    targets[s * na + a] = target[s][a];
                }
            }
            let active: Vec<usize> = (0..m).filter(|&i| weights[i] > 0.0).collect();
            let k = active.len();
            let x = DMatrix::from_fn(k, m, |i, j| weights[active[i]].sqrt() * gram[active[i]][j]);
            let y = DVector::from_fn(k, |i, _| weights[active[i]].sqrt() * targets[active[i]]);
            let reg = x.transpose() * &x
                + DMatrix::from_fn(m, m, |i, j| gram[i][j]) * (KERNEL_RIDGE * k as f64);
            let rhs = x.transpose() * &y;
            let beta = reg
                .lu()
                .solve(&rhs)
                .ok_or_else(|| BrlError::SolverFailure("singular projection system".into()))?;
            let mut q = 0.0;
            for i in 0..m {
                for j in 0..m {
                    q += beta[i] * gram[i][j] * beta[j];
                }
            }
            let norm = q.max(0.0).sqrt();
            let scale = if norm > *rkhs_bound {
                *rkhs_bound / norm
            } else {
                1.0
            };
            Ok((x * (beta * scale) - y).norm_squared())
        }
    }
}

/// Eigenvalues of the integral operator of a kernel under a sampling
/// distribution over the grid: the spectrum of `D^{1/2} K D^{1/2}` with `D`
/// the diagonal of grid masses. Returned in nonincreasing order.
pub fn weighted_gram_eigenvalues(gram: &[Vec<f64>], rho: &[f64]) -> Vec<f64> {
    let m = gram.len();
    let mat = DMatrix::from_fn(m, m, |i, j| rho[i].sqrt() * gram[i][j] * rho[j].sqrt());
    let mut eig: Vec<f64> = mat
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0))
        .collect();
    eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
    eig
}
