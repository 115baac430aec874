//! `brl` — batch RL risk laboratory command line.
//!
//! Subcommands: `generate` (sample dataset CSVs from a tabular instance),
//! `fit` (run a learner on a dataset or sweep a config), `complexity`
//! (Rademacher estimates and closed-form bounds as CSV), `hardness` (the
//! lower-bound classification suite) and `report` (reformat saved records).
//!
//! Exit codes: 0 on success, 2 for invalid configuration or inputs, 3 when a
//! statistical assumption is violated (e.g. infinite concentrability), 4 on
//! I/O failures. The master seed precedence is CLI flag, then the `BRL_SEED`
//! environment variable, then the config file / built-in default.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use brl_core::complexity::{
    critical_radius, finite_class_bounds, kernel_class_bounds, linear_class_bounds,
    population_rademacher, sparse_class_bounds, ClassBounds, DEFAULT_SIGN_DRAWS,
};
use brl_core::error::BrlError;
use brl_core::func_approx::{FamilyStep, FunctionFamily};
use brl_core::hardness::{lower_bound_experiment, ClassifierKind, LowerBoundParams};
use brl_core::harness::{
    dataset_from_csv, dataset_to_csv, double_dataset_to_csv, fmt_g12, generate_dataset,
    generate_double_dataset, report, run_experiment, ExperimentConfig, ExperimentRecord,
    LearnerKind, ReportFormat, HARDNESS_CSV_HEADER,
};
use brl_core::learners::{erm_double_sampling, fqi, minimax, report_excess_risk};
use brl_core::mdp::{BatchDistribution, TabularMdp};

#[derive(Parser)]
#[command(name = "brl", about = "Batch RL risk laboratory", version)]
struct Cli {
    /// Worker threads for parallel sections (grid points, trials).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a dataset CSV from an MDP and batch-distribution file pair.
    Generate(GenerateArgs),
    /// Run a learner on a dataset, or sweep a full experiment config.
    Fit(FitArgs),
    /// Tabulate Rademacher estimates against closed-form bounds.
    Complexity(ComplexityArgs),
    /// Run the lower-bound classification suite.
    Hardness(HardnessArgs),
    /// Reformat a saved experiment record.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// MDP JSON file.
    #[arg(long)]
    mdp: PathBuf,
    /// Batch-distribution JSON file.
    #[arg(long)]
    mu: PathBuf,
    /// Tuples per step.
    #[arg(long)]
    n: usize,
    /// Draw two independent next states per tuple.
    #[arg(long)]
    double: bool,
    /// Master seed (overrides BRL_SEED).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Experiment config JSON; runs the whole sweep when given.
    #[arg(long, conflicts_with_all = ["mdp", "mu", "family", "data"])]
    config: Option<PathBuf>,
    #[arg(long, requires_all = ["mu", "family", "data"])]
    mdp: Option<PathBuf>,
    #[arg(long)]
    mu: Option<PathBuf>,
    /// Family JSON file.
    #[arg(long)]
    family: Option<PathBuf>,
    /// Helper family JSON for the minimax learner.
    #[arg(long)]
    helper_family: Option<PathBuf>,
    /// Dataset CSV (double variant required by erm_ds).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Learner: erm_ds | fqi | minimax.
    #[arg(long)]
    learner: Option<LearnerKind>,
    /// Master seed override for config sweeps.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ComplexityArgs {
    /// Family JSON file.
    #[arg(long)]
    family: PathBuf,
    /// Batch-distribution JSON supplying the sampling distribution per step;
    /// uniform over the grid when omitted.
    #[arg(long)]
    mu: Option<PathBuf>,
    /// Sample sizes to tabulate.
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<usize>,
    /// Monte-Carlo sign draws.
    #[arg(long, default_value_t = DEFAULT_SIGN_DRAWS)]
    draws: usize,
    /// Data redraws for the population estimate.
    #[arg(long, default_value_t = 20)]
    redraws: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HardnessArgs {
    #[arg(long)]
    epsilon: f64,
    /// Number of middle states S.
    #[arg(long)]
    states: usize,
    /// Tuples (or double pairs) per step.
    #[arg(long)]
    n: usize,
    #[arg(long)]
    trials: usize,
    /// Draw sign vectors uniformly over the zero-sum ones.
    #[arg(long)]
    balanced: bool,
    /// bayes | double_sampling.
    #[arg(long, value_enum, default_value = "bayes")]
    classifier: ClassifierArg,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ClassifierArg {
    Bayes,
    DoubleSampling,
}

impl From<ClassifierArg> for ClassifierKind {
    fn from(c: ClassifierArg) -> Self {
        match c {
            ClassifierArg::Bayes => ClassifierKind::Bayes,
            ClassifierArg::DoubleSampling => ClassifierKind::DoubleSampling,
        }
    }
}

#[derive(Args)]
struct ReportArgs {
    /// Saved record JSON.
    #[arg(long)]
    record: PathBuf,
    /// csv | text.
    #[arg(long, default_value = "csv")]
    format: FormatArg,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum FormatArg {
    Csv,
    Text,
}

fn exit_code_for(err: &BrlError) -> u8 {
    match err {
        BrlError::Io(_) => 4,
        BrlError::AssumptionViolated(_) => 3,
        _ => 2,
    }
}

/// CLI flag beats the BRL_SEED environment variable beats the default.
fn resolve_seed(flag: Option<u64>, fallback: u64) -> u64 {
    if let Some(s) = flag {
        return s;
    }
    if let Ok(v) = std::env::var("BRL_SEED") {
        if let Ok(s) = v.parse() {
            return s;
        }
    }
    fallback
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, BrlError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn emit(out: &Option<PathBuf>, name: &str, content: &str) -> Result<(), BrlError> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(name), content)?;
            Ok(())
        }
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global()
            .is_err()
        {
            eprintln!("warning: thread pool already initialized");
        }
    }
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Complexity(args) => cmd_complexity(args),
        Command::Hardness(args) => cmd_hardness(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<(), BrlError> {
    let mdp: TabularMdp = read_json(&args.mdp)?;
    let mu: BatchDistribution = read_json(&args.mu)?;
    let seed = resolve_seed(args.seed, 0);
    let (name, csv) = if args.double {
        (
            "dataset_double.csv",
            double_dataset_to_csv(&generate_double_dataset(&mdp, &mu, args.n, seed)?),
        )
    } else {
        (
            "dataset.csv",
            dataset_to_csv(&generate_dataset(&mdp, &mu, args.n, seed)?),
        )
    };
    emit(&args.out, name, &csv)
}

fn cmd_fit(args: FitArgs) -> Result<(), BrlError> {
    if let Some(config_path) = &args.config {
        let mut config: ExperimentConfig = read_json(config_path)?;
        // seed override applies to master-seed sweeps
        if let brl_core::harness::ExperimentKind::Learner {
            seeds: brl_core::harness::SeedSpec::Master { master_seed, .. },
            ..
        } = &mut config.kind
        {
            *master_seed = resolve_seed(args.seed, *master_seed);
        }
        if let brl_core::harness::ExperimentKind::Hardness { seed, .. } = &mut config.kind {
            *seed = resolve_seed(args.seed, *seed);
        }
        let record = run_experiment(&config)?;
        let csv = report(&record, ReportFormat::Csv)?;
        let out_dir = args
            .out
            .clone()
            .or_else(|| config.out_dir.as_ref().map(PathBuf::from));
        let record_json = serde_json::to_string_pretty(&record)?;
        match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join(format!("{}.csv", config.name)), &csv)?;
                std::fs::write(
                    dir.join(format!("{}.record.json", config.name)),
                    record_json,
                )?;
            }
            None => print!("{csv}"),
        }
        return Ok(());
    }
    let (mdp_path, mu_path, family_path, data_path, learner) =
        match (&args.mdp, &args.mu, &args.family, &args.data, args.learner) {
            (Some(a), Some(b), Some(c), Some(d), Some(l)) => (a, b, c, d, l),
            _ => {
                return Err(BrlError::InvalidParameter(
                    "fit needs either --config or all of --mdp/--mu/--family/--data/--learner"
                        .into(),
                ))
            }
        };
    let mdp: TabularMdp = read_json(mdp_path)?;
    let mu: BatchDistribution = read_json(mu_path)?;
    let family: Arc<FunctionFamily> = Arc::new(read_json(family_path)?);
    let coverage = mdp.concentrability(&mu)?;
    if !coverage.is_finite() {
        return Err(BrlError::AssumptionViolated(format!(
            "batch distribution misses reachable pair (h={}, s={}, a={})",
            coverage.witness.0, coverage.witness.1, coverage.witness.2
        )));
    }
    let text = std::fs::read_to_string(data_path)?;
    let (single, double) = dataset_from_csv(&text)?;
    let mut result = match learner {
        LearnerKind::ErmDs => {
            let data = double.ok_or_else(|| {
                BrlError::InvalidParameter("erm_ds needs a double-sampled dataset".into())
            })?;
            erm_double_sampling(&family, &data)?
        }
        LearnerKind::Fqi => {
            let data = single
                .or_else(|| double.as_ref().map(|d| d.to_single()))
                .ok_or_else(|| BrlError::InvalidParameter("no dataset rows".into()))?;
            fqi(&family, &data)?
        }
        LearnerKind::Minimax => {
            let helper: Arc<FunctionFamily> = match &args.helper_family {
                Some(path) => Arc::new(read_json(path)?),
                None => Arc::clone(&family),
            };
            let data = single
                .or_else(|| double.as_ref().map(|d| d.to_single()))
                .ok_or_else(|| BrlError::InvalidParameter("no dataset rows".into()))?;
            minimax(&family, &helper, &data)?
        }
    };
    report_excess_risk(&mdp, &mu, &family, &mut result)?;
    let json = serde_json::to_string_pretty(&result)?;
    emit(&args.out, "fit.json", &format!("{json}\n"))
}

fn step_bounds(step: &FamilyStep, range: f64, n: usize) -> Result<ClassBounds, BrlError> {
    Ok(match step {
        FamilyStep::Finite { members } => finite_class_bounds(range, members.len(), n),
        FamilyStep::Linear { ball_radius, .. } => {
            linear_class_bounds(*ball_radius, step.size_parameter(), n)
        }
        FamilyStep::Kernel {
            eigenvalues,
            rkhs_bound,
            ..
        } => kernel_class_bounds(*rkhs_bound, eigenvalues, n)?,
        FamilyStep::SparseLinear {
            sparsity,
            ball_radius,
            kappa,
            ..
        } => sparse_class_bounds(
            *ball_radius,
            *sparsity,
            step.size_parameter(),
            n,
            *kappa,
            1.0,
        ),
    })
}

/// The sub-root majorant of the step's local complexity, solved numerically;
/// pairs with the closed-form bound column as a cross-check.
fn solved_critical_radius(step: &FamilyStep, range: f64, n: usize) -> Result<f64, BrlError> {
    let nf = n as f64;
    let sol = match step {
        FamilyStep::Finite { members } => {
            let log_f = (members.len() as f64).ln();
            if log_f == 0.0 {
                return Ok(0.0);
            }
            critical_radius(
                move |r| 2.0 * ((r * log_f / nf).sqrt()).max(range * log_f / nf),
                1.0,
            )?
        }
        FamilyStep::Linear { .. } => {
            let d = step.size_parameter() as f64;
            critical_radius(move |r| (2.0 * r * d / nf).sqrt(), 1.0)?
        }
        FamilyStep::Kernel {
            eigenvalues,
            rkhs_bound,
            ..
        } => {
            if eigenvalues.iter().all(|&l| l == 0.0) {
                return Ok(0.0);
            }
            let eig = eigenvalues.clone();
            let d2 = 4.0 * rkhs_bound * rkhs_bound;
            critical_radius(
                move |r| {
                    let s: f64 = eig.iter().map(|&l| r.min(d2 * l)).sum();
                    (2.0 * s / nf).sqrt()
                },
                1.0,
            )?
        }
        FamilyStep::SparseLinear {
            sparsity, kappa, ..
        } => {
            let s_log_d = *sparsity as f64 * (step.size_parameter() as f64).ln();
            if s_log_d == 0.0 {
                return Ok(0.0);
            }
            let k = *kappa;
            critical_radius(move |r| (k * r * s_log_d / nf).sqrt(), 1.0)?
        }
    };
    Ok(sol.fixed_point)
}

fn cmd_complexity(args: ComplexityArgs) -> Result<(), BrlError> {
    let family: FunctionFamily = read_json(&args.family)?;
    let mu: Option<BatchDistribution> = match &args.mu {
        Some(path) => Some(read_json(path)?),
        None => None,
    };
    let seed = resolve_seed(args.seed, 0);
    let family_name = args
        .family
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "family".into());
    let grid_cells = family.num_states() * family.num_actions();
    let mut csv = String::from(
        "family,variant,n,estimate,std_error,bound,critical_radius,critical_radius_bound\n",
    );
    for (h, step) in family.steps().iter().enumerate() {
        let rho: Vec<f64> = match &mu {
            Some(m) => m.flat_step(h),
            None => vec![1.0 / grid_cells as f64; grid_cells],
        };
        for &n in &args.n {
            let est = population_rademacher(
                step,
                family.num_actions(),
                &rho,
                n,
                args.redraws,
                args.draws,
                seed.wrapping_add(h as u64),
            )?;
            let bounds = step_bounds(step, family.range(), n)?;
            let solved = solved_critical_radius(step, family.range(), n)?;
            csv.push_str(&format!(
                "{family_name}[{h}],{},{n},{},{},{},{},{}\n",
                step.variant_name(),
                fmt_g12(est.mean),
                fmt_g12(est.std_error),
                fmt_g12(bounds.rademacher),
                fmt_g12(solved),
                fmt_g12(bounds.critical_radius),
            ));
        }
    }
    emit(&args.out, "complexity.csv", &csv)
}

fn cmd_hardness(args: HardnessArgs) -> Result<(), BrlError> {
    let summary = lower_bound_experiment(&LowerBoundParams {
        epsilon: args.epsilon,
        num_middle: args.states,
        n: args.n,
        trials: args.trials,
        balanced: args.balanced,
        classifier: args.classifier.into(),
        rng_seed: resolve_seed(args.seed, 0),
    })?;
    let mut csv = String::from(HARDNESS_CSV_HEADER);
    csv.push('\n');
    csv.push_str(&format!(
        "{},{},{},{},{},{},{},{},{},{}\n",
        fmt_g12(summary.epsilon),
        summary.num_middle,
        summary.n,
        summary.balanced,
        summary.classifier,
        summary.trials,
        fmt_g12(summary.avg_error),
        fmt_g12(summary.avg_excess),
        summary.in_regime,
        summary.rng_seed,
    ));
    emit(&args.out, "hardness.csv", &csv)
}

fn cmd_report(args: ReportArgs) -> Result<(), BrlError> {
    let record: ExperimentRecord = read_json(&args.record)?;
    let format = match args.format {
        FormatArg::Csv => ReportFormat::Csv,
        FormatArg::Text => ReportFormat::Text,
    };
    let text = report(&record, format)?;
    match &args.out {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            std::fs::write(path, text)?;
            Ok(())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
