//! Command-line front end: `riccati`, `simulate`, `tradeoff`, `verify`.
//!
//! Exit codes: 0 success, 1 a verification check failed, 2 usage or
//! configuration error.

pub mod config;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use crate::model::{validate_model, CostWeights, PlantModel, ValidationReport};
use crate::queuing::{
    dp_oracle_build, expected_queue_cost, Greedy, NoiseGrid, PolicySpec, QueuingPolicy, ZeroWait,
};
use crate::riccati::{solve_riccati, RiccatiSolution, RICCATI_TOL};
use crate::simulator::{
    ages_admissible, cost_identity_check, empirical_metrics, estimator_consistency, mean_se,
    write_long_format_file, write_trajectory_file, NoiseSource, Simulator, TrajectoryRecord,
};
use crate::tradeoff::{curve_csv, curve_svg, default_lambdas, emit_curve, sweep, SweepSettings};

use config::{parse_policy, ConfigError, RunConfig};

/// Relative tolerance of the pathwise cost identity.
pub const IDENTITY_TOL: f64 = 1e-7;
/// Relative tolerance of the estimator/noise error identity.
pub const ESTIMATOR_TOL: f64 = 1e-10;

#[derive(Debug, Parser)]
#[command(
    name = "aoi-control",
    version,
    about = "LQ control with age-of-information-limited feedback: Riccati gains, closed-loop simulation, trade-off sweeps"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dump S_k, K_k and Gamma_k as CSV.
    Riccati(CommonArgs),
    /// Simulate closed-loop trajectories and print the empirical metrics.
    Simulate(SimulateArgs),
    /// Sweep the multiplier and write the (J, A) trade-off curve.
    Tradeoff(CommonArgs),
    /// Run the invariant checks and report pass/fail.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// zero-wait | greedy | greedy-bounded:<kbar> | dp-oracle
    #[arg(long)]
    pub policy: Option<String>,
    /// Lagrange multiplier (overrides weights.lambda).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Trajectories per run (or per sweep point).
    #[arg(long)]
    pub trajectories: Option<usize>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write an SVG plot next to the curve CSV.
    #[arg(long)]
    pub plot: bool,
    /// Worker threads for trajectory batches; results do not depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Override a config entry, e.g. --set weights.lambda=0.01 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Write all trajectories into one file with a leading `traj` column.
    #[arg(long)]
    pub long_format: bool,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Corrupt one recorded input before checking (negative control).
    #[arg(long, hide = true)]
    pub inject_corruption: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("model assumptions violated:\n{0}")]
    Invalid(ValidationReport),
    #[error(transparent)]
    Library(#[from] Error),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error("{0} verification check(s) failed")]
    ChecksFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ChecksFailed(_) => 1,
            _ => 2,
        }
    }
}

fn write_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Write {
        path: path.to_path_buf(),
        source,
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version are not errors and go to stdout
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return 2;
            }
            let _ = write!(out, "{}", e.render());
            return 0;
        }
    };
    match run(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Riccati(args) => cmd_riccati(&Setup::resolve(args)?, out),
        Command::Simulate(args) => {
            let setup = Setup::resolve(&args.common)?;
            let long_format = args.long_format || setup.config.run.long_format;
            cmd_simulate(&setup, long_format, out)
        }
        Command::Tradeoff(args) => cmd_tradeoff(&Setup::resolve(args)?, out),
        Command::Verify(args) => cmd_verify(&Setup::resolve(&args.common)?, args, out),
    }
}

/// Config merged with command-line flags and validated.
pub struct Setup {
    pub config: RunConfig,
    pub model: PlantModel,
    pub weights: CostWeights,
    pub policy: PolicySpec,
    pub trajectories: usize,
    pub seed: u64,
    pub workers: usize,
    pub out: Option<PathBuf>,
    pub plot: bool,
}

impl Setup {
    pub fn resolve(args: &CommonArgs) -> Result<Self, CliError> {
        let config = RunConfig::load(&args.config, &args.overrides)?;
        let model = config.plant()?;
        let mut weights = config.weights()?;
        if let Some(lambda) = args.lambda {
            weights = weights.with_lambda(lambda);
        }
        let report = validate_model(&model, &weights)?;
        if !report.is_valid() {
            return Err(CliError::Invalid(report));
        }
        let policy = match &args.policy {
            Some(p) => parse_policy(p, config.run.kbar)?,
            None => config.policy()?,
        };
        Ok(Self {
            model,
            weights,
            policy,
            trajectories: args.trajectories.unwrap_or(config.run.trajectories),
            seed: args.seed.unwrap_or(config.run.seed),
            workers: args.workers.unwrap_or(config.run.workers),
            out: args.out.clone().or_else(|| config.run.out.clone()),
            plot: args.plot || config.run.plot,
            config,
        })
    }

    fn grid(&self) -> Result<NoiseGrid, CliError> {
        Ok(self.config.noise_grid(&self.model)?)
    }
}

fn matrix_header(h: &mut Vec<String>, name: &str, rows: usize, cols: usize) {
    for i in 0..rows {
        for j in 0..cols {
            h.push(format!("{name}_{i}_{j}"));
        }
    }
}

fn push_row_major(row: &mut Vec<String>, m: &nalgebra::DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            row.push(m[(i, j)].to_string());
        }
    }
}

/// CSV with one row per `k = 0..=N+1`: `S_k`, `K_k`, `Γ_k` row-major
/// (`K` and `Γ` empty on the terminal row).
pub fn riccati_csv(sol: &RiccatiSolution, n: usize, m: usize) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["k".to_string()];
    matrix_header(&mut header, "S", n, n);
    matrix_header(&mut header, "K", m, n);
    matrix_header(&mut header, "Gamma", n, n);
    let width = header.len();
    w.write_record(&header).expect("in-memory csv");
    for (k, s) in sol.s_seq().iter().enumerate() {
        let mut row = vec![k.to_string()];
        push_row_major(&mut row, s);
        if k <= sol.horizon() {
            push_row_major(&mut row, &sol.gains()[k]);
            push_row_major(&mut row, &sol.gamma_seq()[k]);
        }
        row.resize(width, String::new());
        w.write_record(&row).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
}

fn cmd_riccati(setup: &Setup, out: &mut dyn Write) -> Result<(), CliError> {
    let sol = solve_riccati(&setup.model, &setup.weights)?;
    let text = riccati_csv(&sol, setup.model.state_dim(), setup.model.input_dim());
    match &setup.out {
        Some(path) => fs::write(path, text).map_err(write_err(path)),
        None => out
            .write_all(text.as_bytes())
            .map_err(write_err(Path::new("<stdout>"))),
    }
}

fn simulator_for<'a>(
    policy: PolicySpec,
    model: &'a PlantModel,
    weights: &'a CostWeights,
    sol: &'a RiccatiSolution,
    grid: &NoiseGrid,
) -> Result<Simulator<'a>, Error> {
    match policy {
        // the oracle is only optimal for the noise law it was solved on
        PolicySpec::DpOracle => Simulator::with_noise(model, weights, sol, NoiseSource::Grid(grid.clone())),
        _ => Simulator::new(model, weights, sol),
    }
}

fn cmd_simulate(setup: &Setup, long_format: bool, out: &mut dyn Write) -> Result<(), CliError> {
    if setup.trajectories == 0 {
        return Err(Error::InvalidInput("need at least one trajectory".into()).into());
    }
    let (model, weights) = (&setup.model, &setup.weights);
    let sol = solve_riccati(model, weights)?;
    let grid = setup.grid()?;
    let policy = setup
        .policy
        .build(model, weights, &sol, &grid, &setup.config.dp_limits())?;
    let sim = simulator_for(setup.policy, model, weights, &sol, &grid)?;
    let records = sim.run_batch(policy.as_ref(), setup.trajectories, setup.seed, setup.workers)?;

    let path = setup
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("trajectory.csv"));
    if long_format {
        write_long_format_file(&path, &records).map_err(write_err(&path))?;
    } else if records.len() == 1 {
        write_trajectory_file(&path, &records[0]).map_err(write_err(&path))?;
    } else {
        fs::create_dir_all(&path).map_err(write_err(&path))?;
        for r in &records {
            let file = path.join(format!("traj_{:05}.csv", r.trajectory_index));
            write_trajectory_file(&file, r).map_err(write_err(&file))?;
        }
    }

    let metrics = empirical_metrics(&records, weights)?;
    writeln!(
        out,
        "policy={} lambda={} M={} A_hat={} se_A={} J_hat={} se_J={} chi_hat={} se_chi={}",
        policy.name(),
        weights.lambda(),
        metrics.m,
        metrics.a_hat,
        metrics.se_a,
        metrics.j_hat,
        metrics.se_j,
        metrics.chi_hat,
        metrics.se_chi
    )
    .map_err(write_err(Path::new("<stdout>")))
}

fn cmd_tradeoff(setup: &Setup, out: &mut dyn Write) -> Result<(), CliError> {
    let lambdas = if setup.config.run.lambda_grid.is_empty() {
        default_lambdas()
    } else {
        setup.config.run.lambda_grid.clone()
    };
    let settings = SweepSettings {
        policy: setup.policy,
        trajectories: setup.trajectories,
        master_seed: setup.seed,
        workers: setup.workers,
        grid: setup.grid()?,
        dp_limits: setup.config.dp_limits(),
    };
    let points = sweep(&setup.model, &setup.weights, &lambdas, &settings)?;
    let path = setup.out.clone().unwrap_or_else(|| PathBuf::from("tradeoff.csv"));
    emit_curve(&points, &path).map_err(write_err(&path))?;
    if setup.plot {
        let svg = path.with_extension("svg");
        fs::write(&svg, curve_svg(&points)).map_err(write_err(&svg))?;
    }
    out.write_all(curve_csv(&points).as_bytes())
        .map_err(write_err(Path::new("<stdout>")))
}

struct Report<'w> {
    out: &'w mut dyn Write,
    failures: usize,
}

impl Report<'_> {
    fn check(&mut self, pass: bool, label: &str, detail: String) {
        if !pass {
            self.failures += 1;
        }
        let tag = if pass { "PASS" } else { "FAIL" };
        let _ = writeln!(self.out, "[{tag}] {label}: {detail}");
    }

    fn note(&mut self, label: &str, detail: String) {
        let _ = writeln!(self.out, "[SKIP] {label}: {detail}");
    }
}

/// Pathwise checks on a batch plus a paired comparison against zero-wait
/// on the same streams.
fn verify_batch(
    report: &mut Report<'_>,
    label: &str,
    sim: &Simulator<'_>,
    policy: &dyn QueuingPolicy,
    setup: &Setup,
    m: usize,
    corrupt: bool,
) -> Result<(), CliError> {
    let m = m.max(1);
    let mut records = sim.run_batch(policy, m, setup.seed, setup.workers)?;
    if corrupt {
        if let Some(step) = records[0].steps.get_mut(1) {
            step.u[0] += 1.0;
        }
    }
    let (model, weights, sol) = (sim.model(), sim.weights(), sim.solution());

    let mut worst_identity: f64 = 0.0;
    let mut worst_estimator: f64 = 0.0;
    let mut admissible = true;
    for r in &records {
        worst_identity = worst_identity.max(cost_identity_check(r, sol, model, weights)?.rel);
        worst_estimator = worst_estimator.max(estimator_consistency(r, model.a())?);
        admissible &= ages_admissible(r);
    }
    report.check(
        worst_identity <= IDENTITY_TOL,
        &format!("{label} cost identity"),
        format!("max relative residual {worst_identity:.3e} over {m} trajectories (tol {IDENTITY_TOL:e})"),
    );
    report.check(
        worst_estimator <= ESTIMATOR_TOL,
        &format!("{label} estimator consistency"),
        format!("max relative gap {worst_estimator:.3e} (tol {ESTIMATOR_TOL:e})"),
    );
    report.check(
        admissible,
        &format!("{label} age admissibility"),
        "eta_0 = 0, eta_k <= eta_(k-1) + 1".into(),
    );

    if policy.name() == "zero-wait" {
        report.check(
            true,
            &format!("{label} dominance over zero-wait"),
            "trivially equal (same policy)".into(),
        );
        return Ok(());
    }
    let baseline: Vec<TrajectoryRecord> = sim.run_batch(&ZeroWait, m, setup.seed, setup.workers)?;
    let (diff, se) = mean_se(
        records
            .iter()
            .zip(&baseline)
            .map(|(r, z)| r.chi_realized - z.chi_realized),
    );
    report.check(
        diff <= 2.0 * se,
        &format!("{label} dominance over zero-wait"),
        format!("paired chi difference {diff:.4} (se {se:.4})"),
    );
    Ok(())
}

fn verify_oracle(report: &mut Report<'_>, setup: &Setup, m: usize, corrupt: bool) -> Result<(), CliError> {
    let limits = setup.config.dp_limits();
    if setup.model.state_dim() != 1 {
        report.note("dp-oracle", "needs a scalar plant".into());
        return Ok(());
    }
    let horizon = setup.weights.horizon();
    let weights = if horizon > limits.max_horizon {
        setup
            .weights
            .with_horizon(setup.config.dp.horizon.min(limits.max_horizon))
    } else {
        setup.weights.clone()
    };
    let model = &setup.model;
    let sol = solve_riccati(model, &weights)?;
    let grid = setup.grid()?;
    let dp = dp_oracle_build(model, &weights, &sol, &grid, &limits)?;
    let greedy = Greedy::new(model, &weights, &sol);
    let exact = |p: &dyn QueuingPolicy| expected_queue_cost(p, model, &weights, &sol, &grid, &limits);
    let (v_dp, v_replay, v_greedy, v_zero) = (
        dp.expected_cost(),
        exact(&dp)?,
        exact(&greedy)?,
        exact(&ZeroWait)?,
    );
    let scale = v_dp.abs().max(1.0);
    let label = format!("dp-oracle (N={}, {} atoms)", weights.horizon(), grid.len());
    report.check(
        (v_dp - v_replay).abs() <= 1e-10 * scale,
        &format!("{label} value vs path enumeration"),
        format!("dp {v_dp:.10} enumeration {v_replay:.10}"),
    );
    report.check(
        v_replay <= v_greedy && v_greedy <= v_zero,
        &format!("{label} ordering dp <= greedy <= zero-wait"),
        format!("{v_replay:.6} <= {v_greedy:.6} <= {v_zero:.6}"),
    );
    let sim = Simulator::with_noise(model, &weights, &sol, NoiseSource::Grid(grid))?;
    verify_batch(report, &label, &sim, &dp, setup, m, corrupt)
}

fn cmd_verify(setup: &Setup, args: &VerifyArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (model, weights) = (&setup.model, &setup.weights);
    let sol = solve_riccati(model, weights)?;
    let grid = setup.grid()?;
    let mut report = Report { out, failures: 0 };
    // verification defaults to 100 trajectories unless asked otherwise
    let m = args.common.trajectories.unwrap_or(100);

    let residual = sol.recursion_residual(model, weights);
    report.check(
        residual <= RICCATI_TOL,
        "riccati recursion",
        format!("max relative residual {residual:.3e} (tol {RICCATI_TOL:e})"),
    );

    let policies = match &args.common.policy {
        Some(_) => vec![setup.policy],
        None => vec![
            PolicySpec::ZeroWait,
            PolicySpec::Greedy,
            PolicySpec::GreedyBounded(setup.config.run.kbar.unwrap_or(3)),
            PolicySpec::DpOracle,
        ],
    };
    let mut corrupt = args.inject_corruption;
    for spec in policies {
        if spec == PolicySpec::DpOracle {
            verify_oracle(&mut report, setup, m, corrupt)?;
        } else {
            let policy = spec.build(model, weights, &sol, &grid, &setup.config.dp_limits())?;
            let sim = Simulator::new(model, weights, &sol)?;
            verify_batch(
                &mut report,
                &spec.to_string(),
                &sim,
                policy.as_ref(),
                setup,
                m,
                corrupt,
            )?;
        }
        corrupt = false;
    }
    match report.failures {
        0 => Ok(()),
        n => Err(CliError::ChecksFailed(n)),
    }
}
