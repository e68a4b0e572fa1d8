//! Command implementations. Each returns the process exit code; input
//! errors bubble up as `anyhow` errors and exit 1.

use anyhow::{anyhow, bail, Context, Result};
use std::path::{Path, PathBuf};

use mjls_hinf_core::analysis::{
    default_observability_length, gamma_critical, sweep, GammaCriticalOutcome, SweepStatus,
};
use mjls_hinf_core::channels::Prior;
use mjls_hinf_core::model::{validate_model, MjlsModel};
use mjls_hinf_core::riccati::{
    finite_horizon_value_series, solve_finite_horizon, solve_infinite_horizon,
    FiniteHorizonOutcome, FiniteHorizonSolution, FixedPointSolution, GainPair, GainError,
    GainSchedule, InfeasibleCell, InfiniteHorizonOutcome, StageCell,
};
use mjls_hinf_core::sim::{monte_carlo, simulate, SimulationPlan, TrajectoryRecord};

use crate::output::{matrix_cells, matrix_columns, write_csv, Cell};
use crate::scenario::{Scenario, SimulationSpec, DEFAULT_MAX_CHANNELS};
use crate::{EXIT_ANALYTIC, EXIT_OK};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Check,
    Solve,
    GammaC,
    Sweep,
    Simulate,
}

/// Flag overrides shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub scenario: PathBuf,
    pub gamma: Option<f64>,
    pub horizon: Option<usize>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub max_channels: Option<usize>,
}

pub fn run(kind: CommandKind, opts: &Options) -> Result<i32> {
    match opts.threads {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .context("cannot build thread pool")?
            .install(|| dispatch(kind, opts)),
        None => dispatch(kind, opts),
    }
}

fn dispatch(kind: CommandKind, opts: &Options) -> Result<i32> {
    let scenario = Scenario::from_path(&opts.scenario)?;
    let model = scenario.build_model(opts.max_channels.unwrap_or(DEFAULT_MAX_CHANNELS))?;
    if kind == CommandKind::Check {
        return check(&model);
    }
    let report = validate_model(&model);
    if !report.passed() {
        bail!("scenario model fails validation:\n{report}");
    }
    let out_dir = output_dir(&scenario, opts)?;
    match kind {
        CommandKind::Check => unreachable!(),
        CommandKind::Solve => solve(&scenario, &model, opts, &out_dir),
        CommandKind::GammaC => gamma_c(&scenario, &model, opts, &out_dir),
        CommandKind::Sweep => run_sweep(&scenario, &model, opts, &out_dir),
        CommandKind::Simulate => run_simulate(&scenario, &model, opts, &out_dir),
    }
}

fn output_dir(scenario: &Scenario, opts: &Options) -> Result<PathBuf> {
    let dir = opts
        .out
        .clone()
        .or_else(|| scenario.outputs.as_ref().map(|o| PathBuf::from(&o.dir)))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(dir)
}

fn require_gamma(scenario: &Scenario, opts: &Options) -> Result<f64> {
    let gamma = opts
        .gamma
        .or(scenario.game.gamma)
        .ok_or_else(|| anyhow!("an attenuation level is required: set game.gamma or --gamma"))?;
    if !(gamma.is_finite() && gamma > 0.0) {
        bail!("attenuation level must be positive and finite, got {gamma}");
    }
    Ok(gamma)
}

fn require_simulation(scenario: &Scenario) -> Result<&SimulationSpec> {
    scenario
        .simulation
        .as_ref()
        .ok_or_else(|| anyhow!("this command needs the scenario's simulation section"))
}

fn describe_cell(cell: &InfeasibleCell) -> String {
    let prior = match cell.prior {
        Prior::Stationary => "stationary prior".to_string(),
        Prior::Outcome(j) => format!("prior outcome {}", j.get()),
    };
    format!("mode {}, {prior}: {}", cell.mode, cell.reason)
}

fn check(model: &MjlsModel) -> Result<i32> {
    let report = validate_model(model);
    print!("{report}");
    let max_len = default_observability_length(model);
    let observability = mjls_hinf_core::analysis::weak_observability(model, max_len);
    match &observability.witness_path {
        Some(path) => println!("observability: witness path {path:?} (full rank)"),
        None => println!(
            "observability: no full-rank witness within length {}",
            observability.max_length_searched
        ),
    }
    Ok(if report.passed() { EXIT_OK } else { EXIT_ANALYTIC })
}

/// Columns of a per-(mode, prior) gains table.
fn gains_header(model: &MjlsModel) -> Vec<String> {
    let n = model.state_dim();
    let m = model.input_dim();
    let s = model.disturbance_dim();
    let mut header = vec!["stage".to_string()];
    header.extend(matrix_columns("xi", n, n));
    header.extend(matrix_columns("gamma", m, n));
    header.extend(matrix_columns("psi", s, n));
    header
}

fn gains_row(stage: Cell, cell: &StageCell) -> Vec<Cell> {
    let mut row = vec![stage];
    row.extend(matrix_cells(&cell.value));
    row.extend(matrix_cells(&cell.control_gain));
    row.extend(matrix_cells(&cell.disturbance_gain));
    row
}

fn write_finite_gains(
    model: &MjlsModel,
    solution: &FiniteHorizonSolution,
    dir: &Path,
) -> Result<()> {
    let header = gains_header(model);
    for mode in 0..model.num_modes() {
        for j in 0..model.outcome_count() {
            let mut rows = Vec::new();
            rows.push(gains_row(Cell::UInt(0), solution.hat_cell(mode)));
            for k in 1..solution.horizon() {
                let stage = solution.stage(k).expect("stage within horizon");
                rows.push(gains_row(Cell::UInt(k as u64), stage.cell(mode, j)));
            }
            write_csv(&dir.join(format!("gains_{mode}_{j}.csv")), &header, rows)?;
        }
    }
    Ok(())
}

fn write_stationary_gains(
    model: &MjlsModel,
    solution: &FixedPointSolution,
    dir: &Path,
) -> Result<()> {
    let header = gains_header(model);
    for mode in 0..model.num_modes() {
        for j in 0..model.outcome_count() {
            let rows = vec![
                gains_row(Cell::Str("hat".into()), solution.hat_cell(mode)),
                gains_row(
                    Cell::Str("stationary".into()),
                    solution.stationary_cell(mode, j),
                ),
            ];
            write_csv(&dir.join(format!("gains_{mode}_{j}.csv")), &header, rows)?;
        }
    }
    Ok(())
}

/// Finite or infinite game, resolved from the scenario and flags. The
/// `--horizon` flag explicitly selects the finite game and overrides an
/// `infinite: true` scenario.
enum GameSelection {
    Finite(usize),
    Infinite,
}

fn game_selection(scenario: &Scenario, opts: &Options) -> Result<GameSelection> {
    if let Some(horizon) = opts.horizon {
        return Ok(GameSelection::Finite(horizon));
    }
    match (scenario.game.horizon, scenario.game.infinite) {
        (Some(_), true) => bail!("game cannot be both finite-horizon and infinite; pick one"),
        (Some(horizon), false) => Ok(GameSelection::Finite(horizon)),
        (None, true) => Ok(GameSelection::Infinite),
        (None, false) => bail!("the game needs game.horizon (or --horizon) or game.infinite = true"),
    }
}

fn solve(scenario: &Scenario, model: &MjlsModel, opts: &Options, dir: &Path) -> Result<i32> {
    let gamma = require_gamma(scenario, opts)?;
    match game_selection(scenario, opts)? {
        GameSelection::Finite(horizon) => solve_finite(scenario, model, gamma, horizon, dir),
        GameSelection::Infinite => solve_infinite(scenario, model, gamma, opts, dir),
    }
}

fn solve_finite(
    scenario: &Scenario,
    model: &MjlsModel,
    gamma: f64,
    horizon: usize,
    dir: &Path,
) -> Result<i32> {
    if horizon == 0 {
        bail!("horizon must be at least 1");
    }
    let sim = require_simulation(scenario)
        .context("the finite-horizon cost series J_N needs simulation.x0 and simulation.r0")?;
    if sim.r0 >= model.num_modes() {
        bail!("simulation.r0 = {} out of range", sim.r0);
    }
    if sim.x0.len() != model.state_dim() {
        bail!(
            "simulation.x0 has {} entries, state dimension is {}",
            sim.x0.len(),
            model.state_dim()
        );
    }
    let series = finite_horizon_value_series(model, gamma, horizon, &sim.x0_vector(), sim.r0);
    let rows = series
        .values
        .iter()
        .enumerate()
        .map(|(i, &value)| vec![Cell::UInt(i as u64 + 1), Cell::Float(value)]);
    write_csv(
        &dir.join("value.csv"),
        &["horizon".to_string(), "cost".to_string()],
        rows,
    )?;
    if let Some(failure) = series.failure {
        println!(
            "infeasible: cost series stops at horizon {} ({}); gamma = {} is below the \
             critical level for this model",
            failure.horizon,
            describe_cell(&failure.cell),
            gamma
        );
        println!("partial series written to {}", dir.join("value.csv").display());
        return Ok(EXIT_ANALYTIC);
    }
    match solve_finite_horizon(model, gamma, horizon) {
        FiniteHorizonOutcome::Feasible(solution) => {
            write_finite_gains(model, &solution, dir)?;
            println!(
                "feasible: J_{} = {} (written to {})",
                horizon,
                crate::output::float_repr(*series.values.last().expect("nonempty series")),
                dir.display()
            );
            Ok(EXIT_OK)
        }
        FiniteHorizonOutcome::Infeasible { stage, cell } => {
            println!(
                "infeasible at stage {stage}: {} (gamma = {gamma})",
                describe_cell(&cell)
            );
            Ok(EXIT_ANALYTIC)
        }
    }
}

fn solve_infinite(
    scenario: &Scenario,
    model: &MjlsModel,
    gamma: f64,
    opts: &Options,
    dir: &Path,
) -> Result<i32> {
    let config = scenario.fixed_point_config(opts.tol);
    match solve_infinite_horizon(model, gamma, &config) {
        InfiniteHorizonOutcome::Converged(solution) => {
            let cost = scenario
                .simulation
                .as_ref()
                .filter(|sim| {
                    sim.r0 < model.num_modes() && sim.x0.len() == model.state_dim()
                })
                .map(|sim| solution.game_value(&sim.x0_vector(), sim.r0));
            write_csv(
                &dir.join("value.csv"),
                &[
                    "iterations".to_string(),
                    "residual".to_string(),
                    "cost".to_string(),
                ],
                [vec![
                    Cell::UInt(solution.iterations as u64),
                    Cell::Float(solution.residual),
                    cost.map_or(Cell::Empty, Cell::Float),
                ]],
            )?;
            write_stationary_gains(model, &solution, dir)?;
            println!(
                "converged in {} iterations (residual {:e}); tables written to {}",
                solution.iterations,
                solution.residual,
                dir.display()
            );
            Ok(EXIT_OK)
        }
        InfiniteHorizonOutcome::Diverged {
            iterations,
            magnitude,
        } => {
            println!(
                "diverged: value magnitude {magnitude:e} after {iterations} iterations \
                 (gamma = {gamma} is below the critical level)"
            );
            Ok(EXIT_ANALYTIC)
        }
        InfiniteHorizonOutcome::Infeasible { iterations, cell } => {
            println!(
                "infeasible after {iterations} iterations: {} (gamma = {gamma})",
                describe_cell(&cell)
            );
            Ok(EXIT_ANALYTIC)
        }
        InfiniteHorizonOutcome::Indeterminate {
            iterations,
            residual,
        } => {
            println!(
                "indeterminate: residual {residual:e} after {iterations} iterations; \
                 raise max_iterations or loosen the tolerance"
            );
            Ok(EXIT_ANALYTIC)
        }
    }
}

fn gamma_c(scenario: &Scenario, model: &MjlsModel, opts: &Options, dir: &Path) -> Result<i32> {
    let config = scenario.gamma_search_config(opts.tol);
    let outcome = gamma_critical(model, &config);
    let header = [
        "step".to_string(),
        "probe".to_string(),
        "feasible".to_string(),
        "lo".to_string(),
        "hi".to_string(),
    ];
    let rows = outcome.log().iter().enumerate().map(|(i, step)| {
        vec![
            Cell::UInt(i as u64),
            Cell::Float(step.probe),
            Cell::Str(if step.feasible { "true" } else { "false" }.into()),
            Cell::Float(step.lo),
            Cell::Float(step.hi),
        ]
    });
    write_csv(&dir.join("gamma_c.csv"), &header, rows)?;
    match outcome {
        GammaCriticalOutcome::Found { gamma_c, .. } => {
            println!("gamma_c = {}", crate::output::float_repr(gamma_c));
            Ok(EXIT_OK)
        }
        GammaCriticalOutcome::NoFiniteGamma {
            max_gamma_tested, ..
        } => {
            println!(
                "no finite critical level: still infeasible at gamma = {max_gamma_tested:e}"
            );
            Ok(EXIT_ANALYTIC)
        }
        GammaCriticalOutcome::InvalidLowerBracket { lo, .. } => {
            bail!("lo = {lo} is already feasible and cannot bracket the critical level from below")
        }
    }
}

fn run_sweep(scenario: &Scenario, model: &MjlsModel, opts: &Options, dir: &Path) -> Result<i32> {
    let spec = scenario
        .sweep
        .as_ref()
        .ok_or_else(|| anyhow!("sweep needs the scenario's sweep section"))?;
    if spec.channel >= model.bank().len() {
        bail!("sweep.channel = {} out of range", spec.channel);
    }
    if spec.grid.is_empty() {
        bail!("sweep.grid must contain at least one value");
    }
    if spec.grid.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
        bail!("sweep.grid values must be probabilities in (0, 1]");
    }
    let config = scenario.gamma_search_config(opts.tol);
    let points = sweep(model, spec.channel, spec.field.to_field(), &spec.grid, &config);
    let header = [
        "value".to_string(),
        "gamma_c".to_string(),
        "status".to_string(),
    ];
    let rows = points.iter().map(|p| {
        vec![
            Cell::Float(p.value),
            p.gamma_c.map_or(Cell::Empty, Cell::Float),
            Cell::Str(
                match p.status {
                    SweepStatus::Found => "ok",
                    SweepStatus::NoFiniteGamma => "no_finite_gamma",
                    SweepStatus::InvalidLowerBracket => "invalid_lower_bracket",
                }
                .into(),
            ),
        ]
    });
    write_csv(&dir.join("sweep.csv"), &header, rows)?;
    println!(
        "swept {} points; table written to {}",
        points.len(),
        dir.join("sweep.csv").display()
    );
    Ok(EXIT_OK)
}

/// Gains from either solve mode behind one schedule.
enum GainsHolder {
    Finite(FiniteHorizonSolution),
    Stationary(FixedPointSolution),
}

impl GainSchedule for GainsHolder {
    fn controller_gain(
        &self,
        stage: usize,
        mode: usize,
        prior: Prior,
    ) -> Result<GainPair<'_>, GainError> {
        match self {
            GainsHolder::Finite(sol) => sol.controller_gain(stage, mode, prior),
            GainsHolder::Stationary(sol) => sol.controller_gain(stage, mode, prior),
        }
    }
}

fn run_simulate(scenario: &Scenario, model: &MjlsModel, opts: &Options, dir: &Path) -> Result<i32> {
    let sim = require_simulation(scenario)?;
    let gamma = require_gamma(scenario, opts)?;
    let gains = match game_selection(scenario, opts)? {
        GameSelection::Finite(horizon) => {
            if sim.steps > horizon {
                bail!(
                    "simulation.steps = {} exceeds the finite horizon {horizon}; \
                     gains only exist inside the horizon",
                    sim.steps
                );
            }
            match solve_finite_horizon(model, gamma, horizon) {
                FiniteHorizonOutcome::Feasible(sol) => GainsHolder::Finite(sol),
                FiniteHorizonOutcome::Infeasible { stage, cell } => {
                    println!(
                        "infeasible at stage {stage}: {} (gamma = {gamma})",
                        describe_cell(&cell)
                    );
                    return Ok(EXIT_ANALYTIC);
                }
            }
        }
        GameSelection::Infinite => {
            match solve_infinite_horizon(model, gamma, &scenario.fixed_point_config(None)) {
                InfiniteHorizonOutcome::Converged(sol) => GainsHolder::Stationary(sol),
                other => {
                    println!(
                        "no stationary gains at gamma = {gamma}: {}",
                        match other {
                            InfiniteHorizonOutcome::Diverged { .. } => "value iteration diverged",
                            InfiniteHorizonOutcome::Infeasible { .. } => "concavity failed",
                            _ => "iteration budget exhausted",
                        }
                    );
                    return Ok(EXIT_ANALYTIC);
                }
            }
        }
    };

    let plan = SimulationPlan {
        x0: sim.x0_vector(),
        r0: sim.r0,
        steps: sim.steps,
        seed: opts.seed.unwrap_or(sim.seed),
        disturbance: sim.disturbance_policy(),
        loss: sim.loss_strategy(),
    };
    let record = simulate(model, &gains, &plan)?;
    write_trajectory(model, &record, dir)?;
    let summary = monte_carlo(model, &gains, &plan, sim.trials)?;
    let header = [
        "k".to_string(),
        "mean_square_state".to_string(),
        "trials".to_string(),
        "steps".to_string(),
        "seed".to_string(),
        "empirical_gain".to_string(),
        "gain_standard_error".to_string(),
        "loss_strategy".to_string(),
    ];
    let rows = summary.mean_square_state.iter().enumerate().map(|(k, &ms)| {
        vec![
            Cell::UInt(k as u64),
            Cell::Float(ms),
            Cell::UInt(summary.trials as u64),
            Cell::UInt(summary.steps as u64),
            Cell::UInt(summary.seed),
            summary.empirical_gain.map_or(Cell::Empty, Cell::Float),
            summary
                .gain_standard_error
                .map_or(Cell::Empty, Cell::Float),
            Cell::Str(summary.loss.label().into()),
        ]
    });
    write_csv(&dir.join("summary.csv"), &header, rows)?;
    println!(
        "simulated {} trials of {} steps; tables written to {}",
        summary.trials,
        summary.steps,
        dir.display()
    );
    Ok(EXIT_OK)
}

fn write_trajectory(model: &MjlsModel, record: &TrajectoryRecord, dir: &Path) -> Result<()> {
    let n = model.state_dim();
    let m = model.input_dim();
    let s = model.disturbance_dim();
    let p = model.output_dim();
    let mut header = vec!["k".to_string(), "mode".to_string(), "outcome".to_string()];
    header.extend((0..n).map(|i| format!("x_{i}")));
    header.extend((0..m).map(|i| format!("u_{i}")));
    header.extend((0..m).map(|i| format!("u_applied_{i}")));
    header.extend((0..s).map(|i| format!("w_{i}")));
    header.extend((0..p).map(|i| format!("z_{i}")));
    let width = header.len();

    let mut rows: Vec<Vec<Cell>> = Vec::with_capacity(record.steps.len() + 1);
    for (k, step) in record.steps.iter().enumerate() {
        let mut row = vec![
            Cell::UInt(k as u64),
            Cell::UInt(step.mode as u64),
            Cell::UInt(step.outcome.get() as u64),
        ];
        row.extend(step.state.iter().map(|&v| Cell::Float(v)));
        row.extend(step.command.iter().map(|&v| Cell::Float(v)));
        row.extend(step.applied.iter().map(|&v| Cell::Float(v)));
        row.extend(step.disturbance.iter().map(|&v| Cell::Float(v)));
        row.extend(step.output.iter().map(|&v| Cell::Float(v)));
        rows.push(row);
    }
    // Final state row: state columns only.
    let mut last = vec![Cell::UInt(record.steps.len() as u64), Cell::Empty, Cell::Empty];
    last.extend(record.final_state.iter().map(|&v| Cell::Float(v)));
    while last.len() < width {
        last.push(Cell::Empty);
    }
    rows.push(last);
    write_csv(&dir.join("trajectory.csv"), &header, rows)
}
