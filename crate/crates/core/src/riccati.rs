//! Coupled Riccati recursion for the zero-sum packet-loss game.
//!
//! The game value at stage `k` is `x' Xi(i, j) x`, indexed by the current
//! mode `i` and the acknowledged previous actuator outcome `j`. One
//! backward step maps the stage-(k+1) value grid to the stage-k grid:
//!
//! 1. mix next-stage values over mode transitions (per mode, per outcome),
//! 2. form the outcome-weighted curvature and concavity matrices under the
//!    conditional outcome distribution of each prior `j`,
//! 3. solve for the disturbance gain (closed form), then the control gain,
//! 4. assemble the new value matrix and symmetrize it.
//!
//! Stage 0 has no acknowledged prior, uses the stationary outcome
//! distribution instead, and therefore collapses to one value matrix per
//! mode; the game value is `x0' XiHat(r0) x0`. The infinite-horizon
//! solution is the fixed point of the backward step started from zero.
//!
//! Feasibility: a stage is well defined only while the disturbance
//! concavity matrix stays positive definite at every (mode, prior) pair,
//! at this and every later stage; the first failing pair is reported and
//! poisons the whole solve.

use nalgebra::{DMatrix, DVector};

use crate::channels::{
    outcome_distribution, outcome_mask, ChannelOutcomeDistribution, OutcomeIndex, Prior,
};
use crate::model::{MarkovChain, MjlsModel};
use crate::numeric::{
    eigen_range, symmetrize, CONDITION_BOUND, DEFINITENESS_TOL,
};

/// Storage indexed by (mode, prior outcome) in fixed row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGrid<T> {
    modes: usize,
    outcomes: usize,
    items: Vec<T>,
}

impl<T> PairGrid<T> {
    pub fn from_fn(modes: usize, outcomes: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut items = Vec::with_capacity(modes * outcomes);
        for mode in 0..modes {
            for outcome in 0..outcomes {
                items.push(f(mode, outcome));
            }
        }
        Self {
            modes,
            outcomes,
            items,
        }
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn outcomes(&self) -> usize {
        self.outcomes
    }

    pub fn get(&self, mode: usize, outcome: usize) -> &T {
        &self.items[mode * self.outcomes + outcome]
    }

    /// Iterate in fixed (mode, outcome) order.
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &T)> {
        self.items
            .iter()
            .enumerate()
            .map(|(idx, item)| ((idx / self.outcomes, idx % self.outcomes), item))
    }
}

/// Value matrices over the (mode, prior outcome) grid.
pub type ValueGrid = PairGrid<DMatrix<f64>>;

impl ValueGrid {
    pub fn constant(modes: usize, outcomes: usize, value: &DMatrix<f64>) -> Self {
        Self::from_fn(modes, outcomes, |_, _| value.clone())
    }

    pub fn max_abs(&self) -> f64 {
        self.items.iter().map(|m| m.amax()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &ValueGrid) -> f64 {
        self.items
            .iter()
            .zip(other.items.iter())
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }
}

/// Solution of one (mode, prior outcome) cell at one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageCell {
    /// Value matrix Xi (symmetric PSD): cost-to-go weight.
    pub value: DMatrix<f64>,
    /// Control gain Gamma; the saddle control is `u = -Gamma x`.
    pub control_gain: DMatrix<f64>,
    /// Disturbance gain Psi; the saddle disturbance is `w = Psi x`.
    pub disturbance_gain: DMatrix<f64>,
    /// Disturbance concavity matrix Theta = gamma^2 I - D1' E[X] D1;
    /// positive definiteness is the existence condition.
    pub concavity: DMatrix<f64>,
    /// Control curvature Lambda = E[N (R + B'XB) N] over outcomes.
    pub curvature: DMatrix<f64>,
}

/// Why a cell could not be solved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InfeasibleReason {
    /// Concavity matrix not positive definite: the attenuation level is
    /// below the feasibility threshold at this stage.
    ConcavityLost,
    /// Curvature matrix not positive definite; validated models exclude
    /// this, so it signals a configuration error.
    CurvatureLost,
    /// A linear solve exceeded the trusted condition bound.
    IllConditioned { condition: f64 },
}

impl std::fmt::Display for InfeasibleReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InfeasibleReason::ConcavityLost => write!(f, "concavity matrix not positive definite"),
            InfeasibleReason::CurvatureLost => write!(f, "curvature matrix not positive definite"),
            InfeasibleReason::IllConditioned { condition } => {
                write!(f, "linear solve ill-conditioned (cond = {condition:.3e})")
            }
        }
    }
}

/// First failing cell of a solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfeasibleCell {
    pub mode: usize,
    pub prior: Prior,
    pub reason: InfeasibleReason,
}

/// One backward stage over the whole (mode, prior outcome) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSolution {
    cells: PairGrid<StageCell>,
}

impl StageSolution {
    pub fn cells(&self) -> &PairGrid<StageCell> {
        &self.cells
    }

    pub fn cell(&self, mode: usize, outcome: usize) -> &StageCell {
        self.cells.get(mode, outcome)
    }

    /// Extract the value grid feeding the next (earlier) backward step.
    pub fn values(&self) -> ValueGrid {
        PairGrid::from_fn(self.cells.modes, self.cells.outcomes, |i, j| {
            self.cells.get(i, j).value.clone()
        })
    }
}

/// Mode-transition mixing of the next-stage value grid:
/// `X(i, l) = sum_d p(i, d) * Xi_next(d, l)` for every outcome `l`.
pub fn coupled_expectation(
    next: &ValueGrid,
    chain: &MarkovChain,
    mode: usize,
) -> Vec<DMatrix<f64>> {
    let n = next.get(0, 0).nrows();
    (0..next.outcomes())
        .map(|l| {
            let mut acc = DMatrix::zeros(n, n);
            for d in 0..next.modes() {
                let p = chain.probability(mode, d);
                if p != 0.0 {
                    acc += next.get(d, l) * p;
                }
            }
            acc
        })
        .collect()
}

/// Gains and certificates of one cell, before value assembly.
#[derive(Debug, Clone, PartialEq)]
pub struct StageQuantities {
    pub concavity: DMatrix<f64>,
    pub curvature: DMatrix<f64>,
    pub disturbance_gain: DMatrix<f64>,
    pub control_gain: DMatrix<f64>,
}

fn positive_definite_checked(sym: &DMatrix<f64>) -> Option<f64> {
    sym.clone().cholesky()?;
    let range = eigen_range(sym);
    if range.min > DEFINITENESS_TOL * range.max_abs.max(1.0) {
        Some(range.max_abs / range.min)
    } else {
        None
    }
}

/// Solve one (mode, prior) cell given the mode-mixed next values `xs`
/// (one matrix per outcome) and the outcome distribution of the prior.
///
/// Evaluation order: concavity and curvature first (feasibility), then the
/// disturbance gain in closed form, then the control gain from it. All
/// inverses are factorization-based solves.
pub fn stage_quantities(
    model: &MjlsModel,
    gamma: f64,
    mode: usize,
    dist: &ChannelOutcomeDistribution,
    xs: &[DMatrix<f64>],
) -> Result<StageQuantities, InfeasibleReason> {
    let md = &model.modes()[mode];
    let m = model.input_dim();
    let n = model.state_dim();
    let s = model.disturbance_dim();
    let r = model.control_weight(mode);

    // Outcome-weighted expectations.
    let mut mixed_value = DMatrix::zeros(n, n); // E[X]
    let mut masked_bx = DMatrix::zeros(m, n); // E[N B' X]
    let mut curvature = DMatrix::zeros(m, m); // E[N (R + B'XB) N]
    for (l, x) in xs.iter().enumerate() {
        let p = dist.prob(l);
        if p == 0.0 {
            continue;
        }
        let mask = outcome_mask(l, m);
        mixed_value += x * p;
        let btx = &mask * (md.b.transpose() * x);
        curvature += (&btx * &md.b + &mask * r) * &mask * p;
        masked_bx += btx * p;
    }

    let concavity = symmetrize(
        &(DMatrix::identity(s, s) * gamma * gamma - md.d1.transpose() * &mixed_value * &md.d1),
    );
    if positive_definite_checked(&concavity).is_none() {
        return Err(InfeasibleReason::ConcavityLost);
    }

    let curvature = symmetrize(&curvature);
    match positive_definite_checked(&curvature) {
        None => return Err(InfeasibleReason::CurvatureLost),
        Some(condition) if condition > CONDITION_BOUND => {
            return Err(InfeasibleReason::IllConditioned { condition })
        }
        Some(_) => {}
    }
    let curvature_chol = curvature.clone().cholesky().expect("checked above");

    // Disturbance gain: fold the nested inverse of the closed form into one
    // symmetric solve, (Theta + K' Lambda^-1 K) Psi = D1'(E[X] - T' Lambda^-1 T) A
    // with T = E[N B' X] and K = T D1.
    let coupling = &masked_bx * &md.d1; // m x s
    let solved_t = curvature_chol.solve(&masked_bx); // Lambda^-1 T
    let solved_k = curvature_chol.solve(&coupling); // Lambda^-1 K
    let bracket = symmetrize(&(&concavity + coupling.transpose() * &solved_k));
    match positive_definite_checked(&bracket) {
        None => return Err(InfeasibleReason::ConcavityLost),
        Some(condition) if condition > CONDITION_BOUND => {
            return Err(InfeasibleReason::IllConditioned { condition })
        }
        Some(_) => {}
    }
    let rhs = md.d1.transpose() * ((&mixed_value - masked_bx.transpose() * &solved_t) * &md.a);
    let disturbance_gain = bracket
        .clone()
        .cholesky()
        .expect("checked above")
        .solve(&rhs);

    // Control gain consumes the disturbance gain.
    let control_gain = &solved_t * (&md.a + &md.d1 * &disturbance_gain);

    Ok(StageQuantities {
        concavity,
        curvature,
        disturbance_gain,
        control_gain,
    })
}

/// Completed-square value assembly for one cell.
fn assemble_value(
    model: &MjlsModel,
    gamma: f64,
    mode: usize,
    dist: &ChannelOutcomeDistribution,
    xs: &[DMatrix<f64>],
    q: &StageQuantities,
) -> DMatrix<f64> {
    let md = &model.modes()[mode];
    let m = model.input_dim();
    let r = model.control_weight(mode);
    let mut value = model.state_weight(mode).clone();

    let mut masked_r = DMatrix::zeros(m, m); // E[N R N]
    for l in 0..dist.len() {
        let p = dist.prob(l);
        if p == 0.0 {
            continue;
        }
        let mask = outcome_mask(l, m);
        masked_r += &mask * r * &mask * p;
    }
    value += q.control_gain.transpose() * masked_r * &q.control_gain;
    value -= q.disturbance_gain.transpose() * &q.disturbance_gain * (gamma * gamma);

    let drift = &md.a + &md.d1 * &q.disturbance_gain;
    for (l, x) in xs.iter().enumerate() {
        let p = dist.prob(l);
        if p == 0.0 {
            continue;
        }
        let mask = outcome_mask(l, m);
        let closed_loop = &drift - &md.b * mask * &q.control_gain;
        value += closed_loop.transpose() * x * closed_loop * p;
    }
    symmetrize(&value)
}

fn solve_cell(
    model: &MjlsModel,
    gamma: f64,
    mode: usize,
    dist: &ChannelOutcomeDistribution,
    xs: &[DMatrix<f64>],
) -> Result<StageCell, InfeasibleReason> {
    let q = stage_quantities(model, gamma, mode, dist, xs)?;
    let value = assemble_value(model, gamma, mode, dist, xs, &q);
    Ok(StageCell {
        value,
        control_gain: q.control_gain,
        disturbance_gain: q.disturbance_gain,
        concavity: q.concavity,
        curvature: q.curvature,
    })
}

/// One backward step with acknowledged priors (stages k >= 1): every
/// (mode, prior outcome) cell under the conditional outcome distribution.
/// The first infeasible cell aborts the stage.
pub fn backward_step(
    model: &MjlsModel,
    gamma: f64,
    next: &ValueGrid,
) -> Result<StageSolution, InfeasibleCell> {
    let modes = model.num_modes();
    let outcomes = model.outcome_count();
    let m = model.bank().len();
    let mut cells = Vec::with_capacity(modes * outcomes);
    for mode in 0..modes {
        let xs = coupled_expectation(next, model.chain(), mode);
        for j in 0..outcomes {
            let prior = Prior::Outcome(OutcomeIndex::new(j, m).expect("grid index in range"));
            let dist = outcome_distribution(model.bank(), prior);
            match solve_cell(model, gamma, mode, &dist, &xs) {
                Ok(cell) => cells.push(cell),
                Err(reason) => {
                    return Err(InfeasibleCell {
                        mode,
                        prior,
                        reason,
                    })
                }
            }
        }
    }
    Ok(StageSolution {
        cells: PairGrid {
            modes,
            outcomes,
            items: cells,
        },
    })
}

/// The stage-0 step: no acknowledged prior, stationary outcome
/// distribution, one cell per mode (the prior index drops out).
pub fn stage_zero_step(
    model: &MjlsModel,
    gamma: f64,
    next: &ValueGrid,
) -> Result<Vec<StageCell>, InfeasibleCell> {
    let dist = outcome_distribution(model.bank(), Prior::Stationary);
    (0..model.num_modes())
        .map(|mode| {
            let xs = coupled_expectation(next, model.chain(), mode);
            solve_cell(model, gamma, mode, &dist, &xs).map_err(|reason| InfeasibleCell {
                mode,
                prior: Prior::Stationary,
                reason,
            })
        })
        .collect()
}

/// Feasible finite-horizon solution: stages N-1 down to 1 on the full
/// grid, the hatted stage-0 cells, and the terminal value grid.
#[derive(Debug, Clone)]
pub struct FiniteHorizonSolution {
    gamma: f64,
    horizon: usize,
    terminal: ValueGrid,
    /// stages[k - 1] holds stage k, k in 1..=horizon-1.
    stages: Vec<StageSolution>,
    /// Stage-0 cell per mode (prior-independent).
    hat: Vec<StageCell>,
}

impl FiniteHorizonSolution {
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Terminal value grid (stage N), constant at the terminal weight.
    pub fn terminal(&self) -> &ValueGrid {
        &self.terminal
    }

    /// Full-grid stage solution for `1 <= k <= horizon - 1`.
    pub fn stage(&self, k: usize) -> Option<&StageSolution> {
        if k == 0 || k >= self.horizon {
            None
        } else {
            Some(&self.stages[k - 1])
        }
    }

    /// Stage-0 cell of one mode.
    pub fn hat_cell(&self, mode: usize) -> &StageCell {
        &self.hat[mode]
    }

    /// Game value `x0' XiHat(r0) x0`.
    pub fn game_value(&self, x0: &DVector<f64>, r0: usize) -> f64 {
        (x0.transpose() * &self.hat[r0].value * x0)[(0, 0)]
    }
}

/// Result of a finite-horizon solve; infeasibility is a value, not an
/// error, and records the first failing stage and cell.
#[derive(Debug, Clone)]
pub enum FiniteHorizonOutcome {
    Feasible(FiniteHorizonSolution),
    Infeasible { stage: usize, cell: InfeasibleCell },
}

impl FiniteHorizonOutcome {
    pub fn feasible(self) -> Option<FiniteHorizonSolution> {
        match self {
            FiniteHorizonOutcome::Feasible(sol) => Some(sol),
            FiniteHorizonOutcome::Infeasible { .. } => None,
        }
    }
}

/// Solve the horizon-N game backward from the terminal weight.
pub fn solve_finite_horizon(model: &MjlsModel, gamma: f64, horizon: usize) -> FiniteHorizonOutcome {
    assert!(gamma > 0.0, "attenuation level must be positive");
    assert!(horizon >= 1, "horizon must be at least 1");
    let terminal = ValueGrid::constant(
        model.num_modes(),
        model.outcome_count(),
        model.terminal_weight(),
    );
    let mut stages: Vec<StageSolution> = Vec::with_capacity(horizon - 1);
    let mut current = terminal.clone();
    // Stage k = horizon-1 down to 1.
    for k in (1..horizon).rev() {
        match backward_step(model, gamma, &current) {
            Ok(stage) => {
                current = stage.values();
                stages.push(stage);
            }
            Err(cell) => return FiniteHorizonOutcome::Infeasible { stage: k, cell },
        }
    }
    stages.reverse();
    match stage_zero_step(model, gamma, &current) {
        Ok(hat) => FiniteHorizonOutcome::Feasible(FiniteHorizonSolution {
            gamma,
            horizon,
            terminal,
            stages,
            hat,
        }),
        Err(cell) => FiniteHorizonOutcome::Infeasible { stage: 0, cell },
    }
}

/// Game values J_c for every horizon c = 1..=max_horizon in one backward
/// pass (the backward iterates depend only on stages-to-go, so horizon c
/// needs the (c-1)-step iterate plus one stage-0 step).
#[derive(Debug, Clone)]
pub struct ValueSeries {
    pub values: Vec<f64>,
    pub failure: Option<SeriesFailure>,
}

#[derive(Debug, Clone, Copy)]
pub struct SeriesFailure {
    /// Smallest horizon that could not be evaluated.
    pub horizon: usize,
    pub cell: InfeasibleCell,
}

pub fn finite_horizon_value_series(
    model: &MjlsModel,
    gamma: f64,
    max_horizon: usize,
    x0: &DVector<f64>,
    r0: usize,
) -> ValueSeries {
    assert!(gamma > 0.0, "attenuation level must be positive");
    assert!(max_horizon >= 1, "horizon must be at least 1");
    let mut values = Vec::with_capacity(max_horizon);
    let mut current = ValueGrid::constant(
        model.num_modes(),
        model.outcome_count(),
        model.terminal_weight(),
    );
    for c in 1..=max_horizon {
        match stage_zero_step(model, gamma, &current) {
            Ok(hat) => {
                values.push((x0.transpose() * &hat[r0].value * x0)[(0, 0)]);
            }
            Err(cell) => {
                return ValueSeries {
                    values,
                    failure: Some(SeriesFailure { horizon: c, cell }),
                }
            }
        }
        if c < max_horizon {
            match backward_step(model, gamma, &current) {
                Ok(stage) => current = stage.values(),
                Err(cell) => {
                    return ValueSeries {
                        values,
                        failure: Some(SeriesFailure {
                            horizon: c + 1,
                            cell,
                        }),
                    }
                }
            }
        }
    }
    ValueSeries {
        values,
        failure: None,
    }
}

/// Stopping rule for the infinite-horizon fixed point.
#[derive(Debug, Clone, Copy)]
pub struct FixedPointConfig {
    /// Max-abs elementwise residual under which the iteration stops.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Max-abs value bound above which the iteration is declared divergent.
    pub divergence_bound: f64,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 10_000,
            divergence_bound: 1e12,
        }
    }
}

/// Stationary solution of the coupled equations: per-(mode, prior) values
/// and gains for stages k >= 1 plus hatted per-mode values and gains for
/// stage 0.
#[derive(Debug, Clone)]
pub struct FixedPointSolution {
    gamma: f64,
    stationary: PairGrid<StageCell>,
    hat: Vec<StageCell>,
    pub iterations: usize,
    pub residual: f64,
}

impl FixedPointSolution {
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn stationary(&self) -> &PairGrid<StageCell> {
        &self.stationary
    }

    pub fn stationary_cell(&self, mode: usize, outcome: usize) -> &StageCell {
        self.stationary.get(mode, outcome)
    }

    pub fn hat_cell(&self, mode: usize) -> &StageCell {
        &self.hat[mode]
    }

    /// Infinite-horizon game value `x0' XiHat(r0) x0`.
    pub fn game_value(&self, x0: &DVector<f64>, r0: usize) -> f64 {
        (x0.transpose() * &self.hat[r0].value * x0)[(0, 0)]
    }
}

/// Result of the fixed-point iteration.
#[derive(Debug, Clone)]
pub enum InfiniteHorizonOutcome {
    Converged(FixedPointSolution),
    /// A value matrix left the divergence bound: the cost grows without
    /// bound at this attenuation level.
    Diverged { iterations: usize, magnitude: f64 },
    /// Concavity failed at some iterate.
    Infeasible {
        iterations: usize,
        cell: InfeasibleCell,
    },
    /// Iteration budget exhausted without convergence or divergence.
    Indeterminate { iterations: usize, residual: f64 },
}

impl InfiniteHorizonOutcome {
    pub fn converged(self) -> Option<FixedPointSolution> {
        match self {
            InfiniteHorizonOutcome::Converged(sol) => Some(sol),
            _ => None,
        }
    }
}

/// Iterate the backward step from zero until the value grid stops moving.
pub fn solve_infinite_horizon(
    model: &MjlsModel,
    gamma: f64,
    config: &FixedPointConfig,
) -> InfiniteHorizonOutcome {
    assert!(gamma > 0.0, "attenuation level must be positive");
    let zero = DMatrix::zeros(model.state_dim(), model.state_dim());
    let mut current = ValueGrid::constant(model.num_modes(), model.outcome_count(), &zero);
    let mut residual = f64::INFINITY;
    for iteration in 1..=config.max_iterations {
        let stage = match backward_step(model, gamma, &current) {
            Ok(stage) => stage,
            Err(cell) => {
                return InfiniteHorizonOutcome::Infeasible {
                    iterations: iteration,
                    cell,
                }
            }
        };
        let next = stage.values();
        let magnitude = next.max_abs();
        if magnitude > config.divergence_bound {
            return InfiniteHorizonOutcome::Diverged {
                iterations: iteration,
                magnitude,
            };
        }
        residual = next.max_abs_diff(&current);
        if residual < config.tolerance {
            return match stage_zero_step(model, gamma, &next) {
                Ok(hat) => InfiniteHorizonOutcome::Converged(FixedPointSolution {
                    gamma,
                    stationary: stage.cells,
                    hat,
                    iterations: iteration,
                    residual,
                }),
                Err(cell) => InfiniteHorizonOutcome::Infeasible {
                    iterations: iteration,
                    cell,
                },
            };
        }
        current = next;
    }
    InfiniteHorizonOutcome::Indeterminate {
        iterations: config.max_iterations,
        residual,
    }
}

/// Control/disturbance gain pair at one stage.
#[derive(Debug, Clone, Copy)]
pub struct GainPair<'a> {
    /// Saddle control is `u = -control * x`.
    pub control: &'a DMatrix<f64>,
    /// Saddle disturbance is `w = disturbance * x`.
    pub disturbance: &'a DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum GainError {
    #[error("stage {stage} outside horizon {horizon}")]
    OutsideHorizon { stage: usize, horizon: usize },
    #[error("mode index {0} out of range")]
    ModeOutOfRange(usize),
    #[error("prior outcome index {0} out of range")]
    PriorOutOfRange(usize),
}

/// Stage-indexed gain lookup shared by finite-horizon and stationary
/// solutions. Stage 0 (or an explicitly stationary prior) uses the
/// hatted gains; later stages are keyed by (mode, acknowledged outcome).
pub trait GainSchedule {
    fn controller_gain(&self, stage: usize, mode: usize, prior: Prior)
        -> Result<GainPair<'_>, GainError>;
}

fn cell_gains(cell: &StageCell) -> GainPair<'_> {
    GainPair {
        control: &cell.control_gain,
        disturbance: &cell.disturbance_gain,
    }
}

impl GainSchedule for FiniteHorizonSolution {
    fn controller_gain(
        &self,
        stage: usize,
        mode: usize,
        prior: Prior,
    ) -> Result<GainPair<'_>, GainError> {
        if stage >= self.horizon {
            return Err(GainError::OutsideHorizon {
                stage,
                horizon: self.horizon,
            });
        }
        if mode >= self.hat.len() {
            return Err(GainError::ModeOutOfRange(mode));
        }
        match (stage, prior) {
            (0, _) | (_, Prior::Stationary) => Ok(cell_gains(&self.hat[mode])),
            (k, Prior::Outcome(j)) => {
                let cells = self.stages[k - 1].cells();
                if j.get() >= cells.outcomes() {
                    return Err(GainError::PriorOutOfRange(j.get()));
                }
                Ok(cell_gains(cells.get(mode, j.get())))
            }
        }
    }
}

impl GainSchedule for FixedPointSolution {
    fn controller_gain(
        &self,
        stage: usize,
        mode: usize,
        prior: Prior,
    ) -> Result<GainPair<'_>, GainError> {
        if mode >= self.hat.len() {
            return Err(GainError::ModeOutOfRange(mode));
        }
        match (stage, prior) {
            (0, _) | (_, Prior::Stationary) => Ok(cell_gains(&self.hat[mode])),
            (_, Prior::Outcome(j)) => {
                if j.get() >= self.stationary.outcomes() {
                    return Err(GainError::PriorOutOfRange(j.get()));
                }
                Ok(cell_gains(self.stationary.get(mode, j.get())))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::outcome_distribution;
    use crate::model::test_fixtures::example_model;
    use crate::model::{ChannelBank, GilbertElliottChannel, MarkovChain, MjlsModel, ModeData};
    use approx::assert_relative_eq;

    /// Scalar model: n = m = s = 1, A = B = D1 = 1, C'C = 1, D'D = 1,
    /// perfect channel.
    fn scalar_model() -> MjlsModel {
        let one = DMatrix::from_element(1, 1, 1.0);
        let mode = ModeData {
            a: one.clone(),
            b: one.clone(),
            // C stacks the state row over a zero row so C'D = 0 with
            // D = [0; 1].
            c: DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            d: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            d1: one.clone(),
        };
        MjlsModel::new(
            vec![mode],
            MarkovChain::new(DMatrix::from_element(1, 1, 1.0)).unwrap(),
            ChannelBank::new(vec![GilbertElliottChannel::new(1.0, 1.0).unwrap()]).unwrap(),
            DMatrix::zeros(1, 1),
        )
        .unwrap()
    }

    #[test]
    fn coupled_expectation_single_mode_is_identity_map() {
        let model = scalar_model();
        let grid = ValueGrid::constant(1, 2, &DMatrix::from_element(1, 1, 4.2));
        let xs = coupled_expectation(&grid, model.chain(), 0);
        assert_relative_eq!(xs[0][(0, 0)], 4.2);
        assert_relative_eq!(xs[1][(0, 0)], 4.2);
    }

    #[test]
    fn coupled_expectation_mixes_rows() {
        let chain = MarkovChain::new(DMatrix::from_row_slice(2, 2, &[0.45, 0.55, 0.4, 0.6])).unwrap();
        let eye = DMatrix::<f64>::identity(3, 3);
        let grid = PairGrid::from_fn(2, 4, |mode, _| {
            if mode == 0 {
                eye.clone()
            } else {
                &eye * 2.0
            }
        });
        let xs = coupled_expectation(&grid, &chain, 0);
        for x in &xs {
            assert_relative_eq!(x, &(&eye * 1.55), epsilon = 1e-15);
        }
        // Row-stochastic mixing of a constant grid returns the constant.
        let ones_grid = PairGrid::from_fn(2, 4, |_, _| eye.clone());
        for x in coupled_expectation(&ones_grid, &chain, 1) {
            assert_relative_eq!(x, eye.clone(), epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_future_value_gives_pure_concavity() {
        let model = example_model([0.88, 0.86, 0.89, 0.87]);
        let xs = vec![DMatrix::zeros(3, 3); 4];
        let dist = outcome_distribution(model.bank(), Prior::Stationary);
        let q = stage_quantities(&model, 2.5, 0, &dist, &xs).unwrap();
        assert_relative_eq!(
            q.concavity,
            DMatrix::from_element(1, 1, 6.25),
            epsilon = 1e-14
        );
    }

    #[test]
    fn no_actuation_authority_means_zero_control_gain() {
        let model = example_model([0.88, 0.86, 0.89, 0.87]);
        let mut modes = model.modes().to_vec();
        for md in &mut modes {
            md.b = DMatrix::zeros(3, 2);
        }
        let model = MjlsModel::new(
            modes,
            model.chain().clone(),
            model.bank().clone(),
            model.terminal_weight().clone(),
        )
        .unwrap();
        let xs = vec![DMatrix::identity(3, 3); 4];
        let dist = outcome_distribution(model.bank(), Prior::Stationary);
        let q = stage_quantities(&model, 10.0, 0, &dist, &xs).unwrap();
        assert_relative_eq!(q.control_gain, DMatrix::zeros(2, 3), epsilon = 1e-14);
    }

    /// Scalar hand-derived step: gamma = 10, next value 1. The saddle
    /// algebra gives concavity 99, curvature 2, disturbance gain 1/199,
    /// control gain 100/199, value 299/199.
    #[test]
    fn scalar_golden_stage() {
        let model = scalar_model();
        let xs = vec![DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 1.0)];
        let dist = outcome_distribution(model.bank(), Prior::Stationary);
        let q = stage_quantities(&model, 10.0, 0, &dist, &xs).unwrap();
        assert_relative_eq!(q.concavity[(0, 0)], 99.0, epsilon = 1e-12);
        assert_relative_eq!(q.curvature[(0, 0)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(q.disturbance_gain[(0, 0)], 1.0 / 199.0, epsilon = 1e-12);
        assert_relative_eq!(q.control_gain[(0, 0)], 100.0 / 199.0, epsilon = 1e-12);

        let grid = ValueGrid::constant(1, 2, &DMatrix::from_element(1, 1, 1.0));
        let stage = backward_step(&model, 10.0, &grid).unwrap();
        for j in 0..2 {
            assert_relative_eq!(
                stage.cell(0, j).value[(0, 0)],
                299.0 / 199.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn zero_cost_propagates_zero() {
        // All-zero weights: C = 0 keeps W(i) = 0; D stays nonzero so the
        // curvature is definite.
        let model = example_model([0.88, 0.86, 0.89, 0.87]);
        let mut modes = model.modes().to_vec();
        for md in &mut modes {
            md.c = DMatrix::zeros(3, 3);
        }
        let model = MjlsModel::new(
            modes,
            model.chain().clone(),
            model.bank().clone(),
            DMatrix::zeros(3, 3),
        )
        .unwrap();
        let zero_grid = ValueGrid::constant(2, 4, &DMatrix::zeros(3, 3));
        let stage = backward_step(&model, 5.0, &zero_grid).unwrap();
        for ((_, _), cell) in stage.cells().iter() {
            assert_relative_eq!(cell.value, DMatrix::zeros(3, 3), epsilon = 1e-14);
            assert_relative_eq!(cell.control_gain, DMatrix::zeros(2, 3), epsilon = 1e-14);
            assert_relative_eq!(cell.disturbance_gain, DMatrix::zeros(1, 3), epsilon = 1e-14);
        }
    }

    /// One step from zero at a near-infinite attenuation level matches the
    /// same step with the disturbance player switched off.
    #[test]
    fn huge_gamma_matches_disturbance_free_step() {
        let model = example_model([0.88, 0.86, 0.89, 0.87]);
        let grid = ValueGrid::constant(2, 4, &DMatrix::zeros(3, 3));
        let first = backward_step(&model, 1e3, &grid).unwrap();
        let second = backward_step(&model, 1e3, &first.values()).unwrap();

        // Disturbance-free reference: control-only completion of squares,
        // Gamma = Lambda^-1 E[N B' X] A, value without the gamma terms.
        let mut reference = ValueGrid::constant(2, 4, &DMatrix::zeros(3, 3));
        for _ in 0..2 {
            let mut next = Vec::new();
            for mode in 0..2 {
                let xs = coupled_expectation(&reference, model.chain(), mode);
                let md = &model.modes()[mode];
                let r = model.control_weight(mode);
                for j in 0..4 {
                    let dist = outcome_distribution(
                        model.bank(),
                        Prior::Outcome(OutcomeIndex::new(j, 2).unwrap()),
                    );
                    let mut masked_bx = DMatrix::zeros(2, 3);
                    let mut curvature = DMatrix::zeros(2, 2);
                    let mut masked_r = DMatrix::zeros(2, 2);
                    for l in 0..4 {
                        let p = dist.prob(l);
                        let mask = outcome_mask(l, 2);
                        let btx = &mask * (md.b.transpose() * &xs[l]);
                        curvature += (&btx * &md.b + &mask * r) * &mask * p;
                        masked_bx += btx * p;
                        masked_r += &mask * r * &mask * p;
                    }
                    let gain = curvature
                        .clone()
                        .cholesky()
                        .unwrap()
                        .solve(&(&masked_bx * &md.a));
                    let mut value = model.state_weight(mode).clone();
                    value += gain.transpose() * &masked_r * &gain;
                    for l in 0..4 {
                        let mask = outcome_mask(l, 2);
                        let f = &md.a - &md.b * mask * &gain;
                        value += f.transpose() * &xs[l] * f * dist.prob(l);
                    }
                    next.push(symmetrize(&value));
                }
            }
            reference = PairGrid {
                modes: 2,
                outcomes: 4,
                items: next,
            };
        }
        let solved = second.values();
        for mode in 0..2 {
            for j in 0..4 {
                let diff = (solved.get(mode, j) - reference.get(mode, j)).amax();
                let scale = reference.get(mode, j).amax();
                assert!(
                    diff <= 1e-4 * scale,
                    "mode {mode} prior {j}: relative gap {}",
                    diff / scale
                );
            }
        }
    }

    #[test]
    fn inert_players_collapse_value_to_state_weight() {
        // B = 0 and D1 = 0 with horizon 1: the game value is x0' W(r0) x0.
        let model = example_model([0.88, 0.86, 0.89, 0.87]);
        let mut modes = model.modes().to_vec();
        for md in &mut modes {
            md.b = DMatrix::zeros(3, 2);
            md.d1 = DMatrix::zeros(3, 1);
        }
        let model = MjlsModel::new(
            modes,
            model.chain().clone(),
            model.bank().clone(),
            model.terminal_weight().clone(),
        )
        .unwrap();
        let sol = solve_finite_horizon(&model, 3.0, 1).feasible().unwrap();
        let x0 = DVector::from_row_slice(&[0.1, 0.2, 0.3]);
        let direct = (x0.transpose() * model.state_weight(0) * &x0)[(0, 0)];
        assert_relative_eq!(sol.game_value(&x0, 0), direct, epsilon = 1e-14);
    }

    #[test]
    fn value_series_matches_direct_solves() {
        let model = example_model([0.88, 0.86, 0.89, 0.87]);
        let x0 = DVector::from_row_slice(&[0.1, 0.2, 0.3]);
        let series = finite_horizon_value_series(&model, 40.0, 6, &x0, 1);
        assert!(series.failure.is_none());
        for c in 1..=6usize {
            let sol = solve_finite_horizon(&model, 40.0, c).feasible().unwrap();
            assert_relative_eq!(series.values[c - 1], sol.game_value(&x0, 1), epsilon = 1e-12);
        }
    }

    #[test]
    fn static_modes_converge_to_state_weight() {
        let model = example_model([0.88, 0.86, 0.89, 0.87]);
        let mut modes = model.modes().to_vec();
        for md in &mut modes {
            md.a = DMatrix::identity(3, 3) * 1e-300;
        }
        // A must keep full rank, hence the tiny scale rather than zero.
        let model = MjlsModel::new(
            modes,
            model.chain().clone(),
            model.bank().clone(),
            model.terminal_weight().clone(),
        )
        .unwrap();
        match solve_infinite_horizon(&model, 5.0, &FixedPointConfig::default()) {
            InfiniteHorizonOutcome::Converged(sol) => {
                assert!(sol.iterations <= 3, "took {} iterations", sol.iterations);
                for mode in 0..2 {
                    for j in 0..4 {
                        assert_relative_eq!(
                            sol.stationary_cell(mode, j).value,
                            model.state_weight(mode).clone(),
                            epsilon = 1e-9
                        );
                    }
                }
            }
            other => panic!("expected convergence, got {other:?}"),
        }
    }

    #[test]
    fn stage_zero_gains_ignore_the_prior() {
        let model = example_model([0.88, 0.86, 0.89, 0.87]);
        let sol = solve_finite_horizon(&model, 60.0, 5).feasible().unwrap();
        let stationary = sol.controller_gain(0, 1, Prior::Stationary).unwrap();
        for j in 0..4 {
            let by_outcome = sol
                .controller_gain(0, 1, Prior::Outcome(OutcomeIndex::new(j, 2).unwrap()))
                .unwrap();
            assert_eq!(stationary.control, by_outcome.control);
            assert_eq!(stationary.disturbance, by_outcome.disturbance);
        }
    }

    #[test]
    fn gain_requests_outside_horizon_fail() {
        let model = example_model([0.88, 0.86, 0.89, 0.87]);
        let sol = solve_finite_horizon(&model, 60.0, 3).feasible().unwrap();
        let err = sol
            .controller_gain(3, 0, Prior::Stationary)
            .unwrap_err();
        assert_eq!(
            err,
            GainError::OutsideHorizon {
                stage: 3,
                horizon: 3
            }
        );
    }

    /// With perfect channels the full-outcome gains must match an
    /// independent no-dropout recursion that solves the per-mode saddle
    /// as one block system.
    #[test]
    fn perfect_channels_match_a_no_dropout_recursion() {
        let model = example_model([1.0, 1.0, 1.0, 1.0]);
        let gamma: f64 = 40.0;
        let n = 3;

        let mut grid = ValueGrid::constant(2, 4, model.terminal_weight());
        let mut reference: Vec<DMatrix<f64>> =
            vec![model.terminal_weight().clone(); 2];
        for _ in 0..12 {
            let stage = backward_step(&model, gamma, &grid).unwrap();

            let mut next_reference = Vec::new();
            for mode in 0..2 {
                let md = &model.modes()[mode];
                let r = model.control_weight(mode);
                let mut x = DMatrix::zeros(n, n);
                for d in 0..2 {
                    x += &reference[d] * model.chain().probability(mode, d);
                }
                let mut kkt = DMatrix::zeros(3, 3);
                kkt.view_mut((0, 0), (2, 2))
                    .copy_from(&(r + md.b.transpose() * &x * &md.b));
                kkt.view_mut((0, 2), (2, 1))
                    .copy_from(&(md.b.transpose() * &x * &md.d1));
                kkt.view_mut((2, 0), (1, 2))
                    .copy_from(&(md.d1.transpose() * &x * &md.b));
                kkt.view_mut((2, 2), (1, 1)).copy_from(
                    &(md.d1.transpose() * &x * &md.d1
                        - DMatrix::identity(1, 1) * gamma * gamma),
                );
                let mut rhs = DMatrix::zeros(3, n);
                rhs.view_mut((0, 0), (2, n))
                    .copy_from(&(md.b.transpose() * &x * &md.a));
                rhs.view_mut((2, 0), (1, n))
                    .copy_from(&(md.d1.transpose() * &x * &md.a));
                let stacked = kkt.lu().solve(&rhs).unwrap();
                let control = stacked.rows(0, 2).into_owned();
                let disturbance = -stacked.rows(2, 1).into_owned();

                // Perfect channels concentrate every distribution on the
                // full outcome, so all priors carry the same cell.
                for j in 0..4 {
                    let cell = stage.cell(mode, j);
                    assert_relative_eq!(cell.control_gain, control.clone(), epsilon = 1e-9);
                    assert_relative_eq!(
                        cell.disturbance_gain,
                        disturbance.clone(),
                        epsilon = 1e-9
                    );
                }
                let value = model.state_weight(mode)
                    + md.a.transpose() * &x * &md.a
                    - rhs.transpose() * &stacked;
                next_reference.push(symmetrize(&value));
                assert_relative_eq!(
                    stage.cell(mode, 3).value,
                    next_reference[mode].clone(),
                    epsilon = 1e-9
                );
            }
            reference = next_reference;
            grid = stage.values();
        }
    }

    #[test]
    fn infeasible_gamma_reports_first_failing_stage() {
        let model = example_model([0.88, 0.86, 0.89, 0.87]);
        match solve_finite_horizon(&model, 1e-3, 4) {
            FiniteHorizonOutcome::Infeasible { stage, cell } => {
                // Stage 3 still sees a zero future value (concavity is
                // gamma^2 I); stage 2 is the deepest stage with a nonzero
                // future value and fails first.
                assert_eq!(stage, 2);
                assert_eq!(cell.reason, InfeasibleReason::ConcavityLost);
            }
            FiniteHorizonOutcome::Feasible(_) => panic!("tiny gamma cannot be feasible"),
        }
    }
}
