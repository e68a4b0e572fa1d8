//! Independent brute-force references for cross-checking the solver.
//!
//! Three routes that share no code with the `riccati` module beyond raw
//! matrix arithmetic:
//!
//! * [`grid_saddle`]: min-max of the one-stage quadratic functional over
//!   an explicit grid of control/disturbance values;
//! * [`enumerate_value`]: the expected game cost by exhaustive expansion
//!   of the mode and outcome trees under the solver's policies;
//! * [`classical_hinf_step`]: the single-mode, no-dropout discrete-time
//!   H-infinity value update via a block saddle solve, the reduction
//!   target when the chain has one state and the channel is perfect.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::channels::{outcome_distribution, ChannelOutcomeDistribution, OutcomeIndex, Prior};
use crate::model::MjlsModel;
use crate::riccati::{solve_finite_horizon, GainSchedule};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("saddle landed on the grid boundary; widen the bounds")]
    SaddleOnBoundary,
    #[error("grid cardinality {0} exceeds the oracle budget")]
    GridTooLarge(u128),
    #[error("grid oracle supports at most 2 coordinates per player, got {0}")]
    DimensionTooLarge(usize),
    #[error("grid specification is malformed")]
    BadGrid,
    #[error("enumeration tree of about {0} leaves exceeds the oracle budget")]
    TreeTooLarge(f64),
    #[error("solver reported the instance infeasible at this attenuation level")]
    Infeasible,
    #[error("concavity condition violated: gamma too small for this value")]
    ConcavityViolated,
    #[error("saddle system is singular")]
    SingularSaddle,
}

/// Axis-aligned evaluation grid: shared step, per-coordinate bounds.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub step: f64,
}

impl GridSpec {
    pub fn scalar(lower: f64, upper: f64, step: f64) -> Self {
        Self {
            lower: vec![lower],
            upper: vec![upper],
            step,
        }
    }

    fn points_per_coord(&self) -> Result<Vec<usize>, OracleError> {
        if self.step <= 0.0
            || self.lower.len() != self.upper.len()
            || self.lower.is_empty()
            || self
                .lower
                .iter()
                .zip(self.upper.iter())
                .any(|(lo, hi)| !lo.is_finite() || !hi.is_finite() || lo >= hi)
        {
            return Err(OracleError::BadGrid);
        }
        let counts: Vec<usize> = self
            .lower
            .iter()
            .zip(self.upper.iter())
            .map(|(lo, hi)| ((hi - lo) / self.step).floor() as usize + 1)
            .collect();
        let cardinality: u128 = counts.iter().map(|&c| c as u128).product();
        if cardinality > 100_000_000 {
            return Err(OracleError::GridTooLarge(cardinality));
        }
        Ok(counts)
    }

    fn coordinate(&self, axis: usize, index: usize) -> f64 {
        self.lower[axis] + self.step * index as f64
    }
}

/// The one-stage quadratic functional evaluated directly from its
/// definition: stage cost plus the outcome-weighted expectation of the
/// next-stage quadratic value at the propagated state.
///
/// `xs[l]` is the mode-mixed next value for outcome `l`.
#[allow(clippy::too_many_arguments)]
pub fn stage_functional(
    model: &MjlsModel,
    gamma: f64,
    mode: usize,
    dist: &ChannelOutcomeDistribution,
    xs: &[DMatrix<f64>],
    x: &DVector<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
) -> f64 {
    let md = &model.modes()[mode];
    let r = model.control_weight(mode);
    let mut h = (x.transpose() * model.state_weight(mode) * x)[(0, 0)];
    h -= gamma * gamma * w.norm_squared();
    let base = &md.a * x + &md.d1 * w;
    for (l, next_value) in xs.iter().enumerate() {
        let p = dist.prob(l);
        if p == 0.0 {
            continue;
        }
        let masked: DVector<f64> =
            DVector::from_fn(u.len(), |h_idx, _| if l >> h_idx & 1 == 1 { u[h_idx] } else { 0.0 });
        h += p * (masked.transpose() * r * &masked)[(0, 0)];
        let y = &base + &md.b * &masked;
        h += p * (y.transpose() * next_value * &y)[(0, 0)];
    }
    h
}

/// Result of the grid search: minimizing control, its maximizing
/// disturbance, and the min-max value.
#[derive(Debug, Clone)]
pub struct SaddleResult {
    pub control: DVector<f64>,
    pub disturbance: DVector<f64>,
    pub value: f64,
}

fn unravel(counts: &[usize], mut flat: usize) -> Vec<usize> {
    let mut idx = vec![0; counts.len()];
    for (axis, &count) in counts.iter().enumerate().rev() {
        idx[axis] = flat % count;
        flat /= count;
    }
    idx
}

fn on_boundary(counts: &[usize], idx: &[usize]) -> bool {
    idx.iter()
        .zip(counts.iter())
        .any(|(&i, &c)| i == 0 || i + 1 == c)
}

/// Exhaustive min over the control grid of the max over the disturbance
/// grid of the one-stage functional. Untrusted (an error) if the saddle
/// lands on a grid edge. Intended for scalar or 2-dimensional players.
#[allow(clippy::too_many_arguments)]
pub fn grid_saddle(
    model: &MjlsModel,
    gamma: f64,
    mode: usize,
    dist: &ChannelOutcomeDistribution,
    xs: &[DMatrix<f64>],
    x: &DVector<f64>,
    grid_u: &GridSpec,
    grid_w: &GridSpec,
) -> Result<SaddleResult, OracleError> {
    let m = model.input_dim();
    let s = model.disturbance_dim();
    if m > 2 {
        return Err(OracleError::DimensionTooLarge(m));
    }
    if s > 2 {
        return Err(OracleError::DimensionTooLarge(s));
    }
    if grid_u.lower.len() != m || grid_w.lower.len() != s {
        return Err(OracleError::BadGrid);
    }
    let u_counts = grid_u.points_per_coord()?;
    let w_counts = grid_w.points_per_coord()?;
    let total_u: usize = u_counts.iter().product();
    let total_w: usize = w_counts.iter().product();

    let md = &model.modes()[mode];
    let r = model.control_weight(mode);
    let state_cost = (x.transpose() * model.state_weight(mode) * x)[(0, 0)];
    let ax = &md.a * x;

    // Per-outcome scratch reused across the scan.
    let active: Vec<(usize, f64)> = (0..dist.len())
        .filter(|&l| dist.prob(l) > 0.0)
        .map(|l| (l, dist.prob(l)))
        .collect();
    let mut masked = DVector::zeros(m);
    let mut u_vec = DVector::zeros(m);
    let mut w_vec = DVector::zeros(s);
    let mut y = DVector::zeros(model.state_dim());
    let mut xy = DVector::zeros(model.state_dim());
    // Base points per outcome, A x + B N(l) u, rebuilt per control point.
    let mut bases: Vec<DVector<f64>> = vec![DVector::zeros(model.state_dim()); active.len()];
    let mut control_costs: Vec<f64> = vec![0.0; active.len()];

    let mut best: Option<(f64, usize, usize)> = None;
    for flat_u in 0..total_u {
        let u_idx = unravel(&u_counts, flat_u);
        for axis in 0..m {
            u_vec[axis] = grid_u.coordinate(axis, u_idx[axis]);
        }
        for (slot, &(l, _)) in active.iter().enumerate() {
            for h in 0..m {
                masked[h] = if l >> h & 1 == 1 { u_vec[h] } else { 0.0 };
            }
            control_costs[slot] = (masked.transpose() * r * &masked)[(0, 0)];
            bases[slot].copy_from(&ax);
            bases[slot].gemv(1.0, &md.b, &masked, 1.0);
        }
        let mut worst: Option<(f64, usize)> = None;
        for flat_w in 0..total_w {
            let w_idx = unravel(&w_counts, flat_w);
            for axis in 0..s {
                w_vec[axis] = grid_w.coordinate(axis, w_idx[axis]);
            }
            let mut h = state_cost - gamma * gamma * w_vec.norm_squared();
            for (slot, &(l, p)) in active.iter().enumerate() {
                y.copy_from(&bases[slot]);
                y.gemv(1.0, &md.d1, &w_vec, 1.0);
                xs[l].mul_to(&y, &mut xy);
                h += p * (control_costs[slot] + y.dot(&xy));
            }
            if worst.is_none_or(|(hv, _)| h > hv) {
                worst = Some((h, flat_w));
            }
        }
        let (max_h, arg_w) = worst.expect("nonempty disturbance grid");
        if best.is_none_or(|(hv, _, _)| max_h < hv) {
            best = Some((max_h, flat_u, arg_w));
        }
    }
    let (value, flat_u, flat_w) = best.expect("nonempty control grid");
    let u_idx = unravel(&u_counts, flat_u);
    let w_idx = unravel(&w_counts, flat_w);
    if on_boundary(&u_counts, &u_idx) || on_boundary(&w_counts, &w_idx) {
        return Err(OracleError::SaddleOnBoundary);
    }
    Ok(SaddleResult {
        control: DVector::from_fn(m, |axis, _| grid_u.coordinate(axis, u_idx[axis])),
        disturbance: DVector::from_fn(s, |axis, _| grid_w.coordinate(axis, w_idx[axis])),
        value,
    })
}

/// Expected game cost by exhaustive expansion of the mode-transition and
/// channel-outcome trees under the solver's saddle policies. Refuses trees
/// beyond roughly 2e5 leaves.
pub fn enumerate_value(
    model: &MjlsModel,
    gamma: f64,
    horizon: usize,
    x0: &DVector<f64>,
    r0: usize,
) -> Result<f64, OracleError> {
    let branching = (model.num_modes() * model.outcome_count()) as f64;
    let leaves = branching.powi(horizon as i32);
    if leaves > 2e5 {
        return Err(OracleError::TreeTooLarge(leaves));
    }
    let solution = solve_finite_horizon(model, gamma, horizon)
        .feasible()
        .ok_or(OracleError::Infeasible)?;

    struct Ctx<'a> {
        model: &'a MjlsModel,
        solution: &'a crate::riccati::FiniteHorizonSolution,
        gamma: f64,
        horizon: usize,
    }

    fn recurse(
        ctx: &Ctx,
        k: usize,
        mode: usize,
        prior: Option<OutcomeIndex>,
        x: &DVector<f64>,
        weight: f64,
    ) -> f64 {
        let model = ctx.model;
        let md = &model.modes()[mode];
        let r = model.control_weight(mode);
        let channel_prior = match prior {
            None => Prior::Stationary,
            Some(j) => Prior::Outcome(j),
        };
        let pair = ctx
            .solution
            .controller_gain(k, mode, channel_prior)
            .expect("stage within horizon");
        let u = -(pair.control * x);
        let w = pair.disturbance * x;
        let base_cost = (x.transpose() * model.state_weight(mode) * x)[(0, 0)]
            - ctx.gamma * ctx.gamma * w.norm_squared();
        let drift = &md.a * x + &md.d1 * &w;
        let dist = outcome_distribution(model.bank(), channel_prior);

        let mut acc = 0.0;
        for l in 0..dist.len() {
            let p = dist.prob(l);
            if p == 0.0 {
                continue;
            }
            let masked =
                DVector::from_fn(u.len(), |h, _| if l >> h & 1 == 1 { u[h] } else { 0.0 });
            let stage_cost = base_cost + (masked.transpose() * r * &masked)[(0, 0)];
            let next = &drift + &md.b * &masked;
            if k + 1 == ctx.horizon {
                let terminal = (next.transpose() * model.terminal_weight() * &next)[(0, 0)];
                acc += weight * p * (stage_cost + terminal);
            } else {
                let outcome = OutcomeIndex::new(l, model.bank().len()).expect("in range");
                acc += weight * p * stage_cost;
                for d in 0..model.num_modes() {
                    let pt = model.chain().probability(mode, d);
                    if pt > 0.0 {
                        acc += recurse(ctx, k + 1, d, Some(outcome), &next, weight * p * pt);
                    }
                }
            }
        }
        acc
    }

    let ctx = Ctx {
        model,
        solution: &solution,
        gamma,
        horizon,
    };
    Ok(recurse(&ctx, 0, r0, None, x0, 1.0))
}

/// Classical discrete-time state-feedback H-infinity value update for one
/// linear mode without dropouts: stationarity of the quadratic stage game
/// solved as one block system in (u, w).
pub fn classical_hinf_step(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    d1: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    gamma: f64,
    p_next: &DMatrix<f64>,
) -> Result<DMatrix<f64>, OracleError> {
    let m = b.ncols();
    let s = d1.ncols();
    let concavity = DMatrix::identity(s, s) * gamma * gamma - d1.transpose() * p_next * d1;
    let sym = (&concavity + concavity.transpose()) * 0.5;
    if sym.cholesky().is_none() {
        return Err(OracleError::ConcavityViolated);
    }

    let mut kkt = DMatrix::zeros(m + s, m + s);
    kkt.view_mut((0, 0), (m, m))
        .copy_from(&(r + b.transpose() * p_next * b));
    kkt.view_mut((0, m), (m, s))
        .copy_from(&(b.transpose() * p_next * d1));
    kkt.view_mut((m, 0), (s, m))
        .copy_from(&(d1.transpose() * p_next * b));
    kkt.view_mut((m, m), (s, s))
        .copy_from(&(d1.transpose() * p_next * d1 - DMatrix::identity(s, s) * gamma * gamma));

    let mut rhs = DMatrix::zeros(m + s, a.ncols());
    rhs.view_mut((0, 0), (m, a.ncols()))
        .copy_from(&(b.transpose() * p_next * a));
    rhs.view_mut((m, 0), (s, a.ncols()))
        .copy_from(&(d1.transpose() * p_next * a));

    let stacked = kkt
        .lu()
        .solve(&rhs)
        .ok_or(OracleError::SingularSaddle)?;
    let correction = rhs.transpose() * &stacked;
    let p = q + a.transpose() * p_next * a - correction;
    Ok((&p + p.transpose()) * 0.5)
}
