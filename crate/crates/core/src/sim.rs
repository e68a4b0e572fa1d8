//! Seeded closed-loop Monte-Carlo simulation.
//!
//! Mode transitions and per-channel loss processes are sampled by
//! inverse-CDF draws in fixed index order from a counter-based generator
//! (ChaCha8). Trial `t` of a Monte-Carlo run uses stream `t` of the run
//! seed, so trial draws do not depend on the trial count and aggregation
//! order is fixed: results are identical under any worker count.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::channels::{stationary_success, OutcomeIndex, Prior};
use crate::model::MjlsModel;
use crate::riccati::{GainError, GainSchedule};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("initial state has {got} entries, model state dimension is {expected}")]
    StateDimension { got: usize, expected: usize },
    #[error("initial mode {0} out of range")]
    ModeOutOfRange(usize),
    #[error("waveform sample {index} has {got} entries, disturbance dimension is {expected}")]
    WaveformDimension {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("waveform sample {index} is not finite")]
    WaveformNotFinite { index: usize },
    #[error("simulation needs at least one step")]
    NoSteps,
    #[error("simulation needs at least one trial")]
    NoTrials,
    #[error("gain lookup failed: {0}")]
    Gain(#[from] GainError),
}

/// Disturbance input applied during simulation.
#[derive(Debug, Clone)]
pub enum DisturbancePolicy {
    Zero,
    /// Sampled table, zero beyond its length.
    Waveform(Vec<DVector<f64>>),
    /// Saddle disturbance `w = Psi x` from the gain schedule.
    WorstCase,
}

/// What the actuator applies on packet loss. `ZeroInput` is the design
/// assumption of the controller; `HoldInput` repeats the last applied
/// value and is provided only as a comparison mode, flagged in summaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossStrategy {
    ZeroInput,
    HoldInput,
}

impl LossStrategy {
    pub fn label(self) -> &'static str {
        match self {
            LossStrategy::ZeroInput => "zero_input",
            LossStrategy::HoldInput => "hold_input",
        }
    }
}

/// Everything one closed-loop run needs besides the model and gains.
#[derive(Debug, Clone)]
pub struct SimulationPlan {
    pub x0: DVector<f64>,
    pub r0: usize,
    pub steps: usize,
    pub seed: u64,
    pub disturbance: DisturbancePolicy,
    pub loss: LossStrategy,
}

/// One simulated step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub mode: usize,
    pub outcome: OutcomeIndex,
    pub state: DVector<f64>,
    /// Controller output before the channel.
    pub command: DVector<f64>,
    /// Input the actuators applied (masked command, or held value).
    pub applied: DVector<f64>,
    pub disturbance: DVector<f64>,
    pub output: DVector<f64>,
}

/// Full record of one closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub steps: Vec<Step>,
    pub final_state: DVector<f64>,
    pub seed: u64,
    pub loss: LossStrategy,
}

/// Aggregate statistics over trials.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSummary {
    pub trials: usize,
    pub steps: usize,
    /// Mean of ||x_k||^2 over trials, k = 0..=steps.
    pub mean_square_state: Vec<f64>,
    /// mean(sum_k ||z_k||^2) / mean(sum_k ||w_k||^2), when disturbance
    /// energy is present.
    pub empirical_gain: Option<f64>,
    /// Delta-method standard error of the empirical gain (needs >= 2
    /// trials).
    pub gain_standard_error: Option<f64>,
    pub seed: u64,
    pub loss: LossStrategy,
}

fn validate_plan(model: &MjlsModel, plan: &SimulationPlan) -> Result<(), SimError> {
    if plan.steps == 0 {
        return Err(SimError::NoSteps);
    }
    if plan.r0 >= model.num_modes() {
        return Err(SimError::ModeOutOfRange(plan.r0));
    }
    if plan.x0.len() != model.state_dim() {
        return Err(SimError::StateDimension {
            got: plan.x0.len(),
            expected: model.state_dim(),
        });
    }
    if let DisturbancePolicy::Waveform(samples) = &plan.disturbance {
        for (index, w) in samples.iter().enumerate() {
            if w.len() != model.disturbance_dim() {
                return Err(SimError::WaveformDimension {
                    index,
                    got: w.len(),
                    expected: model.disturbance_dim(),
                });
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(SimError::WaveformNotFinite { index });
            }
        }
    }
    Ok(())
}

/// Inverse-CDF draw over a transition row, states scanned in index order.
fn draw_mode(rng: &mut ChaCha8Rng, model: &MjlsModel, from: usize) -> usize {
    let u: f64 = rng.random();
    let chain = model.chain();
    let mut cumulative = 0.0;
    for to in 0..model.num_modes() {
        cumulative += chain.probability(from, to);
        if u < cumulative {
            return to;
        }
    }
    model.num_modes() - 1
}

/// Per-channel success draws in index order; success when the uniform
/// falls below the delivery probability.
fn draw_outcome(rng: &mut ChaCha8Rng, model: &MjlsModel, prev: Option<OutcomeIndex>) -> OutcomeIndex {
    let bank = model.bank();
    let mut bits = 0usize;
    for (h, ch) in bank.channels().iter().enumerate() {
        let success = match prev {
            None => stationary_success(ch),
            Some(j) => {
                if j.contains(h) {
                    ch.stay_good
                } else {
                    ch.recover
                }
            }
        };
        let u: f64 = rng.random();
        if u < success {
            bits |= 1 << h;
        }
    }
    OutcomeIndex::new(bits, bank.len()).expect("bits within channel count")
}

fn run_trial<G: GainSchedule>(
    model: &MjlsModel,
    gains: &G,
    plan: &SimulationPlan,
    mut rng: ChaCha8Rng,
) -> Result<TrajectoryRecord, SimError> {
    let s = model.disturbance_dim();
    let m = model.input_dim();
    let mut x = plan.x0.clone();
    let mut mode = plan.r0;
    let mut prev_outcome: Option<OutcomeIndex> = None;
    let mut prev_applied = DVector::zeros(m);
    let mut steps = Vec::with_capacity(plan.steps);
    for k in 0..plan.steps {
        let prior = match prev_outcome {
            None => Prior::Stationary,
            Some(j) => Prior::Outcome(j),
        };
        let pair = gains.controller_gain(k, mode, prior)?;
        let command = -(pair.control * &x);
        let disturbance = match &plan.disturbance {
            DisturbancePolicy::Zero => DVector::zeros(s),
            DisturbancePolicy::Waveform(samples) => samples
                .get(k)
                .cloned()
                .unwrap_or_else(|| DVector::zeros(s)),
            DisturbancePolicy::WorstCase => pair.disturbance * &x,
        };
        let outcome = draw_outcome(&mut rng, model, prev_outcome);
        let applied = DVector::from_fn(m, |h, _| {
            if outcome.contains(h) {
                command[h]
            } else {
                match plan.loss {
                    LossStrategy::ZeroInput => 0.0,
                    LossStrategy::HoldInput => prev_applied[h],
                }
            }
        });
        let md = &model.modes()[mode];
        let output = &md.c * &x + &md.d * &applied;
        let next_state = &md.a * &x + &md.b * &applied + &md.d1 * &disturbance;
        steps.push(Step {
            mode,
            outcome,
            state: x,
            command,
            applied: applied.clone(),
            disturbance,
            output,
        });
        x = next_state;
        prev_applied = applied;
        prev_outcome = Some(outcome);
        if k + 1 < plan.steps {
            mode = draw_mode(&mut rng, model, mode);
        }
    }
    Ok(TrajectoryRecord {
        steps,
        final_state: x,
        seed: plan.seed,
        loss: plan.loss,
    })
}

/// Run one closed-loop trajectory (stream 0 of the seed: identical to
/// trial 0 of [`monte_carlo`] with the same plan).
pub fn simulate<G: GainSchedule>(
    model: &MjlsModel,
    gains: &G,
    plan: &SimulationPlan,
) -> Result<TrajectoryRecord, SimError> {
    validate_plan(model, plan)?;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    rng.set_stream(0);
    run_trial(model, gains, plan, rng)
}

struct TrialStats {
    square_state: Vec<f64>,
    output_energy: f64,
    disturbance_energy: f64,
}

fn trial_stats(record: &TrajectoryRecord) -> TrialStats {
    let mut square_state: Vec<f64> = record
        .steps
        .iter()
        .map(|st| st.state.norm_squared())
        .collect();
    square_state.push(record.final_state.norm_squared());
    TrialStats {
        square_state,
        output_energy: record.steps.iter().map(|st| st.output.norm_squared()).sum(),
        disturbance_energy: record
            .steps
            .iter()
            .map(|st| st.disturbance.norm_squared())
            .sum(),
    }
}

/// Run `trials` independent closed-loop trajectories and aggregate them in
/// fixed trial order.
pub fn monte_carlo<G: GainSchedule + Sync>(
    model: &MjlsModel,
    gains: &G,
    plan: &SimulationPlan,
    trials: usize,
) -> Result<SimulationSummary, SimError> {
    if trials == 0 {
        return Err(SimError::NoTrials);
    }
    validate_plan(model, plan)?;
    let stats: Vec<TrialStats> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
            rng.set_stream(trial as u64);
            run_trial(model, gains, plan, rng).map(|record| trial_stats(&record))
        })
        .collect::<Result<_, _>>()?;

    let mut mean_square_state = vec![0.0; plan.steps + 1];
    for stat in &stats {
        for (acc, &v) in mean_square_state.iter_mut().zip(stat.square_state.iter()) {
            *acc += v;
        }
    }
    for acc in &mut mean_square_state {
        *acc /= trials as f64;
    }

    let mean_output: f64 =
        stats.iter().map(|s| s.output_energy).sum::<f64>() / trials as f64;
    let mean_disturbance: f64 =
        stats.iter().map(|s| s.disturbance_energy).sum::<f64>() / trials as f64;
    let (empirical_gain, gain_standard_error) = if mean_disturbance > 0.0 {
        let gain = mean_output / mean_disturbance;
        let se = if trials >= 2 {
            // Delta method for a ratio of means: centered residuals of the
            // numerator against the fitted gain.
            let var: f64 = stats
                .iter()
                .map(|s| {
                    let resid = s.output_energy - gain * s.disturbance_energy;
                    resid * resid
                })
                .sum::<f64>()
                / (trials as f64 - 1.0);
            Some((var / trials as f64).sqrt() / mean_disturbance)
        } else {
            None
        };
        (Some(gain), se)
    } else {
        (None, None)
    };

    Ok(SimulationSummary {
        trials,
        steps: plan.steps,
        mean_square_state,
        empirical_gain,
        gain_standard_error,
        seed: plan.seed,
        loss: plan.loss,
    })
}
