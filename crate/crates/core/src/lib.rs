//! Minimax (H∞) state-feedback control of discrete-time Markov jump linear
//! systems whose actuators sit behind independent two-state Markov
//! (Gilbert–Elliott) packet-loss channels with TCP-like acknowledgment.
//!
//! The crate is organized around the pipeline a control study follows:
//!
//! * [`model`]: problem instances (mode matrices, mode chain, channel bank,
//!   weights) and their validation.
//! * [`channels`]: combinatorics of actuator-subset outcomes: index sets,
//!   masks, conditional and stationary outcome distributions, expectation
//!   over outcomes.
//! * [`riccati`]: the coupled Riccati recursion: backward steps over the
//!   (mode, prior-outcome) grid, finite-horizon solutions with game values,
//!   the infinite-horizon fixed point, and gain lookup.
//! * [`analysis`]: weak-observability search, critical attenuation level
//!   search by bisection, and channel-parameter sweeps.
//! * [`sim`]: seeded closed-loop Monte-Carlo simulation of the controlled
//!   system, including mean-square traces and empirical L2 gains.
//! * [`oracle`]: independent brute-force references (grid saddle search,
//!   tree enumeration, a classical single-mode H∞ step) used to cross-check
//!   the solver. They deliberately share no solver code.

pub mod analysis;
pub mod channels;
pub mod model;
mod numeric;
pub mod oracle;
pub mod riccati;
pub mod sim;

pub use channels::{ChannelOutcomeDistribution, OutcomeIndex, Prior};
pub use model::{
    ChannelBank, GilbertElliottChannel, MarkovChain, MjlsModel, ModeData, ModelError,
    ValidationReport,
};
pub use riccati::{
    FiniteHorizonOutcome, FiniteHorizonSolution, FixedPointConfig, FixedPointSolution,
    GainSchedule, InfiniteHorizonOutcome, StageCell, StageSolution,
};
pub use sim::{DisturbancePolicy, LossStrategy, SimulationPlan, SimulationSummary, TrajectoryRecord};
