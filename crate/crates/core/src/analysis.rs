//! Model analysis: weak-observability search, critical attenuation level,
//! and channel-parameter sweeps.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::model::{GilbertElliottChannel, MjlsModel};
use crate::numeric::{numerical_rank, DEFINITENESS_TOL};
use crate::riccati::{solve_infinite_horizon, FixedPointConfig, InfiniteHorizonOutcome};

/// Outcome of the jump-observability search.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityReport {
    pub observable: bool,
    /// Positive-probability mode path whose stacked observability matrix
    /// has full column rank, when one was found.
    pub witness_path: Option<Vec<usize>>,
    pub max_length_searched: usize,
}

/// Default path-length cap: state dimension times mode count.
pub fn default_observability_length(model: &MjlsModel) -> usize {
    model.state_dim() * model.num_modes()
}

/// Stack the observability blocks along a mode path:
/// `C(r_0); C(r_1)A(r_0); ...; C(r_{T-1}) A(r_{T-2})...A(r_0)`.
pub fn stacked_observability(model: &MjlsModel, path: &[usize]) -> DMatrix<f64> {
    let n = model.state_dim();
    let p = model.output_dim();
    let mut stacked = DMatrix::zeros(p * path.len(), n);
    let mut product = DMatrix::identity(n, n);
    for (t, &mode) in path.iter().enumerate() {
        let block = &model.modes()[mode].c * &product;
        stacked.view_mut((t * p, 0), (p, n)).copy_from(&block);
        product = &model.modes()[mode].a * product;
    }
    stacked
}

/// Breadth-first search over positive-probability mode paths of length at
/// most `max_len`, starting from every mode, for a path whose stacked
/// observability matrix reaches full column rank. Rank uses singular
/// values with a relative cutoff. Deterministic: shortest witness first,
/// ties broken by ascending mode indices.
pub fn weak_observability(model: &MjlsModel, max_len: usize) -> ObservabilityReport {
    let n = model.state_dim();
    let chain = model.chain();

    struct Node {
        path: Vec<usize>,
        /// Product A(r_last) ... A(r_0) for extending the stack.
        product: DMatrix<f64>,
        stacked: DMatrix<f64>,
    }

    let mut frontier: Vec<Node> = Vec::new();
    for start in 0..model.num_modes() {
        let path = vec![start];
        let stacked = stacked_observability(model, &path);
        if numerical_rank(&stacked, DEFINITENESS_TOL) == n {
            return ObservabilityReport {
                observable: true,
                witness_path: Some(path),
                max_length_searched: 1,
            };
        }
        frontier.push(Node {
            product: model.modes()[start].a.clone(),
            stacked,
            path,
        });
    }

    for length in 2..=max_len {
        let mut next = Vec::new();
        for node in &frontier {
            let last = *node.path.last().expect("nonempty path");
            for mode in 0..model.num_modes() {
                if chain.probability(last, mode) <= 0.0 {
                    continue;
                }
                let block = &model.modes()[mode].c * &node.product;
                let mut stacked =
                    DMatrix::zeros(node.stacked.nrows() + block.nrows(), n);
                stacked
                    .view_mut((0, 0), (node.stacked.nrows(), n))
                    .copy_from(&node.stacked);
                stacked
                    .view_mut((node.stacked.nrows(), 0), (block.nrows(), n))
                    .copy_from(&block);
                let mut path = node.path.clone();
                path.push(mode);
                if numerical_rank(&stacked, DEFINITENESS_TOL) == n {
                    return ObservabilityReport {
                        observable: true,
                        witness_path: Some(path),
                        max_length_searched: length,
                    };
                }
                next.push(Node {
                    product: &model.modes()[mode].a * &node.product,
                    stacked,
                    path,
                });
            }
        }
        frontier = next;
    }

    ObservabilityReport {
        observable: false,
        witness_path: None,
        max_length_searched: max_len,
    }
}

/// Bisection setup for the critical attenuation level.
#[derive(Debug, Clone, Copy)]
pub struct GammaSearchConfig {
    /// Lower bracket; the predicate must be false here.
    pub lo: f64,
    /// Initial upper bracket, doubled until the predicate holds.
    pub hi: f64,
    /// Width of the final bracket.
    pub tolerance: f64,
    /// Upper-bracket expansion cap; exceeding it means no finite critical
    /// level was found.
    pub max_hi: f64,
    pub fixed_point: FixedPointConfig,
}

impl Default for GammaSearchConfig {
    fn default() -> Self {
        Self {
            lo: 0.1,
            hi: 10.0,
            tolerance: 1e-3,
            max_hi: 1e6,
            fixed_point: FixedPointConfig::default(),
        }
    }
}

/// One predicate evaluation during the search, with the bracket that
/// resulted from it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BracketStep {
    pub probe: f64,
    pub feasible: bool,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone)]
pub enum GammaCriticalOutcome {
    /// Certified-feasible upper endpoint of the final bracket.
    Found { gamma_c: f64, log: Vec<BracketStep> },
    /// The predicate stayed false all the way to the expansion cap.
    NoFiniteGamma {
        max_gamma_tested: f64,
        log: Vec<BracketStep>,
    },
    /// The predicate already holds at `lo`, so `lo` does not bracket the
    /// critical level from below.
    InvalidLowerBracket { lo: f64, log: Vec<BracketStep> },
}

impl GammaCriticalOutcome {
    pub fn gamma_c(&self) -> Option<f64> {
        match self {
            GammaCriticalOutcome::Found { gamma_c, .. } => Some(*gamma_c),
            _ => None,
        }
    }

    pub fn log(&self) -> &[BracketStep] {
        match self {
            GammaCriticalOutcome::Found { log, .. }
            | GammaCriticalOutcome::NoFiniteGamma { log, .. }
            | GammaCriticalOutcome::InvalidLowerBracket { log, .. } => log,
        }
    }
}

/// True when every mode's disturbance map is square and full rank; then
/// concavity alone certifies convergence, and an iteration-budget timeout
/// with concavity intact still counts as feasible.
fn disturbance_map_square_full_rank(model: &MjlsModel) -> bool {
    let n = model.state_dim();
    model.disturbance_dim() == n
        && model
            .modes()
            .iter()
            .all(|md| numerical_rank(&md.d1, DEFINITENESS_TOL) == n)
}

fn feasibility_predicate(model: &MjlsModel, gamma: f64, config: &GammaSearchConfig) -> bool {
    let concavity_suffices = disturbance_map_square_full_rank(model);
    match solve_infinite_horizon(model, gamma, &config.fixed_point) {
        InfiniteHorizonOutcome::Converged(_) => true,
        InfiniteHorizonOutcome::Indeterminate { .. } => concavity_suffices,
        _ => false,
    }
}

/// Bisect for the critical attenuation level: the smallest gamma (within
/// `tolerance`) at which the infinite-horizon fixed point converges.
/// Returns the certified-feasible upper endpoint.
pub fn gamma_critical(model: &MjlsModel, config: &GammaSearchConfig) -> GammaCriticalOutcome {
    assert!(config.lo > 0.0 && config.hi > config.lo);
    let mut log = Vec::new();

    if feasibility_predicate(model, config.lo, config) {
        log.push(BracketStep {
            probe: config.lo,
            feasible: true,
            lo: config.lo,
            hi: config.hi,
        });
        return GammaCriticalOutcome::InvalidLowerBracket { lo: config.lo, log };
    }
    log.push(BracketStep {
        probe: config.lo,
        feasible: false,
        lo: config.lo,
        hi: config.hi,
    });

    let mut lo = config.lo;
    let mut hi = config.hi;
    while !feasibility_predicate(model, hi, config) {
        log.push(BracketStep {
            probe: hi,
            feasible: false,
            lo: hi,
            hi: hi * 2.0,
        });
        lo = hi;
        hi *= 2.0;
        if hi > config.max_hi {
            return GammaCriticalOutcome::NoFiniteGamma {
                max_gamma_tested: lo,
                log,
            };
        }
    }
    log.push(BracketStep {
        probe: hi,
        feasible: true,
        lo,
        hi,
    });

    while hi - lo > config.tolerance {
        let probe = 0.5 * (lo + hi);
        let feasible = feasibility_predicate(model, probe, config);
        if feasible {
            hi = probe;
        } else {
            lo = probe;
        }
        log.push(BracketStep {
            probe,
            feasible,
            lo,
            hi,
        });
    }
    GammaCriticalOutcome::Found { gamma_c: hi, log }
}

/// Which channel parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelField {
    StayGood,
    Recover,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepStatus {
    Found,
    NoFiniteGamma,
    InvalidLowerBracket,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub gamma_c: Option<f64>,
    pub status: SweepStatus,
}

/// One critical-level search per grid value of the selected channel
/// parameter. Points run in parallel and are reported in grid order;
/// per-point failures land in the table instead of aborting the sweep.
pub fn sweep(
    model: &MjlsModel,
    channel: usize,
    field: ChannelField,
    grid: &[f64],
    config: &GammaSearchConfig,
) -> Vec<SweepPoint> {
    assert!(channel < model.bank().len(), "channel index out of range");
    assert!(
        grid.iter().all(|&v| v > 0.0 && v <= 1.0),
        "grid values must be probabilities in (0, 1]"
    );
    grid.par_iter()
        .map(|&value| {
            let base = *model.bank().channel(channel);
            let replaced = match field {
                ChannelField::StayGood => GilbertElliottChannel {
                    stay_good: value,
                    ..base
                },
                ChannelField::Recover => GilbertElliottChannel {
                    recover: value,
                    ..base
                },
            };
            let modified = model.with_channel(channel, replaced);
            match gamma_critical(&modified, config) {
                GammaCriticalOutcome::Found { gamma_c, .. } => SweepPoint {
                    value,
                    gamma_c: Some(gamma_c),
                    status: SweepStatus::Found,
                },
                GammaCriticalOutcome::NoFiniteGamma { .. } => SweepPoint {
                    value,
                    gamma_c: None,
                    status: SweepStatus::NoFiniteGamma,
                },
                GammaCriticalOutcome::InvalidLowerBracket { .. } => SweepPoint {
                    value,
                    gamma_c: None,
                    status: SweepStatus::InvalidLowerBracket,
                },
            }
        })
        .collect()
}
