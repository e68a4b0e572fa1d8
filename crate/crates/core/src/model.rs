//! Problem instances: mode dynamics, the mode-switching Markov chain, the
//! actuator channel bank, and cost weights: plus validation of the
//! standing assumptions the solver relies on.
//!
//! Constructors reject structural defects (dimension mismatches); semantic
//! assumptions (stochasticity, irreducibility, definiteness, ...) are
//! reported as pass/fail findings by [`validate_model`] so a caller can see
//! everything that is wrong at once.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::numeric::{
    eigen_range, is_positive_definite, is_positive_semidefinite, numerical_rank, symmetrize,
    DEFINITENESS_TOL,
};

/// Tolerance for exact-zero structure (row sums, cross terms).
const EXACT_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("transition matrix must be square and nonempty, got {rows}x{cols}")]
    ChainShape { rows: usize, cols: usize },
    #[error("transition matrix entry ({row},{col}) = {value} is not a probability")]
    ChainEntry { row: usize, col: usize, value: f64 },
    #[error("channel {index}: {field} = {value} is not a probability in [0, 1]")]
    ChannelEntry {
        index: usize,
        field: &'static str,
        value: f64,
    },
    #[error("channel bank must contain at least one channel")]
    EmptyBank,
    #[error("model must contain at least one mode")]
    NoModes,
    #[error("mode {mode}: {matrix} is {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    ModeShape {
        mode: usize,
        matrix: &'static str,
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("chain has {chain} states but {modes} modes were supplied")]
    ModeCount { chain: usize, modes: usize },
    #[error("channel bank drives {channels} actuators but B has {inputs} columns")]
    ChannelCount { channels: usize, inputs: usize },
    #[error("terminal weight is {rows}x{cols}, expected {n}x{n}")]
    TerminalShape { rows: usize, cols: usize, n: usize },
    #[error("matrix entry is not finite")]
    NonFinite,
}

/// Finite, irreducible, aperiodic mode-switching chain (semantic properties
/// checked by validation, not construction).
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    transition: DMatrix<f64>,
}

impl MarkovChain {
    pub fn new(transition: DMatrix<f64>) -> Result<Self, ModelError> {
        let (rows, cols) = transition.shape();
        if rows == 0 || rows != cols {
            return Err(ModelError::ChainShape { rows, cols });
        }
        for row in 0..rows {
            for col in 0..cols {
                let value = transition[(row, col)];
                if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                    return Err(ModelError::ChainEntry { row, col, value });
                }
            }
        }
        Ok(Self { transition })
    }

    pub fn num_states(&self) -> usize {
        self.transition.nrows()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn probability(&self, from: usize, to: usize) -> f64 {
        self.transition[(from, to)]
    }

    /// Strong connectivity of the digraph of strictly positive entries.
    pub fn is_irreducible(&self) -> bool {
        let n = self.num_states();
        (0..n).all(|start| {
            let mut seen = vec![false; n];
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(v) = stack.pop() {
                for w in (0..n).filter(|&w| self.transition[(v, w)] > 0.0) {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            seen.iter().all(|&s| s)
        })
    }

    /// Aperiodicity via the gcd of self-return lengths up to `num_states`
    /// steps; every simple cycle fits in that window, so the gcd equals the
    /// chain period when the chain is irreducible.
    pub fn is_aperiodic(&self) -> bool {
        let n = self.num_states();
        let adj: Vec<Vec<bool>> = (0..n)
            .map(|i| (0..n).map(|j| self.transition[(i, j)] > 0.0).collect())
            .collect();
        let mut reach = adj.clone();
        let mut g: usize = 0;
        for len in 1..=n {
            for (v, row) in reach.iter().enumerate() {
                if row[v] {
                    g = gcd(g, len);
                }
            }
            if len < n {
                reach = bool_mat_mul(&reach, &adj);
            }
        }
        g == 1
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if a == 0 {
        b
    } else {
        gcd(b % a, a)
    }
}

fn bool_mat_mul(a: &[Vec<bool>], b: &[Vec<bool>]) -> Vec<Vec<bool>> {
    let n = a.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).any(|k| a[i][k] && b[k][j]))
                .collect()
        })
        .collect()
}

/// Two-state Markov packet-loss channel. `stay_good` is the probability of
/// a delivery following a delivery, `recover` the probability of a delivery
/// following a loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GilbertElliottChannel {
    pub stay_good: f64,
    pub recover: f64,
}

impl GilbertElliottChannel {
    pub fn new(stay_good: f64, recover: f64) -> Result<Self, ModelError> {
        for (field, value) in [("stay_good", stay_good), ("recover", recover)] {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(ModelError::ChannelEntry {
                    index: 0,
                    field,
                    value,
                });
            }
        }
        Ok(Self { stay_good, recover })
    }
}

/// Ordered bank of channels; channel `h` drives actuator `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelBank {
    channels: Vec<GilbertElliottChannel>,
}

impl ChannelBank {
    pub fn new(channels: Vec<GilbertElliottChannel>) -> Result<Self, ModelError> {
        if channels.is_empty() {
            return Err(ModelError::EmptyBank);
        }
        Ok(Self { channels })
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn channel(&self, index: usize) -> &GilbertElliottChannel {
        &self.channels[index]
    }

    pub fn channels(&self) -> &[GilbertElliottChannel] {
        &self.channels
    }

    /// Number of distinct actuator-subset outcomes, `2^len`.
    pub fn outcome_count(&self) -> usize {
        1 << self.channels.len()
    }
}

/// Matrices of one mode: state update `A`, input map `B`, output map `C`,
/// input feedthrough `D`, disturbance map `D1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeData {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub d1: DMatrix<f64>,
}

/// A full problem instance. Per-mode state weights `C'C` and control
/// weights `D'D` are derived at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MjlsModel {
    modes: Vec<ModeData>,
    chain: MarkovChain,
    bank: ChannelBank,
    terminal_weight: DMatrix<f64>,
    state_weights: Vec<DMatrix<f64>>,
    control_weights: Vec<DMatrix<f64>>,
}

impl MjlsModel {
    pub fn new(
        modes: Vec<ModeData>,
        chain: MarkovChain,
        bank: ChannelBank,
        terminal_weight: DMatrix<f64>,
    ) -> Result<Self, ModelError> {
        let first = modes.first().ok_or(ModelError::NoModes)?;
        let n = first.a.nrows();
        let m = first.b.ncols();
        let p = first.c.nrows();
        let s = first.d1.ncols();
        for (index, mode) in modes.iter().enumerate() {
            let shapes: [(&'static str, &DMatrix<f64>, usize, usize); 5] = [
                ("A", &mode.a, n, n),
                ("B", &mode.b, n, m),
                ("C", &mode.c, p, n),
                ("D", &mode.d, p, m),
                ("D1", &mode.d1, n, s),
            ];
            for (name, matrix, er, ec) in shapes {
                if matrix.shape() != (er, ec) {
                    return Err(ModelError::ModeShape {
                        mode: index,
                        matrix: name,
                        rows: matrix.nrows(),
                        cols: matrix.ncols(),
                        expected_rows: er,
                        expected_cols: ec,
                    });
                }
                if matrix.iter().any(|v| !v.is_finite()) {
                    return Err(ModelError::NonFinite);
                }
            }
        }
        if chain.num_states() != modes.len() {
            return Err(ModelError::ModeCount {
                chain: chain.num_states(),
                modes: modes.len(),
            });
        }
        if bank.len() != m {
            return Err(ModelError::ChannelCount {
                channels: bank.len(),
                inputs: m,
            });
        }
        if terminal_weight.shape() != (n, n) {
            return Err(ModelError::TerminalShape {
                rows: terminal_weight.nrows(),
                cols: terminal_weight.ncols(),
                n,
            });
        }
        if terminal_weight.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        let state_weights = modes.iter().map(|md| md.c.transpose() * &md.c).collect();
        let control_weights = modes.iter().map(|md| md.d.transpose() * &md.d).collect();
        Ok(Self {
            modes,
            chain,
            bank,
            terminal_weight,
            state_weights,
            control_weights,
        })
    }

    pub fn modes(&self) -> &[ModeData] {
        &self.modes
    }

    pub fn chain(&self) -> &MarkovChain {
        &self.chain
    }

    pub fn bank(&self) -> &ChannelBank {
        &self.bank
    }

    pub fn terminal_weight(&self) -> &DMatrix<f64> {
        &self.terminal_weight
    }

    /// State weight `W(i) = C(i)'C(i)`.
    pub fn state_weight(&self, mode: usize) -> &DMatrix<f64> {
        &self.state_weights[mode]
    }

    /// Control weight `R(i) = D(i)'D(i)`.
    pub fn control_weight(&self, mode: usize) -> &DMatrix<f64> {
        &self.control_weights[mode]
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn state_dim(&self) -> usize {
        self.modes[0].a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.modes[0].b.ncols()
    }

    pub fn disturbance_dim(&self) -> usize {
        self.modes[0].d1.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.modes[0].c.nrows()
    }

    pub fn outcome_count(&self) -> usize {
        self.bank.outcome_count()
    }

    /// Copy of the model with channel `index` replaced; used by parameter
    /// sweeps.
    pub fn with_channel(&self, index: usize, channel: GilbertElliottChannel) -> MjlsModel {
        let mut out = self.clone();
        out.bank.channels[index] = channel;
        out
    }
}

/// One named validation check.
#[derive(Debug, Clone, PartialEq)]
pub struct Finding {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Pass/fail findings, one per standing assumption.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn findings(&self) -> &[Finding] {
        &self.findings
    }

    pub fn passed(&self) -> bool {
        self.findings.iter().all(|f| f.passed)
    }

    pub fn finding(&self, name: &str) -> Option<&Finding> {
        self.findings.iter().find(|f| f.name == name)
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for finding in &self.findings {
            writeln!(
                f,
                "[{}] {}: {}",
                if finding.passed { "pass" } else { "FAIL" },
                finding.name,
                finding.detail
            )?;
        }
        Ok(())
    }
}

/// Check every standing assumption of the control problem and report each
/// as a finding. Pure: the report depends only on the model.
pub fn validate_model(model: &MjlsModel) -> ValidationReport {
    let chain = model.chain();
    let mut findings = Vec::new();

    let mut worst_row_error: f64 = 0.0;
    for row in 0..chain.num_states() {
        let sum: f64 = (0..chain.num_states())
            .map(|col| chain.probability(row, col))
            .sum();
        worst_row_error = worst_row_error.max((sum - 1.0).abs());
    }
    findings.push(Finding {
        name: "row_stochastic",
        passed: worst_row_error <= EXACT_TOL,
        detail: format!("worst |row sum - 1| = {worst_row_error:.3e}"),
    });

    let irreducible = chain.is_irreducible();
    findings.push(Finding {
        name: "irreducible",
        passed: irreducible,
        detail: if irreducible {
            "positive-entry digraph is strongly connected".into()
        } else {
            "positive-entry digraph is not strongly connected".into()
        },
    });

    let aperiodic = chain.is_aperiodic();
    findings.push(Finding {
        name: "aperiodic",
        passed: aperiodic,
        detail: if aperiodic {
            "gcd of self-return lengths is 1".into()
        } else {
            "gcd of self-return lengths exceeds 1".into()
        },
    });

    let n = model.state_dim();
    let singular_a: Vec<usize> = model
        .modes()
        .iter()
        .enumerate()
        .filter(|(_, md)| numerical_rank(&md.a, DEFINITENESS_TOL) < n)
        .map(|(i, _)| i)
        .collect();
    findings.push(Finding {
        name: "a_full_rank",
        passed: singular_a.is_empty(),
        detail: if singular_a.is_empty() {
            "every A(i) has full rank".into()
        } else {
            format!("rank-deficient A in modes {singular_a:?}")
        },
    });

    let mut worst_cross: f64 = 0.0;
    for md in model.modes() {
        let cross = md.c.transpose() * &md.d;
        worst_cross = worst_cross.max(cross.amax());
    }
    findings.push(Finding {
        name: "c_d_orthogonal",
        passed: worst_cross <= EXACT_TOL,
        detail: format!("worst |C'D| entry = {worst_cross:.3e}"),
    });

    let indefinite_r: Vec<usize> = (0..model.num_modes())
        .filter(|&i| !is_positive_definite(&symmetrize(model.control_weight(i))))
        .collect();
    findings.push(Finding {
        name: "r_positive_definite",
        passed: indefinite_r.is_empty(),
        detail: if indefinite_r.is_empty() {
            "every D'D is positive definite".into()
        } else {
            format!("D'D not positive definite in modes {indefinite_r:?}")
        },
    });

    let w_psd = is_positive_semidefinite(&symmetrize(model.terminal_weight()));
    let dominated: Vec<usize> = (0..model.num_modes())
        .filter(|&i| {
            let diff = symmetrize(&(model.state_weight(i) - model.terminal_weight()));
            !is_positive_semidefinite(&diff)
        })
        .collect();
    findings.push(Finding {
        name: "weight_ordering",
        passed: w_psd && dominated.is_empty(),
        detail: if !w_psd {
            format!(
                "terminal weight is not PSD (min eigenvalue {:.3e})",
                eigen_range(&symmetrize(model.terminal_weight())).min
            )
        } else if dominated.is_empty() {
            "terminal weight is PSD and dominated by every C'C".into()
        } else {
            format!("C'C - W not PSD in modes {dominated:?}")
        },
    });

    let bad_channels: Vec<usize> = model
        .bank()
        .channels()
        .iter()
        .enumerate()
        .filter(|(_, ch)| ch.stay_good <= 0.0 || ch.recover <= 0.0)
        .map(|(i, _)| i)
        .collect();
    findings.push(Finding {
        name: "channel_probabilities",
        passed: bad_channels.is_empty(),
        detail: if bad_channels.is_empty() {
            "every channel delivers with positive probability from both states".into()
        } else {
            format!("zero delivery probability in channels {bad_channels:?}")
        },
    });

    ValidationReport { findings }
}
