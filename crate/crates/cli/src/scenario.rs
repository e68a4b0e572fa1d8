//! Scenario file schema: one JSON document describing the model, the game
//! configuration, and optional simulation/sweep/output sections. Matrices
//! are row-major nested arrays so files diff cleanly and port anywhere.

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

use mjls_hinf_core::analysis::{ChannelField, GammaSearchConfig};
use mjls_hinf_core::model::{
    ChannelBank, GilbertElliottChannel, MarkovChain, MjlsModel, ModeData,
};
use mjls_hinf_core::riccati::FixedPointConfig;
use mjls_hinf_core::sim::{DisturbancePolicy, LossStrategy};

pub const FORMAT_VERSION: u32 = 1;

/// Default cap on channel count: outcome vectors are dense with `2^m`
/// entries.
pub const DEFAULT_MAX_CHANNELS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub format_version: u32,
    pub model: ModelSpec,
    #[serde(default)]
    pub game: GameSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<OutputsSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub modes: Vec<ModeSpec>,
    /// Row-stochastic mode transition matrix.
    pub chain: Vec<Vec<f64>>,
    pub channels: Vec<ChannelSpec>,
    /// Terminal state weight; omitted means zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_weight: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub d1: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub stay_good: f64,
    pub recover: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub infinite: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_search: Option<GammaSearchSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_point: Option<FixedPointSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaSearchSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_hi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedPointSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub x0: Vec<f64>,
    pub r0: usize,
    pub steps: usize,
    pub trials: usize,
    pub seed: u64,
    pub disturbance: DisturbanceSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_strategy: Option<LossSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisturbanceSpec {
    Zero,
    /// Sampled table, zero beyond its length.
    Samples { values: Vec<Vec<f64>> },
    WorstCase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpec {
    ZeroInput,
    HoldInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Channel index whose parameter varies.
    pub channel: usize,
    pub field: SweepFieldSpec,
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepFieldSpec {
    StayGood,
    Recover,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsSpec {
    pub dir: String,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        bail!("{what}: matrix must have at least one row");
    }
    let cols = rows[0].len();
    if cols == 0 {
        bail!("{what}: matrix must have at least one column");
    }
    if rows.iter().any(|r| r.len() != cols) {
        bail!("{what}: ragged rows (all rows must have {cols} entries)");
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), cols, &flat))
}

impl Scenario {
    pub fn from_path(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read scenario file {}", path.display()))?;
        let scenario: Scenario = serde_json::from_str(&text).map_err(|err| {
            anyhow!(
                "{}:{}:{}: {}",
                path.display(),
                err.line(),
                err.column(),
                err
            )
        })?;
        if scenario.format_version != FORMAT_VERSION {
            bail!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                scenario.format_version
            );
        }
        Ok(scenario)
    }

    /// Build the core model from the scenario's model section.
    pub fn build_model(&self, max_channels: usize) -> Result<MjlsModel> {
        if self.model.channels.len() > max_channels {
            bail!(
                "{} channels exceed the cap of {max_channels} (dense 2^m outcome vectors); \
                 raise --max-channels deliberately if intended",
                self.model.channels.len()
            );
        }
        let mut modes = Vec::new();
        for (i, spec) in self.model.modes.iter().enumerate() {
            modes.push(ModeData {
                a: matrix(&spec.a, &format!("modes[{i}].a"))?,
                b: matrix(&spec.b, &format!("modes[{i}].b"))?,
                c: matrix(&spec.c, &format!("modes[{i}].c"))?,
                d: matrix(&spec.d, &format!("modes[{i}].d"))?,
                d1: matrix(&spec.d1, &format!("modes[{i}].d1"))?,
            });
        }
        let chain = MarkovChain::new(matrix(&self.model.chain, "chain")?)?;
        let channels = self
            .model
            .channels
            .iter()
            .map(|c| GilbertElliottChannel::new(c.stay_good, c.recover))
            .collect::<Result<Vec<_>, _>>()?;
        let bank = ChannelBank::new(channels)?;
        let n = modes
            .first()
            .map(|md: &ModeData| md.a.nrows())
            .unwrap_or(0);
        let terminal = match &self.model.terminal_weight {
            Some(rows) => matrix(rows, "terminal_weight")?,
            None => DMatrix::zeros(n, n),
        };
        Ok(MjlsModel::new(modes, chain, bank, terminal)?)
    }

    pub fn gamma_search_config(&self, tol_override: Option<f64>) -> GammaSearchConfig {
        let mut config = GammaSearchConfig {
            fixed_point: self.fixed_point_config(None),
            ..GammaSearchConfig::default()
        };
        if let Some(spec) = &self.game.gamma_search {
            if let Some(lo) = spec.lo {
                config.lo = lo;
            }
            if let Some(hi) = spec.hi {
                config.hi = hi;
            }
            if let Some(tol) = spec.tolerance {
                config.tolerance = tol;
            }
            if let Some(max_hi) = spec.max_hi {
                config.max_hi = max_hi;
            }
        }
        if let Some(tol) = tol_override {
            config.tolerance = tol;
        }
        config
    }

    pub fn fixed_point_config(&self, tol_override: Option<f64>) -> FixedPointConfig {
        let mut config = FixedPointConfig::default();
        if let Some(spec) = &self.game.fixed_point {
            if let Some(tol) = spec.tolerance {
                config.tolerance = tol;
            }
            if let Some(iters) = spec.max_iterations {
                config.max_iterations = iters;
            }
            if let Some(bound) = spec.divergence_bound {
                config.divergence_bound = bound;
            }
        }
        if let Some(tol) = tol_override {
            config.tolerance = tol;
        }
        config
    }
}

impl SimulationSpec {
    pub fn x0_vector(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.x0)
    }

    pub fn disturbance_policy(&self) -> DisturbancePolicy {
        match &self.disturbance {
            DisturbanceSpec::Zero => DisturbancePolicy::Zero,
            DisturbanceSpec::Samples { values } => DisturbancePolicy::Waveform(
                values
                    .iter()
                    .map(|row| DVector::from_row_slice(row))
                    .collect(),
            ),
            DisturbanceSpec::WorstCase => DisturbancePolicy::WorstCase,
        }
    }

    pub fn loss_strategy(&self) -> LossStrategy {
        match self.loss_strategy {
            None | Some(LossSpec::ZeroInput) => LossStrategy::ZeroInput,
            Some(LossSpec::HoldInput) => LossStrategy::HoldInput,
        }
    }
}

impl SweepFieldSpec {
    pub fn to_field(self) -> ChannelField {
        match self {
            SweepFieldSpec::StayGood => ChannelField::StayGood,
            SweepFieldSpec::Recover => ChannelField::Recover,
        }
    }
}
