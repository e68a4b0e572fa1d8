//! Actuator-subset outcome combinatorics.
//!
//! With `m` channels, a stage outcome is a subset of actuators that
//! received their command, encoded as an integer whose bit `h` (LSB =
//! channel 0) is set when channel `h` delivered. This module provides the
//! index-set/mask view of an outcome, the per-channel stationary delivery
//! probability, the joint distribution over the `2^m` outcomes conditional
//! on the previous outcome (or stationary when no prior is known), and the
//! expectation of outcome-indexed matrices under such a distribution.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::model::{ChannelBank, GilbertElliottChannel};

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("outcome index {index} out of range for {channels} channels")]
    OutcomeOutOfRange { index: usize, channels: usize },
    #[error("outcome-indexed matrices must share one shape")]
    ShapeMismatch,
    #[error("expected {expected} outcome entries, got {got}")]
    OutcomeCount { expected: usize, got: usize },
}

/// Index of one actuator-subset outcome; bit `h` set means channel `h`
/// delivered. Bit 0 is channel 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OutcomeIndex(usize);

impl OutcomeIndex {
    pub fn new(index: usize, channels: usize) -> Result<Self, ChannelError> {
        if index >= 1 << channels {
            Err(ChannelError::OutcomeOutOfRange { index, channels })
        } else {
            Ok(Self(index))
        }
    }

    pub fn get(self) -> usize {
        self.0
    }

    pub fn contains(self, channel: usize) -> bool {
        self.0 >> channel & 1 == 1
    }

    /// All outcomes for `channels` channels in ascending index order.
    pub fn all(channels: usize) -> impl Iterator<Item = OutcomeIndex> {
        (0..1usize << channels).map(OutcomeIndex)
    }

    /// The all-delivered outcome.
    pub fn full(channels: usize) -> OutcomeIndex {
        OutcomeIndex((1 << channels) - 1)
    }
}

/// What the controller knows about the previous stage's outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prior {
    /// No acknowledgment yet (stage 0): per-channel stationary law.
    Stationary,
    /// Acknowledged outcome of the previous stage.
    Outcome(OutcomeIndex),
}

/// Set of delivered channel indices together with the diagonal 0/1 mask.
pub fn index_set_and_mask(
    index: OutcomeIndex,
    channels: usize,
) -> Result<(Vec<usize>, DMatrix<f64>), ChannelError> {
    if index.get() >= 1 << channels {
        return Err(ChannelError::OutcomeOutOfRange {
            index: index.get(),
            channels,
        });
    }
    let set: Vec<usize> = (0..channels).filter(|&h| index.contains(h)).collect();
    let mut mask = DMatrix::zeros(channels, channels);
    for &h in &set {
        mask[(h, h)] = 1.0;
    }
    Ok((set, mask))
}

/// Diagonal 0/1 mask of an outcome, unchecked index.
pub(crate) fn outcome_mask(index: usize, channels: usize) -> DMatrix<f64> {
    let mut mask = DMatrix::zeros(channels, channels);
    for h in 0..channels {
        if index >> h & 1 == 1 {
            mask[(h, h)] = 1.0;
        }
    }
    mask
}

/// Stationary delivery probability of one channel,
/// `recover / (1 + recover - stay_good)`.
pub fn stationary_success(channel: &GilbertElliottChannel) -> f64 {
    channel.recover / (1.0 + channel.recover - channel.stay_good)
}

/// Probability vector over the `2^m` actuator-subset outcomes at one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelOutcomeDistribution {
    probs: Vec<f64>,
}

impl ChannelOutcomeDistribution {
    pub fn prob(&self, index: usize) -> f64 {
        self.probs[index]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Joint outcome distribution given the previous outcome (channels are
/// independent). With `Prior::Outcome(j)`, channel `h` delivers with
/// probability `stay_good` if `h` delivered at the previous stage and
/// `recover` otherwise; with `Prior::Stationary` every channel uses its
/// stationary delivery probability.
pub fn outcome_distribution(bank: &ChannelBank, prior: Prior) -> ChannelOutcomeDistribution {
    let m = bank.len();
    let success: Vec<f64> = bank
        .channels()
        .iter()
        .enumerate()
        .map(|(h, ch)| match prior {
            Prior::Stationary => stationary_success(ch),
            Prior::Outcome(j) => {
                if j.contains(h) {
                    ch.stay_good
                } else {
                    ch.recover
                }
            }
        })
        .collect();
    let probs = (0..1usize << m)
        .map(|l| {
            (0..m)
                .map(|h| {
                    if l >> h & 1 == 1 {
                        success[h]
                    } else {
                        1.0 - success[h]
                    }
                })
                .product()
        })
        .collect();
    ChannelOutcomeDistribution { probs }
}

/// Expected value of an outcome-indexed family of matrices,
/// `sum_l probs[l] * Y(l)`.
pub fn expect_over_outcomes(
    dist: &ChannelOutcomeDistribution,
    values: &[DMatrix<f64>],
) -> Result<DMatrix<f64>, ChannelError> {
    if values.len() != dist.len() {
        return Err(ChannelError::OutcomeCount {
            expected: dist.len(),
            got: values.len(),
        });
    }
    let shape = values[0].shape();
    if values.iter().any(|v| v.shape() != shape) {
        return Err(ChannelError::ShapeMismatch);
    }
    let mut acc = DMatrix::zeros(shape.0, shape.1);
    for (value, &p) in values.iter().zip(dist.probs.iter()) {
        acc += value * p;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn bank(specs: &[(f64, f64)]) -> ChannelBank {
        ChannelBank::new(
            specs
                .iter()
                .map(|&(v, mu)| GilbertElliottChannel::new(v, mu).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn index_set_and_mask_hand_cases() {
        let (set, mask) = index_set_and_mask(OutcomeIndex::new(0, 2).unwrap(), 2).unwrap();
        assert!(set.is_empty());
        assert_eq!(mask, DMatrix::zeros(2, 2));

        let (set, mask) = index_set_and_mask(OutcomeIndex::new(3, 2).unwrap(), 2).unwrap();
        assert_eq!(set, vec![0, 1]);
        assert_eq!(mask, DMatrix::identity(2, 2));

        // Bit 1 set: channel 1 only, mask diag(0, 1).
        let (set, mask) = index_set_and_mask(OutcomeIndex::new(2, 2).unwrap(), 2).unwrap();
        assert_eq!(set, vec![1]);
        assert_eq!(mask, DMatrix::from_row_slice(2, 2, &[0., 0., 0., 1.]));
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        assert!(OutcomeIndex::new(4, 2).is_err());
        assert_eq!(
            index_set_and_mask(OutcomeIndex::new(3, 2).unwrap(), 1),
            Err(ChannelError::OutcomeOutOfRange {
                index: 3,
                channels: 1
            })
        );
    }

    #[test]
    fn stationary_success_closed_form() {
        let perfect = GilbertElliottChannel::new(1.0, 1.0).unwrap();
        assert_relative_eq!(stationary_success(&perfect), 1.0);

        // 0.89 / (1 + 0.89 - 0.88) evaluated by hand.
        let ch = GilbertElliottChannel::new(0.88, 0.89).unwrap();
        assert_relative_eq!(
            stationary_success(&ch),
            0.8811881188118812,
            epsilon = 1e-15
        );

        // Equal probabilities make the loss state forget history.
        let q = GilbertElliottChannel::new(0.37, 0.37).unwrap();
        assert_relative_eq!(stationary_success(&q), 0.37, epsilon = 1e-15);
    }

    #[test]
    fn perfect_single_channel_is_a_point_mass() {
        let d = outcome_distribution(&bank(&[(1.0, 1.0)]), Prior::Stationary);
        assert_relative_eq!(d.prob(0), 0.0);
        assert_relative_eq!(d.prob(1), 1.0);
    }

    #[test]
    fn two_fair_channels_are_uniform() {
        let d = outcome_distribution(
            &bank(&[(0.5, 0.9), (0.5, 0.9)]),
            Prior::Outcome(OutcomeIndex::new(3, 2).unwrap()),
        );
        for l in 0..4 {
            assert_relative_eq!(d.prob(l), 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn conditional_distribution_hand_product() {
        // Channel 0 delivered previously (uses stay_good = 0.9); channel 1
        // did not (uses recover = 0.2). Full vector by enumeration.
        let d = outcome_distribution(
            &bank(&[(0.9, 0.5), (0.5, 0.2)]),
            Prior::Outcome(OutcomeIndex::new(1, 2).unwrap()),
        );
        let expected = [0.1 * 0.8, 0.9 * 0.8, 0.1 * 0.2, 0.9 * 0.2];
        for (l, &e) in expected.iter().enumerate() {
            assert_relative_eq!(d.prob(l), e, epsilon = 1e-15);
        }
        assert_relative_eq!(d.prob(1), 0.72, epsilon = 1e-15);
    }

    #[test]
    fn expectation_hand_cases() {
        let point = ChannelOutcomeDistribution {
            probs: vec![0.0, 0.0, 1.0, 0.0],
        };
        let values: Vec<DMatrix<f64>> = (0..4)
            .map(|l| DMatrix::from_element(2, 2, l as f64))
            .collect();
        assert_relative_eq!(
            expect_over_outcomes(&point, &values).unwrap(),
            values[2].clone()
        );

        let uniform = ChannelOutcomeDistribution {
            probs: vec![0.25; 4],
        };
        let constant: Vec<DMatrix<f64>> = (0..4).map(|_| DMatrix::identity(3, 3) * 7.0).collect();
        assert_relative_eq!(
            expect_over_outcomes(&uniform, &constant).unwrap(),
            DMatrix::identity(3, 3) * 7.0
        );

        let scaled: Vec<DMatrix<f64>> = (0..4)
            .map(|l| DMatrix::identity(2, 2) * l as f64)
            .collect();
        assert_relative_eq!(
            expect_over_outcomes(&uniform, &scaled).unwrap(),
            DMatrix::identity(2, 2) * 1.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn expectation_rejects_mixed_shapes() {
        let uniform = ChannelOutcomeDistribution {
            probs: vec![0.5, 0.5],
        };
        let values = vec![DMatrix::zeros(2, 2), DMatrix::zeros(2, 3)];
        assert_eq!(
            expect_over_outcomes(&uniform, &values),
            Err(ChannelError::ShapeMismatch)
        );
    }

    fn arb_channel() -> impl Strategy<Value = (f64, f64)> {
        (0.01f64..=1.0, 0.01f64..=1.0)
    }

    proptest! {
        #[test]
        fn distribution_sums_to_one(
            specs in prop::collection::vec(arb_channel(), 1..=4),
            prior_bits in any::<usize>(),
            stationary in any::<bool>(),
        ) {
            let b = bank(&specs);
            let m = b.len();
            let prior = if stationary {
                Prior::Stationary
            } else {
                Prior::Outcome(OutcomeIndex::new(prior_bits % (1 << m), m).unwrap())
            };
            let d = outcome_distribution(&b, prior);
            let sum: f64 = d.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(d.probs().iter().all(|&p| p >= 0.0));
        }

        #[test]
        fn marginals_match_per_channel_probability(
            specs in prop::collection::vec(arb_channel(), 1..=4),
            prior_bits in any::<usize>(),
            stationary in any::<bool>(),
        ) {
            let b = bank(&specs);
            let m = b.len();
            let prior = if stationary {
                Prior::Stationary
            } else {
                Prior::Outcome(OutcomeIndex::new(prior_bits % (1 << m), m).unwrap())
            };
            let d = outcome_distribution(&b, prior);
            for h in 0..m {
                let marginal: f64 = (0..1usize << m)
                    .filter(|l| l >> h & 1 == 1)
                    .map(|l| d.prob(l))
                    .sum();
                let expected = match prior {
                    Prior::Stationary => stationary_success(b.channel(h)),
                    Prior::Outcome(j) => {
                        if j.contains(h) {
                            b.channel(h).stay_good
                        } else {
                            b.channel(h).recover
                        }
                    }
                };
                prop_assert!((marginal - expected).abs() <= 1e-12);
            }
        }

        #[test]
        fn stationary_law_is_a_fixed_point(spec in arb_channel()) {
            // Push the stationary marginal through one channel transition.
            let ch = GilbertElliottChannel::new(spec.0, spec.1).unwrap();
            let s = stationary_success(&ch);
            let next = s * ch.stay_good + (1.0 - s) * ch.recover;
            prop_assert!((next - s).abs() <= 1e-12);
        }

        #[test]
        fn expectation_is_linear(
            probs_seed in prop::collection::vec(0.01f64..1.0, 4),
            alpha in -3.0f64..3.0,
        ) {
            let total: f64 = probs_seed.iter().sum();
            let dist = ChannelOutcomeDistribution {
                probs: probs_seed.iter().map(|p| p / total).collect(),
            };
            let ys: Vec<DMatrix<f64>> = (0..4)
                .map(|l| DMatrix::from_fn(2, 2, |r, c| (l + r * 2 + c) as f64))
                .collect();
            let zs: Vec<DMatrix<f64>> = (0..4)
                .map(|l| DMatrix::from_fn(2, 2, |r, c| (l as f64) - (r as f64) * (c as f64)))
                .collect();
            let combined: Vec<DMatrix<f64>> = ys
                .iter()
                .zip(zs.iter())
                .map(|(y, z)| y + z * alpha)
                .collect();
            let lhs = expect_over_outcomes(&dist, &combined).unwrap();
            let rhs = expect_over_outcomes(&dist, &ys).unwrap()
                + expect_over_outcomes(&dist, &zs).unwrap() * alpha;
            prop_assert!((lhs - rhs).amax() <= 1e-12);
        }
    }
}
