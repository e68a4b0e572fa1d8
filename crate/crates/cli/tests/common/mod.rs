//! Fixtures shared by the CLI integration tests and the acceptance suite.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use mjls_hinf_cli::scenario::{
    ChannelSpec, DisturbanceSpec, GameSpec, ModeSpec, ModelSpec, OutputsSpec, Scenario,
    SimulationSpec, SweepSpec,
};
use mjls_hinf_core::model::{
    ChannelBank, GilbertElliottChannel, MarkovChain, MjlsModel, ModeData,
};
use mjls_hinf_core::riccati::{solve_finite_horizon, FiniteHorizonOutcome};

/// The three-state, two-mode, two-channel demo instance with the given
/// per-channel (stay_good, recover) probabilities packed as
/// [v1, v2, mu1, mu2]. Terminal weight zero.
pub fn example_model(probs: [f64; 4]) -> MjlsModel {
    let [v1, v2, m1, m2] = probs;
    let a1 = DMatrix::from_row_slice(3, 3, &[1., 2., 1., 0., 1., 1., 1., 0., 2.]);
    let a2 = DMatrix::from_row_slice(3, 3, &[1., 0., 1., 0., 1., 0., 1., 0., 2.]);
    let b = DMatrix::from_row_slice(3, 2, &[1., 2., 1., 0., 0., 1.]);
    let c = DMatrix::from_row_slice(3, 3, &[0., 0., 0., 0., 0., 0., 1., 1., 1.]);
    let d1 = DMatrix::from_row_slice(3, 1, &[1., 1., 1.]);
    let d_mode1 = DMatrix::from_row_slice(3, 2, &[1., 0., 0., 1., 0., 0.]);
    let d_mode2 = DMatrix::from_row_slice(3, 2, &[1., 1., 0., 1., 0., 0.]);
    let modes = vec![
        ModeData {
            a: a1,
            b: b.clone(),
            c: c.clone(),
            d: d_mode1,
            d1: d1.clone(),
        },
        ModeData {
            a: a2,
            b,
            c,
            d: d_mode2,
            d1,
        },
    ];
    let chain = MarkovChain::new(DMatrix::from_row_slice(2, 2, &[0.45, 0.55, 0.4, 0.6])).unwrap();
    let bank = ChannelBank::new(vec![
        GilbertElliottChannel::new(v1, m1).unwrap(),
        GilbertElliottChannel::new(v2, m2).unwrap(),
    ])
    .unwrap();
    MjlsModel::new(modes, chain, bank, DMatrix::zeros(3, 3)).unwrap()
}

fn mode_spec(md: &ModeData) -> ModeSpec {
    let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..m.nrows())
            .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
            .collect()
    };
    ModeSpec {
        a: rows(&md.a),
        b: rows(&md.b),
        c: rows(&md.c),
        d: rows(&md.d),
        d1: rows(&md.d1),
    }
}

/// Scenario document for the demo instance.
pub fn example_scenario(probs: [f64; 4], game: GameSpec, simulation: Option<SimulationSpec>) -> Scenario {
    let model = example_model(probs);
    Scenario {
        format_version: 1,
        model: ModelSpec {
            modes: model.modes().iter().map(mode_spec).collect(),
            chain: vec![vec![0.45, 0.55], vec![0.4, 0.6]],
            channels: vec![
                ChannelSpec {
                    stay_good: probs[0],
                    recover: probs[2],
                },
                ChannelSpec {
                    stay_good: probs[1],
                    recover: probs[3],
                },
            ],
            terminal_weight: None,
        },
        game,
        simulation,
        sweep: Some(SweepSpec {
            channel: 0,
            field: mjls_hinf_cli::scenario::SweepFieldSpec::StayGood,
            grid: vec![0.8, 0.85, 0.9],
        }),
        outputs: Some(OutputsSpec { dir: ".".into() }),
    }
}

pub fn default_simulation(steps: usize, trials: usize, seed: u64) -> SimulationSpec {
    SimulationSpec {
        x0: vec![0.1, 0.2, 0.3],
        r0: 0,
        steps,
        trials,
        seed,
        disturbance: DisturbanceSpec::Zero,
        loss_strategy: None,
    }
}

/// The damped oscillation used by the state-decay and gain studies:
/// `w_k = sin(0.2 pi k) cos(0.2 pi k) exp(-k/2)`.
pub fn damped_waveform(steps: usize) -> Vec<DVector<f64>> {
    (0..steps)
        .map(|k| {
            let t = k as f64;
            let phase = 0.2 * std::f64::consts::PI * t;
            DVector::from_element(1, phase.sin() * phase.cos() * (-t / 2.0).exp())
        })
        .collect()
}

pub fn damped_waveform_rows(steps: usize) -> Vec<Vec<f64>> {
    damped_waveform(steps).iter().map(|v| vec![v[0]]).collect()
}

/// Deterministic random instances within the tiny envelope (n, m, modes,
/// s all at most 2), structured so every validation finding passes:
/// C stacks a square block over zero rows and D stacks zero rows over a
/// nonsingular block, keeping C'D = 0 and D'D positive definite.
pub fn random_tiny_model(rng: &mut ChaCha8Rng) -> MjlsModel {
    let n = rng.random_range(1..=2usize);
    let m = rng.random_range(1..=2usize);
    let num_modes = rng.random_range(1..=2usize);
    let s = rng.random_range(1..=2usize);

    let modes: Vec<ModeData> = (0..num_modes)
        .map(|_| {
            let a: DMatrix<f64> = loop {
                let cand = DMatrix::<f64>::from_fn(n, n, |_, _| rng.random_range(-1.2..1.2));
                if cand.determinant().abs() >= 0.1 {
                    break cand;
                }
            };
            let d2: DMatrix<f64> = loop {
                let cand = DMatrix::<f64>::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
                if cand.determinant().abs() >= 0.3 {
                    break cand;
                }
            };
            let c1 = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let mut c = DMatrix::zeros(n + m, n);
            c.view_mut((0, 0), (n, n)).copy_from(&c1);
            let mut d = DMatrix::zeros(n + m, m);
            d.view_mut((n, 0), (m, m)).copy_from(&d2);
            ModeData {
                a,
                b: DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0)),
                c,
                d,
                d1: DMatrix::from_fn(n, s, |_, _| rng.random_range(-1.0..1.0)),
            }
        })
        .collect();

    let transition = DMatrix::from_fn(num_modes, num_modes, |_, _| rng.random_range(0.05..1.0));
    let transition = DMatrix::from_fn(num_modes, num_modes, |r, c| {
        transition[(r, c)] / transition.row(r).sum()
    });
    let chain = MarkovChain::new(transition).unwrap();
    let bank = ChannelBank::new(
        (0..m)
            .map(|_| {
                GilbertElliottChannel::new(
                    rng.random_range(0.3..1.0),
                    rng.random_range(0.3..1.0),
                )
                .unwrap()
            })
            .collect(),
    )
    .unwrap();
    MjlsModel::new(modes, chain, bank, DMatrix::zeros(n, n)).unwrap()
}

pub const GAMMA_LADDER: [f64; 8] = [1.5, 3.0, 6.0, 12.0, 50.0, 200.0, 1e3, 1e5];

/// Smallest ladder gamma at which the finite-horizon game is feasible.
pub fn feasible_gamma(model: &MjlsModel, horizon: usize) -> Option<f64> {
    GAMMA_LADDER.iter().copied().find(|&gamma| {
        matches!(
            solve_finite_horizon(model, gamma, horizon),
            FiniteHorizonOutcome::Feasible(_)
        )
    })
}

pub fn random_state(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}
