//! The two-state, `2^(d-1)`-action lower-bound instance.
//!
//! From `x0` (reward 0) action `a in {-1, +1}^(d-1)` moves to `x1` with
//! probability `delta + <a, theta>`; from `x1` (reward 1) every action moves
//! back to `x0` with probability `delta`. The instance is embedded as a
//! `d`-dimensional linear mixture MDP with parameter
//! `theta_tilde = (theta / alpha, 1 / beta)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{FeatureMap, LinearMixtureMdp, StationaryPolicy, TwoStateFeatures};

/// Constant in front of `d / sqrt(D T)` in the gap formula:
/// `1 / (45 * sqrt(2 ln 2 / 5))`.
pub fn gap_constant() -> f64 {
    1.0 / (45.0 * (2.0 * std::f64::consts::LN_2 / 5.0).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardInstanceParams {
    pub d: usize,
    /// Target diameter `D`.
    pub diameter: f64,
    /// Horizon `T` the gap is tuned for.
    pub horizon: f64,
    /// Parameter bound `B`.
    pub b_bound: f64,
    /// `delta = 1 / D`.
    pub delta: f64,
    /// Gap `Delta` after clamping.
    pub gap: f64,
    /// Gap given by the formula before clamping.
    pub gap_formula: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl HardInstanceParams {
    pub fn new(d: usize, diameter: f64, horizon: f64, b_bound: f64) -> Result<Self> {
        if d < 2 {
            return Err(Error::Config(format!("hard.d must be at least 2, got {d}")));
        }
        if d > 24 {
            return Err(Error::Config(format!(
                "hard.d = {d} gives 2^{} actions; at most 24 is supported",
                d - 1
            )));
        }
        if !(b_bound > 1.0) {
            return Err(Error::Config(format!("hard.B must exceed 1, got {b_bound}")));
        }
        if !(diameter >= 1.25) || !diameter.is_finite() {
            return Err(Error::Config(format!(
                "hard.D must be finite and at least 1.25 so that delta + delta/4 <= 1, got {diameter}"
            )));
        }
        let min_horizon = 16.0 * (d * d) as f64 * diameter / 2025.0;
        if !(horizon >= min_horizon) || !horizon.is_finite() {
            return Err(Error::Config(format!(
                "hard.T = {horizon} violates T >= 16 d^2 D / 2025 = {min_horizon}"
            )));
        }
        let delta = 1.0 / diameter;
        let gap_formula = gap_constant() * d as f64 / (diameter * horizon).sqrt();
        let gap = gap_formula.min(delta / 4.0).min(b_bound.sqrt() - 1.0);
        let m = (d - 1) as f64;
        Ok(Self {
            d,
            diameter,
            horizon,
            b_bound,
            delta,
            gap,
            gap_formula,
            alpha: (gap / (m * (1.0 + gap))).sqrt(),
            beta: (1.0 / (1.0 + gap)).sqrt(),
        })
    }

    pub fn n_actions(&self) -> usize {
        1 << (self.d - 1)
    }

    /// `theta` for a sign pattern, entries `+-Delta / (d - 1)`.
    pub fn theta(&self, signs: &SignPattern) -> Vec<f64> {
        let mag = self.gap / (self.d - 1) as f64;
        signs.0.iter().map(|&p| if p { mag } else { -mag }).collect()
    }

    /// Embedded parameter `(theta / alpha, 1 / beta)`.
    pub fn theta_tilde(&self, signs: &SignPattern) -> Vec<f64> {
        let mut t: Vec<f64> = self.theta(signs).iter().map(|v| v / self.alpha).collect();
        t.push(1.0 / self.beta);
        t
    }
}

/// Signs of the coordinates of `theta`; `true` is positive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignPattern(pub Vec<bool>);

impl SignPattern {
    /// Uniform draw from `{-1, +1}^(d-1)`.
    pub fn from_seed(d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self((0..d.saturating_sub(1)).map(|_| rng.gen()).collect())
    }

    /// Index of the action whose coordinates all match these signs.
    pub fn matching_action(&self) -> usize {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &p)| p)
            .fold(0, |acc, (i, _)| acc | (1 << i))
    }
}

/// Builds the embedded linear mixture MDP.
pub fn build_hard_instance(
    params: &HardInstanceParams,
    signs: &SignPattern,
) -> Result<LinearMixtureMdp> {
    if signs.0.len() != params.d - 1 {
        return Err(Error::Dimension {
            expected: params.d - 1,
            got: signs.0.len(),
        });
    }
    let n_actions = params.n_actions();
    let mut rewards = vec![0.0; 2 * n_actions];
    rewards[n_actions..].iter_mut().for_each(|r| *r = 1.0);
    LinearMixtureMdp::build(
        2,
        n_actions,
        params.d,
        FeatureMap::TwoState(TwoStateFeatures {
            d: params.d,
            alpha: params.alpha,
            beta: params.beta,
            delta: params.delta,
        }),
        params.theta_tilde(signs),
        params.b_bound,
        rewards,
        params.diameter,
    )
}

/// `(delta + Delta) / (2 delta + Delta)`.
pub fn two_state_gain(delta: f64, gap: f64) -> f64 {
    (delta + gap) / (2.0 * delta + gap)
}

/// Stationary distribution `[delta, delta + Delta] / (2 delta + Delta)` of
/// the optimal policy.
pub fn two_state_stationary(delta: f64, gap: f64) -> [f64; 2] {
    let z = 2.0 * delta + gap;
    [delta / z, (delta + gap) / z]
}

pub fn hard_instance_gain(params: &HardInstanceParams) -> f64 {
    two_state_gain(params.delta, params.gap)
}

pub fn stationary_distribution(params: &HardInstanceParams) -> [f64; 2] {
    two_state_stationary(params.delta, params.gap)
}

/// The optimal stationary policy (sign-matching action in `x0`).
pub fn optimal_policy(params: &HardInstanceParams, signs: &SignPattern) -> StationaryPolicy {
    StationaryPolicy::new(vec![signs.matching_action(), 0], params.n_actions())
        .expect("sign-matching action is in range")
}
