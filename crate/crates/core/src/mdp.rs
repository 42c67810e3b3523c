//! Finite linear mixture MDPs.
//!
//! The transition kernel is `P(s'|s,a) = <phi(s'|s,a), theta*>` for a known
//! feature map `phi` and a parameter `theta*`. Rewards are known and
//! deterministic. Besides simulation, this module provides the true-model
//! oracles used to score regret: the optimal gain (relative value iteration)
//! and the diameter (minimal expected hitting times).

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `sum_{s'} P(s'|s,a) = 1`.
pub const NORMALIZATION_TOL: f64 = 1e-10;
/// Tolerance on each probability lying in `[0, 1]`.
pub const PROBABILITY_TOL: f64 = 1e-12;

/// Span tolerance used by [`LinearMixtureMdp::optimal_gain`].
pub const GAIN_SPAN_TOL: f64 = 1e-10;
/// Iteration cap for [`LinearMixtureMdp::optimal_gain`].
pub const GAIN_ITER_CAP: usize = 2_000_000;

/// A deterministic stationary policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StationaryPolicy {
    action_of: Vec<usize>,
}

impl StationaryPolicy {
    pub fn new(action_of: Vec<usize>, n_actions: usize) -> Result<Self> {
        if let Some(&bad) = action_of.iter().find(|&&a| a >= n_actions) {
            return Err(Error::Model(format!(
                "policy action {bad} out of range for {n_actions} actions"
            )));
        }
        Ok(Self { action_of })
    }

    /// The policy playing action 0 everywhere.
    pub fn constant(n_states: usize) -> Self {
        Self {
            action_of: vec![0; n_states],
        }
    }

    pub fn action(&self, s: usize) -> usize {
        self.action_of[s]
    }

    pub fn actions(&self) -> &[usize] {
        &self.action_of
    }
}

/// Closed-form features of the two-state lower-bound instance.
///
/// State 0 is `x0` (reward 0), state 1 is `x1` (reward 1). Action index bit
/// `i` set means coordinate `i` of the action vector is `+1`, otherwise `-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStateFeatures {
    pub d: usize,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
}

impl TwoStateFeatures {
    pub fn action_sign(action: usize, coord: usize) -> f64 {
        if (action >> coord) & 1 == 1 {
            1.0
        } else {
            -1.0
        }
    }

    fn feature_into(&self, s: usize, a: usize, next: usize, out: &mut [f64]) {
        let m = self.d - 1;
        let (scale, last) = match (s, next) {
            (0, 0) => (-self.alpha, self.beta * (1.0 - self.delta)),
            (0, _) => (self.alpha, self.beta * self.delta),
            (_, 0) => (0.0, self.beta * self.delta),
            _ => (0.0, self.beta * (1.0 - self.delta)),
        };
        for (i, o) in out[..m].iter_mut().enumerate() {
            *o = scale * Self::action_sign(a, i);
        }
        out[m] = last;
    }

    fn expectation_into(&self, f: &[f64], s: usize, a: usize, out: &mut [f64]) {
        let m = self.d - 1;
        let (f0, f1) = (f[0], f[1]);
        if s == 0 {
            let scale = self.alpha * (f1 - f0);
            for (i, o) in out[..m].iter_mut().enumerate() {
                *o = scale * Self::action_sign(a, i);
            }
            out[m] = self.beta * ((1.0 - self.delta) * f0 + self.delta * f1);
        } else {
            out[..m].iter_mut().for_each(|o| *o = 0.0);
            out[m] = self.beta * (self.delta * f0 + (1.0 - self.delta) * f1);
        }
    }
}

/// Storage for `phi(s'|s,a)`.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    /// Row-major `(s, a, s')` table of `d`-vectors.
    Dense(Vec<f64>),
    TwoState(TwoStateFeatures),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearMixtureMdp {
    n_states: usize,
    n_actions: usize,
    d: usize,
    features: FeatureMap,
    theta_star: Vec<f64>,
    b_bound: f64,
    rewards: Vec<f64>,
    diameter_bound: f64,
    transitions: Vec<f64>,
}

/// Output of [`LinearMixtureMdp::optimal_gain`].
#[derive(Debug, Clone, PartialEq)]
pub struct GainSolution {
    pub rho: f64,
    /// Relative bias, normalized so that `bias[0] = 0`.
    pub bias: Vec<f64>,
    pub policy: StationaryPolicy,
    pub iterations: usize,
}

/// Output of [`LinearMixtureMdp::estimate_diameter`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiameterEstimate {
    /// Exact value from dynamic programming on the true model; infinite when
    /// the model is not communicating.
    pub exact: f64,
    /// The ordered pair `(from, to)` attaining the maximum.
    pub worst_pair: (usize, usize),
    /// Mean of Monte-Carlo hitting times for the worst pair, if requested.
    pub monte_carlo: Option<f64>,
}

impl LinearMixtureMdp {
    /// Builds an MDP from a dense feature table, validating normalization.
    #[allow(clippy::too_many_arguments)]
    pub fn new_dense(
        n_states: usize,
        n_actions: usize,
        d: usize,
        features: Vec<f64>,
        theta_star: Vec<f64>,
        b_bound: f64,
        rewards: Vec<f64>,
        diameter_bound: f64,
    ) -> Result<Self> {
        if features.len() != n_states * n_actions * n_states * d {
            return Err(Error::Dimension {
                expected: n_states * n_actions * n_states * d,
                got: features.len(),
            });
        }
        Self::build(
            n_states,
            n_actions,
            d,
            FeatureMap::Dense(features),
            theta_star,
            b_bound,
            rewards,
            diameter_bound,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn build(
        n_states: usize,
        n_actions: usize,
        d: usize,
        features: FeatureMap,
        theta_star: Vec<f64>,
        b_bound: f64,
        rewards: Vec<f64>,
        diameter_bound: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || d == 0 {
            return Err(Error::Config(
                "n_states, n_actions and d must all be positive".into(),
            ));
        }
        if theta_star.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: theta_star.len(),
            });
        }
        if rewards.len() != n_states * n_actions {
            return Err(Error::Dimension {
                expected: n_states * n_actions,
                got: rewards.len(),
            });
        }
        if let Some(r) = rewards.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Model(format!("reward {r} outside [0, 1]")));
        }
        if !(b_bound > 0.0) {
            return Err(Error::Config(format!("B must be positive, got {b_bound}")));
        }
        if !(diameter_bound > 0.0) {
            return Err(Error::Config(format!(
                "diameter bound must be positive, got {diameter_bound}"
            )));
        }
        let norm = theta_star.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > b_bound * (1.0 + 1e-12) {
            return Err(Error::Model(format!(
                "||theta*|| = {norm} exceeds the bound B = {b_bound}"
            )));
        }
        if let FeatureMap::TwoState(ref f) = features {
            if n_states != 2 || f.d != d || n_actions != 1usize << (d - 1) {
                return Err(Error::Model("inconsistent two-state feature map".into()));
            }
        }
        let mut mdp = Self {
            n_states,
            n_actions,
            d,
            features,
            theta_star,
            b_bound,
            rewards,
            diameter_bound,
            transitions: Vec::new(),
        };
        mdp.transitions = mdp.compute_transitions()?;
        Ok(mdp)
    }

    fn compute_transitions(&self) -> Result<Vec<f64>> {
        let (ns, na) = (self.n_states, self.n_actions);
        let mut table = vec![0.0; ns * na * ns];
        let mut phi = vec![0.0; self.d];
        for s in 0..ns {
            for a in 0..na {
                let mut total = 0.0;
                for next in 0..ns {
                    self.feature_into(s, a, next, &mut phi);
                    let p: f64 = phi.iter().zip(&self.theta_star).map(|(x, y)| x * y).sum();
                    let p = clamp_probability(p).ok_or_else(|| {
                        Error::Model(format!("P({next}|{s},{a}) = {p} is not a probability"))
                    })?;
                    table[(s * na + a) * ns + next] = p;
                    total += p;
                }
                if (total - 1.0).abs() > NORMALIZATION_TOL {
                    return Err(Error::Model(format!(
                        "transition row ({s},{a}) sums to {total}, not 1"
                    )));
                }
            }
        }
        Ok(table)
    }

    /// Wraps a tabular MDP as a linear mixture with one-hot features over
    /// `(s, a, s')` triples; `theta*` is the flattened transition table.
    pub fn tabular(
        n_states: usize,
        n_actions: usize,
        transitions: &[f64],
        rewards: Vec<f64>,
        diameter_bound: f64,
    ) -> Result<Self> {
        let d = n_states * n_actions * n_states;
        if transitions.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: transitions.len(),
            });
        }
        let mut features = vec![0.0; d * d];
        for i in 0..d {
            features[i * d + i] = 1.0;
        }
        let b = transitions.iter().map(|p| p * p).sum::<f64>().sqrt().max(1e-12);
        Self::new_dense(
            n_states,
            n_actions,
            d,
            features,
            transitions.to_vec(),
            b,
            rewards,
            diameter_bound,
        )
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn theta_star(&self) -> &[f64] {
        &self.theta_star
    }

    pub fn b_bound(&self) -> f64 {
        self.b_bound
    }

    pub fn diameter_bound(&self) -> f64 {
        self.diameter_bound
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.features
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    /// Writes `phi(next|s,a)` into `out`.
    pub fn feature_into(&self, s: usize, a: usize, next: usize, out: &mut [f64]) {
        match &self.features {
            FeatureMap::Dense(table) => {
                let base = ((s * self.n_actions + a) * self.n_states + next) * self.d;
                out.copy_from_slice(&table[base..base + self.d]);
            }
            FeatureMap::TwoState(f) => f.feature_into(s, a, next, out),
        }
    }

    /// Writes `phi_F(s,a) = sum_{s'} phi(s'|s,a) F(s')` into `out`.
    pub fn feature_expectation_into(&self, f: &[f64], s: usize, a: usize, out: &mut [f64]) {
        match &self.features {
            FeatureMap::Dense(table) => {
                out.iter_mut().for_each(|o| *o = 0.0);
                let row = (s * self.n_actions + a) * self.n_states * self.d;
                for (next, &fv) in f.iter().enumerate() {
                    if fv == 0.0 {
                        continue;
                    }
                    let base = row + next * self.d;
                    for (o, x) in out.iter_mut().zip(&table[base..base + self.d]) {
                        *o += x * fv;
                    }
                }
            }
            FeatureMap::TwoState(tf) => tf.expectation_into(f, s, a, out),
        }
    }

    pub fn feature_expectation(&self, f: &[f64], s: usize, a: usize) -> Result<Vec<f64>> {
        if f.len() != self.n_states {
            return Err(Error::Dimension {
                expected: self.n_states,
                got: f.len(),
            });
        }
        let mut out = vec![0.0; self.d];
        self.feature_expectation_into(f, s, a, &mut out);
        Ok(out)
    }

    /// `P(next|s,a)`, validated at construction.
    pub fn transition_prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transitions[(s * self.n_actions + a) * self.n_states + next]
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.transitions[base..base + self.n_states]
    }

    /// `sum_{s'} P(s'|s,a) F(s')` on the true model.
    pub fn expected_value(&self, f: &[f64], s: usize, a: usize) -> f64 {
        self.transition_row(s, a).iter().zip(f).map(|(p, v)| p * v).sum()
    }

    /// Draws the next state by inverse CDF over `s'` in index order.
    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let row = self.transition_row(s, a);
        let mut cum = 0.0;
        let mut last_positive = 0;
        for (next, &p) in row.iter().enumerate() {
            if p > 0.0 {
                last_positive = next;
                cum += p;
                if u < cum {
                    return next;
                }
            }
        }
        last_positive
    }

    /// Gain, bias and greedy policy of the true model by damped relative
    /// value iteration (`u <- u + (Tu - u) / 2`), stopping once
    /// `span(Tu - u) <= GAIN_SPAN_TOL`.
    pub fn optimal_gain(&self) -> Result<GainSolution> {
        let ns = self.n_states;
        let mut u = vec![0.0; ns];
        let mut tu = vec![0.0; ns];
        let mut greedy = vec![0usize; ns];
        for iter in 1..=GAIN_ITER_CAP {
            self.bellman_backup(&u, &mut tu, &mut greedy);
            let (lo, hi) = min_max(tu.iter().zip(&u).map(|(a, b)| a - b));
            if hi - lo <= GAIN_SPAN_TOL {
                let rho = 0.5 * (hi + lo);
                let base = u[0];
                return Ok(GainSolution {
                    rho,
                    bias: u.iter().map(|v| v - base).collect(),
                    policy: StationaryPolicy::new(greedy, self.n_actions)?,
                    iterations: iter,
                });
            }
            for (ui, ti) in u.iter_mut().zip(&tu) {
                *ui += 0.5 * (ti - *ui);
            }
            let base = u[0];
            u.iter_mut().for_each(|v| *v -= base);
        }
        Err(Error::NonConvergence {
            what: "relative value iteration for the optimal gain",
            cap: GAIN_ITER_CAP,
        })
    }

    fn bellman_backup(&self, u: &[f64], out: &mut [f64], greedy: &mut [usize]) {
        for s in 0..self.n_states {
            let mut best = f64::NEG_INFINITY;
            for a in 0..self.n_actions {
                let q = self.reward(s, a) + self.expected_value(u, s, a);
                if q > best {
                    best = q;
                    greedy[s] = a;
                }
            }
            out[s] = best;
        }
    }

    /// Gain of a fixed stationary policy (unichain assumed).
    pub fn policy_gain(&self, policy: &StationaryPolicy) -> Result<f64> {
        let mu = self.stationary_distribution(policy)?;
        Ok(mu
            .iter()
            .enumerate()
            .map(|(s, m)| m * self.reward(s, policy.action(s)))
            .sum())
    }

    /// Stationary distribution of the chain induced by `policy`.
    pub fn stationary_distribution(&self, policy: &StationaryPolicy) -> Result<Vec<f64>> {
        let ns = self.n_states;
        // Solve mu (P - I) = 0 with the last equation replaced by sum(mu) = 1.
        let mut m = DMatrix::<f64>::zeros(ns, ns);
        for s in 0..ns {
            let row = self.transition_row(s, policy.action(s));
            for (next, &p) in row.iter().enumerate() {
                m[(next, s)] += p;
            }
            m[(s, s)] -= 1.0;
        }
        for s in 0..ns {
            m[(ns - 1, s)] = 1.0;
        }
        let mut rhs = DVector::<f64>::zeros(ns);
        rhs[ns - 1] = 1.0;
        let mu = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Model("policy chain is not unichain".into()))?;
        Ok(mu.iter().copied().collect())
    }

    /// Minimal expected hitting times to `target` from every state.
    fn hitting_times_to(&self, target: usize) -> Result<Vec<f64>> {
        let ns = self.n_states;
        let na = self.n_actions;
        // States that can reach `target` with positive probability.
        let mut reach = vec![false; ns];
        reach[target] = true;
        let mut queue = VecDeque::from([target]);
        while let Some(j) = queue.pop_front() {
            for s in 0..ns {
                if !reach[s] && (0..na).any(|a| self.transition_prob(s, a, j) > 0.0) {
                    reach[s] = true;
                    queue.push_back(s);
                }
            }
        }
        // Value iteration on h(s) = 1 + min_a sum P h, h(target) = 0.
        const DIVERGED: f64 = 1e12;
        const VI_CAP: usize = 10_000_000;
        let mut h = vec![0.0; ns];
        let mut next_h = vec![0.0; ns];
        let mut policy = vec![0usize; ns];
        let mut converged = false;
        for _ in 0..VI_CAP {
            let mut delta: f64 = 0.0;
            for s in 0..ns {
                if s == target || !reach[s] {
                    next_h[s] = if s == target { 0.0 } else { f64::INFINITY };
                    continue;
                }
                let mut best = f64::INFINITY;
                for a in 0..na {
                    let row = self.transition_row(s, a);
                    let mut v = 1.0;
                    for (j, &p) in row.iter().enumerate() {
                        if p > 0.0 {
                            v += p * h[j];
                        }
                    }
                    if v < best {
                        best = v;
                        policy[s] = a;
                    }
                }
                delta = delta.max((best - h[s]).abs() / (1.0 + best.abs()));
                next_h[s] = best;
            }
            std::mem::swap(&mut h, &mut next_h);
            if h.iter().any(|v| v.is_finite() && *v > DIVERGED) {
                return Ok(h.iter().map(|_| f64::INFINITY).collect());
            }
            if delta <= 1e-11 {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NonConvergence {
                what: "hitting-time value iteration",
                cap: VI_CAP,
            });
        }
        // Polish with exact policy iteration from the greedy policy.
        for _ in 0..100 {
            let Some(exact) = self.evaluate_hitting_policy(target, &reach, &policy) else {
                break;
            };
            h = exact;
            let mut changed = false;
            for s in 0..ns {
                if s == target || !reach[s] {
                    continue;
                }
                let cur = policy[s];
                let value = |a: usize| 1.0 + self.expected_value_finite(&h, s, a);
                let mut best = value(cur);
                for a in 0..na {
                    let v = value(a);
                    if v < best - 1e-12 * (1.0 + best.abs()) {
                        best = v;
                        policy[s] = a;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        Ok(h)
    }

    fn expected_value_finite(&self, h: &[f64], s: usize, a: usize) -> f64 {
        self.transition_row(s, a)
            .iter()
            .zip(h)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, v)| p * v)
            .sum()
    }

    fn evaluate_hitting_policy(
        &self,
        target: usize,
        reach: &[bool],
        policy: &[usize],
    ) -> Option<Vec<f64>> {
        let idx: Vec<usize> = (0..self.n_states)
            .filter(|&s| s != target && reach[s])
            .collect();
        let n = idx.len();
        let mut h = vec![f64::INFINITY; self.n_states];
        h[target] = 0.0;
        if n == 0 {
            return Some(h);
        }
        let mut m = DMatrix::<f64>::identity(n, n);
        for (r, &s) in idx.iter().enumerate() {
            let row = self.transition_row(s, policy[s]);
            for (c, &j) in idx.iter().enumerate() {
                m[(r, c)] -= row[j];
            }
            if row.iter().enumerate().any(|(j, &p)| p > 0.0 && j != target && !reach[j]) {
                return None;
            }
        }
        let sol = m.lu().solve(&DVector::from_element(n, 1.0))?;
        if sol.iter().any(|v| !v.is_finite() || *v < 1.0 - 1e-9) {
            return None;
        }
        for (r, &s) in idx.iter().enumerate() {
            h[s] = sol[r];
        }
        Some(h)
    }

    /// Diameter `max_{s != s'} min_pi E[T(s'|s, pi)]` of the true model.
    ///
    /// With `n_trials > 0`, also rolls out the minimizing policy for the worst
    /// pair as a Monte-Carlo cross-check.
    pub fn estimate_diameter<R: Rng + ?Sized>(
        &self,
        n_trials: usize,
        rng: &mut R,
    ) -> Result<DiameterEstimate> {
        let ns = self.n_states;
        let mut best = DiameterEstimate {
            exact: 0.0,
            worst_pair: (0, 0),
            monte_carlo: None,
        };
        let mut worst_times = Vec::new();
        for target in 0..ns {
            let h = self.hitting_times_to(target)?;
            for (from, &t) in h.iter().enumerate() {
                if from != target && t > best.exact {
                    best.exact = t;
                    best.worst_pair = (from, target);
                    worst_times = h.clone();
                }
            }
        }
        if n_trials > 0 && best.exact.is_finite() && ns > 1 {
            let (from, target) = best.worst_pair;
            // Greedy policy with respect to the exact hitting times.
            let policy: Vec<usize> = (0..ns)
                .map(|s| {
                    (0..self.n_actions)
                        .min_by(|&a, &b| {
                            let va = self.expected_value_finite(&worst_times, s, a);
                            let vb = self.expected_value_finite(&worst_times, s, b);
                            va.partial_cmp(&vb).unwrap()
                        })
                        .unwrap_or(0)
                })
                .collect();
            let cap = (1000.0 * best.exact).ceil() as u64 + 1000;
            let mut total = 0.0;
            for _ in 0..n_trials {
                let mut s = from;
                let mut steps = 0u64;
                while s != target && steps < cap {
                    s = self.sample_next(s, policy[s], rng);
                    steps += 1;
                }
                total += steps as f64;
            }
            best.monte_carlo = Some(total / n_trials as f64);
        }
        Ok(best)
    }

    /// Largest `||phi_F(s,a)||_2` over `n_samples` random `F: S -> [lo, hi]`
    /// per `(s, a)`.
    pub fn max_feature_norm<R: Rng + ?Sized>(
        &self,
        n_samples: usize,
        lo: f64,
        hi: f64,
        rng: &mut R,
    ) -> f64 {
        let mut f = vec![0.0; self.n_states];
        let mut out = vec![0.0; self.d];
        let mut worst: f64 = 0.0;
        for _ in 0..n_samples {
            f.iter_mut().for_each(|v| *v = rng.gen_range(lo..=hi));
            for s in 0..self.n_states {
                for a in 0..self.n_actions {
                    self.feature_expectation_into(&f, s, a, &mut out);
                    worst = worst.max(out.iter().map(|x| x * x).sum::<f64>().sqrt());
                }
            }
        }
        worst
    }

    pub fn to_fixture(&self) -> MdpFixture {
        let mut features = Vec::with_capacity(self.n_states * self.n_actions * self.n_states);
        let mut phi = vec![0.0; self.d];
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                for next in 0..self.n_states {
                    self.feature_into(s, a, next, &mut phi);
                    features.push(phi.clone());
                }
            }
        }
        MdpFixture {
            n_states: self.n_states,
            n_actions: self.n_actions,
            d: self.d,
            theta_star: self.theta_star.clone(),
            b: self.b_bound,
            diameter: self.diameter_bound,
            rewards: self
                .rewards
                .chunks(self.n_actions)
                .map(|c| c.to_vec())
                .collect(),
            features,
        }
    }
}

/// On-disk form of a generic linear mixture MDP (JSON).
///
/// `rewards[s][a]`; `features` lists `phi(s'|s,a)` in row-major `(s, a, s')`
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpFixture {
    pub n_states: usize,
    pub n_actions: usize,
    pub d: usize,
    pub theta_star: Vec<f64>,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "D")]
    pub diameter: f64,
    pub rewards: Vec<Vec<f64>>,
    pub features: Vec<Vec<f64>>,
}

impl MdpFixture {
    pub fn into_mdp(self) -> Result<LinearMixtureMdp> {
        if self.rewards.len() != self.n_states
            || self.rewards.iter().any(|r| r.len() != self.n_actions)
        {
            return Err(Error::Parse(format!(
                "reward table must be {} x {}",
                self.n_states, self.n_actions
            )));
        }
        if self.features.iter().any(|f| f.len() != self.d) {
            return Err(Error::Parse(format!("every feature must have length {}", self.d)));
        }
        LinearMixtureMdp::new_dense(
            self.n_states,
            self.n_actions,
            self.d,
            self.features.into_iter().flatten().collect(),
            self.theta_star,
            self.b,
            self.rewards.into_iter().flatten().collect(),
            self.diameter,
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fixture serializes")
    }
}

/// Reads and validates an MDP fixture file.
pub fn load_fixture(path: &Path) -> Result<LinearMixtureMdp> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    MdpFixture::from_json(&text)?.into_mdp()
}

fn clamp_probability(p: f64) -> Option<f64> {
    if !(-PROBABILITY_TOL..=1.0 + PROBABILITY_TOL).contains(&p) {
        return None;
    }
    Some(p.clamp(0.0, 1.0))
}

pub(crate) fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}
