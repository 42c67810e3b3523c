//! Reference learners: uniform random play, epsilon-greedy relative
//! Q-learning and tabular UCRL2.

use rand::{Rng, RngCore};

use crate::agent::{Agent, Phase};
use crate::error::{Error, Result};
use crate::evi::{default_max_iters, extended_value_iteration, EviOptions};
use crate::mdp::{LinearMixtureMdp, StationaryPolicy};

fn check_state(s: usize, n_states: usize) -> Result<()> {
    if s < n_states {
        Ok(())
    } else {
        Err(Error::Protocol(format!("state {s} out of range")))
    }
}

#[derive(Debug, Clone)]
pub struct RandomAgent {
    n_states: usize,
    n_actions: usize,
    phase: Phase,
}

impl RandomAgent {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            phase: Phase::Act,
        }
    }
}

impl Agent for RandomAgent {
    fn act(&mut self, s: usize, rng: &mut dyn RngCore) -> Result<usize> {
        self.phase.begin_act()?;
        check_state(s, self.n_states)?;
        let a = rng.gen_range(0..self.n_actions);
        self.phase = Phase::Observe { s, a };
        Ok(a)
    }

    fn observe(&mut self, s: usize, a: usize, _reward: f64, s_next: usize) -> Result<()> {
        self.phase.check_observe(s, a)?;
        check_state(s_next, self.n_states)?;
        self.phase = Phase::Act;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QLearningConfig {
    /// Exploration probability.
    pub eps_explore: f64,
    /// `H` in the step size `H / (n + H)`.
    pub step_h: f64,
    /// The reference pair whose value is subtracted as the gain estimate.
    pub reference: (usize, usize),
}

impl Default for QLearningConfig {
    fn default() -> Self {
        Self {
            eps_explore: 0.1,
            step_h: 10.0,
            reference: (0, 0),
        }
    }
}

/// Relative Q-learning with epsilon-greedy exploration.
#[derive(Debug, Clone)]
pub struct EpsGreedyQ {
    n_states: usize,
    n_actions: usize,
    cfg: QLearningConfig,
    q: Vec<f64>,
    visits: Vec<u64>,
    phase: Phase,
}

impl EpsGreedyQ {
    pub fn new(n_states: usize, n_actions: usize, cfg: QLearningConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&cfg.eps_explore) {
            return Err(Error::Config(format!(
                "eps_explore must lie in [0, 1], got {}",
                cfg.eps_explore
            )));
        }
        if !(cfg.step_h > 0.0) {
            return Err(Error::Config(format!("q_step_h must be positive, got {}", cfg.step_h)));
        }
        if cfg.reference.0 >= n_states || cfg.reference.1 >= n_actions {
            return Err(Error::Config(format!(
                "reference pair {:?} out of range",
                cfg.reference
            )));
        }
        Ok(Self {
            n_states,
            n_actions,
            cfg,
            q: vec![0.0; n_states * n_actions],
            visits: vec![0; n_states * n_actions],
            phase: Phase::Act,
        })
    }

    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.n_actions + a]
    }

    fn row(&self, s: usize) -> &[f64] {
        &self.q[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// First maximizing action.
    pub fn greedy(&self, s: usize) -> usize {
        let row = self.row(s);
        let mut best = 0;
        for (a, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = a;
            }
        }
        best
    }
}

impl Agent for EpsGreedyQ {
    fn act(&mut self, s: usize, rng: &mut dyn RngCore) -> Result<usize> {
        self.phase.begin_act()?;
        check_state(s, self.n_states)?;
        // With eps = 1 no coin is flipped, so the random stream matches
        // RandomAgent exactly.
        let explore = self.cfg.eps_explore >= 1.0 || rng.gen::<f64>() < self.cfg.eps_explore;
        let a = if explore {
            rng.gen_range(0..self.n_actions)
        } else {
            self.greedy(s)
        };
        self.phase = Phase::Observe { s, a };
        Ok(a)
    }

    fn observe(&mut self, s: usize, a: usize, reward: f64, s_next: usize) -> Result<()> {
        self.phase.check_observe(s, a)?;
        check_state(s_next, self.n_states)?;
        let idx = s * self.n_actions + a;
        self.visits[idx] += 1;
        let h = self.cfg.step_h;
        let eta = h / (self.visits[idx] as f64 + h);
        let (rs, ra) = self.cfg.reference;
        let reference = self.q(rs, ra);
        let next_max = self.row(s_next).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.q[idx] += eta * (reward + next_max - reference - self.q[idx]);
        self.phase = Phase::Act;
        Ok(())
    }
}

/// `max_{p in simplex, ||p - p_hat||_1 <= radius} <p, u>`, with `order`
/// listing states by decreasing `u`.
///
/// Moves up to `radius / 2` mass onto the best state and takes it from the
/// worst states first.
pub fn l1_optimistic_value(p_hat: &[f64], radius: f64, u: &[f64], order: &[usize]) -> f64 {
    let mut p = p_hat.to_vec();
    let best = order[0];
    p[best] = (p_hat[best] + radius / 2.0).min(1.0);
    let mut excess: f64 = p.iter().sum::<f64>() - 1.0;
    for &s in order.iter().rev() {
        if excess <= 0.0 {
            break;
        }
        if s == best {
            continue;
        }
        let take = p[s].min(excess);
        p[s] -= take;
        excess -= take;
    }
    p.iter().zip(u).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ucrl2Config {
    pub delta_conf: f64,
    /// The constant `c` in the radius `sqrt(c |S| log(2 |A| t_k / delta) / N)`.
    pub radius_const: f64,
    /// Overrides the EVI threshold `1 / sqrt(t_k)`.
    pub epsilon: Option<f64>,
    pub max_evi_iters: Option<usize>,
    pub evi_damping: f64,
}

impl Default for Ucrl2Config {
    fn default() -> Self {
        Self {
            delta_conf: 0.1,
            radius_const: 14.0,
            epsilon: None,
            max_evi_iters: None,
            evi_damping: 1.0,
        }
    }
}

/// Tabular UCRL2 with known rewards and L1 confidence sets on transitions.
#[derive(Debug, Clone)]
pub struct Ucrl2Tabular {
    n_states: usize,
    n_actions: usize,
    rewards: Vec<f64>,
    diameter: f64,
    cfg: Ucrl2Config,
    t: u64,
    counts: Vec<u64>,
    transitions: Vec<u64>,
    episode_counts: Vec<u64>,
    in_episode: Vec<u64>,
    policy: Option<StationaryPolicy>,
    episodes: usize,
    phase: Phase,
}

impl Ucrl2Tabular {
    pub fn new(mdp: &LinearMixtureMdp, cfg: Ucrl2Config) -> Result<Self> {
        if !(cfg.delta_conf > 0.0 && cfg.delta_conf < 1.0) {
            return Err(Error::Config(format!(
                "delta_conf must lie in (0, 1), got {}",
                cfg.delta_conf
            )));
        }
        if !(cfg.radius_const > 0.0) {
            return Err(Error::Config(format!(
                "radius constant must be positive, got {}",
                cfg.radius_const
            )));
        }
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        Ok(Self {
            n_states: ns,
            n_actions: na,
            rewards: mdp.rewards().to_vec(),
            diameter: mdp.diameter_bound(),
            cfg,
            t: 0,
            counts: vec![0; ns * na],
            transitions: vec![0; ns * na * ns],
            episode_counts: vec![0; ns * na],
            in_episode: vec![0; ns * na],
            policy: None,
            episodes: 0,
            phase: Phase::Act,
        })
    }

    pub fn radius(&self, s: usize, a: usize, t_k: u64) -> f64 {
        let n = self.episode_counts[s * self.n_actions + a].max(1) as f64;
        let log = (2.0 * self.n_actions as f64 * t_k as f64 / self.cfg.delta_conf).ln();
        (self.cfg.radius_const * self.n_states as f64 * log / n).sqrt()
    }

    /// Empirical transition row, uniform for unvisited pairs.
    pub fn empirical_row(&self, s: usize, a: usize) -> Vec<f64> {
        let idx = s * self.n_actions + a;
        let n = self.counts[idx];
        let row = &self.transitions[idx * self.n_states..(idx + 1) * self.n_states];
        if n == 0 {
            vec![1.0 / self.n_states as f64; self.n_states]
        } else {
            row.iter().map(|&c| c as f64 / n as f64).collect()
        }
    }

    fn start_episode(&mut self) -> Result<()> {
        self.episodes += 1;
        let t_k = self.t + 1;
        self.episode_counts.clone_from(&self.counts);
        self.in_episode.iter_mut().for_each(|v| *v = 0);
        let (ns, na) = (self.n_states, self.n_actions);
        let rows: Vec<Vec<f64>> = (0..ns * na).map(|i| self.empirical_row(i / na, i % na)).collect();
        let radii: Vec<f64> = (0..ns * na).map(|i| self.radius(i / na, i % na, t_k)).collect();
        let epsilon = self.cfg.epsilon.unwrap_or(1.0 / (t_k as f64).sqrt());
        let opts = EviOptions {
            epsilon,
            max_iters: self
                .cfg
                .max_evi_iters
                .unwrap_or_else(|| default_max_iters(self.diameter, epsilon)),
            damping: self.cfg.evi_damping,
        };
        let mut order: Vec<usize> = (0..ns).collect();
        let mut sorted_for: Vec<f64> = Vec::new();
        let rewards = &self.rewards;
        let res = extended_value_iteration(ns, na, &vec![0.0; ns], &opts, |u, _lo, _hi, s, a| {
            if sorted_for.as_slice() != u {
                sorted_for = u.to_vec();
                order.sort_by(|&i, &j| u[j].total_cmp(&u[i]).then(i.cmp(&j)));
            }
            let i = s * na + a;
            rewards[i] + l1_optimistic_value(&rows[i], radii[i], u, &order)
        })
        .map_err(|e| Error::Episode {
            episode: self.episodes,
            t: t_k,
            source: Box::new(e),
        })?;
        self.policy = Some(res.policy);
        Ok(())
    }
}

impl Agent for Ucrl2Tabular {
    fn act(&mut self, s: usize, _rng: &mut dyn RngCore) -> Result<usize> {
        self.phase.begin_act()?;
        check_state(s, self.n_states)?;
        let ended = match &self.policy {
            None => true,
            Some(p) => {
                let idx = s * self.n_actions + p.action(s);
                self.in_episode[idx] >= self.episode_counts[idx].max(1)
            }
        };
        if ended {
            self.start_episode()?;
        }
        let a = self.policy.as_ref().expect("episode started").action(s);
        self.phase = Phase::Observe { s, a };
        Ok(a)
    }

    fn observe(&mut self, s: usize, a: usize, _reward: f64, s_next: usize) -> Result<()> {
        self.phase.check_observe(s, a)?;
        check_state(s_next, self.n_states)?;
        let idx = s * self.n_actions + a;
        self.counts[idx] += 1;
        self.in_episode[idx] += 1;
        self.transitions[idx * self.n_states + s_next] += 1;
        self.t += 1;
        self.phase = Phase::Act;
        Ok(())
    }

    fn episode(&self) -> usize {
        self.episodes
    }
}
