//! UCRL2-VTR: optimistic episodes over a value-targeted regression ellipsoid.
//!
//! The agent regresses the realized next-state value `w(s')` on the feature
//! expectation `phi_w(s, a)`. An episode ends once the log-determinant of the
//! Gram matrix has grown by `ln 2` since the episode began; the next policy
//! comes from extended value iteration over the ellipsoid built at that
//! moment. The Bernstein variant reweights each sample by an upper estimate
//! of the conditional variance of `w(s')`, learned by a second regression on
//! `w(s')^2`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, Phase};
use crate::error::{Error, Result};
use crate::evi::{default_max_iters, run_evi_with, ConfidenceEllipsoid, EviOptions, EviResult};
use crate::mdp::{LinearMixtureMdp, StationaryPolicy};
use crate::numerics::PsdLedger;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bonus {
    Hoeffding,
    Bernstein,
}

impl fmt::Display for Bonus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Bonus::Hoeffding => "hoeffding",
            Bonus::Bernstein => "bernstein",
        })
    }
}

impl FromStr for Bonus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hoeffding" => Ok(Bonus::Hoeffding),
            "bernstein" => Ok(Bonus::Bernstein),
            other => Err(Error::Config(format!(
                "unknown bonus {other:?} (expected hoeffding or bernstein)"
            ))),
        }
    }
}

/// `D sqrt(d log((lambda + t D^2) / (delta lambda))) + sqrt(lambda) B`.
pub fn hoeffding_radius(t: f64, d: usize, lambda: f64, delta: f64, diameter: f64, b: f64) -> f64 {
    let inner = (lambda + t * diameter * diameter) / (delta * lambda);
    diameter * (d as f64 * inner.ln()).max(0.0).sqrt() + lambda.sqrt() * b
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernsteinRadii {
    /// Radius of the variance-weighted ellipsoid around `theta_hat`.
    pub hat: f64,
    /// Looser radius for the same ellipsoid, used in the variance error term.
    pub check: f64,
    /// Radius around `theta_tilde`, the second-moment estimate.
    pub tilde: f64,
}

/// The three Bernstein radii after `t` observations. All equal
/// `sqrt(lambda) B` at `t = 0`.
pub fn bernstein_radii(t: f64, d: usize, lambda: f64, delta: f64, diameter: f64, b: f64) -> BernsteinRadii {
    let floor = lambda.sqrt() * b;
    if t <= 0.0 {
        return BernsteinRadii {
            hat: floor,
            check: floor,
            tilde: floor,
        };
    }
    let df = d as f64;
    let l = (4.0 * t * t / delta).ln();
    let g = (1.0 + t / (4.0 * lambda)).ln();
    let d2 = diameter * diameter;
    let g_tilde = (1.0 + t * d2 / (4.0 * df * lambda)).ln();
    BernsteinRadii {
        hat: 8.0 * (df * g * l).sqrt() + 4.0 * df.sqrt() * l + floor,
        check: 8.0 * df * (g * l).sqrt() + 4.0 * df.sqrt() * l + floor,
        tilde: 2.0 * d2 * (df * g_tilde * l).sqrt() + d2 * l + floor,
    }
}

/// Upper bound on the number of episodes of the Hoeffding variant.
pub fn hoeffding_episode_bound(d: usize, lambda: f64, horizon: f64, diameter: f64) -> f64 {
    d as f64 * ((2.0 * lambda + 2.0 * horizon * diameter * diameter) / lambda).ln()
}

/// Upper bound on the number of episodes of the Bernstein variant.
pub fn bernstein_episode_bound(d: usize, lambda: f64, horizon: f64) -> f64 {
    2.0 * d as f64 * (1.0 + horizon * d as f64 / lambda).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VtrConfig {
    pub bonus: Bonus,
    pub lambda: f64,
    /// EVI stopping threshold.
    pub epsilon: f64,
    pub delta_conf: f64,
    /// Overrides the default EVI iteration cap.
    pub max_evi_iters: Option<usize>,
    pub evi_damping: f64,
    /// Multiplier on the radius of the planning ellipsoid; `1.0` is the
    /// radius the confidence bound guarantees.
    pub radius_scale: f64,
}

impl VtrConfig {
    /// `lambda = 1 / B^2`, `epsilon = 1 / sqrt(T)`, `delta = 0.1`.
    pub fn new(bonus: Bonus, mdp: &LinearMixtureMdp, horizon: u64) -> Self {
        let b = mdp.b_bound();
        Self {
            bonus,
            lambda: 1.0 / (b * b),
            epsilon: 1.0 / (horizon.max(1) as f64).sqrt(),
            delta_conf: 0.1,
            max_evi_iters: None,
            evi_damping: 1.0,
            radius_scale: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("lambda", self.lambda)?;
        positive("epsilon", self.epsilon)?;
        positive("delta_conf", self.delta_conf)?;
        positive("radius_scale", self.radius_scale)?;
        if !(self.delta_conf < 1.0) {
            return Err(Error::Config(format!(
                "delta_conf must lie in (0, 1), got {}",
                self.delta_conf
            )));
        }
        if !(self.evi_damping > 0.0 && self.evi_damping <= 1.0) {
            return Err(Error::Config(format!(
                "evi damping must lie in (0, 1], got {}",
                self.evi_damping
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeRecord {
    pub k: usize,
    pub t_k: u64,
    pub radius: f64,
    pub log_det: f64,
    pub evi_iterations: usize,
    pub rho_k: f64,
    pub final_span_gap: f64,
    pub value_span: f64,
    /// `max_s |(u^(i+1) - u^(i))(s) - rho_k|`.
    pub rho_deviation: f64,
    /// Whether the ellipsoid contained the true parameter; only known when
    /// diagnostics are enabled.
    pub coverage: Option<bool>,
}

/// Variance estimate for one state-action pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceEstimate {
    pub v_bar: f64,
    pub e_t: f64,
    pub sigma_bar: f64,
}

/// Per-step values recorded in diagnostic mode (Bernstein only).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub t: u64,
    pub estimate: VarianceEstimate,
    /// `Var_{s' ~ P(.|s,a)} w(s')` under the true parameter.
    pub true_variance: f64,
    /// Containment of the true parameter in the hat, check and tilde
    /// ellipsoids at this step.
    pub events: [bool; 3],
}

#[derive(Debug, Clone)]
struct SecondMoment {
    gram: PsdLedger,
    target: Vec<f64>,
    theta: Vec<f64>,
}

pub struct Ucrl2Vtr {
    mdp: Arc<LinearMixtureMdp>,
    cfg: VtrConfig,
    d: usize,
    /// Number of observations absorbed so far; the current step is `t + 1`.
    t: u64,
    gram: PsdLedger,
    target: Vec<f64>,
    theta_hat: Vec<f64>,
    second: Option<SecondMoment>,
    episode_log_det: f64,
    conf: Option<ConfidenceEllipsoid>,
    policy: StationaryPolicy,
    w: Vec<f64>,
    w_sq: Vec<f64>,
    last_evi: Option<EviResult>,
    episodes: Vec<EpisodeRecord>,
    phase: Phase,
    theta_star: Option<Vec<f64>>,
    record_trace: bool,
    trace: Vec<StepDiagnostics>,
    phi: Vec<f64>,
    phi_sq: Vec<f64>,
}

impl fmt::Debug for Ucrl2Vtr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Ucrl2Vtr")
            .field("bonus", &self.cfg.bonus)
            .field("t", &self.t)
            .field("episodes", &self.episodes.len())
            .finish()
    }
}

impl Ucrl2Vtr {
    pub fn new(mdp: Arc<LinearMixtureMdp>, cfg: VtrConfig) -> Result<Self> {
        cfg.validate()?;
        let d = mdp.dim();
        let ns = mdp.n_states();
        let second = match cfg.bonus {
            Bonus::Hoeffding => None,
            Bonus::Bernstein => Some(SecondMoment {
                gram: PsdLedger::new(d, cfg.lambda)?,
                target: vec![0.0; d],
                theta: vec![0.0; d],
            }),
        };
        Ok(Self {
            gram: PsdLedger::new(d, cfg.lambda)?,
            target: vec![0.0; d],
            theta_hat: vec![0.0; d],
            second,
            episode_log_det: 0.0,
            conf: None,
            policy: StationaryPolicy::constant(ns),
            w: vec![0.0; ns],
            w_sq: vec![0.0; ns],
            last_evi: None,
            episodes: Vec::new(),
            phase: Phase::Act,
            theta_star: None,
            record_trace: false,
            trace: Vec::new(),
            phi: vec![0.0; d],
            phi_sq: vec![0.0; d],
            t: 0,
            d,
            cfg,
            mdp,
        })
    }

    /// Lets the agent check its confidence sets against the true parameter.
    /// The parameter never influences actions.
    pub fn with_diagnostics(mut self, theta_star: Vec<f64>, record_trace: bool) -> Result<Self> {
        if theta_star.len() != self.d {
            return Err(Error::Dimension {
                expected: self.d,
                got: theta_star.len(),
            });
        }
        self.theta_star = Some(theta_star);
        self.record_trace = record_trace;
        Ok(self)
    }

    pub fn config(&self) -> &VtrConfig {
        &self.cfg
    }

    pub fn observations(&self) -> u64 {
        self.t
    }

    pub fn theta_hat(&self) -> &[f64] {
        &self.theta_hat
    }

    pub fn theta_tilde(&self) -> Option<&[f64]> {
        self.second.as_ref().map(|m| m.theta.as_slice())
    }

    pub fn gram(&self) -> &PsdLedger {
        &self.gram
    }

    pub fn second_moment_gram(&self) -> Option<&PsdLedger> {
        self.second.as_ref().map(|m| &m.gram)
    }

    /// Centered value function of the current episode.
    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn policy(&self) -> &StationaryPolicy {
        &self.policy
    }

    pub fn ellipsoid(&self) -> Option<&ConfidenceEllipsoid> {
        self.conf.as_ref()
    }

    pub fn last_evi(&self) -> Option<&EviResult> {
        self.last_evi.as_ref()
    }

    pub fn episodes(&self) -> &[EpisodeRecord] {
        &self.episodes
    }

    pub fn trace(&self) -> &[StepDiagnostics] {
        &self.trace
    }

    /// Whether `theta` lies in the current episode's ellipsoid.
    pub fn coverage_check(&self, theta: &[f64]) -> Result<bool> {
        match &self.conf {
            Some(c) => c.contains(theta),
            None => Err(Error::Protocol("no episode has started yet".into())),
        }
    }

    /// Radius of the main ellipsoid after `n` observations.
    pub fn radius_at(&self, n: u64) -> f64 {
        let (d, l, dl) = (self.d, self.cfg.lambda, self.cfg.delta_conf);
        let (diam, b) = (self.mdp.diameter_bound(), self.mdp.b_bound());
        match self.cfg.bonus {
            Bonus::Hoeffding => hoeffding_radius(n as f64, d, l, dl, diam, b),
            Bonus::Bernstein => bernstein_radii(n as f64, d, l, dl, diam, b).hat,
        }
    }

    fn radii(&self) -> BernsteinRadii {
        bernstein_radii(
            self.t as f64,
            self.d,
            self.cfg.lambda,
            self.cfg.delta_conf,
            self.mdp.diameter_bound(),
            self.mdp.b_bound(),
        )
    }

    fn needs_new_episode(&self) -> bool {
        self.conf.is_none() || self.gram.log_det() > self.episode_log_det + std::f64::consts::LN_2
    }

    fn start_episode(&mut self) -> Result<()> {
        let k = self.episodes.len() + 1;
        let t_k = self.t + 1;
        let radius = self.cfg.radius_scale * self.radius_at(self.t);
        let conf = ConfidenceEllipsoid::new(self.theta_hat.clone(), self.gram.clone(), radius)?;
        let diam = self.mdp.diameter_bound();
        let opts = EviOptions {
            epsilon: self.cfg.epsilon,
            max_iters: self
                .cfg
                .max_evi_iters
                .unwrap_or_else(|| default_max_iters(diam, self.cfg.epsilon)),
            damping: self.cfg.evi_damping,
        };
        let init = vec![0.0; self.mdp.n_states()];
        let res = run_evi_with(&conf, &self.mdp, &init, &opts).map_err(|e| Error::Episode {
            episode: k,
            t: t_k,
            source: Box::new(e),
        })?;
        let coverage = match &self.theta_star {
            Some(th) => Some(conf.contains(th)?),
            None => None,
        };
        let rho_deviation = res
            .last_difference
            .iter()
            .map(|v| (v - res.rho_k).abs())
            .fold(0.0, f64::max);
        log::debug!(
            "episode {k} at t = {t_k}: radius {radius:.3}, rho {:.6}, {} EVI iterations",
            res.rho_k,
            res.iterations
        );
        self.episodes.push(EpisodeRecord {
            k,
            t_k,
            radius,
            log_det: self.gram.log_det(),
            evi_iterations: res.iterations,
            rho_k: res.rho_k,
            final_span_gap: res.final_span_gap,
            value_span: res.value_span,
            rho_deviation,
            coverage,
        });
        self.episode_log_det = self.gram.log_det();
        self.policy = res.policy.clone();
        self.w.clone_from(&res.w);
        self.w_sq = res.w.iter().map(|v| v * v).collect();
        self.conf = Some(conf);
        self.last_evi = Some(res);
        Ok(())
    }

    /// `sigma_bar` and its ingredients for `(s, a)` under the current
    /// estimates. Only available for the Bernstein variant.
    pub fn variance_estimate(&self, s: usize, a: usize) -> Result<VarianceEstimate> {
        let mut phi = vec![0.0; self.d];
        let mut phi_sq = vec![0.0; self.d];
        self.mdp.feature_expectation_into(&self.w, s, a, &mut phi);
        self.mdp.feature_expectation_into(&self.w_sq, s, a, &mut phi_sq);
        self.variance_from(&phi, &phi_sq)
    }

    fn variance_from(&self, phi: &[f64], phi_sq: &[f64]) -> Result<VarianceEstimate> {
        let second = self
            .second
            .as_ref()
            .ok_or_else(|| Error::Config("variance estimates need the Bernstein bonus".into()))?;
        let diam = self.mdp.diameter_bound();
        let quarter = diam * diam / 4.0;
        let radii = self.radii();
        let first = dot(phi_sq, &second.theta).clamp(0.0, quarter);
        let mean = dot(phi, &self.theta_hat).abs().min(diam / 2.0);
        let v_bar = first - mean * mean;
        let e_t = (radii.tilde * second.gram.mahalanobis_inv_unchecked(phi_sq)).min(quarter)
            + (diam * radii.check * self.gram.mahalanobis_inv_unchecked(phi)).min(quarter);
        let floor = diam * diam / self.d as f64;
        Ok(VarianceEstimate {
            v_bar,
            e_t,
            sigma_bar: floor.max(v_bar + e_t).sqrt(),
        })
    }

    fn diagnostics(&self, estimate: VarianceEstimate, s: usize, a: usize) -> Result<StepDiagnostics> {
        let theta = self.theta_star.as_deref().expect("diagnostics enabled");
        let second = self.second.as_ref().expect("bernstein");
        let mean = self.mdp.expected_value(&self.w, s, a);
        let true_variance = self.mdp.expected_value(&self.w_sq, s, a) - mean * mean;
        let radii = self.radii();
        let hat_dist = distance(&self.gram, &self.theta_hat, theta)?;
        let tilde_dist = distance(&second.gram, &second.theta, theta)?;
        Ok(StepDiagnostics {
            t: self.t + 1,
            estimate,
            true_variance,
            events: [hat_dist <= radii.hat, hat_dist <= radii.check, tilde_dist <= radii.tilde],
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn distance(gram: &PsdLedger, center: &[f64], theta: &[f64]) -> Result<f64> {
    let diff: Vec<f64> = center.iter().zip(theta).map(|(c, t)| c - t).collect();
    gram.matrix_norm(&diff)
}

impl Agent for Ucrl2Vtr {
    fn act(&mut self, s: usize, _rng: &mut dyn RngCore) -> Result<usize> {
        self.phase.begin_act()?;
        if s >= self.mdp.n_states() {
            return Err(Error::Protocol(format!("state {s} out of range")));
        }
        if self.needs_new_episode() {
            self.start_episode()?;
        }
        let a = self.policy.action(s);
        self.phase = Phase::Observe { s, a };
        Ok(a)
    }

    fn observe(&mut self, s: usize, a: usize, _reward: f64, s_next: usize) -> Result<()> {
        self.phase.check_observe(s, a)?;
        if s_next >= self.mdp.n_states() {
            return Err(Error::Protocol(format!("next state {s_next} out of range")));
        }
        let mut phi = std::mem::take(&mut self.phi);
        self.mdp.feature_expectation_into(&self.w, s, a, &mut phi);
        let y = self.w[s_next];
        match self.cfg.bonus {
            Bonus::Hoeffding => {
                self.gram.rank_one_update(&phi, 1.0)?;
                for (b, x) in self.target.iter_mut().zip(&phi) {
                    *b += x * y;
                }
            }
            Bonus::Bernstein => {
                let mut phi_sq = std::mem::take(&mut self.phi_sq);
                self.mdp.feature_expectation_into(&self.w_sq, s, a, &mut phi_sq);
                let est = self.variance_from(&phi, &phi_sq)?;
                if self.record_trace {
                    let diag = self.diagnostics(est, s, a)?;
                    self.trace.push(diag);
                }
                let weight = 1.0 / (est.sigma_bar * est.sigma_bar);
                self.gram.rank_one_update(&phi, weight)?;
                for (b, x) in self.target.iter_mut().zip(&phi) {
                    *b += weight * x * y;
                }
                let second = self.second.as_mut().expect("bernstein");
                second.gram.rank_one_update(&phi_sq, 1.0)?;
                for (b, x) in second.target.iter_mut().zip(&phi_sq) {
                    *b += x * y * y;
                }
                second.theta = second.gram.solve(&second.target)?;
                self.phi_sq = phi_sq;
            }
        }
        self.phi = phi;
        self.theta_hat = self.gram.solve(&self.target)?;
        self.t += 1;
        self.phase = Phase::Act;
        Ok(())
    }

    fn episode(&self) -> usize {
        self.episodes.len()
    }
}
