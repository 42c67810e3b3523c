//! Seeded regret experiments and their CSV/JSON outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::agent::Agent;
use crate::baselines::{EpsGreedyQ, QLearningConfig, RandomAgent, Ucrl2Config, Ucrl2Tabular};
use crate::config::{Algorithm, ExperimentConfig, MdpKind};
use crate::error::{Error, Result};
use crate::hard_instance::{build_hard_instance, hard_instance_gain, HardInstanceParams, SignPattern};
use crate::mdp::{load_fixture, LinearMixtureMdp};
use crate::vtr::{bernstein_episode_bound, hoeffding_episode_bound, Bonus, Ucrl2Vtr, VtrConfig};

/// The environment of an experiment together with its optimal gain.
#[derive(Debug, Clone)]
pub struct Environment {
    pub mdp: Arc<LinearMixtureMdp>,
    pub rho_star: f64,
    /// `"closed-form"` or `"relative-value-iteration"`.
    pub rho_source: &'static str,
    pub diameter: f64,
    pub hard: Option<HardInstanceParams>,
}

impl Environment {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        match cfg.mdp.kind {
            MdpKind::Hard => {
                let h = &cfg.hard;
                let params = HardInstanceParams::new(h.d, h.diameter, cfg.hard_horizon(), h.b_bound)?;
                let signs = SignPattern::from_seed(h.d, h.theta_seed);
                let mdp = build_hard_instance(&params, &signs)?;
                Ok(Self {
                    mdp: Arc::new(mdp),
                    rho_star: hard_instance_gain(&params),
                    rho_source: "closed-form",
                    diameter: 1.0 / params.delta,
                    hard: Some(params),
                })
            }
            MdpKind::Fixture => {
                let path = cfg.mdp.fixture.as_deref().expect("validated");
                Self::from_mdp(load_fixture(path)?)
            }
        }
    }

    /// Solves for the optimal gain and the diameter numerically.
    pub fn from_mdp(mdp: LinearMixtureMdp) -> Result<Self> {
        let rho_star = mdp.optimal_gain()?.rho;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let diameter = mdp.estimate_diameter(0, &mut rng)?.exact;
        Ok(Self {
            mdp: Arc::new(mdp),
            rho_star,
            rho_source: "relative-value-iteration",
            diameter,
            hard: None,
        })
    }
}

/// One CSV row of a single run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: u64,
    pub reward_cum: f64,
    pub regret_cum: f64,
    pub episode: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub rows: Vec<TraceRow>,
    pub final_regret: f64,
    pub episodes: usize,
    /// Episode-count bound of the VTR variants.
    pub episode_bound: Option<f64>,
}

/// 64-bit FNV-1a, stable across platforms and releases.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of the random stream of one run.
pub fn stream_seed(seed: u64, algorithm: Algorithm) -> u64 {
    splitmix64(splitmix64(seed) ^ fnv1a(algorithm.id().as_bytes()))
}

pub fn build_agent(
    algorithm: Algorithm,
    env: &Environment,
    cfg: &ExperimentConfig,
) -> Result<Box<dyn Agent>> {
    let mdp = &env.mdp;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let horizon = cfg.run.horizon;
    if let Some(bonus) = algorithm.bonus(cfg.agent.bonus) {
        let mut vc = VtrConfig::new(bonus, mdp, horizon);
        let a = &cfg.agent;
        if let Some(l) = a.lambda {
            vc.lambda = l;
        }
        if let Some(e) = a.epsilon {
            vc.epsilon = e;
        }
        vc.delta_conf = a.delta_conf;
        vc.max_evi_iters = a.max_evi_iters;
        vc.evi_damping = a.evi_damping;
        vc.radius_scale = a.radius_scale;
        return Ok(Box::new(Ucrl2Vtr::new(mdp.clone(), vc)?));
    }
    let b = &cfg.baseline;
    Ok(match algorithm {
        Algorithm::Random => Box::new(RandomAgent::new(ns, na)),
        Algorithm::EpsGreedyQl => Box::new(EpsGreedyQ::new(
            ns,
            na,
            QLearningConfig {
                eps_explore: b.eps_explore,
                step_h: b.q_step_h,
                reference: (b.q_ref_state, b.q_ref_action),
            },
        )?),
        Algorithm::Ucrl2 => Box::new(Ucrl2Tabular::new(
            mdp,
            Ucrl2Config {
                delta_conf: b.ucrl2_delta_conf,
                radius_const: b.ucrl2_radius_const,
                evi_damping: cfg.agent.evi_damping,
                ..Ucrl2Config::default()
            },
        )?),
        _ => unreachable!("VTR variants handled above"),
    })
}

fn episode_bound(algorithm: Algorithm, env: &Environment, cfg: &ExperimentConfig) -> Option<f64> {
    let bonus = algorithm.bonus(cfg.agent.bonus)?;
    let mdp = &env.mdp;
    let b = mdp.b_bound();
    let lambda = cfg.agent.lambda.unwrap_or(1.0 / (b * b));
    let t = cfg.run.horizon as f64;
    Some(match bonus {
        Bonus::Hoeffding => hoeffding_episode_bound(mdp.dim(), lambda, t, mdp.diameter_bound()),
        Bonus::Bernstein => bernstein_episode_bound(mdp.dim(), lambda, t),
    })
}

/// Runs one agent for `run.T` steps from state 0.
pub fn run_single(
    env: &Environment,
    cfg: &ExperimentConfig,
    algorithm: Algorithm,
    seed: u64,
) -> Result<RunResult> {
    let mut agent = build_agent(algorithm, env, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, algorithm));
    let mdp = &env.mdp;
    let horizon = cfg.run.horizon;
    let stride = cfg.run.stride;
    let mut rows = Vec::new();
    let mut s = 0;
    let mut reward_cum = 0.0;
    for t in 1..=horizon {
        let before = agent.episode();
        let a = agent.act(s, &mut rng)?;
        let r = mdp.reward(s, a);
        let next = mdp.sample_next(s, a, &mut rng);
        agent.observe(s, a, r, next)?;
        reward_cum += r;
        s = next;
        let episode = agent.episode();
        if t % stride == 0 || t == horizon || episode != before {
            rows.push(TraceRow {
                t,
                reward_cum,
                regret_cum: t as f64 * env.rho_star - reward_cum,
                episode,
            });
        }
    }
    Ok(RunResult {
        algorithm,
        seed,
        final_regret: horizon as f64 * env.rho_star - reward_cum,
        episodes: agent.episode(),
        episode_bound: episode_bound(algorithm, env, cfg),
        rows,
    })
}

/// Time points shared by every run: multiples of the stride and the horizon.
pub fn common_grid(horizon: u64, stride: u64) -> Vec<u64> {
    let mut grid: Vec<u64> = (1..=horizon / stride).map(|i| i * stride).collect();
    if horizon > 0 && grid.last() != Some(&horizon) {
        grid.push(horizon);
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    /// Mean, sample standard deviation (zero for one value), min and max.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self {
            mean,
            std,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantChecks {
    /// Every run stayed within the episode-count bound (VTR variants only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub episodes_within_bound: Option<bool>,
    /// Regret never exceeded `t * rho_star` nor fell below `-t`.
    pub regret_within_range: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlgorithmSummary {
    pub id: Algorithm,
    pub n_success: usize,
    pub n_failed: usize,
    pub final_regret: Option<Stats>,
    pub episodes: Option<Stats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub episode_bound: Option<f64>,
    pub invariants: InvariantChecks,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub rho_star: f64,
    pub rho_star_source: &'static str,
    pub diameter: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
    pub algorithms: Vec<AlgorithmSummary>,
    pub failures: Vec<Failure>,
    pub config: ExperimentConfig,
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub env: Environment,
    pub runs: Vec<RunResult>,
    pub summary: Summary,
}

/// Runs every configured algorithm on seeds `seed, seed + 1, ...`.
///
/// A failing run is recorded in the summary and left out of the aggregates.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let env = Environment::from_config(cfg)?;
    let jobs: Vec<(Algorithm, u64)> = cfg
        .run
        .algorithms
        .iter()
        .flat_map(|&a| (0..cfg.run.replications as u64).map(move |i| (a, cfg.run.seed + i)))
        .collect();
    let work = |&(a, seed): &(Algorithm, u64)| {
        run_single(&env, cfg, a, seed).map_err(|e| Failure {
            algorithm: a,
            seed,
            error: e.to_string(),
        })
    };
    let outcomes: Vec<std::result::Result<RunResult, Failure>> = if cfg.run.parallel {
        jobs.par_iter().map(work).collect()
    } else {
        jobs.iter().map(work).collect()
    };
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => runs.push(r),
            Err(f) => {
                log::warn!("{} seed {} failed: {}", f.algorithm, f.seed, f.error);
                failures.push(f);
            }
        }
    }
    let summary = summarize(&env, cfg, &runs, failures);
    Ok(ExperimentOutput { env, runs, summary })
}

fn summarize(env: &Environment, cfg: &ExperimentConfig, runs: &[RunResult], failures: Vec<Failure>) -> Summary {
    let algorithms = cfg
        .run
        .algorithms
        .iter()
        .map(|&a| {
            let mine: Vec<&RunResult> = runs.iter().filter(|r| r.algorithm == a).collect();
            let finals: Vec<f64> = mine.iter().map(|r| r.final_regret).collect();
            let episodes: Vec<f64> = mine.iter().map(|r| r.episodes as f64).collect();
            let bound = episode_bound(a, env, cfg);
            let regret_within_range = mine.iter().all(|r| {
                r.rows.iter().all(|row| {
                    let t = row.t as f64;
                    row.regret_cum <= t * env.rho_star + 1e-9 && row.regret_cum >= -t - 1e-9
                })
            });
            AlgorithmSummary {
                id: a,
                n_success: mine.len(),
                n_failed: failures.iter().filter(|f| f.algorithm == a).count(),
                final_regret: Stats::of(&finals),
                episodes: Stats::of(&episodes),
                episode_bound: bound,
                invariants: InvariantChecks {
                    episodes_within_bound: bound.map(|b| mine.iter().all(|r| r.episodes as f64 <= b)),
                    regret_within_range,
                },
            }
        })
        .collect();
    Summary {
        rho_star: env.rho_star,
        rho_star_source: env.rho_source,
        diameter: env.diameter,
        gap: env.hard.as_ref().map(|h| h.gap),
        algorithms,
        failures,
        config: cfg.clone(),
    }
}

pub fn run_csv(run: &RunResult) -> String {
    let mut out = String::from("t,reward_cum,regret_cum,episode\n");
    for r in &run.rows {
        writeln!(out, "{},{},{},{}", r.t, r.reward_cum, r.regret_cum, r.episode).unwrap();
    }
    out
}

/// `t,<algo>_mean,<algo>_std,...` over the common grid.
pub fn aggregate_csv(cfg: &ExperimentConfig, runs: &[RunResult]) -> String {
    let grid = common_grid(cfg.run.horizon, cfg.run.stride);
    let mut out = String::from("t");
    for a in &cfg.run.algorithms {
        write!(out, ",{a}_mean,{a}_std").unwrap();
    }
    out.push('\n');
    let columns: Vec<Vec<Vec<f64>>> = cfg
        .run
        .algorithms
        .iter()
        .map(|&a| {
            runs.iter()
                .filter(|r| r.algorithm == a)
                .map(|r| {
                    let mut at = r.rows.iter();
                    grid.iter()
                        .map(|&t| at.find(|row| row.t == t).expect("grid rows recorded").regret_cum)
                        .collect()
                })
                .collect()
        })
        .collect();
    for (i, &t) in grid.iter().enumerate() {
        write!(out, "{t}").unwrap();
        for per_run in &columns {
            let values: Vec<f64> = per_run.iter().map(|v| v[i]).collect();
            match Stats::of(&values) {
                Some(s) => write!(out, ",{},{}", s.mean, s.std).unwrap(),
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn run_file_name(run: &RunResult) -> String {
    format!("{}_seed{}.csv", run.algorithm, run.seed)
}

/// Writes `runs/*.csv`, `aggregate.csv` and `summary.json` under `dir`.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, out: &ExperimentOutput) -> Result<Vec<PathBuf>> {
    let runs_dir = dir.join("runs");
    fs::create_dir_all(&runs_dir).map_err(|e| Error::Io(format!("{}: {e}", runs_dir.display())))?;
    let mut written = Vec::new();
    let mut put = |path: PathBuf, text: String| -> Result<()> {
        fs::write(&path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        written.push(path);
        Ok(())
    };
    for run in &out.runs {
        put(runs_dir.join(run_file_name(run)), run_csv(run))?;
    }
    put(dir.join("aggregate.csv"), aggregate_csv(cfg, &out.runs))?;
    let json = serde_json::to_string_pretty(&out.summary).map_err(|e| Error::Parse(e.to_string()))?;
    put(dir.join("summary.json"), json + "\n")?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.hard.horizon = Some(6.0);
        cfg.run.horizon = 250;
        cfg.run.stride = 100;
        cfg.run.replications = 2;
        cfg.run.algorithms = Algorithm::ALL.to_vec();
        cfg
    }

    #[test]
    fn grid_includes_horizon() {
        assert_eq!(common_grid(250, 100), vec![100, 200, 250]);
        assert_eq!(common_grid(200, 100), vec![100, 200]);
        assert_eq!(common_grid(0, 100), Vec::<u64>::new());
        assert_eq!(common_grid(3, 5), vec![3]);
    }

    #[test]
    fn stats_use_sample_deviation() {
        let s = Stats::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!((s.min, s.max), (1.0, 4.0));
        assert_eq!(Stats::of(&[7.0]).unwrap().std, 0.0);
        assert!(Stats::of(&[]).is_none());
    }

    #[test]
    fn stream_seeds_differ_by_algorithm_and_seed() {
        let mut seen = std::collections::HashSet::new();
        for a in Algorithm::ALL {
            for s in 0..20 {
                assert!(seen.insert(stream_seed(s, a)));
            }
        }
        // FNV-1a reference value for the empty input.
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn rows_cover_grid_and_episode_starts() {
        let cfg = small_cfg();
        let env = Environment::from_config(&cfg).unwrap();
        let run = run_single(&env, &cfg, Algorithm::VtrHoeffding, 3).unwrap();
        for t in common_grid(250, 100) {
            assert!(run.rows.iter().any(|r| r.t == t));
        }
        assert_eq!(run.rows[0].t, 1);
        assert_eq!(run.rows[0].episode, 1);
        let mut last = 0;
        for r in &run.rows {
            assert!(r.t > last);
            last = r.t;
            assert!((r.regret_cum - (r.t as f64 * env.rho_star - r.reward_cum)).abs() < 1e-9);
        }
        assert_eq!(run.rows.last().unwrap().episode, run.episodes);
    }

    #[test]
    fn zero_horizon_has_no_rows() {
        let mut cfg = small_cfg();
        cfg.run.horizon = 0;
        let out = run_experiment(&cfg).unwrap();
        assert!(out.runs.iter().all(|r| r.rows.is_empty() && r.final_regret == 0.0));
        assert_eq!(aggregate_csv(&cfg, &out.runs).lines().count(), 1);
    }

    #[test]
    fn serial_and_parallel_agree() {
        let mut cfg = small_cfg();
        cfg.run.parallel = false;
        let serial = run_experiment(&cfg).unwrap();
        cfg.run.parallel = true;
        let parallel = run_experiment(&cfg).unwrap();
        assert_eq!(serial.runs, parallel.runs);
        assert_eq!(aggregate_csv(&cfg, &serial.runs), aggregate_csv(&cfg, &parallel.runs));
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        let mut cfg = small_cfg();
        cfg.agent.max_evi_iters = Some(1);
        cfg.agent.epsilon = Some(1e-12);
        cfg.run.algorithms = vec![Algorithm::VtrHoeffding, Algorithm::Random];
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.summary.failures.len(), 2);
        assert!(out.summary.failures[0].error.contains("episode 1"));
        let s = &out.summary.algorithms;
        assert_eq!((s[0].n_success, s[0].n_failed), (0, 2));
        assert_eq!((s[1].n_success, s[1].n_failed), (2, 0));
        let agg = aggregate_csv(&cfg, &out.runs);
        assert!(agg.lines().nth(1).unwrap().contains(",,"));
    }
}
