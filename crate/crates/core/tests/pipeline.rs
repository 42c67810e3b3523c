use std::path::PathBuf;

use proptest::prelude::*;
use ucrl_vtr::config::{Algorithm, ExperimentConfig, MdpKind};
use ucrl_vtr::harness::{aggregate_csv, common_grid, run_experiment, run_single, Environment};

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn fixture_config(horizon: u64, reps: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(&configs_dir().join("fixture_3x2.toml")).unwrap();
    cfg.run.horizon = horizon;
    cfg.run.replications = reps;
    cfg.run.stride = 100;
    cfg
}

fn hard_config(d: usize, horizon: u64, reps: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.hard.d = d;
    cfg.hard.horizon = Some(6.0);
    cfg.run.horizon = horizon;
    cfg.run.replications = reps;
    cfg.run.stride = 100;
    cfg.run.algorithms = Algorithm::ALL.to_vec();
    cfg
}

#[test]
fn shipped_configs_validate() {
    for name in ["default.toml", "comparison_d8.toml", "sublinearity_d4.toml", "fixture_3x2.toml"] {
        let cfg = ExperimentConfig::load(&configs_dir().join(name)).unwrap();
        cfg.validate().unwrap();
        Environment::from_config(&cfg).unwrap();
    }
}

#[test]
fn fixture_path_resolves_next_to_config() {
    let cfg = fixture_config(10, 1);
    assert_eq!(cfg.mdp.kind, MdpKind::Fixture);
    assert!(cfg.mdp.fixture.as_ref().unwrap().exists());
}

#[test]
fn fixture_gain_comes_from_value_iteration() {
    let env = Environment::from_config(&fixture_config(10, 1)).unwrap();
    assert_eq!(env.rho_source, "relative-value-iteration");
    let g = env.mdp.optimal_gain().unwrap();
    assert_eq!(env.rho_star, g.rho);
    let mu = env.mdp.stationary_distribution(&g.policy).unwrap();
    let direct: f64 = (0..env.mdp.n_states()).map(|s| mu[s] * env.mdp.reward(s, g.policy.action(s))).sum();
    assert!((direct - g.rho).abs() < 1e-9);
    assert!(env.diameter <= env.mdp.diameter_bound());
}

#[test]
fn hard_instance_gain_is_closed_form() {
    let env = Environment::from_config(&hard_config(4, 10, 1)).unwrap();
    assert_eq!(env.rho_source, "closed-form");
    let rvi = env.mdp.optimal_gain().unwrap().rho;
    assert!((rvi - env.rho_star).abs() < 1e-9);
}

#[test]
fn regret_rows_are_consistent() {
    for cfg in [fixture_config(1500, 1), hard_config(4, 1500, 1)] {
        let env = Environment::from_config(&cfg).unwrap();
        for &algo in &cfg.run.algorithms {
            let run = run_single(&env, &cfg, algo, 3).unwrap();
            let ts: Vec<u64> = run.rows.iter().map(|r| r.t).collect();
            assert!(ts.windows(2).all(|w| w[0] < w[1]), "{algo:?}");
            assert_eq!(*ts.last().unwrap(), cfg.run.horizon);
            for t in common_grid(cfg.run.horizon, cfg.run.stride) {
                assert!(ts.contains(&t));
            }
            let mut prev_reward = 0.0;
            for r in &run.rows {
                let expect = r.t as f64 * env.rho_star - r.reward_cum;
                assert!((r.regret_cum - expect).abs() < 1e-6);
                assert!(r.reward_cum >= prev_reward);
                assert!(r.reward_cum <= r.t as f64);
                prev_reward = r.reward_cum;
            }
            assert_eq!(run.final_regret, run.rows.last().unwrap().regret_cum);
            if let Some(bound) = run.episode_bound {
                assert!(run.episodes as f64 <= bound, "{algo:?}: {} > {bound}", run.episodes);
            }
        }
    }
}

#[test]
fn vtr_episode_counts_stay_within_bounds() {
    for d in [2, 4, 8] {
        let mut cfg = hard_config(d, 3000, 3);
        cfg.run.algorithms = vec![Algorithm::VtrHoeffding, Algorithm::VtrBernstein];
        let out = run_experiment(&cfg).unwrap();
        assert!(out.summary.failures.is_empty());
        for s in &out.summary.algorithms {
            assert_eq!(s.invariants.episodes_within_bound, Some(true), "d {d} {:?}", s.id);
            assert!(s.invariants.regret_within_range);
        }
    }
}

#[test]
fn serial_and_parallel_runs_agree() {
    let mut cfg = fixture_config(2000, 4);
    cfg.run.algorithms = Algorithm::ALL.to_vec();
    let par = run_experiment(&cfg).unwrap();
    cfg.run.parallel = false;
    let ser = run_experiment(&cfg).unwrap();
    assert_eq!(aggregate_csv(&cfg, &par.runs), aggregate_csv(&cfg, &ser.runs));
    for (a, b) in par.runs.iter().zip(&ser.runs) {
        assert_eq!(a.algorithm, b.algorithm);
        assert_eq!(a.seed, b.seed);
        assert_eq!(a.rows, b.rows);
    }
}

#[test]
fn aggregate_csv_matches_plotting_interface() {
    let cfg = fixture_config(1050, 3);
    let out = run_experiment(&cfg).unwrap();
    let csv = aggregate_csv(&cfg, &out.runs);
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let mut expect = vec!["t".to_string()];
    for a in &cfg.run.algorithms {
        expect.push(format!("{}_mean", a.id()));
        expect.push(format!("{}_std", a.id()));
    }
    assert_eq!(header, expect);
    let grid = common_grid(cfg.run.horizon, cfg.run.stride);
    let body: Vec<Vec<f64>> =
        lines.map(|l| l.split(',').map(|c| c.parse::<f64>().unwrap()).collect()).collect();
    assert_eq!(body.len(), grid.len());
    for (row, &t) in body.iter().zip(&grid) {
        assert_eq!(row.len(), header.len());
        assert_eq!(row[0], t as f64);
        assert!(row[2..].iter().step_by(2).all(|s| *s >= 0.0));
    }
    assert_eq!(grid.last(), Some(&1050));

    // The final row is the mean of the per-run final regrets.
    let last = body.last().unwrap();
    for (i, a) in cfg.run.algorithms.iter().enumerate() {
        let finals: Vec<f64> =
            out.runs.iter().filter(|r| r.algorithm == *a).map(|r| r.final_regret).collect();
        let mean = finals.iter().sum::<f64>() / finals.len() as f64;
        assert!((last[1 + 2 * i] - mean).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn grid_covers_stride_and_horizon(horizon in 1u64..5000, stride in 1u64..700) {
        let g = common_grid(horizon, stride);
        prop_assert_eq!(g.last().copied(), Some(horizon));
        prop_assert!(g.windows(2).all(|w| w[0] < w[1]));
        for t in &g {
            prop_assert!(*t % stride == 0 || *t == horizon);
        }
        prop_assert_eq!(g.len() as u64, horizon / stride + u64::from(horizon % stride != 0));
    }

    #[test]
    fn runs_replay_from_seed(seed in 0u64..1000, algo in 0usize..6) {
        let cfg = hard_config(3, 300, 1);
        let env = Environment::from_config(&cfg).unwrap();
        let a = Algorithm::ALL[algo];
        let x = run_single(&env, &cfg, a, seed).unwrap();
        let y = run_single(&env, &cfg, a, seed).unwrap();
        prop_assert_eq!(x.rows, y.rows);
    }
}
