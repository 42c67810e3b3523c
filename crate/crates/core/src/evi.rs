//! Extended value iteration over a confidence ellipsoid.
//!
//! Each backup maximizes over actions and over plausible parameters. The inner
//! maximum over the ellipsoid has the closed form
//! `<center, phi_u> + radius * ||phi_u||_{Sigma^-1}`; the result is clamped to
//! `[min u, max u]`, the range any genuine transition kernel can produce.
//! Since every valid parameter yields an expectation inside that interval,
//! the clamped value still dominates the constrained maximum.

use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{min_max, LinearMixtureMdp, StationaryPolicy};
use crate::numerics::PsdLedger;

/// `{theta : ||Sigma^{1/2} (theta - center)|| <= radius}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceEllipsoid {
    pub center: Vec<f64>,
    pub precision: PsdLedger,
    pub radius: f64,
}

impl ConfidenceEllipsoid {
    pub fn new(center: Vec<f64>, precision: PsdLedger, radius: f64) -> Result<Self> {
        if center.len() != precision.dim() {
            return Err(Error::Dimension {
                expected: precision.dim(),
                got: center.len(),
            });
        }
        if !(radius >= 0.0) {
            return Err(Error::Config(format!("radius must be nonnegative, got {radius}")));
        }
        Ok(Self {
            center,
            precision,
            radius,
        })
    }

    /// The single point `{theta}`.
    pub fn point(theta: Vec<f64>) -> Self {
        let d = theta.len();
        Self {
            center: theta,
            precision: PsdLedger::new(d, 1.0).expect("d >= 1"),
            radius: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// `||Sigma^{1/2} (theta - center)||`.
    pub fn distance(&self, theta: &[f64]) -> Result<f64> {
        let diff: Vec<f64> = theta.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        self.precision.matrix_norm(&diff)
    }

    pub fn contains(&self, theta: &[f64]) -> Result<bool> {
        Ok(self.distance(theta)? <= self.radius)
    }

    /// `max_{theta in C} <theta, x>`.
    pub fn upper(&self, x: &[f64]) -> f64 {
        let mean: f64 = self.center.iter().zip(x).map(|(a, b)| a * b).sum();
        if self.radius == 0.0 {
            return mean;
        }
        mean + self.radius * self.precision.mahalanobis_inv_unchecked(x)
    }

    /// The parameter attaining [`ConfidenceEllipsoid::upper`].
    pub fn maximizer(&self, x: &[f64]) -> Vec<f64> {
        let norm = self.precision.mahalanobis_inv_unchecked(x);
        if norm == 0.0 || self.radius == 0.0 {
            return self.center.clone();
        }
        let dir = self.precision.solve(x).expect("dimension checked by caller");
        self.center
            .iter()
            .zip(&dir)
            .map(|(c, v)| c + self.radius * v / norm)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EviResult {
    /// Final iterate `u^(i)`, shifted so that `min u = 0`.
    pub u: Vec<f64>,
    /// Midpoint-centered value `u - (max u + min u) / 2`.
    pub w: Vec<f64>,
    pub policy: StationaryPolicy,
    pub rho_k: f64,
    /// Number of backups performed.
    pub iterations: usize,
    /// `span(u^(i+1) - u^(i))` at the stopping check.
    pub final_span_gap: f64,
    /// `max u - min u`.
    pub value_span: f64,
    /// `u^(i+1) - u^(i)` at the stopping check.
    pub last_difference: Vec<f64>,
    /// Largest iterate span seen during the run.
    pub max_iterate_span: f64,
}

/// `10 * ceil(span_bound / epsilon)`, capped at one million.
pub fn default_max_iters(span_bound: f64, epsilon: f64) -> usize {
    let raw = 10.0 * (span_bound / epsilon).ceil();
    if raw.is_finite() {
        (raw as usize).clamp(10, 1_000_000)
    } else {
        1_000_000
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EviOptions {
    /// Span threshold of the stopping rule.
    pub epsilon: f64,
    pub max_iters: usize,
    /// Step `tau` in `u <- u + tau (Tu - u)`; `1.0` is plain value iteration.
    /// Values below one make periodic models converge.
    pub damping: f64,
}

impl EviOptions {
    pub fn new(epsilon: f64, max_iters: usize) -> Self {
        Self {
            epsilon,
            max_iters,
            damping: 1.0,
        }
    }
}

/// Generic extended value iteration driver.
///
/// `backup(u, lo, hi, s, a)` returns `r(s,a)` plus the optimistic expectation
/// of `u`, where `[lo, hi]` is the range of `u`. Stops once
/// `span(Tu - u) <= epsilon`; iterates are shifted to `min u = 0` after every
/// sweep.
pub fn extended_value_iteration<F>(
    n_states: usize,
    n_actions: usize,
    init: &[f64],
    opts: &EviOptions,
    mut backup: F,
) -> Result<EviResult>
where
    F: FnMut(&[f64], f64, f64, usize, usize) -> f64,
{
    let EviOptions {
        epsilon,
        max_iters,
        damping,
    } = *opts;
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(Error::Config(format!("damping must lie in (0, 1], got {damping}")));
    }
    if init.len() != n_states {
        return Err(Error::Dimension {
            expected: n_states,
            got: init.len(),
        });
    }
    let mut u = init.to_vec();
    let mut next = vec![0.0; n_states];
    let mut greedy = vec![0usize; n_states];
    let mut diff = vec![0.0; n_states];
    let mut last_gap = f64::INFINITY;
    let mut max_iterate_span: f64 = 0.0;
    for iter in 1..=max_iters {
        let (lo, hi) = min_max(u.iter().copied());
        max_iterate_span = max_iterate_span.max(hi - lo);
        for s in 0..n_states {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for a in 0..n_actions {
                let q = backup(&u, lo, hi, s, a);
                if q > best {
                    best = q;
                    arg = a;
                }
            }
            next[s] = best;
            greedy[s] = arg;
        }
        for s in 0..n_states {
            diff[s] = next[s] - u[s];
        }
        let (dlo, dhi) = min_max(diff.iter().copied());
        last_gap = dhi - dlo;
        if !last_gap.is_finite() {
            break;
        }
        if last_gap <= epsilon {
            let value_span = hi - lo;
            let mid = 0.5 * (hi + lo);
            let u_out: Vec<f64> = u.iter().map(|v| v - lo).collect();
            return Ok(EviResult {
                w: u.iter().map(|v| v - mid).collect(),
                u: u_out,
                policy: StationaryPolicy::new(greedy, n_actions)?,
                rho_k: 0.5 * (dhi + dlo),
                iterations: iter,
                final_span_gap: last_gap,
                value_span,
                last_difference: diff,
                max_iterate_span,
            });
        }
        for s in 0..n_states {
            next[s] = u[s] + damping * diff[s];
        }
        let shift = next.iter().copied().fold(f64::INFINITY, f64::min);
        for s in 0..n_states {
            u[s] = next[s] - shift;
        }
    }
    Err(Error::EviNonConvergence {
        max_iters,
        last_span_gap: last_gap,
    })
}

/// Reward plus the clamped optimistic expectation of `u` at `(s, a)`.
pub fn optimistic_backup(
    u: &[f64],
    conf: &ConfidenceEllipsoid,
    mdp: &LinearMixtureMdp,
    s: usize,
    a: usize,
) -> f64 {
    let (lo, hi) = min_max(u.iter().copied());
    let mut phi = vec![0.0; mdp.dim()];
    backup_with(u, lo, hi, conf, mdp, s, a, &mut phi)
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn backup_with(
    u: &[f64],
    lo: f64,
    hi: f64,
    conf: &ConfidenceEllipsoid,
    mdp: &LinearMixtureMdp,
    s: usize,
    a: usize,
    phi: &mut [f64],
) -> f64 {
    mdp.feature_expectation_into(u, s, a, phi);
    mdp.reward(s, a) + conf.upper(phi).clamp(lo, hi)
}

/// Extended value iteration from `u^(0) = 0`.
pub fn run_evi(
    conf: &ConfidenceEllipsoid,
    mdp: &LinearMixtureMdp,
    epsilon: f64,
    max_iters: usize,
) -> Result<EviResult> {
    run_evi_with(
        conf,
        mdp,
        &vec![0.0; mdp.n_states()],
        &EviOptions::new(epsilon, max_iters),
    )
}

pub fn run_evi_with(
    conf: &ConfidenceEllipsoid,
    mdp: &LinearMixtureMdp,
    init: &[f64],
    opts: &EviOptions,
) -> Result<EviResult> {
    if conf.dim() != mdp.dim() {
        return Err(Error::Dimension {
            expected: mdp.dim(),
            got: conf.dim(),
        });
    }
    let mut phi = vec![0.0; mdp.dim()];
    extended_value_iteration(
        mdp.n_states(),
        mdp.n_actions(),
        init,
        opts,
        |u, lo, hi, s, a| backup_with(u, lo, hi, conf, mdp, s, a, &mut phi),
    )
}

/// Optimistic transition row at `(s, a)`: the ellipsoid maximizer in the
/// direction `phi_u(s,a)`, with probabilities clipped to `[0, 1]` and
/// renormalized.
fn optimistic_row(
    conf: &ConfidenceEllipsoid,
    mdp: &LinearMixtureMdp,
    u: &[f64],
    s: usize,
    a: usize,
) -> Vec<f64> {
    let mut phi = vec![0.0; mdp.dim()];
    mdp.feature_expectation_into(u, s, a, &mut phi);
    let theta = conf.maximizer(&phi);
    let mut row: Vec<f64> = (0..mdp.n_states())
        .map(|j| {
            mdp.feature_into(s, a, j, &mut phi);
            let p: f64 = phi.iter().zip(&theta).map(|(x, y)| x * y).sum();
            p.clamp(0.0, 1.0)
        })
        .collect();
    let total: f64 = row.iter().sum();
    if total > 0.0 {
        row.iter_mut().for_each(|p| *p /= total);
    }
    row
}

/// Diagnostic contraction coefficient
/// `max 1 - sum_j min{P(j|s,a), P(j|s',a')}` over pairs of state-action
/// pairs, evaluated on the optimistic rows for value function `u`.
///
/// Exhaustive when the number of pairs is within `sample_budget`, otherwise
/// `sample_budget` pairs are drawn uniformly.
pub fn contraction_coefficient<R: Rng + ?Sized>(
    conf: &ConfidenceEllipsoid,
    mdp: &LinearMixtureMdp,
    u: &[f64],
    sample_budget: usize,
    rng: &mut R,
) -> f64 {
    let ns = mdp.n_states();
    let na = mdp.n_actions();
    let n_pairs = ns * na;
    let rows: Vec<Vec<f64>> = (0..n_pairs)
        .map(|i| optimistic_row(conf, mdp, u, i / na, i % na))
        .collect();
    let gap = |i: usize, j: usize| {
        let overlap: f64 = rows[i]
            .iter()
            .zip(&rows[j])
            .map(|(p, q)| p.min(*q))
            .sum();
        (1.0 - overlap).clamp(0.0, 1.0)
    };
    let mut worst: f64 = 0.0;
    if n_pairs.saturating_mul(n_pairs) <= sample_budget {
        for i in 0..n_pairs {
            for j in i + 1..n_pairs {
                worst = worst.max(gap(i, j));
            }
        }
    } else {
        for _ in 0..sample_budget {
            worst = worst.max(gap(rng.gen_range(0..n_pairs), rng.gen_range(0..n_pairs)));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hard_instance::{build_hard_instance, hard_instance_gain, HardInstanceParams, SignPattern};
    use crate::mdp::tests::{random_tabular, two_cycle};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hard(d: usize) -> (HardInstanceParams, LinearMixtureMdp) {
        let p = HardInstanceParams::new(d, 10.0, 6.0, 2.0).unwrap();
        let mdp = build_hard_instance(&p, &SignPattern::from_seed(d, 4)).unwrap();
        (p, mdp)
    }

    fn random_conf(d: usize, seed: u64, center: &[f64], radius: f64) -> ConfidenceEllipsoid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut l = PsdLedger::new(d, 1.0).unwrap();
        for _ in 0..3 * d {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            l.rank_one_update(&x, 1.0).unwrap();
        }
        ConfidenceEllipsoid::new(center.to_vec(), l, radius).unwrap()
    }

    #[test]
    fn degenerate_backup_is_true_bellman() {
        let mdp = random_tabular(3, 2, 4);
        let conf = ConfidenceEllipsoid::point(mdp.theta_star().to_vec());
        let u = [0.0, 1.5, -0.7];
        for s in 0..3 {
            for a in 0..2 {
                let want = mdp.reward(s, a) + mdp.expected_value(&u, s, a);
                assert_relative_eq!(optimistic_backup(&u, &conf, &mdp, s, a), want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn constant_u_backup() {
        let mdp = random_tabular(3, 2, 5);
        let conf = random_conf(mdp.dim(), 1, mdp.theta_star(), 3.0);
        for s in 0..3 {
            for a in 0..2 {
                assert_relative_eq!(
                    optimistic_backup(&[2.5; 3], &conf, &mdp, s, a),
                    mdp.reward(s, a) + 2.5,
                    epsilon = 1e-12
                );
            }
        }
    }

    /// Grid search of `max sum_j p_j u_j` over parameters in the ellipsoid
    /// whose every `(s, a)` slice is a probability vector, for a 2-state,
    /// 1-action one-hot MDP (`d = 4`, `theta = (p0, 1-p0, p1, 1-p1)`).
    fn grid_oracle(conf: &ConfidenceEllipsoid, u: &[f64], s: usize, steps: usize) -> Option<f64> {
        let mut best: Option<f64> = None;
        for i in 0..=steps {
            for j in 0..=steps {
                let (p0, p1) = (i as f64 / steps as f64, j as f64 / steps as f64);
                let theta = [p0, 1.0 - p0, p1, 1.0 - p1];
                if conf.distance(&theta).unwrap() <= conf.radius {
                    let p = if s == 0 { p0 } else { p1 };
                    let v = p * u[0] + (1.0 - p) * u[1];
                    best = Some(best.map_or(v, |b: f64| b.max(v)));
                }
            }
        }
        best
    }

    #[test]
    fn backup_dominates_constrained_grid_maximum() {
        let p = [0.3, 0.7, 0.6, 0.4];
        let mdp = LinearMixtureMdp::tabular(2, 1, &p, vec![0.0, 1.0], 3.0).unwrap();
        let u = [0.0, 2.0];
        for (seed, radius) in [(1, 0.05), (2, 0.2), (3, 0.6), (4, 2.0)] {
            let conf = random_conf(4, seed, &p, radius);
            for s in 0..2 {
                let oracle = grid_oracle(&conf, &u, s, 400).unwrap();
                let got = optimistic_backup(&u, &conf, &mdp, s, 0) - mdp.reward(s, 0);
                assert!(got >= oracle - 1e-12, "surrogate {got} below oracle {oracle}");
                assert!(got <= 2.0 + 1e-12);
            }
        }
    }

    #[test]
    fn backup_matches_grid_when_ellipsoid_lies_in_simplex_plane() {
        // Very high precision along the row-sum directions confines the
        // ellipsoid to the affine hull of the simplex, where the closed form
        // and the constrained maximum coincide.
        let p = [0.3, 0.7, 0.6, 0.4];
        let mdp = LinearMixtureMdp::tabular(2, 1, &p, vec![0.0, 1.0], 3.0).unwrap();
        let mut l = PsdLedger::new(4, 1.0).unwrap();
        l.rank_one_update(&[1.0, 1.0, 0.0, 0.0], 1e9).unwrap();
        l.rank_one_update(&[0.0, 0.0, 1.0, 1.0], 1e9).unwrap();
        let conf = ConfidenceEllipsoid::new(p.to_vec(), l, 0.1).unwrap();
        let u = [0.0, 2.0];
        let steps = 2000;
        let resolution = 2.0 / steps as f64;
        for s in 0..2 {
            let oracle = grid_oracle(&conf, &u, s, steps).unwrap();
            let got = optimistic_backup(&u, &conf, &mdp, s, 0) - mdp.reward(s, 0);
            assert!((got - oracle).abs() <= resolution + 1e-6, "{got} vs {oracle}");
        }
    }

    #[test]
    fn single_state_single_action() {
        let mdp = LinearMixtureMdp::tabular(1, 1, &[1.0], vec![0.3], 1.0).unwrap();
        let conf = random_conf(1, 0, &[1.0], 5.0);
        let res = run_evi(&conf, &mdp, 1e-6, 100).unwrap();
        assert_relative_eq!(res.rho_k, 0.3, epsilon = 1e-12);
        assert!(res.iterations <= 2);
        assert_eq!(res.policy.actions(), &[0]);
    }

    #[test]
    fn hard_instance_degenerate_gain() {
        for d in [2, 4, 8] {
            let (p, mdp) = hard(d);
            let conf = ConfidenceEllipsoid::point(mdp.theta_star().to_vec());
            let res = run_evi(&conf, &mdp, 1e-6, 100_000).unwrap();
            assert!((res.rho_k - hard_instance_gain(&p)).abs() <= 1e-6);
            assert_eq!(res.policy.action(0), SignPattern::from_seed(d, 4).matching_action());
        }
    }

    #[test]
    fn deterministic_cycle_gain() {
        // Periodic chain: plain value iteration differences oscillate, so
        // the span rule only fires once the iterates settle.
        let mdp = two_cycle();
        let conf = ConfidenceEllipsoid::point(mdp.theta_star().to_vec());
        let err = run_evi(&conf, &mdp, 1e-6, 1000).unwrap_err();
        assert!(matches!(err, Error::EviNonConvergence { .. }));
        // Damped iteration handles the periodic chain.
        let opts = EviOptions {
            damping: 0.5,
            ..EviOptions::new(1e-9, 1000)
        };
        let res = run_evi_with(&conf, &mdp, &[0.0, 0.0], &opts).unwrap();
        assert_relative_eq!(res.rho_k, 0.5, epsilon = 1e-9);
        assert_relative_eq!(res.rho_k, mdp.optimal_gain().unwrap().rho, epsilon = 1e-9);
        for dlt in &res.last_difference {
            assert!((dlt - 0.5).abs() <= 1e-9);
        }
    }

    #[test]
    fn non_convergence_reports_span_gap() {
        let mdp = two_cycle();
        let conf = ConfidenceEllipsoid::point(mdp.theta_star().to_vec());
        match run_evi(&conf, &mdp, 1e-3, 7) {
            Err(Error::EviNonConvergence { max_iters, last_span_gap }) => {
                assert_eq!(max_iters, 7);
                assert_relative_eq!(last_span_gap, 1.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn result_invariants_on_random_confidence_sets() {
        for seed in 0..20 {
            let mdp = random_tabular(3, 3, seed);
            let conf = random_conf(mdp.dim(), seed, mdp.theta_star(), 0.3 * (seed % 4) as f64);
            let eps = 1e-4;
            let res = run_evi(&conf, &mdp, eps, 100_000).unwrap();
            assert!(res.final_span_gap <= eps);
            let (lo, hi) = min_max(res.w.iter().copied());
            assert!((lo + hi).abs() <= 1e-10);
            assert!(res.w.iter().all(|w| w.abs() <= res.value_span / 2.0 + 1e-12));
            for dlt in &res.last_difference {
                assert!((dlt - res.rho_k).abs() <= eps);
            }
            // Optimism: theta* is the center, hence inside the set.
            let rho_star = mdp.optimal_gain().unwrap().rho;
            assert!(res.rho_k >= rho_star - eps - 1e-9, "{} < {rho_star}", res.rho_k);
        }
    }

    #[test]
    fn shift_invariance() {
        let (_, mdp) = hard(4);
        let conf = random_conf(4, 9, mdp.theta_star(), 0.5);
        let opts = EviOptions::new(1e-6, 100_000);
        let a = run_evi_with(&conf, &mdp, &[0.0, 0.0], &opts).unwrap();
        let b = run_evi_with(&conf, &mdp, &[7.5, 7.5], &opts).unwrap();
        assert_eq!(a.policy, b.policy);
        assert_relative_eq!(a.rho_k, b.rho_k, epsilon = 1e-12);
    }

    #[test]
    fn default_iteration_cap() {
        assert_eq!(default_max_iters(10.0, 0.01), 10_000);
        assert_eq!(default_max_iters(10.0, 1e-9), 1_000_000);
    }

    #[test]
    fn contraction_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let same = LinearMixtureMdp::tabular(2, 2, &[0.3, 0.7, 0.3, 0.7, 0.3, 0.7, 0.3, 0.7], vec![0.0; 4], 2.0)
            .unwrap();
        let conf = ConfidenceEllipsoid::point(same.theta_star().to_vec());
        assert_relative_eq!(contraction_coefficient(&conf, &same, &[0.0, 1.0], 1000, &mut rng), 0.0, epsilon = 1e-15);

        let cycle = two_cycle();
        let conf = ConfidenceEllipsoid::point(cycle.theta_star().to_vec());
        assert_relative_eq!(contraction_coefficient(&conf, &cycle, &[0.0, 1.0], 1000, &mut rng), 1.0);
    }

    #[test]
    fn contraction_hard_instance_enumeration() {
        let (p, mdp) = hard(4);
        let signs = SignPattern::from_seed(4, 4);
        let theta = p.theta(&signs);
        let conf = ConfidenceEllipsoid::point(mdp.theta_star().to_vec());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let got = contraction_coefficient(&conf, &mdp, &[0.0, 1.0], usize::MAX, &mut rng);
        // Enumerate all action pairs directly from the closed-form rows.
        let up = |a: usize| -> f64 {
            (0..3)
                .map(|i| crate::mdp::TwoStateFeatures::action_sign(a, i) * theta[i])
                .sum::<f64>()
        };
        let delta = p.delta;
        let mut want: f64 = 0.0;
        for a in 0..8 {
            let (q0, q1) = (1.0 - delta - up(a), delta + up(a));
            // versus x1
            want = want.max(1.0 - (q0.min(delta) + q1.min(1.0 - delta)));
            for b in 0..8 {
                let (r0, r1) = (1.0 - delta - up(b), delta + up(b));
                want = want.max(1.0 - (q0.min(r0) + q1.min(r1)));
            }
        }
        assert_relative_eq!(got, want, epsilon = 1e-12);
    }

    #[test]
    fn clamp_keeps_iterates_finite() {
        let (_, mdp) = hard(3);
        let conf = random_conf(3, 2, &[0.0, 0.0, 0.0], 1e6);
        let res = run_evi(&conf, &mdp, 1e-6, 10_000).unwrap();
        assert!(res.u.iter().all(|v| v.is_finite()));
        assert!(res.rho_k <= 1.0 + 1e-12);
    }
}
