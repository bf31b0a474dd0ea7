mod common;

use std::sync::Arc;

use fdtl::aggregate::{fit_atlflr, split_target, AggregationMethod, CandidateSets};
use fdtl::fda::{quad_weights, uniform_grid};
use fdtl::flr::{fit_oflr, FitOptions, RoutePreference, SolveRoute};
use fdtl::risk::{excess_risk_analytic, target_excess_risk, ExperimentSetup, FittedPredictor, PredictorLaw};
use fdtl::simgen::{generate_scenario, MeanFunction, ScenarioConfig};
use fdtl::transfer::{fit_tlflr, TransferMode};
use fdtl::{BetaEstimate, KernelSpec, LambdaRule, TaskDataset};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::random_curve;

fn task(seed: u64, id: &str, n: usize, grid: &Arc<[f64]>) -> TaskDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let curves = (0..n).map(|_| random_curve(&mut rng, grid)).collect();
    let y = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    TaskDataset::new(id, curves, y).unwrap()
}

fn grid(n: usize) -> Arc<[f64]> {
    uniform_grid(0.0, 1.0, n).unwrap().into()
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn oflr_is_affine_equivariant_in_y(seed in any::<u64>(), n in 3..15usize, a in 0.1..5.0f64, b in -3.0..3.0f64, log_l in -4.0..0.0f64) {
        let k = KernelSpec::eigen_expansion_default();
        let t = task(seed, "t", n, &grid(20));
        let moved = TaskDataset::new("m", t.curves.clone(), t.responses.iter().map(|y| a * y + b).collect()).unwrap();
        let lambda = 10f64.powf(log_l);
        let opts = FitOptions::default();
        let f = fit_oflr(&[&t], &k, lambda, &opts).unwrap();
        let g = fit_oflr(&[&moved], &k, lambda, &opts).unwrap();
        prop_assert!((g.intercept() - (a * f.intercept() + b)).abs() < 1e-8 * (1.0 + b.abs()));
        let scaled: Vec<f64> = f.beta_on_grid.values.iter().map(|v| a * v).collect();
        let scale = 1.0 + scaled.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(sup(&g.beta_on_grid.values, &scaled) < 1e-8 * scale);
    }

    #[test]
    fn solver_routes_agree(seed in any::<u64>(), n in 2..25usize, d in 5..40usize, log_l in -4.0..0.0f64) {
        let k = KernelSpec::matern(fdtl::MaternNu::FiveHalves, 0.4).unwrap();
        let t = task(seed, "t", n, &grid(d));
        let lambda = 10f64.powf(log_l);
        let fit = |r| fit_oflr(&[&t], &k, lambda, &FitOptions { route: RoutePreference::Force(r), ..FitOptions::default() }).unwrap();
        let (a, b) = (fit(SolveRoute::SharedGrid), fit(SolveRoute::Representer));
        let scale = 1.0 + a.beta_on_grid.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(sup(&a.beta_on_grid.values, &b.beta_on_grid.values) < 1e-7 * scale);
        prop_assert!((a.intercept() - b.intercept()).abs() < 1e-7 * (1.0 + a.intercept().abs()));
    }

    #[test]
    fn transfer_is_invariant_to_source_order(seed in any::<u64>(), sizes in prop::collection::vec(2..8usize, 2..5)) {
        let k = KernelSpec::eigen_expansion_default();
        let g = grid(15);
        let target = task(seed, "t", 6, &g);
        let sources: Vec<TaskDataset> = sizes.iter().enumerate().map(|(i, &n)| task(seed.wrapping_add(i as u64 + 1), &format!("s{i}"), n, &g)).collect();
        let fwd: Vec<&TaskDataset> = sources.iter().collect();
        let rev: Vec<&TaskDataset> = sources.iter().rev().collect();
        let opts = FitOptions::default();
        let a = fit_tlflr(&target, &fwd, &k, 0.01, 0.05, TransferMode::Full, &opts).unwrap();
        let b = fit_tlflr(&target, &rev, &k, 0.01, 0.05, TransferMode::Full, &opts).unwrap();
        let scale = 1.0 + a.combined_beta.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(sup(&a.combined_beta.values, &b.combined_beta.values) < 1e-9 * scale);
    }

    #[test]
    fn split_partitions_the_target(seed in any::<u64>(), n in 4..60usize) {
        let t = task(seed, "t", n, &grid(5));
        let (i, ic) = split_target(&t, seed).unwrap();
        prop_assert_eq!(i.len(), n / 2);
        prop_assert_eq!(i.len() + ic.len(), n);
        let mut all: Vec<u64> = i.responses.iter().chain(&ic.responses).map(|y| y.to_bits()).collect();
        let mut want: Vec<u64> = t.responses.iter().map(|y| y.to_bits()).collect();
        all.sort_unstable();
        want.sort_unstable();
        prop_assert_eq!(all, want);
    }

    #[test]
    fn candidate_sets_are_nested_prefixes(d in prop::collection::vec(0.0..10.0f64, 1..25)) {
        let c = CandidateSets::from_distances(d.clone()).unwrap();
        prop_assert_eq!(c.sets.len(), d.len() + 1);
        for l in 0..d.len() {
            prop_assert_eq!(c.sets[l].len(), l);
            prop_assert!(c.sets[l].iter().all(|s| c.sets[l + 1].contains(s)));
            prop_assert!(d[c.ranking[l]] <= d[*c.ranking.get(l + 1).unwrap_or(&c.ranking[l])]);
        }
    }

    #[test]
    fn quadrature_weights_integrate_constants(points in prop::collection::vec(0.0..1.0f64, 2..40)) {
        let mut g = points.clone();
        g.sort_by(f64::total_cmp);
        g.dedup();
        prop_assume!(g.len() >= 2);
        let w = quad_weights(&g).unwrap();
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - (g[g.len() - 1] - g[0])).abs() < 1e-12);
    }

    #[test]
    fn analytic_risk_is_a_nonnegative_form(c in prop::collection::vec(-1.0..1.0f64, 5), alpha in -1.0..1.0f64) {
        let g = uniform_grid(0.0, 1.0, 30).unwrap();
        let truth = BetaEstimate::new(g.clone(), g.iter().map(|t| t.sin()).collect()).unwrap();
        let est = BetaEstimate::new(
            g.clone(),
            g.iter().zip(&truth.values).map(|(&t, v)| v + c.iter().enumerate().map(|(k, a)| a * (k as f64 * t).cos()).sum::<f64>()).collect(),
        ).unwrap();
        let law = PredictorLaw { mean: MeanFunction::SinPiT, cov: KernelSpec::matern(fdtl::MaternNu::Half, 1.0).unwrap() };
        prop_assert!(excess_risk_analytic(&est, alpha, &truth, 0.0, &law).unwrap() >= 0.0);
        prop_assert_eq!(excess_risk_analytic(&truth, 0.0, &truth, 0.0, &law).unwrap(), 0.0);
        let doubled = BetaEstimate::new(g.clone(), est.values.iter().zip(&truth.values).map(|(e, t)| t + 2.0 * (e - t)).collect()).unwrap();
        let r1 = excess_risk_analytic(&est, alpha, &truth, 0.0, &law).unwrap();
        let r2 = excess_risk_analytic(&doubled, 2.0 * alpha, &truth, 0.0, &law).unwrap();
        prop_assert!((r2 - 4.0 * r1).abs() < 1e-10 * r1.max(1e-3));
    }
}

/// Sources drawn from the target law with `h = 0`: the aggregate should be
/// about as good as the best dictionary member on the true risk (the member
/// with the smallest mean risk, as in an oracle inequality).
#[test]
fn identical_sources_aggregate_near_best_member() {
    let setup = ExperimentSetup::default();
    let reps = 30;
    let mut agg = 0.0;
    let mut members = [0.0; 6];
    for rep in 0..reps {
        let cfg = ScenarioConfig {
            h: 0.0,
            num_sources: 5,
            transferable_ids: (0..5).collect(),
            n0: 100,
            source_cov: ScenarioConfig::default().target_cov,
            replication: rep,
            seed: 17,
            ..ScenarioConfig::default()
        };
        let scen = generate_scenario(&cfg).unwrap();
        let opts = FitOptions::with_eval_grid(cfg.grid());
        let seed = 17 ^ (u64::from(rep) << 32);
        let fit = fit_atlflr(
            &scen.target,
            &scen.source_refs(),
            &setup.kernel,
            20,
            &LambdaRule::default(),
            AggregationMethod::SparseStar,
            &opts,
            seed,
        )
        .unwrap();
        let risk = |intercept, beta: &BetaEstimate| {
            target_excess_risk(&FittedPredictor { intercept, beta: beta.clone() }, &scen, &setup).unwrap()
        };
        agg += risk(fit.result.aggregated_intercept, &fit.result.aggregated_beta);
        for (m, d) in members.iter_mut().zip(&fit.dictionary) {
            *m += risk(d.model.intercept, &d.beta);
        }
    }
    let best = members.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(agg <= 1.1 * best, "aggregate {agg} vs best member {best}");
}
