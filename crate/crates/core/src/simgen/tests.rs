use super::*;
use approx::assert_relative_eq;

fn grid(n: usize) -> Vec<f64> {
    uniform_grid(0.0, 1.0, n).unwrap()
}

#[test]
fn degenerate_covariance_returns_mean() {
    let g = grid(30);
    let mu: Vec<f64> = g.iter().map(|&t| MeanFunction::SinPiT.eval(t)).collect();
    let mut rng = stream_rng(1, 0, 0);
    let draws = sample_mvn(&mu, &DMatrix::zeros(30, 30), 20, &mut rng).unwrap();
    for d in draws {
        let sup = d.iter().zip(&mu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(sup < 1e-3, "{sup}");
    }
}

#[test]
fn gp_moments() {
    let g = grid(11);
    let cov = KernelSpec::matern(MaternNu::Half, 1.0).unwrap();
    let mut rng = stream_rng(2, 0, 0);
    let n = 5000;
    let draws = sample_gp(MeanFunction::SinPiT, &cov, &g, n, &mut rng).unwrap();
    for (j, &t) in g.iter().enumerate() {
        let mean = draws.iter().map(|c| c.values()[j]).sum::<f64>() / n as f64;
        assert!((mean - (PI * t).sin()).abs() < 4.0 / (n as f64).sqrt());
    }
    // grid index 2 is t = 0.2, index 8 is t = 0.8
    let centered = |c: &Curve, j: usize| c.values()[j] - (PI * g[j]).sin();
    let emp = draws.iter().map(|c| centered(c, 2) * centered(c, 8)).sum::<f64>() / n as f64;
    assert!((emp - (-0.6f64).exp()).abs() < 0.05, "{emp}");
}

#[test]
fn target_slopes() {
    let g = vec![0.0, 0.5, 1.0];
    assert_relative_eq!(target_beta(BetaScenario::Cosine, &g, 50).unwrap().values[0], 4.0);
    assert_relative_eq!(target_beta(BetaScenario::CosineSine, &g, 50).unwrap().values[0], 4.0);
    // at t = 0: 4√2·√2·Σ(−1)^{k−1}k^{−2} = 8·π²/12
    let b1 = target_beta(BetaScenario::Series, &g, 20_000).unwrap();
    assert_relative_eq!(b1.values[0], 8.0 * PI * PI / 12.0, epsilon = 1e-6);
    let cs = target_beta(BetaScenario::CosineSine, &[1.0 / 6.0], 50).unwrap();
    assert_relative_eq!(cs.values[0], 4.0, epsilon = 1e-12);
}

#[test]
fn transferable_perturbation() {
    let g = grid(50);
    let b0 = target_beta(BetaScenario::Cosine, &g, 50).unwrap();
    let mut rng = stream_rng(3, 0, 0);
    assert_eq!(transferable_source_beta(&b0, 0.0, &mut rng, 50), b0);

    let coefs = perturbation_coefficients(2.0, &[1.0; 50]);
    assert_relative_eq!(coefs[0], 12f64.sqrt() * 2.0 / PI, epsilon = 1e-15);
    assert_relative_eq!(coefs[2], 12f64.sqrt() * 2.0 / (9.0 * PI), epsilon = 1e-15);

    let draws = 2000;
    let mut mean = vec![0.0; g.len()];
    for _ in 0..draws {
        let b = transferable_source_beta(&b0, 1.0, &mut rng, 50);
        for (m, (v, t)) in mean.iter_mut().zip(b.values.iter().zip(&b0.values)) {
            *m += (v - t) / draws as f64;
        }
    }
    // pointwise sd of the perturbation is at most √(Σ 2·12/(3π²k⁴)) < 1.3
    assert!(mean.iter().all(|m| m.abs() < 4.0 * 1.3 / (draws as f64).sqrt()));
}

#[test]
fn h_ball_bound() {
    let h = 1.0;
    let bound = h * (12.0 / (PI * PI) * PI * PI / 6.0f64).sqrt();
    let mut rng = stream_rng(4, 0, 0);
    for _ in 0..200 {
        let u: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let coefs = perturbation_coefficients(h, &u);
        // K-norm² = Σ c_k² / τ_k with τ_k = k⁻²
        let norm2: f64 = coefs.iter().enumerate().map(|(i, c)| c * c * ((i + 1) * (i + 1)) as f64).sum();
        assert!(norm2.sqrt() <= bound);
    }
}

#[test]
fn scenario_shapes_and_determinism() {
    let cfg = ScenarioConfig {
        transferable_ids: vec![0, 2],
        num_sources: 3,
        n0: 12,
        nl: 8,
        grid_points: 20,
        seed: 9,
        ..Default::default()
    };
    let a = generate_scenario(&cfg).unwrap();
    let b = generate_scenario(&cfg).unwrap();
    assert_eq!(a.target.responses, b.target.responses);
    assert_eq!(a.sources[2].responses, b.sources[2].responses);
    assert_eq!(a.true_source_betas, b.true_source_betas);
    assert_eq!(a.target.len(), 12);
    assert!(a.sources.iter().all(|s| s.len() == 8));
    let g = a.target.curves[0].grid().to_vec();
    assert!(a.sources.iter().flat_map(|s| &s.curves).all(|c| c.grid() == &g[..]));
    assert_eq!(a.transferable_sources().len(), 2);

    let other = generate_scenario(&ScenarioConfig { replication: 1, ..cfg.clone() }).unwrap();
    assert_ne!(a.target.responses, other.target.responses);
}

#[test]
fn zero_slope_zero_noise_gives_zero_responses() {
    let cfg = ScenarioConfig { num_sources: 0, transferable_ids: vec![], n0: 5, noise_sd: 0.0, ..Default::default() };
    let g = cfg.grid();
    let w = quad_weights(&g).unwrap();
    let mut rng = stream_rng(0, 0, 0);
    let x = sample_gp(MeanFunction::SinPiT, &cfg.target_cov, &g, 5, &mut rng).unwrap();
    let y = responses(&x, &BetaEstimate::zero(&g), &w, 0.0, &mut rng);
    assert!(y.iter().all(|v| *v == 0.0));
    let s = generate_scenario(&cfg).unwrap();
    assert!(s.sources.is_empty());
}

#[test]
fn noiseless_responses_match_dense_quadrature() {
    // Densify each path by linear interpolation and integrate against the
    // exact slope with a fine trapezoid rule. The gap is the 50-point
    // trapezoid error, about 2e-3 for these rough paths.
    let cfg = ScenarioConfig {
        num_sources: 0,
        transferable_ids: vec![],
        n0: 10,
        noise_sd: 0.0,
        ..Default::default()
    };
    let s = generate_scenario(&cfg).unwrap();
    let dense = grid(20_001);
    let wd = quad_weights(&dense).unwrap();
    for (c, y) in s.target.curves.iter().zip(&s.target.responses) {
        let oracle: f64 = dense
            .iter()
            .zip(&wd)
            .map(|(&t, w)| w * crate::fda::interpolate(c.grid(), c.values(), t) * 4.0 * (3.0 * PI * t).cos())
            .sum();
        assert!((y - oracle).abs() < 3e-3, "{y} vs {oracle}");
    }
}

#[test]
fn invalid_configs() {
    let bad = [
        ScenarioConfig { h: -1.0, ..Default::default() },
        ScenarioConfig { transferable_ids: vec![0, 0], ..Default::default() },
        ScenarioConfig { transferable_ids: vec![25], ..Default::default() },
        ScenarioConfig { grid_points: 1, ..Default::default() },
        ScenarioConfig { n0: 0, ..Default::default() },
    ];
    for cfg in bad {
        assert!(matches!(generate_scenario(&cfg), Err(Error::Argument(_))));
    }
}

#[test]
fn csv_round_trip() {
    let cfg = ScenarioConfig { transferable_ids: vec![0], num_sources: 2, n0: 4, nl: 3, grid_points: 6, ..Default::default() };
    let s = generate_scenario(&cfg).unwrap();
    let (mut c, mut r) = (Vec::new(), Vec::new());
    s.write_csv(&mut c, &mut r).unwrap();
    let back = crate::fda::io::read_tasks(&c[..], &r[..]).unwrap();
    assert_eq!(back.len(), 3);
    assert_eq!(back[0].responses, s.target.responses);
    assert_eq!(back[2].curves[1].values(), s.sources[1].curves[1].values());
}

#[test]
fn scenario_serde() {
    let cfg = ScenarioConfig::default();
    let json = serde_json::to_string(&cfg).unwrap();
    assert!(json.contains("\"beta_scenario\":2"));
    let back: ScenarioConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, cfg);
    assert!(serde_json::from_str::<ScenarioConfig>(r#"{"beta_scenario":4}"#).is_err());
}
