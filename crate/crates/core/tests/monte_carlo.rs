use eqpide_core::mc::{estimate_g, estimate_theta, simulate, spike_variation_batch, SimConfig};
use eqpide_core::{evaluate_strategy, solve_closed_form, LinearStrategy, MarketParams, MarketSpec, ValueFields};

fn setup(spec: MarketSpec) -> (MarketParams, eqpide_core::ClosedFormSolution, LinearStrategy) {
    let p = MarketParams::new(spec).unwrap();
    let cf = solve_closed_form(&p, 2000).unwrap();
    let strategy = LinearStrategy::new(cf.alpha_star.clone());
    (p, cf, strategy)
}

#[test]
fn feynman_kac_estimates_match_closed_forms() {
    for spec in [MarketSpec::e0(), MarketSpec::e1()] {
        let (p, cf, strategy) = setup(spec);
        let fields = cf.fields();
        let cfg = SimConfig::new(100_000, 500, 7);
        let theta = estimate_theta(&p, &strategy, 0.0, 1.0, 1.0, &cfg).unwrap();
        let g = estimate_g(&p, &strategy, 0.0, 1.0, 1.0, &cfg).unwrap();
        assert!(theta.agrees_with(fields.theta(0.0, 1.0, 1.0), 3.0, 0.0), "{theta:?}");
        assert!(g.agrees_with(fields.g(0.0, 1.0, 1.0), 3.0, 0.0), "{g:?}");
    }
}

#[test]
fn off_diagonal_start_matches_ansatz() {
    let (p, cf, strategy) = setup(MarketSpec::e1());
    let fields = cf.fields();
    let cfg = SimConfig::new(50_000, 200, 11).with_antithetic(true);
    let theta = estimate_theta(&p, &strategy, 0.5, 0.5, 1.5, &cfg).unwrap();
    assert!(theta.agrees_with(fields.theta(0.5, 0.5, 1.5), 3.0, 0.0), "{theta:?}");
}

#[test]
fn simulation_is_reproducible() {
    let (p, _, strategy) = setup(MarketSpec::e1());
    let cfg = SimConfig::new(200, 50, 3);
    let a = simulate(&p, &strategy, 0.0, 1.0, 1.0, &cfg, true).unwrap();
    let b = simulate(&p, &strategy, 0.0, 1.0, 1.0, &cfg, true).unwrap();
    assert_eq!(a, b);
    let c = simulate(&p, &strategy, 0.0, 1.0, 1.0, &SimConfig::new(200, 50, 4), true).unwrap();
    assert_ne!(a.wealth, c.wealth);
}

#[test]
fn equilibrium_resists_spikes_and_scaled_rule_does_not() {
    let (p, cf, strategy) = setup(MarketSpec::e0());
    let fields = cf.fields();
    let cfg = SimConfig::new(50_000, 400, 5);
    let a = cf.alpha_star.eval(0.25);
    let reports = spike_variation_batch(&p, &strategy, &fields, 0.25, 1.0, &[a - 0.5, a + 0.5], &[0.04, 0.02, 0.01], &cfg).unwrap();
    for r in &reports {
        assert!(r.one_sided_ok(3.0), "{r:?}");
    }

    let scaled = strategy.scaled(1.5);
    let scaled_fields = evaluate_strategy(&p, &scaled, 2000).unwrap().fields();
    let b = 1.5 * a;
    let reports = spike_variation_batch(&p, &scaled, &scaled_fields, 0.25, 1.0, &[b - 0.5, b + 0.5], &[0.04, 0.02, 0.01], &cfg).unwrap();
    assert!(reports.iter().any(|r| r.has_negative(5.0)), "{reports:?}");
}
