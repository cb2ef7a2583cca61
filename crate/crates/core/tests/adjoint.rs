use eqpide_core::adjoint::{adjoint_check, uniform_grid, AdjointOptions, ResidualKind};
use eqpide_core::mc::SimConfig;
use eqpide_core::{solve_closed_form, MarketParams, MarketSpec};

fn check(spec: MarketSpec, q_scale: f64) -> eqpide_core::adjoint::AdjointReport {
    let p = MarketParams::new(spec).unwrap();
    let cf = solve_closed_form(&p, 1000).unwrap();
    let cfg = SimConfig::new(20_000, 200, 17);
    let opts = AdjointOptions { q_scale, ..AdjointOptions::default() };
    adjoint_check(&p, &cf.fields(), 0.0, 1.0, &cfg, &opts, &uniform_grid(-2.0, 2.0, 401)).unwrap()
}

#[test]
fn residuals_vanish_along_equilibrium_paths() {
    for spec in [MarketSpec::e0(), MarketSpec::e1()] {
        let rep = check(spec, 1.0);
        assert!(rep.residuals_pass(), "{:#?}", rep.rows);
        assert!(rep.hbar.pass, "{:?}", rep.hbar);
        for row in &rep.rows {
            assert!(row.bias.abs() < 1e-4, "{row:?}");
        }
    }
}

#[test]
fn corrupted_q_is_detected() {
    let rep = check(MarketSpec::e1(), 2.0);
    let worst = rep
        .rows
        .iter()
        .filter(|r| r.kind == ResidualKind::PBrownian)
        .map(|r| (r.residual.mean - r.bias).abs() / r.residual.std_error)
        .fold(0.0, f64::max);
    assert!(worst > 5.0, "{worst}");
    assert!(!rep.hbar.pass);
    // the other residuals do not involve q
    assert!(rep.rows.iter().filter(|r| r.kind != ResidualKind::PBrownian).all(|r| r.pass));
}

#[test]
fn monte_carlo_mean_option_agrees_with_exact_mean() {
    let p = MarketParams::new(MarketSpec::e1()).unwrap();
    let cf = solve_closed_form(&p, 1000).unwrap();
    let cfg = SimConfig::new(2_000, 100, 3);
    let grid = uniform_grid(-2.0, 2.0, 401);
    let exact = adjoint_check(&p, &cf.fields(), 0.0, 1.0, &cfg, &AdjointOptions::default(), &grid).unwrap();
    let opts = AdjointOptions { expectation_paths: 100_000, ..AdjointOptions::default() };
    let mc = adjoint_check(&p, &cf.fields(), 0.0, 1.0, &cfg, &opts, &grid).unwrap();
    assert!(mc.expected_terminal.agrees_with(exact.expected_terminal.mean, 4.0, 0.0), "{:?}", mc.expected_terminal);
}
