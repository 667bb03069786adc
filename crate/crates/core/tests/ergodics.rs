use std::f64::consts::PI;

use stochflux_core::ergodics::{contraction_test, invariant_estimate, ordering_experiment, EnsembleConfig, SignSummary};
use stochflux_core::model::Hamiltonian;
use stochflux_core::noise::gradient_variance;
use stochflux_core::{builtin_model, Field, Grid, KickSpec, ModelFamily, SolverConfig};

fn sine(grid: Grid, offset: f64) -> Field {
    let l = grid.length();
    Field::from_fn(grid, |x| offset + (2.0 * PI * x / l).sin())
}

#[test]
fn linear_flow_distance_ignores_the_kicks() {
    let spec = builtin_model(ModelFamily::Burgers).with_hamiltonian(Hamiltonian::Zero);
    let grid = Grid::new(16.0, 256).unwrap();
    let cfg = SolverConfig::default();
    let (u0, v0) = (sine(grid, 0.3), Field::constant(grid, -0.2));
    let kicks = KickSpec::default().with_seed(4);
    let forced = contraction_test(&u0, &v0, &spec, &cfg, 2.5, Some((&kicks, 4)), None).unwrap();
    let free = contraction_test(&u0, &v0, &spec, &cfg, 2.5, None, None).unwrap();
    assert_eq!(forced.times, free.times);
    for (a, b) in forced.l1.iter().zip(&free.l1) {
        assert!((a - b).abs() <= 1e-10 * b, "{a} vs {b}");
    }
}

#[test]
fn burgers_l1_distance_does_not_grow() {
    let spec = builtin_model(ModelFamily::Burgers);
    let grid = Grid::new(16.0, 256).unwrap();
    let (u0, v0) = (sine(grid, 0.0), Field::constant(grid, 0.0));
    let r = contraction_test(&u0, &v0, &spec, &SolverConfig::default(), 1.0, None, Some(0.5)).unwrap();
    assert!(r.non_increasing(1e-12), "relative increase {}", r.max_relative_increase);
    assert!(r.l1.last().unwrap() <= &r.l1[0]);
    assert!(r.weighted.is_some());
}

#[test]
fn crossing_initials_are_mixed() {
    let spec = builtin_model(ModelFamily::Burgers);
    let grid = Grid::new(16.0, 256).unwrap();
    let initials = [Field::constant(grid, 0.0), sine(grid, 0.0)];
    let r = ordering_experiment(&initials, &spec, &KickSpec::default(), &SolverConfig::default(), 2.0, 1.0, 9).unwrap();
    let p = r.pair(1, 0).unwrap();
    assert_eq!(p.summary, SignSummary::Mixed);
    assert!(p.mixed_steps > 0);
    assert!(p.last_mixed_time.is_some_and(|t| t > 0.0));
    assert_eq!(p.min_diff.len(), r.times.len());
}

#[test]
fn tanh_derivative_bound_holds_with_unit_quarter_gradient_variance() {
    let spec = builtin_model(ModelFamily::TanhKappaSubquadratic);
    let grid = Grid::new(16.0, 256).unwrap();
    let base = KickSpec::default();
    let sigma = base.sigma_target * (0.25 / gradient_variance(&base, grid.length())).sqrt();
    let kicks = base.with_sigma(sigma);
    assert!((gradient_variance(&kicks, grid.length()) - 0.25).abs() < 1e-12);
    let ens = EnsembleConfig::new(8, 4.0);
    let stats = invariant_estimate(0.0, &spec, &kicks, &SolverConfig::default(), &grid, &ens, 12).unwrap();
    let checks = stats.derivative_bound_checks();
    assert!(!checks.is_empty());
    for c in checks {
        assert!((c.rhs - 0.5).abs() < 1e-12);
        assert!(c.margin() >= 0.0, "t {}: {} > {}", c.t, c.lhs, c.rhs);
    }
}
