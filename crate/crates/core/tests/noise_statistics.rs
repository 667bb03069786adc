use stochflux_core::noise::{check_exp_moment, gradient_variance, mean_and_se};
use stochflux_core::{sample_kick, Grid, KickSpec};

const SAMPLES: usize = 10_000;

fn grid() -> Grid {
    Grid::new(16.0, 256).unwrap()
}

/// `(V_s(x_i), ∂xV_s(x_i))` for `s = 0..n` at the given cells.
fn draws(spec: &KickSpec, cells: &[usize], n: usize) -> Vec<Vec<(f64, f64)>> {
    let g = grid();
    (0..n as i64)
        .map(|s| {
            let k = sample_kick(spec, &g, s).unwrap();
            cells
                .iter()
                .map(|&i| (k.potential.values()[i], k.gradient.values()[i]))
                .collect()
        })
        .collect()
}

fn variance(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

#[test]
fn pointwise_and_gradient_variance_match_the_spectrum() {
    let spec = KickSpec::default().with_seed(101);
    let centre = grid().cells() / 2;
    let d = draws(&spec, &[centre], SAMPLES);
    let v: Vec<f64> = d.iter().map(|r| r[0].0).collect();
    let dv: Vec<f64> = d.iter().map(|r| r[0].1).collect();
    let target = spec.sigma_target * spec.sigma_target;
    assert!((variance(&v) / target - 1.0).abs() < 0.05, "var {}", variance(&v));
    let gv = gradient_variance(&spec, 16.0);
    let mc = dv.iter().map(|x| x * x).sum::<f64>() / dv.len() as f64;
    assert!((mc / gv - 1.0).abs() < 0.05, "MC {mc} vs exact {gv}");
}

#[test]
fn successive_kicks_are_uncorrelated() {
    let spec = KickSpec::default().with_seed(202);
    let d = draws(&spec, &[17], SAMPLES);
    let v: Vec<f64> = d.iter().map(|r| r[0].0).collect();
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let num: f64 = v.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    let den: f64 = v.iter().map(|x| (x - m) * (x - m)).sum();
    let rho = num / den;
    assert!(rho.abs() < 3.0 / (v.len() as f64).sqrt(), "lag-1 correlation {rho}");
}

#[test]
fn law_is_translation_invariant() {
    let spec = KickSpec::default().with_seed(303);
    let d = draws(&spec, &[10, 200], SAMPLES);
    let sq = |j: usize| -> Vec<f64> { d.iter().map(|r| r[j].0 * r[j].0).collect() };
    let (a, b) = (mean_and_se(&sq(0)), mean_and_se(&sq(1)));
    let z = (a.estimate - b.estimate).abs() / a.std_error.hypot(b.std_error);
    assert!(z < 5.0, "variances {} vs {} (z = {z})", a.estimate, b.estimate);
}

#[test]
fn exp_moment_is_self_consistent() {
    let g = grid();
    let spec = KickSpec::default().with_seed(404);
    let small = check_exp_moment(&spec, &g, 0.5, 10_000).unwrap();
    let large = check_exp_moment(&spec.with_seed(405), &g, 0.5, 100_000).unwrap();
    let z = (small.estimate - large.estimate).abs() / small.std_error.hypot(large.std_error);
    assert!(z < 3.0, "{} vs {} (z = {z})", small.estimate, large.estimate);
    assert!(small.estimate > 1.0);
    assert_eq!(check_exp_moment(&spec, &g, 0.0, 100).unwrap().estimate, 1.0);
    assert_eq!(check_exp_moment(&spec.with_sigma(0.0), &g, 0.5, 100).unwrap().estimate, 1.0);
}
