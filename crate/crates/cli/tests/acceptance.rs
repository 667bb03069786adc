//! Acceptance suite. Every test prints one `acceptance <id> ...: PASS|FAIL`
//! line straight to stdout (bypassing capture) and then asserts it.
//! Tests hold a shared lock so that runtimes are measured one at a time.

use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use stochflux_core::ergodics::{
    contraction_test, empirical_distribution, invariant_estimate, moment_growth_scan, ordering_experiment,
    EnsembleConfig, EnsembleStats, MomentScan, SignSummary,
};
use stochflux_core::field::{mean, pairwise_sum, sup_norm};
use stochflux_core::model::{validate_assumptions, Diffusivity, Hamiltonian};
use stochflux_core::noise::derive_seed;
use stochflux_core::solver::{phi_flow, psi, run_coupled, step_unforced, trajectory_kicks, FlowObserver};
use stochflux_core::transforms::{
    evolve_hopf, hopf_moment_growth, hopf_pde_residual, integrate_hj, supersolution_bound, HopfField,
    HopfTrajectory,
};
use stochflux_core::{builtin_model, sample_kick, Field, FluxScheme, Grid, KickSpec, ModelFamily, ModelSpec, SolverConfig};

const FAMILIES: [ModelFamily; 2] = [ModelFamily::Burgers, ModelFamily::TanhKappaSubquadratic];

/// Relative tolerance of the pathwise structure checks.
const EXACT_TOL: f64 = 1e-10;
/// Cushion, in standard errors, for Monte Carlo comparisons.
const Z_MAX: f64 = 3.0;
/// Minimal observed convergence order under grid refinement.
const MIN_ORDER: f64 = 1.9;

fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let line = format!(
        "acceptance {id} {name}: {} ({detail})\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn within(elapsed: Duration, secs: u64) -> bool {
    elapsed <= Duration::from_secs(secs)
}

/// Uniform draw in `[0, 1)` keyed by `(seed, parts)`.
fn uniform(seed: u64, parts: &[u64]) -> f64 {
    (derive_seed(seed, parts) >> 11) as f64 / (1u64 << 53) as f64
}

fn rough_field(grid: Grid, seed: u64, offset: f64, amplitude: f64) -> Field {
    Field::new(
        grid,
        (0..grid.cells())
            .map(|i| offset + amplitude * (2.0 * uniform(seed, &[i as u64]) - 1.0))
            .collect(),
    )
    .unwrap()
}

fn default_grid() -> Grid {
    Grid::new(16.0, 512).unwrap()
}

#[test]
fn acceptance_1_assumption_validation() {
    let _g = serial();
    let start = Instant::now();
    let mut details = Vec::new();
    let mut builtins_pass = true;
    for fam in FAMILIES {
        let rep = validate_assumptions(&builtin_model(fam), -10.0, 10.0, 4001).unwrap();
        let worst = rep.entries.iter().map(|e| e.slack).fold(f64::INFINITY, f64::min);
        builtins_pass &= rep.passed();
        details.push(format!("{fam} min slack {worst:.3e}"));
    }
    let broken = builtin_model(ModelFamily::Burgers).with_diffusivity(Diffusivity::Affine {
        intercept: 1.0,
        slope: 0.5,
    });
    let rep = validate_assumptions(&broken, -10.0, 10.0, 4001).unwrap();
    let broken_fails = !rep.passed();
    let elapsed = start.elapsed();
    let pass = builtins_pass && broken_fails && within(elapsed, 1);
    details.push(format!("broken model rejected: {broken_fails}, {elapsed:.2?}"));
    report(1, "assumption validation", pass, &details.join(", "));
    assert!(pass);
}

/// Projection of `u` on `sin(kx)`.
fn sine_amplitude(u: &Field, k: f64) -> f64 {
    let g = u.grid();
    let s: Vec<f64> = (0..g.cells()).map(|i| (k * g.center(i)).sin()).collect();
    let num: Vec<f64> = u.values().iter().zip(&s).map(|(a, b)| a * b).collect();
    let den: Vec<f64> = s.iter().map(|b| b * b).collect();
    pairwise_sum(&num) / pairwise_sum(&den)
}

#[test]
fn acceptance_2_heat_oracle() {
    let _g = serial();
    let start = Instant::now();
    let spec = builtin_model(ModelFamily::Burgers).with_hamiltonian(Hamiltonian::Zero);
    let k = 2.0 * std::f64::consts::PI / 8.0;
    let t = 0.1;
    let exact = (-k * k * t).exp();
    let err = |n: usize| {
        let g = Grid::new(8.0, n).unwrap();
        let u = psi(&Field::from_fn(g, |x| (k * x).sin()), t, &spec, &SolverConfig::default()).unwrap();
        (sine_amplitude(&u, k) / exact - 1.0).abs()
    };
    let (e256, e512) = (err(256), err(512));
    let order = (e256 / e512).log2();
    let elapsed = start.elapsed();
    let pass = e256 < 0.01 && e512 < 0.003 && order >= MIN_ORDER && within(elapsed, 5);
    report(
        2,
        "heat oracle",
        pass,
        &format!("rel err N=256 {e256:.3e}, N=512 {e512:.3e}, order {order:.3}, {elapsed:.2?}"),
    );
    assert!(pass);
}

struct MeanWatch {
    m0: f64,
    worst: f64,
    steps: u64,
}

impl FlowObserver for MeanWatch {
    fn step(&mut self, _member: usize, _t: f64, _dt: f64, u: &Field) {
        self.steps += 1;
        self.worst = self.worst.max((mean(u) - self.m0).abs());
    }

    fn wants_steps(&self) -> bool {
        true
    }
}

#[test]
fn acceptance_3_exact_structure() {
    let _g = serial();
    let start = Instant::now();
    let grid = default_grid();
    let cfg = SolverConfig::default();
    let kicks = KickSpec::default();
    let mut details = Vec::new();
    let mut pass = true;

    for fam in FAMILIES {
        let spec = builtin_model(fam);
        let u0 = Field::from_fn(grid, |x| 0.7 + (std::f64::consts::PI * x / 8.0).sin());
        let scale = sup_norm(&u0).max(1.0);
        let mut watch = MeanWatch {
            m0: mean(&u0),
            worst: 0.0,
            steps: 0,
        };
        let mut members = vec![u0];
        run_coupled(&mut members, 0.0, 3.0, &spec, &kicks, &cfg, 17, &mut watch).unwrap();
        let ok = watch.steps >= 10_000 && watch.worst <= EXACT_TOL * scale;
        pass &= ok;
        details.push(format!("{fam} mean drift {:.1e} over {} kicked steps", watch.worst, watch.steps));
    }

    let mut mp_worst = f64::NEG_INFINITY;
    for fam in FAMILIES {
        let spec = builtin_model(fam);
        for scheme in [FluxScheme::EngquistOsher, FluxScheme::LaxFriedrichsLocal] {
            let cfg = SolverConfig {
                flux_scheme: scheme,
                ..SolverConfig::default()
            };
            for trial in 0..4u64 {
                let mut u = rough_field(grid, derive_seed(23, &[trial]), 0.5 * trial as f64, 3.0);
                for _ in 0..200 {
                    let (lo, hi) = (u.min(), u.max());
                    let (next, _) = step_unforced(&u, &spec, &cfg).unwrap();
                    let tol = EXACT_TOL * lo.abs().max(hi.abs()).max(1.0);
                    mp_worst = mp_worst.max((next.max() - hi).max(lo - next.min()) / tol);
                    u = next;
                }
            }
        }
    }
    pass &= mp_worst <= 1.0;
    details.push(format!("max principle worst excess/tol {mp_worst:.2e}"));

    let mut l1_worst = 0.0_f64;
    for pair in 0..20u64 {
        let spec = builtin_model(FAMILIES[(pair % 2) as usize]);
        let u0 = rough_field(grid, derive_seed(31, &[pair]), 0.0, 2.0);
        let v0 = sample_kick(&kicks.with_seed(37), &grid, pair as i64).unwrap().potential.scale(4.0);
        let noise = (pair % 4 >= 2).then_some((&kicks, derive_seed(41, &[pair])));
        let rep = contraction_test(&u0, &v0, &spec, &cfg, 2.0, noise, None).unwrap();
        l1_worst = l1_worst.max(rep.max_relative_increase);
    }
    pass &= l1_worst <= EXACT_TOL;
    details.push(format!("L1 contraction worst relative increase {l1_worst:.1e} over 20 pairs"));

    for fam in FAMILIES {
        let spec = builtin_model(fam);
        let inits = [Field::constant(grid, 0.0), Field::constant(grid, 1.0)];
        let rep = ordering_experiment(&inits, &spec, &kicks, &cfg, 8.0, 2.0, 43).unwrap();
        let s = rep.pair(1, 0).unwrap().summary;
        pass &= s == SignSummary::AlwaysPlus;
        details.push(format!("{fam} ordering {s:?}"));
    }
    let elapsed = start.elapsed();
    pass &= within(elapsed, 60);
    details.push(format!("{elapsed:.2?}"));
    report(3, "exact structure suite", pass, &details.join(", "));
    assert!(pass);
}

const INVARIANT_PATHS: usize = 64;
const INVARIANT_HORIZON: f64 = 32.0;
const INVARIANT_SEED: u64 = 2024;

/// Ensemble runs shared between the derivative-bound and mean-identity checks.
fn invariant_run(fam: ModelFamily, a_idx: usize) -> &'static (EnsembleStats, Duration) {
    static RUNS: [[OnceLock<(EnsembleStats, Duration)>; 3]; 2] = [
        [OnceLock::new(), OnceLock::new(), OnceLock::new()],
        [OnceLock::new(), OnceLock::new(), OnceLock::new()],
    ];
    let f = FAMILIES.iter().position(|x| *x == fam).unwrap();
    RUNS[f][a_idx].get_or_init(|| {
        let start = Instant::now();
        let stats = invariant_estimate(
            a_idx as f64,
            &builtin_model(fam),
            &KickSpec::default(),
            &SolverConfig::default(),
            &default_grid(),
            &EnsembleConfig::new(INVARIANT_PATHS, INVARIANT_HORIZON),
            INVARIANT_SEED,
        )
        .unwrap();
        (stats, start.elapsed())
    })
}

#[test]
fn acceptance_4_derivative_bound() {
    let _g = serial();
    let mut details = Vec::new();
    let mut pass = true;
    let mut total = Duration::ZERO;
    for fam in FAMILIES {
        let (stats, took) = invariant_run(fam, 0);
        total += *took;
        let checks = stats.derivative_bound_checks();
        let worst = checks.iter().min_by(|a, b| a.margin().total_cmp(&b.margin())).unwrap();
        pass &= !checks.is_empty() && checks.iter().all(|c| c.margin() >= 0.0);
        details.push(format!(
            "{fam}: {} record points, tightest t={:.3} lhs {:.4} vs rhs {:.4} + 3·{:.1e}",
            checks.len(),
            worst.t,
            worst.lhs,
            worst.rhs,
            worst.se
        ));
    }
    pass &= within(total, 600);
    details.push(format!("{total:.1?}"));
    report(4, "derivative energy bound", pass, &details.join("; "));
    assert!(pass);
}

#[test]
fn acceptance_5_mean_identity() {
    let _g = serial();
    let mut details = Vec::new();
    let mut pass = true;
    for fam in FAMILIES {
        for a_idx in 0..3 {
            let (stats, _) = invariant_run(fam, a_idx);
            let a = a_idx as f64;
            let z = stats.mean_identity_z();
            let spatial_ok = stats.max_mean_deviation <= 1e-12 * a.abs().max(1.0);
            pass &= z <= Z_MAX && spatial_ok;
            details.push(format!(
                "{fam} a={a}: z {z:.2}, spatial drift {:.1e}",
                stats.max_mean_deviation
            ));
        }
    }
    report(5, "mean identity", pass, &details.join("; "));
    assert!(pass);
}

const SCAN_A: [f64; 4] = [0.0, 1.0, 2.0, 4.0];
const SCAN_PATHS: usize = 32;
const SCAN_HORIZON: f64 = 16.0;
const SCAN_SPREAD_MAX: f64 = 2.0;

#[test]
fn acceptance_6_moment_boundedness() {
    let _g = serial();
    let start = Instant::now();
    let grid = Grid::new(16.0, 256).unwrap();
    let run = |fam: ModelFamily, horizon: f64, seed: u64| -> MomentScan {
        moment_growth_scan(
            &SCAN_A,
            &builtin_model(fam),
            &KickSpec::default(),
            &SolverConfig::default(),
            &grid,
            &EnsembleConfig::new(SCAN_PATHS, horizon),
            seed,
        )
        .unwrap()
    };
    let mut details = Vec::new();
    let mut pass = true;
    for fam in FAMILIES {
        let short = run(fam, SCAN_HORIZON, 61);
        let long = run(fam, 2.0 * SCAN_HORIZON, 62);
        let (sh, sq) = short.spread();
        let (lh, lq) = long.spread();
        let zmax = short
            .doubling_z(&long)
            .iter()
            .map(|(_, zh, zq)| zh.max(*zq))
            .fold(0.0, f64::max);
        let ok = [sh, sq, lh, lq].iter().all(|s| *s <= SCAN_SPREAD_MAX) && zmax <= Z_MAX;
        pass &= ok;
        details.push(format!(
            "{fam}: spread H {sh:.3}/{lh:.3}, q {sq:.3}/{lq:.3} (T/2T), ratios H {:?}, doubling max z {zmax:.2}",
            short.ratios_h().iter().map(|r| format!("{r:.4}")).collect::<Vec<_>>()
        ));
    }
    let elapsed = start.elapsed();
    pass &= within(elapsed, 1200);
    details.push(format!("{elapsed:.1?}"));
    report(6, "moment boundedness", pass, &details.join("; "));
    assert!(pass);
}

fn smooth_start(grid: Grid) -> Field {
    let pi = std::f64::consts::PI;
    Field::from_fn(grid, |x| 0.4 * (pi * x / 4.0).sin() + 0.2 * (pi * x / 2.0).cos())
}

fn max_gradient_error(spec: &ModelSpec, n: usize) -> f64 {
    let grid = Grid::new(16.0, n).unwrap();
    let kicks = KickSpec::default();
    let cfg = SolverConfig::default();
    let traj = phi_flow(&smooth_start(grid), 0.0, 2.0, spec, &kicks, &cfg, 5).unwrap();
    let pot = integrate_hj(&traj, spec, &trajectory_kicks(&traj, &kicks, &grid).unwrap()).unwrap();
    pot.gradient_errors(&traj).unwrap().into_iter().fold(0.0, f64::max)
}

fn hopf_residual(n: usize) -> f64 {
    let spec = builtin_model(ModelFamily::Burgers);
    let lambda = 0.5;
    let grid = Grid::new(16.0, n).unwrap();
    let cfg = SolverConfig {
        flux_scheme: FluxScheme::Central,
        record_every: grid.dx() / 8.0,
        ..SolverConfig::default()
    };
    let kicks = KickSpec::default().with_seed(7);
    let traj = phi_flow(&smooth_start(grid), 0.0, 2.0, &spec, &kicks, &cfg, 7).unwrap();
    let pot = integrate_hj(&traj, &spec, &trajectory_kicks(&traj, &kicks, &grid).unwrap()).unwrap();
    let jumps = traj.kick_indices.iter().map(|&s| s as f64).collect();
    let phi = HopfTrajectory::from_potential(&pot, lambda, jumps).unwrap();
    hopf_pde_residual(&phi, &spec, 0.0, lambda).unwrap()
}

fn majorant_worst(spec: &ModelSpec) -> f64 {
    let grid = Grid::new(16.0, 256).unwrap();
    let lambda = spec.constants.lambda;
    let mut worst = f64::INFINITY;
    for n in 0..100u64 {
        let phi0 = if n % 2 == 0 {
            let v = sample_kick(&KickSpec::default().with_seed(3), &grid, n as i64).unwrap();
            let amp = 0.5 + 3.5 * uniform(9, &[n]);
            v.potential.map(|x| (amp * x).exp())
        } else {
            rough_field(grid, derive_seed(13, &[n]), 0.0, 2.0).map(f64::exp)
        };
        let mut phi = HopfField {
            phi: phi0.clone(),
            lambda,
        };
        let mut t_prev = 0.0;
        for t in [0.1, 0.5, 1.0] {
            phi = evolve_hopf(&phi, spec, 0.0, t - t_prev, &SolverConfig::default()).unwrap();
            t_prev = t;
            let bound = supersolution_bound(&phi0, t, spec.kappa0()).unwrap();
            let sup = phi.phi.max();
            let m = bound
                .values()
                .iter()
                .zip(phi.phi.values())
                .map(|(b, v)| (b - v) / sup)
                .fold(f64::INFINITY, f64::min);
            worst = worst.min(m);
        }
    }
    worst
}

#[test]
fn acceptance_7_cole_hopf_stack() {
    let _g = serial();
    let start = Instant::now();
    let mut details = Vec::new();
    let mut pass = true;

    for fam in FAMILIES {
        let spec = builtin_model(fam);
        let errs: Vec<f64> = [256, 512, 1024].iter().map(|&n| max_gradient_error(&spec, n)).collect();
        let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
        pass &= orders.iter().all(|o| *o >= MIN_ORDER);
        details.push(format!(
            "{fam} gradient identity err {:.2e} -> {:.2e}, orders {:.3?}",
            errs[0], errs[2], orders
        ));
    }

    let (r_coarse, r_fine) = (hopf_residual(1024), hopf_residual(2048));
    let rate = (r_coarse / r_fine).log2();
    pass &= rate >= MIN_ORDER;
    details.push(format!("residual {r_coarse:.2e} -> {r_fine:.2e}, rate {rate:.3}"));

    for fam in FAMILIES {
        let w = majorant_worst(&builtin_model(fam));
        pass &= w >= -1e-8;
        details.push(format!("{fam} majorant min relative margin {w:.3e}"));
    }

    let grid = Grid::new(16.0, 256).unwrap();
    for fam in FAMILIES {
        let spec = builtin_model(fam);
        let (l, c2) = (spec.constants.lambda, spec.constants.c2);
        let g = |horizon: usize, seed: u64| {
            hopf_moment_growth(&spec, &KickSpec::default(), &grid, l, c2, horizon, 32, seed, &SolverConfig::default(), None)
                .unwrap()
        };
        let (short, long) = (g(8, 71), g(16, 72));
        let excess = short.max_excess_over_line().max(long.max_excess_over_line());
        let z = (short.slope - long.slope).abs() / short.slope_se.hypot(long.slope_se);
        pass &= excess <= Z_MAX && z <= Z_MAX;
        details.push(format!(
            "{fam} growth slope {:.4}±{:.4} / {:.4}±{:.4}, z {z:.2}, max excess {excess:.2} se",
            short.slope, short.slope_se, long.slope, long.slope_se
        ));
    }
    let elapsed = start.elapsed();
    pass &= within(elapsed, 300);
    details.push(format!("{elapsed:.1?}"));
    report(7, "Cole-Hopf stack", pass, &details.join("; "));
    assert!(pass);
}

const HIST_DISTANCE_MAX: f64 = 0.1;
const SHRINK_LO: f64 = 0.5 / std::f64::consts::SQRT_2;
const SHRINK_HI: f64 = std::f64::consts::SQRT_2;

#[test]
fn acceptance_8_time_average_stabilization() {
    let _g = serial();
    let start = Instant::now();
    let spec = builtin_model(ModelFamily::Burgers);
    let grid = default_grid();
    let probes = [grid.cells() / 2, grid.cells() / 4];
    let run = |horizon: f64, seed: u64| {
        empirical_distribution(
            0.0,
            &probes,
            0.25,
            20,
            &spec,
            &KickSpec::default(),
            &SolverConfig::default(),
            &grid,
            &EnsembleConfig::new(32, horizon),
            seed,
        )
        .unwrap()
    };
    let (short, long) = (run(64.0, 1), run(128.0, 101));
    let (h1, c1) = (short.max_half_window_distance(), short.max_cross_cell_distance());
    let (h2, c2) = (long.max_half_window_distance(), long.max_cross_cell_distance());
    let (rh, rc) = (h2 / h1, c2 / c1);
    let band = |r: f64| (SHRINK_LO..=SHRINK_HI).contains(&r);
    let elapsed = start.elapsed();
    let pass = h1 < HIST_DISTANCE_MAX && c1 < HIST_DISTANCE_MAX && band(rh) && band(rc) && within(elapsed, 600);
    report(
        8,
        "time-average stabilization",
        pass,
        &format!(
            "T=64 half {h1:.4} cross {c1:.4}; T=128 half {h2:.4} cross {c2:.4}; ratios {rh:.3} {rc:.3} in [{SHRINK_LO:.3}, {SHRINK_HI:.3}]; {elapsed:.1?}"
        ),
    );
    assert!(pass);
}

const BIN: &str = env!("CARGO_BIN_EXE_stochflux");

fn stochflux(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("STOCHFLUX_SEED")
        .output()
        .unwrap()
}

#[test]
fn acceptance_9_replay_determinism() {
    let _g = serial();
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let configs = [
        (
            "invariant.toml",
            "seed_root = 8\noutput_dir = \"out\"\n[model]\nname = \"tanh_kappa_subquadratic\"\n[grid]\ncells = 256\n\
             [experiment]\nkind = \"invariant\"\na = 1.0\nhorizon = 8.0\nn_paths = 16\n",
        ),
        (
            "distribution.toml",
            "seed_root = 9\noutput_dir = \"out\"\n[model]\nname = \"burgers\"\n[grid]\ncells = 256\n\
             [experiment]\nkind = \"distribution\"\nhorizon = 16.0\nn_paths = 16\n",
        ),
        (
            "colehopf.toml",
            "seed_root = 10\noutput_dir = \"out\"\n[model]\nname = \"burgers\"\n[grid]\ncells = 128\n[kick]\nn_modes = 16\n\
             [experiment]\nkind = \"colehopf\"\nhorizon = 4\nn_paths = 16\n",
        ),
    ];
    let mut details = Vec::new();
    let mut pass = true;
    for (name, text) in configs {
        let cfg = dir.path().join(name);
        std::fs::write(&cfg, text).unwrap();
        let run = stochflux(dir.path(), &["run", cfg.to_str().unwrap(), "--workers", "1"]);
        let out = String::from_utf8_lossy(&run.stdout).into_owned();
        let art = out
            .lines()
            .find_map(|l| l.strip_prefix("artifact: "))
            .map(|p| dir.path().join(p))
            .expect("artifact path");
        for workers in ["1", "4"] {
            let r = stochflux(dir.path(), &["replay", art.to_str().unwrap(), "--workers", workers]);
            let ok = r.status.code() == Some(0);
            pass &= ok;
            details.push(format!("{name} replay with {workers} worker(s): exit {:?}", r.status.code()));
        }
    }
    let elapsed = start.elapsed();
    details.push(format!("{elapsed:.1?}"));
    report(9, "replay determinism", pass, &details.join("; "));
    assert!(pass);
}
