//! Experiment dispatch: each kind runs the core routines, asserts the
//! properties they are expected to satisfy and renders its artifact files.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::{json, Value};
use stochflux_core::ergodics::{
    contraction_test, empirical_distribution, invariant_estimate, map_paths, moment_growth_scan,
    ordering_experiment, DistributionReport, EnsembleConfig, EnsembleStats, MomentScan, SignSummary,
};
use stochflux_core::field::{japanese_bracket, second_deriv, sup_norm, write_csv};
use stochflux_core::model::validate_assumptions;
use stochflux_core::noise::derive_seed;
use stochflux_core::solver::{phi_flow, run_coupled, trajectory_kicks, Recorder};
use stochflux_core::transforms::{
    evolve_hopf, hopf_moment_growth, integrate_hj, supersolution_bound, HopfField, HopfGrowth,
};
use stochflux_core::{sample_kick, Error, Field, Result};

use crate::config::{
    ColeHopfParams, ContractionParams, DistributionParams, Experiment, ExperimentConfig, Initial,
    InvariantParams, OrderingParams, Resolved, SimulateParams, SupersolutionParams, ValidateParams,
};

/// Spread cap for the moment ratios across the `a` scan.
pub const MOMENT_SPREAD_MAX: f64 = 2.0;
/// Standard errors allowed between a run and its horizon-doubled rerun.
pub const DOUBLING_Z_MAX: f64 = 3.0;
/// Bound on the histogram distances.
pub const HISTOGRAM_DISTANCE_MAX: f64 = 0.1;
/// Allowed band for `d(2T)/d(T)`: within 2× of `1/√2`.
pub const SHRINK_BAND: (f64, f64) = (0.5 / std::f64::consts::SQRT_2, std::f64::consts::SQRT_2);
/// Relative tolerance of the exact (pathwise) structure checks.
pub const EXACT_TOL: f64 = 1e-10;

/// One asserted property; `margin ≥ 0` iff it holds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Property {
    pub name: String,
    pub passed: bool,
    pub margin: f64,
}

impl Property {
    fn margin(name: &str, margin: f64) -> Self {
        Self {
            name: name.into(),
            passed: margin >= 0.0,
            margin,
        }
    }

    fn exact(name: &str, passed: bool) -> Self {
        Self {
            name: name.into(),
            passed,
            margin: if passed { 0.0 } else { -1.0 },
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {} (margin {:.4e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.margin
        )
    }
}

pub struct Outcome {
    pub results: Value,
    pub properties: Vec<Property>,
    /// `(file name, contents)` written next to the artifact.
    pub files: Vec<(String, Vec<u8>)>,
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report serializes")
}

fn f(v: f64) -> String {
    format!("{v:?}")
}

pub fn run(cfg: &ExperimentConfig, r: &Resolved, workers: Option<usize>) -> Result<Outcome> {
    let seed = cfg.seed_root;
    match &cfg.experiment {
        Experiment::Validate(p) => validate(p, r),
        Experiment::Simulate(p) => simulate(p, cfg, r, seed),
        Experiment::Invariant(p) => invariant(p, cfg, r, seed, workers),
        Experiment::Ordering(p) => ordering(p, cfg, r, seed),
        Experiment::Contraction(p) => contraction(p, cfg, r, seed),
        Experiment::Colehopf(p) => colehopf(p, cfg, r, seed, workers),
        Experiment::Supersolution(p) => supersolution(p, cfg, r, seed, workers),
        Experiment::Distribution(p) => distribution(p, cfg, r, seed, workers),
    }
}

fn validate(p: &ValidateParams, r: &Resolved) -> Result<Outcome> {
    let report = validate_assumptions(&r.model, p.u_min, p.u_max, p.n_samples)?;
    let properties = report
        .entries
        .iter()
        .map(|e| Property::margin(&format!("assumption {}", e.inequality), e.slack))
        .collect();
    let body = serde_json::to_vec_pretty(&report).expect("report serializes");
    Ok(Outcome {
        results: to_value(&report),
        properties,
        files: vec![("validation.json".into(), body)],
    })
}

fn simulate(p: &SimulateParams, cfg: &ExperimentConfig, r: &Resolved, seed: u64) -> Result<Outcome> {
    let u0 = p
        .initial
        .as_ref()
        .map_or_else(|| Field::constant(r.grid, p.a), |i| i.field(r.grid));
    let kick = if p.kicked { r.kick.clone() } else { r.kick.with_sigma(0.0) };
    let mut rec = Recorder::new(&r.model, &cfg.solver, 1, seed, false);
    let mut members = vec![u0.clone()];
    run_coupled(&mut members, 0.0, p.horizon, &r.model, &kick, &cfg.solver, seed, &mut rec)?;
    let record = rec.records.pop().expect("one member");
    let u = members.pop().expect("one member");

    let m0 = stochflux_core::field::mean(&u0);
    let drift = record
        .diagnostics
        .iter()
        .map(|d| (d.mean - m0).abs())
        .fold(0.0, f64::max);
    let mut properties = vec![Property::margin("mass conservation", EXACT_TOL * japanese_bracket(m0) - drift)];
    if !p.kicked {
        let (lo, hi) = (u0.min(), u0.max());
        let scale = EXACT_TOL * japanese_bracket(lo.abs().max(hi.abs()));
        let excess = (u.max() - hi).max(lo - u.min());
        properties.push(Property::margin("maximum principle", scale - excess));
    }

    let mut jsonl = record.diagnostics_jsonl().join("\n");
    jsonl.push('\n');
    let mut state = Vec::new();
    write_csv(&u, &mut state).expect("in-memory write");
    Ok(Outcome {
        results: json!({
            "records": record.times.len(),
            "kicks": record.kick_indices,
            "final": record.diagnostics.last().map(to_value),
            "max_mean_drift": drift,
        }),
        properties,
        files: vec![
            ("diagnostics.jsonl".into(), jsonl.into_bytes()),
            ("final_state.csv".into(), state),
        ],
    })
}

fn ensemble(
    n_paths: usize,
    horizon: f64,
    burn_in: Option<f64>,
    probe: Option<usize>,
    workers: Option<usize>,
) -> EnsembleConfig {
    EnsembleConfig {
        n_paths,
        horizon,
        burn_in,
        probe_cell: probe,
        workers,
    }
}

fn series_csv(stats: &EnsembleStats) -> Vec<u8> {
    let mut s = String::from("t,grad_energy,grad_energy_se,hamiltonian,hamiltonian_se,q_moment,q_moment_se,probe_mean,probe_mean_se,bound_rhs\n");
    for p in &stats.series {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            f(p.t),
            f(p.grad_energy.estimate),
            f(p.grad_energy.std_error),
            f(p.hamiltonian.estimate),
            f(p.hamiltonian.std_error),
            f(p.q_moment.estimate),
            f(p.q_moment.std_error),
            f(p.probe_mean.estimate),
            f(p.probe_mean.std_error),
            f(stats.derivative_bound_rhs(p.t)),
        );
    }
    s.into_bytes()
}

fn scan_csv(scan: &MomentScan) -> Vec<u8> {
    let mut s = String::from("a,hamiltonian,hamiltonian_se,q_moment,q_moment_se,ratio_h,ratio_h_se,ratio_q,ratio_q_se\n");
    for r in &scan.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            f(r.a),
            f(r.hamiltonian.estimate),
            f(r.hamiltonian.std_error),
            f(r.q_moment.estimate),
            f(r.q_moment.std_error),
            f(r.ratio_h),
            f(r.ratio_h_se),
            f(r.ratio_q),
            f(r.ratio_q_se),
        );
    }
    s.into_bytes()
}

fn z_score(d: f64, s1: f64, s2: f64) -> f64 {
    if d == 0.0 {
        0.0
    } else {
        d.abs() / (s1 * s1 + s2 * s2).sqrt()
    }
}

fn invariant(
    p: &InvariantParams,
    cfg: &ExperimentConfig,
    r: &Resolved,
    seed: u64,
    workers: Option<usize>,
) -> Result<Outcome> {
    let ens = ensemble(p.n_paths, p.horizon, p.burn_in, p.probe_cell, workers);
    let doubled = ensemble(p.n_paths, 2.0 * p.horizon, p.burn_in.map(|b| 2.0 * b), p.probe_cell, workers);
    let seed2 = derive_seed(seed, &[1]);

    if let Some(a_list) = &p.a_list {
        let scan = moment_growth_scan(a_list, &r.model, &r.kick, &cfg.solver, &r.grid, &ens, seed)?;
        let (sh, sq) = scan.spread();
        let mut properties = vec![
            Property::margin("moment boundedness: Hamiltonian ratio spread", MOMENT_SPREAD_MAX - sh),
            Property::margin("moment boundedness: q-moment ratio spread", MOMENT_SPREAD_MAX - sq),
        ];
        let mut files = vec![("scan.csv".into(), scan_csv(&scan))];
        let mut results = json!({ "scan": to_value(&scan), "spread_h": sh, "spread_q": sq });
        if p.doubling {
            let long = moment_growth_scan(a_list, &r.model, &r.kick, &cfg.solver, &r.grid, &doubled, seed2)?;
            let zmax = scan
                .doubling_z(&long)
                .iter()
                .map(|(_, zh, zq)| zh.max(*zq))
                .fold(0.0, f64::max);
            properties.push(Property::margin("moment ratios stable under horizon doubling", DOUBLING_Z_MAX - zmax));
            files.push(("scan_doubled.csv".into(), scan_csv(&long)));
            results["doubled"] = to_value(&long);
            results["doubling_max_z"] = json!(zmax);
        }
        return Ok(Outcome {
            results,
            properties,
            files,
        });
    }

    let stats = invariant_estimate(p.a, &r.model, &r.kick, &cfg.solver, &r.grid, &ens, seed)?;
    let bound_margin = stats
        .derivative_bound_checks()
        .iter()
        .map(|c| c.margin())
        .fold(f64::INFINITY, f64::min);
    let mut properties = vec![
        Property::margin("derivative energy bound", bound_margin),
        Property::margin("mean identity at the probe cell", DOUBLING_Z_MAX - stats.mean_identity_z()),
        Property::margin(
            "spatial mean conservation",
            1e-12 * japanese_bracket(p.a) - stats.max_mean_deviation,
        ),
    ];
    if r.kick.is_silent() {
        let w = &stats.window;
        let h_a = r.model.hamiltonian(p.a);
        let dev = [
            w.grad_energy.estimate.abs(),
            w.q_moment.estimate.abs(),
            (w.hamiltonian.estimate - h_a).abs(),
            (w.probe_mean.estimate - p.a).abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        properties.push(Property::margin(
            "unforced time averages at the constant fixed point",
            1e-12 * japanese_bracket(p.a).max(japanese_bracket(h_a)) - dev,
        ));
    }
    let mut files = vec![("series.csv".into(), series_csv(&stats))];
    let mut results = json!({
        "stats": to_value(&stats),
        "mean_identity_z": stats.mean_identity_z(),
        "derivative_bound_min_margin": bound_margin,
    });
    if p.doubling {
        let long = invariant_estimate(p.a, &r.model, &r.kick, &cfg.solver, &r.grid, &doubled, seed2)?;
        let (w1, w2) = (&stats.window, &long.window);
        let zmax = [
            (&w1.hamiltonian, &w2.hamiltonian),
            (&w1.q_moment, &w2.q_moment),
            (&w1.grad_energy, &w2.grad_energy),
        ]
        .iter()
        .map(|(x, y)| z_score(x.estimate - y.estimate, x.std_error, y.std_error))
        .fold(0.0, f64::max);
        properties.push(Property::margin("time averages stable under horizon doubling", DOUBLING_Z_MAX - zmax));
        files.push(("series_doubled.csv".into(), series_csv(&long)));
        results["doubling_max_z"] = json!(zmax);
    }
    Ok(Outcome {
        results,
        properties,
        files,
    })
}

/// The sign `u_j − u_i` must keep when the initial data are ordered.
fn expected_sign(uj: &Field, ui: &Field) -> Option<SignSummary> {
    let d: Vec<f64> = uj.values().iter().zip(ui.values()).map(|(a, b)| a - b).collect();
    let ge = d.iter().all(|v| *v >= 0.0);
    let le = d.iter().all(|v| *v <= 0.0);
    match (ge, le) {
        (true, true) => Some(SignSummary::IdenticallyZero),
        (true, false) => Some(SignSummary::AlwaysPlus),
        (false, true) => Some(SignSummary::AlwaysMinus),
        (false, false) => None,
    }
}

fn label_of(i: &Initial) -> String {
    match *i {
        Initial::Constant { value } => format!("const {value}"),
        Initial::Sine {
            offset,
            amplitude,
            mode,
        } => format!("{offset} + {amplitude} sin mode {mode}"),
    }
}

fn ordering(p: &OrderingParams, cfg: &ExperimentConfig, r: &Resolved, seed: u64) -> Result<Outcome> {
    let inits: Vec<Field> = p.initials.iter().map(|i| i.field(r.grid)).collect();
    let burn_in = p.burn_in.unwrap_or(p.horizon / 4.0);
    let report = ordering_experiment(&inits, &r.model, &r.kick, &cfg.solver, p.horizon, burn_in, seed)?;
    let mut properties = Vec::new();
    for pair in &report.pairs {
        if let Some(want) = expected_sign(&inits[pair.j], &inits[pair.i]) {
            let name = format!(
                "comparison ordering [{}] vs [{}] stays {}",
                label_of(&p.initials[pair.j]),
                label_of(&p.initials[pair.i]),
                match want {
                    SignSummary::AlwaysPlus => "always_plus",
                    SignSummary::AlwaysMinus => "always_minus",
                    SignSummary::IdenticallyZero => "identically_zero",
                    SignSummary::Mixed => "mixed",
                }
            );
            properties.push(Property::exact(&name, pair.summary == want));
        }
    }
    let mut csv = String::from("t");
    for pair in &report.pairs {
        let _ = write!(csv, ",min_{0}_{1},max_{0}_{1}", pair.j, pair.i);
    }
    csv.push('\n');
    for (k, t) in report.times.iter().enumerate() {
        csv.push_str(&f(*t));
        for pair in &report.pairs {
            let _ = write!(csv, ",{},{}", f(pair.min_diff[k]), f(pair.max_diff[k]));
        }
        csv.push('\n');
    }
    Ok(Outcome {
        results: to_value(&report),
        properties,
        files: vec![("ordering.csv".into(), csv.into_bytes())],
    })
}

fn contraction(p: &ContractionParams, cfg: &ExperimentConfig, r: &Resolved, seed: u64) -> Result<Outcome> {
    let u0 = p.initials[0].field(r.grid);
    let v0 = p.initials[1].field(r.grid);
    let kicks = p.kicked.then_some((&r.kick, seed));
    let report = contraction_test(&u0, &v0, &r.model, &cfg.solver, p.horizon, kicks, p.ell)?;
    let properties = vec![Property::margin(
        "L1 contraction",
        EXACT_TOL - report.max_relative_increase,
    )];
    let mut csv = String::from("t,l1,weighted_l1\n");
    for (k, t) in report.times.iter().enumerate() {
        let w = report.weighted.as_ref().map_or(String::new(), |w| f(w[k]));
        let _ = writeln!(csv, "{},{},{}", f(*t), f(report.l1[k]), w);
    }
    Ok(Outcome {
        results: to_value(&report),
        properties,
        files: vec![("contraction.csv".into(), csv.into_bytes())],
    })
}

fn growth_csv(g: &HopfGrowth) -> Vec<u8> {
    let mut s = String::from("t,log_mean,log_se,fit\n");
    for (k, t) in g.times.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            f(*t),
            f(g.log_mean[k]),
            f(g.log_se[k]),
            f(g.slope * t + g.intercept)
        );
    }
    s.into_bytes()
}

fn colehopf(
    p: &ColeHopfParams,
    cfg: &ExperimentConfig,
    r: &Resolved,
    seed: u64,
    workers: Option<usize>,
) -> Result<Outcome> {
    let lambda = p.lambda.unwrap_or(r.model.constants.lambda);
    let c2 = p.c2.unwrap_or(r.model.constants.c2);

    let u0 = Field::constant(r.grid, 0.0);
    let traj = phi_flow(&u0, 0.0, p.potential_horizon, &r.model, &r.kick, &cfg.solver, seed)?;
    let kicks = trajectory_kicks(&traj, &r.kick, &r.grid)?;
    let pot = integrate_hj(&traj, &r.model, &kicks)?;
    let errors = pot.gradient_errors(&traj)?;
    let dx2 = r.grid.dx().powi(2);
    let mut grad_margin = f64::INFINITY;
    let mut csv = String::from("t,gradient_error,dx2_bound\n");
    for (k, (t, err)) in traj.times.iter().zip(&errors).enumerate() {
        let rounding = 64.0 * f64::EPSILON * (1.0 + sup_norm(&pot.h_snapshots[k])) / r.grid.dx();
        let bound = 0.25 * dx2 * sup_norm(&second_deriv(&traj.snapshots[k])) + rounding;
        grad_margin = grad_margin.min(bound - err);
        let _ = writeln!(csv, "{},{},{}", f(*t), f(*err), f(bound));
    }
    let mut properties = vec![Property::margin("potential gradient identity within dx²", grad_margin)];

    let growth = hopf_moment_growth(
        &r.model,
        &r.kick,
        &r.grid,
        lambda,
        c2,
        p.horizon,
        p.n_paths,
        seed,
        &cfg.solver,
        workers,
    )?;
    properties.push(Property::margin(
        "Hopf moment growth at most linear",
        DOUBLING_Z_MAX - growth.max_excess_over_line(),
    ));
    let mut files = vec![
        ("gradient_errors.csv".into(), csv.into_bytes()),
        ("growth.csv".into(), growth_csv(&growth)),
    ];
    let mut results = json!({
        "lambda": lambda,
        "c2": c2,
        "gradient_errors": errors,
        "growth": to_value(&growth),
    });
    if p.doubling {
        let long = hopf_moment_growth(
            &r.model,
            &r.kick,
            &r.grid,
            lambda,
            c2,
            2 * p.horizon,
            p.n_paths,
            derive_seed(seed, &[1]),
            &cfg.solver,
            workers,
        )?;
        let z = z_score(growth.slope - long.slope, growth.slope_se, long.slope_se);
        properties.push(Property::margin("Hopf growth slope stable under horizon doubling", DOUBLING_Z_MAX - z));
        files.push(("growth_doubled.csv".into(), growth_csv(&long)));
        results["doubled"] = to_value(&long);
        results["slope_z"] = json!(z);
    }
    Ok(Outcome {
        results,
        properties,
        files,
    })
}

fn supersolution(
    p: &SupersolutionParams,
    cfg: &ExperimentConfig,
    r: &Resolved,
    seed: u64,
    workers: Option<usize>,
) -> Result<Outcome> {
    let kappa0 = r.model.kappa0();
    let lambda = r.model.constants.lambda;
    let kick = r.kick.with_seed(seed);
    let mut times = p.t_list.clone();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let rows = map_paths(p.n_samples, seed, workers, |n, _| {
        let v = sample_kick(&kick, &r.grid, n as i64)?;
        let phi0 = v.potential.map(|x| (p.log_amplitude * x).exp());
        let mut phi = HopfField { phi: phi0.clone(), lambda };
        let mut t_prev = 0.0;
        let mut out = Vec::with_capacity(times.len());
        for &t in &times {
            phi = evolve_hopf(&phi, &r.model, 0.0, t - t_prev, &cfg.solver)?;
            t_prev = t;
            let bound = supersolution_bound(&phi0, t, kappa0)?;
            let sup = phi.phi.max();
            let margin = bound
                .values()
                .iter()
                .zip(phi.phi.values())
                .map(|(b, v)| (b - v) / sup)
                .fold(f64::INFINITY, f64::min);
            out.push((t, margin));
        }
        Ok(out)
    })?;
    let worst = rows.iter().flatten().map(|(_, m)| *m).fold(f64::INFINITY, f64::min);
    let mut csv = String::from("sample,t,relative_margin\n");
    for (n, row) in rows.iter().enumerate() {
        for (t, m) in row {
            let _ = writeln!(csv, "{n},{},{}", f(*t), f(*m));
        }
    }
    Ok(Outcome {
        results: json!({
            "kappa0": kappa0,
            "t_list": times,
            "n_samples": p.n_samples,
            "min_relative_margin": worst,
        }),
        properties: vec![Property::margin("supersolution majorant", worst + 1e-8)],
        files: vec![("margins.csv".into(), csv.into_bytes())],
    })
}

fn histogram_files(report: &DistributionReport, suffix: &str) -> Vec<(String, Vec<u8>)> {
    report
        .histograms
        .iter()
        .enumerate()
        .map(|(idx, h)| {
            let mut s = String::from("bin_left,bin_right,mass,first_half,second_half\n");
            for (b, (lo, hi, m)) in report.csv_rows(idx).into_iter().enumerate() {
                let _ = writeln!(s, "{},{},{},{},{}", f(lo), f(hi), f(m), f(h.first_half[b]), f(h.second_half[b]));
            }
            (format!("histogram_cell{}{suffix}.csv", h.probe_cell), s.into_bytes())
        })
        .collect()
}

fn distribution(
    p: &DistributionParams,
    cfg: &ExperimentConfig,
    r: &Resolved,
    seed: u64,
    workers: Option<usize>,
) -> Result<Outcome> {
    let n = r.grid.cells();
    let probes = p.probe_cells.clone().unwrap_or_else(|| vec![n / 2, n / 4]);
    let ens = ensemble(p.n_paths, p.horizon, p.burn_in, None, workers);
    let report = empirical_distribution(
        p.a, &probes, p.lag, p.bins, &r.model, &r.kick, &cfg.solver, &r.grid, &ens, seed,
    )?;
    let half = report.max_half_window_distance();
    let mut properties = vec![Property::margin(
        "time-average stabilization: half-window distance",
        HISTOGRAM_DISTANCE_MAX - half,
    )];
    let cross = (probes.len() > 1).then(|| report.max_cross_cell_distance());
    if let Some(c) = cross {
        properties.push(Property::margin(
            "spatial stationarity: cross-cell distance",
            HISTOGRAM_DISTANCE_MAX - c,
        ));
    }
    let mut files = histogram_files(&report, "");
    let mut results = json!({ "report": to_value(&report) });
    if p.doubling {
        let doubled = ensemble(p.n_paths, 2.0 * p.horizon, p.burn_in.map(|b| 2.0 * b), None, workers);
        let long = empirical_distribution(
            p.a,
            &probes,
            p.lag,
            p.bins,
            &r.model,
            &r.kick,
            &cfg.solver,
            &r.grid,
            &doubled,
            derive_seed(seed, &[1]),
        )?;
        let band = |ratio: f64| (ratio - SHRINK_BAND.0).min(SHRINK_BAND.1 - ratio);
        let rh = long.max_half_window_distance() / half;
        properties.push(Property::margin("half-window distance shrinks like 1/√T", band(rh)));
        if let Some(c) = cross {
            let rc = long.max_cross_cell_distance() / c;
            properties.push(Property::margin("cross-cell distance shrinks like 1/√T", band(rc)));
            results["cross_ratio"] = json!(rc);
        }
        results["half_ratio"] = json!(rh);
        results["doubled"] = to_value(&long);
        files.extend(histogram_files(&long, "_doubled"));
    }
    Ok(Outcome {
        results,
        properties,
        files,
    })
}

/// Whether an error stems from bad input rather than from the run itself.
pub fn is_input_error(e: &Error) -> bool {
    match e {
        Error::PathFailed { source, .. } => is_input_error(source),
        Error::InvalidParameter { .. } | Error::UnknownModel(_) | Error::UnderResolved { .. } => true,
        _ => false,
    }
}
