//! Monte Carlo ensembles over independent noise paths.
//!
//! Paths are keyed by `derive_seed(seed, [path])` and run on a rayon pool.
//! Results come back in path order and are merged with pairwise sums, so
//! every statistic is bit-identical for any worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::{japanese_bracket, l1_norm, mean, weighted_l1_zeta, Field, Grid};
use crate::model::ModelSpec;
use crate::noise::{derive_seed, gradient_variance, mean_and_se, KickSpec, MonteCarloEstimate};
use crate::solver::{run_coupled, FlowObserver, RecordTag, SolverConfig};

/// Runs `f(path, path_seed)` for every path, on `workers` threads (rayon's
/// default when `None`), and returns the results in path order.
pub fn map_paths<T, F>(n_paths: usize, seed: u64, workers: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T> + Sync + Send,
{
    let run = || -> Vec<Result<T>> {
        (0..n_paths)
            .into_par_iter()
            .map(|p| {
                let s = derive_seed(seed, &[p as u64]);
                f(p, s).map_err(|e| Error::PathFailed {
                    path: p,
                    seed: s,
                    source: Box::new(e),
                })
            })
            .collect()
    };
    let results = match workers {
        Some(w) => {
            if w == 0 {
                return Err(invalid("workers", "must be at least 1"));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| invalid("workers", e.to_string()))?
                .install(run)
        }
        None => run(),
    };
    results.into_iter().collect()
}

/// Ensemble size, horizon and bookkeeping shared by the experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_paths: usize,
    pub horizon: f64,
    /// Defaults to `horizon / 4`.
    pub burn_in: Option<f64>,
    /// Defaults to the cell nearest `x = 0`.
    pub probe_cell: Option<usize>,
    pub workers: Option<usize>,
}

impl EnsembleConfig {
    pub fn new(n_paths: usize, horizon: f64) -> Self {
        Self {
            n_paths,
            horizon,
            burn_in: None,
            probe_cell: None,
            workers: None,
        }
    }

    pub fn burn_in(&self) -> f64 {
        self.burn_in.unwrap_or(self.horizon / 4.0)
    }

    fn probe(&self, grid: &Grid) -> usize {
        self.probe_cell.unwrap_or(grid.cells() / 2)
    }

    fn check(&self, grid: &Grid) -> Result<()> {
        if self.n_paths < 8 {
            return Err(invalid("n_paths", format!("{} < 8", self.n_paths)));
        }
        if !(self.horizon >= 4.0 && self.horizon.is_finite()) {
            return Err(invalid("horizon", format!("{} < 4", self.horizon)));
        }
        let b = self.burn_in();
        if !(b >= 0.0 && b < self.horizon) {
            return Err(invalid("burn_in", format!("{b} not in [0, horizon)")));
        }
        if self.probe(grid) >= grid.cells() {
            return Err(invalid("probe_cell", format!("{} ≥ {}", self.probe(grid), grid.cells())));
        }
        Ok(())
    }
}

/// Integrands of the ensemble statistics at one instant.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Integrands {
    grad_energy: f64,
    hamiltonian: f64,
    q_moment: f64,
    probe: f64,
}

impl Integrands {
    fn of(u: &[f64], dx: f64, spec: &ModelSpec, a: f64, q: f64, probe: usize) -> Self {
        let n = u.len();
        let inv = 0.5 / dx;
        let mut sums = [0.0; 3];
        for i in 0..n {
            let ip = if i + 1 == n { 0 } else { i + 1 };
            let im = if i == 0 { n - 1 } else { i - 1 };
            let d = (u[ip] - u[im]) * inv;
            sums[0] += d * d;
            sums[1] += spec.hamiltonian(u[i]);
            let dev = (u[i] - a).abs();
            sums[2] += if q == 2.0 {
                dev * dev
            } else if q == 1.5 {
                dev * dev.sqrt()
            } else {
                dev.powf(q)
            };
        }
        let nf = n as f64;
        Self {
            grad_energy: sums[0] / nf,
            hamiltonian: sums[1] / nf,
            q_moment: sums[2] / nf,
            probe: u[probe],
        }
    }

    fn axpy(&mut self, w: f64, o: &Integrands) {
        self.grad_energy += w * o.grad_energy;
        self.hamiltonian += w * o.hamiltonian;
        self.q_moment += w * o.q_moment;
        self.probe += w * o.probe;
    }

    fn scaled(&self, c: f64) -> Self {
        Self {
            grad_energy: self.grad_energy * c,
            hamiltonian: self.hamiltonian * c,
            q_moment: self.q_moment * c,
            probe: self.probe * c,
        }
    }
}

/// Time between integrand evaluations inside [`invariant_estimate`]. The
/// integrand is also refreshed right after every record point (and hence
/// after every kick), and held constant in between.
pub const INTEGRAND_RESOLUTION: f64 = 1.0 / 512.0;

/// Per-path accumulator: left Riemann sums over the solver steps.
struct PathIntegrals<'a> {
    spec: &'a ModelSpec,
    a: f64,
    q: f64,
    probe: usize,
    burn_in: f64,
    dx: f64,
    total: Integrands,
    window: Integrands,
    window_time: f64,
    series: Vec<(f64, Integrands)>,
    max_mean_dev: f64,
    current: Integrands,
    age: f64,
    stale: bool,
}

impl FlowObserver for PathIntegrals<'_> {
    fn record(&mut self, _member: usize, t: f64, _tag: RecordTag, u: &Field) {
        self.stale = true;
        self.max_mean_dev = self.max_mean_dev.max((mean(u) - self.a).abs());
        if t > 0.0 {
            self.series.push((t, self.total.scaled(1.0 / t)));
        }
    }

    fn step(&mut self, _member: usize, t: f64, dt: f64, u: &Field) {
        if self.stale || self.age >= INTEGRAND_RESOLUTION {
            self.current = Integrands::of(u.values(), self.dx, self.spec, self.a, self.q, self.probe);
            self.age = 0.0;
            self.stale = false;
        }
        self.age += dt;
        let f = self.current;
        self.total.axpy(dt, &f);
        if t >= self.burn_in - 1e-12 {
            self.window.axpy(dt, &f);
            self.window_time += dt;
        }
    }

    fn wants_steps(&self) -> bool {
        true
    }
}

struct PathResult {
    series: Vec<(f64, Integrands)>,
    window: Integrands,
    max_mean_dev: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub t: f64,
    /// `(1/t) ∫₀ᵗ (1/N) Σ (∂xu)² ds`
    pub grad_energy: MonteCarloEstimate,
    /// `(1/t) ∫₀ᵗ (1/N) Σ H(u) ds`
    pub hamiltonian: MonteCarloEstimate,
    /// `(1/t) ∫₀ᵗ (1/N) Σ |u − a|^q ds`
    pub q_moment: MonteCarloEstimate,
    /// `(1/t) ∫₀ᵗ u(s, x_probe) ds`
    pub probe_mean: MonteCarloEstimate,
}

/// Time averages over `[burn_in, horizon]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowAverages {
    pub grad_energy: MonteCarloEstimate,
    pub hamiltonian: MonteCarloEstimate,
    pub q_moment: MonteCarloEstimate,
    pub probe_mean: MonteCarloEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub a: f64,
    pub q: f64,
    pub kappa0: f64,
    pub n_paths: usize,
    pub horizon: f64,
    pub burn_in: f64,
    pub probe_cell: usize,
    /// `E (∂xV)²` of the kick law.
    pub gradient_variance: f64,
    /// Averages from time 0, at every record point `t > 0`.
    pub series: Vec<SeriesPoint>,
    pub window: WindowAverages,
    /// Largest `|mean(u) − a|` over all paths and record points.
    pub max_mean_deviation: f64,
}

/// Outcome of one inequality check, `lhs ≤ rhs + cushion·se`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub se: f64,
}

impl BoundCheck {
    /// `rhs + 3·se − lhs`
    pub fn margin(&self) -> f64 {
        self.rhs + 3.0 * self.se - self.lhs
    }
}

impl EnsembleStats {
    /// `a²/(2κ0 t) + E(∂xV)²/κ0`
    pub fn derivative_bound_rhs(&self, t: f64) -> f64 {
        self.a * self.a / (2.0 * self.kappa0 * t) + self.gradient_variance / self.kappa0
    }

    /// The derivative bound at every record point `t ≥ 1`.
    pub fn derivative_bound_checks(&self) -> Vec<BoundCheck> {
        self.series
            .iter()
            .filter(|p| p.t >= 1.0 - 1e-12)
            .map(|p| BoundCheck {
                t: p.t,
                lhs: p.grad_energy.estimate,
                rhs: self.derivative_bound_rhs(p.t),
                se: p.grad_energy.std_error,
            })
            .collect()
    }

    /// `|window probe mean − a| / se`. Differences at rounding level
    /// (`1e-12·⟨a⟩`) count as zero, which matters when `se = 0`.
    pub fn mean_identity_z(&self) -> f64 {
        let p = &self.window.probe_mean;
        let d = (p.estimate - self.a).abs();
        if d <= 1e-12 * japanese_bracket(self.a) {
            0.0
        } else {
            d / p.std_error
        }
    }
}

fn estimates(paths: &[PathResult], pick: impl Fn(&PathResult) -> Integrands) -> [MonteCarloEstimate; 4] {
    let vals: Vec<Integrands> = paths.iter().map(pick).collect();
    let col = |g: fn(&Integrands) -> f64| mean_and_se(&vals.iter().map(g).collect::<Vec<_>>());
    [
        col(|v| v.grad_energy),
        col(|v| v.hamiltonian),
        col(|v| v.q_moment),
        col(|v| v.probe),
    ]
}

/// Runs `n_paths` kicked trajectories from `u(0−) ≡ a` up to `horizon` and
/// collects time-averaged statistics with across-path standard errors.
pub fn invariant_estimate(
    a: f64,
    spec: &ModelSpec,
    kick_spec: &KickSpec,
    cfg: &SolverConfig,
    grid: &Grid,
    ens: &EnsembleConfig,
    seed: u64,
) -> Result<EnsembleStats> {
    ens.check(grid)?;
    if !a.is_finite() {
        return Err(invalid("a", "must be finite"));
    }
    let probe = ens.probe(grid);
    let burn_in = ens.burn_in();
    let q = spec.constants.q;
    let paths = map_paths(ens.n_paths, seed, ens.workers, |_, path_seed| {
        let mut obs = PathIntegrals {
            spec,
            a,
            q,
            probe,
            burn_in,
            dx: grid.dx(),
            total: Integrands::default(),
            window: Integrands::default(),
            window_time: 0.0,
            series: Vec::new(),
            max_mean_dev: 0.0,
            current: Integrands::default(),
            age: 0.0,
            stale: true,
        };
        let mut u = vec![Field::constant(*grid, a)];
        run_coupled(&mut u, 0.0, ens.horizon, spec, kick_spec, cfg, path_seed, &mut obs)?;
        let window = obs.window.scaled(1.0 / obs.window_time);
        Ok(PathResult {
            series: obs.series,
            window,
            max_mean_dev: obs.max_mean_dev,
        })
    })?;
    let n_points = paths[0].series.len();
    let series = (0..n_points)
        .map(|k| {
            let [g, h, qm, p] = estimates(&paths, |r| r.series[k].1);
            SeriesPoint {
                t: paths[0].series[k].0,
                grad_energy: g,
                hamiltonian: h,
                q_moment: qm,
                probe_mean: p,
            }
        })
        .collect();
    let [g, h, qm, p] = estimates(&paths, |r| r.window);
    Ok(EnsembleStats {
        a,
        q,
        kappa0: spec.kappa0(),
        n_paths: ens.n_paths,
        horizon: ens.horizon,
        burn_in,
        probe_cell: probe,
        gradient_variance: gradient_variance(kick_spec, grid.length()),
        series,
        window: WindowAverages {
            grad_energy: g,
            hamiltonian: h,
            q_moment: qm,
            probe_mean: p,
        },
        max_mean_deviation: paths.iter().map(|r| r.max_mean_dev).fold(0.0, f64::max),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub a: f64,
    pub hamiltonian: MonteCarloEstimate,
    pub q_moment: MonteCarloEstimate,
    /// `timeavg E H(u) / ⟨a⟩²`
    pub ratio_h: f64,
    pub ratio_h_se: f64,
    /// `timeavg E |u − a|^q / ⟨a⟩²`
    pub ratio_q: f64,
    pub ratio_q_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentScan {
    pub horizon: f64,
    pub rows: Vec<MomentRow>,
    /// Least-squares `C` in `timeavg E H ≈ C ⟨a⟩²`.
    pub fitted_c_h: f64,
    pub fitted_c_q: f64,
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl MomentScan {
    pub fn ratios_h(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.ratio_h).collect()
    }

    pub fn ratios_q(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.ratio_q).collect()
    }

    /// `max ratio / median ratio` for the Hamiltonian and the q-moment.
    pub fn spread(&self) -> (f64, f64) {
        let s = |v: Vec<f64>| {
            let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            max / median(&v)
        };
        (s(self.ratios_h()), s(self.ratios_q()))
    }

    /// Per row: `|Δratio| / √(se₁² + se₂²)` against a rerun (e.g. at doubled horizon).
    pub fn doubling_z(&self, other: &MomentScan) -> Vec<(f64, f64, f64)> {
        let z = |d: f64, s1: f64, s2: f64| {
            let s = (s1 * s1 + s2 * s2).sqrt();
            if d == 0.0 {
                0.0
            } else {
                d.abs() / s
            }
        };
        self.rows
            .iter()
            .zip(&other.rows)
            .map(|(r, o)| {
                (
                    r.a,
                    z(r.ratio_h - o.ratio_h, r.ratio_h_se, o.ratio_h_se),
                    z(r.ratio_q - o.ratio_q, r.ratio_q_se, o.ratio_q_se),
                )
            })
            .collect()
    }
}

/// Post-burn-in time averages of `H(u)` and `|u − a|^q` for each `a`,
/// normalized by `⟨a⟩²`.
pub fn moment_growth_scan(
    a_list: &[f64],
    spec: &ModelSpec,
    kick_spec: &KickSpec,
    cfg: &SolverConfig,
    grid: &Grid,
    ens: &EnsembleConfig,
    seed: u64,
) -> Result<MomentScan> {
    if a_list.is_empty() {
        return Err(invalid("a_list", "must not be empty"));
    }
    let mut rows = Vec::with_capacity(a_list.len());
    for &a in a_list {
        let stats = invariant_estimate(a, spec, kick_spec, cfg, grid, ens, seed)?;
        let w = japanese_bracket(a).powi(2);
        let h = stats.window.hamiltonian;
        let qm = stats.window.q_moment;
        rows.push(MomentRow {
            a,
            hamiltonian: h,
            q_moment: qm,
            ratio_h: h.estimate / w,
            ratio_h_se: h.std_error / w,
            ratio_q: qm.estimate / w,
            ratio_q_se: qm.std_error / w,
        });
    }
    let fit = |pick: fn(&MomentRow) -> f64| {
        let (num, den) = rows.iter().fold((0.0, 0.0), |(n, d), r| {
            let x = japanese_bracket(r.a).powi(2);
            (n + x * pick(r) * x, d + x * x)
        });
        num / den
    };
    Ok(MomentScan {
        horizon: ens.horizon,
        fitted_c_h: fit(|r| r.ratio_h),
        fitted_c_q: fit(|r| r.ratio_q),
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub times: Vec<f64>,
    /// `‖u(t) − v(t)‖_{l1}` at each record point.
    pub l1: Vec<f64>,
    /// `dx Σ |u − v| ζ` when a weight exponent was requested.
    pub weighted: Option<Vec<f64>>,
    pub ell: Option<f64>,
    /// Least-squares `C` in `weighted(t) ≈ weighted(0) e^{Ct}`.
    pub weighted_growth: Option<f64>,
    /// Largest step-to-step increase of the l1 distance, relative to its initial value.
    pub max_relative_increase: f64,
}

impl ContractionReport {
    pub fn non_increasing(&self, rel_tol: f64) -> bool {
        self.max_relative_increase <= rel_tol
    }
}

struct DistanceObserver {
    ell: Option<f64>,
    times: Vec<f64>,
    l1: Vec<f64>,
    weighted: Vec<f64>,
    first: Option<Field>,
    started: bool,
    initial: f64,
    max_inc: f64,
    prev: f64,
}

impl DistanceObserver {
    fn push(&mut self, t: f64, d: &Field, record: bool) {
        let l1 = l1_norm(d);
        if !self.started {
            self.started = true;
            self.initial = l1;
            self.prev = l1;
        }
        if l1 - self.prev > self.max_inc {
            self.max_inc = l1 - self.prev;
        }
        self.prev = l1;
        if record {
            self.times.push(t);
            self.l1.push(l1);
            if let Some(ell) = self.ell {
                self.weighted.push(weighted_l1_zeta(d, ell));
            }
        }
    }
}

impl FlowObserver for DistanceObserver {
    fn record(&mut self, member: usize, t: f64, _tag: RecordTag, u: &Field) {
        if member == 0 {
            self.first = Some(u.clone());
        } else if let Some(f) = self.first.take() {
            let d = f.sub(u).expect("same grid");
            self.push(t, &d, true);
        }
    }

    fn step(&mut self, member: usize, _t: f64, _dt: f64, u: &Field) {
        if member == 0 {
            self.first = Some(u.clone());
        } else if let Some(f) = self.first.take() {
            let d = f.sub(u).expect("same grid");
            self.push(f64::NAN, &d, false);
        }
    }

    fn wants_steps(&self) -> bool {
        true
    }
}

/// Evolves `u0`, `v0` on a shared step sequence (and, when `kicks` is given,
/// shared kicks) and reports their distance at every step and record point.
#[allow(clippy::too_many_arguments)]
pub fn contraction_test(
    u0: &Field,
    v0: &Field,
    spec: &ModelSpec,
    cfg: &SolverConfig,
    horizon: f64,
    kicks: Option<(&KickSpec, u64)>,
    ell: Option<f64>,
) -> Result<ContractionReport> {
    u0.grid().check_same(v0.grid())?;
    if let Some(l) = ell {
        crate::field::WeightTag::zeta(l)?;
    }
    let silent;
    let (kick_spec, seed) = match kicks {
        Some((k, s)) => (k, s),
        None => {
            silent = KickSpec::new(1, 0.0, 1.0, 0)?;
            (&silent, 0)
        }
    };
    let mut obs = DistanceObserver {
        ell,
        times: Vec::new(),
        l1: Vec::new(),
        weighted: Vec::new(),
        first: None,
        started: false,
        initial: 0.0,
        max_inc: 0.0,
        prev: 0.0,
    };
    let mut members = vec![u0.clone(), v0.clone()];
    run_coupled(&mut members, 0.0, horizon, spec, kick_spec, cfg, seed, &mut obs)?;
    let weighted = ell.map(|_| obs.weighted.clone());
    let weighted_growth = weighted.as_ref().map(|w| {
        let w0 = w[0];
        let (num, den) = obs.times.iter().zip(w).skip(1).fold((0.0, 0.0), |(n, d), (&t, &v)| {
            if w0 > 0.0 && v > 0.0 {
                (n + t * (v / w0).ln(), d + t * t)
            } else {
                (n, d)
            }
        });
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    });
    let max_relative_increase = if obs.initial > 0.0 {
        obs.max_inc / obs.initial
    } else {
        obs.max_inc
    };
    Ok(ContractionReport {
        times: obs.times,
        l1: obs.l1,
        weighted,
        ell,
        weighted_growth,
        max_relative_increase,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignSummary {
    AlwaysPlus,
    AlwaysMinus,
    IdenticallyZero,
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum StepSign {
    Plus,
    Minus,
    Zero,
    Mixed,
}

fn classify(diff_pos: bool, diff_neg: bool) -> StepSign {
    match (diff_pos, diff_neg) {
        (true, true) => StepSign::Mixed,
        (true, false) => StepSign::Plus,
        (false, true) => StepSign::Minus,
        (false, false) => StepSign::Zero,
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct SignTally {
    plus: u64,
    minus: u64,
    zero: u64,
    mixed: u64,
}

impl SignTally {
    fn add(&mut self, s: StepSign) {
        match s {
            StepSign::Plus => self.plus += 1,
            StepSign::Minus => self.minus += 1,
            StepSign::Zero => self.zero += 1,
            StepSign::Mixed => self.mixed += 1,
        }
    }

    fn summary(&self) -> SignSummary {
        if self.mixed > 0 || (self.plus > 0 && self.minus > 0) {
            SignSummary::Mixed
        } else if self.plus > 0 {
            SignSummary::AlwaysPlus
        } else if self.minus > 0 {
            SignSummary::AlwaysMinus
        } else {
            SignSummary::IdenticallyZero
        }
    }
}

/// Sign behavior of `u_j − u_i` for one pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairOrdering {
    pub label: String,
    pub j: usize,
    pub i: usize,
    /// Extremes of `u_j − u_i` over the steps since the previous record point.
    pub min_diff: Vec<f64>,
    pub max_diff: Vec<f64>,
    pub summary: SignSummary,
    pub summary_after_burn_in: SignSummary,
    pub mixed_steps: u64,
    /// Last instant at which the pair was mixed, if ever.
    pub last_mixed_time: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    pub times: Vec<f64>,
    pub burn_in: f64,
    pub seed: u64,
    pub pairs: Vec<PairOrdering>,
}

impl OrderingReport {
    pub fn pair(&self, j: usize, i: usize) -> Option<&PairOrdering> {
        self.pairs.iter().find(|p| p.j == j && p.i == i)
    }
}

struct OrderingObserver {
    members: usize,
    burn_in: f64,
    states: Vec<Option<Field>>,
    pairs: Vec<(usize, usize)>,
    tally: Vec<SignTally>,
    tally_late: Vec<SignTally>,
    win_min: Vec<f64>,
    win_max: Vec<f64>,
    min_diff: Vec<Vec<f64>>,
    max_diff: Vec<Vec<f64>>,
    last_mixed: Vec<Option<f64>>,
    times: Vec<f64>,
}

impl OrderingObserver {
    fn evaluate(&mut self, t: f64) {
        for (p, &(j, i)) in self.pairs.iter().enumerate() {
            let (uj, ui) = (
                self.states[j].as_ref().expect("state"),
                self.states[i].as_ref().expect("state"),
            );
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for (a, b) in uj.values().iter().zip(ui.values()) {
                let d = a - b;
                lo = lo.min(d);
                hi = hi.max(d);
            }
            let s = classify(hi > 0.0, lo < 0.0);
            self.tally[p].add(s);
            if t >= self.burn_in {
                self.tally_late[p].add(s);
            }
            if s == StepSign::Mixed {
                self.last_mixed[p] = Some(t);
            }
            self.win_min[p] = self.win_min[p].min(lo);
            self.win_max[p] = self.win_max[p].max(hi);
        }
    }

    fn store(&mut self, member: usize, u: &Field) -> bool {
        match &mut self.states[member] {
            Some(f) => f.values_mut().copy_from_slice(u.values()),
            slot => *slot = Some(u.clone()),
        }
        member + 1 == self.members
    }
}

impl FlowObserver for OrderingObserver {
    fn record(&mut self, member: usize, t: f64, _tag: RecordTag, u: &Field) {
        if self.store(member, u) {
            self.evaluate(t);
            self.times.push(t);
            for p in 0..self.pairs.len() {
                self.min_diff[p].push(self.win_min[p]);
                self.max_diff[p].push(self.win_max[p]);
                self.win_min[p] = f64::INFINITY;
                self.win_max[p] = f64::NEG_INFINITY;
            }
        }
    }

    fn step(&mut self, member: usize, t: f64, _dt: f64, u: &Field) {
        if self.store(member, u) {
            self.evaluate(t);
        }
    }

    fn wants_steps(&self) -> bool {
        true
    }
}

/// Evolves all `initials` under one kick realization and classifies the sign
/// of `u_j − u_i` (for every `j > i`) at every solver step and record point.
pub fn ordering_experiment(
    initials: &[Field],
    spec: &ModelSpec,
    kick_spec: &KickSpec,
    cfg: &SolverConfig,
    horizon: f64,
    burn_in: f64,
    seed: u64,
) -> Result<OrderingReport> {
    if initials.len() < 2 {
        return Err(invalid("initials", "need at least two fields"));
    }
    let pairs: Vec<(usize, usize)> = (0..initials.len())
        .flat_map(|j| (0..j).map(move |i| (j, i)))
        .collect();
    let np = pairs.len();
    let mut obs = OrderingObserver {
        members: initials.len(),
        burn_in,
        states: vec![None; initials.len()],
        pairs: pairs.clone(),
        tally: vec![SignTally::default(); np],
        tally_late: vec![SignTally::default(); np],
        win_min: vec![f64::INFINITY; np],
        win_max: vec![f64::NEG_INFINITY; np],
        min_diff: vec![Vec::new(); np],
        max_diff: vec![Vec::new(); np],
        last_mixed: vec![None; np],
        times: Vec::new(),
    };
    let mut members = initials.to_vec();
    run_coupled(&mut members, 0.0, horizon, spec, kick_spec, cfg, seed, &mut obs)?;
    let pairs = pairs
        .iter()
        .enumerate()
        .map(|(p, &(j, i))| PairOrdering {
            label: format!("u{j} - u{i}"),
            j,
            i,
            min_diff: obs.min_diff[p].clone(),
            max_diff: obs.max_diff[p].clone(),
            summary: obs.tally[p].summary(),
            summary_after_burn_in: obs.tally_late[p].summary(),
            mixed_steps: obs.tally[p].mixed,
            last_mixed_time: obs.last_mixed[p],
        })
        .collect();
    Ok(OrderingReport {
        times: obs.times,
        burn_in,
        seed,
        pairs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub probe_cell: usize,
    /// Bin masses over the whole post-burn-in window; they sum to 1.
    pub mass: Vec<f64>,
    pub first_half: Vec<f64>,
    pub second_half: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub a: f64,
    pub horizon: f64,
    pub burn_in: f64,
    pub lag: f64,
    /// Bin edges, `bins + 1` of them.
    pub edges: Vec<f64>,
    pub histograms: Vec<Histogram>,
    /// `sup_bins |first − second half|` per probe cell.
    pub half_window_distance: Vec<f64>,
    /// `sup_bins |mass_p − mass_q|` for every pair of probe cells.
    pub cross_cell_distance: Vec<f64>,
    pub samples_per_cell: usize,
}

impl DistributionReport {
    pub fn max_half_window_distance(&self) -> f64 {
        self.half_window_distance.iter().cloned().fold(0.0, f64::max)
    }

    pub fn max_cross_cell_distance(&self) -> f64 {
        self.cross_cell_distance.iter().cloned().fold(0.0, f64::max)
    }

    /// `(bin_left, bin_right, mass)` rows for one probe cell.
    pub fn csv_rows(&self, idx: usize) -> Vec<(f64, f64, f64)> {
        self.histograms[idx]
            .mass
            .iter()
            .enumerate()
            .map(|(b, &m)| (self.edges[b], self.edges[b + 1], m))
            .collect()
    }
}

struct SampleObserver {
    probes: Vec<usize>,
    burn_in: f64,
    lag: f64,
    next: f64,
    samples: Vec<(f64, Vec<f64>)>,
}

impl FlowObserver for SampleObserver {
    fn record(&mut self, _member: usize, t: f64, _tag: RecordTag, u: &Field) {
        if t >= self.burn_in - 1e-9 && t >= self.next - 1e-9 {
            self.samples
                .push((t, self.probes.iter().map(|&p| u.values()[p]).collect()));
            self.next = t + self.lag;
        }
    }
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Time-aggregated histograms of `u(t, x_p)` after burn-in, sampled every
/// `lag` time units across `n_paths` paths from `u(0−) ≡ a`.
#[allow(clippy::too_many_arguments)]
pub fn empirical_distribution(
    a: f64,
    probe_cells: &[usize],
    lag: f64,
    bins: usize,
    spec: &ModelSpec,
    kick_spec: &KickSpec,
    cfg: &SolverConfig,
    grid: &Grid,
    ens: &EnsembleConfig,
    seed: u64,
) -> Result<DistributionReport> {
    ens.check(grid)?;
    if probe_cells.is_empty() || probe_cells.iter().any(|&p| p >= grid.cells()) {
        return Err(invalid("probe_cells", "need at least one cell index inside the grid"));
    }
    if lag < cfg.record_every - 1e-12 {
        return Err(invalid("lag", format!("{lag} below the record cadence {}", cfg.record_every)));
    }
    if bins < 2 {
        return Err(invalid("bins", "need at least two bins"));
    }
    let burn_in = ens.burn_in();
    let per_path = map_paths(ens.n_paths, seed, ens.workers, |_, path_seed| {
        let mut obs = SampleObserver {
            probes: probe_cells.to_vec(),
            burn_in,
            lag,
            next: burn_in,
            samples: Vec::new(),
        };
        let mut u = vec![Field::constant(*grid, a)];
        run_coupled(&mut u, 0.0, ens.horizon, spec, kick_spec, cfg, path_seed, &mut obs)?;
        Ok(obs.samples)
    })?;
    let mid = 0.5 * (burn_in + ens.horizon);
    let (lo, hi) = per_path
        .iter()
        .flatten()
        .flat_map(|(_, v)| v.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|b| lo + b as f64 * width).collect();
    let bin_of = |x: f64| (((x - lo) / width) as usize).min(bins - 1);
    let normalize = |counts: Vec<u64>| -> Vec<f64> {
        let total: u64 = counts.iter().sum();
        counts
            .into_iter()
            .map(|c| if total > 0 { c as f64 / total as f64 } else { 0.0 })
            .collect()
    };
    let mut histograms = Vec::with_capacity(probe_cells.len());
    let mut samples_per_cell = 0;
    for (k, &cell) in probe_cells.iter().enumerate() {
        let mut all = vec![0u64; bins];
        let mut first = vec![0u64; bins];
        let mut second = vec![0u64; bins];
        let mut count = 0;
        for path in &per_path {
            for (t, v) in path {
                let b = bin_of(v[k]);
                all[b] += 1;
                if *t < mid {
                    first[b] += 1;
                } else {
                    second[b] += 1;
                }
                count += 1;
            }
        }
        samples_per_cell = count;
        histograms.push(Histogram {
            probe_cell: cell,
            mass: normalize(all),
            first_half: normalize(first),
            second_half: normalize(second),
        });
    }
    let half_window_distance = histograms
        .iter()
        .map(|h| sup_distance(&h.first_half, &h.second_half))
        .collect();
    let mut cross_cell_distance = Vec::new();
    for p in 0..histograms.len() {
        for q in p + 1..histograms.len() {
            cross_cell_distance.push(sup_distance(&histograms[p].mass, &histograms[q].mass));
        }
    }
    Ok(DistributionReport {
        a,
        horizon: ens.horizon,
        burn_in,
        lag,
        edges,
        histograms,
        half_window_distance,
        cross_cell_distance,
        samples_per_cell,
    })
}
