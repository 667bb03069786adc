//! Hamilton–Jacobi potential, Cole–Hopf variable and the Gaussian-sum majorant.
//!
//! The potential `h` with `∂xh = u` solves
//!
//! ```text
//! ∂t h = κ(∂xh) ∂x²h − H(∂xh) + V,
//! ```
//!
//! and `φ = e^{−λh}` solves `∂tφ = κ(−∂xφ/(λφ)) ∂x²φ + λc₂φ` (with equality
//! when `H(p) = λp²` and `κ` is constant) with multiplicative jumps
//! `φ(k+) = e^{−λV_k} φ(k−)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ergodics::map_paths;
use crate::error::{invalid, Error, Result};
use crate::field::{deriv, mean, pairwise_sum, smoothstep5, Field, Grid};
use crate::model::{Diffusivity, ModelSpec};
use crate::noise::{sample_kick, KickSample, KickSpec};
use crate::solver::{RecordTag, SolverConfig, TrajectoryRecord};

/// Largest `|λh|` accepted by [`cole_hopf`].
pub const MAX_EXPONENT: f64 = 700.0;

/// Anchoring weights `ζ_c` on the grid: a smooth bump `1 − smoothstep5(|x|)`
/// supported on `[−1, 1]`, normalized so that `Σ ζ_i dx = 1`.
pub fn anchor_weights(grid: &Grid) -> Result<Vec<f64>> {
    let raw: Vec<f64> = grid
        .centers()
        .iter()
        .map(|&x| 1.0 - smoothstep5(x.abs()))
        .collect();
    let total = pairwise_sum(&raw) * grid.dx();
    if total <= 0.0 {
        return Err(invalid("grid", "cells too coarse for the anchoring bump on [−1, 1]"));
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

fn anchored_pairing(weights: &[f64], values: &[f64], dx: f64) -> f64 {
    let prods: Vec<f64> = weights.iter().zip(values).map(|(w, v)| w * v).collect();
    pairwise_sum(&prods) * dx
}

/// Trapezoid antiderivative of the zero-mean part of `u`, shifted so that its
/// `ζ_c` average vanishes. Returns `(slope, remainder)` with `slope = mean(u)`.
pub fn anchored_antiderivative(u: &Field, weights: &[f64]) -> (f64, Vec<f64>) {
    let a = mean(u);
    let dx = u.grid().dx();
    let v = u.values();
    let n = v.len();
    let mut w = vec![0.0; n];
    for i in 1..n {
        w[i] = w[i - 1] + 0.5 * dx * ((v[i - 1] - a) + (v[i] - a));
    }
    let shift = anchored_pairing(weights, &w, dx);
    for x in &mut w {
        *x -= shift;
    }
    (a, w)
}

/// `∫ ζ_c [κ(u) ∂xu − H(u)]` with centered differences.
fn anchored_flux(u: &Field, spec: &ModelSpec, weights: &[f64]) -> f64 {
    let du = deriv(u);
    let f: Vec<f64> = u
        .values()
        .iter()
        .zip(du.values())
        .map(|(&v, &d)| spec.kappa(v) * d - spec.hamiltonian(v))
        .collect();
    anchored_pairing(weights, &f, u.grid().dx())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialTrajectory {
    pub times: Vec<f64>,
    /// `h(t, x_i) = slope·x_i + remainder_i`.
    pub h_snapshots: Vec<Field>,
    /// The slope `mean(u)` at each record point.
    pub slopes: Vec<f64>,
    pub normalization: String,
}

impl PotentialTrajectory {
    /// `∂xh` at record `idx`, computed as slope plus the centered derivative of
    /// the periodic remainder (so the seam of `slope·x` does not enter).
    pub fn gradient(&self, idx: usize) -> Field {
        let h = &self.h_snapshots[idx];
        let a = self.slopes[idx];
        let grid = *h.grid();
        let rem = Field::from_vec_unchecked(
            grid,
            h.values()
                .iter()
                .enumerate()
                .map(|(i, v)| v - a * grid.center(i))
                .collect(),
        );
        deriv(&rem).map(|d| d + a)
    }

    /// `max_i |∂xh − u|` at every record point.
    pub fn gradient_errors(&self, traj: &TrajectoryRecord) -> Result<Vec<f64>> {
        if traj.snapshots.len() != self.h_snapshots.len() {
            return Err(invalid("traj", "record count differs from the potential"));
        }
        traj.snapshots
            .iter()
            .enumerate()
            .map(|(idx, u)| {
                let g = self.gradient(idx);
                Ok(g.sub(u)?.values().iter().fold(0.0_f64, |m, v| m.max(v.abs())))
            })
            .collect()
    }
}

/// Reconstructs `h` from a recorded trajectory and the kicks it consumed.
///
/// `h(t) = slope·x + A[u(t)] + ∫ ⟨ζ_c, κ(u)∂xu − H(u)⟩ ds + Σ_{t0 < k ≤ t} ⟨ζ_c, V_k⟩`,
/// with the time integral taken by the trapezoid rule over record points and
/// left limits `u(k−)` at kick times.
pub fn integrate_hj(
    traj: &TrajectoryRecord,
    spec: &ModelSpec,
    kicks: &[KickSample],
) -> Result<PotentialTrajectory> {
    if traj.snapshots.is_empty() || traj.snapshots.len() != traj.times.len() {
        return Err(invalid("traj", "trajectory must carry one snapshot per record time"));
    }
    if kicks.len() != traj.kick_indices.len() {
        return Err(Error::KickMismatch(format!(
            "{} kicks supplied, trajectory used {}",
            kicks.len(),
            traj.kick_indices.len()
        )));
    }
    let grid = *traj.snapshots[0].grid();
    let mut by_index = BTreeMap::new();
    for (k, &s) in kicks.iter().zip(&traj.kick_indices) {
        if k.kick_index != s {
            return Err(Error::KickMismatch(format!(
                "expected kick {s}, found {}",
                k.kick_index
            )));
        }
        grid.check_same(k.potential.grid())?;
        by_index.insert(s, k);
    }
    let pre: BTreeMap<i64, &Field> = traj.pre_kick.iter().map(|(s, f)| (*s, f)).collect();
    let weights = anchor_weights(&grid)?;
    let dx = grid.dx();

    let mut constant = 0.0;
    let mut h_snapshots = Vec::with_capacity(traj.times.len());
    let mut slopes = Vec::with_capacity(traj.times.len());
    let mut prev_flux = anchored_flux(&traj.snapshots[0], spec, &weights);
    for (idx, u) in traj.snapshots.iter().enumerate() {
        if idx > 0 {
            let dt = traj.times[idx] - traj.times[idx - 1];
            let kick = match traj.diagnostics.get(idx).map(|d| d.tag) {
                Some(RecordTag::PostKick) => Some(traj.times[idx].round() as i64),
                _ => None,
            };
            let right = match kick {
                Some(s) => {
                    let left = pre.get(&s).ok_or_else(|| {
                        Error::KickMismatch(format!("missing left limit at s = {s}"))
                    })?;
                    anchored_flux(left, spec, &weights)
                }
                None => anchored_flux(u, spec, &weights),
            };
            constant += 0.5 * dt * (prev_flux + right);
            if let Some(s) = kick {
                let v = by_index
                    .get(&s)
                    .ok_or_else(|| Error::KickMismatch(format!("no kick sample for s = {s}")))?;
                constant += anchored_pairing(&weights, v.potential.values(), dx);
            }
            prev_flux = anchored_flux(u, spec, &weights);
        }
        let (a, rem) = anchored_antiderivative(u, &weights);
        let h: Vec<f64> = rem
            .iter()
            .enumerate()
            .map(|(i, r)| a * grid.center(i) + r + constant)
            .collect();
        h_snapshots.push(Field::new(grid, h)?);
        slopes.push(a);
    }
    Ok(PotentialTrajectory {
        times: traj.times.clone(),
        h_snapshots,
        slopes,
        normalization: "zeta_c(x) = (1 - smoothstep5(|x|)) / Z on [-1, 1], sum zeta_c dx = 1".into(),
    })
}

/// `φ = e^{−λh}` together with its `λ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopfField {
    pub phi: Field,
    pub lambda: f64,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(invalid("lambda", format!("{lambda} must be positive")))
    }
}

pub fn cole_hopf(h: &Field, lambda: f64) -> Result<HopfField> {
    check_lambda(lambda)?;
    if let Some(v) = h.values().iter().find(|v| (lambda * **v).abs() > MAX_EXPONENT) {
        return Err(Error::Overflow {
            context: "Cole–Hopf transform",
            exponent: -lambda * v,
        });
    }
    Ok(HopfField {
        phi: h.map(|v| (-lambda * v).exp()),
        lambda,
    })
}

pub fn inverse_cole_hopf(phi: &HopfField) -> Result<Field> {
    check_lambda(phi.lambda)?;
    check_positive(&phi.phi)?;
    Ok(phi.phi.map(|p| -p.ln() / phi.lambda))
}

/// `φ ↦ e^{−λV} φ`
pub fn hopf_jump(phi: &HopfField, potential: &Field) -> Result<HopfField> {
    let lambda = phi.lambda;
    Ok(HopfField {
        phi: phi.phi.zip_with(potential, |p, v| (-lambda * v).exp() * p)?,
        lambda,
    })
}

fn check_positive(f: &Field) -> Result<()> {
    match f.values().iter().position(|v| !(*v > 0.0)) {
        Some(cell) => Err(Error::NonPositive {
            what: "phi",
            value: f.values()[cell],
            cell,
        }),
        None => Ok(()),
    }
}

/// `φ` along a potential trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopfTrajectory {
    pub times: Vec<f64>,
    pub fields: Vec<HopfField>,
    /// Times at which `φ` jumps; centered differences never straddle them.
    pub jump_times: Vec<f64>,
}

impl HopfTrajectory {
    pub fn from_potential(pot: &PotentialTrajectory, lambda: f64, jump_times: Vec<f64>) -> Result<Self> {
        let fields = pot
            .h_snapshots
            .iter()
            .map(|h| cole_hopf(h, lambda))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            times: pot.times.clone(),
            fields,
            jump_times,
        })
    }
}

/// Residual of `∂tφ = κ(−∂xφ/(λφ)) ∂x²φ + λc₂φ` with centered differences in
/// time and space, maximized over interior cells and interior record points
/// whose time stencil is uniform and jump-free, and divided by `sup φ`.
/// Wrap-around cells are excluded so that non-periodic `φ` (slope `≠ 0`) is allowed.
pub fn hopf_pde_residual(traj: &HopfTrajectory, spec: &ModelSpec, c2: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if traj.fields.len() != traj.times.len() || traj.fields.len() < 3 {
        return Err(invalid("phi_traj", "need at least three records with matching times"));
    }
    let mut sup = 0.0_f64;
    for f in &traj.fields {
        check_positive(&f.phi)?;
        sup = sup.max(f.phi.max());
    }
    let grid = *traj.fields[0].phi.grid();
    let dx = grid.dx();
    let n = grid.cells();
    let mut worst = 0.0_f64;
    let mut used = 0usize;
    for j in 1..traj.times.len() - 1 {
        let (t0, t1, t2) = (traj.times[j - 1], traj.times[j], traj.times[j + 1]);
        if ((t2 - t1) - (t1 - t0)).abs() > 1e-9 * (t2 - t0) {
            continue;
        }
        if traj.jump_times.iter().any(|&s| s > t0 && s <= t2) {
            continue;
        }
        let (p0, p1, p2) = (
            traj.fields[j - 1].phi.values(),
            traj.fields[j].phi.values(),
            traj.fields[j + 1].phi.values(),
        );
        let inv_2dt = 1.0 / (t2 - t0);
        for i in 1..n - 1 {
            let dt_phi = (p2[i] - p0[i]) * inv_2dt;
            let dphi = (p1[i + 1] - p1[i - 1]) / (2.0 * dx);
            let d2phi = (p1[i + 1] - 2.0 * p1[i] + p1[i - 1]) / (dx * dx);
            let k = spec.kappa(-dphi / (lambda * p1[i]));
            let r = (dt_phi - k * d2phi - lambda * c2 * p1[i]).abs();
            worst = worst.max(r);
        }
        used += 1;
    }
    if used == 0 {
        return Err(invalid("phi_traj", "no admissible centered time stencil"));
    }
    Ok(worst / sup)
}

/// `ψ(t, x) = t^{−a} e^{−b x²/t}` with `a = κ0²/2`, `b = κ0/4`.
pub fn heat_supersolution(t: f64, x: f64, kappa0: f64) -> f64 {
    let a = 0.5 * kappa0 * kappa0;
    let b = 0.25 * kappa0;
    t.powf(-a) * (-b * x * x / t).exp()
}

/// `inf_{|x| ≤ 1/2} ψ(1, x) = e^{−b/4}`.
pub fn supersolution_floor(kappa0: f64) -> f64 {
    (-0.25 * kappa0 / 4.0).exp()
}

/// Relative size of the outermost periodic layer the majorant sum may leave out.
pub const MAJORANT_TAIL: f64 = 1e-12;

/// `x ↦ (1/B) Σ_j φ_j ψ(t+1, x − (j + 1/2))` where `φ_j` is the largest value
/// of `phi0` on cells centered in `[j, j+1)` and the sum runs over the
/// torus period and periodic copies, at least one on each side and more
/// until the outermost layer is below [`MAJORANT_TAIL`] of the result.
pub fn supersolution_bound(phi0: &Field, t: f64, kappa0: f64) -> Result<Field> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(invalid("t", format!("{t} not in (0, 1]")));
    }
    if !(kappa0 > 0.0 && kappa0 <= 1.0) {
        return Err(invalid("kappa0", format!("{kappa0} not in (0, 1]")));
    }
    if let Some(cell) = phi0.values().iter().position(|v| *v < 0.0) {
        return Err(Error::NonPositive {
            what: "phi0 (must be nonnegative)",
            value: phi0.values()[cell],
            cell,
        });
    }
    let grid = *phi0.grid();
    let length = grid.length();
    let mut blocks: BTreeMap<i64, f64> = BTreeMap::new();
    for (i, &v) in phi0.values().iter().enumerate() {
        let j = grid.center(i).floor() as i64;
        let e = blocks.entry(j).or_insert(0.0);
        *e = e.max(v);
    }
    let floor = supersolution_floor(kappa0);
    let layer = |x: f64, p: i64| -> f64 {
        blocks
            .iter()
            .map(|(&j, &phij)| {
                phij * heat_supersolution(t + 1.0, x - (j as f64 + 0.5) - p as f64 * length, kappa0)
            })
            .sum::<f64>()
    };
    let values = grid
        .centers()
        .iter()
        .map(|&x| {
            let mut total = layer(x, 0);
            let mut p = 1;
            loop {
                let outer = layer(x, p) + layer(x, -p);
                total += outer;
                if outer <= MAJORANT_TAIL * total || p >= 64 {
                    break;
                }
                p += 1;
            }
            total / floor
        })
        .collect();
    Field::new(grid, values)
}

/// Explicit integrator for `∂tφ = κ(−∂xφ/(λφ)) ∂x²φ + λc₂φ` on the torus, at
/// the step `cfl_safety·dx²·κ0/2`, with the last step clipped to land on `t`.
pub fn evolve_hopf(
    phi0: &HopfField,
    spec: &ModelSpec,
    c2: f64,
    t: f64,
    cfg: &SolverConfig,
) -> Result<HopfField> {
    check_lambda(phi0.lambda)?;
    check_positive(&phi0.phi)?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid("t", format!("{t} must be ≥ 0")));
    }
    let lambda = phi0.lambda;
    let grid = *phi0.phi.grid();
    let n = grid.cells();
    let dx = grid.dx();
    let dt_max = (cfg.cfl_safety * dx * dx * spec.kappa0() / 2.0).min(cfg.max_dt);
    let constant_kappa = matches!(spec.diffusivity, Diffusivity::Constant { .. });
    let k_const = spec.kappa(0.0);
    let mut p = phi0.phi.values().to_vec();
    let mut next = vec![0.0; n];
    let mut time = 0.0;
    let mut steps = 0u64;
    while time < t {
        let mut dt = dt_max;
        let last = dt >= (t - time) - 1e-12 * t.max(1.0);
        if last {
            dt = t - time;
        }
        for i in 0..n {
            let l = p[if i == 0 { n - 1 } else { i - 1 }];
            let r = p[if i + 1 == n { 0 } else { i + 1 }];
            let lap = (r - 2.0 * p[i] + l) / (dx * dx);
            let k = if constant_kappa {
                k_const
            } else {
                spec.kappa(-(r - l) / (2.0 * dx * lambda * p[i]))
            };
            next[i] = p[i] + dt * (k * lap + lambda * c2 * p[i]);
        }
        std::mem::swap(&mut p, &mut next);
        steps += 1;
        time = if last { t } else { time + dt };
        if p.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Blowup { step: steps, time });
        }
    }
    Ok(HopfField {
        phi: Field::new(grid, p)?,
        lambda,
    })
}

/// Monte Carlo growth of `E φ(k−, x)` for `φ(0−) ≡ 1`, alternating jumps
/// `e^{−λV_k}` with unit-time [`evolve_hopf`] flows. Expectations use the
/// spatial average over the torus and the average over paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopfGrowth {
    /// Integer times `k = 1..=horizon`.
    pub times: Vec<f64>,
    pub log_mean: Vec<f64>,
    pub log_se: Vec<f64>,
    /// Least-squares line `log E φ(k−) ≈ slope·k + intercept`.
    pub slope: f64,
    pub slope_se: f64,
    pub intercept: f64,
    pub n_paths: usize,
}

impl HopfGrowth {
    /// Largest excess of `log E φ(k−)` over the fitted line, in units of its standard error.
    pub fn max_excess_over_line(&self) -> f64 {
        self.times
            .iter()
            .zip(self.log_mean.iter().zip(&self.log_se))
            .map(|(&t, (&y, &se))| (y - (self.slope * t + self.intercept)) / se.max(f64::MIN_POSITIVE))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn hopf_moment_growth(
    spec: &ModelSpec,
    kick_spec: &KickSpec,
    grid: &Grid,
    lambda: f64,
    c2: f64,
    horizon: usize,
    n_paths: usize,
    seed: u64,
    cfg: &SolverConfig,
    workers: Option<usize>,
) -> Result<HopfGrowth> {
    check_lambda(lambda)?;
    if horizon < 2 {
        return Err(invalid("horizon", format!("{horizon} < 2")));
    }
    if n_paths < 8 {
        return Err(invalid("n_paths", format!("{n_paths} < 8")));
    }
    let per_path: Vec<Vec<f64>> = map_paths(n_paths, seed, workers, |_, path_seed| {
        let kicks = kick_spec.with_seed(path_seed);
        let mut phi = HopfField {
            phi: Field::constant(*grid, 1.0),
            lambda,
        };
        let mut out = Vec::with_capacity(horizon);
        for k in 0..horizon as i64 {
            let kick = sample_kick(&kicks, grid, k)?;
            phi = hopf_jump(&phi, &kick.potential)?;
            phi = evolve_hopf(&phi, spec, c2, 1.0, cfg)?;
            out.push(mean(&phi.phi));
        }
        Ok(out)
    })?;
    let m = n_paths as f64;
    let mut means = Vec::with_capacity(horizon);
    let mut log_mean = Vec::with_capacity(horizon);
    let mut log_se = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let col: Vec<f64> = per_path.iter().map(|p| p[k]).collect();
        let est = crate::noise::mean_and_se(&col);
        means.push(est.estimate);
        log_mean.push(est.estimate.ln());
        log_se.push(est.std_error / est.estimate);
    }
    let times: Vec<f64> = (1..=horizon).map(|k| k as f64).collect();
    let tbar = times.iter().sum::<f64>() / horizon as f64;
    let sxx: f64 = times.iter().map(|t| (t - tbar) * (t - tbar)).sum();
    let ybar = log_mean.iter().sum::<f64>() / horizon as f64;
    let slope = times
        .iter()
        .zip(&log_mean)
        .map(|(t, y)| (t - tbar) * (y - ybar))
        .sum::<f64>()
        / sxx;
    let intercept = ybar - slope * tbar;
    // delta-method influence of each path on the fitted slope
    let influence: Vec<f64> = per_path
        .iter()
        .map(|p| {
            times
                .iter()
                .zip(p.iter().zip(&means))
                .map(|(t, (v, mu))| (t - tbar) / sxx * (v / mu - 1.0))
                .sum::<f64>()
        })
        .collect();
    let inf_mean = influence.iter().sum::<f64>() / m;
    let var = influence.iter().map(|x| (x - inf_mean).powi(2)).sum::<f64>() / (m - 1.0);
    Ok(HopfGrowth {
        times,
        log_mean,
        log_se,
        slope,
        slope_se: (var / m).sqrt(),
        intercept,
        n_paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_model, ModelFamily};
    use crate::solver::phi_flow;

    #[test]
    fn anchor_weights_integrate_to_one() {
        let g = Grid::new(16.0, 256).unwrap();
        let w = anchor_weights(&g).unwrap();
        assert!((w.iter().sum::<f64>() * g.dx() - 1.0).abs() < 1e-13);
        let coarse = Grid::new(16.0, 8).unwrap();
        assert!(anchor_weights(&coarse).is_err());
    }

    #[test]
    fn constant_state_potentials() {
        let g = Grid::new(8.0, 64).unwrap();
        let spec = builtin_model(ModelFamily::Burgers);
        let silent = KickSpec::new(4, 0.0, 8.0, 0).unwrap();
        let cfg = SolverConfig {
            record_every: 0.25,
            ..SolverConfig::default()
        };
        let zero = phi_flow(&Field::constant(g, 0.0), 0.0, 2.0, &spec, &silent, &cfg, 0).unwrap();
        let kicks = crate::solver::trajectory_kicks(&zero, &silent, &g).unwrap();
        let pot = integrate_hj(&zero, &spec, &kicks).unwrap();
        for h in &pot.h_snapshots {
            assert!(h.values().iter().all(|v| v.abs() < 1e-14));
        }
        let c = 0.75;
        let tr = phi_flow(&Field::constant(g, c), 0.0, 2.0, &spec, &silent, &cfg, 0).unwrap();
        let pot = integrate_hj(&tr, &spec, &kicks).unwrap();
        for (idx, h) in pot.h_snapshots.iter().enumerate() {
            let t = pot.times[idx];
            for (i, v) in h.values().iter().enumerate() {
                let expected = c * g.center(i) - spec.hamiltonian(c) * t;
                assert!((v - expected).abs() < 1e-12, "{v} vs {expected}");
            }
            assert!(pot.gradient(idx).values().iter().all(|d| (d - c).abs() < 1e-13));
        }
    }

    #[test]
    fn kick_list_is_checked() {
        let g = Grid::new(16.0, 256).unwrap();
        let spec = builtin_model(ModelFamily::Burgers);
        let ks = KickSpec::default();
        let tr = phi_flow(&Field::constant(g, 0.0), 0.0, 2.0, &spec, &ks, &SolverConfig::default(), 5).unwrap();
        assert!(matches!(integrate_hj(&tr, &spec, &[]), Err(Error::KickMismatch(_))));
        let wrong: Vec<KickSample> = (5..7).map(|s| sample_kick(&ks, &g, s).unwrap()).collect();
        assert!(matches!(integrate_hj(&tr, &spec, &wrong), Err(Error::KickMismatch(_))));
    }

    #[test]
    fn cole_hopf_examples() {
        let g = Grid::new(8.0, 32).unwrap();
        let one = cole_hopf(&Field::constant(g, 0.0), 1.0).unwrap();
        assert!(one.phi.values().iter().all(|&p| p == 1.0));
        let half = cole_hopf(&Field::constant(g, 1.0), 0.5).unwrap();
        assert!((half.phi.values()[3] - 0.60653).abs() < 1e-5);
        assert!(cole_hopf(&Field::constant(g, 1.0), 0.0).is_err());
        assert!(matches!(
            cole_hopf(&Field::constant(g, -1500.0), 1.0),
            Err(Error::Overflow { .. })
        ));
        let h = Field::from_fn(g, |x| 3.0 * x.sin() + 0.2 * x);
        let back = inverse_cole_hopf(&cole_hopf(&h, 0.7).unwrap()).unwrap();
        for (a, b) in back.values().iter().zip(h.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        let v = Field::from_fn(g, |x| (2.0 * x).cos());
        let jumped = hopf_jump(&cole_hopf(&h, 0.7).unwrap(), &v).unwrap();
        let direct = cole_hopf(&h.add(&v).unwrap(), 0.7).unwrap();
        for (a, b) in jumped.phi.values().iter().zip(direct.phi.values()) {
            assert!(((a - b) / b).abs() < 1e-13);
        }
    }

    #[test]
    fn nonpositive_phi_rejected() {
        let g = Grid::new(8.0, 32).unwrap();
        let bad = HopfField {
            phi: Field::from_fn(g, |x| x),
            lambda: 1.0,
        };
        assert!(matches!(inverse_cole_hopf(&bad), Err(Error::NonPositive { .. })));
        let traj = HopfTrajectory {
            times: vec![0.0, 0.1, 0.2],
            fields: vec![bad.clone(), bad.clone(), bad],
            jump_times: vec![],
        };
        let spec = builtin_model(ModelFamily::Burgers);
        assert!(hopf_pde_residual(&traj, &spec, 0.0, 1.0).is_err());
    }

    #[test]
    fn constant_phi_has_no_residual() {
        let g = Grid::new(8.0, 64).unwrap();
        let f = HopfField {
            phi: Field::constant(g, 0.3),
            lambda: 0.5,
        };
        let traj = HopfTrajectory {
            times: vec![0.0, 0.1, 0.2, 0.3],
            fields: vec![f.clone(), f.clone(), f.clone(), f],
            jump_times: vec![],
        };
        let spec = builtin_model(ModelFamily::Burgers);
        assert!(hopf_pde_residual(&traj, &spec, 0.0, 0.5).unwrap() <= 1e-10);
    }

    #[test]
    fn heat_mode_residual() {
        let g = Grid::new(2.0 * std::f64::consts::PI, 256).unwrap();
        let spec = builtin_model(ModelFamily::Burgers);
        let eps = 0.3;
        let times: Vec<f64> = (0..11).map(|k| k as f64 * 0.01).collect();
        let fields = times
            .iter()
            .map(|&t| HopfField {
                phi: Field::from_fn(g, |x| 1.0 + eps * (-t).exp() * x.cos()),
                lambda: 1.0,
            })
            .collect();
        let traj = HopfTrajectory {
            times,
            fields,
            jump_times: vec![],
        };
        assert!(hopf_pde_residual(&traj, &spec, 0.0, 1.0).unwrap() <= 1e-3);
    }

    #[test]
    fn supersolution_examples() {
        for k0 in [0.25, 0.5, 1.0] {
            assert_eq!(heat_supersolution(1.0, 0.0, k0), 1.0);
        }
        assert!((supersolution_floor(1.0) - 0.93941).abs() < 1e-5);
        // direct minimization of ψ(1, ·) over [−1/2, 1/2]
        let brute = (0..=1000)
            .map(|i| heat_supersolution(1.0, -0.5 + i as f64 / 1000.0, 1.0))
            .fold(f64::INFINITY, f64::min);
        assert!((brute - supersolution_floor(1.0)).abs() < 1e-14);
        let g = Grid::new(16.0, 128).unwrap();
        let zero = supersolution_bound(&Field::constant(g, 0.0), 0.5, 1.0).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
        assert!(supersolution_bound(&Field::constant(g, -1.0), 0.5, 1.0).is_err());
        assert!(supersolution_bound(&Field::constant(g, 1.0), 0.0, 1.0).is_err());
        // the majorant dominates its own data at t → 0
        let phi0 = Field::from_fn(g, |x| 1.0 + 0.5 * (3.0 * x).sin());
        let m = supersolution_bound(&phi0, 1e-9, 1.0).unwrap();
        for (a, b) in m.values().iter().zip(phi0.values()) {
            assert!(a >= b);
        }
    }

    #[test]
    fn hopf_evolution_of_constant() {
        let g = Grid::new(8.0, 64).unwrap();
        let spec = builtin_model(ModelFamily::TanhKappaSubquadratic);
        let f = HopfField {
            phi: Field::constant(g, 2.0),
            lambda: 1.0,
        };
        let out = evolve_hopf(&f, &spec, 0.5, 1.0, &SolverConfig::default()).unwrap();
        let expected = 2.0 * (0.5_f64).exp();
        for v in out.phi.values() {
            assert!((v / expected - 1.0).abs() < 1e-3);
        }
    }
}
