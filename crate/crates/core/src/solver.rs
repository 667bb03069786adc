//! Explicit conservative finite-volume solver for
//!
//! ```text
//! ∂t u = ∂x² 𝒦(u) − ∂x H(u)          between kicks
//! u(s+) = u(s−) + ∂xV_s              at integer times s
//! ```
//!
//! The update is written in flux form,
//!
//! ```text
//! u'_i = u_i + dt/dx (G_{i+1/2} − G_{i−1/2}),
//! G_{i+1/2} = (𝒦(u_{i+1}) − 𝒦(u_i))/dx − F(u_i, u_{i+1}),
//! ```
//!
//! so the discrete total mass is conserved. With a monotone numerical flux
//! `F` and a time step below both the diffusive and the advective CFL limit,
//! the update is nondecreasing in every stencil input. That gives the
//! discrete maximum principle, comparison and L1-contraction exactly.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::{self, deriv, l2_norm, mean, sup_norm, weighted_sup_norm, Field, Grid};
use crate::model::ModelSpec;
use crate::noise::{sample_kick, KickSample, KickSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxScheme {
    /// Rusanov flux with the wave speed `max(|H'(u_L)|, |H'(u_R)|)`.
    LaxFriedrichsLocal,
    /// `F(a, b) = H(max(a, 0)) + H(min(b, 0)) − H(0)` for convex `H` minimized at 0.
    EngquistOsher,
    /// `(H(a) + H(b))/2`. Second order, but monotone only while the cell
    /// Péclet number `|H'| dx / (2κ0)` stays below 1.
    Central,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub cfl_safety: f64,
    pub max_dt: f64,
    pub flux_scheme: FluxScheme,
    pub record_every: f64,
    /// Exponents `ℓ` of the `⟨x⟩^ℓ` weighted sup norms reported per record.
    pub weighted_ells: Vec<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            cfl_safety: 0.45,
            max_dt: 0.01,
            flux_scheme: FluxScheme::EngquistOsher,
            record_every: 0.0625,
            weighted_ells: vec![0.5],
        }
    }
}

impl SolverConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(invalid("cfl_safety", format!("{} not in (0, 1]", self.cfl_safety)));
        }
        if !(self.max_dt > 0.0 && self.max_dt.is_finite()) {
            return Err(invalid("max_dt", format!("{} must be positive", self.max_dt)));
        }
        if !(self.record_every > 0.0 && self.record_every.is_finite()) {
            return Err(invalid("record_every", format!("{} must be positive", self.record_every)));
        }
        if let Some(l) = self.weighted_ells.iter().find(|l| !(**l >= 0.0 && **l < 1.0)) {
            return Err(invalid("weighted_ells", format!("{l} not in [0, 1)")));
        }
        Ok(())
    }
}

/// Reusable scratch space for one field's update.
struct Stepper<'a> {
    spec: &'a ModelSpec,
    scheme: FluxScheme,
    dx: f64,
    h_zero: f64,
    primitive: Vec<f64>,
    ham: Vec<f64>,
    speed: Vec<f64>,
    face: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(spec: &'a ModelSpec, scheme: FluxScheme, grid: &Grid) -> Self {
        let n = grid.cells();
        Self {
            spec,
            scheme,
            dx: grid.dx(),
            h_zero: spec.hamiltonian(0.0),
            primitive: vec![0.0; n],
            ham: vec![0.0; n],
            speed: if scheme == FluxScheme::LaxFriedrichsLocal {
                vec![0.0; n]
            } else {
                Vec::new()
            },
            face: vec![0.0; n],
        }
    }

    /// Advances `u` in place by `dt`.
    fn advance(&mut self, u: &mut [f64], dt: f64) {
        let spec = self.spec;
        spec.diffusivity.primitive_into(u, &mut self.primitive);
        spec.hamiltonian.value_into(u, &mut self.ham);
        let inv_dx = 1.0 / self.dx;
        let h0 = self.h_zero;
        match self.scheme {
            FluxScheme::EngquistOsher => {
                let ham = &self.ham;
                fill_faces_impl(u, &self.primitive, &mut self.face, inv_dx, |u, i, j| {
                    let left = if u[i] > 0.0 { ham[i] } else { h0 };
                    let right = if u[j] < 0.0 { ham[j] } else { h0 };
                    left + right - h0
                });
            }
            FluxScheme::LaxFriedrichsLocal => {
                for (s, &v) in self.speed.iter_mut().zip(u.iter()) {
                    *s = spec.hamiltonian_prime(v).abs();
                }
                let (ham, speed) = (&self.ham, &self.speed);
                fill_faces_impl(u, &self.primitive, &mut self.face, inv_dx, |u, i, j| {
                    let alpha = speed[i].max(speed[j]);
                    0.5 * (ham[i] + ham[j]) - 0.5 * alpha * (u[j] - u[i])
                });
            }
            FluxScheme::Central => {
                let ham = &self.ham;
                fill_faces_impl(u, &self.primitive, &mut self.face, inv_dx, |_, i, j| 0.5 * (ham[i] + ham[j]));
            }
        }
        let r = dt * inv_dx;
        let n = u.len();
        let mut prev = self.face[n - 1];
        for (v, &cur) in u.iter_mut().zip(self.face.iter()) {
            *v += r * (cur - prev);
            prev = cur;
        }
    }
}

/// `G_{i+1/2} = (𝒦_{i+1} − 𝒦_i)/dx − F(u_i, u_{i+1})`, written into `face`.
fn fill_faces_impl(
    u: &[f64],
    primitive: &[f64],
    face: &mut [f64],
    inv_dx: f64,
    flux: impl Fn(&[f64], usize, usize) -> f64,
) {
    let n = u.len();
    for i in 0..n - 1 {
        face[i] = (primitive[i + 1] - primitive[i]) * inv_dx - flux(u, i, i + 1);
    }
    face[n - 1] = (primitive[0] - primitive[n - 1]) * inv_dx - flux(u, n - 1, 0);
}

/// Largest stable step for `u`: the diffusive limit `cfl·dx²·κ0/2` (using
/// `sup κ ≤ 1/κ0`), the advective limit `cfl·dx / max|H'(u_i)|`, and `max_dt`.
pub fn stable_dt(u: &[f64], dx: f64, spec: &ModelSpec, cfg: &SolverConfig) -> f64 {
    let diffusive = cfg.cfl_safety * dx * dx * spec.kappa0() / 2.0;
    let (lo, hi) = u
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let speed = spec.hamiltonian.max_speed(lo, hi);
    let advective = if speed > 0.0 {
        cfg.cfl_safety * dx / speed
    } else {
        f64::INFINITY
    };
    diffusive.min(advective).min(cfg.max_dt)
}

/// One forward-Euler step of the unforced flow at the CFL step size.
pub fn step_unforced(u: &Field, spec: &ModelSpec, cfg: &SolverConfig) -> Result<(Field, f64)> {
    let dt = stable_dt(u.values(), u.grid().dx(), spec, cfg);
    let next = step_with_dt(u, spec, cfg, dt)?;
    Ok((next, dt))
}

/// One step with a caller-chosen `dt`. Monotone only if `dt` respects the
/// CFL limits of every input it will be compared against.
pub fn step_with_dt(u: &Field, spec: &ModelSpec, cfg: &SolverConfig, dt: f64) -> Result<Field> {
    let mut stepper = Stepper::new(spec, cfg.flux_scheme, u.grid());
    let mut next = u.clone();
    stepper.advance(next.values_mut(), dt);
    if !next.is_finite() {
        return Err(Error::Blowup { step: 0, time: dt });
    }
    Ok(next)
}

/// `u ↦ u + ∂xV_s`
pub fn apply_kick(u: &Field, kick: &KickSample) -> Result<Field> {
    u.add(&kick.gradient)
}

/// What the record at a given time holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordTag {
    /// Initial state, no kick at the start time.
    Initial,
    /// Regular cadence point.
    Regular,
    /// State right after the kick at this integer time (`s+`).
    PostKick,
    /// End of the run (`t1−`).
    Final,
}

/// Hooks called by the flow driver. `member` indexes the coupled fields.
pub trait FlowObserver {
    fn record(&mut self, _member: usize, _t: f64, _tag: RecordTag, _u: &Field) {}
    /// Called before every step with the state at its left end.
    fn step(&mut self, _member: usize, _t: f64, _dt: f64, _u: &Field) {}
    /// Called at a kick with the left-limit state and the kick about to be applied.
    fn kick(&mut self, _member: usize, _s: i64, _pre: &Field, _kick: &KickSample) {}
    /// Whether [`FlowObserver::step`] needs to run; skipping it saves a call per step.
    fn wants_steps(&self) -> bool {
        false
    }
}

impl FlowObserver for () {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub time: f64,
    pub tag: RecordTag,
    pub mean: f64,
    pub l2: f64,
    pub h1_seminorm: f64,
    pub sup: f64,
    pub hamiltonian_mean: f64,
    /// `(ℓ, ‖u‖_{C_{p_ℓ}})` pairs.
    pub weighted_sup: Vec<(f64, f64)>,
}

impl Diagnostics {
    pub fn of(t: f64, tag: RecordTag, u: &Field, spec: &ModelSpec, ells: &[f64]) -> Self {
        let h: Vec<f64> = u.values().iter().map(|&v| spec.hamiltonian(v)).collect();
        Self {
            time: t,
            tag,
            mean: mean(u),
            l2: l2_norm(u),
            h1_seminorm: l2_norm(&deriv(u)),
            sup: sup_norm(u),
            hamiltonian_mean: field::pairwise_sum(&h) / h.len() as f64,
            weighted_sup: ells.iter().map(|&l| (l, weighted_sup_norm(u, l))).collect(),
        }
    }
}

/// Time series of one path: diagnostics at every record point plus
/// (optionally) the snapshots, and the left limits `u(s−)` at interior kicks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub times: Vec<f64>,
    pub diagnostics: Vec<Diagnostics>,
    pub snapshots: Vec<Field>,
    /// `(s, u(s−))` for every kick strictly after the start time.
    pub pre_kick: Vec<(i64, Field)>,
    /// Integer times at which kicks were applied.
    pub kick_indices: Vec<i64>,
}

impl TrajectoryRecord {
    fn empty(seed: u64) -> Self {
        Self {
            seed,
            times: Vec::new(),
            diagnostics: Vec::new(),
            snapshots: Vec::new(),
            pre_kick: Vec::new(),
            kick_indices: Vec::new(),
        }
    }

    pub fn last(&self) -> Option<&Field> {
        self.snapshots.last()
    }

    /// Diagnostics as JSON lines, one row per record point.
    pub fn diagnostics_jsonl(&self) -> Vec<String> {
        self.diagnostics
            .iter()
            .map(|d| serde_json_row(d))
            .collect()
    }
}

// Hand-rolled to keep serde_json out of the core crate's dependencies.
fn serde_json_row(d: &Diagnostics) -> String {
    let ws: Vec<String> = d
        .weighted_sup
        .iter()
        .map(|(l, v)| format!("[{},{}]", fmt_f64(*l), fmt_f64(*v)))
        .collect();
    let tag = match d.tag {
        RecordTag::Initial => "initial",
        RecordTag::Regular => "regular",
        RecordTag::PostKick => "post_kick",
        RecordTag::Final => "final",
    };
    format!(
        "{{\"time\":{},\"tag\":\"{}\",\"mean\":{},\"l2\":{},\"h1_seminorm\":{},\"sup\":{},\"hamiltonian_mean\":{},\"weighted_sup\":[{}]}}",
        fmt_f64(d.time),
        tag,
        fmt_f64(d.mean),
        fmt_f64(d.l2),
        fmt_f64(d.h1_seminorm),
        fmt_f64(d.sup),
        fmt_f64(d.hamiltonian_mean),
        ws.join(",")
    )
}

/// Shortest round-trip float formatting with a guaranteed decimal point or exponent.
fn fmt_f64(v: f64) -> String {
    let s = format!("{v:?}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

/// Observer that fills [`TrajectoryRecord`]s.
pub struct Recorder<'a> {
    spec: &'a ModelSpec,
    ells: Vec<f64>,
    keep_snapshots: bool,
    pub records: Vec<TrajectoryRecord>,
}

impl<'a> Recorder<'a> {
    pub fn new(spec: &'a ModelSpec, cfg: &SolverConfig, members: usize, seed: u64, keep_snapshots: bool) -> Self {
        Self {
            spec,
            ells: cfg.weighted_ells.clone(),
            keep_snapshots,
            records: (0..members).map(|_| TrajectoryRecord::empty(seed)).collect(),
        }
    }
}

impl FlowObserver for Recorder<'_> {
    fn record(&mut self, member: usize, t: f64, tag: RecordTag, u: &Field) {
        let rec = &mut self.records[member];
        rec.times.push(t);
        rec.diagnostics.push(Diagnostics::of(t, tag, u, self.spec, &self.ells));
        if self.keep_snapshots {
            rec.snapshots.push(u.clone());
        }
    }

    fn kick(&mut self, member: usize, s: i64, pre: &Field, _kick: &KickSample) {
        let rec = &mut self.records[member];
        if rec.times.last().is_some_and(|&t| t < s as f64) {
            rec.pre_kick.push((s, pre.clone()));
        }
        rec.kick_indices.push(s);
    }
}

/// Forwards every hook to two observers.
pub struct Tee<'a, A: FlowObserver, B: FlowObserver>(pub &'a mut A, pub &'a mut B);

impl<A: FlowObserver, B: FlowObserver> FlowObserver for Tee<'_, A, B> {
    fn record(&mut self, member: usize, t: f64, tag: RecordTag, u: &Field) {
        self.0.record(member, t, tag, u);
        self.1.record(member, t, tag, u);
    }
    fn step(&mut self, member: usize, t: f64, dt: f64, u: &Field) {
        if self.0.wants_steps() {
            self.0.step(member, t, dt, u);
        }
        if self.1.wants_steps() {
            self.1.step(member, t, dt, u);
        }
    }
    fn kick(&mut self, member: usize, s: i64, pre: &Field, kick: &KickSample) {
        self.0.kick(member, s, pre, kick);
        self.1.kick(member, s, pre, kick);
    }
    fn wants_steps(&self) -> bool {
        self.0.wants_steps() || self.1.wants_steps()
    }
}

const EVENT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug)]
struct Event {
    time: f64,
    kick: Option<i64>,
}

/// Kick instants (integers in `[t0, t1)`) merged with the record grid `kτ ∈ (t0, t1]`.
fn event_schedule(t0: f64, t1: f64, tau: f64) -> Vec<Event> {
    let mut events: Vec<Event> = Vec::new();
    let first_kick = (t0 - EVENT_TOL).ceil() as i64;
    let mut s = first_kick.max(if (t0 - t0.round()).abs() <= EVENT_TOL { t0.round() as i64 } else { t0.ceil() as i64 });
    while (s as f64) < t1 - EVENT_TOL {
        if s as f64 > t0 + EVENT_TOL {
            events.push(Event {
                time: s as f64,
                kick: Some(s),
            });
        }
        s += 1;
    }
    let mut k = ((t0 / tau) - EVENT_TOL).floor() as i64 + 1;
    loop {
        let t = k as f64 * tau;
        if t > t1 + EVENT_TOL {
            break;
        }
        if t > t0 + EVENT_TOL {
            let near_int = (t - t.round()).abs() <= EVENT_TOL;
            let is_kick = events.iter().any(|e| e.kick.is_some() && (e.time - t).abs() <= EVENT_TOL);
            if !(near_int && is_kick) {
                events.push(Event { time: t.min(t1), kick: None });
            }
        }
        k += 1;
    }
    if !events.iter().any(|e| (e.time - t1).abs() <= EVENT_TOL) {
        events.push(Event { time: t1, kick: None });
    }
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    events.dedup_by(|b, a| (a.time - b.time).abs() <= EVENT_TOL && {
        a.kick = a.kick.or(b.kick);
        true
    });
    // the last event is always exactly t1
    if let Some(last) = events.last_mut() {
        if (last.time - t1).abs() <= EVENT_TOL {
            last.time = t1;
        }
    }
    events
}

fn is_kick_time(t: f64) -> Option<i64> {
    if (t - t.round()).abs() <= EVENT_TOL {
        Some(t.round() as i64)
    } else {
        None
    }
}

/// Evolves `members` under the same kicks from `u(t0−)` to `u(t1−)`, using a
/// common step size (the smallest CFL limit among the members) so that
/// comparisons between them are exact at the discrete level.
#[allow(clippy::too_many_arguments)]
pub fn run_coupled<O: FlowObserver>(
    members: &mut [Field],
    t0: f64,
    t1: f64,
    spec: &ModelSpec,
    kick_spec: &KickSpec,
    cfg: &SolverConfig,
    seed: u64,
    observer: &mut O,
) -> Result<()> {
    cfg.check()?;
    kick_spec.check()?;
    if members.is_empty() {
        return Err(invalid("members", "need at least one field"));
    }
    if !(t0 >= 0.0 && t1 >= t0 && t1.is_finite()) {
        return Err(invalid("t1", format!("need 0 ≤ t0 ≤ t1, got [{t0}, {t1}]")));
    }
    let grid = *members[0].grid();
    for m in members.iter() {
        grid.check_same(m.grid())?;
    }
    let kicks = kick_spec.with_seed(seed);
    let dx = grid.dx();
    let mut steppers: Vec<Stepper> = members
        .iter()
        .map(|_| Stepper::new(spec, cfg.flux_scheme, &grid))
        .collect();
    let wants_steps = observer.wants_steps();
    let mut step_count: u64 = 0;

    let apply = |members: &mut [Field], s: i64, observer: &mut O| -> Result<()> {
        let kick = sample_kick(&kicks, &grid, s)?;
        for (idx, m) in members.iter_mut().enumerate() {
            observer.kick(idx, s, m, &kick);
            *m = apply_kick(m, &kick)?;
        }
        Ok(())
    };

    // start: the kick at an integer t0 comes first
    let start_tag = if t1 > t0 {
        match is_kick_time(t0) {
            Some(s) => {
                apply(members, s, observer)?;
                RecordTag::PostKick
            }
            None => RecordTag::Initial,
        }
    } else {
        RecordTag::Initial
    };
    for (idx, m) in members.iter().enumerate() {
        observer.record(idx, t0, start_tag, m);
    }
    if t1 == t0 {
        return Ok(());
    }

    let mut t = t0;
    for event in event_schedule(t0, t1, cfg.record_every) {
        // unforced flow up to the event
        while t < event.time {
            let mut dt = members
                .iter()
                .map(|m| stable_dt(m.values(), dx, spec, cfg))
                .fold(f64::INFINITY, f64::min);
            let remaining = event.time - t;
            let last = dt >= remaining - 1e-12 * event.time.abs().max(1.0);
            if last {
                dt = remaining;
            }
            for (idx, (m, st)) in members.iter_mut().zip(steppers.iter_mut()).enumerate() {
                if wants_steps {
                    observer.step(idx, t, dt, m);
                }
                st.advance(m.values_mut(), dt);
            }
            step_count += 1;
            t = if last { event.time } else { t + dt };
            if members.iter().any(|m| !m.is_finite()) {
                return Err(Error::Blowup {
                    step: step_count,
                    time: t,
                });
            }
        }
        t = event.time;
        let tag = match event.kick {
            Some(s) => {
                apply(members, s, observer)?;
                RecordTag::PostKick
            }
            None if t == t1 => RecordTag::Final,
            None => RecordTag::Regular,
        };
        for (idx, m) in members.iter().enumerate() {
            observer.record(idx, t, tag, m);
        }
    }
    Ok(())
}

/// `Ψ_s`: the unforced flow for time `s`, the last step clipped to land on `s`.
pub fn psi(u0: &Field, s: f64, spec: &ModelSpec, cfg: &SolverConfig) -> Result<Field> {
    if !(s >= 0.0 && s.is_finite()) {
        return Err(invalid("s", format!("{s} must be ≥ 0")));
    }
    cfg.check()?;
    let mut u = u0.clone();
    let mut st = Stepper::new(spec, cfg.flux_scheme, u0.grid());
    let dx = u0.grid().dx();
    let mut t = 0.0;
    let mut steps = 0u64;
    while t < s {
        let mut dt = stable_dt(u.values(), dx, spec, cfg);
        let last = dt >= (s - t) - 1e-12 * s.max(1.0);
        if last {
            dt = s - t;
        }
        st.advance(u.values_mut(), dt);
        steps += 1;
        t = if last { s } else { t + dt };
        if !u.is_finite() {
            return Err(Error::Blowup { step: steps, time: t });
        }
    }
    Ok(u)
}

/// `Φ_{t0,t1}` with kicks drawn from `kick_spec` keyed by `seed`; records
/// diagnostics and snapshots along the way.
#[allow(clippy::too_many_arguments)]
pub fn phi_flow(
    u_init: &Field,
    t0: f64,
    t1: f64,
    spec: &ModelSpec,
    kick_spec: &KickSpec,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<TrajectoryRecord> {
    let mut rec = Recorder::new(spec, cfg, 1, seed, true);
    let mut members = vec![u_init.clone()];
    run_coupled(&mut members, t0, t1, spec, kick_spec, cfg, seed, &mut rec)?;
    Ok(rec.records.pop().expect("one member"))
}

/// Evolves several initial fields under one noise realization and a shared step sequence.
#[allow(clippy::too_many_arguments)]
pub fn evolve_same_noise(
    inits: &[Field],
    t0: f64,
    t1: f64,
    spec: &ModelSpec,
    kick_spec: &KickSpec,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<Vec<TrajectoryRecord>> {
    let mut rec = Recorder::new(spec, cfg, inits.len(), seed, true);
    let mut members = inits.to_vec();
    run_coupled(&mut members, t0, t1, spec, kick_spec, cfg, seed, &mut rec)?;
    Ok(rec.records)
}

#[allow(clippy::too_many_arguments)]
pub fn evolve_pair_same_noise(
    u_init: &Field,
    v_init: &Field,
    t0: f64,
    t1: f64,
    spec: &ModelSpec,
    kick_spec: &KickSpec,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<(TrajectoryRecord, TrajectoryRecord)> {
    u_init.grid().check_same(v_init.grid())?;
    let mut recs = evolve_same_noise(
        &[u_init.clone(), v_init.clone()],
        t0,
        t1,
        spec,
        kick_spec,
        cfg,
        seed,
    )?;
    let v = recs.pop().expect("two members");
    let u = recs.pop().expect("two members");
    Ok((u, v))
}

/// Regenerates the kicks a trajectory consumed.
pub fn trajectory_kicks(
    record: &TrajectoryRecord,
    kick_spec: &KickSpec,
    grid: &Grid,
) -> Result<Vec<KickSample>> {
    let spec = kick_spec.with_seed(record.seed);
    record
        .kick_indices
        .iter()
        .map(|&s| sample_kick(&spec, grid, s))
        .collect()
}
