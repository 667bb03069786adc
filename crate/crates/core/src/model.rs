//! Diffusivity / Hamiltonian families and sampled validation of their
//! structural bounds.
//!
//! A [`ModelSpec`] pairs a diffusivity `κ(u)` with a Hamiltonian `H(u)` and
//! carries the constants that the bounds below are stated in:
//!
//! * ellipticity: `κ0 ≤ κ(u) ≤ 1/κ0`
//! * slope of the diffusivity: `|κ'(u)| ≤ Cκ (1 + |u|)`
//! * two-sided growth: `c1 |u|^q − 1/c1 ≤ H(u) ≤ λ κ0 u² + c2`
//! * slope of the Hamiltonian: `|H'(u)| ≤ C_H (1 + |u|)^{q/2}`
//!
//! The bounds are checked by dense sampling on a finite state range; the
//! solver never leaves a bounded range of states, so that is all it needs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// State-dependent diffusivity `κ(u)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diffusivity {
    /// `κ ≡ value`
    Constant { value: f64 },
    /// `κ(u) = base + amplitude · tanh(u)`
    Tanh { base: f64, amplitude: f64 },
    /// `κ(u) = intercept + slope · u`; unbounded, only useful as a negative control.
    Affine { intercept: f64, slope: f64 },
    /// `κ(u) = base + amplitude · exp(−(u/width)²)`; its primitive has no
    /// elementary closed form and goes through quadrature.
    Bump {
        base: f64,
        amplitude: f64,
        width: f64,
    },
}

impl Diffusivity {
    #[inline]
    pub fn value(&self, u: f64) -> f64 {
        match *self {
            Diffusivity::Constant { value } => value,
            Diffusivity::Tanh { base, amplitude } => base + amplitude * u.tanh(),
            Diffusivity::Affine { intercept, slope } => intercept + slope * u,
            Diffusivity::Bump {
                base,
                amplitude,
                width,
            } => {
                let z = u / width;
                base + amplitude * (-z * z).exp()
            }
        }
    }

    #[inline]
    pub fn derivative(&self, u: f64) -> f64 {
        match *self {
            Diffusivity::Constant { .. } => 0.0,
            Diffusivity::Tanh { amplitude, .. } => {
                let t = u.tanh();
                amplitude * (1.0 - t * t)
            }
            Diffusivity::Affine { slope, .. } => slope,
            Diffusivity::Bump {
                amplitude, width, ..
            } => {
                let z = u / width;
                -2.0 * amplitude * z / width * (-z * z).exp()
            }
        }
    }

    /// Writes `∫₀^{u_i} κ` into `out`, dispatching on the family once per call.
    pub fn primitive_into(&self, u: &[f64], out: &mut [f64]) {
        match *self {
            Diffusivity::Constant { value } => {
                for (o, &v) in out.iter_mut().zip(u) {
                    *o = value * v;
                }
            }
            Diffusivity::Tanh { base, amplitude } => {
                for (o, &v) in out.iter_mut().zip(u) {
                    *o = base * v + amplitude * ln_cosh(v);
                }
            }
            Diffusivity::Affine { intercept, slope } => {
                for (o, &v) in out.iter_mut().zip(u) {
                    *o = intercept * v + 0.5 * slope * v * v;
                }
            }
            Diffusivity::Bump { .. } => {
                for (o, &v) in out.iter_mut().zip(u) {
                    *o = kappa_primitive_quadrature(self, v);
                }
            }
        }
    }

    /// Closed-form primitive `∫₀^u κ`, when one exists.
    #[inline]
    pub fn closed_primitive(&self, u: f64) -> Option<f64> {
        match *self {
            Diffusivity::Constant { value } => Some(value * u),
            Diffusivity::Tanh { base, amplitude } => Some(base * u + amplitude * ln_cosh(u)),
            Diffusivity::Affine { intercept, slope } => Some(intercept * u + 0.5 * slope * u * u),
            Diffusivity::Bump { .. } => None,
        }
    }
}

/// `ln cosh u` without overflow for large `|u|`. The plain `ln(1 + y)` is
/// accurate to an absolute `1e-16` here and much cheaper than `ln_1p`.
#[inline]
fn ln_cosh(u: f64) -> f64 {
    let a = u.abs();
    a + (1.0 + (-2.0 * a).exp()).ln() - std::f64::consts::LN_2
}

/// Even, convex Hamiltonian `H(u)` with its minimum at `u = 0`.
///
/// Both the Engquist–Osher splitting and the local Lax–Friedrichs wave-speed
/// estimate in the solver rely on that shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Hamiltonian {
    /// `H ≡ 0` (pure diffusion)
    Zero,
    /// `H(u) = coefficient · u²`
    Quadratic { coefficient: f64 },
    /// `H(u) = scale · ((1 + u²)^{exponent/2} − 1)`, growing like `|u|^exponent`.
    Power { scale: f64, exponent: f64 },
}

impl Hamiltonian {
    #[inline]
    pub fn value(&self, u: f64) -> f64 {
        match *self {
            Hamiltonian::Zero => 0.0,
            Hamiltonian::Quadratic { coefficient } => coefficient * u * u,
            Hamiltonian::Power { scale, exponent } => {
                let s = 1.0 + u * u;
                scale * (half_power(s, exponent) - 1.0)
            }
        }
    }

    #[inline]
    pub fn derivative(&self, u: f64) -> f64 {
        match *self {
            Hamiltonian::Zero => 0.0,
            Hamiltonian::Quadratic { coefficient } => 2.0 * coefficient * u,
            Hamiltonian::Power { scale, exponent } => {
                let s = 1.0 + u * u;
                scale * exponent * u * half_power(s, exponent) / s
            }
        }
    }

    /// Writes `H(u_i)` into `out`, dispatching on the family once per call.
    pub fn value_into(&self, u: &[f64], out: &mut [f64]) {
        match *self {
            Hamiltonian::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            Hamiltonian::Quadratic { coefficient } => {
                for (o, &v) in out.iter_mut().zip(u) {
                    *o = coefficient * v * v;
                }
            }
            Hamiltonian::Power { scale, exponent } => {
                for (o, &v) in out.iter_mut().zip(u) {
                    *o = scale * (half_power(1.0 + v * v, exponent) - 1.0);
                }
            }
        }
    }

    /// Largest `|H'|` over the interval `[lo, hi]`. `|H'|` is quasi-convex for
    /// these even convex families, so the endpoints suffice.
    #[inline]
    pub fn max_speed(&self, lo: f64, hi: f64) -> f64 {
        self.derivative(lo).abs().max(self.derivative(hi).abs())
    }
}

/// `s^{p/2}` with a sqrt-only fast path for the exponents used by the builtins.
#[inline]
fn half_power(s: f64, p: f64) -> f64 {
    if p == 2.0 {
        s
    } else if p == 1.5 {
        let r = s.sqrt();
        r * r.sqrt()
    } else {
        s.powf(0.5 * p)
    }
}

/// Hölder exponents of the diffusivity and Hamiltonian. Kept for the record;
/// they are not checked numerically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderExponents {
    pub alpha_kappa: f64,
    pub beta_kappa: f64,
    pub alpha_h: f64,
}

/// Constants the bounds are expressed in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionConstants {
    pub kappa0: f64,
    pub c_kappa: f64,
    pub lambda: f64,
    pub c1: f64,
    pub c2: f64,
    pub c_h: f64,
    pub q: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holder: Option<HolderExponents>,
}

impl AssumptionConstants {
    pub fn check(&self) -> Result<()> {
        if !(self.kappa0 > 0.0 && self.kappa0 <= 1.0) {
            return Err(invalid("kappa0", format!("{} not in (0, 1]", self.kappa0)));
        }
        if !(self.q > 1.0 && self.q <= 2.0) {
            return Err(invalid("q", format!("{} not in (1, 2]", self.q)));
        }
        for (name, v) in [
            ("c_kappa", self.c_kappa),
            ("lambda", self.lambda),
            ("c1", self.c1),
            ("c2", self.c2),
            ("c_h", self.c_h),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("{v} must be a positive finite number")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Burgers,
    TanhKappaSubquadratic,
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "burgers" => Ok(ModelFamily::Burgers),
            "tanh_kappa_subquadratic" => Ok(ModelFamily::TanhKappaSubquadratic),
            other => Err(Error::UnknownModel(other.to_string())),
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelFamily::Burgers => "burgers",
            ModelFamily::TanhKappaSubquadratic => "tanh_kappa_subquadratic",
        })
    }
}

/// A diffusivity/Hamiltonian pair together with its bound constants.
/// Immutable once built; cheap to clone and share between workers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub diffusivity: Diffusivity,
    pub hamiltonian: Hamiltonian,
    pub constants: AssumptionConstants,
}

impl ModelSpec {
    #[inline]
    pub fn kappa(&self, u: f64) -> f64 {
        self.diffusivity.value(u)
    }

    #[inline]
    pub fn kappa_prime(&self, u: f64) -> f64 {
        self.diffusivity.derivative(u)
    }

    #[inline]
    pub fn hamiltonian(&self, u: f64) -> f64 {
        self.hamiltonian.value(u)
    }

    #[inline]
    pub fn hamiltonian_prime(&self, u: f64) -> f64 {
        self.hamiltonian.derivative(u)
    }

    #[inline]
    pub fn kappa0(&self) -> f64 {
        self.constants.kappa0
    }

    /// `𝒦(u) = ∫₀^u κ(r) dr`.
    #[inline]
    pub fn kappa_primitive(&self, u: f64) -> f64 {
        match self.diffusivity.closed_primitive(u) {
            Some(v) => v,
            None => kappa_primitive_quadrature(&self.diffusivity, u),
        }
    }

    /// Same model with the Hamiltonian replaced (e.g. `H ≡ 0` for pure heat).
    pub fn with_hamiltonian(mut self, hamiltonian: Hamiltonian) -> Self {
        self.hamiltonian = hamiltonian;
        self
    }

    pub fn with_diffusivity(mut self, diffusivity: Diffusivity) -> Self {
        self.diffusivity = diffusivity;
        self
    }
}

/// Instantiates one of the builtin families with constants that pass
/// [`validate_assumptions`] on `[-10, 10]`.
pub fn builtin_model(family: ModelFamily) -> ModelSpec {
    match family {
        ModelFamily::Burgers => ModelSpec {
            name: family.to_string(),
            diffusivity: Diffusivity::Constant { value: 1.0 },
            hamiltonian: Hamiltonian::Quadratic { coefficient: 0.5 },
            constants: AssumptionConstants {
                kappa0: 1.0,
                c_kappa: 1.0,
                lambda: 0.5,
                c1: 0.5,
                c2: 1.0,
                c_h: 1.0,
                q: 2.0,
                holder: None,
            },
        },
        // H(u) = (1+u²)^{3/4} − 1 sits between |u|^{3/2} − 1 and u²/2 + 1,
        // and |H'(u)| = (3/2)|u|(1+u²)^{-1/4} ≤ (3/2)(1+|u|)^{3/4}.
        ModelFamily::TanhKappaSubquadratic => ModelSpec {
            name: family.to_string(),
            diffusivity: Diffusivity::Tanh {
                base: 1.0,
                amplitude: 0.5,
            },
            hamiltonian: Hamiltonian::Power {
                scale: 1.0,
                exponent: 1.5,
            },
            constants: AssumptionConstants {
                kappa0: 0.5,
                c_kappa: 1.0,
                lambda: 1.0,
                c1: 1.0,
                c2: 1.0,
                c_h: 1.5,
                q: 1.5,
                holder: None,
            },
        },
    }
}

/// Looks a builtin family up by its config name.
pub fn builtin_model_by_name(name: &str) -> Result<ModelSpec> {
    Ok(builtin_model(name.parse()?))
}

const QUAD_REL_TOL: f64 = 1e-10;

/// `∫₀^u κ` by adaptive Simpson quadrature to relative tolerance `1e-10`.
pub fn kappa_primitive_quadrature(kappa: &Diffusivity, u: f64) -> f64 {
    if u == 0.0 {
        return 0.0;
    }
    let f = |r: f64| kappa.value(r);
    let (a, b) = (0.0, u);
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    // κ ≥ κ0 > 0, so |∫| ≥ κ0 |u|; scale the absolute target off the first estimate.
    let tol = QUAD_REL_TOL * whole.abs().max(f64::MIN_POSITIVE);
    adaptive_simpson(&f, a, b, fa, fm, fb, whole, tol, 48)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// One sampled inequality: the smallest slack seen and where.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationEntry {
    pub inequality: String,
    pub worst_u: f64,
    pub slack: f64,
}

impl ValidationEntry {
    pub fn passed(&self) -> bool {
        self.slack >= 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub model: String,
    pub u_min: f64,
    pub u_max: f64,
    pub n_samples: usize,
    pub entries: Vec<ValidationEntry>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(ValidationEntry::passed)
    }

    pub fn entry(&self, inequality: &str) -> Option<&ValidationEntry> {
        self.entries.iter().find(|e| e.inequality == inequality)
    }
}

pub const DEFAULT_VALIDATION_RANGE: (f64, f64) = (-10.0, 10.0);
pub const DEFAULT_VALIDATION_SAMPLES: usize = 4001;
/// Step and tolerance for the centered-difference consistency checks.
pub const FD_STEP: f64 = 1e-4;
pub const FD_TOLERANCE: f64 = 1e-6;

pub const ELLIPTICITY_LOWER: &str = "ellipticity_lower";
pub const ELLIPTICITY_UPPER: &str = "ellipticity_upper";
pub const HAMILTONIAN_LOWER: &str = "hamiltonian_lower";
pub const HAMILTONIAN_UPPER: &str = "hamiltonian_upper";
pub const HAMILTONIAN_SLOPE: &str = "hamiltonian_slope";
pub const DIFFUSIVITY_SLOPE: &str = "diffusivity_slope";
pub const HAMILTONIAN_FD: &str = "hamiltonian_derivative_consistency";
pub const DIFFUSIVITY_FD: &str = "diffusivity_derivative_consistency";

/// Samples `n_samples` uniformly spaced states in `[u_min, u_max]` and records
/// the minimal slack of every bound. A negative slack is a violation.
pub fn validate_assumptions(
    spec: &ModelSpec,
    u_min: f64,
    u_max: f64,
    n_samples: usize,
) -> Result<ValidationReport> {
    if !(u_min < u_max) {
        return Err(invalid("u_min", format!("need u_min < u_max, got [{u_min}, {u_max}]")));
    }
    if n_samples < 2 {
        return Err(invalid("n_samples", format!("need at least 2, got {n_samples}")));
    }
    spec.constants.check()?;
    let c = &spec.constants;

    let names = [
        ELLIPTICITY_LOWER,
        ELLIPTICITY_UPPER,
        HAMILTONIAN_LOWER,
        HAMILTONIAN_UPPER,
        HAMILTONIAN_SLOPE,
        DIFFUSIVITY_SLOPE,
        HAMILTONIAN_FD,
        DIFFUSIVITY_FD,
    ];
    let mut worst: Vec<(f64, f64)> = vec![(f64::INFINITY, u_min); names.len()];

    let step = (u_max - u_min) / (n_samples - 1) as f64;
    for k in 0..n_samples {
        let u = if k + 1 == n_samples {
            u_max
        } else {
            u_min + k as f64 * step
        };
        let kap = finite("kappa", u, spec.kappa(u))?;
        let dkap = finite("kappa_prime", u, spec.kappa_prime(u))?;
        let h = finite("hamiltonian", u, spec.hamiltonian(u))?;
        let dh = finite("hamiltonian_prime", u, spec.hamiltonian_prime(u))?;
        let h_fd = (spec.hamiltonian(u + FD_STEP) - spec.hamiltonian(u - FD_STEP)) / (2.0 * FD_STEP);
        let k_fd = (spec.kappa(u + FD_STEP) - spec.kappa(u - FD_STEP)) / (2.0 * FD_STEP);
        let h_fd = finite("hamiltonian finite difference", u, h_fd)?;
        let k_fd = finite("kappa finite difference", u, k_fd)?;

        let au = u.abs();
        let slacks = [
            kap - c.kappa0,
            1.0 / c.kappa0 - kap,
            h - (c.c1 * au.powf(c.q) - 1.0 / c.c1),
            c.lambda * c.kappa0 * u * u + c.c2 - h,
            c.c_h * (1.0 + au).powf(0.5 * c.q) - dh.abs(),
            c.c_kappa * (1.0 + au) - dkap.abs(),
            FD_TOLERANCE - (dh - h_fd).abs(),
            FD_TOLERANCE - (dkap - k_fd).abs(),
        ];
        for (slot, s) in worst.iter_mut().zip(slacks) {
            if s < slot.0 {
                *slot = (s, u);
            }
        }
    }

    let entries = names
        .iter()
        .zip(worst)
        .map(|(name, (slack, worst_u))| ValidationEntry {
            inequality: (*name).to_string(),
            worst_u,
            slack,
        })
        .collect();
    Ok(ValidationReport {
        model: spec.name.clone(),
        u_min,
        u_max,
        n_samples,
        entries,
    })
}

fn finite(what: &'static str, u: f64, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteModel { what, u })
    }
}
