//! Random kick potentials `V_s`, synthesized as stationary Gaussian Fourier
//! series on the torus.
//!
//! ```text
//! V_s(x) = Σ_{k=1}^{K} a_k [ξ_{s,k} cos(ω_k x) + η_{s,k} sin(ω_k x)],   ω_k = 2πk/L
//! ```
//!
//! with independent standard normals `ξ, η`. Random phases make the law of
//! `V_s(x)` exactly translation invariant on the torus, there is no `k = 0`
//! mode, and `∂xV_s` is the term-by-term derivative of the same series.
//!
//! The normals for `(seed_root, s, k)` come from their own ChaCha stream, so
//! any kick can be regenerated in isolation and in any order.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::{Field, Grid};

/// Cells per mode the synthesis requires (`N ≥ 8K`).
pub const CELLS_PER_MODE: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KickSpec {
    pub n_modes: usize,
    pub sigma_target: f64,
    pub cutoff: f64,
    pub seed_root: u64,
}

impl Default for KickSpec {
    fn default() -> Self {
        Self {
            n_modes: 32,
            sigma_target: 0.5,
            cutoff: 8.0,
            seed_root: 0,
        }
    }
}

impl KickSpec {
    pub fn new(n_modes: usize, sigma_target: f64, cutoff: f64, seed_root: u64) -> Result<Self> {
        let spec = Self {
            n_modes,
            sigma_target,
            cutoff,
            seed_root,
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<()> {
        if self.n_modes == 0 {
            return Err(invalid("n_modes", "need at least one mode"));
        }
        if !(self.sigma_target >= 0.0 && self.sigma_target.is_finite()) {
            return Err(invalid("sigma_target", format!("{} must be ≥ 0", self.sigma_target)));
        }
        if !(self.cutoff > 0.0 && self.cutoff.is_finite()) {
            return Err(invalid("cutoff", format!("{} must be > 0", self.cutoff)));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed_root: u64) -> Self {
        Self {
            seed_root,
            ..self.clone()
        }
    }

    pub fn with_sigma(&self, sigma_target: f64) -> Self {
        Self {
            sigma_target,
            ..self.clone()
        }
    }

    pub fn is_silent(&self) -> bool {
        self.sigma_target == 0.0
    }

    /// Gaussian spectral envelope `e^{−(k/k_c)²}` normalized so `Σ a_k² = σ²`.
    pub fn amplitudes(&self) -> Vec<f64> {
        let raw: Vec<f64> = (1..=self.n_modes)
            .map(|k| {
                let r = k as f64 / self.cutoff;
                (-r * r).exp()
            })
            .collect();
        let norm = raw.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 || self.sigma_target == 0.0 {
            return vec![0.0; self.n_modes];
        }
        raw.iter().map(|a| self.sigma_target * a / norm).collect()
    }
}

/// One realization `V_s` together with its exact derivative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KickSample {
    pub potential: Field,
    pub gradient: Field,
    pub kick_index: i64,
}

/// SplitMix64 finalizer.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `parts` into `root` through SplitMix64; used to key independent streams.
pub fn derive_seed(root: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix64(root), |acc, &p| mix64(acc ^ mix64(p)))
}

/// The `(ξ_{s,k}, η_{s,k})` pairs for `k = 1..K`.
pub fn kick_coefficients(spec: &KickSpec, s: i64) -> Vec<(f64, f64)> {
    (1..=spec.n_modes as u64)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed_root, &[s as u64, k]));
            let xi: f64 = StandardNormal.sample(&mut rng);
            let eta: f64 = StandardNormal.sample(&mut rng);
            (xi, eta)
        })
        .collect()
}

fn check_resolution(spec: &KickSpec, grid: &Grid) -> Result<()> {
    let required = CELLS_PER_MODE * spec.n_modes;
    if grid.cells() < required {
        return Err(Error::UnderResolved {
            cells: grid.cells(),
            modes: spec.n_modes,
            required,
        });
    }
    Ok(())
}

/// Draws `V_s` and `∂xV_s` on `grid`. Bit-identical for equal `(seed_root, s)`.
pub fn sample_kick(spec: &KickSpec, grid: &Grid, s: i64) -> Result<KickSample> {
    spec.check()?;
    check_resolution(spec, grid)?;
    let n = grid.cells();
    let mut potential = vec![0.0; n];
    let mut gradient = vec![0.0; n];
    if !spec.is_silent() {
        let amps = spec.amplitudes();
        let coeffs = kick_coefficients(spec, s);
        let base = 2.0 * PI / grid.length();
        for (k, (&a, &(xi, eta))) in amps.iter().zip(&coeffs).enumerate() {
            let omega = base * (k + 1) as f64;
            for i in 0..n {
                let (sin, cos) = (omega * grid.center(i)).sin_cos();
                potential[i] += a * (xi * cos + eta * sin);
                gradient[i] += a * omega * (eta * cos - xi * sin);
            }
        }
    }
    Ok(KickSample {
        potential: Field::new(*grid, potential)?,
        gradient: Field::new(*grid, gradient)?,
        kick_index: s,
    })
}

/// Exact `E[(∂xV_s(x))²] = Σ_k a_k² ω_k²` on a torus of the given length.
pub fn gradient_variance(spec: &KickSpec, length: f64) -> f64 {
    let base = 2.0 * PI / length;
    spec.amplitudes()
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let w = base * (k + 1) as f64;
            a * a * w * w
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Monte Carlo estimate of `E exp(−λ V̄_s)`, where `V̄_s` is the minimum of
/// `V_s` over the cells whose centers lie in `[0, 1]`. Kicks `s = 0..n_mc`
/// of `spec.seed_root` are used.
pub fn check_exp_moment(
    spec: &KickSpec,
    grid: &Grid,
    lambda: f64,
    n_mc: usize,
) -> Result<MonteCarloEstimate> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(invalid("lambda", format!("{lambda} must be ≥ 0")));
    }
    if n_mc < 100 {
        return Err(invalid("n_mc", format!("{n_mc} < 100")));
    }
    spec.check()?;
    check_resolution(spec, grid)?;
    let xs: Vec<f64> = grid
        .centers()
        .into_iter()
        .filter(|x| (0.0..=1.0).contains(x))
        .collect();
    if xs.is_empty() {
        return Err(invalid("grid", "no cell center in [0, 1]"));
    }
    let amps = spec.amplitudes();
    let base = 2.0 * PI / grid.length();
    let mut values = Vec::with_capacity(n_mc);
    for s in 0..n_mc as i64 {
        let vmin = if spec.is_silent() {
            0.0
        } else {
            let coeffs = kick_coefficients(spec, s);
            xs.iter()
                .map(|&x| {
                    amps.iter()
                        .zip(&coeffs)
                        .enumerate()
                        .map(|(k, (a, (xi, eta)))| {
                            let (sin, cos) = (base * (k + 1) as f64 * x).sin_cos();
                            a * (xi * cos + eta * sin)
                        })
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
        };
        let exponent = -lambda * vmin;
        if exponent > 700.0 {
            return Err(Error::Overflow {
                context: "exponential moment of the kick minimum",
                exponent,
            });
        }
        values.push(exponent.exp());
    }
    Ok(mean_and_se(&values))
}

/// Sample mean and its standard error `s/√n`.
pub fn mean_and_se(values: &[f64]) -> MonteCarloEstimate {
    let n = values.len() as f64;
    let mean = crate::field::pairwise_sum(values) / n;
    let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = if values.len() > 1 {
        crate::field::pairwise_sum(&dev) / (n - 1.0)
    } else {
        0.0
    };
    MonteCarloEstimate {
        estimate: mean,
        std_error: (var / n).sqrt(),
        samples: values.len(),
    }
}
