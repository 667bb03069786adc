//! Uniform periodic grids, sampled fields and the weighted norms used to
//! monitor them.
//!
//! The torus `[-L/2, L/2)` is split into `N` cells of width `dx = L/N` with
//! centers `x_i = (i + 1/2) dx − L/2`, so the grid is symmetric about the
//! origin and origin-centered weights `⟨x⟩ = √(4 + x²)` can be evaluated
//! directly on cell centers.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const MIN_CELLS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    length: f64,
    cells: usize,
}

impl Grid {
    pub fn new(length: f64, cells: usize) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(invalid("length", format!("{length} must be positive and finite")));
        }
        if cells < MIN_CELLS {
            return Err(invalid("cells", format!("{cells} < {MIN_CELLS}")));
        }
        Ok(Self { length, cells })
    }

    #[inline]
    pub fn length(&self) -> f64 {
        self.length
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.cells
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        self.length / self.cells as f64
    }

    #[inline]
    pub fn center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx() - 0.5 * self.length
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.cells).map(|i| self.center(i)).collect()
    }

    pub fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                expected_len: self.length,
                expected_cells: self.cells,
                got_len: other.length,
                got_cells: other.cells,
            })
        }
    }
}

/// A profile sampled at the cell centers of a [`Grid`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cells() {
            return Err(invalid(
                "values",
                format!("expected {} samples, got {}", grid.cells(), values.len()),
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid("values", format!("non-finite sample at cell {i}")));
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_vec_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.cells());
        Self { grid, values }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.cells()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid,
            values: (0..grid.cells()).map(|i| f(grid.center(i))).collect(),
        }
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        self.grid.check_same(&other.grid)?;
        Ok(Field {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }
}

/// Centered periodic difference `(f_{i+1} − f_{i−1}) / (2 dx)`.
pub fn deriv(f: &Field) -> Field {
    let n = f.len();
    let v = f.values();
    let inv = 0.5 / f.grid.dx();
    let values = (0..n)
        .map(|i| {
            let ip = if i + 1 == n { 0 } else { i + 1 };
            let im = if i == 0 { n - 1 } else { i - 1 };
            (v[ip] - v[im]) * inv
        })
        .collect();
    Field::from_vec_unchecked(f.grid, values)
}

/// Periodic second difference `(f_{i+1} − 2 f_i + f_{i−1}) / dx²`.
pub fn second_deriv(f: &Field) -> Field {
    let n = f.len();
    let v = f.values();
    let dx = f.grid.dx();
    let inv = 1.0 / (dx * dx);
    let values = (0..n)
        .map(|i| {
            let ip = if i + 1 == n { 0 } else { i + 1 };
            let im = if i == 0 { n - 1 } else { i - 1 };
            (v[ip] - 2.0 * v[i] + v[im]) * inv
        })
        .collect();
    Field::from_vec_unchecked(f.grid, values)
}

/// Sum by recursive halving; the result only depends on the order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(f: &Field) -> f64 {
    pairwise_sum(f.values()) / f.len() as f64
}

pub fn l1_norm(f: &Field) -> f64 {
    let abs: Vec<f64> = f.values().iter().map(|v| v.abs()).collect();
    f.grid.dx() * pairwise_sum(&abs)
}

pub fn l2_norm(f: &Field) -> f64 {
    let sq: Vec<f64> = f.values().iter().map(|v| v * v).collect();
    (f.grid.dx() * pairwise_sum(&sq)).sqrt()
}

pub fn sup_norm(f: &Field) -> f64 {
    f.values().iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `(1/N) Σ f_i²`, the discrete spatial average of `f²`.
pub fn mean_square(f: &Field) -> f64 {
    let sq: Vec<f64> = f.values().iter().map(|v| v * v).collect();
    pairwise_sum(&sq) / f.len() as f64
}

/// `⟨x⟩ = √(4 + x²)`
#[inline]
pub fn japanese_bracket(x: f64) -> f64 {
    (4.0 + x * x).sqrt()
}

/// Polynomial weight `⟨x⟩^ℓ`.
#[inline]
pub fn poly_weight(x: f64, ell: f64) -> f64 {
    japanese_bracket(x).powf(ell)
}

/// Stretched-exponential weight `ζ(x) = exp(2^{1−ℓ} − ⟨x⟩^{1−ℓ})`, equal to 1 at the origin.
#[inline]
pub fn zeta_weight(x: f64, ell: f64) -> f64 {
    let p = 1.0 - ell;
    (2f64.powf(p) - japanese_bracket(x).powf(p)).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "ell", rename_all = "snake_case")]
pub enum WeightTag {
    PolyEll(f64),
    ZetaEll(f64),
}

impl WeightTag {
    pub fn poly(ell: f64) -> Result<Self> {
        check_ell(ell)?;
        Ok(WeightTag::PolyEll(ell))
    }

    pub fn zeta(ell: f64) -> Result<Self> {
        check_ell(ell)?;
        Ok(WeightTag::ZetaEll(ell))
    }

    pub fn ell(&self) -> f64 {
        match *self {
            WeightTag::PolyEll(l) | WeightTag::ZetaEll(l) => l,
        }
    }

    pub fn weight(&self, x: f64) -> f64 {
        match *self {
            WeightTag::PolyEll(l) => poly_weight(x, l),
            WeightTag::ZetaEll(l) => zeta_weight(x, l),
        }
    }
}

fn check_ell(ell: f64) -> Result<()> {
    if ell > 0.0 && ell < 1.0 {
        Ok(())
    } else {
        Err(invalid("ell", format!("{ell} not in (0, 1)")))
    }
}

/// `max_i |f_i| / ⟨x_i⟩^ℓ`. Accepts `ℓ = 0` as well, where it reduces to the sup norm.
pub fn weighted_sup_norm(f: &Field, ell: f64) -> f64 {
    let g = f.grid;
    f.values()
        .iter()
        .enumerate()
        .fold(0.0, |m, (i, v)| m.max(v.abs() / poly_weight(g.center(i), ell)))
}

/// `dx Σ |f_i| ζ(x_i)`
pub fn weighted_l1_zeta(f: &Field, ell: f64) -> f64 {
    let g = f.grid;
    let terms: Vec<f64> = f
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| v.abs() * zeta_weight(g.center(i), ell))
        .collect();
    g.dx() * pairwise_sum(&terms)
}

/// Quintic smoothstep `6t⁵ − 15t⁴ + 10t³`, clamped to `[0, 1]`.
#[inline]
pub fn smoothstep5(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

/// Cutoff used by [`periodize`]: 1 on `|x| ≤ L/2 − margin`, 0 on
/// `|x| ≥ L/2 + margin`, with a quintic transition centered on the seam.
/// Shifted copies `χ(x − jL)` form a partition of unity.
pub fn periodization_cutoff(x: f64, length: f64, margin: f64) -> f64 {
    let inner = 0.5 * length - margin;
    1.0 - smoothstep5((x.abs() - inner) / (2.0 * margin))
}

/// `L`-periodization `Σ_j χ(x − jL) v(x − jL)` sampled on the grid.
pub fn periodize(v: impl Fn(f64) -> f64, grid: Grid, margin: f64) -> Result<Field> {
    let l = grid.length();
    if !(margin > 0.0 && margin < 0.25 * l) {
        return Err(invalid("margin", format!("{margin} not in (0, L/4)")));
    }
    let values = (0..grid.cells())
        .map(|i| {
            let x = grid.center(i);
            // only j ∈ {-1, 0, 1} reach a cell center in [-L/2, L/2)
            (-1..=1)
                .map(|j| {
                    let y = x - j as f64 * l;
                    let chi = periodization_cutoff(y, l, margin);
                    if chi == 0.0 {
                        0.0
                    } else {
                        chi * v(y)
                    }
                })
                .sum()
        })
        .collect();
    Field::new(grid, values)
}

/// Little-endian record `{N: u32, L: f64, values: f64 × N}`.
pub fn write_binary<W: Write>(f: &Field, mut w: W) -> std::io::Result<()> {
    w.write_all(&(f.len() as u32).to_le_bytes())?;
    w.write_all(&f.grid.length().to_le_bytes())?;
    for v in f.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<Field> {
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4).map_err(|e| Error::Decode(e.to_string()))?;
    let n = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b8).map_err(|e| Error::Decode(e.to_string()))?;
    let length = f64::from_le_bytes(b8);
    let grid = Grid::new(length, n)?;
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut b8).map_err(|e| Error::Decode(e.to_string()))?;
        values.push(f64::from_le_bytes(b8));
    }
    Field::new(grid, values)
}

/// CSV rows `x,value` with a header line.
pub fn write_csv<W: Write>(f: &Field, mut w: W) -> std::io::Result<()> {
    writeln!(w, "x,value")?;
    for (i, v) in f.values().iter().enumerate() {
        writeln!(w, "{},{}", f.grid.center(i), v)?;
    }
    Ok(())
}
