//! Knot grids, compactly supported Wendland weights for the positive-stable
//! mixture, and Gaussian-kernel smoothing of knot-level surfaces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the plane.
pub type Point = [f64; 2];

#[inline]
pub fn dist(a: &Point, b: &Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[inline]
fn dist2(a: &Point, b: &Point) -> f64 {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    dx * dx + dy * dy
}

/// Knot locations shared by the kernels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnotGrid {
    knots: Vec<Point>,
}

impl KnotGrid {
    pub fn new(knots: Vec<Point>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Parameter("knot grid must contain at least one knot".into()));
        }
        if knots.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::Parameter("knot coordinates must be finite".into()));
        }
        for i in 0..knots.len() {
            for j in 0..i {
                if knots[i] == knots[j] {
                    return Err(Error::Parameter(format!("knots {j} and {i} coincide")));
                }
            }
        }
        Ok(Self { knots })
    }

    /// `nx × ny` knots at the cell centres of a regular partition of the box.
    pub fn regular(nx: usize, ny: usize, xlim: (f64, f64), ylim: (f64, f64)) -> Result<Self> {
        if nx == 0 || ny == 0 || !(xlim.1 > xlim.0) || !(ylim.1 > ylim.0) {
            return Err(Error::Parameter("regular grid needs nx, ny >= 1 and a non-empty box".into()));
        }
        let (hx, hy) = ((xlim.1 - xlim.0) / nx as f64, (ylim.1 - ylim.0) / ny as f64);
        let mut knots = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                knots.push([xlim.0 + (ix as f64 + 0.5) * hx, ylim.0 + (iy as f64 + 0.5) * hy]);
            }
        }
        Self::new(knots)
    }

    /// Staggered lattice: an `n × n` cell-centre grid plus the `(n-1) × (n-1)`
    /// points at the centres of its squares, `n² + (n-1)²` knots in total.
    pub fn staggered(n: usize, xlim: (f64, f64), ylim: (f64, f64)) -> Result<Self> {
        let mut knots = Self::regular(n, n, xlim, ylim)?.knots;
        let (hx, hy) = ((xlim.1 - xlim.0) / n as f64, (ylim.1 - ylim.0) / n as f64);
        for iy in 1..n {
            for ix in 1..n {
                knots.push([xlim.0 + ix as f64 * hx, ylim.0 + iy as f64 * hy]);
            }
        }
        Self::new(knots)
    }

    /// Grid with exactly `k` knots over the box: a square grid if `k = n²`, the
    /// staggered lattice if `k = n² + (n-1)²`, otherwise an error.
    pub fn with_count(k: usize, xlim: (f64, f64), ylim: (f64, f64)) -> Result<Self> {
        let n = (k as f64).sqrt().round() as usize;
        if n * n == k {
            return Self::regular(n, n, xlim, ylim);
        }
        for n in 2..=(k as f64).sqrt() as usize + 1 {
            if n * n + (n - 1) * (n - 1) == k {
                return Self::staggered(n, xlim, ylim);
            }
        }
        Err(Error::Config(format!("no square or staggered layout has {k} knots")))
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    pub fn knots(&self) -> &[Point] {
        &self.knots
    }
}

/// Kernel hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub wendland_radius: f64,
    #[serde(default = "default_exponent")]
    pub wendland_exponent: u32,
    pub bandwidth_phi: f64,
    pub bandwidth_rho: f64,
}

fn default_exponent() -> u32 {
    2
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.wendland_radius > 0.0) {
            return Err(Error::Parameter("wendland radius must be positive".into()));
        }
        if self.wendland_exponent < 2 {
            return Err(Error::Parameter("wendland exponent must be at least 2".into()));
        }
        if !(self.bandwidth_phi > 0.0) || !(self.bandwidth_rho > 0.0) {
            return Err(Error::Parameter("gaussian bandwidths must be positive".into()));
        }
        Ok(())
    }
}

/// Row-normalized kernel weights, sites × knots, with the nonzero pattern of each row.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    n_knots: usize,
    entries: Vec<f64>,
    active: Vec<Vec<usize>>,
}

impl WeightMatrix {
    pub fn n_sites(&self) -> usize {
        self.active.len()
    }

    pub fn n_knots(&self) -> usize {
        self.n_knots
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.entries[j * self.n_knots..(j + 1) * self.n_knots]
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.entries[j * self.n_knots + k]
    }

    /// Indices of knots with positive weight at site `j`.
    pub fn active(&self, j: usize) -> &[usize] {
        &self.active[j]
    }

    /// Sites whose row has positive weight on knot `k`.
    pub fn sites_of_knot(&self, k: usize) -> Vec<usize> {
        (0..self.n_sites()).filter(|&j| self.get(j, k) > 0.0).collect()
    }
}

/// Wendland weights `(1 - (d/r)²)^l_+`, normalized per site.
pub fn wendland_weights(sites: &[Point], knots: &KnotGrid, config: &KernelConfig) -> Result<WeightMatrix> {
    config.validate()?;
    let (r, l) = (config.wendland_radius, config.wendland_exponent as i32);
    let k = knots.len();
    let mut entries = vec![0.0; sites.len() * k];
    let mut active = Vec::with_capacity(sites.len());
    for (j, s) in sites.iter().enumerate() {
        let row = &mut entries[j * k..(j + 1) * k];
        let mut set = Vec::new();
        for (kk, b) in knots.knots().iter().enumerate() {
            let u = dist2(s, b) / (r * r);
            if u < 1.0 {
                let w = (1.0 - u).powi(l);
                if w > 0.0 {
                    row[kk] = w;
                    set.push(kk);
                }
            }
        }
        if set.is_empty() {
            let nearest = knots.knots().iter().map(|b| dist(s, b)).fold(f64::INFINITY, f64::min);
            return Err(Error::Coverage { site: j, nearest });
        }
        let total: f64 = set.iter().map(|&kk| row[kk]).sum();
        for &kk in &set {
            row[kk] /= total;
        }
        active.push(set);
    }
    Ok(WeightMatrix { n_knots: k, entries, active })
}

/// Normalized Gaussian weights `exp(-d²/(2h²))` for every site, sites × knots.
///
/// Computed relative to the nearest knot so that tiny bandwidths do not
/// underflow every entry.
pub fn gaussian_weights(sites: &[Point], knots: &KnotGrid, bandwidth: f64) -> Result<Vec<f64>> {
    if !(bandwidth > 0.0) {
        return Err(Error::Parameter("gaussian bandwidth must be positive".into()));
    }
    let k = knots.len();
    let mut out = vec![0.0; sites.len() * k];
    let mut d2 = vec![0.0; k];
    for (j, s) in sites.iter().enumerate() {
        for (kk, b) in knots.knots().iter().enumerate() {
            d2[kk] = dist2(s, b);
        }
        let m = d2.iter().copied().fold(f64::INFINITY, f64::min);
        let row = &mut out[j * k..(j + 1) * k];
        let mut total = 0.0;
        for kk in 0..k {
            row[kk] = (-(d2[kk] - m) / (2.0 * bandwidth * bandwidth)).exp();
            total += row[kk];
        }
        for w in row.iter_mut() {
            *w /= total;
        }
    }
    Ok(out)
}

/// Gaussian-kernel interpolation of knot values onto sites.
pub fn gaussian_smooth(knot_values: &[f64], sites: &[Point], knots: &KnotGrid, bandwidth: f64) -> Result<Vec<f64>> {
    if knot_values.len() != knots.len() {
        return Err(Error::Parameter(format!(
            "{} knot values for {} knots",
            knot_values.len(),
            knots.len()
        )));
    }
    let w = gaussian_weights(sites, knots, bandwidth)?;
    Ok(apply_weights(&w, knot_values))
}

/// Multiply a row-major sites × knots weight array by knot values.
pub fn apply_weights(weights: &[f64], knot_values: &[f64]) -> Vec<f64> {
    let k = knot_values.len();
    weights
        .chunks_exact(k)
        .map(|row| row.iter().zip(knot_values).map(|(w, v)| w * v).sum())
        .collect()
}

/// Indices of the strictly positive entries of a weight row.
pub fn active_set(weight_row: &[f64]) -> Result<Vec<usize>> {
    let set: Vec<usize> = weight_row
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(k, _)| k)
        .collect();
    if set.is_empty() {
        return Err(Error::Coverage { site: 0, nearest: f64::INFINITY });
    }
    Ok(set)
}
