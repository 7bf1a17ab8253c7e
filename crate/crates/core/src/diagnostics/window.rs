//! Moving-window `χ̂(u)` surfaces pooled over site pairs at a fixed separation.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{dist, Point};
use crate::margins::{gev_cdf, SiteSurfaces};

/// Fewest qualifying pairs for a window to report an estimate.
pub const MIN_WINDOW_PAIRS: usize = 30;

/// Default half-width of the distance bin as a fraction of `h`.
pub const DEFAULT_H_TOL_FRACTION: f64 = 0.15;

/// Rectangular partition of the domain into `nx × ny` windows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowGrid {
    pub nx: usize,
    pub ny: usize,
    pub xlim: (f64, f64),
    pub ylim: (f64, f64),
}

impl WindowGrid {
    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || !(self.xlim.1 > self.xlim.0) || !(self.ylim.1 > self.ylim.0) {
            return Err(Error::Parameter("window grid needs nx, ny >= 1 and a non-empty box".into()));
        }
        Ok(())
    }

    /// Window index `(ix, iy)` containing `p`, if inside the box.
    pub fn locate(&self, p: &Point) -> Option<(usize, usize)> {
        let fx = (p[0] - self.xlim.0) / (self.xlim.1 - self.xlim.0);
        let fy = (p[1] - self.ylim.0) / (self.ylim.1 - self.ylim.0);
        if !(0.0..=1.0).contains(&fx) || !(0.0..=1.0).contains(&fy) {
            return None;
        }
        let ix = ((fx * self.nx as f64) as usize).min(self.nx - 1);
        let iy = ((fy * self.ny as f64) as usize).min(self.ny - 1);
        Some((ix, iy))
    }
}

/// One cell of the windowed surface. `chi` is `None` when the window has
/// fewer than [`MIN_WINDOW_PAIRS`] pairs or no marginal exceedance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowChi {
    pub window: usize,
    pub ix: usize,
    pub iy: usize,
    pub u: f64,
    pub h: f64,
    pub chi: Option<f64>,
    pub se: f64,
    pub n_pairs: usize,
    pub n_marginal: u64,
    pub n_joint: u64,
}

/// Rank-based uniform scores `rank / (n + 1)` per site, NaN where missing.
pub fn rank_scores(y: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::from_element(y.nrows(), y.ncols(), f64::NAN);
    for j in 0..y.nrows() {
        let mut idx: Vec<usize> = (0..y.ncols()).filter(|&t| !y[(j, t)].is_nan()).collect();
        idx.sort_by(|&a, &b| y[(j, a)].total_cmp(&y[(j, b)]));
        let n = idx.len() as f64;
        for (r, &t) in idx.iter().enumerate() {
            out[(j, t)] = (r as f64 + 1.0) / (n + 1.0);
        }
    }
    out
}

/// Uniform scores through fitted GEV margins; `time[t]` is the trend covariate.
pub fn model_scores(y: &DMatrix<f64>, margins: &SiteSurfaces, time: &[f64]) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::from_element(y.nrows(), y.ncols(), f64::NAN);
    for j in 0..y.nrows() {
        for t in 0..y.ncols() {
            let v = y[(j, t)];
            if !v.is_nan() {
                out[(j, t)] = gev_cdf(v, &margins.gev(j, time[t])?);
            }
        }
    }
    Ok(out)
}

/// `χ̂(u)` per window, pooling every pair whose midpoint falls in the window
/// and whose separation is within `h ± h_tol`. Both orderings of a pair are
/// counted, so the estimate is symmetric in the pair. The standard error
/// treats replicates as the independent units.
pub fn moving_window_chi(sites: &[Point], scores: &DMatrix<f64>, grid: &WindowGrid, h: f64, h_tol: f64, u_grid: &[f64]) -> Result<Vec<WindowChi>> {
    grid.validate()?;
    if scores.nrows() != sites.len() {
        return Err(Error::Parameter("score rows do not match the sites".into()));
    }
    if !(h > 0.0 && h_tol >= 0.0) {
        return Err(Error::Parameter("distance bin needs h > 0 and h_tol >= 0".into()));
    }
    if u_grid.iter().any(|u| !(*u > 0.0 && *u < 1.0)) {
        return Err(Error::Domain("threshold levels must lie inside (0, 1)".into()));
    }
    let n_win = grid.nx * grid.ny;
    let mut members: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_win];
    for i in 0..sites.len() {
        for j in 0..i {
            let d = dist(&sites[i], &sites[j]);
            if (d - h).abs() > h_tol {
                continue;
            }
            let mid = [0.5 * (sites[i][0] + sites[j][0]), 0.5 * (sites[i][1] + sites[j][1])];
            if let Some((ix, iy)) = grid.locate(&mid) {
                members[iy * grid.nx + ix].push((i, j));
            }
        }
    }
    let out: Vec<Vec<WindowChi>> = members
        .par_iter()
        .enumerate()
        .map(|(w, pairs)| {
            let (ix, iy) = (w % grid.nx, w / grid.nx);
            u_grid
                .iter()
                .map(|&u| {
                    // Per-replicate counts: replicates are independent, pairs within one are not.
                    let mut per_t = vec![(0u64, 0u64); scores.ncols()];
                    for &(a, b) in pairs {
                        for (t, c) in per_t.iter_mut().enumerate() {
                            let (sa, sb) = (scores[(a, t)], scores[(b, t)]);
                            if sa.is_nan() || sb.is_nan() {
                                continue;
                            }
                            let (ea, eb) = (sa > u, sb > u);
                            c.0 += ea as u64 + eb as u64;
                            if ea && eb {
                                c.1 += 2;
                            }
                        }
                    }
                    let m: u64 = per_t.iter().map(|c| c.0).sum();
                    let jn: u64 = per_t.iter().map(|c| c.1).sum();
                    let (chi, se) = if pairs.len() < MIN_WINDOW_PAIRS || m == 0 {
                        (None, f64::NAN)
                    } else {
                        let c = jn as f64 / m as f64;
                        // Ratio-estimator standard error clustered by replicate.
                        let v: f64 = per_t.iter().map(|&(mt, jt)| (jt as f64 - c * mt as f64).powi(2)).sum();
                        (Some(c), v.sqrt() / m as f64)
                    };
                    WindowChi { window: w, ix, iy, u, h, chi, se, n_pairs: pairs.len(), n_marginal: m, n_joint: jn }
                })
                .collect()
        })
        .collect();
    Ok(out.into_iter().flatten().collect())
}

/// Writes the surface as tidy CSV; missing estimates are empty fields.
pub fn write_window_csv(path: &Path, rows: &[WindowChi]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "window,ix,iy,u,h,estimate,se,n_pairs")?;
    for r in rows {
        let est = r.chi.map_or(String::new(), |c| format!("{c:e}"));
        let se = if r.se.is_finite() { format!("{:e}", r.se) } else { String::new() };
        writeln!(w, "{},{},{},{},{},{},{},{}", r.window, r.ix, r.iy, r.u, r.h, est, se, r.n_pairs)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_scores_skip_missing() {
        let y = DMatrix::from_row_slice(1, 4, &[3.0, f64::NAN, 1.0, 2.0]);
        let s = rank_scores(&y);
        assert_eq!(s[(0, 0)], 0.75);
        assert!(s[(0, 1)].is_nan());
        assert_eq!(s[(0, 2)], 0.25);
    }

    #[test]
    fn empty_window_is_missing_not_zero() {
        let sites = vec![[0.1, 0.1], [0.3, 0.1]];
        let scores = DMatrix::from_element(2, 10, 0.5);
        let g = WindowGrid { nx: 2, ny: 1, xlim: (0.0, 1.0), ylim: (0.0, 1.0) };
        let out = moving_window_chi(&sites, &scores, &g, 0.2, 0.03, &[0.4]).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|w| w.chi.is_none()));
        assert_eq!(out[0].n_pairs, 1);
        assert_eq!(out[1].n_pairs, 0);
    }

    #[test]
    fn locate_edges() {
        let g = WindowGrid { nx: 17, ny: 7, xlim: (0.0, 17.0), ylim: (0.0, 7.0) };
        assert_eq!(g.locate(&[17.0, 7.0]), Some((16, 6)));
        assert_eq!(g.locate(&[0.0, 0.0]), Some((0, 0)));
        assert_eq!(g.locate(&[-0.1, 0.0]), None);
    }
}
