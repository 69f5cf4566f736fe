//! Expectations along the single Gaussian factor of the lognormal model.
//!
//! Under `Q`, `ln X = ln x - vol^2 tau / 2 + vol sqrt(tau) Z` and
//! `Q1 = exp(lambda sqrt(tau) Z - lambda^2 tau / 2)` share one draw `Z`.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use super::interp::{DualSurface, LineSurface};
use super::{PropagatorConfig, QuadratureRule};
use crate::convex::{ConvexProfile, FunctionSamples, Grid1D, Spacing, Tail};
use crate::dual::{Axis, ValueSlice};
use crate::error::{Error, Result};
use crate::market::MarketModel;
use crate::normal;

/// Largest lattice spacing in `Z` before nodes are subdivided.
const MAX_LATTICE_STEP: f64 = 0.5;

/// Gauss-Hermite nodes and weights for the standard normal density.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n < 8 {
        return Err(Error::InvalidInput(format!(
            "Gauss-Hermite rule needs at least 8 nodes, got {n}"
        )));
    }
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        j[(k, k - 1)] = b;
        j[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    Ok((
        pairs.iter().map(|p| p.0).collect(),
        pairs.iter().map(|p| p.1 / total).collect(),
    ))
}

/// Quadrature of one period: per node, a list of `(Z, weight)` and where
/// `X` lands.
enum Rule {
    /// Nodes on the log-uniform x-lattice: the `m`-th node moves `m / sub`
    /// x-cells.
    Lattice {
        sub: usize,
        m_lo: i64,
        m_hi: i64,
        weights: Vec<f64>,
        z: Vec<f64>,
    },
    Hermite {
        z: Vec<f64>,
        weights: Vec<f64>,
    },
}

struct Factor {
    vol: f64,
    lambda: f64,
    tau: f64,
}

impl Factor {
    fn new(model: &MarketModel, tau: f64) -> Result<Self> {
        let (vol, lambda) = model.lognormal_params().ok_or_else(|| {
            Error::InvalidInput("quadrature propagation needs the lognormal model".into())
        })?;
        if !(tau > 0.0) {
            return Err(Error::InvalidInput(format!("period length {tau} must be positive")));
        }
        Ok(Self { vol, lambda, tau })
    }

    fn ln_x_shift(&self, z: f64) -> f64 {
        -0.5 * self.vol * self.vol * self.tau + self.vol * self.tau.sqrt() * z
    }

    fn q_ratio(&self, z: f64) -> f64 {
        (self.lambda * self.tau.sqrt() * z - 0.5 * self.lambda * self.lambda * self.tau).exp()
    }
}

fn build_rule(f: &Factor, x_grid: &Grid1D, cfg: &PropagatorConfig) -> Result<Rule> {
    match cfg.quad_rule {
        QuadratureRule::GaussHermite => {
            let (z, weights) = gauss_hermite(cfg.quad_nodes)?;
            Ok(Rule::Hermite { z, weights })
        }
        QuadratureRule::Lattice => {
            if x_grid.spacing() != Spacing::UniformInLog {
                return Err(Error::InvalidGrid(
                    "the lattice rule needs a log-uniform x-grid".into(),
                ));
            }
            let n = x_grid.len();
            let dy = (x_grid.last().ln() - x_grid.first().ln()) / (n - 1) as f64;
            let s = f.vol * f.tau.sqrt();
            let h0 = dy / s;
            let sub = (h0 / MAX_LATTICE_STEP).ceil().max(1.0) as usize;
            let h = h0 / sub as f64;
            let z0 = 0.5 * f.vol * f.vol * f.tau / s;
            let m_lo = ((-cfg.z_max - z0) / h).ceil() as i64;
            let m_hi = ((cfg.z_max - z0) / h).floor() as i64;
            let z: Vec<f64> = (m_lo..=m_hi).map(|m| z0 + h * m as f64).collect();
            let mut weights: Vec<f64> = z.iter().map(|&z| h * normal::pdf(z)).collect();
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            Ok(Rule::Lattice {
                sub,
                m_lo,
                m_hi,
                weights,
                z,
            })
        }
    }
}

/// Clamped `(cell, weight)` of the point `m / sub` cells right of node `j`.
#[inline]
fn lattice_cell(j: usize, m: i64, sub: usize, n: usize) -> (usize, f64) {
    let pos = j as i64 * sub as i64 + m;
    if pos <= 0 {
        return (0, 0.0);
    }
    let last = (n as i64 - 1) * sub as i64;
    if pos >= last {
        return (n - 2, 1.0);
    }
    let c = (pos / sub as i64) as usize;
    let r = (pos % sub as i64) as f64 / sub as f64;
    (c, r)
}

/// Stretches of `out` whose cells hold extra nodes of `fine`: node index
/// bounds in `out` and the interior `ln x` of the extra nodes.
fn refined_windows(out: &Grid1D, fine: &Grid1D) -> Result<Vec<(usize, usize, Vec<f64>)>> {
    let mut at = Vec::with_capacity(out.len());
    for &x in out.points() {
        at.push(fine.index_of(x).ok_or_else(|| {
            Error::InvalidGrid(format!("output node {x} is not a node of the terminal grid"))
        })?);
    }
    let fp = fine.points();
    let mut windows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    for c in 0..out.len() - 1 {
        if at[c + 1] == at[c] + 1 {
            continue;
        }
        let inner = fp[at[c] + 1..at[c + 1]].iter().map(|x| x.ln());
        match windows.last_mut() {
            Some(w) if w.1 == c => {
                w.2.push(out.points()[c].ln());
                w.2.extend(inner);
                w.1 = c + 1;
            }
            _ => windows.push((c, c + 1, inner.collect())),
        }
    }
    Ok(windows)
}

/// Lattice nodes for start node `j` with refined windows substituted:
/// `(Z, weight)` from the trapezoid rule in `Z` against the density, tilted
/// linearly in `ratio(Z)` so that both it and one integrate exactly.
#[allow(clippy::too_many_arguments)]
fn merged_nodes(
    j: usize,
    sub: usize,
    m_lo: i64,
    m_hi: i64,
    ln_x0: f64,
    dy: f64,
    s: f64,
    windows: &[(usize, usize, Vec<f64>)],
    ratio: impl Fn(f64) -> f64,
) -> Vec<(f64, f64)> {
    let ly = ln_x0 + j as f64 * dy;
    let hy = dy / sub as f64;
    let z_of = |y: f64| (y - ly) / s + 0.5 * s;
    let mut z = Vec::with_capacity((m_hi - m_lo + 1) as usize);
    for m in m_lo..=m_hi {
        let pos = j as i64 * sub as i64 + m;
        let inside = windows.iter().find(|w| {
            (w.0 * sub) as i64 <= pos && pos < (w.1 * sub) as i64
        });
        match inside {
            Some(w) if pos > (w.0 * sub) as i64 => {}
            Some(w) => {
                z.push((m as f64 * hy) / s + 0.5 * s);
                z.extend(w.2.iter().map(|&y| z_of(y)));
            }
            None => z.push((m as f64 * hy) / s + 0.5 * s),
        }
    }
    let h = hy / s;
    let n = z.len();
    let mut out: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let lo = if i == 0 { z[0] - h } else { z[i - 1] };
            let hi = if i + 1 == n { z[n - 1] + h } else { z[i + 1] };
            (z[i], 0.5 * (hi - lo) * normal::pdf(z[i]))
        })
        .collect();
    let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for &(z, w) in &out {
        let r = ratio(z);
        m0 += w;
        m1 += w * r;
        m2 += w * r * r;
    }
    // weights w (a + b r) with sum one and r-moment one
    let det = m0 * m2 - m1 * m1;
    let (a, b) = ((m2 - m1) / det, (m0 - m1) / det);
    out.iter_mut().for_each(|p| p.1 *= a + b * ratio(p.0));
    out
}

/// `E^Q[f(X, q Q1)]` at every `(x, q)` node of `out_grid`. The terminal grid
/// is either `out_grid` or a refinement of it.
pub fn propagate_quadrature(
    terminal: &ValueSlice,
    out_grid: &Grid1D,
    t0: f64,
    model: &MarketModel,
    cfg: &PropagatorConfig,
) -> Result<ValueSlice> {
    if terminal.axis != Axis::DualQ {
        return Err(Error::InvalidInput("quadrature propagates dual slices".into()));
    }
    let f = Factor::new(model, terminal.time - t0)?;
    let rule = build_rule(&f, out_grid, cfg)?;
    let same = &terminal.x_grid == out_grid;
    let windows = if same { Vec::new() } else { refined_windows(out_grid, &terminal.x_grid)? };
    let surf = DualSurface::new(terminal)?;
    let xs = out_grid.points();
    let nx = xs.len();
    let ln_x0 = xs[0].ln();
    let dy = (xs[nx - 1].ln() - ln_x0) / (nx - 1) as f64;
    let s = f.vol * f.tau.sqrt();
    let qs = terminal.axis_grid.points();
    let rows: Vec<Vec<f64>> = (0..nx)
        .into_par_iter()
        .map(|j| {
            let mut out = vec![0.0; qs.len()];
            let mut acc = |cell: (usize, f64), ratio: f64, w: f64| {
                for (o, &q) in out.iter_mut().zip(qs) {
                    *o += w * surf.eval_weighted(cell, q * ratio);
                }
            };
            let ly = xs[j].ln();
            match &rule {
                Rule::Lattice { sub, m_lo, m_hi, weights, z } if same => {
                    for (k, m) in (*m_lo..=*m_hi).enumerate() {
                        acc(lattice_cell(j, m, *sub, nx), f.q_ratio(z[k]), weights[k]);
                    }
                }
                Rule::Lattice { sub, m_lo, m_hi, .. } => {
                    for (zz, w) in merged_nodes(j, *sub, *m_lo, *m_hi, ln_x0, dy, s, &windows, |z| f.q_ratio(z)) {
                        acc(surf.x_weight(ly + f.ln_x_shift(zz)), f.q_ratio(zz), w);
                    }
                }
                Rule::Hermite { z, weights } => {
                    for (k, &zz) in z.iter().enumerate() {
                        acc(surf.x_weight(ly + f.ln_x_shift(zz)), f.q_ratio(zz), weights[k]);
                    }
                }
            }
            out[0] = 0.0;
            out
        })
        .collect();
    let sections = rows
        .into_iter()
        .map(|r| {
            FunctionSamples::new(
                terminal.axis_grid.clone(),
                r,
                Tail::PlusInfinity,
                Tail::Linear { slope: 1.0 },
            )
            .map(ConvexProfile::new_unchecked)
        })
        .collect::<Result<Vec<_>>>()?;
    ValueSlice::new(t0, out_grid.clone(), Axis::DualQ, sections)
}

/// `E^Q[g(X_{t1})]` at every node of `out_grid`, with `g` given on `x_grid`,
/// which is `out_grid` or a refinement of it.
pub fn superhedge_quadrature(
    x_grid: &Grid1D,
    g: &[f64],
    out_grid: &Grid1D,
    t0: f64,
    t1: f64,
    model: &MarketModel,
    cfg: &PropagatorConfig,
) -> Result<Vec<f64>> {
    let f = Factor::new(model, t1 - t0)?;
    let rule = build_rule(&f, out_grid, cfg)?;
    let same = x_grid == out_grid;
    let windows = if same { Vec::new() } else { refined_windows(out_grid, x_grid)? };
    let line = LineSurface::new(x_grid, g)?;
    let xs = out_grid.points();
    let nx = xs.len();
    let ln_x0 = xs[0].ln();
    let dy = (xs[nx - 1].ln() - ln_x0) / (nx - 1) as f64;
    let s = f.vol * f.tau.sqrt();
    Ok((0..nx)
        .into_par_iter()
        .map(|j| {
            let ly = xs[j].ln();
            match &rule {
                Rule::Lattice { sub, m_lo, m_hi, weights, .. } if same => (*m_lo..=*m_hi)
                    .enumerate()
                    .map(|(k, m)| {
                        let (c, r) = lattice_cell(j, m, *sub, nx);
                        let v = if r == 0.0 { g[c] } else { g[c] + r * (g[c + 1] - g[c]) };
                        weights[k] * v
                    })
                    .sum(),
                Rule::Lattice { sub, m_lo, m_hi, .. } => {
                    merged_nodes(j, *sub, *m_lo, *m_hi, ln_x0, dy, s, &windows, |z| f.q_ratio(z))
                        .into_iter()
                        .map(|(zz, w)| w * line.eval(ly + f.ln_x_shift(zz)))
                        .sum()
                }
                Rule::Hermite { z, weights } => z
                    .iter()
                    .zip(weights)
                    .map(|(&zz, w)| w * line.eval(ly + f.ln_x_shift(zz)))
                    .sum(),
            }
        })
        .collect())
}
