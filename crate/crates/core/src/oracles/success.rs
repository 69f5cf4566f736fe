//! Physical success frequency of the dual-optimal policy. The policy starts
//! from the subgradient inverse `q` of `w(t, x, .)` at level `p`; at each
//! exercise date it reads the success level `P_k = D+_q (w# v l)#(t_k, X, Q)`,
//! fails if `P_k = 0`, and otherwise restarts from the subgradient inverse of
//! the continuation `w(t_k, X, .)` at `P_k`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convex::{left_derivative, right_derivative, subdifferential_argmax};
use crate::engine::DualSolution;
use crate::error::Result;
use crate::market::{simulate, Estimate, Measure, SimConfig};
use crate::propagate::interp::DualSurface;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessEstimate {
    pub estimate: Estimate,
    pub threshold: f64,
    /// Width of the subdifferential of `w(t, x, .)` at the threshold.
    pub grid_tolerance: f64,
    /// The threshold sits on the last q node.
    pub at_boundary: bool,
}

/// Right q-slope of an interpolated dual surface; slope one beyond the grid.
fn right_slope(surf: &DualSurface, ln_x: f64, q: f64) -> f64 {
    let g = surf.q_grid();
    if q >= g.last() {
        return 1.0;
    }
    let pts = g.points();
    let k = g.cell(q);
    let cell = surf.x_weight(ln_x);
    (surf.eval_weighted(cell, pts[k + 1]) - surf.eval_weighted(cell, pts[k])) / (pts[k + 1] - pts[k])
}

/// Smallest q node whose right slope reaches `level`; the last node otherwise.
fn slope_inverse(surf: &DualSurface, ln_x: f64, level: f64) -> f64 {
    let pts = surf.q_grid().points();
    let cell = surf.x_weight(ln_x);
    let slope = |k: usize| (surf.eval_weighted(cell, pts[k + 1]) - surf.eval_weighted(cell, pts[k])) / (pts[k + 1] - pts[k]);
    let (mut lo, mut hi) = (0, pts.len() - 1);
    while lo < hi {
        let m = (lo + hi) / 2;
        if slope(m) >= level {
            hi = m;
        } else {
            lo = m + 1;
        }
    }
    pts[lo]
}

pub fn dual_success_probability(
    solution: &DualSolution,
    t: f64,
    x: f64,
    p: f64,
    n_paths: usize,
    seed: u64,
) -> Result<SuccessEstimate> {
    solution.date_index(t)?;
    let w = solution.dual_section(t, x)?;
    let threshold = subdifferential_argmax(&w, p)?;
    let grid_tolerance = right_derivative(&w, threshold)? - left_derivative(&w, threshold)?.max(0.0);
    let at_boundary = threshold >= solution.q_grid.last();
    let future = solution.schedule.indices_after(t);
    let d = solution.schedule.dates();
    let horizon: Vec<f64> = future.iter().map(|&k| d[k]).collect();
    let surfaces = future
        .iter()
        .map(|&k| solution.post_surface(k))
        .collect::<Result<Vec<_>>>()?;
    let restarts = future
        .iter()
        .map(|&k| DualSurface::new(&solution.continuation[k]))
        .collect::<Result<Vec<_>>>()?;
    let paths = simulate(
        &solution.model,
        t,
        &[x],
        &horizon,
        SimConfig {
            n_paths,
            measure: Measure::Physical,
            substeps: solution.config.propagator.substeps,
            seed,
        },
    )?;
    let hits: Vec<f64> = (0..paths.n_paths())
        .into_par_iter()
        .map(|i| {
            let mut q = threshold;
            let mut ok = true;
            for (k, s) in surfaces.iter().enumerate() {
                q *= paths.q1(i, k + 1) / paths.q1(i, k);
                let ln_x = paths.x1(i, k + 1).ln();
                let level = right_slope(s, ln_x, q);
                if level <= 0.0 {
                    ok = false;
                    break;
                }
                if k + 1 < surfaces.len() {
                    q = slope_inverse(&restarts[k], ln_x, level.min(1.0));
                }
            }
            if ok {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Ok(SuccessEstimate {
        estimate: Estimate::from_samples(hits.into_iter()),
        threshold,
        grid_tolerance,
        at_boundary,
    })
}
