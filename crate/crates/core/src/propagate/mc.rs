//! Monte-Carlo propagation with paths simulated under `Q`.

use rayon::prelude::*;

use super::interp::{DualSurface, LineSurface};
use super::{project_dual_section, PropagatorConfig};
use crate::convex::Grid1D;
use crate::dual::{Axis, ValueSlice};
use crate::error::{Error, Result};
use crate::market::{simulate, Estimate, MarketModel, Measure, SimConfig};

pub const MIN_PATHS: usize = 1000;

/// Monte-Carlo slice with per-node standard errors.
#[derive(Clone, Debug)]
pub struct McSlice {
    pub slice: ValueSlice,
    pub std_errors: Vec<Vec<f64>>,
}

/// Terminal `(ln X, Q1)` samples started from each x node.
struct Samples {
    /// `Some(ln R)` when `ln X = ln x + ln R` for every start `x`.
    shared: Option<Vec<f64>>,
    per_node: Vec<Vec<f64>>,
    q1: Vec<Vec<f64>>,
}

impl Samples {
    fn ln_x(&self, j: usize, ln_x0: f64, path: usize) -> f64 {
        match &self.shared {
            Some(r) => ln_x0 + r[path],
            None => self.per_node[j][path],
        }
    }

    fn q1(&self, j: usize, path: usize) -> f64 {
        if self.q1.len() == 1 {
            self.q1[0][path]
        } else {
            self.q1[j][path]
        }
    }
}

fn draw(
    model: &MarketModel,
    x_grid: &Grid1D,
    nodes: &[usize],
    t0: f64,
    t1: f64,
    cfg: &PropagatorConfig,
) -> Result<Samples> {
    if cfg.mc_paths < MIN_PATHS {
        return Err(Error::InvalidInput(format!(
            "Monte Carlo needs at least {MIN_PATHS} paths, got {}",
            cfg.mc_paths
        )));
    }
    let sim = SimConfig {
        n_paths: cfg.mc_paths,
        measure: Measure::RiskNeutral,
        substeps: cfg.substeps,
        seed: cfg.seed,
    };
    if model.is_lognormal() {
        let p = simulate(model, t0, &[1.0], &[t1], sim)?;
        let n = p.n_paths();
        return Ok(Samples {
            shared: Some((0..n).map(|i| p.x1(i, 1).ln()).collect()),
            per_node: Vec::new(),
            q1: vec![(0..n).map(|i| p.q1(i, 1)).collect()],
        });
    }
    let mut per_node = vec![Vec::new(); x_grid.len()];
    let mut q1 = vec![Vec::new(); x_grid.len()];
    for &j in nodes {
        let p = simulate(model, t0, &[x_grid.points()[j]], &[t1], sim)?;
        let n = p.n_paths();
        per_node[j] = (0..n).map(|i| p.x1(i, 1).ln()).collect();
        q1[j] = (0..n).map(|i| p.q1(i, 1)).collect();
    }
    Ok(Samples {
        shared: None,
        per_node,
        q1,
    })
}

/// Estimates `w(t0, x_ix, q_iq)` at the listed `(ix, iq)` nodes, with `ix`
/// indexing `out_grid`.
pub fn propagate_mc_nodes(
    terminal: &ValueSlice,
    out_grid: &Grid1D,
    t0: f64,
    model: &MarketModel,
    nodes: &[(usize, usize)],
    cfg: &PropagatorConfig,
) -> Result<Vec<Estimate>> {
    if terminal.axis != Axis::DualQ {
        return Err(Error::InvalidInput("Monte Carlo propagates dual slices".into()));
    }
    let mut xs: Vec<usize> = nodes.iter().map(|n| n.0).collect();
    xs.sort_unstable();
    xs.dedup();
    let samples = draw(model, out_grid, &xs, t0, terminal.time, cfg)?;
    let surf = DualSurface::new(terminal)?;
    let qs = terminal.axis_grid.points();
    let n = cfg.mc_paths;
    Ok(nodes
        .par_iter()
        .map(|&(j, k)| {
            let ly = out_grid.points()[j].ln();
            Estimate::from_samples(
                (0..n).map(|i| surf.eval(samples.ln_x(j, ly, i), qs[k] * samples.q1(j, i))),
            )
        })
        .collect())
}

/// Full-slice Monte Carlo. Sections are projected onto the dual cone
/// (nonnegative, convex, slopes at most one) after averaging.
pub fn propagate_mc(
    terminal: &ValueSlice,
    out_grid: &Grid1D,
    t0: f64,
    model: &MarketModel,
    cfg: &PropagatorConfig,
) -> Result<McSlice> {
    if terminal.axis != Axis::DualQ {
        return Err(Error::InvalidInput("Monte Carlo propagates dual slices".into()));
    }
    let nx = out_grid.len();
    let all: Vec<usize> = (0..nx).collect();
    let samples = draw(model, out_grid, &all, t0, terminal.time, cfg)?;
    let surf = DualSurface::new(terminal)?;
    let qs = terminal.axis_grid.points();
    let n = cfg.mc_paths as f64;
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..nx)
        .into_par_iter()
        .map(|j| {
            let ly = out_grid.points()[j].ln();
            let mut s1 = vec![0.0; qs.len()];
            let mut s2 = vec![0.0; qs.len()];
            for i in 0..cfg.mc_paths {
                let cell = surf.x_weight(samples.ln_x(j, ly, i));
                let r = samples.q1(j, i);
                for (k, &q) in qs.iter().enumerate() {
                    let v = surf.eval_weighted(cell, q * r);
                    s1[k] += v;
                    s2[k] += v * v;
                }
            }
            let mean: Vec<f64> = s1.iter().map(|s| s / n).collect();
            let se = s2
                .iter()
                .zip(&mean)
                .map(|(s, m)| ((s / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt())
                .collect();
            (mean, se)
        })
        .collect();
    let mut sections = Vec::with_capacity(nx);
    let mut std_errors = Vec::with_capacity(nx);
    for (mean, se) in rows {
        sections.push(project_dual_section(&terminal.axis_grid, mean)?.0);
        std_errors.push(se);
    }
    Ok(McSlice {
        slice: ValueSlice::new(t0, out_grid.clone(), Axis::DualQ, sections)?,
        std_errors,
    })
}

/// `E^Q[g(X_{t1})]` per node of `out_grid` with standard errors, with `g`
/// given on `x_grid`.
pub fn superhedge_mc(
    x_grid: &Grid1D,
    g: &[f64],
    out_grid: &Grid1D,
    t0: f64,
    t1: f64,
    model: &MarketModel,
    cfg: &PropagatorConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let all: Vec<usize> = (0..out_grid.len()).collect();
    let samples = draw(model, out_grid, &all, t0, t1, cfg)?;
    let line = LineSurface::new(x_grid, g)?;
    let est: Vec<Estimate> = (0..out_grid.len())
        .into_par_iter()
        .map(|j| {
            let ly = out_grid.points()[j].ln();
            Estimate::from_samples((0..cfg.mc_paths).map(|i| line.eval(samples.ln_x(j, ly, i))))
        })
        .collect();
    Ok((
        est.iter().map(|e| e.value).collect(),
        est.iter().map(|e| e.std_error).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex::Tail;
    use crate::propagate::propagate_quadrature;

    fn put_terminal(nx: usize, nq: usize) -> ValueSlice {
        let xg = Grid1D::log_uniform_around(30.0, 4.0, nx).unwrap();
        let qg = Grid1D::uniform(0.0, 180.0, nq).unwrap();
        let rows = xg
            .points()
            .iter()
            .map(|&x| qg.points().iter().map(|&q| (q - (30.0 - x).max(0.0)).max(0.0)).collect())
            .collect();
        ValueSlice::from_rows(1.0, xg, qg, Axis::DualQ, rows, Tail::PlusInfinity, Tail::Linear { slope: 1.0 }, 1e-9).unwrap()
    }

    #[test]
    fn nodes_agree_with_quadrature() {
        let m = MarketModel::lognormal(0.25, 0.2).unwrap();
        let term = put_terminal(201, 401);
        let cfg = PropagatorConfig { mc_paths: 100_000, ..Default::default() };
        let quad = propagate_quadrature(&term, &term.x_grid, 2.0 / 3.0, &m, &cfg).unwrap();
        let nodes: Vec<(usize, usize)> = [60, 100, 140]
            .iter()
            .flat_map(|&j| [5, 20, 60, 200].map(move |k| (j, k)))
            .collect();
        let est = propagate_mc_nodes(&term, &term.x_grid, 2.0 / 3.0, &m, &nodes, &cfg).unwrap();
        for (&(j, k), e) in nodes.iter().zip(&est) {
            let d = (e.value - quad.value(j, k)).abs();
            assert!(d <= 3.0 * e.std_error + 1e-12, "({j},{k}): {e:?} vs {}", quad.value(j, k));
        }
    }

    #[test]
    fn full_slice_is_projected_and_rejects_few_paths() {
        let m = MarketModel::lognormal(0.25, 0.2).unwrap();
        let term = put_terminal(21, 41);
        let cfg = PropagatorConfig { mc_paths: 2000, ..Default::default() };
        let out = propagate_mc(&term, &term.x_grid, 0.5, &m, &cfg).unwrap();
        crate::dual::check_slice(&out.slice, 1e-9).unwrap();
        assert_eq!(out.std_errors[0][0], 0.0);
        let few = PropagatorConfig { mc_paths: 999, ..Default::default() };
        assert!(propagate_mc(&term, &term.x_grid, 0.5, &m, &few).is_err());
        let local = MarketModel::local_table(vec![1.0, 100.0], vec![0.25, 0.25], vec![0.2, 0.2]).unwrap();
        let e = propagate_mc_nodes(&term, &term.x_grid, 0.5, &local, &[(10, 10)], &cfg).unwrap();
        let q = propagate_quadrature(&term, &term.x_grid, 0.5, &m, &cfg).unwrap();
        assert!((e[0].value - q.value(10, 10)).abs() < 4.0 * e[0].std_error + 1e-3);
    }
}
