//! Dual backward induction over the exercise schedule and recovery of the
//! primal surface `v = w#`.

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::convex::{fenchel_transform, right_derivative, ConvexProfile, FunctionSamples, Grid1D, Tail};
use crate::dual::{
    check_slice, conjugate_obstacle_decomposed, conjugate_obstacle_direct, convexified_obstacle,
    Axis, FaceliftParams, ValueSlice,
};
use crate::error::{Error, Result};
use crate::market::{simulate, Estimate, ExerciseSchedule, MarketModel, Measure, Payoff, SimConfig};
use crate::propagate::{interp::{DualSurface, LineSurface}, propagate, propagate_superhedge, PropagatorConfig};

/// Discretisation of the `x`, `q` and `p` axes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Centre of the log-uniform x-grid.
    pub x_ref: f64,
    /// The x-grid spans `[x_ref / x_ratio, x_ref * x_ratio]`.
    pub x_ratio: f64,
    pub nx: usize,
    pub nq: usize,
    pub np: usize,
    /// `q_max = q_max_multiplier * max payoff` unless `q_max` is set.
    pub q_max_multiplier: f64,
    pub q_max: Option<f64>,
    /// Sub-intervals per x-cell where the payoff switches between zero and
    /// positive values; 1 disables refinement.
    pub refine: usize,
    /// Neighbouring cells refined on each side of such a switch.
    pub refine_halo: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            x_ref: 30.0,
            x_ratio: 4.0,
            nx: 201,
            nq: 401,
            np: 401,
            q_max_multiplier: 8.0,
            q_max: None,
            refine: 32,
            refine_halo: 1,
        }
    }
}

impl GridConfig {
    pub fn x_grid(&self) -> Result<Grid1D> {
        Grid1D::log_uniform_around(self.x_ref, self.x_ratio, self.nx)
    }

    pub fn p_grid(&self) -> Result<Grid1D> {
        Grid1D::uniform(0.0, 1.0, self.np)
    }

    /// Largest payoff over the x-grid and the exercise dates.
    pub fn max_payoff(&self, schedule: &ExerciseSchedule, payoff: &Payoff) -> Result<f64> {
        let xg = self.x_grid()?;
        Ok((1..=schedule.periods())
            .flat_map(|i| xg.points().iter().map(move |&x| payoff.eval(i, x)))
            .fold(0.0, f64::max))
    }

    pub fn q_max_for(&self, schedule: &ExerciseSchedule, payoff: &Payoff) -> Result<f64> {
        let m = self.max_payoff(schedule, payoff)?;
        let q_max = match self.q_max {
            Some(q) => q,
            None if m > 0.0 => self.q_max_multiplier * m,
            None => self.q_max_multiplier,
        };
        if !(q_max > m) {
            return Err(Error::Config {
                field: "grid.q_max".into(),
                message: format!("q_max = {q_max} must exceed the largest payoff {m}"),
            });
        }
        Ok(q_max)
    }

    pub fn q_grid(&self, schedule: &ExerciseSchedule, payoff: &Payoff) -> Result<Grid1D> {
        Grid1D::uniform(0.0, self.q_max_for(schedule, payoff)?, self.nq)
    }

    /// The x-grid with the cells around each switch of `ell` between zero
    /// and positive values split into `refine` equal parts in `ln x`.
    pub fn obstacle_grid(&self, x: &Grid1D, ell: &[f64]) -> Result<Grid1D> {
        let n = x.len();
        let mut marked = vec![false; n - 1];
        for c in 0..n - 1 {
            if (ell[c] > 0.0) != (ell[c + 1] > 0.0) {
                let lo = c.saturating_sub(self.refine_halo);
                let hi = (c + self.refine_halo).min(n - 2);
                marked[lo..=hi].iter_mut().for_each(|m| *m = true);
            }
        }
        if self.refine <= 1 || !marked.contains(&true) {
            return Ok(x.clone());
        }
        let pts = x.points();
        let mut out = Vec::with_capacity(n + self.refine * 8);
        for c in 0..n - 1 {
            out.push(pts[c]);
            if marked[c] {
                let (a, b) = (pts[c].ln(), pts[c + 1].ln());
                out.extend((1..self.refine).map(|k| (a + (b - a) * k as f64 / self.refine as f64).exp()));
            }
        }
        out.push(pts[n - 1]);
        Grid1D::new(out)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: String| {
            Err(Error::Config {
                field: format!("grid.{field}"),
                message,
            })
        };
        if !(self.x_ref > 0.0) {
            return bad("x_ref", "must be positive".into());
        }
        if !(self.x_ratio > 1.0) {
            return bad("x_ratio", "must exceed 1".into());
        }
        if self.nx < 5 || self.nx % 2 == 0 {
            return bad("nx", format!("must be odd and at least 5, got {}", self.nx));
        }
        if self.nq < 4 {
            return bad("nq", "need at least 4 nodes".into());
        }
        if self.np < 3 {
            return bad("np", "need at least 3 nodes".into());
        }
        if self.refine == 0 {
            return bad("refine", "must be at least 1".into());
        }
        if !(self.q_max_multiplier > 1.0) {
            return bad("q_max_multiplier", "must exceed 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub grid: GridConfig,
    pub propagator: PropagatorConfig,
    /// Direct-route obstacle audit; by default on for at most four periods.
    pub audit: Option<bool>,
    /// Relative tolerance of convexity and duality checks.
    pub eps_rel: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            grid: GridConfig::default(),
            propagator: PropagatorConfig::default(),
            audit: None,
            eps_rel: 1e-9,
        }
    }
}

/// Audit record of one exercise date.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DateAudit {
    pub time: f64,
    /// Largest node-wise gap between the two obstacle routes.
    pub route_gap: Option<f64>,
    /// Largest amount removed by re-convexification in the period ending here.
    pub convexity_removed: f64,
}

/// Full backward solution. Index `i` of every per-date vector refers to the
/// schedule date `t_i`.
#[derive(Clone, Debug)]
pub struct DualSolution {
    pub schedule: ExerciseSchedule,
    pub model: MarketModel,
    pub payoff: Payoff,
    pub config: EngineConfig,
    pub x_grid: Grid1D,
    pub q_grid: Grid1D,
    pub p_grid: Grid1D,
    /// Continuation values `w(t_i, ., .)`; the last entry is `w(T) = q`.
    pub continuation: Vec<ValueSlice>,
    /// `(w# v l)#(t_i, ., .)` for `i >= 1`.
    pub post_obstacle: Vec<Option<ValueSlice>>,
    /// `co(v v l)(t_i, ., .)` on the p-grid for `i >= 1`.
    pub convexified: Vec<Option<ValueSlice>>,
    pub facelift: Vec<Option<Vec<FaceliftParams>>>,
    /// `v(t_i, ., 1)` by the one-dimensional recursion.
    pub superhedge: Vec<Vec<f64>>,
    /// `v(t_i, ., .) = w#` on the p-grid.
    pub primal: Vec<ValueSlice>,
    pub audit: Vec<DateAudit>,
    pub eps_dual: f64,
}

fn payoff_row(payoff: &Payoff, i: usize, x: &Grid1D) -> Vec<f64> {
    x.points().iter().map(|&x| payoff.eval(i, x)).collect()
}

fn terminal_slice(x: &Grid1D, q: &Grid1D, t: f64) -> Result<ValueSlice> {
    let s = FunctionSamples::new(q.clone(), q.points().to_vec(), Tail::PlusInfinity, Tail::Linear { slope: 1.0 })?;
    let p = ConvexProfile::new_unchecked(s);
    ValueSlice::new(t, x.clone(), Axis::DualQ, vec![p; x.len()])
}

fn check_model(model: &MarketModel, payoff: &Payoff, schedule: &ExerciseSchedule, x: &Grid1D) -> Result<()> {
    if model.dim() != 1 {
        return Err(Error::UnsupportedDimension { dim: model.dim() });
    }
    payoff.verify_on(schedule.periods() + 1, x.points())
}

/// `v(t_i, ., 1)` for every date by the Bermudan recursion
/// `v(t_i) = E^Q[(v v l)(t_{i+1}, X)]`, `v(T) = 0`.
pub fn superhedge_surface(
    model: &MarketModel,
    schedule: &ExerciseSchedule,
    payoff: &Payoff,
    config: &EngineConfig,
) -> Result<Vec<Vec<f64>>> {
    config.grid.validate()?;
    let x = config.grid.x_grid()?;
    check_model(model, payoff, schedule, &x)?;
    let d = schedule.dates();
    let n = schedule.periods();
    let mut out = vec![vec![0.0; x.len()]; n + 1];
    for i in (0..n).rev() {
        let ell = payoff_row(payoff, i + 1, &x);
        let g: Vec<f64> = out[i + 1].iter().zip(&ell).map(|(v, l): (&f64, &f64)| v.max(*l)).collect();
        out[i] = if d[i + 1] > d[i] {
            propagate_superhedge(&x, &g, d[i], d[i + 1], model, &config.propagator)?
        } else {
            g
        };
    }
    Ok(out)
}

/// Conjugates every section of a dual slice onto `p_grid`.
pub fn primal_slice(w: &ValueSlice, p_grid: &Grid1D) -> Result<ValueSlice> {
    let sections = w
        .sections()
        .iter()
        .map(|s| fenchel_transform(s, p_grid))
        .collect::<Result<Vec<_>>>()?;
    ValueSlice::new(w.time, w.x_grid.clone(), Axis::PrimalP, sections)
}

/// Runs the dual backward induction.
pub fn run_backward(
    model: &MarketModel,
    schedule: &ExerciseSchedule,
    payoff: &Payoff,
    config: &EngineConfig,
) -> Result<DualSolution> {
    config.grid.validate()?;
    config.propagator.validate()?;
    let x = config.grid.x_grid()?;
    check_model(model, payoff, schedule, &x)?;
    let q = config.grid.q_grid(schedule, payoff)?;
    let p = config.grid.p_grid()?;
    let n = schedule.periods();
    let d = schedule.dates();
    let audit_on = config.audit.unwrap_or(n <= 4);
    let eps_dual = config.eps_rel * q.last();

    let mut continuation = vec![None; n + 1];
    let mut post_obstacle = vec![None; n + 1];
    let mut convexified = vec![None; n + 1];
    let mut facelift = vec![None; n + 1];
    let mut superhedge = vec![Vec::new(); n + 1];
    let mut audit = Vec::with_capacity(n);
    continuation[n] = Some(terminal_slice(&x, &q, d[n])?);
    superhedge[n] = vec![0.0; x.len()];

    for i in (0..n).rev() {
        let w_next = continuation[i + 1].as_ref().unwrap();
        let ell = payoff_row(payoff, i + 1, &x);
        let fine = config.grid.obstacle_grid(&x, &ell)?;
        let refined = fine != x;
        let w_fine = if refined { w_next.resample_x(&fine)? } else { w_next.clone() };
        let ell_fine = payoff_row(payoff, i + 1, &fine);
        let (post, params_fine) = conjugate_obstacle_decomposed(&w_fine, &ell_fine)?;
        let params = if refined {
            x.points()
                .iter()
                .map(|&xj| params_fine[fine.index_of(xj).unwrap()])
                .collect()
        } else {
            params_fine
        };
        check_slice(&post, eps_dual)?;
        let route_gap = if audit_on {
            let direct = conjugate_obstacle_direct(&w_fine, &ell_fine)?;
            Some(post.max_abs_diff(&direct))
        } else {
            None
        };
        let (co, _) = convexified_obstacle(w_next, &ell, &p)?;
        let v_next = if refined {
            let line = LineSurface::new(&x, &superhedge[i + 1])?;
            fine.points().iter().map(|x| line.eval(x.ln())).collect()
        } else {
            superhedge[i + 1].clone()
        };
        let g: Vec<f64> = v_next.iter().zip(&ell_fine).map(|(v, l): (&f64, &f64)| v.max(*l)).collect();
        let (w, v1, removed) = if d[i + 1] > d[i] {
            let out = propagate(&post, &x, &g, d[i], model, &config.propagator)?;
            (out.w, out.superhedge, out.convexity_removed)
        } else {
            let mut same = post.restrict_x(&x)?;
            same.time = d[i];
            let g = x.points().iter().map(|&xj| g[fine.index_of(xj).unwrap()]).collect();
            (same, g, 0.0)
        };
        check_slice(&w, eps_dual)?;
        debug!(
            "period [{}, {}): route gap {:?}, projection {:e}",
            d[i], d[i + 1], route_gap, removed
        );
        audit.push(DateAudit {
            time: d[i + 1],
            route_gap,
            convexity_removed: removed,
        });
        continuation[i] = Some(w);
        post_obstacle[i + 1] = Some(post);
        convexified[i + 1] = Some(co);
        facelift[i + 1] = Some(params);
        superhedge[i] = v1;
    }
    audit.reverse();
    let continuation: Vec<ValueSlice> = continuation.into_iter().map(Option::unwrap).collect();
    let primal = continuation
        .iter()
        .map(|w| primal_slice(w, &p))
        .collect::<Result<Vec<_>>>()?;
    for v in &primal {
        check_slice(v, eps_dual)?;
    }
    info!("backward induction over {n} periods on {}x{} nodes done", x.len(), q.len());
    Ok(DualSolution {
        schedule: schedule.clone(),
        model: model.clone(),
        payoff: payoff.clone(),
        config: *config,
        x_grid: x,
        q_grid: q,
        p_grid: p,
        continuation,
        post_obstacle,
        convexified,
        facelift,
        superhedge,
        primal,
        audit,
        eps_dual,
    })
}

/// Axis coordinate of a point query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AxisPoint {
    P(f64),
    Q(f64),
}

/// Linear interpolation weights on a grid, or `None` outside it.
fn bracket(grid: &Grid1D, x: f64) -> Option<(usize, f64)> {
    if x < grid.first() || x > grid.last() {
        return None;
    }
    let i = grid.cell(x);
    let pts = grid.points();
    Some((i, (x - pts[i]) / (pts[i + 1] - pts[i])))
}

impl DualSolution {
    pub fn date_index(&self, t: f64) -> Result<usize> {
        self.schedule
            .dates()
            .iter()
            .position(|&d| (d - t).abs() <= 1e-12 * d.abs().max(1.0))
            .ok_or(Error::UnknownTime(t))
    }

    /// `w(t_i, ., .)`.
    pub fn dual_at(&self, t: f64) -> Result<&ValueSlice> {
        Ok(&self.continuation[self.date_index(t)?])
    }

    pub fn price_scale(&self) -> f64 {
        self.superhedge[0].iter().fold(1.0_f64, |m, v| m.max(v.abs()))
    }

    /// Interpolated `v(t, x, p)` or `w(t, x, q)`: piecewise linear in
    /// `(ln x, axis)`, exact at nodes.
    pub fn query(&self, t: f64, x: f64, at: AxisPoint) -> Result<f64> {
        let i = self.date_index(t)?;
        let (slice, a) = match at {
            AxisPoint::P(p) => (&self.primal[i], p),
            AxisPoint::Q(q) => (&self.continuation[i], q),
        };
        let ln_grid = Grid1D::new(self.x_grid.points().iter().map(|v| v.ln()).collect())?;
        let (jx, wx) = bracket(&ln_grid, x.ln()).ok_or(Error::OutsideDomain { point: x })?;
        let (ja, wa) = bracket(&slice.axis_grid, a).ok_or(Error::OutsideDomain { point: a })?;
        let node = |j: usize, k: usize| slice.value(j, k);
        let line = |j: usize| {
            if wa == 0.0 {
                node(j, ja)
            } else {
                (1.0 - wa) * node(j, ja) + wa * node(j, ja + 1)
            }
        };
        Ok(if wx == 0.0 {
            line(jx)
        } else {
            (1.0 - wx) * line(jx) + wx * line(jx + 1)
        })
    }

    /// Section `w(t, x, .)` with linear interpolation in `ln x` between nodes.
    pub fn dual_section(&self, t: f64, x: f64) -> Result<ConvexProfile> {
        let w = self.dual_at(t)?;
        let ln_grid = Grid1D::new(self.x_grid.points().iter().map(|v| v.ln()).collect())?;
        let (j, a) = bracket(&ln_grid, x.ln()).ok_or(Error::OutsideDomain { point: x })?;
        if a == 0.0 {
            return Ok(w.section(j).clone());
        }
        let vals: Vec<f64> = (0..self.q_grid.len())
            .map(|k| (1.0 - a) * w.value(j, k) + a * w.value(j + 1, k))
            .collect();
        Ok(ConvexProfile::new_unchecked(FunctionSamples::new(
            self.q_grid.clone(),
            vals,
            Tail::PlusInfinity,
            Tail::Linear { slope: 1.0 },
        )?))
    }

    /// Post-obstacle surface at date index `i >= 1` for off-grid evaluation.
    pub fn post_surface(&self, i: usize) -> Result<DualSurface> {
        match self.post_obstacle.get(i).and_then(|s| s.as_ref()) {
            Some(s) => DualSurface::new(s),
            None => Err(Error::InvalidInput(format!("no exercise obstacle at date index {i}"))),
        }
    }
}

/// `v(t, ., .)` on the p-grid.
pub fn recover_primal(solution: &DualSolution, t: f64) -> Result<&ValueSlice> {
    Ok(&solution.primal[solution.date_index(t)?])
}

/// `p_min(t, x) = D+_q w(t, x, 0)` together with the grid tolerance
/// `|s_1 - s_0|` between the first two cell slopes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PminFromDual {
    pub value: f64,
    pub grid_tolerance: f64,
}

pub fn pmin_from_dual(solution: &DualSolution, t: f64, x: f64) -> Result<PminFromDual> {
    let w = solution.dual_section(t, x)?;
    let q = solution.q_grid.points();
    let s0 = right_derivative(&w, 0.0)?;
    let s1 = right_derivative(&w, q[1])?;
    Ok(PminFromDual {
        value: s0,
        grid_tolerance: (s1 - s0).abs(),
    })
}

/// Chord form of the derivative identity `D+_q w(t_i) = E^P[D+_q f(X, q Q1)]`
/// with `f` the obstacle output at `t_{i+1}`: per node, the chord slope of
/// `w` on `[q_k, q_{k+1}]` and its Monte-Carlo estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativeCheck {
    pub x_index: usize,
    pub q_index: usize,
    pub chord: f64,
    pub estimate: Estimate,
}

pub fn derivative_propagation_check(
    solution: &DualSolution,
    date_index: usize,
    nodes: &[(usize, usize)],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<DerivativeCheck>> {
    let n = solution.schedule.periods();
    if date_index >= n {
        return Err(Error::InvalidInput(format!(
            "derivative check needs a period after date index {date_index}"
        )));
    }
    let d = solution.schedule.dates();
    let post = solution.post_surface(date_index + 1)?;
    let w = &solution.continuation[date_index];
    let q = solution.q_grid.points();
    nodes
        .iter()
        .map(|&(j, k)| {
            if k + 1 >= q.len() {
                return Err(Error::InvalidInput(format!("q index {k} has no right cell")));
            }
            let x = solution.x_grid.points()[j];
            let paths = simulate(
                &solution.model,
                d[date_index],
                &[x],
                &[d[date_index + 1]],
                SimConfig {
                    n_paths,
                    measure: Measure::Physical,
                    substeps: solution.config.propagator.substeps,
                    seed,
                },
            )?;
            let dq = q[k + 1] - q[k];
            let estimate = Estimate::from_samples((0..paths.n_paths()).map(|i| {
                let ly = paths.x1(i, 1).ln();
                let r = paths.q1(i, 1);
                (post.eval(ly, q[k + 1] * r) - post.eval(ly, q[k] * r)) / (dq * r)
            }));
            Ok(DerivativeCheck {
                x_index: j,
                q_index: k,
                chord: (w.value(j, k + 1) - w.value(j, k)) / dq,
                estimate,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normal;

    fn small() -> EngineConfig {
        EngineConfig {
            grid: GridConfig { nx: 101, nq: 201, np: 201, ..Default::default() },
            ..Default::default()
        }
    }

    fn bs() -> MarketModel {
        MarketModel::lognormal(0.25, 0.2).unwrap()
    }

    #[test]
    fn zero_payoff_keeps_identity() {
        let s = ExerciseSchedule::uniform(1.0, 3).unwrap();
        let sol = run_backward(&bs(), &s, &Payoff::Zero, &small()).unwrap();
        for w in &sol.continuation {
            for j in 0..sol.x_grid.len() {
                for (k, &q) in sol.q_grid.points().iter().enumerate() {
                    assert!((w.value(j, k) - q).abs() < 1e-9 * q.max(1.0));
                }
            }
        }
        assert!(sol.superhedge.iter().flatten().all(|v| *v == 0.0));
        let pm = pmin_from_dual(&sol, 0.0, 30.0).unwrap();
        assert!((pm.value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_period_is_exchange_value() {
        let s = ExerciseSchedule::uniform(1.0, 1).unwrap();
        let put = Payoff::put(30.0).unwrap();
        let sol = run_backward(&bs(), &s, &put, &small()).unwrap();
        let post = sol.post_obstacle[1].as_ref().unwrap();
        assert!(post.x_grid.len() > sol.x_grid.len());
        for (j, &x) in post.x_grid.points().iter().enumerate().step_by(7) {
            for (k, &q) in sol.q_grid.points().iter().enumerate().step_by(13) {
                assert!((post.value(j, k) - (q - (30.0 - x).max(0.0)).max(0.0)).abs() < 1e-12);
            }
        }
        let v1 = sol.query(0.0, 30.0, AxisPoint::P(1.0)).unwrap();
        let bs_put = normal::bs_put(30.0, 30.0, 0.25, 1.0);
        assert!((v1 / bs_put - 1.0).abs() < 5e-3, "{v1} vs {bs_put}");
        assert_eq!(sol.query(0.0, 30.0, AxisPoint::P(0.0)).unwrap(), 0.0);
        assert_eq!(pmin_from_dual(&sol, 1.0, 30.0).unwrap().value, 1.0);
    }

    #[test]
    fn query_interpolates_between_nodes() {
        let s = ExerciseSchedule::uniform(1.0, 2).unwrap();
        let put = Payoff::put(30.0).unwrap();
        let sol = run_backward(&bs(), &s, &put, &small()).unwrap();
        let p = sol.p_grid.points();
        let (a, b) = (sol.primal[0].value(50, 150), sol.primal[0].value(50, 151));
        let mid = sol.query(0.0, 30.0, AxisPoint::P(0.5 * (p[150] + p[151]))).unwrap();
        assert!(mid >= a.min(b) && mid <= a.max(b));
        assert_eq!(sol.query(0.0, 30.0, AxisPoint::P(p[150])).unwrap(), a);
        assert!(sol.query(0.0, 1000.0, AxisPoint::P(0.5)).is_err());
        assert!(matches!(sol.query(0.1, 30.0, AxisPoint::P(0.5)), Err(Error::UnknownTime(_))));
    }

    #[test]
    fn superhedge_surface_of_put_spread_dips_below_payoff() {
        let s = ExerciseSchedule::uniform(1.0, 3).unwrap();
        let spread = Payoff::put_spread(20.0, 30.0).unwrap();
        let v = superhedge_surface(&bs(), &s, &spread, &small()).unwrap();
        let x = small().grid.x_grid().unwrap();
        assert!(x.points().iter().zip(&v[1]).any(|(&x, &v)| v < spread.eval(1, x)));
        assert!(superhedge_surface(&bs(), &s, &Payoff::Zero, &small()).unwrap().iter().flatten().all(|v| *v == 0.0));
    }
}
