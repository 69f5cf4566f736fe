//! Verification checks against the oracles, with one record per check.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::convex::{Grid1D, Tail};
use crate::dual::{check_primal_section, check_slice, Axis, Region, ValueSlice};
use crate::engine::{
    derivative_propagation_check, pmin_from_dual, run_backward, AxisPoint, DualSolution, EngineConfig,
};
use crate::error::{Error, Result};
use crate::market::{pmin_estimate, ExerciseSchedule, MarketModel, Payoff};
use crate::normal;
use crate::oracles::{dual_success_probability, european_threshold_price, tree_duality_check, TreeModel};
use crate::propagate::{propagate_fd, propagate_mc_nodes, propagate_quadrature, Method, PropagatorConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
}

/// One verification record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub check: String,
    pub status: Status,
    pub measured: f64,
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Check {
    /// Passes when `measured <= tolerance`.
    pub fn at_most(check: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        let status = if measured <= tolerance { Status::Pass } else { Status::Fail };
        Self {
            check: check.into(),
            status,
            measured,
            tolerance,
            detail: None,
        }
    }

    /// Passes when `measured >= tolerance`.
    pub fn at_least(check: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        let status = if measured >= tolerance { Status::Pass } else { Status::Fail };
        Self {
            check: check.into(),
            status,
            measured,
            tolerance,
            detail: None,
        }
    }

    pub fn failed(check: impl Into<String>, detail: String) -> Self {
        Self {
            check: check.into(),
            status: Status::Fail,
            measured: f64::NAN,
            tolerance: f64::NAN,
            detail: Some(detail),
        }
    }

    pub fn with_detail(mut self, detail: String) -> Self {
        self.detail = Some(detail);
        self
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

/// Relative error with an exact zero reference handled absolutely.
pub fn relative_error(value: f64, reference: f64, scale: f64) -> f64 {
    if reference == 0.0 {
        if value.abs() <= 1e-12 * scale.max(1.0) {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (value - reference).abs() / reference.abs()
    }
}

/// A model, schedule, payoff and engine configuration.
#[derive(Clone, Debug)]
pub struct Problem {
    pub model: MarketModel,
    pub schedule: ExerciseSchedule,
    pub payoff: Payoff,
    pub engine: EngineConfig,
}

impl Problem {
    /// Put with strike 30 exercisable at 1/3, 2/3 and 1, `vol = 0.25`,
    /// `lambda = 0.2`.
    pub fn put_example() -> Self {
        Self {
            model: MarketModel::lognormal(0.25, 0.2).unwrap(),
            schedule: ExerciseSchedule::uniform(1.0, 3).unwrap(),
            payoff: Payoff::put(30.0).unwrap(),
            engine: EngineConfig::default(),
        }
    }

    /// Put spread with strikes 20 and 30 on the same market and dates.
    pub fn put_spread_example() -> Self {
        Self {
            payoff: Payoff::put_spread(20.0, 30.0).unwrap(),
            ..Self::put_example()
        }
    }

    pub fn solve(&self) -> Result<DualSolution> {
        run_backward(&self.model, &self.schedule, &self.payoff, &self.engine)
    }

    /// The same problem with the last date as the only exercise date.
    pub fn european(&self) -> Result<Self> {
        let d = self.schedule.dates();
        Ok(Self {
            schedule: ExerciseSchedule::new(vec![d[0], d[d.len() - 1]])?,
            payoff: last_date_payoff(&self.payoff, self.schedule.periods()),
            ..self.clone()
        })
    }
}

fn last_date_payoff(payoff: &Payoff, last: usize) -> Payoff {
    match payoff {
        Payoff::CustomTable { x, values } => {
            let row = values[last.min(values.len() - 1)].clone();
            Payoff::CustomTable {
                x: x.clone(),
                values: vec![row.clone(), row],
            }
        }
        other => other.clone(),
    }
}

/// Budgets and levels of the verification suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub seed: u64,
    pub x_ref: Option<f64>,
    pub tree_steps: usize,
    pub tree_grid: usize,
    pub european_levels: Vec<f64>,
    pub superhedge_range: [f64; 2],
    pub pmin_paths: usize,
    pub mc_paths: usize,
    pub derivative_paths: usize,
    pub success_paths: usize,
    pub success_levels: Vec<f64>,
    pub tolerances: Tolerances,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub tree_duality: f64,
    pub european_rel: f64,
    pub superhedge_rel: f64,
    pub fd_fraction_of_q_max: f64,
    pub mc_std_errors: f64,
    pub pmin_std_errors: f64,
    pub success_std_errors: f64,
    pub slope_asymptote: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tree_duality: 1e-6,
            european_rel: 5e-3,
            superhedge_rel: 5e-3,
            fd_fraction_of_q_max: 5e-3,
            mc_std_errors: 3.0,
            pmin_std_errors: 2.0,
            success_std_errors: 3.0,
            slope_asymptote: 1e-3,
        }
    }
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 0x5eed,
            x_ref: None,
            tree_steps: 4,
            tree_grid: 401,
            european_levels: vec![0.5, 0.75, 0.9, 0.95],
            superhedge_range: [15.0, 60.0],
            pmin_paths: 1_000_000,
            mc_paths: 100_000,
            derivative_paths: 100_000,
            success_paths: 100_000,
            success_levels: vec![0.5, 0.75, 0.9],
            tolerances: Tolerances::default(),
        }
    }
}

/// Tree duality on the calibrated binomial surrogate of a lognormal problem.
pub fn check_tree_duality(problem: &Problem, x0: f64, steps: usize, points: usize, tol: f64) -> Result<Check> {
    let (vol, lambda) = problem
        .model
        .lognormal_params()
        .ok_or_else(|| Error::InvalidInput("tree duality needs the lognormal model".into()))?;
    let d = problem.schedule.dates();
    let tree = TreeModel::calibrate(vol, lambda, d[1] - d[0], steps)?;
    let grid = Grid1D::uniform(0.0, 1.0, points)?;
    let r = tree_duality_check(&tree, &problem.schedule, &problem.payoff, x0, &grid)?;
    let scale = r.price_scale.max(f64::MIN_POSITIVE);
    Ok(Check::at_most("tree-duality", r.max_gap / scale, tol)
        .with_detail(format!("{} nodes, gap {:e}, price scale {}", r.nodes, r.max_gap, r.price_scale)))
}

/// Engine price of the single-date problem against the threshold oracle.
pub fn check_european_reduction(problem: &Problem, x: f64, levels: &[f64], tol: f64) -> Result<Vec<Check>> {
    let eu = problem.european()?;
    let mut engine = eu.engine;
    engine.propagator.method = Method::Quadrature;
    let sol = run_backward(&eu.model, &eu.schedule, &eu.payoff, &engine)?;
    let t = eu.schedule.dates()[0];
    let scale = sol.price_scale();
    levels
        .iter()
        .map(|&p| {
            let oracle = european_threshold_price(&eu.model, &eu.schedule, &eu.payoff, t, x, p)?;
            let price = sol.query(t, x, AxisPoint::P(p))?;
            Ok(Check::at_most(
                format!("european-reduction-p{p}"),
                relative_error(price, oracle.price, scale),
                tol,
            )
            .with_detail(format!("engine {price}, oracle {}", oracle.price)))
        })
        .collect()
}

/// `v(t_0, x, 1)` from the conjugate of `w` against the European put value
/// over the x-grid nodes in `range`, and at `x_atm`.
pub fn check_superhedge_boundary(sol: &DualSolution, range: [f64; 2], x_atm: f64, tol: f64) -> Result<Vec<Check>> {
    let strike = match sol.payoff {
        Payoff::Put { strike } => strike,
        _ => return Err(Error::InvalidInput("closed-form superhedge needs a put".into())),
    };
    let (vol, _) = sol
        .model
        .lognormal_params()
        .ok_or_else(|| Error::InvalidInput("closed-form superhedge needs the lognormal model".into()))?;
    let t = sol.schedule.dates()[0];
    let tau = sol.schedule.maturity() - t;
    let primal = &sol.primal[0];
    let last = sol.p_grid.len() - 1;
    let mut worst = (0.0_f64, 0.0);
    for (j, &x) in sol.x_grid.points().iter().enumerate() {
        if x >= range[0] && x <= range[1] {
            let e = relative_error(primal.value(j, last), normal::bs_put(x, strike, vol, tau), 1.0);
            if e > worst.0 {
                worst = (e, x);
            }
        }
    }
    let atm = sol.query(t, x_atm, AxisPoint::P(1.0))?;
    let atm_ref = normal::bs_put(x_atm, strike, vol, tau);
    Ok(vec![
        Check::at_most("superhedge-boundary", worst.0, tol).with_detail(format!("worst at x = {}", worst.1)),
        Check::at_most("superhedge-atm", relative_error(atm, atm_ref, 1.0), tol)
            .with_detail(format!("v = {atm}, closed form {atm_ref}")),
    ])
}

/// `D+_q w(t, x, 0)` against the Monte-Carlo probability that no payoff is
/// ever positive.
pub fn check_pmin(sol: &DualSolution, x: f64, n_paths: usize, seed: u64, k_se: f64) -> Result<Check> {
    let t = sol.schedule.dates()[0];
    let dual = pmin_from_dual(sol, t, x)?;
    let mc = pmin_estimate(&sol.model, &sol.schedule, &sol.payoff, t, &[x], n_paths, seed)?;
    let tol = k_se * mc.std_error + dual.grid_tolerance;
    Ok(Check::at_most("pmin-consistency", (dual.value - mc.value).abs(), tol).with_detail(format!(
        "dual {}, mc {} +- {}, grid {}",
        dual.value, mc.value, mc.std_error, dual.grid_tolerance
    )))
}

/// Put-obstacle terminal data `[q - l(T, x)]^+` on the engine grids.
pub fn put_terminal_slice(problem: &Problem) -> Result<ValueSlice> {
    let x = problem.engine.grid.x_grid()?;
    let q = problem.engine.grid.q_grid(&problem.schedule, &problem.payoff)?;
    let n = problem.schedule.periods();
    let rows = x
        .points()
        .iter()
        .map(|&xx| {
            let l = problem.payoff.eval(n, xx);
            q.points().iter().map(|&qq| (qq - l).max(0.0)).collect()
        })
        .collect();
    ValueSlice::from_rows(
        problem.schedule.maturity(),
        x,
        q,
        Axis::DualQ,
        rows,
        Tail::PlusInfinity,
        Tail::Linear { slope: 1.0 },
        problem.engine.eps_rel,
    )
}

/// Sparse node set away from the grid edges.
pub fn probe_nodes(nx: usize, nq: usize) -> Vec<(usize, usize)> {
    let xs = [nx * 3 / 10, nx / 2, nx * 7 / 10];
    let qs = [nq / 80, nq / 20, nq / 8, nq / 4, nq / 2];
    xs.iter().flat_map(|&j| qs.map(|k| (j, k.max(1)))).collect()
}

/// One backward period from put-obstacle data: finite differences and Monte
/// Carlo against quadrature.
pub fn check_propagators(problem: &Problem, mc_paths: usize, seed: u64, tol: &Tolerances) -> Result<Vec<Check>> {
    let term = put_terminal_slice(problem)?;
    let d = problem.schedule.dates();
    let t0 = d[d.len() - 2];
    let base = PropagatorConfig {
        seed,
        ..problem.engine.propagator
    };
    let quad = propagate_quadrature(&term, &term.x_grid, t0, &problem.model, &base)?;
    let g: Vec<f64> = term
        .x_grid
        .points()
        .iter()
        .map(|&x| problem.payoff.eval(problem.schedule.periods(), x))
        .collect();
    let (fd, _, _) = propagate_fd(&term, &g, t0, &problem.model, &base)?;
    let (nx, nq) = (term.x_grid.len(), term.axis_grid.len());
    let q_max = term.axis_grid.last();
    let mut worst = (0.0_f64, 0, 0);
    for j in nx / 8..=nx - 1 - nx / 8 {
        for k in 0..nq - nq / 10 {
            let e = (fd.value(j, k) - quad.value(j, k)).abs();
            if e > worst.0 {
                worst = (e, j, k);
            }
        }
    }
    let nodes = probe_nodes(nx, nq);
    let mc_cfg = PropagatorConfig { mc_paths, ..base };
    let est = propagate_mc_nodes(&term, &term.x_grid, t0, &problem.model, &nodes, &mc_cfg)?;
    let mut worst_z = (0.0_f64, 0, 0);
    for (&(j, k), e) in nodes.iter().zip(&est) {
        let z = (e.value - quad.value(j, k)).abs() / e.std_error.max(1e-10);
        if z > worst_z.0 {
            worst_z = (z, j, k);
        }
    }
    Ok(vec![
        Check::at_most("propagator-fd-vs-quadrature", worst.0 / q_max, tol.fd_fraction_of_q_max)
            .with_detail(format!("worst |fd - quad| = {} at node ({}, {})", worst.0, worst.1, worst.2)),
        Check::at_most("propagator-mc-vs-quadrature", worst_z.0, tol.mc_std_errors).with_detail(format!(
            "worst z over {} nodes at ({}, {})",
            nodes.len(),
            worst_z.1,
            worst_z.2
        )),
    ])
}

/// Largest gap between the decomposed and direct obstacle routes over all
/// exercise dates.
pub fn check_route_equivalence(sol: &DualSolution, label: &str) -> Check {
    let gaps: Vec<f64> = sol.audit.iter().filter_map(|a| a.route_gap).collect();
    if gaps.len() != sol.audit.len() {
        return Check::failed(format!("route-equivalence-{label}"), "audit was disabled".into());
    }
    let worst = gaps.iter().fold(0.0_f64, |m, g| m.max(*g));
    Check::at_most(format!("route-equivalence-{label}"), worst, sol.eps_dual)
}

fn slice_check(name: String, slices: &[&ValueSlice], tol: f64) -> Check {
    for s in slices {
        if let Err(e) = check_slice(s, tol) {
            return Check::failed(name, e.to_string());
        }
    }
    Check::at_most(name, 0.0, tol)
}

/// Dual and primal invariants of a solution, plus the derivative identity.
pub fn check_invariants(
    sol: &DualSolution,
    label: &str,
    derivative_paths: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<Vec<Check>> {
    let eps = sol.eps_dual;
    let mut out = Vec::new();
    let mut dual: Vec<&ValueSlice> = sol.continuation.iter().collect();
    dual.extend(sol.post_obstacle.iter().flatten());
    out.push(slice_check(format!("dual-invariants-{label}"), &dual, eps));

    let q = sol.q_grid.points();
    let nq = q.len();
    let mut worst_slope = 0.0_f64;
    for w in &sol.continuation {
        for j in 0..sol.x_grid.len() {
            let s = (w.value(j, nq - 1) - w.value(j, nq - 2)) / (q[nq - 1] - q[nq - 2]);
            worst_slope = worst_slope.max(1.0 - s);
        }
    }
    out.push(Check::at_most(format!("slope-asymptote-{label}"), worst_slope, tol.slope_asymptote));

    let mut primal: Vec<&ValueSlice> = sol.primal.iter().collect();
    primal.extend(sol.convexified.iter().flatten());
    out.push(slice_check(format!("primal-invariants-{label}"), &primal, eps));

    let mut below_pmin = 0.0_f64;
    let mut fault = None;
    for (i, v) in sol.primal.iter().enumerate() {
        let t = sol.schedule.dates()[i];
        for (j, &x) in sol.x_grid.points().iter().enumerate() {
            if let Err((c, k, d)) = check_primal_section(v.section(j), eps) {
                fault.get_or_insert(format!("{c} at t = {t}, x index {j}, p index {k}: {d}"));
            }
            let pm = pmin_from_dual(sol, t, x)?.value;
            for (k, &p) in sol.p_grid.points().iter().enumerate() {
                if p <= pm {
                    below_pmin = below_pmin.max(v.value(j, k).abs());
                }
            }
        }
    }
    let mut c = Check::at_most(format!("zero-below-pmin-{label}"), below_pmin, eps);
    if let Some(f) = fault {
        c = Check::failed(format!("zero-below-pmin-{label}"), f);
    }
    out.push(c);

    let n = sol.schedule.periods();
    let top = sol.p_grid.len() - 1;
    let mut worst_sup = 0.0_f64;
    for i in 0..n {
        for j in 0..sol.x_grid.len() {
            let e = relative_error(sol.primal[i].value(j, top), sol.superhedge[i][j], sol.price_scale());
            let floor = 1e-6 * sol.price_scale();
            if sol.superhedge[i][j] > floor {
                worst_sup = worst_sup.max(e);
            }
        }
    }
    out.push(Check::at_most(format!("primal-superhedge-{label}"), worst_sup, tol.superhedge_rel));

    let nodes = probe_nodes(sol.x_grid.len(), nq);
    let checks = derivative_propagation_check(sol, 0, &nodes, derivative_paths, seed)?;
    let mut worst_z = (0.0_f64, 0, 0);
    for c in &checks {
        // slopes lie in [0, 1]: events rarer than one path are unresolved
        let z = (c.chord - c.estimate.value).abs() / c.estimate.std_error.max(1.0 / derivative_paths as f64);
        if z > worst_z.0 {
            worst_z = (z, c.x_index, c.q_index);
        }
    }
    out.push(
        Check::at_most(format!("derivative-propagation-{label}"), worst_z.0, tol.mc_std_errors)
            .with_detail(format!("worst z at node ({}, {})", worst_z.1, worst_z.2)),
    );
    Ok(out)
}

/// Largest `l(t_1, x) - v(t_1, x, 1)` over the x-grid.
pub fn check_superhedge_dip(sol: &DualSolution, label: &str) -> Check {
    let dip = sol
        .x_grid
        .points()
        .iter()
        .zip(&sol.superhedge[1])
        .map(|(&x, v)| sol.payoff.eval(1, x) - v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut c = Check::at_least(format!("superhedge-below-payoff-{label}"), dip, 0.0);
    c.status = if dip > 0.0 { Status::Pass } else { Status::Fail };
    c
}

/// Number of distinct facelift regions over the x-grid at `t_1`.
pub fn check_regions(sol: &DualSolution, label: &str) -> Check {
    let params = sol.facelift[1].as_deref().unwrap_or(&[]);
    let has = |r: Region| params.iter().any(|p| p.region == r);
    let count = [Region::A1, Region::A2, Region::A3].into_iter().filter(|r| has(*r)).count();
    let names: Vec<&str> = [(Region::A1, "A1"), (Region::A2, "A2"), (Region::A3, "A3")]
        .into_iter()
        .filter(|(r, _)| has(*r))
        .map(|(_, n)| n)
        .collect();
    Check::at_least(format!("three-regions-{label}"), count as f64, 3.0).with_detail(names.join(","))
}

/// Success frequency of the dual-optimal policy at each level.
pub fn check_success(
    sol: &DualSolution,
    x: f64,
    levels: &[f64],
    n_paths: usize,
    seed: u64,
    k_se: f64,
) -> Result<Vec<Check>> {
    let t = sol.schedule.dates()[0];
    levels
        .iter()
        .map(|&p| {
            let s = dual_success_probability(sol, t, x, p, n_paths, seed)?;
            let bound = p - k_se * s.estimate.std_error - s.grid_tolerance;
            let c = Check::at_least(format!("dual-success-p{p}"), s.estimate.value, bound).with_detail(format!(
                "threshold {}, se {}, grid {}",
                s.threshold, s.estimate.std_error, s.grid_tolerance
            ));
            if s.at_boundary {
                warn!("success threshold at the q-grid boundary for p = {p}");
            }
            Ok(c)
        })
        .collect()
}

/// Every check applicable to `problem`; the root point is `x_ref` of the
/// grid unless overridden.
pub fn verify(problem: &Problem, cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let x0 = cfg.x_ref.unwrap_or(problem.engine.grid.x_ref);
    let tol = &cfg.tolerances;
    let mut engine = problem.engine;
    engine.audit = Some(true);
    let problem = Problem { engine, ..problem.clone() };
    let sol = problem.solve()?;
    let mut out = Vec::new();
    let label = "config";
    out.extend(check_invariants(&sol, label, cfg.derivative_paths, cfg.seed, tol)?);
    out.push(check_route_equivalence(&sol, label));
    out.push(check_pmin(&sol, x0, cfg.pmin_paths, cfg.seed, tol.pmin_std_errors)?);
    if problem.model.is_lognormal() {
        let uniform = problem.schedule.dates().windows(2).all(|w| {
            let h = problem.schedule.dates()[1] - problem.schedule.dates()[0];
            ((w[1] - w[0]) - h).abs() <= 1e-12 * h.max(1.0)
        });
        if uniform {
            out.push(check_tree_duality(&problem, x0, cfg.tree_steps, cfg.tree_grid, tol.tree_duality)?);
        }
        out.extend(check_european_reduction(&problem, x0, &cfg.european_levels, tol.european_rel)?);
        if matches!(problem.payoff, Payoff::Put { .. }) {
            out.extend(check_superhedge_boundary(&sol, cfg.superhedge_range, x0, tol.superhedge_rel)?);
        }
    }
    match problem.payoff {
        Payoff::Put { .. } => out.push(check_regions(&sol, label)),
        Payoff::PutSpread { .. } => out.push(check_superhedge_dip(&sol, label)),
        _ => {}
    }
    out.extend(check_propagators(&problem, cfg.mc_paths, cfg.seed, tol)?);
    out.extend(check_success(&sol, x0, &cfg.success_levels, cfg.success_paths, cfg.seed, tol.success_std_errors)?);
    for c in &out {
        if !c.passed() {
            warn!("check {} failed: {:?}", c.check, c.detail);
        }
    }
    Ok(out)
}

/// A copy of `slice` with a concave kink planted at one node, for negative
/// controls of the invariant checks.
pub fn corrupt_slice(slice: &ValueSlice, x_index: usize, axis_index: usize, bump: f64) -> Result<ValueSlice> {
    let mut rows = slice.rows();
    rows[x_index][axis_index] += bump;
    let s = slice.section(0);
    ValueSlice::from_rows(
        slice.time,
        slice.x_grid.clone(),
        slice.axis_grid.clone(),
        slice.axis,
        rows,
        s.left_tail(),
        s.right_tail(),
        f64::MAX,
    )
}
