//! Finite differences for the linear dual equation on an `(ln x, q)` grid:
//!
//! `-d_t w - 1/2 s^2 (w_yy - w_y) - s lambda q w_yq - 1/2 lambda^2 q^2 w_qq = 0`
//!
//! with `y = ln x` and `s = sigma(t,x)/x`. Douglas ADI splitting: the mixed
//! term is explicit, each direction is implicit with weight `theta`; the
//! first steps are fully implicit half steps.

use log::debug;

use super::{project_dual_section, PropagatorConfig};
use crate::convex::Grid1D;
use crate::dual::{Axis, ValueSlice};
use crate::error::{Error, Result};
use crate::market::MarketModel;

/// Diagnostics of one finite-difference period.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FdReport {
    pub steps: usize,
    /// Largest amount removed by the final projection onto convex profiles.
    pub convexity_removed: f64,
}

/// Three-point weights `(minus, centre, plus)` per node; zero at the ends.
struct Stencil {
    m: Vec<f64>,
    c: Vec<f64>,
    p: Vec<f64>,
}

fn first_derivative(pts: &[f64]) -> Stencil {
    let n = pts.len();
    let mut s = Stencil {
        m: vec![0.0; n],
        c: vec![0.0; n],
        p: vec![0.0; n],
    };
    for i in 1..n - 1 {
        let (hm, hp) = (pts[i] - pts[i - 1], pts[i + 1] - pts[i]);
        s.m[i] = -hp / (hm * (hm + hp));
        s.c[i] = (hp - hm) / (hm * hp);
        s.p[i] = hm / (hp * (hm + hp));
    }
    s
}

fn second_derivative(pts: &[f64]) -> Stencil {
    let n = pts.len();
    let mut s = Stencil {
        m: vec![0.0; n],
        c: vec![0.0; n],
        p: vec![0.0; n],
    };
    for i in 1..n - 1 {
        let (hm, hp) = (pts[i] - pts[i - 1], pts[i + 1] - pts[i]);
        s.m[i] = 2.0 / (hm * (hm + hp));
        s.c[i] = -2.0 / (hm * hp);
        s.p[i] = 2.0 / (hp * (hm + hp));
    }
    s
}

/// Thomas algorithm; `a` sub-, `b` main, `c` super-diagonal, solution in `d`.
fn solve_tridiagonal(a: &[f64], b: &mut [f64], c: &[f64], d: &mut [f64]) {
    let n = b.len();
    for i in 1..n {
        let m = a[i] / b[i - 1];
        b[i] -= m * c[i - 1];
        d[i] -= m * d[i - 1];
    }
    d[n - 1] /= b[n - 1];
    for i in (0..n - 1).rev() {
        d[i] = (d[i] - c[i] * d[i + 1]) / b[i];
    }
}

/// Linear extrapolation weights: `u_0 = (1 + e) u_1 - e u_2`.
fn edge_weights(y: &[f64]) -> (f64, f64) {
    let n = y.len();
    (
        (y[1] - y[0]) / (y[2] - y[1]),
        (y[n - 1] - y[n - 2]) / (y[n - 2] - y[n - 3]),
    )
}

/// One-dimensional operator `1/2 s^2 (u_yy - u_y)` in the y-direction.
struct YOperator {
    m: Vec<f64>,
    c: Vec<f64>,
    p: Vec<f64>,
}

impl YOperator {
    fn new(d1: &Stencil, d2: &Stencil, s: &[f64]) -> Self {
        let n = s.len();
        let mut op = YOperator {
            m: vec![0.0; n],
            c: vec![0.0; n],
            p: vec![0.0; n],
        };
        for j in 1..n - 1 {
            let a = 0.5 * s[j] * s[j];
            op.m[j] = a * (d2.m[j] - d1.m[j]);
            op.c[j] = a * (d2.c[j] - d1.c[j]);
            op.p[j] = a * (d2.p[j] - d1.p[j]);
        }
        op
    }

    #[inline]
    fn apply(&self, j: usize, um: f64, u: f64, up: f64) -> f64 {
        self.m[j] * um + self.c[j] * u + self.p[j] * up
    }

    /// Solves `(I - k A) u = rhs` on interior nodes with extrapolated ends;
    /// `rhs` holds all nodes and is overwritten with the solution.
    fn solve(&self, k: f64, e: (f64, f64), rhs: &mut [f64]) {
        let n = rhs.len();
        let ni = n - 2;
        let mut a = vec![0.0; ni];
        let mut b = vec![0.0; ni];
        let mut c = vec![0.0; ni];
        for r in 0..ni {
            let j = r + 1;
            a[r] = -k * self.m[j];
            b[r] = 1.0 - k * self.c[j];
            c[r] = -k * self.p[j];
        }
        // ghost substitution keeps the system tridiagonal
        let l0 = a[0];
        b[0] += l0 * (1.0 + e.0);
        c[0] -= l0 * e.0;
        let un = c[ni - 1];
        b[ni - 1] += un * (1.0 + e.1);
        a[ni - 1] -= un * e.1;
        let d = &mut rhs[1..n - 1];
        solve_tridiagonal(&a, &mut b, &c, d);
        rhs[0] = (1.0 + e.0) * rhs[1] - e.0 * rhs[2];
        rhs[n - 1] = (1.0 + e.1) * rhs[n - 2] - e.1 * rhs[n - 3];
    }
}

struct Coefficients {
    s: Vec<f64>,
    lambda: Vec<f64>,
}

fn coefficients(model: &MarketModel, t: f64, x: &[f64]) -> Result<Coefficients> {
    let s = x.iter().map(|&x| model.vol_rel(t, x)).collect::<Result<Vec<_>>>()?;
    let lambda = x.iter().map(|&x| model.lambda_1d(t, x)).collect::<Result<Vec<_>>>()?;
    Ok(Coefficients { s, lambda })
}

/// Time steps `(dt, theta)` for one period, Rannacher half steps first.
fn schedule(tau: f64, cfg: &PropagatorConfig) -> Vec<(f64, f64)> {
    let dt = tau / cfg.fd_steps as f64;
    let r = cfg.rannacher_steps.min(cfg.fd_steps);
    let mut out = Vec::with_capacity(cfg.fd_steps + r);
    for _ in 0..2 * r {
        out.push((0.5 * dt, 1.0));
    }
    for _ in r..cfg.fd_steps {
        out.push((dt, 0.5));
    }
    out
}

fn check_grids(x_grid: &Grid1D, model: &MarketModel, t0: f64, t1: f64) -> Result<()> {
    if model.dim() != 1 {
        return Err(Error::UnsupportedDimension { dim: model.dim() });
    }
    if x_grid.len() < 4 {
        return Err(Error::InvalidGrid("finite differences need at least 4 x nodes".into()));
    }
    if !(t1 > t0) {
        return Err(Error::InvalidInput(format!("empty period [{t0}, {t1})")));
    }
    Ok(())
}

/// `v(t0, ., 1)` from `g = (v v l)(t1, ., 1)` by the theta scheme in `y`.
pub fn superhedge_fd(
    x_grid: &Grid1D,
    g: &[f64],
    t0: f64,
    t1: f64,
    model: &MarketModel,
    cfg: &PropagatorConfig,
) -> Result<Vec<f64>> {
    check_grids(x_grid, model, t0, t1)?;
    let y: Vec<f64> = x_grid.points().iter().map(|x| x.ln()).collect();
    let (d1, d2) = (first_derivative(&y), second_derivative(&y));
    let e = edge_weights(&y);
    let mut v = g.to_vec();
    let mut tau = 0.0;
    for (dt, theta) in schedule(t1 - t0, cfg) {
        let c = coefficients(model, t1 - tau - 0.5 * dt, x_grid.points())?;
        let op = YOperator::new(&d1, &d2, &c.s);
        step_line(&op, &mut v, dt, theta, e);
        tau += dt;
    }
    Ok(v)
}

fn step_line(op: &YOperator, v: &mut Vec<f64>, dt: f64, theta: f64, e: (f64, f64)) {
    let n = v.len();
    let mut rhs = v.clone();
    for j in 1..n - 1 {
        rhs[j] += (1.0 - theta) * dt * op.apply(j, v[j - 1], v[j], v[j + 1]);
    }
    op.solve(theta * dt, e, &mut rhs);
    *v = rhs;
}

/// One period of the dual equation. `g = (v v l)(t1, ., 1)` drives the
/// `q = q_max` boundary `w = q_max - v(t, x, 1)`, solved alongside.
pub fn propagate_fd(
    terminal: &ValueSlice,
    g: &[f64],
    t0: f64,
    model: &MarketModel,
    cfg: &PropagatorConfig,
) -> Result<(ValueSlice, Vec<f64>, FdReport)> {
    let t1 = terminal.time;
    let x_grid = &terminal.x_grid;
    check_grids(x_grid, model, t0, t1)?;
    if terminal.axis != Axis::DualQ {
        return Err(Error::InvalidInput("finite differences propagate dual slices".into()));
    }
    let qg = &terminal.axis_grid;
    let q = qg.points();
    if q[0] != 0.0 || q.len() < 4 {
        return Err(Error::InvalidGrid("q-grid must start at 0 with at least 4 nodes".into()));
    }
    let (nx, nq) = (x_grid.len(), q.len());
    let q_max = q[nq - 1];
    let y: Vec<f64> = x_grid.points().iter().map(|x| x.ln()).collect();
    let (d1y, d2y) = (first_derivative(&y), second_derivative(&y));
    let (d1q, d2q) = (first_derivative(q), second_derivative(q));
    let e = edge_weights(&y);
    let bound = q_max + g.iter().fold(0.0_f64, |m, v| m.max(v.abs())) + 1.0;

    let mut w: Vec<f64> = terminal.rows().into_iter().flatten().collect();
    let mut v1 = g.to_vec();
    let idx = |j: usize, k: usize| j * nq + k;
    let steps = schedule(t1 - t0, cfg);
    let mut tau = 0.0;
    let mut y0 = vec![0.0; nx * nq];
    let mut a2w = vec![0.0; nx * nq];
    let mut col = vec![0.0; nx];
    for &(dt, theta) in &steps {
        let t_mid = t1 - tau - 0.5 * dt;
        let c = coefficients(model, t_mid, x_grid.points())?;
        let op = YOperator::new(&d1y, &d2y, &c.s);
        step_line(&op, &mut v1, dt, theta, e);

        for j in 1..nx - 1 {
            let lam2 = c.lambda[j] * c.lambda[j];
            let mix = c.s[j] * c.lambda[j];
            for k in 1..nq - 1 {
                let ww = |jj: usize, kk: usize| w[idx(jj, kk)];
                let a1 = op.apply(j, ww(j - 1, k), ww(j, k), ww(j + 1, k));
                let a2 = 0.5
                    * lam2
                    * q[k]
                    * q[k]
                    * (d2q.m[k] * ww(j, k - 1) + d2q.c[k] * ww(j, k) + d2q.p[k] * ww(j, k + 1));
                let dy = [d1y.m[j], d1y.c[j], d1y.p[j]];
                let dq = [d1q.m[k], d1q.c[k], d1q.p[k]];
                let mut a0 = 0.0;
                for (a, wy) in dy.iter().enumerate() {
                    for (b, wq) in dq.iter().enumerate() {
                        a0 += wy * wq * ww(j + a - 1, k + b - 1);
                    }
                }
                a0 *= mix * q[k];
                y0[idx(j, k)] = ww(j, k) + dt * (a0 + a1 + a2) - theta * dt * a1;
                a2w[idx(j, k)] = a2;
            }
        }
        // implicit in y, one line per interior q node
        for k in 1..nq - 1 {
            for j in 1..nx - 1 {
                col[j] = y0[idx(j, k)];
            }
            col[0] = 0.0;
            col[nx - 1] = 0.0;
            op.solve(theta * dt, e, &mut col);
            for j in 0..nx {
                y0[idx(j, k)] = col[j];
            }
        }
        // implicit in q, one line per interior x node, Dirichlet ends
        let ni = nq - 2;
        let mut a = vec![0.0; ni];
        let mut b = vec![0.0; ni];
        let mut cc = vec![0.0; ni];
        let mut d = vec![0.0; ni];
        for j in 1..nx - 1 {
            let lam2 = c.lambda[j] * c.lambda[j];
            let top = q_max - v1[j];
            for r in 0..ni {
                let k = r + 1;
                let kq = theta * dt * 0.5 * lam2 * q[k] * q[k];
                a[r] = -kq * d2q.m[k];
                b[r] = 1.0 - kq * d2q.c[k];
                cc[r] = -kq * d2q.p[k];
                d[r] = y0[idx(j, k)] - theta * dt * a2w[idx(j, k)];
            }
            d[ni - 1] -= cc[ni - 1] * top;
            solve_tridiagonal(&a, &mut b, &cc, &mut d);
            w[idx(j, 0)] = 0.0;
            for r in 0..ni {
                w[idx(j, r + 1)] = d[r];
            }
            w[idx(j, nq - 1)] = top;
        }
        for k in 0..nq {
            w[idx(0, k)] = (1.0 + e.0) * w[idx(1, k)] - e.0 * w[idx(2, k)];
            w[idx(nx - 1, k)] = (1.0 + e.1) * w[idx(nx - 2, k)] - e.1 * w[idx(nx - 3, k)];
        }
        for j in [0, nx - 1] {
            w[idx(j, 0)] = 0.0;
            w[idx(j, nq - 1)] = q_max - v1[j];
        }
        tau += dt;
        if let Some(bad) = w.iter().find(|v| !v.is_finite() || v.abs() > bound) {
            return Err(Error::Instability {
                time: t1 - tau,
                value: *bad,
            });
        }
    }
    let mut removed = 0.0_f64;
    let mut sections = Vec::with_capacity(nx);
    for j in 0..nx {
        let (s, r) = project_dual_section(qg, w[idx(j, 0)..idx(j, 0) + nq].to_vec())?;
        removed = removed.max(r);
        sections.push(s);
    }
    debug!("finite differences on [{t0}, {t1}): projection removed at most {removed:e}");
    Ok((
        ValueSlice::new(t0, x_grid.clone(), Axis::DualQ, sections)?,
        v1,
        FdReport {
            steps: steps.len(),
            convexity_removed: removed,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex::Tail;
    use crate::normal;
    use crate::propagate::{propagate_quadrature, superhedge_quadrature};

    fn slice(xg: &Grid1D, qg: &Grid1D, t: f64, f: impl Fn(f64, f64) -> f64) -> ValueSlice {
        let rows = xg
            .points()
            .iter()
            .map(|&x| qg.points().iter().map(|&q| f(x, q)).collect())
            .collect();
        ValueSlice::from_rows(t, xg.clone(), qg.clone(), Axis::DualQ, rows, Tail::PlusInfinity, Tail::Linear { slope: 1.0 }, 1e-9).unwrap()
    }

    #[test]
    fn tridiagonal_solver() {
        let a = [0.0, 1.0, 1.0];
        let mut b = [4.0, 4.0, 4.0];
        let c = [1.0, 1.0, 0.0];
        let mut d = [5.0, 6.0, 5.0];
        solve_tridiagonal(&a, &mut b, &c, &mut d);
        assert!(d.iter().all(|v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn identity_terminal_is_exact() {
        let m = MarketModel::lognormal(0.25, 0.2).unwrap();
        let xg = Grid1D::log_uniform_around(30.0, 4.0, 41).unwrap();
        let qg = Grid1D::uniform(0.0, 100.0, 51).unwrap();
        let term = slice(&xg, &qg, 1.0, |_, q| q);
        let cfg = PropagatorConfig { fd_steps: 20, ..Default::default() };
        let (w, v1, _) = propagate_fd(&term, &vec![0.0; xg.len()], 0.0, &m, &cfg).unwrap();
        for s in w.sections() {
            for (k, &q) in qg.points().iter().enumerate() {
                assert!((s.value(k) - q).abs() < 1e-9);
            }
        }
        assert!(v1.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn superhedge_put_close_to_black_scholes() {
        let m = MarketModel::lognormal(0.25, 0.2).unwrap();
        let xg = Grid1D::log_uniform_around(30.0, 4.0, 201).unwrap();
        let g: Vec<f64> = xg.points().iter().map(|x| (30.0 - x).max(0.0)).collect();
        let v = superhedge_fd(&xg, &g, 0.0, 1.0, &m, &PropagatorConfig::default()).unwrap();
        for (i, &x) in xg.points().iter().enumerate() {
            if (15.0..=60.0).contains(&x) {
                let bs = normal::bs_put(x, 30.0, 0.25, 1.0);
                assert!((v[i] - bs).abs() < 5e-3 * bs.max(0.1), "x {x}: {} vs {bs}", v[i]);
            }
        }
    }

    #[test]
    fn zero_lambda_matches_heat_kernel_quadrature() {
        let m = MarketModel::lognormal(0.25, 0.0).unwrap();
        let xg = Grid1D::log_uniform_around(30.0, 4.0, 101).unwrap();
        let qg = Grid1D::uniform(0.0, 200.0, 101).unwrap();
        let put = |x: f64| (30.0 - x).max(0.0);
        let term = slice(&xg, &qg, 1.0 / 3.0, |x, q| (q - put(x)).max(0.0));
        let g: Vec<f64> = xg.points().iter().map(|&x| put(x)).collect();
        let cfg = PropagatorConfig { fd_steps: 100, ..Default::default() };
        let (w, _, _) = propagate_fd(&term, &g, 0.0, &m, &cfg).unwrap();
        let quad = propagate_quadrature(&term, &term.x_grid, 0.0, &m, &cfg).unwrap();
        for j in 25..75 {
            for k in 0..qg.len() {
                assert!((w.value(j, k) - quad.value(j, k)).abs() < 0.05, "{j} {k}");
            }
        }
    }

    #[test]
    fn put_obstacle_period_agrees_with_quadrature() {
        let m = MarketModel::lognormal(0.25, 0.2).unwrap();
        let xg = Grid1D::log_uniform_around(30.0, 4.0, 201).unwrap();
        let q_max = 8.0 * 22.5;
        let qg = Grid1D::uniform(0.0, q_max, 401).unwrap();
        let put = |x: f64| (30.0 - x).max(0.0);
        let term = slice(&xg, &qg, 1.0, |x, q| (q - put(x)).max(0.0));
        let g: Vec<f64> = xg.points().iter().map(|&x| put(x)).collect();
        let cfg = PropagatorConfig::default();
        let (w, v1, rep) = propagate_fd(&term, &g, 2.0 / 3.0, &m, &cfg).unwrap();
        let quad = propagate_quadrature(&term, &term.x_grid, 2.0 / 3.0, &m, &cfg).unwrap();
        let sh = superhedge_quadrature(&xg, &g, &xg, 2.0 / 3.0, 1.0, &m, &cfg).unwrap();
        let mut worst = 0.0_f64;
        for j in 20..181 {
            for k in 0..qg.len() {
                worst = worst.max((w.value(j, k) - quad.value(j, k)).abs());
            }
            if j >= 40 {
                assert!((v1[j] - sh[j]).abs() < 2e-3, "{j}: {} vs {}", v1[j], sh[j]);
            }
        }
        eprintln!("fd vs quadrature: {worst:e}, projection removed {:e}", rep.convexity_removed);
        assert!(worst < 5e-3 * q_max, "worst {worst}, projection {}", rep.convexity_removed);
    }
}
