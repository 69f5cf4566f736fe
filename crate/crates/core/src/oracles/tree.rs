//! Exact primal and dual quantile-hedging values on a recombining binomial tree.
//!
//! Between steps the primal value is the infimal convolution of the branch
//! values rescaled by the branch probabilities; at exercise dates it is
//! replaced by `co(max(v, l 1_{(0,1]}))`. The dual value follows
//! `w(node, q) = sum_b piQ_b f_b(q LR_b)` with the conjugate obstacle at
//! exercise dates. Both recursions are carried out on piecewise-linear
//! functions with all kinks retained, so they are exact up to rounding.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convex::{fenchel_transform, ConvexProfile, FunctionSamples, Grid1D, Tail};
use crate::dual::{breakpoint_grid, facelift_params, obstacle_section_decomposed};
use crate::error::{Error, Result};
use crate::market::{ExerciseSchedule, Payoff};

/// Recombining binomial model with branch `0 = up`, `1 = down`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub steps_per_period: usize,
    pub up: f64,
    pub down: f64,
    pub pi_p: [f64; 2],
    pub pi_q: [f64; 2],
    /// `pi_p / pi_q` per branch.
    pub lr: [f64; 2],
}

impl TreeModel {
    pub fn new(steps_per_period: usize, up: f64, down: f64, pi_p_up: f64) -> Result<Self> {
        if steps_per_period == 0 {
            return Err(Error::InvalidInput("at least one step per period".into()));
        }
        if !(down > 0.0 && down < 1.0 && up > 1.0) {
            return Err(Error::InvalidInput(format!("need 0 < down < 1 < up, got {down}, {up}")));
        }
        let q_up = (1.0 - down) / (up - down);
        if !(pi_p_up > 0.0 && pi_p_up < 1.0) {
            return Err(Error::InvalidInput(format!("physical up probability {pi_p_up} not in (0,1)")));
        }
        let pi_p = [pi_p_up, 1.0 - pi_p_up];
        let pi_q = [q_up, 1.0 - q_up];
        Ok(Self {
            steps_per_period,
            up,
            down,
            pi_p,
            pi_q,
            lr: [pi_p[0] / pi_q[0], pi_p[1] / pi_q[1]],
        })
    }

    /// `up = exp(vol sqrt(dt))`, `down = 1/up`, martingale `piQ`, and `piP`
    /// matching the drift `vol * lambda`.
    pub fn calibrate(vol: f64, lambda: f64, period: f64, steps_per_period: usize) -> Result<Self> {
        if !(vol > 0.0) || !(period > 0.0) || steps_per_period == 0 {
            return Err(Error::InvalidInput("tree needs vol > 0, period > 0 and steps > 0".into()));
        }
        let dt = period / steps_per_period as f64;
        let up = (vol * dt.sqrt()).exp();
        let down = 1.0 / up;
        let p_up = ((vol * lambda * dt).exp() - down) / (up - down);
        Self::new(steps_per_period, up, down, p_up)
    }

    pub fn node_x(&self, x0: f64, step: usize, j: usize) -> f64 {
        x0 * self.up.powi(j as i32) * self.down.powi((step - j) as i32)
    }
}

/// Convex piecewise-linear function through its vertices.
#[derive(Clone, Debug, PartialEq)]
struct Pwl {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Pwl {
    fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let i = self.x.partition_point(|&v| v <= t).clamp(1, n - 1) - 1;
        let (x0, x1) = (self.x[i], self.x[i + 1]);
        self.y[i] + (self.y[i + 1] - self.y[i]) * (t - x0) / (x1 - x0)
    }
}

fn lower_hull(mut pts: Vec<(f64, f64)>) -> Pwl {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup_by(|b, a| a.0 == b.0);
    let mut h: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for p in pts {
        while h.len() >= 2 {
            let (a, b) = (h[h.len() - 2], h[h.len() - 1]);
            if (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0) <= 0.0 {
                h.pop();
            } else {
                break;
            }
        }
        h.push(p);
    }
    Pwl {
        x: h.iter().map(|p| p.0).collect(),
        y: h.iter().map(|p| p.1).collect(),
    }
}

/// Infimal convolution of convex functions on `[0, a]` and `[0, b]`.
fn inf_convolution(f: &Pwl, g: &Pwl) -> Pwl {
    let mut segs: Vec<(f64, f64)> = [f, g]
        .iter()
        .flat_map(|h| h.x.windows(2).zip(h.y.windows(2)).map(|(x, y)| (x[1] - x[0], y[1] - y[0])))
        .collect();
    segs.sort_by(|a, b| (a.1 / a.0).total_cmp(&(b.1 / b.0)));
    let mut x = vec![0.0];
    let mut y = vec![f.y[0] + g.y[0]];
    for (dx, dy) in segs {
        x.push(x[x.len() - 1] + dx);
        y.push(y[y.len() - 1] + dy);
    }
    Pwl { x, y }
}

/// `co(max(v, l 1_{(0,1]}))` on `[0, 1]`.
fn primal_obstacle(v: &Pwl, ell: f64) -> Pwl {
    let mut pts = vec![(0.0, 0.0)];
    for i in 0..v.x.len() {
        if i > 0 {
            let (a, b) = (v.y[i - 1] - ell, v.y[i] - ell);
            if (a < 0.0 && b > 0.0) || (a > 0.0 && b < 0.0) {
                pts.push((v.x[i - 1] + a / (a - b) * (v.x[i] - v.x[i - 1]), ell));
            }
        }
        if v.x[i] > 0.0 {
            pts.push((v.x[i], v.y[i].max(ell)));
        }
    }
    lower_hull(pts)
}

fn primal_step(tree: &TreeModel, up: &Pwl, down: &Pwl) -> Pwl {
    let scale = |v: &Pwl, b: usize| Pwl {
        x: v.x.iter().map(|x| x * tree.pi_p[b]).collect(),
        y: v.y.iter().map(|y| y * tree.pi_q[b]).collect(),
    };
    let mut out = inf_convolution(&scale(up, 0), &scale(down, 1));
    *out.x.last_mut().unwrap() = 1.0;
    out
}

fn check_tree_inputs(schedule: &ExerciseSchedule, payoff: &Payoff, x0: f64) -> Result<()> {
    let d = schedule.dates();
    let h = d[1] - d[0];
    if d.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-12 * h.max(1.0)) || !(h > 0.0) {
        return Err(Error::InvalidInput("tree oracle needs equally spaced exercise dates".into()));
    }
    if !(x0 > 0.0) {
        return Err(Error::InvalidInput(format!("tree root {x0} must be positive")));
    }
    if payoff.eval(1, x0) < 0.0 {
        return Err(Error::NegativePayoff { value: payoff.eval(1, x0) });
    }
    Ok(())
}

/// Exercise date index at a tree step, if any.
fn exercise_at(tree: &TreeModel, step: usize) -> Option<usize> {
    (step > 0 && step % tree.steps_per_period == 0).then(|| step / tree.steps_per_period)
}

/// Node values of a tree recursion: `values[step][j][k]` with `j` the number
/// of up moves and `k` the axis index.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeSurface {
    pub grid: Grid1D,
    pub values: Vec<Vec<Vec<f64>>>,
}

impl TreeSurface {
    pub fn root(&self) -> &[f64] {
        &self.values[0][0]
    }
}

fn primal_pwl(tree: &TreeModel, schedule: &ExerciseSchedule, payoff: &Payoff, x0: f64) -> Result<Vec<Vec<Pwl>>> {
    check_tree_inputs(schedule, payoff, x0)?;
    let n = schedule.periods() * tree.steps_per_period;
    let zero = Pwl { x: vec![0.0, 1.0], y: vec![0.0, 0.0] };
    let mut out: Vec<Vec<Pwl>> = vec![Vec::new(); n + 1];
    out[n] = (0..=n)
        .map(|j| primal_obstacle(&zero, payoff.eval(schedule.periods(), tree.node_x(x0, n, j))))
        .collect();
    for k in (0..n).rev() {
        let next = &out[k + 1];
        let row: Vec<Pwl> = (0..=k)
            .into_par_iter()
            .map(|j| {
                let v = primal_step(tree, &next[j + 1], &next[j]);
                match exercise_at(tree, k) {
                    Some(i) => primal_obstacle(&v, payoff.eval(i, tree.node_x(x0, k, j))),
                    None => v,
                }
            })
            .collect();
        out[k] = row;
    }
    Ok(out)
}

/// Continuation values `v(node, p)` by the convexified primal recursion.
/// At exercise steps the stored value is the one before the obstacle.
pub fn tree_primal_dpp(
    tree: &TreeModel,
    schedule: &ExerciseSchedule,
    payoff: &Payoff,
    x0: f64,
    p_grid: &Grid1D,
) -> Result<TreeSurface> {
    let p = p_grid.points();
    if p[0] != 0.0 || p[p.len() - 1] != 1.0 {
        return Err(Error::InvalidGrid("tree p-grid must span [0, 1]".into()));
    }
    let pw = continuation_primal(tree, schedule, payoff, x0)?;
    Ok(TreeSurface {
        grid: p_grid.clone(),
        values: pw
            .iter()
            .map(|row| row.iter().map(|v| p.iter().map(|&p| v.eval(p)).collect()).collect())
            .collect(),
    })
}

fn continuation_primal(tree: &TreeModel, schedule: &ExerciseSchedule, payoff: &Payoff, x0: f64) -> Result<Vec<Vec<Pwl>>> {
    check_tree_inputs(schedule, payoff, x0)?;
    let n = schedule.periods() * tree.steps_per_period;
    let post = primal_pwl(tree, schedule, payoff, x0)?;
    let zero = Pwl { x: vec![0.0, 1.0], y: vec![0.0, 0.0] };
    Ok((0..=n)
        .map(|k| {
            (0..=k)
                .map(|j| {
                    if k == n {
                        zero.clone()
                    } else if exercise_at(tree, k).is_some() {
                        primal_step(tree, &post[k + 1][j + 1], &post[k + 1][j])
                    } else {
                        post[k][j].clone()
                    }
                })
                .collect()
        })
        .collect())
}

fn merge_points(mut q: Vec<f64>) -> Vec<f64> {
    q.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(q.len());
    for v in q {
        match out.last() {
            Some(&l) if v - l <= 1e-13 * v.abs().max(1.0) => {}
            _ => out.push(v),
        }
    }
    out
}

fn profile_on(points: Vec<f64>, f: impl Fn(f64) -> f64) -> Result<ConvexProfile> {
    let grid = Grid1D::new(points)?;
    let vals = grid.points().iter().map(|&q| f(q)).collect();
    Ok(ConvexProfile::new_unchecked(FunctionSamples::new(
        grid,
        vals,
        Tail::PlusInfinity,
        Tail::Linear { slope: 1.0 },
    )?))
}

/// `(w# v l)#` on a grid extended by the new kinks `l` and `q_l`.
fn dual_obstacle(w: &ConvexProfile, ell: f64) -> Result<ConvexProfile> {
    let fp = facelift_params(&fenchel_transform(w, &breakpoint_grid(w)?)?, ell)?;
    let mut q = w.grid().points().to_vec();
    let top = q[q.len() - 1];
    q.extend([ell, fp.q_ell].into_iter().filter(|v| v.is_finite() && *v > 0.0));
    q.push(2.0 * top.max(ell).max(fp.q_ell) + 1.0);
    let ext = profile_on(merge_points(q), |v| w.eval(v))?;
    Ok(obstacle_section_decomposed(&ext, ell)?.0)
}

fn dual_step(tree: &TreeModel, up: &ConvexProfile, down: &ConvexProfile) -> Result<ConvexProfile> {
    let mut q: Vec<f64> = up.grid().points().iter().map(|g| g / tree.lr[0]).collect();
    q.extend(down.grid().points().iter().map(|g| g / tree.lr[1]));
    profile_on(merge_points(q), |v| {
        tree.pi_q[0] * up.eval(v * tree.lr[0]) + tree.pi_q[1] * down.eval(v * tree.lr[1])
    })
}

/// Exact dual tree values: continuation profiles per node, each on a grid
/// containing all of its kinks.
#[derive(Clone, Debug)]
pub struct TreeDual {
    pub profiles: Vec<Vec<ConvexProfile>>,
}

impl TreeDual {
    pub fn on_grid(&self, q_grid: &Grid1D) -> TreeSurface {
        TreeSurface {
            grid: q_grid.clone(),
            values: self
                .profiles
                .iter()
                .map(|row| row.iter().map(|w| q_grid.points().iter().map(|&q| w.eval(q)).collect()).collect())
                .collect(),
        }
    }
}

pub fn tree_dual_exact(tree: &TreeModel, schedule: &ExerciseSchedule, payoff: &Payoff, x0: f64) -> Result<TreeDual> {
    check_tree_inputs(schedule, payoff, x0)?;
    let n = schedule.periods() * tree.steps_per_period;
    let identity = profile_on(vec![0.0, 1.0, 2.0], |q| q)?;
    let mut cont: Vec<Vec<ConvexProfile>> = vec![Vec::new(); n + 1];
    cont[n] = vec![identity; n + 1];
    for k in (0..n).rev() {
        let post: Vec<ConvexProfile> = (0..=k + 1)
            .into_par_iter()
            .map(|j| match exercise_at(tree, k + 1) {
                Some(i) => dual_obstacle(&cont[k + 1][j], payoff.eval(i, tree.node_x(x0, k + 1, j))),
                None => Ok(cont[k + 1][j].clone()),
            })
            .collect::<Result<Vec<_>>>()?;
        cont[k] = (0..=k)
            .into_par_iter()
            .map(|j| dual_step(tree, &post[j + 1], &post[j]))
            .collect::<Result<Vec<_>>>()?;
    }
    Ok(TreeDual { profiles: cont })
}

/// Continuation `w(node, q)` sampled on `q_grid`.
pub fn tree_dual(
    tree: &TreeModel,
    schedule: &ExerciseSchedule,
    payoff: &Payoff,
    x0: f64,
    q_grid: &Grid1D,
) -> Result<TreeSurface> {
    Ok(tree_dual_exact(tree, schedule, payoff, x0)?.on_grid(q_grid))
}

/// Plain Bermudan superhedge on the tree, continuation values per node.
pub fn tree_superhedge(tree: &TreeModel, schedule: &ExerciseSchedule, payoff: &Payoff, x0: f64) -> Result<Vec<Vec<f64>>> {
    check_tree_inputs(schedule, payoff, x0)?;
    let n = schedule.periods() * tree.steps_per_period;
    let mut cont = vec![Vec::new(); n + 1];
    cont[n] = vec![0.0; n + 1];
    for k in (0..n).rev() {
        let g: Vec<f64> = (0..=k + 1)
            .map(|j| {
                let c: f64 = cont[k + 1][j];
                match exercise_at(tree, k + 1) {
                    Some(i) => c.max(payoff.eval(i, tree.node_x(x0, k + 1, j))),
                    None => c,
                }
            })
            .collect();
        cont[k] = (0..=k).map(|j| tree.pi_q[0] * g[j + 1] + tree.pi_q[1] * g[j]).collect();
    }
    Ok(cont)
}

/// Outcome of the tree duality check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeDualityReport {
    /// Largest `|v - w#|` over nodes and p-grid points.
    pub max_gap: f64,
    /// Root superhedge price.
    pub price_scale: f64,
    pub nodes: usize,
}

/// Compares the primal recursion with the conjugate of the dual recursion at
/// every node of the tree.
pub fn tree_duality_check(
    tree: &TreeModel,
    schedule: &ExerciseSchedule,
    payoff: &Payoff,
    x0: f64,
    p_grid: &Grid1D,
) -> Result<TreeDualityReport> {
    let primal = tree_primal_dpp(tree, schedule, payoff, x0, p_grid)?;
    let dual = tree_dual_exact(tree, schedule, payoff, x0)?;
    let mut max_gap = 0.0_f64;
    let mut nodes = 0;
    for (vrow, wrow) in primal.values.iter().zip(&dual.profiles) {
        for (v, w) in vrow.iter().zip(wrow) {
            let ws = fenchel_transform(w, p_grid)?;
            for (k, &vk) in v.iter().enumerate() {
                max_gap = max_gap.max((vk - ws.value(k)).abs());
            }
            nodes += 1;
        }
    }
    let price_scale = tree_superhedge(tree, schedule, payoff, x0)?[0][0];
    Ok(TreeDualityReport {
        max_gap,
        price_scale,
        nodes,
    })
}

/// Randomised Neyman-Pearson value `min E^Q[l 1_A]` over success tests of
/// physical probability at least `p`, by enumerating every subset of the
/// scenarios and taking the lower convex envelope.
pub fn neyman_pearson_value(pi_p: &[f64], pi_q: &[f64], payoff: &[f64], p: f64) -> Result<f64> {
    let n = pi_p.len();
    if n == 0 || n > 20 || pi_q.len() != n || payoff.len() != n {
        return Err(Error::InvalidInput("between 1 and 20 scenarios of matching length".into()));
    }
    let pts: Vec<(f64, f64)> = (0u32..1 << n)
        .map(|mask| {
            (0..n)
                .filter(|i| mask >> i & 1 == 1)
                .fold((0.0, 0.0), |(a, b), i| (a + pi_p[i], b + pi_q[i] * payoff[i]))
        })
        .collect();
    let hull = lower_hull(pts);
    Ok(hull.eval(p.clamp(0.0, hull.x[hull.x.len() - 1])))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched(n: usize) -> ExerciseSchedule {
        ExerciseSchedule::uniform(1.0, n).unwrap()
    }

    #[test]
    fn calibration_is_martingale() {
        let t = TreeModel::calibrate(0.25, 0.2, 1.0 / 3.0, 4).unwrap();
        assert!((t.pi_q[0] * t.up + t.pi_q[1] * t.down - 1.0).abs() < 1e-15);
        assert!((t.pi_q[0] * t.lr[0] + t.pi_q[1] * t.lr[1] - 1.0).abs() < 1e-15);
        assert!(t.pi_p[0] > t.pi_q[0]);
        assert!(TreeModel::new(2, 0.9, 0.8, 0.5).is_err());
    }

    #[test]
    fn zero_payoff_gives_zero_primal_and_identity_dual() {
        let t = TreeModel::calibrate(0.25, 0.2, 0.5, 2).unwrap();
        let g = Grid1D::uniform(0.0, 1.0, 11).unwrap();
        let v = tree_primal_dpp(&t, &sched(2), &Payoff::Zero, 30.0, &g).unwrap();
        assert!(v.values.iter().flatten().flatten().all(|v| v.abs() < 1e-15));
        let q = Grid1D::uniform(0.0, 5.0, 11).unwrap();
        let w = tree_dual(&t, &sched(2), &Payoff::Zero, 30.0, &q).unwrap();
        for row in w.values.iter().flatten() {
            for (a, b) in row.iter().zip(q.points()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn terminal_dual_is_exchange_sum() {
        let t = TreeModel::calibrate(0.25, 0.2, 1.0, 1).unwrap();
        let put = Payoff::put(30.0).unwrap();
        let q = Grid1D::uniform(0.0, 20.0, 41).unwrap();
        let w = tree_dual(&t, &sched(1), &put, 30.0, &q).unwrap();
        for (k, &qq) in q.points().iter().enumerate() {
            let want: f64 = (0..2)
                .map(|b| {
                    let x = if b == 0 { 30.0 * t.up } else { 30.0 * t.down };
                    t.pi_q[b] * (qq * t.lr[b] - put.eval(1, x)).max(0.0)
                })
                .sum();
            assert!((w.values[0][0][k] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn one_step_primal_matches_neyman_pearson() {
        let put = Payoff::put(30.0).unwrap();
        let g = Grid1D::uniform(0.0, 1.0, 41).unwrap();
        for steps in [1usize, 4] {
            let t = TreeModel::calibrate(0.25, 0.2, 1.0, steps).unwrap();
            let v = tree_primal_dpp(&t, &sched(1), &put, 30.0, &g).unwrap();
            let mut pp = Vec::new();
            let mut pq = Vec::new();
            let mut pay = Vec::new();
            for path in 0u32..1 << steps {
                let ups = path.count_ones() as usize;
                let downs = steps - ups;
                pp.push(t.pi_p[0].powi(ups as i32) * t.pi_p[1].powi(downs as i32));
                pq.push(t.pi_q[0].powi(ups as i32) * t.pi_q[1].powi(downs as i32));
                pay.push(put.eval(1, t.node_x(30.0, steps, ups)));
            }
            for (k, &p) in g.points().iter().enumerate() {
                let np = neyman_pearson_value(&pp, &pq, &pay, p).unwrap();
                assert!((v.root()[k] - np).abs() < 1e-12, "steps {steps}, p {p}: {} vs {np}", v.root()[k]);
            }
        }
    }

    #[test]
    fn primal_edges_and_duality() {
        let t = TreeModel::calibrate(0.25, 0.2, 1.0 / 3.0, 4).unwrap();
        let spread = Payoff::put_spread(20.0, 30.0).unwrap();
        let g = Grid1D::uniform(0.0, 1.0, 101).unwrap();
        let v = tree_primal_dpp(&t, &sched(3), &spread, 30.0, &g).unwrap();
        let sup = tree_superhedge(&t, &sched(3), &spread, 30.0).unwrap();
        for (row, srow) in v.values.iter().zip(&sup) {
            for (node, s) in row.iter().zip(srow) {
                assert_eq!(node[0], 0.0);
                assert!((node[100] - s).abs() < 1e-12);
            }
        }
        let r = tree_duality_check(&t, &sched(3), &spread, 30.0, &g).unwrap();
        assert!(r.max_gap <= 1e-9 * r.price_scale, "{r:?}");
        assert_eq!(r.nodes, (1..=13).sum::<usize>());
    }
}
