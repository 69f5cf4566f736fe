//! The exercise-date obstacle acting on the dual value: from `w(t_{i+1},x,.)`
//! produce `(w# v l)#` and `co(w# v l)`, by a facelift decomposition and by a
//! literal double conjugation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convex::{
    convexity_violation, fenchel_transform, right_derivative, ConvexProfile, FunctionSamples,
    Grid1D, Tail,
};
use crate::error::{Error, Result};

/// Which variable the second axis of a slice carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    /// `q`, the dual (currency) variable of `w`.
    DualQ,
    /// `p`, the success probability of `v`.
    PrimalP,
}

/// Values on an `(x, axis)` tensor grid at one time, one convex profile per
/// `x` node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueSlice {
    pub time: f64,
    pub x_grid: Grid1D,
    pub axis_grid: Grid1D,
    pub axis: Axis,
    sections: Vec<ConvexProfile>,
}

impl ValueSlice {
    pub fn new(
        time: f64,
        x_grid: Grid1D,
        axis: Axis,
        sections: Vec<ConvexProfile>,
    ) -> Result<Self> {
        if sections.len() != x_grid.len() {
            return Err(Error::InvalidInput(format!(
                "{} sections for {} x nodes",
                sections.len(),
                x_grid.len()
            )));
        }
        let axis_grid = sections[0].grid().clone();
        if sections.iter().any(|s| s.grid() != &axis_grid) {
            return Err(Error::InvalidInput("sections use different axis grids".into()));
        }
        Ok(Self {
            time,
            x_grid,
            axis_grid,
            axis,
            sections,
        })
    }

    /// Builds and validates every section from raw rows.
    #[allow(clippy::too_many_arguments)]
    pub fn from_rows(
        time: f64,
        x_grid: Grid1D,
        axis_grid: Grid1D,
        axis: Axis,
        rows: Vec<Vec<f64>>,
        left: Tail,
        right: Tail,
        rel_eps: f64,
    ) -> Result<Self> {
        let sections = rows
            .into_iter()
            .map(|r| {
                ConvexProfile::new(FunctionSamples::new(axis_grid.clone(), r, left, right)?, rel_eps)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(time, x_grid, axis, sections)
    }

    pub fn sections(&self) -> &[ConvexProfile] {
        &self.sections
    }

    pub fn section(&self, ix: usize) -> &ConvexProfile {
        &self.sections[ix]
    }

    pub fn value(&self, ix: usize, ia: usize) -> f64 {
        self.sections[ix].value(ia)
    }

    /// Row-major `values[ix][ia]`.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.sections.iter().map(|s| s.to_vec()).collect()
    }

    /// Sections at the nodes of `grid`, linear in `ln x` between nodes of
    /// this slice and flat beyond them.
    pub fn resample_x(&self, grid: &Grid1D) -> Result<Self> {
        let ln: Vec<f64> = self.x_grid.points().iter().map(|x| x.ln()).collect();
        let pts = self.x_grid.points();
        let sections = grid
            .points()
            .iter()
            .map(|&x| {
                if let Some(i) = self.x_grid.index_of(x) {
                    return Ok(self.sections[i].clone());
                }
                let n = pts.len();
                if x <= pts[0] {
                    return Ok(self.sections[0].clone());
                }
                if x >= pts[n - 1] {
                    return Ok(self.sections[n - 1].clone());
                }
                let c = self.x_grid.cell(x);
                let r = (x.ln() - ln[c]) / (ln[c + 1] - ln[c]);
                let (a, b) = (&self.sections[c], &self.sections[c + 1]);
                let values = (0..self.axis_grid.len())
                    .map(|k| {
                        let (u, v) = (a.value(k), b.value(k));
                        if u.is_finite() && v.is_finite() {
                            u + r * (v - u)
                        } else {
                            f64::INFINITY
                        }
                    })
                    .collect();
                FunctionSamples::new(self.axis_grid.clone(), values, a.left_tail(), a.right_tail())
                    .map(ConvexProfile::new_unchecked)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.time, grid.clone(), self.axis, sections)
    }

    /// The sections at the nodes of `grid`, each of which must be a node of
    /// this slice.
    pub fn restrict_x(&self, grid: &Grid1D) -> Result<Self> {
        let sections = grid
            .points()
            .iter()
            .map(|&x| {
                self.x_grid
                    .index_of(x)
                    .map(|i| self.sections[i].clone())
                    .ok_or_else(|| Error::InvalidGrid(format!("x = {x} is not a node of the slice")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.time, grid.clone(), self.axis, sections)
    }

    /// Largest finite absolute value, at least one.
    pub fn scale(&self) -> f64 {
        self.sections
            .iter()
            .fold(1.0_f64, |m, s| m.max(s.samples().scale()))
    }

    /// Largest absolute node-wise difference between two slices on the same
    /// grids; `+inf` where the finite domains differ.
    pub fn max_abs_diff(&self, other: &ValueSlice) -> f64 {
        let mut m = 0.0_f64;
        for (a, b) in self.sections.iter().zip(&other.sections) {
            for i in 0..a.len() {
                let (u, v) = (a.value(i), b.value(i));
                let d = if u.is_finite() && v.is_finite() {
                    (u - v).abs()
                } else if u == v {
                    0.0
                } else {
                    f64::INFINITY
                };
                m = m.max(d);
            }
        }
        m
    }
}

/// Face of the exercise region, see [`FaceliftParams`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    /// `l > 0` and `v(.,1) <= l`: the payoff dominates every success level.
    A1,
    /// `l = 0`: the obstacle is inactive.
    A2,
    /// `l > 0` and `v(.,1) > l`.
    A3,
}

/// Decomposition data of `co(w# v l)` at one `(t, x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceliftParams {
    pub p_ell: f64,
    pub q_ell: f64,
    /// May be `+inf`, stored as such (serialised as `null` in JSON).
    pub q_bar: f64,
    pub region: Region,
}

/// Computes `(p_l, q_l, q_bar, region)` from `w#(t,x,.)` sampled on a grid
/// covering `[0, 1]`.
pub fn facelift_params(wsharp: &ConvexProfile, ell: f64) -> Result<FaceliftParams> {
    if !(ell >= 0.0) {
        return Err(Error::NegativePayoff { value: ell });
    }
    let pts = wsharp.grid().points();
    let idx: Vec<usize> = (0..pts.len())
        .filter(|&i| pts[i] >= 0.0 && pts[i] <= 1.0)
        .collect();
    if idx.is_empty() || pts[idx[0]] != 0.0 || pts[*idx.last().unwrap()] != 1.0 {
        return Err(Error::InvalidGrid("p-grid must contain 0 and 1".into()));
    }
    let vals: Vec<f64> = idx.iter().map(|&i| wsharp.value(i)).collect();
    if let Some(k) = vals.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonMonotone { index: idx[k] });
    }
    if let Some(k) = (1..vals.len()).find(|&k| vals[k] < vals[k - 1]) {
        return Err(Error::NonMonotone { index: idx[k] });
    }
    if ell == 0.0 {
        return Ok(FaceliftParams {
            p_ell: 0.0,
            q_ell: 0.0,
            q_bar: f64::INFINITY,
            region: Region::A2,
        });
    }
    let last = vals.len() - 1;
    if vals[last] <= ell {
        return Ok(FaceliftParams {
            p_ell: 1.0,
            q_ell: ell,
            q_bar: right_derivative(wsharp, 1.0)?,
            region: Region::A1,
        });
    }
    // vals[0] = w#(0) = 0 < l < vals[last]
    let j = vals.iter().rposition(|&v| v <= ell).ok_or(Error::NonMonotone { index: 0 })?;
    let (p0, p1) = (pts[idx[j]], pts[idx[j + 1]]);
    let (v0, v1) = (vals[j], vals[j + 1]);
    let p_ell = if v0 == ell {
        p0
    } else {
        p0 + (ell - v0) / (v1 - v0) * (p1 - p0)
    };
    let q_bar = right_derivative(wsharp, p_ell)?;
    Ok(FaceliftParams {
        p_ell,
        q_ell: ell / p_ell,
        q_bar,
        region: Region::A3,
    })
}

/// p-grid on which `w#` is exactly piecewise linear: `0`, the cell slopes of
/// `w` strictly inside `(0, 1)`, and `1`.
pub fn breakpoint_grid(w: &ConvexProfile) -> Result<Grid1D> {
    let q = w.grid().points();
    let mut p = vec![0.0, 1.0];
    for i in 0..q.len() - 1 {
        if let (Some(a), Some(b)) = (w.get(i), w.get(i + 1)) {
            let s = (b - a) / (q[i + 1] - q[i]);
            if s > 0.0 && s < 1.0 {
                p.push(s);
            }
        }
    }
    p.sort_by(f64::total_cmp);
    p.dedup();
    if p.len() < 3 {
        p.insert(1, 0.5);
    }
    Grid1D::new(p)
}

fn check_dual_input(w: &ConvexProfile) -> Result<()> {
    let q = w.grid().points();
    if q[0] != 0.0 {
        return Err(Error::InvalidGrid("q-grid must start at 0".into()));
    }
    if (0..w.len()).any(|i| !w.samples().is_finite_at(i)) {
        return Err(Error::InvalidInput("w must be finite on the q-grid".into()));
    }
    Ok(())
}

/// `(w# v l)#` on `w`'s q-grid through the facelift decomposition.
pub fn obstacle_section_decomposed(
    w: &ConvexProfile,
    ell: f64,
) -> Result<(ConvexProfile, FaceliftParams)> {
    check_dual_input(w)?;
    let wsharp = fenchel_transform(w, &breakpoint_grid(w)?)?;
    let fp = facelift_params(&wsharp, ell)?;
    let q = w.grid().points();
    let out: Vec<f64> = match fp.region {
        Region::A2 => return Ok((w.clone(), fp)),
        Region::A1 => q.iter().map(|&q| (q - ell).max(0.0)).collect(),
        Region::A3 => q
            .iter()
            .enumerate()
            .map(|(i, &qq)| {
                if qq <= fp.q_bar {
                    fp.p_ell * (qq - fp.q_ell).max(0.0)
                } else {
                    w.value(i)
                }
            })
            .collect(),
    };
    let s = FunctionSamples::new(
        w.grid().clone(),
        out,
        Tail::PlusInfinity,
        Tail::Linear { slope: 1.0 },
    )?;
    Ok((ConvexProfile::new_unchecked(s), fp))
}

/// `max(w#, l)` on `[0, 1]` with the crossings of `w#` and `l` inserted, so
/// the samples are exactly piecewise linear.
fn obstacle_max_on_unit(w: &ConvexProfile, ell: f64) -> Result<FunctionSamples> {
    let grid = breakpoint_grid(w)?;
    let ws = fenchel_transform(w, &grid)?;
    let p = grid.points();
    let mut pts = vec![p[0]];
    let mut vals = vec![ws.value(0).max(ell)];
    for i in 1..p.len() {
        let (a, b) = (ws.value(i - 1) - ell, ws.value(i) - ell);
        if (a < 0.0 && b > 0.0) || (a > 0.0 && b < 0.0) {
            let pc = p[i - 1] + a / (a - b) * (p[i] - p[i - 1]);
            if pc > pts[pts.len() - 1] && pc < p[i] {
                pts.push(pc);
                vals.push(ell);
            }
        }
        pts.push(p[i]);
        vals.push(ws.value(i).max(ell));
    }
    FunctionSamples::new(Grid1D::new(pts)?, vals, Tail::PlusInfinity, Tail::PlusInfinity)
}

/// `(w# v l)#` on `w`'s q-grid by conjugating `w`, taking the maximum with
/// `l 1_{(0,1]}` and conjugating back.
pub fn obstacle_section_direct(w: &ConvexProfile, ell: f64) -> Result<ConvexProfile> {
    check_dual_input(w)?;
    if !(ell >= 0.0) {
        return Err(Error::NegativePayoff { value: ell });
    }
    // the point p = 0 keeps value w#(0) = 0 and p < 0 carries the constant
    // left tail of w#, so only (0, 1] sees l
    let unit = obstacle_max_on_unit(w, ell)?;
    let upper = fenchel_transform(&unit, w.grid())?;
    let out: Vec<f64> = (0..w.len()).map(|i| upper.value(i).max(0.0)).collect();
    let s = FunctionSamples::new(
        w.grid().clone(),
        out,
        Tail::PlusInfinity,
        Tail::Linear { slope: 1.0 },
    )?;
    Ok(ConvexProfile::new_unchecked(s))
}

/// `co(w# v l) = max(w#, q_l p)` on `p_grid` (which must cover `[0, 1]`);
/// `+inf` beyond 1.
pub fn convexified_section(
    w: &ConvexProfile,
    ell: f64,
    p_grid: &Grid1D,
) -> Result<(ConvexProfile, FaceliftParams)> {
    check_dual_input(w)?;
    let fp = facelift_params(&fenchel_transform(w, &breakpoint_grid(w)?)?, ell)?;
    let ws = fenchel_transform(w, p_grid)?;
    let out: Vec<f64> = p_grid
        .points()
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            if p > 1.0 {
                f64::INFINITY
            } else if p < 0.0 {
                ws.value(i)
            } else {
                ws.value(i).max(fp.q_ell * p)
            }
        })
        .collect();
    let s = FunctionSamples::new(p_grid.clone(), out, ws.left_tail(), Tail::PlusInfinity)?;
    Ok((ConvexProfile::new_unchecked(s), fp))
}

fn check_lengths(w: &ValueSlice, ell: &[f64]) -> Result<()> {
    if w.axis != Axis::DualQ {
        return Err(Error::InvalidInput("obstacle needs a dual-q slice".into()));
    }
    if ell.len() != w.x_grid.len() {
        return Err(Error::InvalidInput(format!(
            "{} payoff values for {} x nodes",
            ell.len(),
            w.x_grid.len()
        )));
    }
    Ok(())
}

/// Slice version of [`obstacle_section_decomposed`]; `ell[ix] = l(t, x_ix)`.
pub fn conjugate_obstacle_decomposed(
    w: &ValueSlice,
    ell: &[f64],
) -> Result<(ValueSlice, Vec<FaceliftParams>)> {
    check_lengths(w, ell)?;
    let (sections, params): (Vec<_>, Vec<_>) = w
        .sections()
        .par_iter()
        .zip(ell)
        .map(|(s, &l)| obstacle_section_decomposed(s, l))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Ok((ValueSlice::new(w.time, w.x_grid.clone(), Axis::DualQ, sections)?, params))
}

/// Slice version of [`obstacle_section_direct`].
pub fn conjugate_obstacle_direct(w: &ValueSlice, ell: &[f64]) -> Result<ValueSlice> {
    check_lengths(w, ell)?;
    let sections = w
        .sections()
        .par_iter()
        .zip(ell)
        .map(|(s, &l)| obstacle_section_direct(s, l))
        .collect::<Result<Vec<_>>>()?;
    ValueSlice::new(w.time, w.x_grid.clone(), Axis::DualQ, sections)
}

/// Slice version of [`convexified_section`], a primal p-slice.
pub fn convexified_obstacle(
    w: &ValueSlice,
    ell: &[f64],
    p_grid: &Grid1D,
) -> Result<(ValueSlice, Vec<FaceliftParams>)> {
    check_lengths(w, ell)?;
    let (sections, params): (Vec<_>, Vec<_>) = w
        .sections()
        .par_iter()
        .zip(ell)
        .map(|(s, &l)| convexified_section(s, l, p_grid))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Ok((ValueSlice::new(w.time, w.x_grid.clone(), Axis::PrimalP, sections)?, params))
}

/// A failed invariant at one node: `(check, axis index, detail)`.
pub type SectionFault = (&'static str, usize, String);

/// Checks a dual q-section: `w(0) = 0`, convex, `0 <= w <= q`, nondecreasing,
/// `q - w` nondecreasing. `tol` is absolute.
pub fn check_dual_section(w: &ConvexProfile, tol: f64) -> std::result::Result<(), SectionFault> {
    let q = w.grid().points();
    let finite = (0..w.len()).all(|i| w.samples().is_finite_at(i));
    if !finite {
        let i = (0..w.len()).find(|&i| !w.samples().is_finite_at(i)).unwrap();
        return Err(("finite", i, "w is +inf on the q-grid".into()));
    }
    if q[0] == 0.0 && w.value(0).abs() > tol {
        return Err(("zero-at-origin", 0, format!("w(0) = {}", w.value(0))));
    }
    if let Some(i) = convexity_violation(w.samples(), tol) {
        return Err(("convex", i, format!("w = {}", w.value(i))));
    }
    for (i, &qq) in q.iter().enumerate() {
        let v = w.value(i);
        if v < -tol || v > qq.max(0.0) + tol {
            return Err(("cone", i, format!("w({qq}) = {v}")));
        }
    }
    for i in 1..q.len() {
        let d = w.value(i) - w.value(i - 1);
        if d < -tol {
            return Err(("nondecreasing", i, format!("w drops by {}", -d)));
        }
        if d > q[i] - q[i - 1] + tol {
            return Err(("q-minus-w-nondecreasing", i, format!("slope {}", d / (q[i] - q[i - 1]))));
        }
    }
    Ok(())
}

/// Checks a primal p-section on `[0, 1]`: `v(0) = 0`, finite, convex,
/// nondecreasing, nonnegative.
pub fn check_primal_section(v: &ConvexProfile, tol: f64) -> std::result::Result<(), SectionFault> {
    let p = v.grid().points();
    for (i, &pp) in p.iter().enumerate() {
        if (0.0..=1.0).contains(&pp) && !v.samples().is_finite_at(i) {
            return Err(("finite", i, format!("v({pp}) = +inf")));
        }
        if pp == 0.0 && v.value(i).abs() > tol {
            return Err(("zero-at-origin", i, format!("v(0) = {}", v.value(i))));
        }
        if v.value(i) < -tol {
            return Err(("nonnegative", i, format!("v({pp}) = {}", v.value(i))));
        }
    }
    if let Some(i) = convexity_violation(v.samples(), tol) {
        return Err(("convex", i, format!("v = {}", v.value(i))));
    }
    for i in 1..p.len() {
        if p[i] <= 1.0 && v.value(i) < v.value(i - 1) - tol {
            return Err(("nondecreasing", i, format!("v drops at p = {}", p[i])));
        }
    }
    Ok(())
}

/// Runs the section checks across a slice; the first failure is reported
/// with its coordinates.
pub fn check_slice(slice: &ValueSlice, tol: f64) -> Result<()> {
    let fault = slice
        .sections()
        .par_iter()
        .enumerate()
        .find_first(|(_, s)| match slice.axis {
            Axis::DualQ => check_dual_section(s, tol).is_err(),
            Axis::PrimalP => check_primal_section(s, tol).is_err(),
        });
    if let Some((ix, s)) = fault {
        let (check, ia, detail) = match slice.axis {
            Axis::DualQ => check_dual_section(s, tol).unwrap_err(),
            Axis::PrimalP => check_primal_section(s, tol).unwrap_err(),
        };
        return Err(Error::InvariantViolation {
            check: check.to_string(),
            time: slice.time,
            x_index: ix,
            axis_index: ia,
            detail,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex::convex_envelope;

    fn profile(grid: &Grid1D, f: impl Fn(f64) -> f64, left: Tail, right: Tail) -> ConvexProfile {
        let v = grid.points().iter().map(|&x| f(x)).collect();
        ConvexProfile::new(FunctionSamples::new(grid.clone(), v, left, right).unwrap(), 1e-9).unwrap()
    }

    /// Dual of `v(p) = c p^2` on [0,1]: `w(q) = q^2/(4c)` up to `q = 2c`, then `q - c`.
    fn quadratic_dual(c: f64, q_max: f64, n: usize) -> ConvexProfile {
        let g = Grid1D::uniform(0.0, q_max, n).unwrap();
        profile(
            &g,
            |q| if q <= 2.0 * c { q * q / (4.0 * c) } else { q - c },
            Tail::PlusInfinity,
            Tail::Linear { slope: 1.0 },
        )
    }

    #[test]
    fn facelift_of_square() {
        let g = Grid1D::uniform(0.0, 1.0, 401).unwrap();
        let ws = profile(&g, |p| p * p, Tail::Constant, Tail::PlusInfinity);
        let fp = facelift_params(&ws, 4.0).unwrap();
        assert_eq!(fp.region, Region::A1);
        let fp = facelift_params(&ws, 0.25).unwrap();
        assert_eq!(fp.region, Region::A3);
        assert!((fp.p_ell - 0.5).abs() < 1e-12);
        assert!((fp.q_ell - 0.5).abs() < 1e-12);
        assert!((fp.q_bar - 1.0).abs() < 5e-3);
        let fp = facelift_params(&ws, 0.0).unwrap();
        assert_eq!((fp.region, fp.p_ell, fp.q_ell), (Region::A2, 0.0, 0.0));
        assert!(facelift_params(&ws, -1.0).is_err());
        let bad = profile(&g, |p| (p - 0.5).powi(2), Tail::Constant, Tail::PlusInfinity);
        assert!(matches!(facelift_params(&bad, 0.1), Err(Error::NonMonotone { .. })));
    }

    #[test]
    fn a1_tie_goes_to_a1() {
        let g = Grid1D::uniform(0.0, 1.0, 11).unwrap();
        let ws = profile(&g, |p| p * p, Tail::Constant, Tail::PlusInfinity);
        assert_eq!(facelift_params(&ws, 1.0).unwrap().region, Region::A1);
    }

    #[test]
    fn terminal_date_obstacle() {
        let g = Grid1D::uniform(0.0, 100.0, 401).unwrap();
        let w = profile(&g, |q| q, Tail::PlusInfinity, Tail::Linear { slope: 1.0 });
        for ell in [0.0, 3.0, 17.3] {
            let (dec, _) = obstacle_section_decomposed(&w, ell).unwrap();
            let dir = obstacle_section_direct(&w, ell).unwrap();
            for (i, &q) in g.points().iter().enumerate() {
                assert!((dec.value(i) - (q - ell).max(0.0)).abs() < 1e-12);
                assert!((dir.value(i) - (q - ell).max(0.0)).abs() < 1e-12);
            }
            assert_eq!(dir.eval(-1.0), f64::INFINITY);
        }
    }

    #[test]
    fn inactive_obstacle_is_identity() {
        let w = quadratic_dual(2.0, 10.0, 401);
        let (dec, fp) = obstacle_section_decomposed(&w, 0.0).unwrap();
        assert_eq!(fp.region, Region::A2);
        assert_eq!(dec.to_vec(), w.to_vec());
        let dir = obstacle_section_direct(&w, 0.0).unwrap();
        for i in 0..w.len() {
            assert!((dir.value(i) - w.value(i)).abs() < 1e-9 * w.samples().scale());
        }
    }

    #[test]
    fn routes_agree_on_all_regions() {
        let w = quadratic_dual(2.0, 10.0, 401);
        for ell in [0.1, 0.5, 1.0, 1.99, 2.0, 3.0] {
            let (dec, fp) = obstacle_section_decomposed(&w, ell).unwrap();
            let dir = obstacle_section_direct(&w, ell).unwrap();
            for i in 0..w.len() {
                assert!(
                    (dec.value(i) - dir.value(i)).abs() < 1e-9 * 10.0,
                    "ell {ell} node {i}: {} vs {} ({fp:?})",
                    dec.value(i),
                    dir.value(i)
                );
            }
            check_dual_section(&dec, 1e-9).unwrap();
        }
    }

    #[test]
    fn a3_closed_form_for_quadratic() {
        // v(p) = 2 p^2, l = 0.5: p_l = 1/2, q_l = 1, q_bar = 2
        let w = quadratic_dual(2.0, 10.0, 401);
        let (dec, fp) = obstacle_section_decomposed(&w, 0.5).unwrap();
        assert_eq!(fp.region, Region::A3);
        assert!((fp.p_ell - 0.5).abs() < 1e-3);
        assert!((fp.q_ell - 1.0).abs() < 2e-3);
        assert!((fp.q_bar - 2.0).abs() < 0.05);
        assert!(dec.eval(0.5) == 0.0 && dec.eval(1.0).abs() < 1e-3);
        assert!((dec.eval(6.0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn convexified_matches_envelope_oracle() {
        let w = quadratic_dual(2.0, 10.0, 401);
        let pg = Grid1D::uniform(0.0, 1.0, 401).unwrap();
        for ell in [0.5, 1.0, 3.0] {
            let (co, fp) = convexified_section(&w, ell, &pg).unwrap();
            // oracle grid: the output p-grid plus p_l where the chord touches w#
            let mut pts = pg.points().to_vec();
            pts.push(fp.p_ell);
            pts.sort_by(f64::total_cmp);
            pts.dedup();
            let og = Grid1D::new(pts).unwrap();
            let ws = fenchel_transform(&w, &og).unwrap();
            let raw: Vec<f64> = og
                .points()
                .iter()
                .enumerate()
                .map(|(i, &p)| if p > 0.0 { ws.value(i).max(ell) } else { ws.value(i) })
                .collect();
            let f = FunctionSamples::new(og.clone(), raw, Tail::PlusInfinity, Tail::PlusInfinity).unwrap();
            let env = convex_envelope(&f).unwrap();
            for (i, &p) in pg.points().iter().enumerate() {
                assert!((co.value(i) - env.eval(p)).abs() < 1e-9 * 10.0, "ell {ell} p {p}");
            }
            assert!((co.value(400) - ws.value(og.len() - 1).max(ell)).abs() < 1e-12);
        }
        let (co, _) = convexified_section(&w, 0.0, &pg).unwrap();
        let ws = fenchel_transform(&w, &pg).unwrap();
        assert_eq!(co.to_vec(), ws.to_vec());
    }

    #[test]
    fn slice_checker_reports_coordinates() {
        let xg = Grid1D::uniform(1.0, 3.0, 3).unwrap();
        let qg = Grid1D::uniform(0.0, 4.0, 5).unwrap();
        let good = vec![vec![0.0, 0.5, 1.5, 2.5, 3.5]; 3];
        let mut bad = good.clone();
        bad[1][2] = 1.2;
        let s = ValueSlice::from_rows(0.5, xg.clone(), qg.clone(), Axis::DualQ, good, Tail::PlusInfinity, Tail::Linear { slope: 1.0 }, 1e-9).unwrap();
        check_slice(&s, 1e-9).unwrap();
        let raw: Vec<ConvexProfile> = bad
            .into_iter()
            .map(|r| ConvexProfile::new_unchecked(FunctionSamples::new(qg.clone(), r, Tail::PlusInfinity, Tail::Linear { slope: 1.0 }).unwrap()))
            .collect();
        let s = ValueSlice::new(0.5, xg, Axis::DualQ, raw).unwrap();
        match check_slice(&s, 1e-9) {
            Err(Error::InvariantViolation { check, x_index, axis_index, .. }) => {
                assert_eq!(x_index, 1);
                assert!(axis_index >= 1 && axis_index <= 3, "{check} at {axis_index}");
            }
            other => panic!("expected violation, got {other:?}"),
        }
    }

    #[test]
    fn resample_and_restrict_round_trip() {
        let xg = Grid1D::log_uniform(10.0, 40.0, 5).unwrap();
        let qg = Grid1D::uniform(0.0, 10.0, 11).unwrap();
        let rows = xg.points().iter().map(|&x| qg.points().iter().map(|&q| q * x.ln()).collect()).collect();
        let s = ValueSlice::from_rows(0.0, xg.clone(), qg, Axis::DualQ, rows, Tail::PlusInfinity, Tail::Linear { slope: 1.0 }, 1e-9).unwrap();
        let mut pts = xg.points().to_vec();
        pts.push(15.0);
        pts.push(50.0);
        pts.sort_by(f64::total_cmp);
        let fine = s.resample_x(&Grid1D::new(pts).unwrap()).unwrap();
        let k = fine.x_grid.index_of(15.0).unwrap();
        assert!((fine.value(k, 4) - 4.0 * 15.0_f64.ln()).abs() < 1e-12);
        assert_eq!(fine.section(fine.x_grid.len() - 1), s.section(4));
        assert_eq!(fine.restrict_x(&xg).unwrap(), s);
        assert!(s.restrict_x(&fine.x_grid).is_err());
    }
}
