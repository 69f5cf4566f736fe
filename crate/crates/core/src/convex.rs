//! Grid-based convex analysis on sampled extended-real functions of one
//! variable: Legendre-Fenchel transforms, convex envelopes, one-sided
//! derivatives and subdifferential inversion.
//!
//! Samples carry an explicit finiteness mask. Entries that are `+inf` hold
//! [`INF_SENTINEL`] in the value buffer and are never touched by arithmetic;
//! the public accessors translate them back to `f64::INFINITY`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite placeholder stored for `+inf` samples. Never enters arithmetic.
pub const INF_SENTINEL: f64 = 1.0e300;

/// Relative tolerance used for convexity and duality checks.
pub const DEFAULT_REL_EPS: f64 = 1.0e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Spacing {
    Uniform,
    UniformInLog,
    /// Arbitrary strictly increasing points, e.g. exact breakpoints.
    Irregular,
}

/// Strictly increasing sample points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    points: Vec<f64>,
    spacing: Spacing,
}

impl Grid1D {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        Self::with_spacing(points, Spacing::Irregular)
    }

    fn with_spacing(points: Vec<f64>, spacing: Spacing) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::InvalidGrid(format!(
                "need at least 3 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidGrid("non-finite grid point".into()));
        }
        if let Some(i) = points.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!(
                "points not strictly increasing at index {}",
                i + 1
            )));
        }
        if spacing == Spacing::UniformInLog && points[0] <= 0.0 {
            return Err(Error::InvalidGrid(
                "uniform-in-log grid must contain only positive points".into(),
            ));
        }
        Ok(Self { points, spacing })
    }

    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 3 || !(hi > lo) {
            return Err(Error::InvalidGrid(format!("uniform({lo}, {hi}, {n})")));
        }
        let h = (hi - lo) / (n - 1) as f64;
        let mut points: Vec<f64> = (0..n).map(|i| lo + h * i as f64).collect();
        points[n - 1] = hi;
        Self::with_spacing(points, Spacing::Uniform)
    }

    pub fn log_uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 3 || !(lo > 0.0) || !(hi > lo) {
            return Err(Error::InvalidGrid(format!("log_uniform({lo}, {hi}, {n})")));
        }
        let (a, b) = (lo.ln(), hi.ln());
        let h = (b - a) / (n - 1) as f64;
        let mut points: Vec<f64> = (0..n).map(|i| (a + h * i as f64).exp()).collect();
        points[0] = lo;
        points[n - 1] = hi;
        Self::with_spacing(points, Spacing::UniformInLog)
    }

    /// `n` (odd) points `center * exp(k h)`, `k = -(n-1)/2 ..= (n-1)/2`,
    /// spanning `[center / ratio, center * ratio]`; the middle point is
    /// exactly `center`.
    pub fn log_uniform_around(center: f64, ratio: f64, n: usize) -> Result<Self> {
        if n < 3 || n % 2 == 0 || !(center > 0.0) || !(ratio > 1.0) {
            return Err(Error::InvalidGrid(format!(
                "log_uniform_around({center}, {ratio}, {n})"
            )));
        }
        let m = (n / 2) as i64;
        let h = ratio.ln() / m as f64;
        let points = (-m..=m)
            .map(|k| match k {
                0 => center,
                k if k == -m => center / ratio,
                k if k == m => center * ratio,
                k => center * (h * k as f64).exp(),
            })
            .collect();
        Self::with_spacing(points, Spacing::UniformInLog)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.points[0]
    }

    pub fn last(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Index `i` of the cell `[p_i, p_{i+1}]` containing `x`, clamped to the
    /// first/last cell for points outside the grid.
    pub fn cell(&self, x: f64) -> usize {
        let n = self.points.len();
        let guess = match self.spacing {
            Spacing::Uniform => {
                let h = (self.last() - self.first()) / (n - 1) as f64;
                ((x - self.first()) / h).floor()
            }
            Spacing::UniformInLog if x > 0.0 => {
                let h = (self.last().ln() - self.first().ln()) / (n - 1) as f64;
                ((x.ln() - self.first().ln()) / h).floor()
            }
            _ => f64::NAN,
        };
        let mut i = if guess.is_finite() {
            guess.clamp(0.0, (n - 2) as f64) as usize
        } else {
            match self.points.partition_point(|&p| p <= x) {
                0 => 0,
                k => (k - 1).min(n - 2),
            }
        };
        // rounding in the arithmetic guesses
        while i > 0 && x < self.points[i] {
            i -= 1;
        }
        while i < n - 2 && x >= self.points[i + 1] {
            i += 1;
        }
        i
    }

    /// Index of a grid point equal to `x`, if any.
    pub fn index_of(&self, x: f64) -> Option<usize> {
        let i = self.cell(x);
        if self.points[i] == x {
            Some(i)
        } else if self.points[i + 1] == x {
            Some(i + 1)
        } else {
            None
        }
    }
}

/// Behaviour of a sampled function beyond one end of its grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tail {
    PlusInfinity,
    Constant,
    Linear { slope: f64 },
}

impl Tail {
    pub fn slope(self) -> Option<f64> {
        match self {
            Tail::PlusInfinity => None,
            Tail::Constant => Some(0.0),
            Tail::Linear { slope } => Some(slope),
        }
    }

    fn from_slope(slope: f64) -> Self {
        if slope == 0.0 {
            Tail::Constant
        } else {
            Tail::Linear { slope }
        }
    }
}

/// Extended-real samples on a grid, not necessarily convex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionSamples {
    grid: Grid1D,
    values: Vec<f64>,
    finite: Vec<bool>,
    left: Tail,
    right: Tail,
}

impl FunctionSamples {
    /// `values` may contain `f64::INFINITY` for points outside the domain.
    pub fn new(grid: Grid1D, values: Vec<f64>, left: Tail, right: Tail) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "{} values for {} grid points",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
            return Err(Error::InvalidInput("NaN or -inf sample".into()));
        }
        let finite: Vec<bool> = values.iter().map(|v| v.is_finite()).collect();
        if !finite.iter().any(|&f| f) {
            return Err(Error::ImproperFunction);
        }
        let values = values
            .into_iter()
            .zip(&finite)
            .map(|(v, &f)| if f { v } else { INF_SENTINEL })
            .collect();
        Ok(Self {
            grid,
            values,
            finite,
            left,
            right,
        })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn left_tail(&self) -> Tail {
        self.left
    }

    pub fn right_tail(&self) -> Tail {
        self.right
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite_at(&self, i: usize) -> bool {
        self.finite[i]
    }

    /// Sample `i`, or `None` for `+inf`.
    pub fn get(&self, i: usize) -> Option<f64> {
        self.finite[i].then(|| self.values[i])
    }

    /// Sample `i` as an `f64`, `+inf` outside the domain.
    pub fn value(&self, i: usize) -> f64 {
        self.get(i).unwrap_or(f64::INFINITY)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.value(i)).collect()
    }

    fn finite_range(&self) -> (usize, usize) {
        let lo = self.finite.iter().position(|&f| f).unwrap_or(0);
        let hi = self.finite.iter().rposition(|&f| f).unwrap_or(0);
        (lo, hi)
    }

    /// Tail slope that actually applies: the tail is only live when the edge
    /// sample itself is finite.
    fn live_left(&self) -> Option<f64> {
        if self.finite[0] {
            self.left.slope()
        } else {
            None
        }
    }

    fn live_right(&self) -> Option<f64> {
        if self.finite[self.len() - 1] {
            self.right.slope()
        } else {
            None
        }
    }

    /// Piecewise-linear evaluation with tails beyond the grid.
    pub fn eval(&self, x: f64) -> f64 {
        let pts = self.grid.points();
        let n = pts.len();
        if x < pts[0] {
            return match self.live_left() {
                Some(s) => self.values[0] + s * (x - pts[0]),
                None => f64::INFINITY,
            };
        }
        if x > pts[n - 1] {
            return match self.live_right() {
                Some(s) => self.values[n - 1] + s * (x - pts[n - 1]),
                None => f64::INFINITY,
            };
        }
        let i = self.grid.cell(x);
        let (a, b) = (pts[i], pts[i + 1]);
        match (self.get(i), self.get(i + 1)) {
            (Some(fa), Some(fb)) => {
                if x == a {
                    fa
                } else if x == b {
                    fb
                } else {
                    let w = (x - a) / (b - a);
                    fa + w * (fb - fa)
                }
            }
            (Some(fa), None) if x == a => fa,
            (None, Some(fb)) if x == b => fb,
            _ => f64::INFINITY,
        }
    }

    /// Largest absolute finite sample, at least one.
    pub fn scale(&self) -> f64 {
        (0..self.len())
            .filter_map(|i| self.get(i))
            .fold(1.0_f64, |m, v| m.max(v.abs()))
    }
}

/// A sampled closed proper convex function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexProfile {
    samples: FunctionSamples,
}

impl ConvexProfile {
    /// Validates discrete convexity (relative tolerance `rel_eps`) and that
    /// the effective domain is an interval.
    pub fn new(samples: FunctionSamples, rel_eps: f64) -> Result<Self> {
        let (lo, hi) = samples.finite_range();
        if (lo..=hi).any(|i| !samples.finite[i]) {
            return Err(Error::InvalidInput(
                "+inf samples must form a prefix and/or suffix".into(),
            ));
        }
        if let Some(i) = convexity_violation(&samples, rel_eps * samples.scale()) {
            return Err(Error::InvalidInput(format!(
                "samples are not convex at index {i}"
            )));
        }
        Ok(Self { samples })
    }

    pub(crate) fn new_unchecked(samples: FunctionSamples) -> Self {
        Self { samples }
    }

    pub fn samples(&self) -> &FunctionSamples {
        &self.samples
    }

    pub fn into_samples(self) -> FunctionSamples {
        self.samples
    }

    pub fn grid(&self) -> &Grid1D {
        self.samples.grid()
    }

    pub fn value(&self, i: usize) -> f64 {
        self.samples.value(i)
    }

    pub fn get(&self, i: usize) -> Option<f64> {
        self.samples.get(i)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.samples.eval(x)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.samples.to_vec()
    }

    pub fn left_tail(&self) -> Tail {
        self.samples.left
    }

    pub fn right_tail(&self) -> Tail {
        self.samples.right
    }
}

impl AsRef<FunctionSamples> for FunctionSamples {
    fn as_ref(&self) -> &FunctionSamples {
        self
    }
}

impl AsRef<FunctionSamples> for ConvexProfile {
    fn as_ref(&self) -> &FunctionSamples {
        &self.samples
    }
}

/// First interior index whose sample lies above the chord of its finite
/// neighbours by more than `tol`.
pub fn convexity_violation(f: &FunctionSamples, tol: f64) -> Option<usize> {
    let pts = f.grid.points();
    (1..f.len().saturating_sub(1)).find(|&i| match (f.get(i - 1), f.get(i), f.get(i + 1)) {
        (Some(a), Some(b), Some(c)) => {
            let w = (pts[i + 1] - pts[i]) / (pts[i + 1] - pts[i - 1]);
            b - (w * a + (1.0 - w) * c) > tol
        }
        _ => false,
    })
}

/// Lower convex hull (as indices) of the finite samples, left to right.
fn lower_hull(f: &FunctionSamples) -> Vec<usize> {
    let pts = f.grid.points();
    let mut hull: Vec<usize> = Vec::new();
    for i in (0..f.len()).filter(|&i| f.finite[i]) {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            // drop b when it is on or above the segment a -> i
            let lhs = (f.values[b] - f.values[a]) * (pts[i] - pts[a]);
            let rhs = (f.values[i] - f.values[a]) * (pts[b] - pts[a]);
            if lhs >= rhs {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    hull
}

/// Discrete Legendre-Fenchel transform `f#(q) = sup_p (p q - f(p))` evaluated
/// on `dual_grid`. Tail descriptors of `f` are consumed analytically: a live
/// tail of slope `s` on the right makes `f#` infinite beyond `s` (on the left,
/// below `s`).
pub fn fenchel_transform<F: AsRef<FunctionSamples>>(
    f: &F,
    dual_grid: &Grid1D,
) -> Result<ConvexProfile> {
    let f = f.as_ref();
    let hull = lower_hull(f);
    if hull.is_empty() {
        return Err(Error::ImproperFunction);
    }
    let pts = f.grid.points();
    let q_lo = f.live_left().unwrap_or(f64::NEG_INFINITY);
    let q_hi = f.live_right().unwrap_or(f64::INFINITY);
    let slope = |k: usize| {
        let (a, b) = (hull[k], hull[k + 1]);
        (f.values[b] - f.values[a]) / (pts[b] - pts[a])
    };
    let mut out = Vec::with_capacity(dual_grid.len());
    let mut k = 0usize;
    for &q in dual_grid.points() {
        if q < q_lo || q > q_hi {
            out.push(f64::INFINITY);
            continue;
        }
        while k + 1 < hull.len() && slope(k) < q {
            k += 1;
        }
        let at = |j: usize| pts[hull[j]] * q - f.values[hull[j]];
        let mut v = at(k);
        if k + 1 < hull.len() {
            v = v.max(at(k + 1));
        }
        if k > 0 {
            v = v.max(at(k - 1));
        }
        out.push(v);
    }
    let x_min = pts[hull[0]];
    let x_max = pts[*hull.last().unwrap()];
    let left = if q_lo >= dual_grid.first() {
        Tail::PlusInfinity
    } else {
        Tail::from_slope(x_min)
    };
    let right = if q_hi <= dual_grid.last() {
        Tail::PlusInfinity
    } else {
        Tail::from_slope(x_max)
    };
    let samples = FunctionSamples::new(dual_grid.clone(), out, left, right)?;
    Ok(ConvexProfile::new_unchecked(samples))
}

/// Closed convex envelope `co f = f##` sampled on `f`'s own grid, including
/// the rays contributed by live linear tails.
pub fn convex_envelope<F: AsRef<FunctionSamples>>(f: &F) -> Result<ConvexProfile> {
    let f = f.as_ref();
    let mut hull = lower_hull(f);
    if hull.is_empty() {
        return Err(Error::ImproperFunction);
    }
    let pts = f.grid.points();
    let s_left = f.live_left();
    let s_right = f.live_right();
    if let Some(s) = s_left.filter(|&s| s > 0.0) {
        return Err(Error::UnboundedBelow { slope: s });
    }
    if let Some(s) = s_right.filter(|&s| s < 0.0) {
        return Err(Error::UnboundedBelow { slope: s });
    }
    let edge_slope = |a: usize, b: usize| (f.values[b] - f.values[a]) / (pts[b] - pts[a]);
    if let Some(s) = s_left {
        while hull.len() >= 2 && edge_slope(hull[0], hull[1]) < s {
            hull.remove(0);
        }
    }
    if let Some(s) = s_right {
        while hull.len() >= 2 && edge_slope(hull[hull.len() - 2], hull[hull.len() - 1]) > s {
            hull.pop();
        }
    }
    let first = hull[0];
    let last = *hull.last().unwrap();
    let mut out = vec![f64::INFINITY; f.len()];
    let mut k = 0usize;
    for (i, &x) in pts.iter().enumerate() {
        out[i] = if i < first {
            match s_left {
                Some(s) => f.values[first] + s * (x - pts[first]),
                None => f64::INFINITY,
            }
        } else if i > last {
            match s_right {
                Some(s) => f.values[last] + s * (x - pts[last]),
                None => f64::INFINITY,
            }
        } else {
            while k + 1 < hull.len() && hull[k + 1] < i {
                k += 1;
            }
            if hull[k] == i || hull[k + 1] == i {
                f.values[i]
            } else {
                let (a, b) = (hull[k], hull[k + 1]);
                let w = (x - pts[a]) / (pts[b] - pts[a]);
                // convex combination, never above either endpoint chord
                (1.0 - w) * f.values[a] + w * f.values[b]
            }
        };
    }
    let left = s_left.map_or(Tail::PlusInfinity, Tail::from_slope);
    let right = s_right.map_or(Tail::PlusInfinity, Tail::from_slope);
    let samples = FunctionSamples::new(f.grid.clone(), out, left, right)?;
    Ok(ConvexProfile::new_unchecked(samples))
}

fn cell_slope(f: &FunctionSamples, i: usize) -> Option<f64> {
    let pts = f.grid.points();
    match (f.get(i), f.get(i + 1)) {
        (Some(a), Some(b)) => Some((b - a) / (pts[i + 1] - pts[i])),
        _ => None,
    }
}

/// Right derivative `D+f(point)`; `+inf` at the right end of a bounded domain.
pub fn right_derivative(f: &ConvexProfile, point: f64) -> Result<f64> {
    let s = f.samples();
    let pts = s.grid.points();
    let n = pts.len();
    let outside = Err(Error::OutsideDomain { point });
    if point < pts[0] {
        return s.live_left().map_or(outside, Ok);
    }
    if point >= pts[n - 1] {
        if point > pts[n - 1] {
            return s.live_right().map_or(outside, Ok);
        }
        if !s.finite[n - 1] {
            return outside;
        }
        return Ok(s.live_right().unwrap_or(f64::INFINITY));
    }
    let i = s.grid.cell(point);
    match cell_slope(s, i) {
        Some(v) => Ok(v),
        None if point == pts[i] && s.finite[i] => Ok(f64::INFINITY),
        None => outside,
    }
}

/// Left derivative `D-f(point)`; `-inf` at the left end of a bounded domain.
pub fn left_derivative(f: &ConvexProfile, point: f64) -> Result<f64> {
    let s = f.samples();
    let pts = s.grid.points();
    let n = pts.len();
    let outside = Err(Error::OutsideDomain { point });
    if point > pts[n - 1] {
        return s.live_right().map_or(outside, Ok);
    }
    if point <= pts[0] {
        if point < pts[0] {
            return s.live_left().map_or(outside, Ok);
        }
        if !s.finite[0] {
            return outside;
        }
        return Ok(s.live_left().unwrap_or(f64::NEG_INFINITY));
    }
    // cell whose right end is `point` when `point` is a node
    let mut i = s.grid.cell(point);
    if point == pts[i] {
        i -= 1;
    }
    match cell_slope(s, i) {
        Some(v) => Ok(v),
        None if point == pts[i + 1] && s.finite[i + 1] => Ok(f64::NEG_INFINITY),
        None => outside,
    }
}

/// Smallest grid point `q` whose subdifferential contains `slope`,
/// i.e. `D-f(q) <= slope <= D+f(q)`.
pub fn subdifferential_argmax(f: &ConvexProfile, slope: f64) -> Result<f64> {
    let pts = f.grid().points();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (i, &q) in pts.iter().enumerate() {
        if !f.samples().finite[i] {
            continue;
        }
        let dm = left_derivative(f, q)?;
        let dp = right_derivative(f, q)?;
        lo = lo.min(dm);
        hi = hi.max(dp);
        if dm <= slope && slope <= dp {
            return Ok(q);
        }
    }
    Err(Error::SlopeOutOfRange { slope, lo, hi })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn grid_rejects_bad_points() {
        assert!(Grid1D::new(vec![0.0, 1.0]).is_err());
        assert!(Grid1D::new(vec![0.0, 1.0, 1.0]).is_err());
        assert!(Grid1D::new(vec![0.0, 2.0, 1.0]).is_err());
        assert!(Grid1D::log_uniform(0.0, 1.0, 5).is_err());
        let g = Grid1D::log_uniform(7.5, 120.0, 201).unwrap();
        assert!(approx(g.points()[100], 30.0, 1e-12));
    }

    #[test]
    fn cell_lookup_matches_binary_search() {
        let g = Grid1D::log_uniform(0.5, 8.0, 17).unwrap();
        let irr = Grid1D::new(g.points().to_vec()).unwrap();
        for k in 0..200 {
            let x = 0.3 + 0.045 * k as f64;
            assert_eq!(g.cell(x), irr.cell(x), "x = {x}");
        }
        for &p in g.points() {
            assert_eq!(g.index_of(p).map(|i| g.points()[i]), Some(p));
        }
    }

    #[test]
    fn conjugate_of_interval_indicator_is_positive_part() {
        let p = Grid1D::uniform(0.0, 1.0, 11).unwrap();
        let f = FunctionSamples::new(p, vec![0.0; 11], Tail::PlusInfinity, Tail::PlusInfinity)
            .unwrap();
        let q = Grid1D::uniform(-2.0, 2.0, 41).unwrap();
        let g = fenchel_transform(&f, &q).unwrap();
        for (i, &qq) in q.points().iter().enumerate() {
            assert!(approx(g.value(i), qq.max(0.0), 1e-14));
        }
        assert_eq!(g.right_tail(), Tail::Linear { slope: 1.0 });
        assert_eq!(g.left_tail(), Tail::Constant);
    }

    #[test]
    fn half_square_is_self_conjugate() {
        let p = Grid1D::uniform(-4.0, 4.0, 801).unwrap();
        let vals = p.points().iter().map(|x| 0.5 * x * x).collect();
        let f = FunctionSamples::new(p, vals, Tail::PlusInfinity, Tail::PlusInfinity).unwrap();
        let q = Grid1D::uniform(-2.0, 2.0, 37).unwrap();
        let g = fenchel_transform(&f, &q).unwrap();
        // grid step 0.01: interpolation error below h^2/8
        for (i, &qq) in q.points().iter().enumerate() {
            assert!(approx(g.value(i), 0.5 * qq * qq, 1.5e-5), "{qq}");
        }
    }

    #[test]
    fn terminal_dual_value_conjugates_to_zero_indicator() {
        // w(T, x, q) = q on q >= 0, +inf below
        let q = Grid1D::uniform(0.0, 50.0, 101).unwrap();
        let w = FunctionSamples::new(
            q.clone(),
            q.points().to_vec(),
            Tail::PlusInfinity,
            Tail::Linear { slope: 1.0 },
        )
        .unwrap();
        let p = Grid1D::uniform(-0.5, 1.5, 81).unwrap();
        let ws = fenchel_transform(&w, &p).unwrap();
        for (i, &pp) in p.points().iter().enumerate() {
            if pp <= 1.0 {
                assert_eq!(ws.value(i), 0.0, "p = {pp}");
            } else {
                assert_eq!(ws.value(i), f64::INFINITY, "p = {pp}");
            }
        }
    }

    #[test]
    fn improper_input_is_rejected() {
        let g = Grid1D::uniform(0.0, 1.0, 3).unwrap();
        assert!(matches!(
            FunctionSamples::new(g, vec![f64::INFINITY; 3], Tail::PlusInfinity, Tail::PlusInfinity),
            Err(Error::ImproperFunction)
        ));
    }

    #[test]
    fn envelope_of_convex_is_identity() {
        let g = Grid1D::uniform(-1.0, 2.0, 31).unwrap();
        let vals: Vec<f64> = g.points().iter().map(|x| (x * 1.3).exp()).collect();
        let f = FunctionSamples::new(g, vals.clone(), Tail::PlusInfinity, Tail::PlusInfinity)
            .unwrap();
        let env = convex_envelope(&f).unwrap();
        assert_eq!(env.to_vec(), vals);
    }

    /// O(n^2) lower envelope: at each node the minimum over chords spanning it.
    fn brute_envelope(x: &[f64], y: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|k| {
                let mut best = y[k];
                for i in 0..=k {
                    for j in k..x.len() {
                        if j > i {
                            let w = (x[k] - x[i]) / (x[j] - x[i]);
                            best = best.min((1.0 - w) * y[i] + w * y[j]);
                        }
                    }
                }
                best
            })
            .collect()
    }

    #[test]
    fn double_well_envelope_bridges_the_wells() {
        let (a, b) = (-1.0, 1.5);
        let g = Grid1D::uniform(-2.5, 3.0, 56).unwrap();
        let y: Vec<f64> = g
            .points()
            .iter()
            .map(|&p: &f64| ((p - a) * (p - a)).min((p - b) * (p - b)))
            .collect();
        let oracle = brute_envelope(g.points(), &y);
        let f = FunctionSamples::new(g.clone(), y, Tail::PlusInfinity, Tail::PlusInfinity).unwrap();
        let env = convex_envelope(&f).unwrap();
        for i in 0..g.len() {
            assert!(approx(env.value(i), oracle[i], 1e-12), "i = {i}");
        }
        // the bridge between the wells is affine at level zero
        for (i, &p) in g.points().iter().enumerate() {
            if p >= a && p <= b {
                assert!(approx(env.value(i), 0.0, 1e-12));
            }
        }
    }

    #[test]
    fn envelope_respects_linear_tail_rays() {
        // constant tail at level 0 to the left pulls the envelope down
        let g = Grid1D::new(vec![0.0, 1.0, 2.0]).unwrap();
        let f = FunctionSamples::new(g, vec![0.0, -1.0, 0.0], Tail::Constant, Tail::PlusInfinity)
            .unwrap();
        let env = convex_envelope(&f).unwrap();
        assert_eq!(env.to_vec(), vec![-1.0, -1.0, 0.0]);
        let g = Grid1D::new(vec![0.0, 1.0, 2.0]).unwrap();
        let f = FunctionSamples::new(
            g,
            vec![0.0, 0.0, 0.0],
            Tail::Linear { slope: 1.0 },
            Tail::PlusInfinity,
        )
        .unwrap();
        assert!(matches!(convex_envelope(&f), Err(Error::UnboundedBelow { .. })));
    }

    #[test]
    fn envelope_with_facelift_shape() {
        // f = max(w#, l 1_(0,1]) with w#(p) = p^2 on a grid where p_l = 0.5 is a node
        let g = Grid1D::uniform(0.0, 1.0, 21).unwrap();
        let ell = 0.25;
        let y: Vec<f64> = g
            .points()
            .iter()
            .map(|&p| if p > 0.0 { (p * p).max(ell) } else { 0.0 })
            .collect();
        let f = FunctionSamples::new(g.clone(), y, Tail::Constant, Tail::PlusInfinity).unwrap();
        let env = convex_envelope(&f).unwrap();
        let q_ell = ell / 0.5;
        for (i, &p) in g.points().iter().enumerate() {
            let expect = if p < 0.5 { p * q_ell } else { p * p };
            assert!(approx(env.value(i), expect, 1e-14), "p = {p}");
        }
    }

    fn positive_part() -> ConvexProfile {
        let g = Grid1D::uniform(-2.0, 2.0, 41).unwrap();
        let y = g.points().iter().map(|q| q.max(0.0)).collect();
        ConvexProfile::new(
            FunctionSamples::new(g, y, Tail::Constant, Tail::Linear { slope: 1.0 }).unwrap(),
            DEFAULT_REL_EPS,
        )
        .unwrap()
    }

    #[test]
    fn derivatives_at_kink() {
        let f = positive_part();
        assert_eq!(left_derivative(&f, 0.0).unwrap(), 0.0);
        assert_eq!(right_derivative(&f, 0.0).unwrap(), 1.0);
        assert_eq!(right_derivative(&f, 5.0).unwrap(), 1.0);
        assert_eq!(left_derivative(&f, -5.0).unwrap(), 0.0);
    }

    #[test]
    fn derivative_of_shifted_positive_part() {
        let ell = 0.7;
        let g = Grid1D::uniform(0.0, 2.0, 21).unwrap();
        let y = g.points().iter().map(|q| (q - ell).max(0.0)).collect();
        let f = ConvexProfile::new(
            FunctionSamples::new(g, y, Tail::PlusInfinity, Tail::Linear { slope: 1.0 }).unwrap(),
            DEFAULT_REL_EPS,
        )
        .unwrap();
        // 0.7 is a node up to rounding; D+ there is the slope of the next cell
        assert!(approx(right_derivative(&f, 0.7000000001).unwrap(), 1.0, 1e-9));
        assert_eq!(left_derivative(&f, 0.0).unwrap(), f64::NEG_INFINITY);
        assert!(right_derivative(&f, -0.1).is_err());
    }

    #[test]
    fn derivatives_match_central_difference() {
        let g = Grid1D::uniform(0.0, 2.0, 2001).unwrap();
        let y = g.points().iter().map(|q| q.exp()).collect();
        let f = ConvexProfile::new(
            FunctionSamples::new(g, y, Tail::PlusInfinity, Tail::PlusInfinity).unwrap(),
            DEFAULT_REL_EPS,
        )
        .unwrap();
        let h: f64 = 1e-3;
        for &x in &[0.3_f64, 0.9, 1.55] {
            let central = ((x + h).exp() - (x - h).exp()) / (2.0 * h);
            let dp = right_derivative(&f, x).unwrap();
            let dm = left_derivative(&f, x).unwrap();
            assert!(dm <= dp);
            assert!(approx(dp, central, 2.0 * h * x.exp()));
            assert!(approx(dm, central, 2.0 * h * x.exp()));
        }
    }

    #[test]
    fn argmax_examples() {
        let g = Grid1D::uniform(-2.0, 2.0, 401).unwrap();
        let y = g.points().iter().map(|q| 0.5 * q * q).collect();
        let f = ConvexProfile::new(
            FunctionSamples::new(g, y, Tail::PlusInfinity, Tail::PlusInfinity).unwrap(),
            DEFAULT_REL_EPS,
        )
        .unwrap();
        assert!(approx(subdifferential_argmax(&f, 0.3).unwrap(), 0.3, 0.01 + 1e-12));
        let f = positive_part();
        assert_eq!(subdifferential_argmax(&f, 0.5).unwrap(), 0.0);
        assert!(subdifferential_argmax(&f, 1.5).is_err());
    }

    #[test]
    fn argmax_breaks_ties_toward_smallest_point() {
        // flat stretch: slope 0 is in the subdifferential of every point of [-2, 0]
        let f = positive_part();
        assert_eq!(subdifferential_argmax(&f, 0.0).unwrap(), -2.0);
    }

    #[test]
    fn convex_profile_rejects_nonconvex_and_holes() {
        let g = Grid1D::uniform(0.0, 1.0, 5).unwrap();
        let s = FunctionSamples::new(
            g.clone(),
            vec![0.0, 1.0, 0.0, 1.0, 2.0],
            Tail::PlusInfinity,
            Tail::PlusInfinity,
        )
        .unwrap();
        assert!(ConvexProfile::new(s, DEFAULT_REL_EPS).is_err());
        let s = FunctionSamples::new(
            g,
            vec![0.0, f64::INFINITY, 0.0, 1.0, 2.0],
            Tail::PlusInfinity,
            Tail::PlusInfinity,
        )
        .unwrap();
        assert!(ConvexProfile::new(s, DEFAULT_REL_EPS).is_err());
    }
}
