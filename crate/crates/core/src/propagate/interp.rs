//! Piecewise-linear evaluation of period terminal data off the grid.

use crate::convex::Grid1D;
use crate::dual::ValueSlice;

/// Dual terminal data `f(x, q)` on an `(x, q)` grid, interpolated linearly
/// in `(ln x, q)`. Beyond the x-grid the edge section is used; beyond
/// `q_max` the slope-one tail applies.
#[derive(Clone, Debug)]
pub struct DualSurface {
    ln_x: Grid1D,
    q: Grid1D,
    nq: usize,
    values: Vec<f64>,
}

impl DualSurface {
    pub fn new(slice: &ValueSlice) -> crate::Result<Self> {
        let ln_x = Grid1D::new(slice.x_grid.points().iter().map(|x| x.ln()).collect())?;
        let ln_x = if slice.x_grid.spacing() == crate::convex::Spacing::UniformInLog {
            let n = ln_x.len();
            Grid1D::uniform(ln_x.first(), ln_x.last(), n)?
        } else {
            ln_x
        };
        let nq = slice.axis_grid.len();
        let mut values = Vec::with_capacity(slice.x_grid.len() * nq);
        for s in slice.sections() {
            values.extend((0..nq).map(|i| s.value(i)));
        }
        Ok(Self {
            ln_x,
            q: slice.axis_grid.clone(),
            nq,
            values,
        })
    }

    pub fn nx(&self) -> usize {
        self.ln_x.len()
    }

    pub fn q_grid(&self) -> &Grid1D {
        &self.q
    }

    /// Section `ix` at `q >= 0`.
    #[inline]
    pub fn eval_node(&self, ix: usize, q: f64) -> f64 {
        let row = &self.values[ix * self.nq..(ix + 1) * self.nq];
        let pts = self.q.points();
        let last = self.nq - 1;
        if q >= pts[last] {
            return row[last] + (q - pts[last]);
        }
        let k = self.q.cell(q);
        let w = (q - pts[k]) / (pts[k + 1] - pts[k]);
        row[k] + w * (row[k + 1] - row[k])
    }

    /// `x`-cell index and weight of the right node for `ln x`, clamped.
    #[inline]
    pub fn x_weight(&self, ln_x: f64) -> (usize, f64) {
        let pts = self.ln_x.points();
        let n = pts.len();
        if ln_x <= pts[0] {
            return (0, 0.0);
        }
        if ln_x >= pts[n - 1] {
            return (n - 2, 1.0);
        }
        let j = self.ln_x.cell(ln_x);
        (j, (ln_x - pts[j]) / (pts[j + 1] - pts[j]))
    }

    #[inline]
    pub fn eval_weighted(&self, cell: (usize, f64), q: f64) -> f64 {
        let (j, w) = cell;
        let a = self.eval_node(j, q);
        if w == 0.0 {
            return a;
        }
        let b = self.eval_node(j + 1, q);
        a + w * (b - a)
    }

    pub fn eval(&self, ln_x: f64, q: f64) -> f64 {
        self.eval_weighted(self.x_weight(ln_x), q)
    }
}

/// A function of `x` on a grid, linear in `ln x`, flat beyond the grid.
#[derive(Clone, Debug)]
pub struct LineSurface {
    ln_x: Grid1D,
    values: Vec<f64>,
}

impl LineSurface {
    pub fn new(x_grid: &Grid1D, values: &[f64]) -> crate::Result<Self> {
        let ln_x = Grid1D::new(x_grid.points().iter().map(|x| x.ln()).collect())?;
        let ln_x = if x_grid.spacing() == crate::convex::Spacing::UniformInLog {
            Grid1D::uniform(ln_x.first(), ln_x.last(), ln_x.len())?
        } else {
            ln_x
        };
        Ok(Self {
            ln_x,
            values: values.to_vec(),
        })
    }

    pub fn eval(&self, ln_x: f64) -> f64 {
        let pts = self.ln_x.points();
        let n = pts.len();
        if ln_x <= pts[0] {
            return self.values[0];
        }
        if ln_x >= pts[n - 1] {
            return self.values[n - 1];
        }
        let j = self.ln_x.cell(ln_x);
        let w = (ln_x - pts[j]) / (pts[j + 1] - pts[j]);
        self.values[j] + w * (self.values[j + 1] - self.values[j])
    }
}
