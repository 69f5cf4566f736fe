//! Python bindings: run configuration, backward induction, queries, surfaces,
//! verification and the convex primitives.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use qhedge::config::RunConfig;
use qhedge::convex::{self, FunctionSamples, Grid1D, Tail};
use qhedge::dual::{self, Region};
use qhedge::engine::{self, AxisPoint};
use qhedge::market::{ExerciseSchedule, MarketModel, Payoff};
use qhedge::oracles;
use qhedge::output;
use qhedge::verify;

fn err(e: qhedge::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn region_name(r: Region) -> &'static str {
    match r {
        Region::A1 => "A1",
        Region::A2 => "A2",
        Region::A3 => "A3",
    }
}

/// Validated problem: model, exercise dates, payoff and engine settings.
#[pyclass(name = "Problem", module = "qhedge", skip_from_py_object)]
#[derive(Clone)]
struct PyProblem {
    config: RunConfig,
    problem: verify::Problem,
}

#[pymethods]
impl PyProblem {
    /// Builds a problem from a JSON run configuration.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let config = RunConfig::from_json(text).map_err(err)?;
        let problem = config.problem().map_err(err)?;
        Ok(Self { config, problem })
    }

    #[staticmethod]
    fn put_example() -> PyResult<Self> {
        Self::from_json(&RunConfig::put_example().to_json().map_err(err)?)
    }

    #[staticmethod]
    fn put_spread_example() -> PyResult<Self> {
        Self::from_json(&RunConfig::put_spread_example().to_json().map_err(err)?)
    }

    fn to_json(&self) -> PyResult<String> {
        self.config.to_json().map_err(err)
    }

    #[getter]
    fn dates(&self) -> Vec<f64> {
        self.problem.schedule.dates().to_vec()
    }

    /// Exercise value at date index `i`.
    fn payoff(&self, i: usize, x: f64) -> f64 {
        self.problem.payoff.eval(i, x)
    }

    /// Runs the backward induction on `w` and recovers `v`.
    fn solve(&self, py: Python<'_>) -> PyResult<PySolution> {
        let p = self.problem.clone();
        let sol = py.detach(move || p.solve()).map_err(err)?;
        Ok(PySolution { sol })
    }

    /// Verification suite as `(check, status, measured, tolerance)` tuples.
    fn verify(&self, py: Python<'_>) -> PyResult<Vec<(String, String, f64, f64)>> {
        let (p, c) = (self.problem.clone(), self.config.verification.clone());
        let checks = py.detach(move || verify::verify(&p, &c)).map_err(err)?;
        Ok(checks
            .into_iter()
            .map(|c| {
                let status = if c.passed() { "pass" } else { "fail" };
                (c.check, status.to_string(), c.measured, c.tolerance)
            })
            .collect())
    }
}

/// Stored slices of `w`, `v` and `co(v v l)` on the solver grids.
#[pyclass(name = "DualSolution", module = "qhedge")]
struct PySolution {
    sol: engine::DualSolution,
}

#[pymethods]
impl PySolution {
    #[getter]
    fn dates(&self) -> Vec<f64> {
        self.sol.schedule.dates().to_vec()
    }

    #[getter]
    fn x_grid(&self) -> Vec<f64> {
        self.sol.x_grid.points().to_vec()
    }

    #[getter]
    fn q_grid(&self) -> Vec<f64> {
        self.sol.q_grid.points().to_vec()
    }

    #[getter]
    fn p_grid(&self) -> Vec<f64> {
        self.sol.p_grid.points().to_vec()
    }

    #[getter]
    fn eps_dual(&self) -> f64 {
        self.sol.eps_dual
    }

    /// `v(t, x, p)`, bilinear in `(ln x, p)` between nodes.
    fn price(&self, t: f64, x: f64, p: f64) -> PyResult<f64> {
        self.sol.query(t, x, AxisPoint::P(p)).map_err(err)
    }

    /// `w(t, x, q)`, bilinear in `(ln x, q)` between nodes.
    fn dual(&self, t: f64, x: f64, q: f64) -> PyResult<f64> {
        self.sol.query(t, x, AxisPoint::Q(q)).map_err(err)
    }

    /// Rows `v(t, x_j, .)` per x node.
    fn primal_slice(&self, t: f64) -> PyResult<Vec<Vec<f64>>> {
        Ok(engine::recover_primal(&self.sol, t).map_err(err)?.rows())
    }

    /// Rows `w(t, x_j, .)` per x node.
    fn dual_slice(&self, t: f64) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.sol.dual_at(t).map_err(err)?.rows())
    }

    /// Rows `co(v v l)(t, x_j, .)` at an exercise date.
    fn convexified_slice(&self, t: f64) -> PyResult<Vec<Vec<f64>>> {
        let i = self.sol.date_index(t).map_err(err)?;
        self.sol.convexified[i]
            .as_ref()
            .map(|s| s.rows())
            .ok_or_else(|| PyValueError::new_err(format!("no exercise at t = {t}")))
    }

    /// `v(t, x, 1)` per x node.
    fn superhedge(&self, t: f64) -> PyResult<Vec<f64>> {
        Ok(self.sol.superhedge[self.sol.date_index(t).map_err(err)?].clone())
    }

    /// `(region, p_l, q_l, q_bar)` per x node at an exercise date.
    fn facelift(&self, t: f64) -> PyResult<Vec<(String, f64, f64, f64)>> {
        let i = self.sol.date_index(t).map_err(err)?;
        let params = self.sol.facelift[i]
            .as_ref()
            .ok_or_else(|| PyValueError::new_err(format!("no exercise at t = {t}")))?;
        Ok(params
            .iter()
            .map(|p| (region_name(p.region).to_string(), p.p_ell, p.q_ell, p.q_bar))
            .collect())
    }

    /// `(p_min, grid tolerance)` from the right q-slope of `w` at zero.
    fn pmin(&self, t: f64, x: f64) -> PyResult<(f64, f64)> {
        let r = engine::pmin_from_dual(&self.sol, t, x).map_err(err)?;
        Ok((r.value, r.grid_tolerance))
    }

    /// `(frequency, std error, threshold)` of the dual-optimal policy.
    #[pyo3(signature = (t, x, p, n_paths = 100_000, seed = 0x5eed))]
    fn success_probability(&self, py: Python<'_>, t: f64, x: f64, p: f64, n_paths: usize, seed: u64) -> PyResult<(f64, f64, f64)> {
        let sol = &self.sol;
        let r = py
            .detach(|| oracles::dual_success_probability(sol, t, x, p, n_paths, seed))
            .map_err(err)?;
        Ok((r.estimate.value, r.estimate.std_error, r.threshold))
    }

    /// CSV text of `kind` in {"v", "w", "covl"} at time `t`.
    fn surface_csv(&self, kind: &str, t: f64) -> PyResult<String> {
        match kind {
            "v" => output::v_csv(&self.sol, t),
            "w" => output::w_csv(&self.sol, t),
            "covl" => output::covl_csv(&self.sol, t),
            _ => return Err(PyValueError::new_err(format!("unknown surface `{kind}`"))),
        }
        .map_err(err)
    }
}

fn samples(grid: Vec<f64>, values: Vec<f64>) -> PyResult<FunctionSamples> {
    let g = Grid1D::new(grid).map_err(err)?;
    FunctionSamples::new(g, values, Tail::PlusInfinity, Tail::PlusInfinity).map_err(err)
}

/// `f#(s) = sup_x (s x - f(x))` on `dual_grid` for `f` sampled on `grid`
/// and `+inf` elsewhere.
#[pyfunction]
fn fenchel_transform(grid: Vec<f64>, values: Vec<f64>, dual_grid: Vec<f64>) -> PyResult<Vec<f64>> {
    let f = samples(grid, values)?;
    let d = Grid1D::new(dual_grid).map_err(err)?;
    Ok(convex::fenchel_transform(&f, &d).map_err(err)?.to_vec())
}

/// Closed convex envelope of samples on their grid.
#[pyfunction]
fn convex_envelope(grid: Vec<f64>, values: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(convex::convex_envelope(&samples(grid, values)?).map_err(err)?.to_vec())
}

/// `((w# v l)#, region)` for a dual section on `q_grid` with slope-one tail.
#[pyfunction]
fn obstacle_section(q_grid: Vec<f64>, w: Vec<f64>, ell: f64) -> PyResult<(Vec<f64>, String)> {
    let g = Grid1D::new(q_grid).map_err(err)?;
    let f = FunctionSamples::new(g, w, Tail::PlusInfinity, Tail::Linear { slope: 1.0 }).map_err(err)?;
    let w = convex::ConvexProfile::new(f, 1e-9).map_err(err)?;
    let (out, p) = dual::obstacle_section_decomposed(&w, ell).map_err(err)?;
    Ok((out.to_vec(), region_name(p.region).to_string()))
}

/// Single-date put quantile-hedging price from the threshold construction.
#[pyfunction]
fn european_put_price(vol: f64, lam: f64, maturity: f64, strike: f64, x: f64, p: f64) -> PyResult<f64> {
    let m = MarketModel::lognormal(vol, lam).map_err(err)?;
    let s = ExerciseSchedule::new(vec![0.0, maturity]).map_err(err)?;
    let put = Payoff::put(strike).map_err(err)?;
    Ok(oracles::european_threshold_price(&m, &s, &put, 0.0, x, p).map_err(err)?.price)
}

/// Closed-form Black-Scholes put with zero rate.
#[pyfunction]
fn black_scholes_put(x: f64, strike: f64, vol: f64, tau: f64) -> f64 {
    qhedge::normal::bs_put(x, strike, vol, tau)
}

#[pymodule]
#[pyo3(name = "qhedge")]
fn qhedge_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblem>()?;
    m.add_class::<PySolution>()?;
    m.add_function(wrap_pyfunction!(fenchel_transform, m)?)?;
    m.add_function(wrap_pyfunction!(convex_envelope, m)?)?;
    m.add_function(wrap_pyfunction!(obstacle_section, m)?)?;
    m.add_function(wrap_pyfunction!(european_put_price, m)?)?;
    m.add_function(wrap_pyfunction!(black_scholes_put, m)?)?;
    Ok(())
}
