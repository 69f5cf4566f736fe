//! Backward propagation of `w` across one period `[t_i, t_{i+1})`:
//! `w(t,x,q) = E^Q[f(X_{t_{i+1}}, q Q1_{t_{i+1}})]` for terminal data `f`, by
//! finite differences, Gaussian quadrature or Monte Carlo.

pub mod fd;
pub mod interp;
pub mod mc;
pub mod quadrature;

use serde::{Deserialize, Serialize};

use crate::convex::{convex_envelope, ConvexProfile, FunctionSamples, Grid1D, Tail};
use crate::dual::ValueSlice;
use crate::error::{Error, Result};
use crate::market::MarketModel;

pub use fd::{propagate_fd, superhedge_fd, FdReport};
pub use mc::{propagate_mc, propagate_mc_nodes, superhedge_mc, McSlice};
pub use quadrature::{gauss_hermite, propagate_quadrature, superhedge_quadrature};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[serde(alias = "fd")]
    FiniteDifference,
    #[serde(alias = "quad")]
    Quadrature,
    #[serde(alias = "mc")]
    MonteCarlo,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fd" | "finite-difference" => Ok(Method::FiniteDifference),
            "quad" | "quadrature" => Ok(Method::Quadrature),
            "mc" | "monte-carlo" => Ok(Method::MonteCarlo),
            _ => Err(Error::InvalidInput(format!("unknown method `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureRule {
    /// Trapezoid nodes placed on the log-uniform x-grid.
    Lattice,
    GaussHermite,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagatorConfig {
    pub method: Method,
    /// Time steps per period for finite differences.
    pub fd_steps: usize,
    /// Leading fully implicit half steps.
    pub rannacher_steps: usize,
    pub quad_rule: QuadratureRule,
    /// Gauss-Hermite node count.
    pub quad_nodes: usize,
    /// Truncation of the Gaussian factor.
    pub z_max: f64,
    pub mc_paths: usize,
    pub seed: u64,
    /// Euler substeps per period for non-lognormal Monte Carlo.
    pub substeps: usize,
}

impl Default for PropagatorConfig {
    fn default() -> Self {
        Self {
            method: Method::Quadrature,
            fd_steps: 200,
            rannacher_steps: 2,
            quad_rule: QuadratureRule::Lattice,
            quad_nodes: 64,
            z_max: 9.0,
            mc_paths: 20_000,
            seed: 0x5eed,
            substeps: crate::market::DEFAULT_SUBSTEPS,
        }
    }
}

impl PropagatorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: String| {
            Err(Error::Config {
                field: field.into(),
                message,
            })
        };
        if self.fd_steps == 0 {
            return bad("fd_steps", "must be positive".into());
        }
        if self.quad_rule == QuadratureRule::GaussHermite && self.quad_nodes < 8 {
            return bad("quad_nodes", format!("at least 8 nodes required, got {}", self.quad_nodes));
        }
        if !(self.z_max >= 4.0) {
            return bad("z_max", format!("must be at least 4, got {}", self.z_max));
        }
        if self.method == Method::MonteCarlo && self.mc_paths < mc::MIN_PATHS {
            return bad("mc_paths", format!("at least {} paths required", mc::MIN_PATHS));
        }
        if self.substeps == 0 {
            return bad("substeps", "must be positive".into());
        }
        Ok(())
    }
}

/// Result of one period.
#[derive(Clone, Debug)]
pub struct PeriodOutput {
    /// `w(t_i, ., .)` before any obstacle at `t_i`.
    pub w: ValueSlice,
    /// `v(t_i, ., 1)`.
    pub superhedge: Vec<f64>,
    /// Per-node standard errors for Monte Carlo.
    pub std_errors: Option<Vec<Vec<f64>>>,
    /// Largest convexity defect removed after finite differences.
    pub convexity_removed: f64,
}

/// One period with the configured method. `terminal` is the post-obstacle
/// dual slice at `t_{i+1}` on `out_grid` or a refinement of it, and `g` is
/// `(v v l)(t_{i+1}, ., 1)` on the terminal x-grid.
pub fn propagate(
    terminal: &ValueSlice,
    out_grid: &Grid1D,
    g: &[f64],
    t0: f64,
    model: &MarketModel,
    cfg: &PropagatorConfig,
) -> Result<PeriodOutput> {
    cfg.validate()?;
    match cfg.method {
        Method::Quadrature => Ok(PeriodOutput {
            w: propagate_quadrature(terminal, out_grid, t0, model, cfg)?,
            superhedge: superhedge_quadrature(&terminal.x_grid, g, out_grid, t0, terminal.time, model, cfg)?,
            std_errors: None,
            convexity_removed: 0.0,
        }),
        Method::FiniteDifference => {
            let (coarse, g) = if &terminal.x_grid == out_grid {
                (terminal.clone(), g.to_vec())
            } else {
                let keep = out_grid
                    .points()
                    .iter()
                    .map(|&x| terminal.x_grid.index_of(x).map(|i| g[i]))
                    .collect::<Option<Vec<f64>>>()
                    .ok_or_else(|| Error::InvalidGrid("output grid is not a subgrid of the terminal grid".into()))?;
                (terminal.restrict_x(out_grid)?, keep)
            };
            let (w, v1, report) = propagate_fd(&coarse, &g, t0, model, cfg)?;
            Ok(PeriodOutput {
                w,
                superhedge: v1,
                std_errors: None,
                convexity_removed: report.convexity_removed,
            })
        }
        Method::MonteCarlo => {
            let out = propagate_mc(terminal, out_grid, t0, model, cfg)?;
            let (v1, _) = superhedge_mc(&terminal.x_grid, g, out_grid, t0, terminal.time, model, cfg)?;
            Ok(PeriodOutput {
                w: out.slice,
                superhedge: v1,
                std_errors: Some(out.std_errors),
                convexity_removed: 0.0,
            })
        }
    }
}

/// `v(t_i, ., 1)` only, with the configured method.
pub fn propagate_superhedge(
    x_grid: &Grid1D,
    g: &[f64],
    t0: f64,
    t1: f64,
    model: &MarketModel,
    cfg: &PropagatorConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    match cfg.method {
        Method::Quadrature => superhedge_quadrature(x_grid, g, x_grid, t0, t1, model, cfg),
        Method::FiniteDifference => superhedge_fd(x_grid, g, t0, t1, model, cfg),
        Method::MonteCarlo => Ok(superhedge_mc(x_grid, g, x_grid, t0, t1, model, cfg)?.0),
    }
}

/// Projects raw dual values onto the admissible cone: `w(0) = 0`, `w >= 0`,
/// convex, slopes at most one. Returns the projection and the largest
/// amount removed.
pub fn project_dual_section(q_grid: &Grid1D, mut raw: Vec<f64>) -> Result<(ConvexProfile, f64)> {
    if q_grid.first() == 0.0 {
        raw[0] = 0.0;
    }
    raw.iter_mut().for_each(|v| *v = v.max(0.0));
    let s = FunctionSamples::new(
        q_grid.clone(),
        raw.clone(),
        Tail::PlusInfinity,
        Tail::Linear { slope: 1.0 },
    )?;
    let env = convex_envelope(&s)?;
    let removed = raw
        .iter()
        .enumerate()
        .fold(0.0_f64, |m, (i, v)| m.max(v - env.value(i)));
    Ok((env, removed))
}
