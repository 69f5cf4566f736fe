//! Market coefficients, exercise schedule, payoffs, and joint simulation of
//! the asset `X` and the deflator `Q1 = Q^{t,x,1}` under either measure.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Paths per independently seeded random stream.
pub const PATH_BLOCK: usize = 4096;

/// Default Euler substeps per simulated interval for non-lognormal models.
pub const DEFAULT_SUBSTEPS: usize = 64;

type VecField = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
enum Coefficients {
    /// `sigma(t,x) = vol x`, `lambda = lambda`.
    Lognormal { vol: f64, lambda: f64 },
    /// One asset with `sigma(t,x) = x vol(x)` and market price of risk
    /// `lambda(x)`, both piecewise linear in `x` and flat outside the table.
    LocalTable {
        x: Vec<f64>,
        vol: Vec<f64>,
        lambda: Vec<f64>,
    },
    /// `d` assets; `mu` returns a vector, `sigma` a row-major `d x d` matrix.
    General {
        dim: usize,
        mu: VecField,
        sigma: VecField,
    },
}

/// Drift, volatility and market price of risk of the risky assets.
#[derive(Clone)]
pub struct MarketModel {
    coeffs: Coefficients,
    lambda_bound: f64,
}

impl fmt::Debug for MarketModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.coeffs {
            Coefficients::Lognormal { vol, lambda } => f
                .debug_struct("MarketModel::Lognormal")
                .field("vol", vol)
                .field("lambda", lambda)
                .finish(),
            Coefficients::LocalTable { x, .. } => f
                .debug_struct("MarketModel::LocalTable")
                .field("nodes", &x.len())
                .finish(),
            Coefficients::General { dim, .. } => f
                .debug_struct("MarketModel::General")
                .field("dim", dim)
                .finish(),
        }
    }
}

fn interp_flat(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    let n = xs.len();
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let k = xs.partition_point(|&p| p <= x) - 1;
    let w = (x - xs[k]) / (xs[k + 1] - xs[k]);
    ys[k] + w * (ys[k + 1] - ys[k])
}

impl MarketModel {
    /// Black-Scholes asset with relative volatility `vol` and constant market
    /// price of risk `lambda` (drift `vol * lambda * x`).
    pub fn lognormal(vol: f64, lambda: f64) -> Result<Self> {
        if !(vol > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidInput(format!(
                "lognormal model needs vol > 0 and finite lambda, got ({vol}, {lambda})"
            )));
        }
        Ok(Self {
            coeffs: Coefficients::Lognormal { vol, lambda },
            lambda_bound: lambda.abs(),
        })
    }

    pub fn local_table(x: Vec<f64>, vol: Vec<f64>, lambda: Vec<f64>) -> Result<Self> {
        if x.len() < 2 || x.len() != vol.len() || x.len() != lambda.len() {
            return Err(Error::InvalidInput(
                "coefficient table columns must have equal length >= 2".into(),
            ));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) || x[0] <= 0.0 {
            return Err(Error::InvalidInput(
                "coefficient table x must be positive and increasing".into(),
            ));
        }
        if vol.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidInput("relative vol must be positive".into()));
        }
        let lambda_bound = lambda.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
        Ok(Self {
            coeffs: Coefficients::LocalTable { x, vol, lambda },
            lambda_bound,
        })
    }

    /// General `d`-asset model. `lambda_bound` is the declared bound on
    /// `|sigma^{-1} mu|`, enforced during simulation.
    pub fn general(
        dim: usize,
        mu: impl Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
        sigma: impl Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
        lambda_bound: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        Ok(Self {
            coeffs: Coefficients::General {
                dim,
                mu: Arc::new(mu),
                sigma: Arc::new(sigma),
            },
            lambda_bound,
        })
    }

    pub fn dim(&self) -> usize {
        match &self.coeffs {
            Coefficients::General { dim, .. } => *dim,
            _ => 1,
        }
    }

    /// `(vol, lambda)` when the Black-Scholes fast path applies.
    pub fn lognormal_params(&self) -> Option<(f64, f64)> {
        match self.coeffs {
            Coefficients::Lognormal { vol, lambda } => Some((vol, lambda)),
            _ => None,
        }
    }

    pub fn is_lognormal(&self) -> bool {
        self.lognormal_params().is_some()
    }

    pub fn has_constant_lambda(&self) -> bool {
        match &self.coeffs {
            Coefficients::Lognormal { .. } => true,
            Coefficients::LocalTable { lambda, .. } => lambda.windows(2).all(|w| w[0] == w[1]),
            Coefficients::General { .. } => false,
        }
    }

    pub fn lambda_bound(&self) -> f64 {
        self.lambda_bound
    }

    /// Relative volatility `sigma(t,x)/x` of a one-asset model.
    pub fn vol_rel(&self, t: f64, x: f64) -> Result<f64> {
        match &self.coeffs {
            Coefficients::Lognormal { vol, .. } => Ok(*vol),
            Coefficients::LocalTable { x: xs, vol, .. } => Ok(interp_flat(xs, vol, x)),
            Coefficients::General { dim: 1, sigma, .. } => Ok(sigma(t, &[x])[0] / x),
            Coefficients::General { dim, .. } => Err(Error::UnsupportedDimension { dim: *dim }),
        }
    }

    /// Market price of risk of a one-asset model.
    pub fn lambda_1d(&self, t: f64, x: f64) -> Result<f64> {
        match &self.coeffs {
            Coefficients::Lognormal { lambda, .. } => Ok(*lambda),
            Coefficients::LocalTable { x: xs, lambda, .. } => Ok(interp_flat(xs, lambda, x)),
            Coefficients::General { dim: 1, .. } => Ok(self.lambda(t, &[x])?[0]),
            Coefficients::General { dim, .. } => Err(Error::UnsupportedDimension { dim: *dim }),
        }
    }

    pub fn mu(&self, t: f64, x: &[f64]) -> Vec<f64> {
        match &self.coeffs {
            Coefficients::General { mu, .. } => mu(t, x),
            _ => {
                let v = self.vol_rel(t, x[0]).unwrap_or(0.0);
                let l = self.lambda_1d(t, x[0]).unwrap_or(0.0);
                vec![v * l * x[0]]
            }
        }
    }

    /// Row-major `d x d` volatility matrix.
    pub fn sigma(&self, t: f64, x: &[f64]) -> Vec<f64> {
        match &self.coeffs {
            Coefficients::General { sigma, .. } => sigma(t, x),
            _ => vec![self.vol_rel(t, x[0]).unwrap_or(0.0) * x[0]],
        }
    }

    /// `lambda = sigma^{-1} mu`.
    pub fn lambda(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        match &self.coeffs {
            Coefficients::General { dim, mu, sigma } => {
                let s = DMatrix::from_row_slice(*dim, *dim, &sigma(t, x));
                let m = DVector::from_vec(mu(t, x));
                let l = s.lu().solve(&m).ok_or_else(|| {
                    Error::InvalidInput(format!("sigma is singular at t = {t}, x = {x:?}"))
                })?;
                Ok(l.iter().copied().collect())
            }
            _ => Ok(vec![self.lambda_1d(t, x[0])?]),
        }
    }
}

/// Exercise dates `0 = t_0 <= ... <= t_n = T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExerciseSchedule {
    dates: Vec<f64>,
}

impl ExerciseSchedule {
    pub fn new(dates: Vec<f64>) -> Result<Self> {
        if dates.len() < 2 {
            return Err(Error::InvalidInput(
                "schedule needs t_0 = 0 and at least one exercise date".into(),
            ));
        }
        if dates[0] != 0.0 {
            return Err(Error::InvalidInput(format!("t_0 must be 0, got {}", dates[0])));
        }
        if dates.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(Error::InvalidInput("dates must be non-decreasing".into()));
        }
        if !(dates[dates.len() - 1] > 0.0) {
            return Err(Error::InvalidInput("maturity must be positive".into()));
        }
        Ok(Self { dates })
    }

    /// Evenly spaced dates `k T / n`, `k = 0..=n`.
    pub fn uniform(maturity: f64, periods: usize) -> Result<Self> {
        Self::new((0..=periods).map(|k| maturity * k as f64 / periods as f64).collect())
    }

    pub fn dates(&self) -> &[f64] {
        &self.dates
    }

    pub fn maturity(&self) -> f64 {
        self.dates[self.dates.len() - 1]
    }

    /// Number of periods `n`.
    pub fn periods(&self) -> usize {
        self.dates.len() - 1
    }

    /// Indices of exercise dates strictly after `t` (never index 0).
    pub fn indices_after(&self, t: f64) -> Vec<usize> {
        (1..self.dates.len()).filter(|&i| self.dates[i] > t).collect()
    }
}

/// Nonnegative exercise value `l(t_i, x)` per exercise date.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Payoff {
    Zero,
    Put {
        strike: f64,
    },
    /// `[high - x]^+ - [low - x]^+`
    PutSpread {
        low: f64,
        high: f64,
    },
    /// Per date index, values at `x` nodes; piecewise linear, flat outside.
    /// Row 0 (the date `t_0`) is never exercised but must be present.
    CustomTable {
        x: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

impl Payoff {
    pub fn put(strike: f64) -> Result<Self> {
        if !(strike > 0.0) {
            return Err(Error::InvalidInput(format!("strike must be positive, got {strike}")));
        }
        Ok(Payoff::Put { strike })
    }

    pub fn put_spread(low: f64, high: f64) -> Result<Self> {
        if !(low > 0.0) || !(high > low) {
            return Err(Error::InvalidInput(format!(
                "put spread needs 0 < low < high, got ({low}, {high})"
            )));
        }
        Ok(Payoff::PutSpread { low, high })
    }

    pub fn custom_table(x: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if x.len() < 2 || x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("payoff table x must be increasing".into()));
        }
        if values.iter().any(|row| row.len() != x.len()) {
            return Err(Error::InvalidInput("payoff table row length mismatch".into()));
        }
        if let Some(v) = values.iter().flatten().find(|v| !(**v >= 0.0)) {
            return Err(Error::NegativePayoff { value: *v });
        }
        Ok(Payoff::CustomTable { x, values })
    }

    pub fn eval(&self, date_index: usize, x: f64) -> f64 {
        match self {
            Payoff::Zero => 0.0,
            Payoff::Put { strike } => (strike - x).max(0.0),
            Payoff::PutSpread { low, high } => (high - x).max(0.0) - (low - x).max(0.0),
            Payoff::CustomTable { x: xs, values } => {
                let row = &values[date_index.min(values.len() - 1)];
                interp_flat(xs, row, x)
            }
        }
    }

    /// Multi-asset evaluation on the arithmetic basket `mean(x)`.
    pub fn eval_vec(&self, date_index: usize, x: &[f64]) -> f64 {
        let basket = x.iter().sum::<f64>() / x.len() as f64;
        self.eval(date_index, basket)
    }

    pub fn lipschitz_bound(&self) -> f64 {
        match self {
            Payoff::Zero => 0.0,
            Payoff::Put { .. } | Payoff::PutSpread { .. } => 1.0,
            Payoff::CustomTable { x, values } => values
                .iter()
                .flat_map(|row| {
                    row.windows(2)
                        .zip(x.windows(2))
                        .map(|(v, xx)| ((v[1] - v[0]) / (xx[1] - xx[0])).abs())
                })
                .fold(0.0, f64::max),
        }
    }

    /// `C` with `l(t_i, x) <= C (1 + x)`.
    pub fn growth_constant(&self) -> f64 {
        match self {
            Payoff::Zero => 0.0,
            Payoff::Put { strike } => *strike,
            Payoff::PutSpread { low, high } => high - low,
            Payoff::CustomTable { values, .. } => values.iter().flatten().fold(0.0, |m, v| m.max(*v)),
        }
    }

    /// Points where the payoff may fail to be smooth.
    pub fn kinks(&self) -> Vec<f64> {
        match self {
            Payoff::Zero => Vec::new(),
            Payoff::Put { strike } => vec![*strike],
            Payoff::PutSpread { low, high } => vec![*low, *high],
            Payoff::CustomTable { x, .. } => x.clone(),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Payoff::Zero)
    }

    /// Checks nonnegativity and the declared Lipschitz bound on `samples`.
    pub fn verify_on(&self, dates: usize, samples: &[f64]) -> Result<()> {
        let lip = self.lipschitz_bound();
        for i in 0..dates {
            for w in samples.windows(2) {
                let (a, b) = (self.eval(i, w[0]), self.eval(i, w[1]));
                if a < 0.0 {
                    return Err(Error::NegativePayoff { value: a });
                }
                if (b - a).abs() > lip * (w[1] - w[0]).abs() * (1.0 + 1e-12) + 1e-12 {
                    return Err(Error::InvalidInput(format!(
                        "declared Lipschitz bound {lip} exceeded between {} and {}",
                        w[0], w[1]
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Measure {
    /// Physical measure `P`.
    Physical,
    /// Risk-neutral measure `Q_{t,x}`.
    RiskNeutral,
}

/// Simulated `(X, Q1)` pairs, stored flat: `x[(path * times + k) * dim + i]`.
#[derive(Clone, Debug)]
pub struct PathSet {
    pub times: Vec<f64>,
    pub dim: usize,
    pub measure: Measure,
    x: Vec<f64>,
    q1: Vec<f64>,
}

/// One simulated path.
#[derive(Clone, Copy, Debug)]
pub struct DeflatorPath<'a> {
    pub times: &'a [f64],
    pub dim: usize,
    pub measure: Measure,
    pub x: &'a [f64],
    pub q1: &'a [f64],
}

impl DeflatorPath<'_> {
    pub fn x_at(&self, k: usize) -> &[f64] {
        &self.x[k * self.dim..(k + 1) * self.dim]
    }
}

impl PathSet {
    pub fn n_paths(&self) -> usize {
        self.q1.len() / self.times.len()
    }

    pub fn path(&self, i: usize) -> DeflatorPath<'_> {
        let nt = self.times.len();
        DeflatorPath {
            times: &self.times,
            dim: self.dim,
            measure: self.measure,
            x: &self.x[i * nt * self.dim..(i + 1) * nt * self.dim],
            q1: &self.q1[i * nt..(i + 1) * nt],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = DeflatorPath<'_>> + '_ {
        (0..self.n_paths()).map(move |i| self.path(i))
    }

    /// Scalar asset value of path `i` at time index `k` (first component).
    pub fn x1(&self, i: usize, k: usize) -> f64 {
        self.x[(i * self.times.len() + k) * self.dim]
    }

    pub fn q1(&self, i: usize, k: usize) -> f64 {
        self.q1[i * self.times.len() + k]
    }
}

/// Random stream for block `block` of a run seeded with `seed`.
pub fn block_rng(seed: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block);
    rng
}

/// Simulation settings.
#[derive(Clone, Copy, Debug)]
pub struct SimConfig {
    pub n_paths: usize,
    pub measure: Measure,
    pub substeps: usize,
    pub seed: u64,
}

/// Simulates `(X^{t,x}, Q^{t,x,1})` at `t` followed by `horizon` (which must
/// lie in `(t, T]` for the caller's `T`, sorted). Index 0 of every path is
/// time `t` with `Q1 = 1`.
pub fn simulate(
    model: &MarketModel,
    t: f64,
    x: &[f64],
    horizon: &[f64],
    cfg: SimConfig,
) -> Result<PathSet> {
    let dim = model.dim();
    if x.len() != dim || x.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "initial state must have {dim} positive components, got {x:?}"
        )));
    }
    if horizon.iter().any(|&s| s < t) || horizon.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput(format!(
            "horizon times must be sorted and not before t = {t}"
        )));
    }
    if cfg.n_paths == 0 {
        return Err(Error::InvalidInput("n_paths must be positive".into()));
    }
    let mut times = Vec::with_capacity(horizon.len() + 1);
    times.push(t);
    times.extend_from_slice(horizon);
    let nt = times.len();
    let mut xs = vec![0.0; cfg.n_paths * nt * dim];
    let mut q1 = vec![0.0; cfg.n_paths * nt];
    let substeps = if model.is_lognormal() { 1 } else { cfg.substeps.max(1) };

    let stride_x = PATH_BLOCK * nt * dim;
    let stride_q = PATH_BLOCK * nt;
    xs.par_chunks_mut(stride_x)
        .zip(q1.par_chunks_mut(stride_q))
        .enumerate()
        .try_for_each(|(block, (bx, bq))| -> Result<()> {
            let mut rng = block_rng(cfg.seed, block as u64);
            let n_here = bq.len() / nt;
            let mut state = vec![0.0; dim];
            let mut dw = vec![0.0; dim];
            for p in 0..n_here {
                let mut ln_x: Vec<f64> = x.iter().map(|v| v.ln()).collect();
                let mut ln_q = 0.0;
                bx[p * nt * dim..p * nt * dim + dim].copy_from_slice(x);
                bq[p * nt] = 1.0;
                for k in 1..nt {
                    let span = times[k] - times[k - 1];
                    if span > 0.0 {
                        let h = span / substeps as f64;
                        for s in 0..substeps {
                            let now = times[k - 1] + h * s as f64;
                            for d in dw.iter_mut() {
                                let z: f64 = rng.sample(StandardNormal);
                                *d = z * h.sqrt();
                            }
                            for (st, l) in state.iter_mut().zip(&ln_x) {
                                *st = l.exp();
                            }
                            log_euler_step(model, now, h, &state, &dw, cfg.measure, &mut ln_x, &mut ln_q)?;
                        }
                    }
                    let base = (p * nt + k) * dim;
                    for (i, l) in ln_x.iter().enumerate() {
                        bx[base + i] = l.exp();
                    }
                    bq[p * nt + k] = ln_q.exp();
                }
            }
            Ok(())
        })?;
    Ok(PathSet {
        times,
        dim,
        measure: cfg.measure,
        x: xs,
        q1,
    })
}

/// One step in log coordinates. For the lognormal model this is exact.
#[allow(clippy::too_many_arguments)]
fn log_euler_step(
    model: &MarketModel,
    t: f64,
    h: f64,
    x: &[f64],
    dw: &[f64],
    measure: Measure,
    ln_x: &mut [f64],
    ln_q: &mut f64,
) -> Result<()> {
    let dim = x.len();
    let sign = match measure {
        Measure::Physical => 1.0,
        Measure::RiskNeutral => -1.0,
    };
    if dim == 1 {
        let v = model.vol_rel(t, x[0])?;
        let l = model.lambda_1d(t, x[0])?;
        let drift = match measure {
            Measure::Physical => v * l - 0.5 * v * v,
            Measure::RiskNeutral => -0.5 * v * v,
        };
        ln_x[0] += drift * h + v * dw[0];
        *ln_q += l * dw[0] + sign * 0.5 * l * l * h;
        return Ok(());
    }
    let sigma = model.sigma(t, x);
    let mu = model.mu(t, x);
    let lambda = model.lambda(t, x)?;
    let l2: f64 = lambda.iter().map(|l| l * l).sum();
    if l2.sqrt() > model.lambda_bound() * (1.0 + 1e-12) {
        return Err(Error::InvalidInput(format!(
            "|lambda| = {} exceeds the declared bound {}",
            l2.sqrt(),
            model.lambda_bound()
        )));
    }
    for i in 0..dim {
        let row = &sigma[i * dim..(i + 1) * dim];
        let s2: f64 = row.iter().map(|s| (s / x[i]).powi(2)).sum();
        let diffusion: f64 = row.iter().zip(dw).map(|(s, w)| s / x[i] * w).sum();
        let drift = match measure {
            Measure::Physical => mu[i] / x[i] - 0.5 * s2,
            Measure::RiskNeutral => -0.5 * s2,
        };
        ln_x[i] += drift * h + diffusion;
    }
    let ldw: f64 = lambda.iter().zip(dw).map(|(l, w)| l * w).sum();
    *ln_q += ldw + sign * 0.5 * l2 * h;
    Ok(())
}

/// Monte-Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn from_samples(samples: impl Iterator<Item = f64>) -> Self {
        let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
        for s in samples {
            n += 1;
            let d = s - mean;
            mean += d / n as f64;
            m2 += d * (s - mean);
        }
        let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
        Estimate {
            value: mean,
            std_error: (var / n.max(1) as f64).sqrt(),
        }
    }
}

/// `P[l(s, X_s) = 0 for all exercise dates s > t]`, with binomial standard
/// error. At `t >= T` the convention `p_min = 1` is returned directly.
pub fn pmin_estimate(
    model: &MarketModel,
    schedule: &ExerciseSchedule,
    payoff: &Payoff,
    t: f64,
    x: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<Estimate> {
    let idx = schedule.indices_after(t);
    if idx.is_empty() {
        return Ok(Estimate {
            value: 1.0,
            std_error: 0.0,
        });
    }
    if payoff.is_zero() {
        return Ok(Estimate {
            value: 1.0,
            std_error: 0.0,
        });
    }
    let horizon: Vec<f64> = idx.iter().map(|&i| schedule.dates()[i]).collect();
    let paths = simulate(
        model,
        t,
        x,
        &horizon,
        SimConfig {
            n_paths,
            measure: Measure::Physical,
            substeps: DEFAULT_SUBSTEPS,
            seed,
        },
    )?;
    let hits = paths
        .iter()
        .filter(|p| {
            idx.iter()
                .enumerate()
                .all(|(k, &i)| payoff.eval_vec(i, p.x_at(k + 1)) == 0.0)
        })
        .count();
    let pm = hits as f64 / n_paths as f64;
    Ok(Estimate {
        value: pm,
        std_error: (pm * (1.0 - pm) / n_paths as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normal;

    fn bs() -> MarketModel {
        MarketModel::lognormal(0.25, 0.2).unwrap()
    }

    fn cfg(n: usize, measure: Measure) -> SimConfig {
        SimConfig {
            n_paths: n,
            measure,
            substeps: DEFAULT_SUBSTEPS,
            seed: 7,
        }
    }

    #[test]
    fn asset_is_a_q_martingale() {
        let p = simulate(&bs(), 0.0, &[30.0], &[1.0], cfg(200_000, Measure::RiskNeutral)).unwrap();
        let e = Estimate::from_samples((0..p.n_paths()).map(|i| p.x1(i, 1)));
        assert!((e.value - 30.0).abs() < 3.0 * e.std_error, "{e:?}");
    }

    #[test]
    fn inverse_deflator_is_a_p_martingale() {
        let p = simulate(&bs(), 0.0, &[30.0], &[1.0], cfg(200_000, Measure::Physical)).unwrap();
        let e = Estimate::from_samples((0..p.n_paths()).map(|i| 1.0 / p.q1(i, 1)));
        assert!((e.value - 1.0).abs() < 3.0 * e.std_error, "{e:?}");
        assert!(p.iter().all(|path| path.q1[0] == 1.0));
    }

    #[test]
    fn measure_change_reproduces_lognormal_tail() {
        // E_Q[Q1_T 1{X_T >= 30}] = P[X_T >= 30] = Phi(d) with the P-drift
        let (vol, lambda) = (0.25_f64, 0.2_f64);
        let exact = normal::cdf((vol * lambda - 0.5 * vol * vol) / vol);
        let q = simulate(&bs(), 0.0, &[30.0], &[1.0], cfg(400_000, Measure::RiskNeutral)).unwrap();
        let eq = Estimate::from_samples(
            (0..q.n_paths()).map(|i| if q.x1(i, 1) >= 30.0 { q.q1(i, 1) } else { 0.0 }),
        );
        let p = simulate(&bs(), 0.0, &[30.0], &[1.0], cfg(400_000, Measure::Physical)).unwrap();
        let ep = Estimate::from_samples(
            (0..p.n_paths()).map(|i| if p.x1(i, 1) >= 30.0 { 1.0 } else { 0.0 }),
        );
        assert!((eq.value - exact).abs() < 3.0 * eq.std_error, "{eq:?} vs {exact}");
        assert!((ep.value - exact).abs() < 3.0 * ep.std_error, "{ep:?} vs {exact}");
        let joint = (eq.std_error.powi(2) + ep.std_error.powi(2)).sqrt();
        assert!((eq.value - ep.value).abs() < 3.0 * joint);
    }

    #[test]
    fn local_table_euler_stays_positive_and_close_to_lognormal() {
        let m = MarketModel::local_table(vec![1.0, 100.0], vec![0.25, 0.25], vec![0.2, 0.2]).unwrap();
        let p = simulate(&m, 0.0, &[30.0], &[0.5, 1.0], cfg(50_000, Measure::RiskNeutral)).unwrap();
        assert!((0..p.n_paths()).all(|i| p.x1(i, 2) > 0.0 && p.q1(i, 2) > 0.0));
        let e = Estimate::from_samples((0..p.n_paths()).map(|i| p.x1(i, 2)));
        assert!((e.value - 30.0).abs() < 3.0 * e.std_error);
    }

    #[test]
    fn general_two_asset_model_simulates() {
        let m = MarketModel::general(
            2,
            |_, x| vec![0.05 * x[0], 0.02 * x[1]],
            |_, x| vec![0.25 * x[0], 0.0, 0.05 * x[1], 0.2 * x[1]],
            1.0,
        )
        .unwrap();
        let l = m.lambda(0.0, &[10.0, 20.0]).unwrap();
        assert!((l[0] - 0.2).abs() < 1e-12 && (l[1] - (0.02 - 0.05 * 0.2) / 0.2).abs() < 1e-12);
        let p = simulate(&m, 0.0, &[10.0, 20.0], &[1.0], cfg(20_000, Measure::Physical)).unwrap();
        let e = Estimate::from_samples((0..p.n_paths()).map(|i| 1.0 / p.q1(i, 1)));
        assert!((e.value - 1.0).abs() < 3.0 * e.std_error.max(1e-3));
    }

    #[test]
    fn simulation_is_deterministic_and_rejects_bad_input() {
        let a = simulate(&bs(), 0.0, &[30.0], &[1.0], cfg(5000, Measure::Physical)).unwrap();
        let b = simulate(&bs(), 0.0, &[30.0], &[1.0], cfg(5000, Measure::Physical)).unwrap();
        assert_eq!(a.x, b.x);
        assert!(simulate(&bs(), 0.0, &[-1.0], &[1.0], cfg(10, Measure::Physical)).is_err());
        assert!(simulate(&bs(), 0.5, &[30.0], &[0.2], cfg(10, Measure::Physical)).is_err());
    }

    #[test]
    fn schedule_restriction_excludes_t_itself() {
        let s = ExerciseSchedule::new(vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]).unwrap();
        assert_eq!(s.indices_after(0.0), vec![1, 2, 3]);
        assert_eq!(s.indices_after(1.0 / 3.0), vec![2, 3]);
        assert!(s.indices_after(1.0).is_empty());
        assert!(ExerciseSchedule::new(vec![0.0, 0.5, 0.4]).is_err());
    }

    #[test]
    fn pmin_trivial_cases() {
        let s = ExerciseSchedule::uniform(1.0, 3).unwrap();
        let e = pmin_estimate(&bs(), &s, &Payoff::Zero, 0.0, &[30.0], 1000, 1).unwrap();
        assert_eq!(e.value, 1.0);
        let e = pmin_estimate(&bs(), &s, &Payoff::put(30.0).unwrap(), 1.0, &[30.0], 1000, 1).unwrap();
        assert_eq!(e.value, 1.0);
        let spread = Payoff::put_spread(20.0, 30.0).unwrap();
        let short = ExerciseSchedule::new(vec![0.0, 0.01]).unwrap();
        let e = pmin_estimate(&bs(), &short, &spread, 0.0, &[100.0], 10_000, 1).unwrap();
        assert!(e.value > 0.999);
    }

    #[test]
    fn payoff_bounds() {
        let p = Payoff::put_spread(20.0, 30.0).unwrap();
        assert_eq!(p.eval(1, 10.0), 10.0);
        assert_eq!(p.eval(1, 25.0), 5.0);
        assert_eq!(p.eval(1, 35.0), 0.0);
        let xs: Vec<f64> = (1..200).map(|i| i as f64 * 0.5).collect();
        p.verify_on(4, &xs).unwrap();
        assert!(Payoff::custom_table(vec![1.0, 2.0], vec![vec![1.0, -1.0]]).is_err());
    }
}
