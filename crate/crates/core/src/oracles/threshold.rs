//! Single-maturity quantile hedging in the lognormal model: the optimal
//! success set is `{q Q1_T >= l(X_T)}` for a scalar threshold `q`.

use crate::error::{Error, Result};
use crate::market::{ExerciseSchedule, MarketModel, Payoff};
use crate::normal;

const Z_MAX: f64 = 12.0;
const SCAN: usize = 4001;
const PANELS: usize = 16;

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// One-factor representation `X_T = x exp(-s^2/2 + s Z)`,
/// `Q1_T = exp(a Z - a^2/2)` with `Z ~ N(0,1)` under `Q`.
struct Factor<'a> {
    x: f64,
    s: f64,
    a: f64,
    payoff: &'a Payoff,
    date: usize,
    kinks_z: Vec<f64>,
    gl: (Vec<f64>, Vec<f64>),
}

impl<'a> Factor<'a> {
    fn new(model: &MarketModel, payoff: &'a Payoff, date: usize, tau: f64, x: f64) -> Result<Self> {
        let (vol, lambda) = model
            .lognormal_params()
            .ok_or_else(|| Error::InvalidInput("threshold oracle needs the lognormal model".into()))?;
        let s = vol * tau.sqrt();
        let mut kinks_z: Vec<f64> = payoff
            .kinks()
            .into_iter()
            .filter(|k| *k > 0.0)
            .map(|k| ((k / x).ln() + 0.5 * s * s) / s)
            .filter(|z| z.abs() < Z_MAX)
            .collect();
        kinks_z.sort_by(f64::total_cmp);
        Ok(Self {
            x,
            s,
            a: lambda * tau.sqrt(),
            payoff,
            date,
            kinks_z,
            gl: gauss_legendre(10),
        })
    }

    fn ell(&self, z: f64) -> f64 {
        self.payoff.eval(self.date, self.x * (self.s * z - 0.5 * self.s * self.s).exp())
    }

    fn q1(&self, z: f64) -> f64 {
        (self.a * z - 0.5 * self.a * self.a).exp()
    }

    fn success(&self, q: f64, z: f64) -> bool {
        q * self.q1(z) >= self.ell(z)
    }

    /// Maximal intervals of `[-Z_MAX, Z_MAX]` where the test succeeds.
    fn success_set(&self, q: f64) -> Vec<(f64, f64)> {
        let h = 2.0 * Z_MAX / (SCAN - 1) as f64;
        let z = |i: usize| -Z_MAX + i as f64 * h;
        let edge = |mut lo: f64, mut hi: f64, at_lo: bool| {
            for _ in 0..80 {
                let m = 0.5 * (lo + hi);
                if self.success(q, m) == at_lo {
                    lo = m;
                } else {
                    hi = m;
                }
            }
            0.5 * (lo + hi)
        };
        let mut out = Vec::new();
        let mut start = self.success(q, z(0)).then_some(z(0));
        for i in 1..SCAN {
            let now = self.success(q, z(i));
            match (start, now) {
                (None, true) => start = Some(edge(z(i - 1), z(i), false)),
                (Some(a), false) => {
                    out.push((a, edge(z(i - 1), z(i), true)));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(a) = start {
            out.push((a, Z_MAX));
        }
        out
    }

    /// `P[Z in [a, b]]` under the physical measure, where `Z - a` is standard.
    fn prob(&self, set: &[(f64, f64)]) -> f64 {
        set.iter().map(|&(l, h)| normal::prob_between(l - self.a, h - self.a)).sum()
    }

    /// `E^Q[l 1_{Z in set}]` by composite Gauss-Legendre split at payoff kinks.
    fn cost(&self, set: &[(f64, f64)]) -> f64 {
        let (gx, gw) = &self.gl;
        let mut total = 0.0;
        for &(lo, hi) in set {
            let mut cuts = vec![lo];
            cuts.extend(self.kinks_z.iter().copied().filter(|k| *k > lo && *k < hi));
            cuts.push(hi);
            for c in cuts.windows(2) {
                let step = (c[1] - c[0]) / PANELS as f64;
                for p in 0..PANELS {
                    let (a, b) = (c[0] + p as f64 * step, c[0] + (p + 1) as f64 * step);
                    let (m, r) = (0.5 * (a + b), 0.5 * (b - a));
                    total += gx
                        .iter()
                        .zip(gw)
                        .map(|(x, w)| {
                            let z = m + r * x;
                            w * r * self.ell(z) * normal::pdf(z)
                        })
                        .sum::<f64>();
                }
            }
        }
        total
    }
}

/// Threshold price and its success level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdPrice {
    pub price: f64,
    pub threshold: f64,
    pub p_min: f64,
}

fn factor<'a>(
    model: &MarketModel,
    schedule: &ExerciseSchedule,
    payoff: &'a Payoff,
    t: f64,
    x: f64,
) -> Result<Factor<'a>> {
    if schedule.periods() != 1 {
        return Err(Error::InvalidInput("threshold oracle needs a single exercise date".into()));
    }
    let tau = schedule.maturity() - t;
    if !(tau > 0.0) || !(x > 0.0) {
        return Err(Error::InvalidInput(format!("need t < T and x > 0, got t = {t}, x = {x}")));
    }
    Factor::new(model, payoff, 1, tau, x)
}

/// `p_min = P[l(T, X_T) = 0]`.
pub fn threshold_pmin(model: &MarketModel, schedule: &ExerciseSchedule, payoff: &Payoff, t: f64, x: f64) -> Result<f64> {
    let f = factor(model, schedule, payoff, t, x)?;
    Ok(f.prob(&f.success_set(0.0)))
}

/// Minimal cost `E^Q[l 1_S]` over success sets `S = {q Q1 >= l}` with
/// `P[S] = p`. Levels at or below `p_min` cost nothing.
pub fn european_threshold_price(
    model: &MarketModel,
    schedule: &ExerciseSchedule,
    payoff: &Payoff,
    t: f64,
    x: f64,
    p: f64,
) -> Result<ThresholdPrice> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::RootNotBracketed(format!("success level {p} outside [0, 1]")));
    }
    let f = factor(model, schedule, payoff, t, x)?;
    let p_min = f.prob(&f.success_set(0.0));
    if p <= p_min {
        return Ok(ThresholdPrice { price: 0.0, threshold: 0.0, p_min });
    }
    if p == 1.0 {
        let all = [(-Z_MAX, Z_MAX)];
        return Ok(ThresholdPrice { price: f.cost(&all), threshold: f64::INFINITY, p_min });
    }
    let level = |q: f64| f.prob(&f.success_set(q));
    let mut hi = 1.0_f64;
    while level(hi) < p {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::RootNotBracketed(format!("no threshold reaches level {p}")));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        if level(m) < p {
            lo = m;
        } else {
            hi = m;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Ok(ThresholdPrice {
        price: f.cost(&f.success_set(hi)),
        threshold: hi,
        p_min,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (MarketModel, ExerciseSchedule, Payoff) {
        (
            MarketModel::lognormal(0.25, 0.2).unwrap(),
            ExerciseSchedule::uniform(1.0, 1).unwrap(),
            Payoff::put(30.0).unwrap(),
        )
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(10);
        let i: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(18)).sum();
        assert!((i - 2.0 / 19.0).abs() < 1e-14);
    }

    #[test]
    fn full_success_is_black_scholes() {
        let (m, s, put) = setup();
        let r = european_threshold_price(&m, &s, &put, 0.0, 30.0, 1.0).unwrap();
        let bs = normal::bs_put(30.0, 30.0, 0.25, 1.0);
        assert!((r.price - bs).abs() < 1e-12, "{} vs {bs}", r.price);
        assert!((r.price - 30.0 * (2.0 * normal::cdf(0.125) - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn pmin_and_monotone_convex_sweep() {
        let (m, s, put) = setup();
        let pmin = threshold_pmin(&m, &s, &put, 0.0, 30.0).unwrap();
        assert!((pmin - normal::cdf(0.075)).abs() < 1e-12, "{pmin}");
        let at = european_threshold_price(&m, &s, &put, 0.0, 30.0, pmin).unwrap();
        assert_eq!(at.price, 0.0);
        let ps: Vec<f64> = (0..=20).map(|i| 0.55 + 0.02 * i as f64).collect();
        let v: Vec<f64> = ps
            .iter()
            .map(|&p| european_threshold_price(&m, &s, &put, 0.0, 30.0, p).unwrap().price)
            .collect();
        for k in 1..v.len() {
            assert!(v[k] >= v[k - 1]);
        }
        for k in 1..v.len() - 1 {
            assert!(v[k + 1] - 2.0 * v[k] + v[k - 1] >= -1e-9);
        }
        assert!(european_threshold_price(&m, &s, &put, 0.0, 30.0, 1.5).is_err());
    }

    #[test]
    fn success_level_is_hit() {
        let (m, s, put) = setup();
        let r = european_threshold_price(&m, &s, &put, 0.0, 30.0, 0.9).unwrap();
        let f = factor(&m, &s, &put, 0.0, 30.0).unwrap();
        assert!((f.prob(&f.success_set(r.threshold)) - 0.9).abs() < 1e-10);
    }
}
