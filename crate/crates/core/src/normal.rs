//! Standard normal density and distribution helpers.

use libm::erfc;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `P[a < Z <= b]` without cancellation in the upper tail.
pub fn prob_between(a: f64, b: f64) -> f64 {
    if a >= b {
        return 0.0;
    }
    if a > 0.0 {
        cdf(-a) - cdf(-b)
    } else {
        cdf(b) - cdf(a)
    }
}

/// Black-Scholes put under zero rates.
pub fn bs_put(x: f64, strike: f64, vol: f64, tau: f64) -> f64 {
    if tau <= 0.0 || vol <= 0.0 {
        return (strike - x).max(0.0);
    }
    let s = vol * tau.sqrt();
    let d1 = ((x / strike).ln() + 0.5 * s * s) / s;
    let d2 = d1 - s;
    strike * cdf(-d2) - x * cdf(-d1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atm_put_identity() {
        // zero rates at the money: K (2 Phi(s/2) - 1)
        let p = bs_put(30.0, 30.0, 0.25, 1.0);
        assert!((p - 30.0 * (2.0 * cdf(0.125) - 1.0)).abs() < 1e-12);
        assert!((p - 2.98).abs() < 5e-3);
    }

    #[test]
    fn tails_are_accurate() {
        assert!((cdf(-8.0) / 6.220960574271785e-16 - 1.0).abs() < 1e-12);
        assert!((prob_between(7.0, 9.0) / (cdf(-7.0) - cdf(-9.0)) - 1.0).abs() < 1e-12);
    }
}
