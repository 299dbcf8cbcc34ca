//! Gamma-family special functions.

pub use statrs::function::gamma::{digamma, ln_gamma};

/// Second derivative of `ln Γ`, valid for `x > 0`.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let r = 1.0 / x;
    let r2 = r * r;
    // asymptotic series with Bernoulli coefficients
    acc + r
        + r2 / 2.0
        + r * r2 * (1.0 / 6.0 - r2 * (1.0 / 30.0 - r2 * (1.0 / 42.0 - r2 * (1.0 / 30.0 - r2 * 5.0 / 66.0))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trigamma_known_values() {
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((trigamma(1.0) - pi2 / 6.0).abs() < 1e-12);
        assert!((trigamma(0.5) - pi2 / 2.0).abs() < 1e-12);
        assert!((trigamma(2.0) - (pi2 / 6.0 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn trigamma_is_digamma_derivative() {
        for &x in &[0.3, 1.0, 1.7, 4.2, 9.5, 30.0] {
            let h = 1e-5;
            let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert!((fd - trigamma(x)).abs() / trigamma(x) < 1e-7, "x = {x}");
        }
    }

    #[test]
    fn digamma_is_ln_gamma_derivative() {
        for &x in &[0.4, 1.0, 2.5, 11.0] {
            let h = 1e-5;
            let fd = (ln_gamma(x + h) - ln_gamma(x - h)) / (2.0 * h);
            assert!((fd - digamma(x)).abs() < 1e-8, "x = {x}");
        }
    }
}
