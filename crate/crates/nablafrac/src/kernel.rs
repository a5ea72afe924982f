//! Generalized rising factorials and the fractional-sum kernel weights.
//!
//! The rising factorial is `t^(r) = Gamma(t+r)/Gamma(t)`, with the
//! convention that the value is 0 when `t` is a nonpositive integer but
//! `t+r` is not. The kernel weights `w_k = k^(nu-1)/Gamma(nu)` are the
//! discrete convolution kernel of the nabla fractional sum.

use crate::error::{Error, Result};
use statrs::function::gamma::ln_gamma;

/// Largest argument for which `exp` stays finite in f64.
const MAX_EXP_ARG: f64 = 709.782712893384;

/// Exact nonpositive-integer test. Arguments are taken as exact machine
/// reals; callers constructing grid points arithmetically must round to
/// integers themselves.
pub fn is_nonpositive_integer(x: f64) -> bool {
    x <= 0.0 && x.fract() == 0.0
}

/// `(ln|Gamma(x)|, sign(Gamma(x)))` for non-integer `x` (or positive `x`).
/// Negative non-integer arguments go through the reflection formula.
pub fn ln_gamma_signed(x: f64) -> Result<(f64, f64)> {
    if x > 0.0 {
        return Ok((ln_gamma(x), 1.0));
    }
    if is_nonpositive_integer(x) {
        return Err(Error::Domain(format!(
            "Gamma pole at nonpositive integer {x}"
        )));
    }
    // ln|Gamma(x)| = ln(pi) - ln|sin(pi x)| - ln Gamma(1 - x), x < 0 non-integer.
    let log = std::f64::consts::PI.ln()
        - (std::f64::consts::PI * x).sin().abs().ln()
        - ln_gamma(1.0 - x);
    // Gamma alternates sign between consecutive negative integers:
    // negative on (-1,0), positive on (-2,-1), ...
    let sign = if (x.floor() as i64).rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    };
    Ok((log, sign))
}

/// Stirling tail `S(x)` of `ln Gamma(x) ~ (x-1/2) ln x - x + ln(2 pi)/2 + S(x)`;
/// below 2e-15 truncation error for `x >= 20`.
fn stirling_correction(x: f64) -> f64 {
    let x2 = x * x;
    (1.0 / 12.0 - (1.0 / 360.0 - (1.0 / 1260.0 - 1.0 / (1680.0 * x2)) / x2) / x2) / x
}

/// `ln(Gamma(z+r)/Gamma(z))` for `z, z+r >= 20`, arranged so the large
/// Stirling main terms never meet in a subtraction.
fn ln_rising_large(z: f64, r: f64) -> f64 {
    (z - 0.5) * (r / z).ln_1p() + r * (z + r).ln() - r + stirling_correction(z + r)
        - stirling_correction(z)
}

const LARGE_ARG: f64 = 20.0;

/// Generalized rising factorial `t^(r) = Gamma(t+r)/Gamma(t)`.
///
/// Computed via log-gamma differences with sign tracking; returns 0 when
/// `t` is a nonpositive integer but `t+r` is not, and 1 when `r == 0`.
pub fn rising_factorial(t: f64, r: f64) -> Result<f64> {
    if r == 0.0 {
        // ratio limit Gamma(t+r)/Gamma(t) -> 1, valid at poles too
        return Ok(1.0);
    }
    let top = t + r;
    let t_pole = is_nonpositive_integer(t);
    let top_pole = is_nonpositive_integer(top);
    if t_pole && top_pole {
        return Err(Error::Domain(format!(
            "rising factorial undefined: both {t} and {top} are nonpositive integers"
        )));
    }
    if t_pole {
        return Ok(0.0);
    }
    if top_pole {
        return Err(Error::Domain(format!(
            "rising factorial undefined: {t}+{r}={top} is a nonpositive integer"
        )));
    }
    let (log, sign) = if t >= LARGE_ARG && top >= LARGE_ARG {
        (ln_rising_large(t, r), 1.0)
    } else {
        let (ln_top, sign_top) = ln_gamma_signed(top)?;
        let (ln_bot, sign_bot) = ln_gamma_signed(t)?;
        (ln_top - ln_bot, sign_top * sign_bot)
    };
    if log > MAX_EXP_ARG {
        return Err(Error::Overflow { log_value: log });
    }
    Ok(sign * log.exp())
}

/// The fractional-sum kernel `w_k = k^(nu-1)/Gamma(nu)`, `k = 1..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelWeights {
    nu: f64,
    weights: Vec<f64>,
}

impl KernelWeights {
    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// `w_k`, 1-based.
    pub fn w(&self, k: usize) -> f64 {
        self.weights[k - 1]
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }
}

/// Kernel weights via the multiplicative recurrence seeded at `w_1 = 1`:
/// `w_k = w_{k-1} (k + nu - 2)/(k - 1)`. Never calls gamma per term, so
/// there is no cancellation and the result is exact at `nu = 1`.
pub fn kernel_weights(nu: f64, n: usize) -> Result<KernelWeights> {
    if !(nu > 0.0) {
        return Err(Error::Domain(format!("kernel order nu must be > 0, got {nu}")));
    }
    if n == 0 {
        return Err(Error::Domain("kernel horizon n must be >= 1".into()));
    }
    let mut weights = Vec::with_capacity(n);
    weights.push(1.0);
    for k in 2..=n {
        let prev = weights[k - 2];
        weights.push(prev * (k as f64 + nu - 2.0) / (k as f64 - 1.0));
    }
    Ok(KernelWeights { nu, weights })
}

/// Partial-sum closed form `sum_{k=1}^n w_k = n^(nu)/Gamma(nu+1)`; 0 at `n = 0`.
pub fn cumulative_kernel(nu: f64, n: u64) -> Result<f64> {
    if !(nu > 0.0) {
        return Err(Error::Domain(format!("kernel order nu must be > 0, got {nu}")));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let n = n as f64;
    // n^(nu)/Gamma(nu+1) = Gamma(n+nu)/(Gamma(n) Gamma(nu+1)), all positive;
    // the cancellation-free ratio path keeps large n accurate to ~1 ulp
    let log = if n >= LARGE_ARG {
        ln_rising_large(n, nu) - ln_gamma(nu + 1.0)
    } else {
        ln_gamma(n + nu) - ln_gamma(n) - ln_gamma(nu + 1.0)
    };
    if log > MAX_EXP_ARG {
        return Err(Error::Overflow { log_value: log });
    }
    Ok(log.exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rising_factorial_unit_exponent_is_identity() {
        assert_eq!(rising_factorial(2.5, 0.0).unwrap(), 1.0);
        assert_eq!(rising_factorial(-3.0, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn rising_factorial_convention_zero() {
        assert_eq!(rising_factorial(-2.0, 0.5).unwrap(), 0.0);
        assert_eq!(rising_factorial(0.0, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn rising_factorial_integer_step() {
        assert!((rising_factorial(4.0, 1.0).unwrap() - 4.0).abs() < 1e-13);
    }

    #[test]
    fn rising_factorial_gamma_oracle() {
        // Gamma(3.5)/Gamma(3), frozen from a 60-digit computation
        let expected = 1.661675485223921275592032;
        let got = rising_factorial(3.0, 0.5).unwrap();
        assert!((got - expected).abs() / expected < 1e-13, "got {got}");
    }

    #[test]
    fn rising_factorial_double_pole_is_error() {
        assert!(matches!(
            rising_factorial(-2.0, 1.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            rising_factorial(3.0, -5.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn rising_factorial_negative_non_integer_signs() {
        // (-1.5)^(1) = Gamma(-0.5)/Gamma(-1.5): both negative-region gammas
        // with opposite alternation, ratio equals t itself for r = 1
        let got = rising_factorial(-1.5, 1.0).unwrap();
        assert!((got - (-1.5)).abs() < 1e-12, "got {got}");
        let got = rising_factorial(-2.5, 1.0).unwrap();
        assert!((got - (-2.5)).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn rising_factorial_overflow_reports_log() {
        match rising_factorial(3.0, 400.0) {
            Err(Error::Overflow { log_value }) => assert!(log_value > MAX_EXP_ARG),
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn kernel_weights_half_order() {
        let w = kernel_weights(0.5, 3).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 0.5, 0.375]);
    }

    #[test]
    fn kernel_weights_order_one_is_all_ones() {
        let w = kernel_weights(1.0, 5).unwrap();
        assert_eq!(w.as_slice(), &[1.0; 5]);
    }

    #[test]
    fn kernel_weights_first_is_exactly_one() {
        for nu in [0.1, 0.3, 0.9, 1.7] {
            assert_eq!(kernel_weights(nu, 1).unwrap().w(1), 1.0);
        }
    }

    #[test]
    fn kernel_weights_match_gamma_route() {
        let gamma_nu = ln_gamma(0.7).exp();
        let w = kernel_weights(0.7, 200).unwrap();
        for k in 1..=200usize {
            let direct = rising_factorial(k as f64, 0.7 - 1.0).unwrap() / gamma_nu;
            assert!(
                (w.w(k) - direct).abs() / direct.abs() < 1e-12,
                "k={k}: {} vs {}",
                w.w(k),
                direct
            );
        }
    }

    #[test]
    fn kernel_weights_strictly_decreasing_below_one() {
        let w = kernel_weights(0.4, 100).unwrap();
        for k in 2..=100usize {
            assert!(w.w(k) > 0.0);
            assert!(w.w(k) < w.w(k - 1));
        }
    }

    #[test]
    fn kernel_rejects_nonpositive_order() {
        assert!(kernel_weights(0.0, 3).is_err());
        assert!(kernel_weights(-0.5, 3).is_err());
        assert!(cumulative_kernel(0.0, 3).is_err());
    }

    #[test]
    fn cumulative_kernel_values() {
        assert_eq!(cumulative_kernel(0.5, 0).unwrap(), 0.0);
        assert!((cumulative_kernel(1.0, 7).unwrap() - 7.0).abs() < 1e-12);
        // 3^(0.5)/Gamma(1.5) = 1.875 exactly
        assert!((cumulative_kernel(0.5, 3).unwrap() - 1.875).abs() < 1e-13);
    }

    #[test]
    fn partial_sums_telescope() {
        for nu in [0.1, 0.5, 0.9] {
            let w = kernel_weights(nu, 10_000).unwrap();
            // compensated accumulation: the invariant is about the weights,
            // not about left-to-right f64 rounding order
            let (mut acc, mut comp) = (0.0f64, 0.0f64);
            for (i, wk) in w.as_slice().iter().enumerate() {
                let y = wk - comp;
                let t = acc + y;
                comp = (t - acc) - y;
                acc = t;
                let n = (i + 1) as u64;
                if n % 997 == 0 || n <= 3 {
                    let closed = cumulative_kernel(nu, n).unwrap();
                    assert!(
                        (acc - closed).abs() / closed < 1e-11,
                        "nu={nu} n={n}: {acc} vs {closed}"
                    );
                }
            }
        }
    }
}
