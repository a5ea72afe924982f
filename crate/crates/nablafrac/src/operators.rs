//! Nabla difference, fractional sum, fractional difference, the power
//! rule, and the initial-value-problem representation.
//!
//! Grid points are addressed by integer offset from the grid's base, so
//! an operation "based at a" takes `a_off` with `a = f.base() + a_off`.

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::kernel::{self, KernelWeights};
use crate::par;
use statrs::function::gamma::ln_gamma;

/// Backward difference `f(t) - f(t-1)` at offset `t_off`.
pub fn nabla(f: &GridFunction, t_off: i64) -> Result<f64> {
    Ok(f.value(t_off)? - f.value(t_off - 1)?)
}

/// The nu-th order fractional sum based at `a_off`, evaluated at `t_off`:
/// `(1/Gamma(nu)) sum_{s=a+1}^{t} (t-s+1)^(nu-1) f(s)`, computed as the
/// kernel-weight convolution. Zero at `t_off == a_off` (empty sum).
pub fn nabla_sum(f: &GridFunction, nu: f64, a_off: i64, t_off: i64) -> Result<f64> {
    if t_off < a_off {
        return Err(Error::Index(format!(
            "fractional sum needs t >= a (offsets {t_off} < {a_off})"
        )));
    }
    let n = (t_off - a_off) as usize;
    if n == 0 {
        if !(nu > 0.0) {
            return Err(Error::Domain(format!("sum order nu must be > 0, got {nu}")));
        }
        return Ok(0.0);
    }
    let w = kernel::kernel_weights(nu, n)?;
    nabla_sum_with_weights(f, &w, a_off, t_off)
}

/// As `nabla_sum`, reusing precomputed kernel weights (they depend only
/// on nu and must cover `t_off - a_off` terms).
pub fn nabla_sum_with_weights(
    f: &GridFunction,
    w: &KernelWeights,
    a_off: i64,
    t_off: i64,
) -> Result<f64> {
    let n = (t_off - a_off) as usize;
    if n == 0 {
        return Ok(0.0);
    }
    if w.len() < n {
        return Err(Error::Index(format!(
            "kernel weights cover {} terms, need {n}",
            w.len()
        )));
    }
    let mut acc = 0.0;
    for k in 1..=n {
        acc += w.w(k) * f.value(t_off - k as i64 + 1)?;
    }
    Ok(acc)
}

/// Fractional-sum trajectory on `t_off = a_off ..= last`, kernel weights
/// computed once and points evaluated in parallel.
pub fn nabla_sum_trajectory(
    f: &GridFunction,
    nu: f64,
    a_off: i64,
    last: i64,
) -> Result<GridFunction> {
    if last < a_off {
        return Err(Error::Index("trajectory range is empty".into()));
    }
    let n = (last - a_off) as usize;
    let w = if n > 0 {
        kernel::kernel_weights(nu, n)?
    } else {
        kernel::kernel_weights(nu, 1)?
    };
    if !(nu > 0.0) {
        return Err(Error::Domain(format!("sum order nu must be > 0, got {nu}")));
    }
    let vals: Vec<Result<f64>> = par::map_range(n + 1, |i| {
        nabla_sum_with_weights(f, &w, a_off, a_off + i as i64)
    });
    let mut out = Vec::with_capacity(n + 1);
    for v in vals {
        out.push(v?);
    }
    GridFunction::new(f.base(), a_off, out)
}

/// Smallest integer `N` with `N-1 < nu <= N`.
pub fn diff_order(nu: f64) -> u32 {
    nu.ceil() as u32
}

/// The nu-th order nabla fractional difference based at `a_off`:
/// `nabla^N` of the `(N-nu)`-th fractional sum, `N = ceil(nu)`. At integer
/// nu the inner sum has order 0 and this is the plain N-th backward
/// difference.
pub fn nabla_diff(f: &GridFunction, nu: f64, a_off: i64, t_off: i64) -> Result<f64> {
    if !(nu > 0.0) {
        return Err(Error::Domain(format!("difference order nu must be > 0, got {nu}")));
    }
    let big_n = diff_order(nu) as i64;
    if t_off < a_off + big_n {
        return Err(Error::Index(format!(
            "fractional difference needs t >= a+{big_n} (offsets {t_off}, {a_off})"
        )));
    }
    let inner_order = big_n as f64 - nu;
    // N-th backward difference of g at t: sum_i (-1)^i C(N,i) g(t-i)
    let mut acc = 0.0;
    let mut binom = 1.0f64;
    for i in 0..=big_n {
        let g = if inner_order == 0.0 {
            f.value(t_off - i)?
        } else {
            nabla_sum(f, inner_order, a_off, t_off - i)?
        };
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        acc += sign * binom * g;
        binom = binom * (big_n - i) as f64 / (i + 1) as f64;
    }
    Ok(acc)
}

/// Closed form of the fractional sum of a rising power:
/// `Gamma(mu+1)/Gamma(mu+nu+1) * n^(mu+nu)` with `n = t - a` (offset
/// difference).
pub fn power_rule(nu: f64, mu: f64, n: i64) -> Result<f64> {
    if !(nu > 0.0) {
        return Err(Error::Domain(format!("power rule needs nu > 0, got {nu}")));
    }
    if !(mu > -1.0) {
        return Err(Error::Domain(format!("power rule needs mu > -1, got {mu}")));
    }
    if n < 0 {
        return Err(Error::Index(format!("power rule needs t >= a, got offset {n}")));
    }
    // mu+1 > 0 and mu+nu+1 > 1, so both gammas are positive
    let ratio = (ln_gamma(mu + 1.0) - ln_gamma(mu + nu + 1.0)).exp();
    Ok(ratio * kernel::rising_factorial(n as f64, mu + nu)?)
}

/// Unique solution value of the order-nu initial value problem with known
/// right-hand side: `(t-a+1)^(nu-1)/Gamma(nu) * c + nabla_sum(rhs, nu, a, t)`.
pub fn ivp_representation(
    c: f64,
    nu: f64,
    a_off: i64,
    rhs: &GridFunction,
    t_off: i64,
) -> Result<f64> {
    if !(nu > 0.0 && nu < 1.0) {
        return Err(Error::Domain(format!("IVP representation needs nu in (0,1), got {nu}")));
    }
    let n = t_off - a_off;
    if n < 0 {
        return Err(Error::Index(format!("IVP representation needs t >= a, got offset {n}")));
    }
    let gamma_nu = ln_gamma(nu).exp();
    let head = kernel::rising_factorial((n + 1) as f64, nu - 1.0)? / gamma_nu;
    Ok(head * c + nabla_sum(rhs, nu, a_off, t_off)?)
}
