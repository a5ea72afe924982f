//! Summation-equation maps for the two self-adjoint nabla fractional
//! difference equations, contraction certification, Picard iteration,
//! and residual verification.
//!
//! The nonlinear equation is `nabla_{a-1}^nu (p nabla y)(t) + F(t, y(t-1)) = 0`
//! with `lim y = M`; its solutions are exactly the fixed points of
//!
//! `(Ty)(t) = M + sum_{s=t+1}^inf (1/p(s)) sum_{tau=a+1}^s w_{s-tau+1} F(tau, y(tau-1))`.
//!
//! The linear equation replaces `F(tau, y(tau-1))` by `q(tau) y(tau-1) - f(tau)`
//! and admits a base shift `b >= a` that makes the map contractive.
//!
//! All sequences are indexed by integer offset from the base `a`; infinite
//! series are truncated at the configured horizon with a ratio-test tail
//! certificate, and problems whose terms decay subgeometrically are
//! rejected rather than silently under-resolved.

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::kernel::{self, KernelWeights};
use crate::operators;
use crate::par;

/// Sequence on the grid, indexed by offset from the base.
pub type SeqFn = dyn Fn(i64) -> f64 + Sync + Send;
/// Forcing term `F(t, u)`, `t` given as offset from the base.
pub type ForcingFn = dyn Fn(i64, f64) -> f64 + Sync + Send;

pub struct NonlinearProblem {
    /// Base point `a` (any real; grid offsets count from it).
    pub a: f64,
    /// Fractional order, in (0, 1).
    pub nu: f64,
    /// Asymptotic limit `M >= 0`.
    pub limit: f64,
    /// `p(a + j) > 0`.
    pub p: Box<SeqFn>,
    /// `F(a + j, u) >= 0` for `u >= 0`.
    pub forcing: Box<ForcingFn>,
    /// Declared uniform Lipschitz constant of `F` in `u`.
    pub lipschitz: f64,
}

pub struct LinearProblem {
    pub a: f64,
    pub nu: f64,
    pub limit: f64,
    /// `p(a + j) > 0`.
    pub p: Box<SeqFn>,
    /// `q(a + j) >= 0`.
    pub q: Box<SeqFn>,
    /// forcing sequence, any sign.
    pub f: Box<SeqFn>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Sup,
    Weighted,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Grid truncation: values computed for offsets `-1 ..= horizon`.
    pub horizon: i64,
    /// Certified bound on the neglected series tail.
    pub tail_tol: f64,
    /// Fixed-point stopping threshold in the selected metric.
    pub fp_tol: f64,
    pub max_iter: usize,
    pub metric: Metric,
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::Domain(format!("horizon must be >= 2, got {}", self.horizon)));
        }
        if !(self.tail_tol > 0.0) || !(self.fp_tol > 0.0) {
            return Err(Error::Domain("tolerances must be > 0".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Domain("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ContractionReport {
    /// beta (sup metric) or alpha (weighted metric) estimate.
    pub constant: f64,
    /// Certified bound on the neglected part of the constant.
    pub tail_bound: f64,
    pub metric: Metric,
    /// Weighted case only: bracketing interval for `L = lim w(t)`;
    /// the constant uses the conservative lower endpoint.
    pub weight_limit: Option<(f64, f64)>,
    /// `constant + tail_bound < 1`.
    pub passes: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct MembershipFlags {
    /// `y(t) >= M - 1e-12` everywhere.
    pub above_limit: bool,
    /// `y(t) - y(t-1) <= 1e-12` from the base on.
    pub nonincreasing: bool,
    /// `|y(a) - y(a-1)| <= 1e-12`.
    pub flat_at_base: bool,
}

impl MembershipFlags {
    pub fn all(&self) -> bool {
        self.above_limit && self.nonincreasing && self.flat_at_base
    }
}

#[derive(Debug, Clone)]
pub struct SolverReport {
    pub iterations: usize,
    /// Metric distance of the last Picard step.
    pub final_defect: f64,
    /// Max |residual| over the buffered interior grid.
    pub max_residual: f64,
    pub membership: MembershipFlags,
    /// `|y(horizon) - M|` plus the certified tail bound.
    pub limit_gap: f64,
    pub contraction: ContractionReport,
    /// Per-iteration Picard defects, for rate checks.
    pub defects: Vec<f64>,
}

const MEMBERSHIP_TOL: f64 = 1e-12;
const RATIO_WINDOW: usize = 10;

fn p_at(p: &SeqFn, j: i64) -> Result<f64> {
    let v = p(j);
    if !(v > 0.0) {
        return Err(Error::Model(format!("p at offset {j} is {v}, must be > 0")));
    }
    Ok(v)
}

/// Geometric ratio-test bound on the tail of a nonnegative series whose
/// computed terms are `terms`. The certified ratio is the largest of the
/// last `RATIO_WINDOW` consecutive ratios, plus an extrapolation of any
/// upward drift: ratios behaving like `r_inf - C/s` rise by about
/// `d * horizon` beyond the window when `d` is the observed per-step
/// rise, so that climb is added before the `< 1 - 1e-3` check. Series
/// with ratios tending to 1 (subgeometric decay) are thereby refused at
/// every horizon. Returns `u_last * r / (1 - r)`; an all-zero series
/// certifies a zero tail.
pub fn ratio_tail(terms: &[f64]) -> Result<f64> {
    if !terms.is_empty()
        && terms
            .iter()
            .rev()
            .take(RATIO_WINDOW + 1)
            .all(|&u| u == 0.0)
    {
        // terms decayed to exactly zero (zero forcing, or underflow of a
        // certified-decaying series): nothing is being neglected
        return Ok(0.0);
    }
    if terms.len() < RATIO_WINDOW + 1 {
        return Err(Error::Tail(format!(
            "need {} terms for the ratio test, have {}",
            RATIO_WINDOW + 1,
            terms.len()
        )));
    }
    let window = &terms[terms.len() - RATIO_WINDOW - 1..];
    let mut ratios = Vec::with_capacity(RATIO_WINDOW);
    for pair in window.windows(2) {
        if !(pair[0] > 0.0) {
            return Err(Error::Tail(format!(
                "nonpositive term {} in the ratio window",
                pair[0]
            )));
        }
        ratios.push(pair[1] / pair[0]);
    }
    let r_max = ratios.iter().cloned().fold(0.0f64, f64::max);
    let drift =
        (ratios[ratios.len() - 1] - ratios[0]) / (ratios.len() - 1) as f64;
    let r = r_max + drift.max(0.0) * terms.len() as f64;
    if r >= 1.0 - 1e-3 {
        return Err(Error::Tail(format!(
            "series convergence not certifiable: trailing term ratio {r} >= {}",
            1.0 - 1e-3
        )));
    }
    Ok(terms[terms.len() - 1] * r / (1.0 - r))
}

/// Tail bound for the outer series with a constant forcing envelope `b_sup`:
/// terms `u_j = b_sup * cumulative_kernel(nu, j - shift) / p(j)` for
/// `j = shift+1 ..= horizon`.
pub fn envelope_tail(
    nu: f64,
    p: &SeqFn,
    b_sup: f64,
    shift: i64,
    horizon: i64,
) -> Result<f64> {
    if b_sup < 0.0 {
        return Err(Error::Model(format!("forcing envelope {b_sup} is negative")));
    }
    let mut terms = Vec::with_capacity((horizon - shift).max(0) as usize);
    for j in shift + 1..=horizon {
        terms.push(b_sup * kernel::cumulative_kernel(nu, (j - shift) as u64)? / p_at(p, j)?);
    }
    ratio_tail(&terms)
}

/// Tail bound for a nonlinear problem: the forcing is enveloped over
/// `u in [M, y_bound]` via the declared Lipschitz constant.
pub fn tail_bound_nonlinear(
    prob: &NonlinearProblem,
    y_bound: f64,
    horizon: i64,
) -> Result<f64> {
    let mut b_sup = 0.0f64;
    for j in 1..=horizon {
        let v = (prob.forcing)(j, prob.limit);
        if v < 0.0 {
            return Err(Error::Model(format!("F at offset {j} is {v}, must be >= 0")));
        }
        b_sup = b_sup.max(v + prob.lipschitz * (y_bound - prob.limit).max(0.0));
    }
    envelope_tail(prob.nu, &prob.p, b_sup, 0, horizon)
}

/// Tail bound for a linear problem with the envelope `q * y_bound + |f|`.
pub fn tail_bound_linear(prob: &LinearProblem, y_bound: f64, horizon: i64) -> Result<f64> {
    let mut b_sup = 0.0f64;
    for j in 1..=horizon {
        let qv = (prob.q)(j);
        if qv < 0.0 {
            return Err(Error::Model(format!("q at offset {j} is {qv}, must be >= 0")));
        }
        b_sup = b_sup.max(qv * y_bound.abs() + (prob.f)(j).abs());
    }
    envelope_tail(prob.nu, &prob.p, b_sup, 0, horizon)
}

/// Forward-running kernel convolution: `out[j-1] = sum_{k=1}^{j} w_k g[j-k]`
/// for `j = 1 ..= g.len()`. Points are independent and evaluated in
/// parallel; each inner sum is sequential, so the result is deterministic.
pub fn forcing_convolution(w: &KernelWeights, g: &[f64]) -> Vec<f64> {
    par::map_range(g.len(), |i| {
        let j = i + 1;
        let mut acc = 0.0;
        for k in 1..=j {
            acc += w.w(k) * g[j - k];
        }
        acc
    })
}

/// Sequential reference for the convolution (bench comparison).
pub fn forcing_convolution_seq(w: &KernelWeights, g: &[f64]) -> Vec<f64> {
    par::map_range_seq(g.len(), |i| {
        let j = i + 1;
        let mut acc = 0.0;
        for k in 1..=j {
            acc += w.w(k) * g[j - k];
        }
        acc
    })
}

/// One application of the summation map in deviation form: `g` holds the
/// inner forcing values `g[i]` at offsets `shift+1+i`, and the output is
/// the deviation `d(t) = (Ty)(t) - M` on offsets `shift-1 ..= horizon`.
///
/// The iteration carries deviations rather than trajectories so that
/// consecutive-point differences keep full relative precision: the flux
/// `p(t)(y(t) - y(t-1))` multiplies those differences by a geometrically
/// growing `p`, and forming them from `M + d` would amplify the rounding
/// of the addition instead.
fn summation_map_dev(
    p: &SeqFn,
    w: &KernelWeights,
    g: &[f64],
    shift: i64,
    horizon: i64,
) -> Result<Vec<f64>> {
    let conv = forcing_convolution(w, g);
    let mut contrib = Vec::with_capacity(g.len());
    for (i, inner) in conv.iter().enumerate() {
        contrib.push(inner / p_at(p, shift + 1 + i as i64)?);
    }
    // suffix sums: d(m) = sum_{j > m} contrib, exact at the top
    let n = (horizon - shift) as usize;
    let mut out = vec![0.0; n + 2]; // offsets shift-1 ..= horizon
    let mut acc = 0.0;
    for m in (0..n).rev() {
        acc += contrib[m];
        out[m + 1] = acc; // offset shift + m
    }
    out[0] = out[1]; // nabla y(shift base) = 0 by the empty-sum convention
    Ok(out)
}

/// Index of offset `k` in a deviation vector starting at `shift - 1`.
fn dev_idx(shift: i64, k: i64) -> usize {
    (k - (shift - 1)) as usize
}

fn dev_to_grid(base: f64, limit: f64, shift: i64, dev: &[f64]) -> Result<GridFunction> {
    GridFunction::new(base, shift - 1, dev.iter().map(|d| limit + d).collect())
}

/// The map `T` of the nonlinear summation equation, truncated at the
/// configured horizon with a certified tail.
pub fn apply_t(
    y: &GridFunction,
    prob: &NonlinearProblem,
    cfg: &SolverConfig,
) -> Result<GridFunction> {
    cfg.validate()?;
    if y.first_offset() > -1 || y.last_offset() < cfg.horizon {
        return Err(Error::Index(format!(
            "iterate must store offsets -1..={}, has {}..={}",
            cfg.horizon,
            y.first_offset(),
            y.last_offset()
        )));
    }
    let mut dev = Vec::with_capacity(cfg.horizon as usize + 2);
    for k in -1..=cfg.horizon {
        dev.push(y.value(k)? - prob.limit);
    }
    let out = apply_t_dev(&dev, prob, cfg)?;
    dev_to_grid(y.base(), prob.limit, 0, &out)
}

/// Deviation-form body of the map `T`; `dev` spans offsets `-1 ..= horizon`.
fn apply_t_dev(dev: &[f64], prob: &NonlinearProblem, cfg: &SolverConfig) -> Result<Vec<f64>> {
    let n = cfg.horizon as usize;
    let mut g = Vec::with_capacity(n);
    let mut b_cur = 0.0f64;
    for j in 1..=cfg.horizon {
        let d = dev[dev_idx(0, j - 1)];
        if d < 0.0 {
            return Err(Error::Model(format!(
                "iterate leaves [M, inf) at offset {}: {} < {}",
                j - 1,
                prob.limit + d,
                prob.limit
            )));
        }
        let v = (prob.forcing)(j, prob.limit + d);
        if v < 0.0 {
            return Err(Error::Model(format!("F at offset {j} is {v}, must be >= 0")));
        }
        b_cur = b_cur.max(v);
        g.push(v);
    }
    let tail = envelope_tail(prob.nu, &prob.p, b_cur, 0, cfg.horizon)?;
    if tail > cfg.tail_tol {
        return Err(Error::Tail(format!(
            "neglected tail bound {tail} exceeds tail_tol {}",
            cfg.tail_tol
        )));
    }
    let w = kernel::kernel_weights(prob.nu, n)?;
    summation_map_dev(&prob.p, &w, &g, 0, cfg.horizon)
}

/// Sup-metric contraction constant `beta = K/Gamma(nu+1) * sum (s-a)^(nu)/p(s)`,
/// with a certified tail; passes iff `beta + tail < 1`.
pub fn contraction_constant_sup(
    prob: &NonlinearProblem,
    horizon: i64,
) -> Result<ContractionReport> {
    let (sum, tail) = kernel_series(prob.nu, &prob.p, horizon)?;
    let constant = prob.lipschitz * sum;
    let tail_bound = prob.lipschitz * tail;
    Ok(ContractionReport {
        constant,
        tail_bound,
        metric: Metric::Sup,
        weight_limit: None,
        passes: constant + tail_bound < 1.0,
    })
}

/// `sum_{j=1}^{horizon} cumulative_kernel(nu, j)/p(j)` with its ratio-test tail.
fn kernel_series(nu: f64, p: &SeqFn, horizon: i64) -> Result<(f64, f64)> {
    let mut terms = Vec::with_capacity(horizon as usize);
    for j in 1..=horizon {
        terms.push(kernel::cumulative_kernel(nu, j as u64)? / p_at(p, j)?);
    }
    let tail = ratio_tail(&terms)?;
    Ok((terms.iter().sum(), tail))
}

/// Weighted-metric contraction constant `alpha = K/(L Gamma(nu+1)) * sum ...`.
/// `L = lim exp(-sum 1/p)` is reported as a bracketing interval and the
/// conservative lower endpoint enters `alpha`.
pub fn contraction_constant_weighted(
    prob: &NonlinearProblem,
    horizon: i64,
) -> Result<ContractionReport> {
    let mut invp = Vec::with_capacity(horizon as usize + 1);
    for j in 0..=horizon {
        invp.push(1.0 / p_at(&prob.p, j)?);
    }
    let invp_tail = ratio_tail(&invp)?;
    let s: f64 = invp.iter().sum();
    let l_hi = (-s).exp();
    let l_lo = (-(s + invp_tail)).exp();
    let (sum, tail) = kernel_series(prob.nu, &prob.p, horizon)?;
    let constant = prob.lipschitz * sum / l_lo;
    let tail_bound = prob.lipschitz * tail / l_lo;
    Ok(ContractionReport {
        constant,
        tail_bound,
        metric: Metric::Weighted,
        weight_limit: Some((l_lo, l_hi)),
        passes: constant + tail_bound < 1.0,
    })
}

/// Weight trajectory `w(t) = exp(-sum_{s=a}^{t} 1/p(s))` on offsets
/// `-1 ..= horizon`; the empty sum at offset -1 gives `w = 1`.
fn weight_trajectory(p: &SeqFn, horizon: i64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(horizon as usize + 2);
    let mut acc = 0.0;
    out.push(1.0);
    for j in 0..=horizon {
        acc += 1.0 / p_at(p, j)?;
        out.push((-acc).exp());
    }
    Ok(out)
}

fn metric_distance(x: &[f64], y: &[f64], weights: Option<&[f64]>) -> f64 {
    let mut d = 0.0f64;
    for (i, (xv, yv)) in x.iter().zip(y.iter()).enumerate() {
        let diff = (xv - yv).abs();
        d = d.max(match weights {
            Some(w) => diff / w[i],
            None => diff,
        });
    }
    d
}

/// Deterministic sampling check of the declared Lipschitz constant, which
/// must hold uniformly on `u >= 0` (not just above the limit `M`); errors
/// if a sampled difference quotient exceeds `K (1 + 1e-6)`.
pub fn check_lipschitz(prob: &NonlinearProblem, horizon: i64) -> Result<()> {
    let m = prob.limit;
    let us = [
        0.0,
        0.25,
        0.5,
        1.0,
        2.0,
        5.0,
        10.0,
        m,
        m + 0.25,
        m + 1.0,
        m + 10.0,
    ];
    let step = (horizon / 16).max(1);
    let mut j = 1;
    while j <= horizon {
        for (i, &u) in us.iter().enumerate() {
            for &v in &us[i + 1..] {
                if v == u {
                    continue;
                }
                let quot = ((prob.forcing)(j, u) - (prob.forcing)(j, v)).abs() / (v - u).abs();
                if quot > prob.lipschitz * (1.0 + 1e-6) {
                    return Err(Error::Model(format!(
                        "sampled Lipschitz quotient {quot} at offset {j} exceeds declared K {}",
                        prob.lipschitz
                    )));
                }
            }
        }
        j += step;
    }
    Ok(())
}

/// Trajectory membership in the invariant set: `y >= M`, nonincreasing
/// from the base on, and flat across the first step.
pub fn verify_membership(y: &GridFunction, limit: f64) -> MembershipFlags {
    let first = y.first_offset();
    let above_limit = y.values().iter().all(|&v| v >= limit - MEMBERSHIP_TOL);
    let mut nonincreasing = true;
    for k in first + 1..=y.last_offset() {
        if y.value(k).unwrap() - y.value(k - 1).unwrap() > MEMBERSHIP_TOL {
            nonincreasing = false;
            break;
        }
    }
    let flat_at_base = y.len() >= 2
        && (y.value(first + 1).unwrap() - y.value(first).unwrap()).abs() <= MEMBERSHIP_TOL;
    MembershipFlags {
        above_limit,
        nonincreasing,
        flat_at_base,
    }
}

/// `nabla_{b-1}^{nu} (p nabla y)(t)` by finite sums only (no truncation):
/// the flux `x(s) = p(s)(y(s) - y(s-1))` on offsets `shift ..= t`, then
/// the backward difference of its `(1-nu)`-th fractional sum.
fn frac_diff_of_flux<D>(
    base: f64,
    nu: f64,
    p: &SeqFn,
    shift: i64,
    t_off: i64,
    nabla_y: D,
) -> Result<f64>
where
    D: Fn(i64) -> Result<f64>,
{
    if t_off < shift + 1 {
        return Err(Error::Index(format!(
            "residual needs t at offset >= {}, got {t_off}",
            shift + 1
        )));
    }
    let mut xvals = Vec::with_capacity((t_off - shift + 1) as usize);
    for j in shift..=t_off {
        xvals.push(p_at(p, j)? * nabla_y(j)?);
    }
    let x = GridFunction::new(base, shift, xvals)?;
    let g_t = operators::nabla_sum(&x, 1.0 - nu, shift - 1, t_off)?;
    let g_prev = operators::nabla_sum(&x, 1.0 - nu, shift - 1, t_off - 1)?;
    Ok(g_t - g_prev)
}

/// Residual of the nonlinear equation at offset `t_off >= 1`; zero for
/// exact solutions.
pub fn residual_nonlinear(
    y: &GridFunction,
    prob: &NonlinearProblem,
    t_off: i64,
) -> Result<f64> {
    let d = frac_diff_of_flux(y.base(), prob.nu, &prob.p, 0, t_off, |j| {
        Ok(y.value(j)? - y.value(j - 1)?)
    })?;
    Ok(d + (prob.forcing)(t_off, y.value(t_off - 1)?))
}

/// Deviation-form nonlinear residual; avoids the precision loss of
/// forming `nabla y` from stored `M + d` values when `p` is large.
fn residual_nonlinear_dev(dev: &[f64], prob: &NonlinearProblem, t_off: i64) -> Result<f64> {
    let d = frac_diff_of_flux(prob.a, prob.nu, &prob.p, 0, t_off, |j| {
        Ok(dev[dev_idx(0, j)] - dev[dev_idx(0, j - 1)])
    })?;
    Ok(d + (prob.forcing)(t_off, prob.limit + dev[dev_idx(0, t_off - 1)]))
}

/// Residual of the linear equation rebased at `shift` (the solver's `b`),
/// at offset `t_off >= shift + 1`.
pub fn residual_linear(
    y: &GridFunction,
    prob: &LinearProblem,
    shift: i64,
    t_off: i64,
) -> Result<f64> {
    let d = frac_diff_of_flux(y.base(), prob.nu, &prob.p, shift, t_off, |j| {
        Ok(y.value(j)? - y.value(j - 1)?)
    })?;
    Ok(d + (prob.q)(t_off) * y.value(t_off - 1)? - (prob.f)(t_off))
}

fn residual_linear_dev(
    dev: &[f64],
    prob: &LinearProblem,
    shift: i64,
    t_off: i64,
) -> Result<f64> {
    let d = frac_diff_of_flux(prob.a, prob.nu, &prob.p, shift, t_off, |j| {
        Ok(dev[dev_idx(shift, j)] - dev[dev_idx(shift, j - 1)])
    })?;
    Ok(d + (prob.q)(t_off) * (prob.limit + dev[dev_idx(shift, t_off - 1)]) - (prob.f)(t_off))
}

fn max_abs_residual<R>(first: i64, last: i64, res: R) -> Result<f64>
where
    R: Fn(i64) -> Result<f64> + Sync,
{
    let vals: Vec<Result<f64>> =
        par::map_range((last - first + 1).max(0) as usize, |i| res(first + i as i64));
    let mut m = 0.0f64;
    for v in vals {
        m = m.max(v?.abs());
    }
    Ok(m)
}

/// Picard iteration of `T` from `y_0 = M` to the unique fixed point.
pub fn solve_nonlinear(
    prob: &NonlinearProblem,
    cfg: &SolverConfig,
) -> Result<(GridFunction, SolverReport)> {
    cfg.validate()?;
    if !(prob.nu > 0.0 && prob.nu < 1.0) {
        return Err(Error::Domain(format!("nu must lie in (0,1), got {}", prob.nu)));
    }
    if prob.limit < 0.0 {
        return Err(Error::Domain(format!("M must be >= 0, got {}", prob.limit)));
    }
    check_lipschitz(prob, cfg.horizon)?;
    let contraction = match cfg.metric {
        Metric::Sup => contraction_constant_sup(prob, cfg.horizon)?,
        Metric::Weighted => contraction_constant_weighted(prob, cfg.horizon)?,
    };
    if !contraction.passes {
        return Err(Error::NoContraction(contraction));
    }
    let weights = match cfg.metric {
        Metric::Sup => None,
        Metric::Weighted => Some(weight_trajectory(&prob.p, cfg.horizon)?),
    };
    let mut dev = vec![0.0f64; cfg.horizon as usize + 2];
    let mut defects = Vec::new();
    for it in 1..=cfg.max_iter {
        let next = apply_t_dev(&dev, prob, cfg)?;
        let d = metric_distance(&dev, &next, weights.as_deref());
        defects.push(d);
        dev = next;
        if d < cfg.fp_tol {
            let report = nonlinear_report(&dev, prob, cfg, contraction, it, defects)?;
            let y = dev_to_grid(prob.a, prob.limit, 0, &dev)?;
            return Ok((y, report));
        }
    }
    Err(Error::MaxIter {
        iterations: cfg.max_iter,
        final_defect: *defects.last().unwrap(),
    })
}

fn nonlinear_report(
    dev: &[f64],
    prob: &NonlinearProblem,
    cfg: &SolverConfig,
    contraction: ContractionReport,
    iterations: usize,
    defects: Vec<f64>,
) -> Result<SolverReport> {
    let y = dev_to_grid(prob.a, prob.limit, 0, dev)?;
    let membership = verify_membership(&y, prob.limit);
    let buffer = (cfg.horizon / 4).max(1);
    let last = (cfg.horizon - buffer).max(1);
    let max_residual = max_abs_residual(1, last, |t| residual_nonlinear_dev(dev, prob, t))?;
    let tail = tail_bound_nonlinear(prob, prob.limit + dev[dev_idx(0, 0)], cfg.horizon)?;
    let limit_gap = dev[dev_idx(0, cfg.horizon)].abs() + tail;
    Ok(SolverReport {
        iterations,
        final_defect: *defects.last().unwrap(),
        max_residual,
        membership,
        limit_gap,
        contraction,
        defects,
    })
}

/// Linear-map contraction constant at base shift `b`:
/// `gamma_b = sum_{s=b+1}^inf (1/p(s)) sum_{tau=b+1}^s w_{s-tau+1} q(tau)`,
/// returned with its certified tail.
pub fn linear_gamma(prob: &LinearProblem, shift: i64, horizon: i64) -> Result<(f64, f64)> {
    let n = (horizon - shift) as usize;
    if n == 0 {
        return Ok((0.0, 0.0));
    }
    let w = kernel::kernel_weights(prob.nu, n)?;
    let mut g = Vec::with_capacity(n);
    for i in 0..n {
        let qv = (prob.q)(shift + 1 + i as i64);
        if qv < 0.0 {
            return Err(Error::Model(format!(
                "q at offset {} is {qv}, must be >= 0",
                shift + 1 + i as i64
            )));
        }
        g.push(qv);
    }
    let conv = forcing_convolution(&w, &g);
    let mut terms = Vec::with_capacity(n);
    for (i, inner) in conv.iter().enumerate() {
        terms.push(inner / p_at(&prob.p, shift + 1 + i as i64)?);
    }
    let tail = ratio_tail(&terms)?;
    Ok((terms.iter().sum(), tail))
}

/// One application of the linear summation map at base shift `b`.
pub fn apply_t_linear(
    y: &GridFunction,
    prob: &LinearProblem,
    shift: i64,
    cfg: &SolverConfig,
) -> Result<GridFunction> {
    cfg.validate()?;
    let mut dev = Vec::with_capacity((cfg.horizon - shift) as usize + 2);
    for k in shift - 1..=cfg.horizon {
        dev.push(y.value(k)? - prob.limit);
    }
    let out = apply_t_linear_dev(&dev, prob, shift, cfg)?;
    dev_to_grid(y.base(), prob.limit, shift, &out)
}

/// Deviation-form body of the linear map; `dev` spans `shift-1 ..= horizon`.
fn apply_t_linear_dev(
    dev: &[f64],
    prob: &LinearProblem,
    shift: i64,
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    let n = (cfg.horizon - shift) as usize;
    let mut g = Vec::with_capacity(n);
    let mut envelope = 0.0f64;
    for i in 0..n {
        let j = shift + 1 + i as i64;
        let v = (prob.q)(j) * (prob.limit + dev[dev_idx(shift, j - 1)]) - (prob.f)(j);
        envelope = envelope.max(v.abs());
        g.push(v);
    }
    let tail = envelope_tail(prob.nu, &prob.p, envelope, shift, cfg.horizon)?;
    if tail > cfg.tail_tol {
        return Err(Error::Tail(format!(
            "neglected tail bound {tail} exceeds tail_tol {}",
            cfg.tail_tol
        )));
    }
    let w = kernel::kernel_weights(prob.nu, n.max(1))?;
    summation_map_dev(&prob.p, &w, &g, shift, cfg.horizon)
}

/// Margin below 1 required of `gamma_b + tail` in the base-shift search.
pub const LINEAR_SHIFT_MARGIN: f64 = 0.05;

/// Base-shift search plus Picard iteration for the linear equation.
/// Returns the minimal admissible shift `b` (as an offset from `a`), the
/// trajectory on offsets `b-1 ..= horizon`, and the report.
pub fn solve_linear(
    prob: &LinearProblem,
    cfg: &SolverConfig,
) -> Result<(i64, GridFunction, SolverReport)> {
    cfg.validate()?;
    if !(prob.nu > 0.0 && prob.nu < 1.0) {
        return Err(Error::Domain(format!("nu must lie in (0,1), got {}", prob.nu)));
    }
    if prob.limit < 0.0 {
        return Err(Error::Domain(format!("M must be >= 0, got {}", prob.limit)));
    }
    let mut chosen = None;
    let mut last_report = None;
    let mut last_tail_err = None;
    for b in 0..=cfg.horizon / 2 {
        match linear_gamma(prob, b, cfg.horizon) {
            Ok((gamma, tail)) => {
                let report = ContractionReport {
                    constant: gamma,
                    tail_bound: tail,
                    metric: Metric::Sup,
                    weight_limit: None,
                    passes: gamma + tail < 1.0 - LINEAR_SHIFT_MARGIN,
                };
                if report.passes {
                    chosen = Some((b, report));
                    break;
                }
                last_report = Some(report);
            }
            Err(e @ Error::Tail(_)) => last_tail_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    let (shift, contraction) = match chosen {
        Some(c) => c,
        None => {
            return Err(match last_report {
                Some(r) => Error::NoContraction(r),
                None => last_tail_err.unwrap_or_else(|| {
                    Error::Tail("no admissible base shift within the search range".into())
                }),
            })
        }
    };
    let mut dev = vec![0.0f64; (cfg.horizon - shift) as usize + 2];
    let mut defects = Vec::new();
    for it in 1..=cfg.max_iter {
        let next = apply_t_linear_dev(&dev, prob, shift, cfg)?;
        let d = metric_distance(&dev, &next, None);
        defects.push(d);
        dev = next;
        if d < cfg.fp_tol {
            let y = dev_to_grid(prob.a, prob.limit, shift, &dev)?;
            let membership = verify_membership(&y, prob.limit);
            let buffer = ((cfg.horizon - shift) / 4).max(1);
            let last = (cfg.horizon - buffer).max(shift + 1);
            let max_residual =
                max_abs_residual(shift + 1, last, |t| residual_linear_dev(&dev, prob, shift, t))?;
            let mut y_sup = 0.0f64;
            for v in y.values() {
                y_sup = y_sup.max(v.abs());
            }
            let tail = tail_bound_linear(prob, y_sup, cfg.horizon)?;
            let limit_gap = dev[dev_idx(shift, cfg.horizon)].abs() + tail;
            let report = SolverReport {
                iterations: it,
                final_defect: d,
                max_residual,
                membership,
                limit_gap,
                contraction,
                defects,
            };
            return Ok((shift, y, report));
        }
    }
    Err(Error::MaxIter {
        iterations: cfg.max_iter,
        final_defect: *defects.last().unwrap(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Rising factorial j^(0.5) for integer j >= 0.
    fn rf_half(j: i64) -> f64 {
        kernel::rising_factorial(j as f64, 0.5).unwrap()
    }

    /// p(s) = 2^(s-a) (s-a)^(0.5) on offsets >= 1; the family formula is
    /// zero at the base point, so the base value is pinned to 1.
    fn geometric_p() -> Box<SeqFn> {
        Box::new(|j| if j == 0 { 1.0 } else { 2f64.powi(j as i32) * rf_half(j) })
    }

    const GAMMA_1_5: f64 = 0.8862269254527580;

    fn closed_form_problem() -> NonlinearProblem {
        NonlinearProblem {
            a: 0.0,
            nu: 0.5,
            limit: 1.0,
            p: geometric_p(),
            forcing: Box::new(|_, _| GAMMA_1_5),
            lipschitz: 1e-12,
        }
    }

    fn cfg64() -> SolverConfig {
        SolverConfig {
            horizon: 64,
            tail_tol: 1e-10,
            fp_tol: 1e-12,
            max_iter: 100,
            metric: Metric::Sup,
        }
    }

    #[test]
    fn ratio_tail_geometric() {
        let terms: Vec<f64> = (1..=40).map(|j| 2f64.powi(-j)).collect();
        let tail = ratio_tail(&terms).unwrap();
        // true tail equals the last term for ratio 1/2
        assert!((tail - 2f64.powi(-40)).abs() < 1e-25);
    }

    #[test]
    fn ratio_tail_zero_series() {
        let terms = vec![0.0; 40];
        assert_eq!(ratio_tail(&terms).unwrap(), 0.0);
    }

    #[test]
    fn ratio_tail_rejects_subgeometric() {
        // p(s) = (s-a)^2 makes the outer terms ~ s^{nu-2}: convergent for
        // nu < 1 but with term ratios -> 1, so certification must refuse.
        let terms: Vec<f64> = (1..=200)
            .map(|j| {
                kernel::cumulative_kernel(0.5, j as u64).unwrap() / ((j * j) as f64)
            })
            .collect();
        assert!(matches!(ratio_tail(&terms), Err(Error::Tail(_))));
    }

    #[test]
    fn apply_t_zero_forcing_is_constant() {
        let prob = NonlinearProblem {
            forcing: Box::new(|_, _| 0.0),
            ..closed_form_problem()
        };
        let y = GridFunction::from_fn(0.0, -1, 64, |k| 1.0 + 2f64.powi(-(k.max(0)) as i32)).unwrap();
        let ty = apply_t(&y, &prob, &cfg64()).unwrap();
        assert!(ty.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn apply_t_closed_form() {
        // F = Gamma(1.5): the inner sum telescopes and (Ty)(t) = 1 + 2^{-t}
        let prob = closed_form_problem();
        let y = GridFunction::from_fn(0.0, -1, 64, |_| 1.0).unwrap();
        let ty = apply_t(&y, &prob, &cfg64()).unwrap();
        for t in 0..=40i64 {
            let want = 1.0 + 2f64.powi(-t as i32);
            assert!(
                (ty.value(t).unwrap() - want).abs() < 1e-12,
                "t={t}: {} vs {want}",
                ty.value(t).unwrap()
            );
        }
        assert_eq!(ty.value(-1).unwrap(), ty.value(0).unwrap());
    }

    #[test]
    fn contraction_sup_frozen_values() {
        // beta = K/Gamma(1.5), frozen from the 60-digit oracle
        let mut prob = closed_form_problem();
        prob.lipschitz = 0.4;
        let r = contraction_constant_sup(&prob, 64).unwrap();
        assert!(r.passes);
        let total = r.constant + r.tail_bound;
        assert!((0.4513..0.4514).contains(&total), "beta = {total}");

        prob.lipschitz = 1.0;
        let r = contraction_constant_sup(&prob, 64).unwrap();
        assert!(!r.passes);
        assert!((1.1283..1.1285).contains(&r.constant), "beta = {}", r.constant);
    }

    #[test]
    fn contraction_zero_lipschitz_passes() {
        let mut prob = closed_form_problem();
        prob.lipschitz = 0.0;
        let r = contraction_constant_sup(&prob, 64).unwrap();
        assert_eq!(r.constant, 0.0);
        assert!(r.passes);
        let r = contraction_constant_weighted(&prob, 64).unwrap();
        assert_eq!(r.constant, 0.0);
        assert!(r.passes);
    }

    #[test]
    fn weighted_constant_dominates_sup() {
        let mut prob = closed_form_problem();
        prob.lipschitz = 0.4;
        let sup = contraction_constant_sup(&prob, 64).unwrap();
        let wtd = contraction_constant_weighted(&prob, 64).unwrap();
        let (l_lo, l_hi) = wtd.weight_limit.unwrap();
        assert!(0.0 < l_lo && l_lo <= l_hi && l_hi < 1.0);
        assert!(wtd.constant > sup.constant);
        // frozen oracle: L = 0.151642890722864650 with p(0) = 1
        let l_true = 0.15164289072286465;
        assert!((l_lo - l_true).abs() < 1e-12, "l_lo {l_lo}");
        assert!((l_hi - l_true).abs() < 1e-12, "l_hi {l_hi}");
    }

    #[test]
    fn solve_zero_forcing_one_iteration() {
        let prob = NonlinearProblem {
            forcing: Box::new(|_, _| 0.0),
            lipschitz: 0.0,
            ..closed_form_problem()
        };
        let (y, report) = solve_nonlinear(&prob, &cfg64()).unwrap();
        assert_eq!(report.iterations, 1);
        assert!(y.values().iter().all(|&v| v == 1.0));
        assert_eq!(report.max_residual, 0.0);
        assert!(report.membership.all());
    }

    #[test]
    fn solve_closed_form() {
        let prob = closed_form_problem();
        let (y, report) = solve_nonlinear(&prob, &cfg64()).unwrap();
        assert_eq!(report.iterations, 2);
        for t in 0..=40i64 {
            let want = 1.0 + 2f64.powi(-t as i32);
            assert!((y.value(t).unwrap() - want).abs() <= 1e-8);
        }
        assert!(report.max_residual <= 1e-8, "residual {}", report.max_residual);
        assert!(report.membership.all());
    }

    #[test]
    fn solve_weighted_metric_converges() {
        // large p keeps both sum 1/p and the kernel series small, so the
        // weighted certificate passes as well
        let prob = NonlinearProblem {
            a: 0.0,
            nu: 0.5,
            limit: 1.0,
            p: Box::new(|j| {
                if j == 0 {
                    100.0
                } else {
                    100.0 * 2f64.powi(j as i32) * rf_half(j)
                }
            }),
            forcing: Box::new(|_, u| 0.4 / (1.0 + u)),
            lipschitz: 0.4,
        };
        let cfg = SolverConfig {
            metric: Metric::Weighted,
            ..cfg64()
        };
        let (y, report) = solve_nonlinear(&prob, &cfg).unwrap();
        assert!(report.contraction.passes);
        assert!(report.membership.all());
        assert!(report.max_residual < 1e-10);
        assert!(y.value(64).unwrap() - 1.0 < 1e-10);
    }

    #[test]
    fn lipschitz_check_catches_understated_constant() {
        let prob = NonlinearProblem {
            forcing: Box::new(|_, u| 0.4 / (1.0 + u)),
            lipschitz: 0.1, // true constant is 0.4
            ..closed_form_problem()
        };
        assert!(matches!(
            check_lipschitz(&prob, 64),
            Err(Error::Model(_))
        ));
    }

    #[test]
    fn no_contraction_is_reported() {
        let prob = NonlinearProblem {
            forcing: Box::new(|_, u| 1.0 / (1.0 + u)),
            lipschitz: 1.0,
            ..closed_form_problem()
        };
        match solve_nonlinear(&prob, &cfg64()) {
            Err(Error::NoContraction(r)) => assert!(r.constant > 1.0),
            other => panic!("expected NoContraction, got {other:?}"),
        }
    }

    #[test]
    fn residual_detects_perturbation() {
        let prob = closed_form_problem();
        let (y, _) = solve_nonlinear(&prob, &cfg64()).unwrap();
        let mut vals = y.values().to_vec();
        let idx = (5 - y.first_offset()) as usize;
        vals[idx] += 1e-4;
        let perturbed = GridFunction::new(y.base(), y.first_offset(), vals).unwrap();
        let clean = residual_nonlinear(&y, &prob, 5).unwrap().abs();
        let dirty = residual_nonlinear(&perturbed, &prob, 5).unwrap().abs();
        assert!(dirty > 1e3 * clean.max(1e-12), "clean {clean}, dirty {dirty}");
    }

    #[test]
    fn linear_trivial_problem() {
        let prob = LinearProblem {
            a: 0.0,
            nu: 0.5,
            limit: 1.0,
            p: geometric_p(),
            q: Box::new(|_| 0.0),
            f: Box::new(|_| 0.0),
        };
        let (b, y, report) = solve_linear(&prob, &cfg64()).unwrap();
        assert_eq!(b, 0);
        assert!(y.values().iter().all(|&v| v == 1.0));
        assert_eq!(report.max_residual, 0.0);
    }

    #[test]
    fn linear_closed_form_nonpositive_forcing() {
        // q = 0, f = -Gamma(1.5): y(t) = M + 2^{-t}, b = a
        let prob = LinearProblem {
            a: 0.0,
            nu: 0.5,
            limit: 1.0,
            p: geometric_p(),
            q: Box::new(|_| 0.0),
            f: Box::new(|_| -GAMMA_1_5),
        };
        let (b, y, report) = solve_linear(&prob, &cfg64()).unwrap();
        assert_eq!(b, 0);
        for t in 0..=40i64 {
            let want = 1.0 + 2f64.powi(-t as i32);
            assert!((y.value(t).unwrap() - want).abs() <= 1e-8);
        }
        assert!(report.max_residual <= 1e-8);
        assert!(report.membership.flat_at_base);
    }

    #[test]
    fn linear_base_shift_search() {
        // q(tau) = 4 * 2^{-tau}: gamma_0 ~ 1.716 >= 1, gamma_1 ~ 0.309 < 0.95
        let prob = LinearProblem {
            a: 0.0,
            nu: 0.5,
            limit: 1.0,
            p: geometric_p(),
            q: Box::new(|j| 4.0 * 2f64.powi(-j as i32)),
            f: Box::new(|_| 0.0),
        };
        let (g0, t0) = linear_gamma(&prob, 0, 64).unwrap();
        assert!(g0 + t0 >= 1.0, "gamma_0 = {g0}");
        let (b, _, report) = solve_linear(&prob, &cfg64()).unwrap();
        assert_eq!(b, 1);
        assert!(report.contraction.constant + report.contraction.tail_bound < 0.95);
    }

    #[test]
    fn linear_gamma_nonincreasing_in_shift() {
        let prob = LinearProblem {
            a: 0.0,
            nu: 0.5,
            limit: 1.0,
            p: geometric_p(),
            q: Box::new(|j| 4.0 * 2f64.powi(-j as i32)),
            f: Box::new(|_| 0.0),
        };
        let mut prev = f64::INFINITY;
        for b in 0..=8 {
            let (g, _) = linear_gamma(&prob, b, 80).unwrap();
            assert!(g <= prev + 1e-15, "gamma_{b} = {g} > gamma_{} = {prev}", b - 1);
            prev = g;
        }
    }

    #[test]
    fn subgeometric_p_rejected() {
        let prob = NonlinearProblem {
            a: 0.0,
            nu: 0.5,
            limit: 1.0,
            p: Box::new(|j| if j == 0 { 1.0 } else { (j * j) as f64 }),
            forcing: Box::new(|_, _| 1.0),
            lipschitz: 0.0,
        };
        assert!(matches!(
            tail_bound_nonlinear(&prob, 2.0, 200),
            Err(Error::Tail(_))
        ));
        assert!(matches!(
            solve_nonlinear(&prob, &SolverConfig { horizon: 200, ..cfg64() }),
            Err(Error::Tail(_))
        ));
    }

    #[test]
    fn membership_flags() {
        let m = 1.0;
        let good = GridFunction::new(0.0, -1, vec![2.0, 2.0, 1.5, 1.25, 1.0]).unwrap();
        assert!(verify_membership(&good, m).all());
        let rising = GridFunction::new(0.0, -1, vec![2.0, 2.0, 1.5, 1.6, 1.0]).unwrap();
        assert!(!verify_membership(&rising, m).nonincreasing);
        let below = GridFunction::new(0.0, -1, vec![2.0, 2.0, 1.5, 1.25, 0.5]).unwrap();
        assert!(!verify_membership(&below, m).above_limit);
        let step = GridFunction::new(0.0, -1, vec![2.5, 2.0, 1.5, 1.25, 1.0]).unwrap();
        assert!(!verify_membership(&step, m).flat_at_base);
    }

    fn zeta_member(steps: &[f64], m: f64, horizon: i64) -> GridFunction {
        // M + nonincreasing nonnegative sequence with first step 0
        let mut vals = Vec::with_capacity(horizon as usize + 2);
        let mut level: f64 = steps.iter().sum::<f64>().abs() + m;
        vals.push(level);
        vals.push(level); // flat first step
        for k in 0..horizon as usize {
            if k < steps.len() {
                level = (level - steps[k].abs()).max(m);
            }
            vals.push(level);
        }
        GridFunction::new(0.0, -1, vals).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn t_maps_zeta_into_zeta(steps in proptest::collection::vec(0.0f64..0.5, 8..32)) {
            let prob = NonlinearProblem {
                forcing: Box::new(|_, u| 0.4 / (1.0 + u)),
                lipschitz: 0.4,
                ..closed_form_problem()
            };
            let cfg = cfg64();
            let y = zeta_member(&steps, prob.limit, cfg.horizon);
            let ty = apply_t(&y, &prob, &cfg).unwrap();
            prop_assert!(verify_membership(&ty, prob.limit).all());
        }

        #[test]
        fn t_contracts_at_certified_rate(
            s1 in proptest::collection::vec(0.0f64..0.5, 8..32),
            s2 in proptest::collection::vec(0.0f64..0.5, 8..32),
        ) {
            let prob = NonlinearProblem {
                forcing: Box::new(|_, u| 0.4 / (1.0 + u)),
                lipschitz: 0.4,
                ..closed_form_problem()
            };
            let cfg = cfg64();
            let report = contraction_constant_sup(&prob, cfg.horizon).unwrap();
            let rate = report.constant + report.tail_bound;
            let x = zeta_member(&s1, prob.limit, cfg.horizon);
            let y = zeta_member(&s2, prob.limit, cfg.horizon);
            let tx = apply_t(&x, &prob, &cfg).unwrap();
            let ty = apply_t(&y, &prob, &cfg).unwrap();
            let before = metric_distance(x.values(), y.values(), None);
            let after = metric_distance(tx.values(), ty.values(), None);
            prop_assert!(after <= rate * before + 1e-14,
                "after {after} > rate {rate} * before {before}");
        }
    }
}
