//! Command-line surface: flat key-value run specifications, dispatch of
//! operator evaluations and solver runs, CSV trajectories and report
//! blocks.
//!
//! A run spec is one `key = value` per line with `#` comments. Keys:
//! `command` (op|check|solve|verify), `nu`, `a`, `M`, `horizon`,
//! `tail_tol`, `fp_tol`, `max_iter`, `metric` (sup|weighted),
//! `p.family` + params, `F.family` + params or `q.*`/`f.*` for linear,
//! `K`, `output`, and for `op`/`verify` runs `op`, `mu`, `b`,
//! `trajectory`.

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::operators;
use crate::solver::{
    self, ContractionReport, LinearProblem, Metric, NonlinearProblem, SeqFn, SolverConfig,
    SolverReport,
};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Op,
    Check,
    Solve,
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    NablaSum,
    NablaDiff,
    PowerRule,
}

/// A named sequence family for `p`, `q`, or `f`.
///
/// `GeometricRising` is `c^(s-a) (s-a)^(nu)`; `Power` is `(s-a)^gamma`.
/// Both formulas vanish at `s = a`, where positivity is required of `p`,
/// so the base-point value is pinned to 1.
#[derive(Debug, Clone, PartialEq)]
pub enum SeqFamily {
    GeometricRising { c: f64 },
    Power { gamma: f64 },
    Const { v: f64 },
    Table { path: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ForcingSpec {
    /// `F(t, u) = v` (Lipschitz constant 0).
    Const { v: f64 },
    /// `F(t, u) = kappa / (1 + u)` (Lipschitz constant kappa on [0, inf)).
    Saturating { kappa: f64 },
    /// `F(t, u) = g(t) (c0 + c1 u)` with `g` tabulated per offset.
    TableAffine { path: String, c0: f64, c1: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub command: Command,
    pub nu: f64,
    pub a: f64,
    pub m: f64,
    pub horizon: i64,
    pub tail_tol: f64,
    pub fp_tol: f64,
    pub max_iter: usize,
    pub metric: Metric,
    pub p: Option<SeqFamily>,
    pub forcing: Option<ForcingSpec>,
    pub q: Option<SeqFamily>,
    pub f_seq: Option<SeqFamily>,
    pub lipschitz: Option<f64>,
    pub op: Option<OpKind>,
    pub mu: Option<f64>,
    pub shift: i64,
    pub output: Option<String>,
    pub trajectory: Option<String>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn invalid(key: &str, message: impl Into<String>) -> Error {
    Error::Validation {
        key: key.into(),
        message: message.into(),
    }
}

fn get_f64(map: &BTreeMap<String, (String, usize)>, key: &str) -> Result<Option<f64>> {
    match map.get(key) {
        None => Ok(None),
        Some((v, line)) => v
            .parse::<f64>()
            .map(Some)
            .map_err(|_| parse_err(*line, format!("`{key}`: not a number: {v}"))),
    }
}

fn get_i64(map: &BTreeMap<String, (String, usize)>, key: &str) -> Result<Option<i64>> {
    match map.get(key) {
        None => Ok(None),
        Some((v, line)) => v
            .parse::<i64>()
            .map(Some)
            .map_err(|_| parse_err(*line, format!("`{key}`: not an integer: {v}"))),
    }
}

fn seq_family(map: &BTreeMap<String, (String, usize)>, prefix: &str) -> Result<Option<SeqFamily>> {
    let Some((fam, line)) = map.get(&format!("{prefix}.family")) else {
        return Ok(None);
    };
    let need = |key: &str| -> Result<f64> {
        get_f64(map, &format!("{prefix}.{key}"))?
            .ok_or_else(|| invalid(&format!("{prefix}.{key}"), "required by this family"))
    };
    match fam.as_str() {
        "geometric_rising" => Ok(Some(SeqFamily::GeometricRising { c: need("c")? })),
        "power" => Ok(Some(SeqFamily::Power { gamma: need("gamma")? })),
        "const" => Ok(Some(SeqFamily::Const { v: need("v")? })),
        "table" => {
            let path = map
                .get(&format!("{prefix}.path"))
                .ok_or_else(|| invalid(&format!("{prefix}.path"), "required by the table family"))?
                .0
                .clone();
            Ok(Some(SeqFamily::Table { path }))
        }
        other => Err(parse_err(*line, format!("unknown sequence family `{other}`"))),
    }
}

/// Parse and validate a run spec document.
pub fn parse_runspec(text: &str) -> Result<RunSpec> {
    let mut map: BTreeMap<String, (String, usize)> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(parse_err(line_no, format!("expected `key = value`, got `{line}`")));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if map.insert(key.clone(), (value, line_no)).is_some() {
            return Err(parse_err(line_no, format!("duplicate key `{key}`")));
        }
    }

    let command = match map.get("command") {
        None => return Err(invalid("command", "missing")),
        Some((v, line)) => match v.as_str() {
            "op" => Command::Op,
            "check" => Command::Check,
            "solve" => Command::Solve,
            "verify" => Command::Verify,
            other => return Err(parse_err(*line, format!("unknown command `{other}`"))),
        },
    };
    let nu = get_f64(&map, "nu")?.ok_or_else(|| invalid("nu", "missing"))?;
    match command {
        Command::Op => {
            if !(nu > 0.0) {
                return Err(invalid("nu", "nu must be > 0"));
            }
        }
        _ => {
            if !(nu > 0.0 && nu < 1.0) {
                return Err(invalid("nu", "nu must lie in (0,1)"));
            }
        }
    }
    let a = get_f64(&map, "a")?.unwrap_or(0.0);
    let m = get_f64(&map, "M")?.unwrap_or(0.0);
    if m < 0.0 {
        return Err(invalid("M", "M must be >= 0"));
    }
    let horizon = get_i64(&map, "horizon")?.unwrap_or(64);
    if horizon < 2 {
        return Err(invalid("horizon", "horizon must be >= 2"));
    }
    let tail_tol = get_f64(&map, "tail_tol")?.unwrap_or(1e-10);
    let fp_tol = get_f64(&map, "fp_tol")?.unwrap_or(1e-10);
    if !(tail_tol > 0.0) || !(fp_tol > 0.0) {
        return Err(invalid("tail_tol", "tolerances must be > 0"));
    }
    let max_iter = get_i64(&map, "max_iter")?.unwrap_or(200);
    if max_iter < 1 {
        return Err(invalid("max_iter", "max_iter must be >= 1"));
    }
    let metric = match map.get("metric").map(|(v, _)| v.as_str()) {
        None | Some("sup") => Metric::Sup,
        Some("weighted") => Metric::Weighted,
        Some(other) => return Err(invalid("metric", format!("unknown metric `{other}`"))),
    };

    let p = seq_family(&map, "p")?;
    let q = seq_family(&map, "q")?;
    let f_seq = seq_family(&map, "f")?;
    let forcing = match map.get("F.family") {
        None => None,
        Some((fam, line)) => {
            let needf = |key: &str| -> Result<f64> {
                get_f64(&map, &format!("F.{key}"))?
                    .ok_or_else(|| invalid(&format!("F.{key}"), "required by this family"))
            };
            Some(match fam.as_str() {
                "const" => ForcingSpec::Const { v: needf("v")? },
                "saturating" => ForcingSpec::Saturating { kappa: needf("kappa")? },
                "table_in_t_times_affine_u" => ForcingSpec::TableAffine {
                    path: map
                        .get("F.path")
                        .ok_or_else(|| invalid("F.path", "required by the table family"))?
                        .0
                        .clone(),
                    c0: needf("c0")?,
                    c1: needf("c1")?,
                },
                other => {
                    return Err(parse_err(*line, format!("unknown forcing family `{other}`")))
                }
            })
        }
    };
    let lipschitz = get_f64(&map, "K")?;
    let op = match map.get("op").map(|(v, _)| v.as_str()) {
        None => None,
        Some("nabla_sum") => Some(OpKind::NablaSum),
        Some("nabla_diff") => Some(OpKind::NablaDiff),
        Some("power_rule") => Some(OpKind::PowerRule),
        Some(other) => return Err(invalid("op", format!("unknown operator `{other}`"))),
    };
    let mu = get_f64(&map, "mu")?;
    let shift = get_i64(&map, "b")?.unwrap_or(0);
    let output = map.get("output").map(|(v, _)| v.clone());
    let trajectory = map.get("trajectory").map(|(v, _)| v.clone());

    let spec = RunSpec {
        command,
        nu,
        a,
        m,
        horizon,
        tail_tol,
        fp_tol,
        max_iter: max_iter as usize,
        metric,
        p,
        forcing,
        q,
        f_seq,
        lipschitz,
        op,
        mu,
        shift,
        output,
        trajectory,
    };
    validate(&spec)?;
    Ok(spec)
}

fn validate(spec: &RunSpec) -> Result<()> {
    match spec.command {
        Command::Op => {
            let op = spec.op.ok_or_else(|| invalid("op", "missing for command=op"))?;
            match op {
                OpKind::PowerRule => {
                    let mu = spec.mu.ok_or_else(|| invalid("mu", "missing for power_rule"))?;
                    if !(mu > -1.0) {
                        return Err(invalid("mu", "mu must be > -1"));
                    }
                }
                _ => {
                    if spec.f_seq.is_none() {
                        return Err(invalid("f.family", "input sequence missing for this operator"));
                    }
                }
            }
            if spec.output.is_none() {
                return Err(invalid("output", "missing"));
            }
        }
        Command::Check | Command::Solve => {
            if spec.p.is_none() {
                return Err(invalid("p.family", "missing"));
            }
            if spec.forcing.is_some() && (spec.q.is_some() || spec.f_seq.is_some()) {
                return Err(invalid(
                    "F.family",
                    "give either F.* (nonlinear) or q.*/f.* (linear), not both",
                ));
            }
            if spec.output.is_none() {
                return Err(invalid("output", "missing"));
            }
        }
        Command::Verify => {
            if spec.trajectory.is_none() {
                return Err(invalid("trajectory", "missing for command=verify"));
            }
            if spec.p.is_none() {
                return Err(invalid("p.family", "missing"));
            }
        }
    }
    Ok(())
}

/// Serialize back to the flat key-value format; `parse_runspec` of the
/// output reproduces the spec exactly.
pub fn serialize_runspec(spec: &RunSpec) -> String {
    let mut s = String::new();
    let cmd = match spec.command {
        Command::Op => "op",
        Command::Check => "check",
        Command::Solve => "solve",
        Command::Verify => "verify",
    };
    let _ = writeln!(s, "command = {cmd}");
    let _ = writeln!(s, "nu = {}", spec.nu);
    let _ = writeln!(s, "a = {}", spec.a);
    let _ = writeln!(s, "M = {}", spec.m);
    let _ = writeln!(s, "horizon = {}", spec.horizon);
    let _ = writeln!(s, "tail_tol = {}", spec.tail_tol);
    let _ = writeln!(s, "fp_tol = {}", spec.fp_tol);
    let _ = writeln!(s, "max_iter = {}", spec.max_iter);
    let metric = match spec.metric {
        Metric::Sup => "sup",
        Metric::Weighted => "weighted",
    };
    let _ = writeln!(s, "metric = {metric}");
    let seq = |prefix: &str, fam: &Option<SeqFamily>| match fam {
        None => String::new(),
        Some(SeqFamily::GeometricRising { c }) => {
            format!("{prefix}.family = geometric_rising\n{prefix}.c = {c}\n")
        }
        Some(SeqFamily::Power { gamma }) => {
            format!("{prefix}.family = power\n{prefix}.gamma = {gamma}\n")
        }
        Some(SeqFamily::Const { v }) => format!("{prefix}.family = const\n{prefix}.v = {v}\n"),
        Some(SeqFamily::Table { path }) => {
            format!("{prefix}.family = table\n{prefix}.path = {path}\n")
        }
    };
    s.push_str(&seq("p", &spec.p));
    s.push_str(&seq("q", &spec.q));
    s.push_str(&seq("f", &spec.f_seq));
    match &spec.forcing {
        None => {}
        Some(ForcingSpec::Const { v }) => {
            let _ = writeln!(s, "F.family = const\nF.v = {v}");
        }
        Some(ForcingSpec::Saturating { kappa }) => {
            let _ = writeln!(s, "F.family = saturating\nF.kappa = {kappa}");
        }
        Some(ForcingSpec::TableAffine { path, c0, c1 }) => {
            let _ = writeln!(
                s,
                "F.family = table_in_t_times_affine_u\nF.path = {path}\nF.c0 = {c0}\nF.c1 = {c1}"
            );
        }
    }
    if let Some(k) = spec.lipschitz {
        let _ = writeln!(s, "K = {k}");
    }
    if let Some(op) = spec.op {
        let name = match op {
            OpKind::NablaSum => "nabla_sum",
            OpKind::NablaDiff => "nabla_diff",
            OpKind::PowerRule => "power_rule",
        };
        let _ = writeln!(s, "op = {name}");
    }
    if let Some(mu) = spec.mu {
        let _ = writeln!(s, "mu = {mu}");
    }
    if spec.shift != 0 {
        let _ = writeln!(s, "b = {}", spec.shift);
    }
    if let Some(o) = &spec.output {
        let _ = writeln!(s, "output = {o}");
    }
    if let Some(t) = &spec.trajectory {
        let _ = writeln!(s, "trajectory = {t}");
    }
    s
}

fn read_table(path: &str) -> Result<Vec<(i64, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if i == 0 && line.starts_with("k,") {
            continue; // header
        }
        let Some((k, v)) = line.split_once(',') else {
            return Err(parse_err(i + 1, format!("table row `{line}`: expected `k,value`")));
        };
        let k = k
            .trim()
            .parse::<i64>()
            .map_err(|_| parse_err(i + 1, format!("table offset `{k}` is not an integer")))?;
        let v = v
            .trim()
            .parse::<f64>()
            .map_err(|_| parse_err(i + 1, format!("table value `{v}` is not a number")))?;
        rows.push((k, v));
    }
    Ok(rows)
}

/// Build a sequence closure from a family; offsets count from the base.
/// Tabulated sequences must cover `min_offset ..= horizon`.
fn build_seq(
    fam: &SeqFamily,
    nu: f64,
    min_offset: i64,
    horizon: i64,
    key: &str,
) -> Result<Box<SeqFn>> {
    match fam {
        SeqFamily::GeometricRising { c } => {
            let c = *c;
            Ok(Box::new(move |j| {
                if j == 0 {
                    1.0
                } else {
                    c.powi(j as i32)
                        * crate::kernel::rising_factorial(j as f64, nu).unwrap_or(f64::NAN)
                }
            }))
        }
        SeqFamily::Power { gamma } => {
            let gamma = *gamma;
            Ok(Box::new(move |j| {
                if j == 0 {
                    1.0
                } else {
                    (j as f64).powf(gamma)
                }
            }))
        }
        SeqFamily::Const { v } => {
            let v = *v;
            Ok(Box::new(move |_| v))
        }
        SeqFamily::Table { path } => {
            let rows = read_table(path)?;
            let mut map = BTreeMap::new();
            for (k, v) in rows {
                map.insert(k, v);
            }
            for k in min_offset..=horizon {
                if !map.contains_key(&k) {
                    return Err(invalid(
                        key,
                        format!("tabulated sequence misses offset {k} (needs {min_offset}..={horizon})"),
                    ));
                }
            }
            Ok(Box::new(move |j| map.get(&j).copied().unwrap_or(f64::NAN)))
        }
    }
}

struct BuiltForcing {
    forcing: Box<solver::ForcingFn>,
    lipschitz: f64,
}

fn build_forcing(spec: &RunSpec) -> Result<BuiltForcing> {
    let fs = spec
        .forcing
        .as_ref()
        .ok_or_else(|| invalid("F.family", "missing"))?;
    let (forcing, default_k): (Box<solver::ForcingFn>, f64) = match fs {
        ForcingSpec::Const { v } => {
            let v = *v;
            (Box::new(move |_, _| v), 0.0)
        }
        ForcingSpec::Saturating { kappa } => {
            let kappa = *kappa;
            (Box::new(move |_, u| kappa / (1.0 + u)), kappa)
        }
        ForcingSpec::TableAffine { path, c0, c1 } => {
            let rows = read_table(path)?;
            let mut map = BTreeMap::new();
            let mut gmax = 0.0f64;
            for (k, v) in rows {
                gmax = gmax.max(v.abs());
                map.insert(k, v);
            }
            for k in 1..=spec.horizon {
                if !map.contains_key(&k) {
                    return Err(invalid(
                        "F.path",
                        format!("tabulated forcing misses offset {k}"),
                    ));
                }
            }
            let (c0, c1) = (*c0, *c1);
            (
                Box::new(move |j, u| map.get(&j).copied().unwrap_or(f64::NAN) * (c0 + c1 * u)),
                gmax * c1.abs(),
            )
        }
    };
    Ok(BuiltForcing {
        forcing,
        lipschitz: spec.lipschitz.unwrap_or(default_k),
    })
}

fn build_nonlinear(spec: &RunSpec) -> Result<NonlinearProblem> {
    let p = build_seq(spec.p.as_ref().unwrap(), spec.nu, 0, spec.horizon, "p")?;
    let built = build_forcing(spec)?;
    Ok(NonlinearProblem {
        a: spec.a,
        nu: spec.nu,
        limit: spec.m,
        p,
        forcing: built.forcing,
        lipschitz: built.lipschitz,
    })
}

fn build_linear(spec: &RunSpec) -> Result<LinearProblem> {
    let p = build_seq(spec.p.as_ref().unwrap(), spec.nu, 0, spec.horizon, "p")?;
    let q = match &spec.q {
        Some(fam) => build_seq(fam, spec.nu, 1, spec.horizon, "q")?,
        None => Box::new(|_| 0.0),
    };
    let f = match &spec.f_seq {
        Some(fam) => build_seq(fam, spec.nu, 1, spec.horizon, "f")?,
        None => Box::new(|_| 0.0),
    };
    Ok(LinearProblem {
        a: spec.a,
        nu: spec.nu,
        limit: spec.m,
        p,
        q,
        f,
    })
}

fn config(spec: &RunSpec) -> SolverConfig {
    SolverConfig {
        horizon: spec.horizon,
        tail_tol: spec.tail_tol,
        fp_tol: spec.fp_tol,
        max_iter: spec.max_iter,
        metric: spec.metric,
    }
}

fn csv_header() -> String {
    format!("# nablafrac-csv version={}\n", env!("CARGO_PKG_VERSION"))
}

fn contraction_block(label: &str, r: &ContractionReport) -> String {
    let mut s = String::new();
    let metric = match r.metric {
        Metric::Sup => "sup",
        Metric::Weighted => "weighted",
    };
    let _ = writeln!(s, "{label}.metric = {metric}");
    let _ = writeln!(s, "{label}.constant = {}", r.constant);
    let _ = writeln!(s, "{label}.tail_bound = {}", r.tail_bound);
    if let Some((lo, hi)) = r.weight_limit {
        let _ = writeln!(s, "{label}.L_interval = [{lo}, {hi}]");
    }
    let _ = writeln!(s, "{label}.passes = {}", r.passes);
    s
}

fn report_block(report: &SolverReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "iterations = {}", report.iterations);
    let _ = writeln!(s, "final_defect = {}", report.final_defect);
    let _ = writeln!(s, "max_residual = {}", report.max_residual);
    let _ = writeln!(s, "limit_gap = {}", report.limit_gap);
    let _ = writeln!(s, "zeta.y_ge_M = {}", report.membership.above_limit);
    let _ = writeln!(s, "zeta.nabla_nonpositive = {}", report.membership.nonincreasing);
    let _ = writeln!(s, "zeta.nabla_at_a_zero = {}", report.membership.flat_at_base);
    s.push_str(&contraction_block("contraction", &report.contraction));
    s
}

fn write_output(path: &str, body: &str) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(body.as_bytes())?;
    Ok(())
}

fn run_op(spec: &RunSpec) -> Result<i32> {
    let mut body = csv_header();
    body.push_str("t,value\n");
    let op = spec.op.unwrap();
    let input = match op {
        OpKind::PowerRule => None,
        _ => {
            let fam = spec.f_seq.as_ref().unwrap();
            let seq = build_seq(fam, spec.nu, 1, spec.horizon, "f")?;
            Some(GridFunction::from_fn(spec.a, 0, spec.horizon, |k| {
                if k == 0 {
                    0.0
                } else {
                    seq(k)
                }
            })?)
        }
    };
    let first = match op {
        OpKind::NablaDiff => operators::diff_order(spec.nu) as i64,
        _ => 0,
    };
    for k in first..=spec.horizon {
        let v = match op {
            OpKind::NablaSum => operators::nabla_sum(input.as_ref().unwrap(), spec.nu, 0, k)?,
            OpKind::NablaDiff => operators::nabla_diff(input.as_ref().unwrap(), spec.nu, 0, k)?,
            OpKind::PowerRule => operators::power_rule(spec.nu, spec.mu.unwrap(), k)?,
        };
        let _ = writeln!(body, "{},{}", spec.a + k as f64, v);
    }
    write_output(spec.output.as_ref().unwrap(), &body)?;
    Ok(0)
}

fn run_check(spec: &RunSpec) -> Result<i32> {
    let mut body = String::new();
    let selected_passes;
    if spec.forcing.is_some() {
        let prob = build_nonlinear(spec)?;
        let sup = solver::contraction_constant_sup(&prob, spec.horizon)?;
        body.push_str(&contraction_block("sup", &sup));
        match spec.metric {
            Metric::Sup => selected_passes = sup.passes,
            Metric::Weighted => {
                let wtd = solver::contraction_constant_weighted(&prob, spec.horizon)?;
                selected_passes = wtd.passes;
                body.push_str(&contraction_block("weighted", &wtd));
            }
        }
    } else {
        let prob = build_linear(spec)?;
        let (gamma, tail) = solver::linear_gamma(&prob, 0, spec.horizon)?;
        let r = ContractionReport {
            constant: gamma,
            tail_bound: tail,
            metric: Metric::Sup,
            weight_limit: None,
            passes: gamma + tail < 1.0 - solver::LINEAR_SHIFT_MARGIN,
        };
        body.push_str(&contraction_block("gamma_a", &r));
        selected_passes = r.passes;
    }
    print!("{body}");
    write_output(spec.output.as_ref().unwrap(), &body)?;
    Ok(if selected_passes { 0 } else { 2 })
}

fn trajectory_csv(y: &GridFunction, residual: impl Fn(i64) -> Result<f64>) -> Result<String> {
    let mut body = csv_header();
    body.push_str("t,y,nabla_y,residual\n");
    let first = y.first_offset();
    for k in first..=y.last_offset() {
        let t = y.point(k);
        let yv = y.value(k)?;
        let nab = if k > first {
            format!("{}", yv - y.value(k - 1)?)
        } else {
            String::new()
        };
        let res = if k >= first + 2 {
            format!("{}", residual(k)?)
        } else {
            String::new()
        };
        let _ = writeln!(body, "{t},{yv},{nab},{res}");
    }
    Ok(body)
}

fn run_solve(spec: &RunSpec) -> Result<i32> {
    let cfg = config(spec);
    let output = spec.output.as_ref().unwrap();
    if spec.forcing.is_some() {
        let prob = build_nonlinear(spec)?;
        match solver::solve_nonlinear(&prob, &cfg) {
            Ok((y, report)) => {
                let body = trajectory_csv(&y, |k| solver::residual_nonlinear(&y, &prob, k))?;
                write_output(output, &body)?;
                print!("{}", report_block(&report));
                Ok(0)
            }
            Err(Error::NoContraction(r)) => {
                let body = contraction_block("contraction", &r);
                write_output(output, &body)?;
                eprintln!("NoContractionError: {body}");
                Ok(2)
            }
            Err(e @ Error::Tail(_)) => {
                write_output(output, &format!("tail_error = {e}\n"))?;
                eprintln!("{e}");
                Ok(2)
            }
            Err(e) => Err(e),
        }
    } else {
        let prob = build_linear(spec)?;
        match solver::solve_linear(&prob, &cfg) {
            Ok((b, y, report)) => {
                let body = trajectory_csv(&y, |k| solver::residual_linear(&y, &prob, b, k))?;
                write_output(output, &body)?;
                println!("b = {}", prob.a + b as f64);
                print!("{}", report_block(&report));
                Ok(0)
            }
            Err(Error::NoContraction(r)) => {
                let body = contraction_block("contraction", &r);
                write_output(output, &body)?;
                eprintln!("NoContractionError: {body}");
                Ok(2)
            }
            Err(e @ Error::Tail(_)) => {
                write_output(output, &format!("tail_error = {e}\n"))?;
                eprintln!("{e}");
                Ok(2)
            }
            Err(e) => Err(e),
        }
    }
}

/// Read a trajectory CSV (as written by `solve`) back into a grid
/// function; offsets are recovered from the `t` column and the base.
pub fn read_trajectory(path: &str, a: f64) -> Result<GridFunction> {
    let text = std::fs::read_to_string(path)?;
    let mut first_offset = None;
    let mut values = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("t,") {
            continue;
        }
        let mut cols = line.split(',');
        let t: f64 = cols
            .next()
            .unwrap()
            .parse()
            .map_err(|_| parse_err(i + 1, "bad t column"))?;
        let y: f64 = cols
            .next()
            .ok_or_else(|| parse_err(i + 1, "missing y column"))?
            .parse()
            .map_err(|_| parse_err(i + 1, "bad y column"))?;
        let k = (t - a).round() as i64;
        if ((t - a) - k as f64).abs() > 1e-9 {
            return Err(parse_err(i + 1, format!("t = {t} is not on the grid of base {a}")));
        }
        if first_offset.is_none() {
            first_offset = Some(k);
        }
        values.push(y);
    }
    let first = first_offset.ok_or_else(|| parse_err(0, "trajectory file has no data rows"))?;
    GridFunction::new(a, first, values)
}

fn run_verify(spec: &RunSpec) -> Result<i32> {
    let y = read_trajectory(spec.trajectory.as_ref().unwrap(), spec.a)?;
    let b = spec.shift;
    if y.first_offset() != b - 1 {
        return Err(invalid(
            "b",
            format!(
                "trajectory starts at offset {}, expected b-1 = {}",
                y.first_offset(),
                b - 1
            ),
        ));
    }
    let flags = solver::verify_membership(&y, spec.m);
    let last = y.last_offset();
    let mut max_residual = 0.0f64;
    if spec.forcing.is_some() {
        let prob = build_nonlinear(spec)?;
        for k in b + 1..=last {
            max_residual = max_residual.max(solver::residual_nonlinear(&y, &prob, k)?.abs());
        }
    } else {
        let prob = build_linear(spec)?;
        for k in b + 1..=last {
            max_residual = max_residual.max(solver::residual_linear(&y, &prob, b, k)?.abs());
        }
    }
    let mut body = String::new();
    let _ = writeln!(body, "max_residual = {max_residual}");
    let _ = writeln!(body, "zeta.y_ge_M = {}", flags.above_limit);
    let _ = writeln!(body, "zeta.nabla_nonpositive = {}", flags.nonincreasing);
    let _ = writeln!(body, "zeta.nabla_at_a_zero = {}", flags.flat_at_base);
    print!("{body}");
    if let Some(out) = &spec.output {
        write_output(out, &body)?;
    }
    Ok(0)
}

/// Execute a run spec; returns the process exit code (0 success,
/// 2 contraction/tail certification failure). Hard errors propagate.
pub fn run(spec: &RunSpec) -> Result<i32> {
    match spec.command {
        Command::Op => run_op(spec),
        Command::Check => run_check(spec),
        Command::Solve => run_solve(spec),
        Command::Verify => run_verify(spec),
    }
}

/// Exit code for a hard error: 1 for parse/validation (and other hard
/// failures), 2 for certification failures that escaped as errors.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NoContraction(_) | Error::Tail(_) => 2,
        _ => 1,
    }
}

/// Verify then rebuild a trajectory CSV body with the version header
/// stripped, for determinism comparisons.
pub fn csv_body_without_header(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n")
}
