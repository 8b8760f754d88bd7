//! Polynomial vector fields and maps, fixed-step integration, iteration and
//! the registry of benchmark systems.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Mat;
use crate::par::{self, Execution};
use crate::poly::{Monomial, Polynomial};

/// State norm above which a simulation is treated as a finite-time escape.
pub const BLOW_UP_NORM: f64 = 1e8;

pub const DEFAULT_DT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeKind {
    Continuous,
    Discrete,
}

/// `ẋ = f(x) + B u` (continuous) or `x⁺ = F(x)` (discrete) with polynomial
/// right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct PolySystem {
    pub name: String,
    pub time_kind: TimeKind,
    pub equations: Vec<Polynomial>,
    pub params: BTreeMap<String, f64>,
    pub input_map: Option<Mat>,
}

impl PolySystem {
    pub fn new(name: impl Into<String>, time_kind: TimeKind, equations: Vec<Polynomial>) -> Result<Self> {
        let n = equations.len();
        if n == 0 {
            return Err(Error::InvalidArgument("system needs at least one equation".into()));
        }
        if let Some(p) = equations.iter().find(|p| p.dim() != n) {
            return Err(Error::DimensionMismatch(format!(
                "equation over {} variables in a {n}-state system",
                p.dim()
            )));
        }
        Ok(Self {
            name: name.into(),
            time_kind,
            equations,
            params: BTreeMap::new(),
            input_map: None,
        })
    }

    pub fn with_params(mut self, params: BTreeMap<String, f64>) -> Self {
        self.params = params;
        self
    }

    pub fn with_input_map(mut self, b: Mat) -> Result<Self> {
        if b.nrows() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "input map has {} rows for a {}-state system",
                b.nrows(),
                self.dim()
            )));
        }
        self.input_map = Some(b);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.equations.len()
    }

    pub fn param(&self, key: &str) -> Option<f64> {
        self.params.get(key).copied()
    }

    /// Unactuated right-hand side `f(x)` (or `F(x)` for maps).
    pub fn rhs(&self, x: &[f64]) -> Vec<f64> {
        self.equations.iter().map(|p| p.eval(x)).collect()
    }

    /// `f(x) + B u`; `actuation` carries `(B, u)` together.
    pub fn eval_field(&self, x: &[f64], actuation: Option<(&Mat, &[f64])>) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "state has {} entries, system has {}",
                x.len(),
                self.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state"));
        }
        let mut out = self.rhs(x);
        if let Some((b, u)) = actuation {
            if b.nrows() != self.dim() || b.ncols() != u.len() {
                return Err(Error::DimensionMismatch(format!(
                    "input map {}x{} with {} inputs",
                    b.nrows(),
                    b.ncols(),
                    u.len()
                )));
            }
            for (i, o) in out.iter_mut().enumerate() {
                *o += (0..u.len()).map(|j| b[(i, j)] * u[j]).sum::<f64>();
            }
        }
        Ok(out)
    }

    /// Jacobian of the unactuated right-hand side at `x`.
    pub fn jacobian(&self, x: &[f64]) -> Mat {
        let n = self.dim();
        Mat::from_fn(n, n, |i, j| self.equations[i].derivative(j).eval(x))
    }
}

/// State feedback `u = k(x)`.
pub trait Feedback: Sync {
    fn inputs(&self) -> usize;
    fn control(&self, x: &[f64]) -> Vec<f64>;
}

/// Sampled states with optional inputs aligned to the sample times.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub inputs: Option<Vec<Vec<f64>>>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<Vec<f64>>, inputs: Option<Vec<Vec<f64>>>) -> Result<Self> {
        if times.len() != states.len() {
            return Err(Error::DimensionMismatch("times and states differ in length".into()));
        }
        if inputs.as_ref().is_some_and(|u| u.len() != times.len()) {
            return Err(Error::DimensionMismatch("inputs and times differ in length".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("times must be strictly increasing".into()));
        }
        let n = states.first().map_or(0, Vec::len);
        if states.iter().any(|s| s.len() != n) {
            return Err(Error::DimensionMismatch("ragged states".into()));
        }
        Ok(Self { times, states, inputs })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn last_state(&self) -> Option<&[f64]> {
        self.states.last().map(Vec::as_slice)
    }

    /// Uniform sampling step, if the time grid is uniform to relative 1e-9.
    pub fn uniform_step(&self) -> Option<f64> {
        if self.times.len() < 2 {
            return None;
        }
        let span = self.times[self.times.len() - 1] - self.times[0];
        let dt = span / (self.times.len() - 1) as f64;
        let ok = self
            .times
            .windows(2)
            .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt.abs().max(1.0));
        ok.then_some(dt)
    }

    /// States as columns of an `n × M` matrix.
    pub fn state_matrix(&self) -> Mat {
        Mat::from_fn(self.dim(), self.len(), |i, j| self.states[j][i])
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(w);
        let n = self.dim();
        let q = self.inputs.as_ref().and_then(|u| u.first()).map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        match q {
            0 => {}
            1 => header.push("u".into()),
            _ => header.extend((1..=q).map(|i| format!("u{i}"))),
        }
        wr.write_record(&header).map_err(csv_err)?;
        for k in 0..self.len() {
            let mut rec = vec![fmt_f64(self.times[k])];
            rec.extend(self.states[k].iter().map(|&v| fmt_f64(v)));
            if let Some(u) = &self.inputs {
                rec.extend(u[k].iter().map(|&v| fmt_f64(v)));
            }
            wr.write_record(&rec).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers().map_err(csv_err)?.clone();
        if header.get(0) != Some("t") {
            return Err(Error::Parse("trajectory CSV must start with column `t`".into()));
        }
        let n = header.iter().filter(|h| h.starts_with('x')).count();
        let q = header.len() - 1 - n;
        let mut times = Vec::new();
        let mut states = Vec::new();
        let mut inputs = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(csv_err)?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}"))))
                .collect::<Result<_>>()?;
            if vals.len() != header.len() {
                return Err(Error::Parse("record length differs from header".into()));
            }
            times.push(vals[0]);
            states.push(vals[1..=n].to_vec());
            if q > 0 {
                inputs.push(vals[1 + n..].to_vec());
            }
        }
        Trajectory::new(times, states, (q > 0).then_some(inputs))
    }
}

/// Writes a numeric table with the same CSV conventions as trajectories.
pub fn write_table<W: Write>(w: W, header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut wr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(w);
    wr.write_record(header).map_err(csv_err)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::DimensionMismatch(format!(
                "row has {} entries, header has {}",
                row.len(),
                header.len()
            )));
        }
        wr.write_record(row.iter().map(|&v| fmt_f64(v))).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn check_escape(t: f64, x: &[f64]) -> Result<()> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() || norm > BLOW_UP_NORM {
        return Err(Error::BlowUp { t, norm });
    }
    Ok(())
}

/// Classical fixed-step RK4, sampled every `dt`. With a controller the
/// feedback is evaluated at every stage, so the closed loop is the ODE
/// `ẋ = f(x) + B k(x)`.
pub fn integrate(
    sys: &PolySystem,
    x0: &[f64],
    t_end: f64,
    dt: f64,
    controller: Option<&dyn Feedback>,
) -> Result<Trajectory> {
    if sys.time_kind != TimeKind::Continuous {
        return Err(Error::TimeKind("integrate needs a continuous-time system"));
    }
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(Error::InvalidArgument("dt must be positive and t_end non-negative".into()));
    }
    let n = sys.dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch(format!("x0 has {} entries, system has {n}", x0.len())));
    }
    let b = match (controller, &sys.input_map) {
        (Some(c), Some(b)) => {
            if b.ncols() != c.inputs() {
                return Err(Error::DimensionMismatch("controller output vs input map".into()));
            }
            Some(b)
        }
        (Some(_), None) => {
            return Err(Error::InvalidArgument(format!("system `{}` has no input map", sys.name)))
        }
        (None, _) => None,
    };

    let field = |x: &[f64]| -> Vec<f64> {
        let mut out = sys.rhs(x);
        if let (Some(c), Some(b)) = (controller, b) {
            let u = c.control(x);
            for (i, o) in out.iter_mut().enumerate() {
                for (j, uj) in u.iter().enumerate() {
                    *o += b[(i, j)] * uj;
                }
            }
        }
        out
    };

    let steps = (t_end / dt).round() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = controller.map(|_| Vec::with_capacity(steps + 1));
    let mut x = x0.to_vec();
    check_escape(0.0, &x)?;
    let mut tmp = vec![0.0; n];
    for k in 0..=steps {
        let t = k as f64 * dt;
        times.push(t);
        if let (Some(u), Some(c)) = (inputs.as_mut(), controller) {
            u.push(c.control(&x));
        }
        states.push(x.clone());
        if k == steps {
            break;
        }
        let k1 = field(&x);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * dt * k1[i];
        }
        let k2 = field(&tmp);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * dt * k2[i];
        }
        let k3 = field(&tmp);
        for i in 0..n {
            tmp[i] = x[i] + dt * k3[i];
        }
        let k4 = field(&tmp);
        for i in 0..n {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        check_escape(t + dt, &x)?;
    }
    Ok(Trajectory { times, states, inputs })
}

/// Exact iteration of a map; the step index is the time stamp.
pub fn iterate(sys: &PolySystem, x0: &[f64], steps: usize) -> Result<Trajectory> {
    if sys.time_kind != TimeKind::Discrete {
        return Err(Error::TimeKind("iterate needs a discrete-time system"));
    }
    if x0.len() != sys.dim() {
        return Err(Error::DimensionMismatch(format!(
            "x0 has {} entries, system has {}",
            x0.len(),
            sys.dim()
        )));
    }
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut x = x0.to_vec();
    check_escape(0.0, &x)?;
    for k in 0..=steps {
        times.push(k as f64);
        states.push(x.clone());
        if k < steps {
            x = sys.rhs(&x);
            check_escape((k + 1) as f64, &x)?;
        }
    }
    Ok(Trajectory { times, states, inputs: None })
}

/// Simulates the system from every initial condition in `x0s`. Continuous
/// systems integrate to `horizon`; discrete ones iterate `horizon` steps.
pub fn simulate_batch(
    sys: &PolySystem,
    x0s: &[Vec<f64>],
    horizon: f64,
    dt: f64,
    exec: Execution,
) -> Result<Vec<Trajectory>> {
    par::map(exec, x0s, |x0| match sys.time_kind {
        TimeKind::Continuous => integrate(sys, x0, horizon, dt, None),
        TimeKind::Discrete => iterate(sys, x0, horizon.round() as usize),
    })
    .into_iter()
    .collect()
}

/// Evenly spaced grid of `counts[i]` points over `[lo, hi]` per coordinate,
/// in row-major order.
pub fn grid_initial_conditions(lo: f64, hi: f64, counts: &[usize]) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = counts
        .iter()
        .map(|&c| {
            if c == 1 {
                vec![0.5 * (lo + hi)]
            } else {
                (0..c).map(|i| lo + (hi - lo) * i as f64 / (c - 1) as f64).collect()
            }
        })
        .collect();
    let mut out = vec![Vec::new()];
    for axis in &axes {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

/// Static description of a registry entry.
#[derive(Debug, Clone, Copy)]
pub struct SystemInfo {
    pub name: &'static str,
    pub summary: &'static str,
    pub time_kind: TimeKind,
    pub defaults: &'static [(&'static str, f64)],
    pub actuated: bool,
}

pub const REGISTRY: &[SystemInfo] = &[
    SystemInfo {
        name: "quad-manifold",
        summary: "x1' = mu x1, x2' = lambda (x2 - x1^2); attracting slow manifold x2 = x1^2",
        time_kind: TimeKind::Continuous,
        defaults: &[("mu", -0.05), ("lambda", -1.0)],
        actuated: false,
    },
    SystemInfo {
        name: "quartic-manifold",
        summary: "x1' = mu x1, x2' = lambda (x2 - x1^4 + 2 x1^2); slow manifold x2 = x1^4 - 2 x1^2",
        time_kind: TimeKind::Continuous,
        defaults: &[("mu", -0.05), ("lambda", -1.0)],
        actuated: false,
    },
    SystemInfo {
        name: "discrete-manifold",
        summary: "x1+ = mu x1, x2+ = lambda x2 + (1 - lambda) x1^2; discrete slow manifold",
        time_kind: TimeKind::Discrete,
        defaults: &[("mu", 0.9), ("lambda", 0.1)],
        actuated: false,
    },
    SystemInfo {
        name: "tu-map",
        summary: "x1+ = lambda x1, x2+ = mu x2 + (lambda^2 - mu) x1^2; polynomial stable manifold",
        time_kind: TimeKind::Discrete,
        defaults: &[("lambda", 0.9), ("mu", 0.5)],
        actuated: false,
    },
    SystemInfo {
        name: "logistic",
        summary: "x+ = r x (1 - x); no finite polynomial closure",
        time_kind: TimeKind::Discrete,
        defaults: &[("r", 3.5)],
        actuated: false,
    },
    SystemInfo {
        name: "center-manifold",
        summary: "x' = x^2; isolated fixed point with finite-time escape, infinite Carleman chain",
        time_kind: TimeKind::Continuous,
        defaults: &[],
        actuated: false,
    },
    SystemInfo {
        name: "kooc-demo",
        summary: "x1' = mu x1, x2' = lambda (x2 - x1^2) + u; Koopman optimal control benchmark",
        time_kind: TimeKind::Continuous,
        defaults: &[("mu", -0.1), ("lambda", 1.0)],
        actuated: true,
    },
    SystemInfo {
        name: "limitation",
        summary: "x1' = mu x1 + u, x2' = lambda (x2 - x1^2); lifted x1^2 mode unstable and uncontrollable",
        time_kind: TimeKind::Continuous,
        defaults: &[("mu", 0.1), ("lambda", -1.0)],
        actuated: true,
    },
    SystemInfo {
        name: "rotated-quad",
        summary: "quad-manifold in coordinates eta = x1 + x2, xi = x1 - x2",
        time_kind: TimeKind::Continuous,
        defaults: &[("mu", -0.05), ("lambda", -1.0)],
        actuated: false,
    },
];

pub fn registry_entry(name: &str) -> Result<&'static SystemInfo> {
    let key = name.replace('_', "-");
    REGISTRY
        .iter()
        .find(|s| s.name == key)
        .ok_or_else(|| Error::UnknownSystem(name.to_string()))
}

/// Resolves registry defaults overlaid with `overrides`; unknown keys are
/// rejected.
pub fn resolve_params(info: &SystemInfo, overrides: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>> {
    let mut out: BTreeMap<String, f64> = info.defaults.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    for (k, v) in overrides {
        if !out.contains_key(k) {
            return Err(Error::UnknownParam {
                system: info.name.to_string(),
                param: k.clone(),
            });
        }
        if !v.is_finite() {
            return Err(Error::NonFinite("system parameter"));
        }
        out.insert(k.clone(), *v);
    }
    Ok(out)
}

/// Builds a registry system; missing parameters take their defaults.
pub fn builtin(name: &str, overrides: &BTreeMap<String, f64>) -> Result<PolySystem> {
    let info = registry_entry(name)?;
    let params = resolve_params(info, overrides)?;
    let get = |k: &str| -> Result<f64> {
        params.get(k).copied().ok_or_else(|| Error::MissingParam {
            system: info.name.to_string(),
            param: k.to_string(),
        })
    };
    let sys = match info.name {
        "quad-manifold" => continuous_slow_manifold(get("mu")?, get("lambda")?, &[(1.0, 2)])?,
        "quartic-manifold" => {
            continuous_slow_manifold(get("mu")?, get("lambda")?, &[(1.0, 4), (-2.0, 2)])?
        }
        "discrete-manifold" => discrete_slow_manifold(get("mu")?, get("lambda")?, &[(1.0, 2)])?,
        "tu-map" => tu_map(get("lambda")?, get("mu")?)?,
        "logistic" => logistic(get("r")?)?,
        "center-manifold" => {
            let x = Polynomial::var(1, 0);
            PolySystem::new("center-manifold", TimeKind::Continuous, vec![x.pow(2)])?
        }
        "kooc-demo" => continuous_slow_manifold(get("mu")?, get("lambda")?, &[(1.0, 2)])?
            .with_input_map(Mat::from_column_slice(2, 1, &[0.0, 1.0]))?,
        "limitation" => continuous_slow_manifold(get("mu")?, get("lambda")?, &[(1.0, 2)])?
            .with_input_map(Mat::from_column_slice(2, 1, &[1.0, 0.0]))?,
        "rotated-quad" => rotated_quad(get("mu")?, get("lambda")?)?,
        other => return Err(Error::UnknownSystem(other.to_string())),
    };
    Ok(PolySystem {
        name: info.name.to_string(),
        params,
        ..sys
    })
}

/// `ẋ1 = μ x1`, `ẋ2 = λ (x2 − P(x1))` with `P = Σ a_i x^{N_i}`.
pub fn continuous_slow_manifold(mu: f64, lambda: f64, poly: &[(f64, u32)]) -> Result<PolySystem> {
    let mut f2 = Polynomial::monomial(Monomial(vec![0, 1]), lambda);
    for &(a, n) in poly {
        f2.add_term(Monomial(vec![n, 0]), -(a * lambda));
    }
    let f1 = Polynomial::monomial(Monomial(vec![1, 0]), mu);
    PolySystem::new("slow-manifold", TimeKind::Continuous, vec![f1, f2])
}

/// `x1⁺ = μ x1`, `x2⁺ = λ x2 + (1 − λ) P(x1)`.
pub fn discrete_slow_manifold(mu: f64, lambda: f64, poly: &[(f64, u32)]) -> Result<PolySystem> {
    let mut f2 = Polynomial::monomial(Monomial(vec![0, 1]), lambda);
    for &(a, n) in poly {
        f2.add_term(Monomial(vec![n, 0]), a * (1.0 - lambda));
    }
    let f1 = Polynomial::monomial(Monomial(vec![1, 0]), mu);
    PolySystem::new("discrete-manifold", TimeKind::Discrete, vec![f1, f2])
}

pub fn tu_map(lambda: f64, mu: f64) -> Result<PolySystem> {
    let f1 = Polynomial::monomial(Monomial(vec![1, 0]), lambda);
    let f2 = Polynomial::from_terms(2, [(mu, vec![0, 1]), (lambda * lambda - mu, vec![2, 0])]);
    PolySystem::new("tu-map", TimeKind::Discrete, vec![f1, f2])
}

pub fn logistic(r: f64) -> Result<PolySystem> {
    let f = Polynomial::from_terms(1, [(r, vec![1]), (-r, vec![2])]);
    PolySystem::new("logistic", TimeKind::Discrete, vec![f])
}

/// The quadratic-manifold system written in `η = x1 + x2`, `ξ = x1 − x2`.
pub fn rotated_quad(mu: f64, lambda: f64) -> Result<PolySystem> {
    let base = continuous_slow_manifold(mu, lambda, &[(1.0, 2)])?;
    let eta = Polynomial::var(2, 0);
    let xi = Polynomial::var(2, 1);
    let x = (eta.clone() + xi.clone()).scale(0.5);
    let y = (eta - xi).scale(0.5);
    let subs = [x, y];
    let f1 = base.equations[0].compose(&subs);
    let f2 = base.equations[1].compose(&subs);
    PolySystem::new(
        "rotated-quad",
        TimeKind::Continuous,
        vec![f1.clone() + f2.clone(), f1 - f2],
    )
}
