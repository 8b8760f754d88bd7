use std::fs::File;
use std::io::BufReader;

use koopmankit::dynamics::{builtin, simulate_batch, PolySystem, TimeKind};
use koopmankit::lifting::{
    carleman_center, carleman_logistic, slow_manifold_lift_ct, slow_manifold_lift_dt, tu_lift, KoopmanModel,
    ModelJson, NamedObservable,
};
use koopmankit::numerics::eigenvalues;
use koopmankit::par::Execution;
use koopmankit::poly::Monomial;
use koopmankit::spectral::{
    eigenfunctions, left_residual, rotate_model, slow_subspace_slope, verify_eigenfunction, Eigenfunction,
};
use koopmankit::Complex64;
use serde_json::{json, Value};

use crate::args::{parse_vectors, IoArgs, SpectralArgs};
use crate::output::Sink;
use crate::{CliResult, Failure};

/// Closed-form lift of a registry system. Truncated Carleman lifts are
/// returned for systems without a finite closure.
fn closed_form(sys: &PolySystem, rank: usize) -> CliResult<KoopmanModel> {
    let p = |k: &str| sys.params[k];
    Ok(match sys.name.as_str() {
        "quad-manifold" | "kooc-demo" | "limitation" => slow_manifold_lift_ct(p("mu"), p("lambda"), &[(1.0, 2)])?,
        "quartic-manifold" => slow_manifold_lift_ct(p("mu"), p("lambda"), &[(1.0, 4), (-2.0, 2)])?,
        "discrete-manifold" => slow_manifold_lift_dt(p("mu"), p("lambda"), &[(1.0, 2)])?,
        "tu-map" => tu_lift(p("lambda"), p("mu"))?,
        "rotated-quad" => {
            let base = slow_manifold_lift_ct(p("mu"), p("lambda"), &[(1.0, 2)])?;
            rotate_model(&base, std::f64::consts::FRAC_PI_4)?
        }
        "logistic" => carleman_logistic(p("r"), rank)?,
        "center-manifold" => carleman_center(rank)?,
        other => return Err(Failure::Config(format!("no closed-form lift for `{other}`"))),
    })
}

fn default_x0(sys: &PolySystem) -> Vec<Vec<f64>> {
    match sys.name.as_str() {
        "center-manifold" => vec![vec![0.5]],
        "logistic" => vec![vec![0.2]],
        // off x2 = x1^2 and with x1 != 0 in both the original and rotated coordinates
        _ => vec![vec![1.0, -0.5], vec![0.5, 0.75]],
    }
}

fn default_horizon(sys: &PolySystem) -> f64 {
    match (sys.name.as_str(), sys.time_kind) {
        // x(t) = x0 / (1 - x0 t) escapes at 1/x0 = 2 for the default x0
        ("center-manifold", _) => 1.5,
        (_, TimeKind::Continuous) => 5.0,
        (_, TimeKind::Discrete) => 20.0,
    }
}

fn pair(z: Complex64) -> [f64; 2] {
    [z.re, z.im]
}

pub fn run(io: &IoArgs, a: &SpectralArgs) -> CliResult<()> {
    let sys = a
        .system_args()
        .map(|s| builtin(&s.system, &s.overrides()))
        .transpose()?;
    let model = match (&a.model, &sys) {
        (Some(path), _) => {
            let j: ModelJson = serde_json::from_reader(BufReader::new(File::open(path)?))
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            KoopmanModel::from_json(&j)?
        }
        (None, Some(sys)) => closed_form(sys, a.rank)?,
        (None, None) => return Err(Failure::Config("give --system or --model".into())),
    };
    if let Some(sys) = &sys {
        if sys.time_kind != model.time_kind {
            return Err(Failure::Config("model and system time semantics differ".into()));
        }
    }

    let trajectories = match &sys {
        Some(sys) => {
            let x0s = if a.x0.is_empty() {
                default_x0(sys)
            } else {
                parse_vectors(&a.x0, sys.dim())?
            };
            let horizon = a.horizon.unwrap_or_else(|| default_horizon(sys));
            simulate_batch(sys, &x0s, horizon, a.dt, Execution::default())?
        }
        None => Vec::new(),
    };

    let mut doc = serde_json::Map::new();
    doc.insert("source".into(), json!(sys.as_ref().map_or("model", |s| s.name.as_str())));
    if let Some(sys) = &sys {
        doc.insert("params".into(), json!(sys.params));
    }
    doc.insert("time_kind".into(), json!(model.time_kind));
    doc.insert("observables".into(), json!(model.library.labels()));
    let eigs: Vec<[f64; 2]> = eigenvalues(&model.k)?.into_iter().map(pair).collect();
    doc.insert("eigenvalues".into(), json!(eigs));

    match eigenfunctions(&model) {
        Ok(phis) => {
            doc.insert("left_residual".into(), json!(left_residual(&model, &phis)));
            let entries: Vec<Value> = phis
                .iter()
                .map(|phi| describe(phi, &trajectories))
                .collect::<CliResult<_>>()?;
            doc.insert("eigenfunctions".into(), Value::Array(entries));
            if let Some(b) = slow_manifold_coefficient(&model, &phis) {
                doc.insert("slow_manifold_coefficient".into(), json!(b));
            }
        }
        Err(e) => {
            doc.insert("eigenfunctions".into(), json!([]));
            doc.insert("eigenfunction_error".into(), json!(e.to_string()));
        }
    }
    if let Ok(slope) = slow_subspace_slope(&model) {
        doc.insert("slow_subspace_slope".into(), json!(slope));
    }

    if let Some(name) = &a.named_observable {
        let obs = match name.as_str() {
            "exp-neg-inv" => NamedObservable::ExpNegInv,
            other => return Err(Failure::Config(format!("unknown named observable `{other}`"))),
        };
        let Some(sys) = &sys else {
            return Err(Failure::Config("--named-observable needs --system".into()));
        };
        if sys.name != "center-manifold" {
            return Err(Failure::Config("exp-neg-inv is an eigenfunction of center-manifold only".into()));
        }
        let phi = Eigenfunction::named(obs, 1.0)?;
        doc.insert("named_observable".into(), describe(&phi, &trajectories)?);
    }

    let mut sink = Sink::new(&io.out)?;
    let stem = sys.as_ref().map_or("model", |s| s.name.as_str());
    sink.json(&format!("{stem}_spectral.json"), &Value::Object(doc))?;
    sink.report();
    Ok(())
}

fn describe(phi: &Eigenfunction, trajectories: &[koopmankit::dynamics::Trajectory]) -> CliResult<Value> {
    let residuals: Vec<Value> = trajectories
        .iter()
        .map(|t| match verify_eigenfunction(phi, t) {
            Ok(r) => json!(r),
            Err(e) => json!(e.to_string()),
        })
        .collect();
    let mut v = serde_json::to_value(phi.to_json()).map_err(koopmankit::Error::from)?;
    if let Value::Object(m) = &mut v {
        if let Some(p) = phi.polynomial() {
            m.insert("polynomial".into(), json!(p.to_string()));
        }
        m.insert("trajectory_residuals".into(), json!(residuals));
    }
    Ok(v)
}

/// `b` in the eigenfunction `x2 - b x1^2` of a `[x1, x2, x1^2]` lift, taken
/// from the eigenfunction whose eigenvalue is the x2 diagonal entry.
fn slow_manifold_coefficient(model: &KoopmanModel, phis: &[Eigenfunction]) -> Option<f64> {
    let sq = model.library.index_of_monomial(&Monomial(vec![2, 0]))?;
    let [_, r2] = model.state_rows.as_slice() else { return None };
    if model.size() != 3 {
        return None;
    }
    let lam = model.k[(*r2, *r2)];
    let phi = phis
        .iter()
        .find(|p| (p.eigenvalue.re - lam).abs() <= 1e-10 * lam.abs().max(1.0) && p.eigenvalue.im == 0.0)?;
    let c2 = phi.coeffs[*r2].re;
    (c2.abs() > 1e-14).then(|| -phi.coeffs[sq].re / c2)
}
