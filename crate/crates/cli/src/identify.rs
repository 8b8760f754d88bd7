use std::fs::File;
use std::io::BufReader;

use koopmankit::dynamics::{builtin, grid_initial_conditions, simulate_batch, PolySystem, TimeKind, Trajectory};
use koopmankit::identification::{
    estimate_derivatives, invariance_residual, refine_subspace, sindy_with, DataSet, SindyOptions, SparseModel,
};
use koopmankit::lifting::{project_system, Closure, KoopmanModel, ObservableLibrary};
use koopmankit::par::Execution;
use serde_json::json;

use crate::args::{parse_vectors, IdentifyArgs, IoArgs};
use crate::output::Sink;
use crate::{CliResult, Failure};

/// Grid points per coordinate for generated data.
const GRID_POINTS: usize = 5;

/// Initial-condition box for generated data; chosen to stay bounded over the
/// default horizon.
fn grid_box(sys: &PolySystem) -> (f64, f64) {
    match sys.name.as_str() {
        "logistic" => (0.1, 0.9),
        "center-manifold" => (-1.0, -0.1),
        _ => (-2.0, 2.0),
    }
}

fn to_dataset(traj: &Trajectory, kind: TimeKind) -> CliResult<DataSet> {
    Ok(match kind {
        TimeKind::Continuous => estimate_derivatives(traj)?,
        TimeKind::Discrete => DataSet::from_shifts(traj)?,
    })
}

fn parse_time_kind(s: Option<&str>) -> CliResult<Option<TimeKind>> {
    match s {
        None => Ok(None),
        Some("continuous") => Ok(Some(TimeKind::Continuous)),
        Some("discrete") => Ok(Some(TimeKind::Discrete)),
        Some(other) => Err(Failure::Config(format!("--time-kind must be continuous or discrete, got `{other}`"))),
    }
}

pub fn run(io: &IoArgs, a: &IdentifyArgs) -> CliResult<()> {
    let sys = a
        .system_args()
        .map(|s| builtin(&s.system, &s.overrides()))
        .transpose()?;
    let kind_flag = parse_time_kind(a.time_kind.as_deref())?;

    let trajectories: Vec<Trajectory> = if !a.input.is_empty() {
        a.input
            .iter()
            .map(|p| {
                let f = File::open(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
                Ok(Trajectory::read_csv(BufReader::new(f))?)
            })
            .collect::<CliResult<_>>()?
    } else {
        let sys = sys
            .as_ref()
            .ok_or_else(|| Failure::Config("give --system or at least one --input".into()))?;
        if !(a.dt > 0.0) {
            return Err(Failure::Config("--dt must be positive".into()));
        }
        let x0s = if a.x0.is_empty() {
            let (lo, hi) = grid_box(sys);
            grid_initial_conditions(lo, hi, &vec![GRID_POINTS; sys.dim()])
        } else {
            parse_vectors(&a.x0, sys.dim())?
        };
        let horizon = a.horizon.unwrap_or(match sys.time_kind {
            TimeKind::Continuous => 10.0,
            TimeKind::Discrete => 25.0,
        });
        simulate_batch(sys, &x0s, horizon, a.dt, Execution::default())?
    };
    let kind = match (kind_flag, &sys) {
        (Some(k), Some(s)) if k != s.time_kind => {
            return Err(Failure::Config("--time-kind contradicts the system".into()));
        }
        (Some(k), _) => k,
        (None, Some(s)) => s.time_kind,
        (None, None) => return Err(Failure::Config("--input data needs --time-kind".into())),
    };
    let dim = trajectories[0].dim();
    if let Some(s) = &sys {
        if s.dim() != dim {
            return Err(Failure::Config(format!("data has {dim} states, system has {}", s.dim())));
        }
    }
    let sets = trajectories
        .iter()
        .map(|t| to_dataset(t, kind))
        .collect::<CliResult<Vec<_>>>()?;
    let data = DataSet::concat(&sets)?;

    let (sparse, model, refinement) = if a.dmd {
        let lib = ObservableLibrary::monomials(dim, 1)?;
        let opts = SindyOptions {
            threshold: 0.0,
            max_iter: 1,
            normalize: false,
            ..SindyOptions::default()
        };
        let sparse = sindy_with(&data, &lib, &opts)?;
        let model = KoopmanModel::new(lib, sparse.xi_t.clone(), kind)?;
        (sparse, model, None)
    } else {
        let lib = ObservableLibrary::monomials(dim, a.degree)?;
        let opts = SindyOptions {
            threshold: a.threshold,
            max_iter: a.max_iter,
            ..SindyOptions::default()
        };
        let sparse = sindy_with(&data, &lib, &opts)?;
        let refinement = refine_subspace(&sparse, &data, a.max_rounds)?;
        (sparse, refinement.model.clone(), Some(refinement))
    };

    let mut sink = Sink::new(&io.out)?;
    sink.json("sparse_model.json", &sparse.to_json())?;
    sink.json("koopman_model.json", &model.to_json())?;

    let residuals = trajectories
        .iter()
        .map(|t| invariance_residual(&model, t).map_err(Failure::from))
        .collect::<CliResult<Vec<f64>>>()?;
    let mut report = serde_json::Map::new();
    report.insert("method".into(), json!(if a.dmd { "dmd" } else { "sindy" }));
    report.insert("samples".into(), json!(data.samples()));
    report.insert("observables".into(), json!(model.library.labels()));
    report.insert("invariance_residuals".into(), json!(residuals));
    report.insert(
        "max_invariance_residual".into(),
        json!(residuals.iter().copied().fold(0.0, f64::max)),
    );
    if let Some(r) = &refinement {
        report.insert("converged".into(), json!(r.converged));
        report.insert("rounds".into(), json!(r.rounds));
        report.insert("added".into(), json!(r.added.iter().map(|m| m.to_string()).collect::<Vec<_>>()));
    }
    if let Some(sys) = &sys {
        report.insert("system".into(), json!(sys.name));
        report.insert("params".into(), json!(sys.params));
        report.insert("symbolic".into(), symbolic_check(&model, &sparse, sys));
    }
    sink.json("residual_report.json", &serde_json::Value::Object(report))?;
    sink.report();
    Ok(())
}

/// Compares the identified model with the exact projection of the true
/// system onto the same library, where that projection closes.
fn symbolic_check(model: &KoopmanModel, sparse: &SparseModel, sys: &PolySystem) -> serde_json::Value {
    let closure = model
        .closure_residuals(sys)
        .map(|r| r.iter().map(|p| p.max_abs_coeff()).fold(0.0, f64::max));
    let k_error = project_system(sys, model.library.clone(), Closure::Exact).map(|exact| (&model.k - &exact.k).norm());
    let field_error = sparse.to_system().map(|id| {
        id.equations
            .iter()
            .zip(&sys.equations)
            .map(|(p, q)| (p.clone() + q.scale(-1.0)).max_abs_coeff())
            .fold(0.0, f64::max)
    });
    let show = |r: koopmankit::Result<f64>| match r {
        Ok(v) => json!(v),
        Err(e) => json!(e.to_string()),
    };
    json!({
        "max_closure_residual": show(closure),
        "k_error_frobenius": show(k_error),
        "field_coefficient_error": show(field_error),
    })
}
