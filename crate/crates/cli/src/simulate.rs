use koopmankit::dynamics::{builtin, integrate, iterate, PolySystem, TimeKind, Trajectory};
use koopmankit::lifting::{carleman_center, carleman_logistic, divergence_horizon, slow_manifold_lift_ct};
use koopmankit::spectral::slow_subspace_slope;

use crate::args::{parse_vectors, IoArgs, SimulateArgs};
use crate::output::Sink;
use crate::{CliResult, Failure};

/// Initial conditions of the three lifted trajectories in the
/// quadratic-manifold figure.
const QUAD_X0: [[f64; 2]; 3] = [[1.5, -1.0], [1.0, -1.0], [2.0, -1.0]];

pub fn run(io: &IoArgs, a: &SimulateArgs) -> CliResult<()> {
    if !(a.dt > 0.0) {
        return Err(Failure::Config("--dt must be positive".into()));
    }
    let sys = builtin(&a.system.system, &a.system.overrides())?;
    let mut sink = Sink::new(&io.out)?;
    match sys.name.as_str() {
        "quad-manifold" => quad_manifold(&mut sink, io, a, &sys)?,
        "center-manifold" => center_manifold(&mut sink, io, a, &sys)?,
        "logistic" => logistic(&mut sink, a, &sys)?,
        _ => plain(&mut sink, a, &sys)?,
    }
    sink.report();
    Ok(())
}

fn run_system(sys: &PolySystem, x0: &[f64], horizon: f64, dt: f64) -> CliResult<Trajectory> {
    Ok(match sys.time_kind {
        TimeKind::Continuous => integrate(sys, x0, horizon, dt, None)?,
        TimeKind::Discrete => iterate(sys, x0, horizon.round() as usize)?,
    })
}

fn default_horizon(sys: &PolySystem) -> f64 {
    match sys.time_kind {
        TimeKind::Continuous => 10.0,
        TimeKind::Discrete => 50.0,
    }
}

fn initial_conditions(a: &SimulateArgs, sys: &PolySystem, fallback: &[Vec<f64>]) -> CliResult<Vec<Vec<f64>>> {
    if a.x0.is_empty() {
        Ok(fallback.to_vec())
    } else {
        parse_vectors(&a.x0, sys.dim())
    }
}

fn plain(sink: &mut Sink, a: &SimulateArgs, sys: &PolySystem) -> CliResult<()> {
    let x0s = initial_conditions(a, sys, &[vec![0.5; sys.dim()]])?;
    let horizon = a.horizon.unwrap_or_else(|| default_horizon(sys));
    for (k, x0) in x0s.iter().enumerate() {
        let traj = run_system(sys, x0, horizon, a.dt)?;
        sink.trajectory(&format!("{}_{}.csv", sys.name, k + 1), &traj)?;
    }
    Ok(())
}

fn quad_manifold(sink: &mut Sink, io: &IoArgs, a: &SimulateArgs, sys: &PolySystem) -> CliResult<()> {
    let mu = sys.params["mu"];
    let lambda = sys.params["lambda"];
    let model = slow_manifold_lift_ct(mu, lambda, &[(1.0, 2)])?;
    let fallback: Vec<Vec<f64>> = QUAD_X0.iter().map(|x| x.to_vec()).collect();
    let x0s = initial_conditions(a, sys, &fallback)?;
    let horizon = a.horizon.unwrap_or(20.0);
    for (k, x0) in x0s.iter().enumerate() {
        let idx = k + 1;
        let states = integrate(sys, x0, horizon, a.dt, None)?;
        sink.trajectory(&format!("quad-manifold_{idx}_states.csv"), &states)?;
        let pred = model.predict(x0, horizon, a.dt)?;
        sink.trajectory(&format!("quad-manifold_{idx}_koopman.csv"), &pred)?;
        let y0 = model.lift_state(x0)?;
        let lifted = (0..pred.len()).map(|s| {
            let t = pred.times[s];
            let y = (&model.k * t).exp() * nalgebra_vector(&y0);
            vec![t, y[0], y[1], y[2]]
        });
        sink.table(&format!("quad-manifold_{idx}_lifted.csv"), &["t", "y1", "y2", "y3"], lifted)?;
    }

    let h = a.grid_step;
    if !(h > 0.0) {
        return Err(Failure::Config("--grid-step must be positive".into()));
    }
    let axis = |lo: f64, hi: f64| -> Vec<f64> {
        let n = ((hi - lo) / h).round() as usize;
        (0..=n).map(|i| lo + i as f64 * h).collect()
    };
    let y1s = axis(-2.0, 2.0);
    // degenerate when 2 mu = lambda; the slow plane is then skipped
    let slope = slow_subspace_slope(&model).ok();
    // x2 = x1^2 lifted: y2 = y1^2 for every y3
    let red = y1s.iter().flat_map(|&y1| axis(-1.0, 4.0).into_iter().map(move |y3| vec![y1, y1 * y1, y3]));
    sink.table("quad-manifold_surface_red.csv", &["y1", "y2", "y3"], red)?;
    // the lifted coordinate constraint y3 = y1^2
    let blue = y1s.iter().flat_map(|&y1| axis(-1.0, 4.0).into_iter().map(move |y2| vec![y1, y2, y1 * y1]));
    sink.table("quad-manifold_surface_blue.csv", &["y1", "y2", "y3"], blue)?;
    // slow subspace spanned by the y1 axis and the 2 mu eigenvector
    if let Some(slope) = slope {
        let green = y1s.iter().flat_map(|&y1| axis(0.0, 4.0).into_iter().map(move |y2| vec![y1, y2, slope * y2]));
        sink.table("quad-manifold_surface_green.csv", &["y1", "y2", "y3"], green)?;
    }
    sink.json(
        "quad-manifold_summary.json",
        &serde_json::json!({ "mu": mu, "lambda": lambda, "slow_subspace_slope": slope, "initial_conditions": x0s }),
    )?;
    if io.gnuplot {
        let mut gp = String::from("set xlabel 'y1'\nset ylabel 'y2'\nset zlabel 'y3'\nset datafile separator ','\nsplot ");
        let mut parts = vec![
            "'quad-manifold_surface_red.csv' skip 1 with dots lc rgb 'red' title 'x2 = x1^2'".to_string(),
            "'quad-manifold_surface_blue.csv' skip 1 with dots lc rgb 'blue' title 'y3 = y1^2'".to_string(),
        ];
        if slope.is_some() {
            parts.push(
                "'quad-manifold_surface_green.csv' skip 1 with dots lc rgb 'dark-green' title 'slow subspace'".to_string(),
            );
        }
        for k in 1..=x0s.len() {
            parts.push(format!(
                "'quad-manifold_{k}_lifted.csv' skip 1 using 2:3:4 with lines lc rgb 'black' notitle"
            ));
        }
        gp.push_str(&parts.join(", \\\n  "));
        gp.push('\n');
        sink.text("quad-manifold.gp", &gp)?;
    }
    Ok(())
}

fn nalgebra_vector(v: &[f64]) -> koopmankit::numerics::Mat {
    koopmankit::numerics::Mat::from_column_slice(v.len(), 1, v)
}

fn center_manifold(sink: &mut Sink, io: &IoArgs, a: &SimulateArgs, sys: &PolySystem) -> CliResult<()> {
    let ranks = if a.rank.is_empty() { vec![4, 8, 12] } else { a.rank.clone() };
    let x0s = initial_conditions(a, sys, &[vec![0.5]])?;
    let mut horizon_rows = Vec::new();
    for (k, x0) in x0s.iter().enumerate() {
        let x0 = x0[0];
        if !(x0 > 0.0) {
            return Err(Failure::Config("center-manifold comparison needs x0 > 0".into()));
        }
        // x(t) = x0 / (1 - x0 t) escapes at t = 1/x0; stop short of it
        let horizon = a.horizon.unwrap_or(0.95 / x0);
        if horizon >= 1.0 / x0 {
            return Err(Failure::Config(format!("horizon must stay below the escape time {}", 1.0 / x0)));
        }
        let steps = (horizon / a.dt).round() as usize;
        let times: Vec<f64> = (0..=steps).map(|s| s as f64 * a.dt).collect();
        let exact = Trajectory::new(times.clone(), times.iter().map(|t| vec![x0 / (1.0 - x0 * t)]).collect(), None)?;
        let preds = ranks
            .iter()
            .map(|&r| carleman_center(r)?.predict(&[x0], horizon, a.dt))
            .collect::<koopmankit::Result<Vec<_>>>()?;
        let mut header = vec!["t".to_string(), "exact".to_string()];
        header.extend(ranks.iter().map(|r| format!("rank{r}")));
        let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows = (0..times.len()).map(|s| {
            let mut row = vec![times[s], exact.states[s][0]];
            row.extend(preds.iter().map(|p| p.states[s][0]));
            row
        });
        sink.table(&format!("center-manifold_{}_truncations.csv", k + 1), &header_ref, rows)?;
        for (r, p) in ranks.iter().zip(&preds) {
            let h = divergence_horizon(p, &exact, 0.1).unwrap_or(horizon);
            horizon_rows.push(vec![x0, *r as f64, h]);
        }
    }
    sink.table("center-manifold_horizons.csv", &["x0", "rank", "horizon"], horizon_rows)?;
    if io.gnuplot {
        let mut gp = String::from("set datafile separator ','\nset key autotitle columnhead\nset xlabel 't'\nplot ");
        let cols: Vec<String> = (2..=ranks.len() + 2)
            .map(|c| format!("'center-manifold_1_truncations.csv' using 1:{c} with lines"))
            .collect();
        gp.push_str(&cols.join(", \\\n  "));
        gp.push('\n');
        sink.text("center-manifold.gp", &gp)?;
    }
    Ok(())
}

fn logistic(sink: &mut Sink, a: &SimulateArgs, sys: &PolySystem) -> CliResult<()> {
    let r = sys.params["r"];
    let max_rank = a.rank.iter().copied().max().unwrap_or(5);
    let ranks: Vec<usize> = if a.rank.len() > 1 { a.rank.clone() } else { (1..=max_rank).collect() };
    let x0s = initial_conditions(a, sys, &[vec![0.2], vec![0.4], vec![0.6]])?;
    let steps = a.horizon.unwrap_or(20.0);
    let mut rows = Vec::new();
    for x0 in &x0s {
        let truth = iterate(sys, x0, steps.round() as usize)?;
        for &rank in &ranks {
            let pred = carleman_logistic(r, rank)?.predict(x0, steps, 1.0)?;
            let h = divergence_horizon(&pred, &truth, 0.1).map_or(-1.0, |t| t);
            rows.push(vec![x0[0], rank as f64, h]);
        }
    }
    sink.table("logistic_divergence_horizons.csv", &["x0", "rank", "first_step_over_10pct"], rows)?;
    for (k, x0) in x0s.iter().enumerate() {
        sink.trajectory(&format!("logistic_{}.csv", k + 1), &iterate(sys, x0, steps.round() as usize)?)?;
    }
    Ok(())
}
