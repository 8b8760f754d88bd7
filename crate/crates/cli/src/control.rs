use std::collections::BTreeMap;

use koopmankit::control::{compare_lqr_kooc, ComparisonOptions};
use koopmankit::dynamics::builtin;
use koopmankit::numerics::Mat;
use koopmankit::Error;

use crate::args::{parse_vector, ControlArgs, IoArgs};
use crate::output::Sink;
use crate::{CliResult, Failure};

pub fn run(io: &IoArgs, a: &ControlArgs) -> CliResult<()> {
    if !(a.q >= 0.0) || !(a.input_weight > 0.0) {
        return Err(Failure::Config("--q must be >= 0 and --input-weight > 0".into()));
    }
    let sys = builtin(&a.system, &a.system_args().overrides())?;
    let b = sys
        .input_map
        .as_ref()
        .ok_or_else(|| Failure::Config(format!("system `{}` has no input", sys.name)))?;
    let n = sys.dim();
    let m = b.ncols();
    let x0 = parse_vector(&a.x0)?;
    let mut opts = ComparisonOptions::new(n, m);
    opts.horizon = a.horizon;
    opts.dt = a.dt;
    opts.q = Mat::identity(n, n) * a.q;
    opts.r = Mat::identity(m, m) * a.input_weight;

    let mut sink = Sink::new(&io.out)?;
    let report = match compare_lqr_kooc(&sys, &x0, &opts) {
        Ok(r) => r,
        Err(e @ Error::NotStabilizable { .. }) => {
            let modes = match &e {
                Error::NotStabilizable { modes } => modes.clone(),
                _ => unreachable!(),
            };
            sink.json(
                "control_failure.json",
                &serde_json::json!({
                    "system": sys.name,
                    "params": sys.params,
                    "error": "not stabilizable",
                    "uncontrollable_modes": modes,
                }),
            )?;
            sink.report();
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };

    let prefix = &sys.name;
    let lqr_file = format!("{prefix}_lqr.csv");
    let kooc_file = format!("{prefix}_kooc.csv");
    sink.trajectory(&lqr_file, &report.lqr)?;
    sink.trajectory(&kooc_file, &report.kooc)?;
    let cost_rows = (0..report.lqr.len()).map(|s| {
        vec![
            report.lqr.times[s],
            report.j_lqr[s],
            report.j_kooc[s],
            report.j_lqr_lqr_input[s],
            report.j_kooc_lqr_input[s],
        ]
    });
    sink.table(
        &format!("{prefix}_cost.csv"),
        &["t", "J_lqr", "J_kooc", "J_lqr_lqr_input", "J_kooc_lqr_input"],
        cost_rows,
    )?;
    let files: BTreeMap<String, String> = [("lqr".to_string(), lqr_file), ("kooc".to_string(), kooc_file)].into();
    sink.json(&format!("{prefix}_control_report.json"), &report.to_json(files))?;

    if io.gnuplot {
        let gp = format!(
            "set datafile separator ','\nset key autotitle columnhead\nset xlabel 't'\nset ylabel 'J'\n\
             plot '{prefix}_cost.csv' using 1:2 with lines, '{prefix}_cost.csv' using 1:3 with lines\n"
        );
        sink.text(&format!("{prefix}_cost.gp"), &gp)?;
    }
    sink.report();
    println!(
        "cost ratio J_kooc/J_lqr = {:.4} (both priced with the LQR input law: {:.4})",
        report.cost_ratio, report.cost_ratio_lqr_input
    );
    Ok(())
}
