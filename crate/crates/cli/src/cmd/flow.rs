use std::path::PathBuf;

use clap::Args;
use dhym::flow::{run as run_flow, FlowSample};
use dhym::functionals::compute_theta0;
use serde::Serialize;

use crate::config::{load, ExperimentConfig};
use crate::error::Result;
use crate::output::{file_name, resolve_dir, to_json, write_csv, write_json, write_snapshot};

#[derive(Debug, Args)]
pub struct FlowArgs {
    /// Experiment config, JSON or TOML.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the config and the environment.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

const TRACE_COLUMNS: [&str; 15] = [
    "t",
    "dt",
    "j_eps",
    "im_z",
    "min_q",
    "max_q",
    "min_f",
    "max_f",
    "osc_phidot",
    "sup_abs_phi",
    "sup_abs_phidot",
    "min_lambda",
    "dissipation",
    "weighted_mean_phidot",
    "j_eps_increment",
];

fn row(s: &FlowSample<f64>) -> Vec<f64> {
    vec![
        s.t,
        s.dt,
        s.j_eps,
        s.im_z,
        s.min_q,
        s.max_q,
        s.min_f,
        s.max_f,
        s.osc_phidot,
        s.sup_abs_phi,
        s.sup_abs_phidot,
        s.min_lambda,
        s.dissipation,
        s.weighted_mean_phidot,
        s.j_eps_increment,
    ]
}

#[derive(Serialize)]
struct SnapshotEntry {
    t: f64,
    file: String,
}

#[derive(Serialize)]
struct FlowSummary {
    schema: &'static str,
    theta0: f64,
    a0: f64,
    eps: f64,
    converged: bool,
    steps: usize,
    rejected: usize,
    samples: usize,
    final_t: f64,
    /// Slope of `ln osc phi_t` over the second half of the run.
    decay_rate: Option<f64>,
    im_z_drift: f64,
    initial_f_range: (f64, f64),
    final_f_range: (f64, f64),
    trace: String,
    snapshots: Vec<SnapshotEntry>,
    final_potential: String,
    stationary: Option<String>,
}

pub fn run(args: &FlowArgs) -> Result<String> {
    let cfg: ExperimentConfig = load(&args.config)?;
    let base = args.config.parent().map(PathBuf::from).unwrap_or_default();
    let exp = cfg.realize(&base)?;
    let dir = resolve_dir(args.out.as_deref(), exp.output_dir.as_deref())?;
    let cal = compute_theta0(&exp.alpha, &exp.grid)?;
    let trace = run_flow(&cal, &exp.grid, &exp.phi0, &exp.flow)?;

    let trace_path = dir.join("trace.csv");
    write_csv(&trace_path, &TRACE_COLUMNS, trace.samples.iter().map(row))?;
    let mut snapshots = Vec::with_capacity(trace.snapshots.len());
    for (k, (t, phi)) in trace.snapshots.iter().enumerate() {
        let path = dir.join(format!("snapshot_{k:03}.csv"));
        write_snapshot(&path, &exp.grid, phi)?;
        snapshots.push(SnapshotEntry { t: *t, file: file_name(&path) });
    }
    let final_path = dir.join("final.csv");
    write_snapshot(&final_path, &exp.grid, &trace.final_phi)?;
    let stationary = match &trace.stationary {
        Some(phi) => {
            let path = dir.join("stationary.csv");
            write_snapshot(&path, &exp.grid, phi)?;
            Some(file_name(&path))
        }
        None => None,
    };

    let first = &trace.samples[0];
    let last = trace.samples.last().expect("the initial sample is always recorded");
    let summary = FlowSummary {
        schema: "dhym.flow/1",
        theta0: cal.theta0,
        a0: cal.a0,
        eps: exp.flow.eps,
        converged: trace.converged,
        steps: trace.steps,
        rejected: trace.rejected,
        samples: trace.samples.len(),
        final_t: last.t,
        decay_rate: trace.decay_rate(),
        im_z_drift: trace.samples.iter().fold(0.0, |m, s| m.max((s.im_z - first.im_z).abs())),
        initial_f_range: (first.min_f, first.max_f),
        final_f_range: (last.min_f, last.max_f),
        trace: file_name(&trace_path),
        snapshots,
        final_potential: file_name(&final_path),
        stationary,
    };
    write_json(&dir.join("flow.json"), &summary)?;
    Ok(to_json(&summary))
}
