use std::path::PathBuf;

use clap::Args;
use dhym::geodesic::{
    dp_lower_bound, endpoint_energy, estimate_dp, DpEstimate, GeodesicConfig, DEFAULT_DELTA, DEFAULT_EPS_SCHEDULE,
    DEFAULT_SLICES,
};
use serde::Serialize;

use super::AlphaArgs;
use crate::config::read_potential_file;
use crate::error::{CliError, Result};
use crate::output::{file_name, resolve_dir, to_json, write_csv, write_json};

#[derive(Debug, Args)]
pub struct GeodesicArgs {
    /// Potential snapshot at t = 0.
    #[arg(long)]
    pub phi0: PathBuf,
    /// Potential snapshot at t = 1.
    #[arg(long)]
    pub phi1: PathBuf,
    #[command(flatten)]
    pub alpha: AlphaArgs,
    /// Comma-separated eps schedule; the two smallest feed the extrapolation.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_EPS_SCHEDULE)]
    pub eps: Vec<f64>,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    #[arg(long, default_value_t = DEFAULT_SLICES)]
    pub slices: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 400)]
    pub max_iter: usize,
    /// Smoothing of `|phi_t|` in the energy profile.
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct GeodesicSummary {
    schema: &'static str,
    theta0: f64,
    #[serde(flatten)]
    estimate: DpEstimate<f64>,
    /// Larger of the two one-sided endpoint integrals; bounds `extrapolated^p` below.
    lower_bound: f64,
    /// Energy of the straight segment at `phi0`.
    endpoint_energy: f64,
    energy_profile: String,
}

pub fn run(args: &GeodesicArgs) -> Result<String> {
    let (grid, phi0) = read_potential_file(&args.phi0)?;
    let (g1, phi1) = read_potential_file(&args.phi1)?;
    if !g1.same_shape(&grid) {
        return Err(CliError::config("phi1", "endpoint grids differ"));
    }
    let cal = args.alpha.calibrate(&grid)?;
    let cfg = GeodesicConfig {
        slices: args.slices,
        tol: args.tol,
        max_iter: args.max_iter,
        p: args.p,
        delta: args.delta,
        ..GeodesicConfig::default()
    };
    cfg.validate().map_err(|e| CliError::config("geodesic", e.to_string()))?;
    if args.eps.iter().any(|&e| !(e > 0.0)) {
        return Err(CliError::config("eps", "every eps must be positive"));
    }
    let dir = resolve_dir(args.out.as_deref(), None)?;
    let estimate = estimate_dp(&cal, &grid, &phi0, &phi1, &args.eps, &cfg)?;

    let csv = dir.join("energy.csv");
    let rows = estimate.reports.iter().flat_map(|r| {
        let prof = &r.profile;
        (0..prof.times.len()).map(move |k| vec![r.eps, prof.times[k], prof.energy[k], prof.energy_smoothed[k]])
    });
    write_csv(&csv, &["eps", "t", "energy", "energy_smoothed"], rows)?;

    let summary = GeodesicSummary {
        schema: "dhym.geodesic/1",
        theta0: cal.theta0,
        lower_bound: dp_lower_bound(&cal, &grid, &phi0, &phi1, args.p)?,
        endpoint_energy: endpoint_energy(&cal, &grid, &phi0, &phi1, args.p)?,
        estimate,
        energy_profile: file_name(&csv),
    };
    write_json(&dir.join("geodesic.json"), &summary)?;
    Ok(to_json(&summary))
}
