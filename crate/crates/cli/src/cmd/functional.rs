use std::path::PathBuf;

use clap::Args;
use dhym::functionals::{coercivity_gap, im_z, j, j0, j_eps, membership, Membership, DEFAULT_NODES};
use dhym::torus::pointwise_phase;
use serde::Serialize;

use super::AlphaArgs;
use crate::config::read_potential_file;
use crate::error::{CliError, Result};
use crate::output::{resolve_dir, to_json, write_json};

#[derive(Debug, Args)]
pub struct FunctionalArgs {
    /// Potential snapshot.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub alpha: AlphaArgs,
    #[arg(long, default_value_t = 1e-2)]
    pub eps: f64,
    /// Gauss-Legendre nodes along the segment `t phi`.
    #[arg(long, default_value_t = DEFAULT_NODES)]
    pub nodes: usize,
    /// Weight of the Im gap in the coercivity diagnostic.
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    /// Additive constant of the coercivity diagnostic.
    #[arg(long = "big-c", visible_alias = "bigC", default_value_t = 1.0)]
    pub big_c: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Margins {
    /// Membership of the almost calibrated class, `Q in (0, Theta0)`.
    h: Membership<f64>,
    min_q: f64,
    max_q: f64,
    big_theta0: f64,
}

#[derive(Serialize)]
#[allow(non_snake_case)]
struct FunctionalRecord {
    schema: &'static str,
    theta0: f64,
    a0: f64,
    eps: f64,
    nodes: usize,
    J: f64,
    J0: f64,
    Jeps: f64,
    ImZ: f64,
    coercivity_gap: f64,
    margins: Margins,
}

pub fn run(args: &FunctionalArgs) -> Result<String> {
    if args.nodes == 0 {
        return Err(CliError::config("nodes", "need at least one node"));
    }
    if !(args.eps >= 0.0) {
        return Err(CliError::config("eps", "must be nonnegative"));
    }
    let (grid, phi) = read_potential_file(&args.input)?;
    let cal = args.alpha.calibrate(&grid)?;
    let q = pointwise_phase(&cal.alpha_phi(&phi, &grid)?).q;
    let (min_q, max_q) = q.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let m = args.nodes;
    let rec = FunctionalRecord {
        schema: "dhym.functional/1",
        theta0: cal.theta0,
        a0: cal.a0,
        eps: args.eps,
        nodes: m,
        J: j(&cal, &grid, &phi, m)?,
        J0: j0(&cal, &grid, &phi, m)?,
        Jeps: j_eps(&cal, &grid, &phi, args.eps, m)?,
        ImZ: im_z(&cal, &grid, &phi, m)?,
        coercivity_gap: coercivity_gap(&cal, &grid, &phi, args.delta, args.big_c, m)?,
        margins: Margins { h: membership(&cal, &grid, &phi, 0.0)?, min_q, max_q, big_theta0: cal.big_theta0 },
    };
    if let Some(out) = &args.out {
        let dir = resolve_dir(Some(out), None)?;
        write_json(&dir.join("functional.json"), &rec)?;
    }
    Ok(to_json(&rec))
}
