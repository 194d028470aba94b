use std::path::PathBuf;

use clap::Args;
use dhym::regularize::{
    glue, mollify_potential, phase_after_mollify_check, slab_layout, GluePatch, GlueReport, MollifierSpec,
    MollifyReport,
};
use dhym::torus::{Potential, TrigPolynomial};
use serde::Serialize;

use super::AlphaArgs;
use crate::config::{load, read_potential_file, LayoutConfig, PatchSpec};
use crate::error::{CliError, Result};
use crate::output::{file_name, resolve_dir, to_json, write_json, write_snapshot};

#[derive(Debug, Args)]
pub struct RegularizeArgs {
    /// Potential snapshot.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub alpha: AlphaArgs,
    /// Mollifier radius in grid cells; no mollification when absent.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Width of the regularized maximum.
    #[arg(long, default_value_t = 0.05)]
    pub eta: f64,
    /// Patch layout, JSON or TOML; one patch covering the torus when absent.
    #[arg(long)]
    pub layout: Option<PathBuf>,
    /// Tolerance of the mollification phase check.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct RegularizeSummary {
    schema: &'static str,
    theta0: f64,
    patches: usize,
    mollify: Option<MollifyReport<f64>>,
    glue: GlueReport<f64>,
    output: String,
}

pub fn run(args: &RegularizeArgs) -> Result<String> {
    if !(args.eta > 0.0) {
        return Err(CliError::config("eta", "must be positive"));
    }
    let (grid, input) = read_potential_file(&args.input)?;
    let cal = args.alpha.calibrate(&grid)?;
    let (base, mollify) = match args.radius {
        Some(r) => {
            let spec = MollifierSpec::new(&grid, r).map_err(|e| CliError::config("radius", e.to_string()))?;
            let report = phase_after_mollify_check(&cal, &grid, &input, &spec, args.tol)?;
            (mollify_potential(&grid, &spec, &input)?, Some(report))
        }
        None => (input, None),
    };
    let layout = match &args.layout {
        Some(path) => {
            let l: LayoutConfig = load(path)?;
            l.validate()?;
            l
        }
        None => LayoutConfig { schema: String::new(), slabs: 1, overlap: 0, patches: vec![PatchSpec::default()] },
    };
    let sets =
        slab_layout(&grid, layout.slabs, layout.overlap).map_err(|e| CliError::config("slabs", e.to_string()))?;
    let mut patches = Vec::with_capacity(sets.len());
    for (k, (set, spec)) in sets.into_iter().zip(&layout.patches).enumerate() {
        let extra = TrigPolynomial::new(spec.terms.clone())
            .sample(&grid)
            .map_err(|e| CliError::config(format!("patches[{k}].terms"), e.to_string()))?;
        let local: Potential<f64> = base.add(&extra).add_constant(spec.shift);
        patches.push(GluePatch::restrict(set, &local));
    }
    let (glued, report) = glue(&cal, &grid, &patches, args.eta)?;

    let dir = resolve_dir(args.out.as_deref(), None)?;
    let path = dir.join("regularized.csv");
    write_snapshot(&path, &grid, &glued)?;
    let summary = RegularizeSummary {
        schema: "dhym.regularize/1",
        theta0: cal.theta0,
        patches: patches.len(),
        mollify,
        glue: report,
        output: file_name(&path),
    };
    write_json(&dir.join("regularize.json"), &summary)?;
    Ok(to_json(&summary))
}
