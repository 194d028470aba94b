pub mod flow;
pub mod functional;
pub mod geodesic;
pub mod ops;
pub mod regularize;
pub mod verify;

use std::path::PathBuf;

use clap::Args;
use dhym::functionals::{compute_theta0, CalibrationData};
use dhym::torus::{ReferenceForm, TorusGrid};

use crate::config::read_field_file;
use crate::error::{CliError, Result};

/// Reference form for commands driven by snapshot files.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct AlphaArgs {
    /// Constant diagonal form, comma separated; one value is repeated on every axis.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub alpha: Option<Vec<f64>>,
    /// Hermitian field snapshot on the same grid.
    #[arg(long)]
    pub alpha_field: Option<PathBuf>,
}

impl AlphaArgs {
    pub fn calibrate(&self, grid: &TorusGrid<f64>) -> Result<CalibrationData<f64>> {
        let field = match (&self.alpha, &self.alpha_field) {
            (Some(d), _) => {
                let n = grid.n();
                let diag = match d.len() {
                    1 => vec![d[0]; n],
                    k if k == n => d.clone(),
                    k => return Err(CliError::config("alpha", format!("expected 1 or {n} entries, found {k}"))),
                };
                ReferenceForm::diagonal(&diag).field(grid)?
            }
            (None, Some(path)) => {
                let (g, field) = read_field_file(path)?;
                if !g.same_shape(grid) {
                    return Err(CliError::config("alpha_field", "field grid differs from the potential grid"));
                }
                field
            }
            (None, None) => return Err(CliError::config("alpha", "missing reference form")),
        };
        Ok(compute_theta0(&field, grid)?)
    }
}
