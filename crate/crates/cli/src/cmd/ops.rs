use clap::{Args, Subcommand};
use dhym::eigenops::{
    f_eps, grad_f_eps, hess_f_eps, in_cone, phase_p, phase_q, phase_qhat, product_re_im, ConeSpec, PhaseVector,
};
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::output::to_json;

#[derive(Debug, Subcommand)]
pub enum OpsCommand {
    /// The twisted operator F_eps.
    Eval(EvalArgs),
    /// Q, P, Qhat and the product prod (l_k + i); cone membership with --theta.
    Phase(PhaseArgs),
    /// Gradient of F_eps in the eigenvalues, as a JSON array.
    Grad(OpsArgs),
    /// Hessian of F_eps in the eigenvalues, as nested JSON arrays.
    Hess(OpsArgs),
}

#[derive(Debug, Args)]
pub struct OpsArgs {
    /// Comma-separated eigenvalues.
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    pub lambda: Vec<f64>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub eps: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub ops: OpsArgs,
    /// Significant digits printed; the polar evaluation carries a few ulps of rounding.
    #[arg(long, default_value_t = 12, value_parser = clap::value_parser!(u8).range(1..=17))]
    pub digits: u8,
}

#[derive(Debug, Args)]
pub struct PhaseArgs {
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    pub lambda: Vec<f64>,
    /// Cone angle bounding P; needs --big-theta.
    #[arg(long, requires = "big_theta")]
    pub theta: Option<f64>,
    /// Cone angle bounding Q.
    #[arg(long, requires = "theta")]
    pub big_theta: Option<f64>,
}

#[derive(Serialize)]
struct PhaseRecord {
    q: f64,
    p: f64,
    qhat: f64,
    re: f64,
    im: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    in_cone: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cone_margin: Option<f64>,
}

fn vector(lambda: &[f64]) -> Result<PhaseVector<f64>> {
    PhaseVector::new(lambda).map_err(|e| CliError::config("lambda", e.to_string()))
}

/// Round to `digits` significant digits, then print the shortest exact form.
pub fn short(x: f64, digits: u8) -> String {
    let p = usize::from(digits.max(1) - 1);
    let rounded: f64 = format!("{x:.p$e}").parse().unwrap_or(x);
    rounded.to_string()
}

pub fn run(cmd: &OpsCommand) -> Result<String> {
    match cmd {
        OpsCommand::Eval(a) => Ok(format!("{}\n", short(f_eps(&vector(&a.ops.lambda)?, a.ops.eps)?, a.digits))),
        OpsCommand::Grad(a) => Ok(to_json(&grad_f_eps(&vector(&a.lambda)?, a.eps)?.to_vec())),
        OpsCommand::Hess(a) => {
            let n = a.lambda.len();
            let h = hess_f_eps(&vector(&a.lambda)?, a.eps)?;
            let rows: Vec<Vec<f64>> = h.chunks(n).map(<[f64]>::to_vec).collect();
            Ok(to_json(&rows))
        }
        OpsCommand::Phase(a) => {
            let l = vector(&a.lambda)?;
            let (re, im) = product_re_im(&l);
            let mut rec = PhaseRecord {
                q: phase_q(&l),
                p: phase_p(&l),
                qhat: phase_qhat(&l),
                re,
                im,
                in_cone: None,
                cone_margin: None,
            };
            if let (Some(theta), Some(big)) = (a.theta, a.big_theta) {
                let cone = ConeSpec::new(theta, big).map_err(|e| CliError::config("theta", e.to_string()))?;
                let m = in_cone(&l, &cone);
                rec.in_cone = Some(m.inside);
                rec.cone_margin = Some(m.margin);
            }
            Ok(to_json(&rec))
        }
    }
}
