use std::path::{Path, PathBuf};

use dhym::flow::{DtPolicy, FlowConfig};
use dhym::torus::{
    read_field, read_potential, HermitianField, Potential, ReferenceForm, Stencil, TorusGrid, TrigPolynomial, TrigTerm,
};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::{CliError, Result};

pub const EXPERIMENT_SCHEMA: &str = "dhym.experiment/1";
pub const LAYOUT_SCHEMA: &str = "dhym.layout/1";

/// Parse JSON or TOML by extension, falling back on the first character.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse(&text, is_json(path, &text))
}

fn is_json(path: &Path, text: &str) -> bool {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => true,
        Some("toml") => false,
        _ => text.trim_start().starts_with('{'),
    }
}

pub fn parse<T: DeserializeOwned>(text: &str, json: bool) -> Result<T> {
    if json {
        let mut de = serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(&mut de)
            .map_err(|e| CliError::config(e.path().to_string(), e.inner().to_string()))
    } else {
        let de = toml::Deserializer::parse(text).map_err(|e| CliError::config(".", e.message().to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| CliError::config(e.path().to_string(), e.inner().message()))
    }
}

fn check_schema(found: &str, want: &str) -> Result<()> {
    if found == want {
        Ok(())
    } else {
        Err(CliError::config("schema", format!("expected {want:?}, found {found:?}")))
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    pub grid: GridSpec,
    pub alpha: AlphaSpec,
    #[serde(default)]
    pub phi0: PotentialRecipe,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub flow: FlowBlock,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n: usize,
    pub points: usize,
    /// Side length; `2 pi` when absent.
    #[serde(default)]
    pub period: Option<f64>,
    #[serde(default)]
    pub stencil: Option<Stencil>,
}

/// Constant Hermitian part plus an optional `i d dbar f` with trigonometric `f`.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaSpec {
    #[serde(default)]
    pub diagonal: Option<Vec<f64>>,
    /// Row-major `[re, im]` pairs.
    #[serde(default)]
    pub matrix: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub potential: Vec<TrigTerm>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialRecipe {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    Trig {
        terms: Vec<TrigTerm>,
    },
    Bump {
        center: Vec<f64>,
        concentration: f64,
        amplitude: f64,
    },
    /// Bump centered at a point drawn from the experiment seed.
    RandomBump {
        concentration: f64,
        amplitude: f64,
    },
    Snapshot {
        path: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DtSpec {
    Fixed(f64),
    Cfl(f64),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowBlock {
    #[serde(default = "FlowBlock::default_eps")]
    pub eps: f64,
    #[serde(default = "FlowBlock::default_dt")]
    pub dt: DtSpec,
    #[serde(default = "FlowBlock::default_t_end")]
    pub t_end: f64,
    #[serde(default = "FlowBlock::default_tol")]
    pub tol: f64,
    #[serde(default = "FlowBlock::default_monitor_every")]
    pub monitor_every: usize,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    #[serde(default = "FlowBlock::default_nodes")]
    pub nodes: usize,
    #[serde(default = "FlowBlock::default_max_steps")]
    pub max_steps: usize,
}

impl FlowBlock {
    fn default_eps() -> f64 {
        FlowConfig::<f64>::default().eps
    }
    fn default_dt() -> DtSpec {
        match FlowConfig::<f64>::default().dt {
            DtPolicy::Fixed(v) => DtSpec::Fixed(v),
            DtPolicy::Cfl(v) => DtSpec::Cfl(v),
        }
    }
    fn default_t_end() -> f64 {
        FlowConfig::<f64>::default().t_end
    }
    fn default_tol() -> f64 {
        FlowConfig::<f64>::default().tol
    }
    fn default_monitor_every() -> usize {
        FlowConfig::<f64>::default().monitor_every
    }
    fn default_nodes() -> usize {
        FlowConfig::<f64>::default().nodes
    }
    fn default_max_steps() -> usize {
        FlowConfig::<f64>::default().max_steps
    }

    pub fn to_config(&self) -> Result<FlowConfig<f64>> {
        let cfg = FlowConfig {
            eps: self.eps,
            dt: match self.dt {
                DtSpec::Fixed(v) => DtPolicy::Fixed(v),
                DtSpec::Cfl(v) => DtPolicy::Cfl(v),
            },
            t_end: self.t_end,
            tol: self.tol,
            monitor_every: self.monitor_every,
            snapshot_times: self.snapshot_times.clone(),
            nodes: self.nodes,
            max_steps: self.max_steps,
        };
        cfg.validate().map_err(|e| CliError::config("flow", e.to_string()))?;
        Ok(cfg)
    }
}

impl Default for FlowBlock {
    fn default() -> Self {
        Self {
            eps: Self::default_eps(),
            dt: Self::default_dt(),
            t_end: Self::default_t_end(),
            tol: Self::default_tol(),
            monitor_every: Self::default_monitor_every(),
            snapshot_times: Vec::new(),
            nodes: Self::default_nodes(),
            max_steps: Self::default_max_steps(),
        }
    }
}

/// A validated experiment, with every recipe realized on the grid.
pub struct Experiment {
    pub grid: TorusGrid<f64>,
    pub alpha: HermitianField<f64>,
    pub phi0: Potential<f64>,
    pub flow: FlowConfig<f64>,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// `base` resolves relative snapshot paths; it is the config file's directory.
    pub fn realize(&self, base: &Path) -> Result<Experiment> {
        check_schema(&self.schema, EXPERIMENT_SCHEMA)?;
        let grid = self.grid.build()?;
        let alpha = self.alpha.build(&grid, "alpha")?;
        let phi0 = self.phi0.build(&grid, base, self.seed, "phi0")?;
        let flow = self.flow.to_config()?;
        Ok(Experiment { grid, alpha, phi0, flow, output_dir: self.output_dir.clone() })
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<TorusGrid<f64>> {
        let period = self.period.unwrap_or(std::f64::consts::TAU);
        let stencil = self.stencil.unwrap_or(Stencil::default_for(self.n));
        TorusGrid::with_stencil(self.n, self.points, period, stencil)
            .map_err(|e| CliError::config("grid", e.to_string()))
    }
}

impl AlphaSpec {
    pub fn build(&self, grid: &TorusGrid<f64>, key: &str) -> Result<HermitianField<f64>> {
        let n = grid.n();
        let constant = match (&self.diagonal, &self.matrix) {
            (Some(d), None) => {
                if d.len() != n {
                    let msg = format!("expected {n} entries, found {}", d.len());
                    return Err(CliError::config(format!("{key}.diagonal"), msg));
                }
                ReferenceForm::diagonal(d).constant
            }
            (None, Some(m)) => {
                if m.len() != n * n {
                    let msg = format!("expected {} entries, found {}", n * n, m.len());
                    return Err(CliError::config(format!("{key}.matrix"), msg));
                }
                m.iter().map(|&[re, im]| Complex::new(re, im)).collect()
            }
            _ => return Err(CliError::config(key, "give exactly one of `diagonal` and `matrix`")),
        };
        let form = ReferenceForm { constant, potential: TrigPolynomial::new(self.potential.clone()) };
        form.field(grid).map_err(|e| CliError::config(key, e.to_string()))
    }
}

impl PotentialRecipe {
    pub fn build(&self, grid: &TorusGrid<f64>, base: &Path, seed: u64, key: &str) -> Result<Potential<f64>> {
        let axes = grid.axes();
        let wrong = |e: dhym::Error| CliError::config(key, e.to_string());
        match self {
            PotentialRecipe::Zero => Ok(Potential::zeros(grid)),
            PotentialRecipe::Constant { value } => Ok(Potential::constant(grid, *value)),
            PotentialRecipe::Trig { terms } => TrigPolynomial::new(terms.clone()).sample(grid).map_err(wrong),
            PotentialRecipe::Bump { center, concentration, amplitude } => {
                if center.len() != axes {
                    let msg = format!("expected {axes} coordinates, found {}", center.len());
                    return Err(CliError::config(format!("{key}.center"), msg));
                }
                Ok(Potential::bump(grid, center, *concentration, *amplitude))
            }
            PotentialRecipe::RandomBump { concentration, amplitude } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let center: Vec<f64> = (0..axes).map(|_| rng.gen_range(0.0..grid.period())).collect();
                Ok(Potential::bump(grid, &center, *concentration, *amplitude))
            }
            PotentialRecipe::Snapshot { path } => {
                let (g, phi) = read_potential_file(&base.join(path))?;
                if !g.same_shape(grid) {
                    return Err(CliError::config(
                        format!("{key}.path"),
                        "snapshot grid differs from the experiment grid",
                    ));
                }
                Ok(phi)
            }
        }
    }
}

pub fn read_potential_file(path: &Path) -> Result<(TorusGrid<f64>, Potential<f64>)> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(read_potential(std::io::BufReader::new(file))?)
}

pub fn read_field_file(path: &Path) -> Result<(TorusGrid<f64>, HermitianField<f64>)> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(read_field(std::io::BufReader::new(file))?)
}

/// Patches for gluing: slabs along the first axis, each carrying the input
/// potential plus its own shift and trigonometric correction.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutConfig {
    pub schema: String,
    pub slabs: usize,
    /// Cells added on both sides of each slab.
    pub overlap: usize,
    pub patches: Vec<PatchSpec>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSpec {
    #[serde(default)]
    pub shift: f64,
    #[serde(default)]
    pub terms: Vec<TrigTerm>,
}

impl LayoutConfig {
    pub fn validate(&self) -> Result<()> {
        check_schema(&self.schema, LAYOUT_SCHEMA)?;
        if self.patches.len() != self.slabs {
            let msg = format!("{} slabs need {} patches, found {}", self.slabs, self.slabs, self.patches.len());
            return Err(CliError::config("patches", msg));
        }
        Ok(())
    }
}
