//! Experiment configuration files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use bmp_core::catalog;
use bmp_core::harness::{PairRegime, Tolerances};
use bmp_core::model::{build_model, from_jordan_design, FiniteModel, JordanDesign, ModelConfig};
use bmp_core::quadrature::QuadratureConfig;
use bmp_core::{FunctionOnE, Regime, SpectralDecomposition, C64};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// Where the model comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    /// Raw rates and offspring laws.
    Inline(ModelConfig),
    /// Declared Jordan form of the mean generator.
    Design(JordanDesign),
    /// A JSON file holding either of the above, or a `spectrum.json`.
    Path(PathBuf),
    /// A built-in model by name.
    Catalog(String),
}

/// A test function: explicit values or a combination of eigenfunctions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FunctionSpec {
    Values(Vec<f64>),
    Spectral {
        spectral: Vec<SpectralTerm>,
        #[serde(default)]
        part: Part,
    },
}

/// `coeff * phi_index^(block)`, with `block` counted from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralTerm {
    pub block: usize,
    #[serde(default)]
    pub index: usize,
    #[serde(default = "unit")]
    pub coeff: [f64; 2],
}

fn unit() -> [f64; 2] {
    [1.0, 0.0]
}

/// Which real function to take from a complex combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    #[default]
    Re,
    Im,
}

/// Which normalized variance limit `moments` should report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LimitRequest {
    /// Whatever the function's regime admits.
    #[default]
    Auto,
    Sigma,
    Rho,
    None,
}

/// One verification in the `verify` suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckSpec {
    Lln {
        f: String,
        t_grid: Vec<f64>,
        #[serde(default)]
        replicates: Option<usize>,
    },
    CltSmall {
        f: String,
        t: f64,
        #[serde(default)]
        replicates: Option<usize>,
    },
    CltCritical {
        h: String,
        t: f64,
        #[serde(default)]
        replicates: Option<usize>,
    },
    CltLarge {
        g: String,
        t: f64,
        #[serde(default)]
        t_est: Option<f64>,
        #[serde(default)]
        replicates: Option<usize>,
    },
    Joint {
        g: String,
        h: String,
        f: String,
        t: f64,
        #[serde(default)]
        t_est: Option<f64>,
        #[serde(default)]
        replicates: Option<usize>,
    },
    Pair {
        regime: PairRegime,
        a: String,
        b: String,
        t: f64,
        #[serde(default)]
        t_est: Option<f64>,
        #[serde(default)]
        replicates: Option<usize>,
    },
    MartingaleMeans {
        t: f64,
        #[serde(default)]
        replicates: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSource,
    #[serde(default)]
    pub functions: BTreeMap<String, FunctionSpec>,
    /// Function used by `moments`; defaults to `f`.
    #[serde(default)]
    pub function: Option<String>,
    /// Times for `moments` and checkpoints for `simulate`.
    #[serde(default)]
    pub t: Vec<f64>,
    /// Initial occupancy; defaults to one particle in the first state.
    #[serde(default)]
    pub nu: Option<Vec<u64>>,
    #[serde(default)]
    pub replicates: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub limit: LimitRequest,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub population_cap: Option<u64>,
    #[serde(default)]
    pub checks: Vec<CheckSpec>,
}

pub const DEFAULT_SEED: u64 = 20_240_601;

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<(Self, PathBuf), CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok((cfg, base))
    }

    fn validate(&self) -> Result<(), CliError> {
        if let Some(t) = self.t.iter().find(|t| !(**t >= 0.0) || !t.is_finite()) {
            return Err(CliError::Config(format!("time {t} must be finite and >= 0")));
        }
        for check in &self.checks {
            for name in check.function_names() {
                if !self.functions.contains_key(name) {
                    return Err(CliError::Config(format!("check refers to unknown function `{name}`")));
                }
            }
        }
        if let Some(name) = &self.function {
            if !self.functions.contains_key(name) {
                return Err(CliError::Config(format!("unknown function `{name}`")));
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn nu(&self, n: usize) -> Result<Vec<u64>, CliError> {
        match &self.nu {
            Some(v) if v.len() != n => Err(CliError::Config(format!(
                "nu has {} entries but the model has {n} states",
                v.len()
            ))),
            Some(v) if v.iter().all(|c| *c == 0) => Err(CliError::Config("nu has no particles".into())),
            Some(v) => Ok(v.clone()),
            None => {
                let mut v = vec![0; n];
                v[0] = 1;
                Ok(v)
            }
        }
    }

    pub fn model(&self, base: &Path) -> Result<FiniteModel, CliError> {
        let model = match &self.model {
            ModelSource::Inline(c) => build_model(c),
            ModelSource::Design(d) => from_jordan_design(d),
            ModelSource::Catalog(name) => return catalog_model(name),
            ModelSource::Path(p) => {
                let path = base.join(p);
                let text = fs::read_to_string(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                let value: Value = serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                return model_from_value(value).map_err(|e| match e {
                    CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
                    other => other,
                });
            }
        };
        model.map_err(CliError::from)
    }

    pub fn resolve(&self, name: &str, decomp: &SpectralDecomposition) -> Result<FunctionOnE, CliError> {
        let spec = self
            .functions
            .get(name)
            .ok_or_else(|| CliError::Config(format!("unknown function `{name}`")))?;
        resolve_function(spec, decomp).map_err(|e| CliError::Config(format!("function `{name}`: {e}")))
    }
}

impl CheckSpec {
    pub fn function_names(&self) -> Vec<&str> {
        match self {
            CheckSpec::Lln { f, .. } | CheckSpec::CltSmall { f, .. } => vec![f],
            CheckSpec::CltCritical { h, .. } => vec![h],
            CheckSpec::CltLarge { g, .. } => vec![g],
            CheckSpec::Joint { g, h, f, .. } => vec![g, h, f],
            CheckSpec::Pair { a, b, .. } => vec![a, b],
            CheckSpec::MartingaleMeans { .. } => vec![],
        }
    }
}

fn model_from_value(value: Value) -> Result<FiniteModel, CliError> {
    let parse_err = |e: serde_json::Error| CliError::Config(e.to_string());
    if let Some(d) = value.get("design") {
        let d: JordanDesign = serde_json::from_value(d.clone()).map_err(parse_err)?;
        return from_jordan_design(&d).map_err(CliError::from);
    }
    if value.get("P").is_some() {
        let d: JordanDesign = serde_json::from_value(value).map_err(parse_err)?;
        return from_jordan_design(&d).map_err(CliError::from);
    }
    let c: ModelConfig = serde_json::from_value(value).map_err(parse_err)?;
    build_model(&c).map_err(CliError::from)
}

pub fn catalog_model(name: &str) -> Result<FiniteModel, CliError> {
    let design = match name {
        "yule" => return catalog::yule_model(1.0).map_err(CliError::from),
        "critical_pair" => catalog::critical_pair(),
        "small_pair" => catalog::small_pair(),
        "large_pair" => catalog::large_pair(),
        "rotating_large" => catalog::rotating_triple(Regime::Large),
        "rotating_critical" => catalog::rotating_triple(Regime::Critical),
        "rotating_small" => catalog::rotating_triple(Regime::Small),
        "four_regime" => catalog::four_regime(),
        "critical_chain" => catalog::critical_chain(),
        "critical_plane" => catalog::critical_plane(),
        other => return Err(CliError::Config(format!("unknown catalog model `{other}`"))),
    };
    catalog::build(&design).map_err(CliError::from)
}

fn resolve_function(spec: &FunctionSpec, decomp: &SpectralDecomposition) -> Result<FunctionOnE, String> {
    let n = decomp.n();
    match spec {
        FunctionSpec::Values(v) => {
            if v.len() != n {
                return Err(format!("{} values given for {n} states", v.len()));
            }
            Ok(FunctionOnE::real(v))
        }
        FunctionSpec::Spectral { spectral, part } => {
            let mut acc = vec![C64::new(0.0, 0.0); n];
            for term in spectral {
                let b = term
                    .block
                    .checked_sub(1)
                    .and_then(|k| decomp.blocks.get(k))
                    .ok_or_else(|| format!("block {} does not exist", term.block))?;
                if term.index >= b.n_k() {
                    return Err(format!("block {} has only {} functions", term.block, b.n_k()));
                }
                let c = C64::new(term.coeff[0], term.coeff[1]);
                for (x, a) in acc.iter_mut().enumerate() {
                    *a += c * b.phi[(x, term.index)];
                }
            }
            let values: Vec<f64> = acc
                .iter()
                .map(|z| match part {
                    Part::Re => z.re,
                    Part::Im => z.im,
                })
                .collect();
            Ok(FunctionOnE::real(&values))
        }
    }
}
