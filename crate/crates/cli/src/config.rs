//! Run configuration files.
//!
//! A config is one JSON object. Only `solver` and `dims` are required:
//!
//! ```json
//! { "solver": "bcd2", "form": "two_split_fnn", "dims": [2, 4, 1] }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use amkl::io::{read_csv_dataset_file, to_json_line};
use amkl::solvers::default_init;
use amkl::synthetic::{generate_synthetic, SyntheticTask};
use amkl::{
    ActivationKind, DataSet, Error, Hyperparams, LossKind, NetworkSpec, ParamState, RandomSource,
    RegularizerKind, Result, SolverConfig, SolverKind, SolverOptions, SplitForm,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub solver: SolverKind,
    /// Must match the splitting form the solver runs on when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub form: Option<SplitForm>,
    pub dims: Vec<usize>,
    #[serde(default = "default_hidden")]
    pub hidden_activation: ActivationKind,
    #[serde(default = "default_output")]
    pub output_activation: ActivationKind,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default)]
    pub weight_reg: RegularizerKind,
    #[serde(default)]
    pub state_reg: RegularizerKind,
    #[serde(default)]
    pub hyper: Hyperparams,
    #[serde(default)]
    pub options: SolverOptions,
    #[serde(default)]
    pub data: DataSource,
    #[serde(default)]
    pub seed: u64,
    /// Standard deviation of the initial weights.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    /// Output directory; `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Teacher network with the student's activations and loss.
    Synthetic {
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default)]
        noise: f64,
        /// Defaults to the student's `dims`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        teacher_dims: Option<Vec<usize>>,
    },
    /// Relative paths are resolved against the config file's directory.
    Csv { path: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            n: default_n(),
            noise: 0.0,
            teacher_dims: None,
        }
    }
}

fn default_hidden() -> ActivationKind {
    ActivationKind::Tanh
}

fn default_output() -> ActivationKind {
    ActivationKind::Identity
}

fn default_loss() -> LossKind {
    LossKind::HalfSquared
}

fn default_init_scale() -> f64 {
    0.1
}

fn default_n() -> usize {
    32
}

fn config_error(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

fn prefixed(prefix: &str, err: Error) -> Error {
    match err {
        Error::Config { field, message } => config_error(format!("{prefix}.{field}"), message),
        other => other,
    }
}

/// Everything a solver run needs, built from a config.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub spec: NetworkSpec,
    pub data: DataSet,
    pub hyper: Hyperparams,
    pub solver: SolverConfig,
    pub init: ParamState,
    pub rng: RandomSource,
}

impl RunConfig {
    /// Parses and validates. Errors name the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if inner.is_syntax() || inner.is_eof() {
                Error::Parse {
                    line: inner.line(),
                    message: inner.to_string(),
                }
            } else {
                let field = if path == "." {
                    "config".to_string()
                } else {
                    path
                };
                config_error(field, inner.to_string())
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, resolving a relative CSV path against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::from_json(&text)?;
        if let DataSource::Csv { path: csv } = &mut cfg.data {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        Ok(cfg)
    }

    pub fn form(&self) -> SplitForm {
        self.solver.form()
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        Ok(NetworkSpec::new(
            self.dims.clone(),
            self.hidden_activation,
            self.output_activation,
            self.loss,
        )?
        .with_weight_reg(self.weight_reg)
        .with_state_reg(self.state_reg))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(form) = self.form {
            if form != self.solver.form() {
                return Err(config_error(
                    "form",
                    format!(
                        "solver {} runs on {}, not {}",
                        self.solver,
                        self.solver.form().name(),
                        form.name()
                    ),
                ));
            }
        }
        let spec = self.network_spec()?;
        spec.validate()?;
        self.hyper
            .validate(spec.depth())
            .map_err(|e| prefixed("hyper", e))?;
        self.options
            .validate()
            .map_err(|e| prefixed("options", e))?;
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(config_error("init_scale", "must be finite and > 0"));
        }
        match &self.data {
            DataSource::Synthetic {
                n,
                noise,
                teacher_dims,
            } => {
                if *n == 0 {
                    return Err(config_error("data.n", "must be positive"));
                }
                if !(*noise >= 0.0 && noise.is_finite()) {
                    return Err(config_error("data.noise", "must be finite and >= 0"));
                }
                if let Some(t) = teacher_dims {
                    let ends_match = t.len() >= 2
                        && t.first() == self.dims.first()
                        && t.last() == self.dims.last();
                    if !ends_match || t.contains(&0) {
                        return Err(config_error(
                            "data.teacher_dims",
                            "must be positive widths sharing the student's input and output widths",
                        ));
                    }
                }
            }
            DataSource::Csv { path } => {
                if path.as_os_str().is_empty() {
                    return Err(config_error("data.path", "must not be empty"));
                }
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, ignoring `out`.
    pub fn digest(&self) -> String {
        let canonical = RunConfig {
            out: None,
            ..self.clone()
        };
        let json = to_json_line(&canonical).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Generates or loads the data, then draws the initial weights. Both
    /// draws are determined by `seed`.
    pub fn prepare(&self) -> Result<Experiment> {
        let spec = self.network_spec()?;
        let mut rng = RandomSource::new(self.seed);
        let data = match &self.data {
            DataSource::Synthetic {
                n,
                noise,
                teacher_dims,
            } => {
                let teacher = match teacher_dims {
                    Some(dims) => NetworkSpec::new(
                        dims.clone(),
                        self.hidden_activation,
                        self.output_activation,
                        self.loss,
                    )
                    .map_err(|e| prefixed("data", e))?,
                    None => spec.clone(),
                };
                generate_synthetic(&SyntheticTask::new(teacher, *noise, *n)?, &mut rng)?
            }
            DataSource::Csv { path } => {
                read_csv_dataset_file(path, spec.dim(0), spec.dim(spec.depth()))?
            }
        };
        let init = default_init(self.form(), &spec, &data, &mut rng.clone(), self.init_scale)?;
        Ok(Experiment {
            spec,
            data,
            hyper: self.hyper.clone(),
            solver: SolverConfig {
                kind: self.solver,
                options: self.options.clone(),
            },
            init,
            rng,
        })
    }
}
