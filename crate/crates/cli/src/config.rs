//! Recipe descriptions shared by the command line and config files.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Registered recipe names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecipeName {
    FlowField,
    Trajectories,
    Cdf,
    Scaling,
    Basin,
    Coupling,
    Badness,
    DeepLinear,
}

impl RecipeName {
    pub const ALL: [RecipeName; 8] = [
        RecipeName::FlowField,
        RecipeName::Trajectories,
        RecipeName::Cdf,
        RecipeName::Scaling,
        RecipeName::Basin,
        RecipeName::Coupling,
        RecipeName::Badness,
        RecipeName::DeepLinear,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RecipeName::FlowField => "flow-field",
            RecipeName::Trajectories => "trajectories",
            RecipeName::Cdf => "cdf",
            RecipeName::Scaling => "scaling",
            RecipeName::Basin => "basin",
            RecipeName::Coupling => "coupling",
            RecipeName::Badness => "badness",
            RecipeName::DeepLinear => "deep-linear",
        }
    }

    /// Parameter keys this recipe understands.
    pub fn keys(self) -> &'static [&'static str] {
        match self {
            RecipeName::FlowField => &["resolution"],
            RecipeName::Trajectories => &[
                "J0",
                "eta",
                "batch",
                "max_samples",
                "stop_J",
                "seed",
                "starts",
                "modes",
                "estimator",
                "window",
                "threshold",
                "stride",
                "quick",
            ],
            RecipeName::Cdf => &[
                "K",
                "n",
                "J0",
                "eta",
                "batch",
                "max_samples",
                "stop_J",
                "seed",
                "seeds",
                "modes",
                "optimizers",
                "estimator",
                "window",
                "threshold",
                "quick",
            ],
            RecipeName::Scaling => &[
                "Ks",
                "J0",
                "eta",
                "max_samples",
                "seed",
                "seeds",
                "estimator",
                "window",
                "threshold",
                "stride",
                "quick",
            ],
            RecipeName::Basin => &["J0s", "seed", "starts", "max_steps", "quick"],
            RecipeName::Coupling => &["modes", "n", "resolution"],
            RecipeName::Badness => &["J0", "seed", "starts", "stop_J", "max_steps", "quick"],
            RecipeName::DeepLinear => &[
                "singular_values",
                "eta",
                "steps",
                "init_scale",
                "hidden",
                "seed",
                "stride",
            ],
        }
    }
}

impl fmt::Display for RecipeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RecipeName {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        RecipeName::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| {
                CliError::Config(format!(
                    "unknown recipe `{s}`; expected one of {}",
                    RecipeName::ALL.map(|r| r.as_str()).join(", ")
                ))
            })
    }
}

/// Optional overrides; anything left unset takes the recipe default.
///
/// The same keys are accepted as command-line flags and in config files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct RecipeParams {
    /// Number of contexts.
    #[serde(rename = "K", skip_serializing_if = "Option::is_none")]
    #[arg(long = "K")]
    pub k: Option<usize>,
    /// Number of actions (defaults to K).
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long = "n")]
    pub n: Option<usize>,
    /// Initial total performance.
    #[serde(rename = "J0", skip_serializing_if = "Option::is_none")]
    #[arg(long = "J0")]
    pub j0: Option<f64>,
    /// Step sizes.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long = "eta", value_delimiter = ',')]
    pub eta: Option<Vec<f64>>,
    /// Samples per update.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long = "batch")]
    pub batch: Option<usize>,
    /// Sample budget per run.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long = "max-samples")]
    pub max_samples: Option<u64>,
    /// Stop once total performance reaches this.
    #[serde(rename = "stop_J", skip_serializing_if = "Option::is_none")]
    #[arg(long = "stop-J")]
    pub stop_j: Option<f64>,
    /// Master seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long = "seed")]
    pub seed: Option<u64>,
    /// Runs per setting.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long = "seeds")]
    pub seeds: Option<usize>,
    /// Starting points per setting.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long = "starts")]
    pub starts: Option<usize>,
    /// Training modes, e.g. onpolicy,tabular,separate,offpolicy_mix:0.1,supervised.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long = "modes", value_delimiter = ',')]
    pub modes: Option<Vec<String>>,
    /// Optimizers: sgd, adam.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long = "optimizers", value_delimiter = ',')]
    pub optimizers: Option<Vec<String>>,
    /// Progress estimator: expected or windowed.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long = "estimator")]
    pub estimator: Option<String>,
    /// Window of the windowed progress estimator.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long = "window")]
    pub window: Option<usize>,
    /// Progress below which a run counts as on a plateau.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long = "threshold")]
    pub threshold: Option<f64>,
    /// Grid points per axis.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long = "resolution")]
    pub resolution: Option<usize>,
    /// Problem sizes (K = n).
    #[serde(rename = "Ks", skip_serializing_if = "Option::is_none")]
    #[arg(long = "Ks", value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    /// Initial total performances.
    #[serde(rename = "J0s", skip_serializing_if = "Option::is_none")]
    #[arg(long = "J0s", value_delimiter = ',')]
    pub j0s: Option<Vec<f64>>,
    /// Keep every stride-th record.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long = "stride")]
    pub stride: Option<usize>,
    /// Step budget for deterministic flows.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long = "max-steps")]
    pub max_steps: Option<usize>,
    /// Singular values of the target map.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long = "singular-values", value_delimiter = ',')]
    pub singular_values: Option<Vec<f64>>,
    /// Euler steps.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long = "steps")]
    pub steps: Option<usize>,
    /// Standard deviation of the initial weights.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long = "init-scale")]
    pub init_scale: Option<f64>,
    /// Hidden width.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long = "hidden")]
    pub hidden: Option<usize>,
    /// Scale run counts down 10x.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long = "quick", num_args = 0..=1, default_missing_value = "true")]
    pub quick: Option<bool>,
}

impl RecipeParams {
    /// Names of the keys that are set.
    pub fn set_keys(&self) -> Vec<String> {
        match serde_json::to_value(self) {
            Ok(serde_json::Value::Object(map)) => map.keys().cloned().collect(),
            _ => Vec::new(),
        }
    }

    /// Positivity and range checks that do not depend on the recipe.
    pub fn validate(&self) -> Result<(), CliError> {
        let positive = |key: &str, v: Option<f64>| match v {
            Some(x) if !(x > 0.0 && x.is_finite()) => Err(CliError::Config(format!(
                "`{key}` must be positive, got {x}"
            ))),
            _ => Ok(()),
        };
        let at_least_one = |key: &str, v: Option<usize>| match v {
            Some(0) => Err(CliError::Config(format!("`{key}` must be at least 1"))),
            _ => Ok(()),
        };
        for &eta in self.eta.iter().flatten() {
            positive("eta", Some(eta))?;
        }
        if self.eta.as_ref().is_some_and(|e| e.is_empty()) {
            return Err(CliError::Config("`eta` needs at least one value".into()));
        }
        positive("J0", self.j0)?;
        positive("stop_J", self.stop_j)?;
        positive("threshold", self.threshold)?;
        positive("init_scale", self.init_scale)?;
        for &j in self.j0s.iter().flatten() {
            positive("J0s", Some(j))?;
        }
        for &s in self.singular_values.iter().flatten() {
            positive("singular_values", Some(s))?;
        }
        at_least_one("K", self.k)?;
        at_least_one("n", self.n)?;
        at_least_one("batch", self.batch)?;
        at_least_one("seeds", self.seeds)?;
        at_least_one("starts", self.starts)?;
        at_least_one("window", self.window)?;
        if self.resolution.is_some_and(|r| r < 2) {
            return Err(CliError::Config("`resolution` must be at least 2".into()));
        }
        at_least_one("stride", self.stride)?;
        at_least_one("max_steps", self.max_steps)?;
        at_least_one("hidden", self.hidden)?;
        for &k in self.ks.iter().flatten() {
            at_least_one("Ks", Some(k))?;
        }
        if self.max_samples == Some(0) {
            return Err(CliError::Config("`max_samples` must be at least 1".into()));
        }
        if let Some(e) = &self.estimator {
            if e != "expected" && e != "windowed" {
                return Err(CliError::Config(format!(
                    "`estimator` must be `expected` or `windowed`, got `{e}`"
                )));
            }
        }
        Ok(())
    }
}

/// A named recipe with its overrides and output location.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRecipe {
    pub name: RecipeName,
    pub params: RecipeParams,
    pub output_dir: PathBuf,
}

impl ExperimentRecipe {
    /// Checks every set key against the recipe's schema.
    pub fn new(
        name: RecipeName,
        params: RecipeParams,
        output_dir: PathBuf,
    ) -> Result<Self, CliError> {
        let allowed = name.keys();
        if let Some(key) = params
            .set_keys()
            .into_iter()
            .find(|k| !allowed.contains(&k.as_str()))
        {
            return Err(CliError::Config(format!(
                "key `{key}` does not apply to recipe `{name}`"
            )));
        }
        params.validate()?;
        Ok(Self {
            name,
            params,
            output_dir,
        })
    }
}

/// Reads a TOML config with a single `[recipe]` table.
///
/// ```toml
/// [recipe]
/// name = "cdf"
/// K = 2
/// eta = 0.1
/// ```
pub fn load_config(path: &Path) -> Result<ExperimentRecipe, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text, path)
}

pub(crate) fn parse_config(text: &str, path: &Path) -> Result<ExperimentRecipe, CliError> {
    let bad = |msg: String| CliError::Config(format!("{}: {msg}", path.display()));
    let mut doc: toml::Table = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
    if let Some(key) = doc.keys().find(|k| *k != "recipe") {
        return Err(bad(format!(
            "unknown section `{key}`; only [recipe] is allowed"
        )));
    }
    let Some(toml::Value::Table(mut recipe)) = doc.remove("recipe") else {
        return Err(bad("missing [recipe] section".into()));
    };
    let name = match recipe.remove("name") {
        Some(toml::Value::String(s)) => s.parse::<RecipeName>()?,
        Some(_) => return Err(bad("`name` must be a string".into())),
        None => return Err(bad("missing key `name`".into())),
    };
    let output_dir = match recipe.remove("output_dir") {
        Some(toml::Value::String(s)) => PathBuf::from(s),
        Some(_) => return Err(bad("`output_dir` must be a string".into())),
        None => default_output_dir(name),
    };
    // Scalars are accepted wherever a list is expected.
    for key in ["eta", "modes", "optimizers", "Ks", "J0s", "singular_values"] {
        if let Some(v) = recipe.get_mut(key) {
            if !v.is_array() {
                *v = toml::Value::Array(vec![v.clone()]);
            }
        }
    }
    // Check keys one at a time so type errors name the offending key.
    for (key, value) in &recipe {
        let single = toml::Table::from_iter([(key.clone(), value.clone())]);
        if let Err(e) = single.try_into::<RecipeParams>() {
            return Err(bad(format!("key `{key}`: {}", e.message())));
        }
    }
    let params: RecipeParams = recipe
        .try_into()
        .map_err(|e: toml::de::Error| bad(e.message().to_string()))?;
    ExperimentRecipe::new(name, params, output_dir)
}

pub fn default_output_dir(name: RecipeName) -> PathBuf {
    PathBuf::from("out").join(name.as_str())
}
