//! Run configuration files. A file is overlaid on the built-in defaults key by
//! key, so it only needs the settings it changes.

use std::path::{Path, PathBuf};

use provprof::dataset::ColumnSchema;
use provprof::nuisance::NuisanceConfig;
use provprof::simulation::{SimConfig, Study};
use provprof::targeting::{EstimationConfig, Parameter};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub parameters: Vec<Parameter>,
    pub folds: usize,
    pub seed: u64,
    /// Providers with fewer observations are dropped before estimation.
    pub min_volume: usize,
    pub level: f64,
    /// Margin used when mapping continuous outcomes into the unit interval.
    pub delta: f64,
    /// Report the direct parameter even for providers with flagged positivity.
    pub force_direct: bool,
    pub columns: ColumnSchema,
    pub nuisance: NuisanceConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let est = EstimationConfig::default();
        Self {
            input: None,
            out_dir: PathBuf::from("."),
            parameters: vec![
                Parameter::Psi1,
                Parameter::Psi2,
                Parameter::Er,
                Parameter::Smr,
            ],
            folds: 5,
            seed: 1,
            min_volume: 1,
            level: est.level,
            delta: est.delta,
            force_direct: false,
            columns: ColumnSchema::default(),
            nuisance: est.nuisance,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        if self.input.is_none() {
            return bad("no input file given (use --input or `input` in the config file)".into());
        }
        if self.parameters.is_empty() {
            return bad("at least one parameter must be requested".into());
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!(
                "confidence level must lie in (0, 1), got {}",
                self.level
            ));
        }
        if self.folds < 1 {
            return bad("folds must be at least 1".into());
        }
        if self.min_volume < 1 {
            return bad("min_volume must be at least 1".into());
        }
        Ok(())
    }
}

/// Merge `overlay` into `base`, recursing into tables and replacing anything else.
fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

fn read_table(path: &Path) -> Result<toml::Table, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    text.parse::<toml::Table>()
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn overlay<T: Serialize + DeserializeOwned>(
    base: &T,
    file: toml::Table,
    path: &Path,
) -> Result<T, CliError> {
    let mut table = toml::Table::try_from(base).map_err(|e| CliError::Validation(e.to_string()))?;
    merge(&mut table, file);
    table
        .try_into()
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn load_run(path: Option<&Path>) -> Result<RunConfig, CliError> {
    let base = RunConfig::default();
    match path {
        None => Ok(base),
        Some(p) => overlay(&base, read_table(p)?, p),
    }
}

/// The file's `study` key (or `study` when given) selects the preset the
/// file is overlaid on.
pub fn load_sim(path: Option<&Path>, study: Option<Study>) -> Result<SimConfig, CliError> {
    let preset = |s: Study| match s {
        Study::Sim1 => SimConfig::sim1(),
        Study::Sim2 => SimConfig::sim2(),
    };
    let Some(p) = path else {
        return Ok(preset(study.unwrap_or(Study::Sim1)));
    };
    let mut file = read_table(p)?;
    let from_file = match file.get("study") {
        Some(v) => Some(
            v.clone()
                .try_into::<Study>()
                .map_err(|e| CliError::Validation(format!("{}: study: {e}", p.display())))?,
        ),
        None => None,
    };
    let chosen = study.or(from_file).unwrap_or(Study::Sim1);
    file.remove("study");
    overlay(&preset(chosen), file, p)
}

pub fn to_toml<T: Serialize>(cfg: &T) -> Result<String, CliError> {
    toml::to_string(cfg).map_err(|e| CliError::Validation(format!("cannot serialize config: {e}")))
}
