//! Optional JSON config files for flag-driven subcommands. Explicit flags
//! take precedence over file values, which take precedence over defaults;
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::commands::Failure;
use crate::{EstimateMode, RegimeArg};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsFile {
    pub ell: Option<u32>,
    pub n: Option<u64>,
    pub cl: Option<f64>,
    pub regime: Option<RegimeArg>,
    pub c: Option<f64>,
    pub p_max: Option<usize>,
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateFile {
    pub mode: Option<EstimateMode>,
    pub v: Option<f64>,
    pub ell: Option<u32>,
    pub n: Option<u64>,
    pub c: Option<f64>,
    pub coeffs: Option<Vec<f64>>,
    pub v_t: Option<f64>,
    pub v_s: Option<f64>,
    pub t: Option<f64>,
    pub s: Option<f64>,
}

pub fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .map_err(|e| Failure::Runtime(format!("cannot read {}: {e}", path.display())))
}

pub fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T, Failure> {
    serde_json::from_str(text)
        .map_err(|e| Failure::Usage(format!("invalid config {}: {e}", path.display())))
}

/// Loads a config file if one was given, else the all-`None` default.
pub fn load_optional<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    match path {
        None => Ok(T::default()),
        Some(p) => parse_json(p, &read_text(p)?),
    }
}
