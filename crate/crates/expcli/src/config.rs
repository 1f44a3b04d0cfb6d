//! Config files are TOML restricted to `key = value` lines under
//! `[section]` headers. Every section rejects unknown keys.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Deserialize;
use tempering::layer_peeled::{sqrt_temperatures, FeatureMode};
use tempering::losses::{gamma_rule, sqrt_rule, LpmVariant, TemperatureMap};

use crate::error::{config_err, CliError, CliResult};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Optional guard: when set it must name the subcommand being run.
    pub experiment: Option<String>,
    /// Base seed; replicate `r` uses `seed + r`.
    pub seed: u64,
    pub replicates: Option<usize>,
}

pub trait ExperimentConfig: DeserializeOwned + Default {
    const NAME: &'static str;
    const DEFAULT_REPLICATES: usize;

    fn run_section(&self) -> &RunSection;
    fn run_section_mut(&mut self) -> &mut RunSection;
    fn validate(&self) -> CliResult<()>;

    fn seeds(&self) -> Vec<u64> {
        let run = self.run_section();
        let n = run.replicates.unwrap_or(Self::DEFAULT_REPLICATES) as u64;
        (0..n).map(|r| run.seed + r).collect()
    }
}

fn check_common<C: ExperimentConfig>(cfg: &C) -> CliResult<()> {
    let run = cfg.run_section();
    if let Some(name) = &run.experiment {
        if name != C::NAME {
            return config_err(format!("config is for {name:?}, not {:?}", C::NAME));
        }
    }
    if run.replicates == Some(0) {
        return config_err("replicates must be >= 1");
    }
    cfg.validate()
}

pub fn parse_config<C: ExperimentConfig>(text: &str) -> CliResult<C> {
    let cfg: C = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    check_common(&cfg)?;
    Ok(cfg)
}

/// Reads `path` (or takes the defaults when absent) and applies a seed
/// override.
pub fn load_config<C: ExperimentConfig>(path: Option<&Path>, seed: Option<u64>) -> CliResult<C> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            parse_config::<C>(&text)?
        }
        None => C::default(),
    };
    if let Some(s) = seed {
        cfg.run_section_mut().seed = s;
    }
    check_common(&cfg)?;
    Ok(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemperatureRule {
    /// `f[g] = (n_g / max n)^γ`; for class temperatures `λ_k = n_k^γ`.
    Gamma,
    /// The `γ = 1/2` rule.
    SqrtN,
    Explicit,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperatureSection {
    pub rule: TemperatureRule,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
}

impl TemperatureSection {
    pub fn gamma(gamma: f64) -> Self {
        Self {
            rule: TemperatureRule::Gamma,
            gamma: Some(gamma),
            values: None,
        }
    }

    pub fn sqrt_n() -> Self {
        Self {
            rule: TemperatureRule::SqrtN,
            gamma: None,
            values: None,
        }
    }

    pub fn explicit(values: Vec<f64>) -> Self {
        Self {
            rule: TemperatureRule::Explicit,
            gamma: None,
            values: Some(values),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        match self.rule {
            TemperatureRule::Gamma => match self.gamma {
                Some(g) if (0.0..=1.0).contains(&g) => {}
                Some(g) => return config_err(format!("temperature.gamma = {g} outside [0, 1]")),
                None => return config_err("temperature.rule = \"gamma\" needs temperature.gamma"),
            },
            TemperatureRule::SqrtN => {}
            TemperatureRule::Explicit => match &self.values {
                Some(v) if !v.is_empty() && v.iter().all(|t| t.is_finite() && *t > 0.0) => {}
                Some(_) => return config_err("temperature.values must be nonempty and positive"),
                None => return config_err("temperature.rule = \"explicit\" needs temperature.values"),
            },
        }
        if self.rule != TemperatureRule::Gamma && self.gamma.is_some() {
            return config_err("temperature.gamma is only used with rule = \"gamma\"");
        }
        if self.rule != TemperatureRule::Explicit && self.values.is_some() {
            return config_err("temperature.values is only used with rule = \"explicit\"");
        }
        Ok(())
    }

    /// Per-group temperatures for the tempered exponential loss.
    pub fn group_temperatures(&self, counts: &[usize]) -> CliResult<TemperatureMap> {
        Ok(match self.rule {
            TemperatureRule::Gamma => gamma_rule(counts, self.gamma.unwrap_or(0.5))?,
            TemperatureRule::SqrtN => sqrt_rule(counts)?,
            TemperatureRule::Explicit => {
                let v = self.values.clone().unwrap_or_default();
                if v.len() != counts.len() {
                    return config_err(format!(
                        "temperature.values has {} entries, task has {} groups",
                        v.len(),
                        counts.len()
                    ));
                }
                TemperatureMap::new(v)?
            }
        })
    }

    /// Per-class temperatures `λ_k` for the layer-peeled model.
    pub fn class_temperatures(&self, counts: &[usize]) -> CliResult<Vec<f64>> {
        Ok(match self.rule {
            TemperatureRule::Gamma => {
                let g = self.gamma.unwrap_or(0.5);
                counts.iter().map(|&c| (c as f64).powf(g)).collect()
            }
            TemperatureRule::SqrtN => sqrt_temperatures(counts),
            TemperatureRule::Explicit => {
                let v = self.values.clone().unwrap_or_default();
                if v.len() != counts.len() {
                    return config_err(format!(
                        "temperature.values has {} entries, model has {} classes",
                        v.len(),
                        counts.len()
                    ));
                }
                v
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Full,
    Collapsed,
}

impl From<ModeName> for FeatureMode {
    fn from(m: ModeName) -> Self {
        match m {
            ModeName::Full => FeatureMode::Full,
            ModeName::Collapsed => FeatureMode::Collapsed,
        }
    }
}

pub(crate) fn parse_variant(s: &str) -> CliResult<LpmVariant> {
    LpmVariant::parse(s).map_err(|_| CliError::Config(format!("unknown variant {s:?}; use vanilla, it_h or it_w")))
}

pub(crate) fn nonempty<T>(name: &str, v: &[T]) -> CliResult<()> {
    if v.is_empty() {
        return config_err(format!("{name} must be nonempty"));
    }
    Ok(())
}

pub(crate) fn positive(name: &str, v: f64) -> CliResult<()> {
    if !(v.is_finite() && v > 0.0) {
        return config_err(format!("{name} = {v} must be finite and > 0"));
    }
    Ok(())
}

pub(crate) fn at_least(name: &str, v: usize, min: usize) -> CliResult<()> {
    if v < min {
        return config_err(format!("{name} = {v} must be >= {min}"));
    }
    Ok(())
}
