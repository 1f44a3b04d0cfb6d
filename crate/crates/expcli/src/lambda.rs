//! Worst-group accuracy of the minimum-norm separator against the minority
//! margin λ, next to the closed-form feasibility interval.

use rayon::prelude::*;
use serde::Deserialize;
use tempering::datagen::SpuriousParams;
use tempering::spurious::{lambda_feasible_interval, lambda_sweep_row, LambdaSweepRow, ScalarSample};

use crate::config::{nonempty, positive, ExperimentConfig, RunSection};
use crate::error::{config_err, CliResult};
use crate::output::{strings, CsvRecord};

pub const CLAIM: &str = "optimal lambda decreases as the core feature becomes more informative";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalarSection {
    pub mu_c: f64,
    pub mu_s: f64,
    pub sigma_c: f64,
    pub sigma_n: f64,
    pub noise_dim: usize,
    pub n_majority: usize,
    pub n_minority: usize,
}

impl Default for ScalarSection {
    fn default() -> Self {
        let p = SpuriousParams::default();
        Self {
            mu_c: p.mu_c,
            mu_s: p.mu_s,
            sigma_c: p.sigma_c,
            sigma_n: p.sigma_n,
            noise_dim: p.noise_dim,
            n_majority: p.n_maj,
            n_minority: p.n_min,
        }
    }
}

impl ScalarSection {
    pub fn params(&self) -> SpuriousParams {
        SpuriousParams {
            mu_c: self.mu_c,
            mu_s: self.mu_s,
            sigma_c: self.sigma_c,
            sigma_n: self.sigma_n,
            noise_dim: self.noise_dim,
            n_maj: self.n_majority,
            n_min: self.n_minority,
            ..SpuriousParams::default()
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LambdaGrid {
    pub lambdas: Vec<f64>,
    /// Settings of `σ_c` (others at their base values).
    pub sigma_c: Vec<f64>,
    /// Settings of `μ_c` (others at their base values).
    pub mu_c: Vec<f64>,
}

impl Default for LambdaGrid {
    fn default() -> Self {
        Self {
            lambdas: vec![1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0],
            sigma_c: vec![0.5, 1.0, 2.0],
            mu_c: vec![0.5, 1.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LambdaConfig {
    pub run: RunSection,
    pub spurious: ScalarSection,
    pub sweep: LambdaGrid,
}

impl ExperimentConfig for LambdaConfig {
    const NAME: &'static str = "lambda-sweep";
    const DEFAULT_REPLICATES: usize = 1;

    fn run_section(&self) -> &RunSection {
        &self.run
    }

    fn run_section_mut(&mut self) -> &mut RunSection {
        &mut self.run
    }

    fn validate(&self) -> CliResult<()> {
        self.spurious.params().validate()?;
        nonempty("sweep.lambdas", &self.sweep.lambdas)?;
        if self.sweep.sigma_c.is_empty() && self.sweep.mu_c.is_empty() {
            return config_err("sweep.sigma_c and sweep.mu_c cannot both be empty");
        }
        for &l in &self.sweep.lambdas {
            positive("sweep.lambdas entry", l)?;
        }
        for &m in &self.sweep.mu_c {
            positive("sweep.mu_c entry", m)?;
        }
        if self.sweep.sigma_c.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return config_err("sweep.sigma_c entries must be finite and >= 0");
        }
        Ok(())
    }
}

/// Which parameter a setting varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Panel {
    SigmaC,
    MuC,
}

impl Panel {
    pub fn name(self) -> &'static str {
        match self {
            Panel::SigmaC => "sigma_c",
            Panel::MuC => "mu_c",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaRow {
    pub seed: u64,
    pub panel: Panel,
    pub sigma_c: f64,
    pub mu_c: f64,
    pub mu_s: f64,
    pub interval: Option<(f64, f64)>,
    pub row: LambdaSweepRow,
}

impl CsvRecord for LambdaRow {
    fn header() -> Vec<String> {
        let mut h = strings(&["experiment", "seed", "panel", "sigma_c", "mu_c", "mu_s"]);
        h.extend(LambdaSweepRow::csv_header().into_iter().map(String::from));
        h.extend(strings(&["interval_lo", "interval_hi", "claim"]));
        h
    }

    fn fields(&self) -> Vec<String> {
        let mut f = vec![
            LambdaConfig::NAME.to_string(),
            self.seed.to_string(),
            self.panel.name().to_string(),
            self.sigma_c.to_string(),
            self.mu_c.to_string(),
            self.mu_s.to_string(),
        ];
        f.extend(self.row.csv_fields());
        let (lo, hi) = match self.interval {
            Some((lo, hi)) => (lo.to_string(), hi.to_string()),
            None => (String::new(), String::new()),
        };
        f.extend([lo, hi, CLAIM.to_string()]);
        f
    }
}

/// The configured settings, `σ_c` panel first.
pub fn settings(cfg: &LambdaConfig) -> Vec<(Panel, SpuriousParams)> {
    let base = cfg.spurious.params();
    let mut out = Vec::new();
    for &s in &cfg.sweep.sigma_c {
        out.push((Panel::SigmaC, SpuriousParams { sigma_c: s, ..base.clone() }));
    }
    for &m in &cfg.sweep.mu_c {
        out.push((Panel::MuC, SpuriousParams { mu_c: m, ..base.clone() }));
    }
    out
}

/// All λ values for one setting and seed, on one shared training sample.
pub fn run_setting(cfg: &LambdaConfig, panel: Panel, params: &SpuriousParams, seed: u64) -> CliResult<Vec<LambdaRow>> {
    let sample = ScalarSample::draw(params, seed)?;
    let interval = lambda_feasible_interval(params)?;
    cfg.sweep
        .lambdas
        .iter()
        .map(|&l| {
            log::info!("lambda-sweep {}={} lambda={l} seed={seed}", panel.name(), match panel {
                Panel::SigmaC => params.sigma_c,
                Panel::MuC => params.mu_c,
            });
            Ok(LambdaRow {
                seed,
                panel,
                sigma_c: params.sigma_c,
                mu_c: params.mu_c,
                mu_s: params.mu_s,
                interval,
                row: lambda_sweep_row(&sample, l)?,
            })
        })
        .collect()
}

/// Rows ordered by setting, then seed, then λ.
pub fn run_lambda_sweep(cfg: &LambdaConfig) -> CliResult<Vec<LambdaRow>> {
    let mut jobs = Vec::new();
    for (panel, params) in settings(cfg) {
        for s in cfg.seeds() {
            jobs.push((panel, params.clone(), s));
        }
    }
    let blocks: Vec<Vec<LambdaRow>> = jobs
        .into_par_iter()
        .map(|(panel, params, s)| run_setting(cfg, panel, &params, s))
        .collect::<CliResult<_>>()?;
    Ok(blocks.into_iter().flatten().collect())
}
