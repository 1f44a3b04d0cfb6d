//! Single layer-peeled run with its geometry trace.

use serde::Deserialize;
use tempering::layer_peeled::{optimize_lpm, GeometryReport, LpmConfig, LpmRun};
use tempering::losses::LpmVariant;

use crate::config::{at_least, parse_variant, positive, ExperimentConfig, ModeName, RunSection, TemperatureSection};
use crate::error::{config_err, CliResult};
use crate::output::{strings, CsvRecord};

pub const CLAIM: &str = "tempered layer-peeled geometry under step imbalance";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LpmSection {
    /// Number of classes; the first half are the majority classes.
    pub k: usize,
    /// Feature dimension; 0 means `k`.
    pub d: usize,
    pub n_majority: usize,
    pub n_minority: usize,
    pub variant: String,
    pub mode: ModeName,
    pub steps: usize,
    pub eta: f64,
    pub log_every: usize,
    pub init_scale: f64,
}

impl Default for LpmSection {
    fn default() -> Self {
        Self {
            k: 4,
            d: 0,
            n_majority: 10,
            n_minority: 1,
            variant: "it_h".into(),
            mode: ModeName::Full,
            steps: 100_000,
            eta: 20.0,
            log_every: 1000,
            init_scale: 1.0,
        }
    }
}

impl LpmSection {
    pub(crate) fn validate_common(&self) -> CliResult<()> {
        if self.k < 2 || self.k % 2 != 0 {
            return config_err(format!("lpm.k = {} must be even and >= 2", self.k));
        }
        if self.d != 0 && self.d < self.k {
            return config_err("lpm.d must be 0 or >= lpm.k");
        }
        at_least("lpm.n_minority", self.n_minority, 1)?;
        at_least("lpm.steps", self.steps, 1)?;
        at_least("lpm.log_every", self.log_every, 1)?;
        positive("lpm.eta", self.eta)?;
        positive("lpm.init_scale", self.init_scale)
    }

    pub fn counts(&self, n_majority: usize) -> Vec<usize> {
        let half = self.k / 2;
        std::iter::repeat_n(n_majority, half)
            .chain(std::iter::repeat_n(self.n_minority, half))
            .collect()
    }

    /// Optimizer settings for the given counts and variant.
    pub fn lpm_config(
        &self,
        counts: Vec<usize>,
        variant: LpmVariant,
        temps: &TemperatureSection,
        seed: u64,
    ) -> CliResult<LpmConfig> {
        let lambda = match variant {
            LpmVariant::Vanilla => Vec::new(),
            LpmVariant::ItH | LpmVariant::ItW => temps.class_temperatures(&counts)?,
        };
        let mut cfg = LpmConfig::new(counts, variant, lambda);
        if self.d != 0 {
            cfg.d = self.d;
        }
        cfg.mode = self.mode.into();
        cfg.steps = self.steps;
        cfg.eta = self.eta;
        cfg.log_every = self.log_every;
        cfg.init_scale = self.init_scale;
        cfg.seed = seed;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LpmExperiment {
    pub run: RunSection,
    pub lpm: LpmSection,
    pub temperature: TemperatureSection,
}

impl Default for LpmExperiment {
    fn default() -> Self {
        Self {
            run: RunSection::default(),
            lpm: LpmSection::default(),
            temperature: TemperatureSection::sqrt_n(),
        }
    }
}

impl ExperimentConfig for LpmExperiment {
    const NAME: &'static str = "lpm";
    const DEFAULT_REPLICATES: usize = 1;

    fn run_section(&self) -> &RunSection {
        &self.run
    }

    fn run_section_mut(&mut self) -> &mut RunSection {
        &mut self.run
    }

    fn validate(&self) -> CliResult<()> {
        self.lpm.validate_common()?;
        parse_variant(&self.lpm.variant)?;
        if self.lpm.n_majority < self.lpm.n_minority {
            return config_err("lpm.n_majority must be >= lpm.n_minority");
        }
        self.temperature.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub seed: u64,
    pub variant: LpmVariant,
    pub ratio: f64,
    pub step: usize,
    pub log_loss: f64,
    pub report: GeometryReport,
}

impl CsvRecord for TraceRow {
    fn header() -> Vec<String> {
        let mut h = strings(&["experiment", "seed", "variant", "ratio", "step", "log_loss"]);
        h.extend(GeometryReport::csv_header().into_iter().map(String::from));
        h.push("claim".into());
        h
    }

    fn fields(&self) -> Vec<String> {
        let mut f = vec![
            LpmExperiment::NAME.to_string(),
            self.seed.to_string(),
            self.variant.name().to_string(),
            self.ratio.to_string(),
            self.step.to_string(),
            self.log_loss.to_string(),
        ];
        f.extend(self.report.csv_fields());
        f.push(CLAIM.to_string());
        f
    }
}

fn trace_rows(run: &LpmRun, seed: u64, variant: LpmVariant, ratio: f64) -> Vec<TraceRow> {
    run.trace
        .iter()
        .zip(&run.log_losses)
        .map(|((step, report), (_, log_loss))| TraceRow {
            seed,
            variant,
            ratio,
            step: *step,
            log_loss: *log_loss,
            report: report.clone(),
        })
        .collect()
}

/// Logged geometry of one run per seed, seeds in order.
pub fn run_lpm(cfg: &LpmExperiment) -> CliResult<Vec<TraceRow>> {
    use rayon::prelude::*;
    let variant = parse_variant(&cfg.lpm.variant)?;
    let counts = cfg.lpm.counts(cfg.lpm.n_majority);
    let ratio = cfg.lpm.n_majority as f64 / cfg.lpm.n_minority as f64;
    let per_seed: Vec<Vec<TraceRow>> = cfg
        .seeds()
        .into_par_iter()
        .map(|seed| {
            let lc = cfg.lpm.lpm_config(counts.clone(), variant, &cfg.temperature, seed)?;
            let run = optimize_lpm(&lc)?;
            Ok(trace_rows(&run, seed, variant, ratio))
        })
        .collect::<CliResult<_>>()?;
    Ok(per_seed.into_iter().flatten().collect())
}
