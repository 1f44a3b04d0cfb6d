//! Majority and minority pair angles of the tempered layer-peeled optimum
//! against the imbalance ratio.

use rayon::prelude::*;
use serde::Deserialize;
use tempering::layer_peeled::{optimize_lpm, GeometryReport};
use tempering::losses::LpmVariant;

use crate::config::{nonempty, parse_variant, ExperimentConfig, RunSection, TemperatureSection};
use crate::error::{config_err, CliResult};
use crate::lpm::LpmSection;
use crate::output::{strings, CsvRecord};

pub const CLAIM: &str = "it_h angles stay at the simplex ETF angle; it_w minority angle grows with R";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AngleGrid {
    pub ratios: Vec<usize>,
    pub variants: Vec<String>,
}

impl Default for AngleGrid {
    fn default() -> Self {
        Self {
            ratios: vec![1, 10, 100],
            variants: vec!["it_h".into(), "it_w".into()],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AngleConfig {
    pub run: RunSection,
    /// `n_majority` is ignored; majority classes get `ratio · n_minority`.
    pub lpm: LpmSection,
    pub temperature: TemperatureSection,
    pub sweep: AngleGrid,
}

impl Default for AngleConfig {
    fn default() -> Self {
        Self {
            run: RunSection::default(),
            lpm: LpmSection::default(),
            temperature: TemperatureSection::sqrt_n(),
            sweep: AngleGrid::default(),
        }
    }
}

impl ExperimentConfig for AngleConfig {
    const NAME: &'static str = "angle-sweep";
    const DEFAULT_REPLICATES: usize = 1;

    fn run_section(&self) -> &RunSection {
        &self.run
    }

    fn run_section_mut(&mut self) -> &mut RunSection {
        &mut self.run
    }

    fn validate(&self) -> CliResult<()> {
        self.lpm.validate_common()?;
        nonempty("sweep.ratios", &self.sweep.ratios)?;
        nonempty("sweep.variants", &self.sweep.variants)?;
        if self.sweep.ratios.contains(&0) {
            return config_err("sweep.ratios entries must be >= 1");
        }
        for v in &self.sweep.variants {
            parse_variant(v)?;
        }
        self.temperature.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AngleRow {
    pub seed: u64,
    pub ratio: usize,
    pub variant: LpmVariant,
    pub k: usize,
    /// Mean pairwise angle among majority class means, degrees.
    pub majority_angle: f64,
    pub minority_angle: f64,
    pub report: GeometryReport,
}

impl AngleRow {
    /// `arccos(−1/(K−1))` in degrees.
    pub fn etf_angle(&self) -> f64 {
        (-1.0 / (self.k as f64 - 1.0)).acos().to_degrees()
    }

    /// `arccos(−1/(K/2−1))` in degrees; NaN when `K/2 − 1 < 1`.
    pub fn half_etf_angle(&self) -> f64 {
        let h = self.k as f64 / 2.0 - 1.0;
        if h < 1.0 {
            f64::NAN
        } else {
            (-1.0 / h).acos().to_degrees()
        }
    }
}

impl CsvRecord for AngleRow {
    fn header() -> Vec<String> {
        strings(&[
            "experiment",
            "seed",
            "ratio",
            "variant",
            "majority_angle_deg",
            "minority_angle_deg",
            "etf_angle_deg",
            "half_etf_angle_deg",
            "maj_mean_cos",
            "min_mean_cos",
            "etf_dev",
            "nc1",
            "minority_collapse",
            "claim",
        ])
    }

    fn fields(&self) -> Vec<String> {
        vec![
            AngleConfig::NAME.to_string(),
            self.seed.to_string(),
            self.ratio.to_string(),
            self.variant.name().to_string(),
            self.majority_angle.to_string(),
            self.minority_angle.to_string(),
            self.etf_angle().to_string(),
            self.half_etf_angle().to_string(),
            self.report.majority_pairs.mean.to_string(),
            self.report.minority_pairs.mean.to_string(),
            self.report.etf_dev.to_string(),
            self.report.nc1.to_string(),
            self.report.minority_collapse.to_string(),
            CLAIM.to_string(),
        ]
    }
}

fn mean_angle(report: &GeometryReport, range: std::ops::Range<usize>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in range.clone() {
        for j in (i + 1)..range.end {
            sum += report.mean_cos[[i, j]].acos().to_degrees();
            n += 1;
        }
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

pub fn run_angle_point(cfg: &AngleConfig, seed: u64, ratio: usize, variant: LpmVariant) -> CliResult<AngleRow> {
    let k = cfg.lpm.k;
    let counts = cfg.lpm.counts(ratio * cfg.lpm.n_minority);
    let lc = cfg.lpm.lpm_config(counts, variant, &cfg.temperature, seed)?;
    let run = optimize_lpm(&lc)?;
    Ok(AngleRow {
        seed,
        ratio,
        variant,
        k,
        majority_angle: mean_angle(&run.report, 0..k / 2),
        minority_angle: mean_angle(&run.report, k / 2..k),
        report: run.report,
    })
}

/// Rows ordered by ratio, then variant, then seed.
pub fn run_angle_sweep(cfg: &AngleConfig) -> CliResult<Vec<AngleRow>> {
    let variants: Vec<LpmVariant> = cfg.sweep.variants.iter().map(|v| parse_variant(v)).collect::<CliResult<_>>()?;
    let mut jobs = Vec::new();
    for &r in &cfg.sweep.ratios {
        for &v in &variants {
            for s in cfg.seeds() {
                jobs.push((r, v, s));
            }
        }
    }
    jobs.into_par_iter()
        .map(|(r, v, s)| {
            log::info!("angle-sweep ratio={r} variant={} seed={s}", v.name());
            run_angle_point(cfg, s, r, v)
        })
        .collect()
}
