//! Gradient descent on the tempered loss against the cost-sensitive SVM.

use rayon::prelude::*;
use serde::Deserialize;
use tempering::datagen::gaussian_mixture_2d;
use tempering::losses::TemperatureSchedule;
use tempering::svm::{solve_cost_sensitive_svm, MarginSpec, SvmOptions, SvmSolution};
use tempering::trainer::{direction_alignment, margin_profile, train, HomogeneousModel, ModelKind, TrainConfig, TrainReport};

use crate::config::{at_least, positive, ExperimentConfig, RunSection, TemperatureSection};
use crate::error::{config_err, CliResult};
use crate::output::{strings, CsvRecord};

pub const CLAIM: &str = "tempered gradient descent converges to the cost-sensitive max-margin direction";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckData {
    pub n_minority: usize,
    /// Majority size is `ratio · n_minority`.
    pub ratio: usize,
    /// Centre of the majority blob (label +1).
    pub majority_mean: [f64; 2],
    /// Centre of the minority blob (label -1).
    pub minority_mean: [f64; 2],
    pub std: f64,
}

impl Default for CheckData {
    fn default() -> Self {
        Self {
            n_minority: 20,
            ratio: 3,
            majority_mean: [2.0, 0.5],
            minority_mean: [-0.5, -2.0],
            std: 0.3,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckTrain {
    pub steps: usize,
    pub eta: f64,
}

impl Default for CheckTrain {
    fn default() -> Self {
        Self {
            steps: 100_000,
            eta: 1.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvmCheckConfig {
    pub run: RunSection,
    pub data: CheckData,
    pub train: CheckTrain,
    pub temperature: TemperatureSection,
}

impl Default for SvmCheckConfig {
    fn default() -> Self {
        Self {
            run: RunSection::default(),
            data: CheckData::default(),
            train: CheckTrain::default(),
            temperature: TemperatureSection::explicit(vec![1.0, 0.5]),
        }
    }
}

impl ExperimentConfig for SvmCheckConfig {
    const NAME: &'static str = "svm-check";
    const DEFAULT_REPLICATES: usize = 5;

    fn run_section(&self) -> &RunSection {
        &self.run
    }

    fn run_section_mut(&mut self) -> &mut RunSection {
        &mut self.run
    }

    fn validate(&self) -> CliResult<()> {
        at_least("data.n_minority", self.data.n_minority, 1)?;
        at_least("data.ratio", self.data.ratio, 1)?;
        if !(self.data.std >= 0.0) {
            return config_err("data.std must be >= 0");
        }
        at_least("train.steps", self.train.steps, 1)?;
        positive("train.eta", self.train.eta)?;
        self.temperature.validate()
    }
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub seed: u64,
    pub temps: Vec<f64>,
    pub oracle: SvmSolution,
    pub report: TrainReport,
    pub cosine: f64,
    /// Smallest raw margin per group at the oracle solution.
    pub oracle_group_margins: Vec<f64>,
    /// Smallest raw margin over the active rows (`α_i > 0`) of each group at
    /// the oracle; NaN for a group without active rows.
    pub active_group_margins: Vec<f64>,
    pub trained_group_margins: Vec<f64>,
}

impl CheckOutcome {
    /// Group-1 over group-0 smallest raw margin at the oracle.
    pub fn oracle_margin_ratio(&self) -> f64 {
        self.oracle_group_margins[1] / self.oracle_group_margins[0]
    }

    /// Group-1 over group-0 raw margin among active rows at the oracle.
    pub fn active_margin_ratio(&self) -> f64 {
        self.active_group_margins[1] / self.active_group_margins[0]
    }

    pub fn expected_margin_ratio(&self) -> f64 {
        self.temps[0] / self.temps[1]
    }

    pub fn trained_margin_ratio(&self) -> f64 {
        self.trained_group_margins[1] / self.trained_group_margins[0]
    }
}

impl CsvRecord for CheckOutcome {
    fn header() -> Vec<String> {
        strings(&[
            "experiment",
            "seed",
            "steps",
            "cosine",
            "expected_margin_ratio",
            "oracle_margin_ratio",
            "active_margin_ratio",
            "trained_margin_ratio",
            "kkt_primal",
            "kkt_stationarity",
            "kkt_complementarity",
            "direction_residual",
            "claim",
        ])
    }

    fn fields(&self) -> Vec<String> {
        vec![
            SvmCheckConfig::NAME.to_string(),
            self.seed.to_string(),
            self.report.log.last().map_or(0, |l| l.step).to_string(),
            self.cosine.to_string(),
            self.expected_margin_ratio().to_string(),
            self.oracle_margin_ratio().to_string(),
            self.active_margin_ratio().to_string(),
            self.trained_margin_ratio().to_string(),
            self.oracle.kkt.primal.to_string(),
            self.oracle.kkt.stationarity.to_string(),
            self.oracle.kkt.complementarity.to_string(),
            self.report.final_residual.to_string(),
            CLAIM.to_string(),
        ]
    }
}

pub fn run_check(cfg: &SvmCheckConfig, seed: u64) -> CliResult<CheckOutcome> {
    let d = &cfg.data;
    let data = gaussian_mixture_2d(
        &[d.ratio * d.n_minority, d.n_minority],
        &[d.majority_mean, d.minority_mean],
        &[d.std, d.std],
        &[1, -1],
        seed,
    )?;
    let temps = cfg.temperature.group_temperatures(&data.group_counts)?;
    let y = data.signed_labels()?;
    let margins = MarginSpec::from_temps(&temps, &data.groups)?;
    let oracle = solve_cost_sensitive_svm(data.features.view(), &y, &margins, &SvmOptions::default())?;

    let model = HomogeneousModel::init(ModelKind::Linear, data.dim(), seed)?;
    let mut tc = TrainConfig::new(TemperatureSchedule::constant(temps.clone(), cfg.train.steps), cfg.train.steps);
    tc.eta = cfg.train.eta;
    tc.log_every = cfg.train.steps;
    tc.window = (cfg.train.steps / 10).max(1);
    let report = train(model, &data, &tc)?;

    let cosine = direction_alignment(&report.final_direction, &oracle.w)?;
    let oracle_model = HomogeneousModel::from_params(ModelKind::Linear, data.dim(), oracle.w.clone())?;
    let oracle_group_margins = margin_profile(&oracle_model, &data, &temps)?.iter().map(|m| m.raw).collect();
    let mut active_group_margins = vec![f64::NAN; data.n_groups()];
    for &i in &oracle.active {
        let q = oracle_model.output(data.row(i)) * y[i];
        let g = data.groups[i];
        if active_group_margins[g].is_nan() || q < active_group_margins[g] {
            active_group_margins[g] = q;
        }
    }
    let trained_group_margins = margin_profile(&report.model, &data, &temps)?.iter().map(|m| m.raw).collect();
    Ok(CheckOutcome {
        seed,
        temps: temps.values().to_vec(),
        oracle,
        report,
        cosine,
        oracle_group_margins,
        active_group_margins,
        trained_group_margins,
    })
}

pub fn run_svm_check(cfg: &SvmCheckConfig) -> CliResult<Vec<CheckOutcome>> {
    cfg.seeds()
        .into_par_iter()
        .map(|s| {
            log::info!("svm-check seed={s}");
            run_check(cfg, s)
        })
        .collect()
}
