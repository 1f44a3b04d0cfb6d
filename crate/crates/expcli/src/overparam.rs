//! Test error of random-feature classifiers against the feature count under
//! ERM, importance weighting and importance tempering.

use ndarray::Array2;
use rayon::prelude::*;
use serde::Deserialize;
use tempering::datagen::{sample_spurious_vector, GroupedDataset, RandomFeatureMap, SpuriousVectorConfig};
use tempering::losses::TemperatureMap;
use tempering::svm::{solve_cost_sensitive_svm, MarginSpec, SvmOptions};
use tempering::trainer::ModelKind;

use crate::config::{at_least, nonempty, positive, ExperimentConfig, RunSection, TemperatureSection};
use crate::error::{config_err, CliResult};
use crate::fit::{fit_gd, group_accuracies, Method};
use crate::output::{strings, CsvRecord};

pub const CLAIM: &str = "overparameterization hurts ERM worst-group error but not IT";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VectorData {
    pub d: usize,
    pub sigma_core: f64,
    pub sigma_spu: f64,
    pub n_majority: usize,
    pub n_minority: usize,
    pub test_per_group: usize,
}

impl Default for VectorData {
    fn default() -> Self {
        let v = SpuriousVectorConfig::default();
        Self {
            d: v.d,
            sigma_core: v.sigma_core,
            sigma_spu: v.sigma_spu,
            n_majority: 270,
            n_minority: 30,
            test_per_group: 500,
        }
    }
}

impl VectorData {
    fn sampler(&self, n_maj: usize, n_min: usize) -> SpuriousVectorConfig {
        SpuriousVectorConfig {
            d: self.d,
            sigma_core: self.sigma_core,
            sigma_spu: self.sigma_spu,
            n_maj,
            n_min,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidthSolver {
    /// Finite-step gradient descent at every width.
    Gd,
    /// The max-margin limit at every width; fails on non-separable widths.
    Svm,
    /// The max-margin limit when the width is at least the training-set
    /// size, gradient descent otherwise.
    Auto,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GdSection {
    pub solver: WidthSolver,
    pub steps: usize,
    pub eta: f64,
}

impl Default for GdSection {
    fn default() -> Self {
        Self {
            solver: WidthSolver::Auto,
            steps: 1000,
            eta: 1.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WidthGrid {
    pub widths: Vec<usize>,
    pub methods: Vec<Method>,
}

impl Default for WidthGrid {
    fn default() -> Self {
        Self {
            widths: vec![10, 27, 72, 193, 518, 1389, 3728, 10_000],
            methods: vec![Method::Erm, Method::Iw, Method::It],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverparamConfig {
    pub run: RunSection,
    pub data: VectorData,
    pub train: GdSection,
    /// Temperatures used by the `it` method.
    pub temperature: TemperatureSection,
    pub sweep: WidthGrid,
}

impl Default for OverparamConfig {
    fn default() -> Self {
        Self {
            run: RunSection::default(),
            data: VectorData::default(),
            train: GdSection::default(),
            temperature: TemperatureSection::gamma(1.0),
            sweep: WidthGrid::default(),
        }
    }
}

impl ExperimentConfig for OverparamConfig {
    const NAME: &'static str = "overparam-sweep";
    const DEFAULT_REPLICATES: usize = 2;

    fn run_section(&self) -> &RunSection {
        &self.run
    }

    fn run_section_mut(&mut self) -> &mut RunSection {
        &mut self.run
    }

    fn validate(&self) -> CliResult<()> {
        self.data.sampler(self.data.n_majority, self.data.n_minority).validate()?;
        at_least("data.test_per_group", self.data.test_per_group, 1)?;
        at_least("train.steps", self.train.steps, 1)?;
        positive("train.eta", self.train.eta)?;
        nonempty("sweep.widths", &self.sweep.widths)?;
        nonempty("sweep.methods", &self.sweep.methods)?;
        if self.sweep.widths.contains(&0) {
            return config_err("sweep.widths entries must be >= 1");
        }
        self.temperature.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverparamRow {
    pub seed: u64,
    pub width: usize,
    pub method: Method,
    pub train_error: f64,
    /// Test error per group, in group-id order.
    pub group_errors: Vec<f64>,
}

impl OverparamRow {
    /// Test error averaged over the (equal-sized) test groups.
    pub fn avg_error(&self) -> f64 {
        self.group_errors.iter().sum::<f64>() / self.group_errors.len() as f64
    }

    pub fn worst_group_error(&self) -> f64 {
        self.group_errors.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl CsvRecord for OverparamRow {
    fn header() -> Vec<String> {
        strings(&[
            "experiment",
            "seed",
            "width",
            "method",
            "train_error",
            "avg_error",
            "worst_group_error",
            "claim",
        ])
    }

    fn fields(&self) -> Vec<String> {
        vec![
            OverparamConfig::NAME.to_string(),
            self.seed.to_string(),
            self.width.to_string(),
            self.method.name().to_string(),
            self.train_error.to_string(),
            self.avg_error().to_string(),
            self.worst_group_error().to_string(),
            CLAIM.to_string(),
        ]
    }
}

const RF_SEED_OFFSET: u64 = 0x5EED_0011;
const TEST_SEED_OFFSET: u64 = 0x5EED_0012;

fn featurize(map: &RandomFeatureMap, data: &GroupedDataset, scale: f64) -> CliResult<GroupedDataset> {
    let f = map.apply(&data.features)? * scale;
    Ok(GroupedDataset::new(f, data.labels.clone(), data.groups.clone(), data.n_groups())?)
}

fn mean_sq_row_norm(x: &Array2<f64>) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.nrows() as f64
}

fn linear_outputs(x: &Array2<f64>, w: &[f64]) -> Vec<f64> {
    x.rows().into_iter().map(|r| r.iter().zip(w).map(|(a, b)| a * b).sum()).collect()
}

/// Under the max-margin limit ERM and IW share the uniform-margin solution.
fn fit_width_point(
    cfg: &OverparamConfig,
    train: &GroupedDataset,
    method: Method,
    temps: &TemperatureMap,
    seed: u64,
) -> CliResult<Vec<f64>> {
    let use_svm = match cfg.train.solver {
        WidthSolver::Gd => false,
        WidthSolver::Svm => true,
        WidthSolver::Auto => train.dim() >= train.n(),
    };
    if use_svm {
        let y = train.signed_labels()?;
        let margins = match method {
            Method::It => MarginSpec::from_temps(temps, &train.groups)?,
            Method::Erm | Method::Iw => MarginSpec::uniform(train.n(), 1.0)?,
        };
        Ok(solve_cost_sensitive_svm(train.features.view(), &y, &margins, &SvmOptions::default())?.w)
    } else {
        let model = fit_gd(ModelKind::Linear, train, method, temps, cfg.train.steps, cfg.train.eta, seed)?;
        Ok(model.theta)
    }
}

/// All configured methods at one `(width, seed)`, sharing the data and the
/// feature map.
pub fn run_width_point(cfg: &OverparamConfig, seed: u64, width: usize) -> CliResult<Vec<OverparamRow>> {
    let d = &cfg.data;
    let train_raw = sample_spurious_vector(&d.sampler(d.n_majority, d.n_minority), seed)?;
    let t = 2 * d.test_per_group;
    let test_raw = sample_spurious_vector(&d.sampler(t, t), seed.wrapping_add(TEST_SEED_OFFSET))?;
    let map = RandomFeatureMap::new(train_raw.dim(), width, seed.wrapping_add(RF_SEED_OFFSET))?;
    let unscaled = map.apply(&train_raw.features)?;
    let ms = mean_sq_row_norm(&unscaled);
    let scale = if ms > 0.0 { 1.0 / ms.sqrt() } else { 1.0 };
    let train = GroupedDataset::new(unscaled * scale, train_raw.labels.clone(), train_raw.groups.clone(), 4)?;
    let test = featurize(&map, &test_raw, scale)?;
    let temps = cfg.temperature.group_temperatures(&train.group_counts)?;
    cfg.sweep
        .methods
        .iter()
        .map(|&method| {
            log::info!("overparam-sweep width={width} method={} seed={seed}", method.name());
            let w = fit_width_point(cfg, &train, method, &temps, seed)?;
            let q_train = linear_outputs(&train.features, &w);
            let train_acc = group_accuracies(&q_train, &train.labels, &vec![0; train.n()], 1)[0];
            let q_test = linear_outputs(&test.features, &w);
            let acc = group_accuracies(&q_test, &test.labels, &test.groups, 4);
            Ok(OverparamRow {
                seed,
                width,
                method,
                train_error: 1.0 - train_acc,
                group_errors: acc.iter().map(|a| 1.0 - a).collect(),
            })
        })
        .collect()
}

/// Smallest grid width at which the training set can be interpolated in
/// general position.
pub fn interpolation_threshold(cfg: &OverparamConfig) -> Option<usize> {
    let n = cfg.data.n_majority + cfg.data.n_minority;
    cfg.sweep.widths.iter().copied().filter(|&m| m >= n).min()
}

/// Rows ordered by width, then seed, then method.
pub fn run_overparam_sweep(cfg: &OverparamConfig) -> CliResult<Vec<OverparamRow>> {
    let jobs: Vec<(usize, u64)> = cfg
        .sweep
        .widths
        .iter()
        .flat_map(|&m| cfg.seeds().into_iter().map(move |s| (m, s)))
        .collect();
    let blocks: Vec<Vec<OverparamRow>> = jobs
        .into_par_iter()
        .map(|(m, s)| run_width_point(cfg, s, m))
        .collect::<CliResult<_>>()?;
    Ok(blocks.into_iter().flatten().collect())
}
