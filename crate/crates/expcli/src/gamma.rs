//! Worst-group accuracy against the temperature exponent γ on an imbalanced
//! two-blob task.

use ndarray::Array2;
use rayon::prelude::*;
use serde::Deserialize;
use tempering::datagen::{gaussian_mixture_2d, GroupedDataset, RandomFeatureMap};
use tempering::losses::{gamma_rule, TemperatureMap};
use tempering::svm::{solve_cost_sensitive_svm, MarginSpec, SvmOptions};
use tempering::trainer::ModelKind;

use crate::config::{at_least, nonempty, positive, ExperimentConfig, RunSection};
use crate::error::{config_err, CliResult};
use crate::fit::{fit_gd, group_accuracies, Method};
use crate::output::{strings, CsvRecord};

pub const CLAIM: &str = "worst-group accuracy peaks near gamma = 0.5";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyData {
    pub n_majority: usize,
    pub n_minority: usize,
    /// Majority blob (label +1) at `(mean, mean)`, minority (label -1) at
    /// `(-mean, -mean)`.
    pub mean: f64,
    pub std_majority: f64,
    pub std_minority: f64,
    /// Constant appended to every input so the linear model has an offset.
    pub bias_input: f64,
    /// Test rows per group for sampled evaluation.
    pub test_per_group: usize,
}

impl Default for ToyData {
    fn default() -> Self {
        Self {
            n_majority: 500,
            n_minority: 10,
            mean: 2.4,
            std_majority: 1.0,
            std_minority: 1.0,
            bias_input: 1.0,
            test_per_group: 5000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyModel {
    /// Linear in `(x1, x2, bias_input)`, scored by exact Gaussian accuracy.
    Linear,
    /// Linear on ReLU random features of `(x1, x2, bias_input)`, scored on a
    /// sampled test set.
    RandomFeatures,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyModelSection {
    pub kind: ToyModel,
    pub width: usize,
}

impl Default for ToyModelSection {
    fn default() -> Self {
        Self {
            kind: ToyModel::Linear,
            width: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// The max-margin limit, solved directly.
    Svm,
    /// Finite-step gradient descent on the tempered exponential loss.
    Gd,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub solver: Solver,
    pub steps: usize,
    pub eta: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            solver: Solver::Svm,
            steps: 20_000,
            eta: 1.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GammaGrid {
    pub gammas: Vec<f64>,
}

impl Default for GammaGrid {
    fn default() -> Self {
        Self {
            gammas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GammaConfig {
    pub run: RunSection,
    pub data: ToyData,
    pub model: ToyModelSection,
    pub train: SolverSection,
    pub sweep: GammaGrid,
}

impl ExperimentConfig for GammaConfig {
    const NAME: &'static str = "gamma-sweep";
    const DEFAULT_REPLICATES: usize = 5;

    fn run_section(&self) -> &RunSection {
        &self.run
    }

    fn run_section_mut(&mut self) -> &mut RunSection {
        &mut self.run
    }

    fn validate(&self) -> CliResult<()> {
        nonempty("sweep.gammas", &self.sweep.gammas)?;
        if let Some(g) = self.sweep.gammas.iter().find(|g| !(0.0..=1.0).contains(*g)) {
            return config_err(format!("sweep.gammas entry {g} outside [0, 1]"));
        }
        at_least("data.n_minority", self.data.n_minority, 1)?;
        if self.data.n_majority < self.data.n_minority {
            return config_err("data.n_majority must be >= data.n_minority");
        }
        if !(self.data.std_majority >= 0.0 && self.data.std_minority >= 0.0) {
            return config_err("data stds must be >= 0");
        }
        if !self.data.mean.is_finite() || !self.data.bias_input.is_finite() {
            return config_err("data.mean and data.bias_input must be finite");
        }
        if self.model.kind == ToyModel::RandomFeatures {
            at_least("model.width", self.model.width, 1)?;
            at_least("data.test_per_group", self.data.test_per_group, 1)?;
        }
        if self.train.solver == Solver::Gd {
            at_least("train.steps", self.train.steps, 1)?;
            positive("train.eta", self.train.eta)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaRow {
    pub seed: u64,
    pub gamma: f64,
    pub acc_majority: f64,
    pub acc_minority: f64,
}

impl GammaRow {
    pub fn balanced_accuracy(&self) -> f64 {
        0.5 * (self.acc_majority + self.acc_minority)
    }

    pub fn worst_group_accuracy(&self) -> f64 {
        self.acc_majority.min(self.acc_minority)
    }
}

impl CsvRecord for GammaRow {
    fn header() -> Vec<String> {
        strings(&[
            "experiment",
            "seed",
            "gamma",
            "balanced_acc",
            "worst_group_acc",
            "acc_majority",
            "acc_minority",
            "claim",
        ])
    }

    fn fields(&self) -> Vec<String> {
        vec![
            GammaConfig::NAME.to_string(),
            self.seed.to_string(),
            self.gamma.to_string(),
            self.balanced_accuracy().to_string(),
            self.worst_group_accuracy().to_string(),
            self.acc_majority.to_string(),
            self.acc_minority.to_string(),
            CLAIM.to_string(),
        ]
    }
}

const RF_SEED_OFFSET: u64 = 0x5EED_0001;
const TEST_SEED_OFFSET: u64 = 0x5EED_0002;

fn blobs(d: &ToyData, n_maj: usize, n_min: usize, seed: u64) -> CliResult<GroupedDataset> {
    Ok(gaussian_mixture_2d(
        &[n_maj, n_min],
        &[[d.mean, d.mean], [-d.mean, -d.mean]],
        &[d.std_majority, d.std_minority],
        &[1, -1],
        seed,
    )?)
}

fn with_bias(x: &Array2<f64>, c: f64) -> Array2<f64> {
    Array2::from_shape_fn((x.nrows(), 3), |(i, j)| if j < 2 { x[[i, j]] } else { c })
}

/// Input map shared by training and test data.
enum Features {
    Linear,
    Random(RandomFeatureMap, f64),
}

impl Features {
    fn new(cfg: &GammaConfig, seed: u64) -> CliResult<Self> {
        Ok(match cfg.model.kind {
            ToyModel::Linear => Features::Linear,
            ToyModel::RandomFeatures => {
                let map = RandomFeatureMap::new(3, cfg.model.width, seed.wrapping_add(RF_SEED_OFFSET))?;
                Features::Random(map, 1.0 / (cfg.model.width as f64).sqrt())
            }
        })
    }

    fn apply(&self, data: &GroupedDataset, bias: f64) -> CliResult<GroupedDataset> {
        let x = with_bias(&data.features, bias);
        let features = match self {
            Features::Linear => x,
            Features::Random(map, scale) => map.apply(&x)? * *scale,
        };
        Ok(GroupedDataset::new(features, data.labels.clone(), data.groups.clone(), 2)?)
    }
}

fn fit(cfg: &GammaConfig, train: &GroupedDataset, temps: &TemperatureMap, seed: u64) -> CliResult<Vec<f64>> {
    match cfg.train.solver {
        Solver::Svm => {
            let y = train.signed_labels()?;
            let margins = MarginSpec::from_temps(temps, &train.groups)?;
            let sol = solve_cost_sensitive_svm(train.features.view(), &y, &margins, &SvmOptions::default())?;
            Ok(sol.w)
        }
        Solver::Gd => {
            let model = fit_gd(
                ModelKind::Linear,
                train,
                Method::It,
                temps,
                cfg.train.steps,
                cfg.train.eta,
                seed,
            )?;
            Ok(model.theta)
        }
    }
}

/// `P(y (w·x) > 0)` for `x ~ N(m, s² I)` in the plane, with the offset input.
fn exact_accuracy(w: &[f64], mean: [f64; 2], std: f64, y: f64, bias: f64) -> f64 {
    let mu = y * (w[0] * mean[0] + w[1] * mean[1] + w[2] * bias);
    let s = std * (w[0] * w[0] + w[1] * w[1]).sqrt();
    if s == 0.0 {
        return if mu > 0.0 {
            1.0
        } else if mu == 0.0 {
            0.5
        } else {
            0.0
        };
    }
    0.5 * libm::erfc(-mu / (s * std::f64::consts::SQRT_2))
}

/// One sweep point with explicit temperatures; `gamma` is only recorded.
pub fn run_point(cfg: &GammaConfig, seed: u64, gamma: f64, temps: &TemperatureMap) -> CliResult<GammaRow> {
    let d = &cfg.data;
    let raw = blobs(d, d.n_majority, d.n_minority, seed)?;
    let features = Features::new(cfg, seed)?;
    let train = features.apply(&raw, d.bias_input)?;
    let w = fit(cfg, &train, temps, seed)?;
    let (acc_majority, acc_minority) = match &features {
        Features::Linear => (
            exact_accuracy(&w, [d.mean, d.mean], d.std_majority, 1.0, d.bias_input),
            exact_accuracy(&w, [-d.mean, -d.mean], d.std_minority, -1.0, d.bias_input),
        ),
        Features::Random(..) => {
            let t = d.test_per_group;
            let test = features.apply(&blobs(d, t, t, seed.wrapping_add(TEST_SEED_OFFSET))?, d.bias_input)?;
            let q: Vec<f64> = test.features.rows().into_iter().map(|r| r.iter().zip(&w).map(|(a, b)| a * b).sum()).collect();
            let acc = group_accuracies(&q, &test.labels, &test.groups, 2);
            (acc[0], acc[1])
        }
    };
    Ok(GammaRow {
        seed,
        gamma,
        acc_majority,
        acc_minority,
    })
}

/// Plain ERM (uniform temperatures) at the given seed.
pub fn run_erm(cfg: &GammaConfig, seed: u64) -> CliResult<GammaRow> {
    run_point(cfg, seed, 0.0, &TemperatureMap::uniform(2))
}

/// Rows in grid order: γ-major, seeds inner.
pub fn run_gamma_sweep(cfg: &GammaConfig) -> CliResult<Vec<GammaRow>> {
    let counts = [cfg.data.n_majority, cfg.data.n_minority];
    let jobs: Vec<(f64, u64)> = cfg
        .sweep
        .gammas
        .iter()
        .flat_map(|&g| cfg.seeds().into_iter().map(move |s| (g, s)))
        .collect();
    jobs.into_par_iter()
        .map(|(gamma, seed)| {
            log::info!("gamma-sweep gamma={gamma} seed={seed}");
            run_point(cfg, seed, gamma, &gamma_rule(&counts, gamma)?)
        })
        .collect()
}
