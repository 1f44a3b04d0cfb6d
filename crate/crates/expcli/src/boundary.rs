//! Decision boundaries of ERM, importance-weighted and tempered training on
//! the two-blob toy, evaluated on a dense grid.

use rayon::prelude::*;
use serde::Deserialize;
use tempering::datagen::toy_mixture;
use tempering::trainer::{HomogeneousModel, ModelKind};

use crate::config::{at_least, nonempty, positive, ExperimentConfig, RunSection, TemperatureSection};
use crate::error::{config_err, CliResult};
use crate::fit::{fit_gd, Method};
use crate::output::{strings, CsvRecord};

pub const CLAIM: &str = "importance weighting keeps the ERM boundary; tempering moves it";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryModel {
    Linear,
    /// Bias-free two-layer ReLU net, 2-homogeneous.
    TwoLayer,
    /// Two-layer ReLU net with biases; not homogeneous.
    TwoLayerBiased,
}

impl BoundaryModel {
    pub fn name(self) -> &'static str {
        match self {
            BoundaryModel::Linear => "linear",
            BoundaryModel::TwoLayer => "two_layer",
            BoundaryModel::TwoLayerBiased => "two_layer_biased",
        }
    }

    pub fn kind(self, width: usize) -> ModelKind {
        match self {
            BoundaryModel::Linear => ModelKind::Linear,
            BoundaryModel::TwoLayer => ModelKind::TwoLayerRelu { width },
            BoundaryModel::TwoLayerBiased => ModelKind::TwoLayerReluBiased { width },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixtureSection {
    pub n_minority: usize,
    /// Majority size is `ratio · n_minority`.
    pub ratio: usize,
}

impl Default for MixtureSection {
    fn default() -> Self {
        Self {
            n_minority: 10,
            ratio: 10,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetSection {
    pub width: usize,
    pub steps: usize,
    pub eta: f64,
}

impl Default for NetSection {
    fn default() -> Self {
        Self {
            width: 200,
            steps: 20_000,
            eta: 1.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            nx: 200,
            ny: 200,
            xmin: -3.5,
            xmax: 3.5,
            ymin: -3.5,
            ymax: 3.5,
        }
    }
}

impl GridSection {
    /// Cell centres, `x` varying fastest.
    pub fn points(&self) -> Vec<(usize, usize, f64, f64)> {
        let mut out = Vec::with_capacity(self.nx * self.ny);
        for iy in 0..self.ny {
            let y = self.ymin + (iy as f64 + 0.5) * (self.ymax - self.ymin) / self.ny as f64;
            for ix in 0..self.nx {
                let x = self.xmin + (ix as f64 + 0.5) * (self.xmax - self.xmin) / self.nx as f64;
                out.push((ix, iy, x, y));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundarySweep {
    pub models: Vec<BoundaryModel>,
    pub methods: Vec<Method>,
}

impl Default for BoundarySweep {
    fn default() -> Self {
        Self {
            models: vec![BoundaryModel::Linear, BoundaryModel::TwoLayer, BoundaryModel::TwoLayerBiased],
            methods: vec![Method::Erm, Method::Iw, Method::It],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundaryConfig {
    pub run: RunSection,
    pub data: MixtureSection,
    pub model: NetSection,
    pub temperature: TemperatureSection,
    pub grid: GridSection,
    pub sweep: BoundarySweep,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        Self {
            run: RunSection::default(),
            data: MixtureSection::default(),
            model: NetSection::default(),
            temperature: TemperatureSection::gamma(1.0),
            grid: GridSection::default(),
            sweep: BoundarySweep::default(),
        }
    }
}

impl ExperimentConfig for BoundaryConfig {
    const NAME: &'static str = "boundary-demo";
    const DEFAULT_REPLICATES: usize = 1;

    fn run_section(&self) -> &RunSection {
        &self.run
    }

    fn run_section_mut(&mut self) -> &mut RunSection {
        &mut self.run
    }

    fn validate(&self) -> CliResult<()> {
        at_least("data.n_minority", self.data.n_minority, 1)?;
        at_least("data.ratio", self.data.ratio, 1)?;
        at_least("model.width", self.model.width, 1)?;
        at_least("model.steps", self.model.steps, 1)?;
        positive("model.eta", self.model.eta)?;
        at_least("grid.nx", self.grid.nx, 1)?;
        at_least("grid.ny", self.grid.ny, 1)?;
        let g = &self.grid;
        if !(g.xmin < g.xmax && g.ymin < g.ymax) {
            return config_err("grid bounds must satisfy min < max");
        }
        nonempty("sweep.models", &self.sweep.models)?;
        nonempty("sweep.methods", &self.sweep.methods)?;
        self.temperature.validate()
    }
}

/// Trains one model on the toy task at `seed`.
pub fn fit_boundary(cfg: &BoundaryConfig, seed: u64, model: BoundaryModel, method: Method) -> CliResult<HomogeneousModel> {
    let data = toy_mixture(cfg.data.n_minority, cfg.data.ratio, seed)?;
    let temps = cfg.temperature.group_temperatures(&data.group_counts)?;
    let m = &cfg.model;
    fit_gd(model.kind(m.width), &data, method, &temps, m.steps, m.eta, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub seed: u64,
    pub model: BoundaryModel,
    pub method: Method,
    pub ix: usize,
    pub iy: usize,
    pub x: f64,
    pub y: f64,
    pub output: f64,
}

impl CsvRecord for GridRow {
    fn header() -> Vec<String> {
        strings(&["experiment", "seed", "model", "method", "ix", "iy", "x", "y", "output", "sign", "claim"])
    }

    fn fields(&self) -> Vec<String> {
        let sign = if self.output > 0.0 {
            1
        } else if self.output < 0.0 {
            -1
        } else {
            0
        };
        vec![
            BoundaryConfig::NAME.to_string(),
            self.seed.to_string(),
            self.model.name().to_string(),
            self.method.name().to_string(),
            self.ix.to_string(),
            self.iy.to_string(),
            self.x.to_string(),
            self.y.to_string(),
            self.output.to_string(),
            sign.to_string(),
            CLAIM.to_string(),
        ]
    }
}

pub fn grid_outputs(model: &HomogeneousModel, grid: &GridSection) -> Vec<f64> {
    grid.points().iter().map(|&(_, _, x, y)| model.output(&[x, y])).collect()
}

/// Fraction of grid cells where the two models' outputs differ in sign.
pub fn sign_disagreement(a: &HomogeneousModel, b: &HomogeneousModel, grid: &GridSection) -> f64 {
    let qa = grid_outputs(a, grid);
    let qb = grid_outputs(b, grid);
    let differ = qa.iter().zip(&qb).filter(|(p, q)| (**p > 0.0) != (**q > 0.0)).count();
    differ as f64 / qa.len() as f64
}

/// Rows ordered by seed, model, method, then grid cell.
pub fn run_boundary_demo(cfg: &BoundaryConfig) -> CliResult<Vec<GridRow>> {
    let mut jobs = Vec::new();
    for s in cfg.seeds() {
        for &model in &cfg.sweep.models {
            for &method in &cfg.sweep.methods {
                jobs.push((s, model, method));
            }
        }
    }
    let points = cfg.grid.points();
    let blocks: Vec<Vec<GridRow>> = jobs
        .into_par_iter()
        .map(|(seed, model, method)| {
            log::info!("boundary-demo model={} method={} seed={seed}", model.name(), method.name());
            let net = fit_boundary(cfg, seed, model, method)?;
            Ok(points
                .iter()
                .map(|&(ix, iy, x, y)| GridRow {
                    seed,
                    model,
                    method,
                    ix,
                    iy,
                    x,
                    y,
                    output: net.output(&[x, y]),
                })
                .collect())
        })
        .collect::<CliResult<_>>()?;
    Ok(blocks.into_iter().flatten().collect())
}
