use serde::Deserialize;
use tempering::datagen::GroupedDataset;
use tempering::losses::{TemperatureMap, TemperatureSchedule};
use tempering::trainer::{train, HomogeneousModel, LossSelector, ModelKind, TrainConfig};

use crate::error::CliResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Erm,
    Iw,
    It,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::Iw => "iw",
            Method::It => "it",
        }
    }
}

/// Importance weights `max n / n_g`.
pub fn balancing_weights(counts: &[usize]) -> Vec<f64> {
    let max = counts.iter().copied().max().unwrap_or(1) as f64;
    counts.iter().map(|&c| max / c as f64).collect()
}

/// Full-batch gradient descent with loss-normalized steps under the given
/// method; `temps` is only used by [`Method::It`].
pub fn fit_gd(
    kind: ModelKind,
    data: &GroupedDataset,
    method: Method,
    temps: &TemperatureMap,
    steps: usize,
    eta: f64,
    seed: u64,
) -> CliResult<HomogeneousModel> {
    let model = HomogeneousModel::init(kind, data.dim(), seed)?;
    let schedule_temps = match method {
        Method::It => temps.clone(),
        Method::Erm | Method::Iw => TemperatureMap::uniform(data.n_groups()),
    };
    let mut cfg = TrainConfig::new(TemperatureSchedule::constant(schedule_temps, steps), steps);
    cfg.eta = eta;
    cfg.log_every = steps.max(1);
    cfg.window = steps.max(1);
    if method == Method::Iw {
        cfg.loss = LossSelector::Weighted(balancing_weights(&data.group_counts));
    }
    Ok(train(model, data, &cfg)?.model)
}

/// Fraction of rows with `y q > 0`, per group.
pub fn group_accuracies(q: &[f64], labels: &[i64], groups: &[usize], n_groups: usize) -> Vec<f64> {
    let mut hit = vec![0usize; n_groups];
    let mut tot = vec![0usize; n_groups];
    for ((&qi, &y), &g) in q.iter().zip(labels).zip(groups) {
        tot[g] += 1;
        if y as f64 * qi > 0.0 {
            hit[g] += 1;
        }
    }
    hit.iter()
        .zip(&tot)
        .map(|(&h, &t)| if t == 0 { f64::NAN } else { h as f64 / t as f64 })
        .collect()
}
