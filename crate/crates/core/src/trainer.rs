//! Full-batch gradient descent on homogeneous predictors under tempered or
//! weighted exponential losses.

use std::io::Write;

use ndarray::ArrayView2;

use crate::datagen::{normal, rng_from_seed, GroupedDataset};
use crate::error::{invalid, Error, Result};
use crate::losses::{it_exp_loss, iw_exp_loss, LossEval, TemperatureMap, TemperatureSchedule};
use crate::numeric::{dot, norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// `q = θ·x`.
    Linear,
    /// `q = Σ_j a_j relu(v_j·x)`, 2-homogeneous.
    TwoLayerRelu { width: usize },
    /// `q = Σ_j a_j relu(v_j·x + b_j) + c`. Not homogeneous; kept as a
    /// negative control.
    TwoLayerReluBiased { width: usize },
}

impl ModelKind {
    pub fn n_params(self, input_dim: usize) -> usize {
        match self {
            ModelKind::Linear => input_dim,
            ModelKind::TwoLayerRelu { width } => width * (input_dim + 1),
            ModelKind::TwoLayerReluBiased { width } => width * (input_dim + 2) + 1,
        }
    }

    /// Homogeneity degree L (nominal for the biased net).
    pub fn degree(self) -> u32 {
        match self {
            ModelKind::Linear => 1,
            _ => 2,
        }
    }

    pub fn is_homogeneous(self) -> bool {
        !matches!(self, ModelKind::TwoLayerReluBiased { .. })
    }
}

/// Parameters are flat: hidden weights row-major, then (biased only) hidden
/// biases, then output weights, then (biased only) output bias.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneousModel {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub theta: Vec<f64>,
}

impl HomogeneousModel {
    /// Gaussian init with entries scaled by `1/sqrt(fan_in)`.
    pub fn init(kind: ModelKind, input_dim: usize, seed: u64) -> Result<Self> {
        Self::check_kind(kind, input_dim)?;
        let mut rng = rng_from_seed(seed);
        let d = input_dim as f64;
        let theta = match kind {
            ModelKind::Linear => (0..input_dim).map(|_| normal(&mut rng) / d.sqrt()).collect(),
            ModelKind::TwoLayerRelu { width } => {
                let mut t: Vec<f64> = (0..width * input_dim)
                    .map(|_| normal(&mut rng) / d.sqrt())
                    .collect();
                t.extend((0..width).map(|_| normal(&mut rng) / (width as f64).sqrt()));
                t
            }
            ModelKind::TwoLayerReluBiased { width } => {
                let mut t: Vec<f64> = (0..width * input_dim)
                    .map(|_| normal(&mut rng) / d.sqrt())
                    .collect();
                t.extend((0..width).map(|_| normal(&mut rng) / d.sqrt()));
                t.extend((0..width).map(|_| normal(&mut rng) / (width as f64).sqrt()));
                t.push(0.0);
                t
            }
        };
        Ok(Self {
            kind,
            input_dim,
            theta,
        })
    }

    pub fn from_params(kind: ModelKind, input_dim: usize, theta: Vec<f64>) -> Result<Self> {
        Self::check_kind(kind, input_dim)?;
        if theta.len() != kind.n_params(input_dim) {
            return invalid(format!(
                "expected {} parameters, got {}",
                kind.n_params(input_dim),
                theta.len()
            ));
        }
        Ok(Self {
            kind,
            input_dim,
            theta,
        })
    }

    fn check_kind(kind: ModelKind, input_dim: usize) -> Result<()> {
        if input_dim == 0 {
            return invalid("input dimension must be >= 1");
        }
        match kind {
            ModelKind::TwoLayerRelu { width } | ModelKind::TwoLayerReluBiased { width }
                if width == 0 =>
            {
                invalid("hidden width must be >= 1")
            }
            _ => Ok(()),
        }
    }

    pub fn degree(&self) -> u32 {
        self.kind.degree()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            theta: self.theta.iter().map(|t| t * alpha).collect(),
            ..self.clone()
        }
    }

    /// `θ/||θ||`.
    pub fn direction(&self) -> Vec<f64> {
        let n = norm(&self.theta);
        self.theta.iter().map(|t| t / n).collect()
    }

    pub fn output(&self, x: &[f64]) -> f64 {
        let d = self.input_dim;
        match self.kind {
            ModelKind::Linear => dot(&self.theta, x),
            ModelKind::TwoLayerRelu { width } => {
                let (v, a) = self.theta.split_at(width * d);
                (0..width)
                    .map(|j| a[j] * dot(&v[j * d..(j + 1) * d], x).max(0.0))
                    .sum()
            }
            ModelKind::TwoLayerReluBiased { width } => {
                let (v, rest) = self.theta.split_at(width * d);
                let (b, rest) = rest.split_at(width);
                let (a, c) = rest.split_at(width);
                c[0] + (0..width)
                    .map(|j| a[j] * (dot(&v[j * d..(j + 1) * d], x) + b[j]).max(0.0))
                    .sum::<f64>()
            }
        }
    }

    pub fn outputs(&self, x: ArrayView2<f64>) -> Vec<f64> {
        x.rows()
            .into_iter()
            .map(|r| match r.as_slice() {
                Some(s) => self.output(s),
                None => self.output(&r.to_vec()),
            })
            .collect()
    }

    /// `Σ_i dq_i ∇_θ q(x_i)`.
    pub fn pullback(&self, x: ArrayView2<f64>, dq: &[f64]) -> Vec<f64> {
        let d = self.input_dim;
        let mut g = vec![0.0; self.theta.len()];
        match self.kind {
            ModelKind::Linear => {
                for (row, &c) in x.rows().into_iter().zip(dq) {
                    for (gj, xj) in g.iter_mut().zip(row) {
                        *gj += c * xj;
                    }
                }
            }
            ModelKind::TwoLayerRelu { width } | ModelKind::TwoLayerReluBiased { width } => {
                let biased = matches!(self.kind, ModelKind::TwoLayerReluBiased { .. });
                let v = &self.theta[..width * d];
                let (b_off, a_off) = if biased {
                    (width * d, width * d + width)
                } else {
                    (usize::MAX, width * d)
                };
                let a = &self.theta[a_off..a_off + width];
                for (row, &c) in x.rows().into_iter().zip(dq) {
                    if c == 0.0 {
                        continue;
                    }
                    let xr = row.to_vec();
                    for j in 0..width {
                        let mut pre = dot(&v[j * d..(j + 1) * d], &xr);
                        if biased {
                            pre += self.theta[b_off + j];
                        }
                        if pre <= 0.0 {
                            continue;
                        }
                        g[a_off + j] += c * pre;
                        let ca = c * a[j];
                        for t in 0..d {
                            g[j * d + t] += ca * xr[t];
                        }
                        if biased {
                            g[b_off + j] += ca;
                        }
                    }
                    if biased {
                        *g.last_mut().expect("non-empty") += c;
                    }
                }
            }
        }
        g
    }
}

/// `max_{α, x} |q(x, αθ) − α^L q(x, θ)| / (1 + α^L |q(x, θ)|)`.
pub fn homogeneity_check(model: &HomogeneousModel, x: ArrayView2<f64>, alphas: &[f64]) -> Result<f64> {
    if alphas.iter().any(|a| !(*a > 0.0 && *a <= 4.0)) {
        return invalid("alphas must lie in (0, 4]");
    }
    let l = model.degree() as i32;
    let base = model.outputs(x);
    let mut worst: f64 = 0.0;
    for &alpha in alphas {
        let scaled = model.scaled(alpha).outputs(x);
        let al = alpha.powi(l);
        for (s, b) in scaled.iter().zip(&base) {
            worst = worst.max((s - al * b).abs() / (1.0 + al * b.abs()));
        }
    }
    Ok(worst)
}

/// Cosine similarity; errors on a zero vector.
pub fn direction_alignment(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return invalid("vectors differ in length");
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return invalid("zero vector has no direction");
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupMargin {
    /// `min_{i in g} y_i q(x_i)`.
    pub raw: f64,
    /// `f[g] · raw`.
    pub normalized: f64,
}

pub fn margin_profile(
    model: &HomogeneousModel,
    data: &GroupedDataset,
    temps: &TemperatureMap,
) -> Result<Vec<GroupMargin>> {
    let y = data.signed_labels()?;
    let q = model.outputs(data.features.view());
    margins_from_outputs(&q, &y, &data.groups, temps)
}

fn margins_from_outputs(
    q: &[f64],
    y: &[f64],
    groups: &[usize],
    temps: &TemperatureMap,
) -> Result<Vec<GroupMargin>> {
    let ng = temps.len();
    let mut raw = vec![f64::INFINITY; ng];
    for ((&qi, &yi), &g) in q.iter().zip(y).zip(groups) {
        if g >= ng {
            return invalid(format!("group {g} has no temperature"));
        }
        raw[g] = raw[g].min(yi * qi);
    }
    Ok(raw
        .into_iter()
        .enumerate()
        .map(|(g, r)| GroupMargin {
            raw: r,
            normalized: temps.get(g) * r,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRule {
    /// `θ ← θ − η ∇L`.
    Constant,
    /// `θ ← θ − η ∇L / (L · ||θ||^{2(deg−1)})`.
    LossNormalized,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LossSelector {
    /// Tempered exponential loss with temperatures from the schedule.
    Tempered,
    /// Weighted exponential loss; the schedule only sets the report's
    /// normalized margins.
    Weighted(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub loss: LossSelector,
    pub schedule: TemperatureSchedule,
    pub steps: usize,
    pub step_rule: StepRule,
    pub eta: f64,
    pub log_every: usize,
    /// Lag Δ of the directional residual `||dir_t − dir_{t−Δ}||`.
    pub window: usize,
    pub residual_tol: f64,
    /// Consecutive loss increases that count as divergence.
    pub patience: usize,
}

impl TrainConfig {
    pub fn new(schedule: TemperatureSchedule, steps: usize) -> Self {
        Self {
            loss: LossSelector::Tempered,
            schedule,
            steps,
            step_rule: StepRule::LossNormalized,
            eta: 0.1,
            log_every: 1000,
            window: 1000,
            residual_tol: 1e-3,
            patience: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoggedStep {
    pub step: usize,
    pub loss: f64,
    pub log_loss: f64,
    pub margins: Vec<GroupMargin>,
    /// Latest directional residual, NaN before the first full window.
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub log: Vec<LoggedStep>,
    /// `(step, θ/||θ||)` every `window` steps.
    pub snapshots: Vec<(usize, Vec<f64>)>,
    pub final_direction: Vec<f64>,
    pub final_residual: f64,
    /// First step with loss below `1/n`.
    pub post_separation_step: Option<usize>,
    pub clamped: usize,
    pub model: HomogeneousModel,
    pub residual_tol: f64,
}

impl TrainReport {
    pub fn post_separation(&self) -> bool {
        self.post_separation_step.is_some()
    }

    pub fn direction_converged(&self) -> bool {
        self.final_residual <= self.residual_tol
    }

    /// Columns `step,loss,raw_margin_g*,norm_margin_g*,residual`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let ng = self.log.first().map_or(0, |r| r.margins.len());
        let mut header = vec!["step".to_string(), "loss".to_string()];
        header.extend((0..ng).map(|g| format!("raw_margin_g{g}")));
        header.extend((0..ng).map(|g| format!("norm_margin_g{g}")));
        header.push("residual".into());
        w.write_record(&header)?;
        for row in &self.log {
            let mut rec = vec![row.step.to_string(), row.loss.to_string()];
            rec.extend(row.margins.iter().map(|m| m.raw.to_string()));
            rec.extend(row.margins.iter().map(|m| m.normalized.to_string()));
            rec.push(row.residual.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn evaluate(
    cfg: &TrainConfig,
    q: &[f64],
    y: &[f64],
    groups: &[usize],
    temps: &TemperatureMap,
) -> Result<LossEval> {
    match &cfg.loss {
        LossSelector::Tempered => it_exp_loss(q, y, groups, temps),
        LossSelector::Weighted(w) => iw_exp_loss(q, y, groups, w),
    }
}

pub fn train(
    mut model: HomogeneousModel,
    data: &GroupedDataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if data.dim() != model.input_dim {
        return invalid(format!(
            "data has {} features, model expects {}",
            data.dim(),
            model.input_dim
        ));
    }
    if !(cfg.eta > 0.0 && cfg.eta.is_finite()) {
        return invalid("step size must be positive");
    }
    if cfg.window == 0 || cfg.log_every == 0 {
        return invalid("window and log cadence must be positive");
    }
    if cfg.schedule.n_groups() != data.n_groups() {
        return invalid("schedule group count differs from dataset");
    }
    let y = data.signed_labels()?;
    let x = data.features.view();
    let n = data.n() as f64;
    let power = 2 * (model.degree() as i32 - 1);

    let mut log = Vec::new();
    let mut snapshots: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut residual = f64::NAN;
    let mut post_separation_step = None;
    let mut clamped = 0;
    let mut prev_log_loss = f64::INFINITY;
    let mut rising = 0usize;

    if norm(&model.theta) > 0.0 {
        snapshots.push((0, model.direction()));
    }

    for step in 0..=cfg.steps {
        let temps = cfg.schedule.at(step);
        let q = model.outputs(x);
        let eval = evaluate(cfg, &q, &y, &data.groups, temps)?;
        clamped += eval.clamped;
        if !eval.log_loss.is_finite() && eval.log_loss != f64::NEG_INFINITY {
            return Err(Error::NonFinite("training loss"));
        }
        if post_separation_step.is_none() && eval.log_loss < -n.ln() {
            post_separation_step = Some(step);
        }
        if step > 0 && step % cfg.window == 0 {
            let dir = model.direction();
            if let Some((_, prev)) = snapshots.last() {
                residual = dir
                    .iter()
                    .zip(prev)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
            }
            snapshots.push((step, dir));
        }
        if step % cfg.log_every == 0 || step == cfg.steps {
            log.push(LoggedStep {
                step,
                loss: eval.loss,
                log_loss: eval.log_loss,
                margins: margins_from_outputs(&q, &y, &data.groups, cfg.schedule.last())?,
                residual,
            });
        }
        if eval.log_loss > prev_log_loss {
            rising += 1;
            if rising >= cfg.patience {
                return Err(Error::Divergence {
                    step,
                    loss: eval.loss,
                });
            }
        } else {
            rising = 0;
        }
        prev_log_loss = eval.log_loss;
        if step == cfg.steps {
            break;
        }

        let (dq, scale) = match cfg.step_rule {
            StepRule::Constant => (eval.grad, cfg.eta),
            StepRule::LossNormalized => {
                let denom = if power == 0 {
                    1.0
                } else {
                    norm(&model.theta).powi(power).max(1e-12)
                };
                (eval.grad_over_loss, cfg.eta / denom)
            }
        };
        let g = model.pullback(x, &dq);
        for (t, gi) in model.theta.iter_mut().zip(&g) {
            *t -= scale * gi;
        }
        if model.theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("parameters"));
        }
    }

    let final_direction = model.direction();
    Ok(TrainReport {
        log,
        snapshots,
        final_direction,
        final_residual: residual,
        post_separation_step,
        clamped,
        model,
        residual_tol: cfg.residual_tol,
    })
}
