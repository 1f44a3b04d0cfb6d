//! Tempered and weighted losses, layer-peeled cross-entropy variants, and
//! temperature rules.

use std::fmt::Write as _;

use ndarray::Array2;

use crate::error::{invalid, Error, Result};
use crate::numeric::{dot, log_softplus, logsumexp, softplus};

/// Exponents `-y q f` above this are clamped.
pub const EXPONENT_CLAMP: f64 = 30.0;

/// Per-group importance temperature `f[g] > 0`. The required margin of group
/// `g` is `1/f[g]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureMap {
    f: Vec<f64>,
}

impl TemperatureMap {
    pub fn new(f: Vec<f64>) -> Result<Self> {
        if f.is_empty() {
            return invalid("temperature map needs at least one group");
        }
        if let Some(g) = f.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return invalid(format!("temperature f[{g}] = {} must be finite and > 0", f[g]));
        }
        Ok(Self { f })
    }

    pub fn uniform(n_groups: usize) -> Self {
        Self {
            f: vec![1.0; n_groups.max(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.f
    }

    pub fn get(&self, g: usize) -> f64 {
        self.f[g]
    }

    pub fn margin(&self, g: usize) -> f64 {
        1.0 / self.f[g]
    }

    pub fn margins(&self) -> Vec<f64> {
        self.f.iter().map(|v| 1.0 / v).collect()
    }

    pub fn is_uniform(&self) -> bool {
        self.f.iter().all(|&v| v == self.f[0])
    }

    /// One `group=value` line per group.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (g, v) in self.f.iter().enumerate() {
            let _ = writeln!(s, "{g}={v}");
        }
        s
    }

    /// Parses `group=value` lines; blank lines are skipped. Every group in
    /// `0..n` must appear exactly once.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (g, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected group=value", lineno + 1)))?;
            let g: usize = g
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad group {g:?}", lineno + 1)))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad value {v:?}", lineno + 1)))?;
            pairs.push((g, v));
        }
        let n = pairs.len();
        let mut f = vec![f64::NAN; n];
        for (g, v) in pairs {
            if g >= n || !f[g].is_nan() {
                return Err(Error::Parse(format!("group {g} duplicated or out of range")));
            }
            f[g] = v;
        }
        Self::new(f)
    }
}

/// `phases[i] = (steps, temps)`, applied in order. Past the last phase the
/// last map stays in force.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureSchedule {
    phases: Vec<(usize, TemperatureMap)>,
}

impl TemperatureSchedule {
    pub fn new(phases: Vec<(usize, TemperatureMap)>) -> Result<Self> {
        if phases.is_empty() {
            return invalid("schedule needs at least one phase");
        }
        if phases.iter().any(|(s, _)| *s == 0) {
            return invalid("schedule phase lengths must be positive");
        }
        let n = phases[0].1.len();
        if phases.iter().any(|(_, m)| m.len() != n) {
            return invalid("schedule phases disagree on group count");
        }
        Ok(Self { phases })
    }

    pub fn constant(temps: TemperatureMap, steps: usize) -> Self {
        Self {
            phases: vec![(steps.max(1), temps)],
        }
    }

    /// Trains `warm_steps` under `warm`, then the rest of `total_steps` under
    /// `target`.
    pub fn warmup(
        warm: TemperatureMap,
        warm_steps: usize,
        target: TemperatureMap,
        total_steps: usize,
    ) -> Result<Self> {
        if warm_steps >= total_steps {
            return invalid("warm-up must be shorter than the total budget");
        }
        Self::new(vec![(warm_steps, warm), (total_steps - warm_steps, target)])
    }

    pub fn phases(&self) -> &[(usize, TemperatureMap)] {
        &self.phases
    }

    pub fn total_steps(&self) -> usize {
        self.phases.iter().map(|(s, _)| s).sum()
    }

    pub fn n_groups(&self) -> usize {
        self.phases[0].1.len()
    }

    pub fn at(&self, step: usize) -> &TemperatureMap {
        let mut end = 0;
        for (len, temps) in &self.phases {
            end += len;
            if step < end {
                return temps;
            }
        }
        &self.phases.last().expect("non-empty").1
    }

    pub fn last(&self) -> &TemperatureMap {
        &self.phases.last().expect("non-empty").1
    }
}

/// Value and gradient of an exponential-family loss.
///
/// `grad_over_loss` is `grad / loss` evaluated in the log domain, so it stays
/// finite after `loss` underflows.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    pub log_loss: f64,
    pub grad: Vec<f64>,
    pub grad_over_loss: Vec<f64>,
    /// Number of exponents clamped at [`EXPONENT_CLAMP`].
    pub clamped: usize,
}

fn exp_loss_core(q: &[f64], y: &[f64], scale: &[f64], log_w: &[f64]) -> LossEval {
    let n = q.len();
    let mut clamped = 0;
    let t: Vec<f64> = (0..n)
        .map(|i| {
            let e = -y[i] * q[i] * scale[i];
            if e > EXPONENT_CLAMP {
                clamped += 1;
                EXPONENT_CLAMP
            } else {
                e
            }
        })
        .collect();
    if clamped > 0 {
        log::warn!("{clamped} exponents clamped at {EXPONENT_CLAMP}; training is likely diverging");
    }
    let shifted: Vec<f64> = t.iter().zip(log_w).map(|(a, b)| a + b).collect();
    let lse = logsumexp(&shifted);
    let log_loss = lse - (n as f64).ln();
    let loss = log_loss.exp();
    let mut grad = Vec::with_capacity(n);
    let mut grad_over_loss = Vec::with_capacity(n);
    for i in 0..n {
        let c = -y[i] * scale[i];
        grad.push(c * shifted[i].exp() / n as f64);
        grad_over_loss.push(c * (shifted[i] - lse).exp());
    }
    LossEval {
        loss,
        log_loss,
        grad,
        grad_over_loss,
        clamped,
    }
}

fn check_lengths(q: &[f64], y: &[f64], groups: &[usize], n_groups: usize) -> Result<()> {
    if q.len() != y.len() || q.len() != groups.len() {
        return invalid(format!(
            "length mismatch: {} outputs, {} labels, {} groups",
            q.len(),
            y.len(),
            groups.len()
        ));
    }
    if q.is_empty() {
        return invalid("empty batch");
    }
    if let Some(&g) = groups.iter().find(|&&g| g >= n_groups) {
        return invalid(format!("group {g} has no temperature/weight"));
    }
    Ok(())
}

/// `(1/n) Σ exp(-y_i q_i f[g_i])`.
pub fn it_exp_loss(
    q: &[f64],
    y: &[f64],
    groups: &[usize],
    temps: &TemperatureMap,
) -> Result<LossEval> {
    check_lengths(q, y, groups, temps.len())?;
    let scale: Vec<f64> = groups.iter().map(|&g| temps.get(g)).collect();
    let log_w = vec![0.0; q.len()];
    Ok(exp_loss_core(q, y, &scale, &log_w))
}

/// `(1/n) Σ w[g_i] exp(-y_i q_i)`.
pub fn iw_exp_loss(q: &[f64], y: &[f64], groups: &[usize], weights: &[f64]) -> Result<LossEval> {
    check_lengths(q, y, groups, weights.len())?;
    if let Some(g) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
        return invalid(format!("weight w[{g}] must be finite and > 0"));
    }
    let scale = vec![1.0; q.len()];
    let log_w: Vec<f64> = groups.iter().map(|&g| weights[g].ln()).collect();
    Ok(exp_loss_core(q, y, &scale, &log_w))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpmVariant {
    /// Plain cross-entropy, logits `w_j·h`.
    Vanilla,
    /// Temperature on features, logits `λ_k w_j·h` for an example of class k.
    ItH,
    /// Temperature on the classifier, logits `λ_j w_j·h`.
    ItW,
}

impl LpmVariant {
    pub fn name(self) -> &'static str {
        match self {
            LpmVariant::Vanilla => "vanilla",
            LpmVariant::ItH => "it_h",
            LpmVariant::ItW => "it_w",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Self::Vanilla),
            "it_h" => Ok(Self::ItH),
            "it_w" => Ok(Self::ItW),
            _ => Err(Error::Parse(format!("unknown variant {s:?}"))),
        }
    }
}

/// Last-layer features of the layer-peeled model.
#[derive(Debug, Clone, PartialEq)]
pub enum PeeledFeatures {
    /// One `n_k × d` block per class.
    Full(Vec<Array2<f64>>),
    /// Row k stands for `n_k` identical class-k features.
    Collapsed(Array2<f64>),
}

impl PeeledFeatures {
    pub fn zeros_like(&self) -> Self {
        match self {
            PeeledFeatures::Full(blocks) => {
                PeeledFeatures::Full(blocks.iter().map(|b| Array2::zeros(b.raw_dim())).collect())
            }
            PeeledFeatures::Collapsed(h) => PeeledFeatures::Collapsed(Array2::zeros(h.raw_dim())),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            PeeledFeatures::Full(blocks) => blocks.first().map_or(0, |b| b.ncols()),
            PeeledFeatures::Collapsed(h) => h.ncols(),
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            PeeledFeatures::Full(blocks) => blocks.len(),
            PeeledFeatures::Collapsed(h) => h.nrows(),
        }
    }

    fn is_standard(&self) -> bool {
        match self {
            PeeledFeatures::Full(blocks) => blocks.iter().all(|b| b.is_standard_layout()),
            PeeledFeatures::Collapsed(h) => h.is_standard_layout(),
        }
    }

    /// `(class, row, multiplicity)` for every stored feature.
    fn items(&self, counts: &[usize]) -> Vec<(usize, usize, f64)> {
        match self {
            PeeledFeatures::Full(blocks) => blocks
                .iter()
                .enumerate()
                .flat_map(|(k, b)| (0..b.nrows()).map(move |i| (k, i, 1.0)))
                .collect(),
            PeeledFeatures::Collapsed(h) => (0..h.nrows()).map(|k| (k, 0, counts[k] as f64)).collect(),
        }
    }

    /// Feature row `i` of class `k` (row `k` in collapsed mode).
    pub fn feature(&self, k: usize, i: usize) -> &[f64] {
        let d = self.dim();
        match self {
            PeeledFeatures::Full(blocks) => &blocks[k].as_slice().expect("standard layout")[i * d..(i + 1) * d],
            PeeledFeatures::Collapsed(h) => &h.as_slice().expect("standard layout")[k * d..(k + 1) * d],
        }
    }

    pub fn feature_mut(&mut self, k: usize, i: usize) -> &mut [f64] {
        let d = self.dim();
        match self {
            PeeledFeatures::Full(blocks) => {
                &mut blocks[k].as_slice_mut().expect("standard layout")[i * d..(i + 1) * d]
            }
            PeeledFeatures::Collapsed(h) => &mut h.as_slice_mut().expect("standard layout")[k * d..(k + 1) * d],
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        match self {
            PeeledFeatures::Full(blocks) => {
                PeeledFeatures::Full(blocks.iter().map(|b| b * c).collect())
            }
            PeeledFeatures::Collapsed(h) => PeeledFeatures::Collapsed(h * c),
        }
    }
}

/// Layer-peeled loss value with raw and loss-normalized gradients.
#[derive(Debug, Clone)]
pub struct LpmLoss {
    pub loss: f64,
    pub log_loss: f64,
    pub grad_w: Array2<f64>,
    pub grad_h: PeeledFeatures,
    pub ngrad_w: Array2<f64>,
    pub ngrad_h: PeeledFeatures,
}

/// Summed cross-entropy `-Σ_k Σ_i log softmax_k(logits)` under `variant`.
///
/// In collapsed mode row k of `h` is counted `counts[k]` times. `temps` is
/// ignored for [`LpmVariant::Vanilla`].
pub fn ulpm_loss(
    variant: LpmVariant,
    w: &Array2<f64>,
    h: &PeeledFeatures,
    counts: &[usize],
    temps: &[f64],
) -> Result<LpmLoss> {
    let k_classes = w.nrows();
    let d = w.ncols();
    if h.n_classes() != k_classes || counts.len() != k_classes {
        return invalid("W, H and counts disagree on the class count");
    }
    if h.dim() != d {
        return invalid(format!("feature dim {} != classifier dim {d}", h.dim()));
    }
    if let PeeledFeatures::Full(blocks) = h {
        if blocks.iter().zip(counts).any(|(b, &c)| b.nrows() != c) {
            return invalid("full-mode blocks must have counts[k] rows");
        }
    }
    if variant != LpmVariant::Vanilla {
        if temps.len() != k_classes {
            return invalid("one temperature per class required");
        }
        if temps.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return invalid("temperatures must be finite and > 0");
        }
    }
    let coef = |k: usize, j: usize| match variant {
        LpmVariant::Vanilla => 1.0,
        LpmVariant::ItH => temps[k],
        LpmVariant::ItW => temps[j],
    };

    if !w.is_standard_layout() || !h.is_standard() {
        return invalid("W and H must be in standard (row-major) layout");
    }
    let wdata = w.as_slice().expect("standard layout");
    let w_row = |j: usize| &wdata[j * d..(j + 1) * d];

    let items = h.items(counts);
    let kc = k_classes;
    let mut diffs = vec![0.0; items.len() * kc];
    let mut sp = vec![0.0; items.len()];
    let mut log_terms = vec![0.0; items.len()];
    let mut z = vec![0.0; kc];
    for (t, &(k, i, m)) in items.iter().enumerate() {
        let hv = h.feature(k, i);
        for (j, zj) in z.iter_mut().enumerate() {
            *zj = coef(k, j) * dot(w_row(j), hv);
        }
        let dt = &mut diffs[t * kc..(t + 1) * kc];
        let mut mx = f64::NEG_INFINITY;
        for j in 0..kc {
            dt[j] = z[j] - z[k];
            if j != k {
                mx = mx.max(dt[j]);
            }
        }
        let a = if mx == f64::NEG_INFINITY {
            mx
        } else {
            let s: f64 = (0..kc).filter(|&j| j != k).map(|j| (dt[j] - mx).exp()).sum();
            mx + s.ln()
        };
        sp[t] = softplus(a);
        log_terms[t] = m.ln() + log_softplus(a);
    }
    let log_loss = logsumexp(&log_terms);
    let loss = log_loss.exp();

    let mut ngrad_w = Array2::<f64>::zeros((k_classes, d));
    let mut ngrad_h = h.zeros_like();
    let mut gz = vec![0.0; kc];
    {
        let gw_data = ngrad_w.as_slice_mut().expect("standard layout");
        for (t, &(k, i, m)) in items.iter().enumerate() {
            let dt = &diffs[t * kc..(t + 1) * kc];
            let base = m.ln() - sp[t] - log_loss;
            let mut own = 0.0;
            for j in 0..kc {
                if j != k {
                    gz[j] = (base + dt[j]).exp();
                    own += gz[j];
                }
            }
            gz[k] = -own;
            let hv = h.feature(k, i);
            let gh = ngrad_h.feature_mut(k, i);
            for j in 0..kc {
                let c = gz[j] * coef(k, j);
                if c == 0.0 {
                    continue;
                }
                let wj = w_row(j);
                let gwj = &mut gw_data[j * d..(j + 1) * d];
                for q in 0..d {
                    gwj[q] += c * hv[q];
                    gh[q] += c * wj[q];
                }
            }
        }
    }
    if !log_loss.is_finite() && log_loss != f64::NEG_INFINITY {
        return Err(Error::NonFinite("layer-peeled loss"));
    }
    let grad_w = &ngrad_w * loss;
    let grad_h = ngrad_h.scaled(loss);
    Ok(LpmLoss {
        loss,
        log_loss,
        grad_w,
        grad_h,
        ngrad_w,
        ngrad_h,
    })
}

pub fn ulpm_ce_loss(w: &Array2<f64>, h: &PeeledFeatures, counts: &[usize]) -> Result<LpmLoss> {
    ulpm_loss(LpmVariant::Vanilla, w, h, counts, &[])
}

pub fn it_h_loss(
    w: &Array2<f64>,
    h: &PeeledFeatures,
    counts: &[usize],
    temps: &[f64],
) -> Result<LpmLoss> {
    ulpm_loss(LpmVariant::ItH, w, h, counts, temps)
}

pub fn it_w_loss(
    w: &Array2<f64>,
    h: &PeeledFeatures,
    counts: &[usize],
    temps: &[f64],
) -> Result<LpmLoss> {
    ulpm_loss(LpmVariant::ItW, w, h, counts, temps)
}

fn check_counts(counts: &[usize]) -> Result<usize> {
    if counts.is_empty() || counts.contains(&0) {
        return invalid("counts must be non-empty and positive");
    }
    Ok(*counts.iter().max().expect("non-empty"))
}

/// `f[g] = sqrt(n_g / max n)`.
pub fn sqrt_rule(counts: &[usize]) -> Result<TemperatureMap> {
    gamma_rule(counts, 0.5)
}

/// `f[g] = (n_g / max n)^γ`.
pub fn gamma_rule(counts: &[usize], gamma: f64) -> Result<TemperatureMap> {
    let max = check_counts(counts)? as f64;
    if !(0.0..=1.0).contains(&gamma) {
        return invalid(format!("gamma {gamma} outside [0, 1]"));
    }
    TemperatureMap::new(
        counts
            .iter()
            .map(|&c| if gamma == 0.0 { 1.0 } else { (c as f64 / max).powf(gamma) })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn it_exp_examples() {
        let t = TemperatureMap::new(vec![0.5]).unwrap();
        let e = it_exp_loss(&[2.0], &[1.0], &[0], &t).unwrap();
        assert!(close(e.loss, (-1.0f64).exp(), 1e-15));
        assert!(close(e.grad[0], -0.5 * (-1.0f64).exp(), 1e-15));
        assert!(close(e.grad_over_loss[0], -0.5, 1e-15));

        let t = TemperatureMap::new(vec![0.3, 7.0]).unwrap();
        let e = it_exp_loss(&[0.0, 0.0, 0.0], &[1.0, -1.0, 1.0], &[0, 1, 1], &t).unwrap();
        assert_eq!(e.loss, 1.0);
    }

    #[test]
    fn it_exp_unit_temps_is_erm() {
        let q = [0.3, -1.2, 2.0];
        let y = [1.0, 1.0, -1.0];
        let e = it_exp_loss(&q, &y, &[0, 1, 0], &TemperatureMap::uniform(2)).unwrap();
        let plain: f64 = q.iter().zip(&y).map(|(q, y)| (-q * y).exp()).sum::<f64>() / 3.0;
        assert!(close(e.loss, plain, 1e-15));
    }

    #[test]
    fn it_exp_clamps_large_exponents() {
        let t = TemperatureMap::uniform(1);
        let e = it_exp_loss(&[-100.0, 0.0], &[1.0, 1.0], &[0, 0], &t).unwrap();
        assert_eq!(e.clamped, 1);
        assert!(e.loss.is_finite());
        assert!(close(e.loss, (30f64.exp() + 1.0) / 2.0, 1e-14));
    }

    #[test]
    fn it_exp_log_domain_survives_underflow() {
        let t = TemperatureMap::uniform(1);
        let e = it_exp_loss(&[900.0, 1000.0], &[1.0, 1.0], &[0, 0], &t).unwrap();
        assert_eq!(e.loss, 0.0);
        assert!(close(e.log_loss, -900.0 + (1.0 + (-100f64).exp()).ln() - 2f64.ln(), 1e-12));
        assert!(close(e.grad_over_loss[0], -1.0 / (1.0 + (-100f64).exp()), 1e-12));
    }

    #[test]
    fn iw_examples() {
        let q = [0.5, -0.25];
        let y = [1.0, -1.0];
        let base = iw_exp_loss(&q, &y, &[0, 1], &[1.0, 1.0]).unwrap();
        let plain: f64 = ((-0.5f64).exp() + (-0.25f64).exp()) / 2.0;
        assert!(close(base.loss, plain, 1e-15));
        let doubled = iw_exp_loss(&q, &y, &[0, 1], &[2.0, 2.0]).unwrap();
        assert!(close(doubled.loss, 2.0 * base.loss, 1e-15));
        for i in 0..2 {
            assert!(close(doubled.grad[i], 2.0 * base.grad[i], 1e-15));
            assert!(close(doubled.grad_over_loss[i], base.grad_over_loss[i], 1e-14));
        }
        let w = iw_exp_loss(&q, &y, &[0, 1], &[1.0, 10.0]).unwrap();
        assert!(w.loss != base.loss);
        assert!(w.grad.iter().all(|g| *g < 0.0 || *g > 0.0));
        assert!(iw_exp_loss(&q, &y, &[0, 1], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn ulpm_zero_classifier() {
        let w = Array2::zeros((3, 3));
        let h = PeeledFeatures::Full(vec![
            Array2::ones((2, 3)),
            Array2::ones((4, 3)),
            Array2::ones((1, 3)),
        ]);
        let l = ulpm_ce_loss(&w, &h, &[2, 4, 1]).unwrap();
        assert!(close(l.loss, 7.0 * 3f64.ln(), 1e-14));
        let hc = PeeledFeatures::Collapsed(Array2::ones((3, 3)));
        let l = ulpm_ce_loss(&w, &hc, &[2, 4, 1]).unwrap();
        assert!(close(l.loss, 7.0 * 3f64.ln(), 1e-14));
    }

    #[test]
    fn ulpm_binary_scalar() {
        let c = 0.7;
        let w = array![[1.0, 0.0], [-1.0, 0.0]];
        let h = PeeledFeatures::Full(vec![array![[c, 0.0]], array![[-c, 0.0]]]);
        let l = ulpm_ce_loss(&w, &h, &[1, 1]).unwrap();
        let per_point = (1.0 + (-2.0 * c).exp()).ln();
        assert!(close(l.loss, 2.0 * per_point, 1e-14));
    }

    #[test]
    fn tempered_unit_reduces() {
        let w = array![[0.3, -0.2], [0.1, 0.5], [-0.4, 0.2]];
        let h = PeeledFeatures::Collapsed(array![[1.0, 0.2], [-0.3, 0.8], [0.5, -0.5]]);
        let counts = [3, 2, 1];
        let base = ulpm_ce_loss(&w, &h, &counts).unwrap();
        for v in [LpmVariant::ItH, LpmVariant::ItW] {
            let t = ulpm_loss(v, &w, &h, &counts, &[1.0; 3]).unwrap();
            assert!(close(t.loss, base.loss, 1e-15));
        }
    }

    #[test]
    fn it_h_zero_temperature_class() {
        let w = array![[0.3, -0.2], [0.1, 0.5]];
        let h = PeeledFeatures::Collapsed(array![[1.0, 0.2], [-0.3, 0.8]]);
        let tiny = it_h_loss(&w, &h, &[1, 1], &[1e-300, 1.0]).unwrap();
        let other = it_h_loss(&w, &PeeledFeatures::Collapsed(array![[0.0, 0.0], [-0.3, 0.8]]), &[1, 1], &[1.0, 1.0]).unwrap();
        assert!(close(tiny.loss, other.loss, 1e-14));
    }

    #[test]
    fn it_w_swap_symmetry() {
        let w = array![[1.0, 0.0], [0.0, 1.0]];
        let h = PeeledFeatures::Collapsed(array![[1.0, 0.0], [0.0, 1.0]]);
        let a = it_w_loss(&w, &h, &[1, 1], &[2.0, 0.5]).unwrap();
        let b = it_w_loss(&w, &h, &[1, 1], &[0.5, 2.0]).unwrap();
        assert!(close(a.loss, b.loss, 1e-15));
        let ga = a.grad_h.clone();
        let gb = b.grad_h.clone();
        if let (PeeledFeatures::Collapsed(ga), PeeledFeatures::Collapsed(gb)) = (ga, gb) {
            assert!(close(ga[[0, 0]], gb[[1, 1]], 1e-14));
            assert!(close(ga[[0, 1]], gb[[1, 0]], 1e-14));
        } else {
            unreachable!();
        }
    }

    #[test]
    fn rules() {
        assert_eq!(sqrt_rule(&[100, 100, 1, 1]).unwrap().values(), &[1.0, 1.0, 0.1, 0.1]);
        assert_eq!(sqrt_rule(&[5, 5, 5]).unwrap().values(), &[1.0; 3]);
        let t = sqrt_rule(&[400, 25]).unwrap();
        assert!(close(t.margin(1) / t.margin(0), 4.0, 1e-15));
        assert_eq!(gamma_rule(&[100, 3], 0.0).unwrap().values(), &[1.0, 1.0]);
        assert_eq!(gamma_rule(&[100, 1], 0.5).unwrap().values(), &[1.0, 0.1]);
        assert_eq!(gamma_rule(&[100, 10], 1.0).unwrap().values(), &[1.0, 0.1]);
        assert!(gamma_rule(&[100, 10], 1.5).is_err());
        assert!(sqrt_rule(&[3, 0]).is_err());
    }

    #[test]
    fn temperature_text_roundtrip() {
        let t = TemperatureMap::new(vec![1.0, 0.25, 0.1]).unwrap();
        let s = t.to_text();
        assert_eq!(s, "0=1\n1=0.25\n2=0.1\n");
        assert_eq!(TemperatureMap::from_text(&s).unwrap(), t);
        assert_eq!(TemperatureMap::from_text("1 = 2\n\n0=3").unwrap().values(), &[3.0, 2.0]);
        assert!(TemperatureMap::from_text("0=1\n0=2").is_err());
        assert!(TemperatureMap::from_text("0=1\n2=2").is_err());
        assert!(TemperatureMap::from_text("0=-1").is_err());
        assert!(TemperatureMap::from_text("zero=1").is_err());
    }

    #[test]
    fn schedule_lookup() {
        let warm = TemperatureMap::new(vec![1.0, 0.8]).unwrap();
        let target = TemperatureMap::new(vec![1.0, 0.1]).unwrap();
        let s = TemperatureSchedule::warmup(warm.clone(), 10, target.clone(), 30).unwrap();
        assert_eq!(s.total_steps(), 30);
        assert_eq!(s.at(0), &warm);
        assert_eq!(s.at(9), &warm);
        assert_eq!(s.at(10), &target);
        assert_eq!(s.at(1000), &target);
        assert!(TemperatureSchedule::new(vec![]).is_err());
        assert!(TemperatureSchedule::new(vec![(0, warm)]).is_err());
    }
}
