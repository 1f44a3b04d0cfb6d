//! Unconstrained layer-peeled model: gradient descent on the three
//! cross-entropy variants, last-layer geometry diagnostics, and direct
//! minimum-norm separation solvers on collapsed (per-class) features.

use std::io::Write;

use ndarray::{Array2, ArrayView2};

use crate::datagen::{normal, rng_from_seed};
use crate::error::{invalid, Error, Result};
use crate::losses::{ulpm_loss, LpmVariant, PeeledFeatures};
use crate::numeric::{bfgs, dot, norm};
use crate::svm::{solve_with_rhs, SvmOptions};
use crate::trainer::StepRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    /// One free feature per example.
    Full,
    /// One free feature per class, counted `n_k` times.
    Collapsed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerPeeledState {
    pub w: Array2<f64>,
    pub h: PeeledFeatures,
    pub counts: Vec<usize>,
    /// Per-class λ_k (ignored by the vanilla variant).
    pub temps: Vec<f64>,
    pub variant: LpmVariant,
}

/// Logit coefficient of class `j` for an example of class `k`.
fn logit_coef(variant: LpmVariant, temps: &[f64], k: usize, j: usize) -> f64 {
    match variant {
        LpmVariant::Vanilla => 1.0,
        LpmVariant::ItH => temps[k],
        LpmVariant::ItW => temps[j],
    }
}

impl LayerPeeledState {
    pub fn new(
        w: Array2<f64>,
        h: PeeledFeatures,
        counts: Vec<usize>,
        temps: Vec<f64>,
        variant: LpmVariant,
    ) -> Result<Self> {
        let k = w.nrows();
        if k < 2 {
            return invalid("need at least two classes");
        }
        if w.ncols() < k {
            return invalid(format!("feature dim {} < class count {k}", w.ncols()));
        }
        if counts.len() != k || counts.contains(&0) {
            return invalid("one positive count per class required");
        }
        if h.n_classes() != k || h.dim() != w.ncols() {
            return invalid("H shape does not match W");
        }
        if let PeeledFeatures::Full(blocks) = &h {
            if blocks.iter().zip(&counts).any(|(b, &c)| b.nrows() != c) {
                return invalid("full-mode blocks must have counts[k] rows");
            }
        }
        let temps = if variant == LpmVariant::Vanilla && temps.is_empty() {
            vec![1.0; k]
        } else {
            temps
        };
        if temps.len() != k || temps.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return invalid("one finite positive temperature per class required");
        }
        Ok(Self {
            w,
            h,
            counts,
            temps,
            variant,
        })
    }

    /// Gaussian init, entries `N(0, scale²/d)`.
    pub fn random(
        counts: &[usize],
        d: usize,
        variant: LpmVariant,
        temps: &[f64],
        mode: FeatureMode,
        scale: f64,
        seed: u64,
    ) -> Result<Self> {
        let k = counts.len();
        let mut rng = rng_from_seed(seed);
        let sd = scale / (d as f64).sqrt();
        let w = Array2::from_shape_fn((k, d), |_| sd * normal(&mut rng));
        let h = match mode {
            FeatureMode::Full => PeeledFeatures::Full(
                counts
                    .iter()
                    .map(|&c| Array2::from_shape_fn((c, d), |_| sd * normal(&mut rng)))
                    .collect(),
            ),
            FeatureMode::Collapsed => {
                PeeledFeatures::Collapsed(Array2::from_shape_fn((k, d), |_| sd * normal(&mut rng)))
            }
        };
        Self::new(w, h, counts.to_vec(), temps.to_vec(), variant)
    }

    pub fn k(&self) -> usize {
        self.w.nrows()
    }

    pub fn d(&self) -> usize {
        self.w.ncols()
    }

    /// Features as the logits see them: `λ_k h` for the feature-tempered
    /// variant, `h` otherwise.
    fn effective_scale(&self, k: usize) -> f64 {
        match self.variant {
            LpmVariant::ItH => self.temps[k],
            _ => 1.0,
        }
    }

    /// Effective class means, one row per class.
    pub fn class_means(&self) -> Array2<f64> {
        let (k, d) = (self.k(), self.d());
        let mut m = Array2::zeros((k, d));
        for c in 0..k {
            let s = self.effective_scale(c);
            match &self.h {
                PeeledFeatures::Full(blocks) => {
                    let n = blocks[c].nrows() as f64;
                    for row in blocks[c].rows() {
                        for t in 0..d {
                            m[[c, t]] += s * row[t] / n;
                        }
                    }
                }
                PeeledFeatures::Collapsed(h) => {
                    for t in 0..d {
                        m[[c, t]] = s * h[[c, t]];
                    }
                }
            }
        }
        m
    }

    /// `avg_k avg_i ||h_ki − h̄_k||² / avg_k ||h̄_k||²` on effective features.
    pub fn nc1(&self) -> f64 {
        let means = self.class_means();
        let k = self.k();
        let mut within = 0.0;
        if let PeeledFeatures::Full(blocks) = &self.h {
            for c in 0..k {
                let s = self.effective_scale(c);
                let mc = means.row(c);
                let n = blocks[c].nrows() as f64;
                within += blocks[c]
                    .rows()
                    .into_iter()
                    .map(|r| r.iter().zip(mc).map(|(a, b)| (s * a - b).powi(2)).sum::<f64>())
                    .sum::<f64>()
                    / n;
            }
        }
        let between: f64 = means.rows().into_iter().map(|r| r.dot(&r)).sum();
        if within == 0.0 {
            0.0
        } else {
            within / between
        }
    }

    /// `||W||² + Σ_k Σ_i ||h_ki||²`, with collapsed rows counted `n_k` times.
    pub fn param_norm_sq(&self) -> f64 {
        let w2: f64 = self.w.iter().map(|v| v * v).sum();
        let h2: f64 = match &self.h {
            PeeledFeatures::Full(blocks) => blocks.iter().flat_map(|b| b.iter()).map(|v| v * v).sum(),
            PeeledFeatures::Collapsed(h) => h
                .rows()
                .into_iter()
                .zip(&self.counts)
                .map(|(r, &c)| c as f64 * r.dot(&r))
                .sum(),
        };
        w2 + h2
    }

    /// `½||W||² + ½ Σ ||h||²` with multiplicities.
    pub fn objective(&self) -> f64 {
        0.5 * self.param_norm_sq()
    }

    /// Smallest constraint value `c_kj = (a_kk w_k − a_kj w_j)·h` over
    /// `j ≠ k` and all examples of class `k`.
    pub fn min_constraint(&self) -> f64 {
        let mut m = f64::INFINITY;
        self.for_each_constraint(|_, _, _, c| m = m.min(c));
        m
    }

    fn for_each_constraint(&self, mut f: impl FnMut(usize, usize, usize, f64)) {
        let k = self.k();
        let rows = |c: usize| match &self.h {
            PeeledFeatures::Full(blocks) => blocks[c].nrows(),
            PeeledFeatures::Collapsed(_) => 1,
        };
        for c in 0..k {
            for i in 0..rows(c) {
                let hv = self.h.feature(c, i);
                let own = logit_coef(self.variant, &self.temps, c, c) * dot(&self.w.row(c).to_vec(), hv);
                for j in 0..k {
                    if j != c {
                        let other = logit_coef(self.variant, &self.temps, c, j)
                            * dot(&self.w.row(j).to_vec(), hv);
                        f(c, i, j, own - other);
                    }
                }
            }
        }
    }
}

/// Simplex ETF: K unit rows in R^d with pairwise cosine `−1/(K−1)`.
pub fn simplex_etf(k: usize, d: usize) -> Result<Array2<f64>> {
    if k < 2 || d < k {
        return invalid("simplex ETF needs 2 <= K <= d");
    }
    let s = (k as f64 / (k as f64 - 1.0)).sqrt();
    Ok(Array2::from_shape_fn((k, d), |(i, j)| {
        if j >= k {
            0.0
        } else {
            s * (f64::from(u8::from(i == j)) - 1.0 / k as f64)
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairStats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl PairStats {
    fn from_values(v: &[f64]) -> Self {
        if v.is_empty() {
            return Self {
                min: f64::NAN,
                mean: f64::NAN,
                max: f64::NAN,
            };
        }
        Self {
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Geometry of class means and classifier rows. Classes `0..K/2` are the
/// majority index set, `K/2..K` the minority set.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryReport {
    pub nc1: f64,
    /// Cosines between class means centred by their unweighted average.
    pub mean_cos: Array2<f64>,
    pub clf_cos: Array2<f64>,
    pub mean_norms: Vec<f64>,
    pub clf_norms: Vec<f64>,
    /// `min` over minority pairs of `||w_k − w_k'||` / average row norm.
    pub minority_collapse: f64,
    /// Max over all pairs of `|cos − (−1/(K−1))|`.
    pub etf_dev: f64,
    pub all_pairs: PairStats,
    pub majority_pairs: PairStats,
    pub minority_pairs: PairStats,
}

fn cosine_matrix(v: ArrayView2<f64>) -> Array2<f64> {
    let k = v.nrows();
    let norms: Vec<f64> = v.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    Array2::from_shape_fn((k, k), |(i, j)| {
        (v.row(i).dot(&v.row(j)) / (norms[i] * norms[j])).clamp(-1.0, 1.0)
    })
}

fn pairs(range: std::ops::Range<usize>) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in range.clone() {
        for j in (i + 1)..range.end {
            out.push((i, j));
        }
    }
    out
}

/// Geometry from classifier rows, class means and a precomputed nc1.
pub fn geometry_from_parts(w: ArrayView2<f64>, means: ArrayView2<f64>, nc1: f64) -> GeometryReport {
    let k = means.nrows();
    let d = means.ncols();
    let mut centred = means.to_owned();
    for t in 0..d {
        let mu = means.column(t).sum() / k as f64;
        centred.column_mut(t).mapv_inplace(|v| v - mu);
    }
    let mean_cos = cosine_matrix(centred.view());
    let clf_cos = cosine_matrix(w);
    let mean_norms = centred.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let clf_norms: Vec<f64> = w.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let half = k / 2;
    let collect = |ps: &[(usize, usize)]| PairStats::from_values(&ps.iter().map(|&(i, j)| mean_cos[[i, j]]).collect::<Vec<_>>());
    let all = pairs(0..k);
    let maj = pairs(0..half);
    let min = pairs(half..k);
    let avg_row = clf_norms.iter().sum::<f64>() / k as f64;
    let minority_collapse = min
        .iter()
        .map(|&(i, j)| {
            let diff: f64 = w.row(i).iter().zip(w.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
            diff.sqrt() / avg_row
        })
        .fold(f64::NAN, f64::min);
    let target = -1.0 / (k as f64 - 1.0);
    let etf_dev = all
        .iter()
        .map(|&(i, j)| (mean_cos[[i, j]] - target).abs())
        .fold(0.0, f64::max);
    GeometryReport {
        nc1,
        all_pairs: collect(&all),
        majority_pairs: collect(&maj),
        minority_pairs: collect(&min),
        mean_cos,
        clf_cos,
        mean_norms,
        clf_norms,
        minority_collapse,
        etf_dev,
    }
}

pub fn geometry_report(state: &LayerPeeledState) -> GeometryReport {
    geometry_from_parts(state.w.view(), state.class_means().view(), state.nc1())
}

impl GeometryReport {
    pub fn csv_header() -> Vec<&'static str> {
        vec![
            "nc1",
            "all_min_cos",
            "all_mean_cos",
            "all_max_cos",
            "maj_min_cos",
            "maj_mean_cos",
            "maj_max_cos",
            "min_min_cos",
            "min_mean_cos",
            "min_max_cos",
            "minority_collapse",
            "etf_dev",
        ]
    }

    pub fn csv_fields(&self) -> Vec<String> {
        let mut v = vec![self.nc1];
        for p in [self.all_pairs, self.majority_pairs, self.minority_pairs] {
            v.extend([p.min, p.mean, p.max]);
        }
        v.push(self.minority_collapse);
        v.push(self.etf_dev);
        v.iter().map(|x| x.to_string()).collect()
    }
}

/// Writes `step` followed by [`GeometryReport::csv_header`].
pub fn write_geometry_csv<W: Write>(trace: &[(usize, GeometryReport)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["step"];
    header.extend(GeometryReport::csv_header());
    w.write_record(&header)?;
    for (step, rep) in trace {
        let mut rec = vec![step.to_string()];
        rec.extend(rep.csv_fields());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// λ_k = √n_k.
pub fn sqrt_temperatures(counts: &[usize]) -> Vec<f64> {
    counts.iter().map(|&c| (c as f64).sqrt()).collect()
}

#[derive(Debug, Clone)]
pub struct LpmConfig {
    pub counts: Vec<usize>,
    pub d: usize,
    pub variant: LpmVariant,
    pub temps: Vec<f64>,
    pub mode: FeatureMode,
    pub steps: usize,
    pub step_rule: StepRule,
    pub eta: f64,
    pub log_every: usize,
    pub init_scale: f64,
    pub patience: usize,
    pub seed: u64,
}

impl LpmConfig {
    /// Full mode, loss-normalized steps, `d = K`.
    pub fn new(counts: Vec<usize>, variant: LpmVariant, temps: Vec<f64>) -> Self {
        let d = counts.len();
        Self {
            counts,
            d,
            variant,
            temps,
            mode: FeatureMode::Full,
            steps: 100_000,
            step_rule: StepRule::LossNormalized,
            eta: 20.0,
            log_every: 1000,
            init_scale: 1.0,
            patience: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LpmRun {
    pub state: LayerPeeledState,
    pub trace: Vec<(usize, GeometryReport)>,
    pub log_losses: Vec<(usize, f64)>,
    /// First step at which every example is classified correctly.
    pub separated_step: Option<usize>,
    pub report: GeometryReport,
}

/// Gradient descent on the selected layer-peeled loss.
///
/// With [`StepRule::LossNormalized`] each step is `η ∇ℓ / (ℓ ||θ||²)`, with
/// `||θ||²` the multiplicity-weighted parameter norm. In collapsed mode the
/// feature gradient of class k is divided by `n_k`, matching the per-example
/// dynamics of the full model.
pub fn optimize_lpm(cfg: &LpmConfig) -> Result<LpmRun> {
    if cfg.d < cfg.counts.len() {
        return invalid("need d >= K");
    }
    if !(cfg.eta > 0.0) || cfg.log_every == 0 {
        return invalid("step size and log cadence must be positive");
    }
    let mut state = LayerPeeledState::random(
        &cfg.counts,
        cfg.d,
        cfg.variant,
        &cfg.temps,
        cfg.mode,
        cfg.init_scale,
        cfg.seed,
    )?;
    let mut trace = Vec::new();
    let mut log_losses = Vec::new();
    let mut separated_step = None;
    let mut prev = f64::INFINITY;
    let mut rising = 0usize;
    for step in 0..=cfg.steps {
        let l = ulpm_loss(state.variant, &state.w, &state.h, &state.counts, &state.temps)?;
        if l.log_loss.is_nan() {
            return Err(Error::NonFinite("layer-peeled loss"));
        }
        let logging = step % cfg.log_every == 0 || step == cfg.steps;
        if separated_step.is_none() && (logging || step % 100 == 0) && state.min_constraint() > 0.0 {
            separated_step = Some(step);
        }
        if logging {
            trace.push((step, geometry_report(&state)));
            log_losses.push((step, l.log_loss));
        }
        if l.log_loss > prev {
            rising += 1;
            if rising >= cfg.patience {
                return Err(Error::Divergence { step, loss: l.loss });
            }
        } else {
            rising = 0;
        }
        prev = l.log_loss;
        if step == cfg.steps {
            break;
        }
        let (gw, mut gh, scale) = match cfg.step_rule {
            StepRule::Constant => (l.grad_w, l.grad_h, cfg.eta),
            StepRule::LossNormalized => (l.ngrad_w, l.ngrad_h, cfg.eta / state.param_norm_sq().max(1e-300)),
        };
        if let PeeledFeatures::Collapsed(g) = &mut gh {
            for (mut row, &c) in g.rows_mut().into_iter().zip(&state.counts) {
                row /= c as f64;
            }
        }
        state.w.scaled_add(-scale, &gw);
        match (&mut state.h, &gh) {
            (PeeledFeatures::Full(hb), PeeledFeatures::Full(gb)) => {
                for (h, g) in hb.iter_mut().zip(gb) {
                    h.scaled_add(-scale, g);
                }
            }
            (PeeledFeatures::Collapsed(h), PeeledFeatures::Collapsed(g)) => h.scaled_add(-scale, g),
            _ => unreachable!("gradient has the shape of H"),
        }
        if state.w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("classifier"));
        }
    }
    let report = geometry_report(&state);
    Ok(LpmRun {
        state,
        trace,
        log_losses,
        separated_step,
        report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CosinePrediction {
    Cosine(f64),
    /// Minority classifier rows merge (distance → 0).
    Collapse,
}

/// Limiting minority-pair cosine: `−1/(K−1)` for feature tempering,
/// `−1/(K/2−1)` for classifier tempering, collapse for the vanilla loss.
pub fn predicted_minority_cosine(k: usize, variant: LpmVariant) -> Result<CosinePrediction> {
    if k < 2 {
        return invalid("need K >= 2");
    }
    match variant {
        LpmVariant::Vanilla => Ok(CosinePrediction::Collapse),
        LpmVariant::ItH => Ok(CosinePrediction::Cosine(-1.0 / (k as f64 - 1.0))),
        LpmVariant::ItW => {
            if k % 2 != 0 || k / 2 < 2 {
                return invalid("classifier tempering prediction needs even K >= 4");
            }
            Ok(CosinePrediction::Cosine(-1.0 / (k as f64 / 2.0 - 1.0)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MinNormMethod {
    /// Norm plus squared-hinge penalty, penalty weight ×10 per stage.
    Penalized,
    /// Alternate exact convex solves in W given H and H given W.
    Alternating,
}

#[derive(Debug, Clone)]
pub struct MinNormSolution {
    pub state: LayerPeeledState,
    pub objective: f64,
    /// `max(0, 1 − min c_kj)`.
    pub max_violation: f64,
    /// Relative norm of the Lagrangian gradient at the recovered multipliers.
    pub stationarity: f64,
    pub iterations: usize,
}

/// Collapsed-mode problem data: variables are `vec(W)` then `vec(H)`.
struct Collapsed<'a> {
    k: usize,
    d: usize,
    counts: &'a [usize],
    temps: &'a [f64],
    variant: LpmVariant,
}

impl Collapsed<'_> {
    fn coef(&self, k: usize, j: usize) -> f64 {
        logit_coef(self.variant, self.temps, k, j)
    }

    fn split<'x>(&self, x: &'x [f64]) -> (&'x [f64], &'x [f64]) {
        x.split_at(self.k * self.d)
    }

    /// Values of `c_kj` indexed `[k * K + j]` (diagonal unused).
    fn constraints(&self, x: &[f64]) -> Vec<f64> {
        let (w, h) = self.split(x);
        let d = self.d;
        let mut c = vec![f64::INFINITY; self.k * self.k];
        for k in 0..self.k {
            let hk = &h[k * d..(k + 1) * d];
            let own = self.coef(k, k) * dot(&w[k * d..(k + 1) * d], hk);
            for j in 0..self.k {
                if j != k {
                    c[k * self.k + j] = own - self.coef(k, j) * dot(&w[j * d..(j + 1) * d], hk);
                }
            }
        }
        c
    }

    fn objective_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (w, h) = self.split(x);
        let d = self.d;
        let mut g = vec![0.0; x.len()];
        let mut f = 0.5 * dot(w, w);
        g[..w.len()].copy_from_slice(w);
        for k in 0..self.k {
            let n = self.counts[k] as f64;
            let hk = &h[k * d..(k + 1) * d];
            f += 0.5 * n * dot(hk, hk);
            for t in 0..d {
                g[w.len() + k * d + t] = n * hk[t];
            }
        }
        (f, g)
    }

    /// Adds `μ ∇c_kj` to `g`.
    fn add_constraint_grad(&self, x: &[f64], k: usize, j: usize, mu: f64, g: &mut [f64]) {
        let (w, h) = self.split(x);
        let d = self.d;
        let off = w.len();
        let (ak, aj) = (self.coef(k, k), self.coef(k, j));
        for t in 0..d {
            let hk = h[k * d + t];
            g[k * d + t] += mu * ak * hk;
            g[j * d + t] -= mu * aj * hk;
            g[off + k * d + t] += mu * (ak * w[k * d + t] - aj * w[j * d + t]);
        }
    }

    fn penalized(&self, x: &[f64], rho: f64) -> (f64, Vec<f64>) {
        let (mut f, mut g) = self.objective_grad(x);
        let c = self.constraints(x);
        for k in 0..self.k {
            for j in 0..self.k {
                if j == k {
                    continue;
                }
                let v = 1.0 - c[k * self.k + j];
                if v > 0.0 {
                    f += 0.5 * rho * v * v;
                    self.add_constraint_grad(x, k, j, -rho * v, &mut g);
                }
            }
        }
        (f, g)
    }

    /// `||∇obj − Σ μ ∇c|| / ||∇obj||`.
    fn stationarity(&self, x: &[f64], mu: &[f64]) -> f64 {
        let (_, g0) = self.objective_grad(x);
        let mut g = g0.clone();
        for k in 0..self.k {
            for j in 0..self.k {
                if j != k && mu[k * self.k + j] != 0.0 {
                    self.add_constraint_grad(x, k, j, -mu[k * self.k + j], &mut g);
                }
            }
        }
        norm(&g) / norm(&g0).max(1e-300)
    }

    fn to_state(&self, x: &[f64]) -> Result<LayerPeeledState> {
        let (w, h) = self.split(x);
        LayerPeeledState::new(
            Array2::from_shape_vec((self.k, self.d), w.to_vec()).expect("shape"),
            PeeledFeatures::Collapsed(Array2::from_shape_vec((self.k, self.d), h.to_vec()).expect("shape")),
            self.counts.to_vec(),
            self.temps.to_vec(),
            self.variant,
        )
    }
}

/// Minimum of `½||W||² + ½ Σ_k n_k ||h_k||²` subject to
/// `(a_kk w_k − a_kj w_j)·h_k ≥ 1` for all `j ≠ k`, where `a_kj` are the
/// variant's logit coefficients. Nonconvex; returns a local solution.
pub fn solve_min_norm_separation(
    counts: &[usize],
    d: usize,
    variant: LpmVariant,
    temps: &[f64],
    method: MinNormMethod,
    tol: f64,
    seed: u64,
) -> Result<MinNormSolution> {
    let k = counts.len();
    let temps_v: Vec<f64> = if variant == LpmVariant::Vanilla && temps.is_empty() {
        vec![1.0; k]
    } else {
        temps.to_vec()
    };
    let init = LayerPeeledState::random(counts, d, variant, &temps_v, FeatureMode::Collapsed, 1.0, seed)?;
    let prob = Collapsed {
        k,
        d,
        counts,
        temps: &temps_v,
        variant,
    };
    let mut x: Vec<f64> = init.w.iter().copied().collect();
    if let PeeledFeatures::Collapsed(h) = &init.h {
        x.extend(h.iter().copied());
    }
    let (x, mu, iterations) = match method {
        MinNormMethod::Penalized => penalized_solve(&prob, x, tol),
        MinNormMethod::Alternating => alternating_solve(&prob, x, tol)?,
    };
    let c = prob.constraints(&x);
    let min_c = c.iter().copied().fold(f64::INFINITY, f64::min);
    let max_violation = (1.0 - min_c).max(0.0);
    if max_violation > tol.max(1e-6) * 10.0 {
        return Err(Error::Infeasible {
            violating: (0..c.len()).filter(|&i| c[i] < 1.0 - tol).collect(),
        });
    }
    let stationarity = prob.stationarity(&x, &mu);
    let state = prob.to_state(&x)?;
    Ok(MinNormSolution {
        objective: state.objective(),
        state,
        max_violation,
        stationarity,
        iterations,
    })
}

fn penalized_solve(prob: &Collapsed, mut x: Vec<f64>, tol: f64) -> (Vec<f64>, Vec<f64>, usize) {
    let mut rho = 10.0;
    let mut iterations = 0;
    for _ in 0..5 {
        let r = rho;
        let (xn, _) = bfgs(|v| prob.penalized(v, r), x, tol.min(1e-8), 20_000);
        x = xn;
        iterations += 1;
        rho *= 10.0;
    }
    let rho_last = rho / 10.0;
    let c = prob.constraints(&x);
    let mu: Vec<f64> = c.iter().map(|&v| if v.is_finite() { rho_last * (1.0 - v).max(0.0) } else { 0.0 }).collect();
    let min_c = c.iter().copied().fold(f64::INFINITY, f64::min);
    if min_c > 0.0 && min_c < 1.0 {
        let s = (1.0 / min_c).sqrt();
        x.iter_mut().for_each(|v| *v *= s);
    }
    (x, mu, iterations)
}

/// `min ½||w||² + (ρ/2) Σ (1 − a_i·w)_+²` by semismooth Newton on the active
/// set, falling back to a hard-margin solve on rows augmented with `e_i/√ρ`.
/// Returns `w` and the multipliers `ρ(1 − a_i·w)_+`.
fn squared_hinge_svm(rows: &Array2<f64>, rho: f64, warm: &[f64], opts: &SvmOptions) -> Result<(Vec<f64>, Vec<f64>)> {
    let (m, p) = rows.dim();
    let mut w = warm.to_vec();
    let row = |i: usize| rows.row(i).to_vec();
    let mut last: Option<Vec<bool>> = None;
    for _ in 0..50 {
        let active: Vec<bool> = (0..m).map(|i| dot(&row(i), &w) < 1.0).collect();
        if last.as_ref() == Some(&active) {
            let alpha = (0..m).map(|i| rho * (1.0 - dot(&row(i), &w)).max(0.0)).collect();
            return Ok((w, alpha));
        }
        let mut h = nalgebra::DMatrix::<f64>::identity(p, p);
        let mut g = nalgebra::DVector::<f64>::zeros(p);
        for i in (0..m).filter(|&i| active[i]) {
            let a = row(i);
            for r in 0..p {
                g[r] += rho * a[r];
                for c in 0..p {
                    h[(r, c)] += rho * a[r] * a[c];
                }
            }
        }
        match h.cholesky() {
            Some(ch) => w = ch.solve(&g).iter().copied().collect(),
            None => break,
        }
        last = Some(active);
    }
    let inv = 1.0 / rho.sqrt();
    let aug = Array2::from_shape_fn((m, p + m), |(i, j)| {
        if j < p {
            rows[[i, j]]
        } else if j - p == i {
            inv
        } else {
            0.0
        }
    });
    let ones = vec![1.0; m];
    let sol = solve_with_rhs(aug.view(), &ones, &ones, opts).or_else(|e| match e {
        Error::NotConverged { best, .. } => Ok(*best),
        other => Err(other),
    })?;
    Ok((sol.w[..p].to_vec(), sol.alpha))
}

/// Block coordinate descent on the squared-hinge penalized objective, each
/// block solved exactly; penalty weight ×10 per stage.
fn alternating_solve(prob: &Collapsed, mut x: Vec<f64>, tol: f64) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let (k, d) = (prob.k, prob.d);
    let opts = SvmOptions {
        tol: 1e-11,
        ..SvmOptions::default()
    };
    let nw = k * d;
    let mut mu = vec![0.0; k * k];
    let mut iterations = 0;
    let mut rho = 10.0;
    for _ in 0..5 {
        let mut prev = f64::INFINITY;
        for _ in 0..100_000 {
            iterations += 1;
            let mut rows = Vec::new();
            let mut index = Vec::new();
            for c in 0..k {
                for j in (0..k).filter(|&j| j != c) {
                    let mut a = vec![0.0; nw];
                    for t in 0..d {
                        let h = x[nw + c * d + t];
                        a[c * d + t] += prob.coef(c, c) * h;
                        a[j * d + t] -= prob.coef(c, j) * h;
                    }
                    rows.extend(a);
                    index.push(c * k + j);
                }
            }
            let a = Array2::from_shape_vec((index.len(), nw), rows).expect("shape");
            let (w, alpha) = squared_hinge_svm(&a, rho, &x[..nw], &opts)?;
            x[..nw].copy_from_slice(&w);
            for (r, &idx) in index.iter().enumerate() {
                mu[idx] = alpha[r];
            }
            for c in 0..k {
                let sq = (prob.counts[c] as f64).sqrt();
                let mut rows = Vec::new();
                for j in (0..k).filter(|&j| j != c) {
                    for t in 0..d {
                        rows.push((prob.coef(c, c) * x[c * d + t] - prob.coef(c, j) * x[j * d + t]) / sq);
                    }
                }
                let b = Array2::from_shape_vec((k - 1, d), rows).expect("shape");
                let warm: Vec<f64> = x[nw + c * d..nw + (c + 1) * d].iter().map(|v| v * sq).collect();
                let (g, _) = squared_hinge_svm(&b, rho, &warm, &opts)?;
                for t in 0..d {
                    x[nw + c * d + t] = g[t] / sq;
                }
            }
            let f = prob.penalized(&x, rho).0;
            if prev - f <= tol * f {
                break;
            }
            prev = f;
        }
        rho *= 10.0;
    }
    let min_c = prob.constraints(&x).iter().copied().fold(f64::INFINITY, f64::min);
    if min_c > 0.0 && min_c < 1.0 {
        let s = (1.0 / min_c).sqrt();
        x.iter_mut().for_each(|v| *v *= s);
    }
    Ok((x, mu, iterations))
}
