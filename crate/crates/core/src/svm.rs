//! Cost-sensitive hard-margin linear SVM without bias:
//! `min ½||w||²  s.t.  y_i w·x_i ≥ m_i`.
//!
//! Solved in the dual by cyclic coordinate ascent,
//! `α_i ← max(0, α_i + (m_i − y_i w·x_i)/||x_i||²)`, with `w = Σ α_i y_i x_i`
//! kept up to date. Two backends share the iteration: explicit features, and
//! a precomputed Gram matrix for problems where `d ≫ n`.

use ndarray::{Array2, ArrayView2};

use crate::error::{invalid, Error, Result};
use crate::losses::TemperatureMap;
use crate::numeric::dot;

/// Required margin per example.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginSpec {
    m: Vec<f64>,
}

impl MarginSpec {
    pub fn new(m: Vec<f64>) -> Result<Self> {
        if let Some(i) = m.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return invalid(format!("margin m[{i}] = {} must be finite and > 0", m[i]));
        }
        Ok(Self { m })
    }

    pub fn uniform(n: usize, m: f64) -> Result<Self> {
        Self::new(vec![m; n])
    }

    /// `m_i = 1/f[g_i]`.
    pub fn from_temps(temps: &TemperatureMap, groups: &[usize]) -> Result<Self> {
        if let Some(&g) = groups.iter().find(|&&g| g >= temps.len()) {
            return invalid(format!("group {g} has no temperature"));
        }
        Self::new(groups.iter().map(|&g| temps.margin(g)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.m
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.m.iter().map(|v| v * c).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    /// `max(0, max_i (m_i − y_i w·x_i))`.
    pub primal: f64,
    /// `||w − Σ α_i y_i x_i||`.
    pub stationarity: f64,
    /// `max_i α_i |y_i w·x_i − m_i|`.
    pub complementarity: f64,
}

#[derive(Debug, Clone)]
pub struct SvmSolution {
    pub w: Vec<f64>,
    pub alpha: Vec<f64>,
    pub active: Vec<usize>,
    /// `½||w||²`.
    pub objective: f64,
    pub kkt: KktResiduals,
    pub epochs: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SvmOptions {
    /// Bound on constraint violation and complementary slackness at exit.
    pub tol: f64,
    pub max_epochs: usize,
    /// Epoch cap for the phase-1 separability pass.
    pub perceptron_epochs: usize,
}

impl Default for SvmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_epochs: 200_000,
            perceptron_epochs: 20_000,
        }
    }
}

const BLOWUP: f64 = 1e24;
/// Objective lower bound beyond which the problem is treated as infeasible.
const NORM_CAP: f64 = 1e10;

trait DualBackend {
    fn n(&self) -> usize;
    fn sq_norm(&self, i: usize) -> f64;
    /// `y_i w·x_i` for the current iterate.
    fn margin_of(&self, i: usize) -> f64;
    fn add(&mut self, i: usize, delta: f64);
    fn w_sq_norm(&self) -> f64;
    fn refresh(&mut self, alpha: &[f64]);
}

struct Explicit<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [f64],
    w: Vec<f64>,
}

impl DualBackend for Explicit<'_> {
    fn n(&self) -> usize {
        self.y.len()
    }
    fn sq_norm(&self, i: usize) -> f64 {
        let r = self.x.row(i);
        r.dot(&r)
    }
    fn margin_of(&self, i: usize) -> f64 {
        let r = self.x.row(i);
        self.y[i] * r.iter().zip(&self.w).map(|(a, b)| a * b).sum::<f64>()
    }
    fn add(&mut self, i: usize, delta: f64) {
        let c = delta * self.y[i];
        for (wj, xj) in self.w.iter_mut().zip(self.x.row(i)) {
            *wj += c * xj;
        }
    }
    fn w_sq_norm(&self) -> f64 {
        dot(&self.w, &self.w)
    }
    fn refresh(&mut self, alpha: &[f64]) {
        self.w = weight_vector(self.x, self.y, alpha);
    }
}

struct Gram<'a> {
    g: ArrayView2<'a, f64>,
    y: &'a [f64],
    /// `s_i = y_i Σ_j G_ij y_j α_j`.
    s: Vec<f64>,
    alpha_dot_s: f64,
}

impl DualBackend for Gram<'_> {
    fn n(&self) -> usize {
        self.y.len()
    }
    fn sq_norm(&self, i: usize) -> f64 {
        self.g[[i, i]]
    }
    fn margin_of(&self, i: usize) -> f64 {
        self.s[i]
    }
    fn add(&mut self, i: usize, delta: f64) {
        let c = delta * self.y[i];
        let row = self.g.row(i);
        let row = row.as_slice().expect("gram rows are contiguous");
        for ((sj, gj), yj) in self.s.iter_mut().zip(row).zip(self.y) {
            *sj += c * gj * yj;
        }
    }
    fn w_sq_norm(&self) -> f64 {
        self.alpha_dot_s
    }
    fn refresh(&mut self, alpha: &[f64]) {
        let n = self.y.len();
        let beta: Vec<f64> = (0..n).map(|j| alpha[j] * self.y[j]).collect();
        for i in 0..n {
            let row = self.g.row(i);
            self.s[i] = self.y[i] * dot(row.as_slice().expect("contiguous"), &beta);
        }
        self.alpha_dot_s = dot(alpha, &self.s);
    }
}

struct DualResult {
    alpha: Vec<f64>,
    epochs: usize,
    converged: bool,
    residual: f64,
}

fn coordinate_ascent<B: DualBackend>(
    backend: &mut B,
    rhs: &[f64],
    tol: f64,
    max_epochs: usize,
    init: Option<&[f64]>,
) -> Result<DualResult> {
    let n = backend.n();
    let mut alpha = match init {
        Some(a) => a.iter().map(|v| v.max(0.0)).collect(),
        None => vec![0.0; n],
    };
    if init.is_some() {
        backend.refresh(&alpha);
    }
    let diag: Vec<f64> = (0..n).map(|i| backend.sq_norm(i)).collect();
    for i in 0..n {
        if diag[i] == 0.0 && rhs[i] > 0.0 {
            return Err(Error::Infeasible { violating: vec![i] });
        }
    }
    let mut skip = vec![false; n];
    let mut force_full = true;
    let mut residual = f64::INFINITY;
    for epoch in 1..=max_epochs {
        let full = force_full || epoch % 10 == 0;
        let mut max_viol: f64 = 0.0;
        for i in 0..n {
            if diag[i] == 0.0 || (!full && skip[i]) {
                continue;
            }
            let v = rhs[i] - backend.margin_of(i);
            let viol = if alpha[i] > 0.0 { v.abs() } else { v.max(0.0) };
            max_viol = max_viol.max(viol);
            let new = (alpha[i] + v / diag[i]).max(0.0);
            if new != alpha[i] {
                backend.add(i, new - alpha[i]);
                alpha[i] = new;
            }
            skip[i] = alpha[i] == 0.0 && v < -0.1 * rhs[i].abs().max(tol);
        }
        if full {
            backend.refresh(&alpha);
            let mut exact: f64 = 0.0;
            for i in 0..n {
                if diag[i] == 0.0 {
                    continue;
                }
                let v = rhs[i] - backend.margin_of(i);
                exact = exact.max(if alpha[i] > 0.0 { v.abs() } else { v.max(0.0) });
            }
            residual = exact;
            if exact <= tol {
                return Ok(DualResult {
                    alpha,
                    epochs: epoch,
                    converged: true,
                    residual,
                });
            }
            // Weak duality: any feasible w has ½||w||² ≥ (Σ α r)² / (2 ||w_α||²).
            let a: f64 = alpha.iter().zip(rhs).map(|(a, r)| a * r).sum();
            let wn = backend.w_sq_norm();
            if !(wn < BLOWUP) || (a > 0.0 && a * a > 2.0 * NORM_CAP * wn) {
                let violating = (0..n).filter(|&i| rhs[i] - backend.margin_of(i) > 0.0).collect();
                return Err(Error::Infeasible { violating });
            }
        }
        force_full = !full && max_viol <= tol;
    }
    Ok(DualResult {
        alpha,
        epochs: max_epochs,
        converged: false,
        residual,
    })
}

fn check_inputs(n: usize, y: &[f64], rhs: &[f64]) -> Result<()> {
    if y.len() != n || rhs.len() != n {
        return invalid(format!("{} rows, {} labels, {} margins", n, y.len(), rhs.len()));
    }
    if y.iter().any(|v| !(v.is_finite() && *v != 0.0)) {
        return invalid("labels must be finite and non-zero");
    }
    if rhs.iter().any(|v| !v.is_finite()) {
        return invalid("margins must be finite");
    }
    Ok(())
}

/// `Σ α_i y_i x_i`.
pub fn weight_vector(x: ArrayView2<f64>, y: &[f64], alpha: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; x.ncols()];
    for (i, row) in x.rows().into_iter().enumerate() {
        let c = alpha[i] * y[i];
        if c != 0.0 {
            for (wj, xj) in w.iter_mut().zip(row) {
                *wj += c * xj;
            }
        }
    }
    w
}

/// Perceptron on `y_i x_i`; returns rows still misclassified after the cap,
/// or an empty list once a strictly separating direction is found.
fn perceptron_phase(x: ArrayView2<f64>, y: &[f64], max_epochs: usize) -> Vec<usize> {
    let n = y.len();
    let mut w = vec![0.0; x.ncols()];
    for _ in 0..max_epochs {
        let mut mistakes = 0;
        for i in 0..n {
            let r = x.row(i);
            let s = y[i] * r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            if s <= 0.0 {
                mistakes += 1;
                for (wj, xj) in w.iter_mut().zip(r) {
                    *wj += y[i] * xj;
                }
            }
        }
        if mistakes == 0 {
            return Vec::new();
        }
    }
    (0..n)
        .filter(|&i| {
            let r = x.row(i);
            y[i] * r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() <= 0.0
        })
        .collect()
}

/// Minimum-norm `w` with `y_i w·x_i ≥ m_i`.
///
/// Non-separable data is reported as [`Error::Infeasible`] with the rows the
/// phase-1 perceptron could not classify.
pub fn solve_cost_sensitive_svm(
    x: ArrayView2<f64>,
    y: &[f64],
    margins: &MarginSpec,
    opts: &SvmOptions,
) -> Result<SvmSolution> {
    check_inputs(x.nrows(), y, margins.values())?;
    let violating = perceptron_phase(x, y, opts.perceptron_epochs);
    if !violating.is_empty() {
        return Err(Error::Infeasible { violating });
    }
    solve_with_rhs(x, y, margins.values(), opts)
}

/// Same problem with arbitrary real right-hand sides `r_i` (rows with
/// `r_i ≤ 0` may stay inactive). No phase-1 pass; infeasibility is detected
/// by dual blow-up.
pub fn solve_with_rhs(
    x: ArrayView2<f64>,
    y: &[f64],
    rhs: &[f64],
    opts: &SvmOptions,
) -> Result<SvmSolution> {
    check_inputs(x.nrows(), y, rhs)?;
    let mut backend = Explicit {
        x,
        y,
        w: vec![0.0; x.ncols()],
    };
    let res = coordinate_ascent(&mut backend, rhs, opts.tol, opts.max_epochs, None)?;
    let w = weight_vector(x, y, &res.alpha);
    let sol = finish(w, res.alpha, res.epochs, |w, a| kkt_residuals(w, a, x, y, rhs));
    if res.converged {
        Ok(sol)
    } else {
        Err(Error::NotConverged {
            iterations: res.epochs,
            residual: res.residual,
            best: Box::new(sol),
        })
    }
}

fn finish(
    w: Vec<f64>,
    alpha: Vec<f64>,
    epochs: usize,
    kkt: impl Fn(&[f64], &[f64]) -> KktResiduals,
) -> SvmSolution {
    let active = (0..alpha.len()).filter(|&i| alpha[i] > 0.0).collect();
    let objective = 0.5 * dot(&w, &w);
    let kkt = kkt(&w, &alpha);
    SvmSolution {
        w,
        alpha,
        active,
        objective,
        kkt,
        epochs,
    }
}

fn kkt_residuals(w: &[f64], alpha: &[f64], x: ArrayView2<f64>, y: &[f64], rhs: &[f64]) -> KktResiduals {
    let mut primal: f64 = 0.0;
    let mut comp: f64 = 0.0;
    for (i, row) in x.rows().into_iter().enumerate() {
        let s = y[i] * row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
        primal = primal.max(rhs[i] - s);
        comp = comp.max(alpha[i] * (s - rhs[i]).abs());
    }
    let recon = weight_vector(x, y, alpha);
    let stationarity = w
        .iter()
        .zip(&recon)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    KktResiduals {
        primal: primal.max(0.0),
        stationarity,
        complementarity: comp,
    }
}

/// KKT residuals of a candidate `(w, α)` for the given margins.
pub fn kkt_report(
    solution: &SvmSolution,
    x: ArrayView2<f64>,
    y: &[f64],
    margins: &MarginSpec,
) -> KktResiduals {
    kkt_residuals(&solution.w, &solution.alpha, x, y, margins.values())
}

/// Dual solution of the Gram-matrix form. `w` is implicit:
/// `w = Σ α_i y_i x_i`.
#[derive(Debug, Clone)]
pub struct GramSolution {
    pub alpha: Vec<f64>,
    /// `y_i w·x_i` at the solution.
    pub margins: Vec<f64>,
    /// `||w||²`.
    pub norm_sq: f64,
    pub residual: f64,
    pub epochs: usize,
}

/// Minimum-norm solution of `y_i w·x_i ≥ r_i` given only `G = X Xᵀ`.
pub fn solve_gram_svm(
    gram: ArrayView2<f64>,
    y: &[f64],
    rhs: &[f64],
    opts: &SvmOptions,
) -> Result<GramSolution> {
    gram_svm_impl(gram, y, rhs, opts, None)
}

/// [`solve_gram_svm`] started from the dual point `alpha0`.
pub fn solve_gram_svm_from(
    gram: ArrayView2<f64>,
    y: &[f64],
    rhs: &[f64],
    opts: &SvmOptions,
    alpha0: &[f64],
) -> Result<GramSolution> {
    if alpha0.len() != y.len() {
        return invalid("warm start has the wrong length");
    }
    gram_svm_impl(gram, y, rhs, opts, Some(alpha0))
}

fn gram_svm_impl(
    gram: ArrayView2<f64>,
    y: &[f64],
    rhs: &[f64],
    opts: &SvmOptions,
    init: Option<&[f64]>,
) -> Result<GramSolution> {
    let n = gram.nrows();
    if gram.ncols() != n {
        return invalid("gram matrix must be square");
    }
    check_inputs(n, y, rhs)?;
    let owned;
    let g = if gram.is_standard_layout() {
        gram
    } else {
        owned = gram.to_owned();
        owned.view()
    };
    let mut backend = Gram {
        g,
        y,
        s: vec![0.0; n],
        alpha_dot_s: 0.0,
    };
    let res = coordinate_ascent(&mut backend, rhs, opts.tol, opts.max_epochs, init)?;
    backend.refresh(&res.alpha);
    if !res.converged {
        let w_like = Vec::new();
        let best = SvmSolution {
            w: w_like,
            alpha: res.alpha.clone(),
            active: Vec::new(),
            objective: 0.5 * backend.alpha_dot_s,
            kkt: KktResiduals {
                primal: res.residual,
                stationarity: 0.0,
                complementarity: f64::NAN,
            },
            epochs: res.epochs,
        };
        return Err(Error::NotConverged {
            iterations: res.epochs,
            residual: res.residual,
            best: Box::new(best),
        });
    }
    Ok(GramSolution {
        norm_sq: backend.alpha_dot_s,
        margins: backend.s,
        alpha: res.alpha,
        residual: res.residual,
        epochs: res.epochs,
    })
}

/// `X Xᵀ`.
pub fn gram_matrix(x: ArrayView2<f64>) -> Array2<f64> {
    x.dot(&x.t())
}
