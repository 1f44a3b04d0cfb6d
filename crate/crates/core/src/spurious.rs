//! Closed forms for the scalar spurious-feature model and an empirical
//! minimum-norm oracle to check them against.
//!
//! All coefficients are in rescaled units: `w_c` multiplies `x_c/μ_c`, so a
//! separator costs `w_c²/μ_c² + w_s²/μ_s² + ||w_n||²`. The closed forms assume
//! per-n noise normalization, where each noise vector has squared norm close
//! to `σ_n² n`.

use std::f64::consts::PI;
use std::cell::RefCell;
use std::io::Write;

use ndarray::{Array2, ArrayView2};
use rand_distr::{ChiSquared, Distribution};

use crate::datagen::{
    normal, rng_from_seed, spurious_group_is_minority, spurious_group_pair, GroupedDataset, NoiseNormalization,
    SpuriousParams,
};
use crate::error::{invalid, Error, Result};
use crate::numeric::{bfgs, dot, norm_cdf};
use crate::svm::{solve_gram_svm, solve_gram_svm_from, SvmOptions};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// `E[(a + bz)_+²]` for `z ~ N(0, σ²)`.
pub fn gauss_relu_sq_moment(a: f64, b: f64, sigma: f64) -> f64 {
    let s = (b * sigma).abs();
    if s == 0.0 {
        return a.max(0.0).powi(2);
    }
    let t = a / s;
    if t < -15.0 {
        // (t²+1)Φ(t) + tφ(t) cancels; use its tail expansion.
        let x = -t;
        let x2 = x * x;
        let phi = INV_SQRT_2PI * (-0.5 * x2).exp();
        // Σ_k (−1)^{k+1} 2k (2k−1)!! / x^{2k+1}
        let mut series = 0.0;
        let mut dfact = 1.0;
        let mut pow = x;
        for k in 1..=7 {
            pow *= x2;
            series += if k % 2 == 1 { 1.0 } else { -1.0 } * 2.0 * k as f64 * dfact / pow;
            dfact *= (2 * k + 1) as f64;
        }
        return s * s * phi * series;
    }
    let phi = INV_SQRT_2PI * (-0.5 * t * t).exp();
    s * s * ((t * t + 1.0) * norm_cdf(t) + t * phi)
}

fn require_closed_form(params: &SpuriousParams) -> Result<()> {
    params.validate()?;
    if params.noise_normalization != NoiseNormalization::PerN {
        return invalid("closed forms assume per-n noise normalization");
    }
    Ok(())
}

/// `(P, Q, D) = (p_maj/σ_n², p_min/σ_n², 1/σ_n² + 1/μ_s²)`.
fn pqd(params: &SpuriousParams) -> (f64, f64, f64) {
    let s2 = params.sigma_n * params.sigma_n;
    (
        params.p_maj() / s2,
        params.p_min() / s2,
        1.0 / s2 + 1.0 / (params.mu_s * params.mu_s),
    )
}

/// Expected squared norm of the cheapest separator with fixed `(w_c, w_s)`:
/// `w_s²/μ_s² + w_c²/μ_c² + P·E[(1 − w_s − w_c + w_c z)_+²] + Q·E[(λ + w_s − w_c + w_c z)_+²]`
/// with `z ~ N(0, σ_c²)`.
pub fn expected_separator_norm(params: &SpuriousParams, w_c: f64, w_s: f64) -> Result<f64> {
    require_closed_form(params)?;
    if params.sigma_s != 0.0 {
        return invalid("separator norm closed form requires sigma_s = 0");
    }
    let (p, q, _) = pqd(params);
    let sc = params.sigma_c;
    Ok(w_s * w_s / (params.mu_s * params.mu_s)
        + w_c * w_c / (params.mu_c * params.mu_c)
        + p * gauss_relu_sq_moment(1.0 - w_s - w_c, w_c, sc)
        + q * gauss_relu_sq_moment(params.lambda + w_s - w_c, w_c, sc))
}

/// Best spurious-only separator: `(w_s*, norm)` with `w_c = 0`.
pub fn use_spu_norm(params: &SpuriousParams) -> Result<(f64, f64)> {
    require_closed_form(params)?;
    let (p, q, d) = pqd(params);
    let l = params.lambda;
    let ws = (p - l * q) / d;
    Ok((ws, p + l * l * q - (p - l * q).powi(2) / d))
}

/// Upper bound on the core-only separator norm (`w_s = 0`, `w_c = 1`):
/// `1/μ_c² + ½P + (λ² − 2λ + 1 + σ_c² + (λ−1)/√(2π))·Q`.
pub fn use_core_norm_bound(params: &SpuriousParams) -> Result<f64> {
    require_closed_form(params)?;
    let (p, q, _) = pqd(params);
    let l = params.lambda;
    let sc2 = params.sigma_c * params.sigma_c;
    Ok(1.0 / (params.mu_c * params.mu_c)
        + 0.5 * p
        + (l * l - 2.0 * l + 1.0 + sc2 + (l - 1.0) * INV_SQRT_2PI) * q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadraticForm {
    /// Coefficients of `use_core_bound − use_spu_bound` as a polynomial in λ.
    Derived,
    /// Same, with the `P²/D` constant term subtracted rather than added.
    PrintedSign,
    /// `D ≈ 1/σ_n²` and the `1/μ_c²` term dropped, in units of `1/σ_n²`.
    NoiseDominant,
}

/// `a λ² + b λ + c ≤ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaQuadratic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl LambdaQuadratic {
    pub fn discriminant(&self) -> f64 {
        self.b * self.b - 4.0 * self.a * self.c
    }

    /// Root interval where the quadratic is `≤ 0`, or `None`.
    pub fn interval(&self) -> Option<(f64, f64)> {
        let disc = self.discriminant();
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        // Stable root pair.
        let qv = -0.5 * (self.b + self.b.signum() * sq);
        let (r1, r2) = (qv / self.a, self.c / qv);
        Some((r1.min(r2), r1.max(r2)))
    }

    pub fn eval(&self, l: f64) -> f64 {
        (self.a * l + self.b) * l + self.c
    }
}

pub fn lambda_quadratic(params: &SpuriousParams, form: QuadraticForm) -> Result<LambdaQuadratic> {
    require_closed_form(params)?;
    let pmin = params.p_min();
    if pmin <= 0.0 {
        return invalid("minority fraction must be positive");
    }
    let pmaj = params.p_maj();
    let sc2 = params.sigma_c * params.sigma_c;
    let k1 = 1.0 - 0.5 * INV_SQRT_2PI;
    let k0 = 1.0 - INV_SQRT_2PI + sc2;
    let (p, q, d) = pqd(params);
    Ok(match form {
        QuadraticForm::NoiseDominant => LambdaQuadratic {
            a: pmin * pmin,
            b: -2.0 * (k1 * pmin + pmin * pmaj),
            c: k0 * pmin - 0.5 * pmaj + pmaj * pmaj,
        },
        QuadraticForm::Derived | QuadraticForm::PrintedSign => {
            let sign = if form == QuadraticForm::Derived { 1.0 } else { -1.0 };
            LambdaQuadratic {
                a: q * q / d,
                b: -2.0 * (k1 * q + p * q / d),
                c: 1.0 / (params.mu_c * params.mu_c) + 0.5 * p + k0 * q - p + sign * p * p / d,
            }
        }
    })
}

/// λ values for which the core-only bound is at most the spurious-only norm.
pub fn lambda_feasible_interval(params: &SpuriousParams) -> Result<Option<(f64, f64)>> {
    Ok(lambda_quadratic(params, QuadraticForm::Derived)?.interval())
}

/// `[p/(8(1−p)) + ¼(1 − 1/√(2πe)), (1 + 1/√2)/(8(1−p))]`.
pub fn better_than_random_interval(p: f64) -> Result<(f64, f64)> {
    if !(p > 0.0 && p < 1.0) {
        return invalid(format!("p = {p} must lie in (0, 1)"));
    }
    let lo = p / (8.0 * (1.0 - p)) + 0.25 * (1.0 - 1.0 / (2.0 * PI * std::f64::consts::E).sqrt());
    let hi = (1.0 + std::f64::consts::FRAC_1_SQRT_2) / (8.0 * (1.0 - p));
    Ok((lo, hi))
}

/// Predicted noise-block coefficients: `y(1 − w_s − w_c y x_c)_+` on the
/// majority and `y(λ + w_s − w_c y x_c)_+` on the minority, with `x_c` the
/// rescaled core feature.
pub fn alpha_coefficients(
    params: &SpuriousParams,
    w_c: f64,
    w_s: f64,
    y: &[f64],
    x_c: &[f64],
    minority: &[bool],
) -> Result<Vec<f64>> {
    if y.len() != x_c.len() || y.len() != minority.len() {
        return invalid("alpha inputs must have equal length");
    }
    Ok(y.iter()
        .zip(x_c)
        .zip(minority)
        .map(|((&yi, &xc), &min)| {
            let slack = if min {
                params.lambda + w_s - w_c * yi * xc
            } else {
                1.0 - w_s - w_c * yi * xc
            };
            yi * slack.max(0.0)
        })
        .collect())
}

/// Scalar-model training set reduced to what the minimum-norm problem sees:
/// the two signal coordinates and the noise Gram matrix.
#[derive(Debug, Clone)]
pub struct ScalarSample {
    pub params: SpuriousParams,
    pub y: Vec<f64>,
    pub minority: Vec<bool>,
    /// Core feature divided by `μ_c`.
    pub x_c: Vec<f64>,
    /// Spurious feature divided by `μ_s`.
    pub x_s: Vec<f64>,
    pub noise_gram: Array2<f64>,
}

impl ScalarSample {
    /// From a dataset laid out as `[core, spurious, noise...]`.
    pub fn from_dataset(params: &SpuriousParams, data: &GroupedDataset) -> Result<Self> {
        params.validate()?;
        if data.dim() != params.noise_dim + 2 || data.n_groups() != 4 {
            return invalid("dataset does not match the scalar spurious layout");
        }
        let f = &data.features;
        let noise = f.slice(ndarray::s![.., 2..]);
        Ok(Self {
            params: params.clone(),
            y: data.labels.iter().map(|&v| v as f64).collect(),
            minority: data.groups.iter().map(|&g| spurious_group_is_minority(g)).collect(),
            x_c: f.column(0).iter().map(|v| v / params.mu_c).collect(),
            x_s: f.column(1).iter().map(|v| v / params.mu_s).collect(),
            noise_gram: noise.dot(&noise.t()),
        })
    }

    /// Draws the signal coordinates directly and the noise Gram from its
    /// Wishart law via the Bartlett decomposition; same distribution as
    /// [`ScalarSample::from_dataset`] on a fresh sample, in `O(n³)`.
    pub fn draw(params: &SpuriousParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let n = params.n();
        let big_n = params.noise_dim;
        let mut rng = rng_from_seed(seed);
        let mut y = Vec::with_capacity(n);
        let mut minority = Vec::with_capacity(n);
        let mut x_c = Vec::with_capacity(n);
        let mut x_s = Vec::with_capacity(n);
        for (g, &size) in params.group_sizes().iter().enumerate() {
            let (yi, a) = spurious_group_pair(g);
            for _ in 0..size {
                y.push(yi as f64);
                minority.push(spurious_group_is_minority(g));
                x_c.push(yi as f64 + params.sigma_c * normal(&mut rng));
                x_s.push(a as f64 + params.sigma_s * normal(&mut rng));
            }
        }
        let noise_gram = if big_n >= n {
            let mut l: Vec<Vec<f64>> = Vec::with_capacity(n);
            for i in 0..n {
                let chi = ChiSquared::new((big_n - i) as f64).map_err(|e| Error::InvalidParam(e.to_string()))?;
                let mut row: Vec<f64> = (0..i).map(|_| normal(&mut rng)).collect();
                row.push(chi.sample(&mut rng).sqrt());
                l.push(row);
            }
            let v = params.noise_var();
            let mut g = Array2::zeros((n, n));
            for i in 0..n {
                for j in 0..=i {
                    let val = v * dot(&l[i][..=j], &l[j][..=j]);
                    g[[i, j]] = val;
                    g[[j, i]] = val;
                }
            }
            g
        } else {
            let sd = params.noise_var().sqrt();
            let z = Array2::from_shape_fn((n, big_n), |_| sd * normal(&mut rng));
            z.dot(&z.t())
        };
        Ok(Self {
            params: params.clone(),
            y,
            minority,
            x_c,
            x_s,
            noise_gram,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    fn margins(&self, lambda: f64) -> Vec<f64> {
        self.minority.iter().map(|&m| if m { lambda } else { 1.0 }).collect()
    }
}

/// Which signal coordinates the separator may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalConstraint {
    Free,
    /// `w_s = 0`.
    CoreOnly,
    /// `w_c = 0`.
    SpuriousOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparatorProfile {
    pub w_c: f64,
    pub w_s: f64,
    /// Noise-block margin contribution `w_n·x_n` per training example.
    pub alpha: Vec<f64>,
    /// Representer coefficients from the dual: `c_i E||x_n||²` where
    /// `w_n = Σ c_i x_n^(i)`, i.e. `c_i = a_i y_i` for dual point `a`.
    pub dual_alpha: Vec<f64>,
    pub norm_sq: f64,
    /// `||w_n||²`.
    pub noise_norm_sq: f64,
}

impl SeparatorProfile {
    /// `w_c + w_s`.
    pub fn u(&self) -> f64 {
        self.w_c + self.w_s
    }

    /// `w_c − w_s`.
    pub fn v(&self) -> f64 {
        self.w_c - self.w_s
    }

    /// Exact test accuracy on the attribute-aligned and attribute-flipped
    /// groups, with the noise projection `w_n·x_n` Gaussian on fresh inputs.
    pub fn group_accuracies(&self, params: &SpuriousParams) -> (f64, f64) {
        let s2 = (self.w_c * params.sigma_c).powi(2)
            + (self.w_s * params.sigma_s).powi(2)
            + params.noise_var() * self.noise_norm_sq;
        let acc = |m: f64| {
            if s2 == 0.0 {
                if m > 0.0 {
                    1.0
                } else if m == 0.0 {
                    0.5
                } else {
                    0.0
                }
            } else {
                norm_cdf(m / s2.sqrt())
            }
        };
        (acc(self.u()), acc(self.v()))
    }

    pub fn worst_group_accuracy(&self, params: &SpuriousParams) -> f64 {
        let (a, b) = self.group_accuracies(params);
        a.min(b)
    }

    pub fn better_than_random(&self) -> bool {
        self.u() > 0.0 && self.v() > 0.0
    }
}

fn oracle_options() -> SvmOptions {
    SvmOptions {
        tol: 1e-9,
        max_epochs: 1_000_000,
        ..SvmOptions::default()
    }
}

/// Minimum-norm separator with margin 1 on the majority and `λ` on the
/// minority, under the given signal constraint.
///
/// Minimizes the convex profile `F(w_c, w_s) = w_c²/μ_c² + w_s²/μ_s² + V(w_c, w_s)`
/// by BFGS, where `V` is the noise-block minimum norm at fixed signal weights,
/// solved in the dual with warm starts. `∂V/∂r_i = 2a_i` for the dual point `a`.
pub fn empirical_min_norm_separator(
    sample: &ScalarSample,
    lambda: f64,
    constraint: SignalConstraint,
) -> Result<SeparatorProfile> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return invalid("lambda must be finite and positive");
    }
    let p = &sample.params;
    let (mc2, ms2) = (p.mu_c * p.mu_c, p.mu_s * p.mu_s);
    let margins = sample.margins(lambda);
    let unpack = |v: &[f64]| match constraint {
        SignalConstraint::Free => (v[0], v[1]),
        SignalConstraint::CoreOnly => (v[0], 0.0),
        SignalConstraint::SpuriousOnly => (0.0, v[0]),
    };
    let warm = RefCell::new(vec![0.0; sample.n()]);
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let eval = |v: &[f64]| -> (f64, Vec<f64>) {
        let (w_c, w_s) = unpack(v);
        let rhs: Vec<f64> = (0..sample.n())
            .map(|i| margins[i] - sample.y[i] * (w_c * sample.x_c[i] + w_s * sample.x_s[i]))
            .collect();
        let sol = match solve_gram_svm_from(sample.noise_gram.view(), &sample.y, &rhs, &oracle_options(), &warm.borrow()) {
            Ok(s) => s,
            Err(e) => {
                *failure.borrow_mut() = Some(e);
                return (f64::NAN, vec![0.0; v.len()]);
            }
        };
        let ay: Vec<f64> = sol.alpha.iter().zip(&sample.y).map(|(a, y)| a * y).collect();
        let gc = 2.0 * w_c / mc2 - 2.0 * dot(&ay, &sample.x_c);
        let gs = 2.0 * w_s / ms2 - 2.0 * dot(&ay, &sample.x_s);
        *warm.borrow_mut() = sol.alpha;
        let f = w_c * w_c / mc2 + w_s * w_s / ms2 + sol.norm_sq;
        let g = match constraint {
            SignalConstraint::Free => vec![gc, gs],
            SignalConstraint::CoreOnly => vec![gc],
            SignalConstraint::SpuriousOnly => vec![gs],
        };
        (f, g)
    };
    let x0 = vec![0.0; if constraint == SignalConstraint::Free { 2 } else { 1 }];
    let scale = eval(&x0).0;
    if let Some(e) = failure.borrow_mut().take() {
        return Err(e);
    }
    let (v, _) = bfgs(eval, x0, 1e-9 * scale.max(1.0), 500);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let (w_c, w_s) = unpack(&v);
    fixed_signal_separator(sample, lambda, w_c, w_s)
}

/// Same problem solved jointly on the full Gram matrix
/// `G_noise + μ_c² x_c x_cᵀ + μ_s² x_s x_sᵀ` (signal terms dropped per the
/// constraint). Slower on large `n`; kept as an independent check.
pub fn joint_min_norm_separator(
    sample: &ScalarSample,
    lambda: f64,
    constraint: SignalConstraint,
) -> Result<SeparatorProfile> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return invalid("lambda must be finite and positive");
    }
    let p = &sample.params;
    let n = sample.n();
    let (mc2, ms2) = (p.mu_c * p.mu_c, p.mu_s * p.mu_s);
    let use_c = constraint != SignalConstraint::SpuriousOnly;
    let use_s = constraint != SignalConstraint::CoreOnly;
    let mut g = sample.noise_gram.clone();
    for i in 0..n {
        for j in 0..n {
            let mut extra = 0.0;
            if use_c {
                extra += mc2 * sample.x_c[i] * sample.x_c[j];
            }
            if use_s {
                extra += ms2 * sample.x_s[i] * sample.x_s[j];
            }
            g[[i, j]] += extra;
        }
    }
    let sol = solve_gram_svm(g.view(), &sample.y, &sample.margins(lambda), &oracle_options())?;
    let ay: Vec<f64> = sol.alpha.iter().zip(&sample.y).map(|(a, y)| a * y).collect();
    let w_c = if use_c { mc2 * dot(&ay, &sample.x_c) } else { 0.0 };
    let w_s = if use_s { ms2 * dot(&ay, &sample.x_s) } else { 0.0 };
    let alpha: Vec<f64> = sample.noise_gram.rows().into_iter().map(|r| dot(r.as_slice().expect("standard layout"), &ay)).collect();
    let noise_norm_sq = dot(&ay, &alpha);
    let dual_alpha = representer_scale(p, &ay);
    Ok(SeparatorProfile {
        w_c,
        w_s,
        alpha,
        dual_alpha,
        norm_sq: sol.norm_sq,
        noise_norm_sq,
    })
}

fn representer_scale(p: &SpuriousParams, ay: &[f64]) -> Vec<f64> {
    let expected_sq_norm = p.noise_var() * p.noise_dim as f64;
    ay.iter().map(|c| c * expected_sq_norm).collect()
}

/// Cheapest separator with `(w_c, w_s)` held fixed; only the noise block is
/// optimized.
pub fn fixed_signal_separator(sample: &ScalarSample, lambda: f64, w_c: f64, w_s: f64) -> Result<SeparatorProfile> {
    let p = &sample.params;
    let rhs: Vec<f64> = sample
        .margins(lambda)
        .iter()
        .enumerate()
        .map(|(i, m)| m - sample.y[i] * (w_c * sample.x_c[i] + w_s * sample.x_s[i]))
        .collect();
    let sol = solve_gram_svm(sample.noise_gram.view(), &sample.y, &rhs, &oracle_options())?;
    let ay: Vec<f64> = sol.alpha.iter().zip(&sample.y).map(|(a, y)| a * y).collect();
    let alpha: Vec<f64> = sample.noise_gram.rows().into_iter().map(|r| dot(r.as_slice().expect("standard layout"), &ay)).collect();
    Ok(SeparatorProfile {
        w_c,
        w_s,
        alpha,
        dual_alpha: representer_scale(p, &ay),
        norm_sq: sol.norm_sq + w_c * w_c / (p.mu_c * p.mu_c) + w_s * w_s / (p.mu_s * p.mu_s),
        noise_norm_sq: sol.norm_sq,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrthonormalityReport {
    /// `max_{i≠j} |x_i·x_j|`, `None` for a single row.
    pub max_offdiag: Option<f64>,
    pub min_sq_norm: f64,
    pub max_sq_norm: f64,
}

pub fn near_orthonormality_from_gram(gram: ArrayView2<f64>) -> OrthonormalityReport {
    let n = gram.nrows();
    let mut off: Option<f64> = None;
    for i in 0..n {
        for j in 0..i {
            let v = gram[[i, j]].abs();
            off = Some(off.map_or(v, |o: f64| o.max(v)));
        }
    }
    let diag = (0..n).map(|i| gram[[i, i]]);
    OrthonormalityReport {
        max_offdiag: off,
        min_sq_norm: diag.clone().fold(f64::INFINITY, f64::min),
        max_sq_norm: diag.fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Diagnostic on a noise block (rows are examples).
pub fn near_orthonormality_check(noise: ArrayView2<f64>) -> OrthonormalityReport {
    near_orthonormality_from_gram(noise.dot(&noise.t()).view())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSweepRow {
    pub lambda: f64,
    pub use_core_bound: f64,
    pub use_spu_bound: f64,
    pub empirical_core_norm: f64,
    pub empirical_spu_norm: f64,
    pub u: f64,
    pub v: f64,
    pub worst_group_accuracy: f64,
    pub better_than_random: bool,
}

impl LambdaSweepRow {
    pub fn csv_header() -> Vec<&'static str> {
        vec![
            "lambda",
            "use_core_bound",
            "use_spu_bound",
            "empirical_core_norm",
            "empirical_spu_norm",
            "u",
            "v",
            "worst_group_acc",
            "worst_group_better_than_random",
        ]
    }

    pub fn csv_fields(&self) -> Vec<String> {
        vec![
            self.lambda.to_string(),
            self.use_core_bound.to_string(),
            self.use_spu_bound.to_string(),
            self.empirical_core_norm.to_string(),
            self.empirical_spu_norm.to_string(),
            self.u.to_string(),
            self.v.to_string(),
            self.worst_group_accuracy.to_string(),
            u8::from(self.better_than_random).to_string(),
        ]
    }
}

/// Closed-form bounds and constrained/free oracle solves at one λ.
pub fn lambda_sweep_row(sample: &ScalarSample, lambda: f64) -> Result<LambdaSweepRow> {
    let mut p = sample.params.clone();
    p.lambda = lambda;
    let core = empirical_min_norm_separator(sample, lambda, SignalConstraint::CoreOnly)?;
    let spu = empirical_min_norm_separator(sample, lambda, SignalConstraint::SpuriousOnly)?;
    let free = empirical_min_norm_separator(sample, lambda, SignalConstraint::Free)?;
    let (ucb, usb) = if p.noise_normalization == NoiseNormalization::PerN {
        (use_core_norm_bound(&p)?, use_spu_norm(&p)?.1)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(LambdaSweepRow {
        lambda,
        use_core_bound: ucb,
        use_spu_bound: usb,
        empirical_core_norm: core.norm_sq,
        empirical_spu_norm: spu.norm_sq,
        u: free.u(),
        v: free.v(),
        worst_group_accuracy: free.worst_group_accuracy(&p),
        better_than_random: free.better_than_random(),
    })
}

pub fn write_lambda_sweep_csv<W: Write>(rows: &[LambdaSweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LambdaSweepRow::csv_header())?;
    for r in rows {
        w.write_record(r.csv_fields())?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults() -> SpuriousParams {
        SpuriousParams::default()
    }

    #[test]
    fn moment_special_cases() {
        assert!((gauss_relu_sq_moment(0.0, 2.0, 0.5) - 0.5).abs() < 1e-15);
        assert_eq!(gauss_relu_sq_moment(1.0, 1.0, 0.0), 1.0);
        assert!((gauss_relu_sq_moment(1.0, 1.0, 1e-9) - 1.0).abs() < 1e-12);
        assert_eq!(gauss_relu_sq_moment(-1.0, 1.0, 0.0), 0.0);
        for t in [-14.9, -15.1, -40.0] {
            let v = gauss_relu_sq_moment(t, 1.0, 1.0);
            assert!(v >= 0.0 && v.is_finite());
        }
        // High-precision reference values on both sides of the series switch.
        for (t, want) in [(-14.999, 3.241_746_250_802_051e-53), (-15.001, 3.144_701_560_119_949e-53), (-20.0, 1.359_912_914_707_381e-91)] {
            let got = gauss_relu_sq_moment(t, 1.0, 1.0);
            assert!((got / want - 1.0).abs() < 1e-6, "t={t}: {got}");
        }
    }

    #[test]
    fn separator_norm_plug_in() {
        let p = SpuriousParams {
            sigma_n: 1.0,
            n_maj: 900,
            n_min: 100,
            ..defaults()
        };
        let v = expected_separator_norm(&p, 0.0, 0.5).unwrap();
        assert!((v - 0.7).abs() < 1e-12, "{v}");
        let bad = SpuriousParams { sigma_s: 0.1, ..p };
        assert!(expected_separator_norm(&bad, 0.0, 0.5).is_err());
    }

    #[test]
    fn spu_optimum_vanishes_at_balance_ratio() {
        let p = SpuriousParams {
            lambda: 9.0,
            n_maj: 900,
            n_min: 100,
            ..defaults()
        };
        assert!(use_spu_norm(&p).unwrap().0.abs() < 1e-12);
    }

    #[test]
    fn better_than_random_endpoints() {
        let (lo, hi) = better_than_random_interval(0.9).unwrap();
        assert!((lo - 1.314_51).abs() < 1e-4, "{lo}");
        assert!((hi - 2.133_88).abs() < 1e-4, "{hi}");
        assert!(better_than_random_interval(1.0).is_err());
    }

    #[test]
    fn default_interval() {
        let (lo, hi) = lambda_feasible_interval(&defaults()).unwrap().unwrap();
        assert!((lo - 1.62).abs() < 0.01 && (hi - 32.55).abs() < 0.01, "{lo} {hi}");
        let printed = lambda_quadratic(&defaults(), QuadraticForm::PrintedSign).unwrap().interval().unwrap();
        assert!(printed.0 < 0.0);
    }

    #[test]
    fn alpha_at_origin() {
        let p = SpuriousParams { lambda: 3.0, ..defaults() };
        let a = alpha_coefficients(&p, 0.0, 0.0, &[1.0, -1.0, 1.0], &[0.3, -2.0, 1.0], &[false, false, true]).unwrap();
        assert_eq!(a, vec![1.0, -1.0, 3.0]);
        let a = alpha_coefficients(&p, 2.0, 0.0, &[1.0], &[1.0], &[false]).unwrap();
        assert_eq!(a, vec![0.0]);
    }

    #[test]
    fn single_row_has_no_offdiag() {
        let x = Array2::from_elem((1, 5), 1.0);
        let r = near_orthonormality_check(x.view());
        assert_eq!(r.max_offdiag, None);
        assert_eq!(r.min_sq_norm, 5.0);
    }
}
