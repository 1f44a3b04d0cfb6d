//! Dataset generators.
//!
//! Every sampler takes an explicit seed and draws from a `ChaCha8Rng`, so the
//! same arguments always produce bit-identical output.

use std::io::{Read, Write};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};

pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn normal(rng: &mut SeededRng) -> f64 {
    rng.sample(StandardNormal)
}

/// Feature matrix with labels and group ids.
///
/// Labels are class indices in multiclass mode and ±1 in binary mode.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    pub features: Array2<f64>,
    pub labels: Vec<i64>,
    pub groups: Vec<usize>,
    pub group_counts: Vec<usize>,
}

impl GroupedDataset {
    /// Builds a dataset and counts groups. Fails unless every group in
    /// `0..n_groups` occurs at least once.
    pub fn new(
        features: Array2<f64>,
        labels: Vec<i64>,
        groups: Vec<usize>,
        n_groups: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n || groups.len() != n {
            return invalid(format!(
                "row count mismatch: {} features, {} labels, {} groups",
                n,
                labels.len(),
                groups.len()
            ));
        }
        let mut group_counts = vec![0usize; n_groups];
        for &g in &groups {
            if g >= n_groups {
                return invalid(format!("group id {g} >= n_groups {n_groups}"));
            }
            group_counts[g] += 1;
        }
        if let Some(g) = group_counts.iter().position(|&c| c == 0) {
            return invalid(format!("group {g} is empty"));
        }
        Ok(Self {
            features,
            labels,
            groups,
            group_counts,
        })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_groups(&self) -> usize {
        self.group_counts.len()
    }

    /// Largest group count over smallest.
    pub fn imbalance_ratio(&self) -> f64 {
        let max = *self.group_counts.iter().max().unwrap_or(&1) as f64;
        let min = *self.group_counts.iter().min().unwrap_or(&1) as f64;
        max / min
    }

    /// Labels as ±1 reals; errors if any label is not ±1.
    pub fn signed_labels(&self) -> Result<Vec<f64>> {
        self.labels
            .iter()
            .map(|&y| match y {
                1 => Ok(1.0),
                -1 => Ok(-1.0),
                other => invalid(format!("label {other} is not ±1")),
            })
            .collect()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features
            .row(i)
            .to_slice()
            .expect("dataset features are stored row-major")
    }

    /// Writes `x0..x{d-1},y,g` with a header row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.dim();
        let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        header.push("g".into());
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.labels[i].to_string());
            rec.push(self.groups[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format produced by [`GroupedDataset::write_csv`]. The group
    /// count is one more than the largest id present.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let ncol = header.len();
        if ncol < 2 || &header[ncol - 2] != "y" || &header[ncol - 1] != "g" {
            return Err(Error::Parse("header must end with y,g".into()));
        }
        let d = ncol - 2;
        for (j, name) in header.iter().take(d).enumerate() {
            if name != format!("x{j}") {
                return Err(Error::Parse(format!("unexpected column {name:?}")));
            }
        }
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut groups = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            for j in 0..d {
                data.push(parse_field::<f64>(&rec[j])?);
            }
            labels.push(parse_field::<i64>(&rec[d])?);
            groups.push(parse_field::<usize>(&rec[d + 1])?);
        }
        let n = labels.len();
        let n_groups = groups.iter().max().map_or(0, |g| g + 1);
        let features = Array2::from_shape_vec((n, d), data)
            .map_err(|e| Error::Parse(e.to_string()))?;
        Self::new(features, labels, groups, n_groups)
    }
}

fn parse_field<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad field {s:?}")))
}

/// Isotropic Gaussian classes centred at `scale * e_k`.
pub fn gaussian_class_sampler(
    dim: usize,
    scale: f64,
    std: f64,
) -> impl FnMut(usize, &mut SeededRng) -> Vec<f64> {
    move |k, rng| {
        (0..dim)
            .map(|j| if j == k % dim { scale } else { 0.0 } + std * normal(rng))
            .collect()
    }
}

/// Step-imbalanced multiclass data: classes `0..K/2` get `n_a` rows each,
/// the rest `n_b`. Group ids equal labels.
pub fn make_step_imbalanced<F>(
    mut sampler: F,
    k: usize,
    n_a: usize,
    n_b: usize,
    seed: u64,
) -> Result<GroupedDataset>
where
    F: FnMut(usize, &mut SeededRng) -> Vec<f64>,
{
    if k == 0 || k % 2 != 0 {
        return invalid(format!("step imbalance needs an even class count, got {k}"));
    }
    if n_b == 0 || n_a < n_b {
        return invalid(format!("need n_a >= n_b >= 1, got n_a={n_a} n_b={n_b}"));
    }
    let mut rng = rng_from_seed(seed);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    for class in 0..k {
        let count = if class < k / 2 { n_a } else { n_b };
        for _ in 0..count {
            rows.push(sampler(class, &mut rng));
            labels.push(class as i64);
        }
    }
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return invalid("sampler returned rows of different lengths");
    }
    let features = Array2::from_shape_vec((rows.len(), d), rows.concat())
        .map_err(|e| Error::InvalidParam(e.to_string()))?;
    let groups = labels.iter().map(|&c| c as usize).collect();
    GroupedDataset::new(features, labels, groups, k)
}

/// Group id for a (label, attribute) pair: majority groups (a = y) are 0 and
/// 1, minority groups (a = -y) are 2 and 3; the low bit marks y = -1.
pub fn spurious_group(y: i64, a: i64) -> usize {
    2 * usize::from(a != y) + usize::from(y < 0)
}

pub fn spurious_group_is_minority(g: usize) -> bool {
    g >= 2
}

/// Label and attribute of group `g` under [`spurious_group`].
pub fn spurious_group_pair(g: usize) -> (i64, i64) {
    let y = if g % 2 == 0 { 1 } else { -1 };
    let a = if g >= 2 { -y } else { y };
    (y, a)
}

/// Per-group row counts: each group size is split as evenly as possible over
/// y = ±1, with the extra row going to y = +1.
fn spurious_group_sizes(n_maj: usize, n_min: usize) -> [usize; 4] {
    [
        n_maj.div_ceil(2),
        n_maj / 2,
        n_min.div_ceil(2),
        n_min / 2,
    ]
}

/// Core block `N(y 1, σ_core² I_d)` and spurious block `N(a 1, σ_spu² I_d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpuriousVectorConfig {
    pub d: usize,
    pub sigma_core: f64,
    pub sigma_spu: f64,
    pub n_maj: usize,
    pub n_min: usize,
}

impl Default for SpuriousVectorConfig {
    fn default() -> Self {
        Self {
            d: 100,
            sigma_core: 10.0,
            sigma_spu: 1.0,
            n_maj: 2700,
            n_min: 300,
        }
    }
}

impl SpuriousVectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return invalid("d must be >= 1");
        }
        if !(self.sigma_core >= 0.0 && self.sigma_spu >= 0.0) {
            return invalid("feature stds must be >= 0");
        }
        if self.n_maj < 2 || self.n_min < 2 {
            return invalid("n_maj and n_min must be >= 2 so all four groups are populated");
        }
        Ok(())
    }
}

pub fn sample_spurious_vector(cfg: &SpuriousVectorConfig, seed: u64) -> Result<GroupedDataset> {
    cfg.validate()?;
    let sizes = spurious_group_sizes(cfg.n_maj, cfg.n_min);
    let n: usize = sizes.iter().sum();
    let d = cfg.d;
    let mut rng = rng_from_seed(seed);
    let mut data = Vec::with_capacity(n * 2 * d);
    let mut labels = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    for (g, &size) in sizes.iter().enumerate() {
        let (y, a) = spurious_group_pair(g);
        for _ in 0..size {
            for _ in 0..d {
                data.push(y as f64 + cfg.sigma_core * normal(&mut rng));
            }
            for _ in 0..d {
                data.push(a as f64 + cfg.sigma_spu * normal(&mut rng));
            }
            labels.push(y);
            groups.push(g);
        }
    }
    let features = Array2::from_shape_vec((n, 2 * d), data).expect("shape matches");
    GroupedDataset::new(features, labels, groups, 4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseNormalization {
    /// Noise coordinates have variance σ_n²/N.
    PerDim,
    /// Noise coordinates have variance σ_n² n/N.
    PerN,
}

/// Constants of the scalar core/spurious/noise model.
#[derive(Debug, Clone, PartialEq)]
pub struct SpuriousParams {
    pub mu_c: f64,
    pub mu_s: f64,
    pub sigma_c: f64,
    pub sigma_s: f64,
    pub sigma_n: f64,
    /// Noise dimension.
    pub noise_dim: usize,
    pub n_maj: usize,
    pub n_min: usize,
    /// Required minority margin; majority margin is 1.
    pub lambda: f64,
    pub noise_normalization: NoiseNormalization,
}

impl Default for SpuriousParams {
    fn default() -> Self {
        Self {
            mu_c: 1.0,
            mu_s: 1.0,
            sigma_c: 1.0,
            sigma_s: 0.0,
            sigma_n: 0.1,
            noise_dim: 20_000,
            n_maj: 1800,
            n_min: 200,
            lambda: 1.0,
            noise_normalization: NoiseNormalization::PerN,
        }
    }
}

impl SpuriousParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_c > 0.0 && self.mu_s > 0.0) {
            return invalid("mu_c and mu_s must be > 0");
        }
        if !(self.sigma_c >= 0.0 && self.sigma_s >= 0.0 && self.sigma_n >= 0.0) {
            return invalid("noise stds must be >= 0");
        }
        if self.noise_dim == 0 {
            return invalid("noise dimension must be >= 1");
        }
        if self.n_maj < 2 || self.n_min < 2 {
            return invalid("n_maj and n_min must be >= 2 so all four groups are populated");
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return invalid("lambda must be finite and >= 0");
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n_maj + self.n_min
    }

    pub fn p_maj(&self) -> f64 {
        self.n_maj as f64 / self.n() as f64
    }

    pub fn p_min(&self) -> f64 {
        self.n_min as f64 / self.n() as f64
    }

    /// Variance of a single noise coordinate.
    pub fn noise_var(&self) -> f64 {
        let s2 = self.sigma_n * self.sigma_n;
        match self.noise_normalization {
            NoiseNormalization::PerDim => s2 / self.noise_dim as f64,
            NoiseNormalization::PerN => s2 * self.n() as f64 / self.noise_dim as f64,
        }
    }

    /// Per-group row counts in group-id order.
    pub fn group_sizes(&self) -> [usize; 4] {
        spurious_group_sizes(self.n_maj, self.n_min)
    }
}

/// Rows `[x_c, x_s, x_n]` in R^{2+N}.
pub fn sample_spurious_scalar(params: &SpuriousParams, seed: u64) -> Result<GroupedDataset> {
    params.validate()?;
    let sizes = params.group_sizes();
    let n = params.n();
    let nd = params.noise_dim;
    let sd = params.noise_var().sqrt();
    let mut rng = rng_from_seed(seed);
    let mut data = Vec::with_capacity(n * (2 + nd));
    let mut labels = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    for (g, &size) in sizes.iter().enumerate() {
        let (y, a) = spurious_group_pair(g);
        for _ in 0..size {
            data.push(params.mu_c * (y as f64 + params.sigma_c * normal(&mut rng)));
            data.push(params.mu_s * (a as f64 + params.sigma_s * normal(&mut rng)));
            for _ in 0..nd {
                data.push(sd * normal(&mut rng));
            }
            labels.push(y);
            groups.push(g);
        }
    }
    let features = Array2::from_shape_vec((n, 2 + nd), data).expect("shape matches");
    GroupedDataset::new(features, labels, groups, 4)
}

/// Fixed draw of `m` directions on the unit sphere in R^p.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomFeatureMap {
    pub weights: Array2<f64>,
}

impl RandomFeatureMap {
    pub fn new(p: usize, m: usize, seed: u64) -> Result<Self> {
        if m == 0 || p == 0 {
            return invalid("random features need m >= 1 and p >= 1");
        }
        let mut rng = rng_from_seed(seed);
        let mut weights = Array2::zeros((m, p));
        for mut row in weights.rows_mut() {
            loop {
                row.iter_mut().for_each(|v| *v = normal(&mut rng));
                let nrm = row.dot(&row).sqrt();
                if nrm > 0.0 {
                    row /= nrm;
                    break;
                }
            }
        }
        Ok(Self { weights })
    }

    /// `ReLU(X Wᵀ)`.
    pub fn apply(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.weights.ncols() {
            return invalid(format!(
                "input has {} columns, feature map expects {}",
                x.ncols(),
                self.weights.ncols()
            ));
        }
        Ok(x.dot(&self.weights.t()).mapv(|v| v.max(0.0)))
    }
}

pub fn relu_random_features(x: &Array2<f64>, m: usize, seed: u64) -> Result<Array2<f64>> {
    RandomFeatureMap::new(x.ncols(), m, seed)?.apply(x)
}

/// One Gaussian blob per group in the plane; group `g` gets `n_per_group[g]`
/// rows centred at `means[g]` with isotropic std `stds[g]` and label
/// `labels[g]`.
pub fn gaussian_mixture_2d(
    n_per_group: &[usize],
    means: &[[f64; 2]],
    stds: &[f64],
    labels: &[i64],
    seed: u64,
) -> Result<GroupedDataset> {
    let k = n_per_group.len();
    if means.len() != k || stds.len() != k || labels.len() != k {
        return invalid("mixture arrays must have equal length");
    }
    if stds.iter().any(|s| !(*s >= 0.0)) {
        return invalid("mixture stds must be >= 0");
    }
    let mut rng = rng_from_seed(seed);
    let n: usize = n_per_group.iter().sum();
    let mut data = Vec::with_capacity(2 * n);
    let mut ys = Vec::with_capacity(n);
    let mut gs = Vec::with_capacity(n);
    for g in 0..k {
        for _ in 0..n_per_group[g] {
            data.push(means[g][0] + stds[g] * normal(&mut rng));
            data.push(means[g][1] + stds[g] * normal(&mut rng));
            ys.push(labels[g]);
            gs.push(g);
        }
    }
    let features = Array2::from_shape_vec((n, 2), data).expect("shape matches");
    GroupedDataset::new(features, ys, gs, k)
}

/// Two-blob toy: majority `+1` around (1.5, 1.5) and minority `-1` around
/// (-1.5, -1.5), std 0.5, sized `ratio·n_min : n_min`.
pub fn toy_mixture(n_min: usize, ratio: usize, seed: u64) -> Result<GroupedDataset> {
    gaussian_mixture_2d(
        &[ratio * n_min, n_min],
        &[[1.5, 1.5], [-1.5, -1.5]],
        &[0.5, 0.5],
        &[1, -1],
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_imbalance_counts() {
        let ds = make_step_imbalanced(gaussian_class_sampler(4, 1.0, 0.1), 4, 100, 10, 0).unwrap();
        assert_eq!(ds.group_counts, vec![100, 100, 10, 10]);
        assert_eq!(ds.imbalance_ratio(), 10.0);
        assert_eq!(ds.groups.iter().map(|&g| g as i64).collect::<Vec<_>>(), ds.labels);

        let ds = make_step_imbalanced(gaussian_class_sampler(2, 1.0, 0.1), 2, 50, 50, 0).unwrap();
        assert_eq!(ds.imbalance_ratio(), 1.0);

        let ds = make_step_imbalanced(gaussian_class_sampler(10, 1.0, 0.1), 10, 500, 5, 0).unwrap();
        assert_eq!(ds.imbalance_ratio(), 100.0);
        assert_eq!(ds.n(), 2525);
    }

    #[test]
    fn step_imbalance_rejects_odd_k() {
        assert!(make_step_imbalanced(gaussian_class_sampler(3, 1.0, 0.1), 3, 10, 5, 0).is_err());
        assert!(make_step_imbalanced(gaussian_class_sampler(4, 1.0, 0.1), 4, 5, 10, 0).is_err());
    }

    #[test]
    fn group_encoding_roundtrip() {
        for g in 0..4 {
            let (y, a) = spurious_group_pair(g);
            assert_eq!(spurious_group(y, a), g);
            assert_eq!(spurious_group_is_minority(g), a != y);
        }
    }

    #[test]
    fn spurious_vector_shape_and_noiseless_rows() {
        let cfg = SpuriousVectorConfig::default();
        let ds = sample_spurious_vector(&cfg, 1).unwrap();
        assert_eq!((ds.n(), ds.dim(), ds.n_groups()), (3000, 200, 4));

        let cfg = SpuriousVectorConfig {
            d: 3,
            sigma_core: 0.0,
            sigma_spu: 0.0,
            n_maj: 10,
            n_min: 4,
        };
        let ds = sample_spurious_vector(&cfg, 2).unwrap();
        for i in 0..ds.n() {
            if !spurious_group_is_minority(ds.groups[i]) {
                let y = ds.labels[i] as f64;
                assert!(ds.row(i).iter().all(|&v| v == y));
            }
        }
    }

    #[test]
    fn spurious_scalar_zero_spurious_noise() {
        let p = SpuriousParams {
            noise_dim: 5,
            n_maj: 20,
            n_min: 6,
            mu_s: 2.5,
            ..SpuriousParams::default()
        };
        let ds = sample_spurious_scalar(&p, 3).unwrap();
        for i in 0..ds.n() {
            let (_, a) = spurious_group_pair(ds.groups[i]);
            assert_eq!(ds.row(i)[1], 2.5 * a as f64);
        }
    }

    #[test]
    fn spurious_scalar_noiseless_is_four_points() {
        let p = SpuriousParams {
            sigma_c: 0.0,
            sigma_s: 0.0,
            sigma_n: 0.0,
            noise_dim: 3,
            n_maj: 10,
            n_min: 4,
            ..SpuriousParams::default()
        };
        let ds = sample_spurious_scalar(&p, 4).unwrap();
        let mut distinct: Vec<Vec<u64>> = (0..ds.n())
            .map(|i| ds.row(i).iter().map(|v| (v + 0.0).to_bits()).collect())
            .collect();
        distinct.sort();
        distinct.dedup();
        assert_eq!(distinct.len(), 4);
    }

    #[test]
    fn spurious_scalar_noise_norm_per_n() {
        let p = SpuriousParams {
            sigma_n: 0.7,
            n_maj: 80,
            n_min: 20,
            noise_dim: 1000,
            ..SpuriousParams::default()
        };
        let ds = sample_spurious_scalar(&p, 5).unwrap();
        let mean: f64 = (0..ds.n())
            .map(|i| ds.row(i)[2..].iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            / ds.n() as f64;
        let target = 0.49 * 100.0;
        assert!((mean / target - 1.0).abs() < 0.05, "{mean} vs {target}");
    }

    #[test]
    fn random_feature_rows_are_unit() {
        let map = RandomFeatureMap::new(7, 50, 9).unwrap();
        for row in map.weights.rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-12);
        }
        let zeros = Array2::<f64>::zeros((4, 7));
        assert!(map.apply(&zeros).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn random_feature_self_evaluation() {
        let map = RandomFeatureMap::new(5, 1, 11).unwrap();
        let x = map.weights.clone();
        let out = map.apply(&x).unwrap();
        assert!((out[[0, 0]] - 1.0).abs() < 1e-12);
        assert_eq!(relu_random_features(&x, 1, 11).unwrap(), out);
    }

    #[test]
    fn mixture_counts_and_determinism() {
        let a = toy_mixture(10, 10, 3).unwrap();
        assert_eq!(a.group_counts, vec![100, 10]);
        assert_eq!(a, toy_mixture(10, 10, 3).unwrap());
        assert_ne!(a, toy_mixture(10, 10, 4).unwrap());
    }

    #[test]
    fn csv_roundtrip() {
        let ds = toy_mixture(3, 2, 1).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x0,x1,y,g\n"));
        let back = GroupedDataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn dataset_validation() {
        let x = Array2::zeros((3, 1));
        assert!(GroupedDataset::new(x.clone(), vec![1, 1, 1], vec![0, 0, 2], 3).is_err());
        assert!(GroupedDataset::new(x.clone(), vec![1, 1], vec![0, 0, 0], 1).is_err());
        assert!(GroupedDataset::new(x, vec![1, 2, 1], vec![0, 1, 0], 2).is_ok());
    }
}
