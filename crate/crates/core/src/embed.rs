//! Stiffness analysis: exact t-SNE on grayscale tactile images and
//! cluster-separability scores of the resulting embedding.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{data, domain, Error, Result};
use crate::imageproc::{ImageU8, ManifestEntry};
use crate::phantom::{Material, ParisType};

/// Forces (N) at which every stiffness batch is sampled.
pub const STIFFNESS_FORCES: [f64; 4] = [0.2, 0.4, 0.6, 0.8];
/// Variations of each type that take part in the stiffness analysis.
pub const STIFFNESS_VARIATIONS: [u8; 2] = [1, 2];
pub const KNN_K: usize = 3;
/// Scale of the PCA initialisation (standard deviation of the first axis).
pub const INIT_SCALE: f64 = 1e-4;
const P_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// `N x dims`, row-major.
    pub points: Vec<Vec<f64>>,
    /// Eigenvalues of the centred Gram matrix, largest first.
    pub variances: Vec<f64>,
    /// Set when every row is identical; the projection is then all zeros.
    pub degenerate: bool,
}

fn check_rows(x: &[Vec<f64>]) -> Result<usize> {
    let d = x.first().map_or(0, Vec::len);
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return domain("rows must be non-empty and of equal length");
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return domain("input contains non-finite values");
    }
    Ok(d)
}

/// Projects mean-centred rows onto their top principal directions using the
/// N x N Gram matrix, so the cost is independent of the row length. Each
/// component's sign is fixed so its largest-magnitude entry is positive.
pub fn pca_project(x: &[Vec<f64>], dims: usize) -> Result<Projection> {
    let n = x.len();
    if n < 2 || dims == 0 || dims > n {
        return domain(format!("PCA needs at least 2 rows and 1..={n} components"));
    }
    let d = check_rows(x)?;
    let mut mean = vec![0.0; d];
    for r in x {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centred: Vec<Vec<f64>> = x.iter().map(|r| r.iter().zip(&mean).map(|(v, m)| v - m).collect()).collect();
    let gram = DMatrix::from_fn(n, n, |i, j| centred[i].iter().zip(&centred[j]).map(|(a, b)| a * b).sum::<f64>());
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let degenerate = eig.eigenvalues[order[0]] <= 1e-12 * scale || eig.eigenvalues[order[0]] <= 0.0;
    let mut points = vec![vec![0.0; dims]; n];
    let mut variances = Vec::with_capacity(dims);
    for (c, &k) in order.iter().take(dims).enumerate() {
        let lambda = eig.eigenvalues[k].max(0.0);
        variances.push(lambda);
        if degenerate {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        let pivot = (0..n).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).expect("n >= 2");
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            points[i][c] = sign * v[i] * lambda.sqrt();
        }
    }
    Ok(Projection { points, variances, degenerate })
}

pub fn squared_distances(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub n: usize,
    /// Symmetric joint probabilities, row-major, zero diagonal, summing to 1.
    pub p: Vec<f64>,
    /// Conditional probabilities `p_{j|i}` (row i), row-major.
    pub conditional: Vec<f64>,
    /// Per-point Gaussian bandwidths.
    pub sigma: Vec<f64>,
}

/// Shannon entropy in bits and normalised probabilities of
/// `exp(-beta * d_j)`; `d` is shifted by its minimum first.
fn row_entropy(d: &[f64], beta: f64) -> (f64, Vec<f64>) {
    let mut p: Vec<f64> = d.iter().map(|&v| (-beta * v).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    let h = -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.log2()).sum::<f64>();
    (h, p)
}

/// Achieved perplexity `2^H` of each conditional row.
pub fn row_perplexities(aff: &AffinityMatrix) -> Vec<f64> {
    let n = aff.n;
    (0..n)
        .map(|i| {
            let h: f64 = (0..n)
                .filter(|&j| j != i && aff.conditional[i * n + j] > 0.0)
                .map(|j| {
                    let p = aff.conditional[i * n + j];
                    -p * p.log2()
                })
                .sum();
            h.exp2()
        })
        .collect()
}

/// Binary-searches each point's precision so its conditional distribution
/// has the requested perplexity (at most 50 steps, entropy tolerance 1e-5
/// bits), then symmetrises and floors the joint probabilities.
pub fn calibrate_affinities(x: &[Vec<f64>], perplexity: f64) -> Result<AffinityMatrix> {
    let n = x.len();
    check_rows(x)?;
    if !(perplexity >= 1.0) || perplexity >= n as f64 {
        return domain(format!("perplexity {perplexity} must lie in [1, {n})"));
    }
    let dist = squared_distances(x);
    if dist.iter().all(|&v| v == 0.0) {
        return domain("all points are identical");
    }
    let target = perplexity.log2();
    let mut cond = vec![0.0; n * n];
    let mut sigma = vec![0.0; n];
    for i in 0..n {
        let row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist[i * n + j]).collect();
        let min = row.iter().cloned().fold(f64::INFINITY, f64::min);
        let shifted: Vec<f64> = row.iter().map(|v| v - min).collect();
        let mean = shifted.iter().sum::<f64>() / shifted.len() as f64;
        let mut beta = if mean > 0.0 { 1.0 / mean } else { 1.0 };
        let (mut lo, mut hi) = (0.0, f64::INFINITY);
        let (mut h, mut p) = row_entropy(&shifted, beta);
        for _ in 0..50 {
            if (h - target).abs() < 1e-5 {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
            (h, p) = row_entropy(&shifted, beta);
        }
        sigma[i] = (0.5 / beta).sqrt();
        for (k, j) in (0..n).filter(|&j| j != i).enumerate() {
            cond[i * n + j] = p[k];
        }
    }
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(P_FLOOR);
            }
        }
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    Ok(AffinityMatrix { n, p, conditional: cond, sigma })
}

/// Student-t kernel values `(1 + |y_i - y_j|^2)^-1` with a zero diagonal.
fn kernel(y: &[[f64; 2]]) -> Vec<f64> {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
        }
    }
    num
}

/// KL(P || Q) for the embedding `y`.
pub fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let num = kernel(y);
    let z: f64 = num.iter().sum();
    p.iter()
        .zip(&num)
        .filter(|(&pv, _)| pv > 0.0)
        .map(|(&pv, &nv)| pv * (pv / (nv / z).max(P_FLOOR)).ln())
        .sum()
}

/// Gradient `4 sum_j (p_ij - q_ij)(y_i - y_j)(1 + |y_i - y_j|^2)^-1` with
/// P scaled by `exaggeration`, and the un-exaggerated KL divergence.
pub fn tsne_gradient(p: &[f64], y: &[[f64; 2]], exaggeration: f64) -> (Vec<[f64; 2]>, f64) {
    let n = y.len();
    let num = kernel(y);
    let z: f64 = num.iter().sum();
    let mut grad = vec![[0.0; 2]; n];
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let k = i * n + j;
            let q = num[k] / z;
            let w = (exaggeration * p[k] - q) * num[k];
            grad[i][0] += 4.0 * w * (y[i][0] - y[j][0]);
            grad[i][1] += 4.0 * w * (y[i][1] - y[j][1]);
            if p[k] > 0.0 {
                kl += p[k] * (p[k] / q.max(P_FLOOR)).ln();
            }
        }
    }
    (grad, kl)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    /// Per-coordinate adaptive gains on the update.
    pub gains: bool,
    /// Only used when the PCA initialisation is degenerate.
    pub seed: u64,
}

impl TsneConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            perplexity: 5.0,
            iterations: 5000,
            learning_rate: 200.0,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            gains: true,
            seed,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.iterations == 0 {
            return domain("t-SNE needs at least one iteration");
        }
        if !(self.perplexity >= 1.0) || self.perplexity >= n as f64 {
            return domain(format!("perplexity {} must lie in [1, {n})", self.perplexity));
        }
        if !(self.learning_rate > 0.0) || !(self.exaggeration >= 1.0) {
            return domain("learning rate must be positive and exaggeration at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub points: Vec<[f64; 2]>,
    /// KL divergence (against the un-exaggerated P) before each update.
    pub kl_trace: Vec<f64>,
}

/// PCA initialisation rescaled so the first axis has standard deviation
/// `INIT_SCALE`. Falls back to seeded Gaussian noise of that scale when the
/// data have no variance.
pub fn initial_embedding(x: &[Vec<f64>], seed: u64) -> Result<Vec<[f64; 2]>> {
    let proj = pca_project(x, 2)?;
    let n = x.len();
    let col0: Vec<f64> = proj.points.iter().map(|r| r[0]).collect();
    let mean = col0.iter().sum::<f64>() / n as f64;
    let std = (col0.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
    if proj.degenerate || std == 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_SCALE).expect("valid sd");
        return Ok((0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect());
    }
    Ok(proj.points.iter().map(|r| [r[0] / std * INIT_SCALE, r[1] / std * INIT_SCALE]).collect())
}

pub fn tsne_run(x: &[Vec<f64>], cfg: &TsneConfig) -> Result<Embedding> {
    cfg.validate(x.len())?;
    let aff = calibrate_affinities(x, cfg.perplexity)?;
    let y = initial_embedding(x, cfg.seed)?;
    optimize(&aff.p, y, cfg)
}

/// Gradient descent with momentum, early exaggeration and (optionally)
/// adaptive gains: a gain grows by 0.2 when the gradient sign opposes the
/// previous update and shrinks by 0.8 otherwise, floored at 0.01.
pub fn optimize(p: &[f64], mut y: Vec<[f64; 2]>, cfg: &TsneConfig) -> Result<Embedding> {
    let n = y.len();
    if p.len() != n * n {
        return domain("affinity matrix does not match the point count");
    }
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut kl_trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let ex = if it < cfg.exaggeration_iters { cfg.exaggeration } else { 1.0 };
        let mom = if it < cfg.momentum_switch { cfg.initial_momentum } else { cfg.final_momentum };
        let (grad, kl) = tsne_gradient(p, &y, ex);
        if !kl.is_finite() || grad.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::Internal(format!("t-SNE diverged at iteration {it}")));
        }
        kl_trace.push(kl);
        for i in 0..n {
            for c in 0..2 {
                if cfg.gains {
                    let g = &mut gains[i][c];
                    *g = if (grad[i][c] > 0.0) != (update[i][c] > 0.0) { *g + 0.2 } else { *g * 0.8 };
                    *g = g.max(0.01);
                }
                update[i][c] = mom * update[i][c] - cfg.learning_rate * gains[i][c] * grad[i][c];
                y[i][c] += update[i][c];
            }
        }
        if y.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Internal(format!("t-SNE coordinates overflowed at iteration {it}")));
        }
    }
    Ok(Embedding { points: y, kl_trace })
}

fn dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Indices of the `k` nearest other points, ties broken by index.
pub fn nearest_neighbors(points: &[[f64; 2]], i: usize, k: usize) -> Vec<usize> {
    let mut others: Vec<(f64, usize)> =
        (0..points.len()).filter(|&j| j != i).map(|j| (dist(&points[i], &points[j]), j)).collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    others.into_iter().take(k).map(|(_, j)| j).collect()
}

/// Mean, over the points in `subset`, of the fraction of each point's `k`
/// nearest neighbours (searched among all points) sharing its label.
pub fn knn_agreement<L: PartialEq>(points: &[[f64; 2]], labels: &[L], subset: &[usize], k: usize) -> f64 {
    if subset.is_empty() || points.len() < 2 {
        return 0.0;
    }
    let total: f64 = subset
        .iter()
        .map(|&i| {
            let nn = nearest_neighbors(points, i, k);
            nn.iter().filter(|&&j| labels[j] == labels[i]).count() as f64 / nn.len() as f64
        })
        .sum();
    total / subset.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Silhouette {
    /// Mean over points whose cluster has at least two members; `None` with
    /// fewer than two labels.
    pub mean: Option<f64>,
    /// Per-label mean, `None` for labels with fewer than two points.
    pub per_label: Vec<Option<f64>>,
}

/// Silhouette coefficients with Euclidean distance. Labels are `0..n_labels`.
pub fn silhouette(points: &[[f64; 2]], labels: &[usize], n_labels: usize) -> Silhouette {
    let counts: Vec<usize> = (0..n_labels).map(|l| labels.iter().filter(|&&x| x == l).count()).collect();
    let present = counts.iter().filter(|&&c| c > 0).count();
    let mut per_sum = vec![0.0; n_labels];
    for i in 0..points.len() {
        let li = labels[i];
        if counts[li] < 2 || present < 2 {
            continue;
        }
        let mut sums = vec![0.0; n_labels];
        for j in 0..points.len() {
            if j != i {
                sums[labels[j]] += dist(&points[i], &points[j]);
            }
        }
        let a = sums[li] / (counts[li] - 1) as f64;
        let b = (0..n_labels)
            .filter(|&l| l != li && counts[l] > 0)
            .map(|l| sums[l] / counts[l] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        per_sum[li] += if m > 0.0 { (b - a) / m } else { 0.0 };
    }
    let per_label: Vec<Option<f64>> = (0..n_labels)
        .map(|l| (counts[l] >= 2 && present >= 2).then(|| per_sum[l] / counts[l] as f64))
        .collect();
    let used: usize = (0..n_labels).filter(|&l| per_label[l].is_some()).map(|l| counts[l]).sum();
    let mean = (used > 0).then(|| per_sum.iter().sum::<f64>() / used as f64);
    Silhouette { mean, per_label }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceReport {
    pub force_n: f64,
    pub points: usize,
    pub knn_agreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub silhouette: Option<f64>,
    pub silhouette_per_material: Vec<Option<f64>>,
    pub knn_agreement: f64,
    /// All embedded points coincide.
    pub degenerate: bool,
    pub per_force: Vec<ForceReport>,
}

/// Separability of material labels in an embedding. With `forces`, also
/// reports the agreement of the points pressed at each distinct force
/// (their neighbours are still searched among all points).
pub fn stiffness_report(points: &[[f64; 2]], materials: &[Material], forces: Option<&[f64]>) -> Result<ClusterReport> {
    if materials.len() != points.len() || forces.is_some_and(|f| f.len() != points.len()) {
        return domain("label count does not match point count");
    }
    let labels: Vec<usize> = materials.iter().map(|m| m.code() as usize).collect();
    let degenerate = points.windows(2).all(|w| w[0] == w[1]);
    let all: Vec<usize> = (0..points.len()).collect();
    let sil = silhouette(points, &labels, Material::ALL.len());
    let mut per_force = Vec::new();
    if let Some(f) = forces {
        let mut levels: Vec<f64> = f.to_vec();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        for level in levels {
            let idx: Vec<usize> = (0..f.len()).filter(|&i| f[i] == level).collect();
            per_force.push(ForceReport {
                force_n: level,
                points: idx.len(),
                knn_agreement: knn_agreement(points, &labels, &idx, KNN_K),
            });
        }
    }
    Ok(ClusterReport {
        silhouette: if degenerate { Some(0.0) } else { sil.mean },
        silhouette_per_material: sil.per_label,
        knn_agreement: knn_agreement(points, &labels, &all, KNN_K),
        degenerate,
        per_force,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StiffnessBatch {
    pub paris_type: ParisType,
    pub variation: u8,
    /// Material-major, then ascending force.
    pub entries: Vec<ManifestEntry>,
    pub images: Vec<ImageU8>,
}

impl StiffnessBatch {
    /// Grayscale pixels scaled to [0, 1], one row per image.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.images.iter().map(|im| im.data.iter().map(|&v| v as f64 / 255.0).collect()).collect()
    }
}

/// Collects the unaugmented rows of one (type, variation): every material at
/// every stiffness force, material-major. `load` turns a row into the
/// embedding input image.
pub fn stiffness_batch(
    manifest: &[ManifestEntry],
    paris_type: ParisType,
    variation: u8,
    mut load: impl FnMut(&ManifestEntry) -> Result<ImageU8>,
) -> Result<StiffnessBatch> {
    let mut entries = Vec::with_capacity(12);
    for m in Material::ALL {
        for f in STIFFNESS_FORCES {
            let e = manifest
                .iter()
                .find(|e| {
                    e.paris_type == paris_type
                        && e.variation == variation
                        && e.material == m
                        && (e.force_n - f).abs() < 1e-9
                        && (e.aug_tag.is_empty() || e.aug_tag == "orig")
                })
                .ok_or_else(|| {
                    Error::Data(format!("manifest has no frame for {}-{variation}-{} at {f} N", paris_type.name(), m.name()))
                })?;
            entries.push(e.clone());
        }
    }
    let images = entries.iter().map(&mut load).collect::<Result<Vec<_>>>()?;
    if images.windows(2).any(|w| w[0].data.len() != w[1].data.len()) {
        return data(format!("batch {}-{variation} has images of different sizes", paris_type.name()));
    }
    Ok(StiffnessBatch { paris_type, variation, entries, images })
}

/// One batch per (type, variation) for variations 1 and 2, type-major.
pub fn build_stiffness_batches(
    manifest: &[ManifestEntry],
    mut load: impl FnMut(&ManifestEntry) -> Result<ImageU8>,
) -> Result<Vec<StiffnessBatch>> {
    let mut out = Vec::with_capacity(8);
    for t in ParisType::ALL {
        for v in STIFFNESS_VARIATIONS {
            out.push(stiffness_batch(manifest, t, v, &mut load)?);
        }
    }
    Ok(out)
}
