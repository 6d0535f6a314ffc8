//! Evaluation metrics over motion / text feature vectors: R-precision, FID,
//! MM distance, diversity and multimodality.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::StubEmbedder;
use crate::error::{Error, Result};
use crate::motion::PoseFeatures;
use crate::util::stage_seed;

/// Motion feature rows, optionally paired row-by-row with text features and
/// grouped by prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub dim: usize,
    pub rows: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_ids: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paired_text_rows: Option<Vec<Vec<f64>>>,
}

impl FeatureSet {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let f = FeatureSet {
            dim,
            rows,
            group_ids: None,
            paired_text_rows: None,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn paired(motion: Vec<Vec<f64>>, text: Vec<Vec<f64>>) -> Result<Self> {
        let mut f = FeatureSet::new(motion)?;
        f.paired_text_rows = Some(text);
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |rows: &[Vec<f64>], what: &str| -> Result<()> {
            for (i, r) in rows.iter().enumerate() {
                if r.len() != self.dim {
                    return Err(Error::invalid(format!("{what} row {i} has {} values, expected {}", r.len(), self.dim)));
                }
                if r.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid(format!("{what} row {i} has non-finite values")));
                }
            }
            Ok(())
        };
        check(&self.rows, "motion")?;
        if let Some(t) = &self.paired_text_rows {
            if t.len() != self.rows.len() {
                return Err(Error::invalid(format!(
                    "{} motion rows but {} text rows",
                    self.rows.len(),
                    t.len()
                )));
            }
            check(t, "text")?;
        }
        if let Some(g) = &self.group_ids {
            if g.len() != self.rows.len() {
                return Err(Error::invalid(format!("{} rows but {} group ids", self.rows.len(), g.len())));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn text_rows(&self) -> Result<&[Vec<f64>]> {
        self.paired_text_rows
            .as_deref()
            .ok_or_else(|| Error::invalid("feature set has no paired text rows"))
    }

    /// Rows grouped by `group_ids`, in ascending group order.
    pub fn groups(&self) -> Result<BTreeMap<&str, Vec<&[f64]>>> {
        let ids = self
            .group_ids
            .as_ref()
            .ok_or_else(|| Error::invalid("feature set has no group ids"))?;
        let mut out: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
        for (id, row) in ids.iter().zip(&self.rows) {
            out.entry(id.as_str()).or_default().push(row);
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: FeatureSet = serde_json::from_str(&text).map_err(|e| Error::parse(path, None, e))?;
        f.validate().map_err(|e| Error::parse(path, None, e))?;
        Ok(f)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("feature set serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Top-1, top-2 and top-3 retrieval precision. Rows are shuffled with `seed`
/// and split into batches of `batch_size` (a trailing partial batch is
/// dropped); within a batch each motion ranks all batch texts by Euclidean
/// distance.
pub fn r_precision_all(features: &FeatureSet, batch_size: usize, seed: u64) -> Result<[f64; 3]> {
    let texts = features.text_rows()?;
    let m = features.len();
    if batch_size == 0 || m < batch_size {
        return Err(Error::invalid(format!("r-precision needs at least {batch_size} rows, got {m}")));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut hits = [0usize; 3];
    let mut total = 0usize;
    for batch in order.chunks_exact(batch_size) {
        for &i in batch {
            let own = dist(&features.rows[i], &texts[i]);
            let closer = batch
                .iter()
                .filter(|&&j| j != i && dist(&features.rows[i], &texts[j]) < own)
                .count();
            for (k, h) in hits.iter_mut().enumerate() {
                if closer <= k {
                    *h += 1;
                }
            }
            total += 1;
        }
    }
    Ok(hits.map(|h| h as f64 / total as f64))
}

pub fn r_precision(features: &FeatureSet, k: usize, batch_size: usize, seed: u64) -> Result<f64> {
    if !(1..=3).contains(&k) {
        return Err(Error::invalid(format!("r-precision top-k must be 1, 2 or 3, got {k}")));
    }
    Ok(r_precision_all(features, batch_size, seed)?[k - 1])
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let d = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j])
}

/// Sample mean and (n − 1)-normalized covariance.
pub fn moments(rows: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if rows.len() < 2 {
        return Err(Error::invalid("moments need at least two rows"));
    }
    let x = to_matrix(rows);
    let n = x.nrows() as f64;
    let mean = x.row_mean().transpose();
    let centered = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1.0);
    Ok((mean, cov))
}

/// Principal square root of a symmetric positive semi-definite matrix.
/// Eigenvalues down to `−1e-8 · max(1, |λ|max)` are clipped to zero.
pub fn matrix_sqrt_psd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::invalid("matrix square root needs a square matrix"));
    }
    let scale = a.amax().max(1.0);
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-8 * scale {
                return Err(Error::invalid(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lmax = eig.eigenvalues.amax().max(1.0);
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -1e-8 * lmax {
            return Err(Error::invalid(format!("matrix is indefinite (eigenvalue {v})")));
        }
        *v = v.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&roots) * q.transpose())
}

/// `‖μ₁ − μ₂‖² + Tr(Σ₁ + Σ₂ − 2(Σ₁Σ₂)^½)`, clamped at zero.
pub fn fid_from_moments(mu1: &DVector<f64>, s1: &DMatrix<f64>, mu2: &DVector<f64>, s2: &DMatrix<f64>) -> Result<f64> {
    let d = mu1.len();
    if mu2.len() != d || s1.shape() != (d, d) || s2.shape() != (d, d) {
        return Err(Error::invalid("fid moments have mismatched dimensions"));
    }
    // Tr((Σ₁Σ₂)^½) = Tr((√Σ₁ Σ₂ √Σ₁)^½), and the inner product is symmetric
    let r1 = matrix_sqrt_psd(s1)?;
    let inner = &r1 * s2 * &r1;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = matrix_sqrt_psd(&inner)?.trace();
    let diff = mu1 - mu2;
    let v = diff.dot(&diff) + s1.trace() + s2.trace() - 2.0 * cross;
    Ok(v.max(0.0))
}

pub fn fid(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let da = a.first().map_or(0, Vec::len);
    let db = b.first().map_or(0, Vec::len);
    if da != db {
        return Err(Error::invalid(format!("fid dimension mismatch: {da} vs {db}")));
    }
    let (m1, s1) = moments(a)?;
    let (m2, s2) = moments(b)?;
    fid_from_moments(&m1, &s1, &m2, &s2)
}

/// `n` indices drawn by concatenating fresh permutations of `0..len`.
fn permuted_indices(len: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut p: Vec<usize> = (0..len).collect();
        p.shuffle(rng);
        out.extend(p);
    }
    out.truncate(n);
    out
}

/// Mean distance over `n_pairs` index pairs taken position-wise from two
/// independent shuffles of the rows.
pub fn diversity(rows: &[Vec<f64>], n_pairs: usize, seed: u64) -> Result<f64> {
    if rows.len() < 2 {
        return Err(Error::invalid("diversity needs at least two rows"));
    }
    if n_pairs == 0 {
        return Err(Error::invalid("diversity needs at least one pair"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = permuted_indices(rows.len(), n_pairs, &mut rng);
    let b = permuted_indices(rows.len(), n_pairs, &mut rng);
    let total: f64 = a.iter().zip(&b).map(|(&i, &j)| dist(&rows[i], &rows[j])).sum();
    Ok(total / n_pairs as f64)
}

/// Per group, two disjoint random subsets of `n_per_group` rows are paired
/// position-wise; the result is the mean pair distance averaged over groups.
pub fn multimodality(features: &FeatureSet, n_per_group: usize, seed: u64) -> Result<f64> {
    if n_per_group == 0 {
        return Err(Error::invalid("multimodality needs n_per_group >= 1"));
    }
    let groups = features.groups()?;
    if groups.is_empty() {
        return Err(Error::invalid("multimodality needs at least one group"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    for (id, rows) in &groups {
        if rows.len() < 2 * n_per_group {
            return Err(Error::invalid(format!(
                "group {id:?} has {} rows, multimodality needs {}",
                rows.len(),
                2 * n_per_group
            )));
        }
        let mut idx: Vec<usize> = (0..rows.len()).collect();
        idx.shuffle(&mut rng);
        let (a, b) = idx[..2 * n_per_group].split_at(n_per_group);
        let d: f64 = a.iter().zip(b).map(|(&i, &j)| dist(rows[i], rows[j])).sum();
        sum += d / n_per_group as f64;
    }
    Ok(sum / groups.len() as f64)
}

pub fn mm_dist(features: &FeatureSet) -> Result<f64> {
    let texts = features.text_rows()?;
    if features.is_empty() {
        return Err(Error::invalid("mm-dist needs at least one pair"));
    }
    let total: f64 = features.rows.iter().zip(texts).map(|(m, t)| dist(m, t)).sum();
    Ok(total / features.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub batch_size: usize,
    pub diversity_pairs: usize,
    pub mm_per_group: usize,
    pub repetitions: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            batch_size: 32,
            diversity_pairs: 300,
            mm_per_group: 10,
            repetitions: 20,
        }
    }
}

/// A metric value with the half-width of its 95% confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci95: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        if xs.len() < 2 {
            return Estimate { mean, ci95: 0.0 };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Estimate {
            mean,
            ci95: 1.96 * var.sqrt() / n.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub r_precision_top1: Option<Estimate>,
    pub r_precision_top2: Option<Estimate>,
    pub r_precision_top3: Option<Estimate>,
    pub fid: Option<Estimate>,
    pub mm_dist: Option<Estimate>,
    pub diversity: Option<Estimate>,
    pub multimodality: Option<Estimate>,
    pub repetitions: usize,
}

fn bootstrap(rows: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..rows.len()).map(|_| rng.random_range(0..rows.len())).collect()
}

/// Every metric the inputs allow, each repeated `cfg.repetitions` times with
/// derived seeds. R-precision, diversity and multimodality vary through
/// their own sampling; FID and MM distance through bootstrap resampling of
/// rows (the first repetition uses the rows as given).
pub fn evaluate(generated: &FeatureSet, real: Option<&FeatureSet>, cfg: &MetricConfig, seed: u64) -> Result<MetricReport> {
    generated.validate()?;
    if cfg.repetitions == 0 {
        return Err(Error::invalid("metric repetitions must be at least 1"));
    }
    if let Some(r) = real {
        r.validate()?;
        if r.dim != generated.dim {
            return Err(Error::invalid(format!("feature dims differ: {} vs {}", generated.dim, r.dim)));
        }
    }
    let paired = generated.paired_text_rows.is_some();
    let rp_ok = paired && generated.len() >= cfg.batch_size;
    let mm_ok = generated.group_ids.is_some();
    let mut rp = [Vec::new(), Vec::new(), Vec::new()];
    let (mut fids, mut mms, mut divs, mut mods) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for rep in 0..cfg.repetitions {
        let s = stage_seed(seed, &format!("metrics:{rep}"));
        if rp_ok {
            let v = r_precision_all(generated, cfg.batch_size, s)?;
            for k in 0..3 {
                rp[k].push(v[k]);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(s, "bootstrap"));
        if let Some(r) = real {
            let (a, b) = if rep == 0 {
                (generated.rows.clone(), r.rows.clone())
            } else {
                let ia = bootstrap(&generated.rows, &mut rng);
                let ib = bootstrap(&r.rows, &mut rng);
                (
                    ia.iter().map(|&i| generated.rows[i].clone()).collect(),
                    ib.iter().map(|&i| r.rows[i].clone()).collect(),
                )
            };
            fids.push(fid(&a, &b)?);
        }
        if paired {
            let fs = if rep == 0 {
                generated.clone()
            } else {
                let idx = bootstrap(&generated.rows, &mut rng);
                let texts = generated.text_rows()?;
                FeatureSet::paired(
                    idx.iter().map(|&i| generated.rows[i].clone()).collect(),
                    idx.iter().map(|&i| texts[i].clone()).collect(),
                )?
            };
            mms.push(mm_dist(&fs)?);
        }
        if generated.len() >= 2 {
            divs.push(diversity(&generated.rows, cfg.diversity_pairs, stage_seed(s, "diversity"))?);
        }
        if mm_ok {
            mods.push(multimodality(generated, cfg.mm_per_group, stage_seed(s, "multimodality"))?);
        }
    }
    let est = |v: &Vec<f64>| (!v.is_empty()).then(|| Estimate::from_samples(v));
    Ok(MetricReport {
        r_precision_top1: est(&rp[0]),
        r_precision_top2: est(&rp[1]),
        r_precision_top3: est(&rp[2]),
        fid: est(&fids),
        mm_dist: est(&mms),
        diversity: est(&divs),
        multimodality: est(&mods),
        repetitions: cfg.repetitions,
    })
}

/// Deterministic stand-in for a learned motion encoder: per-channel mean and
/// standard deviation over time, passed through a fixed Gaussian random
/// projection to `dim` values.
#[derive(Debug, Clone)]
pub struct StubMotionEncoder {
    dim: usize,
    input: usize,
    projection: DMatrix<f64>,
}

impl StubMotionEncoder {
    pub fn new(feature_dim: usize, dim: usize) -> Self {
        let input = 2 * feature_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f_e4c0de);
        let scale = 1.0 / (input as f64).sqrt();
        let projection = DMatrix::from_fn(dim, input, |_, _| {
            let z: f64 = rng.sample(StandardNormal);
            z * scale
        });
        StubMotionEncoder { dim, input, projection }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn encode(&self, x: &PoseFeatures) -> Result<Vec<f64>> {
        if 2 * x.dim() != self.input {
            return Err(Error::invalid(format!(
                "encoder expects {} channels, got {}",
                self.input / 2,
                x.dim()
            )));
        }
        if x.frames() == 0 {
            return Err(Error::invalid("cannot encode an empty sequence"));
        }
        let n = x.frames() as f64;
        let d = x.dim();
        let mut summary: DVector<f64> = DVector::zeros(self.input);
        for row in x.rows() {
            for c in 0..d {
                summary[c] += row[c] / n;
            }
        }
        for row in x.rows() {
            for c in 0..d {
                summary[d + c] += (row[c] - summary[c]).powi(2) / n;
            }
        }
        for c in 0..d {
            summary[d + c] = summary[d + c].sqrt();
        }
        Ok((&self.projection * summary).iter().copied().collect())
    }
}

/// Text side of the stub evaluator: the hashed bag-of-words embedding.
pub fn stub_text_features(text: &str, dim: usize) -> Vec<f64> {
    let raw = StubEmbedder::new(dim).raw(text);
    let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        raw.iter().map(|v| v / n).collect()
    } else {
        raw
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_of_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let s = matrix_sqrt_psd(&a).unwrap();
        assert!((s[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((s[(1, 1)] - 3.0).abs() < 1e-12);
        assert!(s[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn sqrt_rejects_indefinite_and_asymmetric() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matrix_sqrt_psd(&a).is_err());
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matrix_sqrt_psd(&b).is_err());
    }

    #[test]
    fn mm_dist_hand_value() {
        let f = FeatureSet::paired(vec![vec![0.0, 0.0]], vec![vec![3.0, 4.0]]).unwrap();
        assert_eq!(mm_dist(&f).unwrap(), 5.0);
    }

    #[test]
    fn undersized_group_is_named() {
        let mut f = FeatureSet::new(vec![vec![0.0]; 3]).unwrap();
        f.group_ids = Some(vec!["a".into(), "a".into(), "b".into()]);
        let err = multimodality(&f, 1, 0).unwrap_err();
        assert!(err.to_string().contains("\"b\""), "{err}");
    }
}
