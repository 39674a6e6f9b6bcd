//! Localization descriptor kernels: k-means vocabulary, VLAD aggregation and
//! PCA compression.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::vector::normalize_f64;

pub const DEFAULT_VLAD_CENTERS: usize = 32;
pub const DEFAULT_PCA_DIM: usize = 512;

const KMEANS_MAX_ITER: usize = 100;
const KMEANS_REL_TOL: f64 = 1e-4;
const RANK_REL_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DescriptorError {
    #[error("no features supplied")]
    Empty,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in input")]
    NonFinite,
    #[error("data has rank {rank}, below the requested {requested} components")]
    RankDeficient { rank: usize, requested: usize },
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

/// Dense local features of one image, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    dim: usize,
    data: Vec<f64>,
}

impl FeatureSet {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self, DescriptorError> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(DescriptorError::Invalid(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DescriptorError::NonFinite);
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, DescriptorError> {
        let dim = rows.first().ok_or(DescriptorError::Empty)?.as_ref().len();
        let mut data = Vec::with_capacity(dim * rows.len());
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(DescriptorError::DimensionMismatch { expected: dim, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VladVocabulary {
    k: usize,
    dim: usize,
    centroids: Vec<f64>,
}

impl VladVocabulary {
    pub fn new(k: usize, dim: usize, centroids: Vec<f64>) -> Result<Self, DescriptorError> {
        if k == 0 || dim == 0 || centroids.len() != k * dim {
            return Err(DescriptorError::Invalid(format!(
                "{} values for a {k}x{dim} vocabulary",
                centroids.len()
            )));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(DescriptorError::NonFinite);
        }
        Ok(Self { k, dim, centroids })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }

    /// Length of a VLAD descriptor built on this vocabulary.
    pub fn descriptor_len(&self) -> usize {
        self.k * self.dim
    }

    /// Nearest centroid; ties resolve to the lowest index.
    pub fn assign(&self, f: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for c in 0..self.k {
            let d = sq_dist(f, self.centroid(c));
            if d < best.1 {
                best = (c, d);
            }
        }
        best
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Outcome of a k-means fit with its per-iteration inertia.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub vocabulary: VladVocabulary,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
}

impl KMeansFit {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().unwrap_or(&0.0)
    }
}

pub fn fit_vocabulary(sets: &[FeatureSet], k: usize, seed: u64) -> Result<VladVocabulary, DescriptorError> {
    kmeans(sets, k, seed).map(|f| f.vocabulary)
}

/// Lloyd's k-means with k-means++ seeding over the pooled features.
pub fn kmeans(sets: &[FeatureSet], k: usize, seed: u64) -> Result<KMeansFit, DescriptorError> {
    if k == 0 {
        return Err(DescriptorError::Invalid("k must be >= 1".into()));
    }
    let first = sets.iter().find(|s| !s.is_empty()).ok_or(DescriptorError::Empty)?;
    let dim = first.dim();
    let mut points: Vec<&[f64]> = Vec::new();
    for s in sets {
        if s.is_empty() {
            continue;
        }
        if s.dim() != dim {
            return Err(DescriptorError::DimensionMismatch { expected: dim, got: s.dim() });
        }
        points.extend(s.rows());
    }
    if points.len() < k {
        return Err(DescriptorError::TooFewSamples { needed: k, got: points.len() });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seeds(&points, k, dim, &mut rng);
    let mut history = Vec::new();

    for _ in 0..KMEANS_MAX_ITER {
        let vocab = VladVocabulary { k, dim, centroids: centroids.clone() };
        let assignment: Vec<(usize, f64)> = points.par_iter().map(|p| vocab.assign(p)).collect();
        let inertia: f64 = assignment.iter().map(|a| a.1).sum();
        let prev = history.last().copied();
        history.push(inertia);

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (p, &(c, _)) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        for c in 0..k {
            // empty clusters keep their previous centroid
            if counts[c] > 0 {
                for d in 0..dim {
                    centroids[c * dim + d] = sums[c * dim + d] / counts[c] as f64;
                }
            }
        }

        if let Some(prev) = prev {
            if prev == 0.0 || (prev - inertia).abs() / prev < KMEANS_REL_TOL {
                break;
            }
        } else if inertia == 0.0 {
            break;
        }
    }

    Ok(KMeansFit { vocabulary: VladVocabulary { k, dim, centroids }, inertia_history: history })
}

fn plus_plus_seeds(points: &[&[f64]], k: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.extend_from_slice(points[first]);
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, points[first])).collect();

    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            // guard against rounding landing on a zero-weight tail
            if d2[idx] == 0.0 {
                idx = d2.iter().rposition(|&w| w > 0.0).unwrap_or(idx);
            }
            idx
        } else {
            (0..n).find(|&i| !chosen[i]).unwrap_or(0)
        };
        chosen[pick] = true;
        centroids.extend_from_slice(points[pick]);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, points[pick]));
        }
    }
    centroids
}

/// Hard-assignment VLAD with per-block intra-normalization followed by a
/// global L2 normalization.
pub fn vlad(set: &FeatureSet, vocab: &VladVocabulary) -> Result<Vec<f64>, DescriptorError> {
    if set.is_empty() {
        return Err(DescriptorError::Empty);
    }
    if set.dim() != vocab.dim {
        return Err(DescriptorError::DimensionMismatch { expected: vocab.dim, got: set.dim() });
    }
    let dim = vocab.dim;
    let mut out = vec![0.0; vocab.descriptor_len()];
    for f in set.rows() {
        let (c, _) = vocab.assign(f);
        let block = &mut out[c * dim..(c + 1) * dim];
        for ((b, x), m) in block.iter_mut().zip(f).zip(vocab.centroid(c)) {
            *b += x - m;
        }
    }
    for block in out.chunks_exact_mut(dim) {
        normalize_f64(block);
    }
    normalize_f64(&mut out);
    Ok(out)
}

/// Mean and orthonormal projection rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaTransform {
    mean: Vec<f64>,
    /// `components × input_dim`, row-major.
    basis: Vec<f64>,
    components: usize,
}

impl PcaTransform {
    pub fn new(mean: Vec<f64>, basis: Vec<f64>, components: usize) -> Result<Self, DescriptorError> {
        let n = mean.len();
        if n == 0 || components == 0 || basis.len() != n * components {
            return Err(DescriptorError::Invalid(format!(
                "basis of {} values does not match {components}x{n}",
                basis.len()
            )));
        }
        if mean.iter().chain(&basis).any(|v| !v.is_finite()) {
            return Err(DescriptorError::NonFinite);
        }
        Ok(Self { mean, basis, components })
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    pub fn basis_row(&self, r: usize) -> &[f64] {
        let n = self.input_dim();
        &self.basis[r * n..(r + 1) * n]
    }

    /// Coordinates of `x - mean` on the basis, unnormalized.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>, DescriptorError> {
        if x.len() != self.input_dim() {
            return Err(DescriptorError::DimensionMismatch { expected: self.input_dim(), got: x.len() });
        }
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok((0..self.components)
            .map(|r| self.basis_row(r).iter().zip(&centered).map(|(b, c)| b * c).sum())
            .collect())
    }

    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (r, &c) in coords.iter().enumerate() {
            for (o, b) in out.iter_mut().zip(self.basis_row(r)) {
                *o += c * b;
            }
        }
        out
    }
}

/// Projects onto the PCA basis and L2-normalizes (zero stays zero).
pub fn reduce(descriptor: &[f64], t: &PcaTransform) -> Result<Vec<f64>, DescriptorError> {
    let mut y = t.project(descriptor)?;
    normalize_f64(&mut y);
    Ok(y)
}

/// Top-`r` principal directions of mean-centered data, without whitening.
pub fn fit_pca<R: AsRef<[f64]>>(descriptors: &[R], r: usize) -> Result<PcaTransform, DescriptorError> {
    let n = descriptors.len();
    if n == 0 {
        return Err(DescriptorError::Empty);
    }
    let dim = descriptors[0].as_ref().len();
    if r == 0 || r > dim {
        return Err(DescriptorError::Invalid(format!("{r} components requested for dimension {dim}")));
    }
    if n < r {
        return Err(DescriptorError::TooFewSamples { needed: r, got: n });
    }
    let mut mean = vec![0.0; dim];
    for d in descriptors {
        let d = d.as_ref();
        if d.len() != dim {
            return Err(DescriptorError::DimensionMismatch { expected: dim, got: d.len() });
        }
        if d.iter().any(|v| !v.is_finite()) {
            return Err(DescriptorError::NonFinite);
        }
        for (m, v) in mean.iter_mut().zip(d) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let x = DMatrix::from_fn(n, dim, |i, j| descriptors[i].as_ref()[j] - mean[j]);

    let mut basis = if dim <= n {
        // covariance route: eigenvectors of XᵀX are the right singular vectors
        let eig = SymmetricEigen::new(x.transpose() * &x);
        let order = descending(eig.eigenvalues.as_slice());
        check_rank(eig.eigenvalues.as_slice(), &order, r)?;
        let mut rows = Vec::with_capacity(r * dim);
        for &idx in order.iter().take(r) {
            rows.extend(eig.eigenvectors.column(idx).iter());
        }
        rows
    } else {
        // Gram route: v = Xᵀu / σ
        let eig = SymmetricEigen::new(&x * x.transpose());
        let order = descending(eig.eigenvalues.as_slice());
        check_rank(eig.eigenvalues.as_slice(), &order, r)?;
        let mut rows = Vec::with_capacity(r * dim);
        for &idx in order.iter().take(r) {
            let u = eig.eigenvectors.column(idx);
            let v = x.transpose() * u;
            let s = v.norm();
            rows.extend(v.iter().map(|a| a / s));
        }
        orthonormalize(&mut rows, dim);
        rows
    };

    canonicalize_signs(&mut basis, dim);
    PcaTransform::new(mean, basis, r)
}

fn descending(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

fn check_rank(values: &[f64], order: &[usize], r: usize) -> Result<(), DescriptorError> {
    let top = values[order[0]].max(0.0);
    let tol = top * RANK_REL_TOL;
    let rank = order.iter().take_while(|&&i| top > 0.0 && values[i] > tol).count();
    if rank < r {
        return Err(DescriptorError::RankDeficient { rank, requested: r });
    }
    Ok(())
}

fn orthonormalize(rows: &mut [f64], dim: usize) {
    let r = rows.len() / dim;
    for i in 0..r {
        for j in 0..i {
            let (done, rest) = rows.split_at_mut(i * dim);
            let prev = &done[j * dim..(j + 1) * dim];
            let cur = &mut rest[..dim];
            let p: f64 = prev.iter().zip(cur.iter()).map(|(a, b)| a * b).sum();
            for (c, a) in cur.iter_mut().zip(prev) {
                *c -= p * a;
            }
        }
        normalize_f64(&mut rows[i * dim..(i + 1) * dim]);
    }
}

/// Flips each row so that its largest-magnitude entry is positive.
fn canonicalize_signs(rows: &mut [f64], dim: usize) {
    for row in rows.chunks_exact_mut(dim) {
        let mut best = 0;
        for (i, v) in row.iter().enumerate() {
            if v.abs() > row[best].abs() {
                best = i;
            }
        }
        if row[best] < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect()).collect()
    }

    #[test]
    fn kmeans_recovers_distinct_points() {
        let pts = vec![vec![0.0, 0.0], vec![5.0, 1.0], vec![-3.0, 4.0], vec![2.0, -7.0]];
        let set = FeatureSet::from_rows(&pts).unwrap();
        let fit = kmeans(&[set], 4, 7).unwrap();
        let mut found: Vec<Vec<f64>> = (0..4).map(|c| fit.vocabulary.centroid(c).to_vec()).collect();
        found.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut want = pts.clone();
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(found, want);
        assert_eq!(fit.inertia(), 0.0);
    }

    #[test]
    fn kmeans_single_cluster_is_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows = gaussian_rows(&mut rng, 50, 3);
        let set = FeatureSet::from_rows(&rows).unwrap();
        let v = fit_vocabulary(&[set], 1, 0).unwrap();
        for d in 0..3 {
            let mean = rows.iter().map(|r| r[d]).sum::<f64>() / 50.0;
            assert!((v.centroid(0)[d] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn kmeans_errors() {
        let set = FeatureSet::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(kmeans(&[set], 2, 0).unwrap_err(), DescriptorError::TooFewSamples { needed: 2, got: 1 });
        assert_eq!(kmeans(&[], 2, 0).unwrap_err(), DescriptorError::Empty);
    }

    #[test]
    fn kmeans_inertia_non_increasing_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sets: Vec<FeatureSet> =
            (0..5).map(|_| FeatureSet::from_rows(&gaussian_rows(&mut rng, 80, 6)).unwrap()).collect();
        let a = kmeans(&sets, 8, 11).unwrap();
        for w in a.inertia_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", a.inertia_history);
        }
        let b = kmeans(&sets, 8, 11).unwrap();
        assert_eq!(a.vocabulary, b.vocabulary);
    }

    /// Brute force: for ≤ 12 points the optimal 2-partition inertia is found by
    /// enumerating all assignments; k-means must not do worse than a random
    /// assignment and should usually hit the optimum on separated blobs.
    #[test]
    fn kmeans_beats_random_assignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut rows = Vec::new();
        for c in [[0.0, 0.0], [6.0, 0.0], [0.0, 6.0], [6.0, 6.0]] {
            for _ in 0..16 {
                let n: [f64; 2] = [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)];
                rows.push(vec![c[0] + 0.5 * n[0], c[1] + 0.5 * n[1]]);
            }
        }
        let set = FeatureSet::from_rows(&rows).unwrap();
        let fit = kmeans(&[set], 4, 5).unwrap();
        for trial in 0..20 {
            let assign: Vec<usize> = (0..rows.len()).map(|i| (i * 7 + trial * 3) % 4).collect();
            let mut inertia = 0.0;
            for c in 0..4 {
                let members: Vec<&Vec<f64>> = rows.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(r, _)| r).collect();
                if members.is_empty() {
                    continue;
                }
                let mean: Vec<f64> = (0..2).map(|d| members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64).collect();
                inertia += members.iter().map(|m| sq_dist(m, &mean)).sum::<f64>();
            }
            assert!(fit.inertia() <= inertia);
        }
    }

    #[test]
    fn vlad_single_residual() {
        let vocab = VladVocabulary::new(1, 3, vec![1.0, 1.0, 1.0]).unwrap();
        let set = FeatureSet::from_rows(&[vec![4.0, 5.0, 1.0]]).unwrap();
        let d = vlad(&set, &vocab).unwrap();
        let r = [3.0, 4.0, 0.0];
        for i in 0..3 {
            assert!((d[i] - r[i] / 5.0).abs() < 1e-15);
        }
    }

    #[test]
    fn vlad_zero_when_features_on_centroids() {
        let vocab = VladVocabulary::new(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let set = FeatureSet::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(vlad(&set, &vocab).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vlad_dimension_and_errors() {
        let vocab = VladVocabulary::new(32, 4, vec![0.5; 128]).unwrap();
        let set = FeatureSet::from_rows(&[vec![1.0, 0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(vlad(&set, &vocab).unwrap().len(), 128);
        let wrong = FeatureSet::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(matches!(vlad(&wrong, &vocab), Err(DescriptorError::DimensionMismatch { .. })));
        let empty = FeatureSet::new(4, vec![]).unwrap();
        assert_eq!(vlad(&empty, &vocab), Err(DescriptorError::Empty));
    }

    #[test]
    fn pca_line_data() {
        let dir = [1.0 / 3f64.sqrt(); 3];
        let rows: Vec<Vec<f64>> = (0..20).map(|i| dir.iter().map(|d| d * (i as f64 - 7.0) + 2.0).collect()).collect();
        let t = fit_pca(&rows, 1).unwrap();
        for (b, d) in t.basis_row(0).iter().zip(dir) {
            assert!((b - d).abs() < 1e-9);
        }
        for r in &rows {
            let back = t.reconstruct(&t.project(r).unwrap());
            assert!(sq_dist(&back, r) < 1e-18);
        }
        assert!(matches!(fit_pca(&rows, 2), Err(DescriptorError::RankDeficient { rank: 1, requested: 2 })));
    }

    #[test]
    fn pca_full_basis_is_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows = gaussian_rows(&mut rng, 40, 8);
        let t = fit_pca(&rows, 8).unwrap();
        for r in &rows {
            let back = t.reconstruct(&t.project(r).unwrap());
            assert!(sq_dist(&back, r).sqrt() < 1e-6);
        }
    }

    #[test]
    fn pca_gram_route_orthonormal() {
        // more dimensions than samples takes the Gram route
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows = gaussian_rows(&mut rng, 30, 200);
        let t = fit_pca(&rows, 10).unwrap();
        for a in 0..10 {
            for b in 0..10 {
                let d: f64 = t.basis_row(a).iter().zip(t.basis_row(b)).map(|(x, y)| x * y).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-9);
            }
        }
        for row in 0..10 {
            let r = t.basis_row(row);
            let mut best = 0;
            for i in 0..r.len() {
                if r[i].abs() > r[best].abs() {
                    best = i;
                }
            }
            assert!(r[best] > 0.0);
        }
    }

    #[test]
    fn reduce_contracts() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let rows = gaussian_rows(&mut rng, 60, 12);
        let t = fit_pca(&rows, 4).unwrap();
        let mean = t.mean().to_vec();
        assert!(reduce(&mean, &t).unwrap().iter().all(|&v| v == 0.0));
        for r in &rows {
            let y = reduce(r, &t).unwrap();
            let n: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
        assert!(matches!(reduce(&[1.0], &t), Err(DescriptorError::DimensionMismatch { .. })));
    }

    /// Data lying in a known r-dim subspace through the mean: cosine ordering
    /// after reduction matches the ordering on the centered full vectors.
    #[test]
    fn reduce_preserves_cosine_order_on_rank_r_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let r = 5;
        let n = 30;
        let dirs = gaussian_rows(&mut rng, r, n);
        let rows: Vec<Vec<f64>> = (0..80)
            .map(|_| {
                let c: Vec<f64> = (0..r).map(|_| StandardNormal.sample(&mut rng)).collect();
                (0..n).map(|j| (0..r).map(|a| c[a] * dirs[a][j]).sum::<f64>()).collect()
            })
            .collect();
        let t = fit_pca(&rows, r).unwrap();
        let cos = |a: &[f64], b: &[f64]| {
            let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            d / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
        };
        let centered: Vec<Vec<f64>> = rows.iter().map(|x| x.iter().zip(t.mean()).map(|(a, m)| a - m).collect()).collect();
        let reduced: Vec<Vec<f64>> = rows.iter().map(|x| reduce(x, &t).unwrap()).collect();
        let q = 0;
        let mut full: Vec<(usize, f64)> = (1..rows.len()).map(|i| (i, cos(&centered[q], &centered[i]))).collect();
        let mut red: Vec<(usize, f64)> = (1..rows.len()).map(|i| (i, cos(&reduced[q], &reduced[i]))).collect();
        full.sort_by(|a, b| b.1.total_cmp(&a.1));
        red.sort_by(|a, b| b.1.total_cmp(&a.1));
        for (a, b) in full.iter().zip(&red) {
            assert!((a.1 - b.1).abs() < 1e-9);
        }
        assert_eq!(full[0].0, red[0].0);
    }
}
