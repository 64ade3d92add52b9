//! Principal component featurizer.
//!
//! Stands in for a learned encoder: any externally produced feature matrix
//! can be used instead. The eigen-decomposition is delegated to nalgebra's
//! symmetric solver (Householder tridiagonalization + implicit QR), which is
//! deterministic; component signs are fixed so that each component's
//! largest-magnitude entry is positive.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k x n_dims`, row-major, orthonormal rows.
    pub components: Vec<f64>,
    /// Sample variance (denominator `n - 1`) along each component, non-increasing.
    pub explained_variance: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitStatus {
    Ok,
    /// The input has no variance; components are an arbitrary orthonormal basis.
    Degenerate,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.explained_variance.len()
    }

    pub fn input_dims(&self) -> usize {
        self.mean.len()
    }

    pub fn component(&self, i: usize) -> &[f64] {
        let d = self.input_dims();
        &self.components[i * d..(i + 1) * d]
    }
}

/// Top-`k` principal directions of the mean-centered rows of `x`.
pub fn pca_fit(x: &FeatureMatrix, k: usize, seed: u64) -> Result<(PcaModel, FitStatus)> {
    let (n, d) = (x.n_samples(), x.n_dims());
    if k == 0 || k > n.min(d) {
        return Err(Error::InvalidArgument(format!("k = {k} outside 1..={}", n.min(d))));
    }

    let mut mean = vec![0.0; d];
    for row in x.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centered = DMatrix::from_fn(n, d, |i, j| x.row(i)[j] - mean[j]);
    let denom = (n.max(2) - 1) as f64;

    // Decompose whichever of the covariance (d x d) or Gram (n x n) matrix is smaller.
    let (values, vectors) = if d <= n {
        let cov = (centered.transpose() * &centered) / denom;
        let eig = SymmetricEigen::new(cov);
        (eig.eigenvalues, eig.eigenvectors)
    } else {
        let gram = (&centered * centered.transpose()) / denom;
        let eig = SymmetricEigen::new(gram);
        let mut dirs = centered.transpose() * &eig.eigenvectors;
        for (j, mut col) in dirs.column_iter_mut().enumerate() {
            let norm = col.norm();
            if norm > 0.0 && eig.eigenvalues[j] > 0.0 {
                col /= norm;
            } else {
                col.fill(0.0);
            }
        }
        (eig.eigenvalues, dirs)
    };

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));

    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let degenerate = scale <= f64::EPSILON * n as f64;

    let mut components = Vec::with_capacity(k * d);
    let mut explained_variance = Vec::with_capacity(k);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    for &j in order.iter() {
        if basis.len() == k {
            break;
        }
        let mut v: Vec<f64> = vectors.column(j).iter().copied().collect();
        if degenerate || v.iter().all(|x| *x == 0.0) {
            continue;
        }
        canonical_sign(&mut v);
        explained_variance.push(values[j].max(0.0));
        basis.push(v);
    }
    // Rank-deficient input: complete the basis with Gram-Schmidt over the axes.
    let mut axis = 0;
    while basis.len() < k {
        let mut v = vec![0.0; d];
        v[axis] = 1.0;
        axis += 1;
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(b).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            basis.push(v);
            explained_variance.push(0.0);
        }
    }
    for b in &basis {
        components.extend_from_slice(b);
    }

    let status = if degenerate { FitStatus::Degenerate } else { FitStatus::Ok };
    Ok((PcaModel { mean, components, explained_variance, seed }, status))
}

fn canonical_sign(v: &mut [f64]) {
    let pivot = v
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |(bi, bv), (i, x)| if x.abs() > bv.abs() { (i, *x) } else { (bi, bv) })
        .1;
    if pivot < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Row `i` of the output is `components * (x_i - mean)`.
pub fn pca_transform(model: &PcaModel, x: &FeatureMatrix) -> Result<FeatureMatrix> {
    let d = model.input_dims();
    if x.n_dims() != d {
        return Err(Error::DimensionMismatch { expected: d, actual: x.n_dims() });
    }
    let k = model.k();
    let mut out = Vec::with_capacity(x.n_samples() * k);
    let mut centered = vec![0.0; d];
    for row in x.rows() {
        centered.iter_mut().zip(row.iter().zip(&model.mean)).for_each(|(c, (v, m))| *c = v - m);
        for i in 0..k {
            out.push(model.component(i).iter().zip(&centered).map(|(a, b)| a * b).sum());
        }
    }
    FeatureMatrix::new(x.n_samples(), k, out)
}

/// Maps `k`-dimensional codes back into the input space.
pub fn pca_inverse(model: &PcaModel, codes: &FeatureMatrix) -> Result<FeatureMatrix> {
    let k = model.k();
    if codes.n_dims() != k {
        return Err(Error::DimensionMismatch { expected: k, actual: codes.n_dims() });
    }
    let d = model.input_dims();
    let mut out = Vec::with_capacity(codes.n_samples() * d);
    for code in codes.rows() {
        let mut x = model.mean.clone();
        for (i, c) in code.iter().enumerate() {
            x.iter_mut().zip(model.component(i)).for_each(|(x, v)| *x += c * v);
        }
        out.extend(x);
    }
    FeatureMatrix::new(codes.n_samples(), d, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, d: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMatrix::new(n, d, (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap()
    }

    fn gram_error(model: &PcaModel) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..model.k() {
            for j in 0..model.k() {
                let dot: f64 = model.component(i).iter().zip(model.component(j)).map(|(a, b)| a * b).sum();
                worst = worst.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        worst
    }

    #[test]
    fn diagonal_line_direction() {
        // Points t*(1,1) for t in {-2,-1,0,1,2}, each duplicated: variance along the
        // line is sum(2 t^2) * 2 / (10 - 1) = 40 / 9.
        let rows: Vec<[f64; 2]> = [-2.0, -1.0, 0.0, 1.0, 2.0].iter().flat_map(|&t| [[t, t], [t, t]]).collect();
        let (model, status) = pca_fit(&FeatureMatrix::from_rows(&rows).unwrap(), 1, 0).unwrap();
        assert_eq!(status, FitStatus::Ok);
        let c = model.component(0);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((c[0].abs() - r).abs() < 1e-9 && (c[1].abs() - r).abs() < 1e-9);
        assert!((model.explained_variance[0] - 40.0 / 9.0).abs() < 1e-9);
    }

    #[test]
    fn axis_aligned_variances() {
        // Mean-zero points with sample variances 4 (x) and 1 (y):
        // x in {±a}, y in {±b}, four points: var = a^2 * 4 / 3.
        let a = (3.0f64).sqrt();
        let b = (0.75f64).sqrt();
        let rows = [[a, b], [a, -b], [-a, b], [-a, -b]];
        let (model, _) = pca_fit(&FeatureMatrix::from_rows(&rows).unwrap(), 2, 0).unwrap();
        assert!((model.explained_variance[0] - 4.0).abs() < 1e-9);
        assert!((model.explained_variance[1] - 1.0).abs() < 1e-9);
        assert!((model.component(0)[0].abs() - 1.0).abs() < 1e-9);
        assert!((model.component(1)[1].abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn full_rank_reconstruction() {
        let x = random_matrix(12, 4, 3);
        let (model, _) = pca_fit(&x, 4, 0).unwrap();
        let back = pca_inverse(&model, &pca_transform(&model, &x).unwrap()).unwrap();
        for (a, b) in x.values().iter().zip(back.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn transform_centers_and_projects() {
        let x = random_matrix(20, 3, 9);
        let (model, _) = pca_fit(&x, 1, 0).unwrap();
        let mean = FeatureMatrix::from_rows(std::slice::from_ref(&model.mean)).unwrap();
        assert!(pca_transform(&model, &mean).unwrap().row(0)[0].abs() < 1e-12);

        let p: Vec<f64> = model.mean.iter().zip(model.component(0)).map(|(m, c)| m + 2.0 * c).collect();
        let out = pca_transform(&model, &FeatureMatrix::from_rows(&[p]).unwrap()).unwrap();
        assert!((out.row(0)[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn orthonormal_map_preserves_distances() {
        let x = random_matrix(5, 3, 11);
        let (model, _) = pca_fit(&x, 3, 0).unwrap();
        let y = pca_transform(&model, &x).unwrap();
        let dist = |m: &FeatureMatrix, i: usize, j: usize| -> f64 {
            m.row(i).iter().zip(m.row(j)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        };
        for i in 0..5 {
            for j in 0..5 {
                assert!((dist(&x, i, j) - dist(&y, i, j)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn invariants_on_random_input() {
        for (n, d, k, seed) in [(30, 8, 5, 1), (6, 20, 4, 2), (50, 3, 3, 3)] {
            let x = random_matrix(n, d, seed);
            let (model, _) = pca_fit(&x, k, seed).unwrap();
            assert!(gram_error(&model) < 1e-6, "gram error for {n}x{d}");
            assert!(model.explained_variance.windows(2).all(|w| w[0] >= w[1]));
            assert!(model.explained_variance.iter().all(|v| *v >= 0.0));

            // Variance captured by the transform equals the explained variance.
            let y = pca_transform(&model, &x).unwrap();
            let total: f64 = (0..k)
                .map(|c| y.rows().map(|r| r[c] * r[c]).sum::<f64>() / (n - 1) as f64)
                .sum();
            let expected: f64 = model.explained_variance.iter().sum();
            assert!((total - expected).abs() <= 1e-6 * expected.max(1.0));
        }
    }

    #[test]
    fn degenerate_input_is_flagged() {
        let x = FeatureMatrix::from_rows(&[[1.0, 2.0, 3.0]; 4]).unwrap();
        let (model, status) = pca_fit(&x, 2, 0).unwrap();
        assert_eq!(status, FitStatus::Degenerate);
        assert_eq!(model.explained_variance, vec![0.0, 0.0]);
        assert!(gram_error(&model) < 1e-12);
    }

    #[test]
    fn range_and_dimension_errors() {
        let x = random_matrix(4, 3, 0);
        assert!(pca_fit(&x, 0, 0).is_err());
        assert!(pca_fit(&x, 4, 0).is_err());
        let (model, _) = pca_fit(&x, 2, 0).unwrap();
        let wrong = random_matrix(2, 5, 1);
        assert!(matches!(pca_transform(&model, &wrong), Err(Error::DimensionMismatch { expected: 3, actual: 5 })));
    }

    #[test]
    fn deterministic() {
        let x = random_matrix(40, 10, 5);
        assert_eq!(pca_fit(&x, 4, 1).unwrap().0.components, pca_fit(&x, 4, 1).unwrap().0.components);
    }
}
