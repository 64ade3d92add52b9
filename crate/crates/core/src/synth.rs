use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Dataset, FeatureMatrix};
use crate::error::{Error, Result};

/// Isotropic Gaussian blobs with unit variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobSpec {
    pub n_classes: usize,
    pub n_dims: usize,
    pub n_samples: usize,
    /// Distance between any two centres, in units of the blob standard deviation.
    pub separation: f64,
}

impl BlobSpec {
    pub fn centers(&self) -> Vec<Vec<f64>> {
        let (k, d) = (self.n_classes, self.n_dims);
        if k <= d {
            let scale = self.separation / std::f64::consts::SQRT_2;
            (0..k)
                .map(|c| {
                    let mut v = vec![0.0; d];
                    v[c] = scale;
                    v
                })
                .collect()
        } else {
            // Not enough axes for a simplex; spread centres along the first axis.
            (0..k)
                .map(|c| {
                    let mut v = vec![0.0; d];
                    v[0] = c as f64 * self.separation;
                    v
                })
                .collect()
        }
    }
}

pub fn blobs(spec: &BlobSpec, seed: u64) -> Result<Dataset> {
    if spec.n_classes < 2 || spec.n_dims == 0 || spec.n_samples < spec.n_classes {
        return Err(Error::InvalidArgument(format!(
            "need at least two classes, one dimension and one sample per class (got {} classes, {} dims, {} samples)",
            spec.n_classes, spec.n_dims, spec.n_samples
        )));
    }
    if !spec.separation.is_finite() || spec.separation < 0.0 {
        return Err(Error::InvalidArgument(format!("invalid separation {}", spec.separation)));
    }
    let centers = spec.centers();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(spec.n_samples * spec.n_dims);
    let mut labels = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let label = i % spec.n_classes;
        labels.push(label);
        values.extend(centers[label].iter().map(|c| c + normal.sample(&mut rng)));
    }
    let features = FeatureMatrix::new(spec.n_samples, spec.n_dims, values)?;
    Dataset::new(features, Some(labels), spec.n_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> BlobSpec {
        BlobSpec { n_classes: 5, n_dims: 10, n_samples: 1000, separation: 6.0 }
    }

    #[test]
    fn centres_are_equidistant() {
        let c = spec().centers();
        for a in 0..5 {
            for b in a + 1..5 {
                let d: f64 = c[a].iter().zip(&c[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                assert!((d - 6.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn balanced_labels_and_sample_means() {
        let ds = blobs(&spec(), 3).unwrap();
        let labels = ds.labels("test").unwrap();
        for c in 0..5 {
            assert_eq!(labels.iter().filter(|&&l| l == c).count(), 200);
        }
        let centers = spec().centers();
        for c in 0..5 {
            let rows: Vec<_> = (0..1000).filter(|i| labels[*i] == c).collect();
            for d in 0..10 {
                let mean = rows.iter().map(|&i| ds.features.row(i)[d]).sum::<f64>() / rows.len() as f64;
                assert!((mean - centers[c][d]).abs() < 0.3, "class {c} dim {d}: {mean}");
            }
        }
    }

    #[test]
    fn seeded() {
        assert_eq!(blobs(&spec(), 1).unwrap().features, blobs(&spec(), 1).unwrap().features);
        assert_ne!(blobs(&spec(), 1).unwrap().features, blobs(&spec(), 2).unwrap().features);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(blobs(&BlobSpec { n_classes: 1, ..spec() }, 0).is_err());
        assert!(blobs(&BlobSpec { separation: f64::NAN, ..spec() }, 0).is_err());
    }
}
