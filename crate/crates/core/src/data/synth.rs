use std::f64::consts::PI;

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::LabeledSet;
use crate::error::{Error, Result};
use crate::seed::Stream;
use crate::tensor::TensorBuffer;

/// Parameters of [`synth_blobs`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dims: usize,
    pub spread: f64,
}

/// Center of class `c`: points spaced around a closed curve of radius 0.3
/// about the middle of the unit cube (evenly on a segment when `dims == 1`).
pub fn blob_center(c: usize, classes: usize, dims: usize) -> Vec<f64> {
    if dims == 1 {
        return vec![0.2 + 0.6 * c as f64 / (classes - 1) as f64];
    }
    let theta = 2.0 * PI * c as f64 / classes as f64;
    (0..dims)
        .map(|i| 0.5 + 0.3 * (theta + PI * i as f64 / dims as f64).cos())
        .collect()
}

/// Isotropic Gaussian blobs around fixed class centers, clipped to `[0, 1]`.
/// Examples are ordered by class.
pub fn synth_blobs(spec: &BlobSpec, seed: u64) -> Result<LabeledSet> {
    if spec.classes < 2 {
        return Err(Error::Plan(format!("synth_blobs needs at least 2 classes, got {}", spec.classes)));
    }
    if spec.dims == 0 || !(spec.spread >= 0.0 && spec.spread.is_finite()) {
        return Err(Error::Plan("synth_blobs needs dims >= 1 and a finite spread >= 0".into()));
    }
    let noise = Normal::new(0.0, spec.spread).map_err(|e| Error::Plan(e.to_string()))?;
    let mut rng = Stream::seed_from_u64(seed);
    let mut features = Vec::with_capacity(spec.classes * spec.per_class);
    let mut labels = Vec::with_capacity(spec.classes * spec.per_class);
    for c in 0..spec.classes {
        let center = blob_center(c, spec.classes, spec.dims);
        for _ in 0..spec.per_class {
            let x = center
                .iter()
                .map(|m| {
                    let jitter = if spec.spread > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    (m + jitter).clamp(0.0, 1.0)
                })
                .collect();
            features.push(TensorBuffer::vector(x));
            labels.push(c);
        }
    }
    LabeledSet::new(features, labels, spec.classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(classes: usize, per_class: usize, dims: usize, spread: f64) -> BlobSpec {
        BlobSpec {
            classes,
            per_class,
            dims,
            spread,
        }
    }

    #[test]
    fn zero_spread_sits_on_centers() {
        let set = synth_blobs(&spec(3, 4, 5, 0.0), 1).unwrap();
        for s in set.samples() {
            assert_eq!(s.x.data(), blob_center(s.label, 3, 5).as_slice());
        }
    }

    #[test]
    fn counts_per_label() {
        let set = synth_blobs(&spec(2, 50, 2, 0.1), 9).unwrap();
        assert_eq!(set.len(), 100);
        assert_eq!(set.class_histogram(), vec![50, 50]);
    }

    #[test]
    fn deterministic_and_in_range() {
        let a = synth_blobs(&spec(4, 30, 3, 0.5), 5).unwrap();
        assert_eq!(a, synth_blobs(&spec(4, 30, 3, 0.5), 5).unwrap());
        assert_ne!(a, synth_blobs(&spec(4, 30, 3, 0.5), 6).unwrap());
        assert!(a.features().iter().flat_map(|x| x.data()).all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn centers_are_distinct() {
        for &(classes, dims) in &[(2, 1), (2, 2), (10, 2), (10, 8), (3, 3)] {
            let centers: Vec<_> = (0..classes).map(|c| blob_center(c, classes, dims)).collect();
            for i in 0..classes {
                for j in i + 1..classes {
                    let d: f64 = centers[i].iter().zip(&centers[j]).map(|(a, b)| (a - b).abs()).sum();
                    assert!(d > 1e-3, "classes {i} and {j} collide for C={classes}, d={dims}");
                }
            }
        }
    }

    #[test]
    fn rejects_single_class() {
        assert!(synth_blobs(&spec(1, 5, 2, 0.1), 0).is_err());
    }
}
