//! Synthetic workloads: Gaussian-blob classification data, multi-view typing
//! sessions with planted class signal, session segmentation, and federated
//! partitioning.

mod io;
mod partition;
mod sessions;

pub use io::{read_classification, read_sessions, write_classification, write_sessions};
pub use partition::{partition, Partition, PartitionMode};
pub use sessions::{
    gen_multiview_sessions, segment_sessions, KeypressLog, MultiViewSession, SessionScaler,
    SessionSpec, SpecialKey, ACCELEROMETER_DIM, ACCEL_PERIOD_SECS, ALPHANUMERIC_DIM,
    SESSION_GAP_SECS, SPECIAL_DIM,
};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::Vector;
use crate::models::Example;
use crate::rng::{streams, SimRng};
use crate::scalar::Scalar;

/// Generation parameters for [`gen_classification`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassificationSpec {
    pub n: usize,
    pub classes: usize,
    pub dim: usize,
    /// Distance of every class mean from the origin, in noise standard deviations.
    pub separation: f64,
}

/// Feature vectors with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVectorDataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub dim: usize,
}

impl LabeledVectorDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn examples<T: Scalar>(&self) -> Vec<Example<Vector<T>>> {
        self.features
            .iter()
            .zip(&self.labels)
            .map(|(x, &y)| Example::new(Vector::from_f64(x), y))
            .collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            dim: self.dim,
        }
    }
}

/// Balanced Gaussian blobs: class `c` is `N(μ_c, I)` with `‖μ_c‖ = separation`
/// along a seeded random direction. Labels cycle `0, 1, .., classes-1`.
pub fn gen_classification(seed: u64, spec: &ClassificationSpec) -> Result<LabeledVectorDataset> {
    let ClassificationSpec {
        n,
        classes,
        dim,
        separation,
    } = *spec;
    if classes == 0 || dim == 0 || n < classes {
        return Err(invalid(format!(
            "need classes >= 1, dim >= 1, n >= classes; got n={n} classes={classes} dim={dim}"
        )));
    }
    if !(separation >= 0.0) || !separation.is_finite() {
        return Err(invalid(format!(
            "separation must be finite and >= 0, got {separation}"
        )));
    }
    let root = SimRng::new(seed).fork(streams::DATA);
    let mut mean_rng = root.fork(0);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let dir: Vec<f64> = (0..dim).map(|_| mean_rng.standard_normal()).collect();
            let norm = crate::linalg::l2_norm(&dir).max(f64::MIN_POSITIVE);
            dir.into_iter().map(|x| separation * x / norm).collect()
        })
        .collect();
    let mut noise = root.fork(1);
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        features.push(
            means[c]
                .iter()
                .map(|m| m + noise.standard_normal())
                .collect(),
        );
        labels.push(c);
    }
    Ok(LabeledVectorDataset {
        features,
        labels,
        classes,
        dim,
    })
}

/// Deterministic train/test split; `test_fraction` of the samples (at
/// least one, if any are requested) go to the test side.
pub fn train_test_split(
    n: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(invalid(format!(
            "test fraction must be in [0, 1), got {test_fraction}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    SimRng::new(seed).fork(streams::SPLIT).shuffle(&mut idx);
    let n_test = if test_fraction == 0.0 {
        0
    } else {
        ((test_fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1))
    };
    let test = idx[..n_test].to_vec();
    let train = idx[n_test..].to_vec();
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, classes: usize, dim: usize, separation: f64) -> ClassificationSpec {
        ClassificationSpec {
            n,
            classes,
            dim,
            separation,
        }
    }

    #[test]
    fn same_seed_same_data() {
        let a = gen_classification(3, &spec(50, 3, 4, 2.0)).unwrap();
        let b = gen_classification(3, &spec(50, 3, 4, 2.0)).unwrap();
        assert_eq!(a, b);
        let c = gen_classification(4, &spec(50, 3, 4, 2.0)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn balanced_labels() {
        let d = gen_classification(0, &spec(30, 3, 2, 1.0)).unwrap();
        for c in 0..3 {
            assert_eq!(d.labels.iter().filter(|&&l| l == c).count(), 10);
        }
    }

    #[test]
    fn degenerate_params_rejected() {
        assert!(gen_classification(0, &spec(2, 3, 2, 1.0)).is_err());
        assert!(gen_classification(0, &spec(10, 0, 2, 1.0)).is_err());
        assert!(gen_classification(0, &spec(10, 2, 0, 1.0)).is_err());
        assert!(gen_classification(0, &spec(10, 2, 2, -1.0)).is_err());
        assert!(gen_classification(0, &spec(10, 2, 2, f64::NAN)).is_err());
    }

    /// Nearest-class-mean classifier fit on one half, scored on the other.
    fn nearest_mean_accuracy(d: &LabeledVectorDataset) -> f64 {
        let half = d.len() / 2;
        let mut means = vec![vec![0.0; d.dim]; d.classes];
        let mut counts = vec![0usize; d.classes];
        for i in 0..half {
            counts[d.labels[i]] += 1;
            for (m, x) in means[d.labels[i]].iter_mut().zip(&d.features[i]) {
                *m += x;
            }
        }
        for (m, &c) in means.iter_mut().zip(&counts) {
            m.iter_mut().for_each(|v| *v /= c as f64);
        }
        let correct = (half..d.len())
            .filter(|&i| {
                let best = (0..d.classes)
                    .min_by(|&a, &b| {
                        let da: f64 = means[a]
                            .iter()
                            .zip(&d.features[i])
                            .map(|(m, x)| (m - x).powi(2))
                            .sum();
                        let db: f64 = means[b]
                            .iter()
                            .zip(&d.features[i])
                            .map(|(m, x)| (m - x).powi(2))
                            .sum();
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                best == d.labels[i]
            })
            .count();
        correct as f64 / (d.len() - half) as f64
    }

    #[test]
    fn zero_separation_is_chance() {
        let d = gen_classification(21, &spec(10_000, 4, 5, 0.0)).unwrap();
        let acc = nearest_mean_accuracy(&d);
        assert!((acc - 0.25).abs() < 0.05, "{acc}");
    }

    #[test]
    fn large_separation_is_separable() {
        let d = gen_classification(21, &spec(2_000, 4, 5, 30.0)).unwrap();
        assert_eq!(nearest_mean_accuracy(&d), 1.0);
    }

    #[test]
    fn split_is_disjoint_and_covering() {
        let (tr, te) = train_test_split(100, 0.2, 7).unwrap();
        assert_eq!(te.len(), 20);
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert!(train_test_split(10, 1.0, 0).is_err());
        assert_eq!(train_test_split(10, 0.0, 0).unwrap().1.len(), 0);
    }
}
