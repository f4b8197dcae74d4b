//! Validated point-cloud containers.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Largest label value (exclusive) a [`LabeledCloud`] may carry.
pub const MAX_LABEL: u32 = 1 << 16;

/// `N` points with 3D coordinates and `feature_dim` per-point attributes.
///
/// Invariants are checked on construction: `N >= 1`, finite values and a
/// feature buffer of exactly `N * feature_dim` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T> {
    coords: Vec<[T; 3]>,
    features: Vec<T>,
    feature_dim: usize,
}

impl<T: Real> PointCloud<T> {
    pub fn new(coords: Vec<[T; 3]>, features: Vec<T>, feature_dim: usize) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Validation("point cloud has no points".into()));
        }
        if features.len() != coords.len() * feature_dim {
            return Err(Error::Validation(format!(
                "feature buffer holds {} values, expected {} points x {} features",
                features.len(),
                coords.len(),
                feature_dim
            )));
        }
        if let Some(i) = coords.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::Validation(format!("non-finite coordinate at point {i}")));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite feature at point {}",
                i / feature_dim.max(1)
            )));
        }
        Ok(Self { coords, features, feature_dim })
    }

    /// Coordinates only, no features.
    pub fn from_coords(coords: Vec<[T; 3]>) -> Result<Self> {
        Self::new(coords, Vec::new(), 0)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    /// Always false; kept for API symmetry with collections.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    #[inline]
    pub fn coords(&self) -> &[[T; 3]] {
        &self.coords
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[T; 3] {
        &self.coords[i]
    }

    #[inline]
    pub fn features(&self) -> &[T] {
        &self.features
    }

    #[inline]
    pub fn feature(&self, i: usize) -> &[T] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    /// New cloud made of the listed points, in the listed order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let coords = indices.iter().map(|&i| self.coords[i]).collect();
        let mut features = Vec::with_capacity(indices.len() * self.feature_dim);
        for &i in indices {
            features.extend_from_slice(self.feature(i));
        }
        Self::new(coords, features, self.feature_dim)
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bbox(&self) -> ([T; 3], [T; 3]) {
        bbox_of(self.coords.iter())
    }

    /// Uniform subsample of `n` distinct points, without replacement.
    ///
    /// Returned points keep their relative order from the source cloud.
    pub fn subsample(&self, n: usize, seed: u64) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::BadParams(format!(
                "cannot subsample {n} points from a cloud of {}",
                self.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, self.len(), n).into_vec();
        idx.sort_unstable();
        self.select(&idx)
    }
}

pub(crate) fn bbox_of<'a, T: Real>(points: impl Iterator<Item = &'a [T; 3]>) -> ([T; 3], [T; 3]) {
    let mut lo = [T::infinity(); 3];
    let mut hi = [T::neg_infinity(); 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo, hi)
}

/// A cloud with one non-negative geometric label per point.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCloud<T> {
    pub cloud: PointCloud<T>,
    labels: Vec<u32>,
}

impl<T: Real> LabeledCloud<T> {
    pub fn new(cloud: PointCloud<T>, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != cloud.len() {
            return Err(Error::Validation(format!(
                "{} labels for {} points",
                labels.len(),
                cloud.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= MAX_LABEL) {
            return Err(Error::Validation(format!("label {l} exceeds 2^16 - 1")));
        }
        Ok(Self { cloud, labels })
    }

    /// Every point labelled 0.
    pub fn unlabeled(cloud: PointCloud<T>) -> Self {
        let labels = vec![0; cloud.len()];
        Self { cloud, labels }
    }

    #[inline]
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn distinct_labels(&self) -> usize {
        let mut l = self.labels.clone();
        l.sort_unstable();
        l.dedup();
        l.len()
    }
}
