//! Farthest-point sampling, pluggable per-super-point feature encoders and
//! geometric labelers.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{LabeledCloud, PointCloud, MAX_LABEL};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{dist2, Real};

/// Where a set of super-points was sampled from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Global,
    Local(usize),
}

/// Down-sampled representative points with their representations.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperPoints<T> {
    pub coords: Vec<[T; 3]>,
    /// `M x d`; zero columns until features are encoded.
    pub features: Matrix<T>,
    /// Parent index of each super-point in the cloud it was sampled from.
    pub source: Vec<usize>,
    pub origin: Origin,
}

impl<T: Real> SuperPoints<T> {
    #[inline]
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Concatenates several sets (e.g. the per-part local sets) in order.
    ///
    /// `source` entries are kept as given, so callers should map them to a
    /// common parent index space first.
    pub fn concat(parts: &[SuperPoints<T>], origin: Origin) -> Result<Self> {
        let d = parts.first().map_or(0, |p| p.dim());
        let mut coords = Vec::new();
        let mut data = Vec::new();
        let mut source = Vec::new();
        for p in parts {
            if p.dim() != d {
                return Err(Error::DimensionMismatch {
                    what: "super-point concat",
                    expected: d,
                    found: p.dim(),
                });
            }
            coords.extend_from_slice(&p.coords);
            data.extend_from_slice(p.features.as_slice());
            source.extend_from_slice(&p.source);
        }
        let features = Matrix::from_vec(coords.len(), d, data)?;
        Ok(Self { coords, features, source, origin })
    }

    /// As a plain cloud (coordinates and features), e.g. for export.
    pub fn to_cloud(&self) -> Result<PointCloud<T>> {
        PointCloud::new(self.coords.clone(), self.features.as_slice().to_vec(), self.dim())
    }
}

/// Greedy max-min farthest-point sampling.
///
/// The first pick is `start`; each later pick maximizes the distance to the
/// already-selected set, ties going to the lowest index. Runs in `O(N m)`.
pub fn fps<T: Real>(cloud: &PointCloud<T>, m: usize, start: usize) -> Result<SuperPoints<T>> {
    let n = cloud.len();
    if m == 0 || m > n {
        return Err(Error::BadParams(format!("fps needs 1 <= m <= N, got m={m}, N={n}")));
    }
    if start >= n {
        return Err(Error::BadParams(format!("fps start {start} out of range for N={n}")));
    }
    let pts = cloud.coords();
    let mut min_d = vec![T::infinity(); n];
    let mut picked = vec![false; n];
    let mut source = Vec::with_capacity(m);
    let mut cur = start;
    for _ in 0..m {
        source.push(cur);
        picked[cur] = true;
        let anchor = pts[cur];
        let mut best = usize::MAX;
        let mut best_d = T::neg_infinity();
        for i in 0..n {
            let d = dist2(&pts[i], &anchor);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if !picked[i] && min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        cur = best;
    }
    let coords = source.iter().map(|&i| pts[i]).collect();
    Ok(SuperPoints { coords, features: Matrix::zeros(m, 0), source, origin: Origin::Global })
}

/// Maps a point (and its neighbourhood) of the source cloud to a feature vector.
pub trait FeatureEncoder<T: Real>: Send + Sync {
    fn output_dim(&self) -> usize;
    fn encode(&self, cloud: &PointCloud<T>, index: usize) -> Vec<T>;
}

/// Copies the raw per-point features.
#[derive(Debug, Clone, Copy)]
pub struct Passthrough {
    pub dim: usize,
}

impl<T: Real> FeatureEncoder<T> for Passthrough {
    fn output_dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, cloud: &PointCloud<T>, index: usize) -> Vec<T> {
        cloud.feature(index).to_vec()
    }
}

/// Fixed Gaussian linear map of `[coords || features]`, seeded.
#[derive(Debug, Clone)]
pub struct RandomProjection<T> {
    seed: u64,
    weights: Matrix<T>,
}

impl<T: Real> RandomProjection<T> {
    pub fn new(input_features: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = 3 + input_features;
        let weights = Matrix::gaussian(out_dim, inputs, 1.0 / (inputs as f64).sqrt(), &mut rng);
        Self { seed, weights }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl<T: Real> FeatureEncoder<T> for RandomProjection<T> {
    fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    fn encode(&self, cloud: &PointCloud<T>, index: usize) -> Vec<T> {
        let mut x = cloud.point(index).to_vec();
        x.extend_from_slice(cloud.feature(index));
        if x.len() != self.weights.cols() {
            // Dimension check happens in encode_features; return a wrong-length vector.
            return Vec::new();
        }
        self.weights.matvec(&x)
    }
}

/// Fills `points.features` with `encoder` outputs at each source index.
pub fn encode_features<T: Real, E: FeatureEncoder<T> + ?Sized>(
    mut points: SuperPoints<T>,
    source_cloud: &PointCloud<T>,
    encoder: &E,
    dim: usize,
) -> Result<SuperPoints<T>> {
    if encoder.output_dim() != dim {
        return Err(Error::DimensionMismatch {
            what: "encoder output",
            expected: dim,
            found: encoder.output_dim(),
        });
    }
    let mut features = Matrix::zeros(points.len(), dim);
    for (r, &src) in points.source.iter().enumerate() {
        let f = encoder.encode(source_cloud, src);
        if f.len() != dim {
            return Err(Error::DimensionMismatch {
                what: "encoded feature",
                expected: dim,
                found: f.len(),
            });
        }
        features.row_mut(r).copy_from_slice(&f);
    }
    points.features = features;
    Ok(points)
}

/// How geometric labels are obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMethod {
    /// Use labels supplied with the cloud.
    Provided(Vec<u32>),
    /// Label = index of the occupied voxel of side `cell`.
    VoxelGrid { cell: f64 },
    /// Connected components of the graph joining points closer than `radius`.
    EuclideanCluster { radius: f64 },
}

pub fn label_clusters<T: Real>(cloud: &PointCloud<T>, method: &LabelMethod) -> Result<LabeledCloud<T>> {
    let labels = match method {
        LabelMethod::Provided(l) => l.clone(),
        LabelMethod::VoxelGrid { cell } => voxel_labels(cloud, positive(*cell, "cell")?)?,
        LabelMethod::EuclideanCluster { radius } => {
            cluster_labels(cloud, positive(*radius, "radius")?)?
        }
    };
    LabeledCloud::new(cloud.clone(), labels)
}

fn positive(v: f64, name: &str) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::BadParams(format!("{name} must be positive, got {v}")))
    }
}

type VoxelKey = (i64, i64, i64);

fn voxel_key<T: Real>(p: &[T; 3], origin: &[T; 3], cell: f64) -> VoxelKey {
    let k = |a: usize| ((p[a] - origin[a]).as_f64() / cell).floor() as i64;
    (k(0), k(1), k(2))
}

/// Dense voxel ids in order of first occurrence.
fn voxel_labels<T: Real>(cloud: &PointCloud<T>, cell: f64) -> Result<Vec<u32>> {
    let (lo, _) = cloud.bbox();
    let mut ids: HashMap<VoxelKey, u32> = HashMap::new();
    let mut out = Vec::with_capacity(cloud.len());
    for p in cloud.coords() {
        let next = ids.len() as u32;
        let id = *ids.entry(voxel_key(p, &lo, cell)).or_insert(next);
        if id >= MAX_LABEL {
            return Err(Error::BadParams(format!(
                "voxel cell {cell} yields more than {MAX_LABEL} labels"
            )));
        }
        out.push(id);
    }
    Ok(out)
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Smaller root wins so component roots are deterministic.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Components of the `dist <= radius` graph, numbered by their lowest point id.
fn cluster_labels<T: Real>(cloud: &PointCloud<T>, radius: f64) -> Result<Vec<u32>> {
    let (lo, _) = cloud.bbox();
    let pts = cloud.coords();
    let mut grid: HashMap<VoxelKey, Vec<usize>> = HashMap::new();
    for (i, p) in pts.iter().enumerate() {
        grid.entry(voxel_key(p, &lo, radius)).or_default().push(i);
    }
    let r2 = T::of(radius * radius);
    let mut dsu = DisjointSet::new(pts.len());
    for (i, p) in pts.iter().enumerate() {
        let (x, y, z) = voxel_key(p, &lo, radius);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = grid.get(&(x + dx, y + dy, z + dz)) else {
                        continue;
                    };
                    for &j in bucket {
                        if j > i && dist2(p, &pts[j]) <= r2 {
                            dsu.union(i, j);
                        }
                    }
                }
            }
        }
    }
    let mut ids: HashMap<usize, u32> = HashMap::new();
    let mut out = Vec::with_capacity(pts.len());
    for i in 0..pts.len() {
        let root = dsu.find(i);
        let next = ids.len() as u32;
        let id = *ids.entry(root).or_insert(next);
        if id >= MAX_LABEL {
            return Err(Error::BadParams(format!(
                "radius {radius} yields more than {MAX_LABEL} clusters"
            )));
        }
        out.push(id);
    }
    Ok(out)
}

/// Labels for super-points by majority vote over the parent points closest to
/// each super-point (its sampling cell); ties go to the lower label.
///
/// `points.source` must index rows of `labeled`. `members` restricts the vote
/// to a subset of `labeled` (one part); `None` votes over the whole cloud.
pub fn inherit_labels<T: Real>(
    points: &SuperPoints<T>,
    labeled: &LabeledCloud<T>,
    members: Option<&[usize]>,
) -> Vec<u32> {
    let m = points.len();
    let labels = labeled.labels();
    let coords = labeled.cloud.coords();
    let mut votes: Vec<HashMap<u32, usize>> = vec![HashMap::new(); m];
    let mut vote = |i: usize| {
        let p = &coords[i];
        let mut best = 0;
        let mut best_d = T::infinity();
        for (s, c) in points.coords.iter().enumerate() {
            let d = dist2(p, c);
            if d < best_d {
                best_d = d;
                best = s;
            }
        }
        *votes[best].entry(labels[i]).or_default() += 1;
    };
    match members {
        Some(ids) => ids.iter().for_each(|&i| vote(i)),
        None => (0..coords.len()).for_each(&mut vote),
    }
    votes
        .into_iter()
        .enumerate()
        .map(|(s, v)| {
            v.into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|(l, _)| l)
                .unwrap_or(labels[points.source[s]])
        })
        .collect()
}
