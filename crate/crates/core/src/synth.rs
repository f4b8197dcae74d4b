//! Deterministic synthetic scenes used as fixtures and benchmark inputs.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cloud::{LabeledCloud, PointCloud, MAX_LABEL};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// Uniform points in `[0, extent]^3`, all labelled 0.
    UniformCube,
    /// Isotropic Gaussian blobs on a lattice, label = cluster id.
    GaussianClusters,
    /// Axis-aligned boxes tiled on a floor grid, label = box id.
    RoomGrid,
}

impl FromStr for SynthKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform-cube" => Ok(SynthKind::UniformCube),
            "gaussian-clusters" => Ok(SynthKind::GaussianClusters),
            "room-grid" => Ok(SynthKind::RoomGrid),
            _ => Err(Error::BadParams(format!("unknown synthetic kind '{s}'"))),
        }
    }
}

impl std::fmt::Display for SynthKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SynthKind::UniformCube => "uniform-cube",
            SynthKind::GaussianClusters => "gaussian-clusters",
            SynthKind::RoomGrid => "room-grid",
        })
    }
}

/// Kind-specific knobs; unused fields are ignored by the other kinds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    /// Cube side for `uniform-cube`, floor side for `room-grid`.
    pub extent: f64,
    pub clusters: usize,
    pub stddev: f64,
    /// Lattice spacing between Gaussian cluster centres.
    pub separation: f64,
    pub grid: [usize; 2],
}

impl Default for SynthParams {
    fn default() -> Self {
        Self { extent: 1.0, clusters: 4, stddev: 0.05, separation: 1.0, grid: [3, 2] }
    }
}

/// Per-point colour features (3 columns) in `[0, 1]`.
const COLOR_DIM: usize = 3;

pub fn generate_synthetic<T: Real>(
    kind: SynthKind,
    n: usize,
    seed: u64,
    params: &SynthParams,
) -> Result<LabeledCloud<T>> {
    if n == 0 {
        return Err(Error::BadParams("point count must be positive".into()));
    }
    if !(params.extent > 0.0) || !params.extent.is_finite() {
        return Err(Error::BadParams("extent must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (coords, labels, features) = match kind {
        SynthKind::UniformCube => uniform_cube(n, params, &mut rng),
        SynthKind::GaussianClusters => gaussian_clusters(n, params, &mut rng)?,
        SynthKind::RoomGrid => room_grid(n, params, &mut rng)?,
    };
    let coords = coords.into_iter().map(|p| p.map(T::of)).collect();
    let features = features.into_iter().map(T::of).collect();
    LabeledCloud::new(PointCloud::new(coords, features, COLOR_DIM)?, labels)
}

type Raw = (Vec<[f64; 3]>, Vec<u32>, Vec<f64>);

fn uniform_cube(n: usize, p: &SynthParams, rng: &mut ChaCha8Rng) -> Raw {
    let mut coords = Vec::with_capacity(n);
    let mut feats = Vec::with_capacity(n * COLOR_DIM);
    for _ in 0..n {
        coords.push([
            rng.random::<f64>() * p.extent,
            rng.random::<f64>() * p.extent,
            rng.random::<f64>() * p.extent,
        ]);
        for _ in 0..COLOR_DIM {
            feats.push(rng.random::<f64>());
        }
    }
    (coords, vec![0; n], feats)
}

/// Stable per-label base colour.
fn label_color(label: u32) -> [f64; 3] {
    let h = (label as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    [
        ((h >> 8) & 0xff) as f64 / 255.0,
        ((h >> 24) & 0xff) as f64 / 255.0,
        ((h >> 40) & 0xff) as f64 / 255.0,
    ]
}

fn push_color(feats: &mut Vec<f64>, label: u32, rng: &mut ChaCha8Rng) {
    let base = label_color(label);
    for c in base {
        let jitter = (rng.random::<f64>() - 0.5) * 0.1;
        feats.push((c + jitter).clamp(0.0, 1.0));
    }
}

fn gaussian_clusters(n: usize, p: &SynthParams, rng: &mut ChaCha8Rng) -> Result<Raw> {
    let c = p.clusters;
    if c == 0 {
        return Err(Error::BadParams("cluster count must be positive".into()));
    }
    if c > MAX_LABEL as usize {
        return Err(Error::BadParams(format!("at most {MAX_LABEL} clusters")));
    }
    if !(p.stddev >= 0.0) || !p.stddev.is_finite() {
        return Err(Error::BadParams("stddev must be non-negative".into()));
    }
    if !(p.separation > 0.0) || !p.separation.is_finite() {
        return Err(Error::BadParams("separation must be positive".into()));
    }
    // Smallest cubic lattice holding all centres.
    let side = (1..).find(|s: &usize| s * s * s >= c).unwrap();
    let centres: Vec<[f64; 3]> = (0..c)
        .map(|j| {
            [
                (j % side) as f64 * p.separation,
                ((j / side) % side) as f64 * p.separation,
                (j / (side * side)) as f64 * p.separation,
            ]
        })
        .collect();
    let normal = Normal::new(0.0, p.stddev).map_err(|e| Error::BadParams(e.to_string()))?;
    let mut coords = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut feats = Vec::with_capacity(n * COLOR_DIM);
    for i in 0..n {
        let label = (i % c) as u32;
        let ctr = centres[i % c];
        coords.push([
            ctr[0] + normal.sample(rng),
            ctr[1] + normal.sample(rng),
            ctr[2] + normal.sample(rng),
        ]);
        labels.push(label);
        push_color(&mut feats, label, rng);
    }
    Ok((coords, labels, feats))
}

fn room_grid(n: usize, p: &SynthParams, rng: &mut ChaCha8Rng) -> Result<Raw> {
    let [gx, gy] = p.grid;
    if gx == 0 || gy == 0 {
        return Err(Error::BadParams("room grid dimensions must be positive".into()));
    }
    let boxes = gx * gy;
    if boxes > MAX_LABEL as usize {
        return Err(Error::BadParams(format!("at most {MAX_LABEL} boxes")));
    }
    let cell = [p.extent / gx as f64, p.extent / gy as f64];
    // Each box fills the middle 60% of its floor cell; height is 40% of the larger cell side.
    let height = 0.4 * cell[0].max(cell[1]);
    let mut coords = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut feats = Vec::with_capacity(n * COLOR_DIM);
    for i in 0..n {
        let b = i % boxes;
        let (bx, by) = (b % gx, b / gx);
        let x0 = (bx as f64 + 0.2) * cell[0];
        let y0 = (by as f64 + 0.2) * cell[1];
        coords.push([
            x0 + rng.random::<f64>() * 0.6 * cell[0],
            y0 + rng.random::<f64>() * 0.6 * cell[1],
            rng.random::<f64>() * height,
        ]);
        labels.push(b as u32);
        push_color(&mut feats, b as u32, rng);
    }
    Ok((coords, labels, feats))
}
