//! 3D Hilbert-curve encoding, point serialization and equal-cardinality
//! partitioning.
//!
//! Encoding follows the usual pipeline: normalize to the unit cube, quantize
//! to a `2^r` grid per axis, run the transpose-form Hilbert transform
//! (axis swaps/inversions over bit planes followed by the Gray-code step) and
//! pack the transposed words with [`interleave`].

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{bbox_of, PointCloud};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MAX_R_BITS: u32 = 21;
pub const DEFAULT_R_BITS: u32 = 16;

/// Grid resolution in bits per axis; `3 * r_bits <= 63`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HilbertConfig {
    r_bits: u32,
}

impl HilbertConfig {
    pub fn new(r_bits: u32) -> Result<Self> {
        if !(1..=MAX_R_BITS).contains(&r_bits) {
            return Err(Error::BadParams(format!(
                "r_bits must be in 1..={MAX_R_BITS}, got {r_bits}"
            )));
        }
        Ok(Self { r_bits })
    }

    #[inline]
    pub fn r_bits(&self) -> u32 {
        self.r_bits
    }

    /// Number of distinct indices, `2^(3 r_bits)`.
    #[inline]
    pub fn index_span(&self) -> u64 {
        1u64 << (3 * self.r_bits)
    }
}

impl Default for HilbertConfig {
    fn default() -> Self {
        Self { r_bits: DEFAULT_R_BITS }
    }
}

/// Which space-filling curve to order by. Morton is only a baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Curve {
    #[default]
    Hilbert,
    Morton,
}

impl std::str::FromStr for Curve {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hilbert" => Ok(Curve::Hilbert),
            "morton" => Ok(Curve::Morton),
            _ => Err(Error::BadParams(format!("unknown curve '{s}'"))),
        }
    }
}

pub type BBox<T> = ([T; 3], [T; 3]);

/// Maps a point into `[0, 1]^3` using `bbox`; degenerate axes map to 0.5.
#[inline]
pub fn normalize_point<T: Real>(p: &[T; 3], bbox: &BBox<T>) -> [T; 3] {
    let half = T::of(0.5);
    let mut out = [half; 3];
    for a in 0..3 {
        let span = bbox.1[a] - bbox.0[a];
        if span > T::zero() {
            out[a] = ((p[a] - bbox.0[a]) / span).max(T::zero()).min(T::one());
        }
    }
    out
}

/// Unit-cube coordinates of every point plus the bounding box used.
pub fn normalize<T: Real>(cloud: &PointCloud<T>) -> (Vec<[T; 3]>, BBox<T>) {
    let bbox = cloud.bbox();
    let unit = cloud.coords().iter().map(|p| normalize_point(p, &bbox)).collect();
    (unit, bbox)
}

/// `floor(u * 2^r)`, with `u = 1` clamped into the last cell.
#[inline]
pub fn discretize<T: Real>(u: T, r_bits: u32) -> u32 {
    let cells = (1u64 << r_bits) as f64;
    let max = (1u32 << r_bits) - 1;
    let v = (u.as_f64() * cells).floor();
    if v <= 0.0 {
        0
    } else if v >= max as f64 {
        max
    } else {
        v as u32
    }
}

#[inline]
pub fn discretize_point<T: Real>(u: &[T; 3], r_bits: u32) -> [u32; 3] {
    [discretize(u[0], r_bits), discretize(u[1], r_bits), discretize(u[2], r_bits)]
}

#[inline]
pub fn gray_encode(value: u64) -> u64 {
    value ^ (value >> 1)
}

#[inline]
pub fn gray_decode(mut g: u64) -> u64 {
    let mut shift = 1;
    while shift < 64 {
        g ^= g >> shift;
        shift <<= 1;
    }
    g
}

/// Bit `i` of `x`, `y`, `z` goes to bit `3i`, `3i+1`, `3i+2` of the result.
#[inline]
pub fn interleave(x: u32, y: u32, z: u32, r_bits: u32) -> u64 {
    let mut h = 0u64;
    for i in 0..r_bits {
        h |= (((x >> i) & 1) as u64) << (3 * i)
            | (((y >> i) & 1) as u64) << (3 * i + 1)
            | (((z >> i) & 1) as u64) << (3 * i + 2);
    }
    h
}

#[inline]
pub fn deinterleave(h: u64, r_bits: u32) -> [u32; 3] {
    let mut out = [0u32; 3];
    for i in 0..r_bits {
        for (a, o) in out.iter_mut().enumerate() {
            *o |= (((h >> (3 * i + a as u32)) & 1) as u32) << i;
        }
    }
    out
}

/// Z-order index of a grid cell.
#[inline]
pub fn morton_index(cell: [u32; 3], r_bits: u32) -> u64 {
    interleave(cell[0], cell[1], cell[2], r_bits)
}

/// Axes to transpose form, in place.
fn axes_to_transpose(x: &mut [u32; 3], r_bits: u32) {
    let m = 1u32 << (r_bits - 1);
    // Inverse undo over bit planes, coarse to fine.
    let mut q = m;
    while q > 1 {
        let p = q - 1;
        for i in 0..3 {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q >>= 1;
    }
    // Gray encode across the three words.
    x[1] ^= x[0];
    x[2] ^= x[1];
    let mut t = 0;
    let mut q = m;
    while q > 1 {
        if x[2] & q != 0 {
            t ^= q - 1;
        }
        q >>= 1;
    }
    for v in x.iter_mut() {
        *v ^= t;
    }
}

fn transpose_to_axes(x: &mut [u32; 3], r_bits: u32) {
    let n = 2u32 << (r_bits - 1);
    // Gray decode.
    let t = x[2] >> 1;
    x[2] ^= x[1];
    x[1] ^= x[0];
    x[0] ^= t;
    // Undo excess work, fine to coarse.
    let mut q = 2;
    while q != n {
        let p = q - 1;
        for i in (0..3).rev() {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q <<= 1;
    }
}

/// Hilbert index of a grid cell; every coordinate must be `< 2^r_bits`.
#[inline]
pub fn hilbert_index(cell: [u32; 3], r_bits: u32) -> u64 {
    debug_assert!(cell.iter().all(|&c| (c as u64) < (1u64 << r_bits)));
    let mut t = cell;
    axes_to_transpose(&mut t, r_bits);
    // The first transposed word carries the most significant bit of each triple.
    interleave(t[2], t[1], t[0], r_bits)
}

/// Inverse of [`hilbert_index`].
#[inline]
pub fn hilbert_decode(h: u64, r_bits: u32) -> [u32; 3] {
    let [a, b, c] = deinterleave(h, r_bits);
    let mut t = [c, b, a];
    transpose_to_axes(&mut t, r_bits);
    t
}

#[inline]
pub fn curve_index(curve: Curve, cell: [u32; 3], r_bits: u32) -> u64 {
    match curve {
        Curve::Hilbert => hilbert_index(cell, r_bits),
        Curve::Morton => morton_index(cell, r_bits),
    }
}

/// Per-point curve indices and the permutation that sorts them.
#[derive(Debug, Clone, PartialEq)]
pub struct HilbertCode<T> {
    /// Index of point `i`, in original order.
    pub indices: Vec<u64>,
    /// `order[j]` is the original id of the `j`-th point along the curve.
    pub order: Vec<usize>,
    pub bbox: BBox<T>,
    pub r_bits: u32,
}

impl<T: Real> HilbertCode<T> {
    #[inline]
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Indices in serialized order.
    pub fn sorted_indices(&self) -> impl Iterator<Item = u64> + '_ {
        self.order.iter().map(|&i| self.indices[i])
    }

    /// Checks range, permutation and monotonicity invariants.
    pub fn validate(&self) -> Result<()> {
        let span = 1u64 << (3 * self.r_bits);
        if self.indices.iter().any(|&h| h >= span) {
            return Err(Error::Validation("index out of range".into()));
        }
        let mut seen = vec![false; self.len()];
        for &i in &self.order {
            if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Validation("order is not a permutation".into()));
            }
        }
        if self.order.len() != self.len() {
            return Err(Error::Validation("order length mismatch".into()));
        }
        let sorted: Vec<u64> = self.sorted_indices().collect();
        if sorted.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Validation("order does not sort the indices".into()));
        }
        Ok(())
    }
}

/// Curve indices of `points` under a caller-supplied bounding box.
pub fn encode_points<T: Real>(
    points: &[[T; 3]],
    bbox: &BBox<T>,
    r_bits: u32,
    curve: Curve,
) -> Vec<u64> {
    points
        .par_iter()
        .with_min_len(4096)
        .map(|p| curve_index(curve, discretize_point(&normalize_point(p, bbox), r_bits), r_bits))
        .collect()
}

/// Stable sort permutation of `keys` (ties keep original order).
pub fn sort_order(keys: &[u64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    // (key, id) pairs are unique, so the unstable sort is deterministic and stable in effect.
    order.par_sort_unstable_by_key(|&i| (keys[i], i));
    order
}

pub fn serialize<T: Real>(cloud: &PointCloud<T>, cfg: HilbertConfig) -> HilbertCode<T> {
    serialize_with(cloud, cfg, Curve::Hilbert)
}

pub fn serialize_with<T: Real>(
    cloud: &PointCloud<T>,
    cfg: HilbertConfig,
    curve: Curve,
) -> HilbertCode<T> {
    let bbox = bbox_of(cloud.coords().iter());
    let indices = encode_points(cloud.coords(), &bbox, cfg.r_bits, curve);
    let order = sort_order(&indices);
    HilbertCode { indices, order, bbox, r_bits: cfg.r_bits }
}

/// `L` contiguous runs of the serialized order.
///
/// The first `L - 1` parts hold `floor(N / L)` points; the last one also
/// absorbs the `N mod L` remainder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionSet {
    pub part_of: Vec<usize>,
    pub sizes: Vec<usize>,
    /// Start of each part in serialized positions, plus a final `N`.
    offsets: Vec<usize>,
}

impl PartitionSet {
    #[inline]
    pub fn num_parts(&self) -> usize {
        self.sizes.len()
    }

    /// Serialized-position range of part `j`.
    pub fn range(&self, j: usize) -> std::ops::Range<usize> {
        self.offsets[j]..self.offsets[j + 1]
    }

    /// Original ids of part `j`, in curve order.
    pub fn members<'a, T>(&self, code: &'a HilbertCode<T>, j: usize) -> &'a [usize] {
        &code.order[self.range(j)]
    }
}

pub fn partition<T>(code: &HilbertCode<T>, parts: usize) -> Result<PartitionSet> {
    let n = code.indices.len();
    if parts == 0 || parts > n {
        return Err(Error::BadParams(format!(
            "cannot split {n} points into {parts} parts (need 1 <= L <= N)"
        )));
    }
    let base = n / parts;
    let mut sizes = vec![base; parts];
    sizes[parts - 1] += n % parts;
    let mut offsets = Vec::with_capacity(parts + 1);
    offsets.push(0);
    for s in &sizes {
        offsets.push(offsets.last().unwrap() + s);
    }
    let mut part_of = vec![0; n];
    for j in 0..parts {
        for &i in &code.order[offsets[j]..offsets[j + 1]] {
            part_of[i] = j;
        }
    }
    Ok(PartitionSet { part_of, sizes, offsets })
}

/// Writes `original_index hilbert_index` pairs in serialized order.
///
/// `header` lines, if any, are emitted first prefixed with `# `.
pub fn write_code<T: Real>(path: &Path, code: &HilbertCode<T>, header: &[String]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for h in header {
        writeln!(w, "# {h}")?;
    }
    for &i in &code.order {
        writeln!(w, "{} {}", i, code.indices[i])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `(original_index, hilbert_index)` pairs, skipping `#` lines.
pub fn read_code_pairs(path: &Path) -> Result<Vec<(usize, u64)>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let mut it = t.split_whitespace();
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::parse(n + 1, "expected 'original_index hilbert_index'"));
        };
        let a = a.parse().map_err(|_| Error::parse(n + 1, "bad original index"))?;
        let b = b.parse().map_err(|_| Error::parse(n + 1, "bad hilbert index"))?;
        out.push((a, b));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l1(a: [u32; 3], b: [u32; 3]) -> u32 {
        (0..3).map(|i| a[i].abs_diff(b[i])).sum()
    }

    #[test]
    fn config_bounds() {
        assert!(HilbertConfig::new(0).is_err());
        assert!(HilbertConfig::new(22).is_err());
        assert_eq!(HilbertConfig::new(21).unwrap().index_span(), 1 << 63);
        assert_eq!(HilbertConfig::default().r_bits(), 16);
    }

    #[test]
    fn normalize_examples() {
        let c = PointCloud::<f64>::from_coords(vec![[0.0; 3], [2.0; 3]]).unwrap();
        let (u, bbox) = normalize(&c);
        assert_eq!(u, vec![[0.0; 3], [1.0; 3]]);
        assert_eq!(bbox, ([0.0; 3], [2.0; 3]));

        let single = PointCloud::<f64>::from_coords(vec![[5.0; 3]]).unwrap();
        assert_eq!(normalize(&single).0, vec![[0.5; 3]]);

        let flat =
            PointCloud::<f64>::from_coords(vec![[1.0, 0.0, 3.0], [1.0, 2.0, -1.0], [1.0, 1.0, 0.0]])
                .unwrap();
        assert!(normalize(&flat).0.iter().all(|p| p[0] == 0.5));
    }

    #[test]
    fn discretize_examples() {
        assert_eq!(discretize(0.0f64, 4), 0);
        assert_eq!(discretize(1.0f64, 4), 15);
        assert_eq!(discretize(0.5f64, 1), 1);
        assert_eq!(discretize(0.999_999f32, 4), 15);
    }

    #[test]
    fn gray_examples() {
        assert_eq!(gray_encode(0), 0);
        assert_eq!(gray_encode(3), 2);
        assert_eq!(gray_encode(7), 4);
        for v in 0..1024u64 {
            assert_eq!(gray_decode(gray_encode(v)), v);
            assert_eq!((gray_encode(v) ^ gray_encode(v + 1)).count_ones(), 1);
        }
    }

    #[test]
    fn interleave_examples() {
        assert_eq!(interleave(1, 0, 0, 1), 1);
        assert_eq!(interleave(0, 0, 1, 1), 4);
        assert_eq!(interleave(3, 0, 0, 2), 0b001001);
        assert_eq!(deinterleave(interleave(5, 6, 7, 3), 3), [5, 6, 7]);
    }

    #[test]
    fn origin_maps_to_zero() {
        for r in 1..=MAX_R_BITS {
            assert_eq!(hilbert_index([0, 0, 0], r), 0);
        }
    }

    #[test]
    fn order_one_cube_by_enumeration() {
        let mut cells = vec![None; 8];
        for x in 0..2 {
            for y in 0..2 {
                for z in 0..2 {
                    let h = hilbert_index([x, y, z], 1) as usize;
                    assert!(cells[h].replace([x, y, z]).is_none());
                }
            }
        }
        let cells: Vec<[u32; 3]> = cells.into_iter().map(Option::unwrap).collect();
        for w in cells.windows(2) {
            assert_eq!(l1(w[0], w[1]), 1);
        }
    }

    #[test]
    fn order_two_visits_every_cell_once() {
        let mut seen = vec![false; 512];
        for h in 0..512u64 {
            let c = hilbert_decode(h, 3);
            assert_eq!(hilbert_index(c, 3), h);
            let flat = (c[0] * 64 + c[1] * 8 + c[2]) as usize;
            assert!(!std::mem::replace(&mut seen[flat], true));
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn max_resolution_roundtrip() {
        let r = MAX_R_BITS;
        let m = (1u32 << r) - 1;
        for c in [[m, m, m], [m, 0, 1], [12345, 999_999, 2_000_000]] {
            let h = hilbert_index(c, r);
            assert!(h < 1 << 63);
            assert_eq!(hilbert_decode(h, r), c);
        }
    }

    #[test]
    fn serialize_stable_on_duplicates() {
        let c = PointCloud::<f64>::from_coords(vec![
            [1.0, 1.0, 1.0],
            [0.0, 0.0, 0.0],
            [1.0, 1.0, 1.0],
            [0.5, 0.2, 0.9],
        ])
        .unwrap();
        let code = serialize(&c, HilbertConfig::default());
        code.validate().unwrap();
        let p0 = code.order.iter().position(|&i| i == 0).unwrap();
        let p2 = code.order.iter().position(|&i| i == 2).unwrap();
        assert_eq!(p2, p0 + 1);
    }

    #[test]
    fn serialize_presorted_is_identity() {
        // Cell centres of the order-1 curve, listed in curve order.
        let pts: Vec<[f64; 3]> = (0..8)
            .map(|h| hilbert_decode(h, 1).map(|v| 0.25 + 0.5 * v as f64))
            .collect();
        let c = PointCloud::from_coords(pts).unwrap();
        let code = serialize(&c, HilbertConfig::new(1).unwrap());
        assert_eq!(code.order, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn single_point_serializes() {
        let c = PointCloud::<f64>::from_coords(vec![[3.0, 4.0, 5.0]]).unwrap();
        let code = serialize(&c, HilbertConfig::default());
        assert_eq!(code.order, vec![0]);
        assert!(partition(&code, 1).is_ok());
        assert!(matches!(partition(&code, 2), Err(Error::BadParams(_))));
    }

    fn line_code(n: usize) -> HilbertCode<f64> {
        let pts: Vec<[f64; 3]> = (0..n).map(|i| [i as f64, (i * 7 % 5) as f64, 0.0]).collect();
        serialize(&PointCloud::from_coords(pts).unwrap(), HilbertConfig::default())
    }

    #[test]
    fn partition_examples() {
        let p = partition(&line_code(12), 6).unwrap();
        assert_eq!(p.sizes, vec![2; 6]);
        let code = line_code(13);
        let p = partition(&code, 6).unwrap();
        assert_eq!(p.sizes, vec![2, 2, 2, 2, 2, 3]);
        let concat: Vec<usize> = (0..6).flat_map(|j| p.members(&code, j).to_vec()).collect();
        assert_eq!(concat, code.order);
        for j in 0..6 {
            assert!(p.members(&code, j).iter().all(|&i| p.part_of[i] == j));
        }
        assert!(partition(&line_code(5), 6).is_err());
        assert!(partition(&line_code(5), 0).is_err());
    }

    #[test]
    fn code_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.txt");
        let code = line_code(20);
        write_code(&path, &code, &["provenance".to_string()]).unwrap();
        let pairs = read_code_pairs(&path).unwrap();
        assert_eq!(pairs.len(), 20);
        for (j, (i, h)) in pairs.into_iter().enumerate() {
            assert_eq!(i, code.order[j]);
            assert_eq!(h, code.indices[i]);
        }
    }
}
