//! Local-to-global aggregation: Fourier relative-position embeddings,
//! localized cross-attention, cosine k-NN adjacency, symmetric normalization
//! and a single GCN message-passing step.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::format::{read_f64, read_u32, read_u64, u32_len};
use crate::matrix::{Matrix, SparseMatrix};
use crate::neighbors::NeighborMap;
use crate::provenance::Provenance;
use crate::scalar::{dist2, Real};

pub const DEFAULT_K_GRAPH: usize = 8;

/// Learnable quantities of the aggregation block, all `d x d` except `freq`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggParams<T> {
    pub w_q: Matrix<T>,
    pub w_k: Matrix<T>,
    pub w_v: Matrix<T>,
    pub w_r: Matrix<T>,
    pub w_m: Matrix<T>,
    pub w_s: Matrix<T>,
    /// `3 x d/2` Fourier frequencies.
    pub freq: Matrix<T>,
    /// Relative-position scale, `> 0`.
    pub sigma: T,
    pub k_graph: usize,
    /// Add `W_r R` instead of raw `R` on the value path.
    pub value_uses_wr: bool,
}

impl<T: Real> AggParams<T> {
    /// Gaussian projections scaled by `1/sqrt(d)`, standard-normal
    /// frequencies and `sigma = 1`.
    pub fn seeded(d: usize, seed: u64) -> Result<Self> {
        if d == 0 || d % 2 != 0 {
            return Err(Error::BadParams(format!("feature dimension must be even, got {d}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = 1.0 / (d as f64).sqrt();
        Ok(Self {
            w_q: Matrix::gaussian(d, d, s, &mut rng),
            w_k: Matrix::gaussian(d, d, s, &mut rng),
            w_v: Matrix::gaussian(d, d, s, &mut rng),
            w_r: Matrix::gaussian(d, d, s, &mut rng),
            w_m: Matrix::gaussian(d, d, s, &mut rng),
            w_s: Matrix::gaussian(d, d, s, &mut rng),
            freq: Matrix::gaussian(3, d / 2, 1.0, &mut rng),
            sigma: T::one(),
            k_graph: DEFAULT_K_GRAPH,
            value_uses_wr: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.w_q.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || d % 2 != 0 {
            return Err(Error::BadParams(format!("feature dimension must be even, got {d}")));
        }
        for (name, m) in [
            ("W_q", &self.w_q),
            ("W_k", &self.w_k),
            ("W_v", &self.w_v),
            ("W_r", &self.w_r),
            ("W_m", &self.w_m),
            ("W_s", &self.w_s),
        ] {
            if m.rows() != d || m.cols() != d {
                return Err(Error::DimensionMismatch { what: name, expected: d, found: m.cols() });
            }
            if !m.is_finite() {
                return Err(Error::BadParams(format!("{name} has non-finite entries")));
            }
        }
        if self.freq.rows() != 3 || self.freq.cols() != d / 2 {
            return Err(Error::DimensionMismatch {
                what: "frequency matrix columns",
                expected: d / 2,
                found: self.freq.cols(),
            });
        }
        if !self.freq.is_finite() {
            return Err(Error::BadParams("frequency matrix has non-finite entries".into()));
        }
        if !(self.sigma > T::zero()) || !self.sigma.is_finite() {
            return Err(Error::BadParams("sigma must be positive".into()));
        }
        if self.k_graph == 0 {
            return Err(Error::BadParams("k_graph must be at least 1".into()));
        }
        Ok(())
    }
}

/// `[sin(2 pi x^T B), cos(2 pi x^T B)]` for a `3 x d/2` frequency matrix `B`.
pub fn fourier_pos<T: Real>(x: &[T; 3], freq: &Matrix<T>) -> Vec<T> {
    let half = freq.cols();
    let mut out = vec![T::zero(); 2 * half];
    fourier_pos_into(x, freq, &mut out);
    out
}

fn fourier_pos_into<T: Real>(x: &[T; 3], freq: &Matrix<T>, out: &mut [T]) {
    let half = freq.cols();
    let two_pi = T::TAU();
    for j in 0..half {
        let proj = x[0] * freq[(0, j)] + x[1] * freq[(1, j)] + x[2] * freq[(2, j)];
        let (s, c) = (two_pi * proj).sin_cos();
        out[j] = s;
        out[half + j] = c;
    }
}

/// Max-subtracted softmax, in place.
pub fn softmax_in_place<T: Real>(s: &mut [T]) {
    let max = s.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in s.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in s.iter_mut() {
        *v /= total;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput<T> {
    pub updated: Matrix<T>,
    /// Softmax weights per query, aligned with its neighbour list.
    pub weights: Vec<Vec<T>>,
}

/// Cross-attention of each global super-point over its neighbouring local
/// super-points. Queries with no neighbours are returned unchanged.
pub fn localized_cross_attention<T: Real>(
    global_coords: &[[T; 3]],
    global_feats: &Matrix<T>,
    local_coords: &[[T; 3]],
    local_feats: &Matrix<T>,
    neighbors: &NeighborMap,
    params: &AggParams<T>,
) -> Result<AttentionOutput<T>> {
    params.validate()?;
    let d = params.dim();
    let m = global_coords.len();
    check_dim("global features", d, global_feats.cols())?;
    check_dim("local features", d, local_feats.cols())?;
    check_dim("global rows", m, global_feats.rows())?;
    check_dim("local rows", local_coords.len(), local_feats.rows())?;
    check_dim("neighbour queries", m, neighbors.num_queries())?;
    if let Some(&bad) = neighbors.lists.iter().flatten().find(|&&j| j >= local_coords.len()) {
        return Err(Error::ShapeMismatch(format!("neighbour id {bad} out of range")));
    }

    let scale = T::one() / T::of_usize(d).sqrt();
    let inv_sigma = T::one() / params.sigma;
    let rows: Vec<(Vec<T>, Vec<T>)> = (0..m)
        .into_par_iter()
        .map(|i| {
            let f_g = global_feats.row(i);
            let list = &neighbors.lists[i];
            if list.is_empty() {
                return (f_g.to_vec(), Vec::new());
            }
            let q = params.w_q.matvec(f_g);
            let mut rel = vec![T::zero(); d];
            let mut tmp = vec![T::zero(); d];
            let mut wr_rel = vec![T::zero(); d];
            let mut key = vec![T::zero(); d];
            let mut logits = Vec::with_capacity(list.len());
            let mut values = Vec::with_capacity(list.len());
            for &j in list {
                let pg = global_coords[i];
                let pl = local_coords[j];
                let delta = [
                    (pg[0] - pl[0]) * inv_sigma,
                    (pg[1] - pl[1]) * inv_sigma,
                    (pg[2] - pl[2]) * inv_sigma,
                ];
                fourier_pos_into(&delta, &params.freq, &mut rel);
                params.w_r.matvec_into(&rel, &mut wr_rel);
                let f_l = local_feats.row(j);
                for c in 0..d {
                    tmp[c] = f_l[c] + wr_rel[c];
                }
                params.w_k.matvec_into(&tmp, &mut key);
                let s = q.iter().zip(&key).fold(T::zero(), |a, (&x, &y)| a + x * y) * scale;
                logits.push(s);
                let pos = if params.value_uses_wr { &wr_rel } else { &rel };
                for c in 0..d {
                    tmp[c] = f_l[c] + pos[c];
                }
                values.push(params.w_v.matvec(&tmp));
            }
            softmax_in_place(&mut logits);
            let mut acc = vec![T::zero(); d];
            for (w, v) in logits.iter().zip(&values) {
                for c in 0..d {
                    acc[c] += *w * v[c];
                }
            }
            let out = f_g.iter().zip(&acc).map(|(&f, &a)| f + a).collect();
            (out, logits)
        })
        .collect();

    let mut updated = Matrix::zeros(m, d);
    let mut weights = Vec::with_capacity(m);
    for (i, (row, w)) in rows.into_iter().enumerate() {
        updated.row_mut(i).copy_from_slice(&row);
        weights.push(w);
    }
    Ok(AttentionOutput { updated, weights })
}

fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { what, expected, found });
    }
    Ok(())
}

/// Exact k nearest other points per point, ties to the lower index.
pub fn coord_knn<T: Real>(coords: &[[T; 3]], k: usize) -> Vec<Vec<usize>> {
    coords
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut cand: Vec<(T, usize)> = coords
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, q)| (dist2(p, q), j))
                .collect();
            let by = |a: &(T, usize), b: &(T, usize)| {
                a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
            };
            if cand.len() > k {
                cand.select_nth_unstable_by(k - 1, by);
                cand.truncate(k);
            }
            cand.sort_by(by);
            cand.iter().map(|&(_, j)| j).collect()
        })
        .collect()
}

/// Cosine similarity with the positivity indicator; zero-norm rows give 0.
#[inline]
pub fn positive_cosine<T: Real>(a: &[T], b: &[T]) -> T {
    let dot = a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y);
    if !(dot > T::zero()) {
        return T::zero();
    }
    let na = a.iter().fold(T::zero(), |s, &x| s + x * x);
    let nb = b.iter().fold(T::zero(), |s, &x| s + x * x);
    let denom = (na * nb).sqrt();
    if denom <= T::zero() {
        return T::zero();
    }
    (dot / denom).min(T::one())
}

/// Row-sparse adjacency over the coordinate k-NN graph weighted by positive
/// cosine similarity of the (original) global features.
pub fn build_adjacency<T: Real>(
    feats: &Matrix<T>,
    coords: &[[T; 3]],
    k_graph: usize,
) -> Result<SparseMatrix<T>> {
    if k_graph == 0 {
        return Err(Error::BadParams("k_graph must be at least 1".into()));
    }
    check_dim("adjacency rows", coords.len(), feats.rows())?;
    let knn = coord_knn(coords, k_graph);
    let rows = knn
        .iter()
        .enumerate()
        .map(|(i, nb)| {
            nb.iter()
                .map(|&j| (j, positive_cosine(feats.row(i), feats.row(j))))
                .collect()
        })
        .collect();
    Ok(SparseMatrix::from_rows(rows))
}

/// Elementwise `max(W, W^T)`.
pub fn symmetrize<T: Real>(w: &SparseMatrix<T>) -> SparseMatrix<T> {
    let t = w.transpose();
    let rows = (0..w.dim())
        .map(|i| {
            let (a, b) = (w.row(i), t.row(i));
            let mut out = Vec::with_capacity(a.len() + b.len());
            let (mut x, mut y) = (0, 0);
            while x < a.len() || y < b.len() {
                match (a.get(x), b.get(y)) {
                    (Some(&(ca, va)), Some(&(cb, vb))) if ca == cb => {
                        out.push((ca, va.max(vb)));
                        x += 1;
                        y += 1;
                    }
                    (Some(&(ca, va)), Some(&(cb, _))) if ca < cb => {
                        out.push((ca, va));
                        x += 1;
                    }
                    (Some(&(ca, va)), None) => {
                        out.push((ca, va));
                        x += 1;
                    }
                    (_, Some(&(cb, vb))) => {
                        out.push((cb, vb));
                        y += 1;
                    }
                    (None, None) => unreachable!(),
                }
            }
            out
        })
        .collect();
    SparseMatrix::from_rows(rows)
}

/// `D^{-1/2} S D^{-1/2}` of the symmetrized adjacency `S`; isolated nodes get
/// a zero factor.
pub fn normalize_adjacency<T: Real>(w: &SparseMatrix<T>) -> SparseMatrix<T> {
    let s = symmetrize(w);
    let factor: Vec<T> = s
        .row_sums()
        .into_iter()
        .map(|d| if d > T::zero() { T::one() / d.sqrt() } else { T::zero() })
        .collect();
    let rows = (0..s.dim())
        .map(|i| s.row(i).iter().map(|&(j, v)| (j, v * (factor[i] * factor[j]))).collect())
        .collect();
    SparseMatrix::from_rows(rows)
}

/// `ReLU(W_m (W~ F) + W_s F)`, row by row.
pub fn gcn_message_pass<T: Real>(
    feats: &Matrix<T>,
    norm_adj: &SparseMatrix<T>,
    w_m: &Matrix<T>,
    w_s: &Matrix<T>,
) -> Result<Matrix<T>> {
    let d = feats.cols();
    check_dim("adjacency size", feats.rows(), norm_adj.dim())?;
    check_dim("W_m", d, w_m.cols())?;
    check_dim("W_m rows", d, w_m.rows())?;
    check_dim("W_s", d, w_s.cols())?;
    check_dim("W_s rows", d, w_s.rows())?;
    let mixed = norm_adj.mul_dense(feats);
    let mut out = Matrix::zeros(feats.rows(), d);
    let mut a = vec![T::zero(); d];
    let mut b = vec![T::zero(); d];
    for i in 0..feats.rows() {
        w_m.matvec_into(mixed.row(i), &mut a);
        w_s.matvec_into(feats.row(i), &mut b);
        for (o, (&x, &y)) in out.row_mut(i).iter_mut().zip(a.iter().zip(&b)) {
            *o = (x + y).max(T::zero());
        }
    }
    Ok(out)
}

/// Inputs and outputs of one aggregation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationState<T> {
    pub global_coords: Vec<[T; 3]>,
    pub global_feats: Matrix<T>,
    pub local_coords: Vec<[T; 3]>,
    pub local_feats: Matrix<T>,
    pub neighbor_map: NeighborMap,
    /// Attention output, before message passing.
    pub attended: Matrix<T>,
    /// Final representations after one GCN step.
    pub updated: Matrix<T>,
    pub adjacency: SparseMatrix<T>,
    pub norm_adjacency: SparseMatrix<T>,
    pub k_graph: usize,
}

impl<T: Real> AggregationState<T> {
    /// Attention, then adjacency from the original global features, then one
    /// message-passing step.
    pub fn compute(
        global_coords: Vec<[T; 3]>,
        global_feats: Matrix<T>,
        local_coords: Vec<[T; 3]>,
        local_feats: Matrix<T>,
        neighbor_map: NeighborMap,
        params: &AggParams<T>,
    ) -> Result<Self> {
        let att = localized_cross_attention(
            &global_coords,
            &global_feats,
            &local_coords,
            &local_feats,
            &neighbor_map,
            params,
        )?;
        let adjacency = build_adjacency(&global_feats, &global_coords, params.k_graph)?;
        let norm_adjacency = normalize_adjacency(&adjacency);
        let updated = gcn_message_pass(&att.updated, &norm_adjacency, &params.w_m, &params.w_s)?;
        Ok(Self {
            global_coords,
            global_feats,
            local_coords,
            local_feats,
            neighbor_map,
            attended: att.updated,
            updated,
            adjacency,
            norm_adjacency,
            k_graph: params.k_graph,
        })
    }

    pub fn dim(&self) -> usize {
        self.global_feats.cols()
    }
}

const AGG_MAGIC: &[u8; 4] = b"PAGG";
const AGG_VERSION: u32 = 1;

/// Header-tagged little-endian dump of an [`AggregationState`].
pub fn write_aggregation_state<T: Real>(
    path: &Path,
    state: &AggregationState<T>,
    prov: Provenance,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    encode_aggregation_state(&mut w, state, prov)?;
    w.flush()?;
    Ok(())
}

pub fn encode_aggregation_state<T: Real, W: Write>(
    w: &mut W,
    s: &AggregationState<T>,
    prov: Provenance,
) -> Result<()> {
    w.write_all(AGG_MAGIC)?;
    w.write_all(&AGG_VERSION.to_le_bytes())?;
    w.write_all(&prov.config_hash.to_le_bytes())?;
    w.write_all(&prov.seed.to_le_bytes())?;
    for v in [
        s.global_coords.len(),
        s.dim(),
        s.neighbor_map.k,
        s.k_graph,
        s.local_coords.len(),
    ] {
        w.write_all(&u32_len(v)?.to_le_bytes())?;
    }
    let put = |w: &mut W, v: T| w.write_all(&v.as_f64().to_le_bytes());
    for p in s.global_coords.iter().chain(&s.local_coords) {
        for &v in p {
            put(w, v)?;
        }
    }
    for m in [&s.global_feats, &s.local_feats, &s.attended, &s.updated] {
        for &v in m.as_slice() {
            put(w, v)?;
        }
    }
    for list in &s.neighbor_map.lists {
        w.write_all(&u32_len(list.len())?.to_le_bytes())?;
        for &j in list {
            w.write_all(&u32_len(j)?.to_le_bytes())?;
        }
    }
    for adj in [&s.adjacency, &s.norm_adjacency] {
        for i in 0..adj.dim() {
            let row = adj.row(i);
            w.write_all(&u32_len(row.len())?.to_le_bytes())?;
            for &(j, v) in row {
                w.write_all(&u32_len(j)?.to_le_bytes())?;
                put(w, v)?;
            }
        }
    }
    Ok(())
}

pub fn read_aggregation_state<T: Real>(path: &Path) -> Result<(AggregationState<T>, Provenance)> {
    decode_aggregation_state(BufReader::new(File::open(path)?))
}

pub fn decode_aggregation_state<T: Real, R: Read>(
    mut r: R,
) -> Result<(AggregationState<T>, Provenance)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::parse(0, "truncated header"))?;
    if &magic != AGG_MAGIC {
        return Err(Error::parse(0, "bad magic, expected PAGG"));
    }
    let version = read_u32(&mut r)?;
    if version != AGG_VERSION {
        return Err(Error::parse(0, format!("unsupported aggregation state version {version}")));
    }
    let prov = Provenance { config_hash: read_u64(&mut r)?, seed: read_u64(&mut r)? };
    let m = read_u32(&mut r)? as usize;
    let d = read_u32(&mut r)? as usize;
    let k = read_u32(&mut r)? as usize;
    let k_graph = read_u32(&mut r)? as usize;
    let nl = read_u32(&mut r)? as usize;

    let coords = |n: usize, r: &mut R| -> Result<Vec<[T; 3]>> {
        (0..n).map(|_| Ok([read_f64(r)?, read_f64(r)?, read_f64(r)?])).collect()
    };
    let global_coords = coords(m, &mut r)?;
    let local_coords = coords(nl, &mut r)?;
    let matrix = |rows: usize, r: &mut R| -> Result<Matrix<T>> {
        let data = (0..rows * d).map(|_| read_f64(r)).collect::<Result<Vec<T>>>()?;
        Matrix::from_vec(rows, d, data)
    };
    let global_feats = matrix(m, &mut r)?;
    let local_feats = matrix(nl, &mut r)?;
    let attended = matrix(m, &mut r)?;
    let updated = matrix(m, &mut r)?;
    let mut lists = Vec::with_capacity(m);
    for _ in 0..m {
        let c = read_u32(&mut r)? as usize;
        let list = (0..c)
            .map(|_| {
                let j = read_u32(&mut r)? as usize;
                if j >= nl {
                    return Err(Error::parse(0, format!("neighbour id {j} out of range")));
                }
                Ok(j)
            })
            .collect::<Result<Vec<_>>>()?;
        lists.push(list);
    }
    let sparse = |r: &mut R| -> Result<SparseMatrix<T>> {
        let mut rows = Vec::with_capacity(m);
        for _ in 0..m {
            let c = read_u32(r)? as usize;
            let mut row = Vec::with_capacity(c);
            for _ in 0..c {
                let j = read_u32(r)? as usize;
                if j >= m {
                    return Err(Error::parse(0, format!("adjacency column {j} out of range")));
                }
                row.push((j, read_f64(r)?));
            }
            rows.push(row);
        }
        Ok(SparseMatrix::from_rows(rows))
    };
    let adjacency = sparse(&mut r)?;
    let norm_adjacency = sparse(&mut r)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::parse(0, "trailing bytes after aggregation state"));
    }
    Ok((
        AggregationState {
            global_coords,
            global_feats,
            local_coords,
            local_feats,
            neighbor_map: NeighborMap { k, lists },
            attended,
            updated,
            adjacency,
            norm_adjacency,
            k_graph,
        },
        prov,
    ))
}
