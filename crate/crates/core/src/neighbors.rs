//! Label-constrained approximate k-NN over a jointly serialized set of global
//! and local super-points, plus the exact oracle and recall metric.
//!
//! Every point gets the key `label_offset * label + h` where `h` is its
//! Hilbert index under the bounding box of the union and
//! `label_offset = 2^(3 r_bits)`. Sorting by key lays each label out as one
//! contiguous run in curve order. A query then walks outward from its own
//! position, one candidate at a time, taking whichever side's next local
//! point is closer, until it has `k` neighbours or hits both ends of its
//! label's run.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::cloud::bbox_of;
use crate::error::{Error, Result};
use crate::hilbert::{encode_points, BBox, Curve, HilbertConfig};
use crate::sampling::SuperPoints;
use crate::scalar::{dist2, Real};

/// One point of the serialized union.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Entry {
    /// Row in the global or local super-point set.
    pub id: usize,
    pub is_global: bool,
    pub label: u32,
}

#[derive(Debug, Clone)]
pub struct CombinedIndex<T> {
    /// Combined keys in ascending order.
    pub keys: Vec<u64>,
    /// Entries aligned with `keys`.
    pub entries: Vec<Entry>,
    /// Coordinates aligned with `keys`.
    coords: Vec<[T; 3]>,
    /// Sorted position of each global point.
    global_pos: Vec<usize>,
    /// `[lo, hi)` sorted-position range of each global point's label.
    global_run: Vec<(usize, usize)>,
    pub label_offset: u64,
    pub r_bits: u32,
    pub bbox: BBox<T>,
}

impl<T: Real> CombinedIndex<T> {
    #[inline]
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    #[inline]
    pub fn num_queries(&self) -> usize {
        self.global_pos.len()
    }

    /// Sorted position of global point `g`.
    pub fn position_of(&self, g: usize) -> usize {
        self.global_pos[g]
    }
}

/// Largest `r_bits` for which `max_label` still fits beside the curve index.
pub fn max_r_bits_for_label(max_label: u64) -> u32 {
    let label_bits = 64 - max_label.leading_zeros();
    ((64 - label_bits) / 3).min(crate::hilbert::MAX_R_BITS)
}

pub fn build_combined_index<T: Real>(
    global: &SuperPoints<T>,
    local: &SuperPoints<T>,
    global_labels: &[u32],
    local_labels: &[u32],
    cfg: HilbertConfig,
) -> Result<CombinedIndex<T>> {
    build_combined_index_from_coords(&global.coords, &local.coords, global_labels, local_labels, cfg)
}

pub fn build_combined_index_from_coords<T: Real>(
    global: &[[T; 3]],
    local: &[[T; 3]],
    global_labels: &[u32],
    local_labels: &[u32],
    cfg: HilbertConfig,
) -> Result<CombinedIndex<T>> {
    if global_labels.len() != global.len() || local_labels.len() != local.len() {
        return Err(Error::ShapeMismatch(format!(
            "labels ({} global, {} local) do not cover super-points ({} global, {} local)",
            global_labels.len(),
            local_labels.len(),
            global.len(),
            local.len()
        )));
    }
    let r_bits = cfg.r_bits();
    let label_offset = cfg.index_span();
    let max_label = global_labels.iter().chain(local_labels).copied().max().unwrap_or(0) as u64;
    if max_label
        .checked_mul(label_offset)
        .and_then(|v| v.checked_add(label_offset - 1))
        .is_none()
    {
        return Err(Error::LabelOverflow {
            max_label,
            r_bits,
            max_r_bits: max_r_bits_for_label(max_label),
        });
    }

    // One bounding box for the whole union.
    let bbox = bbox_of(global.iter().chain(local.iter()));
    let mut all = Vec::with_capacity(global.len() + local.len());
    all.extend_from_slice(global);
    all.extend_from_slice(local);
    let h = encode_points(&all, &bbox, r_bits, Curve::Hilbert);

    let ng = global.len();
    let unsorted: Vec<(u64, Entry)> = h
        .iter()
        .enumerate()
        .map(|(u, &h)| {
            let (id, is_global, label) = if u < ng {
                (u, true, global_labels[u])
            } else {
                (u - ng, false, local_labels[u - ng])
            };
            (label as u64 * label_offset + h, Entry { id, is_global, label })
        })
        .collect();
    let mut perm: Vec<usize> = (0..unsorted.len()).collect();
    // Points sharing a grid cell are ordered by coordinates, then globals
    // before locals, then by id.
    perm.par_sort_unstable_by(|&a, &b| {
        let ((ka, ea), (kb, eb)) = (&unsorted[a], &unsorted[b]);
        ka.cmp(kb)
            .then_with(|| {
                let (pa, pb) = (&all[a], &all[b]);
                (0..3)
                    .map(|i| pa[i].partial_cmp(&pb[i]).unwrap_or(std::cmp::Ordering::Equal))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .then_with(|| (!ea.is_global, ea.id).cmp(&(!eb.is_global, eb.id)))
    });

    let keys: Vec<u64> = perm.iter().map(|&u| unsorted[u].0).collect();
    let entries: Vec<Entry> = perm.iter().map(|&u| unsorted[u].1).collect();
    let coords: Vec<[T; 3]> = perm.iter().map(|&u| all[u]).collect();

    let mut global_pos = vec![0; ng];
    let mut global_run = vec![(0, 0); ng];
    let mut run_start = 0;
    for pos in 0..=entries.len() {
        let boundary = pos == entries.len() || entries[pos].label != entries[run_start].label;
        if boundary {
            for q in run_start..pos {
                if entries[q].is_global {
                    global_pos[entries[q].id] = q;
                    global_run[entries[q].id] = (run_start, pos);
                }
            }
            run_start = pos;
        }
    }

    Ok(CombinedIndex { keys, entries, coords, global_pos, global_run, label_offset, r_bits, bbox })
}

/// For each global super-point, ids of its neighbouring local super-points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborMap {
    pub k: usize,
    pub lists: Vec<Vec<usize>>,
}

impl NeighborMap {
    #[inline]
    pub fn num_queries(&self) -> usize {
        self.lists.len()
    }

    /// Number of listed neighbours whose label differs from their query's.
    pub fn label_violations(&self, global_labels: &[u32], local_labels: &[u32]) -> usize {
        self.lists
            .iter()
            .enumerate()
            .map(|(g, l)| l.iter().filter(|&&j| local_labels[j] != global_labels[g]).count())
            .sum()
    }
}

/// Windowed neighbour scan for one query.
fn scan_query<T: Real>(index: &CombinedIndex<T>, g: usize, k: usize, out: &mut Vec<usize>) {
    let p = index.global_pos[g];
    let (lo, hi) = index.global_run[g];
    let q = index.coords[p];
    let entries = &index.entries;
    // `left` is one past the next left candidate; `right` is the next right candidate.
    let mut left = p;
    let mut right = p + 1;
    while out.len() < k {
        while left > lo && entries[left - 1].is_global {
            left -= 1;
        }
        while right < hi && entries[right].is_global {
            right += 1;
        }
        let has_left = left > lo;
        let has_right = right < hi;
        let take_left = match (has_left, has_right) {
            (false, false) => break,
            (true, false) => true,
            (false, true) => false,
            (true, true) => dist2(&index.coords[left - 1], &q) <= dist2(&index.coords[right], &q),
        };
        if take_left {
            left -= 1;
            out.push(entries[left].id);
        } else {
            out.push(entries[right].id);
            right += 1;
        }
    }
}

/// Neighbour list of a single global point `g`.
pub fn approx_knn_query<T: Real>(index: &CombinedIndex<T>, g: usize, k: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    scan_query(index, g, k, &mut out);
    out
}

/// Windowed scan around every global point of the combined index.
pub fn approx_knn<T: Real>(index: &CombinedIndex<T>, k: usize) -> Result<NeighborMap> {
    if k == 0 {
        return Err(Error::BadParams("k must be at least 1".into()));
    }
    let lists = (0..index.num_queries())
        .into_par_iter()
        .map(|g| approx_knn_query(index, g, k))
        .collect();
    Ok(NeighborMap { k, lists })
}

/// Brute-force k nearest local points per global point, ties to lower id.
///
/// With `constrained`, candidates are restricted to the query's label.
pub fn exact_knn<T: Real>(
    global: &[[T; 3]],
    local: &[[T; 3]],
    global_labels: &[u32],
    local_labels: &[u32],
    k: usize,
    constrained: bool,
) -> Result<NeighborMap> {
    if k == 0 {
        return Err(Error::BadParams("k must be at least 1".into()));
    }
    if constrained && (global_labels.len() != global.len() || local_labels.len() != local.len()) {
        return Err(Error::ShapeMismatch("labels do not cover super-points".into()));
    }
    let lists = global
        .par_iter()
        .enumerate()
        .map(|(g, q)| {
            let mut cand: Vec<(T, usize)> = local
                .iter()
                .enumerate()
                .filter(|(j, _)| !constrained || local_labels[*j] == global_labels[g])
                .map(|(j, p)| (dist2(q, p), j))
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
        .collect();
    Ok(NeighborMap { k, lists })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallReport {
    /// `None` for queries whose exact list is empty.
    pub per_query: Vec<Option<f64>>,
    /// Mean over counted queries; 1.0 when none are counted.
    pub mean: f64,
    pub counted: usize,
}

pub fn recall_at_k(approx: &NeighborMap, exact: &NeighborMap) -> Result<RecallReport> {
    if approx.num_queries() != exact.num_queries() {
        return Err(Error::QuerySetMismatch(format!(
            "approximate map has {} queries, exact map has {}",
            approx.num_queries(),
            exact.num_queries()
        )));
    }
    if approx.k != exact.k {
        return Err(Error::QuerySetMismatch(format!(
            "approximate k={} but exact k={}",
            approx.k, exact.k
        )));
    }
    let per_query: Vec<Option<f64>> = approx
        .lists
        .iter()
        .zip(&exact.lists)
        .map(|(a, e)| {
            if e.is_empty() {
                return None;
            }
            let hit = e.iter().filter(|j| a.contains(j)).count();
            Some(hit as f64 / e.len() as f64)
        })
        .collect();
    let counted = per_query.iter().flatten().count();
    let mean = if counted == 0 {
        1.0
    } else {
        per_query.iter().flatten().sum::<f64>() / counted as f64
    };
    Ok(RecallReport { per_query, mean, counted })
}

/// Writes `global_id: local_id,local_id,...` lines after a `# k=<k>` header.
pub fn write_neighbor_map(path: &Path, map: &NeighborMap, header: &[String]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for h in header {
        writeln!(w, "# {h}")?;
    }
    writeln!(w, "# k={}", map.k)?;
    for (g, list) in map.lists.iter().enumerate() {
        write!(w, "{g}:")?;
        for (n, j) in list.iter().enumerate() {
            write!(w, "{}{j}", if n == 0 { " " } else { "," })?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the format produced by [`write_neighbor_map`]. Without a `# k=`
/// header, `k` is the longest list.
pub fn read_neighbor_map(path: &Path) -> Result<NeighborMap> {
    let r = BufReader::new(File::open(path)?);
    let mut k = None;
    let mut lists = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if let Some(rest) = t.strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("k=") {
                k = Some(v.parse().map_err(|_| Error::parse(n + 1, "bad k header"))?);
            }
            continue;
        }
        if t.is_empty() {
            continue;
        }
        let (id, rest) = t
            .split_once(':')
            .ok_or_else(|| Error::parse(n + 1, "expected 'global_id: ids'"))?;
        let id: usize = id.trim().parse().map_err(|_| Error::parse(n + 1, "bad global id"))?;
        if id != lists.len() {
            return Err(Error::parse(n + 1, format!("expected query {}, found {id}", lists.len())));
        }
        let ids = rest
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| Error::parse(n + 1, format!("bad local id '{s}'"))))
            .collect::<Result<Vec<usize>>>()?;
        lists.push(ids);
    }
    let k = k.unwrap_or_else(|| lists.iter().map(Vec::len).max().unwrap_or(0));
    Ok(NeighborMap { k, lists })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(r: u32) -> HilbertConfig {
        HilbertConfig::new(r).unwrap()
    }

    #[test]
    fn labels_occupy_disjoint_ranges() {
        let g = vec![[0.0f64, 0.0, 0.0], [1.0, 1.0, 1.0]];
        let l = vec![[0.5, 0.5, 0.5], [0.9, 0.1, 0.0], [0.1, 0.9, 0.3]];
        let idx = build_combined_index_from_coords(&g, &l, &[1, 0], &[0, 1, 0], cfg(4)).unwrap();
        assert_eq!(idx.label_offset, 1 << 12);
        let last0 = idx.entries.iter().rposition(|e| e.label == 0).unwrap();
        let first1 = idx.entries.iter().position(|e| e.label == 1).unwrap();
        assert!(last0 < first1);
        assert!(idx.keys[last0] < 1 << 12 && idx.keys[first1] >= 1 << 12);
        assert!(idx.keys.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn single_label_keys_are_hilbert_order() {
        let g = vec![[0.0f64, 0.0, 0.0], [1.0, 0.2, 0.4]];
        let l = vec![[0.5, 0.5, 0.5], [0.9, 0.1, 0.0], [0.1, 0.9, 0.3]];
        let idx = build_combined_index_from_coords(&g, &l, &[0, 0], &[0, 0, 0], cfg(8)).unwrap();
        let mut all = g.clone();
        all.extend_from_slice(&l);
        let bbox = bbox_of(all.iter());
        let h = encode_points(&all, &bbox, 8, Curve::Hilbert);
        let mut sorted = h.clone();
        sorted.sort_unstable();
        assert_eq!(idx.keys, sorted);
    }

    #[test]
    fn label_overflow_reports_max_r_bits() {
        let g = vec![[0.0f64; 3]];
        let e = build_combined_index_from_coords(&g, &g, &[1 << 16], &[0], cfg(21)).unwrap_err();
        match e {
            Error::LabelOverflow { max_r_bits, .. } => assert_eq!(max_r_bits, 15),
            other => panic!("unexpected {other}"),
        }
        assert!(build_combined_index_from_coords(&g, &g, &[1 << 16], &[0], cfg(15)).is_ok());
        assert!(build_combined_index_from_coords(&g, &g, &[(1 << 16) - 1], &[0], cfg(16)).is_ok());
    }

    #[test]
    fn empty_label_gives_empty_list() {
        let g = vec![[0.0f64; 3], [1.0; 3]];
        let l = vec![[0.1f64; 3], [0.2; 3]];
        let idx = build_combined_index_from_coords(&g, &l, &[0, 3], &[0, 0], cfg(10)).unwrap();
        let m = approx_knn(&idx, 4).unwrap();
        assert_eq!(m.lists[1], Vec::<usize>::new());
        let mut l0 = m.lists[0].clone();
        l0.sort_unstable();
        assert_eq!(l0, vec![0, 1]);
        assert!(approx_knn(&idx, 0).is_err());
    }

    #[test]
    fn exact_examples() {
        let g = vec![[0.0f64, 0.0, 0.0]];
        let l = vec![[3.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let m = exact_knn(&g, &l, &[0], &[0, 0, 0], 1, false).unwrap();
        assert_eq!(m.lists[0], vec![1]);
        let m = exact_knn(&g, &l, &[0], &[0, 0, 0], 10, false).unwrap();
        assert_eq!(m.lists[0], vec![1, 2, 0]);
        let m = exact_knn(&g, &l, &[0], &[5, 0, 5], 10, true).unwrap();
        assert_eq!(m.lists[0], vec![1]);
    }

    #[test]
    fn exact_matches_distance_matrix_by_hand() {
        // 5 points; query = point 0, candidates = points 1..5.
        let pts = [[0.0f64, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.5, 0.0], [1.0, 1.0, 1.0], [0.0, 0.0, -3.0]];
        // Squared distances to point 0: 4, 2.25, 3, 9 -> two nearest are (local ids) 1 and 2.
        let m = exact_knn(&pts[..1], &pts[1..], &[0], &[0; 4], 2, true).unwrap();
        assert_eq!(m.lists[0], vec![1, 2]);
        // Query = point 3, candidates = all others: 0 -> 3, 1 -> 3, 2 -> 2.25, 4 -> 17.
        let cand = [pts[0], pts[1], pts[2], pts[4]];
        let m = exact_knn(&pts[3..4], &cand, &[0], &[0; 4], 2, false).unwrap();
        assert_eq!(m.lists[0], vec![2, 0]);
    }

    #[test]
    fn recall_examples() {
        let e = NeighborMap { k: 2, lists: vec![vec![1, 2], vec![3, 4]] };
        assert_eq!(recall_at_k(&e, &e).unwrap().mean, 1.0);
        let a = NeighborMap { k: 2, lists: vec![vec![5, 6], vec![7, 8]] };
        assert_eq!(recall_at_k(&a, &e).unwrap().mean, 0.0);
        let exact24 = NeighborMap { k: 24, lists: vec![(0..24).collect()] };
        let half = NeighborMap { k: 24, lists: vec![(12..36).collect()] };
        assert_eq!(recall_at_k(&half, &exact24).unwrap().mean, 0.5);
        let with_empty = NeighborMap { k: 2, lists: vec![vec![1, 2], vec![]] };
        let r = recall_at_k(&with_empty, &with_empty).unwrap();
        assert_eq!((r.counted, r.per_query[1]), (1, None));
        let short = NeighborMap { k: 2, lists: vec![vec![1]] };
        assert!(matches!(recall_at_k(&short, &e), Err(Error::QuerySetMismatch(_))));
    }

    #[test]
    fn neighbor_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n.txt");
        let m = NeighborMap { k: 3, lists: vec![vec![4, 1, 9], vec![], vec![2]] };
        write_neighbor_map(&p, &m, &[]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "# k=3\n0: 4,1,9\n1:\n2: 2\n");
        assert_eq!(read_neighbor_map(&p).unwrap(), m);
    }
}
