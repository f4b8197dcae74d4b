//! Timing and recall sweeps over synthetic scenes.

use std::io::Write;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregate::{build_adjacency, symmetrize};
use crate::error::{Error, Result};
use crate::losses::{
    finite_diff_check_terms, regularization_kinks, regularization_loss, regularization_terms,
    smoothness_kinks, smoothness_loss, smoothness_terms, GradCheck, LossConfig,
};
use crate::matrix::Matrix;
use crate::hilbert::{serialize, HilbertConfig, DEFAULT_R_BITS};
use crate::neighbors::{
    approx_knn, approx_knn_query, build_combined_index_from_coords, exact_knn, recall_at_k, NeighborMap,
};
use crate::synth::{generate_synthetic, SynthKind, SynthParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub kinds: Vec<SynthKind>,
    pub ns: Vec<usize>,
    pub ks: Vec<usize>,
    /// Number of global query points drawn from each cloud.
    pub m: usize,
    /// Repetitions per timing; the median is reported.
    pub reps: usize,
    pub r_bits: u32,
    pub seed: u64,
    pub synth: SynthParams,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            kinds: vec![SynthKind::UniformCube, SynthKind::GaussianClusters],
            ns: vec![10_000, 100_000],
            ks: vec![24],
            m: 1024,
            reps: 5,
            r_bits: DEFAULT_R_BITS,
            seed: 0,
            synth: SynthParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub kind: SynthKind,
    pub n: usize,
    pub k: usize,
    pub serialize_s: f64,
    pub index_build_s: f64,
    pub query_s_per_query: f64,
    pub recall_mean: f64,
    pub label_violations: usize,
}

pub const BENCH_CSV_HEADER: &str =
    "kind,n,k,serialize_s,index_build_s,query_s_per_query,recall_mean,label_violations";

/// Median of a non-empty sample.
pub fn median(mut v: Vec<f64>) -> f64 {
    assert!(!v.is_empty(), "median of empty sample");
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median wall time of `reps` calls to `f`.
pub fn time_median(reps: usize, mut f: impl FnMut()) -> f64 {
    median(
        (0..reps.max(1))
            .map(|_| {
                let t = Instant::now();
                f();
                t.elapsed().as_secs_f64()
            })
            .collect(),
    )
}

/// Query and candidate sets: a random `m`-subset of the points and the rest.
pub fn split_queries<T: Copy>(points: &[T], labels: &[u32], m: usize, seed: u64) -> (Vec<T>, Vec<u32>, Vec<T>, Vec<u32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_query = vec![false; points.len()];
    let mut picked: Vec<usize> = sample(&mut rng, points.len(), m.min(points.len())).into_vec();
    picked.sort_unstable();
    for &i in &picked {
        is_query[i] = true;
    }
    let (mut gp, mut gl, mut lp, mut ll) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, (&p, &l)) in points.iter().zip(labels).enumerate() {
        if is_query[i] {
            gp.push(p);
            gl.push(l);
        } else {
            lp.push(p);
            ll.push(l);
        }
    }
    (gp, gl, lp, ll)
}

/// Runs the grid; an empty grid yields no rows.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let hcfg = HilbertConfig::new(cfg.r_bits)?;
    if cfg.ks.contains(&0) {
        return Err(Error::BadParams("k must be at least 1".into()));
    }
    let mut rows = Vec::new();
    if cfg.ks.is_empty() {
        return Ok(rows);
    }
    let k_max = *cfg.ks.iter().max().expect("non-empty");
    for &kind in &cfg.kinds {
        for &n in &cfg.ns {
            if n < 2 {
                return Err(Error::BadParams(format!("bench needs n >= 2, got {n}")));
            }
            let scene = generate_synthetic::<f64>(kind, n, cfg.seed, &cfg.synth)?;
            let serialize_s = time_median(cfg.reps, || {
                std::hint::black_box(serialize(&scene.cloud, hcfg));
            });
            let m = cfg.m.min(n - 1).max(1);
            let (gp, gl, lp, ll) = split_queries(scene.cloud.coords(), scene.labels(), m, cfg.seed);
            let mut index = None;
            let index_build_s = time_median(cfg.reps, || {
                index = Some(build_combined_index_from_coords(&gp, &lp, &gl, &ll, hcfg));
            });
            let index = index.expect("at least one repetition")?;
            let exact_max = exact_knn(&gp, &lp, &gl, &ll, k_max, true)?;
            for &k in &cfg.ks {
                let query_s = time_median(cfg.reps, || {
                    for g in 0..gp.len() {
                        std::hint::black_box(approx_knn_query(&index, g, k));
                    }
                });
                let approx = approx_knn(&index, k)?;
                let exact = NeighborMap {
                    k,
                    lists: exact_max.lists.iter().map(|l| l[..l.len().min(k)].to_vec()).collect(),
                };
                let recall = recall_at_k(&approx, &exact)?;
                rows.push(BenchRow {
                    kind,
                    n,
                    k,
                    serialize_s,
                    index_build_s,
                    query_s_per_query: query_s / gp.len() as f64,
                    recall_mean: recall.mean,
                    label_violations: approx.label_violations(&gl, &ll),
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_bench_csv<W: Write>(w: &mut W, rows: &[BenchRow]) -> std::io::Result<()> {
    writeln!(w, "{BENCH_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{:.6e},{:.6e},{:.6e},{:.6},{}",
            r.kind, r.n, r.k, r.serialize_s, r.index_build_s, r.query_s_per_query, r.recall_mean, r.label_violations
        )?;
    }
    Ok(())
}

/// Short human-readable digest of the rows.
pub fn summary(rows: &[BenchRow]) -> String {
    if rows.is_empty() {
        return "no benchmark configurations\n".into();
    }
    let mut s = String::new();
    for r in rows {
        s.push_str(&format!(
            "{:<18} n={:<9} k={:<3} serialize {:>9.3} ms  build {:>9.3} ms  query {:>8.3} us  recall {:.4}  violations {}\n",
            r.kind.to_string(),
            r.n,
            r.k,
            r.serialize_s * 1e3,
            r.index_build_s * 1e3,
            r.query_s_per_query * 1e6,
            r.recall_mean,
            r.label_violations
        ));
    }
    s
}

/// One seeded gradient-check instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub m: usize,
    pub d: usize,
    pub seed: u64,
    pub h: f64,
    pub tol: f64,
    /// Standard deviation of the random features and of their displacement.
    pub scale: f64,
    pub k_graph: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { m: 32, d: 8, seed: 0, h: 1e-6, tol: 1e-5, scale: 0.1, k_graph: 8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub smoothness: GradCheck,
    pub regularization: GradCheck,
}

impl GradcheckReport {
    pub fn pass(&self) -> bool {
        self.smoothness.pass && self.regularization.pass
    }
}

/// Random cosine k-NN graph over `m` points with features `F` and displaced
/// `F^`, then central differences of both consensus terms at `F^`.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if cfg.m < 2 || cfg.d == 0 {
        return Err(Error::BadParams("gradcheck needs m >= 2 and d >= 1".into()));
    }
    if !(cfg.scale > 0.0) || !cfg.scale.is_finite() {
        return Err(Error::BadParams("scale must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let coords: Vec<[f64; 3]> = (0..cfg.m).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    let f = Matrix::<f64>::gaussian(cfg.m, cfg.d, cfg.scale, &mut rng);
    let noise = Matrix::<f64>::gaussian(cfg.m, cfg.d, cfg.scale, &mut rng);
    let mut fh = f.clone();
    fh.as_mut_slice().iter_mut().zip(noise.as_slice()).for_each(|(a, b)| *a += b);
    let w = symmetrize(&build_adjacency(&f, &coords, cfg.k_graph.min(cfg.m - 1))?);
    let loss = LossConfig::default();
    let radius = 10.0 * cfg.h;

    let smt = smoothness_loss(&fh, &w, &loss)?;
    let skip = smoothness_kinks(&fh, &w, &loss, radius);
    let smoothness = finite_diff_check_terms(
        |x| smoothness_terms(x, &w, &loss).expect("shapes fixed"),
        &smt.grad,
        &fh,
        cfg.h,
        cfg.tol,
        Some(&skip),
    )?;
    let reg = regularization_loss(&fh, &f, &loss)?;
    let skip = regularization_kinks(&fh, &f, radius);
    let regularization = finite_diff_check_terms(
        |x| regularization_terms(x, &f, &loss).expect("shapes fixed"),
        &reg.grad,
        &fh,
        cfg.h,
        cfg.tol,
        Some(&skip),
    )?;
    Ok(GradcheckReport { smoothness, regularization })
}
