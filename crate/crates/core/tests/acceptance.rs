//! Acceptance suite. Every criterion runs in one sequential test so timing
//! measurements are not disturbed by concurrently running tests; each prints a
//! single PASS/FAIL line.

use std::io::Write;
use std::time::Instant;

use percloud::aggregate::{
    build_adjacency, gcn_message_pass, localized_cross_attention, normalize_adjacency, AggParams,
};
use percloud::bench::{run_bench, write_bench_csv, BenchConfig};
use percloud::format::{write_cloud, write_index_list, Format};
use percloud::hilbert::{
    hilbert_decode, hilbert_index, partition, serialize, HilbertConfig,
};
use percloud::losses::{
    consensus_loss, finite_diff_check_terms, regularization_kinks, regularization_loss,
    regularization_terms, smoothness_kinks, smoothness_loss, smoothness_terms, total_loss,
    CrossEntropy, LossConfig, PredictionLoss,
};
use percloud::matrix::{Matrix, SparseMatrix};
use percloud::neighbors::{approx_knn, approx_knn_query, build_combined_index_from_coords, NeighborMap};
use percloud::pipeline::{label_sidecar_path, run_encoder, write_artifacts, RunConfig, DETERMINISTIC_FILES};
use percloud::synth::{generate_synthetic, SynthKind, SynthParams};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn d2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum()
}

/// Brute-force k nearest candidates with the same label, ties to lower id.
fn oracle_knn(
    queries: &[[f64; 3]],
    qlabels: &[u32],
    cands: &[[f64; 3]],
    clabels: &[u32],
    k: usize,
) -> Vec<Vec<usize>> {
    queries
        .iter()
        .zip(qlabels)
        .map(|(q, &ql)| {
            let mut c: Vec<(f64, usize)> = cands
                .iter()
                .enumerate()
                .filter(|(j, _)| clabels[*j] == ql)
                .map(|(j, p)| (d2(q, p), j))
                .collect();
            c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            c.truncate(k);
            c.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v
}

fn c01_hilbert_bijectivity() -> Check {
    let t = Instant::now();
    for r in 1..=5u32 {
        let side = 1u32 << r;
        let total = 1usize << (3 * r);
        let mut seen = vec![false; total];
        for x in 0..side {
            for y in 0..side {
                for z in 0..side {
                    let h = hilbert_index([x, y, z], r) as usize;
                    ensure(h < total, || format!("r={r}: index {h} out of range"))?;
                    ensure(!seen[h], || format!("r={r}: index {h} hit twice"))?;
                    seen[h] = true;
                    let back = hilbert_decode(h as u64, r);
                    ensure(back == [x, y, z], || format!("r={r}: decode({h}) = {back:?}"))?;
                }
            }
        }
        ensure(seen.iter().all(|&s| s), || format!("r={r}: not surjective"))?;
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.2}s"))?;
    Ok(format!("r_bits 1..5 exhaustive, {secs:.3}s"))
}

fn c02_curve_continuity() -> Check {
    let mut pairs = 0;
    for r in 1..=4u32 {
        let total = 1u64 << (3 * r);
        let mut prev = hilbert_decode(0, r);
        for h in 1..total {
            let cur = hilbert_decode(h, r);
            let l1: i64 = (0..3).map(|a| (cur[a] as i64 - prev[a] as i64).abs()).sum();
            ensure(l1 == 1, || format!("r={r}: step {}->{h} has L1 {l1}", h - 1))?;
            prev = cur;
            pairs += 1;
        }
    }
    Ok(format!("{pairs} consecutive pairs at unit L1 distance"))
}

fn c03_partition_cardinality() -> Check {
    for &n in &[1000usize, 40_000] {
        let l = 6;
        let scene = generate_synthetic::<f64>(SynthKind::UniformCube, n, 3, &SynthParams::default())
            .map_err(|e| e.to_string())?;
        let code = serialize(&scene.cloud, HilbertConfig::default());
        let parts = partition(&code, l).map_err(|e| e.to_string())?;
        let base = n / l;
        let mut expect = vec![base; l];
        expect[l - 1] = base + n % l;
        ensure(parts.sizes == expect, || format!("N={n}: sizes {:?}, expected {expect:?}", parts.sizes))?;
        // Walking the curve order must visit parts 0,0,..,1,1,..,5 without gaps.
        let seq: Vec<usize> = code.order.iter().map(|&i| parts.part_of[i]).collect();
        ensure(seq.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1), || {
            format!("N={n}: parts not contiguous in curve order")
        })?;
        let mut start = 0;
        for (j, &s) in expect.iter().enumerate() {
            ensure(seq[start..start + s].iter().all(|&p| p == j), || format!("N={n}: part {j} misplaced"))?;
            start += s;
        }
    }
    Ok("N=1000 and N=40000 with L=6 match floor(N/L) plus remainder".into())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn per_query_seconds(union: usize, m: usize, k: usize, reps: usize) -> Result<f64, String> {
    let scene = generate_synthetic::<f64>(SynthKind::UniformCube, union, 11, &SynthParams::default())
        .map_err(|e| e.to_string())?;
    let coords = scene.cloud.coords();
    let (global, local) = coords.split_at(m);
    let index =
        build_combined_index_from_coords(global, local, &vec![0; m], &vec![0; union - m], HilbertConfig::default())
            .map_err(|e| e.to_string())?;
    // Enough passes over the query set that each sample lasts well above timer resolution.
    let passes = 40;
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        for _ in 0..passes {
            for g in 0..m {
                std::hint::black_box(approx_knn_query(&index, g, k));
            }
        }
        samples.push(t.elapsed().as_secs_f64() / (passes * m) as f64);
    }
    Ok(median(samples))
}

fn serialize_seconds(n: usize, reps: usize) -> Result<f64, String> {
    let scene = generate_synthetic::<f64>(SynthKind::UniformCube, n, 12, &SynthParams::default())
        .map_err(|e| e.to_string())?;
    let cfg = HilbertConfig::default();
    std::hint::black_box(serialize(&scene.cloud, cfg));
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        std::hint::black_box(serialize(&scene.cloud, cfg));
        samples.push(t.elapsed().as_secs_f64());
    }
    Ok(median(samples))
}

fn c04_complexity() -> Check {
    let small = per_query_seconds(10_000, 1024, 24, 5)?;
    let large = per_query_seconds(1_000_000, 1024, 24, 5)?;
    let q_ratio = large / small;
    let s18 = serialize_seconds(1 << 18, 5)?;
    let s19 = serialize_seconds(1 << 19, 5)?;
    let s_ratio = s19 / s18;
    let detail = format!(
        "per-query {:.3}us -> {:.3}us (x{q_ratio:.2} <= 3), serialize {:.1}ms -> {:.1}ms (x{s_ratio:.2} <= 2.5)",
        small * 1e6,
        large * 1e6,
        s18 * 1e3,
        s19 * 1e3
    );
    ensure(q_ratio <= 3.0 && s_ratio <= 2.5, || detail.clone())?;
    Ok(detail)
}

fn c05_knn_oracle() -> Check {
    // (a) every label has at most k local points.
    for case in 0..200u64 {
        let mut r = rng(1000 + case);
        let k = r.random_range(1..=24);
        let labels = r.random_range(1..=12u32);
        let nq = r.random_range(1..=32);
        let mut local = Vec::new();
        let mut llab = Vec::new();
        for l in 0..labels {
            for _ in 0..r.random_range(0..=k) {
                local.push([r.random::<f64>(), r.random(), r.random()]);
                llab.push(l);
            }
        }
        let global: Vec<[f64; 3]> = (0..nq).map(|_| [r.random(), r.random(), r.random()]).collect();
        let glab: Vec<u32> = (0..nq).map(|_| r.random_range(0..labels)).collect();
        let idx = build_combined_index_from_coords(&global, &local, &glab, &llab, HilbertConfig::new(10).unwrap())
            .map_err(|e| e.to_string())?;
        let approx = approx_knn(&idx, k).map_err(|e| e.to_string())?;
        let exact = oracle_knn(&global, &glab, &local, &llab, k);
        for g in 0..nq {
            ensure(sorted(approx.lists[g].clone()) == sorted(exact[g].clone()), || {
                format!("(a) case {case}: query {g} differs")
            })?;
        }
    }
    // (b) points on a line whose direction has all-positive components.
    for case in 0..64u64 {
        let mut r = rng(5000 + case);
        let k = r.random_range(1..=24);
        let origin = [r.random_range(-5.0..5.0), r.random_range(-5.0..5.0), r.random_range(-5.0..5.0)];
        let dir = [r.random_range(0.1..2.0), r.random_range(0.1..2.0), r.random_range(0.1..2.0)];
        let at = |t: f64| [origin[0] + t * dir[0], origin[1] + t * dir[1], origin[2] + t * dir[2]];
        let nl = r.random_range(k..=400);
        let nq = r.random_range(1..=40);
        let local: Vec<[f64; 3]> = (0..nl).map(|_| at(r.random_range(0.0..10.0))).collect();
        let global: Vec<[f64; 3]> = (0..nq).map(|_| at(r.random_range(0.0..10.0))).collect();
        let (gl, ll) = (vec![0; nq], vec![0; nl]);
        let idx = build_combined_index_from_coords(&global, &local, &gl, &ll, HilbertConfig::default())
            .map_err(|e| e.to_string())?;
        let approx = approx_knn(&idx, k).map_err(|e| e.to_string())?;
        let exact = oracle_knn(&global, &gl, &local, &ll, k);
        for g in 0..nq {
            ensure(sorted(approx.lists[g].clone()) == sorted(exact[g].clone()), || {
                format!("(b) case {case}: query {g} differs")
            })?;
        }
    }
    // (c) recall is measured and reported.
    let cfg = BenchConfig {
        kinds: vec![SynthKind::UniformCube, SynthKind::GaussianClusters],
        ns: vec![20_000],
        ks: vec![24],
        m: 1024,
        reps: 1,
        ..Default::default()
    };
    let rows = run_bench(&cfg).map_err(|e| e.to_string())?;
    let path = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance_recall.csv");
    let mut f = std::fs::File::create(&path).map_err(|e| e.to_string())?;
    write_bench_csv(&mut f, &rows).map_err(|e| e.to_string())?;
    let recalls: Vec<String> = rows.iter().map(|r| format!("{} {:.4}", r.kind, r.recall_mean)).collect();
    Ok(format!("200/200 small-label cases, 64/64 line cases; recall@24: {}", recalls.join(", ")))
}

fn c06_label_purity() -> Check {
    let cfg = BenchConfig {
        kinds: vec![SynthKind::UniformCube, SynthKind::GaussianClusters, SynthKind::RoomGrid],
        ns: vec![5_000, 50_000],
        ks: vec![8, 24, 64],
        m: 512,
        reps: 1,
        ..Default::default()
    };
    let rows = run_bench(&cfg).map_err(|e| e.to_string())?;
    let bad: usize = rows.iter().map(|r| r.label_violations).sum();
    ensure(bad == 0, || format!("{bad} cross-label neighbours"))?;
    Ok(format!("0 violations over {} configurations", rows.len()))
}

struct AttnInstance {
    gc: Vec<[f64; 3]>,
    gf: Matrix<f64>,
    lc: Vec<[f64; 3]>,
    lf: Matrix<f64>,
    nm: NeighborMap,
    params: AggParams<f64>,
}

fn attention_instance(seed: u64) -> AttnInstance {
    let mut r = rng(seed);
    let m = r.random_range(1..=64);
    let nl = r.random_range(1..=128);
    let d = 2 * r.random_range(1..=8);
    let k = r.random_range(1..=24);
    let gc = (0..m).map(|_| [r.random(), r.random(), r.random()]).collect();
    let lc = (0..nl).map(|_| [r.random(), r.random(), r.random()]).collect();
    let gf = Matrix::gaussian(m, d, 1.0, &mut r);
    let lf = Matrix::gaussian(nl, d, 1.0, &mut r);
    let lists = (0..m)
        .map(|_| {
            let len = r.random_range(0..=k.min(nl));
            let mut ids: Vec<usize> = (0..nl).collect();
            ids.shuffle(&mut r);
            ids.truncate(len);
            ids
        })
        .collect();
    let mut params = AggParams::seeded(d, seed).unwrap();
    params.sigma = r.random_range(0.2..3.0);
    AttnInstance { gc, gf, lc, lf, nm: NeighborMap { k, lists }, params }
}

fn c07_attention_invariants() -> Check {
    let mut worst_sum: f64 = 0.0;
    let mut worst_perm: f64 = 0.0;
    for seed in 0..100u64 {
        let inst = attention_instance(seed);
        let run = |nm: &NeighborMap, p: &AggParams<f64>| {
            localized_cross_attention(&inst.gc, &inst.gf, &inst.lc, &inst.lf, nm, p).map_err(|e| e.to_string())
        };
        let out = run(&inst.nm, &inst.params)?;
        for (i, w) in out.weights.iter().enumerate() {
            if inst.nm.lists[i].is_empty() {
                ensure(out.updated.row(i) == inst.gf.row(i), || format!("seed {seed}: empty list changed row {i}"))?;
                continue;
            }
            ensure(w.iter().all(|&x| x >= 0.0), || format!("seed {seed}: negative weight"))?;
            let dev = (w.iter().sum::<f64>() - 1.0).abs();
            worst_sum = worst_sum.max(dev);
            ensure(dev <= 1e-12, || format!("seed {seed}: weights sum off by {dev:e}"))?;
        }

        let mut zero_v = inst.params.clone();
        zero_v.w_v = Matrix::zeros(zero_v.dim(), zero_v.dim());
        let out0 = run(&inst.nm, &zero_v)?;
        ensure(out0.updated == inst.gf, || format!("seed {seed}: W_v = 0 changed the output"))?;

        let mut r = rng(seed ^ 0xabcdef);
        let mut shuffled = inst.nm.clone();
        shuffled.lists.iter_mut().for_each(|l| l.shuffle(&mut r));
        let outp = run(&shuffled, &inst.params)?;
        let diff = outp.updated.max_abs_diff(&out.updated);
        worst_perm = worst_perm.max(diff);
        ensure(diff <= 1e-12, || format!("seed {seed}: permutation changed output by {diff:e}"))?;
    }
    Ok(format!("100 instances; max |sum w - 1| = {worst_sum:.1e}, max permutation drift = {worst_perm:.1e}"))
}

fn coord_knn_oracle(coords: &[[f64; 3]], k: usize) -> Vec<Vec<usize>> {
    let labels = vec![0u32; coords.len()];
    coords
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut c: Vec<(f64, usize)> =
                coords.iter().enumerate().filter(|(j, _)| *j != i).map(|(j, q)| (d2(p, q), j)).collect();
            c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let _ = &labels;
            c.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

fn spectral_radius(m: &Matrix<f64>, seed: u64) -> f64 {
    let n = m.rows();
    let mut r = rng(seed);
    let mut x: Vec<f64> = (0..n).map(|_| r.random::<f64>() + 0.1).collect();
    let mut est = 0.0;
    for _ in 0..2000 {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        x.iter_mut().for_each(|v| *v /= norm);
        let y = m.matvec(&x);
        est = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        x = y;
    }
    est
}

fn c08_graph_invariants() -> Check {
    let mut worst_rho: f64 = 0.0;
    let mut worst_asym: f64 = 0.0;
    let mut worst_scale: f64 = 0.0;
    for seed in 0..50u64 {
        let mut r = rng(200 + seed);
        let m = r.random_range(2..=64);
        let d = r.random_range(1..=16);
        let kg = r.random_range(1..=8usize).min(m - 1);
        let coords: Vec<[f64; 3]> = (0..m).map(|_| [r.random(), r.random(), r.random()]).collect();
        let f = Matrix::gaussian(m, d, 1.0, &mut r);
        let w = build_adjacency(&f, &coords, kg).map_err(|e| e.to_string())?;
        let knn = coord_knn_oracle(&coords, kg);
        for i in 0..m {
            for &(j, v) in w.row(i) {
                ensure((0.0..=1.0).contains(&v), || format!("seed {seed}: entry {v} out of [0,1]"))?;
                ensure(i != j, || format!("seed {seed}: non-zero diagonal"))?;
                ensure(knn[i].contains(&j), || format!("seed {seed}: edge {i}->{j} outside k-NN"))?;
            }
        }
        let wt = normalize_adjacency(&w).to_dense();
        let asym = wt.max_abs_diff(&wt.transpose());
        worst_asym = worst_asym.max(asym);
        ensure(asym <= 1e-14, || format!("seed {seed}: asymmetry {asym:e}"))?;
        let rho = spectral_radius(&wt, seed);
        worst_rho = worst_rho.max(rho);
        ensure(rho <= 1.0 + 1e-10, || format!("seed {seed}: spectral radius {rho}"))?;

        let mut scaled = f.clone();
        for i in 0..m {
            let c = r.random_range(0.01..100.0);
            scaled.row_mut(i).iter_mut().for_each(|v| *v *= c);
        }
        let ws = build_adjacency(&scaled, &coords, kg).map_err(|e| e.to_string())?;
        let diff = ws.to_dense().max_abs_diff(&w.to_dense());
        worst_scale = worst_scale.max(diff);
        ensure(diff <= 1e-12, || format!("seed {seed}: rescaling moved adjacency by {diff:e}"))?;
    }
    Ok(format!(
        "50 instances; max asymmetry {worst_asym:.1e}, max spectral radius {worst_rho:.6}, max rescale drift {worst_scale:.1e}"
    ))
}

fn c09_gcn_closed_forms() -> Check {
    for seed in 0..20u64 {
        let mut r = rng(300 + seed);
        let m = r.random_range(1..=32);
        let d = r.random_range(1..=8);
        let f = Matrix::gaussian(m, d, 1.0, &mut r);
        let coords: Vec<[f64; 3]> = (0..m).map(|_| [r.random(), r.random(), r.random()]).collect();
        let adj = if m > 1 {
            normalize_adjacency(&build_adjacency(&f, &coords, 3.min(m - 1)).unwrap())
        } else {
            SparseMatrix::new(1)
        };
        let out = gcn_message_pass(&f, &adj, &Matrix::zeros(d, d), &Matrix::identity(d)).map_err(|e| e.to_string())?;
        let relu: Vec<f64> = f.as_slice().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        ensure(out.as_slice() == relu.as_slice(), || format!("seed {seed}: skip-only path is not ReLU"))?;
    }
    let f = Matrix::from_rows(&[vec![1.0], vec![3.0]]).unwrap();
    let w = SparseMatrix::from_rows(vec![vec![(1, 1.0)], vec![(0, 1.0)]]);
    let wt = normalize_adjacency(&w);
    ensure(wt.to_dense() == Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(), || {
        "normalized 2-node graph is not [[0,1],[1,0]]".into()
    })?;
    let one = Matrix::identity(1);
    let out = gcn_message_pass(&f, &wt, &one, &one).map_err(|e| e.to_string())?;
    ensure(out.as_slice() == [4.0, 4.0], || format!("2-node example gave {:?}", out.as_slice()))?;
    Ok("skip-only path equals ReLU on 20 instances; 2-node example gives (4, 4)".into())
}

/// Random symmetric cosine graph, original features and displaced updates at
/// feature scale 0.1.
fn loss_instance(seed: u64) -> (Matrix<f64>, Matrix<f64>, SparseMatrix<f64>) {
    let mut r = rng(seed);
    let m = r.random_range(8..=64);
    let d = r.random_range(2..=16);
    let coords: Vec<[f64; 3]> = (0..m).map(|_| [r.random(), r.random(), r.random()]).collect();
    let f = Matrix::gaussian(m, d, 0.1, &mut r);
    let noise = Matrix::gaussian(m, d, 0.1, &mut r);
    let mut fh = f.clone();
    fh.as_mut_slice().iter_mut().zip(noise.as_slice()).for_each(|(a, b)| *a += b);
    let w = percloud::aggregate::symmetrize(&build_adjacency(&f, &coords, 8).unwrap());
    (f, fh, w)
}

fn c10_gradients() -> Check {
    let t = Instant::now();
    let cfg = LossConfig::default();
    let h = 1e-6;
    let (mut worst_smt, mut worst_reg): (f64, f64) = (0.0, 0.0);
    let mut checked = 0;
    for seed in 0..20u64 {
        let (f, fh, w) = loss_instance(seed);
        let smt = smoothness_loss(&fh, &w, &cfg).unwrap();
        let skip = smoothness_kinks(&fh, &w, &cfg, 10.0 * h);
        let rep = finite_diff_check_terms(|x| smoothness_terms(x, &w, &cfg).unwrap(), &smt.grad, &fh, h, 1e-5, Some(&skip))
            .map_err(|e| e.to_string())?;
        worst_smt = worst_smt.max(rep.max_rel_err);
        checked += rep.checked;
        ensure(rep.pass, || format!("seed {seed}: smoothness rel err {:e}", rep.max_rel_err))?;

        let reg = regularization_loss(&fh, &f, &cfg).unwrap();
        let skip = regularization_kinks(&fh, &f, 10.0 * h);
        let rep = finite_diff_check_terms(|x| regularization_terms(x, &f, &cfg).unwrap(), &reg.grad, &fh, h, 1e-5, Some(&skip))
            .map_err(|e| e.to_string())?;
        worst_reg = worst_reg.max(rep.max_rel_err);
        checked += rep.checked;
        ensure(rep.pass, || format!("seed {seed}: regularization rel err {:e}", rep.max_rel_err))?;
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{checked} coordinates; max rel err smt {worst_smt:.2e}, reg {worst_reg:.2e}; {secs:.2}s"
    ))
}

/// Straightforward double loop over the dense adjacency.
fn oracle_smoothness(f: &Matrix<f64>, w: &Matrix<f64>) -> f64 {
    let m = f.rows();
    let deg: Vec<f64> = (0..m).map(|i| w.row(i).iter().sum()).collect();
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            if w[(i, j)] == 0.0 || deg[i] <= 1e-12 || deg[j] <= 1e-12 {
                continue;
            }
            let n: f64 = f
                .row(i)
                .iter()
                .zip(f.row(j))
                .map(|(a, b)| (a / deg[i].sqrt() - b / deg[j].sqrt()).powi(2))
                .sum::<f64>()
                .sqrt();
            total += w[(i, j)] * n;
        }
    }
    total
}

fn c11_loss_identities() -> Check {
    let cfg = LossConfig::default();
    ensure(cfg.mu == 0.1 && cfg.lambda == 0.1, || "defaults are not 0.1".into())?;
    let mut worst_homothety: f64 = 0.0;
    for seed in 0..20u64 {
        let (f, fh, w) = loss_instance(100 + seed);
        let rep = consensus_loss(&fh, &f, &w, &cfg).map_err(|e| e.to_string())?;
        ensure(rep.l_con == rep.l_smt + 0.1 * rep.l_reg, || format!("seed {seed}: l_con identity"))?;
        let o = oracle_smoothness(&fh, &w.to_dense());
        ensure((rep.l_smt - o).abs() <= 1e-9 * o.max(1.0), || {
            format!("seed {seed}: l_smt {} vs oracle {o}", rep.l_smt)
        })?;

        let mut r = rng(seed);
        let logits = Matrix::gaussian(5, 7, 2.0, &mut r);
        let targets: Vec<usize> = (0..5).map(|_| r.random_range(0..7)).collect();
        let l_pred = CrossEntropy { logits: &logits, targets: &targets }.loss().map_err(|e| e.to_string())?;
        let full = rep.clone().with_prediction(l_pred, 0.1);
        ensure(full.l_total == 0.1 * rep.l_con + l_pred, || format!("seed {seed}: total identity"))?;
        ensure(total_loss(rep.l_con, l_pred, 0.0) == l_pred, || "lambda = 0".into())?;

        for c in [0.25, 4.0] {
            let tight = LossConfig { eps_norm: 1e-12, ..cfg };
            let base = smoothness_loss(&fh, &w, &tight).unwrap().value;
            let scaled = smoothness_loss(&fh, &w.scaled(c), &tight).unwrap().value;
            let err = (scaled - c.sqrt() * base).abs();
            worst_homothety = worst_homothety.max(err);
            ensure(err <= 1e-8, || format!("seed {seed}, c={c}: homothety error {err:e}"))?;
        }
    }
    Ok(format!("20 instances; identities exact, max homothety error {worst_homothety:.1e}"))
}

fn c12_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let scene = generate_synthetic::<f64>(
        SynthKind::GaussianClusters,
        6000,
        21,
        &SynthParams { clusters: 6, ..Default::default() },
    )
    .map_err(|e| e.to_string())?;
    let input = dir.path().join("scene.bin");
    write_cloud(&scene.cloud, &input, Format::PackedBinary).map_err(|e| e.to_string())?;
    write_index_list(&label_sidecar_path(&input), scene.labels()).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for threads in [1usize, 2, 8] {
        let out = dir.path().join(format!("run{threads}"));
        let cfg = RunConfig { input: input.clone(), output_dir: out.clone(), workers: Some(threads), seed: 9, ..Default::default() };
        let art = run_encoder::<f64>(&cfg).map_err(|e| e.to_string())?;
        write_artifacts(&out, &art).map_err(|e| e.to_string())?;
        let bytes: Vec<Vec<u8>> = DETERMINISTIC_FILES
            .iter()
            .map(|f| std::fs::read(out.join(f)).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        outputs.push(bytes);
    }
    for (t, o) in outputs.iter().enumerate().skip(1) {
        for (f, name) in DETERMINISTIC_FILES.iter().enumerate() {
            ensure(o[f] == outputs[0][f], || format!("{name} differs for thread setting #{t}"))?;
        }
    }
    Ok(format!("{} artifacts byte-identical for 1, 2 and 8 threads", DETERMINISTIC_FILES.len()))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Check); 12] = [
        ("hilbert bijectivity", c01_hilbert_bijectivity),
        ("curve continuity", c02_curve_continuity),
        ("partition cardinality", c03_partition_cardinality),
        ("serialized k-NN complexity", c04_complexity),
        ("k-NN oracle equivalence", c05_knn_oracle),
        ("label purity", c06_label_purity),
        ("attention invariants", c07_attention_invariants),
        ("graph invariants", c08_graph_invariants),
        ("GCN closed forms", c09_gcn_closed_forms),
        ("gradient verification", c10_gradients),
        ("loss identities", c11_loss_identities),
        ("pipeline determinism", c12_determinism),
    ];
    let mut failed = Vec::new();
    // Written to the raw handle so the lines show up without --nocapture.
    let mut out = std::io::stdout();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let res = check();
        let (tag, detail) = match &res {
            Ok(d) => ("PASS", d.as_str()),
            Err(d) => ("FAIL", d.as_str()),
        };
        writeln!(out, "acceptance {:>2} {tag} {name}: {detail}", i + 1).unwrap();
        out.flush().unwrap();
        if res.is_err() {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
