use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use percloud::aggregate::{read_aggregation_state, symmetrize, write_aggregation_state, AggParams, AggregationState};
use percloud::bench::{run_bench, run_gradcheck, summary, write_bench_csv, BenchConfig, GradcheckConfig};
use percloud::format::{encode_packed, read_cloud, read_index_list, write_cloud, write_index_list, Format};
use percloud::hilbert::{partition, serialize_with, write_code, Curve, HilbertConfig};
use percloud::losses::{consensus_loss, LossConfig};
use percloud::matrix::Matrix;
use percloud::neighbors::{
    approx_knn, build_combined_index_from_coords, exact_knn, read_neighbor_map, recall_at_k, write_neighbor_map,
};
use percloud::pipeline::{
    derive_seed, label_sidecar_path, run_encoder, write_artifacts, EncoderKind, Labeler, RunConfig,
    ENCODER_SEED_TAG, PARAMS_SEED_TAG,
};
use percloud::provenance::Provenance;
use percloud::sampling::{fps, label_clusters, FeatureEncoder, LabelMethod, RandomProjection};
use percloud::synth::{generate_synthetic, SynthParams};
use percloud::{Cloud, Error, Result};

use crate::args::*;

/// Prefixes I/O failures with the offending path.
fn at<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| name_path(path, e))
}

fn name_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Io(io) => Error::Io(io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        Error::Stage { stage: percloud::Stage::Load, source } => {
            Error::Stage { stage: percloud::Stage::Load, source: Box::new(name_path(path, *source)) }
        }
        e => e,
    }
}

fn load(path: &Path, format: Option<Format>) -> Result<Cloud> {
    at(path, read_cloud(path, format.unwrap_or_else(|| Format::from_path(path))))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Report sink: the named file, or standard output.
fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn packed(cloud: &Cloud) -> Result<Vec<u8>> {
    let mut v = Vec::new();
    encode_packed(cloud, &mut v)?;
    Ok(v)
}

fn label_bytes(labels: &[u32]) -> Vec<u8> {
    labels.iter().flat_map(|l| l.to_le_bytes()).collect()
}

pub fn gen(a: &GenArgs, seed: u64) -> Result<()> {
    let params = SynthParams {
        extent: a.extent,
        clusters: a.clusters,
        stddev: a.stddev,
        separation: a.separation,
        grid: [a.grid_x, a.grid_y],
    };
    let labeled = generate_synthetic::<f64>(a.kind, a.n, seed, &params)?;
    write_cloud(&labeled.cloud, &a.out, a.format.unwrap_or_else(|| Format::from_path(&a.out)))?;
    write_index_list(&label_sidecar_path(&a.out), labeled.labels())
}

pub fn serialize(a: &SerializeArgs) -> Result<()> {
    let cloud = load(&a.input.input, a.input.format)?;
    let code = serialize_with(&cloud, HilbertConfig::new(a.r_bits)?, Curve::from(a.curve));
    write_code(&a.out, &code, &[])
}

pub fn partition_cmd(a: &PartitionArgs) -> Result<()> {
    let cloud = load(&a.input.input, a.input.format)?;
    let code = serialize_with(&cloud, HilbertConfig::new(a.r_bits)?, Curve::Hilbert);
    let parts = partition(&code, a.parts)?;
    let mut w = BufWriter::new(File::create(&a.out)?);
    for &i in &code.order {
        writeln!(w, "{i} {}", parts.part_of[i])?;
    }
    w.flush()?;
    Ok(())
}

pub fn fps_cmd(a: &FpsArgs) -> Result<()> {
    let cloud = load(&a.input.input, a.input.format)?;
    let sp = fps(&cloud, a.m, a.start)?;
    let sampled = cloud.select(&sp.source)?;
    write_cloud(&sampled, &a.out, Format::from_path(&a.out))?;
    write_index_list(&with_suffix(&a.out, ".src"), &sp.source)
}

pub fn label(a: &LabelArgs) -> Result<()> {
    let cloud = load(&a.input.input, a.input.format)?;
    let method = match a.method {
        LabelMethodArg::VoxelGrid => LabelMethod::VoxelGrid { cell: a.cell },
        LabelMethodArg::EuclideanCluster => LabelMethod::EuclideanCluster { radius: a.radius },
    };
    let labeled = label_clusters(&cloud, &method)?;
    write_index_list(&a.out, labeled.labels())
}

fn labels_or_zero(path: Option<&Path>, n: usize, what: &str) -> Result<Vec<u32>> {
    let Some(p) = path else { return Ok(vec![0; n]) };
    let labels: Vec<u32> = at(p, read_index_list(p))?;
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!("{what} has {} labels for {n} points", labels.len())));
    }
    Ok(labels)
}

pub fn knn(a: &KnnArgs, seed: u64) -> Result<()> {
    let global = load(&a.global, None)?;
    let local = load(&a.local, None)?;
    let gl = labels_or_zero(a.global_labels.as_deref(), global.len(), "global")?;
    let ll = labels_or_zero(a.local_labels.as_deref(), local.len(), "local")?;
    let map = if a.exact {
        exact_knn(global.coords(), local.coords(), &gl, &ll, a.k, true)?
    } else {
        let idx = build_combined_index_from_coords(
            global.coords(),
            local.coords(),
            &gl,
            &ll,
            HilbertConfig::new(a.r_bits)?,
        )?;
        approx_knn(&idx, a.k)?
    };
    let params = format!("knn k={} r_bits={} exact={}", a.k, a.r_bits, a.exact);
    let chunks = [params.into_bytes(), packed(&global)?, packed(&local)?, label_bytes(&gl), label_bytes(&ll)];
    let prov = Provenance::from_chunks(seed, chunks.iter().map(Vec::as_slice));
    write_neighbor_map(&a.out, &map, &[prov.header()])
}

pub fn knn_recall(a: &KnnRecallArgs) -> Result<()> {
    let approx = at(&a.approx, read_neighbor_map(&a.approx))?;
    let exact = at(&a.exact, read_neighbor_map(&a.exact))?;
    let r = recall_at_k(&approx, &exact)?;
    let mut w = sink(a.out.as_deref())?;
    writeln!(w, "recall_mean={}", r.mean)?;
    writeln!(w, "queries={}", approx.num_queries())?;
    writeln!(w, "counted={}", r.counted)?;
    writeln!(w, "k={}", approx.k)?;
    w.flush()?;
    Ok(())
}

fn representations(cloud: &Cloud, a: &AggregateArgs, seed: u64) -> Result<Matrix<f64>> {
    if a.raw_features {
        return Matrix::from_vec(cloud.len(), cloud.feature_dim(), cloud.features().to_vec());
    }
    let enc = RandomProjection::<f64>::new(cloud.feature_dim(), a.dim, derive_seed(seed, ENCODER_SEED_TAG));
    let data = (0..cloud.len()).flat_map(|i| enc.encode(cloud, i)).collect();
    Matrix::from_vec(cloud.len(), a.dim, data)
}

pub fn aggregate(a: &AggregateArgs, seed: u64) -> Result<()> {
    let global = load(&a.global, None)?;
    let local = load(&a.local, None)?;
    let map = at(&a.neighbors, read_neighbor_map(&a.neighbors))?;
    let gf = representations(&global, a, seed)?;
    let lf = representations(&local, a, seed)?;
    let mut params = AggParams::<f64>::seeded(gf.cols(), derive_seed(seed, PARAMS_SEED_TAG))?;
    params.k_graph = a.k_graph;
    params.sigma = a.sigma;
    params.value_uses_wr = a.value_uses_wr;
    let state = AggregationState::compute(
        global.coords().to_vec(),
        gf,
        local.coords().to_vec(),
        lf,
        map.clone(),
        &params,
    )?;
    let settings = format!(
        "aggregate dim={} raw={} k_graph={} sigma={} value_uses_wr={} k={} lists={:?}",
        a.dim, a.raw_features, a.k_graph, a.sigma, a.value_uses_wr, map.k, map.lists
    );
    let chunks = [settings.into_bytes(), packed(&global)?, packed(&local)?];
    let prov = Provenance::from_chunks(seed, chunks.iter().map(Vec::as_slice));
    write_aggregation_state(&a.out, &state, prov)
}

pub fn loss(a: &LossArgs) -> Result<()> {
    let (state, _) = at(&a.state, read_aggregation_state::<f64>(&a.state))?;
    let cfg = LossConfig { mu: a.mu, lambda: a.lambda, eps_norm: a.eps, ..LossConfig::default() };
    let report = consensus_loss(&state.updated, &state.global_feats, &symmetrize(&state.adjacency), &cfg)?;
    let mut w = sink(a.out.as_deref())?;
    write!(w, "{}", report.to_kv())?;
    w.flush()?;
    Ok(())
}

pub fn run(a: &RunArgs, seed: u64, threads: Option<usize>) -> Result<()> {
    let labeler = match a.labeler {
        LabelerArg::Auto => Labeler::Auto,
        LabelerArg::Sidecar => Labeler::Sidecar { path: a.labels.clone() },
        LabelerArg::VoxelGrid => Labeler::VoxelGrid { cell: a.cell },
        LabelerArg::EuclideanCluster => Labeler::EuclideanCluster { radius: a.radius },
        LabelerArg::Single => Labeler::Single,
    };
    let cfg = RunConfig {
        input: a.input.input.clone(),
        format: a.input.format,
        r_bits: a.r_bits,
        parts: a.parts,
        m: a.m,
        k: a.k,
        k_graph: a.k_graph,
        dim: a.dim,
        seed,
        labeler,
        encoder: match a.encoder {
            EncoderArg::RandomProjection => EncoderKind::RandomProjection,
            EncoderArg::Passthrough => EncoderKind::Passthrough,
        },
        value_uses_wr: a.value_uses_wr,
        loss: LossConfig { mu: a.mu, lambda: a.lambda, ..LossConfig::default() },
        workers: threads,
        output_dir: a.out_dir.clone(),
    };
    let art = at(&cfg.input, run_encoder::<f64>(&cfg))?;
    write_artifacts(&cfg.output_dir, &art)?;
    let mut out = io::stdout().lock();
    write!(out, "{}", art.loss.to_kv())?;
    Ok(())
}

pub fn bench(a: &BenchArgs, seed: u64) -> Result<()> {
    let cfg = BenchConfig {
        kinds: a.kinds.0.clone(),
        ns: a.ns.0.clone(),
        ks: a.ks.0.clone(),
        m: a.m,
        reps: a.reps,
        r_bits: a.r_bits,
        seed,
        synth: SynthParams::default(),
    };
    let rows = run_bench(&cfg)?;
    let mut w = sink(a.out.as_deref())?;
    write_bench_csv(&mut w, &rows)?;
    w.flush()?;
    eprint!("{}", summary(&rows));
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs, seed: u64) -> Result<()> {
    let cfg = GradcheckConfig { m: a.m, d: a.d, seed, h: a.h, tol: a.tol, scale: a.scale, k_graph: a.k_graph };
    let r = run_gradcheck(&cfg)?;
    let mut out = io::stdout().lock();
    for (name, c) in [("smoothness", &r.smoothness), ("regularization", &r.regularization)] {
        writeln!(out, "{name}_max_rel_err={:e}", c.max_rel_err)?;
        writeln!(out, "{name}_checked={}", c.checked)?;
    }
    writeln!(out, "tol={:e}", a.tol)?;
    writeln!(out, "pass={}", r.pass())?;
    if r.pass() {
        Ok(())
    } else {
        Err(Error::Validation(format!("gradient check failed at tolerance {:e}", a.tol)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use percloud::cloud::PointCloud;

    #[test]
    fn io_errors_name_the_path() {
        let e = load(Path::new("/nonexistent/x.xyz"), None).unwrap_err();
        assert!(e.is_io());
        assert!(e.to_string().contains("/nonexistent/x.xyz"));
    }

    #[test]
    fn comma_lists() {
        assert_eq!("".parse::<CommaList<usize>>().unwrap().0, Vec::<usize>::new());
        assert_eq!("3, 4".parse::<CommaList<usize>>().unwrap().0, vec![3, 4]);
        assert!("3,x".parse::<CommaList<usize>>().is_err());
    }

    #[test]
    fn suffix_appends() {
        assert_eq!(with_suffix(Path::new("a/b.xyz"), ".src"), PathBuf::from("a/b.xyz.src"));
    }

    #[test]
    fn missing_labels_default_to_zero() {
        assert_eq!(labels_or_zero(None, 3, "g").unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn raw_features_keep_attributes() {
        let c = PointCloud::new(vec![[0.0; 3], [1.0; 3]], vec![1.0, 2.0, 3.0, 4.0], 2).unwrap();
        let a = AggregateArgs {
            global: PathBuf::new(),
            local: PathBuf::new(),
            neighbors: PathBuf::new(),
            dim: 32,
            raw_features: true,
            k_graph: 8,
            sigma: 1.0,
            value_uses_wr: false,
            out: PathBuf::new(),
        };
        assert_eq!(representations(&c, &a, 0).unwrap().as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        let a = AggregateArgs { raw_features: false, dim: 4, ..a };
        let m = representations(&c, &a, 0).unwrap();
        assert_eq!((m.rows(), m.cols()), (2, 4));
    }
}
