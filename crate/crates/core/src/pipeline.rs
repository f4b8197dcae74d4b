//! End-to-end encoder run: load, label, serialize, partition, sample, encode,
//! label-constrained neighbour search, aggregation and losses.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregate::{symmetrize, write_aggregation_state, AggParams, AggregationState, DEFAULT_K_GRAPH};
use crate::cloud::{LabeledCloud, PointCloud};
use crate::error::{Error, Result, Stage, StageExt};
use crate::format::{encode_packed, read_cloud, read_index_list, read_u32, read_u64, u32_len, Format};
use crate::hilbert::{partition, serialize, write_code, HilbertCode, HilbertConfig, PartitionSet, DEFAULT_R_BITS};
use crate::losses::{consensus_loss, LossConfig, LossReport};
use crate::neighbors::{approx_knn, build_combined_index, write_neighbor_map};
use crate::provenance::Provenance;
use crate::sampling::{
    encode_features, fps, inherit_labels, label_clusters, FeatureEncoder, LabelMethod, Origin, Passthrough,
    RandomProjection, SuperPoints,
};
use crate::scalar::Real;

/// Where geometric labels come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Labeler {
    /// `<input>.labels` when present, otherwise one label for everything.
    #[default]
    Auto,
    /// One label per line; defaults to `<input>.labels`.
    Sidecar { path: Option<PathBuf> },
    VoxelGrid { cell: f64 },
    EuclideanCluster { radius: f64 },
    /// Every point gets label 0.
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    /// Seeded Gaussian map of `[xyz, features]` to `dim` columns.
    #[default]
    RandomProjection,
    /// Raw per-point features; `dim` must equal the input feature width.
    Passthrough,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: PathBuf,
    /// Inferred from the extension when absent.
    pub format: Option<Format>,
    pub r_bits: u32,
    /// Number of parts `L`.
    pub parts: usize,
    /// Super-points per part and for the global set.
    pub m: usize,
    pub k: usize,
    pub k_graph: usize,
    /// Representation width `d` (even).
    pub dim: usize,
    pub seed: u64,
    pub labeler: Labeler,
    pub encoder: EncoderKind,
    pub value_uses_wr: bool,
    pub loss: LossConfig,
    /// Worker threads; `None` uses the available parallelism. Never changes results.
    pub workers: Option<usize>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            format: None,
            r_bits: DEFAULT_R_BITS,
            parts: 6,
            m: 64,
            k: 24,
            k_graph: DEFAULT_K_GRAPH,
            dim: 32,
            seed: 0,
            labeler: Labeler::Auto,
            encoder: EncoderKind::RandomProjection,
            value_uses_wr: false,
            loss: LossConfig::default(),
            workers: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        HilbertConfig::new(self.r_bits)?;
        for (name, v) in [("parts", self.parts), ("m", self.m), ("k", self.k), ("k_graph", self.k_graph)] {
            if v == 0 {
                return Err(Error::BadParams(format!("{name} must be at least 1")));
            }
        }
        if self.k > self.parts * self.m {
            return Err(Error::BadParams(format!(
                "k={} exceeds the {} local super-points",
                self.k,
                self.parts * self.m
            )));
        }
        if self.dim == 0 || self.dim % 2 != 0 {
            return Err(Error::BadParams(format!("dim must be even and positive, got {}", self.dim)));
        }
        if self.workers == Some(0) {
            return Err(Error::BadParams("workers must be at least 1".into()));
        }
        self.loss.validate()
    }

    /// SHA-256 over the result-affecting settings and the labelled input,
    /// folded to 64 bits. Paths and the worker count are left out.
    pub fn hash_with<T: Real>(&self, input: &LabeledCloud<T>) -> Result<u64> {
        let mut view = self.clone();
        view.input = PathBuf::new();
        view.output_dir = PathBuf::new();
        view.workers = None;
        if let Labeler::Sidecar { path } = &mut view.labeler {
            *path = None;
        }
        let json = serde_json::to_vec(&view).map_err(|e| Error::Validation(e.to_string()))?;
        let mut h = Sha256::new();
        h.update(&json);
        let mut packed = Vec::new();
        encode_packed(&input.cloud, &mut packed)?;
        h.update(&packed);
        for &l in input.labels() {
            h.update(l.to_le_bytes());
        }
        let digest = h.finalize();
        Ok(u64::from_be_bytes(digest[..8].try_into().expect("digest has 32 bytes")))
    }
}

pub const ENCODER_SEED_TAG: u64 = 1;
pub const PARAMS_SEED_TAG: u64 = 2;

/// Seeds for independent random components of one run.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct RunArtifacts<T> {
    pub provenance: Provenance,
    pub code: HilbertCode<T>,
    pub partition: PartitionSet,
    pub global: SuperPoints<T>,
    /// Union of the per-part sets, part by part.
    pub local: SuperPoints<T>,
    pub global_labels: Vec<u32>,
    pub local_labels: Vec<u32>,
    pub state: AggregationState<T>,
    pub loss: LossReport<T>,
    /// Wall time per stage, in execution order.
    pub timings: Vec<(Stage, f64)>,
}

struct Timer {
    records: Vec<(Stage, f64)>,
}

impl Timer {
    fn time<R>(&mut self, stage: Stage, f: impl FnOnce() -> Result<R>) -> Result<R> {
        let t = Instant::now();
        let out = f().stage(stage)?;
        self.records.push((stage, t.elapsed().as_secs_f64()));
        Ok(out)
    }
}

/// Loads the configured input and runs the encoder on it.
pub fn run_encoder<T: Real>(cfg: &RunConfig) -> Result<RunArtifacts<T>> {
    cfg.validate()?;
    with_workers(cfg.workers, || {
        let mut timer = Timer { records: Vec::new() };
        let cloud = timer.time(Stage::Load, || {
            let format = cfg.format.unwrap_or_else(|| Format::from_path(&cfg.input));
            read_cloud::<T>(&cfg.input, format)
        })?;
        let labeled = timer.time(Stage::Label, || apply_labeler(cloud, &cfg.labeler, &cfg.input))?;
        run_stages(labeled, cfg, timer)
    })
}

/// Runs the encoder on an in-memory labelled cloud.
pub fn run_encoder_on<T: Real>(input: LabeledCloud<T>, cfg: &RunConfig) -> Result<RunArtifacts<T>> {
    cfg.validate()?;
    with_workers(cfg.workers, || run_stages(input, cfg, Timer { records: Vec::new() }))
}

fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> Result<R> + Send) -> Result<R> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        b = b.num_threads(w);
    }
    let pool = b.build().map_err(|e| Error::BadParams(format!("thread pool: {e}")))?;
    pool.install(f)
}

fn apply_labeler<T: Real>(cloud: PointCloud<T>, labeler: &Labeler, input: &Path) -> Result<LabeledCloud<T>> {
    let sidecar = |p: Option<&PathBuf>| p.cloned().unwrap_or_else(|| label_sidecar_path(input));
    match labeler {
        Labeler::Auto => {
            let p = sidecar(None);
            if p.is_file() {
                LabeledCloud::new(cloud, read_index_list(&p)?)
            } else {
                Ok(LabeledCloud::unlabeled(cloud))
            }
        }
        Labeler::Sidecar { path } => LabeledCloud::new(cloud, read_index_list(&sidecar(path.as_ref()))?),
        Labeler::VoxelGrid { cell } => label_clusters(&cloud, &LabelMethod::VoxelGrid { cell: *cell }),
        Labeler::EuclideanCluster { radius } => {
            label_clusters(&cloud, &LabelMethod::EuclideanCluster { radius: *radius })
        }
        Labeler::Single => Ok(LabeledCloud::unlabeled(cloud)),
    }
}

/// `<input>.labels`, the label file written next to generated clouds.
pub fn label_sidecar_path(input: &Path) -> PathBuf {
    let mut s = input.as_os_str().to_owned();
    s.push(".labels");
    PathBuf::from(s)
}

fn make_encoder<T: Real>(cfg: &RunConfig, feature_dim: usize) -> Box<dyn FeatureEncoder<T>> {
    match cfg.encoder {
        EncoderKind::RandomProjection => {
            Box::new(RandomProjection::new(feature_dim, cfg.dim, derive_seed(cfg.seed, ENCODER_SEED_TAG)))
        }
        EncoderKind::Passthrough => Box::new(Passthrough { dim: feature_dim }),
    }
}

fn run_stages<T: Real>(labeled: LabeledCloud<T>, cfg: &RunConfig, mut timer: Timer) -> Result<RunArtifacts<T>> {
    let provenance = Provenance { config_hash: cfg.hash_with(&labeled)?, seed: cfg.seed };
    let hcfg = HilbertConfig::new(cfg.r_bits)?;
    let cloud = &labeled.cloud;

    let code = timer.time(Stage::Serialize, || Ok(serialize(cloud, hcfg)))?;
    let parts = timer.time(Stage::Partition, || partition(&code, cfg.parts))?;

    let (global, local_parts) = timer.time(Stage::Sample, || {
        let global = fps(cloud, cfg.m, code.order[0])?;
        let local = (0..parts.num_parts())
            .map(|j| {
                let members = parts.members(&code, j);
                let sub = cloud.select(members)?;
                let mut sp = fps(&sub, cfg.m, 0).map_err(|e| match e {
                    Error::BadParams(msg) => Error::BadParams(format!("part {j}: {msg}")),
                    e => e,
                })?;
                sp.source.iter_mut().for_each(|s| *s = members[*s]);
                sp.origin = Origin::Local(j);
                Ok(sp)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((global, local))
    })?;

    let (global, local_parts) = timer.time(Stage::Encode, || {
        let enc = make_encoder::<T>(cfg, cloud.feature_dim());
        let global = encode_features(global, cloud, enc.as_ref(), cfg.dim)?;
        let local = local_parts
            .into_iter()
            .map(|sp| encode_features(sp, cloud, enc.as_ref(), cfg.dim))
            .collect::<Result<Vec<_>>>()?;
        Ok((global, local))
    })?;

    let (global_labels, local_labels) = timer.time(Stage::Label, || {
        let gl = inherit_labels(&global, &labeled, None);
        let mut ll = Vec::with_capacity(cfg.parts * cfg.m);
        for (j, sp) in local_parts.iter().enumerate() {
            ll.extend(inherit_labels(sp, &labeled, Some(parts.members(&code, j))));
        }
        Ok((gl, ll))
    })?;
    let local = SuperPoints::concat(&local_parts, Origin::Local(0)).stage(Stage::Sample)?;

    let neighbor_map = timer.time(Stage::Neighbors, || {
        let index = build_combined_index(&global, &local, &global_labels, &local_labels, hcfg)?;
        approx_knn(&index, cfg.k)
    })?;

    let state = timer.time(Stage::Aggregate, || {
        let mut params = AggParams::<T>::seeded(cfg.dim, derive_seed(cfg.seed, PARAMS_SEED_TAG))?;
        params.k_graph = cfg.k_graph;
        params.value_uses_wr = cfg.value_uses_wr;
        AggregationState::compute(
            global.coords.clone(),
            global.features.clone(),
            local.coords.clone(),
            local.features.clone(),
            neighbor_map,
            &params,
        )
    })?;

    let loss = timer.time(Stage::Loss, || {
        consensus_loss(&state.updated, &state.global_feats, &symmetrize(&state.adjacency), &cfg.loss)
    })?;

    Ok(RunArtifacts {
        provenance,
        code,
        partition: parts,
        global,
        local,
        global_labels,
        local_labels,
        state,
        loss,
        timings: timer.records,
    })
}

pub const HILBERT_FILE: &str = "hilbert.txt";
pub const PARTS_FILE: &str = "parts.bin";
pub const NEIGHBORS_FILE: &str = "neighbors.txt";
pub const AGGSTATE_FILE: &str = "aggstate.bin";
pub const LOSS_FILE: &str = "loss.txt";
pub const TIMINGS_FILE: &str = "timings.csv";

/// Artifact files whose bytes depend only on the config and input.
pub const DETERMINISTIC_FILES: [&str; 5] = [HILBERT_FILE, PARTS_FILE, NEIGHBORS_FILE, AGGSTATE_FILE, LOSS_FILE];

/// Writes every artifact under `dir` with fixed file names.
pub fn write_artifacts<T: Real>(dir: &Path, art: &RunArtifacts<T>) -> Result<()> {
    (|| {
        fs::create_dir_all(dir)?;
        let header = [art.provenance.header()];
        write_code(&dir.join(HILBERT_FILE), &art.code, &header)?;
        write_partition(&dir.join(PARTS_FILE), &art.partition, art.provenance)?;
        write_neighbor_map(&dir.join(NEIGHBORS_FILE), &art.state.neighbor_map, &header)?;
        write_aggregation_state(&dir.join(AGGSTATE_FILE), &art.state, art.provenance)?;

        let mut w = BufWriter::new(File::create(dir.join(LOSS_FILE))?);
        writeln!(w, "# {}", header[0])?;
        write!(w, "{}", art.loss.to_kv())?;
        w.flush()?;

        let mut w = BufWriter::new(File::create(dir.join(TIMINGS_FILE))?);
        writeln!(w, "# {}", header[0])?;
        writeln!(w, "stage,seconds")?;
        for (stage, secs) in &art.timings {
            writeln!(w, "{stage},{secs:.9}")?;
        }
        w.flush()?;
        Ok(())
    })()
    .stage(Stage::Write)
}

const PARTS_MAGIC: &[u8; 4] = b"PPRT";

/// Part sizes and per-point part ids, little-endian, after a provenance header.
pub fn write_partition(path: &Path, parts: &PartitionSet, prov: Provenance) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(PARTS_MAGIC)?;
    w.write_all(&prov.config_hash.to_le_bytes())?;
    w.write_all(&prov.seed.to_le_bytes())?;
    w.write_all(&u32_len(parts.part_of.len())?.to_le_bytes())?;
    w.write_all(&u32_len(parts.num_parts())?.to_le_bytes())?;
    for &s in &parts.sizes {
        w.write_all(&u32_len(s)?.to_le_bytes())?;
    }
    for &p in &parts.part_of {
        w.write_all(&u32_len(p)?.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Returns `(sizes, part_of, provenance)`.
pub fn read_partition(path: &Path) -> Result<(Vec<usize>, Vec<usize>, Provenance)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::parse(0, "truncated header"))?;
    if &magic != PARTS_MAGIC {
        return Err(Error::parse(0, "bad magic, expected PPRT"));
    }
    let prov = Provenance { config_hash: read_u64(&mut r)?, seed: read_u64(&mut r)? };
    let n = read_u32(&mut r)? as usize;
    let l = read_u32(&mut r)? as usize;
    let sizes = (0..l).map(|_| Ok(read_u32(&mut r)? as usize)).collect::<Result<Vec<_>>>()?;
    let part_of = (0..n).map(|_| Ok(read_u32(&mut r)? as usize)).collect::<Result<Vec<_>>>()?;
    if sizes.iter().sum::<usize>() != n || part_of.iter().any(|&p| p >= l) {
        return Err(Error::Validation("inconsistent partition file".into()));
    }
    Ok((sizes, part_of, prov))
}
