use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use percloud::format::Format;
use percloud::hilbert::Curve;
use percloud::synth::SynthKind;

#[derive(Debug, Parser)]
#[command(name = "percloud", version, about = "Point-cloud serialization, sampling, neighbour search and aggregation")]
pub struct Cli {
    /// Random seed for every stochastic step
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, global = true, value_name = "FILE", help = "TOML file of flag values; its values override the command line [default: none]")]
    pub config: Option<PathBuf>,

    #[arg(
        long,
        global = true,
        env = "PERCLOUD_THREADS",
        hide_env_values = true,
        help = "Worker threads [default: available parallelism]"
    )]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the Hilbert (or Morton) order of a cloud as `original_index curve_index` lines
    Serialize(SerializeArgs),
    /// Split a cloud into contiguous runs of its Hilbert order
    Partition(PartitionArgs),
    /// Farthest point sampling
    Fps(FpsArgs),
    /// Compute geometric labels
    Label(LabelArgs),
    /// Label-constrained k nearest local points for each global point
    Knn(KnnArgs),
    /// Recall of an approximate neighbour file against an exact one
    KnnRecall(KnnRecallArgs),
    /// Cross-attention and one GCN step over global and local super-points
    Aggregate(AggregateArgs),
    /// Consensus loss of a saved aggregation state
    Loss(LossArgs),
    /// Full encoder run writing all artifacts to a directory
    Run(RunArgs),
    /// Timing and recall sweep over synthetic clouds, as CSV
    Bench(BenchArgs),
    /// Finite-difference check of the consensus loss gradients
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic labelled cloud
    Gen(GenArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Input cloud (required)
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,

    #[arg(long, value_parser = parse_format, help = "Input format: xyz, ply or packed [default: from extension]")]
    pub format: Option<Format>,
}

fn parse_format(s: &str) -> Result<Format, String> {
    s.parse().map_err(|e: percloud::Error| e.to_string())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CurveArg {
    Hilbert,
    Morton,
}

impl From<CurveArg> for Curve {
    fn from(c: CurveArg) -> Self {
        match c {
            CurveArg::Hilbert => Curve::Hilbert,
            CurveArg::Morton => Curve::Morton,
        }
    }
}

#[derive(Debug, Args)]
pub struct SerializeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Bits per axis of the curve grid (1-21)
    #[arg(long, default_value_t = 16)]
    pub r_bits: u32,
    /// Space-filling curve
    #[arg(long, value_enum, default_value_t = CurveArg::Hilbert)]
    pub curve: CurveArg,
    /// Output file (required)
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Bits per axis of the curve grid (1-21)
    #[arg(long, default_value_t = 16)]
    pub r_bits: u32,
    /// Number of parts
    #[arg(long, default_value_t = 6)]
    pub parts: usize,
    /// Output file of `original_index part` lines in curve order (required)
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FpsArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Number of samples
    #[arg(long, default_value_t = 64)]
    pub m: usize,
    /// Index of the first sample
    #[arg(long, default_value_t = 0)]
    pub start: usize,
    /// Sampled cloud; parent indices go to `<out>.src` (required)
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LabelMethodArg {
    VoxelGrid,
    EuclideanCluster,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Labelling method
    #[arg(long, value_enum, default_value_t = LabelMethodArg::EuclideanCluster)]
    pub method: LabelMethodArg,
    /// Voxel side for voxel-grid
    #[arg(long, default_value_t = 0.25)]
    pub cell: f64,
    /// Linking distance for euclidean-cluster
    #[arg(long, default_value_t = 0.05)]
    pub radius: f64,
    /// Output file, one label per line (required)
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct KnnArgs {
    /// Query (global) cloud (required)
    #[arg(long, value_name = "FILE")]
    pub global: PathBuf,
    /// Candidate (local) cloud (required)
    #[arg(long, value_name = "FILE")]
    pub local: PathBuf,
    #[arg(long, value_name = "FILE", help = "Labels of the global cloud, one per line [default: all 0]")]
    pub global_labels: Option<PathBuf>,
    #[arg(long, value_name = "FILE", help = "Labels of the local cloud, one per line [default: all 0]")]
    pub local_labels: Option<PathBuf>,
    /// Neighbours per query
    #[arg(long, default_value_t = 24)]
    pub k: usize,
    /// Bits per axis of the curve grid (1-21)
    #[arg(long, default_value_t = 16)]
    pub r_bits: u32,
    /// Use the brute-force label-constrained search (default: off)
    #[arg(long)]
    pub exact: bool,
    /// Output neighbour file (required)
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct KnnRecallArgs {
    /// Approximate neighbour file (required)
    #[arg(long, value_name = "FILE")]
    pub approx: PathBuf,
    /// Exact neighbour file (required)
    #[arg(long, value_name = "FILE")]
    pub exact: PathBuf,
    #[arg(long, value_name = "FILE", help = "Write the key=value report here [default: standard output]")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// Global super-point cloud (required)
    #[arg(long, value_name = "FILE")]
    pub global: PathBuf,
    /// Local super-point cloud (required)
    #[arg(long, value_name = "FILE")]
    pub local: PathBuf,
    /// Neighbour file linking them (required)
    #[arg(long, value_name = "FILE")]
    pub neighbors: PathBuf,
    /// Representation width; features are a seeded projection of position and attributes
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    /// Use the input attributes as representations instead of projecting (default: off)
    #[arg(long)]
    pub raw_features: bool,
    /// Neighbours per node in the global graph
    #[arg(long, default_value_t = 8)]
    pub k_graph: usize,
    /// Relative-position scale
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Add W_r R instead of R on the value path (default: off)
    #[arg(long)]
    pub value_uses_wr: bool,
    /// Output aggregation state (required)
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LossArgs {
    /// Aggregation state written by `aggregate` or `run` (required)
    #[arg(long, value_name = "FILE")]
    pub state: PathBuf,
    /// Regularization weight
    #[arg(long, default_value_t = 0.1)]
    pub mu: f64,
    /// Consensus weight in the total objective
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    /// Norm stabilizer
    #[arg(long, default_value_t = 1e-12)]
    pub eps: f64,
    #[arg(long, value_name = "FILE", help = "Write the key=value report here [default: standard output]")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LabelerArg {
    Auto,
    Sidecar,
    VoxelGrid,
    EuclideanCluster,
    Single,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EncoderArg {
    RandomProjection,
    Passthrough,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Bits per axis of the curve grid (1-21)
    #[arg(long, default_value_t = 16)]
    pub r_bits: u32,
    /// Number of parts L
    #[arg(long, default_value_t = 6)]
    pub parts: usize,
    /// Super-points per part and in the global set
    #[arg(long, default_value_t = 64)]
    pub m: usize,
    /// Neighbours per global super-point
    #[arg(long, default_value_t = 24)]
    pub k: usize,
    /// Neighbours per node in the global graph
    #[arg(long, default_value_t = 8)]
    pub k_graph: usize,
    /// Representation width (even)
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    /// Label source; auto reads `<in>.labels` when present
    #[arg(long, value_enum, default_value_t = LabelerArg::Auto)]
    pub labeler: LabelerArg,
    #[arg(long, value_name = "FILE", help = "Label file for --labeler sidecar [default: <in>.labels]")]
    pub labels: Option<PathBuf>,
    /// Voxel side for --labeler voxel-grid
    #[arg(long, default_value_t = 0.25)]
    pub cell: f64,
    /// Linking distance for --labeler euclidean-cluster
    #[arg(long, default_value_t = 0.05)]
    pub radius: f64,
    /// Feature encoder
    #[arg(long, value_enum, default_value_t = EncoderArg::RandomProjection)]
    pub encoder: EncoderArg,
    /// Add W_r R instead of R on the value path (default: off)
    #[arg(long)]
    pub value_uses_wr: bool,
    /// Regularization weight
    #[arg(long, default_value_t = 0.1)]
    pub mu: f64,
    /// Consensus weight in the total objective
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    /// Artifact directory
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out_dir: PathBuf,
}

/// Comma-separated values; the empty string is the empty list.
#[derive(Debug, Clone, PartialEq)]
pub struct CommaList<T>(pub Vec<T>);

impl<T: FromStr> FromStr for CommaList<T>
where
    T::Err: fmt::Display,
{
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| t.parse().map_err(|e| format!("'{t}': {e}")))
            .collect::<Result<_, _>>()
            .map(CommaList)
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Synthetic cloud kinds, comma separated
    #[arg(long, default_value = "uniform-cube,gaussian-clusters")]
    pub kinds: CommaList<SynthKind>,
    /// Cloud sizes, comma separated; an empty list gives an empty table
    #[arg(long, default_value = "10000,100000")]
    pub ns: CommaList<usize>,
    /// Neighbour counts, comma separated
    #[arg(long, default_value = "24")]
    pub ks: CommaList<usize>,
    /// Query points drawn from each cloud
    #[arg(long, default_value_t = 1024)]
    pub m: usize,
    /// Timing repetitions; the median is reported
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    /// Bits per axis of the curve grid (1-21)
    #[arg(long, default_value_t = 16)]
    pub r_bits: u32,
    #[arg(long, value_name = "FILE", help = "CSV output [default: standard output]")]
    pub out: Option<PathBuf>,
}

fn parse_kind(s: &str) -> Result<SynthKind, String> {
    s.parse().map_err(|e: percloud::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Number of super-points
    #[arg(long, default_value_t = 32)]
    pub m: usize,
    /// Representation width
    #[arg(long, default_value_t = 8)]
    pub d: usize,
    /// Finite-difference step
    #[arg(long, default_value_t = 1e-6)]
    pub h: f64,
    /// Maximum relative error
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    /// Standard deviation of the random features
    #[arg(long, default_value_t = 0.1)]
    pub scale: f64,
    /// Neighbours per node in the graph
    #[arg(long, default_value_t = 8)]
    pub k_graph: usize,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Scene type
    #[arg(long, value_parser = parse_kind, default_value = "gaussian-clusters")]
    pub kind: SynthKind,
    /// Number of points
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    /// Gaussian cluster count
    #[arg(long, default_value_t = 4)]
    pub clusters: usize,
    /// Gaussian cluster standard deviation
    #[arg(long, default_value_t = 0.05)]
    pub stddev: f64,
    /// Spacing of Gaussian cluster centres
    #[arg(long, default_value_t = 1.0)]
    pub separation: f64,
    /// Cube side (uniform-cube) or floor side (room-grid)
    #[arg(long, default_value_t = 1.0)]
    pub extent: f64,
    /// Room-grid cells along x
    #[arg(long, default_value_t = 3)]
    pub grid_x: usize,
    /// Room-grid cells along y
    #[arg(long, default_value_t = 2)]
    pub grid_y: usize,
    #[arg(long, value_parser = parse_format, help = "Output format: xyz, ply or packed [default: from extension]")]
    pub format: Option<Format>,
    /// Output cloud; labels go to `<out>.labels` (required)
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}
