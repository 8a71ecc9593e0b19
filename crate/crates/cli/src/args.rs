use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "reachmap",
    version,
    about = "Learn reachability maps and plan with them"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Serialized as `{"command": ..., "args": {...}}` in run manifests.
#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", content = "args", rename_all = "kebab-case")]
pub enum Command {
    /// Write a built-in kinematic model as a chain file.
    Chain(ChainArgs),
    /// Generate labeled task-space samples.
    Sample(SampleArgs),
    /// Oracle-labeled regular grid over a planar chain's workspace.
    Grid(GridArgs),
    /// Shuffle a sample file into train and test parts.
    Split(SplitArgs),
    /// Train a reachability model.
    Train(TrainArgs),
    /// IoU of a model on a labeled test file.
    Eval(EvalArgs),
    /// Solve a planning problem file.
    Plan(PlanArgs),
    /// Model values on a 2-D grid slice.
    Heatmap(HeatmapArgs),
    /// Re-execute the run recorded in a manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuiltinChain {
    /// Planar 2-DoF arm, unit links.
    Arm2,
    /// Planar 3R hand chain (SE2).
    Hand3,
    /// Planar biped legs; samples are swing-left foot poses.
    Biped,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ChainArgs {
    #[arg(long, value_enum)]
    pub name: BuiltinChain,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Ik,
    Fk,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SampleArgs {
    /// Chain file (JSON).
    #[arg(long)]
    pub chain: PathBuf,
    #[arg(long, value_enum)]
    pub method: Method,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// IK sampling box, `lo:hi` per pose coordinate, comma separated.
    /// Defaults to the padded FK bounding box (footstep box for bipeds).
    #[arg(long, allow_hyphen_values = true)]
    pub bounds: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GridArgs {
    #[arg(long)]
    pub chain: PathBuf,
    /// Grid points per axis.
    #[arg(long, default_value_t = 100)]
    pub res: usize,
    /// Joint grid resolution of the reachability oracle.
    #[arg(long, default_value_t = 401)]
    pub oracle_res: usize,
    #[arg(long, allow_hyphen_values = true, default_value = "-2.2:2.2,-2.2:2.2")]
    pub bounds: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Fraction of rows kept for training.
    #[arg(long, default_value_t = 0.8)]
    pub frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Training part.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub test_out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Svm,
    Ocsvm,
    Mlp,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub model: ModelKind,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Decision offset ρ (default 0.1 for SVMs, 0 for the MLP).
    #[arg(long, allow_hyphen_values = true)]
    pub offset: Option<f64>,
    #[arg(long, default_value_t = 30.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 10.0)]
    pub c: f64,
    #[arg(long, default_value_t = 0.05)]
    pub nu: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_passes: usize,
    /// Kernel cache budget in MiB.
    #[arg(long, default_value_t = 1024)]
    pub cache_mb: usize,
    /// Hidden layer widths.
    #[arg(long, default_value = "64,32")]
    pub hidden: String,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Offset override; the model's stored offset is used otherwise.
    #[arg(long, allow_hyphen_values = true)]
    pub rho: Option<f64>,
    /// Also measure median single-sample inference time (stderr only).
    #[arg(long)]
    pub timing: bool,
    /// Report CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PlanArgs {
    /// Problem file (JSON).
    #[arg(long)]
    pub problem: PathBuf,
    /// Plan CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Fixed coordinate: `theta=<rad>` for SE2, `z=<m>` for R3.
    #[arg(long, allow_hyphen_values = true)]
    pub slice: Option<String>,
    #[arg(long, default_value_t = 200)]
    pub res: usize,
    #[arg(long, allow_hyphen_values = true, default_value = "-2.2:2.2,-2.2:2.2")]
    pub bounds: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write outputs into this directory instead of their recorded paths.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}
