use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::model::{MlpConfig, ModelConfig};
use crate::templates::{builtin, Builtin, TaskDoc, TemplateTask};
use crate::train::{TrainConfig, Variant};

/// A builtin task by name, or a full task document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSource {
    Builtin(String),
    Doc(TaskDoc),
}

impl TaskSource {
    pub fn resolve(&self) -> Result<TemplateTask> {
        match self {
            TaskSource::Builtin(name) => builtin(&name.parse::<Builtin>()?),
            TaskSource::Doc(doc) => doc.clone().into_task("custom"),
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn hundred() -> usize {
    100
}
fn yes() -> bool {
    true
}
fn five() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub task: TaskSource,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    /// Substitution alphabet size; defaults to `n` as in the training protocol.
    #[serde(default)]
    pub alphabet: Option<usize>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Arch {
    /// `k` and `vocab` are filled from the task.
    Transformer { model: ModelConfig },
    Mlp {
        width: usize,
        #[serde(default = "one")]
        depth: usize,
    },
}

fn one() -> usize {
    1
}

impl Arch {
    pub fn mlp_config(&self, k: usize, vocab: usize) -> Option<MlpConfig> {
        match self {
            Arch::Mlp { width, depth } => Some(MlpConfig {
                k,
                vocab,
                width: *width,
                depth: *depth,
                activation: crate::tensor::Activation::Relu,
            }),
            Arch::Transformer { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCmdConfig {
    pub task: TaskSource,
    pub arch: Arch,
    pub n: usize,
    #[serde(default = "hundred")]
    pub n_eval: usize,
    #[serde(default = "hundred")]
    pub eval_alphabet: usize,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub seed: u64,
    /// Continue from a transformer checkpoint instead of initializing.
    #[serde(default)]
    pub resume: Option<PathBuf>,
    #[serde(default = "yes")]
    pub save_checkpoint: bool,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelCmdConfig {
    pub task: TaskSource,
    pub kernel: KernelSpec,
    /// Append the classification token.
    #[serde(default = "yes")]
    pub cls: bool,
    pub n_grid: Vec<usize>,
    #[serde(default = "five")]
    pub n_seeds: usize,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to `n / 4`.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "hundred")]
    pub n_test: usize,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NMatrixCmdConfig {
    pub task: TaskSource,
    pub kernel: KernelSpec,
    #[serde(default = "yes")]
    pub cls: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeCmdConfig {
    pub d_emb: Vec<usize>,
    #[serde(default)]
    pub value_identity: bool,
    #[serde(default = "four")]
    pub heads: usize,
    #[serde(default = "sixty_four")]
    pub vocab: usize,
    #[serde(default = "thirty_two")]
    pub n_train: usize,
    #[serde(default = "ten")]
    pub n_seeds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

fn four() -> usize {
    4
}
fn sixty_four() -> usize {
    64
}
fn thirty_two() -> usize {
    32
}
fn ten() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepCmdConfig {
    pub task: TaskSource,
    pub variants: Vec<Variant>,
    pub n_grid: Vec<usize>,
    #[serde(default = "three")]
    pub n_seeds: usize,
    #[serde(default)]
    pub seed: u64,
    pub lrs: Vec<f64>,
    #[serde(default = "hundred")]
    pub n_eval: usize,
    #[serde(default = "hundred")]
    pub eval_alphabet: usize,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

fn three() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiguresConfig {
    /// Smallest grids that still show each trend.
    #[serde(default = "yes")]
    pub quick: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelftestConfig {
    #[serde(default)]
    pub seed: u64,
}

/// Seeds `base, base + 1, .., base + count − 1`.
pub fn seed_range(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| base + i).collect()
}

pub(crate) fn require(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(msg.to_string()))
    }
}
