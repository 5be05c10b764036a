//! Resolved configurations, one per subcommand. Each is what a TOML config
//! file deserializes into; command-line flags are applied on top.

use std::path::{Path, PathBuf};

use gcnstab_core::backprop::GradCheckConfig;
use gcnstab_core::datasets::{BinaryReduction, CsbmParams, DatasetFiles};
use gcnstab_core::experiments::DatasetSpec;
use gcnstab_core::graph::FilterKind;
use gcnstab_core::loss::Loss;
use gcnstab_core::model::Activation;
use gcnstab_core::training::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

/// Reads and parses a TOML file.
pub fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GradcheckRun {
    #[serde(flatten)]
    pub check: GradCheckConfig,
    /// Negates every analytic gradient before comparison. Test-only.
    #[serde(default)]
    pub inject_sign_flip: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsRun {
    /// JSON constants written by `twin`; its `B`, `C_g` and `C_X` count as
    /// measured.
    pub constants_file: Option<PathBuf>,
    /// Fills `alpha_sigma` and `nu_sigma`.
    pub activation: Option<Activation>,
    /// Fills `alpha_ell`, `nu_ell` and `M`.
    pub loss: Option<Loss>,
    pub alpha_sigma: Option<f64>,
    pub nu_sigma: Option<f64>,
    pub alpha_ell: Option<f64>,
    pub nu_ell: Option<f64>,
    #[serde(rename = "M")]
    pub loss_ceiling: Option<f64>,
    #[serde(rename = "B")]
    pub b: Option<f64>,
    /// With `widths`, derives `B` as `max xi sqrt(d_in d_out)`.
    pub xi: Option<f64>,
    pub widths: Option<Vec<usize>>,
    #[serde(rename = "C_g")]
    pub c_g: Option<f64>,
    #[serde(rename = "C_X")]
    pub c_x: Option<f64>,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub eta: Option<f64>,
    #[serde(rename = "T")]
    pub t: Option<usize>,
    pub m: Option<usize>,
    pub delta: f64,
}

impl Default for BoundsRun {
    fn default() -> Self {
        BoundsRun {
            constants_file: None,
            activation: None,
            loss: None,
            alpha_sigma: None,
            nu_sigma: None,
            alpha_ell: None,
            nu_ell: None,
            loss_ceiling: None,
            b: None,
            xi: None,
            widths: None,
            c_g: None,
            c_x: None,
            k: None,
            eta: None,
            t: None,
            m: None,
            delta: 0.05,
        }
    }
}

/// Model and data shared by `train` and `twin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRun {
    /// Drives the dataset, initialization and SGD streams.
    pub seed: u64,
    pub filter: FilterKind,
    pub activation: Activation,
    #[serde(rename = "K")]
    pub k: usize,
    /// Width of every hidden layer.
    pub d: usize,
    pub dataset: DatasetSpec,
    /// Its `seed` is replaced by the top-level seed.
    pub train: TrainConfig,
    /// Snapshot file with `theta_0`; random initialization otherwise.
    pub init: Option<PathBuf>,
    pub delta: f64,
}

impl Default for TrainRun {
    fn default() -> Self {
        TrainRun {
            seed: 0,
            filter: FilterKind::SymSelfloop,
            activation: Activation::Tanh,
            k: 2,
            d: 16,
            dataset: DatasetSpec::Csbm(CsbmParams::default()),
            train: TrainConfig {
                record_every: 10,
                ..TrainConfig::default()
            },
            init: None,
            delta: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwinRun {
    pub seed: u64,
    pub filter: FilterKind,
    pub activation: Activation,
    #[serde(rename = "K")]
    pub k: usize,
    pub d: usize,
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    pub init: Option<PathBuf>,
    /// Training-set position to replace; drawn from the seed when absent.
    pub replaced_index: Option<usize>,
    /// Node whose sample replaces it; a random test node when absent.
    pub replacement_node: Option<usize>,
    /// Replace the sample with itself.
    pub identical_replacement: bool,
}

impl Default for TwinRun {
    fn default() -> Self {
        TwinRun {
            seed: 0,
            filter: FilterKind::SymSelfloop,
            activation: Activation::Tanh,
            k: 1,
            d: 4,
            dataset: DatasetSpec::Csbm(CsbmParams {
                n: 40,
                p_in: 0.3,
                p_out: 0.05,
                d0: 4,
                ..CsbmParams::default()
            }),
            train: TrainConfig {
                t: 50,
                ..TrainConfig::default()
            },
            init: None,
            replaced_index: None,
            replacement_node: None,
            identical_replacement: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiltersRun {
    pub edges: PathBuf,
    #[serde(default = "all_kinds")]
    pub kinds: Vec<FilterKind>,
    /// Defaults to one past the largest node index in the edge list.
    #[serde(default)]
    pub num_nodes: Option<usize>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Restrict to nodes with degree at least 1 before building filters.
    #[serde(default)]
    pub drop_isolated: bool,
}

fn all_kinds() -> Vec<FilterKind> {
    FilterKind::ALL.to_vec()
}

fn default_tol() -> f64 {
    1e-10
}

/// Dataset from four file paths; `split` optional.
pub fn files_dataset(
    edges: PathBuf,
    features: PathBuf,
    labels: PathBuf,
    split: Option<PathBuf>,
    train_fraction: f64,
) -> DatasetSpec {
    DatasetSpec::Files {
        files: DatasetFiles {
            edges,
            features,
            labels,
            split,
        },
        reduction: BinaryReduction::default(),
        train_fraction,
    }
}

/// Input files named by a dataset spec.
pub fn dataset_inputs(spec: &DatasetSpec) -> Vec<PathBuf> {
    match spec {
        DatasetSpec::Csbm(_) => Vec::new(),
        DatasetSpec::Files { files, .. } => files.paths().into_iter().map(Path::to_path_buf).collect(),
    }
}
