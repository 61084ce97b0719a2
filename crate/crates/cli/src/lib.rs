//! Command implementations behind the `patchqnn` binary.

pub mod commands;
pub mod config;

use std::path::Path;

use patchqnn::ansatz::{build_qnn_template_with, AnsatzOptions};
use patchqnn::data::{load_idx, prepare, read_prepared, Dataset, PatchConfig};
use patchqnn::model::{default_observables, ModelConfig};
use patchqnn::simulator::Observable;

pub use commands::{cmd_hessian, cmd_landscape, cmd_prepare, cmd_report, cmd_train};
pub use config::{Overrides, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),
    #[error(transparent)]
    Core(#[from] patchqnn::Error),
    #[error("{0}")]
    Artifact(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_FORMAT: i32 = 4;
pub const EXIT_NUMERICAL: i32 = 5;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Core(e) if e.is_format_error() => EXIT_FORMAT,
            CliError::Core(e) if e.is_numerical_error() => EXIT_NUMERICAL,
            _ => EXIT_OTHER,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub(crate) fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

/// Number of readouts a register supports: the ten X0..X4, Z0..Z4 when it
/// has at least five qubits, otherwise X and Z on every qubit.
pub fn n_observables(n_qubits: usize) -> usize {
    observables(n_qubits).len()
}

pub fn observables(n_qubits: usize) -> Vec<Observable> {
    if n_qubits >= 5 {
        default_observables()
    } else {
        (0..n_qubits)
            .map(Observable::x)
            .chain((0..n_qubits).map(Observable::z))
            .collect()
    }
}

pub fn patch_config(cfg: &RunConfig) -> CliResult<PatchConfig> {
    Ok(PatchConfig::new(cfg.model.image_side, cfg.model.patch, cfg.stride())?)
}

pub fn ansatz_options(cfg: &RunConfig) -> AnsatzOptions {
    AnsatzOptions {
        encoding_cz_per_sequence: cfg.model.encoding_cz_per_sequence,
    }
}

pub fn build_model(cfg: &RunConfig) -> CliResult<ModelConfig> {
    let template = build_qnn_template_with(cfg.model.n_qubits, cfg.model.depth, ansatz_options(cfg))?;
    Ok(ModelConfig::new(
        template,
        patch_config(cfg)?,
        observables(cfg.model.n_qubits),
        cfg.model.scale,
        cfg.model.binding,
    )?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Loads a split, keeps labels below `data.classes` and applies the limit.
pub fn load_split(cfg: &RunConfig, split: Split) -> CliResult<Dataset> {
    let d = &cfg.data;
    let (images, labels, prepared, limit) = match split {
        Split::Train => (&d.train_images, &d.train_labels, &d.train_prepared, d.train_limit),
        Split::Test => (&d.test_images, &d.test_labels, &d.test_prepared, d.test_limit),
    };
    let mut ds = match (prepared, images, labels) {
        (Some(p), _, _) => read_prepared(p)?,
        (None, Some(i), Some(l)) => prepare(&load_idx(i, l)?)?,
        _ => return Err(CliError::Config(vec![format!("no data configured for the {split:?} split")])),
    };
    if ds.side != cfg.model.image_side {
        return Err(CliError::Config(vec![format!(
            "{split:?} images are {0}x{0} after pooling but model.image_side = {1}",
            ds.side, cfg.model.image_side
        )]));
    }
    ds.samples.retain(|s| s.label < d.classes);
    if let Some(n) = limit {
        ds.samples.truncate(n);
    }
    if ds.is_empty() {
        return Err(CliError::Core(patchqnn::Error::Empty(match split {
            Split::Train => "training set",
            Split::Test => "test set",
        })));
    }
    Ok(ds)
}

pub(crate) fn sha256_file(path: &Path) -> CliResult<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).map_err(io_err(format!("reading {}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
