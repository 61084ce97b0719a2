//! Run configuration: one TOML document, every experimental constant defaulted.

use std::path::{Path, PathBuf};

use patchqnn::ansatz::encoding_count;
use patchqnn::hessian::{ParameterScope, DEFAULT_FD_SCALE};
use patchqnn::model::{FeatureBinding, DEFAULT_SCALE};
use patchqnn::optim::reference_learning_rate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Largest register the CLI will simulate (`2^20` amplitudes per circuit).
pub const MAX_QUBITS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// Output of `prepare`; used instead of the raw IDX pair when set.
    pub train_prepared: Option<PathBuf>,
    pub test_prepared: Option<PathBuf>,
    /// Keep only the first `n` samples of each split.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    /// Keep only labels `0..classes`.
    pub classes: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            train_prepared: None,
            test_prepared: None,
            train_limit: None,
            test_limit: None,
            classes: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub n_qubits: usize,
    pub depth: usize,
    /// Number of patches; derives `stride` when that is absent.
    pub n_qc: Option<usize>,
    pub image_side: usize,
    pub patch: usize,
    pub stride: Option<usize>,
    pub scale: f64,
    pub encoding_cz_per_sequence: bool,
    pub binding: FeatureBinding,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            n_qubits: 8,
            depth: 50,
            n_qc: None,
            image_side: 14,
            patch: 8,
            stride: None,
            scale: DEFAULT_SCALE,
            encoding_cz_per_sequence: false,
            binding: FeatureBinding::Exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Defaults by depth: 50 -> 1e-2, 100 -> 5e-3, 150 -> 2.5e-3, 200 -> 1e-3.
    pub lr: Option<f64>,
    pub lr_min: f64,
    pub restart_period: Option<usize>,
    pub train_eval_subset: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            seed: 0,
            epochs: 50,
            batch_size: 1000,
            lr: None,
            lr_min: 0.0,
            restart_period: None,
            train_eval_subset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LandscapeSection {
    pub resolution: usize,
    pub margin: f64,
    pub fallback_half_width: f64,
    /// Evaluate grid losses on the first `n` training samples.
    pub subset: Option<usize>,
}

impl Default for LandscapeSection {
    fn default() -> Self {
        LandscapeSection {
            resolution: 20,
            margin: 0.1,
            fallback_half_width: 1.0,
            subset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HessianSection {
    pub scope: ParameterScope,
    /// Seeded subsample size; the full training set when `full` is set or
    /// the set is smaller.
    pub batch_size: usize,
    pub full: bool,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub max_restarts: usize,
    pub fd_scale: f64,
}

impl Default for HessianSection {
    fn default() -> Self {
        HessianSection {
            scope: ParameterScope::AnglesAndBias,
            batch_size: 10_000,
            full: false,
            seed: 0,
            tol: 1e-3,
            max_iter: 100,
            max_restarts: 3,
            fd_scale: DEFAULT_FD_SCALE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub landscape: LandscapeSection,
    pub hessian: HessianSection,
    pub output: OutputSection,
}

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub restart_period: Option<usize>,
}

fn absolutize(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

/// Stride giving `n_qc` patches, if one exists.
pub fn stride_for(side: usize, patch: usize, n_qc: usize) -> Option<usize> {
    if patch > side {
        return None;
    }
    let span = side - patch;
    if span == 0 {
        return (n_qc == 1).then_some(1);
    }
    (1..=span).find(|&d| span % d == 0 && (span / d + 1).pow(2) == n_qc)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(vec![e.message().to_string()]))
    }

    /// Reads, applies overrides, fills derived values and validates. Relative
    /// data paths are taken relative to the config file.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            context: format!("reading {}", path.display()),
            source: e,
        })?;
        let mut cfg = RunConfig::parse(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
        let base = std::fs::canonicalize(&base).unwrap_or(base);
        cfg.rebase(&base);
        cfg.apply(overrides);
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn rebase(&mut self, base: &Path) {
        let d = &mut self.data;
        for p in [
            &mut d.train_images,
            &mut d.train_labels,
            &mut d.test_images,
            &mut d.test_labels,
            &mut d.train_prepared,
            &mut d.test_prepared,
        ] {
            absolutize(base, p);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(out) = &o.out {
            self.output.dir = out.clone();
        }
        if let Some(seed) = o.seed {
            self.train.seed = seed;
        }
        if o.restart_period.is_some() {
            self.train.restart_period = o.restart_period;
        }
    }

    /// Fills `stride`, `n_qc` and `lr`, then checks everything, reporting
    /// every problem at once.
    pub fn resolve(&mut self) -> Result<(), CliError> {
        let mut errs = Vec::new();
        let m = &mut self.model;
        if m.patch == 0 || m.patch > m.image_side {
            errs.push(format!("model.patch = {} must be in 1..={}", m.patch, m.image_side));
        } else {
            match (m.stride, m.n_qc) {
                (None, None) => m.stride = Some(6.min(m.image_side - m.patch).max(1)),
                (None, Some(n)) => match stride_for(m.image_side, m.patch, n) {
                    Some(d) => m.stride = Some(d),
                    None => errs.push(format!(
                        "no stride gives model.n_qc = {n} patches for side {} and patch {}",
                        m.image_side, m.patch
                    )),
                },
                _ => {}
            }
            if let Some(d) = m.stride {
                let span = m.image_side - m.patch;
                if d == 0 || span % d != 0 {
                    errs.push(format!(
                        "model.stride = {d} must divide image_side - patch = {span}"
                    ));
                } else {
                    let derived = (span / d + 1).pow(2);
                    match m.n_qc {
                        Some(n) if n != derived => errs.push(format!(
                            "model.n_qc = {n} is inconsistent with side {}, patch {}, stride {d} (gives {derived})",
                            m.image_side, m.patch
                        )),
                        _ => m.n_qc = Some(derived),
                    }
                }
            }
        }
        if self.train.lr.is_none() {
            match reference_learning_rate(self.model.depth) {
                Some(lr) => self.train.lr = Some(lr),
                None => errs.push(format!(
                    "train.lr has no default for depth {}; set it explicitly",
                    self.model.depth
                )),
            }
        }
        errs.extend(self.violations());
        if errs.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(errs))
        }
    }

    fn violations(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let d = &self.data;
        for (split, images, labels, prepared) in [
            ("train", &d.train_images, &d.train_labels, &d.train_prepared),
            ("test", &d.test_images, &d.test_labels, &d.test_prepared),
        ] {
            match (images, labels, prepared) {
                (_, _, Some(p)) => {
                    if images.is_some() || labels.is_some() {
                        errs.push(format!("data: give either {split}_prepared or the {split} IDX pair, not both"));
                    }
                    if !p.is_file() {
                        errs.push(format!("data.{split}_prepared: {} does not exist", p.display()));
                    }
                }
                (Some(i), Some(l), None) => {
                    for (key, p) in [("images", i), ("labels", l)] {
                        if !p.is_file() {
                            errs.push(format!("data.{split}_{key}: {} does not exist", p.display()));
                        }
                    }
                }
                _ => errs.push(format!("data: {split}_images and {split}_labels (or {split}_prepared) are required")),
            }
        }
        if d.classes == 0 || d.classes > 10 {
            errs.push(format!("data.classes = {} must be in 1..=10", d.classes));
        }
        if d.train_limit == Some(0) || d.test_limit == Some(0) {
            errs.push("data limits must be positive".into());
        }

        let m = &self.model;
        if m.n_qubits == 0 || m.n_qubits > MAX_QUBITS {
            errs.push(format!("model.n_qubits = {} must be in 1..={MAX_QUBITS}", m.n_qubits));
        }
        if m.depth == 0 {
            errs.push("model.depth must be at least 1".into());
        }
        if !(m.scale.is_finite() && m.scale > 0.0) {
            errs.push(format!("model.scale = {} must be positive", m.scale));
        }
        let features = m.patch * m.patch;
        let slots = encoding_count(m.n_qubits);
        let fits = match m.binding {
            FeatureBinding::Exact => slots == features,
            FeatureBinding::Cyclic => features > 0 && slots % features == 0,
        };
        if !fits {
            errs.push(format!(
                "{} qubits give {slots} encoding slots, which cannot carry {features} patch features with {:?} binding",
                m.n_qubits, m.binding
            ));
        }
        let n_class = crate::n_observables(m.n_qubits);
        if d.classes > n_class {
            errs.push(format!(
                "data.classes = {} exceeds the {n_class} readouts of a {}-qubit circuit",
                d.classes, m.n_qubits
            ));
        }

        let t = &self.train;
        if t.epochs == 0 {
            errs.push("train.epochs must be at least 1".into());
        }
        if t.batch_size == 0 {
            errs.push("train.batch_size must be at least 1".into());
        }
        if let Some(lr) = t.lr {
            if !(lr.is_finite() && t.lr_min.is_finite() && t.lr_min >= 0.0 && (lr > t.lr_min || lr == 0.0 && t.lr_min == 0.0)) {
                errs.push(format!("train.lr = {lr} and train.lr_min = {} must satisfy lr > lr_min >= 0", t.lr_min));
            }
        }
        if t.restart_period == Some(0) {
            errs.push("train.restart_period must be positive".into());
        }
        if t.train_eval_subset == Some(0) {
            errs.push("train.train_eval_subset must be positive".into());
        }

        let l = &self.landscape;
        if l.resolution < 2 {
            errs.push("landscape.resolution must be at least 2".into());
        }
        if !(l.margin >= 0.0 && l.margin.is_finite()) {
            errs.push("landscape.margin must be non-negative".into());
        }
        if !(l.fallback_half_width > 0.0 && l.fallback_half_width.is_finite()) {
            errs.push("landscape.fallback_half_width must be positive".into());
        }
        if l.subset == Some(0) {
            errs.push("landscape.subset must be positive".into());
        }

        let h = &self.hessian;
        if h.batch_size == 0 {
            errs.push("hessian.batch_size must be at least 1".into());
        }
        if !(h.tol > 0.0 && h.tol.is_finite()) {
            errs.push("hessian.tol must be positive".into());
        }
        if h.max_iter == 0 {
            errs.push("hessian.max_iter must be at least 1".into());
        }
        if !(h.fd_scale > 0.0 && h.fd_scale.is_finite()) {
            errs.push("hessian.fd_scale must be positive".into());
        }
        errs
    }

    pub fn stride(&self) -> usize {
        self.model.stride.expect("resolved config")
    }

    pub fn lr(&self) -> f64 {
        self.train.lr.expect("resolved config")
    }

    /// sha256 over the resolved config, ignoring where outputs go.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputSection::default();
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
