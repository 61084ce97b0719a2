//! The distributed patch classifier.
//!
//! Every patch `p` of an image runs through its own copy of the ansatz with
//! angles `phi_p`; the per-patch expectation vectors are averaged into
//! `y_bar`, scaled by `c` and passed through softmax. Training minimizes the
//! batch-mean cross-entropy over all `phi_p` and the per-pixel bias grid.
//!
//! Batches are split into fixed-size chunks that are reduced in index order,
//! so results do not depend on how many threads rayon uses.

use std::borrow::Borrow;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ansatz::{build_qnn_template_with, AnsatzOptions, CircuitTemplate};
use crate::data::{extract_patches, PatchConfig, Sample};
use crate::simulator::{adjoint_gradient, run_circuit, Observable, StateVector};
use crate::{Error, Result};

/// Samples per reduction chunk. Part of the numerical contract: changing it
/// changes floating-point summation order.
const CHUNK: usize = 16;

pub const DEFAULT_SCALE: f64 = 100.0;

/// `X_0..X_4, Z_0..Z_4`.
pub fn default_observables() -> Vec<Observable> {
    (0..5)
        .map(Observable::x)
        .chain((0..5).map(Observable::z))
        .collect()
}

/// How a patch's `P^2` features are bound to the circuit's encoding slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureBinding {
    /// Slot `f` takes feature `f`; requires exactly `P^2` encoding slots.
    #[default]
    Exact,
    /// Slot `s` takes feature `s mod P^2`; needs a multiple of `P^2` slots.
    /// Lets small circuits be paired with small patches in tests.
    Cyclic,
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    n_class: usize,
    scale: f64,
    observables: Vec<Observable>,
    patch: PatchConfig,
    template: Arc<CircuitTemplate>,
    binding: FeatureBinding,
}

impl ModelConfig {
    pub fn new(
        template: CircuitTemplate,
        patch: PatchConfig,
        observables: Vec<Observable>,
        scale: f64,
        binding: FeatureBinding,
    ) -> Result<Self> {
        if observables.is_empty() {
            return Err(Error::InvalidArgument("no observables".into()));
        }
        if let Some(o) = observables.iter().find(|o| o.qubit >= template.n_qubits()) {
            return Err(Error::QubitOutOfRange {
                qubit: o.qubit,
                n_qubits: template.n_qubits(),
            });
        }
        if !scale.is_finite() {
            return Err(Error::NonFinite(format!("softmax scale {scale}")));
        }
        let features = patch.features_per_patch();
        let slots = template.n_encoding();
        let ok = match binding {
            FeatureBinding::Exact => slots == features,
            FeatureBinding::Cyclic => slots > 0 && slots % features == 0,
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "{slots} encoding slots cannot carry {features} patch features with {binding:?} binding"
            )));
        }
        Ok(ModelConfig {
            n_class: observables.len(),
            scale,
            observables,
            patch,
            template: Arc::new(template),
            binding,
        })
    }

    /// `n`-qubit ansatz of depth `d`, ten default observables, `c = 100`.
    pub fn standard(n_qubits: usize, depth: usize, patch: PatchConfig, options: AnsatzOptions) -> Result<Self> {
        let template = build_qnn_template_with(n_qubits, depth, options)?;
        ModelConfig::new(
            template,
            patch,
            default_observables(),
            DEFAULT_SCALE,
            FeatureBinding::Exact,
        )
    }

    pub fn n_class(&self) -> usize {
        self.n_class
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn observables(&self) -> &[Observable] {
        &self.observables
    }

    pub fn patch(&self) -> &PatchConfig {
        &self.patch
    }

    pub fn template(&self) -> &CircuitTemplate {
        &self.template
    }

    pub fn binding(&self) -> FeatureBinding {
        self.binding
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            n_qc: self.patch.n_patches(),
            n_trainable: self.template.n_trainable(),
            side: self.patch.side,
        }
    }

    fn encoding_angles(&self, patch_features: &[f64]) -> Vec<f64> {
        match self.binding {
            FeatureBinding::Exact => patch_features.to_vec(),
            FeatureBinding::Cyclic => patch_features
                .iter()
                .copied()
                .cycle()
                .take(self.template.n_encoding())
                .collect(),
        }
    }
}

/// Shape of the flat trainable vector: `n_qc` blocks of `n_trainable`
/// circuit angles followed by the `side x side` bias grid (row-major).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub n_qc: usize,
    pub n_trainable: usize,
    pub side: usize,
}

impl ParamLayout {
    pub fn n_angles(&self) -> usize {
        self.n_qc * self.n_trainable
    }

    pub fn n_bias(&self) -> usize {
        self.side * self.side
    }

    pub fn len(&self) -> usize {
        self.n_angles() + self.n_bias()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All trainables in one flat vector; see [`ParamLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layout: ParamLayout,
    values: Vec<f64>,
}

/// Gradients share the parameter layout.
pub type ModelGradient = ModelParams;

impl ModelParams {
    pub fn zeros(layout: ParamLayout) -> Self {
        ModelParams {
            layout,
            values: vec![0.0; layout.len()],
        }
    }

    pub fn from_flat(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::LengthMismatch {
                what: "flat parameter vector",
                expected: layout.len(),
                actual: values.len(),
            });
        }
        Ok(ModelParams { layout, values })
    }

    /// Builds from per-circuit angle vectors and a bias grid.
    pub fn from_parts(layout: ParamLayout, phis: &[Vec<f64>], bias: &[f64]) -> Result<Self> {
        if phis.len() != layout.n_qc {
            return Err(Error::LengthMismatch {
                what: "circuit count",
                expected: layout.n_qc,
                actual: phis.len(),
            });
        }
        let mut values = Vec::with_capacity(layout.len());
        for phi in phis {
            if phi.len() != layout.n_trainable {
                return Err(Error::LengthMismatch {
                    what: "circuit angles",
                    expected: layout.n_trainable,
                    actual: phi.len(),
                });
            }
            values.extend_from_slice(phi);
        }
        if bias.len() != layout.n_bias() {
            return Err(Error::LengthMismatch {
                what: "bias grid",
                expected: layout.n_bias(),
                actual: bias.len(),
            });
        }
        values.extend_from_slice(bias);
        Ok(ModelParams { layout, values })
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn phi(&self, p: usize) -> &[f64] {
        let n = self.layout.n_trainable;
        &self.values[p * n..(p + 1) * n]
    }

    fn phi_mut(&mut self, p: usize) -> &mut [f64] {
        let n = self.layout.n_trainable;
        &mut self.values[p * n..(p + 1) * n]
    }

    /// Concatenated circuit angles `(phi_0, ..., phi_{n_qc-1})`.
    pub fn angles(&self) -> &[f64] {
        &self.values[..self.layout.n_angles()]
    }

    pub fn angles_mut(&mut self) -> &mut [f64] {
        let n = self.layout.n_angles();
        &mut self.values[..n]
    }

    pub fn bias(&self) -> &[f64] {
        &self.values[self.layout.n_angles()..]
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        let n = self.layout.n_angles();
        &mut self.values[n..]
    }

    fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = cfg.layout();
        if self.layout != expected {
            return Err(Error::InvalidArgument(format!(
                "parameter layout {:?} does not match model {:?}",
                self.layout, expected
            )));
        }
        if let Some(bad) = self.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("model parameter {bad}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub y_bar: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Prediction {
    /// Class with the largest probability, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// `(max, log sum exp)` of the logits, the max subtracted before exponentiating.
fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// `-log softmax(logits)[label]`. When the label already dominates the loss is
/// tiny and `lse - z_label` would cancel, so it is summed from the other
/// classes through `ln_1p` instead.
fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let zy = logits[label];
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max > zy {
        return log_sum_exp(logits) - zy;
    }
    logits
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != label)
        .map(|(_, z)| (z - zy).exp())
        .sum::<f64>()
        .ln_1p()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

struct PatchRun {
    encoding: Vec<f64>,
    state: StateVector,
}

struct SampleForward {
    runs: Vec<PatchRun>,
    y_bar: Vec<f64>,
    logits: Vec<f64>,
}

fn forward_sample(params: &ModelParams, image: &[f64], cfg: &ModelConfig) -> Result<SampleForward> {
    let features = extract_patches(image, params.bias(), &cfg.patch)?;
    let n_qc = features.n_patches();
    let mut y_bar = vec![0.0; cfg.n_class];
    let mut runs = Vec::with_capacity(n_qc);
    for p in 0..n_qc {
        let encoding = cfg.encoding_angles(features.patch(p));
        let state = run_circuit(&cfg.template, params.phi(p), &encoding)?;
        for (acc, obs) in y_bar.iter_mut().zip(&cfg.observables) {
            *acc += state.expectation(obs)?;
        }
        runs.push(PatchRun { encoding, state });
    }
    for y in &mut y_bar {
        *y /= n_qc as f64;
    }
    let logits = y_bar.iter().map(|y| cfg.scale * y).collect();
    Ok(SampleForward { runs, y_bar, logits })
}

fn check_sample(sample: &Sample, cfg: &ModelConfig) -> Result<()> {
    if sample.label >= cfg.n_class {
        return Err(Error::InvalidArgument(format!(
            "label {} outside {} classes",
            sample.label, cfg.n_class
        )));
    }
    Ok(())
}

pub fn forward(params: &ModelParams, image: &[f64], cfg: &ModelConfig) -> Result<Prediction> {
    params.check(cfg)?;
    let f = forward_sample(params, image, cfg)?;
    Ok(Prediction {
        probs: softmax(&f.logits),
        y_bar: f.y_bar,
    })
}

fn sample_loss(params: &ModelParams, sample: &Sample, cfg: &ModelConfig) -> Result<(f64, bool)> {
    check_sample(sample, cfg)?;
    let f = forward_sample(params, &sample.pixels, cfg)?;
    let loss = cross_entropy(&f.logits, sample.label);
    let pred = Prediction {
        probs: softmax(&f.logits),
        y_bar: f.y_bar,
    };
    Ok((loss, pred.argmax() == sample.label))
}

/// Sums `f` over the batch in fixed chunks, combining chunk results in order.
fn ordered_sum<S, T, F, G>(batch: &[S], zero: impl Fn() -> T + Sync, f: F, combine: G) -> Result<T>
where
    S: Borrow<Sample> + Sync,
    T: Send,
    F: Fn(&mut T, &Sample) -> Result<()> + Sync,
    G: Fn(&mut T, T),
{
    let partials = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = zero();
            for s in chunk {
                f(&mut acc, s.borrow())?;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<T>>>()?;
    let mut total = zero();
    for part in partials {
        combine(&mut total, part);
    }
    Ok(total)
}

/// Mean cross-entropy `-ln Prob[label]` over the batch.
pub fn loss<S: Borrow<Sample> + Sync>(params: &ModelParams, batch: &[S], cfg: &ModelConfig) -> Result<f64> {
    params.check(cfg)?;
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let total = ordered_sum(
        batch,
        || 0.0,
        |acc, s| {
            *acc += sample_loss(params, s, cfg)?.0;
            Ok(())
        },
        |a, b| *a += b,
    )?;
    Ok(total / batch.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

pub fn evaluate<S: Borrow<Sample> + Sync>(
    params: &ModelParams,
    dataset: &[S],
    cfg: &ModelConfig,
) -> Result<Evaluation> {
    params.check(cfg)?;
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let (loss, correct) = ordered_sum(
        dataset,
        || (0.0, 0usize),
        |acc, s| {
            let (l, hit) = sample_loss(params, s, cfg)?;
            acc.0 += l;
            acc.1 += usize::from(hit);
            Ok(())
        },
        |a, b| {
            a.0 += b.0;
            a.1 += b.1;
        },
    )?;
    let n = dataset.len() as f64;
    Ok(Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
    })
}

/// Adds `scale * d(loss_i)/d(params)` for one sample into `grad`, returns loss_i.
fn accumulate_sample_gradient(
    params: &ModelParams,
    sample: &Sample,
    cfg: &ModelConfig,
    scale: f64,
    grad: &mut ModelParams,
) -> Result<f64> {
    check_sample(sample, cfg)?;
    let f = forward_sample(params, &sample.pixels, cfg)?;
    let loss = cross_entropy(&f.logits, sample.label);
    let mut residual = softmax(&f.logits);
    // prob - 1 for the label, taken from the other classes so it keeps its
    // precision when the prediction is saturated
    residual[sample.label] = 0.0;
    residual[sample.label] = -residual.iter().sum::<f64>();
    let n_qc = f.runs.len() as f64;

    // d loss / d y_{p,k} = c (prob_k - onehot_k) / n_qc
    let weights: Vec<f64> = residual.iter().map(|r| scale * cfg.scale * r / n_qc).collect();

    let features = cfg.patch.features_per_patch();
    for (p, run) in f.runs.into_iter().enumerate() {
        let g = adjoint_gradient(
            &cfg.template,
            params.phi(p),
            &run.encoding,
            run.state,
            &weights,
            &cfg.observables,
        )?;
        for (acc, d) in grad.phi_mut(p).iter_mut().zip(&g.trainable) {
            *acc += d;
        }
        let bias = grad.bias_mut();
        for (slot, d) in g.encoding.iter().enumerate() {
            bias[cfg.patch.pixel_index(p, slot % features)] += d;
        }
    }
    Ok(loss)
}

/// Mean loss together with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub loss: f64,
    pub grad: ModelGradient,
}

/// Exact gradient of [`loss`] with respect to every circuit angle and bias entry.
pub fn gradient<S: Borrow<Sample> + Sync>(
    params: &ModelParams,
    batch: &[S],
    cfg: &ModelConfig,
) -> Result<LossGradient> {
    params.check(cfg)?;
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let layout = params.layout;
    let (loss, grad) = ordered_sum(
        batch,
        || (0.0, ModelParams::zeros(layout)),
        |acc, s| {
            acc.0 += accumulate_sample_gradient(params, s, cfg, scale, &mut acc.1)?;
            Ok(())
        },
        |a, b| {
            a.0 += b.0;
            for (x, y) in a.1.values.iter_mut().zip(&b.1.values) {
                *x += y;
            }
        },
    )?;
    Ok(LossGradient {
        loss: loss * scale,
        grad,
    })
}

pub const CHECKPOINT_FORMAT: &str = "patchqnn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON parameter checkpoint. Floats are written with shortest round-trip
/// formatting, so loading reproduces the parameters bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub n_qubits: usize,
    pub depth: usize,
    pub encoding_cz_per_sequence: bool,
    pub patch: PatchConfig,
    pub seed: u64,
    /// Epoch the parameters were taken after; `None` for the initial point.
    pub epoch: Option<usize>,
    pub config_hash: String,
    pub phis: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &ModelParams,
        n_qubits: usize,
        depth: usize,
        options: AnsatzOptions,
        patch: PatchConfig,
        seed: u64,
        epoch: Option<usize>,
        config_hash: &str,
    ) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            n_qubits,
            depth,
            encoding_cz_per_sequence: options.encoding_cz_per_sequence,
            patch,
            seed,
            epoch,
            config_hash: config_hash.into(),
            phis: (0..params.layout.n_qc).map(|p| params.phi(p).to_vec()).collect(),
            bias: params.bias().to_vec(),
        }
    }

    pub fn params(&self) -> Result<ModelParams> {
        let layout = ParamLayout {
            n_qc: self.patch.n_patches(),
            n_trainable: self.phis.first().map_or(0, Vec::len),
            side: self.patch.side,
        };
        ModelParams::from_parts(layout, &self.phis, &self.bias)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Json {
            context: format!("encoding {}", path.display()),
            source: e,
        })?;
        std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Json {
            context: format!("parsing {}", path.display()),
            source: e,
        })?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Corrupt {
                path: path.to_path_buf(),
                reason: format!("unsupported checkpoint {} v{}", ck.format, ck.version),
            });
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{Gate, Slot};

    /// One qubit, one trainable RY, `P^2` RX encoding gates; observables X0, Z0.
    fn toy(patch: PatchConfig) -> ModelConfig {
        let mut gates = vec![Gate::Ry {
            qubit: 0,
            slot: Slot::Trainable(0),
        }];
        for e in 0..patch.features_per_patch() {
            gates.push(Gate::Rx {
                qubit: 0,
                slot: Slot::Encoding(e),
            });
        }
        let t = CircuitTemplate::new(1, gates).unwrap();
        ModelConfig::new(
            t,
            patch,
            vec![Observable::x(0), Observable::z(0)],
            3.0,
            FeatureBinding::Exact,
        )
        .unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let p = softmax(&[0.0; 10]);
        assert!(p.iter().all(|&x| (x - 0.1).abs() < 1e-15));
    }

    #[test]
    fn softmax_scaled_example() {
        let mut y = [0.0; 10];
        y[0] = 0.1;
        let z: Vec<f64> = y.iter().map(|v| 100.0 * v).collect();
        let p = softmax(&z);
        let e10 = 10f64.exp();
        assert!((p[0] - e10 / (e10 + 9.0)).abs() < 1e-15);
        assert!((p[0] - 0.999_591_5).abs() < 1e-7);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_survives_large_logits() {
        let p = softmax(&[100.0, -100.0, 99.0]);
        assert!(p.iter().all(|x| x.is_finite() && *x > 0.0));
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_keeps_precision_when_saturated() {
        let logits = [40.0, 0.0, 5.0];
        let exact = ((-40.0f64).exp() + (-35.0f64).exp()).ln_1p();
        assert!((cross_entropy(&logits, 0) - exact).abs() <= 1e-15 * exact);
        let wrong = log_sum_exp(&logits) - 5.0;
        assert!((cross_entropy(&logits, 2) - wrong).abs() < 1e-12);
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        let pred = Prediction {
            y_bar: vec![0.0; 10],
            probs: vec![0.1; 10],
        };
        assert_eq!(pred.argmax(), 0);
    }

    #[test]
    fn zero_expectations_give_uniform_loss() {
        // Ry(pi/2) then Rx(0) encodings: <X> = 1, <Z> = 0. Use Z-only readouts
        // on two classes to force y = 0.
        let patch = PatchConfig::new(2, 2, 1).unwrap();
        let mut gates = vec![Gate::Ry {
            qubit: 0,
            slot: Slot::Trainable(0),
        }];
        for e in 0..4 {
            gates.push(Gate::Ry {
                qubit: 0,
                slot: Slot::Encoding(e),
            });
        }
        let t = CircuitTemplate::new(1, gates).unwrap();
        let cfg = ModelConfig::new(
            t,
            patch,
            vec![Observable::z(0), Observable::z(0)],
            100.0,
            FeatureBinding::Exact,
        )
        .unwrap();
        let params = ModelParams::from_flat(cfg.layout(), vec![std::f64::consts::FRAC_PI_2, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let s = Sample {
            pixels: vec![0.0; 4],
            label: 1,
        };
        let pred = forward(&params, &s.pixels, &cfg).unwrap();
        assert!(pred.probs.iter().all(|p| (p - 0.5).abs() < 1e-12));
        let l = loss(&params, &[s.clone()], &cfg).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        let e = evaluate(&params, &[s], &cfg).unwrap();
        assert_eq!(e.accuracy, 0.0);
    }

    #[test]
    fn single_patch_average_is_identity() {
        let patch = PatchConfig::new(2, 2, 1).unwrap();
        let cfg = toy(patch);
        let params = ModelParams::from_flat(cfg.layout(), vec![0.7, 0.1, -0.2, 0.0, 0.3]).unwrap();
        let img = vec![0.1, 0.2, 0.3, 0.4];
        let pred = forward(&params, &img, &cfg).unwrap();
        let encoding: Vec<f64> = img.iter().zip(params.bias()).map(|(a, b)| a + b).collect();
        let s = run_circuit(cfg.template(), params.phi(0), &encoding).unwrap();
        assert_eq!(pred.y_bar, s.expectations(cfg.observables()).unwrap());
    }

    #[test]
    fn duplicated_batch_has_same_loss() {
        let patch = PatchConfig::new(4, 2, 2).unwrap();
        let cfg = toy(patch);
        let mut params = ModelParams::zeros(cfg.layout());
        for (i, v) in params.as_mut_slice().iter_mut().enumerate() {
            *v = 0.1 * i as f64;
        }
        let s = Sample {
            pixels: (0..16).map(|i| 0.05 * i as f64).collect(),
            label: 1,
        };
        let one = loss(&params, &[s.clone()], &cfg).unwrap();
        let two = loss(&params, &[s.clone(), s], &cfg).unwrap();
        assert!((one - two).abs() < 1e-15);
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let patch = PatchConfig::new(4, 2, 2).unwrap();
        let cfg = toy(patch);
        let wrong = ModelParams::zeros(ParamLayout {
            n_qc: 1,
            n_trainable: 1,
            side: 4,
        });
        assert!(forward(&wrong, &[0.0; 16], &cfg).is_err());
        let empty: [Sample; 0] = [];
        assert!(matches!(loss(&ModelParams::zeros(cfg.layout()), &empty, &cfg), Err(Error::Empty(_))));

        let t = crate::ansatz::build_qnn_template(2, 1).unwrap();
        assert!(ModelConfig::new(t.clone(), patch, default_observables(), 100.0, FeatureBinding::Exact).is_err());
        let obs = vec![Observable::x(0), Observable::z(1)];
        assert!(ModelConfig::new(t.clone(), patch, obs.clone(), 100.0, FeatureBinding::Exact).is_err());
        assert!(ModelConfig::new(t, patch, obs, 100.0, FeatureBinding::Cyclic).is_ok());
    }

    #[test]
    fn reference_config_requires_64_features() {
        let p = PatchConfig::new(14, 8, 6).unwrap();
        assert!(ModelConfig::standard(8, 1, p, AnsatzOptions::default()).is_ok());
        let small = PatchConfig::new(14, 7, 7).unwrap();
        assert!(ModelConfig::standard(8, 1, small, AnsatzOptions::default()).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let patch = PatchConfig::new(4, 2, 2).unwrap();
        let cfg = toy(patch);
        let mut params = ModelParams::zeros(cfg.layout());
        for (i, v) in params.as_mut_slice().iter_mut().enumerate() {
            *v = (i as f64).sqrt() * 0.123_456_789;
        }
        let ck = Checkpoint::new(&params, 1, 1, AnsatzOptions::default(), patch, 9, Some(3), "abc");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.params().unwrap(), params);
    }
}
