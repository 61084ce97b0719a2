#![allow(dead_code)]

use patchqnn::ansatz::{build_qnn_template, CircuitTemplate};
use patchqnn::data::{PatchConfig, Sample};
use patchqnn::model::{FeatureBinding, ModelConfig, ModelParams, DEFAULT_SCALE};
use patchqnn::simulator::{Gate, Observable, Slot};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// X and Z on every qubit: `2n` classes.
pub fn all_observables(n: usize) -> Vec<Observable> {
    (0..n).map(Observable::x).chain((0..n).map(Observable::z)).collect()
}

/// A small model over `side x side` images with cyclic feature binding.
pub fn tiny_model(n: usize, depth: usize, side: usize, patch: usize, stride: usize) -> ModelConfig {
    ModelConfig::new(
        build_qnn_template(n, depth).unwrap(),
        PatchConfig::new(side, patch, stride).unwrap(),
        all_observables(n),
        DEFAULT_SCALE,
        FeatureBinding::Cyclic,
    )
    .unwrap()
}

pub fn random_samples(r: &mut impl Rng, count: usize, side: usize, n_class: usize) -> Vec<Sample> {
    (0..count)
        .map(|_| Sample {
            pixels: (0..side * side).map(|_| r.random_range(0.0..std::f64::consts::FRAC_PI_4)).collect(),
            label: r.random_range(0..n_class),
        })
        .collect()
}

pub fn random_params(r: &mut impl Rng, cfg: &ModelConfig) -> ModelParams {
    let mut p = ModelParams::zeros(cfg.layout());
    for a in p.angles_mut() {
        *a = r.random_range(0.0..std::f64::consts::PI);
    }
    for b in p.bias_mut() {
        *b = r.random_range(-0.3..0.3);
    }
    p
}

/// Random gate list with dense slot numbering.
pub fn random_template(r: &mut impl Rng, n: usize, n_gates: usize) -> CircuitTemplate {
    let (mut t, mut e) = (0, 0);
    let mut gates = Vec::with_capacity(n_gates);
    for _ in 0..n_gates {
        let kind = if n >= 2 { r.random_range(0..3) } else { r.random_range(0..2) };
        let qubit = r.random_range(0..n);
        let slot = if r.random_bool(0.3) {
            e += 1;
            Slot::Encoding(e - 1)
        } else {
            t += 1;
            Slot::Trainable(t - 1)
        };
        match kind {
            0 => gates.push(Gate::Ry { qubit, slot }),
            1 => gates.push(Gate::Rx { qubit, slot }),
            _ => {
                // undo the slot reservation; CZ takes no angle
                match slot {
                    Slot::Encoding(_) => e -= 1,
                    Slot::Trainable(_) => t -= 1,
                }
                let other = (qubit + r.random_range(1..n)) % n;
                gates.push(Gate::Cz {
                    control: qubit,
                    target: other,
                });
            }
        }
    }
    CircuitTemplate::new(n, gates).unwrap()
}

pub fn random_angles(r: &mut impl Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| r.random_range(-std::f64::consts::PI..std::f64::consts::PI)).collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&d) / norm(a).max(norm(b)).max(1e-300)
}
