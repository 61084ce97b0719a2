//! Dense statevector simulation for circuits built from `R_y`, `R_x` and `CZ`.
//!
//! Rotations follow `R_y(t) = exp(-i t Y / 2)` and `R_x(t) = exp(-i t X / 2)`.
//! Amplitude index bit `q` holds qubit `q` (little-endian), so `|10...0>`
//! with qubit 0 excited is amplitude index 1.
//!
//! Gradients of weighted observable sums are computed in adjoint mode: one
//! forward sweep, then a single backward sweep that carries both the state
//! and the observable-weighted co-state. [`parameter_shift_gradient`] gives
//! an independent route for cross-checking.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ansatz::CircuitTemplate;
use crate::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Where a rotation gets its angle from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Slot {
    Trainable(usize),
    Encoding(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gate {
    Ry { qubit: usize, slot: Slot },
    Rx { qubit: usize, slot: Slot },
    Cz { control: usize, target: usize },
}

impl Gate {
    pub fn slot(&self) -> Option<Slot> {
        match *self {
            Gate::Ry { slot, .. } | Gate::Rx { slot, .. } => Some(slot),
            Gate::Cz { .. } => None,
        }
    }

    pub(crate) fn check(&self, n_qubits: usize) -> Result<()> {
        let in_range = |qubit: usize| {
            if qubit < n_qubits {
                Ok(())
            } else {
                Err(Error::QubitOutOfRange { qubit, n_qubits })
            }
        };
        match *self {
            Gate::Ry { qubit, .. } | Gate::Rx { qubit, .. } => in_range(qubit),
            Gate::Cz { control, target } => {
                in_range(control)?;
                in_range(target)?;
                if control == target {
                    return Err(Error::RepeatedQubit(control));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Z,
}

/// Single-qubit Pauli observable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observable {
    pub axis: Axis,
    pub qubit: usize,
}

impl Observable {
    pub fn x(qubit: usize) -> Self {
        Observable {
            axis: Axis::X,
            qubit,
        }
    }

    pub fn z(qubit: usize) -> Self {
        Observable {
            axis: Axis::Z,
            qubit,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    /// `|0...0>` on `n_qubits` qubits.
    pub fn zero(n_qubits: usize) -> Result<Self> {
        if n_qubits == 0 || n_qubits > 30 {
            return Err(Error::InvalidArgument(format!(
                "register size {n_qubits} not supported"
            )));
        }
        let mut amplitudes = vec![ZERO; 1 << n_qubits];
        amplitudes[0] = ONE;
        Ok(StateVector {
            n_qubits,
            amplitudes,
        })
    }

    pub fn from_amplitudes(n_qubits: usize, amplitudes: Vec<Complex64>) -> Result<Self> {
        if n_qubits == 0 || n_qubits > 30 {
            return Err(Error::InvalidArgument(format!(
                "register size {n_qubits} not supported"
            )));
        }
        if amplitudes.len() != 1 << n_qubits {
            return Err(Error::LengthMismatch {
                what: "amplitude vector",
                expected: 1 << n_qubits,
                actual: amplitudes.len(),
            });
        }
        Ok(StateVector {
            n_qubits,
            amplitudes,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Applies `gate`; `angle` must be given exactly when the gate is a rotation.
    pub fn apply_gate(&mut self, gate: &Gate, angle: Option<f64>) -> Result<()> {
        gate.check(self.n_qubits)?;
        match (*gate, angle) {
            (Gate::Ry { qubit, .. }, Some(theta)) => {
                check_angle(theta)?;
                apply_ry(&mut self.amplitudes, qubit, theta);
            }
            (Gate::Rx { qubit, .. }, Some(theta)) => {
                check_angle(theta)?;
                apply_rx(&mut self.amplitudes, qubit, theta);
            }
            (Gate::Cz { control, target }, None) => apply_cz(&mut self.amplitudes, control, target),
            (Gate::Cz { .. }, Some(_)) => return Err(Error::AngleMismatch("CZ takes no angle")),
            (_, None) => return Err(Error::AngleMismatch("rotation gate needs an angle")),
        }
        Ok(())
    }

    /// `<psi|O|psi>`.
    pub fn expectation(&self, obs: &Observable) -> Result<f64> {
        if obs.qubit >= self.n_qubits {
            return Err(Error::QubitOutOfRange {
                qubit: obs.qubit,
                n_qubits: self.n_qubits,
            });
        }
        Ok(expectation_unchecked(&self.amplitudes, obs))
    }

    pub fn expectations(&self, observables: &[Observable]) -> Result<Vec<f64>> {
        observables.iter().map(|o| self.expectation(o)).collect()
    }
}

fn check_angle(theta: f64) -> Result<()> {
    if theta.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteAngle(theta))
    }
}

/// Visits every amplitude pair `(i, i | 1 << qubit)` with bit `qubit` of `i` clear.
#[inline]
fn for_pairs(amps: &mut [Complex64], qubit: usize, mut f: impl FnMut(&mut Complex64, &mut Complex64)) {
    let stride = 1 << qubit;
    for block in amps.chunks_exact_mut(stride << 1) {
        let (lo, hi) = block.split_at_mut(stride);
        for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
            f(a, b);
        }
    }
}

#[inline]
fn fold_pairs<T>(
    lhs: &[Complex64],
    rhs: &[Complex64],
    qubit: usize,
    init: T,
    mut f: impl FnMut(T, (Complex64, Complex64), (Complex64, Complex64)) -> T,
) -> T {
    let stride = 1 << qubit;
    let mut acc = init;
    for (lb, rb) in lhs.chunks_exact(stride << 1).zip(rhs.chunks_exact(stride << 1)) {
        let (llo, lhi) = lb.split_at(stride);
        let (rlo, rhi) = rb.split_at(stride);
        for i in 0..stride {
            acc = f(acc, (llo[i], lhi[i]), (rlo[i], rhi[i]));
        }
    }
    acc
}

fn apply_ry(amps: &mut [Complex64], qubit: usize, theta: f64) {
    let (s, c) = (theta * 0.5).sin_cos();
    for_pairs(amps, qubit, |a, b| {
        let (x, y) = (*a, *b);
        *a = x * c - y * s;
        *b = x * s + y * c;
    });
}

fn apply_rx(amps: &mut [Complex64], qubit: usize, theta: f64) {
    let (s, c) = (theta * 0.5).sin_cos();
    for_pairs(amps, qubit, |a, b| {
        let (x, y) = (*a, *b);
        // -i s y  and  -i s x
        *a = Complex64::new(x.re * c + y.im * s, x.im * c - y.re * s);
        *b = Complex64::new(y.re * c + x.im * s, y.im * c - x.re * s);
    });
}

fn apply_cz(amps: &mut [Complex64], control: usize, target: usize) {
    let mask = (1 << control) | (1 << target);
    for (i, a) in amps.iter_mut().enumerate() {
        if i & mask == mask {
            *a = -*a;
        }
    }
}

fn expectation_unchecked(amps: &[Complex64], obs: &Observable) -> f64 {
    match obs.axis {
        Axis::Z => {
            let bit = 1 << obs.qubit;
            amps.iter()
                .enumerate()
                .map(|(i, a)| if i & bit == 0 { a.norm_sqr() } else { -a.norm_sqr() })
                .sum()
        }
        Axis::X => fold_pairs(amps, amps, obs.qubit, 0.0, |acc, (a, b), _| {
            acc + 2.0 * (a.re * b.re + a.im * b.im)
        }),
    }
}

/// Adds `weight * O |psi>` into `out`.
fn accumulate_observable(out: &mut [Complex64], amps: &[Complex64], obs: &Observable, weight: f64) {
    let bit = 1 << obs.qubit;
    match obs.axis {
        Axis::Z => {
            for (i, (o, a)) in out.iter_mut().zip(amps).enumerate() {
                if i & bit == 0 {
                    *o += a * weight;
                } else {
                    *o -= a * weight;
                }
            }
        }
        Axis::X => {
            for (i, o) in out.iter_mut().enumerate() {
                *o += amps[i ^ bit] * weight;
            }
        }
    }
}

fn bind_angle(slot: Slot, trainable: &[f64], encoding: &[f64]) -> f64 {
    match slot {
        Slot::Trainable(i) => trainable[i],
        Slot::Encoding(i) => encoding[i],
    }
}

fn check_angles(template: &CircuitTemplate, trainable: &[f64], encoding: &[f64]) -> Result<()> {
    if trainable.len() != template.n_trainable() {
        return Err(Error::LengthMismatch {
            what: "trainable angles",
            expected: template.n_trainable(),
            actual: trainable.len(),
        });
    }
    if encoding.len() != template.n_encoding() {
        return Err(Error::LengthMismatch {
            what: "encoding angles",
            expected: template.n_encoding(),
            actual: encoding.len(),
        });
    }
    if let Some(&bad) = trainable.iter().chain(encoding).find(|a| !a.is_finite()) {
        return Err(Error::NonFiniteAngle(bad));
    }
    Ok(())
}

/// Prepares `U(angles) |0...0>`.
pub fn run_circuit(
    template: &CircuitTemplate,
    trainable: &[f64],
    encoding: &[f64],
) -> Result<StateVector> {
    check_angles(template, trainable, encoding)?;
    let mut state = StateVector::zero(template.n_qubits())?;
    let amps = &mut state.amplitudes;
    for gate in template.gates() {
        match *gate {
            Gate::Ry { qubit, slot } => apply_ry(amps, qubit, bind_angle(slot, trainable, encoding)),
            Gate::Rx { qubit, slot } => apply_rx(amps, qubit, bind_angle(slot, trainable, encoding)),
            Gate::Cz { control, target } => apply_cz(amps, control, target),
        }
    }
    Ok(state)
}

/// Derivatives of a scalar objective with respect to every rotation slot.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleGradient {
    pub trainable: Vec<f64>,
    pub encoding: Vec<f64>,
}

fn check_weights(n_qubits: usize, weights: &[f64], observables: &[Observable]) -> Result<()> {
    if weights.len() != observables.len() {
        return Err(Error::LengthMismatch {
            what: "observable weights",
            expected: observables.len(),
            actual: weights.len(),
        });
    }
    if let Some(o) = observables.iter().find(|o| o.qubit >= n_qubits) {
        return Err(Error::QubitOutOfRange {
            qubit: o.qubit,
            n_qubits,
        });
    }
    Ok(())
}

/// Gradient of `sum_k weights[k] <O_k>` by adjoint differentiation.
pub fn gradient(
    template: &CircuitTemplate,
    trainable: &[f64],
    encoding: &[f64],
    weights: &[f64],
    observables: &[Observable],
) -> Result<AngleGradient> {
    let state = run_circuit(template, trainable, encoding)?;
    adjoint_gradient(template, trainable, encoding, state, weights, observables)
}

/// Backward sweep of adjoint differentiation, starting from the already
/// prepared output state of `template` at these angles.
///
/// With `phi` the state and `lam = H phi` the co-state (both taken right
/// after gate `j`), `d<H>/dtheta_j = Im <lam| G_j |phi>` where `G_j` is the
/// rotation's Pauli generator. Both vectors are then rewound through `U_j^dag`.
pub fn adjoint_gradient(
    template: &CircuitTemplate,
    trainable: &[f64],
    encoding: &[f64],
    final_state: StateVector,
    weights: &[f64],
    observables: &[Observable],
) -> Result<AngleGradient> {
    check_angles(template, trainable, encoding)?;
    check_weights(template.n_qubits(), weights, observables)?;
    if final_state.n_qubits != template.n_qubits() {
        return Err(Error::LengthMismatch {
            what: "final state qubits",
            expected: template.n_qubits(),
            actual: final_state.n_qubits,
        });
    }

    let mut grad = AngleGradient {
        trainable: vec![0.0; trainable.len()],
        encoding: vec![0.0; encoding.len()],
    };
    if weights.iter().all(|&w| w == 0.0) {
        return Ok(grad);
    }

    let mut phi = final_state.amplitudes;
    let mut lam = vec![ZERO; phi.len()];
    for (obs, &w) in observables.iter().zip(weights) {
        if w != 0.0 {
            accumulate_observable(&mut lam, &phi, obs, w);
        }
    }

    for gate in template.gates().iter().rev() {
        match *gate {
            Gate::Ry { qubit, slot } => {
                // <lam| Y |phi> restricted to a pair: conj(l0)(-i p1) + conj(l1)(i p0)
                let im = fold_pairs(&lam, &phi, qubit, 0.0, |acc, (l0, l1), (p0, p1)| {
                    let z = l0.conj() * p1 * Complex64::new(0.0, -1.0)
                        + l1.conj() * p0 * Complex64::new(0.0, 1.0);
                    acc + z.im
                });
                store(&mut grad, slot, im);
                let theta = bind_angle(slot, trainable, encoding);
                apply_ry(&mut phi, qubit, -theta);
                apply_ry(&mut lam, qubit, -theta);
            }
            Gate::Rx { qubit, slot } => {
                let im = fold_pairs(&lam, &phi, qubit, 0.0, |acc, (l0, l1), (p0, p1)| {
                    let z = l0.conj() * p1 + l1.conj() * p0;
                    acc + z.im
                });
                store(&mut grad, slot, im);
                let theta = bind_angle(slot, trainable, encoding);
                apply_rx(&mut phi, qubit, -theta);
                apply_rx(&mut lam, qubit, -theta);
            }
            Gate::Cz { control, target } => {
                apply_cz(&mut phi, control, target);
                apply_cz(&mut lam, control, target);
            }
        }
    }
    Ok(grad)
}

fn store(grad: &mut AngleGradient, slot: Slot, value: f64) {
    match slot {
        Slot::Trainable(i) => grad.trainable[i] += value,
        Slot::Encoding(i) => grad.encoding[i] += value,
    }
}

/// Weighted objective `sum_k w_k <O_k>` evaluated by a fresh forward pass.
pub fn weighted_expectation(
    template: &CircuitTemplate,
    trainable: &[f64],
    encoding: &[f64],
    weights: &[f64],
    observables: &[Observable],
) -> Result<f64> {
    check_weights(template.n_qubits(), weights, observables)?;
    let state = run_circuit(template, trainable, encoding)?;
    Ok(observables
        .iter()
        .zip(weights)
        .map(|(o, w)| w * expectation_unchecked(&state.amplitudes, o))
        .sum())
}

/// Same quantity as [`gradient`] via the two-term shift rule
/// `(f(t + pi/2) - f(t - pi/2)) / 2`, valid because every slot drives exactly
/// one Pauli rotation. Costs two forward passes per slot.
pub fn parameter_shift_gradient(
    template: &CircuitTemplate,
    trainable: &[f64],
    encoding: &[f64],
    weights: &[f64],
    observables: &[Observable],
) -> Result<AngleGradient> {
    check_angles(template, trainable, encoding)?;
    let shift = std::f64::consts::FRAC_PI_2;
    let mut t = trainable.to_vec();
    let mut e = encoding.to_vec();
    let mut out = AngleGradient {
        trainable: vec![0.0; trainable.len()],
        encoding: vec![0.0; encoding.len()],
    };
    for i in 0..t.len() {
        let orig = t[i];
        t[i] = orig + shift;
        let plus = weighted_expectation(template, &t, &e, weights, observables)?;
        t[i] = orig - shift;
        let minus = weighted_expectation(template, &t, &e, weights, observables)?;
        t[i] = orig;
        out.trainable[i] = 0.5 * (plus - minus);
    }
    for i in 0..e.len() {
        let orig = e[i];
        e[i] = orig + shift;
        let plus = weighted_expectation(template, &t, &e, weights, observables)?;
        e[i] = orig - shift;
        let minus = weighted_expectation(template, &t, &e, weights, observables)?;
        e[i] = orig;
        out.encoding[i] = 0.5 * (plus - minus);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn ry(qubit: usize, i: usize) -> Gate {
        Gate::Ry {
            qubit,
            slot: Slot::Trainable(i),
        }
    }

    fn close(a: Complex64, b: Complex64) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn ry_pi_flips_zero() {
        let mut s = StateVector::zero(1).unwrap();
        s.apply_gate(&ry(0, 0), Some(PI)).unwrap();
        assert!(close(s.amplitudes()[0], ZERO));
        assert!(close(s.amplitudes()[1], ONE));
    }

    #[test]
    fn rx_zero_is_identity() {
        let mut s = StateVector::zero(2).unwrap();
        s.apply_gate(&ry(1, 0), Some(0.7)).unwrap();
        let before = s.clone();
        let rx = Gate::Rx {
            qubit: 0,
            slot: Slot::Trainable(0),
        };
        s.apply_gate(&rx, Some(0.0)).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn cz_phases_11() {
        let mut amps = vec![ZERO; 4];
        amps[3] = ONE;
        let mut s = StateVector::from_amplitudes(2, amps).unwrap();
        s.apply_gate(&Gate::Cz { control: 0, target: 1 }, None).unwrap();
        assert!(close(s.amplitudes()[3], -ONE));
    }

    #[test]
    fn rx_matches_matrix() {
        // R_x(t) = [[c, -is], [-is, c]]
        let t = 1.234_f64;
        let (s, c) = (t / 2.0).sin_cos();
        let a = Complex64::new(0.6, 0.1);
        let b = Complex64::new(-0.2, 0.7);
        let mut amps = vec![a, b];
        apply_rx(&mut amps, 0, t);
        let i = Complex64::new(0.0, 1.0);
        assert!(close(amps[0], a * c - i * s * b));
        assert!(close(amps[1], -i * s * a + b * c));
    }

    #[test]
    fn expectation_examples() {
        let s = StateVector::zero(1).unwrap();
        assert_eq!(s.expectation(&Observable::z(0)).unwrap(), 1.0);
        assert_eq!(s.expectation(&Observable::x(0)).unwrap(), 0.0);
        let mut plus = StateVector::zero(1).unwrap();
        plus.apply_gate(&ry(0, 0), Some(FRAC_PI_2)).unwrap();
        assert!((plus.expectation(&Observable::x(0)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn errors_are_reported() {
        let mut s = StateVector::zero(2).unwrap();
        assert!(matches!(
            s.apply_gate(&ry(2, 0), Some(0.1)),
            Err(Error::QubitOutOfRange { qubit: 2, .. })
        ));
        assert!(matches!(
            s.apply_gate(&ry(0, 0), Some(f64::NAN)),
            Err(Error::NonFiniteAngle(_))
        ));
        assert!(matches!(
            s.apply_gate(&ry(0, 0), None),
            Err(Error::AngleMismatch(_))
        ));
        assert!(matches!(
            s.apply_gate(&Gate::Cz { control: 1, target: 1 }, None),
            Err(Error::RepeatedQubit(1))
        ));
        assert!(s.expectation(&Observable::x(5)).is_err());
    }

    #[test]
    fn run_circuit_examples() {
        let empty = CircuitTemplate::new(2, vec![]).unwrap();
        let s = run_circuit(&empty, &[], &[]).unwrap();
        assert_eq!(s.amplitudes()[0], ONE);
        assert!(s.amplitudes()[1..].iter().all(|a| *a == ZERO));

        let one = CircuitTemplate::new(3, vec![ry(0, 0)]).unwrap();
        let s = run_circuit(&one, &[PI], &[]).unwrap();
        assert!(close(s.amplitudes()[1], ONE));

        assert!(matches!(
            run_circuit(&one, &[PI, 0.0], &[]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn single_rotation_gradient() {
        let t = CircuitTemplate::new(1, vec![ry(0, 0)]).unwrap();
        let g = gradient(&t, &[FRAC_PI_2], &[], &[1.0], &[Observable::z(0)]).unwrap();
        assert!((g.trainable[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_give_zero_gradient() {
        let gates = vec![
            ry(0, 0),
            Gate::Rx {
                qubit: 1,
                slot: Slot::Encoding(0),
            },
            Gate::Cz { control: 0, target: 1 },
        ];
        let t = CircuitTemplate::new(2, gates).unwrap();
        let obs = [Observable::x(0), Observable::z(1)];
        let g = gradient(&t, &[0.3], &[1.1], &[0.0, 0.0], &obs).unwrap();
        assert_eq!(g.trainable, vec![0.0]);
        assert_eq!(g.encoding, vec![0.0]);
        assert!(gradient(&t, &[0.3], &[1.1], &[1.0], &obs).is_err());
    }
}
