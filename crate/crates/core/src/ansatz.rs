//! Hardware-efficient ansatz used by every patch circuit.
//!
//! Layout for depth `d` on `n` qubits:
//!
//! ```text
//! [E] x d, Enc, [E] x d, Enc, [E] x d      (the very last E has no CZ ring)
//! E   = RX(train) layer, RY(train) layer, CZ ring
//! Enc = 2 x [RY(t) RX(enc) RY(t) RX(t) RY(enc) RX(t)], CZ ring
//! ```
//!
//! That gives `6dn + 16n` trainable slots and `8n` encoding slots. Slots are
//! numbered in circuit order, layer-major with qubits ascending inside a layer.

use serde::{Deserialize, Serialize};

use crate::simulator::{Gate, Slot};
use crate::{Error, Result};

/// An ordered gate program with labelled angle slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitTemplate {
    n_qubits: usize,
    gates: Vec<Gate>,
    n_trainable: usize,
    n_encoding: usize,
}

impl CircuitTemplate {
    /// Validates qubit ranges and that each slot family is exactly `0..count`
    /// with every index used once.
    pub fn new(n_qubits: usize, gates: Vec<Gate>) -> Result<Self> {
        if n_qubits == 0 {
            return Err(Error::InvalidTemplate("zero qubits".into()));
        }
        let mut trainable = Vec::new();
        let mut encoding = Vec::new();
        for gate in &gates {
            gate.check(n_qubits)?;
            match gate.slot() {
                Some(Slot::Trainable(i)) => trainable.push(i),
                Some(Slot::Encoding(i)) => encoding.push(i),
                None => {}
            }
        }
        let n_trainable = check_dense("trainable", trainable)?;
        let n_encoding = check_dense("encoding", encoding)?;
        Ok(CircuitTemplate {
            n_qubits,
            gates,
            n_trainable,
            n_encoding,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn n_trainable(&self) -> usize {
        self.n_trainable
    }

    pub fn n_encoding(&self) -> usize {
        self.n_encoding
    }

    pub fn n_cz(&self) -> usize {
        self.gates
            .iter()
            .filter(|g| matches!(g, Gate::Cz { .. }))
            .count()
    }
}

fn check_dense(kind: &str, mut indices: Vec<usize>) -> Result<usize> {
    indices.sort_unstable();
    for (expected, &found) in indices.iter().enumerate() {
        if found != expected {
            return Err(Error::InvalidTemplate(format!(
                "{kind} slots are not a permutation of 0..{}: index {found} at rank {expected}",
                indices.len()
            )));
        }
    }
    Ok(indices.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AnsatzOptions {
    /// Put a CZ ring after each of the two rotation sequences of an encoding
    /// block instead of a single ring after both.
    pub encoding_cz_per_sequence: bool,
}

/// CZ between `i` and `(i + 1) mod n`, wraparound duplicates removed.
pub fn cz_ring(n: usize) -> Vec<Gate> {
    match n {
        0 | 1 => Vec::new(),
        2 => vec![Gate::Cz {
            control: 0,
            target: 1,
        }],
        _ => (0..n)
            .map(|i| Gate::Cz {
                control: i,
                target: (i + 1) % n,
            })
            .collect(),
    }
}

#[derive(Clone, Copy)]
enum Layer {
    Ry,
    Rx,
}

#[derive(Clone, Copy)]
enum Source {
    Train,
    Encode,
}

struct SlotCursor {
    trainable: usize,
    encoding: usize,
}

impl SlotCursor {
    fn layer(&mut self, out: &mut Vec<Gate>, n: usize, layer: Layer, source: Source) {
        for qubit in 0..n {
            let slot = match source {
                Source::Train => {
                    self.trainable += 1;
                    Slot::Trainable(self.trainable - 1)
                }
                Source::Encode => {
                    self.encoding += 1;
                    Slot::Encoding(self.encoding - 1)
                }
            };
            out.push(match layer {
                Layer::Ry => Gate::Ry { qubit, slot },
                Layer::Rx => Gate::Rx { qubit, slot },
            });
        }
    }
}

const ENCODING_SEQUENCE: [(Layer, Source); 6] = [
    (Layer::Ry, Source::Train),
    (Layer::Rx, Source::Encode),
    (Layer::Ry, Source::Train),
    (Layer::Rx, Source::Train),
    (Layer::Ry, Source::Encode),
    (Layer::Rx, Source::Train),
];

fn check_width(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::InvalidArgument("ansatz needs at least one qubit".into()))
    } else {
        Ok(())
    }
}

/// Data encoding block. Uses `8n` trainable and `4n` encoding slots starting
/// at the given offsets.
pub fn build_encoding_block(
    n: usize,
    first_trainable: usize,
    first_encoding: usize,
    options: AnsatzOptions,
) -> Result<Vec<Gate>> {
    check_width(n)?;
    let mut cursor = SlotCursor {
        trainable: first_trainable,
        encoding: first_encoding,
    };
    let mut gates = Vec::with_capacity(12 * n + 2 * n);
    for _ in 0..2 {
        for &(layer, source) in &ENCODING_SEQUENCE {
            cursor.layer(&mut gates, n, layer, source);
        }
        if options.encoding_cz_per_sequence {
            gates.extend(cz_ring(n));
        }
    }
    if !options.encoding_cz_per_sequence {
        gates.extend(cz_ring(n));
    }
    Ok(gates)
}

/// Entangling block: trainable RX layer, trainable RY layer, optional CZ ring.
pub fn build_entangling_block(n: usize, first_trainable: usize, include_cz: bool) -> Result<Vec<Gate>> {
    check_width(n)?;
    let mut cursor = SlotCursor {
        trainable: first_trainable,
        encoding: 0,
    };
    let mut gates = Vec::with_capacity(3 * n);
    cursor.layer(&mut gates, n, Layer::Rx, Source::Train);
    cursor.layer(&mut gates, n, Layer::Ry, Source::Train);
    if include_cz {
        gates.extend(cz_ring(n));
    }
    Ok(gates)
}

pub fn build_qnn_template(n: usize, depth: usize) -> Result<CircuitTemplate> {
    build_qnn_template_with(n, depth, AnsatzOptions::default())
}

pub fn build_qnn_template_with(
    n: usize,
    depth: usize,
    options: AnsatzOptions,
) -> Result<CircuitTemplate> {
    check_width(n)?;
    if depth == 0 {
        return Err(Error::InvalidArgument("ansatz depth must be at least 1".into()));
    }
    let mut gates = Vec::new();
    let mut trainable = 0;
    let mut encoding = 0;
    for stage in 0..3 {
        for block in 0..depth {
            let last = stage == 2 && block + 1 == depth;
            gates.extend(build_entangling_block(n, trainable, !last)?);
            trainable += 2 * n;
        }
        if stage < 2 {
            gates.extend(build_encoding_block(n, trainable, encoding, options)?);
            trainable += 8 * n;
            encoding += 4 * n;
        }
    }
    CircuitTemplate::new(n, gates)
}

/// Trainable angles per circuit: `6dn + 16n`.
pub fn trainable_count(n: usize, depth: usize) -> usize {
    6 * depth * n + 16 * n
}

pub fn encoding_count(n: usize) -> usize {
    8 * n
}
