//! Distributed patch-based quantum neural networks.
//!
//! An image is cut into overlapping `P x P` patches, each patch is fed to its
//! own small variational circuit, and the circuits' Pauli expectation vectors
//! are averaged and pushed through a scaled softmax. The crate contains the
//! dense statevector simulator that evaluates those circuits, the
//! hardware-efficient ansatz, MNIST preprocessing, the classifier with exact
//! gradients, Adam with cosine annealing, a reproducible training loop, and
//! the two loss-landscape probes: PCA projections of the parameter trajectory
//! and the largest Hessian eigenvalue at the minimum.
//!
//! Qubit ordering is little-endian throughout: qubit `q` is bit `q` of the
//! amplitude index.

pub mod ansatz;
pub mod data;
pub mod error;
pub mod hessian;
pub mod landscape;
pub mod model;
pub mod optim;
pub mod simulator;
pub mod trainer;

pub use error::{Error, Result};
