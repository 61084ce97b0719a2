//! Slow, obviously-correct reference implementations for the test suites:
//! full-matrix circuit simulation, finite-difference derivatives, and a
//! Jacobi eigensolver for dense symmetric matrices.
//!
//! Nothing here shares code with the fast paths it checks.

use num_complex::Complex64;
use patchqnn::ansatz::CircuitTemplate;
use patchqnn::simulator::{Gate, Slot};

pub const MAX_DENSE_QUBITS: usize = 6;
pub const MAX_DENSE_HESSIAN_DIM: usize = 100;

/// Row-major `2^n x 2^n` complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseUnitary {
    pub dim: usize,
    pub data: Vec<Complex64>,
}

impl DenseUnitary {
    pub fn identity(dim: usize) -> Self {
        let mut data = vec![Complex64::new(0.0, 0.0); dim * dim];
        for i in 0..dim {
            data[i * dim + i] = Complex64::new(1.0, 0.0);
        }
        DenseUnitary { dim, data }
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.dim + c]
    }

    pub fn mul(&self, other: &DenseUnitary) -> DenseUnitary {
        let n = self.dim;
        let mut data = vec![Complex64::new(0.0, 0.0); n * n];
        for r in 0..n {
            for k in 0..n {
                let a = self.get(r, k);
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for c in 0..n {
                    data[r * n + c] += a * other.get(k, c);
                }
            }
        }
        DenseUnitary { dim: n, data }
    }

    pub fn kron(&self, other: &DenseUnitary) -> DenseUnitary {
        let (a, b) = (self.dim, other.dim);
        let n = a * b;
        let mut data = vec![Complex64::new(0.0, 0.0); n * n];
        for r1 in 0..a {
            for c1 in 0..a {
                for r2 in 0..b {
                    for c2 in 0..b {
                        data[(r1 * b + r2) * n + c1 * b + c2] = self.get(r1, c1) * other.get(r2, c2);
                    }
                }
            }
        }
        DenseUnitary { dim: n, data }
    }

    /// Largest entry of `|U^dag U - I|`.
    pub fn unitarity_defect(&self) -> f64 {
        let n = self.dim;
        let mut worst: f64 = 0.0;
        for r in 0..n {
            for c in 0..n {
                let mut s = Complex64::new(0.0, 0.0);
                for k in 0..n {
                    s += self.get(k, r).conj() * self.get(k, c);
                }
                let target = if r == c { 1.0 } else { 0.0 };
                worst = worst.max((s - target).norm());
            }
        }
        worst
    }

    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..self.dim)
            .map(|r| (0..self.dim).map(|c| self.get(r, c) * v[c]).sum())
            .collect()
    }
}

fn two_by_two(m: [[Complex64; 2]; 2]) -> DenseUnitary {
    DenseUnitary {
        dim: 2,
        data: vec![m[0][0], m[0][1], m[1][0], m[1][1]],
    }
}

/// `cos(t/2) I - i sin(t/2) P`, written out entry by entry.
pub fn rotation_matrix(pauli_x: bool, theta: f64) -> DenseUnitary {
    let c = Complex64::new((theta / 2.0).cos(), 0.0);
    let s = (theta / 2.0).sin();
    if pauli_x {
        let off = Complex64::new(0.0, -s);
        two_by_two([[c, off], [off, c]])
    } else {
        two_by_two([[c, Complex64::new(-s, 0.0)], [Complex64::new(s, 0.0), c]])
    }
}

/// Embeds a one-qubit matrix as `I (x) ... (x) g (x) ... (x) I` with qubit 0
/// as the rightmost (least significant) factor.
pub fn embed(n: usize, qubit: usize, g: &DenseUnitary) -> DenseUnitary {
    let id = DenseUnitary::identity(2);
    let mut out = DenseUnitary::identity(1);
    for q in (0..n).rev() {
        out = out.kron(if q == qubit { g } else { &id });
    }
    out
}

pub fn cz_matrix(n: usize, a: usize, b: usize) -> DenseUnitary {
    let mut u = DenseUnitary::identity(1 << n);
    for i in 0..1 << n {
        if (i >> a) & 1 == 1 && (i >> b) & 1 == 1 {
            u.data[i * (1 << n) + i] = Complex64::new(-1.0, 0.0);
        }
    }
    u
}

pub fn circuit_unitary(template: &CircuitTemplate, trainable: &[f64], encoding: &[f64]) -> DenseUnitary {
    let n = template.n_qubits();
    assert!(n <= MAX_DENSE_QUBITS, "dense oracle limited to {MAX_DENSE_QUBITS} qubits");
    let angle = |slot: Slot| match slot {
        Slot::Trainable(i) => trainable[i],
        Slot::Encoding(i) => encoding[i],
    };
    let mut u = DenseUnitary::identity(1 << n);
    for gate in template.gates() {
        let g = match *gate {
            Gate::Ry { qubit, slot } => embed(n, qubit, &rotation_matrix(false, angle(slot))),
            Gate::Rx { qubit, slot } => embed(n, qubit, &rotation_matrix(true, angle(slot))),
            Gate::Cz { control, target } => cz_matrix(n, control, target),
        };
        u = g.mul(&u);
    }
    u
}

/// `U |0...0>` by explicit matrix products.
pub fn simulate_dense(template: &CircuitTemplate, trainable: &[f64], encoding: &[f64]) -> Vec<Complex64> {
    let u = circuit_unitary(template, trainable, encoding);
    let mut e0 = vec![Complex64::new(0.0, 0.0); u.dim];
    e0[0] = Complex64::new(1.0, 0.0);
    u.apply(&e0)
}

/// Central differences per coordinate.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    assert!(step > 0.0);
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + step;
            let plus = f(&y);
            y[i] = x[i] - step;
            let minus = f(&y);
            y[i] = x[i];
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Symmetrized Hessian from second differences of function values.
pub fn dense_hessian(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    assert!(n <= MAX_DENSE_HESSIAN_DIM, "dense Hessian limited to {MAX_DENSE_HESSIAN_DIM} dims");
    let mut h = vec![vec![0.0; n]; n];
    let mut y = x.to_vec();
    let f0 = f(x);
    for i in 0..n {
        y[i] = x[i] + step;
        let p = f(&y);
        y[i] = x[i] - step;
        let m = f(&y);
        y[i] = x[i];
        h[i][i] = (p - 2.0 * f0 + m) / (step * step);
        for j in 0..i {
            let mut eval = |si: f64, sj: f64| {
                y[i] = x[i] + si * step;
                y[j] = x[j] + sj * step;
                let v = f(&y);
                y[i] = x[i];
                y[j] = x[j];
                v
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0)) / (4.0 * step * step);
            h[i][j] = v;
            h[j][i] = v;
        }
    }
    h
}

/// Hessian built column by column from central differences of a gradient,
/// then symmetrized.
pub fn dense_hessian_from_gradient(g: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], step: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    assert!(n <= MAX_DENSE_HESSIAN_DIM);
    let mut cols = Vec::with_capacity(n);
    let mut y = x.to_vec();
    for j in 0..n {
        y[j] = x[j] + step;
        let gp = g(&y);
        y[j] = x[j] - step;
        let gm = g(&y);
        y[j] = x[j];
        cols.push(gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * step)).collect::<Vec<f64>>());
    }
    (0..n)
        .map(|i| (0..n).map(|j| 0.5 * (cols[j][i] + cols[i][j])).collect())
        .collect()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues in descending order and the matching eigenvectors.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        let scale: f64 = m.iter().flatten().map(|x| x * x).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j][j].total_cmp(&m[i][i]));
    let values = order.iter().map(|&i| m[i][i]).collect();
    let vectors = order.iter().map(|&i| v.iter().map(|row| row[i]).collect()).collect();
    (values, vectors)
}

pub fn dense_hessian_eigs(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    jacobi_eigen(&dense_hessian(f, x, step)).0
}

/// Sample covariance (`1/(R-1)`) of the rows and its eigendecomposition.
pub fn covariance_pca(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let r = rows.len();
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|row| row[j]).sum::<f64>() / r as f64).collect();
    let cov: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| {
                    rows.iter().map(|row| (row[i] - mean[i]) * (row[j] - mean[j])).sum::<f64>() / (r - 1) as f64
                })
                .collect()
        })
        .collect();
    jacobi_eigen(&cov)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_gradient_examples() {
        let g = fd_gradient(|x| x[0] * x[0], &[3.0], 1e-4);
        assert!((g[0] - 6.0).abs() < 1e-6);
        assert_eq!(fd_gradient(|_| 2.5, &[1.0, 2.0], 1e-3), vec![0.0, 0.0]);
        // self-consistency on a quadratic with known gradient
        let a = [[2.0, 0.5], [0.5, 1.0]];
        let f = |x: &[f64]| 0.5 * (a[0][0] * x[0] * x[0] + 2.0 * a[0][1] * x[0] * x[1] + a[1][1] * x[1] * x[1]);
        let x = [0.7, -1.1];
        let g = fd_gradient(f, &x, 1e-4);
        assert!((g[0] - (a[0][0] * x[0] + a[0][1] * x[1])).abs() < 1e-6);
        assert!((g[1] - (a[1][0] * x[0] + a[1][1] * x[1])).abs() < 1e-6);
    }

    #[test]
    fn hessian_examples() {
        let e = dense_hessian_eigs(|x| 0.5 * (5.0 * x[0] * x[0] + 2.0 * x[1] * x[1]), &[0.3, -0.2], 1e-3);
        assert!((e[0] - 5.0).abs() < 1e-6 && (e[1] - 2.0).abs() < 1e-6);
        let e = dense_hessian_eigs(|x| x[0].cos(), &[0.0], 1e-3);
        assert!((e[0] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn jacobi_on_known_matrix() {
        let (vals, vecs) = jacobi_eigen(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        assert!((vals[0] - 3.0).abs() < 1e-14 && (vals[1] - 1.0).abs() < 1e-14);
        assert!((vecs[0][0].abs() - 0.5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn rotation_matrices_are_unitary() {
        for t in [0.0, 0.3, 2.0, -4.0] {
            assert!(rotation_matrix(true, t).unitarity_defect() < 1e-14);
            assert!(rotation_matrix(false, t).unitarity_defect() < 1e-14);
        }
        assert!(cz_matrix(3, 0, 2).unitarity_defect() < 1e-14);
    }
}
