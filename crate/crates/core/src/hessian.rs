//! Largest Hessian eigenvalue of the training loss.
//!
//! Hessian-vector products come from central differences of the exact
//! gradient along the normalized direction; the top eigenvalue then follows
//! from plain power iteration.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::model::{gradient, loss, ModelConfig, ModelParams};
use crate::{Error, Result};

/// Something with a gradient: the loss restricted to a parameter scope, or a
/// synthetic function in tests.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParameterScope {
    AnglesOnly,
    #[default]
    AnglesAndBias,
}

/// Training loss as a function of the parameters in `scope`, everything
/// else frozen at `base`.
pub struct ModelObjective<'a> {
    cfg: &'a ModelConfig,
    batch: Vec<&'a Sample>,
    base: ModelParams,
    scope: ParameterScope,
}

impl<'a> ModelObjective<'a> {
    pub fn new(cfg: &'a ModelConfig, batch: Vec<&'a Sample>, base: ModelParams, scope: ParameterScope) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::Empty("Hessian batch"));
        }
        if base.layout() != cfg.layout() {
            return Err(Error::InvalidArgument("checkpoint does not match model".into()));
        }
        Ok(ModelObjective {
            cfg,
            batch,
            base,
            scope,
        })
    }

    /// The base point restricted to the scope.
    pub fn point(&self) -> Vec<f64> {
        match self.scope {
            ParameterScope::AnglesOnly => self.base.angles().to_vec(),
            ParameterScope::AnglesAndBias => self.base.as_slice().to_vec(),
        }
    }

    pub fn params_at(&self, theta: &[f64]) -> Result<ModelParams> {
        if theta.len() != self.dim() {
            return Err(Error::LengthMismatch {
                what: "scoped parameters",
                expected: self.dim(),
                actual: theta.len(),
            });
        }
        let mut p = self.base.clone();
        p.as_mut_slice()[..theta.len()].copy_from_slice(theta);
        Ok(p)
    }

    pub fn loss(&self, theta: &[f64]) -> Result<f64> {
        loss(&self.params_at(theta)?, &self.batch, self.cfg)
    }
}

impl Objective for ModelObjective<'_> {
    fn dim(&self) -> usize {
        match self.scope {
            ParameterScope::AnglesOnly => self.base.layout().n_angles(),
            ParameterScope::AnglesAndBias => self.base.layout().len(),
        }
    }

    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let g = gradient(&self.params_at(theta)?, &self.batch, self.cfg)?.grad.into_vec();
        Ok(g[..self.dim()].to_vec())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Default coefficient of the finite-difference step.
///
/// With the softmax scale at 100 the loss leaves its quadratic regime within
/// about 1e-3 of a trained point, so the step is kept two orders below that.
pub const DEFAULT_FD_SCALE: f64 = 1e-5;

/// Finite-difference step `scale max(1, |theta|) / sqrt(dim)`.
pub fn fd_step_scaled(theta: &[f64], scale: f64) -> f64 {
    scale * norm(theta).max(1.0) / (theta.len().max(1) as f64).sqrt()
}

/// [`fd_step_scaled`] with [`DEFAULT_FD_SCALE`].
pub fn fd_step(theta: &[f64]) -> f64 {
    fd_step_scaled(theta, DEFAULT_FD_SCALE)
}

/// `H v` with the default step.
pub fn hvp<O: Objective + ?Sized>(obj: &O, theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    hvp_with_step(obj, theta, v, fd_step(theta))
}

/// `(grad(theta + eps u) - grad(theta - eps u)) |v| / (2 eps)` with `u = v / |v|`.
pub fn hvp_with_step<O: Objective + ?Sized>(obj: &O, theta: &[f64], v: &[f64], eps: f64) -> Result<Vec<f64>> {
    let dim = obj.dim();
    if theta.len() != dim || v.len() != dim {
        return Err(Error::LengthMismatch {
            what: "Hessian-vector product input",
            expected: dim,
            actual: if theta.len() != dim { theta.len() } else { v.len() },
        });
    }
    let vn = norm(v);
    if !(vn > 0.0 && vn.is_finite()) {
        return Err(Error::InvalidArgument("direction must be finite and non-zero".into()));
    }
    let plus: Vec<f64> = theta.iter().zip(v).map(|(t, x)| t + eps * x / vn).collect();
    let minus: Vec<f64> = theta.iter().zip(v).map(|(t, x)| t - eps * x / vn).collect();
    let gp = obj.gradient(&plus)?;
    let gm = obj.gradient(&minus)?;
    let out: Vec<f64> = gp
        .iter()
        .zip(&gm)
        .map(|(a, b)| (a - b) * vn / (2.0 * eps))
        .collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("Hessian-vector product".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerIterationOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Extra random starts allowed when `H v` vanishes on the first product.
    pub max_restarts: usize,
    /// Coefficient of the finite-difference step used for `H v`.
    pub fd_scale: f64,
}

impl Default for PowerIterationOptions {
    fn default() -> Self {
        PowerIterationOptions {
            tol: 1e-3,
            max_iter: 100,
            seed: 0,
            max_restarts: 3,
            fd_scale: DEFAULT_FD_SCALE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerIterationResult {
    /// Rayleigh quotient at the last iterate: the dominant eigenvalue estimate.
    pub lambda: f64,
    pub iterations: usize,
    /// Relative change of the estimate at the final step (1.0 if only one step ran).
    pub residual: f64,
    pub converged: bool,
    /// Seed of the start vector actually used.
    pub seed: u64,
}

/// Dominant eigenvalue of a symmetric operator.
///
/// Converges to the eigenvalue of largest magnitude; a negative result means
/// the spectrum is dominated by negative curvature.
pub fn power_iteration<F>(mut apply: F, dim: usize, opts: &PowerIterationOptions) -> Result<PowerIterationResult>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if dim == 0 {
        return Err(Error::InvalidArgument("power iteration on an empty space".into()));
    }
    if opts.max_iter == 0 || !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument("max_iter and tol must be positive".into()));
    }
    let mut attempt = 0;
    'restart: loop {
        let seed = opts.seed.wrapping_add(attempt as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = norm(&v);
        v.iter_mut().for_each(|x| *x /= n);

        let mut lambda = 0.0;
        let mut residual = 1.0;
        for it in 1..=opts.max_iter {
            let hv = apply(&v)?;
            if hv.len() != dim {
                return Err(Error::LengthMismatch {
                    what: "operator output",
                    expected: dim,
                    actual: hv.len(),
                });
            }
            let next: f64 = v.iter().zip(&hv).map(|(a, b)| a * b).sum();
            let hn = norm(&hv);
            if hn == 0.0 || !hn.is_finite() {
                if !hn.is_finite() {
                    return Err(Error::NonFinite("operator output".into()));
                }
                if it == 1 {
                    attempt += 1;
                    if attempt > opts.max_restarts {
                        return Err(Error::ZeroOperator { attempts: attempt });
                    }
                    continue 'restart;
                }
                return Ok(PowerIterationResult {
                    lambda: next,
                    iterations: it,
                    residual: 0.0,
                    converged: true,
                    seed,
                });
            }
            if it > 1 {
                residual = (next - lambda).abs() / (next.abs() + 1e-12);
            }
            lambda = next;
            v = hv.into_iter().map(|x| x / hn).collect();
            if it > 1 && residual < opts.tol {
                return Ok(PowerIterationResult {
                    lambda,
                    iterations: it,
                    residual,
                    converged: true,
                    seed,
                });
            }
        }
        return Ok(PowerIterationResult {
            lambda,
            iterations: opts.max_iter,
            residual,
            converged: false,
            seed,
        });
    }
}

/// Which training samples the Hessian was taken over.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BatchSpec {
    Full { size: usize },
    Subsample { size: usize, seed: u64 },
}

/// Sorted indices of a seeded subsample of `0..total`.
pub fn subsample_indices(total: usize, size: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..total).collect();
    if size < total {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        idx.truncate(size);
        idx.sort_unstable();
    }
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianReport {
    pub lambda_max: f64,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    /// Set when the dominant eigenvalue is negative, in which case the largest
    /// (most positive) eigenvalue needs deflation and is not reported.
    pub negative: bool,
    pub parameter_scope: ParameterScope,
    pub batch_spec: BatchSpec,
    pub dim: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub fd_scale: f64,
    pub checkpoint_hash: String,
    pub config_hash: String,
}

/// Power iteration on the model loss Hessian at the objective's base point.
pub fn largest_eigenvalue(obj: &ModelObjective<'_>, opts: &PowerIterationOptions) -> Result<PowerIterationResult> {
    let theta = obj.point();
    if !(opts.fd_scale > 0.0 && opts.fd_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("finite-difference scale {}", opts.fd_scale)));
    }
    let eps = fd_step_scaled(&theta, opts.fd_scale);
    power_iteration(|v| hvp_with_step(obj, &theta, v, eps), obj.dim(), opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic {
        a: Vec<Vec<f64>>,
    }

    impl Objective for Quadratic {
        fn dim(&self) -> usize {
            self.a.len()
        }
        fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
            Ok(self.a.iter().map(|row| row.iter().zip(theta).map(|(x, y)| x * y).sum()).collect())
        }
    }

    struct Linear(Vec<f64>);

    impl Objective for Linear {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn gradient(&self, _: &[f64]) -> Result<Vec<f64>> {
            Ok(self.0.clone())
        }
    }

    fn matvec(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
        a.iter().map(|r| r.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
    }

    #[test]
    fn quadratic_hvp_is_exact() {
        let a = vec![vec![4.0, 1.0, 0.5], vec![1.0, 3.0, -0.2], vec![0.5, -0.2, 2.0]];
        let q = Quadratic { a: a.clone() };
        let theta = [0.3, -1.2, 2.0];
        for v in [[1.0, 0.0, 0.0], [0.2, -0.7, 3.0]] {
            let hv = hvp(&q, &theta, &v).unwrap();
            for (x, y) in hv.iter().zip(matvec(&a, &v)) {
                assert!((x - y).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn linear_hvp_vanishes() {
        let l = Linear(vec![1.0, -2.0, 0.5]);
        let hv = hvp(&l, &[0.1, 0.2, 0.3], &[1.0, 1.0, 1.0]).unwrap();
        assert!(hv.iter().all(|x| x.abs() < 1e-9));
        assert!(hvp(&l, &[0.1, 0.2, 0.3], &[0.0; 3]).is_err());
    }

    #[test]
    fn power_iteration_on_matrices() {
        let opts = PowerIterationOptions {
            tol: 1e-10,
            max_iter: 500,
            ..Default::default()
        };
        for a in [vec![vec![3.0, 0.0], vec![0.0, 1.0]], vec![vec![2.0, 1.0], vec![1.0, 2.0]]] {
            let r = power_iteration(|v| Ok(matvec(&a, v)), 2, &opts).unwrap();
            assert!(r.converged);
            assert!((r.lambda - 3.0).abs() < 1e-8, "{}", r.lambda);
        }
        let neg = vec![vec![-5.0, 0.0], vec![0.0, 1.0]];
        let r = power_iteration(|v| Ok(matvec(&neg, v)), 2, &opts).unwrap();
        assert!(r.lambda < 0.0);
    }

    #[test]
    fn zero_operator_is_an_error() {
        let r = power_iteration(|v| Ok(vec![0.0; v.len()]), 3, &PowerIterationOptions::default());
        assert!(matches!(r, Err(Error::ZeroOperator { attempts: 4 })));
    }

    #[test]
    fn default_options() {
        let o = PowerIterationOptions::default();
        assert_eq!((o.tol, o.max_iter), (1e-3, 100));
    }

    #[test]
    fn subsample_is_seeded() {
        let a = subsample_indices(100, 10, 3);
        assert_eq!(a, subsample_indices(100, 10, 3));
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(subsample_indices(5, 10, 3), vec![0, 1, 2, 3, 4]);
    }
}
