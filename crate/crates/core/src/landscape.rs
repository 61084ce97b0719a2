//! Loss-landscape slices along the top two principal directions of the
//! optimization trajectory.
//!
//! The trajectory matrix has far fewer rows (snapshots) than columns
//! (parameters), so PCA goes through the `R x R` Gram matrix of the centred
//! rows instead of the `D x D` covariance.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Eigenvalues below this fraction of the total variance count as zero.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaPlane {
    pub mean: Vec<f64>,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    /// Sample variances (covariance eigenvalues, `1/(R-1)` normalization).
    pub variance1: f64,
    pub variance2: f64,
    pub total_variance: f64,
    /// Explained-variance fractions.
    pub ratio1: f64,
    pub ratio2: f64,
}

impl PcaPlane {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `mean + alpha v1 + beta v2`.
    pub fn reconstruct(&self, alpha: f64, beta: f64) -> Vec<f64> {
        self.mean
            .iter()
            .zip(self.v1.iter().zip(&self.v2))
            .map(|(m, (a, b))| m + alpha * a + beta * b)
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

/// Unit vector orthogonal to everything in `basis`, built from the
/// coordinate axis with the largest residual.
fn orthogonal_fill(dim: usize, basis: &[&[f64]]) -> Vec<f64> {
    let mut best = Vec::new();
    let mut best_norm = -1.0;
    for k in 0..dim {
        let mut e = vec![0.0; dim];
        e[k] = 1.0;
        for b in basis {
            let c = dot(&e, b);
            for (x, y) in e.iter_mut().zip(b.iter()) {
                *x -= c * y;
            }
        }
        let n = dot(&e, &e).sqrt();
        if n > best_norm + 1e-12 {
            best_norm = n;
            best = e;
        }
        if best_norm > 0.7 {
            break;
        }
    }
    normalize(&mut best);
    best
}

/// Top-two principal components of the snapshot rows.
///
/// Degenerate trajectories still get an orthonormal pair: directions with no
/// variance are filled with coordinate axes orthogonalized against the rest,
/// and their ratios are zero. `v1` and `v2` are oriented so the last row
/// projects to non-negative coordinates.
pub fn pca2(rows: &[Vec<f64>]) -> Result<PcaPlane> {
    let r = rows.len();
    if r < 3 {
        return Err(Error::InvalidArgument(format!(
            "PCA needs at least 3 snapshots, got {r}"
        )));
    }
    let d = rows[0].len();
    if d < 2 {
        return Err(Error::InvalidArgument("PCA needs at least 2 coordinates".into()));
    }
    if let Some(bad) = rows.iter().find(|row| row.len() != d) {
        return Err(Error::LengthMismatch {
            what: "snapshot row",
            expected: d,
            actual: bad.len(),
        });
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("trajectory snapshot".into()));
    }

    let mut mean = vec![0.0; d];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= r as f64;
    }
    let centred: Vec<Vec<f64>> = rows
        .iter()
        .map(|row| row.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();

    let gram = DMatrix::from_fn(r, r, |i, j| dot(&centred[i], &centred[j]));
    let total: f64 = centred.iter().map(|c| dot(c, c)).sum();
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(2);
    let mut lambdas = [0.0; 2];
    for (slot, &k) in order.iter().take(2).enumerate() {
        let lambda = eig.eigenvalues[k].max(0.0);
        if total > 0.0 && lambda > RANK_TOL * total {
            let u = eig.eigenvectors.column(k);
            let mut v = vec![0.0; d];
            for (i, c) in centred.iter().enumerate() {
                for (x, y) in v.iter_mut().zip(c) {
                    *x += u[i] * y;
                }
            }
            for prev in &dirs {
                let c = dot(&v, prev);
                for (x, y) in v.iter_mut().zip(prev) {
                    *x -= c * y;
                }
            }
            normalize(&mut v);
            lambdas[slot] = lambda;
            dirs.push(v);
        } else {
            let basis: Vec<&[f64]> = dirs.iter().map(Vec::as_slice).collect();
            let v = orthogonal_fill(d, &basis);
            dirs.push(v);
        }
    }
    let mut v2 = dirs.pop().unwrap();
    let mut v1 = dirs.pop().unwrap();

    let last = &centred[r - 1];
    if dot(last, &v1) < 0.0 {
        v1.iter_mut().for_each(|x| *x = -*x);
    }
    if dot(last, &v2) < 0.0 {
        v2.iter_mut().for_each(|x| *x = -*x);
    }

    let denom = (r - 1) as f64;
    let ratio = |l: f64| if total > 0.0 { l / total } else { 0.0 };
    Ok(PcaPlane {
        mean,
        v1,
        v2,
        variance1: lambdas[0] / denom,
        variance2: lambdas[1] / denom,
        total_variance: total / denom,
        ratio1: ratio(lambdas[0]),
        ratio2: ratio(lambdas[1]),
    })
}

/// `((q - mean) . v1, (q - mean) . v2)`.
pub fn project(q: &[f64], plane: &PcaPlane) -> Result<(f64, f64)> {
    if q.len() != plane.dim() {
        return Err(Error::LengthMismatch {
            what: "projected vector",
            expected: plane.dim(),
            actual: q.len(),
        });
    }
    let mut a = 0.0;
    let mut b = 0.0;
    for ((x, m), (u, w)) in q.iter().zip(&plane.mean).zip(plane.v1.iter().zip(&plane.v2)) {
        let c = x - m;
        a += c * u;
        b += c * w;
    }
    Ok((a, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    pub resolution: usize,
    /// Margin on each side as a fraction of the trajectory's extent.
    pub margin_frac: f64,
    /// Half-width used when the trajectory has zero extent along an axis.
    pub fallback_half_width: f64,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            resolution: 20,
            margin_frac: 0.1,
            fallback_half_width: 1.0,
        }
    }
}

fn axis(values: impl Iterator<Item = f64> + Clone, opts: &GridOptions) -> Vec<f64> {
    let lo = values.clone().fold(f64::INFINITY, f64::min);
    let hi = values.fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let (start, end) = if range > 0.0 {
        let m = opts.margin_frac * range;
        (lo - m, hi + m)
    } else {
        let centre = 0.5 * (lo + hi);
        (centre - opts.fallback_half_width, centre + opts.fallback_half_width)
    };
    let n = opts.resolution;
    (0..n)
        .map(|i| start + (end - start) * i as f64 / (n - 1) as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub alpha_axis: Vec<f64>,
    pub beta_axis: Vec<f64>,
    /// `loss[a][b]` at `(alpha_axis[a], beta_axis[b])`.
    pub loss: Vec<Vec<f64>>,
    pub trajectory_2d: Vec<(f64, f64)>,
    pub min_point_2d: (f64, f64),
    /// Loss at the plane origin, i.e. at the PCA mean.
    pub origin_loss: f64,
}

impl LandscapeGrid {
    pub fn n_points(&self) -> usize {
        self.loss.iter().map(Vec::len).sum()
    }

    /// Rows `alpha,beta,loss`, alpha-major.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(format!("writing {}", path.display()), e);
        writeln!(w, "alpha,beta,loss").map_err(io)?;
        for (a, row) in self.alpha_axis.iter().zip(&self.loss) {
            for (b, l) in self.beta_axis.iter().zip(row) {
                writeln!(w, "{a},{b},{l}").map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }
}

/// Projects the trajectory and evaluates `loss_at` on a
/// `resolution x resolution` grid around it. `min_index` picks the snapshot
/// marked as the minimum.
pub fn grid_losses<F>(
    plane: &PcaPlane,
    snapshots: &[Vec<f64>],
    min_index: usize,
    loss_at: F,
    opts: &GridOptions,
) -> Result<LandscapeGrid>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if opts.resolution < 2 {
        return Err(Error::InvalidArgument("grid resolution must be at least 2".into()));
    }
    if !(opts.margin_frac >= 0.0 && opts.fallback_half_width > 0.0) {
        return Err(Error::InvalidArgument("invalid grid margins".into()));
    }
    if snapshots.is_empty() || min_index >= snapshots.len() {
        return Err(Error::InvalidArgument(format!(
            "minimum index {min_index} outside {} snapshots",
            snapshots.len()
        )));
    }
    let trajectory_2d = snapshots
        .iter()
        .map(|q| project(q, plane))
        .collect::<Result<Vec<_>>>()?;
    let alpha_axis = axis(trajectory_2d.iter().map(|p| p.0), opts);
    let beta_axis = axis(trajectory_2d.iter().map(|p| p.1), opts);
    let n = opts.resolution;
    let flat = (0..n * n)
        .into_par_iter()
        .map(|k| {
            let l = loss_at(&plane.reconstruct(alpha_axis[k / n], beta_axis[k % n]))?;
            if l.is_finite() {
                Ok(l)
            } else {
                Err(Error::NonFinite(format!("grid loss at point {k}")))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let origin_loss = loss_at(&plane.reconstruct(0.0, 0.0))?;
    Ok(LandscapeGrid {
        loss: flat.chunks(n).map(<[f64]>::to_vec).collect(),
        min_point_2d: trajectory_2d[min_index],
        trajectory_2d,
        alpha_axis,
        beta_axis,
        origin_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_plane(p: &PcaPlane) {
        assert!((dot(&p.v1, &p.v1) - 1.0).abs() < 1e-10);
        assert!((dot(&p.v2, &p.v2) - 1.0).abs() < 1e-10);
        assert!(dot(&p.v1, &p.v2).abs() < 1e-10);
        assert!(0.0 <= p.ratio2 && p.ratio2 <= p.ratio1 + 1e-15 && p.ratio1 + p.ratio2 <= 1.0 + 1e-12);
    }

    #[test]
    fn collinear_rows() {
        let u = [0.6, 0.0, -0.8];
        let rows: Vec<Vec<f64>> = [-1.0, 0.5, 2.0, 3.0]
            .iter()
            .map(|t| u.iter().map(|x| 1.0 + t * x).collect())
            .collect();
        let p = pca2(&rows).unwrap();
        check_plane(&p);
        assert!((dot(&p.v1, &u).abs() - 1.0).abs() < 1e-12);
        assert!((p.ratio1 - 1.0).abs() < 1e-12);
        assert!(p.ratio2.abs() < 1e-12);
        // last row has the largest t, so alpha >= 0
        assert!(project(&rows[3], &p).unwrap().0 > 0.0);
    }

    #[test]
    fn identical_rows() {
        let rows = vec![vec![2.0, -1.0, 4.0]; 5];
        let p = pca2(&rows).unwrap();
        check_plane(&p);
        assert_eq!((p.ratio1, p.ratio2), (0.0, 0.0));
    }

    #[test]
    fn too_few_rows() {
        assert!(pca2(&[vec![1.0, 2.0], vec![3.0, 4.0]]).is_err());
        assert!(pca2(&[vec![1.0], vec![3.0], vec![2.0]]).is_err());
    }

    #[test]
    fn projection_examples() {
        let rows = vec![
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0],
            vec![3.0, 1.0, 1.0],
        ];
        let p = pca2(&rows).unwrap();
        check_plane(&p);
        let (a, b) = project(&p.mean, &p).unwrap();
        assert!(a.abs() < 1e-15 && b.abs() < 1e-15);
        let q: Vec<f64> = p.mean.iter().zip(&p.v1).map(|(m, v)| m + 2.0 * v).collect();
        let (a, b) = project(&q, &p).unwrap();
        assert!((a - 2.0).abs() < 1e-12 && b.abs() < 1e-12);
        let inplane = p.reconstruct(0.7, -1.3);
        let (a, b) = project(&inplane, &p).unwrap();
        let back = p.reconstruct(a, b);
        for (x, y) in back.iter().zip(&inplane) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(project(&[1.0], &p).is_err());
    }

    #[test]
    fn grid_shape_and_origin() {
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| {
                let t = i as f64;
                vec![t, (t * 0.7).sin(), 0.3 * t * t, 1.0]
            })
            .collect();
        let p = pca2(&rows).unwrap();
        let quad = |x: &[f64]| -> Result<f64> { Ok(x.iter().map(|v| v * v).sum()) };
        let g = grid_losses(&p, &rows, 2, quad, &GridOptions::default()).unwrap();
        assert_eq!(g.n_points(), 400);
        assert_eq!(g.alpha_axis.len(), 20);
        assert_eq!(g.trajectory_2d.len(), 6);
        assert_eq!(g.min_point_2d, g.trajectory_2d[2]);
        assert_eq!(g.origin_loss, quad(&p.mean).unwrap());
        for &(a, b) in &g.trajectory_2d {
            assert!(g.alpha_axis[0] < a && a < g.alpha_axis[19]);
            assert!(g.beta_axis[0] < b && b < g.beta_axis[19]);
        }
        // odd resolution over a symmetric range contains the origin
        let sym = vec![vec![-1.0, 0.0], vec![1.0, 0.0], vec![0.0, 0.5], vec![0.0, -0.5]];
        let p = pca2(&sym).unwrap();
        let opts = GridOptions {
            resolution: 21,
            ..GridOptions::default()
        };
        let g = grid_losses(&p, &sym, 0, quad, &opts).unwrap();
        assert!(g.alpha_axis[10].abs() < 1e-12 && g.beta_axis[10].abs() < 1e-12);
        assert!((g.loss[10][10] - quad(&p.mean).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_grid_uses_fallback() {
        let rows = vec![vec![1.0, 1.0]; 3];
        let p = pca2(&rows).unwrap();
        let g = grid_losses(&p, &rows, 0, |_| Ok(1.0), &GridOptions::default()).unwrap();
        assert_eq!(g.alpha_axis[0], -1.0);
        assert_eq!(g.alpha_axis[19], 1.0);
        assert_eq!(g.beta_axis[0], -1.0);
    }

    #[test]
    fn grid_csv_has_header_and_rows() {
        let rows = vec![vec![0.0, 0.0], vec![1.0, 0.5], vec![2.0, 0.0]];
        let p = pca2(&rows).unwrap();
        let g = grid_losses(&p, &rows, 1, |x| Ok(x[0]), &GridOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        g.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("alpha,beta,loss"));
        assert_eq!(lines.count(), 400);
    }
}
