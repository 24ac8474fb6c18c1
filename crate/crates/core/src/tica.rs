//! Time-lagged independent component analysis: symmetrized covariance
//! estimation, the whitened generalized eigenproblem, an L1-penalized
//! (sparse) variant, projection, implied timescales and data-fraction
//! convergence.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;

const SPARSE_TOL: f64 = 1e-8;
const SPARSE_MAX_ITER: usize = 10_000;
/// Shift added to the generalized operator so power iteration sees a
/// non-negative spectrum (tICA eigenvalues lie in [-1, 1]).
const POWER_SHIFT: f64 = 1.0;

/// Pooled mean and symmetrized instantaneous / time-lagged covariances.
#[derive(Clone, Debug, PartialEq)]
pub struct Covariances {
    pub lag: usize,
    pub means: Vec<f64>,
    pub c00: DMatrix<f64>,
    pub c0t: DMatrix<f64>,
    pub n_pairs: usize,
}

/// Pools lagged pairs over all trajectories without crossing their
/// boundaries.
pub fn estimate_covariances(trajs: &[&FeatureMatrix], lag: usize) -> Result<Covariances> {
    let first = trajs.first().ok_or(Error::Empty("no trajectories"))?;
    let d = first.n_cols();
    let shortest = trajs.iter().map(|t| t.n_rows()).min().unwrap_or(0);
    if lag == 0 || shortest <= lag {
        return Err(Error::Lag {
            lag,
            frames: shortest,
        });
    }
    if let Some(t) = trajs.iter().find(|t| t.n_cols() != d) {
        return Err(Error::Shape {
            context: "trajectory feature width",
            expected: d,
            got: t.n_cols(),
        });
    }

    let mut means = vec![0.0; d];
    let mut n_pairs = 0usize;
    for t in trajs {
        let n = t.n_rows() - lag;
        for i in 0..n {
            for (m, (a, b)) in means.iter_mut().zip(t.row(i).iter().zip(t.row(i + lag))) {
                *m += a + b;
            }
        }
        n_pairs += n;
    }
    means.iter_mut().for_each(|m| *m /= 2.0 * n_pairs as f64);

    let mut s00 = vec![0.0; d * d];
    let mut s0t = vec![0.0; d * d];
    let mut a = vec![0.0; d];
    let mut b = vec![0.0; d];
    for t in trajs {
        for i in 0..t.n_rows() - lag {
            for j in 0..d {
                a[j] = t.get(i, j) - means[j];
                b[j] = t.get(i + lag, j) - means[j];
            }
            for p in 0..d {
                let (ap, bp) = (a[p], b[p]);
                let row00 = &mut s00[p * d..(p + 1) * d];
                for q in 0..d {
                    row00[q] += ap * a[q] + bp * b[q];
                }
                let row0t = &mut s0t[p * d..(p + 1) * d];
                for q in 0..d {
                    row0t[q] += ap * b[q] + bp * a[q];
                }
            }
        }
    }
    let norm = 2.0 * n_pairs as f64;
    let c00 = DMatrix::from_row_slice(d, d, &s00) / norm;
    let c0t = DMatrix::from_row_slice(d, d, &s0t) / norm;
    Ok(Covariances {
        lag,
        means,
        c00: symmetrize(&c00),
        c0t: symmetrize(&c0t),
        n_pairs,
    })
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `1e-6 * trace(C00) / d`.
pub fn default_shrinkage(c00: &DMatrix<f64>) -> f64 {
    1e-6 * c00.trace() / c00.nrows() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TicaModel {
    pub lag: usize,
    pub n_features: usize,
    pub means: Vec<f64>,
    /// Row-major `n_features x n_features`.
    pub c00: Vec<f64>,
    /// Row-major, symmetrized.
    pub c0t: Vec<f64>,
    /// Descending for dense solutions.
    pub eigenvalues: Vec<f64>,
    /// One vector per component, each of length `n_features`.
    pub components: Vec<Vec<f64>>,
    pub shrinkage: f64,
    pub penalty: f64,
    pub retained: Vec<usize>,
}

impl TicaModel {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn c00_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_features, self.n_features, &self.c00)
    }

    pub fn c0t_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_features, self.n_features, &self.c0t)
    }

    pub fn covariances(&self) -> Covariances {
        Covariances {
            lag: self.lag,
            means: self.means.clone(),
            c00: self.c00_matrix(),
            c0t: self.c0t_matrix(),
            n_pairs: 0,
        }
    }

    /// Projection of one feature row onto the first `out.len()` components.
    pub fn project_row(&self, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(&self.components) {
            *o = x
                .iter()
                .zip(&self.means)
                .zip(v)
                .map(|((xi, mi), vi)| (xi - mi) * vi)
                .sum();
        }
    }
}

fn to_model(cov: &Covariances, eps: f64, penalty: f64, eig: Vec<(f64, DVector<f64>)>) -> TicaModel {
    let d = cov.means.len();
    let row_major = |m: &DMatrix<f64>| m.transpose().as_slice().to_vec();
    TicaModel {
        lag: cov.lag,
        n_features: d,
        means: cov.means.clone(),
        c00: row_major(&cov.c00),
        c0t: row_major(&cov.c0t),
        eigenvalues: eig.iter().map(|(l, _)| *l).collect(),
        retained: eig
            .iter()
            .map(|(_, v)| v.iter().filter(|x| **x != 0.0).count())
            .collect(),
        components: eig.into_iter().map(|(_, v)| v.as_slice().to_vec()).collect(),
        shrinkage: eps,
        penalty,
    }
}

/// First nonzero loading positive.
fn orient(v: &mut DVector<f64>) {
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-14) {
        if *first < 0.0 {
            v.neg_mut();
        }
    }
}

fn regularized(cov: &Covariances, eps: f64) -> Result<DMatrix<f64>> {
    if !(eps >= 0.0) {
        return Err(Error::Spec(format!("shrinkage must be >= 0, got {eps}")));
    }
    let d = cov.c00.nrows();
    if cov.c00.ncols() != d || cov.c0t.nrows() != d || cov.c0t.ncols() != d {
        return Err(Error::Shape {
            context: "covariance matrices",
            expected: d,
            got: cov.c0t.nrows(),
        });
    }
    Ok(&cov.c00 + DMatrix::identity(d, d) * eps)
}

/// Solves `C0t v = lambda (C00 + eps I) v` by symmetric whitening.
pub fn solve_tica(cov: &Covariances, eps: f64) -> Result<TicaModel> {
    let a = regularized(cov, eps)?;
    let ea = SymmetricEigen::new(a);
    let max = ea.eigenvalues.max();
    let min = ea.eigenvalues.min();
    if !(min > 1e-13 * max.abs().max(f64::MIN_POSITIVE)) {
        return Err(Error::Conditioning {
            min_eigenvalue: min,
        });
    }
    let inv_sqrt = ea.eigenvalues.map(|s| 1.0 / s.sqrt());
    let whiten = &ea.eigenvectors * DMatrix::from_diagonal(&inv_sqrt);
    let m = symmetrize(&(whiten.transpose() * &cov.c0t * &whiten));
    let em = SymmetricEigen::new(m);
    let mut pairs: Vec<(f64, DVector<f64>)> = (0..em.eigenvalues.len())
        .map(|i| {
            let mut v = &whiten * em.eigenvectors.column(i);
            orient(&mut v);
            (em.eigenvalues[i], v)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(to_model(cov, eps, 0.0, pairs))
}

fn soft_threshold(y: &mut DVector<f64>, t: f64) {
    if t > 0.0 {
        y.apply(|v| *v = v.signum() * (v.abs() - t).max(0.0));
    }
}

/// L1-penalized tICA: per component, shifted generalized power iteration
/// warm-started from the dense solution with soft-thresholding after every
/// application of `(C00 + eps I)^-1 C0t`, followed by A-metric deflation.
pub fn solve_sparse_tica(
    cov: &Covariances,
    eps: f64,
    penalty: f64,
    n_components: usize,
) -> Result<TicaModel> {
    if !(penalty >= 0.0) {
        return Err(Error::Spec(format!("penalty must be >= 0, got {penalty}")));
    }
    let dense = solve_tica(cov, eps)?;
    let d = dense.n_features;
    if n_components == 0 || n_components > d {
        return Err(Error::Spec(format!(
            "n_components must be in 1..={d}, got {n_components}"
        )));
    }
    let a = regularized(cov, eps)?;
    let chol = a
        .clone()
        .cholesky()
        .ok_or(Error::Conditioning { min_eigenvalue: 0.0 })?;
    let mut c = cov.c0t.clone();
    let mut out = Vec::with_capacity(n_components);
    for k in 0..n_components {
        let mut v = DVector::from_column_slice(&dense.components[k]);
        let mut converged = false;
        for _ in 0..SPARSE_MAX_ITER {
            let mut y = chol.solve(&(&c * &v)) + &v * POWER_SHIFT;
            soft_threshold(&mut y, penalty);
            let norm2 = y.dot(&(&a * &y));
            if !(norm2 > 0.0) {
                return Err(Error::OverPenalized {
                    component: k,
                    penalty,
                });
            }
            y /= norm2.sqrt();
            orient(&mut y);
            let change = (&y - &v).amax();
            v = y;
            if change < SPARSE_TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            warn!("sparse tICA component {k} did not converge in {SPARSE_MAX_ITER} iterations");
        }
        let av = &a * &v;
        let rayleigh = v.dot(&(&cov.c0t * &v)) / v.dot(&av);
        let deflate = v.dot(&(&c * &v));
        c -= &av * av.transpose() * deflate;
        c = symmetrize(&c);
        out.push((rayleigh, v));
    }
    Ok(to_model(cov, eps, penalty, out))
}

/// Frames projected onto the slowest components.
#[derive(Clone, Debug, PartialEq)]
pub struct TicaProjection {
    pub data: FeatureMatrix,
    pub n_tics: usize,
}

pub fn project(model: &TicaModel, x: &FeatureMatrix, n_tics: usize) -> Result<TicaProjection> {
    if x.n_cols() != model.n_features {
        return Err(Error::Shape {
            context: "tICA projection input",
            expected: model.n_features,
            got: x.n_cols(),
        });
    }
    if n_tics == 0 || n_tics > model.n_components() {
        return Err(Error::Spec(format!(
            "n_tics must be in 1..={}, got {n_tics}",
            model.n_components()
        )));
    }
    let mut data = vec![0.0; x.n_rows() * n_tics];
    for (row, out) in x.rows().zip(data.chunks_exact_mut(n_tics)) {
        model.project_row(row, out);
    }
    let names = (0..n_tics).map(|i| format!("tic{i}")).collect();
    Ok(TicaProjection {
        data: FeatureMatrix::new(names, data)?,
        n_tics,
    })
}

/// Implied timescales `-lag / ln(lambda) * dt_record`; `None` where
/// `lambda` is outside (0, 1).
pub fn timescales(model: &TicaModel, dt_record: f64) -> Vec<Option<f64>> {
    model
        .eigenvalues
        .iter()
        .map(|&l| {
            if l > 0.0 && l < 1.0 {
                Some(-(model.lag as f64) / l.ln() * dt_record)
            } else {
                None
            }
        })
        .collect()
}

/// Largest principal angle (radians) between the spans of two sets of
/// vectors.
pub fn subspace_angle(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let orth = |vs: &[Vec<f64>]| {
        let m = DMatrix::from_columns(&vs.iter().map(|v| DVector::from_column_slice(v)).collect::<Vec<_>>());
        m.qr().q()
    };
    let qa = orth(a);
    let qb = orth(b);
    let residual = &qb - &qa * (qa.transpose() * &qb);
    let sin = residual.singular_values().max().min(1.0);
    sin.asin()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TicaOptions {
    /// `None` uses [`default_shrinkage`].
    pub shrinkage: Option<f64>,
    pub penalty: f64,
    pub n_components: usize,
}

impl Default for TicaOptions {
    fn default() -> Self {
        Self {
            shrinkage: None,
            penalty: 0.0,
            n_components: 1,
        }
    }
}

/// Estimates covariances and solves (dense when `penalty == 0`).
pub fn fit(trajs: &[&FeatureMatrix], lag: usize, opts: &TicaOptions) -> Result<TicaModel> {
    let cov = estimate_covariances(trajs, lag)?;
    let eps = opts.shrinkage.unwrap_or_else(|| default_shrinkage(&cov.c00));
    if opts.penalty > 0.0 {
        solve_sparse_tica(&cov, eps, opts.penalty, opts.n_components)
    } else {
        solve_tica(&cov, eps)
    }
}

pub const UNCONVERGED_ANGLE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub fraction: f64,
    pub frames: usize,
    pub angle: f64,
    pub timescale_ratio: Option<f64>,
    /// Angle above [`UNCONVERGED_ANGLE`].
    pub flagged: bool,
}

/// Refits on growing prefixes and compares against the full-data model.
pub fn convergence_study(
    x: &FeatureMatrix,
    lag: usize,
    fractions: &[f64],
    opts: &TicaOptions,
) -> Result<Vec<ConvergencePoint>> {
    let full = fit(&[x], lag, opts)?;
    let k = opts.n_components.max(1).min(full.n_components());
    let full_t = timescales(&full, 1.0)[0];
    let mut out = Vec::with_capacity(fractions.len());
    for &f in fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Spec(format!("fraction {f} outside (0, 1]")));
        }
        let n = ((x.n_rows() as f64) * f).round() as usize;
        if n < lag + 1 {
            return Err(Error::Lag { lag, frames: n });
        }
        let part = fit(&[&x.slice_rows(0..n)], lag, opts)?;
        let angle = subspace_angle(&full.components[..k], &part.components[..k]);
        let t = timescales(&part, 1.0)[0];
        out.push(ConvergencePoint {
            fraction: f,
            frames: n,
            angle,
            timescale_ratio: t.zip(full_t).map(|(a, b)| a / b),
            flagged: angle > UNCONVERGED_ANGLE,
        });
    }
    Ok(out)
}

/// Non-increasing least-squares fit (pool-adjacent-violators).
pub fn isotonic_decreasing(y: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::new();
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (m2, n2) = blocks[blocks.len() - 1];
            let (m1, n1) = blocks[blocks.len() - 2];
            if m1 >= m2 {
                break;
            }
            blocks.pop();
            let n = n1 + n2;
            *blocks.last_mut().unwrap() = ((m1 * n1 as f64 + m2 * n2 as f64) / n as f64, n);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, n)| std::iter::repeat_n(m, n))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn cov_from(c00: DMatrix<f64>, c0t: DMatrix<f64>) -> Covariances {
        Covariances {
            lag: 1,
            means: vec![0.0; c00.nrows()],
            c00,
            c0t,
            n_pairs: 0,
        }
    }

    fn spd(d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m: DMatrix<f64> = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
        &m * m.transpose() + DMatrix::<f64>::identity(d, d) * 0.5
    }

    #[test]
    fn identical_covariances_give_unit_spectrum() {
        let c = spd(4, 1);
        let m = solve_tica(&cov_from(c.clone(), c), 0.0).unwrap();
        for l in m.eigenvalues {
            assert!((l - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_lagged_covariance_gives_zero_spectrum() {
        let m = solve_tica(&cov_from(spd(3, 2), DMatrix::zeros(3, 3)), 0.0).unwrap();
        assert!(m.eigenvalues.iter().all(|l| l.abs() < 1e-14));
    }

    #[test]
    fn indefinite_c00_is_a_conditioning_error() {
        let c00 = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = solve_tica(&cov_from(c00, DMatrix::identity(2, 2)), 0.0).unwrap_err();
        assert!(matches!(err, Error::Conditioning { .. }));
    }

    #[test]
    fn dense_solution_is_c00_orthonormal_with_small_residual() {
        let c00 = spd(5, 3);
        let b = spd(5, 4) * 0.1;
        let c0t = (&c00 * 0.6 + b.clone() + b.transpose()) * 0.5;
        let cov = cov_from(c00.clone(), c0t.clone());
        let m = solve_tica(&cov, 1e-9).unwrap();
        let a = &c00 + DMatrix::identity(5, 5) * 1e-9;
        for i in 0..5 {
            let vi = DVector::from_column_slice(&m.components[i]);
            let r = &c0t * &vi - (&a * &vi) * m.eigenvalues[i];
            assert!(r.norm() / vi.norm() < 1e-8);
            for j in 0..5 {
                let vj = DVector::from_column_slice(&m.components[j]);
                let g = vi.dot(&(&c00 * &vj));
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g - want).abs() < 1e-6);
            }
        }
        assert!(m.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn orientation_first_loading_positive() {
        let c00 = spd(3, 5);
        let m = solve_tica(&cov_from(c00.clone(), c00 * 0.3), 0.0).unwrap();
        for v in &m.components {
            assert!(v.iter().find(|x| x.abs() > 1e-14).unwrap() > &0.0);
        }
    }

    #[test]
    fn zero_penalty_sparse_matches_dense() {
        let c00 = spd(4, 6);
        let b = spd(4, 7) * 0.05;
        let c0t = &c00 * 0.5 + b;
        let cov = cov_from(c00, c0t);
        let dense = solve_tica(&cov, 0.0).unwrap();
        let sparse = solve_sparse_tica(&cov, 0.0, 0.0, 2).unwrap();
        assert!(subspace_angle(&dense.components[..2], &sparse.components) < 1e-4);
        assert_eq!(sparse.retained, vec![4, 4]);
    }

    #[test]
    fn huge_penalty_collapses() {
        let c = spd(3, 8);
        let cov = cov_from(c.clone(), c * 0.5);
        let err = solve_sparse_tica(&cov, 0.0, 1e6, 1).unwrap_err();
        assert!(matches!(err, Error::OverPenalized { component: 0, .. }));
    }

    #[test]
    fn lag_longer_than_data() {
        let x = FeatureMatrix::from_rows(&[[1.0], [2.0], [3.0]]).unwrap();
        assert!(matches!(estimate_covariances(&[&x], 3), Err(Error::Lag { .. })));
        assert!(estimate_covariances(&[&x], 2).is_ok());
    }

    #[test]
    fn duplicated_trajectory_pools_idempotently() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<[f64; 2]> = (0..200)
            .map(|_| [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)])
            .collect();
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let one = estimate_covariances(&[&x], 3).unwrap();
        let two = estimate_covariances(&[&x, &x], 3).unwrap();
        assert!((one.c00 - two.c00).amax() < 1e-14);
        assert!((one.c0t - two.c0t).amax() < 1e-14);
    }

    #[test]
    fn white_noise_has_no_lagged_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 40_000;
        let rows: Vec<[f64; 3]> = (0..n)
            .map(|_| std::array::from_fn(|_| StandardNormal.sample(&mut rng)))
            .collect();
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let c = estimate_covariances(&[&x], 1).unwrap();
        assert!(c.c0t.amax() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn timescale_arithmetic() {
        let mut m = solve_tica(&cov_from(spd(2, 1), DMatrix::zeros(2, 2)), 0.0).unwrap();
        m.eigenvalues = vec![(-1.0f64).exp(), -0.2];
        m.lag = 1;
        let t = timescales(&m, 1.0);
        assert!((t[0].unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(t[1], None);
        m.eigenvalues = vec![0.5];
        m.lag = 25;
        assert!((timescales(&m, 1.0)[0].unwrap() - 36.067_376_022_224_08).abs() < 1e-9);
    }

    #[test]
    fn projection_of_mean_is_zero() {
        let c = spd(3, 12);
        let mut cov = cov_from(c.clone(), c * 0.4);
        cov.means = vec![1.0, -2.0, 0.5];
        let m = solve_tica(&cov, 0.0).unwrap();
        let x = FeatureMatrix::from_rows(&[[1.0, -2.0, 0.5]]).unwrap();
        let p = project(&m, &x, 2).unwrap();
        assert!(p.data.as_slice().iter().all(|v| v.abs() < 1e-15));
        let bad = FeatureMatrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert!(matches!(project(&m, &bad, 1), Err(Error::Shape { .. })));
    }

    #[test]
    fn isotonic_pools_violators() {
        let y = isotonic_decreasing(&[3.0, 1.0, 2.0, 0.5]);
        assert_eq!(y, vec![3.0, 1.5, 1.5, 0.5]);
    }

    #[test]
    fn model_json_round_trip() {
        let c = spd(3, 13);
        let m = solve_tica(&cov_from(c.clone(), c * 0.2), 1e-7).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        let back: TicaModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }
}
