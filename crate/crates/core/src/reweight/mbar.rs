use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// Reduced energies `u[k][n]` of every pooled sample `n` in every state `k`;
/// `counts[k]` samples were drawn from state `k`. State 0 is the reference
/// (`f_0 = 0`) and may hold no samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MbarInput {
    pub u: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MbarResult {
    pub f: Vec<f64>,
    /// Standard error of `f_k - f_0`.
    pub f_std_err: Vec<f64>,
    /// Normalized per-sample weights for state 0.
    pub weights: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    /// `ln sum_k N_k exp(f_k - u_kn)` per sample, reused for reweighting.
    log_denominator: Vec<f64>,
}

fn log_sum_exp(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + it.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Normalizes log-weights into weights summing to one.
pub fn normalize_log_weights(log_w: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(log_w.iter().copied());
    let mut w: Vec<f64> = log_w.iter().map(|l| (l - z).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

impl MbarInput {
    pub fn n_states(&self) -> usize {
        self.u.len()
    }

    pub fn n_samples(&self) -> usize {
        self.u.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_states();
        if k == 0 || self.n_samples() == 0 {
            return Err(Error::Empty("MBAR input"));
        }
        if self.counts.len() != k {
            return Err(Error::Shape { context: "MBAR counts", expected: k, got: self.counts.len() });
        }
        let n = self.n_samples();
        for row in &self.u {
            if row.len() != n {
                return Err(Error::Shape { context: "MBAR energies", expected: n, got: row.len() });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain("non-finite reduced energy".into()));
            }
        }
        let total: usize = self.counts.iter().sum();
        if total != n {
            return Err(Error::Shape { context: "MBAR sample total", expected: n, got: total });
        }
        Ok(())
    }

    fn log_denominators(&self, f: &[f64]) -> Vec<f64> {
        let occupied: Vec<(usize, f64)> = self
            .counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(k, &c)| (k, (c as f64).ln()))
            .collect();
        (0..self.n_samples())
            .map(|n| log_sum_exp(occupied.iter().map(|&(k, lc)| lc + f[k] - self.u[k][n])))
            .collect()
    }

    /// One self-consistent update, returned with `f_0` pinned to zero.
    fn update(&self, f: &[f64]) -> Vec<f64> {
        let ld = self.log_denominators(f);
        let mut next: Vec<f64> = self
            .u
            .iter()
            .map(|row| -log_sum_exp(row.iter().zip(&ld).map(|(u, d)| -u - d)))
            .collect();
        let f0 = next[0];
        next.iter_mut().for_each(|v| *v -= f0);
        next
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Solves the MBAR equations by self-consistent iteration. With
/// `accelerate`, every third iterate is replaced by its Aitken extrapolation
/// whenever that lowers the residual.
pub fn mbar_solve(input: &MbarInput, tol: f64, max_iter: usize, accelerate: bool) -> Result<MbarResult> {
    input.validate()?;
    let k = input.n_states();
    let mut f = vec![0.0; k];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut history: Vec<Vec<f64>> = Vec::new();
    while iterations < max_iter {
        iterations += 1;
        let next = input.update(&f);
        residual = max_abs_diff(&next, &f);
        f = next;
        if residual < tol {
            break;
        }
        if accelerate {
            history.push(f.clone());
            if history.len() == 3 {
                let (a, b, c) = (&history[0], &history[1], &history[2]);
                let ext: Vec<f64> = (0..k)
                    .map(|i| {
                        let den = c[i] - 2.0 * b[i] + a[i];
                        if den.abs() > 1e-300 {
                            c[i] - (c[i] - b[i]).powi(2) / den
                        } else {
                            c[i]
                        }
                    })
                    .collect();
                if ext.iter().all(|v| v.is_finite()) {
                    let r_ext = max_abs_diff(&input.update(&ext), &ext);
                    if r_ext < residual {
                        f = ext;
                    }
                }
                history.clear();
            }
        }
    }
    // Residual of the returned point under the update map.
    let check = input.update(&f);
    residual = residual.min(max_abs_diff(&check, &f));
    if !(residual < tol) {
        return Err(Error::NonConvergence { iterations, residual });
    }
    let log_denominator = input.log_denominators(&f);
    let log_w: Vec<f64> = input.u[0].iter().zip(&log_denominator).map(|(u, d)| -u - d).collect();
    let f_std_err = std_errors(input, &f, &log_denominator);
    Ok(MbarResult {
        weights: normalize_log_weights(&log_w),
        f,
        f_std_err,
        residual,
        iterations,
        log_denominator,
    })
}

/// Asymptotic standard errors of `f_k - f_0` from the thin decomposition of
/// the weight matrix.
fn std_errors(input: &MbarInput, f: &[f64], log_den: &[f64]) -> Vec<f64> {
    let k = input.n_states();
    let n = input.n_samples();
    let w = DMatrix::from_fn(n, k, |i, j| (f[j] - input.u[j][i] - log_den[i]).exp());
    let gram = w.transpose() * &w;
    let eig = SymmetricEigen::new(gram);
    let s = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let v = eig.eigenvectors;
    let nk = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        k,
        input.counts.iter().map(|&c| c as f64),
    ));
    let sig = DMatrix::from_diagonal(&s);
    let inner = DMatrix::identity(k, k) - &sig * v.transpose() * nk * &v * &sig;
    let pinv = inner.pseudo_inverse(1e-10).unwrap_or_else(|_| DMatrix::zeros(k, k));
    let theta = &v * &sig * pinv * &sig * v.transpose();
    (0..k)
        .map(|j| (theta[(j, j)] + theta[(0, 0)] - 2.0 * theta[(0, j)]).max(0.0).sqrt())
        .collect()
}

impl MbarResult {
    /// Normalized weights for an arbitrary state with reduced energies `u`.
    pub fn weights_for(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.log_denominator.len() {
            return Err(Error::Shape {
                context: "target energies",
                expected: self.log_denominator.len(),
                got: u.len(),
            });
        }
        let log_w: Vec<f64> = u.iter().zip(&self.log_denominator).map(|(u, d)| -u - d).collect();
        Ok(normalize_log_weights(&log_w))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;

    #[test]
    fn single_state() {
        let input = MbarInput { u: vec![vec![0.3, 1.0, -2.0]], counts: vec![3] };
        let r = mbar_solve(&input, DEFAULT_TOL, DEFAULT_MAX_ITER, false).unwrap();
        assert_eq!(r.f, vec![0.0]);
        for w in &r.weights {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_states() {
        let row = vec![0.1, 0.5, 2.0, -1.0];
        let input = MbarInput { u: vec![row.clone(), row], counts: vec![2, 2] };
        let r = mbar_solve(&input, DEFAULT_TOL, DEFAULT_MAX_ITER, true).unwrap();
        assert!(r.f[1].abs() < 1e-12);
    }

    #[test]
    fn harmonic_states_and_acceleration() {
        let ks = [1.0, 2.0, 4.0];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut xs = Vec::new();
        for k in ks {
            let d = Normal::new(0.0, 1.0 / f64::sqrt(k)).unwrap();
            xs.extend((0..2000).map(|_| d.sample(&mut rng)));
        }
        let u = ks.iter().map(|k| xs.iter().map(|x| 0.5 * k * x * x).collect()).collect();
        let input = MbarInput { u, counts: vec![2000; 3] };
        let plain = mbar_solve(&input, DEFAULT_TOL, DEFAULT_MAX_ITER, false).unwrap();
        let fast = mbar_solve(&input, DEFAULT_TOL, DEFAULT_MAX_ITER, true).unwrap();
        assert!(fast.iterations <= plain.iterations);
        for k in 1..3 {
            let exact = 0.5 * (ks[k] / ks[0]).ln();
            assert!((plain.f[k] - exact).abs() < 3.0 * plain.f_std_err[k]);
            assert!((plain.f[k] - fast.f[k]).abs() < 1e-8);
            assert!(plain.f_std_err[k] > 0.0 && plain.f_std_err[k] < 0.1);
        }
        let back = input.update(&plain.f);
        assert!(max_abs_diff(&back, &plain.f) < DEFAULT_TOL);
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let input = MbarInput {
            u: vec![vec![0.0, 5.0, 1.0], vec![3.0, 0.0, 2.0]],
            counts: vec![2, 1],
        };
        assert!(matches!(
            mbar_solve(&input, 1e-14, 1, false),
            Err(Error::NonConvergence { iterations: 1, .. })
        ));
    }

    #[test]
    fn empty_reference_state() {
        // State 0 unsampled; samples come from state 1 with u1 = u0 + 1.
        let u0 = vec![0.2, 0.7, 1.5];
        let u1: Vec<f64> = u0.iter().map(|v| v + 1.0).collect();
        let input = MbarInput { u: vec![u0, u1], counts: vec![0, 3] };
        let r = mbar_solve(&input, DEFAULT_TOL, DEFAULT_MAX_ITER, false).unwrap();
        assert!((r.f[1] - 1.0).abs() < 1e-12);
    }
}
