//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use tvde_core::cvexpr::CvPipeline;
use tvde_core::vde::{Layer, Mlp};
use tvde_core::{Activation, FeatureSpec, MlpSpec, PotentialSpec, VdeModel};

/// Composite Simpson nodes and weights on `[lo, hi]` with `n` (even) panels.
pub fn simpson(lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    assert!(n.is_multiple_of(2));
    let h = (hi - lo) / n as f64;
    (0..=n)
        .map(|i| {
            let c = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            (lo + i as f64 * h, c * h / 3.0)
        })
        .collect()
}

/// Boltzmann weights of a 1-D potential on a fine Simpson grid.
pub fn boltzmann_1d(p: &PotentialSpec, kt: f64, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let ref_u = simpson(lo, hi, 200_000)
        .iter()
        .map(|(x, _)| p.energy(&[*x]).unwrap())
        .fold(f64::INFINITY, f64::min);
    simpson(lo, hi, 200_000)
        .into_iter()
        .map(|(x, w)| (x, w * (-(p.energy(&[x]).unwrap() - ref_u) / kt).exp()))
        .collect()
}

/// `F(x > split) - F(x <= split)` by quadrature.
pub fn basin_delta_f(p: &PotentialSpec, kt: f64, split: f64) -> f64 {
    let q = boltzmann_1d(p, kt, -4.0, 4.0);
    let right: f64 = q.iter().filter(|(x, _)| *x > split).map(|(_, w)| w).sum();
    let left: f64 = q.iter().filter(|(x, _)| *x <= split).map(|(_, w)| w).sum();
    -kt * (right / left).ln()
}

/// Probability of each label under the Boltzmann distribution, with the
/// label of `x` given by `label`.
pub fn state_probabilities(
    p: &PotentialSpec,
    kt: f64,
    n_states: usize,
    label: impl Fn(f64) -> usize,
) -> Vec<f64> {
    let q = boltzmann_1d(p, kt, -4.0, 4.0);
    let mut out = vec![0.0; n_states];
    for (x, w) in q {
        out[label(x)] += w;
    }
    let z: f64 = out.iter().sum();
    out.iter().map(|v| v / z).collect()
}

/// Free energy along a CV, `F(s)` per bin of width `(hi-lo)/n`, marginalized
/// over the fine grid; bins without mass are `None`.
pub fn marginal_fes(
    p: &PotentialSpec,
    kt: f64,
    cv: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    n: usize,
) -> Vec<Option<f64>> {
    let q = boltzmann_1d(p, kt, -4.0, 4.0);
    let mut mass = vec![0.0; n];
    for (x, w) in q {
        let s = cv(x);
        if s >= lo && s < hi {
            mass[((s - lo) / (hi - lo) * n as f64) as usize] += w;
        }
    }
    mass.iter().map(|m| (*m > 0.0).then(|| -kt * m.ln())).collect()
}

/// Eigenvalues of a symmetric transition matrix, descending.
pub fn symmetric_eigenvalues(rows: &[&[f64]]) -> Vec<f64> {
    let n = rows.len();
    let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Basin-to-basin transitions of a 1-D signal with a dead zone
/// `(-band, band)` around `center`.
pub fn crossings(values: &[f64], center: f64, band: f64) -> usize {
    let mut side: Option<bool> = None;
    let mut n = 0;
    for v in values {
        let now = if *v > center + band {
            Some(true)
        } else if *v < center - band {
            Some(false)
        } else {
            None
        };
        if let Some(s) = now {
            if side.is_some_and(|old| old != s) {
                n += 1;
            }
            side = Some(s);
        }
    }
    n
}

/// `s = w x + b` on a one-dimensional system.
pub fn linear_cv(w: f64, b: f64) -> CvPipeline {
    let mut vde = VdeModel::init(&MlpSpec::new(&[1, 1, 1], Activation::Identity), 1, 0.0, 1.0, 0)
        .unwrap();
    vde.encoder = Mlp {
        activation: Activation::Identity,
        layers: vec![Layer { n_in: 1, n_out: 1, weights: vec![w], bias: vec![b] }],
    };
    CvPipeline::new(1, FeatureSpec::identity(), None, None, &vde).unwrap()
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over paired entries.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Central-difference gradient.
pub fn fd_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[j] += h;
            b[j] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, var.sqrt())
}
