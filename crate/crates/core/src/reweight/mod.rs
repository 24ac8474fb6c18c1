//! Unbiased free energies and populations from biased sampling.

mod kmeans;
mod mbar;

pub use kmeans::{assign, kmeans, nearest, KMeans};
pub use mbar::{mbar_solve, normalize_log_weights, MbarInput, MbarResult, DEFAULT_MAX_ITER, DEFAULT_TOL};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metad::{BiasState, MetadRun};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Unbiased,
    LastBias,
    Tiwary,
    Mbar,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Unbiased => "unbiased",
            Estimator::LastBias => "last_bias",
            Estimator::Tiwary => "tiwary",
            Estimator::Mbar => "mbar",
        }
    }
}

/// Normalized per-frame weights of the frames kept after discarding
/// `discard` leading frames (per run, for pooled estimators).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedSamples {
    pub weights: Vec<f64>,
    pub estimator: Estimator,
    pub discard: usize,
}

impl WeightedSamples {
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty("weighted samples"));
        }
        Ok(Self { weights: vec![1.0 / n as f64; n], estimator: Estimator::Unbiased, discard: 0 })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn kept<T: Copy>(v: &[T], discard: usize) -> Result<&[T]> {
    if discard >= v.len() {
        return Err(Error::Empty("no frames left after the equilibration discard"));
    }
    Ok(&v[discard..])
}

/// Last-bias weights `w ∝ exp(V_final(s)/kT)`.
pub fn last_bias_weights(s: &[f64], bias: &BiasState, discard: usize) -> Result<WeightedSamples> {
    let s = kept(s, discard)?;
    let log_w: Vec<f64> = s.iter().map(|v| bias.energy(*v) / bias.kt).collect();
    Ok(WeightedSamples {
        weights: normalize_log_weights(&log_w),
        estimator: Estimator::LastBias,
        discard,
    })
}

/// `c(t)` of the bias, with grid sums over the cache nodes.
pub fn tiwary_offset(bias: &BiasState) -> f64 {
    let gamma = bias.config.bias_factor;
    let kt = bias.kt;
    let v: Vec<f64> = bias.grid_nodes().iter().map(|s| bias.energy(*s)).collect();
    let num = mbar_lse(v.iter().map(|x| gamma / (gamma - 1.0) * x / kt));
    let den = mbar_lse(v.iter().map(|x| x / ((gamma - 1.0) * kt)));
    kt * (num - den)
}

fn mbar_lse(it: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = it.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Step at which a hill entered walker `run.walker`'s bias: own hills at
/// deposition, foreign hills at the next exchange.
fn arrival_step(run: &MetadRun, step: u64, walker: usize) -> u64 {
    if walker == run.walker {
        step
    } else {
        let r = run.bias.config.read_stride as u64;
        step.div_ceil(r) * r
    }
}

/// `c(t)` at every saved frame, replaying the run's hill history.
pub fn tiwary_series(run: &MetadRun) -> Result<Vec<f64>> {
    let cfg = &run.bias.config;
    if !(cfg.bias_factor > 1.0) {
        return Err(Error::Config(format!("bias factor must be > 1, got {}", cfg.bias_factor)));
    }
    let mut replay = BiasState::new(cfg, run.bias.kt)?;
    let hills = run.bias.hills();
    let mut next = 0;
    let mut c = tiwary_offset(&replay);
    let mut out = Vec::with_capacity(run.s.len());
    for i in 0..run.s.len() {
        let step = run.frame_step(i);
        let before = next;
        while next < hills.len() && arrival_step(run, hills[next].step, hills[next].walker) < step {
            replay.add_hill(hills[next]);
            next += 1;
        }
        if next != before {
            c = tiwary_offset(&replay);
        }
        out.push(c);
    }
    Ok(out)
}

/// Time-independent weights `w ∝ exp((V(s_t, t) - c(t))/kT)`.
pub fn tiwary_weights(run: &MetadRun, discard: usize) -> Result<WeightedSamples> {
    let c = tiwary_series(run)?;
    let kt = run.bias.kt;
    let v = kept(&run.v_bias, discard)?;
    let log_w: Vec<f64> = v.iter().zip(&c[discard..]).map(|(v, c)| (v - c) / kt).collect();
    Ok(WeightedSamples {
        weights: normalize_log_weights(&log_w),
        estimator: Estimator::Tiwary,
        discard,
    })
}

/// MBAR input with one state per run (its final bias) plus the unbiased
/// target as state 0. Samples are pooled in run order.
pub fn metad_to_mbar(runs: &[&MetadRun], discard: usize) -> Result<MbarInput> {
    let first = runs.first().ok_or(Error::Empty("metadynamics runs"))?;
    let kt = first.bias.kt;
    let potential = &first.trajectory.potential;
    for r in runs {
        if (r.bias.kt - kt).abs() > 1e-12 * kt {
            return Err(Error::Config(format!("inconsistent kT across runs: {} vs {kt}", r.bias.kt)));
        }
        if &r.trajectory.potential != potential {
            return Err(Error::Config("runs sample different potentials".into()));
        }
    }
    let mut u = vec![Vec::new(); runs.len() + 1];
    let mut counts = vec![0];
    for r in runs {
        let n = r.s.len();
        kept(&r.s, discard)?;
        counts.push(n - discard);
        for i in discard..n {
            let base = potential.energy(r.trajectory.frame(i))? / kt;
            let s = r.s[i];
            u[0].push(base);
            for (k, other) in runs.iter().enumerate() {
                u[k + 1].push(base + other.bias.energy(s) / kt);
            }
        }
    }
    Ok(MbarInput { u, counts })
}

/// MBAR weights of the pooled samples in the unbiased ensemble.
pub fn mbar_weights(runs: &[&MetadRun], discard: usize) -> Result<(WeightedSamples, MbarResult)> {
    let input = metad_to_mbar(runs, discard)?;
    let res = mbar_solve(&input, DEFAULT_TOL, DEFAULT_MAX_ITER, true)?;
    Ok((
        WeightedSamples { weights: res.weights.clone(), estimator: Estimator::Mbar, discard },
        res,
    ))
}

/// Per-frame values of the runs, pooled the same way as [`metad_to_mbar`].
pub fn pool<T: Clone>(runs: &[&MetadRun], discard: usize, f: impl Fn(&MetadRun, usize) -> T) -> Vec<T> {
    runs.iter().flat_map(|r| (discard..r.s.len()).map(|i| f(r, i)).collect::<Vec<_>>()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bins {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Bins {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 || !(hi > lo) {
            return Err(Error::Config(format!("need >= 2 bins over a non-empty range, got {n} on [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi, n })
    }

    /// Bins spanning the extremes of `values`.
    pub fn covering(values: &[f64], n: usize) -> Result<Self> {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pad = 1e-9 * (hi - lo).abs().max(1.0);
        Self::new(lo - pad, hi + pad, n)
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    pub fn index(&self, v: f64) -> Option<usize> {
        if !(v >= self.lo && v <= self.hi) {
            return None;
        }
        Some((((v - self.lo) / self.width()) as usize).min(self.n - 1))
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.lo + (i as f64 + 0.5) * self.width()).collect()
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.n).map(|i| self.lo + i as f64 * self.width()).collect()
    }
}

/// Free energy per bin (kT units scaled by `kt`), minimum zero; empty bins
/// are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FesEstimate {
    pub edges: Vec<f64>,
    pub free_energy: Vec<Option<f64>>,
    pub estimator: Estimator,
}

impl FesEstimate {
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }
}

pub fn fes_project(w: &WeightedSamples, observable: &[f64], bins: &Bins, kt: f64) -> Result<FesEstimate> {
    if observable.len() != w.len() {
        return Err(Error::Shape { context: "observable vs weights", expected: w.len(), got: observable.len() });
    }
    let mut mass = vec![0.0; bins.n];
    for (o, wt) in observable.iter().zip(&w.weights) {
        if let Some(i) = bins.index(*o) {
            mass[i] += wt;
        }
    }
    let f: Vec<Option<f64>> = mass.iter().map(|m| (*m > 0.0).then(|| -kt * m.ln())).collect();
    let min = f.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(Error::Empty("every FES bin is empty"));
    }
    Ok(FesEstimate {
        edges: bins.edges(),
        free_energy: f.into_iter().map(|v| v.map(|v| v - min)).collect(),
        estimator: w.estimator,
    })
}

/// `F(obs > split) - F(obs <= split)`.
pub fn delta_f(w: &WeightedSamples, observable: &[f64], split: f64, kt: f64) -> Result<f64> {
    if observable.len() != w.len() {
        return Err(Error::Shape { context: "observable vs weights", expected: w.len(), got: observable.len() });
    }
    let right: f64 = observable.iter().zip(&w.weights).filter(|(o, _)| **o > split).map(|(_, w)| w).sum();
    let left: f64 = w.weights.iter().sum::<f64>() - right;
    if !(right > 0.0 && left > 0.0) {
        return Err(Error::Empty("one side of the split carries no weight"));
    }
    Ok(-kt * (right / left).ln())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Populations {
    pub p: Vec<f64>,
    /// `-kT ln(p_i / p_ref)`; `None` for unpopulated states.
    pub delta_g: Vec<Option<f64>>,
    pub reference: usize,
}

/// State populations; the reference defaults to the most populated state.
pub fn state_populations(
    labels: &[usize],
    w: &WeightedSamples,
    n_states: usize,
    kt: f64,
    reference: Option<usize>,
) -> Result<Populations> {
    if labels.len() != w.len() {
        return Err(Error::Shape { context: "labels vs weights", expected: w.len(), got: labels.len() });
    }
    let mut p = vec![0.0; n_states];
    for (&l, wt) in labels.iter().zip(&w.weights) {
        if l >= n_states {
            return Err(Error::Config(format!("label {l} >= {n_states} states")));
        }
        p[l] += wt;
    }
    let reference = reference.unwrap_or_else(|| {
        (0..n_states).fold(0, |best, i| if p[i] > p[best] { i } else { best })
    });
    if reference >= n_states || p[reference] <= 0.0 {
        return Err(Error::Config(format!("reference state {reference} is unpopulated")));
    }
    // Written as a subtraction from 0.0 so the reference reads 0, not -0.
    let delta_g = p.iter().map(|pi| (*pi > 0.0).then(|| 0.0 - kt * (pi / p[reference]).ln())).collect();
    Ok(Populations { p, delta_g, reference })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::metad::MetadConfig;

    fn bias_with(hills: &[(f64, f64)]) -> BiasState {
        let cfg = MetadConfig { grid: Some([-2.0, 2.0]), ..MetadConfig::default() };
        let mut b = BiasState::new(&cfg, 1.0).unwrap();
        for (k, (c, h)) in hills.iter().enumerate() {
            b.add_hill(crate::metad::Hill { step: k as u64, t: k as f64, walker: 0, center: *c, sigma: 0.1, height: *h });
        }
        b
    }

    #[test]
    fn zero_bias_uniform() {
        let b = bias_with(&[]);
        let w = last_bias_weights(&[0.1, 0.5, -0.3, 1.0], &b, 0).unwrap();
        assert!(w.weights.iter().all(|v| (v - 0.25).abs() < 1e-15));
        assert!((tiwary_offset(&b)).abs() < 1e-12);
    }

    #[test]
    fn last_bias_two_frames() {
        let b = bias_with(&[(1.0, 2f64.ln())]);
        let w = last_bias_weights(&[-1.5, 1.0], &b, 0).unwrap();
        assert!((w.weights[0] - 1.0 / 3.0).abs() < 1e-6);
        assert!((w.weights[1] - 2.0 / 3.0).abs() < 1e-6);
        assert!(last_bias_weights(&[0.0], &b, 1).is_err());
    }

    #[test]
    fn one_populated_bin() {
        let w = WeightedSamples::uniform(4).unwrap();
        let bins = Bins::new(0.0, 4.0, 4).unwrap();
        let f = fes_project(&w, &[2.1, 2.5, 2.9, 2.2], &bins, 1.0).unwrap();
        assert_eq!(f.free_energy, vec![None, None, Some(0.0), None]);
        assert!(fes_project(&w, &[9.0; 4], &bins, 1.0).is_err());
        assert!(Bins::new(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn populations() {
        let w = WeightedSamples { weights: vec![0.5, 0.25, 0.25], estimator: Estimator::Mbar, discard: 0 };
        let p = state_populations(&[0, 1, 0], &w, 2, 1.0, None).unwrap();
        assert_eq!(p.p, vec![0.75, 0.25]);
        assert_eq!(p.reference, 0);
        assert_eq!(p.delta_g[0], Some(0.0));
        assert!((p.delta_g[1].unwrap() - 3f64.ln()).abs() < 1e-15);
        let u = WeightedSamples::uniform(4).unwrap();
        let p = state_populations(&[0, 1, 1, 0], &u, 2, 1.0, None).unwrap();
        assert_eq!(p.delta_g, vec![Some(0.0), Some(0.0)]);
    }

    #[test]
    fn split_free_energy() {
        let w = WeightedSamples { weights: vec![0.2, 0.8], estimator: Estimator::Unbiased, discard: 0 };
        assert!((delta_f(&w, &[-1.0, 1.0], 0.0, 1.0).unwrap() + 4f64.ln()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn constant_bias_shift_is_invisible(
            s in proptest::collection::vec(-1.5f64..1.5, 5..40),
            shift in -5.0f64..5.0,
        ) {
            let b = bias_with(&[(0.3, 1.0), (-0.4, 0.7)]);
            let w = last_bias_weights(&s, &b, 0).unwrap();
            let total: f64 = w.weights.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(w.weights.iter().all(|v| *v >= 0.0));
            let log_w: Vec<f64> = s.iter().map(|v| b.energy(*v) + shift).collect();
            let shifted = normalize_log_weights(&log_w);
            for (a, c) in w.weights.iter().zip(&shifted) {
                prop_assert!((a - c).abs() < 1e-12);
            }
        }
    }
}
