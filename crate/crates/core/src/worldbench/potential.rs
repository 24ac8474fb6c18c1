//! Analytic model potentials in kT units.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Müller–Brown constants (prefactors, exponent coefficients, centers).
const MB_A: [f64; 4] = [-200.0, -100.0, -170.0, 15.0];
const MB_ALPHA: [f64; 4] = [-1.0, -1.0, -6.5, 0.7];
const MB_BETA: [f64; 4] = [0.0, 0.0, 11.0, 0.6];
const MB_GAMMA: [f64; 4] = [-10.0, -10.0, -6.5, 0.7];
const MB_X0: [f64; 4] = [1.0, 0.0, -0.5, -1.0];
const MB_Y0: [f64; 4] = [0.0, 0.5, 1.5, 1.0];

/// Approximate Müller–Brown minima (A, B, C).
const MB_MINIMA: [[f64; 2]; 3] = [[-0.558, 1.442], [-0.050, 0.467], [0.623, 0.028]];

const TRIPLE_CENTERS: [f64; 3] = [-2.0, 0.0, 2.0];
const TRIPLE_WIDTH: f64 = 0.5;
const TRIPLE_QUARTIC: f64 = 0.05;

fn default_mb_scale() -> f64 {
    0.05
}

fn default_bump_width() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialKind {
    /// `a (x^2 - 1)^2`
    DoubleWell { a: f64 },
    /// `a (x^2 - 1)^2 + c x`
    TiltedDoubleWell { a: f64, c: f64 },
    /// `-sum_i d_i exp(-(x - c_i)^2 / (2 * 0.5^2)) + 0.05 x^4`, centers (-2, 0, 2).
    TripleWell { depths: [f64; 3] },
    /// Literature Müller–Brown surface multiplied by `scale`.
    MuellerBrown {
        #[serde(default = "default_mb_scale")]
        scale: f64,
    },
    /// `k/2 |x - center|^2`, dimensionality taken from `center`.
    Harmonic { k: f64, center: Vec<f64> },
}

/// Deepens (positive `delta`) or raises one basin by a unit-height Gaussian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub basin: usize,
    /// Depth shift in kT; the basin energy changes by `-delta * g(x)`.
    pub delta: f64,
    #[serde(default = "default_bump_width")]
    pub width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    #[serde(flatten)]
    pub kind: PotentialKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<Perturbation>,
}

impl From<PotentialKind> for PotentialSpec {
    fn from(kind: PotentialKind) -> Self {
        Self {
            kind,
            perturbation: None,
        }
    }
}

impl PotentialSpec {
    pub fn double_well(a: f64) -> Self {
        PotentialKind::DoubleWell { a }.into()
    }

    pub fn tilted_double_well(a: f64, c: f64) -> Self {
        PotentialKind::TiltedDoubleWell { a, c }.into()
    }

    pub fn triple_well(depths: [f64; 3]) -> Self {
        PotentialKind::TripleWell { depths }.into()
    }

    pub fn mueller_brown() -> Self {
        PotentialKind::MuellerBrown {
            scale: default_mb_scale(),
        }
        .into()
    }

    pub fn harmonic(k: f64, center: Vec<f64>) -> Self {
        PotentialKind::Harmonic { k, center }.into()
    }

    pub fn perturbed(mut self, basin: usize, delta: f64) -> Self {
        self.perturbation = Some(Perturbation {
            basin,
            delta,
            width: default_bump_width(),
        });
        self
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            PotentialKind::MuellerBrown { .. } => 2,
            PotentialKind::Harmonic { center, .. } => center.len(),
            _ => 1,
        }
    }

    /// Basin centers in coordinate space, in their natural (kinetic) order.
    pub fn basin_centers(&self) -> Vec<Vec<f64>> {
        match &self.kind {
            PotentialKind::DoubleWell { .. } | PotentialKind::TiltedDoubleWell { .. } => {
                vec![vec![-1.0], vec![1.0]]
            }
            PotentialKind::TripleWell { .. } => TRIPLE_CENTERS.iter().map(|c| vec![*c]).collect(),
            PotentialKind::MuellerBrown { .. } => MB_MINIMA.iter().map(|m| m.to_vec()).collect(),
            PotentialKind::Harmonic { center, .. } => vec![center.clone()],
        }
    }

    /// Axis-aligned box enclosing all basins with margin.
    pub fn domain(&self) -> Vec<(f64, f64)> {
        match &self.kind {
            PotentialKind::MuellerBrown { .. } => vec![(-2.5, 1.5), (-1.0, 3.0)],
            PotentialKind::Harmonic { center, .. } => {
                center.iter().map(|c| (c - 4.0, c + 4.0)).collect()
            }
            _ => vec![(-4.0, 4.0)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match &self.kind {
            PotentialKind::DoubleWell { a } => a.is_finite(),
            PotentialKind::TiltedDoubleWell { a, c } => a.is_finite() && c.is_finite(),
            PotentialKind::TripleWell { depths } => depths.iter().all(|d| d.is_finite()),
            PotentialKind::MuellerBrown { scale } => scale.is_finite(),
            PotentialKind::Harmonic { k, center } => {
                *k > 0.0 && !center.is_empty() && center.iter().all(|c| c.is_finite())
            }
        };
        if !ok {
            return Err(Error::Spec(format!("invalid potential parameters: {:?}", self.kind)));
        }
        if let Some(p) = &self.perturbation {
            let n = self.basin_centers().len();
            if p.basin >= n {
                return Err(Error::Spec(format!(
                    "perturbation basin {} out of range (potential has {n} basins)",
                    p.basin
                )));
            }
            if !(p.width > 0.0) || !p.delta.is_finite() {
                return Err(Error::Spec("perturbation needs finite delta and width > 0".into()));
            }
        }
        Ok(())
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Shape {
                context: "potential coordinates",
                expected: self.dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite coordinates {x:?}")));
        }
        Ok(())
    }

    pub fn energy(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.energy_unchecked(x))
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let mut g = vec![0.0; x.len()];
        self.gradient_into(x, &mut g);
        Ok(g)
    }

    /// Unit-height Gaussian centered on the perturbed basin (zero without a perturbation).
    pub fn bump(&self, x: &[f64]) -> f64 {
        match &self.perturbation {
            None => 0.0,
            Some(p) => {
                let c = &self.basin_centers()[p.basin];
                let r2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                (-r2 / (2.0 * p.width * p.width)).exp()
            }
        }
    }

    pub(crate) fn energy_unchecked(&self, x: &[f64]) -> f64 {
        let base = match &self.kind {
            PotentialKind::DoubleWell { a } => {
                let q = x[0] * x[0] - 1.0;
                a * q * q
            }
            PotentialKind::TiltedDoubleWell { a, c } => {
                let q = x[0] * x[0] - 1.0;
                a * q * q + c * x[0]
            }
            PotentialKind::TripleWell { depths } => {
                let x = x[0];
                let wells: f64 = depths
                    .iter()
                    .zip(TRIPLE_CENTERS)
                    .map(|(d, c)| d * (-(x - c).powi(2) / (2.0 * TRIPLE_WIDTH * TRIPLE_WIDTH)).exp())
                    .sum();
                -wells + TRIPLE_QUARTIC * x.powi(4)
            }
            PotentialKind::MuellerBrown { scale } => {
                let (x, y) = (x[0], x[1]);
                let mut u = 0.0;
                for k in 0..4 {
                    let (dx, dy) = (x - MB_X0[k], y - MB_Y0[k]);
                    u += MB_A[k]
                        * (MB_ALPHA[k] * dx * dx + MB_BETA[k] * dx * dy + MB_GAMMA[k] * dy * dy).exp();
                }
                scale * u
            }
            PotentialKind::Harmonic { k, center } => {
                let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                0.5 * k * r2
            }
        };
        match &self.perturbation {
            Some(p) => base - p.delta * self.bump(x),
            None => base,
        }
    }

    pub(crate) fn gradient_into(&self, x: &[f64], g: &mut [f64]) {
        match &self.kind {
            PotentialKind::DoubleWell { a } => {
                g[0] = 4.0 * a * x[0] * (x[0] * x[0] - 1.0);
            }
            PotentialKind::TiltedDoubleWell { a, c } => {
                g[0] = 4.0 * a * x[0] * (x[0] * x[0] - 1.0) + c;
            }
            PotentialKind::TripleWell { depths } => {
                let x = x[0];
                let s2 = TRIPLE_WIDTH * TRIPLE_WIDTH;
                let wells: f64 = depths
                    .iter()
                    .zip(TRIPLE_CENTERS)
                    .map(|(d, c)| d * (x - c) / s2 * (-(x - c).powi(2) / (2.0 * s2)).exp())
                    .sum();
                g[0] = wells + 4.0 * TRIPLE_QUARTIC * x.powi(3);
            }
            PotentialKind::MuellerBrown { scale } => {
                let (x, y) = (x[0], x[1]);
                let (mut gx, mut gy) = (0.0, 0.0);
                for k in 0..4 {
                    let (dx, dy) = (x - MB_X0[k], y - MB_Y0[k]);
                    let e = MB_A[k]
                        * (MB_ALPHA[k] * dx * dx + MB_BETA[k] * dx * dy + MB_GAMMA[k] * dy * dy).exp();
                    gx += e * (2.0 * MB_ALPHA[k] * dx + MB_BETA[k] * dy);
                    gy += e * (MB_BETA[k] * dx + 2.0 * MB_GAMMA[k] * dy);
                }
                g[0] = scale * gx;
                g[1] = scale * gy;
            }
            PotentialKind::Harmonic { k, center } => {
                for ((gi, xi), ci) in g.iter_mut().zip(x).zip(center) {
                    *gi = k * (xi - ci);
                }
            }
        }
        if let Some(p) = &self.perturbation {
            let c = &self.basin_centers()[p.basin];
            let b = self.bump(x);
            let w2 = p.width * p.width;
            for ((gi, xi), ci) in g.iter_mut().zip(x).zip(c) {
                // d/dx of -delta * exp(-r^2 / 2w^2)
                *gi += p.delta * b * (xi - ci) / w2;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_kinds() -> Vec<PotentialSpec> {
        vec![
            PotentialSpec::double_well(5.0),
            PotentialSpec::tilted_double_well(6.0, 0.7),
            PotentialSpec::triple_well([4.0, 3.0, 5.0]),
            PotentialSpec::mueller_brown(),
            PotentialSpec::harmonic(2.0, vec![0.3, -1.0]),
            PotentialSpec::double_well(5.0).perturbed(1, 1.5),
            PotentialSpec::triple_well([4.0, 4.0, 4.0]).perturbed(0, -2.0),
            PotentialSpec::mueller_brown().perturbed(2, 1.0),
        ]
    }

    #[test]
    fn double_well_values() {
        let p = PotentialSpec::double_well(5.0);
        assert_eq!(p.energy(&[1.0]).unwrap(), 0.0);
        assert_eq!(p.energy(&[0.0]).unwrap(), 5.0);
        assert_eq!(p.gradient(&[1.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn triple_well_at_origin() {
        let p = PotentialSpec::triple_well([4.0, 4.0, 4.0]);
        // Direct evaluation: -4 (1 + 2 exp(-4 / 0.5)) + 0
        let expected = -4.0 * (1.0 + 2.0 * (-8.0f64).exp());
        assert!((p.energy(&[0.0]).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn harmonic_gradient() {
        let p = PotentialSpec::harmonic(2.0, vec![0.0]);
        assert_eq!(p.gradient(&[1.5]).unwrap(), vec![3.0]);
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for p in all_kinds() {
            let dom = p.domain();
            for _ in 0..100 {
                let x: Vec<f64> = dom.iter().map(|(lo, hi)| rng.random_range(*lo..*hi)).collect();
                let g = p.gradient(&x).unwrap();
                for i in 0..x.len() {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += h;
                    xm[i] -= h;
                    let fd = (p.energy(&xp).unwrap() - p.energy(&xm).unwrap()) / (2.0 * h);
                    let scale = g[i].abs().max(1.0);
                    assert!(
                        (fd - g[i]).abs() / scale < 1e-6,
                        "{:?} at {x:?}: analytic {} vs fd {fd}",
                        p.kind,
                        g[i]
                    );
                }
            }
        }
    }

    #[test]
    fn zero_perturbation_is_exact() {
        let base = PotentialSpec::triple_well([4.0, 4.0, 4.0]);
        let pert = base.clone().perturbed(1, 0.0);
        for x in [-3.1, -0.2, 0.0, 1.7] {
            assert_eq!(base.energy(&[x]).unwrap(), pert.energy(&[x]).unwrap());
        }
    }

    #[test]
    fn perturbation_is_linear_in_bump() {
        let base = PotentialSpec::double_well(5.0);
        let pert = base.clone().perturbed(1, 1.3);
        for x in [-1.0, 0.4, 1.0, 2.2] {
            let diff = pert.energy(&[x]).unwrap() - base.energy(&[x]).unwrap();
            assert!((diff + 1.3 * pert.bump(&[x])).abs() < 1e-14);
        }
    }

    #[test]
    fn non_finite_input_is_domain_error() {
        let p = PotentialSpec::double_well(5.0);
        assert!(matches!(p.energy(&[f64::NAN]), Err(Error::Domain(_))));
        assert!(matches!(p.gradient(&[f64::INFINITY]), Err(Error::Domain(_))));
    }

    #[test]
    fn serde_tags_are_stable() {
        let p = PotentialSpec::tilted_double_well(8.0, 0.5).perturbed(1, 1.0);
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"kind\":\"tilted_double_well\""), "{s}");
        let back: PotentialSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }
}
