//! Coordinate → feature transforms and feature standardization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::worldbench::Trajectory;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureKind {
    Identity,
    /// `(sin x_i, cos x_i)` for every coordinate.
    SinCos,
    /// `|x_i - x_j|` for every listed pair.
    PairDistances { pairs: Vec<(usize, usize)> },
}

fn unit_scale() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureBlock {
    #[serde(flatten)]
    pub kind: FeatureKind,
    /// Multiplies every feature of the block.
    #[serde(default = "unit_scale")]
    pub scale: f64,
}

/// Ordered concatenation of feature blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub blocks: Vec<FeatureBlock>,
}

impl FeatureSpec {
    pub fn single(kind: FeatureKind) -> Self {
        Self {
            blocks: vec![FeatureBlock { kind, scale: 1.0 }],
        }
    }

    pub fn identity() -> Self {
        Self::single(FeatureKind::Identity)
    }

    pub fn sincos() -> Self {
        Self::single(FeatureKind::SinCos)
    }

    pub fn output_dim(&self, input_dim: usize) -> Result<usize> {
        self.validate(input_dim)?;
        Ok(self
            .blocks
            .iter()
            .map(|b| match &b.kind {
                FeatureKind::Identity => input_dim,
                FeatureKind::SinCos => 2 * input_dim,
                FeatureKind::PairDistances { pairs } => pairs.len(),
            })
            .sum())
    }

    pub fn validate(&self, input_dim: usize) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Spec("feature spec without blocks".into()));
        }
        for b in &self.blocks {
            if !b.scale.is_finite() {
                return Err(Error::Spec(format!("non-finite block scale {}", b.scale)));
            }
            if let FeatureKind::PairDistances { pairs } = &b.kind {
                if let Some((i, j)) = pairs.iter().find(|(i, j)| *i >= input_dim || *j >= input_dim) {
                    return Err(Error::Spec(format!(
                        "pair ({i}, {j}) out of range for {input_dim} coordinates"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn names(&self, input_dim: usize) -> Vec<String> {
        let mut out = Vec::new();
        for b in &self.blocks {
            match &b.kind {
                FeatureKind::Identity => out.extend((0..input_dim).map(|j| format!("x{j}"))),
                FeatureKind::SinCos => {
                    for j in 0..input_dim {
                        out.push(format!("sin_x{j}"));
                        out.push(format!("cos_x{j}"));
                    }
                }
                FeatureKind::PairDistances { pairs } => {
                    out.extend(pairs.iter().map(|(i, j)| format!("d_{i}_{j}")))
                }
            }
        }
        out
    }

    /// Appends the features of one frame to `out`.
    pub fn apply_row(&self, x: &[f64], out: &mut Vec<f64>) {
        for b in &self.blocks {
            let s = b.scale;
            match &b.kind {
                FeatureKind::Identity => out.extend(x.iter().map(|v| s * v)),
                FeatureKind::SinCos => {
                    for v in x {
                        out.push(s * v.sin());
                        out.push(s * v.cos());
                    }
                }
                FeatureKind::PairDistances { pairs } => {
                    out.extend(pairs.iter().map(|(i, j)| s * (x[*i] - x[*j]).abs()))
                }
            }
        }
    }

    /// Row-major `n_features x input_dim` Jacobian of the transform at `x`.
    pub fn jacobian(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        let mut jac = Vec::new();
        for b in &self.blocks {
            let s = b.scale;
            match &b.kind {
                FeatureKind::Identity => {
                    for i in 0..d {
                        jac.extend((0..d).map(|j| if i == j { s } else { 0.0 }));
                    }
                }
                FeatureKind::SinCos => {
                    for (i, xi) in x.iter().enumerate() {
                        jac.extend((0..d).map(|j| if i == j { s * xi.cos() } else { 0.0 }));
                        jac.extend((0..d).map(|j| if i == j { -s * xi.sin() } else { 0.0 }));
                    }
                }
                FeatureKind::PairDistances { pairs } => {
                    for (a, c) in pairs {
                        let sign = (x[*a] - x[*c]).signum() * s;
                        let sign = if x[*a] == x[*c] { 0.0 } else { sign };
                        jac.extend((0..d).map(|j| {
                            if a == c {
                                0.0
                            } else if j == *a {
                                sign
                            } else if j == *c {
                                -sign
                            } else {
                                0.0
                            }
                        }));
                    }
                }
            }
        }
        jac
    }

    pub fn apply_rows<'a, I>(&self, input_dim: usize, rows: I) -> Result<FeatureMatrix>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let names = self.names(input_dim);
        self.validate(input_dim)?;
        let mut data = Vec::new();
        for r in rows {
            if r.len() != input_dim {
                return Err(Error::Shape {
                    context: "featurize input",
                    expected: input_dim,
                    got: r.len(),
                });
            }
            self.apply_row(r, &mut data);
        }
        FeatureMatrix::new(names, data)
    }
}

pub fn featurize(spec: &FeatureSpec, traj: &Trajectory) -> Result<FeatureMatrix> {
    spec.apply_rows(traj.dim(), traj.frames())
}

/// Features of coordinate rows stored in a table (e.g. stacked trajectories).
pub fn featurize_matrix(spec: &FeatureSpec, coords: &FeatureMatrix) -> Result<FeatureMatrix> {
    spec.apply_rows(coords.n_cols(), coords.rows())
}

/// Column standardization `(x - mean) / std` with population variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub fitted: bool,
}

impl Scaler {
    pub fn fit(x: &FeatureMatrix) -> Result<Self> {
        let n = x.n_rows();
        if n < 2 {
            return Err(Error::Lag { lag: 1, frames: n });
        }
        let w = x.n_cols();
        let mut means = vec![0.0; w];
        for r in x.rows() {
            for (m, v) in means.iter_mut().zip(r) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n as f64);
        let mut vars = vec![0.0; w];
        for r in x.rows() {
            for ((s, v), m) in vars.iter_mut().zip(r).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        let mut stds = Vec::with_capacity(w);
        for (j, (v, m)) in vars.iter().zip(&means).enumerate() {
            let sd = (v / n as f64).sqrt();
            if !(sd > 1e-12 * (1.0 + m.abs())) {
                return Err(Error::DegenerateFeature {
                    column: j,
                    name: x.names()[j].clone(),
                });
            }
            stds.push(sd);
        }
        Ok(Self {
            means,
            stds,
            fitted: true,
        })
    }

    fn check(&self, width: usize) -> Result<()> {
        if !self.fitted {
            return Err(Error::Spec("scaler has not been fitted".into()));
        }
        if width != self.means.len() {
            return Err(Error::Shape {
                context: "scaler width",
                expected: self.means.len(),
                got: width,
            });
        }
        Ok(())
    }

    pub fn apply(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.check(x.n_cols())?;
        let mut out = x.clone();
        let w = x.n_cols();
        for (k, v) in out.as_mut_slice().iter_mut().enumerate() {
            let j = k % w;
            *v = (*v - self.means[j]) / self.stds[j];
        }
        Ok(out)
    }

    pub fn apply_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.means).zip(&self.stds) {
            *v = (*v - m) / s;
        }
    }

    pub fn unscale(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.check(x.n_cols())?;
        let mut out = x.clone();
        let w = x.n_cols();
        for (k, v) in out.as_mut_slice().iter_mut().enumerate() {
            let j = k % w;
            *v = *v * self.stds[j] + self.means[j];
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one(spec: &FeatureSpec, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        spec.apply_row(x, &mut out);
        out
    }

    #[test]
    fn sincos_values() {
        assert_eq!(one(&FeatureSpec::sincos(), &[0.0]), vec![0.0, 1.0]);
        let v = one(&FeatureSpec::sincos(), &[std::f64::consts::FRAC_PI_2]);
        assert_eq!(v[0], 1.0);
        assert!(v[1].abs() < 1e-16);
        assert_eq!(FeatureSpec::sincos().output_dim(2).unwrap(), 4);
        assert_eq!(FeatureSpec::sincos().names(1), vec!["sin_x0", "cos_x0"]);
    }

    #[test]
    fn identity_is_identity() {
        assert_eq!(one(&FeatureSpec::identity(), &[0.3, -7.0]), vec![0.3, -7.0]);
    }

    #[test]
    fn pair_index_out_of_range() {
        let spec = FeatureSpec::single(FeatureKind::PairDistances {
            pairs: vec![(0, 3)],
        });
        assert!(matches!(spec.output_dim(2), Err(Error::Spec(_))));
    }

    #[test]
    fn two_point_standardization() {
        let x = FeatureMatrix::from_rows(&[[0.0], [2.0]]).unwrap();
        let s = Scaler::fit(&x).unwrap();
        assert_eq!((s.means[0], s.stds[0]), (1.0, 1.0));
        assert_eq!(s.apply(&x).unwrap().as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn constant_column_is_degenerate() {
        let x = FeatureMatrix::from_rows(&[[1.0, 3.0], [2.0, 3.0], [5.0, 3.0]]).unwrap();
        match Scaler::fit(&x) {
            Err(Error::DegenerateFeature { column, .. }) => assert_eq!(column, 1),
            other => panic!("expected degenerate feature, got {other:?}"),
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let spec = FeatureSpec {
            blocks: vec![
                FeatureBlock {
                    kind: FeatureKind::SinCos,
                    scale: 0.7,
                },
                FeatureBlock {
                    kind: FeatureKind::PairDistances { pairs: vec![(0, 1)] },
                    scale: 2.0,
                },
                FeatureBlock {
                    kind: FeatureKind::Identity,
                    scale: 1.0,
                },
            ],
        };
        let x = [0.4, -1.1];
        let jac = spec.jacobian(&x);
        let h = 1e-6;
        let m = spec.output_dim(2).unwrap();
        for j in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let (fp, fm) = (one(&spec, &xp), one(&spec, &xm));
            for i in 0..m {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!((fd - jac[i * 2 + j]).abs() < 1e-8);
            }
        }
    }

    proptest! {
        #[test]
        fn scaler_round_trip(rows in prop::collection::vec(prop::array::uniform3(-50.0f64..50.0), 3..40)) {
            let x = FeatureMatrix::from_rows(&rows).unwrap();
            if let Ok(s) = Scaler::fit(&x) {
                let z = s.apply(&x).unwrap();
                for j in 0..3 {
                    let col = z.column(j);
                    let mean = col.iter().sum::<f64>() / col.len() as f64;
                    let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / col.len() as f64;
                    prop_assert!(mean.abs() < 1e-10);
                    prop_assert!((var - 1.0).abs() < 1e-8);
                }
                let back = s.unscale(&z).unwrap();
                for (a, b) in back.as_slice().iter().zip(x.as_slice()) {
                    prop_assert!((a - b).abs() < 1e-10);
                }
            }
        }

        #[test]
        fn block_scale_is_linear(x in prop::array::uniform2(-3.0f64..3.0), s in -4.0f64..4.0) {
            let base = FeatureSpec::sincos();
            let mut scaled = base.clone();
            scaled.blocks[0].scale = s;
            let a = one(&base, &x);
            let b = one(&scaled, &x);
            for (u, v) in a.iter().zip(&b) {
                prop_assert_eq!(s * u, *v);
            }
        }
    }
}
