//! Overdamped Langevin (Euler–Maruyama) dynamics.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::potential::PotentialSpec;
use crate::error::{Error, Result};
use crate::matrix::{format_float, parse_float};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thermostat {
    #[serde(default = "Thermostat::default_kt")]
    pub kt: f64,
    #[serde(default = "Thermostat::default_diffusion")]
    pub diffusion: f64,
    #[serde(default = "Thermostat::default_dt")]
    pub dt: f64,
}

impl Default for Thermostat {
    fn default() -> Self {
        Self {
            kt: 1.0,
            diffusion: 1.0,
            dt: 1e-3,
        }
    }
}

impl Thermostat {
    fn default_kt() -> f64 {
        1.0
    }
    fn default_diffusion() -> f64 {
        1.0
    }
    fn default_dt() -> f64 {
        1e-3
    }

    pub fn with_kt(kt: f64) -> Self {
        Self {
            kt,
            ..Self::default()
        }
    }

    /// `diffusion == 0` is accepted and freezes the dynamics.
    pub fn validate(&self) -> Result<()> {
        if !(self.kt > 0.0) || !(self.diffusion >= 0.0) || !(self.dt > 0.0) {
            return Err(Error::Spec(format!(
                "thermostat needs kT > 0, D >= 0, dt > 0 (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// Extra potential acting on the coordinates (a metadynamics bias, say).
pub trait BiasGradient {
    /// Adds the bias gradient at `x` into `grad`.
    fn add_gradient(&self, x: &[f64], grad: &mut [f64]);
}

pub const DEFAULT_SAVE_STRIDE: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub potential: PotentialSpec,
    pub thermostat: Thermostat,
    pub seed: u64,
    pub save_stride: usize,
    pub dt_record: f64,
    pub n_frames: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub potential: PotentialSpec,
    pub thermostat: Thermostat,
    pub seed: u64,
    pub save_stride: usize,
    pub dt_record: f64,
    dim: usize,
    coords: Vec<f64>,
}

impl Trajectory {
    pub fn from_frames(
        potential: PotentialSpec,
        thermostat: Thermostat,
        seed: u64,
        save_stride: usize,
        frames: &[Vec<f64>],
    ) -> Result<Self> {
        let dim = potential.dim();
        let mut coords = Vec::with_capacity(frames.len() * dim);
        for f in frames {
            if f.len() != dim {
                return Err(Error::Shape {
                    context: "trajectory frame",
                    expected: dim,
                    got: f.len(),
                });
            }
            coords.extend_from_slice(f);
        }
        Ok(Self {
            dt_record: thermostat.dt * save_stride as f64,
            potential,
            thermostat,
            seed,
            save_stride,
            dim,
            coords,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    /// Values of coordinate `j` over time.
    pub fn coordinate(&self, j: usize) -> Vec<f64> {
        self.frames().map(|f| f[j]).collect()
    }

    pub fn meta(&self) -> TrajectoryMeta {
        TrajectoryMeta {
            potential: self.potential.clone(),
            thermostat: self.thermostat,
            seed: self.seed,
            save_stride: self.save_stride,
            dt_record: self.dt_record,
            n_frames: self.len(),
        }
    }

    /// Writes `t,x0[,x1...]`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((0..self.dim).map(|j| format!("x{j}")));
        out.write_record(&header)?;
        for (i, f) in self.frames().enumerate() {
            let mut rec = vec![format_float(i as f64 * self.dt_record)];
            rec.extend(f.iter().map(|v| format_float(*v)));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, meta: TrajectoryMeta) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let dim = meta.potential.dim();
        if rdr.headers()?.len() != dim + 1 {
            return Err(Error::Shape {
                context: "trajectory csv columns",
                expected: dim + 1,
                got: rdr.headers()?.len(),
            });
        }
        let mut coords = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            for field in rec.iter().skip(1) {
                coords.push(parse_float(field)?);
            }
        }
        Ok(Self {
            potential: meta.potential,
            thermostat: meta.thermostat,
            seed: meta.seed,
            save_stride: meta.save_stride,
            dt_record: meta.dt_record,
            dim,
            coords,
        })
    }
}

/// Single-step Euler–Maruyama propagator; shared by the plain and biased
/// drivers so both consume the random stream identically.
pub(crate) struct Propagator<'a> {
    potential: &'a PotentialSpec,
    drift: f64,
    noise: f64,
    grad: Vec<f64>,
    limits: Vec<(f64, f64)>,
}

impl<'a> Propagator<'a> {
    pub(crate) fn new(potential: &'a PotentialSpec, th: &Thermostat) -> Result<Self> {
        potential.validate()?;
        th.validate()?;
        let limits = potential
            .domain()
            .into_iter()
            .map(|(lo, hi)| {
                let span = hi - lo;
                (lo - 10.0 * span, hi + 10.0 * span)
            })
            .collect();
        Ok(Self {
            potential,
            drift: th.diffusion / th.kt * th.dt,
            noise: (2.0 * th.diffusion * th.dt).sqrt(),
            grad: vec![0.0; potential.dim()],
            limits,
        })
    }

    pub(crate) fn step(
        &mut self,
        x: &mut [f64],
        rng: &mut ChaCha8Rng,
        bias: Option<&dyn BiasGradient>,
        step: usize,
    ) -> Result<()> {
        self.potential.gradient_into(x, &mut self.grad);
        if let Some(b) = bias {
            b.add_gradient(x, &mut self.grad);
        }
        for ((xi, gi), (lo, hi)) in x.iter_mut().zip(&self.grad).zip(&self.limits) {
            let xi_noise: f64 = StandardNormal.sample(rng);
            *xi += -self.drift * gi + self.noise * xi_noise;
            if !xi.is_finite() || *xi < *lo || *xi > *hi {
                return Err(Error::BlowUp { step, value: *xi });
            }
        }
        Ok(())
    }
}

pub(crate) fn check_start(potential: &PotentialSpec, x0: &[f64]) -> Result<()> {
    if x0.len() != potential.dim() {
        return Err(Error::Shape {
            context: "initial coordinates",
            expected: potential.dim(),
            got: x0.len(),
        });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite initial coordinates {x0:?}")));
    }
    Ok(())
}

/// Integrates `n_steps` and saves `x0` plus every `save_stride`-th state.
pub fn simulate(
    potential: &PotentialSpec,
    th: &Thermostat,
    x0: &[f64],
    n_steps: usize,
    save_stride: usize,
    seed: u64,
    bias: Option<&dyn BiasGradient>,
) -> Result<Trajectory> {
    if n_steps == 0 || save_stride == 0 {
        return Err(Error::Spec("n_steps and save_stride must be >= 1".into()));
    }
    check_start(potential, x0)?;
    let mut prop = Propagator::new(potential, th)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = x0.to_vec();
    let mut coords = Vec::with_capacity((n_steps / save_stride + 1) * x.len());
    coords.extend_from_slice(&x);
    for step in 1..=n_steps {
        prop.step(&mut x, &mut rng, bias, step)?;
        if step % save_stride == 0 {
            coords.extend_from_slice(&x);
        }
    }
    Ok(Trajectory {
        potential: potential.clone(),
        thermostat: *th,
        seed,
        save_stride,
        dt_record: th.dt * save_stride as f64,
        dim: x0.len(),
        coords,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_dynamics_return_start() {
        let th = Thermostat {
            kt: 1.0,
            diffusion: 0.0,
            dt: 1e-3,
        };
        let p = PotentialSpec::double_well(5.0);
        let t = simulate(&p, &th, &[1.0], 1, 1, 3, None).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.frame(1), &[1.0]);
    }

    #[test]
    fn same_seed_same_bits() {
        let p = PotentialSpec::mueller_brown();
        let th = Thermostat::default();
        let a = simulate(&p, &th, &[-0.55, 1.44], 20_000, 10, 9, None).unwrap();
        let b = simulate(&p, &th, &[-0.55, 1.44], 20_000, 10, 9, None).unwrap();
        let c = simulate(&p, &th, &[-0.55, 1.44], 20_000, 10, 10, None).unwrap();
        assert!(a.frames().zip(b.frames()).all(|(x, y)| x
            .iter()
            .zip(y)
            .all(|(u, v)| u.to_bits() == v.to_bits())));
        assert_ne!(a, c);
    }

    #[test]
    fn huge_step_blows_up() {
        let th = Thermostat {
            dt: 0.5,
            ..Thermostat::default()
        };
        let p = PotentialSpec::double_well(50.0);
        let err = simulate(&p, &th, &[2.0], 1000, 1, 1, None).unwrap_err();
        assert!(matches!(err, Error::BlowUp { .. }));
    }

    #[test]
    fn csv_round_trip() {
        let p = PotentialSpec::harmonic(1.0, vec![0.0, 0.0]);
        let t = simulate(&p, &Thermostat::default(), &[0.1, 0.2], 100, 10, 4, None).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let head = String::from_utf8(buf.clone()).unwrap();
        assert!(head.starts_with("t,x0,x1\n"));
        let back = Trajectory::read_csv(buf.as_slice(), t.meta()).unwrap();
        assert_eq!(back, t);
    }
}
