//! Model systems: analytic potentials and an overdamped Langevin integrator.

mod langevin;
mod potential;

pub use langevin::{
    simulate, BiasGradient, Thermostat, Trajectory, TrajectoryMeta, DEFAULT_SAVE_STRIDE,
};
pub(crate) use langevin::{check_start, Propagator};
pub use potential::{Perturbation, PotentialKind, PotentialSpec};

/// Joins independent trajectories frame by frame into one higher-dimensional
/// feature table (equivalent to sampling a separable potential).
pub fn hstack(parts: &[&Trajectory]) -> crate::Result<crate::FeatureMatrix> {
    let n = parts.iter().map(|t| t.len()).min().unwrap_or(0);
    if n == 0 {
        return Err(crate::Error::Empty("hstack of empty trajectories"));
    }
    let mut names = Vec::new();
    let mut k = 0;
    for t in parts {
        for _ in 0..t.dim() {
            names.push(format!("x{k}"));
            k += 1;
        }
    }
    let mut data = Vec::with_capacity(n * k);
    for i in 0..n {
        for t in parts {
            data.extend_from_slice(t.frame(i));
        }
    }
    crate::FeatureMatrix::new(names, data)
}
