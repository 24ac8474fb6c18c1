//! Fixtures shared by the benchmarks.

use tvde_core::worldbench::{hstack, simulate};
use tvde_core::{
    Activation, CvPipeline, FeatureMatrix, FeatureSpec, MlpSpec, PotentialSpec, Thermostat, VdeModel,
};

/// Untrained sin/cos → 4-16-16-1 swish pipeline over two angles.
pub fn angle_pipeline() -> CvPipeline {
    let vde = VdeModel::init(&MlpSpec::new(&[4, 16, 16, 1], Activation::Swish), 1, 0.1, 1.0, 1)
        .expect("valid spec");
    CvPipeline::new(2, FeatureSpec::sincos(), None, None, &vde).expect("consistent widths")
}

/// `frames` rows (at least 2) of a double-well coordinate plus `spectators`
/// harmonic coordinates. Trajectories include their starting frame.
pub fn tica_data(frames: usize, spectators: usize) -> FeatureMatrix {
    let th = Thermostat::default();
    let steps = (frames - 1) * 10;
    let dw = simulate(&PotentialSpec::double_well(3.0), &th, &[-1.0], steps, 10, 1, None).expect("stable");
    let h = PotentialSpec::harmonic(5.0, vec![0.0; spectators]);
    let sp = simulate(&h, &th, &vec![0.0; spectators], steps, 10, 2, None).expect("stable");
    hstack(&[&dw, &sp]).expect("equal lengths")
}
