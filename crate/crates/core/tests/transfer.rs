mod common;

use common::linear_cv;
use tvde_core::cvexpr::{fit_pipeline, PipelineConfig};
use tvde_core::metad::run_walkers;
use tvde_core::reweight::Estimator;
use tvde_core::transfer::{compare, reweight_runs, TransferConfig};
use tvde_core::worldbench::simulate;
use tvde_core::{
    vde, Activation, FeatureMatrix, FeatureSpec, MetadConfig, MlpSpec, PotentialSpec, Thermostat, TrainConfig,
};

#[test]
fn swapping_source_and_target_negates_ddg() {
    let p = PotentialSpec::double_well(4.0);
    let q = p.clone().perturbed(1, 1.0);
    let th = Thermostat::default();
    let cv = linear_cv(1.0, 0.0);
    let metad = MetadConfig { n_walkers: 2, read_stride: 5_000, ..MetadConfig::default() }
        .with_training_range(-1.5, 1.5)
        .unwrap();
    let cfg = TransferConfig {
        metad: metad.clone(),
        thermostat: th,
        n_steps: 100_000,
        seed: 5,
        n_states: 2,
        fes_bins: 30,
        estimator: Estimator::Tiwary,
        reference_state: Some(0),
        jobs: Some(1),
    };
    let a = run_walkers(&p, &th, &cv, &metad, &[vec![-1.0]], cfg.n_steps, 5, Some(1)).unwrap();
    let b = run_walkers(&q, &th, &cv, &metad, &[vec![-1.0]], cfg.n_steps, 6, Some(1)).unwrap();
    let ra = reweight_runs(&a, cfg.estimator, 100).unwrap();
    let rb = reweight_runs(&b, cfg.estimator, 100).unwrap();
    let fwd = compare(("a", "b"), (&a, &ra), (&b, &rb), &cfg, 1.0).unwrap();
    let rev = compare(("b", "a"), (&b, &rb), (&a, &ra), &cfg, 1.0).unwrap();
    assert_eq!(fwd.centers, rev.centers);
    for (x, y) in fwd.ddg.iter().zip(&rev.ddg) {
        let (x, y) = (x.unwrap(), y.unwrap());
        assert!((x + y).abs() <= 1e-9, "{x} vs {y}");
    }
    // The deepened basin gains population.
    assert!(fwd.ddg[1].unwrap() < 0.0);
}

fn basin_means(values: &[f64], xs: &[f64]) -> [f64; 3] {
    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    for (x, z) in xs.iter().zip(values) {
        let b = if *x < -1.0 {
            0
        } else if *x > 1.0 {
            2
        } else {
            1
        };
        sums[b] += z;
        counts[b] += 1;
    }
    assert!(counts.iter().all(|c| *c > 0), "a basin was never visited: {counts:?}");
    [0, 1, 2].map(|b| sums[b] / counts[b] as f64)
}

fn monotone(m: [f64; 3]) -> bool {
    (m[0] < m[1] && m[1] < m[2]) || (m[0] > m[1] && m[1] > m[2])
}

#[test]
fn source_cv_keeps_target_basins_ordered() {
    let source = PotentialSpec::triple_well([4.0, 4.0, 4.0]);
    let th = Thermostat::with_kt(1.5);
    let traj = simulate(&source, &th, &[0.0], 600_000, 10, 21, None).unwrap();
    let coords = FeatureMatrix::new(vec!["x0".into()], traj.coordinate(0)).unwrap();
    let cfg = PipelineConfig {
        features: FeatureSpec::identity(),
        standardize: true,
        tica: None,
        vde: MlpSpec::new(&[1, 16, 16, 1], Activation::Swish),
        lag: 10,
        train: TrainConfig::new(3, 1e-3, 22),
        noise: vde::DEFAULT_NOISE,
        alpha: vde::DEFAULT_ALPHA,
    };
    let cv = fit_pipeline(&[&coords], &cfg).unwrap().pipeline;
    for (basin, delta) in [(0, 2.0), (1, -2.0), (2, 2.0)] {
        let target = source.clone().perturbed(basin, delta);
        let t = simulate(&target, &th, &[0.0], 600_000, 10, 23, None).unwrap();
        let xs = t.coordinate(0);
        let s: Vec<f64> = xs.iter().map(|x| cv.evaluate(&[*x]).unwrap()).collect();
        let m = basin_means(&s, &xs);
        assert!(monotone(m), "basin {basin}, delta {delta}: {m:?}");
    }
}
