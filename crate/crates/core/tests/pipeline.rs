use tvde_core::cvexpr::{compile, fit_pipeline, parse, PipelineConfig, TicaStageConfig};
use tvde_core::worldbench::{hstack, simulate};
use tvde_core::{vde, Activation, CvPipeline, FeatureSpec, MlpSpec, PotentialSpec, Thermostat, TrainConfig};

fn config(tica: Option<TicaStageConfig>, widths: &[usize]) -> PipelineConfig {
    PipelineConfig {
        features: FeatureSpec::identity(),
        standardize: true,
        tica,
        vde: MlpSpec::new(widths, Activation::Tanh),
        lag: 5,
        train: TrainConfig::new(1, 1e-3, 4),
        noise: vde::DEFAULT_NOISE,
        alpha: vde::DEFAULT_ALPHA,
    }
}

#[test]
fn fitted_pipeline_reproduces_training_values_and_survives_json() {
    let th = Thermostat::default();
    let mb = simulate(&PotentialSpec::mueller_brown(), &th, &[-0.55, 1.44], 50_000, 10, 1, None).unwrap();
    let sp = simulate(&PotentialSpec::harmonic(4.0, vec![0.0; 2]), &th, &[0.0; 2], 50_000, 10, 2, None).unwrap();
    let coords = hstack(&[&mb, &sp]).unwrap();
    let tica = TicaStageConfig { lag: 5, n_tics: 2, shrinkage: None, penalty: 0.0 };
    let fitted = fit_pipeline(&[&coords], &config(Some(tica), &[2, 8, 1])).unwrap();
    let p = &fitted.pipeline;

    for (i, row) in coords.rows().enumerate().step_by(97) {
        assert!((p.evaluate(row).unwrap() - fitted.cv_values[i]).abs() <= 1e-12);
    }

    let back: CvPipeline = serde_json::from_str(&serde_json::to_string(p).unwrap()).unwrap();
    let expr = parse(&compile(&back).unwrap().text).unwrap();
    for row in coords.rows().step_by(211) {
        let v = p.evaluate(row).unwrap();
        assert_eq!(back.evaluate(row).unwrap().to_bits(), v.to_bits());
        assert!((expr.eval(row) - v).abs() <= 1e-9);
    }
}

#[test]
fn encoder_width_must_match_upstream() {
    let th = Thermostat::default();
    let t = simulate(&PotentialSpec::double_well(3.0), &th, &[-1.0], 10_000, 10, 1, None).unwrap();
    let coords = tvde_core::FeatureMatrix::new(vec!["x0".into()], t.coordinate(0)).unwrap();
    assert!(fit_pipeline(&[&coords], &config(None, &[2, 4, 1])).is_err());
    assert!(fit_pipeline(&[&coords], &config(None, &[1, 4, 1])).is_ok());
}
