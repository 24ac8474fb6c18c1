use tvde_bench::{angle_pipeline, tica_data};

#[test]
fn tica_data_has_requested_shape() {
    let m = tica_data(500, 3);
    assert_eq!((m.n_rows(), m.n_cols()), (500, 4));
    assert!(m.rows().flatten().all(|v| v.is_finite()));
}

#[test]
fn angle_pipeline_is_periodic() {
    let p = angle_pipeline();
    let tau = std::f64::consts::TAU;
    let (a, b) = (p.evaluate(&[0.3, -1.2]).unwrap(), p.evaluate(&[0.3 + tau, -1.2 - tau]).unwrap());
    assert!((a - b).abs() <= 1e-12);
    assert_eq!(p.gradient(&[0.3, -1.2]).unwrap().len(), 2);
}
