#[path = "support/linear_draws.rs"]
mod linear_draws;

use boiler_core::dataset::FeatureLayout;
use boiler_core::linalg::Matrix;
use boiler_core::plantsim::{generate_dataset, PlantSpec, Policy};
use boiler_core::svr::{fit, fit_all, SvrConfig};
use linear_draws::{draw, outlier_trial};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn noiseless_weights_recovered() {
    for seed in 0..5 {
        let dr = draw(seed, 300, 6);
        let cfg = SvrConfig { epsilon: 0.0, tol: 1e-8, max_passes: 20_000, ..Default::default() };
        let m = fit(&Matrix::from_rows(&dr.x), &dr.y, &cfg).unwrap();
        assert!(m.converged, "seed {seed}");
        for (got, want) in m.raw_weights().iter().zip(&dr.w) {
            assert!((got - want).abs() <= 1e-3 * want.abs(), "seed {seed}: {got} vs {want}");
        }
        assert!((m.intercept - dr.b).abs() <= 1e-3 * dr.b.abs().max(1.0));
        assert!((m.predict(&dr.x[7]).unwrap() - dr.y[7]).abs() <= 1e-6);
    }
}

#[test]
fn robust_to_heavy_tailed_outliers() {
    let trials = 50;
    let wins = (0..trials)
        .filter(|&seed| {
            let (svr, ls) = outlier_trial(seed);
            svr <= ls
        })
        .count() as u64;
    assert!(wins * 10 >= trials * 9, "svr beat least squares in {wins}/{trials}");
}

#[test]
fn prediction_equals_split_dot_product() {
    let dr = draw(3, 200, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let y: Vec<f64> = dr.y.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
    let m = fit(&Matrix::from_rows(&dr.x), &y, &SvrConfig::default())
        .unwrap()
        .with_meta("t", FeatureLayout::B, 2);
    for r in dr.x.iter().take(20) {
        let mut manual = m.intercept;
        for (w, v) in m.weights_controls.iter().zip(&r[..2]) {
            manual += w * v;
        }
        for (w, v) in m.weights_measurements.iter().zip(&r[2..]) {
            manual += w * v;
        }
        let p = m.predict(r).unwrap();
        assert!((p - manual).abs() <= 1e-12 * (1.0 + manual.abs()), "{p} vs {manual}");
        assert!((m.predict_split(&r[..2], &r[2..]).unwrap() - manual).abs() <= 1e-12 * (1.0 + manual.abs()));
    }
    // affine in the features
    let (a, b, al) = (&dr.x[0], &dr.x[1], 0.3);
    let mix: Vec<f64> = a.iter().zip(b).map(|(u, v)| al * u + (1.0 - al) * v).collect();
    let lhs = m.predict(&mix).unwrap();
    let rhs = al * m.predict(a).unwrap() + (1.0 - al) * m.predict(b).unwrap();
    assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
}

#[test]
fn scaling_targets_scales_weights() {
    let dr = draw(5, 250, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let y: Vec<f64> = dr.y.iter().map(|v| v + rng.random_range(-2.0..2.0)).collect();
    let x = Matrix::from_rows(&dr.x);
    let cfg = SvrConfig { tol: 1e-10, max_passes: 20_000, ..Default::default() };
    let m1 = fit(&x, &y, &cfg).unwrap();
    let k = 3.7;
    let yk: Vec<f64> = y.iter().map(|v| k * v).collect();
    let mk = fit(&x, &yk, &cfg).unwrap();
    for (a, b) in m1.raw_weights().iter().zip(mk.raw_weights()) {
        assert!((k * a - b).abs() <= 1e-8 * b.abs().max(1e-300), "{} vs {b}", k * a);
    }
    assert!((k * m1.intercept - mk.intercept).abs() <= 1e-8 * mk.intercept.abs());
}

#[test]
fn plant_bundle_converges_and_is_repeatable() {
    let spec = PlantSpec::default();
    let ds = generate_dataset(&spec, 2000, &Policy::RandomWalk).unwrap();
    let a = fit_all(&ds, FeatureLayout::c(2), &SvrConfig::default()).unwrap();
    let b = fit_all(&ds, FeatureLayout::c(2), &SvrConfig::default()).unwrap();
    assert_eq!(a.models.len(), 8);
    assert!(a.all_converged());
    assert_eq!(a, b);
    for m in &a.models {
        assert_eq!(m.n_features(), FeatureLayout::c(2).width(&ds.schema));
        assert_eq!(m.weights_controls.len() + m.weights_measurements.len(), m.n_features());
        assert!(m.feature_scales.iter().all(|s| *s > 0.0));
    }
}
