//! Random model bundles, compensation states and weights for checking the
//! QP assembly against direct objective evaluation.

#![allow(dead_code)]

use boiler_core::compensation::CompensationState;
use boiler_core::dataset::FeatureLayout;
use boiler_core::objective::{ControlConstraints, ObjectiveWeights};
use boiler_core::svr::{LinearModel, ModelBundle, SvrConfig, TargetScaling};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Case {
    pub bundle: ModelBundle,
    pub comp: CompensationState,
    pub m_vec: Vec<f64>,
    pub weights: ObjectiveWeights,
    pub x: Vec<f64>,
}

pub fn case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nz = rng.random_range(1..=8);
    let nc = rng.random_range(1..=12);
    let nm = rng.random_range(0..=10);
    let mut models = Vec::new();
    let mut names = Vec::new();
    for i in 0..nz + 2 {
        let name = if i < nz { format!("zone{i}") } else { format!("side{}", i - nz) };
        let w: Vec<f64> = (0..nc + nm).map(|_| rng.random_range(-3.0..3.0)).collect();
        models.push(LinearModel::from_raw(&name, Some(FeatureLayout::B), nc, w, rng.random_range(-50.0..50.0)));
        names.push(name);
    }
    let bundle = ModelBundle {
        schema_hash: "random".into(),
        layout: FeatureLayout::B,
        svr: SvrConfig::default(),
        n_temperatures: nz,
        scaling: TargetScaling {
            temp_center: rng.random_range(-10.0..10.0),
            temp_scale: rng.random_range(0.5..20.0),
            o2_center: rng.random_range(-1.0..1.0),
            o2_scale: rng.random_range(0.1..2.0),
        },
        models,
    };
    let mut comp = CompensationState::new(rng.random_range(1..6), names).unwrap();
    for step in 0..rng.random_range(0..8u64) {
        comp.mark_step(step);
        for t in 0..nz + 2 {
            comp.observe(t, rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)).unwrap();
        }
    }
    let weights = ObjectiveWeights {
        lambda_var: rng.random_range(0.0..3.0),
        lambda_diff: rng.random_range(0.0..3.0),
        lambda_temp: rng.random_range(0.0..3.0),
        lambda_o2: rng.random_range(0.0..3.0),
    };
    Case {
        bundle,
        comp,
        m_vec: (0..nm).map(|_| rng.random_range(-5.0..5.0)).collect(),
        weights,
        x: (0..nc).map(|_| rng.random_range(-5.0..5.0)).collect(),
    }
}

pub fn free(n: usize) -> ControlConstraints {
    ControlConstraints::boxed(vec![-1e3; n], vec![1e3; n])
}
