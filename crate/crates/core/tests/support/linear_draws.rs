//! Synthetic linear regression draws and an ordinary least squares
//! reference fit.

#![allow(dead_code)]

use boiler_core::linalg::Matrix;
use boiler_core::svr::{fit, SvrConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

pub struct Draw {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub w: Vec<f64>,
    pub b: f64,
}

pub fn draw(seed: u64, n: usize, d: usize) -> Draw {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..3.0) * if rng.random() { 1.0 } else { -1.0 }).collect();
    let b = rng.random_range(-5.0..5.0);
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
    let y = x.iter().map(|r| r.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b).collect();
    Draw { x, y, w, b }
}

/// Ordinary least squares via the normal equations.
pub fn least_squares(x: &[Vec<f64>], y: &[f64]) -> (Vec<f64>, f64) {
    let d = x[0].len();
    let a = DMatrix::from_fn(x.len(), d + 1, |i, j| if j < d { x[i][j] } else { 1.0 });
    let yv = DVector::from_column_slice(y);
    let beta = (a.transpose() * &a).lu().solve(&(a.transpose() * yv)).unwrap();
    (beta.as_slice()[..d].to_vec(), beta[d])
}

/// One contaminated-data trial: 400 training rows with N(0, 0.5^2) noise and
/// 5% outliers of 10 * t(1.5), scored on 400 clean holdout rows. Returns the
/// holdout MSE of the default epsilon-SVR and of least squares.
pub fn outlier_trial(seed: u64) -> (f64, f64) {
    let n_train = 400;
    let dr = draw(1000 + seed, n_train + 400, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = StudentT::new(1.5).unwrap();
    let mut y = dr.y.clone();
    for v in y[..n_train].iter_mut() {
        let e: f64 = StandardNormal.sample(&mut rng);
        *v += 0.5 * e;
        if rng.random::<f64>() < 0.05 {
            *v += 10.0 * t.sample(&mut rng);
        }
    }
    let (xtr, ytr) = (&dr.x[..n_train], &y[..n_train]);
    let m = fit(&Matrix::from_rows(xtr), ytr, &SvrConfig::default()).unwrap();
    let (lw, lb) = least_squares(xtr, ytr);
    let (mut svr_mse, mut ls_mse) = (0.0, 0.0);
    for (r, truth) in dr.x[n_train..].iter().zip(&dr.y[n_train..]) {
        svr_mse += (m.predict(r).unwrap() - truth).powi(2);
        let ls = r.iter().zip(&lw).map(|(a, c)| a * c).sum::<f64>() + lb;
        ls_mse += (ls - truth).powi(2);
    }
    (svr_mse / 400.0, ls_mse / 400.0)
}
