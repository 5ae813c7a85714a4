//! Dense and finite-difference oracles shared by the integration tests.
#![allow(dead_code)]

use dgmrf::conv::assemble_dense;
use dgmrf::grid::{Covariates, Dataset, GridTensor, Mask};
use dgmrf::model::{Architecture, DgmrfModel, FilterType};
use dgmrf::vi::{EpsSample, VariationalParams, TREND_PRIOR_PRECISION};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Dense `G` of a linear model.
pub fn dense_g(model: &DgmrfModel, h: usize, w: usize) -> DMatrix<f64> {
    assemble_dense(|x| model.apply_g(x).unwrap(), h, w, model.channels()).unwrap()
}

/// `log |det A|` from the LU factors.
pub fn dense_logdet(a: &DMatrix<f64>) -> f64 {
    let lu = a.clone().lu();
    lu.u().diagonal().iter().map(|v| v.abs().ln()).sum()
}

/// Random model with parameters spread well beyond the near-identity start.
pub fn random_model(
    arch: &Architecture,
    sigma: f64,
    sigma_trainable: bool,
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> DgmrfModel {
    let mut m = DgmrfModel::random(arch, sigma, sigma_trainable, rng.random()).unwrap();
    let p: Vec<f64> = m.params().iter().map(|v| v + rng.random_range(-scale..scale)).collect();
    m.set_params(&p).unwrap();
    m
}

pub fn arch(layers: usize, filter: FilterType, channels: usize, nonlinear: bool) -> Architecture {
    Architecture {
        layers,
        filter,
        channels,
        nonlinear,
        train_bias: true,
        orientations: None,
    }
}

/// Random observations with roughly `missing` of the pixels removed.
pub fn random_dataset(h: usize, w: usize, c: usize, missing: f64, rng: &mut ChaCha8Rng) -> Dataset {
    let y = GridTensor::from_vec(h, w, c, (0..h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let mut obs: Vec<bool> = (0..h * w).map(|_| rng.random_range(0.0..1.0) >= missing).collect();
    obs[0] = true;
    Dataset::new(y, Mask::from_vec(h, w, obs).unwrap()).unwrap()
}

/// Adds covariates `(1, u, v)` with random `u, v`.
pub fn with_trend(d: Dataset, rng: &mut ChaCha8Rng) -> Dataset {
    let n = d.height() * d.width();
    let f: Vec<f64> = (0..n)
        .flat_map(|_| [1.0, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect();
    d.with_covariates(Covariates::new(n, 3, f).unwrap()).unwrap()
}

pub fn random_q(data: &Dataset, rng: &mut ChaCha8Rng) -> VariationalParams {
    let mut q = VariationalParams::from_data(data);
    let p: Vec<f64> = q.params().iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
    q.set_params(&p).unwrap();
    q
}

/// Dense trend-extended posterior precision `Q~` and mean right-hand side `c`.
pub fn dense_posterior(model: &DgmrfModel, data: &Dataset) -> (DMatrix<f64>, DVector<f64>) {
    let (h, w) = (data.height(), data.width());
    let n = data.y().len();
    let g = dense_g(model, h, w);
    let b = DVector::from_vec(model.model_bias(h, w).unwrap().into_values());
    let m = DMatrix::from_diagonal(&DVector::from_vec(data.mask().weights(data.channels())));
    let s2 = model.sigma().powi(-2);
    let y = DVector::from_column_slice(data.y().values());
    let (p, fm) = match data.covariates() {
        Some(f) => (f.cols(), DMatrix::from_fn(n, f.cols(), |i, k| f.get(i, k))),
        None => (0, DMatrix::zeros(n, 0)),
    };
    // [I F]
    let mut a = DMatrix::zeros(n, n + p);
    a.view_mut((0, 0), (n, n)).fill_with_identity();
    a.view_mut((0, n), (n, p)).copy_from(&fm);
    let mut prior = DMatrix::zeros(n + p, n + p);
    prior.view_mut((0, 0), (n, n)).copy_from(&(g.transpose() * &g));
    let v = TREND_PRIOR_PRECISION;
    for k in 0..p {
        prior[(n + k, n + k)] = v * v;
    }
    let q = prior + a.transpose() * &m * &a * s2;
    let mut c = a.transpose() * &m * y * s2;
    let gtb = g.transpose() * b;
    for i in 0..n {
        c[i] -= gtb[i];
    }
    (q, c)
}

/// Dense `log p(y)` over the observed entries, with `beta` integrated out under a trend.
pub fn dense_log_marginal(model: &DgmrfModel, data: &Dataset) -> f64 {
    let (h, w) = (data.height(), data.width());
    let n = data.y().len();
    let g = dense_g(model, h, w);
    let ginv = g.clone().try_inverse().unwrap();
    let b = DVector::from_vec(model.model_bias(h, w).unwrap().into_values());
    let mu = -(&ginv * b);
    let mut cov = &ginv * ginv.transpose();
    if let Some(f) = data.covariates() {
        let fm = DMatrix::from_fn(n, f.cols(), |i, k| f.get(i, k));
        cov += &fm * fm.transpose() / TREND_PRIOR_PRECISION.powi(2);
    }
    let obs: Vec<usize> = (0..n)
        .filter(|&i| data.mask().weights(data.channels())[i] > 0.0)
        .collect();
    let k = obs.len();
    let s = DMatrix::from_fn(k, k, |a, b| {
        cov[(obs[a], obs[b])] + if a == b { model.sigma().powi(2) } else { 0.0 }
    });
    let r = DVector::from_fn(k, |a, _| data.y().values()[obs[a]] - mu[obs[a]]);
    let chol = s.cholesky().unwrap();
    let logdet: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let quad = r.dot(&chol.solve(&r));
    -0.5 * (k as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
}

/// Largest violation of `|g - fd| <= rel * max(|g|, |fd|) + abs` over all
/// parameters, using central differences of `f`; returns `(worst ratio, index)`.
pub fn fd_check<F>(f: F, x: &[f64], grad: &[f64], rel: f64, abs: f64) -> (f64, usize)
where
    F: Fn(&[f64]) -> f64,
{
    let mut worst = (0.0, 0);
    let mut p = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-5 * x[i].abs().max(1.0);
        p[i] = x[i] + h;
        let up = f(&p);
        p[i] = x[i] - h;
        let down = f(&p);
        p[i] = x[i];
        let fd = (up - down) / (2.0 * h);
        let allowed = rel * grad[i].abs().max(fd.abs()) + abs;
        let ratio = (grad[i] - fd).abs() / allowed;
        if ratio > worst.0 {
            worst = (ratio, i);
        }
    }
    worst
}

/// Joint parameter vector `[model, variational]`.
pub fn joint_params(model: &DgmrfModel, q: &VariationalParams) -> Vec<f64> {
    model.params().into_iter().chain(q.params()).collect()
}

pub fn split_params(model: &DgmrfModel, q: &VariationalParams, p: &[f64]) -> (DgmrfModel, VariationalParams) {
    let (mut m, mut v) = (model.clone(), q.clone());
    let k = m.param_count();
    m.set_params(&p[..k]).unwrap();
    v.set_params(&p[k..]).unwrap();
    (m, v)
}

pub fn eps_of(rng: &mut ChaCha8Rng, q: &VariationalParams, count: usize) -> Vec<EpsSample> {
    dgmrf::vi::draw_eps(rng, q.len_latent(), q.trend_len(), count)
}
