//! Mean-field Gaussian variational posterior, the reparameterized ELBO
//! estimator, Adam, and the training loop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{DgmrfError, Result};
use crate::grad::{elbo_terms_grad, elbo_value};
use crate::grid::Dataset;
use crate::model::DgmrfModel;

/// Prior precision scale `v` of the trend coefficients (`beta ~ N(0, v^-2 I)`).
pub const TREND_PRIOR_PRECISION: f64 = 1e-4;

/// `q(x) = N(nu, diag(s^2))` plus an independent `q(beta)` when a trend is modelled.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalParams {
    pub mean: Vec<f64>,
    pub log_sd: Vec<f64>,
    pub trend: Option<TrendParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendParams {
    pub mean: Vec<f64>,
    pub log_sd: Vec<f64>,
}

/// Standard normal draws for one reparameterized sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsSample {
    pub x: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Draws `count` noise samples for `n` latents and `p` trend coefficients.
pub fn draw_eps(rng: &mut ChaCha8Rng, n: usize, p: usize, count: usize) -> Vec<EpsSample> {
    (0..count)
        .map(|_| EpsSample {
            x: (0..n).map(|_| StandardNormal.sample(rng)).collect(),
            beta: (0..p).map(|_| StandardNormal.sample(rng)).collect(),
        })
        .collect()
}

impl VariationalParams {
    pub fn new(mean: Vec<f64>, log_sd: Vec<f64>) -> Result<Self> {
        if mean.len() != log_sd.len() {
            return Err(DgmrfError::Dimension("mean and log sd lengths differ".into()));
        }
        Ok(VariationalParams {
            mean,
            log_sd,
            trend: None,
        })
    }

    pub fn with_trend(mut self, mean: Vec<f64>, log_sd: Vec<f64>) -> Result<Self> {
        if mean.len() != log_sd.len() {
            return Err(DgmrfError::Dimension("trend mean and log sd lengths differ".into()));
        }
        self.trend = Some(TrendParams { mean, log_sd });
        Ok(self)
    }

    /// `nu` = observations with missing entries set to the observed mean,
    /// `log s = 0`; a trend block starts at `N(0, 1)` when covariates exist.
    pub fn from_data(data: &Dataset) -> Self {
        let fill = data.observed_mean();
        let w = data.mask().weights(data.channels());
        let mean = data
            .y()
            .values()
            .iter()
            .zip(&w)
            .map(|(&y, &m)| if m > 0.0 { y } else { fill })
            .collect::<Vec<_>>();
        let n = mean.len();
        let trend = data.covariates().map(|f| TrendParams {
            mean: vec![0.0; f.cols()],
            log_sd: vec![0.0; f.cols()],
        });
        VariationalParams {
            mean,
            log_sd: vec![0.0; n],
            trend,
        }
    }

    pub fn len_latent(&self) -> usize {
        self.mean.len()
    }

    pub fn trend_len(&self) -> usize {
        self.trend.as_ref().map_or(0, |t| t.mean.len())
    }

    pub fn sd(&self) -> Vec<f64> {
        self.log_sd.iter().map(|v| v.exp()).collect()
    }

    pub fn trend_sd(&self) -> Vec<f64> {
        self.trend
            .as_ref()
            .map_or_else(Vec::new, |t| t.log_sd.iter().map(|v| v.exp()).collect())
    }

    /// `x = nu + s * eps`
    pub fn sample_latent(&self, eps: &[f64]) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.log_sd)
            .zip(eps)
            .map(|((m, ls), e)| m + ls.exp() * e)
            .collect()
    }

    pub fn sample_trend(&self, eps: &[f64]) -> Vec<f64> {
        match &self.trend {
            Some(t) => t
                .mean
                .iter()
                .zip(&t.log_sd)
                .zip(eps)
                .map(|((m, ls), e)| m + ls.exp() * e)
                .collect(),
            None => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.len_latent() + 2 * self.trend_len()
    }

    /// `[nu, log s, nu_beta, log s_beta]`
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(&self.mean);
        out.extend_from_slice(&self.log_sd);
        if let Some(t) = &self.trend {
            out.extend_from_slice(&t.mean);
            out.extend_from_slice(&t.log_sd);
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(DgmrfError::Dimension("variational parameter count mismatch".into()));
        }
        let n = self.len_latent();
        self.mean.copy_from_slice(&p[..n]);
        self.log_sd.copy_from_slice(&p[n..2 * n]);
        if let Some(t) = &mut self.trend {
            let k = t.mean.len();
            t.mean.copy_from_slice(&p[2 * n..2 * n + k]);
            t.log_sd.copy_from_slice(&p[2 * n + k..]);
        }
        Ok(())
    }
}

/// `x = nu + s * eps`
pub fn sample_q(q: &VariationalParams, eps: &[f64]) -> Result<Vec<f64>> {
    if eps.len() != q.len_latent() {
        return Err(DgmrfError::Dimension(
            "noise length differs from the latent size".into(),
        ));
    }
    Ok(q.sample_latent(eps))
}

/// Unbiased ELBO estimate with `samples` draws from a seeded stream
/// (constant terms omitted; see [`elbo_constant`]).
pub fn elbo_estimate(
    model: &DgmrfModel,
    q: &VariationalParams,
    data: &Dataset,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = draw_eps(&mut rng, q.len_latent(), q.trend_len(), samples);
    elbo_value(model, q, data, &eps)
}

/// The constant omitted from the ELBO for `n` latents and `m` observed entries
/// (and `p` trend coefficients with prior precision `v`).
pub fn elbo_constant(n: usize, m: usize, p: usize, v: f64) -> f64 {
    let log2pi = (2.0 * std::f64::consts::PI).ln();
    0.5 * n as f64 - 0.5 * m as f64 * log2pi + if p > 0 { 0.5 * p as f64 + p as f64 * v.ln() } else { 0.0 }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        AdamState {
            first: vec![0.0; len],
            second: vec![0.0; len],
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam step minimising a loss with gradient `grad`.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grad: &[f64]) -> Result<()> {
    if params.len() != grad.len() || params.len() != state.first.len() {
        return Err(DgmrfError::Dimension(
            "Adam parameter, gradient and state lengths differ".into(),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grad[i];
        state.first[i] = state.beta1 * state.first[i] + (1.0 - state.beta1) * g;
        state.second[i] = state.beta2 * state.second[i] + (1.0 - state.beta2) * g * g;
        let m = state.first[i] / c1;
        let v = state.second[i] / c2;
        params[i] -= state.learning_rate * m / (v.sqrt() + state.epsilon);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Reparameterization samples per iteration (`N_q`).
    pub samples: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Invoke the checkpoint callback every this many iterations (0 = never).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 10_000,
            samples: 10,
            learning_rate: 0.01,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: DgmrfModel,
    pub variational: VariationalParams,
    /// `(iteration, loss)` with loss `-ELBO / N`.
    pub trace: Vec<(usize, f64)>,
    pub best_iteration: Option<usize>,
    pub best_loss: f64,
}

/// Trains model and variational parameters; see [`train_with`].
pub fn train(model: &DgmrfModel, q: &VariationalParams, data: &Dataset, config: &TrainConfig) -> Result<TrainResult> {
    train_with(model, q, data, config, |_, _, _| Ok(()))
}

/// Minimises `-ELBO / N` with Adam and returns the parameters with the lowest
/// observed loss. Deterministic given the seed.
///
/// `checkpoint` is called with the best state so far every
/// `config.checkpoint_every` iterations.
pub fn train_with<F>(
    model: &DgmrfModel,
    q: &VariationalParams,
    data: &Dataset,
    config: &TrainConfig,
    mut checkpoint: F,
) -> Result<TrainResult>
where
    F: FnMut(usize, &DgmrfModel, &VariationalParams) -> Result<()>,
{
    if config.samples == 0 || !(config.learning_rate > 0.0) {
        return Err(DgmrfError::InvalidArgument(
            "training needs at least one sample and a positive learning rate".into(),
        ));
    }
    let n = data.y().len() as f64;
    let n_model = model.param_count();
    let mut cur_model = model.clone();
    let mut cur_q = q.clone();
    let mut params: Vec<f64> = cur_model.params().into_iter().chain(cur_q.params()).collect();
    let mut adam = AdamState::new(params.len(), config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut best = (model.clone(), q.clone());
    let mut best_loss = f64::INFINITY;
    let mut best_iteration = None;
    let mut trace = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let eps = draw_eps(&mut rng, cur_q.len_latent(), cur_q.trend_len(), config.samples);
        let (terms, grad) = elbo_terms_grad(&cur_model, &cur_q, data, &eps)?;
        let loss = -terms.total() / n;
        if !loss.is_finite() || !grad.is_finite() {
            let term = terms.non_finite_term().unwrap_or("gradient");
            return Err(DgmrfError::NonFinite {
                iteration: it,
                term: term.to_string(),
            });
        }
        trace.push((it, loss));
        if loss < best_loss {
            best_loss = loss;
            best_iteration = Some(it);
            best = (cur_model.clone(), cur_q.clone());
        }
        let g: Vec<f64> = grad.model.iter().chain(&grad.variational).map(|v| -v / n).collect();
        adam_step(&mut adam, &mut params, &g)?;
        cur_model.set_params(&params[..n_model])?;
        cur_q.set_params(&params[n_model..])?;
        if config.checkpoint_every > 0 && (it + 1) % config.checkpoint_every == 0 {
            checkpoint(it + 1, &best.0, &best.1)?;
        }
    }
    Ok(TrainResult {
        model: best.0,
        variational: best.1,
        trace,
        best_iteration,
        best_loss,
    })
}
