//! Exact posterior of a linear model: matrix-free `Q~ = G^T G + sigma^-2 I_m`,
//! CG mean, perturbation sampling and marginal variances.
//!
//! With covariates `F` the latent vector is extended to `u = (x, beta)` with
//! prior precision `v^2 I` on `beta`, and the measurement mean becomes `x + F beta`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cg::{default_max_iter, CgSolution, DEFAULT_TOLERANCE};
use crate::error::{DgmrfError, Result};
use crate::grid::{Covariates, Dataset, GridTensor};
use crate::model::DgmrfModel;
use crate::vi::{draw_eps, VariationalParams, TREND_PRIOR_PRECISION};

pub use crate::cg::cg_solve;

/// Default number of posterior samples for variance estimation.
pub const DEFAULT_VARIANCE_SAMPLES: usize = 100;

#[derive(Debug, Clone)]
pub struct PosteriorOperator<'a> {
    model: &'a DgmrfModel,
    height: usize,
    width: usize,
    mask: Vec<f64>,
    sigma: f64,
    trend: Option<(&'a Covariates, f64)>,
}

impl<'a> PosteriorOperator<'a> {
    /// Operator for `data`; a trend block is included when the dataset has covariates.
    pub fn new(model: &'a DgmrfModel, data: &'a Dataset) -> Result<Self> {
        if !model.is_linear() {
            return Err(DgmrfError::UnsupportedModel(
                "the exact posterior requires a linear model".into(),
            ));
        }
        if model.channels() != data.channels() {
            return Err(DgmrfError::Dimension(format!(
                "model has {} channels, data has {}",
                model.channels(),
                data.channels()
            )));
        }
        Ok(PosteriorOperator {
            model,
            height: data.height(),
            width: data.width(),
            mask: data.mask().weights(data.channels()),
            sigma: model.sigma(),
            trend: data.covariates().map(|f| (f, TREND_PRIOR_PRECISION)),
        })
    }

    /// Number of latent field entries `N`.
    pub fn latent_len(&self) -> usize {
        self.mask.len()
    }

    pub fn trend_len(&self) -> usize {
        self.trend.map_or(0, |(f, _)| f.cols())
    }

    /// `N + p`
    pub fn len(&self) -> usize {
        self.latent_len() + self.trend_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    fn grid(&self, v: &[f64]) -> GridTensor {
        GridTensor::from_vec(self.height, self.width, self.model.channels(), v.to_vec()).expect("operator shape")
    }

    fn gtg(&self, x: &[f64]) -> Vec<f64> {
        let gx = self.model.apply_g(&self.grid(x)).expect("linear model");
        self.model.apply_gt(&gx).expect("linear model").into_values()
    }

    /// `m * (x + F beta)`
    fn masked_mean(&self, x: &[f64], beta: &[f64]) -> Vec<f64> {
        let fb = self.trend.map(|(f, _)| f.apply(beta));
        x.iter()
            .enumerate()
            .map(|(i, &xi)| self.mask[i] * (xi + fb.as_ref().map_or(0.0, |fb| fb[i])))
            .collect()
    }

    fn check_len(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.len() {
            return Err(DgmrfError::Dimension(format!(
                "vector of length {} for an operator of size {}",
                u.len(),
                self.len()
            )));
        }
        Ok(())
    }

    /// `Q~ u`
    pub fn matvec(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u)?;
        let n = self.latent_len();
        let (x, beta) = u.split_at(n);
        let s2 = 1.0 / (self.sigma * self.sigma);
        let r = self.masked_mean(x, beta);
        let mut out = self.gtg(x);
        for (o, ri) in out.iter_mut().zip(&r) {
            *o += s2 * ri;
        }
        if let Some((f, v)) = self.trend {
            let ft = f.apply_transpose(&r);
            out.extend(beta.iter().zip(ft).map(|(b, t)| v * v * b + s2 * t));
        }
        Ok(out)
    }

    /// `diag(Q~)`
    pub fn diagonal(&self) -> Result<Vec<f64>> {
        let s2 = 1.0 / (self.sigma * self.sigma);
        let mut d = self.model.gram_diagonal(self.height, self.width)?;
        for (di, m) in d.iter_mut().zip(&self.mask) {
            *di += s2 * m;
        }
        if let Some((f, v)) = self.trend {
            for k in 0..f.cols() {
                let s: f64 = (0..f.rows()).map(|i| self.mask[i] * f.get(i, k).powi(2)).sum();
                d.push(v * v + s2 * s);
            }
        }
        Ok(d)
    }

    /// Stacks `[a; 0] + sigma^-2 [I; F^T] w` for a latent-sized `a` and data-sized `w`.
    fn stack(&self, a: Vec<f64>, w: &[f64]) -> Vec<f64> {
        let s2 = 1.0 / (self.sigma * self.sigma);
        let mut out: Vec<f64> = a.iter().zip(w).map(|(ai, wi)| ai + s2 * wi).collect();
        if let Some((f, _)) = self.trend {
            out.extend(f.apply_transpose(w).into_iter().map(|t| s2 * t));
        }
        out
    }

    /// Right-hand side `c` of the mean equation `Q~ mu = c`.
    pub fn mean_rhs(&self, data: &Dataset) -> Result<Vec<f64>> {
        let b = self.model.model_bias(self.height, self.width)?;
        let gtb = self.model.apply_gt(&b)?.into_values();
        let w: Vec<f64> = data.y().values().iter().zip(&self.mask).map(|(y, m)| m * y).collect();
        Ok(self.stack(gtb.into_iter().map(|v| -v).collect(), &w))
    }

    /// Right-hand side of the perturbed mean equation for noise `u1` (length `N + p`)
    /// and `u2` (length `N`).
    pub fn sample_rhs(&self, data: &Dataset, u1: &[f64], u2: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u1)?;
        let n = self.latent_len();
        if u2.len() != n {
            return Err(DgmrfError::Dimension(format!(
                "u2 has length {}, expected {n}",
                u2.len()
            )));
        }
        let b = self.model.model_bias(self.height, self.width)?;
        let shifted: Vec<f64> = u1[..n].iter().zip(b.values()).map(|(u, b)| u - b).collect();
        let a = self.model.apply_gt(&self.grid(&shifted))?.into_values();
        let w: Vec<f64> = (0..n)
            .map(|i| self.mask[i] * (data.y().values()[i] + self.sigma * u2[i]))
            .collect();
        let mut out = self.stack(a, &w);
        if let Some((_, v)) = self.trend {
            for (o, u) in out[n..].iter_mut().zip(&u1[n..]) {
                *o += v * u;
            }
        }
        Ok(out)
    }

    /// Solves `Q~ x = rhs` with the default iteration cap.
    pub fn solve(&self, rhs: &[f64], tol: f64) -> Result<CgSolution> {
        self.check_len(rhs)?;
        cg_solve(
            |u| self.matvec(u).expect("length checked"),
            rhs,
            tol,
            default_max_iter(self.len()),
        )
    }
}

/// `Q~ u`
pub fn qtilde_matvec(op: &PosteriorOperator<'_>, u: &[f64]) -> Result<Vec<f64>> {
    op.matvec(u)
}

/// Solves `Q~ mu = -G^T b + sigma^-2 y` (stacked with `sigma^-2 F^T y` under a trend).
pub fn posterior_mean(op: &PosteriorOperator<'_>, data: &Dataset, tol: f64) -> Result<CgSolution> {
    op.solve(&op.mean_rhs(data)?, tol)
}

/// One exact posterior draw by perturbing the mean equation with
/// standard normal `u1` and `u2`.
pub fn posterior_sample(
    op: &PosteriorOperator<'_>,
    data: &Dataset,
    u1: &[f64],
    u2: &[f64],
    tol: f64,
) -> Result<Vec<f64>> {
    Ok(op.solve(&op.sample_rhs(data, u1, u2)?, tol)?.x)
}

/// `count` posterior draws; draw `s` uses stream `s` of a generator seeded with `seed`.
pub fn posterior_samples(
    op: &PosteriorOperator<'_>,
    data: &Dataset,
    count: usize,
    seed: u64,
    tol: f64,
) -> Result<Vec<Vec<f64>>> {
    (0..count)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64);
            let e = draw_eps(&mut rng, op.len(), 0, 2)
                .into_iter()
                .map(|e| e.x)
                .collect::<Vec<_>>();
            posterior_sample(op, data, &e[0], &e[1][..op.latent_len()], tol)
        })
        .collect()
}

fn require_two(samples: &[Vec<f64>]) -> Result<usize> {
    if samples.len() < 2 {
        return Err(DgmrfError::InvalidArgument(format!(
            "variance estimation needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let n = samples[0].len();
    if samples.iter().any(|s| s.len() != n) {
        return Err(DgmrfError::Dimension("samples have different lengths".into()));
    }
    Ok(n)
}

/// Per-coordinate unbiased sample variance.
pub fn mc_variance(samples: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = require_two(samples)?;
    let k = samples.len() as f64;
    Ok((0..n)
        .map(|i| {
            let mean = samples.iter().map(|s| s[i]).sum::<f64>() / k;
            samples.iter().map(|s| (s[i] - mean).powi(2)).sum::<f64>() / (k - 1.0)
        })
        .collect())
}

/// Simple Rao-Blackwellized variances `1/Q~_ii + Var_s(m_s,i)` with the
/// conditional means `m_s = x_s - D^-1 (Q~ x_s - c)`.
pub fn rbmc_variance(op: &PosteriorOperator<'_>, samples: &[Vec<f64>], c: &[f64]) -> Result<Vec<f64>> {
    require_two(samples)?;
    op.check_len(c)?;
    let d = op.diagonal()?;
    rbmc_with_diagonal(op, samples, c, &d)
}

fn rbmc_with_diagonal(op: &PosteriorOperator<'_>, samples: &[Vec<f64>], c: &[f64], d: &[f64]) -> Result<Vec<f64>> {
    let cond: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|x| {
            let qx = op.matvec(x)?;
            Ok(x.iter()
                .zip(&qx)
                .zip(c)
                .zip(d)
                .map(|(((xi, qi), ci), di)| xi - (qi - ci) / di)
                .collect())
        })
        .collect::<Result<_>>()?;
    let var = mc_variance(&cond)?;
    Ok(var.iter().zip(d).map(|(v, di)| 1.0 / di + v).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceMethod {
    /// Simple RBMC for plain linear models, Monte Carlo with a trend.
    Auto,
    Rbmc,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferConfig {
    pub tolerance: f64,
    pub method: VarianceMethod,
    pub samples: usize,
    pub seed: u64,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            tolerance: DEFAULT_TOLERANCE,
            method: VarianceMethod::Auto,
            samples: DEFAULT_VARIANCE_SAMPLES,
            seed: 0,
        }
    }
}

/// How a summary was computed.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodTags {
    /// `"cg"` or `"variational"`.
    pub mean: &'static str,
    /// `"rbmc"`, `"mc"` or `"variational"`.
    pub variance: &'static str,
    pub cg_tolerance: Option<f64>,
    pub cg_iterations: Option<usize>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendSummary {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

/// Posterior mean and standard deviations of the noise-free field
/// (`x`, or `x + F beta` under a trend).
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub mean: GridTensor,
    pub marginal_sd: GridTensor,
    /// `sqrt(marginal_sd^2 + sigma^2)`
    pub predictive_sd: GridTensor,
    pub trend: Option<TrendSummary>,
    pub method: MethodTags,
}

fn summary_grids(
    data: &Dataset,
    mean: Vec<f64>,
    var: &[f64],
    sigma: f64,
) -> Result<(GridTensor, GridTensor, GridTensor)> {
    let (h, w, c) = data.y().shape();
    let sd: Vec<f64> = var.iter().map(|v| v.max(0.0).sqrt()).collect();
    let pred: Vec<f64> = var.iter().map(|v| (v.max(0.0) + sigma * sigma).sqrt()).collect();
    Ok((
        GridTensor::from_vec(h, w, c, mean)?,
        GridTensor::from_vec(h, w, c, sd)?,
        GridTensor::from_vec(h, w, c, pred)?,
    ))
}

/// Posterior summary: CG mean with RBMC or Monte Carlo variances for linear
/// models, the variational mean and standard deviations otherwise.
pub fn summarize(
    model: &DgmrfModel,
    q: &VariationalParams,
    data: &Dataset,
    config: &InferConfig,
) -> Result<PosteriorSummary> {
    let sigma = model.sigma();
    if !model.is_linear() {
        return summarize_variational(q, data, sigma);
    }
    let op = PosteriorOperator::new(model, data)?;
    let n = op.latent_len();
    let c = op.mean_rhs(data)?;
    let mean = op.solve(&c, config.tolerance)?;
    let method = match config.method {
        VarianceMethod::Auto if op.trend_len() > 0 => VarianceMethod::MonteCarlo,
        VarianceMethod::Auto => VarianceMethod::Rbmc,
        m => m,
    };
    let samples = posterior_samples(&op, data, config.samples, config.seed, config.tolerance)?;

    let (field_mean, field_var, trend) = match data.covariates() {
        Some(f) if op.trend_len() > 0 => {
            let fields: Vec<Vec<f64>> = samples.iter().map(|s| add_trend(f, &s[..n], &s[n..])).collect();
            let betas: Vec<Vec<f64>> = samples.iter().map(|s| s[n..].to_vec()).collect();
            let var = match method {
                VarianceMethod::Rbmc => {
                    return Err(DgmrfError::InvalidArgument(
                        "RBMC variances are not available with a trend; use Monte Carlo".into(),
                    ))
                }
                _ => mc_variance(&fields)?,
            };
            let trend = TrendSummary {
                mean: mean.x[n..].to_vec(),
                sd: mc_variance(&betas)?.iter().map(|v| v.sqrt()).collect(),
            };
            (add_trend(f, &mean.x[..n], &mean.x[n..]), var, Some(trend))
        }
        _ => {
            let var = match method {
                VarianceMethod::MonteCarlo => mc_variance(&samples)?,
                _ => rbmc_variance(&op, &samples, &c)?,
            };
            (mean.x, var, None)
        }
    };
    let (mean_grid, marginal_sd, predictive_sd) = summary_grids(data, field_mean, &field_var, sigma)?;
    Ok(PosteriorSummary {
        mean: mean_grid,
        marginal_sd,
        predictive_sd,
        trend,
        method: MethodTags {
            mean: "cg",
            variance: if method == VarianceMethod::MonteCarlo {
                "mc"
            } else {
                "rbmc"
            },
            cg_tolerance: Some(config.tolerance),
            cg_iterations: Some(mean.iterations),
            samples: config.samples,
        },
    })
}

fn add_trend(f: &Covariates, x: &[f64], beta: &[f64]) -> Vec<f64> {
    x.iter().zip(f.apply(beta)).map(|(a, b)| a + b).collect()
}

fn summarize_variational(q: &VariationalParams, data: &Dataset, sigma: f64) -> Result<PosteriorSummary> {
    if q.len_latent() != data.y().len() {
        return Err(DgmrfError::Dimension(
            "variational parameters do not match the data".into(),
        ));
    }
    let mut mean = q.mean.clone();
    let mut var: Vec<f64> = q.sd().iter().map(|s| s * s).collect();
    let mut trend = None;
    if let (Some(t), Some(f)) = (&q.trend, data.covariates()) {
        let sb = q.trend_sd();
        for (i, (m, v)) in mean.iter_mut().zip(var.iter_mut()).enumerate() {
            let row = f.row(i);
            *m += row.iter().zip(&t.mean).map(|(a, b)| a * b).sum::<f64>();
            *v += row.iter().zip(&sb).map(|(a, s)| (a * s).powi(2)).sum::<f64>();
        }
        trend = Some(TrendSummary {
            mean: t.mean.clone(),
            sd: sb,
        });
    }
    let (mean, marginal_sd, predictive_sd) = summary_grids(data, mean, &var, sigma)?;
    Ok(PosteriorSummary {
        mean,
        marginal_sd,
        predictive_sd,
        trend,
        method: MethodTags {
            mean: "variational",
            variance: "variational",
            cg_tolerance: None,
            cg_iterations: None,
            samples: 0,
        },
    })
}
