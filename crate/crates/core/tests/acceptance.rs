//! Acceptance suite: one PASS/FAIL/SKIPPED line per criterion.
//!
//! Runs with `cargo test --test acceptance`. Criterion 8 needs the external
//! satellite data: set `DGMRF_SATELLITE_DIR` to a directory holding
//! `obs.grid`, `covariates.grid` and `truth.grid` (and optionally
//! `DGMRF_SATELLITE_ITERATIONS`, default 100000).

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use dgmrf::cli::mean_fill;
use dgmrf::data_io::{gen_toy, load_dataset, load_grid, MissingSpec, Normalization, ToyConfig};
use dgmrf::grad::{elbo_grad, elbo_value};
use dgmrf::grid::{crop_frame, pad_frame, Dataset};
use dgmrf::metrics::{coverage, crps_gaussian, score};
use dgmrf::model::{matern_layers, Architecture, FilterType};
use dgmrf::posterior::{posterior_mean, posterior_samples, summarize, InferConfig, PosteriorOperator};
use dgmrf::vi::{elbo_constant, elbo_estimate, train, TrainConfig, VariationalParams, TREND_PRIOR_PRECISION};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

enum Status {
    Pass,
    Fail,
    Skipped,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn verdict(ok: bool, detail: String) -> Outcome {
    Outcome {
        status: if ok { Status::Pass } else { Status::Fail },
        detail,
    }
}

fn within_budget(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed <= Duration::from_secs(limit_secs)
}

/// Model log-determinants against dense LU on random small configurations.
fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let (mut scored, mut rejected) = (0, 0);
    // LU cannot resolve det(G) once cond(G) * eps approaches 1, so such draws
    // are counted and replaced rather than scored against a meaningless oracle.
    while scored < 200 {
        let (h, w) = (rng.random_range(2..=8), rng.random_range(2..=8));
        let filter = match rng.random_range(0..4) {
            0 => FilterType::Plus,
            r => FilterType::Seq { radius: r },
        };
        let a = arch(rng.random_range(1..=3), filter, rng.random_range(1..=2), false);
        let m = random_model(&a, 1.0, false, 1.0, &mut rng);
        let g = dense_g(&m, h, w);
        let sv = g.clone().singular_values();
        if sv.max() / sv.min() > 1e8 {
            rejected += 1;
            continue;
        }
        let dense = dense_logdet(&g);
        let err = (m.logdet(h, w) - dense).abs() / dense.abs().max(1.0);
        worst = worst.max(err);
        scored += 1;
    }
    let mat = matern_layers(0.0, 1.0, 1, 1, 1.0).unwrap();
    let hand = (mat.logdet(2, 2) - 192f64.ln()).abs() / 192f64.ln();
    let hand_dense = (dense_logdet(&dense_g(&mat, 2, 2)) - 192f64.ln()).abs();
    let elapsed = start.elapsed();
    verdict(
        worst <= 1e-9 && hand <= 1e-12 && hand_dense <= 1e-12 && within_budget(elapsed, 60),
        format!("{scored} configs ({rejected} ill-conditioned draws with cond(G) > 1e8 replaced), worst relative error {worst:.2e}; 2x2 hand case det 192 error {hand:.1e}"),
    )
}

/// Laplacian `kappa^2 I + G` on an `h x w` grid with zero boundary, built by index.
fn shifted_laplacian(kappa2: f64, h: usize, w: usize) -> DMatrix<f64> {
    let n = h * w;
    let mut a = DMatrix::zeros(n, n);
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            a[(i, i)] = 4.0 + kappa2;
            if r > 0 {
                a[(i, i - w)] = -1.0;
            }
            if r + 1 < h {
                a[(i, i + w)] = -1.0;
            }
            if c > 0 {
                a[(i, i - 1)] = -1.0;
            }
            if c + 1 < w {
                a[(i, i + 1)] = -1.0;
            }
        }
    }
    a
}

/// Matern layers reproduce the SPDE precision and the second-order stencil.
fn criterion_2() -> Outcome {
    let (kappa2, tau) = (0.3, 1.7);
    let mut worst: f64 = 0.0;
    for gamma in [1usize, 2] {
        let m = matern_layers(kappa2, tau, gamma, gamma + 1, 1.0).unwrap();
        let g = dense_g(&m, 6, 6);
        let a = shifted_laplacian(kappa2, 6, 6);
        let ag = (0..gamma - 1).fold(a.clone(), |acc, _| acc * &a);
        let q_oracle = (ag.transpose() * &ag) * (tau * tau);
        worst = worst.max((g.transpose() * &g - q_oracle).amax());
    }
    // interior rows of G^T G for kappa = 0 on a 7x7 grid
    let m = matern_layers(0.0, 1.0, 1, 1, 1.0).unwrap();
    let g = dense_g(&m, 7, 7);
    let q = g.transpose() * &g;
    let stencil = |dr: isize, dc: isize| -> f64 {
        match (dr.abs(), dc.abs()) {
            (0, 0) => 20.0,
            (0, 1) | (1, 0) => -8.0,
            (1, 1) => 2.0,
            (0, 2) | (2, 0) => 1.0,
            _ => 0.0,
        }
    };
    let mut stencil_ok = true;
    for r in 2..5isize {
        for c in 2..5isize {
            let i = (r * 7 + c) as usize;
            for rr in 0..7isize {
                for cc in 0..7isize {
                    let j = (rr * 7 + cc) as usize;
                    stencil_ok &= q[(i, j)] == stencil(rr - r, cc - c);
                }
            }
        }
    }
    verdict(
        worst <= 1e-10 && stencil_ok,
        format!("max |G^T G - tau^2 (A^g)^T A^g| = {worst:.2e} for gamma 1, 2; interior stencil exact: {stencil_ok}"),
    )
}

/// ELBO gradient against central differences over the configuration matrix.
fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut configs = 0;
    let mut params = 0;
    let mut worst = (0.0f64, String::new());
    for layers in 1..=3 {
        for filter in [
            FilterType::Plus,
            FilterType::Seq { radius: 1 },
            FilterType::Seq { radius: 2 },
        ] {
            for channels in [1usize, 2] {
                for prelu in [false, true] {
                    for trend in [false, true] {
                        if trend && channels > 1 {
                            continue;
                        }
                        for sigma_trainable in [false, true] {
                            let a = arch(layers, filter, channels, prelu);
                            let model = random_model(&a, 0.5, sigma_trainable, 0.3, &mut rng);
                            let mut data = random_dataset(6, 6, channels, 0.3, &mut rng);
                            if trend {
                                data = with_trend(data, &mut rng);
                            }
                            let q = random_q(&data, &mut rng);
                            let eps = eps_of(&mut rng, &q, 2);
                            let (_, g) = elbo_grad(&model, &q, &data, &eps).unwrap();
                            let grad: Vec<f64> = g.model.iter().chain(&g.variational).copied().collect();
                            let x = joint_params(&model, &q);
                            let f = |p: &[f64]| {
                                let (m, v) = split_params(&model, &q, p);
                                elbo_value(&m, &v, &data, &eps).unwrap()
                            };
                            let (ratio, idx) = fd_check(f, &x, &grad, 1e-4, 1e-7);
                            configs += 1;
                            params += x.len();
                            if ratio > worst.0 {
                                worst = (
                                    ratio,
                                    format!(
                                        "L={layers} {filter:?} C={channels} prelu={prelu} trend={trend} sigma_trainable={sigma_trainable} param {idx}"
                                    ),
                                );
                            }
                        }
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst.0 <= 1.0 && within_budget(elapsed, 120),
        format!(
            "{configs} configurations, {params} parameters; worst error/tolerance {:.3} ({})",
            worst.0,
            if worst.1.is_empty() { "-" } else { &worst.1 }
        ),
    )
}

/// Posterior mean, RBMC variances and perturbation samples against dense oracles.
fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut problems: Vec<(String, dgmrf::model::DgmrfModel, Dataset)> = Vec::new();
    let m = random_model(&arch(2, FilterType::Plus, 1, false), 0.5, false, 0.3, &mut rng);
    problems.push(("plus L=2 4x4".into(), m, random_dataset(4, 4, 1, 0.3, &mut rng)));
    let m = random_model(
        &arch(2, FilterType::Seq { radius: 1 }, 1, false),
        0.3,
        false,
        0.3,
        &mut rng,
    );
    problems.push(("seq L=2 5x5".into(), m, random_dataset(5, 5, 1, 0.3, &mut rng)));
    let m = matern_layers(0.5, 1.0, 1, 1, 0.4).unwrap();
    problems.push(("matern 6x6".into(), m, random_dataset(6, 6, 1, 0.5, &mut rng)));
    let m = random_model(&arch(1, FilterType::Plus, 1, false), 0.5, false, 0.3, &mut rng);
    let d = with_trend(random_dataset(4, 4, 1, 0.25, &mut rng), &mut rng);
    problems.push(("plus trend 4x4".into(), m, d));

    let samples = 10_000;
    let mut ok = true;
    let mut notes = Vec::new();
    for (k, (name, model, data)) in problems.iter().enumerate() {
        let op = PosteriorOperator::new(model, data).unwrap();
        let (q, c) = dense_posterior(model, data);
        let cov = q.clone().try_inverse().unwrap();
        let exact = &cov * &c;
        let mu = posterior_mean(&op, data, 1e-12).unwrap().x;
        let mean_err = (0..mu.len()).map(|i| (mu[i] - exact[i]).abs()).fold(0.0, f64::max);

        let xs = posterior_samples(&op, data, samples, 7 + k as u64, 1e-10).unwrap();
        let ns = samples as f64;
        let cvec = c.as_slice().to_vec();
        let rb = dgmrf::posterior::rbmc_variance(&op, &xs, &cvec).unwrap();
        // Monte Carlo standard errors from the conditional means and from the raw draws
        let d = op.diagonal().unwrap();
        let cond: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| {
                let qx = op.matvec(x).unwrap();
                (0..x.len()).map(|i| x[i] - (qx[i] - cvec[i]) / d[i]).collect()
            })
            .collect();
        let se_of = |vals: &[Vec<f64>], i: usize| {
            let m = vals.iter().map(|v| v[i]).sum::<f64>() / ns;
            let sq: Vec<f64> = vals.iter().map(|v| (v[i] - m).powi(2)).collect();
            let sm = sq.iter().sum::<f64>() / ns;
            (sq.iter().map(|s| (s - sm).powi(2)).sum::<f64>() / (ns - 1.0) / ns).sqrt()
        };
        let mut var_z: f64 = 0.0;
        let (mut se_rb, mut se_naive) = (0.0, 0.0);
        for i in 0..mu.len() {
            let se = se_of(&cond, i);
            se_rb += se;
            se_naive += se_of(&xs, i);
            var_z = var_z.max((rb[i] - cov[(i, i)]).abs() / se.max(1e-300));
        }
        let mean_ok = mean_err <= 1e-6;
        ok &= mean_ok && var_z <= 4.0 && se_rb < se_naive;
        notes.push(format!(
            "{name}: mean err {mean_err:.1e}, RBMC max |z| {var_z:.2}, RBMC/naive SE {:.2}",
            se_rb / se_naive
        ));

        if k == 0 {
            let n = mu.len();
            let mut mean_z: f64 = 0.0;
            let mut cov_z: f64 = 0.0;
            let mean_s: Vec<f64> = (0..n).map(|i| xs.iter().map(|x| x[i]).sum::<f64>() / ns).collect();
            for i in 0..n {
                mean_z = mean_z.max((mean_s[i] - exact[i]).abs() / (cov[(i, i)] / ns).sqrt());
                for j in i..n {
                    let sc = xs.iter().map(|x| (x[i] - mean_s[i]) * (x[j] - mean_s[j])).sum::<f64>() / (ns - 1.0);
                    let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / ns).sqrt();
                    cov_z = cov_z.max((sc - cov[(i, j)]).abs() / se);
                }
            }
            ok &= mean_z <= 4.0 && cov_z <= 4.0;
            notes.push(format!(
                "sampler: mean max |z| {mean_z:.2}, covariance max |z| {cov_z:.2}"
            ));
        }
    }
    verdict(ok, notes.join("; "))
}

/// KL(q || N(mu, Q^-1)) for a diagonal Gaussian `q`.
fn kl_to_posterior(q: &VariationalParams, mu: &DVector<f64>, prec: &DMatrix<f64>) -> f64 {
    let mut m = q.mean.clone();
    let mut ls = q.log_sd.clone();
    if let Some(t) = &q.trend {
        m.extend(&t.mean);
        ls.extend(&t.log_sd);
    }
    let k = m.len();
    let d = DVector::from_fn(k, |i, _| mu[i] - m[i]);
    let tr: f64 = (0..k).map(|i| prec[(i, i)] * (2.0 * ls[i]).exp()).sum();
    let logdet_prec = dense_logdet(prec);
    0.5 * (tr + d.dot(&(prec * &d)) - k as f64 - logdet_prec - 2.0 * ls.iter().sum::<f64>())
}

/// Seed-averaged ELBO stays below the log marginal likelihood and tightens
/// for the factorized projection of the exact posterior.
fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut cases: Vec<(String, dgmrf::model::DgmrfModel, Dataset)> = Vec::new();
    let m = random_model(&arch(1, FilterType::Plus, 1, false), 0.6, false, 0.3, &mut rng);
    cases.push(("plus 4x4".into(), m, random_dataset(4, 4, 1, 0.3, &mut rng)));
    let m = random_model(
        &arch(2, FilterType::Seq { radius: 1 }, 1, false),
        0.4,
        false,
        0.3,
        &mut rng,
    );
    cases.push(("seq L=2 4x4".into(), m, random_dataset(4, 4, 1, 0.3, &mut rng)));
    let m = random_model(&arch(1, FilterType::Plus, 1, false), 0.6, false, 0.3, &mut rng);
    let d = with_trend(random_dataset(4, 4, 1, 0.2, &mut rng), &mut rng);
    cases.push(("plus trend 4x4".into(), m, d));

    let seeds = 10_000u64;
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, model, data) in &cases {
        let log_ml = dense_log_marginal(model, data);
        let (prec, c) = dense_posterior(model, data);
        let mu = prec.clone().lu().solve(&c).unwrap();
        let n = data.y().len();
        let p = data.covariates().map_or(0, |f| f.cols());
        let konst = elbo_constant(n, data.observed_count(), p, TREND_PRIOR_PRECISION);

        let init = VariationalParams::from_data(data);
        let mut proj = init.clone();
        proj.mean = mu.as_slice()[..n].to_vec();
        proj.log_sd = (0..n).map(|i| -0.5 * prec[(i, i)].ln()).collect();
        if let Some(t) = &mut proj.trend {
            t.mean = mu.as_slice()[n..].to_vec();
            t.log_sd = (n..n + p).map(|i| -0.5 * prec[(i, i)].ln()).collect();
        }
        let mut gaps = Vec::new();
        for (label, q) in [("init", &init), ("projection", &proj)] {
            let vals: Vec<f64> = (0..seeds)
                .map(|s| elbo_estimate(model, q, data, 1, s).unwrap() + konst)
                .collect();
            let mean = vals.iter().sum::<f64>() / seeds as f64;
            let se =
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (seeds as f64 - 1.0) / seeds as f64).sqrt();
            let expected = log_ml - kl_to_posterior(q, &mu, &prec);
            let bound_ok = mean <= log_ml + 3.0 * se;
            let unbiased = (mean - expected).abs() <= 4.0 * se + 1e-9 * expected.abs();
            ok &= bound_ok && unbiased;
            gaps.push(log_ml - mean);
            notes.push(format!(
                "{name} {label}: ELBO {mean:.4} +- {se:.1e} vs log p(y) {log_ml:.4} (closed-form ELBO {expected:.4})"
            ));
        }
        ok &= gaps[1] < gaps[0];
    }
    verdict(ok, notes.join("; "))
}

/// Stratified Monte Carlo CRPS `E|X - y| - E|X - X'| / 2` with `n` draws.
fn mc_crps(y: f64, mu: f64, sd: f64, n: usize, rng: &mut ChaCha8Rng) -> f64 {
    let std = Normal::standard();
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n)
            .map(|i| mu + sd * std.inverse_cdf((i as f64 + rng.random_range(0.0..1.0)) / n as f64))
            .collect()
    };
    let mut x = draw(rng);
    let a = x.iter().map(|v| (v - y).abs()).sum::<f64>() / n as f64;
    // all-pairs mean of |X_i - X_j| from the sorted draws
    x.sort_by(f64::total_cmp);
    let nf = n as f64;
    let pairs: f64 = x.iter().enumerate().map(|(i, v)| v * (2.0 * i as f64 - nf + 1.0)).sum();
    let b = 2.0 * pairs / (nf * (nf - 1.0));
    a - 0.5 * b
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let sd = 0.3 + 0.15 * k as f64;
        let mu = -1.0 + 0.1 * k as f64;
        let z = [-10.0, -3.0, -1.5, -0.5, 0.0, 0.3, 1.0, 2.0, 4.0, 10.0][k % 10];
        let y = mu + z * sd;
        let exact = crps_gaussian(y, mu, sd).unwrap();
        worst = worst.max((exact - mc_crps(y, mu, sd, 1_000_000, &mut rng)).abs());
    }
    let n = 100_000;
    let mut sim = ChaCha8Rng::seed_from_u64(607);
    let mean: Vec<f64> = (0..n).map(|_| sim.random_range(-2.0..2.0)).collect();
    let sd: Vec<f64> = (0..n).map(|_| sim.random_range(0.5..2.0)).collect();
    let std = rand_distr::StandardNormal;
    let truth: Vec<f64> = (0..n)
        .map(|i| mean[i] + sd[i] * rand_distr::Distribution::<f64>::sample(&std, &mut sim))
        .collect();
    let grid = |v: Vec<f64>| dgmrf::grid::GridTensor::from_vec(1, n, 1, v).unwrap();
    let cvg = coverage(
        &grid(truth),
        &grid(mean),
        &grid(sd),
        &dgmrf::grid::Mask::full(1, n),
        0.05,
    )
    .unwrap();
    verdict(
        worst <= 1e-3 && (cvg - 0.95).abs() <= 0.01,
        format!("max |CRPS - MC| over 20 points {worst:.1e}; calibrated coverage {cvg:.4}"),
    )
}

/// Toy inpainting: L=1 plus model against mean fill on 64x64 Matern data.
fn criterion_7() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        let start = Instant::now();
        let toy = ToyConfig {
            height: 64,
            width: 64,
            kappa2: 8.0 / 400.0,
            tau: 1.0,
            gamma: 1,
            seed: 7,
            edges: Vec::new(),
            missing: MissingSpec {
                fraction: 0.3,
                rects: Vec::new(),
            },
        };
        let data = gen_toy(&toy).unwrap();
        let observed = data.dataset().unwrap();
        let frame = 10;
        let padded = pad_frame(&observed, frame);
        let a = Architecture {
            train_bias: false,
            ..Default::default()
        };
        let model = dgmrf::model::DgmrfModel::random(&a, 0.001, false, 7).unwrap();
        let q = VariationalParams::from_data(&padded);
        let cfg = TrainConfig {
            iterations: 10_000,
            seed: 7,
            ..Default::default()
        };
        let fit = train(&model, &q, &padded, &cfg).unwrap();
        let s = summarize(&fit.model, &fit.variational, &padded, &InferConfig::default()).unwrap();
        let mean = crop_frame(&s.mean, frame).unwrap();
        let sd = crop_frame(&s.predictive_sd, frame).unwrap();
        let test = dgmrf::cli::test_mask(&dgmrf::grid::Mask::full(64, 64), observed.mask()).unwrap();
        let model_scores = score(&data.truth, &mean, &sd, &test).unwrap();
        let (bm, bs) = mean_fill(&observed).unwrap();
        let base = score(&data.truth, &bm, &bs, &test).unwrap();
        let improvement = 1.0 - model_scores.rmse / base.rmse;
        let elapsed = start.elapsed();
        verdict(
            improvement >= 0.4 && (0.85..=1.0).contains(&model_scores.cvg) && within_budget(elapsed, 900),
            format!(
                "test RMSE {:.4} vs mean fill {:.4} ({:.0}% better), CVG {:.3}, CRPS {:.4} vs {:.4}, {} test pixels",
                model_scores.rmse,
                base.rmse,
                100.0 * improvement,
                model_scores.cvg,
                model_scores.crps,
                base.crps,
                model_scores.count
            ),
        )
    })
}

/// Full-scale satellite run, only when the external data is supplied.
fn criterion_8() -> Outcome {
    let Ok(dir) = std::env::var("DGMRF_SATELLITE_DIR") else {
        return Outcome {
            status: Status::Skipped,
            detail: "external satellite data not supplied (set DGMRF_SATELLITE_DIR)".into(),
        };
    };
    let dir = Path::new(&dir);
    let iterations: usize = std::env::var("DGMRF_SATELLITE_ITERATIONS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(100_000);
    let raw = load_dataset(dir.join("obs.grid"), Some(&dir.join("covariates.grid"))).unwrap();
    let (truth, truth_mask) = load_grid(dir.join("truth.grid")).unwrap();
    let norm = Normalization::from_data(&raw);
    let frame = 10;
    let data = pad_frame(&norm.apply(&raw).unwrap(), frame);
    let a = Architecture {
        layers: 5,
        filter: FilterType::Seq { radius: 2 },
        ..Default::default()
    };
    let model = dgmrf::model::DgmrfModel::random(&a, 0.01, true, 0).unwrap();
    let q = VariationalParams::from_data(&data);
    let cfg = TrainConfig {
        iterations,
        ..Default::default()
    };
    let fit = train(&model, &q, &data, &cfg).unwrap();
    let s = summarize(&fit.model, &fit.variational, &data, &InferConfig::default()).unwrap();
    let mean = norm.invert(&crop_frame(&s.mean, frame).unwrap());
    let sd = norm.invert(&crop_frame(&s.predictive_sd, frame).unwrap());
    let test = dgmrf::cli::test_mask(&truth_mask, raw.mask()).unwrap();
    let r = score(&truth, &mean, &sd, &test).unwrap();
    verdict(
        r.mae <= 1.22,
        format!(
            "MAE {:.3} RMSE {:.3} CRPS {:.3} INT {:.3} CVG {:.3} ({} iterations)",
            r.mae, r.rmse, r.crps, r.int, r.cvg, iterations
        ),
    )
}

fn run_cli(dir: &Path, args: &[&str], threads: Option<&str>) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dgmrf"));
    cmd.current_dir(dir).args(args);
    if let Some(t) = threads {
        cmd.env("RAYON_NUM_THREADS", t);
    }
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "dgmrf {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let key = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(key, fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Two identical pipelines (one single-threaded) must produce identical bytes.
fn criterion_9() -> Outcome {
    let pipeline = |threads: Option<&str>| {
        let tmp = tempfile::tempdir().unwrap();
        let d = tmp.path();
        run_cli(
            d,
            &[
                "gen-toy",
                "out=data",
                "height=24",
                "width=20",
                "kappa2=0.05",
                "missing_fraction=0.3",
                "edges=v,10,2",
                "seed=3",
            ],
            threads,
        );
        run_cli(
            d,
            &[
                "train",
                "out=lin",
                "data=data/obs.grid",
                "layers=2",
                "iterations=200",
                "frame=4",
                "seed=5",
            ],
            threads,
        );
        run_cli(
            d,
            &[
                "infer",
                "out=lin_post",
                "checkpoint=lin/checkpoint.txt",
                "data=data/obs.grid",
                "variance_samples=20",
            ],
            threads,
        );
        run_cli(
            d,
            &[
                "train",
                "out=nl",
                "data=data/obs.grid",
                "filter=seq",
                "radius=2",
                "layers=2",
                "nonlinear=true",
                "iterations=100",
                "frame=4",
                "seed=5",
            ],
            threads,
        );
        run_cli(
            d,
            &[
                "infer",
                "out=nl_post",
                "checkpoint=nl/checkpoint.txt",
                "data=data/obs.grid",
            ],
            threads,
        );
        run_cli(
            d,
            &[
                "eval",
                "out=report",
                "truth=data/truth.grid",
                "observed=data/obs.grid",
                "runs=lin_post,nl_post",
                "baseline=true",
            ],
            threads,
        );
        snapshot(d)
    };
    let a = pipeline(None);
    let b = pipeline(Some("1"));
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    verdict(
        a.len() == b.len() && differing.is_empty() && a.len() >= 15,
        format!(
            "{} files compared across default and single-threaded runs, {} differ {differing:?}",
            a.len(),
            differing.len()
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("determinant exactness", criterion_1),
        ("Matern equivalence", criterion_2),
        ("gradient fidelity", criterion_3),
        ("posterior exactness", criterion_4),
        ("ELBO bound", criterion_5),
        ("metric oracles", criterion_6),
        ("toy recovery", criterion_7),
        ("satellite scores", criterion_8),
        ("determinism", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| Outcome {
            status: Status::Fail,
            detail: format!(
                "panicked: {}",
                e.downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default()
            ),
        });
        let tag = match outcome.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::Skipped => "SKIPPED",
        };
        println!(
            "criterion {} ({name}): {tag} [{:.1}s] {}",
            i + 1,
            start.elapsed().as_secs_f64(),
            outcome.detail
        );
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion/criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed or skipped");
}
