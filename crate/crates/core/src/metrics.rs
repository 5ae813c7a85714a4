//! Point and probabilistic prediction scores over test pixels.

use rayon::prelude::*;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{DgmrfError, Result};
use crate::grid::{GridTensor, Mask};

/// `z_{0.975}` of the standard normal.
pub const Z_975: f64 = 1.959963984540054;

fn std_normal() -> Normal {
    Normal::standard()
}

/// Two-sided standard normal quantile for a central `1 - alpha` interval.
fn central_z(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DgmrfError::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if alpha == 0.05 {
        return Ok(Z_975);
    }
    Ok(std_normal().inverse_cdf(1.0 - alpha / 2.0))
}

/// Closed-form CRPS of `N(mu, sd^2)` at `y`.
pub fn crps_gaussian(y: f64, mu: f64, sd: f64) -> Result<f64> {
    if !(sd > 0.0) {
        return Err(DgmrfError::InvalidArgument(format!(
            "predictive sd must be positive, got {sd}"
        )));
    }
    let z = (y - mu) / sd;
    let n = std_normal();
    Ok(sd * (z * (2.0 * n.cdf(z) - 1.0) + 2.0 * n.pdf(z) - 1.0 / std::f64::consts::PI.sqrt()))
}

/// Interval score of the central `1 - alpha` Gaussian interval.
pub fn interval_score(y: f64, mu: f64, sd: f64, alpha: f64) -> Result<f64> {
    if !(sd > 0.0) {
        return Err(DgmrfError::InvalidArgument(format!(
            "predictive sd must be positive, got {sd}"
        )));
    }
    let z = central_z(alpha)?;
    let (l, u) = (mu - z * sd, mu + z * sd);
    let mut s = u - l;
    if y < l {
        s += 2.0 / alpha * (l - y);
    }
    if y > u {
        s += 2.0 / alpha * (y - u);
    }
    Ok(s)
}

/// Paired test-pixel values in canonical order.
struct Scored {
    truth: Vec<f64>,
    mean: Vec<f64>,
    sd: Vec<f64>,
}

fn collect(truth: &GridTensor, mean: &GridTensor, sd: Option<&GridTensor>, test: &Mask) -> Result<Scored> {
    if !truth.same_shape(mean) || sd.is_some_and(|s| !truth.same_shape(s)) {
        return Err(DgmrfError::Dimension(
            "truth and prediction grids differ in shape".into(),
        ));
    }
    if test.height() != truth.height() || test.width() != truth.width() {
        return Err(DgmrfError::Dimension("test mask does not match the grids".into()));
    }
    let w = test.weights(truth.channels());
    let idx: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
    if idx.is_empty() {
        return Err(DgmrfError::EmptyTestSet);
    }
    Ok(Scored {
        truth: idx.iter().map(|&i| truth.values()[i]).collect(),
        mean: idx.iter().map(|&i| mean.values()[i]).collect(),
        sd: sd.map_or_else(Vec::new, |s| idx.iter().map(|&i| s.values()[i]).collect()),
    })
}

/// Sum in a fixed order after a parallel map.
fn ordered_mean<F>(n: usize, f: F) -> Result<f64>
where
    F: Fn(usize) -> Result<f64> + Sync + Send,
{
    let terms: Vec<f64> = (0..n).into_par_iter().map(f).collect::<Result<_>>()?;
    Ok(terms.iter().sum::<f64>() / n as f64)
}

/// `(MAE, RMSE)` over test pixels.
pub fn point_scores(truth: &GridTensor, mean: &GridTensor, test: &Mask) -> Result<(f64, f64)> {
    let s = collect(truth, mean, None, test)?;
    let n = s.truth.len();
    let mae = ordered_mean(n, |i| Ok((s.truth[i] - s.mean[i]).abs()))?;
    let mse = ordered_mean(n, |i| Ok((s.truth[i] - s.mean[i]).powi(2)))?;
    Ok((mae, mse.sqrt()))
}

/// Fraction of test pixels with `|y - mu| <= z_{1-alpha/2} sd`.
pub fn coverage(truth: &GridTensor, mean: &GridTensor, sd: &GridTensor, test: &Mask, alpha: f64) -> Result<f64> {
    let s = collect(truth, mean, Some(sd), test)?;
    let z = central_z(alpha)?;
    ordered_mean(s.truth.len(), |i| {
        Ok(if (s.truth[i] - s.mean[i]).abs() <= z * s.sd[i] {
            1.0
        } else {
            0.0
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreReport {
    pub mae: f64,
    pub rmse: f64,
    pub crps: f64,
    pub int: f64,
    pub cvg: f64,
    pub count: usize,
}

/// All five scores at `alpha = 0.05`.
pub fn score(truth: &GridTensor, mean: &GridTensor, sd: &GridTensor, test: &Mask) -> Result<ScoreReport> {
    let s = collect(truth, mean, Some(sd), test)?;
    let n = s.truth.len();
    let (mae, rmse) = point_scores(truth, mean, test)?;
    let crps = ordered_mean(n, |i| crps_gaussian(s.truth[i], s.mean[i], s.sd[i]))?;
    let int = ordered_mean(n, |i| interval_score(s.truth[i], s.mean[i], s.sd[i], 0.05))?;
    let cvg = coverage(truth, mean, sd, test, 0.05)?;
    Ok(ScoreReport {
        mae,
        rmse,
        crps,
        int,
        cvg,
        count: n,
    })
}

pub const REPORT_HEADER: &str = "label,MAE,RMSE,CRPS,INT,CVG,count";

fn row(label: &str, r: &[f64; 5], count: &str) -> String {
    format!(
        "{label},{:.6},{:.6},{:.6},{:.6},{:.6},{count}",
        r[0], r[1], r[2], r[3], r[4]
    )
}

impl ScoreReport {
    fn as_array(&self) -> [f64; 5] {
        [self.mae, self.rmse, self.crps, self.int, self.cvg]
    }

    pub fn csv_row(&self, label: &str) -> String {
        row(label, &self.as_array(), &self.count.to_string())
    }
}

/// CSV with one row per labelled report, followed by `mean` and `sd`
/// rows (sample sd across reports) when there is more than one.
pub fn report_csv(reports: &[(String, ScoreReport)]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for (label, r) in reports {
        out.push_str(&r.csv_row(label));
        out.push('\n');
    }
    if reports.len() > 1 {
        let k = reports.len() as f64;
        let mut mean = [0.0; 5];
        for (_, r) in reports {
            for (m, v) in mean.iter_mut().zip(r.as_array()) {
                *m += v / k;
            }
        }
        let mut sd = [0.0; 5];
        for (_, r) in reports {
            for ((s, v), m) in sd.iter_mut().zip(r.as_array()).zip(&mean) {
                *s += (v - m).powi(2) / (k - 1.0);
            }
        }
        sd.iter_mut().for_each(|s| *s = s.sqrt());
        out.push_str(&row("mean", &mean, ""));
        out.push('\n');
        out.push_str(&row("sd", &sd, ""));
        out.push('\n');
    }
    out
}
