//! Matrix-free conjugate gradient for symmetric positive-definite systems.

use crate::error::{DgmrfError, Result};

/// Default relative-residual tolerance.
pub const DEFAULT_TOLERANCE: f64 = 1e-7;

/// Default iteration cap `10 sqrt(N) + 100`.
pub fn default_max_iter(n: usize) -> usize {
    (10.0 * (n as f64).sqrt()).ceil() as usize + 100
}

#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final relative residual `||A x - c|| / ||c||` as tracked by the recurrence.
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = c` starting from zero until `||A x - c|| / ||c|| <= tol`.
pub fn cg_solve<F>(op: F, rhs: &[f64], tol: f64, max_iter: usize) -> Result<CgSolution>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if !(tol > 0.0) {
        return Err(DgmrfError::InvalidArgument(format!(
            "CG tolerance must be positive, got {tol}"
        )));
    }
    let n = rhs.len();
    let norm_c = dot(rhs, rhs).sqrt();
    let mut x = vec![0.0; n];
    if norm_c == 0.0 {
        return Ok(CgSolution {
            x,
            iterations: 0,
            residual: 0.0,
        });
    }
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut iterations = 0;
    while iterations < max_iter {
        let ap = op(&p);
        if ap.len() != n {
            return Err(DgmrfError::Dimension(format!(
                "operator returned {} entries for a system of {n}",
                ap.len()
            )));
        }
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(DgmrfError::Convergence {
                iterations,
                residual: rr.sqrt() / norm_c,
            });
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() / norm_c <= tol {
            return Ok(CgSolution {
                x,
                iterations,
                residual: rr_new.sqrt() / norm_c,
            });
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(DgmrfError::Convergence {
        iterations,
        residual: rr.sqrt() / norm_c,
    })
}
