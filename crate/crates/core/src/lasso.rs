//! L1-regularized least squares by cyclic coordinate descent.
//!
//! Minimizes `(1/(2n))·‖y − Xβ − β₀‖² + λ‖β‖₁` with an unpenalized
//! intercept. Features are used as given, without standardization.

use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionKind, AttributionMap};
use crate::error::{check_len, Error, Result};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub converged: bool,
    /// Full coordinate sweeps performed.
    pub iterations: usize,
    /// Objective before the first sweep and after every sweep.
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
}

pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

pub fn objective(
    x: &[Vec<f64>],
    y: &[f64],
    coefficients: &[f64],
    intercept: f64,
    lambda: f64,
) -> f64 {
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(row, yi)| {
            let fit = intercept
                + row
                    .iter()
                    .zip(coefficients)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            (yi - fit).powi(2)
        })
        .sum();
    rss / (2.0 * y.len() as f64) + lambda * coefficients.iter().map(|b| b.abs()).sum::<f64>()
}

pub fn fit_lasso(
    x: &[Vec<f64>],
    y: &[f64],
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<LinearModel> {
    fit_lasso_from(x, y, lambda, tol, max_iter, None)
}

/// [`fit_lasso`] started from `init`'s coefficients instead of zero.
pub fn fit_lasso_from(
    x: &[Vec<f64>],
    y: &[f64],
    lambda: f64,
    tol: f64,
    max_iter: usize,
    init: Option<&[f64]>,
) -> Result<LinearModel> {
    let n = y.len();
    if n == 0 {
        return Err(Error::InvalidArgument(
            "lasso needs at least one observation".into(),
        ));
    }
    check_len(n, x.len())?;
    let p = x[0].len();
    for row in x {
        check_len(p, row.len())?;
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "design matrix or targets contain non-finite values".into(),
        ));
    }

    let columns: Vec<Vec<f64>> = (0..p)
        .map(|j| x.iter().map(|row| row[j]).collect())
        .collect();
    let nf = n as f64;
    let col_sq: Vec<f64> = columns
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>() / nf)
        .collect();

    let mut beta = match init {
        Some(b) => {
            check_len(p, b.len())?;
            b.iter()
                .zip(&col_sq)
                .map(|(v, s)| if *s > 0.0 { *v } else { 0.0 })
                .collect()
        }
        None => vec![0.0; p],
    };
    let mut residual: Vec<f64> = y.to_vec();
    for (c, b) in columns.iter().zip(&beta) {
        if *b != 0.0 {
            residual.iter_mut().zip(c).for_each(|(r, v)| *r -= b * v);
        }
    }
    let mut intercept = 0.0;
    let l1 = |beta: &[f64]| beta.iter().map(|b| b.abs()).sum::<f64>();
    let obj = |residual: &[f64], beta: &[f64]| {
        residual.iter().map(|r| r * r).sum::<f64>() / (2.0 * nf) + lambda * l1(beta)
    };
    let mut trace = vec![obj(&residual, &beta)];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let shift = residual.iter().sum::<f64>() / nf;
        intercept += shift;
        residual.iter_mut().for_each(|r| *r -= shift);
        let mut max_change = shift.abs();

        for j in 0..p {
            if col_sq[j] == 0.0 {
                continue;
            }
            let col = &columns[j];
            let old = beta[j];
            let rho =
                col.iter().zip(&residual).map(|(a, r)| a * r).sum::<f64>() / nf + col_sq[j] * old;
            let new = soft_threshold(rho, lambda) / col_sq[j];
            if new != old {
                let delta = new - old;
                residual
                    .iter_mut()
                    .zip(col)
                    .for_each(|(r, v)| *r -= delta * v);
                beta[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        trace.push(obj(&residual, &beta));
        if max_change < tol {
            converged = true;
            break;
        }
    }
    let shift = residual.iter().sum::<f64>() / nf;
    intercept += shift;

    Ok(LinearModel {
        coefficients: beta,
        intercept,
        lambda,
        converged,
        iterations,
        objective_trace: trace,
    })
}

pub fn predict_linear(model: &LinearModel, x: &[f64]) -> Result<f64> {
    check_len(model.coefficients.len(), x.len())?;
    Ok(model.intercept
        + model
            .coefficients
            .iter()
            .zip(x)
            .map(|(a, b)| a * b)
            .sum::<f64>())
}

/// Coefficients as an attribution map; [`AttributionMap::ranked`] gives the
/// `feature,coefficient` dump order.
pub fn coefficient_map(model: &LinearModel, feature_names: &[String]) -> AttributionMap {
    AttributionMap::per_feature(
        AttributionKind::Coefficients,
        feature_names,
        &model.coefficients,
    )
}
