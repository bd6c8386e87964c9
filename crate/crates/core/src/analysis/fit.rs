use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::histogram::weighted_line;
use crate::error::{Error, Result};

/// Weighted straight-line fit used for extrapolations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub intercept_error: f64,
    pub slope: f64,
    pub slope_error: f64,
    /// Covariance of intercept and slope.
    pub covariance: f64,
    pub chi2: f64,
    pub n_points: usize,
}

impl LinearFit {
    pub fn at(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }

    pub fn error_at(&self, x: f64) -> f64 {
        (self.intercept_error.powi(2) + x * x * self.slope_error.powi(2) + 2.0 * x * self.covariance)
            .max(0.0)
            .sqrt()
    }
}

/// Weighted line through `(x, y, y_err)`; the intercept is `y(x = 0)`.
/// Errors of zero everywhere mean unit weights with the scale taken from
/// the residuals.
pub fn linear_extrapolate(points: &[(f64, f64, f64)]) -> Result<LinearFit> {
    if points.len() < 2 {
        return Err(Error::Validation("extrapolation needs at least two points".into()));
    }
    let line = weighted_line(points)?;
    Ok(LinearFit {
        intercept: line.intercept,
        intercept_error: line.intercept_error,
        slope: line.slope,
        slope_error: line.slope_error,
        covariance: line.covariance,
        chi2: line.chi2,
        n_points: points.len(),
    })
}

/// Odd polynomial `m(h) = chi h - chi_nl h^3 (+ c5 h^5)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MagnetizationFit {
    pub chi: f64,
    pub chi_nl: f64,
    pub c5: Option<f64>,
    pub rms_residual: f64,
}

pub fn fit_magnetization_curve(points: &[(f64, f64)], degree: usize) -> Result<MagnetizationFit> {
    let k = match degree {
        3 => 2,
        5 => 3,
        _ => return Err(Error::Validation(format!("degree must be 3 or 5, got {degree}"))),
    };
    if points.len() < 4 {
        return Err(Error::Validation("need at least four field values".into()));
    }
    let a = DMatrix::from_fn(points.len(), k, |r, c| points[r].0.powi(2 * c as i32 + 1));
    let b = DVector::from_iterator(points.len(), points.iter().map(|p| p.1));
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-12 * smax.max(f64::MIN_POSITIVE) {
        return Err(Error::Numerical("rank-deficient field grid".into()));
    }
    let coef = svd.solve(&b, 0.0).map_err(|e| Error::Numerical(e.to_string()))?;
    let resid = &a * &coef - &b;
    Ok(MagnetizationFit {
        chi: coef[0],
        chi_nl: -coef[1],
        c5: (k == 3).then(|| coef[2]),
        rms_residual: (resid.norm_squared() / points.len() as f64).sqrt(),
    })
}

/// Result of the dynamical-exponent scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZScan {
    pub z_star: f64,
    /// `(z, mean squared residual)` over the grid.
    pub mse: Vec<(f64, f64)>,
    /// Quadratic coefficients `(a, b, c)` at `z_star`.
    pub coefficients: (f64, f64, f64),
    /// `a < 0`, as assumed for the master curve.
    pub concave: bool,
    pub warnings: Vec<String>,
}

/// For every `z`, fits `ln g = a u^2 + b u + c` with `u = ln(beta / L^z)` and
/// records the mean squared residual. Points are `(beta, L, g)`.
pub fn scan_dynamical_z(points: &[(f64, usize, f64)], z_grid: &[f64]) -> Result<ZScan> {
    if points.len() < 3 {
        return Err(Error::Validation("z scan needs at least three (beta, L) points".into()));
    }
    if z_grid.is_empty() {
        return Err(Error::Validation("empty z grid".into()));
    }
    if points.iter().any(|p| !(p.2 > 0.0) || !(p.0 > 0.0)) {
        return Err(Error::Validation("z scan needs beta > 0 and g > 0".into()));
    }
    let mut warnings = Vec::new();
    if z_grid.len() < 5 {
        warnings.push(format!("coarse z grid ({} values)", z_grid.len()));
    }
    let mut mse = Vec::with_capacity(z_grid.len());
    let mut best: Option<(f64, f64, (f64, f64, f64))> = None;
    for &z in z_grid {
        let u: Vec<f64> = points.iter().map(|p| (p.0 / (p.1 as f64).powf(z)).ln()).collect();
        let mut distinct = u.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        if distinct.len() < 3 {
            return Err(Error::Validation(format!("fewer than three distinct beta/L^z at z = {z}")));
        }
        let a = DMatrix::from_fn(points.len(), 3, |r, c| u[r].powi(2 - c as i32));
        let y = DVector::from_iterator(points.len(), points.iter().map(|p| p.2.ln()));
        let coef = a
            .clone()
            .svd(true, true)
            .solve(&y, 1e-14)
            .map_err(|e| Error::Numerical(e.to_string()))?;
        let r = &a * &coef - &y;
        let m = r.norm_squared() / points.len() as f64;
        mse.push((z, m));
        if best.as_ref().is_none_or(|b| m < b.1) {
            best = Some((z, m, (coef[0], coef[1], coef[2])));
        }
    }
    let (z_star, _, coefficients) = best.expect("non-empty grid");
    let concave = coefficients.0 < 0.0;
    if !concave {
        warnings.push(format!("fitted curvature a = {} is not negative", coefficients.0));
    }
    Ok(ZScan { z_star, mse, coefficients, concave, warnings })
}

/// Location of the maximum of a sampled curve from the parabola through the
/// largest point and its two neighbours. `None` if the maximum sits on the
/// boundary of the grid.
pub fn locate_peak(points: &[(f64, f64)]) -> Option<f64> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let k = pts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(k, _)| k)?;
    if k == 0 || k + 1 == pts.len() {
        return None;
    }
    let ((x0, y0), (x1, y1), (x2, y2)) = (pts[k - 1], pts[k], pts[k + 1]);
    let d1 = (y1 - y0) / (x1 - x0);
    let d2 = (y2 - y1) / (x2 - x1);
    let curvature = (d2 - d1) / (x2 - x0);
    if !(curvature < 0.0) {
        return Some(x1);
    }
    // Vertex of the interpolating parabola.
    let v = 0.5 * (x0 + x1) - d1 / (2.0 * curvature);
    Some(v.clamp(x0, x2))
}

/// Peak of the instance-averaged curve and its delete-one jackknife error.
/// `curves[k][j]` is instance `k` at `x[j]`. `None` if the full or any
/// leave-one-out average peaks on the grid boundary.
pub fn peak_with_jackknife(x: &[f64], curves: &[Vec<f64>]) -> Option<(f64, f64)> {
    let n = curves.len();
    if n == 0 || curves.iter().any(|c| c.len() != x.len()) {
        return None;
    }
    let peak_of = |skip: Option<usize>| {
        let used = n - usize::from(skip.is_some());
        let pts: Vec<(f64, f64)> = x
            .iter()
            .enumerate()
            .map(|(j, &xj)| {
                let s: f64 = curves.iter().enumerate().filter(|&(k, _)| Some(k) != skip).map(|(_, c)| c[j]).sum();
                (xj, s / used as f64)
            })
            .collect();
        locate_peak(&pts)
    };
    let full = peak_of(None)?;
    if n < 2 {
        return Some((full, 0.0));
    }
    let leave_out: Vec<f64> = (0..n).map(|k| peak_of(Some(k))).collect::<Option<_>>()?;
    let m = leave_out.iter().sum::<f64>() / n as f64;
    let var = leave_out.iter().map(|v| (v - m).powi(2)).sum::<f64>() * (n - 1) as f64 / n as f64;
    Some((full, var.sqrt()))
}

/// First crossing of two curves sampled on a common grid, by linear
/// interpolation of their difference.
pub fn curve_crossing(x: &[f64], a: &[f64], b: &[f64]) -> Option<f64> {
    let d: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
    for k in 0..d.len().saturating_sub(1) {
        if d[k] == 0.0 {
            return Some(x[k]);
        }
        if d[k].signum() != d[k + 1].signum() {
            let t = d[k] / (d[k] - d[k + 1]);
            return Some(x[k] + t * (x[k + 1] - x[k]));
        }
    }
    d.last().filter(|v| **v == 0.0).map(|_| x[x.len() - 1])
}
