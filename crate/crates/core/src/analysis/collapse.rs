use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One measured point of a size-`L` curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    #[serde(rename = "L")]
    pub l: usize,
    /// Control parameter (Gamma or s*).
    pub x: f64,
    pub y: f64,
    pub err: f64,
}

/// How the ordinate is rescaled with system size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingForm {
    /// `y` as is (Binder ratio).
    Plain,
    /// `y L^(-gamma/nu)`; the exponent parameter is `gamma/nu`.
    Susceptibility,
    /// `y L^(beta/nu)`; the exponent parameter is `beta/nu`.
    Magnetization,
}

impl ScalingForm {
    fn n_params(self) -> usize {
        if self == ScalingForm::Plain {
            2
        } else {
            3
        }
    }

    fn y_factor(self, l: f64, exponent: f64) -> f64 {
        match self {
            ScalingForm::Plain => 1.0,
            ScalingForm::Susceptibility => l.powf(-exponent),
            ScalingForm::Magnetization => l.powf(exponent),
        }
    }
}

/// Fraction of points that must have a master-curve estimate.
const MIN_OVERLAP: f64 = 0.25;

fn rescale(points: &[CurvePoint], form: ScalingForm, params: &[f64]) -> Vec<(usize, f64, f64, f64)> {
    let (xc, nu) = (params[0], params[1]);
    let exponent = params.get(2).copied().unwrap_or(0.0);
    points
        .iter()
        .map(|p| {
            let l = p.l as f64;
            let f = form.y_factor(l, exponent);
            (p.l, l.powf(1.0 / nu) * (p.x - xc), p.y * f, p.err * f)
        })
        .collect()
}

/// Median spacing between neighbouring rescaled points of the same size.
fn median_spacing(scaled: &[(usize, f64, f64, f64)]) -> f64 {
    let mut by_size: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
    for s in scaled {
        by_size.entry(s.0).or_default().push(s.1);
    }
    let mut gaps = Vec::new();
    for xs in by_size.values_mut() {
        xs.sort_by(f64::total_cmp);
        gaps.extend(xs.windows(2).map(|w| w[1] - w[0]).filter(|g| *g > 0.0));
    }
    if gaps.is_empty() {
        return 0.0;
    }
    gaps.sort_by(f64::total_cmp);
    gaps[gaps.len() / 2]
}

/// Sum of squared normalized deviations and the number of points that had a
/// master-curve estimate from the other sizes.
fn deviation_sum(points: &[CurvePoint], form: ScalingForm, params: &[f64]) -> Result<(f64, usize)> {
    let scaled = rescale(points, form, params);
    let h = 1.5 * median_spacing(&scaled);
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Numerical("degenerate x-range after rescaling".into()));
    }
    let mut total = 0.0;
    let mut used = 0;
    for &(l, x, y, e) in &scaled {
        let others: Vec<&(usize, f64, f64, f64)> =
            scaled.iter().filter(|o| o.0 != l && (o.1 - x).abs() <= h).collect();
        if others.len() < 2 {
            continue;
        }
        let below = others.iter().any(|o| o.1 <= x);
        let above = others.iter().any(|o| o.1 >= x);
        if !(below && above) {
            continue;
        }
        // Local weighted linear fit of the other curves around x.
        let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for o in &others {
            let w = 1.0 / (o.3 * o.3).max(1e-300);
            sw += w;
            sx += w * o.1;
            sy += w * o.2;
        }
        let (xm, ym) = (sx / sw, sy / sw);
        let (mut sxx, mut sxy) = (0.0, 0.0);
        for o in &others {
            let w = 1.0 / (o.3 * o.3).max(1e-300);
            sxx += w * (o.1 - xm) * (o.1 - xm);
            sxy += w * (o.1 - xm) * (o.2 - ym);
        }
        let (pred, var_pred) = if sxx > 0.0 {
            let b = sxy / sxx;
            (ym + b * (x - xm), 1.0 / sw + (x - xm) * (x - xm) / sxx)
        } else {
            (ym, 1.0 / sw)
        };
        total += (y - pred).powi(2) / (e * e + var_pred);
        used += 1;
    }
    if (used as f64) < MIN_OVERLAP * points.len() as f64 || used == 0 {
        return Err(Error::Numerical(format!(
            "rescaled curves overlap at only {used} of {} points",
            points.len()
        )));
    }
    Ok((total, used))
}

fn check_sizes(points: &[CurvePoint]) -> Result<()> {
    let mut sizes: Vec<usize> = points.iter().map(|p| p.l).collect();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.len() < 2 {
        return Err(Error::Validation("collapse needs at least two system sizes".into()));
    }
    if points.iter().any(|p| !(p.err > 0.0)) {
        return Err(Error::Validation("collapse needs positive error bars".into()));
    }
    Ok(())
}

/// Collapse quality `S`: mean squared deviation of each rescaled point from
/// the master curve built from the other sizes, in units of the combined error.
/// `params` is `[x_c, nu]` or `[x_c, nu, exponent]` depending on `form`.
pub fn collapse_quality(points: &[CurvePoint], form: ScalingForm, params: &[f64]) -> Result<f64> {
    check_sizes(points)?;
    if params.len() != form.n_params() {
        return Err(Error::Validation(format!("{form:?} takes {} parameters", form.n_params())));
    }
    if !(params[1] > 0.0) {
        return Err(Error::Validation("nu must be positive".into()));
    }
    let (total, used) = deviation_sum(points, form, params)?;
    Ok(total / used as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub start: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub form: ScalingForm,
    pub x_c: f64,
    pub x_c_error: f64,
    pub nu: f64,
    pub nu_error: f64,
    /// `gamma/nu` or `beta/nu` for the non-plain forms.
    pub exponent: Option<f64>,
    pub exponent_error: Option<f64>,
    pub quality: f64,
    pub n_used: usize,
    pub iterations: u64,
    pub converged: bool,
}

impl ScalingFit {
    /// `gamma` or `beta` (exponent times nu) with a first-order error.
    pub fn bare_exponent(&self) -> Option<(f64, f64)> {
        let (e, de) = (self.exponent?, self.exponent_error?);
        let v = e * self.nu;
        Some((v, ((de * self.nu).powi(2) + (e * self.nu_error).powi(2)).sqrt()))
    }
}

struct Objective<'a> {
    points: &'a [CurvePoint],
    form: ScalingForm,
    bounds: &'a SearchBox,
}

impl CostFunction for Objective<'_> {
    type Param = Vec<f64>;
    type Output = f64;
    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let inside = p
            .iter()
            .zip(self.bounds.lower.iter().zip(&self.bounds.upper))
            .all(|(v, (lo, hi))| v >= lo && v <= hi);
        if !inside {
            return Ok(f64::MAX);
        }
        Ok(collapse_quality(self.points, self.form, p).unwrap_or(f64::MAX))
    }
}

/// Nelder-Mead minimization of the collapse quality inside `bounds`.
///
/// Each error is the mean half-width, along that parameter's axis, of the
/// region where `S <= S_min + 1`.
pub fn optimize_collapse(points: &[CurvePoint], form: ScalingForm, bounds: &SearchBox) -> Result<ScalingFit> {
    check_sizes(points)?;
    let k = form.n_params();
    if bounds.lower.len() != k || bounds.upper.len() != k || bounds.start.len() != k {
        return Err(Error::Validation(format!("search box must have {k} dimensions")));
    }
    let mut simplex = vec![bounds.start.clone()];
    for d in 0..k {
        let mut v = bounds.start.clone();
        v[d] += 0.1 * (bounds.upper[d] - bounds.lower[d]);
        if v[d] > bounds.upper[d] {
            v[d] = bounds.start[d] - 0.1 * (bounds.upper[d] - bounds.lower[d]);
        }
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-10)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let objective = Objective { points, form, bounds };
    let budget = 4000;
    let res = Executor::new(objective, solver)
        .configure(|s| s.max_iters(budget))
        .run()
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let state = res.state();
    let best = state
        .get_best_param()
        .cloned()
        .ok_or_else(|| Error::Numerical("optimizer returned no parameters".into()))?;
    let iterations = state.get_iter();
    let (total, used) = deviation_sum(points, form, &best)?;
    let s_min = total / used as f64;
    let errors: Vec<f64> =
        (0..k).map(|d| contour_half_width(points, form, &best, d, s_min + 1.0, bounds)).collect();
    Ok(ScalingFit {
        form,
        x_c: best[0],
        x_c_error: errors[0],
        nu: best[1],
        nu_error: errors[1],
        exponent: best.get(2).copied(),
        exponent_error: errors.get(2).copied(),
        quality: s_min,
        n_used: used,
        iterations,
        converged: iterations < budget,
    })
}

/// Mean distance to the `target` level of `S` along axis `d`.
fn contour_half_width(
    points: &[CurvePoint],
    form: ScalingForm,
    best: &[f64],
    d: usize,
    target: f64,
    bounds: &SearchBox,
) -> f64 {
    let span = bounds.upper[d] - bounds.lower[d];
    let quality_at = |v: f64| -> f64 {
        let mut p = best.to_vec();
        p[d] = v;
        if p[1] <= 0.0 {
            return f64::INFINITY;
        }
        deviation_sum(points, form, &p).map(|(t, n)| t / n as f64).unwrap_or(f64::INFINITY)
    };
    let side = |dir: f64| -> f64 {
        // Expand until the level is exceeded, then bisect.
        let mut step = 1e-4 * span;
        let mut inner = 0.0;
        while quality_at(best[d] + dir * step) < target {
            inner = step;
            step *= 2.0;
            if step > span {
                return span;
            }
        }
        let mut outer = step;
        for _ in 0..60 {
            let mid = 0.5 * (inner + outer);
            if quality_at(best[d] + dir * mid) < target {
                inner = mid;
            } else {
                outer = mid;
            }
        }
        0.5 * (inner + outer)
    };
    0.5 * (side(1.0) + side(-1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::synthetic_scaling_curves;

    fn binder_box() -> SearchBox {
        SearchBox { lower: vec![1.5, 0.5], upper: vec![2.0, 3.0], start: vec![1.7, 1.0] }
    }

    #[test]
    fn single_size_is_rejected() {
        let pts = vec![CurvePoint { l: 4, x: 1.0, y: 0.5, err: 0.01 }; 3];
        assert!(collapse_quality(&pts, ScalingForm::Plain, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn true_parameters_beat_no_rescaling() {
        let pts = synthetic_scaling_curves(ScalingForm::Plain, 1.75, 1.4, 0.0, 0.003, 1);
        let at_truth = collapse_quality(&pts, ScalingForm::Plain, &[1.75, 1.4]).unwrap();
        let unscaled = collapse_quality(&pts, ScalingForm::Plain, &[1.75, 1e6]).unwrap();
        assert!(at_truth < 3.0 && unscaled > 10.0 * at_truth, "{at_truth} {unscaled}");
    }

    #[test]
    fn argmin_is_invariant_under_relabeling_and_error_scaling() {
        let pts = synthetic_scaling_curves(ScalingForm::Plain, 1.75, 1.4, 0.0, 0.003, 2);
        let a = optimize_collapse(&pts, ScalingForm::Plain, &binder_box()).unwrap();
        let mut shuffled = pts.clone();
        shuffled.reverse();
        let b = optimize_collapse(&shuffled, ScalingForm::Plain, &binder_box()).unwrap();
        let scaled: Vec<CurvePoint> = pts.iter().map(|p| CurvePoint { err: 3.0 * p.err, ..*p }).collect();
        let c = optimize_collapse(&scaled, ScalingForm::Plain, &binder_box()).unwrap();
        assert!((a.x_c - b.x_c).abs() < 1e-5 && (a.nu - b.nu).abs() < 1e-4);
        assert!((a.x_c - c.x_c).abs() < 1e-5 && (a.nu - c.nu).abs() < 1e-4);
        assert!((c.quality * 9.0 - a.quality).abs() < 1e-6 * a.quality.max(1.0));
    }

    #[test]
    fn recovers_plain_collapse() {
        let pts = synthetic_scaling_curves(ScalingForm::Plain, 1.75, 1.4, 0.0, 0.003, 3);
        let fit = optimize_collapse(&pts, ScalingForm::Plain, &binder_box()).unwrap();
        assert!((fit.x_c - 1.75).abs() < fit.x_c_error, "{fit:?}");
        assert!((fit.nu - 1.4).abs() < fit.nu_error, "{fit:?}");
    }

    #[test]
    fn recovers_susceptibility_and_magnetization_exponents() {
        for (form, exponent) in [(ScalingForm::Susceptibility, 0.96 / 1.4), (ScalingForm::Magnetization, 0.95 / 1.4)] {
            let pts = synthetic_scaling_curves(form, 1.75, 1.4, exponent, 0.003, 4);
            let bounds = SearchBox { lower: vec![1.5, 0.5, 0.0], upper: vec![2.0, 3.0, 2.0], start: vec![1.7, 1.0, 0.5] };
            let fit = optimize_collapse(&pts, form, &bounds).unwrap();
            assert!((fit.x_c - 1.75).abs() < fit.x_c_error, "{fit:?}");
            assert!((fit.nu - 1.4).abs() < fit.nu_error, "{fit:?}");
            let e = fit.exponent.unwrap();
            assert!((e - exponent).abs() < fit.exponent_error.unwrap(), "{fit:?}");
        }
    }
}
