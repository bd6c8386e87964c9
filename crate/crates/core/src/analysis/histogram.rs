use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where the logarithmic bins live.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RangePolicy {
    /// From the smallest to the largest positive sample.
    Auto,
    /// Explicit `[lo, hi]`; samples outside are excluded and counted.
    Fixed { lo: f64, hi: f64 },
}

/// Log-binned, normalized density of positive samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// `counts / (n_samples * width)`; sums to one against the bin widths.
    pub density: Vec<f64>,
    /// Samples that landed in a bin.
    pub n_samples: usize,
    /// Zero or negative samples that were dropped.
    pub non_positive: usize,
    /// Positive samples outside a fixed range.
    pub out_of_range: usize,
}

impl Histogram {
    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    /// Geometric bin centres.
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| (w[0] * w[1]).sqrt()).collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// `sum P(x) dx`, 1 up to rounding whenever `n_samples > 0`.
    pub fn total_mass(&self) -> f64 {
        self.density.iter().zip(self.widths()).map(|(p, w)| p * w).sum()
    }
}

pub fn build_histogram(samples: &[f64], n_bins: usize, range: RangePolicy) -> Result<Histogram> {
    if n_bins == 0 {
        return Err(Error::Validation("histogram needs at least one bin".into()));
    }
    let positive: Vec<f64> = samples.iter().copied().filter(|x| *x > 0.0 && x.is_finite()).collect();
    let non_positive = samples.len() - positive.len();
    if positive.is_empty() {
        return Err(Error::Validation(format!(
            "no positive samples ({} non-positive)",
            non_positive
        )));
    }
    let (lo, hi) = match range {
        RangePolicy::Auto => positive.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x))),
        RangePolicy::Fixed { lo, hi } => {
            if !(lo > 0.0 && hi > lo) {
                return Err(Error::Validation(format!("invalid histogram range [{lo}, {hi}]")));
            }
            (lo, hi)
        }
    };
    // A single distinct value still gets a finite bin.
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo * (1.0 - 1e-9), hi * (1.0 + 1e-9)) };
    let (llo, lhi) = (lo.ln(), hi.ln());
    let step = (lhi - llo) / n_bins as f64;
    let mut edges: Vec<f64> = (0..=n_bins).map(|k| (llo + step * k as f64).exp()).collect();
    edges[0] = lo;
    edges[n_bins] = hi;
    let mut counts = vec![0u64; n_bins];
    let mut out_of_range = 0;
    for &x in &positive {
        if x < lo || x > hi {
            out_of_range += 1;
            continue;
        }
        let mut k = (((x.ln() - llo) / step) as usize).min(n_bins - 1);
        // Settle rounding at bin boundaries against the stored edges.
        while k > 0 && x < edges[k] {
            k -= 1;
        }
        while k + 1 < n_bins && x >= edges[k + 1] {
            k += 1;
        }
        counts[k] += 1;
    }
    let n_samples = positive.len() - out_of_range;
    let density = counts
        .iter()
        .zip(edges.windows(2))
        .map(|(&c, w)| if n_samples == 0 { 0.0 } else { c as f64 / (n_samples as f64 * (w[1] - w[0])) })
        .collect();
    Ok(Histogram { edges, counts, density, n_samples, non_positive, out_of_range })
}

/// Which bins enter a power-law tail fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitPolicy {
    /// Fit starts at `start_factor` times the location of the density peak.
    pub start_factor: f64,
    /// Fit stops before the first bin past the peak with density below this value.
    pub density_floor: f64,
    /// Trailing bins with fewer counts are dropped.
    pub min_count: u64,
}

impl FitPolicy {
    /// Cutoff used for Monte Carlo histograms.
    pub fn qmc() -> Self {
        FitPolicy { start_factor: 0.8, density_floor: 1e-4, min_count: 30 }
    }

    /// Cutoff used for annealer histograms, which carry far fewer samples.
    pub fn device() -> Self {
        FitPolicy { start_factor: 0.8, density_floor: 1e-2, min_count: 5 }
    }
}

impl Default for FitPolicy {
    fn default() -> Self {
        FitPolicy::qmc()
    }
}

/// Weighted least-squares line through `(ln x, ln P)` of the tail bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub slope_error: f64,
    pub intercept: f64,
    pub x_lo: f64,
    pub x_hi: f64,
    pub n_points: usize,
    pub chi2_per_dof: f64,
    pub policy: FitPolicy,
}

pub fn fit_tail_slope(hist: &Histogram, policy: FitPolicy) -> Result<SlopeFit> {
    let centers = hist.centers();
    let peak = hist
        .density
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .ok_or_else(|| Error::Validation("empty histogram".into()))?;
    let start_x = policy.start_factor * centers[peak];
    let first = centers.iter().position(|&c| c >= start_x).unwrap_or(peak);
    let mut last = first.max(peak);
    while last < hist.n_bins() && hist.density[last] >= policy.density_floor {
        last += 1;
    }
    while last > first && hist.counts[last - 1] < policy.min_count.max(1) {
        last -= 1;
    }
    let bins: Vec<usize> = (first..last).collect();
    if bins.len() < 3 {
        return Err(Error::Numerical(format!(
            "only {} usable tail bins (need 3) under {policy:?}",
            bins.len()
        )));
    }
    let line = poisson_line(hist, &bins, &centers)?;
    Ok(SlopeFit {
        slope: line.slope,
        slope_error: line.slope_error,
        intercept: line.intercept,
        x_lo: centers[bins[0]],
        x_hi: centers[bins[bins.len() - 1]],
        n_points: bins.len(),
        chi2_per_dof: line.chi2 / (bins.len() - 2) as f64,
        policy,
    })
}

/// Maximum-likelihood line through `(ln x, ln P)` for Poisson bin counts,
/// computed by iteratively reweighted least squares (weights are the counts
/// predicted by the current line, not the observed ones).
fn poisson_line(hist: &Histogram, bins: &[usize], centers: &[f64]) -> Result<Line> {
    let n = hist.n_samples as f64;
    let widths = hist.widths();
    let observed: Vec<(f64, f64, f64)> = bins
        .iter()
        .map(|&k| (centers[k].ln(), hist.density[k].ln(), 1.0 / (hist.counts[k] as f64).sqrt()))
        .collect();
    let mut line = weighted_line(&observed)?;
    for _ in 0..100 {
        let working: Vec<(f64, f64, f64)> = bins
            .iter()
            .zip(&observed)
            .map(|(&k, &(x, _, _))| {
                let eta = line.intercept + line.slope * x;
                let mu = (n * widths[k] * eta.exp()).max(1e-300);
                (x, eta + (hist.counts[k] as f64 - mu) / mu, 1.0 / mu.sqrt())
            })
            .collect();
        let next = weighted_line(&working)?;
        let done = (next.slope - line.slope).abs() < 1e-13 * line.slope.abs().max(1.0)
            && (next.intercept - line.intercept).abs() < 1e-13 * line.intercept.abs().max(1.0);
        line = next;
        if done {
            break;
        }
    }
    // Report the goodness of fit on the observed log densities.
    line.chi2 = bins
        .iter()
        .zip(&observed)
        .map(|(&k, &(x, y, _))| {
            let mu = n * widths[k] * (line.intercept + line.slope * x).exp();
            mu * (y - line.intercept - line.slope * x).powi(2)
        })
        .sum();
    Ok(line)
}

pub(crate) struct Line {
    pub slope: f64,
    pub slope_error: f64,
    pub intercept: f64,
    pub intercept_error: f64,
    pub covariance: f64,
    pub chi2: f64,
}

/// Straight line through `(x, y, sigma_y)` with weights `1/sigma^2`
/// (unit weights if every sigma is zero).
pub(crate) fn weighted_line(pts: &[(f64, f64, f64)]) -> Result<Line> {
    let unit = pts.iter().all(|p| p.2 == 0.0);
    if !unit && pts.iter().any(|p| !(p.2 > 0.0)) {
        return Err(Error::Validation("mixed zero and non-zero errors".into()));
    }
    let w = |s: f64| if unit { 1.0 } else { 1.0 / (s * s) };
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for &(x, y, s) in pts {
        sw += w(s);
        sx += w(s) * x;
        sy += w(s) * y;
    }
    let (xm, ym) = (sx / sw, sy / sw);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y, s) in pts {
        sxx += w(s) * (x - xm) * (x - xm);
        sxy += w(s) * (x - xm) * (y - ym);
    }
    let scale = pts.iter().map(|p| p.0.abs()).fold(0.0, f64::max).max(1.0);
    if sxx <= 1e-24 * scale * scale * sw {
        return Err(Error::Numerical("degenerate design: all x equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let chi2: f64 = pts.iter().map(|&(x, y, s)| w(s) * (y - intercept - slope * x).powi(2)).sum();
    // Unit weights carry no error scale; estimate it from the residuals.
    let s2 = if unit {
        if pts.len() > 2 { chi2 / (pts.len() - 2) as f64 } else { 0.0 }
    } else {
        1.0
    };
    let var_slope = s2 / sxx;
    let var_intercept = s2 * (1.0 / sw + xm * xm / sxx);
    Ok(Line {
        slope,
        slope_error: var_slope.sqrt(),
        intercept,
        intercept_error: var_intercept.sqrt(),
        covariance: -xm * var_slope,
        chi2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::pareto_samples;

    #[test]
    fn sparse_rising_edge_does_not_empty_the_range() {
        let mut x = pareto_samples(3.0, 1.0, 100_000, 4);
        x.extend((0..40).map(|k| 0.9 + 0.0025 * k as f64));
        let h = build_histogram(&x, 40, RangePolicy::Auto).unwrap();
        let fit = fit_tail_slope(&h, FitPolicy::qmc()).unwrap();
        assert!(fit.n_points >= 5, "{fit:?}");
        assert!(fit.x_lo < 1.0);
        assert!(fit.x_hi > 4.0 && fit.slope < -3.0, "{fit:?}");
    }

    #[test]
    fn uniform_samples_single_bin() {
        let x: Vec<f64> = (0..=1000).map(|k| 1.0 + k as f64 / 1000.0).collect();
        let h = build_histogram(&x, 1, RangePolicy::Fixed { lo: 1.0, hi: 2.0 }).unwrap();
        assert_eq!(h.counts, vec![1001]);
        assert!((h.density[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn non_positive_samples_are_reported() {
        let h = build_histogram(&[0.0, -1.0, 0.5, 2.0, 3.0], 4, RangePolicy::Auto).unwrap();
        assert_eq!(h.non_positive, 2);
        assert_eq!(h.n_samples, 3);
        assert!(build_histogram(&[0.0, -2.0], 3, RangePolicy::Auto).is_err());
        let f = build_histogram(&[0.5, 2.0, 30.0], 2, RangePolicy::Fixed { lo: 0.1, hi: 10.0 }).unwrap();
        assert_eq!(f.out_of_range, 1);
    }

    #[test]
    fn flat_histogram_has_zero_slope() {
        // Equal counts per unit length: density constant on a log grid.
        let x: Vec<f64> = (0..100_000).map(|k| 1.0 + 9.0 * (k as f64 + 0.5) / 100_000.0).collect();
        let h = build_histogram(&x, 20, RangePolicy::Fixed { lo: 1.0, hi: 10.0 }).unwrap();
        let fit = fit_tail_slope(&h, FitPolicy::qmc()).unwrap();
        assert!(fit.slope.abs() < 0.01, "{}", fit.slope);
    }

    #[test]
    fn power_law_slope_is_recovered() {
        let x = pareto_samples(13.83, 1.0, 100_000, 5);
        let h = build_histogram(&x, 40, RangePolicy::Auto).unwrap();
        let fit = fit_tail_slope(&h, FitPolicy::qmc()).unwrap();
        assert!((fit.slope + 14.83).abs() < 3.0 * fit.slope_error, "{fit:?}");
    }

    #[test]
    fn too_few_bins_is_an_error() {
        let h = build_histogram(&[1.0, 1.1, 1.2], 2, RangePolicy::Auto).unwrap();
        assert!(fit_tail_slope(&h, FitPolicy::qmc()).is_err());
    }

    #[test]
    fn line_through_exact_points() {
        let l = weighted_line(&[(1.0, 3.0, 0.0), (2.0, 5.0, 0.0)]).unwrap();
        assert!((l.slope - 2.0).abs() < 1e-15 && (l.intercept - 1.0).abs() < 1e-15);
        assert_eq!(l.chi2, 0.0);
        assert!(weighted_line(&[(1.0, 3.0, 0.1), (1.0, 5.0, 0.1)]).is_err());
    }
}
