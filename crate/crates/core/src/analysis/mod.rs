//! Histograms and power-law tails, finite-size-scaling collapses,
//! extrapolations and small polynomial fits.

mod collapse;
mod fit;
mod histogram;

pub use collapse::{collapse_quality, optimize_collapse, CurvePoint, ScalingFit, ScalingForm, SearchBox};
pub use fit::{
    curve_crossing, fit_magnetization_curve, linear_extrapolate, locate_peak, peak_with_jackknife, scan_dynamical_z, LinearFit,
    MagnetizationFit, ZScan,
};
pub use histogram::{build_histogram, fit_tail_slope, FitPolicy, Histogram, RangePolicy, SlopeFit};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::stream;

/// Spatial dimension assigned to the diluted Chimera lattice.
pub const SPATIAL_DIMENSION: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExponentSource {
    Linear,
    Nonlinear,
}

/// `d/z'` from a histogram tail, tagged with its control parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentEstimate {
    pub d_over_zprime: f64,
    pub error: f64,
    pub source: ExponentSource,
    pub control: f64,
}

impl ExponentEstimate {
    /// `z'` for `d = SPATIAL_DIMENSION`.
    pub fn zprime(&self) -> f64 {
        SPATIAL_DIMENSION / self.d_over_zprime
    }
}

/// Linear susceptibility tail `P ~ chi^-(d/z' + 1)`.
pub fn dz_from_linear_slope(fit: &SlopeFit, control: f64) -> ExponentEstimate {
    ExponentEstimate {
        d_over_zprime: -fit.slope - 1.0,
        error: fit.slope_error,
        source: ExponentSource::Linear,
        control,
    }
}

/// Nonlinear susceptibility tail `P ~ chi_nl^-(d/3z' + 1)`.
pub fn dz_from_nonlinear_slope(fit: &SlopeFit, control: f64) -> ExponentEstimate {
    ExponentEstimate {
        d_over_zprime: 3.0 * (-fit.slope - 1.0),
        error: 3.0 * fit.slope_error,
        source: ExponentSource::Nonlinear,
        control,
    }
}

/// `n` draws from the Pareto density `alpha x_min^alpha x^-(alpha+1)`, `x >= x_min`,
/// by inverting the distribution function.
pub fn pareto_samples(alpha: f64, x_min: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, &[0x9a7e]);
    (0..n)
        .map(|_| {
            let u: f64 = 1.0 - rng.random::<f64>();
            x_min * u.powf(-1.0 / alpha)
        })
        .collect()
}

/// Noisy curves following an exact scaling form, for sizes 4..=12 (step 2)
/// and 26 control values in `[1.5, 2.0]`. Error bars are `rel_noise * y`.
pub fn synthetic_scaling_curves(
    form: ScalingForm,
    x_c: f64,
    nu: f64,
    exponent: f64,
    rel_noise: f64,
    seed: u64,
) -> Vec<CurvePoint> {
    let mut rng = stream(seed, &[0xc011]);
    let mut out = Vec::new();
    for l in [4usize, 6, 8, 10, 12] {
        let lf = l as f64;
        for k in 0..26 {
            let x = 1.5 + 0.02 * k as f64;
            let u = lf.powf(1.0 / nu) * (x - x_c);
            let y = match form {
                ScalingForm::Plain => 0.5 - 0.45 * u.tanh(),
                ScalingForm::Susceptibility => lf.powf(exponent) * (0.2 + 1.0 / (1.0 + u * u)),
                ScalingForm::Magnetization => lf.powf(-exponent) * (0.55 - 0.5 * u.tanh()),
            };
            let err = rel_noise * y;
            let g: f64 = {
                let a: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                let b: f64 = rng.random();
                (-2.0 * a.ln()).sqrt() * (std::f64::consts::TAU * b).cos()
            };
            out.push(CurvePoint { l, x, y: y + err * g, err });
        }
    }
    out
}
