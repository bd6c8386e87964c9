//! Simulated analog annealer.
//!
//! The device is modelled as returning z-basis snapshots of the thermal state
//! of the transverse-field Hamiltonian at the pause point `s*`, written in the
//! annealer convention
//!
//! ```text
//! H(s) = -A(s)/2 sum_i sx_i + B(s)/2 [ sum_<ij> J_ij sz_i sz_j - sum_i h_i sz_i ]
//! ```
//!
//! with `J`, `h` in device units. Matching Boltzmann exponents with the QMC
//! Hamiltonian gives `beta = h_P B / (4 k_B T)`, `Gamma = 2A/B`, and QMC-unit
//! couplings and fields equal to twice the device values.
//!
//! On top of the thermal sample sit per-qubit static biases, additive flux
//! corrections, a gauge, and a quench that relaxes a fraction of the samples
//! into a classical local minimum.

mod calibrate;
mod device;
mod response;
mod schedule;

pub use calibrate::{
    binary_search_flux, calibrate_flux_bias, CalibrationParams, CalibrationReport, QubitDiagnostic,
};
pub use device::{default_quench, gauge_transform, sample_apq, Backend, DeviceModel, DeviceState, SampleSet};
pub use response::{
    field_sweep_susceptibility, fit_field_sweep, magnetization_moments, symmetric_field_grid, DeviceMoments,
    DeviceRecord, FieldSweep, SATURATION_THRESHOLD,
};
pub use schedule::Schedule;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planck constant, J s (exact SI value).
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Boltzmann constant, J / K (exact SI value).
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Default chip temperature, K.
pub const DEFAULT_T_PHYS: f64 = 0.012;

/// QMC `(beta, Gamma)` equivalent to pausing at `s_star` at temperature
/// `t_phys` (kelvin).
pub fn map_s_to_beta_gamma(schedule: &Schedule, s_star: f64, t_phys: f64) -> Result<(f64, f64)> {
    if !(t_phys > 0.0) || !t_phys.is_finite() {
        return Err(Error::Validation(format!("physical temperature must be positive, got {t_phys}")));
    }
    let (a, b) = schedule.at(s_star)?;
    if !(b > 0.0) {
        return Err(Error::Validation(format!("B({s_star}) = {b} GHz is not positive")));
    }
    let beta = (PLANCK * 1e9 * b) / (4.0 * BOLTZMANN * t_phys);
    Ok((beta, 2.0 * a / b))
}

/// Anneal-pause-quench timings (microseconds) and repetition count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub s_star: f64,
    pub t_anneal_us: f64,
    pub t_pause_us: f64,
    pub t_quench_us: f64,
    pub n_rep: usize,
    pub interval_us: f64,
}

impl ProtocolParams {
    /// Anneal for `1000 s*` us, pause 100 us, quench in `1 - s*` us,
    /// 200 us between repetitions.
    pub fn new(s_star: f64, n_rep: usize) -> Result<Self> {
        let p = ProtocolParams {
            s_star,
            t_anneal_us: 1000.0 * s_star,
            t_pause_us: 100.0,
            t_quench_us: 1.0 - s_star,
            n_rep,
            interval_us: 200.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s_star > 0.0 && self.s_star < 1.0) {
            return Err(Error::Validation(format!("pause point must lie in (0, 1), got {}", self.s_star)));
        }
        let times = [self.t_anneal_us, self.t_pause_us, self.t_quench_us, self.interval_us];
        if times.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(Error::Validation("protocol times must be positive".into()));
        }
        if self.n_rep == 0 {
            return Err(Error::Validation("need at least one repetition".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pause_point_anchor() {
        let (beta, gamma) = map_s_to_beta_gamma(&Schedule::bundled(), 0.386, DEFAULT_T_PHYS).unwrap();
        assert!((beta - 2.49).abs() < 0.01, "beta = {beta}");
        assert!((gamma - 1.37).abs() < 0.01, "gamma = {gamma}");
        assert!((beta / 2.49 - 0.999_842).abs() < 1e-6);
    }

    #[test]
    fn mapping_scales_exactly() {
        let flat = Schedule::new(&[(0.0, 3.0, 3.0), (1.0, 3.0, 3.0)]).unwrap();
        let (beta, gamma) = map_s_to_beta_gamma(&flat, 0.5, 0.02).unwrap();
        assert_eq!(gamma, 2.0);
        let (beta_half, gamma_half) = map_s_to_beta_gamma(&flat, 0.5, 0.01).unwrap();
        assert_eq!(beta_half, 2.0 * beta);
        assert_eq!(gamma_half, gamma);
        let double = Schedule::new(&[(0.0, 3.0, 6.0), (1.0, 3.0, 6.0)]).unwrap();
        assert_eq!(map_s_to_beta_gamma(&double, 0.5, 0.02).unwrap().0, 2.0 * beta);
    }

    #[test]
    fn mapping_errors() {
        let sch = Schedule::bundled();
        assert!(map_s_to_beta_gamma(&sch, 0.5, 0.0).is_err());
        assert!(map_s_to_beta_gamma(&sch, 1.5, 0.012).is_err());
        let dead = Schedule::new(&[(0.0, 1.0, 0.0), (1.0, 0.0, 0.0)]).unwrap();
        assert!(map_s_to_beta_gamma(&dead, 0.5, 0.012).is_err());
    }

    #[test]
    fn protocol_timings() {
        let p = ProtocolParams::new(0.38, 100).unwrap();
        assert!((p.t_anneal_us - 380.0).abs() < 1e-12 && (p.t_quench_us - 0.62).abs() < 1e-12);
        assert!(ProtocolParams::new(1.0, 100).is_err());
        assert!(ProtocolParams::new(0.0, 100).is_err());
        assert!(ProtocolParams::new(0.5, 0).is_err());
    }
}
