use serde::{Deserialize, Serialize};

use super::{map_s_to_beta_gamma, sample_apq, DeviceModel, ProtocolParams, SampleSet, Schedule};
use crate::analysis::{fit_magnetization_curve, MagnetizationFit};
use crate::error::{Error, Result};
use crate::qmc::MomentRecord;
use crate::stats::{mean, variance};

/// `|m|` at or above this value counts as saturated.
pub const SATURATION_THRESHOLD: f64 = 0.95;

/// Moments of the readout magnetization over the repetitions of one call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceMoments {
    pub n_rep: usize,
    pub m1: f64,
    pub m_abs: f64,
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
    pub m_abs_err: f64,
    pub m2_err: f64,
    pub m4_err: f64,
    pub site_means: Vec<f64>,
}

fn sem(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

pub fn magnetization_moments(samples: &SampleSet) -> Result<DeviceMoments> {
    if samples.n_rep() < 2 {
        return Err(Error::Validation("need at least two samples".into()));
    }
    let ms = samples.magnetizations();
    let pow = |k: i32| -> Vec<f64> { ms.iter().map(|m| m.powi(k)).collect() };
    let abs: Vec<f64> = ms.iter().map(|m| m.abs()).collect();
    let (m2, m4) = (pow(2), pow(4));
    Ok(DeviceMoments {
        n_rep: ms.len(),
        m1: mean(&ms),
        m_abs: mean(&abs),
        m2: mean(&m2),
        m3: mean(&pow(3)),
        m4: mean(&m4),
        m_abs_err: sem(&abs),
        m2_err: sem(&m2),
        m4_err: sem(&m4),
        site_means: samples.site_means(),
    })
}

/// One line of a device sample log: the QMC record layout plus the pause
/// point and protocol timings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceRecord {
    #[serde(flatten)]
    pub record: MomentRecord,
    pub s_star: f64,
    pub t_anneal_us: f64,
    pub t_pause_us: f64,
    pub t_quench_us: f64,
    pub n_rep: usize,
    pub m1: f64,
    pub site_means: Vec<f64>,
}

impl DeviceMoments {
    /// Wraps the moments in the shared record layout. Readouts are +-1, so the
    /// per-site squares are identically one; the Trotter number is reported as 0.
    pub fn into_record(
        self,
        device: &DeviceModel,
        schedule: &Schedule,
        protocol: &ProtocolParams,
        instance_id: &str,
    ) -> Result<DeviceRecord> {
        let (beta, gamma) = map_s_to_beta_gamma(schedule, protocol.s_star, device.t_phys)?;
        let n = device.n_sites();
        Ok(DeviceRecord {
            record: MomentRecord {
                instance: instance_id.to_string(),
                l: device.instance.graph().l(),
                beta,
                gamma,
                trotter: 0,
                n_meas: self.n_rep,
                m_abs: self.m_abs,
                m2: self.m2,
                m4: self.m4,
                m_abs_err: self.m_abs_err,
                m2_err: self.m2_err,
                m4_err: self.m4_err,
                mi2: vec![1.0; n],
                mi4: vec![1.0; n],
                mi2_err: vec![0.0; n],
            },
            s_star: protocol.s_star,
            t_anneal_us: protocol.t_anneal_us,
            t_pause_us: protocol.t_pause_us,
            t_quench_us: protocol.t_quench_us,
            n_rep: self.n_rep,
            m1: self.m1,
            site_means: self.site_means,
        })
    }
}

/// `2 n_side + 1` evenly spaced fields in `[-h_max, h_max]`.
pub fn symmetric_field_grid(h_max: f64, n_side: usize) -> Vec<f64> {
    let n = n_side as f64;
    (0..=2 * n_side).map(|k| h_max * (k as f64 - n) / n).collect()
}

/// Magnetization curve of one instance and its odd-polynomial fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSweep {
    pub h: Vec<f64>,
    pub m: Vec<f64>,
    pub m_err: Vec<f64>,
    pub fit: MagnetizationFit,
    pub chi: f64,
    pub chi_nl: f64,
    /// Every grid point has `|m| >= SATURATION_THRESHOLD`. Such a curve
    /// carries no measurable response: `chi` and `chi_nl` are reported as 0
    /// and the raw polynomial is kept in `fit`.
    pub saturated: bool,
}

/// Builds a [`FieldSweep`] from a measured curve.
pub fn fit_field_sweep(h: Vec<f64>, m: Vec<f64>, m_err: Vec<f64>, degree: usize) -> Result<FieldSweep> {
    let pts: Vec<(f64, f64)> = h.iter().copied().zip(m.iter().copied()).collect();
    let fit = fit_magnetization_curve(&pts, degree)?;
    let saturated = m.iter().all(|x| x.abs() >= SATURATION_THRESHOLD);
    let (chi, chi_nl) = if saturated { (0.0, 0.0) } else { (fit.chi, fit.chi_nl) };
    Ok(FieldSweep { chi, chi_nl, fit, h, m, m_err, saturated })
}

/// Measures `<m>` at every uniform field of `h_grid` (device units) and fits
/// `m = chi h - chi_nl h^3 (+ c5 h^5)`.
pub fn field_sweep_susceptibility(
    device: &mut DeviceModel,
    schedule: &Schedule,
    protocol: &ProtocolParams,
    h_grid: &[f64],
    degree: usize,
) -> Result<FieldSweep> {
    let n = device.n_sites();
    let (mut m, mut m_err) = (Vec::new(), Vec::new());
    for &h in h_grid {
        let ms = sample_apq(device, schedule, protocol, &vec![h; n])?.magnetizations();
        m.push(mean(&ms));
        m_err.push(sem(&ms));
    }
    fit_field_sweep(h_grid.to_vec(), m, m_err, degree)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(rows: &[&[i8]]) -> SampleSet {
        SampleSet { n_sites: rows[0].len(), spins: rows.iter().flat_map(|r| r.iter().copied()).collect() }
    }

    #[test]
    fn trivial_moment_cases() {
        let up = magnetization_moments(&set(&[&[1, 1, 1], &[1, 1, 1]])).unwrap();
        assert_eq!((up.m1, up.m2, up.m4, up.m_abs), (1.0, 1.0, 1.0, 1.0));
        let sym = magnetization_moments(&set(&[&[1, 1, -1], &[-1, -1, 1]])).unwrap();
        assert!(sym.m1.abs() < 1e-15 && sym.m3.abs() < 1e-15);
        assert_eq!(sym.site_means, vec![0.0; 3]);
        assert!(magnetization_moments(&set(&[&[1, 1]])).is_err());
    }

    #[test]
    fn fair_spins_have_binomial_m2() {
        use rand::Rng;
        let mut rng = crate::rng::stream(3, &[]);
        let n = 16;
        let spins: Vec<i8> = (0..n * 20_000).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
        let mom = magnetization_moments(&SampleSet { n_sites: n, spins }).unwrap();
        assert!((mom.m2 - 1.0 / n as f64).abs() < 3.0 * mom.m2_err, "{mom:?}");
    }

    #[test]
    fn linear_and_saturated_curves() {
        let h = symmetric_field_grid(0.1, 5);
        assert_eq!(h.len(), 11);
        assert!((h[0] + 0.1).abs() < 1e-15 && h[5] == 0.0);
        let m: Vec<f64> = h.iter().map(|x| 3.0 * x).collect();
        let sw = fit_field_sweep(h.clone(), m, vec![0.0; 11], 3).unwrap();
        assert!((sw.chi - 3.0).abs() < 1e-12 && sw.chi_nl.abs() < 1e-9 && !sw.saturated);
        let pos: Vec<f64> = h.iter().copied().filter(|x| *x >= 0.0).collect();
        let sw = fit_field_sweep(pos.clone(), vec![1.0; pos.len()], vec![0.0; pos.len()], 3).unwrap();
        assert!(sw.saturated && sw.chi == 0.0 && sw.chi_nl == 0.0);
        assert!(sw.fit.chi > 0.0);
    }
}
