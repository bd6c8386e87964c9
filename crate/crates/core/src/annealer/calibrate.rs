use serde::{Deserialize, Serialize};

use super::{sample_apq, DeviceModel, ProtocolParams, Schedule};
use crate::error::{Error, Result};
use crate::stats::mean;

/// Settings of the flux-bias binary search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    /// Pause point used for the calibration anneals.
    pub s_star: f64,
    /// Initial upper bound (positive), shared by all qubits.
    pub h_up0: f64,
    /// Initial lower bound (negative), shared by all qubits.
    pub h_low0: f64,
    /// Number of bisection rounds.
    pub rounds: usize,
    /// Repetitions per device call.
    pub reads_per_call: usize,
    /// Doubling budget for each bound.
    pub max_doublings: usize,
}

impl CalibrationParams {
    pub fn new(s_star: f64, h_up0: f64, h_low0: f64, rounds: usize) -> Self {
        CalibrationParams { s_star, h_up0, h_low0, rounds, reads_per_call: 5000, max_doublings: 16 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h_up0 > 0.0) || !(self.h_low0 < 0.0) {
            return Err(Error::Validation(format!(
                "need h_up0 > 0 and h_low0 < 0, got {} and {}",
                self.h_up0, self.h_low0
            )));
        }
        if self.reads_per_call < 1 {
            return Err(Error::Validation("reads_per_call must be >= 1".into()));
        }
        Ok(())
    }
}

/// A qubit whose response at the final bounds does not straddle zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QubitDiagnostic {
    pub qubit: usize,
    pub upper: f64,
    pub lower: f64,
    pub m_at_upper: f64,
    pub m_at_lower: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    /// Midpoints of the final brackets.
    pub corrections: Vec<f64>,
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
    pub up_doublings: usize,
    pub low_doublings: usize,
    /// Largest bracket width before the first and after every bisection round.
    pub widths: Vec<f64>,
    pub probe_calls: usize,
    pub diagnostics: Vec<QubitDiagnostic>,
}

fn max_width(up: &[f64], low: &[f64]) -> f64 {
    up.iter().zip(low).map(|(u, l)| u - l).fold(0.0, f64::max)
}

fn expand<F>(probe: &mut F, bound: &mut [f64], above: bool, budget: usize, calls: &mut usize) -> Result<(usize, Vec<f64>)>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut doublings = 0;
    loop {
        let m = probe(bound)?;
        *calls += 1;
        let avg = mean(&m);
        if (above && avg > 0.5) || (!above && avg < -0.5) {
            return Ok((doublings, m));
        }
        if doublings == budget {
            let stuck: Vec<usize> =
                (0..m.len()).filter(|&i| if above { m[i] <= 0.0 } else { m[i] >= 0.0 }).collect();
            return Err(Error::Numerical(format!(
                "{} bound did not reach mean magnetization {} after {budget} doublings \
                 (mean {avg:.3}); qubits on the wrong side: {stuck:?}",
                if above { "upper" } else { "lower" },
                if above { "> 0.5" } else { "< -0.5" },
            )));
        }
        bound.iter_mut().for_each(|b| *b *= 2.0);
        doublings += 1;
    }
}

/// Per-qubit binary search for the flux offset that zeroes each qubit's mean
/// readout. `probe(flux)` returns the per-qubit mean spin with the given
/// offsets applied.
///
/// The upper (lower) bounds are doubled until the mean magnetization exceeds
/// 0.5 (falls below -0.5); then each round moves one bound of every qubit to
/// the bracket midpoint according to the sign of the response there.
pub fn binary_search_flux<F>(
    mut probe: F,
    n: usize,
    h_up0: f64,
    h_low0: f64,
    rounds: usize,
    max_doublings: usize,
) -> Result<CalibrationReport>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if !(h_up0 > 0.0) || !(h_low0 < 0.0) {
        return Err(Error::Validation(format!("need h_up0 > 0 and h_low0 < 0, got {h_up0} and {h_low0}")));
    }
    let mut calls = 0;
    let mut up = vec![h_up0; n];
    let mut low = vec![h_low0; n];
    let (up_doublings, m_up) = expand(&mut probe, &mut up, true, max_doublings, &mut calls)?;
    let (low_doublings, m_low) = expand(&mut probe, &mut low, false, max_doublings, &mut calls)?;
    let diagnostics = (0..n)
        .filter(|&i| m_up[i] <= 0.0 || m_low[i] >= 0.0)
        .map(|i| QubitDiagnostic { qubit: i, upper: up[i], lower: low[i], m_at_upper: m_up[i], m_at_lower: m_low[i] })
        .collect();

    let mut widths = vec![max_width(&up, &low)];
    for _ in 0..rounds {
        let pivot: Vec<f64> = up.iter().zip(&low).map(|(u, l)| 0.5 * (u + l)).collect();
        let m = probe(&pivot)?;
        calls += 1;
        for i in 0..n {
            if m[i] > 0.0 {
                up[i] = pivot[i];
            } else {
                low[i] = pivot[i];
            }
        }
        widths.push(max_width(&up, &low));
    }
    let corrections = up.iter().zip(&low).map(|(u, l)| 0.5 * (u + l)).collect();
    Ok(CalibrationReport {
        corrections,
        upper: up,
        lower: low,
        up_doublings,
        low_doublings,
        widths,
        probe_calls: calls,
        diagnostics,
    })
}

/// Calibrates the device's flux corrections in place.
///
/// Every probe runs the anneal-pause-quench protocol at `params.s_star` with
/// all couplings and programmed fields set to zero, identity gauge, and the
/// candidate offsets as corrections.
pub fn calibrate_flux_bias(
    device: &mut DeviceModel,
    schedule: &Schedule,
    params: &CalibrationParams,
) -> Result<CalibrationReport> {
    params.validate()?;
    let n = device.n_sites();
    let mut probe_device = device.clone();
    probe_device.instance = device.instance.with_couplings(vec![0.0; device.instance.couplings().len()])?;
    probe_device.gauge = vec![1; n];
    let protocol = ProtocolParams::new(params.s_star, params.reads_per_call)?;
    let zero = vec![0.0; n];
    let report = binary_search_flux(
        |flux| {
            probe_device.corrections = flux.to_vec();
            Ok(sample_apq(&mut probe_device, schedule, &protocol, &zero)?.site_means())
        },
        n,
        params.h_up0,
        params.h_low0,
        params.rounds,
        params.max_doublings,
    )?;
    device.corrections = report.corrections.clone();
    device.calls = probe_device.calls;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_diluted_chimera, sample_disorder, DilutionPattern, DisorderDistribution};

    #[test]
    fn zero_bias_stays_within_resolution() {
        let n = 5;
        let rounds = 12;
        let r = binary_search_flux(|f| Ok(f.iter().map(|x| (8.0 * x).tanh()).collect()), n, 0.1, -0.1, rounds, 8)
            .unwrap();
        let res = 0.2 / f64::powi(2.0, rounds as i32);
        assert!(r.corrections.iter().all(|f| f.abs() <= res), "{:?}", r.corrections);
        assert!(r.diagnostics.is_empty());
        assert_eq!(r.probe_calls, 2 + rounds);
    }

    #[test]
    fn monotone_response_recovers_bias() {
        let b = [0.031, -0.047, 0.0, 0.2, -0.15];
        let rounds = 20;
        let r = binary_search_flux(
            |f| Ok(f.iter().zip(&b).map(|(x, bi)| (3.0 * (x - bi)).tanh()).collect()),
            b.len(),
            0.05,
            -0.05,
            rounds,
            8,
        )
        .unwrap();
        assert!(r.up_doublings >= 1 && r.low_doublings >= 1);
        for (i, (f, bi)) in r.corrections.iter().zip(&b).enumerate() {
            let width = r.upper[i] - r.lower[i];
            assert!((f - bi).abs() <= width, "qubit {i}: {f} vs {bi}");
        }
        assert!(r.widths.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn unreachable_bracket_is_reported() {
        let err = binary_search_flux(|f| Ok(vec![-1.0; f.len()]), 3, 0.1, -0.1, 4, 3).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("upper") && msg.contains("[0, 1, 2]"), "{msg}");
        assert!(binary_search_flux(|f| Ok(f.to_vec()), 3, -0.1, -0.2, 4, 3).is_err());
    }

    #[test]
    fn per_qubit_diagnostics_for_stuck_qubits() {
        // Qubit 2 never responds; the mean still brackets.
        let r = binary_search_flux(
            |f| Ok(f.iter().enumerate().map(|(i, x)| if i == 2 { 1.0 } else { (10.0 * x).tanh() }).collect()),
            5,
            0.5,
            -0.5,
            6,
            4,
        )
        .unwrap();
        assert_eq!(r.diagnostics.len(), 1);
        assert_eq!(r.diagnostics[0].qubit, 2);
    }

    #[test]
    fn calibration_leaves_couplings_and_gauge_alone() {
        let g = build_diluted_chimera(1, DilutionPattern::None).unwrap();
        let inst = sample_disorder(&g, DisorderDistribution::DwaveSixLevel, 4);
        let mut dev = DeviceModel::new(inst.clone(), 2).with_random_biases(0.05);
        dev.gauge[3] = -1;
        let mut params = CalibrationParams::new(0.6, 0.1, -0.1, 10);
        params.reads_per_call = 2000;
        let report = calibrate_flux_bias(&mut dev, &Schedule::bundled(), &params).unwrap();
        assert_eq!(dev.instance, inst);
        assert_eq!(dev.gauge[3], -1);
        assert_eq!(dev.corrections, report.corrections);
        assert_eq!(dev.calls(), report.probe_calls as u64);
        for (f, b) in dev.corrections.iter().zip(&dev.biases) {
            assert!((f - b).abs() < 0.01, "{f} vs {b}");
        }
    }
}
