//! Disorder-averaged estimators built from per-instance moment records.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qmc::MomentRecord;
use crate::rng::stream;

/// How errors over the instance ensemble are estimated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Resampling {
    Jackknife,
    Bootstrap { resamples: usize, seed: u64 },
}

impl Default for Resampling {
    fn default() -> Self {
        Resampling::Jackknife
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleEstimate {
    pub value: f64,
    pub error: f64,
    pub n_instances: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub beta: f64,
    pub gamma: f64,
}

/// Delete-one jackknife of `stat` over `samples`. Returns `(value, error)`;
/// the error is 0 for fewer than two samples.
pub fn jackknife<F: Fn(&[f64]) -> f64>(samples: &[f64], stat: F) -> (f64, f64) {
    let n = samples.len();
    let full = stat(samples);
    if n < 2 {
        return (full, 0.0);
    }
    let mut buf = Vec::with_capacity(n - 1);
    let leave_out: Vec<f64> = (0..n)
        .map(|k| {
            buf.clear();
            buf.extend(samples.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, v)| *v));
            stat(&buf)
        })
        .collect();
    let mean = leave_out.iter().sum::<f64>() / n as f64;
    let var = leave_out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() * (n - 1) as f64 / n as f64;
    (full, var.sqrt())
}

/// Bootstrap standard error of `stat` with a fixed seed.
pub fn bootstrap<F: Fn(&[f64]) -> f64>(samples: &[f64], stat: F, resamples: usize, seed: u64) -> (f64, f64) {
    let n = samples.len();
    let full = stat(samples);
    if n < 2 || resamples < 2 {
        return (full, 0.0);
    }
    let mut rng = stream(seed, &[0xb007]);
    let mut buf = vec![0.0; n];
    let values: Vec<f64> = (0..resamples)
        .map(|_| {
            for slot in buf.iter_mut() {
                *slot = samples[rng.random_range(0..n)];
            }
            stat(&buf)
        })
        .collect();
    let mean = values.iter().sum::<f64>() / resamples as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (resamples - 1) as f64;
    (full, var.sqrt())
}

fn resample<F: Fn(&[f64]) -> f64>(samples: &[f64], stat: F, how: Resampling) -> (f64, f64) {
    match how {
        Resampling::Jackknife => jackknife(samples, stat),
        Resampling::Bootstrap { resamples, seed } => bootstrap(samples, stat, resamples, seed),
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Common `(L, beta, Gamma)` of a record set; errors on an empty or mixed set.
fn common_tag(records: &[MomentRecord]) -> Result<(usize, f64, f64)> {
    let first = records.first().ok_or_else(|| Error::Validation("no records".into()))?;
    let tag = (first.l, first.beta, first.gamma);
    if records.iter().any(|r| (r.l, r.beta, r.gamma) != tag) {
        return Err(Error::Validation("records mix different (L, beta, Gamma)".into()));
    }
    Ok(tag)
}

fn estimate(tag: (usize, f64, f64), n: usize, (value, error): (f64, f64)) -> EnsembleEstimate {
    EnsembleEstimate { value, error, n_instances: n, l: tag.0, beta: tag.1, gamma: tag.2 }
}

/// Binder ratio of one instance, `(3 - <m^4>/<m^2>^2) / 2`.
pub fn instance_binder(record: &MomentRecord) -> f64 {
    0.5 * (3.0 - record.m4 / (record.m2 * record.m2))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinderEstimate {
    pub g: EnsembleEstimate,
    /// `-ln(1 - g)`; `None` when the averaged ratio is exactly 1.
    pub log_scale: Option<EnsembleEstimate>,
}

/// Instance-averaged Binder ratio for records sharing one `(L, beta, Gamma)`.
pub fn binder_ratio(records: &[MomentRecord], how: Resampling) -> Result<BinderEstimate> {
    let tag = common_tag(records)?;
    if let Some(r) = records.iter().find(|r| !(r.m2 > 0.0)) {
        return Err(Error::Validation(format!("instance {} has <m^2> = {}", r.instance, r.m2)));
    }
    let g: Vec<f64> = records.iter().map(instance_binder).collect();
    let n = g.len();
    let g_est = estimate(tag, n, resample(&g, mean, how));
    let log_scale = (g_est.value < 1.0)
        .then(|| estimate(tag, n, resample(&g, |x| -(-mean(x)).ln_1p(), how)))
        .filter(|e| e.value.is_finite() && e.error.is_finite());
    Ok(BinderEstimate { g: g_est, log_scale })
}

/// `beta N [<m^2>]`.
pub fn global_susceptibility(records: &[MomentRecord], beta: f64, n_sites: usize, how: Resampling) -> Result<EnsembleEstimate> {
    if !(beta > 0.0) || n_sites == 0 {
        return Err(Error::Validation("need beta > 0 and N > 0".into()));
    }
    let tag = common_tag(records)?;
    let m2: Vec<f64> = records.iter().map(|r| r.m2).collect();
    let scale = beta * n_sites as f64;
    let (v, e) = resample(&m2, mean, how);
    Ok(estimate(tag, m2.len(), (scale * v, scale * e)))
}

/// Instance average of an arbitrary per-record quantity.
pub fn ensemble_mean<F: Fn(&MomentRecord) -> f64>(records: &[MomentRecord], f: F, how: Resampling) -> Result<EnsembleEstimate> {
    let tag = common_tag(records)?;
    let x: Vec<f64> = records.iter().map(f).collect();
    Ok(estimate(tag, x.len(), resample(&x, mean, how)))
}

/// Nonlinear combination `-(q4 - 3 q2^2)`.
pub fn nonlinear(q2: f64, q4: f64) -> f64 {
    -(q4 - 3.0 * q2 * q2)
}

/// Per-site `(chi_loc, chi_nlloc) = (<m_i^2>, -(<m_i^4> - 3<m_i^2>^2))`.
pub fn local_susceptibilities(record: &MomentRecord) -> Vec<(f64, f64)> {
    record.mi2.iter().zip(&record.mi4).map(|(&q2, &q4)| (q2, nonlinear(q2, q4))).collect()
}

/// Per-instance `(chi, chi_nl) = (<m^2>, -(<m^4> - 3<m^2>^2))`.
pub fn global_nl_susceptibility(record: &MomentRecord) -> (f64, f64) {
    (record.m2, nonlinear(record.m2, record.m4))
}

/// Key grouping records by `(L, beta, Gamma)`; floats are compared bitwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PointKey {
    pub l: usize,
    beta_bits: u64,
    gamma_bits: u64,
}

impl PointKey {
    pub fn of(record: &MomentRecord) -> Self {
        PointKey { l: record.l, beta_bits: record.beta.to_bits(), gamma_bits: record.gamma.to_bits() }
    }
    pub fn beta(&self) -> f64 {
        f64::from_bits(self.beta_bits)
    }
    pub fn gamma(&self) -> f64 {
        f64::from_bits(self.gamma_bits)
    }
}

/// Records grouped by `(L, beta, Gamma)`, each group in input order.
pub fn group_records(records: &[MomentRecord]) -> BTreeMap<PointKey, Vec<MomentRecord>> {
    let mut groups: BTreeMap<PointKey, Vec<MomentRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(PointKey::of(r)).or_default().push(r.clone());
    }
    groups
}

pub const CSV_HEADER: &str = "L,beta,gamma,observable,value,error,n";

/// Writes estimates as CSV rows `L,beta,gamma,observable,value,error,n`.
pub fn write_estimates_csv<W: Write>(mut out: W, rows: &[(&str, &EnsembleEstimate)]) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for (name, e) in rows {
        writeln!(out, "{},{},{},{},{},{},{}", e.l, e.beta, e.gamma, name, e.value, e.error, e.n_instances)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    // Box-Muller
    fn normal<R: Rng>(rng: &mut R) -> f64 {
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        let v: f64 = rng.random();
        (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
    }

    fn record(m2: f64, m4: f64) -> MomentRecord {
        MomentRecord {
            instance: "x".into(),
            l: 2,
            beta: 20.0,
            gamma: 1.7,
            trotter: 64,
            n_meas: 100,
            m_abs: m2.sqrt(),
            m2,
            m4,
            m_abs_err: 0.0,
            m2_err: 0.0,
            m4_err: 0.0,
            mi2: vec![m2; 2],
            mi4: vec![m4; 2],
            mi2_err: vec![0.0; 2],
        }
    }

    #[test]
    fn binder_limits() {
        let ordered = binder_ratio(&vec![record(0.25, 0.0625); 3], Resampling::Jackknife).unwrap();
        assert!((ordered.g.value - 1.0).abs() < 1e-15);
        assert!(ordered.log_scale.is_none());
        let gauss = binder_ratio(&vec![record(0.1, 0.03); 3], Resampling::Jackknife).unwrap();
        assert!(gauss.g.value.abs() < 1e-12);
        assert!(gauss.log_scale.unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn binder_rejects_zero_second_moment_and_mixed_tags() {
        assert!(binder_ratio(&[record(0.0, 0.0)], Resampling::Jackknife).is_err());
        let mut other = record(0.2, 0.05);
        other.gamma = 1.8;
        assert!(binder_ratio(&[record(0.2, 0.05), other], Resampling::Jackknife).is_err());
    }

    #[test]
    fn global_susceptibility_of_saturated_records_is_beta_n() {
        let chi = global_susceptibility(&vec![record(1.0, 1.0); 4], 20.0, 32, Resampling::Jackknife).unwrap();
        assert_eq!(chi.value, 640.0);
        assert_eq!(chi.error, 0.0);
    }

    #[test]
    fn frozen_site_and_two_point_distributions() {
        let frozen = record(1.0, 1.0);
        assert_eq!(local_susceptibilities(&frozen)[0], (1.0, 2.0));
        for a in [0.5f64, 1.0] {
            // m_i = +-a: <m^2> = a^2, <m^4> = a^4.
            let r = record(a * a, a.powi(4));
            assert!((local_susceptibilities(&r)[1].1 - 2.0 * a.powi(4)).abs() < 1e-15);
            assert!((global_nl_susceptibility(&r).1 - 2.0 * a.powi(4)).abs() < 1e-15);
        }
        // Gaussian fourth moment 3 sigma^4 gives zero.
        let g = record(0.2, 3.0 * 0.04);
        assert!(global_nl_susceptibility(&g).1.abs() < 1e-15);
    }

    #[test]
    fn jackknife_error_scales_as_inverse_root_n() {
        let mut rng = stream(42, &[]);
        let mut pts = Vec::new();
        for n in [25usize, 100, 400] {
            // Average over repetitions to suppress the scatter of the error estimate itself.
            let reps = 400;
            let mut acc = 0.0;
            for _ in 0..reps {
                let x: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
                acc += jackknife(&x, mean).1;
            }
            pts.push(((n as f64).ln(), (acc / reps as f64).ln()));
        }
        let slope = (pts[2].1 - pts[0].1) / (pts[2].0 - pts[0].0);
        assert!((slope + 0.5).abs() < 0.05, "{slope}");
    }

    #[test]
    fn jackknife_of_mean_is_standard_error() {
        let x = [1.0, 2.0, 4.0, 7.0];
        let (v, e) = jackknife(&x, mean);
        let m = 3.5;
        let var = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 3.0;
        assert_eq!(v, m);
        assert!((e - (var / 4.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn bootstrap_agrees_with_jackknife_roughly() {
        let mut rng = stream(7, &[]);
        let x: Vec<f64> = (0..200).map(|_| normal(&mut rng)).collect();
        let (_, ej) = jackknife(&x, mean);
        let (_, eb) = bootstrap(&x, mean, 1000, 3);
        assert!((eb / ej - 1.0).abs() < 0.15);
    }

    #[test]
    fn estimates_are_permutation_invariant() {
        let recs: Vec<MomentRecord> =
            [(0.3, 0.12), (0.2, 0.07), (0.5, 0.3), (0.1, 0.025)].iter().map(|&(a, b)| record(a, b)).collect();
        let mut rev = recs.clone();
        rev.reverse();
        let a = binder_ratio(&recs, Resampling::Jackknife).unwrap();
        let b = binder_ratio(&rev, Resampling::Jackknife).unwrap();
        assert!((a.g.value - b.g.value).abs() < 1e-15 && (a.g.error - b.g.error).abs() < 1e-15);
    }

    #[test]
    fn csv_rows() {
        let e = ensemble_mean(&[record(0.3, 0.1), record(0.5, 0.3)], |r| r.m2, Resampling::Jackknife).unwrap();
        let mut buf = Vec::new();
        write_estimates_csv(&mut buf, &[("m2", &e)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
        assert!(text.lines().nth(1).unwrap().starts_with("2,20,1.7,m2,0.4,"));
    }
}
