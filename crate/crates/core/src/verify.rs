//! Acceptance checks, shared by the integration tests and the `verify`
//! command. Every check uses fixed seeds and reports one pass/fail line.

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    build_histogram, curve_crossing, dz_from_linear_slope, dz_from_nonlinear_slope, fit_tail_slope,
    linear_extrapolate, optimize_collapse, peak_with_jackknife, pareto_samples, scan_dynamical_z,
    synthetic_scaling_curves, ExponentEstimate, FitPolicy, RangePolicy, ScalingForm, SearchBox,
};
use crate::annealer::{
    calibrate_flux_bias, field_sweep_susceptibility, map_s_to_beta_gamma, sample_apq, symmetric_field_grid,
    Backend, CalibrationParams, DeviceModel, ProtocolParams, Schedule, DEFAULT_T_PHYS,
};
use crate::error::{Error, Result};
use crate::lattice::{build_diluted_chimera, sample_disorder, DilutionPattern, DisorderDistribution, DisorderInstance};
use crate::observables::{binder_ratio, Resampling};
use crate::oracle::{exact_thermal_moments, path_distribution, trotter_moments};
use crate::qmc::{
    hamiltonian_couplings, init_state, run_chain, run_grid, ChainParams, GridSpec, Hamiltonian, InitKind,
    MomentRecord, Sweeper,
};
use crate::rng::{derive_seed, stream};

/// Master seed of the acceptance battery.
pub const ACCEPTANCE_SEED: u64 = 20_190_501;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub summary: String,
    pub details: Vec<String>,
    pub seconds: f64,
}

impl CriterionReport {
    pub fn line(&self) -> String {
        format!(
            "criterion {} ({}): {}  {}  [{:.1} s]",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.summary,
            self.seconds
        )
    }
}

fn report(id: u8, name: &str, start: Instant, passed: bool, summary: String, details: Vec<String>) -> CriterionReport {
    CriterionReport { id, name: name.into(), passed, summary, details, seconds: start.elapsed().as_secs_f64() }
}

fn one_cell(distribution: DisorderDistribution, seed: u64) -> Result<DisorderInstance> {
    let g = build_diluted_chimera(1, DilutionPattern::None)?;
    Ok(sample_disorder(&g, distribution, seed))
}

/// QMC on a single cell against exact diagonalization: `<m^2>` and every
/// `<m_i^2>` within 3 sigma plus the per-point Trotter bias bound at `M = 64`,
/// with that bound shrinking at least 3x from `M = 16` to `M = 64`.
pub fn oracle_equivalence(seed: u64, sweeps: usize) -> Result<CriterionReport> {
    let start = Instant::now();
    let mut cases = Vec::new();
    for k in 0..5u64 {
        let inst = one_cell(DisorderDistribution::QmcSixLevel, derive_seed(seed, &[1, k]))?;
        for beta in [2.0, 10.0] {
            for gamma in [0.5, 1.0, 2.0] {
                cases.push((k, inst.clone(), beta, gamma));
            }
        }
    }
    let results: Vec<Result<(Vec<String>, usize, usize, bool)>> = cases
        .par_iter()
        .map(|(k, inst, beta, gamma)| {
            let ham = Hamiltonian::new(inst.clone(), *gamma)?;
            let exact = exact_thermal_moments(&ham, *beta)?;
            let t64 = trotter_moments(&ham, *beta, 64)?;
            let t16 = trotter_moments(&ham, *beta, 16)?;
            let mut params = ChainParams::with_defaults(64, sweeps);
            params.measure_interval = 4;
            params.cluster = true;
            let chain_seed = derive_seed(seed, &[2, *k, beta.to_bits(), gamma.to_bits()]);
            let rec = run_chain(&ham, *beta, &params, chain_seed, &format!("cell{k}"))?;
            // One bias bound per point: the largest Trotter error over its observables.
            let mut pairs = vec![(exact.chi_m2, t64.m2, t16.m2)];
            pairs.extend((0..exact.n_sites).map(|i| (exact.chi_loc[i], t64.mi2[i], t16.mi2[i])));
            let bound64 = pairs.iter().fold(0.0f64, |b, p| b.max((p.1 - p.0).abs()));
            let bound16 = pairs.iter().fold(0.0f64, |b, p| b.max((p.2 - p.0).abs()));
            let tag = format!("cell{k} beta={beta} Gamma={gamma}");
            let mut lines = Vec::new();
            let (mut checked, mut failed) = (0, 0);
            let shrink_ok = bound16 <= 1e-12 || bound16 >= 3.0 * bound64;
            if !shrink_ok {
                lines.push(format!("{tag}: Trotter bias bound {bound16:.3e} (M=16) vs {bound64:.3e} (M=64)"));
            }
            let mut check = |what: String, qmc: f64, err: f64, exact: f64| {
                checked += 1;
                if (qmc - exact).abs() > 3.0 * err + bound64 {
                    failed += 1;
                    lines.push(format!("{tag} {what}: qmc {qmc:.6} +- {err:.2e} vs exact {exact:.6} (bias bound {bound64:.2e})"));
                }
            };
            check("<m^2>".into(), rec.m2, rec.m2_err, exact.chi_m2);
            for i in 0..exact.n_sites {
                check(format!("<m_{i}^2>"), rec.mi2[i], rec.mi2_err[i], exact.chi_loc[i]);
            }
            Ok((lines, checked, failed, shrink_ok))
        })
        .collect();
    let mut details = Vec::new();
    let (mut checked, mut failed, mut shrink_ok) = (0, 0, true);
    for r in results {
        let (lines, c, f, s) = r?;
        details.extend(lines);
        checked += c;
        failed += f;
        shrink_ok &= s;
    }
    let passed = failed == 0 && shrink_ok;
    let summary = format!(
        "{} of {checked} moments outside 3 sigma + bias; Trotter bias shrink >= 3x: {}",
        failed,
        if shrink_ok { "yes" } else { "no" }
    );
    Ok(report(1, "oracle equivalence", start, passed, summary, details))
}

/// Two coupled spins with `M = 4`: empirical space-time configuration
/// frequencies against the exact Boltzmann weights of the effective action.
pub fn stationarity(seed: u64, sweeps: usize) -> Result<CriterionReport> {
    let start = Instant::now();
    let graph = build_diluted_chimera(1, DilutionPattern::Explicit(vec![(0, 4)]))?;
    let inst = DisorderInstance::from_parts(graph, vec![-0.6], seed, DisorderDistribution::QmcSixLevel)?;
    let mut fields = vec![0.0; 8];
    fields[0] = 0.3;
    fields[4] = -0.2;
    let (beta, gamma, m) = (1.0, 0.8, 4);
    let ham = Hamiltonian::new(inst, gamma)?.with_fields(fields)?;
    let sites = [0usize, 4];
    let exact = path_distribution(&ham, beta, m, &sites)?;
    let couplings = hamiltonian_couplings(&ham, beta, m)?;
    let sweeper = Sweeper::new(&ham.instance, &couplings);
    let mut state = init_state(8, m, beta, derive_seed(seed, &[3]), InitKind::Random);
    let mut rng = stream(seed, &[4]);
    for _ in 0..1000 {
        sweeper.sweep(&mut state, &mut rng);
    }
    let mut counts = vec![0u64; exact.len()];
    for _ in 0..sweeps {
        sweeper.sweep(&mut state, &mut rng);
        let mut idx = 0usize;
        for t in 0..m {
            for (a, &i) in sites.iter().enumerate() {
                if state.get(i, t) == -1 {
                    idx |= 1 << (t * sites.len() + a);
                }
            }
        }
        counts[idx] += 1;
    }
    let total = sweeps as f64;
    let tv = 0.5 * counts.iter().zip(&exact).map(|(&c, &p)| (c as f64 / total - p).abs()).sum::<f64>();
    let passed = tv < 0.01;
    Ok(report(
        2,
        "stationarity",
        start,
        passed,
        format!("total variation {tv:.5} over {} configurations after {sweeps} sweeps (limit 0.01)", exact.len()),
        Vec::new(),
    ))
}

/// Planted Pareto tails through histogram, tail fit and slope conversion.
pub fn exponent_recovery(seed: u64) -> Result<CriterionReport> {
    let start = Instant::now();
    let mut details = Vec::new();
    let mut passed = true;
    for (k, dz) in [2.0, 5.0, 12.0].into_iter().enumerate() {
        for nonlinear in [false, true] {
            let alpha = if nonlinear { dz / 3.0 } else { dz };
            let samples = pareto_samples(alpha, 1.0, 100_000, derive_seed(seed, &[5, k as u64, nonlinear as u64]));
            let hist = build_histogram(&samples, 40, RangePolicy::Auto)?;
            let fit = fit_tail_slope(&hist, FitPolicy::qmc())?;
            let est = if nonlinear { dz_from_nonlinear_slope(&fit, 0.0) } else { dz_from_linear_slope(&fit, 0.0) };
            let ok = (est.d_over_zprime - dz).abs() <= 2.0 * est.error;
            passed &= ok;
            details.push(format!(
                "{} d/z'={dz}: {:.3} +- {:.3} ({})",
                if nonlinear { "nonlinear" } else { "linear" },
                est.d_over_zprime,
                est.error,
                if ok { "ok" } else { "outside 2 sigma" }
            ));
        }
    }
    let summary = format!("{}/6 planted exponents within 2 stderr", details.iter().filter(|d| d.ends_with("(ok)")).count());
    Ok(report(3, "exponent pipeline", start, passed, summary, details))
}

/// Settings of the desk-scale Griffiths-trend run.
#[derive(Clone, Debug)]
pub struct TrendOptions {
    pub sizes: Vec<usize>,
    pub instances: usize,
    pub trotter: usize,
    pub sweeps: usize,
    pub beta: f64,
    pub gammas: Vec<f64>,
    pub seed: u64,
    pub workers: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrendOptions {
    fn default() -> Self {
        TrendOptions {
            sizes: vec![4, 6],
            instances: 50,
            trotter: 64,
            sweeps: 1 << 17,
            beta: 20.0,
            gammas: vec![1.55, 1.65, 1.72, 1.79, 1.84, 1.895, 1.95],
            seed: ACCEPTANCE_SEED,
            workers: 0,
            checkpoint_dir: None,
        }
    }
}

/// Runs (or resumes) the trend grid and returns all records.
pub fn trend_records(opts: &TrendOptions) -> Result<Vec<MomentRecord>> {
    let mut records = Vec::new();
    for &l in &opts.sizes {
        let graph = build_diluted_chimera(l, DilutionPattern::Default)?;
        let instances = (0..opts.instances)
            .map(|k| {
                let s = derive_seed(opts.seed, &[6, l as u64, k as u64]);
                (format!("L{l}-{k:03}"), sample_disorder(&graph, DisorderDistribution::QmcSixLevel, s))
            })
            .collect();
        let spec = GridSpec {
            instances,
            betas: vec![opts.beta],
            gammas: opts.gammas.clone(),
            params: ChainParams { cluster: true, ..ChainParams::with_defaults(opts.trotter, opts.sweeps) },
            master_seed: opts.seed,
            workers: opts.workers,
            checkpoint_dir: opts.checkpoint_dir.clone(),
            stop: None,
        };
        let rep = run_grid(&spec)?;
        if !rep.failures.is_empty() {
            return Err(Error::Numerical(format!("{} grid cells failed: {:?}", rep.failures.len(), rep.failures)));
        }
        records.extend(rep.records);
    }
    Ok(records)
}

/// `d/z'` from the local-susceptibility histogram of one `(L, Gamma)` group.
pub fn local_exponent(records: &[MomentRecord], gamma: f64) -> Result<ExponentEstimate> {
    let samples: Vec<f64> = records.iter().flat_map(|r| r.mi2.iter().copied()).collect();
    let hist = build_histogram(&samples, 40, RangePolicy::Auto)?;
    Ok(dz_from_linear_slope(&fit_tail_slope(&hist, FitPolicy::qmc())?, gamma))
}

/// Binder crossing and the falling `d/z'` trend on the desk-scale grid.
pub fn griffiths_trend(opts: &TrendOptions) -> Result<CriterionReport> {
    let start = Instant::now();
    let records = trend_records(opts)?;
    let mut details = Vec::new();
    let select = |l: usize, gamma: f64| -> Vec<MomentRecord> {
        records.iter().filter(|r| r.l == l && r.gamma == gamma).cloned().collect()
    };
    let mut curves = Vec::new();
    for &l in &opts.sizes {
        let mut curve = Vec::new();
        for &gamma in &opts.gammas {
            let b = binder_ratio(&select(l, gamma), Resampling::Jackknife)?;
            let v = b.log_scale.map(|e| e.value).unwrap_or(f64::INFINITY);
            details.push(format!("L={l} Gamma={gamma}: g={:.4}+-{:.4}, -ln(1-g)={v:.4}", b.g.value, b.g.error));
            curve.push(v);
        }
        curves.push(curve);
    }
    let (small, large) = (&curves[0], &curves[curves.len() - 1]);
    let crossing = curve_crossing(&opts.gammas, small, large);
    let crossing_ok = crossing.is_some_and(|c| (1.55..=1.95).contains(&c));
    details.push(format!("Binder crossing: {crossing:?}"));

    let l_max = *opts.sizes.iter().max().expect("sizes");
    // Below the crossing the local moments have no power-law tail; a failed fit
    // only matters where a check needs the point.
    let mut trend: Vec<(f64, Option<ExponentEstimate>)> = Vec::new();
    for &gamma in &opts.gammas {
        match local_exponent(&select(l_max, gamma), gamma) {
            Ok(est) => {
                details.push(format!("L={l_max} Gamma={gamma}: d/z'={:.3}+-{:.3}", est.d_over_zprime, est.error));
                trend.push((gamma, Some(est)));
            }
            Err(e) => {
                details.push(format!("L={l_max} Gamma={gamma}: no tail fit ({e})"));
                trend.push((gamma, None));
            }
        }
    }
    let floor = crossing.unwrap_or(f64::INFINITY);
    let window: Vec<&Option<ExponentEstimate>> =
        trend.iter().filter(|(g, _)| *g >= floor && *g <= 1.9).map(|(_, e)| e).collect();
    let monotone = window.len() >= 2
        && window.iter().all(|e| e.is_some())
        && window.windows(2).all(|w| {
            let (a, b) = (w[0].as_ref().expect("checked"), w[1].as_ref().expect("checked"));
            a.d_over_zprime - a.error <= b.d_over_zprime + b.error
        });
    let nearest = |target: f64| {
        trend.iter().min_by(|a, b| (a.0 - target).abs().total_cmp(&(b.0 - target).abs())).expect("gammas")
    };
    let (near, far) = (nearest(1.79), nearest(1.895));
    let (separation_ok, separation) = match (&near.1, &far.1) {
        (Some(n), Some(f)) => {
            let sigma = n.error.hypot(f.error);
            let gap = f.d_over_zprime - n.d_over_zprime;
            (
                gap >= 3.0 * sigma,
                format!(
                    "d/z'({})={:.2} vs d/z'({})={:.2}, gap {:.1} sigma",
                    near.0,
                    n.d_over_zprime,
                    far.0,
                    f.d_over_zprime,
                    gap / sigma
                ),
            )
        }
        _ => (false, format!("no d/z' at Gamma={} or {}", near.0, far.0)),
    };
    let passed = crossing_ok && monotone && separation_ok;
    let summary = format!(
        "(a) crossing {} (b) monotone over {} points: {} (c) {separation}",
        crossing.map(|c| format!("{c:.3}")).unwrap_or("none".into()),
        window.len(),
        if monotone { "yes" } else { "no" },
    );
    Ok(report(4, "Griffiths trend", start, passed, summary, details))
}

/// Synthetic collapse with `(x_c, nu) = (1.75, 1.4)` and a synthetic
/// `z = 1` master curve for the dynamical-exponent scan.
pub fn collapse_recovery(seed: u64) -> Result<CriterionReport> {
    let start = Instant::now();
    let pts = synthetic_scaling_curves(ScalingForm::Plain, 1.75, 1.4, 0.0, 0.003, derive_seed(seed, &[7]));
    let bounds = SearchBox { lower: vec![1.5, 0.5], upper: vec![2.0, 3.0], start: vec![1.7, 1.0] };
    let fit = optimize_collapse(&pts, ScalingForm::Plain, &bounds)?;
    let within_own = (fit.x_c - 1.75).abs() <= fit.x_c_error && (fit.nu - 1.4).abs() <= fit.nu_error;
    let within_ref = (fit.x_c - 1.75).abs() <= 0.04 && (fit.nu - 1.4).abs() <= 0.2;

    let mut rng = stream(seed, &[8]);
    let mut zpts = Vec::new();
    for l in [4usize, 6, 8, 12] {
        for beta in [4.0, 8.0, 16.0, 32.0, 64.0] {
            let u: f64 = (beta / l as f64).ln();
            let noise = 1.0 + 0.002 * (2.0 * rand::Rng::random::<f64>(&mut rng) - 1.0);
            zpts.push((beta, l, (-0.2 * u * u + 0.1 * u - 0.5).exp() * noise));
        }
    }
    let z_grid: Vec<f64> = (0..=20).map(|k| 0.5 + 0.05 * k as f64).collect();
    let scan = scan_dynamical_z(&zpts, &z_grid)?;
    let z_ok = (scan.z_star - 1.0).abs() <= 0.05 + 1e-9;
    let passed = within_own && within_ref && z_ok;
    let summary = format!(
        "Gamma_c = {:.4} +- {:.4}, nu = {:.3} +- {:.3}; z* = {:.2}",
        fit.x_c, fit.x_c_error, fit.nu, fit.nu_error, scan.z_star
    );
    let details = vec![
        format!("within quoted errors: {within_own}; within (0.04, 0.2): {within_ref}"),
        format!("z scan concave: {}", scan.concave),
    ];
    Ok(report(5, "scaling collapse", start, passed, summary, details))
}

/// Bundled schedule at the pause point 0.386 and 12 mK.
pub fn schedule_mapping() -> Result<CriterionReport> {
    let start = Instant::now();
    let (beta, gamma) = map_s_to_beta_gamma(&Schedule::bundled(), 0.386, DEFAULT_T_PHYS)?;
    let passed = (beta - 2.49).abs() <= 0.01 && (gamma - 1.37).abs() <= 0.01;
    Ok(report(6, "schedule mapping", start, passed, format!("beta = {beta:.4}, Gamma = {gamma:.4}"), Vec::new()))
}

fn site_average(device: &mut DeviceModel, schedule: &Schedule, protocol: &ProtocolParams, runs: usize) -> Result<Vec<f64>> {
    let n = device.n_sites();
    let mut acc = vec![0.0; n];
    for _ in 0..runs {
        let m = sample_apq(device, schedule, protocol, &vec![0.0; n])?.site_means();
        acc.iter_mut().zip(&m).for_each(|(a, x)| *a += x / runs as f64);
    }
    Ok(acc)
}

/// Zero-coupling device with +-0.05 biases before and after bisection
/// flux calibration (20 bisection rounds).
pub fn calibration_efficacy(seed: u64) -> Result<CriterionReport> {
    let start = Instant::now();
    let schedule = Schedule::bundled();
    let graph = build_diluted_chimera(4, DilutionPattern::None)?;
    let inst = sample_disorder(&graph, DisorderDistribution::DwaveSixLevel, derive_seed(seed, &[9]));
    let free = inst.with_couplings(vec![0.0; inst.couplings().len()])?;
    let s_star = 0.6;
    let mut device = DeviceModel::new(free, derive_seed(seed, &[10])).with_random_biases(0.05);
    let protocol = ProtocolParams::new(s_star, 100)?;
    let n = device.n_sites() as f64;
    let before = site_average(&mut device, &schedule, &protocol, 100)?;
    let frac_before = before.iter().filter(|x| x.abs() > 0.1).count() as f64 / n;
    let mut params = CalibrationParams::new(s_star, 0.1, -0.1, 20);
    params.reads_per_call = 50_000;
    let cal = calibrate_flux_bias(&mut device, &schedule, &params)?;
    let after = site_average(&mut device, &schedule, &protocol, 100)?;
    let frac_after = after.iter().filter(|x| x.abs() < 0.05).count() as f64 / n;
    let worst = after.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let passed = frac_before >= 0.25 && frac_after == 1.0;
    let summary = format!(
        "before: {:.0}% of {} qubits with |<s_i>| > 0.1; after: {:.0}% with |<s_i>| < 0.05 (worst {worst:.4})",
        100.0 * frac_before,
        n,
        100.0 * frac_after
    );
    let details = vec![format!(
        "s* = {s_star}, {} probe calls, {} diagnostics",
        cal.probe_calls,
        cal.diagnostics.len()
    )];
    Ok(report(7, "calibration efficacy", start, passed, summary, details))
}

/// Settings of the peak-position extrapolation in criterion 8.
#[derive(Clone, Debug)]
pub struct PeakScanOptions {
    pub sizes: Vec<usize>,
    pub instances: usize,
    pub s_grid: Vec<f64>,
    pub h_max: f64,
    pub n_rep: usize,
    pub backend: Backend,
}

impl Default for PeakScanOptions {
    fn default() -> Self {
        PeakScanOptions {
            sizes: vec![2, 3, 4],
            instances: 4,
            s_grid: (0..14).map(|k| 0.33 + 0.03 * k as f64).collect(),
            h_max: 0.04,
            n_rep: 100,
            backend: Backend::Qmc { trotter: 8, sweeps: 128 },
        }
    }
}

/// Peak of the instance-averaged `chi(s*)` curve per size, its jackknife
/// error over instances, and the linear extrapolation in `1/L`.
pub fn peak_extrapolation(seed: u64, opts: &PeakScanOptions) -> Result<(f64, f64, Vec<String>)> {
    let schedule = Schedule::bundled();
    let grid = symmetric_field_grid(opts.h_max, 2);
    let mut points = Vec::new();
    let mut details = Vec::new();
    for &l in &opts.sizes {
        let graph = build_diluted_chimera(l, DilutionPattern::Default)?;
        let curves: Vec<Vec<f64>> = (0..opts.instances)
            .into_par_iter()
            .map(|k| -> Result<Vec<f64>> {
                let inst = sample_disorder(&graph, DisorderDistribution::DwaveSixLevel, derive_seed(seed, &[11, l as u64, k as u64]));
                opts.s_grid
                    .iter()
                    .enumerate()
                    .map(|(j, &s)| {
                        let mut dev = DeviceModel::new(inst.clone(), derive_seed(seed, &[12, l as u64, k as u64, j as u64]))
                            .with_backend(opts.backend);
                        let p = ProtocolParams::new(s, opts.n_rep)?;
                        Ok(field_sweep_susceptibility(&mut dev, &schedule, &p, &grid, 3)?.chi)
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let (peak, err) = peak_with_jackknife(&opts.s_grid, &curves).ok_or_else(|| {
            Error::Numerical(format!("susceptibility peak of L = {l} sits on the edge of the pause-point grid"))
        })?;
        // Peaks are located on a discrete grid; never claim better than a tenth of its spacing.
        let floor = 0.1 * (opts.s_grid[1] - opts.s_grid[0]);
        details.push(format!("L={l}: peak s* = {peak:.4} +- {err:.4}"));
        points.push((1.0 / l as f64, peak, err.max(floor)));
    }
    let fit = linear_extrapolate(&points)?;
    Ok((fit.intercept, fit.intercept_error, details))
}

/// Field-sweep susceptibility against the exact fluctuation value on one
/// cell, and a procedural check of the peak-position extrapolation.
pub fn device_consistency(seed: u64, peak: &PeakScanOptions) -> Result<CriterionReport> {
    let start = Instant::now();
    let schedule = Schedule::bundled();
    let s_star = 0.386;
    let inst = one_cell(DisorderDistribution::DwaveSixLevel, derive_seed(seed, &[13]))?;
    let (beta, gamma) = map_s_to_beta_gamma(&schedule, s_star, DEFAULT_T_PHYS)?;
    let exact = exact_thermal_moments(&Hamiltonian::new(inst.scaled(2.0), gamma)?, beta)?;
    // Device fields enter the QMC Hamiltonian doubled.
    let fd = 2.0 * exact.uniform_response(beta);
    let grid = symmetric_field_grid(0.3 / fd, 5);
    let mut device = DeviceModel::new(inst, derive_seed(seed, &[14]));
    let sweep = field_sweep_susceptibility(&mut device, &schedule, &ProtocolParams::new(s_star, 40_000)?, &grid, 3)?;
    let rel = sweep.chi / fd - 1.0;
    let chi_ok = rel.abs() < 0.05;

    let (s_min, s_max) = (peak.s_grid[0], peak.s_grid[peak.s_grid.len() - 1]);
    let (s_c, s_c_err, mut details) = match peak_extrapolation(seed, peak) {
        Ok(v) => v,
        Err(e) => (f64::NAN, f64::NAN, vec![format!("peak extrapolation failed: {e}")]),
    };
    let peak_ok = s_c.is_finite() && s_c_err.is_finite() && (s_min..=s_max).contains(&s_c);
    details.insert(0, format!("field sweep chi {:.4} vs fluctuation value {fd:.4}", sweep.chi));
    let summary = format!(
        "chi deviation {:+.2}% (limit 5%); extrapolated s_c = {s_c:.3} +- {s_c_err:.3} in [{s_min:.2}, {s_max:.2}]",
        100.0 * rel
    );
    Ok(report(8, "device pipeline", start, chi_ok && peak_ok, summary, details))
}

/// Criteria 1-3 and 5-8 at their stated sizes.
pub fn quick_suite(seed: u64) -> Vec<Result<CriterionReport>> {
    vec![
        oracle_equivalence(seed, 1 << 18),
        stationarity(seed, 10_000_000),
        exponent_recovery(seed),
        collapse_recovery(seed),
        schedule_mapping(),
        calibration_efficacy(seed),
        device_consistency(seed, &PeakScanOptions::default()),
    ]
}
