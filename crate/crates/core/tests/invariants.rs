use griffiths_core::analysis::{
    linear_extrapolate, optimize_collapse, synthetic_scaling_curves, ScalingForm, SearchBox,
};
use griffiths_core::annealer::{
    binary_search_flux, gauge_transform, map_s_to_beta_gamma, sample_apq, Backend, DeviceModel, ProtocolParams,
    Schedule,
};
use griffiths_core::lattice::{
    build_diluted_chimera, full_edge_count, sample_disorder, DilutionPattern, DisorderDistribution, DisorderInstance,
};
use griffiths_core::oracle::{exact_thermal_moments, free_spin_correlator, path_distribution, trotter_moments};
use griffiths_core::qmc::{
    hamiltonian_couplings, init_state, run_chain, ChainParams, Hamiltonian, InitKind, Sweeper,
};
use griffiths_core::rng::{derive_seed, stream};
use proptest::prelude::*;

fn cell(seed: u64) -> DisorderInstance {
    let g = build_diluted_chimera(1, DilutionPattern::None).unwrap();
    sample_disorder(&g, DisorderDistribution::QmcSixLevel, seed)
}

/// Asymptotic two-sample Kolmogorov-Smirnov p-value.
fn ks_p_value(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let p: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    p.clamp(0.0, 1.0)
}

#[test]
fn disorder_draws_follow_the_declared_law() {
    let g = build_diluted_chimera(16, DilutionPattern::None).unwrap();
    for dist in [DisorderDistribution::QmcSixLevel, DisorderDistribution::DwaveSixLevel] {
        let support = dist.support();
        let mut counts = [0usize; 6];
        let mut seed = 0;
        while counts.iter().sum::<usize>() < 100_000 {
            for &j in sample_disorder(&g, dist, seed).couplings() {
                counts[support.iter().position(|&v| v == j).unwrap()] += 1;
            }
            seed += 1;
        }
        let n = counts.iter().sum::<usize>() as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - n / 6.0).powi(2) / (n / 6.0)).sum();
        // 1% critical value of chi-square with 5 degrees of freedom
        assert!(chi2 < 15.086, "{dist}: chi2 = {chi2}, counts {counts:?}");
    }
}

#[test]
fn three_spin_stationarity_with_and_without_clusters() {
    let g = build_diluted_chimera(1, DilutionPattern::Explicit(vec![(0, 4), (1, 4)])).unwrap();
    let inst = DisorderInstance::from_parts(g, vec![-0.8, -0.4], 1, DisorderDistribution::QmcSixLevel).unwrap();
    let mut fields = vec![0.0; 8];
    fields[1] = 0.25;
    let ham = Hamiltonian::new(inst, 0.9).unwrap().with_fields(fields).unwrap();
    let (beta, m) = (1.5, 3);
    let sites = [0usize, 4, 1];
    let exact = path_distribution(&ham, beta, m, &sites).unwrap();
    let couplings = hamiltonian_couplings(&ham, beta, m).unwrap();
    let sweeper = Sweeper::new(&ham.instance, &couplings);
    for cluster in [false, true] {
        let mut state = init_state(8, m, beta, 5, InitKind::Random);
        let mut rng = stream(11, &[cluster as u64]);
        let sweeps = 10_000_000;
        let mut counts = vec![0u64; exact.len()];
        for k in 0..sweeps + 1000 {
            sweeper.sweep(&mut state, &mut rng);
            if cluster {
                sweeper.cluster_sweep(&mut state, &mut rng);
            }
            if k < 1000 {
                continue;
            }
            let mut idx = 0;
            for t in 0..m {
                for (a, &i) in sites.iter().enumerate() {
                    if state.get(i, t) == -1 {
                        idx |= 1 << (t * sites.len() + a);
                    }
                }
            }
            counts[idx] += 1;
        }
        let tv = 0.5
            * counts.iter().zip(&exact).map(|(&c, &p)| (c as f64 / sweeps as f64 - p).abs()).sum::<f64>();
        assert!(tv < 0.01, "cluster = {cluster}: TV = {tv}");
    }
}

#[test]
fn two_slice_pair_matches_every_weight() {
    let g = build_diluted_chimera(1, DilutionPattern::Explicit(vec![(2, 6)])).unwrap();
    let inst = DisorderInstance::from_parts(g, vec![-0.4], 2, DisorderDistribution::QmcSixLevel).unwrap();
    let mut fields = vec![0.0; 8];
    fields[6] = -0.15;
    let ham = Hamiltonian::new(inst, 1.1).unwrap().with_fields(fields).unwrap();
    let (beta, m) = (1.2, 2);
    let sites = [2usize, 6];
    let exact = path_distribution(&ham, beta, m, &sites).unwrap();
    assert_eq!(exact.len(), 16);
    let couplings = hamiltonian_couplings(&ham, beta, m).unwrap();
    let sweeper = Sweeper::new(&ham.instance, &couplings);
    let mut state = init_state(8, m, beta, 3, InitKind::Random);
    let mut rng = stream(12, &[]);
    let (batches, per_batch) = (100, 100_000);
    let mut freq = vec![vec![0.0; 16]; batches];
    for _ in 0..1000 {
        sweeper.sweep(&mut state, &mut rng);
    }
    for batch in freq.iter_mut() {
        for _ in 0..per_batch {
            sweeper.sweep(&mut state, &mut rng);
            let mut idx = 0;
            for t in 0..m {
                for (a, &i) in sites.iter().enumerate() {
                    if state.get(i, t) == -1 {
                        idx |= 1 << (t * sites.len() + a);
                    }
                }
            }
            batch[idx] += 1.0 / per_batch as f64;
        }
    }
    for c in 0..16 {
        let col: Vec<f64> = freq.iter().map(|b| b[c]).collect();
        let mean = col.iter().sum::<f64>() / batches as f64;
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
        let err = (var / batches as f64).sqrt();
        assert!((mean - exact[c]).abs() < 3.0 * err + 1e-4, "config {c}: {mean} +- {err} vs {}", exact[c]);
    }
}

#[test]
fn trotter_error_shrinks_along_m() {
    let ham = Hamiltonian::new(cell(3), 1.2).unwrap();
    let beta = 4.0;
    let exact = exact_thermal_moments(&ham, beta).unwrap().chi_m2;
    let ms = [8, 16, 32, 64];
    let oracle: Vec<f64> = ms.iter().map(|&m| (trotter_moments(&ham, beta, m).unwrap().m2 - exact).abs()).collect();
    assert!(oracle.windows(2).all(|w| w[1] < w[0]), "{oracle:?}");
    let qmc: Vec<(f64, f64)> = ms
        .iter()
        .map(|&m| {
            let r = run_chain(&ham, beta, &ChainParams::with_defaults(m, 1 << 16), 17 + m as u64, "c").unwrap();
            ((r.m2 - exact).abs(), r.m2_err)
        })
        .collect();
    for w in qmc.windows(2) {
        assert!(w[1].0 <= w[0].0 + 3.0 * (w[0].1 + w[1].1), "{qmc:?}");
    }
}

#[test]
fn free_spins_match_the_trotter_correlator() {
    let g = build_diluted_chimera(1, DilutionPattern::None).unwrap();
    let inst = sample_disorder(&g, DisorderDistribution::QmcSixLevel, 0).with_couplings(vec![0.0; 16]).unwrap();
    let (beta, gamma, m) = (3.0, 0.7, 16);
    let r = run_chain(&Hamiltonian::new(inst, gamma).unwrap(), beta, &ChainParams::with_defaults(m, 1 << 16), 9, "free")
        .unwrap();
    let want = free_spin_correlator(beta, gamma, m);
    for (x, e) in r.mi2.iter().zip(&r.mi2_err) {
        assert!((x - want).abs() < 4.0 * e + 1e-3, "{x} +- {e} vs {want}");
    }
}

#[test]
fn gauge_covariance_of_the_device() {
    let schedule = Schedule::bundled();
    let inst = sample_disorder(&build_diluted_chimera(1, DilutionPattern::None).unwrap(), DisorderDistribution::DwaveSixLevel, 8);
    let h: Vec<f64> = (0..8).map(|i| 0.05 * (i as f64 - 3.5) / 3.5).collect();
    let protocol = ProtocolParams::new(0.4, 4000).unwrap();
    let eps: Vec<i8> = (0..8).map(|i| if (i * 5 + 1) % 3 == 0 { -1 } else { 1 }).collect();
    let mut direct = DeviceModel::new(inst, 21).with_quench(0.0).with_backend(Backend::Exact);
    let mut gauged = gauge_transform(&direct, &eps).unwrap();
    gauged.seed = 22;
    let a = sample_apq(&mut direct, &schedule, &protocol, &h).unwrap().magnetizations();
    let b = sample_apq(&mut gauged, &schedule, &protocol, &h).unwrap().magnetizations();
    let p = ks_p_value(a, b);
    assert!(p > 0.01, "KS p = {p}");
}

#[test]
fn collapse_fit_is_deterministic() {
    let pts = synthetic_scaling_curves(ScalingForm::Plain, 1.75, 1.4, 0.0, 0.01, 3);
    let bounds = SearchBox { lower: vec![1.5, 0.5], upper: vec![2.0, 3.0], start: vec![1.7, 1.0] };
    let a = optimize_collapse(&pts, ScalingForm::Plain, &bounds).unwrap();
    let b = optimize_collapse(&pts, ScalingForm::Plain, &bounds).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn edge_count_formula(l in 1usize..=16) {
        prop_assert_eq!(build_diluted_chimera(l, DilutionPattern::None).unwrap().edges().len(), full_edge_count(l));
    }

    #[test]
    fn instance_file_round_trip(l in 1usize..=4, seed in any::<u64>(), dwave in any::<bool>()) {
        let dist = if dwave { DisorderDistribution::DwaveSixLevel } else { DisorderDistribution::QmcSixLevel };
        let inst = sample_disorder(&build_diluted_chimera(l, DilutionPattern::Default).unwrap(), dist, seed);
        let text = serde_json::to_string(&inst.to_file()).unwrap();
        let back: griffiths_core::lattice::InstanceFile = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back.into_instance().unwrap(), inst);
    }

    #[test]
    fn mapping_scales_with_temperature(s in 0.01f64..0.99, t in 0.001f64..0.1, k in 0i32..4) {
        let sch = Schedule::bundled();
        let (beta, gamma) = map_s_to_beta_gamma(&sch, s, t).unwrap();
        let f = f64::powi(2.0, k);
        let (beta_hot, gamma_hot) = map_s_to_beta_gamma(&sch, s, f * t).unwrap();
        prop_assert_eq!(gamma, gamma_hot);
        prop_assert_eq!(beta_hot * f, beta);
        let (a, b) = sch.at(s).unwrap();
        prop_assert!((gamma - 2.0 * a / b).abs() <= 1e-15 * gamma.abs().max(1.0));
    }

    #[test]
    fn calibration_brackets_only_shrink(
        biases in proptest::collection::vec(-0.3f64..0.3, 1..12),
        slope in 1.0f64..20.0,
        rounds in 0usize..24,
    ) {
        let r = binary_search_flux(
            |f| Ok(f.iter().zip(&biases).map(|(x, b)| (slope * (x - b)).tanh()).collect()),
            biases.len(), 0.1, -0.1, rounds, 16,
        ).unwrap();
        prop_assert!(r.widths.windows(2).all(|w| w[1] <= w[0]));
        let first = r.widths[0];
        for (u, l) in r.upper.iter().zip(&r.lower) {
            prop_assert!(u - l >= 0.0);
            let ulps = 4.0 * f64::EPSILON * u.abs().max(l.abs());
            prop_assert!((u - l) <= first / f64::powi(2.0, rounds as i32) + ulps);
        }
    }

    #[test]
    fn extrapolation_passes_through_the_weighted_mean(
        ys in proptest::collection::vec((-5.0f64..5.0, 0.1f64..2.0, -1e-3f64..1e-3), 2..10),
        x0 in 0.05f64..1.0,
    ) {
        let pts: Vec<(f64, f64, f64)> = ys.iter().enumerate()
            .map(|(k, &(y, e, j))| (x0 + j + 1e-4 * k as f64, y, e)).collect();
        let fit = linear_extrapolate(&pts).unwrap();
        let w: f64 = pts.iter().map(|p| 1.0 / (p.2 * p.2)).sum();
        let xw = pts.iter().map(|p| p.0 / (p.2 * p.2)).sum::<f64>() / w;
        let yw = pts.iter().map(|p| p.1 / (p.2 * p.2)).sum::<f64>() / w;
        prop_assert!((fit.at(xw) - yw).abs() < 1e-6 * (1.0 + yw.abs()), "{} vs {}", fit.at(xw), yw);
    }

    #[test]
    fn exact_oracle_is_normalized_and_symmetric(seed in 0u64..1000, beta in 0.2f64..8.0, gamma in 0.05f64..3.0) {
        let ex = exact_thermal_moments(&Hamiltonian::new(cell(seed), gamma).unwrap(), beta).unwrap();
        prop_assert!((ex.total_probability - 1.0).abs() < 1e-12);
        prop_assert!(ex.m1.abs() < 1e-12 && ex.m3.abs() < 1e-12);
        prop_assert!(ex.chi_loc.iter().all(|c| (0.0..=1.0 + 1e-12).contains(c)));
        prop_assert!(ex.m4 <= ex.m2 + 1e-12 && ex.m2 * ex.m2 <= ex.m4 + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn emitted_records_satisfy_moment_bounds(seed in 0u64..1000, beta in 0.5f64..6.0, gamma in 0.3f64..3.0) {
        let ham = Hamiltonian::new(cell(seed), gamma).unwrap();
        let r = run_chain(&ham, beta, &ChainParams::with_defaults(8, 4000), derive_seed(seed, &[1]), "p").unwrap();
        let sigma = r.m4_err + 2.0 * r.m2 * r.m2_err;
        prop_assert!((0.0..=1.0).contains(&r.m2) && (0.0..=1.0).contains(&r.m_abs));
        prop_assert!(r.m4 >= r.m2 * r.m2 - 3.0 * sigma);
        prop_assert!(r.m4 <= r.m2 + 3.0 * sigma);
        for (&q2, &q4) in r.mi2.iter().zip(&r.mi4) {
            prop_assert!((0.0..=1.0).contains(&q2) && q4 <= q2 + 1e-12);
        }
    }
}
