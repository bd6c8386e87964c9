use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{map_s_to_beta_gamma, ProtocolParams, Schedule, DEFAULT_T_PHYS};
use crate::error::{Error, Result};
use crate::lattice::{DisorderInstance, InstanceFile};
use crate::oracle::{thermal_z_distribution, MAX_SPECTRAL_SITES};
use crate::qmc::{hamiltonian_couplings, init_state, Hamiltonian, InitKind, Sweeper};
use crate::rng::{derive_seed, stream};

const BIAS_KEY: u64 = 0xb1a5;
const DRAW_KEY: u64 = 0xd4a3;
const QUENCH_KEY: u64 = 0x9e2c;
const SLICE_KEY: u64 = 0x511c;

/// How thermal snapshots are produced.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Backend {
    /// Independent spins if all couplings vanish, exact below the spectral
    /// limit, QMC otherwise.
    Auto,
    /// Exact z-basis distribution from dense diagonalization.
    Exact,
    /// Closed-form single-spin thermal state; requires zero couplings.
    IndependentSpins,
    /// One fresh path-integral chain per repetition, started from random
    /// spins and run for `sweeps` Metropolis sweeps; a random slice is read out.
    Qmc { trotter: usize, sweeps: usize },
}

impl Backend {
    pub const DEFAULT_QMC: Backend = Backend::Qmc { trotter: 16, sweeps: 256 };
}

/// Phenomenological quench strength for linear size `l`: smaller systems
/// are distorted more.
pub fn default_quench(l: usize) -> f64 {
    (0.5 / l.max(1) as f64).min(1.0)
}

/// Simulated annealer holding one programmed instance.
///
/// `instance` holds the logical couplings. `biases` and `corrections` are
/// physical per-qubit longitudinal offsets (device units): qubit `i` feels
/// `corrections[i] - biases[i]` in addition to the programmed field. The
/// gauge `eps` programs `eps_i eps_j J_ij` and `eps_i h_i`, and readouts are
/// multiplied by `eps_i` again.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviceModel {
    pub instance: DisorderInstance,
    pub biases: Vec<f64>,
    pub corrections: Vec<f64>,
    pub gauge: Vec<i8>,
    /// Chip temperature in kelvin.
    pub t_phys: f64,
    /// Probability that a sample is relaxed by greedy descent during the quench.
    pub quench: f64,
    pub seed: u64,
    pub backend: Backend,
    pub(super) calls: u64,
}

/// Serializable snapshot of a [`DeviceModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    pub instance: InstanceFile,
    pub biases: Vec<f64>,
    pub corrections: Vec<f64>,
    pub gauge: Vec<i8>,
    pub t_phys: f64,
    pub quench: f64,
    pub seed: u64,
    pub backend: Backend,
    pub calls: u64,
}

impl DeviceModel {
    /// Unbiased, uncalibrated, identity gauge, 12 mK, no quench distortion.
    pub fn new(instance: DisorderInstance, seed: u64) -> Self {
        let n = instance.n_sites();
        DeviceModel {
            instance,
            biases: vec![0.0; n],
            corrections: vec![0.0; n],
            gauge: vec![1; n],
            t_phys: DEFAULT_T_PHYS,
            quench: 0.0,
            seed,
            backend: Backend::Auto,
            calls: 0,
        }
    }

    /// Biases drawn uniformly from `[-scale, scale]`, reproducible from the seed.
    pub fn with_random_biases(mut self, scale: f64) -> Self {
        let mut rng = stream(self.seed, &[BIAS_KEY]);
        self.biases = (0..self.n_sites()).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect();
        self
    }

    pub fn with_quench(mut self, q: f64) -> Self {
        self.quench = q;
        self
    }

    pub fn with_backend(mut self, backend: Backend) -> Self {
        self.backend = backend;
        self
    }

    pub fn n_sites(&self) -> usize {
        self.instance.n_sites()
    }

    /// Number of sampling calls made so far (each call draws fresh streams).
    pub fn calls(&self) -> u64 {
        self.calls
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_sites();
        if self.biases.len() != n || self.corrections.len() != n || self.gauge.len() != n {
            return Err(Error::Validation(format!(
                "device vectors must have {n} entries (biases {}, corrections {}, gauge {})",
                self.biases.len(),
                self.corrections.len(),
                self.gauge.len()
            )));
        }
        if self.gauge.iter().any(|&e| e != 1 && e != -1) {
            return Err(Error::Validation("gauge entries must be +-1".into()));
        }
        if self.biases.iter().chain(&self.corrections).any(|v| !v.is_finite()) {
            return Err(Error::Validation("biases and corrections must be finite".into()));
        }
        if !(self.t_phys > 0.0) || !self.t_phys.is_finite() {
            return Err(Error::Validation(format!("T_phys must be positive, got {}", self.t_phys)));
        }
        if !(0.0..=1.0).contains(&self.quench) {
            return Err(Error::Validation(format!("quench strength must lie in [0, 1], got {}", self.quench)));
        }
        if let Backend::Qmc { trotter, sweeps } = self.backend {
            if trotter < 2 || sweeps == 0 {
                return Err(Error::Validation("QMC backend needs trotter >= 2 and sweeps >= 1".into()));
            }
        }
        Ok(())
    }

    /// Couplings as programmed on the chip, `eps_i eps_j J_ij`, in edge order.
    pub fn programmed_couplings(&self) -> Vec<f64> {
        self.instance
            .bonds()
            .map(|(i, j, c)| c * f64::from(self.gauge[i] * self.gauge[j]))
            .collect()
    }

    /// Static biases seen in the logical frame, `eps_i b_i`.
    pub fn logical_biases(&self) -> Vec<f64> {
        self.biases.iter().zip(&self.gauge).map(|(b, &e)| b * f64::from(e)).collect()
    }

    /// Physical longitudinal field per qubit for logical field `h`.
    fn physical_fields(&self, h: &[f64]) -> Vec<f64> {
        (0..self.n_sites())
            .map(|i| f64::from(self.gauge[i]) * h[i] + self.corrections[i] - self.biases[i])
            .collect()
    }

    pub fn to_state(&self) -> DeviceState {
        DeviceState {
            instance: self.instance.to_file(),
            biases: self.biases.clone(),
            corrections: self.corrections.clone(),
            gauge: self.gauge.clone(),
            t_phys: self.t_phys,
            quench: self.quench,
            seed: self.seed,
            backend: self.backend,
            calls: self.calls,
        }
    }

    pub fn from_state(state: DeviceState) -> Result<Self> {
        let d = DeviceModel {
            instance: state.instance.into_instance()?,
            biases: state.biases,
            corrections: state.corrections,
            gauge: state.gauge,
            t_phys: state.t_phys,
            quench: state.quench,
            seed: state.seed,
            backend: state.backend,
            calls: state.calls,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_state())? + "\n")?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        DeviceModel::from_state(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Applies the gauge `eps` on top of the device's current gauge.
pub fn gauge_transform(device: &DeviceModel, eps: &[i8]) -> Result<DeviceModel> {
    if eps.len() != device.n_sites() || eps.iter().any(|&e| e != 1 && e != -1) {
        return Err(Error::Validation(format!("gauge must be {} entries of +-1", device.n_sites())));
    }
    let mut out = device.clone();
    out.gauge.iter_mut().zip(eps).for_each(|(g, &e)| *g *= e);
    Ok(out)
}

/// Spin configurations returned by one sampling call, repetition-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub n_sites: usize,
    pub spins: Vec<i8>,
}

impl SampleSet {
    pub fn n_rep(&self) -> usize {
        self.spins.len() / self.n_sites.max(1)
    }

    pub fn sample(&self, r: usize) -> &[i8] {
        &self.spins[r * self.n_sites..(r + 1) * self.n_sites]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[i8]> {
        self.spins.chunks_exact(self.n_sites)
    }

    /// `m_a = (1/N) sum_i s_i` per repetition.
    pub fn magnetizations(&self) -> Vec<f64> {
        let n = self.n_sites as f64;
        self.iter().map(|s| s.iter().map(|&x| f64::from(x)).sum::<f64>() / n).collect()
    }

    /// `(1/N_rep) sum_a s_i^a` per site.
    pub fn site_means(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_sites];
        for s in self.iter() {
            out.iter_mut().zip(s).for_each(|(o, &x)| *o += f64::from(x));
        }
        let r = self.n_rep() as f64;
        out.iter_mut().for_each(|o| *o /= r);
        out
    }
}

fn config_spins(config: usize, n: usize, out: &mut Vec<i8>) {
    out.extend((0..n).map(|i| if config >> i & 1 == 1 { -1 } else { 1 }));
}

/// Greedy single-flip descent on `sum J s s - sum h s`, sites visited in a
/// fresh random order on every pass until no flip lowers the energy.
fn descend<R: Rng>(spins: &mut [i8], adjacency: &[Vec<(usize, f64)>], fields: &[f64], rng: &mut R) {
    let mut order: Vec<usize> = (0..spins.len()).collect();
    loop {
        order.shuffle(rng);
        let mut changed = false;
        for &i in &order {
            let local: f64 = adjacency[i].iter().map(|&(j, c)| c * f64::from(spins[j])).sum::<f64>() - fields[i];
            // Flipping changes the energy by -2 s_i local.
            if f64::from(spins[i]) * local > 0.0 {
                spins[i] = -spins[i];
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
}

/// Runs `protocol.n_rep` anneal-pause-quench cycles with logical longitudinal
/// field `h` (device units) and returns the readouts in the logical frame.
pub fn sample_apq(
    device: &mut DeviceModel,
    schedule: &Schedule,
    protocol: &ProtocolParams,
    h: &[f64],
) -> Result<SampleSet> {
    device.validate()?;
    protocol.validate()?;
    let n = device.n_sites();
    if h.len() != n {
        return Err(Error::Validation(format!("{} field values for {n} sites", h.len())));
    }
    let (beta, gamma) = map_s_to_beta_gamma(schedule, protocol.s_star, device.t_phys)?;
    let call = device.calls;
    device.calls += 1;

    let programmed = device.programmed_couplings();
    let fields = device.physical_fields(h);
    let free = programmed.iter().all(|&c| c == 0.0);
    let ham = Hamiltonian::new(device.instance.with_couplings(programmed.iter().map(|c| 2.0 * c).collect())?, gamma)?
        .with_fields(fields.iter().map(|f| 2.0 * f).collect())?;

    let backend = match device.backend {
        Backend::Auto if free => Backend::IndependentSpins,
        Backend::Auto if n <= MAX_SPECTRAL_SITES => Backend::Exact,
        Backend::Auto => Backend::DEFAULT_QMC,
        other => other,
    };
    let n_rep = protocol.n_rep;
    let mut spins: Vec<i8> = Vec::with_capacity(n * n_rep);
    match backend {
        Backend::IndependentSpins => {
            if !free {
                return Err(Error::Capability("independent-spin backend needs zero couplings".into()));
            }
            let p_up: Vec<f64> = ham
                .fields
                .iter()
                .map(|&hf| {
                    let e = hf.hypot(gamma);
                    let mz = if e > 0.0 { hf / e * (beta * e).tanh() } else { 0.0 };
                    0.5 * (1.0 + mz)
                })
                .collect();
            let mut rng = stream(device.seed, &[call, DRAW_KEY]);
            for _ in 0..n_rep {
                spins.extend(p_up.iter().map(|&p| if rng.random::<f64>() < p { 1 } else { -1 }));
            }
        }
        Backend::Exact => {
            let p = thermal_z_distribution(&ham, beta)?;
            let mut cdf = Vec::with_capacity(p.len());
            let mut acc = 0.0;
            for x in &p {
                acc += x;
                cdf.push(acc);
            }
            let mut rng = stream(device.seed, &[call, DRAW_KEY]);
            for _ in 0..n_rep {
                let u = rng.random::<f64>() * acc;
                let c = cdf.partition_point(|&x| x <= u).min(cdf.len() - 1);
                config_spins(c, n, &mut spins);
            }
        }
        Backend::Qmc { trotter, sweeps } => {
            let couplings = hamiltonian_couplings(&ham, beta, trotter)?;
            let sweeper = Sweeper::new(&ham.instance, &couplings);
            for r in 0..n_rep {
                let seed = derive_seed(device.seed, &[call, r as u64]);
                let mut state = init_state(n, trotter, beta, seed, InitKind::Random);
                let mut rng = stream(seed, &[SLICE_KEY]);
                for _ in 0..sweeps {
                    sweeper.sweep(&mut state, &mut rng);
                }
                spins.extend_from_slice(state.slice(rng.random_range(0..trotter)));
            }
        }
        Backend::Auto => unreachable!("resolved above"),
    }

    if device.quench > 0.0 {
        let mut adjacency = vec![Vec::new(); n];
        for (&(i, j), &c) in device.instance.graph().edges().iter().zip(&programmed) {
            if c != 0.0 {
                adjacency[i].push((j, c));
                adjacency[j].push((i, c));
            }
        }
        let mut rng = stream(device.seed, &[call, QUENCH_KEY]);
        for sample in spins.chunks_exact_mut(n) {
            if rng.random::<f64>() < device.quench {
                descend(sample, &adjacency, &fields, &mut rng);
            }
        }
    }
    for sample in spins.chunks_exact_mut(n) {
        sample.iter_mut().zip(&device.gauge).for_each(|(s, &e)| *s *= e);
    }
    Ok(SampleSet { n_sites: n, spins })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_diluted_chimera, sample_disorder, DilutionPattern, DisorderDistribution};
    use crate::oracle::exact_thermal_moments;

    fn cell(seed: u64) -> DisorderInstance {
        let g = build_diluted_chimera(1, DilutionPattern::None).unwrap();
        sample_disorder(&g, DisorderDistribution::DwaveSixLevel, seed)
    }

    fn free(l: usize) -> DisorderInstance {
        let g = build_diluted_chimera(l, DilutionPattern::None).unwrap();
        let inst = sample_disorder(&g, DisorderDistribution::DwaveSixLevel, 1);
        inst.with_couplings(vec![0.0; inst.couplings().len()]).unwrap()
    }

    #[test]
    fn identity_and_global_flip_gauges() {
        let dev = DeviceModel::new(cell(3), 9).with_random_biases(0.05);
        assert_eq!(gauge_transform(&dev, &vec![1; 8]).unwrap(), dev);
        let flipped = gauge_transform(&dev, &vec![-1; 8]).unwrap();
        assert_eq!(flipped.programmed_couplings(), dev.programmed_couplings());
        let negated: Vec<f64> = dev.biases.iter().map(|b| -b).collect();
        assert_eq!(flipped.logical_biases(), negated);
        assert!(gauge_transform(&dev, &[1, -1]).is_err());
        assert!(gauge_transform(&dev, &[2; 8]).is_err());
    }

    #[test]
    fn state_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("device.json");
        let mut dev = DeviceModel::new(cell(4), 5).with_random_biases(0.05).with_quench(0.3);
        dev.corrections[2] = 0.01;
        let sch = Schedule::bundled();
        sample_apq(&mut dev, &sch, &ProtocolParams::new(0.4, 3).unwrap(), &[0.0; 8]).unwrap();
        dev.write_json(&path).unwrap();
        let back = DeviceModel::read_json(&path).unwrap();
        assert_eq!(back, dev);
        assert_eq!(back.calls(), 1);
    }

    #[test]
    fn rejects_bad_models() {
        let sch = Schedule::bundled();
        let p = ProtocolParams::new(0.4, 3).unwrap();
        let mut dev = DeviceModel::new(cell(1), 1).with_quench(1.5);
        assert!(sample_apq(&mut dev, &sch, &p, &[0.0; 8]).is_err());
        let mut dev = DeviceModel::new(cell(1), 1);
        assert!(sample_apq(&mut dev, &sch, &p, &[0.0; 7]).is_err());
        let mut dev = DeviceModel::new(cell(1), 1).with_backend(Backend::IndependentSpins);
        assert!(matches!(sample_apq(&mut dev, &sch, &p, &[0.0; 8]), Err(Error::Capability(_))));
        let g = build_diluted_chimera(2, DilutionPattern::None).unwrap();
        let big = sample_disorder(&g, DisorderDistribution::DwaveSixLevel, 2);
        let mut dev = DeviceModel::new(big, 1).with_backend(Backend::Exact);
        assert!(matches!(sample_apq(&mut dev, &sch, &p, &[0.0; 32]), Err(Error::Capability(_))));
    }

    #[test]
    fn shape_and_reproducibility() {
        let sch = Schedule::bundled();
        let p = ProtocolParams::new(0.4, 100).unwrap();
        let mut a = DeviceModel::new(cell(2), 11);
        let mut b = a.clone();
        let sa = sample_apq(&mut a, &sch, &p, &[0.0; 8]).unwrap();
        let sb = sample_apq(&mut b, &sch, &p, &[0.0; 8]).unwrap();
        assert_eq!(sa, sb);
        assert_eq!(sa.n_rep(), 100);
        assert_eq!(sa.spins.len(), 800);
        let sc = sample_apq(&mut a, &sch, &p, &[0.0; 8]).unwrap();
        assert_ne!(sa, sc);
    }

    #[test]
    fn free_spins_follow_single_spin_formula() {
        let sch = Schedule::bundled();
        let s_star = 0.5;
        let (beta, gamma) = map_s_to_beta_gamma(&sch, s_star, DEFAULT_T_PHYS).unwrap();
        let p = ProtocolParams::new(s_star, 40_000).unwrap();
        let mut dev = DeviceModel::new(free(1), 7);
        let h = [0.0, 0.02, -0.02, 0.05, -0.1, 0.1, 0.0, 0.03];
        let means = sample_apq(&mut dev, &sch, &p, &h).unwrap().site_means();
        for (i, &hi) in h.iter().enumerate() {
            let x = 2.0 * hi;
            let e = x.hypot(gamma);
            let want = x / e * (beta * e).tanh();
            let sd = ((1.0 - want * want) / 40_000.0).sqrt();
            assert!((means[i] - want).abs() < 4.0 * sd, "site {i}: {} vs {want}", means[i]);
        }
        // Exact backend on the same free instance agrees with the closed form.
        let mut exact = DeviceModel::new(free(1), 7).with_backend(Backend::Exact);
        let m = sample_apq(&mut exact, &sch, &p, &[0.0; 8]).unwrap().site_means();
        assert!(m.iter().all(|x| x.abs() < 4.0 / 200.0));
    }

    #[test]
    fn exact_backend_matches_oracle_moments() {
        let sch = Schedule::bundled();
        let s_star = 0.42;
        let inst = cell(6);
        let (beta, gamma) = map_s_to_beta_gamma(&sch, s_star, DEFAULT_T_PHYS).unwrap();
        let ham = Hamiltonian::new(inst.scaled(2.0), gamma).unwrap();
        let exact = exact_thermal_moments(&ham, beta).unwrap();
        let mut dev = DeviceModel::new(inst, 12);
        let n_rep = 50_000;
        let ms = sample_apq(&mut dev, &sch, &ProtocolParams::new(s_star, n_rep).unwrap(), &[0.0; 8])
            .unwrap()
            .magnetizations();
        let sq: Vec<f64> = ms.iter().map(|m| m * m).collect();
        let m2 = crate::stats::mean(&sq);
        let err = (crate::stats::variance(&sq) / n_rep as f64).sqrt();
        assert!((m2 - exact.m2).abs() < 3.0 * err, "{m2} +- {err} vs {}", exact.m2);
    }

    #[test]
    fn descent_reaches_a_local_minimum() {
        let inst = cell(8);
        let mut adjacency = vec![Vec::new(); 8];
        for (i, j, c) in inst.bonds() {
            adjacency[i].push((j, c));
            adjacency[j].push((i, c));
        }
        let fields = [0.01, -0.02, 0.0, 0.0, 0.03, 0.0, 0.0, -0.01];
        let mut rng = stream(1, &[]);
        for _ in 0..50 {
            let mut s: Vec<i8> = (0..8).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
            descend(&mut s, &adjacency, &fields, &mut rng);
            for i in 0..8 {
                let local: f64 = adjacency[i].iter().map(|&(j, c)| c * f64::from(s[j])).sum::<f64>() - fields[i];
                assert!(f64::from(s[i]) * local <= 0.0);
            }
        }
    }

    #[test]
    fn full_quench_pushes_ferromagnet_to_saturation() {
        let sch = Schedule::bundled();
        let g = build_diluted_chimera(1, DilutionPattern::None).unwrap();
        let ferro = DisorderInstance::from_parts(g, vec![-0.5; 16], 0, DisorderDistribution::DwaveSixLevel).unwrap();
        let p = ProtocolParams::new(0.3, 2000).unwrap();
        let plain: Vec<f64> = sample_apq(&mut DeviceModel::new(ferro.clone(), 3), &sch, &p, &[0.0; 8])
            .unwrap()
            .magnetizations();
        let quenched: Vec<f64> = sample_apq(&mut DeviceModel::new(ferro, 3).with_quench(1.0), &sch, &p, &[0.0; 8])
            .unwrap()
            .magnetizations();
        let frac = |ms: &[f64]| ms.iter().filter(|m| m.abs() > 0.99).count() as f64 / ms.len() as f64;
        assert!(frac(&quenched) > frac(&plain) + 0.2, "{} vs {}", frac(&quenched), frac(&plain));
    }
}
