use serde::{Deserialize, Serialize};

use super::{hamiltonian_couplings, init_state, Hamiltonian, InitKind, Sweeper};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::stats::{blocking_error, mean, BatchMeans};

/// Run-length and update settings of one Markov chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    pub trotter: usize,
    /// Total number of sweeps, thermalization included.
    pub n_sweeps: usize,
    pub n_thermalize: usize,
    pub measure_interval: usize,
    pub init: InitKind,
    /// Also apply an imaginary-time cluster sweep after every Metropolis sweep.
    #[serde(default)]
    pub cluster: bool,
}

impl ChainParams {
    /// Thermalization defaults to a quarter of the run, measurements every 8 sweeps.
    pub fn with_defaults(trotter: usize, n_sweeps: usize) -> Self {
        ChainParams {
            trotter,
            n_sweeps,
            n_thermalize: n_sweeps / 4,
            measure_interval: 8,
            init: InitKind::Random,
            cluster: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trotter < 2 {
            return Err(Error::Validation("trotter must be >= 2".into()));
        }
        if self.n_thermalize >= self.n_sweeps {
            return Err(Error::Validation(format!(
                "n_thermalize ({}) must be smaller than n_sweeps ({})",
                self.n_thermalize, self.n_sweeps
            )));
        }
        if self.measure_interval == 0 {
            return Err(Error::Validation("measure_interval must be >= 1".into()));
        }
        Ok(())
    }

    pub fn n_measurements(&self) -> usize {
        (self.n_sweeps - self.n_thermalize) / self.measure_interval
    }
}

/// Thermal averages of one chain. Serialized as one NDJSON line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentRecord {
    pub instance: String,
    #[serde(rename = "L")]
    pub l: usize,
    pub beta: f64,
    pub gamma: f64,
    #[serde(rename = "M")]
    pub trotter: usize,
    pub n_meas: usize,
    pub m_abs: f64,
    pub m2: f64,
    pub m4: f64,
    pub m_abs_err: f64,
    pub m2_err: f64,
    pub m4_err: f64,
    pub mi2: Vec<f64>,
    pub mi4: Vec<f64>,
    pub mi2_err: Vec<f64>,
}

impl MomentRecord {
    pub fn n_sites(&self) -> usize {
        self.mi2.len()
    }
}

/// Runs one chain of the Suzuki-Trotter model and averages the moments of
/// `m = (1/NM) sum s_i(t)` and `m_i = (1/M) sum_t s_i(t)`.
pub fn run_chain(
    ham: &Hamiltonian,
    beta: f64,
    params: &ChainParams,
    seed: u64,
    instance_id: &str,
) -> Result<MomentRecord> {
    params.validate()?;
    let couplings = hamiltonian_couplings(ham, beta, params.trotter)?;
    let sweeper = Sweeper::new(&ham.instance, &couplings);
    let n = ham.n_sites();
    let mut state = init_state(n, params.trotter, beta, seed, params.init);
    let mut rng = stream(seed, &[0x5eed]);

    let n_meas = params.n_measurements();
    let mut series = Vec::with_capacity(n_meas);
    let mut mi = vec![0.0; n];
    let mut mi2_sum = vec![0.0; n];
    let mut mi4_sum = vec![0.0; n];
    let mut site_batches = BatchMeans::new(n, n_meas, 128);

    for sweep in 1..=params.n_sweeps {
        sweeper.sweep(&mut state, &mut rng);
        if params.cluster {
            sweeper.cluster_sweep(&mut state, &mut rng);
        }
        if sweep > params.n_thermalize
            && (sweep - params.n_thermalize) % params.measure_interval == 0
            && series.len() < n_meas
        {
            series.push(state.magnetization());
            state.site_magnetizations(&mut mi);
            for k in 0..n {
                let q = mi[k] * mi[k];
                mi2_sum[k] += q;
                mi4_sum[k] += q * q;
            }
            site_batches.push(mi.iter().map(|x| x * x));
        }
    }
    if series.is_empty() {
        return Err(Error::Validation("run produced no measurements".into()));
    }
    let count = series.len() as f64;
    let abs: Vec<f64> = series.iter().map(|m| m.abs()).collect();
    let sq: Vec<f64> = series.iter().map(|m| m * m).collect();
    let quad: Vec<f64> = sq.iter().map(|q| q * q).collect();
    Ok(MomentRecord {
        instance: instance_id.to_string(),
        l: ham.instance.graph().l(),
        beta,
        gamma: ham.gamma,
        trotter: params.trotter,
        n_meas: series.len(),
        m_abs: mean(&abs),
        m2: mean(&sq),
        m4: mean(&quad),
        m_abs_err: blocking_error(&abs),
        m2_err: blocking_error(&sq),
        m4_err: blocking_error(&quad),
        mi2: mi2_sum.iter().map(|s| s / count).collect(),
        mi4: mi4_sum.iter().map(|s| s / count).collect(),
        mi2_err: site_batches.errors(),
    })
}
