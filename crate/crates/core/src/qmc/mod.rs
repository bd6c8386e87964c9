//! Path-integral Monte Carlo for the transverse-field Ising model
//!
//! ```text
//! H = sum_<ij> J_ij sz_i sz_j - Gamma sum_i sx_i - sum_i h_i sz_i
//! ```
//!
//! The Suzuki-Trotter decomposition with `M` imaginary-time slices maps the
//! quantum partition function onto a classical one with weight `exp(-S)`,
//!
//! ```text
//! S = sum_t [ sum_<ij> k_ij s_i(t) s_j(t) + sum_i f_i s_i(t) ] - K sum_i sum_t s_i(t) s_i(t+1)
//! k_ij = beta J_ij / M,   f_i = -beta h_i / M,   K = (1/2) ln coth(beta Gamma / M)
//! ```
//!
//! with periodic boundary conditions along imaginary time.

mod chain;
mod grid;
mod state;
mod sweep;

pub use chain::{run_chain, ChainParams, MomentRecord};
pub use grid::{cell_seed, grid_cells, run_grid, CellKey, GridReport, GridSpec};
pub use state::{init_state, InitKind, PathState};
pub use sweep::Sweeper;

use crate::error::{Error, Result};
use crate::lattice::DisorderInstance;

/// Transverse-field Ising Hamiltonian on a disorder instance, with optional
/// longitudinal fields (zero unless set).
#[derive(Clone, Debug)]
pub struct Hamiltonian {
    pub instance: DisorderInstance,
    pub gamma: f64,
    pub fields: Vec<f64>,
}

impl Hamiltonian {
    pub fn new(instance: DisorderInstance, gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::Validation(format!("transverse field must be >= 0, got {gamma}")));
        }
        let n = instance.n_sites();
        Ok(Hamiltonian { instance, gamma, fields: vec![0.0; n] })
    }

    pub fn with_fields(mut self, fields: Vec<f64>) -> Result<Self> {
        if fields.len() != self.instance.n_sites() {
            return Err(Error::Validation(format!(
                "{} longitudinal fields for {} sites",
                fields.len(),
                self.instance.n_sites()
            )));
        }
        self.fields = fields;
        Ok(self)
    }

    pub fn n_sites(&self) -> usize {
        self.instance.n_sites()
    }

    /// Classical energy of a z-basis configuration (`true` = up).
    pub fn ising_energy(&self, spins: &[i8]) -> f64 {
        let bonds: f64 = self
            .instance
            .bonds()
            .map(|(i, j, c)| c * f64::from(spins[i]) * f64::from(spins[j]))
            .sum();
        let field: f64 = self.fields.iter().zip(spins).map(|(h, &s)| h * f64::from(s)).sum();
        bonds - field
    }
}

/// Dimensionless couplings of the classical (d+1)-dimensional model.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveCouplings {
    pub beta: f64,
    pub gamma: f64,
    pub trotter: usize,
    /// `beta J_ij / M` per edge, in edge order.
    pub k_spatial: Vec<f64>,
    /// `-beta h_i / M` per site.
    pub k_field: Vec<f64>,
    /// `(1/2) ln coth(beta Gamma / M)`, shared by all imaginary-time bonds.
    pub k_trotter: f64,
}

/// `(1/2) ln coth(x)` for `x > 0`, using `coth x = 1 + 2 / (e^{2x} - 1)`.
pub fn half_log_coth(x: f64) -> f64 {
    0.5 * (2.0 / (2.0 * x).exp_m1()).ln_1p()
}

pub fn effective_couplings(
    beta: f64,
    gamma: f64,
    trotter: usize,
    instance: &DisorderInstance,
) -> Result<EffectiveCouplings> {
    let ham = Hamiltonian::new(instance.clone(), gamma)?;
    hamiltonian_couplings(&ham, beta, trotter)
}

/// Effective couplings for a Hamiltonian that may carry longitudinal fields.
pub fn hamiltonian_couplings(
    ham: &Hamiltonian,
    beta: f64,
    trotter: usize,
) -> Result<EffectiveCouplings> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::Validation(format!("beta must be positive, got {beta}")));
    }
    if trotter < 2 {
        return Err(Error::Validation(format!("need at least 2 Trotter slices, got {trotter}")));
    }
    if ham.gamma == 0.0 {
        return Err(Error::Validation(
            "Gamma = 0 has no Trotter coupling; use the classical-limit oracle".into(),
        ));
    }
    let dtau = beta / trotter as f64;
    let x = dtau * ham.gamma;
    let k_trotter = half_log_coth(x);
    if !(k_trotter > 0.0) || !k_trotter.is_finite() {
        return Err(Error::Numerical(format!(
            "Trotter coupling not representable for beta*Gamma/M = {x:e}"
        )));
    }
    Ok(EffectiveCouplings {
        beta,
        gamma: ham.gamma,
        trotter,
        k_spatial: ham.instance.couplings().iter().map(|c| dtau * c).collect(),
        k_field: ham.fields.iter().map(|h| -dtau * h).collect(),
        k_trotter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_diluted_chimera, sample_disorder, DilutionPattern, DisorderDistribution};

    fn cell() -> DisorderInstance {
        let g = build_diluted_chimera(1, DilutionPattern::None).unwrap();
        sample_disorder(&g, DisorderDistribution::QmcSixLevel, 1)
    }

    #[test]
    fn trotter_coupling_reference_value() {
        // 30-digit evaluation of (1/2) ln coth(50 * 1.79 / 150).
        let k = effective_couplings(50.0, 1.79, 150, &cell()).unwrap().k_trotter;
        assert!((k - 0.313_049_596_461_020_6).abs() < 1e-12, "{k}");
    }

    #[test]
    fn spatial_coupling_is_beta_j_over_m() {
        let inst = cell();
        let inst = inst.with_couplings(vec![-1.0; inst.couplings().len()]).unwrap();
        let c = effective_couplings(50.0, 1.79, 150, &inst).unwrap();
        for k in &c.k_spatial {
            assert!((k + 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn trotter_coupling_large_m_asymptote() {
        // (1/2) ln coth x = (1/2) ln(1/x) + x^2/6 + O(x^4)
        let (beta, gamma) = (2.0, 1.0);
        let mut prev = 0.0;
        for m in [16usize, 64, 256, 1024, 4096] {
            let k = effective_couplings(beta, gamma, m, &cell()).unwrap().k_trotter;
            let x = beta * gamma / m as f64;
            let asym = 0.5 * (1.0 / x).ln();
            assert!((k - asym - x * x / 6.0).abs() < x.powi(4), "M = {m}");
            assert!(k > prev);
            prev = k;
        }
    }

    #[test]
    fn extreme_arguments_are_guarded() {
        assert!(effective_couplings(1.0, 0.0, 8, &cell()).is_err());
        assert!(effective_couplings(-1.0, 1.0, 8, &cell()).is_err());
        assert!(effective_couplings(1.0, 1.0, 1, &cell()).is_err());
        // beta*Gamma/M = 1000: coth - 1 underflows.
        assert!(matches!(effective_couplings(8000.0, 1.0, 8, &cell()), Err(Error::Numerical(_))));
        // Tiny argument stays finite.
        let k = effective_couplings(1e-6, 1e-6, 1000, &cell()).unwrap().k_trotter;
        assert!(k.is_finite() && k > 10.0);
    }
}
