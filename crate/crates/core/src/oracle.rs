//! Exact references for small systems.
//!
//! * dense diagonalization of the quantum Hamiltonian (static z-basis moments
//!   and imaginary-time integrated correlators),
//! * exhaustive enumeration of the classical (Gamma = 0) model,
//! * transfer-matrix evaluation of the finite-`M` Trotter model,
//! * brute-force enumeration of the Trotter action for tiny space-time sizes.
//!
//! z-basis configurations are bit strings: bit `i` set means site `i` points down.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::lattice::DisorderInstance;
use crate::qmc::{half_log_coth, Hamiltonian};

/// Largest system handled by the dense spectral oracle.
pub const MAX_SPECTRAL_SITES: usize = 12;
/// Largest system handled by classical enumeration.
pub const MAX_CLASSICAL_SITES: usize = 20;
/// Largest system handled by the Trotter transfer matrix.
pub const MAX_TRANSFER_SITES: usize = 10;
/// Largest `N * M` handled by brute-force path enumeration.
pub const MAX_PATH_SPINS: usize = 22;

const DEGENERATE_CUTOFF: f64 = 1e-8;

#[inline]
fn spin(config: usize, site: usize) -> f64 {
    if config >> site & 1 == 1 {
        -1.0
    } else {
        1.0
    }
}

/// Thermal moments from an exact calculation.
///
/// `m_abs`, `m1`..`m4` and `mi1` are moments of the z-basis measurement
/// distribution `<s|rho|s>` (what a projective readout samples). `chi_m2` and
/// `chi_loc` are the imaginary-time integrated counterparts
/// `(1/beta^2) int int <T A(tau) A(tau')>` with `A = m` resp. `A = s^z_i`;
/// these are what the Trotter-averaged estimators converge to as `M -> inf`.
/// For Gamma = 0 both coincide.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactMoments {
    pub n_sites: usize,
    pub m1: f64,
    pub m_abs: f64,
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
    pub mi1: Vec<f64>,
    pub chi_m2: f64,
    pub chi_loc: Vec<f64>,
    /// Sum of the normalized z-basis probabilities (1 up to rounding).
    pub total_probability: f64,
}

impl ExactMoments {
    /// `beta N chi_m2`: the linear response `d<m>/dh` to a uniform field.
    pub fn uniform_response(&self, beta: f64) -> f64 {
        beta * self.n_sites as f64 * self.chi_m2
    }
}

struct Spectrum {
    energies: DVector<f64>,
    vectors: DMatrix<f64>,
    weights: Vec<f64>,
    z: f64,
}

fn hamiltonian_matrix(ham: &Hamiltonian) -> DMatrix<f64> {
    let n = ham.n_sites();
    let dim = 1usize << n;
    let mut h = DMatrix::zeros(dim, dim);
    let bonds: Vec<(usize, usize, f64)> = ham.instance.bonds().collect();
    for c in 0..dim {
        let mut e = 0.0;
        for &(i, j, jij) in &bonds {
            e += jij * spin(c, i) * spin(c, j);
        }
        for (i, &hi) in ham.fields.iter().enumerate() {
            e -= hi * spin(c, i);
        }
        h[(c, c)] = e;
        if ham.gamma != 0.0 {
            for i in 0..n {
                h[(c ^ (1 << i), c)] = -ham.gamma;
            }
        }
    }
    h
}

fn spectrum(ham: &Hamiltonian, beta: f64) -> Result<Spectrum> {
    let n = ham.n_sites();
    if n > MAX_SPECTRAL_SITES {
        return Err(Error::Capability(format!(
            "spectral oracle limited to {MAX_SPECTRAL_SITES} sites, got {n}"
        )));
    }
    if !(beta > 0.0) {
        return Err(Error::Validation(format!("beta must be positive, got {beta}")));
    }
    let eig = SymmetricEigen::new(hamiltonian_matrix(ham));
    let e0 = eig.eigenvalues.min();
    let weights: Vec<f64> = eig.eigenvalues.iter().map(|e| (-beta * (e - e0)).exp()).collect();
    let z = weights.iter().sum();
    Ok(Spectrum { energies: eig.eigenvalues, vectors: eig.eigenvectors, weights, z })
}

fn z_distribution_from(spec: &Spectrum) -> Vec<f64> {
    let dim = spec.energies.len();
    let mut p = vec![0.0; dim];
    for (a, &w) in spec.weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let col = spec.vectors.column(a);
        for (c, pc) in p.iter_mut().enumerate() {
            *pc += w * col[c] * col[c];
        }
    }
    p.iter_mut().for_each(|x| *x /= spec.z);
    p
}

/// `(1/Z) sum_ab |<a|A|b>|^2 w_ab` for a diagonal observable `A`.
fn imaginary_time_integral(spec: &Spectrum, beta: f64, diag: &[f64]) -> f64 {
    let u = &spec.vectors;
    let scaled = DMatrix::from_fn(u.nrows(), u.ncols(), |r, c| diag[r] * u[(r, c)]);
    let b = u.transpose() * scaled;
    let dim = spec.energies.len();
    let mut total = 0.0;
    for a in 0..dim {
        let (ea, ga) = (spec.energies[a], spec.weights[a]);
        for bb in 0..dim {
            let x = b[(a, bb)];
            if x == 0.0 {
                continue;
            }
            let gb = spec.weights[bb];
            let gap = beta * (spec.energies[bb] - ea).abs();
            let w = if gap < DEGENERATE_CUTOFF {
                0.5 * (ga + gb)
            } else {
                // (g_a - g_b) / (beta (E_b - E_a)), factored on the lower level
                ga.max(gb) * -(-gap).exp_m1() / gap
            };
            total += x * x * w;
        }
    }
    total / spec.z
}

fn moments_from_distribution(n: usize, p: &[f64]) -> (f64, f64, f64, f64, f64, Vec<f64>, f64) {
    let (mut m1, mut ma, mut m2, mut m3, mut m4, mut tot) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let mut mi1 = vec![0.0; n];
    for (c, &pc) in p.iter().enumerate() {
        let m = (0..n).map(|i| spin(c, i)).sum::<f64>() / n as f64;
        tot += pc;
        m1 += pc * m;
        ma += pc * m.abs();
        m2 += pc * m * m;
        m3 += pc * m * m * m;
        m4 += pc * m * m * m * m;
        for (i, v) in mi1.iter_mut().enumerate() {
            *v += pc * spin(c, i);
        }
    }
    (m1, ma, m2, m3, m4, mi1, tot)
}

/// Exact thermal moments of the quantum Hamiltonian (N <= 12).
pub fn exact_thermal_moments(ham: &Hamiltonian, beta: f64) -> Result<ExactMoments> {
    let n = ham.n_sites();
    let spec = spectrum(ham, beta)?;
    let p = z_distribution_from(&spec);
    let (m1, m_abs, m2, m3, m4, mi1, total_probability) = moments_from_distribution(n, &p);
    let dim = 1usize << n;
    let global: Vec<f64> =
        (0..dim).map(|c| (0..n).map(|i| spin(c, i)).sum::<f64>() / n as f64).collect();
    let chi_m2 = imaginary_time_integral(&spec, beta, &global);
    let chi_loc = (0..n)
        .map(|i| {
            let d: Vec<f64> = (0..dim).map(|c| spin(c, i)).collect();
            imaginary_time_integral(&spec, beta, &d)
        })
        .collect();
    Ok(ExactMoments { n_sites: n, m1, m_abs, m2, m3, m4, mi1, chi_m2, chi_loc, total_probability })
}

/// Probability of each z-basis configuration in the thermal state (N <= 12).
pub fn thermal_z_distribution(ham: &Hamiltonian, beta: f64) -> Result<Vec<f64>> {
    Ok(z_distribution_from(&spectrum(ham, beta)?))
}

/// Gamma = 0 moments by exhaustive Boltzmann sums (N <= 20). Longitudinal
/// fields, if any, are taken from `fields` (energy `-sum h_i s_i`).
pub fn classical_limit_moments(
    instance: &DisorderInstance,
    fields: Option<&[f64]>,
    beta: f64,
) -> Result<ExactMoments> {
    let n = instance.n_sites();
    if n > MAX_CLASSICAL_SITES {
        return Err(Error::Capability(format!(
            "classical enumeration limited to {MAX_CLASSICAL_SITES} sites, got {n}"
        )));
    }
    let zero = vec![0.0; n];
    let fields = fields.unwrap_or(&zero);
    let dim = 1usize << n;
    let bonds: Vec<(usize, usize, f64)> = instance.bonds().collect();
    let energy = |c: usize| {
        let b: f64 = bonds.iter().map(|&(i, j, jij)| jij * spin(c, i) * spin(c, j)).sum();
        b - fields.iter().enumerate().map(|(i, h)| h * spin(c, i)).sum::<f64>()
    };
    let energies: Vec<f64> = (0..dim).map(energy).collect();
    let e0 = energies.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = energies.iter().map(|e| (-beta * (e - e0)).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    let (m1, m_abs, m2, m3, m4, mi1, total_probability) = moments_from_distribution(n, &p);
    // Diagonal observables commute with a diagonal Hamiltonian: time integrals are static values.
    let chi_loc = vec![1.0; n];
    Ok(ExactMoments { n_sites: n, m1, m_abs, m2, m3, m4, mi1, chi_m2: m2, chi_loc, total_probability })
}

/// `<m_i^2>` of a single free spin on a ring of `M` Trotter slices.
///
/// From the 2x2 transfer matrix `[[e^K, e^-K], [e^-K, e^K]]` with eigenvalues
/// `2 cosh K`, `2 sinh K`: `<s_0 s_d> = (r^d + r^(M-d)) / (1 + r^M)`,
/// `r = tanh K`, and `<m_i^2> = (1/M) sum_d <s_0 s_d>`.
pub fn free_spin_correlator(beta: f64, gamma: f64, trotter: usize) -> f64 {
    assert!(gamma > 0.0 && beta > 0.0 && trotter >= 1);
    let k = half_log_coth(beta * gamma / trotter as f64);
    let r = k.tanh();
    let m = trotter as i32;
    let denom = 1.0 + r.powi(m);
    let sum: f64 = (0..m).map(|d| (r.powi(d) + r.powi(m - d)) / denom).sum();
    sum / trotter as f64
}

/// Exact finite-`M` Trotter-model averages.
#[derive(Clone, Debug, PartialEq)]
pub struct TrotterMoments {
    pub m2: f64,
    pub mi2: Vec<f64>,
}

/// `<m^2>` and `<m_i^2>` of the `M`-slice classical model via its
/// `2^N x 2^N` transfer matrix (N <= 10).
pub fn trotter_moments(ham: &Hamiltonian, beta: f64, trotter: usize) -> Result<TrotterMoments> {
    let n = ham.n_sites();
    if n > MAX_TRANSFER_SITES {
        return Err(Error::Capability(format!(
            "transfer matrix limited to {MAX_TRANSFER_SITES} sites, got {n}"
        )));
    }
    if ham.gamma <= 0.0 || beta <= 0.0 || trotter < 2 {
        return Err(Error::Validation("need Gamma > 0, beta > 0, M >= 2".into()));
    }
    let dim = 1usize << n;
    let dtau = beta / trotter as f64;
    let k = half_log_coth(dtau * ham.gamma);
    let bonds: Vec<(usize, usize, f64)> = ham.instance.bonds().collect();
    // Slice action and its square-root Boltzmann factor.
    let slice_action: Vec<f64> = (0..dim)
        .map(|c| {
            let b: f64 = bonds.iter().map(|&(i, j, jij)| jij * spin(c, i) * spin(c, j)).sum();
            let f: f64 = ham.fields.iter().enumerate().map(|(i, h)| h * spin(c, i)).sum();
            dtau * (b - f)
        })
        .collect();
    let smin = slice_action.iter().cloned().fold(f64::INFINITY, f64::min);
    let half: Vec<f64> = slice_action.iter().map(|s| (-0.5 * (s - smin)).exp()).collect();
    let t = DMatrix::from_fn(dim, dim, |a, b| {
        let differ = (a ^ b).count_ones() as f64;
        // exp(K sum_i s_i s'_i) relative to exp(K N)
        half[a] * (-2.0 * k * differ).exp() * half[b]
    });
    let eig = SymmetricEigen::new(t);
    let lmax = eig.eigenvalues.max();
    let lam: Vec<f64> = eig.eigenvalues.iter().map(|l| l / lmax).collect();
    let mm = trotter as i32;
    let z: f64 = lam.iter().map(|l| l.powi(mm)).sum();
    // kernel[a][b] = sum_{d=0}^{M-1} lam_a^(M-d) lam_b^d
    let kernel = DMatrix::from_fn(dim, dim, |a, b| {
        (0..mm).map(|d| lam[a].powi(mm - d) * lam[b].powi(d)).sum::<f64>()
    });
    let u = &eig.eigenvectors;
    let correlate = |diag: &dyn Fn(usize) -> f64| -> f64 {
        let scaled = DMatrix::from_fn(dim, dim, |r, c| diag(r) * u[(r, c)]);
        let b = u.transpose() * scaled;
        let mut s = 0.0;
        for a in 0..dim {
            for bb in 0..dim {
                s += b[(a, bb)] * b[(a, bb)] * kernel[(a, bb)];
            }
        }
        s / (z * trotter as f64)
    };
    let m2 = correlate(&|c| (0..n).map(|i| spin(c, i)).sum::<f64>() / n as f64);
    let mi2 = (0..n).map(|i| correlate(&|c| spin(c, i))).collect();
    Ok(TrotterMoments { m2, mi2 })
}

/// Normalized `exp(-S)` over every space-time configuration of the Trotter
/// model restricted to `sites`, enumerated directly from the action.
///
/// `sites` must be closed under bonds (no bond joins it to the rest of the
/// system); the result is then the exact marginal of the full model.
/// Configuration index bit `t * k + a` set means `s_{sites[a]}(t) = -1`,
/// with `k = sites.len()`; requires `k * M <= 22`.
pub fn path_distribution(
    ham: &Hamiltonian,
    beta: f64,
    trotter: usize,
    sites: &[usize],
) -> Result<Vec<f64>> {
    let k_sites = sites.len();
    let spins = k_sites * trotter;
    if spins > MAX_PATH_SPINS {
        return Err(Error::Capability(format!(
            "path enumeration limited to {MAX_PATH_SPINS} spins, got {spins}"
        )));
    }
    if ham.gamma <= 0.0 || beta <= 0.0 || trotter < 2 {
        return Err(Error::Validation("need Gamma > 0, beta > 0, M >= 2".into()));
    }
    let local = |site: usize| sites.iter().position(|&s| s == site);
    let mut bonds = Vec::new();
    for (i, j, jij) in ham.instance.bonds() {
        match (local(i), local(j)) {
            (Some(a), Some(b)) => bonds.push((a, b, jij)),
            (None, None) => {}
            _ if jij == 0.0 => {}
            _ => {
                return Err(Error::Validation(format!(
                    "bond ({i}, {j}) crosses the boundary of the enumerated sites"
                )))
            }
        }
    }
    let dtau = beta / trotter as f64;
    let k = half_log_coth(dtau * ham.gamma);
    let fields: Vec<f64> = sites.iter().map(|&i| ham.fields[i]).collect();
    let action = |c: usize| -> f64 {
        let s = |a: usize, t: usize| spin(c, (t % trotter) * k_sites + a);
        let mut act = 0.0;
        for t in 0..trotter {
            for &(a, b, jab) in &bonds {
                act += dtau * jab * s(a, t) * s(b, t);
            }
            for (a, h) in fields.iter().enumerate() {
                act -= dtau * h * s(a, t);
                act -= k * s(a, t) * s(a, t + 1);
            }
        }
        act
    };
    let actions: Vec<f64> = (0..1usize << spins).map(action).collect();
    let amin = actions.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = actions.iter().map(|a| (-(a - amin)).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    Ok(p)
}
