use rand::Rng;

use super::{EffectiveCouplings, PathState};
use crate::lattice::DisorderInstance;

/// Local-update engine for one set of effective couplings.
///
/// A Metropolis sweep proposes one single-spin flip per space-time site.
/// Sites are visited in a fixed two-colour order (spatial checkerboard of the
/// bipartite Chimera graph combined with slice parity), so all sites of one
/// colour are mutually independent.
#[derive(Clone, Debug)]
pub struct Sweeper {
    n: usize,
    m: usize,
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
    weights: Vec<f64>,
    k_field: Vec<f64>,
    k_trotter: f64,
    bond_probability: f64,
    colored_sites: [Vec<u32>; 2],
}

impl Sweeper {
    pub fn new(instance: &DisorderInstance, couplings: &EffectiveCouplings) -> Self {
        let n = instance.n_sites();
        let mut adjacency: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        for (&(i, j), &k) in instance.graph().edges().iter().zip(&couplings.k_spatial) {
            if k != 0.0 {
                adjacency[i].push((j as u32, k));
                adjacency[j].push((i as u32, k));
            }
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for list in &adjacency {
            for &(j, k) in list {
                neighbors.push(j);
                weights.push(k);
            }
            offsets.push(neighbors.len());
        }
        let graph = instance.graph();
        let mut colored_sites = [Vec::new(), Vec::new()];
        for i in 0..n {
            colored_sites[graph.color(i)].push(i as u32);
        }
        Sweeper {
            n,
            m: couplings.trotter,
            offsets,
            neighbors,
            weights,
            k_field: couplings.k_field.clone(),
            k_trotter: couplings.k_trotter,
            bond_probability: -(-2.0 * couplings.k_trotter).exp_m1(),
            colored_sites,
        }
    }

    pub fn n_sites(&self) -> usize {
        self.n
    }

    pub fn n_slices(&self) -> usize {
        self.m
    }

    #[inline]
    fn spatial_field(&self, spins: &[i8], base: usize, site: usize) -> f64 {
        let mut local = self.k_field[site];
        for e in self.offsets[site]..self.offsets[site + 1] {
            local += self.weights[e] * f64::from(spins[base + self.neighbors[e] as usize]);
        }
        local
    }

    /// Change of the action if `s_site(slice)` were flipped.
    pub fn delta_action(&self, state: &PathState, site: usize, slice: usize) -> f64 {
        let spins = state.spins();
        let n = self.n;
        let prev = (slice + self.m - 1) % self.m;
        let next = (slice + 1) % self.m;
        let s = f64::from(spins[slice * n + site]);
        let temporal = f64::from(spins[prev * n + site]) + f64::from(spins[next * n + site]);
        2.0 * s * (self.k_trotter * temporal - self.spatial_field(spins, slice * n, site))
    }

    /// Full action `S` of a configuration (weight `exp(-S)`).
    pub fn action(&self, state: &PathState) -> f64 {
        let spins = state.spins();
        let n = self.n;
        let mut s = 0.0;
        for t in 0..self.m {
            let base = t * n;
            let next = ((t + 1) % self.m) * n;
            for i in 0..n {
                let si = f64::from(spins[base + i]);
                s += self.k_field[i] * si;
                for e in self.offsets[i]..self.offsets[i + 1] {
                    let j = self.neighbors[e] as usize;
                    if j > i {
                        s += self.weights[e] * si * f64::from(spins[base + j]);
                    }
                }
                s -= self.k_trotter * si * f64::from(spins[next + i]);
            }
        }
        s
    }

    /// One Metropolis sweep. Returns the number of accepted flips.
    pub fn sweep<R: Rng + ?Sized>(&self, state: &mut PathState, rng: &mut R) -> u64 {
        debug_assert_eq!(state.n_sites(), self.n);
        debug_assert_eq!(state.n_slices(), self.m);
        let n = self.n;
        let m = self.m;
        let k_trotter = self.k_trotter;
        let spins = state.spins_mut();
        let mut accepted = 0u64;
        for phase in 0..2 {
            for t in 0..m {
                let base = t * n;
                let prev = ((t + m - 1) % m) * n;
                let next = ((t + 1) % m) * n;
                for &site in &self.colored_sites[(phase + t) & 1] {
                    let i = site as usize;
                    let s = f64::from(spins[base + i]);
                    let temporal = f64::from(spins[prev + i] + spins[next + i]);
                    let delta =
                        2.0 * s * (k_trotter * temporal - self.spatial_field(spins, base, i));
                    // Zero-cost flips at probability 1/2: always taking them makes
                    // the sweep order drive domain walls in lockstep on free rings.
                    let accept = if delta < 0.0 {
                        true
                    } else if delta == 0.0 {
                        rng.random::<bool>()
                    } else {
                        rng.random::<f64>() < (-delta).exp()
                    };
                    if accept {
                        spins[base + i] = -spins[base + i];
                        accepted += 1;
                    }
                }
            }
        }
        accepted
    }

    /// Swendsen-Wang update of each site's imaginary-time ring.
    ///
    /// Temporal bonds between equal neighbours are activated with probability
    /// `1 - exp(-2K)`; each resulting segment is then given its orientation by
    /// a heat-bath choice against the spatial and longitudinal terms. Returns
    /// the number of flipped segments.
    pub fn cluster_sweep<R: Rng + ?Sized>(&self, state: &mut PathState, rng: &mut R) -> u64 {
        let n = self.n;
        let m = self.m;
        let mut flipped = 0u64;
        let mut field = vec![0.0; m];
        let mut cut = vec![false; m]; // cut[t]: bond between t and t+1 is inactive
        for i in 0..n {
            let spins = state.spins_mut();
            for t in 0..m {
                field[t] = self.spatial_field(spins, t * n, i);
                let a = spins[t * n + i];
                let b = spins[((t + 1) % m) * n + i];
                cut[t] = a != b || rng.random::<f64>() >= self.bond_probability;
            }
            let first_cut = match cut.iter().position(|&c| c) {
                Some(p) => p,
                None => {
                    // The whole ring is one cluster.
                    let e: f64 = (0..m).map(|t| f64::from(spins[t * n + i]) * field[t]).sum();
                    if rng.random::<f64>() < 1.0 / (1.0 + (-2.0 * e).exp()) {
                        (0..m).for_each(|t| spins[t * n + i] = -spins[t * n + i]);
                        flipped += 1;
                    }
                    continue;
                }
            };
            // Walk segments starting right after a cut.
            let start = (first_cut + 1) % m;
            let mut t = start;
            loop {
                let seg_start = t;
                let mut e = 0.0;
                loop {
                    e += f64::from(spins[t * n + i]) * field[t];
                    let at_cut = cut[t];
                    t = (t + 1) % m;
                    if at_cut {
                        break;
                    }
                }
                // Action of the segment is e; flipping gives -e. Heat bath.
                let p_flip = 1.0 / (1.0 + (-2.0 * e).exp());
                if rng.random::<f64>() < p_flip {
                    let mut u = seg_start;
                    loop {
                        spins[u * n + i] = -spins[u * n + i];
                        u = (u + 1) % m;
                        if u == t {
                            break;
                        }
                    }
                    flipped += 1;
                }
                if t == start {
                    break;
                }
            }
        }
        flipped
    }
}
