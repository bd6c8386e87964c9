use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Random,
    Ordered,
}

/// Space x imaginary-time spin configuration of one chain.
///
/// Stored slice-major: the spin of site `i` on slice `t` lives at `t * N + i`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathState {
    n: usize,
    m: usize,
    pub beta: f64,
    spins: Vec<i8>,
}

impl PathState {
    pub fn from_spins(n: usize, m: usize, beta: f64, spins: Vec<i8>) -> Self {
        assert_eq!(spins.len(), n * m, "spin array does not match N x M");
        assert!(spins.iter().all(|&s| s == 1 || s == -1), "spins must be +-1");
        PathState { n, m, beta, spins }
    }

    pub fn n_sites(&self) -> usize {
        self.n
    }

    pub fn n_slices(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, site: usize, slice: usize) -> i8 {
        self.spins[slice * self.n + site]
    }

    #[inline]
    pub fn flip(&mut self, site: usize, slice: usize) {
        let s = &mut self.spins[slice * self.n + site];
        *s = -*s;
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub(crate) fn spins_mut(&mut self) -> &mut [i8] {
        &mut self.spins
    }

    pub fn slice(&self, t: usize) -> &[i8] {
        &self.spins[t * self.n..(t + 1) * self.n]
    }

    /// `m = (1/NM) sum_i sum_t s_i(t)`.
    pub fn magnetization(&self) -> f64 {
        let total: i64 = self.spins.iter().map(|&s| i64::from(s)).sum();
        total as f64 / self.spins.len() as f64
    }

    /// `m_i = (1/M) sum_t s_i(t)` for every site, written into `out`.
    pub fn site_magnetizations(&self, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        let mut sums = vec![0i32; self.n];
        for slice in self.spins.chunks_exact(self.n) {
            for (acc, &s) in sums.iter_mut().zip(slice) {
                *acc += i32::from(s);
            }
        }
        let inv = 1.0 / self.m as f64;
        for (o, s) in out.iter_mut().zip(sums) {
            *o = f64::from(s) * inv;
        }
    }

    pub fn flip_all(&mut self) {
        self.spins.iter_mut().for_each(|s| *s = -*s);
    }
}

pub fn init_state(n: usize, m: usize, beta: f64, seed: u64, kind: InitKind) -> PathState {
    assert!(m >= 2, "need at least two Trotter slices");
    let spins = match kind {
        InitKind::Ordered => vec![1; n * m],
        InitKind::Random => {
            let mut rng = stream(seed, &[0x1417]);
            (0..n * m).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect()
        }
    };
    PathState { n, m, beta, spins }
}
