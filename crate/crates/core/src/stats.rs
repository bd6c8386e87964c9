//! Small statistics helpers shared by the samplers and estimators.

/// Arithmetic mean; `NaN` for an empty slice.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two points.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Standard error of the mean of a correlated series by blocking.
///
/// The series is repeatedly coarse-grained by averaging neighbouring pairs.
/// The naive standard error grows with block size until blocks decorrelate;
/// the largest estimate among levels that keep at least `MIN_BLOCKS` blocks is
/// returned.
pub fn blocking_error(series: &[f64]) -> f64 {
    const MIN_BLOCKS: usize = 32;
    if series.len() < 2 {
        return 0.0;
    }
    let mut blocks = series.to_vec();
    let mut best = (variance(&blocks) / blocks.len() as f64).sqrt();
    while blocks.len() / 2 >= MIN_BLOCKS {
        blocks = blocks.chunks_exact(2).map(|p| 0.5 * (p[0] + p[1])).collect();
        let sem = (variance(&blocks) / blocks.len() as f64).sqrt();
        best = best.max(sem);
    }
    best
}

/// Batch-means accumulator with a fixed number of batches, for quantities
/// too numerous to keep a full time series of (per-site moments).
#[derive(Clone, Debug)]
pub struct BatchMeans {
    batch_len: usize,
    filled: usize,
    current: Vec<f64>,
    batches: Vec<Vec<f64>>,
}

impl BatchMeans {
    /// `width` values are pushed per sample; `expected` samples in total.
    pub fn new(width: usize, expected: usize, n_batches: usize) -> Self {
        let batch_len = (expected / n_batches.max(1)).max(1);
        BatchMeans { batch_len, filled: 0, current: vec![0.0; width], batches: Vec::new() }
    }

    pub fn push(&mut self, values: impl Iterator<Item = f64>) {
        for (acc, v) in self.current.iter_mut().zip(values) {
            *acc += v;
        }
        self.filled += 1;
        if self.filled == self.batch_len {
            let width = self.current.len();
            let done = std::mem::replace(&mut self.current, vec![0.0; width]);
            self.batches.push(done.into_iter().map(|s| s / self.batch_len as f64).collect());
            self.filled = 0;
        }
    }

    /// Standard error per component from complete batches.
    pub fn errors(&self) -> Vec<f64> {
        let width = self.current.len();
        let nb = self.batches.len();
        if nb < 2 {
            return vec![0.0; width];
        }
        (0..width)
            .map(|k| {
                let col: Vec<f64> = self.batches.iter().map(|b| b[k]).collect();
                (variance(&col) / nb as f64).sqrt()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn blocking_matches_naive_error_for_iid() {
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(3);
        let xs: Vec<f64> = (0..1 << 14).map(|_| rng.random::<f64>()).collect();
        let naive = (variance(&xs) / xs.len() as f64).sqrt();
        let blocked = blocking_error(&xs);
        assert!(blocked >= naive && blocked < 1.5 * naive, "{blocked} vs {naive}");
    }

    #[test]
    fn blocking_detects_correlation() {
        // AR(1) with rho = 0.9: integrated autocorrelation time ~ 19.
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(4);
        let mut x = 0.0;
        let xs: Vec<f64> = (0..1 << 16)
            .map(|_| {
                x = 0.9 * x + rng.random::<f64>() - 0.5;
                x
            })
            .collect();
        let naive = (variance(&xs) / xs.len() as f64).sqrt();
        assert!(blocking_error(&xs) > 3.0 * naive);
    }
}
