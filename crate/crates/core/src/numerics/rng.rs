use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

/// Identifier of the generator behind [`RngState`].
pub const RNG_ALGORITHM: &str = "chacha8";

/// Seeded ChaCha8 stream. Identical seeds give identical streams on every
/// platform. [`RngState::split`] derives independent child streams by
/// selecting a ChaCha stream id, so child `i` of seed `s` never depends on
/// how much of the parent was consumed.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn split(&self, stream: u64) -> RngState {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream.wrapping_add(1));
        RngState { seed: self.seed, rng }
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int(&mut self, lo: usize, hi: usize) -> usize {
        self.rng.random_range(lo..=hi)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Symmetric Dirichlet sample of dimension `dim`.
    pub fn dirichlet(&mut self, alpha: f64, dim: usize) -> Vec<f64> {
        let gamma = Gamma::new(alpha, 1.0).expect("positive alpha");
        let mut v: Vec<f64> = (0..dim).map(|_| gamma.sample(&mut self.rng)).collect();
        let total: f64 = v.iter().sum();
        if total > 0.0 {
            v.iter_mut().for_each(|x| *x /= total);
        } else {
            v.iter_mut().for_each(|x| *x = 1.0 / dim as f64);
        }
        v
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.rng.random_range(0..=i);
            items.swap(i, j);
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.random::<u64>()
    }
}
