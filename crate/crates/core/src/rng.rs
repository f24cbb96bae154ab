//! Deterministic random numbers for the whole artifact.
//!
//! Algorithm: xoshiro256++ for the uniform stream, seeded by expanding a
//! `u64` seed through SplitMix64 (the construction recommended by the
//! xoshiro authors). Standard normals come from the Marsaglia polar method
//! with the spare value cached. Child streams are derived from parent
//! *seeds*, never from generator state:
//!
//! `child_seed = splitmix64_mix(parent_seed + (stream + 1) * 0x9E3779B97F4A7C15)`
//!
//! so the same `(seed, stream)` pair names the same stream no matter how far
//! the parent generator has advanced. Identical seeds give identical sample
//! streams across runs; results are reproducible up to IEEE-754 semantics of
//! the platform libm (`ln`/`sqrt` in the normal sampler).

use crate::scalar::Scalar;
use crate::tensor::Tensor;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output mixing function (Stafford variant 13 finalizer).
fn splitmix_mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic child-seed derivation; documented formula, see module docs.
pub fn derive_seed(parent_seed: u64, stream: u64) -> u64 {
    splitmix_mix(parent_seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(GOLDEN)))
}

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    s: [u64; 4],
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let mut next = || {
            sm = sm.wrapping_add(GOLDEN);
            splitmix_mix(sm)
        };
        let s = [next(), next(), next(), next()];
        Rng {
            seed,
            s,
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fresh generator for a named substream of this generator's seed.
    pub fn derive(&self, stream: u64) -> Rng {
        Rng::new(derive_seed(self.seed, stream))
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform on [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n), bias-free via rejection.
    pub fn uniform_usize(&mut self, n: usize) -> usize {
        assert!(n > 0, "uniform_usize over empty range");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Uniform integer in [lo, hi] inclusive.
    pub fn uniform_int(&mut self, lo: usize, hi: usize) -> usize {
        assert!(lo <= hi, "uniform_int with lo > hi");
        lo + self.uniform_usize(hi - lo + 1)
    }

    /// Standard normal via the Marsaglia polar method, spare cached.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let f = (-2.0 * s.ln() / s).sqrt();
                self.spare_normal = Some(v * f);
                return u * f;
            }
        }
    }

    pub fn randn<S: Scalar>(&mut self, shape: &[usize]) -> crate::Result<Tensor<S>> {
        let mut t = Tensor::zeros(shape)?;
        for x in t.data_mut() {
            *x = S::from_f64(self.normal());
        }
        Ok(t)
    }

    pub fn rand_uniform<S: Scalar>(&mut self, shape: &[usize]) -> crate::Result<Tensor<S>> {
        let mut t = Tensor::zeros(shape)?;
        for x in t.data_mut() {
            *x = S::from_f64(self.uniform());
        }
        Ok(t)
    }
}
