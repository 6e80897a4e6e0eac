//! Reproducible random streams and the scalar samplers built on them.
//!
//! A stream is a ChaCha8 generator keyed by `(seed, stream_id)`. Child streams
//! are derived from the key alone, so they do not depend on how many numbers
//! the parent has already produced.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Binomial, Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rates below this use exact inversion; larger rates use `rand_distr::Poisson`.
pub const POISSON_INVERSION_LIMIT: f64 = 10.0;

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream { seed, stream_id, rng }
    }

    /// Child stream keyed by `child`; independent of the parent's position.
    pub fn derive(&self, child: u64) -> RngStream {
        let id = splitmix64(self.stream_id ^ splitmix64(child.wrapping_add(0x5851_f42d_4c95_7f2d)));
        RngStream::new(self.seed, id)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of 32-bit words consumed so far.
    pub fn counter(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    pub fn sample(&mut self, dist: &Dist) -> Result<f64> {
        dist.validate()?;
        Ok(match *dist {
            Dist::Uniform { lo, hi } => lo + (hi - lo) * self.uniform(),
            Dist::Gaussian { mean, std } => mean + std * self.normal(),
            Dist::Bernoulli { p } => {
                if self.bernoulli(p) {
                    1.0
                } else {
                    0.0
                }
            }
            Dist::Poisson { rate } => self.poisson(rate),
            Dist::Binomial { trials, p } => {
                if trials == 0 || p == 0.0 {
                    0.0
                } else if p == 1.0 {
                    trials as f64
                } else {
                    Binomial::new(trials, p)
                        .map_err(|e| Error::param("p", e.to_string()))?
                        .sample(&mut self.rng) as f64
                }
            }
            Dist::Beta { a, b } => Beta::new(a, b)
                .map_err(|e| Error::param("beta", e.to_string()))?
                .sample(&mut self.rng),
            Dist::Gamma { shape, rate } => Gamma::new(shape, 1.0 / rate)
                .map_err(|e| Error::param("gamma", e.to_string()))?
                .sample(&mut self.rng),
        })
    }

    fn poisson(&mut self, rate: f64) -> f64 {
        if rate == 0.0 {
            return 0.0;
        }
        if rate < POISSON_INVERSION_LIMIT {
            // sequential search on the CDF
            let u = self.uniform();
            let mut k = 0.0;
            let mut p = (-rate).exp();
            let mut cdf = p;
            while u >= cdf {
                k += 1.0;
                p *= rate / k;
                cdf += p;
                if p == 0.0 && cdf < u {
                    break;
                }
            }
            k
        } else {
            Poisson::new(rate).expect("validated rate").sample(&mut self.rng)
        }
    }
}

/// Scalar distributions. Gamma is parameterised by shape and rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dist {
    Uniform { lo: f64, hi: f64 },
    Gaussian { mean: f64, std: f64 },
    Bernoulli { p: f64 },
    Poisson { rate: f64 },
    Binomial { trials: u64, p: f64 },
    Beta { a: f64, b: f64 },
    Gamma { shape: f64, rate: f64 },
}

impl Dist {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, r: &str| Err(Error::param(f, r));
        match *self {
            Dist::Uniform { lo, hi } if !(lo < hi) || !lo.is_finite() || !hi.is_finite() => {
                bad("hi", "need finite lo < hi")
            }
            Dist::Gaussian { std, mean } if !(std >= 0.0) || !mean.is_finite() || !std.is_finite() => {
                bad("std", "must be finite and non-negative")
            }
            Dist::Bernoulli { p } if !(0.0..=1.0).contains(&p) => bad("p", "must lie in [0, 1]"),
            Dist::Poisson { rate } if !(rate >= 0.0) || !rate.is_finite() => {
                bad("rate", "must be finite and non-negative")
            }
            Dist::Binomial { p, .. } if !(0.0..=1.0).contains(&p) => bad("p", "must lie in [0, 1]"),
            Dist::Beta { a, b } if !(a > 0.0 && b > 0.0) => bad("beta", "shape parameters must be positive"),
            Dist::Gamma { shape, rate } if !(shape > 0.0 && rate > 0.0) || !rate.is_finite() => {
                bad("gamma", "shape and rate must be positive")
            }
            _ => Ok(()),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Dist::Uniform { lo, hi } => 0.5 * (lo + hi),
            Dist::Gaussian { mean, .. } => mean,
            Dist::Bernoulli { p } => p,
            Dist::Poisson { rate } => rate,
            Dist::Binomial { trials, p } => trials as f64 * p,
            Dist::Beta { a, b } => a / (a + b),
            Dist::Gamma { shape, rate } => shape / rate,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Dist::Uniform { lo, hi } => (hi - lo).powi(2) / 12.0,
            Dist::Gaussian { std, .. } => std * std,
            Dist::Bernoulli { p } => p * (1.0 - p),
            Dist::Poisson { rate } => rate,
            Dist::Binomial { trials, p } => trials as f64 * p * (1.0 - p),
            Dist::Beta { a, b } => a * b / ((a + b).powi(2) * (a + b + 1.0)),
            Dist::Gamma { shape, rate } => shape / (rate * rate),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_sequence() {
        let mut a = RngStream::new(3, 9);
        let mut b = RngStream::new(3, 9);
        for _ in 0..10 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert!(a.counter() > 0);
    }

    #[test]
    fn derive_ignores_parent_position() {
        let a = RngStream::new(1, 2);
        let mut b = a.clone();
        b.uniform();
        assert_eq!(a.derive(5).next_u64(), b.derive(5).next_u64());
        assert_ne!(a.derive(5).next_u64(), a.derive(6).next_u64());
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut r = RngStream::new(0, 0);
        assert!(r.sample(&Dist::Poisson { rate: -1.0 }).is_err());
        assert!(r.sample(&Dist::Bernoulli { p: 1.5 }).is_err());
        assert!(r.sample(&Dist::Gamma { shape: 0.0, rate: 1.0 }).is_err());
        assert_eq!(r.sample(&Dist::Poisson { rate: 0.0 }).unwrap(), 0.0);
    }
}
