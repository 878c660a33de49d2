//! Two-dimensional quadratic limit state with a biased, noisy LF twin.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::ModelPair;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Example1Config {
    pub delta: f64,
    pub sigma_eps: f64,
    pub noise_seed: u64,
}

impl Default for Example1Config {
    fn default() -> Self {
        Self { delta: 0.0, sigma_eps: 0.0, noise_seed: 0 }
    }
}

pub fn example1_hf(x: &[f64]) -> f64 {
    let (a, b) = (x[0] - 2.0, x[1] - 2.0);
    let s = x[0] + x[1] - 1.0;
    a * a + b * b - 0.5 * s * s + 3.0
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over the little-endian bytes of each coordinate, then the seed.
fn fnv1a(x: &[f64], seed: u64) -> u64 {
    let mut h = FNV_OFFSET;
    let mut eat = |bytes: [u8; 8]| {
        for b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    };
    for &xi in x {
        eat(xi.to_le_bytes());
    }
    eat(seed.to_le_bytes());
    h
}

/// Uniform on the open unit interval from the top 53 bits of the hash.
fn hash_uniform(x: &[f64], seed: u64) -> f64 {
    ((fnv1a(x, seed) >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

pub(crate) fn frozen_noise(x: &[f64], seed: u64, normal: &Normal) -> f64 {
    normal.inverse_cdf(hash_uniform(x, seed))
}

/// `L(x) = H(x) + delta + sigma_eps * eps(x)`, with `eps` a fixed standard
/// normal field obtained by hashing `x` together with `noise_seed`.
pub fn example1_pair(cfg: Example1Config) -> Result<ModelPair> {
    if !(cfg.sigma_eps >= 0.0 && cfg.sigma_eps.is_finite() && cfg.delta.is_finite()) {
        return Err(Error::InvalidParameter(format!("example 1 needs finite delta and sigma_eps >= 0, got {cfg:?}")));
    }
    let Example1Config { delta, sigma_eps, noise_seed } = cfg;
    let lf: super::ResponseFn = if sigma_eps == 0.0 {
        Arc::new(move |x: &[f64]| example1_hf(x) + delta)
    } else {
        let normal = Normal::standard();
        Arc::new(move |x: &[f64]| example1_hf(x) + delta + sigma_eps * frozen_noise(x, noise_seed, &normal))
    };
    ModelPair::new(2, Arc::new(example1_hf), lf, 1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::indicator;
    use proptest::prelude::*;

    #[test]
    fn hf_spot_values() {
        assert_eq!(example1_hf(&[2.0, 2.0]), -1.5);
        assert_eq!(example1_hf(&[0.0, 0.0]), 10.5);
    }

    #[test]
    fn biased_lf_at_origin() {
        let p = example1_pair(Example1Config { delta: 1.0, ..Default::default() }).unwrap();
        assert_eq!(p.lf(&[0.0, 0.0]).unwrap(), 11.5);
    }

    #[test]
    fn fnv_reference_vector() {
        // FNV-1a 64 of the empty input is the offset basis; of b"a" it is the published vector.
        let mut h = FNV_OFFSET;
        h ^= b'a' as u64;
        h = h.wrapping_mul(FNV_PRIME);
        assert_eq!(h, 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn noise_is_frozen_and_seed_dependent() {
        let cfg = Example1Config { delta: 0.0, sigma_eps: 1.0, noise_seed: 5 };
        let a = example1_pair(cfg).unwrap();
        let b = example1_pair(cfg).unwrap();
        let c = example1_pair(Example1Config { noise_seed: 6, ..cfg }).unwrap();
        let x = [0.3, -1.2];
        assert_eq!(a.lf(&x).unwrap(), b.lf(&x).unwrap());
        assert_ne!(a.lf(&x).unwrap(), c.lf(&x).unwrap());
    }

    #[test]
    fn noise_field_is_standard_normal() {
        let normal = Normal::standard();
        let n = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for i in 0..n {
            let x = [i as f64 * 1e-3, -(i as f64) * 7e-4];
            let e = frozen_noise(&x, 17, &normal);
            s += e;
            s2 += e * e;
        }
        let m = s / n as f64;
        let v = s2 / n as f64 - m * m;
        assert!(m.abs() < 4.0 / (n as f64).sqrt(), "mean {m}");
        assert!((v - 1.0).abs() < 0.02, "var {v}");
    }

    proptest! {
        #[test]
        fn identical_models_share_indicators(x0 in -6.0f64..6.0, x1 in -6.0f64..6.0) {
            let p = example1_pair(Example1Config::default()).unwrap();
            let x = [x0, x1];
            prop_assert_eq!(indicator(p.hf(&x).unwrap()), indicator(p.lf(&x).unwrap()));
        }

        #[test]
        fn negative_bias_nests_hf_failure(x0 in -6.0f64..6.0, x1 in -6.0f64..6.0, delta in -3.0f64..-1e-9) {
            let p = example1_pair(Example1Config { delta, ..Default::default() }).unwrap();
            let x = [x0, x1];
            if indicator(p.hf(&x).unwrap()) {
                prop_assert!(indicator(p.lf(&x).unwrap()));
            }
        }
    }
}
