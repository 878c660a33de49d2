//! Replicated batch means for parallel-chain MCMC output.

use serde::{Deserialize, Serialize};

use crate::demc::{ChainEnsemble, Record};
use crate::error::{Error, Result};

/// `batch_size: None` uses each full chain as one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchMeansConfig {
    pub batch_size: Option<usize>,
}

impl BatchMeansConfig {
    pub fn full_chain() -> Self {
        Self { batch_size: None }
    }

    pub fn with_batch_size(b: usize) -> Self {
        Self { batch_size: Some(b) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbmEstimate {
    pub mean: f64,
    pub var_of_mean: f64,
    pub n_batches: usize,
    /// Trailing states per chain not covered by a full batch.
    pub dropped: usize,
}

fn batch_means(values: &[Vec<f64>], cfg: BatchMeansConfig) -> Result<(Vec<f64>, usize)> {
    let t = values.iter().map(Vec::len).min().unwrap_or(0);
    if values.iter().any(|c| c.len() != t) {
        return Err(Error::InsufficientData("chains must have equal length".into()));
    }
    let b = cfg.batch_size.unwrap_or(t);
    if b == 0 || b > t {
        return Err(Error::InsufficientData(format!("batch size {b} does not fit chains of length {t}")));
    }
    let per_chain = t / b;
    let means: Vec<f64> = values.iter().flat_map(|c| c.chunks_exact(b).map(|w| w.iter().sum::<f64>() / b as f64)).collect();
    if means.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least two batches, got {} (C = {}, T = {t}, b = {b})",
            means.len(),
            values.len()
        )));
    }
    Ok((means, t - per_chain * b))
}

/// Grand mean and the variance of that mean from batch-to-batch spread.
pub fn rbm_variance(values: &[Vec<f64>], cfg: BatchMeansConfig) -> Result<RbmEstimate> {
    let (means, dropped) = batch_means(values, cfg)?;
    let a = means.len() as f64;
    let mean = means.iter().sum::<f64>() / a;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (a - 1.0);
    Ok(RbmEstimate { mean, var_of_mean: var / a, n_batches: means.len(), dropped })
}

/// Covariance of two grand means computed over the same chain layout.
pub fn rbm_covariance(x: &[Vec<f64>], y: &[Vec<f64>], cfg: BatchMeansConfig) -> Result<f64> {
    let (mx, _) = batch_means(x, cfg)?;
    let (my, _) = batch_means(y, cfg)?;
    if mx.len() != my.len() {
        return Err(Error::InsufficientData("mismatched chain layouts".into()));
    }
    let a = mx.len() as f64;
    let (cx, cy) = (mx.iter().sum::<f64>() / a, my.iter().sum::<f64>() / a);
    let s: f64 = mx.iter().zip(&my).map(|(u, v)| (u - cx) * (v - cy)).sum();
    Ok(s / (a - 1.0) / a)
}

pub fn estimator_moments<F: Fn(&Record) -> f64>(ens: &ChainEnsemble, stat: F, cfg: BatchMeansConfig) -> Result<RbmEstimate> {
    rbm_variance(&ens.map(stat), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn iid(c: usize, t: usize, rng: &RngStream) -> Vec<Vec<f64>> {
        let mut g = rng.generator();
        (0..c).map(|_| (0..t).map(|_| g.sample(StandardNormal)).collect()).collect()
    }

    fn ar1(c: usize, t: usize, rho: f64, rng: &RngStream) -> Vec<Vec<f64>> {
        let mut g = rng.generator();
        let innov = (1.0 - rho * rho).sqrt();
        (0..c)
            .map(|_| {
                let mut x: f64 = g.sample(StandardNormal);
                (0..t)
                    .map(|_| {
                        let out = x;
                        let z: f64 = g.sample(StandardNormal);
                        x = rho * x + innov * z;
                        out
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn constant_values_have_zero_variance() {
        let v = vec![vec![2.5; 10]; 4];
        let r = rbm_variance(&v, BatchMeansConfig::full_chain()).unwrap();
        assert_eq!((r.mean, r.var_of_mean), (2.5, 0.0));
    }

    #[test]
    fn single_chain_full_batch_errors() {
        assert!(rbm_variance(&[vec![1.0, 2.0, 3.0]], BatchMeansConfig::full_chain()).is_err());
    }

    #[test]
    fn iid_full_chain_batches() {
        let (c, t) = (50, 200);
        let reps = 100;
        let mean_var: f64 = (0..reps)
            .map(|r| rbm_variance(&iid(c, t, &RngStream::new(21, r)), BatchMeansConfig::full_chain()).unwrap().var_of_mean)
            .sum::<f64>()
            / reps as f64;
        let exact = 1.0 / (c * t) as f64;
        assert!((mean_var / exact - 1.0).abs() < 0.3, "{mean_var} vs {exact}");
    }

    #[test]
    fn unit_batches_reduce_to_sample_variance() {
        let v = iid(5, 40, &RngStream::new(2, 2));
        let r = rbm_variance(&v, BatchMeansConfig::with_batch_size(1)).unwrap();
        let flat: Vec<f64> = v.concat();
        let n = flat.len() as f64;
        let m = flat.iter().sum::<f64>() / n;
        let s2 = flat.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((r.mean - m).abs() < 1e-14);
        assert!((r.var_of_mean - s2 / n).abs() < 1e-15);
    }

    #[test]
    fn ar1_matches_asymptotic_variance() {
        let (c, t, rho) = (50, 200, 0.5);
        let reps = 100;
        let (mut rbm, mut naive) = (0.0, 0.0);
        for r in 0..reps {
            let v = ar1(c, t, rho, &RngStream::new(31, r));
            rbm += rbm_variance(&v, BatchMeansConfig::full_chain()).unwrap().var_of_mean;
            naive += rbm_variance(&v, BatchMeansConfig::with_batch_size(1)).unwrap().var_of_mean;
        }
        let exact = (1.0 + rho) / (1.0 - rho) / (c * t) as f64;
        let (rbm, naive) = (rbm / reps as f64, naive / reps as f64);
        assert!((rbm / exact - 1.0).abs() < 0.3, "{rbm} vs {exact}");
        assert!((exact / naive - 3.0).abs() < 0.3 * 3.0, "naive underestimates by {}", exact / naive);
    }

    #[test]
    fn scales_inversely_with_chain_length() {
        let reps = 60;
        let avg = |t: usize| -> f64 {
            (0..reps)
                .map(|r| rbm_variance(&iid(20, t, &RngStream::new(t as u64, r)), BatchMeansConfig::full_chain()).unwrap().var_of_mean)
                .sum::<f64>()
                / reps as f64
        };
        let ratio = avg(200) / avg(400);
        assert!((ratio - 2.0).abs() < 0.5, "{ratio}");
    }

    #[test]
    fn remainder_is_reported() {
        let v = iid(3, 10, &RngStream::new(1, 0));
        let r = rbm_variance(&v, BatchMeansConfig::with_batch_size(4)).unwrap();
        assert_eq!((r.n_batches, r.dropped), (6, 2));
    }

    #[test]
    fn covariance_of_identical_series_is_variance() {
        let v = iid(6, 30, &RngStream::new(4, 4));
        let cfg = BatchMeansConfig::full_chain();
        let var = rbm_variance(&v, cfg).unwrap().var_of_mean;
        assert!((rbm_covariance(&v, &v, cfg).unwrap() - var).abs() < 1e-18);
    }

    proptest! {
        #[test]
        fn permutation_invariant_and_nonnegative(
            data in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 8), 2..8),
            rot in 0usize..8,
        ) {
            let cfg = BatchMeansConfig::full_chain();
            let a = rbm_variance(&data, cfg).unwrap();
            let mut p = data.clone();
            p.rotate_left(rot % data.len());
            p.reverse();
            let b = rbm_variance(&p, cfg).unwrap();
            prop_assert!(a.var_of_mean >= 0.0);
            prop_assert!((a.mean - b.mean).abs() < 1e-12);
            prop_assert!((a.var_of_mean - b.var_of_mean).abs() <= 1e-12 * (1.0 + a.var_of_mean));
        }
    }
}
