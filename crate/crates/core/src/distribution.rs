//! Independent input distributions.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Marginal {
    Normal { mean: f64, std: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Marginal {
    pub fn normal(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0 && std.is_finite() && mean.is_finite()) {
            return Err(Error::InvalidParameter(format!("normal marginal needs finite mean and std > 0, got ({mean}, {std})")));
        }
        Ok(Marginal::Normal { mean, std })
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidParameter(format!("uniform marginal needs finite lo < hi, got ({lo}, {hi})")));
        }
        Ok(Marginal::Uniform { lo, hi })
    }

    pub fn standard_normal() -> Self {
        Marginal::Normal { mean: 0.0, std: 1.0 }
    }

    /// Log-density; `-inf` outside the support.
    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            Marginal::Normal { mean, std } => {
                let z = (x - mean) / std;
                -0.5 * z * z - LN_SQRT_2PI - std.ln()
            }
            Marginal::Uniform { lo, hi } => {
                if (lo..=hi).contains(&x) {
                    -(hi - lo).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Marginal::Normal { mean, std } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + std * z
            }
            Marginal::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }

    pub fn std_dev(&self) -> f64 {
        match *self {
            Marginal::Normal { std, .. } => std,
            Marginal::Uniform { lo, hi } => (hi - lo) / 12f64.sqrt(),
        }
    }
}

/// Product of independent marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointInputDistribution {
    marginals: Vec<Marginal>,
}

impl JointInputDistribution {
    pub fn new(marginals: Vec<Marginal>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::InvalidParameter("distribution needs at least one marginal".into()));
        }
        Ok(Self { marginals })
    }

    pub fn standard_normal(d: usize) -> Result<Self> {
        Self::new(vec![Marginal::standard_normal(); d])
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[Marginal] {
        &self.marginals
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: x.len() });
        }
        Ok(self.log_density_unchecked(x))
    }

    /// Caller guarantees `x.len() == self.dim()`.
    pub fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        self.marginals.iter().zip(x).map(|(m, &xi)| m.log_density(xi)).sum()
    }

    /// `n` i.i.d. draws from the stream's start.
    pub fn sample(&self, rng: &RngStream, n: usize) -> Vec<Vec<f64>> {
        let mut g = rng.generator();
        (0..n).map(|_| self.sample_one(&mut g)).collect()
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.marginals.iter().map(|m| m.sample(rng)).collect()
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for (o, m) in out.iter_mut().zip(&self.marginals) {
            *o = m.sample(rng);
        }
    }

    pub fn std_devs(&self) -> Vec<f64> {
        self.marginals.iter().map(Marginal::std_dev).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn standard_normal_at_origin() {
        let d = JointInputDistribution::standard_normal(1).unwrap();
        assert!((d.log_density(&[0.0]).unwrap() + 0.918_938_5).abs() < 1e-7);
    }

    #[test]
    fn uniform_outside_support() {
        let d = JointInputDistribution::new(vec![Marginal::uniform(5.0, 50.0).unwrap()]).unwrap();
        assert_eq!(d.log_density(&[60.0]).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn bivariate_normal_at_ones() {
        let d = JointInputDistribution::standard_normal(2).unwrap();
        assert!((d.log_density(&[1.0, 1.0]).unwrap() + 2.837_877_1).abs() < 1e-7);
    }

    #[test]
    fn dimension_mismatch_errors() {
        let d = JointInputDistribution::standard_normal(2).unwrap();
        assert!(matches!(d.log_density(&[1.0]), Err(Error::Dimension { expected: 2, got: 1 })));
    }

    #[test]
    fn invalid_marginals_rejected() {
        assert!(Marginal::normal(0.0, 0.0).is_err());
        assert!(Marginal::uniform(1.0, 1.0).is_err());
        assert!(JointInputDistribution::new(vec![]).is_err());
    }

    #[test]
    fn sample_mean_near_zero() {
        let d = JointInputDistribution::standard_normal(2).unwrap();
        let n = 1_000_000;
        let xs = d.sample(&RngStream::new(1, 0), n);
        for k in 0..2 {
            let m: f64 = xs.iter().map(|x| x[k]).sum::<f64>() / n as f64;
            assert!(m.abs() < 4.0 / (n as f64).sqrt(), "coordinate {k}: {m}");
        }
    }

    #[test]
    fn uniform_samples_in_support() {
        let d = JointInputDistribution::new(vec![Marginal::uniform(5.0, 50.0).unwrap()]).unwrap();
        let xs = d.sample(&RngStream::new(2, 0), 100_000);
        assert!(xs.iter().all(|x| (5.0..=50.0).contains(&x[0])));
    }

    #[test]
    fn sampling_is_deterministic() {
        let d = JointInputDistribution::standard_normal(3).unwrap();
        let r = RngStream::new(99, 4);
        assert_eq!(d.sample(&r, 50), d.sample(&r, 50));
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn marginals_normalize() {
        let n = Marginal::normal(1.5, 0.7).unwrap();
        let z = simpson(|x| n.log_density(x).exp(), 1.5 - 14.0 * 0.7, 1.5 + 14.0 * 0.7, 20_000);
        assert!((z - 1.0).abs() < 1e-10, "{z}");
        let u = Marginal::uniform(5.0, 50.0).unwrap();
        let z = simpson(|x| u.log_density(x).exp(), 5.0, 50.0, 1000);
        assert!((z - 1.0).abs() < 1e-10, "{z}");
    }

    proptest! {
        #[test]
        fn joint_is_sum_of_marginals(x in prop::collection::vec(-5.0f64..60.0, 3)) {
            let ms = vec![
                Marginal::normal(0.3, 2.0).unwrap(),
                Marginal::uniform(5.0, 50.0).unwrap(),
                Marginal::standard_normal(),
            ];
            let d = JointInputDistribution::new(ms.clone()).unwrap();
            let direct: f64 = ms.iter().zip(&x).map(|(m, &xi)| m.log_density(xi)).sum();
            prop_assert_eq!(d.log_density(&x).unwrap(), direct);
        }
    }
}
