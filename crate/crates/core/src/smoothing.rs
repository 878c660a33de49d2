//! Logistic smoothing of the LF indicator and the resulting unnormalised
//! importance sampling density `S_L(x, beta) f_X(x)`.

use serde::{Deserialize, Serialize};

use crate::distribution::JointInputDistribution;
use crate::error::{Error, Result};
use crate::models::{indicator, ModelPair};

/// `1 / (1 + exp(beta * lf_value))` without overflow.
pub fn s_l(lf_value: f64, beta: f64) -> f64 {
    let z = beta * lf_value;
    if z > 30.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// `ln s_l(lf_value, beta)`, accurate in both tails.
pub fn log_s_l(lf_value: f64, beta: f64) -> f64 {
    let z = beta * lf_value;
    if z > 30.0 {
        -z - (-z).exp().ln_1p()
    } else {
        -z.exp().ln_1p()
    }
}

/// Sharpness of the smoothed indicator. `HardIndicator` is the `beta -> inf`
/// limit, where `S_L` equals the LF indicator itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Beta {
    Finite(f64),
    HardIndicator,
}

impl Beta {
    pub fn finite(beta: f64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta must be finite and >= 0, got {beta}")));
        }
        Ok(Beta::Finite(beta))
    }

    pub fn s_l(&self, lf_value: f64) -> f64 {
        match *self {
            Beta::Finite(b) => s_l(lf_value, b),
            Beta::HardIndicator => {
                if indicator(lf_value) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn log_s_l(&self, lf_value: f64) -> f64 {
        match *self {
            Beta::Finite(b) => log_s_l(lf_value, b),
            Beta::HardIndicator => {
                if indicator(lf_value) {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// Numeric value, `None` in hard-indicator mode.
    pub fn value(&self) -> Option<f64> {
        match *self {
            Beta::Finite(b) => Some(b),
            Beta::HardIndicator => None,
        }
    }
}

/// Smoothing parameter from the last intermediate subset threshold `b_prev`
/// and the last conditional probability `p_last`: the value at which
/// `s_l(b_prev / 2) = p_last / 2`. `p_last = 1` selects the hard indicator.
pub fn beta_star(b_prev: f64, p_last: f64) -> Result<Beta> {
    if !(b_prev > 0.0) {
        return Err(Error::InvalidParameter(format!("last intermediate threshold must be positive, got {b_prev}")));
    }
    if !(p_last > 0.0 && p_last <= 1.0) {
        return Err(Error::InvalidParameter(format!("p_last must lie in (0, 1], got {p_last}")));
    }
    if p_last == 1.0 {
        return Ok(Beta::HardIndicator);
    }
    Ok(Beta::Finite(2.0 / b_prev * (2.0 / p_last - 1.0).ln()))
}

/// `S_L(L(x), beta) f_X(x)` up to its normalising constant.
#[derive(Debug, Clone, Copy)]
pub struct SmoothedIsd<'a> {
    pub pair: &'a ModelPair,
    pub base: &'a JointInputDistribution,
    pub beta: Beta,
}

impl<'a> SmoothedIsd<'a> {
    pub fn new(pair: &'a ModelPair, base: &'a JointInputDistribution, beta: Beta) -> Self {
        Self { pair, base, beta }
    }

    /// Log of the unnormalised density; one LF call per evaluation.
    pub fn log_isd_unnormalized(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_isd_with_lf(x)?.0)
    }

    /// Log-density together with the LF response, or `None` for the response
    /// when `x` lies outside the input support (no LF call is made there).
    pub fn log_isd_with_lf(&self, x: &[f64]) -> Result<(f64, Option<f64>)> {
        let lf_x = self.base.log_density(x)?;
        if lf_x == f64::NEG_INFINITY {
            return Ok((f64::NEG_INFINITY, None));
        }
        let l = self.pair.lf(x)?;
        Ok((self.beta.log_s_l(l) + lf_x, Some(l)))
    }
}
