//! Comparison estimators that share the CVIS importance sample: multifidelity
//! importance sampling (MFIS), the approximate control variate (E-ACV), and
//! their self-normalised variants.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batch_means::{rbm_covariance, rbm_variance, BatchMeansConfig};
use crate::cvis::is_moments;
use crate::demc::ChainEnsemble;
use crate::distribution::JointInputDistribution;
use crate::error::{Error, Result};
use crate::models::ModelPair;
use crate::rng::RngStream;
use crate::smoothing::Beta;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Cvis,
    Mfis,
    Eacv,
    MfisSnis,
    EacvSnis,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] = [Self::Cvis, Self::Mfis, Self::Eacv, Self::MfisSnis, Self::EacvSnis];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Cvis => "cvis",
            Self::Mfis => "mfis",
            Self::Eacv => "eacv",
            Self::MfisSnis => "mfis_snis",
            Self::EacvSnis => "eacv_snis",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s.trim()).ok_or_else(|| Error::Config(format!("unknown estimator '{s}'")))
    }
}

/// Estimate of the ISD normalising constant `C_S = E_f[S_L]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsEstimate {
    pub value: f64,
    pub cov: f64,
    pub n: usize,
}

/// Plain Monte Carlo over `f_X`: `n` LF calls.
pub fn mc_integrate_cs(pair: &ModelPair, dist: &JointInputDistribution, beta: Beta, n: usize, rng: &RngStream) -> Result<CsEstimate> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 samples for C_S, got {n}")));
    }
    let xs = dist.sample(rng, n);
    let vals = xs.par_iter().map(|x| Ok(beta.s_l(pair.lf(x)?))).collect::<Result<Vec<f64>>>()?;
    let nf = n as f64;
    let mean = vals.iter().sum::<f64>() / nf;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let cov = if mean > 0.0 { (var / nf).sqrt() / mean } else { f64::INFINITY };
    Ok(CsEstimate { value: mean, cov, n })
}

/// `C_S` from the ISD sample alone: `1 / mean(1 / S_L)`, CoV by the delta method.
pub fn cs_from_ensemble(ens: &ChainEnsemble) -> Result<CsEstimate> {
    let inv = ens.map(|r| 1.0 / r.s_l_value);
    let e = rbm_variance(&inv, BatchMeansConfig::full_chain())?;
    Ok(CsEstimate { value: 1.0 / e.mean, cov: e.var_of_mean.sqrt() / e.mean, n: ens.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineEstimate {
    pub pf: f64,
    pub cov: f64,
    /// Control variate weight, `None` for MFIS.
    pub alpha: Option<f64>,
    /// No HF failures among the IS samples.
    pub under_sampled: bool,
    /// The LF correction had zero estimated variance, so `alpha` fell back to 0.
    pub alpha_fallback: bool,
}

fn product_cov(a: f64, b: f64) -> f64 {
    let (a2, b2) = (a * a, b * b);
    (a2 + b2 + a2 * b2).sqrt()
}

fn check_hf(ens: &ChainEnsemble, hf: &[Vec<bool>]) -> Result<()> {
    if hf.len() != ens.n_chains() || hf.iter().zip(&ens.records).any(|(h, r)| h.len() != r.len()) {
        return Err(Error::InvalidParameter("HF indicators are not aligned with the ensemble".into()));
    }
    Ok(())
}

fn weighted(ens: &ChainEnsemble, hf: &[Vec<bool>], lf: bool) -> Vec<Vec<f64>> {
    ens.records
        .iter()
        .zip(hf)
        .map(|(rs, hs)| {
            rs.iter()
                .zip(hs)
                .map(|(r, &h)| {
                    let hit = if lf { r.i_l } else { h };
                    if hit {
                        1.0 / r.s_l_value
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// `pf = C_S * mean(I_H / S_L)`; CoV of the product of independent factors.
pub fn mfis_estimate(ens: &ChainEnsemble, hf: &[Vec<bool>], cs: &CsEstimate) -> Result<BaselineEstimate> {
    check_hf(ens, hf)?;
    let q = rbm_variance(&weighted(ens, hf, false), BatchMeansConfig::full_chain())?;
    if q.mean == 0.0 {
        return Ok(BaselineEstimate { pf: 0.0, cov: f64::NAN, alpha: None, under_sampled: true, alpha_fallback: false });
    }
    let cq = q.var_of_mean.sqrt() / q.mean;
    Ok(BaselineEstimate { pf: cs.value * q.mean, cov: product_cov(cq, cs.cov), alpha: None, under_sampled: false, alpha_fallback: false })
}

/// `pf = Q + alpha Delta_L` with `Q = C_S mean(I_H/S_L)`, `Delta_L = C_S mean(I_L/S_L) - pfl`
/// and `alpha = -Cov[Delta_L, Q] / Var[Delta_L]`. The variance treats `alpha` as fixed.
pub fn eacv_estimate(ens: &ChainEnsemble, hf: &[Vec<bool>], cs: &CsEstimate, pfl: f64, var_pfl: f64) -> Result<BaselineEstimate> {
    eacv_inner(ens, hf, cs, pfl, var_pfl, None)
}

/// E-ACV with a fixed, externally chosen weight.
pub fn eacv_with_alpha(
    ens: &ChainEnsemble,
    hf: &[Vec<bool>],
    cs: &CsEstimate,
    pfl: f64,
    var_pfl: f64,
    alpha: f64,
) -> Result<BaselineEstimate> {
    eacv_inner(ens, hf, cs, pfl, var_pfl, Some(alpha))
}

fn eacv_inner(
    ens: &ChainEnsemble,
    hf: &[Vec<bool>],
    cs: &CsEstimate,
    pfl: f64,
    var_pfl: f64,
    fixed: Option<f64>,
) -> Result<BaselineEstimate> {
    check_hf(ens, hf)?;
    let m = is_moments(ens, hf)?;
    let c = cs.value;
    let var_c = (cs.cov * c).powi(2);
    // Var[XY] for independent X, Y: var_x var_y + var_x E[Y]^2 + var_y E[X]^2.
    let prod_var = |mean: f64, var: f64| var * var_c + var * c * c + var_c * mean * mean;
    let var_q = prod_var(m.q_h, m.var_q_h);
    let var_ql = prod_var(m.q_l, m.var_q_l);
    let cov_q_ql = m.cov_q_h_q_l * (var_c + c * c) + var_c * m.q_h * m.q_l;
    let var_delta = var_pfl + var_ql;
    let (alpha, fallback) = match fixed {
        Some(a) => (a, false),
        None if var_delta > 0.0 => (-cov_q_ql / var_delta, false),
        None => (0.0, true),
    };
    let q = c * m.q_h;
    let pf = q + alpha * (c * m.q_l - pfl);
    let var = var_q + alpha * alpha * var_delta + 2.0 * alpha * cov_q_ql;
    Ok(BaselineEstimate {
        pf,
        cov: var.max(0.0).sqrt() / pf.abs(),
        alpha: Some(alpha),
        under_sampled: m.q_h == 0.0,
        alpha_fallback: fallback,
    })
}

/// Self-normalised IS: `sum(I_H / S_L) / sum(1 / S_L)`.
pub fn snis_estimate(ens: &ChainEnsemble, hf: &[Vec<bool>]) -> Result<f64> {
    check_hf(ens, hf)?;
    let num: f64 = weighted(ens, hf, false).iter().flatten().sum();
    let den: f64 = ens.records.iter().flatten().map(|r| 1.0 / r.s_l_value).sum();
    Ok(num / den)
}

/// MFIS with `C_S` replaced by the ensemble's own estimate; ratio CoV by the delta method.
pub fn mfis_snis_estimate(ens: &ChainEnsemble, hf: &[Vec<bool>]) -> Result<BaselineEstimate> {
    check_hf(ens, hf)?;
    let cfg = BatchMeansConfig::full_chain();
    let a = weighted(ens, hf, false);
    let b = ens.map(|r| 1.0 / r.s_l_value);
    let (ea, eb) = (rbm_variance(&a, cfg)?, rbm_variance(&b, cfg)?);
    if ea.mean == 0.0 {
        return Ok(BaselineEstimate { pf: 0.0, cov: f64::NAN, alpha: None, under_sampled: true, alpha_fallback: false });
    }
    let cab = rbm_covariance(&a, &b, cfg)?;
    let rel = ea.var_of_mean / ea.mean.powi(2) + eb.var_of_mean / eb.mean.powi(2) - 2.0 * cab / (ea.mean * eb.mean);
    Ok(BaselineEstimate { pf: snis_estimate(ens, hf)?, cov: rel.max(0.0).sqrt(), alpha: None, under_sampled: false, alpha_fallback: false })
}

/// E-ACV with the self-normalised `C_S` estimate.
pub fn eacv_snis_estimate(ens: &ChainEnsemble, hf: &[Vec<bool>], pfl: f64, var_pfl: f64) -> Result<BaselineEstimate> {
    eacv_estimate(ens, hf, &cs_from_ensemble(ens)?, pfl, var_pfl)
}
