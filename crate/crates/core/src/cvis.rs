//! The CVIS estimator: ratio-form control variate constant over a shared
//! importance sample, its lognormal uncertainty, the kappa diagnostic, and the
//! end-to-end procedure.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batch_means::{rbm_covariance, rbm_variance, BatchMeansConfig};
use crate::demc::{isd_target, sample_isd, ChainEnsemble, DemcConfig, DemcSampler};
use crate::distribution::JointInputDistribution;
use crate::error::{Error, Result};
use crate::models::{indicator, ModelPair, Side};
use crate::rng::RngStream;
use crate::smoothing::{beta_star, Beta, SmoothedIsd};
use crate::subset_simulation::{run_sus, select_seeds, SusConfig, SusResult};

/// Sample means of `I_H/S_L`, `I_L/S_L`, `I_H I_L/S_L` with batch-means
/// variances. `C_S` is left out of every term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsMoments {
    pub q_h: f64,
    pub q_l: f64,
    pub q_hl: f64,
    pub var_q_h: f64,
    pub var_q_l: f64,
    pub var_q_hl: f64,
    pub cov_q_h_q_l: f64,
    pub cov_q_h_q_hl: f64,
    pub n: usize,
}

pub fn is_moments(ens: &ChainEnsemble, hf: &[Vec<bool>]) -> Result<IsMoments> {
    if hf.len() != ens.n_chains() || hf.iter().zip(&ens.records).any(|(h, r)| h.len() != r.len()) {
        return Err(Error::InvalidParameter("HF indicators are not aligned with the ensemble".into()));
    }
    let ratio = |f: &dyn Fn(bool, bool) -> bool| -> Vec<Vec<f64>> {
        ens.records
            .iter()
            .zip(hf)
            .map(|(rs, hs)| rs.iter().zip(hs).map(|(r, &h)| if f(h, r.i_l) { 1.0 / r.s_l_value } else { 0.0 }).collect())
            .collect()
    };
    let vh = ratio(&|h, _| h);
    let vl = ratio(&|_, l| l);
    let vhl = ratio(&|h, l| h && l);
    let cfg = BatchMeansConfig::full_chain();
    let (h, l, hl) = (rbm_variance(&vh, cfg)?, rbm_variance(&vl, cfg)?, rbm_variance(&vhl, cfg)?);
    if l.mean == 0.0 {
        return Err(Error::NoLfFailures);
    }
    Ok(IsMoments {
        q_h: h.mean,
        q_l: l.mean,
        q_hl: hl.mean,
        var_q_h: h.var_of_mean,
        var_q_l: l.var_of_mean,
        var_q_hl: hl.var_of_mean,
        cov_q_h_q_l: rbm_covariance(&vh, &vl, cfg)?,
        cov_q_h_q_hl: rbm_covariance(&vh, &vhl, cfg)?,
        n: ens.len(),
    })
}

pub fn alpha_tilde(m: &IsMoments) -> Result<f64> {
    if !(m.q_l > 0.0) {
        return Err(Error::NoLfFailures);
    }
    Ok(m.q_h / m.q_l)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaStats {
    pub mu_alpha: f64,
    pub sigma_alpha: f64,
    pub mean_alpha: f64,
    pub var_alpha: f64,
    pub cov_alpha: f64,
}

/// Lognormal description of the ratio: `ln alpha ~ N(mu, sigma^2)` with
/// `sigma^2` the sum of the squared CoVs of numerator and denominator.
pub fn alpha_lognormal_stats(m: &IsMoments) -> Result<AlphaStats> {
    if !(m.q_h > 0.0) {
        return Err(Error::NoHfFailures { n: m.n });
    }
    if !(m.q_l > 0.0) {
        return Err(Error::NoLfFailures);
    }
    let mu = (m.q_h / m.q_l).ln();
    let s2 = m.var_q_h / (m.q_h * m.q_h) + m.var_q_l / (m.q_l * m.q_l);
    let em1 = s2.exp_m1();
    Ok(AlphaStats {
        mu_alpha: mu,
        sigma_alpha: s2.sqrt(),
        mean_alpha: (mu + 0.5 * s2).exp(),
        var_alpha: em1 * (2.0 * mu + s2).exp(),
        cov_alpha: em1.sqrt(),
    })
}

/// `pf = alpha * pfl`; CoV of a product of independent factors.
pub fn pf_and_cov(alpha: f64, cov_alpha: f64, pfl: f64, cov_pfl: f64) -> (f64, f64) {
    let (a2, l2) = (cov_alpha * cov_alpha, cov_pfl * cov_pfl);
    (alpha * pfl, (a2 + l2 + a2 * l2).sqrt())
}

pub fn kappa_tilde(m: &IsMoments) -> Result<f64> {
    if !(m.q_h > 0.0) {
        return Err(Error::NoHfFailures { n: m.n });
    }
    Ok(m.q_hl / m.q_h)
}

/// Delta-method standard error of `q_hl / q_h`.
pub fn kappa_std_err(m: &IsMoments) -> f64 {
    if !(m.q_h > 0.0) {
        return f64::NAN;
    }
    let k = m.q_hl / m.q_h;
    if m.q_hl == 0.0 {
        return (m.var_q_hl).sqrt() / m.q_h;
    }
    let rel = m.var_q_hl / (m.q_hl * m.q_hl) + m.var_q_h / (m.q_h * m.q_h) - 2.0 * m.cov_q_h_q_hl / (m.q_hl * m.q_h);
    k * rel.max(0.0).sqrt()
}

/// Inputs to the surplus allocation: current CoVs and the sample counts that produced them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurplusModel {
    pub cov_alpha: f64,
    pub n_q: u64,
    pub cov_pfl: f64,
    pub n_l: u64,
}

impl SurplusModel {
    /// Predicted `CoV[pf]^2` after adding `n_sq` IS samples and `n_sl` LF samples.
    pub fn predicted_cov2(&self, n_sq: u64, n_sl: u64) -> f64 {
        let a2 = self.cov_alpha.powi(2) * self.n_q as f64 / (self.n_q + n_sq) as f64;
        let l2 = self.cov_pfl.powi(2) * self.n_l as f64 / (self.n_l + n_sl) as f64;
        a2 + l2 + a2 * l2
    }
}

/// Split the leftover budget `total - exploration - quantity` between more
/// IS samples (`n_sq`, each costing one HF and one LF call) and more LF
/// samples (`n_sl`). Exhaustive over `n_sq`; ties go to the smaller `n_sq`.
pub fn allocate_surplus(
    total: f64,
    exploration: f64,
    quantity: f64,
    cost_hf: f64,
    cost_lf: f64,
    model: &SurplusModel,
) -> Result<(u64, u64)> {
    let surplus = total - exploration - quantity;
    if !(surplus >= 0.0) {
        return Err(Error::InvalidParameter(format!("negative surplus {surplus}")));
    }
    if !(cost_hf > 0.0 && cost_lf > 0.0) {
        return Err(Error::InvalidParameter("costs must be positive".into()));
    }
    let pair_cost = cost_hf + cost_lf;
    let max_sq = (surplus / pair_cost).floor() as u64;
    let mut best = (0u64, (surplus / cost_lf).floor() as u64);
    let mut best_v = model.predicted_cov2(best.0, best.1);
    for n_sq in 1..=max_sq {
        let n_sl = ((surplus - pair_cost * n_sq as f64) / cost_lf).floor().max(0.0) as u64;
        let v = model.predicted_cov2(n_sq, n_sl);
        if v < best_v {
            best = (n_sq, n_sl);
            best_v = v;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsdMode {
    /// Smoothing parameter from the last two subset levels.
    Auto,
    /// Hard LF indicator as the ISD shape.
    Hard,
    Fixed(Beta),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvisOptions {
    pub sus: SusConfig,
    pub demc: DemcConfig,
    pub isd: IsdMode,
    pub tau: f64,
    /// Total cost budget in model-cost units; `None` runs the fixed allocation once.
    pub budget: Option<f64>,
    /// When set, subset simulation doubles its level size up to this cap until its CoV is at most `tau`.
    pub sus_target_max_n: Option<usize>,
    /// CoV[alpha] and CoV[pfl] count as balanced when within this factor.
    pub balance_factor: f64,
}

impl CvisOptions {
    /// Fixed allocation: `sus_n` LF samples per level, `n_chains x n_steps` IS samples.
    pub fn fixed(sus_n: usize, n_chains: usize, n_steps: usize, dist: &JointInputDistribution, rng: RngStream) -> Self {
        Self {
            sus: SusConfig::new(sus_n, rng.derive(1)),
            demc: DemcConfig::new(n_chains, n_steps, dist, rng.derive(2)),
            isd: IsdMode::Auto,
            tau: 0.1,
            budget: None,
            sus_target_max_n: None,
            balance_factor: 1.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidParameter(format!("tau must lie in (0,1), got {}", self.tau)));
        }
        if !(self.balance_factor >= 1.0) {
            return Err(Error::InvalidParameter("balance_factor must be >= 1".into()));
        }
        self.sus.validate()
    }
}

/// LF exploration output: subset simulation and the ISD sharpness it implies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exploration {
    pub sus: SusResult,
    pub beta: Beta,
}

pub fn explore(
    pair: &ModelPair,
    dist: &JointInputDistribution,
    sus: &SusConfig,
    isd: IsdMode,
    target: Option<(f64, usize)>,
) -> Result<Exploration> {
    let lf = |x: &[f64]| pair.lf(x);
    let mut cfg = *sus;
    let mut res = run_sus(lf, dist, &cfg)?;
    if let Some((tau, max_n)) = target {
        while res.cov > tau && cfg.n_per_level * 2 <= max_n {
            cfg.n_per_level *= 2;
            cfg.rng = cfg.rng.derive(cfg.n_per_level as u64);
            res = run_sus(lf, dist, &cfg)?;
        }
    }
    let beta = match isd {
        IsdMode::Auto => beta_star(res.last_intermediate_threshold(), res.last_cond_prob())?,
        IsdMode::Hard => Beta::HardIndicator,
        IsdMode::Fixed(b) => b,
    };
    Ok(Exploration { sus: res, beta })
}

/// Importance sample with HF indicators attached.
#[derive(Debug, Clone)]
pub struct IsStage {
    pub ensemble: ChainEnsemble,
    pub hf: Vec<Vec<bool>>,
    sampler: DemcSampler<f64>,
}

/// One HF call per recorded state, evaluated in parallel, returned in chain order.
pub fn evaluate_hf(pair: &ModelPair, points: &[Vec<Vec<f64>>], from_step: usize) -> Result<Vec<Vec<bool>>> {
    points.iter().map(|chain| chain[from_step..].par_iter().map(|x| Ok(indicator(pair.evaluate(Side::Hf, x)?))).collect()).collect()
}

pub fn importance_stage(pair: &ModelPair, dist: &JointInputDistribution, exploration: &Exploration, demc: &DemcConfig) -> Result<IsStage> {
    let seeds = select_seeds(&exploration.sus, demc.n_chains, exploration.beta, &demc.rng.derive(u64::MAX))?;
    let isd = SmoothedIsd::new(pair, dist, exploration.beta);
    let (ensemble, sampler) = sample_isd(&isd, &seeds, demc)?;
    let hf = evaluate_hf(pair, &ensemble.points, 0)?;
    Ok(IsStage { ensemble, hf, sampler })
}

impl IsStage {
    /// Extend every chain by `steps` generations and evaluate HF on the new states.
    pub fn extend(&mut self, pair: &ModelPair, dist: &JointInputDistribution, steps: usize) -> Result<()> {
        if steps == 0 {
            return Ok(());
        }
        let beta = self.ensemble.beta;
        let isd = SmoothedIsd::new(pair, dist, beta);
        let target = isd_target(&isd);
        let before = self.ensemble.n_steps();
        self.sampler.advance(&target, steps, true)?;
        self.ensemble = ChainEnsemble::from_lf_states(self.sampler.states(), beta, self.sampler.acceptance_rate());
        let fresh = evaluate_hf(pair, &self.ensemble.points, before)?;
        for (h, f) in self.hf.iter_mut().zip(fresh) {
            h.extend(f);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvisDiagnostics {
    pub kappa_below_half: bool,
    pub kappa_std_err: f64,
    pub alpha_gt_4rho2: String,
    pub isd_mode: String,
    pub n_levels: usize,
    pub sus_n_per_level: usize,
    pub n_is_samples: usize,
    pub acceptance_rate: f64,
    pub acceptance_out_of_range: bool,
    pub cov_balanced: bool,
    pub refinement_rounds: usize,
    pub budget_exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvisReport {
    pub alpha: f64,
    pub pf: f64,
    pub kappa: f64,
    pub mu_alpha: f64,
    pub sigma_alpha: f64,
    pub cov_alpha: f64,
    pub cov_pfl: f64,
    pub cov_pf: f64,
    pub pfl: f64,
    /// `null` in hard-indicator mode.
    pub beta_star: Option<f64>,
    pub hf_calls: u64,
    pub lf_calls: u64,
    pub diagnostics: CvisDiagnostics,
}

/// Assemble a report from the two independent estimates.
pub fn cvis_report(
    pair: &ModelPair,
    exploration: &Exploration,
    stage: &IsStage,
    pfl: f64,
    cov_pfl: f64,
    balance_factor: f64,
) -> Result<CvisReport> {
    let m = is_moments(&stage.ensemble, &stage.hf)?;
    let alpha = alpha_tilde(&m)?;
    let stats = alpha_lognormal_stats(&m)?;
    let kappa = kappa_tilde(&m)?;
    let (pf, cov_pf) = pf_and_cov(alpha, stats.cov_alpha, pfl, cov_pfl);
    let acc = stage.ensemble.acceptance_rate;
    let (lo, hi) = (stats.cov_alpha.min(cov_pfl), stats.cov_alpha.max(cov_pfl));
    Ok(CvisReport {
        alpha,
        pf,
        kappa,
        mu_alpha: stats.mu_alpha,
        sigma_alpha: stats.sigma_alpha,
        cov_alpha: stats.cov_alpha,
        cov_pfl,
        cov_pf,
        pfl,
        beta_star: exploration.beta.value(),
        hf_calls: pair.calls(Side::Hf),
        lf_calls: pair.calls(Side::Lf),
        diagnostics: CvisDiagnostics {
            kappa_below_half: kappa < 0.5,
            kappa_std_err: kappa_std_err(&m),
            alpha_gt_4rho2: "not computable without the indicator correlation".into(),
            isd_mode: match exploration.beta {
                Beta::Finite(_) => "logistic".into(),
                Beta::HardIndicator => "hard_indicator".into(),
            },
            n_levels: exploration.sus.n_levels,
            sus_n_per_level: (exploration.sus.total_lf_calls / exploration.sus.n_levels as u64) as usize,
            n_is_samples: m.n,
            acceptance_rate: acc,
            acceptance_out_of_range: !(0.1..=0.6).contains(&acc),
            cov_balanced: hi <= balance_factor * lo,
            refinement_rounds: 0,
            budget_exhausted: false,
        },
    })
}

/// Full procedure: LF subset simulation, ISD tuning, DE-MC importance
/// sampling with HF evaluation, then (with a budget) surplus refinement until
/// `cov_pf <= tau` or the budget runs out.
pub fn run_cvis(pair: &ModelPair, dist: &JointInputDistribution, opts: &CvisOptions) -> Result<CvisReport> {
    opts.validate()?;
    let target = opts.sus_target_max_n.map(|m| (opts.tau, m));
    let exploration = explore(pair, dist, &opts.sus, opts.isd, target)?;
    let mut stage = importance_stage(pair, dist, &exploration, &opts.demc)?;
    let (mut pfl, mut cov_pfl) = (exploration.sus.pf, exploration.sus.cov);
    let mut lf_budget_calls = exploration.sus.total_lf_calls;
    let mut report = cvis_report(pair, &exploration, &stage, pfl, cov_pfl, opts.balance_factor)?;

    let Some(budget) = opts.budget else {
        return Ok(report);
    };
    let mut rounds = 0;
    let mut exhausted = false;
    let mut extra = 0u64;
    while report.cov_pf > opts.tau && rounds < 16 {
        let spent = pair.spent();
        let surplus = budget - spent;
        if surplus <= 0.0 {
            exhausted = true;
            break;
        }
        // Grow geometrically so the stopping rule is revisited.
        let round_total = spent + surplus.min(spent);
        let model = SurplusModel { cov_alpha: report.cov_alpha, n_q: stage.ensemble.len() as u64, cov_pfl, n_l: lf_budget_calls };
        let (n_sq, n_sl) = allocate_surplus(round_total, spent, 0.0, pair.cost(Side::Hf), pair.cost(Side::Lf), &model)?;
        let steps = (n_sq as usize) / opts.demc.n_chains;
        let per_level = (n_sl as usize) / exploration.sus.n_levels.max(1);
        if steps == 0 && per_level < 100 {
            exhausted = true;
            break;
        }
        stage.extend(pair, dist, steps)?;
        if per_level >= 100 {
            extra += 1;
            let cfg = SusConfig { n_per_level: per_level, rng: opts.sus.rng.derive(1_000 + extra), ..opts.sus };
            let more = run_sus(|x| pair.lf(x), dist, &cfg)?;
            // Combine independent estimates weighted by LF sample size.
            let (n1, n2) = (lf_budget_calls as f64, more.total_lf_calls as f64);
            let w = n1 / (n1 + n2);
            let var = (w * cov_pfl * pfl).powi(2) + ((1.0 - w) * more.cov * more.pf).powi(2);
            pfl = w * pfl + (1.0 - w) * more.pf;
            cov_pfl = var.sqrt() / pfl;
            lf_budget_calls += more.total_lf_calls;
        }
        rounds += 1;
        report = cvis_report(pair, &exploration, &stage, pfl, cov_pfl, opts.balance_factor)?;
    }
    report.diagnostics.refinement_rounds = rounds;
    report.diagnostics.budget_exhausted = exhausted;
    Ok(report)
}
