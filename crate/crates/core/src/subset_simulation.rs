//! Subset Simulation with component-wise modified Metropolis sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distribution::JointInputDistribution;
use crate::error::{Error, Result};
use crate::models::indicator;
use crate::rng::RngStream;
use crate::smoothing::Beta;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SusConfig {
    pub n_per_level: usize,
    pub p0: f64,
    pub max_levels: usize,
    pub rng: RngStream,
    /// Half-width of the uniform component proposal in marginal standard deviations.
    pub mcmc_scale: f64,
}

impl SusConfig {
    pub fn new(n_per_level: usize, rng: RngStream) -> Self {
        Self { n_per_level, p0: 0.1, max_levels: 20, rng, mcmc_scale: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.n_per_level >= 100
            && self.p0 > 0.0
            && self.p0 < 1.0
            && self.p0 * self.n_per_level as f64 >= 10.0
            && self.max_levels >= 1
            && self.mcmc_scale > 0.0
            && self.mcmc_scale.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "subset simulation needs n >= 100, p0 in (0,1) with p0*n >= 10, max_levels >= 1 and mcmc_scale > 0; got {self:?}"
            )))
        }
    }

    fn seeds_per_level(&self) -> usize {
        (self.p0 * self.n_per_level as f64).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureSample {
    pub x: Vec<f64>,
    pub lf_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SusResult {
    pub pf: f64,
    pub cov: f64,
    /// `b_0 = inf > b_1 > ... > b_M = 0`.
    pub thresholds: Vec<f64>,
    pub cond_probs: Vec<f64>,
    /// Squared CoV contribution of each conditional probability.
    pub level_cov2: Vec<f64>,
    pub n_levels: usize,
    pub failure_samples: Vec<FailureSample>,
    pub total_lf_calls: u64,
}

impl SusResult {
    /// Threshold of the last intermediate level, `b_{M-1}` (`inf` for a single level).
    pub fn last_intermediate_threshold(&self) -> f64 {
        self.thresholds[self.n_levels - 1]
    }

    /// Conditional probability of the terminal level.
    pub fn last_cond_prob(&self) -> f64 {
        self.cond_probs[self.n_levels - 1]
    }
}

struct Level {
    xs: Vec<Vec<f64>>,
    gs: Vec<f64>,
    /// Contiguous chain lengths in `xs`; empty for i.i.d. samples.
    chains: Vec<usize>,
}

/// Estimate `P(lf(X) <= 0)` through nested conditional levels.
///
/// Every level draws `n_per_level` fresh states, so the LF is called exactly
/// `n_per_level * n_levels` times.
pub fn run_sus<F>(lf: F, dist: &JointInputDistribution, cfg: &SusConfig) -> Result<SusResult>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    cfg.validate()?;
    let n = cfg.n_per_level;
    let nc = cfg.seeds_per_level();
    let mut g = cfg.rng.generator();
    let mut calls = 0u64;

    let xs = dist.sample(&cfg.rng.derive(0), n);
    let gs = xs
        .iter()
        .map(|x| {
            calls += 1;
            lf(x)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut level = Level { xs, gs, chains: Vec::new() };

    let mut thresholds = vec![f64::INFINITY];
    let mut cond_probs = Vec::new();
    let mut level_cov2 = Vec::new();

    loop {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| level.gs[a].total_cmp(&level.gs[b]));
        let n_fail = level.gs.iter().filter(|&&v| indicator(v)).count();

        if n_fail >= nc {
            let hits: Vec<bool> = level.gs.iter().map(|&v| indicator(v)).collect();
            let p = n_fail as f64 / n as f64;
            level_cov2.push(level_cov_squared(&hits, &level.chains, p));
            cond_probs.push(p);
            thresholds.push(0.0);
            let failure_samples = level
                .xs
                .into_iter()
                .zip(level.gs)
                .filter(|(_, v)| indicator(*v))
                .map(|(x, lf_value)| FailureSample { x, lf_value })
                .collect();
            let pf = cond_probs.iter().product();
            let cov = level_cov2.iter().sum::<f64>().sqrt();
            return Ok(SusResult {
                pf,
                cov,
                n_levels: cond_probs.len(),
                thresholds,
                cond_probs,
                level_cov2,
                failure_samples,
                total_lf_calls: calls,
            });
        }

        let b = 0.5 * (level.gs[order[nc - 1]] + level.gs[order[nc]]);
        if cond_probs.len() + 1 >= cfg.max_levels {
            return Err(Error::MaxLevels {
                levels: cond_probs.len() + 1,
                last_threshold: b,
                partial_pf: cond_probs.iter().product::<f64>() * nc as f64 / n as f64,
            });
        }
        if !(b < *thresholds.last().unwrap()) {
            return Err(Error::SusStalled { threshold: b });
        }

        let mut rank = vec![usize::MAX; n];
        for (r, &i) in order.iter().enumerate() {
            rank[i] = r;
        }
        let hits: Vec<bool> = rank.iter().map(|&r| r < nc).collect();
        let p = nc as f64 / n as f64;
        level_cov2.push(level_cov_squared(&hits, &level.chains, p));
        cond_probs.push(p);
        thresholds.push(b);

        let seeds: Vec<(Vec<f64>, f64)> = order[..nc].iter().map(|&i| (level.xs[i].clone(), level.gs[i])).collect();
        level = conditional_level(&lf, dist, cfg, &seeds, b, n, &mut g, &mut calls)?;
    }
}

/// Grow one modified Metropolis chain per seed; lengths differ by at most one.
#[allow(clippy::too_many_arguments)]
fn conditional_level<F, R>(
    lf: &F,
    dist: &JointInputDistribution,
    cfg: &SusConfig,
    seeds: &[(Vec<f64>, f64)],
    threshold: f64,
    n: usize,
    rng: &mut R,
    calls: &mut u64,
) -> Result<Level>
where
    F: Fn(&[f64]) -> Result<f64>,
    R: Rng,
{
    let nc = seeds.len();
    let widths: Vec<f64> = dist.std_devs().iter().map(|s| s * cfg.mcmc_scale).collect();
    let mut xs = Vec::with_capacity(n);
    let mut gs = Vec::with_capacity(n);
    let mut chains = Vec::with_capacity(nc);
    for (c, (x0, g0)) in seeds.iter().enumerate() {
        let len = n / nc + usize::from(c < n % nc);
        let (mut x, mut gx) = (x0.clone(), *g0);
        for _ in 0..len {
            let mut cand = x.clone();
            for (k, m) in dist.marginals().iter().enumerate() {
                let xi = x[k] + widths[k] * (2.0 * rng.random::<f64>() - 1.0);
                let log_ratio = m.log_density(xi) - m.log_density(x[k]);
                let u: f64 = rng.random();
                if u.ln() < log_ratio {
                    cand[k] = xi;
                }
            }
            *calls += 1;
            let gc = lf(&cand)?;
            if gc <= threshold {
                x = cand;
                gx = gc;
            }
            xs.push(x.clone());
            gs.push(gx);
        }
        chains.push(len);
    }
    Ok(Level { xs, gs, chains })
}

/// Squared CoV of a level's conditional probability, inflated by the
/// lag-correlation of the hit indicator along each chain.
fn level_cov_squared(hits: &[bool], chains: &[usize], p: f64) -> f64 {
    let n = hits.len() as f64;
    let base = (1.0 - p) / (p * n);
    if chains.is_empty() || p >= 1.0 {
        return base;
    }
    let r0 = p * (1.0 - p);
    let max_len = *chains.iter().max().unwrap();
    let mean_len = n / chains.len() as f64;
    let mut gamma = 0.0;
    for lag in 1..max_len {
        let (mut sum, mut pairs) = (0.0, 0usize);
        let mut start = 0;
        for &len in chains {
            for l in 0..len.saturating_sub(lag) {
                if hits[start + l] && hits[start + l + lag] {
                    sum += 1.0;
                }
                pairs += 1;
            }
            start += len;
        }
        if pairs == 0 {
            break;
        }
        let rho = (sum / pairs as f64 - p * p) / r0;
        gamma += 2.0 * (1.0 - lag as f64 / mean_len).max(0.0) * rho;
    }
    base * (1.0 + gamma)
}

/// Draw `n_chains` DE-MC seeds from the terminal failure samples.
///
/// Terminal samples follow `f_X` restricted to the last intermediate level,
/// and every one lies in the LF failure set, so the target-to-proposal weight
/// reduces to `S_L(L(x), beta)`. Draws are made without replacement while
/// candidates remain, then with replacement.
pub fn select_seeds(res: &SusResult, n_chains: usize, beta: Beta, rng: &RngStream) -> Result<Vec<FailureSample>> {
    if n_chains < 4 {
        return Err(Error::InvalidParameter(format!("need at least 4 chains, got {n_chains}")));
    }
    let cands = &res.failure_samples;
    if cands.is_empty() {
        return Err(Error::NoFailureSamples);
    }
    let weights: Vec<f64> = cands.iter().map(|c| beta.s_l(c.lf_value)).collect();
    let picks = weighted_urn(&weights, n_chains, &mut rng.generator());
    Ok(picks.into_iter().map(|i| cands[i].clone()).collect())
}

fn pick<R: Rng>(weights: &[f64], live: &[bool], rng: &mut R) -> usize {
    let total: f64 = weights.iter().zip(live).filter(|(_, &l)| l).map(|(w, _)| *w).sum();
    let live_idx = || (0..weights.len()).filter(|&i| live[i]);
    if !(total > 0.0) {
        let k = live_idx().count();
        return live_idx().nth(rng.random_range(0..k)).unwrap();
    }
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for i in live_idx() {
        last = i;
        if u < weights[i] {
            return i;
        }
        u -= weights[i];
    }
    last
}

pub(crate) fn weighted_urn<R: Rng>(weights: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    let mut live = vec![true; weights.len()];
    let all = vec![true; weights.len()];
    (0..n)
        .map(|k| {
            if k < weights.len() {
                let i = pick(weights, &live, rng);
                live[i] = false;
                i
            } else {
                pick(weights, &all, rng)
            }
        })
        .collect()
}
