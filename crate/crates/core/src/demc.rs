//! Synchronous Differential Evolution Markov Chain sampling.
//!
//! All chains advance together: generation `t + 1` proposes from the states
//! of generation `t` only, and chain `i` draws every random number from its own
//! stream. Results are therefore independent of how proposals are spread over
//! threads.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::JointInputDistribution;
use crate::error::{Error, Result};
use crate::models::indicator;
use crate::rng::RngStream;
use crate::smoothing::{Beta, SmoothedIsd};
use crate::subset_simulation::FailureSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemcConfig {
    pub n_chains: usize,
    pub n_steps: usize,
    pub gamma: f64,
    /// Per-coordinate half-width of the uniform jitter.
    pub jitter: Vec<f64>,
    pub burn_in: usize,
    pub rng: RngStream,
}

impl DemcConfig {
    /// Defaults: `gamma = 2.38 / sqrt(2 d)`, jitter `1e-6` input standard deviations, no burn-in.
    pub fn new(n_chains: usize, n_steps: usize, dist: &JointInputDistribution, rng: RngStream) -> Self {
        let d = dist.dim() as f64;
        Self {
            n_chains,
            n_steps,
            gamma: 2.38 / (2.0 * d).sqrt(),
            jitter: dist.std_devs().iter().map(|s| 1e-6 * s).collect(),
            burn_in: 0,
            rng,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.n_chains < 4 || self.n_steps < 1 || !(self.gamma > 0.0) || self.jitter.len() != dim {
            return Err(Error::InvalidParameter(format!(
                "DE-MC needs >= 4 chains, >= 1 step, gamma > 0 and a jitter per coordinate; got C={}, T={}, gamma={}, jitter dims {} (d = {dim})",
                self.n_chains,
                self.n_steps,
                self.gamma,
                self.jitter.len()
            )));
        }
        if self.jitter.iter().any(|j| !(*j >= 0.0)) {
            return Err(Error::InvalidParameter("jitter must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct State<S> {
    pub x: Vec<f64>,
    pub log_target: f64,
    pub aux: S,
}

/// Resumable interacting-chain sampler. `S` is whatever the target returns
/// alongside its log-density (for the ISD, the LF response).
#[derive(Debug, Clone)]
pub struct DemcSampler<S> {
    gamma: f64,
    jitter: Vec<f64>,
    current: Vec<State<S>>,
    rngs: Vec<ChaCha8Rng>,
    kept: Vec<Vec<State<S>>>,
    accepted: u64,
    proposed: u64,
}

impl<S: Clone + Send + Sync> DemcSampler<S> {
    /// Chain `i` uses stream `cfg.rng.derive(i)`.
    pub fn new(seeds: Vec<State<S>>, cfg: &DemcConfig) -> Result<Self> {
        if seeds.len() != cfg.n_chains {
            return Err(Error::InvalidParameter(format!("{} seeds supplied for {} chains", seeds.len(), cfg.n_chains)));
        }
        let dim = seeds.first().map_or(0, |s| s.x.len());
        cfg.validate(dim)?;
        if let Some(index) = seeds.iter().position(|s| !(s.log_target > f64::NEG_INFINITY)) {
            return Err(Error::InvalidSeed { index });
        }
        Ok(Self {
            gamma: cfg.gamma,
            jitter: cfg.jitter.clone(),
            rngs: (0..cfg.n_chains as u64).map(|i| cfg.rng.derive(i).generator()).collect(),
            kept: vec![Vec::new(); cfg.n_chains],
            current: seeds,
            accepted: 0,
            proposed: 0,
        })
    }

    /// Advance every chain `steps` generations. When `keep` is true the new
    /// states are appended to the record and counted in the acceptance rate.
    pub fn advance<F>(&mut self, target: &F, steps: usize, keep: bool) -> Result<()>
    where
        F: Fn(&[f64]) -> Result<(f64, S)> + Sync,
    {
        let c = self.current.len();
        for _ in 0..steps {
            let prev = &self.current;
            let (gamma, jitter) = (self.gamma, &self.jitter);
            let next: Vec<(State<S>, bool)> = self
                .rngs
                .par_iter_mut()
                .enumerate()
                .map(|(i, rng)| {
                    let (a, b) = pick_pair(i, c, rng);
                    let xi = &prev[i];
                    let z: Vec<f64> = (0..xi.x.len())
                        .map(|k| {
                            let e = jitter[k] * (2.0 * rng.random::<f64>() - 1.0);
                            xi.x[k] + gamma * (prev[a].x[k] - prev[b].x[k]) + e
                        })
                        .collect();
                    let u: f64 = rng.random();
                    let (lt, aux) = target(&z)?;
                    if lt.is_nan() || lt == f64::INFINITY {
                        return Err(Error::NonFiniteTarget { value: lt, x: z });
                    }
                    if u.ln() < lt - xi.log_target {
                        Ok((State { x: z, log_target: lt, aux }, true))
                    } else {
                        Ok((xi.clone(), false))
                    }
                })
                .collect::<Result<_>>()?;
            let mut states = Vec::with_capacity(c);
            for (i, (s, acc)) in next.into_iter().enumerate() {
                if keep {
                    self.proposed += 1;
                    self.accepted += u64::from(acc);
                    self.kept[i].push(s.clone());
                }
                states.push(s);
            }
            self.current = states;
        }
        Ok(())
    }

    /// Kept states, one vector per chain.
    pub fn states(&self) -> &[Vec<State<S>>] {
        &self.kept
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Two distinct chains other than `i`, uniformly.
fn pick_pair<R: Rng>(i: usize, c: usize, rng: &mut R) -> (usize, usize) {
    let mut a = rng.random_range(0..c - 1);
    if a >= i {
        a += 1;
    }
    let (lo, hi) = if a < i { (a, i) } else { (i, a) };
    let mut b = rng.random_range(0..c - 2);
    if b >= lo {
        b += 1;
    }
    if b >= hi {
        b += 1;
    }
    (a, b)
}

/// Run DE-MC on an arbitrary log-target. Seeds are evaluated once each.
pub fn demc_run<F>(log_target: F, seeds: &[Vec<f64>], cfg: &DemcConfig) -> Result<DemcSampler<()>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let states = seeds.iter().map(|x| Ok(State { x: x.clone(), log_target: log_target(x)?, aux: () })).collect::<Result<Vec<_>>>()?;
    let mut s = DemcSampler::new(states, cfg)?;
    let t = |z: &[f64]| Ok((log_target(z)?, ()));
    s.advance(&t, cfg.burn_in, false)?;
    s.advance(&t, cfg.n_steps, true)?;
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub lf_value: f64,
    pub s_l_value: f64,
    pub i_l: bool,
}

/// `C x T` samples from the smoothed ISD. Points live in `points[c][t]`,
/// everything the estimators need in `records[c][t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainEnsemble {
    pub points: Vec<Vec<Vec<f64>>>,
    pub records: Vec<Vec<Record>>,
    pub acceptance_rate: f64,
    pub beta: Beta,
}

impl ChainEnsemble {
    pub fn from_lf_states(states: &[Vec<State<f64>>], beta: Beta, acceptance_rate: f64) -> Self {
        let points = states.iter().map(|ch| ch.iter().map(|s| s.x.clone()).collect()).collect();
        let records = states
            .iter()
            .map(|ch| ch.iter().map(|s| Record { lf_value: s.aux, s_l_value: beta.s_l(s.aux), i_l: indicator(s.aux) }).collect())
            .collect();
        Self { points, records, acceptance_rate, beta }
    }

    pub fn n_chains(&self) -> usize {
        self.records.len()
    }

    pub fn n_steps(&self) -> usize {
        self.records.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.records.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-record statistic laid out chain by chain.
    pub fn map<F: Fn(&Record) -> f64>(&self, f: F) -> Vec<Vec<f64>> {
        self.records.iter().map(|ch| ch.iter().map(&f).collect()).collect()
    }
}

/// DE-MC targeting `S_L f_X`, seeded from subset-simulation failure samples
/// whose LF responses are already known. Costs one LF call per in-support proposal.
pub fn sample_isd(isd: &SmoothedIsd<'_>, seeds: &[FailureSample], cfg: &DemcConfig) -> Result<(ChainEnsemble, DemcSampler<f64>)> {
    let states = seeds
        .iter()
        .map(|s| {
            let lt = isd.beta.log_s_l(s.lf_value) + isd.base.log_density(&s.x)?;
            Ok(State { x: s.x.clone(), log_target: lt, aux: s.lf_value })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sampler = DemcSampler::new(states, cfg)?;
    let target = isd_target(isd);
    sampler.advance(&target, cfg.burn_in, false)?;
    sampler.advance(&target, cfg.n_steps, true)?;
    let ens = ChainEnsemble::from_lf_states(sampler.states(), isd.beta, sampler.acceptance_rate());
    Ok((ens, sampler))
}

pub(crate) fn isd_target<'a>(isd: &'a SmoothedIsd<'a>) -> impl Fn(&[f64]) -> Result<(f64, f64)> + Sync + 'a {
    move |z: &[f64]| {
        let (lt, lf) = isd.log_isd_with_lf(z)?;
        Ok((lt, lf.unwrap_or(f64::NAN)))
    }
}
