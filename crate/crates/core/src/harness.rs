//! Experiment harness: config files, crude Monte Carlo oracle, replicated
//! trials with CSV output, and aggregate statistics.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    eacv_estimate, eacv_snis_estimate, mc_integrate_cs, mfis_estimate, mfis_snis_estimate, BaselineEstimate, EstimatorKind,
};
use crate::cvis::{cvis_report, explore, importance_stage, CvisReport, IsdMode};
use crate::demc::DemcConfig;
use crate::distribution::{JointInputDistribution, Marginal};
use crate::error::{Error, Result};
use crate::models::{example1_pair, indicator, shear_building_pair, Example1Config, ModelPair, ShearBuildingConfig, Side};
use crate::rng::RngStream;
use crate::subset_simulation::SusConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    Example1,
    Example2,
}

/// Per-trial sample counts. `sus` and `mc` are per subset level; the
/// importance sample is `chains x steps`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub sus: usize,
    pub mc: usize,
    pub chains: usize,
    pub steps: usize,
}

impl Allocation {
    pub fn preset(name: &str) -> Option<Self> {
        let a = |sus, mc, chains| Allocation { sus, mc, chains, steps: 400 };
        match name {
            "table2_cvis" => Some(a(10_000, 0, 25)),
            "table2_A" => Some(a(2_000, 8_000, 25)),
            "table2_B" => Some(a(5_000, 5_000, 25)),
            "table4" => Some(a(2_500, 2_500, 100)),
            _ => None,
        }
    }

    /// A preset name or `sus:N,mc:N,chains:N,steps:N`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(a) = Self::preset(s) {
            return Ok(a);
        }
        let mut out = Allocation { sus: 0, mc: 0, chains: 0, steps: 0 };
        let mut seen = [false; 4];
        for part in s.split(',') {
            let (k, v) =
                part.split_once(':').ok_or_else(|| Error::Config(format!("allocation '{s}' is neither a preset nor key:value list")))?;
            let v: usize = v.trim().parse().map_err(|_| Error::Config(format!("bad count in allocation: '{part}'")))?;
            let i = match k.trim() {
                "sus" => 0,
                "mc" => 1,
                "chains" => 2,
                "steps" => 3,
                other => return Err(Error::Config(format!("unknown allocation key '{other}'"))),
            };
            seen[i] = true;
            *[&mut out.sus, &mut out.mc, &mut out.chains, &mut out.steps][i] = v;
        }
        if !seen.iter().all(|&b| b) {
            return Err(Error::Config("explicit allocation needs sus, mc, chains and steps".into()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub benchmark: Benchmark,
    pub estimators: Vec<EstimatorKind>,
    pub example1: Example1Config,
    pub allocation: Allocation,
    pub n_trials: usize,
    pub base_seed: u64,
}

impl ExperimentConfig {
    /// Flat `key = value` format, `#` starts a comment, unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut benchmark = None;
        let mut estimators = vec![EstimatorKind::Cvis];
        let mut ex1 = Example1Config::default();
        let mut allocation = None;
        let mut n_trials = 100;
        let mut base_seed = 0;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |what: &str| Error::Config(format!("line {}: bad {what} '{v}'", lineno + 1));
            match k {
                "benchmark" => {
                    benchmark = Some(match v {
                        "example1" => Benchmark::Example1,
                        "example2" => Benchmark::Example2,
                        _ => return Err(Error::Config(format!("unknown benchmark '{v}'"))),
                    })
                }
                "estimators" => estimators = v.split(',').map(str::parse).collect::<Result<_>>()?,
                "delta" => ex1.delta = v.parse().map_err(|_| num("delta"))?,
                "sigma_eps" => ex1.sigma_eps = v.parse().map_err(|_| num("sigma_eps"))?,
                "noise_seed" => ex1.noise_seed = v.parse().map_err(|_| num("noise_seed"))?,
                "allocation" => allocation = Some(Allocation::parse(v)?),
                "n_trials" => n_trials = v.parse().map_err(|_| num("n_trials"))?,
                "base_seed" => base_seed = v.parse().map_err(|_| num("base_seed"))?,
                _ => return Err(Error::Config(format!("line {}: unknown key '{k}'", lineno + 1))),
            }
        }
        let benchmark = benchmark.ok_or_else(|| Error::Config("missing key 'benchmark'".into()))?;
        let allocation = allocation.unwrap_or_else(|| {
            let name = if benchmark == Benchmark::Example1 { "table2_cvis" } else { "table4" };
            Allocation::preset(name).expect("known preset")
        });
        let cfg = Self { benchmark, estimators, example1: ex1, allocation, n_trials, base_seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators selected".into()));
        }
        let a = &self.allocation;
        if a.sus == 0 || a.chains == 0 || a.steps == 0 {
            return Err(Error::Config(format!("allocation counts must be positive: {a:?}")));
        }
        let needs_cs = self.estimators.iter().any(|e| matches!(e, EstimatorKind::Mfis | EstimatorKind::Eacv));
        if needs_cs && a.mc == 0 {
            return Err(Error::Config("mfis/eacv need a Monte Carlo budget for C_S (mc > 0)".into()));
        }
        if !(self.example1.sigma_eps >= 0.0) {
            return Err(Error::Config("sigma_eps must be >= 0".into()));
        }
        Ok(())
    }

    pub fn setup(&self) -> Result<(ModelPair, JointInputDistribution)> {
        benchmark_setup(self.benchmark, self.example1)
    }
}

/// Shear-building inputs: five standard normal load shapes and `omega_p ~ U(5, 50)` rad/s.
pub fn example2_distribution() -> JointInputDistribution {
    let mut m = vec![Marginal::standard_normal(); 5];
    m.push(Marginal::Uniform { lo: 5.0, hi: 50.0 });
    JointInputDistribution::new(m).expect("valid marginals")
}

pub fn benchmark_setup(b: Benchmark, ex1: Example1Config) -> Result<(ModelPair, JointInputDistribution)> {
    match b {
        Benchmark::Example1 => Ok((example1_pair(ex1)?, JointInputDistribution::standard_normal(2)?)),
        Benchmark::Example2 => Ok((shear_building_pair(ShearBuildingConfig::default())?, example2_distribution())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub pf: f64,
    pub pfl: f64,
    pub p_hl: f64,
    pub rho_hl: f64,
    pub kappa: f64,
    pub pf_std_err: f64,
    pub pfl_std_err: f64,
    pub kappa_std_err: f64,
    pub n: u64,
}

const ORACLE_CHUNK: u64 = 1 << 16;

/// Crude Monte Carlo of both indicators on one shared sample. Chunk `k`
/// draws from `rng.derive(k)`, so the result does not depend on thread count.
pub fn mc_oracle(pair: &ModelPair, dist: &JointInputDistribution, n: u64, rng: &RngStream) -> Result<OracleResult> {
    if n == 0 {
        return Err(Error::InvalidParameter("oracle needs n > 0".into()));
    }
    let chunks = n.div_ceil(ORACLE_CHUNK);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let m = ORACLE_CHUNK.min(n - k * ORACLE_CHUNK);
            let mut g = rng.derive(k).generator();
            let mut x = vec![0.0; dist.dim()];
            let mut c = [0u64; 3];
            for _ in 0..m {
                dist.sample_into(&mut g, &mut x);
                let h = indicator(pair.evaluate(Side::Hf, &x)?);
                let l = indicator(pair.evaluate(Side::Lf, &x)?);
                c[0] += u64::from(h);
                c[1] += u64::from(l);
                c[2] += u64::from(h && l);
            }
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let [nh, nl, nhl] = counts.iter().fold([0u64; 3], |a, c| [a[0] + c[0], a[1] + c[1], a[2] + c[2]]);
    if nh == 0 {
        return Err(Error::OracleNoFailures { n });
    }
    let nf = n as f64;
    let (pf, pfl, p_hl) = (nh as f64 / nf, nl as f64 / nf, nhl as f64 / nf);
    let rho_hl = (p_hl - pf * pfl) / (pf * (1.0 - pf) * pfl * (1.0 - pfl)).sqrt();
    let kappa = p_hl / pf;
    Ok(OracleResult {
        pf,
        pfl,
        p_hl,
        rho_hl,
        kappa,
        pf_std_err: (pf * (1.0 - pf) / nf).sqrt(),
        pfl_std_err: (pfl * (1.0 - pfl) / nf).sqrt(),
        kappa_std_err: (kappa * (1.0 - kappa) / nh as f64).sqrt(),
        n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial_id: u64,
    pub estimator: EstimatorKind,
    pub pf_hat: f64,
    pub cov_hat: f64,
    pub alpha_hat: f64,
    pub kappa_hat: f64,
    pub hf_calls: u64,
    pub lf_calls: u64,
    pub seed: u64,
    /// `ok`, or the error that ended the trial.
    pub status: String,
}

impl TrialRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    fn failed(trial_id: u64, estimator: EstimatorKind, seed: u64, calls: (u64, u64), e: &Error) -> Self {
        Self {
            trial_id,
            estimator,
            pf_hat: f64::NAN,
            cov_hat: f64::NAN,
            alpha_hat: f64::NAN,
            kappa_hat: f64::NAN,
            hf_calls: calls.0,
            lf_calls: calls.1,
            seed,
            status: format!("error: {e}"),
        }
    }
}

/// Rows from one trial plus the CVIS report when CVIS ran successfully.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub rows: Vec<TrialRow>,
    pub report: Option<CvisReport>,
}

fn calls(pair: &ModelPair) -> (u64, u64) {
    (pair.calls(Side::Hf), pair.calls(Side::Lf))
}

/// One trial with streams derived from `(base_seed, trial_id)`. CVIS and the
/// self-normalised variants share one pipeline that spends the whole LF
/// exploration budget on subset simulation; MFIS and E-ACV share a second
/// pipeline that splits it between subset simulation and Monte Carlo for `C_S`.
pub fn run_trial(cfg: &ExperimentConfig, trial_id: u64) -> Result<TrialOutcome> {
    let (pair, dist) = cfg.setup()?;
    let root = RngStream::new(cfg.base_seed, trial_id);
    let a = cfg.allocation;
    let seed = cfg.base_seed;
    let mut rows = Vec::new();
    let mut report = None;
    let has = |k: EstimatorKind| cfg.estimators.contains(&k);

    let shared: Vec<EstimatorKind> =
        [EstimatorKind::Cvis, EstimatorKind::MfisSnis, EstimatorKind::EacvSnis].into_iter().filter(|k| has(*k)).collect();
    if !shared.is_empty() {
        let p = pair.fresh();
        let rng = root.derive(1);
        let sus = SusConfig::new(a.sus + a.mc, rng.derive(1));
        let demc = DemcConfig::new(a.chains, a.steps, &dist, rng.derive(2));
        let staged =
            explore(&p, &dist, &sus, IsdMode::Auto, None).and_then(|ex| importance_stage(&p, &dist, &ex, &demc).map(|st| (ex, st)));
        match staged {
            Err(e) => rows.extend(shared.iter().map(|&k| TrialRow::failed(trial_id, k, seed, calls(&p), &e))),
            Ok((ex, st)) => {
                let c = calls(&p);
                let var_pfl = (ex.sus.cov * ex.sus.pf).powi(2);
                for &k in &shared {
                    let row = match k {
                        EstimatorKind::Cvis => cvis_report(&p, &ex, &st, ex.sus.pf, ex.sus.cov, 1.25).map(|r| {
                            let row = TrialRow {
                                trial_id,
                                estimator: k,
                                pf_hat: r.pf,
                                cov_hat: r.cov_pf,
                                alpha_hat: r.alpha,
                                kappa_hat: r.kappa,
                                hf_calls: c.0,
                                lf_calls: c.1,
                                seed,
                                status: "ok".into(),
                            };
                            report = Some(r);
                            row
                        }),
                        EstimatorKind::MfisSnis => mfis_snis_estimate(&st.ensemble, &st.hf).map(|b| baseline_row(trial_id, k, seed, c, b)),
                        _ => eacv_snis_estimate(&st.ensemble, &st.hf, ex.sus.pf, var_pfl).map(|b| baseline_row(trial_id, k, seed, c, b)),
                    };
                    rows.push(row.unwrap_or_else(|e| TrialRow::failed(trial_id, k, seed, c, &e)));
                }
            }
        }
    }

    let split: Vec<EstimatorKind> = [EstimatorKind::Mfis, EstimatorKind::Eacv].into_iter().filter(|k| has(*k)).collect();
    if !split.is_empty() {
        let p = pair.fresh();
        let rng = root.derive(2);
        let sus = SusConfig::new(a.sus, rng.derive(1));
        let demc = DemcConfig::new(a.chains, a.steps, &dist, rng.derive(2));
        let staged = explore(&p, &dist, &sus, IsdMode::Auto, None).and_then(|ex| {
            let st = importance_stage(&p, &dist, &ex, &demc)?;
            let cs = mc_integrate_cs(&p, &dist, ex.beta, a.mc * ex.sus.n_levels, &rng.derive(3))?;
            Ok((ex, st, cs))
        });
        match staged {
            Err(e) => rows.extend(split.iter().map(|&k| TrialRow::failed(trial_id, k, seed, calls(&p), &e))),
            Ok((ex, st, cs)) => {
                let c = calls(&p);
                let var_pfl = (ex.sus.cov * ex.sus.pf).powi(2);
                for &k in &split {
                    let est = if k == EstimatorKind::Mfis {
                        mfis_estimate(&st.ensemble, &st.hf, &cs)
                    } else {
                        eacv_estimate(&st.ensemble, &st.hf, &cs, ex.sus.pf, var_pfl)
                    };
                    rows.push(
                        est.map(|b| baseline_row(trial_id, k, seed, c, b)).unwrap_or_else(|e| TrialRow::failed(trial_id, k, seed, c, &e)),
                    );
                }
            }
        }
    }
    // Keep the configured estimator order.
    rows.sort_by_key(|r| cfg.estimators.iter().position(|k| *k == r.estimator));
    Ok(TrialOutcome { rows, report })
}

fn baseline_row(trial_id: u64, estimator: EstimatorKind, seed: u64, c: (u64, u64), b: BaselineEstimate) -> TrialRow {
    TrialRow {
        trial_id,
        estimator,
        pf_hat: b.pf,
        cov_hat: b.cov,
        alpha_hat: b.alpha.unwrap_or(f64::NAN),
        kappa_hat: f64::NAN,
        hf_calls: c.0,
        lf_calls: c.1,
        seed,
        status: "ok".into(),
    }
}

pub fn read_rows(path: &Path) -> Result<Vec<TrialRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Run all trials, appending rows to `out` as each batch of trials finishes.
/// An existing file is resumed after its last complete trial. CVIS reports go
/// to `reports` as JSON lines when given.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>, reports: Option<&Path>) -> Result<Vec<TrialRow>> {
    cfg.validate()?;
    let per_trial = cfg.estimators.len();
    let mut rows = match out {
        Some(p) if p.exists() && std::fs::metadata(p)?.len() > 0 => read_rows(p)?,
        _ => Vec::new(),
    };
    let mut done = rows.len() / per_trial;
    rows.truncate(done * per_trial);
    if let Some(p) = out {
        // Rewrite to drop any partial trial left by an interrupted run.
        let mut w = csv::Writer::from_path(p)?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    let mut writer = match out {
        Some(p) if !rows.is_empty() => {
            Some(csv::WriterBuilder::new().has_headers(false).from_writer(OpenOptions::new().append(true).open(p)?))
        }
        Some(p) => Some(csv::Writer::from_path(p)?),
        None => None,
    };
    let mut report_file = match reports {
        Some(p) => Some(OpenOptions::new().create(true).append(true).open(p)?),
        None => None,
    };
    let batch = rayon::current_num_threads().max(1) * 2;
    while done < cfg.n_trials {
        let ids: Vec<u64> = (done as u64..(done + batch).min(cfg.n_trials) as u64).collect();
        let outcomes = ids.par_iter().map(|&i| run_trial(cfg, i)).collect::<Result<Vec<_>>>()?;
        for o in outcomes {
            if let Some(w) = writer.as_mut() {
                for r in &o.rows {
                    w.serialize(r)?;
                }
                w.flush()?;
            }
            if let (Some(f), Some(rep)) = (report_file.as_mut(), &o.report) {
                writeln!(f, "{}", serde_json::to_string(rep)?)?;
            }
            rows.extend(o.rows);
        }
        done += ids.len();
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialStats {
    pub mean_pf: f64,
    pub sample_cov: f64,
    /// Root mean squared error divided by the truth.
    pub rmse: f64,
    pub mean_cov_hat: f64,
    pub cov_of_cov_hat: f64,
    pub n_ok: usize,
    pub n_failed: usize,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// Statistics over the successful rows of one estimator.
pub fn trial_statistics(rows: &[TrialRow], estimator: EstimatorKind, truth: f64) -> Result<TrialStats> {
    let mine: Vec<&TrialRow> = rows.iter().filter(|r| r.estimator == estimator).collect();
    let ok: Vec<&TrialRow> = mine.iter().copied().filter(|r| r.is_ok()).collect();
    if ok.len() < 2 {
        return Err(Error::InsufficientData(format!("{estimator}: {} successful trials of {}, need at least 2", ok.len(), mine.len())));
    }
    let pf: Vec<f64> = ok.iter().map(|r| r.pf_hat).collect();
    let cov: Vec<f64> = ok.iter().map(|r| r.cov_hat).filter(|c| c.is_finite()).collect();
    let (mean_pf, sd) = mean_std(&pf);
    let mse = pf.iter().map(|p| (p - truth).powi(2)).sum::<f64>() / pf.len() as f64;
    let (mean_cov_hat, sd_cov) = if cov.len() >= 2 { mean_std(&cov) } else { (f64::NAN, f64::NAN) };
    Ok(TrialStats {
        mean_pf,
        sample_cov: sd / mean_pf,
        rmse: mse.sqrt() / truth,
        mean_cov_hat,
        cov_of_cov_hat: sd_cov / mean_cov_hat,
        n_ok: ok.len(),
        n_failed: mine.len() - ok.len(),
    })
}

pub fn write_rows(path: &Path, rows: &[TrialRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
