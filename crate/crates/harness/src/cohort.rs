//! Head-to-head cohort simulations and their summary metrics.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use deepcat_core::{derive_seed, seeded_rng, ItemBank, SunPosterior};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::selector::Selector;
use crate::session::{run_session, PosteriorSummary, SessionConfig, SessionRecord, SimulatedExaminee};

pub const REPORT_VERSION: u32 = 1;

/// Win-share tie tolerance on squared errors.
const WIN_TIE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub session: SessionConfig,
    pub n_examinees: usize,
    /// Test lengths for the MSE tables.
    pub lengths: Vec<usize>,
    /// Test length at which win shares are computed.
    pub reference_length: usize,
    /// Also compare against the posterior given responses to every item.
    pub oracle: bool,
    pub oracle_samples: usize,
    pub seed: u64,
    /// Worker threads; 0 uses the available parallelism.
    pub threads: usize,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            session: SessionConfig::default(),
            n_examinees: 500,
            lengths: vec![10, 20, 30, 40, 50],
            reference_length: 20,
            oracle: false,
            oracle_samples: 1000,
            seed: 0,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthMse {
    pub length: usize,
    /// Per factor.
    pub mse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleMse {
    pub length: usize,
    pub mean: Vec<f64>,
    pub median: Vec<f64>,
    pub q25: Vec<f64>,
    pub q75: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureSummary {
    pub mean: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorReport {
    pub selector: String,
    pub avg_termination: f64,
    /// `completion_curve[t]`: share of sessions finished after at most `t` items.
    pub completion_curve: Vec<f64>,
    pub mse_by_length: Vec<LengthMse>,
    /// Per factor; shares across selectors sum to 1.
    pub win_shares: Vec<f64>,
    /// Per item: share of sessions that administered it.
    pub exposure: Vec<f64>,
    pub exposure_summary: ExposureSummary,
    pub seconds_per_item: f64,
    pub oracle_mse: Vec<OracleMse>,
    pub incomplete: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub version: u32,
    pub n_examinees: usize,
    pub n_items: usize,
    pub n_factors: usize,
    pub horizon: usize,
    pub reference_length: usize,
    pub selectors: Vec<SelectorReport>,
}

impl CohortReport {
    pub fn selector(&self, id: &str) -> Option<&SelectorReport> {
        self.selectors.iter().find(|s| s.selector == id)
    }
}

#[derive(Debug, Clone)]
pub struct CohortRun {
    pub report: CohortReport,
    /// `sessions[i][s]`: examinee `i` under selector `s`.
    pub sessions: Vec<Vec<SessionRecord>>,
    pub oracle: Vec<Option<PosteriorSummary>>,
}

/// Posterior after responses to every item of the bank, in bank order.
pub fn oracle_posterior(bank: &ItemBank, responses: &[u8]) -> Result<SunPosterior> {
    if responses.len() != bank.n_items() {
        return Err(HarnessError::InvalidConfig(format!(
            "oracle needs {} responses, got {}",
            bank.n_items(),
            responses.len()
        )));
    }
    let mut post = SunPosterior::prior(bank.n_factors());
    for (j, &y) in responses.iter().enumerate() {
        post = post.update_item(bank, j, y)?;
    }
    Ok(post)
}

fn examinee_seed(seed: u64, i: usize) -> u64 {
    derive_seed(seed, i as u64)
}

type ExamineeResult = (Vec<SessionRecord>, Option<PosteriorSummary>);

fn run_examinee(bank: &Arc<ItemBank>, selectors: &[Selector], cfg: &CohortConfig, i: usize) -> Result<ExamineeResult> {
    let ex_seed = examinee_seed(cfg.seed, i);
    let examinee = SimulatedExaminee::draw(bank, ex_seed);
    let session_cfg = SessionConfig {
        seed: derive_seed(ex_seed, 1),
        ..cfg.session.clone()
    };
    let mut records = Vec::with_capacity(selectors.len());
    for sel in selectors {
        let mut responder = examinee.clone();
        records.push(run_session(bank, sel, &mut responder, &session_cfg, i)?);
    }
    let oracle = if cfg.oracle {
        let post = oracle_posterior(bank, examinee.all_responses())?;
        let s = post.sample(cfg.oracle_samples, &mut seeded_rng(derive_seed(ex_seed, 2)))?;
        Some(PosteriorSummary::from_members(&[s])?)
    } else {
        None
    };
    Ok((records, oracle))
}

/// Simulate `cfg.n_examinees` examinees under every selector with common
/// random numbers and summarise.
pub fn run_cohort(bank: &Arc<ItemBank>, selectors: &[Selector], cfg: &CohortConfig) -> Result<CohortRun> {
    if cfg.n_examinees == 0 {
        return Err(HarnessError::InvalidConfig("cohort needs at least one examinee".into()));
    }
    if selectors.is_empty() {
        return Err(HarnessError::InvalidConfig("cohort needs at least one selector".into()));
    }
    cfg.session.validate(bank)?;
    let threads = match cfg.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        t => t,
    }
    .min(cfg.n_examinees);

    let next = AtomicUsize::new(0);
    let mut results: Vec<(usize, Result<ExamineeResult>)> = std::thread::scope(|scope| {
        let workers: Vec<_> = (0..threads)
            .map(|_| {
                scope.spawn(|| {
                    let mut out = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= cfg.n_examinees {
                            break;
                        }
                        out.push((i, run_examinee(bank, selectors, cfg, i)));
                    }
                    out
                })
            })
            .collect();
        workers
            .into_iter()
            .flat_map(|w| w.join().expect("cohort worker panicked"))
            .collect()
    });
    results.sort_by_key(|(i, _)| *i);
    let mut sessions = Vec::with_capacity(cfg.n_examinees);
    let mut oracle = Vec::with_capacity(cfg.n_examinees);
    for (_, r) in results {
        let (s, o) = r?;
        sessions.push(s);
        oracle.push(o);
    }
    let report = summarize(bank, selectors, cfg, &sessions, &oracle);
    Ok(CohortRun {
        report,
        sessions,
        oracle,
    })
}

fn quantile_of(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    deepcat_core::posterior::quantile_sorted(&v, p)
}

/// Reduce per-session records into the cohort report.
pub fn summarize(
    bank: &ItemBank,
    selectors: &[Selector],
    cfg: &CohortConfig,
    sessions: &[Vec<SessionRecord>],
    oracle: &[Option<PosteriorSummary>],
) -> CohortReport {
    let n = sessions.len();
    let k = bank.n_factors();
    let j = bank.n_items();
    let h = cfg.session.horizon;
    let lengths: Vec<usize> = cfg.lengths.iter().copied().filter(|&l| l <= h).collect();
    let nf = n as f64;

    let shares = win_shares(sessions, selectors.len(), k, cfg.reference_length.min(h));

    let selectors_out = selectors
        .iter()
        .enumerate()
        .map(|(s, sel)| {
            let recs: Vec<&SessionRecord> = sessions.iter().map(|row| &row[s]).collect();
            let avg_termination = recs.iter().map(|r| r.termination_step as f64).sum::<f64>() / nf;
            let completion_curve = (0..=h)
                .map(|t| recs.iter().filter(|r| r.termination_step <= t).count() as f64 / nf)
                .collect();
            let mse_by_length = lengths
                .iter()
                .map(|&l| LengthMse {
                    length: l,
                    mse: (0..k)
                        .map(|c| {
                            recs.iter()
                                .map(|r| {
                                    (r.summary_at(l).mean[c] - r.theta.as_ref().map_or(f64::NAN, |t| t[c])).powi(2)
                                })
                                .sum::<f64>()
                                / nf
                        })
                        .collect(),
                })
                .collect();
            let mut exposure = vec![0.0; j];
            for r in &recs {
                for &item in &r.items {
                    exposure[item] += 1.0 / nf;
                }
            }
            let exposure_summary = ExposureSummary {
                mean: exposure.iter().sum::<f64>() / j as f64,
                median: quantile_of(&exposure, 0.5),
                q75: quantile_of(&exposure, 0.75),
                max: exposure.iter().cloned().fold(0.0, f64::max),
            };
            let total_items: usize = recs.iter().map(|r| r.select_seconds.len()).sum();
            let total_secs: f64 = recs.iter().flat_map(|r| &r.select_seconds).sum();
            let oracle_mse = if oracle.iter().all(Option::is_some) && !oracle.is_empty() {
                lengths
                    .iter()
                    .map(|&l| {
                        let stat = |f: fn(&PosteriorSummary) -> &Vec<f64>| -> Vec<f64> {
                            (0..k)
                                .map(|c| {
                                    recs.iter()
                                        .zip(oracle)
                                        .map(|(r, o)| (f(r.summary_at(l))[c] - f(o.as_ref().unwrap())[c]).powi(2))
                                        .sum::<f64>()
                                        / nf
                                })
                                .collect()
                        };
                        OracleMse {
                            length: l,
                            mean: stat(|s| &s.mean),
                            median: stat(|s| &s.median),
                            q25: stat(|s| &s.q25),
                            q75: stat(|s| &s.q75),
                        }
                    })
                    .collect()
            } else {
                Vec::new()
            };
            SelectorReport {
                selector: sel.id(),
                avg_termination,
                completion_curve,
                mse_by_length,
                win_shares: shares[s].clone(),
                exposure,
                exposure_summary,
                seconds_per_item: if total_items > 0 {
                    total_secs / total_items as f64
                } else {
                    0.0
                },
                oracle_mse,
                incomplete: recs.iter().filter(|r| !r.complete).count(),
            }
        })
        .collect();

    CohortReport {
        version: REPORT_VERSION,
        n_examinees: n,
        n_items: j,
        n_factors: k,
        horizon: h,
        reference_length: cfg.reference_length.min(h),
        selectors: selectors_out,
    }
}

/// Share of examinees for whom each selector has the smallest squared error
/// of the posterior mean after `length` items; ties split equally.
fn win_shares(sessions: &[Vec<SessionRecord>], n_sel: usize, k: usize, length: usize) -> Vec<Vec<f64>> {
    let mut shares = vec![vec![0.0; k]; n_sel];
    let n = sessions.len() as f64;
    for row in sessions {
        for c in 0..k {
            let errs: Vec<f64> = row
                .iter()
                .map(|r| {
                    let truth = r.theta.as_ref().map_or(f64::NAN, |t| t[c]);
                    (r.summary_at(length).mean[c] - truth).powi(2)
                })
                .collect();
            let best = errs.iter().cloned().fold(f64::INFINITY, f64::min);
            if !best.is_finite() {
                continue;
            }
            let winners: Vec<usize> = (0..n_sel).filter(|&s| errs[s] <= best + WIN_TIE).collect();
            for &s in &winners {
                shares[s][c] += 1.0 / (winners.len() as f64 * n);
            }
        }
    }
    shares
}

/// Write `summary.json` plus CSV tables into `dir`.
pub fn write_outputs(dir: &Path, run: &CohortRun) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&run.report)?)?;

    let mut w = csv::Writer::from_path(dir.join("completion.csv"))?;
    w.write_record(["selector", "step", "completed"])?;
    for s in &run.report.selectors {
        for (t, c) in s.completion_curve.iter().enumerate() {
            w.write_record([s.selector.clone(), t.to_string(), c.to_string()])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("mse.csv"))?;
    w.write_record(["selector", "length", "factor", "mse"])?;
    for s in &run.report.selectors {
        for row in &s.mse_by_length {
            for (c, m) in row.mse.iter().enumerate() {
                w.write_record([
                    s.selector.clone(),
                    row.length.to_string(),
                    (c + 1).to_string(),
                    m.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("exposure.csv"))?;
    w.write_record(["selector", "item", "rate"])?;
    for s in &run.report.selectors {
        for (j, r) in s.exposure.iter().enumerate() {
            w.write_record([s.selector.clone(), j.to_string(), r.to_string()])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("sessions.csv"))?;
    w.write_record([
        "selector",
        "examinee",
        "termination_step",
        "terminated",
        "items_administered",
        "complete",
    ])?;
    for row in &run.sessions {
        for r in row {
            w.write_record([
                r.selector.clone(),
                r.examinee.to_string(),
                r.termination_step.to_string(),
                r.terminated.to_string(),
                r.items.len().to_string(),
                r.complete.to_string(),
            ])?;
        }
    }
    w.flush()?;

    if run.report.selectors.iter().any(|s| !s.oracle_mse.is_empty()) {
        let mut w = csv::Writer::from_path(dir.join("oracle.csv"))?;
        w.write_record(["selector", "length", "factor", "statistic", "mse"])?;
        for s in &run.report.selectors {
            for row in &s.oracle_mse {
                for (name, vals) in [
                    ("mean", &row.mean),
                    ("median", &row.median),
                    ("q25", &row.q25),
                    ("q75", &row.q75),
                ] {
                    for (c, m) in vals.iter().enumerate() {
                        w.write_record([
                            s.selector.clone(),
                            row.length.to_string(),
                            (c + 1).to_string(),
                            name.to_string(),
                            m.to_string(),
                        ])?;
                    }
                }
            }
        }
        w.flush()?;
    }
    Ok(())
}
