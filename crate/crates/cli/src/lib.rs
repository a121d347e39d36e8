//! Configuration and command implementations behind the `deepcat` binary.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use deepcat_core::mirt::{generate_bank, BankDocument};
use deepcat_core::{BankGenConfig, ItemBank};
use deepcat_harness::{run_cohort, write_outputs, CohortConfig, CohortReport, Selector, SessionConfig, SessionRecord};
use deepcat_rl::{Checkpoint, NetworkConfig, QNetwork, TrainConfig, TrainOutcome};
use serde::{Deserialize, Serialize};

/// Hidden widths of the Q-network; applied to every sub-network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSection {
    pub width: usize,
    pub seed: u64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self { width: 256, seed: 0 }
    }
}

impl NetworkSection {
    pub fn build(&self, bank: &ItemBank) -> NetworkConfig {
        let mut cfg = NetworkConfig::new(bank.n_factors(), bank.n_items()).with_width(self.width);
        cfg.seed = self.seed;
        cfg
    }
}

/// The single configuration file shared by every subcommand. Each command
/// reads the sections it needs; missing sections take their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub bank: BankGenConfig,
    pub session: SessionConfig,
    pub cohort: CohortConfig,
    pub train: TrainConfig,
    pub network: NetworkSection,
    /// Selector ids for `cohort run` and `evaluate`.
    pub selectors: Vec<String>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
            }
        }
    }

    pub fn selector_ids(&self) -> Vec<String> {
        if self.selectors.is_empty() {
            ["random", "mi", "eap_kl", "max_pos", "max_var"]
                .map(String::from)
                .to_vec()
        } else {
            self.selectors.clone()
        }
    }
}

pub fn read_bank(path: &Path) -> Result<ItemBank> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let doc: BankDocument = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(ItemBank::try_from(doc)?)
}

pub fn write_bank(path: &Path, bank: &ItemBank) -> Result<()> {
    let doc = BankDocument::from(bank.clone());
    std::fs::write(path, serde_json::to_string_pretty(&doc)?).with_context(|| format!("writing {}", path.display()))
}

/// Bank from a file when given, otherwise generated from the config.
pub fn resolve_bank(path: Option<&Path>, cfg: &Config) -> Result<Arc<ItemBank>> {
    Ok(Arc::new(match path {
        Some(p) => read_bank(p)?,
        None => generate_bank(&cfg.bank)?,
    }))
}

pub fn read_policy(path: &Path) -> Result<QNetwork> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading policy {}", path.display()))?;
    Ok(ckpt.to_network()?)
}

pub fn parse_selectors(ids: &[String], policy: Option<Arc<QNetwork>>) -> Result<Vec<Selector>> {
    ids.iter().map(|id| Ok(Selector::parse(id, policy.clone())?)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BankSummary {
    pub n_items: usize,
    pub n_factors: usize,
    /// Items with a nonzero loading on each factor.
    pub items_per_factor: Vec<usize>,
    pub loading_range: (f64, f64),
    pub intercept_range: (f64, f64),
}

pub fn summarize_bank(bank: &ItemBank) -> BankSummary {
    let mut items_per_factor = vec![0; bank.n_factors()];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for j in 0..bank.n_items() {
        for (k, &b) in bank.loading_row(j).iter().enumerate() {
            if b != 0.0 {
                items_per_factor[k] += 1;
                lo = lo.min(b.abs());
                hi = hi.max(b.abs());
            }
        }
    }
    let d = bank.intercepts();
    BankSummary {
        n_items: bank.n_items(),
        n_factors: bank.n_factors(),
        items_per_factor,
        loading_range: (lo, hi),
        intercept_range: (
            d.iter().cloned().fold(f64::INFINITY, f64::min),
            d.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        ),
    }
}

/// Run one simulated session against an examinee drawn from `examinee_seed`,
/// or with the given θ and response uniforms from that seed.
pub fn simulate_session(
    bank: &Arc<ItemBank>,
    selector: &Selector,
    cfg: &SessionConfig,
    theta: Option<Vec<f64>>,
    examinee_seed: u64,
) -> Result<SessionRecord> {
    use deepcat_harness::SimulatedExaminee;
    use rand::Rng;
    let mut ex = match theta {
        None => SimulatedExaminee::draw(bank, examinee_seed),
        Some(theta) => {
            if theta.len() != bank.n_factors() {
                bail!(
                    "theta has {} entries but the bank has {} factors",
                    theta.len(),
                    bank.n_factors()
                );
            }
            let mut rng = deepcat_core::seeded_rng(examinee_seed);
            let u: Vec<f64> = (0..bank.n_items()).map(|_| rng.random()).collect();
            SimulatedExaminee::new(bank, theta, &u)
        }
    };
    Ok(deepcat_harness::run_session(bank, selector, &mut ex, cfg, 0)?)
}

/// Outputs of `train`: best and final checkpoints plus the CSV log.
pub fn train_to_dir(
    bank: &ItemBank,
    cfg: &Config,
    out: &Path,
    mut progress: impl FnMut(&deepcat_rl::LogRow),
) -> Result<TrainOutcome> {
    std::fs::create_dir_all(out)?;
    let outcome = deepcat_rl::train(bank, cfg.network.build(bank), &cfg.train, &mut progress)?;
    Checkpoint::from_network(&outcome.network, outcome.best_episode, outcome.best_mean_reward)
        .save(&out.join("policy.json"))?;
    Checkpoint::from_network(
        &outcome.final_network,
        cfg.train.episodes,
        outcome.window_means(cfg.train.reward_window).last().copied(),
    )
    .save(&out.join("final.json"))?;
    deepcat_rl::train::write_log_csv(&out.join("training_log.csv"), &outcome.log)?;
    Ok(outcome)
}

pub fn cohort_to_dir(
    bank: &Arc<ItemBank>,
    selectors: &[Selector],
    cfg: &CohortConfig,
    out: Option<&PathBuf>,
) -> Result<CohortReport> {
    let run = run_cohort(bank, selectors, cfg)?;
    if let Some(dir) = out {
        write_outputs(dir, &run)?;
    }
    Ok(run.report)
}

/// Plain-text table of the headline cohort metrics.
pub fn format_report(report: &CohortReport) -> String {
    let mut s = format!(
        "{:<14} {:>10} {:>12} {:>12}  win shares @{}\n",
        "selector", "avg items", "sec/item", "max exposure", report.reference_length
    );
    for r in &report.selectors {
        let shares: Vec<String> = r.win_shares.iter().map(|w| format!("{w:.3}")).collect();
        s.push_str(&format!(
            "{:<14} {:>10.2} {:>12.4} {:>12.3}  {}\n",
            r.selector,
            r.avg_termination,
            r.seconds_per_item,
            r.exposure_summary.max,
            shares.join(" ")
        ));
    }
    s
}
