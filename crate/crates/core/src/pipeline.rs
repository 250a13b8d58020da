//! End-to-end runs: topology, rates, utility maximization, scheduling and
//! rate statistics for every requested scheme and scenario.
//!
//! Sub-seeds come from the master seed through [`crate::seed::derive`] with
//! the stage tags of [`crate::seed::stage`], so each stage can be re-run on
//! its own and draw the same numbers.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Scenario, Scheme, SharedArchitecture};
use crate::error::{Error, Result};
use crate::mc_oracle::{verify_proxy, OracleReport, ProxySetup};
use crate::metrics::{percentile, RateSummary};
use crate::num::{
    fractional_user_count, solve_cellular, solve_mcs, solve_orthogonal_split, solve_ucs, unique_association, Allocation,
    FractionalCount, NumProblem,
};
use crate::rates::{build_catalog, Band, ClusterCatalog};
use crate::scheduler::{max_sinr_round_robin, run_schedule, validate_schedule, Rule, Schedule};
use crate::seed::{derive, stage};
use crate::topology::{build_checkerboard, compute_link_gains, dbm_to_watts, Layout, Network, Tier, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Topology,
    Rates,
    Num,
    Schedule,
    Oracle,
    Metrics,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Topology => "topology",
            Stage::Rates => "rates",
            Stage::Num => "num",
            Stage::Schedule => "schedule",
            Stage::Oracle => "oracle",
            Stage::Metrics => "metrics",
            Stage::Output => "output",
        };
        f.write_str(s)
    }
}

/// A library error tagged with the stage that raised it.
#[derive(Debug, thiserror::Error)]
#[error("[{stage}] {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

pub trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// Layout and link gains for the configured topology.
pub fn build_network(cfg: &ExperimentConfig) -> Result<(Layout, Network)> {
    let layout = build_checkerboard(&cfg.topology.layout(), derive(cfg.seed, &[stage::TOPOLOGY]))?;
    let gains = compute_link_gains(
        &layout,
        cfg.topology.shadowing,
        dbm_to_watts(cfg.topology.noise_dbm),
        derive(cfg.seed, &[stage::SHADOWING]),
    );
    let net = Network::from_layout(&layout, gains);
    Ok((layout, net))
}

/// Catalogs of one scenario. Shared: one catalog over every BS. Split: the
/// pico catalog on the pico band plus a single-BS macro catalog on the
/// macro band.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioCatalogs {
    pub scenario: Scenario,
    pub main: ClusterCatalog,
    pub macro_tier: Option<ClusterCatalog>,
}

impl ScenarioCatalogs {
    /// Users without any positive-rate candidate in the scenario.
    pub fn excluded(&self) -> Vec<UserId> {
        let mut out = self.main.orphans();
        if let Some(m) = &self.macro_tier {
            let other = m.orphans();
            out.retain(|k| other.contains(k));
        }
        out
    }
}

fn single_bs(cat: &ClusterCatalog) -> ClusterCatalog {
    ClusterCatalog { l_max: 1, ..cat.filter_sizes(|l| l == 1) }
}

pub fn build_catalogs(cfg: &ExperimentConfig, net: &Network, scenario: Scenario) -> Result<ScenarioCatalogs> {
    let (precoder, mode, l_max) = (cfg.rates.precoder, cfg.rates.candidates, cfg.l_max());
    Ok(match scenario {
        Scenario::Shared => {
            ScenarioCatalogs { scenario, main: build_catalog(net, &Band::all(net), precoder, l_max, mode)?, macro_tier: None }
        }
        Scenario::Split => {
            let macros = Band::of(net.bss_of_tier(Tier::Macro));
            let picos = Band::of(net.bss_of_tier(Tier::Pico));
            ScenarioCatalogs {
                scenario,
                main: build_catalog(net, &picos, precoder, l_max, mode)?,
                macro_tier: Some(build_catalog(net, &macros, precoder, 1, mode)?),
            }
        }
    })
}

/// The harmonized problem of the scenario at its optimum.
pub fn solve_distributed(cfg: &ExperimentConfig, net: &Network, cats: &ScenarioCatalogs) -> Result<(NumProblem, Allocation)> {
    let opts = &cfg.num.solver;
    match (&cats.macro_tier, cfg.num.architecture) {
        (Some(m), _) => solve_orthogonal_split(m, &cats.main, &net.budgets, cfg.num.rho, opts),
        (None, SharedArchitecture::Ucs) => solve_ucs(&cats.main, &net.budgets, opts),
        (None, SharedArchitecture::Mcs) => solve_mcs(&cats.main, &net.budgets, cfg.num.shares, opts),
    }
}

/// Network-optimized association with single-BS clusters only.
pub fn solve_cellular_baseline(cfg: &ExperimentConfig, net: &Network, cats: &ScenarioCatalogs) -> Result<(NumProblem, Allocation)> {
    let opts = &cfg.num.solver;
    match &cats.macro_tier {
        Some(m) => solve_orthogonal_split(m, &single_bs(&cats.main), &net.budgets, cfg.num.rho, opts),
        None => solve_cellular(&single_bs(&cats.main), &net.budgets, opts),
    }
}

/// Per-user throughput when every user attaches to its best single BS and
/// each BS round-robins its users. In the split scenario a tier's
/// throughput is scaled by its share of the RBs.
pub fn max_sinr_rates(cfg: &ExperimentConfig, net: &Network, cats: &ScenarioCatalogs) -> Result<Vec<f64>> {
    let horizon = cfg.scheduler.horizon;
    let Some(macro_cat) = &cats.macro_tier else {
        return Ok(max_sinr_round_robin(&cats.main, &net.budgets, horizon)?.throughputs);
    };
    let best = |cat: &ClusterCatalog, k: UserId| {
        cat.for_user(k).filter(|e| e.cluster.size() == 1).map(|e| e.rate).fold(0.0, f64::max)
    };
    let users = cats.main.users;
    let on_macro: Vec<bool> = (0..users).map(|k| best(macro_cat, k) > best(&cats.main, k)).collect();
    let tier = |cat: &ClusterCatalog, keep: bool| ClusterCatalog {
        entries: single_bs(cat).entries.into_iter().filter(|e| on_macro[e.user] == keep).collect(),
        ..single_bs(cat)
    };
    let m = max_sinr_round_robin(&tier(macro_cat, true), &net.budgets, horizon)?;
    let p = max_sinr_round_robin(&tier(&cats.main, false), &net.budgets, horizon)?;
    let rho = cfg.num.rho;
    Ok((0..users).map(|k| rho * m.throughputs[k] + (1.0 - rho) * p.throughputs[k]).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeResult {
    pub scheme: Scheme,
    pub rates: Vec<f64>,
    /// `Σ log R_k` over the scenario's users with candidates; `None` when
    /// one of them gets nothing.
    pub utility: Option<f64>,
    pub summary: RateSummary,
}

/// Cross-scheme ratios. Utility gaps are reported as ratios of geometric
/// means, `exp((U_a - U_b) / K)` over the `K` counted users.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Comparison {
    pub num_bound: Option<f64>,
    pub unique_ratio: Option<f64>,
    pub vq_ratio: Option<f64>,
    /// 5th-percentile rate of the harmonized optimum over the cellular optimum.
    pub p5_gain: Option<f64>,
    /// Same, for the rates realized by the virtual-queue scheduler.
    pub p5_gain_realized: Option<f64>,
    /// Distributed ≥ cellular ≥ max-SINR utility, when all three ran.
    pub ordering_holds: Option<bool>,
    pub fractional_users: BTreeMap<usize, FractionalCount>,
    pub schedule_violations: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub counted_users: usize,
    pub schemes: Vec<SchemeResult>,
    pub comparison: Comparison,
    pub catalogs: ScenarioCatalogs,
    pub distributed: Option<Allocation>,
    pub cellular: Option<Allocation>,
    pub schedule: Option<Schedule>,
}

impl ScenarioResult {
    pub fn scheme(&self, s: Scheme) -> Option<&SchemeResult> {
        self.schemes.iter().find(|r| r.scheme == s)
    }
}

/// Ordering slack for utility comparisons between schemes.
const ORDER_TOL: f64 = 1e-6;

pub fn run_scenario(cfg: &ExperimentConfig, net: &Network, scenario: Scenario) -> Result<ScenarioResult, StageError> {
    let catalogs = build_catalogs(cfg, net, scenario).at(Stage::Rates)?;
    let excluded = catalogs.excluded();
    let counted: Vec<UserId> = (0..net.users()).filter(|k| !excluded.contains(k)).collect();
    let wants = |s: Scheme| cfg.pipeline.schemes.contains(&s);

    let needs_distributed = [Scheme::NumDistributed, Scheme::NumUnique, Scheme::NumVqGreedy].into_iter().any(wants);
    let distributed = if needs_distributed { Some(solve_distributed(cfg, net, &catalogs).at(Stage::Num)?.1) } else { None };
    let cellular = if wants(Scheme::NumCellular) { Some(solve_cellular_baseline(cfg, net, &catalogs).at(Stage::Num)?.1) } else { None };
    let unique = distributed.as_ref().map(unique_association);
    let schedule = match (&unique, wants(Scheme::NumVqGreedy)) {
        (Some(u), true) => Some(run_schedule(u, &net.budgets, cfg.scheduler.horizon, &cfg.scheduler.vq).at(Stage::Schedule)?),
        _ => None,
    };

    let mut schemes = Vec::new();
    for &scheme in &cfg.pipeline.schemes {
        let rates = match scheme {
            Scheme::MaxSinr => max_sinr_rates(cfg, net, &catalogs).at(Stage::Schedule)?,
            Scheme::NumCellular => cellular.as_ref().expect("solved").throughputs(),
            Scheme::NumDistributed => distributed.as_ref().expect("solved").throughputs(),
            Scheme::NumUnique => unique.as_ref().expect("solved").throughputs(),
            Scheme::NumVqGreedy => schedule.as_ref().expect("scheduled").throughputs.clone(),
        };
        let utility = counted.iter().all(|&k| rates[k] > 0.0).then(|| counted.iter().map(|&k| rates[k].ln()).sum());
        let summary = RateSummary::new(&rates).at(Stage::Metrics)?;
        schemes.push(SchemeResult { scheme, rates, utility, summary });
    }

    let mut result = ScenarioResult {
        scenario,
        counted_users: counted.len(),
        schemes,
        comparison: Comparison::default(),
        catalogs,
        distributed,
        cellular,
        schedule,
    };
    result.comparison = compare(&result, net).at(Stage::Metrics)?;
    Ok(result)
}

fn compare(r: &ScenarioResult, net: &Network) -> Result<Comparison> {
    let k = r.counted_users.max(1) as f64;
    let utility = |s: Scheme| r.scheme(s).and_then(|x| x.utility);
    let ratio = |a: Scheme, b: Scheme| Some(((utility(a)? - utility(b)?) / k).exp());
    let p5 = |s: Scheme| r.scheme(s).map(|x| percentile(&x.rates, 5.0)).transpose();
    let gain = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    };
    let cell_p5 = p5(Scheme::NumCellular)?;
    let ordering_holds = match (utility(Scheme::NumDistributed), utility(Scheme::NumCellular), r.scheme(Scheme::MaxSinr)) {
        (Some(d), Some(c), Some(m)) => {
            let m = m.utility.unwrap_or(f64::NEG_INFINITY);
            Some(d >= c - ORDER_TOL * c.abs().max(1.0) && c >= m - ORDER_TOL * m.abs().max(1.0))
        }
        _ => None,
    };
    let rule = match r.distributed.as_ref().map(|a| a.architecture) {
        Some(crate::num::Architecture::Mcs { .. }) => Rule::Mcs,
        _ => Rule::Ucs,
    };
    Ok(Comparison {
        num_bound: utility(Scheme::NumDistributed).or(r.distributed.as_ref().map(|a| a.objective)),
        unique_ratio: ratio(Scheme::NumUnique, Scheme::NumDistributed),
        vq_ratio: ratio(Scheme::NumVqGreedy, Scheme::NumDistributed),
        p5_gain: gain(p5(Scheme::NumDistributed)?, cell_p5),
        p5_gain_realized: gain(p5(Scheme::NumVqGreedy)?, cell_p5),
        ordering_holds,
        fractional_users: r.distributed.as_ref().map(fractional_user_count).unwrap_or_default(),
        schedule_violations: r.schedule.as_ref().map(|s| validate_schedule(s, &net.budgets, rule).len()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeMetrics {
    pub summary: RateSummary,
    pub utility: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    pub counted_users: usize,
    pub schemes: BTreeMap<Scheme, SchemeMetrics>,
    pub comparison: Comparison,
}

/// The `metrics.json` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub users: usize,
    pub bss: usize,
    pub scenarios: BTreeMap<Scenario, ScenarioMetrics>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub layout: Layout,
    pub network: Network,
    pub scenarios: Vec<ScenarioResult>,
    pub report: MetricsReport,
}

/// Runs every requested scenario; scenarios are independent jobs and run
/// on their own threads.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineOutput, StageError> {
    cfg.validate().at(Stage::Config)?;
    let (layout, network) = build_network(cfg).at(Stage::Topology)?;
    let scenarios: Vec<ScenarioResult> = std::thread::scope(|s| {
        let jobs: Vec<_> = cfg.pipeline.scenarios.iter().map(|&sc| s.spawn({
            let net = &network;
            move || run_scenario(cfg, net, sc)
        })).collect();
        jobs.into_iter().map(|j| j.join().expect("scenario job panicked")).collect::<Result<_, _>>()
    })?;
    let report = MetricsReport {
        seed: cfg.seed,
        users: network.users(),
        bss: network.bss(),
        scenarios: scenarios
            .iter()
            .map(|r| {
                let schemes = r
                    .schemes
                    .iter()
                    .map(|s| (s.scheme, SchemeMetrics { summary: s.summary.clone(), utility: s.utility }))
                    .collect();
                (r.scenario, ScenarioMetrics { counted_users: r.counted_users, schemes, comparison: r.comparison.clone() })
            })
            .collect(),
    };
    Ok(PipelineOutput { layout, network, scenarios, report })
}

/// `user_id,scheme,scenario,rate_bps_hz`, ordered by scenario, scheme, user.
pub fn write_rates_csv<W: Write>(scenarios: &[ScenarioResult], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["user_id", "scheme", "scenario", "rate_bps_hz"])?;
    for r in scenarios {
        for s in &r.schemes {
            for (k, rate) in s.rates.iter().enumerate() {
                out.write_record([k.to_string(), s.scheme.name().to_string(), r.scenario.name().to_string(), rate.to_string()])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Writes `rates.csv`, `metrics.json` and, when enabled, the per-stage
/// artifacts under `dir`.
pub fn write_outputs(output: &PipelineOutput, dir: &Path, artifacts: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_rates_csv(&output.scenarios, fs::File::create(dir.join("rates.csv"))?)?;
    write_json(&dir.join("metrics.json"), &output.report)?;
    if !artifacts {
        return Ok(());
    }
    write_json(&dir.join("layout.json"), &output.layout)?;
    output.network.gains.save_csv(dir.join("link_gains.csv"))?;
    for r in &output.scenarios {
        let sub = dir.join(r.scenario.name());
        fs::create_dir_all(&sub)?;
        let main_name = if r.catalogs.macro_tier.is_some() { "catalog_pico.csv" } else { "catalog.csv" };
        r.catalogs.main.write_csv(fs::File::create(sub.join(main_name))?)?;
        if let Some(m) = &r.catalogs.macro_tier {
            m.write_csv(fs::File::create(sub.join("catalog_macro.csv"))?)?;
        }
        if let Some(a) = &r.distributed {
            write_json(&sub.join("allocation.json"), &a.to_json())?;
            write_json(&sub.join("allocation_unique.json"), &unique_association(a).to_json())?;
        }
        if let Some(a) = &r.cellular {
            write_json(&sub.join("allocation_cellular.json"), &a.to_json())?;
        }
        if let Some(s) = &r.schedule {
            s.write_csv(fs::File::create(sub.join("schedule.csv"))?)?;
            write_json(&sub.join("schedule_summary.json"), &s.summary_json())?;
        }
    }
    Ok(())
}

/// Proxy checks for the configured users, each on its strongest cluster of
/// the configured size over the whole band.
pub fn run_oracle(cfg: &ExperimentConfig, net: &Network) -> Result<Vec<(UserId, OracleReport)>> {
    let catalog = build_catalog(net, &Band::all(net), cfg.rates.precoder, cfg.oracle.cluster_size, crate::rates::CandidateMode::Strongest)?;
    cfg.oracle
        .users
        .iter()
        .map(|&k| {
            if k >= net.users() {
                return Err(Error::Config(format!("oracle user {k} out of range")));
            }
            let cluster = catalog
                .candidates(k, cfg.oracle.cluster_size)
                .first()
                .map(|c| (*c).clone())
                .ok_or_else(|| Error::Config(format!("user {k} has no size-{} cluster", cfg.oracle.cluster_size)))?;
            let setup = ProxySetup::from_network(net, &Band::all(net), cfg.rates.precoder, k, &cluster)?;
            Ok((k, verify_proxy(&setup, cfg.oracle.trials, derive(cfg.seed, &[stage::ORACLE, k as u64]))?))
        })
        .collect()
}

/// One `rates.csv` row.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RateRow {
    pub user_id: UserId,
    pub scheme: Scheme,
    pub scenario: Scenario,
    pub rate_bps_hz: f64,
}

/// Rate statistics per (scenario, scheme) recomputed from a rates CSV.
pub fn summarize_rates_csv(path: &Path) -> Result<BTreeMap<(Scenario, Scheme), RateSummary>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut groups: BTreeMap<(Scenario, Scheme), Vec<f64>> = BTreeMap::new();
    for row in rdr.deserialize() {
        let row: RateRow = row?;
        groups.entry((row.scenario, row.scheme)).or_default().push(row.rate_bps_hz);
    }
    if groups.is_empty() {
        return Err(Error::Empty("rates CSV has no rows"));
    }
    groups.into_iter().map(|(key, rates)| Ok((key, RateSummary::new(&rates)?))).collect()
}

#[cfg(test)]
mod tests;
