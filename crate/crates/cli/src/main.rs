use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dmimo::config::{ExperimentConfig, Scenario, Scheme};
use dmimo::num::{grid_oracle, kkt_residuals, unique_association, GridOracleOptions};
use dmimo::pipeline::{
    build_catalogs, build_network, run_oracle, run_pipeline, solve_cellular_baseline, solve_distributed, summarize_rates_csv,
    write_outputs, AtStage, MetricsReport, Stage, StageError,
};
use dmimo::scheduler::run_schedule;

/// Harmonized cellular and distributed massive-MIMO simulator.
#[derive(Parser, Debug)]
#[command(name = "dmimo", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config's.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the layout and link gains.
    Topo,
    /// Candidate clusters and peak rates.
    Rates {
        #[arg(long, default_value = "shared")]
        scenario: Scenario,
    },
    /// Solve the utility maximization and report KKT residuals.
    Solve {
        #[arg(long, default_value = "shared")]
        scenario: Scenario,
        /// num_distributed or num_cellular.
        #[arg(long, default_value = "num_distributed")]
        scheme: Scheme,
        /// Also run the exhaustive grid oracle (tiny instances only).
        #[arg(long)]
        oracle: bool,
    },
    /// Unique association plus the virtual-queue scheduler.
    Schedule {
        #[arg(long, default_value = "shared")]
        scenario: Scenario,
    },
    /// Monte Carlo check of the rate proxies.
    Oracle,
    /// Full chain for the requested schemes and scenarios.
    Pipeline {
        /// Restrict to these schemes (repeatable).
        #[arg(long)]
        scheme: Vec<Scheme>,
        /// Restrict to these scenarios (repeatable).
        #[arg(long)]
        scenario: Vec<Scenario>,
        /// Run with seeds `seed..seed+N`, each into its own subdirectory.
        #[arg(long, default_value_t = 1)]
        repeat: u64,
    },
    /// Summary table from a finished run.
    Report {
        /// Rates CSV; defaults to `<out>/rates.csv`.
        #[arg(long)]
        rates: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig, StageError> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p).at(Stage::Config)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output.dir = o.clone();
    }
    cfg.validate().at(Stage::Config)?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), StageError> {
    let text = serde_json::to_string_pretty(value).map_err(dmimo::Error::from).at(Stage::Output)?;
    fs::write(path, text + "\n").map_err(dmimo::Error::from).at(Stage::Output)
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf, StageError> {
    fs::create_dir_all(&cfg.output.dir).map_err(dmimo::Error::from).at(Stage::Output)?;
    Ok(cfg.output.dir.clone())
}

fn run(cli: Cli) -> Result<(), StageError> {
    let mut cfg = load(&cli.common)?;
    match cli.command {
        Command::Topo => {
            let (layout, net) = build_network(&cfg).at(Stage::Topology)?;
            let dir = out_dir(&cfg)?;
            write_json(&dir.join("layout.json"), &layout)?;
            net.gains.save_csv(dir.join("link_gains.csv")).at(Stage::Output)?;
            println!("{} BSs, {} users -> {}", net.bss(), net.users(), dir.display());
        }
        Command::Rates { scenario } => {
            let (_, net) = build_network(&cfg).at(Stage::Topology)?;
            let cats = build_catalogs(&cfg, &net, scenario).at(Stage::Rates)?;
            let dir = out_dir(&cfg)?;
            let create = |name: &str| fs::File::create(dir.join(name)).map_err(dmimo::Error::from).at(Stage::Output);
            match &cats.macro_tier {
                None => cats.main.write_csv(create("catalog.csv")?).at(Stage::Output)?,
                Some(m) => {
                    cats.main.write_csv(create("catalog_pico.csv")?).at(Stage::Output)?;
                    m.write_csv(create("catalog_macro.csv")?).at(Stage::Output)?;
                }
            }
            let orphans = cats.excluded();
            println!("{} candidate entries, {} orphan user(s)", cats.main.entries.len(), orphans.len());
        }
        Command::Solve { scenario, scheme, oracle } => {
            let (_, net) = build_network(&cfg).at(Stage::Topology)?;
            let cats = build_catalogs(&cfg, &net, scenario).at(Stage::Rates)?;
            let (problem, alloc) = match scheme {
                Scheme::NumDistributed => solve_distributed(&cfg, &net, &cats),
                Scheme::NumCellular => solve_cellular_baseline(&cfg, &net, &cats),
                other => Err(dmimo::Error::Config(format!("solve handles num_distributed or num_cellular, not {}", other.name()))),
            }
            .at(Stage::Num)?;
            let kkt = kkt_residuals(&problem, &alloc).at(Stage::Num)?;
            let dir = out_dir(&cfg)?;
            write_json(&dir.join("allocation.json"), &alloc.to_json())?;
            write_json(&dir.join("kkt.json"), &kkt)?;
            println!(
                "utility {:.6}, feasibility {:.2e}, gap {:.2e}, KKT stationarity {:.2e}",
                alloc.objective,
                alloc.feasibility_residual,
                alloc.duality_gap.unwrap_or(f64::NAN),
                kkt.stationarity_residual
            );
            if oracle {
                let report = grid_oracle(&problem, &GridOracleOptions::default()).at(Stage::Num)?;
                write_json(&dir.join("grid_oracle.json"), &report)?;
                println!("grid oracle utility {:.6} (coarse {:.6})", report.refined_utility, report.coarse_utility);
            }
        }
        Command::Schedule { scenario } => {
            let (_, net) = build_network(&cfg).at(Stage::Topology)?;
            let cats = build_catalogs(&cfg, &net, scenario).at(Stage::Rates)?;
            let (_, alloc) = solve_distributed(&cfg, &net, &cats).at(Stage::Num)?;
            let schedule = run_schedule(&unique_association(&alloc), &net.budgets, cfg.scheduler.horizon, &cfg.scheduler.vq)
                .at(Stage::Schedule)?;
            let dir = out_dir(&cfg)?;
            let f = fs::File::create(dir.join("schedule.csv")).map_err(dmimo::Error::from).at(Stage::Output)?;
            schedule.write_csv(f).at(Stage::Output)?;
            write_json(&dir.join("schedule_summary.json"), &schedule.summary_json())?;
            println!("{} RBs scheduled", schedule.horizon);
        }
        Command::Oracle => {
            let (_, net) = build_network(&cfg).at(Stage::Topology)?;
            let reports = run_oracle(&cfg, &net).at(Stage::Oracle)?;
            let dir = out_dir(&cfg)?;
            let by_user: BTreeMap<String, _> = reports.iter().map(|(k, r)| (k.to_string(), r)).collect();
            write_json(&dir.join("oracle.json"), &by_user)?;
            for (k, r) in &reports {
                println!(
                    "user {k}: proxy {:.4}, empirical {:.4} ± {:.4}, rel. error {:.2}%",
                    r.proxy_rate,
                    r.empirical_rate,
                    r.ci_halfwidth,
                    100.0 * r.rel_error
                );
            }
        }
        Command::Pipeline { scheme, scenario, repeat } => {
            if !scheme.is_empty() {
                cfg.pipeline.schemes = scheme;
            }
            if !scenario.is_empty() {
                cfg.pipeline.scenarios = scenario;
            }
            if repeat == 0 {
                return Err(dmimo::Error::Config("--repeat must be at least 1".into())).at(Stage::Config);
            }
            let base = cfg.output.dir.clone();
            for i in 0..repeat {
                let mut run_cfg = cfg.clone();
                run_cfg.seed = cfg.seed.wrapping_add(i);
                let dir = if repeat == 1 { base.clone() } else { base.join(format!("run_{i:03}")) };
                log::info!("pipeline seed {} -> {}", run_cfg.seed, dir.display());
                let output = run_pipeline(&run_cfg)?;
                write_outputs(&output, &dir, run_cfg.output.artifacts).at(Stage::Output)?;
                print_metrics(&output.report);
            }
        }
        Command::Report { rates } => {
            let path = rates.unwrap_or_else(|| cfg.output.dir.join("rates.csv"));
            let table = summarize_rates_csv(&path).at(Stage::Metrics)?;
            println!("{:<8} {:<16} {:>9} {:>9} {:>9} {:>9} {:>8}", "scenario", "scheme", "geomean", "p5", "p50", "mean", "unserved");
            for ((scenario, scheme), s) in &table {
                println!(
                    "{:<8} {:<16} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>8}",
                    scenario.name(),
                    scheme.name(),
                    s.geomean_rate,
                    s.percentiles[&5],
                    s.percentiles[&50],
                    s.mean_rate,
                    s.unserved
                );
            }
            let metrics = path.with_file_name("metrics.json");
            if let Ok(text) = fs::read_to_string(&metrics) {
                let report: MetricsReport = serde_json::from_str(&text).map_err(dmimo::Error::from).at(Stage::Metrics)?;
                print_comparisons(&report);
            }
        }
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn print_comparisons(report: &MetricsReport) {
    for (scenario, m) in &report.scenarios {
        let c = &m.comparison;
        println!(
            "{}: unique/NUM {}, VQ/NUM {}, p5 gain {} (realized {}), ordering {}",
            scenario.name(),
            fmt_opt(c.unique_ratio),
            fmt_opt(c.vq_ratio),
            fmt_opt(c.p5_gain),
            fmt_opt(c.p5_gain_realized),
            c.ordering_holds.map_or("-", |b| if b { "ok" } else { "VIOLATED" })
        );
    }
}

fn print_metrics(report: &MetricsReport) {
    println!("seed {}: {} users, {} BSs", report.seed, report.users, report.bss);
    for (scenario, m) in &report.scenarios {
        for (scheme, s) in &m.schemes {
            println!(
                "  {:<8} {:<16} geomean {:>8.4}  p5 {:>8.4}  unserved {}",
                scenario.name(),
                scheme.name(),
                s.summary.geomean_rate,
                s.summary.percentiles[&5],
                s.summary.unserved
            );
        }
    }
    print_comparisons(report);
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.stage {
                Stage::Config => 2,
                _ => 1,
            })
        }
    }
}
