//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Runs without the libtest harness so every line is printed even when all
//! pass. A substring argument restricts the run, e.g.
//! `cargo test --test acceptance -- desk`.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use dmimo::config::{ExperimentConfig, Scenario};
use dmimo::mc_oracle::{verify_proxy, OracleBs, ProxySetup};
use dmimo::num::{
    fractional_user_count, grid_oracle, kkt_residuals, solve_cellular, solve_ucs, Allocation, FractionalCount, GridOracleOptions,
    NumProblem, SolverOptions, Var,
};
use dmimo::pipeline::{build_network, run_pipeline, write_outputs};
use dmimo::rates::{build_catalog, Band, CandidateMode, CatalogEntry, Cluster, ClusterCatalog, Precoder};
use dmimo::scheduler::{pilot_dimensions, run_schedule, validate_rbs, validate_schedule, Rb, Rule, Schedule, VqParams};
use dmimo::topology::{Budgets, LinkGainMap, Network, Tier};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

// ---------------------------------------------------------------- instances

fn desk_network(seed: u64) -> Network {
    let cfg = ExperimentConfig { seed, ..ExperimentConfig::default() };
    build_network(&cfg).unwrap().1
}

/// Users of `net` ranked by their best received SNR on `bs`.
fn users_by_snr(net: &Network, bs: usize) -> Vec<usize> {
    let mut users: Vec<usize> = (0..net.users()).collect();
    users.sort_by(|&a, &b| net.gains.get(a, bs).total_cmp(&net.gains.get(b, bs)));
    users
}

fn macro_bs(net: &Network) -> usize {
    net.tiers.iter().position(|&t| t == Tier::Macro).unwrap()
}

/// Unit powers and noise, log-uniform gains over three decades.
fn random_network(seed: u64, bss: usize, users: usize, table: &[usize]) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta = (0..users).map(|_| (0..bss).map(|_| 10f64.powf(rng.random_range(-2.0..1.0))).collect()).collect();
    Network {
        powers: vec![1.0; bss],
        antennas: vec![8; bss],
        tiers: vec![Tier::Pico; bss],
        budgets: Budgets::uniform(bss, table),
        gains: LinkGainMap { beta, noise_power: 1.0, layout_extent: 1000.0, seed },
    }
}

fn random_catalog(seed: u64, bss: usize, users: usize, l_max: usize, mode: CandidateMode) -> (ClusterCatalog, Budgets) {
    let net = random_network(seed, bss, users, &[2, 3, 4, 5][..l_max]);
    (build_catalog(&net, &Band::all(&net), Precoder::Zf, l_max, mode).unwrap(), net.budgets)
}

fn catalog(users: usize, l_max: usize, entries: &[(usize, &[usize], f64)]) -> ClusterCatalog {
    let mut entries: Vec<CatalogEntry> = entries
        .iter()
        .map(|&(user, m, rate)| CatalogEntry { user, cluster: Cluster::new(m.to_vec()).unwrap(), rate })
        .collect();
    entries.sort_by(|a, b| (a.user, a.cluster.size(), &a.cluster).cmp(&(b.user, b.cluster.size(), &b.cluster)));
    ClusterCatalog { l_max, users, precoder: Precoder::Zf, entries }
}

/// Single-partition allocation with prescribed activities `(user, cluster, rate, x)`.
fn fixed_alloc(users: usize, budgets: &Budgets, entries: &[(usize, &[usize], f64, f64)]) -> Allocation {
    let size = entries[0].1.len();
    let cat_entries: Vec<(usize, &[usize], f64)> = entries.iter().map(|&(k, c, r, _)| (k, c, r)).collect();
    let cat = catalog(users, size, &cat_entries).filter_sizes(|l| l == size);
    let p = NumProblem::ucs(&cat, budgets).unwrap();
    let z: Vec<f64> = p
        .vars
        .iter()
        .map(|v| match v {
            Var::Lambda { partition } => (p.partitions[*partition].size == size) as u8 as f64,
            Var::Activity { user, cluster, .. } => entries.iter().find(|e| e.0 == *user && e.1 == cluster.members()).unwrap().3,
            Var::CellularShare { .. } => unreachable!(),
        })
        .collect();
    Allocation::from_problem(&p, &z, None)
}

fn fraction(s: &Schedule, user: usize) -> f64 {
    s.realized.iter().filter(|r| r.user == user).map(|r| r.fraction).sum()
}

/// The four RBs of the pilot-accounting table, BSs and users numbered from zero.
fn table1() -> Vec<Rb> {
    vec![
        Rb::new(1, &[(&[0], &[0, 1]), (&[1], &[2, 3]), (&[2], &[4, 5]), (&[3], &[6, 7])]).unwrap(),
        Rb::new(2, &[(&[0, 1], &[0, 1, 2]), (&[2, 3], &[3, 4, 5])]).unwrap(),
        Rb::new(2, &[(&[0, 1], &[0]), (&[0, 2], &[1]), (&[0, 3], &[2]), (&[1, 2], &[3]), (&[1, 3], &[4]), (&[2, 3], &[5])]).unwrap(),
        Rb::new(2, &[(&[0, 1], &[0, 1, 2]), (&[2], &[3, 4]), (&[3], &[5, 6])]).unwrap(),
    ]
}

// ---------------------------------------------------------------- criteria

fn c01_zf_cell() -> Outcome {
    let start = Instant::now();
    let net = desk_network(0);
    let m = macro_bs(&net);
    let ranked = users_by_snr(&net, m);
    let band = Band::of(vec![m]);
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    // cell edge, median and cell centre
    for q in [0.1, 0.5, 0.9] {
        let k = ranked[(q * (ranked.len() - 1) as f64).round() as usize];
        let setup = ProxySetup::from_network(&net, &band, Precoder::Zf, k, &Cluster::single(m)).unwrap();
        assert_eq!((setup.bss[0].antennas, setup.bss[0].served), (100, 10));
        let r = verify_proxy(&setup, 1000, 1).unwrap();
        worst = worst.max(r.rel_error);
        parts.push(format!("{:.2}%", 100.0 * r.rel_error));
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 0.05 && elapsed <= Duration::from_secs(60),
        format!("rel. error {} at SNR quantiles 0.1/0.5/0.9 (max 5%), {:.1}s", parts.join("/"), elapsed.as_secs_f64()),
    )
}

/// `setup` with every BS resized to `m` antennas serving `m / 8` users.
fn resized(setup: &ProxySetup, m: usize) -> ProxySetup {
    let mut s = setup.clone();
    for b in &mut s.bss {
        b.antennas = m;
        b.served = m / 8;
    }
    s
}

fn c02_mrt_and_cluster() -> Outcome {
    let net = desk_network(0);
    let mac = macro_bs(&net);
    let ranked = users_by_snr(&net, mac);
    let k = ranked[ranked.len() / 2];
    let cell = ProxySetup {
        precoder: Precoder::Mrt,
        bss: vec![OracleBs { antennas: 0, power: net.powers[mac], served: 0, beta: net.gains.get(k, mac) }],
        cluster: vec![0],
        noise: net.gains.noise_power,
        dummy_beta: net.gains.get(k, mac),
    };
    // a pico user served by its two strongest picos, the rest of the band interfering
    let picos = net.bss_of_tier(Tier::Pico);
    let u = (0..net.users()).max_by(|&a, &b| net.gains.get(a, picos[0]).total_cmp(&net.gains.get(b, picos[0]))).unwrap();
    let mut by_power = picos.clone();
    by_power.sort_by(|&a, &b| net.rx_power(u, b).total_cmp(&net.rx_power(u, a)));
    let pair = Cluster::new(by_power[..2].to_vec()).unwrap();
    let cluster = ProxySetup::from_network(&net, &Band::of(picos), Precoder::Zf, u, &pair).unwrap();

    let mut pass = true;
    let mut parts = Vec::new();
    for (name, base) in [("MRT cell", &cell), ("ZF pair", &cluster)] {
        let errs: Vec<(f64, f64)> = [64, 128, 256]
            .iter()
            .map(|&m| {
                let r = verify_proxy(&resized(base, m), 1000, 2).unwrap();
                (r.rel_error, r.ci_halfwidth / r.empirical_rate)
            })
            .collect();
        let within = errs.iter().all(|e| e.0 <= 0.07);
        // non-increasing up to the Monte Carlo resolution of the larger M
        let monotone = errs.windows(2).all(|w| w[1].0 <= w[0].0 + w[1].1);
        pass &= within && monotone;
        parts.push(format!(
            "{name} {}{}",
            errs.iter().map(|e| format!("{:.2}%", 100.0 * e.0)).collect::<Vec<_>>().join(" > "),
            if monotone { "" } else { " (not monotone)" }
        ));
    }
    outcome(pass, format!("M = 64/128/256, S = M/8: {} (max 7%)", parts.join("; ")))
}

fn two_bs_four_users(seed: u64) -> (ClusterCatalog, Budgets) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for k in 0..4usize {
        let home: &[usize] = if k < 2 { &[0] } else { &[1] };
        entries.push((k, home, rng.random_range(0.5..5.0)));
        entries.push((k, &[0, 1][..], rng.random_range(0.5..6.0)));
    }
    (catalog(4, 2, &entries), Budgets::uniform(2, &[2, 3]))
}

fn c03_num_vs_grid() -> Outcome {
    let (mut gap, mut feas, mut kkt_max) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..3 {
        let (cat, budgets) = two_bs_four_users(seed);
        let (p, a) = solve_ucs(&cat, &budgets, &SolverOptions::default()).unwrap();
        let grid = grid_oracle(&p, &GridOracleOptions::default()).unwrap();
        gap = gap.max((a.objective - grid.refined_utility).abs());
        feas = feas.max(a.feasibility_residual);
        let kkt = kkt_residuals(&p, &a).unwrap();
        kkt_max = kkt_max.max(kkt.stationarity_residual).max(kkt.complementarity_residual);
    }
    outcome(
        gap <= 1e-3 && feas <= 1e-8 && kkt_max <= 1e-4,
        format!("3 instances: |solver - grid| {gap:.1e} (1e-3), feasibility {feas:.1e} (1e-8), KKT {kkt_max:.1e} (1e-4)"),
    )
}

fn c04_cellular_specialization() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let net = desk_network(1000 + seed);
        let cat = build_catalog(&net, &Band::all(&net), Precoder::Zf, 1, CandidateMode::Rich { n_strongest: 3 }).unwrap();
        let (_, ucs) = solve_ucs(&cat, &net.budgets, &SolverOptions::default()).unwrap();
        let (_, cell) = solve_cellular(&cat, &net.budgets, &SolverOptions::default()).unwrap();
        worst = worst.max((ucs.objective - cell.objective).abs());
    }
    outcome(worst <= 1e-6, format!("20 desk instances, L_max = 1: max |U_ucs - U_cell| {worst:.1e} (1e-6)"))
}

fn c05_fractional_bound() -> Outcome {
    let (mut applicable, mut worst_slack, mut violations) = (0, i64::MAX, 0);
    for seed in 0..100 {
        let (cat, budgets) = random_catalog(5000 + seed, 4, 40, 2, CandidateMode::Rich { n_strongest: 3 });
        let (_, a) = solve_ucs(&cat, &budgets, &SolverOptions::default()).unwrap();
        for c in fractional_user_count(&a).values() {
            if let FractionalCount::Applicable { users, clusters } = *c {
                applicable += 1;
                let slack = clusters.max(1) as i64 - 1 - users as i64;
                worst_slack = worst_slack.min(slack);
                violations += (slack < 0) as usize;
            }
        }
    }
    outcome(
        violations == 0 && applicable > 0,
        format!("100 loaded rich instances, {applicable} slack partitions checked, {violations} over N_L - 1, tightest margin {worst_slack}"),
    )
}

fn c06_pilots() -> Outcome {
    let pilots: Vec<usize> = table1().iter().map(pilot_dimensions).collect();
    outcome(pilots == [8, 6, 6, 7], format!("pilot dimensions {pilots:?} (want [8, 6, 6, 7])"))
}

fn c07_validator() -> Outcome {
    let budgets = Budgets::uniform(4, &[2, 3]);
    let rbs = table1();
    let rb3_ucs = validate_rbs(&rbs[2..3], &budgets, Rule::Ucs).is_empty();
    let rb4_ucs = validate_rbs(&rbs[3..4], &budgets, Rule::Ucs).is_empty();
    let rb4_mcs = validate_rbs(&rbs[3..4], &budgets, Rule::Mcs).is_empty();
    outcome(
        rb3_ucs && !rb4_ucs && rb4_mcs,
        format!("RB 3 under UCS valid={rb3_ucs}, RB 4 under UCS valid={rb4_ucs}, RB 4 under MCS valid={rb4_mcs}"),
    )
}

fn c08_scheduler() -> Outcome {
    let budgets = Budgets::uniform(2, &[10, 12]);
    let alphas = [0.5, 0.3, 0.25, 0.8, 0.1, 1.0, 0.37];
    let entries: Vec<(usize, &[usize], f64, f64)> =
        alphas.iter().enumerate().map(|(k, &a)| (k, if k % 2 == 0 { &[0][..] } else { &[1][..] }, 1.0 + k as f64, a)).collect();
    let s = run_schedule(&fixed_alloc(alphas.len(), &budgets, &entries), &budgets, 10_000, &VqParams::default()).unwrap();
    let mut violations = validate_schedule(&s, &budgets, Rule::Ucs).len();
    let worst = alphas.iter().enumerate().map(|(k, &a)| (fraction(&s, k) - a).abs() / a).fold(0.0, f64::max);
    // schedules of solver allocations, single and multi-BS
    for seed in 0..5 {
        let (cat, budgets) = random_catalog(700 + seed, 3, 20, 2, CandidateMode::Rich { n_strongest: 3 });
        let (_, a) = solve_ucs(&cat, &budgets, &SolverOptions::default()).unwrap();
        let s = run_schedule(&dmimo::num::unique_association(&a), &budgets, 10_000, &VqParams::default()).unwrap();
        violations += validate_schedule(&s, &budgets, Rule::Ucs).len();
    }
    outcome(
        worst <= 0.01 && violations == 0,
        format!("T = 1e4: worst relative miss {:.3}% (1%), {violations} violations over 6 schedules", 100.0 * worst),
    )
}

fn c09_three_bs_pairs() -> Outcome {
    let budgets = Budgets::uniform(3, &[2, 3]);
    let pairs: [&[usize]; 3] = [&[0, 1], &[0, 2], &[1, 2]];
    let entries: Vec<(usize, &[usize], f64, f64)> = (0..9).map(|k| (k, pairs[k % 3], 1.0, 1.0)).collect();
    let s = run_schedule(&fixed_alloc(9, &budgets, &entries), &budgets, 10_000, &VqParams::default()).unwrap();
    let full = s
        .rbs
        .iter()
        .filter(|rb| {
            let mut load = [0; 3];
            for set in &rb.sets {
                for &j in set.cluster.members() {
                    load[j] += set.users.len();
                }
            }
            load == [3, 3, 3]
        })
        .count();
    let realized: Vec<f64> = (0..3).map(|j| s.realized.iter().filter(|r| r.cluster.contains(j)).map(|r| r.fraction).sum()).collect();
    let strict = realized.iter().any(|&l| l < 3.0 - 1e-9);
    outcome(
        full == 0 && strict,
        format!("{full} of {} RBs with all three BSs at load 3; realized loads {:.3?}", s.rbs.len(), realized),
    )
}

fn c10_desk_trends() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let out = run_pipeline(&cfg).unwrap();
    let elapsed = start.elapsed();
    let mut pass = elapsed <= Duration::from_secs(600);
    let mut parts = Vec::new();
    for scenario in [Scenario::Shared, Scenario::Split] {
        let c = &out.report.scenarios[&scenario].comparison;
        let (u, v, g) = (c.unique_ratio.unwrap(), c.vq_ratio.unwrap(), c.p5_gain.unwrap());
        pass &= u >= 0.98 && v >= 0.85 && g >= 1.5 && c.schedule_violations == Some(0);
        parts.push(format!("{}: unique/NUM {u:.3} (0.98), VQ/NUM {v:.3} (0.85), P5 gain {g:.2} (1.5)", scenario.name()));
    }
    outcome(pass, format!("{}; {:.1}s (600s)", parts.join("; "), elapsed.as_secs_f64()))
}

fn csv_files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn c11_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { seed: 17, ..ExperimentConfig::default() };
    let runs: Vec<BTreeMap<PathBuf, Vec<u8>>> = ["a", "b"]
        .iter()
        .map(|name| {
            let dir = tmp.path().join(name);
            write_outputs(&run_pipeline(&cfg).unwrap(), &dir, true).unwrap();
            csv_files(&dir)
        })
        .collect();
    let differing: Vec<String> =
        runs[0].iter().filter(|(p, bytes)| runs[1].get(*p) != Some(bytes)).map(|(p, _)| p.display().to_string()).collect();
    outcome(
        differing.is_empty() && runs[0].len() == runs[1].len() && !runs[0].is_empty(),
        format!("{} CSV files compared, {} differ {differing:?}", runs[0].len(), differing.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("1  proxy fidelity, ZF cell", c01_zf_cell),
        ("2  proxy fidelity, MRT and ZF pair", c02_mrt_and_cluster),
        ("3  NUM against grid oracle", c03_num_vs_grid),
        ("4  cellular specialization", c04_cellular_specialization),
        ("5  fractional-user bound", c05_fractional_bound),
        ("6  pilot accounting", c06_pilots),
        ("7  schedule validator", c07_validator),
        ("8  scheduler convergence", c08_scheduler),
        ("9  three-BS pair example", c09_three_bs_pairs),
        ("10 desk trends", c10_desk_trends),
        ("11 determinism", c11_determinism),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let (pass, detail) = match panic::catch_unwind(AssertUnwindSafe(run)) {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("panicked: {}", e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())),
        };
        failed += !pass as usize;
        println!("criterion {name:<38} {}  {detail}", if pass { "PASS" } else { "FAIL" });
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
