use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::rates::{build_catalog, Band, CandidateMode, Cluster, Precoder};
use crate::testutil::{catalog, random_network};

fn opts() -> SolverOptions {
    SolverOptions::default()
}

fn value(a: &Allocation, user: usize, members: &[usize]) -> f64 {
    let c = Cluster::new(members.to_vec()).unwrap();
    a.x.iter().filter(|v| v.user == user && v.cluster == c).map(|v| v.value).sum()
}

fn random_catalog(seed: u64, bss: usize, users: usize, l_max: usize, mode: CandidateMode) -> (ClusterCatalog, Budgets) {
    let table: Vec<usize> = [2, 3, 4, 5][..l_max].to_vec();
    let net = random_network(seed, bss, users, 8, &table);
    let cat = build_catalog(&net, &Band::all(&net), Precoder::Zf, l_max, mode).unwrap();
    (cat, net.budgets)
}

/// 2 BSs, 4 users, sizes 1 and 2 with budgets 2 and 3.
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

#[test]
fn one_bs_two_users_fully_served() {
    let cat = catalog(2, 1, &[(0, &[0], 1.0), (1, &[0], 3.0)]);
    let (_, a) = solve_ucs(&cat, &Budgets::uniform(1, &[2]), &opts()).unwrap();
    assert_relative_eq!(a.partitions[0].lambda, 1.0, epsilon = 1e-7);
    assert_relative_eq!(value(&a, 0, &[0]), 1.0, epsilon = 1e-7);
    assert_relative_eq!(value(&a, 1, &[0]), 1.0, epsilon = 1e-7);
    assert_relative_eq!(a.objective, 3f64.ln(), epsilon = 1e-7);
}

#[test]
fn one_bs_three_users_share_equally() {
    let cat = catalog(3, 1, &[(0, &[0], 1.0), (1, &[0], 5.0), (2, &[0], 0.3)]);
    let (_, a) = solve_ucs(&cat, &Budgets::uniform(1, &[2]), &opts()).unwrap();
    for k in 0..3 {
        assert_relative_eq!(value(&a, k, &[0]), 2.0 / 3.0, epsilon = 1e-7);
    }
}

#[test]
fn matches_grid_oracle_on_two_bs_four_users() {
    for seed in 0..3 {
        let (cat, budgets) = two_bs_four_users(seed);
        let (p, a) = solve_ucs(&cat, &budgets, &opts()).unwrap();
        let grid = grid_oracle(&p, &GridOracleOptions::default()).unwrap();
        assert!(a.objective >= grid.coarse_utility - 1e-9, "seed {seed}: {} < {}", a.objective, grid.coarse_utility);
        assert!((a.objective - grid.refined_utility).abs() <= 1e-3, "seed {seed}: {} vs {}", a.objective, grid.refined_utility);
        let kkt = kkt_residuals(&p, &a).unwrap();
        assert!(kkt.stationarity_residual <= 1e-4, "{kkt:?}");
        assert!(kkt.complementarity_residual <= 1e-4, "{kkt:?}");
        assert!(kkt.nu.iter().all(|m| m.value >= 0.0) && kkt.mu.iter().all(|m| m.value >= 0.0));
    }
}

#[test]
fn oracle_rejects_large_instances() {
    let (cat, budgets) = random_catalog(1, 3, 6, 2, CandidateMode::Strongest);
    let p = NumProblem::ucs(&cat, &budgets).unwrap();
    assert!(matches!(grid_oracle(&p, &GridOracleOptions::default()), Err(crate::Error::OracleTooLarge(_))));
}

#[test]
fn perturbed_point_has_positive_residual() {
    let (cat, budgets) = two_bs_four_users(7);
    let (p, a) = solve_ucs(&cat, &budgets, &opts()).unwrap();
    let mut half = a.clone();
    for v in &mut half.x {
        v.value *= 0.5;
    }
    let kkt = kkt_residuals(&p, &half).unwrap();
    assert!(kkt.stationarity_residual > 1e-2, "{kkt:?}");
}

#[test]
fn single_user_binds_user_cap() {
    let cat = catalog(1, 1, &[(0, &[0], 2.5)]);
    let (p, a) = solve_ucs(&cat, &Budgets::uniform(1, &[2]), &opts()).unwrap();
    assert_relative_eq!(value(&a, 0, &[0]), 1.0, epsilon = 1e-7);
    let kkt = kkt_residuals(&p, &a).unwrap();
    assert!(kkt.stationarity_residual <= 1e-8 && kkt.complementarity_residual <= 1e-8);
    assert_relative_eq!(kkt.mu[0].value, 1.0, epsilon = 1e-6);
    assert_eq!(kkt.nu[0].value, 0.0);
}

#[test]
fn specializes_to_cellular_with_l_max_one() {
    for seed in 0..4 {
        let (cat, budgets) = random_catalog(seed, 3, 12, 1, CandidateMode::Rich { n_strongest: 3 });
        let (_, ucs) = solve_ucs(&cat, &budgets, &opts()).unwrap();
        let (_, cell) = solve_cellular(&cat, &budgets, &opts()).unwrap();
        assert!((ucs.objective - cell.objective).abs() <= 1e-6, "{} vs {}", ucs.objective, cell.objective);
    }
}

#[test]
fn mcs_boundaries() {
    let (cat, budgets) = random_catalog(3, 3, 10, 2, CandidateMode::Strongest);
    let (_, clustered) = solve_mcs(&cat, &budgets, ShareMode::Clustered, &opts()).unwrap();
    let (_, ucs2) = solve_ucs(&cat.filter_sizes(|l| l >= 2), &budgets, &opts()).unwrap();
    assert!((clustered.objective - ucs2.objective).abs() <= 1e-6);

    let (_, cellular) = solve_mcs(&cat, &budgets, ShareMode::Cellular, &opts()).unwrap();
    let (_, cell) = solve_cellular(&cat, &budgets, &opts()).unwrap();
    assert!((cellular.objective - cell.objective).abs() <= 1e-6);

    let (p, free) = solve_mcs(&cat, &budgets, ShareMode::Free, &opts()).unwrap();
    assert!(free.objective >= clustered.objective.max(cellular.objective) - 1e-7);
    assert!(free.feasibility_residual <= 1e-8);
    assert!(kkt_residuals(&p, &free).unwrap().stationarity_residual <= 1e-4);
    assert!(solve_mcs(&cat.filter_sizes(|l| l == 1), &budgets, ShareMode::Free, &opts()).is_ok());
    let one = ClusterCatalog { l_max: 1, ..cat.filter_sizes(|l| l == 1) };
    assert!(solve_mcs(&one, &budgets, ShareMode::Free, &opts()).is_err());
}

#[test]
fn orthogonal_split_boundaries_and_envelope() {
    let (cat, budgets) = random_catalog(5, 4, 14, 2, CandidateMode::Strongest);
    // BS 0 plays the macro; the pico catalog keeps clusters without it
    let macro_cat = cat.filter_sizes(|l| l == 1);
    let macro_cat = ClusterCatalog {
        l_max: 1,
        entries: macro_cat.entries.into_iter().filter(|e| e.cluster.members() == [0]).collect(),
        ..cat.clone()
    };
    let pico_cat = ClusterCatalog {
        entries: cat.entries.iter().filter(|e| !e.cluster.contains(0)).cloned().collect(),
        ..cat.clone()
    };
    let (_, full) = solve_orthogonal_split(&macro_cat, &pico_cat, &budgets, 1.0, &opts()).unwrap();
    let (_, cell) = solve_cellular(&macro_cat, &budgets, &opts()).unwrap();
    assert!((full.objective - cell.objective).abs() <= 1e-6);

    let (_, none) = solve_orthogonal_split(&macro_cat, &pico_cat, &budgets, 0.0, &opts()).unwrap();
    let (_, ucs) = solve_ucs(&pico_cat, &budgets, &opts()).unwrap();
    assert!((none.objective - ucs.objective).abs() <= 1e-6);

    let sweep: Vec<f64> = (1..10)
        .map(|i| solve_orthogonal_split(&macro_cat, &pico_cat, &budgets, i as f64 / 10.0, &opts()).unwrap().1.objective)
        .collect();
    let best = sweep.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(sweep.iter().all(|&u| u.is_finite() && u <= best));
    assert!(solve_orthogonal_split(&macro_cat, &pico_cat, &budgets, 1.5, &opts()).is_err());
}

#[test]
fn orphans_are_dropped_not_fatal() {
    let cat = catalog(3, 1, &[(0, &[0], 1.0), (1, &[0], 0.0), (2, &[0], 2.0)]);
    let (p, a) = solve_ucs(&cat, &Budgets::uniform(1, &[2]), &opts()).unwrap();
    assert_eq!(p.orphans, vec![1]);
    assert_eq!(a.orphans, vec![1]);
    assert!(a.objective.is_finite());
    let all = catalog(1, 1, &[(0, &[0], 0.0)]);
    assert!(matches!(solve_ucs(&all, &Budgets::uniform(1, &[2]), &opts()), Err(crate::Error::OrphanUsers(v)) if v == vec![0]));
}

#[test]
fn unique_association_examples() {
    let cat = catalog(2, 2, &[(0, &[0, 1], 1.0), (0, &[0, 2], 1.0), (1, &[0, 1], 1.0), (1, &[0, 2], 1.0)]);
    let p = NumProblem::ucs(&cat, &Budgets::uniform(3, &[2, 3])).unwrap();
    let mut a = Allocation::from_problem(&p, &p.interior_point(), None);
    let set = |a: &mut Allocation, k: usize, m: &[usize], v: f64| {
        let c = Cluster::new(m.to_vec()).unwrap();
        a.x.iter_mut().find(|x| x.user == k && x.cluster == c).unwrap().value = v;
    };
    set(&mut a, 0, &[0, 1], 0.3);
    set(&mut a, 0, &[0, 2], 0.1);
    set(&mut a, 1, &[0, 1], 0.2);
    set(&mut a, 1, &[0, 2], 0.2);
    let u = unique_association(&a);
    assert_eq!(value(&u, 0, &[0, 1]), 0.3);
    assert_eq!(value(&u, 0, &[0, 2]), 0.0);
    assert_eq!(value(&u, 1, &[0, 1]), 0.2);
    assert_eq!(value(&u, 1, &[0, 2]), 0.0);
    assert_eq!(u.partitions, a.partitions);
    assert_eq!(u.duality_gap, None);

    set(&mut a, 1, &[0, 1], 0.0);
    set(&mut a, 1, &[0, 2], 0.0);
    let u = unique_association(&a);
    assert_eq!(u.unserved(0.0), vec![1]);
}

#[test]
fn fractional_count_gates() {
    // strongest mode: one candidate per user and size
    let (cat, budgets) = random_catalog(11, 3, 30, 2, CandidateMode::Strongest);
    let (_, a) = solve_ucs(&cat, &budgets, &opts()).unwrap();
    for c in fractional_user_count(&a).values() {
        assert!(matches!(c, FractionalCount::Applicable { users: 0, .. } | FractionalCount::NotApplicable));
    }
    // two users on one BS with budget 2: the user caps bind
    let cat = catalog(2, 1, &[(0, &[0], 1.0), (1, &[0], 3.0)]);
    let (_, a) = solve_ucs(&cat, &Budgets::uniform(1, &[2]), &opts()).unwrap();
    assert_eq!(fractional_user_count(&a)[&0], FractionalCount::NotApplicable);
}

#[test]
fn fractional_user_bound_on_loaded_rich_instances() {
    let mut applicable = 0;
    for seed in 0..20 {
        let (cat, budgets) = random_catalog(100 + seed, 4, 40, 2, CandidateMode::Rich { n_strongest: 3 });
        let (_, a) = solve_ucs(&cat, &budgets, &opts()).unwrap();
        for (p, c) in fractional_user_count(&a) {
            if let FractionalCount::Applicable { users, clusters } = c {
                applicable += 1;
                assert!(users + 1 <= clusters.max(1), "seed {seed} partition {p}: {users} users over {clusters} clusters");
            }
        }
    }
    assert!(applicable > 0);
}

#[test]
fn adding_a_candidate_never_hurts() {
    let (cat, budgets) = random_catalog(21, 3, 12, 2, CandidateMode::Rich { n_strongest: 3 });
    let mut fewer = cat.clone();
    fewer.entries.retain(|e| !(e.user == 0 && e.cluster.size() == 2));
    let (_, a) = solve_ucs(&cat, &budgets, &opts()).unwrap();
    let (_, b) = solve_ucs(&fewer, &budgets, &opts()).unwrap();
    assert!(a.objective >= b.objective - 1e-8);
}

#[test]
fn json_export_layout() {
    let (cat, budgets) = two_bs_four_users(0);
    let (_, a) = solve_ucs(&cat, &budgets, &opts()).unwrap();
    let j = a.to_json();
    assert!(j["lambda"]["1"].is_number() && j["lambda"]["2"].is_number());
    assert_eq!(j["x"].as_array().unwrap().len(), 8);
    assert!(j["residuals"]["feasibility"].as_f64().unwrap() <= 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn solver_output_is_feasible_and_certified(seed in 0u64..10_000, bss in 1usize..4, users in 1usize..15, l_max in 1usize..3) {
        let l_max = l_max.min(bss);
        let (cat, budgets) = random_catalog(seed, bss, users, l_max, CandidateMode::Strongest);
        let (p, a) = solve_ucs(&cat, &budgets, &opts()).unwrap();
        prop_assert!(a.feasibility_residual <= 1e-8);
        prop_assert!(a.duality_gap.unwrap() <= 1e-9);
        let sum: f64 = a.partitions.iter().map(|q| q.lambda).sum();
        prop_assert!(sum <= 1.0 + 1e-8);
        prop_assert!(kkt_residuals(&p, &a).unwrap().stationarity_residual <= 1e-4);
    }
}

#[test]
fn structured_newton_matches_dense() {
    let with = |linear| SolverOptions { linear, ..opts() };
    for seed in 0..4 {
        let (cat, budgets) = random_catalog(100 + seed, 5, 18, 3, CandidateMode::Rich { n_strongest: 4 });
        let problems = [
            NumProblem::ucs(&cat, &budgets).unwrap(),
            NumProblem::cellular(&cat.filter_sizes(|l| l == 1), &budgets).unwrap(),
            NumProblem::mcs(&cat, &budgets, ShareMode::Free).unwrap(),
        ];
        for p in &problems {
            let d = solve(p, &with(LinearSolve::Dense)).unwrap();
            let s = solve(p, &with(LinearSolve::Structured)).unwrap();
            assert!((d.utility - s.utility).abs() <= 1e-7 * d.utility.abs().max(1.0), "{:?}: {} vs {}", p.architecture, d.utility, s.utility);
            assert!(s.duality_gap <= 1e-9);
            assert!(p.max_violation(&s.z) <= 1e-8);
        }
    }
}
