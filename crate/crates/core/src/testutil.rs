//! Small synthetic instances shared by unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::rates::{Cluster, CatalogEntry, ClusterCatalog, Precoder};
use crate::topology::{Budgets, LinkGainMap, Network, Tier};

/// `entries`: (user, members, rate).
pub fn catalog(users: usize, l_max: usize, entries: &[(usize, &[usize], f64)]) -> ClusterCatalog {
    let mut entries: Vec<CatalogEntry> = entries
        .iter()
        .map(|&(user, m, rate)| CatalogEntry { user, cluster: Cluster::new(m.to_vec()).unwrap(), rate })
        .collect();
    entries.sort_by(|a, b| (a.user, a.cluster.size(), &a.cluster).cmp(&(b.user, b.cluster.size(), &b.cluster)));
    ClusterCatalog { l_max, users, precoder: Precoder::Zf, entries }
}

/// Unit powers and noise, log-uniform gains over three decades.
pub fn random_network(seed: u64, bss: usize, users: usize, antennas: usize, table: &[usize]) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta = (0..users).map(|_| (0..bss).map(|_| 10f64.powf(rng.random_range(-2.0..1.0))).collect()).collect();
    Network {
        powers: vec![1.0; bss],
        antennas: vec![antennas; bss],
        tiers: vec![Tier::Pico; bss],
        budgets: Budgets::uniform(bss, table),
        gains: LinkGainMap { beta, noise_power: 1.0, layout_extent: 1000.0, seed },
    }
}
