//! Deterministic peak-rate proxies for cellular and distributed-MIMO service.
//!
//! A user served by a cluster of BSs receives the same coded stream from
//! every member, each member beamforming locally as if it were running
//! cellular MU-MIMO over its own `S_j(L)` users. In the large-array regime
//! the resulting SINR concentrates, so every (user, cluster) pair gets a
//! fixed rate that does not depend on who else is scheduled.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{BsId, Network, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precoder {
    Zf,
    Mrt,
}

impl std::str::FromStr for Precoder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zf" | "lzfbf" => Ok(Precoder::Zf),
            "mrt" => Ok(Precoder::Mrt),
            other => Err(Error::Config(format!("unknown precoder {other:?}"))),
        }
    }
}

/// A set of BSs jointly serving a user, members kept sorted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Cluster(Vec<BsId>);

impl Cluster {
    pub fn new(mut members: Vec<BsId>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::EmptyCluster);
        }
        members.sort_unstable();
        members.dedup();
        Ok(Self(members))
    }

    pub fn single(j: BsId) -> Self {
        Self(vec![j])
    }

    pub fn members(&self) -> &[BsId] {
        &self.0
    }

    pub fn size(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, j: BsId) -> bool {
        self.0.binary_search(&j).is_ok()
    }

    /// Members joined with `;`, as written in CSV exports.
    pub fn joined(&self) -> String {
        self.0.iter().map(ToString::to_string).collect::<Vec<_>>().join(";")
    }

    pub fn parse(s: &str) -> Result<Self> {
        let members = s
            .split(';')
            .map(|t| t.trim().parse::<BsId>().map_err(|e| Error::Config(format!("bad cluster {s:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(members)
    }
}

impl fmt::Display for Cluster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.joined())
    }
}

/// Beamforming gain factor `(M - S + 1) / S` of zero-forcing with `S` users on `M` antennas.
pub fn beam_gain(antennas: usize, served: usize) -> Result<f64> {
    if served == 0 || served > antennas {
        return Err(Error::BudgetOutOfRange { antennas, served });
    }
    Ok((antennas - served + 1) as f64 / served as f64)
}

/// One in-cluster link as seen by the rate formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkTerm {
    pub power: f64,
    pub beta: f64,
    pub antennas: usize,
    /// `S_j(|C|)`, the number of users sharing this BS's power on an RB.
    pub served: usize,
}

/// ZF peak rate from the in-cluster links, out-of-cluster received power and noise.
pub fn zf_rate(links: &[LinkTerm], interference: f64, noise: f64) -> Result<f64> {
    if links.is_empty() {
        return Err(Error::EmptyCluster);
    }
    // Σ_j Σ_l sqrt(a_j a_l) = (Σ_j sqrt(a_j))²
    let mut amp = 0.0;
    for l in links {
        amp += (l.power * l.beta * beam_gain(l.antennas, l.served)?).sqrt();
    }
    Ok((amp * amp / (noise + interference)).ln_1p() / std::f64::consts::LN_2)
}

/// MRT peak rate; the intra-cluster interference term is built from `links`.
pub fn mrt_rate(links: &[LinkTerm], interference: f64, noise: f64) -> Result<f64> {
    if links.is_empty() {
        return Err(Error::EmptyCluster);
    }
    let mut amp = 0.0;
    let mut intra = 0.0;
    for l in links {
        beam_gain(l.antennas, l.served)?;
        let s = l.served as f64;
        amp += (l.power * l.antennas as f64 * l.beta / s).sqrt();
        intra += (s - 1.0) / s * l.power * l.beta;
    }
    Ok((amp * amp / (noise + intra + interference)).ln_1p() / std::f64::consts::LN_2)
}

/// BSs that share the band; out-of-cluster interference sums over these.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Band(Vec<BsId>);

impl Band {
    pub fn all(net: &Network) -> Self {
        Self((0..net.bss()).collect())
    }

    pub fn of(mut bss: Vec<BsId>) -> Self {
        bss.sort_unstable();
        bss.dedup();
        Self(bss)
    }

    pub fn members(&self) -> &[BsId] {
        &self.0
    }

    pub fn contains(&self, j: BsId) -> bool {
        self.0.binary_search(&j).is_ok()
    }
}

fn cluster_terms(net: &Network, k: UserId, cluster: &Cluster) -> Result<Vec<LinkTerm>> {
    let size = cluster.size();
    cluster
        .members()
        .iter()
        .map(|&j| {
            Ok(LinkTerm {
                power: net.powers[j],
                beta: net.gains.get(k, j),
                antennas: net.antennas[j],
                served: net.budgets.get(j, size)?,
            })
        })
        .collect()
}

fn out_of_cluster(net: &Network, k: UserId, cluster: &Cluster, band: &Band) -> f64 {
    band.members()
        .iter()
        .filter(|&&j| !cluster.contains(j))
        .map(|&j| net.rx_power(k, j))
        .sum()
}

pub fn peak_rate(precoder: Precoder, net: &Network, k: UserId, cluster: &Cluster, band: &Band) -> Result<f64> {
    let terms = cluster_terms(net, k, cluster)?;
    let interference = out_of_cluster(net, k, cluster, band);
    match precoder {
        Precoder::Zf => zf_rate(&terms, interference, net.gains.noise_power),
        Precoder::Mrt => mrt_rate(&terms, interference, net.gains.noise_power),
    }
}

/// ZF peak rate with every BS in the network on the same band.
pub fn zf_peak_rate(net: &Network, k: UserId, cluster: &Cluster) -> Result<f64> {
    peak_rate(Precoder::Zf, net, k, cluster, &Band::all(net))
}

pub fn mrt_peak_rate(net: &Network, k: UserId, cluster: &Cluster) -> Result<f64> {
    peak_rate(Precoder::Mrt, net, k, cluster, &Band::all(net))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum CandidateMode {
    /// One cluster per size: the `L` strongest BSs by received power.
    Strongest,
    /// Every size-`L` subset of the user's `n_strongest` strongest BSs.
    Rich { n_strongest: usize },
}

/// BSs of `band` ordered by received power at user `k`, strongest first.
fn ranked_bss(net: &Network, k: UserId, band: &Band) -> Vec<BsId> {
    let mut order = band.members().to_vec();
    order.sort_by(|&a, &b| net.rx_power(k, b).total_cmp(&net.rx_power(k, a)).then(a.cmp(&b)));
    order
}

fn subsets(pool: &[BsId], size: usize, out: &mut Vec<Cluster>) {
    fn rec(pool: &[BsId], size: usize, start: usize, cur: &mut Vec<BsId>, out: &mut Vec<Cluster>) {
        if cur.len() == size {
            out.push(Cluster::new(cur.clone()).expect("non-empty"));
            return;
        }
        for i in start..pool.len() {
            cur.push(pool[i]);
            rec(pool, size, i + 1, cur, out);
            cur.pop();
        }
    }
    rec(pool, size, 0, &mut Vec::with_capacity(size), out);
}

/// Candidate clusters for user `k`; entry `L - 1` holds the size-`L` candidates.
pub fn enumerate_candidates(
    net: &Network,
    k: UserId,
    band: &Band,
    l_max: usize,
    mode: CandidateMode,
) -> Result<Vec<Vec<Cluster>>> {
    let ranked = ranked_bss(net, k, band);
    let pool = match mode {
        CandidateMode::Strongest => ranked.len(),
        CandidateMode::Rich { n_strongest } => {
            if n_strongest < l_max {
                return Err(Error::Config(format!("n_strongest {n_strongest} < l_max {l_max}")));
            }
            n_strongest.min(ranked.len())
        }
    };
    Ok((1..=l_max)
        .map(|size| {
            let mut out = Vec::new();
            if size <= pool {
                match mode {
                    CandidateMode::Strongest => out.push(Cluster::new(ranked[..size].to_vec()).expect("non-empty")),
                    CandidateMode::Rich { .. } => {
                        subsets(&ranked[..pool], size, &mut out);
                        out.sort();
                    }
                }
            }
            out
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub user: UserId,
    pub cluster: Cluster,
    pub rate: f64,
}

/// Candidate clusters and their peak rates for every user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCatalog {
    pub l_max: usize,
    pub users: usize,
    pub precoder: Precoder,
    /// Sorted by user, then cluster size, then members.
    pub entries: Vec<CatalogEntry>,
}

impl ClusterCatalog {
    pub fn for_user(&self, k: UserId) -> impl Iterator<Item = &CatalogEntry> {
        self.entries.iter().filter(move |e| e.user == k)
    }

    pub fn candidates(&self, k: UserId, size: usize) -> Vec<&Cluster> {
        self.for_user(k).filter(|e| e.cluster.size() == size).map(|e| &e.cluster).collect()
    }

    pub fn rate(&self, k: UserId, cluster: &Cluster) -> Option<f64> {
        self.for_user(k).find(|e| &e.cluster == cluster).map(|e| e.rate)
    }

    /// Users with no candidate of positive rate.
    pub fn orphans(&self) -> Vec<UserId> {
        let mut served = vec![false; self.users];
        for e in &self.entries {
            if e.rate > 0.0 {
                served[e.user] = true;
            }
        }
        (0..self.users).filter(|&k| !served[k]).collect()
    }

    /// Distinct clusters of each size that appear in the catalog.
    pub fn clusters_by_size(&self) -> BTreeMap<usize, Vec<Cluster>> {
        let mut out: BTreeMap<usize, Vec<Cluster>> = BTreeMap::new();
        for e in &self.entries {
            out.entry(e.cluster.size()).or_default().push(e.cluster.clone());
        }
        for v in out.values_mut() {
            v.sort();
            v.dedup();
        }
        out
    }

    /// Keeps only entries of cluster sizes accepted by `keep`.
    pub fn filter_sizes(&self, keep: impl Fn(usize) -> bool) -> Self {
        Self {
            entries: self.entries.iter().filter(|e| keep(e.cluster.size())).cloned().collect(),
            ..self.clone()
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["user_id", "cluster_members", "L", "rate_bps_hz"])?;
        for e in &self.entries {
            out.write_record([
                e.user.to_string(),
                e.cluster.joined(),
                e.cluster.size().to_string(),
                e.rate.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Peak rates for every (user, candidate cluster) pair drawn from `band`.
pub fn build_catalog(
    net: &Network,
    band: &Band,
    precoder: Precoder,
    l_max: usize,
    mode: CandidateMode,
) -> Result<ClusterCatalog> {
    let mut entries = Vec::new();
    for k in 0..net.users() {
        for clusters in enumerate_candidates(net, k, band, l_max, mode)? {
            for cluster in clusters {
                let rate = peak_rate(precoder, net, k, &cluster, band)?;
                entries.push(CatalogEntry { user: k, cluster, rate });
            }
        }
    }
    Ok(ClusterCatalog { l_max, users: net.users(), precoder, entries })
}
