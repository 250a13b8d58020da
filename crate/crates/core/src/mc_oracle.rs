//! Monte Carlo check of the peak-rate proxies.
//!
//! Channels are `g_kj = √β_kj h_kj` with `h_kj ~ CN(0, I)`. Every BS builds
//! its beams locally over the users it serves (ZF: normalized columns of
//! `G (GᴴG)⁻¹`, MRT: `g / ‖g‖`), splits its power evenly over them, and all
//! BSs of a cluster send the same stream. Interference from a stream is
//! summed coherently over the BSs that carry it.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rates::{mrt_rate, zf_rate, Band, Cluster, LinkTerm, Precoder};
use crate::scheduler::Rb;
use crate::seed::derive;
use crate::topology::{BsId, Network, UserId};

const MAX_REDRAWS: usize = 10;

/// Fast-fading vectors `h_kj` for the (user, BS) pairs of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingDraw {
    pub h: BTreeMap<(UserId, BsId), DVector<Complex64>>,
    pub trial: u64,
}

impl FadingDraw {
    /// Each pair gets its own ChaCha stream keyed by (seed, user, BS, attempt)
    /// and positioned by the trial, so draws do not depend on evaluation order.
    pub fn generate(pairs: &BTreeSet<(UserId, BsId)>, antennas: impl Fn(BsId) -> usize, seed: u64, trial: u64, attempt: u64) -> Self {
        let scale = std::f64::consts::FRAC_1_SQRT_2;
        let h = pairs
            .iter()
            .map(|&(k, j)| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, &[k as u64, j as u64, attempt]));
                rng.set_stream(trial);
                let v = DVector::from_fn(antennas(j), |_, _| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    Complex64::new(re * scale, im * scale)
                });
                ((k, j), v)
            })
            .collect();
        Self { h, trial }
    }

    pub fn get(&self, k: UserId, j: BsId) -> Result<&DVector<Complex64>> {
        self.h.get(&(k, j)).ok_or_else(|| Error::Mismatch(format!("no fading draw for user {k} at BS {j}")))
    }
}

/// Unit-norm ZF beams, one column per column of `g`.
pub fn zf_precoder(g: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    if g.ncols() == 0 || g.ncols() > g.nrows() {
        return Err(Error::Degenerate(format!("{} users on {} antennas", g.ncols(), g.nrows())));
    }
    let gram = g.adjoint() * g;
    let chol = gram.cholesky().ok_or_else(|| Error::Degenerate("channel matrix is rank deficient".into()))?;
    let diag: Vec<f64> = chol.l_dirty().diagonal().iter().map(|d| d.re).collect();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    if !(lo > 1e-7 * hi) {
        return Err(Error::Degenerate("channel matrix is numerically rank deficient".into()));
    }
    let mut f = g * chol.inverse();
    for mut col in f.column_iter_mut() {
        let n = col.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::Degenerate("zero ZF beam".into()));
        }
        col /= Complex64::new(n, 0.0);
    }
    Ok(f)
}

/// `g / ‖g‖`.
pub fn mrt_precoder(g: &DVector<Complex64>) -> Result<DVector<Complex64>> {
    let n = g.norm();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::Degenerate("MRT beam for a zero channel".into()));
    }
    Ok(g / Complex64::new(n, 0.0))
}

/// Large-scale parameters seen by `rb_sinr`.
pub trait LargeScale {
    fn beta(&self, k: UserId, j: BsId) -> f64;
    fn power(&self, j: BsId) -> f64;
    fn noise(&self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinrTerms {
    /// `|Σ_{j∈C} √(P_j/N_j) g_kjᴴ f_kj|²`
    pub desired: f64,
    /// Streams sharing at least one BS with the serving cluster.
    pub intra: f64,
    /// Streams carried only by BSs outside the cluster.
    pub inter: f64,
    pub noise: f64,
}

impl SinrTerms {
    pub fn sinr(&self) -> f64 {
        self.desired / (self.noise + self.intra + self.inter)
    }
}

/// The BSs transmitting on `rb` with their served users, ascending.
fn served_by_bs(rb: &Rb) -> BTreeMap<BsId, Vec<(UserId, usize)>> {
    let mut out: BTreeMap<BsId, Vec<(UserId, usize)>> = BTreeMap::new();
    for (si, s) in rb.sets.iter().enumerate() {
        for &j in s.cluster.members() {
            out.entry(j).or_default().extend(s.users.iter().map(|&u| (u, si)));
        }
    }
    for v in out.values_mut() {
        v.sort_unstable();
    }
    out
}

/// (user, BS) pairs whose fading `rb_sinr` needs for the listed targets.
pub fn required_pairs(rb: &Rb, targets: &[UserId]) -> BTreeSet<(UserId, BsId)> {
    let served = served_by_bs(rb);
    let mut pairs = BTreeSet::new();
    for (&j, users) in &served {
        for &(u, _) in users {
            pairs.insert((u, j));
        }
        for &k in targets {
            pairs.insert((k, j));
        }
    }
    pairs
}

/// Beams of every transmitting BS: user ↦ (column of F_j), keyed by BS.
type Beams = BTreeMap<BsId, BTreeMap<UserId, DVector<Complex64>>>;

fn beams(precoder: Precoder, rb: &Rb, draw: &FadingDraw, ls: &impl LargeScale) -> Result<Beams> {
    let mut out = Beams::new();
    for (j, users) in served_by_bs(rb) {
        let cols: Vec<DVector<Complex64>> = users
            .iter()
            .map(|&(u, _)| Ok(draw.get(u, j)? * Complex64::new(ls.beta(u, j).sqrt(), 0.0)))
            .collect::<Result<_>>()?;
        let per_user = match precoder {
            Precoder::Zf => {
                let f = zf_precoder(&DMatrix::from_columns(&cols))?;
                users.iter().enumerate().map(|(c, &(u, _))| (u, f.column(c).into_owned())).collect()
            }
            Precoder::Mrt => users.iter().zip(&cols).map(|(&(u, _), g)| Ok((u, mrt_precoder(g)?))).collect::<Result<_>>()?,
        };
        out.insert(j, per_user);
    }
    Ok(out)
}

fn terms_with(rb: &Rb, k: UserId, beams: &Beams, draw: &FadingDraw, ls: &impl LargeScale) -> Result<SinrTerms> {
    let set = rb
        .sets
        .iter()
        .find(|s| s.users.contains(&k))
        .ok_or_else(|| Error::Mismatch(format!("user {k} is not scheduled on this RB")))?;
    let cluster = &set.cluster;
    let amp = |j: BsId, u: UserId| -> Result<Complex64> {
        let n = beams[&j].len() as f64;
        let g = draw.get(k, j)? * Complex64::new(ls.beta(k, j).sqrt(), 0.0);
        Ok(g.dotc(&beams[&j][&u]) * (ls.power(j) / n).sqrt())
    };
    let mut desired = Complex64::new(0.0, 0.0);
    for &j in cluster.members() {
        desired += amp(j, k)?;
    }
    // each interfering stream with the BSs carrying it
    let mut streams: BTreeMap<UserId, Vec<BsId>> = BTreeMap::new();
    for (&j, users) in beams {
        for &u in users.keys() {
            if u != k {
                streams.entry(u).or_default().push(j);
            }
        }
    }
    let (mut intra, mut inter) = (0.0, 0.0);
    for (u, carriers) in streams {
        let mut a = Complex64::new(0.0, 0.0);
        for &j in &carriers {
            a += amp(j, u)?;
        }
        if carriers.iter().any(|&j| cluster.contains(j)) {
            intra += a.norm_sqr();
        } else {
            inter += a.norm_sqr();
        }
    }
    Ok(SinrTerms { desired: desired.norm_sqr(), intra, inter, noise: ls.noise() })
}

/// Received-signal SINR terms of user `k` on `rb` for one fading draw.
pub fn rb_sinr(precoder: Precoder, k: UserId, rb: &Rb, draw: &FadingDraw, ls: &impl LargeScale) -> Result<SinrTerms> {
    let b = beams(precoder, rb, draw, ls)?;
    terms_with(rb, k, &b, draw, ls)
}

/// One BS of a proxy check, as seen by the target user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleBs {
    pub antennas: usize,
    pub power: f64,
    /// Users sharing the BS on the RB (`S_j(L)`), the target included when in-cluster.
    pub served: usize,
    /// Target user's large-scale gain to this BS.
    pub beta: f64,
}

/// A target user served by `cluster` with every BS fully loaded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxySetup {
    pub precoder: Precoder,
    pub bss: Vec<OracleBs>,
    /// Indices into `bss`.
    pub cluster: Vec<BsId>,
    pub noise: f64,
    /// Large-scale gain of the co-scheduled dummy users to their own BS.
    #[serde(default = "one")]
    pub dummy_beta: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub empirical_rate: f64,
    pub proxy_rate: f64,
    pub rel_error: f64,
    pub n_trials: usize,
    pub ci_halfwidth: f64,
    pub redraws: usize,
    pub mean_intra: f64,
    pub mean_inter: f64,
}

struct SetupScale<'a>(&'a ProxySetup);

impl LargeScale for SetupScale<'_> {
    fn beta(&self, k: UserId, j: BsId) -> f64 {
        if k == 0 { self.0.bss[j].beta } else { self.0.dummy_beta }
    }
    fn power(&self, j: BsId) -> f64 {
        self.0.bss[j].power
    }
    fn noise(&self) -> f64 {
        self.0.noise
    }
}

impl ProxySetup {
    fn validate(&self) -> Result<()> {
        if self.cluster.is_empty() {
            return Err(Error::EmptyCluster);
        }
        if self.cluster.iter().any(|&j| j >= self.bss.len()) {
            return Err(Error::Config("cluster refers to an unknown BS".into()));
        }
        for b in &self.bss {
            if b.served == 0 || b.served > b.antennas || !(b.power > 0.0) || b.beta < 0.0 {
                return Err(Error::Config(format!("bad oracle BS {b:?}")));
            }
        }
        if !(self.noise > 0.0) {
            return Err(Error::Config("noise power must be positive".into()));
        }
        Ok(())
    }

    /// User `k` of `net` served by `cluster`, every BS of `band` carrying its
    /// full size-`|cluster|` budget.
    pub fn from_network(net: &Network, band: &Band, precoder: Precoder, k: UserId, cluster: &Cluster) -> Result<Self> {
        let size = cluster.size();
        let mut bss = Vec::with_capacity(band.members().len());
        let mut members = Vec::with_capacity(size);
        for (i, &j) in band.members().iter().enumerate() {
            if cluster.contains(j) {
                members.push(i);
            }
            bss.push(OracleBs { antennas: net.antennas[j], power: net.powers[j], served: net.budgets.get(j, size)?, beta: net.gains.get(k, j) });
        }
        if members.len() != size {
            return Err(Error::Config(format!("cluster {cluster} is not inside the band")));
        }
        Ok(Self { precoder, bss, cluster: members, noise: net.gains.noise_power, dummy_beta: 1.0 })
    }

    /// The RB the proxy assumes: user 0 on the cluster, every other slot of
    /// every BS taken by a distinct single-BS dummy.
    pub fn rb(&self) -> Rb {
        let mut cluster = self.cluster.clone();
        cluster.sort_unstable();
        cluster.dedup();
        let mut sets = vec![crate::scheduler::ServiceSet { cluster: crate::rates::Cluster::new(cluster.clone()).expect("non-empty"), users: vec![0] }];
        let mut next = 1;
        for (j, b) in self.bss.iter().enumerate() {
            let dummies = if cluster.contains(&j) { b.served - 1 } else { b.served };
            if dummies > 0 {
                sets.push(crate::scheduler::ServiceSet { cluster: crate::rates::Cluster::single(j), users: (next..next + dummies).collect() });
                next += dummies;
            }
        }
        Rb { size: cluster.len(), sets }
    }

    /// Closed-form proxy from the rate formulas.
    pub fn proxy_rate(&self) -> Result<f64> {
        let links: Vec<LinkTerm> = self
            .cluster
            .iter()
            .map(|&j| {
                let b = &self.bss[j];
                LinkTerm { power: b.power, beta: b.beta, antennas: b.antennas, served: b.served }
            })
            .collect();
        let outside: f64 = (0..self.bss.len()).filter(|j| !self.cluster.contains(j)).map(|j| self.bss[j].power * self.bss[j].beta).sum();
        match self.precoder {
            Precoder::Zf => zf_rate(&links, outside, self.noise),
            Precoder::Mrt => mrt_rate(&links, outside, self.noise),
        }
    }
}

/// Sum by recursive halving; fixed order for a fixed length.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Empirical ergodic rate of the target against its proxy.
pub fn verify_proxy(setup: &ProxySetup, n_trials: usize, seed: u64) -> Result<OracleReport> {
    setup.validate()?;
    if n_trials < 2 {
        return Err(Error::Config("need at least two trials".into()));
    }
    let proxy = setup.proxy_rate()?;
    let rb = setup.rb();
    let pairs = required_pairs(&rb, &[0]);
    let ls = SetupScale(setup);
    let mut rates = Vec::with_capacity(n_trials);
    let mut intra = Vec::with_capacity(n_trials);
    let mut inter = Vec::with_capacity(n_trials);
    let mut redraws = 0;
    for trial in 0..n_trials as u64 {
        let mut attempt = 0;
        let terms = loop {
            let draw = FadingDraw::generate(&pairs, |j| setup.bss[j].antennas, seed, trial, attempt);
            match rb_sinr(setup.precoder, 0, &rb, &draw, &ls) {
                Ok(t) => break t,
                Err(Error::Degenerate(msg)) => {
                    redraws += 1;
                    attempt += 1;
                    if attempt as usize > MAX_REDRAWS {
                        return Err(Error::Degenerate(format!("trial {trial}: {msg} after {MAX_REDRAWS} redraws")));
                    }
                }
                Err(e) => return Err(e),
            }
        };
        rates.push(terms.sinr().ln_1p() / std::f64::consts::LN_2);
        intra.push(terms.intra);
        inter.push(terms.inter);
    }
    let n = n_trials as f64;
    let mean = pairwise_sum(&rates) / n;
    let dev: Vec<f64> = rates.iter().map(|r| (r - mean).powi(2)).collect();
    let std = (pairwise_sum(&dev) / (n - 1.0)).sqrt();
    Ok(OracleReport {
        empirical_rate: mean,
        proxy_rate: proxy,
        rel_error: (mean - proxy).abs() / mean,
        n_trials,
        ci_halfwidth: 1.96 * std / n.sqrt(),
        redraws,
        mean_intra: pairwise_sum(&intra) / n,
        mean_inter: pairwise_sum(&inter) / n,
    })
}
