//! Network layouts and slow-fading link gains.
//!
//! Positions live on a square torus of side `extent` meters; every distance is
//! the minimum over the nine periodic images, so there are no edge cells.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type BsId = usize;
pub type UserId = usize;

/// Distances below this (km) are clamped before evaluating path loss.
pub const MIN_DISTANCE_KM: f64 = 0.01;

/// Default receiver noise power, roughly the thermal floor over 10 MHz.
pub const DEFAULT_NOISE_DBM: f64 = -104.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Macro,
    Pico,
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

/// How many users a BS multiplexes per RB as a function of cluster size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetRule {
    /// `S(L) = per_size * L`.
    PerSize(usize),
    /// `S(L) = table[L - 1]`.
    Table(Vec<usize>),
}

impl BudgetRule {
    pub fn expand(&self, l_max: usize) -> Result<Vec<usize>> {
        match self {
            BudgetRule::PerSize(c) => Ok((1..=l_max).map(|l| c * l).collect()),
            BudgetRule::Table(t) if t.len() >= l_max => Ok(t[..l_max].to_vec()),
            BudgetRule::Table(t) => Err(Error::Config(format!(
                "budget table has {} entries, need {l_max}",
                t.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierParams {
    pub power_dbm: f64,
    pub antennas: usize,
    pub budget: BudgetRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseStation {
    pub id: BsId,
    pub position: [f64; 2],
    pub tier: Tier,
    /// Watts.
    pub tx_power: f64,
    pub antennas: usize,
    /// `budgets[L - 1] = S_j(L)`.
    pub budgets: Vec<usize>,
}

impl BaseStation {
    pub fn new(
        id: BsId,
        position: [f64; 2],
        tier: Tier,
        tx_power: f64,
        antennas: usize,
        budgets: Vec<usize>,
    ) -> Result<Self> {
        let bs = Self { id, position, tier, tx_power, antennas, budgets };
        bs.validate()?;
        Ok(bs)
    }

    /// `S_j(L)`, if configured.
    pub fn budget(&self, size: usize) -> Option<usize> {
        size.checked_sub(1).and_then(|i| self.budgets.get(i).copied())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tx_power > 0.0) || !self.tx_power.is_finite() {
            return Err(Error::Layout(format!("BS {} has non-positive power", self.id)));
        }
        let Some(&s1) = self.budgets.first() else {
            return Err(Error::Layout(format!("BS {} has no budgets", self.id)));
        };
        if s1 == 0 {
            return Err(Error::Layout(format!("BS {} has S(1) = 0", self.id)));
        }
        for (i, &s) in self.budgets.iter().enumerate() {
            let size = i + 1;
            if s > self.antennas {
                return Err(Error::BudgetOutOfRange { antennas: self.antennas, served: s });
            }
            if s < s1 || s > size * s1 {
                return Err(Error::Layout(format!(
                    "BS {}: S({size}) = {s} outside [S(1), L*S(1)] = [{s1}, {}]",
                    self.id,
                    size * s1
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub id: UserId,
    pub position: [f64; 2],
}

/// Checkerboard of `squares_per_side`² squares with `(row + col)` even shaded.
///
/// Macros sit at the centers of shaded squares whose row index is a multiple of
/// `macro_row_stride`; every white square gets a pico at its center and every
/// shaded square gets `picos_per_shaded` uniformly dropped picos.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckerboardConfig {
    pub square_side: f64,
    pub squares_per_side: usize,
    #[serde(default = "default_macro_stride")]
    pub macro_row_stride: usize,
    pub picos_per_shaded: usize,
    pub users_per_white: usize,
    pub users_per_shaded: usize,
    pub l_max: usize,
    #[serde(rename = "macro")]
    pub macro_tier: TierParams,
    pub pico: TierParams,
}

fn default_macro_stride() -> usize {
    2
}

impl CheckerboardConfig {
    /// The 2000 m x 2000 m layout with 4 macros and 32 picos.
    pub fn full_scale() -> Self {
        Self {
            square_side: 500.0,
            squares_per_side: 4,
            macro_row_stride: 2,
            picos_per_shaded: 3,
            users_per_white: 15,
            users_per_shaded: 90,
            l_max: 4,
            macro_tier: TierParams {
                power_dbm: 46.0,
                antennas: 100,
                budget: BudgetRule::PerSize(10),
            },
            pico: TierParams { power_dbm: 35.0, antennas: 40, budget: BudgetRule::PerSize(4) },
        }
    }

    /// A 1000 m x 1000 m cut with one macro, eight picos and scaled user counts.
    pub fn desk_scale() -> Self {
        Self {
            squares_per_side: 2,
            users_per_white: 5,
            users_per_shaded: 30,
            ..Self::full_scale()
        }
    }

    pub fn extent(&self) -> f64 {
        self.square_side * self.squares_per_side as f64
    }

    fn squares(&self) -> impl Iterator<Item = (usize, usize, bool)> + '_ {
        let n = self.squares_per_side;
        (0..n).flat_map(move |r| (0..n).map(move |c| (r, c, (r + c) % 2 == 0)))
    }

    pub fn macro_count(&self) -> usize {
        self.squares().filter(|&(r, _, shaded)| shaded && r % self.macro_row_stride == 0).count()
    }

    pub fn pico_count(&self) -> usize {
        self.squares()
            .map(|(_, _, shaded)| if shaded { self.picos_per_shaded } else { 1 })
            .sum()
    }

    pub fn user_count(&self) -> usize {
        self.squares()
            .map(|(_, _, shaded)| if shaded { self.users_per_shaded } else { self.users_per_white })
            .sum()
    }

    fn validate(&self) -> Result<()> {
        if !(self.square_side > 0.0) || !self.square_side.is_finite() {
            return Err(Error::Layout("square side must be positive".into()));
        }
        if self.squares_per_side == 0 {
            return Err(Error::Layout("need at least one square per side".into()));
        }
        if self.macro_row_stride == 0 {
            return Err(Error::Layout("macro_row_stride must be >= 1".into()));
        }
        if self.l_max == 0 {
            return Err(Error::Layout("l_max must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub extent: f64,
    pub bss: Vec<BaseStation>,
    pub users: Vec<User>,
}

fn make_bs(id: BsId, position: [f64; 2], tier: Tier, p: &TierParams, l_max: usize) -> Result<BaseStation> {
    BaseStation::new(id, position, tier, dbm_to_watts(p.power_dbm), p.antennas, p.budget.expand(l_max)?)
}

/// Drops BSs and users on the checkerboard. Macros come first in BS order.
pub fn build_checkerboard(config: &CheckerboardConfig, seed: u64) -> Result<Layout> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = config.square_side;
    let l_max = config.l_max;
    let mut bss = Vec::new();

    for (r, c, shaded) in config.squares() {
        if shaded && r % config.macro_row_stride == 0 {
            let center = [(c as f64 + 0.5) * side, (r as f64 + 0.5) * side];
            bss.push(make_bs(bss.len(), center, Tier::Macro, &config.macro_tier, l_max)?);
        }
    }
    for (r, c, shaded) in config.squares() {
        let origin = [c as f64 * side, r as f64 * side];
        if shaded {
            for _ in 0..config.picos_per_shaded {
                let p = [origin[0] + rng.random::<f64>() * side, origin[1] + rng.random::<f64>() * side];
                bss.push(make_bs(bss.len(), p, Tier::Pico, &config.pico, l_max)?);
            }
        } else {
            let center = [origin[0] + 0.5 * side, origin[1] + 0.5 * side];
            bss.push(make_bs(bss.len(), center, Tier::Pico, &config.pico, l_max)?);
        }
    }

    let mut users = Vec::with_capacity(config.user_count());
    for (r, c, shaded) in config.squares() {
        let n = if shaded { config.users_per_shaded } else { config.users_per_white };
        for _ in 0..n {
            let p = [
                (c as f64 + rng.random::<f64>()) * side,
                (r as f64 + rng.random::<f64>()) * side,
            ];
            users.push(User { id: users.len(), position: p });
        }
    }
    Ok(Layout { extent: config.extent(), bss, users })
}

/// Path loss in dB for a link of `d_km` kilometers.
pub fn pathloss_db(tier: Tier, d_km: f64) -> f64 {
    let d = d_km.max(MIN_DISTANCE_KM);
    match tier {
        Tier::Macro => 128.1 + 37.6 * d.log10(),
        Tier::Pico => 140.7 + 36.7 * d.log10(),
    }
}

/// Minimum-image distance on a torus of side `extent`.
pub fn wrap_distance(a: [f64; 2], b: [f64; 2], extent: f64) -> f64 {
    let axis = |u: f64, v: f64| {
        let d = (u - v).rem_euclid(extent);
        d.min(extent - d)
    };
    axis(a[0], b[0]).hypot(axis(a[1], b[1]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShadowingConfig {
    /// Log-normal shadowing standard deviation; zero disables shadowing.
    #[serde(default)]
    pub std_db: f64,
}

impl Default for ShadowingConfig {
    fn default() -> Self {
        Self { std_db: 0.0 }
    }
}

/// Slow-fading gains `beta[k][j]` (linear power) for every user/BS pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkGainMap {
    pub beta: Vec<Vec<f64>>,
    pub noise_power: f64,
    pub layout_extent: f64,
    pub seed: u64,
}

impl LinkGainMap {
    pub fn users(&self) -> usize {
        self.beta.len()
    }

    pub fn bss(&self) -> usize {
        self.beta.first().map_or(0, Vec::len)
    }

    pub fn get(&self, k: UserId, j: BsId) -> f64 {
        self.beta[k][j]
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["user_id", "bs_id", "beta_linear"])?;
        for (k, row) in self.beta.iter().enumerate() {
            for (j, b) in row.iter().enumerate() {
                out.write_record([k.to_string(), j.to_string(), format!("{b:e}")])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a gain table. Noise, extent and seed are not part of the CSV and
    /// must be supplied.
    pub fn read_csv<R: Read>(r: R, noise_power: f64, layout_extent: f64, seed: u64) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut triples = Vec::new();
        for rec in rdr.deserialize() {
            let (k, j, b): (usize, usize, f64) = rec?;
            triples.push((k, j, b));
        }
        let users = triples.iter().map(|t| t.0 + 1).max().unwrap_or(0);
        let bss = triples.iter().map(|t| t.1 + 1).max().unwrap_or(0);
        let mut beta = vec![vec![f64::NAN; bss]; users];
        for (k, j, b) in triples {
            beta[k][j] = b;
        }
        if beta.iter().flatten().any(|b| !b.is_finite()) {
            return Err(Error::Config("gain table is missing user/BS pairs".into()));
        }
        Ok(Self { beta, noise_power, layout_extent, seed })
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Path loss plus optional log-normal shadowing for every user/BS pair.
pub fn compute_link_gains(
    layout: &Layout,
    shadowing: ShadowingConfig,
    noise_power: f64,
    seed: u64,
) -> LinkGainMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shadow = (shadowing.std_db > 0.0).then(|| Normal::new(0.0, shadowing.std_db).unwrap());
    let beta = layout
        .users
        .iter()
        .map(|u| {
            layout
                .bss
                .iter()
                .map(|bs| {
                    let d_km = wrap_distance(u.position, bs.position, layout.extent) / 1000.0;
                    let x = shadow.as_ref().map_or(0.0, |n| n.sample(&mut rng));
                    10f64.powf(-(pathloss_db(bs.tier, d_km) + x) / 10.0)
                })
                .collect()
        })
        .collect();
    LinkGainMap { beta, noise_power, layout_extent: layout.extent, seed }
}

/// Per-BS beam budgets `S_j(L)` indexed by BS then size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Budgets(pub Vec<Vec<usize>>);

impl Budgets {
    pub fn get(&self, j: BsId, size: usize) -> Result<usize> {
        size.checked_sub(1)
            .and_then(|i| self.0.get(j).and_then(|b| b.get(i)))
            .copied()
            .ok_or(Error::MissingBudget { bs: j, size })
    }

    pub fn bss(&self) -> usize {
        self.0.len()
    }

    /// The same `S(L)` table for `n` base stations.
    pub fn uniform(n: usize, table: &[usize]) -> Self {
        Self(vec![table.to_vec(); n])
    }
}

/// Everything the rate and optimization layers need about one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub powers: Vec<f64>,
    pub antennas: Vec<usize>,
    pub tiers: Vec<Tier>,
    pub budgets: Budgets,
    pub gains: LinkGainMap,
}

impl Network {
    pub fn from_layout(layout: &Layout, gains: LinkGainMap) -> Self {
        Self {
            powers: layout.bss.iter().map(|b| b.tx_power).collect(),
            antennas: layout.bss.iter().map(|b| b.antennas).collect(),
            tiers: layout.bss.iter().map(|b| b.tier).collect(),
            budgets: Budgets(layout.bss.iter().map(|b| b.budgets.clone()).collect()),
            gains,
        }
    }

    pub fn users(&self) -> usize {
        self.gains.users()
    }

    pub fn bss(&self) -> usize {
        self.powers.len()
    }

    /// Received power `P_j * beta_kj` of BS `j` at user `k`.
    pub fn rx_power(&self, k: UserId, j: BsId) -> f64 {
        self.powers[j] * self.gains.get(k, j)
    }

    pub fn bss_of_tier(&self, tier: Tier) -> Vec<BsId> {
        (0..self.bss()).filter(|&j| self.tiers[j] == tier).collect()
    }
}
