//! Lookup-table value function over (epoch, zone, battery) with spatial
//! hierarchical aggregation, WIMSE weighting and monotone projections.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assignment::ValueLookup;
use crate::error::{Error, Result};
use crate::fleet::{BatteryLevel, CarAttribute, Epoch};
use crate::spatial::{AggregationTree, ZoneGrid, ZoneId};

/// Mean squared errors below this are treated as exact.
const EXACT_MSE: f64 = 1e-300;

const MAGIC: &[u8; 8] = b"EVFVTBL\0";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Stepsize {
    /// `a / (a + n - 1)` for the `n`-th observation of a cell.
    Harmonic { a: f64 },
    Constant { value: f64 },
}

impl Stepsize {
    pub fn at(&self, n: u32) -> f64 {
        match *self {
            Stepsize::Harmonic { a } => a / (a + n.saturating_sub(1) as f64),
            Stepsize::Constant { value } => value,
        }
    }

    fn encode(&self) -> (u8, f64) {
        match *self {
            Stepsize::Harmonic { a } => (0, a),
            Stepsize::Constant { value } => (1, value),
        }
    }

    fn decode(tag: u8, x: f64) -> Result<Self> {
        match tag {
            0 => Ok(Stepsize::Harmonic { a: x }),
            1 => Ok(Stepsize::Constant { value: x }),
            _ => Err(Error::Format(format!("unknown stepsize rule {tag}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VfaConfig {
    pub hierarchical: bool,
    /// Coarsest aggregation level; level `g` groups `2^g x 2^g` zones.
    pub max_level: usize,
    pub monotone: bool,
    pub alpha: Stepsize,
    pub eta: Stepsize,
}

impl Default for VfaConfig {
    fn default() -> Self {
        Self {
            hierarchical: true,
            max_level: 4,
            monotone: true,
            alpha: Stepsize::Harmonic { a: 25.0 },
            eta: Stepsize::Constant { value: 0.1 },
        }
    }
}

/// Statistics of one (level, area, epoch, battery) cell.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CellStats {
    pub value: f64,
    pub bias: f64,
    pub total_sq: f64,
    pub lambda: f64,
    pub n_obs: u32,
    /// Set by a projection on a cell that has never been observed.
    pub estimated: bool,
}

impl CellStats {
    pub fn observed(&self) -> bool {
        self.n_obs > 0 || self.estimated
    }

    /// Observation variance `s^2`, clamped at zero.
    pub fn sample_variance(&self) -> f64 {
        ((self.total_sq - self.bias * self.bias) / (1.0 + self.lambda)).max(0.0)
    }

    /// Variance of the smoothed estimate.
    pub fn estimate_variance(&self) -> f64 {
        self.lambda * self.sample_variance()
    }
}

/// One level's contribution to a query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelEstimate {
    pub value: f64,
    pub variance: f64,
}

/// WIMSE weights for per-level estimates, finest level first. Aggregation
/// bias is measured against the finest observed level. Unobserved levels
/// get weight zero; no observed level gives an empty vector.
pub fn wimse_weights(estimates: &[Option<LevelEstimate>]) -> Vec<f64> {
    let Some(reference) = estimates.iter().flatten().next().map(|e| e.value) else {
        return Vec::new();
    };
    let mse: Vec<Option<f64>> = estimates
        .iter()
        .map(|e| {
            e.map(|e| {
                let bias = e.value - reference;
                e.variance + bias * bias
            })
        })
        .collect();
    let exact = mse.iter().flatten().filter(|&&m| m < EXACT_MSE).count();
    let mut w: Vec<f64> = if exact > 0 {
        mse.iter().map(|m| matches!(m, Some(m) if *m < EXACT_MSE) as u8 as f64).collect()
    } else {
        mse.iter().map(|m| m.map_or(0.0, |m| 1.0 / m)).collect()
    };
    let total: f64 = w.iter().sum();
    for x in &mut w {
        *x /= total;
    }
    w
}

/// Projects a battery column onto nondecreasing vectors anchored at
/// `index` set to `h`.
pub fn project_battery(values: &mut [f64], index: usize, h: f64) {
    values[index] = h;
    for v in &mut values[index + 1..] {
        *v = v.max(h);
    }
    for v in &mut values[..index] {
        *v = v.min(h);
    }
}

/// Projects a time column onto nonincreasing vectors anchored at `t` set
/// to `h`.
pub fn project_time(values: &mut [f64], t: usize, h: f64) {
    values[t] = h;
    for v in &mut values[..t] {
        *v = v.max(h);
    }
    for v in &mut values[t + 1..] {
        *v = v.min(h);
    }
}

type Block = Box<[CellStats]>;

#[derive(Debug, Clone, PartialEq)]
struct LevelStore {
    /// Indexed by `area * horizon + t`; each block holds all battery levels.
    blocks: Vec<Option<Block>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    config: VfaConfig,
    tree: AggregationTree,
    horizon: Epoch,
    battery_levels: BatteryLevel,
    levels: Vec<LevelStore>,
    updates: u64,
}

impl ValueTable {
    pub fn new(grid: &ZoneGrid, horizon: Epoch, battery_levels: BatteryLevel, config: VfaConfig) -> Self {
        let max_level = if config.hierarchical { config.max_level } else { 0 };
        let tree = AggregationTree::build(grid, max_level);
        Self::with_tree(tree, horizon, battery_levels, config)
    }

    fn with_tree(tree: AggregationTree, horizon: Epoch, battery_levels: BatteryLevel, config: VfaConfig) -> Self {
        let levels = (0..tree.num_levels())
            .map(|g| LevelStore { blocks: vec![None; tree.area_count(g) * horizon as usize] })
            .collect();
        Self { config, tree, horizon, battery_levels, levels, updates: 0 }
    }

    pub fn config(&self) -> &VfaConfig {
        &self.config
    }

    pub fn tree(&self) -> &AggregationTree {
        &self.tree
    }

    pub fn horizon(&self) -> Epoch {
        self.horizon
    }

    pub fn battery_levels(&self) -> BatteryLevel {
        self.battery_levels
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn num_updates(&self) -> u64 {
        self.updates
    }

    /// Number of materialized cells over all levels.
    pub fn materialized_cells(&self) -> usize {
        self.levels.iter().map(|s| s.blocks.iter().flatten().count()).sum::<usize>() * self.battery_levels as usize
    }

    fn block_index(&self, area: u32, t: Epoch) -> usize {
        area as usize * self.horizon as usize + t as usize
    }

    /// Stored statistics of a cell, `None` if never materialized.
    pub fn cell(&self, g: usize, zone: ZoneId, t: Epoch, battery: BatteryLevel) -> Option<&CellStats> {
        if t >= self.horizon || battery >= self.battery_levels {
            return None;
        }
        let area = self.tree.area(g, zone)?;
        self.block(g, area, t).map(|b| &b[battery as usize])
    }

    fn block(&self, g: usize, area: u32, t: Epoch) -> Option<&Block> {
        self.levels[g].blocks[self.block_index(area, t)].as_ref()
    }

    fn cell_mut(&mut self, g: usize, area: u32, t: Epoch, battery: BatteryLevel) -> &mut CellStats {
        let i = self.block_index(area, t);
        let l = self.battery_levels as usize;
        let block = self.levels[g].blocks[i].get_or_insert_with(|| vec![CellStats::default(); l].into_boxed_slice());
        &mut block[battery as usize]
    }

    fn stored_value(&self, g: usize, area: u32, t: Epoch, battery: BatteryLevel) -> f64 {
        self.block(g, area, t).map_or(0.0, |b| b[battery as usize].value)
    }

    /// Stored level-0 value, 0 where nothing has been written.
    pub fn level0_value(&self, t: Epoch, zone: ZoneId, battery: BatteryLevel) -> f64 {
        self.cell(0, zone, t, battery).map_or(0.0, |c| c.value)
    }

    fn estimates(&self, t: Epoch, a: CarAttribute) -> Vec<Option<LevelEstimate>> {
        (0..self.levels.len())
            .map(|g| {
                self.cell(g, a.zone, t, a.battery)
                    .filter(|c| c.observed())
                    .map(|c| LevelEstimate { value: c.value, variance: c.estimate_variance() })
            })
            .collect()
    }

    /// Per-level WIMSE weights at `(t, a)`; empty when nothing is observed.
    pub fn weights(&self, t: Epoch, a: CarAttribute) -> Vec<f64> {
        if t >= self.horizon {
            return Vec::new();
        }
        wimse_weights(&self.estimates(t, a))
    }

    /// Combined estimate `v(t, a)`; 0 at and beyond the horizon and where
    /// nothing is observed.
    pub fn query(&self, t: Epoch, a: CarAttribute) -> f64 {
        if t >= self.horizon {
            return 0.0;
        }
        let estimates = self.estimates(t, a);
        let w = wimse_weights(&estimates);
        w.iter().zip(&estimates).map(|(w, e)| e.map_or(0.0, |e| w * e.value)).sum()
    }

    /// Smooths observation `v_hat` into every level at `(t, a)`, then
    /// restores monotonicity at level 0 around the updated cell.
    pub fn update(&mut self, t: Epoch, a: CarAttribute, v_hat: f64) -> Result<()> {
        if !v_hat.is_finite() {
            return Err(Error::invalid(format!("non-finite observation {v_hat}")));
        }
        if t >= self.horizon || a.battery >= self.battery_levels {
            return Err(Error::invalid(format!("cell (t={t}, {a:?}) outside the table")));
        }
        let areas: Vec<u32> = (0..self.levels.len())
            .map(|g| self.tree.area(g, a.zone).ok_or_else(|| Error::invalid(format!("{} is not a valid zone", a.zone))))
            .collect::<Result<_>>()?;
        let (alpha_rule, eta_rule) = (self.config.alpha, self.config.eta);
        for (g, &area) in areas.iter().enumerate() {
            let cell = self.cell_mut(g, area, t, a.battery);
            let n = cell.n_obs + 1;
            let alpha = alpha_rule.at(n);
            let eta = eta_rule.at(n);
            let diff = v_hat - cell.value;
            cell.bias = (1.0 - eta) * cell.bias + eta * diff;
            cell.total_sq = (1.0 - eta) * cell.total_sq + eta * diff * diff;
            cell.lambda = if n == 1 { alpha * alpha } else { (1.0 - alpha).powi(2) * cell.lambda + alpha * alpha };
            cell.value = (1.0 - alpha) * cell.value + alpha * v_hat;
            cell.n_obs = n;
        }
        self.updates += 1;
        if self.config.monotone {
            self.project(areas[0], t, a.battery);
        }
        Ok(())
    }

    /// Joint projection at level 0: cells no later and no emptier than the
    /// anchor are raised to its value, cells no earlier and no fuller are
    /// lowered to it. Relies on the rest of the table being monotone.
    fn project(&mut self, area: u32, t: Epoch, battery: BatteryLevel) {
        let anchor = *self.cell_mut(0, area, t, battery);
        let h = anchor.value;
        let l_max = self.battery_levels;

        for tp in (0..=t).rev() {
            let start = if tp == t { battery + 1 } else { battery };
            if tp < t && self.stored_value(0, area, tp, battery) >= h {
                break;
            }
            for l in start..l_max {
                if self.stored_value(0, area, tp, l) >= h {
                    break;
                }
                self.assign(area, tp, l, h, &anchor);
            }
        }
        for tp in t..self.horizon {
            if tp > t && self.stored_value(0, area, tp, battery) <= h {
                break;
            }
            let top = if tp == t { battery.checked_sub(1) } else { Some(battery) };
            let Some(top) = top else { continue };
            for l in (0..=top).rev() {
                if self.stored_value(0, area, tp, l) <= h {
                    break;
                }
                self.assign(area, tp, l, h, &anchor);
            }
        }
    }

    fn assign(&mut self, area: u32, t: Epoch, battery: BatteryLevel, h: f64, anchor: &CellStats) {
        let cell = self.cell_mut(0, area, t, battery);
        if !cell.observed() {
            *cell = CellStats { n_obs: 0, estimated: true, ..*anchor };
        }
        cell.value = h;
    }

    /// Zones with at least one materialized level-0 block, in id order.
    pub fn visited_zones(&self) -> Vec<ZoneId> {
        let members = self.tree.members(0);
        let horizon = self.horizon as usize;
        self.levels[0]
            .blocks
            .chunks(horizon.max(1))
            .enumerate()
            .filter(|(_, c)| c.iter().any(Option::is_some))
            .filter_map(|(area, _)| members[area].first().copied())
            .collect()
    }

    /// First monotonicity violation among stored level-0 values, if any.
    pub fn level0_violation(&self, tolerance: f64) -> Option<(ZoneId, Epoch, BatteryLevel)> {
        for zone in self.visited_zones() {
            for t in 0..self.horizon {
                for l in 0..self.battery_levels {
                    let v = self.level0_value(t, zone, l);
                    if l + 1 < self.battery_levels && self.level0_value(t, zone, l + 1) < v - tolerance {
                        return Some((zone, t, l));
                    }
                    if t + 1 < self.horizon && self.level0_value(t + 1, zone, l) > v + tolerance {
                        return Some((zone, t, l));
                    }
                }
            }
        }
        None
    }

    /// Writes `t,zone,battery,stored,value,w0..wG` for every materialized
    /// level-0 cell.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ["t", "zone", "battery", "stored", "value"].map(String::from).to_vec();
        header.extend((0..self.levels.len()).map(|g| format!("w{g}")));
        w.write_record(&header)?;
        for zone in self.visited_zones() {
            for t in 0..self.horizon {
                let Some(area) = self.tree.area(0, zone) else { continue };
                if self.block(0, area, t).is_none() {
                    continue;
                }
                for l in 0..self.battery_levels {
                    let a = CarAttribute::new(zone, l);
                    let mut weights = self.weights(t, a);
                    weights.resize(self.levels.len(), 0.0);
                    let mut row = vec![
                        t.to_string(),
                        zone.0.to_string(),
                        l.to_string(),
                        self.level0_value(t, zone, l).to_string(),
                        self.query(t, a).to_string(),
                    ];
                    row.extend(weights.iter().map(|x| x.to_string()));
                    w.write_record(&row)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Versioned binary snapshot with a trailing SHA-256 checksum.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        let w = &mut b;
        // writes to a Vec cannot fail
        w.write_u32::<LittleEndian>(SNAPSHOT_VERSION).unwrap();
        w.write_u32::<LittleEndian>(self.horizon).unwrap();
        w.write_u16::<LittleEndian>(self.battery_levels).unwrap();
        w.write_u8(self.config.hierarchical as u8).unwrap();
        w.write_u8(self.config.monotone as u8).unwrap();
        w.write_u64::<LittleEndian>(self.config.max_level as u64).unwrap();
        for rule in [self.config.alpha, self.config.eta] {
            let (tag, x) = rule.encode();
            w.write_u8(tag).unwrap();
            w.write_f64::<LittleEndian>(x).unwrap();
        }
        w.write_u64::<LittleEndian>(self.updates).unwrap();
        w.write_u32::<LittleEndian>(self.levels.len() as u32).unwrap();
        w.write_u64::<LittleEndian>(self.tree.area_map(0).len() as u64).unwrap();
        for g in 0..self.levels.len() {
            for &a in self.tree.area_map(g) {
                w.write_u32::<LittleEndian>(a).unwrap();
            }
        }
        for store in &self.levels {
            let present: Vec<(usize, &Block)> =
                store.blocks.iter().enumerate().filter_map(|(i, b)| b.as_ref().map(|b| (i, b))).collect();
            w.write_u64::<LittleEndian>(present.len() as u64).unwrap();
            for (i, block) in present {
                w.write_u64::<LittleEndian>(i as u64).unwrap();
                for c in block.iter() {
                    for x in [c.value, c.bias, c.total_sq, c.lambda] {
                        w.write_f64::<LittleEndian>(x).unwrap();
                    }
                    w.write_u32::<LittleEndian>(c.n_obs).unwrap();
                    w.write_u8(c.estimated as u8).unwrap();
                }
            }
        }
        let digest = Sha256::digest(&b);
        b.extend_from_slice(&digest);
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Format(msg.to_string());
        if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("not a value table snapshot"));
        }
        let (payload, digest) = bytes.split_at(bytes.len() - 32);
        let mut r = Cursor::new(&payload[MAGIC.len()..]);
        let io = |_: std::io::Error| bad("truncated snapshot");
        let version = r.read_u32::<LittleEndian>().map_err(io)?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::Format(format!("snapshot version {version}, expected {SNAPSHOT_VERSION}")));
        }
        if Sha256::digest(payload).as_slice() != digest {
            return Err(bad("snapshot checksum mismatch"));
        }
        let horizon = r.read_u32::<LittleEndian>().map_err(io)?;
        let battery_levels = r.read_u16::<LittleEndian>().map_err(io)?;
        let hierarchical = r.read_u8().map_err(io)? != 0;
        let monotone = r.read_u8().map_err(io)? != 0;
        let max_level = r.read_u64::<LittleEndian>().map_err(io)? as usize;
        let mut rules = Vec::new();
        for _ in 0..2 {
            let tag = r.read_u8().map_err(io)?;
            let x = r.read_f64::<LittleEndian>().map_err(io)?;
            rules.push(Stepsize::decode(tag, x)?);
        }
        let updates = r.read_u64::<LittleEndian>().map_err(io)?;
        let num_levels = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let cells = r.read_u64::<LittleEndian>().map_err(io)? as usize;
        if num_levels == 0 || num_levels > 64 || cells > payload.len() {
            return Err(bad("implausible snapshot dimensions"));
        }
        let mut maps = Vec::with_capacity(num_levels);
        for _ in 0..num_levels {
            let mut m = vec![0u32; cells];
            r.read_u32_into::<LittleEndian>(&mut m).map_err(io)?;
            maps.push(m);
        }
        let tree = AggregationTree::from_area_maps(maps)?;
        let config = VfaConfig { hierarchical, max_level, monotone, alpha: rules[0], eta: rules[1] };
        let mut table = Self::with_tree(tree, horizon, battery_levels, config);
        table.updates = updates;
        for g in 0..num_levels {
            let count = r.read_u64::<LittleEndian>().map_err(io)? as usize;
            for _ in 0..count {
                let i = r.read_u64::<LittleEndian>().map_err(io)? as usize;
                if i >= table.levels[g].blocks.len() {
                    return Err(bad("block index out of range"));
                }
                let mut block = vec![CellStats::default(); battery_levels as usize];
                for c in &mut block {
                    let mut xs = [0f64; 4];
                    r.read_f64_into::<LittleEndian>(&mut xs).map_err(io)?;
                    c.value = xs[0];
                    c.bias = xs[1];
                    c.total_sq = xs[2];
                    c.lambda = xs[3];
                    c.n_obs = r.read_u32::<LittleEndian>().map_err(io)?;
                    c.estimated = r.read_u8().map_err(io)? != 0;
                }
                table.levels[g].blocks[i] = Some(block.into_boxed_slice());
            }
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest).map_err(io)?;
        if !rest.is_empty() {
            return Err(bad("trailing bytes in snapshot"));
        }
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

impl ValueLookup for ValueTable {
    fn value(&self, t: Epoch, a: CarAttribute) -> f64 {
        self.query(t, a)
    }
}
