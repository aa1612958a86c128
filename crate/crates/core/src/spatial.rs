//! Zone grid, distances, travel times and the spatial aggregation hierarchy.
//!
//! Zones are square cells of a rectangular region. A cell id is
//! `y * width + x` with row 0 at the top, so ids are dense over the whole
//! rectangle; only cells flagged in the validity mask take part in the model.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense cell index `y * width + x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ZoneId(pub u32);

impl ZoneId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ZoneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "z{}", self.0)
    }
}

/// Rounding slack used when converting continuous quantities into whole
/// epochs or battery levels, so that exact multiples do not round past
/// themselves because of floating-point noise.
pub(crate) const ROUNDING_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ZoneGrid {
    width: usize,
    height: usize,
    zone_width_miles: f64,
    mask: Vec<bool>,
    valid: Vec<ZoneId>,
}

impl ZoneGrid {
    /// Builds a grid from a row-major validity mask of `width * height` cells.
    pub fn new(width: usize, height: usize, zone_width_miles: f64, mask: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("grid dimensions must be positive, got {width}x{height}")));
        }
        if !(zone_width_miles > 0.0) || !zone_width_miles.is_finite() {
            return Err(Error::invalid(format!("zone width must be positive, got {zone_width_miles}")));
        }
        if mask.len() != width * height {
            return Err(Error::invalid(format!(
                "mask has {} cells, expected {}x{}={}",
                mask.len(),
                width,
                height,
                width * height
            )));
        }
        if width * height > u32::MAX as usize {
            return Err(Error::invalid("grid too large for 32-bit zone ids"));
        }
        let valid = mask
            .iter()
            .enumerate()
            .filter(|(_, &ok)| ok)
            .map(|(i, _)| ZoneId(i as u32))
            .collect();
        Ok(Self { width, height, zone_width_miles, mask, valid })
    }

    /// A grid with every cell valid.
    pub fn full(width: usize, height: usize, zone_width_miles: f64) -> Result<Self> {
        Self::new(width, height, zone_width_miles, vec![true; width * height])
    }

    /// Parses the mask text format: one line per row, `1` = valid, `0` = invalid,
    /// row 0 at the top. Blank trailing lines are ignored; ragged rows are rejected.
    pub fn parse_mask(text: &str, zone_width_miles: f64) -> Result<Self> {
        let rows: Vec<&str> = text
            .lines()
            .map(|l| l.trim_end_matches('\r'))
            .collect::<Vec<_>>();
        let last_nonempty = rows.iter().rposition(|l| !l.is_empty()).map(|i| i + 1).unwrap_or(0);
        let rows = &rows[..last_nonempty];
        if rows.is_empty() {
            return Err(Error::Dataset("mask is empty".into()));
        }
        let width = rows[0].len();
        let mut mask = Vec::with_capacity(width * rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::Dataset(format!(
                    "mask row {} has {} cells, expected {}",
                    i + 1,
                    row.len(),
                    width
                )));
            }
            for (j, ch) in row.chars().enumerate() {
                match ch {
                    '1' => mask.push(true),
                    '0' => mask.push(false),
                    other => {
                        return Err(Error::Dataset(format!(
                            "mask row {} column {}: unexpected character {other:?}",
                            i + 1,
                            j + 1
                        )))
                    }
                }
            }
        }
        Self::new(width, rows.len(), zone_width_miles, mask)
    }

    pub fn load_mask(path: impl AsRef<Path>, zone_width_miles: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_mask(&text, zone_width_miles)
    }

    /// Renders the mask in the same text format `parse_mask` reads.
    pub fn mask_text(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(if self.mask[y * self.width + x] { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn zone_width_miles(&self) -> f64 {
        self.zone_width_miles
    }

    pub fn num_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn num_valid(&self) -> usize {
        self.valid.len()
    }

    /// Valid zones in increasing id order.
    pub fn valid_zones(&self) -> &[ZoneId] {
        &self.valid
    }

    pub fn is_valid(&self, z: ZoneId) -> bool {
        self.mask.get(z.index()).copied().unwrap_or(false)
    }

    /// Zone id of cell `(x, y)` if it is inside the grid and valid.
    pub fn zone_at(&self, x: usize, y: usize) -> Option<ZoneId> {
        if x >= self.width || y >= self.height {
            return None;
        }
        let z = ZoneId((y * self.width + x) as u32);
        self.is_valid(z).then_some(z)
    }

    /// Cell coordinates `(x, y)` of a zone id.
    #[inline]
    pub fn coords(&self, z: ZoneId) -> (usize, usize) {
        let i = z.index();
        (i % self.width, i / self.width)
    }

    fn check(&self, z: ZoneId) -> Result<()> {
        if self.is_valid(z) {
            Ok(())
        } else {
            Err(Error::invalid(format!("{z} is not a valid zone")))
        }
    }

    /// Euclidean distance in miles between zone centers.
    pub fn zone_distance(&self, z1: ZoneId, z2: ZoneId) -> Result<f64> {
        self.check(z1)?;
        self.check(z2)?;
        Ok(self.distance(z1, z2))
    }

    /// Unchecked distance; callers guarantee both zones are valid.
    #[inline]
    pub fn distance(&self, z1: ZoneId, z2: ZoneId) -> f64 {
        let (x1, y1) = self.coords(z1);
        let (x2, y2) = self.coords(z2);
        let dx = x1 as f64 - x2 as f64;
        let dy = y1 as f64 - y2 as f64;
        self.zone_width_miles * (dx * dx + dy * dy).sqrt()
    }

    /// Travel time in hours between two zones at a constant speed.
    pub fn travel_time(&self, z1: ZoneId, z2: ZoneId, speed_mph: f64) -> Result<f64> {
        let d = self.zone_distance(z1, z2)?;
        travel_hours(d, speed_mph)
    }

    /// Valid 8-neighbours of `z`, in increasing id order.
    pub fn neighbors(&self, z: ZoneId) -> impl Iterator<Item = ZoneId> + '_ {
        let (x, y) = self.coords(z);
        let (x, y) = (x as i64, y as i64);
        (-1i64..=1)
            .flat_map(move |dy| (-1i64..=1).map(move |dx| (dx, dy)))
            .filter(|&(dx, dy)| dx != 0 || dy != 0)
            .filter_map(move |(dx, dy)| {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 {
                    None
                } else {
                    self.zone_at(nx as usize, ny as usize)
                }
            })
    }
}

/// Hours needed to drive `distance_miles` at `speed_mph`.
pub fn travel_hours(distance_miles: f64, speed_mph: f64) -> Result<f64> {
    if !(speed_mph > 0.0) || !speed_mph.is_finite() {
        return Err(Error::invalid(format!("speed must be positive, got {speed_mph}")));
    }
    if distance_miles < 0.0 {
        return Err(Error::invalid(format!("negative distance {distance_miles}")));
    }
    Ok(distance_miles / speed_mph)
}

/// Whole decision epochs covering `hours`, rounded up.
pub fn epochs_covering(hours: f64, epoch_minutes: f64) -> u32 {
    let epochs = hours * 60.0 / epoch_minutes;
    if epochs <= ROUNDING_SLACK {
        0
    } else {
        (epochs - ROUNDING_SLACK).ceil() as u32
    }
}

/// Shapes for generated validity masks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticMask {
    /// Every cell valid.
    Full,
    /// An irregular land mass: an ellipse with a noisy radius.
    Island { seed: u64 },
    /// Independent holes with the given probability.
    Holes { density: f64, seed: u64 },
}

impl SyntheticMask {
    pub fn generate(&self, width: usize, height: usize) -> Vec<bool> {
        match *self {
            SyntheticMask::Full => vec![true; width * height],
            SyntheticMask::Holes { density, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..width * height).map(|_| rng.random::<f64>() >= density).collect()
            }
            SyntheticMask::Island { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                // a few low-frequency harmonics perturb the radius
                let harmonics: Vec<(f64, f64, f64)> = (1..=4)
                    .map(|k| {
                        (
                            k as f64,
                            rng.random_range(0.0..0.18) / k as f64,
                            rng.random_range(0.0..std::f64::consts::TAU),
                        )
                    })
                    .collect();
                let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
                let (rx, ry) = ((width as f64 / 2.0).max(0.5), (height as f64 / 2.0).max(0.5));
                let mut mask = Vec::with_capacity(width * height);
                for y in 0..height {
                    for x in 0..width {
                        let dx = (x as f64 - cx) / rx;
                        let dy = (y as f64 - cy) / ry;
                        let angle = dy.atan2(dx);
                        let radius = 0.95
                            + harmonics
                                .iter()
                                .map(|&(k, amp, phase)| amp * (k * angle + phase).sin())
                                .sum::<f64>();
                        mask.push((dx * dx + dy * dy).sqrt() <= radius);
                    }
                }
                if !mask.iter().any(|&v| v) && !mask.is_empty() {
                    mask[(height / 2) * width + width / 2] = true;
                }
                mask
            }
        }
    }
}

const NO_AREA: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
struct AggregationLevel {
    /// area id per cell id, `NO_AREA` for invalid cells
    area_of: Vec<u32>,
    area_count: usize,
}

/// Spatial aggregation hierarchy: level `g` groups the `2^g x 2^g` block of
/// cells containing a zone into one area. Areas without any valid zone are
/// dropped and area ids are dense per level.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationTree {
    levels: Vec<AggregationLevel>,
}

impl AggregationTree {
    pub fn build(grid: &ZoneGrid, max_level: usize) -> Self {
        let mut levels = Vec::with_capacity(max_level + 1);
        for g in 0..=max_level {
            let side = 1usize.checked_shl(g as u32).unwrap_or(usize::MAX);
            let blocks_x = grid.width().div_ceil(side);
            let blocks_y = grid.height().div_ceil(side);
            let mut block_area = vec![NO_AREA; blocks_x * blocks_y];
            let mut area_of = vec![NO_AREA; grid.num_cells()];
            let mut next = 0u32;
            for &z in grid.valid_zones() {
                let (x, y) = grid.coords(z);
                let b = (y / side) * blocks_x + x / side;
                if block_area[b] == NO_AREA {
                    block_area[b] = next;
                    next += 1;
                }
                area_of[z.index()] = block_area[b];
            }
            levels.push(AggregationLevel { area_of, area_count: next as usize });
        }
        Self { levels }
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn max_level(&self) -> usize {
        self.levels.len() - 1
    }

    /// Area of `zone` at level `g`; `None` for invalid zones or levels.
    #[inline]
    pub fn area(&self, g: usize, zone: ZoneId) -> Option<u32> {
        let a = *self.levels.get(g)?.area_of.get(zone.index())?;
        (a != NO_AREA).then_some(a)
    }

    pub fn area_count(&self, g: usize) -> usize {
        self.levels[g].area_count
    }

    pub fn area_counts(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.area_count).collect()
    }

    /// Raw cell-to-area map of level `g`, `u32::MAX` marking invalid cells.
    pub(crate) fn area_map(&self, g: usize) -> &[u32] {
        &self.levels[g].area_of
    }

    /// Rebuilds a tree from raw per-level area maps.
    pub(crate) fn from_area_maps(maps: Vec<Vec<u32>>) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::Format("aggregation tree without levels".into()));
        }
        let cells = maps[0].len();
        let mut levels = Vec::with_capacity(maps.len());
        for area_of in maps {
            if area_of.len() != cells {
                return Err(Error::Format("aggregation levels disagree on cell count".into()));
            }
            let area_count = area_of.iter().filter(|&&a| a != NO_AREA).map(|&a| a as usize + 1).max().unwrap_or(0);
            levels.push(AggregationLevel { area_of, area_count });
        }
        Ok(Self { levels })
    }

    /// Zones belonging to each area at level `g`, areas in id order.
    pub fn members(&self, g: usize) -> Vec<Vec<ZoneId>> {
        let level = &self.levels[g];
        let mut out = vec![Vec::new(); level.area_count];
        for (cell, &a) in level.area_of.iter().enumerate() {
            if a != NO_AREA {
                out[a as usize].push(ZoneId(cell as u32));
            }
        }
        out
    }
}
