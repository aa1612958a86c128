//! Trip datasets: CSV ingestion, summary statistics and the synthetic
//! peak-shaped generator.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{ZoneGrid, ZoneId};

pub const SECONDS_PER_DAY: u32 = 86_400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripRecord {
    pub time_s: u32,
    pub origin: ZoneId,
    pub destination: ZoneId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub count: usize,
    pub mean_distance: f64,
    pub p5_distance: f64,
    pub p95_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripDataset {
    pub records: Vec<TripRecord>,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl TripDataset {
    pub fn new(records: Vec<TripRecord>, grid: &ZoneGrid) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Dataset("trip dataset is empty".into()));
        }
        for (i, r) in records.iter().enumerate() {
            if r.time_s >= SECONDS_PER_DAY {
                return Err(Error::Dataset(format!("trip {i}: time {} beyond one day", r.time_s)));
            }
            if !grid.is_valid(r.origin) || !grid.is_valid(r.destination) {
                return Err(Error::Dataset(format!("trip {i}: zone outside the valid grid")));
            }
            if r.origin == r.destination {
                return Err(Error::Dataset(format!("trip {i}: origin equals destination")));
            }
        }
        Ok(Self { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Trip counts per `epoch_minutes` bin over one day.
    pub fn histogram(&self, epoch_minutes: f64) -> Vec<usize> {
        let width = epoch_minutes * 60.0;
        let bins = (SECONDS_PER_DAY as f64 / width).ceil() as usize;
        let mut h = vec![0; bins];
        for r in &self.records {
            h[((r.time_s as f64 / width) as usize).min(bins - 1)] += 1;
        }
        h
    }

    pub fn summary(&self, grid: &ZoneGrid) -> DatasetSummary {
        let mut d: Vec<f64> = self.records.iter().map(|r| grid.distance(r.origin, r.destination)).collect();
        d.sort_by(f64::total_cmp);
        let mean = if d.is_empty() { 0.0 } else { d.iter().sum::<f64>() / d.len() as f64 };
        DatasetSummary {
            count: d.len(),
            mean_distance: mean,
            p5_distance: percentile(&d, 0.05),
            p95_distance: percentile(&d, 0.95),
        }
    }

    /// Writes the cell-coordinate schema accepted by [`load_trips`].
    pub fn write_csv<W: Write>(&self, out: W, grid: &ZoneGrid) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time_s", "origin_x", "origin_y", "dest_x", "dest_y"])?;
        for r in &self.records {
            let (ox, oy) = grid.coords(r.origin);
            let (dx, dy) = grid.coords(r.destination);
            w.write_record([r.time_s.to_string(), ox.to_string(), oy.to_string(), dx.to_string(), dy.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

enum Schema {
    Cells { t: usize, ox: usize, oy: usize, dx: usize, dy: usize },
    Zones { t: usize, o: usize, d: usize },
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

/// Reads a trip CSV with either `time_s,origin_x,origin_y,dest_x,dest_y`
/// (cell coordinates, row 0 at the top) or `time_s,origin_zone,dest_zone`.
pub fn load_trips(path: impl AsRef<Path>, grid: &ZoneGrid) -> Result<TripDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let data_err = |line: usize, msg: String| Error::Data { path: path.to_path_buf(), line, msg };
    let headers = reader.headers().map_err(|e| data_err(1, e.to_string()))?.clone();
    let schema = match (
        column(&headers, "time_s"),
        column(&headers, "origin_x"),
        column(&headers, "origin_y"),
        column(&headers, "dest_x"),
        column(&headers, "dest_y"),
        column(&headers, "origin_zone"),
        column(&headers, "dest_zone"),
    ) {
        (Some(t), Some(ox), Some(oy), Some(dx), Some(dy), _, _) => Schema::Cells { t, ox, oy, dx, dy },
        (Some(t), _, _, _, _, Some(o), Some(d)) => Schema::Zones { t, o, d },
        _ => return Err(data_err(1, format!("unrecognized header {:?}", headers.iter().collect::<Vec<_>>()))),
    };
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            data_err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| -> Result<u64> {
            let s = row.get(i).unwrap_or("");
            s.parse::<u64>().map_err(|_| data_err(line, format!("expected a non-negative integer, got {s:?}")))
        };
        let time_s = field(match schema {
            Schema::Cells { t, .. } | Schema::Zones { t, .. } => t,
        })?;
        if time_s >= SECONDS_PER_DAY as u64 {
            return Err(data_err(line, format!("time {time_s} is not within one day")));
        }
        let (origin, destination) = match schema {
            Schema::Cells { ox, oy, dx, dy, .. } => {
                let cell = |x: u64, y: u64| {
                    grid.zone_at(x as usize, y as usize)
                        .ok_or_else(|| data_err(line, format!("cell ({x}, {y}) is outside the valid grid")))
                };
                (cell(field(ox)?, field(oy)?)?, cell(field(dx)?, field(dy)?)?)
            }
            Schema::Zones { o, d, .. } => {
                let zone = |z: u64| {
                    let id = ZoneId(z as u32);
                    if z <= u32::MAX as u64 && grid.is_valid(id) {
                        Ok(id)
                    } else {
                        Err(data_err(line, format!("zone {z} is not a valid zone")))
                    }
                };
                (zone(field(o)?)?, zone(field(d)?)?)
            }
        };
        if origin == destination {
            return Err(data_err(line, "origin equals destination".into()));
        }
        records.push(TripRecord { time_s: time_s as u32, origin, destination });
    }
    if records.is_empty() {
        return Err(Error::Dataset(format!("{} contains no trips", path.display())));
    }
    TripDataset::new(records, grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Peak {
    pub hour: f64,
    pub width_hours: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hotspot {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OdModel {
    /// Origins and destinations drawn independently from a hotspot mixture,
    /// with `uniform_share` of draws uniform over valid zones.
    Hotspots { hotspots: Vec<Hotspot>, uniform_share: f64 },
    Pair { origin: [usize; 2], destination: [usize; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthProfile {
    pub peaks: Vec<Peak>,
    /// Weight of the flat background demand.
    pub base_weight: f64,
    pub od: OdModel,
}

impl Default for SynthProfile {
    fn default() -> Self {
        Self {
            peaks: vec![
                Peak { hour: 8.0, width_hours: 1.0, weight: 1.0 },
                Peak { hour: 12.5, width_hours: 1.0, weight: 0.7 },
                Peak { hour: 17.5, width_hours: 1.0, weight: 1.0 },
            ],
            base_weight: 0.25,
            od: OdModel::Hotspots {
                hotspots: vec![
                    Hotspot { x: 0.25, y: 0.3, radius: 0.12, weight: 1.0 },
                    Hotspot { x: 0.7, y: 0.25, radius: 0.1, weight: 0.8 },
                    Hotspot { x: 0.5, y: 0.75, radius: 0.15, weight: 1.0 },
                ],
                uniform_share: 0.3,
            },
        }
    }
}

impl SynthProfile {
    pub fn validate(&self) -> Result<()> {
        let weights = self.base_weight + self.peaks.iter().map(|p| p.weight).sum::<f64>();
        if !(weights > 0.0) || self.base_weight < 0.0 || self.peaks.iter().any(|p| p.weight < 0.0 || p.width_hours <= 0.0)
        {
            return Err(Error::Config("demand profile needs positive weights and widths".into()));
        }
        if let OdModel::Hotspots { hotspots, uniform_share } = &self.od {
            if !(0.0..=1.0).contains(uniform_share) || (hotspots.is_empty() && *uniform_share < 1.0) {
                return Err(Error::Config("hotspot model needs hotspots or uniform_share = 1".into()));
            }
        }
        Ok(())
    }

    /// Unnormalized demand density at `hour` of the day.
    pub fn density(&self, hour: f64) -> f64 {
        let peaks: f64 = self
            .peaks
            .iter()
            .map(|p| {
                let z = (hour - p.hour) / p.width_hours;
                p.weight * (-0.5 * z * z).exp() / (p.width_hours * (2.0 * std::f64::consts::PI).sqrt())
            })
            .sum();
        peaks + self.base_weight / 24.0
    }
}

/// Synthetic dataset with `total` trips. Request times are stratified
/// draws from the profile's daily density, so the histogram follows its
/// shape closely.
pub fn synth_trips(grid: &ZoneGrid, profile: &SynthProfile, total: usize, seed: u64) -> Result<TripDataset> {
    if total == 0 {
        return Err(Error::invalid("synthetic dataset needs at least one trip"));
    }
    profile.validate()?;
    if grid.num_valid() < 2 {
        return Err(Error::invalid("synthetic trips need at least two valid zones"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // cumulative density on a one-minute grid
    const STEPS: usize = 24 * 60;
    let mut cdf = Vec::with_capacity(STEPS + 1);
    cdf.push(0.0);
    for i in 0..STEPS {
        let hour = (i as f64 + 0.5) / 60.0;
        cdf.push(cdf[i] + profile.density(hour));
    }
    let mass = cdf[STEPS];
    let mut times: Vec<u32> = (0..total)
        .map(|i| {
            let u = (i as f64 + rng.random::<f64>()) / total as f64 * mass;
            let k = cdf.partition_point(|&c| c <= u).clamp(1, STEPS) - 1;
            let frac = (u - cdf[k]) / (cdf[k + 1] - cdf[k]).max(f64::MIN_POSITIVE);
            (((k as f64 + frac.clamp(0.0, 1.0)) * 60.0) as u32).min(SECONDS_PER_DAY - 1)
        })
        .collect();
    times.sort_unstable();

    let records = match &profile.od {
        OdModel::Pair { origin, destination } => {
            let o = grid
                .zone_at(origin[0], origin[1])
                .ok_or_else(|| Error::Config(format!("pair origin {origin:?} is not a valid zone")))?;
            let d = grid
                .zone_at(destination[0], destination[1])
                .ok_or_else(|| Error::Config(format!("pair destination {destination:?} is not a valid zone")))?;
            if o == d {
                return Err(Error::Config("pair origin equals destination".into()));
            }
            times.iter().map(|&time_s| TripRecord { time_s, origin: o, destination: d }).collect()
        }
        OdModel::Hotspots { hotspots, uniform_share } => {
            let spots = hotspots.clone();
            let share = *uniform_share;
            let draw = |rng: &mut ChaCha8Rng| draw_zone(grid, &spots, share, rng);
            times
                .iter()
                .map(|&time_s| {
                    let origin = draw(&mut rng);
                    let mut destination = draw(&mut rng);
                    while destination == origin {
                        destination = draw(&mut rng);
                    }
                    TripRecord { time_s, origin, destination }
                })
                .collect()
        }
    };
    TripDataset::new(records, grid)
}

fn draw_zone(grid: &ZoneGrid, hotspots: &[Hotspot], uniform_share: f64, rng: &mut ChaCha8Rng) -> ZoneId {
    let valid = grid.valid_zones();
    if hotspots.is_empty() || rng.random::<f64>() < uniform_share {
        return valid[rng.random_range(0..valid.len())];
    }
    let total: f64 = hotspots.iter().map(|h| h.weight).sum();
    let mut pick = rng.random::<f64>() * total;
    let spot = hotspots
        .iter()
        .find(|h| {
            pick -= h.weight;
            pick <= 0.0
        })
        .unwrap_or(&hotspots[hotspots.len() - 1]);
    let scale = grid.width().max(grid.height()) as f64;
    let normal = Normal::new(0.0, (spot.radius * scale).max(1e-6)).expect("positive deviation");
    for _ in 0..64 {
        let x = spot.x * grid.width() as f64 + normal.sample(rng);
        let y = spot.y * grid.height() as f64 + normal.sample(rng);
        if x >= 0.0 && y >= 0.0 {
            if let Some(z) = grid.zone_at(x as usize, y as usize) {
                return z;
            }
        }
    }
    valid[rng.random_range(0..valid.len())]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> ZoneGrid {
        ZoneGrid::full(20, 20, 0.5).unwrap()
    }

    /// Local maxima standing above the mean bin count; the flat overnight
    /// background jitters by one trip per bin.
    fn local_maxima(h: &[usize]) -> usize {
        let mean = h.iter().sum::<usize>() as f64 / h.len() as f64;
        (1..h.len() - 1).filter(|&i| h[i] > h[i - 1] && h[i] >= h[i + 1] && h[i] as f64 > mean).count()
    }

    #[test]
    fn three_peaks() {
        let d = synth_trips(&grid(), &SynthProfile::default(), 1000, 3).unwrap();
        assert_eq!(d.len(), 1000);
        let h = d.histogram(60.0);
        assert_eq!(local_maxima(&h), 3, "{h:?}");
    }

    #[test]
    fn seeded_twins() {
        let g = grid();
        let a = synth_trips(&g, &SynthProfile::default(), 300, 8).unwrap();
        let b = synth_trips(&g, &SynthProfile::default(), 300, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synth_trips(&g, &SynthProfile::default(), 300, 9).unwrap());
    }

    #[test]
    fn single_pair_profile() {
        let g = grid();
        let p = SynthProfile { od: OdModel::Pair { origin: [1, 1], destination: [4, 5] }, ..SynthProfile::default() };
        let d = synth_trips(&g, &p, 50, 1).unwrap();
        assert!(d.records.iter().all(|r| r.origin == d.records[0].origin && r.destination == d.records[0].destination));
        assert!((d.summary(&g).mean_distance - 2.5).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip_preserves_epoch_counts() {
        let g = grid();
        let d = synth_trips(&g, &SynthProfile::default(), 500, 2).unwrap();
        let mut f = tempfile::NamedTempFile::new().unwrap();
        d.write_csv(&mut f, &g).unwrap();
        let back = load_trips(f.path(), &g).unwrap();
        assert_eq!(back.histogram(15.0), d.histogram(15.0));
        assert_eq!(back, d);
    }

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn zone_id_schema_and_single_trip() {
        let g = grid();
        let f = write("time_s,origin_zone,dest_zone\n3600,0,45\n");
        let d = load_trips(f.path(), &g).unwrap();
        let h = d.histogram(15.0);
        assert_eq!(h.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h[4], 1);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let g = grid();
        let f = write("time_s,origin_x,origin_y,dest_x,dest_y\n10,1,1,2,2\n20,1,x,2,2\n");
        match load_trips(f.path(), &g) {
            Err(Error::Data { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let f = write("time_s,origin_x,origin_y,dest_x,dest_y\n10,1,1,25,2\n");
        assert!(matches!(load_trips(f.path(), &g), Err(Error::Data { line: 2, .. })));
        let f = write("");
        assert!(load_trips(f.path(), &g).unwrap_err().is_data_error());
        let f = write("time_s,origin_x,origin_y,dest_x,dest_y\n");
        assert!(matches!(load_trips(f.path(), &g), Err(Error::Dataset(_))));
        let f = write("a,b\n1,2\n");
        assert!(matches!(load_trips(f.path(), &g), Err(Error::Data { line: 1, .. })));
    }

    #[test]
    fn summary_percentiles() {
        let g = ZoneGrid::full(30, 1, 1.0).unwrap();
        let records = (1..=20)
            .map(|k| TripRecord { time_s: 0, origin: ZoneId(0), destination: ZoneId(k) })
            .collect();
        let s = TripDataset::new(records, &g).unwrap().summary(&g);
        assert_eq!(s.count, 20);
        assert!((s.mean_distance - 10.5).abs() < 1e-12);
        assert!((s.p5_distance - 1.95).abs() < 1e-12);
        assert!((s.p95_distance - 19.05).abs() < 1e-12);
    }
}
