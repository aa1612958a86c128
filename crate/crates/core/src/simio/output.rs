//! Result files: CSV tables and JSON summaries.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::adp::{ActivityShares, EpisodeMetrics, SummaryMetrics};
use crate::error::{Error, Result};
use crate::pricing::PriceRecord;

/// An output directory, created on open.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        std::fs::create_dir_all(&root)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", root.display()))))?;
        Ok(Self { root })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn file(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.path(name);
        let f = File::create(&path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Ok(BufWriter::new(f))
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut f = self.file(name)?;
        serde_json::to_writer_pretty(&mut f, value)?;
        writeln!(f)?;
        f.flush()?;
        Ok(())
    }
}

/// One row per (episode, epoch).
pub fn write_epochs<W: Write>(episodes: &[EpisodeMetrics], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "episode",
        "t",
        "requested",
        "accepted",
        "served",
        "lost",
        "coverage",
        "idle",
        "on_trip",
        "repositioning",
        "recharging",
        "battery_miles",
        "revenue",
        "mean_price",
    ])?;
    for (i, ep) in episodes.iter().enumerate() {
        for m in &ep.epochs {
            let coverage = if m.requested == 0 { 1.0 } else { m.served as f64 / m.requested as f64 };
            w.write_record([
                i.to_string(),
                m.t.to_string(),
                m.requested.to_string(),
                m.accepted.to_string(),
                m.served.to_string(),
                m.lost.to_string(),
                coverage.to_string(),
                m.idle.to_string(),
                m.on_trip.to_string(),
                m.repositioning.to_string(),
                m.recharging.to_string(),
                m.battery_miles.to_string(),
                m.revenue.to_string(),
                m.mean_price.map_or(String::new(), |p| p.to_string()),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `iteration,revenue` rows.
pub fn write_revenue_series<W: Write>(revenue: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "revenue"])?;
    for (i, r) in revenue.iter().enumerate() {
        w.write_record([(i + 1).to_string(), r.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_price_log<W: Write>(log: &[PriceRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["episode", "t", "zone", "price", "rider_accept", "operator_accept"])?;
    for r in log {
        w.write_record([
            r.episode.to_string(),
            r.t.to_string(),
            r.zone.0.to_string(),
            r.price.to_string(),
            r.rider_accept.to_string(),
            r.operator_accept.map_or(String::new(), |a| a.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_price_histogram<W: Write>(histogram: &[(f64, usize)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["price", "count"])?;
    for (p, c) in histogram {
        w.write_record([format!("{p:.2}"), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Headline metrics of an evaluation, in percent where the fleet tables
/// use percent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub policy: String,
    pub seed: u64,
    pub episodes: usize,
    pub cars: usize,
    pub revenue: f64,
    pub revenue_per_car: f64,
    pub requested: f64,
    pub served: f64,
    pub coverage_percent: f64,
    pub activity_percent: ActivityShares,
    pub episode_revenue: Vec<f64>,
}

impl Summary {
    pub fn new(policy: impl Into<String>, seed: u64, episodes: &[EpisodeMetrics]) -> Self {
        let s = SummaryMetrics::of(episodes);
        Self {
            policy: policy.into(),
            seed,
            episodes: s.episodes,
            cars: s.cars,
            revenue: s.revenue,
            revenue_per_car: s.revenue_per_car,
            requested: s.requested,
            served: s.served,
            coverage_percent: 100.0 * s.coverage,
            activity_percent: s.activity,
            episode_revenue: episodes.iter().map(|e| e.revenue).collect(),
        }
    }
}
