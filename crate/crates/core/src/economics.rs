//! Fleet-size and battery-size profit model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// kWh per battery tier step.
pub const KWH_PER_TIER: f64 = 16.67;
pub const MAX_TIER: u32 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EconomicsConfig {
    pub years: f64,
    pub days_per_year: f64,
    pub car_cost: f64,
    pub maintenance_per_year: f64,
    pub fleet_sizes: Vec<usize>,
    pub tiers: Vec<u32>,
    /// Training iterations per sweep cell.
    pub train_iterations: usize,
    /// Evaluation episodes averaged per sweep cell.
    pub episodes: usize,
}

impl Default for EconomicsConfig {
    fn default() -> Self {
        Self {
            years: 4.0,
            days_per_year: 340.0,
            car_cost: 40_000.0,
            maintenance_per_year: 3_000.0,
            fleet_sizes: vec![20, 40, 60, 80],
            tiers: vec![1, 2, 3, 4, 5],
            train_iterations: 600,
            episodes: 10,
        }
    }
}

impl EconomicsConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("years", self.years),
            ("days_per_year", self.days_per_year),
            ("car_cost", self.car_cost),
            ("maintenance_per_year", self.maintenance_per_year),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("economics.{name} must be positive")));
            }
        }
        if let Some(&t) = self.tiers.iter().find(|&&t| !(1..=MAX_TIER).contains(&t)) {
            return Err(Error::Config(format!("battery tier {t} outside 1..={MAX_TIER}")));
        }
        if self.episodes == 0 {
            return Err(Error::Config("economics.episodes must be positive".into()));
        }
        Ok(())
    }
}

/// Battery capacity of tier `i` in kWh.
pub fn battery_kwh(tier: u32) -> f64 {
    KWH_PER_TIER * tier as f64
}

/// Battery range in miles at `miles_per_kwh`.
pub fn battery_miles(tier: u32, miles_per_kwh: f64) -> f64 {
    battery_kwh(tier) * miles_per_kwh
}

/// Battery price: $240 per kWh with a 20% premium per tier above the first.
pub fn battery_cost(tier: u32) -> Result<f64> {
    if !(1..=MAX_TIER).contains(&tier) {
        return Err(Error::invalid(format!("battery tier {tier} outside 1..={MAX_TIER}")));
    }
    Ok(240.0 * (1.0 + 0.2 * (tier as f64 - 1.0)) * battery_kwh(tier))
}

/// Lifetime profit of a fleet earning `daily_revenue`.
pub fn profit(daily_revenue: f64, cars: usize, tier: u32, config: &EconomicsConfig) -> Result<f64> {
    if daily_revenue < 0.0 || !daily_revenue.is_finite() {
        return Err(Error::invalid(format!("daily revenue must be non-negative, got {daily_revenue}")));
    }
    let per_car = config.car_cost + config.maintenance_per_year * config.years + battery_cost(tier)?;
    Ok(daily_revenue * config.years * config.days_per_year - cars as f64 * per_car)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceCell {
    pub fleet_size: usize,
    pub tier: u32,
    pub battery_miles: f64,
    pub mean_daily_revenue: f64,
    pub profit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfitSurface {
    pub cells: Vec<SurfaceCell>,
}

impl ProfitSurface {
    /// Profit-maximizing tier per fleet size, in fleet-size order. Ties go
    /// to the smaller tier.
    pub fn best_tiers(&self) -> Vec<(usize, u32)> {
        let mut fleets: Vec<usize> = self.cells.iter().map(|c| c.fleet_size).collect();
        fleets.sort_unstable();
        fleets.dedup();
        fleets
            .into_iter()
            .map(|n| {
                let best = self
                    .cells
                    .iter()
                    .filter(|c| c.fleet_size == n)
                    .fold(None::<&SurfaceCell>, |b, c| match b {
                        Some(b) if b.profit > c.profit || (b.profit == c.profit && b.tier < c.tier) => Some(b),
                        _ => Some(c),
                    })
                    .expect("fleet size has cells");
                (n, best.tier)
            })
            .collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let best = self.best_tiers();
        w.write_record(["fleet_size", "tier", "battery_miles", "mean_daily_revenue", "profit", "best"])?;
        for c in &self.cells {
            let is_best = best.iter().any(|&(n, t)| n == c.fleet_size && t == c.tier);
            w.write_record([
                c.fleet_size.to_string(),
                c.tier.to_string(),
                c.battery_miles.to_string(),
                c.mean_daily_revenue.to_string(),
                c.profit.to_string(),
                (is_best as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Profit over every (fleet size, tier) cell. `harness` returns the mean
/// daily revenue for one cell; cells run in parallel.
pub fn sweep<H>(config: &EconomicsConfig, miles_per_kwh: f64, harness: H) -> Result<ProfitSurface>
where
    H: Fn(usize, u32) -> Result<f64> + Sync,
{
    config.validate()?;
    let grid: Vec<(usize, u32)> =
        config.fleet_sizes.iter().flat_map(|&n| config.tiers.iter().map(move |&t| (n, t))).collect();
    let cells = grid
        .par_iter()
        .map(|&(n, tier)| {
            let revenue = harness(n, tier)?;
            Ok(SurfaceCell {
                fleet_size: n,
                tier,
                battery_miles: battery_miles(tier, miles_per_kwh),
                mean_daily_revenue: revenue,
                profit: profit(revenue.max(0.0), n, tier, config)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProfitSurface { cells })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn tier_costs() {
        assert!(rel(battery_cost(1).unwrap(), 4000.8) < 1e-12);
        assert!((battery_cost(2).unwrap() - 9602.0).abs() < 0.1);
        assert!(rel(battery_cost(10).unwrap(), 112_022.4) < 1e-12);
        assert!(battery_cost(0).is_err());
        assert!(battery_cost(11).is_err());
    }

    #[test]
    fn costs_increase_convexly() {
        let c: Vec<f64> = (1..=MAX_TIER).map(|i| battery_cost(i).unwrap()).collect();
        for w in c.windows(3) {
            assert!(w[1] > w[0]);
            assert!(w[2] - w[1] > w[1] - w[0]);
        }
    }

    #[test]
    fn profit_cases() {
        let cfg = EconomicsConfig::default();
        // 1.6 * 66.68 * 240 = 25605.12
        let expected = 757_410.0 * 1360.0 - 1500.0 * (40_000.0 + 12_000.0 + 25_605.12);
        assert!(rel(profit(757_410.0, 1500, 4, &cfg).unwrap(), expected) < 1e-12);
        assert!(profit(0.0, 10, 1, &cfg).unwrap() < 0.0);
        assert_eq!(profit(0.0, 0, 3, &cfg).unwrap(), 0.0);
        assert!(profit(-1.0, 1, 1, &cfg).is_err());
    }

    #[test]
    fn sweep_shapes() {
        let cfg = EconomicsConfig { fleet_sizes: vec![5], tiers: vec![2], ..EconomicsConfig::default() };
        let s = sweep(&cfg, 3.0, |_, _| Ok(100.0)).unwrap();
        assert_eq!(s.cells.len(), 1);
        assert_eq!(s.cells[0].profit, profit(100.0, 5, 2, &cfg).unwrap());

        let cfg = EconomicsConfig { fleet_sizes: vec![1, 2], tiers: vec![1, 2, 3], ..EconomicsConfig::default() };
        let s = sweep(&cfg, 3.0, |_, _| Ok(0.0)).unwrap();
        assert!(s.cells.iter().all(|c| c.profit < 0.0));
        assert_eq!(s.best_tiers(), vec![(1, 1), (2, 1)]);
        let mut out = Vec::new();
        s.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 7);
    }
}
