//! Runners behind the command-line subcommands. Each reads a validated
//! [`RunConfig`] and writes its results into the configured output directory.

use std::io::Write;

use serde::Serialize;

use crate::adp::{self, EmpiricalResampler, Evaluation, PolicyKind, PricingMode, RepeatDay, RunInputs, TripSource};
use crate::economics::{self, ProfitSurface};
use crate::error::{Error, Result};
use crate::fleet::{CarAttribute, ModelConfig};
use crate::oracle::{self, DpSolution};
use crate::pricing::{self, PriceSimReport, PricingEngine};
use crate::spatial::{ZoneGrid, ZoneId};
use crate::vfa::ValueTable;

use super::config::{RunConfig, Sampling};
use super::data::{load_trips, synth_trips, DatasetSummary, TripDataset};
use super::output::{self, OutputDir, Summary};

/// Grid, model and trip data of a run.
pub struct Context {
    pub grid: ZoneGrid,
    pub model: ModelConfig,
    pub dataset: TripDataset,
}

impl Context {
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid.build(&cfg.base_dir)?;
        let dataset = match &cfg.demand.trips {
            Some(path) => load_trips(cfg.resolve(path), &grid)?,
            None => synth_trips(&grid, &cfg.demand.profile, cfg.demand.total, cfg.demand.seed)?,
        };
        Ok(Self { grid, model: cfg.model.clone(), dataset })
    }

    pub fn source(&self, cfg: &RunConfig) -> Result<Box<dyn TripSource>> {
        Ok(match cfg.demand.sampling {
            Sampling::Resample => Box::new(EmpiricalResampler::new(self.dataset.clone())),
            Sampling::Repeat => Box::new(RepeatDay::from_dataset(&self.dataset, &self.model, &self.grid)?),
        })
    }
}

fn policy_name(kind: PolicyKind) -> &'static str {
    match kind {
        PolicyKind::Myopic => "myopic",
        PolicyKind::Vfa => "vfa",
    }
}

fn write_pricing(out: &OutputDir, engine: &PricingEngine) -> Result<()> {
    output::write_price_log(&engine.log, out.file("price_log.csv")?)?;
    output::write_price_histogram(&engine.price_histogram(), out.file("price_histogram.csv")?)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub iterations: usize,
    pub first_revenue: f64,
    pub last_revenue: f64,
    pub table_cells: usize,
    pub last_episode: Summary,
}

/// Trains a value table. Writes `revenue_series.csv`, `table.bin`,
/// `value_table.csv`, the final episode's `epochs.csv` and `summary.json`,
/// and with pricing on, `pricing.json` and the price log and histogram.
pub fn train(cfg: &RunConfig) -> Result<TrainReport> {
    if cfg.policy.kind != PolicyKind::Vfa {
        return Err(Error::Config("train needs policy vfa".into()));
    }
    let ctx = Context::build(cfg)?;
    let source = ctx.source(cfg)?;
    let mode = cfg.pricing.mode();
    let inputs = RunInputs {
        model: &ctx.model,
        grid: &ctx.grid,
        source: source.as_ref(),
        fleet: &cfg.fleet,
        seed: cfg.seed,
        pricing: mode,
    };
    let engine = match mode {
        PricingMode::Off => None,
        _ => Some(PricingEngine::new(cfg.pricing.engine.clone(), cfg.seed)?),
    };
    let result = adp::train(&inputs, &cfg.train_config(), engine)?;

    let out = OutputDir::create(cfg.resolve(&cfg.output.dir))?;
    output::write_revenue_series(&result.revenue, out.file("revenue_series.csv")?)?;
    result.table.save(out.path("table.bin"))?;
    let mut f = out.file("value_table.csv")?;
    result.table.write_csv(&mut f)?;
    f.flush()?;
    let last = std::slice::from_ref(&result.last);
    output::write_epochs(last, out.file("epochs.csv")?)?;
    if let Some(engine) = &result.pricing {
        out.json("pricing.json", engine)?;
        write_pricing(&out, engine)?;
    }
    let report = TrainReport {
        iterations: result.revenue.len(),
        first_revenue: result.revenue.first().copied().unwrap_or(0.0),
        last_revenue: result.revenue.last().copied().unwrap_or(0.0),
        table_cells: result.table.materialized_cells(),
        last_episode: Summary::new("vfa", cfg.seed, last),
    };
    out.json("summary.json", &report)?;
    Ok(report)
}

fn load_table(cfg: &RunConfig, ctx: &Context) -> Result<ValueTable> {
    let path = match &cfg.evaluate.table {
        Some(p) => cfg.resolve(p),
        None => cfg.resolve(&cfg.output.dir).join("table.bin"),
    };
    if !path.exists() {
        return Err(Error::Config(format!("value table {} not found; run train first", path.display())));
    }
    let table = ValueTable::load(&path)?;
    if table.horizon() != ctx.model.horizon_epochs
        || table.battery_levels() != ctx.model.battery_levels
        || table.tree().area_count(0) != ctx.grid.num_valid()
    {
        return Err(Error::Config(format!("value table {} does not match the grid and model", path.display())));
    }
    Ok(table)
}

fn evaluation_engine(cfg: &RunConfig) -> Result<Option<PricingEngine>> {
    match cfg.pricing.mode() {
        PricingMode::Off => Ok(None),
        PricingMode::Fixed { .. } => Ok(Some(PricingEngine::new(cfg.pricing.engine.clone(), cfg.seed)?)),
        PricingMode::Learn => {
            let path = match &cfg.evaluate.pricing_state {
                Some(p) => cfg.resolve(p),
                None => cfg.resolve(&cfg.output.dir).join("pricing.json"),
            };
            if !path.exists() {
                return Err(Error::Config(format!("pricing state {} not found; run train first", path.display())));
            }
            let text = std::fs::read_to_string(&path)?;
            let engine: PricingEngine = serde_json::from_str(&text)
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
            Ok(Some(engine))
        }
    }
}

/// Evaluates the configured policy. Writes `epochs.csv`, `summary.json`
/// and with pricing on, the price log and histogram.
pub fn evaluate(cfg: &RunConfig) -> Result<Summary> {
    let ctx = Context::build(cfg)?;
    let source = ctx.source(cfg)?;
    let table = match cfg.policy.kind {
        PolicyKind::Vfa => Some(load_table(cfg, &ctx)?),
        PolicyKind::Myopic => None,
    };
    let engine = evaluation_engine(cfg)?;
    let inputs = RunInputs {
        model: &ctx.model,
        grid: &ctx.grid,
        source: source.as_ref(),
        fleet: &cfg.fleet,
        seed: cfg.seed,
        pricing: cfg.pricing.mode(),
    };
    let Evaluation { episodes, prices, .. } =
        adp::evaluate(&inputs, &cfg.policy, cfg.evaluate.episodes, table.as_ref(), engine.as_ref())?;

    let out = OutputDir::create(cfg.resolve(&cfg.output.dir))?;
    output::write_epochs(&episodes, out.file("epochs.csv")?)?;
    if let Some(mut engine) = engine {
        engine.log = prices;
        write_pricing(&out, &engine)?;
    }
    let summary = Summary::new(policy_name(cfg.policy.kind), cfg.seed, &episodes);
    out.json("summary.json", &summary)?;
    Ok(summary)
}

/// Standalone pricing study. Writes `price_sim.json` and the price log and
/// histogram.
pub fn price_sim(cfg: &RunConfig) -> Result<PriceSimReport> {
    cfg.validate()?;
    let (report, engine) = pricing::price_sim(&cfg.pricing.engine, &cfg.price_sim, cfg.seed)?;
    let out = OutputDir::create(cfg.resolve(&cfg.output.dir))?;
    out.json("price_sim.json", &report)?;
    write_pricing(&out, &engine)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct EconomicsReport {
    pub surface: ProfitSurface,
    /// `(fleet size, profit-maximizing tier)` pairs.
    pub best_tiers: Vec<(usize, u32)>,
}

/// Trains and evaluates the VFA policy over every (fleet size, battery tier)
/// cell. The configured battery range is replaced by each tier's range; the
/// number of battery levels is kept. Writes `profit_surface.csv` and
/// `economics.json`.
pub fn economics(cfg: &RunConfig) -> Result<EconomicsReport> {
    let ctx = Context::build(cfg)?;
    let source = ctx.source(cfg)?;
    let sweep = &cfg.economics;
    let train_cfg = adp::TrainConfig { iterations: sweep.train_iterations, ..cfg.train_config() };
    let surface = economics::sweep(sweep, ctx.model.miles_per_kwh, |cars, tier| {
        let model = ModelConfig {
            battery_range_miles: economics::battery_miles(tier, ctx.model.miles_per_kwh),
            ..ctx.model.clone()
        };
        let fleet = adp::FleetInit::Random { cars };
        let inputs = RunInputs {
            model: &model,
            grid: &ctx.grid,
            source: source.as_ref(),
            fleet: &fleet,
            seed: cfg.seed,
            pricing: PricingMode::Off,
        };
        let trained = adp::train(&inputs, &train_cfg, None)?;
        let e = adp::evaluate(&inputs, &cfg.train_config().policy, sweep.episodes, Some(&trained.table), None)?;
        Ok(e.summary.revenue)
    })?;
    let out = OutputDir::create(cfg.resolve(&cfg.output.dir))?;
    surface.write_csv(out.file("profit_surface.csv")?)?;
    let report = EconomicsReport { best_tiers: surface.best_tiers(), surface };
    out.json("economics.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthReport {
    pub summary: DatasetSummary,
    pub histogram: Vec<usize>,
}

/// Generates (or loads) the configured trip data. Writes `trips.csv` and
/// `trips_summary.json` with the per-epoch histogram.
pub fn synth(cfg: &RunConfig) -> Result<SynthReport> {
    let ctx = Context::build(cfg)?;
    let out = OutputDir::create(cfg.resolve(&cfg.output.dir))?;
    ctx.dataset.write_csv(out.file("trips.csv")?, &ctx.grid)?;
    let report = SynthReport {
        summary: ctx.dataset.summary(&ctx.grid),
        histogram: ctx.dataset.histogram(ctx.model.epoch_minutes),
    };
    out.json("trips_summary.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct OracleReport {
    pub solution: DpSolution,
    pub start: CarAttribute,
    pub value: f64,
    pub rendered: String,
}

/// Solves the configured single-car instance exactly. Writes
/// `dp_values.csv` with the optimal value and decision of every state.
pub fn oracle(cfg: &RunConfig) -> Result<OracleReport> {
    cfg.validate()?;
    let grid = cfg.grid.build(&cfg.base_dir)?;
    let model = &cfg.model;
    let zone = |id: u32| {
        let z = ZoneId(id);
        if grid.is_valid(z) {
            Ok(z)
        } else {
            Err(Error::Config(format!("oracle zone {id} is not a valid zone")))
        }
    };
    let trips = cfg
        .oracle
        .trips
        .iter()
        .map(|&[t, o, d]| Ok((t, zone(o)?, zone(d)?)))
        .collect::<Result<Vec<_>>>()?;
    let day = oracle::single_car_day(&grid, model, &trips)?;
    let solution = oracle::exact_dp(model, &grid, &day)?;
    let battery = cfg.oracle.start_battery.unwrap_or(model.max_battery());
    if battery > model.max_battery() {
        return Err(Error::Config(format!("oracle.start_battery {battery} above {}", model.max_battery())));
    }
    let start = CarAttribute::new(zone(cfg.oracle.start_zone)?, battery);

    let out = OutputDir::create(cfg.resolve(&cfg.output.dir))?;
    let mut w = csv::Writer::from_writer(out.file("dp_values.csv")?);
    w.write_record(["t", "zone", "battery", "value", "decision"])?;
    for t in 0..solution.horizon() {
        for &z in grid.valid_zones() {
            for l in 0..model.battery_levels {
                let a = CarAttribute::new(z, l);
                let decision = solution.decision(t, a).map_or(String::new(), |d| format!("{:?}", d.decision));
                w.write_record([t.to_string(), z.0.to_string(), l.to_string(), solution.value(t, a).to_string(), decision])?;
            }
        }
    }
    w.flush()?;
    let rendered = solution.render(&grid);
    Ok(OracleReport { value: solution.value(0, start), start, rendered, solution })
}
