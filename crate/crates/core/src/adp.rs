//! Forward-pass training of the value table and evaluation of frozen
//! policies over simulated days.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::{build_problem, solve, AssignmentProblem, AssignmentSolution, ObjectiveKind, ValueLookup};
use crate::error::{Error, Result};
use crate::fleet::{CarAttribute, CarStatus, DecisionKind, Epoch, FleetState, ModelConfig, TripRequest};
use crate::pricing::{rider_response, Covariates, Observation, PriceRecord, PricingEngine};
use crate::simio::data::{TripDataset, TripRecord};
use crate::spatial::{ZoneGrid, ZoneId};
use crate::vfa::{ValueTable, VfaConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Myopic,
    Vfa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Battery fraction below which the myopic policy must recharge.
    pub myopic_threshold: Option<f64>,
    /// Optional forced-recharge threshold for the VFA policy.
    pub vfa_threshold: Option<f64>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { kind: PolicyKind::Vfa, myopic_threshold: Some(0.1), vfa_threshold: None }
    }
}

impl PolicyConfig {
    pub fn myopic(threshold: Option<f64>) -> Self {
        Self { kind: PolicyKind::Myopic, myopic_threshold: threshold, vfa_threshold: None }
    }

    pub fn vfa() -> Self {
        Self { kind: PolicyKind::Vfa, myopic_threshold: None, vfa_threshold: None }
    }

    fn threshold(&self) -> Option<f64> {
        match self.kind {
            PolicyKind::Myopic => self.myopic_threshold,
            PolicyKind::Vfa => self.vfa_threshold,
        }
    }
}

/// How trip prices are set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PricingMode {
    /// Constant model price; every request is accepted by its rider.
    Off,
    /// Constant price with riders answering through the true curves.
    Fixed { price: f64 },
    /// Learned surge prices.
    Learn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FleetInit {
    /// Uniform over valid zones with full batteries, redrawn per episode.
    Random { cars: usize },
    Fixed { cars: Vec<CarAttribute> },
    /// Uniform zone, battery and entry epoch; widens the states visited
    /// while training.
    Exploring { cars: usize },
}

impl FleetInit {
    pub fn size(&self) -> usize {
        match self {
            FleetInit::Random { cars } => *cars,
            FleetInit::Fixed { cars } => cars.len(),
            FleetInit::Exploring { cars } => *cars,
        }
    }

    /// Initial attributes and the epoch each car enters service.
    fn place(&self, model: &ModelConfig, grid: &ZoneGrid, rng: &mut impl Rng) -> Result<Vec<(CarAttribute, Epoch)>> {
        let valid = grid.valid_zones();
        if valid.is_empty() && self.size() > 0 {
            return Err(Error::invalid("no valid zones to place cars"));
        }
        match self {
            FleetInit::Random { cars } => Ok((0..*cars)
                .map(|_| (CarAttribute::new(valid[rng.random_range(0..valid.len())], model.max_battery()), 0))
                .collect()),
            FleetInit::Exploring { cars } => Ok((0..*cars)
                .map(|_| {
                    let zone = valid[rng.random_range(0..valid.len())];
                    let battery = rng.random_range(0..=model.max_battery());
                    (CarAttribute::new(zone, battery), rng.random_range(0..model.horizon_epochs))
                })
                .collect()),
            FleetInit::Fixed { cars } => {
                for c in cars {
                    if !grid.is_valid(c.zone) || c.battery > model.max_battery() {
                        return Err(Error::invalid(format!("initial car {c:?} is not a valid attribute")));
                    }
                }
                Ok(cars.iter().map(|&c| (c, 0)).collect())
            }
        }
    }
}

/// Trips of one simulated day, bucketed by epoch.
pub type Day = Vec<Vec<TripRequest>>;

/// Converts records to per-epoch trip lists at the model's base price.
pub fn bucket_day(records: &[TripRecord], model: &ModelConfig, grid: &ZoneGrid) -> Result<Day> {
    let mut day: Day = vec![Vec::new(); model.horizon_epochs as usize];
    let width = model.epoch_minutes * 60.0;
    for r in records {
        let t = model.lead_epochs + (r.time_s as f64 / width) as Epoch;
        if t >= model.horizon_epochs {
            return Err(Error::Config(format!(
                "trip at {}s falls in epoch {t}, beyond the horizon of {}",
                r.time_s, model.horizon_epochs
            )));
        }
        let bucket = &mut day[t as usize];
        let id = bucket.len();
        bucket.push(TripRequest::new(id, r.origin, r.destination, t, model.price_per_mile, grid)?);
    }
    Ok(day)
}

/// Supplies one sample path of demand per episode.
pub trait TripSource: Sync {
    fn day(&self, episode: u64, rng: &mut ChaCha8Rng, model: &ModelConfig, grid: &ZoneGrid) -> Result<Day>;
}

/// Resamples every epoch's trips with replacement from the same epoch of
/// the dataset, keeping per-epoch counts.
#[derive(Debug, Clone)]
pub struct EmpiricalResampler {
    dataset: TripDataset,
}

impl EmpiricalResampler {
    pub fn new(dataset: TripDataset) -> Self {
        Self { dataset }
    }
}

impl TripSource for EmpiricalResampler {
    fn day(&self, _episode: u64, rng: &mut ChaCha8Rng, model: &ModelConfig, grid: &ZoneGrid) -> Result<Day> {
        let base = bucket_day(&self.dataset.records, model, grid)?;
        Ok(base
            .iter()
            .enumerate()
            .map(|(t, trips)| {
                (0..trips.len())
                    .map(|id| {
                        let mut trip = trips[rng.random_range(0..trips.len())].clone();
                        trip.id = id;
                        trip.request_epoch = t as Epoch;
                        trip
                    })
                    .collect()
            })
            .collect())
    }
}

/// The same day in every episode.
#[derive(Debug, Clone)]
pub struct RepeatDay {
    day: Day,
}

impl RepeatDay {
    pub fn new(day: Day) -> Self {
        Self { day }
    }

    pub fn from_dataset(dataset: &TripDataset, model: &ModelConfig, grid: &ZoneGrid) -> Result<Self> {
        Ok(Self { day: bucket_day(&dataset.records, model, grid)? })
    }
}

impl TripSource for RepeatDay {
    fn day(&self, _episode: u64, _rng: &mut ChaCha8Rng, _model: &ModelConfig, _grid: &ZoneGrid) -> Result<Day> {
        Ok(self.day.clone())
    }
}

/// A finite list of recorded days; episode `i` plays day `i`.
#[derive(Debug, Clone)]
pub struct FixedDays {
    days: Vec<TripDataset>,
}

impl FixedDays {
    pub fn new(days: Vec<TripDataset>) -> Self {
        Self { days }
    }
}

impl TripSource for FixedDays {
    fn day(&self, episode: u64, _rng: &mut ChaCha8Rng, model: &ModelConfig, grid: &ZoneGrid) -> Result<Day> {
        let d = self.days.get(episode as usize).ok_or(Error::SourceExhausted(self.days.len()))?;
        bucket_day(&d.records, model, grid)
    }
}

const PHASE_TRAIN: u64 = 1;
const PHASE_EVAL: u64 = 2;
const STREAM_DEMAND: u64 = 0;
const STREAM_PLACEMENT: u64 = 1;
const STREAM_PRICING: u64 = 2;

/// Independent stream per (phase, episode, purpose) so that policies
/// compared on the same seed see the same demand and placement.
fn stream(seed: u64, phase: u64, episode: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((phase << 56) | (episode << 4) | purpose);
    rng
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub t: Epoch,
    pub requested: usize,
    /// Requests whose rider accepted the offered price.
    pub accepted: usize,
    pub served: usize,
    pub lost: usize,
    pub idle: usize,
    pub on_trip: usize,
    pub repositioning: usize,
    pub recharging: usize,
    pub battery_miles: f64,
    pub revenue: f64,
    pub mean_price: Option<f64>,
}

/// Percent of car-epochs spent in each status.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ActivityShares {
    pub idle: f64,
    pub on_trip: f64,
    pub repositioning: f64,
    pub recharging: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub epochs: Vec<EpochMetrics>,
    pub cars: usize,
    pub revenue: f64,
    pub requested: usize,
    pub served: usize,
    pub coverage: f64,
    pub revenue_per_car: f64,
    /// All zeros for an empty fleet.
    pub activity: ActivityShares,
}

impl EpisodeMetrics {
    fn finish(epochs: Vec<EpochMetrics>, cars: usize) -> Self {
        let revenue = epochs.iter().map(|e| e.revenue).sum();
        let requested = epochs.iter().map(|e| e.requested).sum();
        let served = epochs.iter().map(|e| e.served).sum();
        let car_epochs: usize = epochs.iter().map(|e| e.idle + e.on_trip + e.repositioning + e.recharging).sum();
        let share = |f: fn(&EpochMetrics) -> usize| {
            if car_epochs == 0 {
                0.0
            } else {
                100.0 * epochs.iter().map(f).sum::<usize>() as f64 / car_epochs as f64
            }
        };
        let activity = ActivityShares {
            idle: share(|e| e.idle),
            on_trip: share(|e| e.on_trip),
            repositioning: share(|e| e.repositioning),
            recharging: share(|e| e.recharging),
        };
        Self {
            cars,
            revenue,
            requested,
            served,
            coverage: if requested == 0 { 0.0 } else { served as f64 / requested as f64 },
            revenue_per_car: if cars == 0 { 0.0 } else { revenue / cars as f64 },
            activity,
            epochs,
        }
    }

    /// Recharging cars summed over epochs `[from, to)`.
    pub fn recharging_in(&self, from: Epoch, to: Epoch) -> usize {
        self.epochs.iter().filter(|e| e.t >= from && e.t < to).map(|e| e.recharging).sum()
    }
}

/// One `(t, a, v)` observation per car class present in the solved epoch.
pub fn dual_harvest(problem: &AssignmentProblem, solution: &AssignmentSolution) -> Vec<(Epoch, CarAttribute, f64)> {
    problem
        .car_classes
        .iter()
        .zip(&solution.car_duals)
        .filter(|(c, _)| c.count > 0)
        .map(|(c, &v)| (problem.epoch, c.attribute, v))
        .collect()
}

pub enum TableMode<'a> {
    None,
    Frozen(&'a ValueTable),
    Learning(&'a mut ValueTable),
}

impl TableMode<'_> {
    fn lookup(&self) -> Option<&dyn ValueLookup> {
        match self {
            TableMode::None => None,
            TableMode::Frozen(t) => Some(*t as &dyn ValueLookup),
            TableMode::Learning(t) => Some(&**t as &dyn ValueLookup),
        }
    }
}

/// Everything one simulated day needs besides the table and prices.
pub struct Episode<'a> {
    pub model: &'a ModelConfig,
    pub grid: &'a ZoneGrid,
    pub policy: &'a PolicyConfig,
    /// Initial attribute and entry epoch of every car.
    pub cars: Vec<(CarAttribute, Epoch)>,
    pub day: Day,
    pub episode: u64,
}

/// Simulates one day: price and filter requests, solve the assignment,
/// learn from the duals, execute decisions and record metrics.
pub fn run_episode(
    ep: Episode<'_>,
    mut table: TableMode<'_>,
    mut pricing: Option<(&mut PricingEngine, PricingMode)>,
    pricing_rng: &mut ChaCha8Rng,
) -> Result<EpisodeMetrics> {
    let Episode { model, grid, policy, cars, day, episode } = ep;
    let kind = match policy.kind {
        PolicyKind::Myopic => ObjectiveKind::Myopic,
        PolicyKind::Vfa => ObjectiveKind::Vfa,
    };
    if kind == ObjectiveKind::Vfa && matches!(table, TableMode::None) {
        return Err(Error::invalid("VFA policy requires a value table"));
    }
    let horizon = model.horizon_epochs;
    let attributes: Vec<CarAttribute> = cars.iter().map(|c| c.0).collect();
    let mut state = FleetState::new(&attributes);
    for (car, &(_, entry)) in state.cars.iter_mut().zip(&cars) {
        car.available_at = entry;
    }
    let mut epochs = Vec::with_capacity(horizon as usize);

    for t in 0..horizon {
        let requests = day.get(t as usize).cloned().unwrap_or_default();
        state.apply_exogenous(Vec::new(), &[], t);

        // offers: (zone, covariates) per accepted trip, plus declined ones
        let mut offers: Vec<(ZoneId, Covariates, bool)> = Vec::new();
        let mut accepted: Vec<TripRequest> = Vec::with_capacity(requests.len());
        let mut price_sum = 0.0;
        match pricing.as_mut() {
            Some((engine, mode)) if *mode != PricingMode::Off => {
                let mut vehicles: BTreeMap<ZoneId, usize> = BTreeMap::new();
                for car in state.assignable() {
                    *vehicles.entry(car.attribute.zone).or_default() += 1;
                }
                let mut by_zone: BTreeMap<ZoneId, Vec<&TripRequest>> = BTreeMap::new();
                for trip in &requests {
                    by_zone.entry(trip.origin).or_default().push(trip);
                }
                for (zone, trips) in by_zone {
                    let base = Covariates {
                        time: t as f64 / horizon as f64,
                        price: 0.0,
                        vehicles: vehicles.get(&zone).copied().unwrap_or(0) as f64,
                        requests: trips.len() as f64,
                    };
                    let price = match *mode {
                        PricingMode::Fixed { price } => price,
                        _ => engine.recommend(zone, &base),
                    };
                    let c = base.with_price(price);
                    let rider = engine.truth(zone).rider.clone();
                    for trip in trips {
                        let yes = rider_response(&rider, &c, pricing_rng);
                        offers.push((zone, c, yes));
                        price_sum += price;
                        if yes {
                            accepted.push(TripRequest { price_per_mile: price, ..trip.clone() });
                        } else {
                            engine.log.push(PriceRecord {
                                episode,
                                t,
                                zone,
                                price,
                                rider_accept: false,
                                operator_accept: None,
                            });
                        }
                    }
                }
            }
            _ => accepted = requests.clone(),
        }
        for (i, trip) in accepted.iter_mut().enumerate() {
            trip.id = i;
        }
        state.trips = accepted;

        let problem = build_problem(&state, kind, table.lookup(), policy.threshold(), model, grid)?;
        let solution = solve(&problem);
        if let TableMode::Learning(tbl) = &mut table {
            for (te, a, v) in dual_harvest(&problem, &solution) {
                tbl.update(te, a, v)?;
            }
        }

        // execute flows, cars of a class in id order
        let mut class_cars: Vec<Vec<usize>> = vec![Vec::new(); problem.car_classes.len()];
        let class_of: BTreeMap<CarAttribute, usize> =
            problem.car_classes.iter().enumerate().map(|(i, c)| (c.attribute, i)).collect();
        for car in state.assignable() {
            class_cars[class_of[&car.attribute]].push(car.id);
        }
        for q in &mut class_cars {
            q.reverse();
        }
        let mut trip_queue: Vec<Vec<usize>> =
            problem.trip_classes.iter().map(|c| c.members.iter().rev().copied().collect()).collect();
        let mut served_trip = vec![false; state.trips.len()];
        let mut revenue = 0.0;
        for (arc, &x) in problem.arcs.iter().zip(&solution.flows) {
            for _ in 0..x {
                let id = class_cars[arc.car_class].pop().expect("flow respects class counts");
                let car = &mut state.cars[id];
                car.attribute = arc.arc.result;
                car.available_at = arc.arc.result_available_at;
                car.status = arc.kind().status();
                revenue += arc.arc.contribution;
                if let Some(b) = arc.trip_class {
                    let trip = trip_queue[b].pop().expect("flow respects trip counts");
                    served_trip[trip] = true;
                }
            }
        }

        if let Some((engine, mode)) = pricing.as_mut() {
            let learn = *mode == PricingMode::Learn;
            let mut served_iter = served_trip.iter();
            for (zone, c, yes) in &offers {
                let operator = if *yes { served_iter.next().copied() } else { None };
                if *yes {
                    engine.log.push(PriceRecord {
                        episode,
                        t,
                        zone: *zone,
                        price: c.price,
                        rider_accept: true,
                        operator_accept: operator,
                    });
                }
                if learn {
                    engine.belief(*zone).update(Observation {
                        covariates: *c,
                        rider_accept: *yes,
                        operator_accept: operator,
                    });
                }
            }
        }

        let mut m = EpochMetrics {
            t,
            requested: requests.len(),
            accepted: state.trips.len(),
            served: served_trip.iter().filter(|&&s| s).count(),
            revenue,
            mean_price: (!offers.is_empty()).then(|| price_sum / offers.len() as f64),
            ..EpochMetrics::default()
        };
        m.lost = m.requested - m.served;
        for car in &state.cars {
            match car.status {
                CarStatus::Idle => m.idle += 1,
                CarStatus::OnTrip => m.on_trip += 1,
                CarStatus::Repositioning => m.repositioning += 1,
                CarStatus::Recharging => m.recharging += 1,
            }
            m.battery_miles += model.battery_miles(car.attribute.battery);
        }
        epochs.push(m);
    }
    Ok(EpisodeMetrics::finish(epochs, cars.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub policy: PolicyConfig,
    pub vfa: VfaConfig,
    /// Verify level-0 monotonicity every this many iterations; 0 disables.
    pub check_every: usize,
    /// Start each training episode from random zones, batteries and entry
    /// epochs instead of the run's fleet placement.
    pub exploring_starts: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 50,
            policy: PolicyConfig::vfa(),
            vfa: VfaConfig::default(),
            check_every: 0,
            exploring_starts: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub table: ValueTable,
    /// Revenue of every training episode.
    pub revenue: Vec<f64>,
    pub pricing: Option<PricingEngine>,
    pub last: EpisodeMetrics,
}

/// Shared inputs of training and evaluation runs.
pub struct RunInputs<'a> {
    pub model: &'a ModelConfig,
    pub grid: &'a ZoneGrid,
    pub source: &'a dyn TripSource,
    pub fleet: &'a FleetInit,
    pub seed: u64,
    pub pricing: PricingMode,
}

/// Runs `iterations` sample paths, updating the table from the duals of
/// every epoch. With learned pricing, beliefs are refit every
/// `resample_every` episodes and the price log holds the final episode.
pub fn train(inputs: &RunInputs<'_>, config: &TrainConfig, pricing: Option<PricingEngine>) -> Result<TrainResult> {
    if config.iterations == 0 {
        return Err(Error::Config("train.iterations must be at least 1".into()));
    }
    inputs.model.validate()?;
    let mut pricing = check_pricing(inputs.pricing, pricing)?;
    let mut table = ValueTable::new(inputs.grid, inputs.model.horizon_epochs, inputs.model.battery_levels, config.vfa.clone());
    let mut revenue = Vec::with_capacity(config.iterations);
    let mut last = EpisodeMetrics::default();
    let exploring = FleetInit::Exploring { cars: inputs.fleet.size() };
    let placement = if config.exploring_starts { &exploring } else { inputs.fleet };
    for n in 0..config.iterations as u64 {
        let mut demand_rng = stream(inputs.seed, PHASE_TRAIN, n, STREAM_DEMAND);
        let mut place_rng = stream(inputs.seed, PHASE_TRAIN, n, STREAM_PLACEMENT);
        let mut price_rng = stream(inputs.seed, PHASE_TRAIN, n, STREAM_PRICING);
        if let Some(engine) = pricing.as_mut() {
            engine.log.clear();
        }
        let day = inputs.source.day(n, &mut demand_rng, inputs.model, inputs.grid)?;
        let cars = placement.place(inputs.model, inputs.grid, &mut place_rng)?;
        let ep = Episode { model: inputs.model, grid: inputs.grid, policy: &config.policy, cars, day, episode: n };
        let mode = match config.policy.kind {
            PolicyKind::Vfa => TableMode::Learning(&mut table),
            PolicyKind::Myopic => TableMode::None,
        };
        let metrics = run_episode(ep, mode, pricing.as_mut().map(|e| (e, inputs.pricing)), &mut price_rng)?;
        if let (Some(engine), PricingMode::Learn) = (pricing.as_mut(), inputs.pricing) {
            if (n + 1) % engine.config().resample_every == 0 {
                engine.resample_all(n);
            }
        }
        if config.check_every > 0 && (n + 1) % config.check_every as u64 == 0 {
            if let Some(at) = table.level0_violation(1e-9) {
                return Err(Error::Contract(format!("monotonicity violated at {at:?} after iteration {}", n + 1)));
            }
        }
        revenue.push(metrics.revenue);
        last = metrics;
    }
    Ok(TrainResult { table, revenue, pricing, last })
}

fn check_pricing(mode: PricingMode, engine: Option<PricingEngine>) -> Result<Option<PricingEngine>> {
    match (mode, engine) {
        (PricingMode::Off, _) => Ok(None),
        (_, None) => Err(Error::invalid("pricing mode requires a pricing engine")),
        (_, Some(e)) => Ok(Some(e)),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryMetrics {
    pub episodes: usize,
    pub cars: usize,
    pub revenue: f64,
    pub revenue_per_car: f64,
    pub requested: f64,
    pub served: f64,
    pub coverage: f64,
    pub activity: ActivityShares,
}

impl SummaryMetrics {
    pub fn of(episodes: &[EpisodeMetrics]) -> Self {
        let n = episodes.len();
        if n == 0 {
            return Self::default();
        }
        let mean = |f: &dyn Fn(&EpisodeMetrics) -> f64| episodes.iter().map(f).sum::<f64>() / n as f64;
        Self {
            episodes: n,
            cars: episodes[0].cars,
            revenue: mean(&|e| e.revenue),
            revenue_per_car: mean(&|e| e.revenue_per_car),
            requested: mean(&|e| e.requested as f64),
            served: mean(&|e| e.served as f64),
            coverage: mean(&|e| e.coverage),
            activity: ActivityShares {
                idle: mean(&|e| e.activity.idle),
                on_trip: mean(&|e| e.activity.on_trip),
                repositioning: mean(&|e| e.activity.repositioning),
                recharging: mean(&|e| e.activity.recharging),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub episodes: Vec<EpisodeMetrics>,
    pub summary: SummaryMetrics,
    /// Price decisions of every episode, in episode order.
    pub prices: Vec<PriceRecord>,
}

/// Runs `episodes` independent days with a frozen table; episodes run in
/// parallel and each starts from its own copy of the pricing beliefs.
pub fn evaluate(
    inputs: &RunInputs<'_>,
    policy: &PolicyConfig,
    episodes: usize,
    table: Option<&ValueTable>,
    pricing: Option<&PricingEngine>,
) -> Result<Evaluation> {
    inputs.model.validate()?;
    let pricing = check_pricing(inputs.pricing, pricing.cloned())?;
    if policy.kind == PolicyKind::Vfa && table.is_none() {
        return Err(Error::invalid("VFA evaluation requires a value table"));
    }
    let results = (0..episodes as u64)
        .into_par_iter()
        .map(|n| {
            let mut demand_rng = stream(inputs.seed, PHASE_EVAL, n, STREAM_DEMAND);
            let mut place_rng = stream(inputs.seed, PHASE_EVAL, n, STREAM_PLACEMENT);
            let mut price_rng = stream(inputs.seed, PHASE_EVAL, n, STREAM_PRICING);
            let day = inputs.source.day(n, &mut demand_rng, inputs.model, inputs.grid)?;
            let cars = inputs.fleet.place(inputs.model, inputs.grid, &mut place_rng)?;
            let ep = Episode { model: inputs.model, grid: inputs.grid, policy, cars, day, episode: n };
            let mode = match (policy.kind, table) {
                (PolicyKind::Vfa, Some(t)) => TableMode::Frozen(t),
                _ => TableMode::None,
            };
            let mut engine = pricing.clone();
            if let Some(e) = engine.as_mut() {
                e.log.clear();
            }
            let metrics = run_episode(ep, mode, engine.as_mut().map(|e| (e, inputs.pricing)), &mut price_rng)?;
            Ok((metrics, engine.map(|e| e.log).unwrap_or_default()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (episodes, logs): (Vec<EpisodeMetrics>, Vec<Vec<PriceRecord>>) = results.into_iter().unzip();
    Ok(Evaluation { summary: SummaryMetrics::of(&episodes), episodes, prices: logs.concat() })
}

/// Counts cars choosing each decision kind; used by diagnostics.
pub fn decision_counts(problem: &AssignmentProblem, solution: &AssignmentSolution) -> BTreeMap<DecisionKind, u32> {
    let mut m = BTreeMap::new();
    for (a, &x) in problem.arcs.iter().zip(&solution.flows) {
        *m.entry(a.kind()).or_default() += x;
    }
    m
}
