//! Car and trip attributes, the elementary decisions, the deterministic
//! attribute transition and the per-decision contribution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{epochs_covering, travel_hours, ZoneGrid, ZoneId, ROUNDING_SLACK};

/// Discrete battery level in `[0, battery_levels)`.
pub type BatteryLevel = u16;

/// Epoch index inside the horizon.
pub type Epoch = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CarAttribute {
    pub zone: ZoneId,
    pub battery: BatteryLevel,
}

impl CarAttribute {
    pub fn new(zone: ZoneId, battery: BatteryLevel) -> Self {
        Self { zone, battery }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CarStatus {
    Idle,
    OnTrip,
    Repositioning,
    Recharging,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarState {
    pub id: usize,
    pub attribute: CarAttribute,
    /// First epoch at which the car can receive a new decision.
    pub available_at: Epoch,
    pub status: CarStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRequest {
    pub id: usize,
    pub origin: ZoneId,
    pub destination: ZoneId,
    pub request_epoch: Epoch,
    pub distance: f64,
    pub price_per_mile: f64,
}

impl TripRequest {
    pub fn new(
        id: usize,
        origin: ZoneId,
        destination: ZoneId,
        request_epoch: Epoch,
        price_per_mile: f64,
        grid: &ZoneGrid,
    ) -> Result<Self> {
        if origin == destination {
            return Err(Error::invalid(format!("trip {id} has identical origin and destination {origin}")));
        }
        let distance = grid.zone_distance(origin, destination)?;
        Ok(Self { id, origin, destination, request_epoch, distance, price_per_mile })
    }
}

/// Physical and economic parameters of the fleet model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub epoch_minutes: f64,
    pub horizon_epochs: Epoch,
    /// Epochs added before the day starts, used to position the fleet.
    pub lead_epochs: Epoch,
    pub trip_base_fare: f64,
    pub price_per_mile: f64,
    pub recharge_base_fee: f64,
    pub recharge_cost_per_mile: f64,
    /// Recharge rate in miles of range per hour.
    pub recharge_rate_mph: f64,
    pub battery_range_miles: f64,
    pub battery_levels: BatteryLevel,
    pub pickup_range_miles: f64,
    pub speed_mph: f64,
    pub miles_per_kwh: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            epoch_minutes: 15.0,
            horizon_epochs: 110,
            lead_epochs: 3,
            trip_base_fare: 2.4,
            price_per_mile: 1.0,
            recharge_base_fee: 1.0,
            recharge_cost_per_mile: 0.1,
            recharge_rate_mph: 300.0,
            battery_range_miles: 200.0,
            battery_levels: 20,
            pickup_range_miles: 5.0,
            speed_mph: 30.0,
            miles_per_kwh: 3.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epoch_minutes", self.epoch_minutes),
            ("trip_base_fare", self.trip_base_fare),
            ("price_per_mile", self.price_per_mile),
            ("recharge_base_fee", self.recharge_base_fee),
            ("recharge_cost_per_mile", self.recharge_cost_per_mile),
            ("recharge_rate_mph", self.recharge_rate_mph),
            ("battery_range_miles", self.battery_range_miles),
            ("pickup_range_miles", self.pickup_range_miles),
            ("speed_mph", self.speed_mph),
            ("miles_per_kwh", self.miles_per_kwh),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.horizon_epochs == 0 {
            return Err(Error::Config("horizon_epochs must be positive".into()));
        }
        if self.battery_levels < 2 {
            return Err(Error::Config("battery_levels must be at least 2".into()));
        }
        Ok(())
    }

    pub fn max_battery(&self) -> BatteryLevel {
        self.battery_levels - 1
    }

    pub fn miles_per_level(&self) -> f64 {
        self.battery_range_miles / self.battery_levels as f64
    }

    pub fn epoch_hours(&self) -> f64 {
        self.epoch_minutes / 60.0
    }

    /// Levels consumed by driving `miles`, rounded up.
    pub fn levels_for_miles(&self, miles: f64) -> u32 {
        let levels = miles / self.miles_per_level();
        if levels <= ROUNDING_SLACK {
            0
        } else {
            (levels - ROUNDING_SLACK).ceil() as u32
        }
    }

    /// Levels gained by recharging for `epochs`, rounded down.
    pub fn recharge_gain_levels(&self, epochs: u32) -> u32 {
        let miles = self.recharge_rate_mph * self.epoch_hours() * epochs as f64;
        (miles / self.miles_per_level() + ROUNDING_SLACK).floor() as u32
    }

    /// Whole epochs needed to bring `battery` to full charge.
    pub fn epochs_to_full(&self, battery: BatteryLevel) -> u32 {
        let missing = self.max_battery().saturating_sub(battery) as f64 * self.miles_per_level();
        epochs_covering(missing / self.recharge_rate_mph, self.epoch_minutes)
    }

    /// Epochs needed to drive `miles`, rounded up.
    pub fn drive_epochs(&self, miles: f64) -> u32 {
        // speed validated positive
        epochs_covering(travel_hours(miles.max(0.0), self.speed_mph).unwrap_or(0.0), self.epoch_minutes)
    }

    pub fn battery_miles(&self, battery: BatteryLevel) -> f64 {
        battery as f64 * self.miles_per_level()
    }
}

/// An elementary decision for one car.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decision {
    Serve {
        /// Index of the trip in the list the decision was enumerated from.
        trip: usize,
        origin: ZoneId,
        destination: ZoneId,
        deadhead_miles: f64,
        trip_miles: f64,
        price_per_mile: f64,
    },
    Reposition {
        to: ZoneId,
    },
    Recharge {
        epochs: u32,
    },
    Stay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionKind {
    Serve,
    Stay,
    Recharge,
    Reposition,
}

impl DecisionKind {
    /// Preference among equal-reward decisions: lower ranks win.
    pub fn tie_rank(self) -> i64 {
        match self {
            DecisionKind::Serve => 0,
            DecisionKind::Stay => 1,
            DecisionKind::Recharge => 2,
            DecisionKind::Reposition => 3,
        }
    }

    pub fn status(self) -> CarStatus {
        match self {
            DecisionKind::Serve => CarStatus::OnTrip,
            DecisionKind::Stay => CarStatus::Idle,
            DecisionKind::Recharge => CarStatus::Recharging,
            DecisionKind::Reposition => CarStatus::Repositioning,
        }
    }
}

impl Decision {
    pub fn kind(&self) -> DecisionKind {
        match self {
            Decision::Serve { .. } => DecisionKind::Serve,
            Decision::Reposition { .. } => DecisionKind::Reposition,
            Decision::Recharge { .. } => DecisionKind::Recharge,
            Decision::Stay => DecisionKind::Stay,
        }
    }
}

/// A decision applied to a car attribute class, with its contribution and
/// the post-decision attribute and availability epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionArc {
    pub car: CarAttribute,
    pub decision: Decision,
    pub contribution: f64,
    pub result: CarAttribute,
    pub result_available_at: Epoch,
}

impl DecisionArc {
    pub fn kind(&self) -> DecisionKind {
        self.decision.kind()
    }
}

/// Immediate contribution of a decision.
pub fn contribution(decision: &Decision, config: &ModelConfig) -> f64 {
    match decision {
        Decision::Serve { trip_miles, price_per_mile, .. } => config.trip_base_fare + price_per_mile * trip_miles,
        Decision::Recharge { epochs } => {
            let hours = *epochs as f64 * config.epoch_hours();
            -(config.recharge_base_fee + config.recharge_cost_per_mile * config.recharge_rate_mph * hours)
        }
        Decision::Reposition { .. } | Decision::Stay => 0.0,
    }
}

/// Deterministic post-decision attribute and availability epoch.
pub fn transition(
    car: CarAttribute,
    decision: &Decision,
    t: Epoch,
    config: &ModelConfig,
    grid: &ZoneGrid,
) -> Result<(CarAttribute, Epoch)> {
    let battery = car.battery as u32;
    if car.battery > config.max_battery() || !grid.is_valid(car.zone) {
        return Err(Error::Contract(format!("invalid car attribute {car:?}")));
    }
    match *decision {
        Decision::Stay => Ok((car, t + 1)),
        Decision::Reposition { to } => {
            if !grid.is_valid(to) || !grid.neighbors(car.zone).any(|n| n == to) {
                return Err(Error::Contract(format!("{to} is not a neighbour of {}", car.zone)));
            }
            let used = config.levels_for_miles(grid.distance(car.zone, to));
            if used > battery {
                return Err(Error::Contract(format!("battery {battery} cannot cover reposition ({used} levels)")));
            }
            Ok((CarAttribute::new(to, (battery - used) as BatteryLevel), t + 1))
        }
        Decision::Recharge { epochs } => {
            if epochs == 0 || car.battery >= config.max_battery() {
                return Err(Error::Contract(format!("recharge of {epochs} epochs infeasible at battery {battery}")));
            }
            if epochs > config.epochs_to_full(car.battery) {
                return Err(Error::Contract(format!("recharge of {epochs} epochs exceeds time to full")));
            }
            let gained = config.recharge_gain_levels(epochs);
            let level = (battery + gained).min(config.max_battery() as u32);
            Ok((CarAttribute::new(car.zone, level as BatteryLevel), t + epochs))
        }
        Decision::Serve { origin, destination, deadhead_miles, trip_miles, .. } => {
            if !grid.is_valid(origin) || !grid.is_valid(destination) {
                return Err(Error::Contract("trip endpoints must be valid zones".into()));
            }
            let used = config.levels_for_miles(deadhead_miles + trip_miles);
            if used > battery {
                return Err(Error::Contract(format!(
                    "battery {battery} cannot cover {:.2} miles ({used} levels)",
                    deadhead_miles + trip_miles
                )));
            }
            let epochs = config.drive_epochs(deadhead_miles + trip_miles).max(1);
            Ok((CarAttribute::new(destination, (battery - used) as BatteryLevel), t + epochs))
        }
    }
}

fn make_arc(car: CarAttribute, decision: Decision, t: Epoch, config: &ModelConfig, grid: &ZoneGrid) -> DecisionArc {
    let (result, result_available_at) =
        transition(car, &decision, t, config, grid).expect("enumerated decisions are feasible");
    DecisionArc { car, contribution: contribution(&decision, config), decision, result, result_available_at }
}

/// All feasible decisions for a car at epoch `t`. Serve decisions carry the
/// index of the trip in `trips`.
pub fn enumerate_decisions(
    car: CarAttribute,
    t: Epoch,
    trips: &[TripRequest],
    config: &ModelConfig,
    grid: &ZoneGrid,
) -> Vec<DecisionArc> {
    let battery = car.battery as u32;
    let mut arcs = Vec::new();
    for (i, trip) in trips.iter().enumerate() {
        let deadhead = grid.distance(car.zone, trip.origin);
        if deadhead > config.pickup_range_miles + ROUNDING_SLACK {
            continue;
        }
        if config.levels_for_miles(deadhead + trip.distance) > battery {
            continue;
        }
        let decision = Decision::Serve {
            trip: i,
            origin: trip.origin,
            destination: trip.destination,
            deadhead_miles: deadhead,
            trip_miles: trip.distance,
            price_per_mile: trip.price_per_mile,
        };
        arcs.push(make_arc(car, decision, t, config, grid));
    }
    for to in grid.neighbors(car.zone) {
        if config.levels_for_miles(grid.distance(car.zone, to)) <= battery {
            arcs.push(make_arc(car, Decision::Reposition { to }, t, config, grid));
        }
    }
    if car.battery < config.max_battery() {
        for epochs in 1..=config.epochs_to_full(car.battery) {
            arcs.push(make_arc(car, Decision::Recharge { epochs }, t, config, grid));
        }
    }
    arcs.push(make_arc(car, Decision::Stay, t, config, grid));
    arcs
}

/// An externally supplied change to one car (the random car-attribute
/// information between two epochs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarUpdate {
    pub car: usize,
    pub attribute: Option<CarAttribute>,
    pub delay_epochs: u32,
}

/// Cars plus the demand pending at the current epoch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FleetState {
    pub epoch: Epoch,
    pub cars: Vec<CarState>,
    pub trips: Vec<TripRequest>,
}

impl FleetState {
    pub fn new(attributes: &[CarAttribute]) -> Self {
        let cars = attributes
            .iter()
            .enumerate()
            .map(|(id, &attribute)| CarState { id, attribute, available_at: 0, status: CarStatus::Idle })
            .collect();
        Self { epoch: 0, cars, trips: Vec::new() }
    }

    /// Moves the state to epoch `t`: unserved trips are lost and replaced
    /// by `new_trips`, cars that have arrived become idle, then attribute
    /// changes are applied.
    pub fn apply_exogenous(&mut self, new_trips: Vec<TripRequest>, car_updates: &[CarUpdate], t: Epoch) {
        self.epoch = t;
        self.trips = new_trips;
        for car in &mut self.cars {
            if car.available_at <= t {
                car.available_at = t;
                car.status = CarStatus::Idle;
            }
        }
        for update in car_updates {
            if let Some(car) = self.cars.get_mut(update.car) {
                if let Some(attribute) = update.attribute {
                    car.attribute = attribute;
                }
                car.available_at = car.available_at.max(t) + update.delay_epochs;
            }
        }
    }

    /// Cars that can receive a decision at the current epoch.
    pub fn assignable(&self) -> impl Iterator<Item = &CarState> {
        let t = self.epoch;
        self.cars.iter().filter(move |c| c.available_at <= t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> ZoneGrid {
        ZoneGrid::full(60, 60, 0.5).unwrap()
    }

    fn cfg() -> ModelConfig {
        ModelConfig::default()
    }

    fn trip(id: usize, g: &ZoneGrid, o: (usize, usize), d: (usize, usize)) -> TripRequest {
        TripRequest::new(id, g.zone_at(o.0, o.1).unwrap(), g.zone_at(d.0, d.1).unwrap(), 5, 1.0, g).unwrap()
    }

    fn kinds(arcs: &[DecisionArc]) -> Vec<DecisionKind> {
        arcs.iter().map(DecisionArc::kind).collect()
    }

    #[test]
    fn empty_battery_only_stays_or_recharges() {
        let g = grid();
        let car = CarAttribute::new(g.zone_at(10, 10).unwrap(), 0);
        let trips = vec![trip(0, &g, (10, 10), (12, 10))];
        let arcs = enumerate_decisions(car, 0, &trips, &cfg(), &g);
        assert!(arcs.iter().all(|a| matches!(a.kind(), DecisionKind::Stay | DecisionKind::Recharge)));
        // 190 missing miles at 75 miles per epoch
        assert_eq!(arcs.iter().filter(|a| a.kind() == DecisionKind::Recharge).count(), 3);
        assert_eq!(arcs.iter().filter(|a| a.kind() == DecisionKind::Stay).count(), 1);
    }

    #[test]
    fn full_battery_interior_zone() {
        let g = grid();
        let car = CarAttribute::new(g.zone_at(10, 10).unwrap(), 19);
        let arcs = enumerate_decisions(car, 0, &[], &cfg(), &g);
        let k = kinds(&arcs);
        assert_eq!(k.iter().filter(|&&k| k == DecisionKind::Stay).count(), 1);
        assert_eq!(k.iter().filter(|&&k| k == DecisionKind::Reposition).count(), 8);
        assert_eq!(k.iter().filter(|&&k| k == DecisionKind::Recharge).count(), 0);
    }

    #[test]
    fn pickup_range_filters_trips() {
        let g = grid();
        let car = CarAttribute::new(g.zone_at(0, 0).unwrap(), 19);
        // origin 20 cells = 10 miles away
        let far = trip(0, &g, (20, 0), (22, 0));
        let near = trip(1, &g, (2, 0), (4, 0));
        let arcs = enumerate_decisions(car, 0, &[far, near], &cfg(), &g);
        let served: Vec<usize> = arcs
            .iter()
            .filter_map(|a| match a.decision {
                Decision::Serve { trip, .. } => Some(trip),
                _ => None,
            })
            .collect();
        assert_eq!(served, vec![1]);
    }

    #[test]
    fn stay_transition() {
        let g = grid();
        let car = CarAttribute::new(g.zone_at(3, 3).unwrap(), 7);
        assert_eq!(transition(car, &Decision::Stay, 4, &cfg(), &g).unwrap(), (car, 5));
    }

    #[test]
    fn recharge_one_epoch_adds_seven_levels() {
        let g = grid();
        let c = cfg();
        let car = CarAttribute::new(g.zone_at(3, 3).unwrap(), 5);
        let (next, at) = transition(car, &Decision::Recharge { epochs: 1 }, 4, &c, &g).unwrap();
        assert_eq!((next.battery, at), (12, 5));
        let high = CarAttribute::new(car.zone, 16);
        let (capped, _) = transition(high, &Decision::Recharge { epochs: 1 }, 4, &c, &g).unwrap();
        assert_eq!(capped.battery, 19);
        assert!((contribution(&Decision::Recharge { epochs: 1 }, &c) + 8.5).abs() < 1e-12);
    }

    #[test]
    fn serve_long_trip() {
        let g = grid();
        let c = cfg();
        let o = g.zone_at(0, 0).unwrap();
        let d = g.zone_at(1, 1).unwrap();
        let decision = Decision::Serve {
            trip: 0,
            origin: o,
            destination: d,
            deadhead_miles: 0.0,
            trip_miles: 24.8,
            price_per_mile: 1.0,
        };
        let (next, at) = transition(CarAttribute::new(o, 10), &decision, 2, &c, &g).unwrap();
        assert_eq!(next, CarAttribute::new(d, 7));
        assert_eq!(at, 6);
        assert!((contribution(&decision, &c) - 27.2).abs() < 1e-12);
        assert_eq!(contribution(&Decision::Reposition { to: d }, &c), 0.0);
        assert!(transition(CarAttribute::new(o, 2), &decision, 2, &c, &g).is_err());
    }

    #[test]
    fn infeasible_arcs_rejected() {
        let g = grid();
        let c = cfg();
        let car = CarAttribute::new(g.zone_at(3, 3).unwrap(), 19);
        assert!(transition(car, &Decision::Recharge { epochs: 1 }, 0, &c, &g).is_err());
        let far = g.zone_at(9, 9).unwrap();
        assert!(transition(car, &Decision::Reposition { to: far }, 0, &c, &g).is_err());
    }

    #[test]
    fn exogenous_information() {
        let g = grid();
        let z = g.zone_at(1, 1).unwrap();
        let mut state = FleetState::new(&[CarAttribute::new(z, 5), CarAttribute::new(z, 6), CarAttribute::new(z, 7)]);
        state.cars[0].available_at = 3;
        state.cars[0].status = CarStatus::OnTrip;
        state.cars[1].available_at = 3;
        state.cars[1].status = CarStatus::OnTrip;
        state.cars[2].available_at = 9;
        state.cars[2].status = CarStatus::Recharging;
        state.trips = vec![trip(0, &g, (1, 1), (2, 2))];
        state.apply_exogenous(Vec::new(), &[], 3);
        assert!(state.trips.is_empty());
        let ids: Vec<usize> = state.assignable().map(|c| c.id).collect();
        assert_eq!(ids, vec![0, 1]);
        state.apply_exogenous(Vec::new(), &[CarUpdate { car: 0, attribute: None, delay_epochs: 2 }], 4);
        assert_eq!(state.assignable().map(|c| c.id).collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn feasible_set_grows_with_battery() {
        let g = ZoneGrid::full(8, 8, 0.5).unwrap();
        let c = ModelConfig { battery_range_miles: 8.0, battery_levels: 8, pickup_range_miles: 1.5, ..cfg() };
        let trips: Vec<TripRequest> = (0..6).map(|i| trip(i, &g, (i, 2), (7 - i, 6))).collect();
        let z = g.zone_at(2, 3).unwrap();
        for l in 0..7 {
            let low = enumerate_decisions(CarAttribute::new(z, l), 0, &trips, &c, &g);
            let high = enumerate_decisions(CarAttribute::new(z, l + 1), 0, &trips, &c, &g);
            for arc in low.iter().filter(|a| !matches!(a.decision, Decision::Recharge { .. })) {
                assert!(high.iter().any(|h| h.decision == arc.decision), "{arc:?} lost at higher battery");
            }
        }
    }
}
