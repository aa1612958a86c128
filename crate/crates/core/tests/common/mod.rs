//! Instance generators shared by the integration tests.
#![allow(dead_code)]

use evfleet::adp::Day;
use evfleet::assignment::{simple_problem, to_micro, from_micro, AssignmentProblem};
use evfleet::fleet::{CarAttribute, DecisionKind, ModelConfig};
use evfleet::oracle::single_car_day;
use evfleet::simio::data::{synth_trips, SynthProfile, TripDataset};
use evfleet::spatial::ZoneGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Up to 4 cars over up to 3 classes, each with a stay arc and at most 5
/// more arcs. Rewards sit on the micro grid so objectives compare exactly.
pub fn tiny_assignment(seed: u64) -> AssignmentProblem {
    let mut rng = rng(seed);
    let classes = rng.random_range(0..=3usize);
    let mut cars = Vec::new();
    let mut budget = 4u32;
    for _ in 0..classes {
        let c = rng.random_range(0..=budget.min(3));
        budget -= c;
        cars.push(c);
    }
    let trips: Vec<u32> = (0..rng.random_range(0..=3)).map(|_| rng.random_range(1..=2)).collect();
    let reward = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| from_micro(to_micro(rng.random_range(lo..hi)));
    let mut arcs = Vec::new();
    for c in 0..cars.len() {
        arcs.push((c, None, reward(&mut rng, -2.0, 2.0), DecisionKind::Stay));
        for _ in 0..rng.random_range(0..=5) {
            match rng.random_range(0..3) {
                0 if !trips.is_empty() => {
                    let b = rng.random_range(0..trips.len());
                    arcs.push((c, Some(b), reward(&mut rng, -5.0, 30.0), DecisionKind::Serve));
                }
                1 => arcs.push((c, None, reward(&mut rng, -10.0, 5.0), DecisionKind::Recharge)),
                _ => arcs.push((c, None, reward(&mut rng, -5.0, 5.0), DecisionKind::Reposition)),
            }
        }
    }
    simple_problem(&cars, &trips, &arcs).expect("generated problem is valid")
}

pub struct SingleCar {
    pub grid: ZoneGrid,
    pub model: ModelConfig,
    pub day: Day,
    pub start: CarAttribute,
}

/// Single car on a grid of at most 5x5 one-mile zones, at most 5 battery
/// levels and 12 epochs, with 0-2 deterministic trips per epoch. Starts at
/// full battery.
pub fn single_car(seed: u64) -> SingleCar {
    let mut rng = rng(seed);
    let grid = ZoneGrid::full(rng.random_range(2..=5), rng.random_range(2..=5), 1.0).unwrap();
    let model = ModelConfig {
        horizon_epochs: rng.random_range(4..=12),
        battery_levels: rng.random_range(2..=5),
        battery_range_miles: rng.random_range(3.0..10.0),
        pickup_range_miles: 1.5,
        speed_mph: 12.0,
        ..ModelConfig::default()
    };
    let zones = grid.valid_zones().to_vec();
    let mut trips = Vec::new();
    for t in 0..model.horizon_epochs {
        for _ in 0..rng.random_range(0..3) {
            let o = zones[rng.random_range(0..zones.len())];
            let d = zones[rng.random_range(0..zones.len())];
            if o != d {
                trips.push((t, o, d));
            }
        }
    }
    let day = single_car_day(&grid, &model, &trips).unwrap();
    let start = CarAttribute::new(zones[rng.random_range(0..zones.len())], model.max_battery());
    SingleCar { grid, model, day, start }
}

/// The desk-scale instance: 20x20 one-mile zones and 2000 synthetic trips
/// with three peaks.
pub fn desk() -> (ZoneGrid, ModelConfig, TripDataset) {
    let grid = ZoneGrid::full(20, 20, 1.0).unwrap();
    let model = ModelConfig {
        battery_range_miles: 60.0,
        recharge_rate_mph: 60.0,
        pickup_range_miles: 5.0,
        ..ModelConfig::default()
    };
    let data = synth_trips(&grid, &SynthProfile::default(), 2000, 7).unwrap();
    (grid, model, data)
}
