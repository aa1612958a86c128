use evfleet::adp::{evaluate, train, EmpiricalResampler, FleetInit, PolicyConfig, PricingMode, RunInputs, TrainConfig};
use evfleet::fleet::ModelConfig;
use evfleet::pricing::{PricingConfig, PricingEngine};
use evfleet::simio::data::{load_trips, synth_trips, SynthProfile};
use evfleet::spatial::{SyntheticMask, ZoneGrid};
use proptest::prelude::*;

fn small_model() -> ModelConfig {
    ModelConfig {
        horizon_epochs: 34,
        lead_epochs: 2,
        epoch_minutes: 45.0,
        battery_range_miles: 24.0,
        battery_levels: 8,
        recharge_rate_mph: 40.0,
        pickup_range_miles: 2.0,
        ..ModelConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn episode_accounting(seed in any::<u64>(), cars in 0usize..12, trips in 1usize..200, myopic in any::<bool>(), priced in any::<bool>()) {
        let grid = ZoneGrid::new(6, 5, 1.0, SyntheticMask::Holes { density: 0.15, seed }.generate(6, 5)).unwrap();
        let model = small_model();
        let data = synth_trips(&grid, &SynthProfile::default(), trips, seed).unwrap();
        let source = EmpiricalResampler::new(data);
        let fleet = FleetInit::Random { cars };
        let pricing = if priced { PricingMode::Learn } else { PricingMode::Off };
        let inputs = RunInputs { model: &model, grid: &grid, source: &source, fleet: &fleet, seed, pricing };
        let engine = PricingEngine::new(PricingConfig::default(), seed).unwrap();
        let trained = train(&inputs, &TrainConfig { iterations: 3, ..TrainConfig::default() }, priced.then(|| engine.clone())).unwrap();
        let policy = if myopic { PolicyConfig::myopic(Some(0.2)) } else { PolicyConfig::vfa() };
        let e = evaluate(&inputs, &policy, 2, Some(&trained.table), trained.pricing.as_ref()).unwrap();
        for ep in &e.episodes {
            prop_assert_eq!(ep.epochs.len(), model.horizon_epochs as usize);
            let mut served = 0;
            let mut requested = 0;
            let mut revenue = 0.0;
            for m in &ep.epochs {
                prop_assert!(m.served <= m.accepted && m.accepted <= m.requested);
                prop_assert_eq!(m.lost, m.requested - m.served);
                prop_assert_eq!(m.idle + m.on_trip + m.repositioning + m.recharging, cars);
                prop_assert!(m.battery_miles >= 0.0 && m.battery_miles <= cars as f64 * model.battery_range_miles + 1e-9);
                if let Some(p) = m.mean_price {
                    prop_assert!((0.5..=2.0).contains(&p));
                }
                served += m.served;
                requested += m.requested;
                revenue += m.revenue;
            }
            prop_assert_eq!(ep.served, served);
            prop_assert_eq!(ep.requested, requested);
            prop_assert!((ep.revenue - revenue).abs() < 1e-6);
            let a = ep.activity;
            if cars > 0 {
                prop_assert!((a.idle + a.on_trip + a.repositioning + a.recharging - 100.0).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn evaluation_is_reproducible_and_seeded() {
    let grid = ZoneGrid::full(5, 5, 1.0).unwrap();
    let model = small_model();
    let data = synth_trips(&grid, &SynthProfile::default(), 150, 2).unwrap();
    let source = EmpiricalResampler::new(data);
    let fleet = FleetInit::Random { cars: 5 };
    let run = |seed| {
        let inputs = RunInputs { model: &model, grid: &grid, source: &source, fleet: &fleet, seed, pricing: PricingMode::Off };
        let t = train(&inputs, &TrainConfig { iterations: 10, ..TrainConfig::default() }, None).unwrap();
        (t.revenue.clone(), t.table.to_bytes(), evaluate(&inputs, &PolicyConfig::vfa(), 3, Some(&t.table), None).unwrap())
    };
    let (a, b) = (run(1), run(1));
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
    assert_ne!(run(2).0, a.0);
}

#[test]
fn trip_file_round_trip_keeps_epoch_counts() {
    let grid = ZoneGrid::new(7, 4, 0.5, SyntheticMask::Island { seed: 3 }.generate(7, 4)).unwrap();
    let data = synth_trips(&grid, &SynthProfile::default(), 500, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trips.csv");
    data.write_csv(std::fs::File::create(&path).unwrap(), &grid).unwrap();
    let back = load_trips(&path, &grid).unwrap();
    assert_eq!(back.histogram(15.0), data.histogram(15.0));
    assert_eq!(back.len(), data.len());
}
