mod common;

use evfleet::adp::{evaluate, FleetInit, PolicyConfig, PricingMode, RepeatDay, RunInputs};
use evfleet::fleet::CarAttribute;
use evfleet::oracle::{exact_dp, rollout};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn exact_values_are_monotone(seed in any::<u64>()) {
        let inst = common::single_car(seed);
        let sol = exact_dp(&inst.model, &inst.grid, &inst.day).unwrap();
        prop_assert_eq!(sol.monotonicity_violation(&inst.grid, 1e-9), None);
    }

    #[test]
    fn rollout_attains_the_value(seed in any::<u64>()) {
        let inst = common::single_car(seed);
        let sol = exact_dp(&inst.model, &inst.grid, &inst.day).unwrap();
        for &z in inst.grid.valid_zones() {
            for l in 0..inst.model.battery_levels {
                let a = CarAttribute::new(z, l);
                prop_assert!((rollout(&sol, a) - sol.value(0, a)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn simulated_policies_never_beat_the_optimum(seed in any::<u64>(), threshold in prop::option::of(0.0..0.6f64)) {
        let inst = common::single_car(seed);
        let sol = exact_dp(&inst.model, &inst.grid, &inst.day).unwrap();
        let source = RepeatDay::new(inst.day.clone());
        let fleet = FleetInit::Fixed { cars: vec![inst.start] };
        let inputs = RunInputs {
            model: &inst.model,
            grid: &inst.grid,
            source: &source,
            fleet: &fleet,
            seed,
            pricing: PricingMode::Off,
        };
        let e = evaluate(&inputs, &PolicyConfig::myopic(threshold), 1, None, None).unwrap();
        prop_assert!(e.summary.revenue <= sol.value(0, inst.start) + 1e-9);
    }
}

#[test]
fn rejects_oversized_instances() {
    let mut inst = common::single_car(1);
    inst.model.horizon_epochs = 13;
    let day = vec![Vec::new(); 13];
    assert!(exact_dp(&inst.model, &inst.grid, &day).is_err());
}
