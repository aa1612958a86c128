use evfleet::pricing::{Covariates, Observation, PriceSimConfig, PricingConfig, PricingEngine, price_sim};
use evfleet::spatial::ZoneId;
use proptest::prelude::*;

fn cov() -> impl Strategy<Value = Covariates> {
    (0.0..1.0f64, 0.5..2.0f64, 0u32..10, 1u32..10)
        .prop_map(|(time, price, v, r)| Covariates { time, price, vehicles: v as f64, requests: r as f64 })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posterior_stays_a_distribution(
        seed in any::<u64>(),
        obs in prop::collection::vec((cov(), any::<bool>(), prop::option::of(any::<bool>())), 0..300),
    ) {
        let mut engine = PricingEngine::new(PricingConfig::default(), seed).unwrap();
        let zone = ZoneId(3);
        for (c, rider, op) in obs {
            let b = engine.belief(zone);
            b.update(Observation { covariates: c, rider_accept: rider, operator_accept: op.filter(|_| rider) });
            let q = b.posterior();
            prop_assert!(q.iter().all(|x| x.is_finite() && *x >= 0.0));
            prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        engine.resample_all(0);
        let q = engine.belief(zone).posterior();
        prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert_eq!(q.len(), 25);
    }

    #[test]
    fn recommendations_lie_on_the_grid(seed in any::<u64>(), c in cov()) {
        let mut engine = PricingEngine::new(PricingConfig::default(), seed).unwrap();
        let p = engine.recommend(ZoneId(0), &c);
        prop_assert!(engine.grid().prices().contains(&p));
        let o = engine.oracle_price(ZoneId(0), &c);
        prop_assert!(engine.grid().prices().contains(&o));
    }
}

#[test]
fn price_sim_is_seeded() {
    let sim = PriceSimConfig { zones: 2, observations_per_zone: 300, episode_length: 100, evaluation_offers: 100, ..PriceSimConfig::default() };
    let cfg = PricingConfig::default();
    let (a, ea) = price_sim(&cfg, &sim, 4).unwrap();
    let (b, eb) = price_sim(&cfg, &sim, 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(ea.log, eb.log);
    assert!(a.posterior_valid);
    let (c, _) = price_sim(&cfg, &sim, 5).unwrap();
    assert_ne!(a, c);
}
