//! Exact backends for checking the approximate machinery: backward
//! induction for one car, and brute-force enumeration of tiny assignments.

use std::fmt::Write as _;

use crate::adp::Day;
use crate::assignment::{from_micro, to_micro, AssignmentProblem};
use crate::error::{Error, Result};
use crate::fleet::{enumerate_decisions, CarAttribute, DecisionArc, Epoch, ModelConfig};
use crate::spatial::{ZoneGrid, ZoneId};

pub const MAX_GRID_SIDE: usize = 5;
pub const MAX_LEVELS: u16 = 5;
pub const MAX_HORIZON: Epoch = 12;
pub const MAX_CARS: u64 = 4;
pub const MAX_ARCS_PER_CLASS: usize = 6;

/// Optimal values and decisions of a single-car instance.
#[derive(Debug, Clone)]
pub struct DpSolution {
    horizon: Epoch,
    zones: usize,
    levels: usize,
    /// `(horizon + 1) * zones * levels`, terminal slice all zero.
    values: Vec<f64>,
    policy: Vec<Option<DecisionArc>>,
}

impl DpSolution {
    fn idx(&self, t: Epoch, a: CarAttribute) -> usize {
        (t as usize * self.zones + a.zone.0 as usize) * self.levels + a.battery as usize
    }

    pub fn horizon(&self) -> Epoch {
        self.horizon
    }

    /// `V*_t(a)`; zero at and beyond the horizon.
    pub fn value(&self, t: Epoch, a: CarAttribute) -> f64 {
        if t >= self.horizon {
            return 0.0;
        }
        self.values[self.idx(t, a)]
    }

    /// Optimal decision at `(t, a)`; `None` at or beyond the horizon and for
    /// invalid zones.
    pub fn decision(&self, t: Epoch, a: CarAttribute) -> Option<&DecisionArc> {
        if t >= self.horizon {
            return None;
        }
        self.policy[self.idx(t, a)].as_ref()
    }

    /// First violation of monotonicity in battery or time, if any.
    pub fn monotonicity_violation(&self, grid: &ZoneGrid, tol: f64) -> Option<(Epoch, CarAttribute)> {
        for t in 0..self.horizon {
            for &z in grid.valid_zones() {
                for l in 0..self.levels as u16 {
                    let a = CarAttribute::new(z, l);
                    let v = self.value(t, a);
                    if l > 0 && v + tol < self.value(t, CarAttribute::new(z, l - 1)) {
                        return Some((t, a));
                    }
                    if v + tol < self.value(t + 1, a) {
                        return Some((t, a));
                    }
                }
            }
        }
        None
    }

    /// Plain-text value table, one block per epoch.
    pub fn render(&self, grid: &ZoneGrid) -> String {
        let mut s = String::new();
        for t in 0..self.horizon {
            let _ = writeln!(s, "t={t}");
            for &z in grid.valid_zones() {
                let row: Vec<String> = (0..self.levels as u16)
                    .map(|l| {
                        let a = CarAttribute::new(z, l);
                        let kind = self.decision(t, a).map_or("-".to_string(), |d| format!("{:?}", d.kind()));
                        format!("{:.3}/{}", self.value(t, a), kind.to_lowercase())
                    })
                    .collect();
                let _ = writeln!(s, "  {z} {}", row.join(" "));
            }
        }
        s
    }
}

/// Backward induction over every `(t, zone, battery)` of a one-car instance
/// with known trips. Trips exist only in their request epoch.
pub fn exact_dp(model: &ModelConfig, grid: &ZoneGrid, day: &Day) -> Result<DpSolution> {
    model.validate()?;
    if grid.width() > MAX_GRID_SIDE
        || grid.height() > MAX_GRID_SIDE
        || model.battery_levels > MAX_LEVELS
        || model.horizon_epochs > MAX_HORIZON
    {
        return Err(Error::TooLarge(format!(
            "grid {}x{}, {} battery levels, horizon {}; limits are {MAX_GRID_SIDE}x{MAX_GRID_SIDE}, {MAX_LEVELS}, {MAX_HORIZON}",
            grid.width(),
            grid.height(),
            model.battery_levels,
            model.horizon_epochs
        )));
    }
    let horizon = model.horizon_epochs;
    let zones = grid.width() * grid.height();
    let levels = model.battery_levels as usize;
    let cells = (horizon as usize + 1) * zones * levels;
    let mut sol = DpSolution { horizon, zones, levels, values: vec![0.0; cells], policy: vec![None; cells] };
    let empty = Vec::new();
    for t in (0..horizon).rev() {
        let trips = day.get(t as usize).unwrap_or(&empty);
        for &zone in grid.valid_zones() {
            for l in 0..model.battery_levels {
                let a = CarAttribute::new(zone, l);
                let mut best: Option<(f64, DecisionArc)> = None;
                for arc in enumerate_decisions(a, t, trips, model, grid) {
                    let q = arc.contribution + sol.value(arc.result_available_at, arc.result);
                    let better = match &best {
                        None => true,
                        Some((b, barc)) => {
                            q > b + 1e-9 || ((q - b).abs() <= 1e-9 && arc.kind().tie_rank() < barc.kind().tie_rank())
                        }
                    };
                    if better {
                        best = Some((q, arc));
                    }
                }
                let (v, arc) = best.expect("stay is always feasible");
                let i = sol.idx(t, a);
                sol.values[i] = v;
                sol.policy[i] = Some(arc);
            }
        }
    }
    Ok(sol)
}

/// Reward collected by following the optimal policy from `a` at epoch 0.
pub fn rollout(sol: &DpSolution, start: CarAttribute) -> f64 {
    let mut t = 0;
    let mut a = start;
    let mut total = 0.0;
    while let Some(d) = sol.decision(t, a) {
        total += d.contribution;
        t = d.result_available_at;
        a = d.result;
    }
    total
}

/// Brute-force optimum of a tiny assignment problem with one-car
/// differences, all in micro-currency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exhaustive {
    pub objective_micro: i64,
    pub flows: Vec<u32>,
    /// `F(R) - F(R - e_a)`; `None` for an empty class.
    pub left: Vec<Option<i64>>,
    /// `F(R + e_a) - F(R)`; `None` when the extra car has no feasible arc.
    pub right: Vec<Option<i64>>,
}

impl Exhaustive {
    pub fn objective(&self) -> f64 {
        from_micro(self.objective_micro)
    }
}

fn best_flow(problem: &AssignmentProblem, counts: &[u32]) -> Option<(i64, Vec<u32>)> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); counts.len()];
    for (i, arc) in problem.arcs.iter().enumerate() {
        by_class[arc.car_class].push(i);
    }
    let rewards: Vec<i64> = problem.arcs.iter().map(|a| to_micro(a.reward)).collect();
    let mut flows = vec![0u32; problem.arcs.len()];
    let mut served = vec![0u32; problem.trip_classes.len()];
    let mut best = None;
    search(problem, &by_class, &rewards, counts, 0, 0, 0, &mut flows, &mut served, &mut best);
    best
}

#[allow(clippy::too_many_arguments)]
fn search(
    problem: &AssignmentProblem,
    by_class: &[Vec<usize>],
    rewards: &[i64],
    counts: &[u32],
    class: usize,
    slot: usize,
    value: i64,
    flows: &mut [u32],
    served: &mut [u32],
    best: &mut Option<(i64, Vec<u32>)>,
) {
    if class == counts.len() {
        if best.as_ref().is_none_or(|(b, _)| value > *b) {
            *best = Some((value, flows.to_vec()));
        }
        return;
    }
    let arcs = &by_class[class];
    let assigned: u32 = arcs[..slot.min(arcs.len())].iter().map(|&i| flows[i]).sum();
    let left = counts[class] - assigned;
    if slot == arcs.len() {
        if left == 0 {
            search(problem, by_class, rewards, counts, class + 1, 0, value, flows, served, best);
        }
        return;
    }
    let i = arcs[slot];
    let trip = problem.arcs[i].trip_class;
    let cap = match trip {
        Some(b) => left.min(problem.trip_classes[b].count - served[b]),
        None => left,
    };
    let last = slot + 1 == arcs.len();
    for x in 0..=cap {
        if last && x != left {
            continue;
        }
        flows[i] = x;
        if let Some(b) = trip {
            served[b] += x;
        }
        search(problem, by_class, rewards, counts, class, slot + 1, value + rewards[i] * x as i64, flows, served, best);
        if let Some(b) = trip {
            served[b] -= x;
        }
    }
    flows[i] = 0;
}

/// Enumerates every integer flow of a problem with at most four cars and six
/// arcs per class, then re-solves with each class count moved by one.
pub fn exhaustive_assign(problem: &AssignmentProblem) -> Result<Exhaustive> {
    if problem.total_cars() > MAX_CARS {
        return Err(Error::TooLarge(format!("{} cars; limit is {MAX_CARS}", problem.total_cars())));
    }
    for i in 0..problem.car_classes.len() {
        let n = problem.arcs.iter().filter(|a| a.car_class == i).count();
        if n > MAX_ARCS_PER_CLASS {
            return Err(Error::TooLarge(format!("car class {i} has {n} arcs; limit is {MAX_ARCS_PER_CLASS}")));
        }
    }
    let counts: Vec<u32> = problem.car_classes.iter().map(|c| c.count).collect();
    let (objective_micro, flows) =
        best_flow(problem, &counts).ok_or_else(|| Error::invalid("assignment problem has no feasible flow"))?;
    let mut left = Vec::with_capacity(counts.len());
    let mut right = Vec::with_capacity(counts.len());
    for i in 0..counts.len() {
        let mut c = counts.clone();
        c[i] += 1;
        right.push(best_flow(problem, &c).map(|(v, _)| v - objective_micro));
        left.push((counts[i] > 0).then(|| {
            c[i] -= 2;
            objective_micro - best_flow(problem, &c).expect("removing a car keeps feasibility").0
        }));
    }
    Ok(Exhaustive { objective_micro, flows, left, right })
}

/// Deterministic one-car instance for oracle comparisons.
pub fn single_car_day(grid: &ZoneGrid, model: &ModelConfig, trips: &[(Epoch, ZoneId, ZoneId)]) -> Result<Day> {
    let mut day: Day = vec![Vec::new(); model.horizon_epochs as usize];
    for &(t, o, d) in trips {
        let bucket = day
            .get_mut(t as usize)
            .ok_or_else(|| Error::invalid(format!("trip epoch {t} beyond horizon")))?;
        let id = bucket.len();
        bucket.push(crate::fleet::TripRequest::new(id, o, d, t, model.price_per_mile, grid)?);
    }
    Ok(day)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::{simple_problem, solve};
    use crate::fleet::DecisionKind::*;

    fn tiny() -> (ModelConfig, ZoneGrid) {
        let grid = ZoneGrid::full(3, 3, 1.0).unwrap();
        let model = ModelConfig {
            horizon_epochs: 6,
            battery_levels: 5,
            battery_range_miles: 5.0,
            pickup_range_miles: 1.5,
            ..ModelConfig::default()
        };
        (model, grid)
    }

    #[test]
    fn zero_horizon_and_size_guard() {
        let (model, grid) = tiny();
        let sol = exact_dp(&model, &grid, &vec![Vec::new(); 6]).unwrap();
        assert!(grid.valid_zones().iter().all(|&z| sol.value(6, CarAttribute::new(z, 4)) == 0.0));
        assert!(grid.valid_zones().iter().all(|&z| sol.value(0, CarAttribute::new(z, 4)) == 0.0));
        let big = ModelConfig { horizon_epochs: 13, ..model.clone() };
        assert!(matches!(exact_dp(&big, &grid, &Vec::new()), Err(Error::TooLarge(_))));
        let wide = ZoneGrid::full(6, 2, 1.0).unwrap();
        assert!(matches!(exact_dp(&model, &wide, &Vec::new()), Err(Error::TooLarge(_))));
    }

    #[test]
    fn one_trip_needs_full_battery() {
        let (mut model, grid) = tiny();
        model.battery_range_miles = 3.0;
        model.recharge_cost_per_mile = 0.001;
        let o = grid.zone_at(0, 0).unwrap();
        let d = grid.zone_at(2, 1).unwrap();
        // sqrt(5) mi at 0.6 mi per level needs all 4 levels
        assert_eq!(model.levels_for_miles(grid.distance(o, d)), 4);
        let day = single_car_day(&grid, &model, &[(2, o, d)]).unwrap();
        let sol = exact_dp(&model, &grid, &day).unwrap();
        assert!(sol.monotonicity_violation(&grid, 1e-9).is_none());
        let full = sol.value(2, CarAttribute::new(o, 4));
        assert!((full - (model.trip_base_fare + 5f64.sqrt())).abs() < 1e-9);
        for l in 0..4 {
            assert_eq!(sol.value(2, CarAttribute::new(o, l)), 0.0);
        }
        // one epoch of charging, then wait
        let charge = crate::fleet::contribution(&crate::fleet::Decision::Recharge { epochs: 1 }, &model);
        assert!((sol.value(0, CarAttribute::new(o, 3)) - (full + charge)).abs() < 1e-9);
        assert!(sol.value(0, CarAttribute::new(o, 4)) >= full);
        assert!((rollout(&sol, CarAttribute::new(o, 4)) - sol.value(0, CarAttribute::new(o, 4))).abs() < 1e-9);
        assert!(sol.render(&grid).starts_with("t=0\n"));
    }

    #[test]
    fn exhaustive_matches_hand_cases() {
        let empty = simple_problem(&[], &[], &[]).unwrap();
        assert_eq!(exhaustive_assign(&empty).unwrap().objective_micro, 0);

        let p = simple_problem(&[1], &[1], &[(0, None, 0.0, Stay), (0, Some(0), 27.2, Serve)]).unwrap();
        let e = exhaustive_assign(&p).unwrap();
        assert_eq!(e.objective_micro, to_micro(27.2));
        assert_eq!(e.left, vec![Some(to_micro(27.2))]);
        assert_eq!(e.right, vec![Some(0)]);
        assert_eq!(solve(&p).objective_micro, e.objective_micro);

        let too_many = simple_problem(&[5], &[], &[(0, None, 0.0, Stay)]).unwrap();
        assert!(matches!(exhaustive_assign(&too_many), Err(Error::TooLarge(_))));
    }
}
