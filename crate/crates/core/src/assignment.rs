//! Per-epoch car-to-decision assignment as a min-cost flow, with dual
//! prices for the car-conservation constraints.
//!
//! Cars and trips are grouped into attribute classes. The network is
//! `source -> car class -> {trip class -> sink, sink}`; every car must be
//! routed, stay is always available, so the problem is always feasible.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fleet::{
    enumerate_decisions, BatteryLevel, CarAttribute, Decision, DecisionArc, DecisionKind, Epoch, FleetState,
    ModelConfig, TripRequest,
};
use crate::spatial::{ZoneGrid, ZoneId};

const MICRO: f64 = 1e6;
const INF: i64 = i64::MAX / 4;

/// Converts currency to integer micro-currency.
pub fn to_micro(x: f64) -> i64 {
    (x * MICRO).round() as i64
}

pub fn from_micro(x: i64) -> f64 {
    x as f64 / MICRO
}

/// Source of downstream values `v(t, a)` used to augment arc rewards.
pub trait ValueLookup {
    fn value(&self, t: Epoch, a: CarAttribute) -> f64;
}

impl<F: Fn(Epoch, CarAttribute) -> f64> ValueLookup for F {
    fn value(&self, t: Epoch, a: CarAttribute) -> f64 {
        self(t, a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Myopic,
    Vfa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarClass {
    pub attribute: CarAttribute,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripClass {
    pub origin: ZoneId,
    pub destination: ZoneId,
    pub price_per_mile: f64,
    pub count: u32,
    /// Indices of the member trips in the epoch's trip list.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemArc {
    pub car_class: usize,
    /// Trip class served, for serve arcs.
    pub trip_class: Option<usize>,
    pub arc: DecisionArc,
    /// Contribution plus downstream value under the VFA objective.
    pub reward: f64,
}

impl ProblemArc {
    pub fn kind(&self) -> DecisionKind {
        self.arc.kind()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentProblem {
    pub epoch: Epoch,
    pub objective_kind: ObjectiveKind,
    pub car_classes: Vec<CarClass>,
    pub trip_classes: Vec<TripClass>,
    pub arcs: Vec<ProblemArc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentSolution {
    /// Flow on each arc of the problem, in arc order.
    pub flows: Vec<u32>,
    pub objective: f64,
    pub objective_micro: i64,
    /// Value lost by removing one car of each class.
    pub car_duals: Vec<f64>,
    /// Value gained by adding one trip of each class.
    pub trip_duals: Vec<f64>,
}

/// Groups the assignable cars and the pending trips into classes and
/// enumerates the arcs with their rewards.
///
/// With a `threshold` (fraction of battery capacity), cars strictly below
/// it only receive recharge arcs. Under [`ObjectiveKind::Vfa`] a value
/// lookup is required and each reward adds `v(t', a')` at the arc's arrival
/// epoch and resulting attribute.
pub fn build_problem(
    state: &FleetState,
    kind: ObjectiveKind,
    values: Option<&dyn ValueLookup>,
    threshold: Option<f64>,
    config: &ModelConfig,
    grid: &ZoneGrid,
) -> Result<AssignmentProblem> {
    let values = match (kind, values) {
        (ObjectiveKind::Vfa, None) => return Err(Error::invalid("VFA objective requires a value table")),
        (ObjectiveKind::Vfa, v) => v,
        (ObjectiveKind::Myopic, _) => None,
    };
    let t = state.epoch;

    let mut cars: BTreeMap<CarAttribute, u32> = BTreeMap::new();
    for car in state.assignable() {
        *cars.entry(car.attribute).or_default() += 1;
    }
    let car_classes: Vec<CarClass> = cars.into_iter().map(|(attribute, count)| CarClass { attribute, count }).collect();

    let mut trips: BTreeMap<(ZoneId, ZoneId, u64), Vec<usize>> = BTreeMap::new();
    for (i, trip) in state.trips.iter().enumerate() {
        trips.entry((trip.origin, trip.destination, trip.price_per_mile.to_bits())).or_default().push(i);
    }
    let trip_classes: Vec<TripClass> = trips
        .into_iter()
        .map(|((origin, destination, price), members)| TripClass {
            origin,
            destination,
            price_per_mile: f64::from_bits(price),
            count: members.len() as u32,
            members,
        })
        .collect();
    let representatives: Vec<TripRequest> = trip_classes.iter().map(|c| state.trips[c.members[0]].clone()).collect();

    let mut arcs = Vec::new();
    for (ci, class) in car_classes.iter().enumerate() {
        let mut enumerated = enumerate_decisions(class.attribute, t, &representatives, config, grid);
        if let Some(theta) = threshold {
            if config.battery_miles(class.attribute.battery) < theta * config.battery_range_miles {
                let recharge: Vec<DecisionArc> =
                    enumerated.iter().filter(|a| a.kind() == DecisionKind::Recharge).cloned().collect();
                if !recharge.is_empty() {
                    enumerated = recharge;
                }
            }
        }
        for arc in enumerated {
            let future = values.map_or(0.0, |v| v.value(arc.result_available_at, arc.result));
            let trip_class = match arc.decision {
                Decision::Serve { trip, .. } => Some(trip),
                _ => None,
            };
            arcs.push(ProblemArc { car_class: ci, trip_class, reward: arc.contribution + future, arc });
        }
    }
    Ok(AssignmentProblem { epoch: t, objective_kind: kind, car_classes, trip_classes, arcs })
}

impl AssignmentProblem {
    /// Problem built directly from classes and arcs, mainly for tests and
    /// oracles. Arcs must reference existing classes.
    pub fn from_parts(car_classes: Vec<CarClass>, trip_classes: Vec<TripClass>, arcs: Vec<ProblemArc>) -> Result<Self> {
        for arc in &arcs {
            if arc.car_class >= car_classes.len() {
                return Err(Error::invalid(format!("arc references missing car class {}", arc.car_class)));
            }
            if matches!(arc.trip_class, Some(b) if b >= trip_classes.len()) {
                return Err(Error::invalid("arc references missing trip class"));
            }
        }
        Ok(Self { epoch: 0, objective_kind: ObjectiveKind::Myopic, car_classes, trip_classes, arcs })
    }

    pub fn total_cars(&self) -> u64 {
        self.car_classes.iter().map(|c| c.count as u64).sum()
    }

    /// Objective of a flow vector in micro-currency.
    pub fn objective_micro(&self, flows: &[u32]) -> i64 {
        self.arcs.iter().zip(flows).map(|(a, &x)| to_micro(a.reward) * x as i64).sum()
    }

    /// True if `flows` routes every car exactly once and respects trip counts.
    pub fn is_feasible(&self, flows: &[u32]) -> bool {
        if flows.len() != self.arcs.len() {
            return false;
        }
        let mut out = vec![0u64; self.car_classes.len()];
        let mut served = vec![0u64; self.trip_classes.len()];
        for (arc, &x) in self.arcs.iter().zip(flows) {
            out[arc.car_class] += x as u64;
            if let Some(b) = arc.trip_class {
                served[b] += x as u64;
            }
        }
        out.iter().zip(&self.car_classes).all(|(&o, c)| o == c.count as u64)
            && served.iter().zip(&self.trip_classes).all(|(&s, c)| s <= c.count as u64)
    }

    fn with_car_count(&self, class: usize, count: u32) -> Self {
        let mut p = self.clone();
        p.car_classes[class].count = count;
        p
    }

    /// Deterministic text rendering for golden tests and debugging.
    pub fn dump(&self, solution: Option<&AssignmentSolution>) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "epoch {} objective {:?}", self.epoch, self.objective_kind);
        for (i, c) in self.car_classes.iter().enumerate() {
            let _ = write!(s, "car {i} {} l{} x{}", c.attribute.zone, c.attribute.battery, c.count);
            if let Some(sol) = solution {
                let _ = write!(s, " dual {:.6}", sol.car_duals[i]);
            }
            s.push('\n');
        }
        for (i, c) in self.trip_classes.iter().enumerate() {
            let _ = write!(s, "trip {i} {}->{} p{:.4} x{}", c.origin, c.destination, c.price_per_mile, c.count);
            if let Some(sol) = solution {
                let _ = write!(s, " dual {:.6}", sol.trip_duals[i]);
            }
            s.push('\n');
        }
        for (i, a) in self.arcs.iter().enumerate() {
            let target = match &a.arc.decision {
                Decision::Serve { .. } => format!("serve t{}", a.trip_class.unwrap_or(usize::MAX)),
                Decision::Reposition { to } => format!("reposition {to}"),
                Decision::Recharge { epochs } => format!("recharge {epochs}"),
                Decision::Stay => "stay".to_string(),
            };
            let _ = write!(
                s,
                "arc {i} c{} {target} reward {:.6} -> {} l{} @{}",
                a.car_class, a.reward, a.arc.result.zone, a.arc.result.battery, a.arc.result_available_at
            );
            if let Some(sol) = solution {
                let _ = write!(s, " flow {}", sol.flows[i]);
            }
            s.push('\n');
        }
        if let Some(sol) = solution {
            let _ = writeln!(s, "total {:.6}", sol.objective);
        }
        s
    }
}

struct Edge {
    to: usize,
    cap: i64,
    cost: i64,
    rev: usize,
}

struct Network {
    adj: Vec<Vec<Edge>>,
}

impl Network {
    fn new(n: usize) -> Self {
        Self { adj: (0..n).map(|_| Vec::new()).collect() }
    }

    fn add_edge(&mut self, u: usize, v: usize, cap: i64, cost: i64) -> (usize, usize) {
        let iu = self.adj[u].len();
        let iv = self.adj[v].len() + usize::from(u == v);
        self.adj[u].push(Edge { to: v, cap, cost, rev: iv });
        self.adj[v].push(Edge { to: u, cap: 0, cost: -cost, rev: iu });
        (u, iu)
    }

    /// Sends `amount` units from `s` to `t` along successive shortest paths.
    /// `potential` must make all residual reduced costs nonnegative.
    fn successive_shortest_paths(&mut self, s: usize, t: usize, mut amount: i64, potential: &mut [i64]) -> bool {
        let n = self.adj.len();
        let mut dist = vec![INF; n];
        let mut prev: Vec<(usize, usize)> = vec![(usize::MAX, 0); n];
        while amount > 0 {
            dist.fill(INF);
            dist[s] = 0;
            let mut heap = BinaryHeap::new();
            heap.push(Reverse((0i64, s)));
            while let Some(Reverse((d, u))) = heap.pop() {
                if d > dist[u] {
                    continue;
                }
                for (ei, e) in self.adj[u].iter().enumerate() {
                    if e.cap <= 0 {
                        continue;
                    }
                    let nd = d + e.cost + potential[u] - potential[e.to];
                    if nd < dist[e.to] {
                        dist[e.to] = nd;
                        prev[e.to] = (u, ei);
                        heap.push(Reverse((nd, e.to)));
                    }
                }
            }
            if dist[t] >= INF {
                return false;
            }
            for v in 0..n {
                if dist[v] < INF {
                    potential[v] += dist[v];
                }
            }
            let mut push = amount;
            let mut v = t;
            while v != s {
                let (u, ei) = prev[v];
                push = push.min(self.adj[u][ei].cap);
                v = u;
            }
            let mut v = t;
            while v != s {
                let (u, ei) = prev[v];
                self.adj[u][ei].cap -= push;
                let rev = self.adj[u][ei].rev;
                self.adj[v][rev].cap += push;
                v = u;
            }
            amount -= push;
        }
        true
    }

    /// Bellman-Ford distances from `s` over residual edges using `cost_of`
    /// as the edge cost.
    fn residual_distances(&self, s: usize, cost_of: impl Fn(usize, usize) -> i64) -> Vec<i64> {
        let n = self.adj.len();
        let mut dist = vec![INF; n];
        dist[s] = 0;
        for _ in 0..n {
            let mut changed = false;
            for u in 0..n {
                if dist[u] >= INF {
                    continue;
                }
                for (ei, e) in self.adj[u].iter().enumerate() {
                    if e.cap > 0 {
                        let nd = dist[u] + cost_of(u, ei);
                        if nd < dist[e.to] {
                            dist[e.to] = nd;
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        dist
    }
}

/// Optimal integral assignment and its duals.
///
/// Ties are broken toward serve, then stay, then recharge, then reposition
/// by adding a rank below the resolution of the scaled rewards. The car dual
/// is the left difference `F(R) - F(R - e_a)`, or the right difference for
/// an empty class; the trip dual is the right difference in the trip count.
pub fn solve(problem: &AssignmentProblem) -> AssignmentSolution {
    let nc = problem.car_classes.len();
    let nb = problem.trip_classes.len();
    let source = 0;
    let car_node = |i: usize| 1 + i;
    let trip_node = |b: usize| 1 + nc + b;
    let sink = 1 + nc + nb;
    let total = problem.total_cars() as i64;
    let scale = 4 * total + 1;

    let mut net = Network::new(sink + 1);
    let mut unit_cost: BTreeMap<(usize, usize), i64> = BTreeMap::new();
    for (i, c) in problem.car_classes.iter().enumerate() {
        net.add_edge(source, car_node(i), c.count as i64, 0);
    }
    let mut arc_edges = Vec::with_capacity(problem.arcs.len());
    for a in &problem.arcs {
        let micro = -to_micro(a.reward);
        let perturbed = micro * scale + a.kind().tie_rank();
        let to = a.trip_class.map_or(sink, trip_node);
        let (u, ei) = net.add_edge(car_node(a.car_class), to, total.max(1), perturbed);
        unit_cost.insert((u, ei), micro);
        arc_edges.push((u, ei));
    }
    for (b, c) in problem.trip_classes.iter().enumerate() {
        let (u, ei) = net.add_edge(trip_node(b), sink, c.count as i64, 0);
        unit_cost.insert((u, ei), 0);
    }

    // initial potentials: shortest paths on the layered DAG
    let mut potential = vec![0i64; sink + 1];
    let mut reach = vec![INF; sink + 1];
    reach[source] = 0;
    for layer in [source..source + 1, 1..1 + nc, 1 + nc..sink] {
        for u in layer {
            if reach[u] >= INF {
                continue;
            }
            for e in net.adj[u].iter().filter(|e| e.cap > 0) {
                reach[e.to] = reach[e.to].min(reach[u] + e.cost);
            }
        }
    }
    for (p, r) in potential.iter_mut().zip(&reach) {
        if *r < INF {
            *p = *r;
        }
    }
    let routed = net.successive_shortest_paths(source, sink, total, &mut potential);
    debug_assert!(routed, "stay arcs keep the assignment feasible");

    let flows: Vec<u32> = arc_edges
        .iter()
        .map(|&(u, ei)| {
            let e = &net.adj[u][ei];
            let rev = &net.adj[e.to][e.rev];
            rev.cap as u32
        })
        .collect();
    let objective_micro = problem.objective_micro(&flows);
    let objective = problem.arcs.iter().zip(&flows).map(|(a, &x)| a.reward * x as f64).sum();

    // distances from the sink over the residual graph with unscaled costs
    let cost_of = |u: usize, ei: usize| {
        let e = &net.adj[u][ei];
        if let Some(&c) = unit_cost.get(&(u, ei)) {
            c
        } else if let Some(&c) = unit_cost.get(&(e.to, e.rev)) {
            -c
        } else {
            0
        }
    };
    let from_sink = net.residual_distances(sink, cost_of);
    let car_duals = (0..nc)
        .map(|i| {
            if problem.car_classes[i].count == 0 {
                // no car to remove: the right difference instead
                let d = net.residual_distances(car_node(i), cost_of)[sink];
                if d >= INF {
                    0.0
                } else {
                    from_micro(-d)
                }
            } else {
                from_micro(from_sink[car_node(i)])
            }
        })
        .collect();
    let trip_duals = (0..nb)
        .map(|b| {
            let d = from_sink[trip_node(b)];
            if d >= INF {
                0.0
            } else {
                from_micro((-d).max(0))
            }
        })
        .collect();
    AssignmentSolution { flows, objective, objective_micro, car_duals, trip_duals }
}

/// Finite-difference comparison of one car class's dual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalReport {
    pub car_class: usize,
    pub dual: f64,
    /// `F(R) - F(R - e_a)`, absent when the class is empty.
    pub left: Option<f64>,
    /// `F(R + e_a) - F(R)`.
    pub right: f64,
    /// Distance from the dual to the finite-difference interval.
    pub discrepancy: f64,
}

/// Re-solves with each class count moved by one and reports how far each
/// reported dual is from the one-sided differences.
pub fn marginal_check(problem: &AssignmentProblem, solution: &AssignmentSolution) -> Vec<MarginalReport> {
    let base = solution.objective_micro;
    (0..problem.car_classes.len())
        .map(|i| {
            let count = problem.car_classes[i].count;
            let up = solve(&problem.with_car_count(i, count + 1)).objective_micro;
            let right = up - base;
            let left = (count > 0).then(|| base - solve(&problem.with_car_count(i, count - 1)).objective_micro);
            let dual = to_micro(solution.car_duals[i]);
            let (lo, hi) = match left {
                Some(l) => (l.min(right), l.max(right)),
                None => (right, right),
            };
            let discrepancy = if dual < lo {
                lo - dual
            } else if dual > hi {
                dual - hi
            } else {
                0
            };
            MarginalReport {
                car_class: i,
                dual: solution.car_duals[i],
                left: left.map(from_micro),
                right: from_micro(right),
                discrepancy: from_micro(discrepancy),
            }
        })
        .collect()
}

/// Convenience for callers that build simple problems by hand: one arc per
/// `(class, trip, reward, kind)` entry, with placeholder decision payloads.
pub fn simple_problem(
    cars: &[u32],
    trips: &[u32],
    arcs: &[(usize, Option<usize>, f64, DecisionKind)],
) -> Result<AssignmentProblem> {
    let car_classes = cars
        .iter()
        .enumerate()
        .map(|(i, &count)| CarClass { attribute: CarAttribute::new(ZoneId(i as u32), 0), count })
        .collect();
    let trip_classes = trips
        .iter()
        .enumerate()
        .map(|(b, &count)| TripClass {
            origin: ZoneId(b as u32),
            destination: ZoneId(b as u32 + 1),
            price_per_mile: 1.0,
            count,
            members: Vec::new(),
        })
        .collect();
    let arcs = arcs
        .iter()
        .map(|&(c, trip, reward, kind)| {
            let car = CarAttribute::new(ZoneId(c as u32), 0 as BatteryLevel);
            let decision = match (kind, trip) {
                (DecisionKind::Serve, Some(b)) => Decision::Serve {
                    trip: b,
                    origin: ZoneId(b as u32),
                    destination: ZoneId(b as u32 + 1),
                    deadhead_miles: 0.0,
                    trip_miles: 0.0,
                    price_per_mile: 1.0,
                },
                (DecisionKind::Serve, None) => return Err(Error::invalid("serve arc without a trip class")),
                (DecisionKind::Stay, _) => Decision::Stay,
                (DecisionKind::Recharge, _) => Decision::Recharge { epochs: 1 },
                (DecisionKind::Reposition, _) => Decision::Reposition { to: car.zone },
            };
            let trip_class = if kind == DecisionKind::Serve { trip } else { None };
            Ok(ProblemArc {
                car_class: c,
                trip_class,
                reward,
                arc: DecisionArc { car, decision, contribution: reward, result: car, result_available_at: 1 },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    AssignmentProblem::from_parts(car_classes, trip_classes, arcs)
}
