//! Per-zone surge pricing with a sampled belief over logistic acceptance
//! curves, Bayesian updates from rider and operator responses, and
//! bootstrap refits of the candidate curves.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fleet::Epoch;
use crate::spatial::ZoneId;

pub fn sigmoid(h: f64) -> f64 {
    if h >= 0.0 {
        1.0 / (1.0 + (-h).exp())
    } else {
        let e = h.exp();
        e / (1.0 + e)
    }
}

/// `ln sigmoid(h)` without overflow.
pub fn log_sigmoid(h: f64) -> f64 {
    if h >= 0.0 {
        -(-h).exp().ln_1p()
    } else {
        h - h.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveRole {
    /// Covariates `[1, t, price, vehicles, requests]`.
    Operator,
    /// Covariates `[1, t, price]`.
    Rider,
}

impl CurveRole {
    pub fn dimension(self) -> usize {
        match self {
            CurveRole::Operator => 5,
            CurveRole::Rider => 3,
        }
    }
}

/// Covariates of one price offer. `time` is the epoch divided by the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    pub time: f64,
    pub price: f64,
    pub vehicles: f64,
    pub requests: f64,
}

impl Covariates {
    pub fn features(&self, role: CurveRole) -> Vec<f64> {
        match role {
            CurveRole::Operator => vec![1.0, self.time, self.price, self.vehicles, self.requests],
            CurveRole::Rider => vec![1.0, self.time, self.price],
        }
    }

    pub fn with_price(self, price: f64) -> Self {
        Self { price, ..self }
    }

    /// Operator features; the rider features are the first three.
    fn row(&self) -> [f64; 5] {
        [1.0, self.time, self.price, self.vehicles, self.requests]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticCurve {
    pub role: CurveRole,
    pub coef: Vec<f64>,
}

impl LogisticCurve {
    pub fn new(role: CurveRole, coef: Vec<f64>) -> Result<Self> {
        if coef.len() != role.dimension() {
            return Err(Error::invalid(format!("{role:?} curve needs {} coefficients", role.dimension())));
        }
        Ok(Self { role, coef })
    }

    pub fn index(&self, c: &Covariates) -> f64 {
        self.coef.iter().zip(c.row()).map(|(b, x)| b * x).sum()
    }

    pub fn prob(&self, c: &Covariates) -> f64 {
        sigmoid(self.index(c))
    }

    /// Log-likelihood of one accept (`true`) or reject response.
    pub fn log_likelihood(&self, c: &Covariates, accept: bool) -> f64 {
        let h = self.index(c);
        log_sigmoid(if accept { h } else { -h })
    }
}

/// Discrete candidate prices per mile, sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceGrid {
    prices: Vec<f64>,
}

impl PriceGrid {
    pub fn new(min: f64, max: f64, points: usize) -> Result<Self> {
        if points < 2 || !(min < max) || !(min >= 0.0) {
            return Err(Error::invalid(format!("bad price grid [{min}, {max}] with {points} points")));
        }
        let step = (max - min) / (points - 1) as f64;
        Ok(Self { prices: (0..points).map(|i| min + step * i as f64).collect() })
    }

    pub fn from_prices(mut prices: Vec<f64>) -> Result<Self> {
        if prices.is_empty() {
            return Err(Error::invalid("empty price grid"));
        }
        prices.sort_by(f64::total_cmp);
        Ok(Self { prices })
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    /// Highest-utility price; ties go to the lower price.
    pub fn argmax(&self, mut utility: impl FnMut(f64) -> f64) -> f64 {
        let mut best = (self.prices[0], utility(self.prices[0]));
        for &p in &self.prices[1..] {
            let u = utility(p);
            if u > best.1 {
                best = (p, u);
            }
        }
        best.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub covariates: Covariates,
    pub rider_accept: bool,
    /// Absent when the rider declined.
    pub operator_accept: Option<bool>,
}

impl Observation {
    fn log_likelihood(&self, operator: &LogisticCurve, rider: &LogisticCurve) -> f64 {
        let mut ll = rider.log_likelihood(&self.covariates, self.rider_accept);
        if let Some(o) = self.operator_accept {
            ll += operator.log_likelihood(&self.covariates, o);
        }
        ll
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub clamp: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iterations: 50, tolerance: 1e-8, clamp: 50.0 }
    }
}

fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Maximum-likelihood logistic regression by iteratively reweighted least
/// squares. Coefficients are clamped to `[-clamp, clamp]` so separable data
/// gives a finite fit; a singular Hessian is damped.
pub fn fit_logistic(x: &[Vec<f64>], y: &[bool], dimension: usize, opts: &FitOptions) -> Vec<f64> {
    assert!(dimension <= 5, "at most 5 covariates");
    let w = vec![1.0; x.len()];
    fit_weighted(x, y, &w, &vec![0.0; dimension], opts)
}

/// `fit_logistic` with a weight per row, read from the first `dimension`
/// (at most 5) entries of each row, starting from `start`.
fn fit_weighted<R: AsRef<[f64]>>(x: &[R], y: &[bool], w: &[f64], start: &[f64], opts: &FitOptions) -> Vec<f64> {
    let dimension = start.len();
    let mut beta = start.to_vec();
    let n: f64 = w.iter().sum();
    if n <= 0.0 {
        return beta;
    }
    for _ in 0..opts.max_iterations {
        let mut grad = [0.0; 5];
        let mut hess = [[0.0; 5]; 5];
        for ((xi, &yi), &wi) in x.iter().zip(y).zip(w) {
            if wi == 0.0 {
                continue;
            }
            let xi = &xi.as_ref()[..dimension];
            let h: f64 = xi.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let p = sigmoid(h);
            let r = wi * (yi as u8 as f64 - p);
            let v = wi * p * (1.0 - p);
            for j in 0..dimension {
                grad[j] += xi[j] * r;
                for k in j..dimension {
                    hess[j][k] += v * xi[j] * xi[k];
                }
            }
        }
        let grad = grad[..dimension].to_vec();
        let hess: Vec<Vec<f64>> = (0..dimension)
            .map(|j| (0..dimension).map(|k| if k < j { hess[k][j] } else { hess[j][k] }).collect())
            .collect();
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt() / n;
        if norm < opts.tolerance {
            break;
        }
        let step = solve_linear(hess.clone(), grad.clone()).or_else(|| {
            let trace: f64 = (0..dimension).map(|j| hess[j][j]).sum();
            let damping = 1e-6 * (1.0 + trace / dimension as f64);
            let mut damped = hess;
            for (j, row) in damped.iter_mut().enumerate() {
                row[j] += damping;
            }
            solve_linear(damped, grad)
        });
        let Some(step) = step else { break };
        let mut moved = false;
        for (b, s) in beta.iter_mut().zip(step) {
            let next = (*b + s).clamp(-opts.clamp, opts.clamp);
            moved |= next != *b;
            *b = next;
        }
        if !moved {
            break;
        }
    }
    beta
}

/// Sampled belief of one zone: K (operator, rider) curve pairs with a
/// posterior kept in log space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneBelief {
    pub candidates: Vec<(LogisticCurve, LogisticCurve)>,
    log_q: Vec<f64>,
    pub observations: Vec<Observation>,
}

impl ZoneBelief {
    pub fn uniform(candidates: Vec<(LogisticCurve, LogisticCurve)>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::invalid("belief needs at least one candidate"));
        }
        for (o, r) in &candidates {
            if o.role != CurveRole::Operator || r.role != CurveRole::Rider {
                return Err(Error::invalid("candidates must be (operator, rider) pairs"));
            }
        }
        let k = candidates.len();
        Ok(Self { candidates, log_q: vec![-(k as f64).ln(); k], observations: Vec::new() })
    }

    /// Every operator curve paired with every rider curve.
    pub fn cross(operators: &[LogisticCurve], riders: &[LogisticCurve]) -> Result<Self> {
        let pairs = operators.iter().flat_map(|o| riders.iter().map(move |r| (o.clone(), r.clone()))).collect();
        Self::uniform(pairs)
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn posterior(&self) -> Vec<f64> {
        self.log_q.iter().map(|l| l.exp()).collect()
    }

    fn normalize(&mut self) {
        let m = self.log_q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            let k = self.log_q.len() as f64;
            self.log_q.fill(-k.ln());
            return;
        }
        let lse = m + self.log_q.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        for l in &mut self.log_q {
            *l -= lse;
        }
    }

    /// Posterior-weighted probability that both sides accept.
    pub fn acceptance(&self, c: &Covariates) -> f64 {
        self.candidates.iter().zip(&self.log_q).map(|((o, r), l)| l.exp() * o.prob(c) * r.prob(c)).sum()
    }

    /// Grid price maximizing `price * acceptance`, lowest on ties.
    pub fn recommend_price(&self, c: &Covariates, grid: &PriceGrid) -> f64 {
        grid.argmax(|p| p * self.acceptance(&c.with_price(p)))
    }

    pub fn update(&mut self, obs: Observation) {
        for ((o, r), l) in self.candidates.iter().zip(&mut self.log_q) {
            *l += obs.log_likelihood(o, r);
        }
        self.normalize();
        self.observations.push(obs);
    }

    /// Refits K candidates on bootstrap samples of the observation log and
    /// resets the posterior from each candidate's likelihood on its own
    /// sample. Returns false when fewer than `min_observations` exist.
    pub fn resample(&mut self, rng: &mut impl Rng, min_observations: usize, opts: &FitOptions) -> bool {
        let n = self.observations.len();
        if n < min_observations || n == 0 {
            return false;
        }
        let k = self.candidates.len();
        let rows: Vec<[f64; 5]> = self.observations.iter().map(|o| o.covariates.row()).collect();
        let ry: Vec<bool> = self.observations.iter().map(|o| o.rider_accept).collect();
        let oy: Vec<bool> = self.observations.iter().map(|o| o.operator_accept == Some(true)).collect();
        let ones = vec![1.0; n];
        let op_ones: Vec<f64> = self.observations.iter().map(|o| o.operator_accept.is_some() as u8 as f64).collect();
        // Bootstrap fits start from the full-sample fit.
        let rider_start = fit_weighted(&rows, &ry, &ones, &[0.0; 3], opts);
        let operator_start = fit_weighted(&rows, &oy, &op_ones, &[0.0; 5], opts);
        let mut candidates = Vec::with_capacity(k);
        let mut log_q = Vec::with_capacity(k);
        let mut counts = vec![0.0; n];
        let mut op_counts = vec![0.0; n];
        for _ in 0..k {
            // Bootstrap multiplicities stand in for the resampled rows.
            counts.fill(0.0);
            for _ in 0..n {
                counts[rng.random_range(0..n)] += 1.0;
            }
            for ((oc, &c), &m) in op_counts.iter_mut().zip(&counts).zip(&op_ones) {
                *oc = c * m;
            }
            let rider =
                LogisticCurve { role: CurveRole::Rider, coef: fit_weighted(&rows, &ry, &counts, &rider_start, opts) };
            let operator = LogisticCurve {
                role: CurveRole::Operator,
                coef: fit_weighted(&rows, &oy, &op_counts, &operator_start, opts),
            };
            log_q.push(
                self.observations
                    .iter()
                    .zip(&counts)
                    .filter(|(_, &c)| c > 0.0)
                    .map(|(o, &c)| c * o.log_likelihood(&operator, &rider))
                    .sum(),
            );
            candidates.push((operator, rider));
        }
        self.candidates = candidates;
        self.log_q = log_q;
        self.normalize();
        true
    }
}

/// Uniform range `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PricingConfig {
    pub price_min: f64,
    pub price_max: f64,
    pub grid_points: usize,
    pub operator_curves: usize,
    pub rider_curves: usize,
    pub min_resample: usize,
    /// Training episodes between refits.
    pub resample_every: u64,
    /// Most recent observations kept per zone for refitting.
    pub max_observations: usize,
    /// Put the hidden true curves among the initial candidates.
    pub truth_in_candidates: bool,
    pub rider_slope: Range,
    pub rider_midpoint: Range,
    pub rider_time: Range,
    pub operator_slope: Range,
    pub operator_midpoint: Range,
    pub operator_time: Range,
    pub operator_vehicles: Range,
    pub operator_requests: Range,
    pub fit: FitOptions,
}

impl Default for PricingConfig {
    fn default() -> Self {
        Self {
            price_min: 0.5,
            price_max: 2.0,
            grid_points: 16,
            operator_curves: 5,
            rider_curves: 5,
            min_resample: 30,
            resample_every: 10,
            max_observations: 5000,
            truth_in_candidates: false,
            rider_slope: Range::new(2.0, 6.0),
            rider_midpoint: Range::new(0.8, 2.0),
            rider_time: Range::new(-0.5, 0.5),
            operator_slope: Range::new(1.0, 3.0),
            operator_midpoint: Range::new(0.4, 1.2),
            operator_time: Range::new(-0.5, 0.5),
            operator_vehicles: Range::new(0.05, 0.3),
            operator_requests: Range::new(-0.3, -0.05),
            fit: FitOptions::default(),
        }
    }
}

impl PricingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resample_every == 0 || self.max_observations < self.min_resample.max(1) {
            return Err(Error::Config("pricing.resample_every must be positive and max_observations >= min_resample".into()));
        }
        if self.operator_curves == 0 || self.rider_curves == 0 {
            return Err(Error::Config("pricing needs at least one operator and one rider curve".into()));
        }
        PriceGrid::new(self.price_min, self.price_max, self.grid_points)
            .map(|_| ())
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn grid(&self) -> Result<PriceGrid> {
        PriceGrid::new(self.price_min, self.price_max, self.grid_points)
    }

    /// Rider curve `sigmoid(s (m - price) + c t)`, decreasing in price.
    pub fn rider_curve(&self, rng: &mut impl Rng) -> LogisticCurve {
        let s = self.rider_slope.sample(rng);
        let m = self.rider_midpoint.sample(rng);
        let c = self.rider_time.sample(rng);
        LogisticCurve { role: CurveRole::Rider, coef: vec![s * m, c, -s] }
    }

    /// Operator curve increasing in price and vehicles, decreasing in
    /// requests.
    pub fn operator_curve(&self, rng: &mut impl Rng) -> LogisticCurve {
        let s = self.operator_slope.sample(rng);
        let m = self.operator_midpoint.sample(rng);
        let c = self.operator_time.sample(rng);
        let v = self.operator_vehicles.sample(rng);
        let r = self.operator_requests.sample(rng);
        LogisticCurve { role: CurveRole::Operator, coef: vec![-s * m, c, s, v, r] }
    }
}

/// Hidden curves that generate responses in a zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueCurves {
    pub operator: LogisticCurve,
    pub rider: LogisticCurve,
}

/// Bernoulli rider decision from the true curve.
pub fn rider_response(truth: &LogisticCurve, c: &Covariates, rng: &mut impl Rng) -> bool {
    rng.random::<f64>() < truth.prob(c)
}

/// `+1` when the accepted trip received a car, `-1` otherwise.
pub fn operator_response(served: bool) -> i8 {
    if served {
        1
    } else {
        -1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceRecord {
    pub episode: u64,
    pub t: Epoch,
    pub zone: ZoneId,
    pub price: f64,
    pub rider_accept: bool,
    pub operator_accept: Option<bool>,
}

/// Beliefs and hidden truths for all zones, created lazily and
/// deterministically from `(seed, zone)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingEngine {
    config: PricingConfig,
    grid: PriceGrid,
    seed: u64,
    beliefs: BTreeMap<ZoneId, ZoneBelief>,
    truths: BTreeMap<ZoneId, TrueCurves>,
    pub log: Vec<PriceRecord>,
}

impl PricingEngine {
    pub fn new(config: PricingConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let grid = config.grid()?;
        Ok(Self { config, grid, seed, beliefs: BTreeMap::new(), truths: BTreeMap::new(), log: Vec::new() })
    }

    pub fn config(&self) -> &PricingConfig {
        &self.config
    }

    pub fn grid(&self) -> &PriceGrid {
        &self.grid
    }

    fn zone_rng(&self, zone: ZoneId, purpose: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((zone.0 as u64) << 8) | purpose);
        rng
    }

    pub fn truth(&mut self, zone: ZoneId) -> &TrueCurves {
        if !self.truths.contains_key(&zone) {
            let mut rng = self.zone_rng(zone, 1);
            let truth = TrueCurves {
                operator: self.config.operator_curve(&mut rng),
                rider: self.config.rider_curve(&mut rng),
            };
            self.truths.insert(zone, truth);
        }
        &self.truths[&zone]
    }

    pub fn belief(&mut self, zone: ZoneId) -> &mut ZoneBelief {
        if !self.beliefs.contains_key(&zone) {
            let truth = self.truth(zone).clone();
            let mut rng = self.zone_rng(zone, 2);
            let mut operators: Vec<LogisticCurve> =
                (0..self.config.operator_curves).map(|_| self.config.operator_curve(&mut rng)).collect();
            let mut riders: Vec<LogisticCurve> =
                (0..self.config.rider_curves).map(|_| self.config.rider_curve(&mut rng)).collect();
            if self.config.truth_in_candidates {
                let i = rng.random_range(0..operators.len());
                operators[i] = truth.operator;
                let j = rng.random_range(0..riders.len());
                riders[j] = truth.rider;
            }
            let belief = ZoneBelief::cross(&operators, &riders).expect("config validated");
            self.beliefs.insert(zone, belief);
        }
        self.beliefs.get_mut(&zone).expect("inserted above")
    }

    pub fn beliefs(&self) -> &BTreeMap<ZoneId, ZoneBelief> {
        &self.beliefs
    }

    pub fn recommend(&mut self, zone: ZoneId, c: &Covariates) -> f64 {
        let grid = self.grid.clone();
        self.belief(zone).recommend_price(c, &grid)
    }

    /// Price maximizing expected revenue under the true curves.
    pub fn oracle_price(&mut self, zone: ZoneId, c: &Covariates) -> f64 {
        let grid = self.grid.clone();
        let truth = self.truth(zone).clone();
        grid.argmax(|p| {
            let c = c.with_price(p);
            p * truth.operator.prob(&c) * truth.rider.prob(&c)
        })
    }

    /// Refits every zone that has enough observations, after dropping all
    /// but the newest `max_observations`. Each zone draws from its own
    /// stream keyed by `round`.
    pub fn resample_all(&mut self, round: u64) {
        let min = self.config.min_resample;
        let opts = self.config.fit;
        let seed = self.seed;
        let keep = self.config.max_observations;
        for (zone, belief) in &mut self.beliefs {
            let excess = belief.observations.len().saturating_sub(keep);
            belief.observations.drain(..excess);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ round.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            rng.set_stream(((zone.0 as u64) << 8) | 3);
            belief.resample(&mut rng, min, &opts);
        }
    }

    /// Price histogram over the grid: `(price, count)` rows.
    pub fn price_histogram(&self) -> Vec<(f64, usize)> {
        let prices = self.grid.prices();
        let mut counts = vec![0usize; prices.len()];
        for r in &self.log {
            if let Some(i) = prices.iter().position(|&p| p == r.price) {
                counts[i] += 1;
            }
        }
        prices.iter().copied().zip(counts).collect()
    }
}

/// Result of the standalone pricing simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSimReport {
    pub zones: usize,
    pub observations_per_zone: usize,
    pub evaluation_offers: usize,
    /// Realized revenue per offered trip (per mile) of the learned prices.
    pub learned_revenue: f64,
    /// Realized revenue per offered trip at the true-curve optimal price.
    pub oracle_revenue: f64,
    /// Expected revenue ratio of learned to oracle prices.
    pub expected_ratio: f64,
    pub fixed_price_revenue: f64,
    /// True when every posterior stayed a probability vector.
    pub posterior_valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriceSimConfig {
    pub zones: usize,
    pub observations_per_zone: usize,
    /// Offers per zone between two resampling rounds.
    pub episode_length: usize,
    pub evaluation_offers: usize,
    pub max_vehicles: u32,
    pub max_requests: u32,
    pub fixed_price: f64,
}

impl Default for PriceSimConfig {
    fn default() -> Self {
        Self {
            zones: 4,
            observations_per_zone: 5000,
            episode_length: 500,
            evaluation_offers: 2000,
            max_vehicles: 10,
            max_requests: 10,
            fixed_price: 1.0,
        }
    }
}

fn posterior_ok(b: &ZoneBelief) -> bool {
    let q = b.posterior();
    q.iter().all(|&x| x >= 0.0 && x.is_finite()) && (q.iter().sum::<f64>() - 1.0).abs() < 1e-12
}

/// Learns prices in isolated zones whose operator and rider responses both
/// come from hidden true curves, then compares the learned prices with the
/// true-curve optimum on common random numbers.
pub fn price_sim(pricing: &PricingConfig, sim: &PriceSimConfig, seed: u64) -> Result<(PriceSimReport, PricingEngine)> {
    if sim.zones == 0 || sim.episode_length == 0 {
        return Err(Error::Config("price simulation needs zones and a positive episode length".into()));
    }
    let mut engine = PricingEngine::new(pricing.clone(), seed)?;
    let zones: Vec<ZoneId> = (0..sim.zones as u32).map(ZoneId).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 << 32);
    let draw_covariates = |rng: &mut ChaCha8Rng| Covariates {
        time: rng.random::<f64>(),
        price: 0.0,
        vehicles: rng.random_range(0..=sim.max_vehicles) as f64,
        requests: rng.random_range(1..=sim.max_requests.max(1)) as f64,
    };
    let mut valid = true;
    let mut round = 0u64;
    for i in 0..sim.observations_per_zone {
        for &zone in &zones {
            let base = draw_covariates(&mut rng);
            let price = engine.recommend(zone, &base);
            let c = base.with_price(price);
            let truth = engine.truth(zone).clone();
            let rider_accept = rider_response(&truth.rider, &c, &mut rng);
            let operator_accept = rider_accept.then(|| rng.random::<f64>() < truth.operator.prob(&c));
            engine.log.push(PriceRecord { episode: round, t: 0, zone, price, rider_accept, operator_accept });
            let belief = engine.belief(zone);
            belief.update(Observation { covariates: c, rider_accept, operator_accept });
            valid &= posterior_ok(belief);
        }
        if (i + 1) % sim.episode_length == 0 {
            engine.resample_all(round);
            round += 1;
            valid &= zones.iter().all(|z| engine.beliefs.get(z).is_none_or(posterior_ok));
        }
    }

    let mut learned = 0.0;
    let mut oracle = 0.0;
    let mut fixed = 0.0;
    let mut expected_learned = 0.0;
    let mut expected_oracle = 0.0;
    for _ in 0..sim.evaluation_offers {
        for &zone in &zones {
            let base = draw_covariates(&mut rng);
            let (u_rider, u_operator) = (rng.random::<f64>(), rng.random::<f64>());
            let truth = engine.truth(zone).clone();
            let realized = |price: f64| {
                let c = base.with_price(price);
                let accepted = u_rider < truth.rider.prob(&c) && u_operator < truth.operator.prob(&c);
                (accepted as u8 as f64 * price, price * truth.rider.prob(&c) * truth.operator.prob(&c))
            };
            let p_learned = engine.recommend(zone, &base);
            let p_oracle = engine.oracle_price(zone, &base);
            let (r, e) = realized(p_learned);
            learned += r;
            expected_learned += e;
            let (r, e) = realized(p_oracle);
            oracle += r;
            expected_oracle += e;
            fixed += realized(sim.fixed_price).0;
        }
    }
    let offers = (sim.evaluation_offers * zones.len()).max(1) as f64;
    let report = PriceSimReport {
        zones: zones.len(),
        observations_per_zone: sim.observations_per_zone,
        evaluation_offers: sim.evaluation_offers,
        learned_revenue: learned / offers,
        oracle_revenue: oracle / offers,
        expected_ratio: if expected_oracle > 0.0 { expected_learned / expected_oracle } else { 1.0 },
        fixed_price_revenue: fixed / offers,
        posterior_valid: valid,
    };
    Ok((report, engine))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rider(b: [f64; 3]) -> LogisticCurve {
        LogisticCurve::new(CurveRole::Rider, b.to_vec()).unwrap()
    }

    fn operator(g: [f64; 5]) -> LogisticCurve {
        LogisticCurve::new(CurveRole::Operator, g.to_vec()).unwrap()
    }

    fn cov() -> Covariates {
        Covariates { time: 0.3, price: 1.0, vehicles: 2.0, requests: 3.0 }
    }

    #[test]
    fn coefficient_count_checked() {
        assert!(LogisticCurve::new(CurveRole::Rider, vec![1.0; 5]).is_err());
        assert!(LogisticCurve::new(CurveRole::Operator, vec![1.0; 5]).is_ok());
    }

    #[test]
    fn sure_acceptance_picks_top_price() {
        let b = ZoneBelief::cross(&[operator([60.0, 0.0, 0.0, 0.0, 0.0])], &[rider([60.0, 0.0, 0.0])]).unwrap();
        let grid = PriceGrid::new(0.5, 2.0, 7).unwrap();
        assert_eq!(b.recommend_price(&cov(), &grid), 2.0);
    }

    #[test]
    fn zero_acceptance_picks_lowest_price() {
        let b = ZoneBelief::cross(&[operator([-800.0, 0.0, 0.0, 0.0, 0.0])], &[rider([-800.0, 0.0, 0.0])]).unwrap();
        let grid = PriceGrid::new(0.5, 2.0, 7).unwrap();
        assert_eq!(b.recommend_price(&cov(), &grid), 0.5);
    }

    #[test]
    fn single_candidate_matches_brute_force() {
        let o = operator([-1.0, 0.2, 2.0, 0.1, -0.1]);
        let r = rider([5.0, 0.1, -4.0]);
        let b = ZoneBelief::cross(&[o.clone()], &[r.clone()]).unwrap();
        let grid = PriceGrid::new(0.5, 2.0, 31).unwrap();
        let c = cov();
        let mut best = (0.0, f64::MIN);
        for &p in grid.prices() {
            let cp = c.with_price(p);
            let u = p * o.prob(&cp) * r.prob(&cp);
            if u > best.1 {
                best = (p, u);
            }
        }
        assert_eq!(b.recommend_price(&c, &grid), best.0);
    }

    #[test]
    fn empty_grid_rejected() {
        assert!(PriceGrid::from_prices(Vec::new()).is_err());
        assert!(PriceGrid::new(1.0, 1.0, 4).is_err());
    }

    #[test]
    fn one_step_bayes() {
        // rider acceptance 0.2 and 0.8: a decline has likelihood 0.8 and 0.2
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let o = operator([0.0; 5]);
        let mut b = ZoneBelief::uniform(vec![
            (o.clone(), rider([logit(0.2), 0.0, 0.0])),
            (o, rider([logit(0.8), 0.0, 0.0])),
        ])
        .unwrap();
        b.update(Observation { covariates: cov(), rider_accept: false, operator_accept: None });
        let q = b.posterior();
        assert!((q[0] - 0.8).abs() < 1e-12 && (q[1] - 0.2).abs() < 1e-12, "{q:?}");
    }

    #[test]
    fn identical_candidates_stay_uniform() {
        let o = operator([0.3, 0.0, 1.0, 0.0, 0.0]);
        let r = rider([1.0, 0.0, -1.0]);
        let mut b = ZoneBelief::uniform(vec![(o.clone(), r.clone()); 4]).unwrap();
        for i in 0..20 {
            b.update(Observation { covariates: cov(), rider_accept: i % 3 == 0, operator_accept: Some(i % 2 == 0) });
        }
        for q in b.posterior() {
            assert!((q - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn underflow_is_renormalized() {
        let o = operator([0.0; 5]);
        let mut b = ZoneBelief::uniform(vec![(o.clone(), rider([-40.0, 0.0, 0.0])), (o, rider([-45.0, 0.0, 0.0]))])
            .unwrap();
        for _ in 0..100 {
            b.update(Observation { covariates: cov(), rider_accept: true, operator_accept: None });
        }
        let q = b.posterior();
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(q[0] > 0.999);
    }

    #[test]
    fn rider_draws() {
        let r = rider([0.0, 0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let hits = (0..n).filter(|_| rider_response(&r, &cov(), &mut rng)).count();
        assert!((hits as f64 / n as f64 - 0.5).abs() < 0.01);
        let sure = rider([100.0, 0.0, 0.0]);
        assert!((0..100).all(|_| rider_response(&sure, &cov(), &mut rng)));
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let xs: Vec<bool> = (0..50).map(|_| rider_response(&r, &cov(), &mut a)).collect();
        let ys: Vec<bool> = (0..50).map(|_| rider_response(&r, &cov(), &mut b)).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn operator_response_sign() {
        assert_eq!(operator_response(true), 1);
        assert_eq!(operator_response(false), -1);
    }

    #[test]
    fn scale_invariant_recommendation() {
        let cfg = PricingConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ops: Vec<_> = (0..3).map(|_| cfg.operator_curve(&mut rng)).collect();
        let rs: Vec<_> = (0..3).map(|_| cfg.rider_curve(&mut rng)).collect();
        let mut b = ZoneBelief::cross(&ops, &rs).unwrap();
        b.update(Observation { covariates: cov(), rider_accept: true, operator_accept: Some(false) });
        let grid = cfg.grid().unwrap();
        let base = b.recommend_price(&cov(), &grid);
        let mut scaled = b.clone();
        for l in &mut scaled.log_q {
            *l += 3.7;
        }
        assert_eq!(scaled.recommend_price(&cov(), &grid), base);
    }

    #[test]
    fn resample_guard_and_degenerate_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = PricingConfig::default();
        let ops: Vec<_> = (0..2).map(|_| cfg.operator_curve(&mut rng)).collect();
        let rs: Vec<_> = (0..2).map(|_| cfg.rider_curve(&mut rng)).collect();
        let mut b = ZoneBelief::cross(&ops, &rs).unwrap();
        for _ in 0..10 {
            b.update(Observation { covariates: cov(), rider_accept: true, operator_accept: Some(true) });
        }
        let before = b.clone();
        assert!(!b.resample(&mut rng, 30, &FitOptions::default()));
        assert_eq!(b, before);
        for i in 0..40 {
            let c = Covariates { time: i as f64 / 40.0, ..cov() };
            b.update(Observation { covariates: c, rider_accept: true, operator_accept: Some(true) });
        }
        assert!(b.resample(&mut rng, 30, &FitOptions::default()));
        assert!(posterior_ok(&b));
        for (o, r) in &b.candidates {
            assert!(o.coef.iter().chain(&r.coef).all(|c| c.abs() <= 50.0));
        }
    }

    #[test]
    fn logistic_recovery() {
        let truth = [3.0, -1.0, -2.5];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = rider(truth);
        let mut b = ZoneBelief::cross(&[operator([0.0; 5])], &vec![rider([0.0; 3]); 4]).unwrap();
        for _ in 0..20_000 {
            let c = Covariates { time: rng.random(), price: rng.random_range(0.5..2.0), vehicles: 0.0, requests: 0.0 };
            let accept = rider_response(&r, &c, &mut rng);
            b.update(Observation { covariates: c, rider_accept: accept, operator_accept: None });
        }
        assert!(b.resample(&mut rng, 30, &FitOptions::default()));
        let k = b.len() as f64;
        for (j, &t) in truth.iter().enumerate() {
            let mean: f64 = b.candidates.iter().map(|(_, r)| r.coef[j]).sum::<f64>() / k;
            assert!(((mean - t) / t).abs() < 0.1, "coef {j}: {mean} vs {t}");
        }
    }

    #[test]
    fn engine_is_deterministic_per_zone() {
        let mut a = PricingEngine::new(PricingConfig::default(), 7).unwrap();
        let mut b = PricingEngine::new(PricingConfig::default(), 7).unwrap();
        b.belief(ZoneId(3));
        let pa = a.belief(ZoneId(9)).clone();
        let pb = b.belief(ZoneId(9)).clone();
        assert_eq!(pa, pb);
        assert_eq!(pa.len(), 25);
        let cfg = PricingConfig { truth_in_candidates: true, ..PricingConfig::default() };
        let mut e = PricingEngine::new(cfg, 7).unwrap();
        let truth = e.truth(ZoneId(2)).clone();
        assert!(e.belief(ZoneId(2)).candidates.iter().any(|(o, r)| *o == truth.operator && *r == truth.rider));
    }

    #[test]
    fn small_price_sim_runs() {
        let cfg = PricingConfig { truth_in_candidates: true, ..PricingConfig::default() };
        let sim = PriceSimConfig { zones: 2, observations_per_zone: 300, episode_length: 100, evaluation_offers: 200, ..PriceSimConfig::default() };
        let (report, engine) = price_sim(&cfg, &sim, 4).unwrap();
        assert!(report.posterior_valid);
        assert_eq!(engine.log.len(), 600);
        assert!(report.oracle_revenue > 0.0);
        assert_eq!(engine.price_histogram().iter().map(|(_, n)| n).sum::<usize>(), 600);
    }
}
