//! Waypoint scoring and visiting-order optimization.
//!
//! A plan visits every score-positive waypoint once, starting from a fixed
//! start waypoint. Its cost is
//!
//! ```text
//! cost = sum(normalized leg distances, start leg included) - weight * sum_j s(v_j) / j
//! ```
//!
//! where `j` is the 1-based visit rank. The first term favors short tours,
//! the second favors reaching high-score waypoints early.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affinity::{AffinityDistribution, AffinityError};
use crate::env_graph::{Environment, GraphError};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Affinity(#[from] AffinityError),
    #[error("waypoint `{0}` has no score")]
    Unscored(String),
    #[error("waypoint `{0}` appears twice in the sequence")]
    Repeated(String),
    #[error("{count} scored waypoints exceed the exhaustive limit of {limit}; use the bounded planner")]
    TooManyForExhaustive { count: usize, limit: usize },
    #[error("nothing to plan: no waypoint has a positive score")]
    NothingToPlan,
    #[error("invalid planner config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceNormalizer {
    /// Divide leg lengths by the largest pairwise shortest-path distance.
    MaxPairwise,
    /// Raw meters.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerConfig {
    pub score_weight: f64,
    pub exhaustive_limit: usize,
    pub distance_normalizer: DistanceNormalizer,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            score_weight: 1.0,
            exhaustive_limit: 9,
            distance_normalizer: DistanceNormalizer::MaxPairwise,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        if !(self.score_weight.is_finite() && self.score_weight > 0.0) {
            return Err(PlanError::InvalidConfig(format!(
                "score weight must be positive, got {}",
                self.score_weight
            )));
        }
        if self.exhaustive_limit == 0 {
            return Err(PlanError::InvalidConfig("exhaustive limit must be at least 1".into()));
        }
        Ok(())
    }

    /// Factor that turns meters into cost units.
    pub fn distance_scale(&self, env: &Environment) -> f64 {
        match self.distance_normalizer {
            DistanceNormalizer::None => 1.0,
            DistanceNormalizer::MaxPairwise => {
                let m = env.max_pairwise_distance();
                if m > 0.0 {
                    1.0 / m
                } else {
                    1.0
                }
            }
        }
    }
}

/// `s(w)` for every object-bearing waypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct WaypointScores {
    pub scores: BTreeMap<String, f64>,
    pub total_mass: f64,
}

impl WaypointScores {
    pub fn new(scores: BTreeMap<String, f64>) -> Self {
        let total_mass = scores.values().sum();
        Self { scores, total_mass }
    }

    pub fn get(&self, waypoint: &str) -> Option<f64> {
        self.scores.get(waypoint).copied()
    }

    /// Score-positive waypoints in id order.
    pub fn positive(&self) -> impl Iterator<Item = (&str, f64)> {
        self.scores
            .iter()
            .filter(|(_, &s)| s > 0.0)
            .map(|(k, &s)| (k.as_str(), s))
    }
}

/// Sums per-instance probabilities at each waypoint. Waypoints without
/// objects are absent from the result.
pub fn waypoint_scores(
    env: &Environment,
    dist: &AffinityDistribution,
) -> Result<WaypointScores, PlanError> {
    let per_instance = dist.instance_probabilities(env)?;
    let mut scores = BTreeMap::new();
    for o in env.objects() {
        *scores.entry(o.waypoint.clone()).or_insert(0.0) += per_instance[&o.instance_id];
    }
    Ok(WaypointScores::new(scores))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    Exhaustive,
    Bounded,
    RoomSearch,
    HottestObject,
    HottestWaypoint,
}

impl PlanMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PlanMode::Exhaustive => "exhaustive",
            PlanMode::Bounded => "bounded",
            PlanMode::RoomSearch => "room_search",
            PlanMode::HottestObject => "hottest_object",
            PlanMode::HottestWaypoint => "hottest_waypoint",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanStep {
    pub waypoint: String,
    pub leg_meters: f64,
    /// Leg length in cost units.
    pub leg_cost: f64,
    pub score: f64,
    pub cumulative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchPlan {
    pub start: String,
    pub steps: Vec<PlanStep>,
    pub cost: f64,
    pub score_weight: f64,
    /// Mass of the distribution the plan was built from.
    pub total_mass: f64,
    pub mode: PlanMode,
}

impl SearchPlan {
    pub fn sequence(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.waypoint.as_str()).collect()
    }

    /// Cost from the per-step fields alone.
    pub fn recompute_cost(&self) -> f64 {
        let (dist, score) = self.steps.iter().enumerate().fold((0.0, 0.0), |(d, s), (j, st)| {
            (d + st.leg_cost, s + st.score / (j + 1) as f64)
        });
        dist - self.score_weight * score
    }

    /// Builds a plan with per-step fields for an explicit visiting order.
    /// `score_of` supplies the score credited at each step.
    pub fn from_sequence(
        env: &Environment,
        start: &str,
        sequence: &[String],
        score_of: impl Fn(&str) -> f64,
        total_mass: f64,
        config: &PlannerConfig,
        mode: PlanMode,
    ) -> Result<Self, PlanError> {
        let scale = config.distance_scale(env);
        let mut prev = env.index_of(start)?;
        let mut cumulative = 0.0;
        let mut steps = Vec::with_capacity(sequence.len());
        for w in sequence {
            let idx = env.index_of(w)?;
            let leg_meters = env.distance_idx(prev, idx);
            let score = score_of(w);
            cumulative += score;
            steps.push(PlanStep {
                waypoint: w.clone(),
                leg_meters,
                leg_cost: leg_meters * scale,
                score,
                cumulative,
            });
            prev = idx;
        }
        let mut plan = Self {
            start: start.to_string(),
            steps,
            cost: 0.0,
            score_weight: config.score_weight,
            total_mass,
            mode,
        };
        plan.cost = plan.recompute_cost();
        Ok(plan)
    }

    pub fn travel_meters(&self) -> f64 {
        self.steps.iter().map(|s| s.leg_meters).sum()
    }
}

/// Cost of visiting `sequence` in order from `start`.
pub fn path_cost(
    sequence: &[&str],
    start: &str,
    scores: &WaypointScores,
    env: &Environment,
    config: &PlannerConfig,
) -> Result<f64, PlanError> {
    let scale = config.distance_scale(env);
    let mut prev = env.index_of(start)?;
    let mut dist_sum = 0.0;
    let mut score_sum = 0.0;
    for (j, w) in sequence.iter().enumerate() {
        let idx = env.index_of(w)?;
        let s = scores.get(w).ok_or_else(|| PlanError::Unscored(w.to_string()))?;
        dist_sum += env.distance_idx(prev, idx) * scale;
        score_sum += s / (j + 1) as f64;
        prev = idx;
    }
    Ok(dist_sum - config.score_weight * score_sum)
}

fn ties(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Dense view of one planning instance. Nodes are the score-positive
/// waypoints in id order; index `n` is the start.
struct Instance {
    ids: Vec<String>,
    scores: Vec<f64>,
    // (n + 1) x (n + 1) leg costs, row/column n is the start
    legs: Vec<f64>,
    weight: f64,
}

impl Instance {
    fn build(
        env: &Environment,
        start: &str,
        scores: &WaypointScores,
        config: &PlannerConfig,
    ) -> Result<Self, PlanError> {
        config.validate()?;
        let start_idx = env.index_of(start)?;
        let mut ids = Vec::new();
        let mut vals = Vec::new();
        let mut env_idx = Vec::new();
        for (w, s) in scores.positive() {
            env_idx.push(env.index_of(w)?);
            ids.push(w.to_string());
            vals.push(s);
        }
        if ids.is_empty() {
            return Err(PlanError::NothingToPlan);
        }
        env_idx.push(start_idx);
        let m = env_idx.len();
        let scale = config.distance_scale(env);
        let mut legs = vec![0.0; m * m];
        for (a, &ia) in env_idx.iter().enumerate() {
            for (b, &ib) in env_idx.iter().enumerate() {
                legs[a * m + b] = env.distance_idx(ia, ib) * scale;
            }
        }
        Ok(Self {
            ids,
            scores: vals,
            legs,
            weight: config.score_weight,
        })
    }

    fn n(&self) -> usize {
        self.ids.len()
    }

    /// Cost accumulated the same way the bounded search accumulates it.
    fn order_cost(&self, order: &[usize]) -> f64 {
        let (mut dist, mut score, mut prev) = (0.0, 0.0, self.n());
        for (j, &v) in order.iter().enumerate() {
            dist += self.leg(prev, v);
            score += self.scores[v] / (j + 1) as f64;
            prev = v;
        }
        dist - self.weight * score
    }

    /// Greedy order improved by relocating single nodes until no move helps.
    fn local_search_order(&self) -> (f64, Vec<usize>) {
        let n = self.n();
        let mut order = Vec::with_capacity(n);
        let mut left: Vec<usize> = (0..n).collect();
        let mut prev = n;
        while !left.is_empty() {
            let rank = (order.len() + 1) as f64;
            let (i, _) = left
                .iter()
                .enumerate()
                .map(|(i, &v)| (i, self.leg(prev, v) - self.weight * self.scores[v] / rank))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("nonempty");
            prev = left.remove(i);
            order.push(prev);
        }
        let mut best = self.order_cost(&order);
        let mut improved = true;
        while improved {
            improved = false;
            for from in 0..n {
                for to in 0..n {
                    if from == to {
                        continue;
                    }
                    let mut cand = order.clone();
                    let v = cand.remove(from);
                    cand.insert(to, v);
                    let c = self.order_cost(&cand);
                    if c < best && !ties(c, best) {
                        best = c;
                        order = cand;
                        improved = true;
                    }
                }
            }
        }
        (best, order)
    }

    #[inline]
    fn leg(&self, from: usize, to: usize) -> f64 {
        self.legs[from * (self.n() + 1) + to]
    }

    fn into_plan(
        self,
        env: &Environment,
        start: &str,
        order: &[usize],
        total_mass: f64,
        config: &PlannerConfig,
        mode: PlanMode,
    ) -> Result<SearchPlan, PlanError> {
        let seq: Vec<String> = order.iter().map(|&i| self.ids[i].clone()).collect();
        let by_id: HashMap<&str, f64> =
            self.ids.iter().map(String::as_str).zip(self.scores.iter().copied()).collect();
        SearchPlan::from_sequence(env, start, &seq, |w| by_id[w], total_mass, config, mode)
    }
}

/// Exact optimum by enumerating every permutation of the scored waypoints.
/// Among cost ties the lexicographically smallest sequence wins.
pub fn plan_exhaustive(
    env: &Environment,
    start: &str,
    scores: &WaypointScores,
    config: &PlannerConfig,
) -> Result<SearchPlan, PlanError> {
    let inst = Instance::build(env, start, scores, config)?;
    let n = inst.n();
    if n > config.exhaustive_limit {
        return Err(PlanError::TooManyForExhaustive {
            count: n,
            limit: config.exhaustive_limit,
        });
    }

    struct Search<'a> {
        inst: &'a Instance,
        prefix: Vec<usize>,
        best: Option<(f64, Vec<usize>)>,
    }

    impl Search<'_> {
        // children are expanded in index order, so leaves arrive in
        // lexicographic order and the first of a set of ties is kept
        fn descend(&mut self, used: u32, last: usize, dist: f64, score: f64) {
            let n = self.inst.n();
            let depth = self.prefix.len();
            if depth == n {
                let cost = dist - self.inst.weight * score;
                let better = match &self.best {
                    None => true,
                    Some((b, _)) => cost < *b && !ties(cost, *b),
                };
                if better {
                    self.best = Some((cost, self.prefix.clone()));
                }
                return;
            }
            for v in 0..n {
                if used & (1 << v) != 0 {
                    continue;
                }
                self.prefix.push(v);
                self.descend(
                    used | (1 << v),
                    v,
                    dist + self.inst.leg(last, v),
                    score + self.inst.scores[v] / (depth + 1) as f64,
                );
                self.prefix.pop();
            }
        }
    }

    let mut search = Search {
        inst: &inst,
        prefix: Vec::with_capacity(n),
        best: None,
    };
    search.descend(0, n, 0.0, 0.0);
    let (_, order) = search.best.expect("at least one permutation");
    inst.into_plan(env, start, &order, scores.total_mass, config, PlanMode::Exhaustive)
}

#[derive(Clone, Copy)]
struct Node {
    mask: u64,
    last: u32,
    depth: u32,
    parent: u32,
    dist: f64,
    score: f64,
}

#[derive(PartialEq)]
struct Queued {
    f: f64,
    node: u32,
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // min-heap on f, then oldest node first
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.node.cmp(&self.node))
    }
}

/// Best-first branch-and-bound over partial visiting orders.
///
/// A partial order is summarized by (visited set, last waypoint), since the
/// rank of the next visit is the size of the visited set; of two prefixes
/// reaching the same state only the cheaper one is expanded. The bound
/// assigns the unvisited scores to the best remaining ranks (largest score
/// to the earliest rank) and charges each unvisited waypoint its cheapest
/// possible incoming leg.
pub fn plan_bounded(
    env: &Environment,
    start: &str,
    scores: &WaypointScores,
    config: &PlannerConfig,
) -> Result<SearchPlan, PlanError> {
    let inst = Instance::build(env, start, scores, config)?;
    let n = inst.n();
    assert!(n <= 63, "bounded planner supports at most 63 scored waypoints");
    let full: u64 = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };

    let mut by_score: Vec<usize> = (0..n).collect();
    by_score.sort_by(|&a, &b| inst.scores[b].total_cmp(&inst.scores[a]).then(a.cmp(&b)));

    // candidate predecessors of each node, cheapest leg first
    let incoming: Vec<Vec<usize>> = (0..n)
        .map(|v| {
            let mut from: Vec<usize> = (0..=n).filter(|&u| u != v).collect();
            from.sort_by(|&a, &b| inst.leg(a, v).total_cmp(&inst.leg(b, v)));
            from
        })
        .collect();

    let bound = |mask: u64, last: usize, depth: usize| -> f64 {
        let mut score = 0.0;
        let mut rank = depth;
        for &v in &by_score {
            if mask & (1 << v) == 0 {
                rank += 1;
                score += inst.scores[v] / rank as f64;
            }
        }
        let mut dist = 0.0;
        for (v, from) in incoming.iter().enumerate() {
            if mask & (1 << v) != 0 {
                continue;
            }
            let u = from
                .iter()
                .copied()
                .find(|&u| u == last || (u < n && mask & (1 << u) == 0))
                .expect("last is always a candidate");
            dist += inst.leg(u, v);
        }
        dist - inst.weight * score
    };

    let mut nodes: Vec<Node> = Vec::new();
    let prefix_of = |nodes: &[Node], mut id: u32| -> Vec<usize> {
        let mut seq = Vec::new();
        while id != u32::MAX {
            let nd = nodes[id as usize];
            if nd.depth == 0 {
                break;
            }
            seq.push(nd.last as usize);
            id = nd.parent;
        }
        seq.reverse();
        seq
    };

    // best known node per (visited set, last)
    let mut best_at: HashMap<(u64, u32), u32> = HashMap::new();
    let mut heap = BinaryHeap::new();
    nodes.push(Node {
        mask: 0,
        last: n as u32,
        depth: 0,
        parent: u32::MAX,
        dist: 0.0,
        score: 0.0,
    });
    heap.push(Queued {
        f: bound(0, n, 0),
        node: 0,
    });

    // a good complete order up front lets the bound prune from the start
    let mut incumbent: Option<(f64, Vec<usize>)> = Some(inst.local_search_order());
    while let Some(Queued { f, node }) = heap.pop() {
        if let Some((best, _)) = &incumbent {
            if f > *best && !ties(f, *best) {
                break;
            }
        }
        let cur = nodes[node as usize];
        if cur.depth > 0 && best_at.get(&(cur.mask, cur.last)) != Some(&node) {
            continue; // superseded
        }
        if cur.mask == full {
            let cost = cur.dist - inst.weight * cur.score;
            let order = prefix_of(&nodes, node);
            incumbent = match incumbent {
                None => Some((cost, order)),
                Some((b, seq)) if ties(cost, b) => {
                    if order < seq {
                        Some((b.min(cost), order))
                    } else {
                        Some((b.min(cost), seq))
                    }
                }
                Some((b, _)) if cost < b => Some((cost, order)),
                keep => keep,
            };
            continue;
        }
        let depth = cur.depth as usize;
        for v in 0..n {
            if cur.mask & (1 << v) != 0 {
                continue;
            }
            let child = Node {
                mask: cur.mask | (1 << v),
                last: v as u32,
                depth: cur.depth + 1,
                parent: node,
                dist: cur.dist + inst.leg(cur.last as usize, v),
                score: cur.score + inst.scores[v] / (depth + 1) as f64,
            };
            let g = child.dist - inst.weight * child.score;
            let key = (child.mask, child.last);
            let child_id = nodes.len() as u32;
            let accept = match best_at.get(&key) {
                None => true,
                Some(&other) => {
                    let o = nodes[other as usize];
                    let og = o.dist - inst.weight * o.score;
                    if ties(g, og) {
                        nodes.push(child);
                        let smaller = prefix_of(&nodes, child_id) < prefix_of(&nodes, other);
                        nodes.pop();
                        smaller
                    } else {
                        g < og
                    }
                }
            };
            if !accept {
                continue;
            }
            let f = g + bound(child.mask, v, depth + 1);
            if let Some((best, _)) = &incumbent {
                if f > *best && !ties(f, *best) {
                    continue;
                }
            }
            nodes.push(child);
            best_at.insert(key, child_id);
            heap.push(Queued { f, node: child_id });
        }
    }

    let (_, order) = incumbent.expect("search reaches a complete order");
    inst.into_plan(env, start, &order, scores.total_mass, config, PlanMode::Bounded)
}

/// Exhaustive search up to the configured limit, bounded search beyond it.
pub fn plan(
    env: &Environment,
    start: &str,
    scores: &WaypointScores,
    config: &PlannerConfig,
) -> Result<SearchPlan, PlanError> {
    let n = scores.positive().count();
    if n <= config.exhaustive_limit {
        plan_exhaustive(env, start, scores, config)
    } else {
        plan_bounded(env, start, scores, config)
    }
}
