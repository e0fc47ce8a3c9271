//! Waypoint graph, seen objects, rooms and the all-pairs shortest-path table.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("duplicate waypoint id `{0}`")]
    DuplicateWaypoint(String),
    #[error("waypoint `{0}` has a non-finite coordinate")]
    NonFiniteCoordinate(String),
    #[error("unknown waypoint `{0}`")]
    UnknownWaypoint(String),
    #[error("edge {0}-{1} is a self-loop")]
    SelfLoop(String, String),
    #[error("edge {0}-{1} has nonpositive or non-finite length {2}")]
    BadEdgeLength(String, String, f64),
    #[error("duplicate object instance id `{0}`")]
    DuplicateInstance(String),
    #[error("object `{0}` has an empty label")]
    EmptyLabel(String),
    #[error("unknown object instance `{0}`")]
    UnknownInstance(String),
    #[error("duplicate room `{0}`")]
    DuplicateRoom(String),
    #[error("room `{0}` has no waypoints")]
    EmptyRoom(String),
    #[error("graph is disconnected: waypoint `{0}` is unreachable from `{1}`")]
    Disconnected(String, String),
    #[error("environment has no waypoints")]
    NoWaypoints,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waypoint {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub a: String,
    pub b: String,
    /// Meters. Always positive.
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeenObject {
    pub instance_id: String,
    pub label: String,
    pub waypoint: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Room {
    pub name: String,
    pub waypoints: BTreeSet<String>,
}

/// The unseen target and the seen object it currently sits at.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub target_label: String,
    pub host_object: String,
}

/// Immutable environment. Distances are precomputed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    waypoints: Vec<Waypoint>,
    edges: Vec<Edge>,
    objects: Vec<SeenObject>,
    rooms: Vec<Room>,
    index: HashMap<String, usize>,
    // objects sorted by instance id, grouped per waypoint index
    by_waypoint: Vec<Vec<usize>>,
    dist: Vec<f64>,
    max_pairwise: f64,
}

/// Unvalidated edge as it appears in a scenario; `length` defaults to the
/// Euclidean distance between the endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeInput {
    pub a: String,
    pub b: String,
    pub length: Option<f64>,
}

impl Environment {
    pub fn new(
        waypoints: Vec<Waypoint>,
        edges: Vec<EdgeInput>,
        objects: Vec<SeenObject>,
        rooms: Vec<Room>,
    ) -> Result<Self, GraphError> {
        if waypoints.is_empty() {
            return Err(GraphError::NoWaypoints);
        }
        let mut index = HashMap::with_capacity(waypoints.len());
        for (i, w) in waypoints.iter().enumerate() {
            if !w.x.is_finite() || !w.y.is_finite() {
                return Err(GraphError::NonFiniteCoordinate(w.id.clone()));
            }
            if index.insert(w.id.clone(), i).is_some() {
                return Err(GraphError::DuplicateWaypoint(w.id.clone()));
            }
        }
        let lookup = |id: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| GraphError::UnknownWaypoint(id.to_string()))
        };

        let mut resolved = Vec::with_capacity(edges.len());
        for e in edges {
            let ia = lookup(&e.a)?;
            let ib = lookup(&e.b)?;
            if ia == ib {
                return Err(GraphError::SelfLoop(e.a, e.b));
            }
            let length = e.length.unwrap_or_else(|| {
                let (p, q) = (&waypoints[ia], &waypoints[ib]);
                (p.x - q.x).hypot(p.y - q.y)
            });
            if !(length.is_finite() && length > 0.0) {
                return Err(GraphError::BadEdgeLength(e.a, e.b, length));
            }
            resolved.push(Edge {
                a: e.a,
                b: e.b,
                length,
            });
        }

        let mut seen_instances = BTreeSet::new();
        for o in &objects {
            if !seen_instances.insert(o.instance_id.as_str()) {
                return Err(GraphError::DuplicateInstance(o.instance_id.clone()));
            }
            if o.label.trim().is_empty() {
                return Err(GraphError::EmptyLabel(o.instance_id.clone()));
            }
            lookup(&o.waypoint)?;
        }

        let mut room_names = BTreeSet::new();
        for r in &rooms {
            if !room_names.insert(r.name.as_str()) {
                return Err(GraphError::DuplicateRoom(r.name.clone()));
            }
            if r.waypoints.is_empty() {
                return Err(GraphError::EmptyRoom(r.name.clone()));
            }
            for w in &r.waypoints {
                lookup(w)?;
            }
        }

        let n = waypoints.len();
        let dist = all_pairs_shortest_paths(n, &resolved, &index);
        if let Some(j) = (1..n).find(|&j| dist[j].is_infinite()) {
            return Err(GraphError::Disconnected(
                waypoints[j].id.clone(),
                waypoints[0].id.clone(),
            ));
        }
        let max_pairwise = dist.iter().copied().fold(0.0, f64::max);

        let mut by_waypoint = vec![Vec::new(); n];
        let mut order: Vec<usize> = (0..objects.len()).collect();
        order.sort_by(|&i, &j| objects[i].instance_id.cmp(&objects[j].instance_id));
        for i in order {
            by_waypoint[index[&objects[i].waypoint]].push(i);
        }

        Ok(Self {
            waypoints,
            edges: resolved,
            objects,
            rooms,
            index,
            by_waypoint,
            dist,
            max_pairwise,
        })
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn objects(&self) -> &[SeenObject] {
        &self.objects
    }

    pub fn rooms(&self) -> &[Room] {
        &self.rooms
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Result<usize, GraphError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| GraphError::UnknownWaypoint(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    /// Shortest-path length in meters between two waypoints.
    pub fn distance(&self, a: &str, b: &str) -> Result<f64, GraphError> {
        let i = self.index_of(a)?;
        let j = self.index_of(b)?;
        Ok(self.distance_idx(i, j))
    }

    #[inline]
    pub fn distance_idx(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.waypoints.len() + j]
    }

    /// Largest shortest-path distance over all waypoint pairs.
    pub fn max_pairwise_distance(&self) -> f64 {
        self.max_pairwise
    }

    /// Objects hosted at `waypoint`, ordered by instance id.
    pub fn objects_at(&self, waypoint: &str) -> Result<Vec<&SeenObject>, GraphError> {
        let i = self.index_of(waypoint)?;
        Ok(self.objects_at_idx(i))
    }

    pub fn objects_at_idx(&self, i: usize) -> Vec<&SeenObject> {
        self.by_waypoint[i].iter().map(|&k| &self.objects[k]).collect()
    }

    pub fn object(&self, instance_id: &str) -> Result<&SeenObject, GraphError> {
        self.objects
            .iter()
            .find(|o| o.instance_id == instance_id)
            .ok_or_else(|| GraphError::UnknownInstance(instance_id.to_string()))
    }

    /// Waypoint ids hosting at least one object, sorted.
    pub fn object_waypoints(&self) -> BTreeSet<&str> {
        self.objects.iter().map(|o| o.waypoint.as_str()).collect()
    }

    /// Object instance counts per normalized label.
    pub fn label_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for o in &self.objects {
            *counts.entry(crate::affinity::normalize_label(&o.label)).or_insert(0) += 1;
        }
        counts
    }

    pub fn validate_truth(&self, truth: &GroundTruth) -> Result<(), GraphError> {
        if truth.target_label.trim().is_empty() {
            return Err(GraphError::EmptyLabel("ground_truth.target_label".into()));
        }
        self.object(&truth.host_object).map(|_| ())
    }
}

fn all_pairs_shortest_paths(n: usize, edges: &[Edge], index: &HashMap<String, usize>) -> Vec<f64> {
    let mut d = vec![f64::INFINITY; n * n];
    for i in 0..n {
        d[i * n + i] = 0.0;
    }
    for e in edges {
        let (a, b) = (index[&e.a], index[&e.b]);
        if e.length < d[a * n + b] {
            d[a * n + b] = e.length;
            d[b * n + a] = e.length;
        }
    }
    // Floyd-Warshall; maps are tens of waypoints
    for k in 0..n {
        for i in 0..n {
            let dik = d[i * n + k];
            if dik.is_infinite() {
                continue;
            }
            for j in 0..n {
                let cand = dik + d[k * n + j];
                if cand < d[i * n + j] {
                    d[i * n + j] = cand;
                }
            }
        }
    }
    // force exact symmetry against rounding in the relaxation order
    for i in 0..n {
        for j in (i + 1)..n {
            let m = d[i * n + j].min(d[j * n + i]);
            d[i * n + j] = m;
            d[j * n + i] = m;
        }
    }
    d
}
