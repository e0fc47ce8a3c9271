//! Comparison policies: room-level search and the two argmax ablations.
//!
//! Room Search scores named rooms for the target, orders rooms with the same
//! cost used for waypoints (each room collapsed to the waypoint nearest its
//! centroid), and inside a room visits object-bearing waypoints by embedding
//! similarity between the target and the hosted labels. After a room is
//! exhausted it is dropped, the remaining room probabilities renormalized,
//! and the next room chosen from the current position.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use thiserror::Error;

use crate::affinity::{normalize_label, AffinityDistribution, AffinityError};
use crate::env_graph::{Environment, GraphError};
use crate::llm_gateway::{CompletionRequest, Gateway, GatewayError};
use crate::planner::{self, PlanError, PlanMode, PlannerConfig, SearchPlan, WaypointScores};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("no rooms to score")]
    NoRooms,
    #[error("no labels to rank")]
    NoLabels,
    #[error("no score for room `{room}` and target `{target}` and no default")]
    MissingRoomScore { room: String, target: String },
    #[error("invalid room score {value} for `{key}`")]
    InvalidRoomScore { key: String, value: f64 },
    #[error("could not parse room scores from reply: {0}")]
    UnparseableReply(String),
    #[error("no embedding for `{0}`")]
    MissingEmbedding(String),
    #[error("embedding for `{0}` is empty, non-finite, or has the wrong dimension")]
    BadEmbedding(String),
    #[error("distribution is empty")]
    EmptyDistribution,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Affinity(#[from] AffinityError),
}

/// Normalized probability per room name.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomDistribution {
    pub entries: BTreeMap<String, f64>,
    pub raw: BTreeMap<String, f64>,
}

impl RoomDistribution {
    pub fn from_raw(raw: BTreeMap<String, f64>) -> Result<Self, BaselineError> {
        if raw.is_empty() {
            return Err(BaselineError::NoRooms);
        }
        for (k, &v) in &raw {
            if !(v.is_finite() && v >= 0.0) {
                return Err(BaselineError::InvalidRoomScore {
                    key: k.clone(),
                    value: v,
                });
            }
        }
        let total: f64 = raw.values().sum();
        let entries = if total > 0.0 {
            raw.iter().map(|(k, &v)| (k.clone(), v / total)).collect()
        } else {
            let p = 1.0 / raw.len() as f64;
            raw.keys().map(|k| (k.clone(), p)).collect()
        };
        Ok(Self { entries, raw })
    }
}

pub trait RoomScorer: Send + Sync {
    fn room_scores(&self, rooms: &[String], target: &str) -> Result<RoomDistribution, BaselineError>;
}

/// Nonnegative room scores keyed by normalized (room, target).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoomScoreTable {
    pairs: BTreeMap<(String, String), f64>,
    default: Option<f64>,
}

impl RoomScoreTable {
    pub fn new(default: Option<f64>) -> Self {
        Self {
            pairs: BTreeMap::new(),
            default,
        }
    }

    pub fn insert(&mut self, room: &str, target: &str, value: f64) {
        self.pairs
            .insert((normalize_label(room), normalize_label(target)), value);
    }

    /// From `"room|target" -> score` entries plus an optional `"default"`.
    pub fn from_map(map: &BTreeMap<String, f64>) -> Result<Self, BaselineError> {
        let mut table = Self::default();
        for (key, &value) in map {
            if !(value.is_finite() && value >= 0.0) {
                return Err(BaselineError::InvalidRoomScore {
                    key: key.clone(),
                    value,
                });
            }
            if key == "default" {
                table.default = Some(value);
            } else {
                let (room, target) = key
                    .split_once('|')
                    .ok_or_else(|| BaselineError::UnparseableReply(format!("bad room table key `{key}`")))?;
                table.insert(room, target, value);
            }
        }
        Ok(table)
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        let mut map: BTreeMap<String, f64> = self
            .pairs
            .iter()
            .map(|((r, t), &v)| (format!("{r}|{t}"), v))
            .collect();
        if let Some(d) = self.default {
            map.insert("default".into(), d);
        }
        map
    }
}

impl RoomScorer for RoomScoreTable {
    fn room_scores(&self, rooms: &[String], target: &str) -> Result<RoomDistribution, BaselineError> {
        if rooms.is_empty() {
            return Err(BaselineError::NoRooms);
        }
        let t = normalize_label(target);
        let mut raw = BTreeMap::new();
        for room in rooms {
            let key = (normalize_label(room), t.clone());
            let v = self
                .pairs
                .get(&key)
                .copied()
                .or(self.default)
                .ok_or_else(|| BaselineError::MissingRoomScore {
                    room: room.clone(),
                    target: t.clone(),
                })?;
            raw.insert(room.clone(), v);
        }
        RoomDistribution::from_raw(raw)
    }
}

pub const ROOM_SYSTEM_PROMPT: &str = "You are an expert object location reasoning robot. You will be given a list of rooms and a target object. For each room, output an integer score from 0 to 100 for how likely the target object is to be found in that room. Answer with exactly one line per room in the format `<room>: <score>` and nothing else.";

pub fn room_user_prompt(rooms: &[String], target: &str) -> String {
    format!("Rooms: {}\nTarget object: {}", rooms.join(", "), target)
}

const ROOM_REPROMPT_SUFFIX: &str = "\nYour previous reply could not be parsed. Reply with one line per room, exactly `<room>: <score>`, using each room name as given.";

/// Parses `<room>: <score>` lines. Every room must appear exactly once.
pub fn parse_room_reply(reply: &str, rooms: &[String]) -> Result<BTreeMap<String, f64>, BaselineError> {
    let wanted: HashMap<String, &String> = rooms.iter().map(|r| (normalize_label(r), r)).collect();
    let mut out = BTreeMap::new();
    for line in reply.lines() {
        let line = line.trim().trim_start_matches(['-', '*', ' ']).trim();
        let Some((name, score)) = line.rsplit_once(':') else { continue };
        let name = normalize_label(name.trim_matches(['`', '"', '\'', '*']));
        let Some(&room) = wanted.get(&name) else { continue };
        let score: u32 = score
            .trim()
            .trim_end_matches(['.', '%'])
            .parse()
            .map_err(|_| BaselineError::UnparseableReply(line.to_string()))?;
        if score > 100 {
            return Err(BaselineError::UnparseableReply(line.to_string()));
        }
        if out.insert(room.clone(), f64::from(score)).is_some() {
            return Err(BaselineError::UnparseableReply(format!("room `{room}` listed twice")));
        }
    }
    if out.len() != rooms.len() {
        let missing: Vec<_> = rooms.iter().filter(|r| !out.contains_key(*r)).cloned().collect();
        return Err(BaselineError::UnparseableReply(format!("missing rooms: {}", missing.join(", "))));
    }
    Ok(out)
}

/// Elicits integer room scores from a chat endpoint, with one reprompt.
pub struct LlmRoomScorer {
    gateway: Arc<Gateway>,
}

impl LlmRoomScorer {
    pub fn new(gateway: Arc<Gateway>) -> Self {
        Self { gateway }
    }
}

impl RoomScorer for LlmRoomScorer {
    fn room_scores(&self, rooms: &[String], target: &str) -> Result<RoomDistribution, BaselineError> {
        if rooms.is_empty() {
            return Err(BaselineError::NoRooms);
        }
        let model = self.gateway.config().model.clone();
        let user = room_user_prompt(rooms, target);
        let first = self
            .gateway
            .complete(&CompletionRequest::new(&model, ROOM_SYSTEM_PROMPT.into(), user.clone()))?;
        let raw = match parse_room_reply(&first.answer_text, rooms) {
            Ok(raw) => raw,
            Err(e) => {
                log::warn!("room score reply unparseable ({e}); reprompting once");
                let retry = self.gateway.complete(&CompletionRequest::new(
                    &model,
                    ROOM_SYSTEM_PROMPT.into(),
                    format!("{user}{ROOM_REPROMPT_SUFFIX}"),
                ))?;
                parse_room_reply(&retry.answer_text, rooms)?
            }
        };
        RoomDistribution::from_raw(raw)
    }
}

pub fn room_scores(
    scorer: &dyn RoomScorer,
    rooms: &[String],
    target: &str,
) -> Result<RoomDistribution, BaselineError> {
    scorer.room_scores(rooms, target)
}

pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, label: &str) -> Result<Vec<f64>, BaselineError>;
}

/// Declared vectors per normalized label.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TableEmbedder {
    vectors: BTreeMap<String, Vec<f64>>,
}

impl TableEmbedder {
    pub fn new(vectors: &BTreeMap<String, Vec<f64>>) -> Result<Self, BaselineError> {
        let dim = vectors.values().next().map(Vec::len);
        let mut out = BTreeMap::new();
        for (k, v) in vectors {
            if v.is_empty() || Some(v.len()) != dim || v.iter().any(|x| !x.is_finite()) {
                return Err(BaselineError::BadEmbedding(k.clone()));
            }
            out.insert(normalize_label(k), v.clone());
        }
        Ok(Self { vectors: out })
    }

    pub fn vectors(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.vectors
    }
}

impl EmbeddingProvider for TableEmbedder {
    fn embed(&self, label: &str) -> Result<Vec<f64>, BaselineError> {
        let key = normalize_label(label);
        self.vectors
            .get(&key)
            .cloned()
            .ok_or(BaselineError::MissingEmbedding(key))
    }
}

/// Bag of hashed character trigrams. Deterministic and dependency-free;
/// captures spelling overlap only.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dim: 128 }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl EmbeddingProvider for HashEmbedder {
    fn embed(&self, label: &str) -> Result<Vec<f64>, BaselineError> {
        let padded = format!("  {}  ", normalize_label(label));
        let bytes = padded.as_bytes();
        let mut v = vec![0.0; self.dim.max(1)];
        for w in bytes.windows(3) {
            let h = fnv1a(w);
            let slot = (h % v.len() as u64) as usize;
            let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
            v[slot] += sign;
        }
        Ok(v)
    }
}

/// Table lookup with a fallback provider for undeclared labels.
pub struct FallbackEmbedder<A, B> {
    pub primary: A,
    pub fallback: B,
}

impl<A: EmbeddingProvider, B: EmbeddingProvider> EmbeddingProvider for FallbackEmbedder<A, B> {
    fn embed(&self, label: &str) -> Result<Vec<f64>, BaselineError> {
        match self.primary.embed(label) {
            Err(BaselineError::MissingEmbedding(_)) => self.fallback.embed(label),
            other => other,
        }
    }
}

/// Embeddings from the gateway's embeddings route.
pub struct GatewayEmbedder {
    gateway: Arc<Gateway>,
}

impl GatewayEmbedder {
    pub fn new(gateway: Arc<Gateway>) -> Self {
        Self { gateway }
    }
}

impl EmbeddingProvider for GatewayEmbedder {
    fn embed(&self, label: &str) -> Result<Vec<f64>, BaselineError> {
        Ok(self.gateway.embed(&normalize_label(label))?)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
}

/// Labels ordered by cosine similarity to the target, highest first, ties
/// by label.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityRanking {
    pub entries: Vec<(String, f64)>,
}

impl SimilarityRanking {
    pub fn similarity(&self, label: &str) -> Option<f64> {
        let key = normalize_label(label);
        self.entries.iter().find(|(l, _)| *l == key).map(|(_, s)| *s)
    }
}

pub fn similarity_rank(
    embedder: &dyn EmbeddingProvider,
    labels: &[String],
    target: &str,
) -> Result<SimilarityRanking, BaselineError> {
    let unique: BTreeSet<String> = labels.iter().map(|l| normalize_label(l)).collect();
    if unique.is_empty() {
        return Err(BaselineError::NoLabels);
    }
    let t = normalize_label(target);
    let tv = embedder.embed(&t)?;
    let mut entries = Vec::with_capacity(unique.len());
    for label in unique {
        let sim = if label == t {
            1.0
        } else {
            let v = embedder.embed(&label)?;
            if v.len() != tv.len() {
                return Err(BaselineError::BadEmbedding(label));
            }
            cosine(&tv, &v)
        };
        entries.push((label, sim));
    }
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(SimilarityRanking { entries })
}

/// Waypoint of the room closest to the room's coordinate centroid; ties by id.
pub fn room_representative<'a>(env: &Environment, waypoints: &'a BTreeSet<String>) -> Result<&'a str, BaselineError> {
    let mut cx = 0.0;
    let mut cy = 0.0;
    for w in waypoints {
        let p = &env.waypoints()[env.index_of(w)?];
        cx += p.x;
        cy += p.y;
    }
    let n = waypoints.len() as f64;
    let (cx, cy) = (cx / n, cy / n);
    let mut best: Option<(f64, &str)> = None;
    for w in waypoints {
        let p = &env.waypoints()[env.index_of(w)?];
        let d = (p.x - cx).hypot(p.y - cy);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, w.as_str()));
        }
    }
    best.map(|(_, w)| w).ok_or(BaselineError::NoRooms)
}

pub fn plan_room_search(
    env: &Environment,
    room_dist: &RoomDistribution,
    start: &str,
    config: &PlannerConfig,
    ranking: &SimilarityRanking,
) -> Result<SearchPlan, BaselineError> {
    if room_dist.entries.is_empty() {
        return Err(BaselineError::NoRooms);
    }
    env.index_of(start)?;
    let rooms: BTreeMap<&str, &BTreeSet<String>> = env
        .rooms()
        .iter()
        .filter(|r| room_dist.entries.contains_key(&r.name))
        .map(|r| (r.name.as_str(), &r.waypoints))
        .collect();
    if rooms.is_empty() {
        return Err(BaselineError::NoRooms);
    }
    let mut reps = BTreeMap::new();
    for (&name, wps) in &rooms {
        reps.insert(name, room_representative(env, wps)?);
    }

    // best (lowest) similarity rank of any object hosted at each waypoint
    let rank_of: HashMap<&str, usize> = ranking
        .entries
        .iter()
        .enumerate()
        .map(|(i, (l, _))| (l.as_str(), i))
        .collect();
    let waypoint_rank = |w: &str| -> usize {
        env.objects_at(w)
            .unwrap_or_default()
            .iter()
            .map(|o| rank_of.get(normalize_label(&o.label).as_str()).copied().unwrap_or(usize::MAX))
            .min()
            .unwrap_or(usize::MAX)
    };

    let mut remaining: BTreeSet<&str> = rooms.keys().copied().collect();
    let mut current = start.to_string();
    let mut visited: BTreeSet<String> = BTreeSet::new();
    let mut sequence: Vec<String> = Vec::new();
    let mut credited: HashMap<String, f64> = HashMap::new();
    while !remaining.is_empty() {
        // belief over the rooms still in play
        let mass: f64 = remaining.iter().map(|r| room_dist.entries[*r]).sum();
        let belief = |r: &str| {
            if mass > 0.0 {
                room_dist.entries[r] / mass
            } else {
                1.0 / remaining.len() as f64
            }
        };
        let mut rep_scores: BTreeMap<String, f64> = BTreeMap::new();
        for &r in &remaining {
            let s = rep_scores.entry(reps[r].to_string()).or_insert(0.0);
            *s = s.max(belief(r));
        }
        let next = if rep_scores.values().any(|&s| s > 0.0) {
            let first_rep = planner::plan(env, &current, &WaypointScores::new(rep_scores), config)?
                .steps
                .first()
                .map(|s| s.waypoint.clone())
                .expect("nonempty plan");
            // the most probable room behind that representative
            remaining
                .iter()
                .copied()
                .filter(|r| reps[r] == first_rep)
                .max_by(|a, b| belief(a).total_cmp(&belief(b)).then_with(|| b.cmp(a)))
                .expect("representative belongs to a remaining room")
        } else {
            *remaining.iter().next().expect("nonempty")
        };
        remaining.remove(next);

        let mut inside: Vec<&String> = rooms[next]
            .iter()
            .filter(|w| !visited.contains(*w) && !env.objects_at(w).unwrap_or_default().is_empty())
            .collect();
        inside.sort_by_key(|w| (waypoint_rank(w), w.as_str()));
        let share = room_dist.entries[next] / inside.len().max(1) as f64;
        for w in inside {
            visited.insert(w.clone());
            credited.insert(w.clone(), share);
            sequence.push(w.clone());
            current = w.clone();
        }
    }

    let total: f64 = room_dist.entries.values().sum();
    Ok(SearchPlan::from_sequence(
        env,
        start,
        &sequence,
        |w| credited[w],
        total,
        config,
        PlanMode::RoomSearch,
    )?)
}

/// Single-waypoint plan to the host of the most probable object instance.
pub fn hottest_object_plan(
    env: &Environment,
    dist: &AffinityDistribution,
    start: &str,
    config: &PlannerConfig,
) -> Result<SearchPlan, BaselineError> {
    let per_instance = dist.instance_probabilities(env)?;
    let (instance, _) = per_instance
        .iter()
        // BTreeMap order is by instance id, so the first maximum wins ties
        .fold(None::<(&String, f64)>, |best, (id, &p)| match best {
            Some((_, bp)) if bp >= p => best,
            _ => Some((id, p)),
        })
        .ok_or(BaselineError::EmptyDistribution)?;
    let waypoint = env.object(instance)?.waypoint.clone();
    let scores = planner::waypoint_scores(env, dist)?;
    let s = scores.get(&waypoint).unwrap_or(0.0);
    Ok(SearchPlan::from_sequence(
        env,
        start,
        &[waypoint],
        |_| s,
        scores.total_mass,
        config,
        PlanMode::HottestObject,
    )?)
}

/// Single-waypoint plan to the waypoint with the largest score sum.
pub fn hottest_waypoint_plan(
    env: &Environment,
    scores: &WaypointScores,
    start: &str,
    config: &PlannerConfig,
) -> Result<SearchPlan, BaselineError> {
    let (waypoint, s) = scores
        .scores
        .iter()
        .fold(None::<(&String, f64)>, |best, (w, &s)| match best {
            Some((_, bs)) if bs >= s => best,
            _ => Some((w, s)),
        })
        .ok_or(BaselineError::EmptyDistribution)?;
    Ok(SearchPlan::from_sequence(
        env,
        start,
        std::slice::from_ref(waypoint),
        |_| s,
        scores.total_mass,
        config,
        PlanMode::HottestWaypoint,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn room_table_normalizes() {
        let mut t = RoomScoreTable::new(None);
        t.insert("tool storage", "drill", 80.0);
        t.insert("wash area", "drill", 10.0);
        t.insert("water station", "drill", 5.0);
        t.insert("harvest station", "drill", 5.0);
        let rooms = labels(&["tool storage", "wash area", "water station", "harvest station"]);
        let d = room_scores(&t, &rooms, "drill").unwrap();
        assert!((d.entries["tool storage"] - 0.8).abs() < 1e-15);
        assert!((d.entries["wash area"] - 0.1).abs() < 1e-15);
        assert!((d.entries["water station"] - 0.05).abs() < 1e-15);
        assert!((d.entries.values().sum::<f64>() - 1.0).abs() < 1e-9);

        let one = room_scores(&t, &labels(&["tool storage"]), "drill").unwrap();
        assert_eq!(one.entries["tool storage"], 1.0);
        assert!(matches!(
            room_scores(&t, &labels(&["attic"]), "drill"),
            Err(BaselineError::MissingRoomScore { .. })
        ));
        assert!(matches!(room_scores(&t, &[], "drill"), Err(BaselineError::NoRooms)));
    }

    #[test]
    fn parses_room_replies() {
        let rooms = labels(&["tool storage", "wash area"]);
        let r = parse_room_reply("- Tool Storage: 85\nwash area: 10.\n", &rooms).unwrap();
        assert_eq!(r["tool storage"], 85.0);
        assert_eq!(r["wash area"], 10.0);
        assert!(parse_room_reply("tool storage: 85", &rooms).is_err());
        assert!(parse_room_reply("tool storage: lots\nwash area: 1", &rooms).is_err());
        assert!(parse_room_reply("tool storage: 185\nwash area: 1", &rooms).is_err());
    }

    #[test]
    fn similarity_identity_and_ties() {
        let h = HashEmbedder::default();
        let r = similarity_rank(&h, &labels(&["rake", "drill", "hose"]), "drill").unwrap();
        assert_eq!(r.entries[0], ("drill".to_string(), 1.0));

        let vecs = BTreeMap::from([
            ("t".to_string(), vec![1.0, 0.0]),
            ("b".to_string(), vec![0.0, 1.0]),
            ("a".to_string(), vec![0.0, 2.0]),
            ("c".to_string(), vec![1.0, 1.0]),
        ]);
        let e = TableEmbedder::new(&vecs).unwrap();
        let r = similarity_rank(&e, &labels(&["b", "c", "a"]), "t").unwrap();
        let names: Vec<_> = r.entries.iter().map(|(l, _)| l.as_str()).collect();
        assert_eq!(names, ["c", "a", "b"]);
        assert!((r.entries[0].1 - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(r.entries[1].1, 0.0);
        assert!(matches!(
            similarity_rank(&e, &labels(&["zz"]), "t"),
            Err(BaselineError::MissingEmbedding(_))
        ));
    }

    #[test]
    fn fallback_embedder_fills_gaps() {
        let vecs = BTreeMap::from([("a".to_string(), vec![1.0; 128])]);
        let e = FallbackEmbedder {
            primary: TableEmbedder::new(&vecs).unwrap(),
            fallback: HashEmbedder::default(),
        };
        assert_eq!(e.embed("a").unwrap(), vec![1.0; 128]);
        assert_eq!(e.embed("zz").unwrap().len(), 128);
    }
}
