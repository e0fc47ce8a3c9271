//! Generators and brute-force oracles shared by the integration suites.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::Rng;

use objsearch_core::env_graph::{EdgeInput, Environment, Room, SeenObject, Waypoint};
use objsearch_core::planner::{PlannerConfig, WaypointScores};
use objsearch_core::scenario::{load_scenario_file, Scenario};

pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn farm_path() -> PathBuf {
    workspace_root().join("scenarios/farm.json")
}

pub fn farm() -> Scenario {
    load_scenario_file(farm_path()).expect("shipped farm scenario loads")
}

/// Connected graph: a random spanning tree plus `extra` random chords.
/// Edge lengths are Euclidean distance stretched by a random factor so
/// shortest paths are not always straight lines.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, extra: usize) -> (Vec<Waypoint>, Vec<EdgeInput>) {
    let waypoints: Vec<Waypoint> = (0..n)
        .map(|i| Waypoint {
            id: format!("w{i:02}"),
            x: rng.gen_range(0.0..30.0),
            y: rng.gen_range(0.0..30.0),
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut pairs = BTreeSet::new();
    for k in 1..n {
        let a = order[k];
        let b = order[rng.gen_range(0..k)];
        pairs.insert((a.min(b), a.max(b)));
    }
    for _ in 0..extra {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b {
            pairs.insert((a.min(b), a.max(b)));
        }
    }
    let edges = pairs
        .into_iter()
        .map(|(a, b)| {
            let (wa, wb) = (&waypoints[a], &waypoints[b]);
            let euclid = (wa.x - wb.x).hypot(wa.y - wb.y);
            EdgeInput {
                a: wa.id.clone(),
                b: wb.id.clone(),
                length: Some(euclid.max(0.1) * rng.gen_range(1.0..1.6)),
            }
        })
        .collect();
    (waypoints, edges)
}

/// Random scores on `k` distinct waypoints, summing to 1.
pub fn random_scores<R: Rng>(rng: &mut R, env: &Environment, k: usize) -> WaypointScores {
    let mut ids: Vec<String> = env.waypoints().iter().map(|w| w.id.clone()).collect();
    ids.shuffle(rng);
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let scores: BTreeMap<String, f64> = ids.into_iter().take(k).zip(raw.iter().map(|v| v / total)).collect();
    WaypointScores::new(scores)
}

/// One planning instance: graph with `n` nodes, `k` scored waypoints and a
/// random start.
pub struct PlanInstance {
    pub env: Environment,
    pub scores: WaypointScores,
    pub start: String,
}

pub fn random_instance<R: Rng>(rng: &mut R, max_nodes: usize, k_range: (usize, usize)) -> PlanInstance {
    let k = rng.gen_range(k_range.0..=k_range.1);
    let n = rng.gen_range(k.max(2)..=max_nodes.max(k));
    let extra = rng.gen_range(0..=n);
    let (waypoints, edges) = random_graph(rng, n, extra);
    let env = Environment::new(waypoints, edges, vec![], vec![]).expect("generated graph is valid");
    let scores = random_scores(rng, &env, k);
    let start = env.waypoints()[rng.gen_range(0..n)].id.clone();
    PlanInstance { env, scores, start }
}

/// Shortest path by enumerating every simple path between `a` and `b`.
pub fn simple_path_distance(env: &Environment, a: &str, b: &str) -> f64 {
    let mut adj: BTreeMap<&str, Vec<(&str, f64)>> = BTreeMap::new();
    for e in env.edges() {
        adj.entry(e.a.as_str()).or_default().push((e.b.as_str(), e.length));
        adj.entry(e.b.as_str()).or_default().push((e.a.as_str(), e.length));
    }
    fn walk<'a>(
        adj: &BTreeMap<&'a str, Vec<(&'a str, f64)>>,
        at: &'a str,
        goal: &str,
        len: f64,
        seen: &mut BTreeSet<&'a str>,
        best: &mut f64,
    ) {
        if at == goal {
            *best = best.min(len);
            return;
        }
        if len >= *best {
            return;
        }
        for &(next, w) in adj.get(at).map(Vec::as_slice).unwrap_or(&[]) {
            if seen.insert(next) {
                walk(adj, next, goal, len + w, seen, best);
                seen.remove(next);
            }
        }
    }
    let mut best = f64::INFINITY;
    let mut seen = BTreeSet::from([a]);
    walk(&adj, a, b, 0.0, &mut seen, &mut best);
    best
}

/// Path cost written out directly: normalized legs summed left to right,
/// minus the weighted rank-discounted scores.
pub fn oracle_cost(env: &Environment, start: &str, seq: &[&str], scores: &WaypointScores, config: &PlannerConfig) -> f64 {
    let scale = config.distance_scale(env);
    let mut dist = 0.0;
    let mut score = 0.0;
    let mut prev = start;
    for (j, w) in seq.iter().enumerate() {
        dist += env.distance(prev, w).unwrap() * scale;
        score += scores.get(w).unwrap() / (j + 1) as f64;
        prev = w;
    }
    dist - config.score_weight * score
}

/// Minimum over every permutation of the score-positive waypoints. Among
/// orders within the planner's tie tolerance of the minimum, the
/// lexicographically smallest is returned.
pub fn oracle_best(env: &Environment, start: &str, scores: &WaypointScores, config: &PlannerConfig) -> (f64, Vec<String>) {
    let ids: Vec<&str> = scores.positive().map(|(w, _)| w).collect();
    let all: Vec<(f64, Vec<&str>)> = ids
        .iter()
        .copied()
        .permutations(ids.len())
        .map(|p| (oracle_cost(env, start, &p, scores, config), p))
        .collect();
    let min = all.iter().map(|(c, _)| *c).fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * min.abs().max(1.0);
    let (c, seq) = all
        .into_iter()
        .filter(|(c, _)| (c - min).abs() <= tol)
        .min_by(|a, b| a.1.cmp(&b.1))
        .unwrap();
    (c, seq.into_iter().map(String::from).collect())
}

/// Grid-like scenario for timing: `n` waypoints on a jittered lattice,
/// `objects` instances with `labels` distinct labels spread over distinct
/// waypoints, and a matching affinity table.
pub fn lattice_scenario_json(n: usize, objects: usize, labels: usize, seed: u64) -> String {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let cols = (n as f64).sqrt().ceil() as usize;
    let mut wps = Vec::new();
    for i in 0..n {
        let (r, c) = (i / cols, i % cols);
        wps.push(serde_json::json!({
            "id": format!("p{i:02}"),
            "x": c as f64 * 4.0 + rng.gen_range(-0.5..0.5),
            "y": r as f64 * 4.0 + rng.gen_range(-0.5..0.5),
        }));
    }
    let mut edges = Vec::new();
    for i in 0..n {
        let (r, c) = (i / cols, i % cols);
        if c + 1 < cols && i + 1 < n {
            edges.push(serde_json::json!({"a": format!("p{i:02}"), "b": format!("p{:02}", i + 1)}));
        }
        if (r + 1) * cols + c < n {
            edges.push(serde_json::json!({"a": format!("p{i:02}"), "b": format!("p{:02}", i + cols)}));
        }
    }
    let mut spots: Vec<usize> = (0..n).collect();
    spots.shuffle(&mut rng);
    let objs: Vec<_> = (0..objects)
        .map(|i| {
            serde_json::json!({
                "instance_id": format!("obj_{i:02}"),
                "label": format!("label {}", i % labels),
                "waypoint": format!("p{:02}", spots[i]),
            })
        })
        .collect();
    let mut table = serde_json::Map::new();
    for l in 0..labels {
        table.insert(format!("label {l}|target"), serde_json::json!(rng.gen_range(0.05..1.0)));
    }
    serde_json::json!({
        "waypoints": wps,
        "edges": edges,
        "objects": objs,
        "ground_truth": {"target_label": "target", "host_object": "obj_00"},
        "scorer": {"kind": "table", "table": table},
        "seed": seed,
    })
    .to_string()
}

/// Objects and rooms for hand-built environments.
pub fn object(id: &str, label: &str, waypoint: &str) -> SeenObject {
    SeenObject {
        instance_id: id.into(),
        label: label.into(),
        waypoint: waypoint.into(),
    }
}

pub fn room(name: &str, waypoints: &[&str]) -> Room {
    Room {
        name: name.into(),
        waypoints: waypoints.iter().map(|w| w.to_string()).collect(),
    }
}

pub fn waypoint(id: &str, x: f64, y: f64) -> Waypoint {
    Waypoint { id: id.into(), x, y }
}

pub fn edge(a: &str, b: &str, length: f64) -> EdgeInput {
    EdgeInput {
        a: a.into(),
        b: b.into(),
        length: Some(length),
    }
}

/// Minimal HTTP/1.1 server on a loopback port. Every request is answered by
/// `handler(request_index, body)` and the connection is closed.
pub struct StubServer {
    pub url: String,
    pub bodies: std::sync::Arc<std::sync::Mutex<Vec<String>>>,
}

impl StubServer {
    pub fn start<F>(handler: F) -> Self
    where
        F: Fn(usize, &str) -> (u16, String) + Send + Sync + 'static,
    {
        use std::io::{BufRead, BufReader, Read, Write};
        let listener = std::net::TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let bodies = std::sync::Arc::new(std::sync::Mutex::new(Vec::new()));
        let seen = bodies.clone();
        let handler = std::sync::Arc::new(handler);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let seen = seen.clone();
                let handler = handler.clone();
                std::thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut length = 0usize;
                    loop {
                        let mut line = String::new();
                        if reader.read_line(&mut line).unwrap_or(0) == 0 {
                            return;
                        }
                        let line = line.trim_end();
                        if line.is_empty() {
                            break;
                        }
                        if let Some((k, v)) = line.split_once(':') {
                            if k.eq_ignore_ascii_case("content-length") {
                                length = v.trim().parse().unwrap_or(0);
                            }
                        }
                    }
                    let mut body = vec![0u8; length];
                    if reader.read_exact(&mut body).is_err() {
                        return;
                    }
                    let body = String::from_utf8_lossy(&body).into_owned();
                    let index = {
                        let mut b = seen.lock().unwrap();
                        b.push(body.clone());
                        b.len() - 1
                    };
                    let (status, reply) = handler(index, &body);
                    let head = format!(
                        "HTTP/1.1 {status} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                        reply.len()
                    );
                    let _ = stream.write_all(head.as_bytes());
                    let _ = stream.write_all(reply.as_bytes());
                    let _ = stream.flush();
                });
            }
        });
        Self { url, bodies }
    }

    pub fn requests(&self) -> usize {
        self.bodies.lock().unwrap().len()
    }
}

/// Chat-completions body with the given answer and per-token logprobs.
pub fn completion_body(answer: &str, logprobs: &[f64]) -> String {
    let content: Vec<_> = logprobs
        .iter()
        .enumerate()
        .map(|(i, lp)| serde_json::json!({"token": format!("t{i}"), "logprob": lp}))
        .collect();
    serde_json::json!({
        "model": "stub-model",
        "choices": [{"message": {"role": "assistant", "content": answer}, "logprobs": {"content": content}}],
    })
    .to_string()
}

pub fn stub_config(url: &str) -> objsearch_core::llm_gateway::GatewayConfig {
    use objsearch_core::llm_gateway::{GatewayConfig, RetryPolicy};
    GatewayConfig {
        base_url: url.into(),
        api_key: Some("test-key".into()),
        model: "stub-model".into(),
        timeout: std::time::Duration::from_secs(5),
        retry: RetryPolicy {
            max_attempts: 4,
            base_delay: std::time::Duration::from_millis(5),
            max_delay: std::time::Duration::from_millis(40),
        },
        rate_per_sec: 1000.0,
        burst: 100,
        ..GatewayConfig::default()
    }
}
