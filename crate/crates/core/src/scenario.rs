//! Scenario documents (JSON): environment, ground truth, perception,
//! scorer selection and optional planner / baseline sections.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affinity::{AffinityError, AffinityTable};
use crate::baselines::{BaselineError, RoomScoreTable, TableEmbedder};
use crate::env_graph::{EdgeInput, Environment, GraphError, GroundTruth, Room, SeenObject, Waypoint};
use crate::planner::{DistanceNormalizer, PlanError, PlannerConfig};
use crate::search_sim::{PerceptionModel, SimError, SimulationParams};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Graph(#[from] GraphError),
    #[error("invalid scenario: {0}")]
    Sim(#[from] SimError),
    #[error("invalid scenario: {0}")]
    Plan(#[from] PlanError),
    #[error("invalid affinity table: {0}")]
    Affinity(#[from] AffinityError),
    #[error("invalid scenario: {0}")]
    Baseline(#[from] BaselineError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointDoc {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDoc {
    pub a: String,
    pub b: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectDoc {
    pub instance_id: String,
    pub label: String,
    pub waypoint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomDoc {
    pub name: String,
    pub waypoints: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthDoc {
    pub target_label: String,
    pub host_object: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Llm,
    #[default]
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ScorerDoc {
    pub kind: ScorerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchDoc {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_lost_threshold")]
    pub lost_threshold: f64,
}

fn default_epsilon() -> f64 {
    0.5
}

fn default_lost_threshold() -> f64 {
    0.95
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerDoc {
    #[serde(default = "default_weight")]
    pub score_weight: f64,
    #[serde(default = "default_limit")]
    pub exhaustive_limit: usize,
    #[serde(default = "default_normalizer")]
    pub distance_normalizer: DistanceNormalizer,
}

fn default_weight() -> f64 {
    1.0
}

fn default_limit() -> usize {
    9
}

fn default_normalizer() -> DistanceNormalizer {
    DistanceNormalizer::MaxPairwise
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub waypoints: Vec<WaypointDoc>,
    pub edges: Vec<EdgeDoc>,
    pub objects: Vec<ObjectDoc>,
    #[serde(default)]
    pub rooms: Vec<RoomDoc>,
    pub ground_truth: GroundTruthDoc,
    #[serde(default)]
    pub perception: PerceptionModel,
    #[serde(default)]
    pub scorer: ScorerDoc,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planner: Option<PlannerDoc>,
    /// `"room|target" -> nonnegative score`, plus optional `"default"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room_scores: Option<BTreeMap<String, f64>>,
    /// Declared embedding vectors per label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<BTreeMap<String, Vec<f64>>>,
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub env: Environment,
    pub truth: GroundTruth,
    pub params: SimulationParams,
    pub scorer_kind: ScorerKind,
    pub affinity_table: Option<AffinityTable>,
    pub planner: PlannerConfig,
    pub room_scores: Option<RoomScoreTable>,
    pub embeddings: Option<TableEmbedder>,
}

pub fn load_scenario(document: &str) -> Result<Scenario, ScenarioError> {
    let doc: ScenarioDocument = serde_json::from_str(document)?;
    Scenario::from_document(doc)
}

pub fn load_scenario_file(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_scenario(&text)
}

/// A standalone affinity table document: `{"seen|target": value, "default": value}`.
pub fn load_affinity_table(document: &str) -> Result<AffinityTable, ScenarioError> {
    let map: BTreeMap<String, f64> = serde_json::from_str(document)?;
    Ok(AffinityTable::from_map(&map)?)
}

impl Scenario {
    pub fn from_document(doc: ScenarioDocument) -> Result<Self, ScenarioError> {
        let waypoints = doc
            .waypoints
            .into_iter()
            .map(|w| Waypoint { id: w.id, x: w.x, y: w.y })
            .collect();
        let edges = doc
            .edges
            .into_iter()
            .map(|e| EdgeInput { a: e.a, b: e.b, length: e.length })
            .collect();
        let objects = doc
            .objects
            .into_iter()
            .map(|o| SeenObject {
                instance_id: o.instance_id,
                label: o.label,
                waypoint: o.waypoint,
            })
            .collect();
        let rooms = doc
            .rooms
            .into_iter()
            .map(|r| Room {
                name: r.name,
                waypoints: r.waypoints.into_iter().collect(),
            })
            .collect();
        let env = Environment::new(waypoints, edges, objects, rooms)?;
        let truth = GroundTruth {
            target_label: doc.ground_truth.target_label,
            host_object: doc.ground_truth.host_object,
        };
        env.validate_truth(&truth)?;

        let search = doc.search.unwrap_or(SearchDoc {
            epsilon: default_epsilon(),
            lost_threshold: default_lost_threshold(),
        });
        let params = SimulationParams {
            epsilon: search.epsilon,
            lost_threshold: search.lost_threshold,
            perception: doc.perception,
            seed: doc.seed,
        };
        params.validate()?;

        let affinity_table = doc.scorer.table.as_ref().map(AffinityTable::from_map).transpose()?;
        if doc.scorer.kind == ScorerKind::Table && affinity_table.is_none() {
            return Err(ScenarioError::Invalid("scorer kind `table` requires `scorer.table`".into()));
        }

        let planner = doc
            .planner
            .map(|p| PlannerConfig {
                score_weight: p.score_weight,
                exhaustive_limit: p.exhaustive_limit,
                distance_normalizer: p.distance_normalizer,
            })
            .unwrap_or_default();
        planner.validate()?;

        let room_scores = doc.room_scores.as_ref().map(RoomScoreTable::from_map).transpose()?;
        let embeddings = doc.embeddings.as_ref().map(TableEmbedder::new).transpose()?;

        Ok(Self {
            env,
            truth,
            params,
            scorer_kind: doc.scorer.kind,
            affinity_table,
            planner,
            room_scores,
            embeddings,
        })
    }

    /// Serializes back to a document. Edge lengths are written explicitly.
    pub fn to_document(&self) -> ScenarioDocument {
        let env = &self.env;
        ScenarioDocument {
            waypoints: env
                .waypoints()
                .iter()
                .map(|w| WaypointDoc { id: w.id.clone(), x: w.x, y: w.y })
                .collect(),
            edges: env
                .edges()
                .iter()
                .map(|e| EdgeDoc {
                    a: e.a.clone(),
                    b: e.b.clone(),
                    length: Some(e.length),
                })
                .collect(),
            objects: env
                .objects()
                .iter()
                .map(|o| ObjectDoc {
                    instance_id: o.instance_id.clone(),
                    label: o.label.clone(),
                    waypoint: o.waypoint.clone(),
                })
                .collect(),
            rooms: env
                .rooms()
                .iter()
                .map(|r| RoomDoc {
                    name: r.name.clone(),
                    waypoints: r.waypoints.iter().cloned().collect(),
                })
                .collect(),
            ground_truth: GroundTruthDoc {
                target_label: self.truth.target_label.clone(),
                host_object: self.truth.host_object.clone(),
            },
            perception: self.params.perception,
            scorer: ScorerDoc {
                kind: self.scorer_kind,
                table: self.affinity_table.as_ref().map(AffinityTable::to_map),
            },
            seed: self.params.seed,
            search: Some(SearchDoc {
                epsilon: self.params.epsilon,
                lost_threshold: self.params.lost_threshold,
            }),
            planner: Some(PlannerDoc {
                score_weight: self.planner.score_weight,
                exhaustive_limit: self.planner.exhaustive_limit,
                distance_normalizer: self.planner.distance_normalizer,
            }),
            room_scores: self.room_scores.as_ref().map(RoomScoreTable::to_map),
            embeddings: self.embeddings.as_ref().map(|e| e.vectors().clone()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("scenario serializes")
    }

    /// Seen labels as they appear on objects, deduplicated after normalization.
    pub fn seen_labels(&self) -> Vec<String> {
        self.env.label_counts().into_keys().collect()
    }

    pub fn room_names(&self) -> Vec<String> {
        self.env.rooms().iter().map(|r| r.name.clone()).collect()
    }
}
