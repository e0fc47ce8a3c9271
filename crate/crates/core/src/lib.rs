//! Language-guided object search on waypoint graphs.
//!
//! Seen objects are scored for their affinity to an unseen target from the
//! token log-probabilities of a chat model (or a fixed table), the scores are
//! summed per waypoint, and a visiting order is chosen that trades travel
//! distance against reaching probable waypoints early. Episodes are simulated
//! under a parametric perception model and scored with SR, SPL and path
//! efficiency against room-level and argmax baselines.

pub mod affinity;
pub mod baselines;
pub mod env_graph;
pub mod llm_gateway;
pub mod metrics;
pub mod planner;
pub mod report;
pub mod runner;
pub mod scenario;
pub mod search_sim;

pub use affinity::{AffinityDistribution, AffinityScorer, TableScorer};
pub use env_graph::{Environment, GroundTruth};
pub use planner::{PlannerConfig, SearchPlan, WaypointScores};
pub use runner::{Method, Runner, Scorers};
pub use scenario::{load_scenario, load_scenario_file, Scenario};
pub use search_sim::{EpisodeResult, Outcome, SimulationParams};
