//! Discrete execution of a search plan against ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env_graph::{Environment, GraphError, GroundTruth, SeenObject};
use crate::metrics;
use crate::planner::SearchPlan;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid simulation parameters: {0}")]
    InvalidParams(String),
}

/// Post-threshold detection rates of the perception stack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerceptionModel {
    #[serde(default = "one")]
    pub true_positive_rate: f64,
    #[serde(default)]
    pub false_positive_rate: f64,
    /// Informational; the rates already account for it.
    #[serde(default = "default_confidence")]
    pub confidence_threshold: f64,
}

fn one() -> f64 {
    1.0
}

fn default_confidence() -> f64 {
    0.8
}

impl Default for PerceptionModel {
    fn default() -> Self {
        Self::perfect()
    }
}

impl PerceptionModel {
    pub fn perfect() -> Self {
        Self {
            true_positive_rate: 1.0,
            false_positive_rate: 0.0,
            confidence_threshold: 0.8,
        }
    }

    pub fn noisy(true_positive_rate: f64, false_positive_rate: f64) -> Self {
        Self {
            true_positive_rate,
            false_positive_rate,
            ..Self::perfect()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [
            ("true_positive_rate", self.true_positive_rate),
            ("false_positive_rate", self.false_positive_rate),
            ("confidence_threshold", self.confidence_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SimError::InvalidParams(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationParams {
    /// Success radius in meters. Reaching the host's waypoint with a
    /// true-positive detection counts as being within it.
    pub epsilon: f64,
    pub lost_threshold: f64,
    pub perception: PerceptionModel,
    pub seed: u64,
}

impl Default for SimulationParams {
    fn default() -> Self {
        Self {
            epsilon: 0.5,
            lost_threshold: 0.95,
            perception: PerceptionModel::perfect(),
            seed: 0,
        }
    }
}

impl SimulationParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(SimError::InvalidParams(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.lost_threshold > 0.0 && self.lost_threshold <= 1.0) {
            return Err(SimError::InvalidParams(format!(
                "lost_threshold must be in (0, 1], got {}",
                self.lost_threshold
            )));
        }
        self.perception.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Found,
    /// Committed to a false-positive detection.
    FoundFalse,
    /// Lost-probability threshold crossed without a detection.
    Lost,
    /// Plan ran out before either rule fired.
    Exhausted,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Found => "found",
            Outcome::FoundFalse => "found_false",
            Outcome::Lost => "lost",
            Outcome::Exhausted => "exhausted",
        }
    }

    pub fn is_success(self) -> bool {
        self == Outcome::Found
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "instance", rename_all = "snake_case")]
pub enum DetectionOutcome {
    TruePositive(String),
    FalsePositive(String),
    NoDetection,
}

/// Inspects objects in the given order, one independent draw each, and
/// returns the first triggered event.
pub fn inspect<R: Rng + ?Sized>(
    objects: &[&SeenObject],
    truth: &GroundTruth,
    perception: &PerceptionModel,
    rng: &mut R,
) -> DetectionOutcome {
    for o in objects {
        let draw: f64 = rng.gen();
        if o.instance_id == truth.host_object {
            if draw < perception.true_positive_rate {
                return DetectionOutcome::TruePositive(o.instance_id.clone());
            }
        } else if draw < perception.false_positive_rate {
            return DetectionOutcome::FalsePositive(o.instance_id.clone());
        }
    }
    DetectionOutcome::NoDetection
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepTrace {
    pub waypoint: String,
    pub leg_meters: f64,
    pub traversed: f64,
    /// Probability consumed after this waypoint's inspections.
    pub consumed: f64,
    pub inspected: Vec<String>,
    pub detection: DetectionOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeResult {
    pub outcome: Outcome,
    pub start: String,
    pub host_waypoint: String,
    pub traversed_length: f64,
    pub ideal_length: f64,
    pub consumed: f64,
    pub total_mass: f64,
    pub steps: Vec<StepTrace>,
    pub seed: u64,
}

impl EpisodeResult {
    pub fn success(&self) -> bool {
        self.outcome.is_success()
    }
}

/// Consumed mass this close below the threshold still counts as crossing it.
const MASS_TOLERANCE: f64 = 1e-12;

/// Walks the plan in order and stops at the first detection, when the
/// consumed probability reaches the lost threshold, or at the end of the plan.
pub fn run_episode<R: Rng + ?Sized>(
    env: &Environment,
    plan: &SearchPlan,
    truth: &GroundTruth,
    params: &SimulationParams,
    rng: &mut R,
) -> Result<EpisodeResult, SimError> {
    params.validate()?;
    let host_waypoint = env.object(&truth.host_object)?.waypoint.clone();
    let ideal_length = metrics::ideal_length(env, &plan.start, truth)?;
    let mut prev = env.index_of(&plan.start)?;
    // validate the whole plan up front
    for s in &plan.steps {
        env.index_of(&s.waypoint)?;
    }

    let lost_at = params.lost_threshold * plan.total_mass;
    let mut traversed = 0.0;
    let mut consumed: f64 = 0.0;
    let mut steps = Vec::new();
    let mut outcome = Outcome::Exhausted;
    for step in &plan.steps {
        let idx = env.index_of(&step.waypoint)?;
        let leg = env.distance_idx(prev, idx);
        traversed += leg;
        prev = idx;

        let objects = env.objects_at_idx(idx);
        let detection = inspect(&objects, truth, &params.perception, rng);
        let ended = match &detection {
            DetectionOutcome::TruePositive(_) => Some(Outcome::Found),
            DetectionOutcome::FalsePositive(_) => Some(Outcome::FoundFalse),
            DetectionOutcome::NoDetection => {
                consumed = (consumed + step.score).min(plan.total_mass);
                (consumed >= lost_at - MASS_TOLERANCE).then_some(Outcome::Lost)
            }
        };
        steps.push(StepTrace {
            waypoint: step.waypoint.clone(),
            leg_meters: leg,
            traversed,
            consumed,
            inspected: objects.iter().map(|o| o.instance_id.clone()).collect(),
            detection,
        });
        if let Some(o) = ended {
            outcome = o;
            break;
        }
    }

    Ok(EpisodeResult {
        outcome,
        start: plan.start.clone(),
        host_waypoint,
        traversed_length: traversed,
        ideal_length,
        consumed,
        total_mass: plan.total_mass,
        steps,
        seed: params.seed,
    })
}

/// `run_episode` with a generator seeded from `params.seed`.
pub fn run_episode_seeded(
    env: &Environment,
    plan: &SearchPlan,
    truth: &GroundTruth,
    params: &SimulationParams,
) -> Result<EpisodeResult, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    run_episode(env, plan, truth, params, &mut rng)
}
