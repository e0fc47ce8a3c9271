//! Seeded multi-trial runs and paired method comparisons.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::affinity::{
    score_distribution, AffinityDistribution, AffinityError, AffinityScorer, LlmScorer, TableScorer,
};
use crate::baselines::{
    self, BaselineError, EmbeddingProvider, FallbackEmbedder, HashEmbedder, LlmRoomScorer,
    RoomDistribution, RoomScorer, SimilarityRanking,
};
use crate::llm_gateway::Gateway;
use crate::env_graph::GroundTruth;
use crate::metrics::{BatchReport, EpisodeRow, FailurePe, MetricsError};
use crate::planner::{self, PlanError, PlannerConfig, SearchPlan, WaypointScores};
use crate::scenario::{Scenario, ScorerKind};
use crate::search_sim::{self, EpisodeResult, SimError, SimulationParams};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Affinity(#[from] AffinityError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("unknown method `{0}` (expected losae, room_search, hottest_object or hottest_waypoint)")]
    UnknownMethod(String),
    #[error("room search needs a room scorer")]
    NoRoomScorer,
    #[error("trials must be at least 1")]
    NoTrials,
    #[error("table scorer selected but the scenario has no affinity table")]
    NoAffinityTable,
    #[error("llm scorer selected but no gateway was configured")]
    NoGateway,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Losae,
    RoomSearch,
    HottestObject,
    HottestWaypoint,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Losae,
        Method::RoomSearch,
        Method::HottestObject,
        Method::HottestWaypoint,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Losae => "losae",
            Method::RoomSearch => "room_search",
            Method::HottestObject => "hottest_object",
            Method::HottestWaypoint => "hottest_waypoint",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Method::Losae => "LOSAE",
            Method::RoomSearch => "Room Search",
            Method::HottestObject => "Hottest Object",
            Method::HottestWaypoint => "Hottest Waypoint",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = RunError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().replace('-', "_").as_str() {
            "losae" => Ok(Method::Losae),
            "room_search" | "room" => Ok(Method::RoomSearch),
            "hottest_object" => Ok(Method::HottestObject),
            "hottest_waypoint" => Ok(Method::HottestWaypoint),
            _ => Err(RunError::UnknownMethod(s.to_string())),
        }
    }
}

/// One sampled (start, host) pair. Every method in a comparison receives the
/// same trials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub index: usize,
    pub start: String,
    pub host_object: String,
    pub episode_seed: u64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Uniform start waypoint and uniform host instance per trial.
pub fn sample_trials(scenario: &Scenario, trials: usize, seed: u64) -> Vec<Trial> {
    let env = &scenario.env;
    let mut starts: Vec<&str> = env.waypoints().iter().map(|w| w.id.as_str()).collect();
    starts.sort_unstable();
    let mut hosts: Vec<&str> = env.objects().iter().map(|o| o.instance_id.as_str()).collect();
    hosts.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials)
        .map(|index| Trial {
            index,
            start: starts[rng.gen_range(0..starts.len())].to_string(),
            host_object: hosts[rng.gen_range(0..hosts.len())].to_string(),
            episode_seed: splitmix64(seed ^ splitmix64(index as u64)),
        })
        .collect()
}

/// Scorers used by a run.
pub struct Scorers {
    pub affinity: Box<dyn AffinityScorer>,
    pub rooms: Option<Box<dyn RoomScorer>>,
    pub embedder: Box<dyn EmbeddingProvider>,
}

impl Scorers {
    /// Scorers for a scenario. The table kind reads the scenario's affinity
    /// table; the llm kind needs a gateway. Room scores and embeddings come
    /// from the scenario when declared, otherwise from the gateway (llm) or,
    /// for embeddings, the trigram hash.
    pub fn for_scenario(scenario: &Scenario, kind: ScorerKind, gateway: Option<Arc<Gateway>>) -> Result<Self, RunError> {
        let affinity: Box<dyn AffinityScorer> = match kind {
            ScorerKind::Table => Box::new(TableScorer::new(
                scenario.affinity_table.clone().ok_or(RunError::NoAffinityTable)?,
            )),
            ScorerKind::Llm => Box::new(LlmScorer::new(gateway.clone().ok_or(RunError::NoGateway)?)),
        };
        let rooms: Option<Box<dyn RoomScorer>> = match (&scenario.room_scores, &gateway) {
            (Some(table), _) => Some(Box::new(table.clone())),
            (None, Some(gw)) if kind == ScorerKind::Llm => Some(Box::new(LlmRoomScorer::new(gw.clone()))),
            _ => None,
        };
        let embedder: Box<dyn EmbeddingProvider> = match &scenario.embeddings {
            Some(table) => Box::new(FallbackEmbedder {
                primary: table.clone(),
                fallback: HashEmbedder::default(),
            }),
            None => Box::new(HashEmbedder::default()),
        };
        Ok(Self {
            affinity,
            rooms,
            embedder,
        })
    }
}

/// Everything that depends only on the target label, computed once per run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub distribution: AffinityDistribution,
    pub scores: WaypointScores,
    pub rooms: Option<(RoomDistribution, SimilarityRanking)>,
}

pub struct Runner<'a> {
    pub scenario: &'a Scenario,
    pub scorers: &'a Scorers,
    pub planner: PlannerConfig,
    pub params: SimulationParams,
    pub target: String,
    pub failure_pe: FailurePe,
}

impl<'a> Runner<'a> {
    pub fn new(scenario: &'a Scenario, scorers: &'a Scorers) -> Self {
        Self {
            scenario,
            scorers,
            planner: scenario.planner,
            params: scenario.params,
            target: scenario.truth.target_label.clone(),
            failure_pe: FailurePe::default(),
        }
    }

    pub fn distribution(&self) -> Result<AffinityDistribution, RunError> {
        Ok(score_distribution(
            self.scorers.affinity.as_ref(),
            &self.scenario.seen_labels(),
            &self.target,
        )?)
    }

    pub fn prepare(&self, methods: &[Method]) -> Result<Prepared, RunError> {
        let distribution = self.distribution()?;
        let scores = planner::waypoint_scores(&self.scenario.env, &distribution)?;
        let rooms = if methods.contains(&Method::RoomSearch) {
            let scorer = self.scorers.rooms.as_deref().ok_or(RunError::NoRoomScorer)?;
            let dist = baselines::room_scores(scorer, &self.scenario.room_names(), &self.target)?;
            let ranking = baselines::similarity_rank(
                self.scorers.embedder.as_ref(),
                &self.scenario.seen_labels(),
                &self.target,
            )?;
            Some((dist, ranking))
        } else {
            None
        };
        Ok(Prepared {
            distribution,
            scores,
            rooms,
        })
    }

    pub fn plan(&self, prepared: &Prepared, method: Method, start: &str) -> Result<SearchPlan, RunError> {
        let env = &self.scenario.env;
        Ok(match method {
            Method::Losae => planner::plan(env, start, &prepared.scores, &self.planner)?,
            Method::RoomSearch => {
                let (dist, ranking) = prepared.rooms.as_ref().ok_or(RunError::NoRoomScorer)?;
                baselines::plan_room_search(env, dist, start, &self.planner, ranking)?
            }
            Method::HottestObject => {
                baselines::hottest_object_plan(env, &prepared.distribution, start, &self.planner)?
            }
            Method::HottestWaypoint => {
                baselines::hottest_waypoint_plan(env, &prepared.scores, start, &self.planner)?
            }
        })
    }

    pub fn run_trial(&self, prepared: &Prepared, method: Method, trial: &Trial) -> Result<(SearchPlan, EpisodeResult), RunError> {
        let plan = self.plan(prepared, method, &trial.start)?;
        let truth = GroundTruth {
            target_label: self.target.clone(),
            host_object: trial.host_object.clone(),
        };
        let params = SimulationParams {
            seed: trial.episode_seed,
            ..self.params
        };
        let result = search_sim::run_episode_seeded(&self.scenario.env, &plan, &truth, &params)?;
        Ok((plan, result))
    }

    /// Runs every trial for one method. Per-trial failures become error rows.
    pub fn run_batch(&self, prepared: Result<&Prepared, &RunError>, method: Method, trials: &[Trial]) -> Result<MethodRun, RunError> {
        if trials.is_empty() {
            return Err(RunError::NoTrials);
        }
        let mut rows = Vec::with_capacity(trials.len());
        let mut episodes = Vec::with_capacity(trials.len());
        for t in trials {
            let outcome = match prepared {
                Ok(p) => self.run_trial(p, method, t).map_err(|e| e.to_string()),
                Err(e) => Err(e.to_string()),
            };
            match outcome {
                Ok((_, result)) => {
                    rows.push(EpisodeRow::from_result(method.as_str(), t.index, &t.host_object, &result, self.failure_pe)?);
                    episodes.push((t.index, Some(result)));
                }
                Err(msg) => {
                    log::error!("{method} trial {}: {msg}", t.index);
                    rows.push(EpisodeRow::from_error(
                        method.as_str(),
                        t.index,
                        &t.start,
                        &t.host_object,
                        t.episode_seed,
                        msg,
                    ));
                    episodes.push((t.index, None));
                }
            }
        }
        Ok(MethodRun {
            method,
            report: BatchReport::from_rows(method.as_str(), rows)?,
            episodes,
        })
    }

    /// Paired comparison: all methods over the same sampled trials.
    pub fn bench(&self, methods: &[Method], trials: usize, seed: u64) -> Result<Vec<MethodRun>, RunError> {
        if trials == 0 {
            return Err(RunError::NoTrials);
        }
        let sampled = sample_trials(self.scenario, trials, seed);
        let prepared = self.prepare(methods);
        if let Err(e) = &prepared {
            log::error!("scoring failed: {e}");
        }
        methods
            .iter()
            .map(|&m| self.run_batch(prepared.as_ref(), m, &sampled))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: Method,
    pub report: BatchReport,
    /// Per-trial episode results in trial order; `None` for errored trials.
    pub episodes: Vec<(usize, Option<EpisodeResult>)>,
}

impl MethodRun {
    pub fn has_errors(&self) -> bool {
        self.report.summary.errors > 0
    }
}
