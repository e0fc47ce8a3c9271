//! Semantic affinity between seen objects and an unseen target.
//!
//! Each seen label is queried on its own. The scorer returns either the
//! completion's token log-probabilities (LLM path) or a raw affinity value
//! (table path). Log-probabilities are collapsed to `exp(mean(logprobs))`
//! and the raw values are normalized into a distribution over labels.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use crate::env_graph::Environment;
use crate::llm_gateway::{CompletionRequest, Gateway, GatewayError};

pub const SYSTEM_PROMPT: &str = "You are an expert object location reasoning robot. You will be given some seen objects and a target object. You need to output which is the best seen object to go to in order to find the target object. You may only use the seen objects for reasoning, and must output a seen object to go to.";

/// Raw scores below this floor are treated as zero.
pub const RAW_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum AffinityError {
    #[error("empty label")]
    EmptyLabel,
    #[error("completion returned no tokens")]
    EmptyTokens,
    #[error("no labels to score")]
    NoLabels,
    #[error("no affinity for pair ({seen}, {target}) and no default")]
    MissingPair { seen: String, target: String },
    #[error("label `{0}` has no probability in the distribution")]
    MissingLabel(String),
    #[error("invalid affinity value {value} for `{key}`")]
    InvalidValue { key: String, value: f64 },
    #[error("malformed affinity table key `{0}` (expected `seen|target`)")]
    MalformedKey(String),
    #[error("scoring `{label}` failed: {source}")]
    ScorerFailed {
        label: String,
        #[source]
        source: Box<AffinityError>,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Labels are compared case-insensitively after trimming.
pub fn normalize_label(label: &str) -> String {
    label.trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPair {
    pub system_text: String,
    pub user_text: String,
}

pub fn build_prompt(seen_label: &str, target_label: &str) -> Result<PromptPair, AffinityError> {
    if seen_label.is_empty() || target_label.is_empty() {
        return Err(AffinityError::EmptyLabel);
    }
    Ok(PromptPair {
        system_text: SYSTEM_PROMPT.to_string(),
        user_text: format!("I see the following: {seen_label}. Where should I go to find {target_label}?"),
    })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TokenLogprobs {
    pub tokens: Vec<TokenLogprob>,
}

impl TokenLogprobs {
    pub fn from_values(values: &[f64]) -> Self {
        Self {
            tokens: values
                .iter()
                .map(|&logprob| TokenLogprob {
                    token: String::new(),
                    logprob,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// `exp` of the arithmetic mean of the token log-probabilities. Every
/// returned completion token takes part, whitespace and stop tokens included.
pub fn aggregate_logprobs(logprobs: &TokenLogprobs) -> Result<f64, AffinityError> {
    if logprobs.is_empty() {
        return Err(AffinityError::EmptyTokens);
    }
    let sum: f64 = logprobs.tokens.iter().map(|t| t.logprob).sum();
    Ok((sum / logprobs.len() as f64).exp())
}

/// What a scorer hands back for one (seen, target) query.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreOutcome {
    Logprobs {
        logprobs: TokenLogprobs,
        answer: String,
    },
    Raw(f64),
}

impl ScoreOutcome {
    pub fn raw_value(&self) -> Result<f64, AffinityError> {
        match self {
            ScoreOutcome::Logprobs { logprobs, .. } => aggregate_logprobs(logprobs),
            ScoreOutcome::Raw(v) => Ok(*v),
        }
    }
}

pub trait AffinityScorer: Send + Sync {
    fn score(&self, seen_label: &str, target_label: &str) -> Result<ScoreOutcome, AffinityError>;

    /// Upper bound on concurrent `score` calls issued by `score_distribution`.
    fn max_concurrency(&self) -> usize {
        1
    }
}

/// Pairwise affinity values in `[0, 1]` keyed by normalized (seen, target).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffinityTable {
    pairs: BTreeMap<(String, String), f64>,
    default: Option<f64>,
}

impl AffinityTable {
    pub fn new(default: Option<f64>) -> Self {
        Self {
            pairs: BTreeMap::new(),
            default,
        }
    }

    pub fn insert(&mut self, seen: &str, target: &str, value: f64) {
        self.pairs
            .insert((normalize_label(seen), normalize_label(target)), value);
    }

    /// Builds a table from `"seen|target" -> value` entries plus an optional
    /// `"default"` key.
    pub fn from_map(map: &BTreeMap<String, f64>) -> Result<Self, AffinityError> {
        let mut table = Self::default();
        for (key, &value) in map {
            if !(value.is_finite() && (0.0..=1.0).contains(&value)) {
                return Err(AffinityError::InvalidValue {
                    key: key.clone(),
                    value,
                });
            }
            if key == "default" {
                table.default = Some(value);
                continue;
            }
            let (seen, target) = key
                .split_once('|')
                .ok_or_else(|| AffinityError::MalformedKey(key.clone()))?;
            if seen.trim().is_empty() || target.trim().is_empty() {
                return Err(AffinityError::MalformedKey(key.clone()));
            }
            table.insert(seen, target, value);
        }
        Ok(table)
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        let mut map: BTreeMap<String, f64> = self
            .pairs
            .iter()
            .map(|((s, t), &v)| (format!("{s}|{t}"), v))
            .collect();
        if let Some(d) = self.default {
            map.insert("default".into(), d);
        }
        map
    }

    pub fn default_value(&self) -> Option<f64> {
        self.default
    }

    pub fn get(&self, seen: &str, target: &str) -> Result<f64, AffinityError> {
        let key = (normalize_label(seen), normalize_label(target));
        self.pairs
            .get(&key)
            .copied()
            .or(self.default)
            .ok_or(AffinityError::MissingPair {
                seen: key.0,
                target: key.1,
            })
    }
}

/// Deterministic stand-in for the LLM.
#[derive(Debug, Clone)]
pub struct TableScorer {
    table: AffinityTable,
}

impl TableScorer {
    pub fn new(table: AffinityTable) -> Self {
        Self { table }
    }

    pub fn table(&self) -> &AffinityTable {
        &self.table
    }
}

impl AffinityScorer for TableScorer {
    fn score(&self, seen_label: &str, target_label: &str) -> Result<ScoreOutcome, AffinityError> {
        if seen_label.trim().is_empty() || target_label.trim().is_empty() {
            return Err(AffinityError::EmptyLabel);
        }
        self.table.get(seen_label, target_label).map(ScoreOutcome::Raw)
    }
}

/// Queries a chat-completions endpoint with the location-reasoning prompts.
pub struct LlmScorer {
    gateway: Arc<Gateway>,
    model: String,
    temperature: f64,
    max_tokens: u32,
}

impl LlmScorer {
    pub fn new(gateway: Arc<Gateway>) -> Self {
        let model = gateway.config().model.clone();
        Self {
            gateway,
            model,
            temperature: 0.0,
            max_tokens: crate::llm_gateway::DEFAULT_MAX_TOKENS,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }
}

impl AffinityScorer for LlmScorer {
    fn score(&self, seen_label: &str, target_label: &str) -> Result<ScoreOutcome, AffinityError> {
        let prompt = build_prompt(seen_label, target_label)?;
        let request = CompletionRequest::new(&self.model, prompt.system_text, prompt.user_text)
            .with_temperature(self.temperature)
            .with_max_tokens(self.max_tokens);
        let result = self.gateway.complete(&request)?;
        if result.token_logprobs.is_empty() {
            return Err(AffinityError::EmptyTokens);
        }
        Ok(ScoreOutcome::Logprobs {
            logprobs: result.token_logprobs,
            answer: result.answer_text,
        })
    }

    fn max_concurrency(&self) -> usize {
        self.gateway.config().max_in_flight
    }
}

/// Normalized `p(target | seen label)` over a set of unique seen labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityDistribution {
    pub target_label: String,
    pub entries: BTreeMap<String, f64>,
    pub raw: BTreeMap<String, f64>,
    /// Textual LLM answers, kept for diagnostics only.
    pub answers: BTreeMap<String, String>,
    /// True when every raw score fell below the floor and the uniform
    /// distribution was substituted.
    pub uniform_fallback: bool,
}

impl AffinityDistribution {
    /// Normalizes raw per-label scores.
    pub fn from_raw(target_label: &str, raw: BTreeMap<String, f64>) -> Result<Self, AffinityError> {
        if raw.is_empty() {
            return Err(AffinityError::NoLabels);
        }
        for (k, &v) in &raw {
            if !(v.is_finite() && v >= 0.0) {
                return Err(AffinityError::InvalidValue {
                    key: k.clone(),
                    value: v,
                });
            }
        }
        let uniform_fallback = raw.values().all(|&v| v < RAW_FLOOR);
        let entries = if uniform_fallback {
            log::warn!(
                "all raw affinities for `{target_label}` are below {RAW_FLOOR:e}; using a uniform distribution"
            );
            let p = 1.0 / raw.len() as f64;
            raw.keys().map(|k| (k.clone(), p)).collect()
        } else {
            let total: f64 = raw.values().sum();
            raw.iter().map(|(k, &v)| (k.clone(), v / total)).collect()
        };
        Ok(Self {
            target_label: normalize_label(target_label),
            entries,
            raw,
            answers: BTreeMap::new(),
            uniform_fallback,
        })
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.entries.get(&normalize_label(label)).copied()
    }

    pub fn total(&self) -> f64 {
        self.entries.values().sum()
    }

    /// Entries sorted by probability, highest first; ties by label.
    pub fn ranked(&self) -> Vec<(&str, f64)> {
        let mut v: Vec<_> = self.entries.iter().map(|(k, &p)| (k.as_str(), p)).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        v
    }

    /// Per-instance probabilities: a label's mass is split evenly across
    /// the object instances that carry it, so the total stays 1.
    pub fn instance_probabilities(
        &self,
        env: &Environment,
    ) -> Result<BTreeMap<String, f64>, AffinityError> {
        let counts = env.label_counts();
        let mut out = BTreeMap::new();
        for o in env.objects() {
            let label = normalize_label(&o.label);
            let p = self
                .entries
                .get(&label)
                .ok_or_else(|| AffinityError::MissingLabel(label.clone()))?;
            out.insert(o.instance_id.clone(), p / counts[&label] as f64);
        }
        Ok(out)
    }
}

/// One scorer query per unique seen label, then normalization.
///
/// Queries may run concurrently (bounded by the scorer's
/// `max_concurrency`); results are assembled by label so the output does not
/// depend on completion order.
pub fn score_distribution(
    scorer: &dyn AffinityScorer,
    seen_labels: &[String],
    target_label: &str,
) -> Result<AffinityDistribution, AffinityError> {
    if target_label.trim().is_empty() {
        return Err(AffinityError::EmptyLabel);
    }
    let labels: Vec<String> = seen_labels
        .iter()
        .map(|l| normalize_label(l))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if labels.is_empty() {
        return Err(AffinityError::NoLabels);
    }
    if labels.iter().any(|l| l.is_empty()) {
        return Err(AffinityError::EmptyLabel);
    }
    let target = normalize_label(target_label);

    let workers = scorer.max_concurrency().clamp(1, labels.len());
    let mut outcomes: Vec<Option<Result<ScoreOutcome, AffinityError>>> =
        (0..labels.len()).map(|_| None).collect();
    if workers == 1 {
        for (slot, label) in outcomes.iter_mut().zip(&labels) {
            *slot = Some(scorer.score(label, &target));
        }
    } else {
        let chunk = labels.len().div_ceil(workers);
        std::thread::scope(|s| {
            for (slots, names) in outcomes.chunks_mut(chunk).zip(labels.chunks(chunk)) {
                let target = &target;
                s.spawn(move || {
                    for (slot, label) in slots.iter_mut().zip(names) {
                        *slot = Some(scorer.score(label, target));
                    }
                });
            }
        });
    }

    let mut raw = BTreeMap::new();
    let mut answers = BTreeMap::new();
    for (label, outcome) in labels.into_iter().zip(outcomes) {
        let wrap = |e: AffinityError| AffinityError::ScorerFailed {
            label: label.clone(),
            source: Box::new(e),
        };
        let outcome = outcome.expect("every label is scored").map_err(wrap)?;
        let value = outcome.raw_value().map_err(wrap)?;
        if let ScoreOutcome::Logprobs { answer, .. } = outcome {
            answers.insert(label.clone(), answer);
        }
        raw.insert(label, value);
    }
    let mut dist = AffinityDistribution::from_raw(&target, raw)?;
    dist.answers = answers;
    Ok(dist)
}
