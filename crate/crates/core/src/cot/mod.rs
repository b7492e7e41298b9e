//! Chain-of-thought collection and filtering.
//!
//! Each record goes through up to `T` attempts. An attempt asks the teacher
//! for an initial reasoning/report pair and then keeps applying randomly drawn
//! reflection strategies until a report passes the verifier or the attempt
//! holds `N` steps. The first verified attempt is reformatted into a single
//! chain, and an expert backend then decides whether the chain agrees with the
//! reference report.

mod backend;
mod http;
mod scripted;
mod synthetic;
mod templates;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{
    send_with_retry, BackendError, BackendFactory, ChatBackend, ExhaustedError, Message, Reply, RetryPolicy, Role,
};
pub use http::{HttpBackend, HttpConfig, API_KEY_ENV, DEFAULT_REPLY_POINTER};
pub use scripted::{Match, Script, ScriptRule, ScriptedBackend};
pub use synthetic::{SyntheticExpert, SyntheticTeacher, TeacherProfile};
pub use templates::{fill, PromptTemplates};

use crate::corpus::{parse_tagged_output, tokenize, CotRecord, SftRecord, TokenSequence, TraceEntry, TraceKind};
use crate::metrics::DfStats;
use crate::policy::derive_seed;
use crate::rewards::{precision_reward, RewardConfig};

#[derive(Debug, Error)]
pub enum CotError {
    #[error("invalid collection config: {0}")]
    InvalidConfig(String),
    #[error("backend failed: {0}")]
    Backend(#[from] ExhaustedError),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// The four reflection strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Explore,
    Backtrack,
    Verify,
    Correct,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Explore, Strategy::Backtrack, Strategy::Verify, Strategy::Correct];
}

impl From<Strategy> for TraceKind {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::Explore => TraceKind::Explore,
            Strategy::Backtrack => TraceKind::Backtrack,
            Strategy::Verify => TraceKind::Verify,
            Strategy::Correct => TraceKind::Correct,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectionConfig {
    /// Attempt budget `T`.
    pub max_attempts: usize,
    /// Steps per attempt `N`, counting the initial step.
    pub max_depth: usize,
    /// Verifier threshold on the precision reward.
    pub tau: f64,
    pub strategy_seed: u64,
    pub templates: PromptTemplates,
    pub retry: RetryPolicy,
}

impl Default for CollectionConfig {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            max_depth: 3,
            tau: 0.35,
            strategy_seed: 0,
            templates: PromptTemplates::default(),
            retry: RetryPolicy::default(),
        }
    }
}

impl CollectionConfig {
    pub fn validate(&self) -> Result<(), CotError> {
        if self.max_attempts == 0 {
            return Err(CotError::InvalidConfig("max attempts must be at least 1".into()));
        }
        if self.max_depth == 0 {
            return Err(CotError::InvalidConfig("max depth must be at least 1".into()));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(CotError::InvalidConfig(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        Ok(())
    }
}

/// Reasoning/report pairs produced so far in the current attempt.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SearchState {
    pub history: Vec<(String, TokenSequence)>,
    /// 1-based attempt number.
    pub attempt: usize,
    /// Index of the latest step; the initial step has depth 0.
    pub depth: usize,
}

impl SearchState {
    pub fn new(attempt: usize, chain: String, answer: TokenSequence) -> Self {
        Self {
            history: vec![(chain, answer)],
            attempt,
            depth: 0,
        }
    }

    pub fn latest_answer(&self) -> Option<&TokenSequence> {
        self.history.last().map(|(_, y)| y)
    }
}

/// One parsed teacher reply.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReply {
    pub chain: String,
    pub answer: TokenSequence,
    pub raw: String,
    /// The reply did not follow the tagged format; `chain` holds the raw text
    /// and `answer` is empty.
    pub malformed: bool,
    pub retries: u32,
}

impl StepReply {
    fn parse(reply: Reply) -> Self {
        match parse_tagged_output(&reply.text) {
            Ok(t) => Self {
                chain: t.think.trim().to_string(),
                answer: tokenize(&t.answer),
                raw: reply.text,
                malformed: false,
                retries: reply.retries,
            },
            Err(_) => Self {
                chain: reply.text.clone(),
                answer: TokenSequence::empty(),
                raw: reply.text,
                malformed: true,
                retries: reply.retries,
            },
        }
    }
}

/// `step k: <think>e</think><answer>y</answer>` lines.
pub fn render_history(history: &[(String, TokenSequence)]) -> String {
    history
        .iter()
        .enumerate()
        .map(|(k, (e, y))| render_step(k, e, y))
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_step(k: usize, chain: &str, answer: &TokenSequence) -> String {
    format!("step {k}: <think>{chain}</think><answer>{}</answer>", answer.join())
}

fn ask(backend: &mut dyn ChatBackend, user: String, cfg: &CollectionConfig) -> Result<Reply, ExhaustedError> {
    let messages = [Message::system(cfg.templates.system.clone()), Message::user(user)];
    send_with_retry(backend, &messages, &cfg.retry)
}

/// Initial reasoning/report pair from the teacher, given the reference.
pub fn init_attempt(
    backend: &mut dyn ChatBackend,
    record: &SftRecord,
    record_id: usize,
    cfg: &CollectionConfig,
) -> Result<StepReply, ExhaustedError> {
    let context = record.context.describe();
    let reference = record.report.join();
    let id = record_id.to_string();
    let user = fill(
        &cfg.templates.init,
        &[
            ("record_id", &id),
            ("context", &context),
            ("prompt", &record.prompt),
            ("reference", &reference),
        ],
    );
    Ok(StepReply::parse(ask(backend, user, cfg)?))
}

/// Draws the next strategy from the attempt's RNG.
pub fn draw_strategy<R: Rng>(rng: &mut R) -> Strategy {
    Strategy::ALL[rng.gen_range(0..Strategy::ALL.len())]
}

/// Runs one reflection step and appends its result to `state.history`.
/// Returns the strategy actually applied: Backtrack without an earlier step
/// to return to falls back to Verify.
pub fn apply_strategy<R: Rng>(
    backend: &mut dyn ChatBackend,
    strategy: Strategy,
    state: &mut SearchState,
    record: &SftRecord,
    record_id: usize,
    cfg: &CollectionConfig,
    rng: &mut R,
) -> Result<(Strategy, StepReply), CotError> {
    if state.depth + 1 >= cfg.max_depth {
        return Err(CotError::InvalidConfig(format!(
            "attempt already holds {} of {} steps",
            state.depth + 1,
            cfg.max_depth
        )));
    }
    let i = state.history.len();
    let (strategy, backtrack) = match strategy {
        // a target j < i - 1 exists only from the third step on
        Strategy::Backtrack if i >= 2 => (Strategy::Backtrack, Some(rng.gen_range(0..i - 1))),
        Strategy::Backtrack => (Strategy::Verify, None),
        s => (s, None),
    };
    let context = record.context.describe();
    let history = render_history(&state.history);
    let (bt_index, bt_text) = match backtrack {
        Some(j) => (j.to_string(), render_step(j, &state.history[j].0, &state.history[j].1)),
        None => (String::new(), String::new()),
    };
    let user = fill(
        cfg.templates.for_strategy(strategy),
        &[
            ("record_id", &record_id.to_string()),
            ("context", &context),
            ("prompt", &record.prompt),
            ("history", &history),
            ("backtrack_index", &bt_index),
            ("backtrack", &bt_text),
        ],
    );
    let reply = StepReply::parse(ask(backend, user, cfg)?);
    state.history.push((reply.chain.clone(), reply.answer.clone()));
    state.depth += 1;
    Ok((strategy, reply))
}

/// Whether `candidate` scores at least `tau` against the reference under the
/// default precision-reward weights.
pub fn verify_candidate(candidate: &TokenSequence, reference: &TokenSequence, df: &DfStats, tau: f64) -> bool {
    candidate_score(candidate, reference, df) >= tau
}

fn candidate_score(candidate: &TokenSequence, reference: &TokenSequence, df: &DfStats) -> f64 {
    precision_reward(candidate, reference, df, &RewardConfig::default()).unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    /// No verified report within the attempt budget.
    Budget,
    /// The reformatted report no longer passed the verifier.
    ReformatRegression,
    Transport(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum CollectOutcome {
    Accepted {
        record: CotRecord,
        attempt: usize,
        depth: usize,
        retries: u32,
    },
    Discarded {
        reason: DiscardReason,
        trace: Vec<TraceEntry>,
        retries: u32,
    },
}

impl CollectOutcome {
    pub fn accepted(&self) -> Option<&CotRecord> {
        match self {
            CollectOutcome::Accepted { record, .. } => Some(record),
            CollectOutcome::Discarded { .. } => None,
        }
    }
}

/// Seed of the strategy stream for the `index`-th record of a run.
pub fn record_seed(strategy_seed: u64, index: usize) -> u64 {
    derive_seed(strategy_seed, &[index as u64])
}

/// Runs the attempt loop for one record on a fresh teacher connection.
pub fn collect_cot_record(
    teacher: &dyn BackendFactory,
    record: &SftRecord,
    index: usize,
    df: &DfStats,
    cfg: &CollectionConfig,
) -> CollectOutcome {
    let mut trace = Vec::new();
    let mut retries = 0;
    let mut backend = match teacher.connect() {
        Ok(b) => b,
        Err(e) => {
            return CollectOutcome::Discarded {
                reason: DiscardReason::Transport(e.to_string()),
                trace,
                retries,
            }
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(record_seed(cfg.strategy_seed, index));
    let reference = &record.report;
    let transport = |e: &dyn std::fmt::Display, trace: Vec<TraceEntry>, retries: u32| CollectOutcome::Discarded {
        reason: DiscardReason::Transport(e.to_string()),
        trace,
        retries,
    };

    for attempt in 1..=cfg.max_attempts {
        let first = match init_attempt(backend.as_mut(), record, index, cfg) {
            Ok(r) => r,
            Err(e) => return transport(&e, trace, retries + e.attempts - 1),
        };
        retries += first.retries;
        trace.push(TraceEntry {
            strategy: TraceKind::Init,
            text: first.raw.clone(),
        });
        let mut verified = verify_candidate(&first.answer, reference, df, cfg.tau);
        let mut state = SearchState::new(attempt, first.chain, first.answer);
        while !verified && state.depth + 1 < cfg.max_depth {
            let s = draw_strategy(&mut rng);
            match apply_strategy(backend.as_mut(), s, &mut state, record, index, cfg, &mut rng) {
                Ok((used, reply)) => {
                    retries += reply.retries;
                    trace.push(TraceEntry {
                        strategy: used.into(),
                        text: reply.raw,
                    });
                    verified = verify_candidate(&reply.answer, reference, df, cfg.tau);
                }
                Err(CotError::Backend(e)) => return transport(&e, trace, retries + e.attempts - 1),
                Err(e) => return transport(&e, trace, retries),
            }
        }
        if !verified {
            continue;
        }

        let context = record.context.describe();
        let user = fill(
            &cfg.templates.reformat,
            &[
                ("record_id", &index.to_string()),
                ("context", &context),
                ("prompt", &record.prompt),
                ("history", &render_history(&state.history)),
            ],
        );
        let reformatted = match ask(backend.as_mut(), user, cfg) {
            Ok(r) => StepReply::parse(r),
            Err(e) => return transport(&e, trace, retries + e.attempts - 1),
        };
        retries += reformatted.retries;
        let score = candidate_score(&reformatted.answer, reference, df);
        if reformatted.malformed || reformatted.chain.is_empty() || score < cfg.tau {
            return CollectOutcome::Discarded {
                reason: DiscardReason::ReformatRegression,
                trace,
                retries,
            };
        }
        return CollectOutcome::Accepted {
            record: CotRecord {
                context: record.context,
                chain: reformatted.chain,
                answer: reformatted.answer,
                trace,
                verified_score: score,
            },
            attempt,
            depth: state.depth,
            retries,
        };
    }
    CollectOutcome::Discarded {
        reason: DiscardReason::Budget,
        trace,
        retries,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Consistent,
    Inconsistent,
}

/// Finds exactly one verdict token (`CONSISTENT` or `INCONSISTENT`, upper
/// case, delimited by non-letters). Replies naming neither or both are
/// unparseable.
pub fn parse_verdict(reply: &str) -> Option<Verdict> {
    let mut found = None;
    for word in reply.split(|c: char| !c.is_ascii_alphabetic()) {
        let v = match word {
            "CONSISTENT" => Verdict::Consistent,
            "INCONSISTENT" => Verdict::Inconsistent,
            _ => continue,
        };
        match found {
            None => found = Some(v),
            Some(prev) if prev == v => {}
            Some(_) => return None,
        }
    }
    found
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterVerdict {
    Kept,
    DroppedInconsistent,
    DroppedUnparseable,
}

/// Asks the expert whether the chain and answer agree with the reference.
pub fn filter_cot_record(
    expert: &mut dyn ChatBackend,
    cot: &CotRecord,
    reference: &TokenSequence,
    record_id: usize,
    cfg: &CollectionConfig,
) -> Result<FilterVerdict, ExhaustedError> {
    let context = cot.context.describe();
    let id = record_id.to_string();
    let answer = cot.answer.join();
    let reference = reference.join();
    let user = fill(
        &cfg.templates.filter,
        &[
            ("record_id", &id),
            ("context", &context),
            ("chain", &cot.chain),
            ("answer", &answer),
            ("reference", &reference),
        ],
    );
    let reply = ask(expert, user, cfg)?;
    Ok(match parse_verdict(&reply.text) {
        Some(Verdict::Consistent) => FilterVerdict::Kept,
        Some(Verdict::Inconsistent) => FilterVerdict::DroppedInconsistent,
        None => FilterVerdict::DroppedUnparseable,
    })
}

/// Final status of one input record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Kept,
    DroppedInconsistent,
    DroppedUnparseable,
    DiscardedBudget,
    DiscardedTransport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AuditCounts {
    pub kept: usize,
    pub dropped_inconsistent: usize,
    pub dropped_unparseable: usize,
    pub discarded_budget: usize,
    pub discarded_transport: usize,
}

impl AuditCounts {
    pub fn record(&mut self, s: RecordStatus) {
        match s {
            RecordStatus::Kept => self.kept += 1,
            RecordStatus::DroppedInconsistent => self.dropped_inconsistent += 1,
            RecordStatus::DroppedUnparseable => self.dropped_unparseable += 1,
            RecordStatus::DiscardedBudget => self.discarded_budget += 1,
            RecordStatus::DiscardedTransport => self.discarded_transport += 1,
        }
    }

    pub fn merge(self, o: Self) -> Self {
        Self {
            kept: self.kept + o.kept,
            dropped_inconsistent: self.dropped_inconsistent + o.dropped_inconsistent,
            dropped_unparseable: self.dropped_unparseable + o.dropped_unparseable,
            discarded_budget: self.discarded_budget + o.discarded_budget,
            discarded_transport: self.discarded_transport + o.discarded_transport,
        }
    }

    pub fn total(&self) -> usize {
        self.kept + self.dropped_inconsistent + self.dropped_unparseable + self.discarded_budget + self.discarded_transport
    }

    pub fn from_statuses(statuses: &[RecordStatus]) -> Self {
        let mut c = Self::default();
        statuses.iter().for_each(|s| c.record(*s));
        c
    }
}

fn status_of_discard(reason: &DiscardReason) -> RecordStatus {
    match reason {
        DiscardReason::Budget | DiscardReason::ReformatRegression => RecordStatus::DiscardedBudget,
        DiscardReason::Transport(_) => RecordStatus::DiscardedTransport,
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, CotError> {
    if workers == 0 {
        return Err(CotError::InvalidConfig("workers must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CotError::Pool(e.to_string()))
}

/// Collection without filtering, one outcome per input record in input order.
pub fn run_collect(
    teacher: &dyn BackendFactory,
    dataset: &[SftRecord],
    df: &DfStats,
    cfg: &CollectionConfig,
    workers: usize,
) -> Result<Vec<CollectOutcome>, CotError> {
    cfg.validate()?;
    Ok(pool(workers)?.install(|| {
        dataset
            .par_iter()
            .enumerate()
            .map(|(i, r)| collect_cot_record(teacher, r, i, df, cfg))
            .collect()
    }))
}

/// Expert filtering of collected records against their references, in input
/// order. Transport failures map to `None`.
pub fn run_filter(
    expert: &dyn BackendFactory,
    items: &[(CotRecord, TokenSequence)],
    cfg: &CollectionConfig,
    workers: usize,
) -> Result<Vec<Option<FilterVerdict>>, CotError> {
    Ok(pool(workers)?.install(|| {
        items
            .par_iter()
            .enumerate()
            .map(|(i, (cot, reference))| {
                let mut b = expert.connect().ok()?;
                filter_cot_record(b.as_mut(), cot, reference, i, cfg).ok()
            })
            .collect()
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectionOutput {
    /// Accepted and kept records, in input order.
    pub records: Vec<CotRecord>,
    /// One status per input record.
    pub statuses: Vec<RecordStatus>,
    pub audit: AuditCounts,
}

/// Collect, then filter, every record of `dataset`.
pub fn run_collection(
    teacher: &dyn BackendFactory,
    expert: &dyn BackendFactory,
    dataset: &[SftRecord],
    df: &DfStats,
    cfg: &CollectionConfig,
    workers: usize,
) -> Result<CollectionOutput, CotError> {
    cfg.validate()?;
    let results: Vec<(RecordStatus, Option<CotRecord>)> = pool(workers)?.install(|| {
        dataset
            .par_iter()
            .enumerate()
            .map(|(i, r)| match collect_cot_record(teacher, r, i, df, cfg) {
                CollectOutcome::Discarded { reason, .. } => (status_of_discard(&reason), None),
                CollectOutcome::Accepted { record, .. } => {
                    let verdict = expert
                        .connect()
                        .map_err(|e| e.to_string())
                        .and_then(|mut b| filter_cot_record(b.as_mut(), &record, &r.report, i, cfg).map_err(|e| e.to_string()));
                    match verdict {
                        Ok(FilterVerdict::Kept) => (RecordStatus::Kept, Some(record)),
                        Ok(FilterVerdict::DroppedInconsistent) => (RecordStatus::DroppedInconsistent, None),
                        Ok(FilterVerdict::DroppedUnparseable) => (RecordStatus::DroppedUnparseable, None),
                        Err(_) => (RecordStatus::DiscardedTransport, None),
                    }
                }
            })
            .collect()
    });
    let statuses: Vec<RecordStatus> = results.iter().map(|(s, _)| *s).collect();
    let audit = AuditCounts::from_statuses(&statuses);
    let records = results.into_iter().filter_map(|(_, r)| r).collect();
    Ok(CollectionOutput {
        records,
        statuses,
        audit,
    })
}

#[cfg(test)]
mod tests;
