//! The individual pipeline stages, as in-memory operations.

use std::sync::Arc;

use cotforge::corpus::{
    generate_synthetic_dataset, parse_tagged_output, tokenize, ContextKey, CotRecord, GrammarSpec, RftRecord,
    SftRecord, Split, TokenSequence,
};
use cotforge::cot::{
    self, BackendError, BackendFactory, CollectOutcome, FilterVerdict, HttpConfig, RecordStatus, Script,
    SyntheticExpert, SyntheticTeacher,
};
use cotforge::grpo::{self, RewardEnv, RftOutcome};
use cotforge::metrics::{DfStats, MetricReport};
use cotforge::policy::{self, derive_seed, PolicyParams};
use cotforge::rewards::composite_reward;
use cotforge::sft::{self, SftExample, SftOutcome};
use serde::Serialize;

use crate::config::{BackendKind, ExperimentConfig};
use crate::error::CliError;

/// The four generated datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub sft: Vec<SftRecord>,
    pub rft: Vec<RftRecord>,
    pub eval: Vec<SftRecord>,
    /// Held-out split of the cross grammar.
    pub cross_eval: Vec<SftRecord>,
}

pub fn gen_corpus(cfg: &ExperimentConfig, grammar: &GrammarSpec, cross: &GrammarSpec) -> Result<Corpus, CliError> {
    let stage = |e: cotforge::corpus::CorpusError| CliError::stage("gen-corpus", e);
    let seed = cfg.seeds.corpus;
    let sft = generate_synthetic_dataset(grammar, seed, cfg.corpus.sft_records, Split::Sft)
        .map_err(stage)?
        .into_sft()
        .expect("sft split yields sft records");
    let rft = generate_synthetic_dataset(grammar, seed, cfg.corpus.rft_records, Split::Rft)
        .map_err(stage)?
        .into_rft()
        .expect("rft split yields rft records");
    let eval = generate_synthetic_dataset(grammar, seed, cfg.corpus.eval_records, Split::Eval)
        .map_err(stage)?
        .into_sft()
        .expect("eval split yields sft records");
    let cross_eval = generate_synthetic_dataset(cross, seed, cfg.corpus.eval_records, Split::Eval)
        .map_err(stage)?
        .into_sft()
        .expect("eval split yields sft records");
    Ok(Corpus {
        sft,
        rft,
        eval,
        cross_eval,
    })
}

pub fn initial_params(grammar: &GrammarSpec) -> PolicyParams {
    PolicyParams::zeros(grammar.condition_count(), grammar.vocabulary.len())
}

/// Stage 1: report targets, adapter only.
pub fn stage1(
    cfg: &ExperimentConfig,
    grammar: &GrammarSpec,
    data: &[SftRecord],
    init: &PolicyParams,
) -> Result<SftOutcome, CliError> {
    let examples = data
        .iter()
        .map(|r| SftExample::from_report(r, &grammar.vocabulary))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::stage("sft", e))?;
    sft::train_sft(init, &examples, &cfg.stage1).map_err(|e| CliError::stage("sft", e))
}

/// Stage 2: CoT targets, both blocks.
pub fn stage2(
    cfg: &ExperimentConfig,
    grammar: &GrammarSpec,
    data: &[CotRecord],
    init: &PolicyParams,
) -> Result<SftOutcome, CliError> {
    let examples = data
        .iter()
        .map(|r| SftExample::from_cot(r, &grammar.vocabulary))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::stage("sft-cot", e))?;
    sft::train_sft(init, &examples, &cfg.stage2).map_err(|e| CliError::stage("sft-cot", e))
}

fn backend_err(stage: &'static str) -> impl Fn(BackendError) -> CliError {
    move |e| CliError::backend(stage, e)
}

fn http_config(cfg: &ExperimentConfig) -> HttpConfig {
    let b = &cfg.backend;
    let mut h = HttpConfig::new(
        b.url.clone().unwrap_or_default(),
        b.model.clone().unwrap_or_default(),
    );
    h.temperature = b.temperature;
    h.timeout = b.timeout;
    if let Some(p) = &b.reply_pointer {
        h.reply_pointer = p.clone();
    }
    h
}

fn check_factory(stage: &'static str, f: Box<dyn BackendFactory>) -> Result<Box<dyn BackendFactory>, CliError> {
    f.connect().map_err(backend_err(stage))?;
    Ok(f)
}

pub fn teacher(cfg: &ExperimentConfig, grammar: &GrammarSpec) -> Result<Box<dyn BackendFactory>, CliError> {
    let f: Box<dyn BackendFactory> = match cfg.backend.teacher {
        BackendKind::Synthetic => Box::new(SyntheticTeacher::new(Arc::new(grammar.clone()), cfg.teacher, cfg.seeds.cot)),
        BackendKind::Scripted => Box::new(
            Script::load(cfg.backend.teacher_script.as_ref().expect("validated at load")).map_err(backend_err("collect-cot"))?,
        ),
        BackendKind::Http => Box::new(http_config(cfg)),
    };
    check_factory("collect-cot", f)
}

pub fn expert(cfg: &ExperimentConfig, grammar: &GrammarSpec) -> Result<Box<dyn BackendFactory>, CliError> {
    let f: Box<dyn BackendFactory> = match cfg.backend.expert {
        BackendKind::Synthetic => Box::new(SyntheticExpert::new(
            Arc::new(grammar.clone()),
            cfg.expert_threshold,
            cfg.expert_garble_rate,
            derive_seed(cfg.seeds.cot, &[0xe]),
        )),
        BackendKind::Scripted => Box::new(
            Script::load(cfg.backend.expert_script.as_ref().expect("validated at load")).map_err(backend_err("filter-cot"))?,
        ),
        BackendKind::Http => Box::new(http_config(cfg)),
    };
    check_factory("filter-cot", f)
}

/// Result of the collection stage: accepted records plus one status per
/// input record for those that were discarded.
#[derive(Debug, Clone, PartialEq)]
pub struct Collected {
    pub records: Vec<CotRecord>,
    /// `None` for accepted records, whose fate the filter decides.
    pub discarded: Vec<Option<RecordStatus>>,
}

pub fn collect(
    cfg: &ExperimentConfig,
    teacher: &dyn BackendFactory,
    data: &[SftRecord],
    workers: usize,
) -> Result<Collected, CliError> {
    let refs: Vec<TokenSequence> = data.iter().map(|r| r.report.clone()).collect();
    let df = DfStats::from_references(&refs);
    let outcomes =
        cot::run_collect(teacher, data, &df, &cfg.collection, workers).map_err(|e| CliError::stage("collect-cot", e))?;
    let mut records = Vec::new();
    let mut discarded = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        match o {
            CollectOutcome::Accepted { record, .. } => {
                records.push(record);
                discarded.push(None);
            }
            CollectOutcome::Discarded { reason, .. } => discarded.push(Some(match reason {
                cot::DiscardReason::Transport(_) => RecordStatus::DiscardedTransport,
                _ => RecordStatus::DiscardedBudget,
            })),
        }
    }
    if !discarded.is_empty() && discarded.iter().all(|d| *d == Some(RecordStatus::DiscardedTransport)) {
        return Err(CliError::Backend {
            stage: "collect-cot",
            message: "every record failed on transport".into(),
        });
    }
    Ok(Collected { records, discarded })
}

/// Filter verdicts for `records`, judged against the grammar's report for
/// each record's context.
pub fn filter(
    cfg: &ExperimentConfig,
    expert: &dyn BackendFactory,
    grammar: &GrammarSpec,
    records: &[CotRecord],
    workers: usize,
) -> Result<Vec<Option<FilterVerdict>>, CliError> {
    let items = records
        .iter()
        .map(|r| {
            grammar
                .report(r.context.condition_id, r.context.noise_id)
                .map(|rep| (r.clone(), rep.clone()))
                .ok_or_else(|| CliError::stage("filter-cot", format!("no reference for {}", r.context.describe())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let verdicts = cot::run_filter(expert, &items, &cfg.collection, workers).map_err(|e| CliError::stage("filter-cot", e))?;
    if !verdicts.is_empty() && verdicts.iter().all(Option::is_none) {
        return Err(CliError::Backend {
            stage: "filter-cot",
            message: "every record failed on transport".into(),
        });
    }
    Ok(verdicts)
}

/// Kept records and per-input statuses after collection and filtering.
pub fn merge_statuses(
    collected: &Collected,
    verdicts: &[Option<FilterVerdict>],
) -> (Vec<CotRecord>, Vec<RecordStatus>) {
    let mut kept = Vec::new();
    let mut statuses = Vec::with_capacity(collected.discarded.len());
    let mut next = collected.records.iter().zip(verdicts);
    for d in &collected.discarded {
        match d {
            Some(s) => statuses.push(*s),
            None => {
                let (rec, v) = next.next().expect("one verdict per accepted record");
                statuses.push(match v {
                    Some(FilterVerdict::Kept) => {
                        kept.push(rec.clone());
                        RecordStatus::Kept
                    }
                    Some(FilterVerdict::DroppedInconsistent) => RecordStatus::DroppedInconsistent,
                    Some(FilterVerdict::DroppedUnparseable) => RecordStatus::DroppedUnparseable,
                    None => RecordStatus::DiscardedTransport,
                });
            }
        }
    }
    (kept, statuses)
}

pub fn reward_df(data: &[RftRecord]) -> DfStats {
    DfStats::from_references(&data.iter().map(|r| r.reference.clone()).collect::<Vec<_>>())
}

/// Stage 3.
pub fn rft(
    cfg: &ExperimentConfig,
    grammar: &GrammarSpec,
    data: &[RftRecord],
    init: &PolicyParams,
) -> Result<RftOutcome, CliError> {
    let df = reward_df(data);
    let env = RewardEnv {
        vocab: &grammar.vocabulary,
        df: &df,
        reward: &cfg.reward,
    };
    grpo::train_rft(init, data, env, &cfg.grpo).map_err(|e| CliError::stage("rft", e))
}

/// The text a decoded output is scored on: the answer span when well-formed,
/// the whole output otherwise.
pub fn scored_text(rendered: &str) -> TokenSequence {
    match parse_tagged_output(rendered) {
        Ok(t) => tokenize(&t.answer),
        Err(_) => tokenize(rendered),
    }
}

/// Greedy-decodes every record and scores the answers against the
/// references.
pub fn evaluate(
    params: &PolicyParams,
    grammar: &GrammarSpec,
    records: &[SftRecord],
    max_len: usize,
) -> Result<MetricReport, CliError> {
    if records.is_empty() {
        return Err(CliError::stage("evaluate", "evaluation set is empty"));
    }
    let mut hyps = Vec::with_capacity(records.len());
    for r in records {
        let ids = policy::greedy_decode(params, r.context, max_len).map_err(|e| CliError::stage("evaluate", e))?;
        hyps.push(scored_text(&grammar.vocabulary.render(&ids)));
    }
    let refs: Vec<TokenSequence> = records.iter().map(|r| r.report.clone()).collect();
    MetricReport::evaluate(&hyps, &refs).map_err(|e| CliError::stage("evaluate", e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RewardProbe {
    pub mean_r_acc: f64,
    pub mean_r_format: f64,
    pub mean_r_all: f64,
}

/// Mean composite reward of `cfg.grpo.group_size` sampled outputs per
/// record under `params`, with fixed sampling seeds.
pub fn reward_probe(
    cfg: &ExperimentConfig,
    grammar: &GrammarSpec,
    params: &PolicyParams,
    data: &[RftRecord],
) -> Result<RewardProbe, CliError> {
    let df = reward_df(data);
    let g = cfg.grpo.group_size;
    let mut sum = RewardProbe {
        mean_r_acc: 0.0,
        mean_r_format: 0.0,
        mean_r_all: 0.0,
    };
    for (i, r) in data.iter().enumerate() {
        for k in 0..g {
            let seed = derive_seed(cfg.seeds.grpo, &[0x9_0be, i as u64, k as u64]);
            let ids = policy::sample_sequence(params, r.context, cfg.grpo.temperature, cfg.grpo.max_len, seed)
                .map_err(|e| CliError::stage("probe", e))?;
            let b = composite_reward(&grammar.vocabulary.render(&ids), &r.reference, &df, &cfg.reward);
            sum.mean_r_acc += b.r_acc;
            sum.mean_r_format += b.r_format;
            sum.mean_r_all += b.r_all;
        }
    }
    let n = (data.len() * g).max(1) as f64;
    Ok(RewardProbe {
        mean_r_acc: sum.mean_r_acc / n,
        mean_r_format: sum.mean_r_format / n,
        mean_r_all: sum.mean_r_all / n,
    })
}

/// References for `records` looked up in `grammar`, as a check that the
/// dataset belongs to it.
pub fn check_records_in_grammar(grammar: &GrammarSpec, contexts: impl Iterator<Item = ContextKey>) -> Result<(), CliError> {
    for c in contexts {
        if grammar.report(c.condition_id, c.noise_id).is_none() {
            return Err(CliError::stage(
                "load",
                format!("record context {} is outside grammar {}", c.describe(), grammar.name),
            ));
        }
    }
    Ok(())
}
