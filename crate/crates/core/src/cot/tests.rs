use super::*;
use crate::corpus::{compose_tagged, ContextKey, GrammarSpec};
use std::sync::Arc;

fn record(report: &str) -> SftRecord {
    SftRecord {
        context: ContextKey::new(0, 0),
        prompt: "describe".into(),
        report: tokenize(report),
    }
}

fn df_of(r: &SftRecord) -> DfStats {
    DfStats::from_references(std::slice::from_ref(&r.report))
}

const GOOD: &str = "the lungs are clear .";
const BAD: &str = "zzz yyy";

fn reply(answer: &str) -> String {
    compose_tagged("look at the film", answer)
}

fn ordinal_script(replies: &[(u64, String)]) -> Script {
    Script::new(
        replies
            .iter()
            .map(|(n, r)| ScriptRule::reply(Match::Ordinal(*n), r.clone()))
            .collect(),
    )
}

#[test]
fn init_parses_tagged_reply() {
    let s = ordinal_script(&[(1, compose_tagged("e zero", GOOD))]);
    let mut b = ScriptedBackend::new(s);
    let r = init_attempt(&mut b, &record(GOOD), 0, &CollectionConfig::default()).unwrap();
    assert_eq!(r.chain, "e zero");
    assert_eq!(r.answer, tokenize(GOOD));
    assert!(!r.malformed);
}

#[test]
fn init_untagged_reply_falls_back() {
    let s = ordinal_script(&[(1, "plain text".into())]);
    let mut b = ScriptedBackend::new(s);
    let r = init_attempt(&mut b, &record(GOOD), 0, &CollectionConfig::default()).unwrap();
    assert_eq!(r.chain, "plain text");
    assert!(r.answer.is_empty());
    assert!(r.malformed);
}

#[test]
fn init_retries_transport_errors() {
    let s = Script::new(vec![
        ScriptRule::fail(Match::Ordinal(1)),
        ScriptRule::fail(Match::Ordinal(2)),
        ScriptRule::reply(Match::Ordinal(3), reply(GOOD)),
    ]);
    let mut b = ScriptedBackend::new(s);
    let r = init_attempt(&mut b, &record(GOOD), 0, &CollectionConfig::default()).unwrap();
    assert_eq!(r.retries, 2);
    assert_eq!(r.answer, tokenize(GOOD));
}

#[test]
fn init_sends_context_and_reference() {
    let s = Script::new(vec![ScriptRule::reply(
        Match::Substring("context: condition=0 noise=0\nprompt: describe\nreference: the lungs are clear .".into()),
        reply(GOOD),
    )]);
    let mut b = ScriptedBackend::new(s);
    assert!(init_attempt(&mut b, &record(GOOD), 0, &CollectionConfig::default()).is_ok());
}

#[test]
fn backtrack_without_history_degrades_to_verify() {
    let s = Script::new(vec![
        ScriptRule::reply(Match::Substring("task: verify".into()), reply(BAD)),
        ScriptRule::reply(Match::Substring("task: backtrack".into()), reply(GOOD)),
    ]);
    let mut b = ScriptedBackend::new(s);
    let mut state = SearchState::new(1, "e0".into(), tokenize(BAD));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = CollectionConfig::default();
    let (used, r) = apply_strategy(&mut b, Strategy::Backtrack, &mut state, &record(GOOD), 0, &cfg, &mut rng).unwrap();
    assert_eq!(used, Strategy::Verify);
    assert_eq!(r.answer, tokenize(BAD));
    assert_eq!(state.depth, 1);
    assert_eq!(state.history.len(), 2);
}

#[test]
fn backtrack_targets_an_earlier_step() {
    let s = Script::new(vec![ScriptRule::reply(
        Match::Substring("revisit step 0:\nstep 0: <think>e0</think>".into()),
        reply(GOOD),
    )]);
    let mut b = ScriptedBackend::new(s);
    let mut state = SearchState::new(1, "e0".into(), tokenize(BAD));
    state.history.push(("e1".into(), tokenize(BAD)));
    state.depth = 1;
    let cfg = CollectionConfig {
        max_depth: 4,
        ..CollectionConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (used, _) = apply_strategy(&mut b, Strategy::Backtrack, &mut state, &record(GOOD), 0, &cfg, &mut rng).unwrap();
    assert_eq!(used, Strategy::Backtrack);
}

#[test]
fn explore_embeds_history() {
    let s = Script::new(vec![ScriptRule::reply(
        Match::Substring("history:\nstep 0: <think>first idea</think><answer>zzz yyy</answer>\nExplore".into()),
        reply(GOOD),
    )]);
    let mut b = ScriptedBackend::new(s);
    let mut state = SearchState::new(1, "first idea".into(), tokenize(BAD));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = CollectionConfig::default();
    let (used, r) = apply_strategy(&mut b, Strategy::Explore, &mut state, &record(GOOD), 0, &cfg, &mut rng).unwrap();
    assert_eq!(used, Strategy::Explore);
    assert!(!r.malformed);
}

#[test]
fn strategy_draws_are_seeded() {
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(record_seed(seed, 3));
        (0..20).map(|_| draw_strategy(&mut rng)).collect::<Vec<_>>()
    };
    assert_eq!(draw(5), draw(5));
    assert_ne!(draw(5), draw(6));
    let all = draw(5);
    for s in Strategy::ALL {
        assert!(all.contains(&s));
    }
}

#[test]
fn verifier_threshold_semantics() {
    let r = tokenize("a b c d");
    let df = DfStats::from_references(std::slice::from_ref(&r));
    assert!(verify_candidate(&r, &r, &df, 0.99));
    assert!(!verify_candidate(&tokenize("w x y z"), &r, &df, 1e-9));
    let partial = tokenize("a b x y");
    let score = candidate_score(&partial, &r, &df);
    assert!(score > 0.0 && score < 1.0);
    assert!(verify_candidate(&partial, &r, &df, score));
    assert!(!verify_candidate(&partial, &r, &df, f64::from_bits(score.to_bits() + 1)));
}

#[test]
fn immediate_success_has_single_trace_entry() {
    let s = ordinal_script(&[(1, reply(GOOD)), (2, compose_tagged("final chain", GOOD))]);
    let rec = record(GOOD);
    match collect_cot_record(&s, &rec, 0, &df_of(&rec), &CollectionConfig::default()) {
        CollectOutcome::Accepted {
            record,
            attempt,
            depth,
            ..
        } => {
            assert_eq!(record.trace.len(), 1);
            assert_eq!(record.trace[0].strategy, TraceKind::Init);
            assert_eq!((attempt, depth), (1, 0));
            assert_eq!(record.chain, "final chain");
            assert!(record.verified_score >= 0.35);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn exhausted_budget_discards() {
    let s = Script::new(vec![ScriptRule::reply(Match::Substring(String::new()), reply(BAD))]);
    let rec = record(GOOD);
    let cfg = CollectionConfig::default();
    match collect_cot_record(&s, &rec, 0, &df_of(&rec), &cfg) {
        CollectOutcome::Discarded { reason, trace, .. } => {
            assert_eq!(reason, DiscardReason::Budget);
            assert_eq!(trace.len(), cfg.max_depth * cfg.max_attempts);
            let inits = trace.iter().filter(|t| t.strategy == TraceKind::Init).count();
            assert_eq!(inits, cfg.max_attempts);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn success_on_second_attempt_at_depth_two() {
    let cfg = CollectionConfig::default();
    let n = cfg.max_depth as u64;
    let mut replies: Vec<(u64, String)> = (1..=n + 2).map(|k| (k, reply(BAD))).collect();
    replies.push((n + 3, reply(GOOD)));
    replies.push((n + 4, compose_tagged("final", GOOD)));
    let s = ordinal_script(&replies);
    let rec = record(GOOD);
    match collect_cot_record(&s, &rec, 0, &df_of(&rec), &cfg) {
        CollectOutcome::Accepted {
            record, attempt, depth, ..
        } => {
            assert_eq!(record.trace.len(), cfg.max_depth + 3);
            assert_eq!((attempt, depth), (2, 2));
            assert_eq!(record.trace[cfg.max_depth].strategy, TraceKind::Init);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn reformat_regression_discards() {
    let s = ordinal_script(&[(1, reply(GOOD)), (2, compose_tagged("final", BAD))]);
    let rec = record(GOOD);
    let out = collect_cot_record(&s, &rec, 0, &df_of(&rec), &CollectionConfig::default());
    assert!(matches!(
        out,
        CollectOutcome::Discarded {
            reason: DiscardReason::ReformatRegression,
            ..
        }
    ));
}

#[test]
fn transport_exhaustion_discards() {
    let s = Script::new(vec![ScriptRule::fail(Match::Substring(String::new()))]);
    let rec = record(GOOD);
    let out = collect_cot_record(&s, &rec, 0, &df_of(&rec), &CollectionConfig::default());
    match out {
        CollectOutcome::Discarded {
            reason: DiscardReason::Transport(_),
            retries,
            ..
        } => assert_eq!(retries, RetryPolicy::default().max_retries),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn verdict_parsing() {
    assert_eq!(parse_verdict("CONSISTENT"), Some(Verdict::Consistent));
    assert_eq!(parse_verdict("Verdict: INCONSISTENT."), Some(Verdict::Inconsistent));
    assert_eq!(parse_verdict("the chain is consistent"), None);
    assert_eq!(parse_verdict("CONSISTENT or INCONSISTENT"), None);
    assert_eq!(parse_verdict("NOTCONSISTENT"), None);
}

fn cot(answer: &str) -> CotRecord {
    CotRecord {
        context: ContextKey::new(0, 0),
        chain: "c".into(),
        answer: tokenize(answer),
        trace: vec![],
        verified_score: 1.0,
    }
}

#[test]
fn filter_routes_verdicts() {
    let cfg = CollectionConfig::default();
    for (text, want) in [
        ("CONSISTENT", FilterVerdict::Kept),
        ("INCONSISTENT", FilterVerdict::DroppedInconsistent),
        ("looks fine to me", FilterVerdict::DroppedUnparseable),
    ] {
        let mut b = ScriptedBackend::new(Script::new(vec![ScriptRule::reply(Match::Ordinal(1), text)]));
        assert_eq!(filter_cot_record(&mut b, &cot(GOOD), &tokenize(GOOD), 0, &cfg).unwrap(), want);
    }
}

fn ten_records() -> Vec<SftRecord> {
    (0..10)
        .map(|i| SftRecord {
            context: ContextKey::new(i % 4, 0),
            prompt: "describe".into(),
            report: tokenize(&format!("finding{i} is present .")),
        })
        .collect()
}

fn mock_pair(keep: &[usize]) -> (Script, Script) {
    let mut teacher = Vec::new();
    let mut expert = Vec::new();
    for i in 0..10 {
        let r = format!("finding{i} is present .");
        teacher.push(ScriptRule::reply(Match::Substring(format!("reference: {r}\n")), reply(&r)));
        teacher.push(ScriptRule::reply(
            Match::Substring(format!("<answer>{r}</answer>")),
            compose_tagged("final", &r),
        ));
        let verdict = if keep.contains(&i) { "CONSISTENT" } else { "INCONSISTENT" };
        expert.push(ScriptRule::reply(Match::Substring(format!("answer: {r}\n")), verdict));
    }
    (Script::new(teacher), Script::new(expert))
}

#[test]
fn collection_counts_and_order() {
    let data = ten_records();
    let df = DfStats::from_references(&data.iter().map(|r| r.report.clone()).collect::<Vec<_>>());
    let (teacher, expert) = mock_pair(&[0, 2, 3, 5, 8, 9]);
    let cfg = CollectionConfig::default();
    let out = run_collection(&teacher, &expert, &data, &df, &cfg, 1).unwrap();
    assert_eq!(out.records.len(), 6);
    assert_eq!(out.audit.kept, 6);
    assert_eq!(out.audit.dropped_inconsistent, 4);
    assert_eq!(out.audit.total(), 10);
    let answers: Vec<String> = out.records.iter().map(|r| r.answer.join()).collect();
    assert_eq!(answers[0], "finding0 is present .");
    assert_eq!(answers[5], "finding9 is present .");

    let par = run_collection(&teacher, &expert, &data, &df, &cfg, 4).unwrap();
    assert_eq!(par, out);
}

#[test]
fn empty_collection() {
    let (teacher, expert) = mock_pair(&[]);
    let df = DfStats::from_references(&[]);
    let out = run_collection(&teacher, &expert, &[], &df, &CollectionConfig::default(), 2).unwrap();
    assert!(out.records.is_empty());
    assert_eq!(out.audit, AuditCounts::default());
    assert!(run_collection(&teacher, &expert, &[], &df, &CollectionConfig::default(), 0).is_err());
}

#[test]
fn synthetic_backends_collect_deterministically() {
    let g = Arc::new(GrammarSpec::builtin_default());
    let data = crate::corpus::generate_synthetic_dataset(&g, 3, 40, crate::corpus::Split::Sft)
        .unwrap()
        .into_sft()
        .unwrap();
    let df = DfStats::from_references(&data.iter().map(|r| r.report.clone()).collect::<Vec<_>>());
    let teacher = SyntheticTeacher::new(g.clone(), TeacherProfile::default(), 1);
    let expert = SyntheticExpert::new(g.clone(), 0.5, 0.05, 1);
    let cfg = CollectionConfig::default();
    let a = run_collection(&teacher, &expert, &data, &df, &cfg, 1).unwrap();
    let b = run_collection(&teacher, &expert, &data, &df, &cfg, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.audit.total(), 40);
    assert!(a.audit.kept > 10, "{:?}", a.audit);
    assert!(a.audit.kept < 40, "{:?}", a.audit);
    for r in &a.records {
        assert!(!r.chain.is_empty());
        assert!(r.trace.len() <= cfg.max_depth * cfg.max_attempts);
        g.vocabulary.encode(&tokenize(&r.chain)).unwrap();
        g.vocabulary.encode(&r.answer).unwrap();
    }
}
