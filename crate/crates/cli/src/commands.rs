//! Subcommand implementations. Each writes into an [`ArtifactDir`] and
//! returns the sha256 of the manifest it wrote.

use std::path::Path;

use cotforge::corpus::{load_records, persist_records, CotRecord, GrammarSpec, Record, RftRecord, SftRecord};
use cotforge::cot::{AuditCounts, RecordStatus};
use cotforge::grpo::{write_reward_csv, StepStats};
use cotforge::metrics::{MetricReport, REPORT_CSV_HEADER};
use cotforge::policy::{Checkpoint, PolicyParams, Stage};
use cotforge::sft::write_loss_csv;
use serde::Serialize;

use crate::artifacts::ArtifactDir;
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::stages::{self, Corpus, RewardProbe};

fn io(stage: &'static str) -> impl Fn(std::io::Error) -> CliError {
    move |e| CliError::io(stage, e)
}

fn grammars(cfg: &ExperimentConfig) -> Result<(GrammarSpec, GrammarSpec), CliError> {
    let g = cfg.grammar()?;
    let cross = cfg.cross_grammar()?;
    if cross.condition_count() != g.condition_count() {
        return Err(CliError::Usage(format!(
            "cross grammar has {} conditions, model grammar {}",
            cross.condition_count(),
            g.condition_count()
        )));
    }
    Ok((g, cross))
}

fn write_records<R: Record>(dir: &mut ArtifactDir, stage: &'static str, rel: &str, records: &[R]) -> Result<(), CliError> {
    let path = dir.path(rel);
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).map_err(io(stage))?;
    }
    persist_records(&path, records).map_err(|e| CliError::io(stage, e))?;
    dir.register(rel).map_err(io(stage))?;
    Ok(())
}

fn write_checkpoint(
    dir: &mut ArtifactDir,
    rel: &str,
    stage_label: Stage,
    grammar: &GrammarSpec,
    params: &PolicyParams,
) -> Result<(), CliError> {
    let json = Checkpoint::new(stage_label, grammar, params.clone())
        .to_json()
        .map_err(|e| CliError::io("checkpoint", e))?;
    dir.write(rel, json.as_bytes()).map_err(io("checkpoint"))?;
    Ok(())
}

fn loss_csv(curve: &[f64]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_loss_csv(&mut buf, curve).expect("writing to memory");
    buf
}

fn reward_csv(curve: &[StepStats]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_reward_csv(&mut buf, curve).expect("writing to memory");
    buf
}

fn report_csv(rows: &[(&str, MetricReport)]) -> Vec<u8> {
    let mut s = format!("{REPORT_CSV_HEADER}\n");
    for (name, r) in rows {
        s.push_str(&r.csv_row(name));
        s.push('\n');
    }
    s.into_bytes()
}

fn load<R: Record>(stage: &'static str, path: &Path) -> Result<Vec<R>, CliError> {
    load_records(path).map_err(|e| CliError::stage(stage, format!("{}: {e}", path.display())))
}

fn load_checkpoint(path: &Path, grammar: &GrammarSpec) -> Result<Checkpoint, CliError> {
    Checkpoint::load(path, grammar).map_err(|e| CliError::stage("load-checkpoint", format!("{}: {e}", path.display())))
}

fn init_params(init: Option<&Path>, grammar: &GrammarSpec) -> Result<PolicyParams, CliError> {
    match init {
        Some(p) => Ok(load_checkpoint(p, grammar)?.params),
        None => Ok(stages::initial_params(grammar)),
    }
}

/// Runs `body` and writes the manifest either way; on failure the manifest
/// names the failed stage and everything written so far stays in place.
fn finish(mut dir: ArtifactDir, result: Result<(), CliError>) -> Result<String, CliError> {
    match result {
        Ok(()) => dir.finish().map_err(io("manifest")),
        Err(e) => {
            let stage = e.stage_name().unwrap_or("setup");
            if let Err(w) = dir.fail(stage) {
                log::error!("could not write manifest after failure: {w}");
            }
            Err(e)
        }
    }
}

fn open(cfg: &ExperimentConfig, out: &Path, command: &str, grammar: &GrammarSpec) -> Result<ArtifactDir, CliError> {
    ArtifactDir::create(out, command, cfg, &grammar.hash()).map_err(io("setup"))
}

fn write_corpus(dir: &mut ArtifactDir, c: &Corpus) -> Result<(), CliError> {
    write_records(dir, "gen-corpus", "datasets/sft.jsonl", &c.sft)?;
    write_records(dir, "gen-corpus", "datasets/rft.jsonl", &c.rft)?;
    write_records(dir, "gen-corpus", "datasets/eval.jsonl", &c.eval)?;
    write_records(dir, "gen-corpus", "datasets/cross_eval.jsonl", &c.cross_eval)?;
    Ok(())
}

pub fn cmd_gen_corpus(cfg: &ExperimentConfig, out: &Path) -> Result<String, CliError> {
    let (g, cross) = grammars(cfg)?;
    let mut dir = open(cfg, out, "gen-corpus", &g)?;
    let r = (|| {
        let c = stages::gen_corpus(cfg, &g, &cross)?;
        write_corpus(&mut dir, &c)?;
        dir.stage_done("gen-corpus");
        Ok(())
    })();
    finish(dir, r)
}

pub fn cmd_sft(cfg: &ExperimentConfig, data: &Path, init: Option<&Path>, out: &Path) -> Result<String, CliError> {
    let g = cfg.grammar()?;
    let mut dir = open(cfg, out, "sft", &g)?;
    let r = (|| {
        let records: Vec<SftRecord> = load("sft", data)?;
        stages::check_records_in_grammar(&g, records.iter().map(|r| r.context))?;
        let start = init_params(init, &g)?;
        let o = stages::stage1(cfg, &g, &records, &start)?;
        write_checkpoint(&mut dir, "checkpoints/stage1.json", Stage::Stage1, &g, &o.params)?;
        dir.write("curves/stage1_loss.csv", &loss_csv(&o.loss_curve)).map_err(io("sft"))?;
        dir.stage_done("sft");
        Ok(())
    })();
    finish(dir, r)
}

#[derive(Debug, Clone, Serialize)]
struct StatusLog<'a> {
    counts: AuditCounts,
    statuses: &'a [RecordStatus],
}

pub fn cmd_collect_cot(cfg: &ExperimentConfig, data: &Path, out: &Path, workers: usize) -> Result<String, CliError> {
    let g = cfg.grammar()?;
    let mut dir = open(cfg, out, "collect-cot", &g)?;
    let r = (|| {
        let records: Vec<SftRecord> = load("collect-cot", data)?;
        let teacher = stages::teacher(cfg, &g)?;
        let c = stages::collect(cfg, teacher.as_ref(), &records, workers)?;
        write_records(&mut dir, "collect-cot", "datasets/cot_collected.jsonl", &c.records)?;
        let discarded: Vec<RecordStatus> = c.discarded.iter().flatten().copied().collect();
        let log = StatusLog {
            counts: AuditCounts::from_statuses(&discarded),
            statuses: &discarded,
        };
        let text = serde_json::to_string_pretty(&log).map_err(|e| CliError::io("collect-cot", e))? + "\n";
        dir.write("collect_status.json", text.as_bytes()).map_err(io("collect-cot"))?;
        dir.note("accepted", c.records.len());
        dir.note("discarded", log.counts);
        dir.stage_done("collect-cot");
        Ok(())
    })();
    finish(dir, r)
}

pub fn cmd_filter_cot(cfg: &ExperimentConfig, data: &Path, out: &Path, workers: usize) -> Result<String, CliError> {
    let g = cfg.grammar()?;
    let mut dir = open(cfg, out, "filter-cot", &g)?;
    let r = (|| {
        let records: Vec<CotRecord> = load("filter-cot", data)?;
        let expert = stages::expert(cfg, &g)?;
        let verdicts = stages::filter(cfg, expert.as_ref(), &g, &records, workers)?;
        let collected = stages::Collected {
            discarded: vec![None; records.len()],
            records,
        };
        let (kept, statuses) = stages::merge_statuses(&collected, &verdicts);
        write_records(&mut dir, "filter-cot", "datasets/cot.jsonl", &kept)?;
        write_audit(&mut dir, "filter-cot", &statuses)?;
        dir.stage_done("filter-cot");
        Ok(())
    })();
    finish(dir, r)
}

fn write_audit(dir: &mut ArtifactDir, stage: &'static str, statuses: &[RecordStatus]) -> Result<AuditCounts, CliError> {
    let counts = AuditCounts::from_statuses(statuses);
    let log = StatusLog { counts, statuses };
    let text = serde_json::to_string_pretty(&log).map_err(|e| CliError::io(stage, e))? + "\n";
    dir.write("audit.json", text.as_bytes()).map_err(io(stage))?;
    dir.note("audit", counts);
    Ok(counts)
}

pub fn cmd_sft_cot(cfg: &ExperimentConfig, data: &Path, init: Option<&Path>, out: &Path) -> Result<String, CliError> {
    let g = cfg.grammar()?;
    let mut dir = open(cfg, out, "sft-cot", &g)?;
    let r = (|| {
        let records: Vec<CotRecord> = load("sft-cot", data)?;
        let start = init_params(init, &g)?;
        let o = stages::stage2(cfg, &g, &records, &start)?;
        write_checkpoint(&mut dir, "checkpoints/stage2.json", Stage::Stage2, &g, &o.params)?;
        dir.write("curves/stage2_loss.csv", &loss_csv(&o.loss_curve)).map_err(io("sft-cot"))?;
        dir.stage_done("sft-cot");
        Ok(())
    })();
    finish(dir, r)
}

pub fn cmd_rft(cfg: &ExperimentConfig, data: &Path, init: Option<&Path>, out: &Path) -> Result<String, CliError> {
    let g = cfg.grammar()?;
    let mut dir = open(cfg, out, "rft", &g)?;
    let r = (|| {
        let records: Vec<RftRecord> = load("rft", data)?;
        stages::check_records_in_grammar(&g, records.iter().map(|r| r.context))?;
        let start = init_params(init, &g)?;
        let o = stages::rft(cfg, &g, &records, &start)?;
        write_checkpoint(&mut dir, "checkpoints/stage3.json", Stage::Stage3, &g, &o.params)?;
        dir.write("curves/rft_reward.csv", &reward_csv(&o.curve)).map_err(io("rft"))?;
        dir.stage_done("rft");
        Ok(())
    })();
    finish(dir, r)
}

/// Evaluates a checkpoint of the configured model grammar on `data`, which
/// may come from the cross grammar, and writes a one-row report CSV.
pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    data: &Path,
    out_csv: &Path,
    model: &str,
) -> Result<MetricReport, CliError> {
    let g = cfg.grammar()?;
    let ck = load_checkpoint(checkpoint, &g)?;
    let records: Vec<SftRecord> = load("evaluate", data)?;
    for r in &records {
        if r.context.condition_id as usize >= g.condition_count() {
            return Err(CliError::stage("evaluate", format!("condition {} outside the model grammar", r.context.condition_id)));
        }
    }
    let report = stages::evaluate(&ck.params, &g, &records, cfg.grpo.max_len)?;
    if let Some(p) = out_csv.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p).map_err(io("evaluate"))?;
    }
    std::fs::write(out_csv, report_csv(&[(model, report)])).map_err(io("evaluate"))?;
    Ok(report)
}

/// Outcome of a full pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub manifest_hash: String,
    pub audit: AuditCounts,
    pub reward_curve: Vec<StepStats>,
}

pub fn cmd_pipeline(cfg: &ExperimentConfig, out: &Path, workers: usize) -> Result<PipelineRun, CliError> {
    let (g, cross) = grammars(cfg)?;
    let mut dir = open(cfg, out, "pipeline", &g)?;
    let mut audit = AuditCounts::default();
    let mut curve = Vec::new();
    let r = (|| {
        let corpus = stages::gen_corpus(cfg, &g, &cross)?;
        write_corpus(&mut dir, &corpus)?;
        dir.stage_done("gen-corpus");

        let init = stages::initial_params(&g);
        write_checkpoint(&mut dir, "checkpoints/init.json", Stage::Init, &g, &init)?;
        let s1 = stages::stage1(cfg, &g, &corpus.sft, &init)?;
        write_checkpoint(&mut dir, "checkpoints/stage1.json", Stage::Stage1, &g, &s1.params)?;
        dir.write("curves/stage1_loss.csv", &loss_csv(&s1.loss_curve)).map_err(io("sft"))?;
        dir.stage_done("sft");

        let teacher = stages::teacher(cfg, &g)?;
        let collected = stages::collect(cfg, teacher.as_ref(), &corpus.sft, workers)?;
        write_records(&mut dir, "collect-cot", "datasets/cot_collected.jsonl", &collected.records)?;
        dir.stage_done("collect-cot");

        let expert = stages::expert(cfg, &g)?;
        let verdicts = stages::filter(cfg, expert.as_ref(), &g, &collected.records, workers)?;
        let (kept, statuses) = stages::merge_statuses(&collected, &verdicts);
        write_records(&mut dir, "filter-cot", "datasets/cot.jsonl", &kept)?;
        audit = write_audit(&mut dir, "filter-cot", &statuses)?;
        if kept.is_empty() {
            return Err(CliError::stage("filter-cot", "no CoT records survived collection and filtering"));
        }
        dir.stage_done("filter-cot");

        let s2 = stages::stage2(cfg, &g, &kept, &s1.params)?;
        write_checkpoint(&mut dir, "checkpoints/stage2.json", Stage::Stage2, &g, &s2.params)?;
        dir.write("curves/stage2_loss.csv", &loss_csv(&s2.loss_curve)).map_err(io("sft-cot"))?;
        dir.stage_done("sft-cot");

        let s3 = stages::rft(cfg, &g, &corpus.rft, &s2.params)?;
        write_checkpoint(&mut dir, "checkpoints/stage3.json", Stage::Stage3, &g, &s3.params)?;
        dir.write("curves/rft_reward.csv", &reward_csv(&s3.curve)).map_err(io("rft"))?;
        dir.stage_done("rft");
        curve = s3.curve;

        let models = [("stage1", &s1.params), ("stage2", &s2.params), ("stage3", &s3.params)];
        let mut in_domain = Vec::new();
        let mut cross_rows = Vec::new();
        for (name, p) in models {
            in_domain.push((name, stages::evaluate(p, &g, &corpus.eval, cfg.grpo.max_len)?));
            cross_rows.push((name, stages::evaluate(p, &g, &corpus.cross_eval, cfg.grpo.max_len)?));
        }
        dir.write("eval/in_domain.csv", &report_csv(&in_domain)).map_err(io("evaluate"))?;
        dir.write("eval/cross.csv", &report_csv(&cross_rows)).map_err(io("evaluate"))?;
        dir.stage_done("evaluate");
        Ok(())
    })();
    let manifest_hash = finish(dir, r)?;
    Ok(PipelineRun {
        manifest_hash,
        audit,
        reward_curve: curve,
    })
}

/// One row of the ablation table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: &'static str,
    pub model: &'static str,
    pub report: MetricReport,
    pub probe: RewardProbe,
}

pub const ABLATION_CSV_HEADER_PREFIX: &str = "variant,";
pub const ABLATION_REWARD_HEADER: &str = "variant,model,mean_r_acc,mean_r_format,mean_r_all";

/// The five training variants, sharing corpus, collected CoT data and seeds:
/// (a) CoT-SFT from scratch, (b) RFT from scratch, (c) SFT then RFT,
/// (d) CoT-SFT then RFT, (e) SFT, CoT-SFT, then RFT.
pub fn run_ablation(cfg: &ExperimentConfig, workers: usize) -> Result<Vec<AblationRow>, CliError> {
    let (g, cross) = grammars(cfg)?;
    let corpus = stages::gen_corpus(cfg, &g, &cross)?;
    let zero = stages::initial_params(&g);
    let s1 = stages::stage1(cfg, &g, &corpus.sft, &zero)?.params;
    let teacher = stages::teacher(cfg, &g)?;
    let collected = stages::collect(cfg, teacher.as_ref(), &corpus.sft, workers)?;
    let expert = stages::expert(cfg, &g)?;
    let verdicts = stages::filter(cfg, expert.as_ref(), &g, &collected.records, workers)?;
    let (kept, _) = stages::merge_statuses(&collected, &verdicts);
    if kept.is_empty() {
        return Err(CliError::stage("filter-cot", "no CoT records survived collection and filtering"));
    }
    let cot_only = stages::stage2(cfg, &g, &kept, &zero)?.params;
    let s2 = stages::stage2(cfg, &g, &kept, &s1)?.params;

    let starts: [(&'static str, &'static str, &PolicyParams, bool); 5] = [
        ("a", "cot-sft", &cot_only, false),
        ("b", "rl-only", &zero, true),
        ("c", "sft-rl", &s1, true),
        ("d", "cot-sft-rl", &cot_only, true),
        ("e", "full", &s2, true),
    ];
    let trained: Vec<Result<PolicyParams, CliError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = starts
            .iter()
            .map(|(_, _, start, with_rft)| {
                let (g, corpus) = (&g, &corpus);
                scope.spawn(move || {
                    if *with_rft {
                        stages::rft(cfg, g, &corpus.rft, start).map(|o| o.params)
                    } else {
                        Ok((*start).clone())
                    }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("ablation worker panicked")).collect()
    });
    let mut rows = Vec::with_capacity(5);
    for ((variant, model, _, _), params) in starts.iter().zip(trained) {
        let params = params?;
        rows.push(AblationRow {
            variant,
            model,
            report: stages::evaluate(&params, &g, &corpus.eval, cfg.grpo.max_len)?,
            probe: stages::reward_probe(cfg, &g, &params, &corpus.rft)?,
        });
    }
    Ok(rows)
}

pub fn cmd_ablate(cfg: &ExperimentConfig, out: &Path, workers: usize) -> Result<(String, Vec<AblationRow>), CliError> {
    let g = cfg.grammar()?;
    let mut dir = open(cfg, out, "ablate", &g)?;
    let mut rows = Vec::new();
    let r = (|| {
        rows = run_ablation(cfg, workers)?;
        let mut table = format!("{ABLATION_CSV_HEADER_PREFIX}{REPORT_CSV_HEADER}\n");
        let mut rewards = format!("{ABLATION_REWARD_HEADER}\n");
        for row in &rows {
            table.push_str(&format!("{},{}\n", row.variant, row.report.csv_row(row.model)));
            rewards.push_str(&format!(
                "{},{},{:.9},{:.9},{:.9}\n",
                row.variant, row.model, row.probe.mean_r_acc, row.probe.mean_r_format, row.probe.mean_r_all
            ));
        }
        dir.write("ablation.csv", table.as_bytes()).map_err(io("ablate"))?;
        dir.write("ablation_rewards.csv", rewards.as_bytes()).map_err(io("ablate"))?;
        dir.stage_done("ablate");
        Ok(())
    })();
    let h = finish(dir, r)?;
    Ok((h, rows))
}

/// Ad-hoc scores over user-supplied files; none of these touch the policy.
pub mod metrics {
    use std::path::Path;

    use cotforge::corpus::{tokenize, TokenSequence};
    use cotforge::metrics::{auc, iou_stats, BBox, MetricReport};
    use serde::de::DeserializeOwned;
    use serde::{Deserialize, Serialize};

    use crate::error::CliError;

    const STAGE: &str = "metrics";

    fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::stage(STAGE, format!("{}: {e}", path.display())))?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| CliError::stage(STAGE, format!("{}:{}: {e}", path.display(), i + 1)))
            })
            .collect()
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum TextLine {
        Plain(String),
        Object { text: String },
    }

    impl TextLine {
        fn tokens(self) -> TokenSequence {
            match self {
                TextLine::Plain(t) | TextLine::Object { text: t } => tokenize(&t),
            }
        }
    }

    /// Corpus text metrics over two aligned JSONL files whose lines are
    /// either strings or objects with a `text` field.
    pub fn text(hyps: &Path, refs: &Path) -> Result<MetricReport, CliError> {
        let h: Vec<TokenSequence> = read_jsonl::<TextLine>(hyps)?.into_iter().map(TextLine::tokens).collect();
        let r: Vec<TokenSequence> = read_jsonl::<TextLine>(refs)?.into_iter().map(TextLine::tokens).collect();
        MetricReport::evaluate(&h, &r).map_err(|e| CliError::stage(STAGE, e))
    }

    #[derive(Deserialize)]
    struct Scored {
        label: bool,
        score: f64,
    }

    /// AUC over lines of `{"label": bool, "score": number}`.
    pub fn auc_file(path: &Path) -> Result<f64, CliError> {
        let rows: Vec<Scored> = read_jsonl(path)?;
        let labels: Vec<bool> = rows.iter().map(|r| r.label).collect();
        let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
        auc(&labels, &scores).map_err(|e| CliError::stage(STAGE, e))
    }

    #[derive(Deserialize)]
    struct BoxPair {
        pred: [f64; 4],
        gt: [f64; 4],
    }

    #[derive(Debug, Clone, Copy, PartialEq, Serialize)]
    pub struct GroundingScore {
        pub miou: f64,
        pub acc: f64,
    }

    /// Mean IoU and thresholded accuracy over lines of
    /// `{"pred": [x1,y1,x2,y2], "gt": [x1,y1,x2,y2]}`.
    pub fn iou_file(path: &Path, threshold: f64) -> Result<GroundingScore, CliError> {
        let rows: Vec<BoxPair> = read_jsonl(path)?;
        let to_box = |c: [f64; 4]| BBox::new(c[0], c[1], c[2], c[3]).map_err(|e| CliError::stage(STAGE, e));
        let preds = rows.iter().map(|r| to_box(r.pred)).collect::<Result<Vec<_>, _>>()?;
        let gts = rows.iter().map(|r| to_box(r.gt)).collect::<Result<Vec<_>, _>>()?;
        let (miou, acc) = iou_stats(&preds, &gts, threshold).map_err(|e| CliError::stage(STAGE, e))?;
        Ok(GroundingScore { miou, acc })
    }
}
