//! Caption and detection metrics: BLEU-1..4, ROUGE-L, exact-match METEOR,
//! CIDEr, ROC AUC and box IoU.

mod auc;
mod bleu;
mod cider;
mod iou;
mod meteor;
mod ngram;
mod rouge;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use auc::auc;
pub use bleu::{bleu, sentence_bleu, BleuMode, BleuScores, MAX_ORDER};
pub use cider::{cider, cider_order, cider_pair, DfStats, CIDER_ORDERS, CIDER_SCALE};
pub use iou::{iou, iou_stats, BBox};
pub use meteor::{align, meteor_exact, meteor_from_alignment, Alignment};
pub use rouge::{lcs_len, rouge_l, ROUGE_BETA};

use crate::corpus::TokenSequence;

/// IoU at or above which a grounding prediction counts as correct.
pub const DEFAULT_ACC_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    Empty,
    #[error("document-frequency statistics cover zero documents")]
    EmptyCorpusStats,
    #[error("AUC needs at least one positive and one negative label")]
    SingleClass,
    #[error("box must have positive area")]
    DegenerateBox,
    #[error("non-finite value")]
    NonFinite,
}

/// Header of the evaluation CSV, column order fixed.
pub const REPORT_CSV_HEADER: &str = "model,bleu1,bleu2,bleu3,bleu4,rouge_l,meteor,cider";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub cider: f64,
}

impl MetricReport {
    /// Corpus BLEU, mean ROUGE-L and METEOR, and corpus CIDEr with document
    /// frequencies taken from `refs`.
    pub fn evaluate(hyps: &[TokenSequence], refs: &[TokenSequence]) -> Result<Self, MetricError> {
        let b = bleu(hyps, refs, BleuMode::Corpus)?;
        let n = hyps.len() as f64;
        let rouge = hyps.iter().zip(refs).map(|(h, r)| rouge_l(h, r)).sum::<f64>() / n;
        let met = hyps.iter().zip(refs).map(|(h, r)| meteor_exact(h, r)).sum::<f64>() / n;
        let df = DfStats::from_references(refs);
        let cid = cider(hyps, refs, &df)?;
        let report = Self {
            bleu1: b[0],
            bleu2: b[1],
            bleu3: b[2],
            bleu4: b[3],
            rouge_l: rouge,
            meteor: met,
            cider: cid,
        };
        if !report.values().iter().all(|v| v.is_finite()) {
            return Err(MetricError::NonFinite);
        }
        Ok(report)
    }

    pub fn values(&self) -> [f64; 7] {
        [
            self.bleu1,
            self.bleu2,
            self.bleu3,
            self.bleu4,
            self.rouge_l,
            self.meteor,
            self.cider,
        ]
    }

    /// One CSV row matching [`REPORT_CSV_HEADER`].
    pub fn csv_row(&self, model: &str) -> String {
        let mut row = model.to_owned();
        for v in self.values() {
            row.push_str(&format!(",{v:.6}"));
        }
        row
    }
}
