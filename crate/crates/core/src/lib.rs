//! Three-stage report-generation training over a toy autoregressive policy:
//! supervised alignment, chain-of-thought collection and fine-tuning, and
//! group-relative policy optimization, plus the caption metrics and
//! rule-based rewards the stages are scored with.

pub mod corpus;
pub mod metrics;
pub mod rewards;
pub mod policy;
pub mod sft;
pub mod cot;
pub mod grpo;
