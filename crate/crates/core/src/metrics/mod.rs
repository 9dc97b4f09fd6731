//! Quality and latency metrics.
//!
//! Latency metrics read the per-token delays of a finalized
//! [`EmissionLog`](crate::timeline::EmissionLog): every token inherits the
//! delay of the commit that emitted it, either the ideal delay `d` or the
//! computation-aware delay `c`.

pub mod bleu;
pub mod latency;

pub use bleu::{corpus_bleu, corpus_bleu_with, BleuConfig, BleuScore, Smoothing};
pub use latency::{
    average_lagging, capped_pairing, compute_al, compute_ap, compute_atd, compute_atd_with, compute_dal,
    compute_delay_metrics, compute_laal, compute_text_atd, compute_text_offsets, differentiable_lagging,
    segment_interval, segment_source, AtdConfig, DelayMetricsResult,
};
