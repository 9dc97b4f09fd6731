//! Corpus-level BLEU over pre-tokenized sentences (single reference).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeline::Token;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    #[default]
    None,
    /// Adds `k` to matched and total counts for orders above 1.
    AddK(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleuConfig {
    pub max_n: usize,
    pub smoothing: Smoothing,
}

impl Default for BleuConfig {
    fn default() -> Self {
        Self {
            max_n: 4,
            smoothing: Smoothing::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    /// In `[0, 100]`.
    pub score: f64,
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub sys_len: usize,
    pub ref_len: usize,
    /// Set when some n-gram order had no match, which forces the score to 0.
    pub zero_precision_order: Option<usize>,
}

fn ngram_counts(tokens: &[Token], n: usize) -> HashMap<&[Token], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

pub fn corpus_bleu_with(hypotheses: &[Vec<Token>], references: &[Vec<Token>], cfg: &BleuConfig) -> Result<BleuScore> {
    if hypotheses.len() != references.len() {
        return Err(Error::SizeMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    if cfg.max_n == 0 {
        return Err(Error::Config("BLEU max_n must be >= 1".into()));
    }
    let mut matched = vec![0usize; cfg.max_n];
    let mut total = vec![0usize; cfg.max_n];
    let (mut sys_len, mut ref_len) = (0, 0);
    for (hyp, reference) in hypotheses.iter().zip(references) {
        sys_len += hyp.len();
        ref_len += reference.len();
        for n in 1..=cfg.max_n {
            let ref_counts = ngram_counts(reference, n);
            for (gram, count) in ngram_counts(hyp, n) {
                matched[n - 1] += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            }
            total[n - 1] += hyp.len().saturating_sub(n - 1);
        }
    }

    let mut precisions = Vec::with_capacity(cfg.max_n);
    let mut zero_precision_order = None;
    for n in 1..=cfg.max_n {
        let (mut m, mut t) = (matched[n - 1] as f64, total[n - 1] as f64);
        if let Smoothing::AddK(k) = cfg.smoothing {
            if n > 1 {
                m += k;
                t += k;
            }
        }
        let p = if t > 0.0 { m / t } else { 0.0 };
        if p == 0.0 && zero_precision_order.is_none() {
            zero_precision_order = Some(n);
        }
        precisions.push(p);
    }

    let brevity_penalty = if sys_len == 0 {
        0.0
    } else if sys_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / sys_len as f64).exp()
    };
    let score = if zero_precision_order.is_some() || sys_len == 0 {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / cfg.max_n as f64;
        100.0 * brevity_penalty * log_mean.exp()
    };
    Ok(BleuScore {
        score,
        precisions,
        brevity_penalty,
        sys_len,
        ref_len,
        zero_precision_order,
    })
}

/// Unsmoothed corpus BLEU with n-grams up to `max_n`.
pub fn corpus_bleu(hypotheses: &[Vec<Token>], references: &[Vec<Token>], max_n: usize) -> Result<f64> {
    let cfg = BleuConfig {
        max_n,
        smoothing: Smoothing::None,
    };
    Ok(corpus_bleu_with(hypotheses, references, &cfg)?.score)
}
