use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeline::{ceil_div, DelayMode, EmissionLog, TIME_EPS_MS};

/// Segment length used to turn speech into ATD tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtdConfig {
    pub segment_ms: f64,
}

impl Default for AtdConfig {
    fn default() -> Self {
        Self { segment_ms: 300.0 }
    }
}

impl AtdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segment_ms > 0.0 && self.segment_ms.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "segment_ms must be positive, got {}",
                self.segment_ms
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayMetricsResult {
    pub mode: DelayMode,
    pub al: f64,
    /// Absent when the log carries no reference.
    pub laal: Option<f64>,
    pub ap: f64,
    pub dal: f64,
    pub atd: f64,
    pub start_offset: f64,
    pub end_offset: f64,
    /// 1-based index of the first token emitted with the full source read.
    pub tau: usize,
    /// `T / N`, the ideal spacing between target tokens.
    pub gamma_step: f64,
}

fn delays(log: &EmissionLog, mode: DelayMode) -> Result<Vec<f64>> {
    if !log.is_finalized() {
        return Err(Error::NotFinalized);
    }
    let d = log.token_delays(mode);
    if d.is_empty() {
        return Err(Error::EmptyLog);
    }
    Ok(d)
}

/// Lagging average over tokens up to the cutoff `tau`, with ideal spacing
/// `total_ms / norm_len`. Returns `(value, tau)`.
pub fn average_lagging(delays: &[f64], total_ms: f64, norm_len: usize) -> (f64, usize) {
    let step = total_ms / norm_len as f64;
    let tau = delays
        .iter()
        .position(|&d| d >= total_ms - TIME_EPS_MS)
        .map_or(delays.len(), |i| i + 1);
    let sum: f64 = delays[..tau].iter().enumerate().map(|(i, d)| d - i as f64 * step).sum();
    (sum / tau as f64, tau)
}

pub fn compute_al(log: &EmissionLog, mode: DelayMode) -> Result<f64> {
    let d = delays(log, mode)?;
    Ok(average_lagging(&d, log.source_duration_ms, d.len()).0)
}

/// AL with the spacing normalized by `max(N, N_ref)`.
pub fn compute_laal(log: &EmissionLog, mode: DelayMode) -> Result<f64> {
    let reference = log.reference_tokens.as_ref().ok_or(Error::MissingReference)?;
    let d = delays(log, mode)?;
    let norm = d.len().max(reference.len());
    Ok(average_lagging(&d, log.source_duration_ms, norm).0)
}

pub fn compute_ap(log: &EmissionLog, mode: DelayMode) -> Result<f64> {
    let d = delays(log, mode)?;
    let t = log.source_duration_ms;
    if t <= 0.0 {
        return Err(Error::ZeroDuration);
    }
    Ok(d.iter().sum::<f64>() / (d.len() as f64 * t))
}

/// Differentiable AL over a delay sequence.
pub fn differentiable_lagging(delays: &[f64], total_ms: f64) -> f64 {
    let step = total_ms / delays.len() as f64;
    let mut prev: Option<f64> = None;
    let mut sum = 0.0;
    for (i, &d) in delays.iter().enumerate() {
        let g = match prev {
            None => d,
            Some(p) => d.max(p + step),
        };
        sum += g - i as f64 * step;
        prev = Some(g);
    }
    sum / delays.len() as f64
}

pub fn compute_dal(log: &EmissionLog, mode: DelayMode) -> Result<f64> {
    let d = delays(log, mode)?;
    Ok(differentiable_lagging(&d, log.source_duration_ms))
}

/// End times of `ceil(T / segment_ms)` source segments.
pub fn segment_source(total_ms: f64, cfg: &AtdConfig) -> Vec<f64> {
    let count = ceil_div(total_ms, cfg.segment_ms);
    (1..=count).map(|i| (i as f64 * cfg.segment_ms).min(total_ms)).collect()
}

/// End times of the pieces of one played speech interval `[start, end]`.
pub fn segment_interval(start_ms: f64, end_ms: f64, cfg: &AtdConfig) -> Vec<f64> {
    let count = ceil_div(end_ms - start_ms, cfg.segment_ms);
    (1..=count)
        .map(|i| (start_ms + i as f64 * cfg.segment_ms).min(end_ms))
        .collect()
}

/// Default correspondence: target `j` pairs with source `min(j, |X|)` (1-based).
pub fn capped_pairing(j: usize, source_len: usize) -> usize {
    j.min(source_len)
}

/// Mean end-time difference between each target token and its paired
/// source token. `pairing(j, |X|)` maps 1-based target to source indices.
pub fn compute_atd_with(
    source_ends: &[f64],
    target_ends: &[f64],
    pairing: impl Fn(usize, usize) -> usize,
) -> Result<f64> {
    if target_ends.is_empty() {
        return Err(Error::EmptyTimeline);
    }
    if source_ends.is_empty() {
        return Err(Error::ZeroDuration);
    }
    let sum: f64 = target_ends
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let a = pairing(i + 1, source_ends.len()).clamp(1, source_ends.len());
            y - source_ends[a - 1]
        })
        .sum();
    Ok(sum / target_ends.len() as f64)
}

pub fn compute_atd(source_ends: &[f64], target_ends: &[f64]) -> Result<f64> {
    compute_atd_with(source_ends, target_ends, capped_pairing)
}

/// ATD of a text log: text tokens keep their commit times.
pub fn compute_text_atd(log: &EmissionLog, mode: DelayMode, cfg: &AtdConfig) -> Result<f64> {
    cfg.validate()?;
    let d = delays(log, mode)?;
    compute_atd(&segment_source(log.source_duration_ms, cfg), &d)
}

/// `(Start_Offset, End_Offset)` of a text log: first emission time, and last
/// emission time relative to the end of the source.
pub fn compute_text_offsets(log: &EmissionLog, mode: DelayMode) -> Result<(f64, f64)> {
    let d = delays(log, mode)?;
    Ok((d[0], d[d.len() - 1] - log.source_duration_ms))
}

/// Every delay metric for one log.
pub fn compute_delay_metrics(log: &EmissionLog, mode: DelayMode, atd: &AtdConfig) -> Result<DelayMetricsResult> {
    let d = delays(log, mode)?;
    let t = log.source_duration_ms;
    let (al, tau) = average_lagging(&d, t, d.len());
    let laal = match log.reference_tokens {
        Some(_) => Some(compute_laal(log, mode)?),
        None => None,
    };
    let (start_offset, end_offset) = compute_text_offsets(log, mode)?;
    Ok(DelayMetricsResult {
        mode,
        al,
        laal,
        ap: compute_ap(log, mode)?,
        dal: differentiable_lagging(&d, t),
        atd: compute_text_atd(log, mode, atd)?,
        start_offset,
        end_offset,
        tau,
        gamma_step: t / d.len() as f64,
    })
}
