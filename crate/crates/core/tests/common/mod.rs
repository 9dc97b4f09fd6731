//! Brute-force reference implementations and random fixtures shared by the
//! integration tests. The oracles follow the definitional sums directly and
//! do not call into the library's metric code.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use simulst::agents::{
    checked_hypothesis, Agent, AgentRequest, AttentionAggregation, ToyAgent, ToySpan, ToyTransducerSpec, EOS,
};
use simulst::corpus::{Session, SessionAgent};
use simulst::policy::PolicyConfig;
use simulst::timeline::Token;
use simulst::EmissionLog;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn oracle_al(d: &[f64], t: f64, norm_len: usize) -> f64 {
    let mut tau = d.len();
    for (j, &dj) in d.iter().enumerate() {
        if dj >= t {
            tau = j + 1;
            break;
        }
    }
    let step = t / norm_len as f64;
    let mut sum = 0.0;
    for j in 1..=tau {
        sum += d[j - 1] - (j - 1) as f64 * step;
    }
    sum / tau as f64
}

pub fn oracle_ap(d: &[f64], t: f64) -> f64 {
    let mut sum = 0.0;
    for &x in d {
        sum += x;
    }
    sum / (d.len() as f64 * t)
}

pub fn oracle_dal(d: &[f64], t: f64) -> f64 {
    let step = t / d.len() as f64;
    let mut g = Vec::with_capacity(d.len());
    for (j, &x) in d.iter().enumerate() {
        let v = if j == 0 { x } else { x.max(g[j - 1] + step) };
        g.push(v);
    }
    let mut sum = 0.0;
    for (j, gj) in g.iter().enumerate() {
        sum += gj - j as f64 * step;
    }
    sum / d.len() as f64
}

/// Source of duration `t` cut into `seg`-ms tokens; returns their end times.
pub fn oracle_source_tokens(t: f64, seg: f64) -> Vec<f64> {
    let mut ends = Vec::new();
    let mut start = 0.0;
    while start < t - 1e-9 {
        ends.push((start + seg).min(t));
        start += seg;
    }
    ends
}

pub fn oracle_atd(source_ends: &[f64], target_ends: &[f64]) -> f64 {
    let mut sum = 0.0;
    for (j, y) in target_ends.iter().enumerate() {
        let a = (j + 1).min(source_ends.len());
        sum += y - source_ends[a - 1];
    }
    sum / target_ends.len() as f64
}

/// Random finalized log: `1..=max_tokens` tokens in random commit groups,
/// `T <= max_t`, CA delays with accumulated random compute.
pub fn random_log(rng: &mut impl Rng, max_tokens: usize, max_t: f64) -> EmissionLog {
    let t = rng.random_range(1.0..=max_t);
    let n = rng.random_range(1..=max_tokens);
    let mut delays: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=t)).collect();
    delays.sort_by(f64::total_cmp);
    let reference_len = rng.random_range(1..=max_tokens + 2);
    let mut log = EmissionLog::new(t).with_reference(Some((0..reference_len).map(|i| format!("r{i}")).collect()));
    let mut compute = 0.0;
    let mut j = 0;
    while j < n {
        let size = rng.random_range(1..=n - j);
        compute += rng.random_range(0.0..200.0);
        let d = delays[j + size - 1];
        let tokens = (j..j + size).map(|i| format!("y{i}")).collect();
        log.record_commit(tokens, d, d + compute).unwrap();
        j += size;
    }
    log.finalize(t).unwrap();
    log
}

/// Random toy spec with `frames_per_token` in `[lo, hi]`.
pub fn random_spec(rng: &mut impl Rng, tokens: usize, lo: usize, hi: usize, k: usize) -> ToyTransducerSpec {
    let mut end = 0;
    let entries = (0..tokens)
        .map(|i| {
            let start = end + 1;
            end += rng.random_range(lo..=hi);
            ToySpan {
                start,
                end,
                token: format!("w{i}"),
            }
        })
        .collect();
    ToyTransducerSpec {
        source_frames: end + rng.random_range(0..=4),
        entries,
        instability: k,
        seed: rng.random(),
    }
}

/// Toy sessions with 40 ms frames.
pub fn random_sessions(seed: u64, count: usize, k_max: usize) -> Vec<Session> {
    let mut r = rng(seed);
    (0..count)
        .map(|i| {
            let tokens = r.random_range(3..=14);
            let k = r.random_range(0..=k_max);
            let spec = random_spec(&mut r, tokens, 2, 12, k);
            let total = spec.source_frames as f64 * 40.0;
            Session::toy(format!("s{i}"), total, spec).unwrap()
        })
        .collect()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

pub fn toy_agent(s: &Session) -> ToyAgent {
    match &s.agent {
        SessionAgent::Toy(spec) => ToyAgent::new(spec.clone()).unwrap(),
        _ => unreachable!(),
    }
}

/// Steps a policy by hand; per round returns the hypothesis, the committed
/// prefix after the step, the frames read, and whether it was final.
pub fn trace(s: &Session, policy: &PolicyConfig) -> Vec<(Vec<Token>, Vec<Token>, usize, bool)> {
    let mut agent = toy_agent(s);
    let mut state = policy.start();
    let bounds = s.source.chunk_boundaries(policy.chunk_ms());
    let mut out = Vec::new();
    for (k, &t) in bounds.iter().enumerate() {
        let is_final = k + 1 == bounds.len();
        let frames = if is_final {
            s.source.frame_count()
        } else {
            s.source.frames_available(t)
        };
        let resp = agent.call(&AgentRequest::decode(frames, state.committed(), 5)).unwrap();
        let mut hyp = checked_hypothesis(resp, frames, state.committed(), AttentionAggregation::Given).unwrap();
        hyp.truncate_at(EOS);
        state.step(&hyp, frames, is_final).unwrap();
        out.push((hyp.tokens.clone(), state.committed().to_vec(), frames, is_final));
    }
    out
}
