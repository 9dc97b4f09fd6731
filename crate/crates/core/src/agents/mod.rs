//! Incremental model agents.
//!
//! An agent answers decode requests for a growing source prefix. Agents may
//! live in-process ([`ToyAgent`], [`ToyRomanizer`]) or in a separate process
//! speaking the line-delimited JSON protocol ([`ExternalAgent`]).

mod external;
mod romanizer;
mod toy;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeline::{Hypothesis, Token};

pub use external::{ExternalAgent, DEFAULT_TIMEOUT, PROTOCOL_VERSION};
pub use romanizer::{romanize, table_entries as romanizer_table, ToyRomanizer};
pub use toy::{is_decoy_of, toy_decode, ToyAgent, ToySpan, ToyTransducerSpec, DECOY_VARIANTS};

/// End-of-sequence marker. Never committed before the source is complete.
pub const EOS: &str = "</s>";

/// Beam width carried to real agents.
pub const DEFAULT_BEAM: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Decode,
    DualDecode,
    Reset,
    Close,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRequest {
    pub kind: RequestKind,
    #[serde(rename = "frames")]
    pub frames_available: usize,
    #[serde(rename = "committed")]
    pub committed_prefix: Vec<Token>,
    pub beam: u32,
    /// Input text for `dual_decode`; the estimator's "frames" are its tokens.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<Vec<Token>>,
}

impl AgentRequest {
    pub fn decode(frames: usize, committed: &[Token], beam: u32) -> Self {
        Self {
            kind: RequestKind::Decode,
            frames_available: frames,
            committed_prefix: committed.to_vec(),
            beam,
            source: None,
        }
    }

    pub fn dual_decode(text: &[Token], committed_phonemes: &[Token]) -> Self {
        Self {
            kind: RequestKind::DualDecode,
            frames_available: text.len(),
            committed_prefix: committed_phonemes.to_vec(),
            beam: 1,
            source: Some(text.to_vec()),
        }
    }

    pub fn control(kind: RequestKind) -> Self {
        Self {
            kind,
            frames_available: 0,
            committed_prefix: Vec::new(),
            beam: 1,
            source: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentResponse {
    pub tokens: Vec<Token>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<Vec<Vec<f64>>>,
    /// Per-head attention (heads x tokens x frames), averaged by the client
    /// when the policy asks for head aggregation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention_heads: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, rename = "aux", skip_serializing_if = "Option::is_none")]
    pub aux_tokens: Option<Vec<Token>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compute_ms: Option<f64>,
}

/// Anything that can answer protocol requests.
pub trait Agent {
    fn call(&mut self, request: &AgentRequest) -> Result<AgentResponse>;

    fn reset(&mut self) -> Result<()> {
        self.call(&AgentRequest::control(RequestKind::Reset)).map(|_| ())
    }
}

impl<A: Agent + ?Sized> Agent for Box<A> {
    fn call(&mut self, request: &AgentRequest) -> Result<AgentResponse> {
        (**self).call(request)
    }

    fn reset(&mut self) -> Result<()> {
        (**self).reset()
    }
}

/// How per-head attention is turned into one row per token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionAggregation {
    #[default]
    Given,
    MeanOverHeads,
}

/// Element-wise mean over heads.
pub fn mean_over_heads(heads: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
    let Some(first) = heads.first() else {
        return Err(Error::MissingAttention);
    };
    let mut out = first.clone();
    for head in &heads[1..] {
        if head.len() != out.len() || head.iter().zip(&out).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::BadAttentionShape {
                rows: head.len(),
                cols: head.first().map_or(0, Vec::len),
                expected_rows: out.len(),
                expected_cols: out.first().map_or(0, Vec::len),
            });
        }
        for (row, hrow) in out.iter_mut().zip(head) {
            for (x, h) in row.iter_mut().zip(hrow) {
                *x += h;
            }
        }
    }
    let n = heads.len() as f64;
    for row in &mut out {
        for x in row.iter_mut() {
            *x /= n;
        }
    }
    Ok(out)
}

const ROW_SUM_TOL: f64 = 1e-6;
const ROW_RENORM_TOL: f64 = 1e-3;

/// Checks the attention shape (`|tokens| x frames`) and that every row is a
/// probability vector. Rows off by at most 1e-3 are renormalized.
pub fn validate_attention(mut resp: AgentResponse, frames: usize) -> Result<AgentResponse> {
    let Some(att) = resp.attention.as_mut() else {
        return Err(Error::MissingAttention);
    };
    let rows = resp.tokens.len();
    let bad_shape = |att: &Vec<Vec<f64>>, cols: usize| Error::BadAttentionShape {
        rows: att.len(),
        cols,
        expected_rows: rows,
        expected_cols: frames,
    };
    if att.len() != rows {
        let cols = att.first().map_or(0, Vec::len);
        return Err(bad_shape(att, cols));
    }
    if let Some(row) = att.iter().find(|r| r.len() != frames) {
        let cols = row.len();
        return Err(bad_shape(att, cols));
    }
    for (i, row) in att.iter_mut().enumerate() {
        if let Some(x) = row.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::NonStochasticRow {
                row: i,
                reason: format!("entry {x} is negative or not finite"),
            });
        }
        let sum: f64 = row.iter().sum();
        let dev = (sum - 1.0).abs();
        if dev <= ROW_SUM_TOL {
            continue;
        }
        // 1e-12 slack so that e.g. a row summing to 0.999 counts as within 1e-3.
        if dev <= ROW_RENORM_TOL + 1e-12 && sum > 0.0 {
            for x in row.iter_mut() {
                *x /= sum;
            }
        } else {
            return Err(Error::NonStochasticRow {
                row: i,
                reason: format!("sums to {sum}"),
            });
        }
    }
    Ok(resp)
}

/// Turns a raw decode response into a checked hypothesis: applies head
/// aggregation, validates attention, and enforces that the committed prefix
/// was preserved.
pub fn checked_hypothesis(
    mut resp: AgentResponse,
    frames: usize,
    committed: &[Token],
    aggregation: AttentionAggregation,
) -> Result<Hypothesis> {
    if aggregation == AttentionAggregation::MeanOverHeads {
        if let Some(heads) = resp.attention_heads.take() {
            resp.attention = Some(mean_over_heads(&heads)?);
        }
    }
    if let Some(pos) = committed
        .iter()
        .zip(resp.tokens.iter().map(Some).chain(std::iter::repeat(None)))
        .position(|(c, t)| t != Some(c))
    {
        return Err(Error::PrefixConflict { position: pos });
    }
    let resp = if resp.attention.is_some() {
        validate_attention(resp, frames)?
    } else {
        resp
    };
    Ok(Hypothesis {
        tokens: resp.tokens,
        attention: resp.attention,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resp(tokens: &[&str], att: Vec<Vec<f64>>) -> AgentResponse {
        AgentResponse {
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            attention: Some(att),
            ..Default::default()
        }
    }

    #[test]
    fn accepts_stochastic_rows() {
        let r = resp(&["a", "b"], vec![vec![0.1, 0.2, 0.3, 0.4]; 2]);
        let ok = validate_attention(r.clone(), 4).unwrap();
        assert_eq!(ok, r);
    }

    #[test]
    fn renormalizes_slightly_off_rows() {
        let r = resp(&["a"], vec![vec![0.1, 0.2, 0.3, 0.399]]);
        let ok = validate_attention(r, 4).unwrap();
        let row = &ok.attention.unwrap()[0];
        let expected = [0.1 / 0.999, 0.2 / 0.999, 0.3 / 0.999, 0.399 / 0.999];
        for (x, e) in row.iter().zip(expected) {
            assert!((x - e).abs() < 1e-12);
        }
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_rows_and_shapes() {
        let r = resp(&["a"], vec![vec![-0.1, 0.5, 0.3, 0.3]]);
        assert!(matches!(
            validate_attention(r, 4),
            Err(Error::NonStochasticRow { row: 0, .. })
        ));
        let r = resp(&["a"], vec![vec![0.5, 0.4]]);
        assert!(matches!(validate_attention(r, 2), Err(Error::NonStochasticRow { .. })));
        let r = resp(&["a", "b"], vec![vec![0.5, 0.5]]);
        assert!(matches!(validate_attention(r, 2), Err(Error::BadAttentionShape { .. })));
        let r = resp(&["a"], vec![vec![0.5, 0.5]]);
        assert!(matches!(validate_attention(r, 3), Err(Error::BadAttentionShape { .. })));
    }

    #[test]
    fn head_mean() {
        let heads = vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]];
        assert_eq!(mean_over_heads(&heads).unwrap(), vec![vec![0.5, 0.5]]);
    }

    #[test]
    fn prefix_enforcement() {
        let committed: Vec<Token> = vec!["a".into(), "b".into()];
        let r = AgentResponse {
            tokens: vec!["a".into(), "x".into(), "c".into()],
            ..Default::default()
        };
        assert!(matches!(
            checked_hypothesis(r, 0, &committed, AttentionAggregation::Given),
            Err(Error::PrefixConflict { position: 1 })
        ));
        let r = AgentResponse {
            tokens: vec!["a".into()],
            ..Default::default()
        };
        assert!(matches!(
            checked_hypothesis(r, 0, &committed, AttentionAggregation::Given),
            Err(Error::PrefixConflict { position: 1 })
        ));
    }

    #[test]
    fn request_wire_format() {
        let req = AgentRequest::decode(10, &[], 5);
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"kind":"decode","frames":10,"committed":[],"beam":5}"#
        );
        let resp: AgentResponse =
            serde_json::from_str(r#"{"tokens":["a"],"attention":[[1.0]],"compute_ms":3.5}"#).unwrap();
        assert_eq!(resp.compute_ms, Some(3.5));
        assert_eq!(resp.aux_tokens, None);
    }
}
