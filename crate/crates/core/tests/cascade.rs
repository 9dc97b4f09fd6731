mod common;

use proptest::prelude::*;

use simulst::agents::{romanize, ToyAgent, ToyRomanizer, ToyTransducerSpec};
use simulst::cascade::{
    handoff, render_timing_diagram, schedule_speech, schedule_with_durations, DualTrackEstimator, HandoffKind,
    HandoffPolicy, SpeechConfig, TtsRequest,
};
use simulst::metrics::compute_text_offsets;
use simulst::policy::{AlignAttConfig, LaConfig, PolicyConfig};
use simulst::simulator::{run_session, ClockModel, CostModel};
use simulst::{DelayMode, EmissionLog, SourceStream, Token};

fn toks(s: &str) -> Vec<Token> {
    s.split_whitespace().map(str::to_string).collect()
}

fn requests() -> impl Strategy<Value = (Vec<TtsRequest>, Vec<f64>)> {
    prop::collection::vec((0.0f64..500.0, 1.0f64..1500.0), 1..12).prop_map(|pairs| {
        let mut t = 0.0;
        let mut reqs = Vec::new();
        let mut durs = Vec::new();
        for (gap, d) in pairs {
            t += gap;
            reqs.push(TtsRequest {
                tokens: toks("x"),
                requested_at_ms: t,
            });
            durs.push(d);
        }
        (reqs, durs)
    })
}

proptest! {
    #[test]
    fn channel_is_exclusive((reqs, durs) in requests(), latency in 0.0f64..100.0) {
        let s = schedule_with_durations(&reqs, &durs, latency).unwrap();
        prop_assert!(s.is_overlap_free());
        prop_assert!((s.total_speech_ms() - durs.iter().sum::<f64>()).abs() < 1e-6);
        for seg in &s.segments {
            prop_assert!(seg.starts_at_ms >= seg.requested_at_ms);
            prop_assert_eq!(seg.ends_at_ms, seg.starts_at_ms + seg.duration_ms);
        }
    }

    #[test]
    fn boundary_gated_flushes_end_at_boundaries(groups in prop::collection::vec(prop::collection::vec(prop::sample::select(vec!["a", "b", "。", "c", ","]), 1..4), 1..8)) {
        let mut log = EmissionLog::new(10_000.0);
        for (i, g) in groups.iter().enumerate() {
            let d = 1000.0 * (i + 1) as f64;
            log.record_commit(g.iter().map(|s| s.to_string()).collect(), d, d).unwrap();
        }
        log.finalize(10_000.0).unwrap();
        let policy = HandoffPolicy::new(HandoffKind::BoundaryGated);
        let reqs = handoff(&log, &policy, DelayMode::Ideal, None).unwrap();
        for r in &reqs[..reqs.len() - 1] {
            prop_assert!(policy.is_boundary(r.tokens.last().unwrap()));
        }
        let all: Vec<Token> = reqs.iter().flat_map(|r| r.tokens.clone()).collect();
        prop_assert_eq!(all, log.output_tokens());
    }
}

fn formula_spec() -> ToyTransducerSpec {
    let text =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/toy/formula.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn formula_log(policy: PolicyConfig) -> EmissionLog {
    let spec = formula_spec();
    let source = SourceStream::with_frame_count(spec.source_frames as f64 * 40.0, spec.source_frames)
        .unwrap()
        .with_reference(spec.offline_tokens());
    let mut agent = ToyAgent::new(spec).unwrap();
    run_session(&source, &mut agent, &policy, &ClockModel::ideal()).unwrap()
}

#[test]
fn estimator_flushes_follow_brute_force_alignatt() {
    let log = formula_log(PolicyConfig::AlignAtt(AlignAttConfig::new(1, 200.0)));
    let policy = HandoffPolicy::new(HandoffKind::EstimatorGated);
    let reqs = handoff(&log, &policy, DelayMode::Ideal, Some(&mut ToyRomanizer::default())).unwrap();

    // Brute force: phoneme i is aligned to the text token it was read from;
    // AlignAtt with f = 1 emits phonemes while their token is not the newest
    // one, and a flush releases text up to the furthest emitted alignment.
    let mut text: Vec<Token> = Vec::new();
    let (mut emitted, mut flushed) = (0, 0);
    let mut expected = Vec::new();
    for (i, c) in log.commits().iter().enumerate() {
        text.extend(c.tokens.iter().cloned());
        let aligned: Vec<usize> = text
            .iter()
            .enumerate()
            .flat_map(|(pos, t)| std::iter::repeat_n(pos + 1, romanize(t).0.len()))
            .collect();
        if i + 1 == log.commits().len() {
            emitted = aligned.len();
        } else {
            while emitted < aligned.len() && aligned[emitted] < text.len() {
                emitted += 1;
            }
        }
        let reach = aligned[..emitted].iter().copied().max().unwrap_or(0);
        if reach > flushed {
            expected.push((text[flushed..reach].to_vec(), c.ideal_delay_ms));
            flushed = reach;
        }
    }
    let got: Vec<_> = reqs.iter().map(|r| (r.tokens.clone(), r.requested_at_ms)).collect();
    assert_eq!(got, expected);
}

#[test]
fn estimator_gating_preserves_output() {
    for policy in [
        PolicyConfig::La(LaConfig::new(2, 200.0)),
        PolicyConfig::AlignAtt(AlignAttConfig::new(1, 200.0)),
    ] {
        let log = formula_log(policy);
        let immediate = handoff(&log, &HandoffPolicy::default(), DelayMode::Ideal, None).unwrap();
        let gated = handoff(
            &log,
            &HandoffPolicy::new(HandoffKind::EstimatorGated),
            DelayMode::Ideal,
            Some(&mut ToyRomanizer::default()),
        )
        .unwrap();
        let flat = |r: &[TtsRequest]| r.iter().flat_map(|x| x.tokens.clone()).collect::<Vec<_>>();
        assert_eq!(flat(&immediate), flat(&gated));
        assert!(gated.len() <= immediate.len());
    }
}

#[test]
fn estimator_tracks_stay_aligned() {
    let mut est = DualTrackEstimator::new(1).unwrap();
    let text = toks("フォーミ ュラワン の 予算 。");
    let mut agent = ToyRomanizer::default();
    for end in 1..=text.len() {
        est.advance(&mut agent, &text[..end], end == text.len()).unwrap();
        assert_eq!(est.result().phonemes.len(), est.result().prosody.len());
    }
    assert_eq!(est.covered(), text.len());
}

#[test]
fn speech_end_offset_is_not_earlier_than_text() {
    for seed in 0..40 {
        let sessions = common::random_sessions(100 + seed, 1, 6);
        let s = &sessions[0];
        let mut agent = s.make_agent().unwrap();
        let clock = ClockModel::computation_aware(CostModel::FixedPerDecode(30.0));
        let log = run_session(
            &s.source,
            agent.as_mut(),
            &PolicyConfig::La(LaConfig::new(2, 400.0)),
            &clock,
        )
        .unwrap();
        for mode in [DelayMode::Ideal, DelayMode::ComputationAware] {
            let reqs = handoff(&log, &HandoffPolicy::default(), mode, None).unwrap();
            let sched = schedule_speech(&reqs, &SpeechConfig::default()).unwrap();
            let (_, text_end) = compute_text_offsets(&log, mode).unwrap();
            let (_, speech_end) = sched.offsets(log.source_duration_ms).unwrap();
            assert!(speech_end >= text_end);
        }
    }
}

#[test]
fn la_and_alignatt_diagrams_differ_only_in_commit_boundaries() {
    let la = formula_log(PolicyConfig::La(LaConfig::new(2, 400.0)));
    let aa = formula_log(PolicyConfig::AlignAtt(AlignAttConfig::new(2, 400.0)));
    assert_eq!(la.output_tokens(), aa.output_tokens());
    let diagram = |log: &EmissionLog| {
        let reqs = handoff(log, &HandoffPolicy::default(), DelayMode::Ideal, None).unwrap();
        let sched = schedule_speech(&reqs, &SpeechConfig::default()).unwrap();
        render_timing_diagram(log, &sched, DelayMode::Ideal)
    };
    let (a, b) = (diagram(&la), diagram(&aa));
    assert_eq!(a.lanes[0], b.lanes[0]);
    assert_ne!(a.lanes[1], b.lanes[1]);
    let text = |d: &simulst::cascade::TimingDiagram| {
        d.lanes[1]
            .spans
            .iter()
            .map(|s| s.label.clone())
            .collect::<Vec<_>>()
            .join(" ")
    };
    assert_eq!(text(&a), text(&b));
}
