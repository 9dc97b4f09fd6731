mod common;

use proptest::prelude::*;

use common::*;
use simulst::corpus::SessionAgent;
use simulst::policy::{alignatt_round, la_commit_step, AlignAttConfig, LaConfig, LaState, PolicyConfig};
use simulst::simulator::{run_session, ClockModel};
use simulst::timeline::{lcp, Token};
use simulst::DelayMode;

#[test]
fn la_commits_are_append_only() {
    for s in random_sessions(11, 60, 8) {
        for n in 1..=3 {
            for chunk in [200.0, 500.0, 1000.0] {
                let rounds = trace(&s, &PolicyConfig::La(LaConfig::new(n, chunk)));
                let mut prev: Vec<Token> = Vec::new();
                for (_, committed, _, _) in &rounds {
                    assert!(committed.starts_with(&prev));
                    prev = committed.clone();
                }
            }
        }
    }
}

#[test]
fn la1_commits_every_hypothesis() {
    for s in random_sessions(12, 60, 8) {
        for (hyp, committed, _, _) in trace(&s, &PolicyConfig::La(LaConfig::new(1, 300.0))) {
            assert_eq!(hyp, committed);
        }
    }
}

#[test]
fn stable_agent_la_matches_offline() {
    for s in random_sessions(13, 60, 0) {
        let SessionAgent::Toy(spec) = &s.agent else {
            unreachable!()
        };
        for n in 1..=3 {
            for chunk in [200.0, 500.0, 1000.0] {
                let mut agent = toy_agent(&s);
                let log = run_session(
                    &s.source,
                    &mut agent,
                    &PolicyConfig::La(LaConfig::new(n, chunk)),
                    &ClockModel::ideal(),
                )
                .unwrap();
                assert_eq!(log.output_tokens(), spec.offline_tokens());
            }
        }
    }
}

#[test]
fn alignatt_rounds_match_brute_force() {
    for s in random_sessions(14, 60, 8) {
        let SessionAgent::Toy(spec) = &s.agent else {
            unreachable!()
        };
        for f in [1, 2, 4, 8] {
            let rounds = trace(&s, &PolicyConfig::AlignAtt(AlignAttConfig::new(f, 400.0)));
            let mut before = 0;
            for (hyp, committed, frames, is_final) in rounds {
                let expected = if is_final {
                    hyp.len()
                } else {
                    let mut j = before;
                    while j < hyp.len() && spec.entries[j].end + f <= frames {
                        j += 1;
                    }
                    j
                };
                assert_eq!(committed.len(), expected, "f={f} frames={frames}");
                before = committed.len();
            }
        }
    }
}

#[test]
fn alignatt_delays_grow_with_f() {
    for s in random_sessions(15, 40, 8) {
        let mut prev: Option<Vec<f64>> = None;
        for f in 1..=12 {
            let mut agent = toy_agent(&s);
            let cfg = PolicyConfig::AlignAtt(AlignAttConfig::new(f, 800.0));
            let d = run_session(&s.source, &mut agent, &cfg, &ClockModel::ideal())
                .unwrap()
                .token_delays(DelayMode::Ideal);
            if let Some(p) = &prev {
                assert_eq!(p.len(), d.len());
                assert!(p.iter().zip(&d).all(|(a, b)| a <= b), "f={f}");
            }
            prev = Some(d);
        }
    }
}

fn tokens() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c"]).prop_map(String::from), 0..8)
}

proptest! {
    #[test]
    fn lcp_properties(a in tokens(), b in tokens()) {
        prop_assert_eq!(lcp(&a, &b), lcp(&b, &a));
        prop_assert_eq!(lcp(&a, &a), &a[..]);
        prop_assert!(a.starts_with(lcp(&a, &b)));
    }

    #[test]
    fn la_step_output_is_prefix_of_new_hypothesis(extra in prop::collection::vec(tokens(), 1..6), n in 1usize..4) {
        let mut state = LaState::new(LaConfig::new(n, 500.0));
        let mut committed: Vec<String> = Vec::new();
        for e in extra {
            let hyp: Vec<String> = committed.iter().cloned().chain(e).collect();
            let new = la_commit_step(&mut state, &hyp).unwrap();
            committed.extend(new);
            prop_assert!(hyp.starts_with(&committed));
        }
    }

    #[test]
    fn alignatt_emits_a_prefix_below_the_limit(ends in prop::collection::vec(1usize..20, 1..8), f in 1usize..6) {
        let frames = 20;
        let toks: Vec<String> = (0..ends.len()).map(|i| format!("t{i}")).collect();
        let att = ends.iter().map(|&e| { let mut r = vec![0.0; frames]; r[e - 1] = 1.0; r }).collect();
        let hyp = simulst::Hypothesis::with_attention(toks, att);
        let r = alignatt_round(&hyp, frames, &[], f).unwrap();
        let m = r.emitted.len();
        prop_assert!(ends[..m].iter().all(|&e| e <= frames - f));
        prop_assert!(m == ends.len() || ends[m] > frames - f);
    }
}
