mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::Rng;

use changenet::analysis::{check_consistency, reachable};
use changenet::change::{classify, fire_theta, nonfunctional_template, ThetaKind};
use changenet::detection::{AgentState, PollingConfig};
use changenet::hierarchy::{execute_hierarchical, flatten};
use changenet::net::{build_net, enabled, fire, fire_sequence, firing_counts, incidence_matrix, state_equation};
use changenet::reconfig::{apply_rule, build_pnac};
use changenet::scenario::{healthcare_scenario, Fault, FaultChange};
use changenet::simenv::run;
use changenet::{Marking, PlaceId, TokenLabel};

use common::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn state_equation_predicts_plain_firing(seed in any::<u64>()) {
        let mut r = rng(seed);
        let net = random_plain_net(&mut r);
        let m0 = random_plain_marking(&mut r, &net, 3);
        let (seq, markings) = random_walk(&mut r, &net, &m0, 8);
        let matrix = incidence_matrix(&net);
        let counts = firing_counts(&matrix, &seq).unwrap();
        let predicted = state_equation(&m0, &matrix, &counts).unwrap();
        prop_assert_eq!(&predicted, markings.last().unwrap());
        prop_assert_eq!(fire_sequence(&net, &m0, &seq).unwrap(), predicted);
    }

    #[test]
    fn firing_moves_exactly_the_arc_weights(seed in any::<u64>()) {
        let mut r = rng(seed);
        let net = random_plain_net(&mut r);
        let m = random_labeled_marking(&mut r, &net);
        let before = m.clone();
        for t in net.transitions() {
            match fire(&net, &m, t) {
                Ok(next) => {
                    prop_assert!(enabled(&net, &m, t).unwrap());
                    let consumed: u64 = net.inputs(t).values().map(|&w| u64::from(w)).sum();
                    let produced: u64 = net.outputs(t).values().map(|&w| u64::from(w)).sum();
                    prop_assert_eq!(next.total() + consumed, m.total() + produced);
                    for p in net.places() {
                        let delta = i64::from(next.total_in(p)) - i64::from(m.total_in(p));
                        let expected = i64::from(net.outputs(t).get(p).copied().unwrap_or(0))
                            - i64::from(net.inputs(t).get(p).copied().unwrap_or(0));
                        prop_assert_eq!(delta, expected);
                    }
                }
                Err(_) => prop_assert!(!enabled(&net, &m, t).unwrap()),
            }
        }
        // firing never mutates its input
        prop_assert_eq!(m, before);
    }

    #[test]
    fn rewriting_conserves_tokens_and_stays_local(seed in any::<u64>()) {
        let mut r = rng(seed);
        let net = random_plain_net(&mut r);
        let m = random_labeled_marking(&mut r, &net);
        let rule = random_rule(&mut r, &net, "rw");
        let matched = rule.matched.clone();
        let pnac = build_pnac(net.clone(), [rule], Marking::new()).unwrap();
        let (next, m2) = apply_rule(&pnac, "rw", &m).unwrap();
        prop_assert_eq!(m.label_totals(), m2.label_totals());
        prop_assert!(build_net(next.net.to_spec()).is_ok());
        prop_assert_eq!(next.generation, 1);
        for (from, to, w) in net.arcs() {
            if !matched.contains(&from) && !matched.contains(&to) {
                prop_assert_eq!(next.net.arc_weight(&from, &to), Some(w));
            }
        }
        for p in net.places().filter(|p| !matched.contains(p.as_str())) {
            prop_assert!(next.net.has_place(p.as_str()));
            prop_assert_eq!(m.bag(p), m2.bag(p));
        }
        for id in matched.places.keys().chain(matched.transitions.keys()) {
            prop_assert!(!next.net.has_place(id) && !next.net.has_transition(id));
        }
    }

    #[test]
    fn hierarchical_and_flat_execution_agree(seed in any::<u64>()) {
        let mut r = rng(seed);
        let h = random_two_level(&mut r);
        let flat = flatten(&h);
        let fireable: Vec<_> = h.fireable_transitions();
        let flat_ts: Vec<_> = flat.transitions().cloned().collect();
        prop_assert_eq!(&fireable, &flat_ts);
        let m0 = random_plain_marking(&mut r, &flat, 2);
        let mut current = m0;
        for _ in 0..8 {
            let mut next = None;
            for t in &flat_ts {
                let flat_step = fire(&flat, &current, t).ok();
                let hier_step = execute_hierarchical(&h, &current, [t]).ok();
                prop_assert_eq!(&flat_step, &hier_step, "transition {}", t);
                if flat_step.is_some() && (next.is_none() || r.gen_bool(0.5)) {
                    next = flat_step;
                }
            }
            match next {
                Some(m) => current = m,
                None => break,
            }
        }
    }

    #[test]
    fn classify_then_apply_reconstructs_post(seed in any::<u64>()) {
        let mut r = rng(seed);
        let pre = random_descriptor(&mut r, "S");
        let post = random_descriptor(&mut r, "S");
        let events = classify(&pre, &post).unwrap();
        let mut rebuilt = pre.clone();
        for e in &events {
            prop_assert_eq!(&e.service_id, "S");
            e.apply_to(&mut rebuilt);
        }
        prop_assert_eq!(rebuilt, post.clone());
        prop_assert!(classify(&post, &post).unwrap().is_empty());
    }

    #[test]
    fn change_net_stays_one_safe_per_label(kinds in prop::collection::vec(0usize..4, 0..12)) {
        let t = nonfunctional_template("S");
        let mut m = t.initial.clone();
        let mut recorded = std::collections::BTreeSet::new();
        for k in kinds {
            let kind = ThetaKind::NON_FUNCTIONAL[k];
            let event = changenet::change::ThetaEvent {
                kind,
                service_id: "S".into(),
                pre: changenet::change::Snapshot::Flag(true),
                post: changenet::change::Snapshot::Flag(false),
                tick: 0,
            };
            match fire_theta(&t.net, &m, &event) {
                Ok(next) => {
                    prop_assert!(recorded.insert(kind));
                    m = next;
                }
                Err(_) => prop_assert!(recorded.contains(&kind)),
            }
            for (_, bag) in m.iter() {
                prop_assert!(bag.values().all(|&c| c <= 1));
            }
            prop_assert_eq!(m.total(), 4);
        }
    }

    #[test]
    fn reachability_is_monotone_in_the_bound(seed in any::<u64>(), b1 in 1usize..30, extra in 0usize..30) {
        let mut r = rng(seed);
        let net = random_plain_net(&mut r);
        let m0 = random_plain_marking(&mut r, &net, 2);
        let small = reachable(&net, &m0, b1);
        let large = reachable(&net, &m0, b1 + extra);
        prop_assert!(small.markings.iter().all(|m| large.contains(m)));
        prop_assert!(small.contains(&m0));
        for m in &small.markings {
            let w = small.witness(m).unwrap();
            prop_assert_eq!(&fire_sequence(&net, &m0, &w).unwrap(), m);
        }
    }

    #[test]
    fn consistency_witness_reaches_output(seed in any::<u64>()) {
        let mut r = rng(seed);
        let net = random_plain_net(&mut r);
        let m0 = random_plain_marking(&mut r, &net, 2);
        if let Ok(c) = check_consistency(&net, &m0, 2_000) {
            match c.witness {
                Some(w) => {
                    prop_assert!(c.consistent);
                    let end = fire_sequence(&net, &m0, &w).unwrap();
                    prop_assert!(end.total_in(net.p_out()) > 0);
                }
                None => prop_assert!(!c.consistent),
            }
        }
    }
}

/// Depth-first replay: every marking BFS finds is reachable by some
/// sequence the DFS also finds, and nothing else.
#[test]
fn reachability_matches_depth_first_oracle() {
    fn dfs(net: &changenet::Net, m: &Marking, seen: &mut std::collections::HashSet<Marking>) {
        if !seen.insert(m.clone()) {
            return;
        }
        for t in net.transitions() {
            if let Ok(next) = fire(net, m, t) {
                dfs(net, &next, seen);
            }
        }
    }
    let mut checked = 0;
    let mut truncated = 0;
    for seed in 0..200 {
        let mut r = rng(seed);
        let net = random_plain_net(&mut r);
        let m0 = random_plain_marking(&mut r, &net, 2);
        let set = reachable(&net, &m0, 400);
        if set.truncated {
            truncated += 1;
            continue;
        }
        let mut seen = std::collections::HashSet::new();
        dfs(&net, &m0, &mut seen);
        assert_eq!(seen.len(), set.len(), "seed {seed}");
        assert!(seen.iter().all(|m| set.contains(m)), "seed {seed}");
        checked += 1;
    }
    assert!(checked > 50, "only {checked} bounded nets sampled ({truncated} truncated)");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// A persistent fault shows up within one polling interval, plus the
    /// alive timeout for availability losses.
    #[test]
    fn faults_are_detected_within_the_polling_bound(
        at in 0u64..6,
        interval in 1u64..5,
        timeout in 1u64..4,
        which in 0usize..3,
    ) {
        let mut config = healthcare_scenario();
        config.polling = PollingConfig { interval_ticks: interval, alive_timeout_ticks: timeout };
        let (service, change, theta) = match which {
            0 => ("SS", FaultChange::Available(false), "alterAvailability"),
            1 => ("FS", FaultChange::Cost(50.0), "alterCost"),
            _ => ("AS", FaultChange::Reliable(false), "alterReliability"),
        };
        config.fault_schedule.push(Fault { tick: at, service: service.into(), change });
        let trace = run(&config).unwrap();
        let needle = format!("DETECT service={service} theta={theta}");
        let line = trace.lines.iter().find(|l| l.contains(&needle));
        let line = line.expect("fault detected");
        let tick: u64 = line.trim_start_matches("tick=").split(' ').next().unwrap().parse().unwrap();
        let bound = if which == 0 { interval + timeout } else { interval };
        prop_assert!(tick >= at && tick - at <= bound, "{} detected at {} (bound {})", at, tick, bound);
    }
}

#[test]
fn agent_change_nets_rearm_each_cycle() {
    struct Env(BTreeMap<String, changenet::change::ServiceDescriptor>);
    impl changenet::detection::ServiceDirectory for Env {
        fn service_ids(&self) -> Vec<String> {
            self.0.keys().cloned().collect()
        }
        fn alive(&self, id: &str) -> bool {
            self.0[id].available
        }
        fn refresh(&self, id: &str) -> Option<changenet::change::ServiceDescriptor> {
            Some(self.0[id].clone())
        }
    }
    let mut d = changenet::change::ServiceDescriptor::new("S", "R");
    let mut env = Env(BTreeMap::from([("S".to_owned(), d.clone())]));
    let mut agent = AgentState::new(PollingConfig { interval_ticks: 1, alive_timeout_ticks: 1 }, 0.0, [d.clone()]);
    for tick in 1..5u32 {
        d.cost = f64::from(tick);
        env.0.insert("S".into(), d.clone());
        let (next, records) = agent.poll_cycle(&env, u64::from(tick));
        agent = next;
        assert_eq!(records.len(), 1);
        assert!(records[0].fired);
        let after = &records[0].template_marking_after;
        assert_eq!(after.count(&PlaceId::new("PS'C"), &TokenLabel::new("C")), 1);
    }
}
