//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines are always printed.

mod common;

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use changenet::analysis::{check_consistency, reachable, DEFAULT_BOUND};
use changenet::change::{classify, fire_theta, nonfunctional_template, ServiceDescriptor, ThetaKind};
use changenet::detection::{AgentState, PollingConfig, ServiceDirectory};
use changenet::fuzz::fuzz;
use changenet::hierarchy::{execute_hierarchical, flatten, HierarchicalNet};
use changenet::net::{build_net, fire, fire_sequence, firing_counts, incidence_matrix, state_equation, TransitionId};
use changenet::reaction::{Action, Status, TraceEntry};
use changenet::reconfig::{apply_rule, build_pnac};
use changenet::scenario::{healthcare_process, load_scenario_file};
use changenet::simenv::run;
use changenet::{Marking, PlaceId, TokenLabel};
use rand::Rng;

use common::*;

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scenario(name: &str) -> PathBuf {
    workspace().join("scenarios").join(name)
}

type Outcome = Result<String, String>;
type Mutation = (ThetaKind, fn(&mut ServiceDescriptor), &'static str);
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn template_reproduction() -> Outcome {
    let t = nonfunctional_template("SS");
    let net = &t.net;
    ensure(net.place_count() == 5, || format!("{} places", net.place_count()))?;
    ensure(net.transition_count() == 4, || format!("{} transitions", net.transition_count()))?;
    ensure(net.arc_count() == 8, || format!("{} arcs", net.arc_count()))?;
    let ps = PlaceId::new("PS");
    let labels: Vec<String> = t.initial.bag(&ps).map(|b| b.keys().map(|l| l.to_string()).collect()).unwrap_or_default();
    ensure(labels == ["A", "C", "R", "Re"] && t.initial.total() == 4, || format!("initial {}", t.initial))?;
    let after = fire(net, &t.initial, &TransitionId::new("TA")).map_err(|e| e.to_string())?;
    let a = TokenLabel::new("A");
    ensure(after.count(&PlaceId::new("PS'A"), &a) == 1 && after.count(&ps, &a) == 0, || format!("after TA {after}"))?;
    ensure(after.total_in(&ps) == 3, || format!("after TA {after}"))?;
    Ok("5 places, 4 transitions, 8 arcs; TA moves A from PS to PS'A".into())
}

struct Scripted(std::collections::BTreeMap<String, ServiceDescriptor>);

impl ServiceDirectory for Scripted {
    fn service_ids(&self) -> Vec<String> {
        self.0.keys().cloned().collect()
    }
    fn alive(&self, id: &str) -> bool {
        self.0.get(id).is_some_and(|s| s.available)
    }
    fn refresh(&self, id: &str) -> Option<ServiceDescriptor> {
        self.0.get(id).filter(|s| s.available).cloned()
    }
}

fn theta_coverage() -> Outcome {
    let base = ServiceDescriptor::new("S", "R");
    let template = nonfunctional_template("S");
    let mutations: [Mutation; 4] = [
        (ThetaKind::AlterAvailability, |d| d.available = false, "PS'A"),
        (ThetaKind::AlterReliability, |d| d.reliable = false, "PS'R"),
        (ThetaKind::AlterCost, |d| d.cost = 5.0, "PS'C"),
        (ThetaKind::AlterResponsiveness, |d| d.responsiveness = 9.0, "PS'Re"),
    ];
    for (kind, mutate, place) in mutations {
        let mut post = base.clone();
        mutate(&mut post);
        let events = classify(&base, &post).map_err(|e| e.to_string())?;
        ensure(events.len() == 1 && events[0].kind == kind, || format!("{kind}: {events:?}"))?;
        let after = fire_theta(&template.net, &template.initial, &events[0]).map_err(|e| e.to_string())?;
        let moved: Vec<_> = after.places().filter(|p| p.as_str() != "PS").map(|p| p.to_string()).collect();
        ensure(moved == [place], || format!("{kind} recorded in {moved:?}"))?;
    }

    let mut violations = 0;
    let mut records = 0;
    for seed in 0..1000 {
        let mut r = rng(seed);
        let mut d = ServiceDescriptor::new("S", "R");
        let mut env = Scripted([("S".to_owned(), d.clone())].into());
        let mut agent = AgentState::new(
            PollingConfig {
                interval_ticks: 1,
                alive_timeout_ticks: 1,
            },
            0.0,
            [d.clone()],
        );
        for tick in 1..=8 {
            for _ in 0..r.gen_range(0..3) {
                match r.gen_range(0..4) {
                    0 => d.available = !d.available,
                    1 => d.reliable = !d.reliable,
                    2 => d.cost = f64::from(r.gen_range(0..4u32)),
                    _ => d.responsiveness = f64::from(r.gen_range(0..4u32)),
                }
            }
            env.0.insert("S".into(), d.clone());
            let (next, out) = agent.poll_cycle(&env, tick);
            agent = next;
            let mut kinds = BTreeSet::new();
            for rec in &out {
                records += 1;
                let one_safe = rec.template_marking_after.iter().all(|(_, bag)| bag.values().all(|&c| c <= 1));
                // each kind fires at most once per cycle and only in its own branch
                if !one_safe || !kinds.insert(rec.event.kind) || !rec.fired {
                    violations += 1;
                }
            }
        }
    }
    ensure(violations == 0, || format!("{violations} violations over {records} records"))?;
    Ok(format!("4 kinds recorded independently; 1000 streams, {records} records, 0 violations"))
}

fn state_equation_oracle() -> Outcome {
    let mut mismatches = 0;
    let mut firings = 0;
    for seed in 0..100 {
        let mut r = rng(1_000 + seed);
        let net = random_plain_net(&mut r);
        let m0 = random_plain_marking(&mut r, &net, 3);
        let (seq, _) = random_walk(&mut r, &net, &m0, 8);
        firings += seq.len();
        let matrix = incidence_matrix(&net);
        let simulated = fire_sequence(&net, &m0, &seq).map_err(|e| e.to_string())?;
        let counts = firing_counts(&matrix, &seq).map_err(|e| e.to_string())?;
        let predicted = state_equation(&m0, &matrix, &counts).map_err(|e| e.to_string())?;
        if simulated != predicted {
            mismatches += 1;
        }
    }
    ensure(mismatches == 0, || format!("{mismatches} mismatches"))?;
    Ok(format!("100 nets, {firings} firings, 0 mismatches"))
}

fn rewriting_conservation() -> Outcome {
    let mut violations = Vec::new();
    for seed in 0..200 {
        let mut r = rng(5_000 + seed);
        let net = random_plain_net(&mut r);
        let m = random_labeled_marking(&mut r, &net);
        let rule = random_rule(&mut r, &net, "rw");
        let result = build_pnac(net, [rule], Marking::new())
            .and_then(|p| apply_rule(&p, "rw", &m));
        match result {
            Ok((next, m2)) => {
                if m.label_totals() != m2.label_totals() {
                    violations.push(format!("seed {seed}: totals changed"));
                }
                if build_net(next.net.to_spec()).is_err() {
                    violations.push(format!("seed {seed}: invalid net"));
                }
            }
            Err(e) => violations.push(format!("seed {seed}: {e}")),
        }
    }
    ensure(violations.is_empty(), || violations.join("; "))?;
    Ok("200 applications, per-label totals preserved, all nets valid".into())
}

/// Is the output place reachable by firing directly on the hierarchy?
fn hierarchical_consistency(h: &HierarchicalNet, initial: &Marking, p_out: &PlaceId) -> bool {
    let ts = h.fireable_transitions();
    let mut seen = HashSet::from([initial.clone()]);
    let mut queue = VecDeque::from([initial.clone()]);
    while let Some(m) = queue.pop_front() {
        if m.total_in(p_out) > 0 {
            return true;
        }
        for t in &ts {
            if let Ok(next) = execute_hierarchical(h, &m, [t]) {
                if seen.insert(next.clone()) {
                    queue.push_back(next);
                }
            }
        }
    }
    false
}

fn flattening_equivalence() -> Outcome {
    let mut mismatches = Vec::new();
    let mut steps = 0;
    for seed in 0..50 {
        let mut r = rng(9_000 + seed);
        let h = random_two_level(&mut r);
        let flat = flatten(&h);
        if h.fireable_transitions() != flat.transitions().cloned().collect::<Vec<_>>() {
            mismatches.push(format!("seed {seed}: transition sets differ"));
            continue;
        }
        let mut current = random_plain_marking(&mut r, &flat, 2);
        for _ in 0..8 {
            let mut enabled = Vec::new();
            for t in flat.transitions() {
                let a = fire(&flat, &current, t).ok();
                let b = execute_hierarchical(&h, &current, [t]).ok();
                steps += 1;
                if a != b {
                    mismatches.push(format!("seed {seed}: {t} differs at {current}"));
                }
                enabled.extend(a);
            }
            if enabled.is_empty() {
                break;
            }
            current = enabled.swap_remove(r.gen_range(0..enabled.len()));
        }
    }
    let h = healthcare_process();
    let flat = flatten(&h);
    let initial = Marking::plain(flat.p_in().clone(), 1);
    let flat_verdict = check_consistency(&flat, &initial, DEFAULT_BOUND).map(|c| c.consistent);
    let hier_verdict = hierarchical_consistency(&h, &initial, flat.p_out());
    if flat_verdict != Ok(hier_verdict) {
        mismatches.push(format!("healthcare: flat {flat_verdict:?} vs hierarchical {hier_verdict}"));
    }
    ensure(mismatches.is_empty(), || mismatches.join("; "))?;
    Ok(format!("50 nets, {steps} step comparisons; healthcare verdicts agree ({hier_verdict})"))
}

fn end_to_end_failover() -> Outcome {
    let config = load_scenario_file(&scenario("ss-outage-with-substitute.json")).map_err(|e| e.to_string())?;
    let trace = run(&config).map_err(|e| e.to_string())?;
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/ss-outage-with-substitute.trace");
    let golden = std::fs::read_to_string(&golden_path).map_err(|e| e.to_string())?;
    let text = trace.text();
    let bound = config.polling.interval_ticks + config.polling.alive_timeout_ticks;
    let detect = trace
        .lines
        .iter()
        .find(|l| l.contains("DETECT service=SS theta=alterAvailability"))
        .ok_or("no DETECT line for SS")?;
    let detect_tick: u64 = detect["tick=".len()..detect.find(' ').unwrap()].parse().unwrap();
    ensure((10..=10 + bound).contains(&detect_tick), || format!("detected at {detect_tick}"))?;
    let substitutions: Vec<&String> = trace.lines.iter().filter(|l| l.contains("REACT") && l.contains("action=substitute")).collect();
    ensure(substitutions.len() == 1, || format!("{} substitutions", substitutions.len()))?;
    ensure(substitutions[0].contains("consistent=true"), || substitutions[0].clone())?;
    let cp = trace.state.history.first().ok_or("no rewrite checkpoint")?;
    let consistent = check_consistency(&cp.net, &cp.marking, DEFAULT_BOUND).map(|c| c.consistent);
    ensure(consistent == Ok(true), || format!("post-substitution consistency {consistent:?}"))?;
    ensure(trace.lines.last().map(String::as_str) == Some("RESULT status=Completed generations=1 ticks=15"), || {
        format!("last line {:?}", trace.lines.last())
    })?;
    ensure(text == golden, || "trace differs from the golden file".into())?;
    Ok(format!("DETECT at tick {detect_tick}, one substitution, Completed, golden match"))
}

fn heartbeats(trace: &changenet::simenv::SimTrace) -> Vec<(u64, bool)> {
    trace
        .state
        .trace
        .iter()
        .filter_map(|e| match e {
            TraceEntry::Heartbeat { tick, alive, .. } => Some((*tick, *alive)),
            _ => None,
        })
        .collect()
}

fn actions(trace: &changenet::simenv::SimTrace) -> Vec<Action> {
    trace
        .state
        .trace
        .iter()
        .filter_map(|e| match e {
            TraceEntry::React { action, .. } => Some(*action),
            _ => None,
        })
        .collect()
}

fn heartbeat_bounded_exit() -> Outcome {
    let config = load_scenario_file(&scenario("ss-outage-no-substitute.json")).map_err(|e| e.to_string())?;
    ensure(config.policy.heartbeat_limit == 3, || "limit is not 3".into())?;
    let trace = run(&config).map_err(|e| e.to_string())?;
    let beats = heartbeats(&trace);
    ensure(beats == [(11, false), (12, false), (13, false)], || format!("heartbeats {beats:?}"))?;
    ensure(actions(&trace) == [Action::Pause, Action::Exit], || format!("actions {:?}", actions(&trace)))?;
    ensure(trace.state.status == Status::Exited && trace.exit_code() == 2, || format!("status {}", trace.state.status))?;

    let config = load_scenario_file(&scenario("ss-outage-recovery.json")).map_err(|e| e.to_string())?;
    ensure(config.policy.heartbeat_limit == 10, || "limit is not 10".into())?;
    let trace = run(&config).map_err(|e| e.to_string())?;
    let beats = heartbeats(&trace);
    ensure(beats == [(11, false), (12, false), (13, false), (14, true)], || format!("heartbeats {beats:?}"))?;
    let acts = actions(&trace);
    ensure(acts.starts_with(&[Action::Pause, Action::Resume]), || format!("actions {acts:?}"))?;
    ensure(trace.state.status == Status::Completed, || format!("status {}", trace.state.status))?;
    Ok("limit 3: paused, exited after 3 heartbeats; limit 10: resumed at 4th heartbeat, completed".into())
}

fn reachability_count() -> Outcome {
    let t = nonfunctional_template("S");
    let set = reachable(&t.net, &t.initial, DEFAULT_BOUND);
    ensure(set.len() == 16 && !set.truncated, || format!("{} markings, truncated={}", set.len(), set.truncated))?;
    Ok("16 markings".into())
}

fn determinism() -> Outcome {
    let mut files: Vec<PathBuf> = Vec::new();
    for dir in [workspace().join("scenarios"), workspace().join("scenarios/fixtures")] {
        for entry in std::fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.extension().is_some_and(|e| e == "json") {
                files.push(path);
            }
        }
    }
    files.sort();
    for path in &files {
        let go = || {
            Command::new(env!("CARGO_BIN_EXE_changenet"))
                .arg("run")
                .arg(path)
                .output()
                .map_err(|e| e.to_string())
        };
        let (a, b) = (go()?, go()?);
        ensure(!a.stdout.is_empty() && a.stdout == b.stdout, || format!("{} differs between runs", path.display()))?;
    }
    Ok(format!("{} scenarios byte-identical across two runs", files.len()))
}

fn fuzz_suite() -> Outcome {
    let config = load_scenario_file(&scenario("healthcare-nominal.json")).map_err(|e| e.to_string())?;
    let report = fuzz(&config, 50, 42).map_err(|e| e.to_string())?;
    match report.failure {
        None => Ok(format!("{} schedules, 0 failures", report.cases_run)),
        Some(f) => Err(format!("case {} ({}): {}", f.case, f.violation.invariant, f.violation.detail)),
    }
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("1 change-net template reproduction", Duration::from_secs(1), template_reproduction),
        ("2 handling-change coverage and 1-safety", Duration::from_secs(5), theta_coverage),
        ("3 state-equation oracle", Duration::from_secs(10), state_equation_oracle),
        ("4 rewriting conservation", Duration::from_secs(10), rewriting_conservation),
        ("5 flattening equivalence", Duration::from_secs(10), flattening_equivalence),
        ("6 end-to-end failover", Duration::from_secs(1), end_to_end_failover),
        ("7 heartbeat-bounded exit", Duration::from_secs(1), heartbeat_bounded_exit),
        ("8 reachability count", Duration::from_secs(1), reachability_count),
        ("9 determinism", Duration::from_secs(5), determinism),
        ("10 fuzz suite", Duration::from_secs(60), fuzz_suite),
    ];
    let mut failed = 0;
    for (name, limit, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(msg) if elapsed > limit => Err(format!("{msg}; took {elapsed:.2?}, limit {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(msg) => println!("PASS criterion {name}: {msg} ({elapsed:.2?})"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {name}: {msg} ({elapsed:.2?})");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
