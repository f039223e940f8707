//! Seeded random fault schedules checked against cross-module invariants.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{check_consistency, DEFAULT_BOUND};
use crate::net::build_net;
use crate::reaction::{Action, Status, TraceEntry};
use crate::scenario::{Fault, FaultChange, ScenarioConfig, ScenarioError};
use crate::simenv::{run, SimTrace};

/// Latest tick a generated fault may land on.
const LAST_FAULT_TICK: u64 = 20;
const MAX_FAULTS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub invariant: &'static str,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FuzzFailure {
    pub case: u32,
    pub case_seed: u64,
    pub violation: Violation,
    /// The failing scenario with its schedule reduced as far as it still fails.
    pub reproducer: ScenarioConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FuzzReport {
    pub cases_run: u32,
    pub failure: Option<FuzzFailure>,
}

fn violation(invariant: &'static str, detail: impl Into<String>) -> Violation {
    Violation {
        invariant,
        detail: detail.into(),
    }
}

/// Checks a finished run: token conservation and structural validity at
/// every rewrite, consistency unless escalated, bounded pauses, no failed
/// reactions.
pub fn check_invariants(config: &ScenarioConfig, trace: &SimTrace) -> Result<(), Violation> {
    if let Some(line) = trace.lines.iter().find(|l| l.contains(" ERROR ")) {
        return Err(violation("no-errors", line.clone()));
    }
    for cp in &trace.state.history {
        let after = cp.marking.label_totals();
        if after != cp.totals_before {
            return Err(violation(
                "conservation",
                format!("tick {} rules {:?}: {:?} -> {:?}", cp.tick, cp.rules, cp.totals_before, after),
            ));
        }
        if let Err(e) = build_net(cp.net.to_spec()) {
            return Err(violation("structure", format!("tick {}: {e}", cp.tick)));
        }
        if cp.status == Status::Running {
            let consistent = matches!(
                check_consistency(&cp.net, &cp.marking, DEFAULT_BOUND),
                Ok(c) if c.consistent
            );
            if !consistent {
                return Err(violation(
                    "consistency-or-escalation",
                    format!("tick {} rules {:?} left a running, inconsistent net", cp.tick, cp.rules),
                ));
            }
        }
    }
    let mut beats = 0;
    for entry in &trace.state.trace {
        match entry {
            TraceEntry::React {
                action: Action::Pause,
                ..
            } => beats = 0,
            TraceEntry::Heartbeat { tick, .. } => {
                beats += 1;
                if beats > config.policy.heartbeat_limit {
                    return Err(violation(
                        "bounded-pause",
                        format!("heartbeat {beats} at tick {tick} exceeds limit"),
                    ));
                }
            }
            _ => {}
        }
    }
    Ok(())
}

/// Runs `config` twice and checks determinism plus [`check_invariants`].
pub fn check_case(config: &ScenarioConfig) -> Result<Result<(), Violation>, ScenarioError> {
    let first = run(config)?;
    let second = run(config)?;
    if first.lines != second.lines {
        return Ok(Err(violation("determinism", "two runs produced different traces")));
    }
    Ok(check_invariants(config, &first))
}

/// Random faults on the services bound in `base`, layered over its own
/// schedule.
pub fn random_schedule(base: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Vec<Fault> {
    let bindings = base.effective_bindings();
    let targets: Vec<&String> = bindings.keys().collect();
    let last = base.max_ticks.saturating_sub(1).min(LAST_FAULT_TICK);
    let mut schedule = base.fault_schedule.clone();
    if targets.is_empty() {
        return schedule;
    }
    for _ in 0..rng.gen_range(1..=MAX_FAULTS) {
        let service = (*targets.choose(rng).expect("non-empty")).clone();
        let change = match rng.gen_range(0..6) {
            0 => FaultChange::Available(rng.gen_bool(0.3)),
            1 => FaultChange::Reliable(rng.gen_bool(0.3)),
            2 => FaultChange::Cost(f64::from(rng.gen_range(0..50u32))),
            3 => FaultChange::Responsiveness(f64::from(rng.gen_range(10..500u32))),
            4 => FaultChange::BehaviorVersion(rng.gen_range(1..4)),
            _ => {
                let op = bindings[&service].invokes.iter().next().cloned();
                match op {
                    Some(op) => FaultChange::RemoveOperation(op),
                    None => FaultChange::Available(false),
                }
            }
        };
        schedule.push(Fault {
            tick: rng.gen_range(0..=last),
            service,
            change,
        });
    }
    schedule.sort_by_key(|f| f.tick);
    schedule
}

fn with_schedule(base: &ScenarioConfig, schedule: Vec<Fault>) -> ScenarioConfig {
    ScenarioConfig {
        fault_schedule: schedule,
        ..base.clone()
    }
}

/// Drops faults one at a time while the same invariant keeps failing.
pub fn minimize(config: &ScenarioConfig, invariant: &str) -> ScenarioConfig {
    let fails = |c: &ScenarioConfig| {
        matches!(check_case(c), Ok(Err(v)) if v.invariant == invariant)
    };
    let mut current = config.clone();
    let mut i = 0;
    while i < current.fault_schedule.len() {
        let mut schedule = current.fault_schedule.clone();
        schedule.remove(i);
        let candidate = with_schedule(&current, schedule);
        if fails(&candidate) {
            current = candidate;
        } else {
            i += 1;
        }
    }
    current
}

/// Per-case seeds derived from `seed`.
pub fn case_seeds(seed: u64, count: u32) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.gen()).collect()
}

/// Runs `count` random schedules over `base`, stopping at the first failure.
pub fn fuzz(base: &ScenarioConfig, count: u32, seed: u64) -> Result<FuzzReport, ScenarioError> {
    base.validate()?;
    for (case, case_seed) in (0..).zip(case_seeds(seed, count)) {
        let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
        let config = with_schedule(base, random_schedule(base, &mut rng));
        log::debug!("fuzz case {case} seed {case_seed}: {} faults", config.fault_schedule.len());
        if let Err(v) = check_case(&config)? {
            let reproducer = minimize(&config, v.invariant);
            return Ok(FuzzReport {
                cases_run: case + 1,
                failure: Some(FuzzFailure {
                    case,
                    case_seed,
                    violation: v,
                    reproducer,
                }),
            });
        }
    }
    Ok(FuzzReport {
        cases_run: count,
        failure: None,
    })
}

/// Distribution of fault fields in a schedule, for reporting.
pub fn field_histogram(schedule: &[Fault]) -> BTreeMap<&'static str, usize> {
    let mut h = BTreeMap::new();
    for f in schedule {
        *h.entry(f.change.field()).or_insert(0) += 1;
    }
    h
}
