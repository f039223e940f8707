//! Deterministic tick loop hosting simulated member services, scheduled
//! faults, detection, reaction and process execution.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::change::{OperationSignature, ServiceDescriptor};
use crate::detection::{AgentState, ServiceDirectory};
use crate::net::{enabled, fire};
use crate::reaction::{heartbeat_tick, react, OrchestrationState, Status};
use crate::scenario::{Fault, FaultChange, ScenarioConfig, ScenarioError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("unknown service `{0}`")]
    UnknownService(String),
    #[error("service `{0}` is already advertised")]
    AlreadyAdvertised(String),
}

/// The simulated member services, keyed by id.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Environment {
    services: BTreeMap<String, ServiceDescriptor>,
}

impl Environment {
    pub fn new(services: impl IntoIterator<Item = ServiceDescriptor>) -> Self {
        Self {
            services: services.into_iter().map(|s| (s.id.clone(), s)).collect(),
        }
    }

    pub fn service(&self, id: &str) -> Option<&ServiceDescriptor> {
        self.services.get(id)
    }

    pub fn services(&self) -> impl Iterator<Item = &ServiceDescriptor> {
        self.services.values()
    }
}

impl ServiceDirectory for Environment {
    fn service_ids(&self) -> Vec<String> {
        self.services.keys().cloned().collect()
    }

    fn alive(&self, id: &str) -> bool {
        self.services.get(id).is_some_and(|s| s.available)
    }

    fn refresh(&self, id: &str) -> Option<ServiceDescriptor> {
        self.services.get(id).filter(|s| s.available).cloned()
    }
}

/// Applies one scheduled fault, returning the updated environment.
pub fn inject(env: &Environment, fault: &Fault) -> Result<Environment, SimError> {
    let mut next = env.clone();
    if let FaultChange::Advertise(desc) = &fault.change {
        if next.services.contains_key(&desc.id) {
            return Err(SimError::AlreadyAdvertised(desc.id.clone()));
        }
        next.services.insert(desc.id.clone(), (**desc).clone());
        return Ok(next);
    }
    let s = next
        .services
        .get_mut(&fault.service)
        .ok_or_else(|| SimError::UnknownService(fault.service.clone()))?;
    match &fault.change {
        FaultChange::Available(b) => s.available = *b,
        FaultChange::Reliable(b) => s.reliable = *b,
        FaultChange::Cost(x) => s.cost = *x,
        FaultChange::Responsiveness(x) => s.responsiveness = *x,
        FaultChange::BehaviorVersion(v) => s.behavior_version = *v,
        FaultChange::AddOperation(op) => add_operation(s, op),
        FaultChange::RemoveOperation(name) => s.operations.retain(|o| &o.name != name),
        FaultChange::Advertise(_) => unreachable!("handled above"),
    }
    Ok(next)
}

fn add_operation(s: &mut ServiceDescriptor, op: &OperationSignature) {
    s.operations.retain(|o| o.name != op.name);
    s.operations.push(op.clone());
    s.operations.sort();
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct SimTrace {
    pub lines: Vec<String>,
    pub state: OrchestrationState,
    pub agent: AgentState,
    pub environment: Environment,
    /// Ticks executed.
    pub ticks: u64,
    /// Reactions that failed and were skipped.
    pub errors: usize,
}

impl SimTrace {
    pub fn text(&self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }

    pub fn status(&self) -> &Status {
        &self.state.status
    }

    /// 0 completed, 2 exited, 3 still running or paused at `max_ticks`.
    pub fn exit_code(&self) -> i32 {
        match self.state.status {
            Status::Completed => 0,
            Status::Exited => 2,
            Status::Running | Status::Paused { .. } => 3,
        }
    }
}

struct Recorder {
    lines: Vec<String>,
    emitted: usize,
}

impl Recorder {
    fn flush(&mut self, state: &OrchestrationState) {
        for entry in &state.trace[self.emitted..] {
            self.lines.push(entry.line());
        }
        self.emitted = state.trace.len();
    }
}

/// Runs a scenario to completion, exit or `max_ticks`.
///
/// Each tick: inject faults due now, poll if due, react to every record,
/// probe the awaited service if paused since an earlier tick, then fire
/// the lexicographically first enabled process transition.
pub fn run(config: &ScenarioConfig) -> Result<SimTrace, ScenarioError> {
    config.validate()?;
    let pnac = config.pnac()?;
    let marking = pnac.initial.clone();
    let mut state = OrchestrationState::new(pnac, marking, config.effective_bindings());
    let mut env = Environment::new(config.services.iter().cloned());
    let mut agent = AgentState::new(config.polling, config.dead_band, config.services.iter().cloned());
    let mut rec = Recorder {
        lines: Vec::new(),
        emitted: 0,
    };
    let mut errors = 0;
    let mut ticks = 0;

    for tick in 0..config.max_ticks {
        if state.status.is_terminal() {
            break;
        }
        ticks = tick + 1;
        for fault in config.fault_schedule.iter().filter(|f| f.tick == tick) {
            match inject(&env, fault) {
                Ok(next) => {
                    env = next;
                    rec.lines.push(format!(
                        "tick={tick} INJECT service={} field={} value={}",
                        fault.service,
                        fault.change.field(),
                        fault.change.value_text()
                    ));
                }
                Err(e) => {
                    errors += 1;
                    rec.lines.push(format!("tick={tick} ERROR inject: {e}"));
                }
            }
        }

        let (next_agent, records) = agent.poll_cycle(&env, tick);
        agent = next_agent;
        rec.lines.extend(records.iter().map(|r| r.trace_line()));

        let catalog = agent.snapshots().clone();
        for record in &records {
            if state.status.is_terminal() {
                break;
            }
            match react(&state, record, &config.policy, &catalog, tick) {
                Ok(next) => state = next,
                Err(e) => {
                    errors += 1;
                    rec.lines.push(format!(
                        "tick={tick} ERROR service={} theta={}: {e}",
                        record.event.service_id, record.event.kind
                    ));
                }
            }
            rec.flush(&state);
        }

        if let Status::Paused { since, .. } = state.status {
            if since < tick {
                match heartbeat_tick(&state, &env, &config.policy, &catalog, tick) {
                    Ok(next) => state = next,
                    Err(e) => {
                        errors += 1;
                        rec.lines.push(format!("tick={tick} ERROR heartbeat: {e}"));
                    }
                }
                rec.flush(&state);
            }
        }

        if state.status == Status::Running {
            let net = state.net();
            let next = net
                .transitions()
                .find(|t| enabled(net, &state.marking, t).unwrap_or(false))
                .cloned();
            if let Some(t) = next {
                state.marking = fire(net, &state.marking, &t).expect("transition is enabled");
                rec.lines.push(format!(
                    "tick={tick} FIRE transition={t} generation={}",
                    state.generation()
                ));
                state.check_completed();
            }
        }
    }

    rec.lines.push(format!(
        "RESULT status={} generations={} ticks={ticks}",
        state.status,
        state.generation()
    ));
    Ok(SimTrace {
        lines: rec.lines,
        state,
        agent,
        environment: env,
        ticks,
        errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{healthcare_scenario, specialist_substitute};

    fn outage(config: &mut ScenarioConfig, tick: u64) {
        config.fault_schedule.push(Fault {
            tick,
            service: "SS".into(),
            change: FaultChange::Available(false),
        });
    }

    #[test]
    fn nominal_run_completes() {
        let trace = run(&healthcare_scenario()).unwrap();
        assert_eq!(trace.exit_code(), 0);
        assert_eq!(trace.ticks, 15);
        assert_eq!(trace.lines.last().unwrap(), "RESULT status=Completed generations=0 ticks=15");
        let p_out = trace.state.net().p_out().clone();
        assert_eq!(trace.state.marking.total_in(&p_out), 1);
        assert_eq!(trace.state.marking.total(), 1);
    }

    #[test]
    fn outage_with_substitute_swaps_in_ss2() {
        let mut config = healthcare_scenario();
        let mut ss2 = specialist_substitute("SS2");
        ss2.critical = true;
        config.services.push(ss2);
        config.services.iter_mut().find(|s| s.id == "SS").unwrap().substitutes = vec!["SS2".into()];
        outage(&mut config, 10);
        let trace = run(&config).unwrap();
        let text = trace.text();
        assert!(text.contains("tick=10 DETECT service=SS theta=alterAvailability pre=true post=false"));
        assert_eq!(text.matches("action=substitute").count(), 1, "{text}");
        assert!(text.contains("tick=12 FIRE transition=SS2 generation=1"), "{text}");
        assert_eq!(trace.exit_code(), 0, "{text}");
    }

    #[test]
    fn critical_outage_without_substitute_exits_after_heartbeats() {
        let mut config = healthcare_scenario();
        outage(&mut config, 10);
        let trace = run(&config).unwrap();
        let text = trace.text();
        assert_eq!(text.matches("HEARTBEAT").count(), 3, "{text}");
        assert!(text.contains("tick=13 REACT omega=alterServiceInstance action=exit service=SS"));
        assert_eq!(trace.exit_code(), 2);
    }

    #[test]
    fn inject_unknown_service_fails() {
        let env = Environment::new([ServiceDescriptor::new("A", "a")]);
        let fault = Fault {
            tick: 0,
            service: "B".into(),
            change: FaultChange::Cost(1.0),
        };
        assert_eq!(inject(&env, &fault), Err(SimError::UnknownService("B".into())));
    }

    #[test]
    fn reinjecting_the_same_value_changes_nothing() {
        let env = Environment::new([ServiceDescriptor::new("A", "a")]);
        let fault = Fault {
            tick: 0,
            service: "A".into(),
            change: FaultChange::Available(true),
        };
        assert_eq!(inject(&env, &fault).unwrap(), env);
    }

    #[test]
    fn noncritical_outage_without_substitute_is_bypassed() {
        let mut config = healthcare_scenario();
        config.fault_schedule.push(Fault {
            tick: 10,
            service: "AS".into(),
            change: FaultChange::Available(false),
        });
        let trace = run(&config).unwrap();
        let text = trace.text();
        assert!(text.contains("action=remove service=AS"), "{text}");
        assert!(text.contains("FIRE transition=AS-bypass"), "{text}");
        assert_eq!(trace.exit_code(), 0);
    }
}
