//! Centralized agent: turns detection records into adaptive changes on the
//! running orchestration (substitution, backup registration, pause with
//! heartbeat retries, removal, registered rewrites).

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{check_consistency, DEFAULT_BOUND};
use crate::change::{
    map_theta_to_omega, ChangeError, OmegaKind, OrchestrationContext, ServiceDescriptor,
    ThetaKind,
};
use crate::detection::{DetectionRecord, ServiceDirectory};
use crate::net::{Marking, Net, TokenLabel, TransitionSpec, PATH_SEPARATOR};
use crate::reconfig::{apply_rule, Fragment, Pnac, ReconfigError, RewriteRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubstitutionStrategy {
    #[default]
    FirstListed,
    LowestCost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionPolicy {
    pub heartbeat_limit: u32,
    #[serde(default)]
    pub substitution_strategy: SubstitutionStrategy,
}

impl Default for ReactionPolicy {
    fn default() -> Self {
        Self {
            heartbeat_limit: 3,
            substitution_strategy: SubstitutionStrategy::FirstListed,
        }
    }
}

/// The part of the process net a service realizes, and what it is asked to do.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceBinding {
    #[serde(default)]
    pub places: Vec<String>,
    #[serde(default)]
    pub transitions: Vec<String>,
    #[serde(default)]
    pub invokes: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Status {
    Running,
    Paused {
        waiting_on: String,
        heartbeats_used: u32,
        cause: OmegaKind,
        since: u64,
    },
    Exited,
    Completed,
}

impl Status {
    pub fn is_terminal(&self) -> bool {
        matches!(self, Status::Exited | Status::Completed)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Status::Running => "Running",
            Status::Paused { .. } => "Paused",
            Status::Exited => "Exited",
            Status::Completed => "Completed",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Substitute,
    Backup,
    Pause,
    Resume,
    Exit,
    Remove,
    Rewrite,
    Record,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Substitute => "substitute",
            Action::Backup => "backup",
            Action::Pause => "pause",
            Action::Resume => "resume",
            Action::Exit => "exit",
            Action::Remove => "remove",
            Action::Rewrite => "rewrite",
            Action::Record => "record",
        })
    }
}

/// Detection record a reaction answers to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Cause {
    pub detected_at: u64,
    pub service: String,
    pub theta: ThetaKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum TraceEntry {
    React {
        tick: u64,
        omega: OmegaKind,
        action: Action,
        service: String,
        cause: Option<Cause>,
        /// Extra `key=value` pairs, already formatted.
        detail: Vec<(String, String)>,
        generation: u64,
    },
    Heartbeat {
        tick: u64,
        service: String,
        attempt: u32,
        alive: bool,
    },
}

impl TraceEntry {
    pub fn line(&self) -> String {
        match self {
            TraceEntry::React {
                tick,
                omega,
                action,
                service,
                cause,
                detail,
                generation,
            } => {
                let mut s = format!("tick={tick} REACT omega={omega} action={action} service={service}");
                if let Some(c) = cause {
                    s.push_str(&format!(" theta={} detected={}", c.theta, c.detected_at));
                }
                for (k, v) in detail {
                    s.push_str(&format!(" {k}={v}"));
                }
                s.push_str(&format!(" generation={generation}"));
                s
            }
            TraceEntry::Heartbeat {
                tick,
                service,
                attempt,
                alive,
            } => format!("tick={tick} HEARTBEAT service={service} attempt={attempt} alive={alive}"),
        }
    }
}

/// Snapshot taken after a reaction that rewrote the net.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RewriteCheckpoint {
    pub tick: u64,
    pub rules: Vec<String>,
    pub totals_before: BTreeMap<TokenLabel, u64>,
    pub net: Net,
    pub marking: Marking,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrchestrationState {
    pub pnac: Pnac,
    pub marking: Marking,
    pub status: Status,
    pub trace: Vec<TraceEntry>,
    pub backups: BTreeMap<String, Vec<String>>,
    pub bindings: BTreeMap<String, ServiceBinding>,
    /// Records received while paused, replayed on resume.
    pub pending: VecDeque<DetectionRecord>,
    pub history: Vec<RewriteCheckpoint>,
    applied: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReactionError {
    #[error("operation not allowed while {0}")]
    InvalidStatus(&'static str),
    #[error("rule application failed: {0}")]
    RuleApplicationFailed(#[from] ReconfigError),
    #[error("fragment of service `{0}` is not in the net")]
    FragmentNotFound(String),
    #[error(transparent)]
    Change(#[from] ChangeError),
}

impl OrchestrationState {
    pub fn new(pnac: Pnac, marking: Marking, bindings: BTreeMap<String, ServiceBinding>) -> Self {
        let mut state = Self {
            pnac,
            marking,
            status: Status::Running,
            trace: Vec::new(),
            backups: BTreeMap::new(),
            bindings,
            pending: VecDeque::new(),
            history: Vec::new(),
            applied: BTreeSet::new(),
        };
        state.check_completed();
        state
    }

    pub fn net(&self) -> &Net {
        &self.pnac.net
    }

    pub fn generation(&self) -> u64 {
        self.pnac.generation
    }

    /// Marks the orchestration completed once its output place holds a token.
    pub fn check_completed(&mut self) -> bool {
        if self.marking.total_in(self.pnac.net.p_out()) > 0 && !self.status.is_terminal() {
            self.status = Status::Completed;
        }
        self.status == Status::Completed
    }

    fn context(&self, catalog: &BTreeMap<String, ServiceDescriptor>) -> OrchestrationContext {
        OrchestrationContext {
            known: catalog
                .keys()
                .chain(self.bindings.keys())
                .cloned()
                .collect(),
            invoked: self
                .bindings
                .iter()
                .map(|(id, b)| (id.clone(), b.invokes.clone()))
                .collect(),
        }
    }

    fn log(
        &mut self,
        tick: u64,
        omega: OmegaKind,
        action: Action,
        service: &str,
        cause: Option<Cause>,
        detail: Vec<(String, String)>,
    ) {
        self.trace.push(TraceEntry::React {
            tick,
            omega,
            action,
            service: service.to_owned(),
            cause,
            detail,
            generation: self.pnac.generation,
        });
    }

    fn apply(&mut self, rule: RewriteRule) -> Result<String, ReactionError> {
        let mut rule = rule;
        let base = rule.id.clone();
        let mut n = self.pnac.generation + 1;
        while self.pnac.rules.contains_key(&rule.id) {
            rule.id = format!("{base}#{n}");
            n += 1;
        }
        let id = rule.id.clone();
        let pnac = self.pnac.clone().with_rule(rule)?;
        self.apply_registered(pnac, &id)?;
        Ok(id)
    }

    fn apply_registered(&mut self, pnac: Pnac, id: &str) -> Result<(), ReactionError> {
        let (pnac, marking) = apply_rule(&pnac, id, &self.marking)?;
        self.pnac = pnac;
        self.marking = marking;
        self.applied.insert(id.to_owned());
        Ok(())
    }

    fn consistent(&self) -> bool {
        matches!(
            check_consistency(&self.pnac.net, &self.marking, DEFAULT_BOUND),
            Ok(c) if c.consistent
        )
    }

    fn find_substitute<'a>(
        &self,
        failed: &ServiceDescriptor,
        binding: &ServiceBinding,
        catalog: &'a BTreeMap<String, ServiceDescriptor>,
        policy: &ReactionPolicy,
    ) -> Option<&'a ServiceDescriptor> {
        let backups = self.backups.get(&failed.role_name).into_iter().flatten();
        let mut seen = BTreeSet::new();
        let candidates: Vec<&ServiceDescriptor> = failed
            .substitutes
            .iter()
            .chain(backups)
            .filter(|id| seen.insert(id.as_str()))
            .filter(|id| **id != failed.id && !self.bindings.contains_key(*id))
            .filter_map(|id| catalog.get(id))
            .filter(|d| d.can_stand_in_for(failed) && d.reliable && d.serves(&binding.invokes))
            .collect();
        match policy.substitution_strategy {
            SubstitutionStrategy::FirstListed => candidates.into_iter().next(),
            SubstitutionStrategy::LowestCost => candidates
                .into_iter()
                .enumerate()
                .min_by(|(i, a), (j, b)| a.cost.total_cmp(&b.cost).then(i.cmp(j)))
                .map(|(_, d)| d),
        }
    }

    fn handle(
        &mut self,
        record: &DetectionRecord,
        policy: &ReactionPolicy,
        catalog: &BTreeMap<String, ServiceDescriptor>,
        tick: u64,
    ) -> Result<(), ReactionError> {
        let event = &record.event;
        let omega = map_theta_to_omega(event, &self.context(catalog))?;
        let cause = Some(Cause {
            detected_at: record.tick,
            service: event.service_id.clone(),
            theta: event.kind,
        });
        let target = omega.target.clone();

        if event.is_advertisement() {
            let role = catalog
                .get(&target)
                .map(|d| d.role_name.clone())
                .unwrap_or_default();
            let list = self.backups.entry(role.clone()).or_default();
            if !list.contains(&target) {
                list.push(target.clone());
            }
            self.log(tick, omega.kind, Action::Backup, &target, cause, vec![("role".into(), role)]);
            return Ok(());
        }

        match omega.kind {
            OmegaKind::AlterServiceInstance => {
                let (Some(binding), Some(desc)) =
                    (self.bindings.get(&target).cloned(), catalog.get(&target))
                else {
                    self.log(tick, omega.kind, Action::Record, &target, cause, vec![("bound".into(), "false".into())]);
                    return Ok(());
                };
                if desc.reliable && desc.serves(&binding.invokes) {
                    self.log(tick, omega.kind, Action::Record, &target, cause, Vec::new());
                    return Ok(());
                }
                if let Some(sub) = self.find_substitute(desc, &binding, catalog, policy) {
                    let totals = self.marking.label_totals();
                    let (rule, names) = synthesize(
                        self.net(),
                        &target,
                        &binding,
                        &sub.id,
                        format!("substitute:{target}->{}", sub.id),
                    )?;
                    let new_binding = renamed_binding(&binding, &names);
                    let rule_id = self.apply(rule)?;
                    self.bindings.remove(&target);
                    self.bindings.insert(sub.id.clone(), new_binding);
                    let consistent = self.consistent();
                    self.log(
                        tick,
                        omega.kind,
                        Action::Substitute,
                        &target,
                        cause.clone(),
                        vec![
                            ("with".into(), sub.id.clone()),
                            ("rule".into(), rule_id.clone()),
                            ("consistent".into(), consistent.to_string()),
                        ],
                    );
                    let mut rules = vec![rule_id];
                    if !consistent {
                        self.escalate(desc, &sub.id, omega.kind, cause, tick, &mut rules)?;
                    }
                    self.checkpoint(tick, rules, totals);
                } else if desc.critical {
                    self.pause(&target, omega.kind, cause, tick);
                } else {
                    let totals = self.marking.label_totals();
                    let mut rules = Vec::new();
                    self.remove(&target, &binding, omega.kind, cause, tick, &mut rules)?;
                    self.checkpoint(tick, rules, totals);
                }
            }
            kind => {
                let registered = self
                    .pnac
                    .rules
                    .values()
                    .find(|r| {
                        r.omega_kind == kind
                            && r.target.as_deref() == Some(target.as_str())
                            && !self.applied.contains(&r.id)
                    })
                    .map(|r| r.id.clone());
                match registered {
                    Some(id) => {
                        let totals = self.marking.label_totals();
                        self.apply_registered(self.pnac.clone(), &id)?;
                        self.log(tick, kind, Action::Rewrite, &target, cause, vec![("rule".into(), id.clone())]);
                        let mut rules = vec![id];
                        if !self.check_completed() && !self.consistent() {
                            let desc = catalog.get(&target).cloned();
                            match desc {
                                Some(d) => self.escalate(&d, &target, kind, None, tick, &mut rules)?,
                                None => self.exit(&target, kind, tick, "inconsistent"),
                            }
                        }
                        self.checkpoint(tick, rules, totals);
                    }
                    None => self.log(tick, kind, Action::Record, &target, cause, Vec::new()),
                }
            }
        }
        self.check_completed();
        Ok(())
    }

    /// Consistency was lost after a rewrite: treat `bound_as` as unavailable.
    fn escalate(
        &mut self,
        desc: &ServiceDescriptor,
        bound_as: &str,
        kind: OmegaKind,
        cause: Option<Cause>,
        tick: u64,
        rules: &mut Vec<String>,
    ) -> Result<(), ReactionError> {
        if desc.critical {
            self.pause(bound_as, kind, cause, tick);
            return Ok(());
        }
        match self.bindings.get(bound_as).cloned() {
            Some(binding) => {
                self.remove(bound_as, &binding, kind, cause, tick, rules)?;
                if !self.status.is_terminal() && !self.consistent() {
                    self.exit(bound_as, kind, tick, "inconsistent");
                }
            }
            None => self.exit(bound_as, kind, tick, "inconsistent"),
        }
        Ok(())
    }

    fn remove(
        &mut self,
        service: &str,
        binding: &ServiceBinding,
        kind: OmegaKind,
        cause: Option<Cause>,
        tick: u64,
        rules: &mut Vec<String>,
    ) -> Result<(), ReactionError> {
        let rule = synthesize_removal_rule(self.net(), service, binding)?;
        let rule_id = self.apply(rule)?;
        self.bindings.remove(service);
        self.log(tick, kind, Action::Remove, service, cause, vec![("rule".into(), rule_id.clone())]);
        rules.push(rule_id);
        if !self.check_completed() && !self.consistent() {
            self.exit(service, kind, tick, "inconsistent");
        }
        Ok(())
    }

    fn pause(&mut self, service: &str, kind: OmegaKind, cause: Option<Cause>, tick: u64) {
        self.status = Status::Paused {
            waiting_on: service.to_owned(),
            heartbeats_used: 0,
            cause: kind,
            since: tick,
        };
        self.log(tick, kind, Action::Pause, service, cause, Vec::new());
    }

    fn exit(&mut self, service: &str, kind: OmegaKind, tick: u64, reason: &str) {
        self.status = Status::Exited;
        self.log(tick, kind, Action::Exit, service, None, vec![("reason".into(), reason.into())]);
    }

    fn checkpoint(&mut self, tick: u64, rules: Vec<String>, totals_before: BTreeMap<TokenLabel, u64>) {
        if rules.is_empty() {
            return;
        }
        self.history.push(RewriteCheckpoint {
            tick,
            rules,
            totals_before,
            net: self.pnac.net.clone(),
            marking: self.marking.clone(),
            status: self.status.clone(),
        });
    }

    fn drain_pending(
        &mut self,
        policy: &ReactionPolicy,
        catalog: &BTreeMap<String, ServiceDescriptor>,
        tick: u64,
    ) -> Result<(), ReactionError> {
        while self.status == Status::Running {
            let Some(record) = self.pending.pop_front() else {
                break;
            };
            self.handle(&record, policy, catalog, tick)?;
        }
        Ok(())
    }
}

/// Consumes one detection record. Paused orchestrations queue it for
/// replay on resume.
pub fn react(
    state: &OrchestrationState,
    record: &DetectionRecord,
    policy: &ReactionPolicy,
    catalog: &BTreeMap<String, ServiceDescriptor>,
    tick: u64,
) -> Result<OrchestrationState, ReactionError> {
    let mut next = state.clone();
    match next.status {
        Status::Running => next.handle(record, policy, catalog, tick)?,
        Status::Paused { .. } => next.pending.push_back(record.clone()),
        Status::Exited => return Err(ReactionError::InvalidStatus("exited")),
        Status::Completed => return Err(ReactionError::InvalidStatus("completed")),
    }
    Ok(next)
}

/// Probes the service a paused orchestration waits on; resumes when it is
/// usable again, exits once the heartbeat budget is spent.
pub fn heartbeat_tick(
    state: &OrchestrationState,
    env: &impl ServiceDirectory,
    policy: &ReactionPolicy,
    catalog: &BTreeMap<String, ServiceDescriptor>,
    tick: u64,
) -> Result<OrchestrationState, ReactionError> {
    let Status::Paused {
        waiting_on,
        heartbeats_used,
        cause,
        since,
    } = state.status.clone()
    else {
        return Err(ReactionError::InvalidStatus(state.status.name()));
    };
    let mut next = state.clone();
    let invokes = next
        .bindings
        .get(&waiting_on)
        .map(|b| b.invokes.clone())
        .unwrap_or_default();
    let usable = env.alive(&waiting_on)
        && env
            .refresh(&waiting_on)
            .is_some_and(|d| d.serves(&invokes));
    let attempt = heartbeats_used + 1;
    next.trace.push(TraceEntry::Heartbeat {
        tick,
        service: waiting_on.clone(),
        attempt,
        alive: usable,
    });
    if usable {
        next.status = Status::Running;
        next.log(tick, cause, Action::Resume, &waiting_on, None, vec![("heartbeats".into(), attempt.to_string())]);
        next.drain_pending(policy, catalog, tick)?;
    } else if attempt >= policy.heartbeat_limit {
        next.exit(&waiting_on, cause, tick, "heartbeat-limit");
    } else {
        next.status = Status::Paused {
            waiting_on,
            heartbeats_used: attempt,
            cause,
            since,
        };
    }
    Ok(next)
}

/// Renames a service-owned id: `SS` -> `SS2`, `SS.ready` -> `SS2.ready`,
/// keeping any path prefix.
fn rename_id(id: &str, old: &str, new: &str) -> String {
    let (prefix, local) = match id.rfind(PATH_SEPARATOR) {
        Some(i) => (&id[..=i], &id[i + 1..]),
        None => ("", id),
    };
    let renamed = if local == old {
        new.to_owned()
    } else if let Some(rest) = local.strip_prefix(old).filter(|r| r.starts_with('.')) {
        format!("{new}{rest}")
    } else {
        format!("{new}.{local}")
    };
    format!("{prefix}{renamed}")
}

fn synthesize(
    net: &Net,
    old: &str,
    binding: &ServiceBinding,
    new_id: &str,
    rule_id: String,
) -> Result<(RewriteRule, BTreeMap<String, String>), ReactionError> {
    let missing = binding
        .places
        .iter()
        .any(|p| !net.has_place(p))
        || binding.transitions.iter().any(|t| !net.has_transition(t));
    if missing || (binding.places.is_empty() && binding.transitions.is_empty()) {
        return Err(ReactionError::FragmentNotFound(old.to_owned()));
    }
    let matched = Fragment::from_net(
        net,
        binding.places.iter().map(String::as_str),
        binding.transitions.iter().map(String::as_str),
    );
    let mut names = BTreeMap::new();
    let mut taken = BTreeSet::new();
    for id in matched.places.keys().chain(matched.transitions.keys()) {
        let mut fresh = rename_id(id, old, new_id);
        while net.has_place(&fresh) || net.has_transition(&fresh) || taken.contains(&fresh) {
            fresh.push('\'');
        }
        taken.insert(fresh.clone());
        names.insert(id.clone(), fresh);
    }
    let rename = |id: &String| names.get(id).cloned().unwrap_or_else(|| id.clone());
    let replacement = Fragment {
        places: matched
            .places
            .iter()
            .map(|(id, spec)| (rename(id), spec.clone()))
            .collect(),
        transitions: matched
            .transitions
            .iter()
            .map(|(id, spec)| {
                (
                    rename(id),
                    TransitionSpec {
                        name: Some(new_id.to_owned()),
                        guard: spec.guard.clone(),
                    },
                )
            })
            .collect(),
        arcs: matched
            .arcs
            .iter()
            .map(|a| crate::net::ArcSpec::new(rename(&a.from), rename(&a.to), a.weight))
            .collect(),
    };
    let token_transfer = matched
        .places
        .keys()
        .map(|p| (p.clone(), rename(p)))
        .collect();
    let rule = RewriteRule {
        id: rule_id,
        omega_kind: OmegaKind::AlterServiceInstance,
        matched,
        replacement,
        token_transfer,
        port_map: BTreeMap::new(),
        target: Some(old.to_owned()),
    };
    Ok((rule, names))
}

/// Rule replacing `old`'s fragment with an isomorphic one labeled for `new`.
pub fn synthesize_substitution_rule(
    net: &Net,
    old: &str,
    binding: &ServiceBinding,
    new: &ServiceDescriptor,
) -> Result<RewriteRule, ReactionError> {
    synthesize(net, old, binding, &new.id, format!("substitute:{old}->{}", new.id)).map(|(r, _)| r)
}

/// Rule replacing `old`'s fragment with a bypass that performs no service.
pub fn synthesize_removal_rule(
    net: &Net,
    old: &str,
    binding: &ServiceBinding,
) -> Result<RewriteRule, ReactionError> {
    synthesize(net, old, binding, &format!("{old}-bypass"), format!("remove:{old}"))
        .map(|(r, _)| r)
}

fn renamed_binding(binding: &ServiceBinding, names: &BTreeMap<String, String>) -> ServiceBinding {
    let map = |ids: &[String]| ids.iter().map(|id| names.get(id).unwrap_or(id).clone()).collect();
    ServiceBinding {
        places: map(&binding.places),
        transitions: map(&binding.transitions),
        invokes: binding.invokes.clone(),
    }
}
