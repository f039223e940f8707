//! Service agent: polls member services with Alive/Refresh probes, diffs
//! the observed descriptors and records every change in the service's
//! change nets.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::change::{
    classify_with, fire_theta, functional_template, nonfunctional_template, ServiceDescriptor,
    ThetaEvent, ThetaTemplate,
};
use crate::net::{incidence_matrix, IncidenceMatrix, Marking, PlaceId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PollingConfig {
    pub interval_ticks: u64,
    pub alive_timeout_ticks: u64,
}

impl Default for PollingConfig {
    fn default() -> Self {
        Self {
            interval_ticks: 5,
            alive_timeout_ticks: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DetectionError {
    #[error("polling {0} must be at least 1 tick")]
    BadPolling(&'static str),
    #[error("detection channel is closed")]
    ChannelClosed,
}

impl PollingConfig {
    pub fn validate(&self) -> Result<(), DetectionError> {
        if self.interval_ticks == 0 {
            return Err(DetectionError::BadPolling("interval"));
        }
        if self.alive_timeout_ticks == 0 {
            return Err(DetectionError::BadPolling("alive timeout"));
        }
        Ok(())
    }
}

/// What the agent can ask of the environment.
pub trait ServiceDirectory {
    /// Every service currently advertised, in id order.
    fn service_ids(&self) -> Vec<String>;
    /// Alive probe: does the service answer?
    fn alive(&self, id: &str) -> bool;
    /// Refresh probe: the service's current descriptor.
    fn refresh(&self, id: &str) -> Option<ServiceDescriptor>;
}

/// One detected change, as forwarded to the reaction side.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionRecord {
    pub event: ThetaEvent,
    /// Column of the change net's incidence matrix for the recording transition.
    pub matrix_column: Vec<(PlaceId, i64)>,
    pub template_marking_after: Marking,
    /// False when the kind was already recorded earlier in the same cycle.
    pub fired: bool,
    pub tick: u64,
}

impl DetectionRecord {
    pub fn trace_line(&self) -> String {
        format!(
            "tick={} DETECT service={} theta={} pre={} post={}",
            self.tick, self.event.service_id, self.event.kind, self.event.pre, self.event.post
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ChangeNets {
    nonfunctional: ThetaTemplate,
    functional: ThetaTemplate,
    nonfunctional_matrix: IncidenceMatrix,
    functional_matrix: IncidenceMatrix,
}

impl ChangeNets {
    fn new(service: &str) -> Self {
        let nonfunctional = nonfunctional_template(service);
        let functional = functional_template(service);
        Self {
            nonfunctional_matrix: incidence_matrix(&nonfunctional.net),
            functional_matrix: incidence_matrix(&functional.net),
            nonfunctional,
            functional,
        }
    }
}

/// The agent's view of the monitored services.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    config: PollingConfig,
    dead_band: f64,
    snapshots: BTreeMap<String, ServiceDescriptor>,
    last_alive: BTreeMap<String, u64>,
    presumed_down: BTreeSet<String>,
    nets: BTreeMap<String, ChangeNets>,
}

impl AgentState {
    /// Agent monitoring the statically configured `services`.
    pub fn new(
        config: PollingConfig,
        dead_band: f64,
        services: impl IntoIterator<Item = ServiceDescriptor>,
    ) -> Self {
        let snapshots: BTreeMap<_, _> = services.into_iter().map(|s| (s.id.clone(), s)).collect();
        Self {
            config,
            dead_band,
            last_alive: snapshots.keys().map(|id| (id.clone(), 0)).collect(),
            nets: snapshots.keys().map(|id| (id.clone(), ChangeNets::new(id))).collect(),
            presumed_down: snapshots
                .values()
                .filter(|s| !s.available)
                .map(|s| s.id.clone())
                .collect(),
            snapshots,
        }
    }

    pub fn config(&self) -> PollingConfig {
        self.config
    }

    /// Last observed descriptor of every monitored service.
    pub fn snapshots(&self) -> &BTreeMap<String, ServiceDescriptor> {
        &self.snapshots
    }

    pub fn snapshot(&self, id: &str) -> Option<&ServiceDescriptor> {
        self.snapshots.get(id)
    }

    pub fn is_poll_tick(&self, tick: u64) -> bool {
        tick.is_multiple_of(self.config.interval_ticks)
    }

    /// Runs one Alive/Refresh cycle. Off-cycle ticks change nothing.
    pub fn poll_cycle(
        &self,
        env: &impl ServiceDirectory,
        tick: u64,
    ) -> (AgentState, Vec<DetectionRecord>) {
        let mut next = self.clone();
        if !self.is_poll_tick(tick) {
            return (next, Vec::new());
        }
        let mut records = Vec::new();
        let mut ids: BTreeSet<String> = env.service_ids().into_iter().collect();
        ids.extend(self.snapshots.keys().cloned());
        for id in ids {
            next.poll_service(env, &id, tick, &mut records);
        }
        (next, records)
    }

    fn poll_service(
        &mut self,
        env: &impl ServiceDirectory,
        id: &str,
        tick: u64,
        records: &mut Vec<DetectionRecord>,
    ) {
        let alive = env.alive(id);
        let Some(previous) = self.snapshots.get(id).cloned() else {
            // not yet known: a newly advertised service
            if let Some(desc) = alive.then(|| env.refresh(id)).flatten() {
                let nets = ChangeNets::new(id);
                let event = ThetaEvent::advertised(&desc, tick);
                let after = fire_theta(&nets.functional.net, &nets.functional.initial, &event)
                    .expect("fresh change net records any kind");
                records.push(DetectionRecord {
                    matrix_column: column(&nets.functional_matrix, &event),
                    template_marking_after: after,
                    fired: true,
                    event,
                    tick,
                });
                self.snapshots.insert(id.to_owned(), desc);
                self.last_alive.insert(id.to_owned(), tick);
                self.nets.insert(id.to_owned(), nets);
            }
            return;
        };

        let observed = if alive {
            self.last_alive.insert(id.to_owned(), tick);
            self.presumed_down.remove(id);
            env.refresh(id).unwrap_or_else(|| previous.clone())
        } else {
            let last = self.last_alive.get(id).copied().unwrap_or(0);
            if tick.saturating_sub(last) >= self.config.alive_timeout_ticks {
                self.presumed_down.insert(id.to_owned());
                ServiceDescriptor {
                    available: false,
                    ..previous.clone()
                }
            } else {
                previous.clone()
            }
        };

        let events = classify_with(&previous, &observed, self.dead_band)
            .expect("snapshots are keyed by id");
        let nets = self.nets.get(id).expect("every snapshot has change nets");
        let mut nf_marking = nets.nonfunctional.initial.clone();
        let mut f_marking = nets.functional.initial.clone();
        for mut event in events {
            event.tick = tick;
            let (net, marking, matrix) = if event.kind.is_functional() {
                (&nets.functional.net, &mut f_marking, &nets.functional_matrix)
            } else {
                (
                    &nets.nonfunctional.net,
                    &mut nf_marking,
                    &nets.nonfunctional_matrix,
                )
            };
            let fired = match fire_theta(net, marking, &event) {
                Ok(after) => {
                    *marking = after;
                    true
                }
                Err(_) => false,
            };
            records.push(DetectionRecord {
                matrix_column: column(matrix, &event),
                template_marking_after: marking.clone(),
                fired,
                event,
                tick,
            });
        }
        // the observed state becomes the next precondition; change nets re-arm
        self.snapshots.insert(id.to_owned(), observed);
    }

    /// Services that answered Alive within the timeout as of the last cycle.
    pub fn membership(&self) -> BTreeSet<String> {
        self.snapshots
            .keys()
            .filter(|id| !self.presumed_down.contains(*id))
            .cloned()
            .collect()
    }
}

fn column(matrix: &IncidenceMatrix, event: &ThetaEvent) -> Vec<(PlaceId, i64)> {
    matrix
        .column(&event.kind.transition())
        .expect("every kind has a transition in its change net")
}

/// Ordered, reliable channel from detection to reaction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionChannel {
    queue: VecDeque<DetectionRecord>,
    closed: bool,
}

impl DetectionChannel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn close(&mut self) {
        self.closed = true;
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn pop(&mut self) -> Option<DetectionRecord> {
        self.queue.pop_front()
    }
}

/// Appends `records` to `channel` in emission order.
pub fn forward(
    records: Vec<DetectionRecord>,
    channel: &mut DetectionChannel,
) -> Result<(), DetectionError> {
    if records.is_empty() {
        return Ok(());
    }
    if channel.closed {
        return Err(DetectionError::ChannelClosed);
    }
    channel.queue.extend(records);
    Ok(())
}
