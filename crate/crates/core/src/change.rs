//! Change taxonomy: service descriptors, handling (θ) change nets,
//! descriptor diffing, and the θ → Ω mapping.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{fire, Marking, Net, NetBuilder, NetError, PlaceId, TransitionId};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Param {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperationSignature {
    pub name: String,
    #[serde(default)]
    pub inputs: Vec<Param>,
    #[serde(default)]
    pub outputs: Vec<Param>,
}

impl fmt::Display for OperationSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |ps: &[Param]| {
            ps.iter()
                .map(|p| format!("{}:{}", p.name, p.ty))
                .collect::<Vec<_>>()
                .join(",")
        };
        write!(f, "{}({})->({})", self.name, list(&self.inputs), list(&self.outputs))
    }
}

/// Functional signature and non-functional attributes of a member service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceDescriptor {
    pub id: String,
    pub role_name: String,
    #[serde(default)]
    pub operations: Vec<OperationSignature>,
    pub available: bool,
    pub reliable: bool,
    /// Abstract currency units.
    pub cost: f64,
    /// Milliseconds.
    pub responsiveness: f64,
    #[serde(default)]
    pub critical: bool,
    #[serde(default)]
    pub substitutes: Vec<String>,
    /// Revision of the service's observable behaviour; a bump is a
    /// behavioural change.
    #[serde(default)]
    pub behavior_version: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChangeError {
    #[error("service `{service}` declares operation `{operation}` twice")]
    DuplicateOperation { service: String, operation: String },
    #[error("service `{0}` lists itself as a substitute")]
    SelfSubstitute(String),
    #[error("service `{service}` has a negative or non-finite {field}")]
    BadNumber { service: String, field: &'static str },
    #[error("descriptor ids differ: `{pre}` vs `{post}`")]
    IdMismatch { pre: String, post: String },
    #[error("unknown service `{0}`")]
    UnknownService(String),
}

impl ServiceDescriptor {
    pub fn new(id: &str, role_name: &str) -> Self {
        Self {
            id: id.to_owned(),
            role_name: role_name.to_owned(),
            operations: Vec::new(),
            available: true,
            reliable: true,
            cost: 0.0,
            responsiveness: 0.0,
            critical: false,
            substitutes: Vec::new(),
            behavior_version: 0,
        }
    }

    pub fn with_operation(mut self, name: &str) -> Self {
        self.operations.push(OperationSignature {
            name: name.to_owned(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        });
        self.operations.sort();
        self
    }

    pub fn validate(&self) -> Result<(), ChangeError> {
        let mut seen = BTreeSet::new();
        for op in &self.operations {
            if !seen.insert(op.name.as_str()) {
                return Err(ChangeError::DuplicateOperation {
                    service: self.id.clone(),
                    operation: op.name.clone(),
                });
            }
        }
        if self.substitutes.contains(&self.id) {
            return Err(ChangeError::SelfSubstitute(self.id.clone()));
        }
        for (field, v) in [("cost", self.cost), ("responsiveness", self.responsiveness)] {
            if !v.is_finite() || v < 0.0 {
                return Err(ChangeError::BadNumber {
                    service: self.id.clone(),
                    field,
                });
            }
        }
        Ok(())
    }

    pub fn operation(&self, name: &str) -> Option<&OperationSignature> {
        self.operations.iter().find(|o| o.name == name)
    }

    /// Same role and at least the operation names of `other`.
    pub fn can_stand_in_for(&self, other: &ServiceDescriptor) -> bool {
        self.role_name == other.role_name
            && other
                .operations
                .iter()
                .all(|op| self.operation(&op.name).is_some())
    }

    /// Usable for the given operations right now.
    pub fn serves(&self, operations: &BTreeSet<String>) -> bool {
        self.available && operations.iter().all(|op| self.operation(op).is_some())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ThetaKind {
    AlterAvailability,
    AlterReliability,
    AlterCost,
    AlterResponsiveness,
    StructuralRemove,
    StructuralAdd,
    Behavioral,
}

impl ThetaKind {
    pub const NON_FUNCTIONAL: [ThetaKind; 4] = [
        ThetaKind::AlterAvailability,
        ThetaKind::AlterReliability,
        ThetaKind::AlterCost,
        ThetaKind::AlterResponsiveness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ThetaKind::AlterAvailability => "alterAvailability",
            ThetaKind::AlterReliability => "alterReliability",
            ThetaKind::AlterCost => "alterCost",
            ThetaKind::AlterResponsiveness => "alterResponsiveness",
            ThetaKind::StructuralRemove => "structuralRemove",
            ThetaKind::StructuralAdd => "structuralAdd",
            ThetaKind::Behavioral => "behavioral",
        }
    }

    pub fn is_functional(self) -> bool {
        matches!(
            self,
            ThetaKind::StructuralRemove | ThetaKind::StructuralAdd | ThetaKind::Behavioral
        )
    }

    /// Change-net transition recording this kind.
    pub fn transition(self) -> TransitionId {
        TransitionId::new(match self {
            ThetaKind::AlterAvailability => "TA",
            ThetaKind::AlterReliability => "TR",
            ThetaKind::AlterCost => "TC",
            ThetaKind::AlterResponsiveness => "TRe",
            ThetaKind::StructuralRemove | ThetaKind::StructuralAdd => "TStruct",
            ThetaKind::Behavioral => "TBehav",
        })
    }

    /// Token label carried for this kind in its change net.
    pub fn label(self) -> &'static str {
        match self {
            ThetaKind::AlterAvailability => "A",
            ThetaKind::AlterReliability => "R",
            ThetaKind::AlterCost => "C",
            ThetaKind::AlterResponsiveness => "Re",
            ThetaKind::StructuralRemove | ThetaKind::StructuralAdd => "Struct",
            ThetaKind::Behavioral => "Behav",
        }
    }
}

impl fmt::Display for ThetaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Value of the changed descriptor field before or after a change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Snapshot {
    Flag(bool),
    Number(f64),
    Version(u32),
    Operation(Option<OperationSignature>),
    Service(Option<Box<ServiceDescriptor>>),
}

impl fmt::Display for Snapshot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Snapshot::Flag(b) => write!(f, "{b}"),
            Snapshot::Number(x) => write!(f, "{x}"),
            Snapshot::Version(v) => write!(f, "v{v}"),
            Snapshot::Operation(Some(op)) => write!(f, "{op}"),
            Snapshot::Service(Some(d)) => write!(f, "{}", d.role_name),
            Snapshot::Operation(None) | Snapshot::Service(None) => f.write_str("-"),
        }
    }
}

/// A handling change observed on one member service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaEvent {
    pub kind: ThetaKind,
    pub service_id: String,
    pub pre: Snapshot,
    pub post: Snapshot,
    pub tick: u64,
}

impl ThetaEvent {
    /// A service that was not known before announcing itself.
    pub fn advertised(service: &ServiceDescriptor, tick: u64) -> Self {
        Self {
            kind: ThetaKind::StructuralAdd,
            service_id: service.id.clone(),
            pre: Snapshot::Service(None),
            post: Snapshot::Service(Some(Box::new(service.clone()))),
            tick,
        }
    }

    pub fn is_advertisement(&self) -> bool {
        matches!(self.post, Snapshot::Service(Some(_)))
    }

    /// Name of the operation a structural change concerns.
    pub fn operation(&self) -> Option<&str> {
        match (&self.pre, &self.post) {
            (Snapshot::Operation(Some(op)), _) | (_, Snapshot::Operation(Some(op))) => {
                Some(&op.name)
            }
            _ => None,
        }
    }

    /// Writes this event's post value into `descriptor`.
    pub fn apply_to(&self, descriptor: &mut ServiceDescriptor) {
        match (&self.kind, &self.pre, &self.post) {
            (ThetaKind::AlterAvailability, _, Snapshot::Flag(b)) => descriptor.available = *b,
            (ThetaKind::AlterReliability, _, Snapshot::Flag(b)) => descriptor.reliable = *b,
            (ThetaKind::AlterCost, _, Snapshot::Number(x)) => descriptor.cost = *x,
            (ThetaKind::AlterResponsiveness, _, Snapshot::Number(x)) => {
                descriptor.responsiveness = *x
            }
            (ThetaKind::Behavioral, _, Snapshot::Version(v)) => descriptor.behavior_version = *v,
            (ThetaKind::StructuralRemove, Snapshot::Operation(Some(op)), _) => {
                descriptor.operations.retain(|o| o.name != op.name)
            }
            (ThetaKind::StructuralAdd, _, Snapshot::Operation(Some(op))) => {
                descriptor.operations.retain(|o| o.name != op.name);
                descriptor.operations.push(op.clone());
                descriptor.operations.sort();
            }
            _ => {}
        }
    }
}

/// Diff of two descriptors of the same service into handling changes.
///
/// Non-functional events come first (ordered by kind name), then
/// structural ones by operation name (a changed signature yields a remove
/// followed by an add), then a behavioural change. Numeric attributes use
/// a relative dead band: changes with `|post - pre| <= dead_band * |pre|`
/// are ignored.
pub fn classify_with(
    pre: &ServiceDescriptor,
    post: &ServiceDescriptor,
    dead_band: f64,
) -> Result<Vec<ThetaEvent>, ChangeError> {
    if pre.id != post.id {
        return Err(ChangeError::IdMismatch {
            pre: pre.id.clone(),
            post: post.id.clone(),
        });
    }
    let service_id = post.id.clone();
    let event = |kind: ThetaKind, before: Snapshot, after: Snapshot| ThetaEvent {
        kind,
        service_id: service_id.clone(),
        pre: before,
        post: after,
        tick: 0,
    };
    let moved = |a: f64, b: f64| a != b && (b - a).abs() > dead_band * a.abs();

    let mut nonfunctional = Vec::new();
    if pre.available != post.available {
        nonfunctional.push(event(
            ThetaKind::AlterAvailability,
            Snapshot::Flag(pre.available),
            Snapshot::Flag(post.available),
        ));
    }
    if pre.reliable != post.reliable {
        nonfunctional.push(event(
            ThetaKind::AlterReliability,
            Snapshot::Flag(pre.reliable),
            Snapshot::Flag(post.reliable),
        ));
    }
    if moved(pre.cost, post.cost) {
        nonfunctional.push(event(
            ThetaKind::AlterCost,
            Snapshot::Number(pre.cost),
            Snapshot::Number(post.cost),
        ));
    }
    if moved(pre.responsiveness, post.responsiveness) {
        nonfunctional.push(event(
            ThetaKind::AlterResponsiveness,
            Snapshot::Number(pre.responsiveness),
            Snapshot::Number(post.responsiveness),
        ));
    }
    nonfunctional.sort_by_key(|e| e.kind.name());

    let mut events = nonfunctional;
    let names: BTreeSet<&str> = pre
        .operations
        .iter()
        .chain(&post.operations)
        .map(|o| o.name.as_str())
        .collect();
    for name in names {
        let before = pre.operation(name);
        let after = post.operation(name);
        if before == after {
            continue;
        }
        if let Some(op) = before {
            events.push(event(
                ThetaKind::StructuralRemove,
                Snapshot::Operation(Some(op.clone())),
                Snapshot::Operation(None),
            ));
        }
        if let Some(op) = after {
            events.push(event(
                ThetaKind::StructuralAdd,
                Snapshot::Operation(None),
                Snapshot::Operation(Some(op.clone())),
            ));
        }
    }
    if pre.behavior_version != post.behavior_version {
        events.push(event(
            ThetaKind::Behavioral,
            Snapshot::Version(pre.behavior_version),
            Snapshot::Version(post.behavior_version),
        ));
    }
    Ok(events)
}

/// [`classify_with`] without a dead band.
pub fn classify(
    pre: &ServiceDescriptor,
    post: &ServiceDescriptor,
) -> Result<Vec<ThetaEvent>, ChangeError> {
    classify_with(pre, post, 0.0)
}

/// A change net recording which handling changes a service went through.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThetaTemplate {
    pub service_id: String,
    pub net: Net,
    /// One token per change kind, all in the start place.
    pub initial: Marking,
}

const NONFUNCTIONAL_BRANCHES: [(&str, &str, &str, &str); 4] = [
    ("TA", "A", "PS'A", "alterAvailability"),
    ("TR", "R", "PS'R", "alterReliability"),
    ("TC", "C", "PS'C", "alterCost"),
    ("TRe", "Re", "PS'Re", "alterResponsiveness"),
];

/// Five places, four guarded transitions: `PS -TX-> PS'X` for each
/// non-functional change kind X.
pub fn nonfunctional_template(service_id: &str) -> ThetaTemplate {
    let mut b = NetBuilder::new("PS", "PS").named_place("PS", "service state");
    let mut initial = Marking::new();
    for (t, label, place, name) in NONFUNCTIONAL_BRANCHES {
        b = b
            .place(place)
            .named_transition(t, name, Some(label))
            .step("PS", t, place);
        initial = initial.with("PS", label, 1);
    }
    ThetaTemplate {
        service_id: service_id.to_owned(),
        net: b.build().expect("template is well formed"),
        initial,
    }
}

/// Structural/behavioural counterpart: `PSF -TStruct-> PSF'S`,
/// `PSF -TBehav-> PSF'B`.
pub fn functional_template(service_id: &str) -> ThetaTemplate {
    let net = NetBuilder::new("PSF", "PSF")
        .named_place("PSF", "service interface")
        .places(["PSF'S", "PSF'B"])
        .named_transition("TStruct", "structural", Some("Struct"))
        .named_transition("TBehav", "behavioral", Some("Behav"))
        .step("PSF", "TStruct", "PSF'S")
        .step("PSF", "TBehav", "PSF'B")
        .build()
        .expect("template is well formed");
    ThetaTemplate {
        service_id: service_id.to_owned(),
        net,
        initial: Marking::new().with("PSF", "Struct", 1).with("PSF", "Behav", 1),
    }
}

impl ThetaTemplate {
    /// Places and transitions of the dependability sub-net of the
    /// non-functional template.
    pub fn dependability_projection() -> (BTreeSet<PlaceId>, BTreeSet<TransitionId>) {
        (
            ["PS", "PS'Re", "PS'A"].into_iter().map(PlaceId::new).collect(),
            ["TRe", "TA"].into_iter().map(TransitionId::new).collect(),
        )
    }
}

/// Fires the transition recording `event`'s kind.
pub fn fire_theta(net: &Net, marking: &Marking, event: &ThetaEvent) -> Result<Marking, NetError> {
    fire(net, marking, &event.kind.transition())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum OmegaKind {
    AlterState,
    AlterServiceInstance,
    AlterOrder,
    AlterCost,
}

impl OmegaKind {
    pub fn name(self) -> &'static str {
        match self {
            OmegaKind::AlterState => "alterState",
            OmegaKind::AlterServiceInstance => "alterServiceInstance",
            OmegaKind::AlterOrder => "alterOrder",
            OmegaKind::AlterCost => "alterCost",
        }
    }
}

impl fmt::Display for OmegaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An adaptive change induced by a handling change.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OmegaEvent {
    pub kind: OmegaKind,
    pub target: String,
    pub cause: ThetaEvent,
    pub tick: u64,
}

/// What the mapping needs to know about the running orchestration.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OrchestrationContext {
    /// Every service the orchestration knows of, bound or not.
    pub known: BTreeSet<String>,
    /// Operations invoked per bound service.
    pub invoked: BTreeMap<String, BTreeSet<String>>,
}

/// θ → Ω decision table. Availability and reliability losses and
/// functional changes touching an invoked operation need another service
/// instance; everything else is a state change.
pub fn map_theta_to_omega(
    event: &ThetaEvent,
    ctx: &OrchestrationContext,
) -> Result<OmegaEvent, ChangeError> {
    if !ctx.known.contains(&event.service_id) && !event.is_advertisement() {
        return Err(ChangeError::UnknownService(event.service_id.clone()));
    }
    let invoked = ctx.invoked.get(&event.service_id);
    let kind = match event.kind {
        ThetaKind::AlterAvailability | ThetaKind::AlterReliability => {
            OmegaKind::AlterServiceInstance
        }
        ThetaKind::AlterCost | ThetaKind::AlterResponsiveness => OmegaKind::AlterState,
        ThetaKind::StructuralAdd if event.is_advertisement() => OmegaKind::AlterServiceInstance,
        ThetaKind::StructuralAdd | ThetaKind::StructuralRemove => {
            let touches = event
                .operation()
                .zip(invoked)
                .is_some_and(|(op, ops)| ops.contains(op));
            if touches {
                OmegaKind::AlterServiceInstance
            } else {
                OmegaKind::AlterState
            }
        }
        ThetaKind::Behavioral => {
            if invoked.is_some_and(|ops| !ops.is_empty()) {
                OmegaKind::AlterServiceInstance
            } else {
                OmegaKind::AlterState
            }
        }
    };
    Ok(OmegaEvent {
        kind,
        target: event.service_id.clone(),
        cause: event.clone(),
        tick: event.tick,
    })
}
