//! Labeled place/transition nets: structure, firing rule and incidence algebra.
//!
//! A [`Net`] is only obtainable through [`build_net`] (or deserialization,
//! which goes through it), so every value of the type satisfies the
//! structural conditions checked there.

mod firing;
mod ids;
mod marking;
mod matrix;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use firing::{enabled, fire, fire_sequence};
pub(crate) use firing::fire_arcs;
pub use ids::{PlaceId, TokenLabel, TransitionId, PATH_SEPARATOR};
pub use marking::{Marking, TokenBag};
pub use matrix::{firing_counts, incidence_matrix, state_equation, IncidenceMatrix};

/// Weighted arcs of one transition, keyed by place.
pub type ArcWeights = BTreeMap<PlaceId, u32>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StructuralError {
    #[error("empty identifier")]
    EmptyId,
    #[error("`{0}` is both a place and a transition")]
    Overlap(String),
    #[error("net has neither places nor transitions")]
    Empty,
    #[error("arc {from} -> {to} references unknown node `{missing}`")]
    DanglingArc {
        from: String,
        to: String,
        missing: String,
    },
    #[error("arc {from} -> {to} must connect a place and a transition")]
    IllegalArc { from: String, to: String },
    #[error("arc {from} -> {to} has weight 0")]
    ZeroWeight { from: String, to: String },
    #[error("arc {from} -> {to} declared twice")]
    DuplicateArc { from: String, to: String },
    #[error("input place `{0}` is not a place of the net")]
    MissingInputPlace(String),
    #[error("output place `{0}` is not a place of the net")]
    MissingOutputPlace(String),
    #[error("label `{0}` is not a valid token label")]
    BadLabel(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetError {
    #[error(transparent)]
    Structural(#[from] StructuralError),
    #[error("unknown transition `{0}`")]
    UnknownTransition(TransitionId),
    #[error("transition `{transition}` is not enabled (blocked on place `{place}`)")]
    NotEnabled {
        transition: TransitionId,
        place: PlaceId,
    },
    #[error("step {step}: transition `{transition}` is not enabled (blocked on place `{place}`)")]
    NotEnabledAt {
        step: usize,
        transition: TransitionId,
        place: PlaceId,
    },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("state equation yields a negative count in place `{0}`")]
    NegativeResult(PlaceId),
}

/// Serialized form of a net: nodes keyed by id, arcs as a list.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    pub places: BTreeMap<String, PlaceSpec>,
    pub transitions: BTreeMap<String, TransitionSpec>,
    #[serde(default)]
    pub arcs: Vec<ArcSpec>,
    pub p_in: String,
    pub p_out: String,
    /// Extra labels admitted besides guard labels and the plain label.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArcSpec {
    pub from: String,
    pub to: String,
    #[serde(default = "one")]
    pub weight: u32,
}

fn one() -> u32 {
    1
}

impl ArcSpec {
    pub fn new(from: impl Into<String>, to: impl Into<String>, weight: u32) -> Self {
        Self {
            from: from.into(),
            to: to.into(),
            weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct TransitionInfo {
    name: Option<String>,
    guard: Option<TokenLabel>,
}

/// A validated labeled Petri net with distinguished input and output places.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "NetSpec", into = "NetSpec")]
pub struct Net {
    places: BTreeMap<PlaceId, Option<String>>,
    transitions: BTreeMap<TransitionId, TransitionInfo>,
    pre: BTreeMap<TransitionId, ArcWeights>,
    post: BTreeMap<TransitionId, ArcWeights>,
    p_in: PlaceId,
    p_out: PlaceId,
    alphabet: BTreeSet<TokenLabel>,
}

/// Validates `spec` against the structural net conditions and builds the net.
pub fn build_net(spec: NetSpec) -> Result<Net, StructuralError> {
    for id in spec.places.keys().chain(spec.transitions.keys()) {
        if id.is_empty() {
            return Err(StructuralError::EmptyId);
        }
    }
    if let Some(id) = spec.places.keys().find(|p| spec.transitions.contains_key(*p)) {
        return Err(StructuralError::Overlap(id.clone()));
    }
    if spec.places.is_empty() && spec.transitions.is_empty() {
        return Err(StructuralError::Empty);
    }

    let mut pre: BTreeMap<TransitionId, ArcWeights> = BTreeMap::new();
    let mut post: BTreeMap<TransitionId, ArcWeights> = BTreeMap::new();
    for arc in &spec.arcs {
        let from_place = spec.places.contains_key(&arc.from);
        let from_trans = spec.transitions.contains_key(&arc.from);
        let to_place = spec.places.contains_key(&arc.to);
        let to_trans = spec.transitions.contains_key(&arc.to);
        let dangling = |missing: &str| StructuralError::DanglingArc {
            from: arc.from.clone(),
            to: arc.to.clone(),
            missing: missing.to_owned(),
        };
        if !from_place && !from_trans {
            return Err(dangling(&arc.from));
        }
        if !to_place && !to_trans {
            return Err(dangling(&arc.to));
        }
        if from_place == to_place {
            return Err(StructuralError::IllegalArc {
                from: arc.from.clone(),
                to: arc.to.clone(),
            });
        }
        if arc.weight == 0 {
            return Err(StructuralError::ZeroWeight {
                from: arc.from.clone(),
                to: arc.to.clone(),
            });
        }
        let (table, t, p) = if from_place {
            (&mut pre, &arc.to, &arc.from)
        } else {
            (&mut post, &arc.from, &arc.to)
        };
        let slot = table.entry(TransitionId::new(t.as_str())).or_default();
        if slot.insert(PlaceId::new(p.as_str()), arc.weight).is_some() {
            return Err(StructuralError::DuplicateArc {
                from: arc.from.clone(),
                to: arc.to.clone(),
            });
        }
    }

    if !spec.places.contains_key(&spec.p_out) {
        return Err(StructuralError::MissingOutputPlace(spec.p_out));
    }
    if !spec.places.contains_key(&spec.p_in) {
        return Err(StructuralError::MissingInputPlace(spec.p_in));
    }

    let mut alphabet = BTreeSet::from([TokenLabel::plain()]);
    for label in spec
        .labels
        .iter()
        .chain(spec.transitions.values().filter_map(|t| t.guard.as_ref()))
    {
        if label.is_empty() {
            return Err(StructuralError::BadLabel(label.clone()));
        }
        alphabet.insert(TokenLabel::new(label.as_str()));
    }

    Ok(Net {
        places: spec
            .places
            .into_iter()
            .map(|(id, p)| (PlaceId::new(id), p.name))
            .collect(),
        transitions: spec
            .transitions
            .into_iter()
            .map(|(id, t)| {
                (
                    TransitionId::new(id),
                    TransitionInfo {
                        name: t.name,
                        guard: t.guard.map(TokenLabel::new),
                    },
                )
            })
            .collect(),
        pre,
        post,
        p_in: PlaceId::new(spec.p_in),
        p_out: PlaceId::new(spec.p_out),
        alphabet,
    })
}

impl TryFrom<NetSpec> for Net {
    type Error = StructuralError;

    fn try_from(spec: NetSpec) -> Result<Self, Self::Error> {
        build_net(spec)
    }
}

impl From<Net> for NetSpec {
    fn from(net: Net) -> Self {
        net.to_spec()
    }
}

static EMPTY_ARCS: ArcWeights = BTreeMap::new();

impl Net {
    pub fn to_spec(&self) -> NetSpec {
        let guard_labels: BTreeSet<&TokenLabel> =
            self.transitions.values().filter_map(|t| t.guard.as_ref()).collect();
        NetSpec {
            places: self
                .places
                .iter()
                .map(|(id, name)| (id.to_string(), PlaceSpec { name: name.clone() }))
                .collect(),
            transitions: self
                .transitions
                .iter()
                .map(|(id, info)| {
                    (
                        id.to_string(),
                        TransitionSpec {
                            name: info.name.clone(),
                            guard: info.guard.as_ref().map(ToString::to_string),
                        },
                    )
                })
                .collect(),
            arcs: self
                .arcs()
                .map(|(from, to, weight)| ArcSpec::new(from, to, weight))
                .collect(),
            p_in: self.p_in.to_string(),
            p_out: self.p_out.to_string(),
            labels: self
                .alphabet
                .iter()
                .filter(|l| !l.is_plain() && !guard_labels.contains(l))
                .map(ToString::to_string)
                .collect(),
        }
    }

    pub fn places(&self) -> impl ExactSizeIterator<Item = &PlaceId> {
        self.places.keys()
    }

    pub fn transitions(&self) -> impl ExactSizeIterator<Item = &TransitionId> {
        self.transitions.keys()
    }

    pub fn place_count(&self) -> usize {
        self.places.len()
    }

    pub fn transition_count(&self) -> usize {
        self.transitions.len()
    }

    pub fn arc_count(&self) -> usize {
        self.pre.values().chain(self.post.values()).map(|a| a.len()).sum()
    }

    pub fn has_place(&self, id: &str) -> bool {
        self.places.contains_key(id)
    }

    pub fn has_transition(&self, id: &str) -> bool {
        self.transitions.contains_key(id)
    }

    pub fn place_name(&self, id: &PlaceId) -> Option<&str> {
        self.places.get(id).and_then(|n| n.as_deref())
    }

    pub fn transition_name(&self, id: &TransitionId) -> Option<&str> {
        self.transitions.get(id).and_then(|t| t.name.as_deref())
    }

    pub fn guard(&self, t: &TransitionId) -> Option<&TokenLabel> {
        self.transitions.get(t).and_then(|info| info.guard.as_ref())
    }

    /// Input arcs `p -> t` of a transition (empty for unknown ids).
    pub fn inputs(&self, t: &TransitionId) -> &ArcWeights {
        self.pre.get(t).unwrap_or(&EMPTY_ARCS)
    }

    /// Output arcs `t -> p` of a transition (empty for unknown ids).
    pub fn outputs(&self, t: &TransitionId) -> &ArcWeights {
        self.post.get(t).unwrap_or(&EMPTY_ARCS)
    }

    pub fn p_in(&self) -> &PlaceId {
        &self.p_in
    }

    pub fn p_out(&self) -> &PlaceId {
        &self.p_out
    }

    pub fn alphabet(&self) -> &BTreeSet<TokenLabel> {
        &self.alphabet
    }

    /// All arcs as `(from, to, weight)`, places-to-transitions first, each
    /// group ordered by transition then place.
    pub fn arcs(&self) -> impl Iterator<Item = (String, String, u32)> + '_ {
        let inputs = self
            .pre
            .iter()
            .flat_map(|(t, ps)| ps.iter().map(move |(p, &w)| (p.to_string(), t.to_string(), w)));
        let outputs = self
            .post
            .iter()
            .flat_map(|(t, ps)| ps.iter().map(move |(p, &w)| (t.to_string(), p.to_string(), w)));
        inputs.chain(outputs)
    }

    /// Weight of the arc `from -> to`, if present.
    pub fn arc_weight(&self, from: &str, to: &str) -> Option<u32> {
        if let Some(ps) = self.pre.get(to) {
            if let Some(&w) = ps.get(from) {
                return Some(w);
            }
        }
        self.post.get(from).and_then(|ps| ps.get(to).copied())
    }

    /// Transitions producing into `place`.
    pub fn producers(&self, place: &PlaceId) -> Vec<&TransitionId> {
        self.post
            .iter()
            .filter(|(_, ps)| ps.contains_key(place))
            .map(|(t, _)| t)
            .collect()
    }

    /// Transitions consuming from `place`.
    pub fn consumers(&self, place: &PlaceId) -> Vec<&TransitionId> {
        self.pre
            .iter()
            .filter(|(_, ps)| ps.contains_key(place))
            .map(|(t, _)| t)
            .collect()
    }

    /// True if every marked place exists in the net.
    pub fn admits(&self, marking: &Marking) -> bool {
        marking.places().all(|p| self.places.contains_key(p))
    }

    /// True if `place` carries at least one token in `marking`.
    pub fn is_marked(&self, marking: &Marking, place: &PlaceId) -> bool {
        marking.total_in(place) > 0
    }
}

/// Incremental construction of a [`NetSpec`].
#[derive(Debug, Clone, Default)]
pub struct NetBuilder {
    spec: NetSpec,
}

impl NetBuilder {
    pub fn new(p_in: &str, p_out: &str) -> Self {
        Self {
            spec: NetSpec {
                p_in: p_in.to_owned(),
                p_out: p_out.to_owned(),
                ..NetSpec::default()
            },
        }
    }

    pub fn place(mut self, id: &str) -> Self {
        self.spec.places.insert(id.to_owned(), PlaceSpec::default());
        self
    }

    pub fn places<'a>(mut self, ids: impl IntoIterator<Item = &'a str>) -> Self {
        for id in ids {
            self = self.place(id);
        }
        self
    }

    pub fn named_place(mut self, id: &str, name: &str) -> Self {
        self.spec.places.insert(
            id.to_owned(),
            PlaceSpec {
                name: Some(name.to_owned()),
            },
        );
        self
    }

    pub fn transition(mut self, id: &str) -> Self {
        self.spec
            .transitions
            .insert(id.to_owned(), TransitionSpec::default());
        self
    }

    pub fn guarded(mut self, id: &str, label: &str) -> Self {
        self.spec.transitions.insert(
            id.to_owned(),
            TransitionSpec {
                name: None,
                guard: Some(label.to_owned()),
            },
        );
        self
    }

    pub fn named_transition(mut self, id: &str, name: &str, guard: Option<&str>) -> Self {
        self.spec.transitions.insert(
            id.to_owned(),
            TransitionSpec {
                name: Some(name.to_owned()),
                guard: guard.map(str::to_owned),
            },
        );
        self
    }

    pub fn arc(mut self, from: &str, to: &str, weight: u32) -> Self {
        self.spec.arcs.push(ArcSpec::new(from, to, weight));
        self
    }

    /// Arcs `input -> t -> output`, each of weight 1.
    pub fn step(self, input: &str, t: &str, output: &str) -> Self {
        self.arc(input, t, 1).arc(t, output, 1)
    }

    pub fn label(mut self, label: &str) -> Self {
        self.spec.labels.push(label.to_owned());
        self
    }

    pub fn spec(self) -> NetSpec {
        self.spec
    }

    pub fn build(self) -> Result<Net, StructuralError> {
        build_net(self.spec)
    }
}
