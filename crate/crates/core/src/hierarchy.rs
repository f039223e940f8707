//! Hierarchical nets whose transitions may be refined by subnets.
//!
//! A refined transition is replaced by its subnet: the subnet's input place
//! stands for the transition's input places and its output place for the
//! transition's output places. Inner ids are qualified by the path of the
//! refined transition, joined with [`PATH_SEPARATOR`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{
    build_net, fire_arcs, ArcSpec, ArcWeights, Marking, Net, NetError, NetSpec, PlaceId,
    PlaceSpec, TransitionId, TransitionSpec, PATH_SEPARATOR,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HierarchyError {
    #[error("unknown transition `{0}`")]
    UnknownTransition(String),
    #[error("transition `{0}` is already refined")]
    AlreadyRefined(String),
    #[error("refining with `{0}` would make a net refine into itself")]
    CyclicRefinement(String),
    #[error("id `{0}` contains the reserved separator")]
    ReservedSeparator(String),
    #[error("invalid subnet: {0}")]
    InvalidSubnet(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Refinement {
    pub name: String,
    pub net: Net,
}

/// A named root net plus refinements keyed by qualified transition path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "HierarchicalNetSpec", into = "HierarchicalNetSpec")]
pub struct HierarchicalNet {
    name: String,
    root: Net,
    refinements: BTreeMap<String, Refinement>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchicalNetSpec {
    pub name: String,
    pub root: Net,
    #[serde(default)]
    pub refinements: Vec<RefinementSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefinementSpec {
    pub path: String,
    pub name: String,
    pub net: Net,
}

impl TryFrom<HierarchicalNetSpec> for HierarchicalNet {
    type Error = HierarchyError;

    fn try_from(spec: HierarchicalNetSpec) -> Result<Self, Self::Error> {
        let mut h = HierarchicalNet::new(spec.name, spec.root)?;
        let mut refinements = spec.refinements;
        refinements.sort_by_key(|r| r.path.matches(PATH_SEPARATOR).count());
        for r in refinements {
            let sub = HierarchicalNet::new(r.name, r.net)?;
            h = refine(&h, &r.path, &sub)?;
        }
        Ok(h)
    }
}

impl From<HierarchicalNet> for HierarchicalNetSpec {
    fn from(h: HierarchicalNet) -> Self {
        HierarchicalNetSpec {
            name: h.name,
            root: h.root,
            refinements: h
                .refinements
                .into_iter()
                .map(|(path, r)| RefinementSpec {
                    path,
                    name: r.name,
                    net: r.net,
                })
                .collect(),
        }
    }
}

fn check_user_ids(net: &Net) -> Result<(), HierarchyError> {
    let ids = net
        .places()
        .map(PlaceId::as_str)
        .chain(net.transitions().map(TransitionId::as_str));
    for id in ids {
        if id.contains(PATH_SEPARATOR) {
            return Err(HierarchyError::ReservedSeparator(id.to_owned()));
        }
    }
    Ok(())
}

fn qualify(prefix: &str, id: &str) -> String {
    if prefix.is_empty() {
        id.to_owned()
    } else {
        format!("{prefix}{PATH_SEPARATOR}{id}")
    }
}

/// Splits a qualified id into (containing prefix, local id).
fn split_qualified(id: &str) -> (&str, &str) {
    match id.rfind(PATH_SEPARATOR) {
        Some(i) => (&id[..i], &id[i + 1..]),
        None => ("", id),
    }
}

impl HierarchicalNet {
    /// A hierarchy with no refinements.
    pub fn new(name: impl Into<String>, root: Net) -> Result<Self, HierarchyError> {
        check_user_ids(&root)?;
        Ok(Self {
            name: name.into(),
            root,
            refinements: BTreeMap::new(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn root(&self) -> &Net {
        &self.root
    }

    pub fn refinements(&self) -> &BTreeMap<String, Refinement> {
        &self.refinements
    }

    /// The net hosting transitions under `prefix` ("" is the root).
    fn net_at(&self, prefix: &str) -> Option<&Net> {
        if prefix.is_empty() {
            Some(&self.root)
        } else {
            self.refinements.get(prefix).map(|r| &r.net)
        }
    }

    /// Qualified ids of all transitions that are not themselves refined.
    pub fn fireable_transitions(&self) -> Vec<TransitionId> {
        let mut out = Vec::new();
        let prefixes = std::iter::once("").chain(self.refinements.keys().map(String::as_str));
        for prefix in prefixes {
            let net = self.net_at(prefix).expect("prefix comes from the map");
            for t in net.transitions() {
                let q = qualify(prefix, t.as_str());
                if !self.refinements.contains_key(&q) {
                    out.push(TransitionId::new(q));
                }
            }
        }
        out.sort();
        out
    }

    /// Qualified place ids of `flatten(self)`, resolved port places excluded.
    fn resolve_place(&self, prefix: &str, place: &PlaceId) -> Vec<(PlaceId, u32)> {
        let Some(r) = (!prefix.is_empty())
            .then(|| self.refinements.get(prefix))
            .flatten()
        else {
            return vec![(PlaceId::new(qualify(prefix, place.as_str())), 1)];
        };
        let arcs = if place == r.net.p_in() {
            Some(true)
        } else if place == r.net.p_out() {
            Some(false)
        } else {
            None
        };
        let Some(is_input) = arcs else {
            return vec![(PlaceId::new(qualify(prefix, place.as_str())), 1)];
        };
        let (parent, local_t) = split_qualified(prefix);
        let host = self.net_at(parent).expect("refined transition lives in a known net");
        let t = TransitionId::new(local_t);
        let host_arcs = if is_input {
            host.inputs(&t)
        } else {
            host.outputs(&t)
        };
        let mut out = Vec::new();
        for (p, &w) in host_arcs {
            for (q, m) in self.resolve_place(parent, p) {
                out.push((q, w * m));
            }
        }
        out
    }
}

/// Attaches `subnet` (with any refinements of its own) to the transition
/// at `path`, returning the extended hierarchy.
pub fn refine(
    hnet: &HierarchicalNet,
    path: &str,
    subnet: &HierarchicalNet,
) -> Result<HierarchicalNet, HierarchyError> {
    let (prefix, local) = split_qualified(path);
    let host = hnet
        .net_at(prefix)
        .ok_or_else(|| HierarchyError::UnknownTransition(path.to_owned()))?;
    if !host.has_transition(local) {
        return Err(HierarchyError::UnknownTransition(path.to_owned()));
    }
    if hnet.refinements.contains_key(path) {
        return Err(HierarchyError::AlreadyRefined(path.to_owned()));
    }

    let sub = &subnet.root;
    check_user_ids(sub)?;
    if sub.p_in() == sub.p_out() {
        return Err(HierarchyError::InvalidSubnet(
            "input and output place coincide".into(),
        ));
    }
    if !sub.producers(sub.p_in()).is_empty() {
        return Err(HierarchyError::InvalidSubnet(format!(
            "input place `{}` has incoming arcs",
            sub.p_in()
        )));
    }
    if !sub.consumers(sub.p_out()).is_empty() {
        return Err(HierarchyError::InvalidSubnet(format!(
            "output place `{}` has outgoing arcs",
            sub.p_out()
        )));
    }

    let mut ancestors = vec![hnet.name.as_str()];
    let mut acc = String::new();
    for seg in prefix.split(PATH_SEPARATOR).filter(|s| !s.is_empty()) {
        acc = qualify(&acc, seg);
        ancestors.push(hnet.refinements[&acc].name.as_str());
    }
    let incoming = std::iter::once(subnet.name.as_str())
        .chain(subnet.refinements.values().map(|r| r.name.as_str()));
    for name in incoming {
        if ancestors.contains(&name) {
            return Err(HierarchyError::CyclicRefinement(name.to_owned()));
        }
    }

    let mut out = hnet.clone();
    out.refinements.insert(
        path.to_owned(),
        Refinement {
            name: subnet.name.clone(),
            net: sub.clone(),
        },
    );
    for (sub_path, r) in &subnet.refinements {
        out.refinements.insert(qualify(path, sub_path), r.clone());
    }
    Ok(out)
}

#[derive(Default)]
struct Parts {
    places: BTreeMap<String, PlaceSpec>,
    transitions: BTreeMap<String, TransitionSpec>,
    arcs: BTreeMap<(String, String), u32>,
}

impl Parts {
    fn add_arc(&mut self, from: String, to: String, w: u32) {
        *self.arcs.entry((from, to)).or_insert(0) += w;
    }
}

fn collect(h: &HierarchicalNet, prefix: &str, net: &Net) -> Parts {
    let mut parts = Parts::default();
    for p in net.places() {
        parts.places.insert(
            qualify(prefix, p.as_str()),
            PlaceSpec {
                name: net.place_name(p).map(str::to_owned),
            },
        );
    }
    for t in net.transitions() {
        let qt = qualify(prefix, t.as_str());
        let Some(r) = h.refinements.get(&qt) else {
            parts.transitions.insert(
                qt.clone(),
                TransitionSpec {
                    name: net.transition_name(t).map(str::to_owned),
                    guard: net.guard(t).map(ToString::to_string),
                },
            );
            for (p, &w) in net.inputs(t) {
                parts.add_arc(qualify(prefix, p.as_str()), qt.clone(), w);
            }
            for (p, &w) in net.outputs(t) {
                parts.add_arc(qt.clone(), qualify(prefix, p.as_str()), w);
            }
            continue;
        };
        let inner = collect(h, &qt, &r.net);
        let entry = qualify(&qt, r.net.p_in().as_str());
        let exit = qualify(&qt, r.net.p_out().as_str());
        for (id, spec) in inner.places {
            if id != entry && id != exit {
                parts.places.insert(id, spec);
            }
        }
        parts.transitions.extend(inner.transitions);
        for ((from, to), w) in inner.arcs {
            if from == entry {
                for (p, &pw) in net.inputs(t) {
                    parts.add_arc(qualify(prefix, p.as_str()), to.clone(), w * pw);
                }
            } else if to == exit {
                for (p, &pw) in net.outputs(t) {
                    parts.add_arc(from.clone(), qualify(prefix, p.as_str()), w * pw);
                }
            } else {
                parts.add_arc(from, to, w);
            }
        }
    }
    parts
}

/// Replaces every refined transition by its subnet, recursively.
pub fn flatten(hnet: &HierarchicalNet) -> Net {
    let parts = collect(hnet, "", &hnet.root);
    let root = &hnet.root;
    let spec = NetSpec {
        places: parts.places,
        transitions: parts.transitions,
        arcs: parts
            .arcs
            .into_iter()
            .map(|((from, to), w)| ArcSpec::new(from, to, w))
            .collect(),
        p_in: root.p_in().to_string(),
        p_out: root.p_out().to_string(),
        labels: std::iter::once(root)
            .chain(hnet.refinements.values().map(|r| &r.net))
            .flat_map(|n| n.alphabet().iter())
            .filter(|l| !l.is_plain())
            .map(ToString::to_string)
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    build_net(spec).expect("flattening a valid hierarchy yields a valid net")
}

/// Fires qualified transitions directly on the hierarchy, resolving port
/// places through the refinement chain at each step.
pub fn execute_hierarchical<'a>(
    hnet: &HierarchicalNet,
    marking: &Marking,
    sequence: impl IntoIterator<Item = &'a TransitionId>,
) -> Result<Marking, HierarchyError> {
    let mut current = marking.clone();
    for (step, qt) in sequence.into_iter().enumerate() {
        let unknown = || HierarchyError::UnknownTransition(qt.to_string());
        let (prefix, local) = split_qualified(qt.as_str());
        let net = hnet.net_at(prefix).ok_or_else(unknown)?;
        let t = TransitionId::new(local);
        if !net.has_transition(local) || hnet.refinements.contains_key(qt.as_str()) {
            return Err(unknown());
        }
        let mut inputs = ArcWeights::new();
        for (p, &w) in net.inputs(&t) {
            for (q, m) in hnet.resolve_place(prefix, p) {
                *inputs.entry(q).or_insert(0) += w * m;
            }
        }
        let mut outputs = ArcWeights::new();
        for (p, &w) in net.outputs(&t) {
            for (q, m) in hnet.resolve_place(prefix, p) {
                *outputs.entry(q).or_insert(0) += w * m;
            }
        }
        current = fire_arcs(&current, &inputs, &outputs, net.guard(&t)).map_err(|place| {
            NetError::NotEnabledAt {
                step,
                transition: qt.clone(),
                place,
            }
        })?;
    }
    Ok(current)
}
