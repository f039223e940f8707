//! Reconfigurable nets: a net plus structure-modifying rewriting rules.
//!
//! A rule names the exact nodes it deletes (its match fragment) and the
//! fresh nodes it creates (its replacement). Tokens of deleted places move
//! to the created places named by the rule's transfer map.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::change::OmegaKind;
use crate::net::{
    build_net, ArcSpec, Marking, Net, NetSpec, PlaceId, PlaceSpec, StructuralError,
    TransitionSpec,
};

/// A set of nodes and arcs. Arc endpoints that are not nodes of the
/// fragment are ports: nodes of the host net the fragment attaches to.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fragment {
    #[serde(default)]
    pub places: BTreeMap<String, PlaceSpec>,
    #[serde(default)]
    pub transitions: BTreeMap<String, TransitionSpec>,
    #[serde(default)]
    pub arcs: Vec<ArcSpec>,
}

impl Fragment {
    pub fn contains(&self, id: &str) -> bool {
        self.places.contains_key(id) || self.transitions.contains_key(id)
    }

    pub fn is_empty(&self) -> bool {
        self.places.is_empty() && self.transitions.is_empty() && self.arcs.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.places.len() + self.transitions.len()
    }

    /// Fragment covering `places` and `transitions` of `net` together with
    /// every arc incident to them.
    pub fn from_net<'a>(
        net: &Net,
        places: impl IntoIterator<Item = &'a str>,
        transitions: impl IntoIterator<Item = &'a str>,
    ) -> Fragment {
        let mut frag = Fragment::default();
        for p in places {
            frag.places.insert(
                p.to_owned(),
                PlaceSpec {
                    name: net.place_name(&PlaceId::new(p)).map(str::to_owned),
                },
            );
        }
        for t in transitions {
            let tid = t.into();
            frag.transitions.insert(
                t.to_owned(),
                TransitionSpec {
                    name: net.transition_name(&tid).map(str::to_owned),
                    guard: net.guard(&tid).map(ToString::to_string),
                },
            );
        }
        frag.arcs = net
            .arcs()
            .filter(|(from, to, _)| frag.contains(from) || frag.contains(to))
            .map(|(from, to, w)| ArcSpec::new(from, to, w))
            .collect();
        frag
    }
}

/// A rewriting rule: delete `matched`, splice in `replacement`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewriteRule {
    pub id: String,
    pub omega_kind: OmegaKind,
    #[serde(rename = "match")]
    pub matched: Fragment,
    pub replacement: Fragment,
    /// Deleted place -> created place receiving its tokens.
    #[serde(default)]
    pub token_transfer: BTreeMap<String, String>,
    /// Port name used in the replacement -> host node id.
    #[serde(default)]
    pub port_map: BTreeMap<String, String>,
    /// Service whose adaptive change this rule enacts, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleError {
    #[error("replacement node `{0}` also appears in the match")]
    ReplacementCollides(String),
    #[error("transfer source `{0}` is not a matched place")]
    TransferSource(String),
    #[error("transfer target `{0}` is not a created place")]
    TransferTarget(String),
    #[error("matched place `{0}` receives tokens but has no transfer target")]
    IncompleteTransfer(String),
    #[error("arc {from} -> {to} touches no node of its fragment")]
    DetachedArc { from: String, to: String },
    #[error("arc {from} -> {to} has weight 0")]
    ZeroWeight { from: String, to: String },
    #[error("port `{0}` is mapped to an empty id")]
    EmptyPort(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReconfigError {
    #[error(transparent)]
    Structural(#[from] StructuralError),
    #[error("rule `{rule}`: {source}")]
    Rule { rule: String, source: RuleError },
    #[error("rule `{0}` is declared twice")]
    DuplicateRule(String),
    #[error("initial marking marks unknown place `{0}`")]
    InitialMarking(String),
    #[error("unknown rule `{0}`")]
    UnknownRule(String),
    #[error("rule `{rule}` is not applicable: {reason}")]
    NotApplicable { rule: String, reason: String },
    #[error("rule `{rule}` deletes place `{place}` holding tokens without a transfer target")]
    OrphanedTokens { rule: String, place: String },
}

fn validate_rule(rule: &RewriteRule) -> Result<(), RuleError> {
    let m = &rule.matched;
    let r = &rule.replacement;
    if let Some(id) = r
        .places
        .keys()
        .chain(r.transitions.keys())
        .find(|id| m.contains(id))
    {
        return Err(RuleError::ReplacementCollides(id.clone()));
    }
    for (frag, arcs) in [(m, &m.arcs), (r, &r.arcs)] {
        for a in arcs {
            if !frag.contains(&a.from) && !frag.contains(&a.to) {
                return Err(RuleError::DetachedArc {
                    from: a.from.clone(),
                    to: a.to.clone(),
                });
            }
            if a.weight == 0 {
                return Err(RuleError::ZeroWeight {
                    from: a.from.clone(),
                    to: a.to.clone(),
                });
            }
        }
    }
    for (src, dst) in &rule.token_transfer {
        if !m.places.contains_key(src) {
            return Err(RuleError::TransferSource(src.clone()));
        }
        if !r.places.contains_key(dst) {
            return Err(RuleError::TransferTarget(dst.clone()));
        }
    }
    // a matched place fed by a matched arc can hold tokens when deleted
    for a in &m.arcs {
        if m.places.contains_key(&a.to) && !rule.token_transfer.contains_key(&a.to) {
            return Err(RuleError::IncompleteTransfer(a.to.clone()));
        }
    }
    if let Some((port, _)) = rule.port_map.iter().find(|(_, host)| host.is_empty()) {
        return Err(RuleError::EmptyPort(port.clone()));
    }
    Ok(())
}

impl RewriteRule {
    pub fn validate(&self) -> Result<(), ReconfigError> {
        validate_rule(self).map_err(|source| ReconfigError::Rule {
            rule: self.id.clone(),
            source,
        })
    }

    fn resolve_port<'a>(&'a self, name: &'a str) -> &'a str {
        if self.replacement.contains(name) {
            name
        } else {
            self.port_map.get(name).map_or(name, String::as_str)
        }
    }
}

/// The adaptive change a rule enacts.
pub fn adaptive_change_kind(rule: &RewriteRule) -> OmegaKind {
    rule.omega_kind
}

/// A net, its rule set, its initial marking and the number of rewrites
/// applied so far.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Pnac {
    pub net: Net,
    pub rules: BTreeMap<String, RewriteRule>,
    pub initial: Marking,
    pub generation: u64,
}

pub fn build_pnac(
    net: Net,
    rules: impl IntoIterator<Item = RewriteRule>,
    initial: Marking,
) -> Result<Pnac, ReconfigError> {
    if let Some(p) = initial.places().find(|p| !net.has_place(p.as_str())) {
        return Err(ReconfigError::InitialMarking(p.to_string()));
    }
    let mut pnac = Pnac {
        net,
        rules: BTreeMap::new(),
        initial,
        generation: 0,
    };
    for rule in rules {
        pnac = pnac.with_rule(rule)?;
    }
    Ok(pnac)
}

impl Pnac {
    /// Adds a validated rule to the rule set.
    pub fn with_rule(mut self, rule: RewriteRule) -> Result<Pnac, ReconfigError> {
        rule.validate()?;
        if self.rules.contains_key(&rule.id) {
            return Err(ReconfigError::DuplicateRule(rule.id));
        }
        self.rules.insert(rule.id.clone(), rule);
        Ok(self)
    }

    fn rule(&self, id: &str) -> Result<&RewriteRule, ReconfigError> {
        self.rules
            .get(id)
            .ok_or_else(|| ReconfigError::UnknownRule(id.to_owned()))
    }
}

/// Why `rule` does not match `net`, or `None` when it does.
fn mismatch(net: &Net, rule: &RewriteRule) -> Option<String> {
    let m = &rule.matched;
    if let Some(p) = m.places.keys().find(|p| !net.has_place(p)) {
        return Some(format!("place `{p}` not in net"));
    }
    if let Some(t) = m.transitions.keys().find(|t| !net.has_transition(t)) {
        return Some(format!("transition `{t}` not in net"));
    }
    for a in &m.arcs {
        match net.arc_weight(&a.from, &a.to) {
            Some(w) if w == a.weight => {}
            Some(w) => {
                return Some(format!(
                    "arc {} -> {} has weight {w}, rule expects {}",
                    a.from, a.to, a.weight
                ))
            }
            None => return Some(format!("arc {} -> {} not in net", a.from, a.to)),
        }
    }
    let declared: BTreeSet<(&str, &str)> = m
        .arcs
        .iter()
        .map(|a| (a.from.as_str(), a.to.as_str()))
        .collect();
    for (from, to, _) in net.arcs() {
        if (m.contains(&from) || m.contains(&to)) && !declared.contains(&(from.as_str(), to.as_str())) {
            return Some(format!("undeclared arc {from} -> {to} would dangle"));
        }
    }
    let r = &rule.replacement;
    if let Some(id) = r
        .places
        .keys()
        .chain(r.transitions.keys())
        .find(|id| net.has_place(id) || net.has_transition(id))
    {
        return Some(format!("created node `{id}` already exists"));
    }
    for a in &r.arcs {
        for end in [&a.from, &a.to] {
            let host = rule.resolve_port(end);
            if r.contains(host) {
                continue;
            }
            if m.contains(host) {
                return Some(format!("port `{end}` resolves to deleted node `{host}`"));
            }
            if !net.has_place(host) && !net.has_transition(host) {
                return Some(format!("port `{end}` resolves to unknown node `{host}`"));
            }
        }
    }
    for port in [net.p_in(), net.p_out()] {
        if m.places.contains_key(port.as_str()) && !rule.token_transfer.contains_key(port.as_str()) {
            return Some(format!("deletes interface place `{port}` without a successor"));
        }
    }
    None
}

/// True iff the rule's match is present in the net with matching weights,
/// no undeclared arc would dangle and the created nodes are fresh.
pub fn applicable(pnac: &Pnac, rule_id: &str, _marking: &Marking) -> Result<bool, ReconfigError> {
    let rule = pnac.rule(rule_id)?;
    Ok(mismatch(&pnac.net, rule).is_none())
}

fn transfer(rule: &RewriteRule, marking: &Marking, strict: bool) -> Result<Marking, ReconfigError> {
    let mut out = marking.clone();
    for place in rule.matched.places.keys() {
        let bag = out.take(&PlaceId::new(place.as_str()));
        if bag.is_empty() {
            continue;
        }
        match rule.token_transfer.get(place) {
            Some(target) => {
                let target = PlaceId::new(target.as_str());
                for (label, count) in bag {
                    out.add(&target, &label, count);
                }
            }
            None if strict => {
                return Err(ReconfigError::OrphanedTokens {
                    rule: rule.id.clone(),
                    place: place.clone(),
                })
            }
            None => {}
        }
    }
    Ok(out)
}

/// Applies `rule_id` to the net and `marking`, returning the next generation.
pub fn apply_rule(
    pnac: &Pnac,
    rule_id: &str,
    marking: &Marking,
) -> Result<(Pnac, Marking), ReconfigError> {
    let rule = pnac.rule(rule_id)?;
    if let Some(reason) = mismatch(&pnac.net, rule) {
        return Err(ReconfigError::NotApplicable {
            rule: rule.id.clone(),
            reason,
        });
    }
    let next_marking = transfer(rule, marking, true)?;

    let m = &rule.matched;
    let r = &rule.replacement;
    let old: NetSpec = pnac.net.to_spec();
    let successor = |port: &String| -> String {
        if m.places.contains_key(port) {
            rule.token_transfer[port].clone()
        } else {
            port.clone()
        }
    };
    let mut spec = NetSpec {
        places: old
            .places
            .into_iter()
            .filter(|(id, _)| !m.places.contains_key(id))
            .chain(r.places.clone())
            .collect(),
        transitions: old
            .transitions
            .into_iter()
            .filter(|(id, _)| !m.transitions.contains_key(id))
            .chain(r.transitions.clone())
            .collect(),
        arcs: old
            .arcs
            .into_iter()
            .filter(|a| !m.contains(&a.from) && !m.contains(&a.to))
            .collect(),
        p_in: successor(&old.p_in),
        p_out: successor(&old.p_out),
        labels: old.labels,
    };
    for a in &r.arcs {
        spec.arcs.push(ArcSpec::new(
            rule.resolve_port(&a.from),
            rule.resolve_port(&a.to),
            a.weight,
        ));
    }
    let net = build_net(spec)?;
    let initial = transfer(rule, &pnac.initial, false)?;
    Ok((
        Pnac {
            net,
            rules: pnac.rules.clone(),
            initial,
            generation: pnac.generation + 1,
        },
        next_marking,
    ))
}
