//! Bounded reachability, consistency checking, safety classification and
//! DOT export.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{fire, Marking, Net, PlaceId, TokenLabel, TransitionId};

/// Exploration bound used when the caller has no specific one.
pub const DEFAULT_BOUND: usize = 100_000;

/// Cooperative cancellation flag for long explorations.
#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::Relaxed);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::Relaxed)
    }
}

/// Markings discovered by breadth-first exploration, in discovery order.
#[derive(Debug, Clone, Serialize)]
pub struct ReachabilitySet {
    pub markings: Vec<Marking>,
    pub bound: usize,
    pub truncated: bool,
    #[serde(skip)]
    parents: Vec<Option<(usize, TransitionId)>>,
    #[serde(skip)]
    index: HashMap<Marking, usize>,
}

impl ReachabilitySet {
    pub fn len(&self) -> usize {
        self.markings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.markings.is_empty()
    }

    pub fn contains(&self, m: &Marking) -> bool {
        self.index.contains_key(m)
    }

    /// Firing sequence from the initial marking to `target`, if discovered.
    pub fn witness(&self, target: &Marking) -> Option<Vec<TransitionId>> {
        let mut at = *self.index.get(target)?;
        let mut path = Vec::new();
        while let Some((parent, t)) = &self.parents[at] {
            path.push(t.clone());
            at = *parent;
        }
        path.reverse();
        Some(path)
    }
}

/// Breadth-first closure of `initial` under single firings, stopping once
/// `bound` distinct markings are known and another new one turns up.
pub fn reachable(net: &Net, initial: &Marking, bound: usize) -> ReachabilitySet {
    explore(net, initial, bound, None, |_| false).0
}

/// Like [`reachable`] but stops early (marking the set truncated) once
/// `cancel` fires.
pub fn reachable_cancellable(
    net: &Net,
    initial: &Marking,
    bound: usize,
    cancel: &CancelToken,
) -> ReachabilitySet {
    explore(net, initial, bound, Some(cancel), |_| false).0
}

/// Shared BFS. Returns the set and the index of the first marking that
/// satisfies `stop`, if any (exploration ends there).
fn explore(
    net: &Net,
    initial: &Marking,
    bound: usize,
    cancel: Option<&CancelToken>,
    stop: impl Fn(&Marking) -> bool,
) -> (ReachabilitySet, Option<usize>) {
    let bound = bound.max(1);
    let mut set = ReachabilitySet {
        markings: vec![initial.clone()],
        bound,
        truncated: false,
        parents: vec![None],
        index: HashMap::from([(initial.clone(), 0)]),
    };
    if stop(initial) {
        return (set, Some(0));
    }
    let transitions: Vec<&TransitionId> = net.transitions().collect();
    let mut queue = VecDeque::from([0usize]);
    while let Some(at) = queue.pop_front() {
        if cancel.is_some_and(CancelToken::is_cancelled) {
            set.truncated = true;
            break;
        }
        let current = set.markings[at].clone();
        for t in &transitions {
            let Ok(next) = fire(net, &current, t) else {
                continue;
            };
            if set.index.contains_key(&next) {
                continue;
            }
            if set.markings.len() >= bound {
                set.truncated = true;
                return (set, None);
            }
            let idx = set.markings.len();
            let hit = stop(&next);
            set.index.insert(next.clone(), idx);
            set.markings.push(next);
            set.parents.push(Some((at, (*t).clone())));
            if hit {
                return (set, Some(idx));
            }
            queue.push_back(idx);
        }
    }
    (set, None)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("exploration hit the bound of {bound} markings before reaching the output place")]
    BoundExceeded { bound: usize },
}

/// A positive or negative consistency verdict.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Consistency {
    pub consistent: bool,
    /// Firing sequence reaching a marked output place, when consistent.
    pub witness: Option<Vec<TransitionId>>,
    pub explored: usize,
}

/// Three-valued consistency outcome, for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    True,
    False,
    Indeterminate,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::True => "true",
            Verdict::False => "false",
            Verdict::Indeterminate => "indeterminate",
        })
    }
}

impl Verdict {
    pub fn of(result: &Result<Consistency, AnalysisError>) -> Self {
        match result {
            Ok(c) if c.consistent => Verdict::True,
            Ok(_) => Verdict::False,
            Err(_) => Verdict::Indeterminate,
        }
    }
}

/// Is the output place reachable (within `bound` markings) from `marking`?
pub fn check_consistency(
    net: &Net,
    marking: &Marking,
    bound: usize,
) -> Result<Consistency, AnalysisError> {
    let p_out = net.p_out().clone();
    let (set, hit) = explore(net, marking, bound, None, |m| m.total_in(&p_out) > 0);
    match hit {
        Some(idx) => Ok(Consistency {
            consistent: true,
            witness: set.witness(&set.markings[idx]),
            explored: set.len(),
        }),
        None if set.truncated => Err(AnalysisError::BoundExceeded { bound: set.bound }),
        None => Ok(Consistency {
            consistent: false,
            witness: None,
            explored: set.len(),
        }),
    }
}

/// Predicate over markings describing unsafe states.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UnsafeSpec {
    /// At least one token (of `label`, or of any label) in `place`.
    TokenIn {
        place: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    /// More than `limit` tokens in `place`.
    CountAbove { place: String, limit: u32 },
    Any { of: Vec<UnsafeSpec> },
    All { of: Vec<UnsafeSpec> },
    Never,
}

impl UnsafeSpec {
    /// Any recorded change in a non-functional change net.
    pub fn theta_postconditions() -> Self {
        UnsafeSpec::Any {
            of: ["PS'A", "PS'R", "PS'C", "PS'Re"]
                .into_iter()
                .map(|p| UnsafeSpec::TokenIn {
                    place: p.to_owned(),
                    label: None,
                })
                .collect(),
        }
    }

    pub fn holds(&self, marking: &Marking) -> bool {
        match self {
            UnsafeSpec::TokenIn { place, label } => {
                let place = PlaceId::new(place.as_str());
                match label {
                    Some(l) => marking.count(&place, &TokenLabel::new(l.as_str())) > 0,
                    None => marking.total_in(&place) > 0,
                }
            }
            UnsafeSpec::CountAbove { place, limit } => {
                marking.total_in(&PlaceId::new(place.as_str())) > *limit
            }
            UnsafeSpec::Any { of } => of.iter().any(|s| s.holds(marking)),
            UnsafeSpec::All { of } => of.iter().all(|s| s.holds(marking)),
            UnsafeSpec::Never => false,
        }
    }
}

impl Default for UnsafeSpec {
    fn default() -> Self {
        Self::theta_postconditions()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Safety {
    Safe,
    Unsafe,
}

pub fn classify_safety(_net: &Net, marking: &Marking, spec: &UnsafeSpec) -> Safety {
    if spec.holds(marking) {
        Safety::Unsafe
    } else {
        Safety::Safe
    }
}

fn dot_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Renders `net` as a Graphviz digraph: places as circles, transitions as
/// boxes, arc weights as edge labels.
pub fn export_dot(net: &Net, marking: Option<&Marking>) -> String {
    let mut out = String::from("digraph net {\n  rankdir=LR;\n");
    for p in net.places() {
        let mut label = p.to_string();
        if let Some(bag) = marking.and_then(|m| m.bag(p)) {
            let tokens: Vec<String> = bag
                .iter()
                .map(|(l, &c)| if c == 1 { l.to_string() } else { format!("{l}x{c}") })
                .collect();
            let _ = write!(label, "\\n{{{}}}", tokens.join(","));
        }
        let mut attrs = format!("shape=circle, label={}", dot_quote(&label));
        if p == net.p_in() || p == net.p_out() {
            attrs.push_str(", peripheries=2");
        }
        let _ = writeln!(out, "  {} [{}];", dot_quote(p.as_str()), attrs);
    }
    for t in net.transitions() {
        let label = match net.guard(t) {
            Some(g) => format!("{t}\\n[{g}]"),
            None => t.to_string(),
        };
        let _ = writeln!(
            out,
            "  {} [shape=box, label={}];",
            dot_quote(t.as_str()),
            dot_quote(&label)
        );
    }
    for (from, to, w) in net.arcs() {
        if w == 1 {
            let _ = writeln!(out, "  {} -> {};", dot_quote(&from), dot_quote(&to));
        } else {
            let _ = writeln!(
                out,
                "  {} -> {} [label=\"{w}\"];",
                dot_quote(&from),
                dot_quote(&to)
            );
        }
    }
    out.push_str("}\n");
    out
}
