//! Random generators shared by the property and acceptance suites.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use changenet::change::{OmegaKind, OperationSignature, ServiceDescriptor};
use changenet::hierarchy::{refine, HierarchicalNet};
use changenet::net::{enabled, fire, ArcSpec, Marking, Net, NetBuilder, PlaceId, PlaceSpec, TransitionId};
use changenet::reconfig::{Fragment, RewriteRule};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Arbitrary unguarded net on `p0..`, `t0..` (at most 6 of each).
pub fn random_plain_net(rng: &mut ChaCha8Rng) -> Net {
    random_net_with(rng, "p", "t", 6, 6)
}

fn random_net_with(rng: &mut ChaCha8Rng, pp: &str, tp: &str, max_p: usize, max_t: usize) -> Net {
    let np = rng.gen_range(2..=max_p);
    let nt = rng.gen_range(1..=max_t);
    let places: Vec<String> = (0..np).map(|i| format!("{pp}{i}")).collect();
    let mut b = NetBuilder::new(&places[0], &places[np - 1]);
    for p in &places {
        b = b.place(p);
    }
    for j in 0..nt {
        let t = format!("{tp}{j}");
        b = b.transition(&t);
        let mut shuffled = places.clone();
        shuffled.shuffle(rng);
        for p in shuffled.iter().take(rng.gen_range(0..=2)) {
            b = b.arc(p, &t, rng.gen_range(1..=2));
        }
        shuffled.shuffle(rng);
        for p in shuffled.iter().take(rng.gen_range(0..=2)) {
            b = b.arc(&t, p, rng.gen_range(1..=2));
        }
    }
    b.build().expect("generated net is well formed")
}

pub fn random_plain_marking(rng: &mut ChaCha8Rng, net: &Net, max: u32) -> Marking {
    let mut m = Marking::new();
    for p in net.places() {
        let n = rng.gen_range(0..=max);
        if n > 0 {
            m.add(p, &changenet::TokenLabel::plain(), n);
        }
    }
    m
}

/// Tokens of a few labels scattered over the net.
pub fn random_labeled_marking(rng: &mut ChaCha8Rng, net: &Net) -> Marking {
    let labels = ["*", "a", "b"];
    let mut m = Marking::new();
    for p in net.places() {
        for l in labels {
            if rng.gen_bool(0.3) {
                m.add(p, &changenet::TokenLabel::new(l), rng.gen_range(1..=2));
            }
        }
    }
    m
}

/// Random walk of at most `max_len` enabled firings.
pub fn random_walk(
    rng: &mut ChaCha8Rng,
    net: &Net,
    start: &Marking,
    max_len: usize,
) -> (Vec<TransitionId>, Vec<Marking>) {
    let mut seq = Vec::new();
    let mut markings = vec![start.clone()];
    for _ in 0..max_len {
        let current = markings.last().unwrap();
        let choices: Vec<&TransitionId> = net
            .transitions()
            .filter(|t| enabled(net, current, t).unwrap())
            .collect();
        let Some(t) = choices.choose(rng) else { break };
        let next = fire(net, current, t).unwrap();
        seq.push((*t).clone());
        markings.push(next);
    }
    (seq, markings)
}

/// A rule applicable to `net`: deletes a random set of nodes (with all
/// their arcs) and splices in fresh nodes wired to each other and to the
/// remaining host nodes. Every deleted place transfers its tokens.
pub fn random_rule(rng: &mut ChaCha8Rng, net: &Net, id: &str) -> RewriteRule {
    let places: Vec<&str> = net.places().map(PlaceId::as_str).collect();
    let transitions: Vec<&str> = net.transitions().map(TransitionId::as_str).collect();
    let del_p: Vec<&str> = places.iter().copied().filter(|_| rng.gen_bool(0.35)).collect();
    let del_t: Vec<&str> = transitions.iter().copied().filter(|_| rng.gen_bool(0.35)).collect();
    let matched = Fragment::from_net(net, del_p.iter().copied(), del_t.iter().copied());

    let new_p: Vec<String> = (0..rng.gen_range(usize::from(!del_p.is_empty())..=3))
        .map(|i| format!("{id}.q{i}"))
        .collect();
    let new_t: Vec<String> = (0..rng.gen_range(0..=2)).map(|i| format!("{id}.u{i}")).collect();
    let host_p: Vec<&str> = places.iter().copied().filter(|p| !del_p.contains(p)).collect();
    let host_t: Vec<&str> = transitions.iter().copied().filter(|t| !del_t.contains(t)).collect();

    let mut arcs = BTreeMap::new();
    for t in &new_t {
        let candidates: Vec<&str> = new_p.iter().map(String::as_str).chain(host_p.iter().copied()).collect();
        for p in &candidates {
            if rng.gen_bool(0.4) {
                arcs.insert((p.to_string(), t.clone()), rng.gen_range(1..=2));
            }
            if rng.gen_bool(0.4) {
                arcs.insert((t.clone(), p.to_string()), rng.gen_range(1..=2));
            }
        }
    }
    for p in &new_p {
        for t in &host_t {
            if !rng.gen_bool(0.3) {
                continue;
            }
            if rng.gen_bool(0.5) {
                arcs.insert((p.clone(), t.to_string()), 1);
            } else {
                arcs.insert((t.to_string(), p.clone()), 1);
            }
        }
    }
    let replacement = Fragment {
        places: new_p.iter().map(|p| (p.clone(), PlaceSpec::default())).collect(),
        transitions: new_t.iter().map(|t| (t.clone(), Default::default())).collect(),
        arcs: arcs.into_iter().map(|((f, t), w)| ArcSpec::new(f, t, w)).collect(),
    };
    let token_transfer = del_p
        .iter()
        .map(|p| (p.to_string(), new_p.choose(rng).expect("at least one created place").clone()))
        .collect();
    RewriteRule {
        id: id.to_owned(),
        omega_kind: OmegaKind::AlterState,
        matched,
        replacement,
        token_transfer,
        port_map: BTreeMap::new(),
        target: None,
    }
}

/// Subnet with ports `in`/`out`: nothing produces into `in`, nothing
/// consumes from `out`.
fn random_subnet(rng: &mut ChaCha8Rng) -> Net {
    let inner: Vec<String> = (0..rng.gen_range(0..=3)).map(|i| format!("s{i}")).collect();
    let mut b = NetBuilder::new("in", "out").places(["in", "out"]);
    for p in &inner {
        b = b.place(p);
    }
    let sources: Vec<&str> = std::iter::once("in").chain(inner.iter().map(String::as_str)).collect();
    let sinks: Vec<&str> = inner.iter().map(String::as_str).chain(std::iter::once("out")).collect();
    let nt = rng.gen_range(1..=3);
    for j in 0..nt {
        let t = format!("u{j}");
        b = b.transition(&t);
        let ins: BTreeSet<&str> = (0..rng.gen_range(1..=2)).map(|_| *sources.choose(rng).unwrap()).collect();
        let outs: BTreeSet<&str> = (0..rng.gen_range(1..=2)).map(|_| *sinks.choose(rng).unwrap()).collect();
        for p in ins {
            b = b.arc(p, &t, rng.gen_range(1..=2));
        }
        for p in outs {
            b = b.arc(&t, p, rng.gen_range(1..=2));
        }
    }
    b.build().expect("generated subnet is well formed")
}

/// Root net with one or two refined transitions.
pub fn random_two_level(rng: &mut ChaCha8Rng) -> HierarchicalNet {
    let root = random_net_with(rng, "r", "T", 4, 4);
    let mut h = HierarchicalNet::new("root", root.clone()).unwrap();
    let mut ts: Vec<&TransitionId> = root.transitions().collect();
    ts.shuffle(rng);
    for t in ts.into_iter().take(rng.gen_range(1..=2)) {
        let sub = HierarchicalNet::new(format!("sub-{t}"), random_subnet(rng)).unwrap();
        h = refine(&h, t.as_str(), &sub).unwrap();
    }
    h
}

/// A service descriptor with random attributes and operations.
pub fn random_descriptor(rng: &mut ChaCha8Rng, id: &str) -> ServiceDescriptor {
    let mut d = ServiceDescriptor::new(id, "Role");
    for op in ["a", "b", "c", "d"] {
        if rng.gen_bool(0.5) {
            d.operations.push(random_operation(rng, op));
        }
    }
    d.operations.sort();
    d.available = rng.gen_bool(0.7);
    d.reliable = rng.gen_bool(0.7);
    d.cost = f64::from(rng.gen_range(0..5u32));
    d.responsiveness = f64::from(rng.gen_range(0..5u32)) * 10.0;
    d.behavior_version = rng.gen_range(0..3);
    d
}

fn random_operation(rng: &mut ChaCha8Rng, name: &str) -> OperationSignature {
    let ty = ["Int", "Text"].choose(rng).unwrap();
    OperationSignature {
        name: name.to_owned(),
        inputs: vec![changenet::change::Param {
            name: "x".into(),
            ty: (*ty).into(),
        }],
        outputs: Vec::new(),
    }
}
