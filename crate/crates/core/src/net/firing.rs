use super::{ArcWeights, Marking, Net, NetError, PlaceId, TokenLabel, TransitionId};

/// Picks the label a transition would consume, or the place that blocks it.
///
/// Guarded transitions consume their guard label. Unguarded ones consume
/// the lexicographically smallest label that every input place can supply
/// at the required weight; a transition without inputs produces plain
/// tokens.
fn select_label(
    marking: &Marking,
    inputs: &ArcWeights,
    guard: Option<&TokenLabel>,
) -> Result<TokenLabel, PlaceId> {
    let covers = |label: &TokenLabel| {
        inputs
            .iter()
            .find(|(p, &w)| marking.count(p, label) < w)
            .map(|(p, _)| p.clone())
    };
    if let Some(label) = guard {
        return match covers(label) {
            Some(blocking) => Err(blocking),
            None => Ok(label.clone()),
        };
    }
    let Some((first, _)) = inputs.iter().next() else {
        return Ok(TokenLabel::plain());
    };
    let candidates = marking.bag(first).map(|b| b.keys().collect::<Vec<_>>());
    let Some(candidates) = candidates else {
        return Err(first.clone());
    };
    let mut blocking = None;
    for label in candidates {
        match covers(label) {
            None => return Ok(label.clone()),
            Some(p) => {
                blocking.get_or_insert(p);
            }
        }
    }
    Err(blocking.unwrap_or_else(|| first.clone()))
}

/// Fires an arc set directly; shared by the flat and hierarchical interpreters.
pub(crate) fn fire_arcs(
    marking: &Marking,
    inputs: &ArcWeights,
    outputs: &ArcWeights,
    guard: Option<&TokenLabel>,
) -> Result<Marking, PlaceId> {
    let label = select_label(marking, inputs, guard)?;
    let mut next = marking.clone();
    for (p, &w) in inputs {
        let removed = next.remove(p, &label, w);
        debug_assert!(removed);
    }
    for (p, &w) in outputs {
        next.add(p, &label, w);
    }
    Ok(next)
}

fn known(net: &Net, t: &TransitionId) -> Result<(), NetError> {
    if net.has_transition(t.as_str()) {
        Ok(())
    } else {
        Err(NetError::UnknownTransition(t.clone()))
    }
}

/// True iff `t` can fire in `marking`.
pub fn enabled(net: &Net, marking: &Marking, t: &TransitionId) -> Result<bool, NetError> {
    known(net, t)?;
    Ok(select_label(marking, net.inputs(t), net.guard(t)).is_ok())
}

/// Fires `t`, returning the successor marking. The input marking is not modified.
pub fn fire(net: &Net, marking: &Marking, t: &TransitionId) -> Result<Marking, NetError> {
    known(net, t)?;
    fire_arcs(marking, net.inputs(t), net.outputs(t), net.guard(t)).map_err(|place| {
        NetError::NotEnabled {
            transition: t.clone(),
            place,
        }
    })
}

/// Left fold of [`fire`] over `sequence`.
pub fn fire_sequence<'a>(
    net: &Net,
    marking: &Marking,
    sequence: impl IntoIterator<Item = &'a TransitionId>,
) -> Result<Marking, NetError> {
    let mut current = marking.clone();
    for (step, t) in sequence.into_iter().enumerate() {
        current = fire(net, &current, t).map_err(|e| match e {
            NetError::NotEnabled { transition, place } => NetError::NotEnabledAt {
                step,
                transition,
                place,
            },
            other => other,
        })?;
    }
    Ok(current)
}
