use serde::Serialize;

use super::{Marking, Net, NetError, PlaceId, TokenLabel, TransitionId};

/// `Pre`, `Post` and `C = Post - Pre` over the plain projection of a net.
///
/// Rows follow places and columns follow transitions, both in
/// lexicographic id order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IncidenceMatrix {
    pub places: Vec<PlaceId>,
    pub transitions: Vec<TransitionId>,
    pub pre: Vec<Vec<i64>>,
    pub post: Vec<Vec<i64>>,
    pub c: Vec<Vec<i64>>,
}

pub fn incidence_matrix(net: &Net) -> IncidenceMatrix {
    let places: Vec<PlaceId> = net.places().cloned().collect();
    let transitions: Vec<TransitionId> = net.transitions().cloned().collect();
    let mut pre = vec![vec![0i64; transitions.len()]; places.len()];
    let mut post = pre.clone();
    for (j, t) in transitions.iter().enumerate() {
        for (i, p) in places.iter().enumerate() {
            pre[i][j] = net.inputs(t).get(p).map_or(0, |&w| i64::from(w));
            post[i][j] = net.outputs(t).get(p).map_or(0, |&w| i64::from(w));
        }
    }
    let c = pre
        .iter()
        .zip(&post)
        .map(|(pr, po)| po.iter().zip(pr).map(|(a, b)| a - b).collect())
        .collect();
    IncidenceMatrix {
        places,
        transitions,
        pre,
        post,
        c,
    }
}

impl IncidenceMatrix {
    pub fn place_index(&self, p: &PlaceId) -> Option<usize> {
        self.places.binary_search(p).ok()
    }

    pub fn transition_index(&self, t: &TransitionId) -> Option<usize> {
        self.transitions.binary_search(t).ok()
    }

    /// `C[p][t]`, zero for unknown ids.
    pub fn entry(&self, p: &PlaceId, t: &TransitionId) -> i64 {
        match (self.place_index(p), self.transition_index(t)) {
            (Some(i), Some(j)) => self.c[i][j],
            _ => 0,
        }
    }

    /// Column of `C` for `t`, paired with row ids.
    pub fn column(&self, t: &TransitionId) -> Option<Vec<(PlaceId, i64)>> {
        let j = self.transition_index(t)?;
        Some(
            self.places
                .iter()
                .zip(&self.c)
                .map(|(p, row)| (p.clone(), row[j]))
                .collect(),
        )
    }
}

/// Parikh vector of a firing sequence, indexed like the matrix columns.
pub fn firing_counts<'a>(
    matrix: &IncidenceMatrix,
    sequence: impl IntoIterator<Item = &'a TransitionId>,
) -> Result<Vec<u64>, NetError> {
    let mut counts = vec![0u64; matrix.transitions.len()];
    for t in sequence {
        let j = matrix
            .transition_index(t)
            .ok_or_else(|| NetError::UnknownTransition(t.clone()))?;
        counts[j] += 1;
    }
    Ok(counts)
}

/// `M' = M + C·σ` on the plain projection of `marking`.
///
/// No enabledness is checked along the way; a non-negative result need
/// not be reachable.
pub fn state_equation(
    marking: &Marking,
    matrix: &IncidenceMatrix,
    counts: &[u64],
) -> Result<Marking, NetError> {
    if counts.len() != matrix.transitions.len() {
        return Err(NetError::DimensionMismatch {
            expected: matrix.transitions.len(),
            found: counts.len(),
        });
    }
    let mut vector = vec![0i64; matrix.places.len()];
    for place in marking.places() {
        let i = matrix
            .place_index(place)
            .ok_or(NetError::DimensionMismatch {
                expected: matrix.places.len(),
                found: matrix.places.len() + 1,
            })?;
        vector[i] = i64::from(marking.total_in(place));
    }
    let mut out = Marking::new();
    for (i, row) in matrix.c.iter().enumerate() {
        let delta: i64 = row
            .iter()
            .zip(counts)
            .map(|(&c, &n)| c * n as i64)
            .sum();
        let value = vector[i] + delta;
        if value < 0 {
            return Err(NetError::NegativeResult(matrix.places[i].clone()));
        }
        out.add(&matrix.places[i], &TokenLabel::plain(), value as u32);
    }
    Ok(out)
}
