use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ids::{PlaceId, TokenLabel};

/// Bag of labeled tokens held by one place.
pub type TokenBag = BTreeMap<TokenLabel, u32>;

/// Distribution of labeled tokens over places.
///
/// Zero counts and empty places are never stored, so two markings that
/// describe the same state always compare equal.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "BTreeMap<PlaceId, TokenBag>", into = "BTreeMap<PlaceId, TokenBag>")]
pub struct Marking {
    bags: BTreeMap<PlaceId, TokenBag>,
}

impl From<BTreeMap<PlaceId, TokenBag>> for Marking {
    fn from(raw: BTreeMap<PlaceId, TokenBag>) -> Self {
        let mut m = Marking::new();
        for (place, bag) in raw {
            for (label, count) in bag {
                m.add(&place, &label, count);
            }
        }
        m
    }
}

impl From<Marking> for BTreeMap<PlaceId, TokenBag> {
    fn from(m: Marking) -> Self {
        m.bags
    }
}

impl Marking {
    pub fn new() -> Self {
        Self::default()
    }

    /// Marking with `count` plain tokens in `place`.
    pub fn plain(place: impl Into<PlaceId>, count: u32) -> Self {
        let mut m = Self::new();
        m.add(&place.into(), &TokenLabel::plain(), count);
        m
    }

    pub fn with(mut self, place: &str, label: &str, count: u32) -> Self {
        self.add(&PlaceId::new(place), &TokenLabel::new(label), count);
        self
    }

    pub fn count(&self, place: &PlaceId, label: &TokenLabel) -> u32 {
        self.bags
            .get(place)
            .and_then(|bag| bag.get(label))
            .copied()
            .unwrap_or(0)
    }

    /// Total tokens in `place`, all labels summed.
    pub fn total_in(&self, place: &PlaceId) -> u32 {
        self.bags
            .get(place)
            .map(|bag| bag.values().sum())
            .unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.bags
            .values()
            .flat_map(|bag| bag.values())
            .map(|&c| u64::from(c))
            .sum()
    }

    /// Token count per label, summed over all places.
    pub fn label_totals(&self) -> BTreeMap<TokenLabel, u64> {
        let mut totals = BTreeMap::new();
        for bag in self.bags.values() {
            for (label, &count) in bag {
                *totals.entry(label.clone()).or_insert(0) += u64::from(count);
            }
        }
        totals
    }

    pub fn bag(&self, place: &PlaceId) -> Option<&TokenBag> {
        self.bags.get(place)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PlaceId, &TokenBag)> {
        self.bags.iter()
    }

    pub fn places(&self) -> impl Iterator<Item = &PlaceId> {
        self.bags.keys()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn add(&mut self, place: &PlaceId, label: &TokenLabel, count: u32) {
        if count == 0 {
            return;
        }
        *self
            .bags
            .entry(place.clone())
            .or_default()
            .entry(label.clone())
            .or_insert(0) += count;
    }

    /// Removes `count` tokens; returns false (leaving the marking untouched)
    /// when fewer are present.
    pub fn remove(&mut self, place: &PlaceId, label: &TokenLabel, count: u32) -> bool {
        if count == 0 {
            return true;
        }
        let Some(bag) = self.bags.get_mut(place) else {
            return false;
        };
        let Some(have) = bag.get_mut(label) else {
            return false;
        };
        if *have < count {
            return false;
        }
        *have -= count;
        if *have == 0 {
            bag.remove(label);
            if bag.is_empty() {
                self.bags.remove(place);
            }
        }
        true
    }

    /// Removes and returns the whole bag of `place`.
    pub fn take(&mut self, place: &PlaceId) -> TokenBag {
        self.bags.remove(place).unwrap_or_default()
    }

    /// Collapses every label to [`TokenLabel::plain`].
    pub fn plain_projection(&self) -> Marking {
        let mut m = Marking::new();
        for place in self.bags.keys() {
            m.add(place, &TokenLabel::plain(), self.total_in(place));
        }
        m
    }
}

impl fmt::Display for Marking {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (place, bag)) in self.bags.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{place}=[")?;
            for (j, (label, count)) in bag.iter().enumerate() {
                if j > 0 {
                    f.write_str(",")?;
                }
                if *count == 1 {
                    write!(f, "{label}")?;
                } else {
                    write!(f, "{label}x{count}")?;
                }
            }
            f.write_str("]")?;
        }
        f.write_str("}")
    }
}
