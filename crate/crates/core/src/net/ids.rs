use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }

        impl std::borrow::Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }
    };
}

string_id!(
    /// Identifier of a place, unique within its net.
    PlaceId
);
string_id!(
    /// Identifier of a transition, unique within its net.
    TransitionId
);
string_id!(
    /// Label carried by a token. [`TokenLabel::plain`] is the classical unlabeled token.
    TokenLabel
);

impl TokenLabel {
    pub const PLAIN: &'static str = "*";

    pub fn plain() -> Self {
        Self(Self::PLAIN.to_owned())
    }

    pub fn is_plain(&self) -> bool {
        self.0 == Self::PLAIN
    }
}

/// Separator used for path-qualified ids produced by flattening.
pub const PATH_SEPARATOR: char = '/';
