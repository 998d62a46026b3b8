//! Opaque identifiers.
//!
//! Page and character ids are minted from per-story counters (`p1`, `p2`, ...,
//! `c1`, ...) and are never reused, even after the entity is removed. A page's
//! id is unrelated to its ordinal.

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! id_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(raw: impl Into<String>) -> Self {
                Self(raw.into())
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
            fn from(raw: &str) -> Self {
                Self(raw.to_owned())
            }
        }
    };
}

id_newtype!(
    /// Identifies one story project.
    StoryId
);
id_newtype!(
    /// Stable page identity, independent of the page's position.
    PageId
);
id_newtype!(CharacterId);
id_newtype!(
    /// Identifies an entry in a story's revision chain (`r0`, `r1`, ...).
    RevisionId
);

impl RevisionId {
    pub fn from_index(index: usize) -> Self {
        Self(format!("r{index}"))
    }

    /// Position in the chain, if the id has the `r<n>` shape.
    pub fn index(&self) -> Option<usize> {
        self.0.strip_prefix('r')?.parse().ok()
    }
}

/// Monotonic counters used to mint page and character ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdSequence {
    pub next_page: u64,
    pub next_character: u64,
}

impl Default for IdSequence {
    fn default() -> Self {
        Self {
            next_page: 1,
            next_character: 1,
        }
    }
}

impl IdSequence {
    pub fn mint_page(&mut self) -> PageId {
        let id = PageId(format!("p{}", self.next_page));
        self.next_page += 1;
        id
    }

    pub fn mint_character(&mut self) -> CharacterId {
        let id = CharacterId(format!("c{}", self.next_character));
        self.next_character += 1;
        id
    }

    /// True when `id` has the minted `p<n>` shape and lies below the counter.
    pub(crate) fn covers_page(&self, id: &PageId) -> bool {
        match id.0.strip_prefix('p').and_then(|n| n.parse::<u64>().ok()) {
            Some(n) => n < self.next_page,
            None => true,
        }
    }

    pub(crate) fn covers_character(&self, id: &CharacterId) -> bool {
        match id.0.strip_prefix('c').and_then(|n| n.parse::<u64>().ok()) {
            Some(n) => n < self.next_character,
            None => true,
        }
    }
}
