use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of qualitative physical categories.
pub const NUM_CATEGORIES: usize = 29;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    Dynamics,
    Thermodynamics,
    Optics,
    CameraMotion,
    ObjectState,
}

impl Group {
    pub const ALL: [Group; 5] = [
        Group::Dynamics,
        Group::Thermodynamics,
        Group::Optics,
        Group::CameraMotion,
        Group::ObjectState,
    ];

    /// Inclusive id range of the group's members.
    pub fn id_range(self) -> std::ops::RangeInclusive<u8> {
        match self {
            Group::Dynamics => 1..=7,
            Group::Thermodynamics => 8..=14,
            Group::Optics => 15..=20,
            Group::CameraMotion => 21..=22,
            Group::ObjectState => 23..=29,
        }
    }

    pub fn members(self) -> impl Iterator<Item = CategoryId> {
        self.id_range().map(CategoryId)
    }

    /// The "nothing happens" entry of the group. Camera motion has none: its
    /// two entries are the yes/no answer itself.
    pub fn fallback(self) -> Option<CategoryId> {
        match self {
            Group::Dynamics => Some(CategoryId(7)),
            Group::Thermodynamics => Some(CategoryId(14)),
            Group::Optics => Some(CategoryId(20)),
            Group::CameraMotion => None,
            Group::ObjectState => Some(CategoryId(29)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Group::Dynamics => "Dynamics",
            Group::Thermodynamics => "Thermodynamics",
            Group::Optics => "Optics",
            Group::CameraMotion => "CameraMotion",
            Group::ObjectState => "ObjectState",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

const NAMES: [&str; NUM_CATEGORIES] = [
    "Collision",
    "Rigid Body Motion",
    "Elastic Motion",
    "Liquid Motion",
    "Gas Motion",
    "Deformation",
    "No obvious dynamic phenomenon",
    "Melting",
    "Solidification",
    "Vaporization",
    "Liquefaction",
    "Explosion",
    "Combustion",
    "No obvious thermodynamic phenomenon",
    "Reflection",
    "Refraction",
    "Scattering",
    "Interference and Diffraction",
    "Unnatural Light Sources",
    "No obvious optical phenomenon",
    "Yes",
    "No",
    "Liquids Objects Appearance",
    "Solid Objects Appearance",
    "Gas Objects Appearance",
    "Object decomposition and splitting",
    "Mixing of Multiple Objects",
    "Object Disappearance",
    "No Change",
];

/// A qualitative category, identified by its 1-based id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CategoryId(u8);

impl CategoryId {
    pub fn new(id: i64) -> Result<Self> {
        if (1..=NUM_CATEGORIES as i64).contains(&id) {
            Ok(Self(id as u8))
        } else {
            Err(Error::usage(format!("category id {id} outside 1..=29")))
        }
    }

    pub fn all() -> impl Iterator<Item = CategoryId> {
        (1..=NUM_CATEGORIES as u8).map(CategoryId)
    }

    /// Zero-based position in category vectors and expert heads.
    pub fn from_index(index: usize) -> Option<Self> {
        (index < NUM_CATEGORIES).then(|| Self(index as u8 + 1))
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        usize::from(self.0) - 1
    }

    pub fn name(self) -> &'static str {
        NAMES[self.index()]
    }

    pub fn group(self) -> Group {
        Group::ALL
            .into_iter()
            .find(|g| g.id_range().contains(&self.0))
            .expect("every id belongs to a group")
    }

    pub fn is_fallback(self) -> bool {
        self.group().fallback() == Some(self)
    }
}

impl fmt::Display for CategoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}. {}", self.0, self.name())
    }
}

/// Active/inactive flag for each of the 29 categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct CategoryVector {
    active: [bool; NUM_CATEGORIES],
}

impl CategoryVector {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_ids(ids: &[u8]) -> Result<Self> {
        let mut v = Self::empty();
        for &id in ids {
            v.set(CategoryId::new(i64::from(id))?, true);
        }
        Ok(v)
    }

    pub fn set(&mut self, id: CategoryId, on: bool) {
        self.active[id.index()] = on;
    }

    pub fn is_active(&self, id: CategoryId) -> bool {
        self.active[id.index()]
    }

    /// Active ids in ascending order.
    pub fn ids(&self) -> Vec<CategoryId> {
        CategoryId::all().filter(|&c| self.is_active(c)).collect()
    }

    pub fn active_in(&self, group: Group) -> Vec<CategoryId> {
        group.members().filter(|&c| self.is_active(c)).collect()
    }

    pub fn count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn as_array(&self) -> &[bool; NUM_CATEGORIES] {
        &self.active
    }

    /// Every group's fallback plus camera "No".
    pub fn all_fallbacks() -> Self {
        let mut v = Self::empty();
        for g in Group::ALL {
            if let Some(f) = g.fallback() {
                v.set(f, true);
            }
        }
        v.set(CategoryId(22), true);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taxonomy_layout() {
        let sizes: Vec<usize> = Group::ALL.iter().map(|g| g.members().count()).collect();
        assert_eq!(sizes, vec![7, 7, 6, 2, 7]);
        assert_eq!(CategoryId::new(7).unwrap().name(), "No obvious dynamic phenomenon");
        assert_eq!(CategoryId::new(14).unwrap().name(), "No obvious thermodynamic phenomenon");
        assert_eq!(CategoryId::new(20).unwrap().name(), "No obvious optical phenomenon");
        assert_eq!(CategoryId::new(29).unwrap().name(), "No Change");
        assert_eq!(CategoryId::new(8).unwrap().name(), "Melting");
        assert_eq!(CategoryId::new(22).unwrap().group(), Group::CameraMotion);
        assert!(CategoryId::new(0).is_err());
        assert!(CategoryId::new(30).is_err());
    }

    #[test]
    fn index_round_trip() {
        for c in CategoryId::all() {
            assert_eq!(CategoryId::from_index(c.index()), Some(c));
        }
        assert_eq!(CategoryId::from_index(29), None);
    }
}
