//! Body-part tags shared by key-vertices, mesh segmentation and conflict reporting.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::anim::Skeleton;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Limb {
    ArmL,
    ArmR,
    LegL,
    LegR,
    Torso,
    Head,
    HandL,
    HandR,
    FootL,
    FootR,
}

impl Limb {
    pub const ALL: [Limb; 10] = [
        Limb::ArmL,
        Limb::ArmR,
        Limb::LegL,
        Limb::LegR,
        Limb::Torso,
        Limb::Head,
        Limb::HandL,
        Limb::HandR,
        Limb::FootL,
        Limb::FootR,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Limb::ArmL => "arm_l",
            Limb::ArmR => "arm_r",
            Limb::LegL => "leg_l",
            Limb::LegR => "leg_r",
            Limb::Torso => "torso",
            Limb::Head => "head",
            Limb::HandL => "hand_l",
            Limb::HandR => "hand_r",
            Limb::FootL => "foot_l",
            Limb::FootR => "foot_r",
        }
    }

    pub fn index(self) -> usize {
        Limb::ALL.iter().position(|&l| l == self).unwrap()
    }

    pub fn is_foot(self) -> bool {
        matches!(self, Limb::FootL | Limb::FootR)
    }

    /// Limbs joined by a skeleton edge; their volumes overlap at the joint by construction.
    pub fn adjacent(self, other: Limb) -> bool {
        use Limb::*;
        let pair = |a, b| (self == a && other == b) || (self == b && other == a);
        pair(ArmL, Torso)
            || pair(ArmR, Torso)
            || pair(LegL, Torso)
            || pair(LegR, Torso)
            || pair(Head, Torso)
            || pair(ArmL, HandL)
            || pair(ArmR, HandR)
            || pair(LegL, FootL)
            || pair(LegR, FootR)
    }
}

impl fmt::Display for Limb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Limb {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Limb::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown body part '{s}'")))
    }
}

/// Limb tag of every bone of one skeleton.
#[derive(Debug, Clone, PartialEq)]
pub struct LimbAssignment {
    per_bone: Vec<Limb>,
}

impl LimbAssignment {
    pub fn new(per_bone: Vec<Limb>) -> Self {
        Self { per_bone }
    }

    /// Builds the assignment from a `limb -> [bone names]` table; every bone must be listed once.
    pub fn from_names(skeleton: &Skeleton, table: &BTreeMap<Limb, Vec<String>>) -> Result<Self> {
        let mut per_bone: Vec<Option<Limb>> = vec![None; skeleton.len()];
        for (limb, names) in table {
            for name in names {
                let b = skeleton
                    .find(name)
                    .ok_or_else(|| Error::Config(format!("limb {limb}: unknown bone '{name}'")))?;
                if let Some(prev) = per_bone[b] {
                    return Err(Error::Config(format!(
                        "bone '{name}' assigned to both {prev} and {limb}"
                    )));
                }
                per_bone[b] = Some(*limb);
            }
        }
        let per_bone = per_bone
            .into_iter()
            .enumerate()
            .map(|(b, l)| {
                l.ok_or_else(|| {
                    Error::Config(format!("bone '{}' is not assigned to a limb", skeleton.bones()[b].name))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { per_bone })
    }

    pub fn to_names(&self, skeleton: &Skeleton) -> BTreeMap<Limb, Vec<String>> {
        let mut table: BTreeMap<Limb, Vec<String>> = BTreeMap::new();
        for (b, limb) in self.per_bone.iter().enumerate() {
            table.entry(*limb).or_default().push(skeleton.bones()[b].name.clone());
        }
        table
    }

    pub fn limb_of(&self, bone: usize) -> Limb {
        self.per_bone[bone]
    }

    pub fn per_bone(&self) -> &[Limb] {
        &self.per_bone
    }

    pub fn bones_of(&self, limb: Limb) -> Vec<usize> {
        (0..self.per_bone.len()).filter(|&b| self.per_bone[b] == limb).collect()
    }
}
