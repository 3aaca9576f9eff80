use std::collections::HashSet;

use crate::error::{Error, Result};

use super::Skeleton;

/// Pairs of (source bone, target bone) indices.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneMapping {
    pairs: Vec<(usize, usize)>,
}

impl BoneMapping {
    /// Validates indices, uniqueness on both sides, and that the roots map to each other.
    pub fn new(pairs: Vec<(usize, usize)>, source: &Skeleton, target: &Skeleton) -> Result<Self> {
        let mut seen_s = HashSet::new();
        let mut seen_t = HashSet::new();
        for &(s, t) in &pairs {
            if s >= source.len() {
                return Err(Error::InvalidMapping(format!("unknown source bone index {s}")));
            }
            if t >= target.len() {
                return Err(Error::InvalidMapping(format!("unknown target bone index {t}")));
            }
            if !seen_s.insert(s) {
                return Err(Error::InvalidMapping(format!(
                    "source bone '{}' mapped twice",
                    source.bones()[s].name
                )));
            }
            if !seen_t.insert(t) {
                return Err(Error::InvalidMapping(format!(
                    "target bone '{}' mapped twice",
                    target.bones()[t].name
                )));
            }
        }
        if !pairs.contains(&(source.root(), target.root())) {
            return Err(Error::InvalidMapping(format!(
                "roots must be mapped to each other ('{}' -> '{}')",
                source.bones()[source.root()].name,
                target.bones()[target.root()].name
            )));
        }
        Ok(Self { pairs })
    }

    pub fn from_names(names: &[(String, String)], source: &Skeleton, target: &Skeleton) -> Result<Self> {
        let pairs = names
            .iter()
            .map(|(s, t)| {
                let si = source
                    .find(s)
                    .ok_or_else(|| Error::InvalidMapping(format!("unknown source bone '{s}'")))?;
                let ti = target
                    .find(t)
                    .ok_or_else(|| Error::InvalidMapping(format!("unknown target bone '{t}'")))?;
                Ok((si, ti))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(pairs, source, target)
    }

    /// Maps every bone whose name exists in both skeletons.
    pub fn by_name(source: &Skeleton, target: &Skeleton) -> Result<Self> {
        let pairs = source
            .bones()
            .iter()
            .enumerate()
            .filter_map(|(s, b)| target.find(&b.name).map(|t| (s, t)))
            .collect();
        Self::new(pairs, source, target)
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn target_of(&self, source_bone: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == source_bone).map(|p| p.1)
    }

    pub fn source_of(&self, target_bone: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.1 == target_bone).map(|p| p.0)
    }

    pub fn to_names(&self, source: &Skeleton, target: &Skeleton) -> Vec<(String, String)> {
        self.pairs
            .iter()
            .map(|&(s, t)| (source.bones()[s].name.clone(), target.bones()[t].name.clone()))
            .collect()
    }
}
