use crate::error::{Error, Result};
use crate::keyverts::KeyVertexSet;
use crate::limb::{Limb, LimbAssignment};

use super::{Skeleton, SkinnedMesh};

/// A rigged, skinned character as loaded from a character file.
#[derive(Debug, Clone)]
pub struct Character {
    pub name: String,
    pub skeleton: Skeleton,
    pub mesh: SkinnedMesh,
    pub key_vertices: Option<KeyVertexSet>,
    pub limbs: Option<LimbAssignment>,
}

impl Character {
    /// Rest-pose bounding height along the up axis (`h_c`).
    pub fn height(&self) -> f64 {
        self.mesh.height(&self.skeleton.up())
    }

    pub fn limbs(&self) -> Result<&LimbAssignment> {
        self.limbs
            .as_ref()
            .ok_or_else(|| Error::Config(format!("character '{}' has no limb assignment", self.name)))
    }

    pub fn key_vertices(&self) -> Result<&KeyVertexSet> {
        self.key_vertices
            .as_ref()
            .ok_or_else(|| Error::Config(format!("character '{}' has no key-vertices", self.name)))
    }

    /// Limb of each vertex: the limb of its highest-weight bone.
    pub fn vertex_limbs(&self) -> Result<Vec<Limb>> {
        let limbs = self.limbs()?;
        Ok((0..self.mesh.len())
            .map(|v| limbs.limb_of(self.mesh.dominant_bone(v)))
            .collect())
    }
}
