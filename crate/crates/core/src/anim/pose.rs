use nalgebra::UnitQuaternion;

use crate::error::{Error, Result};
use crate::math::Vec3;

use super::Skeleton;

/// Root position plus one rest-relative local rotation per bone.
///
/// The identity rotation on every bone reproduces the rest pose when the
/// root sits at its rest position.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub root_position: Vec3,
    pub rotations: Vec<UnitQuaternion<f64>>,
}

impl Pose {
    pub fn rest(skeleton: &Skeleton) -> Self {
        Self {
            root_position: skeleton.rest(skeleton.root()).pos,
            rotations: vec![UnitQuaternion::identity(); skeleton.len()],
        }
    }

    pub fn validate(&self, bone_count: usize) -> Result<()> {
        if self.rotations.len() != bone_count {
            return Err(Error::Invalid(format!(
                "pose has {} rotations, skeleton has {bone_count} bones",
                self.rotations.len()
            )));
        }
        if !self.root_position.iter().all(|v| v.is_finite()) {
            return Err(Error::Invalid("root position is not finite".into()));
        }
        for (b, q) in self.rotations.iter().enumerate() {
            let n = q.as_ref().norm();
            if !((n - 1.0).abs() <= 1e-6) {
                return Err(Error::Invalid(format!("rotation of bone {b} has norm {n}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Animation {
    pub fps: f64,
    pub frames: Vec<Pose>,
}

impl Animation {
    pub fn new(fps: f64, frames: Vec<Pose>) -> Result<Self> {
        let anim = Self { fps, frames };
        anim.validate(None)?;
        Ok(anim)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.fps
    }

    /// Checks fps and per-frame invariants, optionally against a bone count.
    pub fn validate(&self, bone_count: Option<usize>) -> Result<()> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::Invalid(format!("fps must be positive, got {}", self.fps)));
        }
        let expected = bone_count.or_else(|| self.frames.first().map(|f| f.rotations.len()));
        if let Some(n) = expected {
            for (t, frame) in self.frames.iter().enumerate() {
                frame
                    .validate(n)
                    .map_err(|e| Error::Invalid(format!("frame {t}: {e}")))?;
            }
        }
        Ok(())
    }

    /// Frames `start..end` as a new animation with the same fps.
    pub fn slice(&self, start: usize, end: usize) -> Animation {
        Animation {
            fps: self.fps,
            frames: self.frames[start..end].to_vec(),
        }
    }
}
