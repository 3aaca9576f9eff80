use crate::error::{Error, Result};
use crate::math::{quat_to_mat, Mat3, Transform, Vec3};

use super::Pose;

#[derive(Debug, Clone, PartialEq)]
pub struct Bone {
    pub name: String,
    pub parent: Option<usize>,
    /// World transform in the rest (T) pose.
    pub rest: Transform,
}

/// A rigged bone hierarchy with its rest-pose world transforms.
///
/// Bones keep the index order they were declared in; [`Skeleton::order`]
/// gives a parent-before-child traversal.
#[derive(Debug, Clone)]
pub struct Skeleton {
    bones: Vec<Bone>,
    up: Vec3,
    root: usize,
    order: Vec<usize>,
    children: Vec<Vec<usize>>,
    rest_local: Vec<Transform>,
}

/// Parent-before-child ordering of a bone forest given as parent links.
///
/// Fails when the hierarchy has zero or several roots, a dangling parent
/// index, or a cycle.
pub fn topological_sort(parents: &[Option<usize>]) -> Result<Vec<usize>> {
    let n = parents.len();
    if n == 0 {
        return Err(Error::MalformedSkeleton("skeleton has no bones".into()));
    }
    let mut children = vec![Vec::new(); n];
    let mut roots = Vec::new();
    for (b, p) in parents.iter().enumerate() {
        match *p {
            None => roots.push(b),
            Some(p) if p >= n => {
                return Err(Error::MalformedSkeleton(format!(
                    "bone {b} references missing parent {p}"
                )))
            }
            Some(p) if p == b => {
                return Err(Error::MalformedSkeleton(format!("bone {b} is its own parent")))
            }
            Some(p) => children[p].push(b),
        }
    }
    match roots.len() {
        0 => return Err(Error::MalformedSkeleton("cycle detected: no root bone".into())),
        1 => {}
        _ => {
            return Err(Error::MalformedSkeleton(format!(
                "multiple roots: bones {roots:?} have no parent"
            )))
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![roots[0]];
    while let Some(b) = stack.pop() {
        order.push(b);
        // reversed so siblings come out in declaration order
        stack.extend(children[b].iter().rev().copied());
    }
    if order.len() != n {
        return Err(Error::MalformedSkeleton(format!(
            "cycle detected: {} of {} bones unreachable from the root",
            n - order.len(),
            n
        )));
    }
    Ok(order)
}

impl Skeleton {
    pub fn new(bones: Vec<Bone>, up: Vec3) -> Result<Self> {
        let parents: Vec<_> = bones.iter().map(|b| b.parent).collect();
        let order = topological_sort(&parents)?;
        let root = order[0];
        let up_norm = up.norm();
        if !(up_norm.is_finite() && up_norm > 1e-9) {
            return Err(Error::MalformedSkeleton("up axis must be a non-zero vector".into()));
        }
        for bone in &bones {
            let r = &bone.rest.rot;
            let err = (r.transpose() * r - Mat3::identity()).norm();
            if !(err < 1e-6) {
                return Err(Error::MalformedSkeleton(format!(
                    "bone '{}' rest rotation is not orthonormal (|RᵀR - I| = {err:.3e})",
                    bone.name
                )));
            }
            if !bone.rest.pos.iter().all(|v| v.is_finite()) {
                return Err(Error::MalformedSkeleton(format!(
                    "bone '{}' rest position is not finite",
                    bone.name
                )));
            }
        }
        let mut children = vec![Vec::new(); bones.len()];
        for (b, bone) in bones.iter().enumerate() {
            if let Some(p) = bone.parent {
                children[p].push(b);
            }
        }
        let rest_local = bones
            .iter()
            .map(|bone| match bone.parent {
                Some(p) => bones[p].rest.inverse() * bone.rest,
                None => bone.rest,
            })
            .collect();
        Ok(Self {
            bones,
            up: up / up_norm,
            root,
            order,
            children,
            rest_local,
        })
    }

    pub fn bones(&self) -> &[Bone] {
        &self.bones
    }

    pub fn len(&self) -> usize {
        self.bones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bones.is_empty()
    }

    pub fn up(&self) -> Vec3 {
        self.up
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn parent(&self, bone: usize) -> Option<usize> {
        self.bones[bone].parent
    }

    pub fn children(&self, bone: usize) -> &[usize] {
        &self.children[bone]
    }

    /// Rest transform of `bone` relative to its parent (world transform for the root).
    pub fn rest_local(&self, bone: usize) -> &Transform {
        &self.rest_local[bone]
    }

    pub fn rest(&self, bone: usize) -> &Transform {
        &self.bones[bone].rest
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.bones.iter().position(|b| b.name == name)
    }

    /// Height of the root above the origin along the up axis in the rest pose.
    pub fn root_height(&self) -> f64 {
        self.up.dot(&self.bones[self.root].rest.pos)
    }

    /// Per-bone world transforms for `pose`.
    ///
    /// `world(b) = world(parent) · rest_local(b) · rot(q_b)`; the root is
    /// placed at `pose.root_position` with orientation `rest_rot · rot(q_root)`.
    pub fn forward_kinematics(&self, pose: &Pose) -> Vec<Transform> {
        assert_eq!(
            pose.rotations.len(),
            self.bones.len(),
            "pose bone count does not match skeleton"
        );
        let local: Vec<Mat3> = pose.rotations.iter().map(quat_to_mat).collect();
        self.forward_kinematics_mats(&pose.root_position, &local)
    }

    /// Forward kinematics from local rotation matrices (rest-relative).
    pub fn forward_kinematics_mats(&self, root_position: &Vec3, local: &[Mat3]) -> Vec<Transform> {
        let mut world = vec![Transform::IDENTITY; self.bones.len()];
        for &b in &self.order {
            let rl = &self.rest_local[b];
            world[b] = match self.bones[b].parent {
                None => Transform::new(rl.rot * local[b], *root_position),
                Some(p) => {
                    let wp = world[p];
                    Transform::new(wp.rot * rl.rot * local[b], wp.rot * rl.pos + wp.pos)
                }
            };
        }
        world
    }

    /// World transforms of the rest pose (equal to the stored rest transforms).
    pub fn rest_world(&self) -> Vec<Transform> {
        self.bones.iter().map(|b| b.rest).collect()
    }
}
