//! Copy-rotations retargeting: transfers each bone's rotation relative to the
//! rest pose, collapsing source bones the target lacks and spreading rotations
//! over target bones the source lacks.

use crate::anim::{Animation, BoneMapping, Pose, Skeleton};
use crate::error::{Error, Result};
use crate::math::{fractional_rotation, mat_to_quat, quat_to_mat, shortest_arc, Mat3, Vec3};

/// Scales a source root position by the ratio of rest root heights.
pub fn scale_root(p_source: &Vec3, source: &Skeleton, target: &Skeleton) -> Result<Vec3> {
    let ratio = height_ratio(source, target)?;
    Ok(p_source * ratio)
}

fn height_ratio(source: &Skeleton, target: &Skeleton) -> Result<f64> {
    let h_s = source.root_height();
    let h_t = target.root_height();
    if !(h_s > 0.0) {
        return Err(Error::DegenerateSkeleton(format!(
            "source root height along the up axis is {h_s}, must be positive"
        )));
    }
    if !(h_t > 0.0) {
        return Err(Error::DegenerateSkeleton(format!(
            "target root height along the up axis is {h_t}, must be positive"
        )));
    }
    Ok(h_t / h_s)
}

/// A run of unmapped source bones between two mapped bones.
#[derive(Debug, Clone, PartialEq)]
struct Collapse {
    b1: usize,
    skipped: Vec<usize>,
    b2: usize,
}

fn find_collapses(source: &Skeleton, mapping: &BoneMapping) -> Result<Vec<Collapse>> {
    let mut out = Vec::new();
    for &b2 in source.order() {
        if mapping.target_of(b2).is_none() {
            continue;
        }
        let mut skipped = Vec::new();
        let mut cur = source.parent(b2);
        while let Some(p) = cur {
            if mapping.target_of(p).is_some() {
                break;
            }
            skipped.push(p);
            cur = source.parent(p);
        }
        let Some(b1) = cur else {
            // the root is always mapped, so every walk ends on a mapped bone
            continue;
        };
        for &u in &skipped {
            if source.children(u).len() > 1 {
                return Err(Error::UnsupportedTopology(format!(
                    "unmapped source bone '{}' has {} children; map it or one of its branches away",
                    source.bones()[u].name,
                    source.children(u).len()
                )));
            }
        }
        if !skipped.is_empty() {
            skipped.reverse();
            out.push(Collapse { b1, skipped, b2 });
        }
    }
    Ok(out)
}

/// World rotations only; positions are not needed by the rotation transfer.
fn world_rotations(skeleton: &Skeleton, local: &[Mat3]) -> Vec<Mat3> {
    let mut world = vec![Mat3::identity(); skeleton.len()];
    for &b in skeleton.order() {
        let k = skeleton.rest_local(b).rot;
        world[b] = match skeleton.parent(b) {
            None => k * local[b],
            Some(p) => world[p] * k * local[b],
        };
    }
    world
}

/// Rotation frame of `bone` before its own local rotation is applied.
fn pre_frame(skeleton: &Skeleton, world: &[Mat3], bone: usize) -> Mat3 {
    let k = skeleton.rest_local(bone).rot;
    match skeleton.parent(bone) {
        None => k,
        Some(p) => world[p] * k,
    }
}

/// Removes the rotations of source bones that have no target counterpart.
///
/// For each run of unmapped bones between mapped bones `B1` and `B2`, the
/// unmapped bones return to their rest rotation, `B1` turns so the direction
/// from `B1` to `B2` is what it was, and `B2` turns back to its previous world
/// orientation.
pub fn collapse_missing_bones(pose: &Pose, source: &Skeleton, mapping: &BoneMapping) -> Result<Pose> {
    let collapses = find_collapses(source, mapping)?;
    let local: Vec<Mat3> = pose.rotations.iter().map(quat_to_mat).collect();
    let local = apply_collapses(source, &collapses, &pose.root_position, local);
    Ok(Pose {
        root_position: pose.root_position,
        rotations: local.iter().map(mat_to_quat).collect(),
    })
}

fn apply_collapses(source: &Skeleton, collapses: &[Collapse], root: &Vec3, mut local: Vec<Mat3>) -> Vec<Mat3> {
    for c in collapses {
        let before = source.forward_kinematics_mats(root, &local);
        let dir_before = before[c.b2].pos - before[c.b1].pos;
        let rot_b2 = before[c.b2].rot;
        for &u in &c.skipped {
            local[u] = Mat3::identity();
        }
        let mid = source.forward_kinematics_mats(root, &local);
        let dir_mid = mid[c.b2].pos - mid[c.b1].pos;
        if dir_before.norm() > 1e-12 && dir_mid.norm() > 1e-12 {
            let turn = shortest_arc(&dir_mid, &dir_before);
            let world_rot: Vec<Mat3> = mid.iter().map(|t| t.rot).collect();
            let frame = pre_frame(source, &world_rot, c.b1);
            local[c.b1] = frame.transpose() * turn * mid[c.b1].rot;
        }
        let world_rot = world_rotations(source, &local);
        let frame = pre_frame(source, &world_rot, c.b2);
        local[c.b2] = frame.transpose() * rot_b2;
    }
    local
}

/// Splits the world-space rotation `w` evenly over a chain of target bones.
///
/// `chain` lists single-child bones from the top down; `world` holds target
/// world rotations, valid for the chain's parent and filled in for the chain.
/// Returns the local rotation of each chain bone. Composing them yields the
/// same end orientation as applying `w` to the last bone alone.
pub fn distribute_extra_bones(target: &Skeleton, chain: &[usize], w: &Mat3, world: &mut [Mat3]) -> Vec<Mat3> {
    let wf = if chain.len() == 1 {
        *w
    } else {
        fractional_rotation(w, 1.0 / chain.len() as f64)
    };
    chain
        .iter()
        .map(|&j| {
            let a = pre_frame(target, world, j);
            world[j] = wf * a;
            a.transpose() * wf * a
        })
        .collect()
}

/// Precomputed transfer between one source and one target skeleton.
#[derive(Debug, Clone)]
pub struct CopyRotations<'a> {
    source: &'a Skeleton,
    target: &'a Skeleton,
    mapping: &'a BoneMapping,
    collapses: Vec<Collapse>,
    /// For the top bone of each target chain, the full chain ending at a mapped bone.
    chain_at: Vec<Option<Vec<usize>>>,
    in_chain: Vec<bool>,
    ratio: f64,
    /// Same bones, same rest pose, every bone mapped to itself.
    identical: bool,
}

impl<'a> CopyRotations<'a> {
    pub fn new(source: &'a Skeleton, target: &'a Skeleton, mapping: &'a BoneMapping) -> Result<Self> {
        for &(s, t) in mapping.pairs() {
            if s >= source.len() || t >= target.len() {
                return Err(Error::InvalidMapping(format!("pair ({s}, {t}) references unknown bones")));
            }
        }
        let collapses = find_collapses(source, mapping)?;
        let mut chain_at = vec![None; target.len()];
        let mut in_chain = vec![false; target.len()];
        for &(_, t) in mapping.pairs() {
            let mut chain = vec![t];
            let mut cur = target.parent(t);
            while let Some(p) = cur {
                if mapping.source_of(p).is_some() || target.children(p).len() != 1 {
                    break;
                }
                chain.push(p);
                cur = target.parent(p);
            }
            chain.reverse();
            for &j in &chain {
                in_chain[j] = true;
            }
            let head = chain[0];
            chain_at[head] = Some(chain);
        }
        let identical = source.len() == target.len()
            && mapping.pairs().len() == source.len()
            && mapping.pairs().iter().all(|&(s, t)| s == t)
            && source.bones().iter().zip(target.bones()).all(|(a, b)| a.parent == b.parent && a.rest == b.rest);
        Ok(Self {
            source,
            target,
            mapping,
            collapses,
            chain_at,
            in_chain,
            ratio: height_ratio(source, target)?,
            identical,
        })
    }

    pub fn transfer(&self, pose: &Pose) -> Pose {
        if self.identical {
            return pose.clone();
        }
        let local: Vec<Mat3> = pose.rotations.iter().map(quat_to_mat).collect();
        let local = apply_collapses(self.source, &self.collapses, &pose.root_position, local);
        let world_s = world_rotations(self.source, &local);

        let mut world_t = vec![Mat3::identity(); self.target.len()];
        let mut local_t = vec![Mat3::identity(); self.target.len()];
        for &j in self.target.order() {
            if let Some(chain) = &self.chain_at[j] {
                let t = *chain.last().unwrap();
                let s = self.mapping.source_of(t).unwrap();
                let w = world_s[s] * pre_frame(self.source, &world_s, s).transpose();
                let rots = distribute_extra_bones(self.target, chain, &w, &mut world_t);
                for (&b, r) in chain.iter().zip(rots) {
                    local_t[b] = r;
                }
            } else if !self.in_chain[j] {
                world_t[j] = pre_frame(self.target, &world_t, j);
            }
        }
        Pose {
            root_position: pose.root_position * self.ratio,
            rotations: local_t.iter().map(mat_to_quat).collect(),
        }
    }

    pub fn transfer_animation(&self, animation: &Animation) -> Animation {
        Animation {
            fps: animation.fps,
            frames: animation.frames.iter().map(|p| self.transfer(p)).collect(),
        }
    }
}

/// Copy-rotations transfer of a single pose.
pub fn copy_rotations(source: &Skeleton, target: &Skeleton, mapping: &BoneMapping, pose: &Pose) -> Result<Pose> {
    Ok(CopyRotations::new(source, target, mapping)?.transfer(pose))
}

pub fn retarget_animation(
    source: &Skeleton,
    target: &Skeleton,
    mapping: &BoneMapping,
    animation: &Animation,
) -> Result<Animation> {
    Ok(CopyRotations::new(source, target, mapping)?.transfer_animation(animation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anim::Bone;
    use crate::math::{exp_so3, rotation_angle_between, Transform};
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chain(points: &[Vec3], rests: &[Mat3]) -> Skeleton {
        let bones = points
            .iter()
            .zip(rests)
            .enumerate()
            .map(|(i, (p, r))| Bone {
                name: format!("b{i}"),
                parent: if i == 0 { None } else { Some(i - 1) },
                rest: Transform::new(*r, *p),
            })
            .collect();
        Skeleton::new(bones, Vec3::z()).unwrap()
    }

    fn random_rot(rng: &mut ChaCha8Rng, scale: f64) -> Mat3 {
        exp_so3(&Vec3::new(
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
        ))
    }

    fn random_pose(rng: &mut ChaCha8Rng, n: usize) -> Pose {
        Pose {
            root_position: Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0),
            rotations: (0..n).map(|_| mat_to_quat(&random_rot(rng, 1.5))).collect(),
        }
    }

    fn identity_pairs(n: usize) -> Vec<(usize, usize)> {
        (0..n).map(|i| (i, i)).collect()
    }

    #[test]
    fn root_scaling_examples() {
        let up = |h: f64| chain(&[Vec3::new(0.0, 0.0, h)], &[Mat3::identity()]);
        let p = scale_root(&Vec3::new(2.0, 0.0, 3.0), &up(1.0), &up(0.5)).unwrap();
        assert_relative_eq!(p, Vec3::new(1.0, 0.0, 1.5), epsilon = 1e-15);
        let p = scale_root(&Vec3::new(0.0, 0.0, 0.9), &up(0.9), &up(1.8)).unwrap();
        assert_relative_eq!(p, Vec3::new(0.0, 0.0, 1.8), epsilon = 1e-15);
        assert!(matches!(
            scale_root(&Vec3::zeros(), &up(0.0), &up(1.0)),
            Err(Error::DegenerateSkeleton(_))
        ));
    }

    #[test]
    fn identical_skeletons_reproduce_joint_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec3> = (0..6).map(|i| Vec3::new(0.1 * i as f64, 0.0, 1.0 + 0.2 * i as f64)).collect();
        let rests: Vec<Mat3> = (0..6).map(|_| random_rot(&mut rng, 3.0)).collect();
        let skel = chain(&pts, &rests);
        let mapping = BoneMapping::new(identity_pairs(6), &skel, &skel).unwrap();
        let cr = CopyRotations::new(&skel, &skel, &mapping).unwrap();
        for _ in 0..50 {
            let pose = random_pose(&mut rng, 6);
            let out = cr.transfer(&pose);
            let a = skel.forward_kinematics(&pose);
            let b = skel.forward_kinematics(&out);
            for (x, y) in a.iter().zip(&b) {
                assert!((x.pos - y.pos).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn rest_pose_stays_rest_across_different_rest_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec3> = (0..4).map(|i| Vec3::new(0.0, 0.0, 1.0 + 0.3 * i as f64)).collect();
        let src = chain(&pts, &(0..4).map(|_| random_rot(&mut rng, 3.0)).collect::<Vec<_>>());
        let tgt = chain(&pts, &(0..4).map(|_| random_rot(&mut rng, 3.0)).collect::<Vec<_>>());
        let mapping = BoneMapping::new(identity_pairs(4), &src, &tgt).unwrap();
        let out = copy_rotations(&src, &tgt, &mapping, &Pose::rest(&src)).unwrap();
        for q in &out.rotations {
            assert!(q.angle() < 1e-9);
        }
    }

    #[test]
    fn fully_mapped_collapse_is_a_no_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<Vec3> = (0..4).map(|i| Vec3::new(0.0, 0.0, 1.0 + 0.3 * i as f64)).collect();
        let skel = chain(&pts, &vec![Mat3::identity(); 4]);
        let mapping = BoneMapping::new(identity_pairs(4), &skel, &skel).unwrap();
        let pose = random_pose(&mut rng, 4);
        let out = collapse_missing_bones(&pose, &skel, &mapping).unwrap();
        for (a, b) in pose.rotations.iter().zip(&out.rotations) {
            assert!(a.angle_to(b) < 1e-12);
        }
    }

    /// Planar six-joint chain whose middle joints 2 and 3 have no target counterpart.
    fn planar_six() -> (Skeleton, Pose) {
        let pts: Vec<Vec3> = (0..6).map(|i| Vec3::new(0.0, 0.0, 1.0 + 0.25 * i as f64)).collect();
        let skel = chain(&pts, &vec![Mat3::identity(); 6]);
        let angles = [0.0, 0.4, -0.7, 0.9, 0.3, -0.2];
        let pose = Pose {
            root_position: Vec3::new(0.0, 0.0, 1.0),
            rotations: angles
                .iter()
                .map(|a| UnitQuaternion::from_axis_angle(&Vec3::x_axis(), *a))
                .collect(),
        };
        (skel, pose)
    }

    #[test]
    fn collapse_keeps_b1_to_b2_direction() {
        let (skel, pose) = planar_six();
        let mapping = BoneMapping::new(vec![(0, 0), (1, 1), (4, 2), (5, 3)], &skel, &chain_of_four()).unwrap();
        let out = collapse_missing_bones(&pose, &skel, &mapping).unwrap();
        let before = skel.forward_kinematics(&pose);
        let after = skel.forward_kinematics(&out);
        let d0 = (before[4].pos - before[1].pos).normalize();
        let d1 = (after[4].pos - after[1].pos).normalize();
        assert!((d0 - d1).norm() < 1e-9);
        // hand-computed planar angle of the B1->B2 segment: the chain bends about x
        let theta = |d: Vec3| d.y.atan2(d.z);
        assert_relative_eq!(theta(d0), theta(d1), epsilon = 1e-9);
        assert!(rotation_angle_between(&before[4].rot, &after[4].rot) < 1e-9);
        assert!(out.rotations[2].angle() < 1e-12 && out.rotations[3].angle() < 1e-12);
    }

    fn chain_of_four() -> Skeleton {
        let pts = [0.0, 0.25, 1.0, 1.25].map(|h| Vec3::new(0.0, 0.0, 1.0 + h));
        chain(&pts, &[Mat3::identity(); 4])
    }

    #[test]
    fn collapsed_target_reproduces_end_segment_directions() {
        let (src, pose) = planar_six();
        let tgt = chain_of_four();
        let mapping = BoneMapping::new(vec![(0, 0), (1, 1), (4, 2), (5, 3)], &src, &tgt).unwrap();
        let out = copy_rotations(&src, &tgt, &mapping, &pose).unwrap();
        let ws = src.forward_kinematics(&pose);
        let wt = tgt.forward_kinematics(&out);
        let dir = |a: Vec3, b: Vec3| (b - a).normalize();
        assert!((dir(ws[1].pos, ws[4].pos) - dir(wt[1].pos, wt[2].pos)).norm() < 1e-9);
        assert!((dir(ws[4].pos, ws[5].pos) - dir(wt[2].pos, wt[3].pos)).norm() < 1e-9);
    }

    #[test]
    fn collapse_restores_b2_world_rotation_in_3d() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let pts: Vec<Vec3> = (0..6)
                .scan(Vec3::new(0.0, 0.0, 1.0), |p, _| {
                    let out = *p;
                    *p += Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), 0.3);
                    Some(out)
                })
                .collect();
            let rests: Vec<Mat3> = (0..6).map(|_| random_rot(&mut rng, 3.0)).collect();
            let skel = chain(&pts, &rests);
            let tgt = chain_of_four();
            let mapping = BoneMapping::new(vec![(0, 0), (1, 1), (4, 2), (5, 3)], &skel, &tgt).unwrap();
            let pose = random_pose(&mut rng, 6);
            let out = collapse_missing_bones(&pose, &skel, &mapping).unwrap();
            let a = skel.forward_kinematics(&pose);
            let b = skel.forward_kinematics(&out);
            assert!(rotation_angle_between(&a[4].rot, &b[4].rot) < 1e-6);
            let d0 = (a[4].pos - a[1].pos).normalize();
            let d1 = (b[4].pos - b[1].pos).normalize();
            assert!((d0 - d1).norm() < 1e-9);
        }
    }

    #[test]
    fn unmapped_branching_bone_is_rejected() {
        let bones = vec![
            Bone { name: "root".into(), parent: None, rest: Transform::new(Mat3::identity(), Vec3::z()) },
            Bone { name: "mid".into(), parent: Some(0), rest: Transform::new(Mat3::identity(), Vec3::new(0.0, 0.0, 1.5)) },
            Bone { name: "a".into(), parent: Some(1), rest: Transform::new(Mat3::identity(), Vec3::new(0.5, 0.0, 2.0)) },
            Bone { name: "b".into(), parent: Some(1), rest: Transform::new(Mat3::identity(), Vec3::new(-0.5, 0.0, 2.0)) },
        ];
        let src = Skeleton::new(bones, Vec3::z()).unwrap();
        let mapping = BoneMapping::new(vec![(0, 0), (2, 2), (3, 3)], &src, &src).unwrap();
        let err = CopyRotations::new(&src, &src, &mapping).unwrap_err();
        assert!(matches!(err, Error::UnsupportedTopology(ref m) if m.contains("'mid'")), "{err}");
    }

    /// Source: root plus one bone. Target: root plus a chain of `k` bones, the last one mapped.
    fn split_case(k: usize, rest: Mat3, w: Mat3) -> (Vec<Mat3>, Mat3, Mat3) {
        let src = chain(&[Vec3::z(), Vec3::new(0.0, 0.0, 1.5)], &[Mat3::identity(), rest]);
        let pts: Vec<Vec3> = (0..=k).map(|i| Vec3::new(0.0, 0.0, 1.0 + 0.5 * i as f64 / k as f64)).collect();
        let mut rests = vec![Mat3::identity(); k + 1];
        rests[k] = rest;
        let tgt = chain(&pts, &rests);
        let mapping = BoneMapping::new(vec![(0, 0), (1, k)], &src, &tgt).unwrap();
        let mut pose = Pose::rest(&src);
        // world delta `w` applied at bone 1: local = restᵀ w rest
        pose.rotations[1] = mat_to_quat(&(rest.transpose() * w * rest));
        let out = copy_rotations(&src, &tgt, &mapping, &pose).unwrap();
        let world = tgt.forward_kinematics(&out);
        let locals = out.rotations.iter().map(quat_to_mat).collect();
        (locals, world[k].rot, w * rest)
    }

    #[test]
    fn single_extra_bone_matches_copy() {
        let w = exp_so3(&Vec3::new(0.3, 0.2, -0.5));
        let (locals, end, expect) = split_case(1, Mat3::identity(), w);
        assert_relative_eq!(locals[1], w, epsilon = 1e-12);
        assert!(rotation_angle_between(&end, &expect) < 1e-9);
    }

    #[test]
    fn three_bones_share_a_single_axis_rotation() {
        let w = exp_so3(&(Vec3::x() * 45f64.to_radians()));
        let (locals, end, expect) = split_case(3, Mat3::identity(), w);
        for l in &locals[1..] {
            let angle = rotation_angle_between(&Mat3::identity(), l);
            assert_relative_eq!(angle, 15f64.to_radians(), epsilon = 1e-12);
        }
        assert!(rotation_angle_between(&end, &expect) < 1e-9);
    }

    #[test]
    fn random_split_over_four_keeps_end_orientation() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let w = random_rot(&mut rng, 1.5);
            let rest = random_rot(&mut rng, 3.0);
            let (_, end, expect) = split_case(4, rest, w);
            assert!(rotation_angle_between(&end, &expect) < 1e-6);
        }
    }
}
