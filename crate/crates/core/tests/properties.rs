use nalgebra::UnitQuaternion;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semret_core::anim::{topological_sort, Bone, BoneMapping, Pose, Skeleton};
use semret_core::descriptors::{compute_descriptors, Ground, HeightField};
use semret_core::fixtures::{key_positions, stance_pose};
use semret_core::humanoid::template;
use semret_core::math::{exp_so3, quat_to_mat, Mat3, Transform, Vec3};
use semret_core::naive::CopyRotations;
use semret_core::weighting::{floor_weight, interaction_weight, same_limb_mask};

fn vec3() -> impl Strategy<Value = Vec3> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn rotation() -> impl Strategy<Value = Mat3> {
    vec3().prop_map(|w| exp_so3(&(w * 1.5)))
}

fn random_pose(skeleton: &Skeleton, seed: u64, angle: f64) -> Pose {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pose = Pose::rest(skeleton);
    for q in pose.rotations.iter_mut() {
        let w = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        *q = UnitQuaternion::from_scaled_axis(w * angle);
    }
    pose.root_position += Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0);
    pose
}

fn random_tree(seed: u64, n: usize) -> Vec<Option<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let canonical: Vec<Option<usize>> = (0..n)
        .map(|i| if i == 0 { None } else { Some(rng.random_range(0..i)) })
        .collect();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut parents = vec![None; n];
    for (i, p) in canonical.iter().enumerate() {
        parents[perm[i]] = p.map(|p| perm[p]);
    }
    parents
}

/// Same joints as `skeleton`, with every rest frame spun by a random rotation.
fn reframed(skeleton: &Skeleton, seed: u64) -> Skeleton {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bones = skeleton
        .bones()
        .iter()
        .map(|b| {
            let w = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            Bone {
                name: b.name.clone(),
                parent: b.parent,
                rest: Transform::new(b.rest.rot * exp_so3(&w), b.rest.pos),
            }
        })
        .collect();
    Skeleton::new(bones, skeleton.up()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn topological_order_puts_parents_first(seed in any::<u64>(), n in 1usize..40) {
        let parents = random_tree(seed, n);
        let order = topological_sort(&parents).unwrap();
        prop_assert_eq!(order.len(), n);
        let mut position = vec![usize::MAX; n];
        for (k, &b) in order.iter().enumerate() {
            position[b] = k;
        }
        for (child, p) in parents.iter().enumerate() {
            prop_assert!(position[child] != usize::MAX);
            if let Some(p) = p {
                prop_assert!(position[*p] < position[child]);
            }
        }
    }

    #[test]
    fn fk_commutes_with_rigid_root_motion(seed in any::<u64>(), g in rotation(), shift in vec3()) {
        let skel = template().character.skeleton;
        let pose = random_pose(&skel, seed, 0.8);
        let base = skel.forward_kinematics(&pose);
        let root = skel.root();
        let k = skel.rest(root).rot;
        let mut moved = pose.clone();
        let l = quat_to_mat(&pose.rotations[root]);
        moved.rotations[root] = UnitQuaternion::from_matrix(&(k.transpose() * g * k * l));
        moved.root_position += shift;
        let after = skel.forward_kinematics(&moved);
        for (a, b) in base.iter().zip(&after) {
            let expect = g * (a.pos - pose.root_position) + pose.root_position + shift;
            prop_assert!((expect - b.pos).norm() < 1e-9);
            prop_assert!((g * a.rot - b.rot).norm() < 1e-9);
        }
    }

    #[test]
    fn copy_rotations_ignores_rest_frame_choice(seed in any::<u64>(), frames in any::<u64>()) {
        let source = template().character.skeleton;
        let target = reframed(&source, frames);
        let mapping = BoneMapping::by_name(&source, &target).unwrap();
        let copy = CopyRotations::new(&source, &target, &mapping).unwrap();
        let pose = random_pose(&source, seed, 1.0);
        let a = source.forward_kinematics(&pose);
        let b = target.forward_kinematics(&copy.transfer(&pose));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.pos - y.pos).norm() < 1e-6);
        }
    }

    #[test]
    fn descriptors_are_rigidly_invariant(points in prop::collection::vec(vec3(), 2..12), g in rotation(), shift in vec3()) {
        let normals: Vec<Vec3> = points.iter().map(|p| (p + Vec3::new(0.1, 0.2, 0.3)).normalize()).collect();
        let moved: Vec<Vec3> = points.iter().map(|p| g * p + shift).collect();
        let moved_normals: Vec<Vec3> = normals.iter().map(|n| g * n).collect();
        let ground = Ground::flat(Vec3::z());
        let a = &compute_descriptors(std::slice::from_ref(&points), &[normals], 30.0, &ground).unwrap()[0];
        let b = &compute_descriptors(&[moved], &[moved_normals], 30.0, &ground).unwrap()[0];
        let n = points.len();
        for i in 0..n {
            for j in 0..n {
                let (ij, ji) = (i * n + j, j * n + i);
                prop_assert!((a.dist[ij] - b.dist[ij]).abs() < 1e-12);
                prop_assert!((a.pen[ij] - b.pen[ij]).abs() < 1e-12);
                prop_assert_eq!(a.dist[ij], a.dist[ji]);
                for c in 0..3 {
                    prop_assert_eq!(a.dir[ij][c], -a.dir[ji][c]);
                }
                let d = Vec3::from(a.dir[ij]);
                prop_assert!((g * d - Vec3::from(b.dir[ij])).norm() < 1e-12);
            }
            prop_assert_eq!(a.dist[i * n + i], 0.0);
        }
    }

    #[test]
    fn raising_flat_terrain_lowers_heights(points in prop::collection::vec(vec3(), 1..8), rise in -2.0..2.0f64) {
        let normals = vec![Vec3::z(); points.len()];
        let flat = Ground::flat(Vec3::z());
        let raised = Ground::new(Vec3::z(), Some(HeightField::constant(rise)));
        let a = &compute_descriptors(std::slice::from_ref(&points), &[normals.clone()], 30.0, &flat).unwrap()[0];
        let b = &compute_descriptors(&[points], &[normals], 30.0, &raised).unwrap()[0];
        for (x, y) in a.height.iter().zip(&b.height) {
            prop_assert!((x - rise - y).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_are_bounded_and_non_increasing(a in -1.0..3.0f64, b in -1.0..3.0f64, lo in 0.01..0.5f64, width in 0.01..1.0f64) {
        let hi = lo + width;
        let (near, far) = if a <= b { (a, b) } else { (b, a) };
        for w in [interaction_weight(near, lo, hi), interaction_weight(far, lo, hi), floor_weight(near, lo, hi), floor_weight(far, lo, hi)] {
            prop_assert!((0.0..=1.0).contains(&w));
        }
        prop_assert!(interaction_weight(near, lo, hi) >= interaction_weight(far, lo, hi));
        prop_assert!(floor_weight(near, lo, hi) >= floor_weight(far, lo, hi));
        prop_assert_eq!(interaction_weight(lo.min(near), lo, hi), 1.0);
        prop_assert_eq!(interaction_weight(hi.max(far), lo, hi), 0.0);
    }

    #[test]
    fn standing_interaction_weights_are_sparse(spread in 0.1..0.35f64, bend in 0.0..0.4f64) {
        let h = template();
        let c = &h.character;
        let pose = stance_pose(c, spread, bend);
        let p = key_positions(c, &pose);
        let n = p.len();
        let height = c.height();
        let (d_min, d_max) = (0.05 * height, 0.15 * height);
        let rest = key_positions(c, &Pose::rest(&c.skeleton));
        let mask = same_limb_mask(&rest, &c.key_vertices.as_ref().unwrap().limbs(), d_max);
        let mut zeros = 0;
        for i in 0..n {
            for j in 0..n {
                let w = if mask[i * n + j] { 0.0 } else { interaction_weight((p[i] - p[j]).norm(), d_min, d_max) };
                if w == 0.0 {
                    zeros += 1;
                }
            }
        }
        let sparsity = zeros as f64 / (n * n) as f64;
        prop_assert!(sparsity > 0.9, "sparsity {}", sparsity);
    }
}
