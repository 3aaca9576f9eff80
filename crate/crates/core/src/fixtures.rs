//! Synthetic characters and motions used by tests, benchmarks and the CLI.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::anim::io::{mapping_to_file, AnimationFile, CharacterFile};
use crate::anim::{
    skin_vertex, skinning_transforms, Animation, Bone, BoneMapping, Character, Pose, Skeleton, SkinnedMesh,
};
use crate::descriptors::HeightField;
use crate::humanoid::{self, humanoid, HumanoidParams};
use crate::job::{JobRequest, Method};
use crate::keyverts::{KeyVertex, KeyVertexSet};
use crate::limb::{Limb, LimbAssignment};
use crate::math::{exp_so3, mat_to_quat, quat_to_mat, shortest_arc, Mat3, Transform, Vec3};
use crate::optimizer::{CharacterPair, RetargetInput};

/// A source motion on one character, to be retargeted onto another.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub source: Character,
    pub target: Character,
    pub animation: Animation,
    pub mapping: BoneMapping,
    pub terrain: Option<HeightField>,
}

impl Scenario {
    pub fn pair(&self) -> CharacterPair<'_> {
        CharacterPair {
            source: &self.source,
            source_animation: &self.animation,
            target: &self.target,
            mapping: &self.mapping,
            source_keys: self.source.key_vertices.as_ref().expect("fixture has key-vertices"),
            target_keys: self.target.key_vertices.as_ref().expect("fixture has key-vertices"),
            gaze: None,
        }
    }

    pub fn input(&self) -> RetargetInput<'_> {
        RetargetInput {
            pairs: vec![self.pair()],
            terrain: self.terrain.clone(),
        }
    }

    /// Source key-vertex positions per frame.
    pub fn source_keys(&self) -> Vec<Vec<Vec3>> {
        self.animation.frames.iter().map(|p| key_positions(&self.source, p)).collect()
    }
}

/// Several scenarios optimized together; the terrain of the first one is used.
pub fn joint_input(scenarios: &[Scenario]) -> RetargetInput<'_> {
    RetargetInput {
        pairs: scenarios.iter().map(|s| s.pair()).collect(),
        terrain: scenarios.first().and_then(|s| s.terrain.clone()),
    }
}

/// Skinned positions of the character's key-vertices.
pub fn key_positions(character: &Character, pose: &Pose) -> Vec<Vec3> {
    let keys = character.key_vertices.as_ref().expect("character has key-vertices");
    positions_of(character, pose, &keys.vertices())
}

pub fn positions_of(character: &Character, pose: &Pose, vertices: &[usize]) -> Vec<Vec3> {
    let world = character.skeleton.forward_kinematics(pose);
    let skin = skinning_transforms(&character.skeleton, &world);
    vertices.iter().map(|&v| skin_vertex(&character.mesh, &skin, v)).collect()
}

pub fn key_position(character: &Character, pose: &Pose, label: &str) -> Vec3 {
    let keys = character.key_vertices.as_ref().expect("character has key-vertices");
    let k = keys.find(label).expect("known key-vertex label");
    positions_of(character, pose, &[keys.entries()[k].vertex])[0]
}

/// Lowest skinned vertex along the up axis.
pub fn lowest_point(character: &Character, pose: &Pose) -> f64 {
    let all: Vec<usize> = (0..character.mesh.len()).collect();
    let up = character.skeleton.up();
    positions_of(character, pose, &all)
        .iter()
        .map(|p| p.dot(&up))
        .fold(f64::INFINITY, f64::min)
}

/// Poses a skeleton by setting world orientations bone by bone.
pub struct Poser<'a> {
    skeleton: &'a Skeleton,
    pub pose: Pose,
}

impl<'a> Poser<'a> {
    pub fn new(skeleton: &'a Skeleton) -> Self {
        Self {
            skeleton,
            pose: Pose::rest(skeleton),
        }
    }

    fn parent_frame(&self, bone: usize) -> Mat3 {
        let world = self.skeleton.forward_kinematics(&self.pose);
        let p = self
            .skeleton
            .parent(bone)
            .map(|p| world[p].rot)
            .unwrap_or_else(Mat3::identity);
        p * self.skeleton.rest_local(bone).rot
    }

    pub fn world(&self) -> Vec<Transform> {
        self.skeleton.forward_kinematics(&self.pose)
    }

    /// Sets the world rotation of `bone` to `delta · rest`.
    pub fn set_delta(&mut self, bone: usize, delta: &Mat3) -> &mut Self {
        let target = delta * self.skeleton.rest(bone).rot;
        let a = self.parent_frame(bone);
        self.pose.rotations[bone] = mat_to_quat(&(a.transpose() * target));
        self
    }

    /// Rotates `bone` in world space by `r` about its joint.
    pub fn rotate(&mut self, bone: usize, r: &Mat3) -> &mut Self {
        let current = self.world()[bone].rot;
        let a = self.parent_frame(bone);
        self.pose.rotations[bone] = mat_to_quat(&(a.transpose() * r * current));
        self
    }

    /// Turns `bone` so the segment towards `child` points along `dir`.
    pub fn aim(&mut self, bone: usize, child: usize, dir: &Vec3) -> &mut Self {
        let w = self.world();
        let current = w[child].pos - w[bone].pos;
        let r = shortest_arc(&current, dir);
        self.rotate(bone, &r)
    }
}

fn standard(source: HumanoidParams, target: HumanoidParams) -> (Character, Character, BoneMapping) {
    let s = humanoid(&source).character;
    let t = humanoid(&target).character;
    let m = humanoid::mapping(&s.skeleton, &t.skeleton).expect("same bone names");
    (s, t, m)
}

fn short_arms() -> HumanoidParams {
    HumanoidParams {
        name: "short_arms".into(),
        upper_arm: 0.7,
        forearm: 0.7,
        ..Default::default()
    }
}

fn long_arms() -> HumanoidParams {
    HumanoidParams {
        name: "long_arms".into(),
        upper_arm: 1.5,
        forearm: 1.7,
        ..Default::default()
    }
}

/// World delta for the left arm: points it forward and inward by `beta`
/// with the palm facing the body midline.
fn clap_delta(beta: f64) -> Mat3 {
    let a = Vec3::new(-beta.sin(), -beta.cos(), 0.0);
    let n = Vec3::new(-beta.cos(), beta.sin(), 0.0);
    Mat3::from_columns(&[a, (-n).cross(&a), -n])
}

fn mirror(m: &Mat3) -> Mat3 {
    let f = Mat3::from_diagonal(&Vec3::new(-1.0, 1.0, 1.0));
    f * m * f
}

fn clap_pose(skeleton: &Skeleton, beta: f64) -> Pose {
    let d = clap_delta(beta);
    let mut p = Poser::new(skeleton);
    p.set_delta(humanoid::bone("upper_arm_l"), &d)
        .set_delta(humanoid::bone("upper_arm_r"), &mirror(&d));
    p.pose
}

/// Inward angle at which the left palm reaches `x` (the body midline is `x = 0`).
fn clap_angle(character: &Character, x: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, std::f64::consts::FRAC_PI_2);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let palm = key_position(character, &clap_pose(&character.skeleton, mid), "palm_l");
        if palm.x > x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Short-armed source holding its palms together; long-armed target.
pub fn clap_static(frames: usize) -> Scenario {
    let (source, target, mapping) = standard(short_arms(), long_arms());
    let beta = clap_angle(&source, 0.002);
    let pose = clap_pose(&source.skeleton, beta);
    Scenario {
        name: "clap".into(),
        animation: Animation::new(30.0, vec![pose; frames]).expect("valid poses"),
        source,
        target,
        mapping,
        terrain: None,
    }
}

/// Repeated claps: the palms meet once every `period` frames.
pub fn clap_motion(frames: usize, period: usize) -> Scenario {
    let (source, target, mapping) = standard(short_arms(), long_arms());
    let beta = clap_angle(&source, 0.002);
    let poses = (0..frames)
        .map(|t| {
            let phase = 2.0 * std::f64::consts::PI * t as f64 / period as f64;
            let open = 0.5 - 0.5 * phase.cos();
            clap_pose(&source.skeleton, beta - 0.45 * open)
        })
        .collect();
    Scenario {
        name: "clap_motion".into(),
        animation: Animation::new(30.0, poses).expect("valid poses"),
        source,
        target,
        mapping,
        terrain: None,
    }
}

/// Feet apart with bent knees, soles flat and on the floor.
pub fn stance_pose(character: &Character, spread: f64, bend: f64) -> Pose {
    let sk = &character.skeleton;
    let mut p = Poser::new(sk);
    for (side, sfx) in [(1.0, "l"), (-1.0, "r")] {
        let thigh = humanoid::bone(&format!("thigh_{sfx}"));
        let shin = humanoid::bone(&format!("shin_{sfx}"));
        let foot = humanoid::bone(&format!("foot_{sfx}"));
        let down_thigh = Vec3::new(side * spread.sin(), -bend.sin(), -bend.cos()).normalize();
        let down_shin = Vec3::new(side * spread.sin(), bend.sin(), -bend.cos()).normalize();
        p.aim(thigh, shin, &down_thigh);
        p.aim(shin, foot, &down_shin);
        p.set_delta(foot, &Mat3::identity());
    }
    let drop = lowest_point(character, &p.pose);
    p.pose.root_position -= sk.up() * drop;
    p.pose
}

/// A step of height `rise` for `x > 0`, flat floor elsewhere.
pub fn step_terrain(rise: f64) -> HeightField {
    let n = 101;
    let spacing = 0.02;
    let origin = [-1.0, -1.0];
    let heights = (0..n * n)
        .map(|k| {
            let i = k % n;
            let x = origin[0] + spacing * i as f64;
            if x > 1e-9 {
                rise
            } else {
                0.0
            }
        })
        .collect();
    HeightField::new(origin, spacing, [n, n], heights).expect("valid height field")
}

/// Standing on flat ground; the target stands on a 0.2 m step under its left foot.
pub fn step(frames: usize) -> Scenario {
    let (source, target, mapping) = standard(HumanoidParams::default(), HumanoidParams {
        name: "template_on_step".into(),
        ..Default::default()
    });
    let pose = stance_pose(&source, 0.25, 0.35);
    Scenario {
        name: "step".into(),
        animation: Animation::new(30.0, vec![pose; frames]).expect("valid poses"),
        source,
        target,
        mapping,
        terrain: Some(step_terrain(0.2)),
    }
}

/// Bends forward at the hips with straight legs and reaches for the toes.
pub fn toe_touch_pose(character: &Character) -> Pose {
    let sk = &character.skeleton;
    let pelvis = humanoid::bone("pelvis");
    let reach_of = |side: &str| {
        let ua = humanoid::bone(&format!("upper_arm_{side}"));
        let tip = key_position(character, &Pose::rest(sk), &format!("fingertip_{side}"));
        (tip - sk.rest(ua).pos).norm()
    };
    let build = |lean: f64| -> Poser {
        let mut p = Poser::new(sk);
        p.set_delta(pelvis, &exp_so3(&(Vec3::x() * lean)));
        for sfx in ["l", "r"] {
            p.set_delta(humanoid::bone(&format!("thigh_{sfx}")), &Mat3::identity());
        }
        p
    };
    let toe_goal = |p: &Poser, side: &str| key_position(character, &p.pose, &format!("toe_{side}")) + Vec3::z() * 0.06;
    let gap = |lean: f64| {
        let p = build(lean);
        let ua = humanoid::bone("upper_arm_l");
        (toe_goal(&p, "l") - p.world()[ua].pos).norm() - 0.98 * reach_of("l")
    };
    let (mut lo, mut hi) = (0.0, 2.4);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut p = build(0.5 * (lo + hi));
    for sfx in ["l", "r"] {
        let ua = humanoid::bone(&format!("upper_arm_{sfx}"));
        let fa = humanoid::bone(&format!("forearm_{sfx}"));
        let goal = toe_goal(&p, sfx);
        let dir = goal - p.world()[ua].pos;
        p.aim(ua, fa, &dir);
    }
    p.pose
}

/// Toe touch on the template; the target has a large belly and short arms.
pub fn belly(frames: usize) -> Scenario {
    let (source, target, mapping) = standard(HumanoidParams::default(), HumanoidParams {
        name: "big_belly".into(),
        belly: 0.15,
        upper_arm: 0.8,
        forearm: 0.8,
        ..Default::default()
    });
    let pose = toe_touch_pose(&source);
    Scenario {
        name: "belly".into(),
        animation: Animation::new(30.0, vec![pose; frames]).expect("valid poses"),
        source,
        target,
        mapping,
        terrain: None,
    }
}

/// Moves the whole motion by `offset`.
pub fn translated(mut s: Scenario, offset: Vec3) -> Scenario {
    for f in &mut s.animation.frames {
        f.root_position += offset;
    }
    s
}

/// Two clapping pairs standing `spacing` meters apart.
pub fn two_clappers(frames: usize, spacing: f64) -> Vec<Scenario> {
    let a = clap_static(frames);
    let b = translated(clap_static(frames), Vec3::new(spacing, 0.0, 0.0));
    vec![a, b]
}

fn cube(center: Vec3, half: f64, v0: usize) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let mut v = Vec::new();
    for i in 0..8 {
        let s = |bit: usize| if (i >> bit) & 1 == 1 { half } else { -half };
        v.push(center + Vec3::new(s(0), s(1), s(2)));
    }
    let f = [
        [0, 2, 1], [1, 2, 3],
        [4, 5, 6], [5, 7, 6],
        [0, 1, 4], [1, 5, 4],
        [2, 6, 3], [3, 6, 7],
        [0, 4, 2], [2, 4, 6],
        [1, 3, 5], [3, 7, 5],
    ];
    (v, f.iter().map(|t| [t[0] + v0, t[1] + v0, t[2] + v0]).collect())
}

fn random_rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> Mat3 {
    let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let axis = if axis.norm() < 1e-3 { Vec3::z() } else { axis.normalize() };
    exp_so3(&(axis * rng.random_range(0.0..max_angle)))
}

fn small_character(name: &str, lengths: [f64; 4], rotations: &[Mat3], keys: &[(usize, usize)]) -> Character {
    let parents = [None, Some(0), Some(1), Some(0), Some(3)];
    let names = ["root", "arm", "hand", "leg", "foot"];
    let offsets = [
        Vec3::zeros(),
        Vec3::new(lengths[0], 0.0, 0.05),
        Vec3::new(lengths[1], 0.0, 0.05),
        Vec3::new(-lengths[2], 0.0, 0.05),
        Vec3::new(-lengths[3], 0.0, -0.02),
    ];
    let mut positions = vec![Vec3::new(0.0, 0.0, 0.1)];
    for b in 1..5 {
        positions.push(positions[parents[b].unwrap()] + offsets[b]);
    }
    let bones: Vec<Bone> = (0..5)
        .map(|b| Bone {
            name: names[b].into(),
            parent: parents[b],
            rest: Transform::new(rotations[b], positions[b]),
        })
        .collect();
    let skeleton = Skeleton::new(bones, Vec3::z()).expect("valid skeleton");
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut skin = Vec::new();
    for b in 0..5 {
        let (v, f) = cube(positions[b] + Vec3::new(0.0, 0.03, 0.0), 0.06, vertices.len());
        for _ in 0..v.len() {
            skin.push(match parents[b] {
                None => vec![(b, 1.0)],
                Some(p) => vec![(b, 0.7), (p, 0.3)],
            });
        }
        vertices.extend(v);
        faces.extend(f);
    }
    let mesh = SkinnedMesh::new(vertices, faces, skin, 5).expect("valid mesh");
    let limbs = vec![Limb::Torso, Limb::ArmL, Limb::HandL, Limb::LegL, Limb::FootL];
    let entries = keys
        .iter()
        .enumerate()
        .map(|(k, &(b, corner))| KeyVertex {
            label: format!("k{k}"),
            vertex: b * 8 + corner,
            limb: limbs[b],
        })
        .collect();
    Character {
        name: name.into(),
        skeleton,
        key_vertices: Some(KeyVertexSet::new(entries, mesh.len()).expect("unique labels")),
        mesh,
        limbs: Some(LimbAssignment::new(limbs)),
    }
}

/// Five-bone rigs with random rest orientations and four random frames, sized
/// so that many key-vertex pairs interact and some key-vertices sit below the floor.
pub fn gradient_rig(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rotations: Vec<Mat3> = (0..5).map(|_| random_rotation(&mut rng, 3.0)).collect();
    let keys = [(0, 0), (1, 3), (2, 7), (3, 1), (4, 4), (4, 2)];
    let source = small_character("small_source", [0.25, 0.2, 0.25, 0.2], &rotations, &keys);
    let target = small_character("small_target", [0.32, 0.15, 0.2, 0.27], &rotations, &keys);
    let mapping = BoneMapping::by_name(&source.skeleton, &target.skeleton).expect("same names");
    let frames = (0..4)
        .map(|_| {
            let root = Vec3::new(0.0, 0.0, 0.1)
                + Vec3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.12..0.0));
            Pose {
                root_position: root,
                rotations: (0..5).map(|_| mat_to_quat(&random_rotation(&mut rng, 0.8))).collect(),
            }
        })
        .collect();
    Scenario {
        name: "gradient_rig".into(),
        animation: Animation::new(30.0, frames).expect("valid poses"),
        source,
        target,
        mapping,
        terrain: None,
    }
}

/// Random perturbation of every rotation by up to `angle` radians.
pub fn jitter(pose: &Pose, angle: f64, rng: &mut ChaCha8Rng) -> Pose {
    Pose {
        root_position: pose.root_position,
        rotations: pose
            .rotations
            .iter()
            .map(|q| mat_to_quat(&(quat_to_mat(q) * random_rotation(rng, angle))))
            .collect(),
    }
}

/// Axis-aligned cubes `(center, half edge, limb)`, each on its own bone under a root at the origin.
pub fn blocks(name: &str, parts: &[(Vec3, f64, Limb)]) -> Character {
    let mut bones = vec![Bone {
        name: "root".into(),
        parent: None,
        rest: Transform::new(Mat3::identity(), Vec3::zeros()),
    }];
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut skin = Vec::new();
    let mut limbs = vec![parts.first().map_or(Limb::Torso, |p| p.2)];
    for (k, &(center, half, limb)) in parts.iter().enumerate() {
        bones.push(Bone {
            name: format!("block{k}"),
            parent: Some(0),
            rest: Transform::new(Mat3::identity(), center),
        });
        limbs.push(limb);
        let (v, f) = cube(center, half, vertices.len());
        skin.extend(std::iter::repeat_n(vec![(k + 1, 1.0)], v.len()));
        vertices.extend(v);
        faces.extend(f);
    }
    let skeleton = Skeleton::new(bones, Vec3::z()).expect("valid skeleton");
    let mesh = SkinnedMesh::new(vertices, faces, skin, parts.len() + 1).expect("valid mesh");
    Character {
        name: name.into(),
        skeleton,
        mesh,
        key_vertices: None,
        limbs: Some(LimbAssignment::new(limbs)),
    }
}

/// A held pose: the whole character turned by `rotation` about the origin, then moved by `offset`.
pub fn held(character: &Character, frames: usize, rotation: &Mat3, offset: Vec3) -> Animation {
    let mut pose = Pose::rest(&character.skeleton);
    let root = character.skeleton.root();
    pose.rotations[root] = mat_to_quat(rotation);
    pose.root_position += offset;
    Animation::new(30.0, vec![pose; frames]).expect("valid poses")
}

impl Scenario {
    /// The scenario as a self-contained job request with default settings.
    pub fn request(&self) -> JobRequest {
        JobRequest {
            source_character: CharacterFile::from_character(&self.source),
            source_animation: AnimationFile::from_animation(&self.animation),
            target_character: CharacterFile::from_character(&self.target),
            mapping: Some(mapping_to_file(&self.mapping, &self.source.skeleton, &self.target.skeleton)),
            source_keys: None,
            target_keys: None,
            terrain: self.terrain.clone(),
            gaze: None,
            config: Default::default(),
            method: Method::Optimize,
            seed: 0,
            threads: 1,
        }
    }
}

/// Scenarios by name, as listed by [`SCENARIOS`].
pub fn scenario(name: &str, frames: usize) -> Option<Scenario> {
    Some(match name {
        "clap" => clap_static(frames),
        "clap_motion" => clap_motion(frames, 30),
        "step" => step(frames),
        "belly" => belly(frames),
        "gradient_rig" => gradient_rig(7),
        _ => return None,
    })
}

pub const SCENARIOS: [&str; 5] = ["clap", "clap_motion", "step", "belly", "gradient_rig"];
