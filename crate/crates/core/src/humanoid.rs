//! Procedural humanoid used as the key-vertex template and for test fixtures.
//!
//! Z is up, the character faces -Y and its left side is +X. The body is a set
//! of closed tubes (torso, head, arms, hands, legs, feet), each with end caps
//! and skin weights blended across the joints they span.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::anim::{Bone, BoneMapping, Character, Skeleton, SkinnedMesh};
use crate::error::Result;
use crate::keyverts::{KeyVertex, KeyVertexSet};
use crate::limb::{Limb, LimbAssignment};
use crate::math::{shortest_arc, Transform, Vec3};

pub const BONE_NAMES: [&str; 21] = [
    "pelvis",
    "spine",
    "chest",
    "neck",
    "head",
    "shoulder_l",
    "upper_arm_l",
    "forearm_l",
    "hand_l",
    "shoulder_r",
    "upper_arm_r",
    "forearm_r",
    "hand_r",
    "thigh_l",
    "shin_l",
    "foot_l",
    "toe_l",
    "thigh_r",
    "shin_r",
    "foot_r",
    "toe_r",
];

const PARENTS: [Option<usize>; 21] = [
    None,
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(2),
    Some(5),
    Some(6),
    Some(7),
    Some(2),
    Some(9),
    Some(10),
    Some(11),
    Some(0),
    Some(13),
    Some(14),
    Some(15),
    Some(0),
    Some(17),
    Some(18),
    Some(19),
];

const LIMBS: [Limb; 21] = [
    Limb::Torso,
    Limb::Torso,
    Limb::Torso,
    Limb::Head,
    Limb::Head,
    Limb::ArmL,
    Limb::ArmL,
    Limb::ArmL,
    Limb::HandL,
    Limb::ArmR,
    Limb::ArmR,
    Limb::ArmR,
    Limb::HandR,
    Limb::LegL,
    Limb::LegL,
    Limb::FootL,
    Limb::FootL,
    Limb::LegR,
    Limb::LegR,
    Limb::FootR,
    Limb::FootR,
];

const SIDES: usize = 16;

pub fn bone(name: &str) -> usize {
    BONE_NAMES.iter().position(|n| *n == name).expect("known humanoid bone")
}

/// Body proportions. Lengths are multipliers of the default figure (about 1.8 m tall).
#[derive(Debug, Clone, PartialEq)]
pub struct HumanoidParams {
    pub name: String,
    pub scale: f64,
    pub upper_arm: f64,
    pub forearm: f64,
    pub hand: f64,
    pub leg: f64,
    pub girth: f64,
    /// Forward bulge of the belly in meters (before `scale`).
    pub belly: f64,
}

impl Default for HumanoidParams {
    fn default() -> Self {
        Self {
            name: "template".into(),
            scale: 1.0,
            upper_arm: 1.0,
            forearm: 1.0,
            hand: 1.0,
            leg: 1.0,
            girth: 1.0,
            belly: 0.0,
        }
    }
}

struct Joints {
    pelvis: Vec3,
    spine: Vec3,
    chest: Vec3,
    neck: Vec3,
    head: Vec3,
    head_top: Vec3,
    /// Per side (left, right): shoulder, upper arm, forearm, hand, fingertip.
    arm: [[Vec3; 5]; 2],
    /// Per side: hip, knee, ankle, ball, toe tip.
    leg: [[Vec3; 5]; 2],
}

fn joints(p: &HumanoidParams) -> Joints {
    let s = p.scale;
    let ankle_z = 0.08;
    let knee_z = ankle_z + 0.42 * p.leg;
    let hip_z = knee_z + 0.43 * p.leg;
    let pelvis = Vec3::new(0.0, 0.0, hip_z + 0.02);
    let spine = pelvis + Vec3::new(0.0, 0.0, 0.13);
    let chest = spine + Vec3::new(0.0, 0.0, 0.17);
    let neck = chest + Vec3::new(0.0, 0.0, 0.25);
    let head = neck + Vec3::new(0.0, 0.0, 0.10);
    let head_top = head + Vec3::new(0.0, 0.0, 0.22);
    let shoulder_z = neck.z - 0.06;
    let arm = [1.0, -1.0].map(|side: f64| {
        let sh = Vec3::new(side * 0.04 * p.girth, 0.0, shoulder_z);
        let ua = Vec3::new(side * 0.17 * p.girth, 0.0, shoulder_z);
        let fa = ua + Vec3::new(side * 0.28 * p.upper_arm, 0.0, 0.0);
        let hd = fa + Vec3::new(side * 0.25 * p.forearm, 0.0, 0.0);
        let tip = hd + Vec3::new(side * 0.19 * p.hand, 0.0, 0.0);
        [sh, ua, fa, hd, tip]
    });
    let leg = [1.0, -1.0].map(|side: f64| {
        let x = side * 0.10 * p.girth;
        [
            Vec3::new(x, 0.0, hip_z),
            Vec3::new(x, 0.0, knee_z),
            Vec3::new(x, 0.0, ankle_z),
            Vec3::new(x, -0.13, 0.03),
            Vec3::new(x, -0.20, 0.03),
        ]
    });
    let sc = |v: Vec3| v * s;
    Joints {
        pelvis: sc(pelvis),
        spine: sc(spine),
        chest: sc(chest),
        neck: sc(neck),
        head: sc(head),
        head_top: sc(head_top),
        arm: arm.map(|a| a.map(sc)),
        leg: leg.map(|a| a.map(sc)),
    }
}

fn skeleton(j: &Joints) -> Skeleton {
    // (joint position, direction towards the child joint)
    let mut placed: Vec<(Vec3, Vec3)> = vec![
        (j.pelvis, j.spine - j.pelvis),
        (j.spine, j.chest - j.spine),
        (j.chest, j.neck - j.chest),
        (j.neck, j.head - j.neck),
        (j.head, j.head_top - j.head),
    ];
    for a in &j.arm {
        for k in 0..4 {
            placed.push((a[k], a[k + 1] - a[k]));
        }
    }
    for l in &j.leg {
        for k in 0..4 {
            placed.push((l[k], l[k + 1] - l[k]));
        }
    }
    let bones = placed
        .into_iter()
        .enumerate()
        .map(|(b, (pos, dir))| Bone {
            name: BONE_NAMES[b].to_string(),
            parent: PARENTS[b],
            rest: Transform::new(shortest_arc(&Vec3::y(), &dir), pos),
        })
        .collect();
    Skeleton::new(bones, Vec3::z()).expect("humanoid skeleton is valid")
}

struct MeshBuilder {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    skin: Vec<Vec<(usize, f64)>>,
}

/// Index layout of one generated tube.
#[derive(Debug, Clone)]
struct Tube {
    first: usize,
    rings: usize,
    centers: Vec<Vec3>,
    end_cap: usize,
}

impl Tube {
    fn vertex(&self, ring: usize, side: usize) -> usize {
        self.first + ring * SIDES + side
    }

    /// Vertex of ring `ring` whose outward offset best matches `dir`.
    fn toward(&self, mesh: &MeshBuilder, ring: usize, dir: Vec3) -> usize {
        let c = self.centers[ring];
        (0..SIDES)
            .map(|s| self.vertex(ring, s))
            .max_by(|&a, &b| {
                let da = (mesh.vertices[a] - c).normalize().dot(&dir);
                let db = (mesh.vertices[b] - c).normalize().dot(&dir);
                da.total_cmp(&db)
            })
            .unwrap()
    }

    /// Ring closest to fraction `t` of the tube length.
    fn ring_at(&self, t: f64) -> usize {
        ((t * (self.rings - 1) as f64).round() as usize).min(self.rings - 1)
    }
}

/// Skin weights along a straight chain of bones: joint `k` separates `bones[k-1]`
/// and `bones[k]`, with a linear blend of half-width `blend` around it.
fn chain_weights(x: f64, cuts: &[f64], bones: &[usize], blend: f64) -> Vec<(usize, f64)> {
    let seg = cuts.iter().take_while(|&&c| x >= c).count();
    let mut w = vec![(bones[seg], 1.0)];
    if seg > 0 {
        let d = x - cuts[seg - 1];
        if d < blend {
            let prev = 0.5 * (1.0 - d / blend);
            w = vec![(bones[seg], 1.0 - prev), (bones[seg - 1], prev)];
        }
    }
    if seg < cuts.len() {
        let d = cuts[seg] - x;
        if d < blend {
            let next = 0.5 * (1.0 - d / blend);
            let own = w[0].1 - next;
            w[0].1 = own;
            w.push((bones[seg + 1], next));
        }
    }
    w.retain(|(_, v)| *v > 0.0);
    w
}

impl MeshBuilder {
    /// Adds a closed tube. `offset(ring, angle)` returns the 2D cross-section
    /// point in the `(e1, e2)` frame; `weights(ring)` the skin of that ring.
    fn tube(
        &mut self,
        centers: Vec<Vec3>,
        axis: Vec3,
        e1: Vec3,
        offset: impl Fn(usize, f64) -> (f64, f64),
        weights: impl Fn(usize) -> Vec<(usize, f64)>,
    ) -> Tube {
        let d = axis.normalize();
        let e1 = (e1 - d * d.dot(&e1)).normalize();
        let e2 = d.cross(&e1);
        let first = self.vertices.len();
        let rings = centers.len();
        for (r, c) in centers.iter().enumerate() {
            let w = weights(r);
            for s in 0..SIDES {
                let theta = 2.0 * PI * s as f64 / SIDES as f64;
                let (u, v) = offset(r, theta);
                self.vertices.push(c + e1 * u + e2 * v);
                self.skin.push(w.clone());
            }
        }
        let id = |r: usize, s: usize| first + r * SIDES + (s % SIDES);
        for r in 0..rings - 1 {
            for s in 0..SIDES {
                self.faces.push([id(r, s), id(r, s + 1), id(r + 1, s + 1)]);
                self.faces.push([id(r, s), id(r + 1, s + 1), id(r + 1, s)]);
            }
        }
        let start_cap = self.vertices.len();
        self.vertices.push(centers[0]);
        self.skin.push(weights(0));
        let end_cap = self.vertices.len();
        self.vertices.push(centers[rings - 1]);
        self.skin.push(weights(rings - 1));
        for s in 0..SIDES {
            self.faces.push([start_cap, id(0, s + 1), id(0, s)]);
            self.faces.push([end_cap, id(rings - 1, s), id(rings - 1, s + 1)]);
        }
        Tube {
            first,
            rings,
            centers,
            end_cap,
        }
    }
}

fn lerp_points(a: Vec3, b: Vec3, n: usize) -> Vec<Vec3> {
    (0..n).map(|i| a + (b - a) * (i as f64 / (n - 1) as f64)).collect()
}

struct Body {
    torso: Tube,
    head: Tube,
    arms: [Tube; 2],
    hands: [Tube; 2],
    legs: [Tube; 2],
    feet: [Tube; 2],
}

fn body(p: &HumanoidParams, j: &Joints, mesh: &mut MeshBuilder) -> Body {
    let s = p.scale;
    let g = p.girth;
    let up = Vec3::z();

    // torso: crotch to the base of the neck, elliptical, with an optional belly
    let bottom = j.pelvis - up * (0.10 * s);
    let torso_centers = lerp_points(bottom, j.neck, 26);
    let (z0, z1) = (bottom.z, j.neck.z);
    let belly_z = j.spine.z;
    let torso = mesh.tube(
        torso_centers.clone(),
        up,
        Vec3::x(),
        |r, th| {
            let z = torso_centers[r].z;
            let t = (z - z0) / (z1 - z0);
            // narrower at the hips and towards the neck
            let taper = 1.0 - 0.25 * (2.0 * t - 1.1).powi(2).min(1.0) - if t > 0.9 { 2.5 * (t - 0.9) } else { 0.0 };
            let rx = 0.16 * g * s * taper;
            let mut ry = 0.11 * g * s * taper;
            let front = (-th.sin()).max(0.0);
            let bump = (-((z - belly_z) / (0.14 * s)).powi(2)).exp();
            ry += p.belly * s * bump * front * front;
            (rx * th.cos(), ry * th.sin())
        },
        |r| chain_weights(torso_centers[r].z, &[j.spine.z, j.chest.z], &[bone("pelvis"), bone("spine"), bone("chest")], 0.04 * s),
    );

    // neck and head
    let head_centers = lerp_points(j.neck - up * (0.02 * s), j.head_top, 16);
    let head_center_z = j.head.z + 0.10 * s;
    let head = mesh.tube(
        head_centers.clone(),
        up,
        Vec3::x(),
        |r, th| {
            let z = head_centers[r].z;
            let sphere = 1.0 - ((z - head_center_z) / (0.125 * s)).powi(2);
            let rr = if sphere > 0.0 { 0.10 * s * sphere.sqrt() } else { 0.0 };
            let rr = rr.max(0.055 * s).min(0.10 * s);
            let rr = if r == head_centers.len() - 1 { 0.03 * s } else { rr };
            (rr * th.cos(), 1.1 * rr * th.sin())
        },
        |r| chain_weights(head_centers[r].z, &[j.head.z], &[bone("neck"), bone("head")], 0.03 * s),
    );

    let sides = [("_l", 1.0), ("_r", -1.0)];
    let arms = sides.map(|(sfx, side)| {
        let a = j.arm[if side > 0.0 { 0 } else { 1 }];
        let start = a[0] + (a[1] - a[0]) * 0.6;
        let centers = lerp_points(start, a[3], 20);
        let len = (a[3] - start).norm();
        let cuts = [(a[1] - start).norm(), (a[2] - start).norm()];
        let bones = [bone(&format!("shoulder{sfx}")), bone(&format!("upper_arm{sfx}")), bone(&format!("forearm{sfx}"))];
        let c2 = centers.clone();
        let c3 = centers.clone();
        mesh.tube(
            centers,
            Vec3::x() * side,
            Vec3::y(),
            move |r, th| {
                let t = (c2[r] - start).norm() / len;
                let rr = (0.055 - 0.02 * t) * s;
                (rr * th.cos(), rr * th.sin())
            },
            move |r| chain_weights((c3[r] - start).norm(), &cuts, &bones, 0.04 * s),
        )
    });

    let hands = sides.map(|(sfx, side)| {
        let a = j.arm[if side > 0.0 { 0 } else { 1 }];
        let centers = lerp_points(a[3], a[4], 8);
        let hb = bone(&format!("hand{sfx}"));
        let fb = bone(&format!("forearm{sfx}"));
        let n = centers.len();
        // e1 = +Y; e2 = d x e1 points up on the left hand and down on the right
        mesh.tube(
            centers,
            Vec3::x() * side,
            Vec3::y(),
            |r, th| {
                let t = r as f64 / (n - 1) as f64;
                let width = 0.045 * s * (1.0 - 0.3 * t);
                let thick = 0.016 * s;
                (width * th.cos(), thick * th.sin())
            },
            move |r| if r == 0 { vec![(hb, 0.6), (fb, 0.4)] } else { vec![(hb, 1.0)] },
        )
    });

    let legs = sides.map(|(sfx, side)| {
        let l = j.leg[if side > 0.0 { 0 } else { 1 }];
        let start = l[0] + up * (0.04 * s);
        let centers = lerp_points(start, l[2], 26);
        let len = (l[2] - start).norm();
        let cuts = [(l[1] - start).norm()];
        let bones = [bone(&format!("thigh{sfx}")), bone(&format!("shin{sfx}"))];
        let c2 = centers.clone();
        let c3 = centers.clone();
        mesh.tube(
            centers,
            -up,
            Vec3::x(),
            move |r, th| {
                let t = (c2[r] - start).norm() / len;
                let rr = (0.075 - 0.03 * t) * s * g.sqrt();
                (rr * th.cos(), rr * th.sin())
            },
            move |r| chain_weights((c3[r] - start).norm(), &cuts, &bones, 0.05 * s),
        )
    });

    let feet = sides.map(|(sfx, side)| {
        let l = j.leg[if side > 0.0 { 0 } else { 1 }];
        let half_h = 0.04 * s;
        let heel = Vec3::new(l[2].x, 0.05 * s, half_h);
        let tip = Vec3::new(l[2].x, l[4].y, half_h);
        let centers = lerp_points(heel, tip, 10);
        let ball_y = l[3].y;
        let fb = bone(&format!("foot{sfx}"));
        let tb = bone(&format!("toe{sfx}"));
        let c2 = centers.clone();
        // axis -Y with e1 = +X gives e2 = +Z
        mesh.tube(
            centers,
            -Vec3::y(),
            Vec3::x(),
            move |_, th| {
                let v = (1.1 * half_h * th.sin()).max(-half_h);
                (0.045 * s * th.cos(), v)
            },
            move |r| {
                if c2[r].y > ball_y {
                    vec![(fb, 1.0)]
                } else {
                    vec![(tb, 1.0)]
                }
            },
        )
    });

    Body {
        torso,
        head,
        arms,
        hands,
        legs,
        feet,
    }
}

/// A generated humanoid with its 41-entry key-vertex set attached and the
/// 96-entry extension alongside.
#[derive(Debug, Clone)]
pub struct Humanoid {
    pub character: Character,
    pub extended: KeyVertexSet,
}

pub fn humanoid(params: &HumanoidParams) -> Humanoid {
    let j = joints(params);
    let skeleton = skeleton(&j);
    let mut mb = MeshBuilder {
        vertices: Vec::new(),
        faces: Vec::new(),
        skin: Vec::new(),
    };
    let body = body(params, &j, &mut mb);
    let keys = key_vertices(&body, &mb, &j);
    let extended = extended_key_vertices(&body, &mb, &keys);
    let mesh = SkinnedMesh::new(mb.vertices, mb.faces, mb.skin, skeleton.len()).expect("humanoid mesh is valid");
    let n = mesh.len();
    let character = Character {
        name: params.name.clone(),
        skeleton,
        mesh,
        key_vertices: Some(KeyVertexSet::new(keys, n).expect("unique key-vertices")),
        limbs: Some(LimbAssignment::new(LIMBS.to_vec())),
    };
    Humanoid {
        character,
        extended: KeyVertexSet::new(extended, n).expect("unique key-vertices"),
    }
}

/// The default template character.
pub fn template() -> Humanoid {
    humanoid(&HumanoidParams::default())
}

fn key_vertices(b: &Body, m: &MeshBuilder, j: &Joints) -> Vec<KeyVertex> {
    let mut out = Vec::new();
    let mut add = |label: &str, limb: Limb, vertex: usize| {
        out.push(KeyVertex {
            label: label.to_string(),
            vertex,
            limb,
        })
    };
    let front = -Vec3::y();
    let back = Vec3::y();
    let up = Vec3::z();
    let down = -Vec3::z();
    let x = Vec3::x();

    let ring_z = |t: &Tube, z: f64| -> usize {
        (0..t.rings)
            .min_by(|&a, &b| (t.centers[a].z - z).abs().total_cmp(&(t.centers[b].z - z).abs()))
            .unwrap()
    };

    let h = &b.head;
    let head_mid = j.head.z + 0.10 * (j.head_top.z - j.head.z) / 0.22;
    add("head_top", Limb::Head, h.end_cap);
    add("eye", Limb::Head, h.toward(m, ring_z(h, head_mid + 0.02 * (j.head_top.z - j.head.z) / 0.22), front));
    add("chin", Limb::Head, h.toward(m, ring_z(h, j.head.z + 0.015 * (j.head_top.z - j.head.z) / 0.22), front));
    add("ear_l", Limb::Head, h.toward(m, ring_z(h, head_mid), x));
    add("ear_r", Limb::Head, h.toward(m, ring_z(h, head_mid), -x));
    add("head_back", Limb::Head, h.toward(m, ring_z(h, head_mid), back));
    add("neck", Limb::Head, h.toward(m, ring_z(h, (j.neck.z + j.head.z) * 0.5), front));

    let t = &b.torso;
    add("chest", Limb::Torso, t.toward(m, ring_z(t, (j.chest.z + j.neck.z) * 0.5 - 0.02 * (j.neck.z - j.chest.z)), front));
    add("belly", Limb::Torso, t.toward(m, ring_z(t, j.spine.z), front));
    add("hips_front", Limb::Torso, t.toward(m, ring_z(t, j.pelvis.z - 0.04 * (j.spine.z - j.pelvis.z) / 0.13), front));
    add("back_upper", Limb::Torso, t.toward(m, ring_z(t, (j.chest.z + j.neck.z) * 0.5), back));
    add("back_lower", Limb::Torso, t.toward(m, ring_z(t, j.spine.z), back));
    add("butt", Limb::Torso, t.toward(m, ring_z(t, j.pelvis.z - 0.04 * (j.spine.z - j.pelvis.z) / 0.13), back));
    add("waist_l", Limb::Torso, t.toward(m, ring_z(t, (j.spine.z + j.chest.z) * 0.5), x));
    add("waist_r", Limb::Torso, t.toward(m, ring_z(t, (j.spine.z + j.chest.z) * 0.5), -x));

    for (k, (sfx, side, arm, hand, leg, foot)) in [
        ("_l", 1.0, Limb::ArmL, Limb::HandL, Limb::LegL, Limb::FootL),
        ("_r", -1.0, Limb::ArmR, Limb::HandR, Limb::LegR, Limb::FootR),
    ]
    .into_iter()
    .enumerate()
    {
        let a = &b.arms[k];
        let along = |tube: &Tube, p: Vec3| -> usize {
            (0..tube.rings)
                .min_by(|&r1, &r2| (tube.centers[r1] - p).norm().total_cmp(&(tube.centers[r2] - p).norm()))
                .unwrap()
        };
        let aj = j.arm[k];
        add(&format!("shoulder{sfx}"), arm, a.toward(m, along(a, aj[1] + (aj[2] - aj[1]) * 0.15), up));
        add(&format!("elbow{sfx}"), arm, a.toward(m, along(a, aj[2]), back));
        add(&format!("wrist{sfx}"), arm, a.toward(m, a.rings - 2, up));

        let hd = &b.hands[k];
        add(&format!("palm{sfx}"), hand, hd.toward(m, hd.ring_at(0.4), down));
        add(&format!("back_hand{sfx}"), hand, hd.toward(m, hd.ring_at(0.4), up));
        add(&format!("fingertip{sfx}"), hand, hd.end_cap);

        let l = &b.legs[k];
        let lj = j.leg[k];
        let inner = -x * side;
        add(&format!("thigh_front{sfx}"), leg, l.toward(m, along(l, (lj[0] + lj[1]) * 0.5), front));
        add(&format!("thigh_inner{sfx}"), leg, l.toward(m, along(l, lj[0] + (lj[1] - lj[0]) * 0.3), inner));
        add(&format!("knee{sfx}"), leg, l.toward(m, along(l, lj[1]), front));
        add(&format!("shin{sfx}"), leg, l.toward(m, along(l, (lj[1] + lj[2]) * 0.5), front));

        let f = &b.feet[k];
        add(&format!("heel{sfx}"), foot, f.toward(m, 0, down));
        add(&format!("toe{sfx}"), foot, f.toward(m, f.rings - 1, down));
        let outer_down = (x * side * 0.38 - Vec3::z() * 0.92).normalize();
        add(&format!("sole_outer{sfx}"), foot, f.toward(m, f.rings / 2, outer_down));
    }
    out
}

/// Adds 55 more key-vertices spread over every tube, for the 96-entry set.
fn extended_key_vertices(b: &Body, m: &MeshBuilder, base: &[KeyVertex]) -> Vec<KeyVertex> {
    let mut out = base.to_vec();
    let mut used: Vec<usize> = base.iter().map(|k| k.vertex).collect();
    let mut push = |label: String, limb: Limb, v: usize, out: &mut Vec<KeyVertex>| {
        if !used.contains(&v) {
            used.push(v);
            out.push(KeyVertex { label, vertex: v, limb });
        }
    };
    let dirs8: Vec<Vec3> = (0..8)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / 8.0;
            Vec3::new(a.cos(), a.sin(), 0.0)
        })
        .collect();
    // torso: three rows of six around the trunk
    for (row, t) in [0.25, 0.5, 0.75].iter().enumerate() {
        for k in 0..6 {
            let a = 2.0 * PI * (k as f64 + 0.5) / 6.0;
            let v = b.torso.toward(m, b.torso.ring_at(*t), Vec3::new(a.cos(), a.sin(), 0.0));
            push(format!("torso_{row}_{k}"), Limb::Torso, v, &mut out);
        }
    }
    for k in 0..4 {
        let v = b.head.toward(m, b.head.ring_at(0.55), dirs8[2 * k + 1]);
        push(format!("head_{k}"), Limb::Head, v, &mut out);
    }
    let sides = [("l", Limb::ArmL, Limb::HandL, Limb::LegL, Limb::FootL), ("r", Limb::ArmR, Limb::HandR, Limb::LegR, Limb::FootR)];
    for (k, (sfx, arm, hand, leg, foot)) in sides.into_iter().enumerate() {
        for (i, t) in [0.3, 0.5, 0.7].iter().enumerate() {
            for (d, dir) in [-Vec3::z(), -Vec3::y()].iter().enumerate() {
                let v = b.arms[k].toward(m, b.arms[k].ring_at(*t), *dir);
                push(format!("arm_{sfx}_{i}_{d}"), arm, v, &mut out);
            }
        }
        for (i, t) in [0.15, 0.8].iter().enumerate() {
            let v = b.hands[k].toward(m, b.hands[k].ring_at(*t), Vec3::y());
            push(format!("hand_{sfx}_{i}"), hand, v, &mut out);
        }
        for (i, t) in [0.2, 0.45, 0.75].iter().enumerate() {
            for (d, dir) in [Vec3::y(), Vec3::x(), -Vec3::x()].iter().enumerate() {
                let v = b.legs[k].toward(m, b.legs[k].ring_at(*t), *dir);
                push(format!("leg_{sfx}_{i}_{d}"), leg, v, &mut out);
            }
        }
        let v = b.feet[k].toward(m, b.feet[k].ring_at(0.5), Vec3::z());
        push(format!("foot_{sfx}_top"), foot, v, &mut out);
        let v = b.feet[k].toward(m, b.feet[k].ring_at(0.8), Vec3::z());
        push(format!("foot_{sfx}_toe_top"), foot, v, &mut out);
    }
    out.truncate(EXTENDED_COUNT);
    assert_eq!(out.len(), EXTENDED_COUNT);
    out
}

pub const EXTENDED_COUNT: usize = 96;

/// Maps every bone to the bone of the same name.
pub fn mapping(source: &Skeleton, target: &Skeleton) -> Result<BoneMapping> {
    BoneMapping::by_name(source, target)
}

pub fn limb_table() -> BTreeMap<Limb, Vec<String>> {
    let mut t: BTreeMap<Limb, Vec<String>> = BTreeMap::new();
    for (b, l) in LIMBS.iter().enumerate() {
        t.entry(*l).or_default().push(BONE_NAMES[b].to_string());
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anim::linear_blend_skinning;
    use crate::correspondence::split_limbs;

    #[test]
    fn template_has_expected_shape() {
        let h = template();
        let c = &h.character;
        assert_eq!(c.skeleton.len(), 21);
        assert_eq!(c.key_vertices.as_ref().unwrap().len(), 41);
        assert_eq!(h.extended.len(), 96);
        assert!((2000..3500).contains(&c.mesh.len()), "{}", c.mesh.len());
        let hc = c.height();
        assert!((1.7..1.9).contains(&hc), "{hc}");
        // soles on the floor
        let min_z = c.mesh.vertices().iter().map(|v| v.z).fold(f64::INFINITY, f64::min);
        assert!(min_z.abs() < 1e-12);
    }

    #[test]
    fn key_vertices_lie_on_their_limbs() {
        let h = template();
        let c = &h.character;
        let parts = split_limbs(&c.mesh, c.limbs.as_ref().unwrap());
        for kv in h.extended.entries() {
            assert!(parts[&kv.limb].contains(&kv.vertex), "{} not on {}", kv.label, kv.limb);
        }
    }

    #[test]
    fn foot_key_vertices_touch_the_floor() {
        let h = template();
        let c = &h.character;
        let kv = c.key_vertices.as_ref().unwrap();
        for e in kv.entries().iter().filter(|e| e.limb.is_foot()) {
            assert!(c.mesh.vertices()[e.vertex].z.abs() < 1e-12, "{}", e.label);
        }
        let palm = kv.find("palm_l").unwrap();
        let n = c.mesh.rest_normals()[kv.entries()[palm].vertex];
        assert!(n.z < -0.9, "{n}");
    }

    #[test]
    fn limb_parts_are_connected() {
        let h = template();
        let c = &h.character;
        let parts = split_limbs(&c.mesh, c.limbs.as_ref().unwrap());
        for (limb, verts) in &parts {
            let set: std::collections::HashSet<usize> = verts.iter().copied().collect();
            let mut adj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for f in c.mesh.faces() {
                for a in 0..3 {
                    for b in 0..3 {
                        if set.contains(&f[a]) && set.contains(&f[b]) {
                            adj.entry(f[a]).or_default().push(f[b]);
                        }
                    }
                }
            }
            let mut seen = std::collections::HashSet::from([verts[0]]);
            let mut stack = vec![verts[0]];
            while let Some(v) = stack.pop() {
                for &n in adj.get(&v).into_iter().flatten() {
                    if seen.insert(n) {
                        stack.push(n);
                    }
                }
            }
            assert_eq!(seen.len(), verts.len(), "limb {limb} is not connected");
        }
    }

    #[test]
    fn rest_skinning_is_identity() {
        let c = template().character;
        let posed = linear_blend_skinning(&c.mesh, &c.skeleton, &c.skeleton.rest_world());
        for (a, b) in posed.iter().zip(c.mesh.vertices()) {
            assert!((a - b).norm() < 1e-9);
        }
    }
}
