//! Forward kinematics and key-vertex skinning with a hand-written reverse pass.

use crate::anim::Skeleton;
use crate::math::{Mat3, Vec3};

#[derive(Debug, Clone, Copy)]
struct Influence {
    bone: usize,
    weight: f64,
    /// Rest position in the bone's rest frame: `R_bᵀ (x − P_b)`.
    local: Vec3,
    /// Rest normal in the bone's rest frame.
    normal: Vec3,
}

/// Key-vertices of one character, expressed in bone-local rest coordinates.
#[derive(Debug, Clone)]
pub struct Rig {
    skeleton: Skeleton,
    influences: Vec<Vec<Influence>>,
    rest_normals: Vec<Vec3>,
}

/// Result of one forward pass.
#[derive(Debug, Clone)]
pub struct Posed {
    pub rot: Vec<Mat3>,
    pub pos: Vec<Vec3>,
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    blended: Vec<f64>,
}

impl Rig {
    /// `rest_positions` and `rest_normals` are the key-vertices' rest coordinates;
    /// `skin[i]` their bone weights.
    pub fn new(skeleton: Skeleton, rest_positions: &[Vec3], rest_normals: &[Vec3], skin: &[Vec<(usize, f64)>]) -> Self {
        let influences = rest_positions
            .iter()
            .zip(rest_normals)
            .zip(skin)
            .map(|((x, n), weights)| {
                weights
                    .iter()
                    .filter(|(_, w)| *w > 0.0)
                    .map(|&(bone, weight)| {
                        let rest = skeleton.rest(bone);
                        Influence {
                            bone,
                            weight,
                            local: rest.rot.transpose() * (x - rest.pos),
                            normal: rest.rot.transpose() * n,
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            skeleton,
            influences,
            rest_normals: rest_normals.to_vec(),
        }
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    pub fn len(&self) -> usize {
        self.influences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.influences.is_empty()
    }

    pub fn forward(&self, root: &Vec3, local: &[Mat3]) -> Posed {
        let sk = &self.skeleton;
        let nb = sk.len();
        let mut rot = vec![Mat3::identity(); nb];
        let mut pos = vec![Vec3::zeros(); nb];
        for &b in sk.order() {
            let rl = sk.rest_local(b);
            match sk.parent(b) {
                None => {
                    rot[b] = rl.rot * local[b];
                    pos[b] = *root;
                }
                Some(p) => {
                    rot[b] = rot[p] * rl.rot * local[b];
                    pos[b] = rot[p] * rl.pos + pos[p];
                }
            }
        }
        let mut points = Vec::with_capacity(self.len());
        let mut normals = Vec::with_capacity(self.len());
        let mut blended = Vec::with_capacity(self.len());
        for (i, inf) in self.influences.iter().enumerate() {
            let mut p = Vec3::zeros();
            let mut m = Vec3::zeros();
            for f in inf {
                p += f.weight * (rot[f.bone] * f.local + pos[f.bone]);
                m += f.weight * (rot[f.bone] * f.normal);
            }
            let len = m.norm();
            points.push(p);
            if len > 1e-12 {
                normals.push(m / len);
            } else {
                log::warn!("key-vertex {i}: blended normal vanished, using rest normal");
                normals.push(self.rest_normals[i]);
            }
            blended.push(len);
        }
        Posed {
            rot,
            pos,
            points,
            normals,
            blended,
        }
    }

    /// Pulls point and normal gradients back to the root position and to each
    /// bone's local rotation matrix.
    pub fn backward(&self, posed: &Posed, local: &[Mat3], gp: &[Vec3], gn: &[Vec3]) -> (Vec3, Vec<Mat3>) {
        let sk = &self.skeleton;
        let nb = sk.len();
        let mut g_rot = vec![Mat3::zeros(); nb];
        let mut g_pos = vec![Vec3::zeros(); nb];
        for (i, inf) in self.influences.iter().enumerate() {
            let len = posed.blended[i];
            let n = posed.normals[i];
            let gm = if len > 1e-12 {
                (gn[i] - n * n.dot(&gn[i])) / len
            } else {
                Vec3::zeros()
            };
            let (pi, mi) = (gp[i], gm);
            if pi == Vec3::zeros() && mi == Vec3::zeros() {
                continue;
            }
            for f in inf {
                g_rot[f.bone] += f.weight * (pi * f.local.transpose() + mi * f.normal.transpose());
                g_pos[f.bone] += f.weight * pi;
            }
        }
        let mut g_local = vec![Mat3::zeros(); nb];
        let mut g_root = Vec3::zeros();
        for &b in sk.order().iter().rev() {
            let rl = sk.rest_local(b);
            match sk.parent(b) {
                None => {
                    g_local[b] = rl.rot.transpose() * g_rot[b];
                    g_root += g_pos[b];
                }
                Some(p) => {
                    let frame = posed.rot[p] * rl.rot;
                    g_local[b] = frame.transpose() * g_rot[b];
                    let gr = g_rot[b] * (rl.rot * local[b]).transpose() + g_pos[b] * rl.pos.transpose();
                    let gt = g_pos[b];
                    g_rot[p] += gr;
                    g_pos[p] += gt;
                }
            }
        }
        (g_root, g_local)
    }
}
