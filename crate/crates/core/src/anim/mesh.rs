use log::warn;

use crate::error::{Error, Result};
use crate::math::{Transform, Vec3};

use super::Skeleton;

/// Triangle mesh in the rest pose with sparse per-vertex skin weights.
#[derive(Debug, Clone)]
pub struct SkinnedMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    skin: Vec<Vec<(usize, f64)>>,
    rest_normals: Vec<Vec3>,
}

impl SkinnedMesh {
    pub fn new(
        vertices: Vec<Vec3>,
        faces: Vec<[usize; 3]>,
        skin: Vec<Vec<(usize, f64)>>,
        bone_count: usize,
    ) -> Result<Self> {
        if skin.len() != vertices.len() {
            return Err(Error::parse(
                "mesh.skin",
                format!("{} skin entries for {} vertices", skin.len(), vertices.len()),
            ));
        }
        for (v, p) in vertices.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::parse(format!("mesh.vertices[{v}]"), "non-finite coordinate"));
            }
        }
        for (f, face) in faces.iter().enumerate() {
            if let Some(&bad) = face.iter().find(|&&i| i >= vertices.len()) {
                return Err(Error::parse(
                    format!("mesh.faces[{f}]"),
                    format!("vertex index {bad} out of range ({} vertices)", vertices.len()),
                ));
            }
        }
        for (v, weights) in skin.iter().enumerate() {
            let mut sum = 0.0;
            for &(bone, w) in weights {
                if bone >= bone_count {
                    return Err(Error::parse(
                        format!("mesh.skin[{v}]"),
                        format!("bone index {bone} out of range ({bone_count} bones)"),
                    ));
                }
                if !(w >= 0.0 && w.is_finite()) {
                    return Err(Error::parse(
                        format!("mesh.skin[{v}]"),
                        format!("negative or non-finite weight {w} on vertex {v}"),
                    ));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-5 {
                return Err(Error::parse(
                    format!("mesh.skin[{v}]"),
                    format!("weights of vertex {v} sum to {sum}, expected 1"),
                ));
            }
        }
        let rest_normals = area_weighted_normals(&vertices, &faces);
        Ok(Self {
            vertices,
            faces,
            skin,
            rest_normals,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn skin(&self) -> &[Vec<(usize, f64)>] {
        &self.skin
    }

    pub fn rest_normals(&self) -> &[Vec3] {
        &self.rest_normals
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Bone carrying the largest weight for vertex `v` (first one on ties).
    pub fn dominant_bone(&self, v: usize) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for &(b, w) in &self.skin[v] {
            if w > best.1 {
                best = (b, w);
            }
        }
        best.0
    }

    /// Extent of the rest-pose mesh along `up`.
    pub fn height(&self, up: &Vec3) -> f64 {
        let (lo, hi) = self
            .vertices
            .iter()
            .map(|v| up.dot(v))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), h| (lo.min(h), hi.max(h)));
        if lo.is_finite() {
            hi - lo
        } else {
            0.0
        }
    }

    pub fn face_area(&self, f: usize) -> f64 {
        triangle_area(&self.vertices, &self.faces[f])
    }
}

pub(crate) fn triangle_area(vertices: &[Vec3], face: &[usize; 3]) -> f64 {
    let [a, b, c] = face.map(|i| vertices[i]);
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Area-weighted average of incident face normals, normalized.
pub fn area_weighted_normals(vertices: &[Vec3], faces: &[[usize; 3]]) -> Vec<Vec3> {
    let mut acc = vec![Vec3::zeros(); vertices.len()];
    for face in faces {
        let [a, b, c] = face.map(|i| vertices[i]);
        // cross product norm is twice the area, so this is already area-weighted
        let n = (b - a).cross(&(c - a));
        for &i in face {
            acc[i] += n;
        }
    }
    acc.into_iter()
        .map(|n| {
            let len = n.norm();
            if len > 0.0 {
                n / len
            } else {
                Vec3::zeros()
            }
        })
        .collect()
}

/// Skinning matrices `W_b · T_b⁻¹` for posed world transforms.
pub fn skinning_transforms(skeleton: &Skeleton, world: &[Transform]) -> Vec<Transform> {
    world
        .iter()
        .zip(skeleton.bones())
        .map(|(w, bone)| *w * bone.rest.inverse())
        .collect()
}

/// Posed positions of all vertices: `v' = Σ_b w_vb · W_b T_b⁻¹ · v`.
pub fn linear_blend_skinning(mesh: &SkinnedMesh, skeleton: &Skeleton, world: &[Transform]) -> Vec<Vec3> {
    let skin = skinning_transforms(skeleton, world);
    (0..mesh.len()).map(|v| skin_vertex(mesh, &skin, v)).collect()
}

pub fn skin_vertex(mesh: &SkinnedMesh, skin: &[Transform], v: usize) -> Vec3 {
    let p = mesh.vertices[v];
    mesh.skin[v]
        .iter()
        .fold(Vec3::zeros(), |acc, &(b, w)| acc + w * skin[b].apply(&p))
}

/// Posed unit normals for `subset`: `normalize(Σ_b w_vb · R_b R_b,rest⁻¹ · n_rest)`.
///
/// A vertex whose blended normal vanishes falls back to its rest normal.
pub fn skinned_normals(mesh: &SkinnedMesh, skin: &[Transform], subset: &[usize]) -> Vec<Vec3> {
    subset
        .iter()
        .map(|&v| {
            let n0 = mesh.rest_normals[v];
            let m = mesh.skin[v]
                .iter()
                .fold(Vec3::zeros(), |acc, &(b, w)| acc + w * (skin[b].rot * n0));
            let len = m.norm();
            if len > 1e-12 {
                m / len
            } else {
                warn!("vertex {v}: blended normal vanished, using rest normal");
                n0
            }
        })
        .collect()
}
