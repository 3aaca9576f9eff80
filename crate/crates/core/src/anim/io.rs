//! JSON file formats for characters, animations, bone mappings and key-vertex sets.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keyverts::{KeyVertex, KeyVertexSet};
use crate::limb::{Limb, LimbAssignment};
use crate::math::{Mat4, Transform, Vec3};

use super::{Animation, Bone, BoneMapping, Character, Pose, Skeleton, SkinnedMesh};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacterFile {
    pub name: String,
    #[serde(default = "default_up")]
    pub up_axis: [f64; 3],
    pub skeleton: SkeletonFile,
    pub mesh: MeshFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_vertices: Option<Vec<KeyVertexEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limbs: Option<BTreeMap<Limb, Vec<String>>>,
}

fn default_up() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonFile {
    pub bones: Vec<BoneEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoneEntry {
    pub name: String,
    pub parent: Option<usize>,
    pub tpose_world: [f64; 16],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshFile {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    pub skin: Vec<Vec<(usize, f64)>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyVertexEntry {
    pub label: String,
    pub vertex: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limb: Option<Limb>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnimationFile {
    pub fps: f64,
    pub frames: Vec<FrameEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub root: [f64; 3],
    /// `[w, x, y, z]` per bone.
    pub rotations: Vec<[f64; 4]>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingFile {
    pub pairs: Vec<(String, String)>,
}

/// Deserializes JSON, reporting schema errors with the JSON path of the offending value.
pub fn from_json_str<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::parse(if path.is_empty() { ".".to_string() } else { path }, e.into_inner().to_string())
    })
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string(value).map_err(|e| Error::Invalid(e.to_string()))?;
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn matrix_from_row_major(m: &[f64; 16]) -> Mat4 {
    Mat4::from_row_slice(m)
}

fn matrix_to_row_major(t: &Transform) -> [f64; 16] {
    let m = t.to_matrix4();
    let mut out = [0.0; 16];
    for r in 0..4 {
        for c in 0..4 {
            out[r * 4 + c] = m[(r, c)];
        }
    }
    out
}

impl CharacterFile {
    pub fn into_character(self) -> Result<Character> {
        let bones = self
            .skeleton
            .bones
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let m = matrix_from_row_major(&b.tpose_world);
                let last = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
                if last != [0.0, 0.0, 0.0, 1.0] {
                    return Err(Error::parse(
                        format!("skeleton.bones[{i}].tpose_world"),
                        format!("bone '{}': last row must be [0,0,0,1]", b.name),
                    ));
                }
                Ok(Bone {
                    name: b.name.clone(),
                    parent: b.parent,
                    rest: Transform::from_matrix4(&m),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for (i, b) in self.skeleton.bones.iter().enumerate() {
            if let Some(p) = b.parent {
                if p >= bones.len() {
                    return Err(Error::parse(
                        format!("skeleton.bones[{i}].parent"),
                        format!("bone '{}' has parent index {p} out of range", b.name),
                    ));
                }
            }
        }
        let skeleton = Skeleton::new(bones, Vec3::from(self.up_axis))?;
        let mesh = SkinnedMesh::new(
            self.mesh.vertices.iter().map(|v| Vec3::from(*v)).collect(),
            self.mesh.faces,
            self.mesh.skin,
            skeleton.len(),
        )?;
        let limbs = match &self.limbs {
            Some(table) => Some(LimbAssignment::from_names(&skeleton, table)?),
            None => None,
        };
        let key_vertices = match self.key_vertices {
            Some(entries) => {
                let entries = entries
                    .into_iter()
                    .enumerate()
                    .map(|(k, e)| {
                        let limb = match (e.limb, &limbs) {
                            (Some(l), _) => l,
                            (None, Some(limbs)) if e.vertex < mesh.len() => {
                                limbs.limb_of(mesh.dominant_bone(e.vertex))
                            }
                            (None, _) => {
                                return Err(Error::parse(
                                    format!("key_vertices[{k}]"),
                                    "key-vertex has no limb and the character has no limb table",
                                ))
                            }
                        };
                        Ok(KeyVertex {
                            label: e.label,
                            vertex: e.vertex,
                            limb,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(KeyVertexSet::new(entries, mesh.len())?)
            }
            None => None,
        };
        Ok(Character {
            name: self.name,
            skeleton,
            mesh,
            key_vertices,
            limbs,
        })
    }

    pub fn from_character(c: &Character) -> Self {
        let up = c.skeleton.up();
        CharacterFile {
            name: c.name.clone(),
            up_axis: [up.x, up.y, up.z],
            skeleton: SkeletonFile {
                bones: c
                    .skeleton
                    .bones()
                    .iter()
                    .map(|b| BoneEntry {
                        name: b.name.clone(),
                        parent: b.parent,
                        tpose_world: matrix_to_row_major(&b.rest),
                    })
                    .collect(),
            },
            mesh: MeshFile {
                vertices: c.mesh.vertices().iter().map(|v| [v.x, v.y, v.z]).collect(),
                faces: c.mesh.faces().to_vec(),
                skin: c.mesh.skin().to_vec(),
            },
            key_vertices: c.key_vertices.as_ref().map(|k| {
                k.entries()
                    .iter()
                    .map(|e| KeyVertexEntry {
                        label: e.label.clone(),
                        vertex: e.vertex,
                        limb: Some(e.limb),
                    })
                    .collect()
            }),
            limbs: c.limbs.as_ref().map(|l| l.to_names(&c.skeleton)),
        }
    }
}

impl AnimationFile {
    pub fn into_animation(self) -> Result<Animation> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::parse("fps", format!("fps must be positive, got {}", self.fps)));
        }
        let bone_count = self.frames.first().map(|f| f.rotations.len());
        let frames = self
            .frames
            .into_iter()
            .enumerate()
            .map(|(t, f)| {
                if Some(f.rotations.len()) != bone_count {
                    return Err(Error::parse(
                        format!("frames[{t}].rotations"),
                        format!("expected {} rotations, found {}", bone_count.unwrap_or(0), f.rotations.len()),
                    ));
                }
                let rotations = f
                    .rotations
                    .iter()
                    .enumerate()
                    .map(|(b, q)| {
                        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
                        let n = quat.norm();
                        if !((n - 1.0).abs() <= 1e-6) {
                            return Err(Error::parse(
                                format!("frames[{t}].rotations[{b}]"),
                                format!("quaternion norm {n} is not 1"),
                            ));
                        }
                        // keep the stored components untouched so save/load is exact
                        Ok(UnitQuaternion::new_unchecked(quat))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Pose {
                    root_position: Vec3::from(f.root),
                    rotations,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Animation {
            fps: self.fps,
            frames,
        })
    }

    pub fn from_animation(a: &Animation) -> Self {
        AnimationFile {
            fps: a.fps,
            frames: a
                .frames
                .iter()
                .map(|f| FrameEntry {
                    root: [f.root_position.x, f.root_position.y, f.root_position.z],
                    rotations: f.rotations.iter().map(|q| [q.w, q.i, q.j, q.k]).collect(),
                })
                .collect(),
        }
    }
}

pub fn parse_character(text: &str) -> Result<Character> {
    from_json_str::<CharacterFile>(text)?.into_character()
}

pub fn load_character(path: &Path) -> Result<Character> {
    parse_character(&read_text(path)?)
}

pub fn save_character(path: &Path, character: &Character) -> Result<()> {
    write_json(path, &CharacterFile::from_character(character))
}

pub fn parse_animation(text: &str) -> Result<Animation> {
    from_json_str::<AnimationFile>(text)?.into_animation()
}

pub fn load_animation(path: &Path) -> Result<Animation> {
    parse_animation(&read_text(path)?)
}

pub fn animation_to_json(animation: &Animation) -> String {
    serde_json::to_string(&AnimationFile::from_animation(animation)).expect("animation serializes")
}

pub fn save_animation(path: &Path, animation: &Animation) -> Result<()> {
    write_json(path, &AnimationFile::from_animation(animation))
}

pub fn parse_mapping(text: &str, source: &Skeleton, target: &Skeleton) -> Result<BoneMapping> {
    let file: MappingFile = from_json_str(text)?;
    BoneMapping::from_names(&file.pairs, source, target)
}

pub fn load_mapping(path: &Path, source: &Skeleton, target: &Skeleton) -> Result<BoneMapping> {
    parse_mapping(&read_text(path)?, source, target)
}

pub fn mapping_to_file(mapping: &BoneMapping, source: &Skeleton, target: &Skeleton) -> MappingFile {
    MappingFile {
        pairs: mapping.to_names(source, target),
    }
}

pub fn parse_key_vertices(text: &str, vertex_count: usize) -> Result<KeyVertexSet> {
    let entries: Vec<KeyVertex> = from_json_str(text)?;
    KeyVertexSet::new(entries, vertex_count)
}

pub fn load_key_vertices(path: &Path, vertex_count: usize) -> Result<KeyVertexSet> {
    parse_key_vertices(&read_text(path)?, vertex_count)
}

pub fn save_key_vertices(path: &Path, set: &KeyVertexSet) -> Result<()> {
    write_json(path, set.entries())
}
