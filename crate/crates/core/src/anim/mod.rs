//! Characters, poses, forward kinematics and skinning.

mod character;
pub mod io;
mod mapping;
mod mesh;
mod pose;
mod skeleton;

pub use character::Character;
pub use mapping::BoneMapping;
pub use mesh::{
    area_weighted_normals, linear_blend_skinning, skin_vertex, skinned_normals, skinning_transforms, SkinnedMesh,
};
pub(crate) use mesh::triangle_area;
pub use pose::{Animation, Pose};
pub use skeleton::{topological_sort, Bone, Skeleton};
