//! Evaluation metrics for retargeted motion: jerk, penetration volumes and foot-contact scores.
//!
//! Volumes are measured on a voxel grid of edge `h_c / divisions`, filled by
//! parity ray casting along the z axis.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anim::{linear_blend_skinning, Animation, Character, Skeleton};
use crate::descriptors::{sliding, Ground, HeightField};
use crate::error::{Error, Result};
use crate::limb::Limb;
use crate::math::Vec3;

pub const DEFAULT_DIVISIONS: usize = 64;
pub const MIN_DIVISIONS: usize = 8;

/// Fraction of `h_c` within which a foot counts as grounded.
pub const GROUNDED_FRAC: f64 = 0.01;
/// Fraction of `h_c` per second below which a foot counts as locked.
pub const LOCKED_FRAC: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub max: f64,
}

impl Stats {
    fn of(values: &[f64]) -> Stats {
        if values.is_empty() {
            return Stats { mean: 0.0, max: 0.0 };
        }
        Stats {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            max: values.iter().copied().fold(0.0, f64::max),
        }
    }
}

/// Jerk magnitudes of point trajectories, `positions[t][i]`, by forward third differences.
pub fn trajectory_jerk(positions: &[Vec<Vec3>], fps: f64) -> Result<Stats> {
    if positions.len() < 4 {
        return Err(Error::Invalid(format!(
            "jerk needs at least 4 frames, got {}",
            positions.len()
        )));
    }
    let scale = fps * fps * fps;
    let mut values = Vec::new();
    for t in 0..positions.len() - 3 {
        let (a, b, c, d) = (&positions[t], &positions[t + 1], &positions[t + 2], &positions[t + 3]);
        for i in 0..a.len() {
            let j = d[i] - 3.0 * c[i] + 3.0 * b[i] - a[i];
            values.push(j.norm() * scale);
        }
    }
    Ok(Stats::of(&values))
}

/// Jerk of the joint world positions in m/s³.
pub fn jerk_stats(animation: &Animation, skeleton: &Skeleton) -> Result<Stats> {
    let positions: Vec<Vec<Vec3>> = animation
        .frames
        .iter()
        .map(|p| skeleton.forward_kinematics(p).iter().map(|t| t.pos).collect())
        .collect();
    trajectory_jerk(&positions, animation.fps)
}

/// Solid occupancy of labelled closed surfaces on an axis-aligned grid.
///
/// Each cell holds a bitmask of the labels whose interior contains its center.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    pub origin: Vec3,
    pub size: f64,
    pub dims: [usize; 3],
    pub cells: Vec<u32>,
}

impl VoxelGrid {
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.dims[1] + y) * self.dims[2] + z
    }

    pub fn center(&self, x: usize, y: usize, z: usize) -> Vec3 {
        self.origin + self.size * Vec3::new(x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5)
    }

    pub fn occupied(&self) -> usize {
        self.cells.iter().filter(|&&c| c != 0).count()
    }

    /// Sum over labels of the cells each one occupies.
    pub fn labelled_volume(&self) -> usize {
        self.cells.iter().map(|c| c.count_ones() as usize).sum()
    }
}

fn cells_along(extent: f64, size: f64) -> usize {
    ((extent / size) - 1e-9).ceil().max(1.0) as usize
}

/// Voxelizes triangles grouped by `labels[f] < 32`.
///
/// Columns with an odd number of crossings (open surfaces) only mark the cells
/// that the surface passes through.
pub fn voxelize(vertices: &[Vec3], faces: &[[usize; 3]], labels: &[usize], size: f64) -> Result<VoxelGrid> {
    if !(size > 0.0) {
        return Err(Error::Invalid(format!("voxel size must be positive, got {size}")));
    }
    if labels.len() != faces.len() {
        return Err(Error::Invalid("one label per face is required".into()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= 32) {
        return Err(Error::Invalid(format!("label {l} exceeds the 32 supported labels")));
    }
    let used: Vec<usize> = faces.iter().flatten().copied().collect();
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for &v in &used {
        lo = lo.inf(&vertices[v]);
        hi = hi.sup(&vertices[v]);
    }
    if used.is_empty() {
        lo = Vec3::zeros();
        hi = Vec3::zeros();
    }
    let dims = [
        cells_along(hi.x - lo.x, size),
        cells_along(hi.y - lo.y, size),
        cells_along(hi.z - lo.z, size),
    ];
    let mut grid = VoxelGrid {
        origin: lo,
        size,
        dims,
        cells: vec![0; dims[0] * dims[1] * dims[2]],
    };
    let columns = dims[0] * dims[1];
    // keeps sample rays off shared triangle edges
    let (jx, jy) = (0.754_877_666 * 1e-7 * size, 0.569_840_291 * 1e-7 * size);

    let mut label_set: Vec<usize> = labels.to_vec();
    label_set.sort_unstable();
    label_set.dedup();
    for &label in &label_set {
        let mut hits: Vec<Vec<f64>> = vec![Vec::new(); columns];
        for (f, face) in faces.iter().enumerate() {
            if labels[f] != label {
                continue;
            }
            let [a, b, c] = face.map(|i| vertices[i]);
            let area = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
            if area.abs() < 1e-300 {
                continue;
            }
            let xmin = a.x.min(b.x).min(c.x);
            let xmax = a.x.max(b.x).max(c.x);
            let ymin = a.y.min(b.y).min(c.y);
            let ymax = a.y.max(b.y).max(c.y);
            let i0 = (((xmin - lo.x) / size - 0.5).ceil().max(0.0)) as usize;
            let i1 = (((xmax - lo.x) / size - 0.5).floor()).min(dims[0] as f64 - 1.0);
            let k0 = (((ymin - lo.y) / size - 0.5).ceil().max(0.0)) as usize;
            let k1 = (((ymax - lo.y) / size - 0.5).floor()).min(dims[1] as f64 - 1.0);
            if i1 < 0.0 || k1 < 0.0 {
                continue;
            }
            for i in i0..=i1 as usize {
                let px = lo.x + (i as f64 + 0.5) * size + jx;
                for k in k0..=k1 as usize {
                    let py = lo.y + (k as f64 + 0.5) * size + jy;
                    let w0 = ((b.x - px) * (c.y - py) - (c.x - px) * (b.y - py)) / area;
                    let w1 = ((c.x - px) * (a.y - py) - (a.x - px) * (c.y - py)) / area;
                    let w2 = 1.0 - w0 - w1;
                    if w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0 {
                        hits[i * dims[1] + k].push(w0 * a.z + w1 * b.z + w2 * c.z);
                    }
                }
            }
        }
        let bit = 1u32 << label;
        for (col, zs) in hits.iter_mut().enumerate() {
            if zs.is_empty() {
                continue;
            }
            zs.sort_by(f64::total_cmp);
            let (i, k) = (col / dims[1], col % dims[1]);
            let cell = |z: f64| ((z - lo.z) / size - 0.5).ceil().max(0.0) as usize;
            if zs.len() % 2 == 0 {
                for span in zs.chunks(2) {
                    let (z0, z1) = (cell(span[0]), cell(span[1]).min(dims[2]));
                    for z in z0..z1 {
                        let idx = grid.index(i, k, z);
                        grid.cells[idx] |= bit;
                    }
                }
            } else {
                for &z in zs.iter() {
                    let z = (((z - lo.z) / size).floor().max(0.0) as usize).min(dims[2] - 1);
                    let idx = grid.index(i, k, z);
                    grid.cells[idx] |= bit;
                }
            }
        }
    }
    Ok(grid)
}

fn divisions_ok(divisions: usize) -> Result<()> {
    if divisions < MIN_DIVISIONS {
        return Err(Error::Config(format!(
            "voxel resolution too coarse: {divisions} cells across the character, need at least {MIN_DIVISIONS}"
        )));
    }
    Ok(())
}

/// Limb of each face: the limb shared by most of its vertices, else that of the first.
fn face_limbs(character: &Character) -> Result<Vec<usize>> {
    let per_vertex = character.vertex_limbs()?;
    Ok(character
        .mesh
        .faces()
        .iter()
        .map(|f| {
            let l = f.map(|v| per_vertex[v]);
            if l[1] == l[2] { l[1].index() } else { l[0].index() }
        })
        .collect())
}

fn frame_grids(character: &Character, animation: &Animation, labels: &[usize], divisions: usize) -> Result<Vec<VoxelGrid>> {
    divisions_ok(divisions)?;
    let size = character.height() / divisions as f64;
    animation
        .frames
        .par_iter()
        .map(|pose| {
            let world = character.skeleton.forward_kinematics(pose);
            let posed = linear_blend_skinning(&character.mesh, &character.skeleton, &world);
            voxelize(&posed, character.mesh.faces(), labels, size)
        })
        .collect()
}

fn conflicting(mask: u32) -> bool {
    if mask.count_ones() < 2 {
        return false;
    }
    for a in 0..Limb::ALL.len() {
        if mask & (1 << a) == 0 {
            continue;
        }
        for b in a + 1..Limb::ALL.len() {
            if mask & (1 << b) != 0 && !Limb::ALL[a].adjacent(Limb::ALL[b]) {
                return true;
            }
        }
    }
    false
}

/// Volume shared by non-adjacent limbs over the summed limb volumes, per frame.
pub fn self_penetration_frames(grids: &[VoxelGrid]) -> Vec<f64> {
    grids
        .iter()
        .map(|g| {
            let total = g.labelled_volume();
            if total == 0 {
                return 0.0;
            }
            let shared = g.cells.iter().filter(|&&c| conflicting(c)).count();
            shared as f64 / total as f64
        })
        .collect()
}

/// Occupied volume below the ground over the occupied volume, per frame.
pub fn floor_penetration_frames(grids: &[VoxelGrid], ground: &Ground) -> Vec<f64> {
    grids
        .iter()
        .map(|g| {
            let mut occupied = 0usize;
            let mut below = 0usize;
            for x in 0..g.dims[0] {
                for y in 0..g.dims[1] {
                    for z in 0..g.dims[2] {
                        if g.cells[g.index(x, y, z)] == 0 {
                            continue;
                        }
                        occupied += 1;
                        if ground.height(&g.center(x, y, z)).0 < 0.0 {
                            below += 1;
                        }
                    }
                }
            }
            if occupied == 0 { 0.0 } else { below as f64 / occupied as f64 }
        })
        .collect()
}

pub fn self_penetration(character: &Character, animation: &Animation, divisions: usize) -> Result<Stats> {
    let grids = frame_grids(character, animation, &face_limbs(character)?, divisions)?;
    Ok(Stats::of(&self_penetration_frames(&grids)))
}

pub fn floor_penetration(
    character: &Character,
    animation: &Animation,
    terrain: Option<&HeightField>,
    divisions: usize,
) -> Result<Stats> {
    let labels = vec![0; character.mesh.faces().len()];
    let grids = frame_grids(character, animation, &labels, divisions)?;
    let ground = Ground::new(character.skeleton.up(), terrain.cloned());
    Ok(Stats::of(&floor_penetration_frames(&grids, &ground)))
}

/// `2·TP / (2·TP + FP + FN)`; `None` when neither side has a positive.
pub fn f1_score(truth: &[bool], predicted: &[bool]) -> Option<f64> {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fneg = 0usize;
    for (&t, &p) in truth.iter().zip(predicted) {
        match (t, p) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fneg += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fneg;
    (denom > 0).then(|| 2.0 * tp as f64 / denom as f64)
}

/// ROC AUC by the rank-sum statistic with mid-ranks for ties; `None` for a single class.
pub fn roc_auc(truth: &[bool], score: &[f64]) -> Option<f64> {
    let n = truth.len().min(score.len());
    let positives = truth[..n].iter().filter(|&&t| t).count();
    let negatives = n - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| score[a].total_cmp(&score[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && score[order[end]] == score[order[start]] {
            end += 1;
        }
        // ranks start..end (1-based start+1..=end) share their mean
        let mid = (start + 1 + end) as f64 / 2.0;
        rank_sum += mid * order[start..end].iter().filter(|&&i| truth[i]).count() as f64;
        start = end;
    }
    let p = positives as f64;
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierScores {
    pub f1: Option<f64>,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactScores {
    pub grounded: ClassifierScores,
    pub locked: ClassifierScores,
}

/// Per-foot, per-frame contact evidence: the best of heel and toe.
struct FootSignals {
    /// `−|height| / h_c`
    grounded: Vec<f64>,
    /// `−speed / h_c`
    locked: Vec<f64>,
}

const FEET: [[&str; 2]; 2] = [["heel_l", "toe_l"], ["heel_r", "toe_r"]];

fn foot_signals(character: &Character, animation: &Animation, ground: &Ground) -> Result<FootSignals> {
    let keys = character.key_vertices()?;
    let mut feet = Vec::new();
    for labels in FEET {
        let vs: Vec<usize> = labels
            .iter()
            .filter_map(|l| keys.find(l).map(|k| keys.entries()[k].vertex))
            .collect();
        if !vs.is_empty() {
            feet.push(vs);
        }
    }
    if feet.is_empty() {
        return Err(Error::Invalid(format!(
            "character '{}' has no heel or toe key-vertices",
            character.name
        )));
    }
    let h = character.height();
    let up = character.skeleton.up();
    let points: Vec<Vec<Vec3>> = animation
        .frames
        .iter()
        .map(|pose| {
            let world = character.skeleton.forward_kinematics(pose);
            let skin = crate::anim::skinning_transforms(&character.skeleton, &world);
            feet.iter()
                .flatten()
                .map(|&v| crate::anim::skin_vertex(&character.mesh, &skin, v))
                .collect()
        })
        .collect();
    let velocity = sliding(&points, animation.fps, &up);
    let mut grounded = Vec::new();
    let mut locked = Vec::new();
    for (t, frame) in points.iter().enumerate() {
        let mut k = 0;
        for foot in &feet {
            let mut g = f64::NEG_INFINITY;
            let mut l = f64::NEG_INFINITY;
            for _ in foot {
                g = g.max(-ground.height(&frame[k]).0.abs() / h);
                let [u, v] = velocity[t][k];
                l = l.max(-(u * u + v * v).sqrt() / h);
                k += 1;
            }
            grounded.push(g);
            locked.push(l);
        }
    }
    Ok(FootSignals { grounded, locked })
}

/// Grounded and locked foot classification of the target against the source.
pub fn contact_scores(
    source: &Character,
    source_animation: &Animation,
    target: &Character,
    target_animation: &Animation,
    terrain: Option<&HeightField>,
) -> Result<ContactScores> {
    if source_animation.len() != target_animation.len() {
        return Err(Error::Invalid(format!(
            "source has {} frames but target has {}",
            source_animation.len(),
            target_animation.len()
        )));
    }
    let s = foot_signals(source, source_animation, &Ground::new(source.skeleton.up(), terrain.cloned()))?;
    let t = foot_signals(target, target_animation, &Ground::new(target.skeleton.up(), terrain.cloned()))?;
    if s.grounded.len() != t.grounded.len() {
        return Err(Error::Invalid("source and target have different numbers of feet".into()));
    }
    let classify = |truth: &[f64], pred: &[f64], threshold: f64| {
        let tb: Vec<bool> = truth.iter().map(|&x| x >= -threshold).collect();
        let pb: Vec<bool> = pred.iter().map(|&x| x >= -threshold).collect();
        ClassifierScores {
            f1: f1_score(&tb, &pb),
            auc: roc_auc(&tb, pred),
        }
    };
    Ok(ContactScores {
        grounded: classify(&s.grounded, &t.grounded, GROUNDED_FRAC),
        locked: classify(&s.locked, &t.locked, LOCKED_FRAC),
    })
}

/// Flat report with one key per reported quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "jerk.mean")]
    pub jerk_mean: f64,
    #[serde(rename = "jerk.max")]
    pub jerk_max: f64,
    #[serde(rename = "selfpen.mean")]
    pub selfpen_mean: f64,
    #[serde(rename = "selfpen.max")]
    pub selfpen_max: f64,
    #[serde(rename = "floorpen.mean")]
    pub floorpen_mean: f64,
    #[serde(rename = "floorpen.max")]
    pub floorpen_max: f64,
    #[serde(rename = "grounded.f1")]
    pub grounded_f1: Option<f64>,
    #[serde(rename = "grounded.auc")]
    pub grounded_auc: Option<f64>,
    #[serde(rename = "sliding.f1")]
    pub sliding_f1: Option<f64>,
    #[serde(rename = "sliding.auc")]
    pub sliding_auc: Option<f64>,
}

/// All metrics of a retargeted motion, with the source motion as contact ground truth.
pub fn evaluate(
    source: &Character,
    source_animation: &Animation,
    target: &Character,
    target_animation: &Animation,
    terrain: Option<&HeightField>,
    divisions: usize,
) -> Result<MetricsReport> {
    divisions_ok(divisions)?;
    let jerk = jerk_stats(target_animation, &target.skeleton)?;
    let labels = face_limbs(target)?;
    let grids = frame_grids(target, target_animation, &labels, divisions)?;
    let selfpen = Stats::of(&self_penetration_frames(&grids));
    let ground = Ground::new(target.skeleton.up(), terrain.cloned());
    let floorpen = Stats::of(&floor_penetration_frames(&grids, &ground));
    let contact = contact_scores(source, source_animation, target, target_animation, terrain)?;
    Ok(MetricsReport {
        jerk_mean: jerk.mean,
        jerk_max: jerk.max,
        selfpen_mean: selfpen.mean,
        selfpen_max: selfpen.max,
        floorpen_mean: floorpen.mean,
        floorpen_max: floorpen.max,
        grounded_f1: contact.grounded.f1,
        grounded_auc: contact.grounded.auc,
        sliding_f1: contact.locked.f1,
        sliding_auc: contact.locked.auc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_trajectory_has_constant_jerk() {
        let positions: Vec<Vec<Vec3>> = (0..8).map(|t| vec![Vec3::new((t as f64).powi(3), 0.0, 0.0)]).collect();
        let s = trajectory_jerk(&positions, 1.0).unwrap();
        assert_eq!((s.mean, s.max), (6.0, 6.0));
        let s = trajectory_jerk(&positions, 2.0).unwrap();
        assert_eq!(s.max, 48.0);
    }

    #[test]
    fn linear_and_parabolic_trajectories_have_no_jerk() {
        let positions: Vec<Vec<Vec3>> = (0..6)
            .map(|t| {
                let t = t as f64;
                vec![Vec3::new(t, 2.0 * t, -t), Vec3::new(t * t, 0.5 * t * t, 1.0)]
            })
            .collect();
        let s = trajectory_jerk(&positions, 30.0).unwrap();
        assert_eq!((s.mean, s.max), (0.0, 0.0));
        assert!(trajectory_jerk(&positions[..3], 30.0).is_err());
    }

    #[test]
    fn f1_and_auc_edge_cases() {
        assert_eq!(f1_score(&[false, false], &[false, false]), None);
        assert_eq!(f1_score(&[true, false], &[false, false]), Some(0.0));
        assert_eq!(roc_auc(&[true, true], &[0.1, 0.2]), None);
        assert_eq!(roc_auc(&[true, false], &[0.3, 0.3]), Some(0.5));
        assert_eq!(roc_auc(&[false, true, true], &[0.0, 1.0, 2.0]), Some(1.0));
    }

    #[test]
    fn adjacent_limbs_do_not_conflict() {
        let bit = |l: Limb| 1u32 << l.index();
        assert!(!conflicting(bit(Limb::ArmL) | bit(Limb::Torso)));
        assert!(conflicting(bit(Limb::HandL) | bit(Limb::Torso)));
        assert!(!conflicting(bit(Limb::Head)));
    }
}
