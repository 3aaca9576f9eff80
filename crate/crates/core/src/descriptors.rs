//! Per-frame pose descriptors of key-vertex trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;

/// Regular grid of terrain heights over the horizontal plane, bilinearly interpolated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeightField {
    /// Horizontal coordinates of grid node (0, 0).
    pub origin: [f64; 2],
    pub spacing: f64,
    /// Node counts along the two horizontal axes.
    pub size: [usize; 2],
    /// Row-major heights, first horizontal axis varying fastest.
    pub heights: Vec<f64>,
}

impl HeightField {
    pub fn new(origin: [f64; 2], spacing: f64, size: [usize; 2], heights: Vec<f64>) -> Result<Self> {
        let hf = Self {
            origin,
            spacing,
            size,
            heights,
        };
        hf.validate()?;
        Ok(hf)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::parse("spacing", format!("spacing must be positive, got {}", self.spacing)));
        }
        if self.size[0] < 1 || self.size[1] < 1 {
            return Err(Error::parse("size", "height field needs at least one node per axis"));
        }
        if self.heights.len() != self.size[0] * self.size[1] {
            return Err(Error::parse(
                "heights",
                format!("expected {} heights, found {}", self.size[0] * self.size[1], self.heights.len()),
            ));
        }
        if let Some(k) = self.heights.iter().position(|h| !h.is_finite()) {
            return Err(Error::parse(format!("heights[{k}]"), "height is not finite"));
        }
        if !self.origin.iter().all(|o| o.is_finite()) {
            return Err(Error::parse("origin", "origin is not finite"));
        }
        Ok(())
    }

    pub fn constant(value: f64) -> Self {
        Self {
            origin: [0.0, 0.0],
            spacing: 1.0,
            size: [1, 1],
            heights: vec![value],
        }
    }

    fn node(&self, i: usize, j: usize) -> f64 {
        self.heights[j * self.size[0] + i]
    }

    /// Height and its gradient at horizontal coordinates `(u, v)`.
    ///
    /// Outside the grid the border height is used and the gradient is zero
    /// along the clamped axis.
    pub fn sample(&self, u: f64, v: f64) -> (f64, [f64; 2]) {
        let locate = |x: f64, o: f64, n: usize| -> (usize, f64, bool) {
            let t = (x - o) / self.spacing;
            if n == 1 || t <= 0.0 {
                return (0, 0.0, n > 1 && t >= 0.0);
            }
            let last = (n - 1) as f64;
            if t >= last {
                return (n - 2, 1.0, false);
            }
            let i = (t.floor() as usize).min(n - 2);
            (i, t - i as f64, true)
        };
        let (i, fu, inside_u) = locate(u, self.origin[0], self.size[0]);
        let (j, fv, inside_v) = locate(v, self.origin[1], self.size[1]);
        let i1 = (i + 1).min(self.size[0] - 1);
        let j1 = (j + 1).min(self.size[1] - 1);
        let h00 = self.node(i, j);
        let h10 = self.node(i1, j);
        let h01 = self.node(i, j1);
        let h11 = self.node(i1, j1);
        let h = h00 * (1.0 - fu) * (1.0 - fv) + h10 * fu * (1.0 - fv) + h01 * (1.0 - fu) * fv + h11 * fu * fv;
        let du = if inside_u {
            ((h10 - h00) * (1.0 - fv) + (h11 - h01) * fv) / self.spacing
        } else {
            0.0
        };
        let dv = if inside_v {
            ((h01 - h00) * (1.0 - fu) + (h11 - h10) * fu) / self.spacing
        } else {
            0.0
        };
        (h, [du, dv])
    }
}

/// World axes spanning the horizontal plane: the two axes other than the
/// one most aligned with `up`.
pub fn horizontal_axes(up: &Vec3) -> (usize, usize) {
    let k = up.iamax();
    match k {
        0 => (1, 2),
        1 => (2, 0),
        _ => (0, 1),
    }
}

/// Orthonormal basis of the plane orthogonal to `up`, following the horizontal axes.
pub fn horizontal_basis(up: &Vec3) -> (Vec3, Vec3) {
    let (a, _) = horizontal_axes(up);
    let mut e1 = Vec3::zeros();
    e1[a] = 1.0;
    let e1 = (e1 - up * up.dot(&e1)).normalize();
    let e2 = up.cross(&e1);
    (e1, e2)
}

/// Floor description shared by the height descriptors: flat at zero, or a height field.
#[derive(Debug, Clone)]
pub struct Ground {
    pub up: Vec3,
    pub terrain: Option<HeightField>,
    axes: (usize, usize),
}

impl Ground {
    pub fn new(up: Vec3, terrain: Option<HeightField>) -> Self {
        let up = up.normalize();
        Self {
            axes: horizontal_axes(&up),
            up,
            terrain,
        }
    }

    pub fn flat(up: Vec3) -> Self {
        Self::new(up, None)
    }

    /// Height above the ground and its gradient with respect to `p`.
    pub fn height(&self, p: &Vec3) -> (f64, Vec3) {
        let base = self.up.dot(p);
        match &self.terrain {
            None => (base, self.up),
            Some(t) => {
                let (f, [du, dv]) = t.sample(p[self.axes.0], p[self.axes.1]);
                let mut grad = self.up;
                grad[self.axes.0] -= du;
                grad[self.axes.1] -= dv;
                (base - f, grad)
            }
        }
    }
}

/// Descriptors of one frame, stored densely (row-major `N × N`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorFrame {
    pub dist: Vec<f64>,
    pub dir: Vec<[f64; 3]>,
    pub pen: Vec<f64>,
    pub height: Vec<f64>,
    pub sliding: Vec<[f64; 2]>,
}

pub fn pair_dir(pi: &Vec3, pj: &Vec3) -> Vec3 {
    pj - pi
}

pub fn pair_dist(pi: &Vec3, pj: &Vec3) -> f64 {
    (pj - pi).norm()
}

/// Signed offset of `pj` along the normal at `pi`; negative means `pj` is behind the surface.
pub fn pair_pen(pi: &Vec3, ni: &Vec3, pj: &Vec3) -> f64 {
    ni.dot(&(pj - pi))
}

/// Horizontal velocities by forward differences; the last frame repeats the previous one.
pub fn sliding(positions: &[Vec<Vec3>], fps: f64, up: &Vec3) -> Vec<Vec<[f64; 2]>> {
    let (e1, e2) = horizontal_basis(up);
    let frames = positions.len();
    let n = positions.first().map_or(0, |p| p.len());
    let mut out = vec![vec![[0.0; 2]; n]; frames];
    if frames < 2 {
        return out;
    }
    for t in 0..frames - 1 {
        for i in 0..n {
            let d = (positions[t + 1][i] - positions[t][i]) * fps;
            out[t][i] = [d.dot(&e1), d.dot(&e2)];
        }
    }
    out[frames - 1] = out[frames - 2].clone();
    out
}

/// All five descriptors for every frame.
///
/// `positions[t][i]` and `normals[t][i]` are the key-vertex positions and unit normals.
pub fn compute_descriptors(
    positions: &[Vec<Vec3>],
    normals: &[Vec<Vec3>],
    fps: f64,
    ground: &Ground,
) -> Result<Vec<DescriptorFrame>> {
    if positions.len() != normals.len() {
        return Err(Error::Invalid("positions and normals differ in frame count".into()));
    }
    if !(fps > 0.0) {
        return Err(Error::Invalid(format!("fps must be positive, got {fps}")));
    }
    let slide = sliding(positions, fps, &ground.up);
    positions
        .iter()
        .zip(normals)
        .zip(slide)
        .enumerate()
        .map(|(t, ((p, n), sliding))| {
            let count = p.len();
            if n.len() != count {
                return Err(Error::Invalid(format!("frame {t}: {} positions but {} normals", count, n.len())));
            }
            if let Some(i) = n.iter().position(|v| v.norm() < 1e-12) {
                return Err(Error::Invalid(format!("frame {t}: key-vertex {i} has a zero-length normal")));
            }
            let mut dist = vec![0.0; count * count];
            let mut dir = vec![[0.0; 3]; count * count];
            let mut pen = vec![0.0; count * count];
            for i in 0..count {
                for j in 0..count {
                    let d = pair_dir(&p[i], &p[j]);
                    dist[i * count + j] = d.norm();
                    dir[i * count + j] = [d.x, d.y, d.z];
                    pen[i * count + j] = pair_pen(&p[i], &n[i], &p[j]);
                }
            }
            let height = p.iter().map(|pi| ground.height(pi).0).collect();
            Ok(DescriptorFrame {
                dist,
                dir,
                pen,
                height,
                sliding,
            })
        })
        .collect()
}

/// Concatenates the key-vertices of several characters into one set per frame.
pub fn stack_multicharacter(per_character: &[Vec<Vec<Vec3>>]) -> Result<Vec<Vec<Vec3>>> {
    let frames = per_character.first().map_or(0, |c| c.len());
    if per_character.iter().any(|c| c.len() != frames) {
        return Err(Error::Invalid("characters differ in frame count".into()));
    }
    Ok((0..frames)
        .map(|t| per_character.iter().flat_map(|c| c[t].iter().copied()).collect())
        .collect())
}

/// Gaze directions of one character: explicit per-frame vectors or derived from a head bone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GazeSource {
    /// One unit vector per frame.
    Vectors(Vec<[f64; 3]>),
    /// The rest-pose facing direction carried along by the named bone.
    Bone { bone: String, forward: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GazeSpec {
    /// Labels of the key-vertices that look.
    pub eyes: Vec<String>,
    pub source: GazeSource,
}

/// Rows of `M_gaze` for one frame: the gaze direction at eye key-vertices, zero elsewhere.
///
/// `eyes[c]` lists eye indices in the stacked key-vertex set and `gaze[c]` the
/// direction of character `c`.
pub fn gaze_matrix(total: usize, eyes: &[Vec<usize>], gaze: &[Vec3]) -> Vec<Vec3> {
    let mut out = vec![Vec3::zeros(); total];
    for (c, idx) in eyes.iter().enumerate() {
        for &i in idx {
            out[i] = gaze[c];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn two_point_example() {
        let p = vec![vec![Vec3::zeros(), Vec3::new(0.0, 0.0, 1.0)]];
        let n = vec![vec![Vec3::z(), Vec3::z()]];
        let d = compute_descriptors(&p, &n, 30.0, &Ground::flat(Vec3::z())).unwrap();
        assert_eq!(d[0].dist[1], 1.0);
        assert_eq!(d[0].height, vec![0.0, 1.0]);
        assert_eq!(d[0].dir[1], [0.0, 0.0, 1.0]);
        assert_eq!(d[0].dir[2], [0.0, 0.0, -1.0]);
    }

    #[test]
    fn penetration_is_negative_behind_the_normal() {
        let v = pair_pen(&Vec3::zeros(), &Vec3::z(), &Vec3::new(0.0, 0.0, -0.02));
        assert_relative_eq!(v, -0.02);
    }

    #[test]
    fn static_pose_does_not_slide_and_linear_motion_is_exact() {
        let still = vec![vec![Vec3::new(1.0, 2.0, 3.0)]; 5];
        assert!(sliding(&still, 30.0, &Vec3::z()).iter().flatten().all(|s| *s == [0.0, 0.0]));
        let v = Vec3::new(0.5, -0.25, 0.0);
        let moving: Vec<Vec<Vec3>> = (0..6).map(|t| vec![Vec3::new(0.0, 0.0, 0.3) + v * (t as f64 / 4.0)]).collect();
        for s in sliding(&moving, 4.0, &Vec3::z()).iter().flatten() {
            assert_eq!(*s, [0.5, -0.25]);
        }
    }

    #[test]
    fn constant_terrain_lowers_heights() {
        let p = Vec3::new(0.3, -0.2, 0.9);
        let flat = Ground::flat(Vec3::z()).height(&p).0;
        let raised = Ground::new(Vec3::z(), Some(HeightField::constant(0.5))).height(&p).0;
        assert_eq!(flat - raised, 0.5);
    }

    #[test]
    fn bilinear_gradient_matches_finite_differences() {
        let hf = HeightField::new([-0.5, -0.5], 0.25, [5, 4], (0..20).map(|k| ((k * 7) % 5) as f64 * 0.1).collect()).unwrap();
        let g = Ground::new(Vec3::z(), Some(hf));
        let p = Vec3::new(0.13, -0.31, 0.4);
        let (_, grad) = g.height(&p);
        let h = 1e-6;
        for k in 0..3 {
            let mut d = Vec3::zeros();
            d[k] = h;
            let fd = (g.height(&(p + d)).0 - g.height(&(p - d)).0) / (2.0 * h);
            assert_relative_eq!(grad[k], fd, epsilon = 1e-7);
        }
        // outside the grid: border height, no horizontal slope
        let (_, outside) = g.height(&Vec3::new(5.0, 5.0, 0.0));
        assert_eq!(outside, Vec3::z());
    }

    #[test]
    fn gaze_rows() {
        assert!(gaze_matrix(3, &[], &[]).iter().all(|g| *g == Vec3::zeros()));
        let m = gaze_matrix(4, &[vec![1], vec![3]], &[Vec3::x(), -Vec3::x()]);
        assert_eq!(m[1], Vec3::x());
        assert_eq!(m[3], -Vec3::x());
        assert_eq!(m.iter().filter(|g| g.norm() > 0.0).count(), 2);
    }

    #[test]
    fn stacked_blocks_match_individual_distances() {
        let a = vec![vec![Vec3::zeros(), Vec3::x()]];
        let b = vec![vec![Vec3::new(0.0, 3.0, 0.0), Vec3::new(0.0, 4.0, 0.0)]];
        let s = stack_multicharacter(&[a, b]).unwrap();
        let n = vec![vec![Vec3::z(); 4]];
        let d = compute_descriptors(&s, &n, 30.0, &Ground::flat(Vec3::z())).unwrap();
        assert_eq!(d[0].dist[1], 1.0);
        assert_eq!(d[0].dist[2 * 4 + 3], 1.0);
        assert_relative_eq!(d[0].dist[2], 3.0);
        assert_relative_eq!(d[0].dist[1 * 4 + 3], 17f64.sqrt());
        assert!(stack_multicharacter(&[vec![vec![]], vec![]]).is_err());
    }
}
