//! The retargeting objective over one batch of frames, with its gradient.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptors::{horizontal_basis, Ground};
use crate::error::{Error, Result};
use crate::limb::Limb;
use crate::math::{exp_so3, quat_to_mat, right_jacobian, skew_pairing, Mat3, Vec3};
use crate::weighting::{cosine, floor_weight, gaze_bonus, interaction_weight, same_limb_mask, Thresholds};

use super::config::{DirLoss, RetargetConfig, Term};
use super::rig::{Posed, Rig};
use crate::anim::Pose;

/// Per-frame forward pass: local rotations, key points and the posed rig.
type Forward = (Vec<Mat3>, Vec<Vec3>, Posed);

/// Unweighted values of every loss term, plus the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub total: f64,
    pub reg: f64,
    pub smooth: f64,
    pub dist: f64,
    pub dir: f64,
    pub pen: f64,
    pub height: f64,
    pub sliding: f64,
}

impl Breakdown {
    pub fn term(&self, t: Term) -> f64 {
        match t {
            Term::Dist => self.dist,
            Term::Dir => self.dir,
            Term::Pen => self.pen,
            Term::Height => self.height,
            Term::Sliding => self.sliding,
        }
    }

    fn term_mut(&mut self, t: Term) -> &mut f64 {
        match t {
            Term::Dist => &mut self.dist,
            Term::Dir => &mut self.dir,
            Term::Pen => &mut self.pen,
            Term::Height => &mut self.height,
            Term::Sliding => &mut self.sliding,
        }
    }
}

/// Where the gaze direction of a character comes from during optimization.
#[derive(Debug, Clone)]
pub enum GazeTrack {
    /// Fixed per-frame directions.
    Fixed(Vec<Vec3>),
    /// `R_world(bone) · forward_local`.
    Bone { bone: usize, forward_local: Vec3 },
}

#[derive(Debug, Clone)]
pub struct GazeSetup {
    /// Eye key-vertex indices within the character.
    pub eyes: Vec<usize>,
    /// Source gaze per frame of the batch.
    pub source: Vec<Vec3>,
    pub target: GazeTrack,
}

/// One source/target character pair over a batch.
#[derive(Debug, Clone)]
pub struct ActorSetup {
    pub source: Rig,
    pub target: Rig,
    pub source_frames: Vec<Pose>,
    /// Copy-rotations initialization of the target.
    pub init_frames: Vec<Pose>,
    pub source_height: f64,
    pub target_height: f64,
    /// Limb of each key-vertex.
    pub key_limbs: Vec<Limb>,
    /// Limb of each target bone.
    pub bone_limbs: Vec<Limb>,
    pub gaze: Option<GazeSetup>,
}

#[derive(Debug, Clone)]
struct Actor {
    rig: Rig,
    init_local: Vec<Vec<Mat3>>,
    init_root: Vec<Vec3>,
    offset: usize,
    bones: usize,
    var_base: usize,
    bone_limbs: Vec<Limb>,
    gaze: Option<(Vec<usize>, GazeTrack)>,
}

impl Actor {
    fn block(&self) -> usize {
        3 + 3 * self.bones
    }

    fn at(&self, t: usize) -> usize {
        self.var_base + t * self.block()
    }
}

/// Detached target-side weights, recomputed from the current target pose.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetWeights {
    pub interaction: Vec<Vec<f64>>,
    pub floor: Vec<Vec<f64>>,
}

/// Which loss gradients to accumulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    All,
    Only(Term),
}

pub struct Evaluation {
    pub losses: Breakdown,
    /// Raw term values restricted to entries touching each limb, `[term][limb]`.
    pub per_limb: [[f64; 10]; 5],
    pub gradient: Option<Vec<f64>>,
}

const CHANNELS: usize = 7;
const REG: usize = 5;
const SMOOTH: usize = 6;

/// Point and normal gradients of one frame, split per loss channel.
struct FrameGrad {
    gp: Vec<[Vec3; CHANNELS]>,
    gn: Vec<[Vec3; CHANNELS]>,
    values: [f64; CHANNELS],
    /// Term values with balance factors applied.
    weighted: [f64; 5],
    per_limb: [[f64; 10]; 5],
}

impl FrameGrad {
    fn new(n: usize) -> Self {
        Self {
            gp: vec![[Vec3::zeros(); CHANNELS]; n],
            gn: vec![[Vec3::zeros(); CHANNELS]; n],
            values: [0.0; CHANNELS],
            weighted: [0.0; 5],
            per_limb: [[0.0; 10]; 5],
        }
    }
}

/// Objective of a batch of frames for one or more characters.
pub struct Problem {
    actors: Vec<Actor>,
    frames: usize,
    fps: f64,
    n: usize,
    key_actor: Vec<usize>,
    key_limbs: Vec<Limb>,
    src_p: Vec<Vec<Vec3>>,
    src_n: Vec<Vec<Vec3>>,
    src_h: Vec<Vec<f64>>,
    src_slide: Vec<Vec<[f64; 2]>>,
    src_int: Vec<Vec<f64>>,
    src_floor: Vec<Vec<f64>>,
    mask: Vec<bool>,
    target_thr: Vec<Thresholds>,
    p_init: Vec<Vec<Vec3>>,
    ground: Ground,
    basis: (Vec3, Vec3),
    cfg: RetargetConfig,
    factors: [[f64; 10]; 5],
    gaze_angles: (f64, f64),
    variable_count: usize,
}

fn pair_thresholds(thr: &[Thresholds], a: usize, b: usize) -> Thresholds {
    if a == b {
        thr[a]
    } else {
        thr[a].mean(&thr[b])
    }
}

fn sliding_of(basis: &(Vec3, Vec3), fps: f64, p: &[Vec<Vec3>], t: usize, i: usize) -> [f64; 2] {
    let frames = p.len();
    if frames < 2 {
        return [0.0, 0.0];
    }
    let t = t.min(frames - 2);
    let d = (p[t + 1][i] - p[t][i]) * fps;
    [d.dot(&basis.0), d.dot(&basis.1)]
}

impl Problem {
    pub fn new(setups: Vec<ActorSetup>, fps: f64, ground: Ground, cfg: &RetargetConfig) -> Result<Self> {
        cfg.validate()?;
        if setups.is_empty() {
            return Err(Error::Invalid("no characters to retarget".into()));
        }
        if !(fps > 0.0) {
            return Err(Error::Invalid(format!("fps must be positive, got {fps}")));
        }
        let frames = setups[0].source_frames.len();
        if frames == 0 {
            return Err(Error::Invalid("empty animation".into()));
        }
        for (a, s) in setups.iter().enumerate() {
            if s.source_frames.len() != frames || s.init_frames.len() != frames {
                return Err(Error::Invalid(format!("character {a}: frame count differs from the first character")));
            }
            if s.source.len() != s.target.len() || s.key_limbs.len() != s.target.len() {
                return Err(Error::Invalid(format!(
                    "character {a}: source has {} key-vertices, target {}",
                    s.source.len(),
                    s.target.len()
                )));
            }
        }
        if frames < 4 {
            log::warn!("only {frames} frames: smoothness term disabled");
        }
        let frac = |h: f64| Thresholds::from_fractions(h, cfg.d_min_frac, cfg.d_max_frac, cfg.h_min_frac, cfg.h_max_frac);
        let source_thr = setups.iter().map(|s| frac(s.source_height)).collect::<Result<Vec<_>>>()?;
        let target_thr = setups.iter().map(|s| frac(s.target_height)).collect::<Result<Vec<_>>>()?;

        let n: usize = setups.iter().map(|s| s.target.len()).sum();
        let mut key_actor = Vec::with_capacity(n);
        let mut key_limbs = Vec::with_capacity(n);
        let mut src_p = vec![Vec::with_capacity(n); frames];
        let mut src_n = vec![Vec::with_capacity(n); frames];
        let mut p_init = vec![Vec::with_capacity(n); frames];
        let mut rest_src = Vec::with_capacity(n);
        let mut actors = Vec::with_capacity(setups.len());
        let mut src_gaze: Vec<Option<(Vec<usize>, Vec<Vec3>)>> = Vec::new();
        let mut var_base = 0;
        for (a, s) in setups.into_iter().enumerate() {
            let offset = key_actor.len();
            key_actor.extend(std::iter::repeat_n(a, s.target.len()));
            key_limbs.extend(s.key_limbs.iter().copied());
            let rest_pose = Pose::rest(s.source.skeleton());
            let rest_local: Vec<Mat3> = rest_pose.rotations.iter().map(quat_to_mat).collect();
            rest_src.extend(s.source.forward(&rest_pose.root_position, &rest_local).points);
            for (t, pose) in s.source_frames.iter().enumerate() {
                let local: Vec<Mat3> = pose.rotations.iter().map(quat_to_mat).collect();
                let posed = s.source.forward(&pose.root_position, &local);
                src_p[t].extend(posed.points);
                src_n[t].extend(posed.normals);
            }
            let init_local: Vec<Vec<Mat3>> = s
                .init_frames
                .iter()
                .map(|p| p.rotations.iter().map(quat_to_mat).collect())
                .collect();
            let init_root: Vec<Vec3> = s.init_frames.iter().map(|p| p.root_position).collect();
            for t in 0..frames {
                p_init[t].extend(s.target.forward(&init_root[t], &init_local[t]).points);
            }
            let bones = s.target.skeleton().len();
            if s.bone_limbs.len() != bones {
                return Err(Error::Invalid(format!("character {a}: bone limb table has wrong length")));
            }
            let gaze = match s.gaze {
                Some(g) => {
                    if g.source.len() != frames {
                        return Err(Error::Invalid(format!("character {a}: gaze needs one direction per frame")));
                    }
                    let eyes: Vec<usize> = g.eyes.iter().map(|&e| e + offset).collect();
                    if let Some(&bad) = g.eyes.iter().find(|&&e| e >= s.target.len()) {
                        return Err(Error::Invalid(format!("character {a}: eye index {bad} out of range")));
                    }
                    src_gaze.push(Some((eyes.clone(), g.source)));
                    Some((eyes, g.target))
                }
                None => {
                    src_gaze.push(None);
                    None
                }
            };
            actors.push(Actor {
                rig: s.target,
                init_local,
                init_root,
                offset,
                bones,
                var_base,
                bone_limbs: s.bone_limbs,
                gaze,
            });
            var_base += frames * (3 + 3 * bones);
        }

        // same-limb neighbors within one character are never interaction pairs
        let mut mask = vec![true; n * n];
        for a in &actors {
            let range = a.offset..a.offset + a.rig.len();
            let local = same_limb_mask(&rest_src[range.clone()], &key_limbs[range.clone()], source_thr[key_actor[a.offset]].d_max);
            let m = range.len();
            for i in 0..n {
                for j in 0..n {
                    if key_actor[i] != key_actor[j] {
                        mask[i * n + j] = false;
                    }
                }
            }
            for i in 0..m {
                for j in 0..m {
                    mask[(a.offset + i) * n + a.offset + j] = local[i * m + j];
                }
            }
        }

        let up_s = actors[0].rig.skeleton().up();
        let basis = horizontal_basis(&ground.up);
        let src_h: Vec<Vec<f64>> = src_p.iter().map(|ps| ps.iter().map(|p| up_s.dot(p)).collect()).collect();
        let src_slide: Vec<Vec<[f64; 2]>> = (0..frames)
            .map(|t| (0..n).map(|i| sliding_of(&basis, fps, &src_p, t, i)).collect())
            .collect();
        let gaze_angles = (cfg.gaze_min_deg.to_radians(), cfg.gaze_max_deg.to_radians());
        let src_int: Vec<Vec<f64>> = (0..frames)
            .map(|t| {
                let gaze: Vec<Option<(&[usize], Vec3)>> = src_gaze
                    .iter()
                    .map(|g| g.as_ref().map(|(e, d)| (e.as_slice(), d[t])))
                    .collect();
                interaction_matrix(&src_p[t], &key_actor, &mask, &source_thr, &gaze, gaze_angles)
            })
            .collect();
        let src_floor: Vec<Vec<f64>> = src_h
            .iter()
            .map(|hs| {
                hs.iter()
                    .enumerate()
                    .map(|(i, &h)| {
                        let thr = source_thr[key_actor[i]];
                        floor_weight(h, thr.h_min, thr.h_max)
                    })
                    .collect()
            })
            .collect();
        let variable_count = var_base;
        Ok(Self {
            actors,
            frames,
            fps,
            n,
            key_actor,
            key_limbs,
            src_p,
            src_n,
            src_h,
            src_slide,
            src_int,
            src_floor,
            mask,
            target_thr,
            p_init,
            ground,
            basis,
            factors: cfg.balance_factors(),
            cfg: cfg.clone(),
            gaze_angles,
            variable_count,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn key_count(&self) -> usize {
        self.n
    }

    pub fn variable_count(&self) -> usize {
        self.variable_count
    }

    pub fn config(&self) -> &RetargetConfig {
        &self.cfg
    }

    pub fn key_limbs(&self) -> &[Limb] {
        &self.key_limbs
    }

    /// Replaces the balances used from the next evaluation on.
    pub fn set_balance(&mut self, balance: Vec<super::config::Balance>) -> Result<()> {
        for b in &balance {
            b.validate()?;
        }
        self.cfg.balance = balance;
        self.factors = self.cfg.balance_factors();
        Ok(())
    }

    pub fn source_weights(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.src_int, &self.src_floor)
    }

    pub fn source_positions(&self) -> &[Vec<Vec3>] {
        &self.src_p
    }

    /// Variables at the initialization: initial root positions and zero rotation increments.
    pub fn initial_variables(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.variable_count];
        for a in &self.actors {
            for t in 0..self.frames {
                let k = a.at(t);
                x[k..k + 3].copy_from_slice(a.init_root[t].as_slice());
            }
        }
        x
    }

    fn locals(&self, a: &Actor, x: &[f64], t: usize) -> (Vec3, Vec<Mat3>, Vec<Vec3>) {
        let k = a.at(t);
        let root = Vec3::new(x[k], x[k + 1], x[k + 2]);
        let deltas: Vec<Vec3> = (0..a.bones)
            .map(|b| Vec3::new(x[k + 3 + 3 * b], x[k + 4 + 3 * b], x[k + 5 + 3 * b]))
            .collect();
        let local = a.init_local[t].iter().zip(&deltas).map(|(q, d)| q * exp_so3(d)).collect();
        (root, local, deltas)
    }

    /// Target poses for the given variables, one list per character.
    pub fn poses(&self, x: &[f64]) -> Vec<Vec<Pose>> {
        self.actors
            .iter()
            .map(|a| {
                (0..self.frames)
                    .map(|t| {
                        let (root, local, _) = self.locals(a, x, t);
                        Pose {
                            root_position: root,
                            rotations: local.iter().map(crate::math::mat_to_quat).collect(),
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Joint world positions of every character at every frame.
    pub fn joints(&self, x: &[f64]) -> Vec<Vec<Vec<Vec3>>> {
        self.actors
            .iter()
            .map(|a| {
                (0..self.frames)
                    .map(|t| {
                        let (root, local, _) = self.locals(a, x, t);
                        a.rig.forward(&root, &local).pos
                    })
                    .collect()
            })
            .collect()
    }

    /// Stacked target key-vertex positions per frame.
    pub fn key_points(&self, x: &[f64]) -> Vec<Vec<Vec3>> {
        self.stack(&self.forward(x)).0
    }

    fn forward(&self, x: &[f64]) -> Vec<Vec<Forward>> {
        self.actors
            .iter()
            .map(|a| {
                (0..self.frames)
                    .into_par_iter()
                    .map(|t| {
                        let (root, local, deltas) = self.locals(a, x, t);
                        let posed = a.rig.forward(&root, &local);
                        (local, deltas, posed)
                    })
                    .collect()
            })
            .collect()
    }

    fn stack(&self, fwd: &[Vec<Forward>]) -> (Vec<Vec<Vec3>>, Vec<Vec<Vec3>>) {
        let mut p = vec![Vec::with_capacity(self.n); self.frames];
        let mut nrm = vec![Vec::with_capacity(self.n); self.frames];
        for per_actor in fwd {
            for (t, (_, _, posed)) in per_actor.iter().enumerate() {
                p[t].extend_from_slice(&posed.points);
                nrm[t].extend_from_slice(&posed.normals);
            }
        }
        (p, nrm)
    }

    fn target_weights_from(&self, p: &[Vec<Vec3>], fwd: &[Vec<Forward>]) -> TargetWeights {
        let (amin, amax) = self.gaze_angles;
        let interaction = (0..self.frames)
            .into_par_iter()
            .map(|t| {
                let gaze: Vec<Option<(&[usize], Vec3)>> = self
                    .actors
                    .iter()
                    .enumerate()
                    .map(|(a, actor)| {
                        actor.gaze.as_ref().map(|(eyes, track)| {
                            let dir = match track {
                                GazeTrack::Fixed(d) => d[t],
                                GazeTrack::Bone { bone, forward_local } => fwd[a][t].2.rot[*bone] * forward_local,
                            };
                            (eyes.as_slice(), dir)
                        })
                    })
                    .collect();
                interaction_matrix(&p[t], &self.key_actor, &self.mask, &self.target_thr, &gaze, (amin, amax))
            })
            .collect();
        let floor = p
            .iter()
            .map(|ps| {
                ps.iter()
                    .enumerate()
                    .map(|(i, q)| {
                        let thr = self.target_thr[self.key_actor[i]];
                        floor_weight(self.ground.height(q).0, thr.h_min, thr.h_max)
                    })
                    .collect()
            })
            .collect();
        TargetWeights { interaction, floor }
    }

    /// Target-side weights at `x`; treated as constants by the gradient.
    pub fn target_weights(&self, x: &[f64]) -> TargetWeights {
        let fwd = self.forward(x);
        let (p, _) = self.stack(&fwd);
        self.target_weights_from(&p, &fwd)
    }

    fn pair_factor(&self, term: Term, i: usize, j: usize) -> f64 {
        let (li, lj) = (self.key_limbs[i].index(), self.key_limbs[j].index());
        let f = &self.factors[term.index()];
        if li == lj {
            f[li]
        } else {
            f[li] * f[lj]
        }
    }


    fn frame_terms(&self, t: usize, p: &[Vec3], nrm: &[Vec3], tw: &TargetWeights, alpha: f64, fg: &mut FrameGrad) {
        let n = self.n;
        let cfg = &self.cfg;
        let sp = &self.src_p[t];
        let sn = &self.src_n[t];
        let ws = &self.src_int[t];
        let wt = &tw.interaction[t];
        let scale = |term: Term| cfg.w_sem * cfg.term_weight(term);
        let (s_dist, s_dir, s_pen) = (scale(Term::Dist), scale(Term::Dir), scale(Term::Pen));
        let FrameGrad {
            gp,
            gn,
            values,
            weighted,
            per_limb,
        } = fg;
        for i in 0..n {
            let row = i * n;
            for j in 0..n {
                let k = row + j;
                if self.mask[k] {
                    continue;
                }
                let w = ws[k] + alpha * wt[k];
                if w == 0.0 {
                    continue;
                }
                let (li, lj) = (self.key_limbs[i].index(), self.key_limbs[j].index());
                let mut book = |term: Term, v: f64| {
                    let f = self.pair_factor(term, i, j);
                    values[term.index()] += v;
                    weighted[term.index()] += f * v;
                    per_limb[term.index()][li] += v;
                    if lj != li {
                        per_limb[term.index()][lj] += v;
                    }
                    f
                };

                let vs = sp[j] - sp[i];
                let vt = p[j] - p[i];
                let ds = vs.norm();
                let dt = vt.norm();

                let r = w * (ds - dt);
                let f = book(Term::Dist, r * r);
                if dt > 1e-9 {
                    let g = vt * (s_dist * f * (-2.0 * w * r) / dt);
                    gp[j][0] += g;
                    gp[i][0] -= g;
                }

                let (cs, gap, dc) = if ds > 1e-9 && dt > 1e-9 {
                    let c = cosine(&vs, &vt);
                    // 1 − cos without cancellation near aligned pairs
                    let gap = 0.5 * (vs / ds - vt / dt).norm_squared();
                    (c, gap, vs / (ds * dt) - vt * (c / (dt * dt)))
                } else {
                    (0.0, 1.0, Vec3::zeros())
                };
                let (r, dr) = match cfg.dir_loss {
                    DirLoss::Alignment => (w * gap, -w),
                    DirLoss::Verbatim => (w * cs, w),
                };
                let f = book(Term::Dir, r * r);
                let c = s_dir * f * 2.0 * r * dr;
                if c != 0.0 {
                    let g = dc * c;
                    gp[j][1] += g;
                    gp[i][1] -= g;
                }

                let pen_s = sn[i].dot(&vs);
                let pen_t = nrm[i].dot(&vt);
                let r = w * (pen_s - pen_t);
                let f = book(Term::Pen, r * r);
                let c = s_pen * f * (-2.0 * w * r);
                if c != 0.0 {
                    gn[i][2] += vt * c;
                    gp[j][2] += nrm[i] * c;
                    gp[i][2] -= nrm[i] * c;
                }
            }
        }

        let s_height = scale(Term::Height);
        let fs = &self.src_floor[t];
        let ft = &tw.floor[t];
        for i in 0..n {
            let (h, dh) = self.ground.height(&p[i]);
            let w = fs[i] + alpha * ft[i];
            let below = h.min(0.0);
            let r = w * (self.src_h[t][i] - h);
            let v = below * below + r * r;
            let li = self.key_limbs[i].index();
            let f = self.factors[Term::Height.index()][li];
            values[Term::Height.index()] += v;
            weighted[Term::Height.index()] += f * v;
            per_limb[Term::Height.index()][li] += v;
            let c = s_height * f * (2.0 * below - 2.0 * w * r);
            if c != 0.0 {
                gp[i][3] += dh * c;
            }
        }

        for i in 0..n {
            let d = p[i] - self.p_init[t][i];
            values[REG] += d.norm_squared();
            gp[i][REG] += d * (2.0 * cfg.w_reg);
        }
    }

    /// Sliding and smoothness couple neighboring frames.
    fn temporal_terms(&self, p: &[Vec<Vec3>], tw: &TargetWeights, alpha: f64, grads: &mut [FrameGrad]) {
        let frames = self.frames;
        let cfg = &self.cfg;
        let s_slide = cfg.w_sem * cfg.w_sliding;
        let k = Term::Sliding.index();
        if frames >= 2 {
            for t in 0..frames {
                let t0 = t.min(frames - 2);
                for i in 0..self.n {
                    let w = self.src_floor[t][i] + alpha * tw.floor[t][i];
                    let st = sliding_of(&self.basis, self.fps, p, t, i);
                    let ss = self.src_slide[t][i];
                    let r = [w * (ss[0] - st[0]), w * (ss[1] - st[1])];
                    let v = r[0] * r[0] + r[1] * r[1];
                    let li = self.key_limbs[i].index();
                    let f = self.factors[k][li];
                    let fg = &mut grads[t];
                    fg.values[k] += v;
                    fg.weighted[k] += f * v;
                    fg.per_limb[k][li] += v;
                    if w == 0.0 {
                        continue;
                    }
                    let c = s_slide * f * (-2.0 * w) * self.fps;
                    let g = (self.basis.0 * r[0] + self.basis.1 * r[1]) * c;
                    grads[t0 + 1].gp[i][k] += g;
                    grads[t0].gp[i][k] -= g;
                }
            }
        }
        if frames >= 4 {
            for t in 0..frames - 3 {
                for i in 0..self.n {
                    let j = p[t + 3][i] - p[t + 2][i] * 3.0 + p[t + 1][i] * 3.0 - p[t][i];
                    let len = j.norm();
                    grads[t].values[SMOOTH] += len;
                    if len < 1e-9 {
                        continue;
                    }
                    let u = j * (cfg.w_smooth / len);
                    grads[t + 3].gp[i][SMOOTH] += u;
                    grads[t + 2].gp[i][SMOOTH] -= u * 3.0;
                    grads[t + 1].gp[i][SMOOTH] += u * 3.0;
                    grads[t].gp[i][SMOOTH] -= u;
                }
            }
        }
    }

    fn backward(&self, x: &[f64], fwd: &[Vec<Forward>], grads: &[FrameGrad], channels: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; self.variable_count];
        for (a, actor) in self.actors.iter().enumerate() {
            let blocks: Vec<Vec<f64>> = (0..self.frames)
                .into_par_iter()
                .map(|t| {
                    let (local, deltas, posed) = &fwd[a][t];
                    let range = actor.offset..actor.offset + actor.rig.len();
                    let sum = |src: &[[Vec3; CHANNELS]]| -> Vec<Vec3> {
                        src[range.clone()]
                            .iter()
                            .map(|per| channels.iter().fold(Vec3::zeros(), |acc, &c| acc + per[c]))
                            .collect()
                    };
                    let gp = sum(&grads[t].gp);
                    let gn = sum(&grads[t].gn);
                    let (g_root, g_local) = actor.rig.backward(posed, local, &gp, &gn);
                    let mut block = Vec::with_capacity(actor.block());
                    block.extend_from_slice(g_root.as_slice());
                    for b in 0..actor.bones {
                        let g = right_jacobian(&deltas[b]).transpose() * skew_pairing(&(local[b].transpose() * g_local[b]));
                        block.extend_from_slice(g.as_slice());
                    }
                    block
                })
                .collect();
            for (t, block) in blocks.into_iter().enumerate() {
                let k = actor.at(t);
                out[k..k + block.len()].copy_from_slice(&block);
            }
        }
        debug_assert!(x.len() == out.len());
        out
    }

    /// Evaluates the objective at `x` with blend factor `alpha`.
    ///
    /// Target-side weights come from `frozen` when given, otherwise from `x`;
    /// either way they carry no gradient.
    pub fn evaluate(&self, x: &[f64], alpha: f64, frozen: Option<&TargetWeights>, gradient: Option<Selection>) -> Result<Evaluation> {
        Ok(self.evaluate_inner(x, alpha, frozen, gradient, false)?.0)
    }

    /// Full gradient plus one gradient per semantic term, for conflict detection.
    pub fn term_gradients(&self, x: &[f64], alpha: f64) -> Result<(Evaluation, Vec<Vec<f64>>)> {
        let (ev, per_term) = self.evaluate_inner(x, alpha, None, Some(Selection::All), true)?;
        Ok((ev, per_term.unwrap_or_default()))
    }

    fn evaluate_inner(
        &self,
        x: &[f64],
        alpha: f64,
        frozen: Option<&TargetWeights>,
        selection: Option<Selection>,
        per_term: bool,
    ) -> Result<(Evaluation, Option<Vec<Vec<f64>>>)> {
        if x.len() != self.variable_count {
            return Err(Error::Invalid(format!(
                "expected {} variables, got {}",
                self.variable_count,
                x.len()
            )));
        }
        if let Some(k) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("variable {k} is not finite")));
        }
        let fwd = self.forward(x);
        let (p, nrm) = self.stack(&fwd);
        let computed;
        let tw = match frozen {
            Some(tw) => tw,
            None => {
                computed = self.target_weights_from(&p, &fwd);
                &computed
            }
        };

        let mut grads: Vec<FrameGrad> = (0..self.frames)
            .into_par_iter()
            .map(|t| {
                let mut fg = FrameGrad::new(self.n);
                self.frame_terms(t, &p[t], &nrm[t], tw, alpha, &mut fg);
                fg
            })
            .collect();
        self.temporal_terms(&p, tw, alpha, &mut grads);

        let mut losses = Breakdown::default();
        let mut per_limb = [[0.0; 10]; 5];
        for fg in &grads {
            for term in Term::ALL {
                *losses.term_mut(term) += fg.values[term.index()];
                for l in 0..10 {
                    per_limb[term.index()][l] += fg.per_limb[term.index()][l];
                }
            }
            losses.reg += fg.values[REG];
            losses.smooth += fg.values[SMOOTH];
        }
        let cfg = &self.cfg;
        let sem: f64 = Term::ALL
            .iter()
            .map(|&term| cfg.term_weight(term) * self.weighted_term(term, &grads))
            .sum();
        losses.total = cfg.w_reg * losses.reg + cfg.w_smooth * losses.smooth + cfg.w_sem * sem;
        if !losses.total.is_finite() {
            return Err(self.diagnose_nan(&grads));
        }

        let gradient = selection.map(|sel| {
            let channels: Vec<usize> = match sel {
                Selection::All => (0..CHANNELS).collect(),
                Selection::Only(term) => vec![term.index()],
            };
            self.backward(x, &fwd, &grads, &channels)
        });
        let per_term_grads = per_term.then(|| {
            Term::ALL
                .iter()
                .map(|term| self.backward(x, &fwd, &grads, &[term.index()]))
                .collect()
        });
        Ok((
            Evaluation {
                losses,
                per_limb,
                gradient,
            },
            per_term_grads,
        ))
    }

    fn weighted_term(&self, term: Term, grads: &[FrameGrad]) -> f64 {
        grads.iter().map(|g| g.weighted[term.index()]).sum()
    }

    fn diagnose_nan(&self, grads: &[FrameGrad]) -> Error {
        const NAMES: [&str; CHANNELS] = ["dist", "dir", "pen", "height", "sliding", "reg", "smooth"];
        for (t, g) in grads.iter().enumerate() {
            if let Some(c) = (0..CHANNELS).find(|&c| !g.values[c].is_finite()) {
                return Error::Numerical(format!("loss term {} is not finite at frame {t}", NAMES[c]));
            }
        }
        Error::Numerical("objective is not finite".into())
    }

    /// Bones of each limb, as variable offsets inside a frame block, per character.
    pub(crate) fn limb_slots(&self) -> Vec<(usize, Vec<(Limb, Vec<usize>)>)> {
        self.actors
            .iter()
            .map(|a| {
                let groups = Limb::ALL
                    .iter()
                    .map(|&l| {
                        let slots = (0..a.bones)
                            .filter(|&b| a.bone_limbs[b] == l)
                            .flat_map(|b| (3 + 3 * b)..(6 + 3 * b))
                            .collect();
                        (l, slots)
                    })
                    .collect();
                (a.var_base, groups)
            })
            .collect()
    }

    pub(crate) fn block_size(&self, actor: usize) -> usize {
        self.actors[actor].block()
    }

    pub fn actor_count(&self) -> usize {
        self.actors.len()
    }
}

/// Interaction weights of one frame over the stacked key-vertices, with the gaze bonus.
fn interaction_matrix(
    p: &[Vec3],
    key_actor: &[usize],
    mask: &[bool],
    thr: &[Thresholds],
    gaze: &[Option<(&[usize], Vec3)>],
    angles: (f64, f64),
) -> Vec<f64> {
    let n = p.len();
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if mask[i * n + j] {
                continue;
            }
            let th = pair_thresholds(thr, key_actor[i], key_actor[j]);
            w[i * n + j] = interaction_weight((p[j] - p[i]).norm(), th.d_min, th.d_max);
        }
    }
    for (c, g) in gaze.iter().enumerate() {
        if let Some((eyes, dir)) = g {
            for &i in eyes.iter() {
                for j in 0..n {
                    if key_actor[j] != c {
                        w[i * n + j] += gaze_bonus(&(p[j] - p[i]), dir, angles.0, angles.1);
                    }
                }
            }
        }
    }
    w
}
