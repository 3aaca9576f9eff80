//! Pose optimization against weighted semantic descriptors.

mod adam;
mod config;
mod conflicts;
mod problem;
mod rig;

use std::collections::BTreeMap;
use std::time::Instant;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::anim::{Animation, BoneMapping, Character, Pose};
use crate::descriptors::{GazeSource, GazeSpec, Ground, HeightField};
use crate::error::{Error, Result};
use crate::keyverts::KeyVertexSet;
use crate::limb::Limb;
use crate::math::Vec3;
use crate::naive::CopyRotations;
use crate::weighting::alpha_schedule;

pub use adam::Adam;
pub use config::{Balance, DirLoss, RetargetConfig, Term};
pub use conflicts::{conflict_runs, detect_conflicts, gradient_cosine, ConflictRecord};
pub use problem::{ActorSetup, Breakdown, Evaluation, GazeSetup, GazeTrack, Problem, Selection, TargetWeights};
pub use rig::{Posed, Rig};

/// One source character with its animation, retargeted onto one target character.
#[derive(Debug, Clone)]
pub struct CharacterPair<'a> {
    pub source: &'a Character,
    pub source_animation: &'a Animation,
    pub target: &'a Character,
    pub mapping: &'a BoneMapping,
    pub source_keys: &'a KeyVertexSet,
    pub target_keys: &'a KeyVertexSet,
    pub gaze: Option<GazeSpec>,
}

#[derive(Debug, Clone, Default)]
pub struct RetargetInput<'a> {
    pub pairs: Vec<CharacterPair<'a>>,
    pub terrain: Option<HeightField>,
}

/// What the observer wants to happen at an iteration boundary.
#[derive(Debug, Clone, PartialEq)]
pub enum Control {
    Continue,
    /// Replace the active balances.
    Rebalance(Vec<Balance>),
    Cancel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub window: usize,
    pub windows: usize,
    pub iteration: usize,
    pub iterations: usize,
}

/// Poses of a few frames, for previews.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    /// Animation frame indices.
    pub frames: Vec<usize>,
    /// `[character][frame][joint]`.
    pub source_joints: Vec<Vec<Vec<[f64; 3]>>>,
    pub target_joints: Vec<Vec<Vec<[f64; 3]>>>,
    /// `[character][frame][key-vertex]`.
    pub source_keys: Vec<Vec<Vec<[f64; 3]>>>,
    pub target_keys: Vec<Vec<Vec<[f64; 3]>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub progress: Progress,
    pub alpha: f64,
    pub losses: Breakdown,
    /// Unweighted semantic terms per limb.
    pub per_limb: BTreeMap<Limb, BTreeMap<Term, f64>>,
    pub conflicts: Vec<ConflictRecord>,
    pub snapshot: Snapshot,
    /// True for the evaluation after the last step of a window.
    pub last: bool,
}

/// Hooks into a running optimization. Both methods run on the optimizing thread.
pub trait Observer {
    /// Called before every iteration; may block to pause.
    fn boundary(&mut self, _progress: Progress) -> Control {
        Control::Continue
    }

    fn checkpoint(&mut self, _checkpoint: &Checkpoint) {}
}

pub struct NoObserver;

impl Observer for NoObserver {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLoss {
    pub iteration: usize,
    pub alpha: f64,
    #[serde(flatten)]
    pub losses: Breakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub start: usize,
    pub end: usize,
    pub iterations: usize,
    /// Initialization evaluated with the final blend factor.
    pub initial: Breakdown,
    #[serde(rename = "final")]
    pub final_losses: Breakdown,
    pub curve: Vec<IterationLoss>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
    pub frames_per_second: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub frames: usize,
    pub characters: usize,
    pub key_vertices: usize,
    pub dir_loss: DirLoss,
    /// How gaze directions were obtained, per character.
    pub gaze: Vec<String>,
    pub windows: Vec<WindowReport>,
    pub initial: Breakdown,
    #[serde(rename = "final")]
    pub final_losses: Breakdown,
    /// Final raw term values restricted to entries touching each limb.
    pub final_per_limb: BTreeMap<Limb, BTreeMap<Term, f64>>,
    pub conflicts: Vec<ConflictRecord>,
    pub config: RetargetConfig,
    pub timing: Timing,
}

impl Report {
    /// The report without wall-clock fields, for reproducibility comparisons.
    pub fn without_timing(&self) -> Report {
        Report {
            timing: Timing {
                wall_seconds: 0.0,
                frames_per_second: 0.0,
            },
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct RetargetOutput {
    pub animations: Vec<Animation>,
    pub report: Report,
}

/// Overlapping batches `[start, end)` covering `frames`.
pub fn batch_windows(frames: usize, batch: usize, overlap: usize) -> Vec<(usize, usize)> {
    if frames <= batch {
        return vec![(0, frames)];
    }
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + batch).min(frames);
        out.push((start, end));
        if end == frames {
            break;
        }
        start = end - overlap;
    }
    out
}

fn key_rig(character: &Character, keys: &KeyVertexSet) -> Rig {
    let mesh = &character.mesh;
    let idx = keys.vertices();
    let pos: Vec<Vec3> = idx.iter().map(|&v| mesh.vertices()[v]).collect();
    let nrm: Vec<Vec3> = idx.iter().map(|&v| mesh.rest_normals()[v]).collect();
    let skin: Vec<Vec<(usize, f64)>> = idx.iter().map(|&v| mesh.skin()[v].clone()).collect();
    Rig::new(character.skeleton.clone(), &pos, &nrm, &skin)
}

fn validate_pair(k: usize, pair: &CharacterPair) -> Result<()> {
    pair.source_animation
        .validate(Some(pair.source.skeleton.len()))
        .map_err(|e| Error::Invalid(format!("character pair {k}: {e}")))?;
    for keys in [pair.source_keys, pair.target_keys] {
        let n = if std::ptr::eq(keys, pair.source_keys) {
            pair.source.mesh.len()
        } else {
            pair.target.mesh.len()
        };
        if let Some(bad) = keys.vertices().into_iter().find(|&v| v >= n) {
            return Err(Error::Invalid(format!("character pair {k}: key-vertex index {bad} out of range")));
        }
    }
    Ok(())
}

struct Prepared<'a> {
    pair: &'a CharacterPair<'a>,
    target_keys: KeyVertexSet,
    init: Animation,
    source_rig: Rig,
    target_rig: Rig,
    gaze_label: String,
}

fn prepare<'a>(pairs: &'a [CharacterPair<'a>]) -> Result<Vec<Prepared<'a>>> {
    let frames = pairs.first().map(|p| p.source_animation.len()).unwrap_or(0);
    pairs
        .iter()
        .enumerate()
        .map(|(k, pair)| {
            validate_pair(k, pair)?;
            if pair.source_animation.len() != frames {
                return Err(Error::Invalid(format!("character pair {k}: animations differ in frame count")));
            }
            let target_keys = pair.source_keys.align(pair.target_keys)?;
            let init = CopyRotations::new(&pair.source.skeleton, &pair.target.skeleton, pair.mapping)?
                .transfer_animation(pair.source_animation);
            let gaze_label = match &pair.gaze {
                None => "none".to_string(),
                Some(g) => match &g.source {
                    GazeSource::Vectors(_) => "vectors".to_string(),
                    GazeSource::Bone { bone, .. } => format!("bone:{bone}"),
                },
            };
            Ok(Prepared {
                source_rig: key_rig(pair.source, pair.source_keys),
                target_rig: key_rig(pair.target, &target_keys),
                pair,
                target_keys,
                init,
                gaze_label,
            })
        })
        .collect()
}

fn gaze_setup(p: &Prepared, start: usize, end: usize) -> Result<Option<GazeSetup>> {
    let Some(spec) = &p.pair.gaze else {
        return Ok(None);
    };
    let eyes = spec
        .eyes
        .iter()
        .map(|label| {
            p.target_keys
                .find(label)
                .ok_or_else(|| Error::Config(format!("gaze eye '{label}' is not a key-vertex")))
        })
        .collect::<Result<Vec<_>>>()?;
    let (source, target) = match &spec.source {
        GazeSource::Vectors(v) => {
            if v.len() != p.pair.source_animation.len() {
                return Err(Error::Config(format!(
                    "gaze has {} directions for {} frames",
                    v.len(),
                    p.pair.source_animation.len()
                )));
            }
            let dirs: Vec<Vec3> = v[start..end].iter().map(|d| Vec3::from(*d)).collect();
            if let Some(d) = dirs.iter().find(|d| (d.norm() - 1.0).abs() > 1e-6) {
                return Err(Error::Config(format!("gaze direction {d:?} is not unit length")));
            }
            (dirs.clone(), GazeTrack::Fixed(dirs))
        }
        GazeSource::Bone { bone, forward } => {
            let forward = Vec3::from(*forward).normalize();
            let find = |c: &Character| {
                c.skeleton
                    .find(bone)
                    .ok_or_else(|| Error::Config(format!("gaze bone '{bone}' missing on '{}'", c.name)))
            };
            let bs = find(p.pair.source)?;
            let bt = find(p.pair.target)?;
            let sk = &p.pair.source.skeleton;
            let local_s = sk.rest(bs).rot.transpose() * forward;
            let dirs = p.pair.source_animation.frames[start..end]
                .iter()
                .map(|pose| sk.forward_kinematics(pose)[bs].rot * local_s)
                .collect();
            let forward_local = p.pair.target.skeleton.rest(bt).rot.transpose() * forward;
            (dirs, GazeTrack::Bone { bone: bt, forward_local })
        }
    };
    Ok(Some(GazeSetup { eyes, source, target }))
}

fn build_from_prepared(prepared: &[Prepared], terrain: Option<HeightField>, cfg: &RetargetConfig, start: usize, end: usize) -> Result<Problem> {
    let setups = prepared
        .iter()
        .map(|p| {
            let limbs = p.pair.target.limbs()?;
            Ok(ActorSetup {
                source: p.source_rig.clone(),
                target: p.target_rig.clone(),
                source_frames: p.pair.source_animation.frames[start..end].to_vec(),
                init_frames: p.init.frames[start..end].to_vec(),
                source_height: p.pair.source.height(),
                target_height: p.pair.target.height(),
                key_limbs: p.target_keys.limbs(),
                bone_limbs: limbs.per_bone().to_vec(),
                gaze: gaze_setup(p, start, end)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let up = prepared[0].pair.target.skeleton.up();
    let fps = prepared[0].pair.source_animation.fps;
    Problem::new(setups, fps, Ground::new(up, terrain), cfg)
}

/// The objective over frames `[start, end)`, with copy-rotations initialization.
pub fn build_problem(input: &RetargetInput, cfg: &RetargetConfig, start: usize, end: usize) -> Result<Problem> {
    let prepared = prepare(&input.pairs)?;
    let frames = prepared.first().map(|p| p.init.len()).unwrap_or(0);
    if start >= end || end > frames {
        return Err(Error::Invalid(format!("frame range {start}..{end} outside 0..{frames}")));
    }
    build_from_prepared(&prepared, input.terrain.clone(), cfg, start, end)
}

fn to_arrays(v: &[Vec3]) -> Vec<[f64; 3]> {
    v.iter().map(|p| [p.x, p.y, p.z]).collect()
}

fn snapshot(problem: &Problem, x: &[f64], prepared: &[Prepared], start: usize) -> Snapshot {
    let frames = problem.frames();
    let count = frames.min(10);
    let picks: Vec<usize> = if count <= 1 {
        vec![0]
    } else {
        (0..count)
            .map(|k| ((k * (frames - 1)) as f64 / (count - 1) as f64).round() as usize)
            .collect()
    };
    let joints = problem.joints(x);
    let mut snap = Snapshot {
        frames: picks.iter().map(|t| t + start).collect(),
        source_joints: Vec::new(),
        target_joints: Vec::new(),
        source_keys: Vec::new(),
        target_keys: Vec::new(),
    };
    let key_points = problem.key_points(x);
    let mut offset = 0;
    for (c, p) in prepared.iter().enumerate() {
        let n = p.target_keys.len();
        let sk = &p.pair.source.skeleton;
        let mut sj = Vec::new();
        let mut tj = Vec::new();
        let mut sk_keys = Vec::new();
        let mut tk = Vec::new();
        for &t in &picks {
            let pose = &p.pair.source_animation.frames[t + start];
            sj.push(to_arrays(&sk.forward_kinematics(pose).iter().map(|w| w.pos).collect::<Vec<_>>()));
            tj.push(to_arrays(&joints[c][t]));
            sk_keys.push(to_arrays(&problem.source_positions()[t][offset..offset + n]));
            tk.push(to_arrays(&key_points[t][offset..offset + n]));
        }
        snap.source_joints.push(sj);
        snap.target_joints.push(tj);
        snap.source_keys.push(sk_keys);
        snap.target_keys.push(tk);
        offset += n;
    }
    snap
}

fn add_breakdown(a: &mut Breakdown, b: &Breakdown) {
    a.total += b.total;
    a.reg += b.reg;
    a.smooth += b.smooth;
    a.dist += b.dist;
    a.dir += b.dir;
    a.pen += b.pen;
    a.height += b.height;
    a.sliding += b.sliding;
}

/// Blends `next` into `acc` over their overlapping frames, then appends the rest.
fn stitch(acc: &mut Vec<Pose>, next: Vec<Pose>, overlap: usize) {
    let overlap = overlap.min(acc.len()).min(next.len());
    let base = acc.len() - overlap;
    for k in 0..overlap {
        let s = (k + 1) as f64 / (overlap + 1) as f64;
        let prev = &acc[base + k];
        let new = &next[k];
        acc[base + k] = Pose {
            root_position: prev.root_position * (1.0 - s) + new.root_position * s,
            rotations: prev
                .rotations
                .iter()
                .zip(&new.rotations)
                .map(|(a, b)| a.slerp(b, s))
                .collect(),
        };
    }
    acc.extend(next.into_iter().skip(overlap));
}

fn limb_table(per_limb: &[[f64; 10]; 5]) -> BTreeMap<Limb, BTreeMap<Term, f64>> {
    Limb::ALL
        .iter()
        .map(|&l| {
            let terms = Term::ALL.iter().map(|&t| (t, per_limb[t.index()][l.index()])).collect();
            (l, terms)
        })
        .collect()
}

/// Retargets every pair, optimizing all characters jointly.
pub fn run_retarget(input: &RetargetInput, cfg: &RetargetConfig, observer: &mut dyn Observer) -> Result<RetargetOutput> {
    cfg.validate()?;
    if input.pairs.is_empty() {
        return Err(Error::Invalid("no characters to retarget".into()));
    }
    if let Some(t) = &input.terrain {
        t.validate()?;
    }
    let clock = Instant::now();
    let prepared = prepare(&input.pairs)?;
    let frames = prepared[0].init.len();
    let windows = batch_windows(frames, cfg.batch_frames, cfg.batch_overlap);
    let mut balances = cfg.balance.clone();
    let mut results: Vec<Vec<Pose>> = vec![Vec::new(); prepared.len()];
    let mut window_reports = Vec::with_capacity(windows.len());
    let mut conflicts = Vec::new();
    let mut initial = Breakdown::default();
    let mut final_losses = Breakdown::default();
    let mut per_limb = [[0.0; 10]; 5];

    for (w, &(start, end)) in windows.iter().enumerate() {
        info!("window {}/{}: frames {start}..{end}", w + 1, windows.len());
        let mut wcfg = cfg.clone();
        wcfg.balance = balances.clone();
        let mut problem = build_from_prepared(&prepared, input.terrain.clone(), &wcfg, start, end)?;
        let mut x = problem.initial_variables();
        let mut adam = Adam::new(x.len(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_epsilon);
        let mut curve = Vec::with_capacity(cfg.iterations);
        let initial_w = problem.evaluate(&x, 1.0, None, None)?.losses;
        for it in 0..cfg.iterations {
            let progress = Progress {
                window: w,
                windows: windows.len(),
                iteration: it,
                iterations: cfg.iterations,
            };
            match observer.boundary(progress) {
                Control::Continue => {}
                Control::Rebalance(b) => {
                    problem.set_balance(b.clone())?;
                    balances = b;
                }
                Control::Cancel => return Err(Error::Cancelled),
            }
            let alpha = alpha_schedule(it, cfg.iterations);
            let check = it % cfg.checkpoint_every == 0;
            let ev = if check {
                let (ev, per_term) = problem.term_gradients(&x, alpha).map_err(|e| at_window(e, w, it, start))?;
                let found = detect_conflicts(&problem, &per_term, cfg.conflict_threshold, start);
                observer.checkpoint(&Checkpoint {
                    progress,
                    alpha,
                    losses: ev.losses,
                    per_limb: limb_table(&ev.per_limb),
                    conflicts: found,
                    snapshot: snapshot(&problem, &x, &prepared, start),
                    last: false,
                });
                ev
            } else {
                problem
                    .evaluate(&x, alpha, None, Some(Selection::All))
                    .map_err(|e| at_window(e, w, it, start))?
            };
            curve.push(IterationLoss {
                iteration: it,
                alpha,
                losses: ev.losses,
            });
            let g = ev.gradient.expect("gradient requested");
            adam.step(&mut x, &g);
            if it % 50 == 0 {
                debug!("iteration {it}: total {:.6e}", ev.losses.total);
            }
        }
        let (ev, per_term) = problem
            .term_gradients(&x, 1.0)
            .map_err(|e| at_window(e, w, cfg.iterations, start))?;
        let found = detect_conflicts(&problem, &per_term, cfg.conflict_threshold, start);
        observer.checkpoint(&Checkpoint {
            progress: Progress {
                window: w,
                windows: windows.len(),
                iteration: cfg.iterations,
                iterations: cfg.iterations,
            },
            alpha: 1.0,
            losses: ev.losses,
            per_limb: limb_table(&ev.per_limb),
            conflicts: found.clone(),
            snapshot: snapshot(&problem, &x, &prepared, start),
            last: true,
        });
        info!(
            "window {}: loss {:.6e} -> {:.6e}",
            w + 1,
            initial_w.total,
            ev.losses.total
        );
        conflicts.extend(found);
        add_breakdown(&mut initial, &initial_w);
        add_breakdown(&mut final_losses, &ev.losses);
        for k in 0..5 {
            for l in 0..10 {
                per_limb[k][l] += ev.per_limb[k][l];
            }
        }
        let overlap = if w == 0 { 0 } else { windows[w - 1].1 - start };
        for (c, poses) in problem.poses(&x).into_iter().enumerate() {
            stitch(&mut results[c], poses, overlap);
        }
        window_reports.push(WindowReport {
            start,
            end,
            iterations: cfg.iterations,
            initial: initial_w,
            final_losses: ev.losses,
            curve,
        });
    }

    let fps = prepared[0].pair.source_animation.fps;
    let animations = results
        .into_iter()
        .map(|frames| Animation { fps, frames })
        .collect();
    let final_per_limb = limb_table(&per_limb);
    let wall = clock.elapsed().as_secs_f64();
    let mut config = cfg.clone();
    config.balance = balances;
    Ok(RetargetOutput {
        animations,
        report: Report {
            frames,
            characters: prepared.len(),
            key_vertices: prepared.iter().map(|p| p.target_keys.len()).sum(),
            dir_loss: cfg.dir_loss,
            gaze: prepared.iter().map(|p| p.gaze_label.clone()).collect(),
            windows: window_reports,
            initial,
            final_losses,
            final_per_limb,
            conflicts,
            config,
            timing: Timing {
                wall_seconds: wall,
                frames_per_second: if wall > 0.0 { frames as f64 / wall } else { 0.0 },
            },
        },
    })
}

fn at_window(e: Error, window: usize, iteration: usize, start: usize) -> Error {
    match e {
        Error::Numerical(m) => Error::Numerical(format!(
            "{m} (window {window} starting at frame {start}, iteration {iteration})"
        )),
        other => other,
    }
}

