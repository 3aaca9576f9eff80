//! Key-vertex transfer between meshes by per-limb entropic optimal transport.

use std::collections::BTreeMap;

use log::{debug, warn};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anim::{triangle_area, Character, SkinnedMesh};
use crate::error::{Error, Result};
use crate::keyverts::{KeyVertex, KeyVertexSet};
use crate::limb::{Limb, LimbAssignment};
use crate::math::Vec3;

/// Vertices of each limb, by the limb of their highest-weight bone.
pub fn split_limbs(mesh: &SkinnedMesh, limbs: &LimbAssignment) -> BTreeMap<Limb, Vec<usize>> {
    let mut out: BTreeMap<Limb, Vec<usize>> = BTreeMap::new();
    for v in 0..mesh.len() {
        out.entry(limbs.limb_of(mesh.dominant_bone(v))).or_default().push(v);
    }
    out
}

/// Area share of each vertex in `subset`: a third of every incident triangle.
pub fn vertex_density_weights(mesh: &SkinnedMesh, subset: &[usize]) -> Vec<f64> {
    let mut per_vertex = vec![0.0; mesh.len()];
    for face in mesh.faces() {
        let a = triangle_area(mesh.vertices(), face) / 3.0;
        for &i in face {
            per_vertex[i] += a;
        }
    }
    subset
        .iter()
        .map(|&v| {
            if per_vertex[v] == 0.0 {
                warn!("vertex {v} has no incident face; its density weight is 0");
            }
            per_vertex[v]
        })
        .collect()
}

/// Centers the cloud on its weighted mean and divides by one scalar so the
/// pooled per-axis variance is 1.
pub fn normalize_cloud(points: &[Vec3], weights: &[f64]) -> Result<Vec<Vec3>> {
    let total: f64 = weights.iter().sum();
    if points.is_empty() || !(total > 0.0) {
        return Err(Error::Invalid("cannot normalize an empty or massless point cloud".into()));
    }
    let mean = points.iter().zip(weights).fold(Vec3::zeros(), |acc, (p, w)| acc + p * *w) / total;
    let var = points
        .iter()
        .zip(weights)
        .map(|(p, w)| w * (p - mean).norm_squared())
        .sum::<f64>()
        / (3.0 * total);
    if !(var > 1e-24) {
        return Err(Error::Invalid("point cloud has zero variance".into()));
    }
    let s = var.sqrt();
    Ok(points.iter().map(|p| (p - mean) / s).collect())
}

/// Over-relaxation factor of the final-temperature iterations.
const OMEGA: f64 = 1.7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            max_iters: 500,
            tol: 1e-6,
        }
    }
}

/// Entropic coupling stored through its dual potentials.
///
/// `P(i, j) = exp((f_i + g_j - |x_i - y_j|²) / ε)`; entries are computed on demand.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    x: Vec<Vec3>,
    y: Vec<Vec3>,
    f: Vec<f64>,
    g: Vec<f64>,
    epsilon: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Relative L1 error of the row sums against the template weights.
    pub residual: f64,
}

fn cost(a: &Vec3, b: &Vec3) -> f64 {
    (a - b).norm_squared()
}

/// `-ε log Σ_j exp((pot_j - C(p, q_j)) / ε)`, accumulated in one stabilized pass.
fn soft_min(p: &Vec3, q: &[Vec3], pot: &[f64], eps: f64) -> f64 {
    let inv = 1.0 / eps;
    let mut hi = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for (qj, gj) in q.iter().zip(pot) {
        let v = (gj - cost(p, qj)) * inv;
        if v > hi {
            sum = sum * (hi - v).exp() + 1.0;
            hi = v;
        } else if v > hi - 40.0 {
            // smaller terms cannot change the sum in double precision
            sum += (v - hi).exp();
        }
    }
    -eps * (hi + sum.ln())
}

impl TransportPlan {
    pub fn rows(&self) -> usize {
        self.x.len()
    }

    pub fn cols(&self) -> usize {
        self.y.len()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        ((self.f[i] + self.g[j] - cost(&self.x[i], &self.y[j])) / self.epsilon).exp()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols()).map(|j| self.entry(i, j)).collect()
    }

    /// Column of the largest entry in row `i`.
    pub fn row_argmax(&self, i: usize) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for j in 0..self.cols() {
            let v = self.g[j] - cost(&self.x[i], &self.y[j]);
            if v > best.1 {
                best = (j, v);
            }
        }
        best.0
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows()).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols()];
        for i in 0..self.rows() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += self.entry(i, j);
            }
        }
        out
    }

    /// Transport cost `<P, C>`.
    pub fn cost(&self) -> f64 {
        let mut total = 0.0;
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                total += self.entry(i, j) * cost(&self.x[i], &self.y[j]);
            }
        }
        total
    }
}

/// Entries more than this many nats below their row maximum are dropped from the iterations.
const TRUNCATION: f64 = 60.0;
const REBUILD_EVERY: usize = 25;

/// Per-point neighbor lists of a truncated kernel, with cached costs.
struct Support {
    offsets: Vec<usize>,
    index: Vec<u32>,
    cost: Vec<f64>,
}

impl Support {
    /// For each point of `from`, the points of `to` whose term `(pot_j - C) / ε`
    /// lies within the truncation window of the largest one.
    fn build(from: &[Vec3], to: &[Vec3], pot: &[f64], eps: f64) -> Self {
        let mut offsets = Vec::with_capacity(from.len() + 1);
        let mut index = Vec::new();
        let mut costs = Vec::new();
        let mut values = vec![0.0; to.len()];
        offsets.push(0);
        for p in from {
            let mut hi = f64::NEG_INFINITY;
            for (j, (q, g)) in to.iter().zip(pot).enumerate() {
                values[j] = (g - cost(p, q)) / eps;
                hi = hi.max(values[j]);
            }
            for (j, v) in values.iter().enumerate() {
                if *v > hi - TRUNCATION {
                    index.push(j as u32);
                    costs.push(cost(p, &to[j]));
                }
            }
            offsets.push(index.len());
        }
        Self {
            offsets,
            index,
            cost: costs,
        }
    }

    /// `-ε log Σ_j exp((pot_j - C_j) / ε)` over the neighbors of point `i`, in one stabilized pass.
    fn soft_min(&self, i: usize, pot: &[f64], eps: f64) -> f64 {
        let inv = 1.0 / eps;
        let mut hi = f64::NEG_INFINITY;
        let mut sum = 0.0;
        let range = self.offsets[i]..self.offsets[i + 1];
        for (&j, c) in self.index[range.clone()].iter().zip(&self.cost[range]) {
            let v = (pot[j as usize] - c) * inv;
            if v > hi {
                sum = sum * (hi - v).exp() + 1.0;
                hi = v;
            } else if v > hi - 40.0 {
                sum += (v - hi).exp();
            }
        }
        -eps * (hi + sum.ln())
    }
}

/// Log-domain Sinkhorn between weighted clouds `(x, a)` and `(y, b)` with
/// squared Euclidean cost. `b` is rescaled to the total mass of `a`.
///
/// Starts from a large temperature and halves it down to `epsilon`, which
/// reaches small temperatures in far fewer iterations.
pub fn sinkhorn(x: &[Vec3], a: &[f64], y: &[Vec3], b: &[f64], config: &SinkhornConfig) -> Result<TransportPlan> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Invalid("transport between empty clouds".into()));
    }
    if x.len() != a.len() || y.len() != b.len() {
        return Err(Error::Invalid("point and weight counts differ".into()));
    }
    if a.iter().chain(b).any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::Invalid("transport weights must be positive".into()));
    }
    if !(config.epsilon > 0.0) {
        return Err(Error::Config(format!("sinkhorn epsilon must be positive, got {}", config.epsilon)));
    }
    let mass_a: f64 = a.iter().sum();
    let mass_b: f64 = b.iter().sum();
    let log_a: Vec<f64> = a.iter().map(|w| w.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|w| (w * mass_a / mass_b).ln()).collect();

    let diameter = x
        .iter()
        .chain(y)
        .fold((Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        });
    let diameter2 = (diameter.1 - diameter.0).norm_squared();
    let mut eps = diameter2.max(config.epsilon);

    let mut f = vec![0.0; x.len()];
    let mut g = vec![0.0; y.len()];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let mut support: Option<(Support, Support, f64, usize)> = None;
    while iterations < config.max_iters {
        iterations += 1;
        let stale = match &support {
            Some((_, _, at, built)) => *at != eps || iterations - built >= REBUILD_EVERY,
            None => true,
        };
        if stale {
            support = Some((Support::build(y, x, &f, eps), Support::build(x, y, &g, eps), eps, iterations));
        }
        let (cols, rows, _, _) = support.as_ref().unwrap();
        let at_target = eps <= config.epsilon;
        let omega = if at_target { OMEGA } else { 1.0 };
        for j in 0..y.len() {
            let gj = cols.soft_min(j, &f, eps) + eps * log_b[j];
            g[j] += omega * (gj - g[j]);
        }
        // the next f update also yields the row sums of (f, g)
        let mut err = 0.0;
        for i in 0..x.len() {
            let fi = rows.soft_min(i, &g, eps) + eps * log_a[i];
            let row = a[i] * ((f[i] - fi) / eps).exp();
            err += (row - a[i]).abs();
            f[i] += omega * (fi - f[i]);
        }
        if !f.iter().chain(&g).all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!(
                "sinkhorn potentials became non-finite at epsilon {eps}; use a larger epsilon"
            )));
        }
        residual = err / mass_a;
        if at_target {
            if residual < config.tol {
                converged = true;
                break;
            }
        } else if residual < config.tol.max(1e-3) || iterations % 20 == 0 {
            eps = (eps * 0.5).max(config.epsilon);
        }
    }
    // restore exact column marginals for the returned plan
    for j in 0..y.len() {
        g[j] = soft_min(&y[j], x, &f, eps) + eps * log_b[j];
    }
    if !converged {
        warn!(
            "sinkhorn stopped after {iterations} iterations with row residual {residual:.3e} (epsilon {eps})"
        );
    }
    Ok(TransportPlan {
        x: x.to_vec(),
        y: y.to_vec(),
        f,
        g,
        epsilon: eps,
        iterations,
        converged,
        residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    pub sinkhorn: SinkhornConfig,
    /// Limbs with more vertices are subsampled to this many before transport.
    pub max_points: usize,
    pub seed: u64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            sinkhorn: SinkhornConfig::default(),
            max_points: 4000,
            seed: 0,
        }
    }
}

struct LimbCloud {
    vertices: Vec<usize>,
    points: Vec<Vec3>,
    weights: Vec<f64>,
}

fn limb_cloud(mesh: &SkinnedMesh, vertices: Vec<usize>, keep: &[usize], max_points: usize, seed: u64) -> Result<LimbCloud> {
    let mut weights = vertex_density_weights(mesh, &vertices);
    let floor = weights.iter().copied().filter(|w| *w > 0.0).fold(f64::INFINITY, f64::min);
    if !floor.is_finite() {
        return Err(Error::Invalid("limb has no surface area".into()));
    }
    for w in &mut weights {
        if *w <= 0.0 {
            *w = floor;
        }
    }
    let (vertices, weights) = if vertices.len() > max_points {
        subsample(&vertices, &weights, keep, max_points, seed)?
    } else {
        (vertices, weights)
    };
    let raw: Vec<Vec3> = vertices.iter().map(|&v| mesh.vertices()[v]).collect();
    let points = normalize_cloud(&raw, &weights)?;
    Ok(LimbCloud {
        vertices,
        points,
        weights,
    })
}

/// Draws `count` vertices with probability proportional to weight, always keeping `keep`.
/// The drawn set represents the measure with uniform weights.
fn subsample(vertices: &[usize], weights: &[f64], keep: &[usize], count: usize, seed: u64) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; vertices.len()];
    let mut n = 0;
    for (k, v) in vertices.iter().enumerate() {
        if keep.contains(v) {
            chosen[k] = true;
            n += 1;
        }
    }
    let mut w = weights.to_vec();
    while n < count {
        let dist = WeightedIndex::new(&w).map_err(|e| Error::Invalid(format!("subsampling weights: {e}")))?;
        // draw in batches so each rebuild of the distribution pays off
        for _ in 0..(count - n).min(256) {
            let k = dist.sample(&mut rng);
            if !chosen[k] {
                chosen[k] = true;
                n += 1;
            }
        }
        for (k, c) in chosen.iter().enumerate() {
            if *c {
                w[k] = 0.0;
            }
        }
    }
    let picked: Vec<usize> = (0..vertices.len()).filter(|&k| chosen[k]).collect();
    Ok((picked.iter().map(|&k| vertices[k]).collect(), vec![1.0; picked.len()]))
}

/// Transfers the template's key-vertices onto `destination`, one transport problem per limb.
///
/// Key-vertices listed in the destination's own key-vertex table override the transferred ones.
pub fn transfer_key_vertices(
    template: &Character,
    template_keys: &KeyVertexSet,
    destination: &Character,
    config: &TransferConfig,
) -> Result<KeyVertexSet> {
    let t_limbs = split_limbs(&template.mesh, template.limbs()?);
    let mut d_limbs = split_limbs(&destination.mesh, destination.limbs()?);

    let mut wanted: BTreeMap<Limb, Vec<usize>> = BTreeMap::new();
    for (k, kv) in template_keys.entries().iter().enumerate() {
        wanted.entry(kv.limb).or_default().push(k);
    }
    let mut jobs = Vec::new();
    for (limb, keys) in &wanted {
        let t_verts = t_limbs.get(limb).cloned().unwrap_or_default();
        let d_verts = d_limbs.remove(limb).unwrap_or_default();
        if d_verts.is_empty() {
            return Err(Error::Invalid(format!(
                "destination character '{}' has no vertices on limb {limb}",
                destination.name
            )));
        }
        let key_vertices: Vec<usize> = keys.iter().map(|&k| template_keys.entries()[k].vertex).collect();
        for &v in &key_vertices {
            if !t_verts.contains(&v) {
                return Err(Error::Invalid(format!(
                    "template key-vertex {v} is tagged {limb} but its dominant bone lies on another limb"
                )));
            }
        }
        jobs.push((*limb, keys.clone(), key_vertices, t_verts, d_verts));
    }

    let solved: Vec<Result<Vec<(usize, usize)>>> = jobs
        .into_par_iter()
        .map(|(limb, keys, key_vertices, t_verts, d_verts)| {
            let seed = config.seed ^ (limb.index() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let tc = limb_cloud(&template.mesh, t_verts, &key_vertices, config.max_points, seed)?;
            let dc = limb_cloud(&destination.mesh, d_verts, &[], config.max_points, seed.wrapping_add(1))?;
            let plan = sinkhorn(&tc.points, &tc.weights, &dc.points, &dc.weights, &config.sinkhorn)?;
            debug!(
                "limb {limb}: {}x{} plan, {} iterations, residual {:.2e}",
                plan.rows(),
                plan.cols(),
                plan.iterations,
                plan.residual
            );
            Ok(keys
                .iter()
                .zip(&key_vertices)
                .map(|(&k, v)| {
                    let row = tc.vertices.iter().position(|x| x == v).expect("key-vertex kept in subsample");
                    (k, dc.vertices[plan.row_argmax(row)])
                })
                .collect())
        })
        .collect();

    let mut chosen = vec![usize::MAX; template_keys.len()];
    for r in solved {
        for (k, v) in r? {
            chosen[k] = v;
        }
    }
    let overrides = destination.key_vertices.as_ref();
    let entries = template_keys
        .entries()
        .iter()
        .zip(chosen)
        .map(|(kv, v)| {
            let vertex = overrides
                .and_then(|o| o.find(&kv.label).map(|k| o.entries()[k].vertex))
                .unwrap_or(v);
            KeyVertex {
                label: kv.label.clone(),
                vertex,
                limb: kv.limb,
            }
        })
        .collect();
    KeyVertexSet::new(entries, destination.mesh.len())
}
