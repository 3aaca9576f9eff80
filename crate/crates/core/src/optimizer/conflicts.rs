use serde::{Deserialize, Serialize};

use crate::limb::Limb;

use super::config::Term;
use super::problem::Problem;

/// Two loss terms pulling one body part in opposing directions over a frame range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictRecord {
    /// First and last frame, inclusive.
    pub frames: [usize; 2],
    pub limb: Limb,
    pub terms: [Term; 2],
    /// Most negative cosine over the range.
    pub cosine: f64,
    /// Index of the character in a multi-character run.
    #[serde(default)]
    pub character: usize,
}

/// Cosine of two gradient vectors; `None` when either one vanishes.
pub fn gradient_cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Some((dot / (na * nb).max(1e-9)).clamp(-1.0, 1.0))
}

/// Maximal runs of consecutive frames whose cosine falls below `threshold`,
/// as `(first, last, min cosine)`.
pub fn conflict_runs(cosines: &[Option<f64>], threshold: f64) -> Vec<(usize, usize, f64)> {
    let mut runs = Vec::new();
    let mut open: Option<(usize, f64)> = None;
    for (t, c) in cosines.iter().enumerate() {
        match (c.filter(|&c| c < threshold), open) {
            (Some(c), Some((s, m))) => open = Some((s, m.min(c))),
            (Some(c), None) => open = Some((t, c)),
            (None, Some((s, m))) => {
                runs.push((s, t - 1, m));
                open = None;
            }
            (None, None) => {}
        }
    }
    if let Some((s, m)) = open {
        runs.push((s, cosines.len() - 1, m));
    }
    runs
}

/// Conflicts between every pair of semantic terms on every limb, from per-term gradients.
pub fn detect_conflicts(problem: &Problem, per_term: &[Vec<f64>], threshold: f64, frame_offset: usize) -> Vec<ConflictRecord> {
    let frames = problem.frames();
    let mut out = Vec::new();
    for (character, (base, groups)) in problem.limb_slots().into_iter().enumerate() {
        let block = problem.block_size(character);
        for (limb, slots) in groups {
            if slots.is_empty() {
                continue;
            }
            for (a, &k1) in Term::ALL.iter().enumerate() {
                for &k2 in &Term::ALL[a + 1..] {
                    let cosines: Vec<Option<f64>> = (0..frames)
                        .map(|t| {
                            let at = base + t * block;
                            let g1: Vec<f64> = slots.iter().map(|&s| per_term[k1.index()][at + s]).collect();
                            let g2: Vec<f64> = slots.iter().map(|&s| per_term[k2.index()][at + s]).collect();
                            gradient_cosine(&g1, &g2)
                        })
                        .collect();
                    for (s, e, c) in conflict_runs(&cosines, threshold) {
                        out.push(ConflictRecord {
                            frames: [s + frame_offset, e + frame_offset],
                            limb,
                            terms: [k1, k2],
                            cosine: c,
                            character,
                        });
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_cases() {
        let same = gradient_cosine(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert!((same - 1.0).abs() < 1e-12);
        let opposite = gradient_cosine(&[1.0, 2.0], &[-1.0, -2.0]).unwrap();
        assert!((opposite + 1.0).abs() < 1e-12);
        assert_eq!(gradient_cosine(&[0.0, 0.0], &[1.0, 2.0]), None);
    }

    #[test]
    fn runs_merge_consecutive_frames() {
        let c = [Some(1.0), Some(-0.9), Some(-0.6), None, Some(-0.7), Some(0.2), Some(-1.0)];
        let runs = conflict_runs(&c, -0.5);
        assert_eq!(runs, vec![(1, 2, -0.9), (4, 4, -0.7), (6, 6, -1.0)]);
        assert!(conflict_runs(&[Some(1.0); 4], -0.5).is_empty());
    }
}
