//! Proximity weights selecting which descriptor entries matter at a frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::limb::Limb;
use crate::math::Vec3;

pub fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Distance and height windows in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub d_min: f64,
    pub d_max: f64,
    pub h_min: f64,
    pub h_max: f64,
}

impl Thresholds {
    /// Windows as fractions of a character height.
    pub fn from_fractions(height: f64, d_min: f64, d_max: f64, h_min: f64, h_max: f64) -> Result<Self> {
        let t = Self {
            d_min: d_min * height,
            d_max: d_max * height,
            h_min: h_min * height,
            h_max: h_max * height,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.d_min && self.d_min < self.d_max) {
            return Err(Error::Config(format!(
                "need 0 < d_min < d_max, got {} and {}",
                self.d_min, self.d_max
            )));
        }
        if !(0.0 < self.h_min && self.h_min < self.h_max) {
            return Err(Error::Config(format!(
                "need 0 < h_min < h_max, got {} and {}",
                self.h_min, self.h_max
            )));
        }
        Ok(())
    }

    /// Entrywise mean, used for pairs spanning two characters.
    pub fn mean(&self, other: &Thresholds) -> Thresholds {
        Thresholds {
            d_min: 0.5 * (self.d_min + other.d_min),
            d_max: 0.5 * (self.d_max + other.d_max),
            h_min: 0.5 * (self.h_min + other.h_min),
            h_max: 0.5 * (self.h_max + other.h_max),
        }
    }
}

/// `clamp(1 − (d − d_min)/(d_max − d_min))`.
pub fn interaction_weight(dist: f64, d_min: f64, d_max: f64) -> f64 {
    clamp01(1.0 - (dist - d_min) / (d_max - d_min))
}

pub fn floor_weight(height: f64, h_min: f64, h_max: f64) -> f64 {
    clamp01(1.0 - (height - h_min) / (h_max - h_min))
}

pub fn interaction_weights(dist: &[f64], d_min: f64, d_max: f64) -> Vec<f64> {
    dist.iter().map(|&d| interaction_weight(d, d_min, d_max)).collect()
}

pub fn floor_weights(height: &[f64], h_min: f64, h_max: f64) -> Vec<f64> {
    height.iter().map(|&h| floor_weight(h, h_min, h_max)).collect()
}

/// `W_src + α · W_targ`; the target term is a plain value and carries no gradient.
pub fn blend_weights(source: &[f64], target: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if source.len() != target.len() {
        return Err(Error::Invalid(format!(
            "weight shapes differ: {} vs {}",
            source.len(),
            target.len()
        )));
    }
    Ok(source.iter().zip(target).map(|(s, t)| s + alpha * t).collect())
}

/// Linear schedule from 0 at the first step to 1 at the last.
pub fn alpha_schedule(step: usize, total: usize) -> f64 {
    if total <= 1 {
        1.0
    } else {
        (step as f64 / (total - 1) as f64).min(1.0)
    }
}

/// Cosine similarity with the denominator guarded by `1e-9`; zero when either side vanishes.
pub fn cosine(a: &Vec3, b: &Vec3) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.dot(b) / (na * nb).max(1e-9)
}

/// `clamp((S_cos(dir, gaze) − cos a_min) / (cos a_min − cos a_max))`, angles in radians.
pub fn gaze_bonus(dir: &Vec3, gaze: &Vec3, a_min: f64, a_max: f64) -> f64 {
    if gaze.norm() == 0.0 {
        return 0.0;
    }
    let (c0, c1) = (a_min.cos(), a_max.cos());
    clamp01((cosine(dir, gaze) - c0) / (c0 - c1))
}

/// Pairs excluded from the interaction weights: the diagonal, and key-vertices
/// on the same limb that already lie within `d_max` of each other in the rest pose.
pub fn same_limb_mask(rest: &[Vec3], limbs: &[Limb], d_max: f64) -> Vec<bool> {
    let n = rest.len();
    let mut mask = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            mask[i * n + j] = i == j || (limbs[i] == limbs[j] && (rest[i] - rest[j]).norm() < d_max);
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn interaction_window() {
        assert_eq!(interaction_weight(0.05, 0.05, 0.15), 1.0);
        assert_eq!(interaction_weight(0.15, 0.05, 0.15), 0.0);
        assert_relative_eq!(interaction_weight(0.10, 0.05, 0.15), 0.5, epsilon = 1e-12);
        assert_eq!(interaction_weight(0.0, 0.05, 0.15), 1.0);
        assert_eq!(interaction_weight(3.0, 0.05, 0.15), 0.0);
    }

    #[test]
    fn floor_window() {
        assert_eq!(floor_weight(0.0, 0.05, 0.15), 1.0);
        assert_eq!(floor_weight(0.15, 0.05, 0.15), 0.0);
        assert_relative_eq!(floor_weight(0.10, 0.05, 0.15), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn blending() {
        let s = [0.2, 0.0, 1.0];
        let t = [0.5, 1.0, 1.0];
        assert_eq!(blend_weights(&s, &t, 0.0).unwrap(), s.to_vec());
        assert_eq!(blend_weights(&s, &t, 1.0).unwrap()[1], 1.0);
        assert_eq!(blend_weights(&s, &t, 1.0).unwrap()[2], 2.0);
        assert!(blend_weights(&s, &t[..2], 0.5).is_err());
        assert_eq!(alpha_schedule(0, 300), 0.0);
        assert_eq!(alpha_schedule(299, 300), 1.0);
        assert_eq!(alpha_schedule(0, 1), 1.0);
    }

    #[test]
    fn gaze_bonus_regression() {
        let (a_min, a_max) = (2f64.to_radians(), 5f64.to_radians());
        assert_eq!(gaze_bonus(&Vec3::x(), &Vec3::zeros(), a_min, a_max), 0.0);
        // aligned: (1 − cos 2°)/(cos 2° − cos 5°)
        let expected = (1.0 - a_min.cos()) / (a_min.cos() - a_max.cos());
        assert_relative_eq!(gaze_bonus(&Vec3::x(), &Vec3::x(), a_min, a_max), expected, epsilon = 1e-12);
        assert_relative_eq!(expected, 0.190597, epsilon = 1e-6);
        assert_eq!(gaze_bonus(&Vec3::y(), &Vec3::x(), a_min, a_max), 0.0);
        let three = Vec3::new(3f64.to_radians().cos(), 3f64.to_radians().sin(), 0.0);
        assert_eq!(gaze_bonus(&three, &Vec3::x(), a_min, a_max), 0.0);
    }

    #[test]
    fn mask_keeps_cross_limb_pairs() {
        let rest = [Vec3::zeros(), Vec3::new(0.01, 0.0, 0.0), Vec3::new(0.02, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)];
        let limbs = [Limb::HandL, Limb::HandL, Limb::HandR, Limb::HandL];
        let m = same_limb_mask(&rest, &limbs, 0.15);
        assert!(m[0] && m[1] && m[4 + 1]);
        assert!(!m[2]);
        assert!(!m[3]);
    }
}
