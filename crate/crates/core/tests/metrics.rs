use proptest::prelude::*;
use semret_core::anim::Animation;
use semret_core::fixtures::{blocks, held, key_position, stance_pose};
use semret_core::humanoid::template;
use semret_core::limb::Limb;
use semret_core::math::{exp_so3, Mat3, Vec3};
use semret_core::metrics::*;

/// Harmonic mean of precision and recall, carried out on integer fractions.
fn brute_f1(truth: &[bool], pred: &[bool]) -> Option<f64> {
    let tp = truth.iter().zip(pred).filter(|(t, p)| **t && **p).count() as u64;
    let fp = truth.iter().zip(pred).filter(|(t, p)| !**t && **p).count() as u64;
    let fnn = truth.iter().zip(pred).filter(|(t, p)| **t && !**p).count() as u64;
    if tp + fp + fnn == 0 {
        return None;
    }
    if tp == 0 {
        return Some(0.0);
    }
    // precision tp/(tp+fp), recall tp/(tp+fnn)
    let (pn, pd) = (tp, tp + fp);
    let (rn, rd) = (tp, tp + fnn);
    let num = 2 * pn * rn;
    let den = pn * rd + rn * pd;
    Some(num as f64 / den as f64)
}

/// Probability that a random positive outranks a random negative, ties counting half.
fn brute_auc(truth: &[bool], score: &[f64]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &ti) in truth.iter().enumerate() {
        for (j, &tj) in truth.iter().enumerate() {
            if ti && !tj {
                pairs += 1.0;
                if score[i] > score[j] {
                    wins += 1.0;
                } else if score[i] == score[j] {
                    wins += 0.5;
                }
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

#[test]
fn hand_labelled_sequence_matches_brute_force() {
    let truth = [true, true, false, true, false, false, true, false, true, true];
    let pred = [true, false, false, true, true, false, true, false, false, true];
    let score = [-0.001, -0.03, -0.2, 0.0, -0.004, -0.5, -0.002, -0.03, -0.02, -0.001];
    // 4 true positives, 1 false positive, 2 false negatives; 21.5 of 24 positive-negative pairs ranked right
    assert_eq!(f1_score(&truth, &pred), Some(8.0 / 11.0));
    assert_eq!(f1_score(&truth, &pred), brute_f1(&truth, &pred));
    assert_eq!(roc_auc(&truth, &score), brute_auc(&truth, &score));
    assert_eq!(roc_auc(&truth, &score), Some(21.5 / 24.0));
}

proptest! {
    #[test]
    fn classifier_scores_match_brute_force(
        rows in prop::collection::vec((any::<bool>(), any::<bool>(), 0u8..6), 1..40)
    ) {
        let truth: Vec<bool> = rows.iter().map(|r| r.0).collect();
        let pred: Vec<bool> = rows.iter().map(|r| r.1).collect();
        // few distinct values so ties are common
        let score: Vec<f64> = rows.iter().map(|r| -(r.2 as f64) * 0.01).collect();
        prop_assert_eq!(f1_score(&truth, &pred), brute_f1(&truth, &pred));
        prop_assert_eq!(roc_auc(&truth, &score), brute_auc(&truth, &score));
        if let Some(a) = roc_auc(&truth, &score) {
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}

#[test]
fn cubic_joint_trajectory_has_jerk_six_per_frame() {
    let c = blocks("cube", &[(Vec3::zeros(), 0.5, Limb::Torso)]);
    let mut frames = held(&c, 6, &Mat3::identity(), Vec3::zeros()).frames;
    for (t, f) in frames.iter_mut().enumerate() {
        f.root_position.x = (t as f64).powi(3);
    }
    let a = Animation::new(1.0, frames).unwrap();
    let s = jerk_stats(&a, &c.skeleton).unwrap();
    assert_eq!((s.mean, s.max), (6.0, 6.0));
}

#[test]
fn half_submerged_cube() {
    let c = blocks("cube", &[(Vec3::zeros(), 0.5, Limb::Torso)]);
    let a = held(&c, 2, &Mat3::identity(), Vec3::zeros());
    let s = floor_penetration(&c, &a, None, DEFAULT_DIVISIONS).unwrap();
    assert!((s.mean - 0.5).abs() < 0.01 && (s.max - 0.5).abs() < 0.01, "{s:?}");

    // tilted: still half below by symmetry, but no longer aligned with the grid
    let tilt = exp_so3(&Vec3::new(0.3, -0.5, 0.2));
    let a = held(&c, 1, &tilt, Vec3::zeros());
    let s = floor_penetration(&c, &a, None, DEFAULT_DIVISIONS).unwrap();
    assert!((s.mean - 0.5).abs() < 0.01, "{s:?}");

    let a = held(&c, 1, &tilt, Vec3::new(0.0, 0.0, 2.0 * c.height()));
    assert_eq!(floor_penetration(&c, &a, None, DEFAULT_DIVISIONS).unwrap().max, 0.0);
}

#[test]
fn terrain_counts_as_floor() {
    let c = blocks("cube", &[(Vec3::zeros(), 0.5, Limb::Torso)]);
    let a = held(&c, 1, &Mat3::identity(), Vec3::new(0.0, 0.0, 0.75));
    let field = semret_core::descriptors::HeightField::constant(0.5);
    let s = floor_penetration(&c, &a, Some(&field), DEFAULT_DIVISIONS).unwrap();
    assert!((s.mean - 0.25).abs() < 0.01, "{s:?}");
}

#[test]
fn overlapping_cubes_share_a_quarter_of_their_volume() {
    let parts = |a: Limb, b: Limb| [(Vec3::new(0.5, 0.5, 0.5), 0.5, a), (Vec3::new(1.0, 0.5, 0.5), 0.5, b)];
    let c = blocks("pair", &parts(Limb::HandL, Limb::Torso));
    let a = held(&c, 1, &Mat3::identity(), Vec3::zeros());
    let fine = self_penetration(&c, &a, DEFAULT_DIVISIONS).unwrap().mean;
    assert!((fine - 0.25).abs() < 0.01, "{fine}");
    let coarse = self_penetration(&c, &a, DEFAULT_DIVISIONS / 2).unwrap().mean;
    assert!((fine - coarse).abs() < 0.1 * fine);

    let tilt = exp_so3(&Vec3::new(0.2, 0.4, -0.3));
    let a = held(&c, 1, &tilt, Vec3::zeros());
    let fine = self_penetration(&c, &a, DEFAULT_DIVISIONS).unwrap().mean;
    let coarse = self_penetration(&c, &a, DEFAULT_DIVISIONS / 2).unwrap().mean;
    assert!((fine - 0.25).abs() < 0.02, "{fine}");
    assert!((fine - coarse).abs() < 0.1 * fine, "{fine} vs {coarse}");

    let adjacent = blocks("pair", &parts(Limb::ArmL, Limb::Torso));
    let a = held(&adjacent, 1, &Mat3::identity(), Vec3::zeros());
    assert_eq!(self_penetration(&adjacent, &a, DEFAULT_DIVISIONS).unwrap().max, 0.0);

    let apart = blocks(
        "apart",
        &[(Vec3::zeros(), 0.5, Limb::HandL), (Vec3::new(2.0, 0.0, 0.0), 0.5, Limb::Torso)],
    );
    let a = held(&apart, 1, &Mat3::identity(), Vec3::zeros());
    assert_eq!(self_penetration(&apart, &a, DEFAULT_DIVISIONS).unwrap().max, 0.0);
}

#[test]
fn coarse_grids_are_rejected() {
    let c = blocks("cube", &[(Vec3::zeros(), 0.5, Limb::Torso)]);
    let a = held(&c, 1, &Mat3::identity(), Vec3::zeros());
    assert!(matches!(
        floor_penetration(&c, &a, None, 7),
        Err(semret_core::Error::Config(_))
    ));
}

/// Standing, with the body hopping 10 cm forward every other pair of frames.
fn hopping(frames: usize) -> (semret_core::anim::Character, Animation) {
    let c = template().character;
    let stand = stance_pose(&c, 0.2, 0.1);
    let poses = (0..frames)
        .map(|t| {
            let mut p = stand.clone();
            if t % 4 >= 2 {
                p.root_position.z += 0.1;
                p.root_position.x += 0.02 * t as f64;
            }
            p
        })
        .collect();
    (c, Animation::new(30.0, poses).unwrap())
}

#[test]
fn contact_scores_of_identical_motion_are_perfect() {
    let (c, a) = hopping(12);
    assert!(key_position(&c, &a.frames[0], "heel_l").z.abs() < 0.01 * c.height());
    let s = contact_scores(&c, &a, &c, &a, None).unwrap();
    assert_eq!(s.grounded.f1, Some(1.0));
    assert_eq!(s.grounded.auc, Some(1.0));
    assert_eq!(s.locked.f1, Some(1.0));
    assert_eq!(s.locked.auc, Some(1.0));
}

#[test]
fn lifted_feet_are_never_grounded() {
    let (c, a) = hopping(12);
    let mut lifted = a.clone();
    for f in lifted.frames.iter_mut() {
        f.root_position.z += 0.3;
    }
    let s = contact_scores(&c, &a, &c, &lifted, None).unwrap();
    assert_eq!(s.grounded.f1, Some(0.0));
    let still = held(&c, 12, &Mat3::identity(), Vec3::zeros());
    assert_eq!(contact_scores(&c, &still, &c, &still, None).unwrap().grounded.auc, None);
}

#[test]
fn report_has_flat_keys_and_is_reproducible() {
    let (c, a) = hopping(8);
    let r = evaluate(&c, &a, &c, &a, None, 32).unwrap();
    let again = evaluate(&c, &a, &c, &a, None, 32).unwrap();
    assert_eq!(r, again);
    let v = serde_json::to_value(&r).unwrap();
    let mut keys: Vec<&String> = v.as_object().unwrap().keys().collect();
    keys.sort();
    assert_eq!(
        keys,
        [
            "floorpen.max", "floorpen.mean", "grounded.auc", "grounded.f1", "jerk.max", "jerk.mean",
            "selfpen.max", "selfpen.mean", "sliding.auc", "sliding.f1"
        ]
    );
    for x in [r.selfpen_mean, r.selfpen_max, r.floorpen_mean, r.floorpen_max] {
        assert!((0.0..=1.0).contains(&x));
    }
    assert!(r.jerk_max > 0.0);
}
