use semret_core::anim::{Character, SkinnedMesh};
use semret_core::correspondence::{sinkhorn, transfer_key_vertices, SinkhornConfig, TransferConfig};
use semret_core::humanoid::{self, HumanoidParams};
use semret_core::math::Vec3;

fn transformed(c: &Character, f: impl Fn(&Vec3) -> Vec3) -> Character {
    let mut out = c.clone();
    let vertices = c.mesh.vertices().iter().map(f).collect();
    out.mesh = SkinnedMesh::new(vertices, c.mesh.faces().to_vec(), c.mesh.skin().to_vec(), c.skeleton.len()).unwrap();
    out.key_vertices = None;
    out
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

fn exact_assignment_cost(x: &[Vec3], y: &[Vec3]) -> (f64, Vec<usize>) {
    permutations(x.len())
        .into_iter()
        .map(|p| {
            let c: f64 = p.iter().enumerate().map(|(i, &j)| (x[i] - y[j]).norm_squared()).sum();
            (c, p)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap()
}

fn cloud(seed: u64, n: usize) -> Vec<Vec3> {
    // small deterministic generator so the oracle does not share code with the solver
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = move || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    };
    (0..n).map(|_| Vec3::new(next(), next(), next())).collect()
}

#[test]
fn identical_clouds_concentrate_on_the_matching_point() {
    for seed in 0..5 {
        let x = cloud(seed, 8);
        let plan = sinkhorn(&x, &[1.0; 8], &x, &[1.0; 8], &SinkhornConfig { epsilon: 1e-3, ..Default::default() }).unwrap();
        let (_, perm) = exact_assignment_cost(&x, &x);
        for i in 0..8 {
            assert_eq!(perm[i], i);
            assert!(plan.entry(i, i) >= 0.9, "seed {seed} row {i}: {}", plan.entry(i, i));
        }
    }
}

#[test]
fn small_clouds_match_the_exact_optimum() {
    for seed in 0..5 {
        for n in [3, 6, 8] {
            let x = cloud(100 + seed, n);
            let y = cloud(200 + seed, n);
            let (exact, _) = exact_assignment_cost(&x, &y);
            let plan = sinkhorn(&x, &vec![1.0; n], &y, &vec![1.0; n], &SinkhornConfig { epsilon: 0.001, max_iters: 5000, tol: 1e-6 }).unwrap();
            let got = plan.cost();
            assert!((got - exact).abs() <= 0.05 * exact, "n={n} seed={seed}: {got} vs {exact}");
            for (r, c) in plan.row_sums().iter().zip(plan.col_sums()) {
                assert!((r - 1.0).abs() < 1e-4 && (c - 1.0).abs() < 1e-4);
            }
        }
    }
}

#[test]
fn template_self_transfer_is_identity() {
    let h = humanoid::template();
    let keys = h.character.key_vertices.clone().unwrap();
    let mut dest = h.character.clone();
    dest.key_vertices = None;
    let out = transfer_key_vertices(&h.character, &keys, &dest, &TransferConfig::default()).unwrap();
    let mut wrong = Vec::new();
    for (a, b) in keys.entries().iter().zip(out.entries()) {
        let pa = h.character.mesh.vertices()[a.vertex];
        let pb = dest.mesh.vertices()[b.vertex];
        if (pa - pb).norm() > 1e-6 {
            wrong.push((a.label.clone(), (pa - pb).norm()));
        }
    }
    assert!(wrong.is_empty(), "{wrong:?}");
}

#[test]
fn transfer_ignores_translation_and_uniform_scale() {
    let h = humanoid::template();
    let keys = h.character.key_vertices.clone().unwrap();
    let base = transfer_key_vertices(&h.character, &keys, &transformed(&h.character, |v| *v), &TransferConfig::default()).unwrap();
    let moved = transformed(&h.character, |v| v * 2.0 + Vec3::new(3.0, -1.0, 0.5));
    let out = transfer_key_vertices(&h.character, &keys, &moved, &TransferConfig::default()).unwrap();
    assert_eq!(base.vertices(), out.vertices());
}

#[test]
fn stretched_arm_wrist_lands_near_the_true_wrist() {
    let h = humanoid::template();
    let keys = h.character.key_vertices.clone().unwrap();
    let long = humanoid::humanoid(&HumanoidParams { name: "long".into(), upper_arm: 1.5, forearm: 1.5, ..Default::default() });
    let mut dest = long.character.clone();
    let truth = dest.key_vertices.take().unwrap();
    let out = transfer_key_vertices(&h.character, &keys, &dest, &TransferConfig::default()).unwrap();
    let hc = dest.height();
    for label in ["wrist_l", "wrist_r", "elbow_l", "fingertip_r"] {
        let a = dest.mesh.vertices()[truth.entries()[truth.find(label).unwrap()].vertex];
        let b = dest.mesh.vertices()[out.entries()[out.find(label).unwrap()].vertex];
        assert!((a - b).norm() < 0.05 * hc, "{label}: off by {}", (a - b).norm());
    }
}

#[test]
fn manual_overrides_win() {
    let h = humanoid::template();
    let keys = h.character.key_vertices.clone().unwrap();
    let mut dest = h.character.clone();
    let mut entries = dest.key_vertices.as_ref().unwrap().entries().to_vec();
    entries.retain(|e| e.label == "chin");
    entries[0].vertex = 5;
    dest.key_vertices = Some(semret_core::keyverts::KeyVertexSet::new(entries, dest.mesh.len()).unwrap());
    let out = transfer_key_vertices(&h.character, &keys, &dest, &TransferConfig::default()).unwrap();
    assert_eq!(out.entries()[out.find("chin").unwrap()].vertex, 5);
}
