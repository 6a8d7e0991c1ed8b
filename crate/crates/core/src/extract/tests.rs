use proptest::prelude::*;

use super::*;
use crate::field::Aabb;
use crate::photomodel::ForwardModelParams;
use crate::simulator::{default_phi, simulate, SceneKind, SimConfig};

fn sphere(r: f64) -> impl Fn([f64; 3]) -> f64 + Sync {
    move |p: [f64; 3]| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - r
}

fn radial_error(m: &TriangleMesh, r: f64) -> f64 {
    m.vertices
        .iter()
        .map(|v| ((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() - r).abs())
        .sum::<f64>()
        / m.vertices.len() as f64
}

#[test]
fn positive_field_gives_empty_mesh() {
    let m = marching_cubes_fn(|_| 1.0, Aabb::UNIT, 16, 50.0);
    assert!(m.is_empty() && m.vertices.is_empty());
    let m = marching_cubes_fn(|_| -1.0, Aabb::UNIT, 16, 50.0);
    assert!(m.is_empty());
}

#[test]
fn sphere_mesh_is_accurate_closed_and_outward() {
    let m = marching_cubes_fn(sphere(0.3), Aabb::UNIT, 128, 50.0);
    let voxel = 1.0 / 128.0;
    assert!(radial_error(&m, 0.3) < 0.5 * voxel * 3f64.sqrt());
    assert_eq!(m.euler_characteristic(), 2);
    m.validate().unwrap();
    let vol = 4.0 / 3.0 * std::f64::consts::PI * 0.3f64.powi(3);
    assert!((m.signed_volume() - vol).abs() < 0.01 * vol, "{}", m.signed_volume());
}

#[test]
fn surface_through_grid_points_stays_closed() {
    // the six axis grid points sit just inside the surface, so the cells
    // around them produce slivers far below any sensible area threshold
    for res in [16, 32, 64] {
        let m = marching_cubes_fn(sphere(0.25 + 1e-9), Aabb::UNIT, res, 1.0);
        assert_eq!(m.euler_characteristic(), 2, "resolution {res}");
        m.validate().unwrap();
    }
}

#[test]
fn radial_error_shrinks_with_resolution() {
    let errs: Vec<f64> = [32, 64, 128]
        .iter()
        .map(|&r| radial_error(&marching_cubes_fn(sphere(0.3), Aabb::UNIT, r, 1.0), 0.3))
        .collect();
    // linear interpolation of an exact distance is second order
    for w in errs.windows(2) {
        assert!(w[1] <= 0.6 * w[0], "{errs:?}");
    }
}

#[test]
fn low_resolution_is_rejected() {
    let f = crate::field::SdfFieldParams::new(Default::default(), Aabb::UNIT, 50.0, 0);
    assert!(matches!(marching_cubes(&f, 4), Err(ExtractError::Resolution(4))));
}

#[test]
fn mesh_files_are_written() {
    let m = marching_cubes_fn(sphere(0.2), Aabb::UNIT, 16, 50.0);
    let dir = tempfile::tempdir().unwrap();
    let obj = dir.path().join("m.obj");
    let ply = dir.path().join("m.ply");
    m.write_obj(&obj).unwrap();
    m.write_ply(&ply).unwrap();
    let text = std::fs::read_to_string(&obj).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), m.vertices.len());
    assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), m.triangles.len());
    let bytes = std::fs::read(&ply).unwrap();
    let header_end = bytes.windows(11).position(|w| w == b"end_header\n").unwrap() + 11;
    assert_eq!(bytes.len() - header_end, m.vertices.len() * 12 + m.triangles.len() * 13);
    let side = m.sidecar(16, Aabb::UNIT);
    assert_eq!(side.micrometres_per_unit, 50.0);
}

#[test]
fn depth_metric_examples() {
    let z = vec![vec![1.0, 1.1, f64::NAN], vec![0.9]];
    let masks = vec![vec![true, true, false], vec![true]];
    assert_eq!(eval_depth(&z, &z, &masks, 50.0), 0.0);
    let shifted: Vec<Vec<f64>> = z.iter().map(|v| v.iter().map(|x| x + 1.0 / 50.0).collect()).collect();
    assert!((eval_depth(&shifted, &z, &masks, 50.0) - 1.0).abs() < 1e-12);
}

#[test]
fn normal_metric_examples() {
    let n = vec![vec![[0.0, 0.0, 1.0], [0.6, 0.0, 0.8]]];
    let masks = vec![vec![true, true]];
    assert_eq!(eval_normal(&n, &n, &masks), 0.0);
    let rot = vec![vec![[1.0, 0.0, 0.0], [-0.8, 0.0, 0.6]]];
    assert!((eval_normal(&rot, &n, &masks) - 90.0).abs() < 1e-9);
}

#[test]
fn bse_model_metric_examples() {
    let gt = default_phi();
    assert_eq!(eval_bse_model(&gt, &gt, 64), 0.0);
    let mut est = gt.clone();
    for e in &mut est.e {
        *e += 1.0;
    }
    assert!((eval_bse_model(&est, &gt, 64) - 1.0).abs() < 1e-12);
}

#[test]
fn shadow_metric_examples() {
    let psi = vec![[vec![3.0, 0.0, 5.0], vec![1.0, 1.0, 0.0], vec![0.0; 3], vec![2.0, 0.0, 0.0]]];
    let masks = vec![vec![true; 3]];
    assert!((shadow_accuracy(&psi, &psi, &masks) - 100.0).abs() < 1e-12);
    let zero = vec![[vec![0.0; 3], vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]]];
    assert!(shadow_accuracy(&psi, &zero, &masks).abs() < 1e-12);
}

fn tiny(scene: SceneKind) -> crate::dataset::Dataset {
    simulate(&SimConfig {
        scene,
        views: 5,
        width: 32,
        height: 24,
        pixel_size: 0.8 / 32.0,
        light_samples: 16,
        ..SimConfig::default()
    })
}

#[test]
fn ground_truth_scores_perfectly() {
    let ds = tiny(SceneKind::Wall);
    let rep = evaluate_maps(&ds, &ground_truth_maps(&ds).unwrap(), &EvalOptions::default()).unwrap();
    rep.validate().unwrap();
    let gt = &rep.methods[0];
    assert_eq!((gt.e_depth, gt.e_normal, gt.e_bse), (0.0, 0.0, Some(0.0)));
    assert_eq!(gt.s_shadow, Some(100.0));
    let coarse = rep.method("coarse_input").unwrap();
    assert!(coarse.e_depth > 0.0 && coarse.e_normal > 0.0);
    assert!(rep.method("ps").is_some());
    let json = serde_json::to_string(&rep).unwrap();
    let back: EvalReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, rep);
    assert!(serde_json::from_str::<EvalReport>(&json.replacen("\"version\"", "\"extra\":1,\"version\"", 1)).is_err());
}

#[test]
fn depth_normals_match_plane_truth() {
    let ds = tiny(SceneKind::Plane);
    for v in &ds.views {
        let gt = v.ground_truth.as_ref().unwrap();
        let d: Vec<f64> = gt.depth.iter().map(|&x| x as f64).collect();
        let n = normals_from_depth(&v.camera, &d);
        let g: Vec<[f64; 3]> = gt.normal.iter().map(|n| n.map(f64::from)).collect();
        let m = gt.foreground();
        assert!(eval_normal(&[n], &[g], &[m]) < 0.5, "{}", v.name);
    }
}

proptest! {
    #[test]
    fn shadow_accuracy_is_symmetric(a in prop::collection::vec(0.0f64..50.0, 12), b in prop::collection::vec(0.0f64..50.0, 12)) {
        let split = |v: &Vec<f64>| vec![[v[0..3].to_vec(), v[3..6].to_vec(), v[6..9].to_vec(), v[9..12].to_vec()]];
        let masks = vec![vec![true; 3]];
        let x = shadow_accuracy(&split(&a), &split(&b), &masks);
        let y = shadow_accuracy(&split(&b), &split(&a), &masks);
        prop_assert!((x - y).abs() < 1e-9);
        prop_assert!((0.0..=100.0).contains(&x));
    }

    #[test]
    fn depth_and_normal_metrics_ignore_order(vals in prop::collection::vec((0.0f64..2.0, 0.0f64..2.0, -1.0f64..1.0), 4..40), seed in 0u64..1000) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let pred: Vec<f64> = vals.iter().map(|v| v.0).collect();
        let gt: Vec<f64> = vals.iter().map(|v| v.1).collect();
        let np: Vec<[f64; 3]> = vals.iter().map(|v| [v.2, 0.3, 1.0]).collect();
        let ng: Vec<[f64; 3]> = vals.iter().map(|v| [0.1, v.2, 1.0]).collect();
        let mut order: Vec<usize> = (0..vals.len()).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let half = vals.len() / 2;
        let pick = |v: &Vec<f64>, r: std::ops::Range<usize>| order[r].iter().map(|&i| v[i]).collect::<Vec<_>>();
        let pickn = |v: &Vec<[f64; 3]>, r: std::ops::Range<usize>| order[r].iter().map(|&i| v[i]).collect::<Vec<_>>();
        let n = vals.len();
        let whole = eval_depth(&[pred.clone()], &[gt.clone()], &[vec![true; n]], 2.0);
        let split = eval_depth(
            &[pick(&pred, half..n), pick(&pred, 0..half)],
            &[pick(&gt, half..n), pick(&gt, 0..half)],
            &[vec![true; n - half], vec![true; half]],
            2.0,
        );
        prop_assert!((whole - split).abs() < 1e-9);
        let whole = eval_normal(&[np.clone()], &[ng.clone()], &[vec![true; n]]);
        let split = eval_normal(
            &[pickn(&np, half..n), pickn(&np, 0..half)],
            &[pickn(&ng, half..n), pickn(&ng, 0..half)],
            &[vec![true; n - half], vec![true; half]],
        );
        prop_assert!((whole - split).abs() < 1e-9);
    }

    #[test]
    fn bse_metric_ignores_consistent_relabeling(shift in prop::collection::vec(-3.0f64..3.0, 12), perm in Just([2usize, 0, 3, 1])) {
        let gt = default_phi();
        let mut est = gt.clone();
        for q in 0..4 {
            est.c[q] += shift[q];
            est.d[q] += shift[4 + q].abs();
            est.e[q] += shift[8 + q];
        }
        let relabel = |p: &ForwardModelParams| {
            let mut r = p.clone();
            for q in 0..4 {
                r.c[q] = p.c[perm[q]];
                r.d[q] = p.d[perm[q]];
                r.e[q] = p.e[perm[q]];
            }
            r
        };
        let a = eval_bse_model(&est, &gt, 64);
        let b = eval_bse_model(&relabel(&est), &relabel(&gt), 64);
        prop_assert!((a - b).abs() < 1e-9);
    }
}
