use super::*;
use crate::field::HashGridConfig;
use crate::photomodel::phi_variance;
use crate::simulator::{default_phi, simulate, SceneKind, SimConfig};

fn small_field() -> FieldConfig {
    FieldConfig {
        grid: HashGridConfig {
            levels: 4,
            features_per_level: 2,
            base_resolution: 4,
            growth: 1.5,
            log2_table_size: 10,
        },
        hidden: 16,
        ..FieldConfig::default()
    }
}

fn tiny_dataset(scene: SceneKind, shadows: bool) -> Dataset {
    simulate(&SimConfig {
        scene,
        views: 5,
        width: 24,
        height: 18,
        pixel_size: 0.8 / 24.0,
        shadows,
        light_samples: 16,
        seed: 3,
        ..SimConfig::default()
    })
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        t1: 2,
        t2: 4,
        t3: 6,
        rays_per_batch: 8,
        samples_per_ray: 24,
        field: small_field(),
        ..TrainConfig::microstructure()
    }
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    assert!(TrainConfig::desk().validate().is_ok());
    let mut c = TrainConfig::default();
    c.t2 = c.t1;
    assert!(c.validate().is_err());
    let mut c = TrainConfig::default();
    c.lambda3 = -1.0;
    assert!(c.validate().is_err());
    let mut c = TrainConfig::default();
    c.samples_per_ray = 1;
    assert!(c.validate().is_err());
    let mut c = TrainConfig::default();
    c.alpha = 0.0;
    assert!(c.validate().is_err());
}

#[test]
fn stage_schedule() {
    let c = TrainConfig::default();
    assert_eq!(c.stage(1), Stage::Geometry);
    assert_eq!(c.stage(1000), Stage::Geometry);
    assert_eq!(c.stage(1001), Stage::Photometric);
    assert_eq!(c.stage(2000), Stage::Photometric);
    assert_eq!(c.stage(2001), Stage::Masked);
    assert_eq!(c.mask(c.stage(2001)), Some(MaskMode::Dynamic));
    let c = TrainConfig {
        ablation: Ablation::NoSMask,
        ..TrainConfig::default()
    };
    assert_eq!(c.stage(3000), Stage::Photometric);
    assert_eq!(c.mask(c.stage(3000)), Some(MaskMode::AllOnes));
}

#[test]
fn ablation_names_parse() {
    for a in Ablation::ALL {
        assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
    }
    assert_eq!("no-s-mask".parse::<Ablation>().unwrap(), Ablation::NoSMask);
    assert!("no_field".parse::<Ablation>().is_err());
}

#[test]
fn depth_loss_examples() {
    let z = [1.0, 1.2, f64::NAN];
    let w = [0.2, 0.2, 0.0];
    assert_eq!(depth_loss(&[Some(1.0), Some(1.2), Some(0.3)], &z, &w), 0.0);
    assert_eq!(depth_loss(&[Some(1.5), Some(0.2), None], &z, &[0.0; 3]), 0.0);
    // no-hit ray leaves the normaliser
    let l = depth_loss(&[Some(1.5), None, None], &z, &w);
    assert!((l - 0.1).abs() < 1e-15);
}

#[test]
fn eikonal_loss_examples() {
    let sphere: Vec<[f64; 3]> = (0..50)
        .map(|i| {
            let a = i as f64 * 0.3;
            [a.cos() * 0.6, a.sin() * 0.6, 0.8]
        })
        .collect();
    assert!(eikonal_loss(&sphere) < 1e-12);
    assert!((eikonal_loss(&[[0.0, 0.0, 2.0]; 7]) - 1.0).abs() < 1e-15);
}

#[test]
fn bse_loss_examples() {
    let phi = default_phi();
    let normals = [Some([0.1, 0.2, 0.97]), Some([-0.3, 0.0, 0.95]), None];
    let b: Vec<[f64; 4]> = normals
        .iter()
        .map(|n| n.map_or([0.0; 4], |n| crate::photomodel::bse_forward_all(n, &phi).unwrap()))
        .collect();
    let (l, fill) = bse_loss(&normals, &b, &phi, MaskMode::AllOnes, 0.25, 60.0);
    assert!(l < 1e-12 && fill == 1.0);
    // everything shadowed far below the prediction
    let dark = vec![[0.0; 4]; 3];
    let (l, fill) = bse_loss(&normals, &dark, &phi, MaskMode::Dynamic, 0.25, 60.0);
    assert_eq!((l, fill), (0.0, 0.0));
    let (l1, _) = bse_loss(&normals, &dark, &phi, MaskMode::AllOnes, 0.25, 60.0);
    assert!(l1 > 50.0);
    // steep normals are excluded from the normaliser
    let steep = [Some([0.9, 0.0, 0.3])];
    assert_eq!(bse_loss(&steep, &[[0.0; 4]], &phi, MaskMode::AllOnes, 0.25, 60.0).0, 0.0);
}

/// Field and Φ gradients of one weighted term against central differences.
fn check_term(ds: &Dataset, mode: PhiMode, weights: Weights, mask: Option<MaskMode>, label: &str) {
    let field = SdfFieldParams::new(small_field(), ds.bounds, ds.scene_scale, 11);
    let mut phi = LearnedPhi::init(ds, mode);
    // move Φ off its symmetric start so every block has a gradient
    for (i, r) in phi.raw.iter_mut().enumerate() {
        *r += 0.013 * ((i * 7 % 5) as f64 - 2.0);
    }
    let ps = (mode == PhiMode::Ratio).then(|| batch::ps_slopes(ds).unwrap());
    let (w, h) = (ds.width, ds.height);
    let pixels = [(0, h / 2, w / 2), (1, h / 2 + 2, w / 2 - 3), (2, 0, 0)];
    let batch = RayBatch::from_pixels(ds, &pixels, 32);
    assert_eq!(batch.len(), 3);
    let set = ObjectiveSettings {
        weights,
        mask,
        alpha: 0.25,
        cos_cutoff: 60f64.to_radians().cos(),
        cameras: ds.views.iter().map(|v| &v.camera).collect(),
        ps: ps.as_deref(),
    };
    let obj = evaluate(&field, &phi, &batch, &set, true);
    assert!(obj.total > 0.0, "{label}: term is zero on the probe batch");

    let l = field.layout();
    let blocks = [
        (l.table, l.w1),
        (l.w1, l.b1),
        (l.b1, l.w2),
        (l.w2, l.b2),
        (l.b2, l.b2 + 1),
        (l.log_sharpness, l.len),
    ];
    let mut checked = 0;
    for (lo, hi) in blocks {
        let mut idx: Vec<usize> = (lo..hi).collect();
        idx.sort_by(|&a, &b| obj.field_grad[b].abs().total_cmp(&obj.field_grad[a].abs()));
        for &i in idx.iter().take(3) {
            let an = obj.field_grad[i];
            if an.abs() < 1e-9 {
                continue;
            }
            let hstep = 1e-6 * field.params[i].abs().max(1e-2);
            let mut fp = field.clone();
            fp.params[i] += hstep;
            let up = evaluate(&fp, &phi, &batch, &set, false).total;
            fp.params[i] -= 2.0 * hstep;
            let dn = evaluate(&fp, &phi, &batch, &set, false).total;
            let fd = (up - dn) / (2.0 * hstep);
            let rel = (fd - an).abs() / an.abs().max(fd.abs());
            assert!(rel < 1e-3, "{label}: field param {i} analytic {an} fd {fd}");
            checked += 1;
        }
    }
    for i in 0..phi.len() {
        let an = obj.phi_grad[i];
        if an.abs() < 1e-9 {
            continue;
        }
        let hstep = 1e-6 * phi.raw[i].abs().max(1e-2);
        let mut pp = phi.clone();
        pp.raw[i] += hstep;
        let up = evaluate(&field, &pp, &batch, &set, false).total;
        pp.raw[i] -= 2.0 * hstep;
        let dn = evaluate(&field, &pp, &batch, &set, false).total;
        let fd = (up - dn) / (2.0 * hstep);
        let rel = (fd - an).abs() / an.abs().max(fd.abs());
        assert!(rel < 1e-3, "{label}: phi param {i} analytic {an} fd {fd}");
        checked += 1;
    }
    assert!(checked >= 5, "{label}: only {checked} parameters carried a gradient");
}

fn only(f: impl FnOnce(&mut Weights)) -> Weights {
    let mut w = Weights {
        depth: 0.0,
        eikonal: 0.0,
        bse: 0.0,
        phi: 0.0,
        opacity: 0.0,
    };
    f(&mut w);
    w
}

#[test]
fn every_loss_term_matches_finite_differences() {
    let ds = tiny_dataset(SceneKind::Sphere, false);
    check_term(&ds, PhiMode::Full, only(|w| w.depth = 0.5), None, "depth");
    check_term(&ds, PhiMode::Full, only(|w| w.eikonal = 0.1), None, "eikonal");
    check_term(&ds, PhiMode::Full, only(|w| w.opacity = 1.0), None, "opacity");
    check_term(&ds, PhiMode::Full, only(|w| w.bse = 1.0), Some(MaskMode::AllOnes), "bse");
    check_term(&ds, PhiMode::Full, only(|w| w.bse = 1.0), Some(MaskMode::Dynamic), "bse masked");
    check_term(&ds, PhiMode::Full, only(|w| w.phi = 1.0), Some(MaskMode::AllOnes), "phi");
    check_term(&ds, PhiMode::Secant, only(|w| w.bse = 1.0), Some(MaskMode::AllOnes), "bse secant");
    check_term(&ds, PhiMode::Shared, only(|w| w.bse = 1.0), Some(MaskMode::AllOnes), "bse shared");
    check_term(&ds, PhiMode::Ratio, only(|w| w.bse = 1.0), Some(MaskMode::AllOnes), "ps slopes");
    let all = Weights {
        depth: 0.5,
        eikonal: 0.1,
        bse: 1.0,
        phi: 1.0,
        opacity: 0.1,
    };
    check_term(&ds, PhiMode::Full, all, Some(MaskMode::AllOnes), "total");
}

#[test]
fn schedule_is_visible_in_logs() {
    let ds = tiny_dataset(SceneKind::Sphere, false);
    let out = train(&ds, &tiny_config()).unwrap();
    let logs = &out.logs;
    assert_eq!(logs.len(), 6);
    let t1 = &logs[1];
    assert_eq!((t1.step, t1.stage, t1.mask), (2, 1, None));
    assert_eq!(t1.weighted.bse, 0.0);
    assert_eq!(t1.weighted.phi, 0.0);
    assert_eq!(logs[2].mask, Some(MaskMode::AllOnes));
    assert_eq!(logs[3].mask, Some(MaskMode::AllOnes));
    assert_eq!(logs[4].mask, Some(MaskMode::Dynamic));
    for l in logs {
        assert!(l.loss.is_finite());
        for (_, v) in l.weighted.named() {
            assert!(v >= 0.0);
        }
        assert!((l.weighted.sum() - l.loss).abs() <= 1e-12 * l.loss.max(1.0));
    }
    assert!(logs[5].phi.is_some());
}

#[test]
fn identical_seed_gives_identical_runs() {
    let ds = tiny_dataset(SceneKind::Sphere, false);
    let a = train(&ds, &tiny_config()).unwrap();
    let b = train(&ds, &tiny_config()).unwrap();
    assert_eq!(a.logs, b.logs);
    assert_eq!(a.field.params, b.field.params);
    assert_eq!(a.phi, b.phi);
    let c = train(
        &ds,
        &TrainConfig {
            seed: 9,
            ..tiny_config()
        },
    )
    .unwrap();
    assert_ne!(a.field.params, c.field.params);
}

#[test]
fn zero_photometric_weights_reduce_to_stage_one() {
    let ds = tiny_dataset(SceneKind::Sphere, false);
    let base = TrainConfig {
        lambda3: 0.0,
        lambda4: 0.0,
        ..tiny_config()
    };
    let a = train(&ds, &base).unwrap();
    let b = train(
        &ds,
        &TrainConfig {
            t1: 1,
            t2: 5,
            ..base.clone()
        },
    )
    .unwrap();
    assert_eq!(a.field.params, b.field.params);
    let init = LearnedPhi::init(&ds, PhiMode::Full).params();
    assert_eq!(a.phi, init);
}

#[test]
fn shared_quadrants_have_zero_variance() {
    let ds = tiny_dataset(SceneKind::Sphere, false);
    let out = train(
        &ds,
        &TrainConfig {
            ablation: Ablation::No4qVar,
            ..tiny_config()
        },
    )
    .unwrap();
    assert_eq!(phi_variance(&out.phi.view()), 0.0);
    assert_ne!(out.phi, LearnedPhi::init(&ds, PhiMode::Shared).params());
}

#[test]
fn slope_ablation_learns_the_ratio() {
    let ds = tiny_dataset(SceneKind::Sphere, false);
    let out = train(
        &ds,
        &TrainConfig {
            ablation: Ablation::NoBseF,
            ..tiny_config()
        },
    )
    .unwrap();
    let r = out.d_over_c.unwrap();
    assert!(r.is_finite() && r != 1.0);
}

#[test]
fn dynamic_mask_never_raises_the_loss() {
    let ds = tiny_dataset(SceneKind::Wall, true);
    let t = Trainer::new(&ds, tiny_config()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batch = RayBatch::sample(&ds, 64, 24, &mut rng);
    let mut set = t.settings(Stage::Photometric);
    let open = evaluate(t.field(), t.phi(), &batch, &set, false);
    set.mask = Some(MaskMode::Dynamic);
    let masked = evaluate(t.field(), t.phi(), &batch, &set, false);
    assert!(open.stats.bse_rays > 0);
    assert!(masked.terms.bse <= open.terms.bse);
    assert_eq!(masked.stats.bse_units, open.stats.bse_units);
}

#[test]
fn nan_parameters_abort_with_the_term() {
    let ds = tiny_dataset(SceneKind::Sphere, false);
    let mut t = Trainer::new(&ds, tiny_config()).unwrap();
    let l = t.field.layout();
    t.field.params[l.w2] = f64::NAN;
    match t.step() {
        Err(TrainError::NonFinite { step: 1, term }) => assert!(!term.is_empty()),
        other => panic!("expected abort, got {:?}", other.map(|l| l.step)),
    }
}

#[test]
fn logs_round_trip_as_jsonl() {
    let ds = tiny_dataset(SceneKind::Sphere, false);
    let out = train(&ds, &tiny_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("log.jsonl");
    write_logs(&p, &out.logs).unwrap();
    assert_eq!(read_logs(&p).unwrap(), out.logs);
    let text = std::fs::read_to_string(&p).unwrap();
    assert_eq!(text.lines().count(), 6);
}

#[test]
fn dataset_validation_rejects_missing_images() {
    let mut ds = tiny_dataset(SceneKind::Sphere, false);
    ds.views[1].bse[2].clear();
    assert!(matches!(
        Trainer::new(&ds, tiny_config()),
        Err(TrainError::InvalidDataset(_))
    ));
}
