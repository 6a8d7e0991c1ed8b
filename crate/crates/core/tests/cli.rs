use std::path::Path;

use nfsem::cli::commands::{
    cmd_baseline, cmd_eval, cmd_mesh, cmd_simulate, cmd_train, heightfield_mesh, load_checkpoint, BaselineReport,
    MESH_OBJ, MESH_PLY, MESH_SIDECAR,
};
use nfsem::cli::{
    decode_map, encode_map, load_dataset, main_with_args, read_map, save_dataset, write_map, CliError,
    DatasetManifest, MapHeader, Preset, RunConfig, CONFIG_FILE, DIGEST_FILE, FIELD_FILE, LOG_FILE, MANIFEST_FILE,
    PHI_FILE,
};
use nfsem::extract::EvalReport;
use nfsem::simulator::{simulate, SceneKind, SimConfig};
use nfsem::trainer::{read_logs, Ablation};

const SMALL_SIM: &str = "width = 32\nheight = 24\npixel_size = 0.03\nlight_samples = 4\n";

const TINY_TRAIN: &str = r#"
preset = "desk"
mesh_resolution = 16
eval_samples = 32
t1 = 4
t2 = 8
t3 = 12
rays_per_batch = 16
samples_per_ray = 16
field.hidden = 16
field.grid.levels = 4
field.grid.log2_table_size = 10
"#;

fn small_dataset(dir: &Path, scene: &str) {
    let cfg = dir.join("sim.toml");
    std::fs::write(&cfg, SMALL_SIM).unwrap();
    cmd_simulate(scene, Some(5), Some(7), Some(&cfg), &dir.join("data")).unwrap();
}

#[test]
fn map_encoding_round_trips_including_nan() {
    let h = MapHeader::new(2, 3, 2);
    let data: Vec<f32> = vec![0.0, 1.5, -2.25, f32::NAN, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0, 13.0, f32::INFINITY];
    let bytes = encode_map(&h, &data).unwrap();
    let (h2, back) = decode_map(&bytes).unwrap();
    assert_eq!(h, h2);
    assert_eq!(data.len(), back.len());
    for (a, b) in data.iter().zip(&back) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn map_reader_rejects_wrong_shape_and_garbage() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("m.map");
    write_map(&p, &MapHeader::new(2, 2, 1), &[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(read_map(&p, 2, 2, 1).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
    assert!(matches!(read_map(&p, 2, 3, 1), Err(CliError::Format(_))));
    std::fs::write(&p, b"not a map").unwrap();
    assert!(read_map(&p, 2, 2, 1).is_err());
    assert!(encode_map(&MapHeader::new(2, 2, 1), &[1.0]).is_err());
}

#[test]
fn dataset_round_trips_through_disk() {
    let cfg = SimConfig {
        scene: SceneKind::Sphere,
        views: 5,
        width: 24,
        height: 16,
        pixel_size: 0.04,
        light_samples: 4,
        ..SimConfig::default()
    };
    let ds = simulate(&cfg);
    let tmp = tempfile::tempdir().unwrap();
    save_dataset(&ds, tmp.path()).unwrap();
    let back = load_dataset(tmp.path()).unwrap();
    assert_eq!(back.views.len(), 5);
    assert_eq!(back.scene_scale, ds.scene_scale);
    assert_eq!(back.phi_gt, ds.phi_gt);
    for (a, b) in ds.views.iter().zip(&back.views) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.camera, b.camera);
        assert_eq!(a.bse, b.bse);
        let same = |x: &[f32], y: &[f32]| x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits());
        assert!(same(&a.coarse_depth, &b.coarse_depth));
        assert!(same(&a.confidence, &b.confidence));
        let (ga, gb) = (a.ground_truth.as_ref().unwrap(), b.ground_truth.as_ref().unwrap());
        assert!(same(&ga.depth, &gb.depth));
        assert_eq!(ga.normal, gb.normal);
        for q in 0..4 {
            assert_eq!(ga.shadow[q], gb.shadow[q]);
        }
    }
}

fn edit_manifest(dir: &Path, f: impl FnOnce(&mut DatasetManifest)) {
    let p = dir.join(MANIFEST_FILE);
    let mut m = DatasetManifest::parse(&std::fs::read_to_string(&p).unwrap()).unwrap();
    f(&mut m);
    std::fs::write(&p, serde_json::to_string(&m).unwrap()).unwrap();
}

#[test]
fn dataset_loader_rejects_broken_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path(), "plane");
    let data = tmp.path().join("data");
    assert!(load_dataset(&data).is_ok());

    // non-rigid pose
    let backup = std::fs::read_to_string(data.join(MANIFEST_FILE)).unwrap();
    edit_manifest(&data, |m| m.views[0].pose[0][0] = 1.5);
    let err = load_dataset(&data).unwrap_err();
    assert!(err.to_string().contains("rigid"), "{err}");
    std::fs::write(data.join(MANIFEST_FILE), &backup).unwrap();

    // missing file
    edit_manifest(&data, |m| m.views[1].bse[2] = "gone.png".into());
    assert!(load_dataset(&data).unwrap_err().to_string().contains("missing file"));
    std::fs::write(data.join(MANIFEST_FILE), &backup).unwrap();

    // size mismatch between manifest and images
    edit_manifest(&data, |m| m.width = 31);
    assert!(load_dataset(&data).is_err());
    std::fs::write(data.join(MANIFEST_FILE), &backup).unwrap();

    // unknown version and unknown keys
    let bumped = backup.replacen("\"version\": 1", "\"version\": 9", 1);
    std::fs::write(data.join(MANIFEST_FILE), bumped).unwrap();
    assert!(matches!(load_dataset(&data), Err(CliError::Format(_))));
    let extra = backup.replacen("{", "{\"colour\": 1,", 1);
    std::fs::write(data.join(MANIFEST_FILE), extra).unwrap();
    assert!(load_dataset(&data).is_err());
}

#[test]
fn run_config_merges_onto_preset_and_round_trips() {
    let cfg = RunConfig::parse(TINY_TRAIN).unwrap();
    assert_eq!(cfg.preset, Preset::Desk);
    assert_eq!(cfg.train.t3, 12);
    assert_eq!(cfg.train.field.grid.levels, 4);
    // untouched keys keep the preset's values
    assert_eq!(cfg.train.field.grid.growth, 1.3);
    assert_eq!(cfg.train.lambda3, 0.005);
    assert_eq!(cfg.mesh_resolution, 16);
    let back = RunConfig::parse(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(back, cfg);

    let empty = RunConfig::parse("").unwrap();
    assert_eq!(empty, RunConfig::default());
}

#[test]
fn run_config_rejects_unknown_and_invalid_keys() {
    for bad in [
        "lamda1 = 0.1",
        "field.grid.colour = 3",
        "t1 = 10\nt2 = 5\nt3 = 20",
        "preset = \"huge\"",
        "mesh_resolution = 2",
        "learning_rate = -1.0",
        "t1 = [",
    ] {
        assert!(matches!(RunConfig::parse(bad), Err(CliError::Config(_))), "{bad}");
    }
}

#[test]
fn argument_errors_exit_nonzero() {
    assert_eq!(main_with_args(["nfsem"]), 2);
    assert_eq!(main_with_args(["nfsem", "bogus"]), 2);
    assert_eq!(main_with_args(["nfsem", "mesh", "--checkpoint", "x"]), 2);
    assert_eq!(main_with_args(["nfsem", "--help"]), 0);
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();
    assert_eq!(main_with_args(["nfsem", "simulate", "--scene", "teapot", "--out", out]), 1);
    assert_eq!(main_with_args(["nfsem", "simulate", "--scene", "plane", "--views", "4", "--out", out]), 1);
    assert!(!Path::new(out).exists(), "nothing is written when validation fails");
    assert_eq!(main_with_args(["nfsem", "train", "--dataset", "/nonexistent", "--out", out]), 1);
    assert_eq!(main_with_args(["nfsem", "train", "--ablation", "no_such", "--out", out]), 1);
}

#[test]
fn train_eval_mesh_pipeline_writes_every_output() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path(), "sphere");
    let data = tmp.path().join("data");
    let cfg = tmp.path().join("train.toml");
    std::fs::write(&cfg, TINY_TRAIN).unwrap();
    let ckpt = tmp.path().join("ckpt");
    cmd_train(Some(data.clone()), Some(&cfg), Some(3), None, Some(ckpt.clone())).unwrap();
    for f in [FIELD_FILE, PHI_FILE, LOG_FILE, CONFIG_FILE, DIGEST_FILE] {
        assert!(ckpt.join(f).is_file(), "{f}");
    }
    let logs = read_logs(&ckpt.join(LOG_FILE)).unwrap();
    assert_eq!(logs.len(), 12);
    let loaded = load_checkpoint(&ckpt).unwrap();
    assert_eq!(loaded.meta.steps, 12);
    assert_eq!(loaded.config.as_ref().unwrap().train.seed, 3);

    let report_path = tmp.path().join("eval/report.json");
    let report = cmd_eval(Some(&ckpt), &data, false, None, &report_path).unwrap();
    let back: EvalReport = serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(back.methods.len(), report.methods.len());
    assert!(report.method("coarse_input").is_some());

    let mesh_dir = tmp.path().join("mesh");
    cmd_mesh(&ckpt, 16, &mesh_dir).unwrap();
    for f in [MESH_OBJ, MESH_PLY, MESH_SIDECAR] {
        assert!(mesh_dir.join(f).is_file(), "{f}");
    }
    assert!(std::fs::read_dir(&mesh_dir)
        .unwrap()
        .all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".partial")));

    // a tampered checkpoint is refused
    let mut bytes = std::fs::read(ckpt.join(FIELD_FILE)).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    std::fs::write(ckpt.join(FIELD_FILE), bytes).unwrap();
    assert!(matches!(load_checkpoint(&ckpt), Err(CliError::Format(_))));
}

#[test]
fn train_is_reproducible_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path(), "plane");
    let data = tmp.path().join("data");
    let cfg = tmp.path().join("train.toml");
    std::fs::write(&cfg, TINY_TRAIN).unwrap();
    let a = cmd_train(Some(data.clone()), Some(&cfg), Some(1), Some("no_4q_var"), Some(tmp.path().join("a"))).unwrap();
    let b = cmd_train(Some(data), Some(&cfg), Some(1), Some("no-4q-var"), Some(tmp.path().join("b"))).unwrap();
    assert_eq!(
        std::fs::read(a.join(FIELD_FILE)).unwrap(),
        std::fs::read(b.join(FIELD_FILE)).unwrap()
    );
    assert_eq!(load_checkpoint(&a).unwrap().meta.ablation, Ablation::No4qVar);
}

#[test]
fn ground_truth_self_eval_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path(), "pyramid");
    let out = tmp.path().join("gt.json");
    let code = main_with_args([
        "nfsem",
        "eval",
        "--ground-truth",
        "--dataset",
        tmp.path().join("data").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let report: EvalReport = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    let gt = &report.methods[0];
    assert_eq!(gt.e_depth, 0.0);
    assert_eq!(gt.e_normal, 0.0);
    assert_eq!(gt.s_shadow, Some(100.0));
}

#[test]
fn baseline_recovers_a_flat_plane() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path(), "plane");
    let out = tmp.path().join("ps");
    // view 1 of the five-view rig looks straight down
    let r: BaselineReport = cmd_baseline(&tmp.path().join("data"), 1, &out).unwrap();
    assert!(r.view.contains("tx+00_ty+00"), "{}", r.view);
    assert!(r.valid_pixels > 0);
    assert!(r.rmse_um.unwrap() < 1.0, "{r:?}");
    let h = read_map(&out.join("ps_height.map"), 24, 32, 1).unwrap();
    assert_eq!(h.len(), 32 * 24);
    assert!(out.join("ps_height.obj").is_file());
    assert!(cmd_baseline(&tmp.path().join("data"), 5, &out).is_err());
}

#[test]
fn heightfield_mesh_skips_invalid_cells() {
    let nan = f64::NAN;
    let h = [0.0, 0.0, 0.0, 0.0, 1.0, nan];
    let m = heightfield_mesh(&h, 3, 2, 0.5, 50.0);
    assert_eq!(m.vertices.len(), 5);
    assert_eq!(m.triangles.len(), 2);
    assert!(m.validate().is_ok());
}
