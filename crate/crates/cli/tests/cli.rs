//! End-to-end checks of the `geovit` binary: exit codes, determinism and
//! the adapt/train/infer/eval/viz pipeline.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn geovit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geovit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = geovit(args);
    assert!(
        out.status.success(),
        "geovit {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn tiny_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("train.cfg");
    let base = "\
task=flow
image_h=32
image_w=48
patch=16
embed_dim=8
depth=1
num_heads=2
mlp_ratio=2.0
hidden_dim=8
motion_dim=8
context_dim=16
flow_mid=8
mask_mid=8
iters=2
steps=2
batch=1
peak_lr=1e-3
samples=2
max_disp=2.0
seed=3
";
    std::fs::write(&path, format!("{base}{extra}")).unwrap();
    path
}

#[test]
fn usage_errors_exit_with_one() {
    let out = geovit(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(1));
    let out = geovit(&["infer", "--task", "flow"]);
    assert_eq!(out.status.code(), Some(1), "missing required args");
    let out = geovit(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn data_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("bogus.gvck");
    std::fs::write(&bogus, b"XXXXnot a checkpoint").unwrap();
    let out = geovit(&[
        "infer",
        "--checkpoint",
        bogus.to_str().unwrap(),
        "--task",
        "flow",
        "--i1",
        "a.png",
        "--i2",
        "b.png",
        "--output",
        "out.flo",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn make_data_is_deterministic_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&[
            "make-data",
            "--kind",
            "flow",
            "--h",
            "32",
            "--w",
            "48",
            "--count",
            "2",
            "--seed",
            "11",
            "--out",
            out.to_str().unwrap(),
        ]);
    }
    for name in ["000_img1.png", "000_img2.png", "000_flow.flo", "001_flow.flo"] {
        let x = std::fs::read(a.join(name)).unwrap();
        let y = std::fs::read(b.join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between identical runs");
    }
}

#[test]
fn eval_on_identical_directories_reports_zero() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt");
    ok(&[
        "make-data",
        "--kind",
        "flow",
        "--h",
        "32",
        "--w",
        "32",
        "--count",
        "2",
        "--seed",
        "5",
        "--out",
        gt.to_str().unwrap(),
    ]);
    let stdout = ok(&[
        "eval",
        "--task",
        "flow",
        "--pred",
        gt.to_str().unwrap(),
        "--gt",
        gt.to_str().unwrap(),
    ]);
    assert!(stdout.contains("epe 0.000000"), "{stdout}");
    assert!(stdout.contains("f1_all 0.000000"), "{stdout}");
}

#[test]
fn train_infer_eval_viz_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let ckpt = dir.path().join("model.gvck");
    let curve = dir.path().join("curve.txt");
    ok(&[
        "train-toy",
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        ckpt.to_str().unwrap(),
        "--curve",
        curve.to_str().unwrap(),
    ]);
    let curve_text = std::fs::read_to_string(&curve).unwrap();
    assert_eq!(curve_text.lines().count(), 2, "two steps, two records");

    // data to run on
    let data = dir.path().join("data");
    ok(&[
        "make-data",
        "--kind",
        "flow",
        "--h",
        "32",
        "--w",
        "48",
        "--count",
        "1",
        "--seed",
        "9",
        "--out",
        data.to_str().unwrap(),
    ]);
    let pred = dir.path().join("pred");
    std::fs::create_dir_all(&pred).unwrap();
    let pred_flo = pred.join("000_flow.flo");
    ok(&[
        "infer",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--task",
        "flow",
        "--i1",
        data.join("000_img1.png").to_str().unwrap(),
        "--i2",
        data.join("000_img2.png").to_str().unwrap(),
        "--iters",
        "2",
        "--output",
        pred_flo.to_str().unwrap(),
    ]);
    let stdout = ok(&[
        "eval",
        "--task",
        "flow",
        "--pred",
        pred.to_str().unwrap(),
        "--gt",
        data.to_str().unwrap(),
    ]);
    assert!(stdout.starts_with("epe "), "{stdout}");

    let png = dir.path().join("flow.png");
    ok(&[
        "viz",
        "--input",
        pred_flo.to_str().unwrap(),
        "--output",
        png.to_str().unwrap(),
    ]);
    assert!(png.exists());

    // tiled inference with a single-tile plan matches the untiled output
    let tiled_flo = dir.path().join("tiled.flo");
    ok(&[
        "infer",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--task",
        "flow",
        "--i1",
        data.join("000_img1.png").to_str().unwrap(),
        "--i2",
        data.join("000_img2.png").to_str().unwrap(),
        "--iters",
        "2",
        "--tiled",
        "--stride",
        "16",
        "--output",
        tiled_flo.to_str().unwrap(),
    ]);
    assert_eq!(
        std::fs::read(&pred_flo).unwrap(),
        std::fs::read(&tiled_flo).unwrap(),
        "single-tile inference differs from untiled"
    );
}

#[test]
fn infer_defaults_to_six_iterations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let ckpt = dir.path().join("model.gvck");
    ok(&[
        "train-toy",
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        ckpt.to_str().unwrap(),
    ]);
    let data = dir.path().join("data");
    ok(&[
        "make-data",
        "--kind",
        "flow",
        "--h",
        "32",
        "--w",
        "48",
        "--count",
        "1",
        "--seed",
        "2",
        "--out",
        data.to_str().unwrap(),
    ]);
    let run = |args: &[&str], out: &Path| {
        let mut full = vec![
            "infer",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--task",
            "flow",
            "--i1",
            data.join("000_img1.png").to_str().unwrap(),
            "--i2",
            data.join("000_img2.png").to_str().unwrap(),
            "--output",
            out.to_str().unwrap(),
        ];
        full.extend_from_slice(args);
        ok(&full);
    };
    let default_out = dir.path().join("default.flo");
    let six_out = dir.path().join("six.flo");
    let one_out = dir.path().join("one.flo");
    run(&[], &default_out);
    run(&["--iters", "6"], &six_out);
    run(&["--iters", "1"], &one_out);
    assert_eq!(
        std::fs::read(&default_out).unwrap(),
        std::fs::read(&six_out).unwrap(),
        "default iteration count is 6"
    );
    assert_ne!(
        std::fs::read(&default_out).unwrap(),
        std::fs::read(&one_out).unwrap()
    );
}

#[test]
fn adapt_produces_a_manifest_verified_encoder() {
    use geovit_core::io::checkpoint::{load_encoder, write_checkpoint_file};
    use geovit_core::vit::{synthetic_pretrained_checkpoint, ViTConfig};
    use rand::SeedableRng;

    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("pretrained.gvck");
    let cfg = ViTConfig {
        image_h: 32,
        image_w: 48,
        patch: 16,
        pretrain_frames: 8,
        temporal_patch: 2,
        embed_dim: 8,
        depth: 2,
        num_heads: 2,
        mlp_ratio: 2.0,
        layernorm_eps: 1e-6,
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
    let ckpt = synthetic_pretrained_checkpoint(&cfg, (4, 4), &mut rng);
    let params: Vec<_> = ckpt
        .params
        .iter()
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let mut meta = std::collections::BTreeMap::new();
    meta.insert("num_heads".to_string(), "2".to_string());
    meta.insert("mlp_ratio".to_string(), "2.0".to_string());
    meta.insert("pretrain_frames".to_string(), "8".to_string());
    write_checkpoint_file(&raw, &params, &meta).unwrap();

    let adapted = dir.path().join("adapted.gvck");
    let stdout = ok(&[
        "adapt",
        "--input",
        raw.to_str().unwrap(),
        "--image-h",
        "32",
        "--image-w",
        "48",
        "--output",
        adapted.to_str().unwrap(),
    ]);
    assert!(stdout.contains("grid 2x3"), "{stdout}");

    let (loaded_cfg, weights, _norm) = load_encoder(&adapted).unwrap();
    assert_eq!(loaded_cfg.grid(), (2, 3));
    assert_eq!(weights.pos_spatial.shape(), &[6, 8]);
    assert_eq!(weights.patch_w.shape(), &[8, 3, 16, 16]);
    assert_eq!(weights.blocks.len(), 2);

    // the adapted encoder can seed toy training
    let cfg_file = tiny_config(dir.path(), "depth=2\n");
    let model_out = dir.path().join("from_adapted.gvck");
    ok(&[
        "train-toy",
        "--config",
        cfg_file.to_str().unwrap(),
        "--init-encoder",
        adapted.to_str().unwrap(),
        "--output",
        model_out.to_str().unwrap(),
    ]);
    assert!(model_out.exists());
}

#[test]
fn stereo_and_depth_inference_write_pfm() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "task=stereo\n");
    let ckpt = dir.path().join("stereo.gvck");
    ok(&[
        "train-toy",
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        ckpt.to_str().unwrap(),
    ]);
    let data = dir.path().join("stereo_data");
    ok(&[
        "make-data",
        "--kind",
        "stereo",
        "--h",
        "32",
        "--w",
        "48",
        "--count",
        "1",
        "--seed",
        "4",
        "--out",
        data.to_str().unwrap(),
    ]);
    let out_pfm = dir.path().join("pred.pfm");
    ok(&[
        "infer",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--task",
        "stereo",
        "--i1",
        data.join("000_img1.png").to_str().unwrap(),
        "--i2",
        data.join("000_img2.png").to_str().unwrap(),
        "--iters",
        "2",
        "--output",
        out_pfm.to_str().unwrap(),
    ]);
    assert!(out_pfm.exists());

    // depth: needs cameras from a depth dataset
    let ddata = dir.path().join("depth_data");
    ok(&[
        "make-data",
        "--kind",
        "depth",
        "--h",
        "32",
        "--w",
        "48",
        "--count",
        "1",
        "--seed",
        "6",
        "--out",
        ddata.to_str().unwrap(),
    ]);
    let depth_pfm = dir.path().join("depth.pfm");
    ok(&[
        "infer",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--task",
        "depth",
        "--i1",
        ddata.join("000_img1.png").to_str().unwrap(),
        "--i2",
        ddata.join("000_img2.png").to_str().unwrap(),
        "--cams",
        ddata.join("000.cams").to_str().unwrap(),
        "--output",
        depth_pfm.to_str().unwrap(),
    ]);
    assert!(depth_pfm.exists());
}
