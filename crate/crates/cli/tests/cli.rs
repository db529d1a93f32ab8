use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mscnn::classes::scene;
use mscnn::data::{load_dataset, read_manifest, LabelMap, RgbImage};
use mscnn::eval::{parse_rendered, Palette};
use mscnn::nn::{ArchitectureSpec, LayerSpec};
use mscnn::pipeline::BatchRecord;

fn mscnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mscnn"))
        .args(args)
        .output()
        .expect("spawn mscnn")
}

fn ok(args: &[&str]) -> String {
    let out = mscnn(args);
    assert!(
        out.status.success(),
        "mscnn {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn tiny_arch(in_channels: usize, classes: usize) -> String {
    ArchitectureSpec {
        name: "tiny".into(),
        in_channels,
        n_classes: classes,
        batch_size: 10,
        weight_decay: 1e-4,
        pyramid_levels: 2,
        shared: vec![LayerSpec::conv("Conv0", 3, 4), LayerSpec::maxpool("Maxpool0", 2)],
        head: vec![LayerSpec::fcl("FCL0", 8), LayerSpec::logits("FCL1", classes)],
    }
    .to_text()
}

#[test]
fn params_prints_zoo_counts() {
    let out = ok(&["params", "--arch", "resnet23"]);
    assert_eq!(out.lines().next(), Some("2403520"));
    let out = ok(&["params", "--arch", "farabet"]);
    assert_eq!(out.lines().next(), Some("1652016"));
    let out = ok(&["params", "--arch", "resnet45"]);
    assert_eq!(out.lines().next(), Some("863536"));
    assert!(out.lines().count() > 1, "resnet45 count should carry a note");
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["synth", "--out", &s(d), "--seed", "7", "--set", "count=10", "--set", "size=40x32"]);
    }
    let records = read_manifest(&a.join("manifest.tsv")).unwrap();
    assert_eq!(records.len(), 10);
    assert_eq!(fs::read(a.join("manifest.tsv")).unwrap(), fs::read(b.join("manifest.tsv")).unwrap());
    for r in &records {
        assert_eq!(fs::read(a.join(&r.rgb)).unwrap(), fs::read(b.join(&r.rgb)).unwrap());
    }
}

#[test]
fn synth_without_bridges_has_no_bridge_pixels() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--out", &s(dir.path()), "--set", "count=6", "--set", "size=40", "--set", "bridge_fraction=0"]);
    for sample in load_dataset(&dir.path().join("manifest.tsv")).unwrap() {
        assert!(!sample.scene.data().contains(&scene::BRIDGES), "{}", sample.id);
    }
}

#[test]
fn unknown_key_fails_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = mscnn(&["synth", "--out", &s(&out_dir), "--set", "cuont=3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cuont"));
    assert!(!out_dir.exists());
}

#[test]
fn error_kinds_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mscnn(&["params", "--arch", "alexnet"]).status.code(), Some(2));

    let bad = dir.path().join("bad.mscn");
    fs::write(&bad, b"not a checkpoint").unwrap();
    let img = dir.path().join("img.png");
    RgbImage::filled(16, 16, [1, 2, 3]).save_png(&img).unwrap();
    let out_dir = dir.path().join("out");
    let out = mscnn(&[
        "infer", "--out", &s(&out_dir), "--set", &format!("checkpoint={}", s(&bad)),
        "--set", &format!("image={}", s(&img)),
    ]);
    assert_eq!(out.status.code(), Some(5));
}

/// Synthesize, train a tiny scene model and both component models, then
/// run inference, evaluation and the false-positive comparison.
#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("data");
    ok(&["synth", "--out", &s(&data), "--set", "count=12", "--set", "size=32x24", "--set", "bridge_fraction=0.5"]);
    let manifest = format!("manifest={}", s(&data.join("manifest.tsv")));
    let arch = |name: &str, c: usize, k: usize| {
        let p = root.join(name);
        fs::write(&p, tiny_arch(c, k)).unwrap();
        format!("arch_file={}", s(&p))
    };
    let common = ["--set", "augment=false", "--set", "resize=0", "--set", "batch_size=10"];

    let scene_dir = root.join("scene");
    let scene_out = s(&scene_dir);
    let scene_arch = arch("scene.arch", 3, 10);
    let mut args = vec!["train-scene", "--out", &scene_out, "--set", &manifest, "--set", &scene_arch];
    args.extend(common);
    args.extend(["--set", "schedule=2:1e-3,1:1e-4", "--set", "snapshot_every=1"]);
    ok(&args);
    let scene_ckpt = scene_dir.join("checkpoints/scene.mscn");
    assert!(scene_ckpt.exists());
    assert!(scene_dir.join("checkpoints/cycle-00001.mscn").exists());
    let log = fs::read_to_string(scene_dir.join("train.log")).unwrap();
    let records: Vec<BatchRecord> = log.lines().map(|l| BatchRecord::parse(l).unwrap()).collect();
    assert_eq!(records.first().unwrap().lr, 1e-3);
    assert_eq!(records.last().unwrap().lr, 1e-4);
    assert_eq!(records.last().unwrap().cycle, 2);

    let scene_ref = format!("scene_checkpoint={}", s(&scene_ckpt));
    let naive_dir = s(&root.join("naive"));
    let naive_arch = arch("naive.arch", 3, 5);
    let mut args = vec!["train-component", "--mode", "naive", "--out", &naive_dir, "--set", &manifest, "--set", &naive_arch];
    args.extend(common);
    args.extend(["--set", "schedule=1:1e-3"]);
    ok(&args);

    let aware_dir = s(&root.join("aware"));
    let aware_arch = arch("aware.arch", 12, 5);
    let mut args = vec![
        "train-component", "--mode", "scene", "--out", &aware_dir, "--set", &manifest, "--set", &aware_arch,
        "--set", &scene_ref,
    ];
    args.extend(common);
    args.extend(["--set", "schedule=1:1e-3"]);
    ok(&args);
    let naive_ckpt = root.join("naive/checkpoints/component-naive.mscn");
    let aware_ckpt = root.join("aware/checkpoints/component-scene-aware.mscn");

    // Inference renders a palette image that inverts to the raw label map.
    let records = read_manifest(&data.join("manifest.tsv")).unwrap();
    let image = data.join(&records[0].rgb);
    let infer_dir = root.join("infer");
    ok(&[
        "infer", "--out", &s(&infer_dir), "--set", &format!("checkpoint={}", s(&aware_ckpt)),
        "--set", &scene_ref, "--set", &format!("image={}", s(&image)), "--set", "resize=0",
    ]);
    let stem = image.file_stem().unwrap().to_string_lossy().into_owned();
    let rendered = RgbImage::load_png(&infer_dir.join(format!("renders/{stem}.png"))).unwrap();
    let raw = LabelMap::load_png(&infer_dir.join(format!("renders/{stem}_labels.png"))).unwrap();
    assert_eq!((raw.width(), raw.height()), (32, 24));
    assert_eq!(parse_rendered(&rendered, &Palette::component()).unwrap(), raw);

    let eval_dir = root.join("eval");
    let out = ok(&[
        "eval", "--out", &s(&eval_dir), "--set", &format!("checkpoint={}", s(&scene_ckpt)), "--set", &manifest,
        "--set", "split=all", "--set", "resize=0",
    ]);
    assert!(out.starts_with("pixel accuracy"));
    assert!(eval_dir.join("reports/eval.csv").exists());

    let fp_dir = root.join("fp");
    ok(&[
        "fp-test", "--out", &s(&fp_dir), "--set", &format!("naive={}", s(&naive_ckpt)),
        "--set", &format!("scene_aware={}", s(&aware_ckpt)), "--set", &scene_ref, "--set", &manifest,
        "--set", "resize=0",
    ]);
    let csv = fs::read_to_string(fp_dir.join("reports/fp.csv")).unwrap();
    let means: Vec<&str> = csv.lines().filter(|l| l.contains(",mean,")).collect();
    assert_eq!(means.len(), 2, "{csv}");
    assert!(means[0].starts_with("naive,") && means[1].starts_with("scene_aware,"));
}
