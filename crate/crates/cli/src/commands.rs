//! Implementations of the subcommands.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mscnn::classes::{COMPONENT_CLASSES, N_COMPONENT, N_SCENE, SCENE_CLASSES};
use mscnn::data::manifest::{save_sample, write_manifest};
use mscnn::data::{generate_corpus, load_dataset, make_blocks, resize_longer_side, Category, DataBlock, RgbImage, Sample, Split};
use mscnn::eval::{fp_table_csv, fp_table_text, render_labelmap, FalsePositiveReport, Palette};
use mscnn::nn::{count_parameters, ArchitectureSpec};
use mscnn::pipeline::{
    bridge_free, evaluate_confusion, evaluate_false_positives, infer, train_component, train_scene, ArchChoice,
    BatchRecord, ComponentMode, InferMode, ModelCheckpoint, Schedule, SceneBlocks, TrainConfig, TrainObserver,
    STACKED_CHANNELS,
};
use mscnn::rng::{purpose, stream};
use mscnn::zoo::{self, ArchName};
use mscnn::{gradcheck, Error, Result};

use crate::config::{KeySpec, RunConfig};

pub const SYNTH_KEYS: &[KeySpec] = &[
    ("count", Some("10")),
    ("size", Some("320x240")),
    ("bridge_fraction", Some("0.3")),
    ("seed", Some("0")),
    ("out", None),
];

const TRAIN_COMMON: &[KeySpec] = &[
    ("manifest", None),
    ("out", None),
    ("arch", Some("resnet23")),
    ("arch_file", None),
    ("batch_size", Some("10")),
    ("weight_decay", Some("default")),
    ("dropout_keep", Some("default")),
    ("seed", Some("0")),
    ("balance", Some("true")),
    ("augment", Some("true")),
    ("crop_size", Some("180")),
    ("snapshot_every", Some("10")),
    ("resize", Some("320")),
];

pub fn train_scene_keys() -> Vec<KeySpec> {
    let mut k = TRAIN_COMMON.to_vec();
    k.push(("schedule", Some("50:1e-4,10:1e-5,5:1e-6")));
    k
}

pub fn train_component_keys() -> Vec<KeySpec> {
    let mut k = TRAIN_COMMON.to_vec();
    k.extend([
        ("schedule", Some("500:1e-4,180:1e-5,20:1e-6")),
        ("mode", Some("scene")),
        ("scene_checkpoint", None),
    ]);
    k
}

pub const INFER_KEYS: &[KeySpec] = &[
    ("checkpoint", None),
    ("scene_checkpoint", None),
    ("image", None),
    ("out", None),
    ("resize", Some("320")),
];

pub const EVAL_KEYS: &[KeySpec] = &[
    ("checkpoint", None),
    ("scene_checkpoint", None),
    ("manifest", None),
    ("out", None),
    ("seed", Some("0")),
    ("split", Some("test")),
    ("resize", Some("320")),
];

pub const FP_KEYS: &[KeySpec] = &[
    ("naive", None),
    ("scene_aware", None),
    ("scene_checkpoint", None),
    ("manifest", None),
    ("out", None),
    ("seed", Some("0")),
    ("split", Some("all")),
    ("resize", Some("320")),
];

pub const PARAMS_KEYS: &[KeySpec] = &[
    ("arch", Some("resnet23")),
    ("arch_file", None),
    ("in_channels", Some("3")),
    ("classes", Some("10")),
];

pub const GRAD_KEYS: &[KeySpec] = &[("seeds", Some("20")), ("seed", Some("0"))];

/// Output directory with the resolved configuration echoed into it.
fn prepare_out(cfg: &RunConfig, subdirs: &[&str]) -> Result<PathBuf> {
    let out = PathBuf::from(cfg.require("out")?);
    for d in subdirs {
        fs::create_dir_all(out.join(d))?;
    }
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.txt"), cfg.to_text())?;
    Ok(out)
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let count: usize = cfg.parse_key("count")?;
    let size = cfg.require("size")?;
    let (w, h) = match size.split_once('x') {
        Some((w, h)) => (w.parse().ok(), h.parse().ok()),
        None => (size.parse().ok(), size.parse().ok()),
    };
    let (w, h): (usize, usize) = w
        .zip(h)
        .filter(|&(w, h)| w >= 8 && h >= 8)
        .ok_or_else(|| Error::Config(format!("bad size `{size}`; expected WxH with sides >= 8")))?;
    let fraction: f64 = cfg.parse_key("bridge_fraction")?;
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("bridge_fraction {fraction} outside [0, 1]")));
    }
    let seed: u64 = cfg.parse_key("seed")?;
    let out = prepare_out(cfg, &[])?;
    let records = generate_corpus(count, w, h, fraction, seed)
        .iter()
        .map(|s| save_sample(s, &out))
        .collect::<Result<Vec<_>>>()?;
    let manifest = out.join("manifest.tsv");
    write_manifest(&manifest, &records)?;
    println!("{}", manifest.display());
    Ok(())
}

fn arch_choice(cfg: &RunConfig) -> Result<ArchChoice> {
    match cfg.optional_input_path("arch_file")? {
        Some(p) => Ok(ArchChoice::Custom(ArchitectureSpec::from_text(&fs::read_to_string(p)?)?)),
        None => Ok(ArchChoice::Zoo(cfg.require("arch")?.parse::<ArchName>()?)),
    }
}

fn train_config(cfg: &RunConfig, in_channels: usize, n_classes: usize) -> Result<TrainConfig> {
    let c = TrainConfig {
        arch: arch_choice(cfg)?,
        in_channels,
        n_classes,
        schedule: Schedule::parse(cfg.require("schedule")?)?,
        batch_size: cfg.parse_key("batch_size")?,
        weight_decay: cfg.parse_opt("weight_decay")?,
        dropout_keep: cfg.parse_opt("dropout_keep")?,
        seed: cfg.parse_key("seed")?,
        balance: cfg.bool_key("balance")?,
        augment: cfg.bool_key("augment")?,
        crop_size: cfg.parse_key("crop_size")?,
        snapshot_every: cfg.parse_key("snapshot_every")?,
    };
    c.resolve_spec()?;
    Ok(c)
}

/// Load a manifest, bringing every sample to the configured longer side.
fn load_samples(cfg: &RunConfig) -> Result<Vec<Sample>> {
    let target: usize = cfg.parse_key("resize")?;
    let samples = load_dataset(&cfg.input_path("manifest")?)?;
    Ok(if target == 0 {
        samples
    } else {
        samples.iter().map(|s| resize_longer_side(s, target)).collect()
    })
}

/// A category with its train and test blocks.
type CategoryBlocks = (Category, Vec<DataBlock>, Vec<DataBlock>);

/// Train and test blocks of every category, drawn from the run seed.
fn split_blocks(samples: Vec<Sample>, seed: u64) -> Result<Vec<CategoryBlocks>> {
    let mut out = Vec::new();
    for (i, cat) in Category::ALL.into_iter().enumerate() {
        let of_cat: Vec<Sample> = samples.iter().filter(|s| s.category == cat).cloned().collect();
        let mut rng = stream(seed, &[purpose::BLOCKS, i as u64]);
        let (train, test) = make_blocks(of_cat, cat, &mut rng)?;
        out.push((cat, train, test));
    }
    Ok(out)
}

/// Writes the training log and snapshot checkpoints.
struct FileObserver {
    log: BufWriter<File>,
    checkpoints: PathBuf,
}

impl TrainObserver for FileObserver {
    fn on_batch(&mut self, record: &BatchRecord) -> Result<()> {
        writeln!(self.log, "{record}")?;
        log::info!("{record}");
        Ok(())
    }

    fn on_snapshot(&mut self, checkpoint: &ModelCheckpoint) -> Result<()> {
        self.log.flush()?;
        checkpoint.save(&self.checkpoints.join(format!("cycle-{:05}.mscn", checkpoint.provenance.cycles)))
    }
}

fn file_observer(out: &Path) -> Result<FileObserver> {
    Ok(FileObserver {
        log: BufWriter::new(File::create(out.join("train.log"))?),
        checkpoints: out.join("checkpoints"),
    })
}

fn finish_training(out: &Path, name: &str, ckpt: &ModelCheckpoint, mut obs: FileObserver) -> Result<()> {
    obs.log.flush()?;
    let path = out.join("checkpoints").join(name);
    ckpt.save(&path)?;
    println!("{}", path.display());
    Ok(())
}

pub fn train_scene_cmd(cfg: &RunConfig) -> Result<()> {
    let config = train_config(cfg, 3, N_SCENE)?;
    cfg.input_path("manifest")?;
    let out = prepare_out(cfg, &["checkpoints"])?;
    let samples = load_samples(cfg)?;
    let mut blocks = SceneBlocks::default();
    for (cat, train, _) in split_blocks(samples, config.seed)? {
        match cat {
            Category::General => blocks.general = train,
            Category::Urban => blocks.urban = train,
            Category::Bridge => blocks.bridge = train,
        }
    }
    let mut obs = file_observer(&out)?;
    let ckpt = train_scene(&config, &blocks, &mut obs)?;
    finish_training(&out, "scene.mscn", &ckpt, obs)
}

pub fn train_component_cmd(cfg: &RunConfig) -> Result<()> {
    let mode = match cfg.require("mode")? {
        "naive" => ComponentMode::Naive,
        "scene" | "scene_aware" | "scene-aware" => ComponentMode::SceneAware,
        m => return Err(Error::Config(format!("unknown mode `{m}` (naive or scene)"))),
    };
    let channels = if mode == ComponentMode::Naive { 3 } else { STACKED_CHANNELS };
    let config = train_config(cfg, channels, N_COMPONENT)?;
    cfg.input_path("manifest")?;
    let scene_path = cfg.optional_input_path("scene_checkpoint")?;
    if mode == ComponentMode::SceneAware && scene_path.is_none() {
        return Err(Error::Config("scene-aware training needs `scene_checkpoint`".into()));
    }
    let out = prepare_out(cfg, &["checkpoints"])?;
    let scene = scene_path.map(|p| ModelCheckpoint::load(&p)).transpose()?;
    let samples = load_samples(cfg)?;
    let bridge = split_blocks(samples, config.seed)?
        .into_iter()
        .find(|b| b.0 == Category::Bridge)
        .map(|b| b.1)
        .unwrap_or_default();
    let mut obs = file_observer(&out)?;
    let ckpt = train_component(&config, &bridge, mode, scene.as_ref(), &mut obs)?;
    let name = if mode == ComponentMode::Naive { "component-naive.mscn" } else { "component-scene-aware.mscn" };
    finish_training(&out, name, &ckpt, obs)
}

/// Inference mode implied by a model's input and output widths.
fn detect_mode(model: &ModelCheckpoint) -> Result<InferMode> {
    match (model.spec.in_channels, model.spec.n_classes) {
        (3, N_SCENE) => Ok(InferMode::Scene),
        (3, N_COMPONENT) => Ok(InferMode::Naive),
        (STACKED_CHANNELS, N_COMPONENT) => Ok(InferMode::SceneAware),
        (c, k) => Err(Error::Config(format!("no inference mode for a {c}-channel {k}-class model"))),
    }
}

fn load_models(cfg: &RunConfig) -> Result<(ModelCheckpoint, Option<ModelCheckpoint>, InferMode)> {
    let model = ModelCheckpoint::load(&cfg.input_path("checkpoint")?)?;
    let mode = detect_mode(&model)?;
    let scene = cfg
        .optional_input_path("scene_checkpoint")?
        .map(|p| ModelCheckpoint::load(&p))
        .transpose()?;
    if mode == InferMode::SceneAware && scene.is_none() {
        return Err(Error::Config("scene-aware model needs `scene_checkpoint`".into()));
    }
    Ok((model, scene, mode))
}

pub fn infer_cmd(cfg: &RunConfig) -> Result<()> {
    let image_path = cfg.input_path("image")?;
    let (model, scene, mode) = load_models(cfg)?;
    let out = prepare_out(cfg, &["renders"])?;
    let target: usize = cfg.parse_key("resize")?;
    let mut rgb = RgbImage::load_png(&image_path)?;
    if target > 0 {
        let (w, h) = mscnn::data::sample::longer_side_extents(rgb.width(), rgb.height(), target);
        rgb = rgb.resize_bilinear(w, h);
    }
    let pred = infer(&model, scene.as_ref(), &rgb, mode)?;
    let stem = image_path.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
    let rendered = out.join("renders").join(format!("{stem}.png"));
    render_labelmap(&pred.labels, &Palette::for_classes(model.spec.n_classes)?).save_png(&rendered)?;
    pred.labels.save_png(&out.join("renders").join(format!("{stem}_labels.png")))?;
    println!("{}", rendered.display());
    Ok(())
}

/// Samples of the requested split: `all`, or the train/test blocks drawn
/// from `seed` exactly as training does.
fn select_split(cfg: &RunConfig, samples: Vec<Sample>) -> Result<Vec<Sample>> {
    let seed: u64 = cfg.parse_key("seed")?;
    let want = match cfg.require("split")? {
        "all" => return Ok(samples),
        "train" => Split::Train,
        "test" => Split::Test,
        s => return Err(Error::Config(format!("unknown split `{s}` (train, test, all)"))),
    };
    Ok(split_blocks(samples, seed)?
        .into_iter()
        .flat_map(|(_, train, test)| if want == Split::Train { train } else { test })
        .flat_map(|b| b.samples)
        .collect())
}

pub fn eval_cmd(cfg: &RunConfig) -> Result<()> {
    cfg.input_path("manifest")?;
    cfg.require("split")?;
    let (model, scene, mode) = load_models(cfg)?;
    let out = prepare_out(cfg, &["reports"])?;
    let mut samples = select_split(cfg, load_samples(cfg)?)?;
    let names: &[&str] = if mode == InferMode::Scene {
        &SCENE_CLASSES
    } else {
        samples.retain(|s| s.component.is_some());
        &COMPONENT_CLASSES
    };
    if samples.is_empty() {
        return Err(Error::Data("no samples to evaluate".into()));
    }
    let cm = evaluate_confusion(&model, scene.as_ref(), mode, &samples)?;
    let text = cm.to_text(names);
    fs::write(out.join("reports").join("eval.txt"), &text)?;
    fs::write(out.join("reports").join("eval.csv"), cm.to_csv(names))?;
    print!("{text}");
    Ok(())
}

fn path_list(cfg: &RunConfig, key: &str) -> Result<Vec<PathBuf>> {
    let list: Vec<PathBuf> = cfg.require(key)?.split(',').map(|p| PathBuf::from(p.trim())).collect();
    for p in &list {
        if !p.exists() {
            return Err(Error::Config(format!("`{key}`: {} does not exist", p.display())));
        }
    }
    Ok(list)
}

pub fn fp_test_cmd(cfg: &RunConfig) -> Result<()> {
    cfg.input_path("manifest")?;
    let naive_path = cfg.input_path("naive")?;
    let aware_paths = path_list(cfg, "scene_aware")?;
    let scene_paths = path_list(cfg, "scene_checkpoint")?;
    if scene_paths.len() != 1 && scene_paths.len() != aware_paths.len() {
        return Err(Error::Config("give one scene checkpoint, or one per scene-aware model".into()));
    }
    let out = prepare_out(cfg, &["reports"])?;
    let samples = select_split(cfg, load_samples(cfg)?)?;
    let free = bridge_free(&samples);
    if free.is_empty() {
        return Err(Error::Data("no bridge-free samples to evaluate".into()));
    }
    let naive = ModelCheckpoint::load(&naive_path)?;
    if detect_mode(&naive)? != InferMode::Naive {
        return Err(Error::Config("`naive` must be a 3-channel component model".into()));
    }
    let mut rows: Vec<(String, FalsePositiveReport)> =
        vec![("naive".into(), evaluate_false_positives(&naive, None, InferMode::Naive, &free)?)];
    for (i, p) in aware_paths.iter().enumerate() {
        let model = ModelCheckpoint::load(p)?;
        if detect_mode(&model)? != InferMode::SceneAware {
            return Err(Error::Config(format!("{} is not a scene-aware component model", p.display())));
        }
        let scene = ModelCheckpoint::load(&scene_paths[i.min(scene_paths.len() - 1)])?;
        let label = if aware_paths.len() == 1 { "scene_aware".to_string() } else { format!("scene_aware_{i}") };
        rows.push((label, evaluate_false_positives(&model, Some(&scene), InferMode::SceneAware, &free)?));
    }
    let table: Vec<(&str, &FalsePositiveReport)> = rows.iter().map(|(l, r)| (l.as_str(), r)).collect();
    let text = fp_table_text(&table);
    fs::write(out.join("reports").join("fp.txt"), &text)?;
    fs::write(out.join("reports").join("fp.csv"), fp_table_csv(&table))?;
    print!("{text}");
    Ok(())
}

pub fn params_cmd(cfg: &RunConfig) -> Result<()> {
    let in_channels: usize = cfg.parse_key("in_channels")?;
    let classes: usize = cfg.parse_key("classes")?;
    let (spec, name) = match arch_choice(cfg)? {
        ArchChoice::Zoo(name) => (zoo::build(name, in_channels, classes)?, Some(name)),
        ArchChoice::Custom(spec) => (spec, None),
    };
    println!("{}", count_parameters(&spec));
    if let Some(note) = name.and_then(|n| zoo::count_note(n, in_channels, classes)) {
        println!("{note}");
    }
    Ok(())
}

/// Returns whether every check passed.
pub fn grad_check_cmd(cfg: &RunConfig) -> Result<bool> {
    let n: u64 = cfg.parse_key("seeds")?;
    let first: u64 = cfg.parse_key("seed")?;
    let checks = gradcheck::run_suite(first..first + n)?;
    let mut names: Vec<&str> = Vec::new();
    for c in &checks {
        if !names.contains(&c.name.as_str()) {
            names.push(&c.name);
        }
    }
    let mut failed = 0;
    for name in names {
        let of: Vec<_> = checks.iter().filter(|c| c.name == name).collect();
        let worst = of.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
        let ok = of.iter().all(|c| c.passed());
        failed += usize::from(!ok);
        println!(
            "{} {name:<28} max rel err {worst:.2e} over {} seeds",
            if ok { "PASS" } else { "FAIL" },
            of.len()
        );
    }
    if failed > 0 {
        eprintln!("{failed} gradient checks failed");
    }
    Ok(failed == 0)
}
