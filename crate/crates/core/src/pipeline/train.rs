//! Training loops of the scene classifier and the two component classifiers.

use std::fmt;

use super::checkpoint::{ModelCheckpoint, Provenance};
use super::config::TrainConfig;
use super::infer::{model_input, STACKED_CHANNELS};
use crate::classes::{N_COMPONENT, N_SCENE};
use crate::data::augment::{augment, AugmentPolicy};
use crate::data::batch::BatchPlanner;
use crate::data::blocks::DataBlock;
use crate::data::image::LabelMap;
use crate::data::sample::Sample;
use crate::error::{Error, Result};
use crate::multiscale::{backward_model, forward_model};
use crate::nn::{ArchitectureSpec, Mode, Parameters};
use crate::optim::{adam_step, batch_cross_entropy, label_histogram, median_frequency_weights, AdamState, ClassWeights};
use crate::rng::{derive, hash_str, purpose, stream};

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchRecord {
    /// 0-based cycle index.
    pub cycle: u64,
    /// 0-based batch index within the cycle.
    pub batch: usize,
    pub lr: f64,
    /// Weighted cross-entropy plus weight decay.
    pub loss: f64,
}

impl fmt::Display for BatchRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}\t{}", self.cycle, self.batch, self.lr, self.loss)
    }
}

impl BatchRecord {
    /// Parse a line written by the `Display` impl.
    pub fn parse(line: &str) -> Result<Self> {
        let bad = || Error::Data(format!("bad training log line `{line}`"));
        let f: Vec<&str> = line.trim_end().split('\t').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        Ok(Self {
            cycle: f[0].parse().map_err(|_| bad())?,
            batch: f[1].parse().map_err(|_| bad())?,
            lr: f[2].parse().map_err(|_| bad())?,
            loss: f[3].parse().map_err(|_| bad())?,
        })
    }
}

/// Receives training progress.
pub trait TrainObserver {
    fn on_batch(&mut self, _record: &BatchRecord) -> Result<()> {
        Ok(())
    }

    /// Called after every `snapshot_every` cycles and at the end of each
    /// schedule segment except the last (the final model is returned instead).
    fn on_snapshot(&mut self, _checkpoint: &ModelCheckpoint) -> Result<()> {
        Ok(())
    }
}

/// Discards everything.
pub struct NoObserver;

impl TrainObserver for NoObserver {}

/// Keeps every record and the cycle counts of snapshots in memory.
#[derive(Default, Debug)]
pub struct RecordingObserver {
    pub records: Vec<BatchRecord>,
    pub snapshots: Vec<u64>,
}

impl TrainObserver for RecordingObserver {
    fn on_batch(&mut self, record: &BatchRecord) -> Result<()> {
        self.records.push(*record);
        Ok(())
    }

    fn on_snapshot(&mut self, checkpoint: &ModelCheckpoint) -> Result<()> {
        self.snapshots.push(checkpoint.provenance.cycles);
        Ok(())
    }
}

/// Training blocks of the scene classifier, one list per category.
#[derive(Clone, Debug, Default)]
pub struct SceneBlocks {
    pub general: Vec<DataBlock>,
    pub urban: Vec<DataBlock>,
    pub bridge: Vec<DataBlock>,
}

/// How component classifiers see their input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ComponentMode {
    /// rgb only.
    Naive,
    /// rgb stacked with the probabilities of a frozen scene classifier.
    SceneAware,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Target {
    Scene,
    Component,
}

fn target_labels(sample: &Sample, target: Target) -> Result<&LabelMap> {
    match target {
        Target::Scene => Ok(&sample.scene),
        Target::Component => sample
            .component
            .as_ref()
            .ok_or_else(|| Error::Data(format!("{} has no component labels", sample.id))),
    }
}

fn class_weights(config: &TrainConfig, groups: &[&[DataBlock]], target: Target, classes: usize) -> Result<ClassWeights> {
    if !config.balance {
        return Ok(ClassWeights::uniform(classes));
    }
    let mut histograms = Vec::new();
    for block in groups.iter().flat_map(|g| g.iter()) {
        for s in &block.samples {
            histograms.push(label_histogram(target_labels(s, target)?.data(), classes));
        }
    }
    median_frequency_weights(&histograms, classes)
}

struct Trainer<'a, O: TrainObserver> {
    spec: ArchitectureSpec,
    config: &'a TrainConfig,
    groups: Vec<&'a [DataBlock]>,
    planner: BatchPlanner,
    target: Target,
    scene: Option<&'a ModelCheckpoint>,
    observer: &'a mut O,
}

impl<O: TrainObserver> Trainer<'_, O> {
    /// Augmented network input and labels of one sample; `None` when no pixel
    /// of the result is labeled.
    fn prepare(&self, sample: &Sample, keys: &[u64]) -> Result<Option<(crate::tensor::Tensor<f32>, Vec<u8>)>> {
        let owned;
        let s = if self.config.augment {
            let mut policy = AugmentPolicy::for_category(sample.category);
            policy.crop_size = self.config.crop_size;
            let mut rng = stream(self.config.seed, keys);
            owned = augment(sample, &policy, &mut rng);
            &owned
        } else {
            sample
        };
        let labels = target_labels(s, self.target)?;
        if labels.labeled_count() == 0 {
            return Ok(None);
        }
        Ok(Some((model_input(&s.rgb, self.scene)?, labels.data().to_vec())))
    }

    fn checkpoint(&self, params: &Parameters<f32>, cycles: u64) -> Result<ModelCheckpoint> {
        ModelCheckpoint::new(
            self.spec.clone(),
            params.clone(),
            Provenance {
                config_hash: self.config.hash(),
                cycles,
            },
        )
    }

    fn run(self) -> Result<ModelCheckpoint> {
        let cfg = self.config;
        let weights = class_weights(cfg, &self.groups, self.target, self.spec.n_classes)?;
        let mut params = Parameters::<f32>::init(&self.spec, derive(cfg.seed, &[purpose::INIT]))?;
        let mut adam = AdamState::new(&params);
        let total = cfg.schedule.total_cycles();
        let boundaries = cfg.schedule.boundaries();
        let lambda = self.spec.weight_decay;

        for cycle in 0..total {
            let lr = cfg.schedule.lr_at(cycle).expect("cycle within schedule");
            for (bi, batch) in self.planner.cycle(cycle).iter().enumerate() {
                let mut inputs = Vec::with_capacity(batch.len());
                let mut labels = Vec::with_capacity(batch.len());
                for (k, r) in batch.iter().enumerate() {
                    let sample = &self.groups[r.group][r.block].samples[r.index];
                    let keys = [purpose::AUGMENT, hash_str(&sample.id), cycle, bi as u64, k as u64];
                    match self.prepare(sample, &keys)? {
                        Some((x, y)) => {
                            inputs.push(x);
                            labels.push(y);
                        }
                        None => log::debug!("skipping {}: no labeled pixels after augmentation", sample.id),
                    }
                }
                if inputs.is_empty() {
                    log::warn!("cycle {cycle} batch {bi}: no labeled samples, step skipped");
                    continue;
                }
                let mut drop_rng = stream(cfg.seed, &[purpose::DROPOUT, cycle, bi as u64]);
                let pass = forward_model(&self.spec, &params, &inputs, Mode::Train, &mut drop_rng)?;
                let probs = pass.probabilities();
                let label_refs: Vec<&[u8]> = labels.iter().map(Vec::as_slice).collect();
                let out = batch_cross_entropy(&probs, &label_refs, &weights, lambda, params.weight_sq_norm())?;
                drop(probs);
                let grads = backward_model(&self.spec, &params, &pass, out.grad_logits)?;
                pass.update_running_stats(&self.spec, &mut params);
                drop(pass);
                adam_step(&mut params, &grads, &mut adam, lr, lambda)?;
                if !out.loss.is_finite() {
                    return Err(Error::Data(format!("loss diverged at cycle {cycle} batch {bi}")));
                }
                self.observer.on_batch(&BatchRecord { cycle, batch: bi, lr, loss: out.loss })?;
            }
            let done = cycle + 1;
            let periodic = cfg.snapshot_every > 0 && done % cfg.snapshot_every == 0;
            if done < total && (periodic || boundaries.contains(&done)) {
                let snap = self.checkpoint(&params, done)?;
                self.observer.on_snapshot(&snap)?;
            }
        }
        self.checkpoint(&params, total)
    }
}

fn non_empty(blocks: &[DataBlock], what: &str) -> Result<()> {
    if blocks.iter().all(DataBlock::is_empty) {
        return Err(Error::Config(format!("no {what} training blocks")));
    }
    Ok(())
}

/// Train the scene classifier on mini-batches of 4 general, 4 urban and
/// 2 bridge images.
pub fn train_scene<O: TrainObserver>(
    config: &TrainConfig,
    blocks: &SceneBlocks,
    observer: &mut O,
) -> Result<ModelCheckpoint> {
    let spec = config.resolve_spec()?;
    if (spec.in_channels, spec.n_classes) != (3, N_SCENE) {
        return Err(Error::Config(format!("scene classifier must map 3 channels to {N_SCENE} classes")));
    }
    non_empty(&blocks.general, "general")?;
    non_empty(&blocks.urban, "urban")?;
    non_empty(&blocks.bridge, "bridge")?;
    let planner = BatchPlanner::scene(&blocks.general, &blocks.urban, &blocks.bridge, config.seed)?;
    if planner.batch_size() != config.batch_size {
        return Err(Error::Config(format!(
            "scene batches hold {} images; batch_size is {}",
            planner.batch_size(),
            config.batch_size
        )));
    }
    Trainer {
        spec,
        config,
        groups: vec![&blocks.general, &blocks.urban, &blocks.bridge],
        planner,
        target: Target::Scene,
        scene: None,
        observer,
    }
    .run()
}

/// Train a component classifier. Scene-aware mode runs `scene` in eval mode
/// on every augmented image and trains on the stacked 12-channel input; the
/// scene model itself is never modified.
pub fn train_component<O: TrainObserver>(
    config: &TrainConfig,
    blocks: &[DataBlock],
    mode: ComponentMode,
    scene: Option<&ModelCheckpoint>,
    observer: &mut O,
) -> Result<ModelCheckpoint> {
    let spec = config.resolve_spec()?;
    let channels = match mode {
        ComponentMode::Naive => 3,
        ComponentMode::SceneAware => STACKED_CHANNELS,
    };
    if (spec.in_channels, spec.n_classes) != (channels, N_COMPONENT) {
        return Err(Error::Config(format!(
            "{mode:?} component classifier must map {channels} channels to {N_COMPONENT} classes"
        )));
    }
    let scene = match mode {
        ComponentMode::Naive => None,
        ComponentMode::SceneAware => {
            let s = scene.ok_or_else(|| Error::Config("scene-aware training needs a scene checkpoint".into()))?;
            if (s.spec.in_channels, s.spec.n_classes) != (3, N_SCENE) {
                return Err(Error::Config("scene checkpoint must map rgb to 10 scene classes".into()));
            }
            Some(s)
        }
    };
    non_empty(blocks, "component")?;
    let planner = BatchPlanner::single(blocks, config.batch_size, config.seed)?;
    Trainer {
        spec,
        config,
        groups: vec![blocks],
        planner,
        target: Target::Component,
        scene,
        observer,
    }
    .run()
}
