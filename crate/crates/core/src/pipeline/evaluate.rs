//! Running trained models over labeled samples.

use super::checkpoint::ModelCheckpoint;
use super::infer::{infer, InferMode};
use crate::classes::scene;
use crate::data::sample::Sample;
use crate::error::{Error, Result};
use crate::eval::{ConfusionMatrix, FalsePositiveReport};

/// Confusion matrix of `model` over `samples`, against scene labels in scene
/// mode and component labels otherwise.
pub fn evaluate_confusion(
    model: &ModelCheckpoint,
    scene_model: Option<&ModelCheckpoint>,
    mode: InferMode,
    samples: &[Sample],
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(model.spec.n_classes);
    for s in samples {
        let truth = match mode {
            InferMode::Scene => &s.scene,
            InferMode::Naive | InferMode::SceneAware => s
                .component
                .as_ref()
                .ok_or_else(|| Error::Data(format!("{} has no component labels", s.id)))?,
        };
        let pred = infer(model, scene_model, &s.rgb, mode)?;
        cm.accumulate(truth, &pred.labels)?;
    }
    Ok(cm)
}

/// Samples whose scene labels contain no Bridges pixel.
pub fn bridge_free(samples: &[Sample]) -> Vec<&Sample> {
    samples
        .iter()
        .filter(|s| !s.scene.data().contains(&scene::BRIDGES))
        .collect()
}

/// False-positive tallies of a component classifier over `samples`, which
/// must be bridge-free.
pub fn evaluate_false_positives(
    model: &ModelCheckpoint,
    scene_model: Option<&ModelCheckpoint>,
    mode: InferMode,
    samples: &[&Sample],
) -> Result<FalsePositiveReport> {
    if mode == InferMode::Scene {
        return Err(Error::Config("false-positive evaluation needs a component classifier".into()));
    }
    let mut report = FalsePositiveReport::default();
    for s in samples {
        let pred = infer(model, scene_model, &s.rgb, mode)?;
        report.accumulate(&pred.labels, &s.scene)?;
    }
    Ok(report)
}
