//! Model inputs and per-pixel prediction.

use std::fmt;
use std::str::FromStr;

use super::checkpoint::ModelCheckpoint;
use crate::classes::{N_COMPONENT, N_SCENE};
use crate::data::image::{LabelMap, RgbImage};
use crate::error::{shape_err, Error, Result};
use crate::multiscale::predict_logits;
use crate::nn::softmax_channels;
use crate::tensor::{Scalar, Tensor};

/// Channels of a scene-aware component input: rgb plus nine scene probabilities.
pub const STACKED_CHANNELS: usize = 3 + N_SCENE - 1;

/// Map `[0, 255]` intensities to `[-1, 1]`.
pub fn normalize_input<T: Scalar>(t: &mut Tensor<T>) {
    let mid = T::of(127.5);
    for v in t.data_mut() {
        *v = (*v - mid) / mid;
    }
}

/// Concatenate rgb `[H, W, 3]` with `255·p` for the first nine scene classes
/// of `probs` `[H, W, 10]`, giving `[H, W, 12]`. The last class is dropped.
pub fn stack_scene_channels<T: Scalar>(rgb: &Tensor<T>, probs: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = rgb.hwc()?;
    let (ph, pw, k) = probs.hwc()?;
    if c != 3 || k != N_SCENE || (ph, pw) != (h, w) {
        return shape_err(format!(
            "stacking needs [H,W,3] rgb and [H,W,{N_SCENE}] probabilities, got {:?} and {:?}",
            rgb.shape(),
            probs.shape()
        ));
    }
    let scale = T::of(255.0);
    let mut out = Vec::with_capacity(h * w * STACKED_CHANNELS);
    for (px, pp) in rgb.data().chunks_exact(3).zip(probs.data().chunks_exact(k)) {
        out.extend_from_slice(px);
        out.extend(pp[..k - 1].iter().map(|&p| p * scale));
    }
    Tensor::new(&[h, w, STACKED_CHANNELS], out)
}

/// Scene softmax `[H, W, 10]` for raw rgb `[H, W, 3]` in `[0, 255]`.
pub fn scene_probabilities(scene: &ModelCheckpoint, raw_rgb: &Tensor<f32>) -> Result<Tensor<f32>> {
    let mut x = raw_rgb.clone();
    normalize_input(&mut x);
    Ok(softmax_channels(&predict_logits(&scene.spec, &scene.params, &x)?))
}

/// Normalised network input for `rgb`; with a scene model, the scene
/// probabilities of the same image are stacked on first.
pub fn model_input(rgb: &RgbImage, scene: Option<&ModelCheckpoint>) -> Result<Tensor<f32>> {
    let raw = rgb.to_tensor::<f32>();
    let mut x = match scene {
        Some(s) => stack_scene_channels(&raw, &scene_probabilities(s, &raw)?)?,
        None => raw,
    };
    normalize_input(&mut x);
    Ok(x)
}

/// Per-pixel argmax of `[H, W, K]` scores; ties go to the lowest class index.
pub fn argmax_labels<T: Scalar>(scores: &Tensor<T>) -> Result<LabelMap> {
    let (h, w, k) = scores.hwc()?;
    if k == 0 || k > 255 {
        return shape_err(format!("cannot label {k} classes"));
    }
    let labels = scores
        .data()
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (c, v) in row.iter().enumerate().skip(1) {
                if *v > row[best] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    LabelMap::new(w, h, labels)
}

/// Which classifier configuration to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InferMode {
    /// 10-class scene labeling.
    Scene,
    /// 5-class component labeling from rgb alone.
    Naive,
    /// Component labeling from rgb stacked with scene probabilities.
    SceneAware,
}

impl InferMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InferMode::Scene => "scene",
            InferMode::Naive => "naive",
            InferMode::SceneAware => "scene_aware",
        }
    }
}

impl fmt::Display for InferMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InferMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scene" => Ok(InferMode::Scene),
            "naive" => Ok(InferMode::Naive),
            "scene_aware" | "scene-aware" => Ok(InferMode::SceneAware),
            _ => Err(Error::Config(format!("unknown mode `{s}` (scene, naive, scene_aware)"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Prediction {
    pub labels: LabelMap,
    pub probabilities: Tensor<f32>,
}

/// Label every pixel of `rgb` with `model`. Scene-aware mode needs the scene
/// model that produced its training inputs.
pub fn infer(
    model: &ModelCheckpoint,
    scene: Option<&ModelCheckpoint>,
    rgb: &RgbImage,
    mode: InferMode,
) -> Result<Prediction> {
    let expect = |ch: usize, k: usize| {
        if (model.spec.in_channels, model.spec.n_classes) != (ch, k) {
            return Err(Error::Config(format!(
                "{mode} inference needs a {ch}-channel {k}-class model, got {}-channel {}-class",
                model.spec.in_channels, model.spec.n_classes
            )));
        }
        Ok(())
    };
    let input = match mode {
        InferMode::Scene => {
            expect(3, N_SCENE)?;
            model_input(rgb, None)?
        }
        InferMode::Naive => {
            expect(3, N_COMPONENT)?;
            model_input(rgb, None)?
        }
        InferMode::SceneAware => {
            expect(STACKED_CHANNELS, N_COMPONENT)?;
            let scene = scene.ok_or_else(|| Error::Config("scene-aware inference needs a scene model".into()))?;
            if (scene.spec.in_channels, scene.spec.n_classes) != (3, N_SCENE) {
                return Err(Error::Config("scene model must map rgb to 10 scene classes".into()));
            }
            model_input(rgb, Some(scene))?
        }
    };
    let logits = predict_logits(&model.spec, &model.params, &input)?;
    Ok(Prediction {
        labels: argmax_labels(&logits)?,
        probabilities: softmax_channels(&logits),
    })
}
