use std::fmt;
use std::str::FromStr;

use super::image::{LabelMap, RgbImage};
use crate::classes::{N_COMPONENT, N_SCENE};
use crate::error::{Error, Result};

/// Longer-side length images are brought to before training and inference.
pub const TARGET_LONGER_SIDE: usize = 320;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    General,
    Urban,
    Bridge,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::General, Category::Urban, Category::Bridge];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::General => "general",
            Category::Urban => "urban",
            Category::Bridge => "bridge",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Data(format!("unknown category `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Data(format!("unknown split `{s}`"))),
        }
    }
}

/// One image with its aligned label maps.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub category: Category,
    pub rgb: RgbImage,
    pub scene: LabelMap,
    pub component: Option<LabelMap>,
    /// Declared split; only bridge samples are expected to carry one.
    pub split: Option<Split>,
}

impl Sample {
    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    pub fn height(&self) -> usize {
        self.rgb.height()
    }

    /// Check label-map alignment and value ranges.
    pub fn validate(&self) -> Result<()> {
        let dims = (self.rgb.width(), self.rgb.height());
        let maps = std::iter::once(&self.scene).chain(self.component.as_ref());
        for m in maps {
            if (m.width(), m.height()) != dims {
                return Err(Error::Data(format!(
                    "{}: label map {}x{} does not match image {}x{}",
                    self.id,
                    m.width(),
                    m.height(),
                    dims.0,
                    dims.1
                )));
            }
        }
        self.scene.check_range(N_SCENE)?;
        if let Some(c) = &self.component {
            c.check_range(N_COMPONENT)?;
        }
        Ok(())
    }
}

/// Extents after scaling the longer side to `target`, rounding the other.
pub fn longer_side_extents(width: usize, height: usize, target: usize) -> (usize, usize) {
    if width >= height {
        let h = ((height as f64 * target as f64 / width as f64).round() as usize).max(1);
        (target, h)
    } else {
        let w = ((width as f64 * target as f64 / height as f64).round() as usize).max(1);
        (w, target)
    }
}

/// Scale so the longer side equals `target`, preserving aspect ratio:
/// bilinear for the image, nearest for label maps.
pub fn resize_longer_side(sample: &Sample, target: usize) -> Sample {
    let (w, h) = longer_side_extents(sample.width(), sample.height(), target);
    Sample {
        id: sample.id.clone(),
        category: sample.category,
        rgb: sample.rgb.resize_bilinear(w, h),
        scene: sample.scene.resize_nearest(w, h),
        component: sample.component.as_ref().map(|c| c.resize_nearest(w, h)),
        split: sample.split,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(w: usize, h: usize) -> Sample {
        Sample {
            id: "s".into(),
            category: Category::General,
            rgb: RgbImage::filled(w, h, [1, 2, 3]),
            scene: LabelMap::filled(w, h, 4),
            component: Some(LabelMap::filled(w, h, 0)),
            split: None,
        }
    }

    #[test]
    fn longer_side_examples() {
        assert_eq!(longer_side_extents(640, 480, 320), (320, 240));
        assert_eq!(longer_side_extents(320, 200, 320), (320, 200));
        assert_eq!(longer_side_extents(100, 400, 320), (80, 320));
        let r = resize_longer_side(&sample(640, 480), 320);
        assert_eq!((r.width(), r.height()), (320, 240));
        assert_eq!(r.component.unwrap().width(), 320);
        assert_eq!(resize_longer_side(&sample(320, 200), 320), sample(320, 200));
    }

    #[test]
    fn validation_catches_misalignment() {
        let mut s = sample(4, 4);
        s.validate().unwrap();
        s.scene = LabelMap::filled(4, 3, 0);
        assert!(s.validate().is_err());
        let mut s = sample(4, 4);
        s.component = Some(LabelMap::filled(4, 4, 5));
        assert!(s.validate().is_err());
    }

    #[test]
    fn names_parse() {
        for c in Category::ALL {
            assert_eq!(c.to_string().parse::<Category>().unwrap(), c);
        }
        assert_eq!("test".parse::<Split>().unwrap(), Split::Test);
        assert!("x".parse::<Split>().is_err());
    }
}
