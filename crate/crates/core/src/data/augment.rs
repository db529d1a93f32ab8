//! Training-time augmentation: random scale, rotation, horizontal flip,
//! padding, crop and colour jitter.
//!
//! The geometric steps are composed into one [`GeometricTransform`] and
//! applied by inverse mapping: each output pixel is traced back to a source
//! coordinate, sampled bilinearly for the image and by nearest neighbour for
//! label maps. Positions that trace back outside the source image (padding and
//! rotation-exposed corners) take edge-replicated colour and the IGNORE label.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::image::{LabelMap, RgbImage};
use super::sample::{Category, Sample};
use crate::error::{Error, Result};
use crate::optim::IGNORE;

/// Output side length of training crops.
pub const CROP_SIZE: usize = 180;

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentPolicy {
    /// Inclusive range of the random resize factor.
    pub scale_range: (f64, f64),
    pub crop_size: usize,
    /// Rotation angle is drawn uniformly from `[-bound, bound]` degrees.
    pub rotation_deg: f64,
    pub flip: bool,
    /// Standard deviation of additive per-channel noise, in intensity units.
    pub jitter_sigma: f64,
    /// Random crop position; when false the crop is centred.
    pub random_crop: bool,
}

impl AugmentPolicy {
    /// Training policy for a category: resize within ±25% (±50% for bridge
    /// images), ±15° rotation, flips, σ = 2 jitter and random 180×180 crops.
    pub fn for_category(category: Category) -> Self {
        let scale_range = match category {
            Category::General | Category::Urban => (0.75, 1.25),
            Category::Bridge => (0.5, 1.5),
        };
        Self {
            scale_range,
            crop_size: CROP_SIZE,
            rotation_deg: 15.0,
            flip: true,
            jitter_sigma: 2.0,
            random_crop: true,
        }
    }

    /// No resize, rotation, flip or jitter; centred crop of `crop_size`.
    pub fn identity(crop_size: usize) -> Self {
        Self {
            scale_range: (1.0, 1.0),
            crop_size,
            rotation_deg: 0.0,
            flip: false,
            jitter_sigma: 0.0,
            random_crop: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!("bad scale range ({lo}, {hi})")));
        }
        if self.crop_size == 0 {
            return Err(Error::Config("crop size must be positive".into()));
        }
        if !(self.rotation_deg >= 0.0 && self.rotation_deg < 180.0) {
            return Err(Error::Config(format!("bad rotation bound {}", self.rotation_deg)));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(Error::Config(format!("bad jitter sigma {}", self.jitter_sigma)));
        }
        Ok(())
    }

    /// Draw the random geometry for a `width`×`height` source.
    pub fn sample_transform<R: Rng + ?Sized>(
        &self,
        width: usize,
        height: usize,
        rng: &mut R,
    ) -> GeometricTransform {
        let (lo, hi) = self.scale_range;
        let scale = if lo < hi { rng.random_range(lo..=hi) } else { lo };
        let b = self.rotation_deg;
        let angle = if b > 0.0 { rng.random_range(-b..=b) } else { 0.0 };
        let flip = self.flip && rng.random_bool(0.5);
        let mut t = GeometricTransform::new(width, height, scale, angle, flip, self.crop_size);
        if self.random_crop {
            let ox = rng.random_range(0..=t.padded.0 - self.crop_size);
            let oy = rng.random_range(0..=t.padded.1 - self.crop_size);
            t.crop_origin = (ox as f64, oy as f64);
        }
        t
    }
}

/// Composite scale → rotate → flip → pad → crop mapping.
///
/// Coordinates are continuous with pixel `(x, y)` covering `[x, x+1)×[y, y+1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeometricTransform {
    pub source: (usize, usize),
    pub scale: f64,
    /// Counter-clockwise rotation in degrees about the image centre.
    pub angle_deg: f64,
    pub flip: bool,
    /// Extents after resizing.
    pub scaled: (usize, usize),
    /// Extents after padding to at least the crop size.
    pub padded: (usize, usize),
    pub crop_size: usize,
    /// Top-left corner of the crop in padded coordinates.
    pub crop_origin: (f64, f64),
}

impl GeometricTransform {
    /// Transform with a centred crop.
    pub fn new(width: usize, height: usize, scale: f64, angle_deg: f64, flip: bool, crop: usize) -> Self {
        let sw = ((width as f64 * scale).round() as usize).max(1);
        let sh = ((height as f64 * scale).round() as usize).max(1);
        let padded = (sw.max(crop), sh.max(crop));
        Self {
            source: (width, height),
            scale,
            angle_deg,
            flip,
            scaled: (sw, sh),
            padded,
            crop_size: crop,
            crop_origin: ((padded.0 - crop) as f64 / 2.0, (padded.1 - crop) as f64 / 2.0),
        }
    }

    fn pad_offset(&self) -> (f64, f64) {
        (
            ((self.padded.0 - self.scaled.0) / 2) as f64,
            ((self.padded.1 - self.scaled.1) / 2) as f64,
        )
    }

    fn ratios(&self) -> (f64, f64) {
        (
            self.scaled.0 as f64 / self.source.0 as f64,
            self.scaled.1 as f64 / self.source.1 as f64,
        )
    }

    /// Source-image point that lands on output point `(u, v)`.
    pub fn source_coord(&self, u: f64, v: f64) -> (f64, f64) {
        let (px, py) = self.pad_offset();
        let mut x = u + self.crop_origin.0 - px;
        let y = v + self.crop_origin.1 - py;
        if self.flip {
            x = self.scaled.0 as f64 - x;
        }
        let (cx, cy) = (self.scaled.0 as f64 / 2.0, self.scaled.1 as f64 / 2.0);
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let (dx, dy) = (x - cx, y - cy);
        // Inverse rotation; y grows downward, so a positive angle turns the
        // content counter-clockwise on screen.
        let rx = cx + c * dx - s * dy;
        let ry = cy + s * dx + c * dy;
        let (kx, ky) = self.ratios();
        (rx / kx, ry / ky)
    }

    /// Output point that source point `(x, y)` lands on.
    pub fn map_forward(&self, x: f64, y: f64) -> (f64, f64) {
        let (kx, ky) = self.ratios();
        let (rx, ry) = (x * kx, y * ky);
        let (cx, cy) = (self.scaled.0 as f64 / 2.0, self.scaled.1 as f64 / 2.0);
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let (dx, dy) = (rx - cx, ry - cy);
        let mut qx = cx + c * dx + s * dy;
        let qy = cy - s * dx + c * dy;
        if self.flip {
            qx = self.scaled.0 as f64 - qx;
        }
        let (px, py) = self.pad_offset();
        (qx + px - self.crop_origin.0, qy + py - self.crop_origin.1)
    }

    /// Source point sampled for output pixel `(u, v)`, in pixel-centre terms.
    fn source_center(&self, u: usize, v: usize) -> (f64, f64) {
        self.source_coord(u as f64 + 0.5, v as f64 + 0.5)
    }

    pub fn apply_rgb(&self, img: &RgbImage) -> RgbImage {
        let n = self.crop_size;
        let (w, h) = ((img.width() - 1) as f64, (img.height() - 1) as f64);
        let mut out = RgbImage::filled(n, n, [0; 3]);
        for v in 0..n {
            for u in 0..n {
                let (x, y) = self.source_center(u, v);
                let fx = (x - 0.5).clamp(0.0, w);
                let fy = (y - 0.5).clamp(0.0, h);
                out.set(u, v, img.sample_bilinear(fx, fy));
            }
        }
        out
    }

    pub fn apply_labels(&self, map: &LabelMap) -> LabelMap {
        let n = self.crop_size;
        let (w, h) = (map.width() as f64, map.height() as f64);
        let mut out = LabelMap::filled(n, n, IGNORE);
        for v in 0..n {
            for u in 0..n {
                let (x, y) = self.source_center(u, v);
                if x >= 0.0 && y >= 0.0 && x < w && y < h {
                    out.set(u, v, map.get(x as usize, y as usize));
                }
            }
        }
        out
    }
}

/// Add `N(0, σ²)` noise to every channel of every pixel, clamped to `[0, 255]`.
pub fn jitter<R: Rng + ?Sized>(img: &mut RgbImage, sigma: f64, rng: &mut R) {
    if sigma == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let (w, h) = (img.width(), img.height());
    for y in 0..h {
        for x in 0..w {
            let mut px = img.get(x, y);
            for c in &mut px {
                *c = (*c as f64 + normal.sample(rng)).round().clamp(0.0, 255.0) as u8;
            }
            img.set(x, y, px);
        }
    }
}

/// Apply one random draw of `policy` to `sample`; the result is crop-sized.
pub fn augment<R: Rng + ?Sized>(sample: &Sample, policy: &AugmentPolicy, rng: &mut R) -> Sample {
    let t = policy.sample_transform(sample.width(), sample.height(), rng);
    let mut rgb = t.apply_rgb(&sample.rgb);
    jitter(&mut rgb, policy.jitter_sigma, rng);
    Sample {
        id: sample.id.clone(),
        category: sample.category,
        rgb,
        scene: t.apply_labels(&sample.scene),
        component: sample.component.as_ref().map(|c| t.apply_labels(c)),
        split: sample.split,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gradient_sample(w: usize, h: usize) -> Sample {
        let mut rgb = RgbImage::filled(w, h, [0; 3]);
        let mut scene = LabelMap::filled(w, h, 0);
        for y in 0..h {
            for x in 0..w {
                rgb.set(x, y, [(x % 256) as u8, (y % 256) as u8, 7]);
                scene.set(x, y, ((x / 8 + y / 8) % 10) as u8);
            }
        }
        Sample {
            id: "g".into(),
            category: Category::General,
            rgb,
            scene,
            component: None,
            split: None,
        }
    }

    #[test]
    fn identity_policy_is_center_crop() {
        let s = gradient_sample(240, 200);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = augment(&s, &AugmentPolicy::identity(180), &mut rng);
        let (ox, oy) = (30, 10);
        for v in 0..180 {
            for u in 0..180 {
                assert_eq!(out.rgb.get(u, v), s.rgb.get(u + ox, v + oy));
                assert_eq!(out.scene.get(u, v), s.scene.get(u + ox, v + oy));
            }
        }
    }

    #[test]
    fn small_inputs_are_padded_with_ignore() {
        let s = gradient_sample(100, 60);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = augment(&s, &AugmentPolicy::identity(180), &mut rng);
        assert_eq!((out.rgb.width(), out.rgb.height()), (180, 180));
        assert_eq!(out.scene.labeled_count(), 100 * 60);
        assert_eq!(out.scene.get(0, 0), IGNORE);
        assert_eq!(out.scene.get(40, 60), s.scene.get(0, 0));
        assert_eq!(out.rgb.get(0, 0), s.rgb.get(0, 0));
    }

    #[test]
    fn output_is_always_crop_sized() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (w, h) in [(320, 240), (50, 320), (181, 179)] {
            let s = gradient_sample(w, h);
            for cat in Category::ALL {
                let out = augment(&s, &AugmentPolicy::for_category(cat), &mut rng);
                assert_eq!((out.rgb.width(), out.rgb.height()), (180, 180));
                assert_eq!((out.scene.width(), out.scene.height()), (180, 180));
            }
        }
    }

    #[test]
    fn forward_and_inverse_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let policy = AugmentPolicy::for_category(Category::Bridge);
        for _ in 0..200 {
            let t = policy.sample_transform(320, 213, &mut rng);
            let (u, v) = (rng.random_range(0.0..180.0), rng.random_range(0.0..180.0));
            let (x, y) = t.source_coord(u, v);
            let (u2, v2) = t.map_forward(x, y);
            assert!((u - u2).abs() < 1e-9 && (v - v2).abs() < 1e-9);
        }
    }

    #[test]
    fn rotation_exposes_ignore_corners() {
        let s = gradient_sample(180, 180);
        let t = GeometricTransform::new(180, 180, 1.0, 15.0, false, 180);
        let out = t.apply_labels(&s.scene);
        assert_eq!(out.get(0, 0), IGNORE);
        assert_eq!(out.get(179, 179), IGNORE);
        assert_ne!(out.get(90, 90), IGNORE);
    }

    #[test]
    fn flip_mirrors_columns() {
        let s = gradient_sample(180, 180);
        let t = GeometricTransform::new(180, 180, 1.0, 0.0, true, 180);
        let out = t.apply_labels(&s.scene);
        for x in 0..180 {
            assert_eq!(out.get(x, 17), s.scene.get(179 - x, 17));
        }
    }

    #[test]
    fn scale_draws_respect_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (cat, lo, hi) in [(Category::Urban, 0.75, 1.25), (Category::Bridge, 0.5, 1.5)] {
            let p = AugmentPolicy::for_category(cat);
            for _ in 0..2000 {
                let t = p.sample_transform(320, 240, &mut rng);
                assert!(t.scale >= lo && t.scale <= hi);
                assert!(t.angle_deg.abs() <= 15.0);
            }
        }
    }

    #[test]
    fn jitter_is_clamped() {
        let mut img = RgbImage::filled(20, 20, [0, 255, 128]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        jitter(&mut img, 2.0, &mut rng);
        let mean_mid: f64 = (0..20).map(|x| img.get(x, 3)[2] as f64).sum::<f64>() / 20.0;
        assert!((mean_mid - 128.0).abs() < 2.0);
        assert!(img.data().chunks(3).any(|p| p[2] != 128));
    }

    #[test]
    fn policy_validation() {
        assert!(AugmentPolicy::for_category(Category::General).validate().is_ok());
        let mut p = AugmentPolicy::identity(180);
        p.scale_range = (1.2, 0.8);
        assert!(p.validate().is_err());
        p.scale_range = (0.0, 1.0);
        assert!(p.validate().is_err());
    }
}
