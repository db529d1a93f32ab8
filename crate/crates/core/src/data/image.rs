//! 8-bit RGB images and single-channel label maps.

use std::path::Path;

use image::{ColorType, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::optim::IGNORE;
use crate::tensor::{Scalar, Tensor};

/// Row-major interleaved RGB, 8 bits per channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::Size(format!(
                "{width}x{height} rgb image needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// `[H, W, 3]` tensor of raw 0–255 values.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| T::of(v as f64)).collect();
        Tensor::new(&[self.height, self.width, 3], data).expect("validated extents")
    }

    /// Bilinear resampling with pixel-center alignment.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Self {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut out = Self::filled(width, height, [0; 3]);
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                out.set(x, y, self.sample_bilinear(fx, fy));
            }
        }
        out
    }

    /// Bilinear sample at continuous pixel coordinates inside the image.
    pub(crate) fn sample_bilinear(&self, fx: f64, fy: f64) -> [u8; 3] {
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
        let mut px = [0u8; 3];
        for (c, p) in px.iter_mut().enumerate() {
            let v = |x: usize, y: usize| self.data[(y * self.width + x) * 3 + c] as f64;
            let top = v(x0, y0) * (1.0 - ax) + v(x1, y0) * ax;
            let bottom = v(x0, y1) * (1.0 - ax) + v(x1, y1) * ax;
            *p = (top * (1.0 - ay) + bottom * ay).round().clamp(0.0, 255.0) as u8;
        }
        px
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf: ImageBuffer<Rgb<u8>, _> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.data.clone())
                .expect("validated extents");
        buf.save(path)?;
        Ok(())
    }
}

/// Per-pixel class indices, [`IGNORE`] for unlabeled pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::Size(format!(
                "{width}x{height} label map needs {} entries, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, label: u8) -> Self {
        Self {
            width,
            height,
            data: vec![label; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, label: u8) {
        self.data[y * self.width + x] = label;
    }

    /// Nearest-neighbour resampling with pixel-center alignment.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Self {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let src = |dst: usize, from: usize, to: usize| {
            (((dst as f64 + 0.5) * from as f64 / to as f64) as usize).min(from - 1)
        };
        let cols: Vec<usize> = (0..width).map(|x| src(x, self.width, width)).collect();
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            let sy = src(y, self.height, height);
            data.extend(cols.iter().map(|&sx| self.data[sy * self.width + sx]));
        }
        Self { width, height, data }
    }

    pub fn labeled_count(&self) -> usize {
        self.data.iter().filter(|&&l| l != IGNORE).count()
    }

    /// Check every value is below `classes` or [`IGNORE`].
    pub fn check_range(&self, classes: usize) -> Result<()> {
        match self.data.iter().find(|&&l| l != IGNORE && l as usize >= classes) {
            Some(l) => Err(Error::Data(format!("label {l} outside {classes} classes"))),
            None => Ok(()),
        }
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?;
        if img.color() != ColorType::L8 {
            return Err(Error::Data(format!(
                "{}: label maps must be 8-bit single-channel PNG, found {:?}",
                path.display(),
                img.color()
            )));
        }
        let img = img.into_luma8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf: ImageBuffer<Luma<u8>, _> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.data.clone())
                .expect("validated extents");
        buf.save(path)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_keeps_constants_and_extents() {
        let img = RgbImage::filled(7, 5, [10, 200, 33]);
        let r = img.resize_bilinear(3, 9);
        assert_eq!((r.width(), r.height()), (3, 9));
        assert!(r.data().chunks(3).all(|p| p == [10, 200, 33]));
    }

    #[test]
    fn bilinear_halving_averages_pairs() {
        let data: Vec<u8> = [0u8, 100, 0, 100].iter().flat_map(|&v| [v, v, v]).collect();
        let img = RgbImage::new(4, 1, data).unwrap();
        let r = img.resize_bilinear(2, 1);
        assert_eq!(r.get(0, 0), [50; 3]);
        assert_eq!(r.get(1, 0), [50; 3]);
    }

    #[test]
    fn nearest_preserves_label_set() {
        let map = LabelMap::new(4, 2, vec![0, 1, 2, 3, 4, 5, 6, IGNORE]).unwrap();
        let up = map.resize_nearest(8, 4);
        assert_eq!(up.get(0, 0), 0);
        assert_eq!(up.get(7, 3), IGNORE);
        assert!(up.data().iter().all(|l| map.data().contains(l)));
        assert_eq!(up.resize_nearest(4, 2), map);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::new(3, 2, (0..18).map(|v| v * 13).collect()).unwrap();
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        assert_eq!(RgbImage::load_png(&p).unwrap(), img);
        let map = LabelMap::new(3, 2, vec![0, 1, 2, IGNORE, 4, 9]).unwrap();
        let q = dir.path().join("b.png");
        map.save_png(&q).unwrap();
        assert_eq!(LabelMap::load_png(&q).unwrap(), map);
        assert!(matches!(LabelMap::load_png(&p), Err(Error::Data(_))));
    }

    #[test]
    fn range_check() {
        let map = LabelMap::new(2, 1, vec![4, IGNORE]).unwrap();
        assert!(map.check_range(5).is_ok());
        assert!(map.check_range(4).is_err());
    }
}
