//! Pixel accuracy, confusion matrices, false-positive rates on bridge-free
//! scenes, and colour rendering of label maps.

use std::fmt::Write as _;

use crate::classes::{scene, COMPONENT_CLASSES, N_SCENE, SCENE_CLASSES};
use crate::data::image::{LabelMap, RgbImage};
use crate::error::{shape_err, Error, Result};
use crate::optim::IGNORE;

/// `counts[t·K + p]` = labeled pixels of truth `t` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

/// Accuracy and row-normalised recall of a confusion matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    /// Trace over total; NaN when the matrix is empty.
    pub accuracy: f64,
    pub total: u64,
    /// `recall[t][p] = M[t][p] / Σ_p M[t][p]`; rows of absent classes are zero.
    pub recall: Vec<Vec<f64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    /// Add every pixel whose truth is not IGNORE.
    pub fn accumulate(&mut self, truth: &LabelMap, pred: &LabelMap) -> Result<()> {
        if (truth.width(), truth.height()) != (pred.width(), pred.height()) {
            return shape_err("truth and prediction extents differ");
        }
        let k = self.classes;
        for (&t, &p) in truth.data().iter().zip(pred.data()) {
            if t == IGNORE {
                continue;
            }
            if t as usize >= k || p as usize >= k {
                return Err(Error::Data(format!("label {} outside {k} classes", t.max(p))));
            }
            self.counts[t as usize * k + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return shape_err("cannot merge confusion matrices of different sizes");
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn summarize(&self) -> Summary {
        let total = self.total();
        let accuracy = if total == 0 { f64::NAN } else { self.trace() as f64 / total as f64 };
        let k = self.classes;
        let recall = (0..k)
            .map(|t| {
                let row = &self.counts[t * k..(t + 1) * k];
                let n: u64 = row.iter().sum();
                row.iter().map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 }).collect()
            })
            .collect();
        Summary { accuracy, total, recall }
    }

    /// Counts and recalls as an aligned text table.
    pub fn to_text(&self, names: &[&str]) -> String {
        let s = self.summarize();
        let mut out = String::new();
        let _ = writeln!(out, "pixel accuracy: {:.4} ({} of {} pixels)", s.accuracy, self.trace(), s.total);
        let width = names.iter().map(|n| n.len()).max().unwrap_or(0).max(10);
        let header = |out: &mut String, title: &str| {
            let _ = write!(out, "\n{title}\n{:>width$}", "truth\\pred");
            for n in names {
                let _ = write!(out, " {n:>width$}");
            }
            out.push('\n');
        };
        header(&mut out, "counts");
        for (t, name) in names.iter().enumerate() {
            let _ = write!(out, "{name:>width$}");
            for p in 0..self.classes {
                let _ = write!(out, " {:>width$}", self.get(t, p));
            }
            out.push('\n');
        }
        header(&mut out, "recall");
        for (t, name) in names.iter().enumerate() {
            let _ = write!(out, "{name:>width$}");
            for p in 0..self.classes {
                let _ = write!(out, " {:>width$.4}", s.recall[t][p]);
            }
            out.push('\n');
        }
        out
    }

    /// `kind,truth,pred,value` rows for counts and recalls plus an accuracy row.
    pub fn to_csv(&self, names: &[&str]) -> String {
        let s = self.summarize();
        let mut out = String::from("kind,truth,pred,value\n");
        let _ = writeln!(out, "accuracy,,,{}", s.accuracy);
        for (t, tn) in names.iter().enumerate() {
            for (p, pn) in names.iter().enumerate() {
                let _ = writeln!(out, "count,{tn},{pn},{}", self.get(t, p));
            }
        }
        for (t, tn) in names.iter().enumerate() {
            for (p, pn) in names.iter().enumerate() {
                let _ = writeln!(out, "recall,{tn},{pn},{}", s.recall[t][p]);
            }
        }
        out
    }
}

/// Component predictions on bridge-free scenes, tallied by scene truth.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FalsePositiveReport {
    /// Labeled pixels of each scene class.
    pub pixels: [u64; N_SCENE],
    /// Pixels of each scene class predicted as any bridge component.
    pub false_positives: [u64; N_SCENE],
}

impl Default for FalsePositiveReport {
    fn default() -> Self {
        Self {
            pixels: [0; N_SCENE],
            false_positives: [0; N_SCENE],
        }
    }
}

impl FalsePositiveReport {
    /// Tally one image. The scene truth must contain no Bridges pixels.
    pub fn accumulate(&mut self, component_pred: &LabelMap, scene_truth: &LabelMap) -> Result<()> {
        if (component_pred.width(), component_pred.height()) != (scene_truth.width(), scene_truth.height()) {
            return shape_err("component prediction and scene truth extents differ");
        }
        for (&p, &t) in component_pred.data().iter().zip(scene_truth.data()) {
            if t == IGNORE {
                continue;
            }
            if t == scene::BRIDGES {
                return Err(Error::Data("false-positive evaluation set contains Bridges pixels".into()));
            }
            if t as usize >= N_SCENE {
                return Err(Error::Data(format!("scene label {t} out of range")));
            }
            self.pixels[t as usize] += 1;
            if p != crate::classes::component::NON_BRIDGE {
                self.false_positives[t as usize] += 1;
            }
        }
        Ok(())
    }

    /// FP rate of each non-bridge scene class, pixel-weighted over all
    /// images; NaN for classes with no pixels.
    pub fn rates(&self) -> Vec<(u8, f64)> {
        crate::classes::non_bridge_scene_classes()
            .map(|c| {
                let n = self.pixels[c as usize];
                let r = if n == 0 { f64::NAN } else { self.false_positives[c as usize] as f64 / n as f64 };
                (c, r)
            })
            .collect()
    }

    /// Mean rate over the classes that occur.
    pub fn mean_rate(&self) -> f64 {
        let present: Vec<f64> = self.rates().into_iter().map(|r| r.1).filter(|r| !r.is_nan()).collect();
        if present.is_empty() {
            f64::NAN
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        }
    }
}

/// Tally component predictions against scene truth over bridge-free images.
pub fn false_positive_report<'a>(
    pairs: impl IntoIterator<Item = (&'a LabelMap, &'a LabelMap)>,
) -> Result<FalsePositiveReport> {
    let mut r = FalsePositiveReport::default();
    for (pred, truth) in pairs {
        r.accumulate(pred, truth)?;
    }
    Ok(r)
}

/// Side-by-side FP rates (percent) of named classifiers, one row each.
pub fn fp_table_text(rows: &[(&str, &FalsePositiveReport)]) -> String {
    let names: Vec<&str> = crate::classes::non_bridge_scene_classes()
        .map(|c| SCENE_CLASSES[c as usize])
        .collect();
    let label_w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(10);
    let mut out = format!("{:<label_w$}", "classifier");
    for n in &names {
        let _ = write!(out, " {n:>10}");
    }
    out.push_str("       mean\n");
    for (label, rep) in rows {
        let _ = write!(out, "{label:<label_w$}");
        for (_, r) in rep.rates() {
            let _ = write!(out, " {:>9.2}%", 100.0 * r);
        }
        let _ = writeln!(out, " {:>9.2}%", 100.0 * rep.mean_rate());
    }
    out
}

/// `classifier,class,pixels,false_positives,rate` rows.
pub fn fp_table_csv(rows: &[(&str, &FalsePositiveReport)]) -> String {
    let mut out = String::from("classifier,class,pixels,false_positives,rate\n");
    for (label, rep) in rows {
        for (c, r) in rep.rates() {
            let _ = writeln!(
                out,
                "{label},{},{},{},{r}",
                SCENE_CLASSES[c as usize], rep.pixels[c as usize], rep.false_positives[c as usize]
            );
        }
        let _ = writeln!(out, "{label},mean,,,{}", rep.mean_rate());
    }
    out
}

/// Colour of each class index; IGNORE renders black, so no entry may be black.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Palette {
    colours: Vec<[u8; 3]>,
}

/// Non-bridge dark blue, Columns green, Beams&Slabs red, Other structural
/// light blue, Other nonstructural yellow.
pub const COMPONENT_COLOURS: [[u8; 3]; 5] = [[0, 0, 139], [0, 128, 0], [255, 0, 0], [135, 206, 235], [255, 255, 0]];

/// Building, Greenery, Person, Pavement, Sign&Poles, Vehicles, Bridges, Water,
/// Sky, Others.
pub const SCENE_COLOURS: [[u8; 3]; 10] = [
    [128, 0, 0],
    [0, 192, 0],
    [255, 128, 192],
    [128, 128, 128],
    [255, 192, 0],
    [64, 0, 128],
    [0, 255, 255],
    [0, 0, 255],
    [128, 192, 255],
    [255, 255, 255],
];

impl Palette {
    pub fn new(colours: Vec<[u8; 3]>) -> Result<Self> {
        if colours.is_empty() || colours.len() > IGNORE as usize {
            return Err(Error::Config("palette needs 1 to 255 colours".into()));
        }
        for (i, c) in colours.iter().enumerate() {
            if *c == [0; 3] || colours[..i].contains(c) {
                return Err(Error::Config(format!("palette colour {c:?} is black or repeated")));
            }
        }
        Ok(Self { colours })
    }

    pub fn scene() -> Self {
        Self::new(SCENE_COLOURS.to_vec()).expect("valid palette")
    }

    pub fn component() -> Self {
        Self::new(COMPONENT_COLOURS.to_vec()).expect("valid palette")
    }

    /// Palette for a `classes`-way labeling: component for 5, scene for 10.
    pub fn for_classes(classes: usize) -> Result<Self> {
        match classes {
            c if c == COMPONENT_CLASSES.len() => Ok(Self::component()),
            c if c == SCENE_CLASSES.len() => Ok(Self::scene()),
            c => Err(Error::Config(format!("no default palette for {c} classes"))),
        }
    }

    pub fn colours(&self) -> &[[u8; 3]] {
        &self.colours
    }
}

/// Per-pixel palette lookup; IGNORE and out-of-palette labels are black.
pub fn render_labelmap(map: &LabelMap, palette: &Palette) -> RgbImage {
    let mut img = RgbImage::filled(map.width(), map.height(), [0; 3]);
    for y in 0..map.height() {
        for x in 0..map.width() {
            if let Some(c) = palette.colours.get(map.get(x, y) as usize) {
                img.set(x, y, *c);
            }
        }
    }
    img
}

/// Invert [`render_labelmap`]: black becomes IGNORE, other colours must be in
/// the palette.
pub fn parse_rendered(img: &RgbImage, palette: &Palette) -> Result<LabelMap> {
    let mut map = LabelMap::filled(img.width(), img.height(), IGNORE);
    for y in 0..img.height() {
        for x in 0..img.width() {
            let px = img.get(x, y);
            if px == [0; 3] {
                continue;
            }
            let c = palette
                .colours
                .iter()
                .position(|&c| c == px)
                .ok_or_else(|| Error::Data(format!("colour {px:?} at ({x}, {y}) is not in the palette")))?;
            map.set(x, y, c as u8);
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classes::component;

    fn map(w: usize, h: usize, d: &[u8]) -> LabelMap {
        LabelMap::new(w, h, d.to_vec()).unwrap()
    }

    #[test]
    fn hand_counted_matrix() {
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&map(2, 2, &[0, 0, 1, 1]), &map(2, 2, &[0, 1, 1, 1])).unwrap();
        assert_eq!([cm.get(0, 0), cm.get(0, 1), cm.get(1, 0), cm.get(1, 1)], [1, 1, 0, 2]);
        let s = cm.summarize();
        assert_eq!(s.accuracy, 0.75);
        assert_eq!((s.recall[0][0], s.recall[1][1]), (0.5, 1.0));
    }

    #[test]
    fn perfect_and_ignored() {
        let truth = map(3, 1, &[0, 1, 2]);
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&truth, &truth).unwrap();
        assert_eq!(cm.summarize().accuracy, 1.0);
        assert_eq!(cm.trace(), cm.total());
        let before = cm.clone();
        cm.accumulate(&map(3, 1, &[IGNORE; 3]), &map(3, 1, &[0, 1, 2])).unwrap();
        assert_eq!(cm, before);
        let empty = ConfusionMatrix::new(3).summarize();
        assert!(empty.accuracy.is_nan());
        assert_eq!(empty.total, 0);
    }

    #[test]
    fn merge_is_additive() {
        let t = map(4, 1, &[0, 1, 1, 0]);
        let p = map(4, 1, &[1, 1, 0, 0]);
        let mut a = ConfusionMatrix::new(2);
        a.accumulate(&t, &p).unwrap();
        let mut b = a.clone();
        b.merge(&a).unwrap();
        let mut c = ConfusionMatrix::new(2);
        c.accumulate(&t, &p).unwrap();
        c.accumulate(&t, &p).unwrap();
        assert_eq!(b, c);
    }

    #[test]
    fn fp_rates() {
        let truth = map(10, 1, &[scene::BUILDING; 10]);
        let mut pred = vec![component::NON_BRIDGE; 10];
        pred[..3].fill(component::COLUMNS);
        let r = false_positive_report([(&map(10, 1, &pred), &truth)]).unwrap();
        assert_eq!(r.rates()[0], (scene::BUILDING, 0.3));
        assert_eq!(r.rates().len(), 9);
        let all = map(10, 1, &[component::COLUMNS; 10]);
        assert_eq!(false_positive_report([(&all, &truth)]).unwrap().rates()[0].1, 1.0);
        let bridge = map(10, 1, &[scene::BRIDGES; 10]);
        assert!(false_positive_report([(&all, &bridge)]).is_err());
    }

    #[test]
    fn fp_tables_have_one_row_per_classifier() {
        let truth = map(2, 1, &[scene::SKY, scene::WATER]);
        let r = false_positive_report([(&map(2, 1, &[0, 1]), &truth)]).unwrap();
        let text = fp_table_text(&[("naive", &r), ("scene-aware", &r)]);
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("Sky"));
        let csv = fp_table_csv(&[("naive", &r)]);
        assert_eq!(csv.lines().count(), 1 + 9 + 1);
    }

    #[test]
    fn rendering_round_trip() {
        let p = Palette::component();
        let m = map(3, 2, &[0, 1, 2, 3, 4, IGNORE]);
        let img = render_labelmap(&m, &p);
        assert_eq!(img.get(1, 0), [0, 128, 0]);
        assert_eq!(img.get(2, 1), [0, 0, 0]);
        assert_eq!(parse_rendered(&img, &p).unwrap(), m);
        let bad = RgbImage::filled(1, 1, [1, 2, 3]);
        assert!(parse_rendered(&bad, &p).is_err());
        assert!(Palette::new(vec![[0, 0, 0]]).is_err());
        Palette::scene();
    }

    #[test]
    fn text_report_mentions_accuracy() {
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&map(2, 1, &[0, 1]), &map(2, 1, &[0, 0])).unwrap();
        let t = cm.to_text(&["a", "b"]);
        assert!(t.starts_with("pixel accuracy: 0.5000"));
        assert!(cm.to_csv(&["a", "b"]).contains("count,b,a,1"));
    }
}
