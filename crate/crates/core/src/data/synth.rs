//! Procedural street and bridge scenes with exact scene and component labels.
//!
//! Each scene is a sky band over a ground band, decorated with buildings,
//! trees, poles, vehicles, people, water and scattered clutter, and optionally
//! a bridge: a horizontal deck on vertical piers with a truss above and a
//! railing on top. Surfaces are flat colours plus per-pixel noise.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::image::{LabelMap, RgbImage};
use super::sample::{Category, Sample, Split};
use crate::classes::{component, scene};
use crate::rng::{derive, purpose, stream};

/// Peak amplitude of the uniform per-channel texture noise.
const NOISE: i32 = 12;

struct Canvas {
    w: usize,
    h: usize,
    rgb: Vec<[u8; 3]>,
    scene: Vec<u8>,
    component: Vec<u8>,
}

impl Canvas {
    fn new(w: usize, h: usize) -> Self {
        Self {
            w,
            h,
            rgb: vec![[0; 3]; w * h],
            scene: vec![scene::OTHERS; w * h],
            component: vec![component::NON_BRIDGE; w * h],
        }
    }

    fn paint(&mut self, x: i64, y: i64, colour: [u8; 3], class: u8, part: u8) {
        if x < 0 || y < 0 || x >= self.w as i64 || y >= self.h as i64 {
            return;
        }
        let i = y as usize * self.w + x as usize;
        self.rgb[i] = colour;
        self.scene[i] = class;
        self.component[i] = part;
    }

    fn rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, colour: [u8; 3], class: u8, part: u8) {
        for y in y0.max(0)..y1.min(self.h as i64) {
            for x in x0.max(0)..x1.min(self.w as i64) {
                self.paint(x, y, colour, class, part);
            }
        }
    }

    fn ellipse(&mut self, cx: f64, cy: f64, rx: f64, ry: f64, colour: [u8; 3], class: u8) {
        let (rx, ry) = (rx.max(0.5), ry.max(0.5));
        for y in (cy - ry).floor() as i64..=(cy + ry).ceil() as i64 {
            for x in (cx - rx).floor() as i64..=(cx + rx).ceil() as i64 {
                let dx = (x as f64 + 0.5 - cx) / rx;
                let dy = (y as f64 + 0.5 - cy) / ry;
                if dx * dx + dy * dy <= 1.0 {
                    self.paint(x, y, colour, class, component::NON_BRIDGE);
                }
            }
        }
    }

    /// Thick segment: every pixel whose centre lies within `r` of the segment.
    #[allow(clippy::too_many_arguments)]
    fn line(&mut self, a: (f64, f64), b: (f64, f64), r: f64, colour: [u8; 3], class: u8, part: u8) {
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = (dx * dx + dy * dy).max(1e-12);
        let x0 = (a.0.min(b.0) - r).floor() as i64;
        let x1 = (a.0.max(b.0) + r).ceil() as i64;
        let y0 = (a.1.min(b.1) - r).floor() as i64;
        let y1 = (a.1.max(b.1) + r).ceil() as i64;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let t = (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0);
                let (qx, qy) = (a.0 + t * dx - px, a.1 + t * dy - py);
                if qx * qx + qy * qy <= r * r {
                    self.paint(x, y, colour, class, part);
                }
            }
        }
    }
}

fn jittered(rng: &mut ChaCha8Rng, base: [u8; 3], spread: i32) -> [u8; 3] {
    base.map(|c| (c as i32 + rng.random_range(-spread..=spread)).clamp(0, 255) as u8)
}

fn pick<const N: usize>(rng: &mut ChaCha8Rng, options: [[u8; 3]; N]) -> [u8; 3] {
    options[rng.random_range(0..N)]
}

/// Generate one `width`×`height` scene from `seed`. With `bridge` set, a bridge
/// is drawn and the sample's category is [`Category::Bridge`]; otherwise it is
/// [`Category::General`] and the component map is Non-bridge everywhere.
pub fn generate_synthetic_scene(seed: u64, width: usize, height: usize, bridge: bool) -> Sample {
    assert!(width >= 8 && height >= 8, "synthetic scenes need at least 8x8 pixels");
    let mut rng = stream(seed, &[purpose::SYNTH]);
    let (w, h) = (width as f64, height as f64);
    let mut cv = Canvas::new(width, height);
    let horizon = (h * rng.random_range(0.3..0.5)) as i64;

    let sky = jittered(&mut rng, [120, 170, 230], 20);
    cv.rect(0, 0, width as i64, horizon, sky, scene::SKY, component::NON_BRIDGE);
    let ground = jittered(&mut rng, [110, 105, 95], 15);
    cv.rect(0, horizon, width as i64, height as i64, ground, scene::PAVEMENT, component::NON_BRIDGE);

    if rng.random_bool(0.5) {
        let water = jittered(&mut rng, [40, 80, 140], 15);
        let cx = rng.random_range(0.2..0.8) * w;
        let cy = horizon as f64 + rng.random_range(0.4..0.8) * (h - horizon as f64);
        cv.ellipse(cx, cy, rng.random_range(0.15..0.35) * w, rng.random_range(0.05..0.15) * h, water, scene::WATER);
    }

    for _ in 0..rng.random_range(1..=4) {
        let colour = pick(&mut rng, [[150, 150, 155], [160, 110, 80], [200, 190, 160], [90, 90, 100]]);
        let colour = jittered(&mut rng, colour, 15);
        let bw = (rng.random_range(0.1..0.3) * w) as i64;
        let bh = (rng.random_range(0.2..0.5) * h) as i64;
        let x0 = rng.random_range(-bw / 2..width as i64);
        let base = horizon + (rng.random_range(0.0..0.15) * h) as i64;
        cv.rect(x0, base - bh, x0 + bw, base, colour, scene::BUILDING, component::NON_BRIDGE);
        let window = jittered(&mut rng, [60, 70, 90], 10);
        let step = (bw / 4).max(3);
        let mut wy = base - bh + step / 2;
        while wy + step / 2 < base {
            let mut wx = x0 + step / 2;
            while wx + step / 2 < x0 + bw {
                cv.rect(wx, wy, wx + step / 2, wy + step / 2, window, scene::BUILDING, component::NON_BRIDGE);
                wx += step;
            }
            wy += step;
        }
    }

    for _ in 0..rng.random_range(1..=4) {
        let green = jittered(&mut rng, [50, 130, 50], 25);
        let cx = rng.random_range(0.0..1.0) * w;
        let r = rng.random_range(0.05..0.12) * w;
        let cy = horizon as f64 - r * rng.random_range(0.0..1.2);
        cv.ellipse(cx, cy, r, r * rng.random_range(0.8..1.4), green, scene::GREENERY);
    }

    if bridge {
        draw_bridge(&mut cv, &mut rng, horizon);
    }

    for _ in 0..rng.random_range(0..=3) {
        let grey = jittered(&mut rng, [150, 150, 150], 20);
        let x = (rng.random_range(0.0..1.0) * w) as i64;
        let pw = ((0.015 * w) as i64).max(1);
        let base = horizon + (rng.random_range(0.05..0.4) * (h - horizon as f64)) as i64;
        let top = base - (rng.random_range(0.25..0.45) * h) as i64;
        cv.rect(x, top, x + pw, base, grey, scene::SIGN_POLES, component::NON_BRIDGE);
        let sign = pick(&mut rng, [[200, 30, 30], [30, 60, 200], [230, 230, 230]]);
        let s = ((0.04 * w) as i64).max(2);
        cv.rect(x - s / 2, top, x + pw + s / 2, top + s, sign, scene::SIGN_POLES, component::NON_BRIDGE);
    }

    for _ in 0..rng.random_range(0..=2) {
        let body = pick(&mut rng, [[180, 20, 20], [20, 20, 160], [220, 220, 220], [30, 30, 30]]);
        let vw = rng.random_range(0.12..0.22) * w;
        let vh = vw * 0.45;
        let x0 = rng.random_range(0.0..1.0) * w - vw / 2.0;
        let base = horizon as f64 + rng.random_range(0.2..0.9) * (h - horizon as f64);
        cv.rect(x0 as i64, (base - vh) as i64, (x0 + vw) as i64, (base - vh * 0.25) as i64, body, scene::VEHICLES, component::NON_BRIDGE);
        let r = vh * 0.25;
        for fx in [0.25, 0.75] {
            cv.ellipse(x0 + vw * fx, base - r, r, r, [20, 20, 20], scene::VEHICLES);
        }
    }

    for _ in 0..rng.random_range(0..=2) {
        let cloth = jittered(&mut rng, [200, 120, 60], 50);
        let ph = rng.random_range(0.12..0.2) * h;
        let x = rng.random_range(0.05..0.95) * w;
        let base = horizon as f64 + rng.random_range(0.3..1.0) * (h - horizon as f64);
        let r = (ph * 0.05).max(0.6);
        let hip = base - ph * 0.45;
        let neck = base - ph * 0.8;
        for (a, b) in [
            ((x, hip), (x - ph * 0.15, base)),
            ((x, hip), (x + ph * 0.15, base)),
            ((x, hip), (x, neck)),
            ((x - ph * 0.18, neck + ph * 0.1), (x + ph * 0.18, neck + ph * 0.1)),
        ] {
            cv.line(a, b, r, cloth, scene::PERSON, component::NON_BRIDGE);
        }
        cv.ellipse(x, neck - ph * 0.1, ph * 0.1, ph * 0.1, [230, 190, 160], scene::PERSON);
    }

    for _ in 0..rng.random_range(0..=6) {
        let c = [rng.random(), rng.random(), rng.random()];
        let cx = rng.random_range(0.0..1.0) * w;
        let cy = rng.random_range(horizon as f64..h);
        let r = rng.random_range(0.01..0.03) * w;
        cv.ellipse(cx, cy, r, r, c, scene::OTHERS);
    }

    let mut rgb = RgbImage::filled(width, height, [0; 3]);
    for y in 0..height {
        for x in 0..width {
            let px = jittered(&mut rng, cv.rgb[y * width + x], NOISE);
            rgb.set(x, y, px);
        }
    }
    Sample {
        id: format!("synth-{seed}"),
        category: if bridge { Category::Bridge } else { Category::General },
        rgb,
        scene: LabelMap::new(width, height, cv.scene).expect("canvas extents"),
        component: Some(LabelMap::new(width, height, cv.component).expect("canvas extents")),
        split: None,
    }
}

/// `count` scenes with ids `synth-00000`, ... . A `bridge_fraction` share
/// (rounded) contain bridges, spread evenly through the sequence; the rest
/// alternate between the general and urban categories. Bridge scenes declare
/// a split: the first 90% (rounded up) train, the rest test.
pub fn generate_corpus(count: usize, width: usize, height: usize, bridge_fraction: f64, seed: u64) -> Vec<Sample> {
    let n_bridge = (count as f64 * bridge_fraction.clamp(0.0, 1.0)).round() as usize;
    let n_train_bridge = super::blocks::train_count(n_bridge);
    let mut bridges_seen = 0;
    let mut others_seen = 0;
    (0..count)
        .map(|i| {
            // Bridge iff the running quota floor(n_bridge * (i+1) / count) steps up here.
            let is_bridge = (n_bridge * (i + 1)) / count > (n_bridge * i) / count;
            let mut s = generate_synthetic_scene(derive(seed, &[i as u64]), width, height, is_bridge);
            s.id = format!("synth-{i:05}");
            if is_bridge {
                s.split = Some(if bridges_seen < n_train_bridge { Split::Train } else { Split::Test });
                bridges_seen += 1;
            } else {
                s.category = if others_seen % 2 == 0 { Category::General } else { Category::Urban };
                others_seen += 1;
            }
            s
        })
        .collect()
}

fn draw_bridge(cv: &mut Canvas, rng: &mut ChaCha8Rng, horizon: i64) {
    let (w, h) = (cv.w as f64, cv.h as f64);
    let concrete = jittered(rng, [175, 170, 160], 20);
    let steel = jittered(rng, [150, 60, 40], 30);
    let rail = jittered(rng, [230, 220, 80], 25);

    let x0 = (rng.random_range(-0.1..0.2) * w) as i64;
    let x1 = (rng.random_range(0.8..1.1) * w) as i64;
    let deck_top = horizon + (rng.random_range(-0.1..0.1) * h) as i64;
    let thick = ((rng.random_range(0.04..0.08) * h) as i64).max(2);
    let deck_bottom = deck_top + thick;
    let ground = (h * rng.random_range(0.8..1.0)) as i64;

    let piers = rng.random_range(2..=4);
    let pw = ((rng.random_range(0.03..0.06) * w) as i64).max(2);
    for i in 0..piers {
        let f = (i as f64 + 0.5) / piers as f64;
        let px = x0 + ((x1 - x0) as f64 * f) as i64 - pw / 2;
        cv.rect(px, deck_bottom, px + pw, ground, concrete, scene::BRIDGES, component::COLUMNS);
    }
    cv.rect(x0, deck_top, x1, deck_bottom, concrete, scene::BRIDGES, component::BEAMS_SLABS);

    let truss_h = rng.random_range(0.08..0.15) * h;
    let r = (0.008 * w).max(0.6);
    let panels = rng.random_range(3..=6);
    let span = (x1 - x0) as f64 / panels as f64;
    let base = deck_top as f64;
    let top = base - truss_h;
    for i in 0..panels {
        let a = x0 as f64 + span * i as f64;
        let b = a + span;
        let m = (a + b) / 2.0;
        cv.line((a, base), (m, top), r, steel, scene::BRIDGES, component::OTHER_STRUCTURAL);
        cv.line((m, top), (b, base), r, steel, scene::BRIDGES, component::OTHER_STRUCTURAL);
        if i + 1 < panels {
            cv.line((m, top), (m + span, top), r, steel, scene::BRIDGES, component::OTHER_STRUCTURAL);
        }
    }

    let rail_y = deck_top - ((0.03 * h) as i64).max(2);
    let rt = ((0.008 * h) as i64).max(1);
    cv.rect(x0, rail_y, x1, rail_y + rt, rail, scene::BRIDGES, component::OTHER_NONSTRUCTURAL);
    let step = ((0.05 * w) as i64).max(3);
    let mut x = x0;
    while x < x1 {
        cv.rect(x, rail_y, x + rt, deck_top, rail, scene::BRIDGES, component::OTHER_NONSTRUCTURAL);
        x += step;
    }
}
