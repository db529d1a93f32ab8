//! Declarative network descriptions and their line-oriented text form.
//!
//! ```text
//! name farabet
//! in_channels 3
//! classes 10
//! batch_size 10
//! weight_decay 0
//! pyramid_levels 3
//! layer shared Conv0 kind=conv filter=7 channels=16 act=relu bn=true keep=1
//! layer shared Maxpool0 kind=maxpool size=2
//! layer head FCL0 kind=fcl width=1024 act=relu bn=true keep=0.8
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    /// Square `filter × filter` same-padded convolution.
    Conv { filter: usize, channels: usize },
    MaxPool { size: usize },
    /// Fully-connected layer applied independently at every pixel.
    Fcl { width: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub activation: Activation,
    pub batch_norm: bool,
    /// Dropout keep probability in `(0, 1]`; `1` disables dropout.
    pub keep_prob: f64,
    /// Earlier layer whose output is added before normalization.
    pub shortcut: Option<String>,
}

impl LayerSpec {
    pub fn conv(name: &str, filter: usize, channels: usize) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Conv { filter, channels },
            activation: Activation::Relu,
            batch_norm: true,
            keep_prob: 1.0,
            shortcut: None,
        }
    }

    pub fn maxpool(name: &str, size: usize) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::MaxPool { size },
            activation: Activation::None,
            batch_norm: false,
            keep_prob: 1.0,
            shortcut: None,
        }
    }

    pub fn fcl(name: &str, width: usize) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Fcl { width },
            activation: Activation::Relu,
            batch_norm: true,
            keep_prob: 1.0,
            shortcut: None,
        }
    }

    /// Output layer: no normalization, no activation.
    pub fn logits(name: &str, width: usize) -> Self {
        Self {
            activation: Activation::None,
            batch_norm: false,
            ..Self::fcl(name, width)
        }
    }

    pub fn with_shortcut(mut self, source: &str) -> Self {
        self.shortcut = Some(source.into());
        self
    }

    pub fn with_keep(mut self, keep_prob: f64) -> Self {
        self.keep_prob = keep_prob;
        self
    }

    pub fn with_batch_norm(mut self, on: bool) -> Self {
        self.batch_norm = on;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn has_params(&self) -> bool {
        !matches!(self.kind, LayerKind::MaxPool { .. })
    }

    /// Output channel count given the input channel count.
    pub fn out_channels(&self, input: usize) -> usize {
        match self.kind {
            LayerKind::Conv { channels, .. } => channels,
            LayerKind::MaxPool { .. } => input,
            LayerKind::Fcl { width } => width,
        }
    }
}

/// A whole multi-scale network: shared trunk, per-pixel head and training defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchitectureSpec {
    pub name: String,
    pub in_channels: usize,
    pub n_classes: usize,
    pub batch_size: usize,
    /// λ of the L2 penalty on conv and FCL weights.
    pub weight_decay: f64,
    /// Pyramid levels whose trunk features are concatenated (1 = single scale).
    pub pyramid_levels: usize,
    pub shared: Vec<LayerSpec>,
    pub head: Vec<LayerSpec>,
}

impl ArchitectureSpec {
    /// Shared layers followed by head layers; parameter storage uses this order.
    pub fn layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.shared.iter().chain(&self.head)
    }

    pub fn layer_count(&self) -> usize {
        self.shared.len() + self.head.len()
    }

    /// Output channels of every shared layer.
    pub fn shared_channels(&self) -> Vec<usize> {
        let mut c = self.in_channels;
        self.shared
            .iter()
            .map(|l| {
                c = l.out_channels(c);
                c
            })
            .collect()
    }

    /// Channels produced by the trunk at one scale.
    pub fn trunk_channels(&self) -> usize {
        self.shared_channels().last().copied().unwrap_or(self.in_channels)
    }

    /// Width of the concatenated multi-scale feature vector.
    pub fn feature_channels(&self) -> usize {
        self.pyramid_levels * self.trunk_channels()
    }

    /// Total pooling factor of the trunk.
    pub fn downsampling(&self) -> usize {
        self.shared
            .iter()
            .map(|l| match l.kind {
                LayerKind::MaxPool { size } => size,
                _ => 1,
            })
            .product()
    }

    /// Input channels of every layer in [`ArchitectureSpec::layers`] order.
    pub fn layer_inputs(&self) -> Vec<usize> {
        let mut inputs = Vec::with_capacity(self.layer_count());
        let mut c = self.in_channels;
        for l in &self.shared {
            inputs.push(c);
            c = l.out_channels(c);
        }
        let mut c = self.feature_channels();
        for l in &self.head {
            inputs.push(c);
            c = l.out_channels(c);
        }
        inputs
    }

    /// Keep probability of the first head layer.
    pub fn dropout_keep(&self) -> f64 {
        self.head.first().map_or(1.0, |l| l.keep_prob)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Spec(format!("{}: {m}", self.name)));
        if self.in_channels == 0 || self.n_classes == 0 {
            return bad("channel and class counts must be positive".into());
        }
        if !(1..=3).contains(&self.pyramid_levels) {
            return bad(format!("pyramid_levels must be 1..=3, got {}", self.pyramid_levels));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay {} must be finite and nonnegative", self.weight_decay));
        }
        let mut seen = HashMap::new();
        for (i, l) in self.layers().enumerate() {
            if l.name.is_empty() || l.name.contains(char::is_whitespace) {
                return bad(format!("layer name `{}` must be a single token", l.name));
            }
            if seen.insert(l.name.as_str(), i).is_some() {
                return bad(format!("duplicate layer name {}", l.name));
            }
            if !(l.keep_prob > 0.0 && l.keep_prob <= 1.0) {
                return bad(format!("{}: keep probability {} outside (0, 1]", l.name, l.keep_prob));
            }
            match l.kind {
                LayerKind::Conv { filter, channels } => {
                    if filter % 2 == 0 || channels == 0 {
                        return bad(format!("{}: conv needs an odd filter and channels > 0", l.name));
                    }
                }
                LayerKind::MaxPool { size } => {
                    if size == 0 {
                        return bad(format!("{}: pool size must be positive", l.name));
                    }
                    if l.batch_norm || l.activation != Activation::None || l.keep_prob < 1.0 {
                        return bad(format!("{}: pooling layers carry no norm, activation or dropout", l.name));
                    }
                }
                LayerKind::Fcl { width } => {
                    if width == 0 {
                        return bad(format!("{}: FCL width must be positive", l.name));
                    }
                }
            }
        }
        if let Some(l) = self.shared.iter().find(|l| matches!(l.kind, LayerKind::Fcl { .. })) {
            return bad(format!("{} is an FCL inside the shared CNN", l.name));
        }
        if let Some(l) = self.head.iter().find(|l| !matches!(l.kind, LayerKind::Fcl { .. })) {
            return bad(format!("{} is not an FCL but sits in the head", l.name));
        }
        let final_width = match self.head.last() {
            Some(l) => l.out_channels(0),
            None => self.feature_channels(),
        };
        if final_width != self.n_classes {
            return bad(format!(
                "network emits {final_width} channels but has {} classes",
                self.n_classes
            ));
        }
        self.check_shortcuts(&self.shared, self.in_channels)?;
        self.check_shortcuts(&self.head, self.feature_channels())?;
        Ok(())
    }

    fn check_shortcuts(&self, list: &[LayerSpec], in_channels: usize) -> Result<()> {
        let mut chans = Vec::with_capacity(list.len());
        // Pool count before each layer's output, so sources stay at one scale.
        let mut scale = Vec::with_capacity(list.len());
        let mut c = in_channels;
        let mut pools = 0;
        for l in list {
            c = l.out_channels(c);
            if matches!(l.kind, LayerKind::MaxPool { .. }) {
                pools += 1;
            }
            chans.push(c);
            scale.push(pools);
        }
        for (i, l) in list.iter().enumerate() {
            let Some(src) = &l.shortcut else { continue };
            let Some(j) = list.iter().position(|s| &s.name == src) else {
                return Err(Error::Spec(format!(
                    "{}: shortcut source `{src}` is not an earlier layer",
                    l.name
                )));
            };
            if j >= i {
                return Err(Error::Spec(format!(
                    "{}: shortcut source `{src}` does not precede it",
                    l.name
                )));
            }
            if scale[j] != scale[i] || matches!(l.kind, LayerKind::MaxPool { .. }) {
                return Err(Error::Spec(format!(
                    "{}: shortcut from `{src}` crosses a pooling boundary",
                    l.name
                )));
            }
            if chans[j] > chans[i] {
                return Err(Error::Spec(format!(
                    "{}: shortcut source `{src}` is wider ({}) than the target ({})",
                    l.name, chans[j], chans[i]
                )));
            }
        }
        Ok(())
    }

    /// Index of each layer's shortcut source within its own list (shared or head).
    pub(crate) fn shortcut_indices(list: &[LayerSpec]) -> Vec<Option<usize>> {
        list.iter()
            .map(|l| {
                l.shortcut
                    .as_ref()
                    .and_then(|s| list.iter().position(|x| &x.name == s))
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "name {}", self.name);
        let _ = writeln!(s, "in_channels {}", self.in_channels);
        let _ = writeln!(s, "classes {}", self.n_classes);
        let _ = writeln!(s, "batch_size {}", self.batch_size);
        let _ = writeln!(s, "weight_decay {}", self.weight_decay);
        let _ = writeln!(s, "pyramid_levels {}", self.pyramid_levels);
        for (section, list) in [("shared", &self.shared), ("head", &self.head)] {
            for l in list {
                let _ = write!(s, "layer {section} {}", l.name);
                match l.kind {
                    LayerKind::Conv { filter, channels } => {
                        let _ = write!(s, " kind=conv filter={filter} channels={channels}");
                    }
                    LayerKind::MaxPool { size } => {
                        let _ = write!(s, " kind=maxpool size={size}");
                    }
                    LayerKind::Fcl { width } => {
                        let _ = write!(s, " kind=fcl width={width}");
                    }
                }
                if l.has_params() {
                    let act = match l.activation {
                        Activation::Relu => "relu",
                        Activation::None => "none",
                    };
                    let _ = write!(s, " act={act} bn={} keep={}", l.batch_norm, l.keep_prob);
                }
                if let Some(src) = &l.shortcut {
                    let _ = write!(s, " shortcut={src}");
                }
                s.push('\n');
            }
        }
        s
    }

    /// Parse the text form produced by [`ArchitectureSpec::to_text`] and validate it.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut spec = ArchitectureSpec {
            name: String::new(),
            in_channels: 0,
            n_classes: 0,
            batch_size: 10,
            weight_decay: 0.0,
            pyramid_levels: 3,
            shared: Vec::new(),
            head: Vec::new(),
        };
        let err = |n: usize, m: &str| Error::Spec(format!("line {}: {m}", n + 1));
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut tok = line.split_whitespace();
            let key = tok.next().unwrap_or_default();
            let mut value = || tok.next().ok_or_else(|| err(n, "missing value"));
            match key {
                "name" => spec.name = value()?.to_string(),
                "in_channels" => spec.in_channels = parse_num(value()?).map_err(|m| err(n, &m))?,
                "classes" => spec.n_classes = parse_num(value()?).map_err(|m| err(n, &m))?,
                "batch_size" => spec.batch_size = parse_num(value()?).map_err(|m| err(n, &m))?,
                "weight_decay" => spec.weight_decay = parse_num(value()?).map_err(|m| err(n, &m))?,
                "pyramid_levels" => {
                    spec.pyramid_levels = parse_num(value()?).map_err(|m| err(n, &m))?
                }
                "layer" => {
                    let section = value()?.to_string();
                    let layer = parse_layer(line).map_err(|m| err(n, &m))?;
                    match section.as_str() {
                        "shared" => spec.shared.push(layer),
                        "head" => spec.head.push(layer),
                        other => return Err(err(n, &format!("unknown section `{other}`"))),
                    }
                }
                other => return Err(err(n, &format!("unknown key `{other}`"))),
            }
        }
        if spec.name.is_empty() {
            return Err(Error::Spec("missing `name`".into()));
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn parse_num<N: std::str::FromStr>(s: &str) -> std::result::Result<N, String> {
    s.parse().map_err(|_| format!("`{s}` is not a valid number"))
}

fn parse_layer(line: &str) -> std::result::Result<LayerSpec, String> {
    let mut tok = line.split_whitespace().skip(2);
    let name = tok.next().ok_or("layer needs a name")?.to_string();
    let mut fields = HashMap::new();
    for t in tok {
        let (k, v) = t.split_once('=').ok_or_else(|| format!("`{t}` is not key=value"))?;
        if fields.insert(k, v).is_some() {
            return Err(format!("duplicate field `{k}`"));
        }
    }
    let mut take = |k: &str| fields.remove(k);
    fn need<'a>(name: &str, v: Option<&'a str>, k: &str) -> std::result::Result<&'a str, String> {
        v.ok_or_else(|| format!("{name}: missing `{k}`"))
    }
    let kind = match need(&name, take("kind"), "kind")? {
        "conv" => LayerKind::Conv {
            filter: parse_num(need(&name, take("filter"), "filter")?)?,
            channels: parse_num(need(&name, take("channels"), "channels")?)?,
        },
        "maxpool" => LayerKind::MaxPool {
            size: parse_num(need(&name, take("size"), "size")?)?,
        },
        "fcl" => LayerKind::Fcl {
            width: parse_num(need(&name, take("width"), "width")?)?,
        },
        other => return Err(format!("{name}: unknown layer kind `{other}`")),
    };
    let has_params = !matches!(kind, LayerKind::MaxPool { .. });
    let activation = match take("act") {
        Some("relu") => Activation::Relu,
        Some("none") => Activation::None,
        None if !has_params => Activation::None,
        None => Activation::Relu,
        Some(other) => return Err(format!("{name}: unknown activation `{other}`")),
    };
    let batch_norm = match take("bn") {
        Some(v) => v.parse().map_err(|_| format!("{name}: bn must be true or false"))?,
        None => has_params,
    };
    let keep_prob = match take("keep") {
        Some(v) => parse_num(v)?,
        None => 1.0,
    };
    let shortcut = take("shortcut").map(str::to_string);
    if let Some(k) = fields.keys().next() {
        return Err(format!("{name}: unknown field `{k}`"));
    }
    Ok(LayerSpec {
        name,
        kind,
        activation,
        batch_norm,
        keep_prob,
        shortcut,
    })
}

/// Number of weight entries: conv filter elements plus FCL matrix elements.
/// Biases and batch-norm parameters are not counted, and the shared trunk is
/// counted once although it runs at every pyramid level.
pub fn count_parameters(spec: &ArchitectureSpec) -> u64 {
    spec.layers()
        .zip(spec.layer_inputs())
        .map(|(l, cin)| match l.kind {
            LayerKind::Conv { filter, channels } => (filter * filter * cin * channels) as u64,
            LayerKind::Fcl { width } => (cin * width) as u64,
            LayerKind::MaxPool { .. } => 0,
        })
        .sum()
}
