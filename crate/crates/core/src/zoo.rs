//! The named multi-scale architectures.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::multiscale::DEFAULT_LEVELS;
use crate::nn::{ArchitectureSpec, LayerSpec};

/// Keep probability of the dropout after the first head layer.
pub const HEAD_KEEP: f64 = 0.8;
pub const HEAD_WIDTH: usize = 1024;
pub const BATCH_SIZE: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ArchName {
    Farabet,
    Vgg19Part,
    Resnet45,
    Resnet23,
}

impl ArchName {
    pub const ALL: [ArchName; 4] = [
        ArchName::Farabet,
        ArchName::Vgg19Part,
        ArchName::Resnet45,
        ArchName::Resnet23,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchName::Farabet => "farabet",
            ArchName::Vgg19Part => "vgg19_part",
            ArchName::Resnet45 => "resnet45",
            ArchName::Resnet23 => "resnet23",
        }
    }
}

impl fmt::Display for ArchName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArchName::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::UnknownArch(s.to_string()))
    }
}

fn head(n_classes: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::fcl("FCL0", HEAD_WIDTH).with_keep(HEAD_KEEP),
        LayerSpec::logits("FCL1", n_classes),
    ]
}

/// A run of 3×3 convolutions `Conv{first}..=Conv{first+count-1}` in which
/// every second layer (counting from `first + 1`) adds the output two layers
/// back, the first of them reading `entry`.
fn residual_run(first: usize, count: usize, channels: usize, entry: &str) -> Vec<LayerSpec> {
    (first..first + count)
        .map(|i| {
            let layer = LayerSpec::conv(&format!("Conv{i}"), 3, channels);
            if (i - first) % 2 == 1 {
                let source = if i == first + 1 {
                    entry.to_string()
                } else {
                    format!("Conv{}", i - 2)
                };
                layer.with_shortcut(&source)
            } else {
                layer
            }
        })
        .collect()
}

fn farabet() -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv("Conv0", 7, 16),
        LayerSpec::maxpool("Maxpool0", 2),
        LayerSpec::conv("Conv1", 7, 64),
        LayerSpec::maxpool("Maxpool1", 2),
        LayerSpec::conv("Conv2", 7, 256),
    ]
}

fn vgg19_part() -> Vec<LayerSpec> {
    let mut out = vec![
        LayerSpec::conv("Conv0", 3, 64),
        LayerSpec::conv("Conv1", 3, 64),
        LayerSpec::maxpool("Maxpool0", 2),
        LayerSpec::conv("Conv2", 3, 128),
        LayerSpec::conv("Conv3", 3, 128),
        LayerSpec::maxpool("Maxpool1", 2),
    ];
    out.extend((4..8).map(|i| LayerSpec::conv(&format!("Conv{i}"), 3, 256)));
    out
}

fn resnet45() -> Vec<LayerSpec> {
    let mut out = vec![LayerSpec::conv("Conv0", 7, 16)];
    out.extend(residual_run(1, 14, 16, "Conv0"));
    out.push(LayerSpec::maxpool("Maxpool0", 2));
    out.extend(residual_run(15, 14, 32, "Maxpool0"));
    out.push(LayerSpec::maxpool("Maxpool1", 2));
    out.extend(residual_run(29, 14, 64, "Maxpool1"));
    out
}

fn resnet23() -> Vec<LayerSpec> {
    let mut out = vec![
        LayerSpec::conv("Conv0", 7, 64),
        LayerSpec::maxpool("Maxpool0", 2),
    ];
    out.extend(residual_run(1, 8, 64, "Maxpool0"));
    out.push(LayerSpec::maxpool("Maxpool1", 2));
    out.extend(residual_run(9, 12, 128, "Maxpool1"));
    out
}

/// Build a named architecture for `in_channels` inputs and `n_classes` outputs.
pub fn build(name: ArchName, in_channels: usize, n_classes: usize) -> Result<ArchitectureSpec> {
    let (shared, weight_decay) = match name {
        ArchName::Farabet => (farabet(), 0.0),
        ArchName::Vgg19Part => (vgg19_part(), 1e-4),
        ArchName::Resnet45 => (resnet45(), 1e-4),
        ArchName::Resnet23 => (resnet23(), 1e-4),
    };
    let spec = ArchitectureSpec {
        name: name.as_str().to_string(),
        in_channels,
        n_classes,
        batch_size: BATCH_SIZE,
        weight_decay,
        pyramid_levels: DEFAULT_LEVELS,
        shared,
        head: head(n_classes),
    };
    spec.validate()?;
    Ok(spec)
}

/// Widely quoted weight count of ResNet45 (3 channels, 10 classes). It is
/// reproduced only if the first head layer reads 64 features, not the
/// 192-feature concatenation of three scales this crate builds (863,536).
pub const RESNET45_QUOTED_COUNT: u64 = 732_464;

/// Remark on a count that differs from a widely quoted figure.
pub fn count_note(name: ArchName, in_channels: usize, n_classes: usize) -> Option<String> {
    (name == ArchName::Resnet45 && in_channels == 3 && n_classes == 10).then(|| {
        format!(
            "note: the widely quoted count for resnet45 is {RESNET45_QUOTED_COUNT}, which matches a \
             64-feature FCL0 input; with 3-scale concatenation (192 features) the count is the one above"
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{count_parameters, LayerKind};

    #[test]
    fn names_round_trip() {
        for a in ArchName::ALL {
            assert_eq!(a.to_string().parse::<ArchName>().unwrap(), a);
        }
        assert!(matches!("resnet99".parse::<ArchName>(), Err(Error::UnknownArch(_))));
    }

    #[test]
    fn layer_inventories() {
        let count = |s: &ArchitectureSpec, f: fn(&LayerKind) -> bool| s.layers().filter(|l| f(&l.kind)).count();
        let conv = |k: &LayerKind| matches!(k, LayerKind::Conv { .. });
        let pool = |k: &LayerKind| matches!(k, LayerKind::MaxPool { .. });
        let fcl = |k: &LayerKind| matches!(k, LayerKind::Fcl { .. });
        let f = build(ArchName::Farabet, 3, 10).unwrap();
        assert_eq!((count(&f, conv), count(&f, pool), count(&f, fcl)), (3, 2, 2));
        let r = build(ArchName::Resnet45, 3, 10).unwrap();
        assert_eq!((count(&r, conv), count(&r, pool), count(&r, fcl)), (43, 2, 2));
        let r = build(ArchName::Resnet23, 3, 10).unwrap();
        assert_eq!(count(&r, conv), 21);
        let v = build(ArchName::Vgg19Part, 3, 10).unwrap();
        assert_eq!(count(&v, conv), 8);
    }

    #[test]
    fn resnet23_shortcuts() {
        let r = build(ArchName::Resnet23, 3, 10).unwrap();
        let pairs: Vec<(String, String)> = r
            .shared
            .iter()
            .filter_map(|l| l.shortcut.clone().map(|s| (l.name.clone(), s)))
            .collect();
        let expected = [
            ("Conv2", "Maxpool0"),
            ("Conv4", "Conv2"),
            ("Conv6", "Conv4"),
            ("Conv8", "Conv6"),
            ("Conv10", "Maxpool1"),
            ("Conv12", "Conv10"),
            ("Conv14", "Conv12"),
            ("Conv16", "Conv14"),
            ("Conv18", "Conv16"),
            ("Conv20", "Conv18"),
        ];
        let expected: Vec<(String, String)> =
            expected.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        assert_eq!(pairs, expected);
    }

    #[test]
    fn resnet45_shortcuts() {
        let r = build(ArchName::Resnet45, 3, 10).unwrap();
        let find = |n: &str| r.shared.iter().find(|l| l.name == n).unwrap().shortcut.clone();
        assert_eq!(find("Conv2").as_deref(), Some("Conv0"));
        assert_eq!(find("Conv14").as_deref(), Some("Conv12"));
        assert_eq!(find("Conv16").as_deref(), Some("Maxpool0"));
        assert_eq!(find("Conv30").as_deref(), Some("Maxpool1"));
        assert_eq!(find("Conv42").as_deref(), Some("Conv40"));
        assert_eq!(find("Conv15"), None);
    }

    #[test]
    fn weight_counts() {
        let c = |a, i, k| count_parameters(&build(a, i, k).unwrap());
        assert_eq!(c(ArchName::Farabet, 3, 10), 1_652_016);
        assert_eq!(c(ArchName::Resnet23, 3, 10), 2_403_520);
        assert_eq!(c(ArchName::Resnet23, 3, 5), 2_398_400);
        assert_eq!(c(ArchName::Resnet23, 12, 5), 2_426_624);
        assert_eq!(c(ArchName::Resnet45, 3, 10), 863_536);
    }

    #[test]
    fn head_settings() {
        for a in ArchName::ALL {
            let s = build(a, 3, 10).unwrap();
            assert_eq!(s.head[0].keep_prob, 0.8);
            assert_eq!(s.batch_size, 10);
            assert!(s.shared.iter().all(|l| !l.has_params() || l.batch_norm));
            let expected = if a == ArchName::Farabet { 0.0 } else { 1e-4 };
            assert_eq!(s.weight_decay, expected);
        }
    }
}
