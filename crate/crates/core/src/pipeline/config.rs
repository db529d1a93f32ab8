use std::fmt::Write as _;

use crate::data::augment::CROP_SIZE;
use crate::error::{Error, Result};
use crate::nn::ArchitectureSpec;
use crate::rng::hash_str;
use crate::zoo::{self, ArchName, BATCH_SIZE};

/// Scene classifier: 50 cycles at 1e-4, 10 at 1e-5, 5 at 1e-6.
pub const SCENE_SCHEDULE: [(u64, f64); 3] = [(50, 1e-4), (10, 1e-5), (5, 1e-6)];

/// Component classifiers: 500 cycles at 1e-4, 180 at 1e-5, 20 at 1e-6.
pub const COMPONENT_SCHEDULE: [(u64, f64); 3] = [(500, 1e-4), (180, 1e-5), (20, 1e-6)];

/// Cycles between periodic snapshots.
pub const SNAPSHOT_EVERY: u64 = 10;

/// Piecewise-constant learning rate over cycles.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    segments: Vec<(u64, f64)>,
}

impl Schedule {
    pub fn new(segments: Vec<(u64, f64)>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Config("schedule has no segments".into()));
        }
        for &(n, lr) in &segments {
            if n == 0 {
                return Err(Error::Config("schedule segments need a positive cycle count".into()));
            }
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("bad learning rate {lr}")));
            }
        }
        Ok(Self { segments })
    }

    pub fn scene() -> Self {
        Self::new(SCENE_SCHEDULE.to_vec()).expect("valid")
    }

    pub fn component() -> Self {
        Self::new(COMPONENT_SCHEDULE.to_vec()).expect("valid")
    }

    pub fn segments(&self) -> &[(u64, f64)] {
        &self.segments
    }

    pub fn total_cycles(&self) -> u64 {
        self.segments.iter().map(|s| s.0).sum()
    }

    /// Learning rate of 0-based cycle `cycle`; `None` past the end.
    pub fn lr_at(&self, cycle: u64) -> Option<f64> {
        let mut end = 0;
        for &(n, lr) in &self.segments {
            end += n;
            if cycle < end {
                return Some(lr);
            }
        }
        None
    }

    /// Cycle counts (1-based) at which each segment ends.
    pub fn boundaries(&self) -> Vec<u64> {
        self.segments
            .iter()
            .scan(0, |acc, s| {
                *acc += s.0;
                Some(*acc)
            })
            .collect()
    }

    /// `cycles:lr` pairs joined by commas, e.g. `50:0.0001,10:0.00001`.
    pub fn to_text(&self) -> String {
        self.segments
            .iter()
            .map(|(n, lr)| format!("{n}:{lr:e}"))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad schedule `{text}`; expected cycles:lr[,cycles:lr...]"));
        let segments = text
            .split(',')
            .map(|part| {
                let (n, lr) = part.trim().split_once(':').ok_or_else(bad)?;
                Ok((n.trim().parse().map_err(|_| bad())?, lr.trim().parse().map_err(|_| bad())?))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(segments)
    }
}

/// Named architecture or an explicit description.
#[derive(Clone, Debug, PartialEq)]
pub enum ArchChoice {
    Zoo(ArchName),
    Custom(ArchitectureSpec),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub arch: ArchChoice,
    pub in_channels: usize,
    pub n_classes: usize,
    pub schedule: Schedule,
    pub batch_size: usize,
    /// Overrides the architecture's weight decay.
    pub weight_decay: Option<f64>,
    /// Overrides the keep probability of the first head layer.
    pub dropout_keep: Option<f64>,
    pub seed: u64,
    /// Median-frequency class balancing; uniform weights when off.
    pub balance: bool,
    /// Random geometric and colour augmentation; whole images are used when off.
    pub augment: bool,
    pub crop_size: usize,
    pub snapshot_every: u64,
}

impl TrainConfig {
    fn base(arch: ArchName, in_channels: usize, n_classes: usize, schedule: Schedule) -> Self {
        Self {
            arch: ArchChoice::Zoo(arch),
            in_channels,
            n_classes,
            schedule,
            batch_size: BATCH_SIZE,
            weight_decay: None,
            dropout_keep: None,
            seed: 0,
            balance: true,
            augment: true,
            crop_size: CROP_SIZE,
            snapshot_every: SNAPSHOT_EVERY,
        }
    }

    /// ResNet23 scene classifier on rgb, 10 classes, scene schedule.
    pub fn scene_default() -> Self {
        Self::base(ArchName::Resnet23, 3, crate::classes::N_SCENE, Schedule::scene())
    }

    /// ResNet23 component classifier, 5 classes, component schedule. Scene-aware
    /// training uses 12 input channels, naive training 3.
    pub fn component_default(scene_aware: bool) -> Self {
        let ch = if scene_aware { 12 } else { 3 };
        Self::base(ArchName::Resnet23, ch, crate::classes::N_COMPONENT, Schedule::component())
    }

    /// Architecture with the config's overrides applied.
    pub fn resolve_spec(&self) -> Result<ArchitectureSpec> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.crop_size == 0 {
            return Err(Error::Config("crop size must be positive".into()));
        }
        let mut spec = match &self.arch {
            ArchChoice::Zoo(name) => zoo::build(*name, self.in_channels, self.n_classes)?,
            ArchChoice::Custom(spec) => {
                if (spec.in_channels, spec.n_classes) != (self.in_channels, self.n_classes) {
                    return Err(Error::Config(format!(
                        "custom architecture is {}->{} but config asks for {}->{}",
                        spec.in_channels, spec.n_classes, self.in_channels, self.n_classes
                    )));
                }
                spec.clone()
            }
        };
        spec.batch_size = self.batch_size;
        if let Some(l) = self.weight_decay {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("bad weight decay {l}")));
            }
            spec.weight_decay = l;
        }
        if let Some(k) = self.dropout_keep {
            if !(k > 0.0 && k <= 1.0) {
                return Err(Error::Config(format!("dropout keep must be in (0, 1], got {k}")));
            }
            if let Some(first) = spec.head.first_mut() {
                first.keep_prob = k;
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Canonical text of every setting that influences training.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        match &self.arch {
            ArchChoice::Zoo(a) => writeln!(s, "arch={a}"),
            ArchChoice::Custom(spec) => writeln!(s, "arch=custom:{}", hash_str(&spec.to_text())),
        }
        .expect("writing to a String");
        let opt = |v: Option<f64>| v.map_or("default".to_string(), |v| v.to_string());
        let _ = writeln!(s, "in_channels={}", self.in_channels);
        let _ = writeln!(s, "classes={}", self.n_classes);
        let _ = writeln!(s, "schedule={}", self.schedule.to_text());
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "weight_decay={}", opt(self.weight_decay));
        let _ = writeln!(s, "dropout_keep={}", opt(self.dropout_keep));
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "balance={}", self.balance);
        let _ = writeln!(s, "augment={}", self.augment);
        let _ = writeln!(s, "crop_size={}", self.crop_size);
        let _ = writeln!(s, "snapshot_every={}", self.snapshot_every);
        s
    }

    pub fn hash(&self) -> u64 {
        hash_str(&self.to_text())
    }
}
