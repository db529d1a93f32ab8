//! Translation of source-dataset label vocabularies into scene classes.
//!
//! A [`RemapTable`] maps source tags ("Sky", "Tree", ...) to target class
//! indices. A [`Legend`] names the numeric classes of one source dataset. The
//! two combine into a [`LabelMapping`], a byte lookup applied to label maps;
//! source classes without an entry become [`IGNORE`].

use std::collections::BTreeMap;
use std::path::Path;

use super::image::LabelMap;
use crate::error::{Error, Result};
use crate::optim::IGNORE;

/// Tag table shipped with the crate, covering the Stanford Background, SIFT
/// Flow, SYNTHIA and CamVid vocabularies.
pub const SCENE_REMAP_TSV: &str = include_str!("../../data/scene_remap.tsv");

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

fn two_fields(line: &str, n: usize) -> Result<(&str, &str)> {
    line.split_once('\t')
        .map(|(a, b)| (a.trim(), b.trim()))
        .ok_or_else(|| Error::Data(format!("line {n}: expected two tab-separated fields")))
}

/// Source tag → target class index.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RemapTable {
    entries: BTreeMap<String, u8>,
}

impl RemapTable {
    /// Parse `tag <TAB> index` lines; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in data_lines(text) {
            let (tag, idx) = two_fields(line, n)?;
            let idx: u8 = idx
                .parse()
                .ok()
                .filter(|&i| i != IGNORE)
                .ok_or_else(|| Error::Data(format!("line {n}: bad class index `{idx}`")))?;
            if entries.insert(tag.to_string(), idx).is_some() {
                return Err(Error::Data(format!("line {n}: duplicate tag `{tag}`")));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The shipped scene table.
    pub fn scene_default() -> Self {
        Self::parse(SCENE_REMAP_TSV).expect("shipped table parses")
    }

    pub fn get(&self, tag: &str) -> Option<u8> {
        self.entries.get(tag).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Numeric class index → tag, for one source dataset.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Legend {
    names: BTreeMap<u8, String>,
}

impl Legend {
    /// Parse `index <TAB> tag` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut names = BTreeMap::new();
        for (n, line) in data_lines(text) {
            let (idx, tag) = two_fields(line, n)?;
            let idx: u8 = idx
                .parse()
                .map_err(|_| Error::Data(format!("line {n}: bad source index `{idx}`")))?;
            if names.insert(idx, tag.to_string()).is_some() {
                return Err(Error::Data(format!("line {n}: duplicate index {idx}")));
            }
        }
        Ok(Self { names })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Byte-to-byte label translation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMapping {
    lut: [u8; 256],
}

impl LabelMapping {
    /// Explicit `(source, target)` pairs; every other value maps to IGNORE.
    pub fn new(pairs: &[(u8, u8)]) -> Self {
        let mut lut = [IGNORE; 256];
        for &(s, t) in pairs {
            lut[s as usize] = t;
        }
        Self { lut }
    }

    /// Values already in the target vocabulary: `0..classes` pass through.
    pub fn identity(classes: usize) -> Self {
        let pairs: Vec<(u8, u8)> = (0..classes.min(255) as u8).map(|c| (c, c)).collect();
        Self::new(&pairs)
    }

    /// Resolve a source legend through a tag table. Legend entries whose tag
    /// is absent from the table are ignored.
    pub fn from_table(table: &RemapTable, legend: &Legend) -> Self {
        let pairs: Vec<(u8, u8)> = legend
            .names
            .iter()
            .filter_map(|(&idx, tag)| table.get(tag).map(|t| (idx, t)))
            .collect();
        Self::new(&pairs)
    }

    pub fn map(&self, label: u8) -> u8 {
        self.lut[label as usize]
    }
}

/// Apply `mapping` to every pixel.
pub fn remap_labels(map: &LabelMap, mapping: &LabelMapping) -> LabelMap {
    let data = map.data().iter().map(|&l| mapping.map(l)).collect();
    LabelMap::new(map.width(), map.height(), data).expect("same extents")
}
