//! Dataset manifests: one tab-separated record per sample.
//!
//! Columns are `id`, `category`, `split`, `rgb`, `scene`, `component`. Paths
//! are relative to the manifest's directory; `-` marks an absent split or
//! component map. Lines starting with `#` are comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::image::{LabelMap, RgbImage};
use super::sample::{Category, Sample, Split};
use crate::error::{Error, Result};

pub const HEADER: &str = "# id\tcategory\tsplit\trgb\tscene\tcomponent";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub id: String,
    pub category: Category,
    pub split: Option<Split>,
    pub rgb: PathBuf,
    pub scene: PathBuf,
    pub component: Option<PathBuf>,
}

fn optional(field: &str) -> Option<&str> {
    (field != "-").then_some(field)
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(Error::Data(format!(
                "manifest line {}: expected 6 fields, found {}",
                i + 1,
                f.len()
            )));
        }
        out.push(ManifestRecord {
            id: f[0].to_string(),
            category: f[1].parse()?,
            split: optional(f[2]).map(str::parse).transpose()?,
            rgb: f[3].into(),
            scene: f[4].into(),
            component: optional(f[5]).map(PathBuf::from),
        });
    }
    Ok(out)
}

pub fn format_manifest(records: &[ManifestRecord]) -> String {
    let mut s = format!("{HEADER}\n");
    for r in records {
        let path = |p: &Path| p.to_string_lossy().into_owned();
        writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.id,
            r.category,
            r.split.map_or("-", Split::as_str),
            path(&r.rgb),
            path(&r.scene),
            r.component.as_deref().map_or("-".into(), path)
        )
        .expect("writing to a String");
    }
    s
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    parse_manifest(&std::fs::read_to_string(path)?)
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    Ok(std::fs::write(path, format_manifest(records))?)
}

/// Load and validate the sample described by `record`, resolving paths
/// against `base`.
pub fn load_sample(record: &ManifestRecord, base: &Path) -> Result<Sample> {
    let sample = Sample {
        id: record.id.clone(),
        category: record.category,
        rgb: RgbImage::load_png(&base.join(&record.rgb))?,
        scene: LabelMap::load_png(&base.join(&record.scene))?,
        component: record
            .component
            .as_ref()
            .map(|p| LabelMap::load_png(&base.join(p)))
            .transpose()?,
        split: record.split,
    };
    sample.validate()?;
    Ok(sample)
}

/// Load every sample of the manifest at `path`.
pub fn load_dataset(path: &Path) -> Result<Vec<Sample>> {
    let base = path.parent().unwrap_or(Path::new("."));
    read_manifest(path)?
        .iter()
        .map(|r| load_sample(r, base))
        .collect()
}

/// Write `sample` as PNGs under `base/images`, `base/scene` and
/// `base/component`, returning its manifest record.
pub fn save_sample(sample: &Sample, base: &Path) -> Result<ManifestRecord> {
    let file = format!("{}.png", sample.id);
    let rel = |dir: &str| Path::new(dir).join(&file);
    for dir in ["images", "scene", "component"] {
        std::fs::create_dir_all(base.join(dir))?;
    }
    sample.rgb.save_png(&base.join(rel("images")))?;
    sample.scene.save_png(&base.join(rel("scene")))?;
    if let Some(c) = &sample.component {
        c.save_png(&base.join(rel("component")))?;
    }
    Ok(ManifestRecord {
        id: sample.id.clone(),
        category: sample.category,
        split: sample.split,
        rgb: rel("images"),
        scene: rel("scene"),
        component: sample.component.as_ref().map(|_| rel("component")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::generate_synthetic_scene;

    #[test]
    fn text_round_trip() {
        let recs = vec![
            ManifestRecord {
                id: "a".into(),
                category: Category::Urban,
                split: None,
                rgb: "images/a.png".into(),
                scene: "scene/a.png".into(),
                component: None,
            },
            ManifestRecord {
                id: "b".into(),
                category: Category::Bridge,
                split: Some(Split::Test),
                rgb: "images/b.png".into(),
                scene: "scene/b.png".into(),
                component: Some("component/b.png".into()),
            },
        ];
        assert_eq!(parse_manifest(&format_manifest(&recs)).unwrap(), recs);
    }

    #[test]
    fn malformed_lines_are_data_errors() {
        assert!(matches!(parse_manifest("a\tgeneral\t-\tx\n"), Err(Error::Data(_))));
        assert!(matches!(parse_manifest("a\tforest\t-\tx\ty\t-\n"), Err(Error::Data(_))));
    }

    #[test]
    fn samples_round_trip_through_png() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = generate_synthetic_scene(1, 40, 30, true);
        s.split = Some(Split::Train);
        let rec = save_sample(&s, dir.path()).unwrap();
        let path = dir.path().join("manifest.tsv");
        write_manifest(&path, &[rec]).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), vec![s]);
    }
}
