use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::slide_store::mask::AnnotationMask;
use crate::slide_store::pyramid::{open_slide, SlidePyramid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlideLabel {
    Normal,
    Tumor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Argument(format!("unknown split '{other}'"))),
        }
    }
}

/// One slide of a dataset. Paths are relative to the manifest file unless absolute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub slide_id: String,
    pub image_path: PathBuf,
    pub mask_path: Option<PathBuf>,
    pub label: SlideLabel,
    pub split: Split,
    /// False when some tumor in the slide is not annotated; normal patches are
    /// then never sampled from it.
    pub exhaustive_annotations: bool,
    pub mpp: f64,
}

#[derive(Clone, Debug, Default)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
    base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let manifest = Self {
            entries,
            base_dir: base_dir.into(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.slide_id.as_str()) {
                return Err(Error::Format(format!("duplicate slide_id '{}'", e.slide_id)));
            }
            if !e.exhaustive_annotations && e.label == SlideLabel::Normal {
                return Err(Error::Format(format!(
                    "slide '{}': only tumor slides may have non-exhaustive annotations",
                    e.slide_id
                )));
            }
            if !(e.mpp.is_finite() && e.mpp > 0.0) {
                return Err(Error::Format(format!(
                    "slide '{}': mpp must be positive, got {}",
                    e.slide_id, e.mpp
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries: Vec<ManifestEntry> =
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(entries, base_dir)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.entries).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn get(&self, slide_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.slide_id == slide_id)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn open_slide(&self, entry: &ManifestEntry) -> Result<SlidePyramid> {
        open_slide(&self.resolve(&entry.image_path))
    }

    /// Loads the entry's mask. A tumor slide's mask must contain tumor pixels;
    /// entries without a mask yield `None`.
    pub fn load_mask(&self, entry: &ManifestEntry) -> Result<Option<AnnotationMask>> {
        let Some(p) = &entry.mask_path else {
            return Ok(None);
        };
        let mask = AnnotationMask::load(&self.resolve(p))?;
        if mask.slide_id() != entry.slide_id {
            return Err(Error::Format(format!(
                "mask {} belongs to slide '{}', manifest says '{}'",
                p.display(),
                mask.slide_id(),
                entry.slide_id
            )));
        }
        if entry.label == SlideLabel::Tumor && mask.is_empty() {
            return Err(Error::Format(format!(
                "tumor slide '{}' has an empty mask",
                entry.slide_id
            )));
        }
        Ok(Some(mask))
    }
}
