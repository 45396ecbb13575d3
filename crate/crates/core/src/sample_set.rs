//! Candidate collections for one scene and the JSON manifest that describes them.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::image::{load_image, save_png, BitDepth, Image, ImageError};

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub id: String,
    pub image: Image,
}

impl Candidate {
    pub fn new(id: impl Into<String>, image: Image) -> Self {
        Self {
            id: id.into(),
            image,
        }
    }
}

impl AsRef<Image> for Candidate {
    fn as_ref(&self) -> &Image {
        &self.image
    }
}

/// On-disk manifest. Relative paths resolve against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scene_id: String,
    pub reference: Option<String>,
    pub candidates: Vec<ManifestEntry>,
    /// Ground-truth quality order (best first), present on degradation ladders.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_order: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
}

/// Candidate SR images for one scene plus an optional reference.
#[derive(Clone, Debug)]
pub struct SampleSet {
    pub scene_id: String,
    candidates: Vec<Candidate>,
    pub reference: Option<Image>,
    pub source_manifest: Option<PathBuf>,
    pub truth_order: Option<Vec<String>>,
}

impl SampleSet {
    /// Validates that candidate ids are unique and all candidates share one shape.
    pub fn new(
        scene_id: impl Into<String>,
        candidates: Vec<Candidate>,
        reference: Option<Image>,
    ) -> Result<Self, ImageError> {
        let mut seen = HashSet::new();
        for c in &candidates {
            if !seen.insert(c.id.as_str()) {
                return Err(ImageError::InvalidData(format!(
                    "duplicate candidate id {:?}",
                    c.id
                )));
            }
        }
        if let Some(first) = candidates.first() {
            for c in &candidates[1..] {
                first.image.check_same_shape(&c.image).map_err(|_| {
                    ImageError::ShapeMismatch(format!(
                        "candidate {:?} differs in shape from {:?}",
                        c.id, first.id
                    ))
                })?;
            }
        }
        Ok(Self {
            scene_id: scene_id.into(),
            candidates,
            reference,
            source_manifest: None,
            truth_order: None,
        })
    }

    pub fn with_truth_order(mut self, order: Vec<String>) -> Self {
        self.truth_order = Some(order);
        self
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Candidate> {
        self.candidates.iter().find(|c| c.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.candidates.iter().map(|c| c.id.clone()).collect()
    }

    /// A new set containing only `ids`, in the order given.
    pub fn subset(&self, ids: &[String]) -> Result<SampleSet, ImageError> {
        let picked = ids
            .iter()
            .map(|id| {
                self.get(id)
                    .cloned()
                    .ok_or_else(|| ImageError::InvalidData(format!("unknown candidate {id:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut out = SampleSet::new(self.scene_id.clone(), picked, self.reference.clone())?;
        out.source_manifest = self.source_manifest.clone();
        Ok(out)
    }

    /// Loads a manifest and every image it references.
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let manifest_path = manifest_path.as_ref();
        let text = std::fs::read_to_string(manifest_path).map_err(|source| ImageError::Io {
            path: manifest_path.to_path_buf(),
            source,
        })?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| ImageError::InvalidData(format!("bad manifest: {e}")))?;
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let reference = manifest
            .reference
            .as_deref()
            .map(|p| load_image(resolve(p)))
            .transpose()?;
        let candidates = manifest
            .candidates
            .iter()
            .map(|e| Ok(Candidate::new(e.id.clone(), load_image(resolve(&e.path))?)))
            .collect::<Result<Vec<_>, ImageError>>()?;
        let mut set = SampleSet::new(manifest.scene_id, candidates, reference)?;
        set.source_manifest = Some(manifest_path.to_path_buf());
        if let Some(order) = manifest.truth_order {
            for id in &order {
                if set.get(id).is_none() {
                    return Err(ImageError::InvalidData(format!(
                        "truth_order names unknown candidate {id:?}"
                    )));
                }
            }
            set.truth_order = Some(order);
        }
        Ok(set)
    }

    /// Writes every image as a PNG under `dir` plus `manifest.json`; returns the
    /// manifest path.
    pub fn save(&self, dir: impl AsRef<Path>, depth: BitDepth) -> Result<PathBuf, ImageError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| ImageError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let reference = match &self.reference {
            Some(img) => {
                let name = "reference.png".to_string();
                save_png(img, dir.join(&name), depth)?;
                Some(name)
            }
            None => None,
        };
        let mut entries = Vec::with_capacity(self.candidates.len());
        for c in &self.candidates {
            let name = format!("{}.png", sanitize_file_stem(&c.id));
            save_png(&c.image, dir.join(&name), depth)?;
            entries.push(ManifestEntry {
                id: c.id.clone(),
                path: name,
            });
        }
        let manifest = Manifest {
            scene_id: self.scene_id.clone(),
            reference,
            candidates: entries,
            truth_order: self.truth_order.clone(),
        };
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, json).map_err(|source| ImageError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }
}

fn sanitize_file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}
