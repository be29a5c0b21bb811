use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::nn::{Model, ModelSpec};

use super::{load_model, save_model, ZooError};

/// On-disk listing of the zoo. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZooManifest {
    pub models: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub spec: ModelSpec,
    pub path: PathBuf,
    /// Clean test-split accuracy; absent until the model is trained.
    pub accuracy: Option<f64>,
}

impl ZooManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ZooError> {
        let text = fs::read_to_string(path)?;
        let manifest: Self =
            serde_json::from_str(&text).map_err(|e| ZooError::Manifest(e.to_string()))?;
        manifest.check_ids()?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ZooError> {
        self.check_ids()?;
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    fn check_ids(&self) -> Result<(), ZooError> {
        let mut seen = BTreeSet::new();
        for e in &self.models {
            if !seen.insert(e.id.as_str()) {
                return Err(ZooError::Manifest(format!("duplicate model id {:?}", e.id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ZooMember {
    pub id: String,
    pub model: Model,
    pub accuracy: Option<f64>,
}

/// Loaded models, kept sorted by id.
#[derive(Debug, Clone, Default)]
pub struct Zoo {
    members: Vec<ZooMember>,
}

impl Zoo {
    pub fn new(mut members: Vec<ZooMember>) -> Result<Self, ZooError> {
        members.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = members.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(ZooError::Manifest(format!(
                "duplicate model id {:?}",
                w[0].id
            )));
        }
        Ok(Self { members })
    }

    /// Loads every model listed in the manifest at `path`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ZooError> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let manifest = ZooManifest::load(path)?;
        let mut members = Vec::with_capacity(manifest.models.len());
        for e in manifest.models {
            let file = base.join(&e.path);
            if !file.exists() {
                return Err(ZooError::Manifest(format!(
                    "{}: model file {} missing",
                    e.id,
                    file.display()
                )));
            }
            let (id, model) = load_model(&file)?;
            if id != e.id || model.spec() != &e.spec {
                return Err(ZooError::Manifest(format!(
                    "{}: file {} holds model {id:?} with a different spec",
                    e.id,
                    file.display()
                )));
            }
            members.push(ZooMember {
                id,
                model,
                accuracy: e.accuracy,
            });
        }
        Self::new(members)
    }

    /// Writes `<id>.bem` files and `manifest.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<ZooManifest, ZooError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut models = Vec::with_capacity(self.members.len());
        for m in &self.members {
            let rel = PathBuf::from(format!("{}.bem", m.id));
            save_model(dir.join(&rel), &m.id, &m.model)?;
            models.push(ManifestEntry {
                id: m.id.clone(),
                spec: m.model.spec().clone(),
                path: rel,
                accuracy: m.accuracy,
            });
        }
        let manifest = ZooManifest { models };
        manifest.save(dir.join("manifest.json"))?;
        Ok(manifest)
    }

    pub fn members(&self) -> &[ZooMember] {
        &self.members
    }

    pub fn ids(&self) -> Vec<&str> {
        self.members.iter().map(|m| m.id.as_str()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&Model> {
        self.members.iter().find(|m| m.id == id).map(|m| &m.model)
    }

    /// Models for `ids`, in sorted-id order regardless of the order given.
    pub fn select(&self, ids: &[impl AsRef<str>]) -> Result<Vec<Model>, ZooError> {
        let mut wanted: Vec<&str> = ids.iter().map(AsRef::as_ref).collect();
        wanted.sort_unstable();
        wanted
            .into_iter()
            .map(|id| {
                self.get(id)
                    .cloned()
                    .ok_or_else(|| ZooError::Manifest(format!("unknown model id {id:?}")))
            })
            .collect()
    }
}
