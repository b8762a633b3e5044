//! Dataset manifests: one JSON record per line describing a view pair.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::generator::{generate_scene_pair, GeneratorParams, PairSeed, ScenePair};
use super::ply::ply_read;
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::param(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairPaths {
    pub cloud0: PathBuf,
    pub cloud1: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub scene_id: u64,
    pub split: Split,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<PairSeed>,
    /// Relative paths resolve against the manifest's directory.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub paths: Option<PairPaths>,
    /// Ground truth, for evaluation only.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub transform: Option<RigidTransform>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub overlap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairManifest {
    pub entries: Vec<ManifestEntry>,
    pub base_dir: PathBuf,
}

impl PairManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    /// Rejects scene ids that appear in more than one split.
    pub fn validate(&self) -> Result<()> {
        let mut seen: HashMap<u64, Split> = HashMap::new();
        let mut clashes = Vec::new();
        for e in &self.entries {
            if e.seed.is_none() && e.paths.is_none() {
                return Err(Error::Validation(format!(
                    "scene {} entry has neither seed nor paths",
                    e.scene_id
                )));
            }
            match seen.get(&e.scene_id) {
                Some(&s) if s != e.split => clashes.push(format!("scene {} in {s} and {}", e.scene_id, e.split)),
                Some(_) => {}
                None => {
                    seen.insert(e.scene_id, e.split);
                }
            }
        }
        if clashes.is_empty() {
            Ok(())
        } else {
            clashes.dedup();
            Err(Error::Validation(format!(
                "splits share scenes: {}",
                clashes.join("; ")
            )))
        }
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Loads the pair from its files, or regenerates it from its seed.
    pub fn load_pair(&self, entry: &ManifestEntry, params: &GeneratorParams) -> Result<ScenePair> {
        if let Some(paths) = &entry.paths {
            let cloud0 = ply_read(&self.resolve(&paths.cloud0))?;
            let cloud1 = ply_read(&self.resolve(&paths.cloud1))?;
            return Ok(ScenePair {
                cloud0,
                cloud1,
                transform: entry.transform.unwrap_or_default(),
                overlap: entry.overlap.unwrap_or(f64::NAN),
                scene_id: entry.scene_id,
                seed: entry.seed.unwrap_or(PairSeed {
                    scene: entry.scene_id,
                    view: 0,
                }),
            });
        }
        let seed = entry.seed.expect("validated entry has a seed or paths");
        let pair = generate_scene_pair(seed, params)?;
        Ok(ScenePair {
            scene_id: entry.scene_id,
            ..pair
        })
    }
}

pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<PairManifest> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let e: ManifestEntry = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        entries.push(e);
    }
    let manifest = PairManifest {
        entries,
        base_dir: base_dir.to_path_buf(),
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Reads and validates a manifest; every referenced file must exist.
pub fn load_manifest(path: &Path) -> Result<PairManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let manifest = parse_manifest(&text, base)?;
    let missing: Vec<PathBuf> = manifest
        .entries
        .iter()
        .filter_map(|e| e.paths.as_ref())
        .flat_map(|p| [manifest.resolve(&p.cloud0), manifest.resolve(&p.cloud1)])
        .filter(|p| !p.exists())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingFiles(missing));
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(scene: u64, split: Split) -> ManifestEntry {
        ManifestEntry {
            scene_id: scene,
            split,
            seed: Some(PairSeed { scene, view: 0 }),
            paths: None,
            transform: None,
            overlap: None,
        }
    }

    #[test]
    fn single_entry() {
        let text = serde_json::to_string(&entry(1, Split::Test)).unwrap();
        let m = parse_manifest(&text, Path::new(".")).unwrap();
        assert_eq!(m.entries.len(), 1);
    }

    #[test]
    fn shared_scene_rejected() {
        let m = PairManifest {
            entries: vec![entry(1, Split::Train), entry(1, Split::Test)],
            base_dir: ".".into(),
        };
        let text = m.to_jsonl();
        assert!(matches!(parse_manifest(&text, Path::new(".")), Err(Error::Validation(_))));
    }

    #[test]
    fn missing_files_all_listed() {
        let dir = tempfile::tempdir().unwrap();
        let mut e = entry(1, Split::Test);
        e.paths = Some(PairPaths {
            cloud0: "a.ply".into(),
            cloud1: "b.ply".into(),
        });
        let m = PairManifest {
            entries: vec![e],
            base_dir: dir.path().into(),
        };
        let path = dir.path().join("manifest.jsonl");
        std::fs::write(&path, m.to_jsonl()).unwrap();
        match load_manifest(&path) {
            Err(Error::MissingFiles(v)) => assert_eq!(v.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_line_reports_line_number() {
        let text = format!("{}\n{{not json\n", serde_json::to_string(&entry(1, Split::Test)).unwrap());
        assert!(matches!(parse_manifest(&text, Path::new(".")), Err(Error::Parse { line: 2, .. })));
    }
}
