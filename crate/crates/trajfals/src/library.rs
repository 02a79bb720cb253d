//! Scenario library: a directory of `.tsc` programs plus `manifest.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use trajfals_core::falsify::{Falsifier, FalsifyConfig, SamplerKind};
use trajfals_core::lang::{feature_space, parse_bytes, ScenarioProgram};
use trajfals_core::metrics::MetricSpec;
use trajfals_core::sim::simulate;
use trajfals_core::HORIZON_STEPS;

use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    IntersectionYield,
    UnprotectedLeft,
    Bypassing,
    Merging,
    LaneChange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
    pub title: String,
    pub category: Category,
    pub features: usize,
    pub min_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

/// A parsed, validated and smoke-simulated library program.
#[derive(Debug, Clone)]
pub struct LibraryEntry {
    pub id: String,
    pub path: PathBuf,
    pub title: String,
    pub category: Option<Category>,
    pub expected_features: usize,
    pub min_steps: usize,
    pub program: ScenarioProgram,
    pub hash: String,
}

/// Hex SHA-256 of a program's source bytes.
pub fn program_hash(source: &[u8]) -> String {
    hex::encode(Sha256::digest(source))
}

/// A scenario file loaded for a run.
#[derive(Debug, Clone)]
pub struct LoadedProgram {
    pub path: PathBuf,
    pub program: ScenarioProgram,
    pub hash: String,
}

/// Program id of a scenario file: its file stem.
pub fn program_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into())
}

pub fn load_program(path: &Path) -> Result<LoadedProgram> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let program = parse_bytes(&program_id(path), &bytes).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(LoadedProgram {
        path: path.to_path_buf(),
        program,
        hash: program_hash(&bytes),
    })
}

/// Concretizes one uniform sample (seed 0) and simulates `steps` steps.
pub fn smoke_simulate(program: &ScenarioProgram, steps: usize) -> std::result::Result<(), String> {
    let cfg = FalsifyConfig::new(SamplerKind::Uniform, 1, 0);
    let mut f = Falsifier::new(program, MetricSpec::default(), cfg).map_err(|e| e.to_string())?;
    let p = f
        .next()
        .map_err(|e| e.to_string())?
        .ok_or("no sample proposed")?;
    let n = steps.max(p.scenario.timepoint as usize + HORIZON_STEPS);
    simulate(&p.scenario, n)
        .map(|_| ())
        .map_err(|e| e.to_string())
}

/// Loads every `.tsc` file under `dir`, sorted by id. With a manifest,
/// every file must be listed and every listing must exist.
pub fn load_library(dir: &Path) -> Result<Vec<LibraryEntry>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for ent in rd {
        let path = ent.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "tsc") {
            files.push(path);
        }
    }
    files.sort();
    let manifest_path = dir.join(MANIFEST);
    let manifest: Option<BTreeMap<String, ManifestEntry>> = if manifest_path.exists() {
        let text =
            std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Library {
            path: manifest_path.clone(),
            reason: e.to_string(),
        })?;
        Some(m.entries.into_iter().map(|e| (e.file.clone(), e)).collect())
    } else {
        None
    };
    if let Some(m) = &manifest {
        for file in m.keys() {
            if !dir.join(file).exists() {
                return Err(Error::Library {
                    path: dir.join(file),
                    reason: "listed in manifest but missing".into(),
                });
            }
        }
    }
    let mut out = Vec::new();
    for path in files {
        let loaded = load_program(&path)?;
        let file = path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default();
        let n_features = feature_space(&loaded.program).len();
        let lib_err = |reason: String| Error::Library {
            path: path.clone(),
            reason,
        };
        let (id, title, category, expected, min_steps) = match &manifest {
            Some(m) => {
                let e = m
                    .get(&file)
                    .ok_or_else(|| lib_err("not listed in manifest".into()))?;
                (
                    e.id.clone(),
                    e.title.clone(),
                    Some(e.category),
                    e.features,
                    e.min_steps,
                )
            }
            None => {
                let id = program_id(&path);
                (id.clone(), id, None, n_features, 0)
            }
        };
        if n_features != expected {
            return Err(lib_err(format!(
                "has {n_features} features, manifest expects {expected}"
            )));
        }
        smoke_simulate(&loaded.program, min_steps)
            .map_err(|e| lib_err(format!("smoke simulation failed: {e}")))?;
        out.push(LibraryEntry {
            id,
            path,
            title,
            category,
            expected_features: expected,
            min_steps,
            program: loaded.program,
            hash: loaded.hash,
        });
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}
