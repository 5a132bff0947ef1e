//! Team pool on disk: one parameter file per team plus `manifest.json`.

use std::path::Path;

use mars_core::numerics::ParameterSet;
use mars_core::teams::{FamilyId, PoolEntry, Split, TeamPolicy, TeamPool};
use serde::{Deserialize, Serialize};

use crate::error::{config_error, RunError, RunResult};
use crate::fsutil::{read_json, write_json};

pub const MANIFEST: &str = "manifest.json";
pub const POOL_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Parameter file, relative to the pool directory.
    pub file: String,
    pub split: Split,
    pub family: FamilyId,
    pub seed: u64,
    pub size: usize,
    /// Parameter checksum, 16 hex digits.
    pub checksum: String,
}

pub fn checksum_hex(c: u64) -> String {
    format!("{c:016x}")
}

pub fn team_file(index: usize) -> String {
    format!("team-{index:03}.json")
}

/// Writes one team's parameter file.
pub fn save_team(dir: &Path, index: usize, entry: &PoolEntry) -> RunResult<ManifestEntry> {
    let file = team_file(index);
    write_json(&dir.join(&file), &entry.policy.params)?;
    let p = &entry.policy;
    Ok(ManifestEntry {
        file,
        split: entry.split,
        family: p.family,
        seed: p.seed,
        size: p.size,
        checksum: checksum_hex(p.checksum()),
    })
}

pub fn save_manifest(dir: &Path, entries: Vec<ManifestEntry>) -> RunResult<()> {
    write_json(&dir.join(MANIFEST), &Manifest { format_version: POOL_FORMAT, entries })
}

pub fn save_pool(dir: &Path, pool: &TeamPool) -> RunResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| RunError::io(dir, e))?;
    let entries = pool.entries.iter().enumerate().map(|(i, e)| save_team(dir, i, e)).collect::<RunResult<Vec<_>>>()?;
    save_manifest(dir, entries)
}

/// Reads a pool and verifies every checksum against the manifest.
pub fn load_pool(dir: &Path) -> RunResult<TeamPool> {
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.is_file() {
        return Err(config_error(format!(
            "teams.pool_dir: no team pool at {} (run pretrain-pool first)",
            dir.display()
        )));
    }
    let manifest: Manifest = read_json(&manifest_path)?;
    if manifest.format_version != POOL_FORMAT {
        return Err(config_error(format!(
            "{}: format_version {} is not supported",
            manifest_path.display(),
            manifest.format_version
        )));
    }
    let mut entries = Vec::with_capacity(manifest.entries.len());
    for m in manifest.entries {
        if m.file.contains('/') || m.file.contains('\\') || m.file.starts_with('.') {
            return Err(config_error(format!("{}: entry file `{}` is not a plain name", manifest_path.display(), m.file)));
        }
        let path = dir.join(&m.file);
        let params: ParameterSet = read_json(&path)?;
        crate::fsutil::check_tensors(&params, &path)?;
        let policy = TeamPolicy { family: m.family, seed: m.seed, size: m.size, params };
        let actual = checksum_hex(policy.checksum());
        if actual != m.checksum {
            return Err(config_error(format!(
                "{}: checksum {actual} does not match the manifest ({})",
                path.display(),
                m.checksum
            )));
        }
        entries.push(PoolEntry { split: m.split, policy });
    }
    Ok(TeamPool { entries })
}
