//! Small file helpers shared by the formats.

use std::io::Write;
use std::path::Path;

use mars_core::numerics::ParameterSet;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{config_error, RunError, RunResult};

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> RunResult<()> {
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| RunError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| RunError::io(&tmp, e))?;
    f.sync_all().map_err(|e| RunError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| RunError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> RunResult<()> {
    let mut s = serde_json::to_string(value).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> RunResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(&mut de)
        .map_err(|e| {
            let at = e.path().to_string();
            config_error(format!("{}: {at}: {}", path.display(), e.into_inner()))
        })
}

/// Rejects tensors whose shape disagrees with their data.
pub fn check_tensors(params: &ParameterSet, path: &Path) -> RunResult<()> {
    for (name, t) in params.iter() {
        if t.shape().iter().product::<usize>() != t.data().len() {
            return Err(config_error(format!("{}: tensor `{name}` has inconsistent shape", path.display())));
        }
    }
    Ok(())
}

pub fn ensure_dir(dir: &Path) -> RunResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| RunError::io(dir, e))
}
