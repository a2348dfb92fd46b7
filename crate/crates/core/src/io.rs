//! Atomic file and directory writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

fn parent_of(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

#[cfg(unix)]
fn mode(bits: u32) -> fs::Permissions {
    use std::os::unix::fs::PermissionsExt;
    fs::Permissions::from_mode(bits)
}

#[cfg(not(unix))]
fn mode(_bits: u32) -> fs::Permissions {
    fs::metadata(".").map(|m| m.permissions()).expect("current directory is readable")
}

/// Writes `bytes` to a temporary file next to `path`, then renames it over
/// `path`. Readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = parent_of(path);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut tmp = tempfile::Builder::new()
        .prefix(".tmp-")
        .permissions(mode(0o644))
        .tempfile_in(&dir)
        .map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Populates a fresh temporary directory with `fill`, then moves it to
/// `dest`, replacing any previous directory there. On error nothing is left
/// at `dest` that was not there before.
pub fn replace_dir_atomic(dest: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let parent = parent_of(dest);
    fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
    let tmp = tempfile::Builder::new()
        .prefix(".staging-")
        .permissions(mode(0o755))
        .tempdir_in(&parent)
        .map_err(|e| Error::io(&parent, e))?;
    fill(tmp.path())?;
    if dest.exists() {
        let old = parent.join(format!(
            ".replaced-{}-{}",
            std::process::id(),
            dest.file_name().and_then(|s| s.to_str()).unwrap_or("dir")
        ));
        fs::rename(dest, &old).map_err(|e| Error::io(dest, e))?;
        let staged = tmp.keep();
        if let Err(e) = fs::rename(&staged, dest) {
            let _ = fs::rename(&old, dest);
            let _ = fs::remove_dir_all(&staged);
            return Err(Error::io(dest, e));
        }
        fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
    } else {
        let staged = tmp.keep();
        fs::rename(&staged, dest).map_err(|e| Error::io(dest, e))?;
    }
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}
