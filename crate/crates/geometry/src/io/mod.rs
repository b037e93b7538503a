use std::io::Write;
use std::path::Path;

use crate::error::{GeometryError, Result};

pub mod obj;
pub mod ply;

/// Triangle mesh from `.ply` or `.obj`, chosen by extension.
pub fn read_mesh(path: &Path) -> Result<crate::mesh::TriMesh> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("ply") => ply::read_mesh(path),
        Some("obj") => obj::read_obj(path),
        _ => Err(GeometryError::Parse {
            path: path.to_path_buf(),
            message: "unsupported mesh format; expected .ply or .obj".into(),
        }),
    }
}

/// Writes to a sibling temporary file, syncs it, then renames over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| GeometryError::Contract(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        GeometryError::io(path, e)
    })
}
