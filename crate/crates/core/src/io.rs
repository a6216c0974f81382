//! Small filesystem helpers.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temp file, syncs it, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn to_byte(v: f32, scale: f32) -> u8 {
    let x = if scale > 0.0 { v / scale } else { 0.0 };
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary greyscale image of `width x height` values, `scale` mapping to white.
pub fn write_pgm(path: &Path, width: usize, height: usize, data: &[f32], scale: f32) -> Result<()> {
    if data.len() != width * height {
        return Err(Error::Shape(format!(
            "pgm expects {} values, got {}",
            width * height,
            data.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(data.iter().map(|&v| to_byte(v, scale)));
    write_atomic(path, &out)
}

/// Binary colour image from a planar `3 x height x width` buffer in [0, 1].
pub fn write_ppm(path: &Path, width: usize, height: usize, planes: &[f32]) -> Result<()> {
    let n = width * height;
    if planes.len() != 3 * n {
        return Err(Error::Shape(format!(
            "ppm expects {} values, got {}",
            3 * n,
            planes.len()
        )));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    for k in 0..n {
        for c in 0..3 {
            out.push(to_byte(planes[c * n + k], 1.0));
        }
    }
    write_atomic(path, &out)
}
