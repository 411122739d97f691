use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Environment variable naming the font file.
pub const FONT_ENV: &str = "GEL_FONT";

const FONT_NAMES: &[&str] = &["ipaexm.ttf", "ipaexg.ttf", "ipam.ttf", "ipag.ttf", "NotoSerifCJK-Regular.ttc", "NotoSansCJK-Regular.ttc"];

fn search_dirs() -> Vec<PathBuf> {
    let mut dirs = Vec::new();
    if let Some(home) = std::env::var_os("HOME") {
        let home = PathBuf::from(home);
        dirs.push(home.join(".local/share/fonts"));
        dirs.push(home.join(".fonts"));
    }
    for d in [
        "/usr/share/fonts/opentype/ipaexfont-mincho",
        "/usr/share/fonts/opentype/ipaexfont-gothic",
        "/usr/share/fonts/truetype/ipaexfont",
        "/usr/share/fonts/opentype/noto",
        "/usr/share/fonts/noto-cjk",
        "/usr/share/fonts",
        "/Library/Fonts",
    ] {
        dirs.push(PathBuf::from(d));
    }
    dirs
}

/// `$GEL_FONT` if set, otherwise the first known Japanese font found in
/// the usual user and system font directories.
pub fn find_font() -> Option<PathBuf> {
    if let Some(p) = std::env::var_os(FONT_ENV) {
        return Some(PathBuf::from(p));
    }
    for dir in search_dirs() {
        for name in FONT_NAMES {
            let p = dir.join(name);
            if p.is_file() {
                return Some(p);
            }
        }
    }
    None
}

/// Font bytes plus an identifier `file-name@sha256-prefix`.
pub fn read_font(path: &Path) -> Result<(Vec<u8>, String)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("font");
    let id = format!("{name}@{}", &super::hex_string(&digest)[..12]);
    Ok((bytes, id))
}
