//! Binary PGM (P5) reading/writing and slice-directory volumes.
//!
//! Samples are one byte when `maxval < 256` and two big-endian bytes otherwise;
//! `maxval` is always written as `K - 1`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image2D, Volume3D};

pub fn encode_pgm(img: &Image2D) -> Vec<u8> {
    let maxval = img.levels() - 1;
    let mut out = format!("P5\n{} {}\n{}\n", img.width(), img.height(), maxval).into_bytes();
    if maxval < 256 {
        out.extend(img.pixels().iter().map(|&p| p as u8));
    } else {
        for &p in img.pixels() {
            out.extend_from_slice(&p.to_be_bytes());
        }
    }
    out
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Image2D> {
    let bad = |m: &str| Error::format(path, m.to_string());
    let mut pos = 0usize;
    let next_token = |pos: &mut usize| -> Option<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    if next_token(&mut pos).as_deref() != Some("P5") {
        return Err(bad("missing P5 magic"));
    }
    let mut num = |name: &str| -> Result<usize> {
        next_token(&mut pos)
            .and_then(|t| t.parse::<usize>().ok())
            .ok_or_else(|| bad(&format!("bad {name} field")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if width == 0 || height == 0 {
        return Err(bad("zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(bad("maxval outside [1, 65535]"));
    }
    // exactly one whitespace byte separates header from raster
    pos += 1;
    let n = width * height;
    let wide = maxval >= 256;
    let need = if wide { 2 * n } else { n };
    if bytes.len() < pos + need {
        return Err(bad(&format!("raster truncated: need {need} bytes")));
    }
    let raster = &bytes[pos..pos + need];
    let pixels: Vec<u16> = if wide {
        raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        raster.iter().map(|&b| u16::from(b)).collect()
    };
    Image2D::new(width, height, maxval as u32 + 1, pixels).map_err(|e| bad(&e.to_string()))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image2D> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, path)
}

pub fn write_pgm(path: impl AsRef<Path>, img: &Image2D) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_pgm(img)).map_err(|e| Error::io(path, e))
}

/// Sidecar describing a slice-directory volume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeSidecar {
    pub levels: u32,
    pub slices: Vec<String>,
}

pub const VOLUME_SIDECAR: &str = "volume.json";

pub fn slice_name(index: usize) -> String {
    format!("slice_{index:04}.pgm")
}

pub fn write_volume(dir: impl AsRef<Path>, vol: &Volume3D) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::with_capacity(vol.depth());
    for (i, s) in vol.slices().iter().enumerate() {
        let name = slice_name(i);
        write_pgm(dir.join(&name), s)?;
        names.push(name);
    }
    let sidecar = VolumeSidecar { levels: vol.slices()[0].levels(), slices: names };
    crate::report::write_json(dir.join(VOLUME_SIDECAR), &sidecar)
}

pub fn read_volume(dir: impl AsRef<Path>) -> Result<Volume3D> {
    let dir = dir.as_ref();
    let sidecar_path: PathBuf = dir.join(VOLUME_SIDECAR);
    let sidecar: VolumeSidecar = crate::report::read_json(&sidecar_path)?;
    let mut slices = Vec::with_capacity(sidecar.slices.len());
    for name in &sidecar.slices {
        let p = dir.join(name);
        let s = read_pgm(&p)?;
        if s.levels() != sidecar.levels {
            return Err(Error::format(
                &p,
                format!("slice has K={} but sidecar declares K={}", s.levels(), sidecar.levels),
            ));
        }
        slices.push(s);
    }
    Volume3D::new(slices)
}
