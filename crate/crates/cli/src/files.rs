//! Atomic writes, content hashes and the DSCTIMG raster format.

use std::io::Write;
use std::path::Path;

use dsct::Image;
use sha2::{Digest, Sha256};

use crate::failure::{CliResult, Failure};

pub const IMAGE_MAGIC: &[u8; 8] = b"DSCTIMG ";
pub const IMAGE_VERSION: u32 = 1;
const IMAGE_HEADER_LEN: usize = 8 + 4 + 4 + 4 + 8;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let fail = |e: std::io::Error| Failure::data("write outputs", format!("{}: {e}", path.display()));
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(fail)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(bytes).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

pub fn read_file(path: &Path, stage: &'static str) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| Failure::data(stage, format!("cannot read {}: {e}", path.display())))
}

/// Header `DSCTIMG `, u32 version, u32 width, u32 height, f64 pixel size (cm),
/// then row-major little-endian f64 pixels.
pub fn encode_image(image: &Image, pixel_cm: f64) -> Vec<u8> {
    let mut out = Vec::with_capacity(IMAGE_HEADER_LEN + 8 * image.len());
    out.extend_from_slice(IMAGE_MAGIC);
    out.extend_from_slice(&IMAGE_VERSION.to_le_bytes());
    out.extend_from_slice(&(image.nx() as u32).to_le_bytes());
    out.extend_from_slice(&(image.ny() as u32).to_le_bytes());
    out.extend_from_slice(&pixel_cm.to_le_bytes());
    for v in image.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes an image and its pixel size.
pub fn decode_image(bytes: &[u8]) -> Result<(Image, f64), String> {
    if bytes.len() < IMAGE_HEADER_LEN || &bytes[..8] != IMAGE_MAGIC {
        return Err("not a DSCTIMG file".into());
    }
    let u32_at = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap());
    let version = u32_at(8);
    if version != IMAGE_VERSION {
        return Err(format!("unsupported DSCTIMG version {version}"));
    }
    let (nx, ny) = (u32_at(12) as usize, u32_at(16) as usize);
    let pixel_cm = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
    let payload = &bytes[IMAGE_HEADER_LEN..];
    let expected = nx.checked_mul(ny).and_then(|n| n.checked_mul(8));
    if expected != Some(payload.len()) {
        return Err(format!(
            "header says {nx}x{ny} pixels but the payload holds {} bytes",
            payload.len()
        ));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let image = Image::from_vec(nx, ny, data).map_err(|e| e.to_string())?;
    Ok((image, pixel_cm))
}

pub fn load_image(path: &Path, stage: &'static str) -> CliResult<Image> {
    let bytes = read_file(path, stage)?;
    decode_image(&bytes)
        .map(|(img, _)| img)
        .map_err(|e| Failure::data(stage, format!("{}: {e}", path.display())))
}

/// 16-bit binary PGM with the window `[lo, hi]` mapped to `[0, 65535]`.
/// The top row of the file is the image row with the largest `y`.
pub fn encode_pgm16(image: &Image, window: (f64, f64)) -> Vec<u8> {
    let (lo, hi) = window;
    let mut out = format!("P5\n{} {}\n65535\n", image.nx(), image.ny()).into_bytes();
    for iy in (0..image.ny()).rev() {
        for ix in 0..image.nx() {
            let t = if hi > lo { (image.get(ix, iy) - lo) / (hi - lo) } else { 0.0 };
            let level = (t.clamp(0.0, 1.0) * 65535.0).round() as u16;
            out.extend_from_slice(&level.to_be_bytes());
        }
    }
    out
}

/// Sidecar recording the display window of a PGM export.
pub fn window_sidecar(window: (f64, f64)) -> String {
    format!("window_min {:e}\nwindow_max {:e}\n", window.0, window.1)
}
