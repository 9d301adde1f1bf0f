//! Image and sidecar file I/O.
//!
//! PNG and JPEG are accepted on load, PNG is written on save. Images with
//! 16 bits per channel are reduced to 8 bits by keeping the high byte of each
//! sample. Alpha channels are dropped.

use std::fs;
use std::io::{Cursor, Write};
use std::path::{Path, PathBuf};

use image::codecs::png::PngEncoder;
use image::{DynamicImage, ImageEncoder, ImageError, ImageFormat, ImageReader};

use crate::error::{Error, Result};
use crate::image::RgbImage;

pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Read {
        path: path.to_owned(),
        source,
    })?;
    decode_image(&bytes, path)
}

fn decode_image(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    let reader = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|source| Error::Read {
            path: path.to_owned(),
            source,
        })?;
    match reader.format() {
        Some(ImageFormat::Png | ImageFormat::Jpeg) => {}
        _ => return Err(Error::UnsupportedFormat(path.to_owned())),
    }
    let decoded = reader.decode().map_err(|e| match e {
        ImageError::Unsupported(_) => Error::UnsupportedFormat(path.to_owned()),
        // The bytes are already in memory, so decoder I/O errors mean
        // truncated or malformed data.
        other => Error::CorruptImage {
            path: path.to_owned(),
            reason: other.to_string(),
        },
    })?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let data = match decoded {
        DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) => decoded
            .to_rgb16()
            .into_raw()
            .into_iter()
            .map(|v| (v >> 8) as u8)
            .collect(),
        other => other.to_rgb8().into_raw(),
    };
    RgbImage::new(width, height, data)
}

/// Encodes `img` as an 8-bit RGB PNG.
pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(
            img.as_raw(),
            img.width() as u32,
            img.height() as u32,
            image::ExtendedColorType::Rgb8,
        )
        .expect("in-memory png encoding of a validated buffer");
    out
}

/// Saves `img` as PNG. The file is written atomically.
pub fn save_image(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_png(img))
}

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let werr = |source| Error::Write {
        path: path.to_owned(),
        source,
    };
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp: PathBuf = path.with_file_name(tmp_name);
    let mut f = fs::File::create(&tmp).map_err(werr)?;
    f.write_all(bytes).map_err(werr)?;
    f.sync_all().map_err(werr)?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        werr(e)
    })
}

/// Single-channel portable float map, little endian, rows stored bottom-up.
pub fn encode_pfm(width: usize, height: usize, values: &[f32]) -> Vec<u8> {
    assert_eq!(values.len(), width * height);
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    for row in values.chunks_exact(width).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Reads a single-channel portable float map into top-down row order.
pub fn read_pfm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f32>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Read {
        path: path.to_owned(),
        source,
    })?;
    let bad = |reason: &str| Error::CorruptImage {
        path: path.to_owned(),
        reason: reason.to_owned(),
    };
    // Header: three whitespace-separated tokens then exactly one whitespace byte.
    let mut tokens = Vec::with_capacity(4);
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
    }
    pos += 1;
    if tokens[0] != "Pf" {
        return Err(Error::UnsupportedFormat(path.to_owned()));
    }
    let width: usize = tokens[1].parse().map_err(|_| bad("width"))?;
    let height: usize = tokens[2].parse().map_err(|_| bad("height"))?;
    let scale: f32 = tokens[3].parse().map_err(|_| bad("scale"))?;
    let body = bytes.get(pos..).unwrap_or(&[]);
    if width == 0 || height == 0 || body.len() != width * height * 4 {
        return Err(bad("payload size"));
    }
    let little = scale < 0.0;
    let mut rows: Vec<Vec<f32>> = body
        .chunks_exact(width * 4)
        .map(|row| {
            row.chunks_exact(4)
                .map(|b| {
                    let b = [b[0], b[1], b[2], b[3]];
                    if little {
                        f32::from_le_bytes(b)
                    } else {
                        f32::from_be_bytes(b)
                    }
                })
                .collect()
        })
        .collect();
    rows.reverse();
    Ok((width, height, rows.concat()))
}
