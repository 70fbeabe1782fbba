//! 8-bit PNG load/save. Byte `b` maps to `b / 255`; saving rounds half up.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType};

use crate::error::{Error, Result};
use crate::grid::{Grid2D, Mask};

/// Loads an 8-bit grayscale or RGB PNG. Alpha and non-8-bit depths are rejected.
pub fn load_image(path: impl AsRef<Path>) -> Result<Grid2D> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let decode_err = |e: png::DecodingError| match e {
        png::DecodingError::IoError(io) => Error::io(path, io),
        other => Error::Decode {
            path: path.into(),
            message: other.to_string(),
        },
    };
    let mut reader = decoder.read_info().map_err(decode_err)?;
    let unsupported = |message: String| Error::UnsupportedFormat {
        path: path.into(),
        message,
    };

    let info = reader.info();
    if info.bit_depth != BitDepth::Eight {
        return Err(unsupported(format!(
            "bit depth {:?}, only 8-bit is accepted",
            info.bit_depth
        )));
    }
    if info.trns.is_some() {
        return Err(unsupported(
            "transparency chunk present; alpha is not accepted".into(),
        ));
    }
    let channels = match info.color_type {
        ColorType::Grayscale => 1,
        ColorType::Rgb => 3,
        ColorType::GrayscaleAlpha | ColorType::Rgba => {
            return Err(unsupported(
                "alpha channel present; supply masks separately".into(),
            ))
        }
        ColorType::Indexed => return Err(unsupported("palette images are not accepted".into())),
    };

    let size = reader
        .output_buffer_size()
        .ok_or_else(|| unsupported("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(decode_err)?;
    let (width, height) = (frame.width as usize, frame.height as usize);
    let row_bytes = width * channels;
    let mut values = Vec::with_capacity(height * row_bytes);
    for row in buf.chunks_exact(frame.line_size).take(height) {
        values.extend(row[..row_bytes].iter().map(|&b| f64::from(b) / 255.0));
    }
    Grid2D::new(height, width, channels, values)
}

/// Loads a mask PNG; a pixel is set when its channel mean is at least one half.
pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    Mask::binarize(&load_image(path)?, 0.5)
}

/// Quantizes one image sample to a byte, rounding half up.
#[inline]
pub fn quantize(value: f64) -> u8 {
    (value * 255.0 + 0.5).floor() as u8
}

/// Saves an image-kind grid with 1 (gray) or 3 (RGB) channels.
pub fn save_image(grid: &Grid2D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    grid.check_image()?;
    let color = match grid.channels() {
        1 => ColorType::Grayscale,
        3 => ColorType::Rgb,
        c => {
            return Err(Error::UnsupportedFormat {
                path: path.into(),
                message: format!("cannot store {c} channels in PNG"),
            })
        }
    };
    let bytes: Vec<u8> = grid.values().iter().map(|&v| quantize(v)).collect();

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        grid.width() as u32,
        grid.height() as u32,
    );
    encoder.set_color(color);
    encoder.set_depth(BitDepth::Eight);
    let encode_err = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::Io {
            path: path.into(),
            source: std::io::Error::other(other.to_string()),
        },
    };
    let mut writer = encoder.write_header().map_err(encode_err)?;
    writer.write_image_data(&bytes).map_err(encode_err)?;
    writer.finish().map_err(encode_err)
}
