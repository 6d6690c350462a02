//! Grayscale image files (binary PGM or PNG; other formats the `image`
//! crate recognizes are converted to 8-bit luma).

use std::io::Write;
use std::path::Path;

use facehop_core::preprocess::{AlignedImage, RawImage, SIDE};
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, GrayImage, ImageEncoder, ImageFormat};

use crate::error::{Error, Result};

pub fn read_gray(path: &Path) -> Result<RawImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory(&bytes)
        .map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })?
        .into_luma8();
    let (w, h) = img.dimensions();
    Ok(RawImage::from_u8(w as usize, h as usize, img.as_raw())?)
}

/// Write 8-bit gray pixels; `.png` gives PNG, anything else binary PGM.
pub fn write_gray(path: &Path, width: usize, height: usize, pixels: Vec<u8>) -> Result<()> {
    let gray = GrayImage::from_raw(width as u32, height as u32, pixels).expect("buffer matches size");
    let image_err = |e: image::ImageError| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image { path: path.to_path_buf(), message: other.to_string() },
    };
    let is_png = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        return gray.save_with_format(path, ImageFormat::Png).map_err(image_err);
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    PnmEncoder::new(&mut w)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(gray.as_raw(), width as u32, height as u32, ExtendedColorType::L8)
        .map_err(image_err)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Round to 8 bits and write (see [`write_gray`]).
pub fn write_aligned(path: &Path, img: &AlignedImage) -> Result<()> {
    let pixels: Vec<u8> = img.data().iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    write_gray(path, SIDE, SIDE, pixels)
}
