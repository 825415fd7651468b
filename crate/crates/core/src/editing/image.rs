use image::{DynamicImage, ImageFormat, Rgba, RgbaImage};

use super::EditingError;

/// A tactile image centered on a white square canvas.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaddedImage {
    pub canvas: RgbaImage,
    pub original_size: (u32, u32),
    /// Top-left corner of the original on the canvas.
    pub offset: (u32, u32),
}

impl PaddedImage {
    pub fn side(&self) -> u32 {
        self.canvas.width()
    }

    pub fn to_png(&self) -> Vec<u8> {
        encode_png(&self.canvas)
    }
}

pub fn decode(bytes: &[u8]) -> Result<DynamicImage, EditingError> {
    image::load_from_memory(bytes).map_err(|e| EditingError::UndecodableImage(e.to_string()))
}

pub fn encode_png(img: &RgbaImage) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("in-memory PNG encoding");
    out.into_inner()
}

/// Centers `img` on a white canvas of side max(w, h) without scaling.
/// Odd leftovers go to the right and bottom.
pub fn pad_image(img: &DynamicImage) -> PaddedImage {
    let rgba = img.to_rgba8();
    let (w, h) = rgba.dimensions();
    let side = w.max(h);
    let offset = ((side - w) / 2, (side - h) / 2);
    let mut canvas = RgbaImage::from_pixel(side, side, Rgba([255, 255, 255, 255]));
    image::imageops::replace(&mut canvas, &rgba, i64::from(offset.0), i64::from(offset.1));
    PaddedImage {
        canvas,
        original_size: (w, h),
        offset,
    }
}

pub fn pad_square(bytes: &[u8]) -> Result<PaddedImage, EditingError> {
    Ok(pad_image(&decode(bytes)?))
}
