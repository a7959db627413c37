use image::codecs::jpeg::{JpegDecoder, JpegEncoder};
use image::{DynamicImage, ExtendedColorType};

use super::{ImageTensor, Result, TensorError};

pub const MIN_QUALITY: u8 = 1;
pub const MAX_QUALITY: u8 = 100;

pub(crate) fn encode_jpeg(image: &ImageTensor, quality: u8) -> Result<Vec<u8>> {
    if !(MIN_QUALITY..=MAX_QUALITY).contains(&quality) {
        return Err(TensorError::InvalidQuality(quality));
    }
    let mut bytes = Vec::new();
    JpegEncoder::new_with_quality(&mut bytes, quality)
        .encode(
            &image.to_rgb8(),
            image.width() as u32,
            image.height() as u32,
            ExtendedColorType::Rgb8,
        )
        .map_err(|e| TensorError::Encode(e.to_string()))?;
    Ok(bytes)
}

pub(crate) fn decode_rgb(bytes: &[u8]) -> Result<ImageTensor> {
    let decoder =
        JpegDecoder::new(std::io::Cursor::new(bytes)).map_err(|e| TensorError::Decode(e.to_string()))?;
    let rgb = DynamicImage::from_decoder(decoder)
        .map_err(|e| TensorError::Decode(e.to_string()))?
        .to_rgb8();
    ImageTensor::from_rgb8(rgb.height() as usize, rgb.width() as usize, rgb.as_raw())
}

/// Baseline JPEG encode at `quality`, then decode back.
pub fn jpeg_roundtrip(image: &ImageTensor, quality: u8) -> Result<ImageTensor> {
    let bytes = encode_jpeg(image, quality)?;
    let out = decode_rgb(&bytes)?;
    debug_assert_eq!(out.shape(), image.shape());
    Ok(out)
}
