use std::path::Path;

use image::{ImageEncoder, ImageFormat, RgbImage};

use super::jpeg::encode_jpeg;
use super::{ImageTensor, Result, TensorError};

fn io_err(path: &Path, source: std::io::Error) -> TensorError {
    TensorError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads any PNG or JPEG file as RGB.
pub fn read_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let rgb = image::load_from_memory(&bytes)
        .map_err(|e| TensorError::Decode(format!("{}: {e}", path.display())))?
        .to_rgb8();
    ImageTensor::from_rgb8(rgb.height() as usize, rgb.width() as usize, rgb.as_raw())
}

pub fn read_png(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let rgb = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| TensorError::Decode(format!("{}: {e}", path.display())))?
        .to_rgb8();
    ImageTensor::from_rgb8(rgb.height() as usize, rgb.width() as usize, rgb.as_raw())
}

pub fn write_png(image: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf = RgbImage::from_raw(image.width() as u32, image.height() as u32, image.to_rgb8())
        .expect("buffer length matches dimensions");
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| TensorError::Encode(format!("{}: {e}", path.display())))
}

/// PNG bytes of `image`, quantized to 8 bits per channel.
pub fn encode_png(image: &ImageTensor) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    image::codecs::png::PngEncoder::new(&mut bytes)
        .write_image(
            &image.to_rgb8(),
            image.width() as u32,
            image.height() as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| TensorError::Encode(e.to_string()))?;
    Ok(bytes)
}

pub fn write_jpeg(image: &ImageTensor, quality: u8, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_jpeg(image, quality)?;
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_is_lossless_on_byte_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let bytes: Vec<u8> = (0..5 * 3 * 3).map(|i| (i * 11 % 256) as u8).collect();
        let img = ImageTensor::from_rgb8(5, 3, &bytes).unwrap();
        write_png(&img, &path).unwrap();
        assert_eq!(read_png(&path).unwrap(), img);
        assert_eq!(read_image(&path).unwrap(), img);
    }

    #[test]
    fn jpeg_file_roundtrip_keeps_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jpg");
        let img = ImageTensor::filled(9, 10, 0.4).unwrap();
        write_jpeg(&img, 90, &path).unwrap();
        assert_eq!(read_image(&path).unwrap().shape(), (9, 10));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(read_png("/nonexistent/x.png"), Err(TensorError::Io { .. })));
    }
}
