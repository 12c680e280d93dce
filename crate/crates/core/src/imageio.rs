//! 8-bit PNG (RGB or grayscale) and binary PPM input, PNG output.
//!
//! Samples map to `[0, 1]` by dividing by 255; grayscale is replicated to
//! three channels. Anything else, including 16-bit data, is rejected.

use std::path::Path;

use image::{DynamicImage, ImageFormat};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

/// Decodes PNG or P6 bytes into a `3 x H x W` tensor.
pub fn decode_image(bytes: &[u8]) -> Result<Tensor> {
    let format = if bytes.starts_with(PNG_SIGNATURE) {
        ImageFormat::Png
    } else if bytes.starts_with(b"P6") {
        ImageFormat::Pnm
    } else {
        return format_err("unsupported image format (expected PNG or binary PPM)");
    };
    let img = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| Error::Format(format!("cannot decode image: {e}")))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let channels: Vec<Vec<f64>> = match img {
        DynamicImage::ImageRgb8(buf) => {
            let raw = buf.into_raw();
            (0..3).map(|c| raw.iter().skip(c).step_by(3).map(|&v| v as f64 / 255.0).collect()).collect()
        }
        DynamicImage::ImageLuma8(buf) => {
            let plane: Vec<f64> = buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
            vec![plane.clone(), plane.clone(), plane]
        }
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) | DynamicImage::ImageLumaA16(_) => {
            return format_err("16-bit images are not supported");
        }
        other => return format_err(format!("unsupported pixel layout {:?}", other.color())),
    };
    Tensor::from_vec(3, h, w, channels.concat())
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    decode_image(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        e => e,
    })
}

/// Quantizes a 3-channel tensor (clamped to `[0, 1]`) to an 8-bit RGB PNG.
pub fn save_png(image: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    if image.channels() != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {}", image.channels())));
    }
    let (h, w) = (image.height(), image.width());
    let mut raw = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                raw.push((image.at(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    let buf = image::RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer sized to image");
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Format(format!("cannot write PNG: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn png_round_trip_is_exact_on_grid_values() {
        let mut rng = Rng::new(3);
        let data: Vec<f64> = (0..3 * 5 * 4).map(|_| rng.below(256) as f64 / 255.0).collect();
        let t = Tensor::from_vec(3, 5, 4, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        save_png(&t, &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), t);
    }

    #[test]
    fn ppm_and_gray() {
        let mut ppm = b"P6\n2 1\n255\n".to_vec();
        ppm.extend([255, 0, 51, 0, 255, 102]);
        let t = decode_image(&ppm).unwrap();
        assert_eq!(t.shape(), (3, 1, 2));
        assert_eq!(t.at(2, 0, 0), 0.2);
        assert_eq!(t.at(1, 0, 1), 1.0);

        let mut png = Vec::new();
        image::GrayImage::from_raw(2, 2, vec![0, 51, 102, 255])
            .unwrap()
            .write_to(&mut std::io::Cursor::new(&mut png), ImageFormat::Png)
            .unwrap();
        let g = decode_image(&png).unwrap();
        assert_eq!(g.plane(0), g.plane(2));
        assert_eq!(g.at(1, 0, 1), 0.2);
    }

    #[test]
    fn rejects_16_bit_and_garbage() {
        let mut ppm = b"P6\n1 1\n65535\n".to_vec();
        ppm.extend([0, 1, 0, 2, 0, 3]);
        assert!(matches!(decode_image(&ppm), Err(Error::Format(m)) if m.contains("16-bit")));
        assert!(decode_image(b"P3\n1 1\n255\n0 0 0").is_err());
        assert!(decode_image(b"hello").is_err());

        let mut png = Vec::new();
        image::ImageBuffer::<image::Luma<u16>, _>::from_raw(1, 1, vec![4000u16])
            .unwrap()
            .write_to(&mut std::io::Cursor::new(&mut png), ImageFormat::Png)
            .unwrap();
        assert!(decode_image(&png).is_err());
    }
}
