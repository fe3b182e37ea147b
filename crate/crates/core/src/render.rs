//! PNG output for image strips.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{invalid, Error, Result};
use crate::real::Real;
use crate::types::{ImageTensor, CHANNELS};

/// Maps `[-1, 1]` to `0..=255`, rounding to nearest.
pub fn to_u8<S: Real>(v: S) -> u8 {
    (((v.to_f64().clamp(-1.0, 1.0) + 1.0) * 127.5).round()) as u8
}

/// Images side by side, left to right. All must share one resolution.
pub fn strip<S: Real>(images: &[ImageTensor<S>]) -> Result<RgbImage> {
    let first = images.first().ok_or_else(|| invalid("a strip needs at least one image"))?;
    let (h, w) = first.resolution();
    for x in images {
        x.ensure_resolution((h, w))?;
    }
    let mut out = RgbImage::new((w * images.len()) as u32, h as u32);
    for (k, x) in images.iter().enumerate() {
        let data = x.as_slice();
        for y in 0..h {
            for c in 0..w {
                let i = (y * w + c) * CHANNELS;
                let px = Rgb([to_u8(data[i]), to_u8(data[i + 1]), to_u8(data[i + 2])]);
                out.put_pixel((k * w + c) as u32, y as u32, px);
            }
        }
    }
    Ok(out)
}

pub fn save_strip<S: Real>(images: &[ImageTensor<S>], path: &Path) -> Result<()> {
    strip(images)?
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strip_places_images_left_to_right() {
        let a = ImageTensor::<f32>::new(2, 2, vec![-1.0; 12]).unwrap();
        let b = ImageTensor::<f32>::new(2, 2, vec![1.0; 12]).unwrap();
        let s = strip(&[a, b]).unwrap();
        assert_eq!(s.dimensions(), (4, 2));
        assert_eq!(s.get_pixel(1, 1), &Rgb([0, 0, 0]));
        assert_eq!(s.get_pixel(2, 0), &Rgb([255, 255, 255]));
        assert_eq!(to_u8(0.0f32), 128);
    }
}
