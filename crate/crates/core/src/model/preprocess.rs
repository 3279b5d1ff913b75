use image::imageops::{self, FilterType};
use image::DynamicImage;

use crate::dataset::Frame;
use crate::error::{ensure, Error, Result};

/// Resizes so that the image covers `target` (height, width), then crops the centre.
///
/// Only 8-bit RGB input is accepted; alpha or grayscale images are rejected
/// rather than silently converted.
pub fn preprocess_frame(img: &DynamicImage, target: (usize, usize)) -> Result<Frame> {
    let rgb = match img {
        DynamicImage::ImageRgb8(rgb) => rgb,
        other => {
            return Err(Error::validation(format!(
                "expected an 8-bit RGB image, got {:?}",
                other.color()
            )))
        }
    };
    let (th, tw) = target;
    ensure!(th > 0 && tw > 0, "target size must be non-empty");
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    ensure!(w > 0 && h > 0, "empty image");
    if (h, w) == target {
        return Ok(Frame::from_image(rgb));
    }
    let scale = (th as f64 / h as f64).max(tw as f64 / w as f64);
    let nh = ((h as f64 * scale).round() as usize).max(th);
    let nw = ((w as f64 * scale).round() as usize).max(tw);
    let resized = imageops::resize(rgb, nw as u32, nh as u32, FilterType::Triangle);
    let (x0, y0) = ((nw - tw) / 2, (nh - th) / 2);
    let cropped = imageops::crop_imm(&resized, x0 as u32, y0 as u32, tw as u32, th as u32).to_image();
    Ok(Frame::from_image(&cropped))
}
