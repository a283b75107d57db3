//! Image to network input: gray or RGB to 3 channels, letterboxed onto a
//! mid-gray square canvas, scaled to [0, 1].

use image::imageops::{self, FilterType};
use image::{DynamicImage, Rgb, RgbImage};
use tinydet_core::geometry::Letterbox;

use crate::tensor::Tensor;

/// Canvas value of the letterbox padding.
pub const PAD_VALUE: f32 = 0.5;

/// Returns a `3 x size x size` planar buffer and the applied transform.
pub fn preprocess(image: &DynamicImage, size: usize) -> (Vec<f32>, Letterbox) {
    let rgb = image.to_rgb8();
    let lb = Letterbox::new(rgb.width(), rgb.height(), size as u32);
    let (sw, sh) = lb.scaled_dims();
    let resized: RgbImage = if (sw, sh) == rgb.dimensions() { rgb } else { imageops::resize(&rgb, sw.max(1), sh.max(1), FilterType::Triangle) };
    let mut out = vec![PAD_VALUE; 3 * size * size];
    let (ox, oy) = (lb.pad_x as usize, lb.pad_y as usize);
    for (x, y, Rgb(px)) in resized.enumerate_pixels() {
        let (cx, cy) = (x as usize + ox, y as usize + oy);
        if cx >= size || cy >= size {
            continue;
        }
        for (c, v) in px.iter().enumerate() {
            out[(c * size + cy) * size + cx] = *v as f32 / 255.0;
        }
    }
    (out, lb)
}

/// Stacks equally sized planar inputs into one batch.
pub fn batch(inputs: &[&[f32]], size: usize) -> Tensor {
    let mut data = Vec::with_capacity(inputs.len() * 3 * size * size);
    for i in inputs {
        data.extend_from_slice(i);
    }
    Tensor::from_vec(inputs.len(), 3, size, size, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::GrayImage;

    #[test]
    fn gray_is_replicated_and_padded() {
        let img = DynamicImage::ImageLuma8(GrayImage::from_pixel(8, 4, image::Luma([255])));
        let (buf, lb) = preprocess(&img, 8);
        assert_eq!((lb.scale, lb.pad_x, lb.pad_y), (1.0, 0.0, 2.0));
        for c in 0..3 {
            assert_eq!(buf[(c * 8) * 8], PAD_VALUE);
            assert_eq!(buf[(c * 8 + 2) * 8], 1.0);
            assert_eq!(buf[(c * 8 + 6) * 8], PAD_VALUE);
        }
    }
}
