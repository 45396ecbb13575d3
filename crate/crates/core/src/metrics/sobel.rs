use std::f64::consts::SQRT_2;

use super::MetricError;
use crate::image::Image;

/// Largest Sobel gradient magnitude reachable for inputs in `[0, 1]`.
pub const SOBEL_MAX_MAGNITUDE: f64 = 4.0 * SQRT_2;

/// Normalized Sobel gradient magnitude of a single-channel image.
///
/// Uses the standard 3x3 kernels with edge-replicate padding and divides by
/// [`SOBEL_MAX_MAGNITUDE`], so the output lies in `[0, 1]`. The map is
/// continuous; no threshold is applied.
pub fn sobel_edge_map(img: &Image) -> Result<Image, MetricError> {
    if !img.is_gray() {
        return Err(MetricError::ShapeMismatch(format!(
            "sobel expects one channel, got {}",
            img.channels()
        )));
    }
    let (w, h) = (img.width(), img.height());
    let px = |x: isize, y: isize| {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        img.at(x, y)
    };
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x - 1, y) + px(x - 1, y + 1));
            let gy = (px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x, y - 1) + px(x + 1, y - 1));
            out.push((gx * gx + gy * gy).sqrt() / SOBEL_MAX_MAGNITUDE);
        }
    }
    Ok(Image::new(w, h, 1, out)?)
}
