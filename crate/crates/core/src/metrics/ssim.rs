use super::{sobel_edge_map, MetricError};
use crate::image::{to_grayscale, Image};

/// Windowed SSIM parameters for samples in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - center;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Mean SSIM over all fully-contained 11x11 Gaussian windows.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, MetricError> {
    ssim_with(a, b, &SsimParams::default())
}

pub fn ssim_with(a: &Image, b: &Image, params: &SsimParams) -> Result<f64, MetricError> {
    if !a.is_gray() || !a.same_shape(b) {
        return Err(MetricError::ShapeMismatch(format!(
            "ssim needs equal single-channel images, got {}x{}x{} and {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    let (w, h) = (a.width(), a.height());
    let win = params.window;
    if w < win || h < win {
        return Err(MetricError::TooSmall(format!(
            "ssim needs sides >= {win}, got {w}x{h}"
        )));
    }
    let taps = gaussian_window(win, params.sigma);
    let c1 = params.k1 * params.k1;
    let c2 = params.k2 * params.k2;

    let (xa, xb) = (a.data(), b.data());
    let aa: Vec<f64> = xa.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = xb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = xa.iter().zip(xb).map(|(x, y)| x * y).collect();

    let mu_a = filter_valid(xa, w, h, &taps);
    let mu_b = filter_valid(xb, w, h, &taps);
    let e_aa = filter_valid(&aa, w, h, &taps);
    let e_bb = filter_valid(&bb, w, h, &taps);
    let e_ab = filter_valid(&ab, w, h, &taps);

    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
        total += num / den;
    }
    Ok(total / mu_a.len() as f64)
}

/// Separable correlation keeping only positions where the window fits.
fn filter_valid(src: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&line[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(j, t)| t * rows[(y + j) * ow + x])
                .sum();
        }
    }
    out
}

/// SSIM between the Sobel edge maps of the grayscale reference and candidate.
pub fn s_edge(reference: &Image, candidate: &Image) -> Result<f64, MetricError> {
    reference
        .check_same_shape(candidate)
        .map_err(|e| MetricError::ShapeMismatch(e.to_string()))?;
    let er = sobel_edge_map(&to_grayscale(reference))?;
    let ec = sobel_edge_map(&to_grayscale(candidate))?;
    ssim(&er, &ec)
}
