//! Separable 2-D discrete wavelet transform with the orthonormal
//! Daubechies-19 filter bank.
//!
//! Analysis keeps the even-indexed samples of the full convolution of the
//! symmetrically extended signal, so a length-`n` input yields
//! `ceil((n + 37) / 2)` coefficients per band. The synthesis routine is the
//! adjoint of the analysis operator and reconstructs the input exactly (up to
//! rounding) because the filter bank is orthonormal.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::image::{to_grayscale, Image};

/// Daubechies-19 analysis low-pass filter (38 taps, extremal phase).
///
/// Obtained by spectral factorization of the maximally flat half-band
/// polynomial with 80-digit arithmetic; verified below by the orthonormality
/// and vanishing-moment tests.
#[rustfmt::skip]
pub const DB19_DEC_LO: [f64; 38] = [
    8.666848838997619350323014e-10,
    -1.116402067035825816390505e-8,
    4.636937775782604223430858e-8,
    1.44708829879784454207822e-8,
    -0.0000006862755657769142701883555,
    0.000001531931476691193063931832,
    0.000003010964316296526339695334,
    -0.00001664017629715494454620678,
    0.000005105950487073886053049223,
    0.00008711270467219922965416862,
    -0.0001246007917341587753449784,
    -0.0002606761356786280057318315,
    0.0007358025205054352070260482,
    0.0003418086534585957765651657,
    -0.002687551800701582003957364,
    0.0007689543592575483559749139,
    0.007040747367105243153014511,
    -0.005866922281012174726584493,
    -0.01398838867853514163250401,
    0.01937554988917612764637094,
    0.02162376740958504713032984,
    -0.04567422627723090805645444,
    -0.02650123625012304089901836,
    0.08690675555581223248847645,
    0.02758435062562866875014744,
    -0.1427856950387365749779603,
    -0.03351854190230287868169388,
    0.2123497433062784888090609,
    0.07465226970810326636763433,
    -0.2858386317558262418545976,
    -0.2280913942154826463746326,
    0.2608949526510388292872457,
    0.6017045491275378948867077,
    0.5244363774646549153360576,
    0.26438843174089678467481,
    0.08127811326545955065296307,
    0.01428109845076439737439889,
    0.001108669763181710571099154,
];

/// Smallest side accepted by the 2-level db19 path.
pub const MIN_SIDE: usize = 64;

/// Boundary handling for the 1-D analysis/synthesis routines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Half-point symmetric extension (`x[-1] = x[0]`); output length
    /// `ceil((n + taps - 1) / 2)`.
    Symmetric,
    /// Circular wrap of an even-length signal; output length `n / 2`.
    /// Orthonormal on the signal space, used to check energy conservation.
    Periodic,
}

/// A two-channel orthonormal filter bank.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    pub dec_lo: Vec<f64>,
    pub dec_hi: Vec<f64>,
}

impl FilterBank {
    /// Builds the bank from an orthonormal low-pass filter; the high-pass is the
    /// alternating-flip `hi[k] = (-1)^(k+1) lo[F-1-k]`.
    pub fn from_lowpass(lo: &[f64]) -> Self {
        let f = lo.len();
        let dec_hi = (0..f)
            .map(|k| {
                let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
                sign * lo[f - 1 - k]
            })
            .collect();
        Self {
            dec_lo: lo.to_vec(),
            dec_hi,
        }
    }

    pub fn db19() -> Self {
        Self::from_lowpass(&DB19_DEC_LO)
    }

    pub fn taps(&self) -> usize {
        self.dec_lo.len()
    }

    pub fn coeff_len(&self, n: usize, boundary: Boundary) -> usize {
        match boundary {
            Boundary::Symmetric => (n + self.taps() - 1).div_ceil(2),
            Boundary::Periodic => n / 2,
        }
    }

    /// One analysis step: returns `(approximation, detail)`.
    pub fn analyze(&self, x: &[f64], boundary: Boundary) -> (Vec<f64>, Vec<f64>) {
        let n = x.len();
        let len = self.coeff_len(n, boundary);
        let mut lo = Vec::with_capacity(len);
        let mut hi = Vec::with_capacity(len);
        for i in 0..len {
            let m = 2 * i as isize;
            let (mut a, mut d) = (0.0, 0.0);
            for (j, (hl, hh)) in self.dec_lo.iter().zip(&self.dec_hi).enumerate() {
                let v = x[extend(m - j as isize, n, boundary)];
                a += hl * v;
                d += hh * v;
            }
            lo.push(a);
            hi.push(d);
        }
        (lo, hi)
    }

    /// Adjoint of [`FilterBank::analyze`]; reconstructs a signal of length `n`.
    pub fn synthesize(&self, lo: &[f64], hi: &[f64], n: usize, boundary: Boundary) -> Vec<f64> {
        let f = self.taps() as isize;
        let mut out = vec![0.0; n];
        match boundary {
            Boundary::Symmetric => {
                for (k, o) in out.iter_mut().enumerate() {
                    let k = k as isize;
                    // Coefficient i touches sample k when 0 <= 2i - k < F.
                    let first = (k + 1) / 2;
                    let last = (k + f - 1) / 2;
                    let mut acc = 0.0;
                    for i in first..=last {
                        let tap = (2 * i - k) as usize;
                        let i = i as usize;
                        if i < lo.len() {
                            acc += lo[i] * self.dec_lo[tap] + hi[i] * self.dec_hi[tap];
                        }
                    }
                    *o = acc;
                }
            }
            Boundary::Periodic => {
                for i in 0..lo.len() {
                    for j in 0..self.taps() {
                        let k = extend(2 * i as isize - j as isize, n, Boundary::Periodic);
                        out[k] += lo[i] * self.dec_lo[j] + hi[i] * self.dec_hi[j];
                    }
                }
            }
        }
        out
    }
}

/// Maps an out-of-range index back into `[0, n)`.
fn extend(k: isize, n: usize, boundary: Boundary) -> usize {
    let n = n as isize;
    match boundary {
        Boundary::Symmetric => {
            let m = k.rem_euclid(2 * n);
            (if m < n { m } else { 2 * n - 1 - m }) as usize
        }
        Boundary::Periodic => k.rem_euclid(n) as usize,
    }
}

/// Detail sub-bands of one level. The first letter names the filter applied
/// along rows (horizontal axis), the second the filter along columns.
#[derive(Clone, Debug, PartialEq)]
pub struct DetailBands {
    pub lh: Array2<f64>,
    pub hl: Array2<f64>,
    pub hh: Array2<f64>,
}

impl DetailBands {
    pub fn iter(&self) -> impl Iterator<Item = &Array2<f64>> {
        [&self.lh, &self.hl, &self.hh].into_iter()
    }
}

/// Multi-level decomposition `{LL_L, (LH_j, HL_j, HH_j) for j = 1..L}`.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletPyramid {
    pub approx: Array2<f64>,
    /// `details[0]` is level 1 (finest).
    pub details: Vec<DetailBands>,
    /// Input `(rows, cols)` of every level, finest first.
    pub shapes: Vec<(usize, usize)>,
    pub boundary: Boundary,
}

impl WaveletPyramid {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    /// Sum of squared coefficients over every band.
    pub fn energy(&self) -> f64 {
        let sq = |a: &Array2<f64>| a.iter().map(|v| v * v).sum::<f64>();
        sq(&self.approx)
            + self
                .details
                .iter()
                .flat_map(|d| d.iter())
                .map(sq)
                .sum::<f64>()
    }

    /// Sum of absolute detail coefficients over all levels.
    pub fn detail_l1(&self) -> f64 {
        self.details
            .iter()
            .flat_map(|d| d.iter())
            .map(|a| a.iter().map(|v| v.abs()).sum::<f64>())
            .sum()
    }
}

/// Forward 2-D transform of a plane (`[row, col]` indexing).
pub fn dwt2(
    plane: &Array2<f64>,
    bank: &FilterBank,
    levels: usize,
    boundary: Boundary,
) -> WaveletPyramid {
    let mut current = plane.clone();
    let mut details = Vec::with_capacity(levels);
    let mut shapes = Vec::with_capacity(levels);
    for _ in 0..levels {
        let (rows, cols) = current.dim();
        shapes.push((rows, cols));
        let cw = bank.coeff_len(cols, boundary);
        let mut low = Array2::zeros((rows, cw));
        let mut high = Array2::zeros((rows, cw));
        for r in 0..rows {
            let line: Vec<f64> = current.row(r).to_vec();
            let (l, h) = bank.analyze(&line, boundary);
            low.row_mut(r).assign(&ndarray::ArrayView1::from(&l));
            high.row_mut(r).assign(&ndarray::ArrayView1::from(&h));
        }
        let (ll, lh) = columns(&low, bank, boundary);
        let (hl, hh) = columns(&high, bank, boundary);
        details.push(DetailBands { lh, hl, hh });
        current = ll;
    }
    WaveletPyramid {
        approx: current,
        details,
        shapes,
        boundary,
    }
}

fn columns(src: &Array2<f64>, bank: &FilterBank, boundary: Boundary) -> (Array2<f64>, Array2<f64>) {
    let (rows, cols) = src.dim();
    let ch = bank.coeff_len(rows, boundary);
    let mut low = Array2::zeros((ch, cols));
    let mut high = Array2::zeros((ch, cols));
    for c in 0..cols {
        let line: Vec<f64> = src.column(c).to_vec();
        let (l, h) = bank.analyze(&line, boundary);
        low.column_mut(c).assign(&ndarray::ArrayView1::from(&l));
        high.column_mut(c).assign(&ndarray::ArrayView1::from(&h));
    }
    (low, high)
}

/// Inverse of [`dwt2`].
pub fn idwt2(pyramid: &WaveletPyramid, bank: &FilterBank) -> Array2<f64> {
    let boundary = pyramid.boundary;
    let mut current = pyramid.approx.clone();
    for (bands, &(rows, cols)) in pyramid.details.iter().zip(&pyramid.shapes).rev() {
        let low = uncolumns(&current, &bands.lh, rows, bank, boundary);
        let high = uncolumns(&bands.hl, &bands.hh, rows, bank, boundary);
        let mut out = Array2::zeros((rows, cols));
        for r in 0..rows {
            let l = low.row(r).to_vec();
            let h = high.row(r).to_vec();
            let line = bank.synthesize(&l, &h, cols, boundary);
            out.row_mut(r).assign(&ndarray::ArrayView1::from(&line));
        }
        current = out;
    }
    current
}

fn uncolumns(
    lo: &Array2<f64>,
    hi: &Array2<f64>,
    rows: usize,
    bank: &FilterBank,
    boundary: Boundary,
) -> Array2<f64> {
    let cols = lo.ncols();
    let mut out = Array2::zeros((rows, cols));
    for c in 0..cols {
        let l = lo.column(c).to_vec();
        let h = hi.column(c).to_vec();
        let line = bank.synthesize(&l, &h, rows, boundary);
        out.column_mut(c).assign(&ndarray::ArrayView1::from(&line));
    }
    out
}

pub fn image_to_plane(img: &Image) -> Array2<f64> {
    Array2::from_shape_vec((img.height(), img.width()), img.data().to_vec())
        .expect("image buffer matches its shape")
}

/// Wavelet settings for the artifact score. The wavelet is always db19 with
/// symmetric extension; only the level count is configurable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveletConfig {
    pub levels: usize,
}

impl Default for WaveletConfig {
    fn default() -> Self {
        Self { levels: 2 }
    }
}

impl WaveletConfig {
    pub const WAVELET_NAME: &'static str = "db19";

    pub fn validate(&self) -> Result<(), MetricError> {
        if self.levels == 0 {
            return Err(MetricError::InvalidConfig(
                "wavelet levels must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Symmetric-extension db19 decomposition of a single-channel image.
pub fn dwt2_db19(img: &Image, levels: usize) -> Result<WaveletPyramid, MetricError> {
    if !img.is_gray() {
        return Err(MetricError::ShapeMismatch(format!(
            "dwt2 expects one channel, got {}",
            img.channels()
        )));
    }
    WaveletConfig { levels }.validate()?;
    if img.width() < MIN_SIDE || img.height() < MIN_SIDE {
        return Err(MetricError::TooSmall(format!(
            "db19 decomposition needs at least {MIN_SIDE}x{MIN_SIDE}, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    Ok(dwt2(
        &image_to_plane(img),
        &FilterBank::db19(),
        levels,
        Boundary::Symmetric,
    ))
}

/// Mean absolute detail coefficient per pixel of the grayscale image:
/// the L1 norm of every LH/HL/HH band over levels `1..=L`, divided by
/// `width * height`.
pub fn s_wavelet_raw(img: &Image, cfg: &WaveletConfig) -> Result<f64, MetricError> {
    let gray = to_grayscale(img);
    let pyramid = dwt2_db19(&gray, cfg.levels)?;
    Ok(pyramid.detail_l1() / (img.width() * img.height()) as f64)
}
