//! Synthetic degradation ladders with a known quality order, textured test
//! references, and the MOS correlation runner.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{Image, ImageError};
use crate::sample_set::{Candidate, SampleSet};
use crate::stats::{pearson, StatsError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("bad degradation spec: {0}")]
    BadSpec(String),
    #[error("join error: {0}")]
    Join(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationKind {
    GaussianBlur,
    AdditiveGaussianNoise,
    Pixelate,
    IntensityQuantize,
}

impl DegradationKind {
    pub const ALL: [DegradationKind; 4] = [
        DegradationKind::GaussianBlur,
        DegradationKind::AdditiveGaussianNoise,
        DegradationKind::Pixelate,
        DegradationKind::IntensityQuantize,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            DegradationKind::GaussianBlur => "blur",
            DegradationKind::AdditiveGaussianNoise => "noise",
            DegradationKind::Pixelate => "pixelate",
            DegradationKind::IntensityQuantize => "quantize",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| {
            k.short_name() == name
                || serde_json::to_value(k)
                    .ok()
                    .and_then(|v| v.as_str().map(|s| s == name))
                    == Some(true)
        })
    }

    /// Whether a larger strength means a worse image. Quantization is
    /// parameterized by its level count, so more levels is milder.
    pub fn strength_increases_severity(self) -> bool {
        self != DegradationKind::IntensityQuantize
    }
}

/// One distortion. `strength` is blur sigma (px), noise sigma (intensity),
/// block size (px) or level count, depending on `kind`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    pub strength: f64,
    #[serde(default)]
    pub seed: u64,
}

impl DegradationSpec {
    pub fn gaussian_blur(sigma: f64) -> Self {
        Self {
            kind: DegradationKind::GaussianBlur,
            strength: sigma,
            seed: 0,
        }
    }

    pub fn noise(sigma: f64, seed: u64) -> Self {
        Self {
            kind: DegradationKind::AdditiveGaussianNoise,
            strength: sigma,
            seed,
        }
    }

    pub fn pixelate(block: usize) -> Self {
        Self {
            kind: DegradationKind::Pixelate,
            strength: block as f64,
            seed: 0,
        }
    }

    pub fn quantize(levels: usize) -> Self {
        Self {
            kind: DegradationKind::IntensityQuantize,
            strength: levels as f64,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let s = self.strength;
        if !(s.is_finite() && s > 0.0) {
            return Err(HarnessError::BadSpec(format!(
                "strength must be > 0, got {s}"
            )));
        }
        let integral = s.fract() == 0.0;
        match self.kind {
            DegradationKind::Pixelate if !integral => Err(HarnessError::BadSpec(format!(
                "pixelate block must be a whole number, got {s}"
            ))),
            DegradationKind::IntensityQuantize if !integral || s < 2.0 => {
                Err(HarnessError::BadSpec(format!(
                    "quantize needs an integer level count >= 2, got {s}"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Applies one distortion; deterministic in `(img, spec)`.
pub fn degrade(img: &Image, spec: &DegradationSpec) -> Result<Image, HarnessError> {
    spec.validate()?;
    let out = match spec.kind {
        DegradationKind::GaussianBlur => gaussian_blur(img, spec.strength),
        DegradationKind::AdditiveGaussianNoise => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let normal = Normal::new(0.0, spec.strength)
                .map_err(|e| HarnessError::BadSpec(e.to_string()))?;
            let data = img
                .data()
                .iter()
                .map(|v| v + normal.sample(&mut rng))
                .collect();
            Image::new(img.width(), img.height(), img.channels(), data)?
        }
        DegradationKind::Pixelate => pixelate(img, spec.strength as usize),
        DegradationKind::IntensityQuantize => {
            let levels = spec.strength;
            img.map(|v| ((v * levels).floor().min(levels - 1.0) + 0.5) / levels)
        }
    };
    Ok(out)
}

fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);

    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let src = img.data();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                tmp[(y * w + x) * ch + c] = taps
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        let sx = clamp(x as isize + i as isize - radius, w);
                        t * src[(y * w + sx) * ch + c]
                    })
                    .sum();
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                out[(y * w + x) * ch + c] = taps
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        let sy = clamp(y as isize + i as isize - radius, h);
                        t * tmp[(sy * w + x) * ch + c]
                    })
                    .sum();
            }
        }
    }
    Image::new(w, h, ch, out).expect("blur preserves range")
}

fn pixelate(img: &Image, block: usize) -> Image {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let mut out = vec![0.0; img.data().len()];
    for by in (0..h).step_by(block) {
        for bx in (0..w).step_by(block) {
            let (y1, x1) = ((by + block).min(h), (bx + block).min(w));
            let count = ((y1 - by) * (x1 - bx)) as f64;
            for c in 0..ch {
                let mut sum = 0.0;
                for y in by..y1 {
                    for x in bx..x1 {
                        sum += img.get(x, y, c);
                    }
                }
                let m = sum / count;
                for y in by..y1 {
                    for x in bx..x1 {
                        out[(y * w + x) * ch + c] = m;
                    }
                }
            }
        }
    }
    Image::new(w, h, ch, out).expect("block means stay in range")
}

/// A grayscale test scene: oriented sinusoids of several frequencies over a
/// few hard-edged rectangles, scaled into `[0.1, 0.9]`.
pub fn synthetic_texture(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            let freq = rng.random_range(0.03..0.25);
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let amp = rng.random_range(0.3..1.0);
            (freq * angle.cos(), freq * angle.sin(), phase, amp)
        })
        .collect();
    let rects: Vec<(f64, f64, f64, f64, f64)> = (0..5)
        .map(|_| {
            let x0 = rng.random_range(0.0..width as f64);
            let y0 = rng.random_range(0.0..height as f64);
            let rw = rng.random_range(4.0..width as f64 / 2.0);
            let rh = rng.random_range(4.0..height as f64 / 2.0);
            let v = rng.random_range(-1.5..1.5);
            (x0, y0, rw, rh, v)
        })
        .collect();
    let raw: Vec<f64> = (0..height)
        .flat_map(|y| (0..width).map(move |x| (x as f64, y as f64)))
        .map(|(x, y)| {
            let mut v: f64 = waves
                .iter()
                .map(|(fx, fy, ph, a)| a * (std::f64::consts::TAU * (fx * x + fy * y) + ph).sin())
                .sum();
            for (x0, y0, rw, rh, val) in &rects {
                if x >= *x0 && x < x0 + rw && y >= *y0 && y < y0 + rh {
                    v += val;
                }
            }
            v
        })
        .collect();
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let data = raw.iter().map(|v| 0.1 + 0.8 * (v - lo) / span).collect();
    Image::new(width, height, 1, data).expect("texture in range")
}

fn format_strength(s: f64) -> String {
    let text = format!("{s}");
    text.replace('.', "p")
}

/// Candidate id for one rung, e.g. `blur-1p5`.
pub fn rung_id(kind: DegradationKind, strength: f64) -> String {
    format!("{}-{}", kind.short_name(), format_strength(strength))
}

/// One degraded copy of `reference` per strength. `strengths` must be
/// strictly ascending; the recorded truth order lists the mildest rung first.
/// Stochastic kinds use the same `seed` on every rung, so noise rungs share
/// one noise field at different amplitudes.
pub fn build_ladder(
    reference: &Image,
    kind: DegradationKind,
    strengths: &[f64],
    seed: u64,
) -> Result<SampleSet, HarnessError> {
    if strengths.len() < 2 {
        return Err(HarnessError::BadSpec(format!(
            "a ladder needs at least 2 strengths, got {}",
            strengths.len()
        )));
    }
    if strengths.windows(2).any(|p| !(p[1] > p[0])) {
        return Err(HarnessError::BadSpec(
            "strengths must be strictly ascending".into(),
        ));
    }
    let candidates = strengths
        .par_iter()
        .map(|&strength| {
            let spec = DegradationSpec {
                kind,
                strength,
                seed,
            };
            Ok(Candidate::new(
                rung_id(kind, strength),
                degrade(reference, &spec)?,
            ))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let mut truth: Vec<String> = candidates.iter().map(|c| c.id.clone()).collect();
    if !kind.strength_increases_severity() {
        truth.reverse();
    }
    let scene = format!("{}-ladder", kind.short_name());
    Ok(SampleSet::new(scene, candidates, Some(reference.clone()))?.with_truth_order(truth))
}

/// Default rungs used by the examples and acceptance checks.
pub fn default_strengths(kind: DegradationKind) -> Vec<f64> {
    match kind {
        DegradationKind::GaussianBlur => vec![0.5, 1.0, 1.5, 2.5, 4.0],
        DegradationKind::AdditiveGaussianNoise => vec![0.02, 0.05, 0.1, 0.15, 0.25],
        DegradationKind::Pixelate => vec![2.0, 3.0, 4.0, 6.0, 8.0],
        DegradationKind::IntensityQuantize => vec![3.0, 4.0, 6.0, 8.0, 16.0],
    }
}

#[derive(Debug, Deserialize)]
struct MosRow {
    image_id: String,
    mos: f64,
}

/// Reads an `image_id,mos` CSV.
pub fn read_mos_csv(path: impl AsRef<Path>) -> Result<HashMap<String, f64>, HarnessError> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| HarnessError::Join(format!("cannot read {}: {e}", path.display())))?;
    let mut out = HashMap::new();
    for row in reader.deserialize::<MosRow>() {
        let row = row.map_err(|e| HarnessError::Join(format!("bad MOS row: {e}")))?;
        if out.insert(row.image_id.clone(), row.mos).is_some() {
            return Err(HarnessError::Join(format!(
                "duplicate MOS id {:?}",
                row.image_id
            )));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MosGroup {
    pub group: String,
    pub n: usize,
    /// `None` when the group is too small or constant.
    pub pearson: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MosReport {
    pub n: usize,
    pub overall: f64,
    pub groups: Vec<MosGroup>,
}

/// Group of an image id: the text before the first `_`, or the whole id.
pub fn scene_group(id: &str) -> &str {
    id.split('_').next().unwrap_or(id)
}

/// Pearson correlation of metric scores with MOS, overall and per group.
/// Every scored id must have a MOS entry; extra MOS rows are ignored.
pub fn mos_correlation(
    scores: &[(String, f64)],
    mos: &HashMap<String, f64>,
) -> Result<MosReport, HarnessError> {
    let mut joined = Vec::with_capacity(scores.len());
    for (id, s) in scores {
        let m = mos
            .get(id)
            .ok_or_else(|| HarnessError::Join(format!("no MOS for {id:?}")))?;
        joined.push((id.as_str(), *s, *m));
    }
    let xs: Vec<f64> = joined.iter().map(|j| j.1).collect();
    let ys: Vec<f64> = joined.iter().map(|j| j.2).collect();
    let overall = pearson(&xs, &ys)?;
    let mut grouped: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (id, s, m) in &joined {
        let g = grouped.entry(scene_group(id)).or_default();
        g.0.push(*s);
        g.1.push(*m);
    }
    let groups = grouped
        .into_iter()
        .map(|(group, (x, y))| MosGroup {
            group: group.to_string(),
            n: x.len(),
            pearson: pearson(&x, &y).ok(),
        })
        .collect();
    Ok(MosReport {
        n: joined.len(),
        overall,
        groups,
    })
}
