use super::{Embedding, EmbeddingError, EmbeddingProvider};
use crate::image::{to_grayscale, Image};

const GRID: usize = 16;
const FEATURES: usize = GRID * GRID + 1;

/// Hermetic test encoder.
///
/// The image's luminance is box-averaged onto a 16x16 grid; that fingerprint
/// (plus a constant bias feature) is multiplied by a fixed pseudo-random
/// matrix derived from `seed`. The map is linear in the pixels, so it is
/// deterministic and Lipschitz: a per-pixel change of at most `eps` moves
/// every output element by at most `eps * 16^2 / sqrt(257)`.
#[derive(Clone, Debug)]
pub struct MockProvider {
    id: String,
    dim: usize,
    weights: Vec<f64>,
}

impl MockProvider {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim >= 2, "mock embedding dimension must be >= 2");
        let scale = 1.0 / (FEATURES as f64).sqrt();
        let weights = (0..dim * FEATURES)
            .map(|i| {
                let bits = splitmix64(seed ^ splitmix64(i as u64));
                // Uniform in [-1, 1).
                ((bits >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0) * scale
            })
            .collect();
        Self {
            id: format!("mock-d{dim}-s{seed}"),
            dim,
            weights,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Box-averaged luminance on a `GRID x GRID` lattice.
fn fingerprint(img: &Image) -> [f64; GRID * GRID] {
    let gray = to_grayscale(img);
    let (w, h) = (gray.width(), gray.height());
    let span = |i: usize, n: usize| {
        let start = i * n / GRID;
        let end = ((i + 1) * n / GRID).max(start + 1).min(n);
        (start.min(n - 1), end)
    };
    let mut out = [0.0; GRID * GRID];
    for gy in 0..GRID {
        let (y0, y1) = span(gy, h);
        for gx in 0..GRID {
            let (x0, x1) = span(gx, w);
            let mut sum = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    sum += gray.at(x, y);
                }
            }
            out[gy * GRID + gx] = sum / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    out
}

impl EmbeddingProvider for MockProvider {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn embed(&self, image: &Image) -> Result<Embedding, EmbeddingError> {
        let fp = fingerprint(image);
        let vector = self
            .weights
            .chunks_exact(FEATURES)
            .map(|row| {
                let dot: f64 = row[..GRID * GRID].iter().zip(&fp).map(|(w, f)| w * f).sum();
                (dot + row[GRID * GRID]) as f32
            })
            .collect();
        Embedding::new(self.id.clone(), vector)
    }
}
