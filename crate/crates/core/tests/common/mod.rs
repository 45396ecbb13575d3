//! Fixtures shared by the integration tests: MNIST-style candidate sets and
//! deterministic scripted VLMs.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trustsr::image::{tile_mnist, BitDepth, Image, MNIST_REPEATS, MNIST_TARGET_SIDE};
use trustsr::sample_set::{Candidate, SampleSet};
use trustsr::vlm::{RequestKind, ScriptedProvider, VlmRequest};

/// A 7x7 digit-like stroke pattern with per-sample jitter.
pub fn digit(rng: &mut ChaCha8Rng) -> Image {
    let base: [[u8; 7]; 7] = [
        [0, 1, 1, 1, 1, 1, 0],
        [0, 1, 0, 0, 0, 0, 0],
        [0, 1, 1, 1, 1, 0, 0],
        [0, 0, 0, 0, 0, 1, 0],
        [0, 0, 0, 0, 0, 1, 0],
        [0, 1, 0, 0, 0, 1, 0],
        [0, 0, 1, 1, 1, 0, 0],
    ];
    let data = base
        .iter()
        .flatten()
        .map(|&b| {
            let v: f64 = if b == 1 { 0.8 } else { 0.1 };
            (v + rng.random_range(-0.1..0.1)).clamp(0.0, 1.0)
        })
        .collect();
    Image::new(7, 7, 1, data).unwrap()
}

/// `n` tiled 128x128 candidates with ids `s000`, `s001`, ...
pub fn mnist_set(n: usize, seed: u64) -> SampleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates = (0..n)
        .map(|i| {
            let tile = tile_mnist(&digit(&mut rng), MNIST_REPEATS, MNIST_TARGET_SIDE).unwrap();
            Candidate::new(format!("s{i:03}"), tile)
        })
        .collect();
    let reference = tile_mnist(&digit(&mut rng), MNIST_REPEATS, MNIST_TARGET_SIDE).unwrap();
    SampleSet::new(format!("scene-{seed}"), candidates, Some(reference)).unwrap()
}

/// Saves `set` as 8-bit PNGs plus `manifest.json` under `dir`.
pub fn write_set(set: &SampleSet, dir: &Path) -> PathBuf {
    set.save(dir, BitDepth::Eight).unwrap()
}

pub fn index_of(id: &str) -> usize {
    id.trim_start_matches(|c: char| !c.is_ascii_digit())
        .parse()
        .unwrap()
}

/// Deterministic quality key used by [`scripted_vlm`] to rank candidates:
/// lower is better.
pub fn quality_key(id: &str, salt: usize) -> usize {
    (index_of(id) * 7919 + salt * 31) % 101
}

/// Answers every request kind from candidate ids alone.
///
/// Identify: label "3" for every seventh candidate, "5" otherwise.
/// Confidence: `40 + (i * 37) % 60`. Batch: the final reply ranks every
/// candidate shown in the session by [`quality_key`] salted with `salt`,
/// or with the prompt index when `per_prompt` is set.
pub fn scripted_vlm(id: &str, salt: usize, per_prompt: bool) -> ScriptedProvider {
    ScriptedProvider::new(id, move |req| script(req, salt, per_prompt))
}

fn script(req: &VlmRequest<'_>, salt: usize, per_prompt: bool) -> String {
    match &req.kind {
        RequestKind::Identify { .. } => {
            let i = index_of(req.images[0].candidate_id);
            let label = if i % 7 == 3 { 3 } else { 5 };
            format!("This appears to be the number {label}.")
        }
        RequestKind::Confidence { .. } => {
            let i = index_of(req.images[0].candidate_id);
            format!("{}", 40 + (i * 37) % 60)
        }
        RequestKind::Batch {
            prompt_index,
            batch_index,
            batch_count,
        } => {
            if batch_index + 1 < *batch_count {
                return "Noted, waiting for the remaining batches.".into();
            }
            let salt = if per_prompt { *prompt_index } else { salt };
            let mut seen: Vec<(usize, usize, &str)> = Vec::new();
            for (b, turn) in req.history.iter().enumerate() {
                for (i, r) in turn.images.iter().enumerate() {
                    seen.push((b + 1, i + 1, r.candidate_id));
                }
            }
            for (i, r) in req.images.iter().enumerate() {
                seen.push((batch_index + 1, i + 1, r.candidate_id));
            }
            seen.sort_by_key(|&(_, _, id)| (quality_key(id, salt), id.to_string()));
            let pairs: Vec<String> = seen.iter().map(|(b, i, _)| format!("{b}-{i}")).collect();
            format!("Cleanest first.\nRANKING: {}", pairs.join(", "))
        }
    }
}
