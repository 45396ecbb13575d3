//! The two-stage selection pipeline on tiled digit candidates, driven by a
//! scripted VLM. The first pass records every exchange to a JSON-lines log;
//! the second pass answers only from that log and must agree exactly.
//!
//! cargo run --example two_stage_replay

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trustsr::image::{tile_mnist, Image, MNIST_REPEATS, MNIST_TARGET_SIDE};
use trustsr::sample_set::{Candidate, SampleSet};
use trustsr::vlm::{
    two_stage_pipeline, PipelineConfig, PromptPool, Recorder, ReplayLog, RequestKind,
    ScriptedProvider, VlmRequest,
};

fn digit(rng: &mut ChaCha8Rng) -> Image {
    let data = (0..49)
        .map(|p| {
            let (x, y) = (p % 7, p / 7);
            let stroke = x == 1 || y == 0 || y == 3 || (x == 5 && y > 3);
            let v: f64 = if stroke { 0.85 } else { 0.1 };
            (v + rng.random_range(-0.08..0.08)).clamp(0.0, 1.0)
        })
        .collect();
    Image::new(7, 7, 1, data).unwrap()
}

fn index(id: &str) -> usize {
    id[1..].parse().unwrap()
}

/// Says "5" for most digits, is confident about every third candidate, and
/// ranks candidates by a fixed pseudo-quality key.
fn script(req: &VlmRequest<'_>) -> String {
    match &req.kind {
        RequestKind::Identify { .. } => {
            let label = if index(req.images[0].candidate_id) % 5 == 0 {
                6
            } else {
                5
            };
            format!("This looks like the digit {label}.")
        }
        RequestKind::Confidence { .. } => {
            let i = index(req.images[0].candidate_id);
            format!("{}", if i % 3 == 0 { 92 } else { 55 })
        }
        RequestKind::Batch {
            batch_index,
            batch_count,
            ..
        } => {
            if batch_index + 1 < *batch_count {
                return "Noted.".into();
            }
            let mut shown = Vec::new();
            for (b, turn) in req.history.iter().enumerate() {
                for (i, img) in turn.images.iter().enumerate() {
                    shown.push((b + 1, i + 1, index(img.candidate_id)));
                }
            }
            for (i, img) in req.images.iter().enumerate() {
                shown.push((batch_index + 1, i + 1, index(img.candidate_id)));
            }
            shown.sort_by_key(|s| (s.2 * 37 + 11) % 53);
            let order: Vec<String> = shown.iter().map(|(b, i, _)| format!("{b}-{i}")).collect();
            format!("RANKING: {}", order.join(", "))
        }
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let candidates = (0..30)
        .map(|i| {
            Ok(Candidate::new(
                format!("d{i:02}"),
                tile_mnist(&digit(&mut rng), MNIST_REPEATS, MNIST_TARGET_SIDE)?,
            ))
        })
        .collect::<Result<Vec<_>, Box<dyn std::error::Error>>>()?;
    let set = SampleSet::new("digits", candidates, None)?;
    let (info, artifact) = (PromptPool::information(), PromptPool::artifact());
    let config = PipelineConfig::default();

    let dir = tempfile::tempdir()?;
    let log_path = dir.path().join("exchanges.jsonl");
    let recorder = Recorder::append(ScriptedProvider::new("scripted", script), &log_path)?;
    let live = two_stage_pipeline(&set, &info, &artifact, &recorder, &recorder, &config)?;
    println!(
        "live:     label {} survivors {} top-{} {:?}",
        live.target_label,
        live.survivors.len(),
        config.k,
        live.selection.top_k
    );

    let log = Arc::new(ReplayLog::load(&log_path)?);
    println!("log holds {} exchanges", log.len());
    let replay = log.provider("scripted")?;
    let again = two_stage_pipeline(&set, &info, &artifact, &replay, &replay, &config)?;
    println!(
        "replayed: label {} survivors {} top-{} {:?}",
        again.target_label,
        again.survivors.len(),
        config.k,
        again.selection.top_k
    );
    assert_eq!(live.selection.top_k, again.selection.top_k);
    assert_eq!(live.ensemble, again.ensemble);
    Ok(())
}
