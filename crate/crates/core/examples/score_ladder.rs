//! Builds one degradation ladder per kind from synthetic textures, scores each
//! with TWS and reports how well the ranking recovers the true order.
//!
//! cargo run --example score_ladder -- [seeds]

use trustsr::embedding::MockProvider;
use trustsr::harness::{build_ladder, default_strengths, synthetic_texture, DegradationKind};
use trustsr::metrics::TwsScorer;
use trustsr::stats::kendall_tau_orders;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seeds: u64 = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(5);
    let provider = MockProvider::new(64, 7);
    let scorer = TwsScorer::new(&provider);
    for kind in DegradationKind::ALL {
        for seed in 0..seeds {
            let reference = synthetic_texture(128, 128, seed);
            let ladder = build_ladder(&reference, kind, &default_strengths(kind), seed)?;
            let scored = scorer.score_set(&ladder)?;
            let predicted: Vec<String> = scored.iter().map(|b| b.candidate_id.clone()).collect();
            let truth = ladder.truth_order.clone().unwrap_or_default();
            let tau = kendall_tau_orders(&predicted, &truth)?;
            println!(
                "{:<9} seed {seed}: tau {tau:+.3}  top-1 {:<12} truth {:<12}",
                kind.short_name(),
                predicted[0],
                truth[0]
            );
            for b in &scored {
                println!(
                    "    {:<12} clip {:.4} edge {:.4} wav_raw {:.5} wav {:.3} tws {:+.4}",
                    b.candidate_id, b.s_clip, b.s_edge, b.s_wavelet_raw, b.s_wavelet, b.tws
                );
            }
        }
    }
    Ok(())
}
