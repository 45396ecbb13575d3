//! Weight ablation on a mixed scene of lightly blurred and noisy candidates.
//!
//! cargo run --example ablation

use trustsr::embedding::MockProvider;
use trustsr::harness::{degrade, synthetic_texture, DegradationSpec};
use trustsr::metrics::{
    ablation_sweep, normalize_components, table_iv_grid, TwsScorer, WaveletNormalization,
};
use trustsr::sample_set::{Candidate, SampleSet};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let reference = synthetic_texture(96, 96, 21);
    let specs = [
        ("blur-0p8", DegradationSpec::gaussian_blur(0.8)),
        ("blur-1p5", DegradationSpec::gaussian_blur(1.5)),
        ("noise-0p03", DegradationSpec::noise(0.03, 4)),
        ("noise-0p08", DegradationSpec::noise(0.08, 4)),
        ("pixelate-3", DegradationSpec::pixelate(3)),
    ];
    let candidates = specs
        .iter()
        .map(|(id, spec)| Ok(Candidate::new(*id, degrade(&reference, spec)?)))
        .collect::<Result<Vec<_>, Box<dyn std::error::Error>>>()?;
    let set = SampleSet::new("ablation-demo", candidates, Some(reference.clone()))?;

    let provider = MockProvider::new(64, 0);
    let raw = TwsScorer::new(&provider).raw_components(&reference, &set)?;
    let normalized = normalize_components(raw, WaveletNormalization::MinMax)?;
    for row in ablation_sweep(&normalized, &table_iv_grid())? {
        let w = row.weights;
        println!(
            "{:<14} ({:.2}, {:.2}, {:.2})  mean {:+.4}  {}",
            row.name,
            w.lambda_clip,
            w.lambda_edge,
            w.lambda_wavelet,
            row.mean_tws,
            row.ranking.join(" > ")
        );
    }
    Ok(())
}
