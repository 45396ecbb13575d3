//! db19 decomposition of a texture as noise is added: per-level detail
//! energy, the raw artifact score, and a round-trip check.
//!
//! cargo run --example wavelet_energy

use trustsr::harness::{degrade, synthetic_texture, DegradationSpec};
use trustsr::metrics::wavelet::{idwt2, image_to_plane, FilterBank};
use trustsr::metrics::{dwt2_db19, s_wavelet_raw, WaveletConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let reference = synthetic_texture(128, 128, 3);
    let bank = FilterBank::db19();
    let cfg = WaveletConfig::default();
    for sigma in [0.0, 0.02, 0.05, 0.1, 0.25] {
        let img = if sigma == 0.0 {
            reference.clone()
        } else {
            degrade(&reference, &DegradationSpec::noise(sigma, 1))?
        };
        let pyramid = dwt2_db19(&img, 2)?;
        let levels: Vec<String> = pyramid
            .details
            .iter()
            .enumerate()
            .map(|(j, d)| {
                let l1: f64 = d
                    .iter()
                    .map(|b| b.iter().map(|v| v.abs()).sum::<f64>())
                    .sum();
                format!("L{} {:>9.2}", j + 1, l1)
            })
            .collect();
        let back = idwt2(&pyramid, &bank);
        let err = back
            .iter()
            .zip(image_to_plane(&img).iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!(
            "noise {sigma:<5} {}  s_wavelet_raw {:.5}  round-trip {err:.1e}",
            levels.join("  "),
            s_wavelet_raw(&img, &cfg)?
        );
    }
    Ok(())
}
