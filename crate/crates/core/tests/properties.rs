//! Cross-module invariants checked over generated inputs.

use proptest::prelude::*;
use trustsr::embedding::{cosine_similarity, CachedProvider, EmbeddingProvider, MockProvider};
use trustsr::image::Image;
use trustsr::metrics::wavelet::{idwt2, image_to_plane, FilterBank};
use trustsr::metrics::{dwt2_db19, s_wavelet_raw, ssim, WaveletConfig};
use trustsr::sample_set::{Candidate, SampleSet};
use trustsr::vlm::{
    artifact_rank, prompt_consistency, PromptAxis, PromptPool, RequestKind, ScriptedProvider,
};

fn arb_image(min_side: usize, max_side: usize) -> impl Strategy<Value = Image> {
    (min_side..=max_side, min_side..=max_side).prop_flat_map(|(w, h)| {
        prop::collection::vec(0.0f64..=1.0, w * h)
            .prop_map(move |d| Image::new(w, h, 1, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn db19_round_trip_is_identity(img in arb_image(64, 72)) {
        let pyramid = dwt2_db19(&img, 2).unwrap();
        let back = idwt2(&pyramid, &FilterBank::db19());
        let plane = image_to_plane(&img);
        let err = back.iter().zip(plane.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-8, "max error {err}");
    }

    #[test]
    fn artifact_energy_ignores_dc_offset(img in arb_image(64, 68), shift in -0.1f64..0.1) {
        let squeezed = img.map(|v| 0.2 + 0.6 * v);
        let shifted = squeezed.map(|v| v + shift);
        let cfg = WaveletConfig::default();
        let a = s_wavelet_raw(&squeezed, &cfg).unwrap();
        let b = s_wavelet_raw(&shifted, &cfg).unwrap();
        prop_assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

proptest! {
    #[test]
    fn ssim_of_an_image_with_itself_is_one(img in arb_image(11, 40)) {
        prop_assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clip_similarity_of_an_image_with_itself_is_one(img in arb_image(1, 40), seed in 0u64..1000) {
        let p = MockProvider::new(32, seed);
        let e = p.embed(&img).unwrap();
        prop_assert!((cosine_similarity(&e, &e).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cached_provider_returns_the_inner_vectors(img in arb_image(1, 24), seed in 0u64..1000) {
        let dir = tempfile::tempdir().unwrap();
        let inner = MockProvider::new(16, seed);
        let cached = CachedProvider::new(MockProvider::new(16, seed), dir.path());
        let direct = inner.embed(&img).unwrap();
        for _ in 0..2 {
            let via_cache = cached.embed(&img).unwrap();
            prop_assert_eq!(via_cache.vector(), direct.vector());
        }
    }

    #[test]
    fn consistency_is_a_percentage_and_full_only_when_unanimous(
        choices in prop::collection::vec(prop::collection::vec(0u8..3, 2..6), 1..12)
    ) {
        let as_ids: Vec<Vec<String>> =
            choices.iter().map(|c| c.iter().map(|x| format!("c{x}")).collect()).collect();
        let pct = prompt_consistency(&as_ids).unwrap();
        prop_assert!((0.0..=100.0).contains(&pct));
        let unanimous = choices.iter().all(|c| c.iter().all(|x| *x == c[0]));
        prop_assert_eq!(pct == 100.0, unanimous);
    }
}

/// A provider whose favourite depends only on the prompt text, so permuting
/// the pool permutes its answers.
fn prompt_keyed(n: usize) -> ScriptedProvider {
    let prompts = PromptPool::artifact().prompts().to_vec();
    ScriptedProvider::new("keyed", move |req| {
        let RequestKind::Batch {
            batch_index,
            batch_count,
            ..
        } = req.kind
        else {
            return String::new();
        };
        let idx = prompts.iter().position(|q| req.prompt.contains(q.as_str()));
        if batch_index + 1 < batch_count {
            return "ok".into();
        }
        let fav = [1usize, 4, 4, 9, 2][idx.unwrap_or(0) % 5] % n;
        format!("RANKING: {}-{}", fav / 10 + 1, fav % 10 + 1)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn reordering_the_pool_changes_nothing(perm in Just((0..20usize).collect::<Vec<_>>()).prop_shuffle()) {
        let n = 15;
        let set = SampleSet::new(
            "s",
            (0..n).map(|i| Candidate::new(format!("c{i:02}"), Image::constant(4, 4, i as f64 / n as f64))).collect(),
            None,
        )
        .unwrap();
        let base = PromptPool::artifact();
        let shuffled = PromptPool::custom(
            PromptAxis::Artifact,
            perm.iter().map(|&i| base.prompts()[i].clone()).collect(),
        )
        .unwrap();
        let a = artifact_rank(&set, &base, &prompt_keyed(n), 10, 5).unwrap();
        let b = artifact_rank(&set, &shuffled, &prompt_keyed(n), 10, 5).unwrap();
        prop_assert_eq!(&a.ranked, &b.ranked);
        prop_assert_eq!(&a.selection_counts, &b.selection_counts);
        let ca: Vec<String> = a.per_prompt_choices.values().cloned().collect();
        let cb: Vec<String> = b.per_prompt_choices.values().cloned().collect();
        prop_assert_eq!(prompt_consistency(&[ca]).unwrap(), prompt_consistency(&[cb]).unwrap());
    }
}
