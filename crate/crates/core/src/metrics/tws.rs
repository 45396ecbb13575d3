use std::cmp::Ordering;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{s_edge, s_wavelet_raw, MetricError, WaveletConfig};
use crate::embedding::{cosine_similarity, EmbeddingProvider};
use crate::image::Image;
use crate::sample_set::SampleSet;

/// Mixing weights of the three score components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwsWeights {
    pub lambda_clip: f64,
    pub lambda_edge: f64,
    pub lambda_wavelet: f64,
}

impl Default for TwsWeights {
    fn default() -> Self {
        Self {
            lambda_clip: 0.2,
            lambda_edge: 0.3,
            lambda_wavelet: 0.5,
        }
    }
}

impl TwsWeights {
    pub fn new(
        lambda_clip: f64,
        lambda_edge: f64,
        lambda_wavelet: f64,
    ) -> Result<Self, MetricError> {
        let w = Self {
            lambda_clip,
            lambda_edge,
            lambda_wavelet,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        for (name, v) in [
            ("lambda_clip", self.lambda_clip),
            ("lambda_edge", self.lambda_edge),
            ("lambda_wavelet", self.lambda_wavelet),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(MetricError::InvalidWeights(format!("{name} = {v}")));
            }
        }
        Ok(())
    }

    pub fn combine(&self, s_clip: f64, s_edge: f64, s_wavelet: f64) -> f64 {
        self.lambda_clip * s_clip + self.lambda_edge * s_edge - self.lambda_wavelet * s_wavelet
    }
}

/// Parses `clip,edge,wavelet`.
impl FromStr for TwsWeights {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(MetricError::InvalidWeights(format!(
                "expected three comma-separated weights, got {s:?}"
            )));
        }
        let mut v = [0.0; 3];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p
                .parse()
                .map_err(|_| MetricError::InvalidWeights(format!("not a number: {p:?}")))?;
        }
        Self::new(v[0], v[1], v[2])
    }
}

/// How raw wavelet energies are mapped into `[0, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "scale")]
pub enum WaveletNormalization {
    /// `(x - min) / (max - min)` over the set being ranked; all-equal maps to 0.
    #[default]
    MinMax,
    /// `clamp(x / scale, 0, 1)`, comparable across scenes.
    FixedScale(f64),
}

/// Raw and normalized components of one candidate's score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwsBreakdown {
    pub candidate_id: String,
    pub s_clip_raw: f64,
    pub s_edge_raw: f64,
    pub s_wavelet_raw: f64,
    pub s_clip: f64,
    pub s_edge: f64,
    pub s_wavelet: f64,
    pub tws: f64,
}

impl TwsBreakdown {
    /// A record with raw fields only; normalized fields and `tws` are zero.
    pub fn from_raw(candidate_id: impl Into<String>, clip: f64, edge: f64, wavelet: f64) -> Self {
        Self {
            candidate_id: candidate_id.into(),
            s_clip_raw: clip,
            s_edge_raw: edge,
            s_wavelet_raw: wavelet,
            s_clip: 0.0,
            s_edge: 0.0,
            s_wavelet: 0.0,
            tws: 0.0,
        }
    }

    pub fn apply_weights(&mut self, w: &TwsWeights) {
        self.tws = w.combine(self.s_clip, self.s_edge, self.s_wavelet);
    }
}

/// Fills the normalized fields: clip and edge are clamped into `[0, 1]`,
/// wavelet energy is normalized per `mode`.
pub fn normalize_components(
    mut raws: Vec<TwsBreakdown>,
    mode: WaveletNormalization,
) -> Result<Vec<TwsBreakdown>, MetricError> {
    if raws.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let lo = raws
        .iter()
        .map(|b| b.s_wavelet_raw)
        .fold(f64::INFINITY, f64::min);
    let hi = raws
        .iter()
        .map(|b| b.s_wavelet_raw)
        .fold(f64::NEG_INFINITY, f64::max);
    if let WaveletNormalization::FixedScale(s) = mode {
        if !(s.is_finite() && s > 0.0) {
            return Err(MetricError::InvalidConfig(format!(
                "wavelet scale must be > 0, got {s}"
            )));
        }
    }
    for b in &mut raws {
        b.s_clip = b.s_clip_raw.clamp(0.0, 1.0);
        b.s_edge = b.s_edge_raw.clamp(0.0, 1.0);
        b.s_wavelet = match mode {
            WaveletNormalization::MinMax if hi > lo => (b.s_wavelet_raw - lo) / (hi - lo),
            WaveletNormalization::MinMax => 0.0,
            WaveletNormalization::FixedScale(s) => (b.s_wavelet_raw / s).clamp(0.0, 1.0),
        };
    }
    Ok(raws)
}

fn by_rank(a: &TwsBreakdown, b: &TwsBreakdown) -> Ordering {
    b.tws
        .total_cmp(&a.tws)
        .then_with(|| a.candidate_id.cmp(&b.candidate_id))
}

/// Sorts by `tws` descending, then `candidate_id` ascending.
pub fn rank_breakdowns(list: &mut [TwsBreakdown]) {
    list.sort_by(by_rank);
}

/// Computes and ranks scores for a candidate set.
pub struct TwsScorer<'a> {
    provider: &'a dyn EmbeddingProvider,
    pub weights: TwsWeights,
    pub wavelet: WaveletConfig,
    pub normalization: WaveletNormalization,
}

impl<'a> TwsScorer<'a> {
    pub fn new(provider: &'a dyn EmbeddingProvider) -> Self {
        Self {
            provider,
            weights: TwsWeights::default(),
            wavelet: WaveletConfig::default(),
            normalization: WaveletNormalization::default(),
        }
    }

    pub fn with_weights(mut self, weights: TwsWeights) -> Self {
        self.weights = weights;
        self
    }

    pub fn with_wavelet(mut self, wavelet: WaveletConfig) -> Self {
        self.wavelet = wavelet;
        self
    }

    pub fn with_normalization(mut self, normalization: WaveletNormalization) -> Self {
        self.normalization = normalization;
        self
    }

    /// Raw components for every candidate against `reference`, in set order.
    pub fn raw_components(
        &self,
        reference: &Image,
        set: &SampleSet,
    ) -> Result<Vec<TwsBreakdown>, MetricError> {
        self.wavelet.validate()?;
        if set.is_empty() {
            return Err(MetricError::EmptyInput);
        }
        let ref_embedding = self.provider.embed(reference)?;
        set.candidates()
            .par_iter()
            .map(|c| {
                let emb = self.provider.embed(&c.image)?;
                let clip = cosine_similarity(&ref_embedding, &emb)?;
                let edge = s_edge(reference, &c.image)?;
                let wav = s_wavelet_raw(&c.image, &self.wavelet)?;
                Ok(TwsBreakdown::from_raw(c.id.clone(), clip, edge, wav))
            })
            .collect()
    }

    /// Ranked breakdowns against the set's own reference.
    pub fn score_set(&self, set: &SampleSet) -> Result<Vec<TwsBreakdown>, MetricError> {
        let reference = set
            .reference
            .as_ref()
            .ok_or(MetricError::MissingReference)?;
        self.score(reference, set)
    }

    pub fn score(
        &self,
        reference: &Image,
        set: &SampleSet,
    ) -> Result<Vec<TwsBreakdown>, MetricError> {
        self.weights.validate()?;
        let raws = self.raw_components(reference, set)?;
        let mut out = normalize_components(raws, self.normalization)?;
        out.iter_mut().for_each(|b| b.apply_weights(&self.weights));
        rank_breakdowns(&mut out);
        Ok(out)
    }
}

/// A named weight configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    pub name: String,
    pub weights: TwsWeights,
}

impl WeightConfig {
    pub fn new(name: impl Into<String>, weights: TwsWeights) -> Self {
        Self {
            name: name.into(),
            weights,
        }
    }
}

/// The five ablation configurations: the default mix, equal weights, and
/// each component dropped in turn.
pub fn table_iv_grid() -> Vec<WeightConfig> {
    let third = 1.0 / 3.0;
    let w = |c, e, v| TwsWeights {
        lambda_clip: c,
        lambda_edge: e,
        lambda_wavelet: v,
    };
    vec![
        WeightConfig::new("TWS (ours)", TwsWeights::default()),
        WeightConfig::new("Equal Weights", w(third, third, third)),
        WeightConfig::new("No CLIP", w(0.0, 0.4, 0.6)),
        WeightConfig::new("No Edge", w(0.3, 0.0, 0.7)),
        WeightConfig::new("No Wavelet", w(0.5, 0.5, 0.0)),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub weights: TwsWeights,
    pub mean_tws: f64,
    /// Candidate ids under this configuration, best first.
    pub ranking: Vec<String>,
}

/// Re-weights already normalized breakdowns under each configuration.
pub fn ablation_sweep(
    normalized: &[TwsBreakdown],
    configs: &[WeightConfig],
) -> Result<Vec<AblationRow>, MetricError> {
    if configs.is_empty() {
        return Err(MetricError::InvalidConfig(
            "ablation needs at least one configuration".into(),
        ));
    }
    if normalized.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    configs
        .iter()
        .map(|cfg| {
            cfg.weights.validate()?;
            let mut rows = normalized.to_vec();
            rows.iter_mut().for_each(|b| b.apply_weights(&cfg.weights));
            let mean_tws = rows.iter().map(|b| b.tws).sum::<f64>() / rows.len() as f64;
            rank_breakdowns(&mut rows);
            Ok(AblationRow {
                name: cfg.name.clone(),
                weights: cfg.weights,
                mean_tws,
                ranking: rows.into_iter().map(|b| b.candidate_id).collect(),
            })
        })
        .collect()
}
