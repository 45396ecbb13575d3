use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::parse::{parse_confidence, parse_label, parse_ranking};
use super::prompts::{
    batch_session_prompt, confidence_prompt, PromptAxis, PromptPool, RANKING_INSTRUCTION,
};
use super::provider::{run_bounded, ImageRef, RequestKind, Turn, VlmProvider, VlmRequest};
use super::VlmError;
use crate::image::{ensemble_average, Image};
use crate::sample_set::SampleSet;

pub const DEFAULT_TOP_K: usize = 5;
pub const DEFAULT_BATCH_SIZE: usize = 10;
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 80.0;

/// One provider reply about one candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VlmVerdict {
    pub candidate_id: String,
    pub prompt_index: usize,
    pub raw_text: String,
    pub parsed_label: Option<String>,
    /// Set only for replies to the 1-100 confidence question.
    pub confidence: Option<f64>,
    pub provider_id: String,
    pub timestamp_ms: u64,
}

/// Asks every information prompt about every candidate, one image per request.
pub fn identify_label(
    set: &SampleSet,
    pool: &PromptPool,
    provider: &dyn VlmProvider,
) -> Result<Vec<VlmVerdict>, VlmError> {
    pool.require(PromptAxis::Information)?;
    let jobs: Vec<(usize, usize)> = (0..set.len())
        .flat_map(|c| (0..pool.len()).map(move |p| (c, p)))
        .collect();
    run_bounded(&jobs, provider.max_in_flight(), |&(c, p)| {
        let cand = &set.candidates()[c];
        let reply = provider.ask(&VlmRequest {
            kind: RequestKind::Identify { prompt_index: p },
            prompt: pool.prompts()[p].clone(),
            images: vec![ImageRef {
                candidate_id: &cand.id,
                image: &cand.image,
            }],
            history: vec![],
        })?;
        let parsed_label = parse_label(&reply.text);
        if parsed_label.is_none() {
            log::warn!(
                "no label in reply for {} / prompt {p}: {:?}",
                cand.id,
                reply.text
            );
        }
        Ok(VlmVerdict {
            candidate_id: cand.id.clone(),
            prompt_index: p,
            parsed_label,
            raw_text: reply.text,
            confidence: None,
            provider_id: provider.provider_id().to_string(),
            timestamp_ms: reply.timestamp_ms,
        })
    })
    .into_iter()
    .collect()
}

/// Count of each parsed label.
pub fn label_histogram(verdicts: &[VlmVerdict]) -> BTreeMap<String, usize> {
    let mut h = BTreeMap::new();
    for l in verdicts.iter().filter_map(|v| v.parsed_label.as_ref()) {
        *h.entry(l.clone()).or_insert(0) += 1;
    }
    h
}

/// Most frequent label; ties go to the lexicographically smallest.
pub fn majority_label(histogram: &BTreeMap<String, usize>) -> Option<String> {
    histogram
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(l, _)| l.clone())
}

/// Asks the confidence question for `label` once per candidate.
pub fn confidence_query(
    set: &SampleSet,
    label: &str,
    provider: &dyn VlmProvider,
) -> Result<Vec<VlmVerdict>, VlmError> {
    let prompt = confidence_prompt(label);
    run_bounded(set.candidates(), provider.max_in_flight(), |cand| {
        let reply = provider.ask(&VlmRequest {
            kind: RequestKind::Confidence {
                label: label.to_string(),
            },
            prompt: prompt.clone(),
            images: vec![ImageRef {
                candidate_id: &cand.id,
                image: &cand.image,
            }],
            history: vec![],
        })?;
        let confidence = parse_confidence(&reply.text);
        if confidence.is_none() {
            log::warn!("no confidence in reply for {}: {:?}", cand.id, reply.text);
        }
        Ok(VlmVerdict {
            candidate_id: cand.id.clone(),
            prompt_index: 0,
            raw_text: reply.text,
            parsed_label: Some(label.to_string()),
            confidence,
            provider_id: provider.provider_id().to_string(),
            timestamp_ms: reply.timestamp_ms,
        })
    })
    .into_iter()
    .collect()
}

/// Candidates whose mean confidence for `target_label` reaches `threshold`,
/// in order of first appearance. An empty result is valid.
pub fn confidence_filter(
    verdicts: &[VlmVerdict],
    target_label: &str,
    threshold: f64,
) -> Result<Vec<String>, VlmError> {
    if !(1.0..=100.0).contains(&threshold) {
        return Err(VlmError::InvalidConfig(format!(
            "confidence threshold must lie in [1, 100], got {threshold}"
        )));
    }
    let mut order: Vec<&str> = Vec::new();
    let mut sums: HashMap<&str, (f64, usize)> = HashMap::new();
    for v in verdicts {
        if v.parsed_label.as_deref() != Some(target_label) {
            continue;
        }
        let Some(c) = v.confidence else { continue };
        let e = sums.entry(&v.candidate_id).or_insert_with(|| {
            order.push(&v.candidate_id);
            (0.0, 0)
        });
        e.0 += c;
        e.1 += 1;
    }
    if order.is_empty() {
        return Err(VlmError::NoConfidenceData(target_label.to_string()));
    }
    Ok(order
        .into_iter()
        .filter(|id| {
            let (s, n) = sums[id];
            s / n as f64 >= threshold
        })
        .map(String::from)
        .collect())
}

/// Full per-prompt orderings from one pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolRanking {
    pub axis: PromptAxis,
    /// `per_prompt[p]` lists every candidate, best first.
    pub per_prompt: Vec<Vec<String>>,
    pub requests: usize,
    pub warnings: Vec<String>,
}

/// Shows the set to the provider in fixed-order batches, one multi-turn
/// session per prompt, and reads the ranking from the final reply.
///
/// Candidates the reply does not name are appended in set order with a
/// warning; a reply naming none is a parse error.
pub fn rank_by_pool(
    set: &SampleSet,
    pool: &PromptPool,
    provider: &dyn VlmProvider,
    batch_size: usize,
) -> Result<PoolRanking, VlmError> {
    if batch_size == 0 {
        return Err(VlmError::InvalidConfig("batch size must be >= 1".into()));
    }
    if set.is_empty() {
        return Err(VlmError::InvalidConfig("cannot rank an empty set".into()));
    }
    let refs: Vec<ImageRef<'_>> = set
        .candidates()
        .iter()
        .map(|c| ImageRef {
            candidate_id: &c.id,
            image: &c.image,
        })
        .collect();
    let batches: Vec<&[ImageRef<'_>]> = refs.chunks(batch_size).collect();
    let sizes: Vec<usize> = batches.iter().map(|b| b.len()).collect();
    let count = batches.len();
    let prompts: Vec<usize> = (0..pool.len()).collect();

    let sessions = run_bounded(&prompts, provider.max_in_flight(), |&p| {
        let mut history: Vec<Turn<'_>> = Vec::new();
        for (b, batch) in batches.iter().enumerate() {
            let mut text = String::new();
            if b == 0 {
                text.push_str(&batch_session_prompt(refs.len(), count));
                text.push_str("\n\n");
            }
            text.push_str(&pool.prompts()[p]);
            text.push_str(&format!(
                "\n\nBatch {} of {count} (images 1-{}).",
                b + 1,
                batch.len()
            ));
            if b + 1 == count {
                text.push_str("\n\n");
                text.push_str(RANKING_INSTRUCTION);
            }
            let request = VlmRequest {
                kind: RequestKind::Batch {
                    prompt_index: p,
                    batch_index: b,
                    batch_count: count,
                },
                prompt: text,
                images: batch.to_vec(),
                history: history.clone(),
            };
            let reply = provider.ask(&request)?;
            history.push(Turn {
                prompt: request.prompt,
                images: request.images,
                response: reply.text,
            });
        }
        let last = &history.last().expect("at least one batch").response;
        let pairs = parse_ranking(last, &sizes);
        if pairs.is_empty() {
            return Err(VlmError::Parse(format!(
                "prompt {p}: final reply names no candidate: {last:?}"
            )));
        }
        let mut order: Vec<String> = pairs
            .iter()
            .map(|&(b, i)| batches[b - 1][i - 1].candidate_id.to_string())
            .collect();
        let mut warnings = Vec::new();
        let named = order.len();
        for r in &refs {
            if !order.iter().any(|o| o == r.candidate_id) {
                order.push(r.candidate_id.to_string());
            }
        }
        if named < refs.len() {
            warnings.push(format!(
                "prompt {p}: reply ranked {named} of {} candidates; the rest are ranked last",
                refs.len()
            ));
        }
        Ok((order, warnings))
    });

    let mut per_prompt = Vec::with_capacity(pool.len());
    let mut warnings = Vec::new();
    for s in sessions {
        let (order, w) = s?;
        per_prompt.push(order);
        warnings.extend(w);
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(PoolRanking {
        axis: pool.axis(),
        per_prompt,
        requests: pool.len() * count,
        warnings,
    })
}

/// Ranked candidates of one scene and the statistics behind the ranking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub ranked: Vec<String>,
    pub top_k: Vec<String>,
    pub top_1: String,
    pub k: usize,
    /// Best candidate under each prompt.
    pub per_prompt_choices: BTreeMap<usize, String>,
    /// Number of prompts choosing each candidate first.
    pub selection_counts: BTreeMap<String, usize>,
    pub label_histogram: BTreeMap<String, usize>,
    pub warnings: Vec<String>,
}

/// Orders candidates by how many prompts chose them first, then by how many
/// prompts placed them in their top `k`, then by id.
pub fn aggregate_rankings(ranking: &PoolRanking, k: usize) -> Result<SelectionResult, VlmError> {
    if k == 0 {
        return Err(VlmError::InvalidConfig("k must be >= 1".into()));
    }
    let first = ranking
        .per_prompt
        .first()
        .ok_or_else(|| VlmError::InvalidConfig("no prompt rankings to aggregate".into()))?;
    let mut firsts: BTreeMap<String, usize> = BTreeMap::new();
    let mut in_top: HashMap<&str, usize> = HashMap::new();
    for order in &ranking.per_prompt {
        *firsts.entry(order[0].clone()).or_insert(0) += 1;
        for id in order.iter().take(k) {
            *in_top.entry(id).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<String> = first.clone();
    ranked.sort_by(|a, b| {
        let fa = firsts.get(a).copied().unwrap_or(0);
        let fb = firsts.get(b).copied().unwrap_or(0);
        let ta = in_top.get(a.as_str()).copied().unwrap_or(0);
        let tb = in_top.get(b.as_str()).copied().unwrap_or(0);
        fb.cmp(&fa).then(tb.cmp(&ta)).then_with(|| a.cmp(b))
    });
    let top_k: Vec<String> = ranked.iter().take(k).cloned().collect();
    Ok(SelectionResult {
        top_1: ranked[0].clone(),
        top_k,
        k,
        per_prompt_choices: ranking
            .per_prompt
            .iter()
            .enumerate()
            .map(|(p, o)| (p, o[0].clone()))
            .collect(),
        selection_counts: firsts,
        label_histogram: BTreeMap::new(),
        warnings: ranking.warnings.clone(),
        ranked,
    })
}

/// Batch ranking with the artifact pool, aggregated over prompts.
pub fn artifact_rank(
    set: &SampleSet,
    pool: &PromptPool,
    provider: &dyn VlmProvider,
    batch_size: usize,
    k: usize,
) -> Result<SelectionResult, VlmError> {
    pool.require(PromptAxis::Artifact)?;
    aggregate_rankings(&rank_by_pool(set, pool, provider, batch_size)?, k)
}

/// Percentage of images on which every prompt chose the same candidate.
/// `choices[i]` holds the per-prompt choices for image `i`.
pub fn prompt_consistency(choices: &[Vec<String>]) -> Result<f64, VlmError> {
    if choices.is_empty() {
        return Err(VlmError::InvalidConfig("no images".into()));
    }
    if choices.iter().any(|c| c.len() < 2) {
        return Err(VlmError::InvalidConfig(
            "consistency needs >= 2 prompts per image".into(),
        ));
    }
    let agreeing = choices
        .iter()
        .filter(|c| c.iter().all(|x| x == &c[0]))
        .count();
    Ok(100.0 * agreeing as f64 / choices.len() as f64)
}

/// Per-candidate variant: the percentage of (image, candidate) pairs for
/// which all prompts agree on whether that candidate is the choice.
/// `candidates[i]` lists the candidate ids of image `i`.
pub fn per_candidate_consistency(
    choices: &[Vec<String>],
    candidates: &[Vec<String>],
) -> Result<f64, VlmError> {
    if choices.len() != candidates.len() || choices.is_empty() {
        return Err(VlmError::InvalidConfig(
            "choices and candidates must align".into(),
        ));
    }
    let (mut stable, mut total) = (0usize, 0usize);
    for (ch, ids) in choices.iter().zip(candidates) {
        for id in ids {
            let picked = ch.iter().filter(|c| *c == id).count();
            total += 1;
            if picked == 0 || picked == ch.len() {
                stable += 1;
            }
        }
    }
    if total == 0 {
        return Err(VlmError::InvalidConfig("no candidates".into()));
    }
    Ok(100.0 * stable as f64 / total as f64)
}

/// One row of a human selection CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanPick {
    pub scene_id: String,
    pub participant_id: String,
    pub rank: u32,
    pub candidate_id: String,
}

/// Human selections grouped by scene.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HumanSelections {
    scenes: BTreeMap<String, Vec<HumanPick>>,
}

impl HumanSelections {
    pub fn from_picks(picks: impl IntoIterator<Item = HumanPick>) -> Self {
        let mut scenes: BTreeMap<String, Vec<HumanPick>> = BTreeMap::new();
        for p in picks {
            scenes.entry(p.scene_id.clone()).or_default().push(p);
        }
        Self { scenes }
    }

    /// Reads `scene_id,participant_id,rank,candidate_id` (rank 1 = best).
    pub fn load(path: impl AsRef<Path>) -> Result<Self, VlmError> {
        let path = path.as_ref();
        let mut reader = csv::Reader::from_path(path).map_err(|e| {
            VlmError::MissingHumanData(format!("cannot read {}: {e}", path.display()))
        })?;
        let picks = reader
            .deserialize::<HumanPick>()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| VlmError::MissingHumanData(format!("bad human CSV row: {e}")))?;
        Ok(Self::from_picks(picks))
    }

    pub fn scene_ids(&self) -> impl Iterator<Item = &str> {
        self.scenes.keys().map(String::as_str)
    }

    /// The candidate most often ranked first; ties go to the smallest id.
    pub fn mode_choice(&self, scene: &str) -> Option<String> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for p in self.scenes.get(scene)?.iter().filter(|p| p.rank == 1) {
            *counts.entry(&p.candidate_id).or_insert(0) += 1;
        }
        counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(id, _)| id.to_string())
    }

    /// The `k` candidates picked most often at any rank; ties by id.
    pub fn top_k(&self, scene: &str, k: usize) -> Option<Vec<String>> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for p in self.scenes.get(scene)? {
            *counts.entry(&p.candidate_id).or_insert(0) += 1;
        }
        let mut ids: Vec<(&str, usize)> = counts.into_iter().collect();
        ids.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Some(
            ids.into_iter()
                .take(k)
                .map(|(id, _)| id.to_string())
                .collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanAgreement {
    /// Percentage of scenes whose model top-1 equals the human mode choice.
    pub top1_percent: f64,
    /// Mean `|model top-k ∩ human top-k| / k`, as a percentage.
    pub topk_overlap_percent: f64,
    pub scenes: usize,
}

/// Compares per-scene model selections with human picks.
pub fn human_agreement(
    selections: &BTreeMap<String, SelectionResult>,
    humans: &HumanSelections,
    k: usize,
) -> Result<HumanAgreement, VlmError> {
    if selections.is_empty() || k == 0 {
        return Err(VlmError::InvalidConfig("need >= 1 scene and k >= 1".into()));
    }
    let (mut hits, mut overlap) = (0usize, 0.0);
    for (scene, sel) in selections {
        let missing = || VlmError::MissingHumanData(format!("no human picks for scene {scene:?}"));
        let mode = humans.mode_choice(scene).ok_or_else(missing)?;
        let human_top = humans.top_k(scene, k).ok_or_else(missing)?;
        if sel.top_1 == mode {
            hits += 1;
        }
        let shared = sel
            .top_k
            .iter()
            .take(k)
            .filter(|id| human_top.contains(id))
            .count();
        overlap += shared as f64 / k as f64;
    }
    let n = selections.len() as f64;
    Ok(HumanAgreement {
        top1_percent: 100.0 * hits as f64 / n,
        topk_overlap_percent: 100.0 * overlap / n,
        scenes: selections.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub k: usize,
    pub confidence_threshold: f64,
    pub batch_size: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_TOP_K,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub target_label: String,
    pub survivors: Vec<String>,
    pub identify_verdicts: Vec<VlmVerdict>,
    pub confidence_verdicts: Vec<VlmVerdict>,
    pub selection: SelectionResult,
    pub ensemble: Image,
}

/// Identify, keep confident candidates for the majority label, rank the
/// survivors by artifacts, and average the top `k`.
pub fn two_stage_pipeline(
    set: &SampleSet,
    info_pool: &PromptPool,
    artifact_pool: &PromptPool,
    stage1: &dyn VlmProvider,
    stage2: &dyn VlmProvider,
    cfg: &PipelineConfig,
) -> Result<PipelineOutcome, VlmError> {
    artifact_pool.require(PromptAxis::Artifact)?;
    let identify_verdicts = identify_label(set, info_pool, stage1)?;
    let histogram = label_histogram(&identify_verdicts);
    let target_label = majority_label(&histogram).ok_or_else(|| VlmError::EmptyAfterFilter {
        histogram: histogram.clone(),
    })?;
    let confidence_verdicts = confidence_query(set, &target_label, stage1)?;
    let survivors = confidence_filter(
        &confidence_verdicts,
        &target_label,
        cfg.confidence_threshold,
    )?;
    if survivors.is_empty() {
        return Err(VlmError::EmptyAfterFilter { histogram });
    }
    let subset = set.subset(&survivors)?;
    let mut selection = artifact_rank(&subset, artifact_pool, stage2, cfg.batch_size, cfg.k)?;
    selection.label_histogram = histogram;
    let chosen: Vec<&Image> = selection
        .top_k
        .iter()
        .map(|id| &subset.get(id).expect("selected from subset").image)
        .collect();
    let ensemble = ensemble_average(&chosen)?;
    Ok(PipelineOutcome {
        target_label,
        survivors,
        identify_verdicts,
        confidence_verdicts,
        selection,
        ensemble,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample_set::Candidate;
    use crate::vlm::provider::ScriptedProvider;

    fn set_of(n: usize) -> SampleSet {
        let cands = (0..n)
            .map(|i| {
                Candidate::new(
                    format!("c{i:03}"),
                    Image::constant(4, 4, i as f64 / n as f64),
                )
            })
            .collect();
        SampleSet::new("scene", cands, None).unwrap()
    }

    /// Replies to a batch request by ranking `favourite` first when it is
    /// among the images shown in the session.
    fn ranking_script(
        favourite: impl Fn(usize) -> String + Send + Sync + 'static,
    ) -> ScriptedProvider {
        ScriptedProvider::new("scripted", move |req| {
            let RequestKind::Batch {
                prompt_index,
                batch_index,
                batch_count,
            } = req.kind
            else {
                return "?".into();
            };
            if batch_index + 1 < batch_count {
                return format!("batch {} looks fine", batch_index + 1);
            }
            let fav = favourite(prompt_index);
            let mut all: Vec<(usize, usize, &str)> = Vec::new();
            for (b, turn) in req.history.iter().enumerate() {
                for (i, r) in turn.images.iter().enumerate() {
                    all.push((b + 1, i + 1, r.candidate_id));
                }
            }
            for (i, r) in req.images.iter().enumerate() {
                all.push((batch_index + 1, i + 1, r.candidate_id));
            }
            all.sort_by_key(|&(_, _, id)| (id != fav, id.to_string()));
            let pairs: Vec<String> = all.iter().map(|(b, i, _)| format!("{b}-{i}")).collect();
            format!("Thoughts.\nRANKING: {}", pairs.join(", "))
        })
    }

    #[test]
    fn scripted_identify_histogram() {
        let set = set_of(3);
        let p = ScriptedProvider::new("s", |_| "45".into());
        let v = identify_label(&set, &PromptPool::information(), &p).unwrap();
        assert_eq!(v.len(), 60);
        assert_eq!(
            label_histogram(&v),
            BTreeMap::from([("45".to_string(), 60)])
        );
        assert!(v.iter().all(|x| x.confidence.is_none()));
        let none = ScriptedProvider::new("s", |_| "no idea".into());
        let v = identify_label(&set, &PromptPool::information(), &none).unwrap();
        assert!(v.iter().all(|x| x.parsed_label.is_none()));
        assert!(identify_label(&set, &PromptPool::artifact(), &p).is_err());
    }

    fn verdict(id: &str, conf: f64) -> VlmVerdict {
        VlmVerdict {
            candidate_id: id.into(),
            prompt_index: 0,
            raw_text: String::new(),
            parsed_label: Some("5".into()),
            confidence: Some(conf),
            provider_id: "p".into(),
            timestamp_ms: 0,
        }
    }

    #[test]
    fn confidence_filter_cases() {
        let all90 = vec![verdict("a", 90.0), verdict("b", 90.0)];
        assert_eq!(confidence_filter(&all90, "5", 80.0).unwrap(), ["a", "b"]);
        let all10 = vec![verdict("a", 10.0), verdict("b", 10.0)];
        assert!(confidence_filter(&all10, "5", 80.0).unwrap().is_empty());
        let mixed = vec![verdict("a", 95.0), verdict("a", 60.0), verdict("b", 81.0)];
        assert_eq!(confidence_filter(&mixed, "5", 80.0).unwrap(), ["b"]);
        assert!(matches!(
            confidence_filter(&mixed, "6", 80.0),
            Err(VlmError::NoConfidenceData(_))
        ));
        assert!(confidence_filter(&mixed, "5", 0.0).is_err());
    }

    #[test]
    fn always_naming_one_candidate() {
        let set = set_of(25);
        let p = ranking_script(|_| "c003".into());
        let pool = PromptPool::artifact();
        let r = rank_by_pool(&set, &pool, &p, 10).unwrap();
        let sel = aggregate_rankings(&r, 5).unwrap();
        assert_eq!(sel.top_1, "c003");
        let choices: Vec<String> = sel.per_prompt_choices.values().cloned().collect();
        assert_eq!(prompt_consistency(&[choices]).unwrap(), 100.0);
        assert_eq!(r.requests, 60);
        assert_eq!(p.calls(), 60);
    }

    #[test]
    fn hundred_candidates_take_ten_batches_per_prompt() {
        let set = set_of(100);
        let p = ranking_script(|_| "c050".into());
        let pool = PromptPool::custom(PromptAxis::Artifact, vec!["Is this clean?".into()]).unwrap();
        rank_by_pool(&set, &pool, &p, 10).unwrap();
        assert_eq!(p.calls(), 10);
    }

    #[test]
    fn even_split_ties_break_by_id() {
        let set = set_of(12);
        let p = ranking_script(|prompt| {
            if prompt % 2 == 0 {
                "c007".into()
            } else {
                "c002".into()
            }
        });
        let sel = artifact_rank(&set, &PromptPool::artifact(), &p, 10, 5).unwrap();
        assert_eq!(&sel.ranked[..2], ["c002", "c007"]);
        assert_eq!(sel.selection_counts["c002"], 10);
    }

    #[test]
    fn partial_and_empty_rankings() {
        let set = set_of(4);
        let pool = PromptPool::custom(PromptAxis::Artifact, vec!["q".into()]).unwrap();
        let partial = ScriptedProvider::new("s", |_| "RANKING: 1-3".into());
        let r = rank_by_pool(&set, &pool, &partial, 10).unwrap();
        assert_eq!(r.per_prompt[0], ["c002", "c000", "c001", "c003"]);
        assert_eq!(r.warnings.len(), 1);
        let silent = ScriptedProvider::new("s", |_| "They all look similar.".into());
        assert!(matches!(
            rank_by_pool(&set, &pool, &silent, 10),
            Err(VlmError::Parse(_))
        ));
    }

    #[test]
    fn consistency_examples() {
        let agree = vec![vec!["a".to_string(); 5]; 10];
        assert_eq!(prompt_consistency(&agree).unwrap(), 100.0);
        let mut one_off = agree.clone();
        one_off[3][2] = "b".into();
        assert_eq!(prompt_consistency(&one_off).unwrap(), 90.0);
        assert!(prompt_consistency(&[vec!["a".into()]]).is_err());
        let ids = vec![vec!["a".to_string(), "b".into()]; 10];
        assert_eq!(per_candidate_consistency(&agree, &ids).unwrap(), 100.0);
        assert_eq!(per_candidate_consistency(&one_off, &ids).unwrap(), 90.0);
    }

    fn selection(top1: &str, top_k: &[&str]) -> SelectionResult {
        SelectionResult {
            ranked: top_k.iter().map(|s| s.to_string()).collect(),
            top_k: top_k.iter().map(|s| s.to_string()).collect(),
            top_1: top1.into(),
            k: top_k.len(),
            per_prompt_choices: BTreeMap::new(),
            selection_counts: BTreeMap::new(),
            label_histogram: BTreeMap::new(),
            warnings: vec![],
        }
    }

    #[test]
    fn human_agreement_counts() {
        let mut picks = vec![];
        let mut sels = BTreeMap::new();
        for s in 0..10 {
            let scene = format!("s{s}");
            let human = if s < 9 { "7" } else { "3" };
            for part in 0..3 {
                picks.push(HumanPick {
                    scene_id: scene.clone(),
                    participant_id: format!("p{part}"),
                    rank: 1,
                    candidate_id: human.into(),
                });
            }
            sels.insert(scene, selection("7", &["7"]));
        }
        let humans = HumanSelections::from_picks(picks);
        let ag = human_agreement(&sels, &humans, 1).unwrap();
        assert_eq!(ag.top1_percent, 90.0);
        sels.insert("unknown".into(), selection("7", &["7"]));
        assert!(matches!(
            human_agreement(&sels, &humans, 1),
            Err(VlmError::MissingHumanData(_))
        ));
    }

    #[test]
    fn disjoint_top_k_overlap_is_zero() {
        let picks = ["a", "b", "c", "d", "e"]
            .iter()
            .enumerate()
            .map(|(r, id)| HumanPick {
                scene_id: "s".into(),
                participant_id: "p".into(),
                rank: r as u32 + 1,
                candidate_id: id.to_string(),
            });
        let humans = HumanSelections::from_picks(picks);
        let sels = BTreeMap::from([("s".to_string(), selection("v", &["v", "w", "x", "y", "z"]))]);
        let ag = human_agreement(&sels, &humans, 5).unwrap();
        assert_eq!(ag.topk_overlap_percent, 0.0);
        assert_eq!(ag.top1_percent, 0.0);
        let same = BTreeMap::from([("s".to_string(), selection("a", &["a", "b", "c", "d", "e"]))]);
        let ag = human_agreement(&same, &humans, 5).unwrap();
        assert_eq!((ag.top1_percent, ag.topk_overlap_percent), (100.0, 100.0));
    }

    #[test]
    fn human_csv_loads() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        std::fs::write(
            &p,
            "scene_id,participant_id,rank,candidate_id\ns,u1,1,a\ns,u2,1,b\ns,u3,1,a\n",
        )
        .unwrap();
        let h = HumanSelections::load(&p).unwrap();
        assert_eq!(h.mode_choice("s").as_deref(), Some("a"));
        assert!(h.mode_choice("t").is_none());
    }

    fn two_stage_script(confident: usize) -> ScriptedProvider {
        ScriptedProvider::new("stage", move |req| match &req.kind {
            RequestKind::Identify { .. } => "5".into(),
            RequestKind::Confidence { .. } => {
                let n: usize = req.images[0].candidate_id[1..].parse().unwrap();
                if n < confident {
                    "95".into()
                } else {
                    "40".into()
                }
            }
            RequestKind::Batch {
                batch_index,
                batch_count,
                ..
            } => {
                if batch_index + 1 < *batch_count {
                    "ok".into()
                } else {
                    "RANKING: 1-2, 1-1, 1-3".into()
                }
            }
        })
    }

    #[test]
    fn two_stage_clamps_k_and_reports_empty_filters() {
        let set = set_of(6);
        let p = two_stage_script(3);
        let cfg = PipelineConfig {
            k: 5,
            ..Default::default()
        };
        let out = two_stage_pipeline(
            &set,
            &PromptPool::information(),
            &PromptPool::artifact(),
            &p,
            &p,
            &cfg,
        )
        .unwrap();
        assert_eq!(out.target_label, "5");
        assert_eq!(out.survivors, ["c000", "c001", "c002"]);
        assert_eq!(out.selection.top_k.len(), 3);
        assert_eq!(out.selection.top_1, "c001");
        let mean = (0.0 + 1.0 + 2.0) / 6.0 / 3.0;
        assert!(out.ensemble.data().iter().all(|v| (v - mean).abs() < 1e-12));

        let none = two_stage_script(0);
        match two_stage_pipeline(
            &set,
            &PromptPool::information(),
            &PromptPool::artifact(),
            &none,
            &none,
            &cfg,
        ) {
            Err(VlmError::EmptyAfterFilter { histogram }) => assert_eq!(histogram["5"], 120),
            other => panic!("{other:?}"),
        }
    }
}
