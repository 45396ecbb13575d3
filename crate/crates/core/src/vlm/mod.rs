//! Vision-language-model selection: prompt pools, providers (scripted,
//! HTTP, record/replay), reply parsing, the identify / confidence / batch
//! ranking tasks, and the consistency and agreement statistics.

mod http;
mod parse;
mod prompts;
mod provider;
mod replay;
mod select;

pub use http::{HttpVlmProvider, ProviderConfig};
pub use parse::{parse_confidence, parse_label, parse_ranking};
pub use prompts::{
    batch_session_prompt, confidence_prompt, PromptAxis, PromptPool, ARTIFACT_PROMPTS,
    BATCH_SESSION_TEMPLATE, CONFIDENCE_TEMPLATE, INFORMATION_PROMPTS, RANKING_INSTRUCTION,
};
pub use provider::{
    ImageRef, RequestKind, ScriptedProvider, Turn, VlmProvider, VlmReply, VlmRequest,
    DEFAULT_MAX_IN_FLIGHT,
};
pub use replay::{Recorder, ReplayEntry, ReplayLog, ReplayProvider};
pub use select::{
    aggregate_rankings, artifact_rank, confidence_filter, confidence_query, human_agreement,
    identify_label, label_histogram, majority_label, per_candidate_consistency, prompt_consistency,
    rank_by_pool, two_stage_pipeline, HumanAgreement, HumanPick, HumanSelections, PipelineConfig,
    PipelineOutcome, PoolRanking, SelectionResult, VlmVerdict, DEFAULT_BATCH_SIZE,
    DEFAULT_CONFIDENCE_THRESHOLD, DEFAULT_TOP_K,
};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::image::ImageError;

#[derive(Debug, Error)]
pub enum VlmError {
    #[error("provider error: {0}")]
    Provider(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unparseable reply: {0}")]
    Parse(String),
    #[error("no candidate survived the confidence filter (labels: {histogram:?})")]
    EmptyAfterFilter { histogram: BTreeMap<String, usize> },
    #[error("no confidence data for label {0:?}")]
    NoConfidenceData(String),
    #[error("missing human data: {0}")]
    MissingHumanData(String),
    #[error("replay: {0}")]
    Replay(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}
