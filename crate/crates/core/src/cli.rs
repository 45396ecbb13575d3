//! The `trustsr` command line: scoring, selection, robustness, ablation,
//! ensembling, statistics and ladder generation.
//!
//! Settings resolve as flag, then `--config` JSON file, then built-in default.
//! Every report echoes the effective configuration and carries no timestamps,
//! so rerunning a command over unchanged inputs rewrites identical bytes.
//! Failures print one JSON object on stderr and exit with a class code:
//! 2 configuration, 3 data, 4 provider, 5 nothing left after filtering.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::embedding::{
    CachedProvider, EmbeddingError, EmbeddingProvider, MockProvider, RemoteProvider,
};
use crate::harness::{
    build_ladder, default_strengths, mos_correlation, read_mos_csv, synthetic_texture,
    DegradationKind, HarnessError,
};
use crate::image::{ensemble_average, load_image, save_png, BitDepth, Image, ImageError};
use crate::metrics::{
    ablation_sweep, table_iv_grid, MetricError, TwsScorer, TwsWeights, WaveletConfig,
    WaveletNormalization, WeightConfig,
};
use crate::sample_set::SampleSet;
use crate::stats::{
    kendall_tau_orders, pearson, t_test_one_sample_with, t_test_two_sample_with, Alternative,
    StatsError,
};
use crate::vlm::{
    aggregate_rankings, artifact_rank, human_agreement, per_candidate_consistency,
    prompt_consistency, rank_by_pool, two_stage_pipeline, HttpVlmProvider, HumanSelections,
    PipelineConfig, PromptAxis, PromptPool, ProviderConfig, Recorder, ReplayLog, SelectionResult,
    VlmError, VlmProvider, DEFAULT_BATCH_SIZE, DEFAULT_CONFIDENCE_THRESHOLD, DEFAULT_TOP_K,
};

/// Environment variable naming the default embedding cache directory.
pub const CACHE_DIR_ENV: &str = "TRUSTSR_CACHE_DIR";

const DEFAULT_MOCK_DIM: usize = 64;
const DEFAULT_EMBED_TIMEOUT_SECS: u64 = 30;

/// A failed command: exit code, error class and message.
#[derive(Clone, Debug, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            kind: "config",
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            kind: "data",
            message: message.into(),
        }
    }

    pub fn provider(message: impl Into<String>) -> Self {
        Self {
            code: 4,
            kind: "provider",
            message: message.into(),
        }
    }

    pub fn empty(message: impl Into<String>) -> Self {
        Self {
            code: 5,
            kind: "empty_after_filter",
            message: message.into(),
        }
    }

    /// The stderr form.
    pub fn to_json(&self) -> String {
        json!({ "error": self.kind, "message": self.message, "exit_code": self.code }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.kind, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<ImageError> for CliError {
    fn from(e: ImageError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<EmbeddingError> for CliError {
    fn from(e: EmbeddingError) -> Self {
        Self::provider(e.to_string())
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::InvalidWeights(_) | MetricError::InvalidConfig(_) => {
                Self::config(e.to_string())
            }
            MetricError::Embedding(inner) => inner.into(),
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<VlmError> for CliError {
    fn from(e: VlmError) -> Self {
        match e {
            VlmError::InvalidConfig(_) => Self::config(e.to_string()),
            VlmError::MissingHumanData(_) | VlmError::Image(_) => Self::data(e.to_string()),
            VlmError::EmptyAfterFilter { ref histogram } => {
                Self::empty(format!("{e}; label histogram {histogram:?}"))
            }
            _ => Self::provider(e.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::BadSpec(_) => Self::config(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        Self::data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "trustsr",
    version,
    about = "Score, select and ensemble super-resolution samples"
)]
pub struct Cli {
    /// JSON file supplying defaults for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for image processing.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score every candidate of a manifest with TWS.
    Score(ScoreArgs),
    /// Pick and ensemble the best candidates with a VLM.
    Select(SelectArgs),
    /// Prompt consistency and human agreement per provider.
    Robustness(RobustnessArgs),
    /// Mean TWS under alternative weightings.
    Ablation(AblationArgs),
    /// Pixel-wise mean of images.
    Ensemble(EnsembleArgs),
    /// Hypothesis tests and correlations.
    #[command(subcommand)]
    Stats(StatsCommand),
    /// Write a degradation ladder with a known quality order.
    Degrade(DegradeArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Mock,
    Remote,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SelectMode {
    /// Rank the whole set with the artifact pool.
    Artifact,
    /// Identify, filter by confidence, then rank the survivors.
    TwoStage,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AlternativeArg {
    TwoSided,
    Less,
    Greater,
}

impl From<AlternativeArg> for Alternative {
    fn from(a: AlternativeArg) -> Self {
        match a {
            AlternativeArg::TwoSided => Alternative::TwoSided,
            AlternativeArg::Less => Alternative::Less,
            AlternativeArg::Greater => Alternative::Greater,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct ScoringFlags {
    /// Weights as `clip,edge,wavelet`.
    #[arg(long)]
    pub weights: Option<String>,
    /// Divide raw wavelet energy by this instead of min-max over the set.
    #[arg(long)]
    pub wavelet_scale: Option<f64>,
    #[arg(long)]
    pub wavelet_levels: Option<usize>,
    #[arg(long, value_enum)]
    pub embedding: Option<EmbeddingKind>,
    /// Base URL of an `/embed` service.
    #[arg(long)]
    pub embed_endpoint: Option<String>,
    #[arg(long)]
    pub embed_timeout_secs: Option<u64>,
    #[arg(long)]
    pub mock_dim: Option<usize>,
    #[arg(long)]
    pub mock_seed: Option<u64>,
    /// Embedding cache directory (default: $TRUSTSR_CACHE_DIR, else none).
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub scoring: ScoringFlags,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub formats: Option<Vec<ReportFormat>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Args)]
pub struct VlmFlags {
    /// Provider config JSON; repeat for a distinct second stage.
    #[arg(long = "provider")]
    pub providers: Vec<PathBuf>,
    /// Answer every request from this replay log instead of the network.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Append live exchanges to this replay log.
    #[arg(long)]
    pub record: Option<PathBuf>,
    /// Information prompts, one per line or a JSON array.
    #[arg(long)]
    pub info_prompts: Option<PathBuf>,
    #[arg(long)]
    pub artifact_prompts: Option<PathBuf>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub vlm: VlmFlags,
    #[arg(long, value_enum)]
    pub mode: Option<SelectMode>,
    /// Minimum mean confidence (1-100) kept by the two-stage filter.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RobustnessArgs {
    /// One manifest per scene.
    #[arg(long = "manifest")]
    pub manifests: Vec<PathBuf>,
    #[command(flatten)]
    pub vlm: VlmFlags,
    /// Human picks for the information axis.
    #[arg(long)]
    pub human_info: Option<PathBuf>,
    /// Human picks for the artifact axis.
    #[arg(long)]
    pub human_artifact: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub formats: Option<Vec<ReportFormat>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblationArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// JSON list of `{"name", "weights": {lambda_clip, lambda_edge, lambda_wavelet}}`.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[command(flatten)]
    pub scoring: ScoringFlags,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub formats: Option<Vec<ReportFormat>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    /// Images to average; all must share one shape.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Output PNG.
    #[arg(long)]
    pub out: PathBuf,
    /// Write 8-bit instead of 16-bit samples.
    #[arg(long)]
    pub eight_bit: bool,
}

#[derive(Debug, Subcommand)]
pub enum StatsCommand {
    /// Pooled two-sample t-test, or one-sample when `--mu0` is given.
    Ttest(TtestArgs),
    /// Pearson correlation of two equal-length samples.
    Pearson(PearsonArgs),
    /// Correlate a score report with mean opinion scores.
    Mos(MosArgs),
}

#[derive(Debug, Args)]
pub struct TtestArgs {
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        required = true
    )]
    pub a: Vec<f64>,
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        conflicts_with = "mu0"
    )]
    pub b: Vec<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub mu0: Option<f64>,
    #[arg(long, value_enum, default_value = "two-sided")]
    pub alternative: AlternativeArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PearsonArgs {
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        required = true
    )]
    pub x: Vec<f64>,
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        required = true
    )]
    pub y: Vec<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MosArgs {
    /// `scores.json` from `score`, or a CSV `image_id,score`.
    #[arg(long)]
    pub scores: PathBuf,
    /// CSV `image_id,mos`.
    #[arg(long)]
    pub mos: PathBuf,
    /// Field of `scores.json` to correlate.
    #[arg(long, default_value = "tws")]
    pub metric: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    /// blur, noise, pixelate or quantize.
    #[arg(long)]
    pub kind: String,
    #[arg(long, value_delimiter = ',')]
    pub strengths: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Reference image; omit to use a synthetic texture.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Side of the synthetic texture.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Optional defaults read from `--config`. Unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub manifest: Option<PathBuf>,
    pub manifests: Option<Vec<PathBuf>>,
    pub weights: Option<TwsWeights>,
    pub wavelet_scale: Option<f64>,
    pub wavelet_levels: Option<usize>,
    pub embedding: Option<EmbeddingKind>,
    pub embed_endpoint: Option<String>,
    pub embed_timeout_secs: Option<u64>,
    pub mock_dim: Option<usize>,
    pub mock_seed: Option<u64>,
    pub cache_dir: Option<PathBuf>,
    pub providers: Option<Vec<PathBuf>>,
    pub replay: Option<PathBuf>,
    pub record: Option<PathBuf>,
    pub info_prompts: Option<PathBuf>,
    pub artifact_prompts: Option<PathBuf>,
    pub batch_size: Option<usize>,
    pub k: Option<usize>,
    pub mode: Option<SelectMode>,
    pub confidence_threshold: Option<f64>,
    pub human_info: Option<PathBuf>,
    pub human_artifact: Option<PathBuf>,
    pub grid: Option<PathBuf>,
    pub formats: Option<Vec<ReportFormat>>,
    pub out: Option<PathBuf>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("bad config file: {e}")))
    }
}

/// Effective scoring settings, echoed into reports.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoringConfig {
    pub weights: TwsWeights,
    pub wavelet: &'static str,
    pub wavelet_levels: usize,
    pub normalization: WaveletNormalization,
    pub embedding: EmbeddingKind,
    pub embed_endpoint: Option<String>,
    pub embed_timeout_secs: u64,
    pub mock_dim: usize,
    pub mock_seed: u64,
    pub cache_dir: Option<PathBuf>,
}

impl ScoringConfig {
    fn resolve(flags: &ScoringFlags, file: &ConfigFile) -> Result<Self, CliError> {
        let weights = match &flags.weights {
            Some(s) => s.parse::<TwsWeights>()?,
            None => file.weights.unwrap_or_default(),
        };
        weights.validate()?;
        let normalization = match flags.wavelet_scale.or(file.wavelet_scale) {
            Some(s) if s.is_finite() && s > 0.0 => WaveletNormalization::FixedScale(s),
            Some(s) => {
                return Err(CliError::config(format!(
                    "wavelet scale must be > 0, got {s}"
                )))
            }
            None => WaveletNormalization::MinMax,
        };
        let embedding = flags
            .embedding
            .or(file.embedding)
            .unwrap_or(EmbeddingKind::Mock);
        let embed_endpoint = flags
            .embed_endpoint
            .clone()
            .or_else(|| file.embed_endpoint.clone());
        if embedding == EmbeddingKind::Remote && embed_endpoint.is_none() {
            return Err(CliError::config(
                "--embedding remote needs --embed-endpoint",
            ));
        }
        let cache_dir = flags
            .cache_dir
            .clone()
            .or_else(|| file.cache_dir.clone())
            .or_else(|| {
                std::env::var_os(CACHE_DIR_ENV)
                    .filter(|v| !v.is_empty())
                    .map(PathBuf::from)
            });
        let mock_dim = flags.mock_dim.or(file.mock_dim).unwrap_or(DEFAULT_MOCK_DIM);
        if mock_dim == 0 {
            return Err(CliError::config("mock dimension must be >= 1"));
        }
        Ok(Self {
            weights,
            wavelet: WaveletConfig::WAVELET_NAME,
            wavelet_levels: flags.wavelet_levels.or(file.wavelet_levels).unwrap_or(2),
            normalization,
            embedding,
            embed_endpoint,
            embed_timeout_secs: flags
                .embed_timeout_secs
                .or(file.embed_timeout_secs)
                .unwrap_or(DEFAULT_EMBED_TIMEOUT_SECS),
            mock_dim,
            mock_seed: flags.mock_seed.or(file.mock_seed).unwrap_or(0),
            cache_dir,
        })
    }

    fn provider(&self) -> Result<Box<dyn EmbeddingProvider>, CliError> {
        let inner: Box<dyn EmbeddingProvider> = match self.embedding {
            EmbeddingKind::Mock => Box::new(MockProvider::new(self.mock_dim, self.mock_seed)),
            EmbeddingKind::Remote => Box::new(RemoteProvider::new(
                self.embed_endpoint.as_deref().unwrap_or_default(),
                Duration::from_secs(self.embed_timeout_secs),
            )?),
        };
        Ok(match &self.cache_dir {
            Some(dir) => Box::new(CachedProvider::new(inner, dir.clone())),
            None => inner,
        })
    }

    fn scorer<'a>(&self, provider: &'a dyn EmbeddingProvider) -> TwsScorer<'a> {
        TwsScorer::new(provider)
            .with_weights(self.weights)
            .with_wavelet(WaveletConfig {
                levels: self.wavelet_levels,
            })
            .with_normalization(self.normalization)
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::config(e.to_string()))?;
    run(cli)
}

/// Entry point for the binary: prints help or errors and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            eprintln!("{}", CliError::config(e.to_string().trim_end()).to_json());
            return 2;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.code
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let command = cli.command;
    match cli.jobs {
        Some(0) => Err(CliError::config("--jobs must be >= 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::config(format!("cannot start worker pool: {e}")))?
            .install(|| dispatch(command, &file)),
        None => dispatch(command, &file),
    }
}

fn dispatch(command: Command, file: &ConfigFile) -> Result<(), CliError> {
    match command {
        Command::Score(a) => cmd_score(&a, file),
        Command::Select(a) => cmd_select(&a, file),
        Command::Robustness(a) => cmd_robustness(&a, file),
        Command::Ablation(a) => cmd_ablation(&a, file),
        Command::Ensemble(a) => cmd_ensemble(&a),
        Command::Stats(s) => cmd_stats(&s),
        Command::Degrade(a) => cmd_degrade(&a),
    }
}

fn required<T: Clone>(flag: &Option<T>, file: &Option<T>, name: &str) -> Result<T, CliError> {
    flag.clone()
        .or_else(|| file.clone())
        .ok_or_else(|| CliError::config(format!("missing --{name}")))
}

/// Creates `out` and rejects it when it coincides with an input directory.
fn prepare_out_dir(out: &Path, inputs: &[&Path]) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::data(format!("cannot create {}: {e}", out.display())))?;
    let canon = out
        .canonicalize()
        .map_err(|e| CliError::data(format!("cannot resolve {}: {e}", out.display())))?;
    for input in inputs {
        let dir = if input.is_dir() {
            input.to_path_buf()
        } else {
            match input.parent() {
                Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
                _ => PathBuf::from("."),
            }
        };
        if dir.canonicalize().ok().as_deref() == Some(canon.as_path()) {
            return Err(CliError::config(format!(
                "output directory {} is also an input directory",
                out.display()
            )));
        }
    }
    Ok(out.to_path_buf())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_text(path, &text)
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::data(format!("cannot encode {}: {e}", path.display()));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::data(e.to_string()))?;
    std::fs::write(path, bytes)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn formats(flag: &Option<Vec<ReportFormat>>, file: &ConfigFile) -> Vec<ReportFormat> {
    flag.clone()
        .or_else(|| file.formats.clone())
        .unwrap_or_else(|| vec![ReportFormat::Json, ReportFormat::Csv])
}

fn load_set(manifest: &Path) -> Result<SampleSet, CliError> {
    Ok(SampleSet::load(manifest)?)
}

fn cmd_score(args: &ScoreArgs, file: &ConfigFile) -> Result<(), CliError> {
    let manifest = required(&args.manifest, &file.manifest, "manifest")?;
    let out = required(&args.out, &file.out, "out")?;
    let scoring = ScoringConfig::resolve(&args.scoring, file)?;
    let formats = formats(&args.formats, file);
    let set = load_set(&manifest)?;
    if set.reference.is_none() {
        return Err(CliError::data(format!(
            "{} has no reference image",
            manifest.display()
        )));
    }
    let out = prepare_out_dir(&out, &[&manifest])?;
    let provider = scoring.provider()?;
    let scored = scoring.scorer(provider.as_ref()).score_set(&set)?;
    let ranking: Vec<String> = scored.iter().map(|b| b.candidate_id.clone()).collect();
    let truth = match &set.truth_order {
        Some(order) => json!({
            "order": order,
            "kendall_tau": kendall_tau_orders(&ranking, order)?,
            "top1_match": ranking.first() == order.first(),
        }),
        None => Value::Null,
    };
    let report = json!({
        "command": "score",
        "config": {
            "manifest": manifest,
            "scoring": scoring,
            "formats": formats,
        },
        "scene_id": set.scene_id,
        "embedding_provider": provider.provider_id(),
        "candidates": scored,
        "ranking": ranking,
        "truth": truth,
    });
    if formats.contains(&ReportFormat::Json) {
        write_json(&out.join("scores.json"), &report)?;
    }
    if formats.contains(&ReportFormat::Csv) {
        let rows: Vec<Vec<String>> = scored
            .iter()
            .enumerate()
            .map(|(i, b)| {
                vec![
                    (i + 1).to_string(),
                    b.candidate_id.clone(),
                    b.s_clip_raw.to_string(),
                    b.s_edge_raw.to_string(),
                    b.s_wavelet_raw.to_string(),
                    b.s_clip.to_string(),
                    b.s_edge.to_string(),
                    b.s_wavelet.to_string(),
                    b.tws.to_string(),
                ]
            })
            .collect();
        write_csv(
            &out.join("scores.csv"),
            &[
                "rank",
                "candidate_id",
                "s_clip_raw",
                "s_edge_raw",
                "s_wavelet_raw",
                "s_clip",
                "s_edge",
                "s_wavelet",
                "tws",
            ],
            &rows,
        )?;
    }
    Ok(())
}

/// Resolved VLM settings shared by `select` and `robustness`.
#[derive(Clone, Debug, Serialize)]
struct VlmConfig {
    providers: Vec<PathBuf>,
    replay: Option<PathBuf>,
    record: Option<PathBuf>,
    info_prompts: Option<PathBuf>,
    artifact_prompts: Option<PathBuf>,
    batch_size: usize,
    k: usize,
}

impl VlmConfig {
    fn resolve(flags: &VlmFlags, file: &ConfigFile) -> Result<Self, CliError> {
        let providers = if flags.providers.is_empty() {
            file.providers.clone().unwrap_or_default()
        } else {
            flags.providers.clone()
        };
        let replay = flags.replay.clone().or_else(|| file.replay.clone());
        if providers.is_empty() && replay.is_none() {
            return Err(CliError::config(
                "no VLM configured: pass --provider or --replay",
            ));
        }
        if !providers.is_empty() && replay.is_some() {
            return Err(CliError::config(
                "--provider and --replay are mutually exclusive",
            ));
        }
        let record = flags.record.clone().or_else(|| file.record.clone());
        if record.is_some() && replay.is_some() {
            return Err(CliError::config(
                "--record needs live providers, not --replay",
            ));
        }
        let batch_size = flags
            .batch_size
            .or(file.batch_size)
            .unwrap_or(DEFAULT_BATCH_SIZE);
        let k = flags.k.or(file.k).unwrap_or(DEFAULT_TOP_K);
        if batch_size == 0 || k == 0 {
            return Err(CliError::config("--batch-size and --k must be >= 1"));
        }
        Ok(Self {
            providers,
            replay,
            record,
            info_prompts: flags
                .info_prompts
                .clone()
                .or_else(|| file.info_prompts.clone()),
            artifact_prompts: flags
                .artifact_prompts
                .clone()
                .or_else(|| file.artifact_prompts.clone()),
            batch_size,
            k,
        })
    }

    fn pool(&self, axis: PromptAxis) -> Result<PromptPool, CliError> {
        let path = match axis {
            PromptAxis::Information => &self.info_prompts,
            PromptAxis::Artifact => &self.artifact_prompts,
        };
        Ok(match path {
            Some(p) => PromptPool::load(axis, p)?,
            None => PromptPool::builtin(axis),
        })
    }

    /// Every configured provider, in order.
    fn open_providers(&self) -> Result<Vec<Box<dyn VlmProvider>>, CliError> {
        if let Some(path) = &self.replay {
            let log = Arc::new(
                ReplayLog::load(path).map_err(|e| CliError::config(format!("replay log: {e}")))?,
            );
            if log.is_empty() {
                return Err(CliError::config(format!(
                    "replay log {} is empty",
                    path.display()
                )));
            }
            return log
                .providers()
                .iter()
                .map(|id| Ok(Box::new(log.provider(id)?) as Box<dyn VlmProvider>))
                .collect();
        }
        self.providers
            .iter()
            .map(|path| {
                let live = HttpVlmProvider::new(ProviderConfig::load(path)?)?;
                Ok(match &self.record {
                    Some(log) => Box::new(Recorder::append(live, log)?) as Box<dyn VlmProvider>,
                    None => Box::new(live) as Box<dyn VlmProvider>,
                })
            })
            .collect()
    }
}

fn cmd_select(args: &SelectArgs, file: &ConfigFile) -> Result<(), CliError> {
    let manifest = required(&args.manifest, &file.manifest, "manifest")?;
    let out = required(&args.out, &file.out, "out")?;
    let vlm = VlmConfig::resolve(&args.vlm, file)?;
    let mode = args.mode.or(file.mode).unwrap_or(SelectMode::TwoStage);
    let threshold = args
        .threshold
        .or(file.confidence_threshold)
        .unwrap_or(DEFAULT_CONFIDENCE_THRESHOLD);
    if !(1.0..=100.0).contains(&threshold) {
        return Err(CliError::config(format!(
            "--threshold must lie in [1, 100], got {threshold}"
        )));
    }
    let info = vlm.pool(PromptAxis::Information)?;
    let artifact = vlm.pool(PromptAxis::Artifact)?;
    let providers = vlm.open_providers()?;
    let set = load_set(&manifest)?;
    let out = prepare_out_dir(&out, &[&manifest])?;
    let stage1 = providers[0].as_ref();
    let stage2 = providers.get(1).unwrap_or(&providers[0]).as_ref();

    let (selection, ensemble, extra) = match mode {
        SelectMode::Artifact => {
            let sel = artifact_rank(&set, &artifact, stage2, vlm.batch_size, vlm.k)?;
            let chosen: Vec<&Image> = sel
                .top_k
                .iter()
                .map(|id| &set.get(id).expect("ranked ids come from the set").image)
                .collect();
            let ens = ensemble_average(&chosen)?;
            (sel, ens, json!({}))
        }
        SelectMode::TwoStage => {
            let cfg = PipelineConfig {
                k: vlm.k,
                confidence_threshold: threshold,
                batch_size: vlm.batch_size,
            };
            let o = two_stage_pipeline(&set, &info, &artifact, stage1, stage2, &cfg)?;
            let extra = json!({
                "target_label": o.target_label,
                "survivors": o.survivors,
                "identify_requests": o.identify_verdicts.len(),
                "confidence": o.confidence_verdicts.iter()
                    .map(|v| json!({ "candidate_id": v.candidate_id, "confidence": v.confidence }))
                    .collect::<Vec<_>>(),
            });
            (o.selection, o.ensemble, extra)
        }
    };
    save_png(&ensemble, out.join("ensemble.png"), BitDepth::Sixteen)?;
    let report = json!({
        "command": "select",
        "config": {
            "manifest": manifest,
            "mode": mode,
            "confidence_threshold": threshold,
            "vlm": vlm,
        },
        "scene_id": set.scene_id,
        "providers": { "stage1": stage1.provider_id(), "stage2": stage2.provider_id() },
        "pipeline": extra,
        "selection": selection,
        "ensemble": "ensemble.png",
    });
    write_json(&out.join("selection.json"), &report)
}

/// One provider's row of the robustness table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RobustnessRow {
    pub provider_id: String,
    /// Share of scenes on which all information prompts chose the same candidate.
    pub consistency_info: f64,
    pub consistency_artifact: f64,
    /// Per-candidate variant of the consistency figures.
    pub consistency_info_per_candidate: f64,
    pub consistency_artifact_per_candidate: f64,
    /// Top-1 match with the human mode choice; `None` without human data.
    pub agreement_info: Option<f64>,
    pub agreement_artifact: Option<f64>,
    /// Top-k overlap with human picks.
    pub agreement_info_topk: Option<f64>,
    pub agreement_artifact_topk: Option<f64>,
}

struct AxisSummary {
    consistency: f64,
    per_candidate: f64,
    selections: BTreeMap<String, SelectionResult>,
}

fn axis_summary(
    sets: &[SampleSet],
    pool: &PromptPool,
    provider: &dyn VlmProvider,
    vlm: &VlmConfig,
    warnings: &mut Vec<String>,
) -> Result<AxisSummary, CliError> {
    let mut choices = Vec::with_capacity(sets.len());
    let mut ids = Vec::with_capacity(sets.len());
    let mut selections = BTreeMap::new();
    for set in sets {
        let ranking = rank_by_pool(set, pool, provider, vlm.batch_size)?;
        warnings.extend(
            ranking
                .warnings
                .iter()
                .map(|w| format!("{}: {}: {w}", provider.provider_id(), set.scene_id)),
        );
        choices.push(
            ranking
                .per_prompt
                .iter()
                .map(|o| o[0].clone())
                .collect::<Vec<_>>(),
        );
        ids.push(set.ids());
        selections.insert(set.scene_id.clone(), aggregate_rankings(&ranking, vlm.k)?);
    }
    Ok(AxisSummary {
        consistency: prompt_consistency(&choices)?,
        per_candidate: per_candidate_consistency(&choices, &ids)?,
        selections,
    })
}

fn agreement(
    humans: &Option<Result<HumanSelections, VlmError>>,
    selections: &BTreeMap<String, SelectionResult>,
    k: usize,
    axis: &str,
    provider: &str,
    warnings: &mut Vec<String>,
) -> (Option<f64>, Option<f64>) {
    let humans = match humans {
        None => return (None, None),
        Some(Err(e)) => {
            warnings.push(format!("{provider}: {axis} agreement unavailable: {e}"));
            return (None, None);
        }
        Some(Ok(h)) => h,
    };
    match human_agreement(selections, humans, k) {
        Ok(a) => (Some(a.top1_percent), Some(a.topk_overlap_percent)),
        Err(e) => {
            warnings.push(format!("{provider}: {axis} agreement unavailable: {e}"));
            (None, None)
        }
    }
}

fn cmd_robustness(args: &RobustnessArgs, file: &ConfigFile) -> Result<(), CliError> {
    let manifests = if args.manifests.is_empty() {
        file.manifests
            .clone()
            .or_else(|| file.manifest.clone().map(|m| vec![m]))
            .unwrap_or_default()
    } else {
        args.manifests.clone()
    };
    if manifests.is_empty() {
        return Err(CliError::config("missing --manifest"));
    }
    let out = required(&args.out, &file.out, "out")?;
    let vlm = VlmConfig::resolve(&args.vlm, file)?;
    let formats = formats(&args.formats, file);
    let info = vlm.pool(PromptAxis::Information)?;
    let artifact = vlm.pool(PromptAxis::Artifact)?;
    if info.len() < 2 || artifact.len() < 2 {
        return Err(CliError::config(
            "consistency needs at least 2 prompts per pool",
        ));
    }
    let human_info_path = args.human_info.clone().or_else(|| file.human_info.clone());
    let human_artifact_path = args
        .human_artifact
        .clone()
        .or_else(|| file.human_artifact.clone());
    let providers = vlm.open_providers()?;
    let sets = manifests
        .iter()
        .map(|m| load_set(m))
        .collect::<Result<Vec<_>, _>>()?;
    let inputs: Vec<&Path> = manifests.iter().map(PathBuf::as_path).collect();
    let out = prepare_out_dir(&out, &inputs)?;

    let mut warnings = Vec::new();
    let human_info = human_info_path.as_ref().map(HumanSelections::load);
    let human_artifact = human_artifact_path.as_ref().map(HumanSelections::load);
    if human_info.is_none() || human_artifact.is_none() {
        warnings.push(
            "no human selection CSV for at least one axis; its agreement columns are null"
                .to_string(),
        );
    }
    let mut rows = Vec::with_capacity(providers.len());
    for p in &providers {
        let id = p.provider_id().to_string();
        let i = axis_summary(&sets, &info, p.as_ref(), &vlm, &mut warnings)?;
        let a = axis_summary(&sets, &artifact, p.as_ref(), &vlm, &mut warnings)?;
        let (info1, infok) = agreement(
            &human_info,
            &i.selections,
            vlm.k,
            "information",
            &id,
            &mut warnings,
        );
        let (art1, artk) = agreement(
            &human_artifact,
            &a.selections,
            vlm.k,
            "artifact",
            &id,
            &mut warnings,
        );
        rows.push(RobustnessRow {
            provider_id: id,
            consistency_info: i.consistency,
            consistency_artifact: a.consistency,
            consistency_info_per_candidate: i.per_candidate,
            consistency_artifact_per_candidate: a.per_candidate,
            agreement_info: info1,
            agreement_artifact: art1,
            agreement_info_topk: infok,
            agreement_artifact_topk: artk,
        });
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let report = json!({
        "command": "robustness",
        "config": {
            "manifests": manifests,
            "vlm": vlm,
            "human_info": human_info_path,
            "human_artifact": human_artifact_path,
            "formats": formats,
        },
        "scenes": sets.iter().map(|s| &s.scene_id).collect::<Vec<_>>(),
        "rows": rows,
        "warnings": warnings,
    });
    if formats.contains(&ReportFormat::Json) {
        write_json(&out.join("robustness.json"), &report)?;
    }
    if formats.contains(&ReportFormat::Csv) {
        let cells: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    r.provider_id.clone(),
                    r.consistency_info.to_string(),
                    r.consistency_artifact.to_string(),
                    opt_cell(r.agreement_info),
                    opt_cell(r.agreement_artifact),
                    r.consistency_info_per_candidate.to_string(),
                    r.consistency_artifact_per_candidate.to_string(),
                    opt_cell(r.agreement_info_topk),
                    opt_cell(r.agreement_artifact_topk),
                ]
            })
            .collect();
        write_csv(
            &out.join("robustness.csv"),
            &[
                "provider",
                "consistency_info",
                "consistency_artifact",
                "agreement_info",
                "agreement_artifact",
                "consistency_info_per_candidate",
                "consistency_artifact_per_candidate",
                "agreement_info_topk",
                "agreement_artifact_topk",
            ],
            &cells,
        )?;
    }
    Ok(())
}

fn load_grid(path: &Path) -> Result<Vec<WeightConfig>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read grid {}: {e}", path.display())))?;
    let grid: Vec<WeightConfig> = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("bad weight grid: {e}")))?;
    if grid.is_empty() {
        return Err(CliError::config("weight grid is empty"));
    }
    Ok(grid)
}

fn cmd_ablation(args: &AblationArgs, file: &ConfigFile) -> Result<(), CliError> {
    let manifest = required(&args.manifest, &file.manifest, "manifest")?;
    let out = required(&args.out, &file.out, "out")?;
    let scoring = ScoringConfig::resolve(&args.scoring, file)?;
    let formats = formats(&args.formats, file);
    let grid_path = args.grid.clone().or_else(|| file.grid.clone());
    let grid = match &grid_path {
        Some(p) => load_grid(p)?,
        None => table_iv_grid(),
    };
    let set = load_set(&manifest)?;
    let reference = set
        .reference
        .as_ref()
        .ok_or_else(|| CliError::data(format!("{} has no reference image", manifest.display())))?;
    let out = prepare_out_dir(&out, &[&manifest])?;
    let provider = scoring.provider()?;
    let scorer = scoring.scorer(provider.as_ref());
    let raws = scorer.raw_components(reference, &set)?;
    let normalized = crate::metrics::normalize_components(raws, scoring.normalization)?;
    let rows = ablation_sweep(&normalized, &grid)?;
    let report = json!({
        "command": "ablation",
        "config": {
            "manifest": manifest,
            "grid": grid_path,
            "scoring": scoring,
            "formats": formats,
        },
        "scene_id": set.scene_id,
        "rows": rows,
    });
    if formats.contains(&ReportFormat::Json) {
        write_json(&out.join("ablation.json"), &report)?;
    }
    if formats.contains(&ReportFormat::Csv) {
        let cells: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    r.name.clone(),
                    r.weights.lambda_clip.to_string(),
                    r.weights.lambda_edge.to_string(),
                    r.weights.lambda_wavelet.to_string(),
                    r.mean_tws.to_string(),
                    r.ranking.first().cloned().unwrap_or_default(),
                ]
            })
            .collect();
        write_csv(
            &out.join("ablation.csv"),
            &[
                "configuration",
                "lambda_clip",
                "lambda_edge",
                "lambda_wavelet",
                "mean_tws",
                "top_1",
            ],
            &cells,
        )?;
    }
    Ok(())
}

fn cmd_ensemble(args: &EnsembleArgs) -> Result<(), CliError> {
    let out_canon = args.out.canonicalize().ok();
    for input in &args.inputs {
        if out_canon.is_some() && input.canonicalize().ok() == out_canon {
            return Err(CliError::config(format!(
                "output {} is also an input",
                args.out.display()
            )));
        }
    }
    let images = args
        .inputs
        .iter()
        .map(load_image)
        .collect::<Result<Vec<_>, _>>()?;
    let mean = ensemble_average(&images)?;
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))?;
    }
    let depth = if args.eight_bit {
        BitDepth::Eight
    } else {
        BitDepth::Sixteen
    };
    save_png(&mean, &args.out, depth)?;
    Ok(())
}

fn emit(value: &Value, out: &Option<PathBuf>) -> Result<(), CliError> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            println!(
                "{}",
                serde_json::to_string_pretty(value).expect("report serializes")
            );
            Ok(())
        }
    }
}

fn cmd_stats(cmd: &StatsCommand) -> Result<(), CliError> {
    match cmd {
        StatsCommand::Ttest(a) => {
            let alt = Alternative::from(a.alternative);
            let result = match (a.mu0, a.b.is_empty()) {
                (Some(mu0), _) => t_test_one_sample_with(&a.a, mu0, alt)?,
                (None, false) => t_test_two_sample_with(&a.a, &a.b, alt)?,
                (None, true) => return Err(CliError::config("ttest needs --b or --mu0")),
            };
            emit(
                &json!({ "command": "stats ttest", "result": result }),
                &a.out,
            )
        }
        StatsCommand::Pearson(a) => {
            let r = pearson(&a.x, &a.y)?;
            emit(
                &json!({ "command": "stats pearson", "n": a.x.len(), "pearson": r }),
                &a.out,
            )
        }
        StatsCommand::Mos(a) => {
            let scores = read_scores(&a.scores, &a.metric)?;
            let mos = read_mos_csv(&a.mos)?;
            let report = mos_correlation(&scores, &mos)?;
            emit(
                &json!({ "command": "stats mos", "metric": a.metric, "report": report }),
                &a.out,
            )
        }
    }
}

#[derive(Deserialize)]
struct ScoreRow {
    image_id: String,
    score: f64,
}

/// Scores from a `score` report or an `image_id,score` CSV.
fn read_scores(path: &Path, metric: &str) -> Result<Vec<(String, f64)>, CliError> {
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    {
        let mut r = csv::Reader::from_path(path)
            .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
        return r
            .deserialize::<ScoreRow>()
            .map(|row| {
                row.map(|r| (r.image_id, r.score))
                    .map_err(|e| CliError::data(format!("bad score row: {e}")))
            })
            .collect();
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let report: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::data(format!("bad score report: {e}")))?;
    let candidates = report["candidates"]
        .as_array()
        .ok_or_else(|| CliError::data("score report has no candidates array"))?;
    candidates
        .iter()
        .map(|c| {
            let id = c["candidate_id"].as_str();
            let v = c[metric].as_f64();
            match (id, v) {
                (Some(id), Some(v)) => Ok((id.to_string(), v)),
                _ => Err(CliError::config(format!(
                    "score report lacks numeric field {metric:?}"
                ))),
            }
        })
        .collect()
}

fn cmd_degrade(args: &DegradeArgs) -> Result<(), CliError> {
    let kind = DegradationKind::from_name(&args.kind)
        .ok_or_else(|| CliError::config(format!("unknown degradation kind {:?}", args.kind)))?;
    let strengths = args
        .strengths
        .clone()
        .unwrap_or_else(|| default_strengths(kind));
    let inputs: Vec<&Path> = args.input.iter().map(PathBuf::as_path).collect();
    let out = prepare_out_dir(&args.out, &inputs)?;
    let reference = match &args.input {
        Some(p) => load_image(p)?,
        None => synthetic_texture(args.size, args.size, args.seed),
    };
    let ladder = build_ladder(&reference, kind, &strengths, args.seed)?;
    let manifest = ladder.save(&out, BitDepth::Sixteen)?;
    println!("{}", manifest.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_classes_map_to_codes() {
        assert_eq!(CliError::from(VlmError::InvalidConfig("x".into())).code, 2);
        assert_eq!(
            CliError::from(VlmError::MissingHumanData("x".into())).code,
            3
        );
        assert_eq!(CliError::from(VlmError::Parse("x".into())).code, 4);
        assert_eq!(CliError::from(VlmError::Replay("x".into())).code, 4);
        assert_eq!(
            CliError::from(VlmError::EmptyAfterFilter {
                histogram: BTreeMap::new()
            })
            .code,
            5
        );
        assert_eq!(CliError::from(MetricError::MissingReference).code, 3);
        assert_eq!(
            CliError::from(MetricError::InvalidWeights("w".into())).code,
            2
        );
        assert_eq!(
            CliError::from(MetricError::Embedding(EmbeddingError::Timeout("t".into()))).code,
            4
        );
        assert_eq!(CliError::from(HarnessError::BadSpec("b".into())).code, 2);
    }

    #[test]
    fn stderr_payload_parses() {
        let e = CliError::empty("nothing survived");
        let v: Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(v["exit_code"], 5);
        assert_eq!(v["error"], "empty_after_filter");
    }

    #[test]
    fn flags_override_config_file() {
        let file = ConfigFile {
            weights: Some(TwsWeights::new(0.5, 0.5, 0.0).unwrap()),
            mock_dim: Some(8),
            ..Default::default()
        };
        let flags = ScoringFlags {
            mock_dim: Some(16),
            ..Default::default()
        };
        let cfg = ScoringConfig::resolve(&flags, &file).unwrap();
        assert_eq!(cfg.mock_dim, 16);
        assert_eq!(cfg.weights.lambda_wavelet, 0.0);
        let defaults =
            ScoringConfig::resolve(&ScoringFlags::default(), &ConfigFile::default()).unwrap();
        assert_eq!(defaults.weights, TwsWeights::default());
        assert_eq!(defaults.normalization, WaveletNormalization::MinMax);
    }

    #[test]
    fn config_file_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"weigths": null}"#).unwrap();
        assert_eq!(ConfigFile::load(&p).unwrap_err().code, 2);
    }

    #[test]
    fn output_dir_may_not_be_an_input_dir() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("manifest.json");
        assert_eq!(
            prepare_out_dir(dir.path(), &[&manifest]).unwrap_err().code,
            2
        );
        assert!(prepare_out_dir(&dir.path().join("out"), &[&manifest]).is_ok());
    }

    #[test]
    fn vlm_requires_a_source() {
        let err = VlmConfig::resolve(&VlmFlags::default(), &ConfigFile::default()).unwrap_err();
        assert_eq!(err.code, 2);
    }
}
