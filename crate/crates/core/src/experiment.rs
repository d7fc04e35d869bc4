//! Run configuration, single runs, sweeps, anchor statistics and schedule
//! reports.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinity::{
    load_embedding_table, score_tokens, AnchorSet, EmbeddingTable, PromptTokens, ScoringConfig,
    DEFAULT_SIM_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::guidance::GuidanceConfig;
use crate::mask::{
    LayerSelection, MaskBuilder, MaskExport, TokenWeighting, DEFAULT_MASK_STEP, DEFAULT_SKIP_RATIO,
};
use crate::model::{
    edge_density, sample, DitModel, EngineConfig, FlopSplit, LatentTokens, MaskPlan, ModelSpec,
    StepRecord, TextCondition, DEFAULT_EDGE_THRESHOLD,
};
use crate::stepcache::{
    plan_schedule, ScheduleDump, StepCacheConfig, DEFAULT_DELTA, DEFAULT_WARMUP,
};

pub const SEED_ENV: &str = "ACCELAES_SEED";
pub const DEFAULT_EMBEDDING_DIM: usize = 64;

/// Published theoretical skip ratios for `(T, T_w, delta)` settings.
pub const REFERENCE_SKIP_RATIOS: [((usize, usize, usize), f64); 2] =
    [((30, 5, 2), 0.467), ((28, 5, 2), 0.464)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    LuminaLike,
    Sd3Like,
    FluxLike,
    Custom,
}

impl Profile {
    pub const ALL: [Profile; 4] = [
        Profile::LuminaLike,
        Profile::Sd3Like,
        Profile::FluxLike,
        Profile::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Profile::LuminaLike => "lumina-like",
            Profile::Sd3Like => "sd3-like",
            Profile::FluxLike => "flux-like",
            Profile::Custom => "custom",
        }
    }

    /// Fully populated configuration for this profile.
    pub fn defaults(self) -> RunConfig {
        let base = RunConfig {
            profile: self,
            model: ModelSpec::default(),
            prompt: "a cinematic portrait of an old fisherman, dramatic lighting, intricate details"
                .into(),
            anchors: AnchorSource::Builtin,
            embeddings: EmbeddingSource::Synthetic {
                seed: 0,
                dim: DEFAULT_EMBEDDING_DIM,
            },
            sim_threshold: DEFAULT_SIM_THRESHOLD,
            top_r: None,
            mask: true,
            skip_ratio: DEFAULT_SKIP_RATIO,
            mask_step: DEFAULT_MASK_STEP,
            sparse: true,
            delta: DEFAULT_DELTA,
            warmup: DEFAULT_WARMUP,
            steps: 30,
            cfg_scale: 4.0,
            cfg_aes_scale: 4.0,
            spatial_cfg: true,
            seed: 0,
            edge_threshold: DEFAULT_EDGE_THRESHOLD,
        };
        match self {
            Profile::LuminaLike => base,
            Profile::Sd3Like => RunConfig {
                steps: 28,
                cfg_scale: 7.0,
                cfg_aes_scale: 7.0,
                spatial_cfg: false,
                ..base
            },
            Profile::FluxLike => RunConfig {
                steps: 28,
                cfg_scale: 3.5,
                cfg_aes_scale: 3.5,
                spatial_cfg: false,
                sparse: false,
                mask: false,
                ..base
            },
            Profile::Custom => RunConfig {
                mask: false,
                sparse: false,
                spatial_cfg: false,
                delta: 1,
                ..base
            },
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Profile::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::config(format!("unknown profile {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorSource {
    Builtin,
    File(PathBuf),
}

impl AnchorSource {
    pub fn load(&self) -> Result<AnchorSet> {
        match self {
            AnchorSource::Builtin => Ok(AnchorSet::builtin()),
            AnchorSource::File(p) => AnchorSet::load(p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    /// Deterministic per-token vectors generated on demand.
    Synthetic { seed: u64, dim: usize },
    File(PathBuf),
}

impl EmbeddingSource {
    /// Loads the table; a synthetic table covers `tokens` and every anchor.
    pub fn load<S: AsRef<str>>(&self, tokens: &[S], anchors: &AnchorSet) -> Result<EmbeddingTable> {
        match self {
            EmbeddingSource::Synthetic { seed, dim } => {
                let words = tokens
                    .iter()
                    .map(|t| t.as_ref())
                    .chain(anchors.anchors().iter().map(String::as_str));
                Ok(EmbeddingTable::synthetic(words, *dim, *seed))
            }
            EmbeddingSource::File(p) => {
                let loaded = load_embedding_table(p)?;
                for w in &loaded.warnings {
                    log::warn!("{w}");
                }
                Ok(loaded.table)
            }
        }
    }
}

/// Everything one run needs. Serialized verbatim into its report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub model: ModelSpec,
    pub prompt: String,
    pub anchors: AnchorSource,
    pub embeddings: EmbeddingSource,
    pub sim_threshold: f64,
    pub top_r: Option<usize>,
    /// Build a focus mask at `mask_step`.
    pub mask: bool,
    pub skip_ratio: f64,
    pub mask_step: usize,
    pub sparse: bool,
    pub delta: usize,
    pub warmup: usize,
    pub steps: usize,
    pub cfg_scale: f64,
    pub cfg_aes_scale: f64,
    pub spatial_cfg: bool,
    /// Seed of the initial noise.
    pub seed: u64,
    pub edge_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Profile::LuminaLike.defaults()
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.prompt.trim().is_empty() {
            return Err(Error::config("prompt is empty"));
        }
        if !(-1.0..=1.0).contains(&self.sim_threshold) {
            return Err(Error::config(format!(
                "similarity threshold {} outside [-1, 1]",
                self.sim_threshold
            )));
        }
        if self.top_r == Some(0) {
            return Err(Error::config("top_r must be positive"));
        }
        if let EmbeddingSource::Synthetic { dim: 0, .. } = self.embeddings {
            return Err(Error::config("synthetic embedding dim must be positive"));
        }
        if !(self.edge_threshold.is_finite() && self.edge_threshold >= 0.0) {
            return Err(Error::config("edge threshold must be finite and nonnegative"));
        }
        if self.sparse && !self.mask {
            return Err(Error::config("sparse blocks require the mask"));
        }
        self.guidance().validate()?;
        self.engine(TokenWeighting::Fallback).validate()
    }

    pub fn guidance(&self) -> GuidanceConfig {
        GuidanceConfig {
            bg_scale: self.cfg_scale,
            aes_scale: self.cfg_aes_scale,
            spatial: self.spatial_cfg,
        }
    }

    pub fn step_cache(&self) -> StepCacheConfig {
        StepCacheConfig {
            delta: self.delta,
            warmup: self.warmup,
            total_steps: self.steps,
        }
    }

    pub fn engine(&self, weighting: TokenWeighting) -> EngineConfig {
        EngineConfig {
            steps: self.steps,
            guidance: self.guidance(),
            two_pass: true,
            mask: self.mask.then(|| MaskPlan {
                mask_step: self.mask_step,
                builder: MaskBuilder {
                    weighting,
                    layers: LayerSelection::All,
                    skip_ratio: self.skip_ratio,
                },
            }),
            sparse: self.sparse,
            delta: self.delta,
            warmup: self.warmup,
        }
    }

    /// Replaces every seed: model weights, noise and synthetic embeddings.
    pub fn override_seeds(&mut self, seed: u64) {
        self.model.seed = seed;
        self.seed = seed;
        if let EmbeddingSource::Synthetic { seed: s, .. } = &mut self.embeddings {
            *s = seed;
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Partial configuration. Unset fields come from the profile defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub profile: Option<Profile>,
    pub model: Option<ModelSpec>,
    pub prompt: Option<String>,
    pub anchors: Option<AnchorSource>,
    pub embeddings: Option<EmbeddingSource>,
    pub sim_threshold: Option<f64>,
    pub top_r: Option<usize>,
    pub mask: Option<bool>,
    pub skip_ratio: Option<f64>,
    pub mask_step: Option<usize>,
    pub sparse: Option<bool>,
    pub delta: Option<usize>,
    pub warmup: Option<usize>,
    pub steps: Option<usize>,
    pub cfg_scale: Option<f64>,
    pub cfg_aes_scale: Option<f64>,
    pub spatial_cfg: Option<bool>,
    pub seed: Option<u64>,
    pub edge_threshold: Option<f64>,
}

impl ConfigOverrides {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Fields set in `other` win.
    pub fn merge(self, other: ConfigOverrides) -> Self {
        macro_rules! pick {
            ($($f:ident),*) => { Self { $($f: other.$f.or(self.$f)),* } };
        }
        pick!(
            profile, model, prompt, anchors, embeddings, sim_threshold, top_r, mask, skip_ratio,
            mask_step, sparse, delta, warmup, steps, cfg_scale, cfg_aes_scale, spatial_cfg, seed,
            edge_threshold
        )
    }

    /// Profile defaults with these overrides applied, then the seed override
    /// if given, then validation. Without an explicit focus scale the focus
    /// scale follows the background scale.
    pub fn resolve(self, seed_override: Option<u64>) -> Result<RunConfig> {
        let d = self.profile.unwrap_or(Profile::LuminaLike).defaults();
        let cfg_scale = self.cfg_scale.unwrap_or(d.cfg_scale);
        let mut cfg = RunConfig {
            profile: d.profile,
            model: self.model.unwrap_or(d.model),
            prompt: self.prompt.unwrap_or(d.prompt),
            anchors: self.anchors.unwrap_or(d.anchors),
            embeddings: self.embeddings.unwrap_or(d.embeddings),
            sim_threshold: self.sim_threshold.unwrap_or(d.sim_threshold),
            top_r: self.top_r.or(d.top_r),
            mask: self.mask.unwrap_or(d.mask),
            skip_ratio: self.skip_ratio.unwrap_or(d.skip_ratio),
            mask_step: self.mask_step.unwrap_or(d.mask_step),
            sparse: self.sparse.unwrap_or(d.sparse),
            delta: self.delta.unwrap_or(d.delta),
            warmup: self.warmup.unwrap_or(d.warmup),
            steps: self.steps.unwrap_or(d.steps),
            cfg_scale,
            cfg_aes_scale: self.cfg_aes_scale.unwrap_or(cfg_scale),
            spatial_cfg: self.spatial_cfg.unwrap_or(d.spatial_cfg),
            seed: self.seed.unwrap_or(d.seed),
            edge_threshold: self.edge_threshold.unwrap_or(d.edge_threshold),
        };
        if let Some(s) = seed_override {
            cfg.override_seeds(s);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl From<&RunConfig> for ConfigOverrides {
    fn from(c: &RunConfig) -> Self {
        Self {
            profile: Some(c.profile),
            model: Some(c.model.clone()),
            prompt: Some(c.prompt.clone()),
            anchors: Some(c.anchors.clone()),
            embeddings: Some(c.embeddings.clone()),
            sim_threshold: Some(c.sim_threshold),
            top_r: c.top_r,
            mask: Some(c.mask),
            skip_ratio: Some(c.skip_ratio),
            mask_step: Some(c.mask_step),
            sparse: Some(c.sparse),
            delta: Some(c.delta),
            warmup: Some(c.warmup),
            steps: Some(c.steps),
            cfg_scale: Some(c.cfg_scale),
            cfg_aes_scale: Some(c.cfg_aes_scale),
            spatial_cfg: Some(c.spatial_cfg),
            seed: Some(c.seed),
            edge_threshold: Some(c.edge_threshold),
        }
    }
}

/// Reads the seed override from the environment, if set.
pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::config(format!("{SEED_ENV}: {e}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSummary {
    #[serde(flatten)]
    pub export: MaskExport,
    pub focus_count: usize,
    pub degenerate: bool,
    /// No prompt token matched an anchor; all text tokens were weighted.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSummary {
    pub tokens: Vec<String>,
    pub triggered: bool,
    pub selected_tokens: Vec<String>,
    pub matched_anchors: Vec<String>,
    pub missing_tokens: Vec<String>,
    /// Text tokens fed to the model after truncation.
    pub text_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub schedule: ScheduleDump,
    pub flops: FlopSplit,
    pub dense_equivalent_flops: u64,
    pub actual_flops: u64,
    /// Dense-equivalent FLOPs over actual FLOPs.
    pub estimated_speedup: f64,
    pub forwards: usize,
    pub prompt: PromptSummary,
    pub mask: Option<MaskSummary>,
    pub edge_density: f64,
    pub steps: Vec<StepRecord>,
    /// Informational only.
    pub wall_time_ms: f64,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn run_experiment(config: &RunConfig) -> Result<RunReport> {
    run_with_latent(config).map(|(report, _)| report)
}

/// Runs one sampling trajectory and also returns the final latent.
pub fn run_with_latent(config: &RunConfig) -> Result<(RunReport, LatentTokens)> {
    let started = Instant::now();
    config.validate()?;
    let anchors = config.anchors.load()?;
    let prompt = PromptTokens::tokenize(&config.prompt)?;
    let table = config.embeddings.load(prompt.tokens(), &anchors)?;
    let scoring = ScoringConfig {
        sim_threshold: config.sim_threshold,
        top_r: config.top_r,
    };
    let affinity = score_tokens(&prompt, &anchors, &table, &scoring);

    let model = DitModel::build(&config.model)?;
    let cond = TextCondition::from_prompt(&prompt, model.spec(), config.model.seed);
    let uncond = TextCondition::unconditional(cond.len(), model.spec(), config.model.seed);
    let in_text: Vec<usize> = affinity
        .selected
        .iter()
        .copied()
        .filter(|&j| j < cond.len())
        .collect();
    let weighting = TokenWeighting::from_selection(&in_text);
    let fallback = weighting == TokenWeighting::Fallback;
    let engine = config.engine(weighting);

    let init = LatentTokens::noise(model.spec(), config.seed);
    let mut session = model.session(cond.clone(), uncond);
    let out = sample(&mut session, &init, &engine)?;
    let edge = edge_density(&out.latent, config.edge_threshold)?;

    let actual = out.flops.total();
    let words = prompt.tokens();
    let report = RunReport {
        config: config.clone(),
        schedule: out.schedule.dump(),
        flops: out.flops,
        dense_equivalent_flops: out.dense_equivalent,
        actual_flops: actual,
        estimated_speedup: out.dense_equivalent as f64 / actual as f64,
        forwards: out.forwards,
        prompt: PromptSummary {
            tokens: words.to_vec(),
            triggered: affinity.triggered,
            selected_tokens: affinity.selected.iter().map(|&j| words[j].clone()).collect(),
            matched_anchors: affinity
                .matched_anchors
                .iter()
                .map(|&k| anchors.anchors()[k].clone())
                .collect(),
            missing_tokens: affinity.missing_tokens.iter().map(|&j| words[j].clone()).collect(),
            text_tokens: cond.len(),
        },
        mask: out.mask.as_ref().map(|m| MaskSummary {
            export: m.export(),
            focus_count: m.focus_count(),
            degenerate: m.is_degenerate(),
            fallback,
        }),
        edge_density: edge,
        steps: out.steps,
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    Ok((report, out.latent))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    SkipRatio,
    MaskStep,
    Delta,
    Warmup,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::SkipRatio => "skip_ratio",
            SweepAxis::MaskStep => "mask_step",
            SweepAxis::Delta => "delta",
            SweepAxis::Warmup => "warmup",
        }
    }

    fn apply(self, config: &mut RunConfig, value: f64) -> Result<()> {
        if self == SweepAxis::SkipRatio {
            config.skip_ratio = value;
            return Ok(());
        }
        if !(value >= 0.0 && value.fract() == 0.0 && value <= u32::MAX as f64) {
            return Err(Error::config(format!(
                "{} needs a nonnegative integer, got {value}",
                self.name()
            )));
        }
        let v = value as usize;
        match self {
            SweepAxis::MaskStep => config.mask_step = v,
            SweepAxis::Delta => config.delta = v,
            SweepAxis::Warmup => config.warmup = v,
            SweepAxis::SkipRatio => unreachable!(),
        }
        Ok(())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "skip_ratio" => Ok(SweepAxis::SkipRatio),
            "mask_step" => Ok(SweepAxis::MaskStep),
            "delta" => Ok(SweepAxis::Delta),
            "warmup" => Ok(SweepAxis::Warmup),
            _ => Err(Error::config(format!(
                "unknown sweep axis {s:?}; expected skip_ratio, mask_step, delta or warmup"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: f64,
    pub report: RunReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub estimated_speedup: f64,
    pub full_count: usize,
    pub skip_count: usize,
    pub edge_density: f64,
}

impl From<&SweepPoint> for SweepRow {
    fn from(p: &SweepPoint) -> Self {
        Self {
            value: p.value,
            estimated_speedup: p.report.estimated_speedup,
            full_count: p.report.schedule.full_count,
            skip_count: p.report.schedule.skip_count,
            edge_density: p.report.edge_density,
        }
    }
}

/// One run per value, all other settings and seeds shared, sorted by value.
pub fn sweep(base: &RunConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepPoint>> {
    let mut values = values.to_vec();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("sweep values must be finite"));
    }
    values.sort_by(f64::total_cmp);
    let configs = values
        .iter()
        .map(|&v| {
            let mut c = base.clone();
            axis.apply(&mut c, v)?;
            c.validate()?;
            Ok((v, c))
        })
        .collect::<Result<Vec<_>>>()?;
    configs
        .into_par_iter()
        .map(|(value, c)| run_experiment(&c).map(|report| SweepPoint { value, report }))
        .collect()
}

pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(SweepRow::from(p))
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorCount {
    pub anchor: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorStats {
    pub total: usize,
    pub triggered: usize,
    /// `None` when there are no prompts.
    pub trigger_rate: Option<f64>,
    /// Mean number of distinct matched anchors per triggered prompt.
    pub mean_matched_anchors: Option<f64>,
    pub top_anchors: Vec<AnchorCount>,
}

/// Nonblank lines of a prompt file.
pub fn load_prompts(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// Trigger statistics over a prompt corpus. Prompts with no scorable word
/// count toward the total but never trigger.
pub fn anchor_stats(
    prompts: &[String],
    anchors: &AnchorSet,
    table: &EmbeddingTable,
    config: &ScoringConfig,
) -> AnchorStats {
    let mut triggered = 0;
    let mut matched_total = 0;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for prompt in prompts {
        let Ok(tokens) = PromptTokens::tokenize(prompt) else {
            continue;
        };
        let aff = score_tokens(&tokens, anchors, table, config);
        if aff.triggered {
            triggered += 1;
            matched_total += aff.matched_anchors.len();
        }
        for &k in &aff.matched_anchors {
            *counts.entry(anchors.anchors()[k].as_str()).or_default() += 1;
        }
    }
    let mut top: Vec<AnchorCount> = counts
        .into_iter()
        .map(|(anchor, count)| AnchorCount {
            anchor: anchor.to_string(),
            count,
        })
        .collect();
    top.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.anchor.cmp(&b.anchor)));
    top.truncate(10);
    let total = prompts.len();
    AnchorStats {
        total,
        triggered,
        trigger_rate: (total > 0).then(|| triggered as f64 / total as f64),
        mean_matched_anchors: (triggered > 0).then(|| matched_total as f64 / triggered as f64),
        top_anchors: top,
    }
}

/// Table covering every word of every prompt plus the anchors.
pub fn corpus_table(prompts: &[String], anchors: &AnchorSet, source: &EmbeddingSource) -> Result<EmbeddingTable> {
    let words: Vec<String> = prompts
        .iter()
        .filter_map(|p| PromptTokens::tokenize(p).ok())
        .flat_map(|t| t.tokens().to_vec())
        .collect();
    source.load(&words, anchors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    #[serde(flatten)]
    pub dump: ScheduleDump,
    pub invariants_hold: bool,
    /// Published ratio for the same setting, when one exists.
    pub reference_skip_ratio: Option<f64>,
    pub difference: Option<f64>,
}

pub fn reference_skip_ratio(cfg: &StepCacheConfig) -> Option<f64> {
    REFERENCE_SKIP_RATIOS
        .iter()
        .find(|(k, _)| *k == (cfg.total_steps, cfg.warmup, cfg.delta))
        .map(|(_, r)| *r)
}

pub fn schedule_report(cfg: &StepCacheConfig) -> Result<ScheduleReport> {
    let schedule = plan_schedule(cfg)?;
    let dump = schedule.dump();
    let reference = reference_skip_ratio(cfg);
    let consistent = schedule.check_invariants().is_ok()
        && dump.full_count + dump.skip_count == dump.total_steps;
    Ok(ScheduleReport {
        difference: reference.map(|r| dump.skip_ratio - r),
        dump,
        invariants_hold: consistent,
        reference_skip_ratio: reference,
    })
}
