//! Seeded reference denoiser and Euler sampler.
//!
//! The denoiser is a small diffusion transformer over an `h x w` grid of
//! latent tokens: input projection, fixed positional embedding, sinusoidal
//! time embedding, `depth` blocks of self-attention, cross-attention and FFN,
//! final norm and output projection. Latents are stored token-major
//! (`N x d`); the binary dump is channel-major.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::affinity::{synthetic_embedding, PromptTokens};
use crate::block::{
    block_flops, run_block, BlockContext, BlockDims, BlockMode, BlockWeights, FfnCache,
    TokenPartition,
};
use crate::error::{Error, Result};
use crate::guidance::{apply_cfg, GuidanceConfig};
use crate::mask::{AesMask, AffinityMap, CrossAttnRecord, MaskBuilder, MaskLifecycle};
use crate::math::{matmul, LayerNormParams, Matrix};
use crate::stepcache::{
    plan_schedule_with_forced, StepCache, StepCacheConfig, StepLabel, StepSchedule,
    EXTRAPOLATION_FLOPS_PER_ELEMENT,
};

pub const LATENT_MAGIC: [u8; 4] = *b"ZLAT";
pub const NULL_TOKEN: &str = "<null>";
pub const DEFAULT_EDGE_THRESHOLD: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub depth: usize,
    pub width: usize,
    pub text_width: usize,
    pub heads: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub ffn_mult: usize,
    pub max_text_tokens: usize,
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            depth: 4,
            width: 64,
            text_width: 32,
            heads: 4,
            grid_h: 8,
            grid_w: 8,
            ffn_mult: 4,
            max_text_tokens: 16,
            seed: 0,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("depth", self.depth),
            ("width", self.width),
            ("text_width", self.text_width),
            ("heads", self.heads),
            ("grid_h", self.grid_h),
            ("grid_w", self.grid_w),
            ("ffn_mult", self.ffn_mult),
            ("max_text_tokens", self.max_text_tokens),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("model {name} must be positive")));
        }
        if self.width % self.heads != 0 {
            return Err(Error::config(format!(
                "width {} is not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.width % 2 != 0 {
            return Err(Error::config("width must be even for the time embedding"));
        }
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    pub fn ffn_hidden(&self) -> usize {
        self.width * self.ffn_mult
    }

    pub fn block_dims(&self, text_tokens: usize) -> BlockDims {
        BlockDims {
            tokens: self.tokens(),
            text_tokens,
            width: self.width,
            text_width: self.text_width,
            heads: self.heads,
            ffn_hidden: self.ffn_hidden(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Latent grid, one row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTokens {
    grid_h: usize,
    grid_w: usize,
    values: Matrix,
}

impl LatentTokens {
    pub fn new(grid_h: usize, grid_w: usize, values: Matrix) -> Result<Self> {
        if values.rows() != grid_h * grid_w {
            return Err(Error::shape(format!(
                "{} token rows for a {grid_h}x{grid_w} grid",
                values.rows()
            )));
        }
        if !values.is_finite() {
            return Err(Error::Degenerate("latent contains non-finite values".into()));
        }
        Ok(Self {
            grid_h,
            grid_w,
            values,
        })
    }

    /// Standard normal noise from a ChaCha8 stream.
    pub fn noise(spec: &ModelSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = Matrix::from_fn(spec.tokens(), spec.width, |_, _| StandardNormal.sample(&mut rng));
        Self {
            grid_h: spec.grid_h,
            grid_w: spec.grid_w,
            values,
        }
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.grid_h, self.grid_w)
    }

    pub fn tokens(&self) -> usize {
        self.values.rows()
    }

    pub fn width(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn into_values(self) -> Matrix {
        self.values
    }

    /// 16-byte little-endian header `{magic, d, h, w}` followed by `d*h*w`
    /// f64 values, channel-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (n, d) = self.values.shape();
        let mut out = Vec::with_capacity(16 + 8 * n * d);
        out.extend_from_slice(&LATENT_MAGIC);
        for v in [d, self.grid_h, self.grid_w] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for c in 0..d {
            for i in 0..n {
                out.extend_from_slice(&self.values.get(i, c).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || bytes[..4] != LATENT_MAGIC {
            return Err(Error::Format("missing latent dump header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let (d, h, w) = (word(4), word(8), word(12));
        let n = h * w;
        if bytes.len() != 16 + 8 * n * d {
            return Err(Error::Format(format!(
                "latent dump of {} bytes does not hold {d}x{h}x{w} values",
                bytes.len()
            )));
        }
        let mut values = Matrix::zeros(n, d);
        for (k, chunk) in bytes[16..].chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            values.set(k % n, k / n, v);
        }
        Self::new(h, w, values)
    }

    pub fn write_dump(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_dump(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Text-token embeddings fed to cross-attention.
#[derive(Debug, Clone, PartialEq)]
pub struct TextCondition {
    tokens: PromptTokens,
    embeddings: Matrix,
}

impl TextCondition {
    /// Synthetic embeddings of width `spec.text_width` for the first
    /// `spec.max_text_tokens` prompt tokens.
    pub fn from_prompt(prompt: &PromptTokens, spec: &ModelSpec, seed: u64) -> Self {
        let tokens = prompt.truncated(spec.max_text_tokens);
        let rows: Vec<Vec<f64>> = tokens
            .tokens()
            .iter()
            .map(|t| synthetic_embedding(t, spec.text_width, seed))
            .collect();
        let embeddings = Matrix::from_rows(&rows).expect("equal-width rows");
        Self { tokens, embeddings }
    }

    /// `count` copies of the null-token embedding.
    pub fn unconditional(count: usize, spec: &ModelSpec, seed: u64) -> Self {
        let tokens = PromptTokens::from_tokens(vec![NULL_TOKEN; count.max(1)]).expect("nonempty");
        let null = synthetic_embedding(NULL_TOKEN, spec.text_width, seed);
        let embeddings = Matrix::from_fn(count.max(1), spec.text_width, |_, j| null[j]);
        Self { tokens, embeddings }
    }

    pub fn tokens(&self) -> &PromptTokens {
        &self.tokens
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.rows() == 0
    }
}

/// FLOPs by component. `total` is the exact sum of the fields.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopSplit {
    pub attention: u64,
    pub ffn: u64,
    pub other: u64,
    pub extrapolation: u64,
    pub mask: u64,
}

impl FlopSplit {
    pub fn total(&self) -> u64 {
        self.attention + self.ffn + self.other + self.extrapolation + self.mask
    }

    pub fn accumulate(&mut self, other: &FlopSplit) {
        self.attention += other.attention;
        self.ffn += other.ffn;
        self.other += other.other;
        self.extrapolation += other.extrapolation;
        self.mask += other.mask;
    }
}

fn time_embedding(time: f64, width: usize) -> Vec<f64> {
    let half = width / 2;
    let mut out = vec![0.0; width];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let arg = 1000.0 * time * freq;
        out[i] = arg.sin();
        out[i + half] = arg.cos();
    }
    out
}

/// The reference denoiser. Weights are immutable once built.
#[derive(Debug, Clone)]
pub struct DitModel {
    spec: ModelSpec,
    input_proj: Matrix,
    positions: Matrix,
    blocks: Vec<BlockWeights>,
    final_norm: LayerNormParams,
    output_proj: Matrix,
}

impl DitModel {
    pub fn build(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let d = spec.width;
        let scale = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("finite std");
        let input_proj = Matrix::from_fn(d, d, |_, _| scale.sample(&mut rng));
        let pos = Normal::new(0.0, 0.1).expect("finite std");
        let positions = Matrix::from_fn(spec.tokens(), d, |_, _| pos.sample(&mut rng));
        let blocks = (0..spec.depth)
            .map(|_| BlockWeights::random(d, spec.text_width, spec.heads, spec.ffn_hidden(), &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let output_proj = Matrix::from_fn(d, d, |_, _| scale.sample(&mut rng));
        Ok(Self {
            spec: spec.clone(),
            input_proj,
            positions,
            blocks,
            final_norm: LayerNormParams::identity(d),
            output_proj,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn blocks(&self) -> &[BlockWeights] {
        &self.blocks
    }

    pub fn fresh_caches(&self) -> Vec<FfnCache> {
        vec![FfnCache::default(); self.blocks.len()]
    }

    /// One forward pass. Returns the prediction and, with `capture`, one
    /// head-averaged cross-attention record per block.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        latent: &Matrix,
        text: &Matrix,
        time: f64,
        step: usize,
        mode: BlockMode,
        partition: Option<&TokenPartition>,
        caches: &mut [FfnCache],
        capture: bool,
    ) -> Result<(Matrix, Vec<CrossAttnRecord>)> {
        if latent.shape() != (self.spec.tokens(), self.spec.width) {
            return Err(Error::shape(format!(
                "latent {:?}, model expects {:?}",
                latent.shape(),
                (self.spec.tokens(), self.spec.width)
            )));
        }
        if caches.len() != self.blocks.len() {
            return Err(Error::shape(format!(
                "{} caches for {} blocks",
                caches.len(),
                self.blocks.len()
            )));
        }
        let mut hidden = matmul(latent, &self.input_proj)?;
        hidden.add_assign(&self.positions)?;
        hidden.add_row_vector(&time_embedding(time, self.spec.width))?;
        let mut records = Vec::new();
        for (index, (weights, cache)) in self.blocks.iter().zip(caches.iter_mut()).enumerate() {
            let ctx = BlockContext {
                text,
                mode,
                partition,
                step,
                capture,
                index,
            };
            let out = run_block(&hidden, weights, cache, &ctx)?;
            if let Some(w) = out.cross_attention {
                records.push(CrossAttnRecord::new(index, w)?);
            }
            hidden = out.hidden;
        }
        let prediction = matmul(&self.final_norm.apply(&hidden)?, &self.output_proj)?;
        Ok((prediction, records))
    }

    /// Analytic FLOPs of one forward pass with `focus` query tokens.
    pub fn forward_flops(&self, text_tokens: usize, mode: BlockMode, focus: usize) -> FlopSplit {
        let dims = self.spec.block_dims(text_tokens);
        let mut split = FlopSplit::default();
        for _ in &self.blocks {
            let b = block_flops(&dims, focus, mode);
            split.attention += b.attention();
            split.ffn += b.ffn;
            split.other += b.other();
        }
        let n = self.spec.tokens() as u64;
        let d = self.spec.width as u64;
        // Projections in and out, position and time adds, final norm, time features.
        split.other += 2 * (2 * n * d * d) + 2 * n * d + 8 * n * d + 4 * d;
        split
    }

    pub fn session(&self, cond: TextCondition, uncond: TextCondition) -> DitSession<'_> {
        DitSession {
            model: self,
            cond,
            uncond,
            caches: [self.fresh_caches(), self.fresh_caches()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pass {
    Cond,
    Uncond,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardRequest<'a> {
    pub latent: &'a Matrix,
    pub step: usize,
    pub time: f64,
    pub pass: Pass,
    pub mode: BlockMode,
    pub partition: Option<&'a TokenPartition>,
    pub capture: bool,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub prediction: Matrix,
    pub cross_attention: Vec<CrossAttnRecord>,
}

/// Anything the sampler can query for a prediction.
pub trait Denoiser {
    fn tokens(&self) -> usize;
    fn width(&self) -> usize;
    fn forward(&mut self, req: &ForwardRequest<'_>) -> Result<ForwardOutput>;
    fn forward_flops(&self, mode: BlockMode, focus: usize) -> FlopSplit;
}

/// A model bound to one prompt, with FFN caches for each guidance pass.
#[derive(Debug, Clone)]
pub struct DitSession<'a> {
    model: &'a DitModel,
    cond: TextCondition,
    uncond: TextCondition,
    caches: [Vec<FfnCache>; 2],
}

impl DitSession<'_> {
    pub fn condition(&self) -> &TextCondition {
        &self.cond
    }

    pub fn caches(&self, pass: Pass) -> &[FfnCache] {
        &self.caches[pass as usize]
    }
}

impl Denoiser for DitSession<'_> {
    fn tokens(&self) -> usize {
        self.model.spec.tokens()
    }

    fn width(&self) -> usize {
        self.model.spec.width
    }

    fn forward(&mut self, req: &ForwardRequest<'_>) -> Result<ForwardOutput> {
        let text = match req.pass {
            Pass::Cond => self.cond.embeddings(),
            Pass::Uncond => self.uncond.embeddings(),
        };
        let (prediction, cross_attention) = self.model.forward(
            req.latent,
            text,
            req.time,
            req.step,
            req.mode,
            req.partition,
            &mut self.caches[req.pass as usize],
            req.capture,
        )?;
        Ok(ForwardOutput {
            prediction,
            cross_attention,
        })
    }

    fn forward_flops(&self, mode: BlockMode, focus: usize) -> FlopSplit {
        self.model.forward_flops(self.cond.len(), mode, focus)
    }
}

/// Predictions affine in the step index, `base + step * slope`, independent
/// of the latent. Capture yields uniform attention rows.
#[derive(Debug, Clone)]
pub struct AffinePredictor {
    pub cond: (Matrix, Matrix),
    pub uncond: (Matrix, Matrix),
    pub text_tokens: usize,
}

impl AffinePredictor {
    pub fn random(tokens: usize, width: usize, text_tokens: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || Matrix::from_fn(tokens, width, |_, _| StandardNormal.sample(&mut rng));
        Self {
            cond: (draw(), draw()),
            uncond: (draw(), draw()),
            text_tokens,
        }
    }

    pub fn prediction(&self, pass: Pass, step: usize) -> Matrix {
        let (base, slope) = match pass {
            Pass::Cond => &self.cond,
            Pass::Uncond => &self.uncond,
        };
        base.zip_with(slope, |b, s| b + step as f64 * s).expect("same shape")
    }
}

impl Denoiser for AffinePredictor {
    fn tokens(&self) -> usize {
        self.cond.0.rows()
    }

    fn width(&self) -> usize {
        self.cond.0.cols()
    }

    fn forward(&mut self, req: &ForwardRequest<'_>) -> Result<ForwardOutput> {
        let cross_attention = if req.capture {
            let m = self.text_tokens;
            let uniform = Matrix::filled(self.tokens(), m, 1.0 / m as f64);
            vec![CrossAttnRecord::new(0, uniform)?]
        } else {
            Vec::new()
        };
        Ok(ForwardOutput {
            prediction: self.prediction(req.pass, req.step),
            cross_attention,
        })
    }

    fn forward_flops(&self, _mode: BlockMode, focus: usize) -> FlopSplit {
        FlopSplit {
            other: 2 * (focus * self.width()) as u64,
            ..FlopSplit::default()
        }
    }
}

/// When and how to build the focus mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    pub mask_step: usize,
    pub builder: MaskBuilder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub steps: usize,
    pub guidance: GuidanceConfig,
    /// Run an unconditional pass and combine with guidance.
    pub two_pass: bool,
    pub mask: Option<MaskPlan>,
    /// Use focus-only blocks on FULL steps once the mask exists.
    pub sparse: bool,
    pub delta: usize,
    pub warmup: usize,
}

impl EngineConfig {
    /// Dense two-pass sampling with uniform guidance and no caching.
    pub fn baseline(steps: usize, cfg_scale: f64) -> Self {
        Self {
            steps,
            guidance: GuidanceConfig::uniform(cfg_scale),
            two_pass: true,
            mask: None,
            sparse: false,
            delta: 1,
            warmup: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("at least one sampling step is required"));
        }
        self.guidance.validate()?;
        if self.sparse && self.mask.is_none() {
            return Err(Error::config("sparse blocks need a mask"));
        }
        if let Some(plan) = &self.mask {
            if plan.mask_step >= self.steps {
                return Err(Error::Lifecycle(format!(
                    "mask step {} is not before the last of {} steps",
                    plan.mask_step, self.steps
                )));
            }
            if !(plan.builder.skip_ratio > 0.0 && plan.builder.skip_ratio < 1.0) {
                return Err(Error::config(format!(
                    "skip ratio {} outside (0, 1)",
                    plan.builder.skip_ratio
                )));
            }
        }
        self.step_cache().validate()
    }

    pub fn step_cache(&self) -> StepCacheConfig {
        StepCacheConfig {
            delta: self.delta,
            warmup: self.warmup,
            total_steps: self.steps,
        }
    }

    pub fn schedule(&self) -> Result<StepSchedule> {
        let forced: Vec<usize> = self.mask.iter().map(|m| m.mask_step).collect();
        plan_schedule_with_forced(&self.step_cache(), &forced)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub label: StepLabel,
    /// Block mode of the forward passes; absent on SKIP steps.
    pub mode: Option<BlockMode>,
    pub focus: usize,
    pub flops: u64,
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub latent: LatentTokens,
    pub schedule: StepSchedule,
    pub flops: FlopSplit,
    /// FLOPs of the same number of steps run densely with no skipping.
    pub dense_equivalent: u64,
    pub forwards: usize,
    pub mask: Option<AesMask>,
    pub affinity: Option<AffinityMap>,
    pub steps: Vec<StepRecord>,
}

/// Euler sampling from `t = 1` to `t = 0` with `dt = -1/T`.
pub fn sample<D: Denoiser>(
    denoiser: &mut D,
    init: &LatentTokens,
    engine: &EngineConfig,
) -> Result<SampleOutput> {
    engine.validate()?;
    let (n, d) = (denoiser.tokens(), denoiser.width());
    if init.values().shape() != (n, d) {
        return Err(Error::shape(format!(
            "initial latent {:?}, denoiser expects {:?}",
            init.values().shape(),
            (n, d)
        )));
    }
    let schedule = engine.schedule()?;
    let mut cache = StepCache::new(schedule.clone());
    let mut lifecycle = engine.mask.as_ref().map(|m| MaskLifecycle::new(m.mask_step));
    let passes: &[Pass] = if engine.two_pass {
        &[Pass::Cond, Pass::Uncond]
    } else {
        &[Pass::Cond]
    };

    let elements = (n * d) as u64;
    let cfg_flops = if engine.two_pass { 3 * elements } else { 0 };
    let euler_flops = 2 * elements;
    let dense_step = passes.len() as u64 * denoiser.forward_flops(BlockMode::Dense, n).total()
        + cfg_flops
        + euler_flops;

    let total = engine.steps;
    let dt = -1.0 / total as f64;
    let mut z = init.values().clone();
    let mut flops = FlopSplit::default();
    let mut forwards = 0;
    let mut steps = Vec::with_capacity(total);

    for k in 0..total {
        let time = 1.0 - k as f64 / total as f64;
        let capture = lifecycle.as_ref().is_some_and(|l| l.needs_capture(k));
        let partition = match lifecycle.as_ref().and_then(|l| l.mask()) {
            Some(mask) if engine.sparse && !capture => Some(TokenPartition::from_mask(mask)),
            _ => None,
        };
        let mode = if partition.is_some() {
            BlockMode::Sparse
        } else {
            BlockMode::Dense
        };
        let focus = partition.as_ref().map_or(n, |p| p.focus().len());
        let mut step_flops = FlopSplit::default();

        let outcome = cache.step_or_skip(k, || {
            let mut predictions = Vec::with_capacity(passes.len());
            for &pass in passes {
                let capture = capture && pass == Pass::Cond;
                let out = denoiser.forward(&ForwardRequest {
                    latent: &z,
                    step: k,
                    time,
                    pass,
                    mode,
                    partition: partition.as_ref(),
                    capture,
                })?;
                forwards += 1;
                step_flops.accumulate(&denoiser.forward_flops(mode, focus));
                if capture {
                    let plan = engine.mask.as_ref().expect("capture implies a mask plan");
                    let lc = lifecycle.as_mut().expect("capture implies a lifecycle");
                    lc.advance(k, Some(&out.cross_attention), &plan.builder)?;
                    let map = lc.affinity().expect("mask just built");
                    step_flops.mask += (map.n_layers_used * map.aes_token_count * n + 2 * n) as u64;
                }
                predictions.push(out.prediction);
            }
            if engine.two_pass {
                step_flops.other += cfg_flops;
                let mask = lifecycle.as_ref().and_then(|l| l.mask());
                apply_cfg(&predictions[0], &predictions[1], mask, &engine.guidance)
            } else {
                Ok(predictions.pop().expect("one pass"))
            }
        })?;

        if outcome.label == StepLabel::Skip {
            step_flops.extrapolation += EXTRAPOLATION_FLOPS_PER_ELEMENT * elements;
        }
        step_flops.other += euler_flops;
        z.add_scaled(dt, &outcome.prediction)?;
        if !z.is_finite() {
            return Err(Error::Degenerate(format!("latent diverged at step {k}")));
        }

        steps.push(StepRecord {
            step: k,
            label: outcome.label,
            mode: (outcome.label == StepLabel::Full).then_some(mode),
            focus: if outcome.label == StepLabel::Full { focus } else { 0 },
            flops: step_flops.total(),
        });
        flops.accumulate(&step_flops);
    }

    let (grid_h, grid_w) = init.grid();
    let (mask, affinity) = match lifecycle {
        Some(l) => (l.mask().cloned(), l.affinity().cloned()),
        None => (None, None),
    };
    Ok(SampleOutput {
        latent: LatentTokens::new(grid_h, grid_w, z)?,
        schedule,
        flops,
        dense_equivalent: dense_step * total as u64,
        forwards,
        mask,
        affinity,
        steps,
    })
}

/// Fraction of interior grid cells whose gradient magnitude exceeds
/// `threshold`. Gradients are forward differences per channel; magnitudes
/// are averaged over channels.
pub fn edge_density(latent: &LatentTokens, threshold: f64) -> Result<f64> {
    let (h, w) = latent.grid();
    edge_density_grid(latent.values(), h, w, threshold)
}

/// As [`edge_density`] for a token-major `(h*w) x channels` matrix.
pub fn edge_density_grid(values: &Matrix, h: usize, w: usize, threshold: f64) -> Result<f64> {
    if h < 3 || w < 3 {
        return Err(Error::shape(format!("edge density needs a 3x3 grid, got {h}x{w}")));
    }
    if values.rows() != h * w || values.cols() == 0 {
        return Err(Error::shape(format!("{:?} values for a {h}x{w} grid", values.shape())));
    }
    let channels = values.cols();
    let mut above = 0usize;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let here = values.row(y * w + x);
            let right = values.row(y * w + x + 1);
            let down = values.row((y + 1) * w + x);
            let mut magnitude = 0.0;
            for c in 0..channels {
                let gx = right[c] - here[c];
                let gy = down[c] - here[c];
                magnitude += (gx * gx + gy * gy).sqrt();
            }
            if magnitude / channels as f64 > threshold {
                above += 1;
            }
        }
    }
    Ok(above as f64 / ((h - 2) * (w - 2)) as f64)
}
