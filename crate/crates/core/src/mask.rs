//! Aesthetic focus masks built from captured cross-attention.
//!
//! The affinity of an image token is the attention mass it puts on the
//! selected aesthetic prompt tokens, averaged over the chosen layers. The mask
//! keeps every token at or above the `skip_ratio` percentile. It is built once,
//! at `mask_step`, and reused unchanged for the rest of the trajectory.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Matrix;

pub const DEFAULT_SKIP_RATIO: f64 = 0.50;
pub const DEFAULT_MASK_STEP: usize = 5;

/// Tolerance on the row sums of a captured attention matrix.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Head-averaged cross-attention weights of one layer, `N x M`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossAttnRecord {
    layer: usize,
    weights: Matrix,
}

impl CrossAttnRecord {
    /// Fails unless every row is nonnegative and sums to one within
    /// [`ROW_SUM_TOLERANCE`].
    pub fn new(layer: usize, weights: Matrix) -> Result<Self> {
        for (i, row) in weights.row_iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&w| !(w >= 0.0)) || (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::Contract(format!(
                    "layer {layer} attention row {i} is not stochastic (sum {sum})"
                )));
            }
        }
        Ok(Self { layer, weights })
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn image_tokens(&self) -> usize {
        self.weights.rows()
    }

    pub fn text_tokens(&self) -> usize {
        self.weights.cols()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerSelection {
    #[default]
    All,
    Layers(Vec<usize>),
}

impl LayerSelection {
    fn select<'a>(&self, records: &'a [CrossAttnRecord]) -> Vec<&'a CrossAttnRecord> {
        match self {
            LayerSelection::All => records.iter().collect(),
            LayerSelection::Layers(ids) => records.iter().filter(|r| ids.contains(&r.layer)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityMap {
    pub values: Vec<f64>,
    pub n_layers_used: usize,
    /// Number of prompt-token columns summed per layer.
    pub aes_token_count: usize,
}

/// Mean over selected layers of the attention mass on `selected_tokens`.
pub fn aggregate_affinity(
    records: &[CrossAttnRecord],
    layers: &LayerSelection,
    selected_tokens: &[usize],
) -> Result<AffinityMap> {
    if records.is_empty() {
        return Err(Error::Lifecycle("no cross-attention records captured".into()));
    }
    if selected_tokens.is_empty() {
        return Err(Error::Contract(
            "aesthetic token set is empty; use the fallback affinity".into(),
        ));
    }
    let used = layers.select(records);
    if used.is_empty() {
        return Err(Error::EmptySelection);
    }
    let n = used[0].image_tokens();
    let m = used[0].text_tokens();
    if let Some(r) = used.iter().find(|r| r.image_tokens() != n || r.text_tokens() != m) {
        return Err(Error::shape(format!(
            "layer {} attention is {}x{}, expected {n}x{m}",
            r.layer,
            r.image_tokens(),
            r.text_tokens()
        )));
    }
    if let Some(&j) = selected_tokens.iter().find(|&&j| j >= m) {
        return Err(Error::shape(format!("aesthetic token {j} out of range for {m} text tokens")));
    }

    let mut values = vec![0.0; n];
    for rec in &used {
        for (i, v) in values.iter_mut().enumerate() {
            let row = rec.weights.row(i);
            *v += selected_tokens.iter().map(|&j| row[j]).sum::<f64>();
        }
    }
    let count = used.len() as f64;
    for v in &mut values {
        *v /= count;
    }
    Ok(AffinityMap {
        values,
        n_layers_used: used.len(),
        aes_token_count: selected_tokens.len(),
    })
}

/// Uniform token weighting, used when no prompt token matches an anchor:
/// every text token weighted by `1/M`.
pub fn fallback_affinity(records: &[CrossAttnRecord], layers: &LayerSelection) -> Result<AffinityMap> {
    let m = records
        .first()
        .map(CrossAttnRecord::text_tokens)
        .ok_or_else(|| Error::Lifecycle("no cross-attention records captured".into()))?;
    let all: Vec<usize> = (0..m).collect();
    let mut map = aggregate_affinity(records, layers, &all)?;
    for v in &mut map.values {
        *v /= m as f64;
    }
    Ok(map)
}

/// Binary focus mask over image tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct AesMask {
    bits: Vec<bool>,
    focus: Vec<usize>,
    background: Vec<usize>,
    percentile: f64,
    built_at_step: usize,
    degenerate: bool,
}

impl AesMask {
    pub fn from_bits(bits: Vec<bool>, percentile: f64, built_at_step: usize) -> Result<Self> {
        let focus: Vec<usize> = (0..bits.len()).filter(|&i| bits[i]).collect();
        if focus.is_empty() {
            return Err(Error::Contract("mask selects no focus token".into()));
        }
        let background = (0..bits.len()).filter(|&i| !bits[i]).collect();
        Ok(Self {
            bits,
            focus,
            background,
            percentile,
            built_at_step,
            degenerate: false,
        })
    }

    pub fn all_ones(n: usize, built_at_step: usize) -> Self {
        Self::from_bits(vec![true; n.max(1)], 0.0, built_at_step).expect("nonempty")
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn focus_indices(&self) -> &[usize] {
        &self.focus
    }

    pub fn background_indices(&self) -> &[usize] {
        &self.background
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn focus_count(&self) -> usize {
        self.focus.len()
    }

    pub fn is_all_ones(&self) -> bool {
        self.background.is_empty()
    }

    pub fn percentile(&self) -> f64 {
        self.percentile
    }

    pub fn built_at_step(&self) -> usize {
        self.built_at_step
    }

    /// True when the affinity map was constant and every token was kept.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn export(&self) -> MaskExport {
        MaskExport {
            n: self.bits.len(),
            p: self.percentile,
            built_at_step: self.built_at_step,
            focus_indices: self.focus.clone(),
        }
    }
}

/// JSON form of a mask: `{N, p, built_at_step, focus_indices}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskExport {
    #[serde(rename = "N")]
    pub n: usize,
    pub p: f64,
    pub built_at_step: usize,
    pub focus_indices: Vec<usize>,
}

/// Nearest-rank percentile threshold at `p = 100 * skip_ratio`: the value at
/// 0-based ascending index `floor(skip_ratio * N)`. Returns the threshold.
pub fn percentile_threshold(values: &[f64], skip_ratio: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    // The epsilon keeps products like 0.3 * 10 = 2.9999999999999996 on the
    // intended rank.
    let rank = ((skip_ratio * sorted.len() as f64) + 1e-9).floor() as usize;
    sorted[rank.min(sorted.len() - 1)]
}

/// Keeps every token whose affinity is at or above the percentile threshold.
/// With distinct values exactly `N - floor(N * skip_ratio)` tokens survive;
/// ties at the threshold are all kept.
pub fn binarize(map: &AffinityMap, skip_ratio: f64, built_at_step: usize) -> Result<AesMask> {
    let n = map.values.len();
    if n < 2 {
        return Err(Error::shape(format!("affinity map needs at least 2 tokens, got {n}")));
    }
    if !(skip_ratio > 0.0 && skip_ratio < 1.0) {
        return Err(Error::config(format!("skip_ratio must lie in (0, 1), got {skip_ratio}")));
    }
    if map.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("affinity map has non-finite entries".into()));
    }
    let threshold = percentile_threshold(&map.values, skip_ratio);
    let bits: Vec<bool> = map.values.iter().map(|&v| v >= threshold).collect();
    let mut mask = AesMask::from_bits(bits, 100.0 * skip_ratio, built_at_step)?;
    let first = map.values[0];
    if map.values.iter().all(|&v| v == first) {
        log::warn!("affinity map is constant; every token is a focus token");
        mask.degenerate = true;
    }
    Ok(mask)
}

/// Which prompt tokens weight the affinity map.
#[derive(Debug, Clone, PartialEq)]
pub enum TokenWeighting {
    Aesthetic(Vec<usize>),
    /// Uniform weighting over all text tokens.
    Fallback,
}

impl TokenWeighting {
    pub fn from_selection(selected: &[usize]) -> Self {
        if selected.is_empty() {
            TokenWeighting::Fallback
        } else {
            TokenWeighting::Aesthetic(selected.to_vec())
        }
    }
}

/// Everything needed to turn captured attention into a mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskBuilder {
    pub weighting: TokenWeighting,
    pub layers: LayerSelection,
    pub skip_ratio: f64,
}

impl MaskBuilder {
    pub fn affinity(&self, records: &[CrossAttnRecord]) -> Result<AffinityMap> {
        match &self.weighting {
            TokenWeighting::Aesthetic(sel) => aggregate_affinity(records, &self.layers, sel),
            TokenWeighting::Fallback => fallback_affinity(records, &self.layers),
        }
    }

    pub fn build(&self, records: &[CrossAttnRecord], step: usize) -> Result<(AesMask, AffinityMap)> {
        let map = self.affinity(records)?;
        let mask = binarize(&map, self.skip_ratio, step)?;
        Ok((mask, map))
    }
}

/// One-shot mask state: nothing before `mask_step`, built at `mask_step`,
/// reused afterwards.
#[derive(Debug, Clone)]
pub struct MaskLifecycle {
    mask_step: usize,
    built: Option<(AesMask, AffinityMap)>,
}

impl MaskLifecycle {
    pub fn new(mask_step: usize) -> Self {
        Self {
            mask_step,
            built: None,
        }
    }

    pub fn mask_step(&self) -> usize {
        self.mask_step
    }

    /// Whether the iteration at `step` must capture cross-attention.
    pub fn needs_capture(&self, step: usize) -> bool {
        step == self.mask_step && self.built.is_none()
    }

    pub fn mask(&self) -> Option<&AesMask> {
        self.built.as_ref().map(|(m, _)| m)
    }

    pub fn affinity(&self) -> Option<&AffinityMap> {
        self.built.as_ref().map(|(_, a)| a)
    }

    /// Advances to `step`. At `mask_step` the records are required and the
    /// mask is built; later steps return the stored mask untouched.
    pub fn advance(
        &mut self,
        step: usize,
        records: Option<&[CrossAttnRecord]>,
        builder: &MaskBuilder,
    ) -> Result<Option<&AesMask>> {
        if step < self.mask_step {
            return Ok(None);
        }
        if step == self.mask_step && self.built.is_none() {
            let records = records.filter(|r| !r.is_empty()).ok_or_else(|| {
                Error::Lifecycle(format!(
                    "step {step} must run densely with attention capture to build the mask"
                ))
            })?;
            self.built = Some(builder.build(records, step)?);
        }
        match &self.built {
            Some((mask, _)) => Ok(Some(mask)),
            None => Err(Error::Lifecycle(format!(
                "mask requested at step {step} but it was never built at step {}",
                self.mask_step
            ))),
        }
    }
}
