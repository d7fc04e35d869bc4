//! Classifier-free guidance with an optional per-token scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::AesMask;
use crate::math::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    /// Scale for background tokens, and for every token in uniform mode.
    pub bg_scale: f64,
    /// Scale for focus tokens; must be at least `bg_scale`.
    pub aes_scale: f64,
    pub spatial: bool,
}

impl GuidanceConfig {
    pub fn uniform(scale: f64) -> Self {
        Self {
            bg_scale: scale,
            aes_scale: scale,
            spatial: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bg_scale.is_finite() && self.aes_scale.is_finite()) {
            return Err(Error::config("guidance scales must be finite"));
        }
        if self.bg_scale < 1.0 {
            return Err(Error::config(format!(
                "background guidance scale {} is below 1",
                self.bg_scale
            )));
        }
        if self.aes_scale < self.bg_scale {
            return Err(Error::config(format!(
                "focus guidance scale {} is below background scale {}",
                self.aes_scale, self.bg_scale
            )));
        }
        Ok(())
    }

    /// Per-token scale for a mask bit.
    pub fn scale_for(&self, focus: bool) -> f64 {
        if focus {
            self.bg_scale + (self.aes_scale - self.bg_scale)
        } else {
            self.bg_scale
        }
    }
}

/// `uncond + g * (cond - uncond)` row by row. Rows are tokens. With a mask and
/// `spatial` enabled, focus tokens use the focus scale; otherwise every token
/// uses the background scale.
pub fn apply_cfg(
    cond: &Matrix,
    uncond: &Matrix,
    mask: Option<&AesMask>,
    cfg: &GuidanceConfig,
) -> Result<Matrix> {
    if cond.shape() != uncond.shape() {
        return Err(Error::shape(format!(
            "conditional {:?} vs unconditional {:?}",
            cond.shape(),
            uncond.shape()
        )));
    }
    let bits = match mask {
        Some(m) if cfg.spatial => {
            if m.len() != cond.rows() {
                return Err(Error::shape(format!(
                    "mask over {} tokens for a prediction with {} tokens",
                    m.len(),
                    cond.rows()
                )));
            }
            Some(m.bits())
        }
        _ => None,
    };
    let mut out = Matrix::zeros(cond.rows(), cond.cols());
    for i in 0..cond.rows() {
        let g = match bits {
            Some(b) => cfg.scale_for(b[i]),
            None => cfg.bg_scale,
        };
        let (c, u) = (cond.row(i), uncond.row(i));
        for (o, (&c, &u)) in out.row_mut(i).iter_mut().zip(c.iter().zip(u)) {
            *o = u + g * (c - u);
        }
    }
    Ok(out)
}
