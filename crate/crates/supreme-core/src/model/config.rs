//! Model hyperparameters and their structural invariants.

use serde::{Deserialize, Serialize};

use super::{ModelError, Result};

/// Network dimensions. `samples` must split evenly into patches; attention
/// widths must split evenly into heads; the latent width must be even so the
/// classification head can halve it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// L: ECG leads per record.
    pub leads: usize,
    /// T: samples per lead.
    pub samples: usize,
    /// P: patch length; N = T / P patches per lead.
    pub patch_len: usize,
    /// D: encoder token width.
    pub vit_width: usize,
    pub vit_depth: usize,
    pub vit_heads: usize,
    /// D_h: hidden width of both projection heads.
    pub hidden: usize,
    /// D': shared latent width of the fusion stack.
    pub latent: usize,
    pub cfn_depth: usize,
    pub cfn_heads: usize,
    /// Dropout rate at every dropout site.
    pub dropout: f64,
    /// Stochastic-depth ceiling: block k of the encoder drops its residual
    /// branches with rate droppath * k / (vit_depth - 1).
    pub droppath: f64,
    /// Width of the text embeddings fed to the query head.
    pub embed_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            leads: 12,
            samples: 5000,
            patch_len: 125,
            vit_width: 192,
            vit_depth: 12,
            vit_heads: 3,
            hidden: 256,
            latent: 256,
            cfn_depth: 4,
            cfn_heads: 8,
            dropout: 0.10,
            droppath: 0.10,
            embed_dim: 768,
        }
    }
}

impl ModelConfig {
    /// N: patches per lead.
    pub fn patches_per_lead(&self) -> usize {
        self.samples / self.patch_len
    }

    /// Total encoder tokens per record, L * N.
    pub fn tokens(&self) -> usize {
        self.leads * self.patches_per_lead()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.leads == 0 || self.samples == 0 || self.patch_len == 0 {
            return fail("leads, samples and patch_len must be positive".into());
        }
        if self.samples % self.patch_len != 0 {
            return fail(format!(
                "samples {} not divisible by patch_len {}",
                self.samples, self.patch_len
            ));
        }
        if self.vit_width == 0 || self.vit_depth == 0 || self.hidden == 0 || self.cfn_depth == 0 {
            return fail("vit_width, vit_depth, hidden and cfn_depth must be positive".into());
        }
        if self.vit_heads == 0 || self.vit_width % self.vit_heads != 0 {
            return fail(format!(
                "vit_width {} not divisible by vit_heads {}",
                self.vit_width, self.vit_heads
            ));
        }
        if self.cfn_heads == 0 || self.latent % self.cfn_heads != 0 {
            return fail(format!(
                "latent {} not divisible by cfn_heads {}",
                self.latent, self.cfn_heads
            ));
        }
        if self.latent < 2 || self.latent % 2 != 0 {
            return fail(format!("latent {} must be even (the head halves it)", self.latent));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.droppath) {
            return fail(format!(
                "dropout {} and droppath {} must lie in [0, 1)",
                self.dropout, self.droppath
            ));
        }
        if self.embed_dim == 0 {
            return fail("embed_dim must be positive".into());
        }
        Ok(())
    }

    /// Stochastic-depth rate for encoder block `k`: a linear ramp from 0 at
    /// the first block to `droppath` at the last; a single block never drops.
    pub fn droppath_rate(&self, block: usize) -> f64 {
        debug_assert!(block < self.vit_depth);
        if self.vit_depth <= 1 {
            0.0
        } else {
            self.droppath * block as f64 / (self.vit_depth - 1) as f64
        }
    }
}
