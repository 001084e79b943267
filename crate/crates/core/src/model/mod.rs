//! The DGANN network: edge embedding, interaction blocks, output block,
//! transformer readout with a [CLS] fingerprint, and the prediction head.

mod batch;
mod forward;
pub mod gradcheck;
mod params;


use std::fmt;

use crate::error::{Error, Result};

pub use batch::GraphBatch;
pub use forward::{AttentionTrace, Dropout, Forward};
pub use params::{Dgann, Layout, Param, ParamKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_interaction: usize,
    pub n_transformer: usize,
    pub ffn_multiplier: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 512,
            n_heads: 8,
            n_interaction: 5,
            n_transformer: 6,
            ffn_multiplier: 2,
        }
    }
}

impl ModelConfig {
    pub fn d_out(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn d_ffn(&self) -> usize {
        self.ffn_multiplier * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("model config", msg));
        if self.n_heads == 0 || self.n_interaction == 0 || self.n_transformer == 0 || self.ffn_multiplier == 0 {
            return bad(format!("all counts must be at least 1: {}", self));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.d_out() < 2 {
            return bad(format!(
                "per-head width d_model/n_heads = {} must be at least 2",
                self.d_out()
            ));
        }
        Ok(())
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "d_model={} n_heads={} n_interaction={} n_transformer={} ffn_multiplier={}",
            self.d_model, self.n_heads, self.n_interaction, self.n_transformer, self.ffn_multiplier
        )
    }
}
